//! Gaussian diffusion in latent space: a linear β schedule, closed-form
//! corruption, the ε-prediction loss and the ancestral sampler step.
//!
//! Timesteps are 1-based: `t ∈ 1..=T`, with `ᾱ_0 = 1`.

use crate::error::{Error, Result};
use crate::numerics::{gaussian_sample, Rng, Tensor};

/// Full corruption threshold for `ᾱ_T`.
pub const FULL_CORRUPTION: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ScheduleWarning {
    /// `ᾱ_T` did not fall below [`FULL_CORRUPTION`].
    WeakSchedule { alpha_bar_final: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    beta: Vec<f64>,
    alpha_bar: Vec<f64>,
}

pub fn make_schedule(steps: usize, beta_lo: f64, beta_hi: f64) -> Result<NoiseSchedule> {
    if steps == 0 {
        return Err(Error::InvalidSchedule("need at least one step".into()));
    }
    if !(beta_lo > 0.0 && beta_lo <= beta_hi && beta_hi < 1.0) {
        return Err(Error::InvalidSchedule(format!(
            "need 0 < beta_lo <= beta_hi < 1, got {beta_lo}, {beta_hi}"
        )));
    }
    let beta: Vec<f64> = (0..steps)
        .map(|i| {
            if steps == 1 {
                beta_lo
            } else {
                beta_lo + (beta_hi - beta_lo) * i as f64 / (steps - 1) as f64
            }
        })
        .collect();
    let mut alpha_bar = Vec::with_capacity(steps);
    let mut acc = 1.0f64;
    for b in &beta {
        acc *= 1.0 - b;
        alpha_bar.push(acc);
    }
    let sched = NoiseSchedule { beta, alpha_bar };
    if let Some(ScheduleWarning::WeakSchedule { alpha_bar_final }) = sched.warning() {
        log::warn!("weak schedule: final alpha_bar {alpha_bar_final:.4} >= {FULL_CORRUPTION}");
    }
    Ok(sched)
}

impl NoiseSchedule {
    pub fn steps(&self) -> usize {
        self.beta.len()
    }

    pub fn check_t(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.steps() {
            Err(Error::InvalidTimestep {
                t,
                max: self.steps(),
            })
        } else {
            Ok(())
        }
    }

    /// `β_t` for `t ∈ 1..=T`.
    pub fn beta(&self, t: usize) -> f64 {
        self.beta[t - 1]
    }

    /// `ᾱ_t` for `t ∈ 0..=T`.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        if t == 0 {
            1.0
        } else {
            self.alpha_bar[t - 1]
        }
    }

    pub fn betas(&self) -> &[f64] {
        &self.beta
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bar
    }

    pub fn warning(&self) -> Option<ScheduleWarning> {
        let last = *self.alpha_bar.last().expect("non-empty schedule");
        (last >= FULL_CORRUPTION).then_some(ScheduleWarning::WeakSchedule {
            alpha_bar_final: last,
        })
    }

    /// Posterior standard deviation used by the sampler; zero at `t = 1`.
    pub fn sigma(&self, t: usize) -> f64 {
        if t <= 1 {
            0.0
        } else {
            let var = self.beta(t) * (1.0 - self.alpha_bar(t - 1)) / (1.0 - self.alpha_bar(t));
            var.sqrt()
        }
    }
}

/// `z_t = √ᾱ_t z_0 + √(1−ᾱ_t) ε`; returns `(z_t, ε)`.
pub fn forward_marginal(
    sched: &NoiseSchedule,
    z0: &Tensor,
    t: usize,
    rng: &mut Rng,
) -> Result<(Tensor, Tensor)> {
    sched.check_t(t)?;
    let noise = gaussian_sample(rng, z0.shape())?;
    let zt = corrupt(sched, z0, &noise, t)?;
    Ok((zt, noise))
}

/// Deterministic half of [`forward_marginal`] for a given noise draw.
pub fn corrupt(sched: &NoiseSchedule, z0: &Tensor, noise: &Tensor, t: usize) -> Result<Tensor> {
    sched.check_t(t)?;
    noise.expect_shape(z0.shape(), "corrupt noise")?;
    let ab = sched.alpha_bar(t);
    let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
    let data = z0
        .data()
        .iter()
        .zip(noise.data())
        .map(|(z, e)| a * z + b * e)
        .collect();
    Tensor::new(z0.shape().to_vec(), data)
}

/// Per-element mean squared error between true and predicted noise.
pub fn training_loss(noise: &Tensor, noise_pred: &Tensor) -> Result<f64> {
    noise_pred.expect_shape(noise.shape(), "training_loss prediction")?;
    let sse: f64 = noise
        .data()
        .iter()
        .zip(noise_pred.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok(sse / noise.numel() as f64)
}

/// One ancestral step `z_t → z_{t−1}`.
pub fn denoise_step(
    sched: &NoiseSchedule,
    model_noise: &Tensor,
    zt: &Tensor,
    t: usize,
    rng: &mut Rng,
) -> Result<Tensor> {
    sched.check_t(t)?;
    model_noise.expect_shape(zt.shape(), "denoise_step model output")?;
    let beta = sched.beta(t);
    let inv_sqrt_alpha = 1.0 / (1.0 - beta).sqrt();
    let coef = beta / (1.0 - sched.alpha_bar(t)).sqrt();
    let mut data: Vec<f64> = zt
        .data()
        .iter()
        .zip(model_noise.data())
        .map(|(z, e)| inv_sqrt_alpha * (z - coef * e))
        .collect();
    if t > 1 {
        let sigma = sched.sigma(t);
        let xi = gaussian_sample(rng, zt.shape())?;
        for (d, x) in data.iter_mut().zip(xi.data()) {
            *d += sigma * x;
        }
    }
    Tensor::new(zt.shape().to_vec(), data)
}

/// Per-element whitening codec standing in for a learned autoencoder.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentCodec {
    mean: Tensor,
    scale: Tensor,
}

/// Lower bound on the whitening scale.
pub const MIN_CODEC_SCALE: f64 = 1e-3;

impl LatentCodec {
    pub fn new(mean: Tensor, scale: Tensor) -> Result<Self> {
        scale.expect_shape(mean.shape(), "codec scale")?;
        if scale.data().iter().any(|&s| s <= 0.0) {
            return Err(Error::InvalidInput("codec scale must be positive".into()));
        }
        Ok(LatentCodec { mean, scale })
    }

    /// Per-element mean and standard deviation over `samples`, in order.
    pub fn fit<'a>(samples: impl IntoIterator<Item = &'a Tensor>) -> Result<Self> {
        let samples: Vec<&Tensor> = samples.into_iter().collect();
        let first = samples
            .first()
            .ok_or_else(|| Error::InsufficientData("codec needs at least one sample".into()))?;
        let shape = first.shape().to_vec();
        let n = first.numel();
        let mut mean = vec![0.0; n];
        for s in &samples {
            s.expect_shape(&shape, "codec sample")?;
            for (m, v) in mean.iter_mut().zip(s.data()) {
                *m += v;
            }
        }
        let count = samples.len() as f64;
        mean.iter_mut().for_each(|m| *m /= count);
        let mut var = vec![0.0; n];
        for s in &samples {
            for ((acc, v), m) in var.iter_mut().zip(s.data()).zip(&mean) {
                *acc += (v - m) * (v - m);
            }
        }
        let scale = var
            .iter()
            .map(|v| (v / count).sqrt().max(MIN_CODEC_SCALE))
            .collect();
        let mut mean = Tensor::new(shape.clone(), mean)?;
        let mut scale = Tensor::new(shape, scale)?;
        // stored in checkpoints as f32
        mean.quantize_f32();
        scale.quantize_f32();
        LatentCodec::new(mean, scale)
    }

    pub fn mean(&self) -> &Tensor {
        &self.mean
    }

    pub fn scale(&self) -> &Tensor {
        &self.scale
    }

    pub fn encode(&self, x: &Tensor) -> Result<Tensor> {
        x.expect_shape(self.mean.shape(), "codec encode")?;
        let data = x
            .data()
            .iter()
            .zip(self.mean.data())
            .zip(self.scale.data())
            .map(|((v, m), s)| (v - m) / s)
            .collect();
        Tensor::new(x.shape().to_vec(), data)
    }

    pub fn decode(&self, z: &Tensor) -> Result<Tensor> {
        z.expect_shape(self.mean.shape(), "codec decode")?;
        let data = z
            .data()
            .iter()
            .zip(self.mean.data())
            .zip(self.scale.data())
            .map(|((v, m), s)| v * s + m)
            .collect();
        Tensor::new(z.shape().to_vec(), data)
    }
}
