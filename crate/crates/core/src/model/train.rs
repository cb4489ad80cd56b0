//! Optimizer, EMA, the per-step update, evaluation, early stopping and the
//! ancestral sampler.

use serde::{Deserialize, Serialize};

use super::denoiser::{Condition, Denoiser};
use crate::config::OptimConfig;
use crate::diffusion::{denoise_step, forward_marginal, training_loss, LatentCodec, NoiseSchedule};
use crate::error::{Error, Result};
use crate::numerics::{gaussian_sample, quantize_f32, Rng, Tensor};
use crate::pda::Stage;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub step: u64,
    pub loss: f64,
}

/// Single-writer training state. Every persistent vector lives on the f32
/// lattice so checkpoints round-trip exactly.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub stage: Stage,
    pub step: u64,
    pub params: Vec<f64>,
    pub adam_m: Vec<f64>,
    pub adam_v: Vec<f64>,
    pub ema: Option<Vec<f64>>,
    pub rng: Rng,
    pub evals: Vec<EvalRecord>,
    pub early_stopped: bool,
}

impl TrainState {
    /// Fresh optimizer state around `params`; the EMA shadow starts equal to them.
    pub fn new(stage: Stage, mut params: Vec<f64>, rng: Rng) -> Self {
        quantize_f32(&mut params);
        let n = params.len();
        TrainState {
            stage,
            step: 0,
            ema: Some(params.clone()),
            params,
            adam_m: vec![0.0; n],
            adam_v: vec![0.0; n],
            rng,
            evals: Vec::new(),
            early_stopped: false,
        }
    }

    pub fn ema_or_missing(&self) -> Result<&[f64]> {
        self.ema
            .as_deref()
            .ok_or_else(|| Error::MissingState("EMA shadow parameters".into()))
    }
}

/// One training clip in latent space with its (optional) condition.
#[derive(Debug, Clone)]
pub struct Example {
    pub z0: Tensor,
    pub cond: Option<Condition>,
}

/// Decoupled AdamW on the masked subset; the step count `k` is 1-based.
pub fn adamw_update(
    state: &mut TrainState,
    grads: &[f64],
    trainable: &[bool],
    opt: &OptimConfig,
    k: u64,
) {
    let bc1 = 1.0 - opt.beta1.powf(k as f64);
    let bc2 = 1.0 - opt.beta2.powf(k as f64);
    for i in 0..state.params.len() {
        if !trainable[i] {
            continue;
        }
        let g = grads[i];
        let m = opt.beta1 * state.adam_m[i] + (1.0 - opt.beta1) * g;
        let v = opt.beta2 * state.adam_v[i] + (1.0 - opt.beta2) * g * g;
        let m = m as f32 as f64;
        let v = v as f32 as f64;
        state.adam_m[i] = m;
        state.adam_v[i] = v;
        let p = state.params[i];
        let step = (m / bc1) / ((v / bc2).sqrt() + opt.adam_eps);
        state.params[i] = (p - opt.lr * opt.weight_decay * p - opt.lr * step) as f32 as f64;
    }
}

/// `shadow ← d·shadow + (1−d)·params` on the masked subset.
pub fn ema_update(shadow: &mut [f64], params: &[f64], trainable: &[bool], decay: f64) {
    for i in 0..params.len() {
        if trainable[i] {
            shadow[i] = (decay * shadow[i] + (1.0 - decay) * params[i]) as f32 as f64;
        }
    }
}

/// One optimizer step on `batch`; returns the mean loss.
pub fn train_step(
    model: &Denoiser,
    sched: &NoiseSchedule,
    state: &mut TrainState,
    batch: &[Example],
    opt: &OptimConfig,
    trainable: &[bool],
) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::InvalidInput("empty training batch".into()));
    }
    if trainable.len() != state.params.len() {
        return Err(Error::InvalidShape("trainable mask does not cover the parameters".into()));
    }
    let mut grads = vec![0.0; state.params.len()];
    let scale = 1.0 / batch.len() as f64;
    let mut loss = 0.0;
    let step = state.step + 1;
    for ex in batch {
        let t = state.rng.uniform_int(1, sched.steps());
        let (zt, noise) = forward_marginal(sched, &ex.z0, t, &mut state.rng)?;
        loss += scale
            * model
                .loss_and_grad(&state.params, &zt, &noise, ex.cond.as_ref(), t, scale, &mut grads)
                .map_err(|e| match e {
                    // an overflowing activation surfaces before the loss does
                    Error::NonFinite(_) => Error::Divergence { step, loss: f64::NAN },
                    e => e,
                })?;
    }
    if !loss.is_finite() || grads.iter().any(|g| !g.is_finite()) {
        return Err(Error::Divergence { step, loss });
    }
    adamw_update(state, &grads, trainable, opt, step);
    if let Some(ema) = state.ema.as_mut() {
        ema_update(ema, &state.params, trainable, opt.ema_decay);
    }
    state.step = step;
    Ok(loss)
}

/// Mean denoising loss over `examples`, each at `timesteps` draws from a
/// generator seeded with `seed` (so repeated evaluations are comparable).
pub fn eval_loss(
    model: &Denoiser,
    sched: &NoiseSchedule,
    params: &[f64],
    examples: &[Example],
    timesteps: usize,
    seed: u64,
) -> Result<f64> {
    if examples.is_empty() {
        return Err(Error::InsufficientData("no evaluation clips".into()));
    }
    let mut rng = Rng::new(seed);
    let mut total = 0.0;
    for ex in examples {
        for _ in 0..timesteps {
            let t = rng.uniform_int(1, sched.steps());
            let (zt, noise) = forward_marginal(sched, &ex.z0, t, &mut rng)?;
            let pred = model.predict_noise(params, &zt, ex.cond.as_ref(), t)?;
            total += training_loss(&noise, &pred)?;
        }
    }
    Ok(total / (examples.len() * timesteps) as f64)
}

/// True once the best loss has gone `patience` consecutive evaluations
/// without improving on it by more than the relative margin `rel`.
pub fn early_stop_check(losses: &[f64], rel: f64, patience: usize) -> bool {
    if losses.len() < 2 {
        return false;
    }
    let mut best = losses[0];
    let mut stale = 0;
    for &l in &losses[1..] {
        if l < best * (1.0 - rel) {
            best = l;
            stale = 0;
        } else {
            stale += 1;
        }
    }
    stale >= patience
}

/// Ancestral sampling from `N(0, I)` through `t = T … 1`, decoded and clipped to `[0, 1]`.
pub fn sample_video(
    model: &Denoiser,
    ema: Option<&[f64]>,
    sched: &NoiseSchedule,
    codec: &LatentCodec,
    cond: Option<&Condition>,
    rng: &mut Rng,
) -> Result<Tensor> {
    let params = ema.ok_or_else(|| Error::MissingState("EMA shadow parameters".into()))?;
    let mut z = gaussian_sample(rng, &model.clip_shape())?;
    for t in (1..=sched.steps()).rev() {
        let eps = model.predict_noise(params, &z, cond, t)?;
        z = denoise_step(sched, &eps, &z, t, rng)?;
    }
    let x = codec.decode(&z)?;
    Ok(x.map(|v| v.clamp(0.0, 1.0)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn early_stop_rules() {
        assert!(!early_stop_check(&[1.0, 0.9, 0.8, 0.7, 0.6, 0.5, 0.4], 0.01, 5));
        assert!(early_stop_check(&[0.5; 6], 0.01, 5));
        assert!(!early_stop_check(&[0.5; 5], 0.01, 5));
        let trace = [1.0, 0.995, 0.994, 0.9939, 0.9938, 0.9937];
        assert!(!early_stop_check(&trace[..5], 0.01, 5));
        assert!(early_stop_check(&trace, 0.01, 5));
        assert!(!early_stop_check(&[1.0], 0.01, 1));
    }

    #[test]
    fn ema_degenerate_decays() {
        let params = vec![1.0, 2.0, 3.0];
        let mask = vec![true, true, false];
        let mut s = vec![0.5, 0.5, 0.5];
        ema_update(&mut s, &params, &mask, 0.0);
        assert_eq!(s, vec![1.0, 2.0, 0.5]);
        let mut s = vec![0.5, 0.25, 0.5];
        ema_update(&mut s, &params, &mask, 1.0);
        assert_eq!(s, vec![0.5, 0.25, 0.5]);
    }

    #[test]
    fn adamw_first_step_moves_by_lr() {
        let mut st = TrainState::new(Stage::Warmup, vec![0.0, 1.0, 5.0], Rng::new(0));
        let opt = OptimConfig {
            weight_decay: 0.0,
            ..OptimConfig::default()
        };
        adamw_update(&mut st, &[2.0, -3.0, 7.0], &[true, true, false], &opt, 1);
        assert!((st.params[0] + 1e-4).abs() < 1e-9);
        assert!((st.params[1] - (1.0 + 1e-4)).abs() < 1e-7);
        assert_eq!(st.params[2], 5.0);
    }
}
