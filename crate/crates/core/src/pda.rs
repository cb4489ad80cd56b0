//! Depth conditioning: a small convolutional depth encoder, per-channel
//! alignment of the depth embedding to backbone feature statistics, a frame
//! style encoder, and the stage-dependent split of trainable parameters.

use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{silu, silu_deriv, ConvGeom, Rng, Tensor};

/// Numerical-stability constant of the alignment normalizer.
pub const ALIGN_EPS: f64 = 1e-5;

/// Two stride-2 3×3 convolutions with a SiLU in between:
/// `[F, 1, H, W] → [F, hidden, H/2, W/2] → [F, channels, H/4, W/4]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DepthEncoderSpec {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub hidden: usize,
    pub channels: usize,
}

#[derive(Debug, Clone)]
pub struct DepthCache {
    depth: Vec<f64>,
    pre1: Vec<f64>,
    act1: Vec<f64>,
}

impl DepthEncoderSpec {
    fn geom1(&self) -> ConvGeom {
        ConvGeom::new(
            &[self.frames, 1, self.height, self.width],
            &[self.hidden, 1, 3, 3],
            2,
            1,
        )
        .expect("depth encoder geometry validated at construction")
    }

    fn geom2(&self) -> ConvGeom {
        let g1 = self.geom1();
        ConvGeom::new(
            &[self.frames, self.hidden, g1.out_h, g1.out_w],
            &[self.channels, self.hidden, 3, 3],
            2,
            1,
        )
        .expect("depth encoder geometry validated at construction")
    }

    pub fn validate(&self) -> Result<()> {
        ConvGeom::new(&[self.frames, 1, self.height, self.width], &[self.hidden, 1, 3, 3], 2, 1)?;
        Ok(())
    }

    pub fn tensors(&self) -> Vec<(String, Vec<usize>)> {
        vec![
            ("depth_encoder.conv1.w".into(), vec![self.hidden, 1, 3, 3]),
            ("depth_encoder.conv1.b".into(), vec![self.hidden]),
            ("depth_encoder.conv2.w".into(), vec![self.channels, self.hidden, 3, 3]),
            ("depth_encoder.conv2.b".into(), vec![self.channels]),
        ]
    }

    pub fn param_len(&self) -> usize {
        self.hidden * 9 + self.hidden + self.channels * self.hidden * 9 + self.channels
    }

    pub fn output_shape(&self) -> [usize; 4] {
        self.geom2().output_shape()
    }

    fn split<'a>(&self, p: &'a [f64]) -> [&'a [f64]; 4] {
        let (w1, rest) = p.split_at(self.hidden * 9);
        let (b1, rest) = rest.split_at(self.hidden);
        let (w2, b2) = rest.split_at(self.channels * self.hidden * 9);
        [w1, b1, w2, b2]
    }

    fn split_mut<'a>(&self, p: &'a mut [f64]) -> [&'a mut [f64]; 4] {
        let (w1, rest) = p.split_at_mut(self.hidden * 9);
        let (b1, rest) = rest.split_at_mut(self.hidden);
        let (w2, b2) = rest.split_at_mut(self.channels * self.hidden * 9);
        [w1, b1, w2, b2]
    }

    pub fn init(&self, rng: &mut Rng, params: &mut [f64]) {
        let [w1, b1, w2, b2] = self.split_mut(params);
        w1.iter_mut().for_each(|w| *w = rng.gaussian() / 3.0);
        let std2 = 1.0 / ((self.hidden * 9) as f64).sqrt();
        w2.iter_mut().for_each(|w| *w = std2 * rng.gaussian());
        b1.fill(0.0);
        b2.fill(0.0);
    }

    /// Returns the embedding in `[F, C, h, w]` layout.
    pub fn forward(&self, params: &[f64], depth: &Tensor) -> Result<(Vec<f64>, DepthCache)> {
        depth.expect_shape(&[self.frames, 1, self.height, self.width], "depth sequence")?;
        if let Some(&bad) = depth.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidDepth(bad));
        }
        let [w1, b1, w2, b2] = self.split(params);
        let (g1, g2) = (self.geom1(), self.geom2());
        let mut pre1 = vec![0.0; g1.output_len()];
        add_channel_bias(&mut pre1, b1, g1.out_h * g1.out_w);
        g1.forward(depth.data(), w1, &mut pre1);
        let act1: Vec<f64> = pre1.iter().map(|&v| silu(v)).collect();
        let mut out = vec![0.0; g2.output_len()];
        add_channel_bias(&mut out, b2, g2.out_h * g2.out_w);
        g2.forward(&act1, w2, &mut out);
        Ok((
            out,
            DepthCache {
                depth: depth.data().to_vec(),
                pre1,
                act1,
            },
        ))
    }

    /// Accumulates parameter gradients for an upstream gradient on the
    /// `[F, C, h, w]` embedding.
    pub fn backward(&self, params: &[f64], cache: &DepthCache, grad_out: &[f64], grads: &mut [f64]) {
        let [_, _, w2, _] = self.split(params);
        let (g1, g2) = (self.geom1(), self.geom2());
        let [gw1, gb1, gw2, gb2] = self.split_mut(grads);
        channel_bias_grad(grad_out, gb2, g2.out_h * g2.out_w);
        g2.backward_kernel(&cache.act1, grad_out, gw2);
        let mut gact = vec![0.0; g2.input_len()];
        g2.backward_input(w2, grad_out, &mut gact);
        let gpre: Vec<f64> = gact
            .iter()
            .zip(&cache.pre1)
            .map(|(g, &p)| g * silu_deriv(p))
            .collect();
        channel_bias_grad(&gpre, gb1, g1.out_h * g1.out_w);
        g1.backward_kernel(&cache.depth, &gpre, gw1);
    }
}

/// Owned parameters Θ_l of the depth encoder.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthEncoderParams {
    pub spec: DepthEncoderSpec,
    pub values: Vec<f64>,
}

impl DepthEncoderParams {
    pub fn zeros(spec: DepthEncoderSpec) -> Result<Self> {
        spec.validate()?;
        Ok(DepthEncoderParams {
            values: vec![0.0; spec.param_len()],
            spec,
        })
    }

    pub fn random(spec: DepthEncoderSpec, rng: &mut Rng) -> Result<Self> {
        let mut p = Self::zeros(spec)?;
        spec.init(rng, &mut p.values);
        Ok(p)
    }
}

pub fn encode_depth(params: &DepthEncoderParams, depth: &Tensor) -> Result<Tensor> {
    let (out, _) = params.spec.forward(&params.values, depth)?;
    Tensor::new(params.spec.output_shape().to_vec(), out)
}

/// Per-channel scale γ and the fixed stability constant.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignmentParams {
    pub gamma: Tensor,
    pub align_eps: f64,
}

impl AlignmentParams {
    /// γ = 0: alignment starts as an exact no-op.
    pub fn zeros(channels: usize) -> Self {
        AlignmentParams {
            gamma: Tensor::zeros(&[channels]),
            align_eps: ALIGN_EPS,
        }
    }
}

/// Per-channel backbone statistics, treated as constants for backprop.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl ChannelStats {
    /// Mean and population variance over the rows of a channel-last `[rows, C]` buffer.
    pub fn of_rows(values: &[f64], channels: usize) -> Self {
        let rows = values.len() / channels;
        let mut mean = vec![0.0; channels];
        for row in values.chunks_exact(channels) {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= rows as f64);
        let mut var = vec![0.0; channels];
        for row in values.chunks_exact(channels) {
            for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        var.iter_mut().for_each(|s| *s /= rows as f64);
        ChannelStats { mean, var }
    }

    fn inv_std(&self, eps: f64) -> Vec<f64> {
        self.var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect()
    }
}

/// `ẑ = (z_d − μ_m) / √(σ_m² + ε) · γ` on channel-last rows.
pub fn align_rows(z_d: &[f64], stats: &ChannelStats, gamma: &[f64], eps: f64) -> Vec<f64> {
    let c = gamma.len();
    let inv = stats.inv_std(eps);
    let mut out = Vec::with_capacity(z_d.len());
    for row in z_d.chunks_exact(c) {
        for ch in 0..c {
            out.push((row[ch] - stats.mean[ch]) * inv[ch] * gamma[ch]);
        }
    }
    out
}

/// Gradients of [`align_rows`] with respect to `z_d` and `γ` (the statistics
/// are held fixed). `grad_gamma` is accumulated.
pub fn align_rows_backward(
    z_d: &[f64],
    stats: &ChannelStats,
    gamma: &[f64],
    eps: f64,
    grad_out: &[f64],
    grad_gamma: &mut [f64],
) -> Vec<f64> {
    let c = gamma.len();
    let inv = stats.inv_std(eps);
    let mut grad_zd = Vec::with_capacity(z_d.len());
    for (row, g) in z_d.chunks_exact(c).zip(grad_out.chunks_exact(c)) {
        for ch in 0..c {
            grad_zd.push(g[ch] * inv[ch] * gamma[ch]);
            grad_gamma[ch] += g[ch] * (row[ch] - stats.mean[ch]) * inv[ch];
        }
    }
    grad_zd
}

/// Moves axis 1 of a `[A, C, rest..]` buffer to the end: `[A, rest.., C]`.
pub(crate) fn channels_last(data: &[f64], outer: usize, channels: usize, inner: usize) -> Vec<f64> {
    let mut out = vec![0.0; data.len()];
    for a in 0..outer {
        for c in 0..channels {
            for i in 0..inner {
                out[(a * inner + i) * channels + c] = data[(a * channels + c) * inner + i];
            }
        }
    }
    out
}

/// Inverse of [`channels_last`].
pub(crate) fn channels_first(data: &[f64], outer: usize, channels: usize, inner: usize) -> Vec<f64> {
    let mut out = vec![0.0; data.len()];
    for a in 0..outer {
        for c in 0..channels {
            for i in 0..inner {
                out[(a * channels + c) * inner + i] = data[(a * inner + i) * channels + c];
            }
        }
    }
    out
}

/// Aligns `z_d` to the statistics of `z_m`; both are `[A, C, ...]` with the
/// channel on axis 1, statistics taken over every other axis.
pub fn align(z_d: &Tensor, z_m: &Tensor, params: &AlignmentParams) -> Result<Tensor> {
    let c = params.gamma.numel();
    let (d_shape, m_shape) = (z_d.shape(), z_m.shape());
    if d_shape.len() < 2 || m_shape.len() < 2 || d_shape[1] != c || m_shape[1] != c {
        return Err(Error::InvalidShape(format!(
            "align needs channel axis of {c} on both inputs, got {d_shape:?} and {m_shape:?}"
        )));
    }
    let inner = |s: &[usize]| s[2..].iter().product::<usize>();
    let zm_rows = channels_last(z_m.data(), m_shape[0], c, inner(m_shape));
    let zd_rows = channels_last(z_d.data(), d_shape[0], c, inner(d_shape));
    let stats = ChannelStats::of_rows(&zm_rows, c);
    let out = align_rows(&zd_rows, &stats, params.gamma.data(), params.align_eps);
    Tensor::new(d_shape.to_vec(), channels_first(&out, d_shape[0], c, inner(d_shape)))
}

/// Patchify conv, SiLU, global average pool: `[1, H, W] → [dim]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StyleEncoderSpec {
    pub height: usize,
    pub width: usize,
    pub patch: usize,
    pub dim: usize,
}

#[derive(Debug, Clone)]
pub struct StyleCache {
    frame: Vec<f64>,
    pre: Vec<f64>,
}

impl StyleEncoderSpec {
    fn geom(&self) -> ConvGeom {
        ConvGeom::new(
            &[1, 1, self.height, self.width],
            &[self.dim, 1, self.patch, self.patch],
            self.patch,
            0,
        )
        .expect("style encoder geometry validated at construction")
    }

    pub fn validate(&self) -> Result<()> {
        ConvGeom::new(
            &[1, 1, self.height, self.width],
            &[self.dim, 1, self.patch, self.patch],
            self.patch.max(1),
            0,
        )?;
        Ok(())
    }

    pub fn tensors(&self) -> Vec<(String, Vec<usize>)> {
        vec![
            ("style.conv.w".into(), vec![self.dim, 1, self.patch, self.patch]),
            ("style.conv.b".into(), vec![self.dim]),
        ]
    }

    pub fn param_len(&self) -> usize {
        self.dim * self.patch * self.patch + self.dim
    }

    pub fn init(&self, rng: &mut Rng, params: &mut [f64]) {
        let (w, b) = params.split_at_mut(self.dim * self.patch * self.patch);
        let std = 1.0 / self.patch as f64;
        w.iter_mut().for_each(|v| *v = std * rng.gaussian());
        b.fill(0.0);
    }

    pub fn forward(&self, params: &[f64], frame: &Tensor) -> Result<(Vec<f64>, StyleCache)> {
        if frame.numel() != self.height * self.width {
            return Err(Error::InvalidShape(format!(
                "style frame must hold {}x{} values, got {:?}",
                self.height,
                self.width,
                frame.shape()
            )));
        }
        frame.check_finite("style frame")?;
        let g = self.geom();
        let (w, b) = params.split_at(self.dim * self.patch * self.patch);
        let mut pre = vec![0.0; g.output_len()];
        let cells = g.out_h * g.out_w;
        add_channel_bias(&mut pre, b, cells);
        g.forward(frame.data(), w, &mut pre);
        let out = pre
            .chunks_exact(cells)
            .map(|ch| ch.iter().map(|&v| silu(v)).sum::<f64>() / cells as f64)
            .collect();
        Ok((
            out,
            StyleCache {
                frame: frame.data().to_vec(),
                pre,
            },
        ))
    }

    pub fn backward(&self, params: &[f64], cache: &StyleCache, grad_out: &[f64], grads: &mut [f64]) {
        let g = self.geom();
        let cells = g.out_h * g.out_w;
        let gpre: Vec<f64> = cache
            .pre
            .chunks_exact(cells)
            .zip(grad_out)
            .flat_map(|(ch, &go)| ch.iter().map(move |&p| go * silu_deriv(p) / cells as f64))
            .collect();
        let _ = params;
        let (gw, gb) = grads.split_at_mut(self.dim * self.patch * self.patch);
        channel_bias_grad(&gpre, gb, cells);
        g.backward_kernel(&cache.frame, &gpre, gw);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StyleEncoderParams {
    pub spec: StyleEncoderSpec,
    pub values: Vec<f64>,
}

impl StyleEncoderParams {
    pub fn zeros(spec: StyleEncoderSpec) -> Result<Self> {
        spec.validate()?;
        Ok(StyleEncoderParams {
            values: vec![0.0; spec.param_len()],
            spec,
        })
    }

    pub fn random(spec: StyleEncoderSpec, rng: &mut Rng) -> Result<Self> {
        let mut p = Self::zeros(spec)?;
        spec.init(rng, &mut p.values);
        Ok(p)
    }
}

pub fn encode_style(params: &StyleEncoderParams, first_frame: &Tensor) -> Result<Tensor> {
    let (v, _) = params.spec.forward(&params.values, first_frame)?;
    Tensor::new(vec![params.spec.dim], v)
}

/// The condition actually seen by the denoiser.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionBundle {
    /// Aligned depth embedding, `[F, C, h, w]`.
    pub aligned_depth: Tensor,
    pub style: Tensor,
    pub null: bool,
}

impl ConditionBundle {
    pub fn null(depth_shape: &[usize], style_dim: usize) -> Self {
        ConditionBundle {
            aligned_depth: Tensor::zeros(depth_shape),
            style: Tensor::zeros(&[style_dim]),
            null: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Warmup,
    Injection,
}

impl FromStr for Stage {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "warmup" => Ok(Stage::Warmup),
            "injection" => Ok(Stage::Injection),
            other => Err(Error::InvalidStage(other.to_string())),
        }
    }
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Stage::Warmup => "warmup",
            Stage::Injection => "injection",
        })
    }
}

/// Parameters that only exist for the conditional path.
pub fn is_conditioning_param(name: &str) -> bool {
    name.starts_with("depth_encoder.") || name.starts_with("align.") || name.starts_with("style.")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageConfig {
    pub stage: Stage,
    pub warmup_steps: u64,
    pub injection_steps: u64,
    /// Whether the depth encoder is fine-tuned alongside the spline blocks.
    #[serde(default = "default_true")]
    pub train_depth_encoder: bool,
}

fn default_true() -> bool {
    true
}

impl StageConfig {
    pub fn new(stage: Stage) -> Self {
        StageConfig {
            stage,
            warmup_steps: 4000,
            injection_steps: 2000,
            train_depth_encoder: true,
        }
    }

    pub fn is_trainable(&self, name: &str) -> bool {
        match self.stage {
            Stage::Warmup => !is_conditioning_param(name),
            Stage::Injection => {
                name.starts_with("asd.")
                    || name == "align.gamma"
                    || name.starts_with("style.")
                    || (self.train_depth_encoder && name.starts_with("depth_encoder."))
            }
        }
    }

    pub fn budget(&self) -> u64 {
        match self.stage {
            Stage::Warmup => self.warmup_steps,
            Stage::Injection => self.injection_steps,
        }
    }
}

/// Splits names into `(trainable, frozen)` for the given stage.
pub fn partition_params<'a>(
    names: impl IntoIterator<Item = &'a str>,
    stage: &StageConfig,
) -> (Vec<String>, Vec<String>) {
    let mut trainable = Vec::new();
    let mut frozen = Vec::new();
    for n in names {
        if stage.is_trainable(n) {
            trainable.push(n.to_string());
        } else {
            frozen.push(n.to_string());
        }
    }
    (trainable, frozen)
}

pub(crate) fn add_channel_bias(out: &mut [f64], bias: &[f64], cells: usize) {
    for (chunk, b) in out.chunks_exact_mut(cells).zip(bias.iter().cycle()) {
        chunk.iter_mut().for_each(|v| *v += b);
    }
}

pub(crate) fn channel_bias_grad(grad: &[f64], gb: &mut [f64], cells: usize) {
    let c = gb.len();
    for (i, chunk) in grad.chunks_exact(cells).enumerate() {
        gb[i % c] += chunk.iter().sum::<f64>();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::gaussian_sample;

    fn depth_spec() -> DepthEncoderSpec {
        DepthEncoderSpec {
            frames: 2,
            height: 16,
            width: 16,
            hidden: 4,
            channels: 6,
        }
    }

    #[test]
    fn zero_depth_zero_params() {
        let p = DepthEncoderParams::zeros(depth_spec()).unwrap();
        let z = encode_depth(&p, &Tensor::zeros(&[2, 1, 16, 16])).unwrap();
        assert_eq!(z.shape(), &[2, 6, 4, 4]);
        assert!(z.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn depth_encoder_deterministic() {
        let p = DepthEncoderParams::random(depth_spec(), &mut Rng::new(3)).unwrap();
        let q = DepthEncoderParams::random(depth_spec(), &mut Rng::new(3)).unwrap();
        let d = Tensor::from_fn(&[2, 1, 16, 16], |i| (i % 17) as f64 / 16.0);
        assert_eq!(encode_depth(&p, &d).unwrap(), encode_depth(&q, &d).unwrap());
    }

    #[test]
    fn depth_out_of_range() {
        let p = DepthEncoderParams::zeros(depth_spec()).unwrap();
        let mut d = Tensor::zeros(&[2, 1, 16, 16]);
        d.data_mut()[7] = 1.5;
        assert!(matches!(encode_depth(&p, &d), Err(Error::InvalidDepth(v)) if v == 1.5));
        d.data_mut()[7] = -0.1;
        assert!(matches!(encode_depth(&p, &d), Err(Error::InvalidDepth(_))));
    }

    #[test]
    fn align_scalar_example() {
        // z_m = {1 - a, 1 + a} gives mean 1 and variance a^2 = 3.9999
        let a = 3.9999f64.sqrt();
        let z_m = Tensor::new(vec![2, 1], vec![1.0 - a, 1.0 + a]).unwrap();
        let z_d = Tensor::new(vec![1, 1], vec![3.0]).unwrap();
        let params = AlignmentParams {
            gamma: Tensor::new(vec![1], vec![0.5]).unwrap(),
            align_eps: 1e-4,
        };
        let out = align(&z_d, &z_m, &params).unwrap();
        assert!((out.data()[0] - 0.5).abs() < 1e-7);
    }

    #[test]
    fn align_zero_cases() {
        let mut rng = Rng::new(2);
        let z_m = gaussian_sample(&mut rng, &[3, 4, 2, 2]).unwrap();
        let params = AlignmentParams::zeros(4);
        let z_d = gaussian_sample(&mut rng, &[3, 4, 2, 2]).unwrap();
        assert!(align(&z_d, &z_m, &params).unwrap().data().iter().all(|&v| v == 0.0));

        // z_d equal to the per-channel mean of z_m
        let rows = channels_last(z_m.data(), 3, 4, 4);
        let stats = ChannelStats::of_rows(&rows, 4);
        let z_d = Tensor::from_fn(&[3, 4, 2, 2], |i| stats.mean[(i / 4) % 4]);
        let params = AlignmentParams {
            gamma: Tensor::new(vec![4], vec![1.0, -2.0, 3.0, 0.5]).unwrap(),
            align_eps: ALIGN_EPS,
        };
        let out = align(&z_d, &z_m, &params).unwrap();
        assert!(out.data().iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn align_moments_when_inputs_coincide() {
        let mut rng = Rng::new(5);
        let z = Tensor::from_fn(&[4, 3, 4, 4], |i| 0.3 * rng.gaussian() + (i % 3) as f64);
        let gamma = vec![0.7, -1.3, 2.0];
        let params = AlignmentParams {
            gamma: Tensor::new(vec![3], gamma.clone()).unwrap(),
            align_eps: ALIGN_EPS,
        };
        let out = align(&z, &z, &params).unwrap();
        let rows = channels_last(out.data(), 4, 3, 16);
        let st = ChannelStats::of_rows(&rows, 3);
        for c in 0..3 {
            assert!(st.mean[c].abs() < 1e-6);
            assert!((st.var[c].sqrt() - gamma[c].abs()).abs() < 1e-3);
        }
    }

    #[test]
    fn align_channel_mismatch() {
        let params = AlignmentParams::zeros(3);
        assert!(matches!(
            align(&Tensor::zeros(&[1, 2, 2, 2]), &Tensor::zeros(&[1, 3, 2, 2]), &params),
            Err(Error::InvalidShape(_))
        ));
    }

    #[test]
    fn style_zero() {
        let spec = StyleEncoderSpec {
            height: 16,
            width: 16,
            patch: 4,
            dim: 16,
        };
        let p = StyleEncoderParams::zeros(spec).unwrap();
        let s = encode_style(&p, &Tensor::zeros(&[1, 16, 16])).unwrap();
        assert_eq!(s.shape(), &[16]);
        assert!(s.data().iter().all(|&v| v == 0.0));
        let p = StyleEncoderParams::random(spec, &mut Rng::new(1)).unwrap();
        let f = Tensor::from_fn(&[1, 16, 16], |i| (i as f64 * 0.37).sin());
        assert_eq!(encode_style(&p, &f).unwrap(), encode_style(&p, &f).unwrap());
    }

    #[test]
    fn stage_parsing() {
        assert_eq!("warmup".parse::<Stage>().unwrap(), Stage::Warmup);
        assert!(matches!("finetune".parse::<Stage>(), Err(Error::InvalidStage(_))));
    }

    #[test]
    fn partition_examples() {
        let names = [
            "patch.w",
            "block0.spatial.w",
            "asd.layer0.edge1.2.c",
            "asd.layer2.edge0.0.wb",
            "depth_encoder.conv1.w",
            "align.gamma",
            "style.proj.w",
            "head.w",
        ];
        let inj = StageConfig::new(Stage::Injection);
        let (tr, fr) = partition_params(names.iter().copied(), &inj);
        assert!(fr.contains(&"block0.spatial.w".to_string()));
        assert!(tr.contains(&"asd.layer0.edge1.2.c".to_string()));
        assert_eq!(tr.len() + fr.len(), names.len());

        let mut no_enc = inj;
        no_enc.train_depth_encoder = false;
        assert!(!no_enc.is_trainable("depth_encoder.conv1.w"));

        let warm = StageConfig::new(Stage::Warmup);
        let (tr, fr) = partition_params(names.iter().copied(), &warm);
        assert_eq!(fr, vec!["depth_encoder.conv1.w", "align.gamma", "style.proj.w"]);
        assert_eq!(tr.len(), 5);
    }
}
