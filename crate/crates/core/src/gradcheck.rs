//! Finite-difference checks of every analytic gradient in the crate.
//!
//! Each suite draws random parameters and inputs, evaluates a scalar loss,
//! and compares analytic derivatives against f64 central differences at
//! randomly chosen coordinates.

use serde::Serialize;

use crate::asd::{kan_backward, kan_forward, KanNetwork, KanSpec};
use crate::config::{ModelConfig, Variant};
use crate::error::Result;
use crate::model::{Condition, Denoiser};
use crate::numerics::{Rng, Tensor};
use crate::pda::{DepthEncoderSpec, StyleEncoderSpec};
use crate::spline::{GridSpec, KnotGrid};

/// Central-difference step.
pub const FD_STEP: f64 = 1e-5;
/// Scale below which relative error is measured against this floor instead.
pub const REL_FLOOR: f64 = 1e-6;

pub const COMPONENT_TOL: f64 = 1e-4;
pub const MODEL_TOL: f64 = 1e-3;

#[derive(Debug, Clone, Serialize)]
pub struct SuiteReport {
    pub name: String,
    pub probes: usize,
    pub max_rel_err: f64,
    pub tolerance: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct GradcheckOptions {
    pub seed: u64,
    /// Test hook: perturbs one analytic derivative per suite.
    pub corrupt: bool,
}

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

fn compare(
    name: &str,
    x: &[f64],
    analytic: &[f64],
    probes: usize,
    tolerance: f64,
    opts: GradcheckOptions,
    rng: &mut Rng,
    loss: impl Fn(&[f64]) -> Result<f64>,
) -> Result<SuiteReport> {
    let mut x = x.to_vec();
    let mut worst = 0.0f64;
    for k in 0..probes {
        let i = rng.uniform_int(0, x.len() - 1);
        let orig = x[i];
        x[i] = orig + FD_STEP;
        let up = loss(&x)?;
        x[i] = orig - FD_STEP;
        let down = loss(&x)?;
        x[i] = orig;
        let numeric = (up - down) / (2.0 * FD_STEP);
        let mut a = analytic[i];
        if opts.corrupt && k == 0 {
            a = 1.5 * a + 1e-3;
        }
        worst = worst.max(rel_err(a, numeric));
    }
    Ok(SuiteReport {
        name: name.to_string(),
        probes,
        max_rel_err: worst,
        tolerance,
        passed: worst <= tolerance,
    })
}

fn gauss_vec(rng: &mut Rng, n: usize, std: f64) -> Vec<f64> {
    (0..n).map(|_| std * rng.gaussian()).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `d/dx Σ w_i B_i(x)` against differences in `x`.
pub fn spline_suite(opts: GradcheckOptions, probes: usize) -> Result<SuiteReport> {
    let mut rng = Rng::new(opts.seed);
    let grid = KnotGrid::try_from(GridSpec::default())?;
    let w = gauss_vec(&mut rng, grid.num_basis(), 1.0);
    let xs: Vec<f64> = (0..probes)
        .map(|_| rng.uniform_range(grid.lo() + 1e-3, grid.hi() - 1e-3))
        .collect();
    let f = |x: &[f64]| -> Result<f64> {
        let mut s = 0.0;
        for &v in x {
            let a = grid.active(v)?;
            s += (0..a.len).map(|r| w[a.start + r] * a.values[r]).sum::<f64>();
        }
        Ok(s)
    };
    let mut analytic = Vec::with_capacity(xs.len());
    for &v in &xs {
        let a = grid.active(v)?;
        analytic.push((0..a.len).map(|r| w[a.start + r] * a.derivs[r]).sum::<f64>());
    }
    compare("spline", &xs, &analytic, probes, COMPONENT_TOL, opts, &mut rng, f)
}

/// One KAN layer; probes cover parameters and inputs.
pub fn kan_layer_suite(opts: GradcheckOptions, probes: usize) -> Result<SuiteReport> {
    let mut rng = Rng::new(opts.seed ^ 1);
    let spec = KanSpec {
        n_in: 4,
        n_out: 3,
        grid: KnotGrid::try_from(GridSpec::default())?,
    };
    let batch = 5;
    let mut params = vec![0.0; spec.param_len()];
    spec.init_params(&mut rng, &mut params, |r| r.gaussian(), 1.0, 0.5);
    let x = gauss_vec(&mut rng, batch * spec.n_in, 1.2);
    let r = gauss_vec(&mut rng, batch * spec.n_out, 1.0);
    let np = params.len();
    let joint: Vec<f64> = params.iter().chain(&x).copied().collect();
    let f = |v: &[f64]| -> Result<f64> {
        let (out, _) = spec.forward(&v[..np], &v[np..], batch)?;
        Ok(dot(&out, &r))
    };
    let (_, cache) = spec.forward(&params, &x, batch)?;
    let mut g = vec![0.0; np];
    let gx = spec.backward(&params, &cache, &r, &mut g)?;
    g.extend(gx);
    compare("kan-layer", &joint, &g, probes, COMPONENT_TOL, opts, &mut rng, f)
}

fn network_from(widths: &[usize], grid: &KnotGrid, flat: &[f64]) -> Result<KanNetwork> {
    let mut layers = Vec::new();
    let mut off = 0;
    for w in widths.windows(2) {
        let mut l = crate::asd::KanLayer::zeros(w[0], w[1], grid.clone());
        let n = l.params().len();
        l.params_mut().copy_from_slice(&flat[off..off + n]);
        off += n;
        layers.push(l);
    }
    KanNetwork::new(layers)
}

/// A three-layer network through the public `kan_forward` / `kan_backward`.
pub fn kan_network_suite(opts: GradcheckOptions, probes: usize) -> Result<SuiteReport> {
    let mut rng = Rng::new(opts.seed ^ 2);
    let grid = KnotGrid::try_from(GridSpec::default())?;
    let widths = [3, 5, 4, 2];
    let batch = 4;
    let total: usize = widths
        .windows(2)
        .map(|w| w[0] * w[1] * (grid.num_basis() + 2))
        .sum();
    let flat = gauss_vec(&mut rng, total, 0.4);
    let x = Tensor::new(vec![batch, widths[0]], gauss_vec(&mut rng, batch * widths[0], 1.0))?;
    let r = gauss_vec(&mut rng, batch * widths[3], 1.0);
    let f = |v: &[f64]| -> Result<f64> {
        let net = network_from(&widths, &grid, v)?;
        let (out, _) = kan_forward(&net, &x)?;
        Ok(dot(out.data(), &r))
    };
    let net = network_from(&widths, &grid, &flat)?;
    let (_, cache) = kan_forward(&net, &x)?;
    let (_, grads) = kan_backward(&net, &cache, &Tensor::new(vec![batch, widths[3]], r.clone())?)?;
    let g: Vec<f64> = grads.layers().iter().flat_map(|l| l.params().to_vec()).collect();
    compare("kan-network", &flat, &g, probes, COMPONENT_TOL, opts, &mut rng, f)
}

pub fn depth_encoder_suite(opts: GradcheckOptions, probes: usize) -> Result<SuiteReport> {
    let mut rng = Rng::new(opts.seed ^ 3);
    let spec = DepthEncoderSpec {
        frames: 2,
        height: 8,
        width: 8,
        hidden: 3,
        channels: 4,
    };
    let params = gauss_vec(&mut rng, spec.param_len(), 0.5);
    let depth = Tensor::from_fn(&[2, 1, 8, 8], |_| rng.uniform());
    let n_out: usize = spec.output_shape().iter().product();
    let r = gauss_vec(&mut rng, n_out, 1.0);
    let f = |v: &[f64]| -> Result<f64> {
        let (out, _) = spec.forward(v, &depth)?;
        Ok(dot(&out, &r))
    };
    let (_, cache) = spec.forward(&params, &depth)?;
    let mut g = vec![0.0; params.len()];
    spec.backward(&params, &cache, &r, &mut g);
    compare("depth-encoder", &params, &g, probes, COMPONENT_TOL, opts, &mut rng, f)
}

pub fn style_encoder_suite(opts: GradcheckOptions, probes: usize) -> Result<SuiteReport> {
    let mut rng = Rng::new(opts.seed ^ 4);
    let spec = StyleEncoderSpec {
        height: 8,
        width: 8,
        patch: 4,
        dim: 5,
    };
    let params = gauss_vec(&mut rng, spec.param_len(), 0.5);
    let frame = Tensor::from_fn(&[1, 8, 8], |_| rng.uniform());
    let r = gauss_vec(&mut rng, spec.dim, 1.0);
    let f = |v: &[f64]| -> Result<f64> {
        let (out, _) = spec.forward(v, &frame)?;
        Ok(dot(&out, &r))
    };
    let (_, cache) = spec.forward(&params, &frame)?;
    let mut g = vec![0.0; params.len()];
    spec.backward(&params, &cache, &r, &mut g);
    compare("style-encoder", &params, &g, probes, COMPONENT_TOL, opts, &mut rng, f)
}

/// Geometry of the shrunk denoiser used for whole-model checks.
pub fn shrunk_model_config() -> ModelConfig {
    ModelConfig {
        frames: 2,
        height: 8,
        width: 8,
        patch: 4,
        channels: 8,
        blocks: 1,
        time_dim: 16,
        style_dim: 4,
        depth_hidden: 3,
        grid: GridSpec::default(),
    }
}

/// Whole denoiser with a full condition. Every parameter, including the
/// zero-initialized ones, is randomized so that all paths carry gradient;
/// the alignment statistics are held at their base-point values.
pub fn denoiser_suite(opts: GradcheckOptions, variant: Variant, probes: usize) -> Result<SuiteReport> {
    let mut rng = Rng::new(opts.seed ^ 5);
    let cfg = shrunk_model_config();
    let model = Denoiser::new(&cfg, variant, 100)?;
    let mut params = model.init_params(&mut rng);
    for p in params.iter_mut() {
        *p += 0.2 * rng.gaussian();
    }
    let shape = model.clip_shape();
    let zt = Tensor::from_fn(&shape, |_| rng.gaussian());
    let target = Tensor::from_fn(&shape, |_| rng.gaussian());
    let cond = variant.uses_pda().then(|| Condition {
        depth: Tensor::from_fn(&shape, |_| rng.uniform()),
        style_frame: Some(Tensor::from_fn(&[1, cfg.height, cfg.width], |_| rng.uniform())),
    });
    let t = rng.uniform_int(1, 100);
    let (_, base) = model.forward(&params, &zt, cond.as_ref(), t)?;
    let stats = base.align_stats().cloned();
    let f = |v: &[f64]| -> Result<f64> {
        let (pred, _) = model.forward_with_stats(v, &zt, cond.as_ref(), t, stats.as_ref())?;
        crate::diffusion::training_loss(&target, &pred)
    };
    let mut g = vec![0.0; params.len()];
    model.loss_and_grad(&params, &zt, &target, cond.as_ref(), t, 1.0, &mut g)?;
    let name = format!("denoiser-{}", variant.name());
    compare(&name, &params, &g, probes, MODEL_TOL, opts, &mut rng, f)
}

/// Every suite at its acceptance probe count.
pub fn run_all(opts: GradcheckOptions) -> Result<Vec<SuiteReport>> {
    Ok(vec![
        spline_suite(opts, 100)?,
        kan_layer_suite(opts, 100)?,
        kan_network_suite(opts, 100)?,
        depth_encoder_suite(opts, 100)?,
        style_encoder_suite(opts, 100)?,
        denoiser_suite(opts, Variant::Full, 25)?,
        denoiser_suite(opts, Variant::NoAsd, 25)?,
    ])
}
