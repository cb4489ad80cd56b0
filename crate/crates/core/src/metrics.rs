//! Sample-quality statistics: a Gaussian Fréchet distance over randomly
//! projected clip features, depth/intensity correlation, and frame-to-frame
//! change.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{sym_eigendecomp, Rng, Tensor};

pub const FEATURE_DIM: usize = 32;
pub const SHRINKAGE: f64 = 1e-6;
pub const DEFAULT_PROJECTION_SEED: u64 = 0x5eed_f00d;

/// Below this standard deviation a correlation input counts as constant.
const DEGENERATE_STD: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianStats {
    pub mean: Tensor,
    pub cov: Tensor,
    pub n: usize,
    pub projection_seed: u64,
}

/// The fixed `[FEATURE_DIM, len]` projection for flattened clips of `len` values.
pub fn projection(seed: u64, len: usize) -> Vec<f64> {
    let mut rng = Rng::new(seed);
    let s = 1.0 / (len as f64).sqrt();
    (0..FEATURE_DIM * len).map(|_| s * rng.gaussian()).collect()
}

pub fn project(proj: &[f64], clip: &[f64]) -> Vec<f64> {
    proj.chunks_exact(clip.len())
        .map(|row| row.iter().zip(clip).map(|(a, b)| a * b).sum())
        .collect()
}

impl GaussianStats {
    /// Mean and shrunk unbiased covariance of feature vectors.
    pub fn from_features(features: &[Vec<f64>], projection_seed: u64) -> Result<Self> {
        let n = features.len();
        if n < 2 {
            return Err(Error::InsufficientData(format!("need at least 2 clips, got {n}")));
        }
        let d = features[0].len();
        if features.iter().any(|f| f.len() != d) {
            return Err(Error::InvalidShape("feature vectors differ in length".into()));
        }
        let mut mean = vec![0.0; d];
        for f in features {
            for (m, v) in mean.iter_mut().zip(f) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let mut cov = vec![0.0; d * d];
        for f in features {
            for i in 0..d {
                let di = f[i] - mean[i];
                for j in i..d {
                    cov[i * d + j] += di * (f[j] - mean[j]);
                }
            }
        }
        for i in 0..d {
            for j in i..d {
                let c = cov[i * d + j] / (n - 1) as f64 + if i == j { SHRINKAGE } else { 0.0 };
                cov[i * d + j] = c;
                cov[j * d + i] = c;
            }
        }
        Ok(GaussianStats {
            mean: Tensor::new(vec![d], mean)?,
            cov: Tensor::new(vec![d, d], cov)?,
            n,
            projection_seed,
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.numel()
    }
}

pub fn clip_features(clips: &[Tensor], projection_seed: u64) -> Result<Vec<Vec<f64>>> {
    let Some(first) = clips.first() else {
        return Ok(Vec::new());
    };
    let len = first.numel();
    let proj = projection(projection_seed, len);
    clips
        .iter()
        .map(|c| {
            if c.shape() != first.shape() {
                return Err(Error::InvalidShape(format!(
                    "clip shape {:?} differs from {:?}",
                    c.shape(),
                    first.shape()
                )));
            }
            c.check_finite("clip")?;
            Ok(project(&proj, c.data()))
        })
        .collect()
}

pub fn fit_gaussian_stats(clips: &[Tensor], projection_seed: u64) -> Result<GaussianStats> {
    if clips.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "need at least 2 clips, got {}",
            clips.len()
        )));
    }
    GaussianStats::from_features(&clip_features(clips, projection_seed)?, projection_seed)
}

/// Square root of a symmetric PSD matrix; negative eigenvalues are clamped.
fn sqrt_psd(m: &Tensor) -> Result<Tensor> {
    let d = m.shape()[0];
    let (vals, vecs) = sym_eigendecomp(m)?;
    let (l, v) = (vals.data(), vecs.data());
    let mut out = vec![0.0; d * d];
    for k in 0..d {
        let s = l[k].max(0.0).sqrt();
        if s == 0.0 {
            continue;
        }
        for i in 0..d {
            let vi = v[i * d + k] * s;
            for j in 0..d {
                out[i * d + j] += vi * v[j * d + k];
            }
        }
    }
    Tensor::new(vec![d, d], out)
}

fn matmul(a: &[f64], b: &[f64], d: usize) -> Vec<f64> {
    let mut out = vec![0.0; d * d];
    for i in 0..d {
        for k in 0..d {
            let aik = a[i * d + k];
            for j in 0..d {
                out[i * d + j] += aik * b[k * d + j];
            }
        }
    }
    out
}

pub fn frechet_distance(a: &GaussianStats, b: &GaussianStats) -> Result<f64> {
    if a.dim() != b.dim() || a.projection_seed != b.projection_seed {
        return Err(Error::IncompatibleStats(format!(
            "dimension {} / seed {:#x} vs dimension {} / seed {:#x}",
            a.dim(),
            a.projection_seed,
            b.dim(),
            b.projection_seed
        )));
    }
    let d = a.dim();
    let mu: f64 = a
        .mean
        .data()
        .iter()
        .zip(b.mean.data())
        .map(|(x, y)| (x - y) * (x - y))
        .sum();
    let ra = sqrt_psd(&a.cov)?;
    let mut inner = matmul(&matmul(ra.data(), b.cov.data(), d), ra.data(), d);
    for i in 0..d {
        for j in i + 1..d {
            let s = 0.5 * (inner[i * d + j] + inner[j * d + i]);
            inner[i * d + j] = s;
            inner[j * d + i] = s;
        }
    }
    let (vals, _) = sym_eigendecomp(&Tensor::new(vec![d, d], inner)?)?;
    let cross: f64 = vals.data().iter().map(|l| l.max(0.0).sqrt()).sum();
    let trace = |t: &Tensor| (0..d).map(|i| t.data()[i * d + i]).sum::<f64>();
    Ok((mu + trace(&a.cov) + trace(&b.cov) - 2.0 * cross).max(0.0))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Fidelity {
    pub value: f64,
    /// Set when either side is constant; `value` is then 0.
    pub degenerate: bool,
}

/// Pearson correlation between generated intensity and `1 − depth`.
pub fn depth_fidelity(generated: &Tensor, depth: &Tensor) -> Result<Fidelity> {
    if generated.shape() != depth.shape() {
        return Err(Error::InvalidShape(format!(
            "generated {:?} vs depth {:?}",
            generated.shape(),
            depth.shape()
        )));
    }
    generated.check_finite("generated clip")?;
    let n = generated.numel() as f64;
    let g = generated.data();
    let h: Vec<f64> = depth.data().iter().map(|d| 1.0 - d).collect();
    let mg = g.iter().sum::<f64>() / n;
    let mh = h.iter().sum::<f64>() / n;
    let (mut sgh, mut sgg, mut shh) = (0.0, 0.0, 0.0);
    for (x, y) in g.iter().zip(&h) {
        let (dx, dy) = (x - mg, y - mh);
        sgh += dx * dy;
        sgg += dx * dx;
        shh += dy * dy;
    }
    if (sgg / n).sqrt() < DEGENERATE_STD || (shh / n).sqrt() < DEGENERATE_STD {
        return Ok(Fidelity {
            value: 0.0,
            degenerate: true,
        });
    }
    Ok(Fidelity {
        value: (sgh / (sgg.sqrt() * shh.sqrt())).clamp(-1.0, 1.0),
        degenerate: false,
    })
}

/// Mean absolute change between consecutive frames (leading axis).
pub fn temporal_coherence(clip: &Tensor) -> Result<f64> {
    let frames = clip.shape().first().copied().unwrap_or(0);
    if frames < 2 {
        return Err(Error::InsufficientFrames(frames));
    }
    let per = clip.numel() / frames;
    let d = clip.data();
    let total: f64 = (0..frames - 1)
        .map(|t| {
            let (a, b) = (&d[t * per..(t + 1) * per], &d[(t + 1) * per..(t + 2) * per]);
            a.iter().zip(b).map(|(x, y)| (y - x).abs()).sum::<f64>() / per as f64
        })
        .sum();
    Ok(total / (frames - 1) as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub frechet: f64,
    pub depth_fidelity_mean: Option<f64>,
    pub depth_fidelity_per_clip: Option<Vec<f64>>,
    /// Mean over the generated clips.
    pub temporal_coherence: f64,
    pub n_clips: usize,
    pub projection_seed: u64,
}

/// Compares a generated set against a real one; `depths`, when given, pair
/// one-to-one with `generated`.
pub fn evaluate(
    real: &[Tensor],
    generated: &[Tensor],
    depths: Option<&[Tensor]>,
    projection_seed: u64,
) -> Result<MetricsReport> {
    let a = fit_gaussian_stats(real, projection_seed)?;
    let b = fit_gaussian_stats(generated, projection_seed)?;
    if real[0].shape() != generated[0].shape() {
        return Err(Error::IncompatibleStats("real and generated clips differ in shape".into()));
    }
    let frechet = frechet_distance(&a, &b)?;
    let coh = generated
        .iter()
        .map(temporal_coherence)
        .collect::<Result<Vec<_>>>()?;
    let per_clip = match depths {
        None => None,
        Some(ds) => {
            if ds.len() != generated.len() {
                return Err(Error::InvalidInput(format!(
                    "{} depth sequences for {} generated clips",
                    ds.len(),
                    generated.len()
                )));
            }
            let v = generated
                .iter()
                .zip(ds)
                .map(|(g, d)| depth_fidelity(g, d).map(|f| f.value))
                .collect::<Result<Vec<_>>>()?;
            Some(v)
        }
    };
    Ok(MetricsReport {
        frechet,
        depth_fidelity_mean: per_clip
            .as_ref()
            .map(|v| v.iter().sum::<f64>() / v.len() as f64),
        depth_fidelity_per_clip: per_clip,
        temporal_coherence: coh.iter().sum::<f64>() / coh.len() as f64,
        n_clips: generated.len(),
        projection_seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stats(mean: Vec<f64>, cov: Vec<f64>) -> GaussianStats {
        let d = mean.len();
        GaussianStats {
            mean: Tensor::new(vec![d], mean).unwrap(),
            cov: Tensor::new(vec![d, d], cov).unwrap(),
            n: 10,
            projection_seed: 0,
        }
    }

    #[test]
    fn one_dimensional_closed_form() {
        let a = stats(vec![0.0], vec![1.0]);
        let b = stats(vec![1.0], vec![1.0]);
        assert!((frechet_distance(&a, &b).unwrap() - 1.0).abs() < 1e-8);
        let c = stats(vec![0.0], vec![4.0]);
        assert!((frechet_distance(&a, &c).unwrap() - 1.0).abs() < 1e-8);
    }

    #[test]
    fn diagonal_mean_shift() {
        let a = stats(vec![0.0, 0.0], vec![2.0, 0.0, 0.0, 3.0]);
        let b = stats(vec![1.0, 0.0], vec![2.0, 0.0, 0.0, 3.0]);
        assert!((frechet_distance(&a, &b).unwrap() - 1.0).abs() < 1e-8);
        assert!(frechet_distance(&a, &a).unwrap() < 1e-8);
    }

    #[test]
    fn incompatible() {
        let a = stats(vec![0.0], vec![1.0]);
        let mut b = stats(vec![0.0], vec![1.0]);
        b.projection_seed = 1;
        assert!(matches!(frechet_distance(&a, &b), Err(Error::IncompatibleStats(_))));
        let c = stats(vec![0.0, 0.0], vec![1.0, 0.0, 0.0, 1.0]);
        assert!(matches!(frechet_distance(&a, &c), Err(Error::IncompatibleStats(_))));
    }

    #[test]
    fn fidelity_cases() {
        let d = Tensor::from_fn(&[2, 1, 2, 2], |i| i as f64 / 8.0);
        let inv = d.map(|v| 1.0 - v);
        assert!((depth_fidelity(&inv, &d).unwrap().value - 1.0).abs() < 1e-12);
        assert!((depth_fidelity(&d, &d).unwrap().value + 1.0).abs() < 1e-12);
        let f = depth_fidelity(&Tensor::full(&[2, 1, 2, 2], 0.3), &d).unwrap();
        assert_eq!(f, Fidelity { value: 0.0, degenerate: true });
        assert!(matches!(
            depth_fidelity(&Tensor::zeros(&[8]), &d),
            Err(Error::InvalidShape(_))
        ));
    }

    #[test]
    fn coherence_cases() {
        assert_eq!(temporal_coherence(&Tensor::full(&[4, 1, 3, 3], 0.7)).unwrap(), 0.0);
        let alt = Tensor::from_fn(&[4, 1, 2, 2], |i| ((i / 4) % 2) as f64);
        assert_eq!(temporal_coherence(&alt).unwrap(), 1.0);
        assert!(matches!(
            temporal_coherence(&Tensor::zeros(&[1, 1, 2, 2])),
            Err(Error::InsufficientFrames(1))
        ));
    }

    #[test]
    fn too_few_clips() {
        let c = vec![Tensor::zeros(&[2, 1, 2, 2])];
        assert!(matches!(fit_gaussian_stats(&c, 0), Err(Error::InsufficientData(_))));
    }
}
