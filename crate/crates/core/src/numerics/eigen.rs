use super::Tensor;
use crate::error::{Error, Result};

pub const MAX_SWEEPS: usize = 100;
const SYMMETRY_TOL: f64 = 1e-9;

/// Eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.
///
/// Returns eigenvalues in ascending order and the matching orthonormal
/// eigenvectors as the columns of a `[d, d]` tensor.
pub fn sym_eigendecomp(a: &Tensor) -> Result<(Tensor, Tensor)> {
    let d = match a.shape() {
        &[r, c] if r == c => r,
        s => return Err(Error::InvalidShape(format!("expected a square matrix, got {s:?}"))),
    };
    let src = a.data();
    let scale = src.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut asym = 0.0f64;
    for i in 0..d {
        for j in i + 1..d {
            asym = asym.max((src[i * d + j] - src[j * d + i]).abs());
        }
    }
    if asym > SYMMETRY_TOL * scale.max(1.0) {
        return Err(Error::NotSymmetric(asym));
    }

    // work on the symmetrized copy
    let mut m = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..d {
            m[i * d + j] = 0.5 * (src[i * d + j] + src[j * d + i]);
        }
    }
    let mut v = vec![0.0; d * d];
    for i in 0..d {
        v[i * d + i] = 1.0;
    }

    let frob2: f64 = m.iter().map(|x| x * x).sum();
    let mut sweep = 0;
    loop {
        let off: f64 = (0..d)
            .flat_map(|i| (0..d).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| m[i * d + j] * m[i * d + j])
            .sum();
        if off <= 1e-30 * frob2 {
            break;
        }
        if sweep == MAX_SWEEPS {
            return Err(Error::NoConvergence(MAX_SWEEPS));
        }
        sweep += 1;
        for p in 0..d {
            for q in p + 1..d {
                let apq = m[p * d + q];
                if apq == 0.0 {
                    continue;
                }
                let app = m[p * d + p];
                let aqq = m[q * d + q];
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                rotate(&mut m, &mut v, d, p, q, c, s);
            }
        }
    }

    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&i, &j| m[i * d + i].total_cmp(&m[j * d + j]));
    let values: Vec<f64> = order.iter().map(|&i| m[i * d + i]).collect();
    let mut vectors = vec![0.0; d * d];
    for (col, &src_col) in order.iter().enumerate() {
        for row in 0..d {
            vectors[row * d + col] = v[row * d + src_col];
        }
    }
    Ok((Tensor::new(vec![d], values)?, Tensor::new(vec![d, d], vectors)?))
}

/// Applies the Jacobi rotation `J(p, q, c, s)` as `m <- Jᵀ m J`, `v <- v J`.
fn rotate(m: &mut [f64], v: &mut [f64], d: usize, p: usize, q: usize, c: f64, s: f64) {
    for k in 0..d {
        let mkp = m[k * d + p];
        let mkq = m[k * d + q];
        m[k * d + p] = c * mkp - s * mkq;
        m[k * d + q] = s * mkp + c * mkq;
    }
    for k in 0..d {
        let mpk = m[p * d + k];
        let mqk = m[q * d + k];
        m[p * d + k] = c * mpk - s * mqk;
        m[q * d + k] = s * mpk + c * mqk;
    }
    for k in 0..d {
        let vkp = v[k * d + p];
        let vkq = v[k * d + q];
        v[k * d + p] = c * vkp - s * vkq;
        v[k * d + q] = s * vkp + c * vkq;
    }
}
