//! Deterministic tensor and linear-algebra substrate.

mod conv;
mod dpt;
mod eigen;
mod rng;
mod tensor;

pub use conv::{conv2d, conv2d_backward, conv_transpose2d, ConvGeom};
pub use dpt::{decode_dpt, dpt_bytes, encode_dpt, read_dpt, write_dpt, DPT_MAGIC};
pub(crate) use dpt::Cursor;
pub use eigen::{sym_eigendecomp, MAX_SWEEPS};
pub use rng::{gaussian_sample, Rng, RngState};
pub(crate) use tensor::{matmul_a_bt_acc, matmul_acc, matmul_at_b_acc};
pub use tensor::{quantize_f32, Tensor};

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub fn silu(x: f64) -> f64 {
    x * sigmoid(x)
}

/// `d/dx SiLU(x) = σ(x)(1 + x(1 − σ(x)))`.
#[inline]
pub fn silu_deriv(x: f64) -> f64 {
    let s = sigmoid(x);
    s * (1.0 + x * (1.0 - s))
}
