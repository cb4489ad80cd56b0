//! Direct 2-D cross-correlation with exact backward passes.
//!
//! The transposed convolution is the adjoint of [`conv2d`] with respect to its
//! input, so it reuses the input-gradient kernel; its own backward reuses the
//! forward and kernel-gradient kernels with the roles of input and output
//! exchanged.

use super::Tensor;
use crate::error::{Error, Result};

/// Shape bookkeeping for one `conv2d` call.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub batch: usize,
    pub in_ch: usize,
    pub in_h: usize,
    pub in_w: usize,
    pub out_ch: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeom {
    pub fn new(input: &[usize], kernel: &[usize], stride: usize, pad: usize) -> Result<Self> {
        let (&[batch, in_ch, in_h, in_w], &[out_ch, kc, kh, kw]) = (input, kernel) else {
            return Err(Error::InvalidShape(format!(
                "conv2d wants 4-D input and kernel, got {input:?} and {kernel:?}"
            )));
        };
        if kc != in_ch {
            return Err(Error::InvalidShape(format!(
                "kernel has {kc} input channels, input has {in_ch}"
            )));
        }
        if stride == 0 {
            return Err(Error::InvalidShape("stride must be >= 1".into()));
        }
        if kh == 0 || kw == 0 || kh > in_h + 2 * pad || kw > in_w + 2 * pad {
            return Err(Error::InvalidShape(format!(
                "kernel {kh}x{kw} does not fit {in_h}x{in_w} with pad {pad}"
            )));
        }
        Ok(ConvGeom {
            batch,
            in_ch,
            in_h,
            in_w,
            out_ch,
            kh,
            kw,
            stride,
            pad,
            out_h: (in_h + 2 * pad - kh) / stride + 1,
            out_w: (in_w + 2 * pad - kw) / stride + 1,
        })
    }

    pub fn input_shape(&self) -> [usize; 4] {
        [self.batch, self.in_ch, self.in_h, self.in_w]
    }

    pub fn kernel_shape(&self) -> [usize; 4] {
        [self.out_ch, self.in_ch, self.kh, self.kw]
    }

    pub fn output_shape(&self) -> [usize; 4] {
        [self.batch, self.out_ch, self.out_h, self.out_w]
    }

    pub fn input_len(&self) -> usize {
        self.batch * self.in_ch * self.in_h * self.in_w
    }

    pub fn kernel_len(&self) -> usize {
        self.out_ch * self.in_ch * self.kh * self.kw
    }

    pub fn output_len(&self) -> usize {
        self.batch * self.out_ch * self.out_h * self.out_w
    }

    /// Calls `f(input_index, kernel_index, output_index)` for every tap that
    /// lands inside the (unpadded) input.
    #[inline]
    fn for_each_tap(&self, mut f: impl FnMut(usize, usize, usize)) {
        let (ih, iw, pad) = (self.in_h as isize, self.in_w as isize, self.pad as isize);
        let clip = |origin: isize, k: usize, extent: isize| {
            let lo = (-origin).max(0) as usize;
            let hi = (extent - origin).clamp(0, k as isize) as usize;
            (lo, hi.max(lo))
        };
        for n in 0..self.batch {
            for o in 0..self.out_ch {
                for oy in 0..self.out_h {
                    let y0 = (oy * self.stride) as isize - pad;
                    let (ky_lo, ky_hi) = clip(y0, self.kh, ih);
                    for ox in 0..self.out_w {
                        let x0 = (ox * self.stride) as isize - pad;
                        let (kx_lo, kx_hi) = clip(x0, self.kw, iw);
                        let out_idx = ((n * self.out_ch + o) * self.out_h + oy) * self.out_w + ox;
                        for c in 0..self.in_ch {
                            for ky in ky_lo..ky_hi {
                                let y = (y0 + ky as isize) as usize;
                                let in_row = ((n * self.in_ch + c) * self.in_h + y) * self.in_w;
                                let k_row = ((o * self.in_ch + c) * self.kh + ky) * self.kw;
                                for kx in kx_lo..kx_hi {
                                    let x = (x0 + kx as isize) as usize;
                                    f(in_row + x, k_row + kx, out_idx);
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    pub fn forward(&self, input: &[f64], kernel: &[f64], out: &mut [f64]) {
        self.for_each_tap(|i, k, o| out[o] += input[i] * kernel[k]);
    }

    pub fn backward_input(&self, kernel: &[f64], grad_out: &[f64], grad_in: &mut [f64]) {
        self.for_each_tap(|i, k, o| grad_in[i] += grad_out[o] * kernel[k]);
    }

    pub fn backward_kernel(&self, input: &[f64], grad_out: &[f64], grad_kernel: &mut [f64]) {
        self.for_each_tap(|i, k, o| grad_kernel[k] += grad_out[o] * input[i]);
    }
}

/// Cross-correlation of `input [N,C,H,W]` with `kernel [F,C,kh,kw]`.
pub fn conv2d(input: &Tensor, kernel: &Tensor, stride: usize, pad: usize) -> Result<Tensor> {
    let g = ConvGeom::new(input.shape(), kernel.shape(), stride, pad)?;
    let mut out = vec![0.0; g.output_len()];
    g.forward(input.data(), kernel.data(), &mut out);
    Tensor::new(g.output_shape().to_vec(), out)
}

/// Gradients of `conv2d` with respect to input and kernel.
pub fn conv2d_backward(
    input: &Tensor,
    kernel: &Tensor,
    grad_out: &Tensor,
    stride: usize,
    pad: usize,
) -> Result<(Tensor, Tensor)> {
    let g = ConvGeom::new(input.shape(), kernel.shape(), stride, pad)?;
    grad_out.expect_shape(&g.output_shape(), "conv2d grad_out")?;
    let mut gi = vec![0.0; g.input_len()];
    let mut gk = vec![0.0; g.kernel_len()];
    g.backward_input(kernel.data(), grad_out.data(), &mut gi);
    g.backward_kernel(input.data(), grad_out.data(), &mut gk);
    Ok((
        Tensor::new(g.input_shape().to_vec(), gi)?,
        Tensor::new(g.kernel_shape().to_vec(), gk)?,
    ))
}

/// Transposed convolution: `input [N,F,h,w]`, `kernel [F,C,kh,kw]` (same
/// layout as the forward conv it inverts), output `[N,C,out_h,out_w]`.
pub fn conv_transpose2d(
    input: &Tensor,
    kernel: &Tensor,
    stride: usize,
    pad: usize,
    out_hw: (usize, usize),
) -> Result<Tensor> {
    let g = transpose_geom(input.shape(), kernel.shape(), stride, pad, out_hw)?;
    let mut out = vec![0.0; g.input_len()];
    g.backward_input(kernel.data(), input.data(), &mut out);
    Tensor::new(g.input_shape().to_vec(), out)
}

fn transpose_geom(
    input: &[usize],
    kernel: &[usize],
    stride: usize,
    pad: usize,
    (oh, ow): (usize, usize),
) -> Result<ConvGeom> {
    let (&[n, f, h, w], &[kf, c, _, _]) = (input, kernel) else {
        return Err(Error::InvalidShape(format!(
            "conv_transpose2d wants 4-D input and kernel, got {input:?} and {kernel:?}"
        )));
    };
    if kf != f {
        return Err(Error::InvalidShape(format!(
            "kernel has {kf} input maps, input has {f}"
        )));
    }
    let g = ConvGeom::new(&[n, c, oh, ow], &[f, c, kernel[2], kernel[3]], stride, pad)?;
    if g.out_h != h || g.out_w != w {
        return Err(Error::InvalidShape(format!(
            "output {oh}x{ow} does not map back onto {h}x{w}"
        )));
    }
    Ok(g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{gaussian_sample, Rng};

    #[test]
    fn ones_sum_to_nine() {
        let x = Tensor::full(&[1, 1, 3, 3], 1.0);
        let k = Tensor::full(&[1, 1, 3, 3], 1.0);
        let y = conv2d(&x, &k, 1, 0).unwrap();
        assert_eq!(y.shape(), &[1, 1, 1, 1]);
        assert_eq!(y.data(), &[9.0]);
    }

    #[test]
    fn identity_kernel_copies_input() {
        let x = gaussian_sample(&mut Rng::new(1), &[2, 1, 5, 4]).unwrap();
        let k = Tensor::full(&[1, 1, 1, 1], 1.0);
        assert_eq!(conv2d(&x, &k, 1, 0).unwrap(), x);
    }

    #[test]
    fn output_extent_formula() {
        let x = Tensor::zeros(&[1, 2, 16, 16]);
        let k = Tensor::zeros(&[3, 2, 3, 3]);
        let y = conv2d(&x, &k, 2, 1).unwrap();
        assert_eq!(y.shape(), &[1, 3, 8, 8]);
    }

    #[test]
    fn shape_errors() {
        let x = Tensor::zeros(&[1, 2, 4, 4]);
        assert!(conv2d(&x, &Tensor::zeros(&[1, 3, 2, 2]), 1, 0).is_err());
        assert!(conv2d(&x, &Tensor::zeros(&[1, 2, 7, 7]), 1, 1).is_err());
        assert!(conv2d(&x, &Tensor::zeros(&[1, 2, 2, 2]), 0, 0).is_err());
    }

    #[test]
    fn transpose_is_adjoint() {
        // <conv(x), y> == <x, conv_t(y)>
        let mut rng = Rng::new(11);
        let x = gaussian_sample(&mut rng, &[2, 3, 8, 8]).unwrap();
        let k = gaussian_sample(&mut rng, &[4, 3, 3, 3]).unwrap();
        let cx = conv2d(&x, &k, 2, 1).unwrap();
        let y = gaussian_sample(&mut rng, cx.shape()).unwrap();
        let ty = conv_transpose2d(&y, &k, 2, 1, (8, 8)).unwrap();
        let lhs: f64 = cx.data().iter().zip(y.data()).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.data().iter().zip(ty.data()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10 * lhs.abs().max(1.0));
    }
}
