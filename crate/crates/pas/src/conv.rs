//! 2-D convolution (cross-correlation) and its exact adjoints.
//!
//! The forward pass lowers each image to a column matrix (im2col) and runs a
//! small GEMM; the adjoints invert that lowering. Kernels are never flipped:
//! the forward/backward pair is consistent cross-correlation throughout.

use crate::tensor::{dims4, Scalar, Tensor};
use crate::{Error, Result};
use serde::{Deserialize, Serialize};

/// Geometry of one convolution: channel counts, kernel size, stride, and
/// symmetric zero padding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride: usize,
    pub padding: usize,
}

impl ConvSpec {
    /// Square-kernel constructor used by the desk architectures.
    pub fn square(in_channels: usize, out_channels: usize, kernel: usize, stride: usize, padding: usize) -> Self {
        ConvSpec {
            in_channels,
            out_channels,
            kernel_h: kernel,
            kernel_w: kernel,
            stride,
            padding,
        }
    }

    /// Output spatial size for an input of (h, w); errors if any output
    /// dimension would collapse below 1.
    pub fn output_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        if self.stride == 0 {
            return Err(Error::invalid("stride must be positive"));
        }
        let oh = out_dim(h, self.padding, self.kernel_h, self.stride)?;
        let ow = out_dim(w, self.padding, self.kernel_w, self.stride)?;
        Ok((oh, ow))
    }

    pub fn kernel_shape(&self) -> [usize; 4] {
        [self.out_channels, self.in_channels, self.kernel_h, self.kernel_w]
    }
}

fn out_dim(input: usize, pad: usize, kernel: usize, stride: usize) -> Result<usize> {
    let padded = input + 2 * pad;
    if padded < kernel {
        return Err(Error::invalid(format!(
            "kernel extent {kernel} exceeds padded input extent {padded}"
        )));
    }
    Ok((padded - kernel) / stride + 1)
}

fn check_kernel<S: Scalar>(kernel: &Tensor<S>, spec: &ConvSpec) -> Result<()> {
    let shape = kernel.shape();
    if shape != spec.kernel_shape() {
        return Err(Error::invalid(format!(
            "kernel shape {:?} does not match spec shape {:?}",
            shape,
            spec.kernel_shape()
        )));
    }
    Ok(())
}

/// Lowers one image (C, H, W) into a (C·KH·KW) × (OH·OW) column matrix.
fn im2col<S: Scalar>(
    image: &[S],
    c: usize,
    h: usize,
    w: usize,
    spec: &ConvSpec,
    oh: usize,
    ow: usize,
    col: &mut [S],
) {
    let (kh, kw) = (spec.kernel_h, spec.kernel_w);
    let (stride, pad) = (spec.stride, spec.padding);
    let cols = oh * ow;
    for ci in 0..c {
        for ky in 0..kh {
            for kx in 0..kw {
                let row = ((ci * kh) + ky) * kw + kx;
                let out_row = &mut col[row * cols..(row + 1) * cols];
                for oy in 0..oh {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        for v in &mut out_row[oy * ow..(oy + 1) * ow] {
                            *v = S::zero();
                        }
                        continue;
                    }
                    let src = &image[(ci * h + iy as usize) * w..(ci * h + iy as usize + 1) * w];
                    for ox in 0..ow {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        out_row[oy * ow + ox] = if ix < 0 || ix >= w as isize {
                            S::zero()
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Scatters a column matrix back into an image, accumulating overlaps.
fn col2im<S: Scalar>(
    col: &[S],
    c: usize,
    h: usize,
    w: usize,
    spec: &ConvSpec,
    oh: usize,
    ow: usize,
    image: &mut [S],
) {
    let (kh, kw) = (spec.kernel_h, spec.kernel_w);
    let (stride, pad) = (spec.stride, spec.padding);
    let cols = oh * ow;
    for ci in 0..c {
        for ky in 0..kh {
            for kx in 0..kw {
                let row = ((ci * kh) + ky) * kw + kx;
                let col_row = &col[row * cols..(row + 1) * cols];
                for oy in 0..oh {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let dst =
                        &mut image[(ci * h + iy as usize) * w..(ci * h + iy as usize + 1) * w];
                    for ox in 0..ow {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        if ix >= 0 && ix < w as isize {
                            dst[ix as usize] = dst[ix as usize] + col_row[oy * ow + ox];
                        }
                    }
                }
            }
        }
    }
}

/// C[m×n] += A[m×k] · B[k×n]
fn matmul_acc<S: Scalar>(a: &[S], b: &[S], c: &mut [S], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let crow = &mut c[i * n..(i + 1) * n];
        for (l, &av) in arow.iter().enumerate() {
            if av == S::zero() {
                continue;
            }
            let brow = &b[l * n..(l + 1) * n];
            for (cv, &bv) in crow.iter_mut().zip(brow) {
                *cv = *cv + av * bv;
            }
        }
    }
}

/// C[m×n] += Aᵀ(A is k×m) · B[k×n]
fn matmul_at_acc<S: Scalar>(a: &[S], b: &[S], c: &mut [S], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), k * m);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    for l in 0..k {
        let arow = &a[l * m..(l + 1) * m];
        let brow = &b[l * n..(l + 1) * n];
        for (i, &av) in arow.iter().enumerate() {
            if av == S::zero() {
                continue;
            }
            let crow = &mut c[i * n..(i + 1) * n];
            for (cv, &bv) in crow.iter_mut().zip(brow) {
                *cv = *cv + av * bv;
            }
        }
    }
}

/// C[m×n] += A[m×k] · Bᵀ (B is n×k)
fn matmul_bt_acc<S: Scalar>(a: &[S], b: &[S], c: &mut [S], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    debug_assert_eq!(c.len(), m * n);
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let crow = &mut c[i * n..(i + 1) * n];
        for (j, cv) in crow.iter_mut().enumerate() {
            let brow = &b[j * k..(j + 1) * k];
            let mut acc = S::zero();
            for (&av, &bv) in arow.iter().zip(brow) {
                acc = acc + av * bv;
            }
            *cv = *cv + acc;
        }
    }
}

/// Cross-correlation of an NCHW input with an OIHW kernel under `spec`.
/// Linear in both arguments.
pub fn conv2d_forward<S: Scalar>(
    input: &Tensor<S>,
    kernel: &Tensor<S>,
    spec: &ConvSpec,
) -> Result<Tensor<S>> {
    let [n, c, h, w] = dims4(input, "conv input")?;
    check_kernel(kernel, spec)?;
    if c != spec.in_channels {
        return Err(Error::invalid(format!(
            "input channel dimension {c} does not match spec in_channels {}",
            spec.in_channels
        )));
    }
    let (oh, ow) = spec.output_hw(h, w)?;
    let o = spec.out_channels;
    let krows = c * spec.kernel_h * spec.kernel_w;
    let cols = oh * ow;
    let mut col = vec![S::zero(); krows * cols];
    let mut out = vec![S::zero(); n * o * oh * ow];
    for i in 0..n {
        let image = &input.data()[i * c * h * w..(i + 1) * c * h * w];
        im2col(image, c, h, w, spec, oh, ow, &mut col);
        let dst = &mut out[i * o * cols..(i + 1) * o * cols];
        matmul_acc(kernel.data(), &col, dst, o, krows, cols);
    }
    Tensor::new(vec![n, o, oh, ow], out)
}

/// Gradient of [`conv2d_forward`] with respect to its input: the exact
/// adjoint (a transposed convolution).
pub fn conv2d_backward_input<S: Scalar>(
    grad_out: &Tensor<S>,
    kernel: &Tensor<S>,
    spec: &ConvSpec,
    input_shape: &[usize],
) -> Result<Tensor<S>> {
    let [n, o, oh, ow] = dims4(grad_out, "conv grad")?;
    check_kernel(kernel, spec)?;
    if input_shape.len() != 4 {
        return Err(Error::invalid(format!(
            "input shape must be 4-D, got {input_shape:?}"
        )));
    }
    let (c, h, w) = (input_shape[1], input_shape[2], input_shape[3]);
    if input_shape[0] != n {
        return Err(Error::invalid(format!(
            "grad batch dimension {n} does not match input batch {}",
            input_shape[0]
        )));
    }
    if o != spec.out_channels || c != spec.in_channels {
        return Err(Error::invalid(format!(
            "channel dimensions (out {o}, in {c}) do not match spec ({}, {})",
            spec.out_channels, spec.in_channels
        )));
    }
    let (eh, ew) = spec.output_hw(h, w)?;
    if (eh, ew) != (oh, ow) {
        return Err(Error::invalid(format!(
            "grad spatial dimensions ({oh}, {ow}) do not match expected ({eh}, {ew})"
        )));
    }
    let krows = c * spec.kernel_h * spec.kernel_w;
    let cols = oh * ow;
    let mut col = vec![S::zero(); krows * cols];
    let mut out = vec![S::zero(); n * c * h * w];
    for i in 0..n {
        let g = &grad_out.data()[i * o * cols..(i + 1) * o * cols];
        col.iter_mut().for_each(|v| *v = S::zero());
        matmul_at_acc(kernel.data(), g, &mut col, krows, o, cols);
        let image = &mut out[i * c * h * w..(i + 1) * c * h * w];
        col2im(&col, c, h, w, spec, oh, ow, image);
    }
    Tensor::new(input_shape.to_vec(), out)
}

/// Gradient of [`conv2d_forward`] with respect to its kernel.
pub fn conv2d_backward_kernel<S: Scalar>(
    grad_out: &Tensor<S>,
    input: &Tensor<S>,
    spec: &ConvSpec,
) -> Result<Tensor<S>> {
    let [n, o, oh, ow] = dims4(grad_out, "conv grad")?;
    let [ni, c, h, w] = dims4(input, "conv input")?;
    if ni != n {
        return Err(Error::invalid(format!(
            "grad batch dimension {n} does not match input batch {ni}"
        )));
    }
    if o != spec.out_channels || c != spec.in_channels {
        return Err(Error::invalid(format!(
            "channel dimensions (out {o}, in {c}) do not match spec ({}, {})",
            spec.out_channels, spec.in_channels
        )));
    }
    let (eh, ew) = spec.output_hw(h, w)?;
    if (eh, ew) != (oh, ow) {
        return Err(Error::invalid(format!(
            "grad spatial dimensions ({oh}, {ow}) do not match expected ({eh}, {ew})"
        )));
    }
    let krows = c * spec.kernel_h * spec.kernel_w;
    let cols = oh * ow;
    let mut col = vec![S::zero(); krows * cols];
    let mut gk = vec![S::zero(); o * krows];
    for i in 0..n {
        let image = &input.data()[i * c * h * w..(i + 1) * c * h * w];
        im2col(image, c, h, w, spec, oh, ow, &mut col);
        let g = &grad_out.data()[i * o * cols..(i + 1) * o * cols];
        matmul_bt_acc(g, &col, &mut gk, o, cols, krows);
    }
    Tensor::new(spec.kernel_shape().to_vec(), gk)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn randn<S: Scalar>(shape: &[usize], rng: &mut StdRng) -> Tensor<S> {
        Tensor::from_fn(shape, |_| S::from_f64_value(rng.gen_range(-1.0..1.0)))
    }

    /// Direct six-nested-loop convolution, independent of the im2col path.
    fn naive_conv2d<S: Scalar>(input: &Tensor<S>, kernel: &Tensor<S>, spec: &ConvSpec) -> Tensor<S> {
        let [n, c, h, w] = [
            input.shape()[0],
            input.shape()[1],
            input.shape()[2],
            input.shape()[3],
        ];
        let (oh, ow) = spec.output_hw(h, w).unwrap();
        let o = spec.out_channels;
        let mut out = Tensor::zeros(&[n, o, oh, ow]);
        for ni in 0..n {
            for oi in 0..o {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut acc = S::zero();
                        for ci in 0..c {
                            for ky in 0..spec.kernel_h {
                                for kx in 0..spec.kernel_w {
                                    let iy = (oy * spec.stride + ky) as isize - spec.padding as isize;
                                    let ix = (ox * spec.stride + kx) as isize - spec.padding as isize;
                                    if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                        continue;
                                    }
                                    let iv = input.data()[input.idx4(ni, ci, iy as usize, ix as usize)];
                                    let kv = kernel.data()
                                        [((oi * c + ci) * spec.kernel_h + ky) * spec.kernel_w + kx];
                                    acc = acc + iv * kv;
                                }
                            }
                        }
                        let idx = out.idx4(ni, oi, oy, ox);
                        out.data_mut()[idx] = acc;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn scalar_kernel_doubles_input() {
        let input = Tensor::filled(&[1, 1, 3, 3], 1.0f32);
        let kernel = Tensor::filled(&[1, 1, 1, 1], 2.0f32);
        let spec = ConvSpec::square(1, 1, 1, 1, 0);
        let out = conv2d_forward(&input, &kernel, &spec).unwrap();
        assert_eq!(out.shape(), &[1, 1, 3, 3]);
        assert!(out.data().iter().all(|&x| x == 2.0));
    }

    #[test]
    fn forward_matches_naive_loop_oracle() {
        let mut rng = StdRng::seed_from_u64(21);
        let spec = ConvSpec::square(3, 4, 3, 2, 1);
        let input: Tensor<f32> = randn(&[2, 3, 8, 8], &mut rng);
        let kernel = randn(&[4, 3, 3, 3], &mut rng);
        let fast = conv2d_forward(&input, &kernel, &spec).unwrap();
        let slow = naive_conv2d(&input, &kernel, &spec);
        assert!(fast.max_abs_diff(&slow) < 1e-5);
    }

    #[test]
    fn forward_is_distributive_in_kernel() {
        let mut rng = StdRng::seed_from_u64(22);
        let spec = ConvSpec::square(2, 3, 3, 1, 1);
        let z: Tensor<f32> = randn(&[1, 2, 6, 6], &mut rng);
        let k = randn(&[3, 2, 3, 3], &mut rng);
        let i = crate::reparam::make_skip_kernel::<f32>(&spec).unwrap();
        let k_minus_i = k.sub(&i).unwrap();
        let whole = conv2d_forward(&z, &k, &spec).unwrap();
        let parts = conv2d_forward(&z, &i, &spec)
            .unwrap()
            .add(&conv2d_forward(&z, &k_minus_i, &spec).unwrap())
            .unwrap();
        assert!(whole.max_abs_diff(&parts) < 1e-5);
    }

    #[test]
    fn forward_is_linear_in_kernel() {
        let mut rng = StdRng::seed_from_u64(23);
        let spec = ConvSpec::square(2, 2, 3, 1, 1);
        let z: Tensor<f32> = randn(&[1, 2, 5, 5], &mut rng);
        let k1 = randn(&[2, 2, 3, 3], &mut rng);
        let k2 = randn(&[2, 2, 3, 3], &mut rng);
        let (a, b) = (0.7f32, -1.3f32);
        let combined = k1.scale(a).add(&k2.scale(b)).unwrap();
        let lhs = conv2d_forward(&z, &combined, &spec).unwrap();
        let rhs = conv2d_forward(&z, &k1, &spec)
            .unwrap()
            .scale(a)
            .add(&conv2d_forward(&z, &k2, &spec).unwrap().scale(b))
            .unwrap();
        assert!(lhs.max_abs_diff(&rhs) < 1e-5);
    }

    #[test]
    fn backward_input_identity_kernel_passes_grad_through() {
        let mut rng = StdRng::seed_from_u64(24);
        let spec = ConvSpec::square(1, 1, 1, 1, 0);
        let kernel = Tensor::filled(&[1, 1, 1, 1], 1.0f32);
        let grad: Tensor<f32> = randn(&[2, 1, 4, 4], &mut rng);
        let gi = conv2d_backward_input(&grad, &kernel, &spec, &[2, 1, 4, 4]).unwrap();
        assert_eq!(gi, grad);
    }

    #[test]
    fn backward_input_satisfies_adjoint_identity() {
        let mut rng = StdRng::seed_from_u64(25);
        let spec = ConvSpec::square(3, 4, 3, 2, 1);
        let x: Tensor<f64> = randn(&[2, 3, 8, 8], &mut rng);
        let k = randn(&[4, 3, 3, 3], &mut rng);
        let y = conv2d_forward(&x, &k, &spec).unwrap();
        let g: Tensor<f64> = randn(y.shape(), &mut rng);
        let gx = conv2d_backward_input(&g, &k, &spec, x.shape()).unwrap();
        let lhs = y.dot(&g).unwrap();
        let rhs = x.dot(&gx).unwrap();
        assert!((lhs - rhs).abs() < 1e-10 * lhs.abs().max(1.0));
    }

    #[test]
    fn backward_kernel_zero_grad_gives_zero() {
        let spec = ConvSpec::square(2, 2, 3, 1, 1);
        let input = Tensor::filled(&[1, 2, 5, 5], 0.5f32);
        let grad = Tensor::zeros(&[1, 2, 5, 5]);
        let gk = conv2d_backward_kernel(&grad, &input, &spec).unwrap();
        assert!(gk.data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn backward_kernel_satisfies_adjoint_identity() {
        let mut rng = StdRng::seed_from_u64(26);
        let spec = ConvSpec::square(3, 2, 3, 1, 1);
        let x: Tensor<f64> = randn(&[2, 3, 6, 6], &mut rng);
        let k = randn(&[2, 3, 3, 3], &mut rng);
        let y = conv2d_forward(&x, &k, &spec).unwrap();
        let g: Tensor<f64> = randn(y.shape(), &mut rng);
        let gk = conv2d_backward_kernel(&g, &x, &spec).unwrap();
        let lhs = y.dot(&g).unwrap();
        let rhs = k.dot(&gk).unwrap();
        assert!((lhs - rhs).abs() < 1e-10 * lhs.abs().max(1.0));
    }

    #[test]
    fn backward_input_matches_finite_differences() {
        let mut rng = StdRng::seed_from_u64(27);
        let spec = ConvSpec::square(2, 3, 3, 2, 1);
        let x: Tensor<f64> = randn(&[1, 2, 6, 6], &mut rng);
        let k: Tensor<f64> = randn(&[3, 2, 3, 3], &mut rng);
        let y = conv2d_forward(&x, &k, &spec).unwrap();
        let g: Tensor<f64> = randn(y.shape(), &mut rng);
        let gx = conv2d_backward_input(&g, &k, &spec, x.shape()).unwrap();
        let h = 1e-6;
        let mut checked = 0;
        for idx in (0..x.len()).step_by(3) {
            let mut plus = x.clone();
            plus.data_mut()[idx] += h;
            let mut minus = x.clone();
            minus.data_mut()[idx] -= h;
            let fp = conv2d_forward(&plus, &k, &spec).unwrap().dot(&g).unwrap();
            let fm = conv2d_forward(&minus, &k, &spec).unwrap().dot(&g).unwrap();
            let fd = (fp - fm) / (2.0 * h);
            let denom = fd.abs().max(1e-3);
            assert!(((gx.data()[idx] - fd) / denom).abs() < 1e-6);
            checked += 1;
        }
        assert!(checked >= 20);
    }

    #[test]
    fn backward_kernel_matches_finite_differences() {
        let mut rng = StdRng::seed_from_u64(28);
        let spec = ConvSpec::square(2, 2, 3, 1, 1);
        let x: Tensor<f64> = randn(&[1, 2, 5, 5], &mut rng);
        let k: Tensor<f64> = randn(&[2, 2, 3, 3], &mut rng);
        let y = conv2d_forward(&x, &k, &spec).unwrap();
        let g: Tensor<f64> = randn(y.shape(), &mut rng);
        let gk = conv2d_backward_kernel(&g, &x, &spec).unwrap();
        let h = 1e-6;
        for idx in 0..k.len() {
            let mut plus = k.clone();
            plus.data_mut()[idx] += h;
            let mut minus = k.clone();
            minus.data_mut()[idx] -= h;
            let fp = conv2d_forward(&x, &plus, &spec).unwrap().dot(&g).unwrap();
            let fm = conv2d_forward(&x, &minus, &spec).unwrap().dot(&g).unwrap();
            let fd = (fp - fm) / (2.0 * h);
            let denom = fd.abs().max(1e-3);
            assert!(((gk.data()[idx] - fd) / denom).abs() < 1e-6);
        }
    }

    #[test]
    fn shape_mismatch_names_offending_dimension() {
        let input = Tensor::zeros(&[1, 3, 8, 8]);
        let kernel = Tensor::zeros(&[4, 2, 3, 3]);
        let spec = ConvSpec::square(2, 4, 3, 1, 1);
        let err = conv2d_forward::<f32>(&input, &kernel, &spec).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("channel"), "unexpected message: {msg}");
    }

    #[test]
    fn degenerate_output_extent_is_rejected() {
        let spec = ConvSpec::square(1, 1, 5, 1, 0);
        let input = Tensor::zeros(&[1, 1, 3, 3]);
        let kernel = Tensor::zeros(&[1, 1, 5, 5]);
        assert!(conv2d_forward::<f32>(&input, &kernel, &spec).is_err());
    }
}
