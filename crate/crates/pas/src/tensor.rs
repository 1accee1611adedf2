//! Dense tensors and the non-convolution primitives.
//!
//! Everything here is a pure function: inputs are borrowed, outputs are fresh
//! tensors, and nothing is mutated in place, so concurrent use is safe.
//! Images follow NCHW layout with row-major storage.
//!
//! All primitives are generic over [`Scalar`]. `f32` is the working precision;
//! `f64` is the verification mode used by gradient-oracle tests.

use crate::{Error, Result};

/// Scalar types the numeric stack is generic over.
pub trait Scalar:
    num_traits::Float
    + num_traits::FromPrimitive
    + num_traits::ToPrimitive
    + std::fmt::Debug
    + std::fmt::Display
    + std::iter::Sum
    + Default
    + Send
    + Sync
    + 'static
{
    fn from_f64_value(x: f64) -> Self;
    fn to_f64_value(self) -> f64;
}

impl Scalar for f32 {
    fn from_f64_value(x: f64) -> Self {
        x as f32
    }
    fn to_f64_value(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    fn from_f64_value(x: f64) -> Self {
        x
    }
    fn to_f64_value(self) -> f64 {
        self
    }
}

/// Dense N-dimensional array, row-major. Images are (batch, channel, height,
/// width).
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<S = f32> {
    shape: Vec<usize>,
    data: Vec<S>,
}

impl<S: Scalar> Tensor<S> {
    /// Builds a tensor from a shape and matching flat buffer.
    pub fn new(shape: Vec<usize>, data: Vec<S>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::invalid(format!(
                "shape {:?} implies {} elements but buffer holds {}",
                shape,
                expected,
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let len = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![S::zero(); len],
        }
    }

    pub fn filled(shape: &[usize], value: S) -> Self {
        let len = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; len],
        }
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> S) -> Self {
        let len = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: (0..len).map(&mut f).collect(),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[S] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [S] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<S> {
        self.data
    }

    /// Flat offset of (n, c, h, w) in a 4-D tensor.
    #[inline]
    pub fn idx4(&self, n: usize, c: usize, h: usize, w: usize) -> usize {
        debug_assert_eq!(self.shape.len(), 4);
        ((n * self.shape[1] + c) * self.shape[2] + h) * self.shape[3] + w
    }

    pub fn map(&self, f: impl Fn(S) -> S) -> Tensor<S> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    /// Element-wise combination of two same-shape tensors.
    pub fn zip(&self, other: &Tensor<S>, f: impl Fn(S, S) -> S) -> Result<Tensor<S>> {
        if self.shape != other.shape {
            return Err(Error::invalid(format!(
                "shape {:?} does not match shape {:?}",
                self.shape, other.shape
            )));
        }
        Ok(Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn add(&self, other: &Tensor<S>) -> Result<Tensor<S>> {
        self.zip(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Tensor<S>) -> Result<Tensor<S>> {
        self.zip(other, |a, b| a - b)
    }

    pub fn hadamard(&self, other: &Tensor<S>) -> Result<Tensor<S>> {
        self.zip(other, |a, b| a * b)
    }

    pub fn scale(&self, factor: S) -> Tensor<S> {
        self.map(|x| x * factor)
    }

    /// Flat inner product ⟨a, b⟩.
    pub fn dot(&self, other: &Tensor<S>) -> Result<S> {
        if self.shape != other.shape {
            return Err(Error::invalid(format!(
                "shape {:?} does not match shape {:?}",
                self.shape, other.shape
            )));
        }
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| a * b)
            .sum())
    }

    /// Flattened Euclidean norm.
    pub fn norm_l2(&self) -> S {
        self.data
            .iter()
            .map(|&x| x * x)
            .sum::<S>()
            .sqrt()
    }

    pub fn max_abs(&self) -> S {
        self.data
            .iter()
            .fold(S::zero(), |acc, &x| acc.max(x.abs()))
    }

    pub fn max_abs_diff(&self, other: &Tensor<S>) -> S {
        debug_assert_eq!(self.shape, other.shape);
        self.data
            .iter()
            .zip(&other.data)
            .fold(S::zero(), |acc, (&a, &b)| acc.max((a - b).abs()))
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Fails with [`Error::Numerical`] if any entry is NaN or infinite.
    pub fn check_finite(&self, context: &str) -> Result<()> {
        if self.all_finite() {
            Ok(())
        } else {
            Err(Error::Numerical(format!(
                "non-finite value in {context}"
            )))
        }
    }

    pub fn to_f64(&self) -> Tensor<f64> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|x| x.to_f64_value()).collect(),
        }
    }

    pub fn to_f32(&self) -> Tensor<f32> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|x| x.to_f64_value() as f32).collect(),
        }
    }
}

/// Element-wise sign with sign(0) = 0.
pub fn sign<S: Scalar>(input: &Tensor<S>) -> Tensor<S> {
    input.map(|x| {
        if x > S::zero() {
            S::one()
        } else if x < S::zero() {
            -S::one()
        } else {
            S::zero()
        }
    })
}

/// ReLU with its 0/1 mask of strictly positive entries.
pub fn relu_forward<S: Scalar>(input: &Tensor<S>) -> (Tensor<S>, Tensor<S>) {
    let output = input.map(|x| x.max(S::zero()));
    let mask = input.map(|x| if x > S::zero() { S::one() } else { S::zero() });
    (output, mask)
}

/// Affine map y = Wz + b. `input` is (N, D), `weight` is (C, D), `bias` is (C).
pub fn linear_forward<S: Scalar>(
    input: &Tensor<S>,
    weight: &Tensor<S>,
    bias: &Tensor<S>,
) -> Result<Tensor<S>> {
    let (n, d) = dims2(input, "linear input")?;
    let (c, dw) = dims2(weight, "linear weight")?;
    if dw != d {
        return Err(Error::invalid(format!(
            "linear weight expects input dimension {dw} but input has {d}"
        )));
    }
    if bias.shape() != [c] {
        return Err(Error::invalid(format!(
            "linear bias shape {:?} does not match {c} output units",
            bias.shape()
        )));
    }
    let mut out = vec![S::zero(); n * c];
    for i in 0..n {
        let row = &input.data[i * d..(i + 1) * d];
        for j in 0..c {
            let wrow = &weight.data[j * d..(j + 1) * d];
            let mut acc = bias.data[j];
            for k in 0..d {
                acc = acc + wrow[k] * row[k];
            }
            out[i * c + j] = acc;
        }
    }
    Tensor::new(vec![n, c], out)
}

/// Adjoints of [`linear_forward`]: gradients with respect to input, weight,
/// and bias.
pub fn linear_backward<S: Scalar>(
    grad_out: &Tensor<S>,
    input: &Tensor<S>,
    weight: &Tensor<S>,
) -> Result<(Tensor<S>, Tensor<S>, Tensor<S>)> {
    let (n, c) = dims2(grad_out, "linear grad")?;
    let (nin, d) = dims2(input, "linear input")?;
    let (cw, dw) = dims2(weight, "linear weight")?;
    if nin != n || cw != c || dw != d {
        return Err(Error::invalid(format!(
            "linear backward shapes inconsistent: grad {:?}, input {:?}, weight {:?}",
            grad_out.shape(),
            input.shape(),
            weight.shape()
        )));
    }
    let mut grad_input = vec![S::zero(); n * d];
    let mut grad_weight = vec![S::zero(); c * d];
    let mut grad_bias = vec![S::zero(); c];
    for i in 0..n {
        let grow = &grad_out.data[i * c..(i + 1) * c];
        let irow = &input.data[i * d..(i + 1) * d];
        for j in 0..c {
            let g = grow[j];
            grad_bias[j] = grad_bias[j] + g;
            let wrow = &weight.data[j * d..(j + 1) * d];
            let gw = &mut grad_weight[j * d..(j + 1) * d];
            let gi = &mut grad_input[i * d..(i + 1) * d];
            for k in 0..d {
                gi[k] = gi[k] + g * wrow[k];
                gw[k] = gw[k] + g * irow[k];
            }
        }
    }
    Ok((
        Tensor::new(vec![n, d], grad_input)?,
        Tensor::new(vec![c, d], grad_weight)?,
        Tensor::new(vec![c], grad_bias)?,
    ))
}

/// Spatial mean over H and W: (N, C, H, W) → (N, C).
pub fn global_avg_pool_forward<S: Scalar>(input: &Tensor<S>) -> Result<Tensor<S>> {
    let [n, c, h, w] = dims4(input, "pool input")?;
    let area = S::from_usize(h * w).unwrap();
    let mut out = vec![S::zero(); n * c];
    for i in 0..n {
        for j in 0..c {
            let base = (i * c + j) * h * w;
            let sum: S = input.data[base..base + h * w].iter().copied().sum();
            out[i * c + j] = sum / area;
        }
    }
    Tensor::new(vec![n, c], out)
}

/// Adjoint of [`global_avg_pool_forward`]: spreads each channel gradient
/// uniformly over its spatial extent.
pub fn global_avg_pool_backward<S: Scalar>(
    grad_out: &Tensor<S>,
    input_shape: &[usize],
) -> Result<Tensor<S>> {
    if input_shape.len() != 4 {
        return Err(Error::invalid(format!(
            "pool backward expects 4-D input shape, got {input_shape:?}"
        )));
    }
    let (n, c, h, w) = (
        input_shape[0],
        input_shape[1],
        input_shape[2],
        input_shape[3],
    );
    if grad_out.shape() != [n, c] {
        return Err(Error::invalid(format!(
            "pool grad shape {:?} does not match (N, C) = ({n}, {c})",
            grad_out.shape()
        )));
    }
    let area = S::from_usize(h * w).unwrap();
    let mut out = vec![S::zero(); n * c * h * w];
    for i in 0..n {
        for j in 0..c {
            let g = grad_out.data[i * c + j] / area;
            let base = (i * c + j) * h * w;
            for v in &mut out[base..base + h * w] {
                *v = g;
            }
        }
    }
    Tensor::new(input_shape.to_vec(), out)
}

/// Mean softmax cross-entropy over a batch, with the gradient of the loss
/// with respect to the logits: (softmax − onehot) / N.
pub fn softmax_cross_entropy<S: Scalar>(
    logits: &Tensor<S>,
    labels: &[usize],
) -> Result<(S, Tensor<S>)> {
    let (n, c) = dims2(logits, "logits")?;
    if labels.len() != n {
        return Err(Error::invalid(format!(
            "{} labels for a batch of {n} logits rows",
            labels.len()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= c) {
        return Err(Error::invalid(format!(
            "label {bad} out of range for {c} classes"
        )));
    }
    let inv_n = S::one() / S::from_usize(n).unwrap();
    let mut grad = vec![S::zero(); n * c];
    let mut loss = S::zero();
    for i in 0..n {
        let row = &logits.data[i * c..(i + 1) * c];
        let max = row.iter().fold(S::neg_infinity(), |a, &b| a.max(b));
        let mut denom = S::zero();
        for &x in row {
            denom = denom + (x - max).exp();
        }
        let log_denom = denom.ln() + max;
        loss = loss + (log_denom - row[labels[i]]);
        let grow = &mut grad[i * c..(i + 1) * c];
        for (j, &x) in row.iter().enumerate() {
            let p = (x - max).exp() / denom;
            grow[j] = p * inv_n;
        }
        grow[labels[i]] = grow[labels[i]] - inv_n;
    }
    Ok((loss * inv_n, Tensor::new(vec![n, c], grad)?))
}

/// Row-wise argmax with ties broken by the lowest class index.
pub fn argmax_rows<S: Scalar>(logits: &Tensor<S>) -> Result<Vec<usize>> {
    let (n, c) = dims2(logits, "logits")?;
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let row = &logits.data[i * c..(i + 1) * c];
        let mut best = 0usize;
        for (j, &x) in row.iter().enumerate().skip(1) {
            if x > row[best] {
                best = j;
            }
        }
        out.push(best);
    }
    Ok(out)
}

pub(crate) fn dims2<S: Scalar>(t: &Tensor<S>, what: &str) -> Result<(usize, usize)> {
    match t.shape() {
        [a, b] => Ok((*a, *b)),
        other => Err(Error::invalid(format!(
            "{what} must be 2-D, got shape {other:?}"
        ))),
    }
}

pub(crate) fn dims4<S: Scalar>(t: &Tensor<S>, what: &str) -> Result<[usize; 4]> {
    match t.shape() {
        [a, b, c, d] => Ok([*a, *b, *c, *d]),
        other => Err(Error::invalid(format!(
            "{what} must be 4-D, got shape {other:?}"
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn randn(shape: &[usize], rng: &mut StdRng) -> Tensor<f64> {
        Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
    }

    #[test]
    fn new_rejects_mismatched_buffer() {
        assert!(Tensor::new(vec![2, 3], vec![0.0f32; 5]).is_err());
        assert!(Tensor::new(vec![2, 3], vec![0.0f32; 6]).is_ok());
    }

    #[test]
    fn sign_matches_definition() {
        let t = Tensor::new(vec![3], vec![-3.0f32, 0.0, 0.5]).unwrap();
        assert_eq!(sign(&t).data(), &[-1.0, 0.0, 1.0]);
    }

    #[test]
    fn sign_is_idempotent() {
        let mut rng = StdRng::seed_from_u64(11);
        let t = randn(&[64], &mut rng);
        let s = sign(&t);
        assert_eq!(sign(&s), s);
    }

    #[test]
    fn sign_matches_elementwise_oracle() {
        let mut rng = StdRng::seed_from_u64(12);
        let t = randn(&[100], &mut rng);
        let s = sign(&t);
        for (&x, &y) in t.data().iter().zip(s.data()) {
            let expect = if x > 0.0 {
                1.0
            } else if x < 0.0 {
                -1.0
            } else {
                0.0
            };
            assert_eq!(y, expect);
        }
    }

    #[test]
    fn relu_basic() {
        let t = Tensor::new(vec![3], vec![-1.0f32, 0.0, 2.0]).unwrap();
        let (out, mask) = relu_forward(&t);
        assert_eq!(out.data(), &[0.0, 0.0, 2.0]);
        assert_eq!(mask.data(), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn relu_all_negative() {
        let t = Tensor::filled(&[2, 2], -3.0f32);
        let (out, mask) = relu_forward(&t);
        assert!(out.data().iter().all(|&x| x == 0.0));
        assert!(mask.data().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn relu_output_is_input_times_mask() {
        let mut rng = StdRng::seed_from_u64(13);
        let t = randn(&[128], &mut rng);
        let (out, mask) = relu_forward(&t);
        let prod = t.hadamard(&mask).unwrap();
        assert_eq!(out, prod);
    }

    #[test]
    fn softmax_ce_uniform_logits() {
        let logits = Tensor::zeros(&[4, 10]);
        let (loss, _) = softmax_cross_entropy::<f64>(&logits, &[0, 3, 5, 9]).unwrap();
        assert!((loss - 10.0f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn softmax_ce_confident_correct_logit() {
        let mut logits = Tensor::zeros(&[1, 10]);
        logits.data_mut()[3] = 50.0f64;
        let (loss, grad) = softmax_cross_entropy(&logits, &[3]).unwrap();
        assert!(loss < 1e-12);
        assert!(grad.max_abs() < 1e-12);
    }

    #[test]
    fn softmax_ce_rejects_out_of_range_label() {
        let logits = Tensor::zeros(&[1, 10]);
        assert!(matches!(
            softmax_cross_entropy::<f32>(&logits, &[10]),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn softmax_ce_grad_matches_finite_differences() {
        let mut rng = StdRng::seed_from_u64(14);
        let logits = randn(&[3, 5], &mut rng);
        let labels = [1usize, 4, 0];
        let (_, grad) = softmax_cross_entropy(&logits, &labels).unwrap();
        let h = 1e-6;
        for idx in 0..logits.len() {
            let mut plus = logits.clone();
            plus.data_mut()[idx] += h;
            let mut minus = logits.clone();
            minus.data_mut()[idx] -= h;
            let (lp, _) = softmax_cross_entropy(&plus, &labels).unwrap();
            let (lm, _) = softmax_cross_entropy(&minus, &labels).unwrap();
            let fd = (lp - lm) / (2.0 * h);
            let g = grad.data()[idx];
            let denom = fd.abs().max(1e-3);
            assert!(
                ((g - fd) / denom).abs() < 1e-6,
                "grad {g} vs fd {fd} at {idx}"
            );
        }
    }

    #[test]
    fn linear_identity_passthrough() {
        // W = I, b = 0 leaves the input unchanged.
        let input = Tensor::new(vec![2, 3], vec![1.0f64, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let weight = Tensor::from_fn(&[3, 3], |i| if i % 4 == 0 { 1.0 } else { 0.0 });
        let bias = Tensor::zeros(&[3]);
        let out = linear_forward(&input, &weight, &bias).unwrap();
        assert_eq!(out, input);
    }

    #[test]
    fn linear_adjoint_identity() {
        let mut rng = StdRng::seed_from_u64(15);
        let input = randn(&[4, 6], &mut rng);
        let weight = randn(&[3, 6], &mut rng);
        let bias = randn(&[3], &mut rng);
        let grad = randn(&[4, 3], &mut rng);
        let out = linear_forward(&input, &weight, &bias).unwrap();
        let zero_bias_out = linear_forward(&input, &weight, &Tensor::zeros(&[3])).unwrap();
        let (gi, gw, gb) = linear_backward(&grad, &input, &weight).unwrap();
        // ⟨Wz, g⟩ == ⟨z, Wᵀg⟩ and == ⟨W, g zᵀ⟩
        let lhs = zero_bias_out.dot(&grad).unwrap();
        assert!((lhs - input.dot(&gi).unwrap()).abs() < 1e-10);
        assert!((lhs - weight.dot(&gw).unwrap()).abs() < 1e-10);
        // bias adjoint: ⟨b·1, g⟩ == ⟨b, Σ_n g⟩
        let with_bias = out.dot(&grad).unwrap();
        assert!((with_bias - lhs - bias.dot(&gb).unwrap()).abs() < 1e-10);
    }

    #[test]
    fn linear_backward_matches_finite_differences() {
        let mut rng = StdRng::seed_from_u64(16);
        let input = randn(&[2, 4], &mut rng);
        let weight = randn(&[3, 4], &mut rng);
        let bias = randn(&[3], &mut rng);
        let grad = randn(&[2, 3], &mut rng);
        let (gi, _, _) = linear_backward(&grad, &input, &weight).unwrap();
        let h = 1e-6;
        for idx in 0..input.len() {
            let mut plus = input.clone();
            plus.data_mut()[idx] += h;
            let mut minus = input.clone();
            minus.data_mut()[idx] -= h;
            let fp = linear_forward(&plus, &weight, &bias)
                .unwrap()
                .dot(&grad)
                .unwrap();
            let fm = linear_forward(&minus, &weight, &bias)
                .unwrap()
                .dot(&grad)
                .unwrap();
            let fd = (fp - fm) / (2.0 * h);
            let denom = fd.abs().max(1e-3);
            assert!(((gi.data()[idx] - fd) / denom).abs() < 1e-6);
        }
    }

    #[test]
    fn global_avg_pool_forward_and_adjoint() {
        let mut rng = StdRng::seed_from_u64(17);
        let input = randn(&[2, 3, 4, 4], &mut rng);
        let out = global_avg_pool_forward(&input).unwrap();
        assert_eq!(out.shape(), &[2, 3]);
        // hand check one cell
        let mut sum = 0.0;
        for h in 0..4 {
            for w in 0..4 {
                sum += input.data()[input.idx4(1, 2, h, w)];
            }
        }
        assert!((out.data()[1 * 3 + 2] - sum / 16.0).abs() < 1e-12);

        let grad = randn(&[2, 3], &mut rng);
        let gi = global_avg_pool_backward(&grad, input.shape()).unwrap();
        let lhs = out.dot(&grad).unwrap();
        let rhs = input.dot(&gi).unwrap();
        assert!((lhs - rhs).abs() < 1e-10);
    }

    #[test]
    fn argmax_breaks_ties_low() {
        let logits = Tensor::new(vec![2, 3], vec![1.0f32, 1.0, 0.0, 0.0, 2.0, 2.0]).unwrap();
        assert_eq!(argmax_rows(&logits).unwrap(), vec![0, 1]);
    }
}
