//! Forward and backward kernels for the individual layer types.
//!
//! Spatial tensors are `[channels, height, width]`. Convolutions use "same"
//! zero padding of `(k-1)/2` and are computed through an im2col buffer with
//! rows indexed by `(channel, ky, kx)` and columns by output pixel.

use rand::RngCore;
use rand::Rng;

use crate::nn::{NnError, Result, Tensor};
use crate::scalar::{axpy, dot, Scalar};

/// Negative-side slope of the leaky ReLU.
pub const LEAKY_SLOPE: f64 = 0.01;

/// Floor applied to the labeled probability before taking the log.
pub const PROB_FLOOR: f64 = 1e-12;

/// `M` filters of size `C×k×k` plus one bias per output channel.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer<T> {
    pub filters: Tensor<T>,
    pub biases: Tensor<T>,
}

impl<T: Scalar> ConvLayer<T> {
    pub fn new(filters: Tensor<T>, biases: Tensor<T>) -> Result<Self> {
        let s = filters.shape();
        if s.len() != 4 || s[2] != s[3] {
            return Err(NnError::Shape(format!("conv filters must be [M,C,k,k], got {s:?}")));
        }
        if s[0] == 0 || s[1] == 0 {
            return Err(NnError::Shape(format!("conv filters need M, C >= 1, got {s:?}")));
        }
        if s[2] % 2 == 0 {
            return Err(NnError::Shape(format!("conv kernel size must be odd, got {}", s[2])));
        }
        if biases.shape() != [s[0]] {
            return Err(NnError::Shape(format!(
                "conv biases must be [{}], got {:?}",
                s[0],
                biases.shape()
            )));
        }
        Ok(Self { filters, biases })
    }

    pub fn zeros(out_channels: usize, in_channels: usize, kernel: usize) -> Result<Self> {
        Self::new(
            Tensor::zeros(&[out_channels, in_channels, kernel, kernel]),
            Tensor::zeros(&[out_channels]),
        )
    }

    pub fn out_channels(&self) -> usize {
        self.filters.shape()[0]
    }

    pub fn in_channels(&self) -> usize {
        self.filters.shape()[1]
    }

    pub fn kernel(&self) -> usize {
        self.filters.shape()[2]
    }

    fn patch_len(&self) -> usize {
        self.in_channels() * self.kernel() * self.kernel()
    }
}

/// Affine map `W·x + b` with `W` stored `[out, in]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer<T> {
    pub weights: Tensor<T>,
    pub biases: Tensor<T>,
}

impl<T: Scalar> DenseLayer<T> {
    pub fn new(weights: Tensor<T>, biases: Tensor<T>) -> Result<Self> {
        let s = weights.shape();
        if s.len() != 2 || s[0] == 0 || s[1] == 0 {
            return Err(NnError::Shape(format!("dense weights must be [out,in], got {s:?}")));
        }
        if biases.shape() != [s[0]] {
            return Err(NnError::Shape(format!(
                "dense biases must be [{}], got {:?}",
                s[0],
                biases.shape()
            )));
        }
        Ok(Self { weights, biases })
    }

    pub fn zeros(inputs: usize, outputs: usize) -> Result<Self> {
        Self::new(Tensor::zeros(&[outputs, inputs]), Tensor::zeros(&[outputs]))
    }

    pub fn inputs(&self) -> usize {
        self.weights.shape()[1]
    }

    pub fn outputs(&self) -> usize {
        self.weights.shape()[0]
    }
}

fn spatial_dims(shape: &[usize]) -> Result<(usize, usize, usize)> {
    match shape {
        [c, h, w] => Ok((*c, *h, *w)),
        _ => Err(NnError::Shape(format!("expected [C,H,W], got {shape:?}"))),
    }
}

/// Unrolls `[C,H,W]` input into `(C·k·k) × (H·W)` patches with zero padding.
pub(crate) fn im2col<T: Scalar>(
    input: &[T],
    channels: usize,
    height: usize,
    width: usize,
    kernel: usize,
) -> Vec<T> {
    let pad = (kernel / 2) as isize;
    let pixels = height * width;
    let mut col = vec![T::zero(); channels * kernel * kernel * pixels];
    for c in 0..channels {
        let plane = &input[c * pixels..(c + 1) * pixels];
        for ky in 0..kernel {
            for kx in 0..kernel {
                let row = (c * kernel + ky) * kernel + kx;
                let dst = &mut col[row * pixels..(row + 1) * pixels];
                let dy = ky as isize - pad;
                let dx = kx as isize - pad;
                let x_lo = (-dx).max(0) as usize;
                let x_hi = (width as isize - dx).min(width as isize).max(0) as usize;
                if x_lo >= x_hi {
                    continue;
                }
                for y in 0..height {
                    let sy = y as isize + dy;
                    if sy < 0 || sy >= height as isize {
                        continue;
                    }
                    let src_start = sy as usize * width + (x_lo as isize + dx) as usize;
                    let len = x_hi - x_lo;
                    dst[y * width + x_lo..y * width + x_hi]
                        .copy_from_slice(&plane[src_start..src_start + len]);
                }
            }
        }
    }
    col
}

/// Scatters patch gradients back onto the `[C,H,W]` input grid (adjoint of [`im2col`]).
pub(crate) fn col2im<T: Scalar>(
    col: &[T],
    channels: usize,
    height: usize,
    width: usize,
    kernel: usize,
) -> Vec<T> {
    let pad = (kernel / 2) as isize;
    let pixels = height * width;
    let mut out = vec![T::zero(); channels * pixels];
    for c in 0..channels {
        let plane = &mut out[c * pixels..(c + 1) * pixels];
        for ky in 0..kernel {
            for kx in 0..kernel {
                let row = (c * kernel + ky) * kernel + kx;
                let src = &col[row * pixels..(row + 1) * pixels];
                let dy = ky as isize - pad;
                let dx = kx as isize - pad;
                let x_lo = (-dx).max(0) as usize;
                let x_hi = (width as isize - dx).min(width as isize).max(0) as usize;
                if x_lo >= x_hi {
                    continue;
                }
                for y in 0..height {
                    let sy = y as isize + dy;
                    if sy < 0 || sy >= height as isize {
                        continue;
                    }
                    let dst_start = sy as usize * width + (x_lo as isize + dx) as usize;
                    let len = x_hi - x_lo;
                    for (d, s) in plane[dst_start..dst_start + len]
                        .iter_mut()
                        .zip(&src[y * width + x_lo..y * width + x_hi])
                    {
                        *d += *s;
                    }
                }
            }
        }
    }
    out
}

/// Pre-activation output from a patch matrix; `out[m,:] = b[m] + Σ_k W[m,k]·col[k,:]`.
pub(crate) fn conv_from_col<T: Scalar>(col: &[T], layer: &ConvLayer<T>, pixels: usize) -> Vec<T> {
    let m_count = layer.out_channels();
    let k_len = layer.patch_len();
    let w = layer.filters.data();
    let b = layer.biases.data();
    let mut out = vec![T::zero(); m_count * pixels];
    for m in 0..m_count {
        let dst = &mut out[m * pixels..(m + 1) * pixels];
        dst.iter_mut().for_each(|v| *v = b[m]);
        for k in 0..k_len {
            let wk = w[m * k_len + k];
            if wk != T::zero() {
                axpy(wk, &col[k * pixels..(k + 1) * pixels], dst);
            }
        }
    }
    out
}

/// Same-padded 2-D convolution (cross-correlation form), activation not applied.
pub fn conv2d_forward<T: Scalar>(input: &Tensor<T>, layer: &ConvLayer<T>) -> Result<Tensor<T>> {
    let (c, h, w) = spatial_dims(input.shape())?;
    if c != layer.in_channels() {
        return Err(NnError::Shape(format!(
            "conv expects {} input channels, got {c}",
            layer.in_channels()
        )));
    }
    let col = im2col(input.data(), c, h, w, layer.kernel());
    let out = conv_from_col(&col, layer, h * w);
    Tensor::new(vec![layer.out_channels(), h, w], out)
}

/// Gradients of a convolution given its cached patch matrix.
///
/// Accumulates into `grad_filters` / `grad_biases` and returns the gradient with
/// respect to the input when `input_dims` is given.
pub(crate) fn conv_backward_col<T: Scalar>(
    col: &[T],
    layer: &ConvLayer<T>,
    grad_out: &[T],
    pixels: usize,
    grad_filters: &mut [T],
    grad_biases: &mut [T],
    input_dims: Option<(usize, usize)>,
) -> Option<Vec<T>> {
    let m_count = layer.out_channels();
    let k_len = layer.patch_len();
    for m in 0..m_count {
        let g = &grad_out[m * pixels..(m + 1) * pixels];
        grad_biases[m] += g.iter().copied().sum::<T>();
        for k in 0..k_len {
            grad_filters[m * k_len + k] += dot(g, &col[k * pixels..(k + 1) * pixels]);
        }
    }
    let (h, w) = input_dims?;
    let wts = layer.filters.data();
    let mut dcol = vec![T::zero(); k_len * pixels];
    for m in 0..m_count {
        let g = &grad_out[m * pixels..(m + 1) * pixels];
        for k in 0..k_len {
            axpy(wts[m * k_len + k], g, &mut dcol[k * pixels..(k + 1) * pixels]);
        }
    }
    Some(col2im(&dcol, layer.in_channels(), h, w, layer.kernel()))
}

/// Gradients of [`conv2d_forward`]: `(d input, d filters, d biases)`.
pub fn conv2d_backward<T: Scalar>(
    input: &Tensor<T>,
    layer: &ConvLayer<T>,
    grad_out: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let (c, h, w) = spatial_dims(input.shape())?;
    if grad_out.shape() != [layer.out_channels(), h, w] {
        return Err(NnError::Shape(format!(
            "conv upstream gradient {:?} does not match [{}, {h}, {w}]",
            grad_out.shape(),
            layer.out_channels()
        )));
    }
    let col = im2col(input.data(), c, h, w, layer.kernel());
    let mut gf = Tensor::zeros(layer.filters.shape());
    let mut gb = Tensor::zeros(layer.biases.shape());
    let gi = conv_backward_col(
        &col,
        layer,
        grad_out.data(),
        h * w,
        gf.data_mut(),
        gb.data_mut(),
        Some((h, w)),
    )
    .expect("input gradient requested");
    Ok((Tensor::new(vec![c, h, w], gi)?, gf, gb))
}

#[inline]
pub fn leaky_relu_scalar<T: Scalar>(x: T) -> T {
    if x > T::zero() {
        x
    } else {
        x * T::lit(LEAKY_SLOPE)
    }
}

/// Derivative of the leaky ReLU; the value at exactly 0 is the negative slope.
#[inline]
pub fn leaky_relu_grad<T: Scalar>(x: T) -> T {
    if x > T::zero() {
        T::one()
    } else {
        T::lit(LEAKY_SLOPE)
    }
}

#[inline]
pub fn relu_scalar<T: Scalar>(x: T) -> T {
    if x > T::zero() {
        x
    } else {
        T::zero()
    }
}

#[inline]
pub fn relu_grad<T: Scalar>(x: T) -> T {
    if x > T::zero() {
        T::one()
    } else {
        T::zero()
    }
}

pub fn leaky_relu<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    map(x, leaky_relu_scalar)
}

pub fn relu<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    map(x, relu_scalar)
}

fn map<T: Scalar>(x: &Tensor<T>, f: impl Fn(T) -> T) -> Tensor<T> {
    Tensor::new(x.shape().to_vec(), x.data().iter().map(|&v| f(v)).collect())
        .expect("shape preserved")
}

/// 2×2 max pooling over disjoint blocks. Returns the pooled tensor and, for
/// every output element, the flat input index that produced it (first maximum
/// in block scan order on ties).
pub fn max_pool_2x2<T: Scalar>(input: &Tensor<T>) -> Result<(Tensor<T>, Vec<u32>)> {
    let (c, h, w) = spatial_dims(input.shape())?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(NnError::Shape(format!("max pool needs even spatial dims, got {h}x{w}")));
    }
    let (out, idx) = max_pool_raw(input.data(), c, h, w);
    Ok((Tensor::new(vec![c, h / 2, w / 2], out)?, idx))
}

pub(crate) fn max_pool_raw<T: Scalar>(
    input: &[T],
    channels: usize,
    height: usize,
    width: usize,
) -> (Vec<T>, Vec<u32>) {
    let (oh, ow) = (height / 2, width / 2);
    let mut out = Vec::with_capacity(channels * oh * ow);
    let mut idx = Vec::with_capacity(channels * oh * ow);
    for c in 0..channels {
        let base = c * height * width;
        for y in 0..oh {
            for x in 0..ow {
                let r0 = base + 2 * y * width + 2 * x;
                let candidates = [r0, r0 + 1, r0 + width, r0 + width + 1];
                let mut best = candidates[0];
                for &i in &candidates[1..] {
                    if input[i] > input[best] {
                        best = i;
                    }
                }
                out.push(input[best]);
                idx.push(best as u32);
            }
        }
    }
    (out, idx)
}

/// Routes pooled gradients back to the recorded argmax positions.
pub fn max_pool_backward<T: Scalar>(grad_out: &[T], argmax: &[u32], input_len: usize) -> Vec<T> {
    let mut g = vec![T::zero(); input_len];
    for (&go, &i) in grad_out.iter().zip(argmax) {
        g[i as usize] += go;
    }
    g
}

/// `W·x + b`, activation not applied.
pub fn dense_forward<T: Scalar>(input: &Tensor<T>, layer: &DenseLayer<T>) -> Result<Tensor<T>> {
    if input.len() != layer.inputs() {
        return Err(NnError::Shape(format!(
            "dense expects {} inputs, got {}",
            layer.inputs(),
            input.len()
        )));
    }
    Ok(Tensor::from_vec(dense_raw(input.data(), layer)))
}

pub(crate) fn dense_raw<T: Scalar>(x: &[T], layer: &DenseLayer<T>) -> Vec<T> {
    let n_in = layer.inputs();
    layer
        .weights
        .data()
        .chunks_exact(n_in)
        .zip(layer.biases.data())
        .map(|(row, &b)| dot(row, x) + b)
        .collect()
}

/// Accumulates dense parameter gradients; returns the input gradient if asked.
pub(crate) fn dense_backward_raw<T: Scalar>(
    x: &[T],
    layer: &DenseLayer<T>,
    grad_out: &[T],
    grad_weights: &mut [T],
    grad_biases: &mut [T],
    want_input: bool,
) -> Option<Vec<T>> {
    let n_in = layer.inputs();
    for (j, &g) in grad_out.iter().enumerate() {
        grad_biases[j] += g;
        if g != T::zero() {
            axpy(g, x, &mut grad_weights[j * n_in..(j + 1) * n_in]);
        }
    }
    if !want_input {
        return None;
    }
    let mut gi = vec![T::zero(); n_in];
    for (row, &g) in layer.weights.data().chunks_exact(n_in).zip(grad_out) {
        if g != T::zero() {
            axpy(g, row, &mut gi);
        }
    }
    Some(gi)
}

/// Gradients of [`dense_forward`]: `(d input, d weights, d biases)`.
pub fn dense_backward<T: Scalar>(
    input: &Tensor<T>,
    layer: &DenseLayer<T>,
    grad_out: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    if input.len() != layer.inputs() || grad_out.len() != layer.outputs() {
        return Err(NnError::Shape(format!(
            "dense backward: input {} / upstream {} vs layer {}x{}",
            input.len(),
            grad_out.len(),
            layer.outputs(),
            layer.inputs()
        )));
    }
    let mut gw = Tensor::zeros(layer.weights.shape());
    let mut gb = Tensor::zeros(layer.biases.shape());
    let gi = dense_backward_raw(input.data(), layer, grad_out.data(), gw.data_mut(), gb.data_mut(), true)
        .expect("input gradient requested");
    Ok((Tensor::from_vec(gi), gw, gb))
}

/// Numerically stable softmax of one logit vector.
pub fn softmax_slice<T: Scalar>(logits: &[T]) -> Vec<T> {
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = logits.iter().map(|&v| (v - max).exp()).collect();
    let sum: T = exps.iter().copied().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Softmax over the last axis (a vector, or each row of a `[B, U]` batch).
pub fn softmax<T: Scalar>(logits: &Tensor<T>) -> Tensor<T> {
    let width = *logits.shape().last().unwrap_or(&0);
    if width == 0 {
        return logits.clone();
    }
    let data = logits.data().chunks_exact(width).flat_map(softmax_slice).collect();
    Tensor::new(logits.shape().to_vec(), data).expect("shape preserved")
}

/// Mean over the batch of `-ln max(p[label], 1e-12)`.
pub fn cross_entropy_loss<T: Scalar>(probabilities: &Tensor<T>, labels: &[u8]) -> Result<T> {
    let s = probabilities.shape();
    let (batch, classes) = match s {
        [b, u] => (*b, *u),
        [u] => (1, *u),
        _ => return Err(NnError::Shape(format!("probabilities must be [B,U], got {s:?}"))),
    };
    if labels.len() != batch {
        return Err(NnError::Shape(format!("{} labels for batch of {batch}", labels.len())));
    }
    let floor = T::lit(PROB_FLOOR);
    let mut total = T::zero();
    for (row, &label) in probabilities.data().chunks_exact(classes).zip(labels) {
        if label as usize >= classes {
            return Err(NnError::Label { label, classes });
        }
        total -= row[label as usize].max(floor).ln();
    }
    Ok(total / T::from_usize_lossy(batch))
}

/// Gradient of the mean cross-entropy with respect to the logits feeding a
/// softmax: `(p - onehot) / B` per row.
pub fn softmax_cross_entropy_grad<T: Scalar>(
    probabilities: &Tensor<T>,
    labels: &[u8],
) -> Result<Tensor<T>> {
    let s = probabilities.shape();
    let (batch, classes) = match s {
        [b, u] => (*b, *u),
        _ => return Err(NnError::Shape(format!("probabilities must be [B,U], got {s:?}"))),
    };
    if labels.len() != batch {
        return Err(NnError::Shape(format!("{} labels for batch of {batch}", labels.len())));
    }
    let inv_b = T::one() / T::from_usize_lossy(batch);
    let mut g = probabilities.data().to_vec();
    for (row, &label) in g.chunks_exact_mut(classes).zip(labels) {
        if label as usize >= classes {
            return Err(NnError::Label { label, classes });
        }
        row[label as usize] -= T::one();
        row.iter_mut().for_each(|v| *v *= inv_b);
    }
    Tensor::new(s.to_vec(), g)
}

/// Inverted dropout mask: each entry is 0 with probability `rate`, otherwise `1/(1-rate)`.
pub(crate) fn dropout_mask<T: Scalar>(len: usize, rate: f64, rng: &mut dyn RngCore) -> Vec<T> {
    let keep = T::lit(1.0 / (1.0 - rate));
    (0..len)
        .map(|_| if rng.random::<f64>() < rate { T::zero() } else { keep })
        .collect()
}

pub fn check_dropout_rate(rate: f64) -> Result<()> {
    if !(0.0..1.0).contains(&rate) {
        return Err(NnError::DropoutRate(rate));
    }
    Ok(())
}

/// Inverted dropout. In inference mode, or with `rate == 0`, this is the identity
/// and consumes no randomness.
pub fn dropout_forward<T: Scalar>(
    input: &Tensor<T>,
    rate: f64,
    rng: &mut dyn RngCore,
    training: bool,
) -> Result<Tensor<T>> {
    check_dropout_rate(rate)?;
    if !training || rate == 0.0 {
        return Ok(input.clone());
    }
    let mask = dropout_mask::<T>(input.len(), rate, rng);
    let data = input.data().iter().zip(&mask).map(|(&x, &m)| x * m).collect();
    Tensor::new(input.shape().to_vec(), data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rand_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect())
            .unwrap()
    }

    /// Straight-line quadruple loop reference.
    fn conv_oracle(input: &Tensor<f64>, layer: &ConvLayer<f64>) -> Vec<f64> {
        let (c, h, w) = spatial_dims(input.shape()).unwrap();
        let k = layer.kernel();
        let pad = (k / 2) as isize;
        let mut out = vec![0.0; layer.out_channels() * h * w];
        for m in 0..layer.out_channels() {
            for y in 0..h {
                for x in 0..w {
                    let mut acc = layer.biases.data()[m];
                    for ci in 0..c {
                        for p in 0..k {
                            for q in 0..k {
                                let sy = y as isize + p as isize - pad;
                                let sx = x as isize + q as isize - pad;
                                if sy < 0 || sx < 0 || sy >= h as isize || sx >= w as isize {
                                    continue;
                                }
                                acc += layer.filters.data()[((m * c + ci) * k + p) * k + q]
                                    * input.data()[(ci * h + sy as usize) * w + sx as usize];
                            }
                        }
                    }
                    out[(m * h + y) * w + x] = acc;
                }
            }
        }
        out
    }

    #[test]
    fn identity_kernel_passes_input_through() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let input = rand_tensor(&[1, 6, 7], &mut rng);
        let mut layer = ConvLayer::<f64>::zeros(1, 1, 3).unwrap();
        layer.filters.data_mut()[4] = 1.0;
        let out = conv2d_forward(&input, &layer).unwrap();
        assert_eq!(out, input);
    }

    #[test]
    fn zero_input_gives_bias() {
        let input = Tensor::<f64>::zeros(&[2, 4, 4]);
        let mut layer = ConvLayer::<f64>::zeros(3, 2, 5).unwrap();
        layer.biases.data_mut().copy_from_slice(&[0.5, -1.0, 2.0]);
        let out = conv2d_forward(&input, &layer).unwrap();
        for m in 0..3 {
            assert!(out.data()[m * 16..(m + 1) * 16].iter().all(|&v| v == layer.biases.data()[m]));
        }
    }

    #[test]
    fn conv_matches_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for (c, k) in [(1, 3), (3, 5), (2, 3)] {
            let input = rand_tensor(&[c, 8, 8], &mut rng);
            let layer =
                ConvLayer::new(rand_tensor(&[2, c, k, k], &mut rng), rand_tensor(&[2], &mut rng))
                    .unwrap();
            let got = conv2d_forward(&input, &layer).unwrap();
            let want = conv_oracle(&input, &layer);
            let err = got.data().iter().zip(&want).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            assert!(err < 1e-12, "{err}");
        }
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        // <im2col(x), y> == <x, col2im(y)>
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = rand_tensor(&[2, 5, 6], &mut rng);
        let y = rand_tensor(&[2 * 9, 30], &mut rng);
        let lhs = dot(&im2col(x.data(), 2, 5, 6, 3), y.data());
        let rhs = dot(x.data(), &col2im(y.data(), 2, 5, 6, 3));
        assert!((lhs - rhs).abs() < 1e-12);
    }

    #[test]
    fn conv_rejects_bad_shapes() {
        assert!(ConvLayer::<f64>::zeros(1, 1, 4).is_err());
        let layer = ConvLayer::<f64>::zeros(1, 2, 3).unwrap();
        assert!(conv2d_forward(&Tensor::zeros(&[1, 4, 4]), &layer).is_err());
        assert!(conv2d_forward(&Tensor::zeros(&[16]), &layer).is_err());
    }

    #[test]
    fn leaky_relu_values() {
        assert_eq!(leaky_relu_scalar(2.0f64), 2.0);
        assert!((leaky_relu_scalar(-2.0f64) + 0.02).abs() < 1e-16);
        assert_eq!(leaky_relu_scalar(0.0f64), 0.0);
        assert_eq!(leaky_relu_grad(0.0f64), 0.01);
        assert_eq!(relu_scalar(-3.0f64), 0.0);
        assert_eq!(relu(&Tensor::from_vec(vec![-1.0f64, 0.5])).data(), &[0.0, 0.5]);
    }

    #[test]
    fn pool_basics() {
        let t = Tensor::new(vec![1, 2, 2], vec![1.0f64, 2.0, 3.0, 4.0]).unwrap();
        let (p, idx) = max_pool_2x2(&t).unwrap();
        assert_eq!(p.data(), &[4.0]);
        assert_eq!(idx, vec![3]);
        let c = Tensor::filled(&[2, 4, 6], 1.5f64);
        let (p, _) = max_pool_2x2(&c).unwrap();
        assert_eq!(p.shape(), &[2, 2, 3]);
        assert!(p.data().iter().all(|&v| v == 1.5));
        assert!(max_pool_2x2(&Tensor::<f64>::zeros(&[1, 3, 4])).is_err());
    }

    #[test]
    fn pool_matches_block_max_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let t = rand_tensor(&[3, 10, 10], &mut rng);
        let (p, idx) = max_pool_2x2(&t).unwrap();
        for c in 0..3 {
            for y in 0..5 {
                for x in 0..5 {
                    let mut m = f64::NEG_INFINITY;
                    for dy in 0..2 {
                        for dx in 0..2 {
                            m = m.max(t.data()[(c * 10 + 2 * y + dy) * 10 + 2 * x + dx]);
                        }
                    }
                    let o = (c * 5 + y) * 5 + x;
                    assert_eq!(p.data()[o], m);
                    assert_eq!(t.data()[idx[o] as usize], m);
                }
            }
        }
        let g = max_pool_backward(&vec![1.0; 75], &idx, 300);
        assert_eq!(g.iter().sum::<f64>(), 75.0);
    }

    #[test]
    fn dense_examples() {
        let mut layer = DenseLayer::<f64>::zeros(3, 3).unwrap();
        for i in 0..3 {
            layer.weights.data_mut()[i * 3 + i] = 1.0;
        }
        let x = Tensor::from_vec(vec![0.3, -2.0, 7.0]);
        assert_eq!(dense_forward(&x, &layer).unwrap(), x);
        let mut layer = DenseLayer::<f64>::zeros(3, 2).unwrap();
        layer.biases.data_mut().copy_from_slice(&[1.5, -0.5]);
        assert_eq!(dense_forward(&x, &layer).unwrap().data(), &[1.5, -0.5]);
        assert!(dense_forward(&Tensor::from_vec(vec![1.0]), &layer).is_err());
    }

    #[test]
    fn dense_matches_hand_dot_products() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let layer =
            DenseLayer::new(rand_tensor(&[3, 4], &mut rng), rand_tensor(&[3], &mut rng)).unwrap();
        let x = rand_tensor(&[4], &mut rng);
        let y = dense_forward(&x, &layer).unwrap();
        let w = layer.weights.data();
        let xd = x.data();
        for j in 0..3 {
            let want = w[j * 4] * xd[0] + w[j * 4 + 1] * xd[1] + w[j * 4 + 2] * xd[2]
                + w[j * 4 + 3] * xd[3]
                + layer.biases.data()[j];
            assert!((y.data()[j] - want).abs() < 1e-14);
        }
    }

    #[test]
    fn softmax_examples() {
        let p = softmax(&Tensor::<f64>::zeros(&[16]));
        assert!(p.data().iter().all(|&v| (v - 1.0 / 16.0).abs() < 1e-15));
        let p = softmax(&Tensor::from_vec(vec![1000.0f64, 0.0]));
        assert!(p.all_finite());
        assert!((p.data()[0] - 1.0).abs() < 1e-15 && p.data()[1] < 1e-300);
        // exp(k) / (e + e² + e³), evaluated at 50 digits
        let p = softmax(&Tensor::from_vec(vec![1.0f64, 2.0, 3.0]));
        let want = [
            0.090_030_573_170_380_459_98,
            0.244_728_471_054_797_63,
            0.665_240_955_774_821_94,
        ];
        for (a, b) in p.data().iter().zip(want) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn cross_entropy_examples() {
        let mut onehot = Tensor::<f64>::zeros(&[2, 16]);
        onehot.data_mut()[3] = 1.0;
        onehot.data_mut()[16 + 9] = 1.0;
        assert_eq!(cross_entropy_loss(&onehot, &[3, 9]).unwrap(), 0.0);
        let uniform = Tensor::filled(&[4, 16], 1.0f64 / 16.0);
        let l = cross_entropy_loss(&uniform, &[0, 5, 10, 15]).unwrap();
        assert!((l - 16f64.ln()).abs() < 1e-12);
        assert!(matches!(cross_entropy_loss(&uniform, &[0, 5, 10, 16]), Err(NnError::Label { .. })));
    }

    #[test]
    fn cross_entropy_matches_straight_line_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let logits = rand_tensor(&[5, 16], &mut rng);
        let labels = [0u8, 15, 7, 7, 3];
        let p = softmax(&logits);
        let mut want = 0.0;
        for (b, &l) in labels.iter().enumerate() {
            let row = &logits.data()[b * 16..(b + 1) * 16];
            let lse = row.iter().map(|v| v.exp()).sum::<f64>().ln();
            want += lse - row[l as usize];
        }
        want /= 5.0;
        assert!((cross_entropy_loss(&p, &labels).unwrap() - want).abs() < 1e-12);
    }

    #[test]
    fn softmax_ce_gradient_is_p_minus_onehot() {
        let p = softmax(&Tensor::new(vec![1, 3], vec![0.2f64, -0.1, 0.4]).unwrap());
        let g = softmax_cross_entropy_grad(&p, &[1]).unwrap();
        assert_eq!(g.data()[0], p.data()[0]);
        assert_eq!(g.data()[1], p.data()[1] - 1.0);
        assert_eq!(g.data()[2], p.data()[2]);
    }

    #[test]
    fn dropout_contract() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x = rand_tensor(&[100], &mut rng);
        assert_eq!(dropout_forward(&x, 0.0, &mut rng, true).unwrap(), x);
        assert_eq!(dropout_forward(&x, 0.7, &mut rng, false).unwrap(), x);
        assert!(matches!(dropout_forward(&x, 1.0, &mut rng, true), Err(NnError::DropoutRate(_))));
        assert!(dropout_forward(&x, -0.1, &mut rng, true).is_err());
    }

    #[test]
    fn dropout_statistics() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let x = Tensor::filled(&[1_000_000], 1.0f64);
        let y = dropout_forward(&x, 0.5, &mut rng, true).unwrap();
        let zeros = y.data().iter().filter(|&&v| v == 0.0).count();
        assert!((zeros as f64 / 1e6 - 0.5).abs() < 0.005);
        assert!(y.data().iter().all(|&v| v == 0.0 || v == 2.0));
    }
}
