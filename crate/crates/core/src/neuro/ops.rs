//! Layer primitives with explicit backward passes. Convolutions go through
//! im2col and a strided GEMM.

use serde::{Deserialize, Serialize};

use super::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const DECONV_KERNEL: usize = 4;
pub const DECONV_STRIDE: usize = 2;
pub const DECONV_PAD: usize = 1;
pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// `c = op(a) * op(b)` (or `+=` when `accumulate`), with `op` an optional
/// transpose; `c` is `m x n`, the inner dimension is `k`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn matmul<T: Scalar>(
    m: usize,
    k: usize,
    n: usize,
    a: &[T],
    a_transposed: bool,
    b: &[T],
    b_transposed: bool,
    c: &mut [T],
    accumulate: bool,
) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    let (rsa, csa) = if a_transposed { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_transposed { (1, k as isize) } else { (n as isize, 1) };
    let beta = if accumulate { T::one() } else { T::zero() };
    // SAFETY: the asserts above keep every strided access in bounds, and `c`
    // is a unique borrow distinct from `a` and `b`.
    unsafe {
        T::gemm(
            m,
            k,
            n,
            T::one(),
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Output length of a convolution along one axis.
pub fn conv_out_size(n: usize, kernel: usize, stride: usize, pad: usize) -> Result<usize> {
    if stride == 0 || n + 2 * pad < kernel {
        return Err(Error::Shape(format!(
            "input {} too small for kernel {} with padding {}",
            n, kernel, pad
        )));
    }
    Ok((n + 2 * pad - kernel) / stride + 1)
}

struct Geometry {
    channels: usize,
    height: usize,
    width: usize,
    kernel: usize,
    stride: usize,
    pad: usize,
    out_h: usize,
    out_w: usize,
}

impl Geometry {
    fn cols_len(&self) -> usize {
        self.channels * self.kernel * self.kernel * self.out_h * self.out_w
    }

    /// Valid output columns `ox` for kernel column `kx` (input stays in
    /// bounds).
    fn range(&self, k: usize, out: usize, size: usize) -> (usize, usize) {
        let (s, p) = (self.stride as isize, self.pad as isize);
        let k = k as isize;
        // need 0 <= o*s + k - p < size
        let lo = ((p - k).max(0) + s - 1) / s;
        let hi = ((size as isize - 1 + p - k).max(-1)).div_euclid(s) + 1;
        let hi = hi.min(out as isize);
        (lo as usize, hi.max(lo) as usize)
    }
}

fn im2col<T: Scalar>(x: &[T], g: &Geometry, cols: &mut [T]) {
    let ohw = g.out_h * g.out_w;
    cols.iter_mut().for_each(|v| *v = T::zero());
    for c in 0..g.channels {
        let plane = &x[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ky in 0..g.kernel {
            let (oy0, oy1) = g.range(ky, g.out_h, g.height);
            for kx in 0..g.kernel {
                let (ox0, ox1) = g.range(kx, g.out_w, g.width);
                let row = ((c * g.kernel + ky) * g.kernel + kx) * ohw;
                for oy in oy0..oy1 {
                    let iy = oy * g.stride + ky - g.pad;
                    let dst = &mut cols[row + oy * g.out_w..row + (oy + 1) * g.out_w];
                    let src = &plane[iy * g.width..(iy + 1) * g.width];
                    for ox in ox0..ox1 {
                        dst[ox] = src[ox * g.stride + kx - g.pad];
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters columns back, accumulating into `x`.
fn col2im<T: Scalar>(cols: &[T], g: &Geometry, x: &mut [T]) {
    let ohw = g.out_h * g.out_w;
    for c in 0..g.channels {
        let plane = &mut x[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ky in 0..g.kernel {
            let (oy0, oy1) = g.range(ky, g.out_h, g.height);
            for kx in 0..g.kernel {
                let (ox0, ox1) = g.range(kx, g.out_w, g.width);
                let row = ((c * g.kernel + ky) * g.kernel + kx) * ohw;
                for oy in oy0..oy1 {
                    let iy = oy * g.stride + ky - g.pad;
                    let src = &cols[row + oy * g.out_w..row + (oy + 1) * g.out_w];
                    let dst = &mut plane[iy * g.width..(iy + 1) * g.width];
                    for ox in ox0..ox1 {
                        dst[ox * g.stride + kx - g.pad] += src[ox];
                    }
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvGrads<T> {
    pub input: Tensor<T>,
    pub weights: Tensor<T>,
    pub bias: Vec<T>,
}

fn conv_geometry<T: Scalar>(input: &Tensor<T>, weights: &Tensor<T>, bias_len: usize, stride: usize, pad: usize) -> Result<Geometry> {
    let [cout, cin, kh, kw] = weights.shape();
    if kh != kw {
        return Err(Error::Shape(format!("non-square kernel {}x{}", kh, kw)));
    }
    if input.channels() != cin {
        return Err(Error::Shape(format!(
            "convolution expects {} input channels, got {}",
            cin,
            input.channels()
        )));
    }
    if bias_len != cout {
        return Err(Error::Shape(format!("{} biases for {} filters", bias_len, cout)));
    }
    Ok(Geometry {
        channels: cin,
        height: input.height(),
        width: input.width(),
        kernel: kh,
        stride,
        pad,
        out_h: conv_out_size(input.height(), kh, stride, pad)?,
        out_w: conv_out_size(input.width(), kh, stride, pad)?,
    })
}

/// Cross-correlation of `input` with `weights` shaped
/// `(out_channels, in_channels, k, k)`.
pub fn conv2d<T: Scalar>(input: &Tensor<T>, weights: &Tensor<T>, bias: &[T], stride: usize, pad: usize) -> Result<Tensor<T>> {
    let g = conv_geometry(input, weights, bias.len(), stride, pad)?;
    let cout = weights.shape()[0];
    let kdim = g.channels * g.kernel * g.kernel;
    let ohw = g.out_h * g.out_w;
    let mut out = Tensor::zeros([input.batch(), cout, g.out_h, g.out_w]);
    let mut cols = vec![T::zero(); g.cols_len()];
    for b in 0..input.batch() {
        im2col(input.item(b), &g, &mut cols);
        let y = out.item_mut(b);
        for (co, &bv) in bias.iter().enumerate() {
            y[co * ohw..(co + 1) * ohw].iter_mut().for_each(|v| *v = bv);
        }
        matmul(cout, kdim, ohw, weights.data(), false, &cols, false, y, true);
    }
    Ok(out)
}

pub fn conv2d_backward<T: Scalar>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    stride: usize,
    pad: usize,
    upstream: &Tensor<T>,
) -> Result<ConvGrads<T>> {
    let cout = weights.shape()[0];
    let g = conv_geometry(input, weights, cout, stride, pad)?;
    upstream.ensure_shape([input.batch(), cout, g.out_h, g.out_w], "convolution upstream gradient")?;
    let kdim = g.channels * g.kernel * g.kernel;
    let ohw = g.out_h * g.out_w;
    let mut d_input = Tensor::zeros(input.shape());
    let mut d_weights = Tensor::zeros(weights.shape());
    let mut d_bias = vec![T::zero(); cout];
    let mut cols = vec![T::zero(); g.cols_len()];
    let mut d_cols = vec![T::zero(); g.cols_len()];
    for b in 0..input.batch() {
        let dy = upstream.item(b);
        for (co, db) in d_bias.iter_mut().enumerate() {
            *db += dy[co * ohw..(co + 1) * ohw].iter().copied().sum::<T>();
        }
        im2col(input.item(b), &g, &mut cols);
        matmul(cout, ohw, kdim, dy, false, &cols, true, d_weights.data_mut(), true);
        matmul(kdim, cout, ohw, weights.data(), true, dy, false, &mut d_cols, false);
        col2im(&d_cols, &g, d_input.item_mut(b));
    }
    Ok(ConvGrads {
        input: d_input,
        weights: d_weights,
        bias: d_bias,
    })
}

/// Geometry of the stride-2 convolution whose adjoint the deconvolution is:
/// it maps the deconvolution output back onto its input grid.
fn deconv_geometry<T: Scalar>(input: &Tensor<T>, weights: &Tensor<T>, bias_len: usize) -> Result<Geometry> {
    let [cin, cout, kh, kw] = weights.shape();
    if kh != DECONV_KERNEL || kw != DECONV_KERNEL {
        return Err(Error::Shape(format!("deconvolution kernels are 4x4, got {}x{}", kh, kw)));
    }
    if input.channels() != cin {
        return Err(Error::Shape(format!(
            "deconvolution expects {} input channels, got {}",
            cin,
            input.channels()
        )));
    }
    if bias_len != cout {
        return Err(Error::Shape(format!("{} biases for {} filters", bias_len, cout)));
    }
    Ok(Geometry {
        channels: cout,
        height: input.height() * DECONV_STRIDE,
        width: input.width() * DECONV_STRIDE,
        kernel: DECONV_KERNEL,
        stride: DECONV_STRIDE,
        pad: DECONV_PAD,
        out_h: input.height(),
        out_w: input.width(),
    })
}

/// Stride-2 transposed convolution, `weights` shaped
/// `(in_channels, out_channels, 4, 4)`; doubles the spatial size.
pub fn deconv2d<T: Scalar>(input: &Tensor<T>, weights: &Tensor<T>, bias: &[T]) -> Result<Tensor<T>> {
    let g = deconv_geometry(input, weights, bias.len())?;
    let [cin, cout, _, _] = weights.shape();
    let kdim = cout * DECONV_KERNEL * DECONV_KERNEL;
    let hw = input.height() * input.width();
    let plane = g.height * g.width;
    let mut out = Tensor::zeros([input.batch(), cout, g.height, g.width]);
    let mut cols = vec![T::zero(); g.cols_len()];
    for b in 0..input.batch() {
        matmul(kdim, cin, hw, weights.data(), true, input.item(b), false, &mut cols, false);
        let y = out.item_mut(b);
        col2im(&cols, &g, y);
        for (co, &bv) in bias.iter().enumerate() {
            y[co * plane..(co + 1) * plane].iter_mut().for_each(|v| *v += bv);
        }
    }
    Ok(out)
}

pub fn deconv2d_backward<T: Scalar>(input: &Tensor<T>, weights: &Tensor<T>, upstream: &Tensor<T>) -> Result<ConvGrads<T>> {
    let [cin, cout, _, _] = weights.shape();
    let g = deconv_geometry(input, weights, cout)?;
    upstream.ensure_shape([input.batch(), cout, g.height, g.width], "deconvolution upstream gradient")?;
    let kdim = cout * DECONV_KERNEL * DECONV_KERNEL;
    let hw = input.height() * input.width();
    let plane = g.height * g.width;
    let mut d_input = Tensor::zeros(input.shape());
    let mut d_weights = Tensor::zeros(weights.shape());
    let mut d_bias = vec![T::zero(); cout];
    let mut d_cols = vec![T::zero(); g.cols_len()];
    for b in 0..input.batch() {
        let dy = upstream.item(b);
        for (co, db) in d_bias.iter_mut().enumerate() {
            *db += dy[co * plane..(co + 1) * plane].iter().copied().sum::<T>();
        }
        im2col(dy, &g, &mut d_cols);
        matmul(cin, kdim, hw, weights.data(), false, &d_cols, false, d_input.item_mut(b), false);
        matmul(cin, hw, kdim, input.item(b), false, &d_cols, true, d_weights.data_mut(), true);
    }
    Ok(ConvGrads {
        input: d_input,
        weights: d_weights,
        bias: d_bias,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Train,
    Eval,
}

/// What batch norm keeps from the forward pass for its backward pass.
#[derive(Debug, Clone)]
pub struct BatchNormCache<T> {
    xhat: Vec<T>,
    inv_std: Vec<T>,
    mode: Mode,
    shape: [usize; 4],
}

/// Per-channel standardization over batch and spatial dimensions. Train
/// mode normalizes with batch statistics and updates the running ones
/// (unbiased variance); eval mode uses the running statistics.
pub fn batchnorm<T: Scalar>(
    input: &Tensor<T>,
    gamma: &[T],
    beta: &[T],
    running_mean: &mut [T],
    running_var: &mut [T],
    mode: Mode,
) -> Result<(Tensor<T>, BatchNormCache<T>)> {
    let [n, c, h, w] = input.shape();
    if gamma.len() != c || beta.len() != c || running_mean.len() != c || running_var.len() != c {
        return Err(Error::Shape(format!("batch norm parameters do not match {} channels", c)));
    }
    let plane = h * w;
    let count = n * plane;
    if mode == Mode::Train && count < 2 {
        return Err(Error::Batch(count));
    }
    let eps = T::lit(BN_EPS);
    let momentum = T::lit(BN_MOMENTUM);
    let mut out = Tensor::zeros(input.shape());
    let mut xhat = vec![T::zero(); input.len()];
    let mut inv_std = vec![T::zero(); c];
    let idx = |b: usize, ch: usize| (b * c + ch) * plane;
    for ch in 0..c {
        let (mean, var) = match mode {
            Mode::Train => {
                let mut sum = T::zero();
                for b in 0..n {
                    sum += input.data()[idx(b, ch)..idx(b, ch) + plane].iter().copied().sum::<T>();
                }
                let mean = sum / T::from_usize_lossy(count);
                let mut ss = T::zero();
                for b in 0..n {
                    for &v in &input.data()[idx(b, ch)..idx(b, ch) + plane] {
                        ss += (v - mean) * (v - mean);
                    }
                }
                let var = ss / T::from_usize_lossy(count);
                let unbiased = ss / T::from_usize_lossy(count - 1);
                running_mean[ch] = (T::one() - momentum) * running_mean[ch] + momentum * mean;
                running_var[ch] = (T::one() - momentum) * running_var[ch] + momentum * unbiased;
                (mean, var)
            }
            Mode::Eval => (running_mean[ch], running_var[ch]),
        };
        let is = T::one() / (var + eps).sqrt();
        inv_std[ch] = is;
        for b in 0..n {
            let r = idx(b, ch)..idx(b, ch) + plane;
            for ((o, xh), &v) in out.data_mut()[r.clone()]
                .iter_mut()
                .zip(&mut xhat[r.clone()])
                .zip(&input.data()[r])
            {
                *xh = (v - mean) * is;
                *o = gamma[ch] * *xh + beta[ch];
            }
        }
    }
    Ok((
        out,
        BatchNormCache {
            xhat,
            inv_std,
            mode,
            shape: input.shape(),
        },
    ))
}

/// Returns `(d_input, d_gamma, d_beta)`.
pub fn batchnorm_backward<T: Scalar>(
    cache: &BatchNormCache<T>,
    gamma: &[T],
    upstream: &Tensor<T>,
) -> Result<(Tensor<T>, Vec<T>, Vec<T>)> {
    upstream.ensure_shape(cache.shape, "batch norm upstream gradient")?;
    let [n, c, h, w] = cache.shape;
    let plane = h * w;
    let count = T::from_usize_lossy(n * plane);
    let mut dx = Tensor::zeros(cache.shape);
    let mut d_gamma = vec![T::zero(); c];
    let mut d_beta = vec![T::zero(); c];
    let idx = |b: usize, ch: usize| (b * c + ch) * plane;
    for ch in 0..c {
        let (mut sum_dy, mut sum_dy_xhat) = (T::zero(), T::zero());
        for b in 0..n {
            let r = idx(b, ch)..idx(b, ch) + plane;
            for (&dy, &xh) in upstream.data()[r.clone()].iter().zip(&cache.xhat[r]) {
                sum_dy += dy;
                sum_dy_xhat += dy * xh;
            }
        }
        d_gamma[ch] = sum_dy_xhat;
        d_beta[ch] = sum_dy;
        let scale = gamma[ch] * cache.inv_std[ch];
        for b in 0..n {
            let r = idx(b, ch)..idx(b, ch) + plane;
            for ((d, &dy), &xh) in dx.data_mut()[r.clone()]
                .iter_mut()
                .zip(&upstream.data()[r.clone()])
                .zip(&cache.xhat[r])
            {
                *d = match cache.mode {
                    Mode::Train => scale * (dy - (sum_dy + xh * sum_dy_xhat) / count),
                    Mode::Eval => scale * dy,
                };
            }
        }
    }
    Ok((dx, d_gamma, d_beta))
}

pub fn leaky_relu<T: Scalar>(input: &Tensor<T>, slope: T) -> Tensor<T> {
    let data = input
        .data()
        .iter()
        .map(|&v| if v >= T::zero() { v } else { slope * v })
        .collect();
    Tensor::from_raw(input.shape(), data)
}

/// The gradient at exactly zero is 1.
pub fn leaky_relu_backward<T: Scalar>(input: &Tensor<T>, slope: T, upstream: &Tensor<T>) -> Result<Tensor<T>> {
    upstream.ensure_shape(input.shape(), "leaky relu upstream gradient")?;
    let data = input
        .data()
        .iter()
        .zip(upstream.data())
        .map(|(&v, &g)| if v >= T::zero() { g } else { slope * g })
        .collect();
    Ok(Tensor::from_raw(input.shape(), data))
}

/// `(tanh(x) + 1) / 2`, mapping onto `[0, 1]`.
pub fn tanh_out<T: Scalar>(input: &Tensor<T>) -> Tensor<T> {
    let half = T::lit(0.5);
    Tensor::from_raw(
        input.shape(),
        input.data().iter().map(|&v| half * (v.tanh() + T::one())).collect(),
    )
}

/// Backward of [`tanh_out`] from its output.
pub fn tanh_out_backward<T: Scalar>(output: &Tensor<T>, upstream: &Tensor<T>) -> Result<Tensor<T>> {
    upstream.ensure_shape(output.shape(), "tanh upstream gradient")?;
    let two = T::lit(2.0);
    let data = output
        .data()
        .iter()
        .zip(upstream.data())
        .map(|(&y, &g)| {
            let t = two * y - T::one();
            g * (T::one() - t * t) / two
        })
        .collect();
    Ok(Tensor::from_raw(output.shape(), data))
}

pub fn sigmoid<T: Scalar>(z: T) -> T {
    if z >= T::zero() {
        T::one() / (T::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (T::one() + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn random_tensor(shape: [usize; 4], rng: &mut ChaCha8Rng) -> Tensor<f64> {
        let n = shape.iter().product();
        Tensor::new(shape, (0..n).map(|_| StandardNormal.sample(rng)).collect()).unwrap()
    }

    fn dot(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| x * y).sum()
    }

    /// Naive direct cross-correlation with zero padding.
    fn naive_conv(x: &Tensor<f64>, w: &Tensor<f64>, bias: &[f64], s: usize, p: usize) -> Tensor<f64> {
        let [n, cin, h, wd] = x.shape();
        let [cout, _, k, _] = w.shape();
        let oh = (h + 2 * p - k) / s + 1;
        let ow = (wd + 2 * p - k) / s + 1;
        let mut out = Tensor::zeros([n, cout, oh, ow]);
        for b in 0..n {
            for co in 0..cout {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut acc = bias[co];
                        for ci in 0..cin {
                            for ky in 0..k {
                                for kx in 0..k {
                                    let iy = (oy * s + ky) as isize - p as isize;
                                    let ix = (ox * s + kx) as isize - p as isize;
                                    if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                        continue;
                                    }
                                    acc += w.data()[((co * cin + ci) * k + ky) * k + kx]
                                        * x.data()[((b * cin + ci) * h + iy as usize) * wd + ix as usize];
                                }
                            }
                        }
                        out.data_mut()[((b * cout + co) * oh + oy) * ow + ox] = acc;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn conv_matches_direct_loops() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for (s, h, w) in [(1, 8, 8), (2, 8, 8), (2, 7, 9), (1, 5, 3)] {
            let x = random_tensor([2, 3, h, w], &mut rng);
            let k = random_tensor([4, 3, 3, 3], &mut rng);
            let bias = [0.1, -0.2, 0.3, 0.0];
            let got = conv2d(&x, &k, &bias, s, 1).unwrap();
            let want = naive_conv(&x, &k, &bias, s, 1);
            assert_eq!(got.shape(), want.shape());
            for (a, b) in got.data().iter().zip(want.data()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn identity_and_box_kernels() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = random_tensor([1, 1, 6, 5], &mut rng);
        let mut k = Tensor::zeros([1, 1, 3, 3]);
        k.data_mut()[4] = 1.0;
        assert_eq!(conv2d(&x, &k, &[0.0], 1, 1).unwrap(), x);

        let ones = Tensor::filled([1, 1, 5, 5], 1.0);
        let box3 = Tensor::filled([1, 1, 3, 3], 1.0);
        let y = conv2d(&ones, &box3, &[0.0], 1, 1).unwrap();
        for r in 1..4 {
            for c in 1..4 {
                assert_eq!(y.data()[r * 5 + c], 9.0);
            }
        }
        assert_eq!(y.data()[0], 4.0);
    }

    #[test]
    fn stride_two_halves() {
        let x = Tensor::<f64>::zeros([1, 2, 16, 16]);
        let k = Tensor::zeros([5, 2, 3, 3]);
        assert_eq!(conv2d(&x, &k, &[0.0; 5], 2, 1).unwrap().shape(), [1, 5, 8, 8]);
        let bad = Tensor::zeros([5, 3, 3, 3]);
        assert!(matches!(conv2d(&x, &bad, &[0.0; 5], 2, 1), Err(Error::Shape(_))));
    }

    #[test]
    fn deconv_impulse_response() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let w = random_tensor([1, 2, 4, 4], &mut rng);
        let mut x = Tensor::zeros([1, 1, 4, 4]);
        x.data_mut()[2 * 4 + 1] = 1.5; // (y, x) = (2, 1)
        let y = deconv2d(&x, &w, &[0.0, 0.0]).unwrap();
        assert_eq!(y.shape(), [1, 2, 8, 8]);
        for co in 0..2 {
            for oy in 0..8 {
                for ox in 0..8 {
                    // output (oy, ox) receives kernel tap (oy - 2*2 + 1, ox - 2*1 + 1)
                    let ky = oy as isize - 4 + 1;
                    let kx = ox as isize - 2 + 1;
                    let want = if (0..4).contains(&ky) && (0..4).contains(&kx) {
                        1.5 * w.data()[(co * 4 + ky as usize) * 4 + kx as usize]
                    } else {
                        0.0
                    };
                    assert!((y.data()[(co * 8 + oy) * 8 + ox] - want).abs() < 1e-14);
                }
            }
        }
    }

    #[test]
    fn deconv_is_adjoint_of_strided_conv() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for (cin, cout, h, w) in [(3, 2, 4, 4), (2, 5, 3, 6), (1, 1, 8, 8)] {
            let weights = random_tensor([cin, cout, 4, 4], &mut rng);
            let x = random_tensor([2, cin, h, w], &mut rng);
            let y = random_tensor([2, cout, 2 * h, 2 * w], &mut rng);
            let lhs = dot(deconv2d(&x, &weights, &vec![0.0; cout]).unwrap().data(), y.data());
            let rhs = dot(x.data(), conv2d(&y, &weights, &vec![0.0; cin], 2, 1).unwrap().data());
            assert!((lhs - rhs).abs() <= 1e-6 * lhs.abs().max(rhs.abs()), "{} vs {}", lhs, rhs);
        }
    }

    #[test]
    fn leaky_relu_values() {
        let x = Tensor::new([1, 1, 1, 3], vec![-1.0, 3.0, 0.0]).unwrap();
        assert_eq!(leaky_relu(&x, 0.2).data(), &[-0.2, 3.0, 0.0]);
        let g = leaky_relu_backward(&x, 0.2, &Tensor::filled([1, 1, 1, 3], 1.0)).unwrap();
        assert_eq!(g.data(), &[0.2, 1.0, 1.0]);
    }

    #[test]
    fn batchnorm_standardizes() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = random_tensor([4, 3, 5, 5], &mut rng);
        let x = Tensor::new(x.shape(), x.data().iter().map(|v| 3.0 * v + 2.0).collect()).unwrap();
        let gamma = [1.5, 0.5, 2.0];
        let beta = [0.1, -0.3, 0.7];
        let (mut rm, mut rv) = (vec![0.0; 3], vec![1.0; 3]);
        let (y, _) = batchnorm(&x, &gamma, &beta, &mut rm, &mut rv, Mode::Train).unwrap();
        for ch in 0..3 {
            let vals: Vec<f64> = (0..4).flat_map(|b| y.data()[(b * 3 + ch) * 25..(b * 3 + ch + 1) * 25].to_vec()).collect();
            let mean = vals.iter().sum::<f64>() / 100.0;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 100.0;
            assert!((mean - beta[ch]).abs() < 1e-9);
            assert!((var - gamma[ch] * gamma[ch]).abs() < 1e-3);
        }
        assert!(rm.iter().all(|&m| (m - 0.2).abs() < 0.1));
    }

    #[test]
    fn batchnorm_keeps_standard_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let raw = random_tensor([2, 2, 8, 8], &mut rng);
        let mut data = raw.data().to_vec();
        // standardize each channel exactly
        for ch in 0..2 {
            let idx: Vec<usize> = (0..2).flat_map(|b| ((b * 2 + ch) * 64)..((b * 2 + ch + 1) * 64)).collect();
            let mean = idx.iter().map(|&i| data[i]).sum::<f64>() / 128.0;
            let var = idx.iter().map(|&i| (data[i] - mean).powi(2)).sum::<f64>() / 128.0;
            for &i in &idx {
                data[i] = (data[i] - mean) / var.sqrt();
            }
        }
        let x = Tensor::new([2, 2, 8, 8], data).unwrap();
        let (y, _) = batchnorm(&x, &[1.0, 1.0], &[0.0, 0.0], &mut [0.0; 2], &mut [1.0; 2], Mode::Train).unwrap();
        for (a, b) in x.data().iter().zip(y.data()) {
            assert!((a - b).abs() < 1e-4);
        }
    }

    #[test]
    fn batchnorm_rejects_single_value_batch() {
        let x = Tensor::<f64>::filled([1, 2, 1, 1], 0.3);
        assert!(matches!(
            batchnorm(&x, &[1.0; 2], &[0.0; 2], &mut [0.0; 2], &mut [1.0; 2], Mode::Train),
            Err(Error::Batch(1))
        ));
        assert!(batchnorm(&x, &[1.0; 2], &[0.0; 2], &mut [0.0; 2], &mut [1.0; 2], Mode::Eval).is_ok());
    }

    #[test]
    fn tanh_head_and_sigmoid() {
        let z = Tensor::<f64>::zeros([1, 3, 2, 2]);
        assert!(tanh_out(&z).data().iter().all(|&v| v == 0.5));
        assert_eq!(sigmoid(0.0f64), 0.5);
        assert!(sigmoid(-800.0f64) >= 0.0 && sigmoid(800.0f64) <= 1.0);
    }
}
