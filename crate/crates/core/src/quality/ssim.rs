//! SSIM and MS-SSIM with analytic gradients.
//!
//! Local statistics use a separable Gaussian window placed only where it fits
//! entirely inside the image ("valid" placement). Per-position SSIM is
//!
//! ```text
//! (2 mu_x mu_y + c1) (2 sigma_xy + c2) / ((mu_x^2 + mu_y^2 + c1) (sigma_x^2 + sigma_y^2 + c2))
//! ```
//!
//! and the image score is the mean over channels and positions. Gradients
//! are taken with respect to the test image `y`, treating the local moments
//! `E[y]`, `E[y^2]` and `E[xy]` as intermediate variables and scattering their
//! sensitivities back through the adjoint of the window filter.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imgio::Image;
use crate::scalar::Scalar;

/// Standard five-scale MS-SSIM exponents, finest scale first.
pub const MS_SSIM_WEIGHTS: [f64; 5] = [0.0448, 0.2856, 0.3001, 0.2363, 0.1333];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SsimParams<T = f64> {
    pub window_size: usize,
    pub sigma: T,
    pub k1: T,
    pub k2: T,
    pub dynamic_range: T,
}

impl<T: Scalar> Default for SsimParams<T> {
    fn default() -> Self {
        Self {
            window_size: 11,
            sigma: T::lit(1.5),
            k1: T::lit(0.01),
            k2: T::lit(0.03),
            dynamic_range: T::one(),
        }
    }
}

impl<T: Scalar> SsimParams<T> {
    pub fn c1(&self) -> T {
        let v = self.k1 * self.dynamic_range;
        v * v
    }

    pub fn c2(&self) -> T {
        let v = self.k2 * self.dynamic_range;
        v * v
    }

    pub fn validate(&self) -> Result<()> {
        if self.window_size == 0 || self.window_size % 2 == 0 {
            return Err(Error::Argument(format!(
                "SSIM window size must be odd, got {}",
                self.window_size
            )));
        }
        if !(self.sigma > T::zero()) {
            return Err(Error::Argument("SSIM window sigma must be positive".into()));
        }
        Ok(())
    }

    /// Normalized 1-D Gaussian taps; the 2-D window is their outer product.
    pub fn kernel(&self) -> Vec<T> {
        let r = (self.window_size / 2) as f64;
        let s = self.sigma.as_f64();
        let raw: Vec<f64> = (0..self.window_size)
            .map(|i| {
                let d = i as f64 - r;
                (-d * d / (2.0 * s * s)).exp()
            })
            .collect();
        let total: f64 = raw.iter().sum();
        raw.into_iter().map(|v| T::lit(v / total)).collect()
    }

    /// Full `window_size x window_size` weights, row-major.
    pub fn window(&self) -> Vec<T> {
        let k = self.kernel();
        let mut out = Vec::with_capacity(k.len() * k.len());
        for &a in &k {
            for &b in &k {
                out.push(a * b);
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MsSsimParams<T = f64> {
    /// Per-scale exponents, finest first; the scale count is `weights.len()`.
    pub weights: Vec<T>,
    pub base: SsimParams<T>,
}

impl<T: Scalar> Default for MsSsimParams<T> {
    fn default() -> Self {
        Self {
            weights: MS_SSIM_WEIGHTS.iter().map(|&w| T::lit(w)).collect(),
            base: SsimParams::default(),
        }
    }
}

impl<T: Scalar> MsSsimParams<T> {
    pub fn scales(&self) -> usize {
        self.weights.len()
    }

    /// The first `scales` standard weights renormalized to sum to one.
    pub fn with_scales(scales: usize) -> Result<Self> {
        if scales == 0 || scales > MS_SSIM_WEIGHTS.len() {
            return Err(Error::Argument(format!(
                "MS-SSIM supports 1..={} scales, got {}",
                MS_SSIM_WEIGHTS.len(),
                scales
            )));
        }
        let head = &MS_SSIM_WEIGHTS[..scales];
        let total: f64 = head.iter().sum();
        Ok(Self {
            weights: head.iter().map(|&w| T::lit(w / total)).collect(),
            base: SsimParams::default(),
        })
    }

    /// Largest standard parameterization (at most five scales) that fits a
    /// `width x height` image with the default window.
    pub fn fitting(width: usize, height: usize) -> Result<Self> {
        let window = SsimParams::<T>::default().window_size;
        let side = width.min(height);
        let mut scales = 0;
        while scales < MS_SSIM_WEIGHTS.len() && side >= window << scales {
            scales += 1;
        }
        if scales == 0 {
            return Err(Error::Size(format!(
                "{}x{} image is smaller than the {}-pixel SSIM window",
                width, height, window
            )));
        }
        Self::with_scales(scales)
    }

    pub fn min_side(&self) -> usize {
        self.base.window_size << (self.scales().max(1) - 1)
    }

    pub fn validate(&self) -> Result<()> {
        self.base.validate()?;
        if self.weights.is_empty() {
            return Err(Error::Argument("MS-SSIM needs at least one scale".into()));
        }
        let total: f64 = self.weights.iter().map(|w| w.as_f64()).sum();
        if (total - 1.0).abs() > 1e-4 {
            return Err(Error::Argument(format!(
                "MS-SSIM weights sum to {}, expected 1",
                total
            )));
        }
        Ok(())
    }
}

/// Gradient with the shape of an image but unconstrained values.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient<T = f64> {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<T>,
}

#[derive(Clone, Copy)]
enum Term {
    Ssim,
    ContrastStructure,
}

/// Separable valid-mode correlation of one plane.
fn filter_valid<T: Scalar>(src: &[T], w: usize, h: usize, k: &[T]) -> Vec<T> {
    let n = k.len();
    let (ow, oh) = (w + 1 - n, h + 1 - n);
    let mut tmp = vec![T::zero(); ow * h];
    for y in 0..h {
        let row = &src[y * w..(y + 1) * w];
        let out = &mut tmp[y * ow..(y + 1) * ow];
        for (i, &kv) in k.iter().enumerate() {
            for (o, &s) in out.iter_mut().zip(&row[i..i + ow]) {
                *o += kv * s;
            }
        }
    }
    let mut out = vec![T::zero(); ow * oh];
    for y in 0..oh {
        let dst = &mut out[y * ow..(y + 1) * ow];
        for (i, &kv) in k.iter().enumerate() {
            let src_row = &tmp[(y + i) * ow..(y + i + 1) * ow];
            for (o, &s) in dst.iter_mut().zip(src_row) {
                *o += kv * s;
            }
        }
    }
    out
}

/// Adjoint of [`filter_valid`]: scatters an output-sized map back onto the
/// full plane.
fn filter_valid_adjoint<T: Scalar>(g: &[T], w: usize, h: usize, k: &[T]) -> Vec<T> {
    let n = k.len();
    let (ow, oh) = (w + 1 - n, h + 1 - n);
    let mut tmp = vec![T::zero(); ow * h];
    for y in 0..oh {
        let src = &g[y * ow..(y + 1) * ow];
        for (i, &kv) in k.iter().enumerate() {
            let dst = &mut tmp[(y + i) * ow..(y + i + 1) * ow];
            for (d, &s) in dst.iter_mut().zip(src) {
                *d += kv * s;
            }
        }
    }
    let mut out = vec![T::zero(); w * h];
    for y in 0..h {
        let src = &tmp[y * ow..(y + 1) * ow];
        let dst = &mut out[y * w..(y + 1) * w];
        for (i, &kv) in k.iter().enumerate() {
            for (d, &s) in dst[i..i + ow].iter_mut().zip(src) {
                *d += kv * s;
            }
        }
    }
    out
}

/// Sum over valid positions of one channel's SSIM (or contrast-structure)
/// map, optionally with the gradient of that sum with respect to `y`.
fn channel_term<T: Scalar>(
    x: &[T],
    y: &[T],
    w: usize,
    h: usize,
    kernel: &[T],
    c1: T,
    c2: T,
    term: Term,
    want_grad: bool,
) -> (T, Option<Vec<T>>) {
    let xx: Vec<T> = x.iter().map(|&v| v * v).collect();
    let yy: Vec<T> = y.iter().map(|&v| v * v).collect();
    let xy: Vec<T> = x.iter().zip(y).map(|(&a, &b)| a * b).collect();
    let mx = filter_valid(x, w, h, kernel);
    let my = filter_valid(y, w, h, kernel);
    let exx = filter_valid(&xx, w, h, kernel);
    let eyy = filter_valid(&yy, w, h, kernel);
    let exy = filter_valid(&xy, w, h, kernel);

    let two = T::lit(2.0);
    let m = mx.len();
    let mut total = T::zero();
    let (mut d_my, mut d_eyy, mut d_exy) = if want_grad {
        (vec![T::zero(); m], vec![T::zero(); m], vec![T::zero(); m])
    } else {
        (Vec::new(), Vec::new(), Vec::new())
    };

    for p in 0..m {
        let (ux, uy) = (mx[p], my[p]);
        let sxx = exx[p] - ux * ux;
        let syy = eyy[p] - uy * uy;
        let sxy = exy[p] - ux * uy;
        let a2 = two * sxy + c2;
        let b2 = sxx + syy + c2;
        let cs = a2 / b2;
        match term {
            Term::ContrastStructure => {
                total += cs;
                if want_grad {
                    d_my[p] = (two * uy * cs - two * ux) / b2;
                    d_exy[p] = two / b2;
                    d_eyy[p] = -cs / b2;
                }
            }
            Term::Ssim => {
                let a1 = two * ux * uy + c1;
                let b1 = ux * ux + uy * uy + c1;
                let l = a1 / b1;
                let s = l * cs;
                total += s;
                if want_grad {
                    let dl = two * (ux - l * uy) / b1;
                    let dcs = (two * uy * cs - two * ux) / b2;
                    d_my[p] = dl * cs + l * dcs;
                    d_exy[p] = two * l / b2;
                    d_eyy[p] = -s / b2;
                }
            }
        }
    }

    if !want_grad {
        return (total, None);
    }
    let g_my = filter_valid_adjoint(&d_my, w, h, kernel);
    let g_exy = filter_valid_adjoint(&d_exy, w, h, kernel);
    let g_eyy = filter_valid_adjoint(&d_eyy, w, h, kernel);
    let grad = (0..w * h)
        .map(|q| g_my[q] + x[q] * g_exy[q] + two * y[q] * g_eyy[q])
        .collect();
    (total, Some(grad))
}

/// Mean of a term over channels and valid positions, with its gradient.
fn mean_term<T: Scalar>(
    x: &[T],
    y: &[T],
    w: usize,
    h: usize,
    channels: usize,
    params: &SsimParams<T>,
    term: Term,
    want_grad: bool,
) -> (T, Option<Vec<T>>) {
    let kernel = params.kernel();
    let n = params.window_size;
    let count = T::from_usize_lossy((w + 1 - n) * (h + 1 - n) * channels);
    let plane = w * h;
    let mut total = T::zero();
    let mut grad = if want_grad { Some(vec![T::zero(); plane * channels]) } else { None };
    for c in 0..channels {
        let range = c * plane..(c + 1) * plane;
        let (s, g) = channel_term(
            &x[range.clone()],
            &y[range.clone()],
            w,
            h,
            &kernel,
            params.c1(),
            params.c2(),
            term,
            want_grad,
        );
        total += s;
        if let (Some(dst), Some(g)) = (grad.as_mut(), g) {
            for (d, v) in dst[range].iter_mut().zip(g) {
                *d = v / count;
            }
        }
    }
    (total / count, grad)
}

fn check_planar(len_x: usize, len_y: usize, w: usize, h: usize, channels: usize) -> Result<()> {
    if len_x != w * h * channels || len_y != len_x {
        return Err(Error::Shape(format!(
            "planar buffers of {} and {} values for {}x{}x{}",
            len_x, len_y, w, h, channels
        )));
    }
    Ok(())
}

/// SSIM on raw planar buffers (`channels` planes of `w x h`), with the
/// gradient with respect to `y` when requested.
pub fn ssim_planar<T: Scalar>(
    x: &[T],
    y: &[T],
    w: usize,
    h: usize,
    channels: usize,
    params: &SsimParams<T>,
    want_grad: bool,
) -> Result<(T, Option<Vec<T>>)> {
    params.validate()?;
    check_planar(x.len(), y.len(), w, h, channels)?;
    if w < params.window_size || h < params.window_size {
        return Err(Error::Size(format!(
            "{}x{} image is smaller than the {}-pixel window",
            w, h, params.window_size
        )));
    }
    Ok(mean_term(x, y, w, h, channels, params, Term::Ssim, want_grad))
}

fn pool2<T: Scalar>(src: &[T], w: usize, h: usize, channels: usize) -> Vec<T> {
    let (nw, nh) = (w / 2, h / 2);
    let quarter = T::lit(0.25);
    let mut out = Vec::with_capacity(nw * nh * channels);
    for c in 0..channels {
        let p = &src[c * w * h..(c + 1) * w * h];
        for y in 0..nh {
            for x in 0..nw {
                let i = 2 * y * w + 2 * x;
                out.push((p[i] + p[i + 1] + p[i + w] + p[i + w + 1]) * quarter);
            }
        }
    }
    out
}

fn pool2_adjoint<T: Scalar>(g: &[T], w: usize, h: usize, channels: usize) -> Vec<T> {
    let (nw, nh) = (w / 2, h / 2);
    let quarter = T::lit(0.25);
    let mut out = vec![T::zero(); w * h * channels];
    for c in 0..channels {
        let dst = &mut out[c * w * h..(c + 1) * w * h];
        let src = &g[c * nw * nh..(c + 1) * nw * nh];
        for y in 0..nh {
            for x in 0..nw {
                let v = src[y * nw + x] * quarter;
                let i = 2 * y * w + 2 * x;
                dst[i] = v;
                dst[i + 1] = v;
                dst[i + w] = v;
                dst[i + w + 1] = v;
            }
        }
    }
    out
}

fn weighted_product<T: Scalar>(values: &[T], weights: &[T]) -> T {
    values
        .iter()
        .zip(weights)
        .fold(T::one(), |acc, (&v, &wt)| acc * v.powf(wt))
}

/// MS-SSIM on raw planar buffers.
///
/// Scales `1..S-1` contribute the mean contrast-structure term, the coarsest
/// scale contributes the full SSIM mean; the result is their weighted
/// geometric product. Non-positive terms clamp the score (and gradient) to 0.
pub fn ms_ssim_planar<T: Scalar>(
    x: &[T],
    y: &[T],
    w: usize,
    h: usize,
    channels: usize,
    params: &MsSsimParams<T>,
    want_grad: bool,
) -> Result<(T, Option<Vec<T>>)> {
    params.validate()?;
    check_planar(x.len(), y.len(), w, h, channels)?;
    if w.min(h) < params.min_side() {
        return Err(Error::Size(format!(
            "{}x{} image too small for {} MS-SSIM scales (needs {} pixels per side)",
            w,
            h,
            params.scales(),
            params.min_side()
        )));
    }

    let scales = params.scales();
    let mut values = Vec::with_capacity(scales);
    let mut grads = Vec::with_capacity(scales);
    let mut dims = Vec::with_capacity(scales);
    let (mut cx, mut cy) = (x.to_vec(), y.to_vec());
    let (mut cw, mut ch) = (w, h);
    for s in 0..scales {
        let term = if s + 1 == scales {
            Term::Ssim
        } else {
            Term::ContrastStructure
        };
        let (v, g) = mean_term(&cx, &cy, cw, ch, channels, &params.base, term, want_grad);
        values.push(v);
        grads.push(g);
        dims.push((cw, ch));
        if s + 1 < scales {
            cx = pool2(&cx, cw, ch, channels);
            cy = pool2(&cy, cw, ch, channels);
            cw /= 2;
            ch /= 2;
        }
    }

    if values.iter().any(|&v| v <= T::zero()) {
        let grad = want_grad.then(|| vec![T::zero(); x.len()]);
        return Ok((T::zero(), grad));
    }
    let score = weighted_product(&values, &params.weights);
    if !want_grad {
        return Ok((score, None));
    }

    // d score / d y_0 = score * sum_s w_s / v_s * P_s^T (d v_s / d y_s)
    let mut acc: Option<Vec<T>> = None;
    for s in (0..scales).rev() {
        let g = grads[s].as_ref().expect("gradient requested");
        let coeff = score * params.weights[s] / values[s];
        let mut cur: Vec<T> = g.iter().map(|&v| v * coeff).collect();
        if let Some(prev) = acc.take() {
            for (c, p) in cur.iter_mut().zip(prev) {
                *c += p;
            }
        }
        if s > 0 {
            let (pw, ph) = dims[s - 1];
            cur = pool2_adjoint(&cur, pw, ph, channels);
        }
        acc = Some(cur);
    }
    Ok((score, acc))
}

pub fn ssim<T: Scalar>(reference: &Image<T>, test: &Image<T>, params: &SsimParams<T>) -> Result<T> {
    reference.ensure_same_shape(test)?;
    ssim_planar(
        reference.data(),
        test.data(),
        reference.width(),
        reference.height(),
        reference.channels(),
        params,
        false,
    )
    .map(|(v, _)| v)
}

/// `-ssim(reference, test)`.
pub fn ssim_loss<T: Scalar>(
    reference: &Image<T>,
    test: &Image<T>,
    params: &SsimParams<T>,
) -> Result<T> {
    ssim(reference, test, params).map(|v| -v)
}

/// Analytic `d ssim / d test`.
pub fn ssim_grad<T: Scalar>(
    reference: &Image<T>,
    test: &Image<T>,
    params: &SsimParams<T>,
) -> Result<Gradient<T>> {
    reference.ensure_same_shape(test)?;
    let (_, g) = ssim_planar(
        reference.data(),
        test.data(),
        reference.width(),
        reference.height(),
        reference.channels(),
        params,
        true,
    )?;
    Ok(Gradient {
        width: test.width(),
        height: test.height(),
        channels: test.channels(),
        data: g.expect("gradient requested"),
    })
}

pub fn ms_ssim<T: Scalar>(
    reference: &Image<T>,
    test: &Image<T>,
    params: &MsSsimParams<T>,
) -> Result<T> {
    reference.ensure_same_shape(test)?;
    ms_ssim_planar(
        reference.data(),
        test.data(),
        reference.width(),
        reference.height(),
        reference.channels(),
        params,
        false,
    )
    .map(|(v, _)| v)
}

/// Analytic `d ms_ssim / d test`.
pub fn ms_ssim_grad<T: Scalar>(
    reference: &Image<T>,
    test: &Image<T>,
    params: &MsSsimParams<T>,
) -> Result<Gradient<T>> {
    reference.ensure_same_shape(test)?;
    let (_, g) = ms_ssim_planar(
        reference.data(),
        test.data(),
        reference.width(),
        reference.height(),
        reference.channels(),
        params,
        true,
    )?;
    Ok(Gradient {
        width: test.width(),
        height: test.height(),
        channels: test.channels(),
        data: g.expect("gradient requested"),
    })
}
