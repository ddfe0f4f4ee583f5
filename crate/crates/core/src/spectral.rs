//! Fourier-domain diagnostics for periodic grid artifacts: centred magnitude
//! spectra, peak detection, a scalar grid score and circular notch masks.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imgio::{Image, Plane};
use crate::scalar::Scalar;

/// Prominence used by [`grid_artifact_score`].
pub const SCORE_PROMINENCE: f64 = 6.0;
/// Smallest side accepted by [`grid_artifact_score`].
pub const MIN_SCORE_SIDE: usize = 32;

/// DC-centred magnitude spectrum. Bin `(row, col)` holds frequency
/// `(v, u) = (row - height/2, col - width/2)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum<T = f64> {
    pub width: usize,
    pub height: usize,
    pub magnitude: Vec<T>,
    pub log_magnitude: Vec<T>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Peak {
    /// Horizontal frequency in bins, `-width/2 ..= width/2 - 1`.
    pub u: i64,
    /// Vertical frequency in bins.
    pub v: i64,
    pub magnitude: f64,
}

fn fft2<T: Scalar>(data: &mut [Complex<T>], w: usize, h: usize, inverse: bool) {
    let mut planner = FftPlanner::<T>::new();
    let (row_fft, col_fft) = if inverse {
        (planner.plan_fft_inverse(w), planner.plan_fft_inverse(h))
    } else {
        (planner.plan_fft_forward(w), planner.plan_fft_forward(h))
    };
    row_fft.process(data);
    let mut col = vec![Complex::new(T::zero(), T::zero()); h];
    for x in 0..w {
        for y in 0..h {
            col[y] = data[y * w + x];
        }
        col_fft.process(&mut col);
        for y in 0..h {
            data[y * w + x] = col[y];
        }
    }
}

/// Index of frequency bin `k` (unshifted) after centring.
#[inline]
fn shift(k: usize, n: usize) -> usize {
    (k + n / 2) % n
}

impl<T: Scalar> Spectrum<T> {
    /// Frequency `(u, v)` of a centred bin index.
    pub fn frequency(&self, index: usize) -> (i64, i64) {
        let (row, col) = (index / self.width, index % self.width);
        (
            col as i64 - (self.width / 2) as i64,
            row as i64 - (self.height / 2) as i64,
        )
    }

    /// Centred index of frequency `(u, v)`, wrapping out-of-range values.
    pub fn index(&self, u: i64, v: i64) -> usize {
        let col = (u + (self.width / 2) as i64).rem_euclid(self.width as i64) as usize;
        let row = (v + (self.height / 2) as i64).rem_euclid(self.height as i64) as usize;
        row * self.width + col
    }

    fn conjugate_index(&self, index: usize) -> usize {
        let (u, v) = self.frequency(index);
        self.index(-u, -v)
    }

    pub fn protect_radius(&self) -> f64 {
        self.width.min(self.height) as f64 / 16.0
    }

    pub fn is_protected(&self, index: usize) -> bool {
        let (u, v) = self.frequency(index);
        ((u * u + v * v) as f64).sqrt() <= self.protect_radius()
    }

    /// Log-magnitude scaled to `[0, 1]` as a gray image.
    pub fn to_image(&self) -> Result<Image<T>> {
        let hi = self.log_magnitude.iter().copied().fold(T::zero(), T::max);
        let data = if hi > T::zero() {
            self.log_magnitude.iter().map(|&v| v / hi).collect()
        } else {
            vec![T::zero(); self.log_magnitude.len()]
        };
        Image::clamped(self.width, self.height, 1, data)
    }
}

/// Magnitude of the 2D DFT of the zero-mean channel-averaged image, DC
/// centred.
pub fn fft_magnitude<T: Scalar>(img: &Image<T>) -> Spectrum<T> {
    let (w, h) = (img.width(), img.height());
    let lum = img.luminance();
    let mean = lum.data.iter().copied().sum::<T>() / T::from_usize_lossy(w * h);
    let mut buf: Vec<Complex<T>> = lum.data.iter().map(|&v| Complex::new(v - mean, T::zero())).collect();
    fft2(&mut buf, w, h, false);
    // bins at round-off level relative to the image's own scale are zeroed
    let floor = T::lit(1e-12) * lum.data.iter().map(|v| v.abs()).sum::<T>();
    let mut magnitude = vec![T::zero(); w * h];
    for y in 0..h {
        for x in 0..w {
            let m = buf[y * w + x].norm();
            magnitude[shift(y, h) * w + shift(x, w)] = if m > floor { m } else { T::zero() };
        }
    }
    let log_magnitude = magnitude.iter().map(|m| m.ln_1p()).collect();
    Spectrum {
        width: w,
        height: h,
        magnitude,
        log_magnitude,
    }
}

fn median(mut values: Vec<f64>) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) / 2.0
    }
}

/// Local maxima outside the protected low-frequency disk whose magnitude
/// exceeds `min_prominence` times the off-disk median. Each peak is followed
/// by its point reflection (bins that are their own reflection appear once);
/// the list is sorted by magnitude, largest first.
pub fn detect_periodic_peaks<T: Scalar>(spec: &Spectrum<T>, min_prominence: f64) -> Vec<Peak> {
    let (w, h) = (spec.width, spec.height);
    let n = w * h;
    // average with the reflection so both halves of a pair agree exactly
    let sym: Vec<f64> = (0..n)
        .map(|i| 0.5 * (spec.magnitude[i].as_f64() + spec.magnitude[spec.conjugate_index(i)].as_f64()))
        .collect();
    let off_disk: Vec<f64> = (0..n).filter(|&i| !spec.is_protected(i)).map(|i| sym[i]).collect();
    let max_off = off_disk.iter().copied().fold(0.0, f64::max);
    if max_off <= 0.0 {
        return Vec::new();
    }
    let threshold = (min_prominence * median(off_disk)).max(1e-6 * max_off);

    let mut found: Vec<(usize, f64)> = Vec::new();
    for i in 0..n {
        let partner = spec.conjugate_index(i);
        if partner < i || spec.is_protected(i) || sym[i] <= threshold {
            continue;
        }
        let (row, col) = ((i / w) as i64, (i % w) as i64);
        let mut is_max = true;
        'nb: for dy in -1..=1i64 {
            for dx in -1..=1i64 {
                if dx == 0 && dy == 0 {
                    continue;
                }
                let r = (row + dy).rem_euclid(h as i64) as usize;
                let c = (col + dx).rem_euclid(w as i64) as usize;
                let j = r * w + c;
                if j == i {
                    continue;
                }
                if sym[j] > sym[i] || (sym[j] == sym[i] && j < i) {
                    is_max = false;
                    break 'nb;
                }
            }
        }
        if is_max {
            found.push((i, sym[i]));
        }
    }
    found.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap_or(std::cmp::Ordering::Equal).then(a.0.cmp(&b.0)));

    let mut peaks = Vec::with_capacity(found.len() * 2);
    for (i, m) in found {
        let (u, v) = spec.frequency(i);
        peaks.push(Peak { u, v, magnitude: m });
        let partner = spec.conjugate_index(i);
        if partner != i {
            let (u, v) = spec.frequency(partner);
            peaks.push(Peak { u, v, magnitude: m });
        }
    }
    peaks
}

fn check_score_size<T: Scalar>(img: &Image<T>) -> Result<()> {
    if img.width() < MIN_SCORE_SIDE || img.height() < MIN_SCORE_SIDE {
        return Err(Error::Size(format!(
            "grid score needs at least {0}x{0} pixels, got {1}x{2}",
            MIN_SCORE_SIDE,
            img.width(),
            img.height()
        )));
    }
    Ok(())
}

/// Share of off-disk spectral energy held by detected periodic peaks, each
/// dilated by one bin.
pub fn grid_artifact_score<T: Scalar>(img: &Image<T>) -> Result<f64> {
    check_score_size(img)?;
    let spec = fft_magnitude(img);
    Ok(score_spectrum(&spec, &detect_periodic_peaks(&spec, SCORE_PROMINENCE)))
}

/// Peak energy ratio of `spec` for an already detected peak list.
pub fn score_spectrum<T: Scalar>(spec: &Spectrum<T>, peaks: &[Peak]) -> f64 {
    if peaks.is_empty() {
        return 0.0;
    }
    let n = spec.width * spec.height;
    let mut marked = vec![false; n];
    for p in peaks {
        for dv in -1..=1 {
            for du in -1..=1 {
                marked[spec.index(p.u + du, p.v + dv)] = true;
            }
        }
    }
    let (mut peak_energy, mut total) = (0.0, 0.0);
    for i in (0..n).filter(|&i| !spec.is_protected(i)) {
        let e = spec.magnitude[i].as_f64().powi(2);
        total += e;
        if marked[i] {
            peak_energy += e;
        }
    }
    if total > 0.0 {
        peak_energy / total
    } else {
        0.0
    }
}

/// Binary pass map over the centred spectrum (`true` = keep).
#[derive(Debug, Clone, PartialEq)]
pub struct NotchMask {
    pub width: usize,
    pub height: usize,
    pub pass: Vec<bool>,
}

impl NotchMask {
    pub fn all_pass(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            pass: vec![true; width * height],
        }
    }

    /// Circular notches of `radius` bins around every peak and its
    /// reflection, distances measured on the periodic frequency grid. The
    /// protected low-frequency disk always passes.
    pub fn from_peaks(width: usize, height: usize, peaks: &[Peak], radius: f64) -> Self {
        let probe = Spectrum::<f64> {
            width,
            height,
            magnitude: Vec::new(),
            log_magnitude: Vec::new(),
        };
        let wrap = |d: i64, n: usize| {
            let n = n as i64;
            let d = d.rem_euclid(n);
            d.min(n - d)
        };
        let mut pass = vec![true; width * height];
        for (i, keep) in pass.iter_mut().enumerate() {
            if probe.is_protected(i) {
                continue;
            }
            let (u, v) = probe.frequency(i);
            for p in peaks {
                for (pu, pv) in [(p.u, p.v), (-p.u, -p.v)] {
                    let du = wrap(u - pu, width) as f64;
                    let dv = wrap(v - pv, height) as f64;
                    if (du * du + dv * dv).sqrt() <= radius {
                        *keep = false;
                    }
                }
            }
        }
        Self { width, height, pass }
    }

    /// True when the mask equals its own point reflection about DC.
    pub fn is_symmetric(&self) -> bool {
        let probe = Spectrum::<f64> {
            width: self.width,
            height: self.height,
            magnitude: Vec::new(),
            log_magnitude: Vec::new(),
        };
        (0..self.pass.len()).all(|i| self.pass[i] == self.pass[probe.conjugate_index(i)])
    }
}

/// Applies `mask` to every channel in the frequency domain.
pub fn notch_filter<T: Scalar>(img: &Image<T>, mask: &NotchMask) -> Result<Image<T>> {
    let (w, h) = (img.width(), img.height());
    if mask.width != w || mask.height != h {
        return Err(Error::Shape(format!(
            "mask {}x{} does not match image {}x{}",
            mask.width, mask.height, w, h
        )));
    }
    let scale = T::one() / T::from_usize_lossy(w * h);
    let mut out = Vec::with_capacity(img.data().len());
    for c in 0..img.channels() {
        let mut buf: Vec<Complex<T>> = img.plane(c).iter().map(|&v| Complex::new(v, T::zero())).collect();
        fft2(&mut buf, w, h, false);
        for y in 0..h {
            for x in 0..w {
                if !mask.pass[shift(y, h) * w + shift(x, w)] {
                    buf[y * w + x] = Complex::new(T::zero(), T::zero());
                }
            }
        }
        fft2(&mut buf, w, h, true);
        out.extend(buf.iter().map(|z| z.re * scale));
    }
    Image::clamped(w, h, img.channels(), out)
}

/// `amplitude * (cos(2 pi x / p) + cos(2 pi y / p)) / 2`, the additive grid
/// pattern used in tests and calibration.
pub fn grid_pattern<T: Scalar>(width: usize, height: usize, period: usize, amplitude: f64) -> Plane<T> {
    let k = std::f64::consts::TAU / period as f64;
    let mut p = Plane::filled(width, height, T::zero());
    for y in 0..height {
        for x in 0..width {
            let v = amplitude * 0.5 * ((k * x as f64).cos() + (k * y as f64).cos());
            p.set(y, x, T::lit(v));
        }
    }
    p
}

/// Adds a plane to every channel and clamps to `[0, 1]`.
pub fn add_pattern<T: Scalar>(img: &Image<T>, pattern: &Plane<T>) -> Result<Image<T>> {
    if pattern.width != img.width() || pattern.height != img.height() {
        return Err(Error::Shape("pattern size differs from image".into()));
    }
    let mut data = Vec::with_capacity(img.data().len());
    for c in 0..img.channels() {
        data.extend(img.plane(c).iter().zip(&pattern.data).map(|(&a, &b)| a + b));
    }
    Image::clamped(img.width(), img.height(), img.channels(), data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenes::tissue_scene;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cosine_image(w: usize, h: usize, fu: f64, fv: f64, amp: f64) -> Image<f64> {
        Image::from_fn(w, h, 1, |_, y, x| {
            0.5 + amp * (std::f64::consts::TAU * (fu * x as f64 / w as f64 + fv * y as f64 / h as f64)).cos()
        })
        .unwrap()
    }

    #[test]
    fn constant_image_has_empty_spectrum() {
        let img = Image::filled(32, 32, 3, 0.4).unwrap();
        let s = fft_magnitude(&img);
        assert!(s.magnitude.iter().all(|&m| m < 1e-12));
        assert!(detect_periodic_peaks(&s, 50.0).is_empty());
        assert_eq!(grid_artifact_score(&img).unwrap(), 0.0);
    }

    #[test]
    fn horizontal_cosine_lands_on_two_bins() {
        let img = Image::from_fn(64, 64, 1, |_, _, x| 0.5 + 0.25 * (std::f64::consts::FRAC_PI_2 * x as f64).cos()).unwrap();
        let s = fft_magnitude(&img);
        let mut order: Vec<usize> = (0..s.magnitude.len()).collect();
        order.sort_by(|&a, &b| s.magnitude[b].partial_cmp(&s.magnitude[a]).unwrap());
        let mut top: Vec<(i64, i64)> = order[..2].iter().map(|&i| s.frequency(i)).collect();
        top.sort();
        assert_eq!(top, vec![(-16, 0), (16, 0)]);
        assert!(s.magnitude[order[2]] < 1e-9);
    }

    #[test]
    fn parseval_on_random_images() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for (w, h) in [(64, 64), (48, 40), (33, 17)] {
            let img = Image::from_fn(w, h, 3, |_, _, _| rng.random::<f64>()).unwrap();
            let s = fft_magnitude(&img);
            let lum = img.luminance();
            let mean = lum.mean();
            let spatial: f64 = lum.data.iter().map(|v| (v - mean).powi(2)).sum();
            let freq: f64 = s.magnitude.iter().map(|m| m * m).sum::<f64>() / (w * h) as f64;
            assert!((spatial - freq).abs() / spatial < 1e-6);
        }
    }

    #[test]
    fn checkerboard_peaks_at_nyquist_corner() {
        let base = tissue_scene(64, 64, 1).unwrap();
        let checker = Plane::from_vec(64, 64, (0..4096).map(|i| if (i / 64 + i % 64) % 2 == 0 { 0.05 } else { -0.05 }).collect()).unwrap();
        let img = add_pattern(&base, &checker).unwrap();
        let peaks = detect_periodic_peaks(&fft_magnitude(&img), 50.0);
        assert!(peaks.iter().any(|p| p.u == -32 && p.v == -32), "{:?}", peaks);
    }

    #[test]
    fn single_tone_gives_one_pair() {
        let img = cosine_image(64, 64, 10.0, 7.0, 0.2);
        let peaks = detect_periodic_peaks(&fft_magnitude(&img), 50.0);
        assert_eq!(peaks.len(), 2, "{:?}", peaks);
        assert_eq!((peaks[0].u, peaks[0].v), (-peaks[1].u, -peaks[1].v));
        assert_eq!((peaks[0].u.abs(), peaks[0].v.abs()), (10, 7));
        assert_eq!(peaks[0].magnitude, peaks[1].magnitude);
    }

    #[test]
    fn clean_scenes_have_no_peaks_at_fifty() {
        for seed in 0..20 {
            let img = tissue_scene(64, 64, seed).unwrap();
            let peaks = detect_periodic_peaks(&fft_magnitude(&img), 50.0);
            assert!(peaks.is_empty(), "seed {}: {:?}", seed, peaks);
        }
    }

    #[test]
    fn grid_score_increases_with_grid() {
        for seed in 0..20 {
            let img = tissue_scene(64, 64, 100 + seed).unwrap();
            let base = grid_artifact_score(&img).unwrap();
            let mut last = base;
            for amp in [0.02, 0.05, 0.1] {
                let s = grid_artifact_score(&add_pattern(&img, &grid_pattern(64, 64, 4, amp)).unwrap()).unwrap();
                assert!(s > last, "seed {} amp {}: {} <= {}", seed, amp, s, last);
                last = s;
            }
        }
    }

    #[test]
    fn grid_score_is_scale_invariant() {
        let img = add_pattern(&tissue_scene(64, 64, 3).unwrap(), &grid_pattern(64, 64, 4, 0.05)).unwrap();
        let half = img.map(|v| 0.5 * v);
        let (a, b) = (grid_artifact_score(&img).unwrap(), grid_artifact_score(&half).unwrap());
        assert!(a > 0.0);
        assert!((a - b).abs() < 1e-9 * a.max(1.0));
    }

    #[test]
    fn small_image_is_rejected() {
        let img = Image::filled(31, 64, 1, 0.5).unwrap();
        assert!(matches!(grid_artifact_score(&img), Err(Error::Size(_))));
    }

    #[test]
    fn all_pass_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let img = Image::from_fn(40, 24, 3, |_, _, _| rng.random::<f64>()).unwrap();
        let out = notch_filter(&img, &NotchMask::all_pass(40, 24)).unwrap();
        let err = img.data().iter().zip(out.data()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err < 1e-6);
        assert!(notch_filter(&img, &NotchMask::all_pass(24, 40)).is_err());
    }

    #[test]
    fn notch_removes_tone() {
        let base = tissue_scene(64, 64, 4).unwrap();
        let tone = cosine_image(64, 64, 12.0, 5.0, 0.1);
        let pattern = Plane::from_vec(64, 64, tone.data().iter().map(|v| v - 0.5).collect()).unwrap();
        let img = add_pattern(&base, &pattern).unwrap();
        let peaks = detect_periodic_peaks(&fft_magnitude(&img), 50.0);
        let mask = NotchMask::from_peaks(64, 64, &peaks, 1.5);
        assert!(mask.is_symmetric());
        let out = notch_filter(&img, &mask).unwrap();
        // project the residual onto the tone
        let residual: f64 = (0..3)
            .map(|c| {
                out.plane(c)
                    .iter()
                    .zip(&pattern.data)
                    .map(|(o, p)| o * p)
                    .sum::<f64>()
            })
            .sum::<f64>()
            / (3.0 * pattern.data.iter().map(|p| p * p).sum::<f64>());
        assert!(residual.abs() < 0.01, "{}", residual);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn masks_are_point_symmetric(u in -32i64..32, v in -32i64..32, r in 0.5f64..4.0) {
            let mask = NotchMask::from_peaks(64, 48, &[Peak { u, v, magnitude: 1.0 }], r);
            prop_assert!(mask.is_symmetric());
            prop_assert!(mask.pass[mask.width * (mask.height / 2) + mask.width / 2]);
        }

        #[test]
        fn peaks_come_in_reflected_pairs(seed in 0u64..500) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let img = Image::from_fn(32, 32, 1, |_, _, _| rng.random::<f64>()).unwrap();
            let s = fft_magnitude(&img);
            let peaks = detect_periodic_peaks(&s, 2.0);
            let mut i = 0;
            while i < peaks.len() {
                let p = peaks[i];
                if s.index(p.u, p.v) == s.index(-p.u, -p.v) {
                    i += 1;
                    continue;
                }
                let q = peaks[i + 1];
                prop_assert_eq!(s.index(q.u, q.v), s.index(-p.u, -p.v));
                i += 2;
            }
            for w in peaks.windows(2) {
                prop_assert!(w[0].magnitude >= w[1].magnitude);
            }
        }
    }
}
