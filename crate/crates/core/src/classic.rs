//! Classical desmoking baselines: dark channel prior dehazing with guided
//! filter refinement, and a morphological atmospheric-veil remover.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imgio::{Image, Plane};
use crate::scalar::Scalar;
use crate::smokesim::TransmissionMap;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DcpParams {
    pub patch_size: usize,
    pub omega: f64,
    pub t_floor: f64,
    pub airlight_fraction: f64,
    pub guided_radius: usize,
    pub guided_eps: f64,
}

impl Default for DcpParams {
    fn default() -> Self {
        Self {
            patch_size: 15,
            omega: 0.95,
            t_floor: 0.1,
            airlight_fraction: 0.001,
            guided_radius: 40,
            guided_eps: 1e-3,
        }
    }
}

impl DcpParams {
    pub fn validate(&self) -> Result<()> {
        if self.patch_size % 2 == 0 {
            return Err(Error::Argument(format!(
                "patch size must be odd, got {}",
                self.patch_size
            )));
        }
        if !(self.omega > 0.0 && self.omega <= 1.0) {
            return Err(Error::Argument(format!("omega {} outside (0, 1]", self.omega)));
        }
        if !(self.t_floor > 0.0 && self.t_floor < 1.0) {
            return Err(Error::Argument(format!("t_floor {} outside (0, 1)", self.t_floor)));
        }
        if !(self.airlight_fraction > 0.0 && self.airlight_fraction <= 1.0) {
            return Err(Error::Argument(format!(
                "airlight fraction {} outside (0, 1]",
                self.airlight_fraction
            )));
        }
        if self.guided_eps < 0.0 {
            return Err(Error::Argument("guided filter eps must be non-negative".into()));
        }
        Ok(())
    }
}

/// Sliding-window extremum with edge replication; `pick` is `min` or `max`.
fn extremum_filter<T: Scalar>(src: &Plane<T>, radius: usize, pick: fn(T, T) -> T) -> Plane<T> {
    if radius == 0 {
        return src.clone();
    }
    let (w, h) = (src.width, src.height);
    let mut tmp = vec![T::zero(); w * h];
    for y in 0..h {
        let row = &src.data[y * w..(y + 1) * w];
        for x in 0..w {
            let lo = x.saturating_sub(radius);
            let hi = (x + radius).min(w - 1);
            tmp[y * w + x] = row[lo..=hi].iter().copied().reduce(pick).expect("non-empty window");
        }
    }
    let mut out = vec![T::zero(); w * h];
    for y in 0..h {
        let lo = y.saturating_sub(radius);
        let hi = (y + radius).min(h - 1);
        for x in 0..w {
            let mut v = tmp[lo * w + x];
            for yy in lo + 1..=hi {
                v = pick(v, tmp[yy * w + x]);
            }
            out[y * w + x] = v;
        }
    }
    Plane {
        width: w,
        height: h,
        data: out,
    }
}

pub fn min_filter<T: Scalar>(src: &Plane<T>, radius: usize) -> Plane<T> {
    extremum_filter(src, radius, T::min)
}

pub fn max_filter<T: Scalar>(src: &Plane<T>, radius: usize) -> Plane<T> {
    extremum_filter(src, radius, T::max)
}

fn channel_min_planar<T: Scalar>(planes: &[Vec<T>], w: usize, h: usize) -> Plane<T> {
    let mut data = planes[0].clone();
    for p in &planes[1..] {
        for (d, &v) in data.iter_mut().zip(p) {
            *d = d.min(v);
        }
    }
    Plane {
        width: w,
        height: h,
        data,
    }
}

fn require_rgb<T: Scalar>(img: &Image<T>) -> Result<()> {
    if img.channels() != 3 {
        return Err(Error::Shape(format!(
            "expected a 3-channel image, got {} channel(s)",
            img.channels()
        )));
    }
    Ok(())
}

/// Channel minimum followed by a `patch x patch` minimum filter.
pub fn dark_channel<T: Scalar>(img: &Image<T>, patch: usize) -> Result<Plane<T>> {
    require_rgb(img)?;
    Ok(min_filter(&img.channel_min(), patch / 2))
}

/// Picks the airlight among the brightest `fraction` of dark-channel pixels:
/// the candidate with the largest channel sum, ties to the lowest index.
pub fn estimate_airlight<T: Scalar>(img: &Image<T>, dark: &Plane<T>, fraction: f64) -> Result<Vec<T>> {
    let n = img.pixels_per_channel();
    if dark.data.len() != n {
        return Err(Error::Shape(format!(
            "dark channel has {} pixels, image has {}",
            dark.data.len(),
            n
        )));
    }
    let count = ((fraction * n as f64).ceil() as usize).clamp(1, n);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        dark.data[b]
            .partial_cmp(&dark.data[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let channel_sum = |i: usize| (0..img.channels()).map(|c| img.plane(c)[i]).sum::<T>();
    let mut best = order[0];
    for &i in &order[1..count] {
        let s = channel_sum(i);
        let bs = channel_sum(best);
        if s > bs || (s == bs && i < best) {
            best = i;
        }
    }
    Ok((0..img.channels()).map(|c| img.plane(c)[best]).collect())
}

fn check_airlight<T: Scalar>(airlight: &[T], channels: usize) -> Result<()> {
    if airlight.len() != channels {
        return Err(Error::Shape(format!(
            "{} airlight values for {} channels",
            airlight.len(),
            channels
        )));
    }
    if let Some((channel, v)) = airlight.iter().enumerate().find(|(_, v)| !(**v > T::zero())) {
        return Err(Error::DegenerateAirlight {
            channel,
            value: v.as_f64(),
        });
    }
    Ok(())
}

/// `1 - omega * dark_channel(I / A)` clamped to `[t_floor, 1]`, without
/// refinement.
pub fn estimate_transmission_raw<T: Scalar>(
    img: &Image<T>,
    airlight: &[T],
    params: &DcpParams,
) -> Result<TransmissionMap<T>> {
    require_rgb(img)?;
    params.validate()?;
    check_airlight(airlight, img.channels())?;
    let planes: Vec<Vec<T>> = (0..3)
        .map(|c| img.plane(c).iter().map(|&v| v / airlight[c]).collect())
        .collect();
    let dark = min_filter(&channel_min_planar(&planes, img.width(), img.height()), params.patch_size / 2);
    let omega = T::lit(params.omega);
    let floor = T::lit(params.t_floor);
    TransmissionMap::new(
        img.width(),
        img.height(),
        dark.data
            .iter()
            .map(|&d| (T::one() - omega * d).max(floor).min(T::one()))
            .collect(),
    )
}

/// Raw transmission refined by a guided filter on the gray input.
pub fn estimate_transmission<T: Scalar>(
    img: &Image<T>,
    airlight: &[T],
    params: &DcpParams,
) -> Result<TransmissionMap<T>> {
    let raw = estimate_transmission_raw(img, airlight, params)?;
    let refined = guided_filter(
        &img.luminance(),
        &raw.to_plane(),
        params.guided_radius,
        T::lit(params.guided_eps),
    )?;
    let floor = T::lit(params.t_floor);
    TransmissionMap::new(
        img.width(),
        img.height(),
        refined.data.iter().map(|&v| v.max(floor).min(T::one())).collect(),
    )
}

/// `J = (I - A) / max(t, t_floor) + A`, clamped. Pixels with `t == 1` are
/// passed through unchanged.
pub fn recover_scene<T: Scalar>(
    img: &Image<T>,
    t: &TransmissionMap<T>,
    airlight: &[T],
    t_floor: f64,
) -> Result<Image<T>> {
    if img.width() != t.width() || img.height() != t.height() {
        return Err(Error::Shape("transmission map does not match image".into()));
    }
    check_airlight(airlight, img.channels())?;
    let floor = T::lit(t_floor);
    let mut data = Vec::with_capacity(img.data().len());
    for (c, &a) in airlight.iter().enumerate() {
        for (&i, &tv) in img.plane(c).iter().zip(t.data()) {
            data.push(if tv == T::one() {
                i
            } else {
                (i - a) / tv.max(floor) + a
            });
        }
    }
    Image::clamped(img.width(), img.height(), img.channels(), data)
}

/// Lower bound applied to airlight estimated from the image itself, so a
/// saturated brightest pixel cannot zero a channel.
pub const AIRLIGHT_FLOOR: f64 = 0.01;

fn floored_airlight<T: Scalar>(img: &Image<T>, patch: usize, fraction: f64) -> Result<Vec<T>> {
    let dark = dark_channel(img, patch)?;
    let floor = T::lit(AIRLIGHT_FLOOR);
    Ok(estimate_airlight(img, &dark, fraction)?
        .into_iter()
        .map(|a| a.max(floor))
        .collect())
}

pub fn dehaze_dcp<T: Scalar>(img: &Image<T>, params: &DcpParams) -> Result<Image<T>> {
    require_rgb(img)?;
    params.validate()?;
    let airlight = floored_airlight(img, params.patch_size, params.airlight_fraction)?;
    let t = estimate_transmission(img, &airlight, params)?;
    recover_scene(img, &t, &airlight, params.t_floor)
}

/// Box mean over a `(2r+1)^2` window clipped to the image.
fn box_mean<T: Scalar>(src: &[T], w: usize, h: usize, r: usize) -> Vec<T> {
    // integral image in f64 keeps the running sums exact enough for f32 inputs
    let stride = w + 1;
    let mut integral = vec![0.0f64; stride * (h + 1)];
    for y in 0..h {
        let mut row = 0.0;
        for x in 0..w {
            row += src[y * w + x].as_f64();
            integral[(y + 1) * stride + x + 1] = integral[y * stride + x + 1] + row;
        }
    }
    let mut out = Vec::with_capacity(w * h);
    for y in 0..h {
        let (y0, y1) = (y.saturating_sub(r), (y + r + 1).min(h));
        for x in 0..w {
            let (x0, x1) = (x.saturating_sub(r), (x + r + 1).min(w));
            let s = integral[y1 * stride + x1] - integral[y0 * stride + x1] - integral[y1 * stride + x0]
                + integral[y0 * stride + x0];
            out.push(T::lit(s / ((y1 - y0) * (x1 - x0)) as f64));
        }
    }
    out
}

/// Edge-preserving guided filter of `src` steered by `guide`.
pub fn guided_filter<T: Scalar>(guide: &Plane<T>, src: &Plane<T>, radius: usize, eps: T) -> Result<Plane<T>> {
    if guide.width != src.width || guide.height != src.height {
        return Err(Error::Shape("guide and source differ in size".into()));
    }
    let (w, h) = (src.width, src.height);
    let ii: Vec<T> = guide.data.iter().map(|&v| v * v).collect();
    let ip: Vec<T> = guide.data.iter().zip(&src.data).map(|(&a, &b)| a * b).collect();
    let mean_i = box_mean(&guide.data, w, h, radius);
    let mean_p = box_mean(&src.data, w, h, radius);
    let corr_i = box_mean(&ii, w, h, radius);
    let corr_ip = box_mean(&ip, w, h, radius);
    let mut a = Vec::with_capacity(w * h);
    let mut b = Vec::with_capacity(w * h);
    for k in 0..w * h {
        let var = corr_i[k] - mean_i[k] * mean_i[k];
        let cov = corr_ip[k] - mean_i[k] * mean_p[k];
        let ak = cov / (var + eps);
        a.push(ak);
        b.push(mean_p[k] - ak * mean_i[k]);
    }
    let mean_a = box_mean(&a, w, h, radius);
    let mean_b = box_mean(&b, w, h, radius);
    let data = (0..w * h)
        .map(|k| mean_a[k] * guide.data[k] + mean_b[k])
        .collect();
    Ok(Plane {
        width: w,
        height: h,
        data,
    })
}

pub const VEIL_RADIUS: usize = 15;

/// `strength` times the morphological opening of the channel minimum,
/// capped by the channel minimum itself.
pub fn estimate_veil<T: Scalar>(img: &Image<T>, strength: f64) -> Result<Plane<T>> {
    require_rgb(img)?;
    if !(0.0..=1.0).contains(&strength) {
        return Err(Error::Argument(format!("veil strength {} outside [0, 1]", strength)));
    }
    let m = img.channel_min();
    let opened = max_filter(&min_filter(&m, VEIL_RADIUS), VEIL_RADIUS);
    let s = T::lit(strength);
    let data = opened
        .data
        .iter()
        .zip(&m.data)
        .map(|(&o, &mv)| (s * o).min(mv))
        .collect();
    Ok(Plane {
        width: m.width,
        height: m.height,
        data,
    })
}

/// Subtracts the estimated veil: `(I - V) / (1 - V / A)`, clamped.
pub fn remove_veil<T: Scalar>(img: &Image<T>, strength: f64) -> Result<Image<T>> {
    let veil = estimate_veil(img, strength)?;
    if strength == 0.0 {
        return Ok(img.clone());
    }
    let dcp = DcpParams::default();
    let airlight = floored_airlight(img, dcp.patch_size, dcp.airlight_fraction)?;
    let min_den = T::lit(0.1);
    let mut data = Vec::with_capacity(img.data().len());
    for (c, &a) in airlight.iter().enumerate() {
        for (&i, &v) in img.plane(c).iter().zip(&veil.data) {
            data.push((i - v) / (T::one() - v / a).max(min_den));
        }
    }
    Image::clamped(img.width(), img.height(), 3, data)
}
