//! Image representation, colour conversion, file I/O and geometric
//! preprocessing.
//!
//! [`Image`] stores planar, channel-major data (`data[c][y][x]` flattened)
//! with every value finite and inside `[0, 1]`. Anything that can leave that
//! range (gradients, spectra, intermediate maps) lives in a [`Plane`] or a
//! plain buffer instead.

use std::fs;
use std::io::Write;
use std::path::Path;

use image::{DynamicImage, ImageFormat, ImageReader};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct Image<T = f64> {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<T>,
}

impl<T: Scalar> Image<T> {
    /// Validating constructor.
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<T>) -> Result<Self> {
        check_dims(width, height, channels)?;
        if data.len() != width * height * channels {
            return Err(Error::Shape(format!(
                "{}x{}x{} image needs {} values, got {}",
                width,
                height,
                channels,
                width * height * channels,
                data.len()
            )));
        }
        if let Some(i) = data
            .iter()
            .position(|v| !v.is_finite() || *v < T::zero() || *v > T::one())
        {
            return Err(Error::Argument(format!(
                "image value {} at index {} outside [0, 1]",
                data[i], i
            )));
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    /// Builds an image from arbitrary values, clamping into `[0, 1]`.
    /// Non-finite values become 0.
    pub fn clamped(width: usize, height: usize, channels: usize, mut data: Vec<T>) -> Result<Self> {
        check_dims(width, height, channels)?;
        if data.len() != width * height * channels {
            return Err(Error::Shape(format!(
                "expected {} values, got {}",
                width * height * channels,
                data.len()
            )));
        }
        for v in &mut data {
            *v = clamp_unit(*v);
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: T) -> Result<Self> {
        Self::new(width, height, channels, vec![value; width * height * channels])
    }

    /// Builds an image from `f(channel, y, x)`, clamping the results.
    pub fn from_fn(
        width: usize,
        height: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> T,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(width * height * channels);
        for c in 0..channels {
            for y in 0..height {
                for x in 0..width {
                    data.push(f(c, y, x));
                }
            }
        }
        Self::clamped(width, height, channels, data)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn pixels_per_channel(&self) -> usize {
        self.width * self.height
    }

    pub fn plane(&self, c: usize) -> &[T] {
        let n = self.pixels_per_channel();
        &self.data[c * n..(c + 1) * n]
    }

    #[inline]
    pub fn get(&self, c: usize, y: usize, x: usize) -> T {
        self.data[(c * self.height + y) * self.width + x]
    }

    /// Returns the image with every value passed through `f` and clamped.
    pub fn map(&self, mut f: impl FnMut(T) -> T) -> Self {
        Self {
            width: self.width,
            height: self.height,
            channels: self.channels,
            data: self.data.iter().map(|&v| clamp_unit(f(v))).collect(),
        }
    }

    pub fn cast<U: Scalar>(&self) -> Image<U> {
        Image {
            width: self.width,
            height: self.height,
            channels: self.channels,
            data: self.data.iter().map(|&v| clamp_unit(U::lit(v.as_f64()))).collect(),
        }
    }

    /// Per-pixel channel mean.
    pub fn luminance(&self) -> Plane<T> {
        let n = self.pixels_per_channel();
        let inv = T::one() / T::from_usize_lossy(self.channels);
        let mut out = vec![T::zero(); n];
        for c in 0..self.channels {
            for (o, &v) in out.iter_mut().zip(self.plane(c)) {
                *o += v;
            }
        }
        out.iter_mut().for_each(|v| *v *= inv);
        Plane {
            width: self.width,
            height: self.height,
            data: out,
        }
    }

    /// Per-pixel minimum over channels.
    pub fn channel_min(&self) -> Plane<T> {
        let mut out = self.plane(0).to_vec();
        for c in 1..self.channels {
            for (o, &v) in out.iter_mut().zip(self.plane(c)) {
                *o = o.min(v);
            }
        }
        Plane {
            width: self.width,
            height: self.height,
            data: out,
        }
    }

    pub fn crop(&self, region: Region) -> Result<Self> {
        if region.x + region.width > self.width || region.y + region.height > self.height {
            return Err(Error::Shape(format!(
                "crop {:?} exceeds {}x{} image",
                region, self.width, self.height
            )));
        }
        let mut data = Vec::with_capacity(region.width * region.height * self.channels);
        for c in 0..self.channels {
            for y in region.y..region.y + region.height {
                let row = (c * self.height + y) * self.width;
                data.extend_from_slice(&self.data[row + region.x..row + region.x + region.width]);
            }
        }
        Self::new(region.width, region.height, self.channels, data)
    }

    /// Replicates a single channel to three, or returns a clone for RGB.
    pub fn to_rgb(&self) -> Self {
        if self.channels == 3 {
            return self.clone();
        }
        let mut data = Vec::with_capacity(self.data.len() * 3);
        for _ in 0..3 {
            data.extend_from_slice(&self.data);
        }
        Self {
            width: self.width,
            height: self.height,
            channels: 3,
            data,
        }
    }

    pub fn ensure_same_shape(&self, other: &Image<T>) -> Result<()> {
        if self.width != other.width || self.height != other.height || self.channels != other.channels
        {
            return Err(Error::Shape(format!(
                "{}x{}x{} vs {}x{}x{}",
                self.width, self.height, self.channels, other.width, other.height, other.channels
            )));
        }
        Ok(())
    }
}

fn check_dims(width: usize, height: usize, channels: usize) -> Result<()> {
    if width == 0 || height == 0 {
        return Err(Error::Argument(format!("empty image {}x{}", width, height)));
    }
    if channels != 1 && channels != 3 {
        return Err(Error::Shape(format!("unsupported channel count {}", channels)));
    }
    Ok(())
}

#[inline]
pub(crate) fn clamp_unit<T: Scalar>(v: T) -> T {
    if v.is_nan() {
        T::zero()
    } else {
        v.max(T::zero()).min(T::one())
    }
}

/// Unconstrained single-channel raster.
#[derive(Debug, Clone, PartialEq)]
pub struct Plane<T = f64> {
    pub width: usize,
    pub height: usize,
    pub data: Vec<T>,
}

impl<T: Scalar> Plane<T> {
    pub fn filled(width: usize, height: usize, value: T) -> Self {
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn from_vec(width: usize, height: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::Shape(format!(
                "{}x{} plane needs {} values, got {}",
                width,
                height,
                width * height,
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> T {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, v: T) {
        self.data[y * self.width + x] = v;
    }

    pub fn mean(&self) -> T {
        self.data.iter().copied().sum::<T>() / T::from_usize_lossy(self.data.len())
    }

    pub fn min_value(&self) -> T {
        self.data.iter().copied().fold(T::infinity(), T::min)
    }

    pub fn max_value(&self) -> T {
        self.data.iter().copied().fold(T::neg_infinity(), T::max)
    }

    /// Single-channel image view of the plane, clamped to `[0, 1]`.
    pub fn to_image(&self) -> Image<T> {
        Image::clamped(self.width, self.height, 1, self.data.clone())
            .expect("plane dimensions are valid")
    }
}

/// CIELAB raster (D65 reference white).
#[derive(Debug, Clone, PartialEq)]
pub struct LabImage<T = f64> {
    pub width: usize,
    pub height: usize,
    pub l: Vec<T>,
    pub a: Vec<T>,
    pub b: Vec<T>,
}

impl<T: Scalar> LabImage<T> {
    pub fn from_pixels(width: usize, height: usize, pixels: &[[T; 3]]) -> Result<Self> {
        if pixels.len() != width * height {
            return Err(Error::Shape(format!(
                "{}x{} Lab image needs {} pixels, got {}",
                width,
                height,
                width * height,
                pixels.len()
            )));
        }
        Ok(Self {
            width,
            height,
            l: pixels.iter().map(|p| p[0]).collect(),
            a: pixels.iter().map(|p| p[1]).collect(),
            b: pixels.iter().map(|p| p[2]).collect(),
        })
    }

    pub fn pixel(&self, i: usize) -> [T; 3] {
        [self.l[i], self.a[i], self.b[i]]
    }

    pub fn len(&self) -> usize {
        self.l.len()
    }

    pub fn is_empty(&self) -> bool {
        self.l.is_empty()
    }
}

/// Axis-aligned pixel rectangle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct Region {
    pub x: usize,
    pub y: usize,
    pub width: usize,
    pub height: usize,
}

impl Region {
    pub fn full(width: usize, height: usize) -> Self {
        Self {
            x: 0,
            y: 0,
            width,
            height,
        }
    }
}

/// Reads a PNG (8 or 16 bit) or PNM file. Alpha is dropped; gray inputs
/// stay single-channel.
pub fn load_image<T: Scalar>(path: impl AsRef<Path>) -> Result<Image<T>> {
    let path = path.as_ref();
    let reader = ImageReader::open(path)
        .map_err(|e| Error::io(path, e))?
        .with_guessed_format()
        .map_err(|e| Error::io(path, e))?;
    match reader.format() {
        Some(ImageFormat::Png) | Some(ImageFormat::Pnm) => {}
        Some(other) => return Err(Error::format(path, format!("{:?} is not supported", other))),
        None => return Err(Error::format(path, "unrecognised image format")),
    }
    let decoded = reader
        .decode()
        .map_err(|e| Error::format(path, e.to_string()))?;
    let (w, h) = (decoded.width() as usize, decoded.height() as usize);

    let (channels, raw, max): (usize, Vec<u16>, f64) = match decoded {
        DynamicImage::ImageLuma8(_) | DynamicImage::ImageLumaA8(_) => (
            1,
            decoded.to_luma8().into_raw().into_iter().map(u16::from).collect(),
            255.0,
        ),
        DynamicImage::ImageRgb8(_) | DynamicImage::ImageRgba8(_) => (
            3,
            decoded.to_rgb8().into_raw().into_iter().map(u16::from).collect(),
            255.0,
        ),
        DynamicImage::ImageLuma16(_) | DynamicImage::ImageLumaA16(_) => {
            (1, decoded.to_luma16().into_raw(), 65535.0)
        }
        DynamicImage::ImageRgb16(_) | DynamicImage::ImageRgba16(_) => {
            (3, decoded.to_rgb16().into_raw(), 65535.0)
        }
        other => {
            return Err(Error::format(
                path,
                format!("unsupported pixel layout {:?}", other.color()),
            ))
        }
    };

    // interleaved -> planar
    let n = w * h;
    let mut data = vec![T::zero(); n * channels];
    for (i, &v) in raw.iter().enumerate() {
        let (p, c) = (i / channels, i % channels);
        data[c * n + p] = T::lit(f64::from(v) / max);
    }
    Image::new(w, h, channels, data)
}

/// Quantizes a `[0, 1]` value to a byte with round-half-up.
#[inline]
pub fn quantize_u8<T: Scalar>(v: T) -> u8 {
    let scaled = (v.as_f64() * 255.0 + 0.5).floor();
    scaled.clamp(0.0, 255.0) as u8
}

fn interleave_u8<T: Scalar>(img: &Image<T>) -> Vec<u8> {
    let n = img.pixels_per_channel();
    let c = img.channels();
    let mut out = vec![0u8; n * c];
    for ch in 0..c {
        for (p, &v) in img.plane(ch).iter().enumerate() {
            out[p * c + ch] = quantize_u8(v);
        }
    }
    out
}

/// Writes an 8-bit PNG, PPM (P6) or PGM (P5), chosen by file extension.
pub fn save_image<T: Scalar>(img: &Image<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(|e| e.to_ascii_lowercase())
        .unwrap_or_default();
    let (w, h) = (img.width() as u32, img.height() as u32);
    match ext.as_str() {
        "png" => {
            let color = if img.channels() == 1 {
                image::ExtendedColorType::L8
            } else {
                image::ExtendedColorType::Rgb8
            };
            image::save_buffer_with_format(path, &interleave_u8(img), w, h, color, ImageFormat::Png)
                .map_err(|e| match e {
                    image::ImageError::IoError(io) => Error::io(path, io),
                    other => Error::format(path, other.to_string()),
                })
        }
        "ppm" | "pgm" => {
            let rgb;
            let (magic, src) = if ext == "ppm" {
                rgb = img.to_rgb();
                ("P6", &rgb)
            } else if img.channels() == 1 {
                ("P5", img)
            } else {
                return Err(Error::format(path, "PGM output needs a single-channel image"));
            };
            let mut bytes = format!("{}\n{} {}\n255\n", magic, w, h).into_bytes();
            bytes.extend_from_slice(&interleave_u8(src));
            let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
            file.write_all(&bytes).map_err(|e| Error::io(path, e))
        }
        _ => Err(Error::format(path, format!("cannot write extension {:?}", ext))),
    }
}

// sRGB primaries, D65 white.
const RGB_TO_XYZ: [[f64; 3]; 3] = [
    [0.4124564, 0.3575761, 0.1804375],
    [0.2126729, 0.7151522, 0.0721750],
    [0.0193339, 0.1191920, 0.9503041],
];
const WHITE_D65: [f64; 3] = [0.95047, 1.0, 1.08883];

#[inline]
fn srgb_to_linear(c: f64) -> f64 {
    if c <= 0.04045 {
        c / 12.92
    } else {
        ((c + 0.055) / 1.055).powf(2.4)
    }
}

#[inline]
fn lab_f(t: f64) -> f64 {
    const DELTA: f64 = 6.0 / 29.0;
    if t > DELTA * DELTA * DELTA {
        t.cbrt()
    } else {
        t / (3.0 * DELTA * DELTA) + 4.0 / 29.0
    }
}

/// Converts one sRGB triple in `[0, 1]` to CIELAB.
pub fn srgb_pixel_to_lab(rgb: [f64; 3]) -> [f64; 3] {
    let lin = rgb.map(srgb_to_linear);
    let mut f = [0.0; 3];
    for (k, row) in RGB_TO_XYZ.iter().enumerate() {
        let xyz = row[0] * lin[0] + row[1] * lin[1] + row[2] * lin[2];
        f[k] = lab_f(xyz / WHITE_D65[k]);
    }
    let l = (116.0 * f[1] - 16.0).clamp(0.0, 100.0);
    [l, 500.0 * (f[0] - f[1]), 200.0 * (f[1] - f[2])]
}

pub fn rgb_to_lab<T: Scalar>(img: &Image<T>) -> Result<LabImage<T>> {
    if img.channels() != 3 {
        return Err(Error::Shape(format!(
            "Lab conversion needs 3 channels, got {}",
            img.channels()
        )));
    }
    let n = img.pixels_per_channel();
    let (r, g, b) = (img.plane(0), img.plane(1), img.plane(2));
    let mut out = LabImage {
        width: img.width(),
        height: img.height(),
        l: Vec::with_capacity(n),
        a: Vec::with_capacity(n),
        b: Vec::with_capacity(n),
    };
    for i in 0..n {
        let lab = srgb_pixel_to_lab([r[i].as_f64(), g[i].as_f64(), b[i].as_f64()]);
        out.l.push(T::lit(lab[0]));
        out.a.push(T::lit(lab[1]));
        out.b.push(T::lit(lab[2]));
    }
    Ok(out)
}

/// Bilinear resize with half-pixel-centre alignment and edge clamping.
pub fn resize_bilinear<T: Scalar>(img: &Image<T>, width: usize, height: usize) -> Result<Image<T>> {
    if width == 0 || height == 0 {
        return Err(Error::Argument(format!("invalid target size {}x{}", width, height)));
    }
    if width == img.width() && height == img.height() {
        return Ok(img.clone());
    }
    let xs = sample_taps(img.width(), width);
    let ys = sample_taps(img.height(), height);
    let mut data = Vec::with_capacity(width * height * img.channels());
    for c in 0..img.channels() {
        let src = img.plane(c);
        let sw = img.width();
        for &(y0, y1, fy) in &ys {
            let fy = T::lit(fy);
            for &(x0, x1, fx) in &xs {
                let fx = T::lit(fx);
                let top = src[y0 * sw + x0] * (T::one() - fx) + src[y0 * sw + x1] * fx;
                let bot = src[y1 * sw + x0] * (T::one() - fx) + src[y1 * sw + x1] * fx;
                data.push(top * (T::one() - fy) + bot * fy);
            }
        }
    }
    Image::clamped(width, height, img.channels(), data)
}

fn sample_taps(src: usize, dst: usize) -> Vec<(usize, usize, f64)> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|i| {
            let pos = ((i as f64 + 0.5) * scale - 0.5).clamp(0.0, (src - 1) as f64);
            let i0 = pos.floor() as usize;
            let i1 = (i0 + 1).min(src - 1);
            (i0, i1, pos - i0 as f64)
        })
        .collect()
}

/// Aspect-preserving resize so the image fits `target_w x target_h`, then
/// symmetric zero padding. Returns the image and the content region.
pub fn resize_and_pad_region<T: Scalar>(
    img: &Image<T>,
    target_w: usize,
    target_h: usize,
) -> Result<(Image<T>, Region)> {
    if target_w == 0 || target_h == 0 {
        return Err(Error::Argument(format!(
            "invalid target size {}x{}",
            target_w, target_h
        )));
    }
    let scale = (target_w as f64 / img.width() as f64).min(target_h as f64 / img.height() as f64);
    let nw = ((img.width() as f64 * scale).round() as usize).clamp(1, target_w);
    let nh = ((img.height() as f64 * scale).round() as usize).clamp(1, target_h);
    let resized = resize_bilinear(img, nw, nh)?;
    if nw == target_w && nh == target_h {
        return Ok((resized, Region::full(target_w, target_h)));
    }
    let region = Region {
        x: (target_w - nw) / 2,
        y: (target_h - nh) / 2,
        width: nw,
        height: nh,
    };
    let mut data = vec![T::zero(); target_w * target_h * img.channels()];
    for c in 0..img.channels() {
        let src = resized.plane(c);
        for y in 0..nh {
            let dst = (c * target_h + region.y + y) * target_w + region.x;
            data[dst..dst + nw].copy_from_slice(&src[y * nw..(y + 1) * nw]);
        }
    }
    Ok((Image::new(target_w, target_h, img.channels(), data)?, region))
}

pub fn resize_and_pad<T: Scalar>(img: &Image<T>, target_w: usize, target_h: usize) -> Result<Image<T>> {
    resize_and_pad_region(img, target_w, target_h).map(|(img, _)| img)
}
