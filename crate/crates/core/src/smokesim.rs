//! Synthetic smoke: fractal Perlin transmission maps composited onto clean
//! images through `I = J t + A (1 - t)`, and paired dataset generation.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imgio::{self, Image, Plane};
use crate::scalar::Scalar;

/// Smallest transmission accepted by [`invert_scattering`].
pub const MIN_INVERTIBLE_TRANSMISSION: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Density {
    Light,
    Medium,
    Heavy,
}

impl Density {
    pub const ALL: [Density; 3] = [Density::Light, Density::Medium, Density::Heavy];

    /// Lower end of the transmission range; the upper end is always 1.
    pub fn t_floor(self) -> f64 {
        match self {
            Density::Light => 0.75,
            Density::Medium => 0.5,
            Density::Heavy => 0.25,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Density::Light => "light",
            Density::Medium => "medium",
            Density::Heavy => "heavy",
        }
    }
}

impl std::str::FromStr for Density {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "light" => Ok(Density::Light),
            "medium" => Ok(Density::Medium),
            "heavy" => Ok(Density::Heavy),
            other => Err(Error::Argument(format!("unknown density {:?}", other))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SmokeParams {
    pub density: Density,
    pub atmospheric_light: [f64; 3],
    pub perlin_octaves: usize,
    /// Cycles across the longer image side at the first octave.
    pub base_frequency: f64,
    pub persistence: f64,
    pub seed: u64,
}

impl Default for SmokeParams {
    fn default() -> Self {
        Self {
            density: Density::Medium,
            atmospheric_light: [0.9; 3],
            perlin_octaves: 4,
            base_frequency: 4.0,
            persistence: 0.5,
            seed: 0,
        }
    }
}

/// Single-channel `t(x, y)` with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransmissionMap<T = f64> {
    width: usize,
    height: usize,
    data: Vec<T>,
}

impl<T: Scalar> TransmissionMap<T> {
    pub fn new(width: usize, height: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::Shape(format!(
                "{}x{} transmission map needs {} values, got {}",
                width,
                height,
                width * height,
                data.len()
            )));
        }
        if let Some(v) = data
            .iter()
            .find(|v| !v.is_finite() || **v < T::zero() || **v > T::one())
        {
            return Err(Error::Argument(format!("transmission {} outside [0, 1]", v)));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, t: T) -> Result<Self> {
        Self::new(width, height, vec![t; width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn to_plane(&self) -> Plane<T> {
        Plane {
            width: self.width,
            height: self.height,
            data: self.data.clone(),
        }
    }
}

/// Ken Perlin's improved gradient noise over a seeded permutation table.
struct Perlin {
    perm: [u8; 512],
}

impl Perlin {
    fn new(rng: &mut ChaCha8Rng) -> Self {
        let mut p: Vec<u8> = (0..=255).collect();
        p.shuffle(rng);
        let mut perm = [0u8; 512];
        for i in 0..512 {
            perm[i] = p[i & 255];
        }
        Self { perm }
    }

    fn fade(t: f64) -> f64 {
        t * t * t * (t * (t * 6.0 - 15.0) + 10.0)
    }

    fn grad(hash: u8, x: f64, y: f64) -> f64 {
        match hash & 7 {
            0 => x + y,
            1 => -x + y,
            2 => x - y,
            3 => -x - y,
            4 => x,
            5 => -x,
            6 => y,
            _ => -y,
        }
    }

    fn lerp(t: f64, a: f64, b: f64) -> f64 {
        a + t * (b - a)
    }

    fn noise(&self, x: f64, y: f64) -> f64 {
        let (xf, yf) = (x.floor(), y.floor());
        let xi = (xf as i64 & 255) as usize;
        let yi = (yf as i64 & 255) as usize;
        let (x, y) = (x - xf, y - yf);
        let (u, v) = (Self::fade(x), Self::fade(y));
        let p = &self.perm;
        let aa = p[p[xi] as usize + yi];
        let ab = p[p[xi] as usize + yi + 1];
        let ba = p[p[xi + 1] as usize + yi];
        let bb = p[p[xi + 1] as usize + yi + 1];
        Self::lerp(
            v,
            Self::lerp(u, Self::grad(aa, x, y), Self::grad(ba, x - 1.0, y)),
            Self::lerp(u, Self::grad(ab, x, y - 1.0), Self::grad(bb, x - 1.0, y - 1.0)),
        )
    }
}

/// Octave-summed Perlin noise rescaled to `[0, 1]`; deterministic in
/// `params.seed`. A flat field (possible only for degenerate sizes) maps to
/// 0.5.
pub fn perlin_noise<T: Scalar>(width: usize, height: usize, params: &SmokeParams) -> Result<Plane<T>> {
    if width == 0 || height == 0 {
        return Err(Error::Argument(format!("invalid noise size {}x{}", width, height)));
    }
    let octaves = params.perlin_octaves.max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let perlin = Perlin::new(&mut rng);
    let offsets: Vec<(f64, f64)> = (0..octaves)
        .map(|_| (rng.random::<f64>() * 256.0, rng.random::<f64>() * 256.0))
        .collect();
    let side = width.max(height) as f64;

    let mut acc = vec![0.0f64; width * height];
    let mut amplitude = 1.0;
    let mut freq = params.base_frequency;
    for &(ox, oy) in &offsets {
        for y in 0..height {
            let fy = (y as f64 + 0.5) / side * freq + oy;
            for x in 0..width {
                let fx = (x as f64 + 0.5) / side * freq + ox;
                acc[y * width + x] += amplitude * perlin.noise(fx, fy);
            }
        }
        amplitude *= params.persistence;
        freq *= 2.0;
    }

    let lo = acc.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = acc.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    let data = acc
        .into_iter()
        .map(|v| {
            if span > 0.0 {
                T::lit(((v - lo) / span).clamp(0.0, 1.0))
            } else {
                T::lit(0.5)
            }
        })
        .collect();
    Plane::from_vec(width, height, data)
}

/// Affine map of `[0, 1]` noise onto the density's transmission range.
pub fn noise_to_transmission<T: Scalar>(noise: &Plane<T>, density: Density) -> Result<TransmissionMap<T>> {
    let floor = T::lit(density.t_floor());
    let span = T::one() - floor;
    if let Some(v) = noise
        .data
        .iter()
        .find(|v| !v.is_finite() || **v < T::zero() || **v > T::one())
    {
        return Err(Error::Argument(format!("noise value {} outside [0, 1]", v)));
    }
    TransmissionMap::new(
        noise.width,
        noise.height,
        noise.data.iter().map(|&n| floor + span * n).collect(),
    )
}

fn airlight_for<T: Scalar>(airlight: &[T], channels: usize) -> Result<Vec<T>> {
    match airlight.len() {
        1 => Ok(vec![airlight[0]; channels]),
        n if n >= channels => Ok(airlight[..channels].to_vec()),
        n => Err(Error::Shape(format!(
            "{} airlight values for a {}-channel image",
            n, channels
        ))),
    }
}

fn check_map_shape<T: Scalar>(img: &Image<T>, t: &TransmissionMap<T>) -> Result<()> {
    if img.width() != t.width() || img.height() != t.height() {
        return Err(Error::Shape(format!(
            "{}x{} image vs {}x{} transmission",
            img.width(),
            img.height(),
            t.width(),
            t.height()
        )));
    }
    Ok(())
}

/// `I = J t + A (1 - t)` per pixel and channel, clamped to `[0, 1]`.
pub fn composite_smoke<T: Scalar>(
    clean: &Image<T>,
    t: &TransmissionMap<T>,
    airlight: &[T],
) -> Result<Image<T>> {
    check_map_shape(clean, t)?;
    let a = airlight_for(airlight, clean.channels())?;
    let mut data = Vec::with_capacity(clean.data().len());
    for (c, &ac) in a.iter().enumerate() {
        for (&j, &tv) in clean.plane(c).iter().zip(t.data()) {
            data.push(j * tv + ac * (T::one() - tv));
        }
    }
    Image::clamped(clean.width(), clean.height(), clean.channels(), data)
}

/// `J = (I - A (1 - t)) / t`, clamped to `[0, 1]`.
pub fn invert_scattering<T: Scalar>(
    smoky: &Image<T>,
    t: &TransmissionMap<T>,
    airlight: &[T],
) -> Result<Image<T>> {
    check_map_shape(smoky, t)?;
    let floor = T::lit(MIN_INVERTIBLE_TRANSMISSION);
    if let Some((index, v)) = t.data().iter().enumerate().find(|(_, v)| **v < floor) {
        return Err(Error::DegenerateTransmission {
            index,
            value: v.as_f64(),
            floor: MIN_INVERTIBLE_TRANSMISSION,
        });
    }
    let a = airlight_for(airlight, smoky.channels())?;
    let mut data = Vec::with_capacity(smoky.data().len());
    for (c, &ac) in a.iter().enumerate() {
        for (&i, &tv) in smoky.plane(c).iter().zip(t.data()) {
            data.push((i - ac * (T::one() - tv)) / tv);
        }
    }
    Image::clamped(smoky.width(), smoky.height(), smoky.channels(), data)
}

/// Renders one smoky image: noise, transmission and composite.
pub fn render_smoke<T: Scalar>(clean: &Image<T>, params: &SmokeParams) -> Result<(Image<T>, TransmissionMap<T>)> {
    let noise = perlin_noise::<T>(clean.width(), clean.height(), params)?;
    let t = noise_to_transmission(&noise, params.density)?;
    let a: Vec<T> = params.atmospheric_light.iter().map(|&v| T::lit(v)).collect();
    Ok((composite_smoke(clean, &t, &a)?, t))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    /// Paths are relative to the manifest root.
    pub clean: PathBuf,
    pub smoke: PathBuf,
    pub density: Density,
    pub seed: u64,
    pub airlight: [f64; 3],
    pub split: Split,
}

/// Paired clean/smoky records. On disk this is one JSON object per line.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub root: PathBuf,
    pub entries: Vec<ManifestEntry>,
}

pub const MANIFEST_FILE: &str = "manifest.jsonl";

impl DatasetManifest {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut entries = Vec::new();
        for (n, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let entry: ManifestEntry = serde_json::from_str(&line)
                .map_err(|e| Error::format(path, format!("line {}: {}", n + 1, e)))?;
            entries.push(entry);
        }
        let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(Self { root, entries })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut out = String::new();
        for e in &self.entries {
            out.push_str(&serde_json::to_string(e).expect("manifest entries serialize"));
            out.push('\n');
        }
        let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        file.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn subset(&self, split: Split) -> Self {
        Self {
            root: self.root.clone(),
            entries: self.entries.iter().filter(|e| e.split == split).cloned().collect(),
        }
    }

    pub fn filter(&self, keep: impl Fn(&ManifestEntry) -> bool) -> Self {
        Self {
            root: self.root.clone(),
            entries: self.entries.iter().filter(|e| keep(e)).cloned().collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn resolve(&self, rel: &Path) -> PathBuf {
        self.root.join(rel)
    }

    /// Loads `(clean, smoky)` for one entry.
    pub fn load_pair<T: Scalar>(&self, entry: &ManifestEntry) -> Result<(Image<T>, Image<T>)> {
        let clean = imgio::load_image(self.resolve(&entry.clean))?;
        let smoke = imgio::load_image(self.resolve(&entry.smoke))?;
        clean.ensure_same_shape(&smoke)?;
        Ok((clean, smoke))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthParams {
    pub perlin_octaves: usize,
    pub base_frequency: f64,
    pub persistence: f64,
    pub airlight_min: f64,
    pub airlight_max: f64,
    pub densities: Vec<Density>,
    pub val_fraction: f64,
    pub test_fraction: f64,
}

impl Default for SynthParams {
    fn default() -> Self {
        let s = SmokeParams::default();
        Self {
            perlin_octaves: s.perlin_octaves,
            base_frequency: s.base_frequency,
            persistence: s.persistence,
            airlight_min: 0.7,
            airlight_max: 1.0,
            densities: Density::ALL.to_vec(),
            val_fraction: 0.1,
            test_fraction: 0.1,
        }
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Independent stream seed for `(global seed, item, purpose)`.
pub fn derive_seed(seed: u64, item: u64, purpose: u64) -> u64 {
    splitmix64(splitmix64(seed ^ splitmix64(item)) ^ purpose.wrapping_mul(0xD6E8_FEB8_6659_FD93))
}

fn is_image_file(path: &Path) -> bool {
    matches!(
        path.extension()
            .and_then(|e| e.to_str())
            .map(|e| e.to_ascii_lowercase())
            .as_deref(),
        Some("png" | "ppm" | "pgm" | "pnm")
    )
}

/// Lists image files in a directory, sorted by file name.
pub fn list_images(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && is_image_file(p))
        .collect();
    files.sort();
    Ok(files)
}

/// Generates one smoky image per density for every clean image, copies the
/// clean images into `out_dir/clean`, and writes `out_dir/manifest.jsonl`.
///
/// Each image draws its own RNG streams from `(seed, image index)`, so the
/// output does not depend on thread scheduling.
pub fn build_dataset(
    clean_dir: &Path,
    out_dir: &Path,
    params: &SynthParams,
    seed: u64,
) -> Result<DatasetManifest> {
    if params.densities.is_empty() {
        return Err(Error::Argument("no smoke densities requested".into()));
    }
    if !(0.0..=1.0).contains(&params.airlight_min) || params.airlight_max < params.airlight_min || params.airlight_max > 1.0 {
        return Err(Error::Argument(format!(
            "airlight range [{}, {}] must lie inside [0, 1]",
            params.airlight_min, params.airlight_max
        )));
    }
    let files = list_images(clean_dir)?;
    if files.is_empty() {
        return Err(Error::Argument(format!(
            "no readable images in {}",
            clean_dir.display()
        )));
    }
    for sub in ["clean", "smoke"] {
        let d = out_dir.join(sub);
        fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
    }

    let n = files.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(seed, u64::MAX, 1)));
    let n_test = ((n as f64) * params.test_fraction).round() as usize;
    let n_val = ((n as f64) * params.val_fraction).round() as usize;
    let (n_test, n_val) = if n_test + n_val >= n { (0, 0) } else { (n_test, n_val) };
    let mut splits = vec![Split::Train; n];
    for (rank, &i) in order.iter().enumerate() {
        if rank < n_test {
            splits[i] = Split::Test;
        } else if rank < n_test + n_val {
            splits[i] = Split::Val;
        }
    }

    let per_image: Vec<Result<Vec<ManifestEntry>>> = files
        .par_iter()
        .enumerate()
        .map(|(i, path)| {
            let clean: Image<f64> = imgio::load_image(path)?;
            let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("image");
            let clean_rel = PathBuf::from("clean").join(format!("{:05}_{}.png", i, stem));
            imgio::save_image(&clean, out_dir.join(&clean_rel))?;

            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, i as u64, 0));
            let level = rng.random_range(params.airlight_min..=params.airlight_max);
            let airlight = [level; 3];

            let mut entries = Vec::with_capacity(params.densities.len());
            for &density in &params.densities {
                let smoke_seed = derive_seed(seed, i as u64, 1 + density as u64);
                let sp = SmokeParams {
                    density,
                    atmospheric_light: airlight,
                    perlin_octaves: params.perlin_octaves,
                    base_frequency: params.base_frequency,
                    persistence: params.persistence,
                    seed: smoke_seed,
                };
                let (smoky, _) = render_smoke(&clean, &sp)?;
                let smoke_rel =
                    PathBuf::from("smoke").join(format!("{:05}_{}_{}.png", i, stem, density.name()));
                imgio::save_image(&smoky, out_dir.join(&smoke_rel))?;
                entries.push(ManifestEntry {
                    clean: clean_rel.clone(),
                    smoke: smoke_rel,
                    density,
                    seed: smoke_seed,
                    airlight,
                    split: splits[i],
                });
            }
            Ok(entries)
        })
        .collect();

    let mut entries = Vec::with_capacity(n * params.densities.len());
    for r in per_image {
        entries.extend(r?);
    }
    let manifest = DatasetManifest {
        root: out_dir.to_path_buf(),
        entries,
    };
    manifest.save(out_dir.join(MANIFEST_FILE))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn mean_abs_gradient(p: &Plane<f64>) -> f64 {
        let mut acc = 0.0;
        let mut n = 0;
        for y in 0..p.height - 1 {
            for x in 0..p.width - 1 {
                acc += (p.get(y, x + 1) - p.get(y, x)).abs() + (p.get(y + 1, x) - p.get(y, x)).abs();
                n += 2;
            }
        }
        acc / n as f64
    }

    #[test]
    fn noise_is_deterministic() {
        let p = SmokeParams { seed: 42, ..Default::default() };
        let a = perlin_noise::<f64>(48, 40, &p).unwrap();
        let b = perlin_noise::<f64>(48, 40, &p).unwrap();
        assert_eq!(a, b);
        let c = perlin_noise::<f64>(48, 40, &SmokeParams { seed: 43, ..p }).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn noise_range_over_seeds() {
        for seed in 0..100 {
            let p = SmokeParams { seed, ..Default::default() };
            let n = perlin_noise::<f64>(256, 256, &p).unwrap();
            let (lo, hi) = (n.min_value(), n.max_value());
            assert!(lo >= 0.0 && hi <= 1.0);
            assert!(hi - lo > 0.5);
        }
    }

    #[test]
    fn more_octaves_are_rougher() {
        for seed in 0..10 {
            let one = perlin_noise::<f64>(128, 128, &SmokeParams { seed, perlin_octaves: 1, ..Default::default() }).unwrap();
            let four = perlin_noise::<f64>(128, 128, &SmokeParams { seed, perlin_octaves: 4, ..Default::default() }).unwrap();
            assert!(mean_abs_gradient(&one) < mean_abs_gradient(&four));
        }
    }

    #[test]
    fn transmission_range_endpoints() {
        let ones = Plane::filled(4, 4, 1.0);
        let zeros = Plane::filled(4, 4, 0.0);
        let half = Plane::filled(4, 4, 0.5);
        assert!(noise_to_transmission(&ones, Density::Heavy).unwrap().data().iter().all(|&t| t == 1.0));
        assert!(noise_to_transmission(&zeros, Density::Heavy).unwrap().data().iter().all(|&t| t == 0.25));
        assert!(noise_to_transmission(&half, Density::Medium).unwrap().data().iter().all(|&t| t == 0.75));
        assert!(noise_to_transmission(&Plane::filled(2, 2, 1.5), Density::Light).is_err());
    }

    #[test]
    fn composite_examples() {
        let clean = Image::<f64>::filled(3, 2, 3, 0.6).unwrap();
        let a = [1.0];
        let t1 = TransmissionMap::filled(3, 2, 1.0).unwrap();
        assert_eq!(composite_smoke(&clean, &t1, &a).unwrap(), clean);
        let t0 = TransmissionMap::filled(3, 2, 0.0).unwrap();
        let fog = composite_smoke(&clean, &t0, &[0.8, 0.9, 1.0]).unwrap();
        assert_eq!(fog.get(0, 1, 1), 0.8);
        assert_eq!(fog.get(2, 0, 0), 1.0);
        let th = TransmissionMap::filled(3, 2, 0.5).unwrap();
        let mix = composite_smoke(&clean, &th, &a).unwrap();
        assert!(mix.data().iter().all(|&v| (v - 0.8).abs() < 1e-15));
        let wrong = TransmissionMap::filled(2, 2, 0.5).unwrap();
        assert!(matches!(composite_smoke(&clean, &wrong, &a), Err(Error::Shape(_))));
    }

    #[test]
    fn inversion_examples() {
        let img = Image::from_fn(4, 4, 3, |c, y, x| (c + y + x) as f64 / 12.0).unwrap();
        let t1 = TransmissionMap::filled(4, 4, 1.0).unwrap();
        assert_eq!(invert_scattering(&img, &t1, &[0.9]).unwrap(), img);
        let veil = Image::<f64>::filled(4, 4, 3, 0.85).unwrap();
        let t = TransmissionMap::filled(4, 4, 0.3).unwrap();
        let j = invert_scattering(&veil, &t, &[0.85]).unwrap();
        assert!(j.data().iter().all(|&v| (v - 0.85).abs() < 1e-12));
        let thin = TransmissionMap::filled(4, 4, 0.01).unwrap();
        assert!(matches!(
            invert_scattering(&img, &thin, &[0.9]),
            Err(Error::DegenerateTransmission { .. })
        ));
    }

    proptest! {
        #[test]
        fn composite_is_convex_and_invertible(seed in 0u64..5000, t in 0.25f64..=1.0, a in 0.0f64..=1.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let clean = Image::from_fn(6, 5, 3, |_, _, _| rng.random::<f64>()).unwrap();
            let tm = TransmissionMap::filled(6, 5, t).unwrap();
            let smoky = composite_smoke(&clean, &tm, &[a]).unwrap();
            for (&i, &j) in smoky.data().iter().zip(clean.data()) {
                prop_assert!(i >= j.min(a) - 1e-12 && i <= j.max(a) + 1e-12);
            }
            let back = invert_scattering(&smoky, &tm, &[a]).unwrap();
            for (&r, &j) in back.data().iter().zip(clean.data()) {
                prop_assert!((r - j).abs() < 1e-6);
            }
        }

        #[test]
        fn heavier_density_never_raises_transmission(seed in 0u64..1000) {
            let noise = perlin_noise::<f64>(16, 16, &SmokeParams { seed, ..Default::default() }).unwrap();
            let l = noise_to_transmission(&noise, Density::Light).unwrap();
            let m = noise_to_transmission(&noise, Density::Medium).unwrap();
            let h = noise_to_transmission(&noise, Density::Heavy).unwrap();
            for i in 0..256 {
                prop_assert!(h.data()[i] <= m.data()[i] && m.data()[i] <= l.data()[i]);
            }
        }
    }

    fn write_clean_set(dir: &Path, n: usize) {
        for i in 0..n {
            let img = Image::from_fn(24, 20, 3, |c, y, x| {
                0.1 + 0.6 * (((x * (i + 1) + y * 3 + c * 7) % 17) as f64 / 17.0)
            })
            .unwrap();
            imgio::save_image(&img, dir.join(format!("scene{:02}.png", i))).unwrap();
        }
        fs::write(dir.join("notes.txt"), "not an image").unwrap();
    }

    #[test]
    fn dataset_has_three_pairs_per_image_and_is_reproducible() {
        let clean = tempfile::tempdir().unwrap();
        write_clean_set(clean.path(), 10);
        let out1 = tempfile::tempdir().unwrap();
        let out2 = tempfile::tempdir().unwrap();
        let params = SynthParams::default();
        let m1 = build_dataset(clean.path(), out1.path(), &params, 7).unwrap();
        let m2 = build_dataset(clean.path(), out2.path(), &params, 7).unwrap();
        assert_eq!(m1.len(), 30);
        assert_eq!(m1.entries, m2.entries);
        let mut smoke_paths: Vec<_> = m1.entries.iter().map(|e| e.smoke.clone()).collect();
        smoke_paths.sort();
        smoke_paths.dedup();
        assert_eq!(smoke_paths.len(), 30);
        for e in &m1.entries {
            let a = fs::read(out1.path().join(&e.smoke)).unwrap();
            let b = fs::read(out2.path().join(&e.smoke)).unwrap();
            assert_eq!(a, b);
            assert!(e.airlight[0] >= 0.7 && e.airlight[0] <= 1.0);
        }
        assert_eq!(m1.subset(Split::Test).len(), 3);
        assert_eq!(m1.subset(Split::Val).len(), 3);
        let reloaded = DatasetManifest::load(out1.path().join(MANIFEST_FILE)).unwrap();
        assert_eq!(reloaded.entries, m1.entries);
    }

    #[test]
    fn smoke_never_darkens_when_airlight_dominates() {
        let clean = tempfile::tempdir().unwrap();
        write_clean_set(clean.path(), 4);
        let out = tempfile::tempdir().unwrap();
        // clean values stay below 0.7, the smallest airlight
        let m = build_dataset(clean.path(), out.path(), &SynthParams::default(), 3).unwrap();
        for e in &m.entries {
            let (c, s) = m.load_pair::<f64>(e).unwrap();
            let mc: f64 = c.data().iter().sum::<f64>() / c.data().len() as f64;
            let ms: f64 = s.data().iter().sum::<f64>() / s.data().len() as f64;
            assert!(ms >= mc - 1e-6);
        }
    }

    #[test]
    fn empty_directory_is_an_error() {
        let clean = tempfile::tempdir().unwrap();
        let out = tempfile::tempdir().unwrap();
        assert!(matches!(
            build_dataset(clean.path(), out.path(), &SynthParams::default(), 1),
            Err(Error::Argument(_))
        ));
    }
}
