//! Procedural tissue-like scenes used as clean images when no real
//! footage is at hand.
//!
//! Colours follow the red/pink palette of laparoscopic views: the blue
//! channel stays low, so the dark channel of a clean scene is small, as the
//! dehazing baselines expect.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::imgio::{save_image, Image};
use crate::smokesim::{derive_seed, perlin_noise, SmokeParams};

const TISSUE_DARK: [f64; 3] = [0.52, 0.10, 0.09];
const TISSUE_LIGHT: [f64; 3] = [0.88, 0.42, 0.33];
const VESSEL: [f64; 3] = [0.40, 0.04, 0.07];
const FAT: [f64; 3] = [0.90, 0.72, 0.38];

fn noise(w: usize, h: usize, seed: u64, octaves: usize, freq: f64) -> Result<Vec<f64>> {
    let p = SmokeParams {
        seed,
        perlin_octaves: octaves,
        base_frequency: freq,
        persistence: 0.5,
        ..Default::default()
    };
    Ok(perlin_noise::<f64>(w, h, &p)?.data)
}

fn mix(a: [f64; 3], b: [f64; 3], t: f64) -> [f64; 3] {
    [0, 1, 2].map(|c| a[c] + (b[c] - a[c]) * t)
}

/// Renders one scene: mottled tissue, a fatty patch, smooth shading and a
/// few meandering vessels.
pub fn tissue_scene(width: usize, height: usize, seed: u64) -> Result<Image<f64>> {
    if width == 0 || height == 0 {
        return Err(Error::Argument(format!("invalid scene size {}x{}", width, height)));
    }
    let texture = noise(width, height, derive_seed(seed, 0, 10), 5, 3.0)?;
    let fat = noise(width, height, derive_seed(seed, 0, 11), 3, 1.5)?;
    let shade = noise(width, height, derive_seed(seed, 0, 12), 2, 1.0)?;

    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 0, 13));
    let side = width.max(height) as f64;
    let vessels: Vec<[f64; 6]> = (0..rng.random_range(2..5))
        .map(|_| {
            [
                rng.random::<f64>() * height as f64,          // offset
                (rng.random::<f64>() - 0.5) * 0.8,            // slope
                rng.random_range(0.04..0.12) * side,          // amplitude
                rng.random_range(1.0..3.0) / side * std::f64::consts::TAU, // frequency
                rng.random::<f64>() * std::f64::consts::TAU,  // phase
                rng.random_range(0.008..0.02) * side,         // half width
            ]
        })
        .collect();
    let transpose: Vec<bool> = vessels.iter().map(|_| rng.random::<bool>()).collect();

    let mut rgb = vec![[0.0; 3]; width * height];
    for y in 0..height {
        for x in 0..width {
            let i = y * width + x;
            let mut px = mix(TISSUE_DARK, TISSUE_LIGHT, texture[i]);
            let f = ((fat[i] - 0.7) / 0.15).clamp(0.0, 1.0);
            px = mix(px, FAT, f * 0.8);
            for (v, &tr) in vessels.iter().zip(&transpose) {
                let (u, s) = if tr { (y as f64, x as f64) } else { (x as f64, y as f64) };
                let centre = v[0] + v[1] * u + v[2] * (v[3] * u + v[4]).sin();
                let d = (s - centre).abs() / v[5];
                let cover = (1.0 - d * d).max(0.0);
                px = mix(px, VESSEL, cover * 0.85);
            }
            let light = 0.55 + 0.45 * shade[i];
            rgb[i] = px.map(|c| (c * light).clamp(0.0, 1.0));
        }
    }
    Image::from_fn(width, height, 3, |c, y, x| rgb[y * width + x][c])
}

/// Writes `count` scenes as `scene_00000.png`, ... into `dir`.
pub fn write_scenes(dir: &Path, count: usize, size: usize, seed: u64) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    (0..count).into_par_iter().try_for_each(|i| {
        let img = tissue_scene(size, size, derive_seed(seed, i as u64, 20))?;
        save_image(&img, dir.join(format!("scene_{:05}.png", i)))
    })
}
