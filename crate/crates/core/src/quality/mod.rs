//! Full-reference image quality metrics.
//!
//! Everything here compares a reference image against a test image of the
//! same shape. SSIM and MS-SSIM also expose gradients with respect to the
//! test image so they can serve as training losses.

mod ciede;
mod ssim;

pub use ciede::{ciede2000, ciede2000_pixel};
pub use ssim::{
    ms_ssim, ms_ssim_grad, ms_ssim_planar, ssim, ssim_grad, ssim_loss, ssim_planar, Gradient,
    MsSsimParams, SsimParams, MS_SSIM_WEIGHTS,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imgio::Image;
use crate::scalar::Scalar;

pub fn mse<T: Scalar>(reference: &Image<T>, test: &Image<T>) -> Result<T> {
    reference.ensure_same_shape(test)?;
    let sum: T = reference
        .data()
        .iter()
        .zip(test.data())
        .map(|(&a, &b)| (a - b) * (a - b))
        .sum();
    Ok(sum / T::from_usize_lossy(reference.data().len()))
}

/// Root mean squared error on the `[0, 1]` scale.
pub fn rmse<T: Scalar>(reference: &Image<T>, test: &Image<T>) -> Result<T> {
    mse(reference, test).map(T::sqrt)
}

/// `20 log10(max(reference)) - 10 log10(MSE)`; positive infinity when the
/// images are identical.
pub fn psnr<T: Scalar>(reference: &Image<T>, test: &Image<T>) -> Result<T> {
    let mse = mse(reference, test)?;
    if mse == T::zero() {
        return Ok(T::infinity());
    }
    let peak = reference
        .data()
        .iter()
        .copied()
        .fold(T::neg_infinity(), T::max);
    Ok(T::lit(20.0) * peak.log10() - T::lit(10.0) * mse.log10())
}

/// Per-image values of one metric plus their mean and population std.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricResult {
    pub name: String,
    pub per_image: Vec<f64>,
    pub mean: f64,
    pub std: f64,
}

pub fn aggregate(values: &[f64], name: &str) -> Result<MetricResult> {
    if values.is_empty() {
        return Err(Error::Argument(format!("no values to aggregate for {}", name)));
    }
    if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
        return Err(Error::Argument(format!("non-finite value {} in {}", bad, name)));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    Ok(MetricResult {
        name: name.to_string(),
        per_image: values.to_vec(),
        mean,
        std: var.sqrt(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_pair(seed: u64) -> (Image<f64>, Image<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut gen = || {
            Image::new(9, 7, 3, (0..9 * 7 * 3).map(|_| rng.random::<f64>()).collect()).unwrap()
        };
        (gen(), gen())
    }

    #[test]
    fn rmse_basics() {
        let a = Image::<f64>::filled(4, 4, 3, 0.0).unwrap();
        let b = Image::filled(4, 4, 3, 0.5).unwrap();
        assert_eq!(rmse(&a, &a).unwrap(), 0.0);
        assert!((rmse(&a, &b).unwrap() - 0.5).abs() < 1e-15);
        let c = Image::filled(4, 3, 3, 0.5).unwrap();
        assert!(matches!(rmse(&a, &c), Err(Error::Shape(_))));
    }

    #[test]
    fn rmse_matches_brute_force_loop() {
        for seed in 0..20 {
            let (a, b) = random_pair(seed);
            let mut acc = 0.0;
            for c in 0..3 {
                for y in 0..7 {
                    for x in 0..9 {
                        let d = a.get(c, y, x) - b.get(c, y, x);
                        acc += d * d;
                    }
                }
            }
            let expected = (acc / (9.0 * 7.0 * 3.0)).sqrt();
            assert!((rmse(&a, &b).unwrap() - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn psnr_substitution_and_identity() {
        // max(ref) = 1, MSE = 0.01 -> 20 dB
        let mut data = vec![0.5; 100];
        data[0] = 1.0;
        let reference = Image::new(10, 10, 1, data.clone()).unwrap();
        let test = Image::<f64>::new(10, 10, 1, data.iter().map(|v| v - 0.1).collect()).unwrap();
        assert!((psnr(&reference, &test).unwrap() - 20.0).abs() < 1e-9);
        assert_eq!(psnr(&reference, &reference).unwrap(), f64::INFINITY);
    }

    #[test]
    fn psnr_monotone_in_noise_amplitude() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let reference = Image::from_fn(32, 32, 3, |_, _, _| 0.25 + 0.5 * rng.random::<f64>()).unwrap();
        let noise: Vec<f64> = (0..32 * 32 * 3).map(|_| rng.random::<f64>() - 0.5).collect();
        let mut last = f64::INFINITY;
        for amp in [0.01, 0.05, 0.1, 0.2, 0.4] {
            let data = reference.data().iter().zip(&noise).map(|(r, n)| r + amp * n).collect();
            let test = Image::clamped(32, 32, 3, data).unwrap();
            let p = psnr(&reference, &test).unwrap();
            assert!(p < last, "psnr {} at amplitude {} not below {}", p, amp, last);
            last = p;
        }
    }

    #[test]
    fn aggregate_examples() {
        let r = aggregate(&[5.0], "x").unwrap();
        assert_eq!((r.mean, r.std), (5.0, 0.0));
        let r = aggregate(&[0.0, 2.0], "x").unwrap();
        assert_eq!((r.mean, r.std), (1.0, 1.0));
        assert!(aggregate(&[], "x").is_err());
        assert!(aggregate(&[1.0, f64::NAN], "x").is_err());
    }

    #[test]
    fn aggregate_matches_two_pass_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let values: Vec<f64> = (0..1000).map(|_| rng.random::<f64>() * 40.0 - 7.0).collect();
        let r = aggregate(&values, "v").unwrap();
        let mut sum = 0.0;
        for v in &values {
            sum += v;
        }
        let mean = sum / 1000.0;
        let mut ss = 0.0;
        for v in &values {
            ss += (v - mean).powi(2);
        }
        assert!((r.mean - mean).abs() < 1e-9);
        assert!((r.std - (ss / 1000.0).sqrt()).abs() < 1e-9);
        assert_eq!(r.per_image, values);
    }
}
