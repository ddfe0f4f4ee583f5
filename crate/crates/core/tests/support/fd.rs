//! Central finite-difference checks of every analytic gradient, in f64.
//!
//! Each check returns the worst error, scaled by the largest numeric
//! derivative magnitude of the quantity being checked.

#![allow(dead_code)]

use desmoke::imgio::Image;
use desmoke::neuro::loss::{composite_generator_loss, perceptual_loss, LossWeights, SsimVariant};
use desmoke::neuro::ops::{
    batchnorm, batchnorm_backward, conv2d, conv2d_backward, deconv2d, deconv2d_backward, leaky_relu,
    leaky_relu_backward,
};
use desmoke::neuro::{Discriminator, Generator, Mode, NetworkSpec, Tensor};
use desmoke::quality::{ms_ssim_grad, ms_ssim_planar, ssim_grad, ssim_planar, MsSsimParams, SsimParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const H: f64 = 1e-5;

pub fn random_tensor(shape: [usize; 4], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Worst `|analytic - numeric|` over `max |numeric|`.
pub fn scaled_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    let scale = numeric.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-12);
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs())
        .fold(0.0, f64::max)
        / scale
}

/// Central differences of `f` at `x` over the given coordinates.
pub fn numeric_grad(x: &[f64], coords: &[usize], mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut buf = x.to_vec();
    coords
        .iter()
        .map(|&i| {
            let orig = buf[i];
            buf[i] = orig + H;
            let fp = f(&buf);
            buf[i] = orig - H;
            let fm = f(&buf);
            buf[i] = orig;
            (fp - fm) / (2.0 * H)
        })
        .collect()
}

fn all(n: usize) -> Vec<usize> {
    (0..n).collect()
}

fn pick(analytic: &[f64], coords: &[usize]) -> Vec<f64> {
    coords.iter().map(|&i| analytic[i]).collect()
}

fn with_data(like: &Tensor<f64>, data: &[f64]) -> Tensor<f64> {
    Tensor::new(like.shape(), data.to_vec()).unwrap()
}

/// conv2d on a 2x3x8x8 input, stride 1 and 2, against input, weight and
/// bias derivatives of `<conv(x), r>`.
pub fn conv2d_error(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for stride in [1, 2] {
        let x = random_tensor([2, 3, 8, 8], &mut rng);
        let w = random_tensor([4, 3, 3, 3], &mut rng);
        let b: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
        let y = conv2d(&x, &w, &b, stride, 1).unwrap();
        let r = random_tensor(y.shape(), &mut rng);
        let g = conv2d_backward(&x, &w, stride, 1, &r).unwrap();

        let loss_x = |d: &[f64]| dot(conv2d(&with_data(&x, d), &w, &b, stride, 1).unwrap().data(), r.data());
        let n = numeric_grad(x.data(), &all(x.len()), loss_x);
        worst = worst.max(scaled_error(g.input.data(), &n));

        let loss_w = |d: &[f64]| dot(conv2d(&x, &with_data(&w, d), &b, stride, 1).unwrap().data(), r.data());
        let n = numeric_grad(w.data(), &all(w.len()), loss_w);
        worst = worst.max(scaled_error(g.weights.data(), &n));

        let loss_b = |d: &[f64]| dot(conv2d(&x, &w, d, stride, 1).unwrap().data(), r.data());
        let n = numeric_grad(&b, &all(b.len()), loss_b);
        worst = worst.max(scaled_error(&g.bias, &n));
    }
    worst
}

/// Stride-2 4x4 transposed convolution on a 2x3x4x4 input.
pub fn deconv2d_error(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = random_tensor([2, 3, 4, 4], &mut rng);
    let w = random_tensor([3, 2, 4, 4], &mut rng);
    let b: Vec<f64> = (0..2).map(|_| rng.random_range(-1.0..1.0)).collect();
    let y = deconv2d(&x, &w, &b).unwrap();
    let r = random_tensor(y.shape(), &mut rng);
    let g = deconv2d_backward(&x, &w, &r).unwrap();

    let mut worst = 0.0f64;
    let n = numeric_grad(x.data(), &all(x.len()), |d| dot(deconv2d(&with_data(&x, d), &w, &b).unwrap().data(), r.data()));
    worst = worst.max(scaled_error(g.input.data(), &n));
    let n = numeric_grad(w.data(), &all(w.len()), |d| dot(deconv2d(&x, &with_data(&w, d), &b).unwrap().data(), r.data()));
    worst = worst.max(scaled_error(g.weights.data(), &n));
    let n = numeric_grad(&b, &all(b.len()), |d| dot(deconv2d(&x, &w, d).unwrap().data(), r.data()));
    worst.max(scaled_error(&g.bias, &n))
}

/// Train-mode batch norm with respect to input, gamma and beta.
pub fn batchnorm_error(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = random_tensor([3, 2, 4, 4], &mut rng);
    let gamma = vec![1.3, 0.7];
    let beta = vec![0.2, -0.4];
    let bn = |x: &Tensor<f64>, g: &[f64], b: &[f64]| {
        let (mut rm, mut rv) = (vec![0.0; 2], vec![1.0; 2]);
        batchnorm(x, g, b, &mut rm, &mut rv, Mode::Train).unwrap()
    };
    let (y, cache) = bn(&x, &gamma, &beta);
    let r = random_tensor(y.shape(), &mut rng);
    let (dx, dg, db) = batchnorm_backward(&cache, &gamma, &r).unwrap();

    let mut worst = 0.0f64;
    let n = numeric_grad(x.data(), &all(x.len()), |d| dot(bn(&with_data(&x, d), &gamma, &beta).0.data(), r.data()));
    worst = worst.max(scaled_error(dx.data(), &n));
    let n = numeric_grad(&gamma, &all(2), |d| dot(bn(&x, d, &beta).0.data(), r.data()));
    worst = worst.max(scaled_error(&dg, &n));
    let n = numeric_grad(&beta, &all(2), |d| dot(bn(&x, &gamma, d).0.data(), r.data()));
    worst.max(scaled_error(&db, &n))
}

/// LeakyReLU away from the kink.
pub fn leaky_relu_error(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data: Vec<f64> = (0..64)
        .map(|_| {
            let v: f64 = rng.random_range(0.05..1.0);
            if rng.random::<bool>() {
                v
            } else {
                -v
            }
        })
        .collect();
    let x = Tensor::new([1, 1, 8, 8], data).unwrap();
    let r = random_tensor(x.shape(), &mut rng);
    let g = leaky_relu_backward(&x, 0.2, &r).unwrap();
    let n = numeric_grad(x.data(), &all(x.len()), |d| dot(leaky_relu(&with_data(&x, d), 0.2).data(), r.data()));
    scaled_error(g.data(), &n)
}

fn noisy_pair(w: usize, h: usize, c: usize, seed: u64) -> (Image<f64>, Image<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x: Vec<f64> = (0..w * h * c).map(|_| rng.random_range(0.1..0.9)).collect();
    let y: Vec<f64> = x.iter().map(|v| (v + rng.random_range(-0.1..0.1)).clamp(0.0, 1.0)).collect();
    (Image::new(w, h, c, x).unwrap(), Image::new(w, h, c, y).unwrap())
}

/// SSIM gradient with respect to the test image, 16x16 RGB.
pub fn ssim_error(seed: u64) -> f64 {
    let (x, y) = noisy_pair(16, 16, 3, seed);
    let p = SsimParams::default();
    let g = ssim_grad(&x, &y, &p).unwrap();
    let n = numeric_grad(y.data(), &all(y.data().len()), |d| {
        ssim_planar(x.data(), d, 16, 16, 3, &p, false).unwrap().0
    });
    scaled_error(&g.data, &n)
}

/// Three-scale MS-SSIM gradient on 64x64 grey, every 5th component.
pub fn ms_ssim_error(seed: u64) -> f64 {
    let (x, y) = noisy_pair(64, 64, 1, seed);
    let p = MsSsimParams::fitting(64, 64).unwrap();
    let g = ms_ssim_grad(&x, &y, &p).unwrap();
    let coords: Vec<usize> = (0..y.data().len()).step_by(5).collect();
    let n = numeric_grad(y.data(), &coords, |d| ms_ssim_planar(x.data(), d, 64, 64, 1, &p, false).unwrap().0);
    scaled_error(&pick(&g.data, &coords), &n)
}

/// Perceptual loss through a tiny discriminator, with respect to the fake
/// candidate image.
pub fn perceptual_error(seed: u64) -> f64 {
    let spec = NetworkSpec::tiny();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut disc = Discriminator::<f64>::new(&spec, seed).unwrap();
    let shape = [2, 3, 16, 16];
    let cond = random_tensor(shape, &mut rng);
    let clean = random_tensor(shape, &mut rng);
    let fake = random_tensor(shape, &mut rng);
    let weights = [1.0, 0.5];

    let real = disc.forward(&Tensor::concat_channels(&cond, &clean).unwrap(), Mode::Train).unwrap();
    let loss = |d: &Discriminator<f64>, f: &Tensor<f64>| {
        let mut d = d.clone();
        let out = d.forward(&Tensor::concat_channels(&cond, f).unwrap(), Mode::Train).unwrap();
        perceptual_loss(&real.taps, &out.taps, &weights).unwrap().0
    };
    let out = disc.forward(&Tensor::concat_channels(&cond, &fake).unwrap(), Mode::Train).unwrap();
    let (_, tap_grads) = perceptual_loss(&real.taps, &out.taps, &weights).unwrap();
    let d_pair = disc.backward(&[0.0, 0.0], Some(&tap_grads)).unwrap();
    let analytic = d_pair.split_channels(3).unwrap().1;
    let n = numeric_grad(fake.data(), &all(fake.len()), |d| loss(&disc, &with_data(&fake, d)));
    scaled_error(analytic.data(), &n)
}

/// End-to-end tiny generator (two levels, four filters, 16x16) in train
/// mode: gradient of `<G(x), r>` with respect to `x`.
pub fn generator_error(seed: u64) -> f64 {
    let spec = NetworkSpec::tiny();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut gen = Generator::<f64>::new(&spec, seed).unwrap();
    let x = random_tensor([2, 3, 16, 16], &mut rng);
    let y = gen.forward(&x, Mode::Train).unwrap();
    let r = random_tensor(y.shape(), &mut rng);
    let analytic = gen.backward(&r).unwrap();
    let n = numeric_grad(x.data(), &all(x.len()), |d| {
        let mut g = gen.clone();
        dot(g.forward(&with_data(&x, d), Mode::Train).unwrap().data(), r.data())
    });
    scaled_error(analytic.data(), &n)
}

/// Full composite generator loss with every term on, with respect to the
/// generator output.
pub fn composite_error(seed: u64) -> f64 {
    let spec = NetworkSpec::unet(3, 32, &[4, 8], &[4, 8], 0.2);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let disc = Discriminator::<f64>::new(&spec, seed).unwrap();
    let shape = [2, 3, 32, 32];
    let uniform = |rng: &mut ChaCha8Rng| {
        Tensor::new(shape, (0..shape.iter().product()).map(|_| rng.random_range(0.1..0.9)).collect()).unwrap()
    };
    let cond = uniform(&mut rng);
    let clean = uniform(&mut rng);
    let out = uniform(&mut rng);
    let weights = LossWeights {
        lambda_adv: 1.0,
        lambda_perc: vec![1.0, 1.0],
        lambda_ssim: 2.0,
        lambda_l1: 3.0,
        ssim_variant: SsimVariant::MsSsim,
    };
    let g = composite_generator_loss(&cond, &clean, &out, &weights, &mut disc.clone()).unwrap();
    let coords: Vec<usize> = (0..out.len()).step_by(7).collect();
    let n = numeric_grad(out.data(), &coords, |d| {
        composite_generator_loss(&cond, &clean, &with_data(&out, d), &weights, &mut disc.clone())
            .unwrap()
            .total
    });
    scaled_error(&pick(g.grad.data(), &coords), &n)
}
