use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::checkpoint::Checkpoint;
use super::loss::{composite_generator_loss, discriminator_logit_grads, gan_losses, LossWeights};
use super::net::{Discriminator, Generator, Network, NetworkSpec};
use super::ops::Mode;
use super::optim::{Adam, AdamConfig};
use super::Tensor;
use crate::error::{Error, Result};
use crate::imgio::{resize_and_pad, Image};
use crate::quality::{ssim, SsimParams};
use crate::scalar::Scalar;
use crate::smokesim::{derive_seed, DatasetManifest, Split};
use crate::spectral::{grid_artifact_score, MIN_SCORE_SIDE};

const PURPOSE_GENERATOR: u64 = 101;
const PURPOSE_DISCRIMINATOR: u64 = 102;
const PURPOSE_SHUFFLE: u64 = 103;

pub const LOG_HEADER: &str = "epoch,loss_D,loss_G_adv,loss_perc,loss_ssim,loss_l1,val_ssim,val_grid_score,seconds";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub image_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 2e-4,
            beta1: 0.5,
            beta2: 0.999,
            batch_size: 4,
            epochs: 20,
            image_size: 64,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::Config(format!("learning rate {} must be positive", self.learning_rate)));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(b > 0.0 && b < 1.0) {
                return Err(Error::Config(format!("{} = {} must lie in (0, 1)", name, b)));
            }
        }
        if self.batch_size == 0 || self.epochs == 0 || self.image_size == 0 {
            return Err(Error::Config("batch size, epochs and image size must be positive".into()));
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
        }
    }
}

/// Batch means of the loss components for one epoch. `loss_ssim` is the
/// unweighted `-similarity` term (0 when the variant is `none`); validation
/// fields are NaN when they cannot be computed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss_d: f64,
    pub loss_g_adv: f64,
    pub loss_perc: f64,
    pub loss_ssim: f64,
    pub loss_l1: f64,
    pub val_ssim: f64,
    pub val_grid_score: f64,
    pub seconds: f64,
}

impl EpochLog {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{:.8},{:.8},{:.8},{:.8},{:.8},{:.8},{:.8},{:.3}",
            self.epoch,
            self.loss_d,
            self.loss_g_adv,
            self.loss_perc,
            self.loss_ssim,
            self.loss_l1,
            self.val_ssim,
            self.val_grid_score,
            self.seconds
        )
    }
}

pub fn write_log(path: impl AsRef<Path>, log: &[EpochLog]) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::with_capacity(64 * (log.len() + 1));
    out.push_str(LOG_HEADER);
    out.push('\n');
    for row in log {
        out.push_str(&row.csv_row());
        out.push('\n');
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
}

/// A smoky input and its clean target, both at training resolution.
#[derive(Debug, Clone)]
pub struct TrainingPair<T: Scalar> {
    pub smoky: Image<T>,
    pub clean: Image<T>,
}

/// Loads every pair of one split, resized and zero-padded to `size`.
pub fn load_pairs<T: Scalar>(dataset: &DatasetManifest, split: Split, size: usize) -> Result<Vec<TrainingPair<T>>> {
    dataset
        .subset(split)
        .entries
        .iter()
        .map(|entry| {
            let (clean, smoky) = dataset.load_pair::<T>(entry)?;
            Ok(TrainingPair {
                smoky: resize_and_pad(&smoky.to_rgb(), size, size)?,
                clean: resize_and_pad(&clean.to_rgb(), size, size)?,
            })
        })
        .collect()
}

fn stack<T: Scalar>(pairs: &[TrainingPair<T>], idx: &[usize]) -> Result<(Tensor<T>, Tensor<T>)> {
    let smoky: Vec<&Image<T>> = idx.iter().map(|&i| &pairs[i].smoky).collect();
    let clean: Vec<&Image<T>> = idx.iter().map(|&i| &pairs[i].clean).collect();
    Ok((Tensor::from_images(&smoky)?, Tensor::from_images(&clean)?))
}

fn check_finite<T: Scalar>(value: T, epoch: usize, batch: usize, what: &str) -> Result<f64> {
    let v = value.as_f64();
    if !v.is_finite() {
        return Err(Error::Divergence {
            epoch,
            batch,
            what: what.to_string(),
        });
    }
    Ok(v)
}

/// Generator, discriminator and their optimizers.
pub struct Trainer<T: Scalar = f32> {
    pub generator: Generator<T>,
    pub discriminator: Discriminator<T>,
    opt_g: Adam<T>,
    opt_d: Adam<T>,
    pub weights: LossWeights,
    pub config: TrainConfig,
    pub epochs_done: usize,
}

impl<T: Scalar> Trainer<T> {
    pub fn new(spec: &NetworkSpec, weights: &LossWeights, config: &TrainConfig) -> Result<Self> {
        config.validate()?;
        weights.validate(spec.tap_layers.len())?;
        if spec.image_size != config.image_size {
            return Err(Error::Config(format!(
                "network spec is built for {} px images, training config asks for {}",
                spec.image_size, config.image_size
            )));
        }
        let generator = Generator::new(spec, derive_seed(config.seed, 0, PURPOSE_GENERATOR))?;
        let discriminator = Discriminator::new(spec, derive_seed(config.seed, 0, PURPOSE_DISCRIMINATOR))?;
        let opt_g = Adam::new(config.adam(), &generator.params());
        let opt_d = Adam::new(config.adam(), &discriminator.params());
        Ok(Self {
            generator,
            discriminator,
            opt_g,
            opt_d,
            weights: weights.clone(),
            config: config.clone(),
            epochs_done: 0,
        })
    }

    pub fn step(&self) -> u64 {
        self.opt_g.step_count()
    }

    /// One pass over `pairs` in a seeded order. Validation fields of the
    /// returned log are NaN.
    pub fn train_epoch(&mut self, pairs: &[TrainingPair<T>]) -> Result<EpochLog> {
        if pairs.is_empty() {
            return Err(Error::Argument("training set is empty".into()));
        }
        let epoch = self.epochs_done + 1;
        let start = Instant::now();
        let mut order: Vec<usize> = (0..pairs.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(
            self.config.seed,
            epoch as u64,
            PURPOSE_SHUFFLE,
        )));

        let mut sums = [0.0f64; 5];
        let batches: Vec<&[usize]> = order.chunks(self.config.batch_size).collect();
        for (b, idx) in batches.iter().enumerate() {
            let (smoky, clean) = stack(pairs, idx)?;
            let fake = self.generator.forward(&smoky, Mode::Train)?;
            check_finite(fake.data().iter().fold(T::zero(), |a, &v| a + v), epoch, b, "generator output")?;

            // discriminator step
            self.discriminator.zero_grad();
            let real_pair = Tensor::concat_channels(&smoky, &clean)?;
            let real = self.discriminator.forward(&real_pair, Mode::Train)?;
            let (d_real, _) = discriminator_logit_grads(&real.probabilities, &real.probabilities);
            self.discriminator.backward(&d_real, None)?;
            let fake_pair = Tensor::concat_channels(&smoky, &fake)?;
            let fake_out = self.discriminator.forward(&fake_pair, Mode::Train)?;
            let (_, d_fake) = discriminator_logit_grads(&fake_out.probabilities, &fake_out.probabilities);
            self.discriminator.backward(&d_fake, None)?;
            let n = T::from_usize_lossy(idx.len());
            let mut loss_d = T::zero();
            for (&r, &f) in real.probabilities.iter().zip(&fake_out.probabilities) {
                loss_d += gan_losses(r, f).0 / n;
            }
            let loss_d = check_finite(loss_d, epoch, b, "loss_D")?;
            self.opt_d.step(self.discriminator.params_mut())?;

            // generator step
            self.generator.zero_grad();
            let g = composite_generator_loss(&smoky, &clean, &fake, &self.weights, &mut self.discriminator)?;
            self.discriminator.zero_grad();
            let components = [
                loss_d,
                check_finite(g.adversarial, epoch, b, "loss_G_adv")?,
                check_finite(g.perceptual, epoch, b, "loss_perc")?,
                check_finite(g.ssim, epoch, b, "loss_ssim")?,
                check_finite(g.l1, epoch, b, "loss_l1")?,
            ];
            check_finite(g.total, epoch, b, "generator loss")?;
            self.generator.backward(&g.grad)?;
            self.opt_g.step(self.generator.params_mut())?;
            for (s, c) in sums.iter_mut().zip(components) {
                *s += c;
            }
        }
        let count = batches.len() as f64;
        self.epochs_done = epoch;
        Ok(EpochLog {
            epoch,
            loss_d: sums[0] / count,
            loss_g_adv: sums[1] / count,
            loss_perc: sums[2] / count,
            loss_ssim: sums[3] / count,
            loss_l1: sums[4] / count,
            val_ssim: f64::NAN,
            val_grid_score: f64::NAN,
            seconds: start.elapsed().as_secs_f64(),
        })
    }

    /// Eval-mode outputs for every smoky input of `pairs`.
    pub fn predict_pairs(&self, pairs: &[TrainingPair<T>]) -> Result<Vec<Image<T>>> {
        let mut out = Vec::with_capacity(pairs.len());
        let idx: Vec<usize> = (0..pairs.len()).collect();
        for chunk in idx.chunks(self.config.batch_size.max(1)) {
            let (smoky, _) = stack(pairs, chunk)?;
            let y = self.generator.predict(&smoky)?;
            for b in 0..y.batch() {
                out.push(y.to_image(b)?);
            }
        }
        Ok(out)
    }

    /// Mean SSIM to the clean targets and mean grid score of the outputs
    /// (NaN when there are no pairs or the images are too small to score).
    pub fn validate(&self, pairs: &[TrainingPair<T>]) -> Result<(f64, f64)> {
        if pairs.is_empty() {
            return Ok((f64::NAN, f64::NAN));
        }
        let outputs = self.predict_pairs(pairs)?;
        let params = SsimParams::<T>::default();
        let mut sim = 0.0;
        let mut grid = 0.0;
        for (p, o) in pairs.iter().zip(&outputs) {
            sim += ssim(&p.clean, o, &params)?.as_f64();
            if o.width() >= MIN_SCORE_SIDE && o.height() >= MIN_SCORE_SIDE {
                grid += grid_artifact_score(o)?;
            } else {
                grid = f64::NAN;
            }
        }
        let n = pairs.len() as f64;
        Ok((sim / n, grid / n))
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint::capture(&self.generator, &self.discriminator, self.step(), self.epochs_done)
    }
}

/// Trained networks and the per-epoch log.
pub struct TrainOutcome<T: Scalar = f32> {
    pub trainer: Trainer<T>,
    pub log: Vec<EpochLog>,
}

/// Trains on the train split, validating on the val split after every
/// epoch. `on_epoch` sees each finished epoch, e.g. to write checkpoints.
pub fn train<T: Scalar>(
    dataset: &DatasetManifest,
    spec: &NetworkSpec,
    weights: &LossWeights,
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLog, &Trainer<T>) -> Result<()>,
) -> Result<TrainOutcome<T>> {
    let mut trainer = Trainer::new(spec, weights, config)?;
    let pairs = load_pairs::<T>(dataset, Split::Train, config.image_size)?;
    if pairs.is_empty() {
        return Err(Error::Argument("dataset has no training pairs".into()));
    }
    let val = load_pairs::<T>(dataset, Split::Val, config.image_size)?;
    let mut log = Vec::with_capacity(config.epochs);
    for _ in 0..config.epochs {
        let mut row = trainer.train_epoch(&pairs)?;
        (row.val_ssim, row.val_grid_score) = trainer.validate(&val)?;
        on_epoch(&row, &trainer)?;
        log.push(row);
    }
    Ok(TrainOutcome { trainer, log })
}
