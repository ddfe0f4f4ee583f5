use serde::{Deserialize, Serialize};

use super::net::Discriminator;
use super::ops::Mode;
use super::Tensor;
use crate::error::{Error, Result};
use crate::quality::{ms_ssim_planar, ssim_planar, MsSsimParams, SsimParams};
use crate::scalar::Scalar;

pub const PROB_CLAMP: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SsimVariant {
    Ssim,
    MsSsim,
    None,
}

impl std::str::FromStr for SsimVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ssim" => Ok(Self::Ssim),
            "ms_ssim" | "ms-ssim" => Ok(Self::MsSsim),
            "none" => Ok(Self::None),
            other => Err(Error::Argument(format!("unknown ssim variant '{}'", other))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub lambda_adv: f64,
    /// One weight per discriminator tap; empty disables the term.
    pub lambda_perc: Vec<f64>,
    pub lambda_ssim: f64,
    pub lambda_l1: f64,
    pub ssim_variant: SsimVariant,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_adv: 1.0,
            lambda_perc: vec![1.0, 1.0, 1.0],
            lambda_ssim: 10.0,
            lambda_l1: 10.0,
            ssim_variant: SsimVariant::MsSsim,
        }
    }
}

impl LossWeights {
    /// Pure L1 reconstruction loss.
    pub fn only_l1(lambda: f64) -> Self {
        Self {
            lambda_adv: 0.0,
            lambda_perc: Vec::new(),
            lambda_ssim: 0.0,
            lambda_l1: lambda,
            ssim_variant: SsimVariant::None,
        }
    }

    pub fn validate(&self, taps: usize) -> Result<()> {
        let all = [self.lambda_adv, self.lambda_ssim, self.lambda_l1]
            .into_iter()
            .chain(self.lambda_perc.iter().copied());
        let mut any_positive = false;
        for w in all {
            if !(w.is_finite() && w >= 0.0) {
                return Err(Error::Config(format!("loss weight {} must be finite and non-negative", w)));
            }
            any_positive |= w > 0.0;
        }
        if !any_positive {
            return Err(Error::Config("at least one loss weight must be positive".into()));
        }
        if !self.lambda_perc.is_empty() && self.lambda_perc.len() != taps {
            return Err(Error::Config(format!(
                "{} perceptual weights for {} discriminator taps",
                self.lambda_perc.len(),
                taps
            )));
        }
        Ok(())
    }

    fn uses_discriminator(&self) -> bool {
        self.lambda_adv > 0.0 || self.lambda_perc.iter().any(|&w| w > 0.0)
    }
}

fn clamp_prob<T: Scalar>(p: T) -> (T, bool) {
    let lo = T::lit(PROB_CLAMP);
    let hi = T::one() - lo;
    if p < lo {
        (lo, true)
    } else if p > hi {
        (hi, true)
    } else {
        (p, false)
    }
}

/// `(loss_D, loss_G_adv)` with `loss_D = -[ln d_real + ln(1 - d_fake)] / 2`
/// and the non-saturating `loss_G_adv = -ln d_fake`; probabilities are
/// clamped to `[1e-7, 1 - 1e-7]`.
pub fn gan_losses<T: Scalar>(d_real: T, d_fake: T) -> (T, T) {
    let (r, _) = clamp_prob(d_real);
    let (f, _) = clamp_prob(d_fake);
    let two = T::lit(2.0);
    (-(r.ln() + (T::one() - f).ln()) / two, -f.ln())
}

/// Gradients of the batch-mean discriminator loss with respect to the real
/// and fake logits.
pub fn discriminator_logit_grads<T: Scalar>(real: &[T], fake: &[T]) -> (Vec<T>, Vec<T>) {
    let scale = T::one() / (T::lit(2.0) * T::from_usize_lossy(real.len()));
    let dr = real
        .iter()
        .map(|&p| if clamp_prob(p).1 { T::zero() } else { -(T::one() - p) * scale })
        .collect();
    let df = fake
        .iter()
        .map(|&p| if clamp_prob(p).1 { T::zero() } else { p * scale })
        .collect();
    (dr, df)
}

/// `sum_k w_k * mean |real_k - fake_k|` and its gradient with respect to
/// each fake tap.
pub fn perceptual_loss<T: Scalar>(
    taps_real: &[Tensor<T>],
    taps_fake: &[Tensor<T>],
    weights: &[f64],
) -> Result<(T, Vec<Tensor<T>>)> {
    if taps_real.len() != taps_fake.len() || taps_real.len() != weights.len() {
        return Err(Error::Shape(format!(
            "{} real taps, {} fake taps, {} weights",
            taps_real.len(),
            taps_fake.len(),
            weights.len()
        )));
    }
    let mut loss = T::zero();
    let mut grads = Vec::with_capacity(taps_fake.len());
    for ((r, f), &w) in taps_real.iter().zip(taps_fake).zip(weights) {
        f.ensure_shape(r.shape(), "perceptual tap")?;
        let w = T::lit(w);
        let scale = w / T::from_usize_lossy(r.len());
        let mut sum = T::zero();
        let mut g = Tensor::zeros(f.shape());
        for ((gv, &a), &b) in g.data_mut().iter_mut().zip(r.data()).zip(f.data()) {
            let d = b - a;
            sum += d.abs();
            *gv = if d > T::zero() {
                scale
            } else if d < T::zero() {
                -scale
            } else {
                T::zero()
            };
        }
        loss += scale * sum;
        grads.push(g);
    }
    Ok((loss, grads))
}

/// `-mean_b sim(clean_b, output_b)` for the chosen variant and its
/// gradient with respect to `output`.
pub fn ssim_term<T: Scalar>(clean: &Tensor<T>, output: &Tensor<T>, variant: SsimVariant) -> Result<(T, Tensor<T>)> {
    output.ensure_shape(clean.shape(), "ssim term")?;
    let (n, c, h, w) = (clean.batch(), clean.channels(), clean.height(), clean.width());
    let mut grad = Tensor::zeros(clean.shape());
    if variant == SsimVariant::None {
        return Ok((T::zero(), grad));
    }
    let inv_n = T::one() / T::from_usize_lossy(n);
    let ms = match variant {
        SsimVariant::MsSsim => Some(MsSsimParams::<T>::fitting(w, h)?),
        _ => None,
    };
    let base = SsimParams::<T>::default();
    let mut total = T::zero();
    for b in 0..n {
        let (v, g) = match &ms {
            Some(p) => ms_ssim_planar(clean.item(b), output.item(b), w, h, c, p, true)?,
            None => ssim_planar(clean.item(b), output.item(b), w, h, c, &base, true)?,
        };
        total += v;
        let g = g.expect("gradient requested");
        for (d, &s) in grad.item_mut(b).iter_mut().zip(&g) {
            *d = -s * inv_n;
        }
    }
    Ok((-total * inv_n, grad))
}

/// `mean |output - clean|` and its gradient.
pub fn l1_term<T: Scalar>(clean: &Tensor<T>, output: &Tensor<T>) -> Result<(T, Tensor<T>)> {
    output.ensure_shape(clean.shape(), "l1 term")?;
    let inv = T::one() / T::from_usize_lossy(clean.len());
    let mut grad = Tensor::zeros(clean.shape());
    let mut sum = T::zero();
    for ((g, &a), &b) in grad.data_mut().iter_mut().zip(clean.data()).zip(output.data()) {
        let d = b - a;
        sum += d.abs();
        *g = if d > T::zero() {
            inv
        } else if d < T::zero() {
            -inv
        } else {
            T::zero()
        };
    }
    Ok((sum * inv, grad))
}

/// Unweighted loss components (perceptual already carries its per-tap
/// weights), the weighted total and its gradient with respect to the
/// generator output.
#[derive(Debug, Clone)]
pub struct GeneratorLoss<T> {
    pub total: T,
    pub adversarial: T,
    pub perceptual: T,
    pub ssim: T,
    pub l1: T,
    pub grad: Tensor<T>,
}

/// `lambda_adv * adv + perceptual + lambda_ssim * (-sim) + lambda_l1 * L1`.
///
/// The discriminator sees `(condition, clean)` and `(condition, output)`
/// pairs; its parameter gradients are left accumulated and should be
/// cleared by the caller before its own update.
pub fn composite_generator_loss<T: Scalar>(
    condition: &Tensor<T>,
    clean: &Tensor<T>,
    output: &Tensor<T>,
    weights: &LossWeights,
    discriminator: &mut Discriminator<T>,
) -> Result<GeneratorLoss<T>> {
    output.ensure_shape(clean.shape(), "generator output")?;
    condition.ensure_shape(clean.shape(), "condition image")?;

    let real_pair = Tensor::concat_channels(condition, clean)?;
    let real = discriminator.forward(&real_pair, Mode::Train)?;
    let fake_pair = Tensor::concat_channels(condition, output)?;
    let fake = discriminator.forward(&fake_pair, Mode::Train)?;

    let n = T::from_usize_lossy(clean.batch());
    let mut adversarial = T::zero();
    let mut d_logits = Vec::with_capacity(clean.batch());
    let lambda_adv = T::lit(weights.lambda_adv);
    for &p in &fake.probabilities {
        adversarial += gan_losses(p, p).1 / n;
        let (_, clamped) = clamp_prob(p);
        // d(-ln sigmoid(z))/dz = p - 1
        d_logits.push(if clamped { T::zero() } else { lambda_adv * (p - T::one()) / n });
    }
    let tap_weights = if weights.lambda_perc.is_empty() {
        vec![0.0; fake.taps.len()]
    } else {
        weights.lambda_perc.clone()
    };
    let (perceptual, tap_grads) = perceptual_loss(&real.taps, &fake.taps, &tap_weights)?;

    let mut grad = if weights.uses_discriminator() {
        let d_pair = discriminator.backward(&d_logits, Some(&tap_grads))?;
        d_pair.split_channels(condition.channels())?.1
    } else {
        Tensor::zeros(output.shape())
    };

    let (ssim, ssim_grad) = ssim_term(clean, output, weights.ssim_variant)?;
    let (l1, l1_grad) = l1_term(clean, output)?;
    let (ls, ll) = (T::lit(weights.lambda_ssim), T::lit(weights.lambda_l1));
    for ((g, &a), &b) in grad.data_mut().iter_mut().zip(ssim_grad.data()).zip(l1_grad.data()) {
        *g += ls * a + ll * b;
    }
    Ok(GeneratorLoss {
        total: lambda_adv * adversarial + perceptual + ls * ssim + ll * l1,
        adversarial,
        perceptual,
        ssim,
        l1,
        grad,
    })
}
