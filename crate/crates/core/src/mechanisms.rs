//! Seeded randomness, the Laplace and exponential mechanisms, and the
//! privacy-budget ledger every algorithm in this crate charges against.

use std::hash::Hasher;

use rand::distributions::{Distribution, Open01};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use siphasher::sip::SipHasher13;

use crate::error::{DpError, Result};

/// Slack allowed when comparing the spent budget against the total; scaled
/// up for totals above 1 so noise-free runs (eps ~ 1e9) stay representable.
pub const BUDGET_TOLERANCE: f64 = 1e-9;

fn tolerance(total: f64) -> f64 {
    BUDGET_TOLERANCE * total.max(1.0)
}

/// Portable, seedable random stream. Two instances built from the same seed
/// produce bit-identical output on every platform.
#[derive(Clone, Debug)]
pub struct Rng {
    seed: u64,
    inner: ChaCha8Rng,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Rng {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Independent stream for a labelled sub-task of `master`.
    pub fn derived(master: u64, label: &str, index: u64) -> Self {
        Rng::new(derive_seed(master, label, index))
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Uniform draw from the open interval (0, 1).
    pub fn open01(&mut self) -> f64 {
        Open01.sample(&mut self.inner)
    }
}

impl RngCore for Rng {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dest: &mut [u8]) {
        self.inner.fill_bytes(dest)
    }

    fn try_fill_bytes(&mut self, dest: &mut [u8]) -> std::result::Result<(), rand::Error> {
        self.inner.try_fill_bytes(dest)
    }
}

/// Stable seed derivation: SipHash-1-3 with fixed zero keys over
/// `(master, label, index)`. Adding a new label never perturbs another's stream.
pub fn derive_seed(master: u64, label: &str, index: u64) -> u64 {
    let mut h = SipHasher13::new_with_keys(0, 0);
    h.write_u64(master);
    h.write(label.as_bytes());
    h.write_u8(0xff);
    h.write_u64(index);
    h.finish()
}

/// A ledger of privacy spends against a fixed total.
#[derive(Clone, Debug)]
pub struct Budget {
    total: f64,
    spent: f64,
    ledger: Vec<(String, f64)>,
}

impl Budget {
    pub fn new(total: f64) -> Result<Self> {
        if !(total.is_finite() && total > 0.0) {
            return Err(DpError::param(format!("budget total must be positive and finite, got {total}")));
        }
        Ok(Budget {
            total,
            spent: 0.0,
            ledger: Vec::new(),
        })
    }

    pub fn total(&self) -> f64 {
        self.total
    }

    pub fn spent(&self) -> f64 {
        self.spent
    }

    pub fn remaining(&self) -> f64 {
        self.total - self.spent
    }

    pub fn ledger(&self) -> &[(String, f64)] {
        &self.ledger
    }

    /// Sum of all entries whose label starts with `prefix`.
    pub fn spent_with_prefix(&self, prefix: &str) -> f64 {
        self.ledger
            .iter()
            .filter(|(label, _)| label.starts_with(prefix))
            .map(|(_, amount)| amount)
            .sum()
    }

    /// Fails without recording anything if `amount` does not fit.
    pub fn check(&self, label: &str, amount: f64) -> Result<()> {
        if !(amount.is_finite() && amount > 0.0) {
            return Err(DpError::param(format!("spend `{label}` must be positive and finite, got {amount}")));
        }
        if self.spent + amount > self.total + tolerance(self.total) {
            return Err(DpError::Budget {
                label: label.to_string(),
                requested: amount,
                remaining: self.remaining(),
            });
        }
        Ok(())
    }

    pub fn spend(&mut self, label: &str, amount: f64) -> Result<()> {
        self.check(label, amount)?;
        self.spent += amount;
        self.ledger.push((label.to_string(), amount));
        Ok(())
    }

    /// True when the whole budget has been used, up to the ledger tolerance.
    pub fn is_exhausted(&self) -> bool {
        (self.spent - self.total).abs() <= tolerance(self.total)
    }
}

/// Inverse-CDF draw from Laplace(0, scale), one uniform per sample.
pub fn laplace_sample(scale: f64, rng: &mut Rng) -> Result<f64> {
    if !(scale.is_finite() && scale > 0.0) {
        return Err(DpError::param(format!("Laplace scale must be positive and finite, got {scale}")));
    }
    let u = rng.open01() - 0.5;
    Ok(-scale * u.signum() * (1.0 - 2.0 * u.abs()).ln())
}

/// Laplace mechanism for a single counting-style query; charges `eps`.
pub fn noisy_count(
    true_count: f64,
    sensitivity: f64,
    eps: f64,
    rng: &mut Rng,
    budget: &mut Budget,
) -> Result<f64> {
    if !(sensitivity.is_finite() && sensitivity > 0.0) {
        return Err(DpError::param(format!("sensitivity must be positive, got {sensitivity}")));
    }
    budget.check("noisy_count", eps)?;
    let noise = laplace_sample(sensitivity / eps, rng)?;
    budget.spend("noisy_count", eps)?;
    Ok(true_count + noise)
}

/// An item offered to the exponential mechanism.
#[derive(Clone, Debug, PartialEq)]
pub struct Candidate<T> {
    pub value: T,
    pub quality: f64,
}

/// Selection probabilities `exp(eps * q_i / (2 * sensitivity))`, normalized.
pub fn exp_probabilities(qualities: &[f64], eps: f64, quality_sensitivity: f64) -> Result<Vec<f64>> {
    if qualities.is_empty() {
        return Err(DpError::param("exponential mechanism needs at least one candidate"));
    }
    if let Some(q) = qualities.iter().find(|q| !q.is_finite()) {
        return Err(DpError::param(format!("candidate quality must be finite, got {q}")));
    }
    if !(quality_sensitivity.is_finite() && quality_sensitivity > 0.0) {
        return Err(DpError::param(format!(
            "quality sensitivity must be positive, got {quality_sensitivity}"
        )));
    }
    let coef = eps / (2.0 * quality_sensitivity);
    let q_max = qualities.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut weights: Vec<f64> = qualities.iter().map(|q| ((q - q_max) * coef).exp()).collect();
    let z: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= z);
    Ok(weights)
}

/// Exponential mechanism over raw quality scores, charged under `label`.
pub fn exp_select_scores(
    qualities: &[f64],
    eps: f64,
    quality_sensitivity: f64,
    rng: &mut Rng,
    budget: &mut Budget,
    label: &str,
) -> Result<usize> {
    budget.check(label, eps)?;
    let probs = exp_probabilities(qualities, eps, quality_sensitivity)?;
    let u = rng.open01();
    let mut acc = 0.0;
    let mut chosen = probs.len() - 1;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            chosen = i;
            break;
        }
    }
    budget.spend(label, eps)?;
    Ok(chosen)
}

pub fn exp_select<T>(
    candidates: &[Candidate<T>],
    eps: f64,
    quality_sensitivity: f64,
    rng: &mut Rng,
    budget: &mut Budget,
) -> Result<usize> {
    let qualities: Vec<f64> = candidates.iter().map(|c| c.quality).collect();
    exp_select_scores(&qualities, eps, quality_sensitivity, rng, budget, "exp_select")
}
