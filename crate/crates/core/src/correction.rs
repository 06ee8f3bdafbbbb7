//! Reward debiasing, the corrected variance estimator and flip-rate estimation.
//!
//! Given the channel rates, an observed bit `r~` is mapped to
//! `(r~ - rho_plus) / (1 - rho_plus - rho_minus)`, whose expectation over the
//! channel is the true reward. The variance of the debiased rewards overstates
//! the true variance by the channel's own contribution; [`variance_estimate_z`]
//! subtracts it so that the result is unbiased for `p (1 - p)`.

use std::io::{Read, Write};

use rand::seq::index;
use rand::Rng;

use crate::error::{Error, Result};
use crate::reward_channel::NoiseSpec;

/// Channel rates used for inversion, with the size of the set they came from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlipRateEstimate {
    rates: NoiseSpec,
    sample_count: usize,
}

impl FlipRateEstimate {
    pub fn new(rho_plus_hat: f64, rho_minus_hat: f64, sample_count: usize) -> Result<Self> {
        if sample_count == 0 {
            return Err(Error::InsufficientData(
                "an estimate needs at least one sample".into(),
            ));
        }
        let rates = NoiseSpec::new(rho_plus_hat, rho_minus_hat)?;
        rates.require_invertible()?;
        Ok(Self {
            rates,
            sample_count,
        })
    }

    /// Rates that are known rather than estimated. `sample_count` is 0.
    pub fn assumed(rates: NoiseSpec) -> Result<Self> {
        rates.require_invertible()?;
        Ok(Self {
            rates,
            sample_count: 0,
        })
    }

    pub fn rates(&self) -> &NoiseSpec {
        &self.rates
    }

    pub fn rho_plus_hat(&self) -> f64 {
        self.rates.rho_plus()
    }

    pub fn rho_minus_hat(&self) -> f64 {
        self.rates.rho_minus()
    }

    pub fn sample_count(&self) -> usize {
        self.sample_count
    }
}

/// A debiased reward atom and the observed bit it was computed from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DebiasedReward {
    pub value: f64,
    pub source_bit: u8,
}

/// Inverts the channel for one observed bit.
pub fn debias(r_noisy: u8, rates: &NoiseSpec) -> Result<DebiasedReward> {
    rates.require_invertible()?;
    let value = (f64::from(r_noisy) - rates.rho_plus()) / rates.signal_factor();
    Ok(DebiasedReward {
        value,
        source_bit: r_noisy,
    })
}

/// Unbiased estimate of the true reward variance from debiased samples.
///
/// Uses the `n - 1` sample variance of the debiased values and removes the
/// variance contributed by the channel at the sample mean.
pub fn variance_estimate_z(debiased: &[f64], rates: &NoiseSpec) -> Result<f64> {
    rates.require_invertible()?;
    let n = debiased.len();
    if n < 2 {
        return Err(Error::DegenerateSample(format!(
            "variance estimate needs at least 2 samples, got {n}"
        )));
    }
    let mean = debiased.iter().sum::<f64>() / n as f64;
    let sample_var = debiased
        .iter()
        .map(|r| (r - mean) * (r - mean))
        .sum::<f64>()
        / (n - 1) as f64;
    let (rp, rm) = (rates.rho_plus(), rates.rho_minus());
    let s2 = rates.signal_factor().powi(2);
    Ok(sample_var - mean * rm * (1.0 - rm) / s2 - (1.0 - mean) * rp * (1.0 - rp) / s2)
}

/// Standard-deviation scale divisor from a variance estimate, floored so it
/// stays strictly positive.
pub fn clip_z(z: f64, floor: f64) -> f64 {
    debug_assert!(floor > 0.0);
    z.max(0.0).sqrt().max(floor.sqrt())
}

/// Scale that absorbs a rate-estimation error into the normalisation:
/// `M' = M (1 - rho_hat_plus - rho_hat_minus) / (1 - rho_plus - rho_minus)`.
pub fn effective_m_scale(true_rates: &NoiseSpec, est_rates: &NoiseSpec, m: f64) -> Result<f64> {
    true_rates.require_invertible()?;
    est_rates.require_invertible()?;
    Ok(m * est_rates.signal_factor() / true_rates.signal_factor())
}

/// A (prompt, response) pair with its ground truth, before scoring.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HoldoutItem {
    pub prompt_id: usize,
    pub response_id: usize,
    pub r_true: u8,
}

/// Relabels a uniformly chosen subset of positives as incorrect so that the
/// positive fraction hits `target_positive_fraction`. If positives are
/// already at or below the target the set is returned unchanged.
pub fn balanced_corrupt_holdout<R: Rng + ?Sized>(
    items: &[HoldoutItem],
    target_positive_fraction: f64,
    rng: &mut R,
) -> Result<Vec<HoldoutItem>> {
    if !(target_positive_fraction > 0.0 && target_positive_fraction < 1.0) {
        return Err(Error::InvalidConfig(format!(
            "target positive fraction {target_positive_fraction} not in (0, 1)"
        )));
    }
    let positives: Vec<usize> = (0..items.len()).filter(|&i| items[i].r_true == 1).collect();
    if positives.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "holdout needs at least 2 true positives, got {}",
            positives.len()
        )));
    }
    let excess = positives.len() as f64 - target_positive_fraction * items.len() as f64;
    let flips = excess.round().clamp(0.0, positives.len() as f64) as usize;
    let mut out = items.to_vec();
    for pick in index::sample(rng, positives.len(), flips).iter() {
        out[positives[pick]].r_true = 0;
    }
    Ok(out)
}

/// An observed reward paired with ground truth.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LabeledObservation {
    pub prompt_id: usize,
    pub response_id: usize,
    pub r_observed: u8,
    pub r_true: u8,
}

/// Sufficient statistics for rate estimation. Merging is associative.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct FlipCounts {
    pub negatives: u64,
    pub false_positives: u64,
    pub positives: u64,
    pub false_negatives: u64,
}

impl FlipCounts {
    pub fn from_observations(labeled: &[LabeledObservation]) -> Self {
        labeled.iter().fold(Self::default(), |mut c, obs| {
            if obs.r_true == 1 {
                c.positives += 1;
                c.false_negatives += u64::from(obs.r_observed == 0);
            } else {
                c.negatives += 1;
                c.false_positives += u64::from(obs.r_observed == 1);
            }
            c
        })
    }

    pub fn merge(self, other: Self) -> Self {
        Self {
            negatives: self.negatives + other.negatives,
            false_positives: self.false_positives + other.false_positives,
            positives: self.positives + other.positives,
            false_negatives: self.false_negatives + other.false_negatives,
        }
    }

    /// Conditional false-positive and false-negative frequencies.
    pub fn estimate(&self) -> Result<FlipRateEstimate> {
        if self.negatives == 0 || self.positives == 0 {
            return Err(Error::InsufficientData(format!(
                "need both classes, got {} positives and {} negatives",
                self.positives, self.negatives
            )));
        }
        FlipRateEstimate::new(
            self.false_positives as f64 / self.negatives as f64,
            self.false_negatives as f64 / self.positives as f64,
            (self.negatives + self.positives) as usize,
        )
    }
}

/// Estimates `(rho_plus, rho_minus)` as the conditional flip frequencies.
pub fn estimate_flip_rates(labeled: &[LabeledObservation]) -> Result<FlipRateEstimate> {
    FlipCounts::from_observations(labeled).estimate()
}

/// Binomial standard error `sqrt(rate (1 - rate) / n)`.
pub fn binomial_standard_error(rate: f64, n: u64) -> f64 {
    if n == 0 {
        return f64::NAN;
    }
    (rate * (1.0 - rate) / n as f64).sqrt()
}

pub const ESTIMATION_CSV_HEADER: [&str; 4] = ["prompt_id", "response_id", "r_observed", "r_true"];

fn parse_bit(field: &str, line: u64, name: &str) -> Result<u8> {
    match field.trim() {
        "0" => Ok(0),
        "1" => Ok(1),
        other => Err(Error::Csv(format!(
            "line {line}: {name} must be 0 or 1, got {other:?}"
        ))),
    }
}

/// Reads an estimation set with header `prompt_id,response_id,r_observed,r_true`.
pub fn read_estimation_csv<R: Read>(reader: R) -> Result<Vec<LabeledObservation>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.iter().map(str::trim).ne(ESTIMATION_CSV_HEADER) {
        return Err(Error::Csv(format!(
            "expected header {:?}, got {:?}",
            ESTIMATION_CSV_HEADER.join(","),
            headers.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut out = Vec::new();
    for record in rdr.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        let id = |i: usize, name: &str| -> Result<usize> {
            record[i]
                .trim()
                .parse::<usize>()
                .map_err(|e| Error::Csv(format!("line {line}: {name}: {e}")))
        };
        out.push(LabeledObservation {
            prompt_id: id(0, "prompt_id")?,
            response_id: id(1, "response_id")?,
            r_observed: parse_bit(&record[2], line, "r_observed")?,
            r_true: parse_bit(&record[3], line, "r_true")?,
        });
    }
    Ok(out)
}

pub fn write_estimation_csv<W: Write>(writer: W, labeled: &[LabeledObservation]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(ESTIMATION_CSV_HEADER)?;
    for obs in labeled {
        wtr.write_record([
            obs.prompt_id.to_string(),
            obs.response_id.to_string(),
            obs.r_observed.to_string(),
            obs.r_true.to_string(),
        ])?;
    }
    wtr.flush().map_err(|e| Error::Csv(e.to_string()))?;
    Ok(())
}
