//! Exact, sample-free policy dynamics on tabular prompts.
//!
//! Everything here is evaluated in closed form from probability vectors:
//! surrogate objectives, the total-variation improvement bounds, the
//! KL-regularised exponential-tilt update and the scalar success-probability
//! recursion it induces, clean and under a corruption channel.
//!
//! Wherever a standard deviation appears as a divisor it is stabilised as
//! `sqrt(var + epsilon)`; `epsilon = 0` recovers the unstabilised formulas.

use crate::error::{Error, Result};
use crate::reward_channel::{noisy_mean, NoiseSpec, PromptSpec};

/// Default stabiliser added under every square root.
pub const DEFAULT_EPSILON: f64 = 1e-6;

const PROB_TOL: f64 = 1e-12;

/// `p_pi(q)`: probability mass on the correct responses.
pub fn success_probability(policy: &[f64], prompt: &PromptSpec) -> f64 {
    policy
        .iter()
        .enumerate()
        .filter(|&(o, _)| prompt.is_correct(o))
        .map(|(_, &w)| w)
        .sum()
}

/// Variance `p (1 - p)` of the true Bernoulli reward.
pub fn reward_variance(p: f64) -> f64 {
    p * (1.0 - p)
}

/// `sqrt(p (1 - p) + epsilon)`.
pub fn stabilized_std(p: f64, epsilon: f64) -> f64 {
    (reward_variance(p) + epsilon).max(0.0).sqrt()
}

/// `sqrt(mu (1 - mu) + epsilon)` with `mu` the observed-reward mean.
pub fn stabilized_noisy_std(p: f64, noise: &NoiseSpec, epsilon: f64) -> f64 {
    stabilized_std(noisy_mean(p, noise), epsilon)
}

fn check_distribution(name: &str, v: &[f64], len: usize) -> Result<()> {
    if v.len() != len {
        return Err(Error::InvalidEnvironment(format!(
            "{name} has {} entries, prompt has {len} responses",
            v.len()
        )));
    }
    if v.iter().any(|x| !x.is_finite() || *x < 0.0) {
        return Err(Error::InvalidEnvironment(format!(
            "{name} has negative or non-finite entries"
        )));
    }
    let total: f64 = v.iter().sum();
    if (total - 1.0).abs() > PROB_TOL {
        return Err(Error::InvalidEnvironment(format!("{name} sums to {total}")));
    }
    Ok(())
}

/// A candidate policy `pi` and the current policy `pi_k` on one prompt.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscretePolicyPair {
    pub prompt: PromptSpec,
    pub pi: Vec<f64>,
    pub pi_k: Vec<f64>,
}

impl DiscretePolicyPair {
    pub fn new(prompt: PromptSpec, pi: Vec<f64>, pi_k: Vec<f64>) -> Result<Self> {
        check_distribution("pi", &pi, prompt.response_count())?;
        check_distribution("pi_k", &pi_k, prompt.response_count())?;
        Ok(Self { prompt, pi, pi_k })
    }

    pub fn p_pi(&self) -> f64 {
        success_probability(&self.pi, &self.prompt)
    }

    pub fn p_k(&self) -> f64 {
        success_probability(&self.pi_k, &self.prompt)
    }

    pub fn total_variation(&self) -> f64 {
        total_variation(&self.pi, &self.pi_k)
    }
}

/// Which normalisation the surrogate objective uses.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Surrogate {
    /// Divide by the true reward std of the current policy.
    Clean,
    /// Observed rewards through the prompt's channel, divided by their std.
    Noisy,
    /// Debiased rewards divided by an arbitrary positive `M`.
    Generalized(f64),
}

impl Surrogate {
    pub fn name(&self) -> &'static str {
        match self {
            Surrogate::Clean => "clean",
            Surrogate::Noisy => "noisy",
            Surrogate::Generalized(_) => "generalized",
        }
    }
}

fn positive_divisor(value: f64, what: &str) -> Result<f64> {
    if value > 0.0 && value.is_finite() {
        Ok(value)
    } else {
        Err(Error::DegenerateDivisor(format!("{what} = {value}")))
    }
}

/// Expected normalised advantage of `pi` under `pi_k`, evaluated exactly.
pub fn surrogate_loss(pair: &DiscretePolicyPair, variant: &Surrogate, epsilon: f64) -> Result<f64> {
    let delta = pair.p_pi() - pair.p_k();
    match *variant {
        Surrogate::Clean => {
            let sigma = positive_divisor(stabilized_std(pair.p_k(), epsilon), "sigma_k")?;
            Ok(delta / sigma)
        }
        Surrogate::Noisy => {
            let noise = pair.prompt.noise();
            let sigma = positive_divisor(
                stabilized_noisy_std(pair.p_k(), noise, epsilon),
                "noisy sigma_k",
            )?;
            Ok(noise.signal_factor() * delta / sigma)
        }
        Surrogate::Generalized(m) => Ok(delta / positive_divisor(m, "M")?),
    }
}

/// Factor multiplying the total-variation term of the improvement bound:
/// `(1 - sigma) / sigma`, `(1 - rho_plus - rho_minus - sigma~) / sigma~` or
/// `(1 - M) / M`.
pub fn penalty_coefficient(
    p: f64,
    variant: &Surrogate,
    noise: Option<&NoiseSpec>,
    epsilon: f64,
) -> Result<f64> {
    match *variant {
        Surrogate::Clean => {
            let sigma = positive_divisor(stabilized_std(p, epsilon), "sigma")?;
            Ok((1.0 - sigma) / sigma)
        }
        Surrogate::Noisy => {
            let noise = noise.ok_or_else(|| {
                Error::InvalidConfig("noisy penalty coefficient needs a channel".into())
            })?;
            let sigma = positive_divisor(stabilized_noisy_std(p, noise, epsilon), "noisy sigma")?;
            Ok((noise.signal_factor() - sigma) / sigma)
        }
        Surrogate::Generalized(m) => {
            let m = positive_divisor(m, "M")?;
            Ok((1.0 - m) / m)
        }
    }
}

/// Half the L1 distance between two distributions on the same support.
pub fn total_variation(a: &[f64], b: &[f64]) -> f64 {
    0.5 * a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>()
}

/// `KL(a || b)` for categorical distributions; infinite if `a` puts mass
/// where `b` has none.
pub fn kl_divergence(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .filter(|(x, _)| **x > 0.0)
        .map(|(x, y)| {
            if *y > 0.0 {
                x * (x / y).ln()
            } else {
                f64::INFINITY
            }
        })
        .sum()
}

/// Pinsker's inequality `TV <= sqrt(KL / 2)`.
pub fn pinsker_holds(a: &[f64], b: &[f64]) -> bool {
    total_variation(a, b) <= (kl_divergence(a, b) / 2.0).sqrt() + 1e-12
}

/// Both sides of an improvement bound and whether it holds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundCheck {
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
}

impl BoundCheck {
    pub fn margin(&self) -> f64 {
        self.lhs - self.rhs
    }
}

/// Evaluates `E_q[p_pi - p_k] >= E_q[L] - 2 sqrt(E_q[coef^2]) sqrt(E_q[TV^2])`
/// over weighted prompts. `variant_for(i, p_k)` picks the surrogate for
/// prompt `i`, which allows prompt-dependent divisors.
pub fn improvement_bound_check<F>(
    pairs: &[DiscretePolicyPair],
    weights: &[f64],
    mut variant_for: F,
    epsilon: f64,
) -> Result<BoundCheck>
where
    F: FnMut(usize, f64) -> Surrogate,
{
    if pairs.len() != weights.len() || pairs.is_empty() {
        return Err(Error::InvalidEnvironment(format!(
            "{} pairs but {} weights",
            pairs.len(),
            weights.len()
        )));
    }
    let (mut lhs, mut loss, mut coef2, mut tv2) = (0.0, 0.0, 0.0, 0.0);
    for (i, (pair, &w)) in pairs.iter().zip(weights).enumerate() {
        let p_k = pair.p_k();
        let variant = variant_for(i, p_k);
        let coef = penalty_coefficient(p_k, &variant, Some(pair.prompt.noise()), epsilon)?;
        let tv = pair.total_variation();
        lhs += w * (pair.p_pi() - p_k);
        loss += w * surrogate_loss(pair, &variant, epsilon)?;
        coef2 += w * coef * coef;
        tv2 += w * tv * tv;
    }
    let rhs = loss - 2.0 * coef2.sqrt() * tv2.sqrt();
    Ok(BoundCheck {
        lhs,
        rhs,
        holds: lhs >= rhs - 1e-9,
    })
}

/// Tilt weights `(omega_plus, omega_minus) = ((1 - p) / sigma, p / sigma)`
/// with `sigma = sqrt(p (1 - p) + epsilon)`. At `epsilon = 0` these are
/// `sqrt((1 - p) / p)` and `sqrt(p / (1 - p))`.
pub fn omega_weights(p: f64, epsilon: f64) -> Result<(f64, f64)> {
    let sigma = positive_divisor(stabilized_std(p, epsilon), "sigma")?;
    Ok(((1.0 - p) / sigma, p / sigma))
}

/// Tilt weights under a channel: `s (1 - p) / sigma~` and `s p / sigma~`,
/// `s = 1 - rho_plus - rho_minus`.
pub fn noisy_omega_weights(p: f64, noise: &NoiseSpec, epsilon: f64) -> Result<(f64, f64)> {
    let sigma = positive_divisor(stabilized_noisy_std(p, noise, epsilon), "noisy sigma")?;
    let s = noise.signal_factor();
    Ok((s * (1.0 - p) / sigma, s * p / sigma))
}

/// Parameters of the success-probability recursion.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RecursionConfig {
    beta: f64,
    epsilon: f64,
    p_ref: f64,
    noise: Option<NoiseSpec>,
}

impl RecursionConfig {
    pub fn new(beta: f64, epsilon: f64, p_ref: f64, noise: Option<NoiseSpec>) -> Result<Self> {
        if !(beta > 0.0 && beta.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "beta must be positive, got {beta}"
            )));
        }
        if !(epsilon >= 0.0 && epsilon.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "epsilon must be nonnegative, got {epsilon}"
            )));
        }
        if !(p_ref > 0.0 && p_ref < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "p_ref must be in (0, 1), got {p_ref}"
            )));
        }
        if let Some(n) = &noise {
            n.require_invertible()?;
        }
        Ok(Self {
            beta,
            epsilon,
            p_ref,
            noise,
        })
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn p_ref(&self) -> f64 {
        self.p_ref
    }

    pub fn noise(&self) -> Option<&NoiseSpec> {
        self.noise.as_ref()
    }

    /// Same parameters without a channel.
    pub fn clean(&self) -> Self {
        Self {
            noise: None,
            ..*self
        }
    }

    pub fn with_noise(&self, noise: NoiseSpec) -> Result<Self> {
        Self::new(self.beta, self.epsilon, self.p_ref, Some(noise))
    }

    /// Exponent magnitude `(omega_plus + omega_minus) / beta` at `p`.
    fn tilt_exponent(&self, p: f64) -> f64 {
        match &self.noise {
            None => 1.0 / (self.beta * stabilized_std(p, self.epsilon)),
            Some(n) => n.signal_factor() / (self.beta * stabilized_noisy_std(p, n, self.epsilon)),
        }
    }
}

/// One step of the recursion, `h(p)` (clean) or `h~(p)` (with a channel):
/// `1 / (1 + (1 - p_ref) / p_ref * exp(-x))` where `x` is the tilt exponent.
pub fn closed_form_step(p_prev: f64, config: &RecursionConfig) -> f64 {
    let odds_against = (1.0 - config.p_ref) / config.p_ref;
    let x = config.tilt_exponent(p_prev);
    1.0 / (1.0 + odds_against * (-x).exp())
}

/// `[p0, h(p0), h(h(p0)), ...]` with `k_max` steps.
pub fn iterate_recursion(config: &RecursionConfig, p0: f64, k_max: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(k_max + 1);
    out.push(p0);
    let mut p = p0;
    for _ in 0..k_max {
        p = closed_form_step(p, config);
        out.push(p);
    }
    out
}

/// A converged fixed point of the recursion.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FixedPoint {
    pub p: f64,
    pub residual: f64,
    pub iterations: usize,
}

const DAMPING: f64 = 0.5;

/// Fixed point reached from `p_ref`, the starting success probability of the
/// reference policy. Damped iteration first, bisection on `h(p) - p` over
/// `[p_ref, 1]` if that stalls.
pub fn fixed_point(config: &RecursionConfig, tol: f64, max_iter: usize) -> Result<FixedPoint> {
    if tol.is_nan() || tol <= 0.0 {
        return Err(Error::InvalidConfig(format!(
            "tol must be positive, got {tol}"
        )));
    }
    let residual = |p: f64| closed_form_step(p, config) - p;
    let mut p = config.p_ref;
    for it in 0..max_iter {
        let r = residual(p);
        if r.abs() <= tol {
            return Ok(FixedPoint {
                p,
                residual: r.abs(),
                iterations: it,
            });
        }
        p += DAMPING * r;
    }

    let (mut lo, mut hi) = (config.p_ref, 1.0);
    if residual(hi) >= 0.0 {
        // h(1) rounds to 1; p = 1 is itself a fixed point in floating point
        let r = residual(hi).abs();
        if r <= tol {
            return Ok(FixedPoint {
                p: hi,
                residual: r,
                iterations: max_iter,
            });
        }
    }
    let mut mid = 0.5 * (lo + hi);
    for it in 0..200 {
        mid = 0.5 * (lo + hi);
        let r = residual(mid);
        if r.abs() <= tol {
            return Ok(FixedPoint {
                p: mid,
                residual: r.abs(),
                iterations: max_iter + it,
            });
        }
        if r > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Err(Error::NoConvergence {
        iterations: max_iter + 200,
        last: mid,
        residual: residual(mid).abs(),
    })
}

/// Result of the exponential-tilt update on one prompt.
#[derive(Debug, Clone, PartialEq)]
pub struct TiltedPolicy {
    pub policy: Vec<f64>,
    /// `ln Z_k(q)`, the log normaliser of the tilted reference.
    pub log_partition: f64,
}

fn log_sum_exp(xs: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = xs.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + xs.map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Maximiser of the KL-regularised surrogate:
/// `pi_{k+1}(o) ∝ pi_ref(o) exp((omega_plus 1{r*=1} - omega_minus 1{r*=0}) / beta)`
/// with the weights evaluated at the current policy's success probability.
/// With a channel the noisy weights are used.
pub fn closed_form_policy_update(
    reference: &[f64],
    current: &[f64],
    prompt: &PromptSpec,
    beta: f64,
    epsilon: f64,
    noise: Option<&NoiseSpec>,
) -> Result<TiltedPolicy> {
    check_distribution("reference", reference, prompt.response_count())?;
    check_distribution("current", current, prompt.response_count())?;
    positive_divisor(beta, "beta")?;
    let p = success_probability(current, prompt);
    let (w_plus, w_minus) = match noise {
        None => omega_weights(p, epsilon)?,
        Some(n) => noisy_omega_weights(p, n, epsilon)?,
    };
    let tilt = |o: usize| {
        if prompt.is_correct(o) {
            w_plus / beta
        } else {
            -w_minus / beta
        }
    };
    let log_weights: Vec<f64> = reference
        .iter()
        .enumerate()
        .map(|(o, &w)| {
            if w > 0.0 {
                w.ln() + tilt(o)
            } else {
                f64::NEG_INFINITY
            }
        })
        .collect();
    let log_partition = log_sum_exp(log_weights.iter().copied());
    let policy = log_weights
        .iter()
        .map(|lw| (lw - log_partition).exp())
        .collect();
    Ok(TiltedPolicy {
        policy,
        log_partition,
    })
}

/// Closed-form `ln Z_k = ln(p_ref e^{omega_plus/beta} + (1 - p_ref) e^{-omega_minus/beta})`.
pub fn log_partition_closed_form(p_ref: f64, w_plus: f64, w_minus: f64, beta: f64) -> f64 {
    log_sum_exp(
        [
            p_ref.ln() + w_plus / beta,
            (1.0 - p_ref).ln() - w_minus / beta,
        ]
        .into_iter(),
    )
}

/// One row of the penalty-coefficient curves.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PenaltyRow {
    pub p: f64,
    pub clean: f64,
    pub noisy: f64,
    pub unit_divisor: f64,
}

/// Evaluates `p_count` evenly spaced points on `[lo, hi]`.
pub fn penalty_curves(
    lo: f64,
    hi: f64,
    p_count: usize,
    noise: &NoiseSpec,
    epsilon: f64,
) -> Result<Vec<PenaltyRow>> {
    if !(0.0 <= lo && lo < hi && hi <= 1.0) || p_count < 2 {
        return Err(Error::InvalidConfig(format!(
            "penalty grid needs 0 <= lo < hi <= 1 and at least 2 points, got [{lo}, {hi}] x {p_count}"
        )));
    }
    (0..p_count)
        .map(|i| {
            let p = lo + (hi - lo) * i as f64 / (p_count - 1) as f64;
            Ok(PenaltyRow {
                p,
                clean: penalty_coefficient(p, &Surrogate::Clean, None, epsilon)?,
                noisy: penalty_coefficient(p, &Surrogate::Noisy, Some(noise), epsilon)?,
                unit_divisor: penalty_coefficient(p, &Surrogate::Generalized(1.0), None, epsilon)?,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ns(a: f64, b: f64) -> NoiseSpec {
        NoiseSpec::new(a, b).unwrap()
    }

    fn prompt(n: usize, correct: &[usize], noise: NoiseSpec) -> PromptSpec {
        PromptSpec::new(n, correct, noise).unwrap()
    }

    #[test]
    fn success_probability_examples() {
        let q = prompt(4, &[0], ns(0.0, 0.0));
        assert_eq!(success_probability(&[0.25; 4], &q), 0.25);
        assert_eq!(success_probability(&[1.0, 0.0, 0.0, 0.0], &q), 1.0);
        let q = prompt(4, &[1, 3], ns(0.0, 0.0));
        assert!((success_probability(&[0.1, 0.2, 0.3, 0.4], &q) - 0.6).abs() < 1e-15);
    }

    fn pair_with(p_pi: f64, p_k: f64, noise: NoiseSpec) -> DiscretePolicyPair {
        DiscretePolicyPair::new(
            prompt(2, &[0], noise),
            vec![p_pi, 1.0 - p_pi],
            vec![p_k, 1.0 - p_k],
        )
        .unwrap()
    }

    #[test]
    fn surrogate_examples() {
        let noise = ns(0.2, 0.3);
        let same = pair_with(0.4, 0.4, noise);
        for v in [
            Surrogate::Clean,
            Surrogate::Noisy,
            Surrogate::Generalized(0.7),
        ] {
            assert_eq!(surrogate_loss(&same, &v, DEFAULT_EPSILON).unwrap(), 0.0);
        }
        let pair = pair_with(0.6, 0.5, noise);
        assert!((surrogate_loss(&pair, &Surrogate::Clean, 0.0).unwrap() - 0.2).abs() < 1e-12);
        // 0.5 * 0.1 / sqrt(0.45 * 0.55), mpmath
        let noisy = surrogate_loss(&pair, &Surrogate::Noisy, 0.0).unwrap();
        assert!((noisy - 0.100_503_781_525_921).abs() < 1e-12);
        let degenerate = pair_with(0.5, 1.0, noise);
        assert!(matches!(
            surrogate_loss(&degenerate, &Surrogate::Clean, 0.0),
            Err(Error::DegenerateDivisor(_))
        ));
    }

    #[test]
    fn penalty_examples() {
        assert!(
            (penalty_coefficient(0.5, &Surrogate::Clean, None, 0.0).unwrap() - 1.0).abs() < 1e-15
        );
        for p in [0.0, 0.3, 1.0] {
            assert_eq!(
                penalty_coefficient(p, &Surrogate::Generalized(1.0), None, 0.0).unwrap(),
                0.0
            );
        }
        let noise = ns(0.2, 0.3);
        for i in 1..100 {
            let p = i as f64 / 100.0;
            let clean = penalty_coefficient(p, &Surrogate::Clean, None, DEFAULT_EPSILON).unwrap();
            let noisy =
                penalty_coefficient(p, &Surrogate::Noisy, Some(&noise), DEFAULT_EPSILON).unwrap();
            assert!(noisy.is_finite() && noisy < clean, "p={p}");
        }
        assert!(penalty_coefficient(0.0, &Surrogate::Clean, None, 0.0).is_err());
        assert!(penalty_coefficient(0.5, &Surrogate::Noisy, None, 0.0).is_err());
    }

    #[test]
    fn bound_at_identical_policies() {
        let pair = pair_with(0.3, 0.3, ns(0.1, 0.1));
        for v in [
            Surrogate::Clean,
            Surrogate::Noisy,
            Surrogate::Generalized(2.0),
        ] {
            let b = improvement_bound_check(
                std::slice::from_ref(&pair),
                &[1.0],
                |_, _| v,
                DEFAULT_EPSILON,
            )
            .unwrap();
            assert_eq!(b.lhs, 0.0);
            assert!(b.rhs <= 0.0 && b.holds);
        }
    }

    #[test]
    fn omega_examples() {
        assert_eq!(omega_weights(0.5, 0.0).unwrap(), (1.0, 1.0));
        let (a, b) = omega_weights(0.8, 0.0).unwrap();
        assert!((a - 0.5).abs() < 1e-15 && (b - 2.0).abs() < 1e-15);
        for i in 1..100 {
            let (a, b) = omega_weights(i as f64 / 100.0, 0.0).unwrap();
            assert!((a * b - 1.0).abs() < 1e-12);
        }
        assert!(omega_weights(0.0, 0.0).is_err());
        assert!(omega_weights(1.0, 1e-6).is_ok());
    }

    fn cfg(beta: f64, p_ref: f64, noise: Option<NoiseSpec>) -> RecursionConfig {
        RecursionConfig::new(beta, DEFAULT_EPSILON, p_ref, noise).unwrap()
    }

    #[test]
    fn config_validation() {
        assert!(RecursionConfig::new(0.0, 0.0, 0.5, None).is_err());
        assert!(RecursionConfig::new(1.0, -1.0, 0.5, None).is_err());
        assert!(RecursionConfig::new(1.0, 0.0, 1.0, None).is_err());
        assert!(RecursionConfig::new(1.0, 0.0, 0.5, Some(ns(0.5, 0.5))).is_err());
    }

    #[test]
    fn step_examples() {
        let c = cfg(1e9, 0.3, None);
        assert!((closed_form_step(0.7, &c) - 0.3).abs() < 1e-8);
        assert!(closed_form_step(0.7, &c) > 0.3);

        let clean = cfg(0.7, 0.4, None);
        let zero = cfg(0.7, 0.4, Some(ns(0.0, 0.0)));
        for i in 0..=100 {
            let p = i as f64 / 100.0;
            assert_eq!(closed_form_step(p, &clean), closed_form_step(p, &zero));
        }
        // beta = 0.01 saturates: 1 - 1.4e-87 rounds to 1
        assert_eq!(closed_form_step(0.5, &cfg(0.01, 0.5, None)), 1.0);
    }

    #[test]
    fn iterate_examples() {
        let c = cfg(0.8, 0.2, Some(ns(0.2, 0.3)));
        assert_eq!(iterate_recursion(&c, 0.6, 0), vec![0.6]);
        let noisy = iterate_recursion(&c, 0.05, 30);
        let clean = iterate_recursion(&c.clean(), 0.05, 30);
        for k in 1..=30 {
            assert!(noisy[k] > 0.2 && clean[k] > 0.2);
            assert!(clean[k] > noisy[k], "k={k}");
        }
    }

    #[test]
    fn fixed_points_match_high_precision_reference() {
        // beta = 1, p_ref = 0.25, eps = 1e-6, evaluated with mpmath at 40 digits
        let base = cfg(1.0, 0.25, None);
        let expected = [
            (None, 0.810_318_403_829_751),
            (Some((0.05, 0.15)), 0.624_655_415_994_281),
            (Some((0.1, 0.2)), 0.574_784_812_228_264),
            (Some((0.2, 0.3)), 0.477_266_580_702_478),
            (Some((0.3, 0.4)), 0.380_002_735_562_596),
            (Some((0.4, 0.5)), 0.289_757_136_110_784),
        ];
        for (noise, p_star) in expected {
            let c = match noise {
                None => base,
                Some((a, b)) => base.with_noise(ns(a, b)).unwrap(),
            };
            let fp = fixed_point(&c, 1e-12, 10_000).unwrap();
            assert!(
                (fp.p - p_star).abs() < 1e-10,
                "{noise:?}: {} vs {p_star}",
                fp.p
            );
            assert!(fp.residual <= 1e-12);
        }
    }

    #[test]
    fn fixed_point_saturates_for_small_beta() {
        let fp = fixed_point(&cfg(1e-3, 0.3, None), 1e-12, 1000).unwrap();
        assert!(fp.p > 0.999);
        let noisy = fixed_point(&cfg(0.5, 0.2, Some(ns(0.4, 0.5))), 1e-12, 10_000).unwrap();
        assert!(noisy.p > 0.2);
        assert!(fixed_point(&cfg(0.5, 0.2, None), 0.0, 10).is_err());
    }

    #[test]
    fn two_atom_update_matches_hand_algebra() {
        let q = prompt(2, &[0], ns(0.0, 0.0));
        let beta = 0.7;
        let out = closed_form_policy_update(&[0.5, 0.5], &[0.5, 0.5], &q, beta, 0.0, None).unwrap();
        let expected = 1.0 / (1.0 + (-2.0f64 / beta).exp());
        assert!((out.policy[0] - expected).abs() < 1e-12);
        // mpmath: 1/(1+exp(-2/0.7))
        assert!((out.policy[0] - 0.945_686_733_867_359).abs() < 1e-12);
        let c = RecursionConfig::new(beta, 0.0, 0.5, None).unwrap();
        assert!((closed_form_step(0.5, &c) - expected).abs() < 1e-12);
        assert!((out.log_partition - log_partition_closed_form(0.5, 1.0, 1.0, beta)).abs() < 1e-12);
    }

    #[test]
    fn large_beta_returns_reference() {
        let q = prompt(3, &[2], ns(0.0, 0.0));
        let reference = [0.2, 0.5, 0.3];
        let out =
            closed_form_policy_update(&reference, &[0.1, 0.1, 0.8], &q, 1e12, 1e-6, None).unwrap();
        for (a, b) in out.policy.iter().zip(reference) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn penalty_curve_shape() {
        let rows = penalty_curves(0.01, 0.99, 99, &ns(0.2, 0.3), DEFAULT_EPSILON).unwrap();
        assert_eq!(rows.len(), 99);
        assert!(rows.iter().all(|r| r.unit_divisor == 0.0));
        assert!(rows[0].clean > 8.0 && rows[0].noisy < 1.0);
        assert!(penalty_curves(0.5, 0.5, 10, &ns(0.0, 0.0), 0.0).is_err());
    }

    #[test]
    fn pinsker_on_examples() {
        assert!(pinsker_holds(&[0.5, 0.5], &[0.9, 0.1]));
        assert!(pinsker_holds(&[0.2, 0.3, 0.5], &[0.2, 0.3, 0.5]));
        assert_eq!(kl_divergence(&[0.5, 0.5], &[1.0, 0.0]), f64::INFINITY);
    }

    use proptest::prelude::*;

    fn distribution(n: usize) -> impl Strategy<Value = Vec<f64>> {
        proptest::collection::vec(0.01f64..1.0, n).prop_map(|v| {
            let t: f64 = v.iter().sum();
            let mut out: Vec<f64> = v.iter().map(|x| x / t).collect();
            let head: f64 = out[1..].iter().sum();
            out[0] = 1.0 - head;
            out
        })
    }

    fn instance() -> impl Strategy<Value = (DiscretePolicyPair, f64, f64)> {
        (2usize..=6)
            .prop_flat_map(|n| {
                (
                    Just(n),
                    1usize..n,
                    distribution(n),
                    distribution(n),
                    0.0f64..0.49,
                    0.0f64..0.49,
                    0.05f64..3.0,
                    0.0f64..1.0,
                )
            })
            .prop_map(|(n, k, pi, pi_k, rp, rm, beta, pick)| {
                let correct: Vec<usize> = (0..k).collect();
                let q = prompt(n, &correct, ns(rp, rm));
                (DiscretePolicyPair::new(q, pi, pi_k).unwrap(), beta, pick)
            })
    }

    proptest! {
        #[test]
        fn update_pushes_forward_to_recursion((pair, beta, _) in instance(), noisy in any::<bool>()) {
            let noise = noisy.then(|| *pair.prompt.noise());
            let out = closed_form_policy_update(&pair.pi, &pair.pi_k, &pair.prompt, beta, DEFAULT_EPSILON, noise.as_ref()).unwrap();
            let total: f64 = out.policy.iter().sum();
            prop_assert!((total - 1.0).abs() < 1e-12);
            prop_assert!(out.policy.iter().all(|&w| w >= 0.0));
            let p_ref = pair.p_pi();
            let c = RecursionConfig::new(beta, DEFAULT_EPSILON, p_ref, noise).unwrap();
            let via_policy = success_probability(&out.policy, &pair.prompt);
            prop_assert!((via_policy - closed_form_step(pair.p_k(), &c)).abs() < 1e-10);
            let (wp, wm) = match &noise {
                None => omega_weights(pair.p_k(), DEFAULT_EPSILON).unwrap(),
                Some(n) => noisy_omega_weights(pair.p_k(), n, DEFAULT_EPSILON).unwrap(),
            };
            prop_assert!((out.log_partition - log_partition_closed_form(p_ref, wp, wm, beta)).abs() < 1e-9);
        }

        #[test]
        fn noise_attenuates_the_surrogate((pair, _, _) in instance()) {
            let clean = surrogate_loss(&pair, &Surrogate::Clean, DEFAULT_EPSILON).unwrap();
            let noisy = surrogate_loss(&pair, &Surrogate::Noisy, DEFAULT_EPSILON).unwrap();
            prop_assert!(noisy.abs() <= clean.abs() + 1e-12);
            if pair.p_pi() >= pair.p_k() {
                prop_assert!(noisy <= clean + 1e-12);
            }
        }

        #[test]
        fn bounds_hold_for_every_variant((pair, _, pick) in instance()) {
            for v in [Surrogate::Clean, Surrogate::Noisy, Surrogate::Generalized(0.05 + 2.0 * pick)] {
                let b = improvement_bound_check(std::slice::from_ref(&pair), &[1.0], |_, _| v, DEFAULT_EPSILON).unwrap();
                prop_assert!(b.holds, "{:?}: {:?}", v, b);
            }
        }

        #[test]
        fn amplification_above_reference(p0 in 0.0f64..=1.0, beta in 0.05f64..5.0, p_ref in 0.01f64..0.99, rp in 0.0f64..0.49, rm in 0.0f64..0.49) {
            let c = RecursionConfig::new(beta, DEFAULT_EPSILON, p_ref, Some(ns(rp, rm))).unwrap();
            for traj in [iterate_recursion(&c, p0, 20), iterate_recursion(&c.clean(), p0, 20)] {
                prop_assert!(traj[1..].iter().all(|&p| p > p_ref && p <= 1.0));
            }
        }
    }
}
