//! Seeded property suites over the channel, correction, dynamics and trainer.
//!
//! Every check produces one row per instance with a signed `margin`; the row
//! passes iff `margin >= 0` (strictly `> 0` for strict inequalities).

use std::fmt::Write as _;

use ncgrpo_core::correction::FlipRateEstimate;
use ncgrpo_core::correction::{
    balanced_corrupt_holdout, debias, effective_m_scale, estimate_flip_rates, variance_estimate_z,
    HoldoutItem, LabeledObservation,
};
use ncgrpo_core::dynamics::{
    closed_form_policy_update, closed_form_step, fixed_point, improvement_bound_check,
    iterate_recursion, kl_divergence, stabilized_std, success_probability, total_variation,
    DiscretePolicyPair, RecursionConfig, Surrogate, DEFAULT_EPSILON,
};
use ncgrpo_core::format::fmt_g;
use ncgrpo_core::reward_channel::{corrupt, RewardDraw};
use ncgrpo_core::rng::{self, Domain};
use ncgrpo_core::trainer::{
    centered_advantages, group_advantages, objective_gradient, softmax, standardized_advantages,
    surrogate_objective, Correction, GroupSample, ScoredGroup, TabularPolicy, TrainerConfig,
};
use ncgrpo_core::{NoiseSpec, PromptSpec};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::config::TABLE_NOISE_GRID;
use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Suite {
    Bounds,
    Unbiasedness,
    Recursion,
    Gradient,
    All,
}

impl Suite {
    pub fn name(&self) -> &'static str {
        match self {
            Suite::Bounds => "bounds",
            Suite::Unbiasedness => "unbiasedness",
            Suite::Recursion => "recursion",
            Suite::Gradient => "gradient",
            Suite::All => "all",
        }
    }

    pub fn parse(s: &str) -> Result<Self, CliError> {
        match s {
            "bounds" => Ok(Suite::Bounds),
            "unbiasedness" => Ok(Suite::Unbiasedness),
            "recursion" => Ok(Suite::Recursion),
            "gradient" => Ok(Suite::Gradient),
            "all" => Ok(Suite::All),
            other => Err(CliError::Config(format!("unknown suite {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckRow {
    pub suite: &'static str,
    pub check: &'static str,
    pub instance: usize,
    pub margin: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundRow {
    pub variant: &'static str,
    pub seed: u64,
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct VerifyReport {
    pub checks: Vec<CheckRow>,
    pub bounds: Vec<BoundRow>,
}

/// Pass/fail totals for one check.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckSummary {
    pub suite: &'static str,
    pub check: &'static str,
    pub instances: usize,
    pub failures: usize,
    pub min_margin: f64,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn summaries(&self) -> Vec<CheckSummary> {
        let mut out: Vec<CheckSummary> = Vec::new();
        for row in &self.checks {
            match out
                .iter_mut()
                .find(|s| s.suite == row.suite && s.check == row.check)
            {
                Some(s) => {
                    s.instances += 1;
                    s.failures += usize::from(!row.passed);
                    s.min_margin = s.min_margin.min(row.margin);
                }
                None => out.push(CheckSummary {
                    suite: row.suite,
                    check: row.check,
                    instances: 1,
                    failures: usize::from(!row.passed),
                    min_margin: row.margin,
                }),
            }
        }
        out
    }

    pub fn checks_csv(&self) -> String {
        let mut s = String::from("suite,check,instance,margin,passed\n");
        for r in &self.checks {
            let _ = writeln!(
                s,
                "{},{},{},{},{}",
                r.suite,
                r.check,
                r.instance,
                fmt_g(r.margin),
                u8::from(r.passed)
            );
        }
        s
    }

    pub fn bounds_csv(&self) -> String {
        let mut s = String::from("variant,seed,lhs,rhs,holds\n");
        for r in &self.bounds {
            let _ = writeln!(
                s,
                "{},{},{},{},{}",
                r.variant,
                r.seed,
                fmt_g(r.lhs),
                fmt_g(r.rhs),
                u8::from(r.holds)
            );
        }
        s
    }

    fn extend(&mut self, other: VerifyReport) {
        self.checks.extend(other.checks);
        self.bounds.extend(other.bounds);
    }
}

fn row(suite: &'static str, check: &'static str, instance: usize, margin: f64) -> CheckRow {
    CheckRow {
        suite,
        check,
        instance,
        margin,
        passed: margin >= 0.0,
    }
}

fn strict_row(suite: &'static str, check: &'static str, instance: usize, margin: f64) -> CheckRow {
    CheckRow {
        passed: margin > 0.0,
        ..row(suite, check, instance, margin)
    }
}

pub const BOUND_INSTANCES: usize = 1000;

pub fn run(suite: Suite, seed: u64) -> VerifyReport {
    let mut report = VerifyReport::default();
    let all = suite == Suite::All;
    if all || suite == Suite::Unbiasedness {
        report.extend(unbiasedness(seed));
    }
    if all || suite == Suite::Recursion {
        report.extend(recursion(seed));
    }
    if all || suite == Suite::Bounds {
        report.extend(bounds(seed, BOUND_INSTANCES));
    }
    if all || suite == Suite::Gradient {
        report.extend(gradient(seed));
    }
    report
}

fn random_distribution(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let logits: Vec<f64> = (0..n).map(|_| rng.gen_range(-3.0..3.0)).collect();
    softmax(&logits)
}

fn random_prompt(rng: &mut ChaCha8Rng, noise: NoiseSpec) -> PromptSpec {
    let n = rng.gen_range(2..=6);
    let k = rng.gen_range(1..n);
    let mut ids: Vec<usize> = (0..n).collect();
    rand::seq::SliceRandom::shuffle(ids.as_mut_slice(), rng);
    PromptSpec::new(n, &ids[..k], noise).expect("valid prompt")
}

fn random_noise(rng: &mut ChaCha8Rng) -> NoiseSpec {
    loop {
        let (a, b) = (rng.gen_range(0.0..0.5), rng.gen_range(0.0..0.5));
        if a + b < 0.95 {
            return NoiseSpec::new(a, b).expect("probabilities");
        }
    }
}

/// A multi-prompt instance on supports of size at most 6, with a local
/// candidate `pi` near `pi_k` about half the time.
pub fn random_bound_instance(
    rng: &mut ChaCha8Rng,
    noisy: bool,
) -> (Vec<DiscretePolicyPair>, Vec<f64>) {
    let count = rng.gen_range(1..=3);
    let mut pairs = Vec::with_capacity(count);
    for _ in 0..count {
        let noise = if noisy {
            random_noise(rng)
        } else {
            NoiseSpec::noiseless()
        };
        let prompt = random_prompt(rng, noise);
        let n = prompt.response_count();
        let pi_k = random_distribution(rng, n);
        let pi = if rng.gen_bool(0.5) {
            let t: f64 = rng.gen_range(0.0..0.2);
            let other = random_distribution(rng, n);
            pi_k.iter()
                .zip(&other)
                .map(|(a, b)| (1.0 - t) * a + t * b)
                .collect()
        } else {
            random_distribution(rng, n)
        };
        pairs.push(DiscretePolicyPair::new(prompt, pi, pi_k).expect("distributions"));
    }
    let raw: Vec<f64> = (0..count).map(|_| rng.gen_range(0.1..1.0)).collect();
    let total: f64 = raw.iter().sum();
    (pairs, raw.into_iter().map(|w| w / total).collect())
}

pub fn bounds(seed: u64, instances: usize) -> VerifyReport {
    const S: &str = "bounds";
    let variants: [&'static str; 3] = ["clean", "noisy", "generalized"];
    let per_variant: Vec<Vec<(BoundRow, Option<f64>, f64)>> = variants
        .par_iter()
        .enumerate()
        .map(|(v, &name)| {
            (0..instances)
                .map(|i| {
                    let mut r = rng::stream(seed, Domain::Verify, 100 + v as u64, i as u64);
                    let (pairs, weights) = random_bound_instance(&mut r, name == "noisy");
                    let divisors: Vec<f64> = pairs.iter().map(|_| r.gen_range(0.05..2.0)).collect();
                    let check = match name {
                        "clean" => improvement_bound_check(
                            &pairs,
                            &weights,
                            |_, _| Surrogate::Clean,
                            DEFAULT_EPSILON,
                        ),
                        "noisy" => improvement_bound_check(
                            &pairs,
                            &weights,
                            |_, _| Surrogate::Noisy,
                            DEFAULT_EPSILON,
                        ),
                        _ => improvement_bound_check(
                            &pairs,
                            &weights,
                            |j, _| Surrogate::Generalized(divisors[j]),
                            DEFAULT_EPSILON,
                        ),
                    }
                    .expect("well-posed instance");
                    // generalized bound at M = sigma_k against the clean bound
                    let same = (name == "clean").then(|| {
                        let g = improvement_bound_check(
                            &pairs,
                            &weights,
                            |_, p| Surrogate::Generalized(stabilized_std(p, DEFAULT_EPSILON)),
                            DEFAULT_EPSILON,
                        )
                        .expect("well-posed instance");
                        (g.rhs - check.rhs).abs()
                    });
                    let pinsker = pairs
                        .iter()
                        .map(|p| {
                            (kl_divergence(&p.pi, &p.pi_k) / 2.0).sqrt() + 1e-12
                                - total_variation(&p.pi, &p.pi_k)
                        })
                        .fold(f64::INFINITY, f64::min);
                    (
                        BoundRow {
                            variant: name,
                            seed: i as u64,
                            lhs: check.lhs,
                            rhs: check.rhs,
                            holds: check.holds,
                        },
                        same,
                        pinsker,
                    )
                })
                .collect()
        })
        .collect();
    let mut report = VerifyReport::default();
    for rows in per_variant {
        for (i, (b, same, pinsker)) in rows.into_iter().enumerate() {
            let check = match b.variant {
                "clean" => "clean_bound",
                "noisy" => "noisy_bound",
                _ => "generalized_bound",
            };
            report.checks.push(row(S, check, i, b.lhs - b.rhs + 1e-9));
            if let Some(diff) = same {
                report.checks.push(row(
                    S,
                    "generalized_at_sigma_matches_clean",
                    i,
                    1e-12 - diff,
                ));
            }
            if b.variant == "clean" {
                report.checks.push(row(S, "pinsker", i, pinsker));
            }
            report.bounds.push(b);
        }
    }
    report
}

const DEBIAS_GRID: [f64; 5] = [0.0, 0.1, 0.2, 0.3, 0.4];

/// `P(r~ = 1 | r*)`.
pub fn channel_positive_probability(r_true: u8, noise: &NoiseSpec) -> f64 {
    if r_true == 1 {
        1.0 - noise.rho_minus()
    } else {
        noise.rho_plus()
    }
}

/// Exact `E[Z]` over all outcomes of `n` i.i.d. (r*, r~) draws.
pub fn exact_expected_z(p: f64, noise: &NoiseSpec, n: usize) -> f64 {
    let mut total = 0.0;
    for code in 0..(1usize << (2 * n)) {
        let mut prob = 1.0;
        let mut debiased = Vec::with_capacity(n);
        for i in 0..n {
            let r_true = ((code >> (2 * i)) & 1) as u8;
            let r_noisy = ((code >> (2 * i + 1)) & 1) as u8;
            let q = channel_positive_probability(r_true, noise);
            prob *= if r_true == 1 { p } else { 1.0 - p };
            prob *= if r_noisy == 1 { q } else { 1.0 - q };
            debiased.push(debias(r_noisy, noise).expect("invertible").value);
        }
        total += prob * variance_estimate_z(&debiased, noise).expect("n >= 2");
    }
    total
}

pub const Z_EXACT_CASES: [(f64, f64, f64); 3] =
    [(0.5, 0.2, 0.3), (0.3, 0.1, 0.05), (0.8, 0.0, 0.4)];

pub fn unbiasedness(seed: u64) -> VerifyReport {
    const S: &str = "unbiasedness";
    let mut report = VerifyReport::default();
    let mut i = 0;
    for &a in &DEBIAS_GRID {
        for &b in &DEBIAS_GRID {
            let noise = NoiseSpec::new(a, b).expect("grid");
            for r_true in [0u8, 1] {
                let q = channel_positive_probability(r_true, &noise);
                let mean = q * debias(1, &noise).expect("grid").value
                    + (1.0 - q) * debias(0, &noise).expect("grid").value;
                report.checks.push(row(
                    S,
                    "debias_expectation",
                    i,
                    1e-12 - (mean - f64::from(r_true)).abs(),
                ));
                i += 1;
            }
        }
    }
    let mut i = 0;
    for &(p, a, b) in &Z_EXACT_CASES {
        let noise = NoiseSpec::new(a, b).expect("case");
        for n in 2..=4 {
            let err = (exact_expected_z(p, &noise, n) - p * (1.0 - p)).abs();
            report
                .checks
                .push(row(S, "z_exact_expectation", i, 1e-10 - err));
            i += 1;
        }
    }
    let noise = NoiseSpec::new(0.2, 0.3).expect("case");
    let mut r = rng::stream(seed, Domain::Verify, 200, 0);
    let groups = 10_000;
    let mut sum = 0.0;
    for _ in 0..groups {
        let debiased: Vec<f64> = (0..64)
            .map(|_| {
                let r_true = u8::from(r.gen::<f64>() < 0.5);
                debias(corrupt(r_true, &noise, r.gen()), &noise)
                    .expect("invertible")
                    .value
            })
            .collect();
        sum += variance_estimate_z(&debiased, &noise).expect("n >= 2");
    }
    report.checks.push(row(
        S,
        "z_monte_carlo",
        0,
        0.01 - (sum / groups as f64 - 0.25).abs(),
    ));

    for i in 0..100 {
        let mut r = rng::stream(seed, Domain::Verify, 201, i as u64);
        report.checks.push(row(
            S,
            "estimated_rates_rescale_divisor",
            i,
            1e-12 - scale_identity_error(&mut r),
        ));
    }

    let within = (0..100)
        .filter(|&t| {
            let mut r = rng::stream(seed, Domain::Verify, 202, t as u64);
            let est = balanced_estimate(&mut r, NoiseSpec::new(0.2, 0.3).expect("case"), 2000);
            (est.0 - 0.2).abs() <= 0.04 && (est.1 - 0.3).abs() <= 0.04
        })
        .count();
    report
        .checks
        .push(row(S, "flip_rate_recovery", 0, within as f64 - 99.0));
    report
}

/// Largest `|A_est / M - A_true / M'|` over a random batch.
fn scale_identity_error(r: &mut ChaCha8Rng) -> f64 {
    let truth = random_noise(r);
    let est = loop {
        let e = random_noise(r);
        if e.signal_factor() > 0.05 {
            break e;
        }
    };
    let truth = if truth.signal_factor() > 0.05 {
        truth
    } else {
        NoiseSpec::noiseless()
    };
    let g = r.gen_range(2..=16);
    let bits: Vec<u8> = (0..g).map(|_| u8::from(r.gen_bool(0.5))).collect();
    let m: f64 = r.gen_range(0.1..3.0);
    let with = |rates: &NoiseSpec| -> Vec<f64> {
        bits.iter()
            .map(|&b| debias(b, rates).expect("invertible").value)
            .collect()
    };
    let a_est = centered_advantages(&with(&est), m).expect("positive");
    let m_prime = effective_m_scale(&truth, &est, m).expect("invertible");
    let a_true = centered_advantages(&with(&truth), m_prime).expect("positive");
    a_est
        .signal()
        .zip(a_true.signal())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// Rates recovered from `n` all-correct items balanced to half positives and
/// passed through `noise`.
pub fn balanced_estimate(r: &mut ChaCha8Rng, noise: NoiseSpec, n: usize) -> (f64, f64) {
    let items: Vec<HoldoutItem> = (0..n)
        .map(|i| HoldoutItem {
            prompt_id: i,
            response_id: 0,
            r_true: 1,
        })
        .collect();
    let balanced = balanced_corrupt_holdout(&items, 0.5, r).expect("positives");
    let labeled: Vec<LabeledObservation> = balanced
        .iter()
        .map(|it| LabeledObservation {
            prompt_id: it.prompt_id,
            response_id: it.response_id,
            r_observed: corrupt(it.r_true, &noise, r.gen()),
            r_true: it.r_true,
        })
        .collect();
    let est = estimate_flip_rates(&labeled).expect("both classes");
    (est.rho_plus_hat(), est.rho_minus_hat())
}

pub const RECURSION_GRID_POINTS: usize = 1001;

pub fn recursion(seed: u64) -> VerifyReport {
    recursion_with(
        &RecursionConfig::new(1.0, DEFAULT_EPSILON, 0.25, None).expect("config"),
        &TABLE_NOISE_GRID,
        seed,
    )
}

pub fn recursion_with(clean: &RecursionConfig, grid: &[[f64; 2]], seed: u64) -> VerifyReport {
    const S: &str = "recursion";
    let mut report = VerifyReport::default();
    let p_ref = clean.p_ref();
    let clean_fp = fixed_point(clean, 1e-12, 100_000);
    for (j, &[a, b]) in grid.iter().enumerate() {
        let noisy = clean
            .with_noise(NoiseSpec::new(a, b).expect("grid"))
            .expect("invertible");
        let dominance = (0..RECURSION_GRID_POINTS)
            .map(|i| {
                let p = i as f64 / (RECURSION_GRID_POINTS - 1) as f64;
                closed_form_step(p, clean) - closed_form_step(p, &noisy)
            })
            .fold(f64::INFINITY, f64::min);
        report
            .checks
            .push(strict_row(S, "noisy_step_below_clean", j, dominance));
        let margin =
            match (&clean_fp, fixed_point(&noisy, 1e-12, 100_000)) {
                (Ok(c), Ok(n)) => (c.p - n.p).min(n.p - p_ref).min(
                    if c.residual <= 1e-12 && n.residual <= 1e-12 {
                        f64::INFINITY
                    } else {
                        -1.0
                    },
                ),
                _ => -1.0,
            };
        report
            .checks
            .push(strict_row(S, "fixed_point_ordering", j, margin));
        let amplification = (0..=10)
            .flat_map(|s| {
                let p0 = s as f64 / 10.0;
                let c = iterate_recursion(clean, p0, 20);
                let n = iterate_recursion(&noisy, p0, 20);
                c.into_iter()
                    .skip(1)
                    .chain(n.into_iter().skip(1))
                    .collect::<Vec<_>>()
            })
            .map(|p| p - p_ref)
            .fold(f64::INFINITY, f64::min);
        report
            .checks
            .push(strict_row(S, "iterates_exceed_reference", j, amplification));
    }
    for i in 0..100 {
        let mut r = rng::stream(seed, Domain::Verify, 300, i as u64);
        let with_noise = r.gen_bool(0.5);
        let noise = random_noise(&mut r);
        let prompt = random_prompt(&mut r, noise);
        let n = prompt.response_count();
        let reference = random_distribution(&mut r, n);
        let current = random_distribution(&mut r, n);
        let beta = r.gen_range(0.2..5.0);
        let p_ref = success_probability(&reference, &prompt);
        let noise_opt = with_noise.then_some(&noise);
        let update = closed_form_policy_update(
            &reference,
            &current,
            &prompt,
            beta,
            DEFAULT_EPSILON,
            noise_opt,
        )
        .expect("valid update");
        let cfg =
            RecursionConfig::new(beta, DEFAULT_EPSILON, p_ref, noise_opt.copied()).expect("config");
        let err = (success_probability(&update.policy, &prompt)
            - closed_form_step(success_probability(&current, &prompt), &cfg))
        .abs();
        report
            .checks
            .push(row(S, "update_pushes_forward_to_step", i, 1e-10 - err));
    }
    report
}

/// Exact expected gradient of the one-group objective at `policy` (ratios 1)
/// over all response pairs and, if `noise` is set, all corruption outcomes.
pub fn enumerated_expected_gradient(
    policy: &TabularPolicy,
    prompt: &PromptSpec,
    config: &TrainerConfig,
    noise: Option<&NoiseSpec>,
) -> Vec<f64> {
    let probs = policy.probs(0);
    let n = probs.len();
    let mut expected = vec![0.0; n];
    let outcome_count = if noise.is_some() { 4 } else { 1 };
    for o1 in 0..n {
        for o2 in 0..n {
            let responses = [o1, o2];
            for code in 0..outcome_count {
                let mut weight = probs[o1] * probs[o2];
                let draws: Vec<RewardDraw> = responses
                    .iter()
                    .enumerate()
                    .map(|(i, &o)| {
                        let r_true = prompt.true_reward(o);
                        let r_noisy = match noise {
                            None => r_true,
                            Some(ns) => {
                                let bit = ((code >> i) & 1) as u8;
                                let q = channel_positive_probability(r_true, ns);
                                weight *= if bit == 1 { q } else { 1.0 - q };
                                bit
                            }
                        };
                        RewardDraw {
                            r_true,
                            r_noisy,
                            xi: 0.0,
                        }
                    })
                    .collect();
                let sample = GroupSample {
                    prompt_id: 0,
                    responses: responses.to_vec(),
                    draws,
                    old_probs: responses.iter().map(|&o| probs[o]).collect(),
                };
                let batch = group_advantages(&sample, config).expect("valid group");
                let grad =
                    objective_gradient(policy, &[ScoredGroup { sample, batch }], config.beta);
                for (e, g) in expected.iter_mut().zip(&grad[0]) {
                    *e += weight * g;
                }
            }
        }
    }
    expected
}

pub fn gradient(seed: u64) -> VerifyReport {
    const S: &str = "gradient";
    let mut report = VerifyReport::default();
    let noise = NoiseSpec::new(0.2, 0.3).expect("case");
    let prompt = PromptSpec::new(4, &[0, 2], noise).expect("prompt");
    let policy =
        TabularPolicy::new(vec![vec![0.3, -0.1, 0.5, -0.7]], vec![vec![0.0; 4]]).expect("policy");
    let clean_cfg = TrainerConfig {
        group_size: 2,
        ..TrainerConfig::default()
    };
    let corrected_cfg = TrainerConfig {
        correction: Correction::Natarajan,
        rates: Some(FlipRateEstimate::assumed(noise).expect("invertible")),
        ..clean_cfg.clone()
    };
    let clean = enumerated_expected_gradient(&policy, &prompt, &clean_cfg, None);
    let corrected = enumerated_expected_gradient(&policy, &prompt, &corrected_cfg, Some(&noise));
    for (j, (c, k)) in clean.iter().zip(&corrected).enumerate() {
        report.checks.push(row(
            S,
            "corrected_gradient_unbiased",
            j,
            1e-8 - (c - k).abs(),
        ));
    }

    for i in 0..20 {
        let mut r = rng::stream(seed, Domain::Verify, 400, i as u64);
        report.checks.push(row(
            S,
            "finite_difference",
            i,
            finite_difference_margin(&mut r),
        ));
    }

    let mut i = 0;
    let mut attempt = 0;
    while i < 100 {
        let mut r = rng::stream(seed, Domain::Verify, 401, attempt);
        attempt += 1;
        let g = r.gen_range(2..=16);
        let rewards: Vec<f64> = (0..g)
            .map(|_| f64::from(u8::from(r.gen_bool(0.5))))
            .collect();
        let Some(base) = standardized_advantages(&rewards) else {
            continue;
        };
        let a = loop {
            let a: f64 = r.gen_range(-5.0..5.0);
            if a.abs() > 0.05 {
                break a;
            }
        };
        let b: f64 = r.gen_range(-5.0..5.0);
        let mapped: Vec<f64> = rewards.iter().map(|x| a * x + b).collect();
        let out = standardized_advantages(&mapped).expect("nonzero spread");
        let err = out
            .iter()
            .zip(&base)
            .map(|(x, y)| (x - a.signum() * y).abs())
            .fold(0.0, f64::max);
        report
            .checks
            .push(row(S, "standardization_sign_invariance", i, 1e-12 - err));
        i += 1;
    }
    report
}

/// `1e-4 * max(|g|, 1e-3) - |fd - g|`, minimised over logits.
fn finite_difference_margin(r: &mut ChaCha8Rng) -> f64 {
    let n = r.gen_range(2..=6);
    let reference: Vec<f64> = (0..n).map(|_| r.gen_range(-1.0..1.0)).collect();
    let current: Vec<f64> = (0..n).map(|_| r.gen_range(-1.0..1.0)).collect();
    let old = TabularPolicy::new(vec![current.clone()], vec![reference.clone()]).expect("policy");
    let old_probs = old.probs(0);
    let g = r.gen_range(2..=6);
    let responses: Vec<usize> = (0..g).map(|_| r.gen_range(0..n)).collect();
    let rewards: Vec<f64> = (0..g).map(|_| r.gen_range(-1.0..2.0)).collect();
    let sample = GroupSample {
        prompt_id: 0,
        old_probs: responses.iter().map(|&o| old_probs[o]).collect(),
        draws: responses
            .iter()
            .map(|_| RewardDraw {
                r_true: 0,
                r_noisy: 0,
                xi: 0.0,
            })
            .collect(),
        responses,
    };
    let batch = centered_advantages(&rewards, r.gen_range(0.2..2.0)).expect("positive");
    let groups = [ScoredGroup { sample, batch }];
    let beta = r.gen_range(0.0..0.5);
    let at: Vec<f64> = current.iter().map(|c| c + r.gen_range(-0.5..0.5)).collect();
    let policy = TabularPolicy::new(vec![at], vec![reference]).expect("policy");
    let grad = objective_gradient(&policy, &groups, beta);
    let h = 1e-5;
    (0..n)
        .map(|j| {
            let mut plus = policy.clone();
            plus.logits_mut(0)[j] += h;
            let mut minus = policy.clone();
            minus.logits_mut(0)[j] -= h;
            let fd = (surrogate_objective(&plus, &groups, beta)
                - surrogate_objective(&minus, &groups, beta))
                / (2.0 * h);
            1e-4 * grad[0][j].abs().max(1e-3) - (fd - grad[0][j]).abs()
        })
        .fold(f64::INFINITY, f64::min)
}
