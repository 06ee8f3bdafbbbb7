//! Group-sampling GRPO / Dr.GRPO on tabular softmax policies.
//!
//! Each iteration samples `G` responses per prompt from the current policy,
//! scores them through the prompt's corruption channel, optionally debiases
//! the observed bits, centres them on the group mean and divides by `M`
//! (`1` for Dr.GRPO, the floored square root of the corrected variance
//! estimate for GRPO). One exact gradient-ascent step is then taken on the
//! importance-weighted surrogate minus `beta` times the categorical KL to the
//! reference policy. No ratio clipping is applied.

use std::io::Write;

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;

use crate::correction::{clip_z, debias, variance_estimate_z, FlipRateEstimate};
use crate::dynamics::success_probability;
use crate::error::{Error, Result};
use crate::format::fmt_g;
use crate::reward_channel::{Environment, NoiseSpec, PromptSpec, RewardDraw};
use crate::rng::{self, Domain};

/// Per-prompt softmax logits and the frozen reference logits.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularPolicy {
    logits: Vec<Vec<f64>>,
    reference_logits: Vec<Vec<f64>>,
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

impl TabularPolicy {
    /// A policy sitting at its reference.
    pub fn from_reference(reference_logits: Vec<Vec<f64>>) -> Result<Self> {
        Self::new(reference_logits.clone(), reference_logits)
    }

    pub fn new(logits: Vec<Vec<f64>>, reference_logits: Vec<Vec<f64>>) -> Result<Self> {
        if logits.len() != reference_logits.len()
            || logits
                .iter()
                .zip(&reference_logits)
                .any(|(a, b)| a.len() != b.len() || a.is_empty())
        {
            return Err(Error::InvalidEnvironment(
                "policy and reference logits must have matching nonempty shapes".into(),
            ));
        }
        if logits
            .iter()
            .chain(&reference_logits)
            .flatten()
            .any(|l| !l.is_finite())
        {
            return Err(Error::InvalidEnvironment("logits must be finite".into()));
        }
        Ok(Self {
            logits,
            reference_logits,
        })
    }

    /// Uniform reference over every prompt's responses.
    pub fn uniform(env: &Environment) -> Self {
        let logits: Vec<Vec<f64>> = env
            .prompts()
            .iter()
            .map(|p| vec![0.0; p.response_count()])
            .collect();
        Self {
            logits: logits.clone(),
            reference_logits: logits,
        }
    }

    pub fn prompt_count(&self) -> usize {
        self.logits.len()
    }

    pub fn logits(&self, prompt: usize) -> &[f64] {
        &self.logits[prompt]
    }

    pub fn reference_logits(&self, prompt: usize) -> &[f64] {
        &self.reference_logits[prompt]
    }

    pub fn logits_mut(&mut self, prompt: usize) -> &mut [f64] {
        &mut self.logits[prompt]
    }

    pub fn probs(&self, prompt: usize) -> Vec<f64> {
        softmax(&self.logits[prompt])
    }

    pub fn reference_probs(&self, prompt: usize) -> Vec<f64> {
        softmax(&self.reference_logits[prompt])
    }

    /// `KL(pi_theta(.|q) || pi_ref(.|q))`.
    pub fn kl_to_reference(&self, prompt: usize) -> f64 {
        crate::dynamics::kl_divergence(&self.probs(prompt), &self.reference_probs(prompt))
    }

    pub fn reference(&self) -> Self {
        Self {
            logits: self.reference_logits.clone(),
            reference_logits: self.reference_logits.clone(),
        }
    }

    fn check_matches(&self, env: &Environment) -> Result<()> {
        if self.logits.len() != env.len()
            || self
                .logits
                .iter()
                .zip(env.prompts())
                .any(|(l, p)| l.len() != p.response_count())
        {
            return Err(Error::InvalidEnvironment(
                "policy shape does not match the environment".into(),
            ));
        }
        Ok(())
    }

    /// Whitespace-separated table `prompt_id response_id logit reference_logit`.
    pub fn write_snapshot<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "prompt_id response_id logit reference_logit")?;
        for (q, (row, reference)) in self.logits.iter().zip(&self.reference_logits).enumerate() {
            for (o, (l, r)) in row.iter().zip(reference).enumerate() {
                writeln!(w, "{q} {o} {} {}", fmt_g(*l), fmt_g(*r))?;
            }
        }
        Ok(())
    }
}

/// Exact `E_{q ~ rho_Q}[p_pi(q)]`.
pub fn evaluate_clean_accuracy(policy: &TabularPolicy, env: &Environment) -> f64 {
    env.prompts()
        .iter()
        .zip(env.prompt_weights())
        .enumerate()
        .map(|(q, (prompt, w))| w * success_probability(&policy.probs(q), prompt))
        .sum()
}

/// Exact expected observed reward `E_q[rho_plus + (1 - rho_plus - rho_minus) p_pi(q)]`.
pub fn expected_noisy_reward(policy: &TabularPolicy, env: &Environment) -> f64 {
    env.prompts()
        .iter()
        .zip(env.prompt_weights())
        .enumerate()
        .map(|(q, (prompt, w))| {
            w * crate::reward_channel::noisy_mean(
                success_probability(&policy.probs(q), prompt),
                prompt.noise(),
            )
        })
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AdvantageMode {
    /// Divisor `M = 1`.
    DrGrpo,
    /// Divisor `M = clip_z(Z)` from the group's corrected variance estimate.
    GrpoZ,
}

impl AdvantageMode {
    pub fn name(&self) -> &'static str {
        match self {
            AdvantageMode::DrGrpo => "dr_grpo",
            AdvantageMode::GrpoZ => "grpo_Z",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Correction {
    Off,
    Natarajan,
}

impl Correction {
    pub fn name(&self) -> &'static str {
        match self {
            Correction::Off => "off",
            Correction::Natarajan => "natarajan",
        }
    }
}

/// Default floor on the variance scale before the square root in GRPO mode.
pub const DEFAULT_Z_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainerConfig {
    pub group_size: usize,
    pub learning_rate: f64,
    pub beta: f64,
    pub epochs: usize,
    /// Prompts per iteration.
    pub batch_size: usize,
    pub mode: AdvantageMode,
    pub correction: Correction,
    pub rates: Option<FlipRateEstimate>,
    pub z_floor: f64,
    pub seed: u64,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        Self {
            group_size: 5,
            learning_rate: 12.0,
            beta: 0.01,
            epochs: 10,
            batch_size: 10,
            mode: AdvantageMode::DrGrpo,
            correction: Correction::Off,
            rates: None,
            z_floor: DEFAULT_Z_FLOOR,
            seed: 1,
        }
    }
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.group_size == 0 {
            return Err(Error::InvalidConfig("group_size must be positive".into()));
        }
        if self.mode == AdvantageMode::GrpoZ && self.group_size < 2 {
            return Err(Error::InvalidConfig(format!(
                "grpo_Z needs group_size >= 2, got {}",
                self.group_size
            )));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidConfig(
                "learning_rate must be positive".into(),
            ));
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(Error::InvalidConfig("beta must be nonnegative".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be positive".into()));
        }
        if self.z_floor.is_nan() || self.z_floor <= 0.0 {
            return Err(Error::InvalidConfig("z_floor must be positive".into()));
        }
        match (self.correction, &self.rates) {
            (Correction::Natarajan, None) => Err(Error::InvalidConfig(
                "natarajan correction requires flip rates".into(),
            )),
            (Correction::Natarajan, Some(r)) => r.rates().require_invertible().map(|_| ()),
            (Correction::Off, _) => Ok(()),
        }
    }

    /// Rates the trainer inverts with; the identity channel when correction is off.
    fn inversion_rates(&self) -> NoiseSpec {
        match (self.correction, &self.rates) {
            (Correction::Natarajan, Some(r)) => *r.rates(),
            _ => NoiseSpec::noiseless(),
        }
    }
}

/// `G` responses for one prompt with their scoring events.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupSample {
    pub prompt_id: usize,
    pub responses: Vec<usize>,
    pub draws: Vec<RewardDraw>,
    /// `pi_theta_old(o_i | q)` at sampling time.
    pub old_probs: Vec<f64>,
}

fn inverse_cdf(probs: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (o, &w) in probs.iter().enumerate() {
        if w > 0.0 {
            last_positive = o;
            acc += w;
            if u < acc {
                return o;
            }
        }
    }
    last_positive
}

/// Draws `group_size` i.i.d. responses from the policy and scores each with a
/// fresh `xi`. Slot `i` reads its uniforms from a fixed offset of `rng`.
pub fn sample_group(
    policy: &TabularPolicy,
    prompt_id: usize,
    prompt: &PromptSpec,
    group_size: usize,
    rng: &mut ChaCha8Rng,
) -> GroupSample {
    let probs = policy.probs(prompt_id);
    let mut responses = Vec::with_capacity(group_size);
    let mut draws = Vec::with_capacity(group_size);
    let mut old_probs = Vec::with_capacity(group_size);
    for slot in 0..group_size {
        let u = rng::slot_draw(rng, slot);
        let o = inverse_cdf(&probs, u.response_uniform);
        responses.push(o);
        old_probs.push(probs[o]);
        draws.push(RewardDraw::score(
            prompt.true_reward(o),
            prompt.noise(),
            u.xi,
        ));
    }
    GroupSample {
        prompt_id,
        responses,
        draws,
        old_probs,
    }
}

/// Debiased rewards, centred advantages and the divisor for one group.
#[derive(Debug, Clone, PartialEq)]
pub struct AdvantageBatch {
    pub debiased: Vec<f64>,
    /// `r_hat_i - mean(r_hat)`, before division by `divisor`.
    pub advantages: Vec<f64>,
    pub divisor: f64,
    /// The GRPO divisor was raised to the floor while advantages were nonzero.
    pub floored: bool,
}

impl AdvantageBatch {
    /// Per-sample learning signal `A_i / M`.
    pub fn signal(&self) -> impl Iterator<Item = f64> + '_ {
        self.advantages.iter().map(move |a| a / self.divisor)
    }
}

/// Centres `rewards` on their mean and attaches `divisor`.
pub fn centered_advantages(rewards: &[f64], divisor: f64) -> Result<AdvantageBatch> {
    if !(divisor > 0.0 && divisor.is_finite()) {
        return Err(Error::DegenerateDivisor(format!("M = {divisor}")));
    }
    let mean = rewards.iter().sum::<f64>() / rewards.len().max(1) as f64;
    Ok(AdvantageBatch {
        debiased: rewards.to_vec(),
        advantages: rewards.iter().map(|r| r - mean).collect(),
        divisor,
        floored: false,
    })
}

/// Debiases (optionally) and centres the observed bits of a group, then
/// attaches the mode's divisor.
pub fn group_advantages(sample: &GroupSample, config: &TrainerConfig) -> Result<AdvantageBatch> {
    let rates = config.inversion_rates();
    let debiased = sample
        .draws
        .iter()
        .map(|d| debias(d.r_noisy, &rates).map(|r| r.value))
        .collect::<Result<Vec<_>>>()?;
    match config.mode {
        AdvantageMode::DrGrpo => centered_advantages(&debiased, 1.0),
        AdvantageMode::GrpoZ => {
            let z = variance_estimate_z(&debiased, &rates)?;
            let m = clip_z(z, config.z_floor);
            let mut batch = centered_advantages(&debiased, m)?;
            let raw = z.max(0.0).sqrt();
            batch.floored = raw < m && batch.advantages.iter().any(|a| a.abs() > 1e-12);
            Ok(batch)
        }
    }
}

/// GRPO's empirical standardisation `(r - mean) / std` with the `n - 1` std.
/// `None` when the group has zero spread.
pub fn standardized_advantages(rewards: &[f64]) -> Option<Vec<f64>> {
    let n = rewards.len();
    if n < 2 {
        return None;
    }
    let mean = rewards.iter().sum::<f64>() / n as f64;
    let var = rewards.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / (n - 1) as f64;
    let std = var.sqrt();
    if std.is_nan() || std <= 0.0 {
        return None;
    }
    Some(rewards.iter().map(|r| (r - mean) / std).collect())
}

/// A sampled group together with its advantages.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredGroup {
    pub sample: GroupSample,
    pub batch: AdvantageBatch,
}

/// Value of the per-iteration objective
/// `mean_b [ (1/G) sum_i pi(o_i)/pi_old(o_i) A_i/M - beta KL(pi(.|q_b) || pi_ref) ]`.
pub fn surrogate_objective(policy: &TabularPolicy, groups: &[ScoredGroup], beta: f64) -> f64 {
    if groups.is_empty() {
        return 0.0;
    }
    let total: f64 = groups
        .iter()
        .map(|g| {
            let q = g.sample.prompt_id;
            let probs = policy.probs(q);
            let g_len = g.sample.responses.len() as f64;
            let surrogate: f64 = g
                .sample
                .responses
                .iter()
                .zip(&g.sample.old_probs)
                .zip(g.batch.signal())
                .map(|((&o, &old), s)| probs[o] / old * s)
                .sum::<f64>()
                / g_len;
            surrogate - beta * policy.kl_to_reference(q)
        })
        .sum();
    total / groups.len() as f64
}

/// Exact gradient of [`surrogate_objective`] with respect to every logit.
pub fn objective_gradient(
    policy: &TabularPolicy,
    groups: &[ScoredGroup],
    beta: f64,
) -> Vec<Vec<f64>> {
    let mut grad: Vec<Vec<f64>> = (0..policy.prompt_count())
        .map(|q| vec![0.0; policy.logits(q).len()])
        .collect();
    if groups.is_empty() {
        return grad;
    }
    let scale = 1.0 / groups.len() as f64;
    for g in groups {
        let q = g.sample.prompt_id;
        let probs = policy.probs(q);
        let reference = policy.reference_probs(q);
        let row = &mut grad[q];
        let g_len = g.sample.responses.len() as f64;
        // d/dtheta_j [pi(o)/pi_old(o)] = pi(o)/pi_old(o) (1{o=j} - pi_j)
        for ((&o, &old), s) in g
            .sample
            .responses
            .iter()
            .zip(&g.sample.old_probs)
            .zip(g.batch.signal())
        {
            let w = scale * probs[o] / old * s / g_len;
            for (j, gj) in row.iter_mut().enumerate() {
                *gj += w * (f64::from(u8::from(j == o)) - probs[j]);
            }
        }
        // d/dtheta_j KL = pi_j (ln(pi_j / ref_j) - KL)
        let kl = crate::dynamics::kl_divergence(&probs, &reference);
        for (j, gj) in row.iter_mut().enumerate() {
            if probs[j] > 0.0 {
                *gj -= scale * beta * probs[j] * ((probs[j] / reference[j]).ln() - kl);
            }
        }
    }
    grad
}

/// One gradient-ascent step on the objective.
pub fn policy_gradient_step(
    policy: &TabularPolicy,
    groups: &[ScoredGroup],
    config: &TrainerConfig,
) -> TabularPolicy {
    let grad = objective_gradient(policy, groups, config.beta);
    let mut next = policy.clone();
    for (q, g) in grad.iter().enumerate() {
        for (l, d) in next.logits_mut(q).iter_mut().zip(g) {
            *l += config.learning_rate * d;
        }
    }
    next
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationRecord {
    pub iter: usize,
    /// Exact clean accuracy after this iteration's update.
    pub clean_acc: f64,
    /// Mean observed reward over the groups sampled in this iteration.
    pub noisy_reward_mean: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub initial_accuracy: f64,
    pub iterations: Vec<IterationRecord>,
    pub final_policy: TabularPolicy,
    /// Groups whose GRPO divisor was floored with nonzero advantages.
    pub floored_groups: usize,
    pub mode: AdvantageMode,
    pub correction: Correction,
    pub channel: Option<NoiseSpec>,
    pub seed: u64,
}

pub const TRAIN_CSV_HEADER: &str =
    "iter,clean_acc,noisy_reward_mean,mode,correction,rho_plus,rho_minus,seed";

impl TrainReport {
    pub fn final_accuracy(&self) -> f64 {
        self.iterations
            .last()
            .map_or(self.initial_accuracy, |r| r.clean_acc)
    }

    /// `rho_plus`/`rho_minus` are left empty when prompts use different channels.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{TRAIN_CSV_HEADER}")?;
        let (rp, rm) = match &self.channel {
            Some(n) => (fmt_g(n.rho_plus()), fmt_g(n.rho_minus())),
            None => (String::new(), String::new()),
        };
        for r in &self.iterations {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{}",
                r.iter,
                fmt_g(r.clean_acc),
                fmt_g(r.noisy_reward_mean),
                self.mode.name(),
                self.correction.name(),
                rp,
                rm,
                self.seed
            )?;
        }
        Ok(())
    }
}

/// Runs `epochs` passes over the prompts in shuffled batches. Sampling draws
/// from streams keyed by `(seed, prompt, iteration)`, so runs sharing a seed
/// see the same uniforms.
pub fn train(
    env: &Environment,
    reference: &TabularPolicy,
    config: &TrainerConfig,
) -> Result<TrainReport> {
    config.validate()?;
    reference.check_matches(env)?;
    let mut policy = reference.clone();
    let initial_accuracy = evaluate_clean_accuracy(&policy, env);
    let mut iterations = Vec::new();
    let mut floored_groups = 0;
    let mut order: Vec<usize> = (0..env.len()).collect();
    let mut iter = 0;
    for epoch in 0..config.epochs {
        order.sort_unstable();
        order.shuffle(&mut rng::stream(
            config.seed,
            Domain::Shuffle,
            0,
            epoch as u64,
        ));
        for chunk in order.chunks(config.batch_size) {
            iter += 1;
            let mut groups = Vec::with_capacity(chunk.len());
            let (mut observed, mut count) = (0u64, 0u64);
            for &q in chunk {
                let mut stream = rng::stream(config.seed, Domain::Rollout, q as u64, iter as u64);
                let sample = sample_group(
                    &policy,
                    q,
                    &env.prompts()[q],
                    config.group_size,
                    &mut stream,
                );
                let batch = group_advantages(&sample, config)?;
                floored_groups += usize::from(batch.floored);
                observed += sample
                    .draws
                    .iter()
                    .map(|d| u64::from(d.r_noisy))
                    .sum::<u64>();
                count += sample.draws.len() as u64;
                groups.push(ScoredGroup { sample, batch });
            }
            policy = policy_gradient_step(&policy, &groups, config);
            iterations.push(IterationRecord {
                iter,
                clean_acc: evaluate_clean_accuracy(&policy, env),
                noisy_reward_mean: observed as f64 / count.max(1) as f64,
            });
        }
    }
    Ok(TrainReport {
        initial_accuracy,
        iterations,
        final_policy: policy,
        floored_groups,
        mode: config.mode,
        correction: config.correction,
        channel: env.global_noise(),
        seed: config.seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reward_channel::NoiseSpec;

    fn ns(a: f64, b: f64) -> NoiseSpec {
        NoiseSpec::new(a, b).unwrap()
    }

    fn env_of(n_prompts: usize, n_resp: usize, correct: &[usize], noise: NoiseSpec) -> Environment {
        let prompts = (0..n_prompts)
            .map(|_| PromptSpec::new(n_resp, correct, noise).unwrap())
            .collect();
        Environment::uniform(prompts).unwrap()
    }

    fn draws(bits: &[u8]) -> GroupSample {
        GroupSample {
            prompt_id: 0,
            responses: vec![0; bits.len()],
            draws: bits
                .iter()
                .map(|&b| RewardDraw {
                    r_true: b,
                    r_noisy: b,
                    xi: 0.5,
                })
                .collect(),
            old_probs: vec![0.25; bits.len()],
        }
    }

    #[test]
    fn point_mass_and_noiseless_sampling() {
        let env = env_of(1, 3, &[1], ns(0.0, 0.0));
        let policy =
            TabularPolicy::new(vec![vec![-800.0, 0.0, -800.0]], vec![vec![0.0; 3]]).unwrap();
        let mut s = rng::stream(3, Domain::Rollout, 0, 1);
        let g = sample_group(&policy, 0, &env.prompts()[0], 16, &mut s);
        assert!(g.responses.iter().all(|&o| o == 1));
        assert!(g.draws.iter().all(|d| d.r_noisy == d.r_true));
    }

    #[test]
    fn uniform_sampling_frequencies() {
        let env = env_of(1, 4, &[0], ns(0.0, 0.0));
        let policy = TabularPolicy::uniform(&env);
        let n = 100_000;
        let mut s = rng::stream(11, Domain::Rollout, 0, 0);
        let g = sample_group(&policy, 0, &env.prompts()[0], n, &mut s);
        let tol = 4.0 * (0.25f64 * 0.75 / n as f64).sqrt();
        for o in 0..4 {
            let f = g.responses.iter().filter(|&&r| r == o).count() as f64 / n as f64;
            assert!((f - 0.25).abs() < tol, "response {o}: {f}");
        }
    }

    #[test]
    fn advantage_examples() {
        let cfg = TrainerConfig::default();
        let b = group_advantages(&draws(&[1, 1, 1, 1, 1]), &cfg).unwrap();
        assert!(b.advantages.iter().all(|&a| a == 0.0));
        let b = group_advantages(&draws(&[1, 0, 0, 0, 0]), &cfg).unwrap();
        let want = [0.8, -0.2, -0.2, -0.2, -0.2];
        for (a, w) in b.advantages.iter().zip(want) {
            assert!((a - w).abs() < 1e-15);
        }
        assert_eq!(b.divisor, 1.0);

        let nat = TrainerConfig {
            correction: Correction::Natarajan,
            rates: Some(FlipRateEstimate::assumed(ns(0.2, 0.3)).unwrap()),
            ..TrainerConfig::default()
        };
        let b = group_advantages(&draws(&[1, 0, 0, 0, 0]), &nat).unwrap();
        let want = [1.6, -0.4, -0.4, -0.4, -0.4];
        for ((a, r), w) in b.advantages.iter().zip(&b.debiased).zip(want) {
            assert!((a - w).abs() < 1e-12);
            assert!((r - w).abs() < 1e-12);
        }
    }

    #[test]
    fn grpo_z_divisor_and_floor() {
        let cfg = TrainerConfig {
            mode: AdvantageMode::GrpoZ,
            ..TrainerConfig::default()
        };
        let b = group_advantages(&draws(&[1, 0, 1, 0]), &cfg).unwrap();
        // rates (0,0): Z is the n-1 sample variance of {1,0,1,0} = 1/3
        assert!((b.divisor - (1.0f64 / 3.0).sqrt()).abs() < 1e-15);
        let flat = group_advantages(&draws(&[0, 0, 0, 0]), &cfg).unwrap();
        assert!((flat.divisor - 1e-3).abs() < 1e-15);
        assert!(!flat.floored);
        assert!(flat.advantages.iter().all(|&a| a == 0.0));
    }

    #[test]
    fn validation() {
        let mut cfg = TrainerConfig {
            mode: AdvantageMode::GrpoZ,
            group_size: 1,
            ..TrainerConfig::default()
        };
        assert!(cfg.validate().is_err());
        cfg.group_size = 5;
        assert!(cfg.validate().is_ok());
        cfg.correction = Correction::Natarajan;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn zero_advantages_at_reference_leave_policy_unchanged() {
        let env = env_of(2, 4, &[0], ns(0.0, 0.0));
        let policy =
            TabularPolicy::from_reference(vec![vec![0.3, -0.2, 0.1, 0.0], vec![0.0; 4]]).unwrap();
        let sample = draws(&[1, 1, 1]);
        let batch = group_advantages(&sample, &TrainerConfig::default()).unwrap();
        let next = policy_gradient_step(
            &policy,
            &[ScoredGroup { sample, batch }],
            &TrainerConfig::default(),
        );
        for q in 0..env.len() {
            for (a, b) in next.logits(q).iter().zip(policy.logits(q)) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn positive_advantage_raises_probability() {
        let policy = TabularPolicy::from_reference(vec![vec![0.0; 4]]).unwrap();
        let mut sample = draws(&[1, 0]);
        sample.responses = vec![2, 1];
        let batch = group_advantages(&sample, &TrainerConfig::default()).unwrap();
        let cfg = TrainerConfig {
            learning_rate: 0.1,
            ..TrainerConfig::default()
        };
        let before = policy.probs(0)[2];
        let next = policy_gradient_step(&policy, &[ScoredGroup { sample, batch }], &cfg);
        assert!(next.probs(0)[2] > before);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut state = rng::seeded(8, Domain::Verify);
        use rand::Rng;
        for _ in 0..20 {
            let reference: Vec<f64> = (0..4).map(|_| state.gen_range(-1.0..1.0)).collect();
            let current: Vec<f64> = (0..4).map(|_| state.gen_range(-1.0..1.0)).collect();
            let old = TabularPolicy::new(vec![current.clone()], vec![reference.clone()]).unwrap();
            let old_probs = old.probs(0);
            let responses: Vec<usize> = (0..3).map(|_| state.gen_range(0..4)).collect();
            let sample = GroupSample {
                prompt_id: 0,
                old_probs: responses.iter().map(|&o| old_probs[o]).collect(),
                draws: responses
                    .iter()
                    .map(|_| {
                        let b = u8::from(state.gen::<bool>());
                        RewardDraw {
                            r_true: b,
                            r_noisy: b,
                            xi: 0.0,
                        }
                    })
                    .collect(),
                responses,
            };
            let batch = centered_advantages(
                &sample
                    .draws
                    .iter()
                    .map(|d| f64::from(d.r_noisy) * 1.3)
                    .collect::<Vec<_>>(),
                0.7,
            )
            .unwrap();
            let groups = [ScoredGroup { sample, batch }];
            // evaluate away from theta_old so the ratio term is exercised
            let at: Vec<f64> = current
                .iter()
                .map(|c| c + state.gen_range(-0.5..0.5))
                .collect();
            let policy = TabularPolicy::new(vec![at.clone()], vec![reference]).unwrap();
            let grad = objective_gradient(&policy, &groups, 0.3);
            let h = 1e-5;
            for (j, &g) in grad[0].iter().enumerate() {
                let mut plus = policy.clone();
                plus.logits_mut(0)[j] += h;
                let mut minus = policy.clone();
                minus.logits_mut(0)[j] -= h;
                let fd = (surrogate_objective(&plus, &groups, 0.3)
                    - surrogate_objective(&minus, &groups, 0.3))
                    / (2.0 * h);
                assert!(
                    (fd - g).abs() <= 1e-4 * g.abs().max(1e-3),
                    "j={j}: {fd} vs {g}"
                );
            }
        }
    }

    #[test]
    fn clean_accuracy_examples() {
        let prompts = vec![
            PromptSpec::new(5, &[0], ns(0.0, 0.0)).unwrap(),
            PromptSpec::new(5, &[0, 1, 2], ns(0.0, 0.0)).unwrap(),
        ];
        let env = Environment::new(prompts, vec![0.5, 0.5]).unwrap();
        let policy = TabularPolicy::uniform(&env);
        assert!((evaluate_clean_accuracy(&policy, &env) - 0.4).abs() < 1e-15);
        assert_eq!(
            evaluate_clean_accuracy(&policy.reference(), &env),
            evaluate_clean_accuracy(&policy, &env)
        );
        let peaked = TabularPolicy::new(
            vec![
                vec![0.0, -800.0, -800.0, -800.0, -800.0],
                vec![0.0, 0.0, 0.0, -800.0, -800.0],
            ],
            vec![vec![0.0; 5]; 2],
        )
        .unwrap();
        assert!((evaluate_clean_accuracy(&peaked, &env) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn noiseless_training_improves_and_is_deterministic() {
        let env = env_of(8, 6, &[0], ns(0.0, 0.0));
        let reference = TabularPolicy::uniform(&env);
        let cfg = TrainerConfig {
            epochs: 20,
            batch_size: 4,
            seed: 9,
            ..TrainerConfig::default()
        };
        let a = train(&env, &reference, &cfg).unwrap();
        let b = train(&env, &reference, &cfg).unwrap();
        assert_eq!(a, b);
        assert!(a.final_accuracy() > a.initial_accuracy);
        assert!(a
            .iterations
            .iter()
            .all(|r| (0.0..=1.0).contains(&r.clean_acc)));
        let mut csv = Vec::new();
        a.write_csv(&mut csv).unwrap();
        let text = String::from_utf8(csv).unwrap();
        assert!(text.starts_with(TRAIN_CSV_HEADER));
        assert_eq!(text.lines().count(), a.iterations.len() + 1);
    }

    #[test]
    fn standardization_is_sign_equivariant() {
        let r = [1.0, 0.0, 0.0, 1.0, 1.0];
        let base = standardized_advantages(&r).unwrap();
        for (a, b) in [(2.0, -1.0), (-0.5, 3.0)] {
            let mapped: Vec<f64> = r.iter().map(|x| a * x + b).collect();
            let out = standardized_advantages(&mapped).unwrap();
            for (x, y) in out.iter().zip(&base) {
                assert!((x - a.signum() * y).abs() < 1e-12);
            }
        }
        assert!(standardized_advantages(&[1.0, 1.0]).is_none());
    }

    proptest::proptest! {
        #[test]
        fn advantages_sum_to_zero(bits in proptest::collection::vec(0u8..2, 2..16), rp in 0.0f64..0.45, rm in 0.0f64..0.45, z in proptest::bool::ANY) {
            let cfg = TrainerConfig {
                mode: if z { AdvantageMode::GrpoZ } else { AdvantageMode::DrGrpo },
                correction: Correction::Natarajan,
                rates: Some(FlipRateEstimate::assumed(ns(rp, rm)).unwrap()),
                ..TrainerConfig::default()
            };
            let b = group_advantages(&draws(&bits), &cfg).unwrap();
            proptest::prop_assert!(b.advantages.iter().sum::<f64>().abs() < 1e-10);
            proptest::prop_assert!(b.divisor > 0.0);
        }
    }
}
