//! Binary reward oracle and the Bernoulli corruption channel.
//!
//! A response is either correct (`r* = 1`) or not. The observed reward passes
//! through a per-prompt channel that turns a 0 into a 1 with probability
//! `rho_plus` and a 1 into a 0 with probability `rho_minus`. The channel is
//! realised through an auxiliary uniform `xi`, which makes every corruption
//! event a deterministic function of `(r*, xi, channel)`.

use crate::error::{check_probability, Error, Result};

/// Flip probabilities of the corruption channel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSpec {
    rho_plus: f64,
    rho_minus: f64,
}

impl NoiseSpec {
    /// `rho_plus` is the false-positive rate (0 -> 1), `rho_minus` the
    /// false-negative rate (1 -> 0).
    pub fn new(rho_plus: f64, rho_minus: f64) -> Result<Self> {
        Ok(Self {
            rho_plus: check_probability("rho_plus", rho_plus)?,
            rho_minus: check_probability("rho_minus", rho_minus)?,
        })
    }

    pub const fn noiseless() -> Self {
        Self {
            rho_plus: 0.0,
            rho_minus: 0.0,
        }
    }

    pub fn rho_plus(&self) -> f64 {
        self.rho_plus
    }

    pub fn rho_minus(&self) -> f64 {
        self.rho_minus
    }

    /// `1 - rho_plus - rho_minus`, the factor by which the channel shrinks
    /// the reward signal.
    pub fn signal_factor(&self) -> f64 {
        1.0 - self.rho_plus - self.rho_minus
    }

    pub fn is_noiseless(&self) -> bool {
        self.rho_plus == 0.0 && self.rho_minus == 0.0
    }

    /// Fails unless `rho_plus + rho_minus < 1`.
    pub fn require_invertible(&self) -> Result<&Self> {
        if self.rho_plus + self.rho_minus < 1.0 {
            Ok(self)
        } else {
            Err(Error::Inversion {
                sum: self.rho_plus + self.rho_minus,
            })
        }
    }
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self::noiseless()
    }
}

/// One prompt: a finite response set, its correct subset and its channel.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptSpec {
    response_count: usize,
    correct: Vec<bool>,
    noise: NoiseSpec,
}

impl PromptSpec {
    pub fn new(response_count: usize, correct_set: &[usize], noise: NoiseSpec) -> Result<Self> {
        if response_count < 2 {
            return Err(Error::InvalidEnvironment(format!(
                "a prompt needs at least 2 responses, got {response_count}"
            )));
        }
        let mut correct = vec![false; response_count];
        for &o in correct_set {
            if o >= response_count {
                return Err(Error::InvalidEnvironment(format!(
                    "correct response {o} out of range 0..{response_count}"
                )));
            }
            correct[o] = true;
        }
        let n_correct = correct.iter().filter(|&&c| c).count();
        if n_correct == 0 || n_correct == response_count {
            return Err(Error::InvalidEnvironment(format!(
                "correct set must be a strict nonempty subset, has {n_correct} of {response_count}"
            )));
        }
        Ok(Self {
            response_count,
            correct,
            noise,
        })
    }

    pub fn response_count(&self) -> usize {
        self.response_count
    }

    /// Ground-truth reward `r*(q, o)`.
    pub fn true_reward(&self, response: usize) -> u8 {
        u8::from(self.correct[response])
    }

    pub fn is_correct(&self, response: usize) -> bool {
        self.correct[response]
    }

    pub fn correct_set(&self) -> Vec<usize> {
        (0..self.response_count)
            .filter(|&o| self.correct[o])
            .collect()
    }

    pub fn noise(&self) -> &NoiseSpec {
        &self.noise
    }

    pub fn with_noise(mut self, noise: NoiseSpec) -> Self {
        self.noise = noise;
        self
    }
}

/// Prompts together with the prompt distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct Environment {
    prompts: Vec<PromptSpec>,
    prompt_weights: Vec<f64>,
}

impl Environment {
    pub fn new(prompts: Vec<PromptSpec>, prompt_weights: Vec<f64>) -> Result<Self> {
        if prompts.is_empty() {
            return Err(Error::InvalidEnvironment("no prompts".into()));
        }
        if prompts.len() != prompt_weights.len() {
            return Err(Error::InvalidEnvironment(format!(
                "{} prompts but {} weights",
                prompts.len(),
                prompt_weights.len()
            )));
        }
        if prompt_weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidEnvironment(
                "prompt weights must be finite and nonnegative".into(),
            ));
        }
        let total: f64 = prompt_weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidEnvironment(format!(
                "prompt weights sum to {total}, expected 1"
            )));
        }
        Ok(Self {
            prompts,
            prompt_weights,
        })
    }

    /// Equal weight on every prompt.
    pub fn uniform(prompts: Vec<PromptSpec>) -> Result<Self> {
        let n = prompts.len().max(1);
        let weights = vec![1.0 / n as f64; prompts.len()];
        Self::new(prompts, weights)
    }

    pub fn prompts(&self) -> &[PromptSpec] {
        &self.prompts
    }

    pub fn prompt_weights(&self) -> &[f64] {
        &self.prompt_weights
    }

    pub fn len(&self) -> usize {
        self.prompts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prompts.is_empty()
    }

    /// Replaces every prompt's channel with `noise`.
    pub fn with_global_noise(&self, noise: NoiseSpec) -> Self {
        Self {
            prompts: self
                .prompts
                .iter()
                .cloned()
                .map(|p| p.with_noise(noise))
                .collect(),
            prompt_weights: self.prompt_weights.clone(),
        }
    }

    /// The shared channel, if every prompt uses the same one.
    pub fn global_noise(&self) -> Option<NoiseSpec> {
        let first = *self.prompts.first()?.noise();
        self.prompts
            .iter()
            .all(|p| *p.noise() == first)
            .then_some(first)
    }
}

/// One scoring event.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RewardDraw {
    pub r_true: u8,
    pub r_noisy: u8,
    pub xi: f64,
}

impl RewardDraw {
    pub fn score(r_true: u8, noise: &NoiseSpec, xi: f64) -> Self {
        Self {
            r_true,
            r_noisy: corrupt(r_true, noise, xi),
            xi,
        }
    }
}

/// Row-stochastic channel matrix. Row 0 is the true-reward-1 row
/// `[1 - rho_minus, rho_minus]`, row 1 the true-reward-0 row
/// `[rho_plus, 1 - rho_plus]`.
pub fn corruption_matrix(noise: &NoiseSpec) -> [[f64; 2]; 2] {
    [
        [1.0 - noise.rho_minus, noise.rho_minus],
        [noise.rho_plus, 1.0 - noise.rho_plus],
    ]
}

/// Observed reward for a true reward and an auxiliary uniform `xi`.
pub fn corrupt(r_true: u8, noise: &NoiseSpec, xi: f64) -> u8 {
    let fires = if r_true == 0 {
        xi <= noise.rho_plus
    } else {
        xi <= 1.0 - noise.rho_minus
    };
    u8::from(fires)
}

/// `E[r~] = rho_plus + (1 - rho_plus - rho_minus) p` for success probability `p`.
pub fn noisy_mean(p: f64, noise: &NoiseSpec) -> f64 {
    noise.rho_plus + noise.signal_factor() * p
}

/// Standard deviation of the observed Bernoulli reward.
pub fn noisy_std(p: f64, noise: &NoiseSpec) -> f64 {
    let mu = noisy_mean(p, noise);
    (mu * (1.0 - mu)).max(0.0).sqrt()
}
