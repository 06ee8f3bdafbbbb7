//! TOML experiment configuration with environment-variable overrides.
//!
//! Any key can be overridden by `NCGRPO_<SECTION>__<KEY>=<toml value>`, e.g.
//! `NCGRPO_TRAIN__LEARNING_RATE=8` or `NCGRPO_SEEDS=[3]`. Values that do not
//! parse as TOML are taken as strings.

use std::path::PathBuf;

use ncgrpo_core::correction::FlipRateEstimate;
use ncgrpo_core::dynamics::{RecursionConfig, DEFAULT_EPSILON};
use ncgrpo_core::rng::{self, Domain};
use ncgrpo_core::trainer::{AdvantageMode, Correction, TabularPolicy, DEFAULT_Z_FLOOR};
use ncgrpo_core::{Environment, NoiseSpec, PromptSpec};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::CliError;

pub const ENV_PREFIX: &str = "NCGRPO_";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub seeds: Vec<u64>,
    /// Not part of the canonical form, so reruns elsewhere hash the same.
    #[serde(skip_serializing)]
    pub out: PathBuf,
    pub environment: EnvironmentConfig,
    pub noise: NoiseGridConfig,
    pub recursion: RecursionSection,
    pub train: TrainSection,
    pub penalty: PenaltySection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seeds: vec![1, 2, 3, 4, 5],
            out: PathBuf::from("out"),
            environment: EnvironmentConfig::default(),
            noise: NoiseGridConfig::default(),
            recursion: RecursionSection::default(),
            train: TrainSection::default(),
            penalty: PenaltySection::default(),
        }
    }
}

/// Prompts with `responses` atomic answers each. Correct sets are the first
/// `k` responses, with `k` either fixed or drawn per prompt from
/// `correct_range` using `generator_seed`; reference logits are uniform on
/// `[-reference_spread, reference_spread]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnvironmentConfig {
    pub prompts: usize,
    pub responses: usize,
    pub correct: usize,
    pub correct_range: Option<[usize; 2]>,
    pub reference_spread: f64,
    pub generator_seed: u64,
}

impl Default for EnvironmentConfig {
    fn default() -> Self {
        Self {
            prompts: 50,
            responses: 8,
            correct: 2,
            correct_range: None,
            reference_spread: 0.0,
            generator_seed: 7,
        }
    }
}

impl EnvironmentConfig {
    /// Noiseless environment and its reference policy.
    pub fn build(&self) -> Result<(Environment, TabularPolicy), CliError> {
        let mut gen = rng::seeded(self.generator_seed, Domain::Generator);
        let mut prompts = Vec::with_capacity(self.prompts);
        let mut logits = Vec::with_capacity(self.prompts);
        for _ in 0..self.prompts {
            let k = match self.correct_range {
                Some([lo, hi]) if lo <= hi => gen.gen_range(lo..=hi),
                Some([lo, hi]) => {
                    return Err(CliError::Config(format!(
                        "environment.correct_range [{lo}, {hi}] is empty"
                    )))
                }
                None => self.correct,
            };
            let correct: Vec<usize> = (0..k).collect();
            prompts.push(PromptSpec::new(
                self.responses,
                &correct,
                NoiseSpec::noiseless(),
            )?);
            let row: Vec<f64> = (0..self.responses)
                .map(|_| {
                    if self.reference_spread > 0.0 {
                        gen.gen_range(-self.reference_spread..=self.reference_spread)
                    } else {
                        0.0
                    }
                })
                .collect();
            logits.push(row);
        }
        let env = Environment::uniform(prompts)?;
        let reference = TabularPolicy::from_reference(logits)?;
        Ok((env, reference))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseGridConfig {
    /// `(rho_plus, rho_minus)` pairs.
    pub grid: Vec<[f64; 2]>,
}

/// Default (rho_plus, rho_minus) sweep.
pub const TABLE_NOISE_GRID: [[f64; 2]; 5] =
    [[0.05, 0.15], [0.1, 0.2], [0.2, 0.3], [0.3, 0.4], [0.4, 0.5]];

impl Default for NoiseGridConfig {
    fn default() -> Self {
        Self {
            grid: TABLE_NOISE_GRID.to_vec(),
        }
    }
}

impl NoiseGridConfig {
    pub fn specs(&self) -> Result<Vec<NoiseSpec>, CliError> {
        self.grid
            .iter()
            .map(|[a, b]| {
                let n = NoiseSpec::new(*a, *b)?;
                n.require_invertible()?;
                Ok(n)
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RecursionSection {
    pub beta: f64,
    pub epsilon: f64,
    pub p_ref: f64,
    /// Starting point of the trajectories; `p_ref` when absent.
    pub p0: Option<f64>,
    pub k_max: usize,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for RecursionSection {
    fn default() -> Self {
        Self {
            beta: 1.0,
            epsilon: DEFAULT_EPSILON,
            p_ref: 0.25,
            p0: None,
            k_max: 50,
            tol: 1e-12,
            max_iter: 10_000,
        }
    }
}

impl RecursionSection {
    pub fn clean(&self) -> Result<RecursionConfig, CliError> {
        Ok(RecursionConfig::new(
            self.beta,
            self.epsilon,
            self.p_ref,
            None,
        )?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RateSource {
    /// Use the true channel rates.
    Oracle,
    /// Estimate from a balanced holdout before training.
    Estimated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArmConfig {
    pub name: String,
    /// Whether rewards pass through the `train` channel.
    #[serde(default)]
    pub noisy: bool,
    #[serde(default = "default_correction")]
    pub correction: String,
    #[serde(default)]
    pub mode: Option<String>,
    #[serde(default = "default_rate_source")]
    pub rates: RateSource,
}

fn default_correction() -> String {
    "off".into()
}

fn default_rate_source() -> RateSource {
    RateSource::Estimated
}

impl ArmConfig {
    pub fn correction(&self) -> Result<Correction, CliError> {
        match self.correction.as_str() {
            "off" => Ok(Correction::Off),
            "natarajan" => Ok(Correction::Natarajan),
            other => Err(CliError::Config(format!(
                "arm {}: correction must be \"off\" or \"natarajan\", got {other:?}",
                self.name
            ))),
        }
    }
}

pub fn parse_mode(s: &str) -> Result<AdvantageMode, CliError> {
    match s {
        "dr_grpo" => Ok(AdvantageMode::DrGrpo),
        "grpo_Z" | "grpo_z" => Ok(AdvantageMode::GrpoZ),
        other => Err(CliError::Config(format!(
            "mode must be \"dr_grpo\" or \"grpo_Z\", got {other:?}"
        ))),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub group_size: usize,
    pub learning_rate: f64,
    pub beta: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub mode: String,
    pub z_floor: f64,
    /// Channel applied to noisy arms.
    pub rho_plus: f64,
    pub rho_minus: f64,
    /// Fraction of prompts whose reference samples form the estimation holdout.
    pub holdout_fraction: f64,
    pub holdout_samples_per_prompt: usize,
    pub holdout_positive_fraction: f64,
    pub arms: Vec<ArmConfig>,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self {
            group_size: 5,
            learning_rate: 12.0,
            beta: 0.01,
            epochs: 10,
            batch_size: 10,
            mode: "dr_grpo".into(),
            z_floor: DEFAULT_Z_FLOOR,
            rho_plus: 0.2,
            rho_minus: 0.3,
            holdout_fraction: 0.2,
            holdout_samples_per_prompt: 200,
            holdout_positive_fraction: 0.5,
            arms: vec![
                ArmConfig {
                    name: "clean".into(),
                    noisy: false,
                    correction: "off".into(),
                    mode: None,
                    rates: RateSource::Estimated,
                },
                ArmConfig {
                    name: "uncorrected".into(),
                    noisy: true,
                    correction: "off".into(),
                    mode: None,
                    rates: RateSource::Estimated,
                },
                ArmConfig {
                    name: "corrected".into(),
                    noisy: true,
                    correction: "natarajan".into(),
                    mode: None,
                    rates: RateSource::Estimated,
                },
            ],
        }
    }
}

impl TrainSection {
    pub fn channel(&self) -> Result<NoiseSpec, CliError> {
        let n = NoiseSpec::new(self.rho_plus, self.rho_minus)?;
        n.require_invertible()?;
        Ok(n)
    }

    pub fn arm_mode(&self, arm: &ArmConfig) -> Result<AdvantageMode, CliError> {
        parse_mode(arm.mode.as_deref().unwrap_or(&self.mode))
    }

    /// Trainer settings for one arm; `rates` is filled in by the caller.
    pub fn trainer_config(
        &self,
        arm: &ArmConfig,
        seed: u64,
        rates: Option<FlipRateEstimate>,
    ) -> Result<ncgrpo_core::trainer::TrainerConfig, CliError> {
        let cfg = ncgrpo_core::trainer::TrainerConfig {
            group_size: self.group_size,
            learning_rate: self.learning_rate,
            beta: self.beta,
            epochs: self.epochs,
            batch_size: self.batch_size,
            mode: self.arm_mode(arm)?,
            correction: arm.correction()?,
            rates,
            z_floor: self.z_floor,
            seed,
        };
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PenaltySection {
    pub p_min: f64,
    pub p_max: f64,
    pub points: usize,
    pub rho_plus: f64,
    pub rho_minus: f64,
    pub epsilon: f64,
}

impl Default for PenaltySection {
    fn default() -> Self {
        Self {
            p_min: 0.01,
            p_max: 0.99,
            points: 99,
            rho_plus: 0.2,
            rho_minus: 0.3,
            epsilon: DEFAULT_EPSILON,
        }
    }
}

impl ExperimentConfig {
    /// Parses `text`, applies overrides from `vars`, and validates.
    pub fn from_toml_with_overrides<I>(text: &str, vars: I) -> Result<Self, CliError>
    where
        I: IntoIterator<Item = (String, String)>,
    {
        let mut table: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| CliError::Config(format!("config: {e}")))?;
        apply_overrides(&mut table, vars)?;
        let cfg: Self = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| CliError::Config(format!("config: {e}")))?;
        cfg.validate().map_err(CliError::into_config)?;
        Ok(cfg)
    }

    /// Reads the process environment for overrides.
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        Self::from_toml_with_overrides(text, std::env::vars())
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.seeds.is_empty() {
            return Err(CliError::Config("seeds must be nonempty".into()));
        }
        if self.environment.prompts == 0 {
            return Err(CliError::Config(
                "environment.prompts must be positive".into(),
            ));
        }
        self.environment.build()?;
        self.noise.specs()?;
        self.recursion.clean()?;
        let t = &self.train;
        t.channel()?;
        if !(t.holdout_fraction > 0.0 && t.holdout_fraction <= 1.0) {
            return Err(CliError::Config(format!(
                "train.holdout_fraction must be in (0, 1], got {}",
                t.holdout_fraction
            )));
        }
        let mut names = std::collections::BTreeSet::new();
        for arm in &t.arms {
            if !names.insert(arm.name.as_str()) {
                return Err(CliError::Config(format!(
                    "duplicate arm name {:?}",
                    arm.name
                )));
            }
            if arm.name.is_empty()
                || !arm
                    .name
                    .chars()
                    .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
            {
                return Err(CliError::Config(format!(
                    "arm name {:?} must be nonempty [A-Za-z0-9_-]",
                    arm.name
                )));
            }
            let placeholder = match arm.correction()? {
                Correction::Natarajan => Some(FlipRateEstimate::assumed(t.channel()?)?),
                Correction::Off => None,
            };
            t.trainer_config(arm, 0, placeholder)?
                .validate()
                .map_err(|e| CliError::Config(format!("arm {}: {e}", arm.name)))?;
        }
        NoiseSpec::new(self.penalty.rho_plus, self.penalty.rho_minus)?;
        Ok(())
    }

    /// Canonical TOML of the resolved configuration.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

fn apply_overrides<I>(table: &mut toml::Table, vars: I) -> Result<(), CliError>
where
    I: IntoIterator<Item = (String, String)>,
{
    let mut overrides: Vec<(String, String)> = vars
        .into_iter()
        .filter(|(k, _)| k.starts_with(ENV_PREFIX))
        .collect();
    overrides.sort();
    for (key, raw) in overrides {
        let path: Vec<String> = key[ENV_PREFIX.len()..]
            .split("__")
            .map(str::to_ascii_lowercase)
            .collect();
        if path.iter().any(String::is_empty) {
            return Err(CliError::Config(format!("malformed override {key}")));
        }
        let value = parse_override_value(&raw);
        let (last, parents) = path.split_last().expect("nonempty path");
        let mut cursor = &mut *table;
        for part in parents {
            let entry = cursor
                .entry(part.clone())
                .or_insert_with(|| toml::Value::Table(toml::Table::new()));
            cursor = entry.as_table_mut().ok_or_else(|| {
                CliError::Config(format!("override {key}: {part} is not a table"))
            })?;
        }
        cursor.insert(last.clone(), value);
    }
    Ok(())
}

fn parse_override_value(raw: &str) -> toml::Value {
    format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}
