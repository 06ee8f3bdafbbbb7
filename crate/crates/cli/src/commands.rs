//! Subcommand implementations. Each writes its CSVs and a manifest into the
//! output directory and prints a short report.

use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use ncgrpo_core::correction::{
    balanced_corrupt_holdout, binomial_standard_error, read_estimation_csv, write_estimation_csv,
    FlipCounts, FlipRateEstimate, HoldoutItem, LabeledObservation,
};
use ncgrpo_core::dynamics::{fixed_point, iterate_recursion, penalty_curves};
use ncgrpo_core::format::fmt_g;
use ncgrpo_core::reward_channel::corrupt;
use ncgrpo_core::rng::{self, Domain};
use ncgrpo_core::trainer::{sample_group, train, Correction, TabularPolicy, TrainReport};
use ncgrpo_core::{Environment, NoiseSpec};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{ArmConfig, RateSource};
use crate::manifest::{Output, RunManifest};
use crate::svg::{line_chart, Series};
use crate::verify::{self, Suite};
use crate::{CliError, ExperimentConfig};

#[derive(Debug, Parser)]
#[command(
    name = "ncgrpo",
    version,
    about = "Noise-corrected GRPO experiments on tabular environments"
)]
pub struct Cli {
    /// TOML experiment configuration.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Rerun with the configuration embedded in a manifest.
    #[arg(long, global = true, value_name = "PATH", conflicts_with = "config")]
    pub manifest: Option<PathBuf>,
    /// Output directory (overrides the config).
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Replace the config's seed list with a single seed.
    #[arg(long, global = true, value_name = "N")]
    pub seed: Option<u64>,
    /// Also write SVG charts.
    #[arg(long, global = true)]
    pub svg: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Success-probability trajectories and fixed points, clean and noisy.
    Recursion,
    /// Train every configured arm for every seed.
    Train,
    /// Estimate flip rates from a labeled CSV.
    Estimate {
        /// CSV with header prompt_id,response_id,r_observed,r_true.
        path: PathBuf,
    },
    /// Run verification suites.
    Verify {
        /// bounds, unbiasedness, recursion, gradient or all.
        #[arg(default_value = "all")]
        suite: String,
    },
    /// Penalty coefficients over a grid of success probabilities.
    PenaltyCurves,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Recursion => "recursion",
            Command::Train => "train",
            Command::Estimate { .. } => "estimate",
            Command::Verify { .. } => "verify",
            Command::PenaltyCurves => "penalty-curves",
        }
    }
}

/// Resolves the configuration from flags, file or manifest, and env overrides.
pub fn load_config(cli: &Cli) -> Result<ExperimentConfig, CliError> {
    let mut cfg = if let Some(path) = &cli.manifest {
        RunManifest::load(path)?.config()?
    } else if let Some(path) = &cli.config {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        ExperimentConfig::from_toml(&text)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?
    } else {
        ExperimentConfig::from_toml("")?
    };
    if let Some(seed) = cli.seed {
        cfg.seeds = vec![seed];
    }
    if let Some(out) = &cli.out {
        cfg.out = out.clone();
    }
    Ok(cfg)
}

pub fn run(cli: &Cli, stdout: &mut dyn Write) -> Result<(), CliError> {
    let cfg = load_config(cli)?;
    match &cli.command {
        Command::Recursion => cmd_recursion(&cfg, cli.svg, stdout).map(|_| ()),
        Command::Train => cmd_train(&cfg, cli.svg, stdout).map(|_| ()),
        Command::Estimate { path } => cmd_estimate(path, cli.out.as_deref(), stdout).map(|_| ()),
        Command::Verify { suite } => cmd_verify(&cfg, Suite::parse(suite)?, stdout).map(|_| ()),
        Command::PenaltyCurves => cmd_penalty_curves(&cfg, cli.svg, stdout).map(|_| ()),
    }
}

fn out_err(e: std::io::Error) -> CliError {
    CliError::io("<stdout>", e)
}

fn noise_tag(n: &NoiseSpec) -> String {
    format!("rho{}_{}", fmt_g(n.rho_plus()), fmt_g(n.rho_minus()))
}

pub const FIXED_POINTS_HEADER: &str = "rho_plus,rho_minus,p_star_noisy,p_star_clean";

pub fn cmd_recursion(
    cfg: &ExperimentConfig,
    svg: bool,
    stdout: &mut dyn Write,
) -> Result<RunManifest, CliError> {
    let sec = &cfg.recursion;
    let clean = sec.clean()?;
    let p0 = sec.p0.unwrap_or(sec.p_ref);
    let mut out = Output::create(&cfg.out)?;
    let clean_traj = iterate_recursion(&clean, p0, sec.k_max);
    let mut text = String::from("k,p_clean\n");
    for (k, p) in clean_traj.iter().enumerate().skip(1) {
        let _ = writeln!(text, "{k},{}", fmt_g(*p));
    }
    out.write("recursion_clean.csv", text.as_bytes())?;
    let clean_fp = fixed_point(&clean, sec.tol, sec.max_iter)?;
    writeln!(
        stdout,
        "clean fixed point p* = {} (residual {:e})",
        fmt_g(clean_fp.p),
        clean_fp.residual
    )
    .map_err(out_err)?;

    let mut summary = format!("{FIXED_POINTS_HEADER}\n");
    let mut series = vec![Series {
        label: "clean",
        points: clean_traj
            .iter()
            .enumerate()
            .map(|(k, &p)| (k as f64, p))
            .collect(),
    }];
    let mut labels = Vec::new();
    let mut noisy_trajs = Vec::new();
    let mut violations = Vec::new();
    for noise in cfg.noise.specs()? {
        let noisy = clean.with_noise(noise)?;
        let traj = iterate_recursion(&noisy, p0, sec.k_max);
        let mut text = String::from("k,p_clean,p_noisy\n");
        for k in 1..traj.len() {
            let _ = writeln!(text, "{k},{},{}", fmt_g(clean_traj[k]), fmt_g(traj[k]));
        }
        out.write(
            &format!("recursion_{}.csv", noise_tag(&noise)),
            text.as_bytes(),
        )?;
        let fp = fixed_point(&noisy, sec.tol, sec.max_iter)?;
        let _ = writeln!(
            summary,
            "{},{},{},{}",
            fmt_g(noise.rho_plus()),
            fmt_g(noise.rho_minus()),
            fmt_g(fp.p),
            fmt_g(clean_fp.p)
        );
        writeln!(
            stdout,
            "({}, {}) noisy p* = {}",
            fmt_g(noise.rho_plus()),
            fmt_g(noise.rho_minus()),
            fmt_g(fp.p)
        )
        .map_err(out_err)?;
        if !(fp.p < clean_fp.p && fp.p > sec.p_ref && clean_fp.p > sec.p_ref) {
            violations.push(noise_tag(&noise));
        }
        labels.push(noise_tag(&noise));
        noisy_trajs.push(traj);
    }
    out.write("fixed_points.csv", summary.as_bytes())?;
    if svg {
        for (label, traj) in labels.iter().zip(&noisy_trajs) {
            series.push(Series {
                label,
                points: traj
                    .iter()
                    .enumerate()
                    .map(|(k, &p)| (k as f64, p))
                    .collect(),
            });
        }
        let chart = line_chart(
            "Success probability under the closed-form update",
            "k",
            "p_k",
            &series,
        );
        out.write("recursion.svg", chart.as_bytes())?;
    }
    let manifest = out.finish("recursion", Some(cfg), &[])?;
    if violations.is_empty() {
        Ok(manifest)
    } else {
        Err(CliError::Failed(format!(
            "fixed-point ordering violated for {}",
            violations.join(", ")
        )))
    }
}

/// Rates estimated before training from reference-policy samples on a
/// random `holdout_fraction` of prompts.
#[derive(Debug, Clone, PartialEq)]
pub struct HoldoutEstimate {
    pub labeled: Vec<LabeledObservation>,
    pub counts: FlipCounts,
    pub estimate: FlipRateEstimate,
}

pub fn holdout_estimate(
    env: &Environment,
    reference: &TabularPolicy,
    cfg: &ExperimentConfig,
    channel: &NoiseSpec,
    seed: u64,
) -> Result<HoldoutEstimate, ncgrpo_core::Error> {
    let sec = &cfg.train;
    let noisy = env.with_global_noise(*channel);
    let mut order: Vec<usize> = (0..env.len()).collect();
    order.shuffle(&mut rng::stream(seed, Domain::Holdout, 0, 0));
    let count = ((sec.holdout_fraction * env.len() as f64).ceil() as usize).clamp(1, env.len());
    let mut chosen = order[..count].to_vec();
    chosen.sort_unstable();
    let mut items = Vec::new();
    let mut xis = Vec::new();
    for &q in &chosen {
        let mut stream = rng::stream(seed, Domain::Holdout, q as u64 + 1, 0);
        let group = sample_group(
            reference,
            q,
            &noisy.prompts()[q],
            sec.holdout_samples_per_prompt,
            &mut stream,
        );
        for (&o, d) in group.responses.iter().zip(&group.draws) {
            items.push(HoldoutItem {
                prompt_id: q,
                response_id: o,
                r_true: d.r_true,
            });
            xis.push(d.xi);
        }
    }
    let balanced = balanced_corrupt_holdout(
        &items,
        sec.holdout_positive_fraction,
        &mut rng::stream(seed, Domain::Holdout, 0, 1),
    )?;
    let labeled: Vec<LabeledObservation> = balanced
        .iter()
        .zip(&xis)
        .map(|(it, &xi)| LabeledObservation {
            prompt_id: it.prompt_id,
            response_id: it.response_id,
            r_observed: corrupt(it.r_true, channel, xi),
            r_true: it.r_true,
        })
        .collect();
    let counts = FlipCounts::from_observations(&labeled);
    let estimate = counts.estimate()?;
    Ok(HoldoutEstimate {
        labeled,
        counts,
        estimate,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArmRun {
    pub arm: ArmConfig,
    pub seed: u64,
    pub rates: Option<FlipRateEstimate>,
    pub result: Result<TrainReport, String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ArmSummary {
    pub arm: String,
    pub mode: &'static str,
    pub correction: &'static str,
    pub noisy: bool,
    pub rates: &'static str,
    pub seeds: usize,
    pub initial_clean_acc: f64,
    pub mean_final_clean_acc: f64,
    pub std_final_clean_acc: f64,
    pub floored_groups: usize,
    pub failed: usize,
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub manifest: RunManifest,
    pub runs: Vec<ArmRun>,
    pub summaries: Vec<ArmSummary>,
}

pub const SUMMARY_HEADER: &str = "arm,mode,correction,noisy,rates,seeds,initial_clean_acc,mean_final_clean_acc,std_final_clean_acc,floored_groups,failed";
pub const TABLE_HEADER: &str = "mode,rho_plus,rho_minus,noiseless,no_correction,with_correction";

fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn csv_cell(x: Option<f64>) -> String {
    x.map(fmt_g).unwrap_or_default()
}

pub fn cmd_train(
    cfg: &ExperimentConfig,
    svg: bool,
    stdout: &mut dyn Write,
) -> Result<TrainOutcome, CliError> {
    let (env, reference) = cfg.environment.build()?;
    let channel = cfg.train.channel()?;
    let noisy_env = env.with_global_noise(channel);
    let mut out = Output::create(&cfg.out)?;

    let needs_estimate = cfg.train.arms.iter().any(|a| {
        a.rates == RateSource::Estimated && a.correction().ok() == Some(Correction::Natarajan)
    });
    let estimates: Vec<(u64, Option<Result<HoldoutEstimate, String>>)> = cfg
        .seeds
        .par_iter()
        .map(|&seed| {
            let est = needs_estimate.then(|| {
                holdout_estimate(&env, &reference, cfg, &channel, seed).map_err(|e| e.to_string())
            });
            (seed, est)
        })
        .collect();
    if needs_estimate {
        let mut table = String::from(
            "seed,rho_plus_hat,rho_minus_hat,positives,negatives,se_rho_plus,se_rho_minus\n",
        );
        for (seed, est) in &estimates {
            match est {
                Some(Ok(h)) => {
                    let mut bytes = Vec::new();
                    write_estimation_csv(&mut bytes, &h.labeled)?;
                    out.write(&format!("holdout_seed{seed}.csv"), &bytes)?;
                    let e = &h.estimate;
                    let _ = writeln!(
                        table,
                        "{seed},{},{},{},{},{},{}",
                        fmt_g(e.rho_plus_hat()),
                        fmt_g(e.rho_minus_hat()),
                        h.counts.positives,
                        h.counts.negatives,
                        fmt_g(binomial_standard_error(
                            e.rho_plus_hat(),
                            h.counts.negatives
                        )),
                        fmt_g(binomial_standard_error(
                            e.rho_minus_hat(),
                            h.counts.positives
                        )),
                    );
                }
                Some(Err(msg)) => {
                    let _ = writeln!(table, "{seed},,,,,,");
                    writeln!(stdout, "seed {seed}: rate estimation failed: {msg}")
                        .map_err(out_err)?;
                }
                None => {}
            }
        }
        out.write("rate_estimates.csv", table.as_bytes())?;
    }

    let jobs: Vec<(usize, u64)> = (0..cfg.train.arms.len())
        .flat_map(|a| cfg.seeds.iter().map(move |&s| (a, s)))
        .collect();
    let runs: Vec<ArmRun> = jobs
        .par_iter()
        .map(|&(a, seed)| {
            let arm = cfg.train.arms[a].clone();
            let rates = match (arm.correction(), arm.rates) {
                (Ok(Correction::Natarajan), RateSource::Oracle) => {
                    FlipRateEstimate::assumed(channel)
                        .map(Some)
                        .map_err(|e| e.to_string())
                }
                (Ok(Correction::Natarajan), RateSource::Estimated) => {
                    match estimates
                        .iter()
                        .find(|(s, _)| *s == seed)
                        .and_then(|(_, e)| e.clone())
                    {
                        Some(Ok(h)) => Ok(Some(h.estimate)),
                        Some(Err(msg)) => Err(format!("rate estimation failed: {msg}")),
                        None => Err("no rate estimate".into()),
                    }
                }
                (Ok(Correction::Off), _) => Ok(None),
                (Err(e), _) => Err(e.to_string()),
            };
            let result = rates.clone().and_then(|rates| {
                let tc = cfg
                    .train
                    .trainer_config(&arm, seed, rates)
                    .map_err(|e| e.to_string())?;
                let environment = if arm.noisy { &noisy_env } else { &env };
                train(environment, &reference, &tc).map_err(|e| e.to_string())
            });
            ArmRun {
                arm,
                seed,
                rates: rates.ok().flatten(),
                result,
            }
        })
        .collect();

    for run in &runs {
        match &run.result {
            Ok(report) => {
                let mut bytes = Vec::new();
                report.write_csv(&mut bytes).map_err(out_err)?;
                out.write(
                    &format!("train_{}_seed{}.csv", run.arm.name, run.seed),
                    &bytes,
                )?;
                let mut snap = Vec::new();
                report
                    .final_policy
                    .write_snapshot(&mut snap)
                    .map_err(out_err)?;
                out.write(
                    &format!("policy_{}_seed{}.txt", run.arm.name, run.seed),
                    &snap,
                )?;
            }
            Err(msg) => {
                writeln!(stdout, "arm {} seed {}: {msg}", run.arm.name, run.seed)
                    .map_err(out_err)?;
            }
        }
    }

    let initial = ncgrpo_core::trainer::evaluate_clean_accuracy(&reference, &env);
    let mut summaries = Vec::new();
    for arm in &cfg.train.arms {
        let arm_runs: Vec<&ArmRun> = runs.iter().filter(|r| r.arm.name == arm.name).collect();
        let finals: Vec<f64> = arm_runs
            .iter()
            .filter_map(|r| r.result.as_ref().ok().map(TrainReport::final_accuracy))
            .collect();
        let (mean, std) = mean_std(&finals);
        summaries.push(ArmSummary {
            arm: arm.name.clone(),
            mode: cfg.train.arm_mode(arm)?.name(),
            correction: arm.correction()?.name(),
            noisy: arm.noisy,
            rates: match (arm.correction()?, arm.rates) {
                (Correction::Off, _) => "none",
                (_, RateSource::Oracle) => "oracle",
                (_, RateSource::Estimated) => "estimated",
            },
            seeds: finals.len(),
            initial_clean_acc: initial,
            mean_final_clean_acc: mean,
            std_final_clean_acc: std,
            floored_groups: arm_runs
                .iter()
                .filter_map(|r| r.result.as_ref().ok().map(|t| t.floored_groups))
                .sum(),
            failed: arm_runs.len() - finals.len(),
        });
    }
    let mut text = format!("{SUMMARY_HEADER}\n");
    for s in &summaries {
        let _ = writeln!(
            text,
            "{},{},{},{},{},{},{},{},{},{},{}",
            s.arm,
            s.mode,
            s.correction,
            u8::from(s.noisy),
            s.rates,
            s.seeds,
            fmt_g(s.initial_clean_acc),
            fmt_g(s.mean_final_clean_acc),
            fmt_g(s.std_final_clean_acc),
            s.floored_groups,
            s.failed
        );
    }
    out.write("train_summary.csv", text.as_bytes())?;

    let mut table = format!("{TABLE_HEADER}\n");
    let mut modes: Vec<&'static str> = summaries.iter().map(|s| s.mode).collect();
    modes.dedup();
    modes.sort_unstable();
    modes.dedup();
    writeln!(
        stdout,
        "{:<10} {:>10} {:>14} {:>16}",
        "mode", "noiseless", "no correction", "with correction"
    )
    .map_err(out_err)?;
    for mode in modes {
        let pick = |noisy: bool, correction: &str| {
            summaries
                .iter()
                .find(|s| {
                    s.mode == mode && s.noisy == noisy && s.correction == correction && s.seeds > 0
                })
                .map(|s| s.mean_final_clean_acc)
        };
        let row = [
            pick(false, "off"),
            pick(true, "off"),
            pick(true, "natarajan"),
        ];
        let _ = writeln!(
            table,
            "{mode},{},{},{},{},{}",
            fmt_g(channel.rho_plus()),
            fmt_g(channel.rho_minus()),
            csv_cell(row[0]),
            csv_cell(row[1]),
            csv_cell(row[2])
        );
        let cell = |x: Option<f64>| x.map_or("-".to_string(), |v| format!("{:.4}", v));
        writeln!(
            stdout,
            "{:<10} {:>10} {:>14} {:>16}",
            mode,
            cell(row[0]),
            cell(row[1]),
            cell(row[2])
        )
        .map_err(out_err)?;
    }
    out.write("train_table.csv", table.as_bytes())?;

    if svg {
        let curves: Vec<(String, Vec<(f64, f64)>)> = cfg
            .train
            .arms
            .iter()
            .map(|arm| {
                let reports: Vec<&TrainReport> = runs
                    .iter()
                    .filter(|r| r.arm.name == arm.name)
                    .filter_map(|r| r.result.as_ref().ok())
                    .collect();
                let len = reports
                    .iter()
                    .map(|r| r.iterations.len())
                    .min()
                    .unwrap_or(0);
                let mut points = vec![(0.0, initial)];
                for i in 0..len {
                    let m = reports
                        .iter()
                        .map(|r| r.iterations[i].clean_acc)
                        .sum::<f64>()
                        / reports.len() as f64;
                    points.push(((i + 1) as f64, m));
                }
                (arm.name.clone(), points)
            })
            .collect();
        let series: Vec<Series> = curves
            .iter()
            .map(|(name, pts)| Series {
                label: name,
                points: pts.clone(),
            })
            .collect();
        let chart = line_chart(
            "Mean clean accuracy over seeds",
            "iteration",
            "clean accuracy",
            &series,
        );
        out.write("train_curves.svg", chart.as_bytes())?;
    }

    let failed = runs.iter().filter(|r| r.result.is_err()).count();
    let manifest = out.finish("train", Some(cfg), &cfg.seeds)?;
    if failed > 0 {
        return Err(CliError::Failed(format!(
            "{failed} of {} runs failed",
            runs.len()
        )));
    }
    Ok(TrainOutcome {
        manifest,
        runs,
        summaries,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EstimateRecord {
    pub rho_plus_hat: f64,
    pub rho_minus_hat: f64,
    pub positives: u64,
    pub negatives: u64,
    pub false_positives: u64,
    pub false_negatives: u64,
    pub se_rho_plus: f64,
    pub se_rho_minus: f64,
}

pub fn cmd_estimate(
    path: &Path,
    out_dir: Option<&Path>,
    stdout: &mut dyn Write,
) -> Result<EstimateRecord, CliError> {
    let file = std::fs::File::open(path).map_err(|e| CliError::io(path, e))?;
    let labeled = read_estimation_csv(std::io::BufReader::new(file))
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let counts = FlipCounts::from_observations(&labeled);
    let est = counts.estimate()?;
    let record = EstimateRecord {
        rho_plus_hat: est.rho_plus_hat(),
        rho_minus_hat: est.rho_minus_hat(),
        positives: counts.positives,
        negatives: counts.negatives,
        false_positives: counts.false_positives,
        false_negatives: counts.false_negatives,
        se_rho_plus: binomial_standard_error(est.rho_plus_hat(), counts.negatives),
        se_rho_minus: binomial_standard_error(est.rho_minus_hat(), counts.positives),
    };
    let mut json = serde_json::to_string_pretty(&record).expect("record serializes");
    json.push('\n');
    stdout.write_all(json.as_bytes()).map_err(out_err)?;
    if let Some(dir) = out_dir {
        let mut out = Output::create(dir)?;
        out.write("estimate.json", json.as_bytes())?;
        out.finish("estimate", None, &[])?;
    }
    Ok(record)
}

pub fn cmd_verify(
    cfg: &ExperimentConfig,
    suite: Suite,
    stdout: &mut dyn Write,
) -> Result<verify::VerifyReport, CliError> {
    let seed = cfg.seeds[0];
    let report = verify::run(suite, seed);
    let mut out = Output::create(&cfg.out)?;
    out.write(
        &format!("verify_{}.csv", suite.name()),
        report.checks_csv().as_bytes(),
    )?;
    if !report.bounds.is_empty() {
        out.write("bounds.csv", report.bounds_csv().as_bytes())?;
    }
    for s in report.summaries() {
        writeln!(
            stdout,
            "{} {}::{} ({} instances, min margin {})",
            if s.failures == 0 { "PASS" } else { "FAIL" },
            s.suite,
            s.check,
            s.instances,
            fmt_g(s.min_margin)
        )
        .map_err(out_err)?;
    }
    out.finish("verify", None, &[seed])?;
    if report.passed() {
        Ok(report)
    } else {
        let failed: usize = report.summaries().iter().map(|s| s.failures).sum();
        Err(CliError::Failed(format!(
            "{failed} verification instances failed"
        )))
    }
}

pub const PENALTY_HEADER: &str = "p,coef_clean,coef_noisy,coef_M1";

pub fn cmd_penalty_curves(
    cfg: &ExperimentConfig,
    svg: bool,
    stdout: &mut dyn Write,
) -> Result<RunManifest, CliError> {
    let sec = &cfg.penalty;
    let noise = NoiseSpec::new(sec.rho_plus, sec.rho_minus)?;
    let rows = penalty_curves(sec.p_min, sec.p_max, sec.points, &noise, sec.epsilon)
        .map_err(CliError::into_config_error)?;
    let mut text = format!("{PENALTY_HEADER}\n");
    for r in &rows {
        let _ = writeln!(
            text,
            "{},{},{},{}",
            fmt_g(r.p),
            fmt_g(r.clean),
            fmt_g(r.noisy),
            fmt_g(r.unit_divisor)
        );
    }
    let mut out = Output::create(&cfg.out)?;
    out.write("penalty.csv", text.as_bytes())?;
    if svg {
        let series = [
            Series {
                label: "clean",
                points: rows.iter().map(|r| (r.p, r.clean)).collect(),
            },
            Series {
                label: "noisy",
                points: rows.iter().map(|r| (r.p, r.noisy)).collect(),
            },
            Series {
                label: "M = 1",
                points: rows.iter().map(|r| (r.p, r.unit_divisor)).collect(),
            },
        ];
        out.write(
            "penalty.svg",
            line_chart("Penalty coefficient", "p", "coefficient", &series).as_bytes(),
        )?;
    }
    writeln!(stdout, "{} rows", rows.len()).map_err(out_err)?;
    out.finish("penalty-curves", Some(cfg), &[])
}

impl CliError {
    fn into_config_error(e: ncgrpo_core::Error) -> CliError {
        CliError::Core(e).into_config()
    }
}
