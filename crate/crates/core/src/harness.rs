//! Experiment driver: builds the environment, plays an agent for `K`
//! episodes per seed, and writes one CSV of [`ExperimentRecord`]s plus a
//! JSON summary per seed and a merged summary.
//!
//! Seeds run in parallel; each replica owns its agent and RNG streams and
//! writes its own files, and the merge happens afterwards in seed order. The
//! CSV is a pure function of the configuration and seed. The summaries also
//! carry wall-clock time.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::agent::{Agent, ConfigError, Dims, EpisodeRunner, InvariantCounts};
use crate::envs::{build_named, homogenize, normalize_rewards, EnvError};
use crate::mdp::{max_support, value_iteration, ExperimentRecord, MdpError, MdpSpec, PlanningSolution};
use crate::mvpv::{HoeffdingBaseline, MvpvAgent, MvpvConfig};
use crate::rng::env_stream;
use crate::ucbadv::{UcbAdvAgent, UcbAdvConfig};
use crate::variance::{q_star, var_star_auto, VarStar, DEFAULT_ENUMERATION_BUDGET};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Agent(#[from] ConfigError),
    #[error(transparent)]
    Mdp(#[from] MdpError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("{0} invariant violations under strict checks")]
    InvariantViolation(u64),
    #[error("fit error: {0}")]
    Fit(String),
}

impl HarnessError {
    fn io(path: &Path, source: std::io::Error) -> Self {
        HarnessError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

/// Post-construction conversions, applied in order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Transform {
    NormalizeRewards,
    Homogenize,
}

/// Either a named constructor with parameters or an MDP file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(default, skip_serializing_if = "Value::is_null")]
    pub params: Value,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub file: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub transforms: Vec<Transform>,
}

impl EnvSpec {
    pub fn named(name: &str, params: Value) -> Self {
        EnvSpec {
            name: Some(name.to_string()),
            params,
            file: None,
            transforms: Vec::new(),
        }
    }

    pub fn with_transforms(mut self, transforms: &[Transform]) -> Self {
        self.transforms = transforms.to_vec();
        self
    }

    pub fn build(&self) -> Result<MdpSpec, HarnessError> {
        let mut mdp = match (&self.name, &self.file) {
            (Some(name), None) => {
                let params = if self.params.is_null() {
                    Value::Object(Default::default())
                } else {
                    self.params.clone()
                };
                build_named(name, &params)?
            }
            (None, Some(file)) => MdpSpec::load(file)?,
            _ => return Err(HarnessError::Config("env needs exactly one of `name` and `file`".into())),
        };
        for t in &self.transforms {
            mdp = match t {
                Transform::NormalizeRewards => normalize_rewards(&mdp)?,
                Transform::Homogenize => homogenize(&mdp)?,
            };
        }
        Ok(mdp)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name")]
pub enum AgentSpec {
    #[serde(rename = "mvpv")]
    Mvpv(MvpvConfig),
    #[serde(rename = "ucbadvv")]
    UcbAdvV(UcbAdvConfig),
    #[serde(rename = "hoeffding-baseline")]
    Hoeffding(MvpvConfig),
}

impl AgentSpec {
    pub fn name(&self) -> &'static str {
        match self {
            AgentSpec::Mvpv(_) => "mvpv",
            AgentSpec::UcbAdvV(_) => "ucbadvv",
            AgentSpec::Hoeffding(_) => "hoeffding-baseline",
        }
    }

    pub fn build(&self, mdp: &MdpSpec, episodes: usize) -> Result<Box<dyn Agent + Send>, ConfigError> {
        Ok(match self {
            AgentSpec::Mvpv(c) => Box::new(MvpvAgent::for_mdp(mdp, episodes, c)?),
            AgentSpec::Hoeffding(c) => Box::new(HoeffdingBaseline::for_mdp(mdp, episodes, c)?),
            AgentSpec::UcbAdvV(c) => Box::new(UcbAdvAgent::new(Dims::of(mdp), episodes, c)?),
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Checks {
    #[default]
    Off,
    /// Count optimism and monotonicity violations.
    On,
    /// Count them and fail the run if any occur.
    Strict,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VarStarSettings {
    /// Largest policy count enumerated exactly.
    pub budget: u64,
    /// Random policies for the Monte-Carlo lower bound.
    pub policies: usize,
    pub seed: u64,
}

impl Default for VarStarSettings {
    fn default() -> Self {
        VarStarSettings {
            budget: DEFAULT_ENUMERATION_BUDGET,
            policies: 1000,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub env: EnvSpec,
    pub agent: AgentSpec,
    #[serde(rename = "K")]
    pub episodes: usize,
    pub seeds: Vec<u64>,
    #[serde(default = "default_output")]
    pub output: PathBuf,
    /// Episode stride for CSV rows; defaults to `max(1, K/2000)`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub log_every: Option<usize>,
    #[serde(default)]
    pub checks: Checks,
    #[serde(default)]
    pub var_star: VarStarSettings,
}

fn default_output() -> PathBuf {
    PathBuf::from("results")
}

impl ExperimentConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, HarnessError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn log_every(&self) -> usize {
        self.log_every.unwrap_or((self.episodes / 2000).max(1))
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.episodes == 0 {
            return Err(HarnessError::Config("K must be at least 1".into()));
        }
        if self.seeds.is_empty() {
            return Err(HarnessError::Config("at least one seed is required".into()));
        }
        let mut sorted = self.seeds.clone();
        sorted.sort_unstable();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(HarnessError::Config("seeds must be distinct".into()));
        }
        if self.log_every == Some(0) {
            return Err(HarnessError::Config("log_every must be positive".into()));
        }
        Ok(())
    }
}

/// Everything one seed produced, before it touches the disk.
#[derive(Clone, Debug)]
pub struct SeedRun {
    pub seed: u64,
    pub records: Vec<ExperimentRecord>,
    pub final_cumulative_regret: f64,
    /// `Σ_k Var_(k)^Σ` over all `K` episodes.
    pub var_sigma_total: f64,
    pub trigger_count: u64,
    pub invariants: InvariantCounts,
    pub wall_time_seconds: f64,
}

/// Plays `episodes` episodes for one seed. Rows are kept every
/// `log_every` episodes and at the last one.
pub fn run_seed(
    mdp: &MdpSpec,
    plan: &PlanningSolution,
    agent: &AgentSpec,
    episodes: usize,
    seed: u64,
    log_every: usize,
    checks: Checks,
) -> Result<SeedRun, HarnessError> {
    let start = Instant::now();
    let mut learner = agent.build(mdp, episodes)?;
    let mut runner = EpisodeRunner::new(mdp, plan).with_checks(checks != Checks::Off);
    let mut rng = env_stream(seed);
    let mut records = Vec::with_capacity(episodes / log_every + 1);
    let mut var_sigma_total = 0.0;
    for k in 1..=episodes {
        let (_, record) = runner.run_episode(learner.as_mut(), &mut rng)?;
        var_sigma_total += record.var_sigma_k;
        if k % log_every == 0 || k == episodes {
            records.push(record);
        }
    }
    Ok(SeedRun {
        seed,
        records,
        final_cumulative_regret: runner.cumulative_regret(),
        var_sigma_total,
        trigger_count: learner.trigger_count(),
        invariants: runner.invariant_counts(),
        wall_time_seconds: start.elapsed().as_secs_f64(),
    })
}

/// Serializes records with the fixed column order.
pub fn records_to_csv(records: &[ExperimentRecord]) -> Result<Vec<u8>, HarnessError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in records {
        w.serialize(r)?;
    }
    w.into_inner().map_err(|e| HarnessError::Io {
        path: PathBuf::from("<memory>"),
        source: e.into_error(),
    })
}

pub fn read_records(path: impl AsRef<Path>) -> Result<Vec<ExperimentRecord>, HarnessError> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| HarnessError::io(path, e))?;
    let mut reader = csv::Reader::from_reader(file);
    let header: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    if header.join(",") != crate::mdp::CSV_HEADER {
        return Err(HarnessError::Fit(format!("{}: unexpected header {:?}", path.display(), header)));
    }
    reader.deserialize().map(|r| r.map_err(HarnessError::from)).collect()
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SeedSummary {
    pub seed: u64,
    pub csv: PathBuf,
    pub final_cumulative_regret: f64,
    pub var_sigma_total: f64,
    pub trigger_count: u64,
    pub invariant_counts: InvariantCounts,
    pub wall_time_seconds: f64,
}

/// Static facts about an environment.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EnvDescription {
    #[serde(rename = "S")]
    pub states: usize,
    #[serde(rename = "A")]
    pub actions: usize,
    #[serde(rename = "H")]
    pub horizon: usize,
    pub homogeneous: bool,
    pub deterministic: bool,
    pub bounded_total_reward: bool,
    pub max_support: usize,
    /// `V*_1` averaged over the initial distribution.
    pub v_star_initial: f64,
    pub q_star: f64,
    pub var_star: VarStar,
}

pub fn describe(mdp: &MdpSpec, plan: &PlanningSolution, settings: &VarStarSettings) -> EnvDescription {
    EnvDescription {
        states: mdp.num_states(),
        actions: mdp.num_actions(),
        horizon: mdp.horizon(),
        homogeneous: mdp.is_homogeneous(),
        deterministic: mdp.is_deterministic(),
        bounded_total_reward: mdp.has_bounded_total_reward(),
        max_support: max_support(mdp),
        v_star_initial: plan.initial_value(mdp),
        q_star: q_star(mdp, plan),
        var_star: var_star_auto(mdp, settings.budget, settings.policies, settings.seed),
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub agent: String,
    #[serde(rename = "K")]
    pub episodes: usize,
    pub log_every: usize,
    pub env: EnvDescription,
    pub mean_final_cumulative_regret: f64,
    pub invariant_violations: u64,
    pub seeds: Vec<SeedSummary>,
}

#[derive(Clone, Debug)]
pub struct ExperimentOutcome {
    pub summary: ExperimentSummary,
    pub summary_path: PathBuf,
    pub runs: Vec<SeedRun>,
}

/// Runs every seed and writes `seed_<s>.csv`, `seed_<s>.json` and
/// `summary.json` under the output directory.
///
/// With strict checks, outputs are still written before an invariant
/// violation is reported as an error.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentOutcome, HarnessError> {
    config.validate()?;
    let mdp = config.env.build()?;
    let plan = value_iteration(&mdp);
    // fail fast on agent/env mismatch before spawning replicas
    config.agent.build(&mdp, config.episodes)?;
    let out = &config.output;
    fs::create_dir_all(out).map_err(|e| HarnessError::io(out, e))?;
    let env = describe(&mdp, &plan, &config.var_star);
    let log_every = config.log_every();

    let runs: Vec<(SeedRun, SeedSummary)> = config
        .seeds
        .par_iter()
        .map(|&seed| {
            let run = run_seed(&mdp, &plan, &config.agent, config.episodes, seed, log_every, config.checks)?;
            let csv_path = out.join(format!("seed_{seed}.csv"));
            fs::write(&csv_path, records_to_csv(&run.records)?).map_err(|e| HarnessError::io(&csv_path, e))?;
            let summary = SeedSummary {
                seed,
                csv: csv_path,
                final_cumulative_regret: run.final_cumulative_regret,
                var_sigma_total: run.var_sigma_total,
                trigger_count: run.trigger_count,
                invariant_counts: run.invariants,
                wall_time_seconds: run.wall_time_seconds,
            };
            let json_path = out.join(format!("seed_{seed}.json"));
            let body = serde_json::json!({ "env": &env, "run": &summary });
            fs::write(&json_path, serde_json::to_string_pretty(&body)?).map_err(|e| HarnessError::io(&json_path, e))?;
            Ok((run, summary))
        })
        .collect::<Result<_, HarnessError>>()?;

    let (runs, seeds): (Vec<_>, Vec<_>) = runs.into_iter().unzip();
    let violations = runs.iter().map(|r| r.invariants.violations()).sum();
    let summary = ExperimentSummary {
        agent: config.agent.name().to_string(),
        episodes: config.episodes,
        log_every,
        env,
        mean_final_cumulative_regret: runs.iter().map(|r| r.final_cumulative_regret).sum::<f64>() / runs.len() as f64,
        invariant_violations: violations,
        seeds,
    };
    let summary_path = out.join("summary.json");
    fs::write(&summary_path, serde_json::to_string_pretty(&summary)?).map_err(|e| HarnessError::io(&summary_path, e))?;
    if config.checks == Checks::Strict && violations > 0 {
        return Err(HarnessError::InvariantViolation(violations));
    }
    Ok(ExperimentOutcome {
        summary,
        summary_path,
        runs,
    })
}

/// Least-squares fit of `ln y = slope · ln x + intercept`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogLogFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub points: usize,
    pub max_abs_residual: f64,
    pub rms_residual: f64,
}

pub fn loglog_fit(points: &[(f64, f64)]) -> Result<LogLogFit, HarnessError> {
    let logs: Vec<(f64, f64)> = points
        .iter()
        .filter(|(x, y)| *x > 0.0 && *y > 0.0)
        .map(|(x, y)| (x.ln(), y.ln()))
        .collect();
    if logs.len() < 2 {
        return Err(HarnessError::Fit("fewer than two points with positive regret".into()));
    }
    let n = logs.len() as f64;
    let mx = logs.iter().map(|p| p.0).sum::<f64>() / n;
    let my = logs.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = logs.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = logs.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = logs.iter().map(|p| (p.1 - my).powi(2)).sum();
    if sxx == 0.0 {
        return Err(HarnessError::Fit("all points share one episode index".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let residuals: Vec<f64> = logs.iter().map(|(x, y)| y - (slope * x + intercept)).collect();
    let ss_res: f64 = residuals.iter().map(|r| r * r).sum();
    Ok(LogLogFit {
        slope,
        intercept,
        r_squared: if syy == 0.0 { 1.0 } else { 1.0 - ss_res / syy },
        points: logs.len(),
        max_abs_residual: residuals.iter().fold(0.0, |m, r| m.max(r.abs())),
        rms_residual: (ss_res / n).sqrt(),
    })
}

/// Fits cumulative regret against the episode index over the second half of
/// a run (episodes strictly above half the last logged episode).
pub fn fit_records(records: &[ExperimentRecord]) -> Result<LogLogFit, HarnessError> {
    if records.len() < 10 {
        return Err(HarnessError::Fit(format!("need at least 10 logged points, got {}", records.len())));
    }
    let last = records.last().unwrap().episode as f64;
    let points: Vec<(f64, f64)> = records
        .iter()
        .filter(|r| r.episode as f64 > last / 2.0)
        .map(|r| (r.episode as f64, r.cumulative_regret))
        .collect();
    loglog_fit(&points)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FileFit {
    pub path: PathBuf,
    pub fit: LogLogFit,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ScalingReport {
    pub files: Vec<FileFit>,
    /// Fit of the across-file mean curve, when every file logs the same
    /// episodes.
    pub mean_curve: Option<LogLogFit>,
}

pub fn mean_curve(runs: &[Vec<ExperimentRecord>]) -> Option<Vec<ExperimentRecord>> {
    let first = runs.first()?;
    if runs.iter().any(|r| r.len() != first.len() || r.iter().zip(first).any(|(a, b)| a.episode != b.episode)) {
        return None;
    }
    let n = runs.len() as f64;
    Some(
        (0..first.len())
            .map(|i| {
                let avg = |f: fn(&ExperimentRecord) -> f64| runs.iter().map(|r| f(&r[i])).sum::<f64>() / n;
                ExperimentRecord {
                    episode: first[i].episode,
                    episode_regret: avg(|r| r.episode_regret),
                    cumulative_regret: avg(|r| r.cumulative_regret),
                    var_sigma_k: avg(|r| r.var_sigma_k),
                    trigger_count: 0,
                    max_bonus: avg(|r| r.max_bonus),
                }
            })
            .collect(),
    )
}

pub fn scaling_fit<P: AsRef<Path>>(paths: &[P]) -> Result<ScalingReport, HarnessError> {
    if paths.is_empty() {
        return Err(HarnessError::Fit("no inputs".into()));
    }
    let runs: Vec<Vec<ExperimentRecord>> = paths.iter().map(read_records).collect::<Result<_, _>>()?;
    let files = paths
        .iter()
        .zip(&runs)
        .map(|(p, r)| {
            Ok(FileFit {
                path: p.as_ref().to_path_buf(),
                fit: fit_records(r)?,
            })
        })
        .collect::<Result<_, HarnessError>>()?;
    let mean = match mean_curve(&runs) {
        Some(curve) if runs.len() > 1 => Some(fit_records(&curve)?),
        _ => None,
    };
    Ok(ScalingReport {
        files,
        mean_curve: mean,
    })
}
