//! Experiment runner, latency benchmark and seed-curve export.

pub mod config;

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::envs::{EnvConfig, EnvKind};
use crate::models::{checkpoint, AgentNet, CoreConfig, GtrxlConfig, ParamSet, PopArt, TowerConfig};
use crate::pipeline::actor::{ActorPolicy, NetPolicy};
use crate::pipeline::metrics::{steps_to_threshold, MetricsRecord};
use crate::pipeline::runtime::{run_deterministic, run_threaded, RunOutcome};
use crate::pipeline::{Mode, ParamStore, PipelineError};

pub use config::{ConfigError, ExperimentConfig, ModelsConfig};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed metrics: {0}")]
    Json(#[from] serde_json::Error),
    #[error("{0}")]
    Invalid(String),
}

impl HarnessError {
    /// Process exit code for the CLI.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) | HarnessError::Invalid(_) => 2,
            HarnessError::Pipeline(PipelineError::Config(_)) => 2,
            HarnessError::Pipeline(e) if e.is_numeric() => 3,
            _ => 1,
        }
    }
}

pub type Result<T, E = HarnessError> = std::result::Result<T, E>;

/// Success thresholds reported in the summary.
pub const SUMMARY_THRESHOLDS: [f64; 3] = [0.5, 0.9, 1.0];
/// Plateau band around 0.5 success, both edges inclusive.
pub const PLATEAU_BAND: (f64, f64) = (0.4, 0.6);

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Threshold {
    pub success: f64,
    /// `None` when the run never reached it.
    pub env_steps: Option<u64>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Summary {
    pub mode: Mode,
    pub env: EnvConfig,
    pub seed: u64,
    pub env_step_budget: u64,
    pub env_steps: u64,
    pub learner_steps: u64,
    pub distill_steps: u64,
    pub learner_updates: u64,
    pub distill_updates: u64,
    pub episodes: u64,
    pub wall_secs: f64,
    pub final_success: Option<f64>,
    pub thresholds: Vec<Threshold>,
    pub time_in_band: Option<f64>,
    pub learner_idle: Option<f64>,
    pub dprl_ratio: Option<f64>,
    pub conservation_balanced: bool,
    pub actor_transformer_calls: u64,
}

impl Summary {
    pub fn from_outcome(cfg: &ExperimentConfig, o: &RunOutcome) -> Self {
        let t = &o.totals;
        let idle = t.learner_idle_secs + t.learner_busy_secs;
        Summary {
            mode: cfg.mode,
            env: cfg.env.clone(),
            seed: cfg.seed,
            env_step_budget: cfg.env_steps,
            env_steps: t.env_steps,
            learner_steps: t.learner_steps,
            distill_steps: t.distill_steps,
            learner_updates: t.learner_updates,
            distill_updates: t.distill_updates,
            episodes: t.episodes,
            wall_secs: o.wall_secs,
            final_success: o.records.iter().rev().find_map(|r| r.success_rate),
            thresholds: SUMMARY_THRESHOLDS
                .iter()
                .map(|&s| Threshold {
                    success: s,
                    env_steps: steps_to_threshold(&o.records, s),
                })
                .collect(),
            time_in_band: time_in_band(&curve(&o.records), PLATEAU_BAND),
            learner_idle: (idle > 0.0).then(|| t.learner_idle_secs / idle),
            dprl_ratio: o.dprl_ratio,
            conservation_balanced: o.conservation.balanced(),
            actor_transformer_calls: o.actor_transformer_calls,
        }
    }
}

/// Runs one experiment. With an output directory, records stream to
/// `metrics.jsonl` (one JSON object per line, flushed per record) and the
/// final `summary.json` is written at the end.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<(RunOutcome, Summary)> {
    cfg.validate()?;
    let sink: Option<Box<dyn Write + Send>> = match &cfg.output {
        Some(dir) => {
            fs::create_dir_all(dir)?;
            Some(Box::new(BufWriter::new(File::create(dir.join("metrics.jsonl"))?)))
        }
        None => None,
    };
    let outcome = if cfg.deterministic {
        run_deterministic(cfg, sink)?
    } else {
        run_threaded(cfg, sink)?
    };
    let summary = Summary::from_outcome(cfg, &outcome);
    if let Some(dir) = &cfg.output {
        let f = BufWriter::new(File::create(dir.join("summary.json"))?);
        serde_json::to_writer_pretty(f, &summary)?;
        if let Some((net, params)) = &outcome.actor_model {
            checkpoint::save_model(&dir.join("actor.ckpt"), net, params).map_err(PipelineError::from)?;
        }
    }
    Ok((outcome, summary))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum BenchModel {
    Lstm { hidden: usize },
    Gtrxl(GtrxlConfig),
}

impl BenchModel {
    /// 32-unit LSTM.
    pub fn lstm() -> Self {
        BenchModel::Lstm { hidden: 32 }
    }

    /// 4-layer transformer, embedding 256, memory 64.
    pub fn gtrxl() -> Self {
        BenchModel::Gtrxl(GtrxlConfig::large(4))
    }

    fn core(&self) -> CoreConfig {
        match *self {
            BenchModel::Lstm { hidden } => CoreConfig::Lstm { hidden },
            BenchModel::Gtrxl(c) => CoreConfig::Gtrxl(c),
        }
    }
}

impl std::str::FromStr for BenchModel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "lstm" => Ok(BenchModel::lstm()),
            "gtrxl" => Ok(BenchModel::gtrxl()),
            other => Err(format!("unknown model `{other}` (lstm, gtrxl)")),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LatencyReport {
    pub trials: usize,
    pub median_ms: f64,
    pub p95_ms: f64,
    pub mean_ms: f64,
    /// Steps per second at the median latency.
    pub sps: f64,
}

fn percentile(sorted: &[f64], q: f64) -> f64 {
    let idx = ((sorted.len() - 1) as f64 * q).round() as usize;
    sorted[idx]
}

/// Single-threaded, batch-1 inference latency of one acting step, including
/// observation encoding, on I-Maze observations. The recurrent state is
/// carried between steps (for the transformer the memory fills to its
/// length during the warm-up). `trials = 0` is an error.
pub fn bench_latency(model: BenchModel, trials: usize) -> Result<LatencyReport> {
    if trials == 0 {
        return Err(HarnessError::Invalid("bench needs at least one trial".into()));
    }
    let env_cfg = EnvConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut ps = ParamSet::new();
    let net = AgentNet::new(
        &mut ps,
        &mut rng,
        env_cfg.obs_dim(),
        env_cfg.num_actions(),
        &[TowerConfig::full("bench", model.core())],
    )
    .map_err(PipelineError::from)?;
    let store = Arc::new(ParamStore::new(&ps, PopArt::default()));
    let mut policy = NetPolicy::new(net, store);
    let env = env_cfg.build(0).map_err(PipelineError::from)?;
    let obs: Vec<Vec<f32>> = (0..16)
        .map(|_| (0..env_cfg.obs_dim()).map(|_| rng.gen_range(-1.0..=1.0)).collect())
        .collect();
    let warmup = match model {
        BenchModel::Gtrxl(c) => c.mem_len + 1,
        BenchModel::Lstm { .. } => 8,
    };
    for i in 0..warmup {
        policy.act(&env, &obs[i % obs.len()], i == 0)?;
    }
    let mut ms = Vec::with_capacity(trials);
    for i in 0..trials {
        let t = Instant::now();
        let logits = policy.act(&env, &obs[i % obs.len()], false)?;
        std::hint::black_box(&logits);
        ms.push(t.elapsed().as_secs_f64() * 1e3);
    }
    let mean_ms = ms.iter().sum::<f64>() / trials as f64;
    ms.sort_by(f64::total_cmp);
    let median_ms = percentile(&ms, 0.5);
    Ok(LatencyReport {
        trials,
        median_ms,
        p95_ms: percentile(&ms, 0.95),
        mean_ms,
        sps: if median_ms > 0.0 {
            1e3 / median_ms
        } else {
            f64::INFINITY
        },
    })
}

/// `(env_steps, success)` points of a run, skipping records without episodes.
pub fn curve(records: &[MetricsRecord]) -> Vec<(u64, f64)> {
    records
        .iter()
        .filter_map(|r| r.success_rate.map(|s| (r.env_steps, s)))
        .collect()
}

/// Fraction of environment steps spent with success inside `band` (both
/// edges inclusive). Each point's success rate covers the interval from the
/// previous point's step count (0 for the first) up to its own. `None` for an
/// empty curve.
pub fn time_in_band(curve: &[(u64, f64)], band: (f64, f64)) -> Option<f64> {
    let mut prev = 0;
    let (mut inside, mut total) = (0u64, 0u64);
    for &(steps, s) in curve {
        let w = steps.saturating_sub(prev);
        prev = prev.max(steps);
        total += w;
        if s >= band.0 && s <= band.1 {
            inside += w;
        }
    }
    (total > 0).then(|| inside as f64 / total as f64)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SeedCurve {
    pub run: String,
    pub mode: Option<Mode>,
    pub seed: Option<u64>,
    pub points: Vec<(u64, f64)>,
    pub time_in_band: Option<f64>,
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRecord>> {
    let text = fs::read_to_string(path)?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(HarnessError::from))
        .collect()
}

/// Collects every run directory under `runs` (any directory holding a
/// `metrics.jsonl`, `runs` itself included), then writes `seeds.csv` with the
/// success curve of each run and `time_in_band.csv` with the plateau
/// statistic. Runs are ordered by directory name.
pub fn seed_curve_export(runs: &Path) -> Result<Vec<SeedCurve>> {
    let mut dirs: Vec<PathBuf> = Vec::new();
    if runs.join("metrics.jsonl").is_file() {
        dirs.push(runs.to_path_buf());
    }
    for entry in fs::read_dir(runs)? {
        let p = entry?.path();
        if p.join("metrics.jsonl").is_file() {
            dirs.push(p);
        }
    }
    if dirs.is_empty() {
        return Err(HarnessError::Invalid(format!(
            "no runs with metrics.jsonl under {}",
            runs.display()
        )));
    }
    dirs.sort();
    let mut out = Vec::new();
    for d in dirs {
        let records = read_metrics(&d.join("metrics.jsonl"))?;
        let summary: Option<Summary> = fs::read_to_string(d.join("summary.json"))
            .ok()
            .and_then(|s| serde_json::from_str(&s).ok());
        let points = curve(&records);
        out.push(SeedCurve {
            run: d
                .file_name()
                .map_or_else(|| d.display().to_string(), |n| n.to_string_lossy().into_owned()),
            mode: summary.as_ref().map(|s| s.mode),
            seed: summary.as_ref().map(|s| s.seed),
            time_in_band: time_in_band(&points, PLATEAU_BAND),
            points,
        });
    }
    let opt = |x: Option<String>| x.unwrap_or_default();
    let mut csv = BufWriter::new(File::create(runs.join("seeds.csv"))?);
    writeln!(csv, "run,mode,seed,env_steps,success_rate")?;
    for c in &out {
        for (steps, s) in &c.points {
            writeln!(
                csv,
                "{},{},{},{steps},{s}",
                c.run,
                opt(c.mode.map(|m| m.to_string())),
                opt(c.seed.map(|s| s.to_string()))
            )?;
        }
    }
    csv.flush()?;
    let mut band = BufWriter::new(File::create(runs.join("time_in_band.csv"))?);
    writeln!(band, "run,mode,seed,time_in_band")?;
    for c in &out {
        writeln!(
            band,
            "{},{},{},{}",
            c.run,
            opt(c.mode.map(|m| m.to_string())),
            opt(c.seed.map(|s| s.to_string())),
            opt(c.time_in_band.map(|t| t.to_string()))
        )?;
    }
    band.flush()?;
    Ok(out)
}

/// Environment kind as used in file names.
pub fn env_label(kind: EnvKind) -> &'static str {
    match kind {
        EnvKind::IMaze => "imaze",
        EnvKind::MetaFetch => "metafetch",
    }
}
