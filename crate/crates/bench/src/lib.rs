//! Orchestration behind the `nafa-bench` binary: training, evaluation sweeps,
//! report comparison and trace inspection.

pub mod config;

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use nafa::agent::{SimProcess, TrainSummary};
use nafa::baselines::{BestFit, LinUcb, LinUcbModel, LinUcbSnapshot, SlidingWindow, WorstFit};
use nafa::energy::EnergyTrace;
use nafa::metrics::{self, ComparedRow, EvaluationReport};
use nafa::policy::Scheduler;
use nafa::sim::{Environment, HOURS_PER_DAY};
use nafa::workload::{PoissonWorkload, WorkloadConfig};
use nafa::{seed, Agent, Params, QNet};
use rayon::prelude::*;

pub use config::ExperimentConfig;

pub const REPORTS_FILE: &str = "reports.csv";
pub const DAILY_FILE: &str = "daily_rewards.csv";
pub const COMPARISON_FILE: &str = "comparison.csv";

#[derive(Debug, thiserror::Error)]
pub enum BenchError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] nafa::Error),
}

impl BenchError {
    pub fn config(msg: impl Into<String>) -> Self {
        BenchError::Config(msg.into())
    }

    /// 2 for a runtime contract violation, 1 for everything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            BenchError::Core(nafa::Error::ContractViolation(_)) => 2,
            _ => 1,
        }
    }
}

impl From<std::io::Error> for BenchError {
    fn from(e: std::io::Error) -> Self {
        BenchError::Core(nafa::Error::Io(e))
    }
}

pub type Result<T> = std::result::Result<T, BenchError>;

/// Command-line overrides of config values.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
}

impl Overrides {
    pub fn apply(&self, cfg: &mut ExperimentConfig) {
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(o) = &self.out {
            cfg.output_dir = o.clone();
        }
    }
}

fn cell_tag(eta: f64, rate: f64) -> String {
    format!("eta{eta}_rate{rate}")
}

pub fn nafa_checkpoint(dir: &Path, eta: f64, rate: f64) -> PathBuf {
    dir.join(format!("nafa_{}.qnet", cell_tag(eta, rate)))
}

pub fn linucb_checkpoint(dir: &Path, eta: f64, rate: f64) -> PathBuf {
    dir.join(format!("linucb_{}.json", cell_tag(eta, rate)))
}

pub fn default_checkpoint_dir(cfg: &ExperimentConfig) -> PathBuf {
    cfg.output_dir.join("checkpoints")
}

fn build_env(cfg: &ExperimentConfig, params: Params, trace: Arc<EnergyTrace>, rng_seed: u64) -> Result<Environment> {
    let workload = PoissonWorkload::new(WorkloadConfig {
        arrival_rate: params.arrival_rate,
        data_size_range: params.data_size_range,
        seed: rng_seed,
    })?;
    Ok(Environment::new(params, cfg.env, trace, Box::new(workload), rng_seed)?)
}

fn train_env_seed(cfg: &ExperimentConfig, rate: f64) -> u64 {
    seed::derive(cfg.seed, &[seed::tag("train-workload"), seed::tag_f64(rate)])
}

fn eval_env_seed(cfg: &ExperimentConfig, rate: f64) -> u64 {
    seed::derive(cfg.seed, &[seed::tag("eval-workload"), seed::tag_f64(rate)])
}

/// What `train` produced for one cell.
#[derive(Debug, Clone)]
pub struct TrainedCell {
    pub policy: String,
    pub eta: f64,
    pub arrival_rate: f64,
    pub checkpoint: PathBuf,
    pub summary: Option<TrainSummary>,
}

/// Trains every learning policy (`nafa`, `linucb`) in the configuration on
/// the training trace, one model per `(eta, arrival_rate)` cell.
pub fn cmd_train(cfg: &ExperimentConfig, checkpoint_dir: &Path) -> Result<Vec<TrainedCell>> {
    cfg.validate()?;
    let trace = Arc::new(cfg.train_trace.load()?);
    if trace.days() < cfg.train.episode_horizon_days {
        return Err(BenchError::config(format!(
            "training trace has {} days, episodes need {}",
            trace.days(),
            cfg.train.episode_horizon_days
        )));
    }
    fs::create_dir_all(checkpoint_dir)?;
    fs::create_dir_all(&cfg.output_dir)?;
    let mut out = Vec::new();
    for &rate in &cfg.arrival_rates {
        for &eta in &cfg.eta_values {
            let params = cfg.cell_params(eta, rate);
            if cfg.has_policy("nafa") {
                out.push(train_nafa(cfg, &params, trace.clone(), checkpoint_dir)?);
            }
            if cfg.has_policy("linucb") {
                out.push(train_linucb(cfg, &params, trace.clone(), checkpoint_dir)?);
            }
        }
    }
    Ok(out)
}

fn train_nafa(cfg: &ExperimentConfig, params: &Params, trace: Arc<EnergyTrace>, dir: &Path) -> Result<TrainedCell> {
    let (eta, rate) = (params.eta, params.arrival_rate);
    let mut env = build_env(cfg, params.clone(), trace, train_env_seed(cfg, rate))?;
    let agent_seed = seed::derive(cfg.seed, &[seed::tag("nafa"), seed::tag_f64(eta), seed::tag_f64(rate)]);
    let mut agent = Agent::new(cfg.train.clone(), params.num_frequencies() + 4, params.num_actions(), agent_seed)?;
    let mut process = SimProcess::new(&mut env, cfg.train.episode_horizon_days)?;
    let metrics_path = cfg.output_dir.join(format!("training_nafa_{}.csv", cell_tag(eta, rate)));
    let mut sink = BufWriter::new(fs::File::create(&metrics_path)?);
    let summary = agent.train(&mut process, Some(&mut sink))?;
    sink.flush()?;
    let checkpoint = nafa_checkpoint(dir, eta, rate);
    agent.online().save_to_path(&checkpoint)?;
    Ok(TrainedCell { policy: "nafa".into(), eta, arrival_rate: rate, checkpoint, summary: Some(summary) })
}

fn train_linucb(cfg: &ExperimentConfig, params: &Params, trace: Arc<EnergyTrace>, dir: &Path) -> Result<TrainedCell> {
    let (eta, rate) = (params.eta, params.arrival_rate);
    let horizon_days = cfg.train.episode_horizon_days;
    let windows = trace.days() / horizon_days;
    let mut env = build_env(cfg, params.clone(), trace, train_env_seed(cfg, rate))?;
    let mut bandit = LinUcb::new(params, cfg.linucb_alpha)?;
    for episode in 0..cfg.train.episodes {
        env.reset((episode as usize % windows) * horizon_days, episode)?;
        env.run_episode(&mut bandit, horizon_days as f64 * HOURS_PER_DAY)?;
    }
    let checkpoint = linucb_checkpoint(dir, eta, rate);
    let file = BufWriter::new(fs::File::create(&checkpoint)?);
    serde_json::to_writer_pretty(file, &bandit.model().snapshot()).map_err(nafa::Error::from)?;
    Ok(TrainedCell { policy: "linucb".into(), eta, arrival_rate: rate, checkpoint, summary: None })
}

fn scheduler_for(
    cfg: &ExperimentConfig,
    policy: &str,
    eta: f64,
    rate: f64,
    checkpoint_dir: &Path,
) -> Result<Box<dyn Scheduler + Send>> {
    Ok(match policy {
        "bf" => Box::new(BestFit),
        "wf" => Box::new(WorstFit),
        "sw" => Box::new(SlidingWindow::new(cfg.sw, cfg.env.invariant_tolerance)?),
        "nafa" => {
            let path = nafa_checkpoint(checkpoint_dir, eta, rate);
            if !path.is_file() {
                return Err(BenchError::config(format!("missing checkpoint {}; run `train` first", path.display())));
            }
            Box::new(nafa::agent::NafaScheduler::new(QNet::load_from_path(&path)?))
        }
        "linucb" => {
            let path = linucb_checkpoint(checkpoint_dir, eta, rate);
            let text = fs::read_to_string(&path).map_err(|e| {
                BenchError::config(format!("missing checkpoint {}: {e}; run `train` first", path.display()))
            })?;
            let snap: LinUcbSnapshot = serde_json::from_str(&text).map_err(nafa::Error::from)?;
            let mut s = LinUcb::from_model(LinUcbModel::from_snapshot(&snap)?);
            s.set_learning(false);
            Box::new(s)
        }
        other => return Err(BenchError::config(format!("unknown policy `{other}`"))),
    })
}

/// Runs one evaluation cell on the test trace.
pub fn evaluate_cell(
    cfg: &ExperimentConfig,
    trace: Arc<EnergyTrace>,
    policy: &str,
    eta: f64,
    rate: f64,
    checkpoint_dir: &Path,
) -> Result<EvaluationReport> {
    let mut scheduler = scheduler_for(cfg, policy, eta, rate, checkpoint_dir)?;
    let mut env = build_env(cfg, cfg.cell_params(eta, rate), trace, eval_env_seed(cfg, rate))?;
    let log = env.run_episode(scheduler.as_mut(), cfg.evaluation_days as f64 * HOURS_PER_DAY)?;
    Ok(metrics::aggregate_daily(&log).days(cfg.evaluation_days).finish(policy, eta, rate))
}

/// Evaluates every `(policy, eta, arrival_rate)` cell and writes the report CSVs.
pub fn cmd_evaluate(cfg: &ExperimentConfig, checkpoint_dir: &Path, workers: usize) -> Result<Vec<EvaluationReport>> {
    cfg.validate()?;
    let trace = Arc::new(cfg.test_trace.load()?);
    if trace.days() < cfg.evaluation_days {
        return Err(BenchError::config(format!(
            "test trace has {} days, evaluation needs {}",
            trace.days(),
            cfg.evaluation_days
        )));
    }
    let mut cells = Vec::new();
    for &rate in &cfg.arrival_rates {
        for &eta in &cfg.eta_values {
            for p in &cfg.policies {
                cells.push((p.as_str(), eta, rate));
            }
        }
    }
    // fail on missing checkpoints before spending time on other cells
    for &(p, eta, rate) in &cells {
        scheduler_for(cfg, p, eta, rate, checkpoint_dir)?;
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| BenchError::config(e.to_string()))?;
    let reports: Vec<EvaluationReport> = pool.install(|| {
        cells
            .par_iter()
            .map(|&(p, eta, rate)| evaluate_cell(cfg, trace.clone(), p, eta, rate, checkpoint_dir))
            .collect::<Result<_>>()
    })?;
    fs::create_dir_all(&cfg.output_dir)?;
    metrics::write_reports(BufWriter::new(fs::File::create(cfg.output_dir.join(REPORTS_FILE))?), &reports)?;
    metrics::write_daily(BufWriter::new(fs::File::create(cfg.output_dir.join(DAILY_FILE))?), &reports)?;
    Ok(reports)
}

/// Merges report CSVs and flags the best policy per column and group.
pub fn cmd_compare(inputs: &[PathBuf], out_dir: &Path) -> Result<Vec<ComparedRow>> {
    if inputs.is_empty() {
        return Err(BenchError::config("no report files to compare"));
    }
    let mut rows = Vec::new();
    for path in inputs {
        let file =
            fs::File::open(path).map_err(|e| BenchError::config(format!("cannot open {}: {e}", path.display())))?;
        rows.extend(metrics::read_reports(file)?);
    }
    let compared = metrics::compare(&rows).map_err(|e| BenchError::config(e.to_string()))?;
    fs::create_dir_all(out_dir)?;
    metrics::write_compared(BufWriter::new(fs::File::create(out_dir.join(COMPARISON_FILE))?), &compared)?;
    Ok(compared)
}

/// Plain-text table of compared rows; `*` marks the best value in a group.
pub fn format_comparison(rows: &[ComparedRow]) -> String {
    let mark = |b: bool| if b { "*" } else { " " };
    let mut s = format!(
        "{:<8} {:>6} {:>6} {:>12} {:>10} {:>10} {:>8} {:>8} {:>8}\n",
        "policy", "eta", "rate", "reward/day", "accept%", "time(h)", "f-res%", "f-load%", "cons%"
    );
    for c in rows {
        let r = &c.row;
        s.push_str(&format!(
            "{:<8} {:>6} {:>6} {:>11.2}{} {:>9.2}{} {:>9.4}{} {:>8.2} {:>8.2} {:>8.2}\n",
            r.policy,
            r.eta,
            r.arrival_rate,
            r.mean_daily_reward,
            mark(c.best_reward),
            r.acceptance_pct,
            mark(c.best_acceptance),
            r.avg_processing_time_hours,
            mark(c.best_processing_time),
            r.pct_full_reserved,
            r.pct_full_loaded,
            r.pct_conservation,
        ));
    }
    s
}

/// Summary of the training and test traces.
pub fn cmd_trace_info(cfg: &ExperimentConfig) -> Result<String> {
    let mut s = String::new();
    for (name, spec) in [("train", &cfg.train_trace), ("test", &cfg.test_trace)] {
        let trace = spec.load()?;
        let panel = cfg.sim.panel_size;
        let daily: Vec<f64> = (0..trace.days())
            .map(|d| trace.harvested_energy(panel, d as f64 * 24.0, (d + 1) as f64 * 24.0))
            .collect::<nafa::Result<_>>()?;
        let mean = daily.iter().sum::<f64>() / daily.len() as f64;
        let min = daily.iter().copied().fold(f64::INFINITY, f64::min);
        let max = daily.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        s.push_str(&format!(
            "{name}: {} days, total GHI {:.1} Wh/m², daily harvest mean {:.0} J, min {:.0} J, max {:.0} J",
            trace.days(),
            trace.total_irradiance(),
            mean,
            min,
            max
        ));
        if let Some(d) = trace.start_date {
            s.push_str(&format!(", starting {d}"));
        }
        s.push('\n');
    }
    Ok(s)
}
