//! Pipeline pieces shared by the CLI and the integration tests: building
//! the scenario and map, sampling held-out events, and timed runs of every
//! algorithm.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use hudn_core::baselines::{brute_force_oracle, run_baseline, Baseline, BaselineError};
use hudn_core::model::ModelParams;
use hudn_core::objective::{rate_report, Allocation, ObjectiveError};
use hudn_core::radiomap::{build_radio_map, RadioMap, RadioMapError};
use hudn_core::scenario::{generate_scenario, Scenario, ScenarioError};
use hudn_core::trainer::{
    evaluate_one, event_step, srl_train, BatchRunner, EventData, EventStep, LogRow, SrlResult, TrainContext,
    TrainError, HELDOUT_STREAM,
};
use hudn_core::objective::LossWeights;
use rayon::prelude::*;
use rayon::ThreadPool;
use serde::Serialize;

use crate::config::{hex, ExperimentConfig};
use crate::formats::EventRecord;

/// Runs batch events on a rayon pool; results come back in batch order.
#[derive(Clone)]
pub struct RayonRunner {
    pool: Arc<ThreadPool>,
}

impl RayonRunner {
    /// `workers == 0` uses every available core.
    pub fn new(workers: usize) -> Self {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .expect("thread pool");
        Self { pool: Arc::new(pool) }
    }
}

impl BatchRunner for RayonRunner {
    fn run(
        &self,
        params: &ModelParams,
        batch: &[EventData],
        weights: &LossWeights,
        temperature: f64,
    ) -> Vec<Result<EventStep, TrainError>> {
        self.pool.install(|| {
            batch
                .par_iter()
                .map(|d| event_step(params, d, weights, temperature))
                .collect()
        })
    }
}

/// Standard artifact locations under an output directory.
#[derive(Clone, Debug)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn scenario(&self) -> PathBuf {
        self.root.join("scenario.toml")
    }

    pub fn radiomap(&self) -> PathBuf {
        self.root.join("radiomap.bin")
    }

    pub fn radiomap_csv(&self) -> PathBuf {
        self.root.join("radiomap.csv")
    }

    pub fn grl_checkpoint(&self) -> PathBuf {
        self.root.join("grl.ckpt")
    }

    pub fn grl_step_checkpoint(&self, step: usize) -> PathBuf {
        self.root.join("checkpoints").join(format!("grl_step{step:06}.ckpt"))
    }

    pub fn grl_log(&self) -> PathBuf {
        self.root.join("grl_log.csv")
    }

    pub fn srl_checkpoint(&self, event: usize) -> PathBuf {
        self.root.join("srl").join(format!("event{event:04}.ckpt"))
    }

    pub fn srl_log(&self, event: usize) -> PathBuf {
        self.root.join("srl").join(format!("event{event:04}_log.csv"))
    }

    pub fn report(&self, algorithm: &str) -> PathBuf {
        self.root.join("reports").join(format!("{algorithm}.csv"))
    }

    pub fn summary(&self) -> PathBuf {
        self.root.join("summary.csv")
    }

    pub fn cdf(&self) -> PathBuf {
        self.root.join("cdf.csv")
    }

    pub fn manifest(&self, command: &str) -> PathBuf {
        self.root.join("manifests").join(format!("{command}.json"))
    }
}

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    RadioMap(#[from] RadioMapError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Baseline(#[from] BaselineError),
    #[error(transparent)]
    Objective(#[from] ObjectiveError),
}

/// Scenario and radio map for `cfg`, built from scratch.
pub fn build_world(cfg: &ExperimentConfig) -> Result<(Scenario, RadioMap), PipelineError> {
    let scenario = generate_scenario(&cfg.scenario)?;
    let map = build_radio_map(&scenario, &cfg.pathloss)?;
    Ok((scenario, map))
}

pub fn context<'a>(cfg: &ExperimentConfig, scenario: &Scenario, map: &'a RadioMap) -> TrainContext<'a> {
    let mut ctx = TrainContext::new(map, scenario.p_max());
    ctx.graph = cfg.graph;
    ctx.channel = cfg.channel;
    ctx.baseline = cfg.baseline;
    ctx
}

/// Held-out event `index`; never overlaps the GRL training stream.
pub fn heldout_event(ctx: &TrainContext<'_>, cfg: &ExperimentConfig, index: usize) -> Result<EventData, PipelineError> {
    Ok(ctx.sample(cfg.train.k_a, cfg.train.seed, HELDOUT_STREAM, index as u64)?)
}

pub fn heldout_events(ctx: &TrainContext<'_>, cfg: &ExperimentConfig, n: usize) -> Result<Vec<EventData>, PipelineError> {
    (0..n).map(|i| heldout_event(ctx, cfg, i)).collect()
}

fn record(index: usize, data: &EventData, alloc: &Allocation, seconds: f64) -> Result<EventRecord, PipelineError> {
    alloc.check_feasible(&data.inst.p_max)?;
    let serving = alloc.serving();
    Ok(EventRecord {
        event: index,
        grid_ids: data.graph.ue_ids.clone(),
        report: rate_report(&serving, &alloc.p, &data.inst)?,
        serving,
        p: alloc.p.clone(),
        wall_clock_s: seconds,
    })
}

/// Runs a baseline on every event, timing each solve.
pub fn run_baseline_timed(which: Baseline, events: &[EventData], ctx: &TrainContext<'_>) -> Result<Vec<EventRecord>, PipelineError> {
    events
        .iter()
        .enumerate()
        .map(|(i, d)| {
            let t = Instant::now();
            let out = run_baseline(which, &d.inst, &ctx.baseline)?;
            let s = t.elapsed().as_secs_f64();
            record(i, d, &out.alloc, s)
        })
        .collect()
}

/// Model inference on every event, timing forward plus hardening.
pub fn run_model_timed(params: &ModelParams, events: &[EventData], temperature: f64) -> Result<Vec<EventRecord>, PipelineError> {
    events
        .iter()
        .enumerate()
        .map(|(i, d)| {
            let t = Instant::now();
            let (out, _) = evaluate_one(params, d, temperature)?;
            let alloc = out.hard_allocation();
            let s = t.elapsed().as_secs_f64();
            record(i, d, &alloc, s)
        })
        .collect()
}

/// SRL fine-tuning per event from `start`; the recorded time covers
/// fine-tuning and the final inference.
pub fn run_srl_timed(
    start: &ModelParams,
    events: &[EventData],
    cfg: &ExperimentConfig,
) -> Result<(Vec<EventRecord>, Vec<SrlResult>), PipelineError> {
    let mut records = Vec::with_capacity(events.len());
    let mut results = Vec::with_capacity(events.len());
    for (i, d) in events.iter().enumerate() {
        let t = Instant::now();
        let res = srl_train(d, start, &cfg.train)?;
        let (out, _) = evaluate_one(&res.params, d, cfg.train.temperature)?;
        let s = t.elapsed().as_secs_f64();
        records.push(record(i, d, &out.hard_allocation(), s)?);
        results.push(res);
    }
    Ok((records, results))
}

pub fn run_oracle_timed(events: &[EventData], ctx: &TrainContext<'_>) -> Result<Vec<EventRecord>, PipelineError> {
    events
        .iter()
        .enumerate()
        .map(|(i, d)| {
            let t = Instant::now();
            let (alloc, _) = brute_force_oracle(&d.inst, &ctx.baseline)?;
            let s = t.elapsed().as_secs_f64();
            record(i, d, &alloc, s)
        })
        .collect()
}

/// What a run used and produced, enough to repeat it.
#[derive(Clone, Debug, Serialize)]
pub struct Manifest {
    pub command: String,
    pub version: &'static str,
    pub config_digest: String,
    pub config: ExperimentConfig,
    pub scenario_digest: Option<String>,
    pub outputs: Vec<String>,
}

impl Manifest {
    pub fn new(command: &str, cfg: &ExperimentConfig, scenario: Option<&Scenario>) -> Self {
        Self {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION"),
            config_digest: cfg.digest(),
            config: cfg.clone(),
            scenario_digest: scenario.map(|s| hex(&s.digest())),
            outputs: Vec::new(),
        }
    }

    pub fn output(&mut self, path: &Path) {
        self.outputs.push(path.display().to_string());
    }
}

/// True when every row's `r_n`, `r_b` and `lr` are finite.
pub fn log_is_finite(log: &[LogRow]) -> bool {
    log.iter().all(|r| r.r_n.is_finite() && r.r_b.is_finite() && r.lr.is_finite())
}
