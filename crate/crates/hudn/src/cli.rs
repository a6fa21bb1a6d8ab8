//! The `hudn` command line.
//!
//! Exit codes: 0 success, 2 configuration error, 3 missing or mismatched
//! input, 4 numeric failure, 5 unwritable output.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use hudn_core::baselines::{Baseline, BaselineError};
use hudn_core::radiomap::build_radio_map;
use hudn_core::radiomap::RadioMap;
use hudn_core::scenario::{generate_scenario, Scenario, ScenarioError};
use hudn_core::trainer::{grl_train, srl_train, TrainError};

use crate::config::{ConfigError, ExperimentConfig, OUT_DIR_ENV};
use crate::experiment::{
    context, heldout_event, heldout_events, run_baseline_timed, run_model_timed, run_oracle_timed, run_srl_timed,
    Layout, Manifest, PipelineError, RayonRunner,
};
use crate::formats::{self, summarize, EventRecord, FormatError};

#[derive(Parser, Debug)]
#[command(name = "hudn", version, about = "Joint user association and power control with heterogeneous GraphSAGE")]
pub struct Cli {
    /// Experiment config (TOML). Defaults apply when omitted.
    #[arg(short, long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory; overrides the config file.
    #[arg(long, global = true, env = OUT_DIR_ENV)]
    pub out_dir: Option<PathBuf>,
    /// Root seed; overrides the config file.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for GRL batches (0 = all cores).
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    /// Number of held-out events to evaluate.
    #[arg(long, global = true)]
    pub events: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate the scenario file.
    GenScenario,
    /// Build the radio map for the scenario file.
    BuildRadiomap {
        /// Also export the map as CSV.
        #[arg(long)]
        csv: bool,
    },
    /// Generalization training over sampled events.
    TrainGrl {
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
    },
    /// Specialization fine-tuning on one held-out event.
    TrainSrl {
        /// Held-out event index.
        #[arg(long, default_value_t = 0)]
        event: usize,
        /// Starting checkpoint (defaults to the GRL output).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Run one comparator on the held-out events.
    Baseline {
        /// maramp, msuamp, msuapc, uamwser or juapcmwser.
        name: String,
    },
    /// Model inference on the held-out events.
    Eval {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Exhaustive gridded optimum on the held-out events.
    Oracle,
    /// Run several algorithms and write the summary and CDF tables.
    Report {
        /// Comma-separated: grl, srl, oracle and any baseline name.
        #[arg(long, value_delimiter = ',', default_value = "grl,maramp,msuamp,msuapc,uamwser,juapcmwser")]
        algorithms: Vec<String>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("input error: {0}")]
    Input(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("output error: {0}")]
    Output(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Input(_) => 3,
            CliError::Numeric(_) => 4,
            CliError::Output(_) => 5,
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e.to_string())
    }
}

fn reading(e: FormatError) -> CliError {
    CliError::Input(e.to_string())
}

fn writing(e: FormatError) -> CliError {
    if e.is_io() {
        CliError::Output(e.to_string())
    } else {
        CliError::Input(e.to_string())
    }
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::Train(t) => t.into(),
            PipelineError::Scenario(ScenarioError::InvalidConfig(m)) => CliError::Config(m.to_string()),
            PipelineError::Scenario(s) => CliError::Config(s.to_string()),
            PipelineError::Baseline(b @ (BaselineError::Budget { .. } | BaselineError::InvalidConfig(_))) => {
                CliError::Config(b.to_string())
            }
            other => CliError::Input(other.to_string()),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::NonFinite { .. } | TrainError::Grad(_) => CliError::Numeric(e.to_string()),
            TrainError::InvalidConfig(_) | TrainError::Scenario(_) => CliError::Config(e.to_string()),
            other => CliError::Input(other.to_string()),
        }
    }
}

/// Resolved configuration plus output layout.
pub struct Session {
    pub cfg: ExperimentConfig,
    pub layout: Layout,
}

impl Session {
    pub fn from_cli(cli: &Cli) -> Result<Self, CliError> {
        let mut cfg = match &cli.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => ExperimentConfig::default(),
        };
        if let Some(dir) = &cli.out_dir {
            cfg.run.out_dir = dir.clone();
        }
        if let Some(seed) = cli.seed {
            cfg.run.seed = Some(seed);
        }
        if let Some(w) = cli.workers {
            cfg.run.workers = w;
        }
        if let Some(n) = cli.events {
            cfg.run.eval_events = n;
        }
        if let Command::TrainGrl { steps, lr } = &cli.command {
            if let Some(s) = steps {
                cfg.train.steps = *s;
            }
            if let Some(lr) = lr {
                cfg.train.lr = *lr;
            }
        }
        cfg.resolve_seeds();
        cfg.validate()?;
        Ok(Self {
            layout: Layout::new(cfg.run.out_dir.clone()),
            cfg,
        })
    }

    /// Scenario and map from disk, checked against each other and against
    /// the configured scenario.
    fn load_world(&self) -> Result<(Scenario, RadioMap), CliError> {
        let scenario = formats::read_scenario(&self.layout.scenario()).map_err(reading)?;
        if scenario.config != self.cfg.scenario {
            return Err(CliError::Input(format!(
                "{} was generated from a different scenario config",
                self.layout.scenario().display()
            )));
        }
        let map = formats::read_radiomap(&self.layout.radiomap(), Some(&scenario)).map_err(reading)?;
        Ok((scenario, map))
    }

    fn finish(&self, manifest: &Manifest) -> Result<(), CliError> {
        let path = self.layout.manifest(&manifest.command);
        let text = serde_json::to_string_pretty(manifest).expect("manifest serializes");
        formats::write_text(&path, &text).map_err(writing)
    }
}

pub fn run(cli: &Cli) -> Result<(), CliError> {
    let session = Session::from_cli(cli)?;
    let cfg = &session.cfg;
    let layout = &session.layout;
    match &cli.command {
        Command::GenScenario => {
            let scenario = generate_scenario(&cfg.scenario).map_err(|e| CliError::Config(e.to_string()))?;
            formats::write_scenario(&layout.scenario(), &scenario).map_err(writing)?;
            let mut m = Manifest::new("gen-scenario", cfg, Some(&scenario));
            m.output(&layout.scenario());
            println!(
                "scenario: {} sites, {} grid points, {} buildings",
                scenario.n_sites(),
                scenario.grid.len(),
                scenario.buildings.len()
            );
            session.finish(&m)
        }
        Command::BuildRadiomap { csv } => {
            let scenario = formats::read_scenario(&layout.scenario()).map_err(reading)?;
            let map = build_radio_map(&scenario, &cfg.pathloss).map_err(|e| CliError::Input(e.to_string()))?;
            formats::write_radiomap(&layout.radiomap(), &map).map_err(writing)?;
            let mut m = Manifest::new("build-radiomap", cfg, Some(&scenario));
            m.output(&layout.radiomap());
            if *csv {
                formats::write_radiomap_csv(&layout.radiomap_csv(), &map).map_err(writing)?;
                m.output(&layout.radiomap_csv());
            }
            println!("radio map: {} x {}", map.n_points(), map.n_sites());
            session.finish(&m)
        }
        Command::TrainGrl { .. } => {
            let (scenario, map) = session.load_world()?;
            let ctx = context(cfg, &scenario, &map);
            let runner = RayonRunner::new(cfg.run.workers);
            let every = cfg.run.checkpoint_every;
            let mut write_err = None;
            let mut observer = |row: &hudn_core::trainer::LogRow, params: &hudn_core::model::ModelParams| {
                if every > 0 && (row.step + 1) % every == 0 && write_err.is_none() {
                    write_err = formats::write_checkpoint(&layout.grl_step_checkpoint(row.step + 1), params).err();
                }
            };
            let result = grl_train(&ctx, &cfg.train, &runner, &mut observer);
            if let Some(e) = write_err {
                return Err(writing(e));
            }
            let result = match result {
                Err(TrainError::NonFinite { step, source, last_good }) => {
                    let diag = layout.root.join("diagnostic.ckpt");
                    formats::write_checkpoint(&diag, &last_good).map_err(writing)?;
                    return Err(CliError::Numeric(format!(
                        "step {step}: {source}; last good parameters in {}",
                        diag.display()
                    )));
                }
                other => other?,
            };
            formats::write_checkpoint(&layout.grl_checkpoint(), &result.params).map_err(writing)?;
            formats::write_training_log(&layout.grl_log(), &result.log).map_err(writing)?;
            let mut m = Manifest::new("train-grl", cfg, Some(&scenario));
            m.output(&layout.grl_checkpoint());
            m.output(&layout.grl_log());
            let last = result.log.last();
            println!(
                "grl: {} steps, {} updates, final r_n {:.4} bit/s/Hz, lr {:.3e}",
                result.log.len(),
                result.log.iter().filter(|r| r.updated).count(),
                last.map_or(0.0, |r| r.r_n),
                result.final_lr
            );
            session.finish(&m)
        }
        Command::TrainSrl { event, checkpoint } => {
            let (scenario, map) = session.load_world()?;
            let ctx = context(cfg, &scenario, &map);
            let start = load_checkpoint(checkpoint.as_deref(), layout)?;
            let data = heldout_event(&ctx, cfg, *event)?;
            let res = srl_train(&data, &start, &cfg.train)?;
            formats::write_checkpoint(&layout.srl_checkpoint(*event), &res.params).map_err(writing)?;
            formats::write_training_log(&layout.srl_log(*event), &res.log).map_err(writing)?;
            let mut m = Manifest::new(&format!("train-srl-event{event}"), cfg, Some(&scenario));
            m.output(&layout.srl_checkpoint(*event));
            m.output(&layout.srl_log(*event));
            println!(
                "srl event {event}: {} steps, rate {:.4} -> {:.4} bit/s/Hz{}",
                res.steps,
                res.initial_rate,
                res.best_rate,
                if res.converged { "" } else { " (step cap)" }
            );
            session.finish(&m)
        }
        Command::Baseline { name } => {
            let which = Baseline::parse(name).ok_or_else(|| CliError::Config(format!("unknown baseline {name}")))?;
            let (scenario, map) = session.load_world()?;
            let ctx = context(cfg, &scenario, &map);
            let events = heldout_events(&ctx, cfg, cfg.run.eval_events)?;
            let recs = run_baseline_timed(which, &events, &ctx)?;
            write_report(&session, &scenario, which.name(), &recs)
        }
        Command::Eval { checkpoint } => {
            let (scenario, map) = session.load_world()?;
            let ctx = context(cfg, &scenario, &map);
            let params = load_checkpoint(checkpoint.as_deref(), layout)?;
            let events = heldout_events(&ctx, cfg, cfg.run.eval_events)?;
            let recs = run_model_timed(&params, &events, cfg.train.temperature)?;
            write_report(&session, &scenario, "grl", &recs)
        }
        Command::Oracle => {
            let (scenario, map) = session.load_world()?;
            let ctx = context(cfg, &scenario, &map);
            let events = heldout_events(&ctx, cfg, cfg.run.eval_events)?;
            let recs = run_oracle_timed(&events, &ctx)?;
            write_report(&session, &scenario, "oracle", &recs)
        }
        Command::Report { algorithms, checkpoint } => {
            let (scenario, map) = session.load_world()?;
            let ctx = context(cfg, &scenario, &map);
            let events = heldout_events(&ctx, cfg, cfg.run.eval_events)?;
            let mut all = Vec::new();
            for name in algorithms {
                let recs = match name.as_str() {
                    "grl" => run_model_timed(&load_checkpoint(checkpoint.as_deref(), layout)?, &events, cfg.train.temperature)?,
                    "srl" => run_srl_timed(&load_checkpoint(checkpoint.as_deref(), layout)?, &events, cfg)?.0,
                    "oracle" => run_oracle_timed(&events, &ctx)?,
                    other => {
                        let which = Baseline::parse(other)
                            .ok_or_else(|| CliError::Config(format!("unknown algorithm {other}")))?;
                        run_baseline_timed(which, &events, &ctx)?
                    }
                };
                formats::write_rate_reports(&layout.report(name), &recs).map_err(writing)?;
                all.push((name.clone(), recs));
            }
            let rows: Vec<_> = all.iter().map(|(n, r)| summarize(n, r)).collect();
            formats::write_summary(&layout.summary(), &rows).map_err(writing)?;
            formats::write_cdf(&layout.cdf(), &all).map_err(writing)?;
            let mut m = Manifest::new("report", cfg, Some(&scenario));
            for (n, _) in &all {
                m.output(&layout.report(n));
            }
            m.output(&layout.summary());
            m.output(&layout.cdf());
            println!("{:<12} {:>14} {:>12}", "algorithm", "R/B (bit/s/Hz)", "time (s)");
            for r in &rows {
                println!("{:<12} {:>14.4} {:>12.6}", r.algorithm, r.mean_rate_bps_per_hz, r.mean_wall_clock_s);
            }
            session.finish(&m)
        }
    }
}

fn load_checkpoint(path: Option<&Path>, layout: &Layout) -> Result<hudn_core::model::ModelParams, CliError> {
    let path = path.map(Path::to_path_buf).unwrap_or_else(|| layout.grl_checkpoint());
    formats::read_checkpoint(&path).map_err(reading)
}

fn write_report(session: &Session, scenario: &Scenario, name: &str, recs: &[EventRecord]) -> Result<(), CliError> {
    let path = session.layout.report(name);
    formats::write_rate_reports(&path, recs).map_err(writing)?;
    let mut m = Manifest::new(name, &session.cfg, Some(scenario));
    m.output(&path);
    let s = summarize(name, recs);
    println!(
        "{name}: {} events, mean R/B {:.4} bit/s/Hz, mean time {:.6} s",
        recs.len(),
        s.mean_rate_bps_per_hz,
        s.mean_wall_clock_s
    );
    session.finish(&m)
}

/// Parses arguments, runs, and maps errors to exit codes.
pub fn main_with<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("hudn: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
