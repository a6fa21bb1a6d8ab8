//! Generalization (GRL) and specialization (SRL) training loops.
//!
//! GRL trains one model over freshly sampled activation events. After each
//! batch it pushes every event's hard rate into a memory, averages the last
//! `window` entries and applies the optimizer step only when that average
//! beats the best seen so far; otherwise the learning rate decays and the
//! step is skipped.
//!
//! SRL fine-tunes a copy of the GRL parameters on one fixed event with the
//! entropy-regularized loss and returns the best-rate snapshot.
//!
//! Per-event work is a pure function ([`event_step`]), so callers may run a
//! batch on several threads through [`BatchRunner`]; results are always
//! summed in batch order.

use alloc::boxed::Box;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::baselines::{gen_labels, BaselineConfig, BaselineError};
use crate::grad::{Adam, GradError, Tape};
use crate::hetgraph::{build_graph, FeatureNorm, GraphConfig, GraphError, HeteroGraph};
use crate::linalg::Matrix;
use crate::model::{
    accumulate, forward, forward_on_tape, init_params, zero_grads, FeatureDims, ModelConfig, ModelError,
    ModelOutput, ModelParams, ParamVars,
};
use crate::objective::{
    rate_report, training_loss, ChannelParams, FrozenAssociation, Instance, LossWeights, ObjectiveError,
    RateReport,
};
use crate::radiomap::RadioMap;
use crate::rng::derive_indexed;
use crate::scenario::{sample_event_from, Event, ScenarioError};

/// When a GRL step applies its optimizer update.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpdateRule {
    /// Update only when the windowed rate beats the best so far; otherwise
    /// decay the learning rate and skip the update.
    RateGated,
    /// Update every step; the learning rate never decays.
    Always,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    /// GRL optimizer steps.
    pub steps: usize,
    pub batch: usize,
    pub lr: f64,
    /// Learning-rate decay applied on every skipped GRL step.
    pub decay: f64,
    pub update_rule: UpdateRule,
    /// Rate-memory window `l`.
    pub window: usize,
    pub temperature: f64,
    pub grl_weights: LossWeights,
    pub srl_weights: LossWeights,
    pub srl_lr: f64,
    /// SRL stops when the windowed rate moves by less than this fraction
    /// of the previous window average.
    pub convergence_rel: f64,
    pub srl_step_cap: usize,
    /// Active UEs per sampled event.
    pub k_a: usize,
    pub seed: u64,
    pub model: ModelConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 10_000,
            batch: 64,
            lr: 1e-4,
            decay: 0.99,
            update_rule: UpdateRule::RateGated,
            window: 100,
            temperature: 0.1,
            grl_weights: LossWeights::grl(),
            srl_weights: LossWeights::srl(),
            srl_lr: 1e-4,
            convergence_rel: 1e-3,
            srl_step_cap: 5000,
            k_a: 120,
            seed: 0,
            model: ModelConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &'static str| Err(TrainError::InvalidConfig(m));
        if self.batch == 0 || self.window == 0 || self.k_a == 0 {
            return bad("batch, window and k_a must be positive");
        }
        if !(self.decay > 0.0 && self.decay <= 1.0) {
            return bad("decay must lie in (0, 1]");
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) || !(self.srl_lr >= 0.0 && self.srl_lr.is_finite()) {
            return bad("learning rates must be finite and non-negative");
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return bad("temperature must be positive");
        }
        if !(self.convergence_rel > 0.0) {
            return bad("convergence bound must be positive");
        }
        if self.srl_step_cap == 0 {
            return bad("srl_step_cap must be positive");
        }
        self.grl_weights.validate()?;
        self.srl_weights.validate()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    InvalidConfig(&'static str),
    #[error("non-finite value at step {step}: {source}")]
    NonFinite {
        step: usize,
        source: GradError,
        /// Parameters before the failing step.
        last_good: Box<ModelParams>,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Objective(#[from] ObjectiveError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Baseline(#[from] BaselineError),
    #[error(transparent)]
    Grad(#[from] GradError),
}

/// Append-only record of hard rates with a trailing-window mean.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RateMemory {
    values: Vec<f64>,
    window: usize,
}

impl RateMemory {
    pub fn new(window: usize) -> Self {
        Self {
            values: Vec::new(),
            window: window.max(1),
        }
    }

    pub fn push(&mut self, r: f64) {
        self.values.push(r);
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn window_full(&self) -> bool {
        self.values.len() >= self.window
    }

    /// Mean of the last `window` values (all of them while fewer exist).
    pub fn recent_mean(&self) -> f64 {
        let n = self.values.len().min(self.window);
        if n == 0 {
            return 0.0;
        }
        self.values[self.values.len() - n..].iter().sum::<f64>() / n as f64
    }
}

/// Everything needed to turn grid indices into training instances.
#[derive(Clone, Debug)]
pub struct TrainContext<'a> {
    pub map: &'a RadioMap,
    pub p_max: Vec<f64>,
    pub norm: FeatureNorm,
    pub graph: GraphConfig,
    pub channel: ChannelParams,
    pub baseline: BaselineConfig,
}

impl<'a> TrainContext<'a> {
    pub fn new(map: &'a RadioMap, p_max: Vec<f64>) -> Self {
        Self {
            norm: FeatureNorm::fit(map),
            map,
            p_max,
            graph: GraphConfig::default(),
            channel: ChannelParams::default(),
            baseline: BaselineConfig::default(),
        }
    }

    /// Graph, instance and MSUAMP labels of one event.
    pub fn event_data(&self, event: &Event) -> Result<EventData, TrainError> {
        let graph = build_graph(self.map, event, &self.p_max, &self.norm, &self.graph)?;
        let inst = Instance::from_graph(&graph, self.channel);
        let labels = gen_labels(&inst, &self.baseline)?;
        Ok(EventData {
            event: event.clone(),
            graph,
            inst,
            labels,
        })
    }

    /// Event number `index` of the stream tagged `tag` under `seed`.
    pub fn sample(&self, k_a: usize, seed: u64, tag: &str, index: u64) -> Result<EventData, TrainError> {
        let event = sample_event_from(self.map.n_points(), k_a, derive_indexed(seed, tag, index))?;
        self.event_data(&event)
    }
}

/// Event stream tags; training and held-out events never share a seed.
pub const TRAIN_STREAM: &str = "grl-event";
pub const HELDOUT_STREAM: &str = "heldout-event";

#[derive(Clone, Debug, PartialEq)]
pub struct EventData {
    pub event: Event,
    pub graph: HeteroGraph,
    pub inst: Instance,
    /// One-hot MSUAMP association, `K x J`.
    pub labels: Matrix,
}

/// Outcome of one event's forward/backward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct EventStep {
    /// Gradients in [`ModelParams::tensors_mut`] order.
    pub grads: Vec<Matrix>,
    pub loss: f64,
    pub supervised: f64,
    /// Hard sum rate of the current outputs, bit/s/Hz.
    pub rate: f64,
}

/// Forward, loss and backward for one event under `weights`.
pub fn event_step(
    params: &ModelParams,
    data: &EventData,
    weights: &LossWeights,
    temperature: f64,
) -> Result<EventStep, TrainError> {
    let mut tape = Tape::new();
    let pv = ParamVars::record(&mut tape, params);
    let fv = forward_on_tape(&mut tape, &data.graph, &pv, params.dims, temperature)?;
    let x = tape.value(fv.x_soft).clone();
    let p = tape.value(fv.p).as_slice().to_vec();
    let frozen = FrozenAssociation::new(&x, &p, &data.inst);
    let z = (weights.w_e > 0.0).then_some((fv.z_norm, &data.graph.adjacency));
    let lv = training_loss(&mut tape, fv.x_soft, fv.p, z, &data.labels, &data.inst, &frozen, weights)?;
    let grads = tape.backward(lv.total)?;
    let rate = rate_report(&frozen.serving, &p, &data.inst)?.spectral_efficiency();
    Ok(EventStep {
        grads: pv.gradients(&tape, &grads),
        loss: tape.scalar(lv.total),
        supervised: tape.scalar(lv.supervised),
        rate,
    })
}

/// Training loss and its parameter gradients with the association held at
/// `frozen`. Returns `(total, supervised, grads)`.
pub fn loss_with_frozen(
    params: &ModelParams,
    data: &EventData,
    weights: &LossWeights,
    temperature: f64,
    frozen: &FrozenAssociation,
) -> Result<(f64, f64, Vec<Matrix>), TrainError> {
    let mut tape = Tape::new();
    let pv = ParamVars::record(&mut tape, params);
    let fv = forward_on_tape(&mut tape, &data.graph, &pv, params.dims, temperature)?;
    let z = (weights.w_e > 0.0).then_some((fv.z_norm, &data.graph.adjacency));
    let lv = training_loss(&mut tape, fv.x_soft, fv.p, z, &data.labels, &data.inst, frozen, weights)?;
    let grads = tape.backward(lv.total)?;
    Ok((tape.scalar(lv.total), tape.scalar(lv.supervised), pv.gradients(&tape, &grads)))
}

/// Runs [`event_step`] over a batch. Implementations must return results in
/// batch order.
pub trait BatchRunner {
    fn run(
        &self,
        params: &ModelParams,
        batch: &[EventData],
        weights: &LossWeights,
        temperature: f64,
    ) -> Vec<Result<EventStep, TrainError>>;
}

/// Runs the batch on the calling thread.
#[derive(Clone, Copy, Debug, Default)]
pub struct Sequential;

impl BatchRunner for Sequential {
    fn run(
        &self,
        params: &ModelParams,
        batch: &[EventData],
        weights: &LossWeights,
        temperature: f64,
    ) -> Vec<Result<EventStep, TrainError>> {
        batch
            .iter()
            .map(|d| event_step(params, d, weights, temperature))
            .collect()
    }
}

/// One row of a training log.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub step: usize,
    /// Windowed mean hard rate after this step's samples, bit/s/Hz.
    pub r_n: f64,
    /// Best windowed mean so far (GRL) or previous window mean (SRL).
    pub r_b: f64,
    /// Learning rate in force during this step.
    pub lr: f64,
    /// Mean supervised loss over the batch.
    pub l_s: f64,
    /// Mean total loss over the batch.
    pub l_total: f64,
    pub updated: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GrlResult {
    pub params: ModelParams,
    pub log: Vec<LogRow>,
    pub final_lr: f64,
}

/// GRL from freshly initialized parameters.
pub fn grl_train<R: BatchRunner + ?Sized>(
    ctx: &TrainContext<'_>,
    cfg: &TrainConfig,
    runner: &R,
    observer: &mut dyn FnMut(&LogRow, &ModelParams),
) -> Result<GrlResult, TrainError> {
    cfg.validate()?;
    let dims = FeatureDims {
        n_bs: ctx.map.n_sites(),
        k_a: cfg.k_a,
    };
    let params = init_params(dims, cfg.model, derive_indexed(cfg.seed, "init", 0))?;
    grl_train_from(ctx, cfg, params, runner, observer)
}

/// GRL continuing from `params`.
pub fn grl_train_from<R: BatchRunner + ?Sized>(
    ctx: &TrainContext<'_>,
    cfg: &TrainConfig,
    mut params: ModelParams,
    runner: &R,
    observer: &mut dyn FnMut(&LogRow, &ModelParams),
) -> Result<GrlResult, TrainError> {
    cfg.validate()?;
    let mut adam = Adam::default();
    let mut memory = RateMemory::new(cfg.window);
    let mut r_b = 0.0;
    let mut lr = cfg.lr;
    let mut log = Vec::with_capacity(cfg.steps);
    let n = cfg.batch as f64;
    for step in 0..cfg.steps {
        let batch = (0..cfg.batch)
            .map(|b| ctx.sample(cfg.k_a, cfg.seed, TRAIN_STREAM, (step * cfg.batch + b) as u64))
            .collect::<Result<Vec<_>, _>>()?;
        let results = runner.run(&params, &batch, &cfg.grl_weights, cfg.temperature);
        let mut grads = zero_grads(&params);
        let (mut l_s, mut l_total) = (0.0, 0.0);
        for res in results {
            let es = res.map_err(|e| non_finite(e, step, &params))?;
            accumulate(&mut grads, &es.grads);
            memory.push(es.rate);
            l_s += es.supervised;
            l_total += es.loss;
        }
        let r_n = memory.recent_mean();
        let improved = r_n > r_b;
        let updated = improved || cfg.update_rule == UpdateRule::Always;
        let row = LogRow {
            step,
            r_n,
            r_b,
            lr,
            l_s: l_s / n,
            l_total: l_total / n,
            updated,
        };
        if updated {
            for g in grads.iter_mut() {
                g.scale_assign(1.0 / n);
            }
            adam.step(&mut params.tensors_mut(), &grads, lr)
                .map_err(|e| non_finite(TrainError::Grad(e), step, &params))?;
        } else {
            lr *= cfg.decay;
        }
        if improved {
            r_b = r_n;
        }
        observer(&row, &params);
        log.push(row);
    }
    Ok(GrlResult {
        params,
        log,
        final_lr: lr,
    })
}

fn non_finite(e: TrainError, step: usize, params: &ModelParams) -> TrainError {
    match e {
        TrainError::Grad(source) | TrainError::Model(ModelError::Grad(source)) => TrainError::NonFinite {
            step,
            source,
            last_good: Box::new(params.clone()),
        },
        TrainError::Objective(ObjectiveError::Grad(source)) => TrainError::NonFinite {
            step,
            source,
            last_good: Box::new(params.clone()),
        },
        other => other,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SrlResult {
    /// Best-rate snapshot (possibly the starting parameters).
    pub params: ModelParams,
    pub log: Vec<LogRow>,
    /// Hard rate of the starting parameters, bit/s/Hz.
    pub initial_rate: f64,
    /// Hard rate of the returned parameters, bit/s/Hz.
    pub best_rate: f64,
    pub steps: usize,
    pub converged: bool,
}

/// Fine-tunes `start` on one event.
pub fn srl_train(data: &EventData, start: &ModelParams, cfg: &TrainConfig) -> Result<SrlResult, TrainError> {
    cfg.validate()?;
    let mut params = start.clone();
    let mut adam = Adam::default();
    let mut memory = RateMemory::new(cfg.window);
    let mut log = Vec::new();
    let mut best = (f64::NEG_INFINITY, params.clone());
    let mut initial_rate = None;
    let mut prev_mean: Option<f64> = None;
    let mut converged = false;
    let mut steps = 0;
    for step in 0..cfg.srl_step_cap {
        let es = event_step(&params, data, &cfg.srl_weights, cfg.temperature)
            .map_err(|e| non_finite(e, step, &params))?;
        initial_rate.get_or_insert(es.rate);
        if es.rate > best.0 {
            best = (es.rate, params.clone());
        }
        memory.push(es.rate);
        let r_n = memory.recent_mean();
        let r_b = prev_mean.unwrap_or(0.0);
        steps = step + 1;
        let done = memory.window_full()
            && prev_mean.is_some()
            && (r_n - r_b).abs() < cfg.convergence_rel * r_b.abs();
        let row = LogRow {
            step,
            r_n,
            r_b,
            lr: cfg.srl_lr,
            l_s: es.supervised,
            l_total: es.loss,
            updated: !done,
        };
        log.push(row);
        if done {
            converged = true;
            break;
        }
        adam.step(&mut params.tensors_mut(), &es.grads, cfg.srl_lr)
            .map_err(|e| non_finite(TrainError::Grad(e), step, &params))?;
        prev_mean = Some(r_n);
    }
    if !converged {
        // The last update has not been scored yet.
        let rate = hard_rate(&params, data, cfg.temperature)?;
        if rate > best.0 {
            best = (rate, params);
        }
    }
    Ok(SrlResult {
        params: best.1,
        log,
        initial_rate: initial_rate.unwrap_or(best.0),
        best_rate: best.0,
        steps,
        converged,
    })
}

/// Fraction of UE rows whose hardened association matches the one-hot label.
pub fn label_agreement(serving: &[usize], labels: &Matrix) -> f64 {
    if serving.is_empty() {
        return 1.0;
    }
    let hits = serving
        .iter()
        .enumerate()
        .filter(|&(i, &j)| labels[(i, j)] > 0.5)
        .count();
    hits as f64 / serving.len() as f64
}

#[derive(Clone, Debug, PartialEq)]
pub struct SupervisedFit {
    pub params: ModelParams,
    pub steps: usize,
    /// Label agreement of the returned parameters.
    pub agreement: f64,
}

/// Fits `start` to one event's labels under `weights`, stopping as soon as
/// the hardened association agrees with the labels on at least `target` of
/// the rows or after `max_steps` updates.
pub fn supervised_fit(
    data: &EventData,
    start: &ModelParams,
    weights: &LossWeights,
    lr: f64,
    temperature: f64,
    max_steps: usize,
    target: f64,
) -> Result<SupervisedFit, TrainError> {
    let mut params = start.clone();
    let mut adam = Adam::default();
    let mut steps = 0;
    loop {
        let out = forward(&data.graph, &params, temperature)?;
        let agreement = label_agreement(&out.hard_allocation().serving(), &data.labels);
        if agreement >= target || steps == max_steps {
            return Ok(SupervisedFit {
                params,
                steps,
                agreement,
            });
        }
        let es = event_step(&params, data, weights, temperature).map_err(|e| non_finite(e, steps, &params))?;
        adam.step(&mut params.tensors_mut(), &es.grads, lr)
            .map_err(|e| non_finite(TrainError::Grad(e), steps, &params))?;
        steps += 1;
    }
}

/// Hard sum rate in bit/s/Hz of the model's hardened outputs on one event.
pub fn hard_rate(params: &ModelParams, data: &EventData, temperature: f64) -> Result<f64, TrainError> {
    Ok(evaluate_one(params, data, temperature)?.1.spectral_efficiency())
}

/// Forward, harden and report one event.
pub fn evaluate_one(
    params: &ModelParams,
    data: &EventData,
    temperature: f64,
) -> Result<(ModelOutput, RateReport), TrainError> {
    let out = forward(&data.graph, params, temperature)?;
    let alloc = out.hard_allocation();
    alloc.check_feasible(&data.inst.p_max)?;
    let report = rate_report(&alloc.serving(), &alloc.p, &data.inst)?;
    Ok((out, report))
}

/// Pure inference over a list of events.
pub fn evaluate(params: &ModelParams, events: &[EventData], temperature: f64) -> Result<Vec<RateReport>, TrainError> {
    events
        .iter()
        .map(|d| evaluate_one(params, d, temperature).map(|(_, r)| r))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::radiomap::{build_radio_map, PathLossParams};
    use crate::scenario::{generate_scenario, ScenarioConfig};

    fn tiny_map() -> (RadioMap, Vec<f64>) {
        let cfg = ScenarioConfig {
            side_length: 60.0,
            grid_resolution: 10.0,
            n_macro: 1,
            n_small: 2,
            n_buildings: 1,
            building_width: 10.0,
            building_length: 10.0,
            seed: 7,
            ..ScenarioConfig::default()
        };
        let s = generate_scenario(&cfg).unwrap();
        (build_radio_map(&s, &PathLossParams::default()).unwrap(), s.p_max())
    }

    fn tiny_cfg() -> TrainConfig {
        TrainConfig {
            steps: 4,
            batch: 2,
            window: 3,
            k_a: 4,
            lr: 1e-3,
            srl_lr: 1e-3,
            srl_step_cap: 20,
            model: ModelConfig {
                hidden: 8,
                head_hidden: 4,
            },
            ..TrainConfig::default()
        }
    }

    #[test]
    fn window_mean() {
        let mut m = RateMemory::new(3);
        assert_eq!(m.recent_mean(), 0.0);
        m.push(1.0);
        m.push(2.0);
        assert_eq!(m.recent_mean(), 1.5);
        m.push(3.0);
        m.push(4.0);
        assert_eq!(m.recent_mean(), 3.0);
        assert!(m.window_full());
    }

    #[test]
    fn zero_lr_keeps_params() {
        let (map, p_max) = tiny_map();
        let ctx = TrainContext::new(&map, p_max);
        let cfg = TrainConfig { lr: 0.0, ..tiny_cfg() };
        let dims = FeatureDims {
            n_bs: map.n_sites(),
            k_a: cfg.k_a,
        };
        let init = init_params(dims, cfg.model, derive_indexed(cfg.seed, "init", 0)).unwrap();
        let out = grl_train(&ctx, &cfg, &Sequential, &mut |_, _| {}).unwrap();
        assert_eq!(out.params, init);
        assert_eq!(out.log.len(), cfg.steps);
    }

    #[test]
    fn lr_nonincreasing_and_best_nondecreasing() {
        let (map, p_max) = tiny_map();
        let ctx = TrainContext::new(&map, p_max);
        let cfg = TrainConfig { steps: 12, ..tiny_cfg() };
        let out = grl_train(&ctx, &cfg, &Sequential, &mut |_, _| {}).unwrap();
        for w in out.log.windows(2) {
            assert!(w[1].lr <= w[0].lr);
            assert!(w[1].r_b >= w[0].r_b);
        }
        assert!(out.log[0].updated);
    }

    #[test]
    fn grl_is_deterministic() {
        let (map, p_max) = tiny_map();
        let ctx = TrainContext::new(&map, p_max);
        let a = grl_train(&ctx, &tiny_cfg(), &Sequential, &mut |_, _| {}).unwrap();
        let b = grl_train(&ctx, &tiny_cfg(), &Sequential, &mut |_, _| {}).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn srl_never_degrades_and_stops_on_loose_bound() {
        let (map, p_max) = tiny_map();
        let ctx = TrainContext::new(&map, p_max);
        let cfg = tiny_cfg();
        let grl = grl_train(&ctx, &cfg, &Sequential, &mut |_, _| {}).unwrap();
        let ev = ctx.sample(cfg.k_a, 1, HELDOUT_STREAM, 0).unwrap();
        let before = hard_rate(&grl.params, &ev, cfg.temperature).unwrap();
        let srl = srl_train(&ev, &grl.params, &cfg).unwrap();
        assert!(srl.best_rate >= before);
        assert_eq!(srl.initial_rate, before);
        assert_eq!(hard_rate(&srl.params, &ev, cfg.temperature).unwrap(), srl.best_rate);

        let loose = TrainConfig {
            convergence_rel: f64::INFINITY,
            ..cfg
        };
        let srl = srl_train(&ev, &grl.params, &loose).unwrap();
        assert!(srl.converged);
        assert_eq!(srl.steps, cfg.window);

        let frozen = TrainConfig { srl_lr: 0.0, ..cfg };
        let srl = srl_train(&ev, &grl.params, &frozen).unwrap();
        assert_eq!(srl.params, grl.params);
        assert_eq!(srl.best_rate, before);
    }

    #[test]
    fn evaluation_is_repeatable_and_feasible() {
        let (map, p_max) = tiny_map();
        let ctx = TrainContext::new(&map, p_max);
        let cfg = tiny_cfg();
        let dims = FeatureDims {
            n_bs: map.n_sites(),
            k_a: cfg.k_a,
        };
        let params = init_params(dims, cfg.model, 3).unwrap();
        let events: Vec<EventData> = (0..3).map(|i| ctx.sample(cfg.k_a, 0, HELDOUT_STREAM, i).unwrap()).collect();
        let a = evaluate(&params, &events, cfg.temperature).unwrap();
        let b = evaluate(&params, &events, cfg.temperature).unwrap();
        assert_eq!(a, b);
        for r in &a {
            assert_eq!(r.loads.iter().sum::<usize>(), cfg.k_a);
        }
    }

    #[test]
    fn invalid_configs() {
        for cfg in [
            TrainConfig { batch: 0, ..tiny_cfg() },
            TrainConfig { decay: 0.0, ..tiny_cfg() },
            TrainConfig { decay: 1.5, ..tiny_cfg() },
            TrainConfig { window: 0, ..tiny_cfg() },
            TrainConfig { convergence_rel: 0.0, ..tiny_cfg() },
            TrainConfig { lr: -1.0, ..tiny_cfg() },
        ] {
            assert!(cfg.validate().is_err());
        }
    }
}
