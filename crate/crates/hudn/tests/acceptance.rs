//! Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any
//! criterion fails.
//!
//! Fixtures:
//! * D1: 200 m cell, 2 macro + 20 small sites, 10 m grid, 10 buildings,
//!   30 active UEs, scenario seed 0, 50 held-out events.
//! * D0: 3 sites (1 macro + 2 small), 4 UEs, 5 power levels, seeds 0..9.

use std::time::Instant;

use hudn::config::ExperimentConfig;
use hudn::experiment::{
    build_world, context, heldout_events, run_baseline_timed, run_model_timed, run_srl_timed, RayonRunner,
};
use hudn::formats::{self, summarize, EventRecord};
use hudn_core::baselines::{brute_force_oracle, run_baseline, Baseline};
use hudn_core::grad::Tape;
use hudn_core::linalg::Matrix;
use hudn_core::model::{forward, init_params, FeatureDims, ModelConfig, ModelParams};
use hudn_core::objective::{sum_rate, FrozenAssociation, LossWeights};
use hudn_core::trainer::{
    grl_train, loss_with_frozen, srl_train, supervised_fit, EventData, GrlResult, TrainConfig, UpdateRule,
};

// Pinned tolerances.
const FD_STEP: f64 = 1e-6;
const FD_TOL: f64 = 1e-5;
const JACOBIAN_TOL: f64 = 1e-6;
const D0_RATIO: f64 = 0.8;
const D0_MIN_SEEDS: usize = 8;
const D0_BUDGET_S: f64 = 600.0;
const GRL_BUDGET_S: f64 = 1800.0;
const SRL_BUDGET_S: f64 = 120.0;
const INFERENCE_RATIO: f64 = 0.1;
const EQUIVARIANCE_TOL: f64 = 1e-9;
const LABEL_MATCH: f64 = 0.95;
const LABEL_STEPS: usize = 2000;
const HELDOUT: usize = 50;

fn d1_config() -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.scenario.side_length = 200.0;
    cfg.scenario.n_macro = 2;
    cfg.scenario.n_small = 20;
    cfg.scenario.grid_resolution = 10.0;
    cfg.scenario.n_buildings = 10;
    cfg.scenario.seed = 0;
    cfg.run.eval_events = HELDOUT;
    cfg.train = TrainConfig {
        steps: 300,
        batch: 16,
        lr: 1e-3,
        update_rule: UpdateRule::Always,
        window: 20,
        srl_lr: 1e-2,
        k_a: 30,
        seed: 0,
        ..TrainConfig::default()
    };
    cfg
}

fn d0_config(seed: u64) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.scenario.side_length = 100.0;
    cfg.scenario.n_macro = 1;
    cfg.scenario.n_small = 2;
    cfg.scenario.grid_resolution = 10.0;
    cfg.scenario.n_buildings = 2;
    cfg.scenario.seed = seed;
    cfg.baseline.power_grid_levels = 5;
    cfg.train = TrainConfig {
        window: 20,
        srl_lr: 1e-2,
        k_a: 4,
        seed,
        ..TrainConfig::default()
    };
    cfg
}

struct Report {
    failed: usize,
}

impl Report {
    fn line(&mut self, n: usize, what: &str, pass: bool, detail: String) {
        if !pass {
            self.failed += 1;
        }
        println!("criterion {n} [{what}]: {} ({detail})", if pass { "PASS" } else { "FAIL" });
    }
}

fn mean_rate(recs: &[EventRecord]) -> f64 {
    summarize("", recs).mean_rate_bps_per_hz
}

fn mean_time(recs: &[EventRecord]) -> f64 {
    summarize("", recs).mean_wall_clock_s
}

/// Exact C1/C2 on a hard allocation, written out independently.
fn hard_feasible(rec: &EventRecord, n_bs: usize, p_max: &[f64]) -> bool {
    rec.serving.iter().all(|&s| s < n_bs)
        && rec.p.len() == n_bs
        && rec.p.iter().zip(p_max).all(|(&p, &m)| (0.0..=m).contains(&p))
}

fn permutation(n: usize, seed: u64) -> Vec<usize> {
    let mut v: Vec<usize> = (0..n).collect();
    let mut s = seed.wrapping_mul(2654435761) | 1;
    for i in (1..n).rev() {
        s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        v.swap(i, (s >> 33) as usize % (i + 1));
    }
    v
}

/// `||a - n|| / max(||a||, ||n||)` over a strided sample of coordinates.
fn fd_error(params: &ModelParams, data: &EventData, w: &LossWeights, t: f64, stride: usize) -> f64 {
    let out = forward(&data.graph, params, t).unwrap();
    let frozen = FrozenAssociation::new(&out.x_soft, &out.p, &data.inst);
    let (_, _, grads) = loss_with_frozen(params, data, w, t, &frozen).unwrap();
    let b = data.inst.channel.bandwidth;
    // The association path is recorded as x.gamma - sg(x.gamma), which is
    // zero-valued; add its live value back for the difference quotient.
    let loss_at = |p: &ModelParams| {
        let x = forward(&data.graph, p, t).unwrap().x_soft;
        let assoc: f64 = x.as_slice().iter().zip(frozen.gamma.as_slice()).map(|(a, g)| a * g).sum();
        loss_with_frozen(p, data, w, t, &frozen).unwrap().0 - w.w_r / b * assoc
    };
    let (mut num, mut den_a, mut den_n) = (0.0, 0.0, 0.0);
    let mut flat = 0usize;
    for (k, g) in grads.iter().enumerate() {
        for e in 0..g.len() {
            flat += 1;
            if flat % stride != 0 && g.len() > 1 {
                continue;
            }
            let mut plus = params.clone();
            plus.tensors_mut()[k].as_mut_slice()[e] += FD_STEP;
            let mut minus = params.clone();
            minus.tensors_mut()[k].as_mut_slice()[e] -= FD_STEP;
            let n = (loss_at(&plus) - loss_at(&minus)) / (2.0 * FD_STEP);
            let a = g.as_slice()[e];
            num += (a - n) * (a - n);
            den_a += a * a;
            den_n += n * n;
        }
    }
    num.sqrt() / den_a.sqrt().max(den_n.sqrt())
}

/// Jacobian of softmax_T at z = [1, 0] by reverse mode through the tape.
fn tape_jacobian(t: f64) -> Matrix {
    let mut jac = Matrix::zeros(2, 2);
    for i in 0..2 {
        let mut tape = Tape::new();
        let z = tape.param(Matrix::row_vector(&[1.0, 0.0]));
        let x = tape.softmax_t(z, t, None).unwrap();
        let mut pick = Matrix::zeros(1, 2);
        pick[(0, i)] = 1.0;
        let pick = tape.constant(pick);
        let xi = tape.mul(x, pick).unwrap();
        let xi = tape.sum(xi).unwrap();
        let g = tape.backward(xi).unwrap();
        let row = g.get_or_zeros(z, (1, 2));
        jac.row_mut(i).copy_from_slice(row.as_slice());
    }
    jac
}

fn grl_run(cfg: &ExperimentConfig, ctx: &hudn_core::trainer::TrainContext<'_>) -> (GrlResult, f64) {
    let runner = RayonRunner::new(cfg.run.workers);
    let t = Instant::now();
    let res = grl_train(ctx, &cfg.train, &runner, &mut |_, _| {}).unwrap();
    (res, t.elapsed().as_secs_f64())
}

fn main() {
    let mut report = Report { failed: 0 };
    let started = Instant::now();

    // ---- D1 world and the shared GRL run ----
    let cfg = d1_config();
    let (scenario, map) = build_world(&cfg).unwrap();
    let ctx = context(&cfg, &scenario, &map);
    let events = heldout_events(&ctx, &cfg, HELDOUT).unwrap();
    let (grl, grl_s) = grl_run(&cfg, &ctx);

    let grl_recs = run_model_timed(&grl.params, &events, cfg.train.temperature).unwrap();
    let (srl_recs, _) = run_srl_timed(&grl.params, &events, &cfg).unwrap();
    let base: Vec<(Baseline, Vec<EventRecord>)> = Baseline::ALL
        .iter()
        .map(|&b| (b, run_baseline_timed(b, &events, &ctx).unwrap()))
        .collect();
    let by = |b: Baseline| &base.iter().find(|(x, _)| *x == b).unwrap().1;

    // 1. Feasibility.
    {
        let t0 = Instant::now();
        let n_bs = scenario.n_sites();
        let mut all = vec![("grl", &grl_recs), ("srl", &srl_recs)];
        all.extend(base.iter().map(|(b, r)| (b.name(), r)));
        let mut bad = Vec::new();
        for (name, recs) in &all {
            for (rec, ev) in recs.iter().zip(&events) {
                if !hard_feasible(rec, n_bs, &ev.inst.p_max) {
                    bad.push(format!("{name}#{}", rec.event));
                }
            }
        }
        let mut soft_dev: f64 = 0.0;
        for ev in &events {
            let out = forward(&ev.graph, &grl.params, cfg.train.temperature).unwrap();
            for row in out.x_soft.iter_rows() {
                soft_dev = soft_dev.max((row.iter().sum::<f64>() - 1.0).abs());
                if row.iter().any(|&x| x < 0.0) {
                    soft_dev = f64::INFINITY;
                }
            }
            let hard = out.hard_allocation();
            for row in hard.x.iter_rows() {
                if row.iter().filter(|&&v| v == 1.0).count() != 1 || row.iter().any(|&v| v != 0.0 && v != 1.0) {
                    bad.push(format!("grl-onehot#{}", ev.graph.ue_ids[0]));
                }
            }
        }
        let secs = t0.elapsed().as_secs_f64();
        report.line(
            1,
            "C1/C2 feasibility",
            bad.is_empty() && soft_dev < 1e-12 && secs < 1.0,
            format!(
                "{} allocations over {} algorithms, violations {:?}, max |sum x - 1| of soft rows {soft_dev:.1e}, \
                 checked in {secs:.3} s",
                all.len() * events.len(),
                all.len(),
                bad
            ),
        );
    }

    // 2. Finite-difference check on D0-sized graphs, at a fresh init and
    //    after fine-tuning.
    {
        let t0 = Instant::now();
        let mut worst: f64 = 0.0;
        let mut parts = Vec::new();
        for seed in 0..2u64 {
            let c0 = d0_config(seed);
            let (s0, m0) = build_world(&c0).unwrap();
            let ctx0 = context(&c0, &s0, &m0);
            let ev = heldout_events(&ctx0, &c0, 1).unwrap().remove(0);
            let fresh = init_params(FeatureDims { n_bs: 3, k_a: 4 }, ModelConfig::default(), seed).unwrap();
            let tuned = srl_train(&ev, &fresh, &c0.train).unwrap().params;
            for (pname, p) in [("init", &fresh), ("tuned", &tuned)] {
                for (wname, w) in [("grl", LossWeights::grl()), ("srl", LossWeights::srl())] {
                    let e = fd_error(p, &ev, &w, c0.train.temperature, 61);
                    worst = worst.max(e);
                    parts.push(format!("{seed}/{pname}/{wname} {e:.1e}"));
                }
            }
        }
        let secs = t0.elapsed().as_secs_f64();
        report.line(
            2,
            "loss gradient vs central differences",
            worst < FD_TOL && secs < 30.0,
            format!(
                "h = {FD_STEP:e}, relative error {}, worst {worst:.2e} < {FD_TOL:e}, {secs:.1} s",
                parts.join(", ")
            ),
        );
    }

    // 3. Softmax Jacobian at gap 1.
    {
        let t0 = Instant::now();
        let temps = [0.5, 0.2, 0.1, 0.05];
        let maxes: Vec<f64> = temps.iter().map(|&t| tape_jacobian(t).max_abs()).collect();
        let closed: Vec<f64> = temps
            .iter()
            .map(|&t| {
                let s = 1.0 / (1.0 + (-1.0 / t).exp());
                s * (1.0 - s) / t
            })
            .collect();
        let agree = maxes.iter().zip(&closed).all(|(m, c)| (m - c).abs() <= 1e-12 * c.max(1e-300) + 1e-300);
        let monotone = maxes.windows(2).all(|w| w[1] < w[0]);
        let last = *maxes.last().unwrap();
        let secs = t0.elapsed().as_secs_f64();
        report.line(
            3,
            "softmax_T Jacobian saturation",
            last < JACOBIAN_TOL && monotone && agree && secs < 1.0,
            format!(
                "max |J| at T = {temps:?}: {:?}; closed form agrees {agree}; T = 0.05 value {last:.3e} < {JACOBIAN_TOL:e}",
                maxes.iter().map(|m| format!("{m:.3e}")).collect::<Vec<_>>()
            ),
        );
    }

    // 4. D0 oracle comparison.
    {
        let t0 = Instant::now();
        let mut hits = 0;
        let mut ratios = Vec::new();
        let mut above = Vec::new();
        for seed in 0..10u64 {
            let c0 = d0_config(seed);
            let (s0, m0) = build_world(&c0).unwrap();
            let ctx0 = context(&c0, &s0, &m0);
            let ev = heldout_events(&ctx0, &c0, 1).unwrap().remove(0);
            let (_, r_star) = brute_force_oracle(&ev.inst, &c0.baseline).unwrap();
            let start = init_params(FeatureDims { n_bs: 3, k_a: 4 }, ModelConfig::default(), seed).unwrap();
            let srl = srl_train(&ev, &start, &c0.train).unwrap();
            let srl_bps = srl.best_rate * ev.inst.channel.bandwidth;
            let ratio = srl_bps / r_star;
            ratios.push(ratio);
            if ratio >= D0_RATIO {
                hits += 1;
            }
            for b in Baseline::ALL {
                let out = run_baseline(b, &ev.inst, &c0.baseline).unwrap();
                let r = sum_rate(&out.alloc, &ev.inst).unwrap();
                if r > r_star * (1.0 + 1e-12) {
                    above.push(format!("{}@{seed}", b.name()));
                }
            }
        }
        let secs = t0.elapsed().as_secs_f64();
        report.line(
            4,
            "D0 oracle comparison",
            hits >= D0_MIN_SEEDS && above.is_empty() && secs < D0_BUDGET_S,
            format!(
                "SRL/R* per seed {:?}; {hits}/10 seeds >= {D0_RATIO}; baselines above R*: {above:?}; {secs:.1} s",
                ratios.iter().map(|r| format!("{r:.3}")).collect::<Vec<_>>()
            ),
        );
    }

    // 5. D1 ordering and training budgets.
    {
        let r = |recs: &[EventRecord]| mean_rate(recs);
        let (srl, grl_r) = (r(&srl_recs), r(&grl_recs));
        let maramp = r(by(Baseline::Maramp));
        let (msuapc, msuamp) = (r(by(Baseline::Msuapc)), r(by(Baseline::Msuamp)));
        let (juapc, uamwser) = (r(by(Baseline::Juapcmwser)), r(by(Baseline::Uamwser)));
        let srl_max = srl_recs.iter().map(|x| x.wall_clock_s).fold(0.0, f64::max);
        let pass = srl >= grl_r
            && grl_r >= maramp
            && msuapc >= msuamp
            && juapc >= uamwser
            && grl_s <= GRL_BUDGET_S
            && srl_max <= SRL_BUDGET_S;
        report.line(
            5,
            "D1 ordering",
            pass,
            format!(
                "{HELDOUT} events, mean R/B: SRL {srl:.3} >= GRL {grl_r:.3} >= MARAMP {maramp:.3}; \
                 MSUAPC {msuapc:.3} >= MSUAMP {msuamp:.3}; JUAPCMWSER {juapc:.3} >= UAMWSER {uamwser:.3}; \
                 GRL training {grl_s:.1} s, slowest SRL event {srl_max:.2} s"
            ),
        );
    }

    // 6. Inference time.
    {
        let g = mean_time(&grl_recs);
        let m = mean_time(by(Baseline::Msuapc));
        report.line(
            6,
            "GRL inference vs MSUAPC time",
            g <= INFERENCE_RATIO * m,
            format!("GRL {g:.2e} s/event, MSUAPC {m:.2e} s/event, ratio {:.4} <= {INFERENCE_RATIO}", g / m),
        );
    }

    // 7. Permutation equivariance on held-out events.
    {
        let t0 = Instant::now();
        let t = cfg.train.temperature;
        let mut worst: f64 = 0.0;
        for (n, ev) in events.iter().take(10).enumerate() {
            let (k, j) = (ev.graph.n_ue(), ev.graph.n_bs());
            let up = permutation(k, 2 * n as u64);
            let bp = permutation(j, 2 * n as u64 + 1);
            let base = forward(&ev.graph, &grl.params, t).unwrap();
            let perm = forward(&ev.graph.permuted(&up, &bp), &grl.params, t).unwrap();
            for a in 0..k {
                for b in 0..j {
                    worst = worst.max((perm.x_soft[(a, b)] - base.x_soft[(up[a], bp[b])]).abs());
                }
            }
            for b in 0..j {
                worst = worst.max((perm.p[b] - base.p[bp[b]]).abs() / ev.inst.p_max[bp[b]]);
            }
        }
        let secs = t0.elapsed().as_secs_f64();
        report.line(
            7,
            "permutation equivariance",
            worst < EQUIVARIANCE_TOL && secs < 10.0,
            format!("10 events, joint UE and BS relabelling, max deviation {worst:.2e} (x, and p / p_max), {secs:.2} s"),
        );
    }

    // 8. Determinism: a second GRL run writes identical files.
    {
        let dir = tempfile::tempdir().unwrap();
        let (again, _) = grl_run(&cfg, &ctx);
        let files = |tag: &str, res: &GrlResult| {
            let ck = dir.path().join(format!("{tag}.ckpt"));
            let log = dir.path().join(format!("{tag}.csv"));
            formats::write_checkpoint(&ck, &res.params).unwrap();
            formats::write_training_log(&log, &res.log).unwrap();
            (std::fs::read(ck).unwrap(), std::fs::read(log).unwrap())
        };
        let (a, b) = (files("a", &grl), files("b", &again));
        report.line(
            8,
            "bit-identical GRL reruns",
            a == b,
            format!(
                "checkpoint {} bytes identical {}, log {} bytes identical {}",
                a.0.len(),
                a.0 == b.0,
                a.1.len(),
                a.1 == b.1
            ),
        );
    }

    // 9. Supervised path alone reproduces MSUAMP labels.
    {
        let w = LossWeights {
            w_s: 1.0,
            w_r: 0.0,
            w_e: 0.0,
        };
        let mut parts = Vec::new();
        let mut pass = true;
        for (n, ev) in events.iter().take(5).enumerate() {
            let start = init_params(FeatureDims { n_bs: 22, k_a: 30 }, ModelConfig::default(), n as u64).unwrap();
            let fit = supervised_fit(ev, &start, &w, 1e-3, cfg.train.temperature, LABEL_STEPS, LABEL_MATCH).unwrap();
            pass &= fit.agreement >= LABEL_MATCH;
            parts.push(format!("event {n}: {:.3} after {} steps", fit.agreement, fit.steps));
        }
        report.line(
            9,
            "supervised-only label match",
            pass,
            format!("w_r = w_e = 0, lr 1e-3, target {LABEL_MATCH} within {LABEL_STEPS} steps; {}", parts.join("; ")),
        );
    }

    println!(
        "acceptance: {} of 9 criteria passed in {:.1} s",
        9 - report.failed,
        started.elapsed().as_secs_f64()
    );
    if report.failed > 0 {
        std::process::exit(1);
    }
}
