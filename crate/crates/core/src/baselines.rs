//! Reference allocators: the five comparators, the label generator and
//! the exhaustive oracle.
//!
//! The comparators are deterministic local searches. Association stages
//! sweep UEs in ascending index order and take the best strictly improving
//! single move; power stages run cyclic per-BS golden-section searches over
//! `log p`. Every search only accepts improvements, so objectives never
//! decrease.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::hetgraph::argmax_first;
use crate::linalg::Matrix;
use crate::math;
use crate::objective::{log_utility, rate_report, sinr_matrix, Allocation, Instance, ObjectiveError};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BaselineConfig {
    /// Cap on association/power alternations and on power-ascent cycles.
    pub max_outer_iters: usize,
    /// Cap on association sweeps.
    pub max_sweeps: usize,
    /// Golden-section iterations per BS per cycle.
    pub golden_iters: usize,
    /// Relative improvement below which a cycle counts as converged.
    pub convergence_eps: f64,
    /// Power levels per site in the oracle grid.
    pub power_grid_levels: usize,
    /// Largest number of objective evaluations the oracle may spend.
    pub oracle_budget: u64,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self {
            max_outer_iters: 50,
            max_sweeps: 200,
            golden_iters: 40,
            convergence_eps: 1e-6,
            power_grid_levels: 5,
            oracle_budget: 10_000_000,
        }
    }
}

impl BaselineConfig {
    pub fn validate(&self) -> Result<(), BaselineError> {
        if self.max_outer_iters == 0 || self.max_sweeps == 0 || self.golden_iters == 0 {
            return Err(BaselineError::InvalidConfig("iteration caps must be positive"));
        }
        if !(self.convergence_eps > 0.0) {
            return Err(BaselineError::InvalidConfig("convergence_eps must be positive"));
        }
        if self.power_grid_levels < 2 {
            return Err(BaselineError::InvalidConfig("the oracle grid needs at least two levels"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum BaselineError {
    #[error("invalid baseline config: {0}")]
    InvalidConfig(&'static str),
    #[error("oracle needs {needed} evaluations, budget is {budget}")]
    Budget { needed: u128, budget: u64 },
    #[error("instance has no UEs or no sites")]
    Empty,
    #[error(transparent)]
    Objective(#[from] ObjectiveError),
}

/// What a search maximizes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Utility {
    /// `R`, bit/s.
    SumRate,
    /// `sum_i log(gamma_i + 1e-30)`.
    LogUtility,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Baseline {
    Maramp,
    Msuamp,
    Msuapc,
    Uamwser,
    Juapcmwser,
}

impl Baseline {
    pub const ALL: [Baseline; 5] = [
        Baseline::Maramp,
        Baseline::Msuamp,
        Baseline::Msuapc,
        Baseline::Uamwser,
        Baseline::Juapcmwser,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Baseline::Maramp => "maramp",
            Baseline::Msuamp => "msuamp",
            Baseline::Msuapc => "msuapc",
            Baseline::Uamwser => "uamwser",
            Baseline::Juapcmwser => "juapcmwser",
        }
    }

    pub fn parse(name: &str) -> Option<Baseline> {
        Baseline::ALL.into_iter().find(|b| b.name() == name)
    }
}

/// Result of a baseline run.
#[derive(Clone, Debug, PartialEq)]
pub struct BaselineOutput {
    pub alloc: Allocation,
    /// Final value of the utility the algorithm maximized.
    pub objective: f64,
    /// Sweeps, cycles or alternations spent.
    pub iterations: usize,
    /// True when an iteration cap stopped the search.
    pub capped: bool,
}

fn check(inst: &Instance) -> Result<(), BaselineError> {
    if inst.n_ue() == 0 || inst.n_bs() == 0 {
        return Err(BaselineError::Empty);
    }
    Ok(())
}

/// Utility from a precomputed SINR matrix and an association.
fn utility_of(sinr: &Matrix, serving: &[usize], n_bs: usize, bandwidth: f64, u: Utility) -> f64 {
    let mut load = vec![0usize; n_bs];
    for &s in serving {
        load[s] += 1;
    }
    serving
        .iter()
        .enumerate()
        .map(|(i, &s)| {
            let r = bandwidth / load[s] as f64 * math::log2_1p(sinr[(i, s)]);
            match u {
                Utility::SumRate => r,
                Utility::LogUtility => math::log(r + 1e-30),
            }
        })
        .sum()
}

/// Utility of `(serving, p)` on `inst`.
pub fn utility(serving: &[usize], p: &[f64], inst: &Instance, u: Utility) -> Result<f64, ObjectiveError> {
    let report = rate_report(serving, p, inst)?;
    Ok(match u {
        Utility::SumRate => report.total,
        Utility::LogUtility => log_utility(&report),
    })
}

fn max_sinr_association(sinr: &Matrix) -> Vec<usize> {
    sinr.iter_rows().map(argmax_first).collect()
}

/// Max-SINR association at full power.
pub fn marap(inst: &Instance) -> Result<BaselineOutput, BaselineError> {
    check(inst)?;
    let p = inst.p_max.clone();
    let sinr = sinr_matrix(&p, &inst.gains, inst.channel.sigma2);
    let serving = max_sinr_association(&sinr);
    let objective = utility_of(&sinr, &serving, inst.n_bs(), inst.channel.bandwidth, Utility::SumRate);
    Ok(BaselineOutput {
        alloc: Allocation::hard(&serving, inst.n_bs(), p),
        objective,
        iterations: 0,
        capped: false,
    })
}

/// Single-UE reassignment sweeps from `start` at fixed powers.
/// Returns `(serving, objective, sweeps, capped)`.
pub fn association_sweeps(
    inst: &Instance,
    p: &[f64],
    start: Vec<usize>,
    u: Utility,
    max_sweeps: usize,
) -> (Vec<usize>, f64, usize, bool) {
    let j = inst.n_bs();
    let bw = inst.channel.bandwidth;
    let sinr = sinr_matrix(p, &inst.gains, inst.channel.sigma2);
    let mut serving = start;
    let mut best = utility_of(&sinr, &serving, j, bw, u);
    for sweep in 0..max_sweeps {
        let mut changed = false;
        for i in 0..serving.len() {
            let current = serving[i];
            let mut best_move = None;
            let mut best_val = best;
            for cand in 0..j {
                if cand == current {
                    continue;
                }
                serving[i] = cand;
                let v = utility_of(&sinr, &serving, j, bw, u);
                if v > best_val {
                    best_val = v;
                    best_move = Some(cand);
                }
            }
            serving[i] = best_move.unwrap_or(current);
            if best_move.is_some() {
                best = best_val;
                changed = true;
            }
        }
        if !changed {
            return (serving, best, sweep + 1, false);
        }
    }
    (serving, best, max_sweeps, true)
}

fn sweep_baseline(inst: &Instance, p: Vec<f64>, u: Utility, cfg: &BaselineConfig) -> BaselineOutput {
    let sinr = sinr_matrix(&p, &inst.gains, inst.channel.sigma2);
    let (serving, objective, iterations, capped) =
        association_sweeps(inst, &p, max_sinr_association(&sinr), u, cfg.max_sweeps);
    BaselineOutput {
        alloc: Allocation::hard(&serving, inst.n_bs(), p),
        objective,
        iterations,
        capped,
    }
}

/// Log-utility association at the given powers.
pub fn msua(inst: &Instance, p: &[f64], cfg: &BaselineConfig) -> Result<BaselineOutput, BaselineError> {
    check(inst)?;
    cfg.validate()?;
    Ok(sweep_baseline(inst, p.to_vec(), Utility::LogUtility, cfg))
}

/// Log-utility association at full power (MSUAMP).
pub fn msuamp(inst: &Instance, cfg: &BaselineConfig) -> Result<BaselineOutput, BaselineError> {
    msua(inst, &inst.p_max, cfg)
}

/// Sum-rate association at full power.
pub fn uamwser(inst: &Instance, cfg: &BaselineConfig) -> Result<BaselineOutput, BaselineError> {
    check(inst)?;
    cfg.validate()?;
    Ok(sweep_baseline(inst, inst.p_max.clone(), Utility::SumRate, cfg))
}

const GOLDEN: f64 = 0.618_033_988_749_894_8;

/// Cyclic per-BS golden-section search over `log p_j` with the association
/// held fixed. Returns `(p, objective, cycles, capped)`.
pub fn power_coordinate_ascent(
    inst: &Instance,
    serving: &[usize],
    p_init: &[f64],
    u: Utility,
    cfg: &BaselineConfig,
) -> Result<(Vec<f64>, f64, usize, bool), BaselineError> {
    cfg.validate()?;
    let floor = inst.p_floor();
    let mut p = p_init.to_vec();
    let mut best = utility(serving, &p, inst, u)?;
    for cycle in 0..cfg.max_outer_iters {
        let start = best;
        for bs in 0..inst.n_bs() {
            let (lo, hi) = (floor[bs], inst.p_max[bs]);
            let eval = |value: f64, p: &mut Vec<f64>| -> Result<f64, ObjectiveError> {
                let old = p[bs];
                p[bs] = value;
                let v = utility(serving, p, inst, u);
                p[bs] = old;
                v
            };
            let at = |log_p: f64| math::exp(log_p).clamp(lo, hi);
            let (mut a, mut b) = (math::log(lo), math::log(hi));
            let mut c = b - GOLDEN * (b - a);
            let mut d = a + GOLDEN * (b - a);
            let mut fc = eval(at(c), &mut p)?;
            let mut fd = eval(at(d), &mut p)?;
            for _ in 0..cfg.golden_iters {
                if fc >= fd {
                    b = d;
                    d = c;
                    fd = fc;
                    c = b - GOLDEN * (b - a);
                    fc = eval(at(c), &mut p)?;
                } else {
                    a = c;
                    c = d;
                    fc = fd;
                    d = a + GOLDEN * (b - a);
                    fd = eval(at(d), &mut p)?;
                }
            }
            // The search may miss a boundary optimum, so both ends compete
            // with the bracketed point; only strict improvements are taken.
            let interior = if fc >= fd { at(c) } else { at(d) };
            let mut choice = None;
            let mut choice_val = best;
            for cand in [hi, lo, interior] {
                let v = eval(cand, &mut p)?;
                if v > choice_val {
                    choice_val = v;
                    choice = Some(cand);
                }
            }
            if let Some(cand) = choice {
                p[bs] = cand;
                best = choice_val;
            }
        }
        if best - start <= cfg.convergence_eps * start.abs().max(1.0) {
            return Ok((p, best, cycle + 1, false));
        }
    }
    Ok((p, best, cfg.max_outer_iters, true))
}

/// Alternates association sweeps and power ascent on one utility, starting
/// from the full-power sweep solution.
pub fn alternating(inst: &Instance, u: Utility, cfg: &BaselineConfig) -> Result<BaselineOutput, BaselineError> {
    check(inst)?;
    cfg.validate()?;
    let first = sweep_baseline(inst, inst.p_max.clone(), u, cfg);
    let mut serving = first.alloc.serving();
    let mut p = first.alloc.p;
    let mut best = first.objective;
    let mut capped = first.capped;
    for outer in 0..cfg.max_outer_iters {
        let start = best;
        let (np, _, _, pc) = power_coordinate_ascent(inst, &serving, &p, u, cfg)?;
        let (ns, val, _, sc) = association_sweeps(inst, &np, serving.clone(), u, cfg.max_sweeps);
        capped |= pc || sc;
        if val >= best {
            p = np;
            serving = ns;
            best = val;
        }
        if best - start <= cfg.convergence_eps * start.abs().max(1.0) {
            return Ok(BaselineOutput {
                alloc: Allocation::hard(&serving, inst.n_bs(), p),
                objective: best,
                iterations: outer + 1,
                capped,
            });
        }
    }
    Ok(BaselineOutput {
        alloc: Allocation::hard(&serving, inst.n_bs(), p),
        objective: best,
        iterations: cfg.max_outer_iters,
        capped: true,
    })
}

/// Log-utility association with power control.
pub fn msuapc(inst: &Instance, cfg: &BaselineConfig) -> Result<BaselineOutput, BaselineError> {
    alternating(inst, Utility::LogUtility, cfg)
}

/// Sum-rate association with power control.
pub fn juapcmwser(inst: &Instance, cfg: &BaselineConfig) -> Result<BaselineOutput, BaselineError> {
    alternating(inst, Utility::SumRate, cfg)
}

pub fn run_baseline(which: Baseline, inst: &Instance, cfg: &BaselineConfig) -> Result<BaselineOutput, BaselineError> {
    match which {
        Baseline::Maramp => marap(inst),
        Baseline::Msuamp => msuamp(inst, cfg),
        Baseline::Msuapc => msuapc(inst, cfg),
        Baseline::Uamwser => uamwser(inst, cfg),
        Baseline::Juapcmwser => juapcmwser(inst, cfg),
    }
}

/// One-hot supervision targets: the MSUAMP association.
pub fn gen_labels(inst: &Instance, cfg: &BaselineConfig) -> Result<Matrix, BaselineError> {
    Ok(msuamp(inst, cfg)?.alloc.x)
}

/// Oracle power grid for one site: `levels` log-spaced values from
/// `1e-6 p_max` to `p_max`, the last exactly `p_max`.
pub fn power_levels(p_max: f64, levels: usize) -> Vec<f64> {
    let lo = math::log(crate::objective::POWER_FLOOR * p_max);
    let hi = math::log(p_max);
    (0..levels)
        .map(|l| {
            if l + 1 == levels {
                p_max
            } else {
                math::exp(lo + (hi - lo) * l as f64 / (levels - 1) as f64)
            }
        })
        .collect()
}

/// Exhaustive sum-rate maximum over every hard association and every
/// gridded power vector. Ties keep the first candidate in enumeration order
/// (power vectors outer, associations inner, both odometer order with the
/// first index fastest).
pub fn brute_force_oracle(inst: &Instance, cfg: &BaselineConfig) -> Result<(Allocation, f64), BaselineError> {
    check(inst)?;
    cfg.validate()?;
    let (k, j, levels) = (inst.n_ue(), inst.n_bs(), cfg.power_grid_levels);
    let needed = (j as u128).pow(k as u32) * (levels as u128).pow(j as u32);
    if needed > cfg.oracle_budget as u128 {
        return Err(BaselineError::Budget {
            needed,
            budget: cfg.oracle_budget,
        });
    }
    let grids: Vec<Vec<f64>> = inst.p_max.iter().map(|&pm| power_levels(pm, levels)).collect();
    let bw = inst.channel.bandwidth;
    let mut best: Option<(Vec<usize>, Vec<f64>, f64)> = None;
    let mut pidx = vec![0usize; j];
    loop {
        let p: Vec<f64> = pidx.iter().zip(&grids).map(|(&l, g)| g[l]).collect();
        let sinr = sinr_matrix(&p, &inst.gains, inst.channel.sigma2);
        let mut serving = vec![0usize; k];
        loop {
            let v = utility_of(&sinr, &serving, j, bw, Utility::SumRate);
            if best.as_ref().map_or(true, |b| v > b.2) {
                best = Some((serving.clone(), p.clone(), v));
            }
            if !odometer(&mut serving, j) {
                break;
            }
        }
        if !odometer(&mut pidx, levels) {
            break;
        }
    }
    let (serving, p, _) = best.expect("non-empty enumeration");
    // Re-evaluate through the reporting path so the value matches sum_rate.
    let r = rate_report(&serving, &p, inst)?.total;
    Ok((Allocation::hard(&serving, j, p), r))
}

/// Advances a base-`radix` counter, first digit fastest; false on wrap.
fn odometer(digits: &mut [usize], radix: usize) -> bool {
    for d in digits.iter_mut() {
        *d += 1;
        if *d < radix {
            return true;
        }
        *d = 0;
    }
    false
}
