//! Rates and losses.
//!
//! SINR treats every other transmitting site as interference; a UE served
//! by site `j` gets a `1 / K_j` share of the band. Losses come in two
//! flavours: plain `f64` evaluations and tape-recorded versions used for
//! training.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::grad::{GradError, HardLink, Tape, Var};
use crate::hetgraph::{argmax_first, HeteroGraph};
use crate::linalg::Matrix;
use crate::math;

/// Guard inside `ln(x)` for the supervised loss and the entropy term.
pub const LOG_FLOOR: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChannelParams {
    /// System bandwidth `B`, Hz.
    pub bandwidth: f64,
    /// Noise power, W.
    pub sigma2: f64,
}

/// Thermal noise over `bandwidth` Hz with the given noise figure, in watts.
pub fn thermal_noise(bandwidth: f64, noise_figure_db: f64) -> f64 {
    math::dbm_to_watts(-174.0 + noise_figure_db + 10.0 * math::log10(bandwidth))
}

impl Default for ChannelParams {
    fn default() -> Self {
        Self {
            bandwidth: 20e6,
            sigma2: thermal_noise(20e6, 9.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ObjectiveError {
    #[error("UE {0} is not associated with any BS")]
    Unassociated(usize),
    #[error("association row {row} violates the single-association constraint")]
    C1 { row: usize },
    #[error("power of BS {bs} is {p}, outside [0, {p_max}]")]
    C2 { bs: usize, p: f64, p_max: f64 },
    #[error("shape mismatch: {0}")]
    Shape(&'static str),
    #[error("loss weights must be non-negative")]
    NegativeWeight,
    #[error(transparent)]
    Grad(#[from] GradError),
}

/// One event's optimization data: `K x J` gains, site power ceilings and
/// channel constants.
#[derive(Clone, Debug, PartialEq)]
pub struct Instance {
    pub gains: Matrix,
    pub p_max: Vec<f64>,
    pub channel: ChannelParams,
}

impl Instance {
    pub fn new(gains: Matrix, p_max: Vec<f64>, channel: ChannelParams) -> Self {
        assert_eq!(gains.cols(), p_max.len(), "one p_max per site");
        Self { gains, p_max, channel }
    }

    pub fn from_graph(graph: &HeteroGraph, channel: ChannelParams) -> Self {
        Self::new(graph.gains.clone(), graph.p_max.clone(), channel)
    }

    pub fn n_ue(&self) -> usize {
        self.gains.rows()
    }

    pub fn n_bs(&self) -> usize {
        self.gains.cols()
    }

    /// Smallest power any algorithm may assign: `1e-6 * p_max`.
    pub fn p_floor(&self) -> Vec<f64> {
        self.p_max.iter().map(|p| POWER_FLOOR * p).collect()
    }
}

/// Power floor as a fraction of each site's ceiling.
pub const POWER_FLOOR: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AllocKind {
    Soft,
    Hard,
}

/// Association matrix plus power vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Allocation {
    pub x: Matrix,
    pub p: Vec<f64>,
    pub kind: AllocKind,
}

impl Allocation {
    /// One-hot allocation from serving indices.
    pub fn hard(serving: &[usize], n_bs: usize, p: Vec<f64>) -> Self {
        let mut x = Matrix::zeros(serving.len(), n_bs);
        for (i, &s) in serving.iter().enumerate() {
            x[(i, s)] = 1.0;
        }
        Self {
            x,
            p,
            kind: AllocKind::Hard,
        }
    }

    pub fn soft(x: Matrix, p: Vec<f64>) -> Self {
        Self {
            x,
            p,
            kind: AllocKind::Soft,
        }
    }

    /// Serving BS per UE (row argmax, lowest index on ties).
    pub fn serving(&self) -> Vec<usize> {
        self.x.iter_rows().map(argmax_first).collect()
    }

    /// Hardened copy (one-hot rows).
    pub fn hardened(&self) -> Allocation {
        Allocation::hard(&self.serving(), self.x.cols(), self.p.clone())
    }

    /// C1 and C2 with zero tolerance for hard allocations; soft rows must
    /// be non-negative and sum to one within `1e-9`.
    pub fn check_feasible(&self, p_max: &[f64]) -> Result<(), ObjectiveError> {
        if self.p.len() != p_max.len() || self.x.cols() != p_max.len() {
            return Err(ObjectiveError::Shape("allocation width differs from site count"));
        }
        for (r, row) in self.x.iter_rows().enumerate() {
            let ok = match self.kind {
                AllocKind::Hard => {
                    row.iter().all(|&v| v == 0.0 || v == 1.0)
                        && row.iter().filter(|&&v| v == 1.0).count() == 1
                }
                AllocKind::Soft => {
                    row.iter().all(|&v| v >= 0.0) && (row.iter().sum::<f64>() - 1.0).abs() <= 1e-9
                }
            };
            if !ok {
                return Err(ObjectiveError::C1 { row: r });
            }
        }
        for (bs, (&p, &pm)) in self.p.iter().zip(p_max).enumerate() {
            if !(p >= 0.0 && p <= pm) {
                return Err(ObjectiveError::C2 { bs, p, p_max: pm });
            }
        }
        Ok(())
    }
}

/// Per-UE and total effective rates of one hard allocation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateReport {
    /// Effective rate of each UE, bit/s.
    pub per_ue: Vec<f64>,
    /// Sum of `per_ue`, bit/s.
    pub total: f64,
    /// Number of UEs on each BS.
    pub loads: Vec<usize>,
    pub sigma2: f64,
    pub bandwidth: f64,
}

impl RateReport {
    /// `R / B`, bit/s/Hz.
    pub fn spectral_efficiency(&self) -> f64 {
        self.total / self.bandwidth
    }
}

/// `p_j g_ij / (sum_{n != j} p_n g_in + sigma2)`.
pub fn sinr(i: usize, j: usize, p: &[f64], gains: &Matrix, sigma2: f64) -> f64 {
    let g = gains.row(i);
    let interference: f64 = p
        .iter()
        .zip(g)
        .enumerate()
        .filter(|&(n, _)| n != j)
        .map(|(_, (a, b))| a * b)
        .sum();
    p[j] * g[j] / (interference + sigma2)
}

/// SINR of every UE towards every BS.
pub fn sinr_matrix(p: &[f64], gains: &Matrix, sigma2: f64) -> Matrix {
    let (k, j) = gains.shape();
    let mut out = Matrix::zeros(k, j);
    for i in 0..k {
        for c in 0..j {
            out[(i, c)] = sinr(i, c, p, gains, sigma2);
        }
    }
    out
}

/// Number of UEs per BS.
pub fn loads(serving: &[usize], n_bs: usize) -> Vec<usize> {
    let mut k = vec![0; n_bs];
    for &s in serving {
        k[s] += 1;
    }
    k
}

/// `(B / K_j) log2(1 + SINR_ij)` for UE `i` on BS `j` under `serving`.
pub fn effective_rate(
    i: usize,
    j: usize,
    serving: &[usize],
    p: &[f64],
    gains: &Matrix,
    channel: &ChannelParams,
) -> Result<f64, ObjectiveError> {
    if serving.get(i) != Some(&j) {
        return Err(ObjectiveError::Unassociated(i));
    }
    let k_j = serving.iter().filter(|&&s| s == j).count();
    Ok(channel.bandwidth / k_j as f64 * math::log2_1p(sinr(i, j, p, gains, channel.sigma2)))
}

/// Rates of the hard association `serving` at powers `p`.
pub fn rate_report(serving: &[usize], p: &[f64], inst: &Instance) -> Result<RateReport, ObjectiveError> {
    let j = inst.n_bs();
    if serving.len() != inst.n_ue() || p.len() != j {
        return Err(ObjectiveError::Shape("serving/power length"));
    }
    if let Some(i) = serving.iter().position(|&s| s >= j) {
        return Err(ObjectiveError::Unassociated(i));
    }
    let k = loads(serving, j);
    let per_ue: Vec<f64> = serving
        .iter()
        .enumerate()
        .map(|(i, &s)| {
            inst.channel.bandwidth / k[s] as f64
                * math::log2_1p(sinr(i, s, p, &inst.gains, inst.channel.sigma2))
        })
        .collect();
    Ok(RateReport {
        total: per_ue.iter().sum(),
        per_ue,
        loads: k,
        sigma2: inst.channel.sigma2,
        bandwidth: inst.channel.bandwidth,
    })
}

/// Total effective rate `R` of a feasible allocation (hardened if soft).
pub fn sum_rate(alloc: &Allocation, inst: &Instance) -> Result<f64, ObjectiveError> {
    alloc.check_feasible(&inst.p_max)?;
    Ok(rate_report(&alloc.serving(), &alloc.p, inst)?.total)
}

/// `sum_i log(gamma_i + 1e-30)` over a rate report.
pub fn log_utility(report: &RateReport) -> f64 {
    report.per_ue.iter().map(|&r| math::log(r + 1e-30)).sum()
}

/// `-sum y ln max(x, 1e-12)`.
pub fn supervised_loss(x_soft: &Matrix, y: &Matrix) -> Result<f64, ObjectiveError> {
    if x_soft.shape() != y.shape() {
        return Err(ObjectiveError::Shape("supervised loss operands"));
    }
    Ok(-x_soft
        .as_slice()
        .iter()
        .zip(y.as_slice())
        .map(|(&x, &t)| if t == 0.0 { 0.0 } else { t * math::log(x.max(LOG_FLOOR)) })
        .sum::<f64>())
}

/// Entropy of the unit-temperature softmax of each logit row, summed over
/// rows. Masked entries are excluded.
pub fn entropy_loss(z: &Matrix, mask: Option<&Matrix>) -> f64 {
    let e = crate::grad::softmax_rows(z, 1.0, mask);
    -e.as_slice()
        .iter()
        .map(|&v| v * math::log(v.max(LOG_FLOOR)))
        .sum::<f64>()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub w_s: f64,
    pub w_r: f64,
    pub w_e: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self::grl()
    }
}

impl LossWeights {
    /// Generalization-stage weights.
    pub const fn grl() -> Self {
        Self {
            w_s: 100.0,
            w_r: 1.0,
            w_e: 0.0,
        }
    }

    /// Specialization-stage weights.
    pub const fn srl() -> Self {
        Self {
            w_s: 1.0,
            w_r: 1.0,
            w_e: 1e-2,
        }
    }

    pub fn validate(&self) -> Result<(), ObjectiveError> {
        if [self.w_s, self.w_r, self.w_e].iter().all(|w| *w >= 0.0 && w.is_finite()) {
            Ok(())
        } else {
            Err(ObjectiveError::NegativeWeight)
        }
    }
}

/// Quantities held fixed by the two-path rate: the hardened association
/// and the per-pair rates `gamma_ij` it implies at the current powers.
#[derive(Clone, Debug, PartialEq)]
pub struct FrozenAssociation {
    pub serving: Vec<usize>,
    /// `gamma_ij = B / K'_ij * log2(1 + SINR_ij)` where `K'_ij` is the load
    /// BS `j` would carry with UE `i` on it.
    pub gamma: Matrix,
}

impl FrozenAssociation {
    pub fn new(x_soft: &Matrix, p: &[f64], inst: &Instance) -> Self {
        let serving: Vec<usize> = x_soft.iter_rows().map(argmax_first).collect();
        let k = loads(&serving, inst.n_bs());
        let s = sinr_matrix(p, &inst.gains, inst.channel.sigma2);
        let mut gamma = Matrix::zeros(inst.n_ue(), inst.n_bs());
        for i in 0..inst.n_ue() {
            for j in 0..inst.n_bs() {
                let load = if serving[i] == j { k[j] } else { k[j] + 1 };
                gamma[(i, j)] = inst.channel.bandwidth / load as f64 * math::log2_1p(s[(i, j)]);
            }
        }
        Self { serving, gamma }
    }
}

/// Differentiable sum rate (bit/s) whose value is the hard-association
/// rate and whose gradient has two parts: through `p` with the association
/// held at `frozen.serving`, and through `x_soft` weighted by the frozen
/// `gamma`.
pub fn two_path_rate(
    tape: &mut Tape,
    x_soft: Var,
    p: Var,
    inst: &Instance,
    frozen: &FrozenAssociation,
) -> Result<Var, ObjectiveError> {
    let power_path = tape.hard_rate(
        p,
        HardLink {
            serving: frozen.serving.clone(),
            gains: inst.gains.clone(),
            bandwidth: inst.channel.bandwidth,
            sigma2: inst.channel.sigma2,
        },
    )?;
    let gamma = tape.constant(frozen.gamma.clone());
    let weighted = tape.mul(x_soft, gamma)?;
    let assoc = tape.sum(weighted)?;
    let assoc_value = tape.stop_gradient(assoc)?;
    let assoc_path = tape.sub(assoc, assoc_value)?;
    Ok(tape.add(power_path, assoc_path)?)
}

/// `-sum y ln max(x, 1e-12)` on the tape.
pub fn supervised_loss_var(tape: &mut Tape, x_soft: Var, y: &Matrix) -> Result<Var, ObjectiveError> {
    if tape.value(x_soft).shape() != y.shape() {
        return Err(ObjectiveError::Shape("supervised loss operands"));
    }
    let lx = tape.log_clamped(x_soft, LOG_FLOOR)?;
    let yv = tape.constant(y.clone());
    let prod = tape.mul(lx, yv)?;
    let s = tape.sum(prod)?;
    Ok(tape.scale(s, -1.0)?)
}

/// Entropy of the unit-temperature softmax of `z` on the tape.
pub fn entropy_loss_var(tape: &mut Tape, z: Var, mask: Option<&Matrix>) -> Result<Var, ObjectiveError> {
    let e = tape.softmax_t(z, 1.0, mask)?;
    let le = tape.log_clamped(e, LOG_FLOOR)?;
    let prod = tape.mul(e, le)?;
    let s = tape.sum(prod)?;
    Ok(tape.scale(s, -1.0)?)
}

/// Recorded pieces of a training loss.
#[derive(Clone, Copy, Debug)]
pub struct LossVars {
    pub total: Var,
    pub supervised: Var,
    /// Two-path rate in bit/s/Hz.
    pub rate: Var,
    pub entropy: Option<Var>,
}

/// `w_s L_s - w_r R/B - w_e L_entropy`. The entropy term is only recorded
/// when `w_e > 0` and `z` is given; with `w_e = 0` this is the
/// generalization loss.
#[allow(clippy::too_many_arguments)]
pub fn training_loss(
    tape: &mut Tape,
    x_soft: Var,
    p: Var,
    z: Option<(Var, &Matrix)>,
    y: &Matrix,
    inst: &Instance,
    frozen: &FrozenAssociation,
    w: &LossWeights,
) -> Result<LossVars, ObjectiveError> {
    w.validate()?;
    let supervised = supervised_loss_var(tape, x_soft, y)?;
    let rate_bps = two_path_rate(tape, x_soft, p, inst, frozen)?;
    let rate = tape.scale(rate_bps, 1.0 / inst.channel.bandwidth)?;
    let ws = tape.scale(supervised, w.w_s)?;
    let wr = tape.scale(rate, w.w_r)?;
    let mut total = tape.sub(ws, wr)?;
    let mut entropy = None;
    if let Some((z, mask)) = z {
        if w.w_e > 0.0 {
            let e = entropy_loss_var(tape, z, Some(mask))?;
            let we = tape.scale(e, w.w_e)?;
            total = tape.sub(total, we)?;
            entropy = Some(e);
        }
    }
    Ok(LossVars {
        total,
        supervised,
        rate,
        entropy,
    })
}

/// Plain evaluation of `w_s L_s - w_r R/B - w_e L_entropy` with `R` taken on
/// the hardened association.
pub fn training_loss_value(
    x_soft: &Matrix,
    p: &[f64],
    z: Option<(&Matrix, &Matrix)>,
    y: &Matrix,
    inst: &Instance,
    w: &LossWeights,
) -> Result<f64, ObjectiveError> {
    w.validate()?;
    let serving: Vec<usize> = x_soft.iter_rows().map(argmax_first).collect();
    let r = rate_report(&serving, p, inst)?.total / inst.channel.bandwidth;
    let mut l = w.w_s * supervised_loss(x_soft, y)? - w.w_r * r;
    if let Some((z, mask)) = z {
        l -= w.w_e * entropy_loss(z, Some(mask));
    }
    Ok(l)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grad::softmax_rows;

    fn mat(rows: &[&[f64]]) -> Matrix {
        Matrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>())
    }

    #[test]
    fn default_noise_floor() {
        let c = ChannelParams::default();
        // -174 dBm/Hz + 9 dB + 73.01 dB(20 MHz) = -91.99 dBm.
        let expect = 10f64.powf((-174.0 + 9.0 + 10.0 * 20e6f64.log10() - 30.0) / 10.0);
        assert!((c.sigma2 - expect).abs() < 1e-25);
        assert!((c.sigma2 - 6.32e-13).abs() < 0.01e-13);
    }

    #[test]
    fn sinr_single_bs() {
        let g = mat(&[&[1e-6]]);
        assert!((sinr(0, 0, &[1.0], &g, 1e-9) - 1000.0).abs() < 1e-9);
    }

    #[test]
    fn sinr_two_bs() {
        let g = mat(&[&[1e-6, 2e-7]]);
        let s = sinr(0, 0, &[1.0, 0.5], &g, 1e-9);
        assert!((s - 1e-6 / 1.01e-7).abs() < 1e-12);
        assert!((s - 9.901).abs() < 1e-3);
    }

    #[test]
    fn sinr_linear_in_own_power() {
        let g = mat(&[&[1e-6]]);
        let a = sinr(0, 0, &[1.0], &g, 1e-9);
        let b = sinr(0, 0, &[2.0], &g, 1e-9);
        assert!((b - 2.0 * a).abs() < 1e-9);
    }

    #[test]
    fn effective_rate_examples() {
        let ch = ChannelParams {
            bandwidth: 20e6,
            sigma2: 1e-9,
        };
        // Two UEs on BS 0, identical geometry.
        let g = mat(&[&[1e-6, 2e-7], &[1e-6, 2e-7]]);
        let r = effective_rate(0, 0, &[0, 0], &[1.0, 0.5], &g, &ch).unwrap();
        let expect = 10e6 * (1.0 + 1e-6 / 1.01e-7f64).log2();
        assert!((r - expect).abs() < 1e-6);
        assert!((r - 3.446e7).abs() < 0.001e7);
        // Halving the load doubles the rate.
        let g1 = mat(&[&[1e-6, 2e-7]]);
        let single = effective_rate(0, 0, &[0], &[1.0, 0.5], &g1, &ch).unwrap();
        assert!((single - 2.0 * r).abs() < 1e-6);
        // Zero SINR, zero rate.
        let z = effective_rate(0, 0, &[0], &[0.0, 0.5], &g1, &ch).unwrap();
        assert_eq!(z, 0.0);
        assert_eq!(
            effective_rate(0, 1, &[0], &[1.0, 0.5], &g1, &ch),
            Err(ObjectiveError::Unassociated(0))
        );
    }

    #[test]
    fn sum_rate_single_link_closed_form() {
        let ch = ChannelParams {
            bandwidth: 20e6,
            sigma2: 1e-9,
        };
        let inst = Instance::new(mat(&[&[1e-6]]), vec![2.0], ch);
        let r = sum_rate(&Allocation::hard(&[0], 1, vec![2.0]), &inst).unwrap();
        assert!((r - 20e6 * (1.0 + 2.0 * 1e-6 / 1e-9f64).log2()).abs() < 1e-6);
    }

    #[test]
    fn feasibility_checks() {
        let ok = Allocation::hard(&[1, 0], 2, vec![1.0, 0.5]);
        assert!(ok.check_feasible(&[1.0, 1.0]).is_ok());
        assert!(matches!(
            ok.check_feasible(&[1.0, 0.4]),
            Err(ObjectiveError::C2 { bs: 1, .. })
        ));
        let mut bad = ok.clone();
        bad.x[(0, 0)] = 1.0;
        assert_eq!(bad.check_feasible(&[1.0, 1.0]), Err(ObjectiveError::C1 { row: 0 }));
        let soft = Allocation::soft(mat(&[&[0.25, 0.75]]), vec![1.0, 1.0]);
        assert!(soft.check_feasible(&[1.0, 1.0]).is_ok());
        assert_eq!(soft.serving(), vec![1]);
    }

    #[test]
    fn supervised_loss_examples() {
        let y = mat(&[&[0.0, 1.0], &[1.0, 0.0]]);
        assert_eq!(supervised_loss(&y, &y).unwrap(), 0.0);
        let uniform = Matrix::filled(3, 4, 0.25);
        let mut y = Matrix::zeros(3, 4);
        for i in 0..3 {
            y[(i, i)] = 1.0;
        }
        let l = supervised_loss(&uniform, &y).unwrap();
        assert!((l - 3.0 * 4f64.ln()).abs() < 1e-12);
        assert!((l - 4.159).abs() < 1e-3);
        assert!(supervised_loss(&uniform, &Matrix::zeros(2, 4)).is_err());
    }

    #[test]
    fn entropy_examples() {
        let z = Matrix::zeros(2, 3);
        assert!((entropy_loss(&z, None) - 2.0 * 3f64.ln()).abs() < 1e-12);
        let z = mat(&[&[50.0, 0.0, 0.0]]);
        assert!(entropy_loss(&z, None) < 1e-18);
        let z = mat(&[&[1.0, 0.0]]);
        let e1 = 1.0 / (1.0 + (-1.0f64).exp());
        let expect = -(e1 * e1.ln() + (1.0 - e1) * (1.0 - e1).ln());
        let h = entropy_loss(&z, None);
        assert!((h - expect).abs() < 1e-12);
        assert!((h - 0.5822).abs() < 1e-4);
    }

    fn small_instance() -> Instance {
        Instance::new(
            mat(&[&[1e-6, 3e-7, 2e-8], &[2e-7, 9e-7, 1e-7], &[5e-8, 4e-7, 6e-7], &[4e-7, 4e-7, 1e-8]]),
            vec![1.0, 0.5, 0.5],
            ChannelParams {
                bandwidth: 1e6,
                sigma2: 1e-9,
            },
        )
    }

    #[test]
    fn two_path_forward_equals_hard_rate() {
        let inst = small_instance();
        let z = mat(&[&[0.3, 0.1, -0.5], &[0.0, 0.8, 0.1], &[0.2, -0.1, 0.9], &[0.4, 0.45, 0.0]]);
        let p = vec![0.7, 0.3, 0.45];
        let mut tape = Tape::new();
        let zv = tape.param(z.clone());
        let x = tape.softmax_t(zv, 0.1, None).unwrap();
        let pv = tape.param(Matrix::column(&p));
        let frozen = FrozenAssociation::new(tape.value(x), &p, &inst);
        let r = two_path_rate(&mut tape, x, pv, &inst, &frozen).unwrap();
        let alloc = Allocation::soft(softmax_rows(&z, 0.1, None), p.clone());
        assert_eq!(tape.scalar(r), sum_rate(&alloc, &inst).unwrap());
    }

    #[test]
    fn association_path_is_gamma_weighted_jacobian() {
        // One UE, two BSs: dR/dz_k = sum_j gamma_j dx_j/dz_k.
        let inst = Instance::new(
            mat(&[&[1e-6, 4e-7]]),
            vec![1.0, 1.0],
            ChannelParams {
                bandwidth: 1e6,
                sigma2: 1e-9,
            },
        );
        let z = [0.4, 0.1];
        let t = 0.5;
        let p = vec![1.0, 0.2];
        let mut tape = Tape::new();
        let zv = tape.param(Matrix::row_vector(&z));
        let x = tape.softmax_t(zv, t, None).unwrap();
        let pv = tape.constant(Matrix::column(&p));
        let frozen = FrozenAssociation::new(tape.value(x), &p, &inst);
        let r = two_path_rate(&mut tape, x, pv, &inst, &frozen).unwrap();
        let g = tape.backward(r).unwrap();
        let got = g.get(zv).unwrap();

        let jac = crate::grad::softmax_jacobian(&z, t);
        let gamma = [
            1e6 * (1.0 + 1e-6 / (0.2 * 4e-7 + 1e-9f64)).log2(),
            1e6 * (1.0 + 0.2 * 4e-7 / (1e-6 + 1e-9f64)).log2(),
        ];
        for k in 0..2 {
            let expect: f64 = (0..2).map(|j| gamma[j] * jac[(j, k)]).sum();
            assert!((got.as_slice()[k] - expect).abs() <= 1e-9 * expect.abs().max(1.0));
        }
    }

    #[test]
    fn weighted_loss_compositions() {
        let inst = small_instance();
        let x = softmax_rows(
            &mat(&[&[0.3, 0.1, -0.5], &[0.0, 0.8, 0.1], &[0.2, -0.1, 0.9], &[0.4, 0.45, 0.0]]),
            0.5,
            None,
        );
        let p = vec![0.7, 0.3, 0.45];
        let y = Allocation::hard(&[0, 1, 2, 0], 3, p.clone()).x;
        let z = Matrix::zeros(4, 3);
        let mask = Matrix::filled(4, 3, 1.0);
        let ls = supervised_loss(&x, &y).unwrap();
        let r = rate_report(&x.iter_rows().map(argmax_first).collect::<Vec<_>>(), &p, &inst)
            .unwrap()
            .total
            / inst.channel.bandwidth;
        let le = entropy_loss(&z, Some(&mask));
        let eval = |w: LossWeights| training_loss_value(&x, &p, Some((&z, &mask)), &y, &inst, &w).unwrap();
        assert_eq!(eval(LossWeights { w_s: 2.0, w_r: 0.0, w_e: 0.0 }), 2.0 * ls);
        assert_eq!(eval(LossWeights { w_s: 0.0, w_r: 3.0, w_e: 0.0 }), -3.0 * r);
        assert_eq!(eval(LossWeights { w_s: 0.0, w_r: 0.0, w_e: 0.0 }), 0.0);
        let grl = eval(LossWeights::grl());
        assert!((grl - (100.0 * ls - r)).abs() < 1e-9);
        let srl = eval(LossWeights { w_s: 100.0, w_r: 1.0, w_e: 1e-2 });
        assert!((srl - (grl - 1e-2 * le)).abs() < 1e-9);
        assert_eq!(
            training_loss_value(&x, &p, None, &y, &inst, &LossWeights { w_s: -1.0, w_r: 1.0, w_e: 0.0 }),
            Err(ObjectiveError::NegativeWeight)
        );
    }
}
