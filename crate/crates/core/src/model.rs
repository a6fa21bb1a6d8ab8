//! Two-layer heterogeneous GraphSAGE (HGSAGE) with an association head and
//! a power head.
//!
//! Each layer runs two aggregators per node type: a one-order aggregator
//! over the opposite-type neighbours and a second-order aggregator over the
//! same-type two-hop neighbours. Both concatenate the node's own state with
//! the neighbourhood mean, apply a dense layer and ReLU; the two results are
//! concatenated and L2-normalized.
//!
//! Node inputs are permutation invariant summaries (each UE's standardized
//! gain row sorted in descending order; each BS's gain column over the
//! active UEs, sorted, plus `log10 p_max`). Which BS a UE should pick enters
//! through the pairwise association head, which sees the UE embedding, the
//! BS embedding and the UE-BS gain feature. Relabelling UEs or BSs therefore
//! permutes the outputs and nothing else.

use alloc::string::String;
use alloc::vec::Vec;
use alloc::format;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::grad::{GradError, Gradients, Tape, Var};
use crate::hetgraph::{argmax_first, HeteroGraph};
use crate::linalg::Matrix;
use crate::math;
use crate::objective::{Allocation, POWER_FLOOR};
use crate::rng::rng_from_seed;

/// Variance guard of the per-row logit standardization.
pub const LOGIT_STD_EPS: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// Embedding width per node per layer; half comes from each aggregator.
    pub hidden: usize,
    /// Width of the association head's hidden layer.
    pub head_hidden: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            hidden: 128,
            head_hidden: 32,
        }
    }
}

/// Graph sizes the parameters are built for.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureDims {
    /// Number of sites `J` (UE input width).
    pub n_bs: usize,
    /// Active UEs per event `K_a` (BS input width is `K_a + 1`).
    pub k_a: usize,
}

impl FeatureDims {
    pub fn of(graph: &HeteroGraph) -> Self {
        Self {
            n_bs: graph.n_bs(),
            k_a: graph.n_ue(),
        }
    }

    pub fn ue_in(&self) -> usize {
        self.n_bs
    }

    pub fn bs_in(&self) -> usize {
        self.k_a + 1
    }
}

/// Weights of one aggregator: `relu([h_v, agg] W + b)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub w: Matrix,
    pub b: Matrix,
}

/// One HGSAGE layer: one-order (`w1`) and second-order (`w2`) aggregators
/// for each node type.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerParams {
    pub w1_ue: Dense,
    pub w2_ue: Dense,
    pub w1_bs: Dense,
    pub w2_bs: Dense,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub dims: FeatureDims,
    pub config: ModelConfig,
    pub layers: [LayerParams; 2],
    /// Association head: UE, BS and gain projections into the head layer,
    /// its bias, and the output neuron.
    pub ua_ue: Matrix,
    pub ua_bs: Matrix,
    pub ua_gain: Matrix,
    pub ua_bias: Matrix,
    pub ua_out: Matrix,
    /// Weight of the received-power skip term `log10(p_max_j g_ij)` added to
    /// every logit; starts at one so an untrained model associates by
    /// strongest received power.
    pub ua_prior: Matrix,
    /// Power head: one sigmoid neuron per BS.
    pub pw: Matrix,
    pub pw_bias: Matrix,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ModelError {
    #[error("model built for {expected:?} but graph has {got:?}")]
    Dims { expected: FeatureDims, got: FeatureDims },
    #[error("temperature must be positive, got {0}")]
    Temperature(f64),
    #[error("hidden width must be a positive even number")]
    Hidden,
    #[error(transparent)]
    Grad(#[from] GradError),
}

fn glorot(rng: &mut crate::rng::Rng, fan_in: usize, fan_out: usize) -> Matrix {
    let a = math::sqrt(6.0 / (fan_in + fan_out) as f64);
    let data = (0..fan_in * fan_out).map(|_| rng.gen_range(-a..=a)).collect();
    Matrix::from_vec(fan_in, fan_out, data)
}

fn dense(rng: &mut crate::rng::Rng, fan_in: usize, fan_out: usize) -> Dense {
    Dense {
        w: glorot(rng, fan_in, fan_out),
        b: Matrix::zeros(1, fan_out),
    }
}

/// Glorot-uniform weights, zero biases; deterministic in `seed`.
pub fn init_params(dims: FeatureDims, config: ModelConfig, seed: u64) -> Result<ModelParams, ModelError> {
    if config.hidden == 0 || config.hidden % 2 != 0 || config.head_hidden == 0 {
        return Err(ModelError::Hidden);
    }
    let mut rng = rng_from_seed(seed);
    let half = config.hidden / 2;
    let (ue_in, bs_in, h) = (dims.ue_in(), dims.bs_in(), config.hidden);
    let first = LayerParams {
        w1_ue: dense(&mut rng, ue_in + bs_in, half),
        w2_ue: dense(&mut rng, 2 * ue_in, half),
        w1_bs: dense(&mut rng, bs_in + ue_in, half),
        w2_bs: dense(&mut rng, 2 * bs_in, half),
    };
    let second = LayerParams {
        w1_ue: dense(&mut rng, 2 * h, half),
        w2_ue: dense(&mut rng, 2 * h, half),
        w1_bs: dense(&mut rng, 2 * h, half),
        w2_bs: dense(&mut rng, 2 * h, half),
    };
    let d = config.head_hidden;
    let head_fan_in = 2 * h + 1;
    let bound = |fan_out: usize| math::sqrt(6.0 / (head_fan_in + fan_out) as f64);
    let mut head = |rows: usize| {
        let a = bound(d);
        Matrix::from_vec(rows, d, (0..rows * d).map(|_| rng.gen_range(-a..=a)).collect())
    };
    let ua_ue = head(h);
    let ua_bs = head(h);
    let ua_gain = head(1);
    let ua_out = glorot(&mut rng, d, 1);
    let pw = glorot(&mut rng, h, 1);
    Ok(ModelParams {
        dims,
        config,
        layers: [first, second],
        ua_ue,
        ua_bs,
        ua_gain,
        ua_bias: Matrix::zeros(1, d),
        ua_out,
        ua_prior: Matrix::filled(1, 1, 1.0),
        pw,
        pw_bias: Matrix::zeros(1, 1),
    })
}

impl ModelParams {
    /// Every tensor with a stable name, in canonical order.
    pub fn named(&self) -> Vec<(String, &Matrix)> {
        let mut out = Vec::new();
        for (k, layer) in self.layers.iter().enumerate() {
            for (tag, d) in [
                ("w1_ue", &layer.w1_ue),
                ("w2_ue", &layer.w2_ue),
                ("w1_bs", &layer.w1_bs),
                ("w2_bs", &layer.w2_bs),
            ] {
                out.push((format!("layer{}.{tag}.weight", k + 1), &d.w));
                out.push((format!("layer{}.{tag}.bias", k + 1), &d.b));
            }
        }
        out.push(("ua.ue".into(), &self.ua_ue));
        out.push(("ua.bs".into(), &self.ua_bs));
        out.push(("ua.gain".into(), &self.ua_gain));
        out.push(("ua.bias".into(), &self.ua_bias));
        out.push(("ua.out".into(), &self.ua_out));
        out.push(("ua.prior".into(), &self.ua_prior));
        out.push(("power.weight".into(), &self.pw));
        out.push(("power.bias".into(), &self.pw_bias));
        out
    }

    /// Mutable tensors in the same order as [`ModelParams::named`].
    pub fn tensors_mut(&mut self) -> Vec<&mut Matrix> {
        let mut out: Vec<&mut Matrix> = Vec::new();
        for layer in self.layers.iter_mut() {
            for d in [&mut layer.w1_ue, &mut layer.w2_ue, &mut layer.w1_bs, &mut layer.w2_bs] {
                out.push(&mut d.w);
                out.push(&mut d.b);
            }
        }
        out.push(&mut self.ua_ue);
        out.push(&mut self.ua_bs);
        out.push(&mut self.ua_gain);
        out.push(&mut self.ua_bias);
        out.push(&mut self.ua_out);
        out.push(&mut self.ua_prior);
        out.push(&mut self.pw);
        out.push(&mut self.pw_bias);
        out
    }

    pub fn tensors(&self) -> Vec<&Matrix> {
        self.named().into_iter().map(|(_, m)| m).collect()
    }

    pub fn n_scalars(&self) -> usize {
        self.tensors().iter().map(|m| m.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors().iter().all(|m| m.all_finite())
    }
}

/// Tape handles of a dense layer.
#[derive(Clone, Copy, Debug)]
pub struct DenseVars {
    pub w: Var,
    pub b: Var,
}

#[derive(Clone, Copy, Debug)]
pub struct LayerVars {
    pub w1_ue: DenseVars,
    pub w2_ue: DenseVars,
    pub w1_bs: DenseVars,
    pub w2_bs: DenseVars,
}

/// Every parameter recorded on a tape, in canonical order.
#[derive(Clone, Debug)]
pub struct ParamVars {
    pub layers: [LayerVars; 2],
    pub ua_ue: Var,
    pub ua_bs: Var,
    pub ua_gain: Var,
    pub ua_bias: Var,
    pub ua_out: Var,
    pub ua_prior: Var,
    pub pw: Var,
    pub pw_bias: Var,
}

impl ParamVars {
    pub fn record(tape: &mut Tape, params: &ModelParams) -> Self {
        let mut d = |x: &Dense| DenseVars {
            w: tape.param(x.w.clone()),
            b: tape.param(x.b.clone()),
        };
        let mut layer = |l: &LayerParams| LayerVars {
            w1_ue: d(&l.w1_ue),
            w2_ue: d(&l.w2_ue),
            w1_bs: d(&l.w1_bs),
            w2_bs: d(&l.w2_bs),
        };
        let layers = [layer(&params.layers[0]), layer(&params.layers[1])];
        Self {
            layers,
            ua_ue: tape.param(params.ua_ue.clone()),
            ua_bs: tape.param(params.ua_bs.clone()),
            ua_gain: tape.param(params.ua_gain.clone()),
            ua_bias: tape.param(params.ua_bias.clone()),
            ua_out: tape.param(params.ua_out.clone()),
            ua_prior: tape.param(params.ua_prior.clone()),
            pw: tape.param(params.pw.clone()),
            pw_bias: tape.param(params.pw_bias.clone()),
        }
    }

    pub fn vars(&self) -> Vec<Var> {
        let mut out = Vec::new();
        for l in &self.layers {
            for d in [l.w1_ue, l.w2_ue, l.w1_bs, l.w2_bs] {
                out.push(d.w);
                out.push(d.b);
            }
        }
        out.extend([
            self.ua_ue,
            self.ua_bs,
            self.ua_gain,
            self.ua_bias,
            self.ua_out,
            self.ua_prior,
            self.pw,
            self.pw_bias,
        ]);
        out
    }

    /// Gradients in canonical order; zeros where a tensor had no path.
    pub fn gradients(&self, tape: &Tape, grads: &Gradients) -> Vec<Matrix> {
        self.vars()
            .into_iter()
            .map(|v| grads.get_or_zeros(v, tape.value(v).shape()))
            .collect()
    }
}

/// Tape handles of one forward pass.
#[derive(Clone, Copy, Debug)]
pub struct ForwardVars {
    /// Raw association logits `K x J`.
    pub z: Var,
    /// Row-standardized logits (zero off the edges).
    pub z_norm: Var,
    pub x_soft: Var,
    /// Transmit powers, `J x 1`.
    pub p: Var,
    pub h_ue: Var,
    pub h_bs: Var,
}

/// Plain outputs of a forward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelOutput {
    pub z: Matrix,
    pub z_norm: Matrix,
    /// `K x J`, rows sum to one; exactly zero off the edges.
    pub x_soft: Matrix,
    /// Per-BS power in `(0, p_max]`.
    pub p: Vec<f64>,
}

impl ModelOutput {
    pub fn soft_allocation(&self) -> Allocation {
        Allocation::soft(self.x_soft.clone(), self.p.clone())
    }

    pub fn hard_allocation(&self) -> Allocation {
        Allocation::hard(
            &self.x_soft.iter_rows().map(argmax_first).collect::<Vec<_>>(),
            self.x_soft.cols(),
            self.p.clone(),
        )
    }
}

fn sorted_desc(row: &[f64]) -> Vec<f64> {
    let mut v = row.to_vec();
    v.sort_unstable_by(|a, b| b.total_cmp(a));
    v
}

/// UE node inputs: each standardized gain row sorted in descending order.
pub fn ue_inputs(graph: &HeteroGraph) -> Matrix {
    let rows: Vec<Vec<f64>> = graph.ue_features.iter_rows().map(sorted_desc).collect();
    Matrix::from_rows(&rows)
}

/// BS node inputs: sorted gain column over active UEs plus `log10 p_max`.
pub fn bs_inputs(graph: &HeteroGraph) -> Matrix {
    let rows: Vec<Vec<f64>> = graph
        .bs_features
        .iter_rows()
        .zip(&graph.p_max)
        .map(|(r, &pm)| {
            let mut v = sorted_desc(r);
            v.push(math::log10(pm));
            v
        })
        .collect();
    Matrix::from_rows(&rows)
}

/// `log10(p_max_j g_ij)` for every pair, row-major, as a column.
pub fn received_power_column(graph: &HeteroGraph) -> Matrix {
    let j = graph.n_bs();
    let data = graph
        .gains
        .as_slice()
        .iter()
        .enumerate()
        .map(|(idx, &g)| math::log10(graph.p_max[idx % j] * g))
        .collect::<Vec<_>>();
    Matrix::from_vec(data.len(), 1, data)
}

fn aggregate(
    tape: &mut Tape,
    own: Var,
    neighbours: Var,
    groups: &[Vec<usize>],
    layer: DenseVars,
) -> Result<Var, GradError> {
    let agg = tape.mean_rows(neighbours, groups)?;
    let cat = tape.concat(&[own, agg])?;
    let lin = tape.matmul(cat, layer.w)?;
    let lin = tape.add_row(lin, layer.b)?;
    tape.relu(lin)
}

/// One HGSAGE layer for both node types. Returns the new `(h_ue, h_bs)`.
pub fn hgsage_layer(
    tape: &mut Tape,
    graph: &HeteroGraph,
    h_ue: Var,
    h_bs: Var,
    layer: &LayerVars,
) -> Result<(Var, Var), GradError> {
    let o_ue = aggregate(tape, h_ue, h_bs, &graph.nbr1_ue, layer.w1_ue)?;
    let s_ue = aggregate(tape, h_ue, h_ue, &graph.nbr2_ue, layer.w2_ue)?;
    let o_bs = aggregate(tape, h_bs, h_ue, &graph.nbr1_bs, layer.w1_bs)?;
    let s_bs = aggregate(tape, h_bs, h_bs, &graph.nbr2_bs, layer.w2_bs)?;
    let ue = tape.concat(&[o_ue, s_ue])?;
    let bs = tape.concat(&[o_bs, s_bs])?;
    Ok((tape.l2_normalize_rows(ue)?, tape.l2_normalize_rows(bs)?))
}

/// Records a full forward pass at temperature `t`.
pub fn forward_on_tape(
    tape: &mut Tape,
    graph: &HeteroGraph,
    pv: &ParamVars,
    dims: FeatureDims,
    t: f64,
) -> Result<ForwardVars, ModelError> {
    if !(t > 0.0 && t.is_finite()) {
        return Err(ModelError::Temperature(t));
    }
    let got = FeatureDims::of(graph);
    if got != dims {
        return Err(ModelError::Dims { expected: dims, got });
    }
    let (k, j) = (graph.n_ue(), graph.n_bs());
    let mut h_ue = tape.constant(ue_inputs(graph));
    let mut h_bs = tape.constant(bs_inputs(graph));
    for layer in &pv.layers {
        (h_ue, h_bs) = hgsage_layer(tape, graph, h_ue, h_bs, layer)?;
    }

    // Association head: z_ij = v . relu(U_ue h_i + U_bs h_j + u g_ij + b) + a log10(p_max_j g_ij).
    let a = tape.matmul(h_ue, pv.ua_ue)?;
    let b = tape.matmul(h_bs, pv.ua_bs)?;
    let b = tape.add_row(b, pv.ua_bias)?;
    let pair = tape.pairwise_add(a, b)?;
    let gain_col = tape.constant(Matrix::from_vec(k * j, 1, graph.ue_features.as_slice().to_vec()));
    let gain_term = tape.matmul(gain_col, pv.ua_gain)?;
    let pre = tape.add(pair, gain_term)?;
    let hidden = tape.relu(pre)?;
    let z_flat = tape.matmul(hidden, pv.ua_out)?;
    let rx = tape.constant(received_power_column(graph));
    let prior = tape.matmul(rx, pv.ua_prior)?;
    let z_flat = tape.add(z_flat, prior)?;
    let z = tape.reshape(z_flat, k, j)?;
    let z_norm = tape.standardize_rows(z, Some(&graph.adjacency), LOGIT_STD_EPS)?;
    let x_soft = tape.softmax_t(z_norm, t, Some(&graph.adjacency))?;

    // Power head: p_j = p_max_j * max(sigmoid(w . h_j + b), 1e-6).
    let s = tape.matmul(h_bs, pv.pw)?;
    let s = tape.add_row(s, pv.pw_bias)?;
    let s = tape.sigmoid(s)?;
    let s = tape.clamp_min(s, POWER_FLOOR)?;
    let pmax = tape.constant(Matrix::column(&graph.p_max));
    let p = tape.mul(s, pmax)?;

    Ok(ForwardVars {
        z,
        z_norm,
        x_soft,
        p,
        h_ue,
        h_bs,
    })
}

/// Inference: forward pass values only.
pub fn forward(graph: &HeteroGraph, params: &ModelParams, t: f64) -> Result<ModelOutput, ModelError> {
    let mut tape = Tape::new();
    let pv = ParamVars::record(&mut tape, params);
    let fv = forward_on_tape(&mut tape, graph, &pv, params.dims, t)?;
    Ok(ModelOutput {
        z: tape.value(fv.z).clone(),
        z_norm: tape.value(fv.z_norm).clone(),
        x_soft: tape.value(fv.x_soft).clone(),
        p: tape.value(fv.p).as_slice().to_vec(),
    })
}

/// One-hot rows at the row argmax, lowest index on ties.
pub fn harden(x_soft: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(x_soft.rows(), x_soft.cols());
    for (r, row) in x_soft.iter_rows().enumerate() {
        if !row.is_empty() {
            out[(r, argmax_first(row))] = 1.0;
        }
    }
    out
}

/// Zero-filled gradient list shaped like `params`.
pub fn zero_grads(params: &ModelParams) -> Vec<Matrix> {
    params
        .tensors()
        .iter()
        .map(|m| Matrix::zeros(m.rows(), m.cols()))
        .collect()
}

/// Adds `src` into `dst` elementwise.
pub fn accumulate(dst: &mut [Matrix], src: &[Matrix]) {
    for (d, s) in dst.iter_mut().zip(src) {
        d.add_assign(s);
    }
}
