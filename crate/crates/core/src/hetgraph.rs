//! Bipartite UE/BS graph for one event.
//!
//! A UE and a BS are joined when the UE can detect the BS (gain at or above
//! the detection threshold); a UE that detects nothing keeps its strongest
//! BS. One-order neighbours are the opposite node type, second-order
//! neighbours (neighbours of neighbours, minus the node itself) the same type.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::linalg::Matrix;
use crate::math;
use crate::radiomap::RadioMap;
use crate::rng::rng_from_seed;
use crate::scenario::Event;

/// Standardization constants for `log10(gain)` features, fitted once per
/// radio map.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureNorm {
    pub mean: f64,
    pub std: f64,
}

impl FeatureNorm {
    pub fn fit(map: &RadioMap) -> Self {
        let vals = map.gains.as_slice();
        if vals.is_empty() {
            return Self { mean: 0.0, std: 1.0 };
        }
        let n = vals.len() as f64;
        let mean = vals.iter().map(|&g| math::log10(g)).sum::<f64>() / n;
        let var = vals
            .iter()
            .map(|&g| {
                let d = math::log10(g) - mean;
                d * d
            })
            .sum::<f64>()
            / n;
        let std = math::sqrt(var);
        Self {
            mean,
            std: if std > 1e-12 { std } else { 1.0 },
        }
    }

    #[inline]
    pub fn apply(&self, gain: f64) -> f64 {
        (math::log10(gain) - self.mean) / self.std
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GraphConfig {
    /// Linear gain at which a UE detects a BS.
    pub detect_threshold: f64,
    /// Optional cap on every neighbour list, filled by seeded uniform sampling.
    pub max_neighbors: Option<usize>,
    pub sampling_seed: u64,
}

impl Default for GraphConfig {
    fn default() -> Self {
        Self {
            detect_threshold: math::db_to_linear(-110.0),
            max_neighbors: None,
            sampling_seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GraphError {
    #[error("event has no active UEs")]
    EmptyEvent,
    #[error("radio map has no sites")]
    NoSites,
    #[error("grid index {0} is outside the radio map")]
    IndexOutOfRange(usize),
    #[error("expected {expected} site powers, got {got}")]
    SiteCount { expected: usize, got: usize },
    #[error("unknown node {0:?}")]
    UnknownNode(Node),
    #[error("neighbourhood order must be 1 or 2, got {0}")]
    BadOrder(u8),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Node {
    Ue(usize),
    Bs(usize),
}

#[derive(Clone, Debug, PartialEq)]
pub struct HeteroGraph {
    /// Grid index of each UE node.
    pub ue_ids: Vec<usize>,
    /// Site id of each BS node.
    pub bs_ids: Vec<usize>,
    /// Raw linear gains, `K_a x J`.
    pub gains: Matrix,
    /// Per-site power ceiling (W).
    pub p_max: Vec<f64>,
    /// Standardized `log10` gains with non-edges zeroed, `K_a x J`.
    pub ue_features: Matrix,
    /// Transpose of `ue_features`, `J x K_a`.
    pub bs_features: Matrix,
    /// 1.0 on edges, 0.0 elsewhere, `K_a x J`.
    pub adjacency: Matrix,
    pub nbr1_ue: Vec<Vec<usize>>,
    pub nbr2_ue: Vec<Vec<usize>>,
    pub nbr1_bs: Vec<Vec<usize>>,
    pub nbr2_bs: Vec<Vec<usize>>,
}

impl HeteroGraph {
    pub fn n_ue(&self) -> usize {
        self.ue_ids.len()
    }

    pub fn n_bs(&self) -> usize {
        self.bs_ids.len()
    }

    #[inline]
    pub fn has_edge(&self, ue: usize, bs: usize) -> bool {
        self.adjacency[(ue, bs)] != 0.0
    }

    pub fn edge_count(&self) -> usize {
        self.adjacency.as_slice().iter().filter(|&&a| a != 0.0).count()
    }

    /// `(ue, bs)` pairs in row-major order.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.nbr1_ue
            .iter()
            .enumerate()
            .flat_map(|(i, bs)| bs.iter().map(move |&j| (i, j)))
    }

    /// Sorted neighbour list of `node`. Order 1 yields opposite-type
    /// indices, order 2 same-type indices without the node itself.
    pub fn neighbors(&self, node: Node, order: u8) -> Result<&[usize], GraphError> {
        let lists = match (node, order) {
            (Node::Ue(_), 1) => &self.nbr1_ue,
            (Node::Ue(_), 2) => &self.nbr2_ue,
            (Node::Bs(_), 1) => &self.nbr1_bs,
            (Node::Bs(_), 2) => &self.nbr2_bs,
            (_, o) => return Err(GraphError::BadOrder(o)),
        };
        let idx = match node {
            Node::Ue(i) | Node::Bs(i) => i,
        };
        lists
            .get(idx)
            .map(Vec::as_slice)
            .ok_or(GraphError::UnknownNode(node))
    }

    /// Relabels nodes: new UE `a` is old UE `ue_perm[a]`, new BS `b` is old
    /// BS `bs_perm[b]`.
    pub fn permuted(&self, ue_perm: &[usize], bs_perm: &[usize]) -> HeteroGraph {
        let k = self.n_ue();
        let j = self.n_bs();
        assert!(is_permutation(ue_perm, k) && is_permutation(bs_perm, j));
        let mut ue_inv = vec![0; k];
        for (new, &old) in ue_perm.iter().enumerate() {
            ue_inv[old] = new;
        }
        let mut bs_inv = vec![0; j];
        for (new, &old) in bs_perm.iter().enumerate() {
            bs_inv[old] = new;
        }
        let remap = |m: &Matrix| m.select_rows(ue_perm).select_cols(bs_perm);
        let relist = |lists: &[Vec<usize>], order: &[usize], inv: &[usize]| -> Vec<Vec<usize>> {
            order
                .iter()
                .map(|&old| {
                    let mut v: Vec<usize> = lists[old].iter().map(|&x| inv[x]).collect();
                    v.sort_unstable();
                    v
                })
                .collect()
        };
        let ue_features = remap(&self.ue_features);
        HeteroGraph {
            ue_ids: ue_perm.iter().map(|&o| self.ue_ids[o]).collect(),
            bs_ids: bs_perm.iter().map(|&o| self.bs_ids[o]).collect(),
            gains: remap(&self.gains),
            p_max: bs_perm.iter().map(|&o| self.p_max[o]).collect(),
            bs_features: ue_features.transpose(),
            ue_features,
            adjacency: remap(&self.adjacency),
            nbr1_ue: relist(&self.nbr1_ue, ue_perm, &bs_inv),
            nbr2_ue: relist(&self.nbr2_ue, ue_perm, &ue_inv),
            nbr1_bs: relist(&self.nbr1_bs, bs_perm, &ue_inv),
            nbr2_bs: relist(&self.nbr2_bs, bs_perm, &bs_inv),
        }
    }
}

fn is_permutation(p: &[usize], n: usize) -> bool {
    if p.len() != n {
        return false;
    }
    let mut seen = vec![false; n];
    p.iter().all(|&i| i < n && !core::mem::replace(&mut seen[i], true))
}

/// Builds the event graph from the radio map.
pub fn build_graph(
    map: &RadioMap,
    event: &Event,
    p_max: &[f64],
    norm: &FeatureNorm,
    config: &GraphConfig,
) -> Result<HeteroGraph, GraphError> {
    if event.active_ue.is_empty() {
        return Err(GraphError::EmptyEvent);
    }
    let j = map.n_sites();
    if j == 0 {
        return Err(GraphError::NoSites);
    }
    if p_max.len() != j {
        return Err(GraphError::SiteCount {
            expected: j,
            got: p_max.len(),
        });
    }
    if let Some(&bad) = event.active_ue.iter().find(|&&i| i >= map.n_points()) {
        return Err(GraphError::IndexOutOfRange(bad));
    }
    let gains = map.rows_for(&event.active_ue);
    build_graph_from_gains(gains, event.active_ue.clone(), p_max.to_vec(), norm, config)
}

/// Graph over an explicit `K x J` gain matrix.
pub fn build_graph_from_gains(
    gains: Matrix,
    ue_ids: Vec<usize>,
    p_max: Vec<f64>,
    norm: &FeatureNorm,
    config: &GraphConfig,
) -> Result<HeteroGraph, GraphError> {
    let (k, j) = gains.shape();
    if k == 0 {
        return Err(GraphError::EmptyEvent);
    }
    if j == 0 {
        return Err(GraphError::NoSites);
    }
    if p_max.len() != j {
        return Err(GraphError::SiteCount {
            expected: j,
            got: p_max.len(),
        });
    }
    let mut adjacency = Matrix::zeros(k, j);
    for i in 0..k {
        let row = gains.row(i);
        let mut any = false;
        for (c, &g) in row.iter().enumerate() {
            if g >= config.detect_threshold {
                adjacency[(i, c)] = 1.0;
                any = true;
            }
        }
        if !any {
            adjacency[(i, argmax_first(row))] = 1.0;
        }
    }

    let mut ue_features = Matrix::zeros(k, j);
    for i in 0..k {
        for c in 0..j {
            if adjacency[(i, c)] != 0.0 {
                ue_features[(i, c)] = norm.apply(gains[(i, c)]);
            }
        }
    }

    let mut nbr1_ue: Vec<Vec<usize>> = (0..k)
        .map(|i| (0..j).filter(|&c| adjacency[(i, c)] != 0.0).collect())
        .collect();
    let mut nbr1_bs: Vec<Vec<usize>> = (0..j)
        .map(|c| (0..k).filter(|&i| adjacency[(i, c)] != 0.0).collect())
        .collect();
    let mut nbr2_ue = second_order(&nbr1_ue, &nbr1_bs, k);
    let mut nbr2_bs = second_order(&nbr1_bs, &nbr1_ue, j);

    if let Some(cap) = config.max_neighbors {
        let mut rng = rng_from_seed(config.sampling_seed);
        for lists in [&mut nbr1_ue, &mut nbr2_ue, &mut nbr1_bs, &mut nbr2_bs] {
            for list in lists.iter_mut() {
                if list.len() > cap {
                    let mut keep: Vec<usize> = rand::seq::index::sample(&mut rng, list.len(), cap)
                        .into_iter()
                        .map(|p| list[p])
                        .collect();
                    keep.sort_unstable();
                    *list = keep;
                }
            }
        }
    }

    Ok(HeteroGraph {
        bs_ids: (0..j).collect(),
        ue_ids,
        bs_features: ue_features.transpose(),
        ue_features,
        gains,
        p_max,
        adjacency,
        nbr1_ue,
        nbr2_ue,
        nbr1_bs,
        nbr2_bs,
    })
}

/// Same-type two-hop neighbourhoods, excluding the node itself.
fn second_order(own: &[Vec<usize>], other: &[Vec<usize>], n: usize) -> Vec<Vec<usize>> {
    let mut mark = vec![false; n];
    own.iter()
        .enumerate()
        .map(|(v, mids)| {
            let mut out = Vec::new();
            for &m in mids {
                for &u in &other[m] {
                    if u != v && !mark[u] {
                        mark[u] = true;
                        out.push(u);
                    }
                }
            }
            for &u in &out {
                mark[u] = false;
            }
            out.sort_unstable();
            out
        })
        .collect()
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax_first(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate().skip(1) {
        if x > xs[best] {
            best = i;
        }
    }
    best
}
