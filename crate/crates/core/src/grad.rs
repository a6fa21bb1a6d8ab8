//! Define-by-run reverse-mode differentiation over dense matrices.
//!
//! A [`Tape`] records every operation of one forward pass; [`Tape::backward`]
//! walks the records in reverse and accumulates exact vector-Jacobian
//! products. Tapes are rebuilt for every forward pass, so graph shapes may
//! change from one event to the next.
//!
//! ```
//! use hudn_core::grad::Tape;
//! use hudn_core::Matrix;
//!
//! let mut tape = Tape::new();
//! let w = tape.param(Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]));
//! let loss = tape.sum(w).unwrap();
//! let grads = tape.backward(loss).unwrap();
//! assert_eq!(grads.get(w).unwrap().as_slice(), &[1.0; 4]);
//! ```

use alloc::vec;
use alloc::vec::Vec;

use crate::linalg::Matrix;
use crate::math;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum GradError {
    #[error("{op}: shape mismatch {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: (usize, usize),
        rhs: (usize, usize),
    },
    #[error("softmax temperature must be positive, got {0}")]
    Temperature(f64),
    #[error("{0}: non-finite value")]
    NonFinite(&'static str),
    #[error("backward needs a 1x1 loss, got {0:?}")]
    NonScalar((usize, usize)),
    #[error("{0}: a row has no admissible entries")]
    EmptyMaskRow(&'static str),
    #[error("optimizer: learning rate must be non-negative and finite, got {0}")]
    LearningRate(f64),
    #[error("optimizer: parameter {0} has a non-finite gradient")]
    NonFiniteGradient(usize),
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    ConcatCols(Vec<Var>),
    SegmentMean(Var, Vec<Vec<usize>>),
    PairwiseAdd(Var, Var),
    Reshape(Var),
    Relu(Var),
    Sigmoid(Var),
    Log(Var),
    LogClamped(Var, f64),
    ClampMin(Var, f64),
    Softmax {
        x: Var,
        t: f64,
    },
    StandardizeRows {
        x: Var,
        mask: Option<Matrix>,
        eps: f64,
    },
    L2NormalizeRows(Var),
    Sum(Var),
    StopGradient,
    HardRate {
        p: Var,
        link: HardLink,
    },
}

/// Fixed data of the hard-association rate: the serving BS of each UE,
/// the gains and the channel constants.
#[derive(Debug, Clone)]
pub struct HardLink {
    pub serving: Vec<usize>,
    pub gains: Matrix,
    pub bandwidth: f64,
    pub sigma2: f64,
}

impl HardLink {
    fn loads(&self) -> Vec<usize> {
        let mut loads = vec![0; self.gains.cols()];
        for &s in &self.serving {
            loads[s] += 1;
        }
        loads
    }

    /// Per-UE `(signal, interference + noise)` at power `p`.
    fn terms(&self, p: &[f64]) -> Vec<(f64, f64)> {
        self.serving
            .iter()
            .enumerate()
            .map(|(i, &s)| {
                let g = self.gains.row(i);
                // Summed directly: `total - signal` cancels badly at high SINR.
                let interference: f64 = p
                    .iter()
                    .zip(g)
                    .enumerate()
                    .filter(|&(n, _)| n != s)
                    .map(|(_, (a, b))| a * b)
                    .sum::<f64>()
                    + self.sigma2;
                let signal = p[s] * g[s];
                (signal, interference)
            })
            .collect()
    }
}

struct Record {
    value: Matrix,
    op: Op,
    needs_grad: bool,
}

/// Recorded computation.
#[derive(Default)]
pub struct Tape {
    records: Vec<Record>,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
}

impl Gradients {
    /// Gradient of the loss with respect to `v`; `None` when no path exists.
    pub fn get(&self, v: Var) -> Option<&Matrix> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Like [`Gradients::get`] but returns zeros of `shape` when absent.
    pub fn get_or_zeros(&self, v: Var, shape: (usize, usize)) -> Matrix {
        self.get(v)
            .cloned()
            .unwrap_or_else(|| Matrix::zeros(shape.0, shape.1))
    }
}

fn check_same(op: &'static str, a: &Matrix, b: &Matrix) -> Result<(), GradError> {
    if a.shape() != b.shape() {
        return Err(GradError::Shape {
            op,
            lhs: a.shape(),
            rhs: b.shape(),
        });
    }
    Ok(())
}

fn check_mask(op: &'static str, x: &Matrix, mask: Option<&Matrix>) -> Result<(), GradError> {
    if let Some(m) = mask {
        check_same(op, x, m)?;
        for r in 0..x.rows() {
            if x.cols() > 0 && m.row(r).iter().all(|&v| v == 0.0) {
                return Err(GradError::EmptyMaskRow(op));
            }
        }
    }
    Ok(())
}

#[inline]
fn admitted(mask: Option<&Matrix>, r: usize, c: usize) -> bool {
    mask.map_or(true, |m| m[(r, c)] != 0.0)
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.records[v.0].value
    }

    /// Scalar value of a `1 x 1` var.
    pub fn scalar(&self, v: Var) -> f64 {
        self.records[v.0].value.as_slice()[0]
    }

    fn push(&mut self, name: &'static str, value: Matrix, op: Op, needs_grad: bool) -> Result<Var, GradError> {
        if !value.all_finite() {
            return Err(GradError::NonFinite(name));
        }
        self.records.push(Record {
            value,
            op,
            needs_grad,
        });
        Ok(Var(self.records.len() - 1))
    }

    fn ng(&self, v: Var) -> bool {
        self.records[v.0].needs_grad
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Matrix) -> Var {
        self.records.push(Record {
            value,
            op: Op::Leaf,
            needs_grad: true,
        });
        Var(self.records.len() - 1)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Matrix) -> Var {
        self.records.push(Record {
            value,
            op: Op::Leaf,
            needs_grad: false,
        });
        Var(self.records.len() - 1)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, GradError> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.cols() != vb.rows() {
            return Err(GradError::Shape {
                op: "matmul",
                lhs: va.shape(),
                rhs: vb.shape(),
            });
        }
        let out = va.matmul(vb);
        let ng = self.ng(a) || self.ng(b);
        self.push("matmul", out, Op::MatMul(a, b), ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, GradError> {
        check_same("add", self.value(a), self.value(b))?;
        let out = self.value(a).zip_map(self.value(b), |x, y| x + y);
        let ng = self.ng(a) || self.ng(b);
        self.push("add", out, Op::Add(a, b), ng)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, GradError> {
        check_same("sub", self.value(a), self.value(b))?;
        let out = self.value(a).zip_map(self.value(b), |x, y| x - y);
        let ng = self.ng(a) || self.ng(b);
        self.push("sub", out, Op::Sub(a, b), ng)
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, GradError> {
        check_same("mul", self.value(a), self.value(b))?;
        let out = self.value(a).zip_map(self.value(b), |x, y| x * y);
        let ng = self.ng(a) || self.ng(b);
        self.push("mul", out, Op::Mul(a, b), ng)
    }

    /// Adds the `1 x n` row `b` to every row of `x`.
    pub fn add_row(&mut self, x: Var, b: Var) -> Result<Var, GradError> {
        let (vx, vb) = (self.value(x), self.value(b));
        if vb.rows() != 1 || vb.cols() != vx.cols() {
            return Err(GradError::Shape {
                op: "add_row",
                lhs: vx.shape(),
                rhs: vb.shape(),
            });
        }
        let mut out = vx.clone();
        for r in 0..out.rows() {
            for (o, &bv) in out.row_mut(r).iter_mut().zip(vb.as_slice()) {
                *o += bv;
            }
        }
        let ng = self.ng(x) || self.ng(b);
        self.push("add_row", out, Op::AddRow(x, b), ng)
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Result<Var, GradError> {
        let out = self.value(x).map(|v| v * c);
        let ng = self.ng(x);
        self.push("scale", out, Op::Scale(x, c), ng)
    }

    /// Horizontal concatenation.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var, GradError> {
        let rows = parts.first().map_or(0, |&p| self.value(p).rows());
        let mut cols = 0;
        for &p in parts {
            let v = self.value(p);
            if v.rows() != rows {
                return Err(GradError::Shape {
                    op: "concat",
                    lhs: (rows, cols),
                    rhs: v.shape(),
                });
            }
            cols += v.cols();
        }
        let mut out = Matrix::zeros(rows, cols);
        let mut off = 0;
        for &p in parts {
            let v = self.value(p);
            for r in 0..rows {
                out.row_mut(r)[off..off + v.cols()].copy_from_slice(v.row(r));
            }
            off += v.cols();
        }
        let ng = parts.iter().any(|&p| self.ng(p));
        self.push("concat", out, Op::ConcatCols(parts.to_vec()), ng)
    }

    /// Row `g` of the result is the mean of the rows of `x` listed in
    /// `groups[g]`, or zeros for an empty group.
    pub fn mean_rows(&mut self, x: Var, groups: &[Vec<usize>]) -> Result<Var, GradError> {
        let vx = self.value(x);
        let d = vx.cols();
        let mut out = Matrix::zeros(groups.len(), d);
        for (g, members) in groups.iter().enumerate() {
            if members.is_empty() {
                continue;
            }
            let o = out.row_mut(g);
            for &m in members {
                if m >= vx.rows() {
                    return Err(GradError::Shape {
                        op: "mean_rows",
                        lhs: vx.shape(),
                        rhs: (m, 0),
                    });
                }
                for (ov, &xv) in o.iter_mut().zip(vx.row(m)) {
                    *ov += xv;
                }
            }
            let inv = 1.0 / members.len() as f64;
            for ov in o.iter_mut() {
                *ov *= inv;
            }
        }
        let ng = self.ng(x);
        self.push("mean_rows", out, Op::SegmentMean(x, groups.to_vec()), ng)
    }

    /// `(K*J) x d` matrix whose row `i*J + j` is `a_i + b_j`.
    pub fn pairwise_add(&mut self, a: Var, b: Var) -> Result<Var, GradError> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.cols() != vb.cols() {
            return Err(GradError::Shape {
                op: "pairwise_add",
                lhs: va.shape(),
                rhs: vb.shape(),
            });
        }
        let (k, j, d) = (va.rows(), vb.rows(), va.cols());
        let mut out = Matrix::zeros(k * j, d);
        for i in 0..k {
            let ar = va.row(i);
            for c in 0..j {
                let br = vb.row(c);
                for ((o, &x), &y) in out.row_mut(i * j + c).iter_mut().zip(ar).zip(br) {
                    *o = x + y;
                }
            }
        }
        let ng = self.ng(a) || self.ng(b);
        self.push("pairwise_add", out, Op::PairwiseAdd(a, b), ng)
    }

    /// Same data, new shape.
    pub fn reshape(&mut self, x: Var, rows: usize, cols: usize) -> Result<Var, GradError> {
        let vx = self.value(x);
        if vx.len() != rows * cols {
            return Err(GradError::Shape {
                op: "reshape",
                lhs: vx.shape(),
                rhs: (rows, cols),
            });
        }
        let out = Matrix::from_vec(rows, cols, vx.as_slice().to_vec());
        let ng = self.ng(x);
        self.push("reshape", out, Op::Reshape(x), ng)
    }

    pub fn relu(&mut self, x: Var) -> Result<Var, GradError> {
        let out = self.value(x).map(|v| if v > 0.0 { v } else { 0.0 });
        let ng = self.ng(x);
        self.push("relu", out, Op::Relu(x), ng)
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var, GradError> {
        let out = self.value(x).map(math::sigmoid);
        let ng = self.ng(x);
        self.push("sigmoid", out, Op::Sigmoid(x), ng)
    }

    pub fn log(&mut self, x: Var) -> Result<Var, GradError> {
        let out = self.value(x).map(math::log);
        let ng = self.ng(x);
        self.push("log", out, Op::Log(x), ng)
    }

    /// `ln(max(x, floor))`; zero gradient below the floor.
    pub fn log_clamped(&mut self, x: Var, floor: f64) -> Result<Var, GradError> {
        let out = self.value(x).map(|v| math::log(v.max(floor)));
        let ng = self.ng(x);
        self.push("log_clamped", out, Op::LogClamped(x, floor), ng)
    }

    /// `max(x, floor)`; zero gradient below the floor.
    pub fn clamp_min(&mut self, x: Var, floor: f64) -> Result<Var, GradError> {
        let out = self.value(x).map(|v| v.max(floor));
        let ng = self.ng(x);
        self.push("clamp_min", out, Op::ClampMin(x, floor), ng)
    }

    /// Row-wise `softmax(x / t)`. Entries where `mask` is zero are excluded
    /// and come out exactly zero.
    pub fn softmax_t(&mut self, x: Var, t: f64, mask: Option<&Matrix>) -> Result<Var, GradError> {
        if !(t > 0.0 && t.is_finite()) {
            return Err(GradError::Temperature(t));
        }
        let vx = self.value(x);
        check_mask("softmax_t", vx, mask)?;
        let out = softmax_rows(vx, t, mask);
        let ng = self.ng(x);
        self.push(
            "softmax_t",
            out,
            Op::Softmax { x, t },
            ng,
        )
    }

    /// Standardizes each row over its admitted entries to zero mean and
    /// unit variance: `(x - mean) / sqrt(var + eps)`. Other entries are 0.
    pub fn standardize_rows(&mut self, x: Var, mask: Option<&Matrix>, eps: f64) -> Result<Var, GradError> {
        let vx = self.value(x);
        check_mask("standardize_rows", vx, mask)?;
        let mut out = Matrix::zeros(vx.rows(), vx.cols());
        for r in 0..vx.rows() {
            let (mean, inv_std) = masked_moments(vx, mask, r, eps);
            for c in 0..vx.cols() {
                if admitted(mask, r, c) {
                    out[(r, c)] = (vx[(r, c)] - mean) * inv_std;
                }
            }
        }
        let ng = self.ng(x);
        self.push(
            "standardize_rows",
            out,
            Op::StandardizeRows {
                x,
                mask: mask.cloned(),
                eps,
            },
            ng,
        )
    }

    /// Scales every row to unit L2 norm; all-zero rows stay zero.
    pub fn l2_normalize_rows(&mut self, x: Var) -> Result<Var, GradError> {
        let vx = self.value(x);
        let mut out = vx.clone();
        for r in 0..out.rows() {
            let row = out.row_mut(r);
            let n = math::sqrt(row.iter().map(|v| v * v).sum());
            if n > 0.0 {
                for v in row.iter_mut() {
                    *v /= n;
                }
            }
        }
        let ng = self.ng(x);
        self.push("l2_normalize_rows", out, Op::L2NormalizeRows(x), ng)
    }

    /// Sum of all entries as a `1 x 1` var.
    pub fn sum(&mut self, x: Var) -> Result<Var, GradError> {
        let out = Matrix::filled(1, 1, self.value(x).sum());
        let ng = self.ng(x);
        self.push("sum", out, Op::Sum(x), ng)
    }

    /// Identity in the forward pass, blocks every gradient.
    pub fn stop_gradient(&mut self, x: Var) -> Result<Var, GradError> {
        let out = self.value(x).clone();
        self.push("stop_gradient", out, Op::StopGradient, false)
    }

    /// Sum of effective rates `sum_i (B / K_s) log2(1 + SINR_i)` for a fixed
    /// hard association, differentiable in the `J x 1` power column `p`.
    pub fn hard_rate(&mut self, p: Var, link: HardLink) -> Result<Var, GradError> {
        let vp = self.value(p);
        let j = link.gains.cols();
        if vp.shape() != (j, 1) || link.serving.len() != link.gains.rows() {
            return Err(GradError::Shape {
                op: "hard_rate",
                lhs: vp.shape(),
                rhs: link.gains.shape(),
            });
        }
        if link.serving.iter().any(|&s| s >= j) {
            return Err(GradError::Shape {
                op: "hard_rate",
                lhs: (link.serving.len(), j),
                rhs: link.gains.shape(),
            });
        }
        let loads = link.loads();
        let total: f64 = link
            .terms(vp.as_slice())
            .iter()
            .zip(&link.serving)
            .map(|(&(s, i), &srv)| link.bandwidth / loads[srv] as f64 * math::log2_1p(s / i))
            .sum();
        let ng = self.ng(p);
        self.push("hard_rate", Matrix::filled(1, 1, total), Op::HardRate { p, link }, ng)
    }

    /// Reverse sweep from the `1 x 1` var `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients, GradError> {
        let shape = self.value(loss).shape();
        if shape != (1, 1) {
            return Err(GradError::NonScalar(shape));
        }
        let n = loss.0 + 1;
        let mut grads: Vec<Option<Matrix>> = vec![None; self.records.len()];
        grads[loss.0] = Some(Matrix::filled(1, 1, 1.0));
        for idx in (0..n).rev() {
            let rec = &self.records[idx];
            if !rec.needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        if grads.iter().flatten().any(|g| !g.all_finite()) {
            return Err(GradError::NonFinite("backward"));
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, idx: usize, g: &Matrix, grads: &mut [Option<Matrix>]) {
        let rec = &self.records[idx];
        let y = &rec.value;
        let mut acc = |v: Var, delta: Matrix| {
            if !self.records[v.0].needs_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&delta),
                slot @ None => *slot = Some(delta),
            }
        };
        match &rec.op {
            Op::Leaf | Op::StopGradient => {}
            Op::MatMul(a, b) => {
                if self.ng(*a) {
                    acc(*a, g.matmul_t(self.value(*b)));
                }
                if self.ng(*b) {
                    acc(*b, self.value(*a).t_matmul(g));
                }
            }
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::Sub(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.map(|v| -v));
            }
            Op::Mul(a, b) => {
                if self.ng(*a) {
                    acc(*a, g.zip_map(self.value(*b), |x, y| x * y));
                }
                if self.ng(*b) {
                    acc(*b, g.zip_map(self.value(*a), |x, y| x * y));
                }
            }
            Op::AddRow(x, b) => {
                acc(*x, g.clone());
                if self.ng(*b) {
                    let mut db = Matrix::zeros(1, g.cols());
                    for r in 0..g.rows() {
                        for (d, &v) in db.as_mut_slice().iter_mut().zip(g.row(r)) {
                            *d += v;
                        }
                    }
                    acc(*b, db);
                }
            }
            Op::Scale(x, c) => acc(*x, g.map(|v| v * c)),
            Op::ConcatCols(parts) => {
                let mut off = 0;
                for &p in parts {
                    let w = self.value(p).cols();
                    if self.ng(p) {
                        let mut d = Matrix::zeros(g.rows(), w);
                        for r in 0..g.rows() {
                            d.row_mut(r).copy_from_slice(&g.row(r)[off..off + w]);
                        }
                        acc(p, d);
                    }
                    off += w;
                }
            }
            Op::SegmentMean(x, groups) => {
                let vx = self.value(*x);
                let mut d = Matrix::zeros(vx.rows(), vx.cols());
                for (gi, members) in groups.iter().enumerate() {
                    if members.is_empty() {
                        continue;
                    }
                    let inv = 1.0 / members.len() as f64;
                    for &m in members {
                        for (dv, &gv) in d.row_mut(m).iter_mut().zip(g.row(gi)) {
                            *dv += gv * inv;
                        }
                    }
                }
                acc(*x, d);
            }
            Op::PairwiseAdd(a, b) => {
                let (k, j) = (self.value(*a).rows(), self.value(*b).rows());
                let d = g.cols();
                let mut da = Matrix::zeros(k, d);
                let mut db = Matrix::zeros(j, d);
                for i in 0..k {
                    for c in 0..j {
                        let gr = g.row(i * j + c);
                        for (x, &v) in da.row_mut(i).iter_mut().zip(gr) {
                            *x += v;
                        }
                        for (x, &v) in db.row_mut(c).iter_mut().zip(gr) {
                            *x += v;
                        }
                    }
                }
                acc(*a, da);
                acc(*b, db);
            }
            Op::Reshape(x) => {
                let (r, c) = self.value(*x).shape();
                acc(*x, Matrix::from_vec(r, c, g.as_slice().to_vec()));
            }
            Op::Relu(x) => acc(*x, g.zip_map(self.value(*x), |gv, xv| if xv > 0.0 { gv } else { 0.0 })),
            Op::Sigmoid(x) => acc(*x, g.zip_map(y, |gv, s| gv * s * (1.0 - s))),
            Op::Log(x) => acc(*x, g.zip_map(self.value(*x), |gv, xv| gv / xv)),
            Op::LogClamped(x, floor) => acc(
                *x,
                g.zip_map(self.value(*x), |gv, xv| if xv >= *floor { gv / xv } else { 0.0 }),
            ),
            Op::ClampMin(x, floor) => acc(
                *x,
                g.zip_map(self.value(*x), |gv, xv| if xv >= *floor { gv } else { 0.0 }),
            ),
            Op::Softmax { x, t } => {
                // dx_j = (1/T) y_j (g_j - sum_k y_k g_k); masked y are zero.
                let mut d = Matrix::zeros(y.rows(), y.cols());
                for r in 0..y.rows() {
                    let yr = y.row(r);
                    let gr = g.row(r);
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for ((dv, &yv), &gv) in d.row_mut(r).iter_mut().zip(yr).zip(gr) {
                        *dv = yv * (gv - dot) / t;
                    }
                }
                acc(*x, d);
            }
            Op::StandardizeRows { x, mask, eps } => {
                let vx = self.value(*x);
                let mask = mask.as_ref();
                let mut d = Matrix::zeros(vx.rows(), vx.cols());
                for r in 0..vx.rows() {
                    let (_, inv_std) = masked_moments(vx, mask, r, *eps);
                    let mut m = 0usize;
                    let mut mean_g = 0.0;
                    let mut mean_gy = 0.0;
                    for c in 0..vx.cols() {
                        if admitted(mask, r, c) {
                            m += 1;
                            mean_g += g[(r, c)];
                            mean_gy += g[(r, c)] * y[(r, c)];
                        }
                    }
                    if m == 0 {
                        continue;
                    }
                    mean_g /= m as f64;
                    mean_gy /= m as f64;
                    for c in 0..vx.cols() {
                        if admitted(mask, r, c) {
                            d[(r, c)] = inv_std * (g[(r, c)] - mean_g - y[(r, c)] * mean_gy);
                        }
                    }
                }
                acc(*x, d);
            }
            Op::L2NormalizeRows(x) => {
                let vx = self.value(*x);
                let mut d = Matrix::zeros(vx.rows(), vx.cols());
                for r in 0..vx.rows() {
                    let n = math::sqrt(vx.row(r).iter().map(|v| v * v).sum());
                    if n == 0.0 {
                        continue;
                    }
                    let yr = y.row(r);
                    let gr = g.row(r);
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    for ((dv, &yv), &gv) in d.row_mut(r).iter_mut().zip(yr).zip(gr) {
                        *dv = (gv - yv * dot) / n;
                    }
                }
                acc(*x, d);
            }
            Op::Sum(x) => {
                let (r, c) = self.value(*x).shape();
                acc(*x, Matrix::filled(r, c, g.as_slice()[0]));
            }
            Op::HardRate { p, link } => {
                let vp = self.value(*p).as_slice();
                let loads = link.loads();
                let up = g.as_slice()[0];
                let mut d = Matrix::zeros(vp.len(), 1);
                for (i, ((signal, interf), &srv)) in
                    link.terms(vp).into_iter().zip(&link.serving).enumerate()
                {
                    let c = up * link.bandwidth / (loads[srv] as f64 * math::LN_2);
                    let gr = link.gains.row(i);
                    let denom = interf + signal;
                    for (n, dv) in d.as_mut_slice().iter_mut().enumerate() {
                        if n == srv {
                            *dv += c * gr[n] / denom;
                        } else {
                            *dv -= c * signal * gr[n] / (interf * denom);
                        }
                    }
                }
                acc(*p, d);
            }
        }
    }
}

fn masked_moments(x: &Matrix, mask: Option<&Matrix>, r: usize, eps: f64) -> (f64, f64) {
    let mut m = 0usize;
    let mut sum = 0.0;
    for c in 0..x.cols() {
        if admitted(mask, r, c) {
            m += 1;
            sum += x[(r, c)];
        }
    }
    if m == 0 {
        return (0.0, 0.0);
    }
    let mean = sum / m as f64;
    let mut var = 0.0;
    for c in 0..x.cols() {
        if admitted(mask, r, c) {
            let d = x[(r, c)] - mean;
            var += d * d;
        }
    }
    var /= m as f64;
    (mean, 1.0 / math::sqrt(var + eps))
}

/// Row-wise temperature softmax with optional mask; plain-value version of
/// [`Tape::softmax_t`].
pub fn softmax_rows(x: &Matrix, t: f64, mask: Option<&Matrix>) -> Matrix {
    let mut out = Matrix::zeros(x.rows(), x.cols());
    for r in 0..x.rows() {
        let mut mx = f64::NEG_INFINITY;
        for c in 0..x.cols() {
            if admitted(mask, r, c) {
                mx = mx.max(x[(r, c)]);
            }
        }
        if mx == f64::NEG_INFINITY {
            continue;
        }
        let mut total = 0.0;
        for c in 0..x.cols() {
            if admitted(mask, r, c) {
                let e = math::exp((x[(r, c)] - mx) / t);
                out[(r, c)] = e;
                total += e;
            }
        }
        for v in out.row_mut(r) {
            *v /= total;
        }
    }
    out
}

/// Jacobian `d softmax_T(z) / d z` of one row: `x_i (1 - x_i) / T` on the
/// diagonal and `-x_i x_j / T` off it.
pub fn softmax_jacobian(z: &[f64], t: f64) -> Matrix {
    let x = softmax_rows(&Matrix::row_vector(z), t, None);
    let x = x.as_slice();
    let n = z.len();
    let mut jac = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            jac[(i, j)] = if i == j {
                x[i] * (1.0 - x[i]) / t
            } else {
                -x[i] * x[j] / t
            };
        }
    }
    jac
}

/// Adam with bias-corrected moments.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Matrix>,
    v: Vec<Matrix>,
}

impl Default for Adam {
    fn default() -> Self {
        Self::new(0.9, 0.999, 1e-8)
    }
}

impl Adam {
    pub fn new(beta1: f64, beta2: f64, eps: f64) -> Self {
        Self {
            beta1,
            beta2,
            eps,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One update of `params` (in place) against `grads`, same order.
    pub fn step(&mut self, params: &mut [&mut Matrix], grads: &[Matrix], lr: f64) -> Result<(), GradError> {
        if !(lr >= 0.0 && lr.is_finite()) {
            return Err(GradError::LearningRate(lr));
        }
        assert_eq!(params.len(), grads.len(), "adam: params/grads length mismatch");
        if let Some(bad) = grads.iter().position(|g| !g.all_finite()) {
            return Err(GradError::NonFiniteGradient(bad));
        }
        if self.m.is_empty() {
            self.m = params.iter().map(|p| Matrix::zeros(p.rows(), p.cols())).collect();
            self.v = self.m.clone();
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - libm::pow(self.beta1, t as f64);
        let bc2 = 1.0 - libm::pow(self.beta2, t as f64);
        for (k, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let m = self.m[k].as_mut_slice();
            let v = self.v[k].as_mut_slice();
            for (((pv, &gv), mv), vv) in p.as_mut_slice().iter_mut().zip(g.as_slice()).zip(m).zip(v) {
                *mv = self.beta1 * *mv + (1.0 - self.beta1) * gv;
                *vv = self.beta2 * *vv + (1.0 - self.beta2) * gv * gv;
                let m_hat = *mv / bc1;
                let v_hat = *vv / bc2;
                *pv -= lr * m_hat / (math::sqrt(v_hat) + self.eps);
            }
        }
        Ok(())
    }
}
