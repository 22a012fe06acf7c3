//! Reverse-mode differentiation over a per-forward-pass operation tape.
//!
//! A [`Tape`] records every operation of one forward pass as a node holding
//! its output values. [`Tape::backward`] walks the nodes in reverse order and
//! returns [`Gradients`], which can be read per node or accumulated into the
//! [`ParamStore`] the parameter leaves were bound from.

use super::beta::beta_log_prob;
use super::kernels::{self, ConvGeom};
use super::params::{ParamId, ParamStore};
use super::special::{relu, relu_grad, sigmoid, softplus};
use crate::error::{Error, Result};

/// Probabilities fed to binary cross-entropy are clamped into `[BCE_EPS, 1 − BCE_EPS]`.
pub const BCE_EPS: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Input,
    Param(ParamId),
    Dense { x: Var, w: Var, b: Var, rows: usize, cols: usize },
    Conv1d { x: Var, w: Var, b: Var, geom: ConvGeom },
    Relu(Var),
    Sigmoid(Var),
    Softplus(Var),
    AddConst(Var),
    MeanPool { x: Var, channels: usize, len: usize },
    Concat(Vec<Var>),
    Pick(Var, usize),
    LinComb(Vec<(Var, f64)>),
    SoftmaxCe { logits: Var, label: usize },
    BetaLogProb { alpha: Var, beta: Var, d_alpha: f64, d_beta: f64 },
    Bce { p: Var, target: f64 },
    SquaredError { x: Var, target: f64 },
    PooledStats(PooledStatsOp),
}

#[derive(Debug)]
struct Node {
    value: Vec<f64>,
    op: Op,
}

/// Pooled statistics over a sequence of feature-map chunks that together
/// cover a contiguous prefix of a series. Chunk `i` has shape `n_maps × len_i`.
#[derive(Debug)]
struct PooledStatsOp {
    chunks: Vec<Var>,
    n_maps: usize,
}

/// Number of statistics pooled per feature map:
/// max, min, mean, fraction positive, mean of positives, mean positive index / series length.
pub const STATS_PER_MAP: usize = 6;

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[0]
    }

    fn push(&mut self, value: Vec<f64>, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// A constant leaf; gradients reaching it are still reported by [`Gradients::get`].
    pub fn input(&mut self, value: Vec<f64>) -> Var {
        self.push(value, Op::Input)
    }

    /// A leaf holding a copy of a parameter tensor's current values.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        self.push(store.get(id).values.clone(), Op::Param(id))
    }

    /// Copies the value of `v` into a fresh constant leaf, cutting the gradient path.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.value(v).to_vec();
        self.input(value)
    }

    pub fn dense(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let cols = self.value(x).len();
        let rows = self.value(b).len();
        if self.value(w).len() != rows * cols {
            return Err(Error::Config(format!(
                "dense weight has {} entries, expected {rows}x{cols}",
                self.value(w).len()
            )));
        }
        let y = kernels::dense(self.value(x), self.value(w), self.value(b), rows, cols);
        Ok(self.push(y, Op::Dense { x, w, b, rows, cols }))
    }

    pub fn conv1d(&mut self, x: Var, w: Var, b: Var, geom: ConvGeom) -> Result<Var> {
        if geom.t_in == 0 {
            return Err(Error::Input("convolution over an empty input".into()));
        }
        if geom.k.is_multiple_of(2) {
            return Err(Error::Config(format!("kernel length {} must be odd", geom.k)));
        }
        if self.value(x).len() != geom.cin * geom.t_in
            || self.value(w).len() != geom.cout * geom.cin * geom.k
            || self.value(b).len() != geom.cout
        {
            return Err(Error::Config(format!("convolution shape mismatch for {geom:?}")));
        }
        let y = kernels::conv1d(self.value(x), self.value(w), self.value(b), &geom);
        Ok(self.push(y, Op::Conv1d { x, w, b, geom }))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let y = self.value(x).iter().map(|&v| relu(v)).collect();
        self.push(y, Op::Relu(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let y = self.value(x).iter().map(|&v| sigmoid(v)).collect();
        self.push(y, Op::Sigmoid(x))
    }

    pub fn softplus(&mut self, x: Var) -> Var {
        let y = self.value(x).iter().map(|&v| softplus(v)).collect();
        self.push(y, Op::Softplus(x))
    }

    pub fn add_const(&mut self, x: Var, c: f64) -> Var {
        let y = self.value(x).iter().map(|&v| v + c).collect();
        self.push(y, Op::AddConst(x))
    }

    /// Average over time of a `channels × len` map, giving one value per channel.
    pub fn mean_pool(&mut self, x: Var, channels: usize) -> Result<Var> {
        let n = self.value(x).len();
        if channels == 0 || !n.is_multiple_of(channels) || n == 0 {
            return Err(Error::Config(format!("cannot pool {n} values into {channels} channels")));
        }
        let len = n / channels;
        let y = self
            .value(x)
            .chunks(len)
            .map(|row| row.iter().sum::<f64>() / len as f64)
            .collect();
        Ok(self.push(y, Op::MeanPool { x, channels, len }))
    }

    pub fn concat(&mut self, parts: &[Var]) -> Var {
        let y = parts.iter().flat_map(|&p| self.value(p).iter().copied()).collect();
        self.push(y, Op::Concat(parts.to_vec()))
    }

    pub fn pick(&mut self, x: Var, index: usize) -> Var {
        let y = vec![self.value(x)[index]];
        self.push(y, Op::Pick(x, index))
    }

    /// Σ cᵢ·xᵢ over scalar nodes.
    pub fn lin_comb(&mut self, terms: &[(Var, f64)]) -> Var {
        let y = terms.iter().map(|&(v, c)| c * self.scalar(v)).sum();
        self.push(vec![y], Op::LinComb(terms.to_vec()))
    }

    /// −log softmax(logits)[label], max-subtracted.
    pub fn softmax_cross_entropy(&mut self, logits: Var, label: usize) -> Result<Var> {
        let z = self.value(logits);
        if label >= z.len() {
            return Err(Error::Input(format!("label {label} out of range for {} classes", z.len())));
        }
        let (m, tail) = log_sum_exp_parts(z);
        let loss = (m - z[label]) + tail;
        Ok(self.push(vec![loss], Op::SoftmaxCe { logits, label }))
    }

    /// Beta log-density of the constant `x` under scalar nodes `alpha`, `beta`.
    pub fn beta_log_prob(&mut self, x: f64, alpha: Var, beta: Var) -> Result<Var> {
        let lp = beta_log_prob(x, self.scalar(alpha), self.scalar(beta))?;
        Ok(self.push(
            vec![lp.log_prob],
            Op::BetaLogProb {
                alpha,
                beta,
                d_alpha: lp.d_alpha,
                d_beta: lp.d_beta,
            },
        ))
    }

    /// Binary cross-entropy of a probability node against a 0/1 target.
    pub fn bce(&mut self, p: Var, target: f64) -> Var {
        let q = self.scalar(p).clamp(BCE_EPS, 1.0 - BCE_EPS);
        let loss = -(target * q.ln() + (1.0 - target) * (1.0 - q).ln());
        self.push(vec![loss], Op::Bce { p, target })
    }

    pub fn squared_error(&mut self, x: Var, target: f64) -> Var {
        let d = self.scalar(x) - target;
        self.push(vec![d * d], Op::SquaredError { x, target })
    }

    /// Six pooled statistics per feature map over chunks covering a series
    /// prefix (see [`STATS_PER_MAP`]). `series_len` normalises the mean
    /// positive index. Statistics with an empty support are 0.
    pub fn pooled_stats(&mut self, chunks: &[Var], starts: &[usize], n_maps: usize, series_len: usize) -> Result<Var> {
        if chunks.is_empty() || chunks.len() != starts.len() {
            return Err(Error::Config("pooled statistics need one start per chunk".into()));
        }
        for &c in chunks {
            if !self.value(c).len().is_multiple_of(n_maps) {
                return Err(Error::Config("chunk size is not a multiple of the map count".into()));
            }
        }
        let mut out = Vec::with_capacity(n_maps * STATS_PER_MAP);
        for m in 0..n_maps {
            let mut acc = StatsAccumulator::default();
            for (&c, &start) in chunks.iter().zip(starts) {
                let v = self.value(c);
                let len = v.len() / n_maps;
                acc.update(&v[m * len..(m + 1) * len], start);
            }
            out.extend_from_slice(&acc.derived(series_len));
        }
        Ok(self.push(
            out,
            Op::PooledStats(PooledStatsOp {
                chunks: chunks.to_vec(),
                n_maps,
            }),
        ))
    }

    /// Gradients of the scalar node `loss`, scaled by `seed`.
    pub fn backward(&self, loss: Var, seed: f64) -> Gradients {
        let mut grads: Vec<Option<Vec<f64>>> = Vec::with_capacity(loss.0 + 1);
        grads.resize_with(loss.0 + 1, || None);
        grads[loss.0] = Some(vec![seed; self.nodes[loss.0].value.len()]);

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            self.propagate(node, &g, &mut grads);
            grads[i] = Some(g);
        }
        Gradients { grads }
    }

    fn slot<'g>(&self, grads: &'g mut [Option<Vec<f64>>], v: Var) -> &'g mut [f64] {
        let len = self.nodes[v.0].value.len();
        grads[v.0].get_or_insert_with(|| vec![0.0; len])
    }

    fn propagate(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        match &node.op {
            Op::Input | Op::Param(_) => {}
            &Op::Dense { x, w, b, rows, cols } => {
                let xv = self.value(x);
                let wv = self.value(w);
                let dw = self.slot(grads, w);
                for r in 0..rows {
                    let gr = g[r];
                    if gr != 0.0 {
                        for (d, &xi) in dw[r * cols..(r + 1) * cols].iter_mut().zip(xv) {
                            *d += gr * xi;
                        }
                    }
                }
                let db = self.slot(grads, b);
                for (d, &gr) in db.iter_mut().zip(g) {
                    *d += gr;
                }
                if self.needs_grad(x) {
                    let dx = self.slot(grads, x);
                    for r in 0..rows {
                        let gr = g[r];
                        if gr != 0.0 {
                            for (d, &wi) in dx.iter_mut().zip(&wv[r * cols..(r + 1) * cols]) {
                                *d += gr * wi;
                            }
                        }
                    }
                }
            }
            &Op::Conv1d { x, w, b, geom } => {
                let (xv, wv) = (self.value(x), self.value(w));
                if self.needs_grad(x) {
                    kernels::conv1d_backward(xv, wv, &geom, g, Some(self.slot(grads, x)), None, None);
                }
                kernels::conv1d_backward(xv, wv, &geom, g, None, Some(self.slot(grads, w)), None);
                kernels::conv1d_backward(xv, wv, &geom, g, None, None, Some(self.slot(grads, b)));
            }
            &Op::Relu(x) => {
                let xv = self.value(x);
                let dx = self.slot(grads, x);
                for ((d, &gi), &xi) in dx.iter_mut().zip(g).zip(xv) {
                    *d += gi * relu_grad(xi);
                }
            }
            &Op::Sigmoid(x) => {
                let y = &node.value;
                let dx = self.slot(grads, x);
                for ((d, &gi), &yi) in dx.iter_mut().zip(g).zip(y) {
                    *d += gi * yi * (1.0 - yi);
                }
            }
            &Op::Softplus(x) => {
                let xv = self.value(x);
                let dx = self.slot(grads, x);
                for ((d, &gi), &xi) in dx.iter_mut().zip(g).zip(xv) {
                    *d += gi * sigmoid(xi);
                }
            }
            &Op::AddConst(x) => {
                let dx = self.slot(grads, x);
                for (d, &gi) in dx.iter_mut().zip(g) {
                    *d += gi;
                }
            }
            &Op::MeanPool { x, channels, len } => {
                let dx = self.slot(grads, x);
                for c in 0..channels {
                    let share = g[c] / len as f64;
                    dx[c * len..(c + 1) * len].iter_mut().for_each(|d| *d += share);
                }
            }
            Op::Concat(parts) => {
                let mut off = 0;
                for &p in parts {
                    let dp = self.slot(grads, p);
                    let n = dp.len();
                    for (d, &gi) in dp.iter_mut().zip(&g[off..off + n]) {
                        *d += gi;
                    }
                    off += n;
                }
            }
            &Op::Pick(x, idx) => {
                self.slot(grads, x)[idx] += g[0];
            }
            Op::LinComb(terms) => {
                for &(v, c) in terms {
                    self.slot(grads, v)[0] += c * g[0];
                }
            }
            &Op::SoftmaxCe { logits, label } => {
                let z = self.value(logits);
                let (m, tail) = log_sum_exp_parts(z);
                let dz = self.slot(grads, logits);
                for (k, (d, &zk)) in dz.iter_mut().zip(z).enumerate() {
                    let p = ((zk - m) - tail).exp();
                    *d += g[0] * (p - if k == label { 1.0 } else { 0.0 });
                }
            }
            &Op::BetaLogProb { alpha, beta, d_alpha, d_beta } => {
                self.slot(grads, alpha)[0] += g[0] * d_alpha;
                self.slot(grads, beta)[0] += g[0] * d_beta;
            }
            &Op::Bce { p, target } => {
                let q = self.scalar(p).clamp(BCE_EPS, 1.0 - BCE_EPS);
                self.slot(grads, p)[0] += g[0] * (-target / q + (1.0 - target) / (1.0 - q));
            }
            &Op::SquaredError { x, target } => {
                let d = self.scalar(x) - target;
                self.slot(grads, x)[0] += g[0] * 2.0 * d;
            }
            Op::PooledStats(op) => self.pooled_stats_backward(op, g, grads),
        }
    }

    fn pooled_stats_backward(&self, op: &PooledStatsOp, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let n_maps = op.n_maps;
        for m in 0..n_maps {
            let gm = &g[m * STATS_PER_MAP..(m + 1) * STATS_PER_MAP];
            // locate argmax / argmin (first occurrence) and the supports
            let mut count = 0usize;
            let mut pos_count = 0usize;
            let mut best_max: Option<(f64, usize, usize)> = None;
            let mut best_min: Option<(f64, usize, usize)> = None;
            for (ci, &c) in op.chunks.iter().enumerate() {
                let v = self.value(c);
                let len = v.len() / n_maps;
                for (j, &x) in v[m * len..(m + 1) * len].iter().enumerate() {
                    count += 1;
                    if x > 0.0 {
                        pos_count += 1;
                    }
                    if best_max.is_none_or(|(b, _, _)| x > b) {
                        best_max = Some((x, ci, j));
                    }
                    if best_min.is_none_or(|(b, _, _)| x < b) {
                        best_min = Some((x, ci, j));
                    }
                }
            }
            if count == 0 {
                continue;
            }
            let g_mean = gm[2] / count as f64;
            let g_pos = if pos_count > 0 { gm[4] / pos_count as f64 } else { 0.0 };
            for (ci, &c) in op.chunks.iter().enumerate() {
                let len = self.value(c).len() / n_maps;
                let vals = &self.value(c)[m * len..(m + 1) * len];
                let dst = &mut self.slot(grads, c)[m * len..(m + 1) * len];
                for (j, (d, &x)) in dst.iter_mut().zip(vals).enumerate() {
                    *d += g_mean;
                    if x > 0.0 {
                        *d += g_pos;
                    }
                    if best_max.is_some_and(|(_, bc, bj)| bc == ci && bj == j) {
                        *d += gm[0];
                    }
                    if best_min.is_some_and(|(_, bc, bj)| bc == ci && bj == j) {
                        *d += gm[1];
                    }
                }
            }
        }
    }

    fn needs_grad(&self, v: Var) -> bool {
        !matches!(self.nodes[v.0].op, Op::Input)
    }

    /// Parameter bindings recorded on this tape.
    pub fn param_leaves(&self) -> impl Iterator<Item = (Var, ParamId)> + '_ {
        self.nodes.iter().enumerate().filter_map(|(i, n)| match n.op {
            Op::Param(id) => Some((Var(i), id)),
            _ => None,
        })
    }
}

/// Running accumulators behind the pooled statistics of one feature map.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StatsAccumulator {
    pub max: f64,
    pub min: f64,
    pub sum: f64,
    pub count: u64,
    pub pos_count: u64,
    pub pos_sum: f64,
    pub pos_index_sum: f64,
}

impl Default for StatsAccumulator {
    fn default() -> Self {
        StatsAccumulator {
            max: f64::NEG_INFINITY,
            min: f64::INFINITY,
            sum: 0.0,
            count: 0,
            pos_count: 0,
            pos_sum: 0.0,
            pos_index_sum: 0.0,
        }
    }
}

impl StatsAccumulator {
    /// Folds in `values`, whose first entry sits at absolute timestep `start`.
    pub fn update(&mut self, values: &[f64], start: usize) {
        for (j, &x) in values.iter().enumerate() {
            if x > self.max {
                self.max = x;
            }
            if x < self.min {
                self.min = x;
            }
            self.sum += x;
            if x > 0.0 {
                self.pos_count += 1;
                self.pos_sum += x;
                self.pos_index_sum += (start + j) as f64;
            }
        }
        self.count += values.len() as u64;
    }

    /// `[max, min, mean, ppv, mean of positives, mean positive index / series_len]`.
    pub fn derived(&self, series_len: usize) -> [f64; STATS_PER_MAP] {
        if self.count == 0 {
            return [0.0; STATS_PER_MAP];
        }
        let n = self.count as f64;
        let (mean_pos, mean_idx) = if self.pos_count > 0 {
            let p = self.pos_count as f64;
            (self.pos_sum / p, self.pos_index_sum / p / series_len.max(1) as f64)
        } else {
            (0.0, 0.0)
        };
        [
            self.max,
            self.min,
            self.sum / n,
            self.pos_count as f64 / n,
            mean_pos,
            mean_idx,
        ]
    }
}

/// `(max, ln Σ exp(z − max))`, kept apart so callers can cancel the max exactly.
fn log_sum_exp_parts(z: &[f64]) -> (f64, f64) {
    let (arg, m) = z
        .iter()
        .copied()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, v)| if v > best.1 { (i, v) } else { best });
    // the max term contributes exactly 1; ln_1p keeps the rest accurate
    let rest: f64 = z
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != arg)
        .map(|(_, &v)| (v - m).exp())
        .sum();
    (m, rest.ln_1p())
}

/// Gradients produced by one backward pass.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// Gradient with respect to node `v`, or `None` when `v` does not reach the loss.
    pub fn get(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Adds parameter-leaf gradients into the store's gradient buffers.
    pub fn accumulate(&self, tape: &Tape, store: &mut ParamStore) {
        for (v, id) in tape.param_leaves() {
            if let Some(g) = self.get(v) {
                for (d, &gi) in store.get_mut(id).grads.iter_mut().zip(g) {
                    *d += gi;
                }
            }
        }
    }
}
