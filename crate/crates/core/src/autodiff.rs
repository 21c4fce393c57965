//! Reverse-mode differentiation over dense 2-D matrices.
//!
//! Every value on the [`Tape`] is an `f64` matrix; vectors are `1 × d` rows
//! and scalars are `1 × 1`. Operations append nodes in topological order, so
//! the backward pass is a single reverse sweep. Parameter leaves are keyed by
//! their group name in a [`ParamStore`] and their gradients come back as a
//! [`Gradients`] map with the same keys.

use std::collections::{HashMap, HashSet};

use ndarray::{s, Array2, Axis, Zip};

use crate::error::{Error, Result};
use crate::params::{Gradients, ParamStore};
use crate::tagger::crf::{self, CrfMask};

pub type Mat = Array2<f64>;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    MulConst(Var, Mat),
    Scale(Var, f64),
    Tanh(Var),
    Sigmoid(Var),
    SoftmaxCol(Var),
    ScaleRows(Var, Var),
    Rows(Var, Vec<Option<usize>>),
    Cols(Var, usize, usize),
    HCat(Vec<Var>),
    VCat(Vec<Var>),
    SegmentMax(Var, Vec<Vec<usize>>),
    SumAll(Var),
    LstmStep {
        gates: Var,
        prev_cell: Option<Var>,
    },
    CrossEntropy(Var, usize),
    Contrastive {
        a: Var,
        b: Var,
        matched: bool,
        margin: f64,
    },
    CrfNll {
        emissions: Var,
        transitions: Var,
        start: Var,
        end: Var,
        grads: Box<CrfGrads>,
    },
}

#[derive(Debug)]
struct CrfGrads {
    emissions: Mat,
    transitions: Mat,
    start: Mat,
    end: Mat,
}

#[derive(Debug)]
struct Node {
    value: Mat,
    op: Op,
    needs_grad: bool,
}

/// A recording of one forward computation.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: HashMap<String, Var>,
    frozen: HashSet<String>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// A tape on which the named parameter groups are treated as constants.
    pub fn with_frozen<I, S>(frozen: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self {
            frozen: frozen.into_iter().map(Into::into).collect(),
            ..Self::default()
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Mat {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[[0, 0]]
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.dim()
    }

    fn push(&mut self, value: Mat, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn constant(&mut self, value: Mat) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Leaf for a parameter group. Repeated calls with the same name return
    /// the same node, so gradients from every use accumulate in one place.
    pub fn param(&mut self, store: &ParamStore, name: &str) -> Var {
        if let Some(&v) = self.params.get(name) {
            return v;
        }
        let value = store
            .get(name)
            .unwrap_or_else(|| panic!("parameter group `{name}` not in store"))
            .clone();
        let trainable = !self.frozen.contains(name);
        let v = self.push(value, Op::Leaf, trainable);
        self.params.insert(name.to_string(), v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).dot(self.value(b));
        let ng = self.ng(a) || self.ng(b);
        self.push(value, Op::MatMul(a, b), ng)
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let value = self.value(a).t().to_owned();
        let ng = self.ng(a);
        self.push(value, Op::Transpose(a), ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "add: shape mismatch");
        let value = self.value(a) + self.value(b);
        let ng = self.ng(a) || self.ng(b);
        self.push(value, Op::Add(a, b), ng)
    }

    /// `a (n × d) + row (1 × d)` broadcast over rows.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let (_, d) = self.shape(a);
        assert_eq!(self.shape(row), (1, d), "add_row: shape mismatch");
        let value = self.value(a) + self.value(row);
        let ng = self.ng(a) || self.ng(row);
        self.push(value, Op::AddRow(a, row), ng)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "sub: shape mismatch");
        let value = self.value(a) - self.value(b);
        let ng = self.ng(a) || self.ng(b);
        self.push(value, Op::Sub(a, b), ng)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "mul: shape mismatch");
        let value = self.value(a) * self.value(b);
        let ng = self.ng(a) || self.ng(b);
        self.push(value, Op::Mul(a, b), ng)
    }

    /// Elementwise product with a constant (dropout masks).
    pub fn mul_const(&mut self, a: Var, c: Mat) -> Var {
        assert_eq!(self.shape(a), c.dim(), "mul_const: shape mismatch");
        let value = self.value(a) * &c;
        let ng = self.ng(a);
        self.push(value, Op::MulConst(a, c), ng)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let value = self.value(a) * c;
        let ng = self.ng(a);
        self.push(value, Op::Scale(a, c), ng)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(f64::tanh);
        let ng = self.ng(a);
        self.push(value, Op::Tanh(a), ng)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(sigmoid);
        let ng = self.ng(a);
        self.push(value, Op::Sigmoid(a), ng)
    }

    /// Softmax over the rows of an `n × 1` column.
    pub fn softmax_col(&mut self, a: Var) -> Var {
        assert_eq!(self.shape(a).1, 1, "softmax_col expects a column");
        let x = self.value(a);
        let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut value = x.mapv(|v| (v - max).exp());
        let z = value.sum();
        value /= z;
        let ng = self.ng(a);
        self.push(value, Op::SoftmaxCol(a), ng)
    }

    /// Row `i` of `a` multiplied by `w[i]`, where `w` is an `n × 1` column.
    pub fn scale_rows(&mut self, a: Var, w: Var) -> Var {
        let (n, _) = self.shape(a);
        assert_eq!(self.shape(w), (n, 1), "scale_rows: weight shape mismatch");
        let value = self.value(a) * self.value(w);
        let ng = self.ng(a) || self.ng(w);
        self.push(value, Op::ScaleRows(a, w), ng)
    }

    /// Gathers rows by index; `None` yields a zero row.
    pub fn rows(&mut self, a: Var, index: Vec<Option<usize>>) -> Var {
        let src = self.value(a);
        let (_, d) = src.dim();
        let mut value = Mat::zeros((index.len(), d));
        for (r, i) in index.iter().enumerate() {
            if let Some(i) = *i {
                value.row_mut(r).assign(&src.row(i));
            }
        }
        let ng = self.ng(a);
        self.push(value, Op::Rows(a, index), ng)
    }

    pub fn select_rows(&mut self, a: Var, index: &[usize]) -> Var {
        self.rows(a, index.iter().copied().map(Some).collect())
    }

    pub fn row(&mut self, a: Var, i: usize) -> Var {
        self.rows(a, vec![Some(i)])
    }

    pub fn cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let value = self.value(a).slice(s![.., start..start + len]).to_owned();
        let ng = self.ng(a);
        self.push(value, Op::Cols(a, start, len), ng)
    }

    pub fn hcat(&mut self, parts: Vec<Var>) -> Var {
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let value = ndarray::concatenate(Axis(1), &views).expect("hcat: row counts differ");
        let ng = parts.iter().any(|&p| self.ng(p));
        self.push(value, Op::HCat(parts), ng)
    }

    pub fn vcat(&mut self, parts: Vec<Var>) -> Var {
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let value = ndarray::concatenate(Axis(0), &views).expect("vcat: widths differ");
        let ng = parts.iter().any(|&p| self.ng(p));
        self.push(value, Op::VCat(parts), ng)
    }

    /// Column-wise max over contiguous row segments: one output row per
    /// segment `(start, len)`.
    pub fn segment_max(&mut self, a: Var, segments: &[(usize, usize)]) -> Var {
        let src = self.value(a);
        let d = src.ncols();
        let mut value = Mat::zeros((segments.len(), d));
        let mut argmax = Vec::with_capacity(segments.len());
        for (r, &(start, len)) in segments.iter().enumerate() {
            assert!(len > 0, "segment_max: empty segment");
            let mut best = vec![start; d];
            for i in start + 1..start + len {
                for j in 0..d {
                    if src[[i, j]] > src[[best[j], j]] {
                        best[j] = i;
                    }
                }
            }
            for j in 0..d {
                value[[r, j]] = src[[best[j], j]];
            }
            argmax.push(best);
        }
        let ng = self.ng(a);
        self.push(value, Op::SegmentMax(a, argmax), ng)
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let value = Mat::from_elem((1, 1), self.value(a).sum());
        let ng = self.ng(a);
        self.push(value, Op::SumAll(a), ng)
    }

    /// Sum of scalars, scaled by `1 / len`.
    pub fn mean(&mut self, terms: &[Var]) -> Var {
        assert!(!terms.is_empty(), "mean of no terms");
        let mut acc = terms[0];
        for &t in &terms[1..] {
            acc = self.add(acc, t);
        }
        self.scale(acc, 1.0 / terms.len() as f64)
    }

    /// One LSTM cell update. `gates` is `1 × 4h` in (input, forget, cell,
    /// output) order; the result is `1 × 2h` holding `[h | c]`.
    pub fn lstm_step(&mut self, gates: Var, prev_cell: Option<Var>) -> Var {
        let g = self.value(gates);
        let h = g.ncols() / 4;
        let mut value = Mat::zeros((1, 2 * h));
        for j in 0..h {
            let i = sigmoid(g[[0, j]]);
            let f = sigmoid(g[[0, h + j]]);
            let cand = g[[0, 2 * h + j]].tanh();
            let o = sigmoid(g[[0, 3 * h + j]]);
            let cp = prev_cell.map_or(0.0, |c| self.value(c)[[0, j]]);
            let c = f * cp + i * cand;
            value[[0, j]] = o * c.tanh();
            value[[0, h + j]] = c;
        }
        let ng = self.ng(gates) || prev_cell.is_some_and(|c| self.ng(c));
        self.push(value, Op::LstmStep { gates, prev_cell }, ng)
    }

    /// `-log softmax(logits)[target]` for a `1 × K` logit row.
    pub fn cross_entropy(&mut self, logits: Var, target: usize) -> Var {
        let z = self.value(logits);
        assert!(target < z.ncols(), "cross_entropy: target out of range");
        let lse = log_sum_exp(z.iter().copied());
        let value = Mat::from_elem((1, 1), lse - z[[0, target]]);
        let ng = self.ng(logits);
        self.push(value, Op::CrossEntropy(logits, target), ng)
    }

    /// Margin contrastive loss between two `1 × d` rows.
    pub fn contrastive(&mut self, a: Var, b: Var, matched: bool, margin: f64) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "contrastive: width mismatch");
        let d = distance(self.value(a), self.value(b));
        let value = Mat::from_elem((1, 1), contrastive_value(d, matched, margin));
        let ng = self.ng(a) || self.ng(b);
        self.push(
            value,
            Op::Contrastive {
                a,
                b,
                matched,
                margin,
            },
            ng,
        )
    }

    /// Negative log-likelihood of `gold` under a linear-chain CRF.
    pub fn crf_nll(
        &mut self,
        emissions: Var,
        transitions: Var,
        start: Var,
        end: Var,
        gold: &[usize],
        mask: Option<&CrfMask>,
    ) -> Result<Var> {
        let (n, k) = self.shape(emissions);
        if gold.len() != n {
            return Err(Error::Shape(format!(
                "crf_nll: {} emission rows for {} gold tags",
                n,
                gold.len()
            )));
        }
        if self.shape(transitions) != (k, k) || self.shape(start) != (1, k) || self.shape(end) != (1, k) {
            return Err(Error::Shape("crf_nll: transition shapes".into()));
        }
        let scores = crf::CrfScores::new(
            self.value(emissions).view(),
            self.value(transitions).view(),
            self.value(start).row(0),
            self.value(end).row(0),
            mask,
        );
        let m = scores.marginals();
        let gold_score = scores.path_score(gold);
        let nll = m.log_z - gold_score;

        let mut ge = m.unary;
        let mut gt = m.pairwise;
        let mut gs = Mat::zeros((1, k));
        let mut gn = Mat::zeros((1, k));
        gs.row_mut(0).assign(&ge.row(0));
        gn.row_mut(0).assign(&ge.row(n - 1));
        for (t, &y) in gold.iter().enumerate() {
            ge[[t, y]] -= 1.0;
            if t > 0 {
                gt[[gold[t - 1], y]] -= 1.0;
            }
        }
        gs[[0, gold[0]]] -= 1.0;
        gn[[0, gold[n - 1]]] -= 1.0;

        let ng = self.ng(emissions) || self.ng(transitions) || self.ng(start) || self.ng(end);
        Ok(self.push(
            Mat::from_elem((1, 1), nll),
            Op::CrfNll {
                emissions,
                transitions,
                start,
                end,
                grads: Box::new(CrfGrads {
                    emissions: ge,
                    transitions: gt,
                    start: gs,
                    end: gn,
                }),
            },
            ng,
        ))
    }

    /// Back-propagates from the scalar `loss` and returns the gradient of
    /// every trainable parameter leaf reached.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        assert_eq!(self.shape(loss), (1, 1), "backward expects a scalar");
        let l = self.scalar(loss);
        if !l.is_finite() {
            return Err(Error::NonFinite(format!("loss = {l}")));
        }
        let mut grads: Vec<Option<Mat>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Mat::from_elem((1, 1), 1.0));

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            self.propagate(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }

        let mut out = Gradients::default();
        for (name, v) in &self.params {
            if !self.nodes[v.0].needs_grad {
                continue;
            }
            let g = grads[v.0]
                .take()
                .unwrap_or_else(|| Mat::zeros(self.nodes[v.0].value.dim()));
            out.insert(name.clone(), g);
        }
        Ok(out)
    }

    fn propagate(&self, idx: usize, g: &Mat, grads: &mut [Option<Mat>]) {
        let node = &self.nodes[idx];
        let mut acc = |v: Var, d: Mat| {
            if !self.nodes[v.0].needs_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => *existing += &d,
                slot @ None => *slot = Some(d),
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if self.ng(*a) {
                    acc(*a, g.dot(&self.value(*b).t()));
                }
                if self.ng(*b) {
                    acc(*b, self.value(*a).t().dot(g));
                }
            }
            Op::Transpose(a) => acc(*a, g.t().to_owned()),
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::AddRow(a, row) => {
                acc(*a, g.clone());
                if self.ng(*row) {
                    acc(*row, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                }
            }
            Op::Sub(a, b) => {
                acc(*a, g.clone());
                acc(*b, -g);
            }
            Op::Mul(a, b) => {
                if self.ng(*a) {
                    acc(*a, g * self.value(*b));
                }
                if self.ng(*b) {
                    acc(*b, g * self.value(*a));
                }
            }
            Op::MulConst(a, c) => acc(*a, g * c),
            Op::Scale(a, c) => acc(*a, g * *c),
            Op::Tanh(a) => {
                let mut d = g.clone();
                Zip::from(&mut d)
                    .and(&node.value)
                    .for_each(|d, &y| *d *= 1.0 - y * y);
                acc(*a, d);
            }
            Op::Sigmoid(a) => {
                let mut d = g.clone();
                Zip::from(&mut d)
                    .and(&node.value)
                    .for_each(|d, &y| *d *= y * (1.0 - y));
                acc(*a, d);
            }
            Op::SoftmaxCol(a) => {
                let y = &node.value;
                let dot = (g * y).sum();
                acc(*a, y * &(g - dot));
            }
            Op::ScaleRows(a, w) => {
                if self.ng(*a) {
                    acc(*a, g * self.value(*w));
                }
                if self.ng(*w) {
                    let dw = (g * self.value(*a)).sum_axis(Axis(1)).insert_axis(Axis(1));
                    acc(*w, dw);
                }
            }
            Op::Rows(a, index) => {
                let mut d = Mat::zeros(self.value(*a).dim());
                for (r, i) in index.iter().enumerate() {
                    if let Some(i) = *i {
                        let mut row = d.row_mut(i);
                        row += &g.row(r);
                    }
                }
                acc(*a, d);
            }
            Op::Cols(a, start, len) => {
                let mut d = Mat::zeros(self.value(*a).dim());
                d.slice_mut(s![.., *start..*start + *len]).assign(g);
                acc(*a, d);
            }
            Op::HCat(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let w = self.value(p).ncols();
                    acc(p, g.slice(s![.., offset..offset + w]).to_owned());
                    offset += w;
                }
            }
            Op::VCat(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let h = self.value(p).nrows();
                    acc(p, g.slice(s![offset..offset + h, ..]).to_owned());
                    offset += h;
                }
            }
            Op::SegmentMax(a, argmax) => {
                let mut d = Mat::zeros(self.value(*a).dim());
                for (r, best) in argmax.iter().enumerate() {
                    for (j, &i) in best.iter().enumerate() {
                        d[[i, j]] += g[[r, j]];
                    }
                }
                acc(*a, d);
            }
            Op::SumAll(a) => {
                let gv = g[[0, 0]];
                acc(*a, Mat::from_elem(self.value(*a).dim(), gv));
            }
            Op::LstmStep { gates, prev_cell } => {
                let gv = self.value(*gates);
                let h = gv.ncols() / 4;
                let mut dg = Mat::zeros((1, 4 * h));
                let mut dcp = Mat::zeros((1, h));
                for j in 0..h {
                    let i = sigmoid(gv[[0, j]]);
                    let f = sigmoid(gv[[0, h + j]]);
                    let cand = gv[[0, 2 * h + j]].tanh();
                    let o = sigmoid(gv[[0, 3 * h + j]]);
                    let cp = prev_cell.map_or(0.0, |c| self.value(c)[[0, j]]);
                    let c = node.value[[0, h + j]];
                    let tc = c.tanh();
                    let dh = g[[0, j]];
                    let dc = g[[0, h + j]] + dh * o * (1.0 - tc * tc);
                    dg[[0, j]] = dc * cand * i * (1.0 - i);
                    dg[[0, h + j]] = dc * cp * f * (1.0 - f);
                    dg[[0, 2 * h + j]] = dc * i * (1.0 - cand * cand);
                    dg[[0, 3 * h + j]] = dh * tc * o * (1.0 - o);
                    dcp[[0, j]] = dc * f;
                }
                acc(*gates, dg);
                if let Some(c) = prev_cell {
                    acc(*c, dcp);
                }
            }
            Op::CrossEntropy(logits, target) => {
                let z = self.value(*logits);
                let lse = log_sum_exp(z.iter().copied());
                let mut d = z.mapv(|v| (v - lse).exp());
                d[[0, *target]] -= 1.0;
                acc(*logits, d * g[[0, 0]]);
            }
            Op::Contrastive {
                a,
                b,
                matched,
                margin,
            } => {
                let av = self.value(*a);
                let bv = self.value(*b);
                let diff = av - bv;
                let d = diff.mapv(|x| x * x).sum().sqrt();
                let coef = if *matched {
                    1.0
                } else if d > 0.0 && d < *margin {
                    -(margin - d) / d
                } else {
                    0.0
                };
                let da = diff * (coef * g[[0, 0]]);
                acc(*b, -&da);
                acc(*a, da);
            }
            Op::CrfNll {
                emissions,
                transitions,
                start,
                end,
                grads: cg,
            } => {
                let s = g[[0, 0]];
                acc(*emissions, &cg.emissions * s);
                acc(*transitions, &cg.transitions * s);
                acc(*start, &cg.start * s);
                acc(*end, &cg.end * s);
            }
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Numerically stable `log Σ exp(xᵢ)`. Returns `-∞` for an empty or
/// all-`-∞` input.
pub fn log_sum_exp<I: IntoIterator<Item = f64>>(xs: I) -> f64 {
    let xs: Vec<f64> = xs.into_iter().collect();
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Euclidean distance between two equally-shaped matrices.
pub fn distance(a: &Mat, b: &Mat) -> f64 {
    Zip::from(a)
        .and(b)
        .fold(0.0, |acc, &x, &y| acc + (x - y) * (x - y))
        .sqrt()
}

pub(crate) fn contrastive_value(d: f64, matched: bool, margin: f64) -> f64 {
    if matched {
        0.5 * d * d
    } else {
        let h = (margin - d).max(0.0);
        0.5 * h * h
    }
}
