//! Tape-based reverse-mode differentiation over dense tensors.
//!
//! Every primitive appends a node holding its forward value. `backward`
//! walks the tape once in reverse and returns adjoints for every node that
//! the loss depends on. The moment-matching activations are single
//! primitives whose partial derivatives are computed during the forward pass.

use std::f64::consts::PI;

use crate::error::{shape_err, Error, Result};
use crate::moments::{self, NmmConstants, Partials};
use crate::tensor::Tensor;

/// Probabilities are kept this far from {0, 1} inside the cross-entropy kernel.
pub const BCE_EPS: f64 = 1e-12;

/// Variance floor of the Gaussian negative log-likelihood.
pub const NLL_VARIANCE_FLOOR: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Composite {
    SigmoidMean,
    SigmoidVar,
    TanhMean,
    TanhVar,
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulBt(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    AddRow(Var, Var),
    Hadamard(Var, Var),
    Affine(Var, f64),
    Square(Var),
    Sqrt(Var),
    Exp(Var),
    Log(Var),
    Sigmoid(Var),
    Tanh(Var),
    Softplus(Var),
    Clamp(Var),
    Sum(Var),
    Mean(Var),
    /// Partials w.r.t. mean and variance are saved in `Node::saved`.
    Moment(Composite, Var, Var),
    Bce(Var, Tensor),
    GaussNll(Var, Var, Tensor),
}

#[derive(Debug)]
struct Node {
    op: Op,
    value: Tensor,
    requires_grad: bool,
    saved: Option<(Tensor, Tensor)>,
    /// Elementwise "kink active" flags for clamp-like nodes.
    mask: Option<Vec<bool>>,
    /// Variance outputs of a moment node forced up to zero.
    clamped: usize,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    check_finite: bool,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// Reject NaN/Inf at record time.
    pub fn with_finite_check() -> Self {
        Self {
            nodes: Vec::new(),
            check_finite: true,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push_leaf(value, true)
    }

    /// Data leaf; no adjoint is propagated into it.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push_leaf(value, false)
    }

    fn push_leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            op: Op::Leaf,
            value,
            requires_grad,
            saved: None,
            mask: None,
            clamped: 0,
        });
        Var(self.nodes.len() - 1)
    }

    fn grad_of(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    fn push(&mut self, op: Op, value: Tensor, inputs: &[Var]) -> Result<Var> {
        self.push_full(op, value, inputs, None, None)
    }

    fn push_full(
        &mut self,
        op: Op,
        value: Tensor,
        inputs: &[Var],
        saved: Option<(Tensor, Tensor)>,
        mask: Option<Vec<bool>>,
    ) -> Result<Var> {
        if self.check_finite {
            if let Some(index) = value.data().iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite {
                    op: op_name(&op),
                    index,
                });
            }
        }
        let requires_grad = self.grad_of(inputs);
        self.nodes.push(Node {
            op,
            value,
            requires_grad,
            saved,
            mask,
            clamped: 0,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn map(&mut self, x: Var, op: Op, f: impl Fn(f64) -> f64) -> Result<Var> {
        let value = self.value(x).map(f);
        self.push(op, value, &[x])
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        self.push(Op::MatMul(a, b), value, &[a, b])
    }

    /// `a · bᵀ`; activations (`batch x in`) against weights (`out x in`).
    pub fn matmul_bt(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul_bt(self.value(b))?;
        self.push(Op::MatMulBt(a, b), value, &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).zip_map(self.value(b), |x, y| x + y)?;
        self.push(Op::Add(a, b), value, &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).zip_map(self.value(b), |x, y| x - y)?;
        self.push(Op::Sub(a, b), value, &[a, b])
    }

    /// Adds a `1 x n` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let mut value = self.value(a).clone();
        value.add_row_assign(self.value(row))?;
        self.push(Op::AddRow(a, row), value, &[a, row])
    }

    pub fn hadamard(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).zip_map(self.value(b), |x, y| x * y)?;
        self.push(Op::Hadamard(a, b), value, &[a, b])
    }

    /// `scale · x + shift`.
    pub fn affine(&mut self, x: Var, scale: f64, shift: f64) -> Result<Var> {
        self.map(x, Op::Affine(x, scale), |v| scale * v + shift)
    }

    pub fn scale(&mut self, x: Var, scale: f64) -> Result<Var> {
        self.affine(x, scale, 0.0)
    }

    pub fn square(&mut self, x: Var) -> Result<Var> {
        self.map(x, Op::Square(x), |v| v * v)
    }

    pub fn sqrt(&mut self, x: Var) -> Result<Var> {
        self.map(x, Op::Sqrt(x), f64::sqrt)
    }

    pub fn exp(&mut self, x: Var) -> Result<Var> {
        self.map(x, Op::Exp(x), f64::exp)
    }

    pub fn log(&mut self, x: Var) -> Result<Var> {
        self.map(x, Op::Log(x), f64::ln)
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.map(x, Op::Sigmoid(x), moments::sigmoid)
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        self.map(x, Op::Tanh(x), f64::tanh)
    }

    /// `log(1 + eˣ)`.
    pub fn softplus(&mut self, x: Var) -> Result<Var> {
        self.map(x, Op::Softplus(x), softplus)
    }

    /// Elementwise clamp to `[lo, hi]`; the derivative is 1 strictly inside
    /// and 0 at or beyond either bound.
    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Result<Var> {
        let input = self.value(x);
        let mask: Vec<bool> = input.data().iter().map(|&v| !(v > lo && v < hi)).collect();
        let value = input.map(|v| v.clamp(lo, hi));
        self.push_full(Op::Clamp(x), value, &[x], None, Some(mask))
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let value = Tensor::scalar(self.value(x).sum());
        self.push(Op::Sum(x), value, &[x])
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let t = self.value(x);
        let value = Tensor::scalar(t.sum() / t.len() as f64);
        self.push(Op::Mean(x), value, &[x])
    }

    pub fn sigmoid_mean(&mut self, m: Var, s: Var, k: &NmmConstants) -> Result<Var> {
        self.moment(Composite::SigmoidMean, m, s, |m, s| {
            (moments::sigmoid_mean(m, s, k), false)
        })
    }

    pub fn sigmoid_var(&mut self, m: Var, s: Var, k: &NmmConstants) -> Result<Var> {
        self.moment(Composite::SigmoidVar, m, s, |m, s| moments::sigmoid_var(m, s, k))
    }

    pub fn tanh_mean(&mut self, m: Var, s: Var, k: &NmmConstants) -> Result<Var> {
        self.moment(Composite::TanhMean, m, s, |m, s| {
            (moments::tanh_mean(m, s, k), false)
        })
    }

    pub fn tanh_var(&mut self, m: Var, s: Var, k: &NmmConstants) -> Result<Var> {
        self.moment(Composite::TanhVar, m, s, |m, s| moments::tanh_var(m, s, k))
    }

    fn moment(
        &mut self,
        kind: Composite,
        m: Var,
        s: Var,
        f: impl Fn(f64, f64) -> (Partials, bool),
    ) -> Result<Var> {
        let (mt, st) = (self.value(m), self.value(s));
        if mt.shape() != st.shape() {
            return shape_err(
                "moment activation",
                format!("mean {:?} vs variance {:?}", mt.shape(), st.shape()),
            );
        }
        let (rows, cols) = mt.shape();
        let n = rows * cols;
        let (mut value, mut dm, mut ds) = (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
        let mut mask = Vec::with_capacity(n);
        let mut clamped_total = 0;
        for (&mi, &si) in mt.data().iter().zip(st.data()) {
            let (p, clamped) = f(mi, si);
            value.push(p.value);
            dm.push(p.d_m);
            ds.push(p.d_s);
            // the point-mass case is a kink in s as well
            mask.push(clamped || si == 0.0);
            clamped_total += clamped as usize;
        }
        let has_clamp = matches!(kind, Composite::SigmoidVar | Composite::TanhVar);
        let v = self.push_full(
            Op::Moment(kind, m, s),
            Tensor::from_vec(rows, cols, value)?,
            &[m, s],
            Some((Tensor::from_vec(rows, cols, dm)?, Tensor::from_vec(rows, cols, ds)?)),
            has_clamp.then_some(mask),
        )?;
        self.nodes[v.0].clamped = clamped_total;
        Ok(v)
    }

    /// Summed binary cross-entropy `−Σ [t log p + (1 − t) log(1 − p)]`.
    pub fn bce_sum(&mut self, p: Var, target: &Tensor) -> Result<Var> {
        let pt = self.value(p);
        if pt.shape() != target.shape() {
            return shape_err(
                "bce",
                format!("prediction {:?} vs target {:?}", pt.shape(), target.shape()),
            );
        }
        let total: f64 = pt
            .data()
            .iter()
            .zip(target.data())
            .map(|(&p, &t)| {
                let p = p.clamp(BCE_EPS, 1.0 - BCE_EPS);
                -(t * p.ln() + (1.0 - t) * (1.0 - p).ln())
            })
            .sum();
        self.push(Op::Bce(p, target.clone()), Tensor::scalar(total), &[p])
    }

    /// Summed Gaussian negative log-likelihood `Σ ½[log(2πs) + (t − m)²/s]`.
    pub fn gaussian_nll_sum(&mut self, m: Var, s: Var, target: &Tensor) -> Result<Var> {
        let (mt, st) = (self.value(m), self.value(s));
        if mt.shape() != target.shape() || st.shape() != target.shape() {
            return shape_err(
                "gaussian_nll",
                format!(
                    "mean {:?}, variance {:?}, target {:?}",
                    mt.shape(),
                    st.shape(),
                    target.shape()
                ),
            );
        }
        let total: f64 = mt
            .data()
            .iter()
            .zip(st.data())
            .zip(target.data())
            .map(|((&m, &s), &t)| {
                let s = s.max(NLL_VARIANCE_FLOOR);
                0.5 * ((2.0 * PI * s).ln() + (t - m) * (t - m) / s)
            })
            .sum();
        self.push(
            Op::GaussNll(m, s, target.clone()),
            Tensor::scalar(total),
            &[m, s],
        )
    }

    /// Number of variance elements clamped at zero by moment activations.
    pub fn clamp_count(&self) -> usize {
        self.nodes.iter().map(|n| n.clamped).sum()
    }

    /// Concatenated kink flags of every clamp-like node, in tape order.
    pub fn kink_signature(&self) -> Vec<bool> {
        self.nodes
            .iter()
            .filter_map(|n| n.mask.as_ref())
            .flat_map(|m| m.iter().copied())
            .collect()
    }

    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let (rows, cols) = self.value(loss).shape();
        if rows * cols != 1 {
            return Err(Error::NonScalarLoss { rows, cols });
        }
        let mut adj: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        adj[loss.0] = Some(Tensor::filled(rows, cols, 1.0));

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = adj[i].take() else { continue };
            self.propagate(node, &g, &mut adj)?;
            adj[i] = Some(g);
        }
        Ok(Gradients { adj })
    }

    fn propagate(&self, node: &Node, g: &Tensor, adj: &mut [Option<Tensor>]) -> Result<()> {
        let val = |v: Var| &self.nodes[v.0].value;
        let mut acc = |v: Var, contrib: Tensor| -> Result<()> {
            if !self.nodes[v.0].requires_grad {
                return Ok(());
            }
            match &mut adj[v.0] {
                Some(existing) => existing.add_assign(&contrib),
                slot @ None => {
                    *slot = Some(contrib);
                    Ok(())
                }
            }
        };
        let wants = |v: Var| self.nodes[v.0].requires_grad;
        let out = &node.value;

        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if wants(*a) {
                    acc(*a, g.matmul_bt(val(*b))?)?;
                }
                if wants(*b) {
                    acc(*b, val(*a).matmul_at(g)?)?;
                }
            }
            Op::MatMulBt(a, b) => {
                // C = A Bᵀ: dA = G B, dB = Gᵀ A
                if wants(*a) {
                    acc(*a, g.matmul(val(*b))?)?;
                }
                if wants(*b) {
                    acc(*b, g.matmul_at(val(*a))?)?;
                }
            }
            Op::Add(a, b) => {
                acc(*a, g.clone())?;
                acc(*b, g.clone())?;
            }
            Op::Sub(a, b) => {
                acc(*a, g.clone())?;
                acc(*b, g.map(|v| -v))?;
            }
            Op::AddRow(a, row) => {
                acc(*a, g.clone())?;
                if wants(*row) {
                    acc(*row, g.sum_rows())?;
                }
            }
            Op::Hadamard(a, b) => {
                if wants(*a) {
                    acc(*a, g.zip_map(val(*b), |g, y| g * y)?)?;
                }
                if wants(*b) {
                    acc(*b, g.zip_map(val(*a), |g, x| g * x)?)?;
                }
            }
            Op::Affine(x, scale) => acc(*x, g.map(|v| v * scale))?,
            Op::Square(x) => acc(*x, g.zip_map(val(*x), |g, x| 2.0 * g * x)?)?,
            Op::Sqrt(x) => acc(*x, g.zip_map(out, |g, y| 0.5 * g / y)?)?,
            Op::Exp(x) => acc(*x, g.zip_map(out, |g, y| g * y)?)?,
            Op::Log(x) => acc(*x, g.zip_map(val(*x), |g, x| g / x)?)?,
            Op::Sigmoid(x) => acc(*x, g.zip_map(out, |g, y| g * y * (1.0 - y))?)?,
            Op::Tanh(x) => acc(*x, g.zip_map(out, |g, y| g * (1.0 - y * y))?)?,
            Op::Softplus(x) => acc(*x, g.zip_map(val(*x), |g, x| g * moments::sigmoid(x))?)?,
            Op::Clamp(x) => {
                let mask = node.mask.as_ref().expect("clamp mask");
                let mut d = g.clone();
                for (v, &kink) in d.data_mut().iter_mut().zip(mask) {
                    if kink {
                        *v = 0.0;
                    }
                }
                acc(*x, d)?;
            }
            Op::Sum(x) => {
                let (r, c) = val(*x).shape();
                acc(*x, Tensor::filled(r, c, g.item()))?;
            }
            Op::Mean(x) => {
                let (r, c) = val(*x).shape();
                acc(*x, Tensor::filled(r, c, g.item() / (r * c) as f64))?;
            }
            Op::Moment(_, m, s) => {
                let (dm, ds) = node.saved.as_ref().expect("moment partials");
                if wants(*m) {
                    acc(*m, g.zip_map(dm, |g, d| g * d)?)?;
                }
                if wants(*s) {
                    acc(*s, g.zip_map(ds, |g, d| g * d)?)?;
                }
            }
            Op::Bce(p, target) => {
                let gi = g.item();
                let d = val(*p).zip_map(target, |p, t| {
                    if p <= BCE_EPS || p >= 1.0 - BCE_EPS {
                        0.0
                    } else {
                        gi * (p - t) / (p * (1.0 - p))
                    }
                })?;
                acc(*p, d)?;
            }
            Op::GaussNll(m, s, target) => {
                let gi = g.item();
                let (mt, st) = (val(*m), val(*s));
                if wants(*m) {
                    let d = mt
                        .zip_map(st, |m, s| m / s.max(NLL_VARIANCE_FLOOR))?
                        .zip_map(&target.zip_map(st, |t, s| t / s.max(NLL_VARIANCE_FLOOR))?, |a, b| {
                            gi * (a - b)
                        })?;
                    acc(*m, d)?;
                }
                if wants(*s) {
                    let resid = mt.zip_map(target, |m, t| (t - m) * (t - m))?;
                    let d = st.zip_map(&resid, |s, r| {
                        if s < NLL_VARIANCE_FLOOR {
                            0.0
                        } else {
                            gi * 0.5 * (1.0 / s - r / (s * s))
                        }
                    })?;
                    acc(*s, d)?;
                }
            }
        }
        Ok(())
    }
}

/// Numerically stable `log(1 + eˣ)`.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Inverse of [`softplus`] for `y > 0`.
pub fn softplus_inverse(y: f64) -> f64 {
    if y > 30.0 {
        y + (-(-y).exp()).ln_1p()
    } else {
        y.exp_m1().ln()
    }
}

fn op_name(op: &Op) -> &'static str {
    match op {
        Op::Leaf => "leaf",
        Op::MatMul(..) => "matmul",
        Op::MatMulBt(..) => "matmul_bt",
        Op::Add(..) => "add",
        Op::Sub(..) => "sub",
        Op::AddRow(..) => "add_row",
        Op::Hadamard(..) => "hadamard",
        Op::Affine(..) => "affine",
        Op::Square(_) => "square",
        Op::Sqrt(_) => "sqrt",
        Op::Exp(_) => "exp",
        Op::Log(_) => "log",
        Op::Sigmoid(_) => "sigmoid",
        Op::Tanh(_) => "tanh",
        Op::Softplus(_) => "softplus",
        Op::Clamp(_) => "clamp",
        Op::Sum(_) => "sum",
        Op::Mean(_) => "mean",
        Op::Moment(Composite::SigmoidMean, ..) => "sigmoid_mean",
        Op::Moment(Composite::SigmoidVar, ..) => "sigmoid_var",
        Op::Moment(Composite::TanhMean, ..) => "tanh_mean",
        Op::Moment(Composite::TanhVar, ..) => "tanh_var",
        Op::Bce(..) => "bce",
        Op::GaussNll(..) => "gaussian_nll",
    }
}

/// Adjoints from one backward pass. Nodes the loss does not depend on have none.
#[derive(Debug)]
pub struct Gradients {
    adj: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.adj.get(v.0).and_then(Option::as_ref)
    }

    /// Adjoint of `v`, or zeros shaped like `like` if the loss ignores it.
    pub fn get_or_zeros(&self, v: Var, like: &Tensor) -> Tensor {
        self.get(v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(like.rows(), like.cols()))
    }

    pub fn reached(&self) -> usize {
        self.adj.iter().filter(|a| a.is_some()).count()
    }
}

#[derive(Clone, Debug)]
pub struct GradCheckOptions {
    pub h: f64,
    pub tol: f64,
    /// Absolute error below which an entry passes regardless of `tol`.
    pub abs_floor: f64,
    /// Per-parameter lower bound of the domain; entries closer than `h`
    /// use a one-sided difference.
    pub lower_bounds: Vec<Option<f64>>,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            h: 1e-5,
            tol: 1e-4,
            abs_floor: 1e-6,
            lower_bounds: Vec::new(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CheckStatus {
    Pass,
    Fail,
    /// Perturbation crosses a clamp kink; the derivative is a subgradient.
    Excluded,
}

#[derive(Clone, Debug)]
pub struct GradCheckEntry {
    pub param: usize,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub abs_error: f64,
    pub rel_error: f64,
    pub one_sided: bool,
    pub status: CheckStatus,
}

#[derive(Clone, Debug, Default)]
pub struct GradCheckReport {
    pub entries: Vec<GradCheckEntry>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.entries.iter().all(|e| e.status != CheckStatus::Fail)
    }

    pub fn failures(&self) -> impl Iterator<Item = &GradCheckEntry> {
        self.entries.iter().filter(|e| e.status == CheckStatus::Fail)
    }

    pub fn excluded(&self) -> usize {
        self.entries
            .iter()
            .filter(|e| e.status == CheckStatus::Excluded)
            .count()
    }

    pub fn max_rel_error(&self) -> f64 {
        self.entries
            .iter()
            .filter(|e| e.status != CheckStatus::Excluded)
            .map(|e| e.rel_error)
            .fold(0.0, f64::max)
    }
}

/// Compares tape gradients of `f` with finite differences for every element
/// of every parameter.
pub fn grad_check<F>(f: F, params: &[Tensor], opts: &GradCheckOptions) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    if !(opts.h > 0.0) {
        return Err(Error::Config(format!("finite-difference step must be positive, got {}", opts.h)));
    }
    let eval = |ps: &[Tensor]| -> Result<(f64, Vec<bool>)> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = ps.iter().map(|p| tape.param(p.clone())).collect();
        let loss = f(&mut tape, &vars)?;
        Ok((tape.value(loss).item(), tape.kink_signature()))
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.param(p.clone())).collect();
    let loss = f(&mut tape, &vars)?;
    let base_value = tape.value(loss).item();
    let base_kinks = tape.kink_signature();
    let grads = tape.backward(loss)?;

    let h = opts.h;
    let mut report = GradCheckReport::default();
    let mut work: Vec<Tensor> = params.to_vec();
    for (pi, p) in params.iter().enumerate() {
        let analytic = grads.get_or_zeros(vars[pi], p);
        let lower = opts.lower_bounds.get(pi).copied().flatten();
        for idx in 0..p.len() {
            let x0 = p.data()[idx];
            let mut at = |x: f64| -> Result<(f64, Vec<bool>)> {
                work[pi].data_mut()[idx] = x;
                let r = eval(&work);
                work[pi].data_mut()[idx] = x0;
                r
            };
            let one_sided = lower.is_some_and(|lb| x0 - h < lb);
            let mut crosses_kink = false;
            if !base_kinks.is_empty() {
                let far = 10.0 * h;
                if at(x0 + far)?.1 != base_kinks {
                    crosses_kink = true;
                }
                if !one_sided && at(x0 - far)?.1 != base_kinks {
                    crosses_kink = true;
                }
            }
            let numeric = if one_sided {
                let f1 = at(x0 + h)?.0;
                let f2 = at(x0 + 2.0 * h)?.0;
                (-3.0 * base_value + 4.0 * f1 - f2) / (2.0 * h)
            } else {
                (at(x0 + h)?.0 - at(x0 - h)?.0) / (2.0 * h)
            };
            let a = analytic.data()[idx];
            let abs_error = (a - numeric).abs();
            let scale = a.abs().max(numeric.abs());
            let rel_error = if scale > 0.0 { abs_error / scale } else { 0.0 };
            let status = if crosses_kink {
                CheckStatus::Excluded
            } else if abs_error <= opts.abs_floor || rel_error <= opts.tol {
                CheckStatus::Pass
            } else {
                CheckStatus::Fail
            };
            report.entries.push(GradCheckEntry {
                param: pi,
                index: idx,
                analytic: a,
                numeric,
                abs_error,
                rel_error,
                one_sided,
                status,
            });
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(rows: usize, cols: usize, v: &[f64]) -> Tensor {
        Tensor::from_vec(rows, cols, v.to_vec()).unwrap()
    }

    #[test]
    fn forward_values() {
        let mut tape = Tape::new();
        let x = tape.param(t(1, 3, &[1.0, -2.0, 3.0]));
        let y = tape.param(t(1, 3, &[0.5, 0.5, 0.5]));
        let s = tape.add(x, y).unwrap();
        assert_eq!(tape.value(s).data(), &[1.5, -1.5, 3.5]);
        let h = tape.hadamard(x, x).unwrap();
        assert_eq!(tape.value(h).data(), &[1.0, 4.0, 9.0]);
    }

    #[test]
    fn sum_gradient_is_ones() {
        let mut tape = Tape::new();
        let x = tape.param(t(2, 2, &[1.0, 2.0, 3.0, 4.0]));
        let l = tape.sum(x).unwrap();
        let g = tape.backward(l).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[1.0; 4]);
    }

    #[test]
    fn sum_of_squares_gradient_is_two_x() {
        let mut tape = Tape::new();
        let x = tape.param(t(1, 3, &[1.0, -2.0, 0.5]));
        let sq = tape.hadamard(x, x).unwrap();
        let l = tape.sum(sq).unwrap();
        let g = tape.backward(l).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[2.0, -4.0, 1.0]);
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut tape = Tape::new();
        let x = tape.param(t(1, 2, &[1.0, 2.0]));
        assert!(matches!(
            tape.backward(x),
            Err(Error::NonScalarLoss { rows: 1, cols: 2 })
        ));
    }

    #[test]
    fn only_reachable_nodes_get_adjoints() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::scalar(2.0));
        let unused = tape.param(Tensor::scalar(3.0));
        let _dangling = tape.square(unused).unwrap();
        let data = tape.constant(Tensor::scalar(5.0));
        let y = tape.hadamard(x, data).unwrap();
        let g = tape.backward(y).unwrap();
        assert_eq!(g.get(x).unwrap().item(), 5.0);
        assert!(g.get(unused).is_none());
        assert!(g.get(data).is_none());
        assert_eq!(g.reached(), 2);
    }

    #[test]
    fn finite_check_rejects_nan() {
        let mut tape = Tape::with_finite_check();
        let x = tape.param(Tensor::scalar(-1.0));
        assert!(matches!(tape.log(x), Err(Error::NonFinite { op: "log", .. })));
        assert!(matches!(tape.sqrt(x), Err(Error::NonFinite { op: "sqrt", .. })));
    }

    #[test]
    fn shape_errors_propagate() {
        let mut tape = Tape::new();
        let a = tape.param(Tensor::zeros(2, 3));
        let b = tape.param(Tensor::zeros(2, 2));
        assert!(tape.add(a, b).is_err());
        assert!(tape.matmul(a, b).is_err());
        assert!(tape.sigmoid_mean(a, b, &NmmConstants::default()).is_err());
    }

    #[test]
    fn clamp_gradient_around_boundary() {
        let eps = 1e-7;
        let mut tape = Tape::new();
        let x = tape.param(t(1, 4, &[-eps, eps, 1.0 - eps, 1.0 + eps]));
        let c = tape.clamp(x, 0.0, 1.0).unwrap();
        let l = tape.sum(c).unwrap();
        let g = tape.backward(l).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[0.0, 1.0, 1.0, 0.0]);
        // the kink itself takes subgradient 0
        let mut tape = Tape::new();
        let x = tape.param(t(1, 1, &[0.0]));
        let c = tape.clamp(x, 0.0, 1.0).unwrap();
        let l = tape.sum(c).unwrap();
        assert_eq!(tape.backward(l).unwrap().get(x).unwrap().item(), 0.0);
    }

    #[test]
    fn backward_is_deterministic() {
        let run = || {
            let mut tape = Tape::new();
            let w = tape.param(t(2, 3, &[0.1, -0.2, 0.3, 0.4, -0.5, 0.6]));
            let x = tape.constant(t(1, 3, &[1.0, 2.0, -1.0]));
            let o = tape.matmul_bt(x, w).unwrap();
            let s = tape.sigmoid(o).unwrap();
            let l = tape.sum(s).unwrap();
            tape.backward(l).unwrap().get(w).unwrap().clone()
        };
        let a = run();
        let b = run();
        assert!(a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
    }

    #[test]
    fn softplus_inverse_round_trip() {
        for y in [1e-6, 1e-3, 0.5, 3.0, 40.0] {
            let r = softplus(softplus_inverse(y));
            assert!((r - y).abs() <= 1e-12 * y, "{y} -> {r}");
        }
    }

    #[test]
    fn grad_check_linear_layer_passes() {
        let w = t(2, 3, &[0.3, -0.1, 0.7, 0.2, 0.5, -0.4]);
        let b = t(1, 2, &[0.1, -0.3]);
        let x = t(2, 3, &[1.0, 0.5, -2.0, 0.2, -0.7, 1.5]);
        let report = grad_check(
            |tape, p| {
                let xv = tape.constant(x.clone());
                let o = tape.matmul_bt(xv, p[0])?;
                let o = tape.add_row(o, p[1])?;
                let sq = tape.square(o)?;
                tape.sum(sq)
            },
            &[w, b],
            &GradCheckOptions::default(),
        )
        .unwrap();
        assert!(report.passed(), "{:?}", report.failures().collect::<Vec<_>>());
        assert_eq!(report.entries.len(), 8);
    }

    #[test]
    fn grad_check_excludes_active_clamp_kink() {
        let x = t(1, 3, &[0.0, 0.5, 2.0]);
        let report = grad_check(
            |tape, p| {
                let c = tape.clamp(p[0], 0.0, 1.0)?;
                let sq = tape.square(c)?;
                tape.sum(sq)
            },
            &[x],
            &GradCheckOptions::default(),
        )
        .unwrap();
        assert_eq!(report.entries[0].status, CheckStatus::Excluded);
        assert_eq!(report.entries[1].status, CheckStatus::Pass);
        assert_eq!(report.entries[2].status, CheckStatus::Pass);
        assert!(report.passed());
    }

    #[test]
    fn grad_check_sigmoid_moment_at_origin_is_one_sided_in_variance() {
        let k = NmmConstants::default();
        let report = grad_check(
            |tape, p| {
                let a = tape.sigmoid_mean(p[0], p[1], &k)?;
                tape.sum(a)
            },
            &[Tensor::scalar(0.0), Tensor::scalar(0.0)],
            &GradCheckOptions {
                lower_bounds: vec![None, Some(0.0)],
                ..Default::default()
            },
        )
        .unwrap();
        assert!(report.passed(), "{:?}", report.entries);
        assert!(!report.entries[0].one_sided);
        assert!(report.entries[1].one_sided);
        assert_eq!(report.excluded(), 0);

        // the variance jumps from the point mass to the approximation residual
        let report = grad_check(
            |tape, p| {
                let v = tape.sigmoid_var(p[0], p[1], &k)?;
                tape.sum(v)
            },
            &[Tensor::scalar(0.0), Tensor::scalar(0.0)],
            &GradCheckOptions {
                lower_bounds: vec![None, Some(0.0)],
                ..Default::default()
            },
        )
        .unwrap();
        assert!(report.passed());
        assert_eq!(report.entries[1].status, CheckStatus::Excluded);
    }

    #[test]
    fn grad_check_rejects_nonpositive_step() {
        let r = grad_check(
            |tape, p| tape.sum(p[0]),
            &[Tensor::scalar(1.0)],
            &GradCheckOptions {
                h: 0.0,
                ..Default::default()
            },
        );
        assert!(r.is_err());
    }
}
