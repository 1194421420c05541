//! Define-by-run reverse-mode differentiation.
//!
//! A [`Tape`] records every operation as it is evaluated. Nodes are appended
//! in evaluation order, which is a topological order, and [`Tape::backward`]
//! walks them in strict reverse append order. Parameters enter the tape as
//! leaves bound to a [`ParamStore`]; each parameter gets at most one leaf per
//! tape so its gradient is a single accumulator.

use super::array::{as_matrix, gemm_nn, gemm_nt, gemm_tn, softmax_in_place, Array};
use super::params::{ParamId, ParamStore};
use super::rng::Rng;
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Tags for [`Tape::elementwise`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Elementwise {
    Add,
    Sub,
    Mul,
    Sigmoid,
    Tanh,
    Exp,
    Log,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Param,
    MatMul(Var, Var),
    MatMulNt(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    Affine(Var, f64),
    Sigmoid(Var),
    Tanh(Var),
    Exp(Var),
    Log(Var),
    Relu(Var),
    Pow(Var, f64),
    Clamp(Var, f64, f64),
    Softmax(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize, usize),
    ConcatRows(Vec<Var>),
    GatherRows(Var, Vec<Option<usize>>),
    Segment(Var, Vec<Vec<usize>>, bool),
    ScaleRows(Var, Var),
    Reshape(Var),
    SelectRows(Vec<bool>, Var, Var),
    PickCols(Var, Vec<usize>),
    Sum(Var),
    Mean(Var),
    TimeEncode {
        t: Vec<f64>,
        omega: Var,
        phi: Var,
    },
    Dropout(Var, Vec<f64>),
    Transpose(Var),
}

struct Node {
    value: Array,
    op: Op,
    requires_grad: bool,
}

pub struct Tape<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node>,
    param_vars: Vec<Option<Var>>,
    training: bool,
    rng: Option<Rng>,
    backward_done: bool,
}

/// Gradients produced by one backward pass.
pub struct Gradients {
    grads: Vec<Option<Array>>,
    param_vars: Vec<Option<Var>>,
}

impl Gradients {
    /// Gradient with respect to any node; `None` if the node did not influence the loss.
    pub fn wrt(&self, v: Var) -> Option<&Array> {
        self.grads[v.0].as_ref()
    }

    /// Gradient of a parameter, or `None` if the parameter was never used.
    pub fn param(&self, id: ParamId) -> Option<&Array> {
        self.param_vars
            .get(id)
            .copied()
            .flatten()
            .and_then(|v| self.grads[v.0].as_ref())
    }

    /// `(id, gradient)` for every parameter that reached the loss.
    pub fn params(&self) -> Vec<(ParamId, &Array)> {
        self.param_vars
            .iter()
            .enumerate()
            .filter_map(|(id, v)| v.and_then(|v| self.grads[v.0].as_ref()).map(|g| (id, g)))
            .collect()
    }

    pub fn param_norm(&self) -> f64 {
        self.params()
            .iter()
            .map(|(_, g)| g.data().iter().map(|x| x * x).sum::<f64>())
            .sum::<f64>()
            .sqrt()
    }
}

fn dim_err<T>(msg: String) -> Result<T> {
    Err(Error::Dimension(msg))
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl<'p> Tape<'p> {
    /// Inference tape: dropout is the identity.
    pub fn new(params: &'p ParamStore) -> Self {
        Tape {
            params,
            nodes: Vec::new(),
            param_vars: vec![None; params.len()],
            training: false,
            rng: None,
            backward_done: false,
        }
    }

    /// Training tape: dropout masks are drawn from `rng`.
    pub fn training(params: &'p ParamStore, rng: Rng) -> Self {
        let mut t = Tape::new(params);
        t.training = true;
        t.rng = Some(rng);
        t
    }

    pub fn is_training(&self) -> bool {
        self.training
    }

    /// Hands back the dropout generator so its position can be persisted.
    pub fn take_rng(&mut self) -> Option<Rng> {
        self.rng.take()
    }

    pub fn params(&self) -> &'p ParamStore {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Array {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Array, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Constant input (no gradient is tracked into it).
    pub fn constant(&mut self, value: Array) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Differentiable leaf that is not a stored parameter; used by gradient checks.
    pub fn variable(&mut self, value: Array) -> Var {
        self.push(value, Op::Param, true)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars[id] {
            return v;
        }
        let v = self.push(self.params.get(id).clone(), Op::Param, true);
        self.param_vars[id] = Some(v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::MatMul(a, b), rg))
    }

    /// `a · bᵀ`; `b` is `[n × k]`. Weight matrices stored `[out × in]` use this.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul_nt(self.value(b))?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::MatMulNt(a, b), rg))
    }

    /// `x · wᵀ + b` with `b` broadcast over rows.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let y = self.matmul_nt(x, w)?;
        match b {
            Some(b) => self.add_row(y, b),
            None => Ok(y),
        }
    }

    pub fn elementwise(&mut self, tag: Elementwise, a: Var, b: Option<Var>) -> Result<Var> {
        let need_b = matches!(tag, Elementwise::Add | Elementwise::Sub | Elementwise::Mul);
        match (need_b, b) {
            (true, Some(b)) => match tag {
                Elementwise::Add => self.add(a, b),
                Elementwise::Sub => self.sub(a, b),
                _ => self.mul(a, b),
            },
            (true, None) => Err(Error::Contract(format!("{tag:?} needs two operands"))),
            (false, Some(_)) => Err(Error::Contract(format!("{tag:?} takes one operand"))),
            (false, None) => match tag {
                Elementwise::Sigmoid => Ok(self.sigmoid(a)),
                Elementwise::Tanh => Ok(self.tanh(a)),
                Elementwise::Exp => Ok(self.exp(a)),
                _ => self.log(a),
            },
        }
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).zip_map(self.value(b), |x, y| x + y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).zip_map(self.value(b), |x, y| x - y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::Sub(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).zip_map(self.value(b), |x, y| x * y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::Mul(a, b), rg))
    }

    fn check_row(&self, m: Var, r: Var, what: &str) -> Result<()> {
        let cols = self.value(m).cols();
        let rv = self.value(r);
        if rv.len() != cols {
            return dim_err(format!(
                "{what}: row {:?} does not match columns of {:?}",
                rv.shape(),
                self.value(m).shape()
            ));
        }
        Ok(())
    }

    /// Adds a row vector to every row of `m`.
    pub fn add_row(&mut self, m: Var, row: Var) -> Result<Var> {
        self.check_row(m, row, "add_row")?;
        let mv = self.value(m);
        let r = self.value(row).data();
        let cols = mv.cols();
        let mut out = mv.data().to_vec();
        for chunk in out.chunks_mut(cols.max(1)) {
            for (o, &b) in chunk.iter_mut().zip(r) {
                *o += b;
            }
        }
        let value = Array::new(mv.shape(), out)?;
        let rg = self.rg(m) || self.rg(row);
        Ok(self.push(value, Op::AddRow(m, row), rg))
    }

    /// Multiplies every row of `m` elementwise by a row vector.
    pub fn mul_row(&mut self, m: Var, row: Var) -> Result<Var> {
        self.check_row(m, row, "mul_row")?;
        let mv = self.value(m);
        let r = self.value(row).data();
        let cols = mv.cols();
        let mut out = mv.data().to_vec();
        for chunk in out.chunks_mut(cols.max(1)) {
            for (o, &g) in chunk.iter_mut().zip(r) {
                *o *= g;
            }
        }
        let value = Array::new(mv.shape(), out)?;
        let rg = self.rg(m) || self.rg(row);
        Ok(self.push(value, Op::MulRow(m, row), rg))
    }

    /// `scale * x + shift`, elementwise.
    pub fn affine(&mut self, x: Var, scale: f64, shift: f64) -> Var {
        let value = self.value(x).map(|v| scale * v + shift);
        let rg = self.rg(x);
        self.push(value, Op::Affine(x, scale), rg)
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        self.affine(x, s, 0.0)
    }

    /// `1 - x`
    pub fn one_minus(&mut self, x: Var) -> Var {
        self.affine(x, -1.0, 1.0)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let value = self.value(x).map(sigmoid);
        let rg = self.rg(x);
        self.push(value, Op::Sigmoid(x), rg)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let value = self.value(x).map(f64::tanh);
        let rg = self.rg(x);
        self.push(value, Op::Tanh(x), rg)
    }

    pub fn exp(&mut self, x: Var) -> Var {
        let value = self.value(x).map(f64::exp);
        let rg = self.rg(x);
        self.push(value, Op::Exp(x), rg)
    }

    pub fn log(&mut self, x: Var) -> Result<Var> {
        if let Some(bad) = self.value(x).data().iter().find(|&&v| !(v > 0.0)) {
            return Err(Error::Domain(format!("log of non-positive value {bad}")));
        }
        let value = self.value(x).map(f64::ln);
        let rg = self.rg(x);
        Ok(self.push(value, Op::Log(x), rg))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let value = self.value(x).map(|v| v.max(0.0));
        let rg = self.rg(x);
        self.push(value, Op::Relu(x), rg)
    }

    /// `x^e` for non-negative `x`.
    pub fn pow(&mut self, x: Var, e: f64) -> Result<Var> {
        if self.value(x).data().iter().any(|&v| v < 0.0) {
            return Err(Error::Domain("pow of negative base".into()));
        }
        let value = self.value(x).map(|v| v.powf(e));
        let rg = self.rg(x);
        Ok(self.push(value, Op::Pow(x, e), rg))
    }

    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Var {
        let value = self.value(x).map(|v| v.clamp(lo, hi));
        let rg = self.rg(x);
        self.push(value, Op::Clamp(x, lo, hi), rg)
    }

    /// Softmax along the last axis.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let cols = xv.cols();
        if cols == 0 || xv.is_empty() {
            return dim_err("softmax over empty axis".into());
        }
        let mut out = xv.data().to_vec();
        for row in out.chunks_mut(cols) {
            softmax_in_place(row);
        }
        let value = Array::new(xv.shape(), out)?;
        let rg = self.rg(x);
        Ok(self.push(value, Op::Softmax(x), rg))
    }

    /// Softmax along the last axis where `allowed[i*cols+j] == false` positions
    /// get exactly zero weight.
    pub fn masked_softmax(&mut self, x: Var, allowed: Vec<bool>) -> Result<Var> {
        let xv = self.value(x);
        let cols = xv.cols();
        if allowed.len() != xv.len() {
            return dim_err(format!(
                "mask of length {} for {:?}",
                allowed.len(),
                xv.shape()
            ));
        }
        let mut out = vec![0.0; xv.len()];
        for (r, (orow, mrow)) in out
            .chunks_mut(cols)
            .zip(allowed.chunks(cols))
            .enumerate()
        {
            let xrow = xv.row_slice(r);
            let max = xrow
                .iter()
                .zip(mrow)
                .filter(|(_, &m)| m)
                .fold(f64::NEG_INFINITY, |a, (&v, _)| a.max(v));
            if max == f64::NEG_INFINITY {
                return Err(Error::Contract(format!("row {r} has every position masked")));
            }
            let mut total = 0.0;
            for ((o, &v), &m) in orow.iter_mut().zip(xrow).zip(mrow) {
                if m {
                    *o = (v - max).exp();
                    total += *o;
                }
            }
            for o in orow.iter_mut() {
                *o /= total;
            }
        }
        let value = Array::new(xv.shape(), out)?;
        // Masked outputs are exactly zero, so the plain softmax backward
        // already gives them zero gradient.
        let rg = self.rg(x);
        Ok(self.push(value, Op::Softmax(x), rg))
    }

    /// Per-row normalization over the last axis followed by `gain ⊙ x̂ + bias`.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        if !(eps > 0.0) {
            return Err(Error::Contract("layer_norm eps must be positive".into()));
        }
        self.check_row(x, gain, "layer_norm gain")?;
        self.check_row(x, bias, "layer_norm bias")?;
        let xv = self.value(x);
        let d = xv.cols();
        if d == 0 {
            return dim_err("layer_norm over empty axis".into());
        }
        let g = self.value(gain).data();
        let b = self.value(bias).data();
        let mut xhat = vec![0.0; xv.len()];
        let mut out = vec![0.0; xv.len()];
        let mut inv_std = Vec::with_capacity(xv.rows());
        for r in 0..xv.rows() {
            let row = xv.row_slice(r);
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let is = 1.0 / (var + eps).sqrt();
            inv_std.push(is);
            for j in 0..d {
                let h = (row[j] - mean) * is;
                xhat[r * d + j] = h;
                out[r * d + j] = g[j] * h + b[j];
            }
        }
        let value = Array::new(xv.shape(), out)?;
        let rg = self.rg(x) || self.rg(gain) || self.rg(bias);
        Ok(self.push(
            value,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            },
            rg,
        ))
    }

    /// Concatenates matrices with equal row counts along the last axis.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = match parts.first() {
            Some(&p) => self.value(p).rows(),
            None => return dim_err("concat of nothing".into()),
        };
        let mut total = 0;
        for &p in parts {
            if self.value(p).rows() != rows {
                return dim_err(format!(
                    "concat_cols row mismatch: {:?} vs {rows} rows",
                    self.value(p).shape()
                ));
            }
            total += self.value(p).cols();
        }
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &p in parts {
                out.extend_from_slice(self.value(p).row_slice(r));
            }
        }
        let value = Array::new(&[rows, total], out)?;
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(value, Op::ConcatCols(parts.to_vec()), rg))
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let xv = self.value(x);
        if start > end || end > xv.cols() {
            return dim_err(format!("slice {start}..{end} of {:?}", xv.shape()));
        }
        let rows = xv.rows();
        let mut out = Vec::with_capacity(rows * (end - start));
        for r in 0..rows {
            out.extend_from_slice(&xv.row_slice(r)[start..end]);
        }
        let value = Array::new(&[rows, end - start], out)?;
        let rg = self.rg(x);
        Ok(self.push(value, Op::SliceCols(x, start, end), rg))
    }

    /// Stacks matrices with equal column counts.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let cols = match parts.first() {
            Some(&p) => self.value(p).cols(),
            None => return dim_err("concat of nothing".into()),
        };
        let mut out = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let pv = self.value(p);
            if pv.cols() != cols {
                return dim_err(format!(
                    "concat_rows column mismatch: {:?} vs {cols} columns",
                    pv.shape()
                ));
            }
            rows += pv.rows();
            out.extend_from_slice(pv.data());
        }
        let value = Array::new(&[rows, cols], out)?;
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(value, Op::ConcatRows(parts.to_vec()), rg))
    }

    /// Builds a matrix from rows of `x`; `None` produces a zero row.
    pub fn gather_rows(&mut self, x: Var, index: Vec<Option<usize>>) -> Result<Var> {
        let xv = self.value(x);
        let cols = xv.cols();
        let mut out = Vec::with_capacity(index.len() * cols);
        for ix in &index {
            match ix {
                Some(i) if *i < xv.rows() => out.extend_from_slice(xv.row_slice(*i)),
                Some(i) => return dim_err(format!("row {i} out of range for {:?}", xv.shape())),
                None => out.extend(std::iter::repeat(0.0).take(cols)),
            }
        }
        let value = Array::new(&[index.len(), cols], out)?;
        let rg = self.rg(x);
        Ok(self.push(value, Op::GatherRows(x, index), rg))
    }

    pub fn rows(&mut self, x: Var, index: &[usize]) -> Result<Var> {
        self.gather_rows(x, index.iter().map(|&i| Some(i)).collect())
    }

    /// One output row per group: the mean of the listed rows of `x`.
    pub fn segment_mean(&mut self, x: Var, groups: Vec<Vec<usize>>) -> Result<Var> {
        self.segment(x, groups, true)
    }

    /// One output row per group: the sum of the listed rows of `x`.
    pub fn segment_sum(&mut self, x: Var, groups: Vec<Vec<usize>>) -> Result<Var> {
        self.segment(x, groups, false)
    }

    fn segment(&mut self, x: Var, groups: Vec<Vec<usize>>, mean: bool) -> Result<Var> {
        let xv = self.value(x);
        let cols = xv.cols();
        let mut out = vec![0.0; groups.len() * cols];
        for (g, members) in groups.iter().enumerate() {
            if members.is_empty() {
                return Err(Error::Contract(format!("segment {g} is empty")));
            }
            let dst = &mut out[g * cols..(g + 1) * cols];
            for &m in members {
                if m >= xv.rows() {
                    return dim_err(format!("row {m} out of range for {:?}", xv.shape()));
                }
                for (o, &v) in dst.iter_mut().zip(xv.row_slice(m)) {
                    *o += v;
                }
            }
            if mean {
                // sum/n followed by one residual correction; copies of the same
                // row then average to that row exactly.
                let n = members.len() as f64;
                for o in dst.iter_mut() {
                    *o /= n;
                }
                for (j, o) in dst.iter_mut().enumerate() {
                    let r: f64 = members.iter().map(|&m| xv.data()[m * cols + j] - *o).sum();
                    *o += r / n;
                }
            }
        }
        let value = Array::new(&[groups.len(), cols], out)?;
        let rg = self.rg(x);
        Ok(self.push(value, Op::Segment(x, groups, mean), rg))
    }

    /// Multiplies row `i` of `x` by the scalar `s[i]`; `s` is `[rows × 1]`.
    pub fn scale_rows(&mut self, x: Var, s: Var) -> Result<Var> {
        let (xv, sv) = (self.value(x), self.value(s));
        if sv.len() != xv.rows() {
            return dim_err(format!("row scales {:?} for {:?}", sv.shape(), xv.shape()));
        }
        let cols = xv.cols();
        let mut out = xv.data().to_vec();
        for (row, &k) in out.chunks_mut(cols.max(1)).zip(sv.data()) {
            for o in row {
                *o *= k;
            }
        }
        let value = Array::new(xv.shape(), out)?;
        let rg = self.rg(x) || self.rg(s);
        Ok(self.push(value, Op::ScaleRows(x, s), rg))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(x).reshape(shape)?;
        let rg = self.rg(x);
        Ok(self.push(value, Op::Reshape(x), rg))
    }

    /// Row `i` comes from `a` when `take_a[i]`, else from `b`.
    pub fn select_rows(&mut self, take_a: Vec<bool>, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        av.check_same_shape(bv)?;
        if take_a.len() != av.rows() {
            return dim_err(format!("select of {} rows for {:?}", take_a.len(), av.shape()));
        }
        let cols = av.cols();
        let mut out = Vec::with_capacity(av.len());
        for (r, &t) in take_a.iter().enumerate() {
            let src = if t { av } else { bv };
            out.extend_from_slice(&src.data()[r * cols..(r + 1) * cols]);
        }
        let value = Array::new(av.shape(), out)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::SelectRows(take_a, a, b), rg))
    }

    /// `out[i] = x[i, cols[i]]`, shaped `[rows × 1]`.
    pub fn pick_cols(&mut self, x: Var, cols: Vec<usize>) -> Result<Var> {
        let xv = self.value(x);
        if cols.len() != xv.rows() {
            return dim_err(format!("pick of {} for {:?}", cols.len(), xv.shape()));
        }
        let mut out = Vec::with_capacity(cols.len());
        for (r, &c) in cols.iter().enumerate() {
            if c >= xv.cols() {
                return dim_err(format!("column {c} out of range for {:?}", xv.shape()));
            }
            out.push(xv.get2(r, c));
        }
        let value = Array::new(&[cols.len(), 1], out)?;
        let rg = self.rg(x);
        Ok(self.push(value, Op::PickCols(x, cols), rg))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let value = Array::scalar(self.value(x).sum());
        let rg = self.rg(x);
        self.push(value, Op::Sum(x), rg)
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let n = self.value(x).len();
        if n == 0 {
            return dim_err("mean of empty array".into());
        }
        let value = Array::scalar(self.value(x).sum() / n as f64);
        let rg = self.rg(x);
        Ok(self.push(value, Op::Mean(x), rg))
    }

    /// `out[i, k] = cos(omega[k] * t[i] + phi[k])`.
    pub fn time_encode(&mut self, t: Vec<f64>, omega: Var, phi: Var) -> Result<Var> {
        let (w, p) = (self.value(omega), self.value(phi));
        if w.len() != p.len() {
            return dim_err(format!(
                "omega {:?} and phi {:?} differ",
                w.shape(),
                p.shape()
            ));
        }
        let d = w.len();
        let mut out = Vec::with_capacity(t.len() * d);
        for &ti in &t {
            for (wk, pk) in w.data().iter().zip(p.data()) {
                out.push((wk * ti + pk).cos());
            }
        }
        let value = Array::new(&[t.len(), d], out)?;
        let rg = self.rg(omega) || self.rg(phi);
        Ok(self.push(value, Op::TimeEncode { t, omega, phi }, rg))
    }

    /// Inverted dropout; the identity on inference tapes or when `rate == 0`.
    pub fn dropout(&mut self, x: Var, rate: f64) -> Var {
        if !self.training || rate <= 0.0 {
            return x;
        }
        let n = self.value(x).len();
        let keep = 1.0 / (1.0 - rate);
        let rng = self.rng.as_mut().expect("training tape has an rng");
        let mask: Vec<f64> = (0..n)
            .map(|_| if rng.bernoulli(rate) { 0.0 } else { keep })
            .collect();
        let value = Array::new(
            self.value(x).shape(),
            self.value(x)
                .data()
                .iter()
                .zip(&mask)
                .map(|(v, m)| v * m)
                .collect(),
        )
        .expect("same length");
        let rg = self.rg(x);
        self.push(value, Op::Dropout(x, mask), rg)
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let value = self.value(x).transpose()?;
        let rg = self.rg(x);
        Ok(self.push(value, Op::Transpose(x), rg))
    }

    /// Reverse pass from a scalar node.
    ///
    /// A tape can be differentiated once; a second call is rejected because
    /// parameter leaves would otherwise double-count.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients> {
        if self.backward_done {
            return Err(Error::Contract("backward already ran on this tape".into()));
        }
        if self.value(loss).len() != 1 {
            return Err(Error::Contract(format!(
                "loss must be scalar, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        self.backward_done = true;
        let mut grads: Vec<Option<Array>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Array::full(self.value(loss).shape(), 1.0));

        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(i, &g, &mut grads)?;
            grads[i] = Some(g);
        }
        Ok(Gradients {
            grads,
            param_vars: self.param_vars.clone(),
        })
    }

    fn backprop_node(&self, i: usize, g: &Array, grads: &mut [Option<Array>]) -> Result<()> {
        let node = &self.nodes[i];
        let out = &node.value;
        let gd = g.data();
        match &node.op {
            Op::Leaf | Op::Param => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, k) = as_matrix(av)?;
                let (_, n) = as_matrix(bv)?;
                if self.rg(*a) {
                    let buf = self.acc(grads, *a);
                    gemm_nt(gd, bv.data(), buf, m, n, k);
                }
                if self.rg(*b) {
                    let buf = self.acc(grads, *b);
                    gemm_tn(av.data(), gd, buf, k, m, n);
                }
            }
            Op::MatMulNt(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, k) = as_matrix(av)?;
                let (n, _) = as_matrix(bv)?;
                if self.rg(*a) {
                    let buf = self.acc(grads, *a);
                    gemm_nn(gd, bv.data(), buf, m, n, k);
                }
                if self.rg(*b) {
                    let buf = self.acc(grads, *b);
                    gemm_tn(gd, av.data(), buf, n, m, k);
                }
            }
            Op::Add(a, b) => {
                self.acc_map(grads, *a, |j| gd[j]);
                self.acc_map(grads, *b, |j| gd[j]);
            }
            Op::Sub(a, b) => {
                self.acc_map(grads, *a, |j| gd[j]);
                self.acc_map(grads, *b, |j| -gd[j]);
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                self.acc_map(grads, *a, |j| gd[j] * bv[j]);
                self.acc_map(grads, *b, |j| gd[j] * av[j]);
            }
            Op::AddRow(m, r) => {
                self.acc_map(grads, *m, |j| gd[j]);
                if self.rg(*r) {
                    let cols = out.cols();
                    let buf = self.acc(grads, *r);
                    for row in gd.chunks(cols) {
                        for (b, &v) in buf.iter_mut().zip(row) {
                            *b += v;
                        }
                    }
                }
            }
            Op::MulRow(m, r) => {
                let cols = out.cols();
                let rv = self.value(*r).data();
                self.acc_map(grads, *m, |j| gd[j] * rv[j % cols]);
                if self.rg(*r) {
                    let mv = self.value(*m).data();
                    let buf = self.acc(grads, *r);
                    for (grow, mrow) in gd.chunks(cols).zip(mv.chunks(cols)) {
                        for ((b, &gv), &x) in buf.iter_mut().zip(grow).zip(mrow) {
                            *b += gv * x;
                        }
                    }
                }
            }
            Op::Affine(x, s) => self.acc_map(grads, *x, |j| gd[j] * s),
            Op::Sigmoid(x) => {
                let y = out.data();
                self.acc_map(grads, *x, |j| gd[j] * y[j] * (1.0 - y[j]));
            }
            Op::Tanh(x) => {
                let y = out.data();
                self.acc_map(grads, *x, |j| gd[j] * (1.0 - y[j] * y[j]));
            }
            Op::Exp(x) => {
                let y = out.data();
                self.acc_map(grads, *x, |j| gd[j] * y[j]);
            }
            Op::Log(x) => {
                let xv = self.value(*x).data();
                self.acc_map(grads, *x, |j| gd[j] / xv[j]);
            }
            Op::Relu(x) => {
                let xv = self.value(*x).data();
                self.acc_map(grads, *x, |j| if xv[j] > 0.0 { gd[j] } else { 0.0 });
            }
            Op::Pow(x, e) => {
                let xv = self.value(*x).data();
                let e = *e;
                self.acc_map(grads, *x, |j| {
                    if e == 0.0 {
                        0.0
                    } else {
                        gd[j] * e * xv[j].powf(e - 1.0)
                    }
                });
            }
            Op::Clamp(x, lo, hi) => {
                let xv = self.value(*x).data();
                self.acc_map(grads, *x, |j| {
                    if xv[j] >= *lo && xv[j] <= *hi {
                        gd[j]
                    } else {
                        0.0
                    }
                });
            }
            Op::Softmax(x) => {
                if self.rg(*x) {
                    let cols = out.cols();
                    let y = out.data();
                    let buf = self.acc(grads, *x);
                    for r in 0..out.rows() {
                        let ys = &y[r * cols..(r + 1) * cols];
                        let gs = &gd[r * cols..(r + 1) * cols];
                        let dot: f64 = ys.iter().zip(gs).map(|(a, b)| a * b).sum();
                        for j in 0..cols {
                            buf[r * cols + j] += ys[j] * (gs[j] - dot);
                        }
                    }
                }
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            } => {
                let d = out.cols();
                let gv = self.value(*gain).data();
                if self.rg(*x) {
                    let buf = self.acc(grads, *x);
                    for r in 0..out.rows() {
                        let gs = &gd[r * d..(r + 1) * d];
                        let hs = &xhat[r * d..(r + 1) * d];
                        let mut mean_dh = 0.0;
                        let mut mean_dh_h = 0.0;
                        for j in 0..d {
                            let dh = gs[j] * gv[j];
                            mean_dh += dh;
                            mean_dh_h += dh * hs[j];
                        }
                        mean_dh /= d as f64;
                        mean_dh_h /= d as f64;
                        for j in 0..d {
                            let dh = gs[j] * gv[j];
                            buf[r * d + j] += inv_std[r] * (dh - mean_dh - hs[j] * mean_dh_h);
                        }
                    }
                }
                if self.rg(*gain) {
                    let buf = self.acc(grads, *gain);
                    for (grow, hrow) in gd.chunks(d).zip(xhat.chunks(d)) {
                        for ((b, &gv), &h) in buf.iter_mut().zip(grow).zip(hrow) {
                            *b += gv * h;
                        }
                    }
                }
                if self.rg(*bias) {
                    let buf = self.acc(grads, *bias);
                    for grow in gd.chunks(d) {
                        for (b, &gv) in buf.iter_mut().zip(grow) {
                            *b += gv;
                        }
                    }
                }
            }
            Op::ConcatCols(parts) => {
                let total = out.cols();
                let mut offset = 0;
                for &p in parts {
                    let w = self.value(p).cols();
                    if self.rg(p) {
                        let buf = self.acc(grads, p);
                        for r in 0..out.rows() {
                            for j in 0..w {
                                buf[r * w + j] += gd[r * total + offset + j];
                            }
                        }
                    }
                    offset += w;
                }
            }
            Op::SliceCols(x, start, end) => {
                if self.rg(*x) {
                    let cols = self.value(*x).cols();
                    let w = end - start;
                    let buf = self.acc(grads, *x);
                    for r in 0..out.rows() {
                        for j in 0..w {
                            buf[r * cols + start + j] += gd[r * w + j];
                        }
                    }
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let n = self.value(p).len();
                    if self.rg(p) {
                        let buf = self.acc(grads, p);
                        for (b, &v) in buf.iter_mut().zip(&gd[offset..offset + n]) {
                            *b += v;
                        }
                    }
                    offset += n;
                }
            }
            Op::GatherRows(x, index) => {
                if self.rg(*x) {
                    let cols = out.cols();
                    let buf = self.acc(grads, *x);
                    for (r, ix) in index.iter().enumerate() {
                        if let Some(src) = ix {
                            for j in 0..cols {
                                buf[src * cols + j] += gd[r * cols + j];
                            }
                        }
                    }
                }
            }
            Op::Segment(x, groups, mean) => {
                if self.rg(*x) {
                    let cols = out.cols();
                    let buf = self.acc(grads, *x);
                    for (gi, members) in groups.iter().enumerate() {
                        let k = if *mean { 1.0 / members.len() as f64 } else { 1.0 };
                        for &m in members {
                            for j in 0..cols {
                                buf[m * cols + j] += gd[gi * cols + j] * k;
                            }
                        }
                    }
                }
            }
            Op::ScaleRows(x, sc) => {
                let cols = out.cols().max(1);
                let sv = self.value(*sc).data();
                self.acc_map(grads, *x, |j| gd[j] * sv[j / cols]);
                if self.rg(*sc) {
                    let xv = self.value(*x).data();
                    let buf = self.acc(grads, *sc);
                    for (r, b) in buf.iter_mut().enumerate() {
                        *b += (0..cols).map(|j| gd[r * cols + j] * xv[r * cols + j]).sum::<f64>();
                    }
                }
            }
            Op::Reshape(x) => self.acc_map(grads, *x, |j| gd[j]),
            Op::SelectRows(take_a, a, b) => {
                let cols = out.cols();
                for (src, want) in [(*a, true), (*b, false)] {
                    if self.rg(src) {
                        let buf = self.acc(grads, src);
                        for (r, &t) in take_a.iter().enumerate() {
                            if t == want {
                                for j in 0..cols {
                                    buf[r * cols + j] += gd[r * cols + j];
                                }
                            }
                        }
                    }
                }
            }
            Op::PickCols(x, cols_ix) => {
                if self.rg(*x) {
                    let cols = self.value(*x).cols();
                    let buf = self.acc(grads, *x);
                    for (r, &c) in cols_ix.iter().enumerate() {
                        buf[r * cols + c] += gd[r];
                    }
                }
            }
            Op::Sum(x) => self.acc_map(grads, *x, |_| gd[0]),
            Op::Mean(x) => {
                let n = self.value(*x).len() as f64;
                self.acc_map(grads, *x, |_| gd[0] / n);
            }
            Op::TimeEncode { t, omega, phi } => {
                let w = self.value(*omega).data();
                let p = self.value(*phi).data();
                let d = w.len();
                let mut dw = vec![0.0; d];
                let mut dp = vec![0.0; d];
                for (i, &ti) in t.iter().enumerate() {
                    for k in 0..d {
                        let s = -(w[k] * ti + p[k]).sin() * gd[i * d + k];
                        dw[k] += s * ti;
                        dp[k] += s;
                    }
                }
                self.acc_map(grads, *omega, |k| dw[k]);
                self.acc_map(grads, *phi, |k| dp[k]);
            }
            Op::Dropout(x, mask) => self.acc_map(grads, *x, |j| gd[j] * mask[j]),
            Op::Transpose(x) => {
                if self.rg(*x) {
                    let (m, n) = (out.shape()[0], out.shape()[1]);
                    let buf = self.acc(grads, *x);
                    for r in 0..m {
                        for c in 0..n {
                            buf[c * m + r] += gd[r * n + c];
                        }
                    }
                }
            }
        }
        Ok(())
    }

    fn acc<'g>(&self, grads: &'g mut [Option<Array>], v: Var) -> &'g mut [f64] {
        grads[v.0]
            .get_or_insert_with(|| Array::zeros(self.value(v).shape()))
            .data_mut()
    }

    fn acc_map(&self, grads: &mut [Option<Array>], v: Var, f: impl Fn(usize) -> f64) {
        if !self.rg(v) {
            return;
        }
        let buf = self.acc(grads, v);
        for (j, b) in buf.iter_mut().enumerate() {
            *b += f(j);
        }
    }
}
