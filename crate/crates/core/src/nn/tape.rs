//! Reverse-mode automatic differentiation over small dense matrices.
//!
//! A [`Tape`] records every operation applied to [`Var`] handles. Parameters
//! are read from a borrowed [`ParamStore`]; [`Tape::backward`] returns their
//! gradients. A tape is single-use: build, evaluate, backpropagate, drop.

use std::collections::HashMap;

use super::{Gradients, Matrix, ParamId, ParamStore};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Param(ParamId),
    Gather(ParamId, Vec<usize>),
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Sigmoid(Var),
    Tanh(Var),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize),
    StackRows(Vec<Var>),
    Row(Var, usize),
    Transpose(Var),
    SoftmaxRows(Var),
    LogSoftmaxPick(Var, usize, Vec<f64>),
    Sum(Var),
    Cosine(Var, Var),
    Relu(Var),
}

struct Node {
    value: Matrix,
    op: Op,
}

pub struct Tape<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node>,
    param_vars: HashMap<ParamId, Var>,
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Tape {
            params,
            nodes: Vec::new(),
            param_vars: HashMap::new(),
        }
    }

    pub fn params(&self) -> &'p ParamStore {
        self.params
    }

    fn push(&mut self, value: Matrix, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        let m = self.value(v);
        debug_assert_eq!(m.shape(), (1, 1));
        m.data[0]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// A constant; no gradient is tracked for it.
    pub fn constant(&mut self, m: Matrix) -> Var {
        self.push(m, Op::Leaf)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(&v) = self.param_vars.get(&id) {
            return v;
        }
        let v = self.push(self.params.get(id).clone(), Op::Param(id));
        self.param_vars.insert(id, v);
        v
    }

    /// Rows of an embedding table, one output row per index.
    pub fn gather(&mut self, id: ParamId, rows: &[usize]) -> Var {
        let table = self.params.get(id);
        let mut out = Matrix::zeros(rows.len(), table.cols);
        for (i, &r) in rows.iter().enumerate() {
            out.row_mut(i).copy_from_slice(table.row(r));
        }
        self.push(out, Op::Gather(id, rows.to_vec()))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).matmul(self.value(b));
        self.push(v, Op::MatMul(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let mut v = self.value(a).clone();
        v.add_assign(self.value(b));
        self.push(v, Op::Add(a, b))
    }

    /// Adds the `1 x n` row `b` to every row of `a`.
    pub fn add_row(&mut self, a: Var, b: Var) -> Var {
        let bv = self.value(b);
        assert_eq!(bv.rows, 1);
        let mut v = self.value(a).clone();
        assert_eq!(v.cols, bv.cols, "add_row width mismatch");
        for r in 0..v.rows {
            for (x, y) in v.row_mut(r).iter_mut().zip(&bv.data) {
                *x += y;
            }
        }
        self.push(v, Op::AddRow(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(av.shape(), bv.shape(), "sub shape mismatch");
        let data = av.data.iter().zip(&bv.data).map(|(x, y)| x - y).collect();
        let v = Matrix::from_vec(av.rows, av.cols, data);
        self.push(v, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(av.shape(), bv.shape(), "mul shape mismatch");
        let data = av.data.iter().zip(&bv.data).map(|(x, y)| x * y).collect();
        let v = Matrix::from_vec(av.rows, av.cols, data);
        self.push(v, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let v = self.value(a).map(|x| x * k);
        self.push(v, Op::Scale(a, k))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.value(a).map(sigmoid);
        self.push(v, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::tanh);
        self.push(v, Op::Tanh(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x.max(0.0));
        self.push(v, Op::Relu(a))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let rows = self.value(parts[0]).rows;
        let cols: usize = parts.iter().map(|&p| self.value(p).cols).sum();
        let mut out = Matrix::zeros(rows, cols);
        for r in 0..rows {
            let mut off = 0;
            for &p in parts {
                let pv = self.value(p);
                assert_eq!(pv.rows, rows, "concat_cols row mismatch");
                out.row_mut(r)[off..off + pv.cols].copy_from_slice(pv.row(r));
                off += pv.cols;
            }
        }
        self.push(out, Op::ConcatCols(parts.to_vec()))
    }

    /// Columns `start..end` of `a`.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Var {
        let av = self.value(a);
        let mut out = Matrix::zeros(av.rows, end - start);
        for r in 0..av.rows {
            out.row_mut(r).copy_from_slice(&av.row(r)[start..end]);
        }
        self.push(out, Op::SliceCols(a, start))
    }

    pub fn stack_rows(&mut self, parts: &[Var]) -> Var {
        let cols = self.value(parts[0]).cols;
        let mut data = Vec::new();
        let mut rows = 0;
        for &p in parts {
            let pv = self.value(p);
            assert_eq!(pv.cols, cols, "stack_rows width mismatch");
            data.extend_from_slice(&pv.data);
            rows += pv.rows;
        }
        self.push(
            Matrix::from_vec(rows, cols, data),
            Op::StackRows(parts.to_vec()),
        )
    }

    pub fn row(&mut self, a: Var, r: usize) -> Var {
        let v = Matrix::row_vector(self.value(a).row(r).to_vec());
        self.push(v, Op::Row(a, r))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let v = self.value(a).transpose();
        self.push(v, Op::Transpose(a))
    }

    /// Row-wise softmax.
    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let mut out = Matrix::zeros(av.rows, av.cols);
        for r in 0..av.rows {
            softmax_into(av.row(r), out.row_mut(r));
        }
        self.push(out, Op::SoftmaxRows(a))
    }

    /// `log softmax(a)[index]` for a `1 x V` row; returns a `1 x 1` node.
    pub fn log_softmax_pick(&mut self, a: Var, index: usize) -> Var {
        let av = self.value(a);
        assert_eq!(av.rows, 1);
        let mut probs = vec![0.0; av.cols];
        let lse = softmax_into(&av.data, &mut probs);
        let logp = av.data[index] - lse;
        self.push(Matrix::scalar(logp), Op::LogSoftmaxPick(a, index, probs))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data.iter().sum();
        self.push(Matrix::scalar(s), Op::Sum(a))
    }

    /// Sum of a list of scalar nodes.
    pub fn sum_scalars(&mut self, parts: &[Var]) -> Var {
        let stacked = self.concat_cols(parts);
        self.sum(stacked)
    }

    /// Cosine similarity of two `1 x n` rows; 0 when either norm is below 1e-12.
    pub fn cosine(&mut self, a: Var, b: Var) -> Var {
        let c = cosine(&self.value(a).data, &self.value(b).data);
        self.push(Matrix::scalar(c), Op::Cosine(a, b))
    }

    /// Backpropagates from the scalar node `loss`.
    pub fn backward(&self, loss: Var) -> Gradients {
        assert_eq!(
            self.value(loss).shape(),
            (1, 1),
            "backward needs a scalar loss"
        );
        let mut grads: Vec<Option<Matrix>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(Matrix::scalar(1.0));
        let mut out = Gradients::new(self.params.len());

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Leaf => {}
                Op::Param(id) => out.add_dense(*id, &g),
                Op::Gather(id, rows) => {
                    for (k, &r) in rows.iter().enumerate() {
                        out.add_row(*id, r, g.row(k));
                    }
                }
                Op::MatMul(a, b) => {
                    let ga = g.matmul_t(self.value(*b));
                    let gb = self.value(*a).t_matmul(&g);
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *b, g.clone());
                    accumulate(&mut grads, *a, g);
                }
                Op::AddRow(a, b) => {
                    let mut gb = Matrix::zeros(1, g.cols);
                    for r in 0..g.rows {
                        for (x, y) in gb.data.iter_mut().zip(g.row(r)) {
                            *x += y;
                        }
                    }
                    accumulate(&mut grads, *b, gb);
                    accumulate(&mut grads, *a, g);
                }
                Op::Sub(a, b) => {
                    accumulate(&mut grads, *b, g.map(|x| -x));
                    accumulate(&mut grads, *a, g);
                }
                Op::Mul(a, b) => {
                    let ga = zip_map(&g, self.value(*b), |x, y| x * y);
                    let gb = zip_map(&g, self.value(*a), |x, y| x * y);
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::Scale(a, k) => accumulate(&mut grads, *a, g.map(|x| x * k)),
                Op::Sigmoid(a) => {
                    let ga = zip_map(&g, &node.value, |x, s| x * s * (1.0 - s));
                    accumulate(&mut grads, *a, ga);
                }
                Op::Tanh(a) => {
                    let ga = zip_map(&g, &node.value, |x, t| x * (1.0 - t * t));
                    accumulate(&mut grads, *a, ga);
                }
                Op::Relu(a) => {
                    let ga = zip_map(&g, self.value(*a), |x, y| if y > 0.0 { x } else { 0.0 });
                    accumulate(&mut grads, *a, ga);
                }
                Op::ConcatCols(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let w = self.value(p).cols;
                        let mut gp = Matrix::zeros(g.rows, w);
                        for r in 0..g.rows {
                            gp.row_mut(r).copy_from_slice(&g.row(r)[off..off + w]);
                        }
                        off += w;
                        accumulate(&mut grads, p, gp);
                    }
                }
                Op::SliceCols(a, start) => {
                    let av = self.value(*a);
                    let mut ga = Matrix::zeros(av.rows, av.cols);
                    for r in 0..g.rows {
                        ga.row_mut(r)[*start..*start + g.cols].copy_from_slice(g.row(r));
                    }
                    accumulate(&mut grads, *a, ga);
                }
                Op::StackRows(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let h = self.value(p).rows;
                        let gp = Matrix::from_vec(
                            h,
                            g.cols,
                            g.data[off * g.cols..(off + h) * g.cols].to_vec(),
                        );
                        off += h;
                        accumulate(&mut grads, p, gp);
                    }
                }
                Op::Row(a, r) => {
                    let av = self.value(*a);
                    let mut ga = Matrix::zeros(av.rows, av.cols);
                    ga.row_mut(*r).copy_from_slice(&g.data);
                    accumulate(&mut grads, *a, ga);
                }
                Op::Transpose(a) => accumulate(&mut grads, *a, g.transpose()),
                Op::SoftmaxRows(a) => {
                    let y = &node.value;
                    let mut ga = Matrix::zeros(y.rows, y.cols);
                    for r in 0..y.rows {
                        let dot: f64 = g.row(r).iter().zip(y.row(r)).map(|(a, b)| a * b).sum();
                        for c in 0..y.cols {
                            ga.set(r, c, y.get(r, c) * (g.get(r, c) - dot));
                        }
                    }
                    accumulate(&mut grads, *a, ga);
                }
                Op::LogSoftmaxPick(a, index, probs) => {
                    let gs = g.data[0];
                    let mut ga = Matrix::row_vector(probs.iter().map(|p| -gs * p).collect());
                    ga.data[*index] += gs;
                    accumulate(&mut grads, *a, ga);
                }
                Op::Sum(a) => {
                    let (r, c) = self.value(*a).shape();
                    accumulate(&mut grads, *a, Matrix::filled(r, c, g.data[0]));
                }
                Op::Cosine(a, b) => {
                    let (ga, gb) = cosine_grad(&self.value(*a).data, &self.value(*b).data);
                    let gs = g.data[0];
                    accumulate(
                        &mut grads,
                        *a,
                        Matrix::row_vector(ga.iter().map(|x| x * gs).collect()),
                    );
                    accumulate(
                        &mut grads,
                        *b,
                        Matrix::row_vector(gb.iter().map(|x| x * gs).collect()),
                    );
                }
            }
        }
        out
    }
}

fn accumulate(grads: &mut [Option<Matrix>], v: Var, g: Matrix) {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}

fn zip_map(a: &Matrix, b: &Matrix, f: impl Fn(f64, f64) -> f64) -> Matrix {
    Matrix::from_vec(
        a.rows,
        a.cols,
        a.data.iter().zip(&b.data).map(|(&x, &y)| f(x, y)).collect(),
    )
}

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Writes `softmax(x)` into `out` and returns `logsumexp(x)`.
pub(crate) fn softmax_into(x: &[f64], out: &mut [f64]) -> f64 {
    let max = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for (o, &v) in out.iter_mut().zip(x) {
        *o = (v - max).exp();
        total += *o;
    }
    for o in out.iter_mut() {
        *o /= total;
    }
    max + total.ln()
}

pub(crate) const NORM_FLOOR: f64 = 1e-12;

pub(crate) fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na < NORM_FLOOR || nb < NORM_FLOOR {
        return 0.0;
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    (dot / (na * nb)).clamp(-1.0, 1.0)
}

fn cosine_grad(a: &[f64], b: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na < NORM_FLOOR || nb < NORM_FLOOR {
        return (vec![0.0; a.len()], vec![0.0; b.len()]);
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let c = dot / (na * nb);
    let ga = a
        .iter()
        .zip(b)
        .map(|(x, y)| y / (na * nb) - c * x / (na * na))
        .collect();
    let gb = a
        .iter()
        .zip(b)
        .map(|(x, y)| x / (na * nb) - c * y / (nb * nb))
        .collect();
    (ga, gb)
}
