//! Define-by-run reverse-mode differentiation over matrices.
//!
//! A [`Graph`] is a tape: every op appends a node holding its output value
//! and the ids of its inputs, so node ids are a topological order by
//! construction. [`Graph::backward`] walks the tape once in reverse.
//!
//! Parameters enter the tape through [`Graph::param`], which reads the
//! current value from a [`ParamStore`]; after `backward`,
//! [`Graph::param_grads`] gathers their gradients in store order.

use rand::Rng;

use super::params::{Grads, ParamId, ParamStore};
use super::tensor::{matmul_acc, matmul_nt_acc, matmul_tn_acc, Tensor};
use crate::error::{shape_err, Error, Result};

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    /// `big[r] + small[r % small.rows]`
    AddTiled(Var, Var),
    Mul(Var, Var),
    MulTiled(Var, Var),
    Affine(Var, f64),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    SoftmaxRows(Var),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize),
    ConcatRows(Vec<Var>),
    SliceRows(Var, usize),
    GatherRows(Var, Vec<usize>),
    Transpose(Var),
    Reshape(Var),
    RowSum(Var),
    SumAll(Var),
    /// `out[b] = sum_k w[b, k] * x[k * B + b]` with `x` time-major.
    WeightedTimeSum(Var, Var),
    /// Per block `i`: `a_i * b_i^T`.
    BlockMatMulNt(Var, Var, usize),
    /// Per block `i`: `p_i * v_i`.
    BlockMatMul(Var, Var, usize),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    CrossEntropy {
        logits: Var,
        targets: Vec<Option<usize>>,
        scale: f64,
        probs: Vec<f64>,
    },
    BceLogits {
        logits: Var,
        targets: Vec<f64>,
        scale: f64,
    },
    Bce {
        probs: Var,
        targets: Vec<f64>,
        scale: f64,
    },
}

#[derive(Clone, Debug)]
struct Node {
    op: Op,
    value: Tensor,
    requires_grad: bool,
    param: Option<ParamId>,
}

/// Tape of recorded ops; see the module docs.
pub struct Graph<'a> {
    store: Option<&'a ParamStore>,
    nodes: Vec<Node>,
    param_vars: Vec<Option<Var>>,
    grads: Vec<Option<Vec<f64>>>,
    training: bool,
}

pub const BCE_CLAMP: f64 = 1e-7;

fn dims(t: &Tensor) -> (usize, usize) {
    (t.rows(), t.cols())
}

impl<'a> Graph<'a> {
    /// Graph reading parameters from `store`. `training` enables dropout.
    pub fn new(store: &'a ParamStore, training: bool) -> Self {
        Self {
            store: Some(store),
            nodes: Vec::new(),
            param_vars: vec![None; store.len()],
            grads: Vec::new(),
            training,
        }
    }

    /// Graph with no parameters; inputs come in through [`Graph::input`].
    pub fn detached(training: bool) -> Graph<'static> {
        Graph {
            store: None,
            nodes: Vec::new(),
            param_vars: Vec::new(),
            grads: Vec::new(),
            training,
        }
    }

    pub fn is_training(&self) -> bool {
        self.training
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            op,
            value,
            requires_grad,
            param: None,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Leaf for a stored parameter; repeated calls return the same node.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars[id.0] {
            return v;
        }
        let store = self.store.expect("graph has no parameter store");
        let value = store.get(id).clone();
        let v = self.push(Op::Leaf, value, true);
        self.nodes[v.0].param = Some(id);
        self.param_vars[id.0] = Some(v);
        v
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(Op::Leaf, value, false)
    }

    /// Leaf that is differentiated but is not a stored parameter.
    pub fn input(&mut self, value: Tensor) -> Var {
        self.push(Op::Leaf, value, true)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (n, k) = dims(self.value(a));
        let (k2, m) = dims(self.value(b));
        if k != k2 {
            return Err(shape_err("matmul", format!("{n}x{k} * {k2}x{m}")));
        }
        let mut out = vec![0.0; n * m];
        matmul_acc(
            self.value(a).data(),
            self.value(b).data(),
            &mut out,
            n,
            k,
            m,
        );
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Op::MatMul(a, b), Tensor::matrix(n, m, out), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (da, db) = (dims(self.value(a)), dims(self.value(b)));
        if da != db {
            return Err(shape_err("add", format!("{da:?} + {db:?}")));
        }
        let out: Vec<f64> = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x + y)
            .collect();
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Op::Add(a, b), Tensor::matrix(da.0, da.1, out), rg))
    }

    fn check_tiled(&self, op: &'static str, big: Var, small: Var) -> Result<(usize, usize, usize)> {
        let (r, c) = dims(self.value(big));
        let (s, c2) = dims(self.value(small));
        if c != c2 || r % s != 0 {
            return Err(shape_err(op, format!("{r}x{c} tiled by {s}x{c2}")));
        }
        Ok((r, c, s))
    }

    /// Adds `small` to `big`, repeating its rows cyclically (bias rows,
    /// per-batch queries over time-major keys, ...).
    pub fn add_tiled(&mut self, big: Var, small: Var) -> Result<Var> {
        let (r, c, s) = self.check_tiled("add_tiled", big, small)?;
        let bd = self.value(big).data();
        let sd = self.value(small).data();
        let mut out = bd.to_vec();
        for row in 0..r {
            let src = &sd[(row % s) * c..(row % s + 1) * c];
            for (o, x) in out[row * c..(row + 1) * c].iter_mut().zip(src) {
                *o += x;
            }
        }
        let rg = self.rg(big) || self.rg(small);
        Ok(self.push(Op::AddTiled(big, small), Tensor::matrix(r, c, out), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (da, db) = (dims(self.value(a)), dims(self.value(b)));
        if da != db {
            return Err(shape_err("mul", format!("{da:?} * {db:?}")));
        }
        let out: Vec<f64> = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| x * y)
            .collect();
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Op::Mul(a, b), Tensor::matrix(da.0, da.1, out), rg))
    }

    pub fn mul_tiled(&mut self, big: Var, small: Var) -> Result<Var> {
        let (r, c, s) = self.check_tiled("mul_tiled", big, small)?;
        let bd = self.value(big).data();
        let sd = self.value(small).data();
        let mut out = bd.to_vec();
        for row in 0..r {
            let src = &sd[(row % s) * c..(row % s + 1) * c];
            for (o, x) in out[row * c..(row + 1) * c].iter_mut().zip(src) {
                *o *= x;
            }
        }
        let rg = self.rg(big) || self.rg(small);
        Ok(self.push(Op::MulTiled(big, small), Tensor::matrix(r, c, out), rg))
    }

    /// `scale * a + shift`.
    pub fn affine(&mut self, a: Var, scale: f64, shift: f64) -> Var {
        let (r, c) = dims(self.value(a));
        let out = self
            .value(a)
            .data()
            .iter()
            .map(|x| scale * x + shift)
            .collect();
        let rg = self.rg(a);
        self.push(Op::Affine(a, scale), Tensor::matrix(r, c, out), rg)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        self.affine(a, s, 0.0)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let nb = self.affine(b, -1.0, 0.0);
        self.add(a, nb)
    }

    fn unary(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let (r, c) = dims(self.value(a));
        let out = self.value(a).data().iter().map(|&x| f(x)).collect();
        let rg = self.rg(a);
        self.push(op, Tensor::matrix(r, c, out), rg)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.unary(a, f64::tanh, Op::Tanh(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, |x| x.max(0.0), Op::Relu(a))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let (r, c) = dims(self.value(a));
        let mut out = self.value(a).data().to_vec();
        for row in out.chunks_mut(c) {
            softmax_in_place(row);
        }
        let rg = self.rg(a);
        self.push(Op::SoftmaxRows(a), Tensor::matrix(r, c, out), rg)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts.first().ok_or(Error::EmptyInput("concat_cols"))?;
        let r = self.value(*first).rows();
        let widths: Vec<usize> = parts.iter().map(|p| self.value(*p).cols()).collect();
        if let Some(bad) = parts.iter().find(|p| self.value(**p).rows() != r) {
            return Err(shape_err(
                "concat_cols",
                format!("row count {} vs {r}", self.value(*bad).rows()),
            ));
        }
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(r * total);
        for row in 0..r {
            for p in parts {
                out.extend_from_slice(self.value(*p).row_slice(row));
            }
        }
        let rg = parts.iter().any(|p| self.rg(*p));
        Ok(self.push(
            Op::ConcatCols(parts.to_vec()),
            Tensor::matrix(r, total, out),
            rg,
        ))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, width: usize) -> Result<Var> {
        let (r, c) = dims(self.value(a));
        if width == 0 || start + width > c {
            return Err(shape_err(
                "slice_cols",
                format!("[{start}, {}) of {c} columns", start + width),
            ));
        }
        let d = self.value(a).data();
        let mut out = Vec::with_capacity(r * width);
        for row in 0..r {
            out.extend_from_slice(&d[row * c + start..row * c + start + width]);
        }
        let rg = self.rg(a);
        Ok(self.push(Op::SliceCols(a, start), Tensor::matrix(r, width, out), rg))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts.first().ok_or(Error::EmptyInput("concat_rows"))?;
        let c = self.value(*first).cols();
        let mut out = Vec::new();
        let mut rows = 0;
        for p in parts {
            let t = self.value(*p);
            if t.cols() != c {
                return Err(shape_err(
                    "concat_rows",
                    format!("column count {} vs {c}", t.cols()),
                ));
            }
            rows += t.rows();
            out.extend_from_slice(t.data());
        }
        let rg = parts.iter().any(|p| self.rg(*p));
        Ok(self.push(
            Op::ConcatRows(parts.to_vec()),
            Tensor::matrix(rows, c, out),
            rg,
        ))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, count: usize) -> Result<Var> {
        let (r, c) = dims(self.value(a));
        if count == 0 || start + count > r {
            return Err(shape_err(
                "slice_rows",
                format!("[{start}, {}) of {r} rows", start + count),
            ));
        }
        let out = self.value(a).data()[start * c..(start + count) * c].to_vec();
        let rg = self.rg(a);
        Ok(self.push(Op::SliceRows(a, start), Tensor::matrix(count, c, out), rg))
    }

    /// Row gather; embedding lookup is `gather_rows(table, ids)`.
    pub fn gather_rows(&mut self, src: Var, idx: &[usize]) -> Result<Var> {
        let (r, c) = dims(self.value(src));
        if idx.is_empty() {
            return Err(Error::EmptyInput("gather_rows"));
        }
        if let Some(&bad) = idx.iter().find(|&&i| i >= r) {
            return Err(Error::OutOfVocabulary { id: bad, vocab: r });
        }
        let d = self.value(src).data();
        let mut out = Vec::with_capacity(idx.len() * c);
        for &i in idx {
            out.extend_from_slice(&d[i * c..(i + 1) * c]);
        }
        let rg = self.rg(src);
        Ok(self.push(
            Op::GatherRows(src, idx.to_vec()),
            Tensor::matrix(idx.len(), c, out),
            rg,
        ))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let (r, c) = dims(self.value(a));
        let d = self.value(a).data();
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = d[i * c + j];
            }
        }
        let rg = self.rg(a);
        self.push(Op::Transpose(a), Tensor::matrix(c, r, out), rg)
    }

    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Result<Var> {
        let t = self.value(a).clone().reshaped(rows, cols)?;
        let rg = self.rg(a);
        Ok(self.push(Op::Reshape(a), t, rg))
    }

    pub fn row_sum(&mut self, a: Var) -> Var {
        let (r, c) = dims(self.value(a));
        let out = self
            .value(a)
            .data()
            .chunks(c)
            .map(|row| row.iter().sum())
            .collect();
        let rg = self.rg(a);
        self.push(Op::RowSum(a), Tensor::matrix(r, 1, out), rg)
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        let rg = self.rg(a);
        self.push(Op::SumAll(a), Tensor::scalar(s), rg)
    }

    pub fn mean_all(&mut self, a: Var) -> Var {
        let n = self.value(a).len() as f64;
        let s = self.sum_all(a);
        self.scale(s, 1.0 / n)
    }

    /// `out[b] = sum_k w[b, k] * x[k * B + b]` for `w` (B x K) and
    /// time-major `x` ((K*B) x E). Attention pooling and masked means.
    pub fn weighted_time_sum(&mut self, w: Var, x: Var) -> Result<Var> {
        let (b, k) = dims(self.value(w));
        let (xr, e) = dims(self.value(x));
        if xr != b * k {
            return Err(shape_err(
                "weighted_time_sum",
                format!("weights {b}x{k} over {xr}x{e} values"),
            ));
        }
        let wd = self.value(w).data();
        let xd = self.value(x).data();
        let mut out = vec![0.0; b * e];
        for bi in 0..b {
            let o = &mut out[bi * e..(bi + 1) * e];
            for ki in 0..k {
                let wv = wd[bi * k + ki];
                let row = (ki * b + bi) * e;
                for (ov, xv) in o.iter_mut().zip(&xd[row..row + e]) {
                    *ov += wv * xv;
                }
            }
        }
        let rg = self.rg(w) || self.rg(x);
        Ok(self.push(Op::WeightedTimeSum(w, x), Tensor::matrix(b, e, out), rg))
    }

    /// Block-diagonal `a * b^T`: `a` is (blocks*M) x d, `b` is (blocks*N) x d,
    /// output (blocks*M) x N.
    pub fn block_matmul_nt(&mut self, a: Var, b: Var, blocks: usize) -> Result<Var> {
        let (ar, d) = dims(self.value(a));
        let (br, d2) = dims(self.value(b));
        if d != d2 || blocks == 0 || ar % blocks != 0 || br % blocks != 0 {
            return Err(shape_err(
                "block_matmul_nt",
                format!("{ar}x{d} by {br}x{d2} in {blocks} blocks"),
            ));
        }
        let (m, n) = (ar / blocks, br / blocks);
        let mut out = vec![0.0; ar * n];
        let (ad, bd) = (self.value(a).data(), self.value(b).data());
        for i in 0..blocks {
            matmul_nt_acc(
                &ad[i * m * d..(i + 1) * m * d],
                &bd[i * n * d..(i + 1) * n * d],
                &mut out[i * m * n..(i + 1) * m * n],
                m,
                d,
                n,
            );
        }
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(
            Op::BlockMatMulNt(a, b, blocks),
            Tensor::matrix(ar, n, out),
            rg,
        ))
    }

    /// Block-diagonal `p * v`: `p` is (blocks*M) x N, `v` is (blocks*N) x d.
    pub fn block_matmul(&mut self, p: Var, v: Var, blocks: usize) -> Result<Var> {
        let (pr, n) = dims(self.value(p));
        let (vr, d) = dims(self.value(v));
        if blocks == 0 || pr % blocks != 0 || vr != blocks * n {
            return Err(shape_err(
                "block_matmul",
                format!("{pr}x{n} by {vr}x{d} in {blocks} blocks"),
            ));
        }
        let m = pr / blocks;
        let mut out = vec![0.0; pr * d];
        let (pd, vd) = (self.value(p).data(), self.value(v).data());
        for i in 0..blocks {
            matmul_acc(
                &pd[i * m * n..(i + 1) * m * n],
                &vd[i * n * d..(i + 1) * n * d],
                &mut out[i * m * d..(i + 1) * m * d],
                m,
                n,
                d,
            );
        }
        let rg = self.rg(p) || self.rg(v);
        Ok(self.push(
            Op::BlockMatMul(p, v, blocks),
            Tensor::matrix(pr, d, out),
            rg,
        ))
    }

    /// Row-wise layer normalization with affine `gamma`, `beta` (1 x cols).
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let (r, c) = dims(self.value(x));
        for (name, p) in [("gamma", gamma), ("beta", beta)] {
            if dims(self.value(p)) != (1, c) {
                return Err(shape_err(
                    "layer_norm",
                    format!("{name} {:?} for width {c}", self.value(p).shape()),
                ));
            }
        }
        let xd = self.value(x).data();
        let g = self.value(gamma).data();
        let bt = self.value(beta).data();
        let mut xhat = vec![0.0; r * c];
        let mut inv_std = vec![0.0; r];
        let mut out = vec![0.0; r * c];
        for row in 0..r {
            let xs = &xd[row * c..(row + 1) * c];
            let mu = xs.iter().sum::<f64>() / c as f64;
            let var = xs.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / c as f64;
            let inv = 1.0 / (var + eps).sqrt();
            inv_std[row] = inv;
            for j in 0..c {
                let h = (xs[j] - mu) * inv;
                xhat[row * c + j] = h;
                out[row * c + j] = g[j] * h + bt[j];
            }
        }
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        Ok(self.push(
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
            Tensor::matrix(r, c, out),
            rg,
        ))
    }

    /// `scale * sum_r -ln softmax(logits_r)[target_r]` over rows with a
    /// target; rows whose target is `None` (padding) contribute nothing.
    pub fn cross_entropy(
        &mut self,
        logits: Var,
        targets: &[Option<usize>],
        scale: f64,
    ) -> Result<Var> {
        let (r, c) = dims(self.value(logits));
        if targets.len() != r {
            return Err(shape_err(
                "cross_entropy",
                format!("{} targets for {r} rows", targets.len()),
            ));
        }
        if let Some(&bad) = targets.iter().flatten().find(|&&t| t >= c) {
            return Err(Error::OutOfVocabulary { id: bad, vocab: c });
        }
        let mut probs = self.value(logits).data().to_vec();
        let mut loss = 0.0;
        for (row, t) in probs.chunks_mut(c).zip(targets) {
            let lse = log_sum_exp(row);
            if let Some(t) = t {
                loss += lse - row[*t];
            }
            for v in row.iter_mut() {
                *v = (*v - lse).exp();
            }
        }
        let rg = self.rg(logits);
        Ok(self.push(
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                scale,
                probs,
            },
            Tensor::scalar(scale * loss),
            rg,
        ))
    }

    /// `scale * sum -[y ln s(z) + (1-y) ln(1-s(z))]`, evaluated stably.
    pub fn bce_with_logits(&mut self, logits: Var, targets: &[f64], scale: f64) -> Result<Var> {
        let z = self.value(logits).data();
        if targets.len() != z.len() {
            return Err(shape_err(
                "bce_with_logits",
                format!("{} targets for {} logits", targets.len(), z.len()),
            ));
        }
        let loss: f64 = z
            .iter()
            .zip(targets)
            .map(|(&z, &y)| z.max(0.0) - z * y + (-z.abs()).exp().ln_1p())
            .sum();
        let rg = self.rg(logits);
        Ok(self.push(
            Op::BceLogits {
                logits,
                targets: targets.to_vec(),
                scale,
            },
            Tensor::scalar(scale * loss),
            rg,
        ))
    }

    /// BCE on probabilities, clamped to `[BCE_CLAMP, 1 - BCE_CLAMP]`.
    pub fn bce(&mut self, probs: Var, targets: &[f64], scale: f64) -> Result<Var> {
        let p = self.value(probs).data();
        if targets.len() != p.len() {
            return Err(shape_err(
                "bce",
                format!("{} targets for {} probabilities", targets.len(), p.len()),
            ));
        }
        if let Some(&bad) = p.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::ProbabilityDomain(bad));
        }
        let loss: f64 = p
            .iter()
            .zip(targets)
            .map(|(&p, &y)| {
                let pc = p.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
                -(y * pc.ln() + (1.0 - y) * (1.0 - pc).ln())
            })
            .sum();
        let rg = self.rg(probs);
        Ok(self.push(
            Op::Bce {
                probs,
                targets: targets.to_vec(),
                scale,
            },
            Tensor::scalar(scale * loss),
            rg,
        ))
    }

    /// Inverted dropout: identity outside training, otherwise zeroes each
    /// entry with probability `p` and scales survivors by `1 / (1 - p)`.
    pub fn dropout<R: Rng>(&mut self, a: Var, p: f64, rng: &mut R) -> Result<Var> {
        if !self.training || p <= 0.0 {
            return Ok(a);
        }
        let (r, c) = dims(self.value(a));
        let keep = 1.0 / (1.0 - p);
        let mask = (0..r * c)
            .map(|_| if rng.gen::<f64>() < p { 0.0 } else { keep })
            .collect();
        let m = self.constant(Tensor::matrix(r, c, mask));
        self.mul(a, m)
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let shape = self.value(loss).shape().to_vec();
        if !self.value(loss).is_scalar() {
            return Err(Error::NonScalarLoss(shape));
        }
        let n = self.nodes.len();
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; n];
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            if matches!(self.nodes[i].op, Op::Leaf) {
                grads[i] = Some(g);
                continue;
            }
            self.backprop_node(i, &g, &mut grads);
        }
        self.grads = grads;
        Ok(())
    }

    /// Gradient of the last `backward` loss w.r.t. a leaf.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Parameter gradients in store order; parameters not reached get zeros.
    pub fn param_grads(&self) -> Grads {
        let store = self.store.expect("graph has no parameter store");
        let mut out = Grads::zeros_like(store);
        for (pid, var) in self.param_vars.iter().enumerate() {
            if let Some(g) = var.and_then(|v| self.grad(v)) {
                out.bufs[pid].copy_from_slice(g);
            }
        }
        out
    }

    fn backprop_node(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let nodes = &self.nodes;
        let out = &nodes[i].value;
        macro_rules! buf {
            ($v:expr) => {
                slot(grads, nodes, $v)
            };
        }
        let val = |v: Var| &nodes[v.0].value;
        match &nodes[i].op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (n, k) = dims(val(*a));
                let m = out.cols();
                if let Some(da) = buf!(*a) {
                    matmul_nt_acc(g, val(*b).data(), da, n, m, k);
                }
                if let Some(db) = buf!(*b) {
                    matmul_tn_acc(val(*a).data(), g, db, n, k, m);
                }
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if let Some(d) = buf!(v) {
                        add_into(d, g);
                    }
                }
            }
            Op::AddTiled(big, small) => {
                if let Some(d) = buf!(*big) {
                    add_into(d, g);
                }
                if let Some(d) = buf!(*small) {
                    let c = out.cols();
                    let s = val(*small).rows();
                    for (row, gr) in g.chunks(c).enumerate() {
                        add_into(&mut d[(row % s) * c..(row % s + 1) * c], gr);
                    }
                }
            }
            Op::Mul(a, b) => {
                if let Some(d) = buf!(*a) {
                    for ((dv, gv), bv) in d.iter_mut().zip(g).zip(val(*b).data()) {
                        *dv += gv * bv;
                    }
                }
                if let Some(d) = buf!(*b) {
                    for ((dv, gv), av) in d.iter_mut().zip(g).zip(val(*a).data()) {
                        *dv += gv * av;
                    }
                }
            }
            Op::MulTiled(big, small) => {
                let c = out.cols();
                let s = val(*small).rows();
                let sd = val(*small).data();
                let bd = val(*big).data();
                if let Some(d) = buf!(*big) {
                    for (row, (dr, gr)) in d.chunks_mut(c).zip(g.chunks(c)).enumerate() {
                        let sr = &sd[(row % s) * c..(row % s + 1) * c];
                        for ((dv, gv), sv) in dr.iter_mut().zip(gr).zip(sr) {
                            *dv += gv * sv;
                        }
                    }
                }
                if let Some(d) = buf!(*small) {
                    for (row, (br, gr)) in bd.chunks(c).zip(g.chunks(c)).enumerate() {
                        let dr = &mut d[(row % s) * c..(row % s + 1) * c];
                        for ((dv, gv), bv) in dr.iter_mut().zip(gr).zip(br) {
                            *dv += gv * bv;
                        }
                    }
                }
            }
            Op::Affine(a, s) => {
                if let Some(d) = buf!(*a) {
                    for (dv, gv) in d.iter_mut().zip(g) {
                        *dv += s * gv;
                    }
                }
            }
            Op::Sigmoid(a) => {
                if let Some(d) = buf!(*a) {
                    for ((dv, gv), y) in d.iter_mut().zip(g).zip(out.data()) {
                        *dv += gv * y * (1.0 - y);
                    }
                }
            }
            Op::Tanh(a) => {
                if let Some(d) = buf!(*a) {
                    for ((dv, gv), y) in d.iter_mut().zip(g).zip(out.data()) {
                        *dv += gv * (1.0 - y * y);
                    }
                }
            }
            Op::Relu(a) => {
                if let Some(d) = buf!(*a) {
                    for ((dv, gv), x) in d.iter_mut().zip(g).zip(val(*a).data()) {
                        if *x > 0.0 {
                            *dv += gv;
                        }
                    }
                }
            }
            Op::SoftmaxRows(a) => {
                if let Some(d) = buf!(*a) {
                    let c = out.cols();
                    for ((dr, gr), yr) in d.chunks_mut(c).zip(g.chunks(c)).zip(out.data().chunks(c))
                    {
                        let dot: f64 = gr.iter().zip(yr).map(|(x, y)| x * y).sum();
                        for ((dv, gv), y) in dr.iter_mut().zip(gr).zip(yr) {
                            *dv += y * (gv - dot);
                        }
                    }
                }
            }
            Op::ConcatCols(parts) => {
                let c = out.cols();
                let mut offset = 0;
                for p in parts {
                    let w = val(*p).cols();
                    if let Some(d) = buf!(*p) {
                        for (dr, gr) in d.chunks_mut(w).zip(g.chunks(c)) {
                            add_into(dr, &gr[offset..offset + w]);
                        }
                    }
                    offset += w;
                }
            }
            Op::SliceCols(a, start) => {
                if let Some(d) = buf!(*a) {
                    let c = val(*a).cols();
                    let w = out.cols();
                    for (dr, gr) in d.chunks_mut(c).zip(g.chunks(w)) {
                        add_into(&mut dr[*start..*start + w], gr);
                    }
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for p in parts {
                    let n = val(*p).len();
                    if let Some(d) = buf!(*p) {
                        add_into(d, &g[offset..offset + n]);
                    }
                    offset += n;
                }
            }
            Op::SliceRows(a, start) => {
                if let Some(d) = buf!(*a) {
                    let c = out.cols();
                    add_into(&mut d[start * c..start * c + g.len()], g);
                }
            }
            Op::GatherRows(src, idx) => {
                if let Some(d) = buf!(*src) {
                    let c = out.cols();
                    for (&row, gr) in idx.iter().zip(g.chunks(c)) {
                        add_into(&mut d[row * c..(row + 1) * c], gr);
                    }
                }
            }
            Op::Transpose(a) => {
                if let Some(d) = buf!(*a) {
                    let (r, c) = dims(val(*a));
                    for i in 0..r {
                        for j in 0..c {
                            d[i * c + j] += g[j * r + i];
                        }
                    }
                }
            }
            Op::Reshape(a) => {
                if let Some(d) = buf!(*a) {
                    add_into(d, g);
                }
            }
            Op::RowSum(a) => {
                if let Some(d) = buf!(*a) {
                    let c = val(*a).cols();
                    for (dr, gv) in d.chunks_mut(c).zip(g) {
                        for dv in dr {
                            *dv += gv;
                        }
                    }
                }
            }
            Op::SumAll(a) => {
                if let Some(d) = buf!(*a) {
                    for dv in d {
                        *dv += g[0];
                    }
                }
            }
            Op::WeightedTimeSum(w, x) => {
                let (b, k) = dims(val(*w));
                let e = out.cols();
                if let Some(d) = buf!(*w) {
                    let xd = val(*x).data();
                    for bi in 0..b {
                        let gr = &g[bi * e..(bi + 1) * e];
                        for ki in 0..k {
                            let row = (ki * b + bi) * e;
                            d[bi * k + ki] += gr
                                .iter()
                                .zip(&xd[row..row + e])
                                .map(|(a, c)| a * c)
                                .sum::<f64>();
                        }
                    }
                }
                if let Some(d) = buf!(*x) {
                    let wd = val(*w).data();
                    for bi in 0..b {
                        let gr = &g[bi * e..(bi + 1) * e];
                        for ki in 0..k {
                            let wv = wd[bi * k + ki];
                            let row = (ki * b + bi) * e;
                            for (dv, gv) in d[row..row + e].iter_mut().zip(gr) {
                                *dv += wv * gv;
                            }
                        }
                    }
                }
            }
            Op::BlockMatMulNt(a, b, blocks) => {
                let (ar, dd) = dims(val(*a));
                let br = val(*b).rows();
                let (m, n) = (ar / blocks, br / blocks);
                if let Some(da) = buf!(*a) {
                    let bd = val(*b).data();
                    for i in 0..*blocks {
                        matmul_acc(
                            &g[i * m * n..(i + 1) * m * n],
                            &bd[i * n * dd..(i + 1) * n * dd],
                            &mut da[i * m * dd..(i + 1) * m * dd],
                            m,
                            n,
                            dd,
                        );
                    }
                }
                if let Some(db) = buf!(*b) {
                    let ad = val(*a).data();
                    for i in 0..*blocks {
                        matmul_tn_acc(
                            &g[i * m * n..(i + 1) * m * n],
                            &ad[i * m * dd..(i + 1) * m * dd],
                            &mut db[i * n * dd..(i + 1) * n * dd],
                            m,
                            n,
                            dd,
                        );
                    }
                }
            }
            Op::BlockMatMul(p, v, blocks) => {
                let (pr, n) = dims(val(*p));
                let dd = val(*v).cols();
                let m = pr / blocks;
                if let Some(dp) = buf!(*p) {
                    let vd = val(*v).data();
                    for i in 0..*blocks {
                        matmul_nt_acc(
                            &g[i * m * dd..(i + 1) * m * dd],
                            &vd[i * n * dd..(i + 1) * n * dd],
                            &mut dp[i * m * n..(i + 1) * m * n],
                            m,
                            dd,
                            n,
                        );
                    }
                }
                if let Some(dv) = buf!(*v) {
                    let pd = val(*p).data();
                    for i in 0..*blocks {
                        matmul_tn_acc(
                            &pd[i * m * n..(i + 1) * m * n],
                            &g[i * m * dd..(i + 1) * m * dd],
                            &mut dv[i * n * dd..(i + 1) * n * dd],
                            m,
                            n,
                            dd,
                        );
                    }
                }
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let c = out.cols();
                if let Some(d) = buf!(*gamma) {
                    for (gr, hr) in g.chunks(c).zip(xhat.chunks(c)) {
                        for ((dv, gv), h) in d.iter_mut().zip(gr).zip(hr) {
                            *dv += gv * h;
                        }
                    }
                }
                if let Some(d) = buf!(*beta) {
                    for gr in g.chunks(c) {
                        add_into(d, gr);
                    }
                }
                if let Some(d) = buf!(*x) {
                    let gam = val(*gamma).data();
                    let cf = c as f64;
                    for (row, ((dr, gr), hr)) in d
                        .chunks_mut(c)
                        .zip(g.chunks(c))
                        .zip(xhat.chunks(c))
                        .enumerate()
                    {
                        let dxh: Vec<f64> = gr.iter().zip(gam).map(|(a, b)| a * b).collect();
                        let sum: f64 = dxh.iter().sum();
                        let dot: f64 = dxh.iter().zip(hr).map(|(a, b)| a * b).sum();
                        let k = inv_std[row] / cf;
                        for ((dv, dh), h) in dr.iter_mut().zip(&dxh).zip(hr) {
                            *dv += k * (cf * dh - sum - h * dot);
                        }
                    }
                }
            }
            Op::CrossEntropy {
                logits,
                targets,
                scale,
                probs,
            } => {
                if let Some(d) = buf!(*logits) {
                    let c = val(*logits).cols();
                    let s = scale * g[0];
                    for ((dr, pr), t) in d.chunks_mut(c).zip(probs.chunks(c)).zip(targets) {
                        let Some(t) = t else { continue };
                        for (dv, p) in dr.iter_mut().zip(pr) {
                            *dv += s * p;
                        }
                        dr[*t] -= s;
                    }
                }
            }
            Op::BceLogits {
                logits,
                targets,
                scale,
            } => {
                if let Some(d) = buf!(*logits) {
                    let s = scale * g[0];
                    for ((dv, z), y) in d.iter_mut().zip(val(*logits).data()).zip(targets) {
                        *dv += s * (sigmoid(*z) - y);
                    }
                }
            }
            Op::Bce {
                probs,
                targets,
                scale,
            } => {
                if let Some(d) = buf!(*probs) {
                    let s = scale * g[0];
                    for ((dv, p), y) in d.iter_mut().zip(val(*probs).data()).zip(targets) {
                        if *p > BCE_CLAMP && *p < 1.0 - BCE_CLAMP {
                            *dv += s * (-y / p + (1.0 - y) / (1.0 - p));
                        }
                    }
                }
            }
        }
    }
}

fn slot<'g>(grads: &'g mut [Option<Vec<f64>>], nodes: &[Node], v: Var) -> Option<&'g mut Vec<f64>> {
    if !nodes[v.0].requires_grad {
        return None;
    }
    Some(grads[v.0].get_or_insert_with(|| vec![0.0; nodes[v.0].value.len()]))
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
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

pub(crate) fn log_sum_exp(row: &[f64]) -> f64 {
    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

pub fn softmax_in_place(row: &mut [f64]) {
    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut z = 0.0;
    for v in row.iter_mut() {
        *v = (*v - m).exp();
        z += *v;
    }
    for v in row.iter_mut() {
        *v /= z;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::gradcheck;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn softmax_of_zeros_is_uniform() {
        let mut g = Graph::detached(false);
        let x = g.constant(Tensor::row(vec![0.0, 0.0]));
        let y = g.softmax_rows(x);
        assert_eq!(g.value(y).data(), &[0.5, 0.5]);
    }

    #[test]
    fn tanh_of_zero_is_zero() {
        let mut g = Graph::detached(false);
        let x = g.constant(Tensor::zeros(2, 3));
        let y = g.tanh(x);
        assert!(g.value(y).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn matmul_of_ones() {
        let mut g = Graph::detached(false);
        let a = g.constant(Tensor::filled(2, 3, 1.0));
        let b = g.constant(Tensor::filled(3, 1, 1.0));
        let c = g.matmul(a, b).unwrap();
        assert_eq!(g.value(c).shape(), &[2, 1]);
        assert_eq!(g.value(c).data(), &[3.0, 3.0]);
    }

    #[test]
    fn matmul_shape_error_names_op() {
        let mut g = Graph::detached(false);
        let a = g.constant(Tensor::zeros(2, 3));
        let b = g.constant(Tensor::zeros(2, 3));
        let err = g.matmul(a, b).unwrap_err().to_string();
        assert!(err.contains("matmul") && err.contains("2x3 * 2x3"), "{err}");
    }

    #[test]
    fn square_sum_gradient() {
        let mut g = Graph::detached(false);
        let x = g.input(Tensor::row(vec![1.0, 2.0]));
        let sq = g.mul(x, x).unwrap();
        let l = g.sum_all(sq);
        g.backward(l).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[2.0, 4.0]);
    }

    #[test]
    fn sigmoid_gradient_at_zero() {
        let mut g = Graph::detached(false);
        let w = g.input(Tensor::matrix(1, 3, vec![0.0; 3]));
        let x = g.constant(Tensor::matrix(3, 1, vec![1.0, -2.0, 0.5]));
        let z = g.matmul(w, x).unwrap();
        let s = g.sigmoid(z);
        g.backward(s).unwrap();
        assert_eq!(g.grad(w).unwrap(), &[0.25, -0.5, 0.125]);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut g = Graph::detached(false);
        let x = g.input(Tensor::row(vec![1.0, 2.0]));
        assert!(matches!(g.backward(x), Err(Error::NonScalarLoss(_))));
    }

    #[test]
    fn unused_params_get_zero_grad() {
        let mut store = ParamStore::new();
        let a = store.add("a", Tensor::row(vec![1.0, 2.0]));
        store.add("unused", Tensor::row(vec![5.0]));
        let mut g = Graph::new(&store, false);
        let av = g.param(a);
        let l = g.sum_all(av);
        g.backward(l).unwrap();
        let grads = g.param_grads();
        assert_eq!(grads.get(a), &[1.0, 1.0]);
        assert_eq!(grads.get(store.id("unused").unwrap()), &[0.0]);
    }

    #[test]
    fn softmax_rows_normalize() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut g = Graph::detached(false);
        let data = (0..40).map(|_| rng.gen_range(-20.0..20.0)).collect();
        let x = g.constant(Tensor::matrix(5, 8, data));
        let y = g.softmax_rows(x);
        for r in 0..5 {
            let s: f64 = g.value(y).row_slice(r).iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn dropout_eval_is_identity_and_train_preserves_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut g = Graph::detached(false);
        let x = g.constant(Tensor::filled(1, 10, 2.0));
        assert_eq!(g.dropout(x, 0.4, &mut rng).unwrap(), x);

        let mut g = Graph::detached(true);
        let n = 200_000;
        let x = g.constant(Tensor::filled(1, n, 1.0));
        let y = g.dropout(x, 0.4, &mut rng).unwrap();
        let mean = g.value(y).data().iter().sum::<f64>() / n as f64;
        assert!((mean - 1.0).abs() < 0.01, "{mean}");
        let zeros = g.value(y).data().iter().filter(|v| **v == 0.0).count();
        assert!((zeros as f64 / n as f64 - 0.4).abs() < 0.01);
    }

    fn rand_tensor(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Tensor {
        Tensor::matrix(r, c, (0..r * c).map(|_| rng.gen_range(-1.0..1.0)).collect())
    }

    /// Every primitive, chained into one scalar, against finite differences.
    #[test]
    fn primitives_match_finite_differences() {
        for seed in 0..5 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut s = ParamStore::new();
            let a = s.add("a", rand_tensor(&mut rng, 6, 4));
            let w = s.add("w", rand_tensor(&mut rng, 4, 3));
            let b = s.add("b", rand_tensor(&mut rng, 1, 3));
            let q = s.add("q", rand_tensor(&mut rng, 2, 3));
            let gam = s.add("gamma", rand_tensor(&mut rng, 1, 3));
            let bet = s.add("beta", rand_tensor(&mut rng, 1, 3));
            let k = s.add("k", rand_tensor(&mut rng, 6, 3));
            let targets = vec![Some(0), None, Some(2), Some(1), Some(1), Some(0)];
            let report = gradcheck::check(&s, 1e-5, |g| {
                let (a, w, b, q) = (g.param(a), g.param(w), g.param(b), g.param(q));
                let (gam, bet, k) = (g.param(gam), g.param(bet), g.param(k));
                let h = g.matmul(a, w)?; // 6x3, time-major K=3, B=2
                let h = g.add_tiled(h, b)?;
                let t = g.tanh(h);
                let u = g.add_tiled(t, q)?;
                let u = g.mul_tiled(u, q)?;
                let ln = g.layer_norm(u, gam, bet, 1e-5)?;
                let sg = g.sigmoid(ln);
                let m = g.mul(sg, k)?;
                let r = g.relu(m);
                let rs = g.row_sum(r); // 6x1
                let sc = g.reshape(rs, 3, 2)?;
                let sc = g.transpose(sc); // 2x3 (B x K)
                let wts = g.softmax_rows(sc);
                let ctx = g.weighted_time_sum(wts, k)?; // 2x3
                let c1 = g.slice_cols(ctx, 1, 2)?;
                let c0 = g.slice_cols(ctx, 0, 1)?;
                let cat = g.concat_cols(&[c1, c0])?;
                let stack = g.concat_rows(&[cat, ctx])?; // 4x3
                let mid = g.slice_rows(stack, 1, 2)?;
                let gath = g.gather_rows(stack, &[3, 0, 3])?;
                let att = g.block_matmul_nt(gath, k, 1)?; // 3x6
                let att = g.softmax_rows(att);
                let mixed = g.block_matmul(att, k, 1)?; // 3x3
                let ce = g.cross_entropy(h, &targets, 0.5)?;
                let bl =
                    g.bce_with_logits(mixed, &[1.0, 0.0, 1.0, 0.0, 0.0, 1.0, 1.0, 1.0, 0.0], 0.3)?;
                let ps = g.sigmoid(mid);
                let bp = g.bce(ps, &[1.0, 0.0, 1.0, 0.0, 1.0, 1.0], 0.2)?;
                let s1 = g.add(ce, bl)?;
                let s2 = g.add(s1, bp)?;
                let sub = g.sub(s2, ce)?;
                let m2 = g.mean_all(mixed);
                let l = g.add(sub, m2)?;
                Ok(g.affine(l, 1.5, 0.25))
            })
            .unwrap();
            assert!(report.max_rel_err < 1e-4, "seed {seed}: {report:?}");
        }
    }

    #[test]
    fn block_matmuls_multi_block() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut s = ParamStore::new();
        let q = s.add("q", rand_tensor(&mut rng, 6, 4)); // 2 blocks of 3
        let k = s.add("k", rand_tensor(&mut rng, 4, 4)); // 2 blocks of 2
        let report = gradcheck::check(&s, 1e-5, |g| {
            let (q, k) = (g.param(q), g.param(k));
            let sc = g.block_matmul_nt(q, k, 2)?; // 6x2
            let p = g.softmax_rows(sc);
            let o = g.block_matmul(p, k, 2)?; // 6x4
            let t = g.tanh(o);
            Ok(g.sum_all(t))
        })
        .unwrap();
        assert!(report.max_rel_err < 1e-4, "{report:?}");

        // forward value of block 1 equals the plain product of its slices
        let mut g = Graph::new(&s, false);
        let (qv, kv) = (g.param(q), g.param(k));
        let sc = g.block_matmul_nt(qv, kv, 2).unwrap();
        let q1 = s.get(q).row_slice(4);
        let k1 = s.get(k).row_slice(3);
        let dot: f64 = q1.iter().zip(k1).map(|(a, b)| a * b).sum();
        assert!((g.value(sc).get(4, 1) - dot).abs() < 1e-15);
    }

    #[test]
    fn cross_entropy_uniform_logits_is_ln_v() {
        let mut g = Graph::detached(false);
        let z = g.constant(Tensor::zeros(3, 7));
        let l = g
            .cross_entropy(z, &[Some(0), Some(3), Some(6)], 1.0 / 3.0)
            .unwrap();
        assert!((g.value(l).item() - 7f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn bce_rejects_out_of_domain() {
        let mut g = Graph::detached(false);
        let p = g.constant(Tensor::row(vec![0.5, 1.5]));
        assert!(matches!(
            g.bce(p, &[1.0, 0.0], 1.0),
            Err(Error::ProbabilityDomain(_))
        ));
    }

    #[test]
    fn gather_rejects_out_of_range() {
        let mut g = Graph::detached(false);
        let t = g.constant(Tensor::zeros(2, 3));
        assert!(matches!(
            g.gather_rows(t, &[2]),
            Err(Error::OutOfVocabulary { id: 2, vocab: 2 })
        ));
    }

    #[test]
    fn forward_is_deterministic() {
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(5);
            let mut s = ParamStore::new();
            let a = s.add_uniform("a", 4, 4, 4, &mut rng);
            let mut g = Graph::new(&s, true);
            let av = g.param(a);
            let d = g.dropout(av, 0.3, &mut rng).unwrap();
            let t = g.tanh(d);
            let l = g.sum_all(t);
            g.backward(l).unwrap();
            (g.value(l).item().to_bits(), g.param_grads())
        };
        assert_eq!(run(), run());
    }
}
