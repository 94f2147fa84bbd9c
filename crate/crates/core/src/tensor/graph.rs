use std::collections::HashMap;

use super::kernels::{gemm, gemm_strided, MatRef};
use super::rng;
use super::{ParamId, ParamStore, Tensor};
use crate::error::TensorError;

const LN_EPS: f64 = 1e-12;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

/// Handle of a node on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Constant,
    Param(#[allow(dead_code)] ParamId),
    MatMul { a: Var, b: Var, tb: bool },
    Add(Var, Var),
    Mul(Var, Var),
    AddBias { x: Var, bias: Var },
    Scale { x: Var, factor: f64 },
    LayerNorm { x: Var, gamma: Var, beta: Var, xhat: Vec<f64>, rstd: Vec<f64> },
    Gelu(Var),
    Softmax(Var),
    LogSoftmax { x: Var, mask: Option<Vec<bool>> },
    Log(Var),
    Gather { table: Var, ids: Vec<usize> },
    Dropout { x: Var, mask: Vec<f64> },
    Concat(Vec<Var>),
    SelectRows { x: Var, rows: Vec<usize> },
    Sum(Var),
    Mean(Var),
    L2Normalize { x: Var, norms: Vec<f64> },
    Attention(Box<AttentionCache>),
    WeightedSum { x: Var, weights: Vec<f64> },
    Pick { x: Var, cols: Vec<usize> },
}

#[derive(Debug)]
struct AttentionCache {
    q: Var,
    k: Var,
    v: Var,
    lens: Vec<usize>,
    seq: usize,
    heads: usize,
    /// Softmax probabilities per (sequence, head), `len × len`.
    probs: Vec<Vec<f64>>,
}

#[derive(Debug)]
struct Node {
    shape: Vec<usize>,
    value: Vec<f64>,
    op: Op,
}

/// A reverse-mode tape. Nodes are appended in evaluation order, which is a
/// topological order of the computation.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: HashMap<ParamId, Var>,
}

/// Gradients of every node with respect to one scalar.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// `None` when `var` does not influence the loss, including nodes
    /// created after it.
    pub fn get(&self, var: Var) -> Option<&[f64]> {
        self.grads.get(var.0)?.as_deref()
    }
}

fn shape_err(op: &'static str, left: &[usize], right: &[usize]) -> TensorError {
    TensorError::Shape {
        op,
        left: left.to_vec(),
        right: right.to_vec(),
    }
}

fn grad_slot<'a>(grads: &'a mut [Option<Vec<f64>>], nodes: &[Node], var: Var) -> &'a mut Vec<f64> {
    let len = nodes[var.0].value.len();
    grads[var.0].get_or_insert_with(|| vec![0.0; len])
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, shape: Vec<usize>, value: Vec<f64>, op: Op) -> Var {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        self.nodes.push(Node { shape, value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, var: Var) -> &[f64] {
        &self.nodes[var.0].value
    }

    pub fn shape(&self, var: Var) -> &[usize] {
        &self.nodes[var.0].shape
    }

    /// The single value of a one-element node.
    pub fn item(&self, var: Var) -> f64 {
        let v = self.value(var);
        assert_eq!(v.len(), 1, "item() on a node with {} elements", v.len());
        v[0]
    }

    pub fn to_tensor(&self, var: Var) -> Tensor {
        Tensor::new(self.shape(var).to_vec(), self.value(var).to_vec()).expect("node shape is consistent")
    }

    fn dims2(&self, var: Var, op: &'static str) -> Result<(usize, usize), TensorError> {
        match self.shape(var) {
            [r, c] => Ok((*r, *c)),
            other => Err(shape_err(op, other, &[0, 0])),
        }
    }

    pub fn constant(&mut self, tensor: Tensor) -> Var {
        let shape = tensor.shape().to_vec();
        self.push(shape, tensor.into_data(), Op::Constant)
    }

    pub fn constant_from(&mut self, shape: Vec<usize>, data: Vec<f64>) -> Result<Var, TensorError> {
        Ok(self.constant(Tensor::new(shape, data)?))
    }

    /// Places a parameter on the tape, once per graph.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&var) = self.params.get(&id) {
            return var;
        }
        let t = store.get(id);
        let var = self.push(t.shape().to_vec(), t.data().to_vec(), Op::Param(id));
        self.params.insert(id, var);
        var
    }

    /// `a·b` for `a: [m,k]`, `b: [k,n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.matmul_impl(a, b, false)
    }

    /// `a·bᵀ` for `a: [m,k]`, `b: [n,k]`.
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.matmul_impl(a, b, true)
    }

    fn matmul_impl(&mut self, a: Var, b: Var, tb: bool) -> Result<Var, TensorError> {
        let (m, k) = self.dims2(a, "matmul")?;
        let (br, bc) = self.dims2(b, "matmul")?;
        let (bk, n) = if tb { (bc, br) } else { (br, bc) };
        if k != bk {
            return Err(shape_err("matmul", self.shape(a), self.shape(b)));
        }
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, self.value(a), false, self.value(b), tb, 0.0, &mut out);
        Ok(self.push(vec![m, n], out, Op::MatMul { a, b, tb }))
    }

    fn same_shape(&self, a: Var, b: Var, op: &'static str) -> Result<(), TensorError> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err(op, self.shape(a), self.shape(b)));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.same_shape(a, b, "add")?;
        let out = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x + y).collect();
        Ok(self.push(self.shape(a).to_vec(), out, Op::Add(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.same_shape(a, b, "mul")?;
        let out = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x * y).collect();
        Ok(self.push(self.shape(a).to_vec(), out, Op::Mul(a, b)))
    }

    /// Adds a `[n]` bias to every row of `x: [m,n]`.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var, TensorError> {
        let (_, n) = self.dims2(x, "add_bias")?;
        if self.shape(bias) != [n] {
            return Err(shape_err("add_bias", self.shape(x), self.shape(bias)));
        }
        let b = self.value(bias);
        let out = self
            .value(x)
            .chunks(n)
            .flat_map(|row| row.iter().zip(b).map(|(v, b)| v + b))
            .collect();
        Ok(self.push(self.shape(x).to_vec(), out, Op::AddBias { x, bias }))
    }

    /// `x·W + b` with `w: [in, out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var, TensorError> {
        let y = self.matmul(x, w)?;
        self.add_bias(y, b)
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let out = self.value(x).iter().map(|v| v * factor).collect();
        self.push(self.shape(x).to_vec(), out, Op::Scale { x, factor })
    }

    /// Row-wise layer normalization over the last dimension.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var, TensorError> {
        let (m, n) = self.dims2(x, "layer_norm")?;
        if self.shape(gamma) != [n] || self.shape(beta) != [n] {
            return Err(shape_err("layer_norm", self.shape(x), self.shape(gamma)));
        }
        let (g, bt) = (self.value(gamma), self.value(beta));
        let mut out = vec![0.0; m * n];
        let mut xhat = vec![0.0; m * n];
        let mut rstd = vec![0.0; m];
        for (r, row) in self.value(x).chunks(n).enumerate() {
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            let rs = 1.0 / (var + LN_EPS).sqrt();
            rstd[r] = rs;
            for c in 0..n {
                let h = (row[c] - mean) * rs;
                xhat[r * n + c] = h;
                out[r * n + c] = h * g[c] + bt[c];
            }
        }
        Ok(self.push(
            vec![m, n],
            out,
            Op::LayerNorm { x, gamma, beta, xhat, rstd },
        ))
    }

    /// Tanh-approximated GELU.
    pub fn gelu(&mut self, x: Var) -> Var {
        let out = self
            .value(x)
            .iter()
            .map(|&v| 0.5 * v * (1.0 + (GELU_C * (v + GELU_A * v * v * v)).tanh()))
            .collect();
        self.push(self.shape(x).to_vec(), out, Op::Gelu(x))
    }

    /// Row-wise softmax.
    pub fn softmax(&mut self, x: Var) -> Result<Var, TensorError> {
        let (m, n) = self.dims2(x, "softmax")?;
        let mut out = vec![0.0; m * n];
        for (row, dst) in self.value(x).chunks(n).zip(out.chunks_mut(n)) {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for (d, v) in dst.iter_mut().zip(row) {
                *d = (v - max).exp();
                sum += *d;
            }
            for d in dst.iter_mut() {
                *d /= sum;
            }
        }
        Ok(self.push(vec![m, n], out, Op::Softmax(x)))
    }

    /// Row-wise log-softmax. With a mask, only `true` entries take part in
    /// the normalizer and masked-out entries output 0 with no gradient.
    pub fn log_softmax(&mut self, x: Var, mask: Option<Vec<bool>>) -> Result<Var, TensorError> {
        let (m, n) = self.dims2(x, "log_softmax")?;
        if let Some(mask) = &mask {
            if mask.len() != m * n {
                return Err(shape_err("log_softmax", &[m, n], &[mask.len()]));
            }
        }
        let allowed = |i: usize| mask.as_ref().is_none_or(|mk| mk[i]);
        let mut out = vec![0.0; m * n];
        for (r, row) in self.value(x).chunks(n).enumerate() {
            let base = r * n;
            let max = (0..n)
                .filter(|&c| allowed(base + c))
                .map(|c| row[c])
                .fold(f64::NEG_INFINITY, f64::max);
            if max == f64::NEG_INFINITY {
                continue;
            }
            let sum: f64 = (0..n)
                .filter(|&c| allowed(base + c))
                .map(|c| (row[c] - max).exp())
                .sum();
            let lse = max + sum.ln();
            for c in (0..n).filter(|&c| allowed(base + c)) {
                out[base + c] = row[c] - lse;
            }
        }
        Ok(self.push(vec![m, n], out, Op::LogSoftmax { x, mask }))
    }

    pub fn log(&mut self, x: Var) -> Var {
        let out = self.value(x).iter().map(|v| v.ln()).collect();
        self.push(self.shape(x).to_vec(), out, Op::Log(x))
    }

    /// Gathers rows of `table: [V, H]` by id.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var, TensorError> {
        let (rows, h) = self.dims2(table, "embedding")?;
        if let Some(&bad) = ids.iter().find(|&&id| id >= rows) {
            return Err(TensorError::OutOfRange {
                what: "embedding table",
                index: bad,
                bound: rows,
            });
        }
        let t = self.value(table);
        let mut out = Vec::with_capacity(ids.len() * h);
        for &id in ids {
            out.extend_from_slice(&t[id * h..(id + 1) * h]);
        }
        Ok(self.push(vec![ids.len(), h], out, Op::Gather { table, ids: ids.to_vec() }))
    }

    /// Inverted dropout. Element `(r, c)` is dropped when
    /// `uniform(row_seeds[r], c) < p`; kept values are scaled by `1/(1-p)`.
    pub fn dropout(&mut self, x: Var, p: f64, row_seeds: &[u64]) -> Result<Var, TensorError> {
        if p == 0.0 {
            return Ok(x);
        }
        if !(0.0..1.0).contains(&p) {
            return Err(TensorError::Contract(format!("dropout rate {p} outside [0, 1)")));
        }
        let (m, n) = self.dims2(x, "dropout")?;
        if row_seeds.len() != m {
            return Err(shape_err("dropout", &[m, n], &[row_seeds.len()]));
        }
        let keep = 1.0 / (1.0 - p);
        let mut mask = vec![0.0; m * n];
        for (r, &seed) in row_seeds.iter().enumerate() {
            for c in 0..n {
                if rng::uniform(seed, c as u64) >= p {
                    mask[r * n + c] = keep;
                }
            }
        }
        let out = self.value(x).iter().zip(&mask).map(|(v, k)| v * k).collect();
        Ok(self.push(vec![m, n], out, Op::Dropout { x, mask }))
    }

    /// Stacks matrices with equal column counts.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var, TensorError> {
        let first = *parts
            .first()
            .ok_or_else(|| TensorError::Contract("concat of zero tensors".into()))?;
        let (_, n) = self.dims2(first, "concat")?;
        let mut rows = 0;
        let mut out = Vec::new();
        for &p in parts {
            let (r, c) = self.dims2(p, "concat")?;
            if c != n {
                return Err(shape_err("concat", self.shape(first), self.shape(p)));
            }
            rows += r;
            out.extend_from_slice(self.value(p));
        }
        Ok(self.push(vec![rows, n], out, Op::Concat(parts.to_vec())))
    }

    pub fn select_rows(&mut self, x: Var, rows: &[usize]) -> Result<Var, TensorError> {
        let (m, n) = self.dims2(x, "select_rows")?;
        if let Some(&bad) = rows.iter().find(|&&r| r >= m) {
            return Err(TensorError::OutOfRange { what: "rows", index: bad, bound: m });
        }
        let v = self.value(x);
        let mut out = Vec::with_capacity(rows.len() * n);
        for &r in rows {
            out.extend_from_slice(&v[r * n..(r + 1) * n]);
        }
        Ok(self.push(vec![rows.len(), n], out, Op::SelectRows { x, rows: rows.to_vec() }))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).iter().sum();
        self.push(vec![1], vec![s], Op::Sum(x))
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let v = self.value(x);
        let s = v.iter().sum::<f64>() / v.len().max(1) as f64;
        self.push(vec![1], vec![s], Op::Mean(x))
    }

    /// Scales every row to unit L2 norm. A zero row is a degenerate input.
    pub fn l2_normalize(&mut self, x: Var) -> Result<Var, TensorError> {
        let (m, n) = self.dims2(x, "l2_normalize")?;
        let mut out = vec![0.0; m * n];
        let mut norms = vec![0.0; m];
        for (r, row) in self.value(x).chunks(n).enumerate() {
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm == 0.0 || !norm.is_finite() {
                return Err(TensorError::Degenerate { row: r });
            }
            norms[r] = norm;
            for c in 0..n {
                out[r * n + c] = row[c] / norm;
            }
        }
        Ok(self.push(vec![m, n], out, Op::L2Normalize { x, norms }))
    }

    /// `Σ x ⊙ w` for a constant weight buffer.
    pub fn weighted_sum(&mut self, x: Var, weights: Vec<f64>) -> Result<Var, TensorError> {
        if weights.len() != self.value(x).len() {
            return Err(shape_err("weighted_sum", self.shape(x), &[weights.len()]));
        }
        let s = self.value(x).iter().zip(&weights).map(|(a, b)| a * b).sum();
        Ok(self.push(vec![1], vec![s], Op::WeightedSum { x, weights }))
    }

    /// Picks `x[r, cols[r]]` for every row.
    pub fn pick(&mut self, x: Var, cols: &[usize]) -> Result<Var, TensorError> {
        let (m, n) = self.dims2(x, "pick")?;
        if cols.len() != m {
            return Err(shape_err("pick", &[m, n], &[cols.len()]));
        }
        if let Some(&bad) = cols.iter().find(|&&c| c >= n) {
            return Err(TensorError::OutOfRange { what: "columns", index: bad, bound: n });
        }
        let v = self.value(x);
        let out = cols.iter().enumerate().map(|(r, &c)| v[r * n + c]).collect();
        Ok(self.push(vec![m], out, Op::Pick { x, cols: cols.to_vec() }))
    }

    /// Multi-head scaled dot-product attention over packed sequences.
    ///
    /// `q`, `k`, `v` are `[batch·seq, H]`; sequence `b` occupies rows
    /// `b·seq .. b·seq + seq` and only its first `lens[b]` positions are real.
    /// Padded keys get zero weight and padded query rows output zeros.
    pub fn attention(
        &mut self,
        q: Var,
        k: Var,
        v: Var,
        lens: &[usize],
        seq: usize,
        heads: usize,
    ) -> Result<Var, TensorError> {
        let (rows, h) = self.dims2(q, "attention")?;
        self.same_shape(q, k, "attention")?;
        self.same_shape(q, v, "attention")?;
        if heads == 0 || h % heads != 0 {
            return Err(TensorError::Contract(format!("{h} hidden units not divisible by {heads} heads")));
        }
        if rows != lens.len() * seq || lens.iter().any(|&l| l > seq) {
            return Err(shape_err("attention", &[rows, h], &[lens.len(), seq]));
        }
        let dh = h / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut out = vec![0.0; rows * h];
        let mut probs = Vec::with_capacity(lens.len() * heads);
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        for (b, &len) in lens.iter().enumerate() {
            for head in 0..heads {
                let off = b * seq * h + head * dh;
                let mut p = vec![0.0; len * len];
                gemm_strided(
                    len,
                    dh,
                    len,
                    MatRef { data: qv, offset: off, row_stride: h, col_stride: 1 },
                    MatRef { data: kv, offset: off, row_stride: 1, col_stride: h },
                    0.0,
                    &mut p,
                    0,
                    len,
                );
                for row in p.chunks_mut(len) {
                    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max) * scale;
                    let mut sum = 0.0;
                    for e in row.iter_mut() {
                        *e = (*e * scale - max).exp();
                        sum += *e;
                    }
                    for e in row.iter_mut() {
                        *e /= sum;
                    }
                }
                gemm_strided(
                    len,
                    len,
                    dh,
                    MatRef::dense(&p, len, false),
                    MatRef { data: vv, offset: off, row_stride: h, col_stride: 1 },
                    0.0,
                    &mut out,
                    off,
                    h,
                );
                probs.push(p);
            }
        }
        let cache = AttentionCache {
            q,
            k,
            v,
            lens: lens.to_vec(),
            seq,
            heads,
            probs,
        };
        Ok(self.push(vec![rows, h], out, Op::Attention(Box::new(cache))))
    }

    /// Reverse pass from a one-element node.
    pub fn gradients(&self, loss: Var) -> Result<Gradients, TensorError> {
        if self.value(loss).len() != 1 {
            return Err(TensorError::Contract(format!(
                "backward from a non-scalar of shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    /// Runs the reverse pass and adds parameter gradients into `store`.
    /// Frozen parameters are left untouched.
    pub fn backward(&self, loss: Var, store: &mut ParamStore) -> Result<(), TensorError> {
        let grads = self.gradients(loss)?;
        for (&id, &var) in &self.params {
            if store.is_frozen(id) {
                continue;
            }
            if let Some(g) = grads.get(var) {
                store.get_mut(id).accumulate_grad(g);
            }
        }
        Ok(())
    }

    fn propagate(&self, idx: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[idx];
        macro_rules! acc {
            ($var:expr) => {
                grad_slot(grads, &self.nodes, $var)
            };
        }
        match &node.op {
            Op::Constant | Op::Param(_) => {}
            Op::MatMul { a, b, tb } => {
                let (m, k) = (self.nodes[a.0].shape[0], self.nodes[a.0].shape[1]);
                let n = node.shape[1];
                // dA = dC·op(B)ᵀ
                gemm(m, n, k, g, false, self.value(*b), !tb, 1.0, acc!(*a));
                if *tb {
                    // B is [n,k]: dB = dCᵀ·A
                    gemm(n, m, k, g, true, self.value(*a), false, 1.0, acc!(*b));
                } else {
                    // B is [k,n]: dB = Aᵀ·dC
                    gemm(k, m, n, self.value(*a), true, g, false, 1.0, acc!(*b));
                }
            }
            Op::Add(a, b) => {
                add_into(acc!(*a), g);
                add_into(acc!(*b), g);
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let da = acc!(*a);
                for i in 0..g.len() {
                    da[i] += g[i] * bv[i];
                }
                let db = acc!(*b);
                for i in 0..g.len() {
                    db[i] += g[i] * av[i];
                }
            }
            Op::AddBias { x, bias } => {
                add_into(acc!(*x), g);
                let n = self.nodes[bias.0].value.len();
                let db = acc!(*bias);
                for row in g.chunks(n) {
                    add_into(db, row);
                }
            }
            Op::Scale { x, factor } => {
                let dx = acc!(*x);
                for (d, gv) in dx.iter_mut().zip(g) {
                    *d += gv * factor;
                }
            }
            Op::LayerNorm { x, gamma, beta, xhat, rstd } => {
                let n = node.shape[1];
                let gm = self.value(*gamma);
                {
                    let dg = acc!(*gamma);
                    for (gr, hr) in g.chunks(n).zip(xhat.chunks(n)) {
                        for c in 0..n {
                            dg[c] += gr[c] * hr[c];
                        }
                    }
                }
                {
                    let db = acc!(*beta);
                    for gr in g.chunks(n) {
                        add_into(db, gr);
                    }
                }
                let dx = acc!(*x);
                for (r, (gr, hr)) in g.chunks(n).zip(xhat.chunks(n)).enumerate() {
                    let mut mean_d = 0.0;
                    let mut mean_dh = 0.0;
                    for c in 0..n {
                        let d = gr[c] * gm[c];
                        mean_d += d;
                        mean_dh += d * hr[c];
                    }
                    mean_d /= n as f64;
                    mean_dh /= n as f64;
                    for c in 0..n {
                        let d = gr[c] * gm[c];
                        dx[r * n + c] += rstd[r] * (d - mean_d - hr[c] * mean_dh);
                    }
                }
            }
            Op::Gelu(x) => {
                let xv = self.value(*x);
                let dx = acc!(*x);
                for i in 0..g.len() {
                    let v = xv[i];
                    let t = (GELU_C * (v + GELU_A * v * v * v)).tanh();
                    let dt = (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * v * v);
                    dx[i] += g[i] * (0.5 * (1.0 + t) + 0.5 * v * dt);
                }
            }
            Op::Softmax(x) => {
                let n = node.shape[1];
                let dx = acc!(*x);
                for (r, (gr, yr)) in g.chunks(n).zip(node.value.chunks(n)).enumerate() {
                    let dot: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                    for c in 0..n {
                        dx[r * n + c] += yr[c] * (gr[c] - dot);
                    }
                }
            }
            Op::LogSoftmax { x, mask } => {
                let n = node.shape[1];
                let allowed = |i: usize| mask.as_ref().is_none_or(|mk| mk[i]);
                let dx = acc!(*x);
                for r in 0..node.shape[0] {
                    let base = r * n;
                    let gsum: f64 = (0..n).filter(|&c| allowed(base + c)).map(|c| g[base + c]).sum();
                    for c in (0..n).filter(|&c| allowed(base + c)) {
                        let p = node.value[base + c].exp();
                        dx[base + c] += g[base + c] - p * gsum;
                    }
                }
            }
            Op::Log(x) => {
                let xv = self.value(*x);
                let dx = acc!(*x);
                for i in 0..g.len() {
                    dx[i] += g[i] / xv[i];
                }
            }
            Op::Gather { table, ids } => {
                let h = node.shape[1];
                let dt = acc!(*table);
                for (r, &id) in ids.iter().enumerate() {
                    add_into(&mut dt[id * h..(id + 1) * h], &g[r * h..(r + 1) * h]);
                }
            }
            Op::Dropout { x, mask } => {
                let dx = acc!(*x);
                for i in 0..g.len() {
                    dx[i] += g[i] * mask[i];
                }
            }
            Op::Concat(parts) => {
                let mut start = 0;
                for &p in parts {
                    let len = self.nodes[p.0].value.len();
                    add_into(acc!(p), &g[start..start + len]);
                    start += len;
                }
            }
            Op::SelectRows { x, rows } => {
                let n = node.shape[1];
                let dx = acc!(*x);
                for (i, &r) in rows.iter().enumerate() {
                    add_into(&mut dx[r * n..(r + 1) * n], &g[i * n..(i + 1) * n]);
                }
            }
            Op::Sum(x) => {
                for d in acc!(*x).iter_mut() {
                    *d += g[0];
                }
            }
            Op::Mean(x) => {
                let dx = acc!(*x);
                let share = g[0] / dx.len().max(1) as f64;
                for d in dx.iter_mut() {
                    *d += share;
                }
            }
            Op::L2Normalize { x, norms } => {
                let n = node.shape[1];
                let dx = acc!(*x);
                for (r, (gr, yr)) in g.chunks(n).zip(node.value.chunks(n)).enumerate() {
                    let dot: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                    for c in 0..n {
                        dx[r * n + c] += (gr[c] - yr[c] * dot) / norms[r];
                    }
                }
            }
            Op::WeightedSum { x, weights } => {
                let dx = acc!(*x);
                for (d, w) in dx.iter_mut().zip(weights) {
                    *d += g[0] * w;
                }
            }
            Op::Pick { x, cols } => {
                let n = self.nodes[x.0].shape[1];
                let dx = acc!(*x);
                for (r, &c) in cols.iter().enumerate() {
                    dx[r * n + c] += g[r];
                }
            }
            Op::Attention(cache) => self.attention_backward(cache, g, grads),
        }
    }

    fn attention_backward(&self, cache: &AttentionCache, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let h = self.nodes[cache.q.0].shape[1];
        let dh = h / cache.heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let (qv, kv, vv) = (self.value(cache.q), self.value(cache.k), self.value(cache.v));
        let total = qv.len();
        let mut dq = vec![0.0; total];
        let mut dk = vec![0.0; total];
        let mut dv = vec![0.0; total];
        for (b, &len) in cache.lens.iter().enumerate() {
            for head in 0..cache.heads {
                let p = &cache.probs[b * cache.heads + head];
                let off = b * cache.seq * h + head * dh;
                let strided = |data| MatRef { data, offset: off, row_stride: h, col_stride: 1 };
                let strided_t = |data| MatRef { data, offset: off, row_stride: 1, col_stride: h };
                // dV += Pᵀ·dO
                gemm_strided(len, len, dh, MatRef::dense(p, len, true), strided(g), 1.0, &mut dv, off, h);
                // dP = dO·Vᵀ
                let mut ds = vec![0.0; len * len];
                gemm_strided(len, dh, len, strided(g), strided_t(vv), 0.0, &mut ds, 0, len);
                for (dr, pr) in ds.chunks_mut(len).zip(p.chunks(len)) {
                    let dot: f64 = dr.iter().zip(pr).map(|(a, b)| a * b).sum();
                    for (d, pv) in dr.iter_mut().zip(pr) {
                        *d = pv * (*d - dot) * scale;
                    }
                }
                // dQ += dS·K, dK += dSᵀ·Q
                gemm_strided(len, len, dh, MatRef::dense(&ds, len, false), strided(kv), 1.0, &mut dq, off, h);
                gemm_strided(len, len, dh, MatRef::dense(&ds, len, true), strided(qv), 1.0, &mut dk, off, h);
            }
        }
        for (var, delta) in [(cache.q, dq), (cache.k, dk), (cache.v, dv)] {
            add_into(grad_slot(grads, &self.nodes, var), &delta);
        }
    }
}
