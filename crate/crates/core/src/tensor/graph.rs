//! Tape-recorded operations on tensors and the reverse sweep over them.
//!
//! A [`Graph`] is a Wengert list: every op appends a node whose inputs are
//! earlier nodes, so node ids are already a topological order and the
//! backward pass is a single reverse scan. Ops are restricted to rank <= 2
//! operands, and broadcasting is limited to a scalar or a trailing-suffix
//! operand.

use std::cell::RefCell;

use super::{ParamId, ParamStore, Result, Tensor, TensorError};

const LAYER_NORM_EPS: f64 = 1e-5;
const GELU_K: f64 = 1.702;

#[derive(Debug)]
enum Op {
    Constant,
    Variable,
    Param(ParamId),
    StopGrad,
    MatMul(usize, usize),
    Transpose(usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    Gelu(usize),
    Sigmoid(usize),
    Abs(usize),
    LayerNorm { input: usize, inv_std: Vec<f64> },
    Softmax(usize),
    Attention(Box<AttentionSaved>),
    SliceCols { input: usize, start: usize },
    ConcatCols(Vec<usize>),
    ConcatRows(Vec<usize>),
    GatherRows { input: usize, index: Vec<usize> },
    Reshape(usize),
    Sum(usize),
    Mean(usize),
    MaxRows { input: usize, argmax: Vec<usize> },
    BceWithLogits { logits: usize, targets: Vec<f64> },
}

#[derive(Debug)]
struct AttentionSaved {
    q: usize,
    k: usize,
    v: usize,
    heads: usize,
    blocks: Option<(usize, usize)>,
    /// Row-major `[heads, nq, window]` probabilities over each query's keys.
    probs: Vec<f64>,
}

/// Key range visible to query `i` and the window width.
fn key_window(i: usize, nk: usize, blocks: Option<(usize, usize)>) -> (usize, usize) {
    match blocks {
        Some((bq, bk)) => ((i / bq) * bk, (i / bq + 1) * bk),
        None => (0, nk),
    }
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// The tape. Interior mutability lets [`Var`] handles stay `Copy`.
#[derive(Default)]
pub struct Graph {
    nodes: RefCell<Vec<Node>>,
}

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy)]
pub struct Var<'g> {
    graph: &'g Graph,
    id: usize,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var#{}{:?}", self.id, self.shape())
    }
}

/// Result of a backward sweep.
pub struct Gradients {
    by_node: Vec<Option<Tensor>>,
    params: Vec<(ParamId, usize)>,
}

impl Gradients {
    /// Gradient of the root with respect to `var`, if any flowed there.
    pub fn wrt(&self, var: Var<'_>) -> Option<&Tensor> {
        self.by_node.get(var.id).and_then(Option::as_ref)
    }

    /// Gradient per parameter slot of a store of length `len`; parameters that
    /// were used several times have their contributions summed.
    pub fn for_params(&self, len: usize) -> Vec<Option<Tensor>> {
        let mut out: Vec<Option<Tensor>> = vec![None; len];
        for &(pid, node) in &self.params {
            let Some(g) = self.by_node[node].as_ref() else {
                continue;
            };
            match &mut out[pid.0] {
                Some(acc) => {
                    for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
                        *a += b;
                    }
                }
                slot @ None => *slot = Some(g.clone()),
            }
        }
        out
    }
}

fn dims(t: &Tensor, op: &'static str) -> Result<(usize, usize)> {
    t.dims2().ok_or_else(|| TensorError::Dim {
        op,
        lhs: t.shape().to_vec(),
        rhs: vec![],
    })
}

fn broadcast_shape(a: &[usize], b: &[usize]) -> Option<Vec<usize>> {
    let na: usize = a.iter().product();
    let nb: usize = b.iter().product();
    if a == b || nb == 1 {
        Some(a.to_vec())
    } else if na == 1 || (b.len() >= a.len() && b.ends_with(a)) {
        Some(b.to_vec())
    } else if a.ends_with(b) {
        Some(a.to_vec())
    } else {
        None
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn matmul_into(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let out_row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == 0.0 {
                continue;
            }
            let b_row = &b[p * n..(p + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += aip * bv;
            }
        }
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Tensor, op: Op, requires_grad: bool, name: &'static str) -> Result<Var<'_>> {
        if !value.is_finite() {
            return Err(TensorError::NonFinite { op: name });
        }
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var {
            graph: self,
            id: nodes.len() - 1,
        })
    }

    /// A value that never receives gradient.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Constant, false, "constant")
            .expect("Tensor values are finite by construction")
    }

    /// A free leaf that receives gradient (used by gradient checks).
    pub fn variable(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Variable, true, "variable")
            .expect("Tensor values are finite by construction")
    }

    /// A trainable parameter leaf bound to a store slot.
    pub fn param(&self, store: &ParamStore, id: ParamId) -> Var<'_> {
        self.push(store.get(id).clone(), Op::Param(id), true, "param")
            .expect("Tensor values are finite by construction")
    }

    pub fn value(&self, v: Var<'_>) -> Tensor {
        self.nodes.borrow()[v.id].value.clone()
    }

    fn unary(
        &self,
        a: Var<'_>,
        name: &'static str,
        f: impl FnOnce(&Tensor) -> Result<(Tensor, Op)>,
    ) -> Result<Var<'_>> {
        let (value, op, rg) = {
            let nodes = self.nodes.borrow();
            let na = &nodes[a.id];
            let (value, op) = f(&na.value)?;
            (value, op, na.requires_grad)
        };
        self.push(value, op, rg, name)
    }

    fn binary(
        &self,
        a: Var<'_>,
        b: Var<'_>,
        name: &'static str,
        f: impl FnOnce(&Tensor, &Tensor) -> Result<(Tensor, Op)>,
    ) -> Result<Var<'_>> {
        let (value, op, rg) = {
            let nodes = self.nodes.borrow();
            let (na, nb) = (&nodes[a.id], &nodes[b.id]);
            let (value, op) = f(&na.value, &nb.value)?;
            (value, op, na.requires_grad || nb.requires_grad)
        };
        self.push(value, op, rg, name)
    }

    fn elementwise(
        &self,
        a: Var<'_>,
        b: Var<'_>,
        name: &'static str,
        make: fn(usize, usize) -> Op,
        f: fn(f64, f64) -> f64,
    ) -> Result<Var<'_>> {
        self.binary(a, b, name, |ta, tb| {
            let shape = broadcast_shape(ta.shape(), tb.shape()).ok_or_else(|| TensorError::Dim {
                op: name,
                lhs: ta.shape().to_vec(),
                rhs: tb.shape().to_vec(),
            })?;
            let n: usize = shape.iter().product();
            let (da, db) = (ta.data(), tb.data());
            let (na, nb) = (da.len(), db.len());
            let data = (0..n).map(|i| f(da[i % na], db[i % nb])).collect();
            Ok((Tensor::from_parts(shape, data), make(a.id, b.id)))
        })
    }

    /// Multi-head scaled dot-product attention. `q` is `[nq, d]`, `k` and `v`
    /// are `[nk, d]`. With `segment = Some(s)` queries and keys are split into
    /// consecutive blocks of `s` rows and attend only within their block.
    pub fn attention<'g>(
        &'g self,
        q: Var<'g>,
        k: Var<'g>,
        v: Var<'g>,
        heads: usize,
        segment: Option<usize>,
    ) -> Result<Var<'g>> {
        self.attention_blocked(q, k, v, heads, segment.map(|s| (s, s)))
    }

    /// Attention restricted to a block diagonal: query block `b` (rows
    /// `b*bq..(b+1)*bq`) sees only key block `b` (rows `b*bk..(b+1)*bk`).
    pub fn attention_blocked<'g>(
        &'g self,
        q: Var<'g>,
        k: Var<'g>,
        v: Var<'g>,
        heads: usize,
        blocks: Option<(usize, usize)>,
    ) -> Result<Var<'g>> {
        let (value, saved, rg) = {
            let nodes = self.nodes.borrow();
            let (tq, tk, tv) = (&nodes[q.id].value, &nodes[k.id].value, &nodes[v.id].value);
            let (nq, d) = dims(tq, "attention")?;
            let (nk, dk) = dims(tk, "attention")?;
            let (nv, dv) = dims(tv, "attention")?;
            if d != dk || d != dv || nk != nv {
                return Err(TensorError::Dim {
                    op: "attention",
                    lhs: tq.shape().to_vec(),
                    rhs: tk.shape().to_vec(),
                });
            }
            if heads == 0 || d % heads != 0 {
                return Err(TensorError::Contract(format!(
                    "attention: {heads} heads do not divide model dim {d}"
                )));
            }
            if let Some((bq, bk)) = blocks {
                if bq == 0 || bk == 0 || nq % bq != 0 || nk % bk != 0 || nq / bq != nk / bk {
                    return Err(TensorError::Contract(format!(
                        "attention: blocks ({bq}, {bk}) incompatible with {nq} queries / {nk} keys"
                    )));
                }
            }
            let w = blocks.map_or(nk, |b| b.1);
            let dh = d / heads;
            let scale = 1.0 / (dh as f64).sqrt();
            let (qd, kd, vd) = (tq.data(), tk.data(), tv.data());
            let mut probs = vec![0.0; heads * nq * w];
            let mut out = vec![0.0; nq * d];
            for h in 0..heads {
                let c0 = h * dh;
                for i in 0..nq {
                    let (j0, j1) = key_window(i, nk, blocks);
                    let prow = &mut probs[(h * nq + i) * w..(h * nq + i + 1) * w];
                    let qrow = &qd[i * d + c0..i * d + c0 + dh];
                    let mut max = f64::NEG_INFINITY;
                    for (p, j) in prow.iter_mut().zip(j0..j1) {
                        let krow = &kd[j * d + c0..j * d + c0 + dh];
                        let s: f64 = qrow.iter().zip(krow).map(|(a, b)| a * b).sum::<f64>() * scale;
                        *p = s;
                        max = max.max(s);
                    }
                    let mut z = 0.0;
                    for p in prow.iter_mut() {
                        *p = (*p - max).exp();
                        z += *p;
                    }
                    let orow = &mut out[i * d + c0..i * d + c0 + dh];
                    for (p, j) in prow.iter_mut().zip(j0..j1) {
                        *p /= z;
                        let pj = *p;
                        let vrow = &vd[j * d + c0..j * d + c0 + dh];
                        for (o, &vv) in orow.iter_mut().zip(vrow) {
                            *o += pj * vv;
                        }
                    }
                }
            }
            let saved = AttentionSaved {
                q: q.id,
                k: k.id,
                v: v.id,
                heads,
                blocks,
                probs,
            };
            let rg = nodes[q.id].requires_grad || nodes[k.id].requires_grad || nodes[v.id].requires_grad;
            (Tensor::from_parts(vec![nq, d], out), saved, rg)
        };
        self.push(value, Op::Attention(Box::new(saved)), rg, "attention")
    }

    fn concat(&self, parts: &[Var<'_>], rows: bool) -> Result<Var<'_>> {
        let name = if rows { "concat_rows" } else { "concat_cols" };
        let (value, rg) = {
            let nodes = self.nodes.borrow();
            let first = parts
                .first()
                .ok_or_else(|| TensorError::Contract(format!("{name} of nothing")))?;
            let (r0, c0) = dims(&nodes[first.id].value, name)?;
            let mut total = 0;
            for p in parts {
                let t = &nodes[p.id].value;
                let (r, c) = dims(t, name)?;
                if (rows && c != c0) || (!rows && r != r0) {
                    return Err(TensorError::Dim {
                        op: name,
                        lhs: nodes[first.id].value.shape().to_vec(),
                        rhs: t.shape().to_vec(),
                    });
                }
                total += if rows { r } else { c };
            }
            let value = if rows {
                let mut data = Vec::with_capacity(total * c0);
                for p in parts {
                    data.extend_from_slice(nodes[p.id].value.data());
                }
                Tensor::from_parts(vec![total, c0], data)
            } else {
                let mut data = Vec::with_capacity(r0 * total);
                for i in 0..r0 {
                    for p in parts {
                        data.extend_from_slice(nodes[p.id].value.row(i));
                    }
                }
                Tensor::from_parts(vec![r0, total], data)
            };
            (value, parts.iter().any(|p| nodes[p.id].requires_grad))
        };
        let ids = parts.iter().map(|p| p.id).collect();
        let op = if rows { Op::ConcatRows(ids) } else { Op::ConcatCols(ids) };
        self.push(value, op, rg, name)
    }

    /// Stacks rank-2 operands vertically (token axis).
    pub fn concat_rows<'g>(&'g self, parts: &[Var<'g>]) -> Result<Var<'g>> {
        self.concat(parts, true)
    }

    /// Joins rank-2 operands horizontally (feature axis).
    pub fn concat_cols<'g>(&'g self, parts: &[Var<'g>]) -> Result<Var<'g>> {
        self.concat(parts, false)
    }

    /// Mean binary cross-entropy between `logits` and fixed 0/1 `targets`,
    /// evaluated as `max(x, 0) - x*y + ln(1 + exp(-|x|))`.
    pub fn bce_with_logits<'g>(&'g self, logits: Var<'g>, targets: &Tensor) -> Result<Var<'g>> {
        self.unary(logits, "bce_with_logits", |x| {
            if x.numel() != targets.numel() {
                return Err(TensorError::Dim {
                    op: "bce_with_logits",
                    lhs: x.shape().to_vec(),
                    rhs: targets.shape().to_vec(),
                });
            }
            let n = x.numel() as f64;
            let total: f64 = x
                .data()
                .iter()
                .zip(targets.data())
                .map(|(&x, &y)| x.max(0.0) - x * y + (-x.abs()).exp().ln_1p())
                .sum();
            Ok((
                Tensor::scalar(total / n),
                Op::BceWithLogits {
                    logits: logits.id,
                    targets: targets.data().to_vec(),
                },
            ))
        })
    }

    /// Reverse sweep from a scalar root.
    pub fn backward(&self, root: Var<'_>) -> Result<Gradients> {
        let nodes = self.nodes.borrow();
        if !nodes[root.id].value.is_scalar() {
            return Err(TensorError::Contract(format!(
                "backward root must be scalar, got shape {:?}",
                nodes[root.id].value.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..nodes.len()).map(|_| None).collect();
        grads[root.id] = Some(vec![1.0]);
        for id in (0..=root.id).rev() {
            let node = &nodes[id];
            if !node.requires_grad {
                continue;
            }
            let is_leaf = matches!(node.op, Op::Variable | Op::Param(_));
            if is_leaf {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            backprop(&nodes, &mut grads, id, &g);
        }
        let mut params = Vec::new();
        let by_node = grads
            .into_iter()
            .enumerate()
            .map(|(id, g)| {
                let node = &nodes[id];
                if let Op::Param(pid) = node.op {
                    params.push((pid, id));
                }
                match (&node.op, g) {
                    (Op::Variable | Op::Param(_), Some(g)) => Some(Tensor::from_parts(node.value.shape().to_vec(), g)),
                    _ => None,
                }
            })
            .collect();
        Ok(Gradients { by_node, params })
    }
}

fn accumulate(nodes: &[Node], grads: &mut [Option<Vec<f64>>], id: usize, f: impl FnOnce(&mut [f64])) {
    if !nodes[id].requires_grad {
        return;
    }
    let slot = grads[id].get_or_insert_with(|| vec![0.0; nodes[id].value.numel()]);
    f(slot);
}

fn backprop(nodes: &[Node], grads: &mut [Option<Vec<f64>>], id: usize, g: &[f64]) {
    let node = &nodes[id];
    let val = |i: usize| nodes[i].value.data();
    match &node.op {
        Op::Constant | Op::Variable | Op::Param(_) | Op::StopGrad => {}
        Op::MatMul(a, b) => {
            let (m, k) = nodes[*a].value.dims2().unwrap();
            let (_, n) = nodes[*b].value.dims2().unwrap();
            let (av, bv) = (val(*a), val(*b));
            accumulate(nodes, grads, *a, |da| {
                let mut bt = vec![0.0; n * k];
                for p in 0..k {
                    for j in 0..n {
                        bt[j * k + p] = bv[p * n + j];
                    }
                }
                matmul_into(g, &bt, da, m, n, k);
            });
            accumulate(nodes, grads, *b, |db| {
                for i in 0..m {
                    let grow = &g[i * n..(i + 1) * n];
                    for p in 0..k {
                        let aip = av[i * k + p];
                        if aip == 0.0 {
                            continue;
                        }
                        let drow = &mut db[p * n..(p + 1) * n];
                        for (d, &gv) in drow.iter_mut().zip(grow) {
                            *d += aip * gv;
                        }
                    }
                }
            });
        }
        Op::Transpose(a) => {
            let (m, n) = nodes[*a].value.dims2().unwrap();
            accumulate(nodes, grads, *a, |da| {
                for i in 0..m {
                    for j in 0..n {
                        da[i * n + j] += g[j * m + i];
                    }
                }
            });
        }
        Op::Add(a, b) | Op::Sub(a, b) => {
            let sign = if matches!(node.op, Op::Sub(..)) { -1.0 } else { 1.0 };
            let (na, nb) = (nodes[*a].value.numel(), nodes[*b].value.numel());
            accumulate(nodes, grads, *a, |da| {
                for (i, gv) in g.iter().enumerate() {
                    da[i % na] += gv;
                }
            });
            accumulate(nodes, grads, *b, |db| {
                for (i, gv) in g.iter().enumerate() {
                    db[i % nb] += sign * gv;
                }
            });
        }
        Op::Mul(a, b) => {
            let (av, bv) = (val(*a), val(*b));
            let (na, nb) = (av.len(), bv.len());
            accumulate(nodes, grads, *a, |da| {
                for (i, gv) in g.iter().enumerate() {
                    da[i % na] += gv * bv[i % nb];
                }
            });
            accumulate(nodes, grads, *b, |db| {
                for (i, gv) in g.iter().enumerate() {
                    db[i % nb] += gv * av[i % na];
                }
            });
        }
        Op::Scale(a, c) => accumulate(nodes, grads, *a, |da| {
            for (d, gv) in da.iter_mut().zip(g) {
                *d += c * gv;
            }
        }),
        Op::Gelu(a) => {
            let x = val(*a);
            accumulate(nodes, grads, *a, |da| {
                for ((d, gv), &xv) in da.iter_mut().zip(g).zip(x) {
                    let s = sigmoid(GELU_K * xv);
                    *d += gv * (s + GELU_K * xv * s * (1.0 - s));
                }
            });
        }
        Op::Sigmoid(a) => {
            let y = node.value.data();
            accumulate(nodes, grads, *a, |da| {
                for ((d, gv), &yv) in da.iter_mut().zip(g).zip(y) {
                    *d += gv * yv * (1.0 - yv);
                }
            });
        }
        Op::Abs(a) => {
            let x = val(*a);
            accumulate(nodes, grads, *a, |da| {
                for ((d, gv), &xv) in da.iter_mut().zip(g).zip(x) {
                    if xv > 0.0 {
                        *d += gv;
                    } else if xv < 0.0 {
                        *d -= gv;
                    }
                }
            });
        }
        Op::LayerNorm { input, inv_std } => {
            let (rows, n) = node.value.dims2().unwrap();
            let y = node.value.data();
            accumulate(nodes, grads, *input, |da| {
                for r in 0..rows {
                    let gr = &g[r * n..(r + 1) * n];
                    let yr = &y[r * n..(r + 1) * n];
                    let mean_g = gr.iter().sum::<f64>() / n as f64;
                    let mean_gy = gr.iter().zip(yr).map(|(a, b)| a * b).sum::<f64>() / n as f64;
                    for c in 0..n {
                        da[r * n + c] += inv_std[r] * (gr[c] - mean_g - yr[c] * mean_gy);
                    }
                }
            });
        }
        Op::Softmax(a) => {
            let (rows, n) = node.value.dims2().unwrap();
            let y = node.value.data();
            accumulate(nodes, grads, *a, |da| {
                for r in 0..rows {
                    let gr = &g[r * n..(r + 1) * n];
                    let yr = &y[r * n..(r + 1) * n];
                    let dot: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                    for c in 0..n {
                        da[r * n + c] += yr[c] * (gr[c] - dot);
                    }
                }
            });
        }
        Op::Attention(s) => backprop_attention(nodes, grads, s, g),
        Op::SliceCols { input, start } => {
            let (rows, len) = node.value.dims2().unwrap();
            let (_, cols) = nodes[*input].value.dims2().unwrap();
            accumulate(nodes, grads, *input, |da| {
                for r in 0..rows {
                    for c in 0..len {
                        da[r * cols + start + c] += g[r * len + c];
                    }
                }
            });
        }
        Op::ConcatRows(parts) => {
            let mut offset = 0;
            for &p in parts {
                let n = nodes[p].value.numel();
                accumulate(nodes, grads, p, |dp| {
                    for (d, gv) in dp.iter_mut().zip(&g[offset..offset + n]) {
                        *d += gv;
                    }
                });
                offset += n;
            }
        }
        Op::ConcatCols(parts) => {
            let (rows, total) = node.value.dims2().unwrap();
            let mut offset = 0;
            for &p in parts {
                let (_, c) = nodes[p].value.dims2().unwrap();
                accumulate(nodes, grads, p, |dp| {
                    for r in 0..rows {
                        for j in 0..c {
                            dp[r * c + j] += g[r * total + offset + j];
                        }
                    }
                });
                offset += c;
            }
        }
        Op::GatherRows { input, index } => {
            let (_, cols) = nodes[*input].value.dims2().unwrap();
            accumulate(nodes, grads, *input, |da| {
                for (r, &src) in index.iter().enumerate() {
                    for c in 0..cols {
                        da[src * cols + c] += g[r * cols + c];
                    }
                }
            });
        }
        Op::Reshape(a) => accumulate(nodes, grads, *a, |da| {
            for (d, gv) in da.iter_mut().zip(g) {
                *d += gv;
            }
        }),
        Op::Sum(a) => accumulate(nodes, grads, *a, |da| {
            for d in da.iter_mut() {
                *d += g[0];
            }
        }),
        Op::Mean(a) => {
            let n = nodes[*a].value.numel() as f64;
            accumulate(nodes, grads, *a, |da| {
                for d in da.iter_mut() {
                    *d += g[0] / n;
                }
            });
        }
        Op::MaxRows { input, argmax } => {
            let (_, cols) = nodes[*input].value.dims2().unwrap();
            accumulate(nodes, grads, *input, |da| {
                for (c, &r) in argmax.iter().enumerate() {
                    da[r * cols + c] += g[c];
                }
            });
        }
        Op::BceWithLogits { logits, targets } => {
            let x = val(*logits);
            let n = x.len() as f64;
            accumulate(nodes, grads, *logits, |da| {
                for ((d, &xv), &y) in da.iter_mut().zip(x).zip(targets) {
                    *d += g[0] * (sigmoid(xv) - y) / n;
                }
            });
        }
    }
}

fn backprop_attention(nodes: &[Node], grads: &mut [Option<Vec<f64>>], s: &AttentionSaved, g: &[f64]) {
    let (nq, d) = nodes[s.q].value.dims2().unwrap();
    let (nk, _) = nodes[s.k].value.dims2().unwrap();
    let w = s.blocks.map_or(nk, |b| b.1);
    let dh = d / s.heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let (qd, kd, vd) = (
        nodes[s.q].value.data(),
        nodes[s.k].value.data(),
        nodes[s.v].value.data(),
    );
    let mut dq = vec![0.0; nq * d];
    let mut dk = vec![0.0; nk * d];
    let mut dv = vec![0.0; nk * d];
    let mut dp = vec![0.0; w];
    for h in 0..s.heads {
        let c0 = h * dh;
        for i in 0..nq {
            let (j0, j1) = key_window(i, nk, s.blocks);
            let prow = &s.probs[(h * nq + i) * w..(h * nq + i + 1) * w];
            let grow = &g[i * d + c0..i * d + c0 + dh];
            let mut dot = 0.0;
            for (jj, j) in (j0..j1).enumerate() {
                let vrow = &vd[j * d + c0..j * d + c0 + dh];
                dp[jj] = grow.iter().zip(vrow).map(|(a, b)| a * b).sum();
                dot += prow[jj] * dp[jj];
                let dvrow = &mut dv[j * d + c0..j * d + c0 + dh];
                for (o, gv) in dvrow.iter_mut().zip(grow) {
                    *o += prow[jj] * gv;
                }
            }
            let qrow = &qd[i * d + c0..i * d + c0 + dh];
            for (jj, j) in (j0..j1).enumerate() {
                let ds = prow[jj] * (dp[jj] - dot) * scale;
                if ds == 0.0 {
                    continue;
                }
                let krow = &kd[j * d + c0..j * d + c0 + dh];
                let dqrow = &mut dq[i * d + c0..i * d + c0 + dh];
                for (o, kv) in dqrow.iter_mut().zip(krow) {
                    *o += ds * kv;
                }
                let dkrow = &mut dk[j * d + c0..j * d + c0 + dh];
                for (o, qv) in dkrow.iter_mut().zip(qrow) {
                    *o += ds * qv;
                }
            }
        }
    }
    for (id, src) in [(s.q, dq), (s.k, dk), (s.v, dv)] {
        accumulate(nodes, grads, id, |da| {
            for (a, b) in da.iter_mut().zip(&src) {
                *a += b;
            }
        });
    }
}

impl<'g> Var<'g> {
    pub fn graph(&self) -> &'g Graph {
        self.graph
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn value(&self) -> Tensor {
        self.graph.value(*self)
    }

    /// Value of a single-element node.
    pub fn scalar(&self) -> f64 {
        self.graph.nodes.borrow()[self.id].value.data()[0]
    }

    pub fn shape(&self) -> Vec<usize> {
        self.graph.nodes.borrow()[self.id].value.shape().to_vec()
    }

    pub fn requires_grad(&self) -> bool {
        self.graph.nodes.borrow()[self.id].requires_grad
    }

    /// True when this node is a stop-gradient boundary.
    pub fn is_stop_grad(&self) -> bool {
        matches!(self.graph.nodes.borrow()[self.id].op, Op::StopGrad)
    }

    /// Copies the value into a gradient-opaque node.
    pub fn stop_grad(self) -> Var<'g> {
        self.graph
            .push(self.value(), Op::StopGrad, false, "stop_grad")
            .expect("value already finite")
    }

    pub fn matmul(self, rhs: Var<'g>) -> Result<Var<'g>> {
        let a_id = self.id;
        let b_id = rhs.id;
        self.graph.binary(self, rhs, "matmul", |a, b| {
            let (m, k) = dims(a, "matmul")?;
            let (k2, n) = dims(b, "matmul")?;
            if k != k2 || a.shape().len() != 2 || b.shape().len() != 2 {
                return Err(TensorError::Dim {
                    op: "matmul",
                    lhs: a.shape().to_vec(),
                    rhs: b.shape().to_vec(),
                });
            }
            let mut out = vec![0.0; m * n];
            matmul_into(a.data(), b.data(), &mut out, m, k, n);
            Ok((Tensor::from_parts(vec![m, n], out), Op::MatMul(a_id, b_id)))
        })
    }

    pub fn transpose(self) -> Result<Var<'g>> {
        let id = self.id;
        self.graph.unary(self, "transpose", |a| {
            let (m, n) = dims(a, "transpose")?;
            let d = a.data();
            let mut out = vec![0.0; m * n];
            for i in 0..m {
                for j in 0..n {
                    out[j * m + i] = d[i * n + j];
                }
            }
            Ok((Tensor::from_parts(vec![n, m], out), Op::Transpose(id)))
        })
    }

    // Fallible, so not the operator traits.
    #[allow(clippy::should_implement_trait)]
    pub fn add(self, rhs: Var<'g>) -> Result<Var<'g>> {
        self.graph.elementwise(self, rhs, "add", Op::Add, |a, b| a + b)
    }

    #[allow(clippy::should_implement_trait)]
    pub fn sub(self, rhs: Var<'g>) -> Result<Var<'g>> {
        self.graph.elementwise(self, rhs, "sub", Op::Sub, |a, b| a - b)
    }

    #[allow(clippy::should_implement_trait)]
    pub fn mul(self, rhs: Var<'g>) -> Result<Var<'g>> {
        self.graph.elementwise(self, rhs, "mul", Op::Mul, |a, b| a * b)
    }

    pub fn scale(self, c: f64) -> Result<Var<'g>> {
        let id = self.id;
        self.graph.unary(self, "scale", |a| {
            let data = a.data().iter().map(|v| v * c).collect();
            Ok((Tensor::from_parts(a.shape().to_vec(), data), Op::Scale(id, c)))
        })
    }

    fn map(self, name: &'static str, op: Op, f: impl Fn(f64) -> f64) -> Result<Var<'g>> {
        self.graph.unary(self, name, |a| {
            let data = a.data().iter().map(|&v| f(v)).collect();
            Ok((Tensor::from_parts(a.shape().to_vec(), data), op))
        })
    }

    /// Smooth GELU approximation `x * sigmoid(1.702 x)`.
    pub fn gelu(self) -> Result<Var<'g>> {
        self.map("gelu", Op::Gelu(self.id), |x| x * sigmoid(GELU_K * x))
    }

    pub fn sigmoid(self) -> Result<Var<'g>> {
        self.map("sigmoid", Op::Sigmoid(self.id), sigmoid)
    }

    pub fn abs(self) -> Result<Var<'g>> {
        self.map("abs", Op::Abs(self.id), f64::abs)
    }

    /// Normalizes each row to zero mean and unit variance (no affine part).
    pub fn layer_norm(self) -> Result<Var<'g>> {
        let id = self.id;
        self.graph.unary(self, "layer_norm", |a| {
            let (rows, n) = dims(a, "layer_norm")?;
            let d = a.data();
            let mut out = vec![0.0; rows * n];
            let mut inv_std = Vec::with_capacity(rows);
            for r in 0..rows {
                let row = &d[r * n..(r + 1) * n];
                let mean = row.iter().sum::<f64>() / n as f64;
                let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
                let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
                for c in 0..n {
                    out[r * n + c] = (row[c] - mean) * inv;
                }
                inv_std.push(inv);
            }
            let shape = a.shape().to_vec();
            Ok((Tensor::from_parts(shape, out), Op::LayerNorm { input: id, inv_std }))
        })
    }

    /// Row-wise softmax over the last axis.
    pub fn softmax(self) -> Result<Var<'g>> {
        let id = self.id;
        self.graph.unary(self, "softmax", |a| {
            let (rows, n) = dims(a, "softmax")?;
            let d = a.data();
            let mut out = vec![0.0; rows * n];
            for r in 0..rows {
                let row = &d[r * n..(r + 1) * n];
                let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let mut z = 0.0;
                for c in 0..n {
                    let e = (row[c] - max).exp();
                    out[r * n + c] = e;
                    z += e;
                }
                for v in &mut out[r * n..(r + 1) * n] {
                    *v /= z;
                }
            }
            Ok((Tensor::from_parts(a.shape().to_vec(), out), Op::Softmax(id)))
        })
    }

    pub fn slice_cols(self, start: usize, len: usize) -> Result<Var<'g>> {
        let id = self.id;
        self.graph.unary(self, "slice_cols", |a| {
            let (rows, cols) = dims(a, "slice_cols")?;
            if start + len > cols {
                return Err(TensorError::Dim {
                    op: "slice_cols",
                    lhs: a.shape().to_vec(),
                    rhs: vec![start, len],
                });
            }
            let mut out = Vec::with_capacity(rows * len);
            for r in 0..rows {
                out.extend_from_slice(&a.row(r)[start..start + len]);
            }
            Ok((
                Tensor::from_parts(vec![rows, len], out),
                Op::SliceCols { input: id, start },
            ))
        })
    }

    /// Row `r` of the output is row `index[r]` of the input.
    pub fn gather_rows(self, index: &[usize]) -> Result<Var<'g>> {
        let id = self.id;
        self.graph.unary(self, "gather_rows", |a| {
            let (rows, cols) = dims(a, "gather_rows")?;
            if let Some(&bad) = index.iter().find(|&&i| i >= rows) {
                return Err(TensorError::Dim {
                    op: "gather_rows",
                    lhs: a.shape().to_vec(),
                    rhs: vec![bad],
                });
            }
            let mut out = Vec::with_capacity(index.len() * cols);
            for &i in index {
                out.extend_from_slice(a.row(i));
            }
            Ok((
                Tensor::from_parts(vec![index.len(), cols], out),
                Op::GatherRows {
                    input: id,
                    index: index.to_vec(),
                },
            ))
        })
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Var<'g>> {
        let id = self.id;
        self.graph
            .unary(self, "reshape", |a| Ok((a.reshape(shape)?, Op::Reshape(id))))
    }

    pub fn sum(self) -> Result<Var<'g>> {
        let id = self.id;
        self.graph.unary(self, "sum", |a| {
            Ok((Tensor::scalar(a.data().iter().sum()), Op::Sum(id)))
        })
    }

    pub fn mean(self) -> Result<Var<'g>> {
        let id = self.id;
        self.graph.unary(self, "mean", |a| {
            let n = a.numel() as f64;
            Ok((Tensor::scalar(a.data().iter().sum::<f64>() / n), Op::Mean(id)))
        })
    }

    /// Column-wise maximum over rows: `[m, n] -> [1, n]`.
    pub fn max_rows(self) -> Result<Var<'g>> {
        let id = self.id;
        self.graph.unary(self, "max_rows", |a| {
            let (rows, cols) = dims(a, "max_rows")?;
            let mut out = vec![f64::NEG_INFINITY; cols];
            let mut argmax = vec![0; cols];
            for r in 0..rows {
                for (c, &v) in a.row(r).iter().enumerate() {
                    if v > out[c] {
                        out[c] = v;
                        argmax[c] = r;
                    }
                }
            }
            Ok((
                Tensor::from_parts(vec![1, cols], out),
                Op::MaxRows { input: id, argmax },
            ))
        })
    }

    /// Affine map `self · w + b` with `b` broadcast over rows.
    pub fn linear(self, w: Var<'g>, b: Var<'g>) -> Result<Var<'g>> {
        self.matmul(w)?.add(b)
    }
}
