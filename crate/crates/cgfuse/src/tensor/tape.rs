//! Reverse-mode autodiff over a flat op tape.
//!
//! A [`Tape`] owns every intermediate [`Tensor`] of one forward pass. Ops
//! append nodes and return [`NodeId`] handles; [`Tape::backward`] walks the
//! nodes in reverse creation order (which is a topological order, since ops
//! can only reference earlier nodes) and accumulates gradients. Tapes are
//! built per step and dropped afterwards; long-lived parameters live outside
//! and enter a tape through [`Tape::param`].

use std::collections::BTreeMap;

use super::kernels;
use super::{Tensor, TensorError};

pub type Result<T> = std::result::Result<T, TensorError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct NodeId(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Matmul { a: NodeId, b: NodeId },
    /// Same-shape add, or broadcast of a rank-1 bias over rows of `a`.
    Add { a: NodeId, b: NodeId, bias: bool },
    MulScalar { a: NodeId, c: f32 },
    Concat { a: NodeId, b: NodeId, axis: usize },
    Slice { a: NodeId, axis: usize, start: usize, end: usize },
    EmbeddingLookup { table: NodeId, ids: Vec<usize> },
    ScatterAddRows { base: NodeId, rows: NodeId, ids: Vec<usize> },
    Relu { a: NodeId },
    Gelu { a: NodeId },
    Softmax { a: NodeId, axis: usize },
    LayerNorm { x: NodeId, gamma: NodeId, beta: NodeId, xhat: Tensor, inv_std: Vec<f32> },
    CrossEntropy { logits: NodeId, probs: Tensor, targets: Vec<usize>, kept: usize },
    Mean { a: NodeId },
    Sum { a: NodeId },
    Transpose { a: NodeId },
    /// Row `i` scaled by the constant `weights[i]`; not differentiable in the
    /// weights.
    RowScale { a: NodeId, weights: Vec<f32> },
    /// Elementwise product with a constant mask (dropout, zeroing).
    MulMask { a: NodeId, mask: Tensor },
}

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: Vec<NodeId>,
}

fn check_finite(op: &'static str, t: &Tensor) {
    debug_assert!(
        t.data().iter().all(|v| v.is_finite()),
        "{op} produced a non-finite value"
    );
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        self.nodes[id.0].value.shape()
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> NodeId {
        self.nodes.push(Node { value, op, needs_grad });
        NodeId(self.nodes.len() - 1)
    }

    fn needs(&self, id: NodeId) -> bool {
        self.nodes[id.0].needs_grad
    }

    /// Constant leaf; gradients do not flow into it.
    pub fn input(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Leaf, false)
    }

    /// Trainable leaf; `backward` reports a gradient for it (zero if the loss
    /// never touches it).
    pub fn param(&mut self, value: Tensor) -> NodeId {
        let id = self.push(value, Op::Leaf, true);
        self.params.push(id);
        id
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        if ta.shape().len() != 2 || tb.shape().len() != 2 || ta.shape()[1] != tb.shape()[0] {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                lhs: ta.shape().to_vec(),
                rhs: tb.shape().to_vec(),
            });
        }
        let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
        let mut out = Tensor::zeros(vec![m, n]);
        kernels::matmul_acc(ta.data(), tb.data(), out.data_mut(), m, k, n);
        check_finite("matmul", &out);
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(out, Op::Matmul { a, b }, needs))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let bias = ta.shape().len() == 2 && tb.shape().len() == 1 && ta.shape()[1] == tb.shape()[0];
        if !bias && ta.shape() != tb.shape() {
            return Err(TensorError::ShapeMismatch {
                op: "add",
                lhs: ta.shape().to_vec(),
                rhs: tb.shape().to_vec(),
            });
        }
        let mut out = ta.clone();
        if bias {
            let n = tb.len();
            for (i, v) in out.data_mut().iter_mut().enumerate() {
                *v += tb.data()[i % n];
            }
        } else {
            for (v, w) in out.data_mut().iter_mut().zip(tb.data()) {
                *v += w;
            }
        }
        check_finite("add", &out);
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(out, Op::Add { a, b, bias }, needs))
    }

    pub fn mul_scalar(&mut self, a: NodeId, c: f32) -> NodeId {
        let mut out = self.nodes[a.0].value.clone();
        for v in out.data_mut() {
            *v *= c;
        }
        let needs = self.needs(a);
        self.push(out, Op::MulScalar { a, c }, needs)
    }

    pub fn concat(&mut self, a: NodeId, b: NodeId, axis: usize) -> Result<NodeId> {
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        let ok = ta.shape().len() == 2
            && tb.shape().len() == 2
            && axis < 2
            && ta.shape()[1 - axis] == tb.shape()[1 - axis];
        if !ok {
            return Err(TensorError::ShapeMismatch {
                op: "concat",
                lhs: ta.shape().to_vec(),
                rhs: tb.shape().to_vec(),
            });
        }
        let out = if axis == 0 {
            let mut data = ta.data().to_vec();
            data.extend_from_slice(tb.data());
            Tensor::new(vec![ta.shape()[0] + tb.shape()[0], ta.shape()[1]], data)
        } else {
            let (m, n1, n2) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
            let mut data = Vec::with_capacity(m * (n1 + n2));
            for i in 0..m {
                data.extend_from_slice(ta.row(i));
                data.extend_from_slice(tb.row(i));
            }
            Tensor::new(vec![m, n1 + n2], data)
        };
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(out, Op::Concat { a, b, axis }, needs))
    }

    pub fn slice(&mut self, a: NodeId, axis: usize, start: usize, end: usize) -> Result<NodeId> {
        let ta = &self.nodes[a.0].value;
        if ta.shape().len() != 2 || axis > 1 || start >= end || end > ta.shape()[axis] {
            return Err(TensorError::InvalidArgument {
                op: "slice",
                what: format!("range {start}..{end} on axis {axis} of {:?}", ta.shape()),
            });
        }
        let (m, n) = (ta.shape()[0], ta.shape()[1]);
        let out = if axis == 0 {
            Tensor::new(vec![end - start, n], ta.data()[start * n..end * n].to_vec())
        } else {
            let mut data = Vec::with_capacity(m * (end - start));
            for i in 0..m {
                data.extend_from_slice(&ta.row(i)[start..end]);
            }
            Tensor::new(vec![m, end - start], data)
        };
        let needs = self.needs(a);
        Ok(self.push(out, Op::Slice { a, axis, start, end }, needs))
    }

    pub fn embedding_lookup(&mut self, table: NodeId, ids: &[usize]) -> Result<NodeId> {
        let tt = &self.nodes[table.0].value;
        if tt.shape().len() != 2 {
            return Err(TensorError::InvalidArgument {
                op: "embedding_lookup",
                what: format!("table must be rank 2, got {:?}", tt.shape()),
            });
        }
        let (v, d) = (tt.shape()[0], tt.shape()[1]);
        if let Some(&bad) = ids.iter().find(|&&i| i >= v) {
            return Err(TensorError::InvalidArgument {
                op: "embedding_lookup",
                what: format!("id {bad} out of range for table with {v} rows"),
            });
        }
        let mut data = Vec::with_capacity(ids.len() * d);
        for &i in ids {
            data.extend_from_slice(tt.row(i));
        }
        let out = Tensor::new(vec![ids.len(), d], data);
        let needs = self.needs(table);
        Ok(self.push(out, Op::EmbeddingLookup { table, ids: ids.to_vec() }, needs))
    }

    /// `out = base` with `rows[i]` added into row `ids[i]`. Duplicate ids
    /// accumulate in list order.
    pub fn scatter_add_rows(&mut self, base: NodeId, ids: &[usize], rows: NodeId) -> Result<NodeId> {
        let (tb, tr) = (&self.nodes[base.0].value, &self.nodes[rows.0].value);
        let ok = tb.shape().len() == 2
            && tr.shape().len() == 2
            && tb.shape()[1] == tr.shape()[1]
            && tr.shape()[0] == ids.len()
            && ids.iter().all(|&i| i < tb.shape()[0]);
        if !ok {
            return Err(TensorError::ShapeMismatch {
                op: "scatter_add_rows",
                lhs: tb.shape().to_vec(),
                rhs: tr.shape().to_vec(),
            });
        }
        let d = tb.shape()[1];
        let mut out = tb.clone();
        for (i, &dst) in ids.iter().enumerate() {
            let src = tr.row(i);
            let drow = &mut out.data_mut()[dst * d..(dst + 1) * d];
            for (o, s) in drow.iter_mut().zip(src) {
                *o += s;
            }
        }
        let needs = self.needs(base) || self.needs(rows);
        Ok(self.push(out, Op::ScatterAddRows { base, rows, ids: ids.to_vec() }, needs))
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let mut out = self.nodes[a.0].value.clone();
        for v in out.data_mut() {
            *v = v.max(0.0);
        }
        let needs = self.needs(a);
        self.push(out, Op::Relu { a }, needs)
    }

    pub fn gelu(&mut self, a: NodeId) -> NodeId {
        let mut out = self.nodes[a.0].value.clone();
        for v in out.data_mut() {
            *v = kernels::gelu(*v);
        }
        let needs = self.needs(a);
        self.push(out, Op::Gelu { a }, needs)
    }

    /// Softmax along `axis` of a rank-2 tensor (1 = across each row).
    pub fn softmax(&mut self, a: NodeId, axis: usize) -> Result<NodeId> {
        let ta = &self.nodes[a.0].value;
        if ta.shape().len() != 2 || axis > 1 {
            return Err(TensorError::InvalidArgument {
                op: "softmax",
                what: format!("axis {axis} on shape {:?}", ta.shape()),
            });
        }
        let (m, n) = (ta.shape()[0], ta.shape()[1]);
        let mut out = ta.clone();
        if axis == 1 {
            kernels::softmax_rows(out.data_mut(), m, n);
        } else {
            let mut col = vec![0.0f32; m];
            for j in 0..n {
                for i in 0..m {
                    col[i] = out.data()[i * n + j];
                }
                kernels::softmax_rows(&mut col, 1, m);
                for i in 0..m {
                    out.data_mut()[i * n + j] = col[i];
                }
            }
        }
        check_finite("softmax", &out);
        let needs = self.needs(a);
        Ok(self.push(out, Op::Softmax { a, axis }, needs))
    }

    /// Row-wise layer norm with learned `gamma`, `beta` (rank-1, length =
    /// row width); eps `1e-5`.
    pub fn layer_norm(&mut self, x: NodeId, gamma: NodeId, beta: NodeId) -> Result<NodeId> {
        const EPS: f32 = 1e-5;
        let (tx, tg, tb) =
            (&self.nodes[x.0].value, &self.nodes[gamma.0].value, &self.nodes[beta.0].value);
        let ok = tx.shape().len() == 2
            && tg.shape() == [tx.shape()[1]]
            && tb.shape() == [tx.shape()[1]];
        if !ok {
            return Err(TensorError::ShapeMismatch {
                op: "layer_norm",
                lhs: tx.shape().to_vec(),
                rhs: tg.shape().to_vec(),
            });
        }
        let (m, n) = (tx.shape()[0], tx.shape()[1]);
        let mut xhat = Tensor::zeros(vec![m, n]);
        let mut inv_std = vec![0.0f32; m];
        let mut out = Tensor::zeros(vec![m, n]);
        for i in 0..m {
            let row = tx.row(i);
            let mean = row.iter().sum::<f32>() / n as f32;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f32>() / n as f32;
            let inv = 1.0 / (var + EPS).sqrt();
            inv_std[i] = inv;
            for j in 0..n {
                let xh = (row[j] - mean) * inv;
                xhat.data_mut()[i * n + j] = xh;
                out.data_mut()[i * n + j] = tg.data()[j] * xh + tb.data()[j];
            }
        }
        check_finite("layer_norm", &out);
        let needs = self.needs(x) || self.needs(gamma) || self.needs(beta);
        Ok(self.push(out, Op::LayerNorm { x, gamma, beta, xhat, inv_std }, needs))
    }

    /// Mean cross-entropy over rows of `logits` against `targets`; rows whose
    /// target equals `ignore_index` contribute nothing. Returns a scalar.
    pub fn cross_entropy(
        &mut self,
        logits: NodeId,
        targets: &[usize],
        ignore_index: Option<usize>,
    ) -> Result<NodeId> {
        let tl = &self.nodes[logits.0].value;
        if tl.shape().len() != 2 || tl.shape()[0] != targets.len() {
            return Err(TensorError::ShapeMismatch {
                op: "cross_entropy",
                lhs: tl.shape().to_vec(),
                rhs: vec![targets.len()],
            });
        }
        let (m, v) = (tl.shape()[0], tl.shape()[1]);
        let ignored = |t: usize| Some(t) == ignore_index;
        if let Some(&bad) = targets.iter().find(|&&t| !ignored(t) && t >= v) {
            return Err(TensorError::InvalidArgument {
                op: "cross_entropy",
                what: format!("target {bad} out of range for {v} classes"),
            });
        }
        let mut probs = tl.clone();
        kernels::softmax_rows(probs.data_mut(), m, v);
        let mut loss = 0.0f32;
        let mut kept = 0usize;
        for (i, &t) in targets.iter().enumerate() {
            if ignored(t) {
                continue;
            }
            kept += 1;
            loss -= probs.row(i)[t].max(1e-30).ln();
        }
        if kept > 0 {
            loss /= kept as f32;
        }
        let needs = self.needs(logits);
        Ok(self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits,
                probs,
                targets: targets
                    .iter()
                    .map(|&t| if ignored(t) { usize::MAX } else { t })
                    .collect(),
                kept,
            },
            needs,
        ))
    }

    pub fn mean(&mut self, a: NodeId) -> NodeId {
        let ta = &self.nodes[a.0].value;
        let m = ta.data().iter().sum::<f32>() / ta.len() as f32;
        let needs = self.needs(a);
        self.push(Tensor::scalar(m), Op::Mean { a }, needs)
    }

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let s = self.nodes[a.0].value.data().iter().sum::<f32>();
        let needs = self.needs(a);
        self.push(Tensor::scalar(s), Op::Sum { a }, needs)
    }

    pub fn transpose(&mut self, a: NodeId) -> Result<NodeId> {
        let ta = &self.nodes[a.0].value;
        if ta.shape().len() != 2 {
            return Err(TensorError::InvalidArgument {
                op: "transpose",
                what: format!("rank-2 required, got {:?}", ta.shape()),
            });
        }
        let (m, n) = (ta.shape()[0], ta.shape()[1]);
        let mut data = vec![0.0f32; m * n];
        for i in 0..m {
            for j in 0..n {
                data[j * m + i] = ta.data()[i * n + j];
            }
        }
        let needs = self.needs(a);
        Ok(self.push(Tensor::new(vec![n, m], data), Op::Transpose { a }, needs))
    }

    /// Scales row `i` by the constant `weights[i]` (degree normalization,
    /// segment means). Gradients flow into `a` only.
    pub fn row_scale(&mut self, a: NodeId, weights: &[f32]) -> Result<NodeId> {
        let ta = &self.nodes[a.0].value;
        if ta.shape().len() != 2 || ta.shape()[0] != weights.len() {
            return Err(TensorError::ShapeMismatch {
                op: "row_scale",
                lhs: ta.shape().to_vec(),
                rhs: vec![weights.len()],
            });
        }
        let n = ta.shape()[1];
        let mut out = ta.clone();
        for (i, &w) in weights.iter().enumerate() {
            for v in &mut out.data_mut()[i * n..(i + 1) * n] {
                *v *= w;
            }
        }
        let needs = self.needs(a);
        Ok(self.push(out, Op::RowScale { a, weights: weights.to_vec() }, needs))
    }

    /// Elementwise product with a constant mask of the same shape.
    pub fn mul_mask(&mut self, a: NodeId, mask: Tensor) -> Result<NodeId> {
        let ta = &self.nodes[a.0].value;
        if ta.shape() != mask.shape() {
            return Err(TensorError::ShapeMismatch {
                op: "mul_mask",
                lhs: ta.shape().to_vec(),
                rhs: mask.shape().to_vec(),
            });
        }
        let mut out = ta.clone();
        for (v, m) in out.data_mut().iter_mut().zip(mask.data()) {
            *v *= m;
        }
        let needs = self.needs(a);
        Ok(self.push(out, Op::MulMask { a, mask }, needs))
    }

    /// Gradients of `loss` (a scalar node) with respect to every `param`
    /// leaf; parameters the loss never touches get zero tensors.
    pub fn backward(&mut self, loss: NodeId) -> Result<BTreeMap<NodeId, Tensor>> {
        if !self.nodes[loss.0].value.shape().is_empty() {
            return Err(TensorError::NotScalar(self.nodes[loss.0].value.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(1.0));

        for idx in (0..=loss.0).rev() {
            if grads[idx].is_none() || !self.nodes[idx].needs_grad {
                continue;
            }
            let g = grads[idx].take().unwrap();
            self.accumulate_parents(idx, &g, &mut grads);
            if matches!(self.nodes[idx].op, Op::Leaf) {
                grads[idx] = Some(g); // keep leaf grads for the result map
            }
        }

        // params the loss never touched stay absent rather than zero-filled,
        // so optimizers can skip them without inspecting values
        let mut out = BTreeMap::new();
        for &p in &self.params {
            if let Some(g) = grads[p.0].take() {
                out.insert(p, g);
            }
        }
        Ok(out)
    }

    fn accumulate_parents(&self, idx: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let add_to = |grads: &mut [Option<Tensor>], id: NodeId, delta: Tensor| {
            match &mut grads[id.0] {
                Some(acc) => {
                    for (a, d) in acc.data_mut().iter_mut().zip(delta.data()) {
                        *a += d;
                    }
                }
                slot => *slot = Some(delta),
            }
        };
        let val = |id: NodeId| &self.nodes[id.0].value;

        match &self.nodes[idx].op {
            Op::Leaf => {}
            Op::Matmul { a, b } => {
                let (ta, tb) = (val(*a), val(*b));
                let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
                if self.needs(*a) {
                    let mut da = Tensor::zeros(vec![m, k]);
                    kernels::matmul_nt_acc(g.data(), tb.data(), da.data_mut(), m, n, k);
                    add_to(grads, *a, da);
                }
                if self.needs(*b) {
                    let mut db = Tensor::zeros(vec![k, n]);
                    kernels::matmul_tn_acc(ta.data(), g.data(), db.data_mut(), m, k, n);
                    add_to(grads, *b, db);
                }
            }
            Op::Add { a, b, bias } => {
                if self.needs(*a) {
                    add_to(grads, *a, g.clone());
                }
                if self.needs(*b) {
                    if *bias {
                        let n = val(*b).len();
                        let mut db = Tensor::zeros(vec![n]);
                        for (i, v) in g.data().iter().enumerate() {
                            db.data_mut()[i % n] += v;
                        }
                        add_to(grads, *b, db);
                    } else {
                        add_to(grads, *b, g.clone());
                    }
                }
            }
            Op::MulScalar { a, c } => {
                if self.needs(*a) {
                    let mut da = g.clone();
                    for v in da.data_mut() {
                        *v *= c;
                    }
                    add_to(grads, *a, da);
                }
            }
            Op::Concat { a, b, axis } => {
                let (sa, sb) = (val(*a).shape().to_vec(), val(*b).shape().to_vec());
                if *axis == 0 {
                    let split = sa[0] * sa[1];
                    if self.needs(*a) {
                        add_to(grads, *a, Tensor::new(sa.clone(), g.data()[..split].to_vec()));
                    }
                    if self.needs(*b) {
                        add_to(grads, *b, Tensor::new(sb, g.data()[split..].to_vec()));
                    }
                } else {
                    let (m, n1, n2) = (sa[0], sa[1], sb[1]);
                    if self.needs(*a) {
                        let mut da = Tensor::zeros(vec![m, n1]);
                        for i in 0..m {
                            da.data_mut()[i * n1..(i + 1) * n1]
                                .copy_from_slice(&g.row(i)[..n1]);
                        }
                        add_to(grads, *a, da);
                    }
                    if self.needs(*b) {
                        let mut db = Tensor::zeros(vec![m, n2]);
                        for i in 0..m {
                            db.data_mut()[i * n2..(i + 1) * n2]
                                .copy_from_slice(&g.row(i)[n1..]);
                        }
                        add_to(grads, *b, db);
                    }
                }
            }
            Op::Slice { a, axis, start, end } => {
                if self.needs(*a) {
                    let sa = val(*a).shape().to_vec();
                    let mut da = Tensor::zeros(sa.clone());
                    let (m, n) = (sa[0], sa[1]);
                    if *axis == 0 {
                        da.data_mut()[start * n..end * n].copy_from_slice(g.data());
                    } else {
                        let w = end - start;
                        for i in 0..m {
                            da.data_mut()[i * n + start..i * n + end]
                                .copy_from_slice(&g.data()[i * w..(i + 1) * w]);
                        }
                    }
                    add_to(grads, *a, da);
                }
            }
            Op::EmbeddingLookup { table, ids } => {
                if self.needs(*table) {
                    let st = val(*table).shape().to_vec();
                    let d = st[1];
                    let mut dt = Tensor::zeros(st);
                    for (i, &row) in ids.iter().enumerate() {
                        let grow = &g.data()[i * d..(i + 1) * d];
                        for (o, v) in dt.data_mut()[row * d..(row + 1) * d].iter_mut().zip(grow) {
                            *o += v;
                        }
                    }
                    add_to(grads, *table, dt);
                }
            }
            Op::ScatterAddRows { base, rows, ids } => {
                if self.needs(*base) {
                    add_to(grads, *base, g.clone());
                }
                if self.needs(*rows) {
                    let d = val(*rows).shape()[1];
                    let mut dr = Tensor::zeros(vec![ids.len(), d]);
                    for (i, &src) in ids.iter().enumerate() {
                        dr.data_mut()[i * d..(i + 1) * d]
                            .copy_from_slice(&g.data()[src * d..(src + 1) * d]);
                    }
                    add_to(grads, *rows, dr);
                }
            }
            Op::Relu { a } => {
                if self.needs(*a) {
                    let mut da = g.clone();
                    for (v, x) in da.data_mut().iter_mut().zip(val(*a).data()) {
                        if *x <= 0.0 {
                            *v = 0.0;
                        }
                    }
                    add_to(grads, *a, da);
                }
            }
            Op::Gelu { a } => {
                if self.needs(*a) {
                    let mut da = g.clone();
                    for (v, x) in da.data_mut().iter_mut().zip(val(*a).data()) {
                        *v *= kernels::gelu_grad(*x);
                    }
                    add_to(grads, *a, da);
                }
            }
            Op::Softmax { a, axis } => {
                if self.needs(*a) {
                    let y = &self.nodes[idx].value;
                    let (m, n) = (y.shape()[0], y.shape()[1]);
                    let mut da = Tensor::zeros(vec![m, n]);
                    if *axis == 1 {
                        for i in 0..m {
                            let yr = y.row(i);
                            let gr = &g.data()[i * n..(i + 1) * n];
                            let dot: f32 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                            for j in 0..n {
                                da.data_mut()[i * n + j] = yr[j] * (gr[j] - dot);
                            }
                        }
                    } else {
                        for j in 0..n {
                            let mut dot = 0.0f32;
                            for i in 0..m {
                                dot += g.data()[i * n + j] * y.data()[i * n + j];
                            }
                            for i in 0..m {
                                let yv = y.data()[i * n + j];
                                da.data_mut()[i * n + j] = yv * (g.data()[i * n + j] - dot);
                            }
                        }
                    }
                    add_to(grads, *a, da);
                }
            }
            Op::LayerNorm { x, gamma, beta, xhat, inv_std } => {
                let (m, n) = (xhat.shape()[0], xhat.shape()[1]);
                if self.needs(*gamma) {
                    let mut dg = Tensor::zeros(vec![n]);
                    for i in 0..m {
                        for j in 0..n {
                            dg.data_mut()[j] += g.data()[i * n + j] * xhat.data()[i * n + j];
                        }
                    }
                    add_to(grads, *gamma, dg);
                }
                if self.needs(*beta) {
                    let mut db = Tensor::zeros(vec![n]);
                    for i in 0..m {
                        for j in 0..n {
                            db.data_mut()[j] += g.data()[i * n + j];
                        }
                    }
                    add_to(grads, *beta, db);
                }
                if self.needs(*x) {
                    let tg = val(*gamma);
                    let mut dx = Tensor::zeros(vec![m, n]);
                    for i in 0..m {
                        // dxhat = g * gamma; dx = (dxhat - mean(dxhat)
                        //        - xhat * mean(dxhat * xhat)) * inv_std
                        let mut sum_dxh = 0.0f32;
                        let mut sum_dxh_xh = 0.0f32;
                        for j in 0..n {
                            let dxh = g.data()[i * n + j] * tg.data()[j];
                            sum_dxh += dxh;
                            sum_dxh_xh += dxh * xhat.data()[i * n + j];
                        }
                        let inv_n = 1.0 / n as f32;
                        for j in 0..n {
                            let dxh = g.data()[i * n + j] * tg.data()[j];
                            dx.data_mut()[i * n + j] = (dxh
                                - sum_dxh * inv_n
                                - xhat.data()[i * n + j] * sum_dxh_xh * inv_n)
                                * inv_std[i];
                        }
                    }
                    add_to(grads, *x, dx);
                }
            }
            Op::CrossEntropy { logits, probs, targets, kept } => {
                if self.needs(*logits) && *kept > 0 {
                    let scale = g.item() / *kept as f32;
                    let (m, v) = (probs.shape()[0], probs.shape()[1]);
                    let mut dl = Tensor::zeros(vec![m, v]);
                    for (i, &t) in targets.iter().enumerate() {
                        if t == usize::MAX {
                            continue;
                        }
                        let pr = probs.row(i);
                        let drow = &mut dl.data_mut()[i * v..(i + 1) * v];
                        for j in 0..v {
                            drow[j] = pr[j] * scale;
                        }
                        drow[t] -= scale;
                    }
                    add_to(grads, *logits, dl);
                }
            }
            Op::Mean { a } => {
                if self.needs(*a) {
                    let ta = val(*a);
                    let da =
                        Tensor::filled(ta.shape().to_vec(), g.item() / ta.len() as f32);
                    add_to(grads, *a, da);
                }
            }
            Op::Sum { a } => {
                if self.needs(*a) {
                    let da = Tensor::filled(val(*a).shape().to_vec(), g.item());
                    add_to(grads, *a, da);
                }
            }
            Op::Transpose { a } => {
                if self.needs(*a) {
                    let (m, n) = (g.shape()[0], g.shape()[1]);
                    let mut da = Tensor::zeros(vec![n, m]);
                    for i in 0..m {
                        for j in 0..n {
                            da.data_mut()[j * m + i] = g.data()[i * n + j];
                        }
                    }
                    add_to(grads, *a, da);
                }
            }
            Op::RowScale { a, weights } => {
                if self.needs(*a) {
                    let n = g.shape()[1];
                    let mut da = g.clone();
                    for (i, &w) in weights.iter().enumerate() {
                        for v in &mut da.data_mut()[i * n..(i + 1) * n] {
                            *v *= w;
                        }
                    }
                    add_to(grads, *a, da);
                }
            }
            Op::MulMask { a, mask } => {
                if self.needs(*a) {
                    let mut da = g.clone();
                    for (v, m) in da.data_mut().iter_mut().zip(mask.data()) {
                        *v *= m;
                    }
                    add_to(grads, *a, da);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn backward_requires_scalar_loss() {
        let mut t = Tape::new();
        let x = t.param(Tensor::new(vec![2, 2], vec![1., 2., 3., 4.]));
        let err = t.backward(x).unwrap_err();
        assert_eq!(err, TensorError::NotScalar(vec![2, 2]));
    }

    #[test]
    fn matmul_shape_error_reports_both_shapes() {
        let mut t = Tape::new();
        let a = t.input(Tensor::zeros(vec![2, 3]));
        let b = t.input(Tensor::zeros(vec![2, 3]));
        match t.matmul(a, b) {
            Err(TensorError::ShapeMismatch { lhs, rhs, .. }) => {
                assert_eq!(lhs, vec![2, 3]);
                assert_eq!(rhs, vec![2, 3]);
            }
            other => panic!("expected shape mismatch, got {other:?}"),
        }
    }

    #[test]
    fn simple_chain_gradient_is_exact() {
        // loss = mean(relu(x * w)) with all-positive products:
        // d_loss/d_w[k][j] = sum_i x[i][k] / 4
        let mut t = Tape::new();
        let x = t.input(Tensor::new(vec![2, 2], vec![1., 2., 3., 4.]));
        let w = t.param(Tensor::new(vec![2, 2], vec![0.5, 0.25, 0.5, 0.25]));
        let y = t.matmul(x, w).unwrap();
        let z = t.relu(y);
        let loss = t.mean(z);
        let grads = t.backward(loss).unwrap();
        let gw = &grads[&w];
        assert_eq!(gw.data(), &[1.0, 1.0, 1.5, 1.5]);
    }

    #[test]
    fn unreachable_param_is_absent_from_gradients() {
        let mut t = Tape::new();
        let used = t.param(Tensor::new(vec![2], vec![1., 2.]));
        let unused = t.param(Tensor::new(vec![3], vec![1., 2., 3.]));
        let s = t.sum(used);
        let grads = t.backward(s).unwrap();
        assert_eq!(grads[&used].data(), &[1.0, 1.0]);
        assert!(!grads.contains_key(&unused));
    }

    #[test]
    fn shared_leaf_accumulates_from_both_uses() {
        // loss = sum(x) + mean(x) over 4 elements: grad = 1 + 1/4 each
        let mut t = Tape::new();
        let x = t.param(Tensor::new(vec![2, 2], vec![1., 2., 3., 4.]));
        let a = t.sum(x);
        let b = t.mean(x);
        let loss = t.add(a, b).unwrap();
        let grads = t.backward(loss).unwrap();
        assert_eq!(grads[&x].data(), &[1.25, 1.25, 1.25, 1.25]);
    }

    #[test]
    fn cross_entropy_matches_log_vocab_at_uniform_logits() {
        let mut t = Tape::new();
        let logits = t.input(Tensor::zeros(vec![3, 7]));
        let loss = t.cross_entropy(logits, &[0, 3, 6], None).unwrap();
        let expected = (7.0f32).ln();
        assert!((t.value(loss).item() - expected).abs() < 1e-6);
    }

    #[test]
    fn cross_entropy_ignores_marked_rows() {
        let mut t = Tape::new();
        let mut logits = Tensor::zeros(vec![2, 4]);
        logits.data_mut()[0] = 10.0; // row 0 strongly predicts class 0
        let l = t.param(logits);
        let loss = t.cross_entropy(l, &[0, 99], Some(99)).unwrap();
        // only row 0 counts
        assert!(t.value(loss).item() < 0.01);
        let grads = t.backward(loss).unwrap();
        assert_eq!(&grads[&l].data()[4..], &[0.0; 4]); // ignored row: zero grad
    }

    #[test]
    fn scatter_add_rows_accumulates_duplicates_in_order() {
        let mut t = Tape::new();
        let base = t.input(Tensor::zeros(vec![3, 2]));
        let rows = t.input(Tensor::new(vec![3, 2], vec![1., 1., 2., 2., 4., 4.]));
        let out = t.scatter_add_rows(base, &[1, 1, 0], rows).unwrap();
        assert_eq!(t.value(out).data(), &[4., 4., 3., 3., 0., 0.]);
    }

    #[test]
    fn embedding_lookup_grad_accumulates_repeated_ids() {
        let mut t = Tape::new();
        let table = t.param(Tensor::new(vec![3, 2], vec![0.; 6]));
        let looked = t.embedding_lookup(table, &[2, 2, 0]).unwrap();
        let loss = t.sum(looked);
        let grads = t.backward(loss).unwrap();
        assert_eq!(grads[&table].data(), &[1., 1., 0., 0., 2., 2.]);
    }

    #[test]
    fn softmax_rows_sum_to_one_within_1e6() {
        let mut t = Tape::new();
        let x = t.input(Tensor::new(vec![2, 3], vec![0.1, -4.0, 2.5, 100.0, 99.0, 98.0]));
        let y = t.softmax(x, 1).unwrap();
        for i in 0..2 {
            let s: f32 = t.value(y).row(i).iter().sum();
            assert!((s - 1.0).abs() <= 1e-6);
        }
    }

    #[test]
    fn layer_norm_rows_are_standardized() {
        let mut t = Tape::new();
        let x = t.input(Tensor::new(vec![2, 4], vec![1., 2., 3., 4., -1., 0., 1., 2.]));
        let g = t.input(Tensor::filled(vec![4], 1.0));
        let b = t.input(Tensor::zeros(vec![4]));
        let y = t.layer_norm(x, g, b).unwrap();
        for i in 0..2 {
            let row = t.value(y). row(i);
            let mean: f32 = row.iter().sum::<f32>() / 4.0;
            let var: f32 = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f32>() / 4.0;
            assert!(mean.abs() < 1e-5);
            assert!((var - 1.0).abs() < 1e-3);
        }
    }

    #[test]
    fn forward_is_bit_deterministic_across_runs() {
        let run = || {
            let mut t = Tape::new();
            let mut r = super::super::Rng::seeded(11, "det");
            let x = t.input(Tensor::randn(vec![8, 8], 1.0, &mut r));
            let w = t.param(Tensor::randn(vec![8, 8], 0.5, &mut r));
            let y = t.matmul(x, w).unwrap();
            let z = t.gelu(y);
            let l = t.mean(z);
            let g = t.backward(l).unwrap();
            let grad_bits: Vec<u32> = g[&w].data().iter().map(|v| v.to_bits()).collect();
            (t.value(l).item().to_bits(), grad_bits)
        };
        assert_eq!(run(), run());
    }
}
