//! Tape-based reverse-mode differentiation.
//!
//! A [`Graph`] records every operation applied during one forward pass. Node
//! inputs always have smaller indices than the node itself, so a single
//! reverse sweep over the tape visits nodes in a valid topological order.
//! Parameters are read straight from the borrowed [`ParameterStore`]; their
//! gradients come back as a [`Gradients`] set that the caller accumulates.

use rand::Rng;

use super::params::{Gradients, ParamId, ParameterStore};
use super::tensor::{self, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Input,
    Param(ParamId),
    Embedding { table: ParamId, row: usize },
    MatMul(Var, Var),
    Add(Var, Var),
    Mul(Var, Var),
    AddN(Vec<Var>),
    Concat(Vec<Var>),
    Slice { input: Var, start: usize },
    Mean(Vec<Var>),
    Tanh(Var),
    Sigmoid(Var),
    Softmax(Var),
    Dropout { input: Var, mask: Vec<f64> },
    WeightedSum { weights: Var, items: Vec<Var> },
    Dot(Var, Var),
    Sum(Var),
    Scale(Var, f64),
    NegLogSoftmax { logits: Var, target: usize },
}

#[derive(Debug)]
struct Node {
    // `None` for parameter nodes, whose value lives in the store.
    value: Option<Tensor>,
    op: Op,
}

pub struct Graph<'p> {
    store: &'p ParameterStore,
    nodes: Vec<Node>,
    param_nodes: Vec<Option<Var>>,
}

fn shape_str(s: &[usize]) -> String {
    format!("{s:?}")
}

impl<'p> Graph<'p> {
    pub fn new(store: &'p ParameterStore) -> Self {
        Self {
            store,
            nodes: Vec::new(),
            param_nodes: vec![None; store.len()],
        }
    }

    pub fn store(&self) -> &'p ParameterStore {
        self.store
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        let node = &self.nodes[v.0];
        match (&node.value, &node.op) {
            (Some(t), _) => t,
            (None, Op::Param(id)) => self.store.value(*id),
            (None, _) => unreachable!("only parameter nodes are stored by reference"),
        }
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.value(v).shape()
    }

    fn data(&self, v: Var) -> &[f64] {
        self.value(v).data()
    }

    fn push(&mut self, op_name: &'static str, value: Tensor, op: Op) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite { op: op_name });
        }
        self.nodes.push(Node { value: Some(value), op });
        Ok(Var(self.nodes.len() - 1))
    }

    /// A constant input; no gradient flows into it.
    pub fn input(&mut self, value: Tensor) -> Result<Var> {
        self.push("input", value, Op::Input)
    }

    /// The node for a stored parameter. Repeated calls return the same node.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_nodes[id.0] {
            return v;
        }
        self.nodes.push(Node {
            value: None,
            op: Op::Param(id),
        });
        let v = Var(self.nodes.len() - 1);
        self.param_nodes[id.0] = Some(v);
        v
    }

    /// Row `row` of a 2-D parameter table, as a vector.
    pub fn embedding_lookup(&mut self, table: ParamId, row: usize) -> Result<Var> {
        let t = self.store.value(table);
        if t.shape().len() != 2 {
            return Err(Error::shape("embedding_lookup", "2-D table", shape_str(t.shape())));
        }
        if row >= t.shape()[0] {
            return Err(Error::IndexOutOfRange {
                index: row,
                size: t.shape()[0],
            });
        }
        let value = Tensor::vector(t.row(row).to_vec());
        self.push("embedding_lookup", value, Op::Embedding { table, row })
    }

    /// `[m,k] x [k,n] -> [m,n]` or `[m,k] x [k] -> [m]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let (m, k, n) = match (sa.as_slice(), sb.as_slice()) {
            ([m, k], [k2]) if k == k2 => (*m, *k, 1),
            ([m, k], [k2, n]) if k == k2 => (*m, *k, *n),
            _ => {
                return Err(Error::shape(
                    "matmul",
                    format!("[m,k] x [k] or [k,n] with lhs {}", shape_str(&sa)),
                    shape_str(&sb),
                ))
            }
        };
        let (ad, bd) = (self.data(a), self.data(b));
        let mut out = vec![0.0; m * n];
        if n == 1 {
            for (i, o) in out.iter_mut().enumerate() {
                *o = tensor::dot(&ad[i * k..(i + 1) * k], bd);
            }
        } else {
            for i in 0..m {
                for p in 0..k {
                    let x = ad[i * k + p];
                    let brow = &bd[p * n..(p + 1) * n];
                    for (o, y) in out[i * n..(i + 1) * n].iter_mut().zip(brow) {
                        *o += x * y;
                    }
                }
            }
        }
        let shape = if sb.len() == 1 { vec![m] } else { vec![m, n] };
        self.push("matmul", Tensor::new(shape, out)?, Op::MatMul(a, b))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(op, shape_str(self.shape(a)), shape_str(self.shape(b))));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let data = self.data(a).iter().zip(self.data(b)).map(|(x, y)| x + y).collect();
        let t = Tensor::new(self.shape(a).to_vec(), data)?;
        self.push("add", t, Op::Add(a, b))
    }

    pub fn elementwise_mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("elementwise_mul", a, b)?;
        let data = self.data(a).iter().zip(self.data(b)).map(|(x, y)| x * y).collect();
        let t = Tensor::new(self.shape(a).to_vec(), data)?;
        self.push("elementwise_mul", t, Op::Mul(a, b))
    }

    pub fn add_n(&mut self, xs: &[Var]) -> Result<Var> {
        let first = *xs.first().ok_or(Error::Empty("add_n of no inputs"))?;
        let mut acc = vec![0.0; self.value(first).len()];
        for &x in xs {
            self.same_shape("add_n", first, x)?;
            acc.iter_mut().zip(self.data(x)).for_each(|(a, b)| *a += b);
        }
        let t = Tensor::new(self.shape(first).to_vec(), acc)?;
        self.push("add_n", t, Op::AddN(xs.to_vec()))
    }

    /// Concatenation of 1-D tensors.
    pub fn concat(&mut self, xs: &[Var]) -> Result<Var> {
        if xs.is_empty() {
            return Err(Error::Empty("concat of no inputs"));
        }
        let mut data = Vec::new();
        for &x in xs {
            if self.shape(x).len() != 1 {
                return Err(Error::shape("concat", "1-D inputs", shape_str(self.shape(x))));
            }
            data.extend_from_slice(self.data(x));
        }
        self.push("concat", Tensor::vector(data), Op::Concat(xs.to_vec()))
    }

    /// Elements `start..start+len` of a 1-D tensor.
    pub fn slice(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let s = self.shape(x);
        if s.len() != 1 || start + len > s[0] || len == 0 {
            return Err(Error::shape(
                "slice",
                format!("1-D with at least {} elements", start + len),
                shape_str(s),
            ));
        }
        let t = Tensor::vector(self.data(x)[start..start + len].to_vec());
        self.push("slice", t, Op::Slice { input: x, start })
    }

    /// Mean over a sequence of equally-shaped tensors.
    pub fn mean_over_time(&mut self, xs: &[Var]) -> Result<Var> {
        let first = *xs.first().ok_or(Error::Empty("mean_over_time of no timesteps"))?;
        let mut acc = vec![0.0; self.value(first).len()];
        for &x in xs {
            self.same_shape("mean_over_time", first, x)?;
            acc.iter_mut().zip(self.data(x)).for_each(|(a, b)| *a += b);
        }
        let n = xs.len() as f64;
        acc.iter_mut().for_each(|a| *a /= n);
        let t = Tensor::new(self.shape(first).to_vec(), acc)?;
        self.push("mean_over_time", t, Op::Mean(xs.to_vec()))
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var> {
        let data = self.data(x).iter().map(|v| v.tanh()).collect();
        let t = Tensor::new(self.shape(x).to_vec(), data)?;
        self.push("tanh", t, Op::Tanh(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        let data = self.data(x).iter().map(|&v| tensor::sigmoid(v)).collect();
        let t = Tensor::new(self.shape(x).to_vec(), data)?;
        self.push("sigmoid", t, Op::Sigmoid(x))
    }

    /// Softmax of a 1-D tensor, computed with max subtraction.
    pub fn softmax(&mut self, x: Var) -> Result<Var> {
        if self.shape(x).len() != 1 {
            return Err(Error::shape("softmax", "1-D input", shape_str(self.shape(x))));
        }
        let t = Tensor::vector(tensor::softmax(self.data(x)));
        self.push("softmax", t, Op::Softmax(x))
    }

    /// Inverted dropout: kept units are scaled by `1/(1-p)`.
    pub fn dropout<R: Rng + ?Sized>(&mut self, x: Var, p: f64, rng: &mut R) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::InvalidArgument(format!("dropout probability {p} not in [0,1)")));
        }
        let scale = 1.0 / (1.0 - p);
        let mask: Vec<f64> = (0..self.value(x).len())
            .map(|_| if rng.gen::<f64>() < p { 0.0 } else { scale })
            .collect();
        let data = self.data(x).iter().zip(&mask).map(|(v, m)| v * m).collect();
        let t = Tensor::new(self.shape(x).to_vec(), data)?;
        self.push("dropout", t, Op::Dropout { input: x, mask })
    }

    /// `sum_j weights[j] * items[j]`.
    pub fn weighted_sum(&mut self, weights: Var, items: &[Var]) -> Result<Var> {
        let w = self.data(weights);
        if self.shape(weights).len() != 1 || w.len() != items.len() || items.is_empty() {
            return Err(Error::shape(
                "weighted_sum",
                format!("[{}] weights", items.len()),
                shape_str(self.shape(weights)),
            ));
        }
        let first = items[0];
        let mut acc = vec![0.0; self.value(first).len()];
        for (j, &x) in items.iter().enumerate() {
            self.same_shape("weighted_sum", first, x)?;
            let wj = self.data(weights)[j];
            acc.iter_mut().zip(self.data(x)).for_each(|(a, b)| *a += wj * b);
        }
        let t = Tensor::new(self.shape(first).to_vec(), acc)?;
        self.push(
            "weighted_sum",
            t,
            Op::WeightedSum {
                weights,
                items: items.to_vec(),
            },
        )
    }

    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("dot", a, b)?;
        let v = self.data(a).iter().zip(self.data(b)).map(|(x, y)| x * y).sum();
        self.push("dot", Tensor::scalar(v), Op::Dot(a, b))
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let v = self.data(x).iter().sum();
        self.push("sum", Tensor::scalar(v), Op::Sum(x))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Result<Var> {
        let data = self.data(x).iter().map(|v| v * factor).collect();
        let t = Tensor::new(self.shape(x).to_vec(), data)?;
        self.push("scale", t, Op::Scale(x, factor))
    }

    /// `-log softmax(logits)[target]`.
    pub fn neg_log_softmax(&mut self, logits: Var, target: usize) -> Result<Var> {
        let s = self.shape(logits);
        if s.len() != 1 || target >= s[0] {
            return Err(Error::shape(
                "neg_log_softmax",
                format!("1-D logits with more than {target} entries"),
                shape_str(s),
            ));
        }
        let lp = tensor::log_softmax(self.data(logits));
        self.push(
            "neg_log_softmax",
            Tensor::scalar(-lp[target]),
            Op::NegLogSoftmax { logits, target },
        )
    }

    /// Whether any parameter feeds into each node.
    fn needs_grad(&self, upto: usize) -> Vec<bool> {
        let mut needs = vec![false; upto + 1];
        for idx in 0..=upto {
            let any = |vs: &[Var]| vs.iter().any(|v| needs[v.0]);
            needs[idx] = match &self.nodes[idx].op {
                Op::Input => false,
                Op::Param(_) | Op::Embedding { .. } => true,
                Op::MatMul(a, b) | Op::Add(a, b) | Op::Mul(a, b) | Op::Dot(a, b) => any(&[*a, *b]),
                Op::AddN(xs) | Op::Concat(xs) | Op::Mean(xs) => any(xs),
                Op::WeightedSum { weights, items } => needs[weights.0] || any(items),
                Op::Slice { input: x, .. }
                | Op::Tanh(x)
                | Op::Sigmoid(x)
                | Op::Softmax(x)
                | Op::Dropout { input: x, .. }
                | Op::Sum(x)
                | Op::Scale(x, _)
                | Op::NegLogSoftmax { logits: x, .. } => needs[x.0],
            };
        }
        needs
    }

    /// Reverse sweep from a scalar `loss`; returns the parameter gradients.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let mut out = Gradients::new(self.store.len());
        self.backward_into(loss, &mut out)?;
        Ok(out)
    }

    /// Like [`Graph::backward`], but adds into an existing gradient set.
    pub fn backward_into(&self, loss: Var, out: &mut Gradients) -> Result<()> {
        if self.nodes.is_empty() {
            return Err(Error::EmptyGraph);
        }
        if !self.value(loss).is_scalar() {
            return Err(Error::NonScalarLoss(self.shape(loss).to_vec()));
        }
        out.ensure_len(self.store.len());
        let needs = self.needs_grad(loss.0);
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0]);
        let len = |v: Var| self.value(v).len();

        for idx in (0..=loss.0).rev() {
            if !needs[idx] {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            // `slot(v)` is the gradient buffer of `v`, or `None` if nothing
            // upstream of `v` is trainable.
            // Parameter nodes write straight into `out`.
            macro_rules! slot {
                ($v:expr) => {{
                    let v: Var = $v;
                    if !needs[v.0] {
                        None
                    } else if let Op::Param(id) = self.nodes[v.0].op {
                        Some(out.slot(id, len(v)))
                    } else {
                        Some(grads[v.0].get_or_insert_with(|| vec![0.0; len(v)]).as_mut_slice())
                    }
                }};
            }
            match &node.op {
                Op::Input => {}
                Op::Param(id) => {
                    // Reached only when the loss itself is a parameter.
                    let dst = out.slot(*id, g.len());
                    dst.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
                }
                Op::Embedding { table, row } => {
                    let t = self.store.value(*table);
                    let cols = t.shape()[1];
                    let dst = out.slot(*table, t.len());
                    dst[row * cols..(row + 1) * cols]
                        .iter_mut()
                        .zip(&g)
                        .for_each(|(a, b)| *a += b);
                }
                Op::MatMul(a, b) => {
                    let (ad, bd) = (self.data(*a), self.data(*b));
                    let sa = self.shape(*a);
                    let (m, k) = (sa[0], sa[1]);
                    let n = bd.len() / k;
                    // dA += G B^T
                    if let Some(ga) = slot!(*a) {
                        for i in 0..m {
                            let row = &mut ga[i * k..(i + 1) * k];
                            if n == 1 {
                                let gi = g[i];
                                row.iter_mut().zip(bd).for_each(|(r, y)| *r += gi * y);
                            } else {
                                for (p, r) in row.iter_mut().enumerate() {
                                    let brow = &bd[p * n..(p + 1) * n];
                                    *r += g[i * n..(i + 1) * n].iter().zip(brow).map(|(x, y)| x * y).sum::<f64>();
                                }
                            }
                        }
                    }
                    // dB += A^T G
                    if let Some(gb) = slot!(*b) {
                        for i in 0..m {
                            let arow = &ad[i * k..(i + 1) * k];
                            if n == 1 {
                                let gi = g[i];
                                gb.iter_mut().zip(arow).for_each(|(o, x)| *o += x * gi);
                            } else {
                                let grow = &g[i * n..(i + 1) * n];
                                for (p, &x) in arow.iter().enumerate() {
                                    gb[p * n..(p + 1) * n]
                                        .iter_mut()
                                        .zip(grow)
                                        .for_each(|(o, gv)| *o += x * gv);
                                }
                            }
                        }
                    }
                }
                Op::Add(a, b) => {
                    for v in [*a, *b] {
                        if let Some(dst) = slot!(v) {
                            dst.iter_mut().zip(&g).for_each(|(d, x)| *d += x);
                        }
                    }
                }
                Op::Mul(a, b) => {
                    for (v, other) in [(*a, *b), (*b, *a)] {
                        if needs[v.0] {
                            let od = self.data(other);
                            let dst = slot!(v).unwrap();
                            dst.iter_mut().zip(&g).zip(od).for_each(|((d, x), y)| *d += x * y);
                        }
                    }
                }
                Op::AddN(xs) => {
                    for x in xs {
                        if let Some(dst) = slot!(*x) {
                            dst.iter_mut().zip(&g).for_each(|(d, v)| *d += v);
                        }
                    }
                }
                Op::Concat(xs) => {
                    let mut offset = 0;
                    for x in xs {
                        let n = len(*x);
                        if let Some(dst) = slot!(*x) {
                            dst.iter_mut().zip(&g[offset..offset + n]).for_each(|(d, v)| *d += v);
                        }
                        offset += n;
                    }
                }
                Op::Slice { input, start } => {
                    let dst = slot!(*input).unwrap();
                    dst[*start..*start + g.len()]
                        .iter_mut()
                        .zip(&g)
                        .for_each(|(d, v)| *d += v);
                }
                Op::Mean(xs) => {
                    let inv = 1.0 / xs.len() as f64;
                    for x in xs {
                        if let Some(dst) = slot!(*x) {
                            dst.iter_mut().zip(&g).for_each(|(d, v)| *d += v * inv);
                        }
                    }
                }
                Op::Tanh(x) => {
                    let y = node.value.as_ref().unwrap().data();
                    let dst = slot!(*x).unwrap();
                    dst.iter_mut()
                        .zip(&g)
                        .zip(y)
                        .for_each(|((d, gv), yv)| *d += gv * (1.0 - yv * yv));
                }
                Op::Sigmoid(x) => {
                    let y = node.value.as_ref().unwrap().data();
                    let dst = slot!(*x).unwrap();
                    dst.iter_mut()
                        .zip(&g)
                        .zip(y)
                        .for_each(|((d, gv), yv)| *d += gv * yv * (1.0 - yv));
                }
                Op::Softmax(x) => {
                    let y = node.value.as_ref().unwrap().data();
                    let dot: f64 = g.iter().zip(y).map(|(a, b)| a * b).sum();
                    let dst = slot!(*x).unwrap();
                    dst.iter_mut()
                        .zip(&g)
                        .zip(y)
                        .for_each(|((d, gv), yv)| *d += yv * (gv - dot));
                }
                Op::Dropout { input, mask } => {
                    let dst = slot!(*input).unwrap();
                    dst.iter_mut().zip(&g).zip(mask).for_each(|((d, a), b)| *d += a * b);
                }
                Op::WeightedSum { weights, items } => {
                    let w = self.data(*weights);
                    if needs[weights.0] {
                        let gw: Vec<f64> = items
                            .iter()
                            .map(|x| g.iter().zip(self.data(*x)).map(|(a, b)| a * b).sum())
                            .collect();
                        let dst = slot!(*weights).unwrap();
                        dst.iter_mut().zip(&gw).for_each(|(d, v)| *d += v);
                    }
                    for (j, x) in items.iter().enumerate() {
                        if let Some(dst) = slot!(*x) {
                            dst.iter_mut().zip(&g).for_each(|(d, v)| *d += v * w[j]);
                        }
                    }
                }
                Op::Dot(a, b) => {
                    let s = g[0];
                    for (v, other) in [(*a, *b), (*b, *a)] {
                        if needs[v.0] {
                            let od = self.data(other);
                            let dst = slot!(v).unwrap();
                            dst.iter_mut().zip(od).for_each(|(d, y)| *d += y * s);
                        }
                    }
                }
                Op::Sum(x) => {
                    let dst = slot!(*x).unwrap();
                    dst.iter_mut().for_each(|d| *d += g[0]);
                }
                Op::Scale(x, f) => {
                    let dst = slot!(*x).unwrap();
                    dst.iter_mut().zip(&g).for_each(|(d, v)| *d += v * f);
                }
                Op::NegLogSoftmax { logits, target } => {
                    let mut gi = tensor::softmax(self.data(*logits));
                    gi[*target] -= 1.0;
                    let dst = slot!(*logits).unwrap();
                    dst.iter_mut().zip(&gi).for_each(|(d, v)| *d += v * g[0]);
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn store_with(shapes: &[(&str, Vec<usize>)], seed: u64) -> ParameterStore {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParameterStore::new();
        for (name, shape) in shapes {
            let n: usize = shape.iter().product();
            let data = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
            store.add(*name, Tensor::new(shape.clone(), data).unwrap()).unwrap();
        }
        store
    }

    /// Central finite differences of `f` w.r.t. every parameter value.
    fn check_gradients(store: &mut ParameterStore, f: impl Fn(&mut Graph) -> Var, tol: f64) {
        let analytic = {
            let mut g = Graph::new(store);
            let loss = f(&mut g);
            g.backward(loss).unwrap()
        };
        let eps = 1e-5;
        let ids: Vec<ParamId> = store.iter().map(|(id, _)| id).collect();
        for id in ids {
            for i in 0..store.value(id).len() {
                let orig = store.value(id).data()[i];
                store.value_mut(id).data_mut()[i] = orig + eps;
                let up = {
                    let mut g = Graph::new(store);
                    let l = f(&mut g);
                    g.value(l).data()[0]
                };
                store.value_mut(id).data_mut()[i] = orig - eps;
                let down = {
                    let mut g = Graph::new(store);
                    let l = f(&mut g);
                    g.value(l).data()[0]
                };
                store.value_mut(id).data_mut()[i] = orig;
                let numeric = (up - down) / (2.0 * eps);
                let a = analytic.get(id).map_or(0.0, |g| g[i]);
                let rel = (a - numeric).abs() / (a.abs().max(numeric.abs()).max(1e-8));
                assert!(
                    rel < tol || (a - numeric).abs() < 1e-9,
                    "{} [{i}]: analytic {a} vs numeric {numeric}",
                    store.get(id).name
                );
            }
        }
    }

    #[test]
    fn sum_gives_ones() {
        let store = store_with(&[("p", vec![2, 3])], 1);
        let mut g = Graph::new(&store);
        let p = g.param(store.id("p").unwrap());
        let loss = g.sum(p).unwrap();
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.get(store.id("p").unwrap()).unwrap(), &[1.0; 6]);
    }

    #[test]
    fn zero_times_param_gives_zero() {
        let store = store_with(&[("p", vec![4])], 2);
        let mut g = Graph::new(&store);
        let p = g.param(store.id("p").unwrap());
        let z = g.scale(p, 0.0).unwrap();
        let loss = g.sum(z).unwrap();
        let grads = g.backward(loss).unwrap();
        assert_eq!(grads.get(store.id("p").unwrap()).unwrap(), &[0.0; 4]);
    }

    #[test]
    fn backward_on_empty_graph_errors() {
        let store = ParameterStore::new();
        let g = Graph::new(&store);
        assert!(matches!(g.backward(Var(0)), Err(Error::EmptyGraph)));
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let store = store_with(&[("p", vec![3])], 2);
        let mut g = Graph::new(&store);
        let p = g.param(store.id("p").unwrap());
        let t = g.tanh(p).unwrap();
        assert!(matches!(g.backward(t), Err(Error::NonScalarLoss(_))));
    }

    #[test]
    fn softmax_of_zero_vector() {
        let store = ParameterStore::new();
        let mut g = Graph::new(&store);
        let x = g.input(Tensor::vector(vec![0.0, 0.0])).unwrap();
        let y = g.softmax(x).unwrap();
        assert_eq!(g.value(y).data(), &[0.5, 0.5]);
    }

    #[test]
    fn mean_of_single_step_is_identity() {
        let store = ParameterStore::new();
        let mut g = Graph::new(&store);
        let x = g.input(Tensor::vector(vec![0.25, -3.0, 7.5])).unwrap();
        let m = g.mean_over_time(&[x]).unwrap();
        assert_eq!(g.value(m).data(), g.value(x).data());
    }

    #[test]
    fn shape_mismatch_names_op() {
        let store = store_with(&[("a", vec![2, 3]), ("b", vec![2])], 3);
        let mut g = Graph::new(&store);
        let a = g.param(store.id("a").unwrap());
        let b = g.param(store.id("b").unwrap());
        let err = g.matmul(a, b).unwrap_err().to_string();
        assert!(err.starts_with("matmul"), "{err}");
        assert!(err.contains("[2, 3]") && err.contains("[2]"), "{err}");
    }

    #[test]
    fn dropout_identity_when_p_zero_and_scaled_otherwise() {
        let store = ParameterStore::new();
        let mut g = Graph::new(&store);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x = g.input(Tensor::vector(vec![1.0; 1000])).unwrap();
        let d0 = g.dropout(x, 0.0, &mut rng).unwrap();
        assert_eq!(g.value(d0).data(), g.value(x).data());
        let d = g.dropout(x, 0.25, &mut rng).unwrap();
        let vals = g.value(d).data();
        assert!(vals.iter().all(|&v| v == 0.0 || (v - 1.0 / 0.75).abs() < 1e-15));
        assert!(g.dropout(x, 1.0, &mut rng).is_err());
    }

    #[test]
    fn matmul_gradient_matches_finite_differences() {
        let mut store = store_with(&[("a", vec![2, 3]), ("b", vec![3, 1])], 4);
        let (a, b) = (store.id("a").unwrap(), store.id("b").unwrap());
        check_gradients(
            &mut store,
            |g| {
                let (a, b) = (g.param(a), g.param(b));
                let y = g.matmul(a, b).unwrap();
                let t = g.tanh(y).unwrap();
                g.sum(t).unwrap()
            },
            1e-6,
        );
    }

    #[test]
    fn three_layer_tanh_chain_gradient() {
        let mut store = store_with(
            &[
                ("w1", vec![5, 4]),
                ("w2", vec![5, 5]),
                ("w3", vec![3, 5]),
                ("x", vec![4]),
            ],
            5,
        );
        let ids: Vec<ParamId> = ["w1", "w2", "w3", "x"].iter().map(|n| store.id(n).unwrap()).collect();
        check_gradients(
            &mut store,
            |g| {
                let mut h = g.param(ids[3]);
                for &w in &ids[..3] {
                    let w = g.param(w);
                    let z = g.matmul(w, h).unwrap();
                    h = g.tanh(z).unwrap();
                }
                g.neg_log_softmax(h, 1).unwrap()
            },
            1e-4,
        );
    }

    #[test]
    fn every_op_gradient_matches_finite_differences() {
        let mut store = store_with(
            &[("emb", vec![4, 3]), ("u", vec![3]), ("v", vec![3]), ("w", vec![2])],
            6,
        );
        let emb = store.id("emb").unwrap();
        let (u, v, w) = (store.id("u").unwrap(), store.id("v").unwrap(), store.id("w").unwrap());
        check_gradients(
            &mut store,
            |g| {
                let e1 = g.embedding_lookup(emb, 1).unwrap();
                let e3 = g.embedding_lookup(emb, 3).unwrap();
                let (u, v, w) = (g.param(u), g.param(v), g.param(w));
                let s = g.add(e1, u).unwrap();
                let m = g.elementwise_mul(s, v).unwrap();
                let sg = g.sigmoid(m).unwrap();
                let mean = g.mean_over_time(&[sg, e3, u]).unwrap();
                let cat = g.concat(&[mean, w]).unwrap();
                let sl = g.slice(cat, 1, 3).unwrap();
                let sm = g.softmax(w).unwrap();
                let ws = g.weighted_sum(sm, &[e1, sl]).unwrap();
                let an = g.add_n(&[ws, e3, mean]).unwrap();
                let d = g.dot(an, v).unwrap();
                let sc = g.scale(d, 0.7).unwrap();
                let nl = g.neg_log_softmax(cat, 2).unwrap();
                let t = g.concat(&[sc, nl]).unwrap();
                g.sum(t).unwrap()
            },
            1e-4,
        );
    }

    #[test]
    fn large_finite_inputs_stay_finite() {
        let store = ParameterStore::new();
        let mut g = Graph::new(&store);
        let x = g.input(Tensor::vector(vec![1e3, -1e3, 5e2])).unwrap();
        let ops = [g.tanh(x).unwrap(), g.sigmoid(x).unwrap(), g.softmax(x).unwrap()];
        for v in ops {
            assert!(g.value(v).is_finite());
        }
        let nl = g.neg_log_softmax(x, 1).unwrap();
        assert!(g.value(nl).is_finite());
    }
}
