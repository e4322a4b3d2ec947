//! Dynamic reverse-mode tape.
//!
//! A [`Tape`] is rebuilt for every example. Parameters are read straight from
//! a shared [`ParamStore`]; [`Tape::backward`] returns a fresh [`Grads`] so
//! several workers can hold private tapes over the same parameters.

use crate::error::{Error, Result};
use crate::tensorcore::tensor::{self, matvec_acc};
use crate::tensorcore::{Grads, ParamId, ParamStore, Tensor};

/// Handle to a value recorded on a tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Param(ParamId),
    Gather(ParamId, usize),
    MatMul(Var, Var),
    Add(Var, Var),
    AddN(Vec<Var>),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Concat(Vec<Var>),
    Slice(Var, usize),
    Tanh(Var),
    Sigmoid(Var),
    Softmax(Var),
    LogSoftmax(Var),
    Log(Var),
    WeightedSum(Var, Vec<Var>),
    Dot(Var, Var),
    Sum(Var),
    Mean(Var),
    Pick(Var, usize),
}

#[derive(Debug)]
struct Node {
    shape: Vec<usize>,
    // empty for `Op::Param`, whose value lives in the store
    value: Vec<f64>,
    op: Op,
}

pub struct Tape<'s> {
    store: &'s ParamStore,
    nodes: Vec<Node>,
    param_vars: Vec<Option<Var>>,
}

fn shapes(parts: &[&[usize]]) -> String {
    parts.iter().map(|s| format!("{s:?}")).collect::<Vec<_>>().join(" vs ")
}

impl<'s> Tape<'s> {
    pub fn new(store: &'s ParamStore) -> Self {
        Tape { store, nodes: Vec::new(), param_vars: vec![None; store.len()] }
    }

    pub fn store(&self) -> &'s ParamStore {
        self.store
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, shape: Vec<usize>, value: Vec<f64>, op: Op) -> Result<Var> {
        if let Some(bad) = value.iter().find(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("{bad} produced by {:?}", op_name(&op))));
        }
        self.nodes.push(Node { shape, value, op });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn value(&self, v: Var) -> &[f64] {
        match self.nodes[v.0].op {
            Op::Param(id) => self.store.get(id).data(),
            _ => &self.nodes[v.0].value,
        }
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.value(v)[0]
    }

    pub fn tensor(&self, v: Var) -> Tensor {
        Tensor::new(self.shape(v).to_vec(), self.value(v).to_vec()).expect("consistent node")
    }

    pub fn constant(&mut self, t: Tensor) -> Result<Var> {
        let shape = t.shape().to_vec();
        self.push(shape, t.into_data(), Op::Leaf)
    }

    pub fn vector(&mut self, data: Vec<f64>) -> Result<Var> {
        self.constant(Tensor::vector(data))
    }

    /// The parameter as a differentiable value; repeated calls share one node.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars[id.0] {
            return v;
        }
        let shape = self.store.get(id).shape().to_vec();
        self.nodes.push(Node { shape, value: Vec::new(), op: Op::Param(id) });
        let v = Var(self.nodes.len() - 1);
        self.param_vars[id.0] = Some(v);
        v
    }

    /// Row `row` of a rank-2 parameter (embedding lookup).
    pub fn gather(&mut self, table: ParamId, row: usize) -> Result<Var> {
        let t = self.store.get(table);
        if t.rank() != 2 || row >= t.shape()[0] {
            return Err(Error::shape("gather", format!("row {row} of {:?}", t.shape())));
        }
        let value = t.row(row).to_vec();
        self.push(vec![t.shape()[1]], value, Op::Gather(table, row))
    }

    /// `[m,k] x [k,n]` or `[m,k] x [k]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        let bad = || Error::shape("matmul", shapes(&[&sa, &sb]));
        if sa.len() != 2 || sb.is_empty() || sb.len() > 2 || sa[1] != sb[0] {
            return Err(bad());
        }
        let (m, k) = (sa[0], sa[1]);
        if sb.len() == 1 {
            let mut out = vec![0.0; m];
            matvec_acc(self.value(a), m, k, self.value(b), &mut out);
            self.push(vec![m], out, Op::MatMul(a, b))
        } else {
            let n = sb[1];
            let out = tensor::matmul(self.value(a), self.value(b), m, k, n);
            self.push(vec![m, n], out, Op::MatMul(a, b))
        }
    }

    fn same_shape(&self, kind: &'static str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape(kind, shapes(&[self.shape(a), self.shape(b)])));
        }
        Ok(())
    }

    fn zip_with(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Result<Var> {
        let out = self.value(a).iter().zip(self.value(b)).map(|(&x, &y)| f(x, y)).collect();
        self.push(self.shape(a).to_vec(), out, op)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        self.zip_with(a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        self.zip_with(a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        self.zip_with(a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn add_n(&mut self, vars: &[Var]) -> Result<Var> {
        let first = *vars.first().ok_or_else(|| Error::shape("add_n", "no operands"))?;
        for &v in &vars[1..] {
            self.same_shape("add_n", first, v)?;
        }
        // compensated (Neumaier) summation: losses are sums of many terms and
        // finite-difference checks difference two such sums
        let n = self.value(first).len();
        let mut sum = vec![0.0; n];
        let mut carry = vec![0.0; n];
        for &v in vars {
            for ((s, c), &x) in sum.iter_mut().zip(carry.iter_mut()).zip(self.value(v)) {
                let t = *s + x;
                *c += if s.abs() >= x.abs() { (*s - t) + x } else { (x - t) + *s };
                *s = t;
            }
        }
        let out = sum.iter().zip(&carry).map(|(s, c)| s + c).collect();
        self.push(self.shape(first).to_vec(), out, Op::AddN(vars.to_vec()))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var> {
        let out = self.value(a).iter().map(|x| x * s).collect();
        self.push(self.shape(a).to_vec(), out, Op::Scale(a, s))
    }

    /// Joins vectors (and scalars, as length-1 pieces) end to end.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let mut out = Vec::new();
        for &p in parts {
            if self.shape(p).len() > 1 {
                let all: Vec<_> = parts.iter().map(|&q| self.shape(q).to_vec()).collect();
                return Err(Error::shape("concat", format!("{all:?}")));
            }
            out.extend_from_slice(self.value(p));
        }
        let n = out.len();
        self.push(vec![n], out, Op::Concat(parts.to_vec()))
    }

    /// Elements `start..start + len` of a vector.
    pub fn slice(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let sa = self.shape(a);
        if sa.len() != 1 || start + len > sa[0] {
            return Err(Error::shape("split", format!("{sa:?} at {start}..{}", start + len)));
        }
        let out = self.value(a)[start..start + len].to_vec();
        self.push(vec![len], out, Op::Slice(a, start))
    }

    /// Splits a vector into consecutive pieces of the given sizes.
    pub fn split(&mut self, a: Var, sizes: &[usize]) -> Result<Vec<Var>> {
        let total: usize = sizes.iter().sum();
        if self.shape(a) != [total] {
            return Err(Error::shape("split", format!("{:?} into {sizes:?}", self.shape(a))));
        }
        let mut start = 0;
        let mut out = Vec::with_capacity(sizes.len());
        for &n in sizes {
            out.push(self.slice(a, start, n)?);
            start += n;
        }
        Ok(out)
    }

    fn map(&mut self, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Result<Var> {
        let out = self.value(a).iter().map(|&x| f(x)).collect();
        self.push(self.shape(a).to_vec(), out, op)
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.map(a, f64::tanh, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.map(a, tensor::sigmoid, Op::Sigmoid(a))
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        self.map(a, f64::ln, Op::Log(a))
    }

    fn vector_only(&self, kind: &'static str, a: Var) -> Result<()> {
        if self.shape(a).len() != 1 || self.shape(a)[0] == 0 {
            return Err(Error::shape(kind, format!("{:?}", self.shape(a))));
        }
        Ok(())
    }

    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        self.vector_only("softmax", a)?;
        let out = tensor::softmax(self.value(a));
        self.push(self.shape(a).to_vec(), out, Op::Softmax(a))
    }

    pub fn log_softmax(&mut self, a: Var) -> Result<Var> {
        self.vector_only("log_softmax", a)?;
        let out = tensor::log_softmax(self.value(a));
        self.push(self.shape(a).to_vec(), out, Op::LogSoftmax(a))
    }

    /// `Σ_i weights[i] · items[i]` for a weight vector and same-shape items.
    pub fn weighted_sum(&mut self, weights: Var, items: &[Var]) -> Result<Var> {
        if self.shape(weights) != [items.len()] || items.is_empty() {
            return Err(Error::shape(
                "weighted_sum",
                format!("weights {:?} for {} items", self.shape(weights), items.len()),
            ));
        }
        let first = items[0];
        for &v in &items[1..] {
            self.same_shape("weighted_sum", first, v)?;
        }
        let mut out = vec![0.0; self.value(first).len()];
        for (i, &v) in items.iter().enumerate() {
            let w = self.value(weights)[i];
            out.iter_mut().zip(self.value(v)).for_each(|(o, x)| *o += w * x);
        }
        self.push(self.shape(first).to_vec(), out, Op::WeightedSum(weights, items.to_vec()))
    }

    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("dot", a, b)?;
        let v = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x * y).sum();
        self.push(Vec::new(), vec![v], Op::Dot(a, b))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).iter().sum();
        self.push(Vec::new(), vec![v], Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let n = self.value(a).len();
        if n == 0 {
            return Err(Error::shape("mean", "empty operand"));
        }
        let v = self.value(a).iter().sum::<f64>() / n as f64;
        self.push(Vec::new(), vec![v], Op::Mean(a))
    }

    /// Element `i` of a vector as a scalar.
    pub fn pick(&mut self, a: Var, i: usize) -> Result<Var> {
        if self.shape(a).len() != 1 || i >= self.shape(a)[0] {
            return Err(Error::shape("pick", format!("index {i} of {:?}", self.shape(a))));
        }
        let v = self.value(a)[i];
        self.push(Vec::new(), vec![v], Op::Pick(a, i))
    }

    /// Propagates d(loss)/d(node) back through the tape and returns the
    /// parameter gradients. Parameters the loss does not reach get zeros.
    pub fn backward(&self, loss: Var) -> Result<Grads> {
        let mut grads = Grads::zeros_like(self.store);
        self.backward_into(loss, &mut grads)?;
        Ok(grads)
    }

    /// Like [`Tape::backward`] but accumulates into existing buffers.
    pub fn backward_into(&self, loss: Var, out: &mut Grads) -> Result<()> {
        if !self.shape(loss).is_empty() {
            return Err(Error::NonScalarLoss(self.shape(loss).to_vec()));
        }
        let mut g: Vec<Option<Vec<f64>>> = (0..=loss.0).map(|_| None).collect();
        g[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let Some(dy) = g[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf => {}
                Op::Param(id) => {
                    out.get_mut(*id).iter_mut().zip(&dy).for_each(|(o, d)| *o += d);
                }
                Op::Gather(id, row) => {
                    let cols = dy.len();
                    let dst = &mut out.get_mut(*id)[row * cols..(row + 1) * cols];
                    dst.iter_mut().zip(&dy).for_each(|(o, d)| *o += d);
                }
                Op::MatMul(a, b) => {
                    let (sa, sb) = (&self.nodes[a.0].shape, &self.nodes[b.0].shape);
                    let (m, k) = (sa[0], sa[1]);
                    let n = if sb.len() == 1 { 1 } else { sb[1] };
                    let (av, bv) = (self.value(*a), self.value(*b));
                    // dA = dY · Bᵀ
                    let ga = acc(&mut g, *a, m * k);
                    for i in 0..m {
                        for j in 0..n {
                            let d = dy[i * n + j];
                            if d == 0.0 {
                                continue;
                            }
                            let row = &mut ga[i * k..(i + 1) * k];
                            for p in 0..k {
                                row[p] += d * bv[p * n + j];
                            }
                        }
                    }
                    // dB = Aᵀ · dY
                    let gb = acc(&mut g, *b, k * n);
                    for i in 0..m {
                        let arow = &av[i * k..(i + 1) * k];
                        for j in 0..n {
                            let d = dy[i * n + j];
                            if d == 0.0 {
                                continue;
                            }
                            for p in 0..k {
                                gb[p * n + j] += arow[p] * d;
                            }
                        }
                    }
                }
                Op::Add(a, b) => {
                    add_into(acc(&mut g, *a, dy.len()), &dy, 1.0);
                    add_into(acc(&mut g, *b, dy.len()), &dy, 1.0);
                }
                Op::AddN(vs) => {
                    for v in vs {
                        add_into(acc(&mut g, *v, dy.len()), &dy, 1.0);
                    }
                }
                Op::Sub(a, b) => {
                    add_into(acc(&mut g, *a, dy.len()), &dy, 1.0);
                    add_into(acc(&mut g, *b, dy.len()), &dy, -1.0);
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let ga = acc(&mut g, *a, dy.len());
                    ga.iter_mut().zip(&dy).zip(bv).for_each(|((o, d), y)| *o += d * y);
                    let gb = acc(&mut g, *b, dy.len());
                    gb.iter_mut().zip(&dy).zip(av).for_each(|((o, d), x)| *o += d * x);
                }
                Op::Scale(a, s) => add_into(acc(&mut g, *a, dy.len()), &dy, *s),
                Op::Concat(parts) => {
                    let mut start = 0;
                    for p in parts {
                        let n = self.value(*p).len();
                        add_into(acc(&mut g, *p, n), &dy[start..start + n], 1.0);
                        start += n;
                    }
                }
                Op::Slice(a, start) => {
                    let n = self.nodes[a.0].shape[0];
                    add_into(&mut acc(&mut g, *a, n)[*start..*start + dy.len()], &dy, 1.0);
                }
                Op::Tanh(a) => {
                    let y = &node.value;
                    let ga = acc(&mut g, *a, dy.len());
                    for i in 0..dy.len() {
                        ga[i] += dy[i] * (1.0 - y[i] * y[i]);
                    }
                }
                Op::Sigmoid(a) => {
                    let y = &node.value;
                    let ga = acc(&mut g, *a, dy.len());
                    for i in 0..dy.len() {
                        ga[i] += dy[i] * y[i] * (1.0 - y[i]);
                    }
                }
                Op::Log(a) => {
                    let x = self.value(*a);
                    let ga = acc(&mut g, *a, dy.len());
                    for i in 0..dy.len() {
                        ga[i] += dy[i] / x[i];
                    }
                }
                Op::Softmax(a) => {
                    let y = &node.value;
                    let inner: f64 = dy.iter().zip(y).map(|(d, p)| d * p).sum();
                    let ga = acc(&mut g, *a, dy.len());
                    for i in 0..dy.len() {
                        ga[i] += y[i] * (dy[i] - inner);
                    }
                }
                Op::LogSoftmax(a) => {
                    let total: f64 = dy.iter().sum();
                    let y = &node.value;
                    let ga = acc(&mut g, *a, dy.len());
                    for i in 0..dy.len() {
                        ga[i] += dy[i] - y[i].exp() * total;
                    }
                }
                Op::WeightedSum(w, items) => {
                    let wv = self.value(*w);
                    let mut gw = vec![0.0; items.len()];
                    for (i, item) in items.iter().enumerate() {
                        gw[i] = self.value(*item).iter().zip(&dy).map(|(x, d)| x * d).sum();
                        add_into(acc(&mut g, *item, dy.len()), &dy, wv[i]);
                    }
                    add_into(acc(&mut g, *w, items.len()), &gw, 1.0);
                }
                Op::Dot(a, b) => {
                    let d = dy[0];
                    let (av, bv) = (self.value(*a), self.value(*b));
                    add_into(acc(&mut g, *a, av.len()), bv, d);
                    add_into(acc(&mut g, *b, bv.len()), av, d);
                }
                Op::Sum(a) => {
                    let n = self.value(*a).len();
                    acc(&mut g, *a, n).iter_mut().for_each(|o| *o += dy[0]);
                }
                Op::Mean(a) => {
                    let n = self.value(*a).len();
                    let d = dy[0] / n as f64;
                    acc(&mut g, *a, n).iter_mut().for_each(|o| *o += d);
                }
                Op::Pick(a, i) => {
                    let n = self.nodes[a.0].shape[0];
                    acc(&mut g, *a, n)[*i] += dy[0];
                }
            }
        }
        Ok(())
    }
}

fn acc(g: &mut [Option<Vec<f64>>], v: Var, n: usize) -> &mut Vec<f64> {
    g[v.0].get_or_insert_with(|| vec![0.0; n])
}

fn add_into(dst: &mut [f64], src: &[f64], s: f64) {
    dst.iter_mut().zip(src).for_each(|(o, x)| *o += s * x);
}

fn op_name(op: &Op) -> &'static str {
    match op {
        Op::Leaf => "constant",
        Op::Param(_) => "param",
        Op::Gather(..) => "embedding-gather",
        Op::MatMul(..) => "matmul",
        Op::Add(..) | Op::AddN(_) => "add",
        Op::Sub(..) => "sub",
        Op::Mul(..) => "elementwise-multiply",
        Op::Scale(..) => "scale",
        Op::Concat(_) => "concat",
        Op::Slice(..) => "split",
        Op::Tanh(_) => "tanh",
        Op::Sigmoid(_) => "sigmoid",
        Op::Softmax(_) => "softmax",
        Op::LogSoftmax(_) => "log_softmax",
        Op::Log(_) => "log",
        Op::WeightedSum(..) => "weighted-sum",
        Op::Dot(..) => "dot",
        Op::Sum(_) => "sum",
        Op::Mean(_) => "mean",
        Op::Pick(..) => "pick",
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn store_with(name: &str, t: Tensor) -> (ParamStore, ParamId) {
        let mut s = ParamStore::new();
        let id = s.add(name, t).unwrap();
        (s, id)
    }

    #[test]
    fn identity_matmul() {
        let a = Tensor::new(vec![2, 3], vec![1., 2., 3., 4., 5., 6.]).unwrap();
        let eye = Tensor::new(vec![2, 2], vec![1., 0., 0., 1.]).unwrap();
        let store = ParamStore::new();
        let mut t = Tape::new(&store);
        let (i, x) = (t.constant(eye).unwrap(), t.constant(a.clone()).unwrap());
        let y = t.matmul(i, x).unwrap();
        assert_eq!(t.tensor(y), a);
    }

    #[test]
    fn shape_errors_name_the_kind() {
        let store = ParamStore::new();
        let mut t = Tape::new(&store);
        let a = t.vector(vec![1.0, 2.0]).unwrap();
        let b = t.vector(vec![1.0, 2.0, 3.0]).unwrap();
        let err = t.add(a, b).unwrap_err().to_string();
        assert!(err.contains("add") && err.contains("[2]") && err.contains("[3]"), "{err}");
        let m = t.constant(Tensor::zeros(&[2, 2])).unwrap();
        assert!(t.matmul(m, b).unwrap_err().to_string().contains("matmul"));
    }

    #[test]
    fn softmax_op_normalized() {
        let store = ParamStore::new();
        let mut t = Tape::new(&store);
        let a = t.vector(vec![0.3, -2.0, 5.0, 1e-3]).unwrap();
        let p = t.softmax(a).unwrap();
        assert!((t.value(p).iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn sum_gradient_is_ones() {
        let (store, w) = store_with("w", Tensor::vector(vec![0.5, -1.0, 3.0]));
        let mut t = Tape::new(&store);
        let wv = t.param(w);
        let loss = t.sum(wv).unwrap();
        let g = t.backward(loss).unwrap();
        assert_eq!(g.get(w), [1.0, 1.0, 1.0]);
    }

    #[test]
    fn square_gradient_is_two_w() {
        let (store, w) = store_with("w", Tensor::vector(vec![0.5, -1.0, 3.0]));
        let mut t = Tape::new(&store);
        let wv = t.param(w);
        let sq = t.mul(wv, wv).unwrap();
        let loss = t.sum(sq).unwrap();
        let g = t.backward(loss).unwrap();
        assert_eq!(g.get(w), [1.0, -2.0, 6.0]);
    }

    #[test]
    fn tanh_derivative_at_zero_matches_finite_difference() {
        let h: f64 = 1e-6;
        let fd = (h.tanh() - (-h).tanh()) / (2.0 * h);
        let (store, w) = store_with("w", Tensor::vector(vec![0.0]));
        let mut t = Tape::new(&store);
        let wv = t.param(w);
        let y = t.tanh(wv).unwrap();
        let loss = t.sum(y).unwrap();
        let g = t.backward(loss).unwrap().get(w)[0];
        assert_eq!(g, 1.0);
        assert!((g - fd).abs() / g.abs() < 1e-7);
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let store = ParamStore::new();
        let mut t = Tape::new(&store);
        let a = t.vector(vec![1.0, 2.0]).unwrap();
        assert!(matches!(t.backward(a), Err(Error::NonScalarLoss(_))));
    }

    #[test]
    fn unreached_params_get_zero() {
        let mut store = ParamStore::new();
        let a = store.add("a", Tensor::vector(vec![1.0, 2.0])).unwrap();
        let b = store.add("b", Tensor::vector(vec![3.0])).unwrap();
        let mut t = Tape::new(&store);
        let _ = t.param(b);
        let av = t.param(a);
        let loss = t.sum(av).unwrap();
        let g = t.backward(loss).unwrap();
        assert_eq!(g.get(b), [0.0]);
    }

    #[test]
    fn non_finite_values_are_reported() {
        let store = ParamStore::new();
        let mut t = Tape::new(&store);
        let a = t.vector(vec![0.0]).unwrap();
        assert!(matches!(t.log(a), Err(Error::NonFinite(_))));
    }

    #[test]
    fn log_softmax_uniform() {
        let store = ParamStore::new();
        let mut t = Tape::new(&store);
        let a = t.vector(vec![0.0; 11]).unwrap();
        let lp = t.log_softmax(a).unwrap();
        assert!(t.value(lp).iter().all(|v| (v + 11f64.ln()).abs() < 1e-12));
    }

    // grad(a f + b g) = a grad f + b grad g
    #[test]
    fn backward_is_linear() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let mut store = ParamStore::new();
            let w = store.add("w", Tensor::uniform(&[3, 4], 1.0, &mut rng)).unwrap();
            let x = Tensor::uniform(&[4], 1.0, &mut rng);
            let (ca, cb) = (rand::Rng::gen_range(&mut rng, -2.0..2.0), 0.7);

            let f = |t: &mut Tape, xv: Var| -> Var {
                let wv = t.param(w);
                let y = t.matmul(wv, xv).unwrap();
                let y = t.tanh(y).unwrap();
                t.sum(y).unwrap()
            };
            let gfun = |t: &mut Tape, xv: Var| -> Var {
                let wv = t.param(w);
                let y = t.matmul(wv, xv).unwrap();
                let y = t.softmax(y).unwrap();
                t.pick(y, 1).unwrap()
            };

            let grad_of = |which: u8| -> Grads {
                let mut t = Tape::new(&store);
                let xv = t.constant(x.clone()).unwrap();
                let loss = match which {
                    0 => f(&mut t, xv),
                    1 => gfun(&mut t, xv),
                    _ => {
                        let a = f(&mut t, xv);
                        let b = gfun(&mut t, xv);
                        let a = t.scale(a, ca).unwrap();
                        let b = t.scale(b, cb).unwrap();
                        t.add(a, b).unwrap()
                    }
                };
                t.backward(loss).unwrap()
            };
            let (gf, gg, gc) = (grad_of(0), grad_of(1), grad_of(2));
            for i in 0..12 {
                let expect = ca * gf.get(w)[i] + cb * gg.get(w)[i];
                assert!((gc.get(w)[i] - expect).abs() < 1e-10);
            }
        }
    }
}
