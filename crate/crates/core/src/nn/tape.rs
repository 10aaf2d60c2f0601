//! Reverse-mode automatic differentiation over a linear tape.
//!
//! Nodes are appended in evaluation order, so the node index is already a
//! topological order and backward is a single reverse sweep. Parameters are
//! read in place from a borrowed [`ParamStore`]; each parameter gets one node
//! per tape no matter how many times it is used, so its gradient accumulates
//! into a single buffer.

use super::params::{Grads, ParamId, ParamStore};
use super::tensor::{Real, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op<T> {
    Input,
    Param(ParamId),
    MatVec { w: Var, x: Var },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, T),
    ScaleBy { x: Var, s: Var },
    AddConst(Var),
    AddN(Vec<Var>),
    Dot(Var, Var),
    Tanh(Var),
    Sigmoid(Var),
    Exp(Var),
    Log(Var),
    Square(Var),
    Softmax(Var),
    LogSoftmax(Var),
    Concat(Vec<Var>),
    Slice { x: Var, start: usize },
    Gather { table: Var, row: usize },
    Sum(Var),
}

#[derive(Clone, Debug)]
struct Node<T> {
    shape: Vec<usize>,
    value: Vec<T>,
    op: Op<T>,
}

pub struct Tape<'p, T: Real> {
    params: &'p ParamStore<T>,
    param_nodes: Vec<Option<Var>>,
    nodes: Vec<Node<T>>,
}

impl<'p, T: Real> Tape<'p, T> {
    pub fn new(params: &'p ParamStore<T>) -> Self {
        Self {
            params,
            param_nodes: vec![None; params.len()],
            nodes: Vec::with_capacity(256),
        }
    }

    pub fn params(&self) -> &'p ParamStore<T> {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, shape: Vec<usize>, value: Vec<T>, op: Op<T>) -> Var {
        self.nodes.push(Node { shape, value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &[T] {
        let node = &self.nodes[v.0];
        match node.op {
            Op::Param(id) => self.params.get(id).data(),
            _ => &node.value,
        }
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].shape
    }

    pub fn size(&self, v: Var) -> usize {
        self.value(v).len()
    }

    /// Value of a single-element node.
    pub fn scalar(&self, v: Var) -> T {
        let val = self.value(v);
        assert_eq!(val.len(), 1, "scalar() on a node with {} values", val.len());
        val[0]
    }

    pub fn input(&mut self, t: Tensor<T>) -> Var {
        let shape = t.shape().to_vec();
        let value = t.data().to_vec();
        self.push(shape, value, Op::Input)
    }

    pub fn vector(&mut self, values: Vec<T>) -> Var {
        let n = values.len();
        self.push(vec![n], values, Op::Input)
    }

    pub fn constant(&mut self, x: T) -> Var {
        self.push(vec![1], vec![x], Op::Input)
    }

    pub fn zeros(&mut self, n: usize) -> Var {
        self.push(vec![n], vec![T::zero(); n], Op::Input)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_nodes[id.0] {
            return v;
        }
        let shape = self.params.get(id).shape().to_vec();
        let v = self.push(shape, Vec::new(), Op::Param(id));
        self.param_nodes[id.0] = Some(v);
        v
    }

    /// `W x` for a matrix `W: [m, n]` and vector `x: [n]`.
    pub fn matvec(&mut self, w: Var, x: Var) -> Var {
        let ws = self.shape(w);
        assert_eq!(ws.len(), 2, "matvec expects a matrix, got shape {ws:?}");
        let (m, n) = (ws[0], ws[1]);
        assert_eq!(self.size(x), n, "matvec: matrix {m}x{n} times vector of {}", self.size(x));
        let wv = self.value(w);
        let xv = self.value(x);
        let out: Vec<T> = (0..m).map(|i| T::dot(&wv[i * n..(i + 1) * n], xv)).collect();
        self.push(vec![m], out, Op::MatVec { w, x })
    }

    fn binary_check(&self, a: Var, b: Var, what: &str) {
        assert_eq!(
            self.size(a),
            self.size(b),
            "{what}: operand sizes {} and {} differ",
            self.size(a),
            self.size(b)
        );
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.binary_check(a, b, "add");
        let out = self.value(a).iter().zip(self.value(b)).map(|(x, y)| *x + *y).collect();
        let shape = self.shape(a).to_vec();
        self.push(shape, out, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.binary_check(a, b, "sub");
        let out = self.value(a).iter().zip(self.value(b)).map(|(x, y)| *x - *y).collect();
        let shape = self.shape(a).to_vec();
        self.push(shape, out, Op::Sub(a, b))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.binary_check(a, b, "mul");
        let out = self.value(a).iter().zip(self.value(b)).map(|(x, y)| *x * *y).collect();
        let shape = self.shape(a).to_vec();
        self.push(shape, out, Op::Mul(a, b))
    }

    pub fn scale(&mut self, x: Var, c: T) -> Var {
        let out = self.value(x).iter().map(|v| *v * c).collect();
        let shape = self.shape(x).to_vec();
        self.push(shape, out, Op::Scale(x, c))
    }

    pub fn neg(&mut self, x: Var) -> Var {
        self.scale(x, -T::one())
    }

    /// Vector times a single-element node.
    pub fn scale_by(&mut self, x: Var, s: Var) -> Var {
        assert_eq!(self.size(s), 1, "scale_by expects a scalar factor");
        let c = self.value(s)[0];
        let out = self.value(x).iter().map(|v| *v * c).collect();
        let shape = self.shape(x).to_vec();
        self.push(shape, out, Op::ScaleBy { x, s })
    }

    pub fn add_const(&mut self, x: Var, c: T) -> Var {
        let out = self.value(x).iter().map(|v| *v + c).collect();
        let shape = self.shape(x).to_vec();
        self.push(shape, out, Op::AddConst(x))
    }

    /// Sum of equally sized nodes.
    pub fn add_n(&mut self, xs: &[Var]) -> Var {
        assert!(!xs.is_empty(), "add_n of nothing");
        let n = self.size(xs[0]);
        let mut out = vec![T::zero(); n];
        for &x in xs {
            assert_eq!(self.size(x), n, "add_n: size mismatch");
            for (o, v) in out.iter_mut().zip(self.value(x)) {
                *o = *o + *v;
            }
        }
        let shape = self.shape(xs[0]).to_vec();
        self.push(shape, out, Op::AddN(xs.to_vec()))
    }

    pub fn dot(&mut self, a: Var, b: Var) -> Var {
        self.binary_check(a, b, "dot");
        let out = T::dot(self.value(a), self.value(b));
        self.push(vec![1], vec![out], Op::Dot(a, b))
    }

    fn unary(&mut self, x: Var, f: impl Fn(T) -> T, op: Op<T>) -> Var {
        let out = self.value(x).iter().map(|v| f(*v)).collect();
        let shape = self.shape(x).to_vec();
        self.push(shape, out, op)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, T::tanh, Op::Tanh(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, sigmoid, Op::Sigmoid(x))
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(x, T::exp, Op::Exp(x))
    }

    /// Natural log; defined for positive inputs.
    pub fn log(&mut self, x: Var) -> Var {
        self.unary(x, T::ln, Op::Log(x))
    }

    pub fn square(&mut self, x: Var) -> Var {
        self.unary(x, |v| v * v, Op::Square(x))
    }

    pub fn softmax(&mut self, x: Var) -> Var {
        let out = softmax(self.value(x));
        let shape = self.shape(x).to_vec();
        self.push(shape, out, Op::Softmax(x))
    }

    pub fn log_softmax(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let lse = log_sum_exp(xv);
        let out = xv.iter().map(|v| *v - lse).collect();
        let shape = self.shape(x).to_vec();
        self.push(shape, out, Op::LogSoftmax(x))
    }

    pub fn concat(&mut self, xs: &[Var]) -> Var {
        let mut out = Vec::with_capacity(xs.iter().map(|x| self.size(*x)).sum());
        for &x in xs {
            out.extend_from_slice(self.value(x));
        }
        let n = out.len();
        self.push(vec![n], out, Op::Concat(xs.to_vec()))
    }

    pub fn slice(&mut self, x: Var, start: usize, len: usize) -> Var {
        assert!(start + len <= self.size(x), "slice {start}..{} out of {}", start + len, self.size(x));
        let out = self.value(x)[start..start + len].to_vec();
        self.push(vec![len], out, Op::Slice { x, start })
    }

    /// Single element `x[i]` as a one-element node.
    pub fn pick(&mut self, x: Var, i: usize) -> Var {
        self.slice(x, i, 1)
    }

    /// Row `row` of an embedding table `[rows, dim]`.
    pub fn gather(&mut self, table: Var, row: usize) -> Var {
        let shape = self.shape(table);
        assert_eq!(shape.len(), 2, "gather expects a matrix");
        let (rows, dim) = (shape[0], shape[1]);
        assert!(row < rows, "gather row {row} out of {rows}");
        let out = self.value(table)[row * dim..(row + 1) * dim].to_vec();
        self.push(vec![dim], out, Op::Gather { table, row })
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).iter().copied().sum();
        self.push(vec![1], vec![s], Op::Sum(x))
    }

    /// `-log softmax(logits)[target]`
    pub fn cross_entropy(&mut self, logits: Var, target: usize) -> Var {
        let ls = self.log_softmax(logits);
        let p = self.pick(ls, target);
        self.neg(p)
    }

    /// Reverse sweep from a single-element `loss` node.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if self.size(loss) != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got {} values",
                self.size(loss)
            )));
        }
        let mut grads: Vec<Option<Vec<T>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![T::one()]);

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else {
                continue;
            };
            let node = &self.nodes[i];
            match &node.op {
                Op::Input | Op::Param(_) => {
                    grads[i] = Some(g);
                    continue;
                }
                Op::MatVec { w, x } => {
                    let wv = self.value(*w);
                    let xv = self.value(*x);
                    let n = xv.len();
                    {
                        let gw = slot(&mut grads, *w, wv.len());
                        for (r, gi) in g.iter().enumerate() {
                            if *gi != T::zero() {
                                T::axpy(*gi, xv, &mut gw[r * n..(r + 1) * n]);
                            }
                        }
                    }
                    let gx = slot(&mut grads, *x, n);
                    for (r, gi) in g.iter().enumerate() {
                        if *gi != T::zero() {
                            T::axpy(*gi, &wv[r * n..(r + 1) * n], gx);
                        }
                    }
                }
                Op::Add(a, b) => {
                    add_into(slot(&mut grads, *a, g.len()), &g);
                    add_into(slot(&mut grads, *b, g.len()), &g);
                }
                Op::Sub(a, b) => {
                    add_into(slot(&mut grads, *a, g.len()), &g);
                    T::axpy(-T::one(), &g, slot(&mut grads, *b, g.len()));
                }
                Op::Mul(a, b) => {
                    let av = self.value(*a);
                    let bv = self.value(*b);
                    let ga = slot(&mut grads, *a, g.len());
                    for ((o, gi), bi) in ga.iter_mut().zip(&g).zip(bv) {
                        *o = *o + *gi * *bi;
                    }
                    let gb = slot(&mut grads, *b, g.len());
                    for ((o, gi), ai) in gb.iter_mut().zip(&g).zip(av) {
                        *o = *o + *gi * *ai;
                    }
                }
                Op::Scale(x, c) => {
                    T::axpy(*c, &g, slot(&mut grads, *x, g.len()));
                }
                Op::ScaleBy { x, s } => {
                    let c = self.value(*s)[0];
                    let xv = self.value(*x);
                    T::axpy(c, &g, slot(&mut grads, *x, g.len()));
                    let gs = T::dot(&g, xv);
                    let gsl = slot(&mut grads, *s, 1);
                    gsl[0] = gsl[0] + gs;
                }
                Op::AddConst(x) => {
                    add_into(slot(&mut grads, *x, g.len()), &g);
                }
                Op::AddN(xs) => {
                    for x in xs {
                        add_into(slot(&mut grads, *x, g.len()), &g);
                    }
                }
                Op::Dot(a, b) => {
                    let gi = g[0];
                    let av = self.value(*a);
                    let bv = self.value(*b);
                    T::axpy(gi, bv, slot(&mut grads, *a, av.len()));
                    T::axpy(gi, av, slot(&mut grads, *b, bv.len()));
                }
                Op::Tanh(x) => {
                    let y = &node.value;
                    let gx = slot(&mut grads, *x, g.len());
                    for ((o, gi), yi) in gx.iter_mut().zip(&g).zip(y) {
                        *o = *o + *gi * (T::one() - *yi * *yi);
                    }
                }
                Op::Sigmoid(x) => {
                    let y = &node.value;
                    let gx = slot(&mut grads, *x, g.len());
                    for ((o, gi), yi) in gx.iter_mut().zip(&g).zip(y) {
                        *o = *o + *gi * *yi * (T::one() - *yi);
                    }
                }
                Op::Exp(x) => {
                    let y = &node.value;
                    let gx = slot(&mut grads, *x, g.len());
                    for ((o, gi), yi) in gx.iter_mut().zip(&g).zip(y) {
                        *o = *o + *gi * *yi;
                    }
                }
                Op::Log(x) => {
                    let xv = self.value(*x);
                    let gx = slot(&mut grads, *x, g.len());
                    for ((o, gi), xi) in gx.iter_mut().zip(&g).zip(xv) {
                        *o = *o + *gi / *xi;
                    }
                }
                Op::Square(x) => {
                    let xv = self.value(*x);
                    let two = T::from_f64(2.0);
                    let gx = slot(&mut grads, *x, g.len());
                    for ((o, gi), xi) in gx.iter_mut().zip(&g).zip(xv) {
                        *o = *o + two * *gi * *xi;
                    }
                }
                Op::Softmax(x) => {
                    let y = &node.value;
                    let s = T::dot(&g, y);
                    let gx = slot(&mut grads, *x, g.len());
                    for ((o, gi), yi) in gx.iter_mut().zip(&g).zip(y) {
                        *o = *o + *yi * (*gi - s);
                    }
                }
                Op::LogSoftmax(x) => {
                    let y = &node.value;
                    let s: T = g.iter().copied().sum();
                    let gx = slot(&mut grads, *x, g.len());
                    for ((o, gi), yi) in gx.iter_mut().zip(&g).zip(y) {
                        *o = *o + *gi - yi.exp() * s;
                    }
                }
                Op::Concat(xs) => {
                    let mut off = 0;
                    for x in xs {
                        let n = self.size(*x);
                        add_into(slot(&mut grads, *x, n), &g[off..off + n]);
                        off += n;
                    }
                }
                Op::Slice { x, start } => {
                    let n = self.size(*x);
                    let gx = slot(&mut grads, *x, n);
                    add_into(&mut gx[*start..*start + g.len()], &g);
                }
                Op::Gather { table, row } => {
                    let n = self.size(*table);
                    let dim = g.len();
                    let gt = slot(&mut grads, *table, n);
                    add_into(&mut gt[row * dim..(row + 1) * dim], &g);
                }
                Op::Sum(x) => {
                    let n = self.size(*x);
                    let gi = g[0];
                    for o in slot(&mut grads, *x, n).iter_mut() {
                        *o = *o + gi;
                    }
                }
            }
        }

        let param_of = self
            .nodes
            .iter()
            .map(|n| match n.op {
                Op::Param(id) => Some(id),
                _ => None,
            })
            .collect();
        Ok(Gradients { grads, param_of })
    }
}

/// Gradients of a backward pass with respect to the tape's leaves.
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
    param_of: Vec<Option<ParamId>>,
}

impl<T: Real> Gradients<T> {
    /// Gradient of a leaf node; zeros when the leaf did not influence the loss.
    pub fn wrt(&self, v: Var, tape: &Tape<'_, T>) -> Vec<T> {
        self.grads[v.0]
            .clone()
            .unwrap_or_else(|| vec![T::zero(); tape.size(v)])
    }

    /// Add every parameter gradient into `out`.
    pub fn accumulate(&self, out: &mut Grads<T>) {
        for (g, p) in self.grads.iter().zip(&self.param_of) {
            if let (Some(g), Some(id)) = (g, p) {
                add_into(out.get_mut(*id), g);
            }
        }
    }
}

fn slot<T: Real>(grads: &mut [Option<Vec<T>>], v: Var, n: usize) -> &mut [T] {
    grads[v.0].get_or_insert_with(|| vec![T::zero(); n])
}

#[inline]
fn add_into<T: Real>(dst: &mut [T], src: &[T]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d = *d + *s;
    }
}

#[inline]
pub fn sigmoid<T: Real>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

pub fn log_sum_exp<T: Real>(xs: &[T]) -> T {
    let max = xs.iter().copied().fold(T::neg_infinity(), T::max);
    if !max.is_finite() {
        return max;
    }
    max + xs.iter().map(|x| (*x - max).exp()).sum::<T>().ln()
}

pub fn softmax<T: Real>(xs: &[T]) -> Vec<T> {
    let max = xs.iter().copied().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = xs.iter().map(|x| (*x - max).exp()).collect();
    let total: T = exps.iter().copied().sum();
    exps.into_iter().map(|e| e / total).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store_with(values: &[f64]) -> (ParamStore<f64>, ParamId) {
        let mut s = ParamStore::new();
        let id = s.add("theta", Tensor::vector(values.to_vec()));
        (s, id)
    }

    #[test]
    fn square_gradient_at_three() {
        let (store, id) = store_with(&[3.0]);
        let mut tape = Tape::new(&store);
        let th = tape.param(id);
        let y = tape.square(th);
        let g = tape.backward(y).unwrap();
        assert_eq!(g.wrt(th, &tape), vec![6.0]);
    }

    #[test]
    fn constant_loss_gives_zero_gradient() {
        let (store, id) = store_with(&[3.0]);
        let mut tape = Tape::new(&store);
        let th = tape.param(id);
        let c = tape.constant(5.0);
        let grads = tape.backward(c).unwrap();
        assert_eq!(grads.wrt(th, &tape), vec![0.0]);
        let mut acc = store.zero_grads();
        grads.accumulate(&mut acc);
        assert_eq!(acc.get(id), &[0.0]);
    }

    #[test]
    fn non_scalar_loss_is_a_contract_error() {
        let (store, id) = store_with(&[1.0, 2.0]);
        let mut tape = Tape::new(&store);
        let th = tape.param(id);
        let y = tape.tanh(th);
        assert!(matches!(tape.backward(y), Err(Error::Contract(_))));
    }

    #[test]
    fn param_node_is_shared_within_a_tape() {
        let (store, id) = store_with(&[2.0]);
        let mut tape = Tape::new(&store);
        let a = tape.param(id);
        let b = tape.param(id);
        assert_eq!(a, b);
        let y = tape.mul(a, b);
        let mut acc = store.zero_grads();
        tape.backward(y).unwrap().accumulate(&mut acc);
        assert_eq!(acc.get(id), &[4.0]);
    }

    #[test]
    fn softmax_is_shift_invariant() {
        let a = softmax(&[1.0f64, 2.0, -3.0]);
        let b = softmax(&[101.0f64, 102.0, 97.0]);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
        assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn sigmoid_is_stable_for_large_inputs() {
        assert_eq!(sigmoid(1000.0f64), 1.0);
        assert_eq!(sigmoid(-1000.0f64), 0.0);
        assert!((sigmoid(0.0f32) - 0.5).abs() < 1e-7);
    }

    #[test]
    fn cross_entropy_matches_log_softmax() {
        let store = ParamStore::<f64>::new();
        let mut tape = Tape::new(&store);
        let logits = tape.vector(vec![0.5, -1.0, 2.0]);
        let ce = tape.cross_entropy(logits, 2);
        let expected = -(2.0 - log_sum_exp(&[0.5, -1.0, 2.0]));
        assert!((tape.scalar(ce) - expected).abs() < 1e-12);
    }
}
