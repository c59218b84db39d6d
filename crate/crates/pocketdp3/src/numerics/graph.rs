//! Reverse-mode tape over dense arrays.
//!
//! A [`Graph`] records the forward pass as a flat list of nodes (the tape)
//! and replays it in reverse to accumulate gradients. Parameters are not
//! copied onto the tape; nodes reference the [`ParamStore`] the graph was
//! opened over, and `backward` writes parameter gradients into an external
//! buffer so forward passes can run concurrently over a shared store.

use super::array::{Array, Scalar};
use super::param::{ParamId, ParamStore};
use crate::error::{Error, Result};

/// Handle to a node on the tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

enum Value<T> {
    Owned(Array<T>),
    Param(ParamId),
}

enum Op<T> {
    Leaf,
    Param(ParamId),
    Affine { x: Var, w: Var, b: Var },
    Transpose(Var),
    Gelu { x: Var, tanh_u: Vec<T> },
    Add(Var, Var),
    Mul(Var, Var),
    ConcatCols(Var, Var),
    SliceCols { x: Var, start: usize },
    RepeatRow(Var),
    MaxRows { x: Var, argmax: Vec<usize> },
    Reshape(Var),
    Mse { pred: Var, target: Array<T> },
}

struct Node<T> {
    value: Value<T>,
    op: Op<T>,
}

pub struct Graph<'s, T: Scalar> {
    store: &'s ParamStore<T>,
    nodes: Vec<Node<T>>,
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044715;

impl<'s, T: Scalar> Graph<'s, T> {
    pub fn new(store: &'s ParamStore<T>) -> Self {
        Graph {
            store,
            nodes: Vec::with_capacity(64),
        }
    }

    pub fn value(&self, v: Var) -> &Array<T> {
        match &self.nodes[v.0].value {
            Value::Owned(a) => a,
            Value::Param(id) => self.store.value(*id),
        }
    }

    fn push(&mut self, value: Array<T>, op: Op<T>) -> Var {
        self.nodes.push(Node {
            value: Value::Owned(value),
            op,
        });
        Var(self.nodes.len() - 1)
    }

    /// Constant leaf; no gradient flows into it.
    pub fn input(&mut self, value: Array<T>) -> Var {
        self.push(value, Op::Leaf)
    }

    /// Leaf bound to a store parameter; `backward` accumulates its gradient.
    pub fn param(&mut self, id: ParamId) -> Var {
        self.nodes.push(Node {
            value: Value::Param(id),
            op: Op::Param(id),
        });
        Var(self.nodes.len() - 1)
    }

    /// out[i,j] = sum_k x[i,k] * w[k,j] + b[j]
    pub fn affine(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (xs, ws, bs) = (
            self.value(x).shape().to_vec(),
            self.value(w).shape().to_vec(),
            self.value(b).shape().to_vec(),
        );
        if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[0] || bs != [ws[1]] {
            return Err(Error::Shape(format!(
                "affine: x {:?} · w {:?} + b {:?}",
                xs, ws, bs
            )));
        }
        let (n, p, q) = (xs[0], xs[1], ws[1]);
        let mut out = Array::zeros(&[n, q]);
        {
            let bv = self.value(b).data();
            let od = out.data_mut();
            for i in 0..n {
                od[i * q..(i + 1) * q].copy_from_slice(bv);
            }
        }
        unsafe {
            T::gemm(
                n,
                p,
                q,
                T::one(),
                self.value(x).data().as_ptr(),
                p as isize,
                1,
                self.value(w).data().as_ptr(),
                q as isize,
                1,
                T::one(),
                out.data_mut().as_mut_ptr(),
                q as isize,
                1,
            );
        }
        Ok(self.push(out, Op::Affine { x, w, b }))
    }

    pub fn transpose2d(&mut self, x: Var) -> Result<Var> {
        let xs = self.value(x).shape().to_vec();
        if xs.len() != 2 {
            return Err(Error::Shape(format!("transpose2d: rank-2 wanted, got {:?}", xs)));
        }
        let (n, p) = (xs[0], xs[1]);
        let xv = self.value(x);
        let mut out = Array::zeros(&[p, n]);
        for i in 0..n {
            for j in 0..p {
                *out.at_mut(j, i) = xv.at(i, j);
            }
        }
        Ok(self.push(out, Op::Transpose(x)))
    }

    /// Elementwise GELU, tanh approximation. The forward tanh values are
    /// kept on the tape so the backward pass avoids recomputing them.
    pub fn gelu(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let c = T::from_f64(GELU_C);
        let a = T::from_f64(GELU_A);
        let half = T::from_f64(0.5);
        let mut tanh_u = Vec::with_capacity(xv.numel());
        let mut out = Array::zeros(xv.shape());
        for (o, &v) in out.data_mut().iter_mut().zip(xv.data()) {
            let t = (c * (v + a * v * v * v)).tanh();
            tanh_u.push(t);
            *o = half * v * (T::one() + t);
        }
        self.push(out, Op::Gelu { x, tanh_u })
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).zip_map(self.value(b), |x, y| x + y)?;
        Ok(self.push(out, Op::Add(a, b)))
    }

    /// Hadamard product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).zip_map(self.value(b), |x, y| x * y)?;
        Ok(self.push(out, Op::Mul(a, b)))
    }

    /// Concatenate two rank-2 arrays along columns.
    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (asp, bsp) = (self.value(a).shape().to_vec(), self.value(b).shape().to_vec());
        if asp.len() != 2 || bsp.len() != 2 || asp[0] != bsp[0] {
            return Err(Error::Shape(format!("concat_cols: {:?} vs {:?}", asp, bsp)));
        }
        let (n, p, q) = (asp[0], asp[1], bsp[1]);
        let mut out = Array::zeros(&[n, p + q]);
        for i in 0..n {
            for j in 0..p {
                *out.at_mut(i, j) = self.value(a).at(i, j);
            }
            for j in 0..q {
                *out.at_mut(i, p + j) = self.value(b).at(i, j);
            }
        }
        Ok(self.push(out, Op::ConcatCols(a, b)))
    }

    /// Columns [start, start+len) of a rank-2 array.
    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let xs = self.value(x).shape().to_vec();
        if xs.len() != 2 || start + len > xs[1] {
            return Err(Error::Shape(format!(
                "slice_cols [{start}, {start}+{len}) of {:?}",
                xs
            )));
        }
        let n = xs[0];
        let mut out = Array::zeros(&[n, len]);
        for i in 0..n {
            for j in 0..len {
                *out.at_mut(i, j) = self.value(x).at(i, start + j);
            }
        }
        Ok(self.push(out, Op::SliceCols { x, start }))
    }

    /// Tile a 1-row array to `n` rows.
    pub fn repeat_row(&mut self, x: Var, n: usize) -> Result<Var> {
        let xs = self.value(x).shape().to_vec();
        if xs.len() != 2 || xs[0] != 1 {
            return Err(Error::Shape(format!("repeat_row wants [1, k], got {:?}", xs)));
        }
        let k = xs[1];
        let mut out = Array::zeros(&[n, k]);
        for i in 0..n {
            for j in 0..k {
                *out.at_mut(i, j) = self.value(x).at(0, j);
            }
        }
        Ok(self.push(out, Op::RepeatRow(x)))
    }

    /// Columnwise max over rows; ties resolve to the lowest row index.
    pub fn max_rows(&mut self, x: Var) -> Result<Var> {
        let xs = self.value(x).shape().to_vec();
        if xs.len() != 2 || xs[0] == 0 {
            return Err(Error::Shape(format!("max_rows wants non-empty rank-2, got {:?}", xs)));
        }
        let (n, k) = (xs[0], xs[1]);
        let mut out = Array::zeros(&[1, k]);
        let mut argmax = vec![0usize; k];
        for j in 0..k {
            let mut best = self.value(x).at(0, j);
            let mut bi = 0;
            for i in 1..n {
                let v = self.value(x).at(i, j);
                if v > best {
                    best = v;
                    bi = i;
                }
            }
            *out.at_mut(0, j) = best;
            argmax[j] = bi;
        }
        Ok(self.push(out, Op::MaxRows { x, argmax }))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).reshaped(shape)?;
        Ok(self.push(out, Op::Reshape(x)))
    }

    /// Mean squared error against a constant target; returns a scalar node.
    pub fn mse(&mut self, pred: Var, target: &Array<T>) -> Result<Var> {
        let p = self.value(pred);
        if p.shape() != target.shape() {
            return Err(Error::Shape(format!(
                "mse: pred {:?} vs target {:?}",
                p.shape(),
                target.shape()
            )));
        }
        let n = p.numel();
        let mut acc = T::zero();
        for (a, b) in p.data().iter().zip(target.data()) {
            let d = *a - *b;
            acc = acc + d * d;
        }
        let loss = acc / T::from_f64(n as f64);
        Ok(self.push(
            Array::scalar(loss),
            Op::Mse {
                pred,
                target: target.clone(),
            },
        ))
    }

    /// Reverse pass from a scalar node. Parameter gradients accumulate into
    /// `sink`, indexed by `ParamId`; the caller folds sinks into the store in
    /// a fixed order. Returns the gradient of the loss w.r.t. every `Input`
    /// leaf as `None`-free storage internally; use [`Graph::backward_input_grad`]
    /// when an input gradient is needed.
    pub fn backward(&mut self, loss: Var, sink: &mut [Array<T>]) -> Result<()> {
        self.backward_impl(loss, sink).map(|_| ())
    }

    /// Like [`Graph::backward`] but also returns the gradient w.r.t. one
    /// designated input leaf (zeros if the loss does not depend on it).
    pub fn backward_input_grad(
        &mut self,
        loss: Var,
        input: Var,
        sink: &mut [Array<T>],
    ) -> Result<Array<T>> {
        let grads = self.backward_impl(loss, sink)?;
        Ok(match grads.into_iter().nth(input.0).flatten() {
            Some(g) => g,
            None => Array::zeros(self.value(input).shape()),
        })
    }

    fn backward_impl(&mut self, loss: Var, sink: &mut [Array<T>]) -> Result<Vec<Option<Array<T>>>> {
        if self.value(loss).numel() != 1 {
            return Err(Error::Shape(format!(
                "backward wants a scalar loss, got {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Array<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Array::scalar(T::one()));

        for idx in (0..self.nodes.len()).rev() {
            let gout = match grads[idx].take() {
                Some(g) => g,
                None => continue,
            };
            match &self.nodes[idx].op {
                Op::Leaf => {}
                Op::Param(id) => {
                    sink[id.0].axpy(T::one(), &gout);
                    // keep the grad in place so gradcheck-style callers can
                    // also read it off the tape if they want to
                    grads[idx] = Some(gout);
                    continue;
                }
                Op::Affine { x, w, b } => {
                    let (x, w, b) = (*x, *w, *b);
                    let (n, p) = {
                        let xs = self.value(x).shape();
                        (xs[0], xs[1])
                    };
                    let q = self.value(w).shape()[1];
                    // dX += dY · Wᵀ
                    let mut dx = Array::zeros(&[n, p]);
                    unsafe {
                        T::gemm(
                            n,
                            q,
                            p,
                            T::one(),
                            gout.data().as_ptr(),
                            q as isize,
                            1,
                            self.value(w).data().as_ptr(),
                            1,
                            q as isize,
                            T::zero(),
                            dx.data_mut().as_mut_ptr(),
                            p as isize,
                            1,
                        );
                    }
                    // dW += Xᵀ · dY
                    let mut dw = Array::zeros(&[p, q]);
                    unsafe {
                        T::gemm(
                            p,
                            n,
                            q,
                            T::one(),
                            self.value(x).data().as_ptr(),
                            1,
                            p as isize,
                            gout.data().as_ptr(),
                            q as isize,
                            1,
                            T::zero(),
                            dw.data_mut().as_mut_ptr(),
                            q as isize,
                            1,
                        );
                    }
                    // db += column sums of dY
                    let mut db = Array::zeros(&[q]);
                    for i in 0..n {
                        for j in 0..q {
                            db.data_mut()[j] = db.data()[j] + gout.at(i, j);
                        }
                    }
                    accumulate(&mut grads, x, dx);
                    accumulate(&mut grads, w, dw);
                    accumulate(&mut grads, b, db);
                }
                Op::Transpose(x) => {
                    let x = *x;
                    let (n, p) = {
                        let xs = self.value(x).shape();
                        (xs[0], xs[1])
                    };
                    let mut dx = Array::zeros(&[n, p]);
                    for i in 0..n {
                        for j in 0..p {
                            *dx.at_mut(i, j) = gout.at(j, i);
                        }
                    }
                    accumulate(&mut grads, x, dx);
                }
                Op::Gelu { x, tanh_u } => {
                    let x = *x;
                    let c = T::from_f64(GELU_C);
                    let a = T::from_f64(GELU_A);
                    let half = T::from_f64(0.5);
                    let three = T::from_f64(3.0);
                    let mut dx = Array::zeros(self.value(x).shape());
                    for (((d, &v), &t), &g) in dx
                        .data_mut()
                        .iter_mut()
                        .zip(self.value(x).data())
                        .zip(tanh_u.iter())
                        .zip(gout.data())
                    {
                        let sech2 = T::one() - t * t;
                        let dgelu = half * (T::one() + t)
                            + half * v * sech2 * c * (T::one() + three * a * v * v);
                        *d = g * dgelu;
                    }
                    accumulate(&mut grads, x, dx);
                }
                Op::Add(a, b) => {
                    let (a, b) = (*a, *b);
                    accumulate(&mut grads, a, gout.clone());
                    accumulate(&mut grads, b, gout);
                }
                Op::Mul(a, b) => {
                    let (a, b) = (*a, *b);
                    let da = self.value(b).zip_map(&gout, |y, g| g * y).expect("mul grad");
                    let db = self.value(a).zip_map(&gout, |x, g| g * x).expect("mul grad");
                    accumulate(&mut grads, a, da);
                    accumulate(&mut grads, b, db);
                }
                Op::ConcatCols(a, b) => {
                    let (a, b) = (*a, *b);
                    let (n, p) = {
                        let s = self.value(a).shape();
                        (s[0], s[1])
                    };
                    let q = self.value(b).shape()[1];
                    let mut da = Array::zeros(&[n, p]);
                    let mut db = Array::zeros(&[n, q]);
                    for i in 0..n {
                        for j in 0..p {
                            *da.at_mut(i, j) = gout.at(i, j);
                        }
                        for j in 0..q {
                            *db.at_mut(i, j) = gout.at(i, p + j);
                        }
                    }
                    accumulate(&mut grads, a, da);
                    accumulate(&mut grads, b, db);
                }
                Op::SliceCols { x, start } => {
                    let (x, start) = (*x, *start);
                    let (n, p) = {
                        let s = self.value(x).shape();
                        (s[0], s[1])
                    };
                    let len = gout.shape()[1];
                    let mut dx = Array::zeros(&[n, p]);
                    for i in 0..n {
                        for j in 0..len {
                            *dx.at_mut(i, start + j) = gout.at(i, j);
                        }
                    }
                    accumulate(&mut grads, x, dx);
                }
                Op::RepeatRow(x) => {
                    let x = *x;
                    let k = self.value(x).shape()[1];
                    let n = gout.shape()[0];
                    let mut dx = Array::zeros(&[1, k]);
                    for i in 0..n {
                        for j in 0..k {
                            *dx.at_mut(0, j) = dx.at(0, j) + gout.at(i, j);
                        }
                    }
                    accumulate(&mut grads, x, dx);
                }
                Op::MaxRows { x, argmax } => {
                    let x = *x;
                    let argmax = argmax.clone();
                    let (n, k) = {
                        let s = self.value(x).shape();
                        (s[0], s[1])
                    };
                    let mut dx = Array::zeros(&[n, k]);
                    for (j, &i) in argmax.iter().enumerate() {
                        *dx.at_mut(i, j) = gout.at(0, j);
                    }
                    accumulate(&mut grads, x, dx);
                }
                Op::Reshape(x) => {
                    let x = *x;
                    let dx = gout
                        .reshaped(self.value(x).shape())
                        .expect("reshape grad");
                    accumulate(&mut grads, x, dx);
                }
                Op::Mse { pred, target } => {
                    let pred = *pred;
                    let g = gout.data()[0];
                    let count = T::from_f64(target.numel() as f64);
                    let two = T::from_f64(2.0);
                    let dp = self
                        .value(pred)
                        .zip_map(target, |p, t| two * (p - t) / count * g)
                        .expect("mse grad");
                    accumulate(&mut grads, pred, dp);
                }
            }
        }
        Ok(grads)
    }
}

fn accumulate<T: Scalar>(grads: &mut [Option<Array<T>>], v: Var, g: Array<T>) {
    match &mut grads[v.0] {
        Some(existing) => existing.axpy(T::one(), &g),
        slot @ None => *slot = Some(g),
    }
}

#[cfg(test)]
fn gelu_scalar<T: Scalar>(x: T) -> T {
    let c = T::from_f64(GELU_C);
    let a = T::from_f64(GELU_A);
    let half = T::from_f64(0.5);
    let u = c * (x + a * x * x * x);
    half * x * (T::one() + u.tanh())
}

#[cfg(test)]
fn gelu_grad_scalar<T: Scalar>(x: T) -> T {
    let c = T::from_f64(GELU_C);
    let a = T::from_f64(GELU_A);
    let half = T::from_f64(0.5);
    let three = T::from_f64(3.0);
    let u = c * (x + a * x * x * x);
    let t = u.tanh();
    let sech2 = T::one() - t * t;
    half * (T::one() + t) + half * x * sech2 * c * (T::one() + three * a * x * x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::RngStream;

    fn rand_array(shape: &[usize], rng: &mut RngStream) -> Array<f64> {
        let mut a = Array::zeros(shape);
        for v in a.data_mut() {
            *v = rng.normal();
        }
        a
    }

    #[test]
    fn affine_identity_passthrough() {
        let mut store = ParamStore::<f64>::new();
        let mut eye = Array::zeros(&[3, 3]);
        for i in 0..3 {
            *eye.at_mut(i, i) = 1.0;
        }
        let w = store.add("w", eye);
        let b = store.add("b", Array::zeros(&[3]));
        let mut g = Graph::new(&store);
        let x = g.input(Array::from_vec(&[2, 3], vec![1.0, -2.0, 3.0, 0.5, 0.0, -1.0]).unwrap());
        let wv = g.param(w);
        let bv = g.param(b);
        let y = g.affine(x, wv, bv).unwrap();
        assert_eq!(g.value(y), g.value(x));
    }

    #[test]
    fn affine_zero_input_repeats_bias() {
        let mut store = ParamStore::<f64>::new();
        let mut rng = RngStream::new(1);
        let w = store.add("w", rand_array(&[4, 2], &mut rng));
        let b = store.add("b", Array::from_vec(&[2], vec![0.3, -0.7]).unwrap());
        let mut g = Graph::new(&store);
        let x = g.input(Array::zeros(&[3, 4]));
        let wv = g.param(w);
        let bv = g.param(b);
        let y = g.affine(x, wv, bv).unwrap();
        for i in 0..3 {
            assert_eq!(g.value(y).at(i, 0), 0.3);
            assert_eq!(g.value(y).at(i, 1), -0.7);
        }
    }

    #[test]
    fn affine_matches_triple_loop_oracle() {
        let mut rng = RngStream::new(2);
        let mut store = ParamStore::<f64>::new();
        let xa = rand_array(&[3, 4], &mut rng);
        let wa = rand_array(&[4, 2], &mut rng);
        let ba = rand_array(&[2], &mut rng);
        let w = store.add("w", wa.clone());
        let b = store.add("b", ba.clone());
        let mut g = Graph::new(&store);
        let x = g.input(xa.clone());
        let wv = g.param(w);
        let bv = g.param(b);
        let y = g.affine(x, wv, bv).unwrap();
        for i in 0..3 {
            for j in 0..2 {
                let mut s = ba.data()[j];
                for k in 0..4 {
                    s += xa.at(i, k) * wa.at(k, j);
                }
                assert!((g.value(y).at(i, j) - s).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn affine_shape_mismatch_reports_both_shapes() {
        let mut store = ParamStore::<f64>::new();
        let w = store.add_zeros("w", &[5, 2]);
        let b = store.add_zeros("b", &[2]);
        let mut g = Graph::new(&store);
        let x = g.input(Array::zeros(&[3, 4]));
        let wv = g.param(w);
        let bv = g.param(b);
        let err = g.affine(x, wv, bv).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[3, 4]") && msg.contains("[5, 2]"), "{msg}");
    }

    #[test]
    fn affine_is_linear_in_x() {
        let mut rng = RngStream::new(3);
        let mut store = ParamStore::<f64>::new();
        let w = store.add("w", rand_array(&[4, 3], &mut rng));
        let b = store.add_zeros("b", &[3]);
        let xa = rand_array(&[2, 4], &mut rng);
        let ya = rand_array(&[2, 4], &mut rng);
        let (alpha, beta) = (1.7, -0.4);

        let eval = |input: &Array<f64>| -> Array<f64> {
            let mut g = Graph::new(&store);
            let x = g.input(input.clone());
            let wv = g.param(w);
            let bv = g.param(b);
            let y = g.affine(x, wv, bv).unwrap();
            g.value(y).clone()
        };
        let mut combo = xa.clone();
        combo.scale(alpha);
        combo.axpy(beta, &ya);
        let lhs = eval(&combo);
        let mut rhs = eval(&xa);
        rhs.scale(alpha);
        rhs.axpy(beta, &eval(&ya));
        for (l, r) in lhs.data().iter().zip(rhs.data()) {
            assert!((l - r).abs() < 1e-6);
        }
    }

    #[test]
    fn transpose_examples_and_involution() {
        let store = ParamStore::<f64>::new();
        let mut g = Graph::new(&store);
        let one = g.input(Array::from_vec(&[1, 1], vec![5.0]).unwrap());
        let t1 = g.transpose2d(one).unwrap();
        assert_eq!(g.value(t1).data(), &[5.0]);

        let x = g.input(Array::from_vec(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let t = g.transpose2d(x).unwrap();
        assert_eq!(g.value(t).data(), &[1.0, 3.0, 2.0, 4.0]);

        let mut rng = RngStream::new(4);
        let a = rand_array(&[5, 7], &mut rng);
        let v = g.input(a.clone());
        let tt0 = g.transpose2d(v).unwrap();
        let tt = g.transpose2d(tt0).unwrap();
        assert_eq!(g.value(tt), &a);

        let bad = g.input(Array::zeros(&[4]));
        assert!(g.transpose2d(bad).is_err());
    }

    #[test]
    fn gelu_values() {
        let store = ParamStore::<f64>::new();
        let mut g = Graph::new(&store);
        let x = g.input(Array::from_vec(&[1, 3], vec![0.0, 8.0, -8.0]).unwrap());
        let y = g.gelu(x);
        let v = g.value(y).data();
        assert_eq!(v[0], 0.0);
        assert!((v[1] - 8.0).abs() < 1e-4, "large positive ~ identity");
        assert!(v[2].abs() < 1e-4, "large negative ~ zero");
    }

    #[test]
    fn gelu_gradient_matches_finite_difference_at_half() {
        let eps = 1e-6f64;
        let fd = (gelu_scalar(0.5 + eps) - gelu_scalar(0.5 - eps)) / (2.0 * eps);
        assert!((gelu_grad_scalar(0.5f64) - fd).abs() < 1e-6);
    }

    #[test]
    fn mse_examples() {
        let store = ParamStore::<f64>::new();
        let mut g = Graph::new(&store);
        let t = Array::from_vec(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let p_eq = g.input(t.clone());
        let l = g.mse(p_eq, &t).unwrap();
        assert_eq!(g.value(l).data()[0], 0.0);

        let p_off = g.input(t.map(|v| v + 1.0));
        let l1 = g.mse(p_off, &t).unwrap();
        assert_eq!(g.value(l1).data()[0], 1.0);

        // random pair against a scalar loop
        let mut rng = RngStream::new(5);
        let a = rand_array(&[3, 3], &mut rng);
        let b = rand_array(&[3, 3], &mut rng);
        let pv = g.input(a.clone());
        let lv = g.mse(pv, &b).unwrap();
        let mut acc = 0.0;
        for (x, y) in a.data().iter().zip(b.data()) {
            acc += (x - y) * (x - y);
        }
        acc /= 9.0;
        assert!((g.value(lv).data()[0] - acc).abs() < 1e-10);

        let bad = g.input(Array::zeros(&[2, 3]));
        assert!(g.mse(bad, &t).is_err());
    }

    #[test]
    fn mse_backward_is_scaled_residual() {
        let mut store = ParamStore::<f64>::new();
        let p = store.add("p", Array::from_vec(&[1, 4], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let t = Array::from_vec(&[1, 4], vec![0.0, 0.0, 0.0, 0.0]).unwrap();
        let mut g = Graph::new(&store);
        let pv = g.param(p);
        let l = g.mse(pv, &t).unwrap();
        let mut sink = store.grad_buffers();
        g.backward(l, &mut sink).unwrap();
        for (i, gv) in sink[0].data().iter().enumerate() {
            let expect = 2.0 * (i as f64 + 1.0) / 4.0;
            assert!((gv - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn max_rows_ties_pick_lowest_index() {
        let mut store = ParamStore::<f64>::new();
        let p = store.add(
            "p",
            Array::from_vec(&[3, 2], vec![2.0, 0.0, 2.0, 1.0, 1.0, 1.0]).unwrap(),
        );
        let mut g = Graph::new(&store);
        let pv = g.param(p);
        let m = g.max_rows(pv).unwrap();
        assert_eq!(g.value(m).data(), &[2.0, 1.0]);
        let t = Array::zeros(&[1, 2]);
        let l = g.mse(m, &t).unwrap();
        let mut sink = store.grad_buffers();
        g.backward(l, &mut sink).unwrap();
        // column 0: tie between rows 0 and 2 -> row 0 takes the gradient
        assert!(sink[0].at(0, 0) != 0.0);
        assert_eq!(sink[0].at(1, 0), 0.0);
        assert_eq!(sink[0].at(2, 0), 0.0);
    }

    #[test]
    fn grads_accumulate_across_backward_calls() {
        let mut store = ParamStore::<f64>::new();
        let p = store.add("p", Array::from_vec(&[1, 1], vec![3.0]).unwrap());
        let t = Array::from_vec(&[1, 1], vec![0.0]).unwrap();
        for _ in 0..2 {
            let mut g = Graph::new(&store);
            let pv = g.param(p);
            let l = g.mse(pv, &t).unwrap();
            let mut sink = store.grad_buffers();
            g.backward(l, &mut sink).unwrap();
            store.accumulate_grads(&sink);
        }
        // each pass contributes 2*3/1 = 6
        assert!((store.get(p).grad.data()[0] - 12.0).abs() < 1e-12);
        store.zero_grads();
        assert_eq!(store.get(p).grad.data()[0], 0.0);
    }
}
