use rand::Rng;

use super::{AutodiffError, Tensor};
use crate::scalar::Scalar;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddBias(Var, Var),
    Scale(Var, T),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    Dropout(Var, Vec<T>),
    ConcatCols(Vec<Var>),
    TimeStep(Var, usize),
    Mse(Var, Var),
    Sum(Var),
}

#[derive(Debug, Clone)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Wengert list of primitive operations.
///
/// Nodes are appended in evaluation order, so every operand precedes its
/// consumer and a single reverse sweep propagates adjoints.
#[derive(Debug, Clone, Default)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    consumed: bool,
}

/// Adjoints produced by [`Tape::backward`], keyed by [`Var`].
#[derive(Debug, Clone)]
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
    shapes: Vec<Vec<usize>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient of the loss with respect to `v`; zeros when `v` does not reach the loss.
    pub fn wrt(&self, v: Var) -> Tensor<T> {
        let shape = self.shapes[v.0].clone();
        match &self.grads[v.0] {
            Some(g) => Tensor::new(shape, g.clone()).expect("gradient matches node shape"),
            None => Tensor::zeros(&shape),
        }
    }
}

/// Inverted-dropout mask: each entry is `0` with probability `rate`, otherwise `1/(1-rate)`.
pub fn dropout_mask<T: Scalar, R: Rng + ?Sized>(rng: &mut R, len: usize, rate: f64) -> Vec<T> {
    let keep = 1.0 - rate;
    let scale = T::of(1.0 / keep);
    (0..len)
        .map(|_| if rng.random::<f64>() < keep { scale } else { T::zero() })
        .collect()
}

fn check_finite<T: Scalar>(op: &'static str, t: &Tensor<T>) -> Result<(), AutodiffError> {
    if cfg!(debug_assertions) && !t.is_finite() {
        return Err(AutodiffError::NonFinite { op });
    }
    Ok(())
}

fn matmul_into<T: Scalar>(a: &[T], b: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == T::zero() {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o += aip * bv;
            }
        }
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            consumed: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    fn shape(&self, v: Var) -> Vec<usize> {
        self.nodes[v.0].value.shape().to_vec()
    }

    fn dims2(&self, op: &'static str, v: Var) -> Result<(usize, usize), AutodiffError> {
        self.nodes[v.0].value.dims2().ok_or_else(|| AutodiffError::ShapeMismatch {
            op,
            left: self.shape(v),
            right: vec![],
        })
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (m, k) = self.dims2("matmul", a)?;
        let (k2, n) = self.dims2("matmul", b)?;
        if k != k2 {
            return Err(AutodiffError::ShapeMismatch {
                op: "matmul",
                left: self.shape(a),
                right: self.shape(b),
            });
        }
        let mut out = vec![T::zero(); m * n];
        matmul_into(self.value(a).data(), self.value(b).data(), &mut out, m, k, n);
        let t = Tensor::new(vec![m, n], out)?;
        check_finite("matmul", &t)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(t, Op::MatMul(a, b), rg))
    }

    fn zip_same(
        &mut self,
        op_name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(T, T) -> T,
        op: Op<T>,
    ) -> Result<Var, AutodiffError> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(AutodiffError::ShapeMismatch {
                op: op_name,
                left: self.shape(a),
                right: self.shape(b),
            });
        }
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        let t = Tensor::new(self.shape(a), data)?;
        check_finite(op_name, &t)?;
        let rg = self.rg(&[a, b]);
        Ok(self.push(t, op, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.zip_same("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.zip_same("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    /// Elementwise (Hadamard) product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.zip_same("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    /// Adds a length-`n` bias to every row of an `[m, n]` matrix.
    pub fn add_bias(&mut self, a: Var, bias: Var) -> Result<Var, AutodiffError> {
        let (m, n) = self.dims2("add_bias", a)?;
        if self.value(bias).numel() != n {
            return Err(AutodiffError::ShapeMismatch {
                op: "add_bias",
                left: self.shape(a),
                right: self.shape(bias),
            });
        }
        let mut data = self.value(a).data().to_vec();
        let b = self.value(bias).data();
        for i in 0..m {
            for (o, &bv) in data[i * n..(i + 1) * n].iter_mut().zip(b) {
                *o += bv;
            }
        }
        let t = Tensor::new(self.shape(a), data)?;
        check_finite("add_bias", &t)?;
        let rg = self.rg(&[a, bias]);
        Ok(self.push(t, Op::AddBias(a, bias), rg))
    }

    pub fn scale(&mut self, a: Var, c: T) -> Result<Var, AutodiffError> {
        let t = self.value(a).map(|x| x * c);
        check_finite("scale", &t)?;
        let rg = self.rg(&[a]);
        Ok(self.push(t, Op::Scale(a, c), rg))
    }

    fn unary(&mut self, name: &'static str, a: Var, f: impl Fn(T) -> T, op: Op<T>) -> Result<Var, AutodiffError> {
        let t = self.value(a).map(f);
        check_finite(name, &t)?;
        let rg = self.rg(&[a]);
        Ok(self.push(t, op, rg))
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var, AutodiffError> {
        self.unary("sigmoid", a, sigmoid, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var, AutodiffError> {
        self.unary("tanh", a, |x| x.tanh(), Op::Tanh(a))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var, AutodiffError> {
        self.unary("relu", a, |x| if x > T::zero() { x } else { T::zero() }, Op::Relu(a))
    }

    /// Multiplies by a precomputed mask (see [`dropout_mask`]).
    pub fn dropout(&mut self, a: Var, mask: Vec<T>) -> Result<Var, AutodiffError> {
        if mask.len() != self.value(a).numel() {
            return Err(AutodiffError::ShapeMismatch {
                op: "dropout",
                left: self.shape(a),
                right: vec![mask.len()],
            });
        }
        let data = self.value(a).data().iter().zip(&mask).map(|(&x, &m)| x * m).collect();
        let t = Tensor::new(self.shape(a), data)?;
        check_finite("dropout", &t)?;
        let rg = self.rg(&[a]);
        Ok(self.push(t, Op::Dropout(a, mask), rg))
    }

    /// Concatenates 2-D tensors with equal row counts along the column axis.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, AutodiffError> {
        let first = *parts
            .first()
            .ok_or_else(|| AutodiffError::Invalid("concat_cols: no operands".into()))?;
        let (m, _) = self.dims2("concat_cols", first)?;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (r, c) = self.dims2("concat_cols", p)?;
            if r != m {
                return Err(AutodiffError::ShapeMismatch {
                    op: "concat_cols",
                    left: self.shape(first),
                    right: self.shape(p),
                });
            }
            widths.push(c);
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(m * total);
        for i in 0..m {
            for (&p, &w) in parts.iter().zip(&widths) {
                data.extend_from_slice(&self.value(p).data()[i * w..(i + 1) * w]);
            }
        }
        let t = Tensor::new(vec![m, total], data)?;
        let rg = self.rg(parts);
        Ok(self.push(t, Op::ConcatCols(parts.to_vec()), rg))
    }

    /// Slice `[:, step, :]` of a `[batch, steps, features]` tensor.
    pub fn time_step(&mut self, x: Var, step: usize) -> Result<Var, AutodiffError> {
        let (b, l, f) = match self.value(x).shape() {
            &[b, l, f] if step < l => (b, l, f),
            _ => {
                return Err(AutodiffError::ShapeMismatch {
                    op: "time_step",
                    left: self.shape(x),
                    right: vec![step],
                })
            }
        };
        let src = self.value(x).data();
        let mut data = Vec::with_capacity(b * f);
        for i in 0..b {
            let off = (i * l + step) * f;
            data.extend_from_slice(&src[off..off + f]);
        }
        let t = Tensor::new(vec![b, f], data)?;
        let rg = self.rg(&[x]);
        Ok(self.push(t, Op::TimeStep(x, step), rg))
    }

    /// Mean of squared differences over every element.
    pub fn mse(&mut self, pred: Var, target: Var) -> Result<Var, AutodiffError> {
        if self.value(pred).shape() != self.value(target).shape() {
            return Err(AutodiffError::ShapeMismatch {
                op: "mse",
                left: self.shape(pred),
                right: self.shape(target),
            });
        }
        let n = T::of(self.value(pred).numel() as f64);
        let s: T = self
            .value(pred)
            .data()
            .iter()
            .zip(self.value(target).data())
            .map(|(&p, &y)| (p - y) * (p - y))
            .sum();
        let t = Tensor::scalar(s / n);
        check_finite("mse", &t)?;
        let rg = self.rg(&[pred, target]);
        Ok(self.push(t, Op::Mse(pred, target), rg))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var, AutodiffError> {
        let s: T = self.value(a).data().iter().copied().sum();
        let t = Tensor::scalar(s);
        check_finite("sum", &t)?;
        let rg = self.rg(&[a]);
        Ok(self.push(t, Op::Sum(a), rg))
    }

    /// Reverse sweep from a scalar `loss`. The tape cannot be reused afterwards.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients<T>, AutodiffError> {
        if self.consumed {
            return Err(AutodiffError::TapeConsumed);
        }
        if self.nodes.is_empty() {
            return Err(AutodiffError::EmptyTape);
        }
        if !self.value(loss).is_scalar() {
            return Err(AutodiffError::NotScalar(self.shape(loss)));
        }
        self.consumed = true;

        let n = self.nodes.len();
        let mut grads: Vec<Option<Vec<T>>> = vec![None; n];
        grads[loss.0] = Some(vec![T::one()]);

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            self.propagate(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }

        // Keep only adjoints of nodes that asked for them.
        for (g, node) in grads.iter_mut().zip(&self.nodes) {
            if !node.requires_grad {
                *g = None;
            }
        }
        let shapes = self.nodes.iter().map(|nd| nd.value.shape().to_vec()).collect();
        Ok(Gradients { grads, shapes })
    }

    fn propagate(&self, idx: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let node = &self.nodes[idx];
        let mut acc = |v: Var, contrib: &dyn Fn(&mut [T])| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            let slot = grads[v.0].get_or_insert_with(|| vec![T::zero(); self.nodes[v.0].value.numel()]);
            contrib(slot);
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let av = self.value(*a);
                let bv = self.value(*b);
                let (m, k) = av.dims2().unwrap();
                let (_, nn) = bv.dims2().unwrap();
                let (ad, bd) = (av.data(), bv.data());
                acc(*a, &|ga| {
                    for i in 0..m {
                        let grow = &g[i * nn..(i + 1) * nn];
                        for p in 0..k {
                            let brow = &bd[p * nn..(p + 1) * nn];
                            let mut s = T::zero();
                            for (&x, &y) in grow.iter().zip(brow) {
                                s += x * y;
                            }
                            ga[i * k + p] += s;
                        }
                    }
                });
                acc(*b, &|gb| {
                    for i in 0..m {
                        let grow = &g[i * nn..(i + 1) * nn];
                        for p in 0..k {
                            let aip = ad[i * k + p];
                            if aip == T::zero() {
                                continue;
                            }
                            for (o, &x) in gb[p * nn..(p + 1) * nn].iter_mut().zip(grow) {
                                *o += aip * x;
                            }
                        }
                    }
                });
            }
            Op::Add(a, b) => {
                acc(*a, &|ga| add_into(ga, g));
                acc(*b, &|gb| add_into(gb, g));
            }
            Op::Sub(a, b) => {
                acc(*a, &|ga| add_into(ga, g));
                acc(*b, &|gb| {
                    for (o, &x) in gb.iter_mut().zip(g) {
                        *o -= x;
                    }
                });
            }
            Op::Mul(a, b) => {
                let (ad, bd) = (self.value(*a).data(), self.value(*b).data());
                acc(*a, &|ga| {
                    for ((o, &x), &y) in ga.iter_mut().zip(g).zip(bd) {
                        *o += x * y;
                    }
                });
                acc(*b, &|gb| {
                    for ((o, &x), &y) in gb.iter_mut().zip(g).zip(ad) {
                        *o += x * y;
                    }
                });
            }
            Op::AddBias(a, bias) => {
                acc(*a, &|ga| add_into(ga, g));
                let n = self.value(*bias).numel();
                acc(*bias, &|gb| {
                    for row in g.chunks(n) {
                        add_into(gb, row);
                    }
                });
            }
            Op::Scale(a, c) => acc(*a, &|ga| {
                for (o, &x) in ga.iter_mut().zip(g) {
                    *o += x * *c;
                }
            }),
            Op::Sigmoid(a) => {
                let y = node.value.data();
                acc(*a, &|ga| {
                    for ((o, &x), &s) in ga.iter_mut().zip(g).zip(y) {
                        *o += x * s * (T::one() - s);
                    }
                });
            }
            Op::Tanh(a) => {
                let y = node.value.data();
                acc(*a, &|ga| {
                    for ((o, &x), &t) in ga.iter_mut().zip(g).zip(y) {
                        *o += x * (T::one() - t * t);
                    }
                });
            }
            Op::Relu(a) => {
                let xin = self.value(*a).data();
                acc(*a, &|ga| {
                    for ((o, &x), &v) in ga.iter_mut().zip(g).zip(xin) {
                        if v > T::zero() {
                            *o += x;
                        }
                    }
                });
            }
            Op::Dropout(a, mask) => acc(*a, &|ga| {
                for ((o, &x), &m) in ga.iter_mut().zip(g).zip(mask) {
                    *o += x * m;
                }
            }),
            Op::ConcatCols(parts) => {
                let m = node.value.shape()[0];
                let total = node.value.shape()[1];
                let mut offset = 0;
                for &p in parts {
                    let w = self.value(p).shape().last().copied().unwrap_or(1);
                    acc(p, &|gp| {
                        for i in 0..m {
                            add_into(&mut gp[i * w..(i + 1) * w], &g[i * total + offset..i * total + offset + w]);
                        }
                    });
                    offset += w;
                }
            }
            Op::TimeStep(x, step) => {
                let shape = self.value(*x).shape();
                let (b, l, f) = (shape[0], shape[1], shape[2]);
                acc(*x, &|gx| {
                    for i in 0..b {
                        let off = (i * l + step) * f;
                        add_into(&mut gx[off..off + f], &g[i * f..(i + 1) * f]);
                    }
                });
            }
            Op::Mse(p, y) => {
                let (pd, yd) = (self.value(*p).data(), self.value(*y).data());
                let scale = T::of(2.0) * g[0] / T::of(pd.len() as f64);
                acc(*p, &|gp| {
                    for ((o, &a), &b) in gp.iter_mut().zip(pd).zip(yd) {
                        *o += scale * (a - b);
                    }
                });
                acc(*y, &|gy| {
                    for ((o, &a), &b) in gy.iter_mut().zip(pd).zip(yd) {
                        *o -= scale * (a - b);
                    }
                });
            }
            Op::Sum(a) => acc(*a, &|ga| {
                for o in ga.iter_mut() {
                    *o += g[0];
                }
            }),
        }
    }
}

fn add_into<T: Scalar>(dst: &mut [T], src: &[T]) {
    for (o, &x) in dst.iter_mut().zip(src) {
        *o += x;
    }
}

pub(crate) fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], v: &[f64]) -> Tensor<f64> {
        Tensor::new(shape.to_vec(), v.to_vec()).unwrap()
    }

    #[test]
    fn primitive_values() {
        let mut tape = Tape::new();
        let z = tape.constant(Tensor::scalar(0.0));
        let s = tape.sigmoid(z).unwrap();
        assert_eq!(tape.value(s).item(), 0.5);
        let neg = tape.constant(Tensor::scalar(-3.2));
        let r = tape.relu(neg).unwrap();
        assert_eq!(tape.value(r).item(), 0.0);
        let a = tape.constant(t(&[2], &[1.0, 2.0]));
        let b = tape.constant(t(&[2], &[1.0, 2.0]));
        let m = tape.mse(a, b).unwrap();
        assert_eq!(tape.value(m).item(), 0.0);
    }

    #[test]
    fn grad_of_sum_of_squares() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[3], &[1.0, 2.0, 3.0]), true);
        let sq = tape.mul(x, x).unwrap();
        let loss = tape.sum(sq).unwrap();
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.wrt(x).data(), &[2.0, 4.0, 6.0]);
    }

    #[test]
    fn grad_of_mse_of_scaled_input() {
        let mut tape = Tape::new();
        let w = tape.leaf(t(&[1, 1], &[0.0]), true);
        let x = tape.constant(t(&[1, 1], &[1.0]));
        let y = tape.constant(t(&[1, 1], &[1.0]));
        let p = tape.matmul(x, w).unwrap();
        let loss = tape.mse(p, y).unwrap();
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.wrt(w).item(), -2.0);
    }

    #[test]
    fn shape_errors_name_the_op() {
        let mut tape = Tape::<f64>::new();
        let a = tape.constant(Tensor::zeros(&[2, 3]));
        let b = tape.constant(Tensor::zeros(&[2, 3]));
        let err = tape.matmul(a, b).unwrap_err();
        assert_eq!(
            err,
            AutodiffError::ShapeMismatch {
                op: "matmul",
                left: vec![2, 3],
                right: vec![2, 3]
            }
        );
        assert!(err.to_string().contains("matmul"));
        let c = tape.constant(Tensor::zeros(&[3, 2]));
        assert!(matches!(tape.add(a, c), Err(AutodiffError::ShapeMismatch { op: "add", .. })));
    }

    #[test]
    fn backward_contract_errors() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::zeros(&[2]), true);
        assert_eq!(tape.backward(x).unwrap_err(), AutodiffError::NotScalar(vec![2]));
        let s = tape.sum(x).unwrap();
        tape.backward(s).unwrap();
        assert_eq!(tape.backward(s).unwrap_err(), AutodiffError::TapeConsumed);
        let mut empty = Tape::<f64>::new();
        assert_eq!(empty.backward(Var(0)).unwrap_err(), AutodiffError::EmptyTape);
    }

    #[test]
    fn unreachable_leaf_gets_zero_gradient() {
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[2], &[1.0, 1.0]), true);
        let unused = tape.leaf(t(&[2, 2], &[1.0; 4]), true);
        let loss = tape.sum(x).unwrap();
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.wrt(unused), Tensor::zeros(&[2, 2]));
    }

    #[test]
    fn reused_operand_accumulates() {
        // loss = sum(concat(x, x)) => d/dx = 2
        let mut tape = Tape::new();
        let x = tape.leaf(t(&[2, 1], &[3.0, -1.0]), true);
        let c = tape.concat_cols(&[x, x]).unwrap();
        let loss = tape.sum(c).unwrap();
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.wrt(x).data(), &[2.0, 2.0]);
    }

    #[test]
    fn dropout_mask_is_inverted() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let mask: Vec<f64> = dropout_mask(&mut rng, 10_000, 0.1);
        let keep = 1.0 / 0.9;
        assert!(mask.iter().all(|&m| m == 0.0 || m == keep));
        let mean = mask.iter().sum::<f64>() / mask.len() as f64;
        assert!((mean - 1.0).abs() < 0.05);
    }
}
