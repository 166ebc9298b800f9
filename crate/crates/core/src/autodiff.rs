//! Tape-based reverse-mode differentiation over matrices.
//!
//! A [`Tape`] records every operation together with its forward value.
//! [`Tape::backward`] walks the records in reverse and accumulates
//! adjoints, so any scalar built from the supported primitives can be
//! differentiated with respect to every leaf.
//!
//! ```
//! use ckasr::autodiff::Tape;
//! use ckasr::linalg::Matrix;
//!
//! let mut tape = Tape::new();
//! let x = tape.leaf(Matrix::from_rows(&[vec![1.0, -2.0]]).unwrap());
//! let y = tape.frobenius_sq(x);
//! let grads = tape.backward(y).unwrap();
//! assert_eq!(grads.wrt(x).as_slice(), &[2.0, -4.0]);
//! ```

use crate::error::{Error, Result};
use crate::linalg::{self, Matrix};

/// Below this magnitude a divisor or radicand is treated as degenerate.
pub const DEGENERATE_FLOOR: f64 = 1e-30;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var {
    id: usize,
    rows: usize,
    cols: usize,
}

impl Var {
    pub fn id(self) -> usize {
        self.id
    }

    pub fn shape(self) -> (usize, usize) {
        (self.rows, self.cols)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Op {
    Leaf,
    MatMul(usize, usize),
    Add(usize, usize),
    Scale(usize, f64),
    Mul(usize, usize),
    Transpose(usize),
    SumAll(usize),
    FrobeniusSq(usize),
    Sqrt(usize),
    Div(usize, usize),
    Relu(usize),
    LogSoftmax(usize),
    Gram(usize),
    CenterGram(usize),
}

#[derive(Clone, Debug)]
struct Node {
    op: Op,
    value: Matrix,
}

#[derive(Clone, Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Adjoints produced by one backward pass, indexed by node.
#[derive(Clone, Debug)]
pub struct Gradients {
    adjoints: Vec<Option<Matrix>>,
    shapes: Vec<(usize, usize)>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&Matrix> {
        self.adjoints.get(var.id).and_then(Option::as_ref)
    }

    /// Gradient with respect to `var`, zero if the output does not depend on it.
    pub fn wrt(&self, var: Var) -> Matrix {
        self.get(var).cloned().unwrap_or_else(|| {
            let (r, c) = self.shapes[var.id];
            Matrix::zeros(r, c)
        })
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, var: Var) -> &Matrix {
        &self.nodes[var.id].value
    }

    pub fn scalar(&self, var: Var) -> f64 {
        self.nodes[var.id].value.as_slice()[0]
    }

    fn push(&mut self, op: Op, value: Matrix) -> Var {
        let (rows, cols) = value.shape();
        self.nodes.push(Node { op, value });
        Var {
            id: self.nodes.len() - 1,
            rows,
            cols,
        }
    }

    pub fn leaf(&mut self, value: Matrix) -> Var {
        self.push(Op::Leaf, value)
    }

    /// A leaf whose gradient is never read.
    pub fn constant(&mut self, value: Matrix) -> Var {
        self.leaf(value)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = linalg::matmul(self.value(a), self.value(b))?;
        Ok(self.push(Op::MatMul(a.id, b.id), v))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).add(self.value(b))?;
        Ok(self.push(Op::Add(a.id, b.id), v))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a).scale(c);
        self.push(Op::Scale(a.id, c), v)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let neg = self.scale(b, -1.0);
        self.add(a, neg)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).hadamard(self.value(b))?;
        Ok(self.push(Op::Mul(a.id, b.id), v))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let v = self.value(a).transpose();
        self.push(Op::Transpose(a.id), v)
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let v = Matrix::scalar(self.value(a).sum());
        self.push(Op::SumAll(a.id), v)
    }

    pub fn frobenius_sq(&mut self, a: Var) -> Var {
        let v = Matrix::scalar(linalg::frobenius_norm_sq(self.value(a)));
        self.push(Op::FrobeniusSq(a.id), v)
    }

    /// Elementwise square root; every radicand must exceed the degenerate floor.
    pub fn sqrt(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a);
        if let Some(bad) = x.as_slice().iter().find(|&&v| !(v >= DEGENERATE_FLOOR)) {
            return Err(Error::Degenerate(format!("sqrt of {bad:e}")));
        }
        let v = x.map(f64::sqrt);
        Ok(self.push(Op::Sqrt(a.id), v))
    }

    /// `a / b` for a 1x1 divisor `b`.
    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        let d = self
            .value(b)
            .as_scalar()
            .ok_or_else(|| Error::shape("div", format!("divisor is {:?}, expected 1x1", b.shape())))?;
        if !(d.abs() >= DEGENERATE_FLOOR) {
            return Err(Error::Degenerate(format!("division by {d:e}")));
        }
        let v = self.value(a).scale(1.0 / d);
        Ok(self.push(Op::Div(a.id, b.id), v))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| if x > 0.0 { x } else { 0.0 });
        self.push(Op::Relu(a.id), v)
    }

    /// Row-wise log-softmax.
    pub fn log_softmax(&mut self, a: Var) -> Var {
        let v = log_softmax_rows(self.value(a));
        self.push(Op::LogSoftmax(a.id), v)
    }

    /// `a · aᵀ`.
    pub fn gram(&mut self, a: Var) -> Var {
        let v = linalg::gram(self.value(a));
        self.push(Op::Gram(a.id), v)
    }

    /// `H·K·H` for square `K`.
    pub fn center_gram(&mut self, k: Var) -> Result<Var> {
        let (r, c) = k.shape();
        if r != c || r < 2 {
            return Err(Error::shape("center-gram", format!("{r}x{c}")));
        }
        let v = linalg::center_square(self.value(k));
        Ok(self.push(Op::CenterGram(k.id), v))
    }

    /// Reverse pass from a 1x1 output.
    pub fn backward(&self, output: Var) -> Result<Gradients> {
        if output.shape() != (1, 1) {
            return Err(Error::NonScalarOutput {
                rows: output.rows,
                cols: output.cols,
            });
        }
        let n = output.id + 1;
        let mut adj: Vec<Option<Matrix>> = vec![None; self.nodes.len()];
        adj[output.id] = Some(Matrix::scalar(1.0));

        for id in (0..n).rev() {
            let Some(g) = adj[id].take() else { continue };
            let node = &self.nodes[id];
            let val = |i: usize| &self.nodes[i].value;
            match node.op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let ga = linalg::matmul(&g, &val(b).transpose())?;
                    let gb = linalg::matmul(&val(a).transpose(), &g)?;
                    accumulate(&mut adj, a, ga)?;
                    accumulate(&mut adj, b, gb)?;
                }
                Op::Add(a, b) => {
                    accumulate(&mut adj, a, g.clone())?;
                    accumulate(&mut adj, b, g.clone())?;
                }
                Op::Scale(a, c) => accumulate(&mut adj, a, g.scale(c))?,
                Op::Mul(a, b) => {
                    let ga = g.hadamard(val(b))?;
                    let gb = g.hadamard(val(a))?;
                    accumulate(&mut adj, a, ga)?;
                    accumulate(&mut adj, b, gb)?;
                }
                Op::Transpose(a) => accumulate(&mut adj, a, g.transpose())?,
                Op::SumAll(a) => {
                    let (r, c) = val(a).shape();
                    accumulate(&mut adj, a, Matrix::filled(r, c, g.as_slice()[0]))?;
                }
                Op::FrobeniusSq(a) => {
                    let ga = val(a).scale(2.0 * g.as_slice()[0]);
                    accumulate(&mut adj, a, ga)?;
                }
                Op::Sqrt(a) => {
                    let ga = g.hadamard(&node.value.map(|y| 0.5 / y))?;
                    accumulate(&mut adj, a, ga)?;
                }
                Op::Div(a, b) => {
                    let d = val(b).as_slice()[0];
                    let ga = g.scale(1.0 / d);
                    let gb = -g.hadamard(val(a))?.sum() / (d * d);
                    accumulate(&mut adj, a, ga)?;
                    accumulate(&mut adj, b, Matrix::scalar(gb))?;
                }
                Op::Relu(a) => {
                    let x = val(a);
                    let ga = Matrix::from_fn(x.rows(), x.cols(), |i, j| {
                        if x.get(i, j) > 0.0 {
                            g.get(i, j)
                        } else {
                            0.0
                        }
                    });
                    accumulate(&mut adj, a, ga)?;
                }
                Op::LogSoftmax(a) => {
                    let y = &node.value;
                    let mut ga = g.clone();
                    for i in 0..y.rows() {
                        let gsum: f64 = g.row(i).iter().sum();
                        for j in 0..y.cols() {
                            ga.set(i, j, g.get(i, j) - y.get(i, j).exp() * gsum);
                        }
                    }
                    accumulate(&mut adj, a, ga)?;
                }
                Op::Gram(a) => {
                    let sym = g.add(&g.transpose())?;
                    let ga = linalg::matmul(&sym, val(a))?;
                    accumulate(&mut adj, a, ga)?;
                }
                Op::CenterGram(k) => accumulate(&mut adj, k, linalg::center_square(&g))?,
            }
            adj[id] = Some(g);
        }
        Ok(Gradients {
            adjoints: adj,
            shapes: self.nodes.iter().map(|n| n.value.shape()).collect(),
        })
    }
}

fn accumulate(adj: &mut [Option<Matrix>], id: usize, g: Matrix) -> Result<()> {
    match &mut adj[id] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => {
            *slot = Some(g);
            Ok(())
        }
    }
}

pub(crate) fn log_softmax_rows(x: &Matrix) -> Matrix {
    let mut out = x.clone();
    for i in 0..x.rows() {
        let row = x.row(i);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        for j in 0..x.cols() {
            out.set(i, j, row[j] - lse);
        }
    }
    out
}

/// Compares taped gradients of `f` at `x` with central differences.
///
/// Returns the largest `|analytic − numeric| / (|analytic| + |numeric| + 1e-12)`
/// over all entries of `x`.
pub fn grad_check<F>(f: F, x: &Matrix, h: f64) -> Result<f64>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    if !(h > 0.0) {
        return Err(Error::invalid("finite-difference step must be positive"));
    }
    let eval = |m: Matrix| -> Result<f64> {
        let mut tape = Tape::new();
        let v = tape.leaf(m);
        let out = f(&mut tape, v)?;
        let value = tape
            .value(out)
            .as_scalar()
            .ok_or(Error::NonScalarOutput {
                rows: out.rows,
                cols: out.cols,
            })?;
        if !value.is_finite() {
            return Err(Error::invalid(format!("function value is {value}")));
        }
        Ok(value)
    };

    let mut tape = Tape::new();
    let leaf = tape.leaf(x.clone());
    let out = f(&mut tape, leaf)?;
    if !tape.value(out).is_finite() {
        return Err(Error::invalid("function value is not finite"));
    }
    let analytic = tape.backward(out)?.wrt(leaf);

    let mut worst: f64 = 0.0;
    for idx in 0..x.len() {
        let mut plus = x.clone();
        plus.as_mut_slice()[idx] += h;
        let mut minus = x.clone();
        minus.as_mut_slice()[idx] -= h;
        let numeric = (eval(plus)? - eval(minus)?) / (2.0 * h);
        let a = analytic.as_slice()[idx];
        worst = worst.max((a - numeric).abs() / (a.abs() + numeric.abs() + 1e-12));
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Rng;

    const H: f64 = 1e-5;

    fn check(f: impl Fn(&mut Tape, Var) -> Result<Var>, x: &Matrix) -> f64 {
        grad_check(f, x, H).unwrap()
    }

    #[test]
    fn forward_values() {
        let mut rng = Rng::new(1);
        let a = rng.gaussian_matrix(3, 2);
        let mut t = Tape::new();
        let va = t.leaf(a.clone());
        let s = t.add(va, va).unwrap();
        assert_eq!(t.value(s), &a.scale(2.0));
        let i = t.leaf(Matrix::identity(3));
        let tr = t.sum_all(i);
        assert_eq!(t.scalar(tr), 3.0);
    }

    #[test]
    fn centered_gram_chain_matches_direct_ops() {
        let mut rng = Rng::new(2);
        let x = rng.gaussian_matrix(6, 3);
        let mut t = Tape::new();
        let vx = t.leaf(x.clone());
        let k = t.gram(vx);
        let c = t.center_gram(k).unwrap();
        let s = t.sum_all(c);
        let k2 = linalg::GramMatrix::new(linalg::matmul(&x, &x.transpose()).unwrap()).unwrap();
        let direct = linalg::center_gram(&k2).unwrap().matrix().sum();
        assert!((t.scalar(s) - direct).abs() < 1e-12);
    }

    #[test]
    fn shape_errors_name_the_op() {
        let mut t = Tape::new();
        let a = t.leaf(Matrix::zeros(2, 3));
        let b = t.leaf(Matrix::zeros(2, 2));
        assert!(t.matmul(a, b).unwrap_err().to_string().contains("matmul"));
        assert!(t.add(a, b).unwrap_err().to_string().contains("add"));
        assert!(t.center_gram(a).unwrap_err().to_string().contains("center-gram"));
        assert!(t.backward(a).is_err());
    }

    #[test]
    fn guards_raise_degenerate() {
        let mut t = Tape::new();
        let z = t.leaf(Matrix::scalar(0.0));
        let one = t.leaf(Matrix::scalar(1.0));
        assert!(matches!(t.sqrt(z), Err(Error::Degenerate(_))));
        assert!(matches!(t.div(one, z), Err(Error::Degenerate(_))));
    }

    #[test]
    fn simple_gradients() {
        let mut rng = Rng::new(3);
        let x = rng.gaussian_matrix(3, 4);
        let mut t = Tape::new();
        let v = t.leaf(x.clone());
        let s = t.sum_all(v);
        assert_eq!(t.backward(s).unwrap().wrt(v), Matrix::filled(3, 4, 1.0));
        let f = t.frobenius_sq(v);
        assert_eq!(t.backward(f).unwrap().wrt(v), x.scale(2.0));
    }

    #[test]
    fn grad_check_on_linear_and_quadratic() {
        let mut rng = Rng::new(4);
        let x = rng.gaussian_matrix(3, 3);
        assert!(check(|t, v| Ok(t.sum_all(v)), &x) < 1e-9);
        assert!(check(|t, v| Ok(t.frobenius_sq(v)), &x) < 1e-8);
    }

    #[test]
    fn every_primitive_matches_central_differences() {
        let mut rng = Rng::new(5);
        for _ in 0..10 {
            let x = rng.gaussian_matrix(4, 3);
            let w = rng.gaussian_matrix(3, 5);
            let same = rng.gaussian_matrix(4, 3);
            let pos = x.map(|v| v.abs() + 0.5);

            let wc = w.clone();
            assert!(check(move |t, v| {
                let c = t.constant(wc.clone());
                let p = t.matmul(v, c)?;
                Ok(t.frobenius_sq(p))
            }, &x) < 1e-6);
            let xc = x.clone();
            assert!(check(move |t, v| {
                let c = t.constant(xc.clone());
                let p = t.matmul(c, v)?;
                Ok(t.frobenius_sq(p))
            }, &w) < 1e-6);
            let sc = same.clone();
            assert!(check(move |t, v| {
                let c = t.constant(sc.clone());
                let s = t.add(v, c)?;
                Ok(t.frobenius_sq(s))
            }, &x) < 1e-6);
            assert!(check(|t, v| {
                let s = t.scale(v, -2.5);
                Ok(t.frobenius_sq(s))
            }, &x) < 1e-6);
            let sc = same.clone();
            assert!(check(move |t, v| {
                let c = t.constant(sc.clone());
                let s = t.mul(v, c)?;
                let s = t.mul(s, v)?;
                Ok(t.sum_all(s))
            }, &x) < 1e-6);
            let sc = same.clone();
            assert!(check(move |t, v| {
                let tr = t.transpose(v);
                let c = t.constant(sc.transpose());
                let p = t.mul(tr, c)?;
                Ok(t.sum_all(p))
            }, &x) < 1e-6);
            assert!(check(|t, v| {
                let s = t.sqrt(v)?;
                Ok(t.sum_all(s))
            }, &pos) < 1e-6);
            assert!(check(|t, v| {
                let n = t.frobenius_sq(v);
                let s = t.sum_all(v);
                let d = t.div(s, n)?;
                Ok(t.sum_all(d))
            }, &x) < 1e-6);
            // keep entries away from the kink
            let shifted = x.map(|v| if v.abs() < 0.05 { v + 0.1 } else { v });
            assert!(check(|t, v| {
                let r = t.relu(v);
                let r = t.mul(r, v)?;
                Ok(t.sum_all(r))
            }, &shifted) < 1e-6);
            let sc = same.clone();
            assert!(check(move |t, v| {
                let l = t.log_softmax(v);
                let c = t.constant(sc.clone());
                let p = t.mul(l, c)?;
                Ok(t.sum_all(p))
            }, &x) < 1e-6);
            assert!(check(|t, v| {
                let g = t.gram(v);
                let g = t.mul(g, g)?;
                Ok(t.sum_all(g))
            }, &x) < 1e-6);
            let k = rng.gaussian_matrix(4, 4);
            let mix = rng.gaussian_matrix(4, 4);
            assert!(check(move |t, v| {
                let c = t.center_gram(v)?;
                let m = t.constant(mix.clone());
                let p = t.mul(c, m)?;
                let p = t.mul(p, c)?;
                Ok(t.sum_all(p))
            }, &k) < 1e-6);
        }
    }

    #[test]
    fn adjoints_are_linear() {
        let mut rng = Rng::new(6);
        let x = rng.gaussian_matrix(3, 3);
        let (alpha, beta) = (0.7, -1.3);
        let grad_of = |which: u8| {
            let mut t = Tape::new();
            let v = t.leaf(x.clone());
            let f = t.frobenius_sq(v);
            let g0 = t.gram(v);
            let g = t.sum_all(g0);
            let out = match which {
                0 => f,
                1 => g,
                _ => {
                    let a = t.scale(f, alpha);
                    let b = t.scale(g, beta);
                    t.add(a, b).unwrap()
                }
            };
            t.backward(out).unwrap().wrt(v)
        };
        let combined = grad_of(2);
        let separate = grad_of(0).scale(alpha).add(&grad_of(1).scale(beta)).unwrap();
        assert!(combined.sub(&separate).unwrap().max_abs() < 1e-10);
    }

    #[test]
    fn unused_leaf_has_zero_gradient() {
        let mut t = Tape::new();
        let a = t.leaf(Matrix::filled(2, 2, 1.0));
        let b = t.leaf(Matrix::filled(2, 2, 3.0));
        let s = t.sum_all(a);
        let g = t.backward(s).unwrap();
        assert!(g.get(b).is_none());
        assert_eq!(g.wrt(b), Matrix::zeros(2, 2));
    }
}
