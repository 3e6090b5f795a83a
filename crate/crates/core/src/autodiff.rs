//! Scalar reverse-mode differentiation.
//!
//! Every relaxed computation in this crate is written once, generically over
//! [`Real`]. Instantiated with `f64` it is a plain forward evaluation; with
//! [`Var`] each operation is recorded on a [`Tape`] and [`Tape::gradient`]
//! propagates adjoints back to the leaves.
//!
//! ```
//! use drpm::autodiff::{Real, Tape};
//!
//! let tape = Tape::new();
//! let x = tape.var(2.0);
//! let y = x * x + x.ln();
//! let grads = tape.gradient(y);
//! assert!((grads.wrt(x) - (4.0 + 0.5)).abs() < 1e-15);
//! ```

use std::cell::RefCell;
use std::fmt;
use std::ops::{Add, Div, Mul, Neg, Sub};

/// Scalar type the relaxed pipeline is generic over.
pub trait Real:
    Copy
    + fmt::Debug
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + Add<f64, Output = Self>
    + Sub<f64, Output = Self>
    + Mul<f64, Output = Self>
    + Div<f64, Output = Self>
{
    /// The primal value.
    fn value(self) -> f64;
    /// A constant living in the same context as `self`.
    fn lift(self, c: f64) -> Self;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn abs(self) -> Self;
    fn sigmoid(self) -> Self;
    /// Forward value `forward`, derivative of `self`.
    fn straight_through(self, forward: f64) -> Self;
}

impl Real for f64 {
    #[inline]
    fn value(self) -> f64 {
        self
    }
    #[inline]
    fn lift(self, c: f64) -> Self {
        c
    }
    #[inline]
    fn exp(self) -> Self {
        f64::exp(self)
    }
    #[inline]
    fn ln(self) -> Self {
        f64::ln(self)
    }
    #[inline]
    fn abs(self) -> Self {
        f64::abs(self)
    }
    #[inline]
    fn sigmoid(self) -> Self {
        sigmoid(self)
    }
    #[inline]
    fn straight_through(self, forward: f64) -> Self {
        forward
    }
}

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

const NONE: usize = usize::MAX;

#[derive(Clone, Copy)]
struct Node {
    parents: [usize; 2],
    partials: [f64; 2],
}

/// Records operations on [`Var`]s.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// A new independent variable.
    pub fn var(&self, value: f64) -> Var<'_> {
        self.push(value, [NONE, NONE], [0.0, 0.0])
    }

    pub fn vars(&self, values: &[f64]) -> Vec<Var<'_>> {
        values.iter().map(|&v| self.var(v)).collect()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: f64, parents: [usize; 2], partials: [f64; 2]) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        let index = nodes.len();
        nodes.push(Node { parents, partials });
        Var {
            tape: self,
            index,
            value,
        }
    }

    /// Adjoints of `output` with respect to every recorded node.
    pub fn gradient(&self, output: Var<'_>) -> Gradients {
        assert!(
            std::ptr::eq(output.tape, self),
            "output recorded on another tape"
        );
        let nodes = self.nodes.borrow();
        let mut adjoint = vec![0.0; nodes.len()];
        adjoint[output.index] = 1.0;
        for i in (0..=output.index).rev() {
            let a = adjoint[i];
            if a == 0.0 {
                continue;
            }
            let node = nodes[i];
            for (&p, &d) in node.parents.iter().zip(&node.partials) {
                if p != NONE {
                    adjoint[p] += a * d;
                }
            }
        }
        Gradients { adjoint }
    }
}

pub struct Gradients {
    adjoint: Vec<f64>,
}

impl Gradients {
    pub fn wrt(&self, var: Var<'_>) -> f64 {
        self.adjoint[var.index]
    }

    pub fn wrt_all(&self, vars: &[Var<'_>]) -> Vec<f64> {
        vars.iter().map(|&v| self.wrt(v)).collect()
    }
}

/// A scalar recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    index: usize,
    value: f64,
}

impl fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Var(#{}: {})", self.index, self.value)
    }
}

impl<'t> Var<'t> {
    #[inline]
    fn unary(self, value: f64, d: f64) -> Self {
        self.tape.push(value, [self.index, NONE], [d, 0.0])
    }

    #[inline]
    fn binary(self, other: Self, value: f64, da: f64, db: f64) -> Self {
        self.tape
            .push(value, [self.index, other.index], [da, db])
    }
}

impl<'t> Real for Var<'t> {
    #[inline]
    fn value(self) -> f64 {
        self.value
    }
    fn lift(self, c: f64) -> Self {
        self.tape.push(c, [NONE, NONE], [0.0, 0.0])
    }
    fn exp(self) -> Self {
        let v = self.value.exp();
        self.unary(v, v)
    }
    fn ln(self) -> Self {
        self.unary(self.value.ln(), 1.0 / self.value)
    }
    fn abs(self) -> Self {
        let d = if self.value > 0.0 {
            1.0
        } else if self.value < 0.0 {
            -1.0
        } else {
            0.0
        };
        self.unary(self.value.abs(), d)
    }
    fn sigmoid(self) -> Self {
        let s = sigmoid(self.value);
        self.unary(s, s * (1.0 - s))
    }
    fn straight_through(self, forward: f64) -> Self {
        self.unary(forward, 1.0)
    }
}

impl<'t> Add for Var<'t> {
    type Output = Self;
    fn add(self, rhs: Self) -> Self {
        self.binary(rhs, self.value + rhs.value, 1.0, 1.0)
    }
}

impl<'t> Sub for Var<'t> {
    type Output = Self;
    fn sub(self, rhs: Self) -> Self {
        self.binary(rhs, self.value - rhs.value, 1.0, -1.0)
    }
}

impl<'t> Mul for Var<'t> {
    type Output = Self;
    fn mul(self, rhs: Self) -> Self {
        self.binary(rhs, self.value * rhs.value, rhs.value, self.value)
    }
}

impl<'t> Div for Var<'t> {
    type Output = Self;
    fn div(self, rhs: Self) -> Self {
        let q = self.value / rhs.value;
        self.binary(rhs, q, 1.0 / rhs.value, -q / rhs.value)
    }
}

impl<'t> Neg for Var<'t> {
    type Output = Self;
    fn neg(self) -> Self {
        self.unary(-self.value, -1.0)
    }
}

impl<'t> Add<f64> for Var<'t> {
    type Output = Self;
    fn add(self, rhs: f64) -> Self {
        self.unary(self.value + rhs, 1.0)
    }
}

impl<'t> Sub<f64> for Var<'t> {
    type Output = Self;
    fn sub(self, rhs: f64) -> Self {
        self.unary(self.value - rhs, 1.0)
    }
}

impl<'t> Mul<f64> for Var<'t> {
    type Output = Self;
    fn mul(self, rhs: f64) -> Self {
        self.unary(self.value * rhs, rhs)
    }
}

impl<'t> Div<f64> for Var<'t> {
    type Output = Self;
    fn div(self, rhs: f64) -> Self {
        self.unary(self.value / rhs, 1.0 / rhs)
    }
}

/// `log Σ exp(x_i)`; `None` for an empty slice.
pub fn log_sum_exp<R: Real>(xs: &[R]) -> Option<R> {
    let first = *xs.first()?;
    let max = xs
        .iter()
        .map(|x| x.value())
        .fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Some(first.lift(f64::NEG_INFINITY));
    }
    let mut acc = (first - max).exp();
    for &x in &xs[1..] {
        acc = acc + (x - max).exp();
    }
    Some(acc.ln() + max)
}

/// Numerically stable softmax of `logits / tau`.
pub fn softmax<R: Real>(logits: &[R], tau: f64) -> Vec<R> {
    let scaled: Vec<R> = logits.iter().map(|&x| x / tau).collect();
    match log_sum_exp(&scaled) {
        Some(lse) => scaled.iter().map(|&x| (x - lse).exp()).collect(),
        None => Vec::new(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn central<F: Fn(f64) -> f64>(f: F, x: f64) -> f64 {
        let h = 1e-6;
        (f(x + h) - f(x - h)) / (2.0 * h)
    }

    #[test]
    fn elementary_derivatives_match_central_differences() {
        let x0 = 0.7;
        let f = |x: f64| (x * x).exp().ln() / (1.0 + x) - x.abs() * 3.0 + x.sigmoid();
        let tape = Tape::new();
        let x = tape.var(x0);
        let y = (x * x).exp().ln() / (x + 1.0) - x.abs() * 3.0 + x.sigmoid();
        assert!((y.value() - f(x0)).abs() < 1e-15);
        let g = tape.gradient(y).wrt(x);
        assert!((g - central(f, x0)).abs() < 1e-8, "{g}");
    }

    #[test]
    fn reused_variable_accumulates() {
        let tape = Tape::new();
        let x = tape.var(3.0);
        let y = x * x * x - x;
        assert_eq!(tape.gradient(y).wrt(x), 26.0);
    }

    #[test]
    fn straight_through_passes_gradient_unchanged() {
        let tape = Tape::new();
        let x = tape.var(0.3);
        let soft = x.sigmoid();
        let y = soft.straight_through(1.0) * 2.0;
        assert_eq!(y.value(), 2.0);
        let s = sigmoid(0.3);
        assert!((tape.gradient(y).wrt(x) - 2.0 * s * (1.0 - s)).abs() < 1e-15);
    }

    #[test]
    fn log_sum_exp_is_stable() {
        let v = log_sum_exp(&[1000.0, 1000.0]).unwrap();
        assert!((v - (1000.0 + 2f64.ln())).abs() < 1e-12);
        assert_eq!(
            log_sum_exp(&[f64::NEG_INFINITY, f64::NEG_INFINITY]),
            Some(f64::NEG_INFINITY)
        );
        assert_eq!(log_sum_exp::<f64>(&[]), None);
    }

    #[test]
    fn softmax_gradient_sums_to_zero() {
        let tape = Tape::new();
        let xs = tape.vars(&[0.1, -0.4, 2.0]);
        let p = softmax(&xs, 0.5);
        let total = p.iter().fold(xs[0].lift(0.0), |a, &b| a + b);
        assert!((total.value() - 1.0).abs() < 1e-15);
        let grads = tape.gradient(p[1]);
        let sum: f64 = grads.wrt_all(&xs).iter().sum();
        assert!(sum.abs() < 1e-15);
    }
}
