//! Double-double arithmetic (about 29 significant digits in exp and ln).
//!
//! Used to evaluate finite-difference oracles: a central difference with step
//! `h` cannot resolve gradients below `ulp(f) / 2h` in plain `f64`, which at
//! `h = 1e-5` is around `1e-12` for objectives of order one.

use std::fmt;
use std::ops::{Add, Div, Mul, Neg, Sub};

use crate::autodiff::Real;

/// Unevaluated sum `hi + lo` with `|lo| ≤ ulp(hi) / 2`.
#[derive(Clone, Copy, PartialEq, PartialOrd, Default)]
pub struct DoubleF64 {
    pub hi: f64,
    pub lo: f64,
}

impl fmt::Debug for DoubleF64 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:e} + {:e}", self.hi, self.lo)
    }
}

#[inline]
fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

#[inline]
fn quick_two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    (s, b - (s - a))
}

#[inline]
fn two_prod(a: f64, b: f64) -> (f64, f64) {
    let p = a * b;
    (p, a.mul_add(b, -p))
}

const LN2: DoubleF64 = DoubleF64 {
    hi: std::f64::consts::LN_2,
    lo: 2.319_046_813_846_299_6e-17,
};

impl DoubleF64 {
    pub const fn from_f64(x: f64) -> Self {
        Self { hi: x, lo: 0.0 }
    }

    pub fn to_f64(self) -> f64 {
        self.hi + self.lo
    }

    fn is_finite(self) -> bool {
        self.hi.is_finite()
    }

    fn mul_pow2(self, e: i32) -> Self {
        let s = 2f64.powi(e);
        Self {
            hi: self.hi * s,
            lo: self.lo * s,
        }
    }

    fn exp_impl(self) -> Self {
        if self.hi > 709.0 {
            return Self::from_f64(f64::INFINITY);
        }
        if self.hi < -745.0 {
            return Self::from_f64(0.0);
        }
        let k = (self.hi / LN2.hi).round();
        let r = self - LN2 * k;
        // exp(r) = exp(r / 32)^32
        let r = r.mul_pow2(-5);
        let mut term = Self::from_f64(1.0);
        let mut sum = Self::from_f64(1.0);
        for i in 1..30 {
            term = term * r / i as f64;
            sum = sum + term;
            if term.hi.abs() < 1e-36 {
                break;
            }
        }
        for _ in 0..5 {
            sum = sum * sum;
        }
        sum.mul_pow2(k as i32)
    }

    fn ln_impl(self) -> Self {
        if self.hi <= 0.0 {
            return Self::from_f64(if self.hi == 0.0 { f64::NEG_INFINITY } else { f64::NAN });
        }
        if !self.is_finite() {
            return self;
        }
        // Newton on exp(y) = x, doubling precision each step
        let mut y = Self::from_f64(self.hi.ln());
        for _ in 0..2 {
            y = y + self * (-y).exp_impl() - 1.0;
        }
        y
    }
}

impl Add for DoubleF64 {
    type Output = Self;
    #[inline]
    fn add(self, b: Self) -> Self {
        let (s1, s2) = two_sum(self.hi, b.hi);
        let (t1, t2) = two_sum(self.lo, b.lo);
        let (s1, s2) = quick_two_sum(s1, s2 + t1);
        let (hi, lo) = quick_two_sum(s1, s2 + t2);
        if !hi.is_finite() {
            return Self::from_f64(hi);
        }
        Self { hi, lo }
    }
}

impl Neg for DoubleF64 {
    type Output = Self;
    #[inline]
    fn neg(self) -> Self {
        Self {
            hi: -self.hi,
            lo: -self.lo,
        }
    }
}

impl Sub for DoubleF64 {
    type Output = Self;
    #[inline]
    fn sub(self, b: Self) -> Self {
        self + (-b)
    }
}

impl Mul for DoubleF64 {
    type Output = Self;
    #[inline]
    fn mul(self, b: Self) -> Self {
        let (p1, p2) = two_prod(self.hi, b.hi);
        let p2 = p2 + (self.hi * b.lo + self.lo * b.hi);
        let (hi, lo) = quick_two_sum(p1, p2);
        if !hi.is_finite() {
            return Self::from_f64(hi);
        }
        Self { hi, lo }
    }
}

impl Div for DoubleF64 {
    type Output = Self;
    #[inline]
    fn div(self, b: Self) -> Self {
        let q1 = self.hi / b.hi;
        if !q1.is_finite() || q1 == 0.0 && self.hi == 0.0 {
            return Self::from_f64(q1);
        }
        let r = self - b * q1;
        let q2 = r.hi / b.hi;
        let r = r - b * q2;
        let q3 = r.hi / b.hi;
        let (hi, lo) = quick_two_sum(q1, q2);
        Self { hi, lo } + Self::from_f64(q3)
    }
}

macro_rules! scalar_ops {
    ($($tr:ident $m:ident),*) => {$(
        impl $tr<f64> for DoubleF64 {
            type Output = Self;
            #[inline]
            fn $m(self, b: f64) -> Self {
                $tr::$m(self, Self::from_f64(b))
            }
        }
    )*};
}
scalar_ops!(Add add, Sub sub, Mul mul, Div div);

impl Real for DoubleF64 {
    fn value(self) -> f64 {
        self.to_f64()
    }
    fn lift(self, c: f64) -> Self {
        Self::from_f64(c)
    }
    fn exp(self) -> Self {
        self.exp_impl()
    }
    fn ln(self) -> Self {
        self.ln_impl()
    }
    fn abs(self) -> Self {
        if self.hi < 0.0 {
            -self
        } else {
            self
        }
    }
    fn sigmoid(self) -> Self {
        let one = Self::from_f64(1.0);
        if self.hi >= 0.0 {
            one / (one + (-self).exp_impl())
        } else {
            let e = self.exp_impl();
            e / (one + e)
        }
    }
    fn straight_through(self, forward: f64) -> Self {
        Self::from_f64(forward)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dd(x: f64) -> DoubleF64 {
        DoubleF64::from_f64(x)
    }

    #[test]
    fn arithmetic_keeps_low_order_bits() {
        let tiny = dd(1e-20);
        let x = dd(1.0) + tiny - dd(1.0);
        assert_eq!(x.to_f64(), 1e-20);
        let third = dd(1.0) / dd(3.0);
        let back = third * 3.0 - 1.0;
        assert!(back.to_f64().abs() < 1e-31);
    }

    #[test]
    fn exp_and_ln_constants() {
        // e = 2.718281828459045 + 1.4456468917292502e-16
        let e = dd(1.0).exp();
        assert_eq!(e.hi, std::f64::consts::E);
        assert!((e.lo - 1.445_646_891_729_250_2e-16).abs() < 1e-29);
        let l2 = dd(2.0).ln();
        assert_eq!(l2.hi, LN2.hi);
        assert!((l2.lo - LN2.lo).abs() < 1e-29);
    }

    #[test]
    fn exp_ln_round_trip() {
        for x in [1e-8, 0.3, 1.0, 7.5, 123.25, 1e5] {
            let r = dd(x).ln().exp();
            assert!(((r - dd(x)) / dd(x)).to_f64().abs() < 1e-29, "{x}");
        }
        for x in [-30.0, -1.5, 0.0, 2.25, 40.0] {
            let r = dd(x).exp().ln();
            assert!((r - dd(x)).to_f64().abs() < 1e-29, "{x}");
        }
    }

    #[test]
    fn sigmoid_symmetry() {
        for x in [-12.0, -0.7, 0.0, 0.4, 9.0] {
            let s = dd(x).sigmoid() + dd(-x).sigmoid() - 1.0;
            assert!(s.to_f64().abs() < 1e-31);
        }
    }
}
