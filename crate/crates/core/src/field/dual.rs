//! Forward-mode dual numbers over the 13 components of a second-order jet.
//!
//! Residual formulas are written once, generically over [`Real`], and
//! evaluated either on plain `f64` jets (values) or on [`Dual`] jets
//! (values plus partial derivatives with respect to every jet component).
//! The partials are the output adjoint fed to the network's backward pass.

use std::ops::{Add, Div, Mul, Neg, Sub};

use super::Jet2;

/// Number of independent jet components: value, 3 gradient entries, 9 Hessian entries.
pub const JET_VARS: usize = 13;

/// Scalar arithmetic needed by the residual formulas.
pub trait Real:
    Copy
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
{
    fn cst(v: f64) -> Self;
    fn re(&self) -> f64;
    fn sqrt(self) -> Self;
    /// Same value with all derivative information dropped.
    fn detach(self) -> Self {
        Self::cst(self.re())
    }
    fn scale(self, s: f64) -> Self {
        self * Self::cst(s)
    }
}

impl Real for f64 {
    #[inline]
    fn cst(v: f64) -> Self {
        v
    }
    #[inline]
    fn re(&self) -> f64 {
        *self
    }
    #[inline]
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Dual {
    pub re: f64,
    pub eps: [f64; JET_VARS],
}

impl Dual {
    pub fn constant(re: f64) -> Self {
        Self {
            re,
            eps: [0.0; JET_VARS],
        }
    }

    pub fn variable(re: f64, index: usize) -> Self {
        let mut eps = [0.0; JET_VARS];
        eps[index] = 1.0;
        Self { re, eps }
    }

    #[inline]
    fn map(self, re: f64, d: f64) -> Self {
        let mut eps = self.eps;
        for e in &mut eps {
            *e *= d;
        }
        Self { re, eps }
    }
}

impl Add for Dual {
    type Output = Self;
    #[inline]
    fn add(self, o: Self) -> Self {
        let mut eps = self.eps;
        for (e, b) in eps.iter_mut().zip(o.eps) {
            *e += b;
        }
        Self {
            re: self.re + o.re,
            eps,
        }
    }
}

impl Sub for Dual {
    type Output = Self;
    #[inline]
    fn sub(self, o: Self) -> Self {
        let mut eps = self.eps;
        for (e, b) in eps.iter_mut().zip(o.eps) {
            *e -= b;
        }
        Self {
            re: self.re - o.re,
            eps,
        }
    }
}

impl Mul for Dual {
    type Output = Self;
    #[inline]
    fn mul(self, o: Self) -> Self {
        let mut eps = [0.0; JET_VARS];
        for i in 0..JET_VARS {
            eps[i] = self.eps[i] * o.re + self.re * o.eps[i];
        }
        Self {
            re: self.re * o.re,
            eps,
        }
    }
}

impl Div for Dual {
    type Output = Self;
    #[inline]
    fn div(self, o: Self) -> Self {
        let inv = 1.0 / o.re;
        let re = self.re * inv;
        let mut eps = [0.0; JET_VARS];
        for i in 0..JET_VARS {
            eps[i] = (self.eps[i] - re * o.eps[i]) * inv;
        }
        Self { re, eps }
    }
}

impl Neg for Dual {
    type Output = Self;
    #[inline]
    fn neg(self) -> Self {
        self.map(-self.re, -1.0)
    }
}

impl Real for Dual {
    fn cst(v: f64) -> Self {
        Dual::constant(v)
    }
    fn re(&self) -> f64 {
        self.re
    }
    fn sqrt(self) -> Self {
        let s = self.re.sqrt();
        // sqrt is not differentiable at 0; treat the derivative there as 0.
        if s == 0.0 {
            return Dual::constant(0.0);
        }
        self.map(s, 0.5 / s)
    }
}

/// Partial derivatives of a scalar with respect to the components of a [`Jet2`].
///
/// Hessian entries are treated as nine independent variables; symmetric
/// folding happens when the adjoint enters the network's backward pass.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct JetAdjoint {
    pub value: f64,
    pub grad: [f64; 3],
    pub hess: [[f64; 3]; 3],
}

impl JetAdjoint {
    pub fn from_dual(d: &Dual) -> Self {
        let mut adj = JetAdjoint {
            value: d.eps[0],
            ..Default::default()
        };
        for k in 0..3 {
            adj.grad[k] = d.eps[1 + k];
            for l in 0..3 {
                adj.hess[k][l] = d.eps[4 + 3 * k + l];
            }
        }
        adj
    }

    pub fn scaled(&self, s: f64) -> Self {
        let mut out = *self;
        out.value *= s;
        for k in 0..3 {
            out.grad[k] *= s;
            for l in 0..3 {
                out.hess[k][l] *= s;
            }
        }
        out
    }

    pub fn add_scaled(&mut self, other: &JetAdjoint, s: f64) {
        self.value += s * other.value;
        for k in 0..3 {
            self.grad[k] += s * other.grad[k];
            for l in 0..3 {
                self.hess[k][l] += s * other.hess[k][l];
            }
        }
    }

    pub fn is_zero(&self) -> bool {
        self.value == 0.0
            && self.grad.iter().all(|&g| g == 0.0)
            && self.hess.iter().flatten().all(|&h| h == 0.0)
    }
}

impl Jet2<f64> {
    /// Lift a jet into dual numbers, one independent variable per component.
    pub fn lift(&self) -> Jet2<Dual> {
        let mut grad = [Dual::constant(0.0); 3];
        let mut hess = [[Dual::constant(0.0); 3]; 3];
        for k in 0..3 {
            grad[k] = Dual::variable(self.grad[k], 1 + k);
            for l in 0..3 {
                hess[k][l] = Dual::variable(self.hess[k][l], 4 + 3 * k + l);
            }
        }
        Jet2 {
            value: Dual::variable(self.value, 0),
            grad,
            hess,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn product_and_quotient_rules() {
        let a = Dual::variable(3.0, 0);
        let b = Dual::variable(2.0, 1);
        let p = a * b;
        assert_eq!(p.re, 6.0);
        assert_eq!(p.eps[0], 2.0);
        assert_eq!(p.eps[1], 3.0);
        let q = a / b;
        assert_eq!(q.re, 1.5);
        assert_eq!(q.eps[0], 0.5);
        assert_eq!(q.eps[1], -0.75);
    }

    #[test]
    fn sqrt_at_zero_has_zero_derivative() {
        let z = Dual::variable(0.0, 2).sqrt();
        assert_eq!(z.re, 0.0);
        assert!(z.eps.iter().all(|&e| e == 0.0));
        let four = Dual::variable(4.0, 2).sqrt();
        assert_eq!(four.re, 2.0);
        assert_eq!(four.eps[2], 0.25);
    }
}
