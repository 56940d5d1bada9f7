//! Closed-form fields used as oracles and test fixtures.

use super::{Jet2, ScalarField};

/// `f(x) = a·x + c`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AffineField {
    pub a: [f64; 3],
    pub c: f64,
}

impl AffineField {
    /// `f(x) = x3`.
    pub fn plane_z() -> Self {
        Self {
            a: [0.0, 0.0, 1.0],
            c: 0.0,
        }
    }
}

impl ScalarField for AffineField {
    fn eval(&self, x: &[f64; 3]) -> f64 {
        self.a[0] * x[0] + self.a[1] * x[1] + self.a[2] * x[2] + self.c
    }

    fn jet2(&self, x: &[f64; 3]) -> Jet2 {
        Jet2 {
            value: self.eval(x),
            grad: self.a,
            hess: [[0.0; 3]; 3],
        }
    }
}

/// `f(x) = c + b·x + ½ xᵀAx` with symmetric `A`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QuadraticField {
    pub c: f64,
    pub b: [f64; 3],
    pub a: [[f64; 3]; 3],
}

impl QuadraticField {
    /// Symmetrizes `a`.
    pub fn new(c: f64, b: [f64; 3], a: [[f64; 3]; 3]) -> Self {
        let mut s = [[0.0; 3]; 3];
        for k in 0..3 {
            for l in 0..3 {
                s[k][l] = 0.5 * (a[k][l] + a[l][k]);
            }
        }
        Self { c, b, a: s }
    }
}

impl ScalarField for QuadraticField {
    fn eval(&self, x: &[f64; 3]) -> f64 {
        self.jet2(x).value
    }

    fn jet2(&self, x: &[f64; 3]) -> Jet2 {
        let mut ax = [0.0; 3];
        for k in 0..3 {
            ax[k] = self.a[k][0] * x[0] + self.a[k][1] * x[1] + self.a[k][2] * x[2];
        }
        let value = self.c
            + self.b[0] * x[0]
            + self.b[1] * x[1]
            + self.b[2] * x[2]
            + 0.5 * (x[0] * ax[0] + x[1] * ax[1] + x[2] * ax[2]);
        Jet2 {
            value,
            grad: [self.b[0] + ax[0], self.b[1] + ax[1], self.b[2] + ax[2]],
            hess: self.a,
        }
    }
}

/// Any closure pair `(value, jet)`; handy in tests.
pub struct FnField<V, J> {
    pub value: V,
    pub jet: J,
}

impl<V, J> ScalarField for FnField<V, J>
where
    V: Fn(&[f64; 3]) -> f64 + Sync,
    J: Fn(&[f64; 3]) -> Jet2 + Sync,
{
    fn eval(&self, x: &[f64; 3]) -> f64 {
        (self.value)(x)
    }
    fn jet2(&self, x: &[f64; 3]) -> Jet2 {
        (self.jet)(x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plane_jet() {
        let j = AffineField::plane_z().jet2(&[0.4, -2.0, 0.7]);
        assert_eq!(j.value, 0.7);
        assert_eq!(j.grad, [0.0, 0.0, 1.0]);
        assert_eq!(j.hess, [[0.0; 3]; 3]);
    }

    #[test]
    fn quadratic_jet() {
        let q = QuadraticField::new(-1.0, [0.0; 3], [[2.0, 0.0, 0.0], [0.0, 2.0, 0.0], [0.0; 3]]);
        let j = q.jet2(&[2.0, 0.0, 5.0]);
        assert_eq!(j.value, 3.0);
        assert_eq!(j.grad, [4.0, 0.0, 0.0]);
    }
}
