use std::ops::Range;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::error::{Result, ShapeError};

/// Diagonal of the Cholesky factor below this fraction of its largest entry
/// counts as singular when no damping is applied.
const RANK_TOL: f64 = 1e-7;

/// `JᵀJ`, formed with a dense product.
pub fn gramian(j: &DMatrix<f64>) -> DMatrix<f64> {
    j.transpose() * j
}

fn add_diagonal(a: &mut DMatrix<f64>, eps: f64) {
    for k in 0..a.nrows() {
        a[(k, k)] += eps;
    }
}

fn factor(a: DMatrix<f64>, eps: f64) -> Result<Cholesky<f64, Dyn>> {
    let chol = Cholesky::new(a).ok_or(ShapeError::RankDeficient { epsilon: eps })?;
    let d = chol.l_dirty().diagonal();
    let max = d.iter().cloned().fold(0.0, f64::max);
    let min = d.iter().cloned().fold(f64::INFINITY, f64::min);
    if eps == 0.0 && !(min > RANK_TOL * max) {
        return Err(ShapeError::RankDeficient { epsilon: eps });
    }
    Ok(chol)
}

/// Solve `(JᵀJ + εI) δ = g` by Cholesky with one step of iterative refinement.
pub fn gn_direction_dense(j: &DMatrix<f64>, g: &DVector<f64>, eps: f64) -> Result<DVector<f64>> {
    check_eps(eps)?;
    if g.len() != j.ncols() {
        return Err(ShapeError::InvalidArgument(format!(
            "gradient has length {}, Jacobian has {} columns",
            g.len(),
            j.ncols()
        )));
    }
    let mut a = gramian(j);
    add_diagonal(&mut a, eps);
    let chol = factor(a.clone(), eps)?;
    let mut d = chol.solve(g);
    let res = g - &a * &d;
    d += chol.solve(&res);
    finite(d, "dense direction")
}

fn check_eps(eps: f64) -> Result<()> {
    if eps >= 0.0 && eps.is_finite() {
        Ok(())
    } else {
        Err(ShapeError::InvalidArgument(format!("epsilon must be >= 0, got {eps}")))
    }
}

fn finite(d: DVector<f64>, what: &str) -> Result<DVector<f64>> {
    if d.iter().all(|v| v.is_finite()) {
        Ok(d)
    } else {
        Err(ShapeError::SolverBreakdown(format!("{what} is not finite")))
    }
}

/// Symmetric positive semi-definite operator known only through products.
pub trait LinearOperator {
    fn dim(&self) -> usize;
    fn apply(&self, v: &DVector<f64>) -> DVector<f64>;
    /// Diagonal entries, if cheaply available (for Jacobi preconditioning).
    fn diagonal(&self) -> Option<DVector<f64>> {
        None
    }
}

/// `v ↦ Jᵀ(Jv) + εv` without forming `JᵀJ`.
pub struct GramianOperator<'a> {
    pub j: &'a DMatrix<f64>,
    pub eps: f64,
}

impl LinearOperator for GramianOperator<'_> {
    fn dim(&self) -> usize {
        self.j.ncols()
    }

    fn apply(&self, v: &DVector<f64>) -> DVector<f64> {
        let jv = self.j * v;
        self.j.tr_mul(&jv) + v * self.eps
    }

    fn diagonal(&self) -> Option<DVector<f64>> {
        Some(DVector::from_iterator(
            self.j.ncols(),
            self.j.column_iter().map(|c| c.norm_squared() + self.eps),
        ))
    }
}

/// Explicit dense symmetric matrix as an operator.
pub struct DenseOperator<'a>(pub &'a DMatrix<f64>);

impl LinearOperator for DenseOperator<'_> {
    fn dim(&self) -> usize {
        self.0.nrows()
    }
    fn apply(&self, v: &DVector<f64>) -> DVector<f64> {
        self.0 * v
    }
    fn diagonal(&self) -> Option<DVector<f64>> {
        Some(self.0.diagonal())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
/// `Jacobi` mixes the `ε`-eigenspace into the Krylov space when `JᵀJ` is rank
/// deficient, so the residual test then bounds the error only by `tol/ε`.
#[serde(rename_all = "snake_case")]
pub enum Preconditioner {
    None,
    Jacobi,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CgConfig {
    pub max_iter: usize,
    pub rel_tol: f64,
    pub preconditioner: Preconditioner,
}

impl Default for CgConfig {
    fn default() -> Self {
        Self {
            max_iter: 200,
            rel_tol: 1e-8,
            preconditioner: Preconditioner::None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CgResult {
    pub x: DVector<f64>,
    pub iterations: usize,
    /// `‖A x - b‖ / ‖b‖` at exit.
    pub rel_residual: f64,
    pub converged: bool,
}

/// (Preconditioned) conjugate gradients for `A δ = g`, starting from zero.
pub fn gn_direction_cg<A: LinearOperator + ?Sized>(op: &A, g: &DVector<f64>, cfg: &CgConfig) -> Result<CgResult> {
    let n = op.dim();
    if g.len() != n {
        return Err(ShapeError::InvalidArgument(format!(
            "right-hand side has length {}, operator has dimension {n}",
            g.len()
        )));
    }
    if !(cfg.rel_tol > 0.0) {
        return Err(ShapeError::InvalidArgument("rel_tol must be positive".into()));
    }
    let bnorm = g.norm();
    let mut x = DVector::zeros(n);
    if bnorm == 0.0 {
        return Ok(CgResult {
            x,
            iterations: 0,
            rel_residual: 0.0,
            converged: true,
        });
    }
    let inv_diag = match cfg.preconditioner {
        Preconditioner::None => None,
        Preconditioner::Jacobi => {
            let d = op
                .diagonal()
                .ok_or_else(|| ShapeError::InvalidArgument("operator has no diagonal for Jacobi".into()))?;
            Some(d.map(|v| if v > 0.0 { 1.0 / v } else { 1.0 }))
        }
    };
    let precond = |r: &DVector<f64>| match &inv_diag {
        Some(d) => r.component_mul(d),
        None => r.clone(),
    };
    let mut r = g.clone();
    let mut z = precond(&r);
    let mut p = z.clone();
    let mut rz = r.dot(&z);
    let tol = cfg.rel_tol * bnorm;
    let mut it = 0;
    let mut rnorm = bnorm;
    while it < cfg.max_iter {
        let ap = op.apply(&p);
        if ap.iter().any(|v| !v.is_finite()) {
            return Err(ShapeError::SolverBreakdown(format!(
                "non-finite operator output at CG iteration {it}"
            )));
        }
        let pap = p.dot(&ap);
        if !(pap > 0.0) {
            return Err(ShapeError::SolverBreakdown(format!(
                "non-positive curvature pᵀAp = {pap:e} at CG iteration {it}"
            )));
        }
        let alpha = rz / pap;
        x.axpy(alpha, &p, 1.0);
        r.axpy(-alpha, &ap, 1.0);
        it += 1;
        rnorm = r.norm();
        if rnorm <= tol {
            break;
        }
        z = precond(&r);
        let rz_new = r.dot(&z);
        let beta = rz_new / rz;
        rz = rz_new;
        p = &z + p * beta;
    }
    // report the true residual rather than the recursively updated one
    let true_res = (g - op.apply(&x)).norm();
    let rel = true_res / bnorm;
    Ok(CgResult {
        x,
        iterations: it,
        rel_residual: rel,
        converged: rnorm <= tol,
    })
}

/// `Jᵀ(εI + JJᵀ)⁻¹ r`, the push-through form of the regularized GN direction.
///
/// `JJᵀ` is accumulated over column blocks (one per network layer). Tall Jacobians
/// (more rows than columns) are solved in parameter space instead: the
/// `N x N` form would amplify the part of `r` outside the range of `J` by `1/ε`
/// before `Jᵀ` cancels it.
pub fn gn_direction_woodbury(
    j: &DMatrix<f64>,
    r: &DVector<f64>,
    eps: f64,
    blocks: Option<&[Range<usize>]>,
) -> Result<DVector<f64>> {
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(ShapeError::InvalidArgument(format!(
            "Woodbury direction needs epsilon > 0, got {eps}"
        )));
    }
    if r.len() != j.nrows() {
        return Err(ShapeError::InvalidArgument(format!(
            "residual has length {}, Jacobian has {} rows",
            r.len(),
            j.nrows()
        )));
    }
    let n = j.nrows();
    if n > j.ncols() {
        return gn_direction_dense(j, &j.tr_mul(r), eps);
    }
    let whole = [0..j.ncols()];
    let blocks = blocks.unwrap_or(&whole);
    let mut k = DMatrix::zeros(n, n);
    for b in blocks {
        let jb = j.columns(b.start, b.len());
        k += &jb * jb.transpose();
    }
    add_diagonal(&mut k, eps);
    let chol = Cholesky::new(k.clone()).ok_or(ShapeError::RankDeficient { epsilon: eps })?;
    let mut y = chol.solve(r);
    let res = r - &k * &y;
    y += chol.solve(&res);
    finite(j.tr_mul(&y), "Woodbury direction")
}
