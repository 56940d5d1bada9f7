use std::ops::Range;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use super::{
    clip_residual, residual_at, residual_with_adjoint, PointMeta, ResidualKind, ResidualOptions,
};
use crate::error::{Result, ShapeError};
use crate::field::{JetAdjoint, NeuralField, ScalarField};
use crate::geomio::AnalyticSurface;
use crate::sampling::SamplerHandle;

/// One weighted residual energy `λ̃/2N Σ r²`.
///
/// `weight` is the reweighted `λ̃ = λ|Ω|`; the domain measure is folded into it.
#[derive(Clone, Debug)]
pub struct LossTerm {
    pub kind: ResidualKind,
    pub weight: f64,
    pub domain: SamplerHandle,
    pub n_samples: usize,
    /// Cap on the per-point energy contribution (sum of squared entries).
    pub clip: Option<f64>,
    /// Target field for `Supervised` terms.
    pub target: Option<AnalyticSurface>,
}

impl LossTerm {
    pub fn new(kind: ResidualKind, weight: f64, domain: SamplerHandle, n_samples: usize) -> Result<Self> {
        if !(weight.is_finite() && weight > 0.0) {
            return Err(ShapeError::InvalidArgument(format!(
                "loss weight must be finite and positive, got {weight}"
            )));
        }
        if n_samples == 0 {
            return Err(ShapeError::InvalidArgument("n_samples must be >= 1".into()));
        }
        Ok(Self {
            kind,
            weight,
            domain,
            n_samples,
            clip: None,
            target: None,
        })
    }

    pub fn with_clip(mut self, cap: Option<f64>) -> Self {
        self.clip = cap;
        self
    }

    pub fn with_target(mut self, target: AnalyticSurface) -> Self {
        self.target = Some(target);
        self
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Sample {
    pub x: [f64; 3],
    pub meta: PointMeta,
}

impl Sample {
    pub fn at(x: [f64; 3]) -> Self {
        Self {
            x,
            meta: PointMeta::default(),
        }
    }
}

/// Sample points of one term for one iteration.
#[derive(Clone, Debug, PartialEq)]
pub struct TermBatch {
    pub term: usize,
    pub iteration: usize,
    pub points: Vec<Sample>,
}

/// Stacked residual vector, optional Jacobian and per-term bookkeeping.
///
/// Block `i` holds term `i`'s residuals scaled by `sqrt(λ̃_i / N_i)`.
#[derive(Clone, Debug)]
pub struct ResidualEval {
    pub r: DVector<f64>,
    pub jacobian: Option<DMatrix<f64>>,
    pub block_offsets: Vec<Range<usize>>,
    pub term_losses: Vec<f64>,
}

impl ResidualEval {
    /// `‖r‖² / 2`.
    pub fn loss(&self) -> f64 {
        0.5 * self.r.norm_squared()
    }

    /// `Jᵀr`, if the Jacobian was assembled.
    pub fn gradient(&self) -> Option<DVector<f64>> {
        self.jacobian.as_ref().map(|j| j.tr_mul(&self.r))
    }
}

/// Sum of term losses grouped by residual kind.
pub fn term_loss_by_kind(terms: &[LossTerm], eval: &ResidualEval) -> Vec<(ResidualKind, f64)> {
    let mut out: Vec<(ResidualKind, f64)> = Vec::new();
    for (t, l) in terms.iter().zip(&eval.term_losses) {
        match out.iter_mut().find(|(k, _)| *k == t.kind) {
            Some(e) => e.1 += l,
            None => out.push((t.kind, *l)),
        }
    }
    out
}

fn check_batches(terms: &[LossTerm], batches: &[TermBatch]) -> Result<()> {
    if terms.len() != batches.len() {
        return Err(ShapeError::InvalidArgument(format!(
            "{} terms but {} batches",
            terms.len(),
            batches.len()
        )));
    }
    Ok(())
}

fn tag(err: ShapeError, term: usize, sample: usize) -> ShapeError {
    match err {
        ShapeError::DegenerateGradient { point, norm, .. } => ShapeError::DegenerateGradient {
            point,
            norm,
            term: Some(term),
            sample: Some(sample),
        },
        e => e,
    }
}

fn block_scale(term: &LossTerm, n_points: usize) -> f64 {
    if n_points == 0 {
        0.0
    } else {
        (term.weight / n_points as f64).sqrt()
    }
}

fn block_layout(terms: &[LossTerm], batches: &[TermBatch]) -> (Vec<Range<usize>>, usize) {
    let mut offsets = Vec::with_capacity(terms.len());
    let mut n = 0;
    for (t, b) in terms.iter().zip(batches) {
        let len = b.points.len() * t.kind.outputs();
        offsets.push(n..n + len);
        n += len;
    }
    (offsets, n)
}

/// Apply an optional cap to the entries of one sample; returns whether clipped.
fn apply_clip(values: &mut [f64], cap: Option<f64>) -> bool {
    let Some(cap) = cap else { return false };
    let contribution: f64 = values.iter().map(|v| v * v).sum();
    if values.len() == 1 {
        let (v, c) = clip_residual(values[0], cap);
        values[0] = v;
        return c;
    }
    if contribution > cap {
        let s = (cap / contribution).sqrt();
        for v in values.iter_mut() {
            *v *= s;
        }
        true
    } else {
        false
    }
}

fn finish(
    terms: &[LossTerm],
    offsets: Vec<Range<usize>>,
    r: Vec<f64>,
    jacobian: Option<DMatrix<f64>>,
) -> ResidualEval {
    let term_losses = offsets
        .iter()
        .map(|o| 0.5 * r[o.clone()].iter().map(|v| v * v).sum::<f64>())
        .collect();
    debug_assert_eq!(terms.len(), offsets.len());
    ResidualEval {
        r: DVector::from_vec(r),
        jacobian,
        block_offsets: offsets,
        term_losses,
    }
}

/// Residual vector only, for any field (analytic fields included).
pub fn eval_loss<F: ScalarField>(
    terms: &[LossTerm],
    field: &F,
    batches: &[TermBatch],
    opts: &ResidualOptions,
) -> Result<ResidualEval> {
    check_batches(terms, batches)?;
    let (offsets, n) = block_layout(terms, batches);
    let mut r = vec![0.0; n];
    for (ti, (term, batch)) in terms.iter().zip(batches).enumerate() {
        let scale = block_scale(term, batch.points.len());
        let m = term.kind.outputs();
        let vals: Vec<Result<[f64; 2]>> = batch
            .points
            .par_iter()
            .enumerate()
            .map(|(si, s)| {
                let jet = field.try_jet2(&s.x)?;
                let (mut v, _) = residual_at(term.kind, &jet, &s.x, &s.meta, opts)
                    .map_err(|e| tag(e, ti, si))?
                    .as_array();
                apply_clip(&mut v[..m], term.clip);
                Ok(v)
            })
            .collect();
        let block = &mut r[offsets[ti].clone()];
        for (si, v) in vals.into_iter().enumerate() {
            let v = v?;
            for k in 0..m {
                block[si * m + k] = scale * v[k];
            }
        }
    }
    Ok(finish(terms, offsets, r, None))
}

type PointOutputs = ([f64; 2], [JetAdjoint; 2], usize, bool);

fn point_outputs(
    term: &LossTerm,
    field: &NeuralField,
    tape: &mut crate::field::Tape,
    s: &Sample,
    opts: &ResidualOptions,
) -> Result<PointOutputs> {
    let jet = field.forward_tape(&s.x, tape);
    if !jet.is_finite() {
        return Err(ShapeError::NonFinite {
            what: "field jet",
            x: s.x,
        });
    }
    let r = residual_with_adjoint(term.kind, &jet, &s.x, &s.meta, opts)?;
    let (vals, m) = r.as_array();
    let mut v = [vals[0].0, vals[1].0];
    let adj = [vals[0].1, vals[1].1];
    let clipped = apply_clip(&mut v[..m], term.clip);
    Ok((v, adj, m, clipped))
}

/// Stack residuals of all terms and, if requested, their parameter Jacobian.
///
/// Jacobian rows are the exact θ-gradients of the scaled residual entries;
/// rows of clipped samples are zero.
pub fn eval_residuals(
    terms: &[LossTerm],
    field: &NeuralField,
    batches: &[TermBatch],
    want_jacobian: bool,
    opts: &ResidualOptions,
) -> Result<ResidualEval> {
    if !want_jacobian {
        return eval_loss(terms, field, batches, opts);
    }
    check_batches(terms, batches)?;
    let (offsets, n) = block_layout(terms, batches);
    let p = field.num_params();
    let mut r = vec![0.0; n];
    let mut rows = vec![0.0; n * p];
    for (ti, (term, batch)) in terms.iter().zip(batches).enumerate() {
        let scale = block_scale(term, batch.points.len());
        let m = term.kind.outputs();
        let block_rows = &mut rows[offsets[ti].start * p..offsets[ti].end * p];
        let vals: Vec<Result<[f64; 2]>> = block_rows
            .par_chunks_mut(m * p)
            .zip(batch.points.par_iter())
            .enumerate()
            .map_init(
                || field.new_tape(),
                |tape, (si, (row, s))| {
                    let (v, adj, m, clipped) =
                        point_outputs(term, field, tape, s, opts).map_err(|e| tag(e, ti, si))?;
                    if !clipped {
                        for k in 0..m {
                            if !adj[k].is_zero() {
                                field.backward(tape, &adj[k], scale, &mut row[k * p..(k + 1) * p]);
                            }
                        }
                    }
                    Ok(v)
                },
            )
            .collect();
        let block = &mut r[offsets[ti].clone()];
        for (si, v) in vals.into_iter().enumerate() {
            let v = v?;
            for k in 0..m {
                block[si * m + k] = scale * v[k];
            }
        }
    }
    let jac = DMatrix::from_row_slice(n, p, &rows);
    Ok(finish(terms, offsets, r, Some(jac)))
}

/// Residuals plus the loss gradient `Jᵀr`, without materializing `J`.
///
/// Partial sums are formed over fixed-size chunks and reduced in order, so
/// the result does not depend on the thread count.
pub fn eval_loss_gradient(
    terms: &[LossTerm],
    field: &NeuralField,
    batches: &[TermBatch],
    opts: &ResidualOptions,
) -> Result<(ResidualEval, DVector<f64>)> {
    const CHUNK: usize = 64;
    check_batches(terms, batches)?;
    let (offsets, n) = block_layout(terms, batches);
    let p = field.num_params();
    let mut r = vec![0.0; n];
    let mut grad = vec![0.0; p];
    for (ti, (term, batch)) in terms.iter().zip(batches).enumerate() {
        let scale = block_scale(term, batch.points.len());
        let m = term.kind.outputs();
        let parts: Vec<Result<(Vec<[f64; 2]>, Vec<f64>)>> = batch
            .points
            .par_chunks(CHUNK)
            .enumerate()
            .map(|(ci, chunk)| {
                let mut tape = field.new_tape();
                let mut g = vec![0.0; p];
                let mut vals = Vec::with_capacity(chunk.len());
                for (k, s) in chunk.iter().enumerate() {
                    let si = ci * CHUNK + k;
                    let (v, adj, m, clipped) = point_outputs(term, field, &mut tape, s, opts)
                        .map_err(|e| tag(e, ti, si))?;
                    if !clipped {
                        // d/dθ ½(scale·r)² = scale² r ∇θ r
                        let mut total = JetAdjoint::default();
                        for o in 0..m {
                            total.add_scaled(&adj[o], scale * scale * v[o]);
                        }
                        if !total.is_zero() {
                            field.backward(&tape, &total, 1.0, &mut g);
                        }
                    }
                    vals.push(v);
                }
                Ok((vals, g))
            })
            .collect();
        let block = &mut r[offsets[ti].clone()];
        let mut si = 0;
        for part in parts {
            let (vals, g) = part?;
            for v in vals {
                for k in 0..m {
                    block[si * m + k] = scale * v[k];
                }
                si += 1;
            }
            for (a, b) in grad.iter_mut().zip(&g) {
                *a += b;
            }
        }
    }
    Ok((finish(terms, offsets, r, None), DVector::from_vec(grad)))
}
