//! C ABI over `shapegn`.
//!
//! Every function returns an [`SgnStatus`]; on failure the message is kept per thread
//! and can be read with [`sgn_last_error_message`]. Buffers are caller-owned.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use shapegn::field::{Activation, FieldSpec, NeuralField, ParamVector, ScalarField};
use shapegn::nalgebra::{DMatrix, DVector};
use shapegn::optim::{gn_direction_cg, gn_direction_dense, gn_direction_woodbury, CgConfig, GramianOperator};
use shapegn::runner::{run_experiment, ExperimentConfig, RunStatus};
use shapegn::ShapeError;

/// Result code of every entry point.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SgnStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    InvalidSpec = 3,
    NonFinite = 4,
    DegenerateGradient = 5,
    RankDeficient = 6,
    SolverBreakdown = 7,
    EmptySurface = 8,
    Io = 9,
    Parse = 10,
    Config = 11,
    BufferTooSmall = 12,
    Panic = 13,
    Other = 14,
}

/// Outcome of a run started with [`sgn_run_experiment`].
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SgnRunStatus {
    Completed = 0,
    TimeBudget = 1,
    Diverged = 2,
    Failed = 3,
}

/// Hidden-layer nonlinearity of [`sgn_field_new`].
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SgnActivation {
    Tanh = 0,
    Sine = 1,
}

/// Linear solver of [`sgn_gn_direction`].
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SgnSolver {
    Dense = 0,
    ConjugateGradient = 1,
    Woodbury = 2,
}

/// Opaque handle to a neural field.
pub struct SgnField {
    inner: NeuralField,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn code(e: &ShapeError) -> SgnStatus {
    match e {
        ShapeError::InvalidSpec(_) => SgnStatus::InvalidSpec,
        ShapeError::InvalidArgument(_) | ShapeError::UnsupportedSurface(_) | ShapeError::EmptySet => {
            SgnStatus::InvalidArgument
        }
        ShapeError::NonFinite { .. } | ShapeError::Divergence { .. } | ShapeError::LineSearchFailed => {
            SgnStatus::NonFinite
        }
        ShapeError::DegenerateGradient { .. } | ShapeError::NegativeDiscriminant { .. } => {
            SgnStatus::DegenerateGradient
        }
        ShapeError::RankDeficient { .. } => SgnStatus::RankDeficient,
        ShapeError::SolverBreakdown(_) => SgnStatus::SolverBreakdown,
        ShapeError::EmptySurface { .. } => SgnStatus::EmptySurface,
        ShapeError::Io(_) => SgnStatus::Io,
        ShapeError::Parse { .. } => SgnStatus::Parse,
        ShapeError::Config(_) => SgnStatus::Config,
    }
}

fn fail(status: SgnStatus, msg: impl Into<String>) -> SgnStatus {
    set_error(msg.into());
    status
}

/// Run `f`, converting errors and panics into status codes.
fn guard<F: FnOnce() -> Result<(), SgnStatus>>(f: F) -> SgnStatus {
    set_error(String::new());
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => SgnStatus::Ok,
        Ok(Err(s)) => s,
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            fail(SgnStatus::Panic, msg)
        }
    }
}

trait OrStatus<T> {
    fn or_status(self) -> Result<T, SgnStatus>;
}

impl<T> OrStatus<T> for shapegn::Result<T> {
    fn or_status(self) -> Result<T, SgnStatus> {
        self.map_err(|e| fail(code(&e), e.to_string()))
    }
}

fn non_null<T>(p: *const T, what: &str) -> Result<(), SgnStatus> {
    if p.is_null() {
        Err(fail(SgnStatus::NullPointer, format!("{what} is null")))
    } else {
        Ok(())
    }
}

unsafe fn slice<'a, T>(p: *const T, n: usize, what: &str) -> Result<&'a [T], SgnStatus> {
    if n == 0 {
        return Ok(&[]);
    }
    non_null(p, what)?;
    Ok(std::slice::from_raw_parts(p, n))
}

unsafe fn slice_mut<'a, T>(p: *mut T, n: usize, what: &str) -> Result<&'a mut [T], SgnStatus> {
    if n == 0 {
        return Ok(&mut []);
    }
    non_null(p, what)?;
    Ok(std::slice::from_raw_parts_mut(p, n))
}

unsafe fn points<'a>(p: *const f64, n: usize, what: &str) -> Result<&'a [[f64; 3]], SgnStatus> {
    if n == 0 {
        return Ok(&[]);
    }
    non_null(p, what)?;
    Ok(std::slice::from_raw_parts(p as *const [f64; 3], n))
}

/// Copy the last error message of this thread into `buf` (NUL-terminated, truncated
/// to `len`). Returns the full message length in bytes, excluding the terminator.
///
/// # Safety
/// `buf` must be null or valid for `len` bytes.
#[no_mangle]
pub unsafe extern "C" fn sgn_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            std::ptr::copy_nonoverlapping(msg.as_ptr() as *const c_char, buf, n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn sgn_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Create a deterministically initialized network with the given layer widths
/// (first 3, last 1). `omega` is used only for the sine activation.
///
/// # Safety
/// `widths` must be valid for `n_widths` entries and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn sgn_field_new(
    widths: *const usize,
    n_widths: usize,
    activation: SgnActivation,
    omega: f64,
    seed: u64,
    out: *mut *mut SgnField,
) -> SgnStatus {
    guard(|| {
        non_null(out, "out")?;
        let w = slice(widths, n_widths, "widths")?.to_vec();
        let act = match activation {
            SgnActivation::Tanh => Activation::Tanh,
            SgnActivation::Sine => Activation::Sine { omega },
        };
        let spec = FieldSpec::new(w, act, seed).or_status()?;
        let inner = NeuralField::initialized(spec).or_status()?;
        *out = Box::into_raw(Box::new(SgnField { inner }));
        Ok(())
    })
}

/// Release a handle from [`sgn_field_new`]. Null is ignored.
///
/// # Safety
/// `field` must be null or a live handle that is not used afterwards.
#[no_mangle]
pub unsafe extern "C" fn sgn_field_free(field: *mut SgnField) {
    if !field.is_null() {
        drop(Box::from_raw(field));
    }
}

unsafe fn field_ref<'a>(field: *const SgnField) -> Result<&'a SgnField, SgnStatus> {
    non_null(field, "field")?;
    Ok(&*field)
}

/// Number of network parameters.
///
/// # Safety
/// `field` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn sgn_field_param_count(field: *const SgnField, out: *mut usize) -> SgnStatus {
    guard(|| {
        let f = field_ref(field)?;
        non_null(out, "out")?;
        *out = f.inner.num_params();
        Ok(())
    })
}

/// Copy the flattened parameters into `buf`; `len` must equal the parameter count.
///
/// # Safety
/// `field` must be a live handle and `buf` valid for `len` writes.
#[no_mangle]
pub unsafe extern "C" fn sgn_field_get_params(field: *const SgnField, buf: *mut f64, len: usize) -> SgnStatus {
    guard(|| {
        let f = field_ref(field)?;
        let p = f.inner.params().as_slice();
        if len != p.len() {
            return Err(fail(
                SgnStatus::BufferTooSmall,
                format!("buffer holds {len} values, field has {}", p.len()),
            ));
        }
        slice_mut(buf, len, "buf")?.copy_from_slice(p);
        Ok(())
    })
}

/// Replace the parameters from `buf`; `len` must equal the parameter count.
///
/// # Safety
/// `field` must be a live handle and `buf` valid for `len` reads.
#[no_mangle]
pub unsafe extern "C" fn sgn_field_set_params(field: *mut SgnField, buf: *const f64, len: usize) -> SgnStatus {
    guard(|| {
        non_null(field, "field")?;
        let f = &mut *field;
        let theta = ParamVector(slice(buf, len, "buf")?.to_vec());
        f.inner = f.inner.with_params(theta).or_status()?;
        Ok(())
    })
}

/// Field value at `x[3]`.
///
/// # Safety
/// `field` must be a live handle, `x` valid for 3 reads and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn sgn_field_eval(field: *const SgnField, x: *const f64, out: *mut f64) -> SgnStatus {
    guard(|| {
        let f = field_ref(field)?;
        let x = points(x, 1, "x")?[0];
        non_null(out, "out")?;
        *out = f.inner.try_eval(&x).or_status()?;
        Ok(())
    })
}

/// Value, gradient (3) and row-major Hessian (9) at `x[3]`.
///
/// # Safety
/// `field` must be a live handle, `x` valid for 3 reads, `value` writable,
/// `grad` valid for 3 writes and `hess` valid for 9 writes.
#[no_mangle]
pub unsafe extern "C" fn sgn_field_jet2(
    field: *const SgnField,
    x: *const f64,
    value: *mut f64,
    grad: *mut f64,
    hess: *mut f64,
) -> SgnStatus {
    guard(|| {
        let f = field_ref(field)?;
        let x = points(x, 1, "x")?[0];
        non_null(value, "value")?;
        let g = slice_mut(grad, 3, "grad")?;
        let h = slice_mut(hess, 9, "hess")?;
        let j = f.inner.try_jet2(&x).or_status()?;
        *value = j.value;
        g.copy_from_slice(&j.grad);
        for (r, row) in j.hess.iter().enumerate() {
            h[3 * r..3 * r + 3].copy_from_slice(row);
        }
        Ok(())
    })
}

/// One-sided chamfer `sqrt(mean over q of min over p of |q - p|^2)` for packed
/// `xyz` point arrays.
///
/// # Safety
/// `p` must be valid for `3 * np` reads, `q` for `3 * nq` reads and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn sgn_chamfer_one_sided(
    p: *const f64,
    np: usize,
    q: *const f64,
    nq: usize,
    out: *mut f64,
) -> SgnStatus {
    guard(|| {
        let p = points(p, np, "p")?;
        let q = points(q, nq, "q")?;
        non_null(out, "out")?;
        *out = shapegn::metrics::chamfer_one_sided(p, q).or_status()?;
        Ok(())
    })
}

/// Regularized Gauss-Newton direction `(JᵀJ + εI)⁻¹ Jᵀ r` for a row-major `J`
/// (`rows × cols`). The update is `θ - η δ`. Writes `cols` values to `delta`.
///
/// # Safety
/// `j` must be valid for `rows * cols` reads, `r` for `rows` reads and
/// `delta` for `cols` writes.
#[no_mangle]
pub unsafe extern "C" fn sgn_gn_direction(
    j: *const f64,
    rows: usize,
    cols: usize,
    r: *const f64,
    epsilon: f64,
    solver: SgnSolver,
    delta: *mut f64,
) -> SgnStatus {
    guard(|| {
        let n = rows
            .checked_mul(cols)
            .ok_or_else(|| fail(SgnStatus::InvalidArgument, "rows * cols overflows"))?;
        let jm = DMatrix::from_row_slice(rows, cols, slice(j, n, "j")?);
        let rv = DVector::from_column_slice(slice(r, rows, "r")?);
        let out = slice_mut(delta, cols, "delta")?;
        let d = match solver {
            SgnSolver::Dense => gn_direction_dense(&jm, &jm.tr_mul(&rv), epsilon).or_status()?,
            SgnSolver::ConjugateGradient => {
                if !(epsilon >= 0.0) {
                    return Err(fail(SgnStatus::InvalidArgument, "epsilon must be >= 0"));
                }
                let op = GramianOperator { j: &jm, eps: epsilon };
                gn_direction_cg(&op, &jm.tr_mul(&rv), &CgConfig::default()).or_status()?.x
            }
            SgnSolver::Woodbury => gn_direction_woodbury(&jm, &rv, epsilon, None).or_status()?,
        };
        out.copy_from_slice(d.as_slice());
        Ok(())
    })
}

/// Run the experiment described by the TOML file at `config_path`.
///
/// `run_status` receives the loop outcome and `final_loss` the last logged
/// loss (NaN if none). The call itself returns `Ok` whenever the run started.
///
/// # Safety
/// `config_path` must be a NUL-terminated UTF-8 path; outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn sgn_run_experiment(
    config_path: *const c_char,
    run_status: *mut SgnRunStatus,
    final_loss: *mut f64,
) -> SgnStatus {
    guard(|| {
        non_null(config_path, "config_path")?;
        non_null(run_status, "run_status")?;
        non_null(final_loss, "final_loss")?;
        let path = CStr::from_ptr(config_path)
            .to_str()
            .map_err(|_| fail(SgnStatus::InvalidArgument, "config_path is not UTF-8"))?;
        let cfg = ExperimentConfig::load(&PathBuf::from(path)).or_status()?;
        let o = run_experiment(&cfg).or_status()?;
        *final_loss = o.final_loss();
        *run_status = match &o.status {
            RunStatus::Completed => SgnRunStatus::Completed,
            RunStatus::TimeBudget => SgnRunStatus::TimeBudget,
            RunStatus::Diverged { .. } => SgnRunStatus::Diverged,
            RunStatus::Failed { message, .. } => {
                set_error(message.clone());
                SgnRunStatus::Failed
            }
        };
        Ok(())
    })
}
