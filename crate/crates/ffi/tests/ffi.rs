use std::ffi::{CStr, CString};
use std::path::PathBuf;
use std::ptr;

use shapegn_ffi::*;

fn last_error() -> String {
    let mut buf = vec![0 as std::ffi::c_char; 512];
    unsafe {
        sgn_last_error_message(buf.as_mut_ptr(), buf.len());
        CStr::from_ptr(buf.as_ptr()).to_string_lossy().into_owned()
    }
}

fn new_field(widths: &[usize]) -> *mut SgnField {
    let mut f = ptr::null_mut();
    let s = unsafe { sgn_field_new(widths.as_ptr(), widths.len(), SgnActivation::Tanh, 0.0, 7, &mut f) };
    assert_eq!(s, SgnStatus::Ok, "{}", last_error());
    f
}

#[test]
fn field_roundtrip_and_jet() {
    let f = new_field(&[3, 8, 8, 1]);
    let mut n = 0;
    assert_eq!(unsafe { sgn_field_param_count(f, &mut n) }, SgnStatus::Ok);
    assert_eq!(n, 3 * 8 + 8 + 8 * 8 + 8 + 8 + 1);
    let mut theta = vec![0.0; n];
    assert_eq!(unsafe { sgn_field_get_params(f, theta.as_mut_ptr(), n) }, SgnStatus::Ok);
    let x = [0.1, -0.2, 0.3];
    let mut v = 0.0;
    assert_eq!(unsafe { sgn_field_eval(f, x.as_ptr(), &mut v) }, SgnStatus::Ok);
    let (mut v2, mut g, mut h) = (0.0, [0.0; 3], [0.0; 9]);
    assert_eq!(
        unsafe { sgn_field_jet2(f, x.as_ptr(), &mut v2, g.as_mut_ptr(), h.as_mut_ptr()) },
        SgnStatus::Ok
    );
    assert_eq!(v, v2);
    for r in 0..3 {
        for c in 0..3 {
            assert!((h[3 * r + c] - h[3 * c + r]).abs() < 1e-12);
        }
    }
    // zero output layer gives the zero field
    let p = theta.len();
    for t in &mut theta[p - 9..] {
        *t = 0.0;
    }
    assert_eq!(unsafe { sgn_field_set_params(f, theta.as_ptr(), p) }, SgnStatus::Ok);
    assert_eq!(unsafe { sgn_field_eval(f, x.as_ptr(), &mut v) }, SgnStatus::Ok);
    assert_eq!(v, 0.0);
    unsafe { sgn_field_free(f) };
}

#[test]
fn errors_are_reported() {
    let mut f = ptr::null_mut();
    let w = [2usize, 4, 1];
    let s = unsafe { sgn_field_new(w.as_ptr(), w.len(), SgnActivation::Tanh, 0.0, 0, &mut f) };
    assert_eq!(s, SgnStatus::InvalidSpec);
    assert!(f.is_null());
    assert!(last_error().contains("widths"));
    let mut n = 0;
    assert_eq!(unsafe { sgn_field_param_count(ptr::null(), &mut n) }, SgnStatus::NullPointer);
    let f = new_field(&[3, 4, 1]);
    let mut buf = [0.0; 3];
    assert_eq!(unsafe { sgn_field_get_params(f, buf.as_mut_ptr(), 3) }, SgnStatus::BufferTooSmall);
    assert_eq!(unsafe { sgn_field_set_params(f, buf.as_ptr(), 3) }, SgnStatus::InvalidArgument);
    unsafe { sgn_field_free(f) };
    unsafe { sgn_field_free(ptr::null_mut()) };
}

#[test]
fn chamfer_matches_hand_value() {
    let p = [0.0, 0.0, 0.0];
    let q = [1.0, 0.0, 0.0, 0.0, 2.0, 0.0];
    let mut cd = 0.0;
    assert_eq!(unsafe { sgn_chamfer_one_sided(p.as_ptr(), 1, q.as_ptr(), 2, &mut cd) }, SgnStatus::Ok);
    assert!((cd - 2.5f64.sqrt()).abs() < 1e-15);
    assert_eq!(
        unsafe { sgn_chamfer_one_sided(p.as_ptr(), 0, q.as_ptr(), 2, &mut cd) },
        SgnStatus::InvalidArgument
    );
}

#[test]
fn gn_direction_solvers_agree() {
    // row-major 3x2
    let j = [1.0, 2.0, 0.5, -1.0, 3.0, 0.25];
    let r = [1.0, -2.0, 0.5];
    let mut out = [[0.0; 2]; 3];
    for (k, s) in [SgnSolver::Dense, SgnSolver::ConjugateGradient, SgnSolver::Woodbury].into_iter().enumerate() {
        let st = unsafe { sgn_gn_direction(j.as_ptr(), 3, 2, r.as_ptr(), 1e-3, s, out[k].as_mut_ptr()) };
        assert_eq!(st, SgnStatus::Ok, "{}", last_error());
    }
    for k in 1..3 {
        for c in 0..2 {
            assert!((out[k][c] - out[0][c]).abs() < 1e-9 * out[0][c].abs().max(1.0));
        }
    }
    let st = unsafe { sgn_gn_direction(j.as_ptr(), 3, 2, r.as_ptr(), 0.0, SgnSolver::Woodbury, out[0].as_mut_ptr()) };
    assert_eq!(st, SgnStatus::InvalidArgument);
}

#[test]
fn run_experiment_from_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let cfg = format!(
        "task = \"catenoid\"\niters = 1\noutput_dir = \"{}\"\npretrain.iters = 2\nsamples.surface = 32\nsamples.interface = 32\nsamples.volume = 32\nmetrics.chamfer_samples = 32\nmetrics.ply_samples = 32\n",
        out.display()
    );
    let path = dir.path().join("run.toml");
    std::fs::write(&path, cfg).unwrap();
    let c = CString::new(path.to_str().unwrap()).unwrap();
    let mut status = SgnRunStatus::Failed;
    let mut loss = f64::NAN;
    let s = unsafe { sgn_run_experiment(c.as_ptr(), &mut status, &mut loss) };
    assert_eq!(s, SgnStatus::Ok, "{}", last_error());
    assert!(matches!(status, SgnRunStatus::Completed | SgnRunStatus::Diverged | SgnRunStatus::Failed));
    assert!(out.join("loss.csv").exists());
    let missing = CString::new("/nonexistent/run.toml").unwrap();
    assert_eq!(unsafe { sgn_run_experiment(missing.as_ptr(), &mut status, &mut loss) }, SgnStatus::Io);
}

#[test]
fn header_declares_every_entry_point() {
    let header = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("include/shapegn.h");
    let text = std::fs::read_to_string(&header).unwrap();
    for name in [
        "sgn_last_error_message",
        "sgn_version",
        "sgn_field_new",
        "sgn_field_free",
        "sgn_field_param_count",
        "sgn_field_get_params",
        "sgn_field_set_params",
        "sgn_field_eval",
        "sgn_field_jet2",
        "sgn_chamfer_one_sided",
        "sgn_gn_direction",
        "sgn_run_experiment",
        "typedef struct SgnField SgnField",
    ] {
        assert!(text.contains(name), "{name} missing from header");
    }
    let v = unsafe { CStr::from_ptr(sgn_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn header_compiles_as_c() {
    let header = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("include/shapegn.h");
    let Ok(status) = std::process::Command::new("cc")
        .args(["-fsyntax-only", "-Wall", "-Werror", "-x", "c"])
        .arg(&header)
        .status()
    else {
        eprintln!("no C compiler found; skipping");
        return;
    };
    assert!(status.success());
}
