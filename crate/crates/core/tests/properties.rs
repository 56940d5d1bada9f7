mod common;

use common::*;
use proptest::prelude::*;
use shapegn::field::{Activation, Jet2, ScalarField};
use shapegn::geomio::{read_points, write_point_cloud, AnalyticSurface, SurfaceField};
use shapegn::metrics::chamfer_one_sided;
use shapegn::nalgebra::{DMatrix, DVector};
use shapegn::optim::{
    gn_direction_cg, gn_direction_dense, gn_direction_woodbury, log_grid, CgConfig, GramianOperator, Preconditioner,
};
use shapegn::residuals::{clip_residual, residual_at, PointMeta, ResidualKind, ResidualOptions};

fn coord() -> impl Strategy<Value = f64> {
    -1.0..1.0f64
}

fn point() -> impl Strategy<Value = [f64; 3]> {
    [coord(), coord(), coord()]
}

fn curv(kind: ResidualKind, jet: &Jet2) -> Option<Vec<f64>> {
    let (v, m) = residual_at(kind, jet, &[0.0; 3], &PointMeta::default(), &ResidualOptions::default())
        .ok()?
        .as_array();
    Some(v[..m].to_vec())
}

fn scaled(jet: &Jet2, c: f64) -> Jet2 {
    let mut j = *jet;
    j.value *= c;
    for k in 0..3 {
        j.grad[k] *= c;
        for l in 0..3 {
            j.hess[k][l] *= c;
        }
    }
    j
}

/// Jet of `f(Rᵀx)` at `Rx` for a rotation about the z axis.
fn rotated(jet: &Jet2, a: f64) -> Jet2 {
    let r = [[a.cos(), -a.sin(), 0.0], [a.sin(), a.cos(), 0.0], [0.0, 0.0, 1.0]];
    let mut j = *jet;
    for i in 0..3 {
        j.grad[i] = (0..3).map(|k| r[i][k] * jet.grad[k]).sum();
        for l in 0..3 {
            j.hess[i][l] = (0..3)
                .flat_map(|k| (0..3).map(move |m| (k, m)))
                .map(|(k, m)| r[i][k] * jet.hess[k][m] * r[l][m])
                .sum();
        }
    }
    j
}

fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
    a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol * (1.0 + y.abs()))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn curvatures_ignore_positive_scaling(seed in 0u64..1000, x in point(), c in 0.1..10.0f64) {
        let f = net(&[3, 6, 6, 1], Activation::Tanh, seed);
        let jet = f.jet2(&x);
        for kind in [ResidualKind::MeanCurvature, ResidualKind::GaussCurvature] {
            if let (Some(a), Some(b)) = (curv(kind, &jet), curv(kind, &scaled(&jet, c))) {
                prop_assert!(close(&a, &b, 1e-9));
            }
        }
        // flipping the sign flips the mean curvature and keeps the Gauss curvature
        if let (Some(a), Some(b)) = (curv(ResidualKind::MeanCurvature, &jet), curv(ResidualKind::MeanCurvature, &scaled(&jet, -c))) {
            prop_assert!(close(&a, &[-b[0]], 1e-9));
        }
        if let (Some(a), Some(b)) = (curv(ResidualKind::GaussCurvature, &jet), curv(ResidualKind::GaussCurvature, &scaled(&jet, -c))) {
            prop_assert!(close(&a, &b, 1e-9));
        }
    }

    #[test]
    fn curvatures_are_rotation_invariant(seed in 0u64..1000, x in point(), a in 0.0..6.3f64) {
        let f = net(&[3, 6, 6, 1], Activation::Tanh, seed);
        let jet = f.jet2(&x);
        for kind in [ResidualKind::MeanCurvature, ResidualKind::GaussCurvature, ResidualKind::Eikonal] {
            if let (Some(u), Some(v)) = (curv(kind, &jet), curv(kind, &rotated(&jet, a))) {
                prop_assert!(close(&u, &v, 1e-9));
            }
        }
    }

    #[test]
    fn principal_curvatures_match_mean_and_gauss(seed in 0u64..1000, x in point()) {
        let f = net(&[3, 6, 6, 1], Activation::Tanh, seed);
        let jet = f.jet2(&x);
        if let (Some(h), Some(g), Some(k)) = (
            curv(ResidualKind::MeanCurvature, &jet),
            curv(ResidualKind::GaussCurvature, &jet),
            curv(ResidualKind::SurfaceStrain, &jet),
        ) {
            prop_assert!(k[0] >= k[1]);
            prop_assert!(close(&[k[0] + k[1]], &h, 1e-8));
            prop_assert!(close(&[k[0] * k[1]], &g, 1e-6));
        }
    }

    #[test]
    fn sphere_sdf_residuals(x in point(), r in 0.2..3.0f64) {
        let n = (x[0] * x[0] + x[1] * x[1] + x[2] * x[2]).sqrt();
        prop_assume!(n > 1e-3);
        let s = SurfaceField::sdf(AnalyticSurface::Sphere { r }).unwrap();
        let y = [x[0] / n * r, x[1] / n * r, x[2] / n * r];
        let jet = s.jet2(&y);
        prop_assert!(curv(ResidualKind::Eikonal, &jet).unwrap()[0].abs() < 1e-12);
        prop_assert!(close(&curv(ResidualKind::MeanCurvature, &jet).unwrap(), &[2.0 / r], 1e-10));
        prop_assert!(close(&curv(ResidualKind::GaussCurvature, &jet).unwrap(), &[1.0 / (r * r)], 1e-10));
    }

    #[test]
    fn clipping_bounds_energy_and_keeps_sign(v in -1e4..1e4f64, cap in 1e-3..1e4f64) {
        let (c, clipped) = clip_residual(v, cap);
        prop_assert!(c * c <= cap * (1.0 + 1e-12));
        prop_assert!(c == 0.0 || c.signum() == v.signum());
        prop_assert_eq!(clipped, v * v > cap);
        if !clipped {
            prop_assert_eq!(c, v);
        }
    }

    #[test]
    fn jet_matches_finite_differences(seed in 0u64..1000, x in point(), tanh in any::<bool>()) {
        let act = if tanh { Activation::Tanh } else { sine() };
        let f = net(&[3, 8, 8, 1], act, seed);
        let jet = f.jet2(&x);
        let fd = fd_jet(&f, &x, 1e-5);
        prop_assert!(rel_err(&jet.grad, &fd.grad, 1e-3) < 1e-6);
        let h: Vec<f64> = jet.hess.iter().flatten().copied().collect();
        let hf: Vec<f64> = fd.hess.iter().flatten().copied().collect();
        prop_assert!(rel_err(&h, &hf, 1e-3) < 1e-6);
    }

    #[test]
    fn gn_solvers_agree_and_descend(
        n in 1usize..24,
        p in 1usize..24,
        seed in 0u64..10_000,
        eps in prop::sample::select(vec![1e-6, 1e-3, 1.0]),
    ) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let j = DMatrix::from_fn(n, p, |_, _| rng.gen_range(-1.0..1.0));
        let r = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
        let g = j.tr_mul(&r);
        let d = gn_direction_dense(&j, &g, eps).unwrap();
        let w = gn_direction_woodbury(&j, &r, eps, None).unwrap();
        let op = GramianOperator { j: &j, eps };
        let cfg = CgConfig { max_iter: 10 * p, rel_tol: 1e-13, preconditioner: Preconditioner::None };
        let c = gn_direction_cg(&op, &g, &cfg).unwrap().x;
        let scale = d.norm().max(1e-300);
        prop_assert!((&d - &w).norm() <= 1e-7 * scale);
        prop_assert!((&d - &c).norm() <= 1e-6 * scale);
        // Jacobi CG is only bounded by its residual over the smallest eigenvalue ε
        let jac = CgConfig { preconditioner: Preconditioner::Jacobi, ..cfg };
        let cj = gn_direction_cg(&op, &g, &jac).unwrap().x;
        let rj = (j.tr_mul(&(&j * &cj)) + &cj * eps - &g).norm();
        prop_assert!((&d - &cj).norm() <= rj / eps + 1e-7 * scale);
        // normal equations and descent
        let res = j.tr_mul(&(&j * &d)) + &d * eps - &g;
        prop_assert!(res.norm() <= 1e-8 * (1.0 + g.norm()));
        prop_assert!(g.dot(&d) >= -1e-12);
    }

    #[test]
    fn chamfer_matches_brute_force(
        p in prop::collection::vec(point(), 1..40),
        q in prop::collection::vec(point(), 1..40),
    ) {
        let cd = chamfer_one_sided(&p, &q).unwrap();
        prop_assert!((cd - brute_chamfer(&p, &q)).abs() <= 1e-12);
        // a superset of q as p gives zero
        let mut both = p.clone();
        both.extend_from_slice(&q);
        prop_assert_eq!(chamfer_one_sided(&both, &q).unwrap(), 0.0);
        // adding points to p never increases the divergence
        prop_assert!(chamfer_one_sided(&both, &q).unwrap() <= cd);
    }

    #[test]
    fn chamfer_of_translated_copy_is_shift_length(
        q in prop::collection::vec(point(), 1..20),
        t in [-0.01..0.01f64, -0.01..0.01f64, -0.01..0.01f64],
    ) {
        // translation below half the minimum spacing keeps nearest neighbours
        let mut min_gap = f64::INFINITY;
        for (i, a) in q.iter().enumerate() {
            for b in &q[i + 1..] {
                min_gap = min_gap.min(((a[0]-b[0]).powi(2) + (a[1]-b[1]).powi(2) + (a[2]-b[2]).powi(2)).sqrt());
            }
        }
        let len = (t[0] * t[0] + t[1] * t[1] + t[2] * t[2]).sqrt();
        prop_assume!(2.0 * len < min_gap);
        let p: Vec<[f64; 3]> = q.iter().map(|x| [x[0] + t[0], x[1] + t[1], x[2] + t[2]]).collect();
        prop_assert!((chamfer_one_sided(&p, &q).unwrap() - len).abs() <= 1e-12);
    }

    #[test]
    fn ply_roundtrip_is_exact(
        pts in prop::collection::vec([-1e3..1e3f64, -1e3..1e3f64, -1e3..1e3f64], 0..30),
        scale in -1e6..1e6f64,
    ) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.ply");
        let q: Vec<f64> = pts.iter().map(|x| x[0] * scale).collect();
        write_point_cloud(&path, &pts, Some(("quality", &q))).unwrap();
        let raw = read_points(&path).unwrap();
        prop_assert_eq!(&raw.points, &pts);
        prop_assert_eq!(raw.scalars.unwrap(), q);
    }

    #[test]
    fn log_grid_is_geometric(lo in 1e-6..1.0f64, ratio in 1.5..1e4f64, n in 2usize..20) {
        let g = log_grid(lo, lo * ratio, n);
        prop_assert_eq!(g.len(), n);
        prop_assert!((g[0] - lo).abs() <= 1e-12 * lo);
        prop_assert!((g[n - 1] - lo * ratio).abs() <= 1e-9 * lo * ratio);
        for w in g.windows(3) {
            prop_assert!(((w[1] / w[0]) - (w[2] / w[1])).abs() < 1e-9);
        }
    }
}
