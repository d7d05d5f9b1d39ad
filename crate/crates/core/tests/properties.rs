//! Randomized invariants of the sparse path, checked against the dense
//! oracle or against identities that hold by construction.

use dcflow::cases;
use dcflow::grid::{build_admittance, GridModel, OperatingPoint};
use dcflow::harness::perturb::{perturb, PerturbSpec};
use dcflow::inner::{dual_value_grad, lifted_objective, linearize, project_box, recover_primal, DEFAULT_EPS};
use dcflow::opf::prepare;
use dcflow::oracle::{dense_admittance, dense_constraint_eval, dense_delta_power, finite_diff_gradient};
use dcflow::powerflow::case_operating_point;
use dcflow::qclp::delta_power;
use dcflow::split::AlphaRule;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn case(name: &str) -> (GridModel, OperatingPoint) {
    let c = cases::load(name).unwrap();
    let op = case_operating_point(&c).unwrap();
    (c.grid, op)
}

fn random_box(seed: u64, n: usize, lo: f64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.gen_range(lo..1.0)).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn perturbed_points_satisfy_kirchhoff(seed in any::<u64>(), m in 0.0f64..0.2) {
        let (grid, op) = case("case14");
        let p = perturb(&op, &grid, &PerturbSpec { seed, magnitude: m, target_violation: None }).unwrap();
        let mismatch = p.op.kirchhoff_mismatch(&build_admittance(&grid)).unwrap();
        prop_assert!(mismatch <= 1e-12, "mismatch {mismatch:e}");
        let again = perturb(&op, &grid, &PerturbSpec { seed, magnitude: m, target_violation: None }).unwrap();
        prop_assert_eq!(p, again);
    }

    #[test]
    fn sparse_delta_power_matches_dense(z in prop::collection::vec(-0.2f64..0.2, 18)) {
        let (grid, op) = case("case9");
        let (dp, dq) = delta_power(&z, &build_admittance(&grid), &op.v).unwrap();
        let (ep, eq) = dense_delta_power(&dense_admittance(&grid), &op.v, &z);
        for (a, b) in dp.iter().chain(&dq).zip(ep.iter().chain(&eq)) {
            prop_assert!((a - b).abs() <= 1e-10, "{a} vs {b}");
        }
    }

    #[test]
    fn row_evaluation_matches_dense(raw in prop::collection::vec(-0.2f64..0.2, 54)) {
        let (grid, op) = case("case9");
        let (problem, _) = prepare(&grid, &op, AlphaRule::Analytic).unwrap();
        let mut x = raw;
        x[problem.n_z()..].iter_mut().for_each(|u| *u = u.abs());
        let dense = dense_constraint_eval(&problem, &x);
        for (c, d) in problem.constraints.iter().zip(&dense) {
            if c.is_active_row() {
                prop_assert!((c.eval(&x) - d).abs() <= 1e-10);
            }
        }
    }

    #[test]
    fn split_recombines_and_majorizes(
        a in prop::collection::vec(-0.3f64..0.3, 54),
        b in prop::collection::vec(-0.3f64..0.3, 54),
    ) {
        let (grid, op) = case("case9");
        let (problem, splits) = prepare(&grid, &op, AlphaRule::Analytic).unwrap();
        let n_z = problem.n_z();
        for sp in &splits {
            let p = sp.base.quad.quad_form(&a[..n_z]);
            let parts = sp.plus_quad(&a[..n_z]) - sp.minus_quad(&a[..n_z]);
            prop_assert!((p - parts).abs() <= 1e-12 * (1.0 + p.abs()));
            if !sp.base.is_active_row() {
                continue;
            }
            // P⁻ ⪰ 0, so the convexified row sits above the row and touches it at x̃.
            prop_assert!(sp.minus_quad(&a[..n_z]) >= -1e-12);
            prop_assert!(sp.convexified_eval(&a, &b) >= sp.base.eval(&a) - 1e-12);
            prop_assert!((sp.convexified_eval(&b, &b) - sp.base.eval(&b)).abs() <= 1e-12);
        }
    }

    #[test]
    fn box_projection_is_idempotent(v in prop::collection::vec(-3.0f64..3.0, 1..40)) {
        let p = project_box(&v);
        prop_assert!(p.iter().all(|x| (0.0..=1.0).contains(x)));
        prop_assert_eq!(project_box(&p), p);
    }

    #[test]
    fn dual_gradient_matches_central_differences(seed in any::<u64>(), beta in 0.5f64..20.0) {
        let (grid, op) = case("case9");
        let (problem, splits) = prepare(&grid, &op, AlphaRule::Analytic).unwrap();
        let lp = linearize(&problem, &splits, &problem.x0(), beta, DEFAULT_EPS).unwrap();
        let lambda = random_box(seed, lp.n_rows(), 0.05);
        let (_, g) = dual_value_grad(&lambda, &lp).unwrap();
        let fd = finite_diff_gradient(|l| dual_value_grad(l, &lp).unwrap().0, &lambda, 1e-6);
        let scale = fd.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let gap = g.iter().zip(&fd).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        prop_assert!(gap <= 1e-5 * scale, "gap {gap:e} scale {scale:e}");
    }

    #[test]
    fn recovered_lift_is_tight(seed in any::<u64>(), bump in prop::collection::vec(0.0f64..0.5, 18)) {
        let (grid, op) = case("case9");
        let (problem, splits) = prepare(&grid, &op, AlphaRule::Analytic).unwrap();
        let lp = linearize(&problem, &splits, &problem.x0(), 3.0, DEFAULT_EPS).unwrap();
        let lambda = random_box(seed, lp.n_rows(), 0.0);
        let rec = recover_primal(&lambda, &lp).unwrap();
        for (zi, yi) in rec.z.iter().zip(&rec.y) {
            prop_assert_eq!(zi * zi, *yi);
        }
        let loose: Vec<f64> = rec.y.iter().zip(&bump).map(|(y, d)| y + d).collect();
        prop_assert!(lifted_objective(&lp, &rec.z, &rec.y) <= lifted_objective(&lp, &rec.z, &loose));
    }
}

#[test]
fn zero_magnitude_is_identity() {
    let (grid, op) = case("case30");
    let p = perturb(&op, &grid, &PerturbSpec { seed: 3, magnitude: 0.0, target_violation: None }).unwrap();
    assert_eq!(p.op.v, op.v);
}

#[test]
fn grid_json_round_trip() {
    for name in cases::NAMES {
        let grid = cases::load(name).unwrap().grid;
        assert_eq!(GridModel::from_json(&grid.to_json()).unwrap(), grid, "{name}");
    }
}
