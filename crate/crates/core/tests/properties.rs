//! Property-style invariants: linearity of the solution map, quadratic
//! scaling of the functional, gain linearity of the loop closure, and
//! observed convergence order of the two solution routes.

mod common;

use common::*;
use delay_lqr::bellman::KernelAssembly;
use delay_lqr::ddesim::{cauchy_solution, fundamental_matrix, fundamental_matrix_auto,
    integrate_closed_loop};
use delay_lqr::sysmodel::{close_loop, ControlLaw, History, SystemModel, ThetaGrid};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use std::sync::OnceLock;

#[test]
fn solution_map_is_linear_in_history() {
    let cl = cl_pointwise(16);
    let grid = cl.grid().clone();
    let dt = cl.h() / 64.0;
    let phi1 = History::from_fn(grid.clone(), |th| DVector::from_vec(vec![0.7 - 0.2 * th]))
        .unwrap();
    let phi2 = History::from_fn(grid.clone(), |th| DVector::from_vec(vec![(3.0 * th).sin()]))
        .unwrap();
    let alpha = -1.7;
    let combo = History::new(
        phi1.samples()
            .iter()
            .zip(phi2.samples())
            .map(|(a, b)| a * alpha + b)
            .collect(),
        grid,
    )
    .unwrap();
    let t_end = 3.0;
    let x1 = integrate_closed_loop(&cl, &phi1, t_end, dt).unwrap();
    let x2 = integrate_closed_loop(&cl, &phi2, t_end, dt).unwrap();
    let xc = integrate_closed_loop(&cl, &combo, t_end, dt).unwrap();
    for j in (0..=xc.n_steps()).step_by(16) {
        let expect = x1.at_step(j) * alpha + x2.at_step(j);
        let got = xc.at_step(j);
        assert!(
            (got - expect).norm() < 1e-10,
            "superposition violated at step {j}"
        );
    }
}

#[test]
fn cauchy_error_halves_under_refinement() {
    // order ≥ 1 convergence of the Cauchy-vs-integration deviation
    let rel_at = |n_theta: usize, spd: usize| -> f64 {
        let cl = cl_distributed(n_theta);
        let dt = cl.h() / spd as f64;
        let phi = History::from_fn(cl.grid().clone(), |th| {
            DVector::from_vec(vec![0.9 + 0.4 * th, -0.3 * (2.0 * th).cos()])
        })
        .unwrap();
        let t_end = 3.0 * cl.h();
        let traj = integrate_closed_loop(&cl, &phi, t_end, dt).unwrap();
        let fm = fundamental_matrix(&cl, t_end, dt).unwrap();
        let mut max_diff: f64 = 0.0;
        let mut max_norm: f64 = 0.0;
        let mut j = 0;
        while j <= traj.n_steps() {
            let t = j as f64 * dt;
            let xc = cauchy_solution(&fm, &cl, &phi, t).unwrap();
            max_diff = max_diff.max((xc - traj.at_step(j)).norm());
            max_norm = max_norm.max(traj.at_step(j).norm());
            j += 8;
        }
        max_diff / max_norm
    };
    let coarse = rel_at(32, 64);
    let fine = rel_at(64, 128);
    assert!(
        fine <= 0.5 * coarse || fine < 1e-10,
        "no first-order improvement: {coarse:.2e} -> {fine:.2e}"
    );
}

fn shared_kernels() -> &'static (delay_lqr::BellmanKernels, ThetaGrid) {
    static KERNELS: OnceLock<(delay_lqr::BellmanKernels, ThetaGrid)> = OnceLock::new();
    KERNELS.get_or_init(|| {
        let case = case_pointwise(16);
        let dt = case.cl.h() / 64.0;
        let fm = fundamental_matrix_auto(&case.cl, dt).unwrap();
        let k = KernelAssembly::new(&case.cl, &case.law, &case.weights, &fm)
            .unwrap()
            .build()
            .unwrap();
        let grid = case.cl.grid().clone();
        (k, grid)
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn functional_scales_quadratically(
        c in -3.0_f64..3.0,
        vals in proptest::collection::vec(-1.0_f64..1.0, 17)
    ) {
        let (kernels, grid) = shared_kernels();
        let phi = History::new(
            vals.iter().map(|&v| DVector::from_vec(vec![v])).collect(),
            grid.clone(),
        ).unwrap();
        let scaled = History::new(
            vals.iter().map(|&v| DVector::from_vec(vec![c * v])).collect(),
            grid.clone(),
        ).unwrap();
        let v = kernels.evaluate(&phi).unwrap();
        let vc = kernels.evaluate(&scaled).unwrap();
        prop_assert!((vc - c * c * v).abs() <= 1e-12 * (1.0 + v.abs() * c * c));
    }

    #[test]
    fn close_loop_is_affine_in_the_gain(
        g0a in -2.0_f64..2.0, g0b in -2.0_f64..2.0,
        g1a in -2.0_f64..2.0, g1b in -2.0_f64..2.0,
        alpha in -2.0_f64..2.0
    ) {
        let grid = ThetaGrid::new(1.0, 8).unwrap();
        let e: Vec<DMatrix<f64>> = grid.nodes().map(|th| scalar(0.3 * th)).collect();
        let sys = SystemModel::new(
            scalar(-1.0), scalar(0.4), scalar(2.0), grid.clone(), e,
        ).unwrap();
        let mk = |g0: f64, g1: f64| ControlLaw::new(
            scalar(g0),
            grid.nodes().map(|th| scalar(g1 * (1.0 + th))).collect(),
            grid.clone(),
        ).unwrap();
        // closed(α·lawA + (1−α)·lawB) equals the same blend of the parts
        let law_a = mk(g0a, g1a);
        let law_b = mk(g0b, g1b);
        let blend = law_a.blend(&law_b, alpha);
        let cl_a = close_loop(&sys, &law_a).unwrap();
        let cl_b = close_loop(&sys, &law_b).unwrap();
        let cl_m = close_loop(&sys, &blend).unwrap();
        let expect_a0 = &cl_a.a0 * (1.0 - alpha) + &cl_b.a0 * alpha;
        prop_assert!((&cl_m.a0 - expect_a0).norm() < 1e-12);
        for k in 0..grid.n_nodes() {
            let expect_g = &cl_a.g_samples()[k] * (1.0 - alpha) + &cl_b.g_samples()[k] * alpha;
            prop_assert!((&cl_m.g_samples()[k] - expect_g).norm() < 1e-12);
        }
        prop_assert_eq!(&cl_m.a1, &cl_a.a1);
    }

    #[test]
    fn history_interpolation_exact_for_affine(
        a in -5.0_f64..5.0, b in -5.0_f64..5.0, pos in 0.0_f64..1.0
    ) {
        let grid = ThetaGrid::new(1.0, 8).unwrap();
        let phi = History::from_fn(grid, |th| DVector::from_vec(vec![a + b * th])).unwrap();
        let theta = -pos;
        let got = phi.eval(theta)[0];
        prop_assert!((got - (a + b * theta)).abs() < 1e-12 * (1.0 + a.abs() + b.abs()));
    }
}
