//! Cross-formula oracle: the kernel triple assembled through the
//! Lyapunov-operator route must match the direct time-quadrature
//! construction (state/input response kernels), which is an independent
//! evaluation of the defining integrals.

mod common;

use common::*;
use delay_lqr::bellman::{direct::direct_kernels, simulate_cost, KernelAssembly};
use delay_lqr::ddesim::fundamental_matrix_auto;
use delay_lqr::linalg;
use delay_lqr::lyapmat::lyapunov_matrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn kernels_match_direct_route_scalar_delayed() {
    let case = case_pointwise(16);
    let dt = case.cl.h() / 64.0;
    let fm = fundamental_matrix_auto(&case.cl, dt).unwrap();
    let via_u = KernelAssembly::new(&case.cl, &case.law, &case.weights, &fm)
        .unwrap()
        .build()
        .unwrap();
    let direct = direct_kernels(&case.cl, &case.law, &case.weights, &fm).unwrap();

    let scale0 = linalg::spectral_norm(&direct.pi0);
    let d0 = linalg::spectral_norm(&(&via_u.pi0 - &direct.pi0));
    assert!(d0 / scale0 < 1e-2, "pi0 mismatch {:.2e}", d0 / scale0);

    let scale1 = direct
        .pi1
        .iter()
        .map(linalg::spectral_norm)
        .fold(0.0, f64::max)
        .max(1e-12);
    let d1 = via_u
        .pi1
        .iter()
        .zip(direct.pi1.iter())
        .map(|(a, b)| linalg::spectral_norm(&(a - b)))
        .fold(0.0, f64::max);
    assert!(d1 / scale1 < 1e-2, "pi1 mismatch {:.2e}", d1 / scale1);

    let nn = case.cl.grid().n_nodes();
    let scale2 = (0..nn * nn)
        .map(|k| linalg::spectral_norm(&direct.pi2[k]))
        .fold(0.0, f64::max)
        .max(1e-12);
    let d2 = (0..nn * nn)
        .map(|k| linalg::spectral_norm(&(&via_u.pi2[k] - &direct.pi2[k])))
        .fold(0.0, f64::max);
    assert!(d2 / scale2 < 2e-2, "pi2 mismatch {:.2e}", d2 / scale2);
}

#[test]
fn kernels_match_direct_route_2x2_distributed() {
    // the direct route resolves the kernel jumps to first order in dt,
    // so this comparison runs at the finer time step
    let case = case_distributed(16);
    let dt = case.cl.h() / 128.0;
    let fm = fundamental_matrix_auto(&case.cl, dt).unwrap();
    let via_u = KernelAssembly::new(&case.cl, &case.law, &case.weights, &fm)
        .unwrap()
        .build()
        .unwrap();
    let direct = direct_kernels(&case.cl, &case.law, &case.weights, &fm).unwrap();

    let d0 = linalg::spectral_norm(&(&via_u.pi0 - &direct.pi0))
        / linalg::spectral_norm(&direct.pi0);
    assert!(d0 < 1e-2, "pi0 mismatch {d0:.2e}");

    let nn = case.cl.grid().n_nodes();
    let scale2 = (0..nn * nn)
        .map(|k| linalg::spectral_norm(&direct.pi2[k]))
        .fold(0.0, f64::max);
    for k in 0..nn * nn {
        let d = linalg::spectral_norm(&(&via_u.pi2[k] - &direct.pi2[k]));
        assert!(d / scale2 < 2e-2, "pi2 node {k} mismatch {:.2e}", d / scale2);
    }
}

#[test]
fn pi0_is_positive_definite_and_pi2_symmetric() {
    for case in controlled_cases(16) {
        let dt = case.cl.h() / 64.0;
        let fm = fundamental_matrix_auto(&case.cl, dt).unwrap();
        let k = KernelAssembly::new(&case.cl, &case.law, &case.weights, &fm)
            .unwrap()
            .build()
            .unwrap();
        let lam = linalg::min_symmetric_eigenvalue(&k.pi0);
        assert!(lam > 0.0, "{}: min eigenvalue {lam}", case.name);
        let defect = k.pi2_symmetry_defect();
        let scale = linalg::spectral_norm(&k.pi0);
        assert!(
            defect < 1e-6 * scale.max(1.0),
            "{}: pi2 symmetry defect {defect:.2e}",
            case.name
        );
        // Π₁ continuity: node-to-node jumps stay O(grid step)
        let jump = k.pi1_max_jump();
        assert!(
            jump < 10.0 * case.cl.grid().step() * scale.max(1.0),
            "{}: pi1 jump {jump:.2e}",
            case.name
        );
    }
}

#[test]
fn pi0_reduces_to_lyapunov_matrix_at_zero_gain() {
    // Γ ≡ 0: Π₀ = U(0, Q)
    let case = case_distributed(16);
    let zero = delay_lqr::sysmodel::ControlLaw::zero(1, 2, case.sys.grid().clone());
    let cl = delay_lqr::sysmodel::close_loop(&case.sys, &zero).unwrap();
    let dt = cl.h() / 64.0;
    let fm = fundamental_matrix_auto(&cl, dt).unwrap();
    let k = KernelAssembly::new(&cl, &zero, &case.weights, &fm)
        .unwrap()
        .build()
        .unwrap();
    let u0 = lyapunov_matrix(&fm, &case.weights.q, 0.0).unwrap();
    let diff = linalg::spectral_norm(&(&k.pi0 - &u0));
    assert!(diff < 1e-10, "pi0 vs U(0,Q): {diff:.2e}");
}

#[test]
fn functional_cost_identity_improves_under_refinement() {
    let worst_at = |n_theta: usize, spd: usize| -> f64 {
        let case = case_pointwise(n_theta);
        let dt = case.cl.h() / spd as f64;
        let fm = fundamental_matrix_auto(&case.cl, dt).unwrap();
        let k = KernelAssembly::new(&case.cl, &case.law, &case.weights, &fm)
            .unwrap()
            .build()
            .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let mut worst: f64 = 0.0;
        for _ in 0..5 {
            let phi = random_history(&mut rng, 1, case.cl.grid());
            let v = k.evaluate(&phi).unwrap();
            let j = simulate_cost(&case.cl, &case.law, &case.weights, &phi, 40.0, dt).unwrap();
            worst = worst.max((v - j).abs() / j.abs());
        }
        worst
    };
    let coarse = worst_at(16, 64);
    let fine = worst_at(32, 128);
    assert!(
        fine <= 0.5 * coarse,
        "V-vs-J mismatch did not improve: {coarse:.3e} -> {fine:.3e}"
    );
}
