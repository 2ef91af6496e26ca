//! Shared fixtures for the integration suites: the three reference test
//! systems (delay-free scalar, scalar pointwise delay, 2×2 distributed
//! delay), both as bare closed loops and as controlled plants, plus
//! seeded random histories.

#![allow(dead_code)]

use delay_lqr::sysmodel::{
    close_loop, ClosedLoopSystem, ControlLaw, CostWeights, History, SystemModel, ThetaGrid,
};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn scalar(v: f64) -> DMatrix<f64> {
    DMatrix::from_element(1, 1, v)
}

/// ẋ = −x viewed as a closed loop (h kept for the grid machinery).
pub fn cl_delay_free(n_theta: usize) -> ClosedLoopSystem {
    let grid = ThetaGrid::new(1.0, n_theta).unwrap();
    ClosedLoopSystem::from_parts(
        scalar(-1.0),
        scalar(0.0),
        vec![scalar(0.0); grid.n_nodes()],
        grid,
    )
    .unwrap()
}

/// ẋ(t) = −0.5·x(t−1).
pub fn cl_pointwise(n_theta: usize) -> ClosedLoopSystem {
    let grid = ThetaGrid::new(1.0, n_theta).unwrap();
    ClosedLoopSystem::from_parts(
        scalar(0.0),
        scalar(-0.5),
        vec![scalar(0.0); grid.n_nodes()],
        grid,
    )
    .unwrap()
}

/// 2×2 system with a smooth distributed kernel `G(θ) = G₀ e^{θ}`.
pub fn cl_distributed(n_theta: usize) -> ClosedLoopSystem {
    let grid = ThetaGrid::new(1.0, n_theta).unwrap();
    let a0 = DMatrix::from_row_slice(2, 2, &[-2.0, 0.3, -0.1, -1.5]);
    let a1 = DMatrix::from_row_slice(2, 2, &[0.1, 0.0, -0.2, 0.1]);
    let g0 = DMatrix::from_row_slice(2, 2, &[-0.3, 0.05, 0.1, -0.2]);
    let g = grid.nodes().map(|th| &g0 * th.exp()).collect();
    ClosedLoopSystem::from_parts(a0, a1, g, grid).unwrap()
}

/// A controlled plant: `(system, law, weights, closed loop)`.
pub struct ControlledCase {
    pub name: &'static str,
    pub sys: SystemModel,
    pub law: ControlLaw,
    pub weights: CostWeights,
    pub cl: ClosedLoopSystem,
}

/// Delay-free scalar plant with a pointwise gain.
pub fn case_delay_free(n_theta: usize) -> ControlledCase {
    let grid = ThetaGrid::new(1.0, n_theta).unwrap();
    let sys =
        SystemModel::with_zero_e(scalar(-1.0), scalar(0.0), scalar(1.0), grid.clone()).unwrap();
    let law = ControlLaw::new(scalar(-0.5), vec![scalar(0.0); grid.n_nodes()], grid).unwrap();
    let weights = CostWeights::new(scalar(1.0), scalar(1.0)).unwrap();
    let cl = close_loop(&sys, &law).unwrap();
    ControlledCase {
        name: "delay-free scalar",
        sys,
        law,
        weights,
        cl,
    }
}

/// Scalar pointwise-delay plant closed with both gain components active.
pub fn case_pointwise(n_theta: usize) -> ControlledCase {
    let grid = ThetaGrid::new(1.0, n_theta).unwrap();
    let sys =
        SystemModel::with_zero_e(scalar(0.0), scalar(-0.5), scalar(1.0), grid.clone()).unwrap();
    let g1 = grid.nodes().map(|th| scalar(0.2 * (1.0 + th))).collect();
    let law = ControlLaw::new(scalar(-0.3), g1, grid).unwrap();
    let weights = CostWeights::new(scalar(1.0), scalar(0.5)).unwrap();
    let cl = close_loop(&sys, &law).unwrap();
    ControlledCase {
        name: "scalar pointwise delay",
        sys,
        law,
        weights,
        cl,
    }
}

/// 2×2 distributed-delay plant with a mixed law.
pub fn case_distributed(n_theta: usize) -> ControlledCase {
    let grid = ThetaGrid::new(1.0, n_theta).unwrap();
    let a = DMatrix::from_row_slice(2, 2, &[-1.6, 0.3, -0.1, -1.2]);
    let b = DMatrix::from_row_slice(2, 2, &[0.12, 0.0, -0.18, 0.1]);
    let d = DMatrix::from_row_slice(2, 1, &[1.0, 0.4]);
    let e0 = DMatrix::from_row_slice(2, 2, &[-0.2, 0.05, 0.08, -0.15]);
    let e = vec![e0; grid.n_nodes()];
    let sys = SystemModel::new(a, b, d, grid.clone(), e).unwrap();
    let gamma0 = DMatrix::from_row_slice(1, 2, &[-0.3, -0.1]);
    let g1v = DMatrix::from_row_slice(1, 2, &[0.1, -0.05]);
    let law = ControlLaw::new(gamma0, vec![g1v; grid.n_nodes()], grid).unwrap();
    let weights = CostWeights::new(DMatrix::identity(2, 2), scalar(1.0)).unwrap();
    let cl = close_loop(&sys, &law).unwrap();
    ControlledCase {
        name: "2x2 distributed delay",
        sys,
        law,
        weights,
        cl,
    }
}

pub fn controlled_cases(n_theta: usize) -> Vec<ControlledCase> {
    vec![
        case_delay_free(n_theta),
        case_pointwise(n_theta),
        case_distributed(n_theta),
    ]
}

/// Random piecewise-linear history with node values in `[−1, 1]`.
pub fn random_history(rng: &mut ChaCha8Rng, n: usize, grid: &ThetaGrid) -> History {
    let samples: Vec<DVector<f64>> = (0..grid.n_nodes())
        .map(|_| DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0)))
        .collect();
    History::new(samples, grid.clone()).unwrap()
}

/// Random history rescaled to `‖φ‖_h = target`.
pub fn random_history_with_norm(
    rng: &mut ChaCha8Rng,
    n: usize,
    grid: &ThetaGrid,
    target: f64,
) -> History {
    let phi = random_history(rng, n, grid);
    let scale = target / phi.sup_norm().max(1e-12);
    let samples: Vec<DVector<f64>> = phi.samples().iter().map(|s| s * scale).collect();
    History::new(samples, grid.clone()).unwrap()
}
