//! Benchmark fixtures: the 2×2 distributed-delay plant used by the
//! criterion suites.

use delay_lqr::sysmodel::{
    close_loop, ClosedLoopSystem, ControlLaw, CostWeights, SystemModel, ThetaGrid,
};
use nalgebra::DMatrix;

pub struct BenchCase {
    pub sys: SystemModel,
    pub law: ControlLaw,
    pub weights: CostWeights,
    pub cl: ClosedLoopSystem,
}

/// 2×2 plant with a constant distributed kernel and a mixed gain.
pub fn distributed_case(n_theta: usize) -> BenchCase {
    let grid = ThetaGrid::new(1.0, n_theta).unwrap();
    let a = DMatrix::from_row_slice(2, 2, &[-1.6, 0.3, -0.1, -1.2]);
    let b = DMatrix::from_row_slice(2, 2, &[0.12, 0.0, -0.18, 0.1]);
    let d = DMatrix::from_row_slice(2, 1, &[1.0, 0.4]);
    let e0 = DMatrix::from_row_slice(2, 2, &[-0.2, 0.05, 0.08, -0.15]);
    let sys = SystemModel::new(a, b, d, grid.clone(), vec![e0; grid.n_nodes()]).unwrap();
    let gamma0 = DMatrix::from_row_slice(1, 2, &[-0.3, -0.1]);
    let g1 = DMatrix::from_row_slice(1, 2, &[0.1, -0.05]);
    let law = ControlLaw::new(gamma0, vec![g1; grid.n_nodes()], grid).unwrap();
    let weights = CostWeights::new(DMatrix::identity(2, 2), DMatrix::identity(1, 1)).unwrap();
    let cl = close_loop(&sys, &law).unwrap();
    BenchCase {
        sys,
        law,
        weights,
        cl,
    }
}
