//! Data model for the delay system, cost weights, control laws, histories
//! and the closed-loop form. All grid conventions live here.
//!
//! The plant is
//!
//! ```text
//! ẋ(t) = A x(t) + B x(t−h) + ∫_{−h}^{0} E(θ) x(t+θ) dθ + D u(t)
//! ```
//!
//! closed with `u = Γ₀ x(t) + ∫ Γ₁(θ) x(t+θ) dθ`, giving
//!
//! ```text
//! ẋ(t) = A₀ x(t) + A₁ x(t−h) + ∫ G(θ) x(t+θ) dθ,
//! A₀ = A + DΓ₀,  A₁ = B,  G = E + DΓ₁.
//! ```
//!
//! Every matrix function of θ is stored as samples on one shared uniform
//! grid over `[−h, 0]`; off-node values are linear interpolations. The
//! matrix norm everywhere in this crate is the spectral norm.

use crate::error::Error;
use crate::linalg;
use crate::Result;
use nalgebra::{DMatrix, DVector};

/// Uniform grid over the lag interval `[−h, 0]` with `n_intervals`
/// subintervals, nodes `θ_i = −h + i·h/Nθ`.
#[derive(Debug, Clone, PartialEq)]
pub struct ThetaGrid {
    h: f64,
    n_intervals: usize,
}

impl ThetaGrid {
    pub fn new(h: f64, n_intervals: usize) -> Result<Self> {
        if !(h > 0.0) || !h.is_finite() {
            return Err(Error::domain(format!("delay h must be positive, got {h}")));
        }
        if n_intervals == 0 {
            return Err(Error::domain("theta grid needs at least one interval"));
        }
        Ok(ThetaGrid { h, n_intervals })
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn n_intervals(&self) -> usize {
        self.n_intervals
    }

    /// Number of nodes, `Nθ + 1`.
    pub fn n_nodes(&self) -> usize {
        self.n_intervals + 1
    }

    /// Grid spacing `h / Nθ`.
    pub fn step(&self) -> f64 {
        self.h / self.n_intervals as f64
    }

    /// `θ_i = −h + i·step`.
    pub fn node(&self, i: usize) -> f64 {
        debug_assert!(i <= self.n_intervals);
        -self.h + i as f64 * self.step()
    }

    pub fn nodes(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.n_nodes()).map(|i| self.node(i))
    }

    /// Composite-trapezoid weight of node `i` over the full interval.
    pub fn weight(&self, i: usize) -> f64 {
        let s = self.step();
        if i == 0 || i == self.n_intervals {
            0.5 * s
        } else {
            s
        }
    }

    /// Trapezoid weight of node `i` over the truncated interval
    /// `[−h, θ_hi]` (nodes `0..=hi`). Zero-length intervals get weight 0.
    pub fn weight_upto(&self, i: usize, hi: usize) -> f64 {
        if hi == 0 {
            return 0.0;
        }
        let s = self.step();
        if i == 0 || i == hi {
            0.5 * s
        } else {
            s
        }
    }

    /// Linear interpolation from node samples; clamps to `[−h, 0]`.
    pub fn interp_matrix(&self, samples: &[DMatrix<f64>], theta: f64) -> DMatrix<f64> {
        debug_assert_eq!(samples.len(), self.n_nodes());
        let pos = (theta + self.h) / self.step();
        let pos = pos.clamp(0.0, self.n_intervals as f64);
        let i0 = (pos.floor() as usize).min(self.n_intervals - 1);
        let frac = pos - i0 as f64;
        if frac == 0.0 {
            samples[i0].clone()
        } else {
            &samples[i0] * (1.0 - frac) + &samples[i0 + 1] * frac
        }
    }
}

/// Plant matrices of the open-loop distributed time-delay system.
#[derive(Debug, Clone)]
pub struct SystemModel {
    pub n: usize,
    pub r: usize,
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub d: DMatrix<f64>,
    grid: ThetaGrid,
    e: Vec<DMatrix<f64>>,
}

impl SystemModel {
    pub fn new(
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        d: DMatrix<f64>,
        grid: ThetaGrid,
        e: Vec<DMatrix<f64>>,
    ) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n {
            return Err(Error::dim("A must be square"));
        }
        if b.shape() != (n, n) {
            return Err(Error::dim("B must be n×n"));
        }
        if d.nrows() != n {
            return Err(Error::dim("D row count must match A"));
        }
        let r = d.ncols();
        if r > n {
            return Err(Error::domain(format!(
                "input dimension r = {r} exceeds state dimension n = {n}"
            )));
        }
        if r == 0 {
            return Err(Error::domain("D must have at least one column"));
        }
        if e.len() != grid.n_nodes() {
            return Err(Error::dim(format!(
                "E needs {} samples on the theta grid, got {}",
                grid.n_nodes(),
                e.len()
            )));
        }
        for (i, ei) in e.iter().enumerate() {
            if ei.shape() != (n, n) {
                return Err(Error::dim(format!("E sample {i} must be n×n")));
            }
            if !linalg::all_finite(ei) {
                return Err(Error::domain(format!("E sample {i} is not finite")));
            }
        }
        for (name, m) in [("A", &a), ("B", &b), ("D", &d)] {
            if !linalg::all_finite(m) {
                return Err(Error::domain(format!("{name} is not finite")));
            }
        }
        Ok(SystemModel { n, r, a, b, d, grid, e })
    }

    /// System with `E ≡ 0`.
    pub fn with_zero_e(
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        d: DMatrix<f64>,
        grid: ThetaGrid,
    ) -> Result<Self> {
        let n = a.nrows();
        let e = vec![DMatrix::zeros(n, n); grid.n_nodes()];
        SystemModel::new(a, b, d, grid, e)
    }

    pub fn h(&self) -> f64 {
        self.grid.h()
    }

    pub fn grid(&self) -> &ThetaGrid {
        &self.grid
    }

    pub fn e_samples(&self) -> &[DMatrix<f64>] {
        &self.e
    }

    pub fn e_at(&self, theta: f64) -> DMatrix<f64> {
        self.grid.interp_matrix(&self.e, theta)
    }
}

/// Quadratic performance-index weights, both symmetric positive definite.
#[derive(Debug, Clone)]
pub struct CostWeights {
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
}

impl CostWeights {
    pub fn new(q: DMatrix<f64>, r: DMatrix<f64>) -> Result<Self> {
        for (name, m) in [("Q", &q), ("R", &r)] {
            if !m.is_square() {
                return Err(Error::dim(format!("{name} must be square")));
            }
            if !linalg::is_symmetric(m, 1e-9) {
                return Err(Error::domain(format!("{name} must be symmetric")));
            }
            let lam = linalg::min_symmetric_eigenvalue(m);
            if !(lam > 0.0) {
                return Err(Error::domain(format!(
                    "{name} must be positive definite (min eigenvalue {lam:.3e})"
                )));
            }
        }
        Ok(CostWeights { q, r })
    }

    pub fn lambda_min_q(&self) -> f64 {
        linalg::min_symmetric_eigenvalue(&self.q)
    }
}

/// State-feedback law `u = Γ₀ x(t) + ∫ Γ₁(θ) x(t+θ) dθ`.
#[derive(Debug, Clone)]
pub struct ControlLaw {
    pub gamma0: DMatrix<f64>,
    gamma1: Vec<DMatrix<f64>>,
    grid: ThetaGrid,
}

impl ControlLaw {
    pub fn new(gamma0: DMatrix<f64>, gamma1: Vec<DMatrix<f64>>, grid: ThetaGrid) -> Result<Self> {
        let (r, n) = gamma0.shape();
        if gamma1.len() != grid.n_nodes() {
            return Err(Error::dim(format!(
                "Gamma1 needs {} samples, got {}",
                grid.n_nodes(),
                gamma1.len()
            )));
        }
        for (i, g) in gamma1.iter().enumerate() {
            if g.shape() != (r, n) {
                return Err(Error::dim(format!("Gamma1 sample {i} must be r×n")));
            }
            if !linalg::all_finite(g) {
                return Err(Error::domain(format!("Gamma1 sample {i} is not finite")));
            }
        }
        if !linalg::all_finite(&gamma0) {
            return Err(Error::domain("Gamma0 is not finite"));
        }
        Ok(ControlLaw { gamma0, gamma1, grid })
    }

    /// The zero law (open loop).
    pub fn zero(r: usize, n: usize, grid: ThetaGrid) -> Self {
        let gamma1 = vec![DMatrix::zeros(r, n); grid.n_nodes()];
        ControlLaw {
            gamma0: DMatrix::zeros(r, n),
            gamma1,
            grid,
        }
    }

    pub fn grid(&self) -> &ThetaGrid {
        &self.grid
    }

    pub fn gamma1_samples(&self) -> &[DMatrix<f64>] {
        &self.gamma1
    }

    pub fn gamma1_at(&self, theta: f64) -> DMatrix<f64> {
        self.grid.interp_matrix(&self.gamma1, theta)
    }

    /// `max(‖ΔΓ₀‖, max_i ‖ΔΓ₁(θ_i)‖)` against another law on the same grid.
    pub fn distance(&self, other: &ControlLaw) -> f64 {
        let mut d = linalg::spectral_norm(&(&self.gamma0 - &other.gamma0));
        for (a, b) in self.gamma1.iter().zip(other.gamma1.iter()) {
            d = d.max(linalg::spectral_norm(&(a - b)));
        }
        d
    }

    /// Convex blend `(1−s)·self + s·other`, used for damped synthesis steps.
    pub fn blend(&self, other: &ControlLaw, s: f64) -> ControlLaw {
        let gamma0 = &self.gamma0 * (1.0 - s) + &other.gamma0 * s;
        let gamma1 = self
            .gamma1
            .iter()
            .zip(other.gamma1.iter())
            .map(|(a, b)| a * (1.0 - s) + b * s)
            .collect();
        ControlLaw {
            gamma0,
            gamma1,
            grid: self.grid.clone(),
        }
    }
}

/// Closed-loop system `ẋ = A₀x(t) + A₁x(t−h) + ∫G(θ)x(t+θ)dθ`.
///
/// Built only through [`close_loop`]; the stored parts always reproduce
/// `A + DΓ₀`, `B`, `E + DΓ₁` exactly.
#[derive(Debug, Clone)]
pub struct ClosedLoopSystem {
    pub n: usize,
    pub a0: DMatrix<f64>,
    pub a1: DMatrix<f64>,
    g: Vec<DMatrix<f64>>,
    grid: ThetaGrid,
}

impl ClosedLoopSystem {
    /// Closed loop declared directly by its parts (`A₀`, `A₁`, `G`).
    /// Test systems and scenarios that never reference an open loop use this.
    pub fn from_parts(
        a0: DMatrix<f64>,
        a1: DMatrix<f64>,
        g: Vec<DMatrix<f64>>,
        grid: ThetaGrid,
    ) -> Result<Self> {
        let n = a0.nrows();
        if !a0.is_square() || a1.shape() != (n, n) {
            return Err(Error::dim("A0, A1 must be square of equal size"));
        }
        if g.len() != grid.n_nodes() {
            return Err(Error::dim("G sample count must match the theta grid"));
        }
        if g.iter().any(|m| m.shape() != (n, n)) {
            return Err(Error::dim("G samples must be n×n"));
        }
        Ok(ClosedLoopSystem { n, a0, a1, g, grid })
    }

    pub fn h(&self) -> f64 {
        self.grid.h()
    }

    pub fn grid(&self) -> &ThetaGrid {
        &self.grid
    }

    pub fn g_samples(&self) -> &[DMatrix<f64>] {
        &self.g
    }

    pub fn g_at(&self, theta: f64) -> DMatrix<f64> {
        self.grid.interp_matrix(&self.g, theta)
    }

    /// True when `A₁ = 0` and `G ≡ 0` (no delayed terms at all).
    pub fn is_delay_free(&self) -> bool {
        self.a1.iter().all(|&v| v == 0.0) && self.g.iter().all(|m| m.iter().all(|&v| v == 0.0))
    }
}

/// Close the loop: `A₀ = A + DΓ₀`, `A₁ = B`, `G(θ_i) = E(θ_i) + DΓ₁(θ_i)`.
pub fn close_loop(sys: &SystemModel, law: &ControlLaw) -> Result<ClosedLoopSystem> {
    if law.gamma0.shape() != (sys.r, sys.n) {
        return Err(Error::dim(format!(
            "Gamma0 must be {}×{}, got {}×{}",
            sys.r,
            sys.n,
            law.gamma0.nrows(),
            law.gamma0.ncols()
        )));
    }
    if law.grid != sys.grid {
        return Err(Error::dim("control law and system use different theta grids"));
    }
    let a0 = &sys.a + &sys.d * &law.gamma0;
    let a1 = sys.b.clone();
    let g = sys
        .e
        .iter()
        .zip(law.gamma1.iter())
        .map(|(e, g1)| e + &sys.d * g1)
        .collect();
    Ok(ClosedLoopSystem {
        n: sys.n,
        a0,
        a1,
        g,
        grid: sys.grid.clone(),
    })
}

/// `g = sup_θ ‖G(θ)‖` over the grid nodes (spectral norm).
pub fn sup_norm_g(cl: &ClosedLoopSystem) -> f64 {
    cl.g
        .iter()
        .map(linalg::spectral_norm)
        .fold(0.0, f64::max)
}

/// `∫_{−h}^{0} ‖G(θ)‖ dθ` by trapezoid over node norms.
pub fn int_norm_g(cl: &ClosedLoopSystem) -> f64 {
    cl.g
        .iter()
        .enumerate()
        .map(|(i, m)| cl.grid.weight(i) * linalg::spectral_norm(m))
        .sum()
}

/// Initial function `φ` on `[−h, 0]`, sampled on the θ-grid with linear
/// interpolation between nodes.
#[derive(Debug, Clone)]
pub struct History {
    samples: Vec<DVector<f64>>,
    grid: ThetaGrid,
}

impl History {
    pub fn new(samples: Vec<DVector<f64>>, grid: ThetaGrid) -> Result<Self> {
        if samples.len() != grid.n_nodes() {
            return Err(Error::dim(format!(
                "history needs {} samples, got {}",
                grid.n_nodes(),
                samples.len()
            )));
        }
        let n = samples[0].len();
        if samples.iter().any(|s| s.len() != n) {
            return Err(Error::dim("history samples have inconsistent dimension"));
        }
        if samples.iter().any(|s| !linalg::vec_all_finite(s)) {
            return Err(Error::domain("history samples must be finite"));
        }
        Ok(History { samples, grid })
    }

    pub fn constant(value: DVector<f64>, grid: ThetaGrid) -> Self {
        let samples = vec![value; grid.n_nodes()];
        History { samples, grid }
    }

    pub fn from_fn(grid: ThetaGrid, f: impl Fn(f64) -> DVector<f64>) -> Result<Self> {
        let samples: Vec<_> = grid.nodes().map(&f).collect();
        History::new(samples, grid)
    }

    pub fn dim(&self) -> usize {
        self.samples[0].len()
    }

    pub fn grid(&self) -> &ThetaGrid {
        &self.grid
    }

    pub fn samples(&self) -> &[DVector<f64>] {
        &self.samples
    }

    /// `φ(0)`.
    pub fn phi0(&self) -> &DVector<f64> {
        &self.samples[self.samples.len() - 1]
    }

    /// Piecewise-linear evaluation; clamps θ to `[−h, 0]`.
    pub fn eval(&self, theta: f64) -> DVector<f64> {
        let pos = (theta + self.grid.h()) / self.grid.step();
        let pos = pos.clamp(0.0, self.grid.n_intervals() as f64);
        let i0 = (pos.floor() as usize).min(self.grid.n_intervals() - 1);
        let frac = pos - i0 as f64;
        if frac == 0.0 {
            self.samples[i0].clone()
        } else {
            &self.samples[i0] * (1.0 - frac) + &self.samples[i0 + 1] * frac
        }
    }

    /// `‖φ‖_h`, the max of node norms.
    pub fn sup_norm(&self) -> f64 {
        self.samples.iter().map(|s| s.norm()).fold(0.0, f64::max)
    }

    /// `∫_{−h}^{0} ‖φ(θ)‖ dθ` by trapezoid over node norms.
    pub fn int_norm(&self) -> f64 {
        self.samples
            .iter()
            .enumerate()
            .map(|(i, s)| self.grid.weight(i) * s.norm())
            .sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn grid() -> ThetaGrid {
        ThetaGrid::new(1.0, 8).unwrap()
    }

    fn scalar(v: f64) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, v)
    }

    #[test]
    fn close_loop_zero_gain_keeps_plant() {
        let g = grid();
        let e: Vec<_> = g.nodes().map(|th| scalar(0.5 * th)).collect();
        let sys = SystemModel::new(scalar(-1.0), scalar(0.25), scalar(1.0), g.clone(), e.clone())
            .unwrap();
        let law = ControlLaw::zero(1, 1, g.clone());
        let cl = close_loop(&sys, &law).unwrap();
        assert_eq!(cl.a0, scalar(-1.0));
        assert_eq!(cl.a1, scalar(0.25));
        for (gi, ei) in cl.g_samples().iter().zip(e.iter()) {
            assert_eq!(gi, ei);
        }
    }

    #[test]
    fn close_loop_scalar_arithmetic() {
        // a = -1, d = 1, gamma0 = -1  ->  a0 = -2
        let g = grid();
        let sys = SystemModel::with_zero_e(scalar(-1.0), scalar(0.0), scalar(1.0), g.clone())
            .unwrap();
        let law = ControlLaw::new(
            scalar(-1.0),
            vec![scalar(0.0); g.n_nodes()],
            g.clone(),
        )
        .unwrap();
        let cl = close_loop(&sys, &law).unwrap();
        assert_eq!(cl.a0[(0, 0)], -2.0);
    }

    #[test]
    fn close_loop_matches_direct_matrix_arithmetic() {
        // 4-state system with a nontrivial gain: entry-wise equality with
        // an independently computed A + D*Gamma0.
        let g = ThetaGrid::new(1.0, 4).unwrap();
        let a = DMatrix::from_row_slice(
            4,
            4,
            &[
                -4.93, -1.01, 0.0, 0.0, -3.2, -5.3, -12.8, 0.0, 6.4, 0.347, -32.5, -1.04, 0.0,
                0.833, 11.0, -3.96,
            ],
        );
        let b = DMatrix::from_row_slice(
            4,
            4,
            &[
                1.92, 0.0, 0.0, 0.0, 0.0, 1.92, -12.8, 0.0, 6.4, 0.347, -32.5, -1.04, 0.0, 0.833,
                11.0, -3.96,
            ],
        );
        let d = DMatrix::from_row_slice(4, 2, &[1.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0]);
        let sys = SystemModel::with_zero_e(a.clone(), b, d.clone(), g.clone()).unwrap();
        let gamma0 = DMatrix::from_row_slice(2, 4, &[0.3, -1.2, 0.7, 0.1, -0.4, 0.9, 0.0, 2.0]);
        let law =
            ControlLaw::new(gamma0.clone(), vec![DMatrix::zeros(2, 4); g.n_nodes()], g).unwrap();
        let cl = close_loop(&sys, &law).unwrap();
        let expect = &a + &d * &gamma0;
        for i in 0..4 {
            for j in 0..4 {
                assert_relative_eq!(cl.a0[(i, j)], expect[(i, j)], epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn close_loop_rejects_bad_dims() {
        let g = grid();
        let sys = SystemModel::with_zero_e(scalar(-1.0), scalar(0.0), scalar(1.0), g.clone())
            .unwrap();
        let law = ControlLaw::zero(1, 2, g);
        assert!(matches!(close_loop(&sys, &law), Err(Error::Dimension(_))));
    }

    #[test]
    fn sup_norm_g_zero_and_diag_theta() {
        let g = grid();
        let cl = ClosedLoopSystem::from_parts(
            scalar(0.0),
            scalar(0.0),
            vec![scalar(0.0); g.n_nodes()],
            g.clone(),
        )
        .unwrap();
        assert_eq!(sup_norm_g(&cl), 0.0);

        // G(θ) = θ on [−1, 0]: sup of |θ| over the grid is 1.
        let samples: Vec<_> = g.nodes().map(scalar).collect();
        let cl = ClosedLoopSystem::from_parts(scalar(0.0), scalar(0.0), samples, g).unwrap();
        assert_relative_eq!(sup_norm_g(&cl), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn cost_weights_reject_indefinite() {
        let q = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]); // eigenvalues 3, -1
        let r = DMatrix::identity(1, 1);
        assert!(CostWeights::new(q, r).is_err());
        let q = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.4, 1.0]); // not symmetric
        let r = DMatrix::identity(1, 1);
        assert!(CostWeights::new(q, r).is_err());
    }

    #[test]
    fn history_interp_exact_at_nodes_and_for_affine() {
        let g = grid();
        let phi = History::from_fn(g.clone(), |th| {
            DVector::from_vec(vec![2.0 - 3.0 * th])
        })
        .unwrap();
        for th in g.nodes() {
            assert_relative_eq!(phi.eval(th)[0], 2.0 - 3.0 * th, epsilon = 1e-14);
        }
        // affine functions interpolate exactly off-node
        assert_relative_eq!(phi.eval(-0.31)[0], 2.0 + 3.0 * 0.31, epsilon = 1e-14);
        assert_relative_eq!(phi.sup_norm(), 5.0, epsilon = 1e-14);
    }
}
