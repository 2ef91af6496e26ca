//! Optimal control law, Riccati-system residuals and policy-iteration
//! synthesis.
//!
//! The candidate optimal law is read off the cost kernels,
//! `u = −R⁻¹Dᵀ[Π₀ x(t) + ∫Π₁(θ)x(t+θ)dθ]`. At the optimum the kernels
//! satisfy five coupled matrix equations; [`riccati_residuals`] evaluates
//! them on the grid with finite-difference derivatives. Since the
//! optimality system has no closed-form solution in the distributed case,
//! synthesis alternates cost evaluation (kernel assembly) with law
//! improvement until the law stops moving; every iterate is re-checked
//! for exponential stability and destabilizing updates are damped.

use crate::bellman::{simulate_cost, BellmanKernels, KernelAssembly};
use crate::ddesim::{fundamental_matrix_auto, FundamentalMatrix};
use crate::error::Error;
use crate::linalg;
use crate::sysmodel::{close_loop, ControlLaw, CostWeights, History, SystemModel};
use crate::Result;
use nalgebra::{DMatrix, DVector};
use serde::Serialize;

/// Norms of the five optimality-equation residuals.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct RiccatiResiduals {
    /// algebraic equation in `Π₀, Π₁(0)`
    pub r1: f64,
    /// ODE for `Π₁(θ)`, max over nodes
    pub r2: f64,
    /// transport PDE for `Π₂(ξ,θ)`, max over node pairs
    pub r3: f64,
    /// boundary `Π₁(−h) = Π₀B`
    pub r4: f64,
    /// boundary `Π₂(−h,θ) = BᵀΠ₁(θ)`, max over nodes
    pub r5: f64,
}

impl RiccatiResiduals {
    pub fn max(&self) -> f64 {
        self.r1.max(self.r2).max(self.r3).max(self.r4).max(self.r5)
    }
}

fn r_inverse(w: &CostWeights) -> Result<DMatrix<f64>> {
    w.r.clone()
        .try_inverse()
        .ok_or_else(|| Error::Numerical("R is numerically singular".into()))
}

/// `Γ₀ = −R⁻¹DᵀΠ₀`, `Γ₁(θᵢ) = −R⁻¹DᵀΠ₁(θᵢ)`.
pub fn improved_law(k: &BellmanKernels, sys: &SystemModel, w: &CostWeights) -> Result<ControlLaw> {
    if k.n() != sys.n {
        return Err(Error::dim("kernels and system dimensions differ"));
    }
    let front = -(r_inverse(w)? * sys.d.transpose());
    let gamma0 = &front * &k.pi0;
    let gamma1 = k.pi1.iter().map(|p| &front * p).collect();
    ControlLaw::new(gamma0, gamma1, k.grid().clone())
}

/// Central differences inside, second-order one-sided at the ends.
fn d_dtheta(samples: &[DMatrix<f64>], i: usize, step: f64) -> DMatrix<f64> {
    let last = samples.len() - 1;
    if i == 0 {
        (&samples[0] * -3.0 + &samples[1] * 4.0 - &samples[2]) * (0.5 / step)
    } else if i == last {
        (&samples[last] * 3.0 - &samples[last - 1] * 4.0 + &samples[last - 2]) * (0.5 / step)
    } else {
        (&samples[i + 1] - &samples[i - 1]) * (0.5 / step)
    }
}

/// Evaluate the five optimality equations of the kernel triple against
/// the open-loop plant `(A, B, D, E)` and weights `(Q, R)`.
pub fn riccati_residuals(
    k: &BellmanKernels,
    sys: &SystemModel,
    w: &CostWeights,
) -> Result<RiccatiResiduals> {
    if k.n() != sys.n || k.grid() != sys.grid() {
        return Err(Error::dim("kernels and system grids differ"));
    }
    let grid = sys.grid();
    let nn = grid.n_nodes();
    let step = grid.step();
    let s = &sys.d * r_inverse(w)? * sys.d.transpose();
    let pi0 = &k.pi0;
    let at = sys.a.transpose();

    // 1) AᵀΠ₀ + Π₀A − Π₀SΠ₀ + Π₁ᵀ(0) + Π₁(0) + Q = 0
    let pi1_0 = &k.pi1[nn - 1];
    let r1 = linalg::spectral_norm(
        &(&at * pi0 + pi0 * &sys.a - pi0 * &s * pi0
            + pi1_0.transpose()
            + pi1_0
            + &w.q),
    );

    // 2) dΠ₁/dθ = (Aᵀ − Π₀S)Π₁(θ) + Π₂(0,θ) + Π₀E(θ)
    let front = &at - pi0 * &s;
    let mut r2 = 0.0_f64;
    for i in 0..nn {
        let lhs = d_dtheta(&k.pi1, i, step);
        let rhs = &front * &k.pi1[i] + k.pi2_at(nn - 1, i) + pi0 * &sys.e_samples()[i];
        r2 = r2.max(linalg::spectral_norm(&(lhs - rhs)));
    }

    // 3) ∂Π₂/∂ξ + ∂Π₂/∂θ = −Π₁ᵀ(ξ)SΠ₁(θ) + 2Eᵀ(ξ)Π₁(θ).
    // The left side is the directional derivative along (1,1); Π₂ carries
    // a derivative kink across ξ = θ (from the Lyapunov-matrix jump), so
    // the stencil runs along the diagonal, parallel to the kink. Near the
    // two anti-diagonal corners, where no diagonal stencil fits, the
    // kink is a full delay away and split one-sided differences are safe.
    let mut r3 = 0.0_f64;
    let rows: Vec<Vec<DMatrix<f64>>> = (0..nn)
        .map(|i| (0..nn).map(|j| k.pi2_at(i, j).clone()).collect())
        .collect();
    let last = nn - 1;
    let diag = |i: usize, j: usize| -> Option<DMatrix<f64>> {
        if i >= 1 && j >= 1 && i < last && j < last {
            Some((&rows[i + 1][j + 1] - &rows[i - 1][j - 1]) * (0.5 / step))
        } else if i + 2 <= last && j + 2 <= last {
            Some(
                (&rows[i][j] * -3.0 + &rows[i + 1][j + 1] * 4.0 - &rows[i + 2][j + 2])
                    * (0.5 / step),
            )
        } else if i >= 2 && j >= 2 {
            Some(
                (&rows[i][j] * 3.0 - &rows[i - 1][j - 1] * 4.0 + &rows[i - 2][j - 2])
                    * (0.5 / step),
            )
        } else {
            None
        }
    };
    for j in 0..nn {
        let col: Vec<DMatrix<f64>> = (0..nn).map(|p| rows[p][j].clone()).collect();
        for i in 0..nn {
            let transport = match diag(i, j) {
                Some(d) => d,
                None => d_dtheta(&col, i, step) + d_dtheta(&rows[i], j, step),
            };
            let rhs = -(k.pi1[i].transpose() * &s * &k.pi1[j])
                + sys.e_samples()[i].transpose() * &k.pi1[j] * 2.0;
            r3 = r3.max(linalg::spectral_norm(&(transport - rhs)));
        }
    }

    // 4) Π₁(−h) = Π₀B
    let r4 = linalg::spectral_norm(&(&k.pi1[0] - pi0 * &sys.b));

    // 5) Π₂(−h,θ) = BᵀΠ₁(θ)
    let bt = sys.b.transpose();
    let mut r5 = 0.0_f64;
    for j in 0..nn {
        r5 = r5.max(linalg::spectral_norm(
            &(k.pi2_at(0, j) - &bt * &k.pi1[j]),
        ));
    }

    Ok(RiccatiResiduals { r1, r2, r3, r4, r5 })
}

/// Knobs for [`policy_iteration`].
#[derive(Debug, Clone)]
pub struct PolicyIterationOptions {
    /// Convergence threshold on `max(‖ΔΓ₀‖, max_θ ‖ΔΓ₁‖)`.
    pub tol: f64,
    pub max_iter: usize,
    /// Integration steps per delay interval (`dt = h / steps`).
    pub steps_per_delay: usize,
    /// Probe history for the per-iterate cost trace; defaults to the
    /// constant all-ones function.
    pub probe: Option<History>,
    /// Fixed cost-simulation horizon; estimated from the initial decay
    /// fit when absent (kept constant across iterates so the trace is
    /// comparable).
    pub cost_horizon: Option<f64>,
}

impl Default for PolicyIterationOptions {
    fn default() -> Self {
        PolicyIterationOptions {
            tol: 1e-5,
            max_iter: 30,
            steps_per_delay: crate::ddesim::DEFAULT_STEPS_PER_DELAY,
            probe: None,
            cost_horizon: None,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct IterationRecord {
    pub iter: usize,
    /// `J(φ_probe)` under the iterate's law.
    pub cost: f64,
    pub residuals: RiccatiResiduals,
    /// decay fit of the iterate's closed loop
    pub gamma: f64,
    pub beta: f64,
    /// law movement produced by this iterate's improvement step
    pub law_change: f64,
    /// damping factor actually applied (1 = full step)
    pub step: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum SynthesisStatus {
    Converged,
    MaxIterations,
    /// every damped step of the last improvement destabilized the loop
    Destabilized,
}

pub struct SynthesisResult {
    pub law: ControlLaw,
    pub kernels: BellmanKernels,
    pub trace: Vec<IterationRecord>,
    pub status: SynthesisStatus,
}

impl SynthesisResult {
    pub fn converged(&self) -> bool {
        self.status == SynthesisStatus::Converged
    }
}

fn stable_closed_loop(
    sys: &SystemModel,
    law: &ControlLaw,
    dt: f64,
) -> Result<Option<(crate::sysmodel::ClosedLoopSystem, FundamentalMatrix)>> {
    let cl = close_loop(sys, law)?;
    let fm = fundamental_matrix_auto(&cl, dt)?;
    if fm.fit().is_stable() {
        Ok(Some((cl, fm)))
    } else {
        Ok(None)
    }
}

/// Alternate kernel assembly and law improvement until the law stops
/// moving. Requires a stabilizing initial law; a destabilizing update is
/// retried with a halved step up to five times.
pub fn policy_iteration(
    sys: &SystemModel,
    w: &CostWeights,
    init: &ControlLaw,
    opts: &PolicyIterationOptions,
) -> Result<SynthesisResult> {
    let h = sys.h();
    let dt = h / opts.steps_per_delay as f64;
    if opts.steps_per_delay % sys.grid().n_intervals() != 0 {
        return Err(Error::domain(
            "steps_per_delay must be a multiple of n_theta for the kernel lattice",
        ));
    }
    let probe = match &opts.probe {
        Some(p) => p.clone(),
        None => History::constant(DVector::from_element(sys.n, 1.0), sys.grid().clone()),
    };
    // second-order optimality condition: R must stay positive definite
    let lam_r = linalg::min_symmetric_eigenvalue(&w.r);
    if !(lam_r > 0.0) {
        return Err(Error::Synthesis(format!(
            "R is not positive definite (min eigenvalue {lam_r:.3e})"
        )));
    }

    let (mut cl, mut fm) = stable_closed_loop(sys, init, dt)?.ok_or_else(|| {
        Error::Synthesis("initial law is not stabilizing (decay fit failed)".into())
    })?;
    let mut law = init.clone();
    let cost_horizon = opts
        .cost_horizon
        .unwrap_or_else(|| {
            let beta = fm.fit().beta.max(1e-3);
            (16.0 / beta).clamp(5.0 * h, 400.0 * h)
        })
        .max(h);

    let mut trace = Vec::new();
    let mut status = SynthesisStatus::MaxIterations;

    for iter in 1..=opts.max_iter {
        let kernels = KernelAssembly::new(&cl, &law, w, &fm)?.build()?;
        let cost = simulate_cost(&cl, &law, w, &probe, cost_horizon, dt)?;
        let residuals = riccati_residuals(&kernels, sys, w)?;
        let candidate = improved_law(&kernels, sys, w)?;
        let change = candidate.distance(&law);

        let mut record = IterationRecord {
            iter,
            cost,
            residuals,
            gamma: fm.fit().gamma,
            beta: fm.fit().beta,
            law_change: change,
            step: 1.0,
        };

        if change < opts.tol {
            trace.push(record);
            status = SynthesisStatus::Converged;
            return Ok(SynthesisResult { law, kernels, trace, status });
        }

        // step toward the candidate, damping on destabilization
        let mut accepted = None;
        let mut s = 1.0;
        for _ in 0..=5 {
            let trial = law.blend(&candidate, s);
            if let Some(pair) = stable_closed_loop(sys, &trial, dt)? {
                accepted = Some((trial, pair, s));
                break;
            }
            s *= 0.5;
        }
        match accepted {
            Some((trial, (cl_new, fm_new), s_used)) => {
                record.step = s_used;
                trace.push(record);
                law = trial;
                cl = cl_new;
                fm = fm_new;
            }
            None => {
                record.step = 0.0;
                trace.push(record);
                status = SynthesisStatus::Destabilized;
                return Ok(SynthesisResult { law, kernels, trace, status });
            }
        }
    }

    // max_iter exhausted: report the last evaluated state
    let kernels = KernelAssembly::new(&cl, &law, w, &fm)?.build()?;
    Ok(SynthesisResult { law, kernels, trace, status })
}
