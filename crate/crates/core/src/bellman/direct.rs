//! Reference construction of the cost kernels by direct time quadrature.
//!
//! Independent of the Lyapunov-operator route in the parent module: the
//! state response `x(t) = K(t)φ(0) + ∫K̂(t,θ)φ(θ)dθ` and the input
//! response `u(t) = N(t)φ(0) + ∫N̂(t,θ)φ(θ)dθ` are tabulated directly and
//! the kernels are the time integrals
//!
//! ```text
//! Π₀      = ∫ [KᵀQK + NᵀRN] dt
//! Π₁(θ)   = ∫ [KᵀQK̂(·,θ) + NᵀRN̂(·,θ)] dt
//! Π₂(ξ,θ) = ∫ [K̂ᵀ(·,ξ)QK̂(·,θ) + N̂ᵀ(·,ξ)RN̂(·,θ)] dt
//! ```
//!
//! with `N(t) = Γ₀K(t) + ∫Γ₁(θ')K(t+θ')dθ'` and
//! `N̂(t,θ) = Γ₀K̂(t,θ) + ∫Γ₁(θ')K̂(t+θ',θ)dθ' + Γ₁(θ−t)·1_{t ≤ θ+h}`
//! (the last summand is the control's direct read of the initial function
//! on the startup window). Used by tests as the cross-formula oracle; it
//! is slower but manifestly symmetric and complete.

use super::BellmanKernels;
use crate::ddesim::{self, FundamentalMatrix};
use crate::error::Error;
use crate::sysmodel::{ClosedLoopSystem, ControlLaw, CostWeights};
use crate::Result;
use nalgebra::DMatrix;
use rayon::prelude::*;

/// Build `Π₀, Π₁, Π₂` by the direct definition.
pub fn direct_kernels(
    cl: &ClosedLoopSystem,
    law: &ControlLaw,
    w: &CostWeights,
    fm: &FundamentalMatrix,
) -> Result<BellmanKernels> {
    if !fm.fit().is_stable() {
        return Err(Error::NotStable("direct kernels need a stable closed loop".into()));
    }
    let grid = cl.grid().clone();
    let nn = grid.n_nodes();
    let n = cl.n;
    let h = grid.h();
    let dt = fm.dt();
    let nt = fm.samples().len() - 1;

    // K̂(t_j, θ_i) over the full horizon
    let khat: Vec<Vec<DMatrix<f64>>> = (0..=nt)
        .into_par_iter()
        .map(|j| {
            let t = j as f64 * dt;
            (0..nn)
                .map(|i| ddesim::khat_kernel(fm, cl, t, grid.node(i)).expect("within horizon"))
                .collect()
        })
        .collect();

    let g1 = law.gamma1_samples();
    let r_dim = law.gamma0.nrows();
    let gamma1_at = |th: f64| -> DMatrix<f64> {
        if (-h..=0.0).contains(&th) {
            law.gamma1_at(th)
        } else {
            DMatrix::zeros(r_dim, n)
        }
    };

    // N(t_j) = Γ₀K + ∫Γ₁(θ')K(t+θ')dθ' (support cut at θ' = −t)
    let n_tab: Vec<DMatrix<f64>> = (0..=nt)
        .into_par_iter()
        .map(|j| {
            let t = j as f64 * dt;
            let mut acc = &law.gamma0 * &fm.samples()[j];
            let lo = (-t).max(-h);
            let mut prev_th = lo;
            let mut prev_val = gamma1_at(lo) * fm.eval(t + lo);
            for k in 0..nn {
                let th = grid.node(k);
                if th <= lo + 1e-15 {
                    continue;
                }
                let val = &g1[k] * fm.eval(t + th);
                acc += (&prev_val + &val) * (0.5 * (th - prev_th));
                prev_th = th;
                prev_val = val;
            }
            acc
        })
        .collect();

    // N̂(t_j, θ_i)
    let nhat: Vec<Vec<DMatrix<f64>>> = (0..=nt)
        .into_par_iter()
        .map(|j| {
            let t = j as f64 * dt;
            (0..nn)
                .map(|i| {
                    let mut acc = &law.gamma0 * &khat[j][i];
                    // ∫Γ₁(θ')K̂(t+θ', θ_i)dθ' over θ' ∈ [−min(t,h), 0]
                    let lo = (-t).max(-h);
                    let mut prev_th = lo;
                    let khat_at = |s: f64| -> DMatrix<f64> {
                        if s < 0.0 {
                            return DMatrix::zeros(n, n);
                        }
                        let js = (s / dt).round() as usize;
                        if js > nt {
                            DMatrix::zeros(n, n)
                        } else {
                            khat[js][i].clone()
                        }
                    };
                    let mut prev_val = gamma1_at(lo) * khat_at(t + lo);
                    for k in 0..nn {
                        let th = grid.node(k);
                        if th <= lo + 1e-15 {
                            continue;
                        }
                        let val = &g1[k] * khat_at(t + th);
                        acc += (&prev_val + &val) * (0.5 * (th - prev_th));
                        prev_th = th;
                        prev_val = val;
                    }
                    // startup read of the initial function
                    let th_shift = grid.node(i) - t;
                    if th_shift >= -h - 1e-12 {
                        acc += gamma1_at(th_shift);
                    }
                    acc
                })
                .collect()
        })
        .collect();

    let wt = |j: usize| if j == 0 || j == nt { 0.5 * dt } else { dt };

    // Π₀
    let mut pi0 = DMatrix::zeros(n, n);
    for j in 0..=nt {
        let k = &fm.samples()[j];
        pi0 += (k.transpose() * &w.q * k + n_tab[j].transpose() * &w.r * &n_tab[j]) * wt(j);
    }
    pi0 = (&pi0 + pi0.transpose()) * 0.5;

    // Π₁
    let pi1: Vec<DMatrix<f64>> = (0..nn)
        .into_par_iter()
        .map(|i| {
            let mut acc = DMatrix::zeros(n, n);
            for j in 0..=nt {
                let k = &fm.samples()[j];
                acc += (k.transpose() * &w.q * &khat[j][i]
                    + n_tab[j].transpose() * &w.r * &nhat[j][i])
                    * wt(j);
            }
            acc
        })
        .collect();

    // Π₂
    let pi2: Vec<DMatrix<f64>> = (0..nn * nn)
        .into_par_iter()
        .map(|idx| {
            let i = idx / nn;
            let l = idx % nn;
            let mut acc = DMatrix::zeros(n, n);
            for j in 0..=nt {
                acc += (khat[j][i].transpose() * &w.q * &khat[j][l]
                    + nhat[j][i].transpose() * &w.r * &nhat[j][l])
                    * wt(j);
            }
            acc
        })
        .collect();

    Ok(BellmanKernels {
        n,
        grid,
        pi0,
        pi1,
        pi2,
    })
}
