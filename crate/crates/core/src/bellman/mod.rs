//! Weight kernels `M₁, M₂(θ), M₃(θ₁,θ₂)`, the cost-functional kernels
//! `Π₀, Π₁(θ), Π₂(ξ,θ)`, functional evaluation `V(φ)` and direct cost
//! simulation `J(φ)` for cross-validation.
//!
//! For an admissible law the closed-loop cost is the quadratic functional
//!
//! ```text
//! V(φ) = φᵀ(0)Π₀φ(0) + 2φᵀ(0)∫Π₁(θ)φ(θ)dθ + ∬φᵀ(ξ)Π₂(ξ,θ)φ(θ)dξdθ.
//! ```
//!
//! Every kernel term is a trapezoid quadrature whose integrand is a delay
//! Lyapunov matrix evaluation. All lags arising in the expansion are of
//! the form `c`, `c±θ`, `c−θ₁+θ₂` with `c ∈ [−h,h]`, so the assembly
//! tabulates the combined correlation
//!
//! ```text
//! T(c) = U(c,M₁) + ∫[U(c+θ,M₂(θ)) + U(c−θ,M₂ᵀ(θ))]dθ + ∬U(c−θ₁+θ₂,M₃)dθ₁dθ₂
//! ```
//!
//! on the θ-lattice and assembles
//!
//! ```text
//! Π₀      = T(0)
//! Π₁(θ)   = T(−θ−h)A₁ + ∫_{−h}^{θ} T(δ−θ)G(δ)dδ + ΔΠ₁(θ)
//! Π₂(ξ,θ) = A₁ᵀT(ξ−θ)A₁ + A₁ᵀ∫T(ξ+h−θ+δ)G(δ)dδ + [∫Gᵀ(δ)T(ξ−δ−θ−h)dδ]A₁
//!         + ∬Gᵀ(δ₁)T(ξ−δ₁+δ₂−θ)G(δ₂)dδ₂dδ₁ + ΔΠ₂(ξ,θ)
//! ```
//!
//! The `Δ` terms account for the control's history integral on the
//! startup window `t ∈ [0,h)`, where `u` reads `φ` directly rather than
//! through the fundamental matrix; they vanish identically when
//! `Γ₁ ≡ 0` and at `θ = −h`. Without them `V(φ) = J(φ)` fails by
//! `O(‖Γ₁‖)` for histories supported away from `θ = 0`.
//!
//! [`direct`] rebuilds the same kernels through an independent route
//! (state and input response kernels integrated in time) and exists to
//! cross-check this assembly.

pub mod direct;

use crate::ddesim::{self, FundamentalMatrix, KZeroSide};
use crate::error::Error;
use crate::linalg;
use crate::lyapmat::LyapunovOperator;
use crate::sysmodel::{ClosedLoopSystem, ControlLaw, CostWeights, History, ThetaGrid};
use crate::Result;
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use std::io::Write;

/// Cost weights folded with the control law:
/// `M₁ = Q + Γ₀ᵀRΓ₀`, `M₂(θ) = Γ₀ᵀRΓ₁(θ)`, `M₃(θ₁,θ₂) = Γ₁ᵀ(θ₁)RΓ₁(θ₂)`.
#[derive(Debug, Clone)]
pub struct WeightKernels {
    pub m1: DMatrix<f64>,
    pub m2: Vec<DMatrix<f64>>,
    /// `m3[i][j] = M₃(θ_i, θ_j)`
    pub m3: Vec<Vec<DMatrix<f64>>>,
}

/// Exact matrix arithmetic at the grid nodes.
pub fn weight_kernels(w: &CostWeights, law: &ControlLaw) -> Result<WeightKernels> {
    let (r, n) = law.gamma0.shape();
    if w.q.nrows() != n || w.r.nrows() != r {
        return Err(Error::dim("weights do not match the law dimensions"));
    }
    let g0t_r = law.gamma0.transpose() * &w.r;
    let m1 = &w.q + &g0t_r * &law.gamma0;
    let g1 = law.gamma1_samples();
    let m2: Vec<_> = g1.iter().map(|g| &g0t_r * g).collect();
    let m3: Vec<Vec<_>> = g1
        .iter()
        .map(|gi| {
            let git_r = gi.transpose() * &w.r;
            g1.iter().map(|gj| &git_r * gj).collect()
        })
        .collect();
    Ok(WeightKernels { m1, m2, m3 })
}

/// Assembled cost-functional kernels on the θ-grid.
#[derive(Debug, Clone)]
pub struct BellmanKernels {
    pub(crate) n: usize,
    pub(crate) grid: ThetaGrid,
    pub pi0: DMatrix<f64>,
    pub pi1: Vec<DMatrix<f64>>,
    /// flat row-major: entry `(i_ξ, i_θ)` at `i_ξ · n_nodes + i_θ`
    pub pi2: Vec<DMatrix<f64>>,
}

impl BellmanKernels {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn grid(&self) -> &ThetaGrid {
        &self.grid
    }

    pub fn pi2_at(&self, i_xi: usize, i_theta: usize) -> &DMatrix<f64> {
        &self.pi2[i_xi * self.grid.n_nodes() + i_theta]
    }

    /// Max over node pairs of `‖Π₂ᵀ(ξ,θ) − Π₂(θ,ξ)‖`.
    pub fn pi2_symmetry_defect(&self) -> f64 {
        let nn = self.grid.n_nodes();
        let mut worst = 0.0_f64;
        for i in 0..nn {
            for j in i..nn {
                let d = self.pi2_at(i, j).transpose() - self.pi2_at(j, i);
                worst = worst.max(linalg::spectral_norm(&d));
            }
        }
        worst
    }

    /// Largest node-to-node increment of `Π₁`, a continuity estimate.
    pub fn pi1_max_jump(&self) -> f64 {
        self.pi1
            .windows(2)
            .map(|w| linalg::spectral_norm(&(&w[1] - &w[0])))
            .fold(0.0, f64::max)
    }

    /// `V(φ)` by trapezoid quadrature of the two integral terms.
    pub fn evaluate(&self, phi: &History) -> Result<f64> {
        if phi.grid() != &self.grid {
            return Err(Error::dim("history grid does not match the kernel grid"));
        }
        if phi.dim() != self.n {
            return Err(Error::dim("history dimension does not match the kernels"));
        }
        let nn = self.grid.n_nodes();
        let phi0 = phi.phi0();
        let mut v = (phi0.transpose() * &self.pi0 * phi0)[(0, 0)];

        let mut mid = DVector::zeros(self.n);
        for k in 0..nn {
            mid += self.grid.weight(k) * (&self.pi1[k] * phi.eval(self.grid.node(k)));
        }
        v += 2.0 * phi0.dot(&mid);

        let samples: Vec<DVector<f64>> = (0..nn).map(|k| phi.eval(self.grid.node(k))).collect();
        let mut dbl = 0.0;
        for i in 0..nn {
            let wi = self.grid.weight(i);
            for j in 0..nn {
                let wj = self.grid.weight(j);
                dbl += wi * wj * (samples[i].transpose() * self.pi2_at(i, j) * &samples[j])[(0, 0)];
            }
        }
        Ok(v + dbl)
    }

    /// CSV dump of `Π₁` — `theta,P11..Pnn`, row-major entries.
    pub fn write_pi1_csv(&self, mut w: impl Write) -> std::io::Result<()> {
        write!(w, "theta")?;
        for i in 1..=self.n {
            for j in 1..=self.n {
                write!(w, ",P{i}{j}")?;
            }
        }
        writeln!(w)?;
        for (k, p) in self.pi1.iter().enumerate() {
            write!(w, "{:.9}", self.grid.node(k))?;
            for i in 0..self.n {
                for j in 0..self.n {
                    write!(w, ",{:.12e}", p[(i, j)])?;
                }
            }
            writeln!(w)?;
        }
        Ok(())
    }

    /// CSV dump of `Π₂` — pair list `xi,theta,P11..Pnn`.
    pub fn write_pi2_csv(&self, mut w: impl Write) -> std::io::Result<()> {
        write!(w, "xi,theta")?;
        for i in 1..=self.n {
            for j in 1..=self.n {
                write!(w, ",P{i}{j}")?;
            }
        }
        writeln!(w)?;
        let nn = self.grid.n_nodes();
        for i in 0..nn {
            for j in 0..nn {
                write!(w, "{:.9},{:.9}", self.grid.node(i), self.grid.node(j))?;
                let p = self.pi2_at(i, j);
                for a in 0..self.n {
                    for b in 0..self.n {
                        write!(w, ",{:.12e}", p[(a, b)])?;
                    }
                }
                writeln!(w)?;
            }
        }
        Ok(())
    }
}

/// One-time kernel assembly context for a fixed `(closed loop, law,
/// weights)` triple. `Π₂` is the hot spot and is built once and cached in
/// the resulting [`BellmanKernels`]; node evaluations parallelize.
pub struct KernelAssembly<'a> {
    cl: &'a ClosedLoopSystem,
    law: &'a ControlLaw,
    fm: &'a FundamentalMatrix,
    wk: WeightKernels,
    op: LyapunovOperator,
    r_mat: DMatrix<f64>,
}

impl<'a> KernelAssembly<'a> {
    pub fn new(
        cl: &'a ClosedLoopSystem,
        law: &'a ControlLaw,
        weights: &CostWeights,
        fm: &'a FundamentalMatrix,
    ) -> Result<Self> {
        if !fm.fit().is_stable() {
            return Err(Error::NotStable(
                "kernel assembly needs a certified stable closed loop".into(),
            ));
        }
        let grid = cl.grid();
        let step_ratio = grid.step() / fm.dt();
        if (step_ratio - step_ratio.round()).abs() > 1e-9 {
            return Err(Error::domain(
                "theta step must be an integer multiple of the K step (choose n_theta dividing h/dt)",
            ));
        }
        let wk = weight_kernels(weights, law)?;
        // Term inspection of the Π₂ expansion bounds every U lag by 2h.
        let op = LyapunovOperator::build(fm, grid.step(), 2.0 * grid.h())?;
        Ok(KernelAssembly {
            cl,
            law,
            fm,
            wk,
            op,
            r_mat: weights.r.clone(),
        })
    }

    pub fn operator(&self) -> &LyapunovOperator {
        &self.op
    }

    pub fn weight_kernels(&self) -> &WeightKernels {
        &self.wk
    }

    /// Combined correlation `T(c)` on the lattice `c = k·Δθ, k ∈ [−Nθ, Nθ]`.
    fn t_table(&self) -> Vec<DMatrix<f64>> {
        let grid = self.cl.grid();
        let nn = grid.n_nodes();
        let ntheta = grid.n_intervals() as i64;
        let n = self.cl.n;
        let step = grid.step();

        // diagonal-grouped M₃ weights: the S₃ term only sees θ₂−θ₁
        let mut m3diag = vec![DMatrix::zeros(n, n); 2 * nn - 1];
        for k1 in 0..nn {
            let w1 = grid.weight(k1);
            for k2 in 0..nn {
                let w2 = grid.weight(k2);
                let d = (k2 as i64 - k1 as i64 + ntheta) as usize;
                m3diag[d] += w1 * w2 * &self.wk.m3[k1][k2];
            }
        }
        let m2t: Vec<DMatrix<f64>> = self.wk.m2.iter().map(|m| m.transpose()).collect();

        (-ntheta..=ntheta)
            .into_par_iter()
            .map(|ic| {
                let c = ic as f64 * step;
                let mut acc = self.op.eval(c, &self.wk.m1);
                for k in 0..nn {
                    let w = grid.weight(k);
                    let th = grid.node(k);
                    acc += self.op.eval(c + th, &(w * &self.wk.m2[k]));
                    acc += self.op.eval(c - th, &(w * &m2t[k]));
                }
                for (d, m) in m3diag.iter().enumerate() {
                    let lag = c + (d as i64 - ntheta) as f64 * step;
                    acc += self.op.eval(lag, m);
                }
                acc
            })
            .collect()
    }

    /// Assemble all three kernels.
    pub fn build(&self) -> Result<BellmanKernels> {
        let grid = self.cl.grid().clone();
        let nn = grid.n_nodes();
        let ntheta = grid.n_intervals();
        let n = self.cl.n;
        let t_tab = self.t_table();
        let t_at = |k: i64| -> &DMatrix<f64> { &t_tab[(k + ntheta as i64) as usize] };
        let g = self.cl.g_samples();
        let a1 = &self.cl.a1;

        // Π₀ = T(0), symmetrized against quadrature roundoff.
        let t0 = t_at(0);
        let pi0 = (t0 + t0.transpose()) * 0.5;

        let (dpi1, dpi2) = self.startup_corrections()?;

        // Π₁
        let mut pi1: Vec<DMatrix<f64>> = Vec::with_capacity(nn);
        for i in 0..nn {
            let mut p = t_at(-(i as i64)) * a1;
            for k in 0..=i {
                let w = grid.weight_upto(k, i);
                if w > 0.0 {
                    p += t_at(k as i64 - i as i64) * (w * &g[k]);
                }
            }
            p += &dpi1[i];
            pi1.push(p);
        }

        // H(α, j) = Σ_{k₂ ≤ j} w·T((α+k₂−j)Δθ)·G(θ_k₂) for the double-G term
        let h_tab: Vec<DMatrix<f64>> = (0..nn * nn)
            .into_par_iter()
            .map(|idx| {
                let alpha = (idx / nn) as i64;
                let j = idx % nn;
                let mut acc = DMatrix::zeros(n, n);
                for k2 in 0..=j {
                    let w = grid.weight_upto(k2, j);
                    if w > 0.0 {
                        acc += t_at(alpha + k2 as i64 - j as i64) * (w * &g[k2]);
                    }
                }
                acc
            })
            .collect();

        let pi2: Vec<DMatrix<f64>> = (0..nn * nn)
            .into_par_iter()
            .map(|idx| {
                let i = idx / nn;
                let j = idx % nn;
                let mut p = a1.transpose() * t_at(i as i64 - j as i64) * a1;
                // A₁ᵀ ∫ T(ξ+h−θ+δ)G(δ)dδ: lattice index i − j + k
                let mut acc = DMatrix::zeros(n, n);
                for k in 0..=j {
                    let w = grid.weight_upto(k, j);
                    if w > 0.0 {
                        acc += t_at(i as i64 - j as i64 + k as i64) * (w * &g[k]);
                    }
                }
                p += a1.transpose() * acc;
                // [∫ Gᵀ(δ)T(ξ−δ−θ−h)dδ] A₁: lattice index i − k − j
                let mut acc = DMatrix::zeros(n, n);
                for k in 0..=i {
                    let w = grid.weight_upto(k, i);
                    if w > 0.0 {
                        acc += g[k].transpose() * t_at(i as i64 - k as i64 - j as i64) * w;
                    }
                }
                p += acc * a1;
                // ∬ Gᵀ(δ₁)T(ξ−δ₁+δ₂−θ)G(δ₂)
                let mut acc = DMatrix::zeros(n, n);
                for k1 in 0..=i {
                    let w = grid.weight_upto(k1, i);
                    if w > 0.0 {
                        acc += g[k1].transpose() * (w * &h_tab[(i - k1) * nn + j]);
                    }
                }
                p += acc;
                p += &dpi2[idx];
                p
            })
            .collect();

        Ok(BellmanKernels { n, grid, pi0, pi1, pi2 })
    }

    /// Kernel corrections for the startup window: on `t ∈ [0, h)` the
    /// control's distributed term reads the initial function directly,
    /// contributing
    ///
    /// ```text
    /// ΔΠ₁(θ)   = ∫₀^{θ+h} Uᵏᵀ(t) R Γ₁(θ−t) dt
    /// ΔΠ₂(ξ,θ) = ∫₀^{θ+h} Ûᵏᵀ(t,ξ) R Γ₁(θ−t) dt
    ///          + ∫₀^{ξ+h} Γ₁ᵀ(ξ−t) R Ûᵏ(t,θ) dt
    ///          + ∫₀^{min(ξ,θ)+h} Γ₁ᵀ(ξ−t) R Γ₁(θ−t) dt
    /// ```
    ///
    /// with the control response kernels `Uᵏ(t) = Γ₀K(t) + ∫Γ₁K(t+θ')dθ'`
    /// and `Ûᵏ(t,ξ) = Γ₀K̂(t,ξ) + ∫Γ₁K̂(t+θ',ξ)dθ'`.
    pub fn startup_corrections(&self) -> Result<(Vec<DMatrix<f64>>, Vec<DMatrix<f64>>)> {
        let grid = self.cl.grid();
        let nn = grid.n_nodes();
        let n = self.cl.n;
        let r = self.law.gamma0.nrows();
        let h = grid.h();
        let dt = self.fm.dt();
        let spd = (h / dt).round() as usize;
        let rw = &self.r_mat;

        if self
            .law
            .gamma1_samples()
            .iter()
            .all(|gm| gm.iter().all(|&v| v == 0.0))
        {
            // no distributed gain, corrections vanish identically
            return Ok((
                vec![DMatrix::zeros(n, n); nn],
                vec![DMatrix::zeros(n, n); nn * nn],
            ));
        }

        let gamma1_at = |th: f64| -> DMatrix<f64> {
            if (-h..=0.0).contains(&th) {
                self.law.gamma1_at(th)
            } else {
                DMatrix::zeros(r, n)
            }
        };

        // K̂(s, ξ_i) on the K step over s ∈ [0, h], right-continuous at jumps
        let khat_tab: Vec<Vec<DMatrix<f64>>> = (0..=spd)
            .into_par_iter()
            .map(|si| {
                let s = si as f64 * dt;
                (0..nn)
                    .map(|i| {
                        ddesim::khat_kernel(self.fm, self.cl, s, grid.node(i))
                            .expect("within horizon")
                    })
                    .collect()
            })
            .collect();

        // Uᵏ(t) = Γ₀K(t) + ∫_{−min(t,h)}^{0} Γ₁(θ')K(t+θ')dθ'
        let uk_tab: Vec<DMatrix<f64>> = (0..=spd)
            .into_par_iter()
            .map(|ti| {
                let t = ti as f64 * dt;
                let mut u = &self.law.gamma0 * self.fm.eval(t);
                let lo = (-t).max(-h);
                let mut prev_th = lo;
                let mut prev_val = gamma1_at(lo) * self.fm.eval(t + lo);
                for k in 0..nn {
                    let th = grid.node(k);
                    if th <= lo + 1e-15 {
                        continue;
                    }
                    let val = self.law.gamma1_samples()[k].clone() * self.fm.eval(t + th);
                    u += (&prev_val + &val) * (0.5 * (th - prev_th));
                    prev_th = th;
                    prev_val = val;
                }
                u
            })
            .collect();

        // Ûᵏ(t, ξ_i): θ'-integral of Γ₁(θ')K̂(t+θ', ξ), cut at the support
        // boundary θ' = −t and at the A₁ jump θ' = ξ+h−t.
        let khat_side = |si: i64, i: usize, side: KZeroSide| -> DMatrix<f64> {
            if si < 0 {
                return DMatrix::zeros(n, n);
            }
            let v = &khat_tab[si as usize][i];
            // jump of K̂(s,ξ) at s = ξ+h has magnitude A₁
            let jump_at = (grid.node(i) + h) / dt;
            if side == KZeroSide::Before && (si as f64 - jump_at).abs() < 1e-9 {
                v - &self.cl.a1
            } else {
                v.clone()
            }
        };
        let uhat_tab: Vec<Vec<DMatrix<f64>>> = (0..=spd)
            .into_par_iter()
            .map(|ti| {
                let t = ti as f64 * dt;
                (0..nn)
                    .map(|i| {
                        let xi = grid.node(i);
                        let mut u = &self.law.gamma0 * &khat_tab[ti][i];
                        let lo = (-t).max(-h);
                        // breakpoints: grid nodes, the support cut, the jump
                        let mut pts: Vec<(f64, KZeroSide)> = Vec::with_capacity(nn + 3);
                        let jump = xi + h - t;
                        pts.push((lo, KZeroSide::After));
                        for k in 0..nn {
                            let th = grid.node(k);
                            if th <= lo + 1e-15 {
                                continue;
                            }
                            if jump > lo + 1e-12 && jump < -1e-12 {
                                if (th - jump).abs() < 1e-12 {
                                    pts.push((jump, KZeroSide::After));
                                    pts.push((jump, KZeroSide::Before));
                                    continue;
                                }
                                if pts.last().map(|p| p.0 < jump).unwrap_or(false) && th > jump {
                                    pts.push((jump, KZeroSide::After));
                                    pts.push((jump, KZeroSide::Before));
                                }
                            }
                            pts.push((th, KZeroSide::After));
                        }
                        let mut prev: Option<(f64, DMatrix<f64>)> = None;
                        for (th, side) in pts {
                            let si = ((t + th) / dt).round() as i64;
                            let val = gamma1_at(th) * khat_side(si, i, side);
                            if let Some((pth, pval)) = prev.take() {
                                if th > pth + 1e-15 {
                                    u += (&pval + &val) * (0.5 * (th - pth));
                                }
                            }
                            prev = Some((th, val));
                        }
                        u
                    })
                    .collect()
            })
            .collect();

        // ΔΠ₁
        let dpi1: Vec<DMatrix<f64>> = (0..nn)
            .map(|i| {
                let mut acc = DMatrix::zeros(n, n);
                let up = i * (grid.step() / dt).round() as usize;
                if up == 0 {
                    return acc;
                }
                for ti in 0..=up {
                    let w = if ti == 0 || ti == up { 0.5 * dt } else { dt };
                    let t = ti as f64 * dt;
                    acc += uk_tab[ti].transpose() * rw * gamma1_at(grid.node(i) - t) * w;
                }
                acc
            })
            .collect();

        // ΔΠ₂, split at the Ûᵏ jump t = ξ+h where it crosses the range
        let m_steps = (grid.step() / dt).round() as usize;
        let g0a1 = &self.law.gamma0 * &self.cl.a1;
        let dpi2: Vec<DMatrix<f64>> = (0..nn * nn)
            .into_par_iter()
            .map(|idx| {
                let i = idx / nn;
                let j = idx % nn;
                let mut acc = DMatrix::zeros(n, n);
                let up_j = j * m_steps;
                let up_i = i * m_steps;
                // ∫₀^{θ_j+h} Ûᵏᵀ(t,ξ_i) R Γ₁(θ_j−t) dt, Ûᵏ jumps at t = ξ_i+h.
                // With the table right-continuous, replacing the jump-node
                // value by the one-sided average makes the trapezoid equal
                // the split-at-the-jump quadrature; an endpoint jump takes
                // the left limit.
                for ti in 0..=up_j {
                    let mut w = if ti == 0 || ti == up_j { 0.5 * dt } else { dt };
                    if up_j == 0 {
                        w = 0.0;
                    }
                    let t = ti as f64 * dt;
                    let mut uh = uhat_tab[ti][i].clone();
                    if ti == up_i && ti > 0 {
                        if up_i < up_j {
                            uh -= &g0a1 * 0.5;
                        } else {
                            uh -= &g0a1;
                        }
                    }
                    acc += uh.transpose() * rw * gamma1_at(grid.node(j) - t) * w;
                }
                // ∫₀^{ξ_i+h} Γ₁ᵀ(ξ_i−t) R Ûᵏ(t,θ_j) dt
                for ti in 0..=up_i {
                    let mut w = if ti == 0 || ti == up_i { 0.5 * dt } else { dt };
                    if up_i == 0 {
                        w = 0.0;
                    }
                    let t = ti as f64 * dt;
                    let mut uh = uhat_tab[ti][j].clone();
                    if ti == up_j && ti > 0 {
                        if up_j < up_i {
                            uh -= &g0a1 * 0.5;
                        } else {
                            uh -= &g0a1;
                        }
                    }
                    acc += gamma1_at(grid.node(i) - t).transpose() * rw * uh * w;
                }
                // ∫₀^{min(ξ,θ)+h} Γ₁ᵀ(ξ_i−t) R Γ₁(θ_j−t) dt
                let up = up_i.min(up_j);
                for ti in 0..=up {
                    let mut w = if ti == 0 || ti == up { 0.5 * dt } else { dt };
                    if up == 0 {
                        w = 0.0;
                    }
                    let t = ti as f64 * dt;
                    acc += gamma1_at(grid.node(i) - t).transpose()
                        * rw
                        * gamma1_at(grid.node(j) - t)
                        * w;
                }
                acc
            })
            .collect();

        Ok((dpi1, dpi2))
    }
}

/// Trapezoid-in-time accumulation of `xᵀQx + u_LᵀRu_L` along the simulated
/// closed loop, truncated at `T` plus an exponential tail estimate fitted
/// to the decaying integrand.
pub fn simulate_cost(
    cl: &ClosedLoopSystem,
    law: &ControlLaw,
    w: &CostWeights,
    phi: &History,
    t_final: f64,
    dt: f64,
) -> Result<f64> {
    let traj = ddesim::integrate_closed_loop(cl, phi, t_final, dt)?;
    let grid = cl.grid();
    let nn = grid.n_nodes();
    let nsteps = traj.n_steps();
    let mut g_vals = Vec::with_capacity(nsteps + 1);
    for j in 0..=nsteps {
        let t = j as f64 * traj.dt();
        let x = traj.at_step(j);
        let mut u = &law.gamma0 * x;
        for k in 0..nn {
            u += grid.weight(k) * (&law.gamma1_samples()[k] * traj.x_at(t + grid.node(k)));
        }
        let g = (x.transpose() * &w.q * x)[(0, 0)] + (u.transpose() * &w.r * &u)[(0, 0)];
        g_vals.push(g);
    }
    let mut total = 0.0;
    for (j, g) in g_vals.iter().enumerate() {
        let wt = if j == 0 || j == nsteps {
            0.5 * traj.dt()
        } else {
            traj.dt()
        };
        total += wt * g;
    }
    // tail estimate from the decay of the integrand over the final half
    let start = g_vals.len() / 2;
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (j, &g) in g_vals.iter().enumerate().skip(start) {
        if g > 1e-280 {
            xs.push(j as f64 * traj.dt());
            ys.push(g.ln());
        }
    }
    if let Some((_, slope)) = linalg::line_fit(&xs, &ys) {
        let g_end = *g_vals.last().unwrap();
        if slope < 0.0 && g_end > 0.0 {
            total += g_end / (-slope);
        }
    }
    Ok(total)
}

/// `V(φ)` for pre-assembled kernels.
pub fn evaluate_functional(k: &BellmanKernels, phi: &History) -> Result<f64> {
    k.evaluate(phi)
}
