//! Fixed-step integration of closed-loop trajectories, the fundamental
//! matrix `K(t)`, the kernel `K̂(t,θ)`, the Cauchy-formula solution and an
//! exponential-decay stability heuristic.
//!
//! Integrator: explicit RK4 with linear interpolation of the stored
//! history at stage times. The step must divide the delay exactly so that
//! derivative discontinuities propagate onto grid nodes. The distributed
//! term is evaluated by composite trapezoid on the θ-grid; where an
//! integrand contains `K` (which vanishes on negative arguments and jumps
//! to `I` at zero) the quadrature is split at the support boundary.

use crate::error::Error;
use crate::linalg;
use crate::sysmodel::{ClosedLoopSystem, History};
use crate::Result;
use nalgebra::{DMatrix, DVector};
use std::io::Write;

/// Default number of integration steps per delay interval (`dt = h/128`).
pub const DEFAULT_STEPS_PER_DELAY: usize = 128;
/// Horizon growth block, in units of `h`.
const BLOCK_DELAYS: f64 = 5.0;
/// Horizon cap, in units of `h`.
const CAP_DELAYS: f64 = 200.0;
/// Absolute cap for slowly decaying systems whose running fit predicts
/// settling within reach (plants with time constants far above the delay).
const HARD_CAP_DELAYS: f64 = 4000.0;
/// `K` is considered settled when the last block stays below this times the peak.
const TAIL_REL: f64 = 1e-6;

/// Validates that `dt` divides `h` and returns the exact steps-per-delay.
pub fn steps_per_delay(h: f64, dt: f64) -> Result<usize> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(Error::domain(format!("dt must be positive, got {dt}")));
    }
    let ratio = h / dt;
    let k = ratio.round();
    if k < 1.0 || (ratio - k).abs() > 1e-9 * ratio.max(1.0) {
        return Err(Error::domain(format!(
            "dt = {dt} does not divide the delay h = {h} exactly"
        )));
    }
    Ok(k as usize)
}

/// Which side of the jump of `K` at argument zero an evaluation sits on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum KZeroSide {
    /// Limit from below: `K(0⁻) = 0`.
    Before,
    /// Value at and after zero: `K(0) = I`.
    After,
}

/// Exponential envelope fit `‖K(t)‖ ≤ γ e^{−βt}` and the stability verdict.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StabilityFit {
    pub gamma: f64,
    pub beta: f64,
    pub verdict: StabilityVerdict,
    /// `‖K(T)‖` at the end of the stored horizon.
    pub k_end: f64,
    /// Peak of `‖K(t)‖` over the horizon.
    pub k_peak: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StabilityVerdict {
    Stable,
    Unstable,
    Inconclusive,
}

impl StabilityFit {
    pub fn is_stable(&self) -> bool {
        self.verdict == StabilityVerdict::Stable
    }
}

/// Fundamental matrix of the closed loop sampled on a uniform time grid:
/// `K(0) = I`, `K(t) = 0` for `t < 0`, and
/// `K̇(t) = K(t)A₀ + K(t−h)A₁ + ∫ K(t+θ)G(θ) dθ`.
#[derive(Debug, Clone)]
pub struct FundamentalMatrix {
    n: usize,
    h: f64,
    dt: f64,
    samples: Vec<DMatrix<f64>>,
    fit: StabilityFit,
}

impl FundamentalMatrix {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    /// Stored horizon `T`.
    pub fn horizon(&self) -> f64 {
        (self.samples.len() - 1) as f64 * self.dt
    }

    pub fn samples(&self) -> &[DMatrix<f64>] {
        &self.samples
    }

    pub fn fit(&self) -> &StabilityFit {
        &self.fit
    }

    /// `K(t)`: zero for `t < 0`, linear interpolation on the stored grid,
    /// zero beyond the horizon (the tail is below `TAIL_REL`·peak for
    /// settled builds).
    pub fn eval(&self, t: f64) -> DMatrix<f64> {
        self.eval_side(t, KZeroSide::After)
    }

    pub(crate) fn eval_side(&self, t: f64, side: KZeroSide) -> DMatrix<f64> {
        if t < 0.0 || (t == 0.0 && side == KZeroSide::Before) {
            return DMatrix::zeros(self.n, self.n);
        }
        let pos = t / self.dt;
        let last = self.samples.len() - 1;
        if pos >= last as f64 {
            return if pos <= last as f64 + 1e-9 {
                self.samples[last].clone()
            } else {
                DMatrix::zeros(self.n, self.n)
            };
        }
        let i0 = pos.floor() as usize;
        let frac = pos - i0 as f64;
        if frac == 0.0 {
            self.samples[i0].clone()
        } else {
            &self.samples[i0] * (1.0 - frac) + &self.samples[i0 + 1] * frac
        }
    }
}

/// Closed-loop trajectory sampled at `dt`, including the resampled history
/// segment on `[−h, 0]`.
#[derive(Debug, Clone)]
pub struct Trajectory {
    n: usize,
    h: f64,
    dt: f64,
    /// Index of the `t = 0` sample.
    hist_len: usize,
    samples: Vec<DVector<f64>>,
}

impl Trajectory {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    /// Final time of the stored trajectory.
    pub fn horizon(&self) -> f64 {
        (self.samples.len() - 1 - self.hist_len) as f64 * self.dt
    }

    /// Number of steps from `t = 0` to the horizon.
    pub fn n_steps(&self) -> usize {
        self.samples.len() - 1 - self.hist_len
    }

    /// Sample at step `j` counted from `t = 0`.
    pub fn at_step(&self, j: usize) -> &DVector<f64> {
        &self.samples[self.hist_len + j]
    }

    /// Linear interpolation over the stored range `[−h, T]` (clamped).
    pub fn x_at(&self, t: f64) -> DVector<f64> {
        let pos = (t + self.h) / self.dt;
        let last = self.samples.len() - 1;
        let pos = pos.clamp(0.0, last as f64);
        let i0 = (pos.floor() as usize).min(last - 1);
        let frac = pos - i0 as f64;
        if frac == 0.0 {
            self.samples[i0].clone()
        } else {
            &self.samples[i0] * (1.0 - frac) + &self.samples[i0 + 1] * frac
        }
    }

    /// `‖x_t‖_h`: max sample norm over `[t−h, t]`.
    pub fn segment_sup_norm(&self, t: f64) -> f64 {
        let j1 = (((t + self.h) / self.dt).round() as usize).min(self.samples.len() - 1);
        let j0 = j1.saturating_sub((self.h / self.dt).round() as usize);
        (j0..=j1).map(|j| self.samples[j].norm()).fold(0.0, f64::max)
    }

    /// CSV export: header `t,x1..xn`, one row per step from `t = 0`.
    pub fn write_csv(&self, mut w: impl Write) -> std::io::Result<()> {
        write!(w, "t")?;
        for i in 1..=self.n {
            write!(w, ",x{i}")?;
        }
        writeln!(w)?;
        for j in 0..=self.n_steps() {
            let t = j as f64 * self.dt;
            write!(w, "{t:.6}")?;
            for v in self.at_step(j).iter() {
                write!(w, ",{v:.12e}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

/// Integrate the closed loop from history `φ` to time `T` with step `dt`.
pub fn integrate_closed_loop(
    cl: &ClosedLoopSystem,
    phi: &History,
    t_final: f64,
    dt: f64,
) -> Result<Trajectory> {
    let h = cl.h();
    if (phi.grid().h() - h).abs() > 1e-12 * h.max(1.0) {
        return Err(Error::dim("history and system delay intervals differ"));
    }
    if phi.dim() != cl.n {
        return Err(Error::dim("history dimension does not match the system"));
    }
    if t_final < h {
        return Err(Error::domain(format!(
            "horizon T = {t_final} must be at least h = {h}"
        )));
    }
    let spd = steps_per_delay(h, dt)?;
    let dt = h / spd as f64;
    let nsteps = (t_final / dt).round() as usize;

    let n = cl.n;
    let mut samples: Vec<DVector<f64>> = Vec::with_capacity(spd + nsteps + 1);
    for i in 0..=spd {
        samples.push(phi.eval(-h + i as f64 * dt));
    }

    let g_nodes = cl.g_samples();
    let grid = cl.grid();
    let nn = grid.n_nodes();

    // history access during a step: stored samples up to index `upto`,
    // then a linear blend toward the stage value at `cur_t`.
    let x_at = |samples: &[DVector<f64>],
                upto: usize,
                cur_t: f64,
                cur: &DVector<f64>,
                s: f64|
     -> DVector<f64> {
        let pos = (s + h) / dt;
        let pos = pos.max(0.0);
        let i0 = pos.floor() as usize;
        if i0 >= upto {
            let t0 = upto as f64 * dt - h;
            if cur_t > t0 + 1e-15 {
                let lam = ((s - t0) / (cur_t - t0)).clamp(0.0, 1.0);
                return &samples[upto] * (1.0 - lam) + cur * lam;
            }
            return cur.clone();
        }
        let frac = pos - i0 as f64;
        if frac == 0.0 {
            samples[i0].clone()
        } else {
            &samples[i0] * (1.0 - frac) + &samples[i0 + 1] * frac
        }
    };

    let rhs = |samples: &[DVector<f64>], upto: usize, t: f64, y: &DVector<f64>| -> DVector<f64> {
        let mut out = &cl.a0 * y;
        out += &cl.a1 * x_at(samples, upto, t, y, t - h);
        let mut dist = DVector::zeros(n);
        for k in 0..nn {
            let xk = x_at(samples, upto, t, y, t + grid.node(k));
            dist += grid.weight(k) * (&g_nodes[k] * xk);
        }
        out += dist;
        out
    };

    for j in 0..nsteps {
        let t = j as f64 * dt;
        let upto = spd + j;
        let y = samples[upto].clone();
        let k1 = rhs(&samples, upto, t, &y);
        let k2 = rhs(&samples, upto, t + 0.5 * dt, &(&y + &k1 * (0.5 * dt)));
        let k3 = rhs(&samples, upto, t + 0.5 * dt, &(&y + &k2 * (0.5 * dt)));
        let k4 = rhs(&samples, upto, t + dt, &(&y + &k3 * dt));
        let next = &y + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0);
        if !linalg::vec_all_finite(&next) {
            return Err(Error::Diverged { t: t + dt });
        }
        samples.push(next);
    }

    Ok(Trajectory {
        n,
        h,
        dt,
        hist_len: spd,
        samples,
    })
}

/// `K(t+θ)` evaluation during the K build: zero for negative arguments,
/// stored interpolation up to `upto`, blend toward the stage value beyond.
/// `side` picks the one-sided value when the argument lands exactly on
/// the jump at zero.
fn k_stage_at(
    samples: &[DMatrix<f64>],
    upto: usize,
    dt: f64,
    cur_t: f64,
    cur: &DMatrix<f64>,
    s: f64,
    n: usize,
    side: KZeroSide,
) -> DMatrix<f64> {
    if s < 0.0 || (s == 0.0 && side == KZeroSide::Before) {
        return DMatrix::zeros(n, n);
    }
    let pos = s / dt;
    let i0 = pos.floor() as usize;
    if i0 >= upto {
        let t0 = upto as f64 * dt;
        if cur_t > t0 + 1e-15 {
            let lam = ((s - t0) / (cur_t - t0)).clamp(0.0, 1.0);
            return &samples[upto] * (1.0 - lam) + cur * lam;
        }
        return cur.clone();
    }
    let frac = pos - i0 as f64;
    if frac == 0.0 {
        samples[i0].clone()
    } else {
        &samples[i0] * (1.0 - frac) + &samples[i0 + 1] * frac
    }
}

fn k_rhs(
    cl: &ClosedLoopSystem,
    samples: &[DMatrix<f64>],
    upto: usize,
    t: f64,
    y: &DMatrix<f64>,
    dt: f64,
    side: KZeroSide,
) -> DMatrix<f64> {
    let n = cl.n;
    let h = cl.h();
    let grid = cl.grid();
    let mut out = y * &cl.a0;
    out += k_stage_at(samples, upto, dt, t, y, t - h, n, side) * &cl.a1;

    // distributed term; for t < h the integrand vanishes below θ = −t,
    // so the quadrature is cut there (K jumps to I at argument 0).
    let mut dist = DMatrix::zeros(n, n);
    if t >= h {
        for k in 0..grid.n_nodes() {
            let kk = k_stage_at(samples, upto, dt, t, y, t + grid.node(k), n, KZeroSide::After);
            dist += kk * (grid.weight(k) * &cl.g_samples()[k]);
        }
    } else if t > 0.0 {
        let lo = -t;
        let mut prev_theta = lo;
        let mut prev_val =
            k_stage_at(samples, upto, dt, t, y, 0.0, n, KZeroSide::After) * cl.g_at(lo);
        for k in 0..grid.n_nodes() {
            let th = grid.node(k);
            if th <= lo + 1e-15 {
                continue;
            }
            let val =
                k_stage_at(samples, upto, dt, t, y, t + th, n, KZeroSide::After) * &cl.g_samples()[k];
            dist += (&prev_val + &val) * (0.5 * (th - prev_theta));
            prev_theta = th;
            prev_val = val;
        }
    }
    out += dist;
    out
}

fn integrate_k(
    cl: &ClosedLoopSystem,
    dt: f64,
    samples: &mut Vec<DMatrix<f64>>,
    add_steps: usize,
) -> Result<()> {
    use KZeroSide::{After, Before};
    for _ in 0..add_steps {
        let upto = samples.len() - 1;
        let t = upto as f64 * dt;
        let y = samples[upto].clone();
        // a stage that samples the delayed term exactly on K's jump takes
        // the one-sided value interior to this step: right limit at the
        // step start, left limit at the step end
        let k1 = k_rhs(cl, samples, upto, t, &y, dt, After);
        let k2 = k_rhs(cl, samples, upto, t + 0.5 * dt, &(&y + &k1 * (0.5 * dt)), dt, After);
        let k3 = k_rhs(cl, samples, upto, t + 0.5 * dt, &(&y + &k2 * (0.5 * dt)), dt, After);
        let k4 = k_rhs(cl, samples, upto, t + dt, &(&y + &k3 * dt), dt, Before);
        let next = &y + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0);
        if !linalg::all_finite(&next) {
            return Err(Error::Diverged { t: t + dt });
        }
        samples.push(next);
    }
    Ok(())
}

fn fit_decay(samples: &[DMatrix<f64>], dt: f64) -> StabilityFit {
    let norms: Vec<f64> = samples.iter().map(linalg::spectral_norm).collect();
    fit_decay_from_norms(&norms, dt)
}

fn fit_decay_from_norms(norms: &[f64], dt: f64) -> StabilityFit {
    let k_end = *norms.last().unwrap();
    let k_peak = norms.iter().fold(0.0_f64, |a, &b| a.max(b));
    let start = norms.len() / 2;
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (j, &nv) in norms.iter().enumerate().skip(start) {
        if nv > 1e-280 {
            xs.push(j as f64 * dt);
            ys.push(nv.ln());
        }
    }
    let (gamma, beta) = match linalg::line_fit(&xs, &ys) {
        Some((a, b)) => (a.exp(), -b),
        None => (f64::NAN, f64::NAN),
    };
    // ‖K(0)‖ = 1 (identity) sets the reference for the settled test.
    let verdict = if beta.is_finite() && beta > 0.0 && k_end < 1e-3 {
        StabilityVerdict::Stable
    } else if k_end > 1.0 && (!beta.is_finite() || beta <= 0.0) {
        StabilityVerdict::Unstable
    } else {
        StabilityVerdict::Inconclusive
    };
    StabilityFit {
        gamma,
        beta,
        verdict,
        k_end,
        k_peak,
    }
}

/// Fundamental matrix over a fixed horizon `T` with step `dt`.
pub fn fundamental_matrix(cl: &ClosedLoopSystem, t_final: f64, dt: f64) -> Result<FundamentalMatrix> {
    let h = cl.h();
    let spd = steps_per_delay(h, dt)?;
    let dt = h / spd as f64;
    if t_final < h {
        return Err(Error::domain("K horizon must be at least h"));
    }
    let nsteps = (t_final / dt).round() as usize;
    let mut samples = vec![DMatrix::identity(cl.n, cl.n)];
    samples.reserve(nsteps);
    integrate_k(cl, dt, &mut samples, nsteps)?;
    let fit = fit_decay(&samples, dt);
    Ok(FundamentalMatrix {
        n: cl.n,
        h,
        dt,
        samples,
        fit,
    })
}

/// Fundamental matrix with an adaptive horizon: grows in blocks of `5h`
/// until `‖K‖` over the last block drops below `1e−6` of its peak, capped
/// at `200h`.
pub fn fundamental_matrix_auto(cl: &ClosedLoopSystem, dt: f64) -> Result<FundamentalMatrix> {
    let h = cl.h();
    let spd = steps_per_delay(h, dt)?;
    let dt = h / spd as f64;
    let block = (BLOCK_DELAYS * spd as f64).round() as usize;
    let cap = (CAP_DELAYS * spd as f64).round() as usize;

    let hard_cap = (HARD_CAP_DELAYS * spd as f64).round() as usize;
    let mut samples = vec![DMatrix::identity(cl.n, cl.n)];
    let mut norms = vec![1.0_f64];
    let mut peak = 1.0_f64;
    loop {
        let before = samples.len();
        integrate_k(cl, dt, &mut samples, block)?;
        let mut block_sup = 0.0_f64;
        for m in &samples[before..] {
            let nv = linalg::spectral_norm(m);
            norms.push(nv);
            block_sup = block_sup.max(nv);
        }
        peak = peak.max(block_sup);
        let steps_done = samples.len() - 1;
        if block_sup < TAIL_REL * peak || peak > 1e9 {
            break;
        }
        if steps_done >= cap {
            // Slow but clearly decaying loops (time constant far above h)
            // cannot settle within the standard cap; keep growing while
            // the running fit predicts settling within the hard cap.
            let fit = fit_decay_from_norms(&norms, dt);
            if !(fit.beta > 0.0) {
                break;
            }
            let t_need = steps_done as f64 * dt
                + (block_sup / (TAIL_REL * peak)).ln().max(0.0) / fit.beta;
            if t_need > hard_cap as f64 * dt || steps_done >= hard_cap {
                break;
            }
        }
    }
    let fit = fit_decay_from_norms(&norms, dt);
    Ok(FundamentalMatrix {
        n: cl.n,
        h,
        dt,
        samples,
        fit,
    })
}

/// Stability decision from the decay fit of `‖K(t)‖ ≤ γ e^{−βt}`.
pub fn is_exponentially_stable(fm: &FundamentalMatrix) -> StabilityFit {
    *fm.fit()
}

/// `K̂(t,θ) = K(t−θ−h)A₁ + ∫_{−h}^{θ} K(t−θ+ξ) G(ξ) dξ`.
///
/// Zero for `t < 0`. Errors when `t` exceeds the stored horizon by more
/// than a step.
pub fn khat_kernel(
    fm: &FundamentalMatrix,
    cl: &ClosedLoopSystem,
    t: f64,
    theta: f64,
) -> Result<DMatrix<f64>> {
    khat_kernel_side(fm, cl, t, theta, KZeroSide::After)
}

pub(crate) fn khat_kernel_side(
    fm: &FundamentalMatrix,
    cl: &ClosedLoopSystem,
    t: f64,
    theta: f64,
    side: KZeroSide,
) -> Result<DMatrix<f64>> {
    let h = cl.h();
    let n = cl.n;
    if t > fm.horizon() + h + fm.dt() {
        return Err(Error::domain(format!(
            "khat: t = {t} beyond the stored K horizon {}",
            fm.horizon()
        )));
    }
    if t < 0.0 {
        return Ok(DMatrix::zeros(n, n));
    }
    let mut out = fm.eval_side(t - theta - h, side) * &cl.a1;

    // ∫_{−h}^{θ} K(t−θ+ξ)G(ξ)dξ; integrand vanishes for ξ < θ − t.
    let lo = (theta - t).max(-h);
    if lo < theta - 1e-15 {
        let grid = cl.grid();
        let mut prev_xi = lo;
        // at the cut the K argument is exactly 0 and the integrand is
        // right-continuous there
        let mut prev_val = fm.eval(t - theta + lo) * cl.g_at(lo);
        for k in 0..grid.n_nodes() {
            let xi = grid.node(k);
            if xi <= lo + 1e-15 {
                continue;
            }
            if xi > theta + 1e-15 {
                break;
            }
            let val = fm.eval(t - theta + xi) * &cl.g_samples()[k];
            out += (&prev_val + &val) * (0.5 * (xi - prev_xi));
            prev_xi = xi;
            prev_val = val;
        }
        // trailing partial cell when θ is off-node
        if theta - prev_xi > 1e-15 {
            let val = fm.eval(t) * cl.g_at(theta);
            out += (&prev_val + &val) * (0.5 * (theta - prev_xi));
        }
    }
    Ok(out)
}

/// Cauchy-formula solution `x(t) = K(t)φ(0) + ∫_{−h}^{0} K̂(t,θ) φ(θ) dθ`.
///
/// The θ-quadrature is split at `θ = t − h` where `K̂(t,·)` jumps (the
/// pointwise-delay term switches on), so the composite trapezoid never
/// straddles the discontinuity.
pub fn cauchy_solution(
    fm: &FundamentalMatrix,
    cl: &ClosedLoopSystem,
    phi: &History,
    t: f64,
) -> Result<DVector<f64>> {
    let h = cl.h();
    if t > fm.horizon() + fm.dt() {
        return Err(Error::domain(format!(
            "cauchy_solution: t = {t} beyond the stored K horizon {}",
            fm.horizon()
        )));
    }
    if t < 0.0 {
        return Ok(phi.eval(t));
    }
    let mut x = fm.eval(t) * phi.phi0();

    let grid = cl.grid();
    let jump = t - h;
    let has_jump = jump > -h + 1e-15 && jump < -1e-15;
    let jump_at_left_edge = t.abs() <= 1e-15;

    // Piecewise trapezoid over the θ-nodes with the jump point inserted
    // twice: the segment left of the jump ends on the K(0⁺)=I side, the
    // segment right of it starts on the K(0⁻)=0 side.
    let tol = 1e-12 * h.max(1.0);
    let mut pts: Vec<(f64, KZeroSide)> = Vec::with_capacity(grid.n_nodes() + 2);
    for k in 0..grid.n_nodes() {
        let th = grid.node(k);
        if has_jump && (th - jump).abs() <= tol {
            pts.push((jump, KZeroSide::After));
            pts.push((jump, KZeroSide::Before));
        } else {
            pts.push((th, KZeroSide::After));
        }
    }
    if has_jump && !pts.iter().any(|p| (p.0 - jump).abs() <= tol) {
        let ins = pts.iter().position(|p| p.0 > jump).unwrap_or(pts.len());
        pts.insert(ins, (jump, KZeroSide::Before));
        pts.insert(ins, (jump, KZeroSide::After));
    }
    if jump_at_left_edge {
        // t = 0: the pointwise term is nonzero only at the single point
        // θ = −h; the quadrature takes the limit from inside the interval
        pts[0].1 = KZeroSide::Before;
    }
    let mut prev: Option<(f64, DVector<f64>)> = None;
    for (th, side) in pts {
        let khat = khat_kernel_side(fm, cl, t, th, side)?;
        let val = khat * phi.eval(th);
        if let Some((pth, pval)) = prev.take() {
            if th > pth {
                x += (&pval + &val) * (0.5 * (th - pth));
            }
        }
        prev = Some((th, val));
    }
    Ok(x)
}
