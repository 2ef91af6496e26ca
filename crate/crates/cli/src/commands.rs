//! Subcommand implementations.

use crate::CommandArgs;
use anyhow::{Context, Result};
use delay_lqr::bellman::{simulate_cost, KernelAssembly};
use delay_lqr::bounds::{lower_bound_pipeline, upper_bound, velocity_bound_check, BoundsInputs};
use delay_lqr::ddesim::{fundamental_matrix_auto, integrate_closed_loop};
use delay_lqr::lyapmat::{lyap_property_residuals, LyapunovMatrix};
use delay_lqr::plantbench::{
    run_tracking, synthesize_tracking_law, PiController, ReferenceProfile, TrackingController,
    HARDWARE_REFERENCE,
};
use delay_lqr::scenario::{Scenario, ScenarioFile};
use delay_lqr::synthesis::{policy_iteration, riccati_residuals, PolicyIterationOptions};
use delay_lqr::sysmodel::{close_loop, History};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use std::fs;
use std::path::Path;

fn load_scenario(args: &CommandArgs) -> Result<Scenario> {
    let text = fs::read_to_string(&args.scenario)
        .map_err(delay_lqr::Error::Io)
        .with_context(|| format!("reading {}", args.scenario.display()))?;
    let mut file: ScenarioFile =
        serde_json::from_str(&text).map_err(|e| delay_lqr::Error::Schema(e.to_string()))?;
    // flag overrides
    let grid = file.grid.get_or_insert_with(Default::default);
    if let Some(dt) = args.dt {
        grid.dt = Some(dt);
    }
    if let Some(nt) = args.n_theta {
        grid.n_theta = nt;
    }
    if let Some(hz) = args.horizon {
        grid.horizon = Some(hz);
    }
    if let Some(tol) = args.tol {
        file.synthesis.get_or_insert_with(Default::default).tol = tol;
    }
    if let Some(mi) = args.max_iter {
        file.synthesis.get_or_insert_with(Default::default).max_iter = mi;
    }
    Ok(Scenario::from_file(file)?)
}

fn ensure_out(args: &CommandArgs) -> Result<&Path> {
    fs::create_dir_all(&args.out)
        .with_context(|| format!("creating {}", args.out.display()))?;
    Ok(args.out.as_path())
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

pub fn simulate(args: &CommandArgs) -> Result<()> {
    let sc = load_scenario(args)?;
    let out = ensure_out(args)?;
    let sys = sc.require_system()?;
    let law = sc.require_law()?;
    let cl = close_loop(sys, law)?;
    let phi = sc.history()?;
    let traj = integrate_closed_loop(&cl, &phi, sc.horizon()?, sc.dt()?)?;
    let path = out.join("trajectory.csv");
    let file = fs::File::create(&path)?;
    traj.write_csv(std::io::BufWriter::new(file))?;
    println!(
        "simulate: {} steps at dt = {} -> {}",
        traj.n_steps(),
        traj.dt(),
        path.display()
    );
    Ok(())
}

#[derive(Serialize)]
struct SynthesisReport {
    status: delay_lqr::synthesis::SynthesisStatus,
    iterations: Vec<delay_lqr::synthesis::IterationRecord>,
    gamma0: Vec<Vec<f64>>,
    pi0: Vec<Vec<f64>>,
    /// law and kernel dumps stored next to this report
    gamma1_csv: String,
    pi1_csv: String,
    pi2_csv: String,
}

pub fn synthesize(args: &CommandArgs) -> Result<()> {
    let sc = load_scenario(args)?;
    let out = ensure_out(args)?;
    let sys = sc.require_system()?;
    let w = sc.require_weights()?;
    let init = sc.require_law()?;
    let spd = (sys.h() / sc.dt()?).round() as usize;
    let opts = PolicyIterationOptions {
        tol: sc.synthesis.tol,
        max_iter: sc.synthesis.max_iter,
        steps_per_delay: spd,
        probe: Some(sc.history()?),
        cost_horizon: sc.grid.horizon,
    };
    let res = policy_iteration(sys, w, init, &opts)?;

    let gamma1_csv = out.join("gamma1.csv");
    write_gamma1_csv(&gamma1_csv, &res.law)?;
    let pi1_csv = out.join("pi1.csv");
    res.kernels
        .write_pi1_csv(std::io::BufWriter::new(fs::File::create(&pi1_csv)?))?;
    let pi2_csv = out.join("pi2.csv");
    res.kernels
        .write_pi2_csv(std::io::BufWriter::new(fs::File::create(&pi2_csv)?))?;

    let report = SynthesisReport {
        status: res.status,
        iterations: res.trace.clone(),
        gamma0: matrix_rows(&res.law.gamma0),
        pi0: matrix_rows(&res.kernels.pi0),
        gamma1_csv: "gamma1.csv".into(),
        pi1_csv: "pi1.csv".into(),
        pi2_csv: "pi2.csv".into(),
    };
    write_json(&out.join("report.json"), &report)?;
    println!(
        "synthesize: {:?} after {} iterations, final law change {:.3e}",
        res.status,
        res.trace.len(),
        res.trace.last().map(|r| r.law_change).unwrap_or(f64::NAN)
    );
    Ok(())
}

fn write_gamma1_csv(path: &Path, law: &delay_lqr::sysmodel::ControlLaw) -> Result<()> {
    use std::io::Write;
    let mut f = std::io::BufWriter::new(fs::File::create(path)?);
    let (r, n) = law.gamma0.shape();
    write!(f, "theta")?;
    for i in 1..=r {
        for j in 1..=n {
            write!(f, ",g{i}{j}")?;
        }
    }
    writeln!(f)?;
    for (k, g) in law.gamma1_samples().iter().enumerate() {
        write!(f, "{:.9}", law.grid().node(k))?;
        for i in 0..r {
            for j in 0..n {
                write!(f, ",{:.12e}", g[(i, j)])?;
            }
        }
        writeln!(f)?;
    }
    Ok(())
}

#[derive(Serialize)]
struct VerifyReport {
    stability: StabilitySummary,
    lyapunov: delay_lqr::lyapmat::LyapResiduals,
    riccati: delay_lqr::synthesis::RiccatiResiduals,
    functional_vs_cost: Vec<FunctionalVsCost>,
    max_relative_mismatch: f64,
    u_csv: String,
}

#[derive(Serialize)]
struct StabilitySummary {
    gamma: f64,
    beta: f64,
    stable: bool,
}

#[derive(Serialize)]
struct FunctionalVsCost {
    history: usize,
    v: f64,
    j: f64,
    relative_error: f64,
}

fn random_history(rng: &mut ChaCha8Rng, n: usize, grid: &delay_lqr::sysmodel::ThetaGrid) -> History {
    let samples: Vec<DVector<f64>> = (0..grid.n_nodes())
        .map(|_| DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0)))
        .collect();
    History::new(samples, grid.clone()).expect("random history is well-formed")
}

pub fn verify(args: &CommandArgs) -> Result<()> {
    let sc = load_scenario(args)?;
    let out = ensure_out(args)?;
    let sys = sc.require_system()?;
    let w = sc.require_weights()?;
    let law = sc.require_law()?;
    let cl = close_loop(sys, law)?;
    let dt = sc.dt()?;
    let fm = fundamental_matrix_auto(&cl, dt)?;
    let fit = fm.fit();
    if !fit.is_stable() {
        return Err(delay_lqr::Error::NotStable(format!(
            "decay fit gamma = {:.3e}, beta = {:.3e}",
            fit.gamma, fit.beta
        ))
        .into());
    }

    // Lyapunov property residuals for M (scenario override or M₁)
    let m = match &sc.verify.m {
        Some(rows) => {
            let flat: Vec<f64> = rows.iter().flatten().copied().collect();
            DMatrix::from_row_slice(rows.len(), rows[0].len(), &flat)
        }
        None => {
            let wk = delay_lqr::bellman::weight_kernels(w, law)?;
            wk.m1
        }
    };
    let lm = LyapunovMatrix::build(&fm, m, sys.h() + 4.0 * dt)?;
    let lyap = lyap_property_residuals(&lm, &cl)?;
    let u_csv = out.join("u_matrix.csv");
    lm.write_csv(std::io::BufWriter::new(fs::File::create(&u_csv)?))?;

    // optimality-equation residuals of the scenario law's kernels
    let kernels = KernelAssembly::new(&cl, law, w, &fm)?.build()?;
    let riccati = riccati_residuals(&kernels, sys, w)?;

    // functional vs simulated cost on seeded random histories
    let mut rng = ChaCha8Rng::seed_from_u64(sc.verify.seed);
    let cost_horizon = (16.0 / fit.beta.max(1e-3)).clamp(5.0 * sys.h(), 400.0 * sys.h());
    let mut rows = Vec::new();
    let mut worst: f64 = 0.0;
    for i in 0..sc.verify.histories {
        let phi = random_history(&mut rng, sys.n, sys.grid());
        let v = kernels.evaluate(&phi)?;
        let j = simulate_cost(&cl, law, w, &phi, cost_horizon, dt)?;
        let rel = (v - j).abs() / j.abs().max(1e-12);
        worst = worst.max(rel);
        rows.push(FunctionalVsCost {
            history: i,
            v,
            j,
            relative_error: rel,
        });
    }

    let report = VerifyReport {
        stability: StabilitySummary {
            gamma: fit.gamma,
            beta: fit.beta,
            stable: fit.is_stable(),
        },
        lyapunov: lyap,
        riccati,
        functional_vs_cost: rows,
        max_relative_mismatch: worst,
        u_csv: "u_matrix.csv".into(),
    };
    write_json(&out.join("verify.json"), &report)?;
    println!(
        "verify: lyap dyn/sym/jump = {:.2e}/{:.2e}/{:.2e}, riccati max = {:.2e}, V-vs-J max rel = {:.2e}",
        report.lyapunov.dyn_res,
        report.lyapunov.sym_res,
        report.lyapunov.jump_res,
        report.riccati.max(),
        worst
    );
    Ok(())
}

pub fn bounds(args: &CommandArgs) -> Result<()> {
    let sc = load_scenario(args)?;
    let out = ensure_out(args)?;
    let bspec = sc
        .file
        .bounds
        .clone()
        .ok_or_else(|| delay_lqr::Error::Schema("scenario has no bounds section".into()))?;

    let report = if let Some(inter) = &bspec.intermediates {
        // published intermediate constants replace the closed loop
        let h = inter
            .h
            .or_else(|| sc.system.as_ref().map(|s| s.h()))
            .ok_or_else(|| {
                delay_lqr::Error::Schema("bounds.intermediates needs h (no system given)".into())
            })?;
        let phi0 = bspec.phi0_norm.unwrap_or(bspec.alpha);
        let inputs = BoundsInputs {
            h,
            alpha: bspec.alpha,
            t_star: bspec.t_star,
            lambda_min_q: bspec.lambda_min_q.unwrap_or(1.0),
            phi0_norm: phi0,
            int_norm_phi: bspec.int_norm_phi.unwrap_or(phi0 * h),
            norm_a0: inter.norm_a0.unwrap_or(f64::NAN),
            norm_a1: inter.norm_a1,
            g: inter.g,
            int_norm_g: inter.int_norm_g.unwrap_or(f64::NAN),
            l_override: inter.l,
            c2_override: inter.c2,
        };
        lower_bound_pipeline(&inputs)
    } else {
        let sys = sc.require_system()?;
        let law = sc.require_law()?;
        let cl = close_loop(sys, law)?;
        let phi = sc.history()?;
        let lam = bspec
            .lambda_min_q
            .or_else(|| sc.weights.as_ref().map(|w| w.lambda_min_q()))
            .ok_or_else(|| {
                delay_lqr::Error::Schema("bounds needs lambda_min_q or a weights section".into())
            })?;
        let inputs = BoundsInputs::from_closed_loop(&cl, &phi, bspec.alpha, bspec.t_star, lam);
        let mut rep = lower_bound_pipeline(&inputs);
        // C₁ needs the kernels; only available with weights
        if let Some(w) = &sc.weights {
            let fm = fundamental_matrix_auto(&cl, sc.dt()?)?;
            if fm.fit().is_stable() {
                let kernels = KernelAssembly::new(&cl, law, w, &fm)?.build()?;
                rep = rep.with_upper(upper_bound(&kernels));
                // velocity bound on the scenario history's trajectory
                let traj = integrate_closed_loop(&cl, &phi, sc.horizon()?, sc.dt()?)?;
                let vel = velocity_bound_check(&cl, &[traj]);
                println!(
                    "velocity bound: max ratio {:.4} vs C2 = {:.4} (ok: {})",
                    vel.max_ratio, vel.c2, vel.ok
                );
            }
        }
        rep
    };

    if !report.delta_within_t_star {
        println!(
            "warning: delta = {:.3e} exceeds t* = {:.3e}; the cubic bound is not valid for this (alpha, t*)",
            report.delta, report.t_star
        );
    }
    print!("{report}");
    write_json(&out.join("bounds.json"), &report)?;
    Ok(())
}

#[derive(Serialize)]
struct BenchReport {
    optimal: delay_lqr::plantbench::TrackingSummary,
    pi: delay_lqr::plantbench::TrackingSummary,
    /// published hardware-run figures, context only
    hardware_reference: delay_lqr::plantbench::HardwareReference,
    optimal_gamma0: f64,
    continuous_ref: bool,
}

pub fn bench(args: &CommandArgs) -> Result<()> {
    let sc = load_scenario(args)?;
    let out = ensure_out(args)?;
    let bspec = sc.file.benchmark.clone().unwrap_or_default();
    let plant = bspec.plant_model()?;
    let profile = if args.continuous_ref {
        ReferenceProfile::TrackingContinuous
    } else {
        ReferenceProfile::Tracking
    };

    let law = synthesize_tracking_law(
        &plant,
        bspec.q,
        bspec.r,
        bspec.n_theta,
        bspec.steps_per_delay,
        sc.synthesis.tol.max(1e-6),
        sc.synthesis.max_iter,
    )?;
    let optimal = TrackingController::Optimal { law: law.clone() };
    let pi = TrackingController::Pi(match &bspec.pi {
        Some(p) => PiController::new(p.kp, p.ki, bspec.dt),
        None => PiController::hardware_tuned(bspec.dt),
    });

    let res_opt = run_tracking(&plant, &optimal, profile, bspec.t_end, bspec.dt, bspec.r_load_ohm)?;
    let res_pi = run_tracking(&plant, &pi, profile, bspec.t_end, bspec.dt, bspec.r_load_ohm)?;

    res_opt.write_csv(std::io::BufWriter::new(fs::File::create(out.join("optimal.csv"))?))?;
    res_pi.write_csv(std::io::BufWriter::new(fs::File::create(out.join("pi.csv"))?))?;

    let report = BenchReport {
        optimal: res_opt.summary.clone(),
        pi: res_pi.summary.clone(),
        hardware_reference: HARDWARE_REFERENCE,
        optimal_gamma0: law.gamma0[(0, 0)],
        continuous_ref: args.continuous_ref,
    };
    write_json(&out.join("summary.json"), &report)?;
    println!(
        "bench: IAE optimal = {:.2}, PI = {:.2} (hardware runs for context: {:.1} / {:.2}); energy {:.2} / {:.2} Wh",
        report.optimal.iae,
        report.pi.iae,
        HARDWARE_REFERENCE.iae_optimal,
        HARDWARE_REFERENCE.iae_pi,
        report.optimal.energy_wh,
        report.pi.energy_wh
    );
    if report.optimal.iae > report.pi.iae {
        println!("warning: simulated optimal IAE exceeds PI IAE in this configuration");
    }
    Ok(())
}
