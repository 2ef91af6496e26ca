//! JSON scenario schema: one file drives simulation, synthesis,
//! verification, bounds and the plant benchmark.
//!
//! Matrices are row-major arrays of arrays. Matrix functions of θ carry a
//! `kind` tag: `zero`, `constant` (one matrix) or `samples` (one matrix
//! per θ-grid node, from −h to 0). Everything is validated before any
//! computation; violations surface as [`Error::Schema`].

use crate::error::Error;
use crate::plantbench::PlantModel;
use crate::sysmodel::{ControlLaw, CostWeights, SystemModel, ThetaGrid};
use crate::Result;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use std::path::Path;

pub const SCHEMA_VERSION: u32 = 1;

fn matrix_from_rows(name: &str, rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    if rows.is_empty() {
        return Err(Error::Schema(format!("{name}: empty matrix")));
    }
    let ncols = rows[0].len();
    if ncols == 0 || rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::Schema(format!("{name}: ragged or empty rows")));
    }
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    if flat.iter().any(|v| !v.is_finite()) {
        return Err(Error::Schema(format!("{name}: non-finite entry")));
    }
    Ok(DMatrix::from_row_slice(rows.len(), ncols, &flat))
}

/// Matrix function of θ on the shared grid.
#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MatrixFnSpec {
    Zero,
    Constant { value: Vec<Vec<f64>> },
    Samples { samples: Vec<Vec<Vec<f64>>> },
}

impl MatrixFnSpec {
    fn build(&self, name: &str, rows: usize, cols: usize, grid: &ThetaGrid) -> Result<Vec<DMatrix<f64>>> {
        let nn = grid.n_nodes();
        match self {
            MatrixFnSpec::Zero => Ok(vec![DMatrix::zeros(rows, cols); nn]),
            MatrixFnSpec::Constant { value } => {
                let m = matrix_from_rows(name, value)?;
                if m.shape() != (rows, cols) {
                    return Err(Error::Schema(format!("{name}: expected {rows}×{cols}")));
                }
                Ok(vec![m; nn])
            }
            MatrixFnSpec::Samples { samples } => {
                if samples.len() != nn {
                    return Err(Error::Schema(format!(
                        "{name}: {} samples given, grid has {} nodes",
                        samples.len(),
                        nn
                    )));
                }
                samples
                    .iter()
                    .enumerate()
                    .map(|(i, s)| {
                        let m = matrix_from_rows(&format!("{name}[{i}]"), s)?;
                        if m.shape() != (rows, cols) {
                            return Err(Error::Schema(format!(
                                "{name}[{i}]: expected {rows}×{cols}"
                            )));
                        }
                        Ok(m)
                    })
                    .collect()
            }
        }
    }
}

#[derive(Debug, Clone, Deserialize, Serialize)]
pub struct SystemSpec {
    pub n: usize,
    pub r: usize,
    pub a: Vec<Vec<f64>>,
    pub b: Vec<Vec<f64>>,
    pub d: Vec<Vec<f64>>,
    pub h: f64,
    #[serde(default)]
    pub e: Option<MatrixFnSpec>,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
pub struct WeightsSpec {
    pub q: Vec<Vec<f64>>,
    pub r: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
pub struct LawSpec {
    pub gamma0: Vec<Vec<f64>>,
    #[serde(default)]
    pub gamma1: Option<MatrixFnSpec>,
}

/// Initial function for simulation, probing and verification.
#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum HistorySpec {
    /// constant vector on `[−h, 0]`
    Constant { value: Vec<f64> },
    /// one n-vector per θ-grid node, from −h to 0
    Samples { samples: Vec<Vec<f64>> },
}

#[derive(Debug, Clone, Deserialize, Serialize)]
pub struct GridSpec {
    #[serde(default = "default_n_theta")]
    pub n_theta: usize,
    /// integration step in seconds; default `h / 128`
    #[serde(default)]
    pub dt: Option<f64>,
    /// trajectory horizon in seconds; default `10 h`
    #[serde(default)]
    pub horizon: Option<f64>,
}

fn default_n_theta() -> usize {
    64
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            n_theta: default_n_theta(),
            dt: None,
            horizon: None,
        }
    }
}

#[derive(Debug, Clone, Deserialize, Serialize)]
pub struct SynthesisSpec {
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
}

fn default_tol() -> f64 {
    1e-5
}
fn default_max_iter() -> usize {
    30
}

impl Default for SynthesisSpec {
    fn default() -> Self {
        SynthesisSpec {
            tol: default_tol(),
            max_iter: default_max_iter(),
        }
    }
}

/// Published intermediate constants replacing closed-loop computation in
/// the bounds pipeline.
#[derive(Debug, Clone, Deserialize, Serialize)]
pub struct BoundsIntermediatesSpec {
    pub norm_a1: f64,
    pub g: f64,
    #[serde(default)]
    pub l: Option<f64>,
    #[serde(default)]
    pub c2: Option<f64>,
    #[serde(default)]
    pub norm_a0: Option<f64>,
    #[serde(default)]
    pub int_norm_g: Option<f64>,
    #[serde(default)]
    pub h: Option<f64>,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
pub struct BoundsSpec {
    pub alpha: f64,
    pub t_star: f64,
    #[serde(default)]
    pub phi0_norm: Option<f64>,
    #[serde(default)]
    pub int_norm_phi: Option<f64>,
    #[serde(default)]
    pub lambda_min_q: Option<f64>,
    #[serde(default)]
    pub intermediates: Option<BoundsIntermediatesSpec>,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
pub struct PlantSpec {
    pub a0: f64,
    pub a1: f64,
    pub b: f64,
    pub h: f64,
    #[serde(default)]
    pub u_min: Option<f64>,
    #[serde(default)]
    pub u_max: Option<f64>,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
pub struct PiSpec {
    pub kp: f64,
    pub ki: f64,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
pub struct BenchmarkSpec {
    #[serde(default)]
    pub plant: Option<PlantSpec>,
    #[serde(default)]
    pub pi: Option<PiSpec>,
    #[serde(default = "default_bench_q")]
    pub q: f64,
    #[serde(default = "default_bench_r")]
    pub r: f64,
    #[serde(default = "default_bench_t_end")]
    pub t_end: f64,
    #[serde(default = "default_bench_dt")]
    pub dt: f64,
    #[serde(default = "default_r_load")]
    pub r_load_ohm: f64,
    #[serde(default = "default_bench_n_theta")]
    pub n_theta: usize,
    #[serde(default = "default_bench_spd")]
    pub steps_per_delay: usize,
}

fn default_bench_q() -> f64 {
    15.0
}
fn default_bench_r() -> f64 {
    1.0
}
fn default_bench_t_end() -> f64 {
    1800.0
}
fn default_bench_dt() -> f64 {
    0.5
}
fn default_r_load() -> f64 {
    190.0
}
fn default_bench_n_theta() -> usize {
    32
}
fn default_bench_spd() -> usize {
    64
}

impl BenchmarkSpec {
    pub fn plant_model(&self) -> Result<PlantModel> {
        let plant = match &self.plant {
            None => PlantModel::identified(),
            Some(p) => PlantModel {
                a0: p.a0,
                a1: p.a1,
                b: p.b,
                h: p.h,
                u_min: p.u_min.unwrap_or(0.0),
                u_max: p.u_max.unwrap_or(120.0),
            },
        };
        plant.validate()?;
        Ok(plant)
    }
}

impl Default for BenchmarkSpec {
    fn default() -> Self {
        BenchmarkSpec {
            plant: None,
            pi: None,
            q: default_bench_q(),
            r: default_bench_r(),
            t_end: default_bench_t_end(),
            dt: default_bench_dt(),
            r_load_ohm: default_r_load(),
            n_theta: default_bench_n_theta(),
            steps_per_delay: default_bench_spd(),
        }
    }
}

#[derive(Debug, Clone, Deserialize, Serialize)]
pub struct VerifySpec {
    /// Lyapunov weight for the property residuals; defaults to
    /// `M₁ = Q + Γ₀ᵀRΓ₀` of the scenario law.
    #[serde(default)]
    pub m: Option<Vec<Vec<f64>>>,
    #[serde(default = "default_histories")]
    pub histories: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_histories() -> usize {
    5
}

impl Default for VerifySpec {
    fn default() -> Self {
        VerifySpec {
            m: None,
            histories: default_histories(),
            seed: 0,
        }
    }
}

/// Raw scenario document.
#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub version: u32,
    #[serde(default)]
    pub system: Option<SystemSpec>,
    #[serde(default)]
    pub weights: Option<WeightsSpec>,
    #[serde(default)]
    pub law: Option<LawSpec>,
    #[serde(default)]
    pub history: Option<HistorySpec>,
    #[serde(default)]
    pub grid: Option<GridSpec>,
    #[serde(default)]
    pub synthesis: Option<SynthesisSpec>,
    #[serde(default)]
    pub bounds: Option<BoundsSpec>,
    #[serde(default)]
    pub benchmark: Option<BenchmarkSpec>,
    #[serde(default)]
    pub verify: Option<VerifySpec>,
}

/// Validated scenario with constructed model objects.
#[derive(Debug)]
pub struct Scenario {
    pub file: ScenarioFile,
    pub system: Option<SystemModel>,
    pub weights: Option<CostWeights>,
    pub law: Option<ControlLaw>,
    pub grid: GridSpec,
    pub synthesis: SynthesisSpec,
    pub verify: VerifySpec,
}

impl Scenario {
    pub fn from_str(text: &str) -> Result<Self> {
        let file: ScenarioFile =
            serde_json::from_str(text).map_err(|e| Error::Schema(e.to_string()))?;
        Scenario::build(file)
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Scenario::from_str(&text)
    }

    /// Build from an already-parsed document (after flag overrides).
    pub fn from_file(file: ScenarioFile) -> Result<Self> {
        Scenario::build(file)
    }

    /// Scenario history: explicit section, or the constant all-ones
    /// function when absent.
    pub fn history(&self) -> Result<crate::sysmodel::History> {
        let sys = self.require_system()?;
        let grid = sys.grid().clone();
        match &self.file.history {
            None => Ok(crate::sysmodel::History::constant(
                nalgebra::DVector::from_element(sys.n, 1.0),
                grid,
            )),
            Some(HistorySpec::Constant { value }) => {
                if value.len() != sys.n {
                    return Err(Error::Schema("history.value must have length n".into()));
                }
                Ok(crate::sysmodel::History::constant(
                    nalgebra::DVector::from_vec(value.clone()),
                    grid,
                ))
            }
            Some(HistorySpec::Samples { samples }) => {
                if samples.len() != grid.n_nodes() {
                    return Err(Error::Schema(format!(
                        "history.samples needs {} nodes",
                        grid.n_nodes()
                    )));
                }
                let vecs = samples
                    .iter()
                    .map(|s| {
                        if s.len() != sys.n {
                            Err(Error::Schema("history sample has wrong dimension".into()))
                        } else {
                            Ok(nalgebra::DVector::from_vec(s.clone()))
                        }
                    })
                    .collect::<Result<Vec<_>>>()?;
                crate::sysmodel::History::new(vecs, grid)
                    .map_err(|e| Error::Schema(e.to_string()))
            }
        }
    }

    fn build(file: ScenarioFile) -> Result<Self> {
        if file.version != SCHEMA_VERSION {
            return Err(Error::Schema(format!(
                "unsupported schema version {} (expected {SCHEMA_VERSION})",
                file.version
            )));
        }
        let grid_spec = file.grid.clone().unwrap_or_default();

        let system = match &file.system {
            None => None,
            Some(s) => {
                if s.h <= 0.0 || !s.h.is_finite() {
                    return Err(Error::Schema("system.h must be positive".into()));
                }
                if grid_spec.n_theta == 0 {
                    return Err(Error::Schema("grid.n_theta must be positive".into()));
                }
                let grid = ThetaGrid::new(s.h, grid_spec.n_theta)?;
                let a = matrix_from_rows("system.a", &s.a)?;
                let b = matrix_from_rows("system.b", &s.b)?;
                let d = matrix_from_rows("system.d", &s.d)?;
                if a.shape() != (s.n, s.n) {
                    return Err(Error::Schema("system.a must be n×n".into()));
                }
                if b.shape() != (s.n, s.n) {
                    return Err(Error::Schema("system.b must be n×n".into()));
                }
                if d.shape() != (s.n, s.r) {
                    return Err(Error::Schema("system.d must be n×r".into()));
                }
                let e = s
                    .e
                    .clone()
                    .unwrap_or(MatrixFnSpec::Zero)
                    .build("system.e", s.n, s.n, &grid)?;
                Some(
                    SystemModel::new(a, b, d, grid, e)
                        .map_err(|e| Error::Schema(e.to_string()))?,
                )
            }
        };

        let weights = match &file.weights {
            None => None,
            Some(w) => {
                let q = matrix_from_rows("weights.q", &w.q)?;
                let r = matrix_from_rows("weights.r", &w.r)?;
                Some(CostWeights::new(q, r).map_err(|e| Error::Schema(e.to_string()))?)
            }
        };

        let law = match (&file.law, &system) {
            (Some(_), None) => {
                return Err(Error::Schema("law given without a system".into()));
            }
            (None, Some(sys)) => Some(ControlLaw::zero(sys.r, sys.n, sys.grid().clone())),
            (Some(l), Some(sys)) => {
                let gamma0 = matrix_from_rows("law.gamma0", &l.gamma0)?;
                if gamma0.shape() != (sys.r, sys.n) {
                    return Err(Error::Schema("law.gamma0 must be r×n".into()));
                }
                let gamma1 = l
                    .gamma1
                    .clone()
                    .unwrap_or(MatrixFnSpec::Zero)
                    .build("law.gamma1", sys.r, sys.n, sys.grid())?;
                Some(
                    ControlLaw::new(gamma0, gamma1, sys.grid().clone())
                        .map_err(|e| Error::Schema(e.to_string()))?,
                )
            }
            (None, None) => None,
        };

        // weight/system consistency
        if let (Some(sys), Some(w)) = (&system, &weights) {
            if w.q.nrows() != sys.n || w.r.nrows() != sys.r {
                return Err(Error::Schema(
                    "weights dimensions do not match the system".into(),
                ));
            }
        }

        // dt must divide h when both are present
        if let (Some(sys), Some(dt)) = (&system, grid_spec.dt) {
            crate::ddesim::steps_per_delay(sys.h(), dt)
                .map_err(|e| Error::Schema(e.to_string()))?;
        }

        Ok(Scenario {
            synthesis: file.synthesis.clone().unwrap_or_default(),
            verify: file.verify.clone().unwrap_or_default(),
            grid: grid_spec,
            file,
            system,
            weights,
            law,
        })
    }

    pub fn require_system(&self) -> Result<&SystemModel> {
        self.system
            .as_ref()
            .ok_or_else(|| Error::Schema("scenario has no system section".into()))
    }

    pub fn require_weights(&self) -> Result<&CostWeights> {
        self.weights
            .as_ref()
            .ok_or_else(|| Error::Schema("scenario has no weights section".into()))
    }

    pub fn require_law(&self) -> Result<&ControlLaw> {
        self.law
            .as_ref()
            .ok_or_else(|| Error::Schema("scenario has no system/law sections".into()))
    }

    /// Integration step: explicit `grid.dt` or `h / 128`.
    pub fn dt(&self) -> Result<f64> {
        let sys = self.require_system()?;
        Ok(self
            .grid
            .dt
            .unwrap_or(sys.h() / crate::ddesim::DEFAULT_STEPS_PER_DELAY as f64))
    }

    /// Trajectory horizon: explicit `grid.horizon` or `10 h`.
    pub fn horizon(&self) -> Result<f64> {
        let sys = self.require_system()?;
        Ok(self.grid.horizon.unwrap_or(10.0 * sys.h()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal_json() -> &'static str {
        r#"{
            "version": 1,
            "system": {
                "n": 1, "r": 1,
                "a": [[-1.0]], "b": [[0.0]], "d": [[1.0]],
                "h": 1.0
            },
            "weights": {"q": [[1.0]], "r": [[1.0]]},
            "grid": {"n_theta": 8}
        }"#
    }

    #[test]
    fn minimal_scenario_builds() {
        let sc = Scenario::from_str(minimal_json()).unwrap();
        let sys = sc.require_system().unwrap();
        assert_eq!(sys.n, 1);
        // default zero law materializes
        let law = sc.require_law().unwrap();
        assert_eq!(law.gamma0[(0, 0)], 0.0);
        assert_eq!(sc.dt().unwrap(), 1.0 / 128.0);
    }

    #[test]
    fn malformed_json_is_schema_error() {
        let err = Scenario::from_str("{ not json").unwrap_err();
        assert!(matches!(err, Error::Schema(_)));
    }

    #[test]
    fn wrong_version_rejected() {
        let err = Scenario::from_str(r#"{"version": 99}"#).unwrap_err();
        assert!(matches!(err, Error::Schema(_)));
    }

    #[test]
    fn ragged_matrix_rejected() {
        let bad = r#"{
            "version": 1,
            "system": {"n": 2, "r": 1, "a": [[1.0], [2.0, 3.0]],
                       "b": [[0,0],[0,0]], "d": [[1],[0]], "h": 1.0}
        }"#;
        assert!(matches!(
            Scenario::from_str(bad).unwrap_err(),
            Error::Schema(_)
        ));
    }

    #[test]
    fn indefinite_weights_rejected() {
        let bad = r#"{
            "version": 1,
            "system": {"n": 1, "r": 1, "a": [[-1.0]], "b": [[0.0]],
                       "d": [[1.0]], "h": 1.0},
            "weights": {"q": [[-1.0]], "r": [[1.0]]}
        }"#;
        assert!(matches!(
            Scenario::from_str(bad).unwrap_err(),
            Error::Schema(_)
        ));
    }

    #[test]
    fn unknown_fields_rejected() {
        let bad = r#"{"version": 1, "bogus": 3}"#;
        assert!(matches!(
            Scenario::from_str(bad).unwrap_err(),
            Error::Schema(_)
        ));
    }
}
