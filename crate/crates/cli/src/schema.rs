//! Scenario file schema: TOML parsing, validation, and conversion into the
//! core scenario definition.
//!
//! A scenario file fully determines a run: the plant, the safety constraints
//! with their gain lists, the admissible input set, the nominal controller,
//! the filter configuration, the simulation grid, and optional exogenous
//! inputs and raster defaults. Files round-trip: parsing, re-serializing,
//! and parsing again yields an identical structure, so the copy embedded in
//! a run manifest is a faithful record of the resolved configuration.

use lticbf::geometry::{Halfspace, InputSet};
use lticbf::hocbf::{relative_degree, AffineSafety, LtiSystem};
use lticbf::sim::{
    augment_with_integrator, ExogenousInput, FilterPolicy, NominalController, ScenarioDef,
};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::Path;

/// Error raised while reading, parsing, or resolving a scenario file.
///
/// These are configuration errors: the run has produced no outputs yet and
/// the process exits with status 2.
#[derive(Debug)]
pub struct SchemaError(pub String);

impl std::fmt::Display for SchemaError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl std::error::Error for SchemaError {}

impl From<lticbf::Error> for SchemaError {
    fn from(e: lticbf::Error) -> Self {
        SchemaError(e.to_string())
    }
}

fn err<T>(msg: impl Into<String>) -> Result<T, SchemaError> {
    Err(SchemaError(msg.into()))
}

/// Top-level scenario file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    /// Human-readable scenario name, echoed into the manifest.
    pub name: String,
    /// Free-text description of where the scenario comes from.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
    /// Names of values that were reconstructed or tuned rather than taken
    /// from a primary source. Purely informational.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub reconstructed: Vec<String>,
    /// Optional gain lists shared by all safety constraints of equal
    /// relative degree. Keys are relative degrees rendered as strings.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gains_by_degree: Option<BTreeMap<String, Vec<f64>>>,
    pub system: SystemSection,
    #[serde(rename = "safety")]
    pub safeties: Vec<SafetySection>,
    pub input: InputSection,
    pub controller: ControllerSection,
    #[serde(default)]
    pub filter: FilterSection,
    pub simulation: SimulationSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exogenous: Option<ExogenousSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raster: Option<RasterSection>,
}

/// Plant description: either explicit `a`/`b` matrices or a strictly proper
/// plant to wrap with output integrators.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub augment: Option<AugmentSection>,
}

/// Strictly proper plant `(A_p, B_p, C_p, D_p)` to be augmented with output
/// tracking integrators; command channels enter through the integrators.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentSection {
    pub a_p: Vec<Vec<f64>>,
    pub b_p: Vec<Vec<f64>>,
    pub c_p: Vec<Vec<f64>>,
    pub d_p: Vec<Vec<f64>>,
}

/// One affine safety constraint `normal · x ≤ offset` kept invariant, with
/// the gain list for its constraint chain (one gain per relative degree).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SafetySection {
    pub normal: Vec<f64>,
    pub offset: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gains: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
}

/// Admissible input set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InputSection {
    /// `"all"`, `"box"`, or `"polyhedron"`.
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dim: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lo: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hi: Option<Vec<f64>>,
    /// Polyhedron rows `[n_1, …, n_m, offset]` meaning `n · u ≤ offset`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rows: Option<Vec<Vec<f64>>>,
}

/// Nominal controller: exactly one variant must be present.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControllerSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub affine: Option<AffineControllerSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub waypoint_pd: Option<WaypointPdSection>,
}

/// State feedback `u = -K (x - x_ref)` on the physical state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AffineControllerSection {
    pub k: Vec<Vec<f64>>,
    pub x_ref: Vec<f64>,
}

/// Waypoint PD tracker: `u = -K_P (p - p_ref) - K_D v` where `p` and `v`
/// are the listed position and velocity coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WaypointPdSection {
    pub k_p: ScalarOrMatrix,
    pub k_d: ScalarOrMatrix,
    pub waypoints: Vec<Waypoint>,
    pub position: Vec<usize>,
    pub velocity: Vec<usize>,
}

/// A gain given either as a scalar (meaning `scalar · I`) or a full matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ScalarOrMatrix {
    Scalar(f64),
    Matrix(Vec<Vec<f64>>),
}

impl ScalarOrMatrix {
    fn to_matrix(&self, dim: usize, what: &str) -> Result<DMatrix<f64>, SchemaError> {
        match self {
            ScalarOrMatrix::Scalar(s) => Ok(DMatrix::identity(dim, dim) * *s),
            ScalarOrMatrix::Matrix(rows) => matrix(what, rows),
        }
    }
}

/// One waypoint: target active from `time` until the next waypoint's time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Waypoint {
    pub time: f64,
    pub target: Vec<f64>,
}

/// Safety filter configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilterSection {
    /// `"auto"`, `"force-qp"`, or `"force-explicit"`.
    #[serde(default = "default_policy")]
    pub policy: String,
    /// Optional quadratic weight; identity when omitted and an explicit law
    /// needs one to be constructed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weight: Option<Vec<Vec<f64>>>,
    /// Conditioning target for constructed weights.
    #[serde(default = "default_tau")]
    pub tau: f64,
}

fn default_policy() -> String {
    "auto".to_string()
}

fn default_tau() -> f64 {
    1.0
}

impl Default for FilterSection {
    fn default() -> Self {
        FilterSection {
            policy: default_policy(),
            weight: None,
            tau: default_tau(),
        }
    }
}

/// Simulation grid and initial condition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationSection {
    pub x0: Vec<f64>,
    pub dt: f64,
    pub horizon: f64,
    #[serde(default)]
    pub allow_unsafe_start: bool,
    /// Per-coordinate box used when sampling safe initial states.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sample_window: Option<Vec<(f64, f64)>>,
}

/// Piecewise-constant exogenous input entering through `channel`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExogenousSection {
    /// `n × q` channel matrix. May be omitted for augmented systems, where
    /// the command channel into the integrators is implied.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub channel: Option<Vec<Vec<f64>>>,
    /// Switching schedule; each value holds from its time until the next.
    pub switch: Vec<Switch>,
}

/// One exogenous switch point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Switch {
    pub time: f64,
    pub value: Vec<f64>,
}

/// Default raster configuration for the `raster` command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RasterSection {
    /// `[x_min, x_max, y_min, y_max]`.
    pub window: Vec<f64>,
    #[serde(default = "default_res")]
    pub res: usize,
    /// Physical state coordinates spanned by the raster plane; `[0, 1]`
    /// when omitted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub axes: Option<Vec<usize>>,
    /// Values for the remaining physical coordinates; zeros when omitted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fixed: Option<Vec<f64>>,
}

fn default_res() -> usize {
    200
}

/// Raster configuration after defaults and command-line overrides.
#[derive(Debug, Clone)]
pub struct RasterConfig {
    pub window: ((f64, f64), (f64, f64)),
    pub res: (usize, usize),
    pub axes: (usize, usize),
    pub fixed: DVector<f64>,
}

/// A scenario file resolved into core types, ready to build.
#[derive(Debug)]
pub struct ResolvedScenario {
    pub def: ScenarioDef,
    pub raster: Option<RasterConfig>,
}

/// Reads and parses a scenario file.
pub fn load(path: &Path) -> Result<ScenarioFile, SchemaError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| SchemaError(format!("cannot read {}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| SchemaError(format!("{}: {e}", path.display())))
}

fn matrix(what: &str, rows: &[Vec<f64>]) -> Result<DMatrix<f64>, SchemaError> {
    if rows.is_empty() {
        return err(format!("{what}: matrix must have at least one row"));
    }
    let cols = rows[0].len();
    if cols == 0 || rows.iter().any(|r| r.len() != cols) {
        return err(format!("{what}: matrix rows must be non-empty and equal length"));
    }
    Ok(DMatrix::from_fn(rows.len(), cols, |i, j| rows[i][j]))
}

fn vector(v: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(v)
}

impl ScenarioFile {
    /// Validates the file and converts it into core scenario types.
    pub fn resolve(&self) -> Result<ResolvedScenario, SchemaError> {
        let (system, implied_channel) = self.resolve_system()?;
        let n = system.n();
        let m = system.m();

        let safeties = self.resolve_safeties(&system)?;
        let input_set = self.resolve_input(m)?;
        let controller = self.resolve_controller(n, m)?;
        let policy = match self.filter.policy.as_str() {
            "auto" => FilterPolicy::Auto,
            "force-qp" => FilterPolicy::ForceQp,
            "force-explicit" => FilterPolicy::ForceExplicit,
            other => return err(format!("filter.policy: unknown policy {other:?}")),
        };
        let weight = match &self.filter.weight {
            Some(rows) => Some(matrix("filter.weight", rows)?),
            None => None,
        };
        if !(self.filter.tau.is_finite() && self.filter.tau > 0.0) {
            return err("filter.tau must be finite and positive");
        }

        let exogenous = self.resolve_exogenous(n, implied_channel)?;

        let sim = &self.simulation;
        if sim.x0.len() != n {
            return err(format!(
                "simulation.x0 has {} entries but the state dimension is {n}",
                sim.x0.len()
            ));
        }
        if let Some(window) = &sim.sample_window {
            if window.len() != n {
                return err(format!(
                    "simulation.sample_window has {} entries but the state dimension is {n}",
                    window.len()
                ));
            }
        }

        let def = ScenarioDef {
            system,
            safeties,
            input_set,
            controller,
            policy,
            weight,
            tau: self.filter.tau,
            x0: vector(&sim.x0),
            dt: sim.dt,
            horizon: sim.horizon,
            exogenous,
            allow_unsafe_start: sim.allow_unsafe_start,
            sample_window: sim.sample_window.clone(),
        };

        let raster = match &self.raster {
            Some(r) => Some(resolve_raster(r, n)?),
            None => None,
        };

        Ok(ResolvedScenario { def, raster })
    }

    fn resolve_system(&self) -> Result<(LtiSystem, Option<DMatrix<f64>>), SchemaError> {
        match (&self.system.a, &self.system.b, &self.system.augment) {
            (Some(a), Some(b), None) => {
                let a = matrix("system.a", a)?;
                let b = matrix("system.b", b)?;
                Ok((LtiSystem::new(a, b)?, None))
            }
            (None, None, Some(aug)) => {
                let a_p = matrix("system.augment.a_p", &aug.a_p)?;
                let b_p = matrix("system.augment.b_p", &aug.b_p)?;
                let c_p = matrix("system.augment.c_p", &aug.c_p)?;
                let d_p = matrix("system.augment.d_p", &aug.d_p)?;
                let (sys, channel) = augment_with_integrator(&a_p, &b_p, &c_p, &d_p)?;
                Ok((sys, Some(channel)))
            }
            _ => err("system: provide either `a` and `b`, or `augment`, not both"),
        }
    }

    fn resolve_safeties(&self, system: &LtiSystem) -> Result<Vec<AffineSafety>, SchemaError> {
        if self.safeties.is_empty() {
            return err("at least one [[safety]] section is required");
        }
        let mut out = Vec::with_capacity(self.safeties.len());
        for (i, s) in self.safeties.iter().enumerate() {
            let normal = vector(&s.normal);
            let gains = match &s.gains {
                Some(g) => g.clone(),
                None => {
                    let degree = relative_degree(system, &normal, i)?;
                    let table = self.gains_by_degree.as_ref().ok_or_else(|| {
                        SchemaError(format!(
                            "safety[{i}]: no gains given and no gains_by_degree table"
                        ))
                    })?;
                    table
                        .get(&degree.to_string())
                        .ok_or_else(|| {
                            SchemaError(format!(
                                "safety[{i}]: gains_by_degree has no entry for degree {degree}"
                            ))
                        })?
                        .clone()
                }
            };
            out.push(AffineSafety::new(normal, s.offset, gains)?);
        }
        Ok(out)
    }

    fn resolve_input(&self, m: usize) -> Result<InputSet, SchemaError> {
        match self.input.kind.as_str() {
            "all" => {
                let dim = self.input.dim.unwrap_or(m);
                if dim != m {
                    return err(format!("input.dim is {dim} but the system has {m} inputs"));
                }
                Ok(InputSet::all(m))
            }
            "box" => {
                let lo = self
                    .input
                    .lo
                    .as_ref()
                    .ok_or_else(|| SchemaError("input: box requires `lo`".into()))?;
                let hi = self
                    .input
                    .hi
                    .as_ref()
                    .ok_or_else(|| SchemaError("input: box requires `hi`".into()))?;
                if lo.len() != m || hi.len() != m {
                    return err(format!("input: box bounds must have {m} entries"));
                }
                Ok(InputSet::box_bounds(vector(lo), vector(hi))?)
            }
            "polyhedron" => {
                let rows = self
                    .input
                    .rows
                    .as_ref()
                    .ok_or_else(|| SchemaError("input: polyhedron requires `rows`".into()))?;
                let mut halfspaces = Vec::with_capacity(rows.len());
                for (i, row) in rows.iter().enumerate() {
                    if row.len() != m + 1 {
                        return err(format!(
                            "input.rows[{i}]: expected {} entries (normal then offset)",
                            m + 1
                        ));
                    }
                    halfspaces.push(Halfspace::new(
                        DVector::from_column_slice(&row[..m]),
                        row[m],
                    ));
                }
                Ok(InputSet::polyhedron(halfspaces, m)?)
            }
            other => err(format!("input.kind: unknown kind {other:?}")),
        }
    }

    fn resolve_controller(
        &self,
        n: usize,
        m: usize,
    ) -> Result<NominalController, SchemaError> {
        match (&self.controller.affine, &self.controller.waypoint_pd) {
            (Some(aff), None) => {
                let k = matrix("controller.affine.k", &aff.k)?;
                if k.nrows() != m || k.ncols() != n {
                    return err(format!(
                        "controller.affine.k must be {m}×{n}, got {}×{}",
                        k.nrows(),
                        k.ncols()
                    ));
                }
                if aff.x_ref.len() != n {
                    return err(format!(
                        "controller.affine.x_ref must have {n} entries, got {}",
                        aff.x_ref.len()
                    ));
                }
                Ok(NominalController::AffineFeedback {
                    k,
                    x_ref: vector(&aff.x_ref),
                })
            }
            (None, Some(wp)) => {
                let d = wp.position.len();
                let k_p = wp.k_p.to_matrix(d, "controller.waypoint_pd.k_p")?;
                let k_d = wp.k_d.to_matrix(d, "controller.waypoint_pd.k_d")?;
                let waypoints = wp
                    .waypoints
                    .iter()
                    .map(|w| (w.time, vector(&w.target)))
                    .collect();
                Ok(NominalController::WaypointPd {
                    k_p,
                    k_d,
                    waypoints,
                    position: wp.position.clone(),
                    velocity: wp.velocity.clone(),
                })
            }
            _ => err("controller: provide exactly one of `affine` or `waypoint_pd`"),
        }
    }

    fn resolve_exogenous(
        &self,
        n: usize,
        implied_channel: Option<DMatrix<f64>>,
    ) -> Result<Option<ExogenousInput>, SchemaError> {
        let Some(exo) = &self.exogenous else {
            return Ok(None);
        };
        let channel = match (&exo.channel, implied_channel) {
            (Some(rows), _) => matrix("exogenous.channel", rows)?,
            (None, Some(implied)) => implied,
            (None, None) => {
                return err("exogenous: `channel` is required for non-augmented systems")
            }
        };
        if channel.nrows() != n {
            return err(format!(
                "exogenous.channel must have {n} rows, got {}",
                channel.nrows()
            ));
        }
        let q = channel.ncols();
        if exo.switch.is_empty() {
            return err("exogenous.switch must contain at least one entry");
        }
        let schedule = exo
            .switch
            .iter()
            .enumerate()
            .map(|(i, s)| {
                if s.value.len() != q {
                    return err(format!(
                        "exogenous.switch[{i}].value must have {q} entries, got {}",
                        s.value.len()
                    ));
                }
                Ok((s.time, vector(&s.value)))
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Some(ExogenousInput { channel, schedule }))
    }
}

fn resolve_raster(r: &RasterSection, n: usize) -> Result<RasterConfig, SchemaError> {
    if r.window.len() != 4 {
        return err("raster.window must be [x_min, x_max, y_min, y_max]");
    }
    if r.res < 2 {
        return err("raster.res must be at least 2");
    }
    let axes = match &r.axes {
        Some(a) => {
            if a.len() != 2 || a[0] == a[1] || a.iter().any(|&k| k >= n) {
                return err(format!(
                    "raster.axes must be two distinct coordinates below {n}"
                ));
            }
            (a[0], a[1])
        }
        None => {
            if n < 2 {
                return err("raster.axes must be given for one-dimensional states");
            }
            (0, 1)
        }
    };
    let fixed = match &r.fixed {
        Some(f) => {
            if f.len() != n {
                return err(format!("raster.fixed must have {n} entries, got {}", f.len()));
            }
            vector(f)
        }
        None => DVector::zeros(n),
    };
    Ok(RasterConfig {
        window: ((r.window[0], r.window[1]), (r.window[2], r.window[3])),
        res: (r.res, r.res),
        axes,
        fixed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    const MINIMAL: &str = r#"
name = "double integrator"

[system]
a = [[0.0, 1.0], [0.0, 0.0]]
b = [[0.0], [1.0]]

[[safety]]
normal = [1.0, 0.0]
offset = -2.0
gains = [1.0, 1.0]

[input]
kind = "box"
lo = [-2.0]
hi = [2.0]

[controller.affine]
k = [[3.0, 4.0]]
x_ref = [1.0, 0.0]

[simulation]
x0 = [0.0, 0.0]
dt = 0.005
horizon = 2.0
"#;

    #[test]
    fn minimal_file_parses_and_resolves() {
        let file: ScenarioFile = toml::from_str(MINIMAL).unwrap();
        assert_eq!(file.name, "double integrator");
        assert_eq!(file.filter.policy, "auto");
        assert_relative_eq!(file.filter.tau, 1.0);
        let resolved = file.resolve().unwrap();
        assert_eq!(resolved.def.system.n(), 2);
        assert_eq!(resolved.def.system.m(), 1);
        assert!(resolved.raster.is_none());
        let scenario = resolved.def.build().unwrap();
        assert_eq!(scenario.steps(), 400);
    }

    #[test]
    fn files_round_trip_through_serialization() {
        let file: ScenarioFile = toml::from_str(MINIMAL).unwrap();
        let rendered = toml::to_string_pretty(&file).unwrap();
        let reparsed: ScenarioFile = toml::from_str(&rendered).unwrap();
        assert_eq!(file, reparsed);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let bad = MINIMAL.replace("[simulation]", "[simulation]\ntypo_key = 1.0");
        let e = toml::from_str::<ScenarioFile>(&bad).unwrap_err();
        assert!(e.to_string().contains("typo_key"), "{e}");
    }

    #[test]
    fn dimension_mismatches_are_reported_by_field() {
        let bad = MINIMAL.replace("x0 = [0.0, 0.0]", "x0 = [0.0, 0.0, 0.0]");
        let file: ScenarioFile = toml::from_str(&bad).unwrap();
        let e = file.resolve().unwrap_err();
        assert!(e.0.contains("simulation.x0"), "{e}");
    }

    #[test]
    fn gains_by_degree_fills_in_missing_gain_lists() {
        let with_table = MINIMAL
            .replace("gains = [1.0, 1.0]", "")
            .replace(
                "name = \"double integrator\"",
                "name = \"double integrator\"\n\n[gains_by_degree]\n2 = [1.0, 1.0]",
            );
        let file: ScenarioFile = toml::from_str(&with_table).unwrap();
        let resolved = file.resolve().unwrap();
        assert_eq!(resolved.def.safeties[0].gains, vec![1.0, 1.0]);
    }

    #[test]
    fn scalar_gains_expand_to_identity_multiples() {
        let k = ScalarOrMatrix::Scalar(5.0).to_matrix(2, "k").unwrap();
        assert_eq!(k, DMatrix::identity(2, 2) * 5.0);
        let m = ScalarOrMatrix::Matrix(vec![vec![1.0, 2.0], vec![3.0, 4.0]])
            .to_matrix(2, "k")
            .unwrap();
        assert_eq!(m[(1, 0)], 3.0);
    }
}
