//! Problem-definition documents, the registry of builtin metrics, barriers and
//! potentials, the command pipelines and their on-disk artifacts.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::builtins::*;
use crate::convexity::{self, Hypothesis, HypothesisConfig, HypothesisReport, Status};
use crate::domain::{Barrier, LevelSchedule, Region};
use crate::error::{GeodomError, Result};
use crate::field::ScalarField;
use crate::jacobi::{self, LagrangianProblem, RepReport, Trajectory};
use crate::manifold::{ChartManifold, Point};
use crate::pathspace::{self, DiscretePath};
use crate::solver::{self, MultiplicityReport, PathSeed, SolveReport, SolverConfig};

pub const FORMAT_VERSION: u32 = 1;
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

pub type Params = BTreeMap<String, f64>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Named {
    pub name: String,
    #[serde(default)]
    pub params: Params,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BarrierDef {
    pub name: String,
    #[serde(default)]
    pub params: Params,
    /// First level of the schedule aₘ = a0·2⁻ᵐ.
    #[serde(default = "default_a0")]
    pub a0: f64,
    #[serde(default = "default_levels")]
    pub levels: usize,
}

fn default_a0() -> f64 {
    0.5
}

fn default_levels() -> usize {
    8
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Endpoints {
    pub p: Point,
    pub q: Point,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoxDef {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HypothesesDef {
    pub checks: Vec<Hypothesis>,
    #[serde(rename = "box")]
    pub region: Option<BoxDef>,
    pub samples: usize,
    pub seed: u64,
    pub directions: usize,
    pub flow_samples: usize,
    pub tol: f64,
    pub gordon: bool,
}

impl Default for HypothesesDef {
    fn default() -> Self {
        let c = HypothesisConfig::default();
        Self {
            checks: c.checks,
            region: None,
            samples: c.samples,
            seed: c.seed,
            directions: c.directions,
            flow_samples: c.flow_samples,
            tol: c.tol,
            gordon: c.gordon,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LagrangianDef {
    pub potential: Named,
    pub energy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MultiplicityDef {
    pub classes: Vec<Vec<i64>>,
}

/// A complete problem document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemDef {
    pub version: u32,
    #[serde(default)]
    pub name: String,
    #[serde(default)]
    pub description: String,
    pub manifold: Named,
    pub barrier: BarrierDef,
    pub endpoints: Endpoints,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub init: PathSeed,
    #[serde(default)]
    pub hypotheses: Option<HypothesesDef>,
    #[serde(default)]
    pub lagrangian: Option<LagrangianDef>,
    #[serde(default)]
    pub multiplicity: Option<MultiplicityDef>,
}

impl ProblemDef {
    /// Parses a document; errors name the offending field path, line and
    /// column.
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let def: ProblemDef = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            GeodomError::Input(format!("field `{path}`: {}", e.into_inner()))
        })?;
        if def.version != FORMAT_VERSION {
            return Err(GeodomError::Input(format!(
                "field `version`: unsupported version {} (expected {FORMAT_VERSION})",
                def.version
            )));
        }
        Ok(def)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| GeodomError::Io(format!("{}: {e}", path.display())))?;
        Self::from_json(&text).map_err(|e| match e {
            GeodomError::Input(msg) => GeodomError::Input(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    /// JSON with recursively sorted keys.
    pub fn canonical_json(&self) -> String {
        // serde_json's default map is ordered by key
        serde_json::to_value(self).expect("problem serializes").to_string()
    }

    /// SHA-256 of the canonical JSON.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.canonical_json().as_bytes()))
    }

    pub fn build(&self) -> Result<Problem> {
        Problem::new(self.clone())
    }
}

fn take(params: &Params, allowed: &[(&str, Option<f64>)], what: &str) -> Result<Vec<f64>> {
    if let Some(key) = params.keys().find(|k| !allowed.iter().any(|(a, _)| a == k)) {
        return Err(GeodomError::Input(format!("{what}: unknown parameter `{key}`")));
    }
    allowed
        .iter()
        .map(|(key, default)| {
            params
                .get(*key)
                .copied()
                .or(*default)
                .ok_or_else(|| GeodomError::Input(format!("{what}: missing parameter `{key}`")))
        })
        .collect()
}

pub const MANIFOLDS: [&str; 4] = ["euclidean", "polar_inverse_r2", "flat_cylinder", "helix_conformal"];
pub const BARRIERS: [&str; 8] = [
    "sqrt_xy",
    "xy",
    "radial_r",
    "half_plane_y",
    "unit_disk",
    "wavy_half_plane",
    "dist_to_helix",
    "none",
];
pub const POTENTIALS: [&str; 3] = ["constant", "harmonic", "polynomial_y"];

pub fn build_manifold(def: &Named) -> Result<ChartManifold> {
    let what = format!("manifold `{}`", def.name);
    match def.name.as_str() {
        "euclidean" => {
            let v = take(&def.params, &[("dim", Some(2.0))], &what)?;
            let dim = v[0];
            if !(dim >= 1.0 && dim.fract() == 0.0) {
                return Err(GeodomError::Input(format!("{what}: dim must be a positive integer")));
            }
            Ok(Euclidean::manifold(dim as usize))
        }
        "polar_inverse_r2" => {
            take(&def.params, &[], &what)?;
            Ok(PolarInverseR2::manifold())
        }
        "flat_cylinder" => {
            take(&def.params, &[], &what)?;
            Ok(FlatCylinder::manifold())
        }
        "helix_conformal" => {
            let v = take(&def.params, &[("pitch", None), ("width", None), ("delta", None)], &what)?;
            Ok(HelixConformal::manifold(HelixDistance::new(v[0], v[1])?, v[2]))
        }
        other => Err(GeodomError::Input(format!(
            "unknown manifold `{other}` (known: {})",
            MANIFOLDS.join(", ")
        ))),
    }
}

/// The barrier field and its chart Lipschitz constant, when known.
pub fn build_barrier_field(def: &Named) -> Result<(Arc<dyn ScalarField>, Option<f64>)> {
    let what = format!("barrier `{}`", def.name);
    let no_params = |f: Arc<dyn ScalarField>| -> Result<(Arc<dyn ScalarField>, Option<f64>)> {
        take(&def.params, &[], &what)?;
        Ok((f, None))
    };
    match def.name.as_str() {
        "sqrt_xy" => no_params(Arc::new(SqrtXy)),
        "xy" => no_params(Arc::new(Xy)),
        "radial_r" => no_params(Arc::new(RadialR)),
        "half_plane_y" => no_params(Arc::new(HalfPlaneY)),
        "unit_disk" => no_params(Arc::new(UnitDisk)),
        "none" => no_params(Arc::new(Unbounded)),
        "wavy_half_plane" => {
            let v = take(&def.params, &[("amplitude", Some(0.5))], &what)?;
            Ok((Arc::new(WavyHalfPlane { amplitude: v[0] }), None))
        }
        "dist_to_helix" => {
            let v = take(&def.params, &[("pitch", None), ("width", None)], &what)?;
            Ok((Arc::new(HelixDistance::new(v[0], v[1])?), Some(1.0)))
        }
        other => Err(GeodomError::Input(format!(
            "unknown barrier `{other}` (known: {})",
            BARRIERS.join(", ")
        ))),
    }
}

pub fn build_potential(def: &Named) -> Result<Arc<dyn ScalarField>> {
    let what = format!("potential `{}`", def.name);
    match def.name.as_str() {
        "constant" => {
            let v = take(&def.params, &[("c", Some(0.0))], &what)?;
            Ok(Arc::new(ConstantPotential(v[0])))
        }
        "harmonic" => {
            let v = take(&def.params, &[("k", Some(1.0))], &what)?;
            Ok(Arc::new(Harmonic { k: v[0] }))
        }
        "polynomial_y" => {
            let v = take(&def.params, &[("linear", Some(0.0)), ("quadratic", Some(0.0))], &what)?;
            Ok(Arc::new(PolynomialY {
                linear: v[0],
                quadratic: v[1],
            }))
        }
        other => Err(GeodomError::Input(format!(
            "unknown potential `{other}` (known: {})",
            POTENTIALS.join(", ")
        ))),
    }
}

/// A validated, instantiated problem.
#[derive(Debug, Clone)]
pub struct Problem {
    pub def: ProblemDef,
    pub barrier: Barrier,
    pub lagrangian: Option<LagrangianProblem>,
}

impl Problem {
    pub fn new(def: ProblemDef) -> Result<Self> {
        let manifold = build_manifold(&def.manifold)?;
        let n = manifold.dim();
        let (phi, lipschitz) = build_barrier_field(&Named {
            name: def.barrier.name.clone(),
            params: def.barrier.params.clone(),
        })?;
        let schedule = LevelSchedule::geometric(def.barrier.a0, def.barrier.levels)
            .map_err(|e| GeodomError::Input(format!("barrier: {e}")))?;
        let mut barrier = Barrier::new(manifold.clone(), phi).with_schedule(schedule);
        if let Some(l) = lipschitz {
            barrier = barrier.with_lipschitz(l);
        }
        for (label, x) in [("p", &def.endpoints.p), ("q", &def.endpoints.q)] {
            if x.len() != n {
                return Err(GeodomError::Input(format!(
                    "endpoint {label} has {} coordinates, manifold dimension is {n}",
                    x.len()
                )));
            }
            if !manifold.contains(x) {
                return Err(GeodomError::Input(format!("endpoint {label} = {x:?} lies outside the chart")));
            }
            let v = barrier.phi(x);
            if !(v > 0.0) {
                return Err(GeodomError::Input(format!(
                    "endpoint {label} = {x:?} is not inside the domain (phi = {v})"
                )));
            }
        }
        def.solver
            .validate()
            .map_err(|e| GeodomError::Input(format!("solver: {e}")))?;
        if let Some(h) = &def.hypotheses {
            if let Some(bx) = &h.region {
                if bx.lo.len() != n || bx.hi.len() != n {
                    return Err(GeodomError::Input(format!("hypotheses.box must have {n} coordinates")));
                }
                Region::new(bx.lo.clone(), bx.hi.clone()).map_err(|e| GeodomError::Input(format!("hypotheses.box: {e}")))?;
            }
        }
        let lagrangian = match &def.lagrangian {
            Some(l) => {
                let v = build_potential(&l.potential)?;
                Some(LagrangianProblem::new(manifold, v, l.energy)?.with_barrier(barrier.clone()))
            }
            None => None,
        };
        Ok(Self {
            def,
            barrier,
            lagrangian,
        })
    }

    pub fn hypothesis_config(&self) -> Result<HypothesisConfig> {
        let h = self.def.hypotheses.clone().unwrap_or_default();
        let region = match &h.region {
            Some(b) => Region::new(b.lo.clone(), b.hi.clone())?,
            None => self.default_region(),
        };
        Ok(HypothesisConfig {
            levels: Vec::new(),
            samples: h.samples,
            seed: h.seed,
            region: Some(region),
            directions: h.directions,
            tol: h.tol,
            flow_samples: h.flow_samples,
            checks: h.checks,
            gordon: h.gordon,
        })
    }

    /// A box around the endpoints, padded by their distance.
    fn default_region(&self) -> Region {
        let (p, q) = (&self.def.endpoints.p, &self.def.endpoints.q);
        let pad = p.iter().zip(q).map(|(a, b)| (a - b).abs()).fold(1.0, f64::max);
        Region::new(
            p.iter().zip(q).map(|(a, b)| a.min(*b) - pad).collect(),
            p.iter().zip(q).map(|(a, b)| a.max(*b) + pad).collect(),
        )
        .expect("padded box is non-degenerate")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveOutcome {
    pub report: SolveReport,
    pub multiplicity: Option<MultiplicityReport>,
}

pub fn run_solve(problem: &Problem) -> Result<SolveOutcome> {
    let d = &problem.def;
    let report = solver::solve(&d.endpoints.p, &d.endpoints.q, &problem.barrier, &d.solver, &d.init)?;
    let multiplicity = match &d.multiplicity {
        Some(m) => Some(solver::solve_multiplicity(
            &d.endpoints.p,
            &d.endpoints.q,
            &problem.barrier,
            &d.solver,
            &m.classes,
        )?),
        None => None,
    };
    Ok(SolveOutcome { report, multiplicity })
}

pub fn run_check(problem: &Problem) -> Result<HypothesisReport> {
    convexity::check_hypotheses(&problem.barrier, &problem.hypothesis_config()?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JacobiChecks {
    pub energy: f64,
    pub jhes_defect: f64,
    pub jhes_samples: usize,
    pub rep: RepReport,
    pub energy_spread: Option<f64>,
    pub ode_residual: Option<f64>,
    pub duration: Option<f64>,
    pub reparam_error: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct JacobiOutcome {
    pub solve: SolveReport,
    pub trajectory: Option<Trajectory>,
    pub checks: JacobiChecks,
}

impl JacobiOutcome {
    /// The solve status code, 1 when the reparametrization failed, or 6 when
    /// only the compatibility check failed.
    pub fn exit_code(&self) -> i32 {
        let code = self.solve.status.exit_code();
        if code != 0 {
            code
        } else if self.trajectory.is_none() {
            1
        } else if self.checks.rep.verdict.status == Status::Fail {
            6
        } else {
            0
        }
    }
}

pub fn run_jacobi(problem: &Problem) -> Result<JacobiOutcome> {
    let d = &problem.def;
    let prob = problem
        .lagrangian
        .as_ref()
        .ok_or_else(|| GeodomError::Input("problem has no `lagrangian` block".into()))?;
    let seed = DiscretePath::linear(
        problem.barrier.manifold(),
        &d.endpoints.p,
        &d.endpoints.q,
        d.solver.k_nodes,
        &d.init.winding,
    )?;
    prob.check_points(seed.nodes())?;
    let cfg = problem.hypothesis_config()?;
    let region = cfg.region.clone().expect("region is always set");
    let samples = jacobi::sample_region(prob, &problem.barrier, &region, cfg.samples, cfg.seed);
    prob.check_points(samples.iter())?;
    let directions = 4;
    let jhes_defect = jacobi::hessian_transform_check(prob, &problem.barrier, &samples, directions, cfg.seed)?;
    let rep = jacobi::rep_check(
        prob,
        &problem.barrier,
        problem.barrier.schedule().levels(),
        cfg.samples,
        cfg.seed,
        &region,
    )?;
    let jb = prob.jacobi_barrier().expect("lagrangian carries the barrier");
    let solve = solver::solve(&d.endpoints.p, &d.endpoints.q, &jb, &d.solver, &d.init)?;
    let (trajectory, reparam_error) = if solve.converged {
        match jacobi::trajectory_from_geodesic(prob, &solve.path) {
            Ok(t) => (Some(t), None),
            Err(e) => (None, Some(e.to_string())),
        }
    } else {
        (None, None)
    };
    let checks = JacobiChecks {
        energy: prob.energy,
        jhes_defect,
        jhes_samples: samples.len() * directions,
        rep,
        energy_spread: trajectory.as_ref().map(|t| t.energy_spread()),
        ode_residual: trajectory.as_ref().map(|t| t.ode_residual),
        duration: trajectory.as_ref().map(|t| t.duration()),
        reparam_error,
    };
    Ok(JacobiOutcome {
        solve,
        trajectory,
        checks,
    })
}

/// Everything one invocation produced, keyed by the problem digest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunBundle {
    pub problem_hash: String,
    pub problem: ProblemDef,
    pub tool_version: String,
    /// Seconds since the Unix epoch; the only field that varies between
    /// identical runs.
    pub timestamp: u64,
    pub solve: Option<SolveReport>,
    pub multiplicity: Option<MultiplicityReport>,
    pub hypotheses: Option<HypothesisReport>,
    pub jacobi: Option<JacobiChecks>,
}

impl RunBundle {
    pub fn new(def: &ProblemDef) -> Self {
        let timestamp = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map_or(0, |d| d.as_secs());
        Self {
            problem_hash: def.hash(),
            problem: def.clone(),
            tool_version: TOOL_VERSION.to_string(),
            timestamp,
            solve: None,
            multiplicity: None,
            hypotheses: None,
            jacobi: None,
        }
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| GeodomError::Io(format!("{}: {e}", path.display())))
}

fn create(path: &Path) -> Result<fs::File> {
    fs::File::create(path).map_err(|e| GeodomError::Io(format!("{}: {e}", path.display())))
}

/// path.csv, report.json, stages.csv (and multiplicity.json).
pub fn write_solve_artifacts(dir: &Path, problem: &Problem, out: &SolveOutcome) -> Result<()> {
    fs::create_dir_all(dir)?;
    pathspace::write_csv(&out.report.path, &problem.barrier, create(&dir.join("path.csv"))?)?;
    write_json(&dir.join("report.json"), &out.report)?;
    out.report.write_history_csv(create(&dir.join("stages.csv"))?)?;
    if let Some(m) = &out.multiplicity {
        write_json(&dir.join("multiplicity.json"), m)?;
    }
    Ok(())
}

/// hypotheses.json and hypotheses.txt.
pub fn write_check_artifacts(dir: &Path, report: &HypothesisReport) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_json(&dir.join("hypotheses.json"), report)?;
    fs::write(dir.join("hypotheses.txt"), report.to_table())?;
    Ok(())
}

/// trajectory.csv, jacobi_checks.json and the solve artifacts of the
/// Jacobi geodesic.
pub fn write_jacobi_artifacts(dir: &Path, problem: &Problem, out: &JacobiOutcome) -> Result<()> {
    fs::create_dir_all(dir)?;
    let jb = problem
        .lagrangian
        .as_ref()
        .and_then(|l| l.jacobi_barrier())
        .ok_or_else(|| GeodomError::Input("problem has no `lagrangian` block".into()))?;
    pathspace::write_csv(&out.solve.path, &jb, create(&dir.join("path.csv"))?)?;
    write_json(&dir.join("report.json"), &out.solve)?;
    out.solve.write_history_csv(create(&dir.join("stages.csv"))?)?;
    if let Some(t) = &out.trajectory {
        t.write_csv(create(&dir.join("trajectory.csv"))?)?;
    }
    write_json(&dir.join("jacobi_checks.json"), &out.checks)?;
    Ok(())
}

pub fn write_bundle(dir: &Path, bundle: &RunBundle) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_json(&dir.join("bundle.json"), bundle)
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "version": 1,
        "manifold": {"name": "euclidean"},
        "barrier": {"name": "sqrt_xy"},
        "endpoints": {"p": [1.0, 2.0], "q": [2.0, 1.0]}
    }"#;

    #[test]
    fn minimal_document_builds() {
        let def = ProblemDef::from_json(MINIMAL).unwrap();
        assert_eq!(def.solver, SolverConfig::default());
        assert_eq!(def.barrier.levels, 8);
        let p = def.build().unwrap();
        assert_eq!(p.barrier.schedule().first(), 0.5);
    }

    #[test]
    fn errors_name_the_field() {
        let text = MINIMAL.replace("\"p\": [1.0, 2.0]", "\"p\": [1.0, \"x\"]");
        let err = ProblemDef::from_json(&text).unwrap_err().to_string();
        assert!(err.contains("endpoints.p[1]"), "{err}");
        assert!(err.contains("line"), "{err}");

        let text = MINIMAL.replace("\"version\": 1", "\"version\": 7");
        assert!(ProblemDef::from_json(&text).unwrap_err().to_string().contains("version"));

        let text = MINIMAL.replace("\"sqrt_xy\"", "\"sqrt_xy\", \"params\": {\"k\": 1}");
        let err = ProblemDef::from_json(&text).unwrap().build().unwrap_err().to_string();
        assert!(err.contains("unknown parameter `k`"), "{err}");
    }

    #[test]
    fn boundary_endpoint_is_named() {
        let text = MINIMAL.replace("[1.0, 2.0]", "[0.0, 2.0]");
        let err = ProblemDef::from_json(&text).unwrap().build().unwrap_err().to_string();
        assert!(err.contains("endpoint p"), "{err}");
    }

    #[test]
    fn hash_ignores_formatting() {
        let a = ProblemDef::from_json(MINIMAL).unwrap();
        let b = ProblemDef::from_json(&MINIMAL.replace('\n', " ")).unwrap();
        assert_eq!(a.hash(), b.hash());
        let mut c = a.clone();
        c.endpoints.q[0] = 2.5;
        assert_ne!(a.hash(), c.hash());
    }
}
