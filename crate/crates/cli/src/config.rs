//! Scenario configuration: the raw JSON schema and its validated form.
//!
//! Input files named in a config are resolved against the config file's
//! directory. The output directory is resolved against the working directory.

use std::path::{Path, PathBuf};

use serde::Deserialize;
use wass_splines::cloud::PhasePoint;
use wass_splines::io::{cloud_from_csv, density_from_csv};
use wass_splines::mm_sinkhorn::common_grid;
use wass_splines::semidiscrete::{PathCost, PenaltyMode};
use wass_splines::{CostKind, DensityGrid, GaussianComponent, GaussianMixture, Grid, TimeGrid, WeightedPhaseCloud};

use crate::CliError;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolverKind {
    MmSpline,
    MmGeodesic,
    MmExtrapolate,
    Hermite,
    SdSpline,
    SdExtrapolate,
}

impl SolverKind {
    pub fn name(self) -> &'static str {
        match self {
            SolverKind::MmSpline => "mm-spline",
            SolverKind::MmGeodesic => "mm-geodesic",
            SolverKind::MmExtrapolate => "mm-extrapolate",
            SolverKind::Hermite => "hermite",
            SolverKind::SdSpline => "sd-spline",
            SolverKind::SdExtrapolate => "sd-extrapolate",
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub nx: usize,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeSpec {
    pub n_steps: usize,
    #[serde(default = "one")]
    pub dtau: f64,
}

fn one() -> f64 {
    1.0
}

/// A number is an absolute epsilon; `{"relative": r}` scales the median cost
/// entry (pairwise Hermite transport only).
#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(untagged)]
pub enum EpsilonSpec {
    Absolute(f64),
    Relative { relative: f64 },
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComponentSpec {
    #[serde(default = "one")]
    pub weight: f64,
    pub mean: Vec<f64>,
    pub variance: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstraintSpec {
    pub step: Option<usize>,
    pub time: Option<f64>,
    pub mixture: Option<Vec<ComponentSpec>>,
    pub file: Option<PathBuf>,
    /// Per-target penalty epsilon (semi-discrete solvers).
    pub epsilon: Option<f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SinkhornSpec {
    pub tol: Option<f64>,
    pub max_iters: Option<usize>,
    pub log_domain: Option<bool>,
    pub check_every: Option<usize>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PointSpec {
    pub x: Vec<f64>,
    #[serde(default)]
    pub v: Option<Vec<f64>>,
    /// Uniform weights when every point omits this.
    pub weight: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CloudSpec {
    pub file: Option<PathBuf>,
    pub points: Option<Vec<PointSpec>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitMode {
    QuantizedMiddle,
    Coupled,
    Warm,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitSpec {
    pub mode: InitMode,
    /// Constraint index quantized by `quantized-middle`; defaults to the middle one.
    pub middle: Option<usize>,
    /// Bundle CSV for `warm`.
    pub file: Option<PathBuf>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageSpec {
    pub epsilons: Vec<f64>,
    #[serde(default)]
    pub noise: f64,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PenaltySpec {
    Auto,
    Assignment,
    Entropic { relative_epsilon: f64 },
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PathCostSpec {
    Spline,
    Speed,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerSpec {
    pub gtol: Option<f64>,
    pub max_iters: Option<usize>,
    pub memory: Option<usize>,
    pub max_rounds: Option<usize>,
}

/// The JSON document as written by users.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub schema_version: u32,
    pub solver: SolverKind,
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub seed: u64,
    pub grid: Option<GridSpec>,
    pub time: Option<TimeSpec>,
    pub epsilon: Option<EpsilonSpec>,
    #[serde(default)]
    pub constraints: Vec<ConstraintSpec>,
    pub lambda: Option<f64>,
    pub output_steps: Option<Vec<usize>>,
    #[serde(default)]
    pub sinkhorn: SinkhornSpec,
    pub clouds: Option<Vec<CloudSpec>>,
    /// Trajectory samples per path segment.
    pub samples: Option<usize>,
    pub particles: Option<usize>,
    pub init: Option<InitSpec>,
    pub path_cost: Option<PathCostSpec>,
    pub penalty: Option<PenaltySpec>,
    pub stages: Option<Vec<StageSpec>>,
    #[serde(default)]
    pub optimizer: OptimizerSpec,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SinkhornParams {
    pub tol: f64,
    pub max_iters: usize,
    pub log_domain: bool,
    pub check_every: usize,
}

#[derive(Debug, Clone)]
pub struct MmScenario {
    pub grid: Grid,
    pub time: TimeGrid,
    pub epsilon: f64,
    pub cost: CostKind,
    /// `(step, density)` in increasing step order.
    pub constraints: Vec<(usize, DensityGrid)>,
    pub output_steps: Vec<usize>,
    pub sinkhorn: SinkhornParams,
}

#[derive(Debug, Clone)]
pub struct HermiteScenario {
    pub source: WeightedPhaseCloud,
    pub target: WeightedPhaseCloud,
    pub epsilon: EpsilonSpec,
    pub sinkhorn: SinkhornParams,
    pub samples: usize,
}

#[derive(Debug, Clone)]
pub enum SdInit {
    QuantizedMiddle(usize),
    Coupled,
    Warm { positions: Vec<Vec<Vec<f64>>>, velocities: Vec<Vec<Vec<f64>>> },
}

#[derive(Debug, Clone)]
pub struct SdTarget {
    pub time: f64,
    pub density: DensityGrid,
    pub epsilon: f64,
}

#[derive(Debug, Clone)]
pub struct SdScenario {
    pub targets: Vec<SdTarget>,
    pub particles: usize,
    pub init: SdInit,
    pub path_cost: PathCost,
    pub penalty: PenaltyMode,
    /// `(epsilons, noise)` per stage; empty means a single plain run.
    pub stages: Vec<(Vec<f64>, f64)>,
    pub gtol: f64,
    pub max_iters: usize,
    pub memory: usize,
    pub max_rounds: usize,
    pub samples: usize,
}

#[derive(Debug, Clone)]
pub enum Scenario {
    Multimarginal(MmScenario),
    Hermite(HermiteScenario),
    SemiDiscrete(SdScenario),
}

/// A fully checked scenario, ready to run.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub solver: SolverKind,
    pub seed: u64,
    pub output_dir: PathBuf,
    pub scenario: Scenario,
}

fn err(field: impl Into<String>, msg: impl Into<String>) -> CliError {
    CliError::Config { field: field.into(), msg: msg.into() }
}

fn positive(field: &str, v: f64) -> Result<f64, CliError> {
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(err(field, format!("must be positive, got {v}")))
    }
}

/// Parses and validates the config at `path` without solving anything.
pub fn load(path: &Path) -> Result<Resolved, CliError> {
    let text = std::fs::read_to_string(path).map_err(|source| CliError::Io { path: path.to_path_buf(), source })?;
    let raw: ScenarioConfig = serde_json::from_str(&text).map_err(|e| err("config", e.to_string()))?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("scenario");
    resolve(raw, &base, stem)
}

pub fn resolve(raw: ScenarioConfig, base: &Path, stem: &str) -> Result<Resolved, CliError> {
    if raw.schema_version != SCHEMA_VERSION {
        return Err(err(
            "schema_version",
            format!("unsupported version {} (this build reads {SCHEMA_VERSION})", raw.schema_version),
        ));
    }
    let output_dir = raw.output_dir.clone().unwrap_or_else(|| Path::new("out").join(stem));
    let scenario = match raw.solver {
        SolverKind::MmSpline | SolverKind::MmGeodesic | SolverKind::MmExtrapolate => {
            Scenario::Multimarginal(resolve_mm(&raw, base)?)
        }
        SolverKind::Hermite => Scenario::Hermite(resolve_hermite(&raw, base)?),
        SolverKind::SdSpline | SolverKind::SdExtrapolate => Scenario::SemiDiscrete(resolve_sd(&raw, base)?),
    };
    Ok(Resolved { solver: raw.solver, seed: raw.seed, output_dir, scenario })
}

fn unused(raw: &ScenarioConfig, fields: &[(&str, bool)]) -> Result<(), CliError> {
    for (name, present) in fields {
        if *present {
            return Err(err(*name, format!("not used by solver {}", raw.solver.name())));
        }
    }
    Ok(())
}

fn build_grid(spec: &GridSpec) -> Result<Grid, CliError> {
    if spec.lo.len() != spec.hi.len() {
        return Err(err("grid", format!("lo has {} entries but hi has {}", spec.lo.len(), spec.hi.len())));
    }
    Grid::new(spec.nx, &spec.lo, &spec.hi).map_err(|e| err("grid", e.to_string()))
}

fn load_density(field: &str, c: &ConstraintSpec, grid: Option<&Grid>, base: &Path) -> Result<DensityGrid, CliError> {
    match (&c.mixture, &c.file) {
        (Some(_), Some(_)) => Err(err(field, "give either `mixture` or `file`, not both")),
        (None, None) => Err(err(field, "needs a `mixture` or a `file`")),
        (Some(m), None) => {
            let grid = grid.ok_or_else(|| err("grid", "required to rasterize mixtures"))?;
            let comps = m
                .iter()
                .map(|c| GaussianComponent { weight: c.weight, mean: c.mean.clone(), variance: c.variance })
                .collect();
            let mix = GaussianMixture::new(comps).map_err(|e| err(format!("{field}.mixture"), e.to_string()))?;
            mix.rasterize(grid).map_err(|e| err(format!("{field}.mixture"), e.to_string()))
        }
        (None, Some(f)) => {
            let path = base.join(f);
            if !path.is_file() {
                return Err(err(format!("{field}.file"), format!("{} does not exist", path.display())));
            }
            let text =
                std::fs::read_to_string(&path).map_err(|source| CliError::Io { path: path.clone(), source })?;
            density_from_csv(&text).map_err(|e| err(format!("{field}.file"), format!("{}: {e}", path.display())))
        }
    }
}

fn sinkhorn_params(s: &SinkhornSpec, tol: f64, max_iters: usize) -> Result<SinkhornParams, CliError> {
    let p = SinkhornParams {
        tol: s.tol.unwrap_or(tol),
        max_iters: s.max_iters.unwrap_or(max_iters),
        log_domain: s.log_domain.unwrap_or(false),
        check_every: s.check_every.unwrap_or(10),
    };
    positive("sinkhorn.tol", p.tol)?;
    if p.max_iters == 0 {
        return Err(err("sinkhorn.max_iters", "must be at least 1"));
    }
    if p.check_every == 0 {
        return Err(err("sinkhorn.check_every", "must be at least 1"));
    }
    Ok(p)
}

fn resolve_mm(raw: &ScenarioConfig, base: &Path) -> Result<MmScenario, CliError> {
    unused(
        raw,
        &[
            ("clouds", raw.clouds.is_some()),
            ("particles", raw.particles.is_some()),
            ("init", raw.init.is_some()),
            ("path_cost", raw.path_cost.is_some()),
            ("penalty", raw.penalty.is_some()),
            ("stages", raw.stages.is_some()),
            ("samples", raw.samples.is_some()),
        ],
    )?;
    if raw.solver != SolverKind::MmExtrapolate && raw.lambda.is_some() {
        return Err(err("lambda", "only used by mm-extrapolate"));
    }
    let epsilon = match raw.epsilon {
        None => return Err(err("epsilon", format!("required by solver {}", raw.solver.name()))),
        Some(EpsilonSpec::Absolute(e)) => positive("epsilon", e)?,
        Some(EpsilonSpec::Relative { .. }) => {
            return Err(err("epsilon", "relative epsilon is only supported by the hermite solver"))
        }
    };
    let time = match (&raw.time, raw.solver) {
        (Some(t), _) => TimeGrid::new(t.n_steps, t.dtau).map_err(|e| err("time", e.to_string()))?,
        (None, SolverKind::MmExtrapolate) => TimeGrid::new(3, 1.0).expect("valid default"),
        (None, _) => return Err(err("time", format!("required by solver {}", raw.solver.name()))),
    };
    let cost = match raw.solver {
        SolverKind::MmSpline => CostKind::Acceleration,
        SolverKind::MmGeodesic => CostKind::Speed,
        _ => {
            if time.n_steps() != 3 {
                return Err(err("time.n_steps", "extrapolation uses exactly 3 steps"));
            }
            let lambda = raw.lambda.unwrap_or(time.dtau());
            CostKind::Extrapolation { lambda: positive("lambda", lambda)? }
        }
    };
    let grid = raw.grid.as_ref().map(build_grid).transpose()?;
    let mut constraints = Vec::with_capacity(raw.constraints.len());
    for (i, c) in raw.constraints.iter().enumerate() {
        let field = format!("constraints[{i}]");
        if c.epsilon.is_some() {
            return Err(err(format!("{field}.epsilon"), "per-constraint epsilon is only used by sd solvers"));
        }
        let step = match (c.step, c.time) {
            (Some(_), Some(_)) => return Err(err(&field, "give either `step` or `time`, not both")),
            (None, None) => return Err(err(&field, "needs a `step` or a `time`")),
            (Some(s), None) => s,
            (None, Some(t)) => time.step_of_time(t).ok_or_else(|| {
                err(
                    format!("{field}.time"),
                    format!(
                        "{t} is not a time-grid node (dtau {}, {} steps); the multimarginal solver only constrains grid times",
                        time.dtau(),
                        time.n_steps()
                    ),
                )
            })?,
        };
        if step >= time.n_steps() {
            return Err(err(format!("{field}.step"), format!("{step} is outside the {} time steps", time.n_steps())));
        }
        constraints.push((step, load_density(&field, c, grid.as_ref(), base)?));
    }
    let min = match raw.solver {
        SolverKind::MmSpline => 3,
        _ => 2,
    };
    let steps: Vec<usize> = constraints.iter().map(|c| c.0).collect();
    time.check_constrained(&steps, min).map_err(|e| err("constraints", e.to_string()))?;
    if raw.solver == SolverKind::MmExtrapolate && steps != [0, 1] {
        return Err(err("constraints", "extrapolation constrains steps 0 and 1"));
    }
    let densities: Vec<&DensityGrid> = constraints.iter().map(|c| &c.1).collect();
    let grid = match (grid, common_grid(&densities)) {
        (_, None) => return Err(err("constraints", "densities live on different grids")),
        (Some(g), Some(c)) if g != c => return Err(err("grid", "does not match the grid of the density files")),
        (_, Some(c)) => c,
    };
    let output_steps = match &raw.output_steps {
        None => (0..time.n_steps()).collect(),
        Some(s) => {
            if let Some(bad) = s.iter().find(|&&s| s >= time.n_steps()) {
                return Err(err("output_steps", format!("{bad} is outside the {} time steps", time.n_steps())));
            }
            let mut s = s.clone();
            s.sort_unstable();
            s.dedup();
            s
        }
    };
    let sinkhorn = sinkhorn_params(&raw.sinkhorn, 1e-7, 5000)?;
    Ok(MmScenario { grid, time, epsilon, cost, constraints, output_steps, sinkhorn })
}

fn load_cloud(field: &str, spec: &CloudSpec, base: &Path) -> Result<WeightedPhaseCloud, CliError> {
    match (&spec.file, &spec.points) {
        (Some(_), Some(_)) => Err(err(field, "give either `file` or `points`, not both")),
        (None, None) => Err(err(field, "needs `file` or `points`")),
        (Some(f), None) => {
            let path = base.join(f);
            if !path.is_file() {
                return Err(err(format!("{field}.file"), format!("{} does not exist", path.display())));
            }
            let text =
                std::fs::read_to_string(&path).map_err(|source| CliError::Io { path: path.clone(), source })?;
            cloud_from_csv(&text).map_err(|e| err(format!("{field}.file"), format!("{}: {e}", path.display())))
        }
        (None, Some(pts)) => {
            let mut points = Vec::with_capacity(pts.len());
            for (j, p) in pts.iter().enumerate() {
                let v = p.v.clone().unwrap_or_else(|| vec![0.0; p.x.len()]);
                points.push(
                    PhasePoint::new(p.x.clone(), v).map_err(|e| err(format!("{field}.points[{j}]"), e.to_string()))?,
                );
            }
            let cloud = if pts.iter().all(|p| p.weight.is_none()) {
                WeightedPhaseCloud::uniform(points)
            } else {
                let w = pts
                    .iter()
                    .enumerate()
                    .map(|(j, p)| p.weight.ok_or_else(|| err(format!("{field}.points[{j}].weight"), "give all weights or none")))
                    .collect::<Result<Vec<f64>, CliError>>()?;
                WeightedPhaseCloud::new(points, w)
            };
            cloud.map_err(|e| err(format!("{field}.points"), e.to_string()))
        }
    }
}

fn resolve_hermite(raw: &ScenarioConfig, base: &Path) -> Result<HermiteScenario, CliError> {
    unused(
        raw,
        &[
            ("grid", raw.grid.is_some()),
            ("time", raw.time.is_some()),
            ("constraints", !raw.constraints.is_empty()),
            ("lambda", raw.lambda.is_some()),
            ("output_steps", raw.output_steps.is_some()),
            ("particles", raw.particles.is_some()),
            ("init", raw.init.is_some()),
            ("path_cost", raw.path_cost.is_some()),
            ("penalty", raw.penalty.is_some()),
            ("stages", raw.stages.is_some()),
        ],
    )?;
    let clouds = raw.clouds.as_ref().ok_or_else(|| err("clouds", "required by solver hermite"))?;
    if clouds.len() != 2 {
        return Err(err("clouds", format!("expected a source and a target cloud, got {}", clouds.len())));
    }
    let source = load_cloud("clouds[0]", &clouds[0], base)?;
    let target = load_cloud("clouds[1]", &clouds[1], base)?;
    if source.dim() != target.dim() {
        return Err(err("clouds", format!("dimension {} vs {}", source.dim(), target.dim())));
    }
    let epsilon = raw.epsilon.unwrap_or(EpsilonSpec::Relative { relative: 1e-2 });
    match epsilon {
        EpsilonSpec::Absolute(e) => positive("epsilon", e)?,
        EpsilonSpec::Relative { relative } => positive("epsilon.relative", relative)?,
    };
    let samples = raw.samples.unwrap_or(21);
    if samples < 2 {
        return Err(err("samples", "must be at least 2"));
    }
    let sinkhorn = sinkhorn_params(&raw.sinkhorn, 1e-9, 10000)?;
    if raw.sinkhorn.log_domain.is_some() {
        return Err(err("sinkhorn.log_domain", "pairwise transport always runs in the log domain"));
    }
    Ok(HermiteScenario { source, target, epsilon, sinkhorn, samples })
}

fn resolve_sd(raw: &ScenarioConfig, base: &Path) -> Result<SdScenario, CliError> {
    let sinkhorn_given = raw.sinkhorn.tol.is_some()
        || raw.sinkhorn.max_iters.is_some()
        || raw.sinkhorn.log_domain.is_some()
        || raw.sinkhorn.check_every.is_some();
    unused(
        raw,
        &[
            ("time", raw.time.is_some()),
            ("clouds", raw.clouds.is_some()),
            ("output_steps", raw.output_steps.is_some()),
            ("sinkhorn", sinkhorn_given),
        ],
    )?;
    if raw.lambda.is_some() {
        return Err(err("lambda", "only used by mm-extrapolate"));
    }
    let extrapolate = raw.solver == SolverKind::SdExtrapolate;
    if extrapolate {
        unused(
            raw,
            &[
                ("init", raw.init.is_some()),
                ("stages", raw.stages.is_some()),
                ("path_cost", raw.path_cost.is_some()),
                ("penalty", raw.penalty.is_some()),
            ],
        )?;
    }
    let particles = raw.particles.ok_or_else(|| err("particles", format!("required by solver {}", raw.solver.name())))?;
    if particles == 0 {
        return Err(err("particles", "must be at least 1"));
    }
    let global = match raw.epsilon {
        None => None,
        Some(EpsilonSpec::Absolute(e)) => Some(positive("epsilon", e)?),
        Some(EpsilonSpec::Relative { .. }) => {
            return Err(err("epsilon", "relative epsilon is only supported by the hermite solver"))
        }
    };
    let grid = raw.grid.as_ref().map(build_grid).transpose()?;
    let mut targets: Vec<SdTarget> = Vec::with_capacity(raw.constraints.len());
    for (i, c) in raw.constraints.iter().enumerate() {
        let field = format!("constraints[{i}]");
        if c.step.is_some() {
            return Err(err(format!("{field}.step"), "semi-discrete targets are placed by `time`"));
        }
        let time = c.time.ok_or_else(|| err(format!("{field}.time"), "required"))?;
        if !time.is_finite() {
            return Err(err(format!("{field}.time"), "must be finite"));
        }
        if let Some(prev) = targets.last() {
            if time <= prev.time {
                return Err(err(format!("{field}.time"), "knot times must be strictly increasing"));
            }
        }
        let epsilon = match (c.epsilon, global) {
            (Some(e), _) => positive(&format!("{field}.epsilon"), e)?,
            (None, Some(e)) => e,
            (None, None) => return Err(err("epsilon", format!("required by solver {}", raw.solver.name()))),
        };
        let density = load_density(&field, c, grid.as_ref(), base)?;
        targets.push(SdTarget { time, density, epsilon });
    }
    if extrapolate && targets.len() != 2 {
        return Err(err("constraints", format!("extrapolation needs exactly 2 targets, got {}", targets.len())));
    }
    if targets.len() < 2 {
        return Err(err("constraints", format!("need at least 2 targets, got {}", targets.len())));
    }
    if targets.iter().any(|t| t.density.grid().dim() != targets[0].density.grid().dim()) {
        return Err(err("constraints", "targets have different dimensions"));
    }
    let init = match &raw.init {
        None => SdInit::QuantizedMiddle(targets.len() / 2),
        Some(spec) => match spec.mode {
            InitMode::QuantizedMiddle => {
                let m = spec.middle.unwrap_or(targets.len() / 2);
                if m >= targets.len() {
                    return Err(err("init.middle", format!("{m} is not a constraint index")));
                }
                SdInit::QuantizedMiddle(m)
            }
            InitMode::Coupled => SdInit::Coupled,
            InitMode::Warm => {
                let f = spec.file.as_ref().ok_or_else(|| err("init.file", "required by warm init"))?;
                let path = base.join(f);
                if !path.is_file() {
                    return Err(err("init.file", format!("{} does not exist", path.display())));
                }
                let text =
                    std::fs::read_to_string(&path).map_err(|source| CliError::Io { path: path.clone(), source })?;
                let (positions, velocities) = wass_splines::io::bundle_from_csv(&text)
                    .map_err(|e| err("init.file", format!("{}: {e}", path.display())))?;
                if positions.len() != targets.len() || positions[0].len() != particles {
                    return Err(err(
                        "init.file",
                        format!("expected {} knots x {particles} particles", targets.len()),
                    ));
                }
                SdInit::Warm { positions, velocities }
            }
        },
    };
    if let Some(spec) = &raw.init {
        if spec.mode != InitMode::QuantizedMiddle && spec.middle.is_some() {
            return Err(err("init.middle", "only used by quantized-middle init"));
        }
        if spec.mode != InitMode::Warm && spec.file.is_some() {
            return Err(err("init.file", "only used by warm init"));
        }
    }
    let path_cost = match raw.path_cost.unwrap_or(PathCostSpec::Spline) {
        PathCostSpec::Spline => PathCost::Spline,
        PathCostSpec::Speed => PathCost::Speed,
    };
    let penalty = match raw.penalty.unwrap_or(PenaltySpec::Auto) {
        PenaltySpec::Auto => PenaltyMode::Auto,
        PenaltySpec::Assignment => PenaltyMode::Assignment,
        PenaltySpec::Entropic { relative_epsilon } => {
            PenaltyMode::Entropic { relative_epsilon: positive("penalty.entropic.relative_epsilon", relative_epsilon)? }
        }
    };
    let mut stages = Vec::new();
    for (k, s) in raw.stages.iter().flatten().enumerate() {
        if s.epsilons.len() != targets.len() {
            return Err(err(
                format!("stages[{k}].epsilons"),
                format!("expected one epsilon per target ({}), got {}", targets.len(), s.epsilons.len()),
            ));
        }
        for (i, e) in s.epsilons.iter().enumerate() {
            positive(&format!("stages[{k}].epsilons[{i}]"), *e)?;
        }
        if !(s.noise >= 0.0 && s.noise.is_finite()) {
            return Err(err(format!("stages[{k}].noise"), format!("must be nonnegative, got {}", s.noise)));
        }
        stages.push((s.epsilons.clone(), s.noise));
    }
    if raw.stages.as_ref().is_some_and(|s| s.is_empty()) {
        return Err(err("stages", "give at least one stage or omit the field"));
    }
    let o = &raw.optimizer;
    let gtol = positive("optimizer.gtol", o.gtol.unwrap_or(1e-6))?;
    let max_iters = o.max_iters.unwrap_or(2000);
    let memory = o.memory.unwrap_or(10);
    let max_rounds = o.max_rounds.unwrap_or(50);
    for (name, v) in [("optimizer.max_iters", max_iters), ("optimizer.memory", memory), ("optimizer.max_rounds", max_rounds)] {
        if v == 0 {
            return Err(err(name, "must be at least 1"));
        }
    }
    let samples = raw.samples.unwrap_or(10);
    if samples < 1 {
        return Err(err("samples", "must be at least 1"));
    }
    Ok(SdScenario { targets, particles, init, path_cost, penalty, stages, gtol, max_iters, memory, max_rounds, samples })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(json: &str) -> Result<Resolved, CliError> {
        let raw: ScenarioConfig = serde_json::from_str(json).map_err(|e| err("config", e.to_string()))?;
        resolve(raw, Path::new("."), "t")
    }

    const BASE: &str = r#""schema_version": 1, "grid": {"nx": 20, "lo": [0], "hi": [1]},
        "constraints": [
            {"step": 0, "mixture": [{"mean": [0.3], "variance": 0.01}]},
            {"step": 2, "mixture": [{"mean": [0.5], "variance": 0.01}]},
            {"step": 4, "mixture": [{"mean": [0.6], "variance": 0.01}]}
        ]"#;

    #[test]
    fn resolves_mm_spline() {
        let r = parse(&format!(r#"{{"solver": "mm-spline", "epsilon": 0.01, "time": {{"n_steps": 5}}, {BASE}}}"#)).unwrap();
        let Scenario::Multimarginal(m) = r.scenario else { panic!() };
        assert_eq!(m.output_steps, vec![0, 1, 2, 3, 4]);
        assert_eq!(r.output_dir, Path::new("out/t"));
    }

    #[test]
    fn field_level_messages() {
        let e = parse(&format!(r#"{{"solver": "mm-spline", "time": {{"n_steps": 5}}, {BASE}}}"#)).unwrap_err();
        assert!(e.to_string().contains("epsilon"), "{e}");
        let e = parse(&format!(r#"{{"solver": "mm-spline", "epsilon": -1, "time": {{"n_steps": 5}}, {BASE}}}"#))
            .unwrap_err();
        assert!(e.to_string().contains("epsilon: must be positive"), "{e}");
        let e = parse(&format!(r#"{{"solver": "mm-splin", "epsilon": 1, {BASE}}}"#)).unwrap_err();
        assert!(e.to_string().contains("mm-splin"), "{e}");
        let e = parse(&format!(r#"{{"solver": "mm-geodesic", "epsilon": 1, "time": {{"n_steps": 3}}, {BASE}}}"#))
            .unwrap_err();
        assert!(e.to_string().contains("outside"), "{e}");
    }

    #[test]
    fn off_grid_time_cites_the_restriction() {
        let json = r#"{"schema_version": 1, "solver": "mm-geodesic", "epsilon": 0.1, "time": {"n_steps": 4, "dtau": 0.5},
            "grid": {"nx": 10, "lo": [0], "hi": [1]},
            "constraints": [{"time": 0, "mixture": [{"mean": [0.5], "variance": 0.1}]},
                            {"time": 0.75, "mixture": [{"mean": [0.5], "variance": 0.1}]}]}"#;
        let e = parse(json).unwrap_err();
        assert!(e.to_string().contains("constraints[1].time"));
        assert!(e.to_string().contains("only constrains grid times"));
    }

    #[test]
    fn negative_lambda_rejected() {
        let json = r#"{"schema_version": 1, "solver": "mm-extrapolate", "epsilon": 0.1, "lambda": -1,
            "grid": {"nx": 10, "lo": [0], "hi": [1]},
            "constraints": [{"step": 0, "mixture": [{"mean": [0.3], "variance": 0.01}]},
                            {"step": 1, "mixture": [{"mean": [0.4], "variance": 0.01}]}]}"#;
        assert!(parse(json).unwrap_err().to_string().contains("lambda"));
    }

    #[test]
    fn hermite_defaults_to_relative_epsilon() {
        let json = r#"{"schema_version": 1, "solver": "hermite",
            "clouds": [{"points": [{"x": [0], "v": [1]}]}, {"points": [{"x": [1], "v": [1]}]}]}"#;
        let Scenario::Hermite(h) = parse(json).unwrap().scenario else { panic!() };
        assert!(matches!(h.epsilon, EpsilonSpec::Relative { relative } if relative == 1e-2));
    }

    #[test]
    fn sd_needs_particles_and_epsilon() {
        let json = r#"{"schema_version": 1, "solver": "sd-spline", "epsilon": 0.1,
            "grid": {"nx": 10, "lo": [0], "hi": [1]},
            "constraints": [{"time": 0, "mixture": [{"mean": [0.3], "variance": 0.01}]},
                            {"time": 1, "mixture": [{"mean": [0.4], "variance": 0.01}]}]}"#;
        assert!(parse(json).unwrap_err().to_string().contains("particles"));
        let json = json.replace(r#""epsilon": 0.1,"#, r#""particles": 4,"#);
        assert!(parse(&json).unwrap_err().to_string().contains("epsilon"));
    }
}
