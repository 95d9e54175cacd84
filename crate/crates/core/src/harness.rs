//! Config-driven orchestration behind the command-line tool.
//!
//! A run reads one TOML file (JSON when the extension is `.json`), checks it,
//! dispatches on `command`, and writes its artifacts atomically into the
//! output directory. Every random draw descends from the single `seed`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::census::{check_lower_bound, lower_bound, multistart_census, BoundCheck, BoundUnit, CensusConfig, CensusError, CensusReport};
use crate::completion::{solve_by_propagation, CompletionError};
use crate::experiment::{emit_plot_data, success_rate_experiment, ExperimentError, GammaGrid, GraphSource, SuccessRateTable, SuccessSpec};
use crate::factor::FactorMatrix;
use crate::graph::{analyze_graph, build_erdos_renyi, build_named_pattern, induce_measurement_set, GraphAnalysis, GraphError, NamedPattern, PatternParams};
use crate::instance::{
    assemble_instance, build_canonical_ground_truth, check_class_membership, compute_incoherence, perturb, random_factor, InstanceError,
    InstanceFile, McInstance, MembershipReport,
};
use crate::io::write_atomic;
use crate::landscape::{canonicalize, LossSpec};
use crate::metric::{default_separation, estimate_complexity_metric, MetricBudget, MetricError, MetricEstimate};
use crate::optimizer::{
    default_subspace, gradient_descent, inspect_point, is_success, newton_entry_threshold, newton_refine, sample_radial_init, GdConfig, InitDist, OptimizerError,
    PointInfo, RunStatus, Tolerances, SUCCESS_REL_TOL,
};
use crate::rng::{derive_seed, Domain};

/// Environment variable that overrides the output directory.
pub const OUT_ENV: &str = "MCLANDSCAPE_OUT";

/// Configuration reference, also shipped as `docs/CONFIG.md`.
pub const CONFIG_REFERENCE: &str = include_str!("../../../docs/CONFIG.md");

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("cannot parse config {path}: {message}")]
    ConfigParse { path: PathBuf, message: String },
    #[error("invalid field `{field}`: {message}")]
    Validation { field: String, message: String },
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("i/o error on {path}: {message}")]
    Io { path: PathBuf, message: String },
}

impl HarnessError {
    /// 1 for parse and validation errors, 2 for numerical failures, 3 for I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::ConfigParse { .. } | Self::Validation { .. } => 1,
            Self::Numerical(_) => 2,
            Self::Io { .. } => 3,
        }
    }

    fn invalid(field: &str, message: impl Into<String>) -> Self {
        Self::Validation {
            field: field.to_string(),
            message: message.into(),
        }
    }

    fn missing(field: &str) -> Self {
        Self::invalid(field, "required field is missing")
    }

    fn io(path: &Path, e: impl std::fmt::Display) -> Self {
        Self::Io {
            path: path.to_path_buf(),
            message: e.to_string(),
        }
    }
}

impl From<OptimizerError> for HarnessError {
    fn from(e: OptimizerError) -> Self {
        match e {
            OptimizerError::InvalidConfig(m) => Self::invalid("descend", m),
            other => Self::Numerical(other.to_string()),
        }
    }
}

impl From<CompletionError> for HarnessError {
    fn from(e: CompletionError) -> Self {
        Self::Numerical(e.to_string())
    }
}

impl From<CensusError> for HarnessError {
    fn from(e: CensusError) -> Self {
        match e {
            CensusError::NoStarts => Self::invalid("census.n_starts", e.to_string()),
            CensusError::MissingS => Self::invalid("instance", e.to_string()),
            CensusError::Optimizer(o) => o.into(),
        }
    }
}

impl From<MetricError> for HarnessError {
    fn from(e: MetricError) -> Self {
        Self::invalid("metric", e.to_string())
    }
}

fn instance_err(e: InstanceError) -> HarnessError {
    HarnessError::invalid("instance", e.to_string())
}

fn graph_err(e: GraphError) -> HarnessError {
    HarnessError::invalid("instance", e.to_string())
}

fn experiment_err(e: ExperimentError, out: &Path) -> HarnessError {
    match e {
        ExperimentError::InvalidSpec(m) => HarnessError::invalid("experiment", m),
        ExperimentError::Graph(g) => HarnessError::invalid("experiment", g.to_string()),
        ExperimentError::Instance(i) => HarnessError::invalid("experiment", i.to_string()),
        ExperimentError::Io(e) => HarnessError::io(out, e),
        ExperimentError::Csv(e) => HarnessError::io(out, e),
        other => HarnessError::Numerical(other.to_string()),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    Gen,
    Solve,
    Descend,
    Census,
    Experiment,
    Metric,
    Check,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Self::Gen => "gen",
            Self::Solve => "solve",
            Self::Descend => "descend",
            Self::Census => "census",
            Self::Experiment => "experiment",
            Self::Metric => "metric",
            Self::Check => "check",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ErSection {
    pub p: Option<f64>,
    pub s_size: Option<usize>,
}

/// Where the instance comes from: a saved file, a named pattern, or an
/// Erdős–Rényi draw whose independent set is the first `s_size` vertices.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstanceSection {
    pub file: Option<PathBuf>,
    pub pattern: Option<NamedPattern>,
    pub erdos_renyi: Option<ErSection>,
    /// Number of blocks.
    pub m: Option<usize>,
    pub r: Option<usize>,
    pub k: Option<usize>,
    /// Add an `E2` path through the independent set; defaults to `r > 1`.
    pub e2_path: Option<bool>,
    pub gamma: Option<f64>,
    /// Use random Gaussian blocks instead of the canonical construction.
    pub random_factor: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DescendSection {
    pub init: Option<InitDist>,
    pub start: Option<usize>,
    pub step: Option<f64>,
    pub max_iters: Option<usize>,
    pub grad_tol: Option<f64>,
    pub refine: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CensusSection {
    pub n_starts: Option<usize>,
    pub init: Option<InitDist>,
    pub max_iters: Option<usize>,
    pub grad_tol: Option<f64>,
    pub step_scale: Option<f64>,
    pub dedup_radius: Option<f64>,
    pub newton_tol: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSection {
    pub n: Option<usize>,
    pub r: Option<usize>,
    pub p: Option<f64>,
    pub s_sizes: Option<Vec<usize>>,
    pub trials: Option<usize>,
    pub gamma_grid: Option<GammaGrid>,
    pub extra_gammas: Option<Vec<f64>>,
    /// Replace the grid by 100 points in `(0, 0.5)`.
    pub full_grid: Option<bool>,
    pub init: Option<InitDist>,
    pub rel_tol: Option<f64>,
    pub max_iters: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricSection {
    pub restarts: Option<usize>,
    pub iters: Option<usize>,
    pub separation: Option<f64>,
    pub feas_tol: Option<f64>,
    pub rho0: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub command: Option<Command>,
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub out_dir: Option<PathBuf>,
    pub instance: Option<InstanceSection>,
    pub descend: Option<DescendSection>,
    pub census: Option<CensusSection>,
    pub experiment: Option<ExperimentSection>,
    pub metric: Option<MetricSection>,
}

impl ExperimentConfig {
    /// TOML, or JSON when `path` ends in `.json`.
    pub fn parse(text: &str, path: &Path) -> Result<Self, HarnessError> {
        let json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
        let parsed = if json {
            serde_json::from_str(text).map_err(|e| e.to_string())
        } else {
            toml::from_str(text).map_err(|e| e.to_string())
        };
        parsed.map_err(|message| HarnessError::ConfigParse {
            path: path.to_path_buf(),
            message,
        })
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        Self::parse(&text, path)
    }
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub command: Option<Command>,
    pub seed: Option<u64>,
    pub out_dir: Option<PathBuf>,
    pub threads: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub command: Command,
    pub outputs: Vec<PathBuf>,
    /// One-line outcome, e.g. the bound-check verdict of a census.
    pub verdict: String,
}

fn pos_f64(v: f64, field: &str) -> Result<f64, HarnessError> {
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(HarnessError::invalid(field, format!("must be positive and finite, got {v}")))
    }
}

fn pos_usize(v: usize, field: &str) -> Result<usize, HarnessError> {
    if v >= 1 {
        Ok(v)
    } else {
        Err(HarnessError::invalid(field, "must be at least 1"))
    }
}

fn check_init(init: InitDist, field: &str) -> Result<InitDist, HarnessError> {
    init.validate().map_err(|m| HarnessError::invalid(field, m))?;
    Ok(init)
}

fn default_init() -> InitDist {
    InitDist::Gaussian { sigma: 1.0 }
}

/// The instance described by `[instance]`, with relative paths resolved
/// against `base`.
pub fn build_instance(sec: &InstanceSection, seed: u64, base: &Path) -> Result<McInstance, HarnessError> {
    let sources = [sec.file.is_some(), sec.pattern.is_some(), sec.erdos_renyi.is_some()];
    match sources.iter().filter(|&&b| b).count() {
        1 => {}
        0 => return Err(HarnessError::invalid("instance.pattern", "give one of `file`, `pattern` or `erdos_renyi`")),
        _ => return Err(HarnessError::invalid("instance.pattern", "`file`, `pattern` and `erdos_renyi` are exclusive")),
    }
    if let Some(file) = &sec.file {
        let path = if file.is_absolute() { file.clone() } else { base.join(file) };
        let text = std::fs::read_to_string(&path).map_err(|e| HarnessError::io(&path, e))?;
        let f: InstanceFile = serde_json::from_str(&text).map_err(|e| HarnessError::ConfigParse {
            path: path.clone(),
            message: e.to_string(),
        })?;
        return McInstance::from_file(f).map_err(instance_err);
    }
    let m = pos_usize(sec.m.ok_or_else(|| HarnessError::missing("instance.m"))?, "instance.m")?;
    let r = pos_usize(sec.r.unwrap_or(1), "instance.r")?;
    let gamma = sec.gamma.unwrap_or(0.0);
    if !(gamma >= 0.0 && gamma.is_finite()) {
        return Err(HarnessError::invalid("instance.gamma", format!("must be nonnegative, got {gamma}")));
    }
    let mut g = if let Some(pattern) = sec.pattern {
        let mut params = PatternParams::new(m).with_r(r);
        if matches!(pattern, NamedPattern::Cross | NamedPattern::AugmentedCross) {
            match sec.k {
                None => return Err(HarnessError::missing("instance.k")),
                Some(k) if k >= m => return Err(HarnessError::invalid("instance.k", format!("must be below m = {m}, got {k}"))),
                _ => {}
            }
        }
        if let Some(k) = sec.k {
            params = params.with_k(k);
        }
        build_named_pattern(pattern, params).map_err(graph_err)?
    } else {
        let er = sec.erdos_renyi.as_ref().expect("checked above");
        let p = er.p.ok_or_else(|| HarnessError::missing("instance.erdos_renyi.p"))?;
        if !(0.0..=1.0).contains(&p) {
            return Err(HarnessError::invalid("instance.erdos_renyi.p", format!("must lie in [0, 1], got {p}")));
        }
        let s_size = er.s_size.ok_or_else(|| HarnessError::missing("instance.erdos_renyi.s_size"))?;
        if s_size == 0 || s_size > m {
            return Err(HarnessError::invalid("instance.erdos_renyi.s_size", format!("must lie in 1..={m}")));
        }
        let s: Vec<usize> = (0..s_size).collect();
        build_erdos_renyi(m, p, &s, derive_seed(seed, Domain::ErdosRenyi, 0)).map_err(graph_err)?
    };
    let s: Option<Vec<usize>> = g.independent_set().map(|s| s.iter().copied().collect());
    if sec.e2_path.unwrap_or(r > 1) {
        if let Some(s) = &s {
            g = g.with_e2_path(s).map_err(graph_err)?;
        }
    }
    let n = m * r;
    let x = if sec.random_factor.unwrap_or(false) {
        random_factor(n, r, derive_seed(seed, Domain::RandomFactor, 0))
    } else {
        let s = s.ok_or_else(|| {
            HarnessError::invalid("instance.random_factor", "the graph has no independent set; set `random_factor = true`")
        })?;
        build_canonical_ground_truth(&g, &s, n, r).map_err(instance_err)?
    };
    let x = if gamma > 0.0 {
        perturb(&x, gamma, derive_seed(seed, Domain::Perturbation, 0))
    } else {
        x
    };
    let om = induce_measurement_set(&g, n, r).map_err(graph_err)?;
    assemble_instance(x, om, Some(g)).map_err(instance_err)
}

fn instance_of(cfg: &ExperimentConfig, seed: u64, base: &Path) -> Result<McInstance, HarnessError> {
    let sec = cfg.instance.as_ref().ok_or_else(|| HarnessError::missing("instance"))?;
    build_instance(sec, seed, base)
}

/// Success-rate spec for each entry of `s_sizes`.
pub fn experiment_specs(sec: &ExperimentSection, seed: u64) -> Result<Vec<SuccessSpec>, HarnessError> {
    let n = pos_usize(sec.n.ok_or_else(|| HarnessError::missing("experiment.n"))?, "experiment.n")?;
    let r = pos_usize(sec.r.unwrap_or(1), "experiment.r")?;
    let p = sec.p.ok_or_else(|| HarnessError::missing("experiment.p"))?;
    if !(0.0..=1.0).contains(&p) {
        return Err(HarnessError::invalid("experiment.p", format!("must lie in [0, 1], got {p}")));
    }
    let s_sizes = sec.s_sizes.clone().ok_or_else(|| HarnessError::missing("experiment.s_sizes"))?;
    if s_sizes.is_empty() {
        return Err(HarnessError::invalid("experiment.s_sizes", "must be nonempty"));
    }
    let trials = pos_usize(sec.trials.ok_or_else(|| HarnessError::missing("trials"))?, "trials")?;
    let grid = if sec.full_grid.unwrap_or(false) {
        GammaGrid { count: 100, lo: 0.0, hi: 0.5 }
    } else {
        sec.gamma_grid.unwrap_or(GammaGrid { count: 10, lo: 0.0, hi: 0.5 })
    };
    if grid.count == 0 || !(grid.lo < grid.hi) || !grid.lo.is_finite() || !grid.hi.is_finite() {
        return Err(HarnessError::invalid("experiment.gamma_grid", "need count >= 1 and lo < hi"));
    }
    let mut gammas = grid.values();
    for &g in sec.extra_gammas.as_deref().unwrap_or(&[]) {
        if !(g >= 0.0 && g.is_finite()) {
            return Err(HarnessError::invalid("experiment.extra_gammas", format!("must be nonnegative, got {g}")));
        }
        gammas.push(g);
    }
    let init = check_init(sec.init.unwrap_or_else(default_init), "experiment.init")?;
    let rel_tol = pos_f64(sec.rel_tol.unwrap_or(SUCCESS_REL_TOL), "experiment.rel_tol")?;
    if let Some(mi) = sec.max_iters {
        pos_usize(mi, "experiment.max_iters")?;
    }
    Ok(s_sizes
        .into_iter()
        .map(|s_size| SuccessSpec {
            graph: GraphSource::ErdosRenyi { p, s_size },
            n,
            r,
            gammas: gammas.clone(),
            trials,
            init,
            seed,
            rel_tol,
            max_iters: sec.max_iters,
        })
        .collect())
}

fn census_config(sec: &CensusSection) -> Result<(usize, CensusConfig), HarnessError> {
    let n_starts = pos_usize(sec.n_starts.ok_or_else(|| HarnessError::missing("census.n_starts"))?, "census.n_starts")?;
    let d = CensusConfig::default();
    let cfg = CensusConfig {
        init: check_init(sec.init.unwrap_or(d.init), "census.init")?,
        max_iters: sec.max_iters.map(|v| pos_usize(v, "census.max_iters")).transpose()?,
        grad_tol: sec.grad_tol.map(|v| pos_f64(v, "census.grad_tol")).transpose()?,
        step_scale: pos_f64(sec.step_scale.unwrap_or(d.step_scale), "census.step_scale")?,
        dedup_radius: pos_f64(sec.dedup_radius.unwrap_or(d.dedup_radius), "census.dedup_radius")?,
        newton_tol: sec.newton_tol.map(|v| pos_f64(v, "census.newton_tol")).transpose()?,
    };
    Ok((n_starts, cfg))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CensusArtifact {
    pub report: CensusReport,
    pub bound_check: Option<BoundCheck>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolveArtifact {
    pub recovered_factor: FactorMatrix,
    pub operations_estimate: u64,
    pub relative_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DescendArtifact {
    pub start: usize,
    pub status: RunStatus,
    pub iterations: usize,
    pub final_objective: f64,
    pub final_grad_norm: f64,
    pub final_point: FactorMatrix,
    /// Canonical representative after Newton polishing, when requested.
    pub refined_point: Option<FactorMatrix>,
    pub point_info: Option<PointInfo>,
    pub success: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckArtifact {
    pub n: usize,
    pub r: usize,
    pub graph: Option<GraphAnalysis>,
    pub membership: Option<MembershipReport>,
    pub incoherence: Option<f64>,
    pub bound_unit: Option<BoundUnit>,
    pub bound: Option<u128>,
}

fn json_bytes<T: Serialize>(v: &T) -> Vec<u8> {
    let mut s = serde_json::to_string_pretty(v).expect("artifact serializes");
    s.push('\n');
    s.into_bytes()
}

fn write_json<T: Serialize>(dir: &Path, name: &str, v: &T, outputs: &mut Vec<PathBuf>) -> Result<(), HarnessError> {
    let path = dir.join(name);
    write_atomic(&path, &json_bytes(v)).map_err(|e| HarnessError::io(&path, e))?;
    outputs.push(path);
    Ok(())
}

/// Load `path`, apply `ov`, and run.
pub fn run_config(path: &Path, ov: &Overrides) -> Result<RunSummary, HarnessError> {
    let cfg = ExperimentConfig::load(path)?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    run(&cfg, &base, ov)
}

/// Run a parsed config; `base` anchors relative input paths.
pub fn run(cfg: &ExperimentConfig, base: &Path, ov: &Overrides) -> Result<RunSummary, HarnessError> {
    let command = match (ov.command, cfg.command) {
        (Some(a), Some(b)) if a != b => {
            return Err(HarnessError::invalid(
                "command",
                format!("config says `{}` but `{}` was requested", b.name(), a.name()),
            ))
        }
        (Some(a), _) | (None, Some(a)) => a,
        (None, None) => return Err(HarnessError::missing("command")),
    };
    let seed = ov.seed.or(cfg.seed).ok_or_else(|| HarnessError::missing("seed"))?;
    let threads = ov.threads.or(cfg.threads);
    if threads == Some(0) {
        return Err(HarnessError::invalid("threads", "must be at least 1"));
    }
    let out_dir = ov.out_dir.clone().or_else(|| cfg.out_dir.clone()).unwrap_or_else(|| PathBuf::from("out"));
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(t) = threads {
        builder = builder.num_threads(t);
    }
    let pool = builder.build().map_err(|e| HarnessError::invalid("threads", e.to_string()))?;
    pool.install(|| dispatch(command, cfg, seed, base, &out_dir))
}

fn dispatch(command: Command, cfg: &ExperimentConfig, seed: u64, base: &Path, out: &Path) -> Result<RunSummary, HarnessError> {
    let mut outputs = Vec::new();
    let loss = LossSpec::l2();
    let verdict = match command {
        Command::Gen => {
            let inst = instance_of(cfg, seed, base)?;
            write_json(out, "instance.json", &inst.to_file(), &mut outputs)?;
            format!("instance n = {}, r = {}, |Ω| = {}", inst.n(), inst.r(), inst.omega().len())
        }
        Command::Solve => {
            let inst = instance_of(cfg, seed, base)?;
            let res = solve_by_propagation(&inst)?;
            let art = SolveArtifact {
                relative_error: res.relative_error(&inst),
                operations_estimate: res.operations_estimate,
                recovered_factor: res.recovered_factor,
            };
            write_json(out, "completion.json", &art, &mut outputs)?;
            format!("relative error {:.3e}", art.relative_error)
        }
        Command::Descend => {
            let inst = instance_of(cfg, seed, base)?;
            let sec = cfg.descend.clone().unwrap_or_default();
            let init = check_init(sec.init.unwrap_or_else(default_init), "descend.init")?;
            let start = sec.start.unwrap_or(0);
            let x0 = sample_radial_init(init, inst.n(), inst.r(), derive_seed(seed, Domain::Init, start as u64));
            let mut gd = GdConfig::for_instance(&inst, &x0);
            if let Some(s) = sec.step {
                gd.step = pos_f64(s, "descend.step")?;
            }
            if let Some(m) = sec.max_iters {
                gd.max_iters = pos_usize(m, "descend.max_iters")?;
            }
            if let Some(t) = sec.grad_tol {
                gd.grad_tol = pos_f64(t, "descend.grad_tol")?;
            }
            let run = gradient_descent(&inst, &loss, &x0, &gd)?;
            let refine = sec.refine.unwrap_or(true) && run.status != RunStatus::Diverged && run.final_grad_norm <= newton_entry_threshold(&inst);
            let (refined_point, point_info) = if refine {
                let polished = match newton_refine(&inst, &loss, &run.final_point, default_subspace(inst.r()), None) {
                    Ok(p) => p,
                    Err(OptimizerError::SingularHessian(_)) => run.final_point.clone(),
                    Err(e) => return Err(e.into()),
                };
                let p = canonicalize(&polished);
                let info = inspect_point(&inst, &loss, &p, &Tolerances::for_instance(&inst))?;
                (Some(p), Some(info))
            } else {
                (None, None)
            };
            let success = is_success(&inst, refined_point.as_ref().unwrap_or(&run.final_point), SUCCESS_REL_TOL);
            let art = DescendArtifact {
                start,
                status: run.status,
                iterations: run.iterations,
                final_objective: run.final_objective,
                final_grad_norm: run.final_grad_norm,
                final_point: run.final_point,
                refined_point,
                point_info,
                success,
            };
            write_json(out, "descend.json", &art, &mut outputs)?;
            format!("{:?} after {} iterations, success = {}", art.status, art.iterations, art.success)
        }
        Command::Census => {
            let inst = instance_of(cfg, seed, base)?;
            let sec = cfg.census.as_ref().ok_or_else(|| HarnessError::missing("census"))?;
            let (n_starts, ccfg) = census_config(sec)?;
            let report = multistart_census(&inst, &loss, n_starts, seed, &ccfg)?;
            let bound_check = match inst.graph() {
                Some(g) if g.independent_set().is_some() => Some(check_lower_bound(&report, g, inst.r())?),
                _ => None,
            };
            let verdict = match &bound_check {
                Some(b) => format!(
                    "{} classes; spurious {:?} found {} vs bound {}: {}",
                    report.classes.len(),
                    b.unit,
                    b.found,
                    b.bound,
                    if b.satisfied { "satisfied" } else { "not satisfied" }
                ),
                None => format!("{} classes", report.classes.len()),
            };
            write_json(out, "census.json", &CensusArtifact { report, bound_check }, &mut outputs)?;
            verdict
        }
        Command::Experiment => {
            let sec = cfg.experiment.as_ref().ok_or_else(|| HarnessError::missing("experiment"))?;
            let mut table = SuccessRateTable::default();
            for spec in experiment_specs(sec, seed)? {
                table.extend(success_rate_experiment(&spec, &loss).map_err(|e| experiment_err(e, out))?);
            }
            let path = out.join("success_rates.csv");
            emit_plot_data(&table, &path).map_err(|e| experiment_err(e, &path))?;
            outputs.push(path);
            format!("{} rows", table.rows.len())
        }
        Command::Metric => {
            let inst = instance_of(cfg, seed, base)?;
            let sec = cfg.metric.clone().unwrap_or_default();
            let d = MetricBudget::default();
            let budget = MetricBudget {
                restarts: pos_usize(sec.restarts.unwrap_or(d.restarts), "metric.restarts")?,
                iters: sec.iters.unwrap_or(d.iters),
                feas_tol: sec.feas_tol.map(|v| pos_f64(v, "metric.feas_tol")).transpose()?,
                rho0: pos_f64(sec.rho0.unwrap_or(d.rho0), "metric.rho0")?,
            };
            let sep = match sec.separation {
                Some(s) => pos_f64(s, "metric.separation")?,
                None => pos_f64(default_separation(&inst), "metric.separation")?,
            };
            let est: MetricEstimate = estimate_complexity_metric(&inst, &budget, sep, seed)?;
            let verdict = match est.value {
                Some(v) => format!("estimate {v:.6e}"),
                None => "no pair found".to_string(),
            };
            write_json(out, "metric.json", &est, &mut outputs)?;
            verdict
        }
        Command::Check => {
            let inst = instance_of(cfg, seed, base)?;
            let graph = inst.graph().map(analyze_graph);
            let membership = inst.graph().map(|_| check_class_membership(&inst)).transpose().map_err(instance_err)?;
            let incoherence = compute_incoherence(&inst).ok();
            let (bound_unit, bound) = match inst.graph().and_then(|g| g.independent_set().map(|s| (g, s.len()))) {
                Some((g, s)) => {
                    let (u, b) = lower_bound(s, inst.r(), g);
                    (Some(u), Some(b))
                }
                None => (None, None),
            };
            let art = CheckArtifact {
                n: inst.n(),
                r: inst.r(),
                graph,
                membership,
                incoherence,
                bound_unit,
                bound,
            };
            write_json(out, "check.json", &art, &mut outputs)?;
            match &art.membership {
                Some(m) => format!("in class: {}", m.in_class),
                None => "no graph attached".to_string(),
            }
        }
    };
    Ok(RunSummary {
        command,
        outputs,
        verdict,
    })
}
