//! Multistart enumeration of critical points and the theorem lower bounds.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::factor::FactorMatrix;
use crate::graph::BlockSparsityGraph;
use crate::instance::McInstance;
use crate::landscape::{canonicalize, LossSpec};
use crate::optimizer::{
    default_subspace, gradient_descent, inspect_point, newton_entry_threshold, newton_refine_report, sample_radial_init,
    Classification, GdConfig, InitDist, OptimizerError, RunStatus, Tolerances,
};
use crate::rng::{derive_seed, Domain};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CensusError {
    #[error("graph carries no designated independent set S")]
    MissingS,
    #[error("n_starts must be at least 1")]
    NoStarts,
    #[error(transparent)]
    Optimizer(#[from] OptimizerError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CensusConfig {
    pub init: InitDist,
    /// Iteration cap per start; `None` keeps the optimizer default.
    pub max_iters: Option<usize>,
    /// Gradient tolerance of the descent phase; `None` keeps the default.
    pub grad_tol: Option<f64>,
    /// Multiplier on the default step.
    pub step_scale: f64,
    pub dedup_radius: f64,
    /// Newton target; `None` uses the scaled default.
    pub newton_tol: Option<f64>,
}

impl Default for CensusConfig {
    fn default() -> Self {
        Self {
            init: InitDist::Gaussian { sigma: 1.0 },
            max_iters: None,
            grad_tol: None,
            step_scale: 1.0,
            dedup_radius: 1e-4,
            newton_tol: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CriticalPointRecord {
    pub canonical_rep: FactorMatrix,
    pub objective: f64,
    pub grad_norm: f64,
    pub lambda_min: f64,
    pub classification: Classification,
    pub hit_count: usize,
    /// Index of the first start that reached this class.
    pub first_start: usize,
}

impl CriticalPointRecord {
    /// Points in the orbit for rank one (`x` and `-x`), or 1 for rank `r > 1`
    /// and for the origin.
    pub fn rank_one_points(&self) -> usize {
        if self.canonical_rep.r() == 1 && self.canonical_rep.frobenius_norm() > 0.0 {
            2
        } else {
            1
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CensusReport {
    /// Sorted by objective, ties by first start.
    pub classes: Vec<CriticalPointRecord>,
    pub n_starts: usize,
    pub dedup_radius: f64,
    /// Starts whose endpoint was refined and classified.
    pub classified: usize,
    pub max_iters_hit: usize,
    pub diverged: usize,
}

impl CensusReport {
    pub fn orbits(&self, c: Classification) -> usize {
        self.classes.iter().filter(|k| k.classification == c).count()
    }

    /// Point count for rank one; equals the orbit count for `r > 1`.
    pub fn points(&self, c: Classification) -> usize {
        self.classes
            .iter()
            .filter(|k| k.classification == c)
            .map(|k| k.rank_one_points())
            .sum()
    }

    /// Same classes up to `tol` in canonical coordinates.
    pub fn same_classes(&self, other: &Self, tol: f64) -> bool {
        self.classes.len() == other.classes.len()
            && self.classes.iter().all(|a| {
                other
                    .classes
                    .iter()
                    .any(|b| a.classification == b.classification && a.canonical_rep.sub(&b.canonical_rep).frobenius_norm() <= tol)
            })
    }
}

/// Endpoint of one start after descent, refinement and classification.
#[derive(Debug, Clone, PartialEq)]
pub enum StartOutcome {
    Classified {
        rep: FactorMatrix,
        objective: f64,
        grad_norm: f64,
        lambda_min: f64,
        classification: Classification,
    },
    MaxIters,
    Diverged,
}

/// Initial point of start `index`.
pub fn start_point(inst: &McInstance, init: InitDist, seed: u64, index: usize) -> FactorMatrix {
    sample_radial_init(init, inst.n(), inst.r(), derive_seed(seed, Domain::Init, index as u64))
}

pub fn run_start(
    inst: &McInstance,
    loss: &LossSpec,
    cfg: &CensusConfig,
    seed: u64,
    index: usize,
) -> Result<StartOutcome, OptimizerError> {
    let x0 = start_point(inst, cfg.init, seed, index);
    let mut gd = GdConfig::for_instance(inst, &x0);
    gd.step *= cfg.step_scale;
    if let Some(m) = cfg.max_iters {
        gd.max_iters = m;
    }
    if let Some(t) = cfg.grad_tol {
        gd.grad_tol = t;
    }
    let run = gradient_descent(inst, loss, &x0, &gd)?;
    match run.status {
        RunStatus::Diverged => return Ok(StartOutcome::Diverged),
        RunStatus::MaxIters if run.final_grad_norm > newton_entry_threshold(inst) => {
            return Ok(StartOutcome::MaxIters)
        }
        _ => {}
    }
    let sub = default_subspace(inst.r());
    let refined = match newton_refine_report(inst, loss, &run.final_point, sub, cfg.newton_tol) {
        Ok(rep) => rep.point,
        Err(OptimizerError::SingularHessian(_)) => run.final_point,
        Err(OptimizerError::NotNearCritical { .. }) => return Ok(StartOutcome::MaxIters),
        Err(e) => return Err(e),
    };
    let rep = canonicalize(&refined);
    let info = inspect_point(inst, loss, &rep, &Tolerances::for_instance(inst))?;
    if run.status == RunStatus::MaxIters && info.classification == Classification::NotCritical {
        return Ok(StartOutcome::MaxIters);
    }
    Ok(StartOutcome::Classified {
        rep,
        objective: info.objective,
        grad_norm: info.grad_norm,
        lambda_min: info.lambda_min,
        classification: info.classification,
    })
}

/// Runs every start (in parallel on the current rayon pool) and merges the
/// endpoints in start order, so the report does not depend on scheduling.
pub fn multistart_census(
    inst: &McInstance,
    loss: &LossSpec,
    n_starts: usize,
    seed: u64,
    cfg: &CensusConfig,
) -> Result<CensusReport, CensusError> {
    if n_starts == 0 {
        return Err(CensusError::NoStarts);
    }
    let outcomes: Vec<StartOutcome> = (0..n_starts)
        .into_par_iter()
        .map(|i| run_start(inst, loss, cfg, seed, i))
        .collect::<Result<_, _>>()?;
    let mut report = CensusReport {
        classes: Vec::new(),
        n_starts,
        dedup_radius: cfg.dedup_radius,
        classified: 0,
        max_iters_hit: 0,
        diverged: 0,
    };
    for (i, o) in outcomes.into_iter().enumerate() {
        match o {
            StartOutcome::MaxIters => report.max_iters_hit += 1,
            StartOutcome::Diverged => report.diverged += 1,
            StartOutcome::Classified {
                rep,
                objective,
                grad_norm,
                lambda_min,
                classification,
            } => {
                report.classified += 1;
                let hit = report
                    .classes
                    .iter_mut()
                    .find(|c| c.canonical_rep.sub(&rep).frobenius_norm() <= cfg.dedup_radius);
                match hit {
                    Some(c) => c.hit_count += 1,
                    None => report.classes.push(CriticalPointRecord {
                        canonical_rep: rep,
                        objective,
                        grad_norm,
                        lambda_min,
                        classification,
                        hit_count: 1,
                        first_start: i,
                    }),
                }
            }
        }
    }
    report
        .classes
        .sort_by(|a, b| a.objective.total_cmp(&b.objective).then(a.first_start.cmp(&b.first_start)));
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundUnit {
    Points,
    Orbits,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct BoundCheck {
    pub unit: BoundUnit,
    pub bound: u128,
    pub found: u128,
    pub satisfied: bool,
}

/// `2^e - k`, saturating at `u128::MAX`.
fn pow2_minus(e: usize, k: u128) -> u128 {
    if e >= 128 {
        u128::MAX
    } else {
        (1u128 << e).saturating_sub(k)
    }
}

/// Spurious-solution lower bound from `|S|` and `r`: `2^{|S|} - 2` points for
/// rank one without `e2` edges, otherwise `2^{r(|S|-1)} - 1` orbits.
pub fn lower_bound(s_size: usize, r: usize, g: &BlockSparsityGraph) -> (BoundUnit, u128) {
    if r == 1 && g.e2().is_empty() {
        (BoundUnit::Points, pow2_minus(s_size, 2))
    } else {
        (BoundUnit::Orbits, pow2_minus(r * s_size.saturating_sub(1), 1))
    }
}

pub fn check_lower_bound(report: &CensusReport, g: &BlockSparsityGraph, r: usize) -> Result<BoundCheck, CensusError> {
    let s = g.independent_set().ok_or(CensusError::MissingS)?;
    let (unit, bound) = lower_bound(s.len(), r, g);
    let found = match unit {
        BoundUnit::Points => report.points(Classification::SpuriousLocalMin),
        BoundUnit::Orbits => report.orbits(Classification::SpuriousLocalMin),
    } as u128;
    Ok(BoundCheck {
        unit,
        bound,
        found,
        satisfied: found >= bound,
    })
}
