//! Constant-step gradient descent, radial initialization, Newton
//! refinement and critical-point classification.

use nalgebra::{DVector, SymmetricEigen};
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::factor::FactorMatrix;
use crate::instance::McInstance;
use crate::landscape::{
    evaluate, evaluate_into, gradient, restriction_map, subspace_coordinates, symmetric_min_eigen, HessianOperator, LandscapeError,
    LossSpec, Subspace,
};
use crate::rng::{self, Domain};

/// Default relative tolerance of [`is_success`].
pub const SUCCESS_REL_TOL: f64 = 1e-4;
/// Condition number above which Newton refuses the Hessian.
pub const MAX_CONDITION: f64 = 1e12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OptimizerError {
    #[error("invalid gradient descent config: {0}")]
    InvalidConfig(String),
    #[error("Hessian condition number {0:.3e} exceeds the limit")]
    SingularHessian(f64),
    #[error("gradient norm {grad_norm:.3e} above the Newton entry threshold {threshold:.3e}")]
    NotNearCritical { grad_norm: f64, threshold: f64 },
    #[error(transparent)]
    Landscape(#[from] LandscapeError),
}

/// Initialization distribution; both are rotation invariant.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InitDist {
    Gaussian { sigma: f64 },
    Ball { radius: f64 },
}

impl InitDist {
    pub fn validate(&self) -> Result<(), String> {
        match *self {
            InitDist::Gaussian { sigma } if !(sigma > 0.0 && sigma.is_finite()) => {
                Err(format!("sigma must be positive, got {sigma}"))
            }
            InitDist::Ball { radius } if !(radius > 0.0 && radius.is_finite()) => {
                Err(format!("radius must be positive, got {radius}"))
            }
            _ => Ok(()),
        }
    }
}

/// Panics on an invalid distribution.
pub fn sample_radial_init(dist: InitDist, n: usize, r: usize, seed: u64) -> FactorMatrix {
    if let Err(e) = dist.validate() {
        panic!("{e}");
    }
    let mut rng = rng::stream(seed, Domain::Init, 0);
    let mut x = FactorMatrix::from_fn(n, r, |_, _| StandardNormal.sample(&mut rng));
    match dist {
        InitDist::Gaussian { sigma } => x.scaled(sigma),
        InitDist::Ball { radius } => {
            let u: f64 = rng.random();
            let rho = radius * u.powf(1.0 / (n * r) as f64);
            let norm = x.frobenius_norm();
            if norm > 0.0 {
                x = x.scaled(rho / norm);
            }
            x
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GdConfig {
    pub step: f64,
    pub max_iters: usize,
    pub grad_tol: f64,
    pub divergence_bound: f64,
}

impl GdConfig {
    /// Defaults for `inst` started from `x0`: step `0.25 / L̂` with
    /// `L̂ = 4 (‖M*_Ω‖_F + 3 ρ²)` and `ρ = max(‖X0‖_F, ‖X*‖_F)`, which bounds
    /// the Hessian on the ball of radius `ρ`.
    pub fn for_instance(inst: &McInstance, x0: &FactorMatrix) -> Self {
        let om = inst.observed_norm();
        let xs = inst.ground_truth_factor().frobenius_norm();
        let rho = x0.frobenius_norm().max(xs);
        Self {
            step: 0.25 / (4.0 * (om + 3.0 * rho * rho)).max(f64::MIN_POSITIVE),
            max_iters: 200_000,
            grad_tol: 1e-9 * (1.0 + om),
            divergence_bound: 10.0 * (1.0 + xs),
        }
    }

    pub fn validate(&self) -> Result<(), OptimizerError> {
        let bad = |m: String| Err(OptimizerError::InvalidConfig(m));
        if !(self.step > 0.0 && self.step.is_finite()) {
            return bad(format!("step must be positive, got {}", self.step));
        }
        if !(self.grad_tol > 0.0) {
            return bad(format!("grad_tol must be positive, got {}", self.grad_tol));
        }
        if self.max_iters == 0 {
            return bad("max_iters must be positive".into());
        }
        if !(self.divergence_bound > 0.0) {
            return bad(format!("divergence_bound must be positive, got {}", self.divergence_bound));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Converged,
    MaxIters,
    Diverged,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunResult {
    pub final_point: FactorMatrix,
    pub final_objective: f64,
    pub final_grad_norm: f64,
    pub iterations: usize,
    pub status: RunStatus,
    /// Step in use at termination, after any halving.
    pub final_step: f64,
}

/// Accepts `f_new` as a non-increase of `f` up to evaluation rounding.
fn within_rounding(f_new: f64, f: f64, scale: f64) -> bool {
    f_new <= f + 1e-13 * f + 8.0 * f64::EPSILON * scale * f.sqrt()
}

/// Explicit Euler on the gradient flow with safety halving.
pub fn gradient_descent(
    inst: &McInstance,
    loss: &LossSpec,
    x0: &FactorMatrix,
    cfg: &GdConfig,
) -> Result<RunResult, OptimizerError> {
    gradient_descent_observed(inst, loss, x0, cfg, |_, _| {})
}

/// As [`gradient_descent`], calling `observe(k, X_k)` on every accepted iterate,
/// starting with `k = 0`.
pub fn gradient_descent_observed(
    inst: &McInstance,
    loss: &LossSpec,
    x0: &FactorMatrix,
    cfg: &GdConfig,
    mut observe: impl FnMut(usize, &FactorMatrix),
) -> Result<RunResult, OptimizerError> {
    cfg.validate()?;
    let scale = 1.0 + inst.observed_norm();
    let mut step = cfg.step;
    let mut x = x0.clone();
    let mut g = FactorMatrix::zeros(x.n(), x.r());
    let mut cand = x.clone();
    let mut gc = g.clone();
    let mut f = evaluate_into(inst, loss, &x, &mut g)?;
    observe(0, &x);
    let mut it = 0;
    let status = loop {
        let gn = g.frobenius_norm();
        if !(f.is_finite() && gn.is_finite()) || x.frobenius_norm() > cfg.divergence_bound {
            break RunStatus::Diverged;
        }
        if gn <= cfg.grad_tol {
            break RunStatus::Converged;
        }
        if it >= cfg.max_iters {
            break RunStatus::MaxIters;
        }
        let accepted = loop {
            for ((c, xv), gv) in cand.as_mut_slice().iter_mut().zip(x.as_slice()).zip(g.as_slice()) {
                *c = xv - step * gv;
            }
            let fc = evaluate_into(inst, loss, &cand, &mut gc)?;
            if fc.is_finite() && within_rounding(fc, f, scale) {
                break Some(fc);
            }
            step *= 0.5;
            if step < cfg.step * 1e-30 {
                break None;
            }
        };
        let Some(fc) = accepted else {
            break RunStatus::Diverged;
        };
        std::mem::swap(&mut x, &mut cand);
        std::mem::swap(&mut g, &mut gc);
        f = fc;
        it += 1;
        observe(it, &x);
    };
    Ok(RunResult {
        final_grad_norm: g.frobenius_norm(),
        final_point: x,
        final_objective: f,
        iterations: it,
        status,
        final_step: step,
    })
}

/// Coordinates Newton works in: full for rank one, the lower-triangular
/// tangent otherwise.
pub fn default_subspace(r: usize) -> Subspace {
    if r > 1 {
        Subspace::LowerTriangularTangent
    } else {
        Subspace::Full
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NewtonReport {
    pub point: FactorMatrix,
    pub grad_norm: f64,
    pub steps: usize,
}

pub fn newton_default_tol(inst: &McInstance) -> f64 {
    1e-12 * (1.0 + inst.observed_norm())
}

/// Gradient norm below which Newton refinement is attempted.
pub fn newton_entry_threshold(inst: &McInstance) -> f64 {
    1e-3 * (1.0 + inst.observed_norm())
}

pub fn newton_refine(
    inst: &McInstance,
    loss: &LossSpec,
    x: &FactorMatrix,
    subspace: Subspace,
    tol: Option<f64>,
) -> Result<FactorMatrix, OptimizerError> {
    newton_refine_report(inst, loss, x, subspace, tol).map(|r| r.point)
}

/// Damped Newton on `vec(X)`; a step is accepted only if it lowers the
/// gradient norm.
pub fn newton_refine_report(
    inst: &McInstance,
    loss: &LossSpec,
    x: &FactorMatrix,
    subspace: Subspace,
    tol: Option<f64>,
) -> Result<NewtonReport, OptimizerError> {
    let tol = tol.unwrap_or_else(|| newton_default_tol(inst));
    let mut g = gradient(inst, loss, x)?;
    let mut gn = g.frobenius_norm();
    if gn <= tol {
        return Ok(NewtonReport {
            point: x.clone(),
            grad_norm: gn,
            steps: 0,
        });
    }
    let threshold = newton_entry_threshold(inst);
    if !(gn <= threshold) {
        return Err(OptimizerError::NotNearCritical { grad_norm: gn, threshold });
    }
    let mut x = if subspace == Subspace::LowerTriangularTangent {
        let w = restriction_map(x);
        g = gradient(inst, loss, &w)?;
        gn = g.frobenius_norm();
        w
    } else {
        x.clone()
    };
    let coords = subspace_coordinates(x.n(), x.r(), subspace);
    let mut steps = 0;
    while gn > tol && steps < 50 {
        let h = HessianOperator::new(inst, loss, &x)?.dense();
        let sub = h.select_rows(&coords).select_columns(&coords);
        let eig = SymmetricEigen::new(sub);
        let amax = eig.eigenvalues.amax();
        let amin = eig.eigenvalues.iter().fold(f64::INFINITY, |a, v| a.min(v.abs()));
        if !(amin > 0.0) || amax / amin > MAX_CONDITION {
            return Err(OptimizerError::SingularHessian(if amin > 0.0 { amax / amin } else { f64::INFINITY }));
        }
        let gsub = DVector::from_iterator(coords.len(), coords.iter().map(|&c| g.as_slice()[c]));
        let q = &eig.eigenvectors;
        let coef = q.transpose() * gsub;
        let scaled = DVector::from_iterator(coef.len(), coef.iter().zip(eig.eigenvalues.iter()).map(|(c, l)| c / l));
        let dir_sub = q * scaled;
        let mut dir = FactorMatrix::zeros(x.n(), x.r());
        for (a, &c) in coords.iter().enumerate() {
            dir.as_mut_slice()[c] = -dir_sub[a];
        }
        let mut t = 1.0;
        let mut moved = false;
        for _ in 0..30 {
            let cand = x.axpy(t, &dir);
            let gc = gradient(inst, loss, &cand)?;
            let gcn = gc.frobenius_norm();
            if gcn < gn {
                x = cand;
                g = gc;
                gn = gcn;
                moved = true;
                break;
            }
            t *= 0.5;
        }
        steps += 1;
        if !moved {
            break;
        }
    }
    Ok(NewtonReport {
        point: x,
        grad_norm: gn,
        steps,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Classification {
    GlobalMin,
    SpuriousLocalMin,
    StrictSaddle,
    Degenerate,
    NotCritical,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tolerances {
    pub crit_tol: f64,
    pub global_tol: f64,
    /// `eig_tol = eig_rel * max(1, |tr H| / dim)`.
    pub eig_rel: f64,
}

impl Tolerances {
    pub fn for_instance(inst: &McInstance) -> Self {
        let om = inst.observed_norm();
        Self {
            crit_tol: 1e-8 * (1.0 + om),
            global_tol: 1e-8 * om * om,
            eig_rel: 1e-7,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PointInfo {
    pub classification: Classification,
    pub objective: f64,
    pub grad_norm: f64,
    /// Minimal Hessian eigenvalue on the classification subspace.
    pub lambda_min: f64,
    pub eig_tol: f64,
}

pub fn classify_critical_point(
    inst: &McInstance,
    loss: &LossSpec,
    x: &FactorMatrix,
    tols: &Tolerances,
) -> Result<Classification, OptimizerError> {
    inspect_point(inst, loss, x, tols).map(|i| i.classification)
}

/// Objective, gradient norm, `λ_min` and classification of `x`. Rank `r > 1`
/// uses the lower-triangular tangent at the orbit representative.
pub fn inspect_point(
    inst: &McInstance,
    loss: &LossSpec,
    x: &FactorMatrix,
    tols: &Tolerances,
) -> Result<PointInfo, OptimizerError> {
    let sub = default_subspace(x.r());
    let base = if sub == Subspace::LowerTriangularTangent && x.r() <= x.n() { restriction_map(x) } else { x.clone() };
    let (objective, g) = evaluate(inst, loss, &base)?;
    let grad_norm = g.frobenius_norm();
    let h = HessianOperator::new(inst, loss, &base)?.dense();
    let dim = h.nrows().max(1) as f64;
    let eig_tol = tols.eig_rel * (h.trace().abs() / dim).max(1.0);
    let coords = subspace_coordinates(base.n(), base.r(), sub);
    let (lambda_min, _) = symmetric_min_eigen(h.select_rows(&coords).select_columns(&coords));
    let classification = if !(grad_norm <= tols.crit_tol) {
        Classification::NotCritical
    } else if objective <= tols.global_tol {
        Classification::GlobalMin
    } else if lambda_min < -eig_tol {
        Classification::StrictSaddle
    } else if lambda_min > eig_tol {
        Classification::SpuriousLocalMin
    } else {
        Classification::Degenerate
    };
    Ok(PointInfo {
        classification,
        objective,
        grad_norm,
        lambda_min,
        eig_tol,
    })
}

/// `‖X̂X̂ᵀ - M*‖_F <= rel_tol ‖M*‖_F`.
pub fn is_success(inst: &McInstance, x_hat: &FactorMatrix, rel_tol: f64) -> bool {
    let truth = inst.ground_truth_factor();
    x_hat.n() == truth.n() && x_hat.product_distance(truth) <= rel_tol * truth.product_norm()
}
