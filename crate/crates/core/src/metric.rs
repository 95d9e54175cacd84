//! Heuristic upper bound on the distance from the observed measurements to
//! the set of measurements with more than one rank-`r` completion.

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::factor::FactorMatrix;
use crate::instance::{dot, McInstance};
use crate::rng::{self, Domain};

/// Iterations per penalty round.
pub const ROUND_LEN: usize = 2000;
/// Penalty rounds; `ρ` grows tenfold per round and then stays.
pub const ROUNDS: usize = 5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricError {
    #[error("invalid metric budget: {0}")]
    InvalidBudget(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricBudget {
    pub restarts: usize,
    pub iters: usize,
    /// Feasibility tolerance on `‖A(X1X1ᵀ) - A(X2X2ᵀ)‖_F`; defaults to
    /// `1e-2` times the separation.
    pub feas_tol: Option<f64>,
    /// Initial penalty weight.
    pub rho0: f64,
}

impl Default for MetricBudget {
    fn default() -> Self {
        Self {
            restarts: 16,
            iters: ROUND_LEN * ROUNDS,
            feas_tol: None,
            rho0: 10.0,
        }
    }
}

/// Default separation: `1e-3 ‖M*‖_F`.
pub fn default_separation(inst: &McInstance) -> f64 {
    1e-3 * inst.truth_norm()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricEstimate {
    /// `None` when no feasible pair was found within the budget.
    pub value: Option<f64>,
    pub witness_pair: Option<(FactorMatrix, FactorMatrix)>,
    /// `‖X1X1ᵀ - X2X2ᵀ‖_F` of the witness, 0 without one.
    pub separation_achieved: f64,
    /// `‖A(X1X1ᵀ) - A(X2X2ᵀ)‖_F` of the witness, 0 without one.
    pub feasibility_residual: f64,
    pub separation: f64,
    pub feas_tol: f64,
}

impl MetricEstimate {
    pub fn no_pair_found(&self) -> bool {
        self.value.is_none()
    }
}

/// `(‖A(M*) - A(X1X1ᵀ)‖_F, ‖A(X1X1ᵀ) - A(X2X2ᵀ)‖_F, ‖X1X1ᵀ - X2X2ᵀ‖_F)`.
pub fn pair_terms(inst: &McInstance, x1: &FactorMatrix, x2: &FactorMatrix) -> (f64, f64, f64) {
    let (fit, gap) = omega_terms(inst, x1, x2);
    (fit, gap, x1.product_distance(x2))
}

fn omega_terms(inst: &McInstance, x1: &FactorMatrix, x2: &FactorMatrix) -> (f64, f64) {
    let (mut fit, mut gap) = (0.0, 0.0);
    for &(i, j, m) in inst.observed_upper() {
        let w = if i == j { 1.0 } else { 2.0 };
        let p1 = dot(x1.row(i), x1.row(j));
        let p2 = dot(x2.row(i), x2.row(j));
        fit += w * (m - p1) * (m - p1);
        gap += w * (p1 - p2) * (p1 - p2);
    }
    (fit.sqrt(), gap.sqrt())
}

struct Best {
    value: f64,
    x1: FactorMatrix,
    x2: FactorMatrix,
    sep: f64,
    gap: f64,
}

/// Penalized objective and gradient at `(x1, x2)`.
fn penalty_eval(
    inst: &McInstance,
    x1: &FactorMatrix,
    x2: &FactorMatrix,
    rho: f64,
    sep: f64,
    g1: &mut FactorMatrix,
    g2: &mut FactorMatrix,
) -> (f64, f64, f64, f64) {
    let r = x1.r();
    g1.as_mut_slice().fill(0.0);
    g2.as_mut_slice().fill(0.0);
    let (mut fit, mut gap) = (0.0, 0.0);
    for &(i, j, m) in inst.observed_upper() {
        let w = if i == j { 1.0 } else { 2.0 };
        let p1 = dot(x1.row(i), x1.row(j));
        let p2 = dot(x2.row(i), x2.row(j));
        let e1 = p1 - m;
        let e2 = p1 - p2;
        fit += w * e1 * e1;
        gap += w * e2 * e2;
        // d/dX of Σ_ordered c (X_i·X_j): c X_j into row i, c X_i into row j.
        let c1 = 2.0 * (e1 + rho * e2);
        let c2 = -2.0 * rho * e2;
        for k in 0..r {
            let (a1, b1) = (x1.get(i, k), x1.get(j, k));
            let (a2, b2) = (x2.get(i, k), x2.get(j, k));
            if i == j {
                g1.set(i, k, g1.get(i, k) + c1 * 2.0 * a1);
                g2.set(i, k, g2.get(i, k) + c2 * 2.0 * a2);
            } else {
                g1.set(i, k, g1.get(i, k) + 2.0 * c1 * b1);
                g1.set(j, k, g1.get(j, k) + 2.0 * c1 * a1);
                g2.set(i, k, g2.get(i, k) + 2.0 * c2 * b2);
                g2.set(j, k, g2.get(j, k) + 2.0 * c2 * a2);
            }
        }
    }
    // Separation via r x r products: D X1 = X1 (X1ᵀX1) - X2 (X2ᵀX1).
    let (a, b) = (x1.to_dmatrix(), x2.to_dmatrix());
    let (aa, bb, ab) = (a.transpose() * &a, b.transpose() * &b, a.transpose() * &b);
    let d2 = (aa.norm_squared() + bb.norm_squared() - 2.0 * ab.norm_squared()).max(0.0);
    let d = d2.sqrt();
    let short = (sep - d).max(0.0);
    let mut phi = fit + rho * gap + rho * short * short;
    if short > 0.0 && d > 0.0 {
        // ∂d/∂X1 = 2 D X1 / d, ∂d/∂X2 = -2 D X2 / d.
        let dx1 = &a * &aa - &b * ab.transpose();
        let dx2 = &a * &ab - &b * &bb;
        let c = -2.0 * rho * short * 2.0 / d;
        for i in 0..x1.n() {
            for k in 0..r {
                g1.set(i, k, g1.get(i, k) + c * dx1[(i, k)]);
                g2.set(i, k, g2.get(i, k) - c * dx2[(i, k)]);
            }
        }
    }
    if !phi.is_finite() {
        phi = f64::INFINITY;
    }
    (phi, fit.sqrt(), gap.sqrt(), d)
}

fn run_restart(inst: &McInstance, budget: &MetricBudget, sep: f64, feas_tol: f64, seed: u64, idx: usize) -> Option<Best> {
    let (n, r) = (inst.n(), inst.r());
    let mut rng = rng::stream(seed, Domain::Metric, idx as u64);
    let sigma = (inst.truth_norm().max(1e-12) / n as f64).sqrt();
    let mut x1 = FactorMatrix::from_fn(n, r, |_, _| { let z: f64 = StandardNormal.sample(&mut rng); sigma * z });
    let mut x2 = FactorMatrix::from_fn(n, r, |_, _| { let z: f64 = StandardNormal.sample(&mut rng); sigma * z });
    let (mut g1, mut g2) = (FactorMatrix::zeros(n, r), FactorMatrix::zeros(n, r));
    let (mut h1, mut h2) = (g1.clone(), g2.clone());
    let scale = inst.observed_norm() + 3.0 * inst.ground_truth_factor().frobenius_norm().powi(2) + 1.0;
    let mut best: Option<Best> = None;
    let mut round = usize::MAX;
    let mut rho = budget.rho0;
    let mut step = 0.0;
    let mut phi = 0.0;
    for t in 0..=budget.iters {
        let k = (t / ROUND_LEN).min(ROUNDS - 1);
        if k != round {
            round = k;
            rho = budget.rho0 * 10f64.powi(k as i32);
            step = 0.1 / (4.0 * scale * (1.0 + 2.0 * rho));
            phi = penalty_eval(inst, &x1, &x2, rho, sep, &mut g1, &mut g2).0;
        }
        let (fit, gap, d) = pair_terms_fast(inst, &x1, &x2);
        if gap <= feas_tol && d >= sep && best.as_ref().is_none_or(|b| fit < b.value) {
            best = Some(Best {
                value: fit,
                x1: x1.clone(),
                x2: x2.clone(),
                sep: d,
                gap,
            });
        }
        if t == budget.iters {
            break;
        }
        loop {
            let c1 = x1.axpy(-step, &g1);
            let c2 = x2.axpy(-step, &g2);
            let (p, _, _, _) = penalty_eval(inst, &c1, &c2, rho, sep, &mut h1, &mut h2);
            if p <= phi * (1.0 + 1e-13) {
                x1 = c1;
                x2 = c2;
                std::mem::swap(&mut g1, &mut h1);
                std::mem::swap(&mut g2, &mut h2);
                phi = p;
                step *= 1.25;
                break;
            }
            step *= 0.5;
            if step < 1e-300 {
                return best;
            }
        }
    }
    best
}

/// As [`pair_terms`] but with the separation from `r x r` products.
fn pair_terms_fast(inst: &McInstance, x1: &FactorMatrix, x2: &FactorMatrix) -> (f64, f64, f64) {
    let (fit, gap) = omega_terms(inst, x1, x2);
    let (a, b) = (x1.to_dmatrix(), x2.to_dmatrix());
    let d2 = (a.transpose() * &a).norm_squared() + (b.transpose() * &b).norm_squared()
        - 2.0 * (a.transpose() * &b).norm_squared();
    (fit, gap, d2.max(0.0).sqrt())
}

/// Multistart penalty descent on `(X1, X2)` minimizing
/// `‖A(M*) - A(X1X1ᵀ)‖² + ρ‖A(X1X1ᵀ) - A(X2X2ᵀ)‖² + ρ(sep - ‖X1X1ᵀ - X2X2ᵀ‖)₊²`.
/// Returns the smallest `‖A(M*) - A(X1X1ᵀ)‖_F` over checkpoints where the
/// pair is feasible. The result can only decrease as the budget grows.
pub fn estimate_complexity_metric(
    inst: &McInstance,
    budget: &MetricBudget,
    separation: f64,
    seed: u64,
) -> Result<MetricEstimate, MetricError> {
    if !(separation > 0.0 && separation.is_finite()) {
        return Err(MetricError::InvalidBudget(format!("separation must be positive, got {separation}")));
    }
    let feas_tol = budget.feas_tol.unwrap_or(1e-2 * separation);
    if !(feas_tol > 0.0 && feas_tol < separation) {
        return Err(MetricError::InvalidBudget(format!(
            "feas_tol = {feas_tol} must lie in (0, separation = {separation})"
        )));
    }
    if budget.restarts == 0 {
        return Err(MetricError::InvalidBudget("restarts must be at least 1".into()));
    }
    if !(budget.rho0 > 0.0) {
        return Err(MetricError::InvalidBudget(format!("rho0 must be positive, got {}", budget.rho0)));
    }
    let results: Vec<Option<Best>> = (0..budget.restarts)
        .into_par_iter()
        .map(|i| run_restart(inst, budget, separation, feas_tol, seed, i))
        .collect();
    let best = results
        .into_iter()
        .flatten()
        .fold(None::<Best>, |acc, b| match acc {
            Some(a) if a.value <= b.value => Some(a),
            _ => Some(b),
        });
    Ok(match best {
        Some(b) => MetricEstimate {
            value: Some(b.value),
            separation_achieved: b.sep,
            feasibility_residual: b.gap,
            witness_pair: Some((b.x1, b.x2)),
            separation,
            feas_tol,
        },
        None => MetricEstimate {
            value: None,
            witness_pair: None,
            separation_achieved: 0.0,
            feasibility_residual: 0.0,
            separation,
            feas_tol,
        },
    })
}
