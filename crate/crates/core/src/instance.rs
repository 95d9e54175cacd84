//! Ground-truth factors, perturbations, instance assembly and membership
//! checks for the low-complexity class.

use nalgebra::DMatrix;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::factor::FactorMatrix;
use crate::graph::{analyze_graph, BlockSparsityGraph, GraphError, MeasurementSet};
use crate::rng::{self, Domain};

/// Relative singular-value threshold for rank decisions.
pub const RANK_TOL: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum InstanceError {
    #[error("invalid independent set: {0}")]
    InvalidS(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("instance has no block sparsity graph attached")]
    MissingGraph,
    #[error("ground truth is the zero matrix")]
    ZeroMatrix,
    #[error(transparent)]
    Graph(#[from] GraphError),
}

/// Block `i` is the identity for `i` in `s`, zero elsewhere; `n = m r`.
pub fn build_canonical_ground_truth(
    g: &BlockSparsityGraph,
    s: &[usize],
    n: usize,
    r: usize,
) -> Result<FactorMatrix, InstanceError> {
    if r == 0 || n != g.m() * r {
        return Err(InstanceError::DimensionMismatch(format!(
            "canonical construction needs n = m r, got n = {n}, m = {}, r = {r}",
            g.m()
        )));
    }
    if let Some(&v) = s.iter().find(|&&v| v >= g.m()) {
        return Err(InstanceError::InvalidS(format!("vertex {} outside 1..={}", v + 1, g.m())));
    }
    let mut x = FactorMatrix::zeros(n, r);
    let eye = DMatrix::identity(r, r);
    for &b in s {
        x.set_block(b, &eye);
    }
    Ok(x)
}

/// Unit-Frobenius Gaussian direction for `seed`.
pub fn perturbation_direction(n: usize, r: usize, seed: u64) -> FactorMatrix {
    let mut rng = rng::stream(seed, Domain::Perturbation, 0);
    let raw: Vec<f64> = (0..n * r).map(|_| StandardNormal.sample(&mut rng)).collect();
    let norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt();
    FactorMatrix::from_row_major(n, r, raw.into_iter().map(|v| v / norm).collect())
}

/// `x_star + gamma * eps` with `eps` Gaussian, scaled to `‖eps‖_F = 1`.
pub fn perturb(x_star: &FactorMatrix, gamma: f64, seed: u64) -> FactorMatrix {
    assert!(gamma >= 0.0, "gamma must be nonnegative");
    let eps = perturbation_direction(x_star.n(), x_star.r(), seed);
    x_star.axpy(gamma, &eps)
}

/// I.i.d. standard Gaussian factor, generically in the class.
pub fn random_factor(n: usize, r: usize, seed: u64) -> FactorMatrix {
    let mut rng = rng::stream(seed, Domain::RandomFactor, 0);
    FactorMatrix::from_fn(n, r, |_, _| StandardNormal.sample(&mut rng))
}

/// Matrix completion instance `P_{M*, Ω, n, r}` with `M* = X* X*ᵀ` kept in
/// factored form.
#[derive(Debug, Clone, PartialEq)]
pub struct McInstance {
    factor: FactorMatrix,
    omega: MeasurementSet,
    graph: Option<BlockSparsityGraph>,
    /// `(i, j, M*_ij)` for observed `i <= j`, aligned with `omega.upper_pairs()`.
    observed: Vec<(usize, usize, f64)>,
}

pub fn assemble_instance(
    x_star_eps: FactorMatrix,
    omega: MeasurementSet,
    graph: Option<BlockSparsityGraph>,
) -> Result<McInstance, InstanceError> {
    McInstance::new(x_star_eps, omega, graph)
}

impl McInstance {
    pub fn new(
        factor: FactorMatrix,
        omega: MeasurementSet,
        graph: Option<BlockSparsityGraph>,
    ) -> Result<Self, InstanceError> {
        if omega.n() != factor.n() || omega.r() != factor.r() {
            return Err(InstanceError::DimensionMismatch(format!(
                "factor is {}x{} but the measurement set is for n = {}, r = {}",
                factor.n(),
                factor.r(),
                omega.n(),
                omega.r()
            )));
        }
        if !omega.is_symmetric() {
            return Err(InstanceError::DimensionMismatch("measurement set is not symmetric".into()));
        }
        if !factor.is_finite() {
            return Err(InstanceError::DimensionMismatch("factor has non-finite entries".into()));
        }
        if let Some(g) = &graph {
            if g.m() != factor.n() / factor.r() {
                return Err(InstanceError::DimensionMismatch(format!(
                    "graph has m = {} but floor(n / r) = {}",
                    g.m(),
                    factor.n() / factor.r()
                )));
            }
        }
        let observed = omega
            .upper_pairs()
            .map(|(i, j)| (i, j, dot(factor.row(i), factor.row(j))))
            .collect();
        Ok(Self {
            factor,
            omega,
            graph,
            observed,
        })
    }

    pub fn n(&self) -> usize {
        self.factor.n()
    }

    pub fn r(&self) -> usize {
        self.factor.r()
    }

    pub fn ground_truth_factor(&self) -> &FactorMatrix {
        &self.factor
    }

    pub fn omega(&self) -> &MeasurementSet {
        &self.omega
    }

    pub fn graph(&self) -> Option<&BlockSparsityGraph> {
        self.graph.as_ref()
    }

    /// Observed upper-triangle entries `(i, j, M*_ij)`, `i <= j`.
    pub fn observed_upper(&self) -> &[(usize, usize, f64)] {
        &self.observed
    }

    /// `M*_ij`, observed or not.
    pub fn truth_entry(&self, i: usize, j: usize) -> f64 {
        dot(self.factor.row(i), self.factor.row(j))
    }

    /// `M*_ij` if `(i, j)` is observed.
    pub fn observed_entry(&self, i: usize, j: usize) -> Option<f64> {
        self.omega.contains(i, j).then(|| self.truth_entry(i, j))
    }

    /// `‖M*_Ω‖_F`.
    pub fn observed_norm(&self) -> f64 {
        self.observed
            .iter()
            .map(|&(i, j, v)| if i == j { v * v } else { 2.0 * v * v })
            .sum::<f64>()
            .sqrt()
    }

    /// `‖M*‖_F`.
    pub fn truth_norm(&self) -> f64 {
        self.factor.product_norm()
    }

    /// Dense `M*`.
    pub fn materialize(&self) -> DMatrix<f64> {
        self.factor.gram()
    }

    /// Block `M*_{i,j}` of size `r x r`.
    pub fn truth_block(&self, bi: usize, bj: usize) -> DMatrix<f64> {
        self.factor.block(bi) * self.factor.block(bj).transpose()
    }

    /// Same measurement set and graph with a different ground truth.
    pub fn with_factor(&self, factor: FactorMatrix) -> Result<Self, InstanceError> {
        Self::new(factor, self.omega.clone(), self.graph.clone())
    }

    pub fn to_file(&self) -> InstanceFile {
        InstanceFile {
            n: self.n(),
            r: self.r(),
            factor: self.factor.as_slice().to_vec(),
            omega: self.omega.to_pairs_one_based(),
            graph: self.graph.clone(),
        }
    }

    pub fn from_file(f: InstanceFile) -> Result<Self, InstanceError> {
        if f.r == 0 || f.factor.len() != f.n * f.r {
            return Err(InstanceError::DimensionMismatch(format!(
                "factor has {} entries, expected n r = {}",
                f.factor.len(),
                f.n * f.r
            )));
        }
        let omega = MeasurementSet::from_pairs_one_based(f.n, f.r, &f.omega)?;
        Self::new(FactorMatrix::from_row_major(f.n, f.r, f.factor), omega, f.graph)
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// On-disk instance: `{n, r, factor: row-major list, omega: pair list, graph}`
/// with 1-based pairs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InstanceFile {
    pub n: usize,
    pub r: usize,
    pub factor: Vec<f64>,
    pub omega: Vec<[usize; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub graph: Option<BlockSparsityGraph>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct MembershipReport {
    pub psd_rank_r: bool,
    pub all_blocks_full_rank: bool,
    pub g1_connected_nonbipartite: bool,
    pub in_class: bool,
}

fn singular_values(m: &DMatrix<f64>) -> Vec<f64> {
    m.clone().svd(false, false).singular_values.iter().copied().collect()
}

pub fn check_class_membership(inst: &McInstance) -> Result<MembershipReport, InstanceError> {
    let g = inst.graph().ok_or(InstanceError::MissingGraph)?;
    let r = inst.r();
    // Eigenvalues of X Xᵀ are the squared singular values of X.
    let sx = singular_values(&inst.factor.to_dmatrix());
    let top = sx.iter().copied().fold(0.0, f64::max).powi(2);
    let psd_rank_r = top > 0.0 && sx.iter().filter(|s| s.powi(2) > RANK_TOL * top).count() == r;
    let all_blocks_full_rank = top > 0.0
        && (0..g.m()).all(|i| {
            (i..g.m()).all(|j| {
                let sv = singular_values(&inst.truth_block(i, j));
                sv.iter().copied().fold(f64::INFINITY, f64::min) > RANK_TOL * top
            })
        });
    let a = analyze_graph(g);
    let g1_connected_nonbipartite = a.connected && a.nonbipartite;
    Ok(MembershipReport {
        psd_rank_r,
        all_blocks_full_rank,
        g1_connected_nonbipartite,
        in_class: psd_rank_r && all_blocks_full_rank && g1_connected_nonbipartite,
    })
}

/// `μ = (n / k) max_i ‖U_i‖²` with `U` an orthonormal basis of the column
/// space of `M*` and `k` its numerical rank.
pub fn compute_incoherence(inst: &McInstance) -> Result<f64, InstanceError> {
    let x = inst.factor.to_dmatrix();
    let svd = x.svd(true, false);
    let u = svd.u.expect("requested U");
    let top = svd.singular_values.iter().copied().fold(0.0, f64::max);
    let keep: Vec<usize> = (0..svd.singular_values.len())
        .filter(|&k| top > 0.0 && svd.singular_values[k].powi(2) > RANK_TOL * top * top)
        .collect();
    if keep.is_empty() {
        return Err(InstanceError::ZeroMatrix);
    }
    let n = inst.n();
    let max_row = (0..n)
        .map(|i| keep.iter().map(|&k| u[(i, k)].powi(2)).sum::<f64>())
        .fold(0.0, f64::max);
    Ok(n as f64 / keep.len() as f64 * max_row)
}
