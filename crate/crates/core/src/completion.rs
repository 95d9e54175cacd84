//! Exact completion by odd-cycle chaining and breadth-first propagation.

use std::collections::VecDeque;

use nalgebra::{Cholesky, DMatrix};
use serde::Serialize;
use thiserror::Error;

use crate::factor::FactorMatrix;
use crate::graph::{components, find_odd_cycle, BlockSparsityGraph};
use crate::instance::McInstance;

/// Relative singular-value threshold below which a block is treated as singular.
pub const SINGULAR_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CompletionError {
    #[error("G1 is bipartite: no odd cycle to anchor the recovery")]
    NoOddCycle,
    #[error("G1 is disconnected")]
    Disconnected,
    #[error("block ({}, {}) is singular", .0 + 1, .1 + 1)]
    SingularBlock(usize, usize),
    #[error("chained diagonal block is not positive definite")]
    NotPSD,
    #[error("instance has no block sparsity graph attached")]
    MissingGraph,
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompletionResult {
    /// `X* R` for some orthogonal `R`.
    pub recovered_factor: FactorMatrix,
    pub operations_estimate: u64,
}

impl CompletionResult {
    /// `‖X̂X̂ᵀ - M*‖_F / ‖M*‖_F` against the instance ground truth.
    pub fn relative_error(&self, inst: &McInstance) -> f64 {
        let truth = inst.ground_truth_factor();
        let d = self.recovered_factor.product_distance(truth);
        let scale = truth.product_norm();
        if scale > 0.0 {
            d / scale
        } else {
            d
        }
    }
}

pub fn solve_by_propagation(inst: &McInstance) -> Result<CompletionResult, CompletionError> {
    let g = inst.graph().ok_or(CompletionError::MissingGraph)?;
    solve_from_observations(g, inst.n(), inst.r(), |i, j| inst.truth_entry(i, j))
}

/// Recovery from an observation oracle. `obs(i, j)` is queried only at
/// positions in `Ω(G)`.
pub fn solve_from_observations(
    g: &BlockSparsityGraph,
    n: usize,
    r: usize,
    obs: impl Fn(usize, usize) -> f64,
) -> Result<CompletionResult, CompletionError> {
    let m = g.m();
    if r == 0 || m == 0 || n / r != m {
        return Err(CompletionError::DimensionMismatch(format!(
            "graph has m = {m} blocks but n = {n}, r = {r}"
        )));
    }
    let adj = g.adjacency();
    if components(&adj).len() > 1 {
        return Err(CompletionError::Disconnected);
    }
    let cycle = find_odd_cycle(g).ok_or(CompletionError::NoOddCycle)?;

    let block = |bi: usize, bj: usize| -> Result<DMatrix<f64>, CompletionError> {
        let b = DMatrix::from_fn(r, r, |a, c| obs(bi * r + a, bj * r + c));
        if is_singular(&b) {
            Err(CompletionError::SingularBlock(bi, bj))
        } else {
            Ok(b)
        }
    };
    let r3 = (r * r * r) as u64;
    let mut ops = (g.e1().len() + m) as u64;

    // Chain M_{c1 c2} M_{c2 c3}^{-T} ... M_{c_L c1} = X_{c1} X_{c1}ᵀ.
    let anchor = cycle[0];
    let len = cycle.len();
    let mut acc = DMatrix::identity(r, r);
    let mut p = 0;
    while p + 2 < len {
        let (a, b, c) = (cycle[p], cycle[p + 1], cycle[p + 2]);
        let num = block(a, b)?;
        let den = block(b, c)?;
        acc *= solve_transposed(&num, &den).ok_or(CompletionError::SingularBlock(b, c))?;
        ops += 3 * r3;
        p += 2;
    }
    acc *= block(cycle[len - 1], anchor)?;
    ops += r3;
    let sym = (&acc + acc.transpose()) * 0.5;
    if is_singular(&sym) {
        return Err(CompletionError::SingularBlock(anchor, anchor));
    }
    let chol = Cholesky::new(sym).ok_or(CompletionError::NotPSD)?;
    ops += r3;

    let mut blocks: Vec<Option<DMatrix<f64>>> = vec![None; m];
    blocks[anchor] = Some(chol.l());
    let mut queue = VecDeque::from([anchor]);
    while let Some(i) = queue.pop_front() {
        for &j in &adj[i] {
            if blocks[j].is_some() {
                continue;
            }
            let xi = blocks[i].as_ref().expect("visited");
            let mij = block(i, j)?;
            // X_i Z = M_ij with Z = X_jᵀ.
            let z = xi.clone().lu().solve(&mij).ok_or(CompletionError::SingularBlock(i, i))?;
            blocks[j] = Some(z.transpose());
            ops += 2 * r3;
            queue.push_back(j);
        }
    }

    let mut x = FactorMatrix::zeros(n, r);
    for (b, blk) in blocks.iter().enumerate() {
        x.set_block(b, blk.as_ref().expect("connected"));
    }
    if n > m * r {
        // Border rows: X_anchor x_tᵀ = M_{anchor rows, t}.
        let xa_lu = blocks[anchor].clone().expect("anchor").lu();
        for t in m * r..n {
            let rhs = DMatrix::from_fn(r, 1, |a, _| obs(anchor * r + a, t));
            let col = xa_lu.solve(&rhs).ok_or(CompletionError::SingularBlock(anchor, anchor))?;
            for k in 0..r {
                x.set(t, k, col[(k, 0)]);
            }
            ops += (r * r) as u64;
        }
    }
    Ok(CompletionResult {
        recovered_factor: x,
        operations_estimate: ops,
    })
}

fn is_singular(b: &DMatrix<f64>) -> bool {
    let sv = b.clone().svd(false, false).singular_values;
    let hi = sv.max();
    !(hi > 0.0 && hi.is_finite() && sv.min() > SINGULAR_TOL * hi)
}

/// `a b^{-T}` through the solve `b yᵀ = aᵀ`.
fn solve_transposed(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    b.clone().lu().solve(&a.transpose()).map(|y| y.transpose())
}
