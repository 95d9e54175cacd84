//! Low-complexity matrix completion under the Burer-Monteiro factorization.
//!
//! The crate builds graph-induced measurement patterns and the instances
//! defined on them, recovers ground truths exactly by block propagation,
//! and probes the factorized least-squares landscape: analytic derivatives,
//! orbit canonicalization, gradient descent, Newton refinement, multistart
//! census of critical points, success-rate experiments and a heuristic
//! estimate of the distance to non-unique measurements.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod graph;
pub mod rng;
pub mod factor;
pub mod instance;
pub mod completion;
pub mod landscape;
pub mod optimizer;
pub mod census;
pub mod experiment;
pub mod io;
pub mod metric;
pub mod harness;
