//! Factorized objective `f(X) = g[(XXᵀ - M*)_Ω] + Q(X)`, its derivatives,
//! and orbit canonicalization.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::factor::FactorMatrix;
use crate::instance::{dot, McInstance};

/// Zero threshold used when orienting orbit representatives.
pub const CANON_ZERO_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LandscapeError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
}

/// Per-entry loss `ψ`, with `g(R_Ω) = Σ_{(i,j) ∈ Ω} ψ(R_ij)`.
///
/// Implementations are expected to satisfy `ψ(0) = ψ'(0) = 0`, `ψ''(0) > 0`
/// with `0` the unique minimizer. This is not checked.
pub trait EntryLoss: Send + Sync {
    fn value(&self, t: f64) -> f64;
    fn d1(&self, t: f64) -> f64;
    fn d2(&self, t: f64) -> f64;
    fn name(&self) -> &str {
        "custom"
    }
}

#[derive(Clone)]
enum Entry {
    L2,
    Custom(Arc<dyn EntryLoss>),
}

impl Entry {
    #[inline]
    fn value(&self, t: f64) -> f64 {
        match self {
            Entry::L2 => t * t,
            Entry::Custom(e) => e.value(t),
        }
    }

    #[inline]
    fn d1(&self, t: f64) -> f64 {
        match self {
            Entry::L2 => 2.0 * t,
            Entry::Custom(e) => e.d1(t),
        }
    }

    #[inline]
    fn d2(&self, t: f64) -> f64 {
        match self {
            Entry::L2 => 2.0,
            Entry::Custom(e) => e.d2(t),
        }
    }
}

/// Row-norm regularizer `Q(X) = λ Σ_i (‖X_i‖ - α)₊⁴`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Regularizer {
    pub lambda: f64,
    pub alpha: f64,
}

impl Regularizer {
    fn row_value(&self, row: &[f64]) -> f64 {
        let e = (norm(row) - self.alpha).max(0.0);
        self.lambda * e.powi(4)
    }

    /// `(q'(s), q''(s))` at row norm `s`.
    fn radial(&self, s: f64) -> (f64, f64) {
        let e = (s - self.alpha).max(0.0);
        (4.0 * self.lambda * e.powi(3), 12.0 * self.lambda * e * e)
    }
}

/// Loss specification: an entry loss plus an optional regularizer.
#[derive(Clone)]
pub struct LossSpec {
    entry: Entry,
    regularizer: Option<Regularizer>,
}

impl fmt::Debug for LossSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("LossSpec")
            .field("entry", &self.entry_name())
            .field("regularizer", &self.regularizer)
            .finish()
    }
}

impl Default for LossSpec {
    fn default() -> Self {
        Self::l2()
    }
}

impl LossSpec {
    pub fn l2() -> Self {
        Self {
            entry: Entry::L2,
            regularizer: None,
        }
    }

    /// Panics unless `lambda > 0` and `alpha > 0`.
    pub fn l2_regularized(lambda: f64, alpha: f64) -> Self {
        assert!(lambda > 0.0 && alpha > 0.0, "regularizer needs positive lambda and alpha");
        Self {
            entry: Entry::L2,
            regularizer: Some(Regularizer { lambda, alpha }),
        }
    }

    pub fn custom(entry: Arc<dyn EntryLoss>, regularizer: Option<Regularizer>) -> Self {
        Self {
            entry: Entry::Custom(entry),
            regularizer,
        }
    }

    pub fn regularizer(&self) -> Option<Regularizer> {
        self.regularizer
    }

    pub fn is_plain_l2(&self) -> bool {
        matches!(self.entry, Entry::L2) && self.regularizer.is_none()
    }

    pub fn entry_name(&self) -> &str {
        match &self.entry {
            Entry::L2 => "l2",
            Entry::Custom(e) => e.name(),
        }
    }

    /// `(ψ(t), ψ'(t), ψ''(t))`.
    pub fn entry_derivatives(&self, t: f64) -> (f64, f64, f64) {
        (self.entry.value(t), self.entry.d1(t), self.entry.d2(t))
    }
}

#[inline]
fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

fn check_dims(inst: &McInstance, x: &FactorMatrix) -> Result<(), LandscapeError> {
    if x.n() != inst.n() || x.r() != inst.r() {
        return Err(LandscapeError::DimensionMismatch(format!(
            "X is {}x{}, instance expects {}x{}",
            x.n(),
            x.r(),
            inst.n(),
            inst.r()
        )));
    }
    Ok(())
}

/// Residuals `X_i·X_j - M*_ij` aligned with `inst.observed_upper()`.
pub fn residuals(inst: &McInstance, x: &FactorMatrix) -> Vec<f64> {
    inst.observed_upper()
        .iter()
        .map(|&(i, j, m)| dot(x.row(i), x.row(j)) - m)
        .collect()
}

pub fn objective(inst: &McInstance, loss: &LossSpec, x: &FactorMatrix) -> Result<f64, LandscapeError> {
    check_dims(inst, x)?;
    let mut f = 0.0;
    for &(i, j, m) in inst.observed_upper() {
        let v = loss.entry.value(dot(x.row(i), x.row(j)) - m);
        f += if i == j { v } else { 2.0 * v };
    }
    if let Some(q) = &loss.regularizer {
        f += (0..x.n()).map(|i| q.row_value(x.row(i))).sum::<f64>();
    }
    Ok(f)
}

pub fn gradient(inst: &McInstance, loss: &LossSpec, x: &FactorMatrix) -> Result<FactorMatrix, LandscapeError> {
    evaluate(inst, loss, x).map(|(_, g)| g)
}

/// Objective and gradient in a single pass over `Ω`.
pub fn evaluate(
    inst: &McInstance,
    loss: &LossSpec,
    x: &FactorMatrix,
) -> Result<(f64, FactorMatrix), LandscapeError> {
    let mut g = FactorMatrix::zeros(x.n(), x.r());
    let f = evaluate_into(inst, loss, x, &mut g)?;
    Ok((f, g))
}

/// As [`evaluate`], writing the gradient into `g`.
pub fn evaluate_into(
    inst: &McInstance,
    loss: &LossSpec,
    x: &FactorMatrix,
    g: &mut FactorMatrix,
) -> Result<f64, LandscapeError> {
    check_dims(inst, x)?;
    check_dims(inst, g)?;
    let r = x.r();
    let mut f = 0.0;
    let xs = x.as_slice();
    let gs = g.as_mut_slice();
    gs.fill(0.0);
    for &(i, j, m) in inst.observed_upper() {
        let (xi, xj) = (&xs[i * r..(i + 1) * r], &xs[j * r..(j + 1) * r]);
        let t = dot(xi, xj) - m;
        let c = 2.0 * loss.entry.d1(t);
        if i == j {
            f += loss.entry.value(t);
            for k in 0..r {
                gs[i * r + k] += c * xi[k];
            }
        } else {
            f += 2.0 * loss.entry.value(t);
            for k in 0..r {
                gs[i * r + k] += c * xj[k];
                gs[j * r + k] += c * xi[k];
            }
        }
    }
    if let Some(q) = &loss.regularizer {
        for i in 0..x.n() {
            let row = &xs[i * r..(i + 1) * r];
            let s = norm(row);
            f += q.row_value(row);
            let (d1, _) = q.radial(s);
            if d1 > 0.0 {
                for k in 0..r {
                    gs[i * r + k] += d1 * row[k] / s;
                }
            }
        }
    }
    Ok(f)
}

pub fn hessian_quadratic(
    inst: &McInstance,
    loss: &LossSpec,
    x: &FactorMatrix,
    delta: &FactorMatrix,
) -> Result<f64, LandscapeError> {
    HessianOperator::new(inst, loss, x)?.quadratic(delta)
}

/// Hessian of `f` at a fixed base point.
pub struct HessianOperator<'a> {
    inst: &'a McInstance,
    loss: &'a LossSpec,
    x: FactorMatrix,
    residual: Vec<f64>,
}

impl<'a> HessianOperator<'a> {
    pub fn new(inst: &'a McInstance, loss: &'a LossSpec, x: &FactorMatrix) -> Result<Self, LandscapeError> {
        check_dims(inst, x)?;
        Ok(Self {
            inst,
            loss,
            x: x.clone(),
            residual: residuals(inst, x),
        })
    }

    pub fn base_point(&self) -> &FactorMatrix {
        &self.x
    }

    pub fn dim(&self) -> usize {
        self.x.n() * self.x.r()
    }

    /// `Δ : ∇²f(X) : Δ`.
    pub fn quadratic(&self, delta: &FactorMatrix) -> Result<f64, LandscapeError> {
        check_dims(self.inst, delta)?;
        let x = &self.x;
        let mut acc = 0.0;
        for (&(i, j, _), &t) in self.inst.observed_upper().iter().zip(&self.residual) {
            let d = dot(x.row(i), delta.row(j)) + dot(delta.row(i), x.row(j));
            let dd = dot(delta.row(i), delta.row(j));
            let v = self.loss.entry.d2(t) * d * d + 2.0 * self.loss.entry.d1(t) * dd;
            acc += if i == j { v } else { 2.0 * v };
        }
        if let Some(q) = &self.loss.regularizer {
            for i in 0..x.n() {
                let row = x.row(i);
                let s = norm(row);
                let (d1, d2) = q.radial(s);
                if d1 > 0.0 {
                    let dr = delta.row(i);
                    let proj = dot(row, dr) / s;
                    let nd = dot(dr, dr);
                    acc += d2 * proj * proj + d1 / s * (nd - proj * proj);
                }
            }
        }
        Ok(acc)
    }

    /// Dense `(nr) x (nr)` Hessian; `vec(Δ)` is row-major, index `i r + k`.
    pub fn dense(&self) -> DMatrix<f64> {
        let x = &self.x;
        let r = x.r();
        let dim = self.dim();
        let mut h = DMatrix::zeros(dim, dim);
        let mut idx: Vec<usize> = Vec::with_capacity(2 * r);
        let mut val: Vec<f64> = Vec::with_capacity(2 * r);
        for (&(i, j, _), &t) in self.inst.observed_upper().iter().zip(&self.residual) {
            let w = if i == j { 1.0 } else { 2.0 };
            let c2 = w * self.loss.entry.d2(t);
            let c1 = w * self.loss.entry.d1(t);
            // Linear functional Δ -> (XΔᵀ + ΔXᵀ)_ij.
            idx.clear();
            val.clear();
            if i == j {
                for k in 0..r {
                    idx.push(i * r + k);
                    val.push(2.0 * x.get(i, k));
                }
            } else {
                for k in 0..r {
                    idx.push(i * r + k);
                    val.push(x.get(j, k));
                    idx.push(j * r + k);
                    val.push(x.get(i, k));
                }
            }
            for (a, &ia) in idx.iter().enumerate() {
                for (b, &ib) in idx.iter().enumerate() {
                    h[(ia, ib)] += c2 * val[a] * val[b];
                }
            }
            for k in 0..r {
                if i == j {
                    h[(i * r + k, i * r + k)] += 2.0 * c1;
                } else {
                    h[(i * r + k, j * r + k)] += c1;
                    h[(j * r + k, i * r + k)] += c1;
                }
            }
        }
        if let Some(q) = &self.loss.regularizer {
            for i in 0..x.n() {
                let row = x.row(i);
                let s = norm(row);
                let (d1, d2) = q.radial(s);
                if d1 > 0.0 {
                    for a in 0..r {
                        for b in 0..r {
                            let uu = row[a] * row[b] / (s * s);
                            let id = if a == b { 1.0 } else { 0.0 };
                            h[(i * r + a, i * r + b)] += d2 * uu + d1 / s * (id - uu);
                        }
                    }
                }
            }
        }
        h
    }
}

/// Directions considered by [`min_hessian_eigen`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Subspace {
    Full,
    /// Strictly-upper entries of the first `r` rows fixed at zero.
    LowerTriangularTangent,
}

/// Coordinates of `vec(Δ)` free in `sub`.
pub fn subspace_coordinates(n: usize, r: usize, sub: Subspace) -> Vec<usize> {
    (0..n * r)
        .filter(|&c| match sub {
            Subspace::Full => true,
            Subspace::LowerTriangularTangent => {
                let (i, k) = (c / r, c % r);
                !(i < r && k > i)
            }
        })
        .collect()
}

/// Smallest eigenvalue of a symmetric matrix with its unit eigenvector.
pub fn symmetric_min_eigen(h: DMatrix<f64>) -> (f64, nalgebra::DVector<f64>) {
    let eig = SymmetricEigen::new(h);
    let (pos, &val) = eig
        .eigenvalues
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .expect("nonempty matrix");
    (val, eig.eigenvectors.column(pos).into_owned())
}

pub fn min_hessian_eigen(
    inst: &McInstance,
    loss: &LossSpec,
    x: &FactorMatrix,
    subspace: Subspace,
) -> Result<(f64, FactorMatrix), LandscapeError> {
    let (n, r) = (x.n(), x.r());
    if subspace == Subspace::LowerTriangularTangent && r > n {
        return Err(LandscapeError::DimensionMismatch(format!("lower-triangular tangent needs r <= n, got r = {r}, n = {n}")));
    }
    let h = HessianOperator::new(inst, loss, x)?.dense();
    let coords = subspace_coordinates(n, r, subspace);
    let sub = h.select_rows(&coords).select_columns(&coords);
    let (val, v) = symmetric_min_eigen(sub);
    let mut dir = FactorMatrix::zeros(n, r);
    for (a, &c) in coords.iter().enumerate() {
        dir.as_mut_slice()[c] = v[a];
    }
    Ok((val, dir))
}

/// Orbit representative in `W^{n x r}`: `R = X Q` with the first `r` rows
/// lower triangular with nonnegative diagonal. Panics if `r > n`.
pub fn restriction_map(x: &FactorMatrix) -> FactorMatrix {
    let (n, r) = (x.n(), x.r());
    assert!(r <= n, "restriction map needs r <= n");
    let lead = x.to_dmatrix().rows(0, r).into_owned();
    // lead = L Qᵀ with L lower triangular, from lead ᵀ = Q Lᵀ.
    let qr = lead.transpose().qr();
    let mut q = qr.q();
    let lt = qr.r();
    for k in 0..r {
        if lt[(k, k)] < 0.0 {
            q.column_mut(k).neg_mut();
        }
    }
    let mut out = x.mul_right(&q);
    for i in 0..r {
        for k in i + 1..r {
            out.set(i, k, 0.0);
        }
    }
    out
}

/// Deterministic representative of the orbit `{X Q : Q orthogonal}`.
pub fn canonicalize(x: &FactorMatrix) -> FactorMatrix {
    let mut out = if x.r() > 1 && x.r() <= x.n() { restriction_map(x) } else { x.clone() };
    for k in 0..out.r() {
        let lead = (0..out.n()).map(|i| out.get(i, k)).find(|v| v.abs() > CANON_ZERO_TOL);
        if lead.is_some_and(|v| v < 0.0) {
            for i in 0..out.n() {
                out.set(i, k, -out.get(i, k));
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{build_named_pattern, induce_measurement_set, MeasurementSet, NamedPattern, PatternParams};
    use crate::instance::{assemble_instance, build_canonical_ground_truth, random_factor};
    use proptest::prelude::*;

    fn example1(n: usize) -> McInstance {
        let g = build_named_pattern(NamedPattern::Example1Path, PatternParams::new(n)).unwrap();
        let s: Vec<usize> = (0..n).step_by(2).collect();
        let x = build_canonical_ground_truth(&g, &s, n, 1).unwrap();
        let om = induce_measurement_set(&g, n, 1).unwrap();
        assemble_instance(x, om, Some(g)).unwrap()
    }

    fn random_orthogonal(r: usize, seed: u64) -> DMatrix<f64> {
        random_factor(r, r, seed).to_dmatrix().qr().q()
    }

    /// Random instance with a sparse symmetric pattern.
    fn random_instance(n: usize, r: usize, seed: u64) -> McInstance {
        let coin = random_factor(n, n, seed ^ 0x55);
        let pairs: Vec<(usize, usize)> = (0..n)
            .flat_map(|i| (i..n).map(move |j| (i, j)))
            .filter(|&(i, j)| i == j || coin.get(i, j) > 0.0)
            .collect();
        let om = MeasurementSet::from_pairs(n, r, pairs).unwrap();
        assemble_instance(random_factor(n, r, seed), om, None).unwrap()
    }

    fn loss_for(choice: u8) -> LossSpec {
        match choice {
            0 => LossSpec::l2(),
            _ => LossSpec::l2_regularized(0.7, 0.8),
        }
    }

    fn dense_objective(inst: &McInstance, x: &FactorMatrix) -> f64 {
        let d = x.gram() - inst.materialize();
        inst.omega().entries().iter().map(|&(i, j)| d[(i, j)].powi(2)).sum()
    }

    #[test]
    fn objective_values() {
        let inst = example1(6);
        let x = inst.ground_truth_factor().clone();
        assert_eq!(objective(&inst, &LossSpec::l2(), &x).unwrap(), 0.0);
        let full = assemble_instance(FactorMatrix::from_column(&[1.0, 0.0]), MeasurementSet::full(2, 1), None).unwrap();
        // xxᵀ - e1e1ᵀ = [[0, 1], [1, 1]].
        let v = objective(&full, &LossSpec::l2(), &FactorMatrix::from_column(&[1.0, 1.0])).unwrap();
        assert_eq!(v, 3.0);
        let y = random_factor(6, 1, 3);
        assert!((objective(&inst, &LossSpec::l2(), &y).unwrap() - dense_objective(&inst, &y)).abs() < 1e-12);
    }

    #[test]
    fn identity_target_hand_expansion() {
        // M* = I₂ is rank two; evaluate with a rank-two ground truth and a
        // rank-one probe padded with a zero column.
        let eye = assemble_instance(
            FactorMatrix::from_row_major(2, 2, vec![1.0, 0.0, 0.0, 1.0]),
            MeasurementSet::full(2, 2),
            None,
        )
        .unwrap();
        let x = FactorMatrix::from_row_major(2, 2, vec![1.0, 0.0, 1.0, 0.0]);
        assert_eq!(objective(&eye, &LossSpec::l2(), &x).unwrap(), 2.0);
    }

    #[test]
    fn regularizer_inactive_below_alpha() {
        let inst = random_instance(7, 2, 1);
        let x = random_factor(7, 2, 2);
        let alpha = (0..7).map(|i| norm(x.row(i))).fold(0.0, f64::max);
        let a = objective(&inst, &LossSpec::l2(), &x).unwrap();
        let b = objective(&inst, &LossSpec::l2_regularized(3.0, alpha), &x).unwrap();
        assert_eq!(a, b);
        let ga = gradient(&inst, &LossSpec::l2(), &x).unwrap();
        let gb = gradient(&inst, &LossSpec::l2_regularized(3.0, alpha), &x).unwrap();
        assert_eq!(ga, gb);
    }

    #[test]
    fn l2_gradient_is_four_r_omega_x() {
        let inst = random_instance(6, 2, 4);
        let x = random_factor(6, 2, 5);
        let mut rmat = x.gram() - inst.materialize();
        for i in 0..6 {
            for j in 0..6 {
                if !inst.omega().contains(i, j) {
                    rmat[(i, j)] = 0.0;
                }
            }
        }
        let expect = rmat * x.to_dmatrix() * 4.0;
        let g = gradient(&inst, &LossSpec::l2(), &x).unwrap().to_dmatrix();
        assert!((g - expect).norm() < 1e-12);
    }

    #[test]
    fn gradient_zero_at_global_minimum() {
        let inst = example1(7);
        let g = gradient(&inst, &LossSpec::l2(), inst.ground_truth_factor()).unwrap();
        assert_eq!(g.frobenius_norm(), 0.0);
    }

    #[test]
    fn l2_at_origin() {
        let (v, d1, d2) = LossSpec::l2().entry_derivatives(0.0);
        assert_eq!((v, d1, d2), (0.0, 0.0, 2.0));
    }

    #[test]
    fn example1_hessian_values() {
        let inst = example1(4);
        let x = inst.ground_truth_factor().clone();
        let e4 = FactorMatrix::from_column(&[0.0, 0.0, 0.0, 1.0]);
        assert!((hessian_quadratic(&inst, &LossSpec::l2(), &x, &e4).unwrap() - 4.0).abs() < 1e-12);
        let zero = FactorMatrix::zeros(4, 1);
        assert_eq!(hessian_quadratic(&inst, &LossSpec::l2(), &x, &zero).unwrap(), 0.0);

        // 8‖Δ‖² - 4Δ_n² for even n.
        for seed in 0..5 {
            let d = random_factor(4, 1, seed);
            let want = 8.0 * d.dot(&d) - 4.0 * d.get(3, 0).powi(2);
            assert!((hessian_quadratic(&inst, &LossSpec::l2(), &x, &d).unwrap() - want).abs() < 1e-10);
        }

        let odd = example1(5);
        let (lmin, _) = min_hessian_eigen(&odd, &LossSpec::l2(), odd.ground_truth_factor(), Subspace::Full).unwrap();
        assert!((lmin - 8.0).abs() < 1e-10);
    }

    #[test]
    fn origin_is_strict_saddle() {
        for n in [4usize, 5, 8] {
            let inst = example1(n);
            let z = FactorMatrix::zeros(n, 1);
            let xs = inst.ground_truth_factor();
            let q = hessian_quadratic(&inst, &LossSpec::l2(), &z, xs).unwrap();
            assert!((q + 4.0 * n.div_ceil(2) as f64).abs() < 1e-12);
            let (lmin, _) = min_hessian_eigen(&inst, &LossSpec::l2(), &z, Subspace::Full).unwrap();
            assert!(lmin < 0.0);
        }
    }

    #[test]
    fn rank_r_minimum_positive_definite_on_tangent() {
        for r in [2usize, 3] {
            let m = 4;
            let g = build_named_pattern(NamedPattern::Example1Path, PatternParams::new(m).with_r(r))
                .unwrap()
                .with_e2_path(&[0, 2])
                .unwrap();
            let x = build_canonical_ground_truth(&g, &[0, 2], m * r, r).unwrap();
            let om = induce_measurement_set(&g, m * r, r).unwrap();
            let inst = assemble_instance(x.clone(), om, Some(g)).unwrap();
            let (lt, _) = min_hessian_eigen(&inst, &LossSpec::l2(), &x, Subspace::LowerTriangularTangent).unwrap();
            assert!(lt > 1e-6, "r = {r}: {lt}");
            // Rotations leave f invariant, so the full Hessian is singular.
            let (full, _) = min_hessian_eigen(&inst, &LossSpec::l2(), &x, Subspace::Full).unwrap();
            assert!(full.abs() < 1e-10);
        }
    }

    #[test]
    fn min_eigen_direction_matches_value() {
        let inst = random_instance(5, 2, 8);
        let x = random_factor(5, 2, 9);
        for sub in [Subspace::Full, Subspace::LowerTriangularTangent] {
            let (val, dir) = min_hessian_eigen(&inst, &LossSpec::l2(), &x, sub).unwrap();
            assert!((dir.frobenius_norm() - 1.0).abs() < 1e-12);
            let q = hessian_quadratic(&inst, &LossSpec::l2(), &x, &dir).unwrap();
            assert!((q - val).abs() < 1e-9 * (1.0 + val.abs()));
            if sub == Subspace::LowerTriangularTangent {
                assert_eq!(dir.get(0, 1), 0.0);
            }
        }
    }

    #[test]
    fn dimension_mismatch() {
        let inst = example1(4);
        let bad = FactorMatrix::zeros(5, 1);
        assert!(matches!(objective(&inst, &LossSpec::l2(), &bad), Err(LandscapeError::DimensionMismatch(_))));
        assert!(gradient(&inst, &LossSpec::l2(), &bad).is_err());
        assert!(hessian_quadratic(&inst, &LossSpec::l2(), &FactorMatrix::zeros(4, 1), &bad).is_err());
    }

    #[test]
    fn sign_blocks_commute_with_gradient() {
        for (pattern, r) in [(NamedPattern::Example1Path, 1usize), (NamedPattern::Star, 2), (NamedPattern::AugmentedCross, 2)] {
            let m = 6;
            let g = build_named_pattern(pattern, PatternParams::new(m).with_k(0).with_r(r)).unwrap();
            let s: Vec<usize> = g.independent_set().unwrap().iter().copied().collect();
            let xs = build_canonical_ground_truth(&g, &s, m * r, r).unwrap();
            let om = induce_measurement_set(&g, m * r, r).unwrap();
            let inst = assemble_instance(xs, om, Some(g)).unwrap();
            for seed in 0..10u64 {
                let x = random_factor(m * r, r, seed);
                let signs: Vec<f64> = (0..m).map(|b| if (seed >> b) & 1 == 1 { -1.0 } else { 1.0 }).collect();
                let apply = |y: &FactorMatrix| FactorMatrix::from_fn(m * r, r, |i, k| signs[i / r] * y.get(i, k));
                for loss in [LossSpec::l2(), LossSpec::l2_regularized(1.0, 0.5)] {
                    let lhs = gradient(&inst, &loss, &apply(&x)).unwrap();
                    let rhs = apply(&gradient(&inst, &loss, &x).unwrap());
                    assert_eq!(lhs, rhs, "{pattern} seed {seed}");
                }
            }
        }
    }

    #[test]
    fn restriction_map_cases() {
        let l = FactorMatrix::from_row_major(4, 2, vec![1.5, 0.0, -0.3, 0.8, 0.2, 0.4, -1.0, 2.0]);
        assert!(restriction_map(&l).max_abs_diff(&l) <= 1e-12);

        for seed in 0..10 {
            let mut base = random_factor(6, 3, seed);
            for i in 0..3 {
                for k in 0..3 {
                    if k > i {
                        base.set(i, k, 0.0);
                    } else if k == i {
                        base.set(i, k, base.get(i, k).abs() + 0.1);
                    }
                }
            }
            let q = random_orthogonal(3, seed + 100);
            let back = restriction_map(&base.mul_right(&q));
            assert!(back.max_abs_diff(&base) <= 1e-10, "seed {seed}");
        }
    }

    #[test]
    fn canonicalize_cases() {
        let z = FactorMatrix::zeros(5, 2);
        assert_eq!(canonicalize(&z), z);
        let x = FactorMatrix::from_column(&[0.0, -2.0, 1.0]);
        assert_eq!(canonicalize(&x), canonicalize(&x.scaled(-1.0)));
        assert_eq!(canonicalize(&x).get(1, 0), 2.0);
        for seed in 0..20 {
            let x = random_factor(7, 3, seed);
            let q = random_orthogonal(3, seed + 50);
            assert!(canonicalize(&x.mul_right(&q)).max_abs_diff(&canonicalize(&x)) <= 1e-8);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]

        #[test]
        fn gradient_matches_finite_differences(n in 2usize..8, r in 1usize..4, seed in any::<u64>(), choice in 0u8..2) {
            let inst = random_instance(n, r, seed);
            let loss = loss_for(choice);
            let x = random_factor(n, r, seed.wrapping_add(1));
            let g = gradient(&inst, &loss, &x).unwrap();
            let h = 1e-5 * (1.0 + x.frobenius_norm());
            let mut fd = FactorMatrix::zeros(n, r);
            for c in 0..n * r {
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp.as_mut_slice()[c] += h;
                xm.as_mut_slice()[c] -= h;
                fd.as_mut_slice()[c] = (objective(&inst, &loss, &xp).unwrap() - objective(&inst, &loss, &xm).unwrap()) / (2.0 * h);
            }
            let err = g.sub(&fd).frobenius_norm() / g.frobenius_norm().max(1e-12);
            prop_assert!(err <= 1e-6, "relative error {err}");
        }

        #[test]
        fn hessian_matches_finite_differences(n in 2usize..8, r in 1usize..4, seed in any::<u64>(), choice in 0u8..2) {
            let inst = random_instance(n, r, seed);
            let loss = loss_for(choice);
            let x = random_factor(n, r, seed.wrapping_add(1));
            let d = random_factor(n, r, seed.wrapping_add(2));
            let q = hessian_quadratic(&inst, &loss, &x, &d).unwrap();
            let h = 1e-4;
            let f0 = objective(&inst, &loss, &x).unwrap();
            let fp = objective(&inst, &loss, &x.axpy(h, &d)).unwrap();
            let fm = objective(&inst, &loss, &x.axpy(-h, &d)).unwrap();
            let fd = (fp - 2.0 * f0 + fm) / (h * h);
            let scale = q.abs().max(HessianOperator::new(&inst, &loss, &x).unwrap().dense().norm() * d.dot(&d));
            prop_assert!((q - fd).abs() <= 1e-5 * scale, "{q} vs {fd}");
        }

        #[test]
        fn dense_hessian_matches_quadratic(n in 1usize..8, r in 1usize..4, seed in any::<u64>(), choice in 0u8..2) {
            let inst = random_instance(n, r, seed);
            let loss = loss_for(choice);
            let x = random_factor(n, r, seed.wrapping_add(1));
            let d = random_factor(n, r, seed.wrapping_add(2));
            let op = HessianOperator::new(&inst, &loss, &x).unwrap();
            let hmat = op.dense();
            prop_assert!((&hmat - hmat.transpose()).norm() <= 1e-12 * hmat.norm());
            let v = nalgebra::DVector::from_column_slice(d.as_slice());
            let dense = (v.transpose() * &hmat * &v)[(0, 0)];
            let q = op.quadratic(&d).unwrap();
            prop_assert!((dense - q).abs() <= 1e-10 * q.abs().max(1.0));
        }

        #[test]
        fn objective_orbit_invariant(n in 1usize..8, r in 1usize..4, seed in any::<u64>(), choice in 0u8..2) {
            let inst = random_instance(n, r, seed);
            let loss = loss_for(choice);
            let x = random_factor(n, r, seed.wrapping_add(1));
            let q = random_orthogonal(r, seed.wrapping_add(3));
            let a = objective(&inst, &loss, &x).unwrap();
            let b = objective(&inst, &loss, &x.mul_right(&q)).unwrap();
            prop_assert!((a - b).abs() <= 1e-10 * a.max(1.0));
        }

        #[test]
        fn restriction_map_preserves_product(n in 1usize..8, r in 1usize..4, seed in any::<u64>()) {
            prop_assume!(r <= n);
            let x = random_factor(n, r, seed);
            let w = restriction_map(&x);
            prop_assert!(w.product_distance(&x) <= 1e-10 * x.product_norm());
            for i in 0..r {
                prop_assert!(w.get(i, i) >= 0.0);
                for k in i + 1..r {
                    prop_assert_eq!(w.get(i, k), 0.0);
                }
            }
        }
    }
}
