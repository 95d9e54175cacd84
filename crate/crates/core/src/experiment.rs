//! Success-rate sweeps over the perturbation size and the equal-probability
//! test on unperturbed instances.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};
use thiserror::Error;

use crate::factor::FactorMatrix;
use crate::graph::{build_erdos_renyi, build_named_pattern, induce_measurement_set, BlockSparsityGraph, GraphError, NamedPattern, PatternParams};
use crate::instance::{assemble_instance, build_canonical_ground_truth, perturb, InstanceError, McInstance};
use crate::landscape::LossSpec;
use crate::optimizer::{gradient_descent, is_success, sample_radial_init, GdConfig, InitDist, OptimizerError};
use crate::rng::{derive_seed, Domain};

/// Two-sided 95% normal quantile.
pub const Z95: f64 = 1.959963984540054;
/// Distance within which an endpoint is matched to a known minimum.
pub const MATCH_TOL: f64 = 0.1;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("invalid experiment spec: {0}")]
    InvalidSpec(String),
    #[error("run {trial} converged to no known global minimum (distance {distance:.3e})")]
    UnmatchedEndpoint { trial: usize, distance: f64 },
    #[error("table is empty")]
    EmptyTable,
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Instance(#[from] InstanceError),
    #[error(transparent)]
    Optimizer(#[from] OptimizerError),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// `count` equally spaced values strictly inside `(lo, hi)`:
/// `lo + (hi - lo) i / (count + 1)`, `i = 1..=count`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GammaGrid {
    pub count: usize,
    pub lo: f64,
    pub hi: f64,
}

impl GammaGrid {
    pub fn values(&self) -> Vec<f64> {
        let step = (self.hi - self.lo) / (self.count + 1) as f64;
        (1..=self.count).map(|i| self.lo + step * i as f64).collect()
    }
}

/// Where the block sparsity graph comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GraphSource {
    /// Random graph with `S = {1, ..., s_size}` as its maximal independent set.
    ErdosRenyi { p: f64, s_size: usize },
    Pattern { pattern: NamedPattern, k: Option<usize> },
    Explicit { graph: BlockSparsityGraph },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuccessSpec {
    pub graph: GraphSource,
    pub n: usize,
    pub r: usize,
    pub gammas: Vec<f64>,
    pub trials: usize,
    pub init: InitDist,
    pub seed: u64,
    /// Relative Frobenius tolerance of the success test.
    pub rel_tol: f64,
    /// Iteration cap per run; `None` keeps the optimizer default.
    pub max_iters: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuccessRow {
    pub gamma: f64,
    pub n: usize,
    pub r: usize,
    #[serde(rename = "S_size")]
    pub s_size: usize,
    pub p: Option<f64>,
    pub seed: u64,
    pub trials: usize,
    pub successes: usize,
    pub rate: f64,
    pub wilson_ci_low: f64,
    pub wilson_ci_high: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SuccessRateTable {
    pub rows: Vec<SuccessRow>,
}

impl SuccessRateTable {
    /// Rows ordered by `(S_size, gamma)`.
    pub fn sorted(mut self) -> Self {
        self.rows
            .sort_by(|a, b| a.s_size.cmp(&b.s_size).then(a.gamma.total_cmp(&b.gamma)).then(a.seed.cmp(&b.seed)));
        self
    }

    pub fn extend(&mut self, other: SuccessRateTable) {
        self.rows.extend(other.rows);
    }

    pub fn row(&self, s_size: usize, gamma: f64) -> Option<&SuccessRow> {
        self.rows.iter().find(|r| r.s_size == s_size && r.gamma == gamma)
    }

    /// CSV text with a header row, sorted by `(S_size, gamma)`.
    pub fn to_csv(&self) -> Result<String, ExperimentError> {
        if self.rows.is_empty() {
            return Err(ExperimentError::EmptyTable);
        }
        let sorted = self.clone().sorted();
        let mut w = csv::Writer::from_writer(Vec::new());
        for row in &sorted.rows {
            w.serialize(row)?;
        }
        let bytes = w.into_inner().map_err(|e| e.into_error())?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}

/// Writes the table as CSV through a temporary file renamed into place.
pub fn emit_plot_data(table: &SuccessRateTable, path: &Path) -> Result<(), ExperimentError> {
    let text = table.to_csv()?;
    crate::io::write_atomic(path, text.as_bytes())?;
    Ok(())
}

/// Wilson score interval for `k` successes out of `n`.
pub fn wilson_interval(k: usize, n: usize, z: f64) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let nf = n as f64;
    let p = k as f64 / nf;
    let z2 = z * z;
    let denom = 1.0 + z2 / nf;
    let center = (p + z2 / (2.0 * nf)) / denom;
    let half = z / denom * (p * (1.0 - p) / nf + z2 / (4.0 * nf * nf)).sqrt();
    let lo = if k == 0 { 0.0 } else { (center - half).max(0.0) };
    let hi = if k == n { 1.0 } else { (center + half).min(1.0) };
    (lo, hi)
}

/// Graph, independent set and unperturbed ground truth of a spec.
pub fn build_base(spec: &SuccessSpec) -> Result<(BlockSparsityGraph, FactorMatrix), ExperimentError> {
    if spec.r == 0 || spec.n < spec.r {
        return Err(ExperimentError::InvalidSpec(format!("need 1 <= r <= n, got n = {}, r = {}", spec.n, spec.r)));
    }
    let m = spec.n / spec.r;
    let g = match &spec.graph {
        GraphSource::ErdosRenyi { p, s_size } => {
            if *s_size == 0 || *s_size > m {
                return Err(ExperimentError::InvalidSpec(format!("s_size = {s_size} outside 1..={m}")));
            }
            let s: Vec<usize> = (0..*s_size).collect();
            let g = build_erdos_renyi(m, *p, &s, derive_seed(spec.seed, Domain::ErdosRenyi, 0))?;
            if spec.r > 1 {
                g.with_e2_path(&s)?
            } else {
                g
            }
        }
        GraphSource::Pattern { pattern, k } => {
            let mut params = PatternParams::new(m).with_r(spec.r);
            if let Some(k) = k {
                params = params.with_k(*k);
            }
            build_named_pattern(*pattern, params)?
        }
        GraphSource::Explicit { graph } => graph.clone(),
    };
    let s: Vec<usize> = g
        .independent_set()
        .ok_or_else(|| ExperimentError::InvalidSpec("graph has no designated independent set".into()))?
        .iter()
        .copied()
        .collect();
    if spec.n != m * spec.r {
        return Err(ExperimentError::InvalidSpec(format!("n = {} must be a multiple of r = {}", spec.n, spec.r)));
    }
    let x = build_canonical_ground_truth(&g, &s, spec.n, spec.r)?;
    Ok((g, x))
}

/// Perturbed instance for grid point `gi` with perturbation size `gamma`.
pub fn perturbed_instance(
    spec: &SuccessSpec,
    g: &BlockSparsityGraph,
    x: &FactorMatrix,
    gi: usize,
    gamma: f64,
) -> Result<McInstance, ExperimentError> {
    let om = induce_measurement_set(g, spec.n, spec.r)?;
    let xe = perturb(x, gamma, derive_seed(spec.seed, Domain::Perturbation, gi as u64));
    Ok(assemble_instance(xe, om, Some(g.clone()))?)
}

pub fn success_rate_experiment(spec: &SuccessSpec, loss: &LossSpec) -> Result<SuccessRateTable, ExperimentError> {
    if spec.trials == 0 {
        return Err(ExperimentError::InvalidSpec("trials must be at least 1".into()));
    }
    if spec.gammas.is_empty() {
        return Err(ExperimentError::InvalidSpec("gamma grid is empty".into()));
    }
    if let Some(bad) = spec.gammas.iter().find(|g| !(**g >= 0.0 && g.is_finite())) {
        return Err(ExperimentError::InvalidSpec(format!("gamma = {bad} must be nonnegative")));
    }
    spec.init.validate().map_err(ExperimentError::InvalidSpec)?;
    let (g, x) = build_base(spec)?;
    let s_size = g.independent_set().map_or(0, |s| s.len());
    let p = match spec.graph {
        GraphSource::ErdosRenyi { p, .. } => Some(p),
        _ => None,
    };
    let mut table = SuccessRateTable::default();
    for (gi, &gamma) in spec.gammas.iter().enumerate() {
        let inst = perturbed_instance(spec, &g, &x, gi, gamma)?;
        let trial_seed = derive_seed(spec.seed, Domain::Init, gi as u64);
        let hits: Vec<bool> = (0..spec.trials)
            .into_par_iter()
            .map(|t| {
                let x0 = sample_radial_init(spec.init, spec.n, spec.r, derive_seed(trial_seed, Domain::Init, t as u64));
                let mut cfg = GdConfig::for_instance(&inst, &x0);
                if let Some(m) = spec.max_iters {
                    cfg.max_iters = m;
                }
                gradient_descent(&inst, loss, &x0, &cfg).map(|run| is_success(&inst, &run.final_point, spec.rel_tol))
            })
            .collect::<Result<_, _>>()?;
        let successes = hits.iter().filter(|&&h| h).count();
        let (lo, hi) = wilson_interval(successes, spec.trials, Z95);
        table.rows.push(SuccessRow {
            gamma,
            n: spec.n,
            r: spec.r,
            s_size,
            p,
            seed: spec.seed,
            trials: spec.trials,
            successes,
            rate: successes as f64 / spec.trials as f64,
            wilson_ci_low: lo,
            wilson_ci_high: hi,
        });
    }
    Ok(table.sorted())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EqualProbabilityResult {
    /// Known minima, indexed by the sign pattern on `S` (bit `b` set when
    /// the `b`-th vertex of `S` is negated).
    pub minima: Vec<FactorMatrix>,
    pub histogram: Vec<usize>,
    pub chi_square: f64,
    pub chi_square_p: f64,
}

/// Runs gradient descent from `trials` radial starts on an unperturbed
/// rank-one canonical instance and tests the hit counts of the `2^{|S|}`
/// global minima for uniformity.
pub fn equal_probability_test(
    inst: &McInstance,
    trials: usize,
    seed: u64,
    init: InitDist,
) -> Result<EqualProbabilityResult, ExperimentError> {
    if inst.r() != 1 {
        return Err(ExperimentError::InvalidSpec("equal-probability test needs r = 1".into()));
    }
    if trials == 0 {
        return Err(ExperimentError::InvalidSpec("trials must be at least 1".into()));
    }
    let g = inst.graph().ok_or(InstanceError::MissingGraph)?;
    let s: Vec<usize> = g
        .independent_set()
        .ok_or_else(|| ExperimentError::InvalidSpec("graph has no designated independent set".into()))?
        .iter()
        .copied()
        .collect();
    if s.len() > 20 {
        return Err(ExperimentError::InvalidSpec(format!("|S| = {} too large to enumerate", s.len())));
    }
    let xs = inst.ground_truth_factor();
    let cells = 1usize << s.len();
    let minima: Vec<FactorMatrix> = (0..cells)
        .map(|mask| {
            let mut x = xs.clone();
            for (b, &v) in s.iter().enumerate() {
                if mask >> b & 1 == 1 {
                    x.set(v, 0, -x.get(v, 0));
                }
            }
            x
        })
        .collect();
    let ends: Vec<FactorMatrix> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let x0 = sample_radial_init(init, inst.n(), 1, derive_seed(seed, Domain::Init, t as u64));
            let cfg = GdConfig::for_instance(inst, &x0);
            gradient_descent(inst, &LossSpec::l2(), &x0, &cfg).map(|r| r.final_point)
        })
        .collect::<Result<_, _>>()?;
    let mut histogram = vec![0usize; cells];
    for (t, e) in ends.iter().enumerate() {
        let mask = s
            .iter()
            .enumerate()
            .fold(0usize, |m, (b, &v)| if e.get(v, 0) < 0.0 { m | 1 << b } else { m });
        let distance = e.sub(&minima[mask]).frobenius_norm();
        if !(distance <= MATCH_TOL) {
            return Err(ExperimentError::UnmatchedEndpoint { trial: t, distance });
        }
        histogram[mask] += 1;
    }
    let expected = trials as f64 / cells as f64;
    let chi_square: f64 = histogram.iter().map(|&o| (o as f64 - expected).powi(2) / expected).sum();
    let chi_square_p = if cells > 1 {
        let dist = ChiSquared::new((cells - 1) as f64).expect("positive degrees of freedom");
        1.0 - dist.cdf(chi_square)
    } else {
        1.0
    };
    Ok(EqualProbabilityResult {
        minima,
        histogram,
        chi_square,
        chi_square_p,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn example1(n: usize) -> McInstance {
        let g = build_named_pattern(NamedPattern::Example1Path, PatternParams::new(n)).unwrap();
        let s: Vec<usize> = g.independent_set().unwrap().iter().copied().collect();
        let x = build_canonical_ground_truth(&g, &s, n, 1).unwrap();
        let om = induce_measurement_set(&g, n, 1).unwrap();
        assemble_instance(x, om, Some(g)).unwrap()
    }

    #[test]
    fn grid_values() {
        let v = GammaGrid { count: 4, lo: 0.0, hi: 0.5 }.values();
        assert_eq!(v.len(), 4);
        assert!((v[0] - 0.1).abs() < 1e-15 && (v[3] - 0.4).abs() < 1e-15);
        let full = GammaGrid { count: 100, lo: 0.0, hi: 0.5 }.values();
        assert_eq!(full.len(), 100);
        assert!(full.iter().all(|&g| g > 0.0 && g < 0.5));
    }

    #[test]
    fn wilson_values() {
        let (lo, hi) = wilson_interval(50, 100, Z95);
        assert!((lo - 0.4038).abs() < 1e-4 && (hi - 0.5962).abs() < 1e-4);
        let (lo, hi) = wilson_interval(0, 300, Z95);
        assert_eq!(lo, 0.0);
        assert!(hi > 0.0 && hi < 0.02);
        let (lo, hi) = wilson_interval(300, 300, Z95);
        assert!(lo > 0.98 && hi == 1.0);
    }

    #[test]
    fn csv_layout() {
        let row = |s: usize, g: f64| SuccessRow {
            gamma: g,
            n: 20,
            r: 1,
            s_size: s,
            p: Some(0.3),
            seed: 1,
            trials: 10,
            successes: 3,
            rate: 0.3,
            wilson_ci_low: 0.1,
            wilson_ci_high: 0.6,
        };
        let t = SuccessRateTable {
            rows: vec![row(10, 0.2), row(5, 0.3), row(5, 0.1)],
        };
        let text = t.to_csv().unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 4);
        assert_eq!(
            lines[0],
            "gamma,n,r,S_size,p,seed,trials,successes,rate,wilson_ci_low,wilson_ci_high"
        );
        assert!(lines[1].starts_with("0.1,20,1,5,"));
        assert!(lines[2].starts_with("0.3,20,1,5,"));
        assert!(lines[3].starts_with("0.2,20,1,10,"));
        let two = SuccessRateTable { rows: vec![row(5, 0.1), row(5, 0.2)] };
        assert_eq!(two.to_csv().unwrap().lines().count(), 3);
        assert!(matches!(SuccessRateTable::default().to_csv(), Err(ExperimentError::EmptyTable)));
    }

    #[test]
    fn two_cell_uniformity() {
        let inst = example1(3);
        let res = equal_probability_test(&inst, 4000, 5, InitDist::Gaussian { sigma: 1.0 }).unwrap();
        assert_eq!(res.histogram.len(), 4);
        // n = 3 has S = {1, 3}: four points, two per sign orbit.
        let total: usize = res.histogram.iter().sum();
        assert_eq!(total, 4000);
        let p: f64 = 0.25;
        let sd = (4000.0f64 * p * (1.0 - p)).sqrt();
        assert!(res.histogram.iter().all(|&h| (h as f64 - 1000.0).abs() <= 3.0 * sd), "{:?}", res.histogram);
        // Sign orbits {x, -x} pair mask b with its complement 3 - b.
        let orbit = (res.histogram[0] + res.histogram[3]) as f64;
        assert!((orbit - 2000.0).abs() <= 3.0 * (4000.0f64 * 0.25).sqrt());
        let again = equal_probability_test(&inst, 4000, 5, InitDist::Gaussian { sigma: 1.0 }).unwrap();
        assert_eq!(res.histogram, again.histogram);
    }

    #[test]
    fn success_rate_small() {
        let spec = SuccessSpec {
            graph: GraphSource::Pattern {
                pattern: NamedPattern::Example1Path,
                k: None,
            },
            n: 6,
            r: 1,
            gammas: vec![0.0, 0.3],
            trials: 200,
            init: InitDist::Gaussian { sigma: 1.0 },
            seed: 3,
            rel_tol: 1e-4,
            max_iters: None,
        };
        let t = success_rate_experiment(&spec, &LossSpec::l2()).unwrap();
        assert_eq!(t.rows.len(), 2);
        let r0 = t.row(3, 0.0).unwrap();
        // Two of the eight equally likely minima reproduce M*.
        assert!((r0.rate - 0.25).abs() <= 3.0 * (0.25f64 * 0.75 / 200.0).sqrt(), "{r0:?}");
        for r in &t.rows {
            assert!(r.successes <= r.trials && (0.0..=1.0).contains(&r.rate));
            assert!(r.wilson_ci_low <= r.rate && r.rate <= r.wilson_ci_high);
        }
        assert_eq!(t, success_rate_experiment(&spec, &LossSpec::l2()).unwrap());
    }

    #[test]
    fn spec_validation() {
        let mut spec = SuccessSpec {
            graph: GraphSource::ErdosRenyi { p: 0.3, s_size: 3 },
            n: 8,
            r: 1,
            gammas: vec![0.1],
            trials: 0,
            init: InitDist::Gaussian { sigma: 1.0 },
            seed: 1,
            rel_tol: 1e-4,
            max_iters: None,
        };
        assert!(matches!(success_rate_experiment(&spec, &LossSpec::l2()), Err(ExperimentError::InvalidSpec(_))));
        spec.trials = 1;
        spec.gammas.clear();
        assert!(matches!(success_rate_experiment(&spec, &LossSpec::l2()), Err(ExperimentError::InvalidSpec(_))));
    }
}
