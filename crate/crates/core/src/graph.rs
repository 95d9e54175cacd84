//! Block sparsity graphs and the measurement sets they induce.
//!
//! Vertices and matrix indices are 0-based in the API. The JSON file
//! formats are 1-based.

use std::collections::{BTreeSet, VecDeque};
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::{self, Domain};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("unknown pattern `{0}`")]
    UnknownPattern(String),
    #[error("invalid pattern parameters: {0}")]
    InvalidParams(String),
    #[error("independent set must not be empty")]
    EmptyS,
    #[error("independent set covers every vertex; no vertex left to connect through")]
    SNotRealizable,
    #[error("invalid edge ({0}, {1}): {2}")]
    InvalidEdge(usize, usize, &'static str),
    #[error("vertex set is not a maximal independent set: {0}")]
    NotMaximalIndependent(String),
    #[error("floor(n / r) = {found} but the graph has m = {expected} vertices")]
    DimensionMismatch { expected: usize, found: usize },
}

fn norm_edge(i: usize, j: usize) -> (usize, usize) {
    if i <= j {
        (i, j)
    } else {
        (j, i)
    }
}

/// Pair of edge sets over `m` block-vertices.
///
/// `e1` edges observe a whole `r x r` block, `e2` edges only its
/// off-diagonal entries. Self-loops are stored explicitly in `e1`.
/// An optional designated maximal independent set travels with the graph
/// for constructions that fix one.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockSparsityGraph {
    m: usize,
    e1: BTreeSet<(usize, usize)>,
    e2: BTreeSet<(usize, usize)>,
    independent_set: Option<BTreeSet<usize>>,
}

impl BlockSparsityGraph {
    pub fn new(m: usize) -> Self {
        Self {
            m,
            e1: BTreeSet::new(),
            e2: BTreeSet::new(),
            independent_set: None,
        }
    }

    /// Builds a graph from edge lists, enforcing range, disjointness and
    /// the no-self-loop rule for `e2`.
    pub fn from_edges(
        m: usize,
        e1: impl IntoIterator<Item = (usize, usize)>,
        e2: impl IntoIterator<Item = (usize, usize)>,
    ) -> Result<Self, GraphError> {
        let mut g = Self::new(m);
        for (i, j) in e1 {
            g.add_e1(i, j)?;
        }
        for (i, j) in e2 {
            g.add_e2(i, j)?;
        }
        Ok(g)
    }

    pub fn m(&self) -> usize {
        self.m
    }

    /// Full-block edges as normalized `(min, max)` pairs.
    pub fn e1(&self) -> &BTreeSet<(usize, usize)> {
        &self.e1
    }

    pub fn e2(&self) -> &BTreeSet<(usize, usize)> {
        &self.e2
    }

    pub fn independent_set(&self) -> Option<&BTreeSet<usize>> {
        self.independent_set.as_ref()
    }

    pub fn add_e1(&mut self, i: usize, j: usize) -> Result<(), GraphError> {
        if i >= self.m || j >= self.m {
            return Err(GraphError::InvalidEdge(i, j, "endpoint out of range"));
        }
        let e = norm_edge(i, j);
        if self.e2.contains(&e) {
            return Err(GraphError::InvalidEdge(i, j, "already an e2 edge"));
        }
        self.e1.insert(e);
        Ok(())
    }

    pub fn add_e2(&mut self, i: usize, j: usize) -> Result<(), GraphError> {
        if i >= self.m || j >= self.m {
            return Err(GraphError::InvalidEdge(i, j, "endpoint out of range"));
        }
        if i == j {
            return Err(GraphError::InvalidEdge(i, j, "e2 self-loop"));
        }
        let e = norm_edge(i, j);
        if self.e1.contains(&e) {
            return Err(GraphError::InvalidEdge(i, j, "already an e1 edge"));
        }
        self.e2.insert(e);
        Ok(())
    }

    pub fn has_e1(&self, i: usize, j: usize) -> bool {
        self.e1.contains(&norm_edge(i, j))
    }

    pub fn has_self_loop(&self, i: usize) -> bool {
        self.e1.contains(&(i, i))
    }

    /// Attaches a designated maximal independent set after checking that
    /// it is independent and maximal in `e1` (self-loops ignored).
    pub fn with_independent_set(
        mut self,
        s: impl IntoIterator<Item = usize>,
    ) -> Result<Self, GraphError> {
        let s: BTreeSet<usize> = s.into_iter().collect();
        if let Some(&v) = s.iter().find(|&&v| v >= self.m) {
            return Err(GraphError::NotMaximalIndependent(format!("vertex {} out of range", v + 1)));
        }
        let adj = self.adjacency();
        for &u in &s {
            if let Some(&v) = adj[u].iter().find(|v| s.contains(v)) {
                return Err(GraphError::NotMaximalIndependent(format!(
                    "vertices {} and {} are adjacent",
                    u + 1,
                    v + 1
                )));
            }
        }
        for (v, nb) in adj.iter().enumerate().take(self.m) {
            if !s.contains(&v) && !nb.iter().any(|u| s.contains(u)) {
                return Err(GraphError::NotMaximalIndependent(format!(
                    "vertex {} can be added",
                    v + 1
                )));
            }
        }
        self.independent_set = Some(s);
        Ok(self)
    }

    /// Adds a path of `e2` edges through `s` in ascending order, giving a
    /// connected `e2` subgraph on `s`.
    pub fn with_e2_path(mut self, s: &[usize]) -> Result<Self, GraphError> {
        let mut v: Vec<usize> = s.to_vec();
        v.sort_unstable();
        v.dedup();
        for w in v.windows(2) {
            self.add_e2(w[0], w[1])?;
        }
        Ok(self)
    }

    /// Neighbor lists over `e1` excluding self-loops.
    pub fn adjacency(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.m];
        for &(i, j) in &self.e1 {
            if i != j {
                adj[i].push(j);
                adj[j].push(i);
            }
        }
        for a in &mut adj {
            a.sort_unstable();
        }
        adj
    }

    /// Block positions `(i, j)`, both orientations, observed in full.
    pub fn observed_blocks(&self) -> BTreeSet<(usize, usize)> {
        let mut out = BTreeSet::new();
        for &(i, j) in &self.e1 {
            out.insert((i, j));
            out.insert((j, i));
        }
        out
    }

    pub fn to_file(&self) -> GraphFile {
        GraphFile {
            m: self.m,
            e1: self.e1.iter().map(|&(i, j)| [i + 1, j + 1]).collect(),
            e2: self.e2.iter().map(|&(i, j)| [i + 1, j + 1]).collect(),
            s: self
                .independent_set
                .as_ref()
                .map(|s| s.iter().map(|v| v + 1).collect()),
        }
    }

    pub fn from_file(f: &GraphFile) -> Result<Self, GraphError> {
        let one_based = |p: &[usize; 2]| -> Result<(usize, usize), GraphError> {
            if p[0] == 0 || p[1] == 0 {
                return Err(GraphError::InvalidEdge(p[0], p[1], "vertices are 1-based"));
            }
            Ok((p[0] - 1, p[1] - 1))
        };
        let e1 = f.e1.iter().map(one_based).collect::<Result<Vec<_>, _>>()?;
        let e2 = f.e2.iter().map(one_based).collect::<Result<Vec<_>, _>>()?;
        let g = Self::from_edges(f.m, e1, e2)?;
        match &f.s {
            Some(s) => {
                if s.contains(&0) {
                    return Err(GraphError::NotMaximalIndependent("vertices are 1-based".into()));
                }
                g.with_independent_set(s.iter().map(|v| v - 1))
            }
            None => Ok(g),
        }
    }
}

/// On-disk graph: `{m, e1: [[i,j],...], e2: [[i,j],...]}`, 1-based, with
/// an optional designated independent set `s`.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct GraphFile {
    pub m: usize,
    pub e1: Vec<[usize; 2]>,
    pub e2: Vec<[usize; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub s: Option<Vec<usize>>,
}

impl Serialize for BlockSparsityGraph {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.to_file().serialize(s)
    }
}

impl<'de> Deserialize<'de> for BlockSparsityGraph {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let f = GraphFile::deserialize(d)?;
        Self::from_file(&f).map_err(serde::de::Error::custom)
    }
}

/// Symmetric set of observed entries of an `n x n` matrix, stored sorted.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MeasurementSet {
    n: usize,
    r: usize,
    entries: Vec<(usize, usize)>,
}

impl MeasurementSet {
    /// Builds a set from arbitrary pairs, adding mirrors so the result is
    /// symmetric.
    pub fn from_pairs(
        n: usize,
        r: usize,
        pairs: impl IntoIterator<Item = (usize, usize)>,
    ) -> Result<Self, GraphError> {
        let mut set = BTreeSet::new();
        for (i, j) in pairs {
            if i >= n || j >= n {
                return Err(GraphError::InvalidEdge(i, j, "entry outside the matrix"));
            }
            set.insert((i, j));
            set.insert((j, i));
        }
        Ok(Self {
            n,
            r,
            entries: set.into_iter().collect(),
        })
    }

    /// Every entry of the matrix.
    pub fn full(n: usize, r: usize) -> Self {
        let entries = (0..n).flat_map(|i| (0..n).map(move |j| (i, j))).collect();
        Self { n, r, entries }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn r(&self) -> usize {
        self.r
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Sorted ordered pairs (both orientations).
    pub fn entries(&self) -> &[(usize, usize)] {
        &self.entries
    }

    pub fn contains(&self, i: usize, j: usize) -> bool {
        self.entries.binary_search(&(i, j)).is_ok()
    }

    /// Pairs with `i <= j`.
    pub fn upper_pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.entries.iter().copied().filter(|&(i, j)| i <= j)
    }

    pub fn is_symmetric(&self) -> bool {
        self.entries.iter().all(|&(i, j)| self.contains(j, i))
    }

    pub fn to_pairs_one_based(&self) -> Vec<[usize; 2]> {
        self.entries.iter().map(|&(i, j)| [i + 1, j + 1]).collect()
    }

    pub fn from_pairs_one_based(n: usize, r: usize, pairs: &[[usize; 2]]) -> Result<Self, GraphError> {
        let mut v = Vec::with_capacity(pairs.len());
        for p in pairs {
            if p[0] == 0 || p[1] == 0 {
                return Err(GraphError::InvalidEdge(p[0], p[1], "indices are 1-based"));
            }
            v.push((p[0] - 1, p[1] - 1));
        }
        Self::from_pairs(n, r, v)
    }
}

/// Connectivity, bipartiteness and independent-set facts about `e1`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct GraphAnalysis {
    pub connected: bool,
    pub nonbipartite: bool,
    /// Closed walk `c0, c1, ..., c_{2k}` with edges between consecutive
    /// vertices and back to `c0`; a single vertex is a self-loop.
    pub odd_cycle: Option<Vec<usize>>,
    pub max_independent_set: Vec<usize>,
    pub all_mis_have_self_loops: bool,
}

fn bfs_tree(adj: &[Vec<usize>], root: usize) -> (Vec<Option<usize>>, Vec<usize>, Vec<usize>) {
    let m = adj.len();
    let mut parent = vec![None; m];
    let mut depth = vec![usize::MAX; m];
    let mut order = Vec::new();
    let mut q = VecDeque::new();
    depth[root] = 0;
    q.push_back(root);
    while let Some(u) = q.pop_front() {
        order.push(u);
        for &v in &adj[u] {
            if depth[v] == usize::MAX {
                depth[v] = depth[u] + 1;
                parent[v] = Some(u);
                q.push_back(v);
            }
        }
    }
    (parent, depth, order)
}

/// Connected components of `e1` (self-loops ignored), each sorted, ordered
/// by smallest vertex.
pub fn components(adj: &[Vec<usize>]) -> Vec<Vec<usize>> {
    let m = adj.len();
    let mut seen = vec![false; m];
    let mut out = Vec::new();
    for s in 0..m {
        if seen[s] {
            continue;
        }
        let (_, _, mut order) = bfs_tree(adj, s);
        for &v in &order {
            seen[v] = true;
        }
        order.sort_unstable();
        out.push(order);
    }
    out
}

/// Shortest-layer odd cycle of `e1`: a self-loop when one exists,
/// otherwise one found from a same-depth edge of a BFS tree.
pub fn find_odd_cycle(g: &BlockSparsityGraph) -> Option<Vec<usize>> {
    if let Some(&(v, _)) = g.e1.iter().find(|(i, j)| i == j) {
        return Some(vec![v]);
    }
    let adj = g.adjacency();
    let mut best: Option<Vec<usize>> = None;
    for comp in components(&adj) {
        let (parent, depth, _) = bfs_tree(&adj, comp[0]);
        let mut pick: Option<(usize, usize)> = None;
        for &u in &comp {
            for &v in &adj[u] {
                if u < v && depth[u] == depth[v] && pick.is_none_or(|(a, _)| depth[u] < depth[a]) {
                    pick = Some((u, v));
                }
            }
        }
        let Some((u, v)) = pick else { continue };
        let mut pu = vec![u];
        let mut pv = vec![v];
        let (mut a, mut b) = (u, v);
        while a != b {
            a = parent[a].expect("bfs parent");
            b = parent[b].expect("bfs parent");
            pu.push(a);
            pv.push(b);
        }
        // pu ends at the common ancestor; walk ancestor -> u, then v -> ancestor.
        pv.pop();
        let mut cycle: Vec<usize> = pu.into_iter().rev().collect();
        cycle.extend(pv);
        if best.as_ref().is_none_or(|c| cycle.len() < c.len()) {
            best = Some(cycle);
        }
    }
    best
}

/// Greedy maximal independent set: self-loop vertices in ascending order
/// first, then the rest.
pub fn greedy_mis(g: &BlockSparsityGraph) -> Vec<usize> {
    let adj = g.adjacency();
    let mut in_set = vec![false; g.m];
    let mut blocked = vec![false; g.m];
    let loops = (0..g.m).filter(|&v| g.has_self_loop(v));
    let rest = (0..g.m).filter(|&v| !g.has_self_loop(v));
    for v in loops.chain(rest) {
        if !blocked[v] {
            in_set[v] = true;
            blocked[v] = true;
            for &u in &adj[v] {
                blocked[u] = true;
            }
        }
    }
    (0..g.m).filter(|&v| in_set[v]).collect()
}

pub fn analyze_graph(g: &BlockSparsityGraph) -> GraphAnalysis {
    let adj = g.adjacency();
    let connected = g.m > 0 && components(&adj).len() == 1;
    let odd_cycle = find_odd_cycle(g);
    let max_independent_set = match &g.independent_set {
        Some(s) => s.iter().copied().collect(),
        None => greedy_mis(g),
    };
    let all_mis_have_self_loops =
        !max_independent_set.is_empty() && max_independent_set.iter().all(|&v| g.has_self_loop(v));
    GraphAnalysis {
        connected,
        nonbipartite: odd_cycle.is_some(),
        odd_cycle,
        max_independent_set,
        all_mis_have_self_loops,
    }
}

/// Named constructions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NamedPattern {
    /// `|i - j| <= 1`, all self-loops.
    Example1Path,
    /// Self-loops plus every even (1-based) vertex joined to all vertices.
    Example2EvenCross,
    /// Hub vertex 1, leaves with self-loops.
    Star,
    /// Complete graph with self-loops minus the edge (1, 2).
    SingleMissing,
    /// Row and column `k` of blocks, including `(k, k)`.
    Cross,
    /// Cross plus all self-loops in `e1` and every other pair in `e2`.
    AugmentedCross,
    /// Single-missing graph with the off-diagonal entries of block (1, 2)
    /// observed through `e2`.
    SingleMissingRankR,
}

impl NamedPattern {
    pub const ALL: [NamedPattern; 7] = [
        NamedPattern::Example1Path,
        NamedPattern::Example2EvenCross,
        NamedPattern::Star,
        NamedPattern::SingleMissing,
        NamedPattern::Cross,
        NamedPattern::AugmentedCross,
        NamedPattern::SingleMissingRankR,
    ];

    pub fn name(self) -> &'static str {
        match self {
            NamedPattern::Example1Path => "example1_path",
            NamedPattern::Example2EvenCross => "example2_even_cross",
            NamedPattern::Star => "star",
            NamedPattern::SingleMissing => "single_missing",
            NamedPattern::Cross => "cross",
            NamedPattern::AugmentedCross => "augmented_cross",
            NamedPattern::SingleMissingRankR => "single_missing_rank_r",
        }
    }
}

impl fmt::Display for NamedPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for NamedPattern {
    type Err = GraphError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| GraphError::UnknownPattern(s.to_string()))
    }
}

/// Parameters for [`build_named_pattern`]. `m` is the vertex count (equal
/// to `n` for rank-1 use); `k` is the 0-based cross vertex.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PatternParams {
    pub m: usize,
    pub k: Option<usize>,
    pub r: usize,
}

impl PatternParams {
    pub fn new(m: usize) -> Self {
        Self { m, k: None, r: 1 }
    }

    pub fn with_k(mut self, k: usize) -> Self {
        self.k = Some(k);
        self
    }

    pub fn with_r(mut self, r: usize) -> Self {
        self.r = r;
        self
    }
}

pub fn build_named_pattern(
    pattern: NamedPattern,
    params: PatternParams,
) -> Result<BlockSparsityGraph, GraphError> {
    let m = params.m;
    let invalid = |msg: String| Err(GraphError::InvalidParams(msg));
    if params.r == 0 {
        return invalid("r must be positive".into());
    }
    let min_m = match pattern {
        NamedPattern::Example1Path | NamedPattern::Example2EvenCross => 1,
        NamedPattern::Star => 2,
        NamedPattern::SingleMissing | NamedPattern::SingleMissingRankR => 3,
        NamedPattern::Cross | NamedPattern::AugmentedCross => 2 * params.r.max(1),
    };
    if m < min_m {
        return invalid(format!("{pattern} needs m >= {min_m}, got {m}"));
    }
    let mut g = BlockSparsityGraph::new(m);
    let s: Option<Vec<usize>> = match pattern {
        NamedPattern::Example1Path => {
            for i in 0..m {
                g.add_e1(i, i)?;
                if i + 1 < m {
                    g.add_e1(i, i + 1)?;
                }
            }
            Some((0..m).step_by(2).collect())
        }
        NamedPattern::Example2EvenCross => {
            for i in 0..m {
                g.add_e1(i, i)?;
                for even in (1..m).step_by(2) {
                    g.add_e1(i, even)?;
                }
            }
            Some((0..m).step_by(2).collect())
        }
        NamedPattern::Star => {
            for leaf in 1..m {
                g.add_e1(0, leaf)?;
                g.add_e1(leaf, leaf)?;
            }
            Some((1..m).collect())
        }
        NamedPattern::SingleMissing | NamedPattern::SingleMissingRankR => {
            for i in 0..m {
                for j in i..m {
                    if (i, j) != (0, 1) {
                        g.add_e1(i, j)?;
                    }
                }
            }
            if pattern == NamedPattern::SingleMissingRankR {
                g.add_e2(0, 1)?;
            }
            Some(vec![0, 1])
        }
        NamedPattern::Cross | NamedPattern::AugmentedCross => {
            let k = match params.k {
                Some(k) if k < m => k,
                Some(k) => return invalid(format!("k = {} outside 1..={m}", k + 1)),
                None => return invalid(format!("{pattern} requires k")),
            };
            for j in 0..m {
                g.add_e1(k, j)?;
            }
            if pattern == NamedPattern::AugmentedCross {
                for i in 0..m {
                    g.add_e1(i, i)?;
                }
                for i in 0..m {
                    for j in i + 1..m {
                        if i != k && j != k {
                            g.add_e2(i, j)?;
                        }
                    }
                }
                Some((0..m).filter(|&v| v != k).collect())
            } else {
                None
            }
        }
    };
    match s {
        Some(s) => g.with_independent_set(s),
        None => Ok(g),
    }
}

/// Random graph for the success-rate experiments.
///
/// Each pair `i < j` joins `e1` with probability `p`. Edges inside
/// `target_s` are then dropped, every vertex of `target_s` gets a
/// self-loop, vertices outside `target_s` with no neighbor in it are joined
/// to a random member, and remaining components are linked without adding
/// edges inside `target_s`. `e2` is a random spanning tree on `target_s`
/// built by joining each vertex of a random permutation to a uniformly
/// chosen earlier one.
pub fn build_erdos_renyi(
    m: usize,
    p: f64,
    target_s: &[usize],
    seed: u64,
) -> Result<BlockSparsityGraph, GraphError> {
    if !(0.0..=1.0).contains(&p) {
        return Err(GraphError::InvalidParams(format!("p = {p} outside [0, 1]")));
    }
    let s: BTreeSet<usize> = target_s.iter().copied().collect();
    if s.is_empty() {
        return Err(GraphError::EmptyS);
    }
    if let Some(&v) = s.iter().find(|&&v| v >= m) {
        return Err(GraphError::InvalidParams(format!("vertex {} outside 1..={m}", v + 1)));
    }
    if s.len() == m {
        return Err(GraphError::SNotRealizable);
    }
    let mut rng = rng::stream(seed, Domain::ErdosRenyi, 0);
    let mut g = BlockSparsityGraph::new(m);
    for i in 0..m {
        for j in i + 1..m {
            let keep = rng.random::<f64>() < p;
            if keep && !(s.contains(&i) && s.contains(&j)) {
                g.add_e1(i, j)?;
            }
        }
    }
    for &v in &s {
        g.add_e1(v, v)?;
    }
    let s_vec: Vec<usize> = s.iter().copied().collect();
    for v in 0..m {
        if s.contains(&v) {
            continue;
        }
        if !s.iter().any(|&u| g.has_e1(u, v)) {
            let u = s_vec[rng.random_range(0..s_vec.len())];
            g.add_e1(u, v)?;
        }
    }
    let comps = components(&g.adjacency());
    if comps.len() > 1 {
        let first_free = (0..m).find(|v| !s.contains(v)).expect("|S| < m");
        let root_idx = comps.iter().position(|c| c.contains(&first_free)).expect("vertex in a component");
        let mut root: Vec<usize> = comps[root_idx].clone();
        for (ci, comp) in comps.iter().enumerate() {
            if ci == root_idx {
                continue;
            }
            let free: Vec<usize> = comp.iter().copied().filter(|v| !s.contains(v)).collect();
            let (u, v) = if free.is_empty() {
                let root_free: Vec<usize> = root.iter().copied().filter(|v| !s.contains(v)).collect();
                (comp[0], root_free[rng.random_range(0..root_free.len())])
            } else {
                (free[rng.random_range(0..free.len())], root[rng.random_range(0..root.len())])
            };
            g.add_e1(u, v)?;
            root.extend_from_slice(comp);
        }
    }
    let mut tree_rng = rng::stream(seed, Domain::SpanningTree, 0);
    let mut perm = s_vec.clone();
    perm.shuffle(&mut tree_rng);
    for t in 1..perm.len() {
        let parent = perm[tree_rng.random_range(0..t)];
        g.add_e2(perm[t], parent)?;
    }
    g.with_independent_set(s_vec)
}

/// Entries observed under [`BlockSparsityGraph`] semantics for an `n x n`
/// matrix split into `r x r` blocks.
pub fn induce_measurement_set(
    g: &BlockSparsityGraph,
    n: usize,
    r: usize,
) -> Result<MeasurementSet, GraphError> {
    let blocks = n.checked_div(r).unwrap_or(0);
    if r == 0 || blocks != g.m {
        return Err(GraphError::DimensionMismatch {
            expected: g.m,
            found: blocks,
        });
    }
    let mut set = BTreeSet::new();
    for &(bi, bj) in &g.e1 {
        for a in 0..r {
            for b in 0..r {
                set.insert((bi * r + a, bj * r + b));
                set.insert((bj * r + b, bi * r + a));
            }
        }
    }
    for &(bi, bj) in &g.e2 {
        for a in 0..r {
            for b in 0..r {
                if a != b {
                    set.insert((bi * r + a, bj * r + b));
                    set.insert((bj * r + b, bi * r + a));
                }
            }
        }
    }
    let mr = g.m * r;
    for t in mr..n {
        for c in 0..n {
            set.insert((t, c));
            set.insert((c, t));
        }
    }
    Ok(MeasurementSet {
        n,
        r,
        entries: set.into_iter().collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn one(v: &[usize]) -> Vec<usize> {
        v.iter().map(|x| x - 1).collect()
    }

    /// Independent count: walk every entry and decide from block semantics.
    fn enumerate_count(g: &BlockSparsityGraph, n: usize, r: usize) -> usize {
        let mr = g.m() * r;
        let mut count = 0;
        for i in 0..n {
            for j in 0..n {
                let observed = if i >= mr || j >= mr {
                    true
                } else {
                    let (bi, bj) = (i / r, j / r);
                    let e = norm_edge(bi, bj);
                    g.e1().contains(&e) || (g.e2().contains(&e) && i % r != j % r)
                };
                count += observed as usize;
            }
        }
        count
    }

    #[test]
    fn example1_path_edges() {
        let g = build_named_pattern(NamedPattern::Example1Path, PatternParams::new(4)).unwrap();
        let loops = g.e1().iter().filter(|(i, j)| i == j).count();
        assert_eq!(loops, 4);
        assert_eq!(g.e1().len() - loops, 3);
        assert!(g.e2().is_empty());
    }

    #[test]
    fn single_missing_size() {
        let g = build_named_pattern(NamedPattern::SingleMissing, PatternParams::new(5)).unwrap();
        assert_eq!(induce_measurement_set(&g, 5, 1).unwrap().len(), 23);
    }

    #[test]
    fn single_missing_family_sizes() {
        for n in 3..=12 {
            let g = build_named_pattern(NamedPattern::SingleMissing, PatternParams::new(n)).unwrap();
            assert_eq!(induce_measurement_set(&g, n, 1).unwrap().len(), n * n - 2);
        }
        for (m, r) in [(3, 2), (4, 2), (3, 3), (5, 2)] {
            let g = build_named_pattern(NamedPattern::SingleMissingRankR, PatternParams::new(m).with_r(r)).unwrap();
            let n = m * r;
            assert_eq!(induce_measurement_set(&g, n, r).unwrap().len(), n * n - 2 * r);
        }
    }

    #[test]
    fn cross_blocks() {
        let g = build_named_pattern(NamedPattern::Cross, PatternParams::new(3).with_k(1)).unwrap();
        let expected: BTreeSet<(usize, usize)> =
            [(2, 1), (1, 2), (2, 2), (2, 3), (3, 2)].iter().map(|&(a, b)| (a - 1, b - 1)).collect();
        assert_eq!(g.observed_blocks(), expected);
        assert_eq!(induce_measurement_set(&g, 6, 2).unwrap().len(), 20);
    }

    #[test]
    fn cross_rejects_bad_k() {
        let e = build_named_pattern(NamedPattern::Cross, PatternParams::new(3).with_k(3)).unwrap_err();
        assert!(matches!(e, GraphError::InvalidParams(_)));
        let e = build_named_pattern(NamedPattern::Cross, PatternParams::new(3)).unwrap_err();
        assert!(matches!(e, GraphError::InvalidParams(_)));
    }

    #[test]
    fn unknown_pattern() {
        assert_eq!(
            "moebius".parse::<NamedPattern>().unwrap_err(),
            GraphError::UnknownPattern("moebius".into())
        );
        for p in NamedPattern::ALL {
            assert_eq!(p.name().parse::<NamedPattern>().unwrap(), p);
        }
    }

    #[test]
    fn example1_measurements() {
        let g = build_named_pattern(NamedPattern::Example1Path, PatternParams::new(4)).unwrap();
        assert_eq!(induce_measurement_set(&g, 4, 1).unwrap().len(), 10);
    }

    #[test]
    fn e2_edge_gives_off_diagonal_only() {
        let g = BlockSparsityGraph::from_edges(2, [], [(0, 1)]).unwrap();
        let om = induce_measurement_set(&g, 4, 2).unwrap();
        let block: Vec<_> = om.entries().iter().filter(|&&(i, j)| i < 2 && j >= 2).collect();
        assert_eq!(block, vec![&(0, 3), &(1, 2)]);
    }

    #[test]
    fn trailing_rows_observed() {
        let g = BlockSparsityGraph::from_edges(2, [(0, 0)], []).unwrap();
        let om = induce_measurement_set(&g, 5, 2).unwrap();
        assert_eq!(om.len(), 4 + 25 - 16);
        assert!(om.contains(4, 3) && om.contains(2, 4));
        assert_eq!(om.len(), enumerate_count(&g, 5, 2));
    }

    #[test]
    fn dimension_mismatch() {
        let g = build_named_pattern(NamedPattern::Example1Path, PatternParams::new(4)).unwrap();
        assert!(matches!(
            induce_measurement_set(&g, 6, 2),
            Err(GraphError::DimensionMismatch { expected: 4, found: 3 })
        ));
    }

    #[test]
    fn e2_rules() {
        let mut g = BlockSparsityGraph::new(3);
        assert!(g.add_e2(1, 1).is_err());
        g.add_e1(0, 1).unwrap();
        assert!(g.add_e2(1, 0).is_err());
        assert!(g.add_e1(0, 3).is_err());
    }

    #[test]
    fn analysis_path() {
        let g = build_named_pattern(NamedPattern::Example1Path, PatternParams::new(4)).unwrap();
        let a = analyze_graph(&g);
        assert!(a.connected && a.nonbipartite);
        assert_eq!(a.odd_cycle.as_ref().unwrap().len(), 1);
        assert_eq!(a.max_independent_set, one(&[1, 3]));
        assert!(a.all_mis_have_self_loops);
        // Greedy rule gives the same set without the designation.
        let bare = BlockSparsityGraph::from_edges(4, g.e1().iter().copied(), []).unwrap();
        assert_eq!(greedy_mis(&bare), one(&[1, 3]));
    }

    /// Exhaustive check over all subsets of a 4-vertex path.
    #[test]
    fn path_mis_exhaustive() {
        let g = build_named_pattern(NamedPattern::Example1Path, PatternParams::new(4)).unwrap();
        let adj = g.adjacency();
        let mut maximal = Vec::new();
        for mask in 0u32..16 {
            let set: Vec<usize> = (0..4).filter(|v| mask & (1 << v) != 0).collect();
            let indep = set.iter().all(|&u| adj[u].iter().all(|v| !set.contains(v)));
            let max = (0..4).all(|v| set.contains(&v) || adj[v].iter().any(|u| set.contains(u)));
            if indep && max {
                maximal.push(set);
            }
        }
        assert!(maximal.contains(&one(&[1, 3])));
        assert!(maximal.contains(&greedy_mis(&g)));
    }

    #[test]
    fn bipartite_four_cycle() {
        let g = BlockSparsityGraph::from_edges(4, [(0, 1), (1, 2), (2, 3), (3, 0)], []).unwrap();
        let a = analyze_graph(&g);
        assert!(a.connected);
        assert!(!a.nonbipartite);
        assert!(a.odd_cycle.is_none());
        assert!(!a.all_mis_have_self_loops);
    }

    #[test]
    fn triangle_cycle() {
        let g = BlockSparsityGraph::from_edges(3, [(0, 1), (1, 2), (2, 0)], []).unwrap();
        assert_eq!(analyze_graph(&g).odd_cycle, Some(vec![0, 1, 2]));
    }

    #[test]
    fn pentagon_with_tail() {
        // 5-cycle 1..5 plus a tail 5-6-7; the odd cycle must be the pentagon.
        let g = BlockSparsityGraph::from_edges(
            7,
            [(0, 1), (1, 2), (2, 3), (3, 4), (4, 0), (4, 5), (5, 6)],
            [],
        )
        .unwrap();
        let c = find_odd_cycle(&g).unwrap();
        assert_eq!(c.len(), 5);
        for w in 0..c.len() {
            assert!(g.has_e1(c[w], c[(w + 1) % c.len()]));
        }
    }

    #[test]
    fn disconnected_reported() {
        let g = BlockSparsityGraph::from_edges(4, [(0, 0), (0, 1), (2, 3)], []).unwrap();
        assert!(!analyze_graph(&g).connected);
    }

    #[test]
    fn theorem_patterns_satisfy_conditions() {
        for p in [
            NamedPattern::Example1Path,
            NamedPattern::Example2EvenCross,
            NamedPattern::Star,
            NamedPattern::SingleMissing,
            NamedPattern::AugmentedCross,
            NamedPattern::SingleMissingRankR,
        ] {
            for m in 4..=9 {
                let params = PatternParams::new(m).with_k(m - 1).with_r(2);
                let g = build_named_pattern(p, params).unwrap();
                let a = analyze_graph(&g);
                assert!(a.connected && a.nonbipartite && a.all_mis_have_self_loops, "{p} m={m}");
            }
        }
        let g = build_named_pattern(NamedPattern::Cross, PatternParams::new(4).with_k(2)).unwrap();
        let a = analyze_graph(&g);
        assert!(a.connected && a.nonbipartite);
    }

    #[test]
    fn erdos_renyi_repair_from_empty() {
        let s = one(&[2, 3, 4, 5, 6, 7, 8, 9, 10]);
        let g = build_erdos_renyi(10, 0.0, &s, 7).unwrap();
        let a = analyze_graph(&g);
        assert!(a.connected);
        assert!(s.iter().all(|&v| g.has_self_loop(v)));
        assert_eq!(a.max_independent_set, s);
        assert_eq!(g.e2().len(), s.len() - 1);
    }

    #[test]
    fn erdos_renyi_two_vertices() {
        let g = build_erdos_renyi(2, 1.0, &[1], 0).unwrap();
        assert!(g.has_e1(0, 1) && g.has_self_loop(1));
        assert!(g.e2().is_empty());
    }

    #[test]
    fn erdos_renyi_errors() {
        assert_eq!(build_erdos_renyi(4, 0.5, &[], 1).unwrap_err(), GraphError::EmptyS);
        assert_eq!(build_erdos_renyi(2, 0.5, &[0, 1], 1).unwrap_err(), GraphError::SNotRealizable);
        assert!(matches!(build_erdos_renyi(4, 1.5, &[0], 1), Err(GraphError::InvalidParams(_))));
    }

    #[test]
    fn erdos_renyi_deterministic() {
        let s = [0, 3, 5];
        assert_eq!(build_erdos_renyi(10, 0.3, &s, 11).unwrap(), build_erdos_renyi(10, 0.3, &s, 11).unwrap());
        assert_ne!(build_erdos_renyi(10, 0.3, &s, 11).unwrap(), build_erdos_renyi(10, 0.3, &s, 12).unwrap());
    }

    #[test]
    fn erdos_renyi_class_conditions_over_seeds() {
        for seed in 0..100u64 {
            let s: Vec<usize> = (0..10).filter(|v| (v + seed as usize).is_multiple_of(3)).collect();
            let g = build_erdos_renyi(10, 0.3, &s, seed).unwrap();
            let a = analyze_graph(&g);
            assert!(a.connected && a.nonbipartite && a.all_mis_have_self_loops, "seed {seed}");
            let e2_adj = {
                let mut h = BlockSparsityGraph::new(10);
                for &(i, j) in g.e2() {
                    h.add_e1(i, j).unwrap();
                }
                h.adjacency()
            };
            let reach = bfs_tree(&e2_adj, s[0]).2;
            assert_eq!(reach.len(), s.len(), "e2 tree spans S, seed {seed}");
        }
    }

    #[test]
    fn graph_json_round_trip() {
        let g = build_erdos_renyi(6, 0.4, &[1, 4], 3).unwrap();
        let text = serde_json::to_string(&g).unwrap();
        assert!(text.starts_with("{\"m\":6,\"e1\":[["));
        let back: BlockSparsityGraph = serde_json::from_str(&text).unwrap();
        assert_eq!(back, g);
        assert!(serde_json::from_str::<BlockSparsityGraph>(r#"{"m":2,"e1":[[0,1]],"e2":[]}"#).is_err());
        assert!(serde_json::from_str::<BlockSparsityGraph>(r#"{"m":2,"e1":[[1,2]],"e2":[[1,2]]}"#).is_err());
    }

    fn arb_graph() -> impl Strategy<Value = (BlockSparsityGraph, usize, usize)> {
        (1usize..6, 1usize..4, 0usize..3)
            .prop_flat_map(|(m, r, extra)| {
                let pairs = m * (m + 1) / 2;
                (proptest::collection::vec(0u8..3, pairs), Just((m, r, extra)))
            })
            .prop_map(|(labels, (m, r, extra))| {
                let mut g = BlockSparsityGraph::new(m);
                let mut idx = 0;
                for i in 0..m {
                    for j in i..m {
                        match labels[idx] {
                            1 => g.add_e1(i, j).unwrap(),
                            2 if i != j => g.add_e2(i, j).unwrap(),
                            _ => {}
                        }
                        idx += 1;
                    }
                }
                (g, m * r + extra.min(r - 1), r)
            })
    }

    proptest! {
        #[test]
        fn induced_set_symmetric_and_counted((g, n, r) in arb_graph()) {
            let om = induce_measurement_set(&g, n, r).unwrap();
            prop_assert!(om.is_symmetric());
            prop_assert_eq!(om.len(), enumerate_count(&g, n, r));
        }

        #[test]
        fn greedy_mis_is_maximal_independent((g, _n, _r) in arb_graph()) {
            let mis = greedy_mis(&g);
            let adj = g.adjacency();
            for &u in &mis {
                prop_assert!(adj[u].iter().all(|v| !mis.contains(v)));
            }
            for (v, nb) in adj.iter().enumerate().take(g.m()) {
                prop_assert!(mis.contains(&v) || nb.iter().any(|u| mis.contains(u)));
            }
        }

        #[test]
        fn odd_cycle_is_odd_closed_walk((g, _n, _r) in arb_graph()) {
            // Brute-force 2-coloring over all assignments.
            let m = g.m();
            let loops = (0..m).any(|v| g.has_self_loop(v));
            let colorable = (0u32..(1 << m)).any(|c| {
                g.e1().iter().all(|&(i, j)| i == j || ((c >> i) & 1) != ((c >> j) & 1))
            });
            let has_odd = loops || !colorable;
            let a = analyze_graph(&g);
            prop_assert_eq!(a.nonbipartite, has_odd);
            if let Some(c) = a.odd_cycle {
                prop_assert!(c.len() % 2 == 1);
                if c.len() == 1 {
                    prop_assert!(g.has_self_loop(c[0]));
                } else {
                    for w in 0..c.len() {
                        prop_assert!(c[w] != c[(w + 1) % c.len()]);
                        prop_assert!(g.has_e1(c[w], c[(w + 1) % c.len()]));
                    }
                }
            }
        }
    }
}
