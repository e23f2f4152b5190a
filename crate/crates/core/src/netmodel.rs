//! Time-varying communication graphs and the gossip matrices built from them.
//!
//! A [`TopologySchedule`] maps a communication round `q` to an undirected edge
//! set. Every schedule kind is periodic, so a [`GossipSequence`] can hold one
//! gossip matrix per round of the period and serve any `q` by reduction.
//! Gossip matrices are normalized Laplacians `W = L / λ_max(L)`.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lowerbound::star_center;

/// An undirected link, stored as `(min, max)`.
pub type Edge = (usize, usize);

/// Relative threshold separating the structural zero eigenvalue of a
/// Laplacian from its positive spectrum.
pub const EIGEN_ZERO_REL: f64 = 1e-9;

/// Per-entry tolerance for the kernel and range axioms.
pub const AXIOM_TOL: f64 = 1e-12;

/// Floating-point floor (relative to `‖x‖²`) for the contraction inequality.
/// It only absorbs rounding in `‖Wx − x‖²` when `1 − 1/χ` is exactly zero.
pub const CONTRACTION_ROUNDOFF: f64 = 1e-24;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum TopologyKind {
    /// A pool of random geometric graphs on `[0,1]²`, visited cyclically.
    RandomGeometricCycle { radius: f64, pool_size: usize },
    /// Ring on even rounds, star centered at node 0 on odd rounds.
    RingStarAlternate,
    /// Star whose center cycles through the middle third of the nodes.
    LowerBoundStar,
}

#[derive(Clone, Debug)]
pub struct TopologySchedule {
    n: usize,
    kind: TopologyKind,
    seed: u64,
    pool: Vec<Vec<Edge>>,
}

impl TopologySchedule {
    pub fn build(kind: TopologyKind, n: usize, seed: u64) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidArgument(format!("need at least 2 nodes, got {n}")));
        }
        let pool = match &kind {
            TopologyKind::RandomGeometricCycle { radius, pool_size } => {
                if !(*radius > 0.0 && *radius <= std::f64::consts::SQRT_2) {
                    return Err(Error::InvalidArgument(format!(
                        "radius must lie in (0, sqrt 2], got {radius}"
                    )));
                }
                if *pool_size == 0 {
                    return Err(Error::InvalidArgument("pool_size must be at least 1".into()));
                }
                (0..*pool_size)
                    .map(|g| geometric_graph(n, *radius, seed, g as u64))
                    .collect()
            }
            TopologyKind::RingStarAlternate => vec![ring_edges(n), star_edges(n, 0)],
            TopologyKind::LowerBoundStar => {
                if !n.is_multiple_of(3) {
                    return Err(Error::InvalidArgument(format!(
                        "lower-bound star schedule needs n divisible by 3, got {n}"
                    )));
                }
                (0..n / 3).map(|q| star_edges(n, star_center(n, q))).collect()
            }
        };
        Ok(Self { n, kind, seed, pool })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn kind(&self) -> &TopologyKind {
        &self.kind
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Number of distinct rounds before the schedule repeats.
    pub fn period(&self) -> usize {
        self.pool.len()
    }

    pub fn edges(&self, q: usize) -> &[Edge] {
        &self.pool[q % self.pool.len()]
    }

    pub fn gossip(&self, q: usize) -> Result<GossipMatrix> {
        let mut w = laplacian_gossip(self.edges(q), self.n).map_err(|e| match e {
            Error::Disconnected { .. } => Error::Disconnected { round: q },
            other => other,
        })?;
        w.round = q;
        Ok(w)
    }
}

pub fn ring_edges(n: usize) -> Vec<Edge> {
    normalize_edges((0..n).map(|i| (i, (i + 1) % n)))
}

pub fn star_edges(n: usize, center: usize) -> Vec<Edge> {
    normalize_edges((0..n).filter(|&i| i != center).map(|i| (center, i)))
}

pub fn complete_edges(n: usize) -> Vec<Edge> {
    normalize_edges((0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))))
}

/// Orients every pair as `(min, max)`, drops self-loops and duplicates, sorts.
pub fn normalize_edges(edges: impl IntoIterator<Item = Edge>) -> Vec<Edge> {
    let set: BTreeSet<Edge> = edges
        .into_iter()
        .filter(|(i, j)| i != j)
        .map(|(i, j)| (i.min(j), i.max(j)))
        .collect();
    set.into_iter().collect()
}

/// Node coordinates come from a ChaCha stream selected by the graph index,
/// positioned by the node index, so each point depends only on
/// `(seed, graph, node)`.
fn node_coordinates(seed: u64, graph: u64, node: usize) -> (f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(graph);
    rng.set_word_pos(4 * node as u128);
    (rng.random::<f64>(), rng.random::<f64>())
}

fn geometric_graph(n: usize, radius: f64, seed: u64, graph: u64) -> Vec<Edge> {
    let pts: Vec<(f64, f64)> = (0..n).map(|i| node_coordinates(seed, graph, i)).collect();
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            let (dx, dy) = (pts[i].0 - pts[j].0, pts[i].1 - pts[j].1);
            if (dx * dx + dy * dy).sqrt() < radius {
                edges.push((i, j));
            }
        }
    }
    // Connectivity repair: link consecutive indices that sit in different
    // components.
    let mut uf = UnionFind::new(n);
    for &(i, j) in &edges {
        uf.union(i, j);
    }
    for i in 0..n - 1 {
        if uf.find(i) != uf.find(i + 1) {
            edges.push((i, i + 1));
            uf.union(i, i + 1);
        }
    }
    normalize_edges(edges)
}

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        Self { parent: (0..n).collect() }
    }

    fn find(&mut self, mut i: usize) -> usize {
        while self.parent[i] != i {
            self.parent[i] = self.parent[self.parent[i]];
            i = self.parent[i];
        }
        i
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            self.parent[ra.max(rb)] = ra.min(rb);
        }
    }
}

pub fn is_connected(edges: &[Edge], n: usize) -> bool {
    let mut uf = UnionFind::new(n);
    for &(i, j) in edges {
        uf.union(i, j);
    }
    (1..n).all(|i| uf.find(i) == uf.find(0))
}

/// A mixing matrix attached to one communication round.
#[derive(Clone, Debug)]
pub struct GossipMatrix {
    w: DMatrix<f64>,
    round: usize,
    edges: Vec<Edge>,
    rows: Vec<Vec<(usize, f64)>>,
}

impl GossipMatrix {
    /// Wraps an arbitrary square matrix. No axiom is enforced here; see
    /// [`validate_gossip`].
    pub fn from_dense(w: DMatrix<f64>, round: usize, edges: Vec<Edge>) -> Result<Self> {
        if w.nrows() != w.ncols() {
            return Err(Error::dims("square matrix", format!("{}x{}", w.nrows(), w.ncols())));
        }
        let rows = (0..w.nrows())
            .map(|i| {
                (0..w.ncols())
                    .filter(|&j| w[(i, j)] != 0.0)
                    .map(|j| (j, w[(i, j)]))
                    .collect()
            })
            .collect();
        Ok(Self { w, round, edges, rows })
    }

    pub fn n(&self) -> usize {
        self.w.nrows()
    }

    pub fn round(&self) -> usize {
        self.round
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.w
    }

    /// Nonzero entries of each row in ascending column order.
    pub fn rows(&self) -> &[Vec<(usize, f64)>] {
        &self.rows
    }

    pub fn is_symmetric(&self) -> bool {
        let n = self.n();
        (0..n).all(|i| (0..i).all(|j| self.w[(i, j)] == self.w[(j, i)]))
    }

    /// Sorted eigenvalues; only meaningful for symmetric matrices.
    pub fn eigenvalues(&self) -> Result<Vec<f64>> {
        sorted_eigenvalues(&self.w)
    }

    /// `λ_max / λ_min⁺` of a symmetric positive semi-definite matrix.
    pub fn condition_ratio(&self) -> Result<f64> {
        let ev = self.eigenvalues()?;
        condition_ratio_of(&ev)
    }

    /// Row-major dense CSV with shortest round-trip decimal formatting.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for i in 0..self.n() {
            let row: Vec<String> = (0..self.n()).map(|j| format!("{}", self.w[(i, j)])).collect();
            let _ = writeln!(out, "{}", row.join(","));
        }
        out
    }
}

fn sorted_eigenvalues(m: &DMatrix<f64>) -> Result<Vec<f64>> {
    let eig = SymmetricEigen::try_new(m.clone(), f64::EPSILON, 10_000)
        .ok_or_else(|| Error::Eigen("symmetric eigensolver did not converge".into()))?;
    let mut ev: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    if ev.iter().any(|v| !v.is_finite()) {
        return Err(Error::Eigen("non-finite eigenvalue".into()));
    }
    ev.sort_by(|a, b| a.total_cmp(b));
    Ok(ev)
}

fn condition_ratio_of(sorted: &[f64]) -> Result<f64> {
    let max = *sorted.last().ok_or_else(|| Error::Eigen("empty spectrum".into()))?;
    if max <= 0.0 {
        return Err(Error::Eigen("no positive eigenvalue".into()));
    }
    let min_pos = sorted
        .iter()
        .copied()
        .find(|&v| v > EIGEN_ZERO_REL * max)
        .expect("max itself is positive");
    Ok((max / min_pos).max(1.0))
}

/// Combinatorial Laplacian of an undirected graph.
pub fn laplacian(edges: &[Edge], n: usize) -> DMatrix<f64> {
    let mut l = DMatrix::zeros(n, n);
    for &(i, j) in edges {
        l[(i, j)] -= 1.0;
        l[(j, i)] -= 1.0;
        l[(i, i)] += 1.0;
        l[(j, j)] += 1.0;
    }
    l
}

/// `W = L / λ_max(L)` for a connected graph.
pub fn laplacian_gossip(edges: &[Edge], n: usize) -> Result<GossipMatrix> {
    if n < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 nodes, got {n}")));
    }
    if let Some(&(i, j)) = edges.iter().find(|(i, j)| i == j || *i >= n || *j >= n) {
        return Err(Error::InvalidArgument(format!("invalid edge ({i}, {j}) for n = {n}")));
    }
    let edges = normalize_edges(edges.iter().copied());
    if !is_connected(&edges, n) {
        return Err(Error::Disconnected { round: 0 });
    }
    let l = laplacian(&edges, n);
    let lmax = *sorted_eigenvalues(&l)?.last().expect("n >= 2");
    GossipMatrix::from_dense(l / lmax, 0, edges)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AxiomCheck {
    pub passed: bool,
    /// Largest observed violation measure (entry magnitude, or the worst
    /// ratio `‖Wx − x‖² / ‖x‖²` for contraction).
    pub worst: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub round: usize,
    pub sparsity: AxiomCheck,
    pub kernel: AxiomCheck,
    pub range: AxiomCheck,
    pub contraction: AxiomCheck,
    /// Eigenvalue form of the contraction axiom, symmetric matrices only.
    pub spectral: Option<AxiomCheck>,
}

impl ValidationReport {
    pub fn all_passed(&self) -> bool {
        self.sparsity.passed
            && self.kernel.passed
            && self.range.passed
            && self.contraction.passed
            && self.spectral.as_ref().is_none_or(|s| s.passed)
    }
}

const CONTRACTION_SAMPLES: usize = 64;

/// Checks the four gossip axioms of `w` against `edges` and the declared `chi`.
pub fn validate_gossip(w: &GossipMatrix, edges: &[Edge], chi: f64) -> ValidationReport {
    let n = w.n();
    let m = w.matrix();
    let allowed: BTreeSet<Edge> = normalize_edges(edges.iter().copied()).into_iter().collect();

    let mut sparsity_worst: f64 = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j && m[(i, j)] != 0.0 && !allowed.contains(&(i.min(j), i.max(j))) {
                sparsity_worst = sparsity_worst.max(m[(i, j)].abs());
            }
        }
    }
    let kernel_worst = (0..n)
        .map(|i| m.row(i).iter().sum::<f64>().abs())
        .fold(0.0, f64::max);
    let range_worst = (0..n)
        .map(|j| m.column(j).iter().sum::<f64>().abs())
        .fold(0.0, f64::max);

    let factor = if chi >= 1.0 { 1.0 - 1.0 / chi } else { f64::NEG_INFINITY };
    let mut rng = ChaCha8Rng::seed_from_u64(0x6055_1900 ^ w.round() as u64);
    let mut contraction_ok = true;
    let mut contraction_worst: f64 = 0.0;
    for _ in 0..CONTRACTION_SAMPLES {
        let mut x: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        let mean = x.iter().sum::<f64>() / n as f64;
        x.iter_mut().for_each(|v| *v -= mean);
        let norm_sq: f64 = x.iter().map(|v| v * v).sum();
        let resid: f64 = (0..n)
            .map(|i| {
                let wx: f64 = (0..n).map(|j| m[(i, j)] * x[j]).sum();
                (wx - x[i]).powi(2)
            })
            .sum();
        contraction_worst = contraction_worst.max(resid / norm_sq);
        if resid > factor * norm_sq + CONTRACTION_ROUNDOFF * norm_sq {
            contraction_ok = false;
        }
    }

    let spectral = w.is_symmetric().then(|| spectral_contraction(m, factor));

    ValidationReport {
        round: w.round(),
        sparsity: AxiomCheck { passed: sparsity_worst == 0.0, worst: sparsity_worst },
        kernel: AxiomCheck { passed: kernel_worst <= AXIOM_TOL, worst: kernel_worst },
        range: AxiomCheck { passed: range_worst <= AXIOM_TOL, worst: range_worst },
        contraction: AxiomCheck { passed: contraction_ok, worst: contraction_worst },
        spectral,
    }
}

/// For symmetric `W` with `W·1 = 0`, the contraction axiom is equivalent to
/// `(1 − λ)² ≤ 1 − 1/χ` for every eigenvalue `λ` whose eigenvector is
/// orthogonal to the consensus direction.
fn spectral_contraction(m: &DMatrix<f64>, factor: f64) -> AxiomCheck {
    let n = m.nrows();
    let Some(eig) = SymmetricEigen::try_new(m.clone(), f64::EPSILON, 10_000) else {
        return AxiomCheck { passed: false, worst: f64::INFINITY };
    };
    let inv_sqrt_n = 1.0 / (n as f64).sqrt();
    let consensus_idx = (0..n)
        .max_by(|&a, &b| {
            let ca = eig.eigenvectors.column(a).sum().abs();
            let cb = eig.eigenvectors.column(b).sum().abs();
            ca.total_cmp(&cb)
        })
        .expect("n >= 1");
    let alignment = eig.eigenvectors.column(consensus_idx).sum().abs() * inv_sqrt_n;
    let worst = (0..n)
        .filter(|&k| k != consensus_idx)
        .map(|k| (1.0 - eig.eigenvalues[k]).powi(2))
        .fold(0.0, f64::max);
    AxiomCheck {
        passed: (alignment - 1.0).abs() < 1e-8 && worst <= factor + CONTRACTION_ROUNDOFF,
        worst,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChiEstimate {
    pub chi: f64,
    pub per_round: Vec<f64>,
}

/// `χ = max_q λ_max(W(q)) / λ_min⁺(W(q))` over `q ∈ [0, horizon)`.
pub fn estimate_chi(schedule: &TopologySchedule, horizon: usize) -> Result<ChiEstimate> {
    if horizon == 0 {
        return Err(Error::InvalidArgument("horizon must be at least 1".into()));
    }
    let period = schedule.period();
    let mut cache: Vec<Option<f64>> = vec![None; period];
    let mut per_round = Vec::with_capacity(horizon);
    for q in 0..horizon {
        let slot = q % period;
        let ratio = match cache[slot] {
            Some(r) => r,
            None => {
                let r = schedule.gossip(q)?.condition_ratio()?;
                cache[slot] = Some(r);
                r
            }
        };
        per_round.push(ratio);
    }
    let chi = per_round.iter().copied().fold(1.0, f64::max);
    Ok(ChiEstimate { chi, per_round })
}

/// Gossip matrices for one period of a schedule, indexed by round.
#[derive(Clone, Debug)]
pub struct GossipSequence {
    mats: Vec<GossipMatrix>,
}

impl GossipSequence {
    pub fn new(schedule: &TopologySchedule) -> Result<Self> {
        let mats = (0..schedule.period())
            .map(|q| schedule.gossip(q))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { mats })
    }

    /// A sequence from explicit matrices, repeated cyclically.
    pub fn from_matrices(mats: Vec<GossipMatrix>) -> Result<Self> {
        let n = mats
            .first()
            .ok_or_else(|| Error::InvalidArgument("empty gossip sequence".into()))?
            .n();
        if let Some(bad) = mats.iter().find(|m| m.n() != n) {
            return Err(Error::dims(n, bad.n()));
        }
        Ok(Self { mats })
    }

    pub fn n(&self) -> usize {
        self.mats[0].n()
    }

    pub fn period(&self) -> usize {
        self.mats.len()
    }

    pub fn at(&self, q: usize) -> &GossipMatrix {
        &self.mats[q % self.mats.len()]
    }

    /// Exact supremum of the per-round ratio for this cyclic sequence.
    pub fn chi(&self) -> Result<f64> {
        self.mats
            .iter()
            .map(|m| m.condition_ratio())
            .try_fold(1.0_f64, |acc, r| r.map(|r| acc.max(r)))
    }
}

pub fn edges_to_json(edges: &[Edge]) -> String {
    serde_json::to_string(edges).expect("edge lists always serialize")
}

pub fn edges_from_json(s: &str) -> Result<Vec<Edge>> {
    Ok(serde_json::from_str(s)?)
}
