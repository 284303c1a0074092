//! Static topology, random sparsified subgraphs and spectral constants.
//!
//! The random incidence operator `A(ξ) = I(ξ)A` is never materialized:
//! a [`GraphSample`] lists the active edges and, per edge, the coordinates it
//! carries. Everything downstream consumes it through [`aggregate`], which
//! evaluates `Σ_{j ∈ N_i(ξ)} C_ij(ξ)(x_j − x_i)` blockwise.

use std::collections::BTreeSet;
use std::path::Path;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::blocks::{dist_sq, Blocks};
use crate::error::{Error, Result};
use crate::rng::{self, domain};

/// Default cap on the outcome count of exact spectral enumeration.
pub const DEFAULT_ENUMERATION_CAP: u64 = 1 << 20;

/// An undirected, connected graph on `n` agents. Edge ids are list positions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Topology {
    n: usize,
    edges: Vec<(usize, usize)>,
}

impl Topology {
    /// Validates and normalizes the edge list to `(min, max)` pairs.
    pub fn new(n: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        if n == 0 {
            return Err(Error::Topology("agent count must be positive".into()));
        }
        let mut seen = BTreeSet::new();
        let mut out = Vec::new();
        for (id, (a, b)) in edges.into_iter().enumerate() {
            if a == b {
                return Err(Error::Topology(format!("edge {id} is a self-loop on agent {a}")));
            }
            if a >= n || b >= n {
                return Err(Error::Topology(format!(
                    "edge {id} ({a}, {b}) references an agent outside 0..{n}"
                )));
            }
            let e = (a.min(b), a.max(b));
            if !seen.insert(e) {
                return Err(Error::Topology(format!("edge {id} ({}, {}) is a duplicate", e.0, e.1)));
            }
            out.push(e);
        }
        let topo = Self { n, edges: out };
        let comps = topo.components();
        if comps.len() > 1 {
            return Err(Error::Topology(format!(
                "graph is disconnected: component {:?} is not reachable from agent 0",
                comps[1]
            )));
        }
        Ok(topo)
    }

    pub fn ring(n: usize) -> Result<Self> {
        match n {
            0 => Self::new(0, []),
            1 => Self::new(1, []),
            2 => Self::new(2, [(0, 1)]),
            _ => Self::new(n, (0..n).map(|i| (i, (i + 1) % n))),
        }
    }

    pub fn path(n: usize) -> Result<Self> {
        Self::new(n, (1..n).map(|i| (i - 1, i)))
    }

    pub fn star(n: usize) -> Result<Self> {
        Self::new(n, (1..n).map(|i| (0, i)))
    }

    pub fn complete(n: usize) -> Result<Self> {
        Self::new(n, (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))))
    }

    /// Erdős–Rényi graph, redrawn until connected.
    pub fn erdos_renyi(n: usize, p: f64, seed: u64) -> Result<Self> {
        if !(p > 0.0 && p <= 1.0) {
            return Err(Error::Topology(format!("edge probability {p} outside (0, 1]")));
        }
        for attempt in 0..10_000u64 {
            let mut r = rng::stream(seed, domain::SUITE, 0x6572, attempt);
            let edges: Vec<_> = (0..n)
                .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
                .filter(|_| r.random::<f64>() < p)
                .collect();
            if let Ok(t) = Self::new(n, edges) {
                return Ok(t);
            }
        }
        Err(Error::Topology(format!(
            "no connected Erdős–Rényi sample with n={n}, p={p} after 10000 draws"
        )))
    }

    /// Parses the plain-text edge-list format: first line `n`, then one
    /// `i j` pair per line; `#` starts a comment.
    pub fn parse_edge_list(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(no, l)| (no + 1, l.split('#').next().unwrap_or("").trim()))
            .filter(|(_, l)| !l.is_empty());
        let (no, first) = lines
            .next()
            .ok_or_else(|| Error::Topology("edge list is empty".into()))?;
        let n: usize = first
            .parse()
            .map_err(|_| Error::Topology(format!("line {no}: expected agent count, got `{first}`")))?;
        let mut edges = Vec::new();
        for (no, line) in lines {
            let parts: Vec<_> = line.split_whitespace().collect();
            let parse = |s: &str| {
                s.parse::<usize>()
                    .map_err(|_| Error::Topology(format!("line {no}: `{s}` is not an agent index")))
            };
            match parts.as_slice() {
                [a, b] => edges.push((parse(a)?, parse(b)?)),
                _ => return Err(Error::Topology(format!("line {no}: expected `i j`, got `{line}`"))),
            }
        }
        Self::new(n, edges)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse_edge_list(&std::fs::read_to_string(path)?)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    /// Degree matrix minus adjacency.
    pub fn laplacian(&self) -> DMatrix<f64> {
        let mut l = DMatrix::zeros(self.n, self.n);
        for &(i, j) in &self.edges {
            l[(i, i)] += 1.0;
            l[(j, j)] += 1.0;
            l[(i, j)] -= 1.0;
            l[(j, i)] -= 1.0;
        }
        l
    }

    pub fn adjacency(&self) -> DMatrix<f64> {
        let mut a = DMatrix::zeros(self.n, self.n);
        for &(i, j) in &self.edges {
            a[(i, j)] = 1.0;
            a[(j, i)] = 1.0;
        }
        a
    }

    fn components(&self) -> Vec<Vec<usize>> {
        let mut parent: Vec<usize> = (0..self.n).collect();
        fn find(p: &mut [usize], mut x: usize) -> usize {
            while p[x] != x {
                p[x] = p[p[x]];
                x = p[x];
            }
            x
        }
        for &(a, b) in &self.edges {
            let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
            if ra != rb {
                parent[ra.max(rb)] = ra.min(rb);
            }
        }
        let mut comps: Vec<Vec<usize>> = Vec::new();
        let mut root_slot = vec![usize::MAX; self.n];
        for v in 0..self.n {
            let r = find(&mut parent, v);
            if root_slot[r] == usize::MAX {
                root_slot[r] = comps.len();
                comps.push(Vec::new());
            }
            comps[root_slot[r]].push(v);
        }
        comps
    }
}

/// Signed edge-by-agent incidence structure. Row `e` carries `+1` at
/// `plus[e]` and `−1` at `minus[e]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IncidenceMatrix {
    n: usize,
    rows: Vec<(usize, usize)>,
}

/// Builds the incidence matrix with `+1` at the smaller agent index.
pub fn build_incidence(topology: &Topology) -> IncidenceMatrix {
    IncidenceMatrix {
        n: topology.n,
        rows: topology.edges.clone(),
    }
}

impl IncidenceMatrix {
    /// Same structure with the sign of the selected rows flipped.
    pub fn with_flipped_rows(&self, flip: &[bool]) -> Self {
        let rows = self
            .rows
            .iter()
            .enumerate()
            .map(|(e, &(p, m))| if flip.get(e).copied().unwrap_or(false) { (m, p) } else { (p, m) })
            .collect();
        Self { n: self.n, rows }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn edge_count(&self) -> usize {
        self.rows.len()
    }

    /// `(plus, minus)` endpoints of edge `e`.
    pub fn endpoints(&self, e: usize) -> (usize, usize) {
        self.rows[e]
    }

    /// Dense `|E| x n` matrix `Ã`.
    pub fn dense(&self) -> DMatrix<f64> {
        let mut a = DMatrix::zeros(self.rows.len(), self.n);
        for (e, &(p, m)) in self.rows.iter().enumerate() {
            a[(e, p)] = 1.0;
            a[(e, m)] = -1.0;
        }
        a
    }

    /// `ÃᵀÃ`, assembled row by row.
    pub fn gram(&self) -> DMatrix<f64> {
        let a = self.dense();
        a.transpose() * a
    }

    /// `ÃᵀWÃ` for per-edge weights `w`.
    pub fn weighted_gram(&self, w: &[f64]) -> DMatrix<f64> {
        let mut l = DMatrix::zeros(self.n, self.n);
        for (&(p, m), &we) in self.rows.iter().zip(w) {
            l[(p, p)] += we;
            l[(m, m)] += we;
            l[(p, m)] -= we;
            l[(m, p)] -= we;
        }
        l
    }
}

/// An active edge and the sorted coordinates it carries this iteration.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActiveEdge {
    pub edge: usize,
    pub mask: Vec<usize>,
}

/// One realization `ξ_a`: active edges plus per-edge coordinate masks.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphSample {
    pub t: u64,
    pub active: Vec<ActiveEdge>,
}

impl GraphSample {
    pub fn empty(t: u64) -> Self {
        Self { t, active: Vec::new() }
    }

    /// Every edge active with the full mask.
    pub fn full(t: u64, n_edges: usize, d: usize) -> Self {
        Self {
            t,
            active: (0..n_edges)
                .map(|edge| ActiveEdge {
                    edge,
                    mask: (0..d).collect(),
                })
                .collect(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.active.is_empty()
    }

    /// Checks edge ids, mask non-emptiness, ordering and range.
    pub fn validate(&self, n_edges: usize, d: usize) -> Result<()> {
        let mut seen = BTreeSet::new();
        for a in &self.active {
            if a.edge >= n_edges {
                return Err(Error::Sample(format!("edge id {} outside 0..{n_edges}", a.edge)));
            }
            if !seen.insert(a.edge) {
                return Err(Error::Sample(format!("edge {} listed twice", a.edge)));
            }
            if a.mask.is_empty() {
                return Err(Error::Sample(format!("edge {} is active with an empty mask", a.edge)));
            }
            if a.mask.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::Sample(format!("mask of edge {} is not strictly increasing", a.edge)));
            }
            if let Some(&k) = a.mask.last() {
                if k >= d {
                    return Err(Error::Dimension {
                        expected: d,
                        got: k + 1,
                        context: "coordinate mask",
                    });
                }
            }
        }
        Ok(())
    }

    /// Entry `(e, k)` of the selection diagonal `I(ξ)`.
    pub fn selects(&self, e: usize, k: usize) -> bool {
        self.active
            .iter()
            .any(|a| a.edge == e && a.mask.binary_search(&k).is_ok())
    }

    /// Total number of transmitted coordinates summed over active edges.
    pub fn coordinate_count(&self) -> usize {
        self.active.iter().map(|a| a.mask.len()).sum()
    }
}

/// Law of the active edge set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EdgeLaw {
    /// Exactly one edge, uniformly at random.
    OneEdgeUniform,
    /// Edge `e` active independently with probability `probs[e]`.
    IndependentBernoulli { probs: Vec<f64> },
    FullGraph,
    /// Full graph when `t % period == period − 1`, empty otherwise.
    PeriodicLocalUpdate { period: u64 },
}

impl EdgeLaw {
    pub fn bernoulli_uniform(p: f64, n_edges: usize) -> Self {
        EdgeLaw::IndependentBernoulli {
            probs: vec![p; n_edges],
        }
    }

    /// Marginal activation probability of each edge (period-averaged for
    /// local updates).
    pub fn edge_probabilities(&self, n_edges: usize) -> Vec<f64> {
        match self {
            EdgeLaw::OneEdgeUniform => vec![1.0 / n_edges.max(1) as f64; n_edges],
            EdgeLaw::IndependentBernoulli { probs } => probs.clone(),
            EdgeLaw::FullGraph => vec![1.0; n_edges],
            EdgeLaw::PeriodicLocalUpdate { period } => vec![1.0 / (*period).max(1) as f64; n_edges],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerSpec {
    pub edge_law: EdgeLaw,
    /// Fraction `s ∈ (0, 1]` of coordinates carried by each active edge.
    pub sparsity: f64,
    #[serde(default)]
    pub seed: u64,
}

impl SamplerSpec {
    pub fn new(edge_law: EdgeLaw, sparsity: f64, seed: u64) -> Self {
        Self {
            edge_law,
            sparsity,
            seed,
        }
    }

    pub fn validate(&self, n_edges: usize) -> Result<()> {
        if !(self.sparsity > 0.0 && self.sparsity <= 1.0) {
            return Err(Error::Sample(format!("sparsity {} outside (0, 1]", self.sparsity)));
        }
        match &self.edge_law {
            EdgeLaw::IndependentBernoulli { probs } => {
                if probs.len() != n_edges {
                    return Err(Error::Dimension {
                        expected: n_edges,
                        got: probs.len(),
                        context: "per-edge Bernoulli probabilities",
                    });
                }
                if let Some(p) = probs.iter().find(|p| !(0.0..=1.0).contains(*p)) {
                    return Err(Error::Sample(format!("edge probability {p} outside [0, 1]")));
                }
            }
            EdgeLaw::PeriodicLocalUpdate { period: 0 } => {
                return Err(Error::Sample("local-update period must be at least 1".into()));
            }
            _ => {}
        }
        Ok(())
    }

    pub fn is_period_averaged(&self) -> bool {
        matches!(self.edge_law, EdgeLaw::PeriodicLocalUpdate { period } if period > 1)
    }
}

/// Mask size `⌈s·d⌉`, clamped to `1..=d`.
pub fn mask_size(sparsity: f64, d: usize) -> usize {
    let m = (sparsity * d as f64 - 1e-9).ceil() as usize;
    m.clamp(1, d.max(1))
}

/// Anything that can produce the graph realization of iteration `t`.
pub trait SampleSource: Send + Sync {
    fn sample(&self, t: u64) -> GraphSample;
}

/// Draws samples as a pure function of `(spec, seed, t)`.
#[derive(Debug, Clone)]
pub struct Sampler {
    spec: SamplerSpec,
    n_edges: usize,
    d: usize,
}

impl Sampler {
    pub fn new(spec: SamplerSpec, n_edges: usize, d: usize) -> Result<Self> {
        spec.validate(n_edges)?;
        Ok(Self { spec, n_edges, d })
    }

    pub fn spec(&self) -> &SamplerSpec {
        &self.spec
    }

    fn mask_for(&self, t: u64, edge: usize) -> Vec<usize> {
        let m = mask_size(self.spec.sparsity, self.d);
        if m >= self.d {
            return (0..self.d).collect();
        }
        let mut r = rng::stream(self.spec.seed, domain::COORD_MASK, t, edge as u64);
        let mut mask = index::sample(&mut r, self.d, m).into_vec();
        mask.sort_unstable();
        mask
    }

    fn active_edges(&self, t: u64) -> Vec<usize> {
        match &self.spec.edge_law {
            EdgeLaw::OneEdgeUniform => {
                if self.n_edges == 0 {
                    return Vec::new();
                }
                let mut r = rng::stream(self.spec.seed, domain::EDGE_SELECT, t, 0);
                vec![r.random_range(0..self.n_edges)]
            }
            EdgeLaw::IndependentBernoulli { probs } => (0..self.n_edges)
                .filter(|&e| {
                    let mut r = rng::stream(self.spec.seed, domain::EDGE_SELECT, t, e as u64 + 1);
                    r.random::<f64>() < probs[e]
                })
                .collect(),
            EdgeLaw::FullGraph => (0..self.n_edges).collect(),
            EdgeLaw::PeriodicLocalUpdate { period } => {
                if t % period == period - 1 {
                    (0..self.n_edges).collect()
                } else {
                    Vec::new()
                }
            }
        }
    }

    pub fn sample(&self, t: u64) -> GraphSample {
        let active = self
            .active_edges(t)
            .into_iter()
            .map(|edge| ActiveEdge {
                edge,
                mask: self.mask_for(t, edge),
            })
            .collect();
        GraphSample { t, active }
    }
}

impl SampleSource for Sampler {
    fn sample(&self, t: u64) -> GraphSample {
        Sampler::sample(self, t)
    }
}

/// A fixed list of samples replayed cyclically (`t` is rewritten).
#[derive(Debug, Clone)]
pub struct ScriptedSamples(pub Vec<GraphSample>);

impl SampleSource for ScriptedSamples {
    fn sample(&self, t: u64) -> GraphSample {
        if self.0.is_empty() {
            return GraphSample::empty(t);
        }
        let mut s = self.0[(t % self.0.len() as u64) as usize].clone();
        s.t = t;
        s
    }
}

/// `Σ_{j ∈ N_i(ξ)} C_ij(ξ)(x_j − x_i)` for every agent, i.e. `−[AᵀA(ξ)x]_i`.
pub fn aggregate(inc: &IncidenceMatrix, sample: &GraphSample, x: &Blocks) -> Result<Blocks> {
    let mut out = Blocks::zeros(x.n(), x.dim());
    aggregate_into(inc, sample, x, &mut out)?;
    Ok(out)
}

/// Same as [`aggregate`], writing into `out` (overwritten).
pub fn aggregate_into(inc: &IncidenceMatrix, sample: &GraphSample, x: &Blocks, out: &mut Blocks) -> Result<()> {
    x.check_shape(inc.n(), x.dim(), "agent count")?;
    out.check_shape(x.n(), x.dim(), "aggregate output")?;
    out.as_mut_slice().iter_mut().for_each(|v| *v = 0.0);
    let d = x.dim();
    for a in &sample.active {
        if a.edge >= inc.edge_count() {
            return Err(Error::Sample(format!("edge id {} outside 0..{}", a.edge, inc.edge_count())));
        }
        let (p, m) = inc.endpoints(a.edge);
        for &k in &a.mask {
            if k >= d {
                return Err(Error::Dimension {
                    expected: d,
                    got: k + 1,
                    context: "coordinate mask",
                });
            }
            let diff = x.row(m)[k] - x.row(p)[k];
            out.row_mut(p)[k] += diff;
            out.row_mut(m)[k] -= diff;
        }
    }
    Ok(())
}

/// `‖x‖_K² = Σ_i ‖x_i − x̄‖²`.
pub fn k_seminorm_sq(x: &Blocks) -> f64 {
    let mean = x.mean();
    x.rows().map(|r| dist_sq(r, &mean)).sum()
}

/// `⟨x, y⟩_K`.
pub fn k_inner(x: &Blocks, y: &Blocks) -> f64 {
    let (mx, my) = (x.mean(), y.mean());
    x.rows()
        .zip(y.rows())
        .map(|(a, b)| {
            a.iter()
                .zip(&mx)
                .zip(b.iter().zip(&my))
                .map(|((ai, mi), (bi, ni))| (ai - mi) * (bi - ni))
                .sum::<f64>()
        })
        .sum()
}

/// `AᵀRA` as one `n x n` block per coordinate.
#[derive(Debug, Clone)]
pub struct ExpectedLaplacian {
    pub blocks: Vec<DMatrix<f64>>,
    pub period_averaged: bool,
}

impl ExpectedLaplacian {
    pub fn n(&self) -> usize {
        self.blocks.first().map_or(0, |b| b.nrows())
    }

    pub fn dim(&self) -> usize {
        self.blocks.len()
    }

    /// `(AᵀRA x)` applied blockwise.
    pub fn apply(&self, x: &Blocks) -> Blocks {
        let mut out = Blocks::zeros(x.n(), x.dim());
        for (k, l) in self.blocks.iter().enumerate() {
            let col = DVector::from_iterator(x.n(), x.rows().map(|r| r[k]));
            let y = l * col;
            for i in 0..x.n() {
                out.row_mut(i)[k] = y[i];
            }
        }
        out
    }
}

/// Diagonal of `R = E[I(ξ)]` as `r[e] · (m/d)`, identical for every coordinate.
fn selection_probabilities(spec: &SamplerSpec, n_edges: usize, d: usize) -> Vec<f64> {
    let m = mask_size(spec.sparsity, d) as f64;
    spec.edge_law
        .edge_probabilities(n_edges)
        .into_iter()
        .map(|p| p * m / d as f64)
        .collect()
}

/// `AᵀRA` per coordinate from the closed-form selection probabilities.
pub fn expected_laplacian(spec: &SamplerSpec, inc: &IncidenceMatrix, d: usize) -> Result<ExpectedLaplacian> {
    spec.validate(inc.edge_count())?;
    let r = selection_probabilities(spec, inc.edge_count(), d);
    let l = inc.weighted_gram(&r);
    Ok(ExpectedLaplacian {
        blocks: vec![l; d],
        period_averaged: spec.is_period_averaged(),
    })
}

/// Orthonormal basis (`n x (n−1)`) of the complement of the consensus
/// direction; Helmert construction.
pub fn consensus_complement_basis(n: usize) -> DMatrix<f64> {
    let mut u = DMatrix::zeros(n, n.saturating_sub(1));
    for k in 1..n {
        let scale = 1.0 / ((k * (k + 1)) as f64).sqrt();
        for i in 0..k {
            u[(i, k - 1)] = scale;
        }
        u[(k, k - 1)] = -(k as f64) * scale;
    }
    u
}

/// Eigenvalues of a symmetric matrix restricted to `1^⊥`, ascending.
pub fn restricted_eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
    let u = consensus_complement_basis(m.nrows());
    let r = u.transpose() * m * &u;
    let r = (&r + r.transpose()) * 0.5;
    let mut ev: Vec<f64> = SymmetricEigen::new(r).eigenvalues.iter().copied().collect();
    ev.sort_by(f64::total_cmp);
    ev
}

/// Pseudo-inverse of a PSD matrix whose kernel is exactly the consensus
/// direction, computed on `1^⊥` after explicit deflation.
pub fn consensus_pinv(l: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = l.nrows();
    let scale = l.amax().max(1.0);
    let ones = DVector::from_element(n, 1.0);
    let leak = (l * &ones).amax();
    if leak > 1e-9 * scale {
        return Err(Error::Spectral(format!(
            "matrix does not annihilate the consensus direction (residual {leak:e})"
        )));
    }
    let u = consensus_complement_basis(n);
    let r = u.transpose() * l * &u;
    let r = (&r + r.transpose()) * 0.5;
    let eig = SymmetricEigen::new(r);
    let min = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    if n > 1 && min <= 1e-12 * scale {
        return Err(Error::Spectral(format!(
            "matrix is not positive definite on the consensus complement (min eigenvalue {min:e})"
        )));
    }
    let inv_diag = DMatrix::from_diagonal(&eig.eigenvalues.map(|v| 1.0 / v));
    let r_inv = &eig.eigenvectors * inv_diag * eig.eigenvectors.transpose();
    Ok(&u * r_inv * u.transpose())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SpectralMode {
    Exact { cap: u64 },
    MonteCarlo { samples: u64 },
}

impl SpectralMode {
    pub fn exact() -> Self {
        SpectralMode::Exact {
            cap: DEFAULT_ENUMERATION_CAP,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SpectralMethod {
    ExactEnumeration { outcomes: u64 },
    MonteCarlo { samples: u64, sigma_a_sq_std_error: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralReport {
    pub rho_min: f64,
    pub rho_max: f64,
    pub rho_bar_min: f64,
    pub rho_bar_max: f64,
    pub sigma_a_sq: f64,
    pub method: SpectralMethod,
    /// Set for local-update laws: the constants hold across a period, not
    /// per iteration.
    pub period_averaged: bool,
}

fn n_choose_k(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

fn for_each_subset(d: usize, m: usize, f: &mut dyn FnMut(&[usize])) {
    let mut idx: Vec<usize> = (0..m).collect();
    loop {
        f(&idx);
        let mut i = m;
        loop {
            if i == 0 {
                return;
            }
            i -= 1;
            if idx[i] != i + d - m {
                break;
            }
            if i == 0 {
                return;
            }
        }
        if idx[i] == i + d - m {
            return;
        }
        idx[i] += 1;
        for j in i + 1..m {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

fn outcome_count(spec: &SamplerSpec, n_edges: usize, d: usize) -> f64 {
    let c = n_choose_k(d, mask_size(spec.sparsity, d));
    match &spec.edge_law {
        EdgeLaw::OneEdgeUniform => n_edges as f64 * c,
        EdgeLaw::IndependentBernoulli { probs } => probs
            .iter()
            .map(|&p| {
                if p <= 0.0 {
                    1.0
                } else if p >= 1.0 {
                    c
                } else {
                    1.0 + c
                }
            })
            .product(),
        EdgeLaw::FullGraph => c.powi(n_edges as i32),
        EdgeLaw::PeriodicLocalUpdate { period } => {
            if *period <= 1 {
                c.powi(n_edges as i32)
            } else {
                c.powi(n_edges as i32) + 1.0
            }
        }
    }
}

/// Calls `f(probability, active edges)` for every outcome of the law.
fn enumerate_outcomes(spec: &SamplerSpec, n_edges: usize, d: usize, f: &mut dyn FnMut(f64, &[ActiveEdge])) {
    let m = mask_size(spec.sparsity, d);
    let mut masks: Vec<Vec<usize>> = Vec::new();
    for_each_subset(d, m, &mut |s| masks.push(s.to_vec()));
    let pm = 1.0 / masks.len() as f64;

    // independent per-edge choices: `choices[e]` lists (prob, Option<mask id>)
    fn product(
        e: usize,
        choices: &[Vec<(f64, Option<usize>)>],
        masks: &[Vec<usize>],
        prob: f64,
        acc: &mut Vec<ActiveEdge>,
        f: &mut dyn FnMut(f64, &[ActiveEdge]),
    ) {
        if e == choices.len() {
            f(prob, acc);
            return;
        }
        for &(p, mask) in &choices[e] {
            if p == 0.0 {
                continue;
            }
            if let Some(mi) = mask {
                acc.push(ActiveEdge {
                    edge: e,
                    mask: masks[mi].clone(),
                });
                product(e + 1, choices, masks, prob * p, acc, f);
                acc.pop();
            } else {
                product(e + 1, choices, masks, prob * p, acc, f);
            }
        }
    }

    let all_masks = |p: f64| -> Vec<(f64, Option<usize>)> { (0..masks.len()).map(|mi| (p * pm, Some(mi))).collect() };
    match &spec.edge_law {
        EdgeLaw::OneEdgeUniform => {
            let pe = 1.0 / n_edges.max(1) as f64;
            for e in 0..n_edges {
                for mask in &masks {
                    f(
                        pe * pm,
                        &[ActiveEdge {
                            edge: e,
                            mask: mask.clone(),
                        }],
                    );
                }
            }
        }
        EdgeLaw::IndependentBernoulli { probs } => {
            let choices: Vec<_> = probs
                .iter()
                .map(|&p| {
                    let mut c = vec![(1.0 - p, None)];
                    c.extend(all_masks(p));
                    c
                })
                .collect();
            product(0, &choices, &masks, 1.0, &mut Vec::new(), f);
        }
        EdgeLaw::FullGraph => {
            let choices: Vec<_> = (0..n_edges).map(|_| all_masks(1.0)).collect();
            product(0, &choices, &masks, 1.0, &mut Vec::new(), f);
        }
        EdgeLaw::PeriodicLocalUpdate { period } => {
            let pf = 1.0 / (*period).max(1) as f64;
            let choices: Vec<_> = (0..n_edges).map(|_| all_masks(1.0)).collect();
            product(0, &choices, &masks, pf, &mut Vec::new(), f);
            if pf < 1.0 {
                f(1.0 - pf, &[]);
            }
        }
    }
}

/// Per-coordinate Laplacians `L_k(ξ)` of one sample.
fn sample_laplacians(inc: &IncidenceMatrix, active: &[ActiveEdge], d: usize) -> Vec<DMatrix<f64>> {
    let n = inc.n();
    let mut ls = vec![DMatrix::zeros(n, n); d];
    for a in active {
        let (p, m) = inc.endpoints(a.edge);
        for &k in &a.mask {
            let l = &mut ls[k];
            l[(p, p)] += 1.0;
            l[(m, m)] += 1.0;
            l[(p, m)] -= 1.0;
            l[(m, p)] -= 1.0;
        }
    }
    ls
}

struct MomentAccumulator {
    first: Vec<DMatrix<f64>>,
    second: Vec<DMatrix<f64>>,
}

impl MomentAccumulator {
    fn new(n: usize, d: usize) -> Self {
        Self {
            first: vec![DMatrix::zeros(n, n); d],
            second: vec![DMatrix::zeros(n, n); d],
        }
    }

    fn add(&mut self, w: f64, ls: &[DMatrix<f64>]) {
        for (k, l) in ls.iter().enumerate() {
            self.first[k] += l * w;
            self.second[k] += (l * l) * w;
        }
    }

    /// `max_k λ_max(E[L_k²] − E[L_k]²)` on `1^⊥`.
    fn sigma_a_sq(&self) -> f64 {
        self.first
            .iter()
            .zip(&self.second)
            .map(|(m1, m2)| {
                let cov = m2 - m1 * m1;
                restricted_eigenvalues(&cov).last().copied().unwrap_or(0.0)
            })
            .fold(0.0, f64::max)
            .max(0.0)
    }
}

/// Spectral constants of the expected Laplacian and the graph-variance
/// constant `σ_A²`.
pub fn spectral_constants(
    spec: &SamplerSpec,
    inc: &IncidenceMatrix,
    d: usize,
    mode: SpectralMode,
) -> Result<SpectralReport> {
    let n = inc.n();
    if n < 2 {
        return Err(Error::Spectral("spectral constants need at least two agents".into()));
    }
    if d == 0 {
        return Err(Error::Spectral("dimension must be positive".into()));
    }
    spec.validate(inc.edge_count())?;

    let el = expected_laplacian(spec, inc, d)?;
    let (mut rho_min, mut rho_max) = (f64::INFINITY, 0.0f64);
    for block in &el.blocks {
        let ev = restricted_eigenvalues(block);
        rho_min = rho_min.min(ev[0]);
        rho_max = rho_max.max(*ev.last().unwrap());
    }
    let bar = restricted_eigenvalues(&inc.gram());
    let (rho_bar_min, rho_bar_max) = (bar[0], *bar.last().unwrap());
    if !(rho_min > 1e-12) {
        return Err(Error::Spectral(format!(
            "expected Laplacian is singular on the consensus complement (rho_min = {rho_min:e}); some edge is never selected"
        )));
    }

    let (sigma_a_sq, method) = match mode {
        SpectralMode::Exact { cap } => {
            let outcomes = outcome_count(spec, inc.edge_count(), d);
            if outcomes > cap as f64 {
                return Err(Error::EnumerationCap { outcomes, cap });
            }
            let mut acc = MomentAccumulator::new(n, d);
            let mut count = 0u64;
            enumerate_outcomes(spec, inc.edge_count(), d, &mut |p, active| {
                acc.add(p, &sample_laplacians(inc, active, d));
                count += 1;
            });
            (acc.sigma_a_sq(), SpectralMethod::ExactEnumeration { outcomes: count })
        }
        SpectralMode::MonteCarlo { samples } => {
            if samples < 2 {
                return Err(Error::Spectral("monte carlo needs at least two samples".into()));
            }
            let mc_spec = SamplerSpec {
                seed: rng::derive_seed(spec.seed, domain::SPECTRAL),
                ..spec.clone()
            };
            let sampler = Sampler::new(mc_spec, inc.edge_count(), d)?;
            let batches = 20u64.min(samples);
            let per_batch = samples / batches;
            let mut total = MomentAccumulator::new(n, d);
            let mut batch_values = Vec::with_capacity(batches as usize);
            let mut t = 0u64;
            for b in 0..batches {
                let len = if b + 1 == batches { samples - per_batch * (batches - 1) } else { per_batch };
                let mut acc = MomentAccumulator::new(n, d);
                for _ in 0..len {
                    let s = sampler.sample(t);
                    t += 1;
                    let ls = sample_laplacians(inc, &s.active, d);
                    acc.add(1.0 / len as f64, &ls);
                    total.add(1.0 / samples as f64, &ls);
                }
                batch_values.push(acc.sigma_a_sq());
            }
            let mean = batch_values.iter().sum::<f64>() / batches as f64;
            let var = batch_values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (batches - 1).max(1) as f64;
            (
                total.sigma_a_sq(),
                SpectralMethod::MonteCarlo {
                    samples,
                    sigma_a_sq_std_error: (var / batches as f64).sqrt(),
                },
            )
        }
    };

    Ok(SpectralReport {
        rho_min,
        rho_max,
        rho_bar_min,
        rho_bar_max,
        sigma_a_sq,
        method,
        period_averaged: el.period_averaged,
    })
}
