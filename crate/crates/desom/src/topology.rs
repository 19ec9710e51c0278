//! Random connected networks and consensus weight matrices.
//!
//! Nodes communicate over an undirected connected graph. Mixing is done with
//! a symmetric doubly stochastic weight matrix `W` whose eigenvalue 1 has
//! multiplicity one; the lifted operator `Z = W ⊗ I_p` acts blockwise on
//! stacked per-node vectors and is never materialized densely on the solver
//! path.

use std::collections::VecDeque;
use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::{DesomError, Result};

const MAX_GRAPH_ATTEMPTS: usize = 10_000;

/// Threshold separating the structural zero eigenvalue of I−W from the
/// genuine spectrum at desk scales.
pub const ZERO_EIG_THRESHOLD: f64 = 1e-9;

/// An undirected connected graph. Immutable after construction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NetworkTopology {
    n: usize,
    edges: Vec<(usize, usize)>,
    neighbors: Vec<Vec<usize>>,
}

impl NetworkTopology {
    /// Builds a topology from an explicit edge list. Edges are deduplicated
    /// and stored with `i < j`; the graph must come out connected.
    pub fn from_edges(n: usize, edges: &[(usize, usize)]) -> Result<Self> {
        if n < 1 {
            return Err(DesomError::InvalidParameter("n must be >= 1".into()));
        }
        let mut adj = vec![vec![false; n]; n];
        for &(a, b) in edges {
            if a >= n || b >= n {
                return Err(DesomError::InvalidParameter(format!(
                    "edge ({a}, {b}) out of range for n={n}"
                )));
            }
            if a == b {
                return Err(DesomError::InvalidParameter(format!("self-loop at node {a}")));
            }
            adj[a][b] = true;
            adj[b][a] = true;
        }
        let mut norm_edges = Vec::new();
        let mut neighbors = vec![Vec::new(); n];
        for i in 0..n {
            for j in (i + 1)..n {
                if adj[i][j] {
                    norm_edges.push((i, j));
                    neighbors[i].push(j);
                    neighbors[j].push(i);
                }
            }
        }
        let topo = Self { n, edges: norm_edges, neighbors };
        if !topo.is_connected() {
            return Err(DesomError::InvalidParameter("graph is not connected".into()));
        }
        Ok(topo)
    }

    /// Samples an Erdős–Rényi graph: each unordered pair is an edge with
    /// probability `r_c`. Disconnected draws are regenerated with a
    /// deterministic sub-seed sequence `(seed, attempt)` up to a retry cap,
    /// so the result is a function of `(n, r_c, seed)` only.
    pub fn generate_random(n: usize, r_c: f64, seed: u64) -> Result<Self> {
        if n < 2 {
            return Err(DesomError::InvalidParameter("n must be >= 2".into()));
        }
        if !(r_c > 0.0 && r_c <= 1.0) {
            return Err(DesomError::InvalidParameter(format!(
                "r_c must be in (0, 1], got {r_c}"
            )));
        }
        for attempt in 0..MAX_GRAPH_ATTEMPTS {
            let mut rng = sub_seeded_rng(seed, attempt as u64);
            let mut edges = Vec::new();
            for i in 0..n {
                for j in (i + 1)..n {
                    if rng.random::<f64>() < r_c {
                        edges.push((i, j));
                    }
                }
            }
            let mut neighbors = vec![Vec::new(); n];
            for &(i, j) in &edges {
                neighbors[i].push(j);
                neighbors[j].push(i);
            }
            let candidate = Self { n, edges, neighbors };
            if candidate.is_connected() {
                return Ok(candidate);
            }
        }
        Err(DesomError::RetryLimitExceeded { n, r_c, attempts: MAX_GRAPH_ATTEMPTS })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    /// Sorted neighbor indices of node `i`.
    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[i]
    }

    pub fn degree(&self, i: usize) -> usize {
        self.neighbors[i].len()
    }

    /// BFS reachability from node 0.
    pub fn is_connected(&self) -> bool {
        if self.n == 0 {
            return false;
        }
        let mut seen = vec![false; self.n];
        let mut queue = VecDeque::from([0usize]);
        seen[0] = true;
        let mut count = 1;
        while let Some(u) = queue.pop_front() {
            for &v in &self.neighbors[u] {
                if !seen[v] {
                    seen[v] = true;
                    count += 1;
                    queue.push_back(v);
                }
            }
        }
        count == self.n
    }

    /// All-pairs hop distances by BFS from every node. `usize::MAX` marks
    /// unreachable pairs (cannot happen on a connected graph).
    pub fn hop_distances(&self) -> Vec<Vec<usize>> {
        let mut dist = vec![vec![usize::MAX; self.n]; self.n];
        for s in 0..self.n {
            dist[s][s] = 0;
            let mut queue = VecDeque::from([s]);
            while let Some(u) = queue.pop_front() {
                for &v in &self.neighbors[u] {
                    if dist[s][v] == usize::MAX {
                        dist[s][v] = dist[s][u] + 1;
                        queue.push_back(v);
                    }
                }
            }
        }
        dist
    }

    /// Serializes as the edge-list text format: first line `n m`, then `m`
    /// lines `i j` with 0-based endpoints.
    pub fn to_edge_list(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{} {}", self.n, self.edges.len());
        for &(i, j) in &self.edges {
            let _ = writeln!(out, "{i} {j}");
        }
        out
    }

    pub fn from_edge_list(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines
            .next()
            .ok_or_else(|| DesomError::Parse("empty edge list".into()))?;
        let mut parts = header.split_whitespace();
        let n: usize = parse_field(parts.next(), "n")?;
        let m: usize = parse_field(parts.next(), "m")?;
        let mut edges = Vec::with_capacity(m);
        for _ in 0..m {
            let line = lines
                .next()
                .ok_or_else(|| DesomError::Parse("edge list truncated".into()))?;
            let mut parts = line.split_whitespace();
            let i: usize = parse_field(parts.next(), "edge endpoint")?;
            let j: usize = parse_field(parts.next(), "edge endpoint")?;
            edges.push((i, j));
        }
        Self::from_edges(n, &edges)
    }

    pub fn write_edge_list(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_edge_list())?;
        Ok(())
    }

    pub fn read_edge_list(path: &Path) -> Result<Self> {
        Self::from_edge_list(&std::fs::read_to_string(path)?)
    }
}

fn parse_field<T: std::str::FromStr>(field: Option<&str>, what: &str) -> Result<T> {
    field
        .ok_or_else(|| DesomError::Parse(format!("missing {what}")))?
        .parse()
        .map_err(|_| DesomError::Parse(format!("invalid {what}")))
}

fn sub_seeded_rng(seed: u64, attempt: u64) -> ChaCha8Rng {
    let mut bytes = [0u8; 32];
    bytes[..8].copy_from_slice(&seed.to_le_bytes());
    bytes[8..16].copy_from_slice(&attempt.to_le_bytes());
    ChaCha8Rng::from_seed(bytes)
}

/// Symmetric doubly stochastic mixing matrix conforming to a graph.
#[derive(Debug, Clone)]
pub struct WeightMatrix {
    w: DMatrix<f64>,
}

impl WeightMatrix {
    /// Metropolis–Hastings weights: `w_ij = 1/(1 + max(deg_i, deg_j))` for
    /// neighbors, diagonal filled to make rows sum to 1. The diagonal comes
    /// out strictly positive on every graph.
    pub fn metropolis(g: &NetworkTopology) -> Self {
        let n = g.n();
        let mut w = DMatrix::zeros(n, n);
        for i in 0..n {
            for &j in g.neighbors(i) {
                w[(i, j)] = 1.0 / (1.0 + g.degree(i).max(g.degree(j)) as f64);
            }
        }
        for i in 0..n {
            let off: f64 = g.neighbors(i).iter().map(|&j| w[(i, j)]).sum();
            w[(i, i)] = 1.0 - off;
        }
        Self { w }
    }

    /// Wraps an arbitrary square matrix; use [`WeightMatrix::validate`] to
    /// check the mixing conditions.
    pub fn from_matrix(w: DMatrix<f64>) -> Result<Self> {
        if w.nrows() != w.ncols() {
            return Err(DesomError::DimensionMismatch { expected: w.nrows(), actual: w.ncols() });
        }
        Ok(Self { w })
    }

    pub fn n(&self) -> usize {
        self.w.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.w
    }

    pub fn entry(&self, i: usize, j: usize) -> f64 {
        self.w[(i, j)]
    }

    /// Checks the mixing conditions against the graph. Numeric tolerances
    /// are 1e-10.
    pub fn validate(&self, g: &NetworkTopology) -> Result<ValidationReport> {
        let n = self.n();
        if n != g.n() {
            return Err(DesomError::DimensionMismatch { expected: g.n(), actual: n });
        }
        let tol = 1e-10;
        let mut symmetry_defect: f64 = 0.0;
        for i in 0..n {
            for j in 0..n {
                symmetry_defect = symmetry_defect.max((self.w[(i, j)] - self.w[(j, i)]).abs());
            }
        }
        let ones = DVector::from_element(n, 1.0);
        let row_sums = &self.w * &ones;
        let max_row_sum_dev = (row_sums - ones).amax();

        let mut sparsity_ok = true;
        let mut nonnegative = true;
        let mut positive_diagonal = true;
        for i in 0..n {
            if self.w[(i, i)] <= 0.0 {
                positive_diagonal = false;
            }
            for j in 0..n {
                let allowed = i == j || g.neighbors(i).contains(&j);
                if allowed != (self.w[(i, j)] != 0.0) {
                    sparsity_ok = false;
                }
                if self.w[(i, j)] < 0.0 {
                    nonnegative = false;
                }
            }
        }

        // Multiplicity of eigenvalue 1 of W = count of eigenvalues of I−W
        // below the zero threshold.
        let eye = DMatrix::identity(n, n);
        let laplacian_like = &eye - &self.w;
        let sym = (laplacian_like.clone() + laplacian_like.transpose()) * 0.5;
        let eigs = sym.symmetric_eigen().eigenvalues;
        let eig_one_multiplicity = eigs.iter().filter(|&&l| l.abs() < ZERO_EIG_THRESHOLD).count();

        Ok(ValidationReport {
            symmetry_defect,
            max_row_sum_dev,
            eig_one_multiplicity,
            sparsity_ok,
            nonnegative,
            positive_diagonal,
            tol,
        })
    }

    /// Smallest eigenvalue of I−W above the zero threshold. Equals the
    /// smallest nonzero eigenvalue of the lifted I−Z since
    /// I−Z = (I−W) ⊗ I_p.
    pub fn gamma(&self) -> Result<f64> {
        let n = self.n();
        let sym = {
            let eye = DMatrix::identity(n, n);
            let m = &eye - &self.w;
            (m.clone() + m.transpose()) * 0.5
        };
        let eigs = sym.symmetric_eigen().eigenvalues;
        eigs.iter()
            .copied()
            .filter(|&l| l > ZERO_EIG_THRESHOLD)
            .fold(None, |acc: Option<f64>, l| Some(acc.map_or(l, |a| a.min(l))))
            .ok_or_else(|| {
                DesomError::DegenerateWeights("all eigenvalues of I-W below threshold".into())
            })
    }

    /// Applies the lifted operator Z = W ⊗ I_p to a stacked vector:
    /// block i of the result is Σ_j w_ij x_j.
    pub fn apply_lifted(&self, g: &NetworkTopology, x: &DVector<f64>, p: usize) -> DVector<f64> {
        let n = self.n();
        assert_eq!(x.len(), n * p, "stacked vector has wrong length");
        let mut out = DVector::zeros(n * p);
        for i in 0..n {
            let mut block = x.rows(i * p, p) * self.w[(i, i)];
            for &j in g.neighbors(i) {
                block += x.rows(j * p, p) * self.w[(i, j)];
            }
            out.rows_mut(i * p, p).copy_from(&block);
        }
        out
    }

    /// Applies (I−Z) to a stacked vector.
    pub fn apply_i_minus_z(
        &self,
        g: &NetworkTopology,
        x: &DVector<f64>,
        p: usize,
    ) -> DVector<f64> {
        x - self.apply_lifted(g, x, p)
    }

    /// Dense CSV dump of W for inspection.
    pub fn to_csv(&self) -> String {
        let n = self.n();
        let mut out = String::new();
        for i in 0..n {
            let row: Vec<String> = (0..n).map(|j| format!("{:.17e}", self.w[(i, j)])).collect();
            let _ = writeln!(out, "{}", row.join(","));
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }
}

/// Outcome of checking a weight matrix against the mixing conditions.
#[derive(Debug, Clone)]
pub struct ValidationReport {
    pub symmetry_defect: f64,
    pub max_row_sum_dev: f64,
    pub eig_one_multiplicity: usize,
    pub sparsity_ok: bool,
    pub nonnegative: bool,
    pub positive_diagonal: bool,
    pub tol: f64,
}

impl ValidationReport {
    pub fn pass(&self) -> bool {
        self.symmetry_defect <= self.tol
            && self.max_row_sum_dev <= self.tol
            && self.eig_one_multiplicity == 1
            && self.sparsity_ok
            && self.nonnegative
            && self.positive_diagonal
    }
}

impl std::fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "symmetry defect:      {:.3e}", self.symmetry_defect)?;
        writeln!(f, "max row-sum dev:      {:.3e}", self.max_row_sum_dev)?;
        writeln!(f, "eig-1 multiplicity:   {}", self.eig_one_multiplicity)?;
        writeln!(f, "sparsity pattern ok:  {}", self.sparsity_ok)?;
        writeln!(f, "entries nonnegative:  {}", self.nonnegative)?;
        writeln!(f, "diagonal positive:    {}", self.positive_diagonal)?;
        write!(f, "overall:              {}", if self.pass() { "pass" } else { "fail" })
    }
}
