//! Gossip topologies and symmetric doubly stochastic mixing matrices.
//!
//! A [`MixingMatrix`] is validated at construction: symmetric, nonnegative,
//! row/column sums 1 within 1e-12, sparsity matching the topology, largest
//! eigenvalue 1 within 1e-10, and `lambda = max(|λ₂|, |λ_N|) < 1`. Anything
//! that would mix too slowly to satisfy the spectral-gap assumption (A4) is
//! rejected with an actionable error instead of producing a matrix that
//! silently never reaches consensus.

use nalgebra::DMatrix;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("{what} needs at least {min} nodes, got {n}")]
    TooFewNodes {
        what: &'static str,
        min: usize,
        n: usize,
    },
    #[error("hypercube size must be a power of two, got {n}")]
    NotPowerOfTwo { n: usize },
    #[error("edge ({u}, {v}) out of range for {n} nodes")]
    EdgeOutOfRange { u: usize, v: usize, n: usize },
    #[error("self-loop at node {u} is not allowed")]
    SelfLoop { u: usize },
    #[error("duplicate edge ({u}, {v})")]
    DuplicateEdge { u: usize, v: usize },
    #[error(
        "graph is disconnected (only {reachable} of {n} nodes reachable from node 0); \
         consensus requires a connected topology (mixing assumption A4)"
    )]
    Disconnected { reachable: usize, n: usize },
    #[error("edge list line {line}: expected two node indices `u v`, got {text:?}")]
    MalformedEdgeLine { line: usize, text: String },
    #[error(
        "uniform neighbor weights need a regular graph; \
         node {a} has degree {deg_a} but node {b} has degree {deg_b}"
    )]
    NotRegular {
        a: usize,
        deg_a: usize,
        b: usize,
        deg_b: usize,
    },
    #[error("blend weight gamma must lie in [0, 1), got {gamma}")]
    BadGamma { gamma: f64 },
    #[error(
        "mixing matrix violates the spectral-gap assumption (A4): \
         max(|λ₂|, |λ_N|) = {lambda:.12} is not below 1; the graph is \
         disconnected or periodic/bipartite — blend with gamma > 0"
    )]
    SpectralGapViolation { lambda: f64 },
    #[error("largest eigenvalue is {top:.12}, expected 1 within 1e-10; matrix is not stochastic")]
    BadTopEigenvalue { top: f64 },
    #[error("row {i} sums to {sum:.15}, expected 1 within 1e-12")]
    RowSum { i: usize, sum: f64 },
    #[error("matrix entry ({i}, {j}) = {w} is negative")]
    NegativeWeight { i: usize, j: usize, w: f64 },
    #[error("matrix entry ({i}, {j}) = {w} is nonzero off the topology's edge set")]
    SparsityViolation { i: usize, j: usize, w: f64 },
    #[error("symmetric eigendecomposition did not converge")]
    EigenFailed,
}

/// Built-in topology families.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GraphKind {
    Cycle,
    Hypercube,
    Complete,
    Star,
}

/// Undirected simple connected graph on nodes `0..n`.
#[derive(Clone, Debug)]
pub struct Topology {
    n: usize,
    edges: Vec<(usize, usize)>,
    adjacency: Vec<Vec<usize>>,
}

impl Topology {
    /// Validates endpoints, rejects self-loops and duplicates, requires
    /// connectivity. Edges are stored with `u < v`.
    pub fn new(n: usize, edges: &[(usize, usize)]) -> Result<Self, GraphError> {
        if n < 2 {
            return Err(GraphError::TooFewNodes {
                what: "a topology",
                min: 2,
                n,
            });
        }
        let mut seen = std::collections::BTreeSet::new();
        let mut normalized = Vec::with_capacity(edges.len());
        for &(u, v) in edges {
            if u >= n || v >= n {
                return Err(GraphError::EdgeOutOfRange { u, v, n });
            }
            if u == v {
                return Err(GraphError::SelfLoop { u });
            }
            let e = (u.min(v), u.max(v));
            if !seen.insert(e) {
                return Err(GraphError::DuplicateEdge { u: e.0, v: e.1 });
            }
            normalized.push(e);
        }
        normalized.sort_unstable();
        let mut adjacency = vec![Vec::new(); n];
        for &(u, v) in &normalized {
            adjacency[u].push(v);
            adjacency[v].push(u);
        }
        for neighbors in &mut adjacency {
            neighbors.sort_unstable();
        }
        let topo = Topology {
            n,
            edges: normalized,
            adjacency,
        };
        let reachable = topo.reachable_from_zero();
        if reachable != n {
            return Err(GraphError::Disconnected { reachable, n });
        }
        Ok(topo)
    }

    /// Builds one of the named families on `n` nodes.
    pub fn build(kind: GraphKind, n: usize) -> Result<Self, GraphError> {
        match kind {
            GraphKind::Cycle => {
                if n < 3 {
                    return Err(GraphError::TooFewNodes {
                        what: "a cycle",
                        min: 3,
                        n,
                    });
                }
                let edges: Vec<_> = (0..n).map(|i| (i, (i + 1) % n)).collect();
                Topology::new(n, &edges)
            }
            GraphKind::Hypercube => {
                if n < 2 {
                    return Err(GraphError::TooFewNodes {
                        what: "a hypercube",
                        min: 2,
                        n,
                    });
                }
                if !n.is_power_of_two() {
                    return Err(GraphError::NotPowerOfTwo { n });
                }
                let bits = n.trailing_zeros();
                let mut edges = Vec::new();
                for v in 0..n {
                    for b in 0..bits {
                        let w = v ^ (1usize << b);
                        if v < w {
                            edges.push((v, w));
                        }
                    }
                }
                Topology::new(n, &edges)
            }
            GraphKind::Complete => {
                if n < 2 {
                    return Err(GraphError::TooFewNodes {
                        what: "a complete graph",
                        min: 2,
                        n,
                    });
                }
                let mut edges = Vec::new();
                for u in 0..n {
                    for v in (u + 1)..n {
                        edges.push((u, v));
                    }
                }
                Topology::new(n, &edges)
            }
            GraphKind::Star => {
                if n < 2 {
                    return Err(GraphError::TooFewNodes {
                        what: "a star",
                        min: 2,
                        n,
                    });
                }
                let edges: Vec<_> = (1..n).map(|leaf| (0, leaf)).collect();
                Topology::new(n, &edges)
            }
        }
    }

    /// Parses a custom edge list: one `u v` pair per line, 0-indexed,
    /// whitespace-separated; blank lines are skipped. When `n` is `None` the
    /// node count is inferred as `max index + 1`.
    pub fn from_edge_list_str(text: &str, n: Option<usize>) -> Result<Self, GraphError> {
        let mut edges = Vec::new();
        let mut max_index = 0usize;
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() {
                continue;
            }
            let mut parts = line.split_whitespace();
            let parse = |tok: Option<&str>| -> Option<usize> { tok?.parse().ok() };
            match (parse(parts.next()), parse(parts.next()), parts.next()) {
                (Some(u), Some(v), None) => {
                    max_index = max_index.max(u).max(v);
                    edges.push((u, v));
                }
                _ => {
                    return Err(GraphError::MalformedEdgeLine {
                        line: idx + 1,
                        text: raw.to_string(),
                    })
                }
            }
        }
        let n = n.unwrap_or(max_index + 1);
        Topology::new(n, &edges)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.adjacency[i]
    }

    pub fn degree(&self, i: usize) -> usize {
        self.adjacency[i].len()
    }

    pub fn max_degree(&self) -> usize {
        (0..self.n).map(|i| self.degree(i)).max().unwrap_or(0)
    }

    fn reachable_from_zero(&self) -> usize {
        let mut seen = vec![false; self.n];
        let mut stack = vec![0usize];
        seen[0] = true;
        let mut count = 1;
        while let Some(v) = stack.pop() {
            for &w in &self.adjacency[v] {
                if !seen[w] {
                    seen[w] = true;
                    count += 1;
                    stack.push(w);
                }
            }
        }
        count
    }
}

/// Weight schemes for turning a topology into a mixing matrix.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum MixingKind {
    /// `1/(d+1)` on each edge and the diagonal; requires a regular graph.
    UniformNeighbor,
    /// Maximum-degree weights `1/d_max` on edges, `1 − d_i/d_max` on the
    /// diagonal, lazily blended as `γI + (1−γ)W`.
    Mdm { gamma: f64 },
}

/// Validated symmetric doubly stochastic mixing matrix with its spectrum.
#[derive(Clone, Debug)]
pub struct MixingMatrix {
    n: usize,
    w: DMatrix<f64>,
    /// Off-diagonal nonzeros per row, ascending column index.
    neighbors: Vec<Vec<(usize, f64)>>,
    /// Eigenvalues sorted descending; `eigenvalues[0] ≈ 1`.
    eigenvalues: Vec<f64>,
    lambda: f64,
}

impl MixingMatrix {
    /// Maximum-degree weights, optionally blended with the identity:
    /// `γI + (1−γ)W_mdm`. `gamma > 0` is the standard fix for bipartite or
    /// periodic structures whose plain weights have an eigenvalue at −1.
    pub fn mdm(topology: &Topology, gamma: f64) -> Result<Self, GraphError> {
        if !(0.0..1.0).contains(&gamma) || !gamma.is_finite() {
            return Err(GraphError::BadGamma { gamma });
        }
        let n = topology.n();
        let d_max = topology.max_degree() as f64;
        let mut w = DMatrix::zeros(n, n);
        for &(u, v) in topology.edges() {
            let weight = (1.0 - gamma) / d_max;
            w[(u, v)] = weight;
            w[(v, u)] = weight;
        }
        for i in 0..n {
            w[(i, i)] = gamma + (1.0 - gamma) * (1.0 - topology.degree(i) as f64 / d_max);
        }
        Self::finish(w, Some(topology))
    }

    /// Equal weight `1/(d+1)` on every neighbor and the node itself.
    /// Only defined on regular graphs (otherwise rows would not sum to 1).
    pub fn uniform_neighbor(topology: &Topology) -> Result<Self, GraphError> {
        let n = topology.n();
        let d0 = topology.degree(0);
        for i in 1..n {
            if topology.degree(i) != d0 {
                return Err(GraphError::NotRegular {
                    a: 0,
                    deg_a: d0,
                    b: i,
                    deg_b: topology.degree(i),
                });
            }
        }
        let weight = 1.0 / (d0 as f64 + 1.0);
        let mut w = DMatrix::zeros(n, n);
        for &(u, v) in topology.edges() {
            w[(u, v)] = weight;
            w[(v, u)] = weight;
        }
        for i in 0..n {
            w[(i, i)] = weight;
        }
        Self::finish(w, Some(topology))
    }

    pub fn build(topology: &Topology, kind: MixingKind) -> Result<Self, GraphError> {
        match kind {
            MixingKind::UniformNeighbor => Self::uniform_neighbor(topology),
            MixingKind::Mdm { gamma } => Self::mdm(topology, gamma),
        }
    }

    /// The 1×1 matrix `[1]`: a single node mixing with itself. Used for
    /// single-node reductions; `lambda` is 0 by convention.
    pub fn solo() -> Self {
        MixingMatrix {
            n: 1,
            w: DMatrix::from_element(1, 1, 1.0),
            neighbors: vec![Vec::new()],
            eigenvalues: vec![1.0],
            lambda: 0.0,
        }
    }

    /// Blends `γI + (1−γ)self`. The spectrum shifts affinely, so this is how
    /// sweeps dial `lambda` to a target.
    pub fn blend_identity(&self, gamma: f64) -> Result<Self, GraphError> {
        if !(0.0..1.0).contains(&gamma) || !gamma.is_finite() {
            return Err(GraphError::BadGamma { gamma });
        }
        let mut w = self.w.clone() * (1.0 - gamma);
        for i in 0..self.n {
            w[(i, i)] += gamma;
        }
        Self::finish(w, None)
    }

    fn finish(w: DMatrix<f64>, topology: Option<&Topology>) -> Result<Self, GraphError> {
        let n = w.nrows();
        for i in 0..n {
            for j in 0..n {
                let entry = w[(i, j)];
                if entry < 0.0 {
                    return Err(GraphError::NegativeWeight { i, j, w: entry });
                }
                if (w[(i, j)] - w[(j, i)]).abs() != 0.0 {
                    return Err(GraphError::SpectralGapViolation { lambda: f64::NAN });
                }
            }
            let sum: f64 = (0..n).map(|j| w[(i, j)]).sum();
            if (sum - 1.0).abs() > 1e-12 {
                return Err(GraphError::RowSum { i, sum });
            }
        }
        if let Some(t) = topology {
            for i in 0..n {
                for j in 0..n {
                    if i != j && w[(i, j)] != 0.0 && !t.neighbors(i).contains(&j) {
                        return Err(GraphError::SparsityViolation { i, j, w: w[(i, j)] });
                    }
                }
            }
        }

        let eigen = nalgebra::SymmetricEigen::try_new(w.clone(), 1e-12, 10_000)
            .ok_or(GraphError::EigenFailed)?;
        let mut eigenvalues: Vec<f64> = eigen.eigenvalues.iter().copied().collect();
        eigenvalues.sort_by(|a, b| b.partial_cmp(a).unwrap());
        let top = eigenvalues[0];
        if (top - 1.0).abs() > 1e-10 {
            return Err(GraphError::BadTopEigenvalue { top });
        }
        let lambda = if n == 1 {
            0.0
        } else {
            eigenvalues[1].abs().max(eigenvalues[n - 1].abs())
        };
        if lambda >= 1.0 - 1e-10 {
            return Err(GraphError::SpectralGapViolation { lambda });
        }

        let mut neighbors = vec![Vec::new(); n];
        for i in 0..n {
            for j in 0..n {
                if i != j && w[(i, j)] != 0.0 {
                    neighbors[i].push((j, w[(i, j)]));
                }
            }
        }
        Ok(MixingMatrix {
            n,
            w,
            neighbors,
            eigenvalues,
            lambda,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// `max(|λ₂|, |λ_N|)`, the consensus contraction factor.
    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// `(lambda, 1 − lambda)`.
    pub fn spectral_gap(&self) -> (f64, f64) {
        (self.lambda, 1.0 - self.lambda)
    }

    /// Eigenvalues sorted descending.
    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn entry(&self, i: usize, j: usize) -> f64 {
        self.w[(i, j)]
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.w
    }

    /// One gossip round on a scalar per node: `out = W v`.
    ///
    /// Computed in deviation form `v_i + Σ_j W_ij (v_j − v_i)`, which is
    /// identical for row sums of 1 but makes consensus vectors exact fixed
    /// points in floating point (constant in, bit-identical constant out).
    pub fn mix_scalars(&self, v: &[f64]) -> Vec<f64> {
        assert_eq!(v.len(), self.n, "vector length must match node count");
        let mut out = v.to_vec();
        for i in 0..self.n {
            let mut acc = 0.0;
            for &(j, weight) in &self.neighbors[i] {
                acc += weight * (v[j] - v[i]);
            }
            out[i] += acc;
        }
        out
    }

    /// One gossip round on a d-vector per node; see [`Self::mix_scalars`].
    pub fn mix_vectors(&self, xs: &[Vec<f64>]) -> Vec<Vec<f64>> {
        assert_eq!(xs.len(), self.n, "state count must match node count");
        let mut out = xs.to_vec();
        for i in 0..self.n {
            for &(j, weight) in &self.neighbors[i] {
                for (o, (&xj, &xi)) in out[i].iter_mut().zip(xs[j].iter().zip(xs[i].iter())) {
                    // accumulate in place; out[i] started as a copy of xs[i]
                    *o += weight * (xj - xi);
                }
            }
        }
        out
    }
}

/// Convenience free function matching the module's operation list.
pub fn spectral_gap(w: &MixingMatrix) -> (f64, f64) {
    w.spectral_gap()
}
