//! Communication graphs and doubly stochastic mixing matrices.

use std::collections::BTreeSet;

use crate::manifold::axpy;
use crate::{Error, Mat, Result};

/// Tolerance for symmetry and unit row/column sums.
pub const MIXING_TOL: f64 = 1e-12;

/// Undirected edge list over agents `0..n`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Graph {
    n: usize,
    edges: BTreeSet<(usize, usize)>,
}

impl Graph {
    /// Normalizes `(i, j)` pairs to `i < j`, drops duplicates, rejects self
    /// loops and out-of-range endpoints.
    pub fn new(n: usize, edges: &[(usize, usize)]) -> Result<Self> {
        if n == 0 {
            return Err(Error::Parameter("graph needs at least one node".into()));
        }
        let mut set = BTreeSet::new();
        for &(i, j) in edges {
            if i >= n || j >= n {
                return Err(Error::Parameter(format!(
                    "edge ({i}, {j}) out of range for {n} nodes"
                )));
            }
            if i == j {
                return Err(Error::Parameter(format!("self loop at node {i}")));
            }
            set.insert((i.min(j), i.max(j)));
        }
        Ok(Self { n, edges: set })
    }

    pub fn ring(n: usize) -> Result<Self> {
        let edges: Vec<_> = match n {
            0 | 1 => vec![],
            2 => vec![(0, 1)],
            _ => (0..n).map(|i| (i, (i + 1) % n)).collect(),
        };
        Self::new(n, &edges)
    }

    pub fn path(n: usize) -> Result<Self> {
        let edges: Vec<_> = (1..n).map(|i| (i - 1, i)).collect();
        Self::new(n, &edges)
    }

    pub fn star(n: usize) -> Result<Self> {
        let edges: Vec<_> = (1..n).map(|i| (0, i)).collect();
        Self::new(n, &edges)
    }

    pub fn complete(n: usize) -> Result<Self> {
        let edges: Vec<_> = (0..n)
            .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
            .collect();
        Self::new(n, &edges)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.edges.iter().copied()
    }

    pub fn degrees(&self) -> Vec<usize> {
        let mut deg = vec![0; self.n];
        for &(i, j) in &self.edges {
            deg[i] += 1;
            deg[j] += 1;
        }
        deg
    }

    pub fn is_connected(&self) -> bool {
        let mut adj = vec![Vec::new(); self.n];
        for &(i, j) in &self.edges {
            adj[i].push(j);
            adj[j].push(i);
        }
        let mut seen = vec![false; self.n];
        let mut stack = vec![0];
        seen[0] = true;
        while let Some(u) = stack.pop() {
            for &v in &adj[u] {
                if !seen[v] {
                    seen[v] = true;
                    stack.push(v);
                }
            }
        }
        seen.iter().all(|&s| s)
    }

    fn has_edge(&self, i: usize, j: usize) -> bool {
        self.edges.contains(&(i.min(j), i.max(j)))
    }
}

/// Second largest singular value of a symmetric matrix.
///
/// For a symmetric `W` the singular values are the absolute eigenvalues.
/// Returns 0 for a `1 x 1` matrix.
pub fn second_singular_value(w: &Mat) -> Result<f64> {
    if !w.is_square() {
        return Err(Error::Dimension("mixing matrix must be square".into()));
    }
    // a constant matrix has rank one; answer exactly rather than up to rounding
    if w.nrows() < 2 || w.iter().all(|v| *v == w[(0, 0)]) {
        return Ok(0.0);
    }
    let sym = (w + w.transpose()) * 0.5;
    let mut s: Vec<f64> = sym
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .map(|v| v.abs())
        .collect();
    s.sort_by(|a, b| b.total_cmp(a));
    Ok(s[1])
}

/// A validated symmetric, doubly stochastic, non-negative mixing matrix of a
/// connected graph, stored with per-row neighbour lists for sparse mixing.
#[derive(Debug, Clone)]
pub struct MixingMatrix {
    w: Mat,
    sigma: f64,
    rows: Vec<Vec<(usize, f64)>>,
}

impl MixingMatrix {
    pub fn new(w: Mat) -> Result<Self> {
        let n = w.nrows();
        if !w.is_square() || n == 0 {
            return Err(Error::Dimension(format!(
                "mixing matrix must be square and non-empty, got {}x{}",
                w.nrows(),
                w.ncols()
            )));
        }
        if !w.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("mixing matrix".into()));
        }
        for i in 0..n {
            for j in 0..n {
                if w[(i, j)] < 0.0 {
                    return Err(Error::Mixing(format!("negative entry at ({i}, {j})")));
                }
                if (w[(i, j)] - w[(j, i)]).abs() > MIXING_TOL {
                    return Err(Error::Mixing(format!("not symmetric at ({i}, {j})")));
                }
            }
            let row: f64 = w.row(i).sum();
            if (row - 1.0).abs() > MIXING_TOL {
                return Err(Error::Mixing(format!("row {i} sums to {row}")));
            }
            let col: f64 = w.column(i).sum();
            if (col - 1.0).abs() > MIXING_TOL {
                return Err(Error::Mixing(format!("column {i} sums to {col}")));
            }
        }
        let support: Vec<(usize, usize)> = (0..n)
            .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
            .filter(|&(i, j)| w[(i, j)] > 0.0)
            .collect();
        if !Graph::new(n, &support)?.is_connected() {
            return Err(Error::Disconnected);
        }
        let sigma = second_singular_value(&w)?;
        if !(sigma < 1.0) {
            return Err(Error::Mixing(format!(
                "second singular value is {sigma}, so mixing does not contract"
            )));
        }
        let rows = (0..n)
            .map(|i| {
                (0..n)
                    .filter(|&j| w[(i, j)] != 0.0)
                    .map(|j| (j, w[(i, j)]))
                    .collect()
            })
            .collect();
        Ok(Self { w, sigma, rows })
    }

    /// Validates `w` and additionally requires its support to lie on `graph`.
    pub fn with_graph(w: Mat, graph: &Graph) -> Result<Self> {
        if w.nrows() != graph.n() {
            return Err(Error::Dimension(format!(
                "mixing matrix is {}x{} but graph has {} nodes",
                w.nrows(),
                w.ncols(),
                graph.n()
            )));
        }
        for i in 0..w.nrows() {
            for j in 0..w.ncols() {
                if i != j && w[(i, j)] != 0.0 && !graph.has_edge(i, j) {
                    return Err(Error::Mixing(format!(
                        "entry ({i}, {j}) is nonzero but the graph has no such edge"
                    )));
                }
            }
        }
        Self::new(w)
    }

    /// Metropolis-Hastings weights `1 / (1 + max(deg_i, deg_j))` on edges.
    pub fn metropolis(graph: &Graph) -> Result<Self> {
        if !graph.is_connected() {
            return Err(Error::Disconnected);
        }
        let n = graph.n();
        let deg = graph.degrees();
        let mut w = Mat::zeros(n, n);
        for (i, j) in graph.edges() {
            let v = 1.0 / (1.0 + deg[i].max(deg[j]) as f64);
            w[(i, j)] = v;
            w[(j, i)] = v;
        }
        for i in 0..n {
            let off: f64 = w.row(i).sum();
            w[(i, i)] = 1.0 - off;
        }
        Self::with_graph(w, graph)
    }

    /// Ring with weight `self_weight` on the diagonal and the rest split evenly
    /// between the two neighbours.
    pub fn ring(n: usize, self_weight: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&self_weight) {
            return Err(Error::Parameter(format!(
                "self weight must lie in [0, 1], got {self_weight}"
            )));
        }
        let graph = Graph::ring(n)?;
        let mut w = Mat::zeros(n, n);
        match n {
            1 => w[(0, 0)] = 1.0,
            2 => {
                w[(0, 0)] = self_weight;
                w[(1, 1)] = self_weight;
                w[(0, 1)] = 1.0 - self_weight;
                w[(1, 0)] = 1.0 - self_weight;
            }
            _ => {
                let side = (1.0 - self_weight) / 2.0;
                for i in 0..n {
                    w[(i, i)] = self_weight;
                    w[(i, (i + 1) % n)] = side;
                    w[(i, (i + n - 1) % n)] = side;
                }
            }
        }
        Self::with_graph(w, &graph)
    }

    /// `11ᵀ / n`: one mixing round gives exact averaging.
    pub fn complete(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::Parameter("need at least one agent".into()));
        }
        Self::new(Mat::from_element(n, n, 1.0 / n as f64))
    }

    pub fn n(&self) -> usize {
        self.w.nrows()
    }

    pub fn matrix(&self) -> &Mat {
        &self.w
    }

    /// Second largest singular value `sigma_W < 1`.
    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    /// Writes `out_i = sum_j W_ij blocks_j`.
    pub fn mix_into(&self, blocks: &[Mat], out: &mut [Mat]) -> Result<()> {
        if blocks.len() != self.n() || out.len() != self.n() {
            return Err(Error::Dimension(format!(
                "expected {} blocks, got {} inputs and {} outputs",
                self.n(),
                blocks.len(),
                out.len()
            )));
        }
        let shape = blocks[0].shape();
        if blocks.iter().any(|b| b.shape() != shape) {
            return Err(Error::Dimension("blocks have different shapes".into()));
        }
        for (i, o) in out.iter_mut().enumerate() {
            if o.shape() != shape {
                *o = Mat::zeros(shape.0, shape.1);
            }
            let row = &self.rows[i];
            let (j0, w0) = row[0];
            o.copy_from(&blocks[j0]);
            *o *= w0;
            for &(j, wij) in &row[1..] {
                axpy(o, wij, &blocks[j]);
            }
        }
        Ok(())
    }

    pub fn mix(&self, blocks: &[Mat]) -> Result<Vec<Mat>> {
        let mut out: Vec<Mat> = blocks
            .iter()
            .map(|b| Mat::zeros(b.nrows(), b.ncols()))
            .collect();
        self.mix_into(blocks, &mut out)?;
        Ok(out)
    }

    /// Applies the mixing `rounds` times.
    pub fn mix_rounds(&self, blocks: &[Mat], rounds: usize) -> Result<Vec<Mat>> {
        let mut cur = blocks.to_vec();
        for _ in 0..rounds {
            cur = self.mix(&cur)?;
        }
        Ok(cur)
    }
}
