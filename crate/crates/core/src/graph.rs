//! Undirected graphs, symmetric normalization with self-loops, and homophily.

use ndarray::{Array1, Array2, Axis, Zip};

use crate::error::{Error, Result};

/// A simple undirected graph on nodes `0..n`.
///
/// Edges are stored once as `(u, v)` with `u < v`, sorted, without duplicates
/// or self-loops. Immutable after construction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Graph {
    n: usize,
    edges: Vec<(usize, usize)>,
}

impl Graph {
    pub fn n(&self) -> usize {
        self.n
    }

    /// Canonical edge list: sorted pairs with `u < v`.
    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    /// Degree of every node (self-loops never stored, so not counted).
    pub fn degrees(&self) -> Vec<usize> {
        let mut deg = vec![0usize; self.n];
        for &(u, v) in &self.edges {
            deg[u] += 1;
            deg[v] += 1;
        }
        deg
    }
}

/// Build a graph from raw (possibly directed, duplicated) edge pairs.
///
/// Input pairs are treated as undirected; duplicates and self-loops are
/// dropped, with counts reported through `log`. Any endpoint `>= n` is
/// rejected, naming the offending pair.
pub fn build_undirected(edge_list: &[(usize, usize)], n: usize) -> Result<Graph> {
    let mut edges = Vec::with_capacity(edge_list.len());
    let mut self_loops = 0usize;
    for (idx, &(u, v)) in edge_list.iter().enumerate() {
        if u >= n || v >= n {
            return Err(Error::data(format!(
                "edge #{idx} ({u}, {v}) out of range for {n} nodes"
            )));
        }
        if u == v {
            self_loops += 1;
            continue;
        }
        edges.push((u.min(v), u.max(v)));
    }
    edges.sort_unstable();
    let before = edges.len();
    edges.dedup();
    let duplicates = before - edges.len();
    if self_loops > 0 || duplicates > 0 {
        log::debug!("build_undirected: dropped {self_loops} self-loops, {duplicates} duplicate edges");
    }
    Ok(Graph { n, edges })
}

/// A graph with one class label per node.
#[derive(Debug, Clone)]
pub struct LabeledGraph {
    pub graph: Graph,
    pub labels: Vec<usize>,
    /// Number of classes; every id in `0..num_classes` is a valid label even
    /// if unused.
    pub num_classes: usize,
}

impl LabeledGraph {
    pub fn new(graph: Graph, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if labels.len() != graph.n() {
            return Err(Error::data(format!(
                "label count {} does not match node count {}",
                labels.len(),
                graph.n()
            )));
        }
        if let Some((i, &l)) = labels.iter().enumerate().find(|(_, &l)| l >= num_classes) {
            return Err(Error::data(format!(
                "label {l} of node {i} out of range for {num_classes} classes"
            )));
        }
        Ok(LabeledGraph { graph, labels, num_classes })
    }
}

/// Fraction of undirected edges whose endpoints share a label.
pub fn homophily_score(lg: &LabeledGraph) -> Result<f64> {
    if lg.graph.edge_count() == 0 {
        return Err(Error::invalid("homophily score undefined on an edgeless graph"));
    }
    let same = lg
        .graph
        .edges()
        .iter()
        .filter(|&&(u, v)| lg.labels[u] == lg.labels[v])
        .count();
    Ok(same as f64 / lg.graph.edge_count() as f64)
}

/// Symmetric normalization with self-loops of an undirected graph.
///
/// Values are `1 / sqrt((1 + deg(i)) (1 + deg(j)))` on edges and
/// `1 / (1 + deg(i))` on the diagonal; exactly symmetric by construction,
/// every entry in `(0, 1]`, and the vector with entries `sqrt(1 + deg(i))`
/// is an eigenvector with eigenvalue 1.
#[derive(Debug, Clone)]
pub struct NormalizedAdjacency {
    n: usize,
    /// Entries keyed by `(i, j)` with `i <= j`, sorted; the lower triangle is
    /// mirrored on read. Diagonal entries are always present.
    upper: Vec<(usize, usize, f64)>,
    // Full symmetric CSR mirror for matrix-vector work.
    row_ptr: Vec<usize>,
    col: Vec<usize>,
    val: Vec<f64>,
}

impl NormalizedAdjacency {
    pub fn n(&self) -> usize {
        self.n
    }

    /// Number of stored (upper-triangle) entries.
    pub fn stored_entries(&self) -> usize {
        self.upper.len()
    }

    /// Value at `(i, j)`; zero if absent. Symmetric by mirroring.
    pub fn value(&self, i: usize, j: usize) -> f64 {
        let key = (i.min(j), i.max(j));
        match self.upper.binary_search_by(|e| (e.0, e.1).cmp(&key)) {
            Ok(pos) => self.upper[pos].2,
            Err(_) => 0.0,
        }
    }

    /// Deterministic iteration over the stored upper-triangle entries.
    pub fn iter_upper(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.upper.iter().copied()
    }

    /// Dense copy; intended for small-n tests and oracles only.
    pub fn to_dense(&self) -> Array2<f64> {
        let mut a = Array2::zeros((self.n, self.n));
        for &(i, j, v) in &self.upper {
            a[[i, j]] = v;
            a[[j, i]] = v;
        }
        a
    }

    /// `A * x` for a block of column vectors, row-parallel and deterministic
    /// (each output row accumulates in fixed column order).
    pub fn apply_block(&self, x: &Array2<f64>) -> Array2<f64> {
        assert_eq!(x.nrows(), self.n, "block row count must equal node count");
        let b = x.ncols();
        let mut y = Array2::<f64>::zeros((self.n, b));
        let row_ptr = &self.row_ptr;
        let col = &self.col;
        let val = &self.val;
        Zip::indexed(y.axis_iter_mut(Axis(0))).par_for_each(|r, mut yr| {
            for k in row_ptr[r]..row_ptr[r + 1] {
                let (c, v) = (col[k], val[k]);
                let xr = x.row(c);
                for t in 0..b {
                    yr[t] += v * xr[t];
                }
            }
        });
        y
    }
}

/// Diagonal degree-with-self-loop weights `1 + deg(i)`.
fn tilde_degrees(g: &Graph) -> Array1<f64> {
    let mut d = Array1::from_elem(g.n(), 1.0);
    for &(u, v) in g.edges() {
        d[u] += 1.0;
        d[v] += 1.0;
    }
    d
}

/// Build the symmetric normalized adjacency with self-loops.
pub fn sym_normalize(g: &Graph) -> NormalizedAdjacency {
    let n = g.n();
    let dt = tilde_degrees(g);
    let inv_sqrt: Vec<f64> = dt.iter().map(|&d| 1.0 / d.sqrt()).collect();

    let mut upper = Vec::with_capacity(n + g.edge_count());
    for i in 0..n {
        upper.push((i, i, 1.0 / dt[i]));
    }
    for &(u, v) in g.edges() {
        upper.push((u, v, inv_sqrt[u] * inv_sqrt[v]));
    }
    upper.sort_unstable_by_key(|e| (e.0, e.1));

    // Full symmetric CSR for matvecs.
    let mut counts = vec![0usize; n + 1];
    for &(i, j, _) in &upper {
        counts[i + 1] += 1;
        if i != j {
            counts[j + 1] += 1;
        }
    }
    for r in 0..n {
        counts[r + 1] += counts[r];
    }
    let row_ptr = counts.clone();
    let nnz = row_ptr[n];
    let mut col = vec![0usize; nnz];
    let mut val = vec![0.0f64; nnz];
    let mut next = row_ptr.clone();
    for &(i, j, v) in &upper {
        col[next[i]] = j;
        val[next[i]] = v;
        next[i] += 1;
        if i != j {
            col[next[j]] = i;
            val[next[j]] = v;
            next[j] += 1;
        }
    }
    // Rows are sorted by column because `upper` is sorted and mirrored entries
    // (j, i) with j > i arrive after the row's own upper entries... sort to be
    // explicit and order-stable.
    for r in 0..n {
        let span = row_ptr[r]..row_ptr[r + 1];
        let mut pairs: Vec<(usize, f64)> = span
            .clone()
            .map(|k| (col[k], val[k]))
            .collect();
        pairs.sort_unstable_by_key(|p| p.0);
        for (off, (c, v)) in span.zip(pairs) {
            col[off] = c;
            val[off] = v;
        }
    }

    NormalizedAdjacency { n, upper, row_ptr, col, val }
}
