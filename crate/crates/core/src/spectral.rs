//! Truncated spectral decompositions and projections.
//!
//! The solver is blocked subspace iteration with Rayleigh-Ritz extraction on
//! the symmetric operator: multiply the block, orthonormalize, solve the
//! small projected eigenproblem, and test per-column residuals. Ordering is
//! by eigenvalue magnitude, which for a symmetric matrix yields its top
//! singular pairs.

use ndarray::{s, Array1, Array2};
use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::NormalizedAdjacency;
use crate::linalg::{orthonormalize, symmetric_eigen};
use crate::rng::{rng_for, stream};

/// Abstract symmetric linear operator; implementations only need block
/// matvecs, so neither the normalized adjacency nor the feature Gram matrix
/// is ever densified.
pub trait SymmetricOp: Sync {
    fn dim(&self) -> usize;
    fn apply_block(&self, x: &Array2<f64>) -> Array2<f64>;
    /// Positive semidefinite operators allow the null-space shortcut in the
    /// convergence test (residual of a numerically-zero Ritz value is noise).
    fn is_psd(&self) -> bool {
        false
    }
}

impl SymmetricOp for NormalizedAdjacency {
    fn dim(&self) -> usize {
        self.n()
    }

    fn apply_block(&self, x: &Array2<f64>) -> Array2<f64> {
        NormalizedAdjacency::apply_block(self, x)
    }
}

/// Gram operator `X X^T` expressed through two thin products.
pub struct GramOp<'a> {
    x: &'a Array2<f64>,
}

impl<'a> GramOp<'a> {
    pub fn new(x: &'a Array2<f64>) -> Self {
        GramOp { x }
    }
}

impl SymmetricOp for GramOp<'_> {
    fn dim(&self) -> usize {
        self.x.nrows()
    }

    fn apply_block(&self, block: &Array2<f64>) -> Array2<f64> {
        let t = crate::linalg::par_matmul(self.x.t(), block.view());
        crate::linalg::par_matmul(self.x.view(), t.view())
    }

    fn is_psd(&self) -> bool {
        true
    }
}

/// Solver knobs. Defaults: 10 oversampling columns, cap of 1000 iterations,
/// per-column residual tolerance 1e-8 (relative to the dominant eigenvalue
/// magnitude when that exceeds one).
#[derive(Debug, Clone)]
pub struct EigsOptions {
    pub oversample: usize,
    pub max_iter: usize,
    pub tol: f64,
    pub seed: u64,
}

impl Default for EigsOptions {
    fn default() -> Self {
        EigsOptions {
            oversample: 10,
            max_iter: 1000,
            tol: 1e-8,
            seed: 0,
        }
    }
}

/// Top-`d` eigenpairs of a symmetric operator by eigenvalue magnitude.
///
/// Returns `(u, theta)` where `u` is n-by-d with orthonormal, sign-fixed
/// columns and `theta` holds signed eigenvalues sorted by decreasing
/// magnitude. Two runs on the same input are bit-identical.
pub fn truncated_symmetric_eigs(
    op: &dyn SymmetricOp,
    d: usize,
    opts: &EigsOptions,
) -> Result<(Array2<f64>, Array1<f64>)> {
    let n = op.dim();
    if d == 0 || d > n {
        return Err(Error::invalid(format!(
            "component count {d} outside valid range 1..={n}"
        )));
    }
    let b = (d + opts.oversample).min(n);
    let mut rng = rng_for(opts.seed, stream::SOLVER, 0);

    let mut v = Array2::from_shape_fn((n, b), |_| rng.random::<f64>() * 2.0 - 1.0);
    orthonormalize(&mut v, &mut rng);

    let mut last_residuals: Vec<f64> = Vec::new();
    for iter in 0..opts.max_iter {
        let av = op.apply_block(&v);
        let mut h = crate::linalg::par_matmul(v.t(), av.view());
        // Exact symmetry for the projected problem.
        for i in 0..b {
            for j in (i + 1)..b {
                let m = 0.5 * (h[[i, j]] + h[[j, i]]);
                h[[i, j]] = m;
                h[[j, i]] = m;
            }
        }
        let (vals, y) = symmetric_eigen(&h)?;
        // Order Ritz pairs by |value| descending; break magnitude ties toward
        // the positive value, then by original index, so runs are stable.
        let mut order: Vec<usize> = (0..b).collect();
        order.sort_by(|&i, &j| {
            vals[j]
                .abs()
                .partial_cmp(&vals[i].abs())
                .unwrap()
                .then(vals[j].partial_cmp(&vals[i]).unwrap())
                .then(i.cmp(&j))
        });
        let mut y_ord = Array2::zeros((b, b));
        let mut theta = Array1::zeros(b);
        for (dst, &src) in order.iter().enumerate() {
            y_ord.column_mut(dst).assign(&y.column(src));
            theta[dst] = vals[src];
        }
        let ritz = crate::linalg::par_matmul(v.view(), y_ord.view());
        let a_ritz = crate::linalg::par_matmul(av.view(), y_ord.view());

        let scale = theta[0].abs().max(1.0);
        let mut residuals = Vec::with_capacity(d);
        let mut converged = true;
        for i in 0..d {
            let mut r2 = 0.0;
            for row in 0..n {
                let r = a_ritz[[row, i]] - theta[i] * ritz[[row, i]];
                r2 += r * r;
            }
            let res = r2.sqrt();
            residuals.push(res);
            let null_column = op.is_psd() && theta[i].abs() <= 1e-12 * scale;
            if res > opts.tol * scale && !null_column {
                converged = false;
            }
        }
        if converged {
            let mut u = ritz.slice(s![.., ..d]).to_owned();
            fix_signs(&mut u);
            let theta_d = theta.slice(s![..d]).to_owned();
            if u.iter().any(|x| !x.is_finite()) || theta_d.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite("truncated eigendecomposition".into()));
            }
            return Ok((u, theta_d));
        }
        last_residuals = residuals;

        // Advance the subspace. From the second iteration on, a Chebyshev
        // polynomial in the operator amplifies everything above the block's
        // smallest Ritz magnitude; this is what makes tightly clustered
        // interior spectra converge within the iteration cap.
        let cutoff = theta[b - 1].abs();
        if iter == 0 || cutoff <= 1e-13 * scale {
            v = a_ritz;
        } else {
            v = chebyshev_advance(op, &ritz, &a_ritz, cutoff, CHEBYSHEV_DEGREE);
        }
        orthonormalize(&mut v, &mut rng);
    }

    let worst = last_residuals.iter().cloned().fold(0.0, f64::max);
    Err(Error::SolverDidNotConverge {
        iterations: opts.max_iter,
        residuals: last_residuals,
        worst,
    })
}

const CHEBYSHEV_DEGREE: usize = 24;

/// `T_q(A / c)` applied to the Ritz block via the three-term recurrence,
/// with `A x0` already available. Columns are rescaled in pairs whenever
/// they grow large, which preserves directions while avoiding overflow.
fn chebyshev_advance(
    op: &dyn SymmetricOp,
    x0: &Array2<f64>,
    ax0: &Array2<f64>,
    c: f64,
    degree: usize,
) -> Array2<f64> {
    let mut t_prev = x0.clone();
    let mut t_cur = ax0 / c;
    for _ in 2..=degree {
        let mut t_next = op.apply_block(&t_cur) * (2.0 / c) - &t_prev;
        // Joint per-column rescale keeps the recurrence consistent.
        for j in 0..t_next.ncols() {
            let peak = t_next.column(j).iter().fold(0.0f64, |m, &x| m.max(x.abs()));
            if peak > 1e100 {
                let s = 1.0 / peak;
                t_next.column_mut(j).mapv_inplace(|x| x * s);
                t_cur.column_mut(j).mapv_inplace(|x| x * s);
            }
        }
        t_prev = t_cur;
        t_cur = t_next;
    }
    t_cur
}

/// Make each column's largest-magnitude coordinate positive (earliest such
/// coordinate on exact ties), removing the solver's sign indeterminacy.
fn fix_signs(u: &mut Array2<f64>) {
    for mut col in u.columns_mut() {
        let mut best = 0usize;
        let mut best_abs = f64::NEG_INFINITY;
        for (i, &x) in col.iter().enumerate() {
            if x.abs() > best_abs {
                best_abs = x.abs();
                best = i;
            }
        }
        if col[best] < 0.0 {
            col.mapv_inplace(|x| -x);
        }
    }
}

/// Top-d singular pairs of the normalized adjacency.
///
/// `u` has orthonormal sign-fixed columns; `sigma` is nonnegative and
/// non-increasing, with `sigma[0] = 1` up to solver tolerance.
#[derive(Debug, Clone)]
pub struct SpectralBasis {
    pub u: Array2<f64>,
    pub sigma: Array1<f64>,
}

impl SpectralBasis {
    pub fn n(&self) -> usize {
        self.u.nrows()
    }

    pub fn d(&self) -> usize {
        self.sigma.len()
    }

    /// First `d` components of this basis (top singular values come first).
    pub fn truncate(&self, d: usize) -> Result<SpectralBasis> {
        if d == 0 || d > self.d() {
            return Err(Error::invalid(format!(
                "cannot truncate basis of {} components to {d}",
                self.d()
            )));
        }
        Ok(SpectralBasis {
            u: self.u.slice(s![.., ..d]).to_owned(),
            sigma: self.sigma.slice(s![..d]).to_owned(),
        })
    }
}

/// Top-d singular vectors and values of the normalized adjacency.
pub fn truncated_spectrum(a: &NormalizedAdjacency, d: usize) -> Result<SpectralBasis> {
    truncated_spectrum_with(a, d, &EigsOptions::default())
}

pub fn truncated_spectrum_with(
    a: &NormalizedAdjacency,
    d: usize,
    opts: &EigsOptions,
) -> Result<SpectralBasis> {
    let (u, theta) = truncated_symmetric_eigs(a, d, opts)?;
    let sigma = theta.mapv(f64::abs);
    Ok(SpectralBasis { u, sigma })
}

/// Dense node-feature matrix, one row per node, all entries finite.
#[derive(Debug, Clone)]
pub struct FeatureMatrix {
    pub x: Array2<f64>,
}

impl FeatureMatrix {
    pub fn new(x: Array2<f64>) -> Result<Self> {
        if let Some(((i, j), _)) = x.indexed_iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::data(format!("non-finite feature at row {i}, column {j}")));
        }
        Ok(FeatureMatrix { x })
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn width(&self) -> usize {
        self.x.ncols()
    }
}

/// Top-k eigenpairs of the feature Gram matrix `X X^T`.
///
/// `sigma_x` holds eigenvalues of the Gram matrix, i.e. squared singular
/// values of `X`. When `rank(X) < k` the trailing values are zero-padded and
/// `rank_deficient` is set.
#[derive(Debug, Clone)]
pub struct FeatureSpectral {
    pub q: Array2<f64>,
    pub sigma_x: Array1<f64>,
    pub rank_deficient: bool,
}

impl FeatureSpectral {
    pub fn n(&self) -> usize {
        self.q.nrows()
    }

    pub fn k(&self) -> usize {
        self.sigma_x.len()
    }

    /// First `k` components of this spectrum.
    pub fn truncate(&self, k: usize) -> Result<FeatureSpectral> {
        if k == 0 || k > self.k() {
            return Err(Error::invalid(format!(
                "cannot truncate feature spectrum of {} components to {k}",
                self.k()
            )));
        }
        Ok(FeatureSpectral {
            q: self.q.slice(s![.., ..k]).to_owned(),
            sigma_x: self.sigma_x.slice(s![..k]).to_owned(),
            rank_deficient: self.sigma_x.slice(s![..k]).iter().any(|&v| v == 0.0),
        })
    }
}

/// Top-k left singular directions of the feature matrix via its Gram
/// operator.
pub fn feature_spectrum(x: &FeatureMatrix, k: usize) -> Result<FeatureSpectral> {
    feature_spectrum_with(x, k, &EigsOptions::default())
}

pub fn feature_spectrum_with(
    x: &FeatureMatrix,
    k: usize,
    opts: &EigsOptions,
) -> Result<FeatureSpectral> {
    let limit = x.n().min(x.width());
    if k == 0 || k > limit {
        return Err(Error::invalid(format!(
            "feature component count {k} outside valid range 1..={limit}"
        )));
    }
    let op = GramOp::new(&x.x);
    let (q, theta) = truncated_symmetric_eigs(&op, k, opts)?;
    let scale = theta.iter().fold(0.0f64, |m, &t| m.max(t.abs())).max(1.0);
    let mut rank_deficient = false;
    let sigma_x = theta.mapv(|t| {
        // Numerically-zero Gram eigenvalue: a requested component beyond the
        // rank of X. Zero-pad and flag.
        if t <= 1e-12 * scale {
            rank_deficient = true;
            0.0
        } else {
            t
        }
    });
    Ok(FeatureSpectral { q, sigma_x, rank_deficient })
}

/// `U^T M` for an n-by-p matrix aligned with the basis rows.
pub fn project(basis: &SpectralBasis, mat: &Array2<f64>) -> Result<Array2<f64>> {
    if mat.nrows() != basis.n() {
        return Err(Error::invalid(format!(
            "projection row mismatch: basis has {} rows, matrix has {}",
            basis.n(),
            mat.nrows()
        )));
    }
    Ok(crate::linalg::par_matmul(basis.u.t(), mat.view()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{build_undirected, sym_normalize};
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha20Rng;
    use spectral_adapt_testutil::{jacobi_eigen, naive_matmul};

    fn random_graph(n: usize, p: f64, seed: u64) -> crate::graph::Graph {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let mut edges = Vec::new();
        // Spanning path keeps it connected, then random extras.
        for i in 1..n {
            edges.push((i - 1, i));
        }
        for u in 0..n {
            for v in (u + 1)..n {
                if rng.random::<f64>() < p {
                    edges.push((u, v));
                }
            }
        }
        build_undirected(&edges, n).unwrap()
    }

    #[test]
    fn two_node_path_spectrum() {
        let a = sym_normalize(&build_undirected(&[(0, 1)], 2).unwrap());
        let basis = truncated_spectrum(&a, 2).unwrap();
        assert!((basis.sigma[0] - 1.0).abs() < 1e-10);
        assert!(basis.sigma[1].abs() < 1e-8);
        let r = 0.5f64.sqrt();
        assert!((basis.u[[0, 0]] - r).abs() < 1e-8);
        assert!((basis.u[[1, 0]] - r).abs() < 1e-8);
    }

    #[test]
    fn identity_adjacency_spectrum() {
        // Isolated nodes: the normalized adjacency is the identity.
        let a = sym_normalize(&build_undirected(&[], 5).unwrap());
        let basis = truncated_spectrum(&a, 3).unwrap();
        for i in 0..3 {
            assert!((basis.sigma[i] - 1.0).abs() < 1e-10);
        }
        assert!(crate::linalg::orthonormality_defect(&basis.u) < 1e-8);
    }

    #[test]
    fn random_graph_matches_dense_oracle() {
        let g = random_graph(50, 0.1, 11);
        let a = sym_normalize(&g);
        let basis = truncated_spectrum(&a, 10).unwrap();
        let (vals, _) = jacobi_eigen(&a.to_dense());
        let mut mags: Vec<f64> = vals.iter().map(|v| v.abs()).collect();
        mags.sort_by(|x, y| y.partial_cmp(x).unwrap());
        for (i, (&got, &want)) in basis.sigma.iter().zip(mags.iter()).enumerate() {
            assert!((got - want).abs() < 1e-8, "component {i}: {got} vs oracle {want}");
        }
        // Each column satisfies the squared-eigenvalue equation.
        let dense = a.to_dense();
        let au = dense.dot(&dense.dot(&basis.u));
        for j in 0..10 {
            let mut r2 = 0.0;
            for i in 0..50 {
                let r = au[[i, j]] - basis.sigma[j] * basis.sigma[j] * basis.u[[i, j]];
                r2 += r * r;
            }
            assert!(r2.sqrt() < 1e-6, "column {j} residual {}", r2.sqrt());
        }
    }

    #[test]
    fn sigma_within_unit_bound_and_sorted() {
        let a = sym_normalize(&random_graph(40, 0.15, 3));
        let basis = truncated_spectrum(&a, 20).unwrap();
        for w in basis.sigma.as_slice().unwrap().windows(2) {
            assert!(w[0] >= w[1]);
        }
        for &s in basis.sigma.iter() {
            assert!((0.0..=1.0 + 1e-8).contains(&s));
        }
        assert!((basis.sigma[0] - 1.0).abs() < 1e-8);
    }

    #[test]
    fn deeper_truncation_reproduces_prefix() {
        let a = sym_normalize(&random_graph(30, 0.2, 5));
        let small = truncated_spectrum(&a, 6).unwrap();
        let large = truncated_spectrum(&a, 14).unwrap();
        for i in 0..6 {
            assert!((small.sigma[i] - large.sigma[i]).abs() < 1e-8);
        }
    }

    #[test]
    fn decomposition_is_bit_deterministic() {
        let a = sym_normalize(&random_graph(25, 0.2, 7));
        let b1 = truncated_spectrum(&a, 8).unwrap();
        let b2 = truncated_spectrum(&a, 8).unwrap();
        assert_eq!(b1.u, b2.u);
        assert_eq!(b1.sigma, b2.sigma);
    }

    #[test]
    fn degenerate_subspace_matches_oracle_projector() {
        // Two disjoint edges: the top singular value 1 has multiplicity 2,
        // so individual vectors are arbitrary within the subspace; compare
        // projectors instead.
        let a = sym_normalize(&build_undirected(&[(0, 1), (2, 3)], 4).unwrap());
        let basis = truncated_spectrum(&a, 2).unwrap();
        assert!((basis.sigma[0] - 1.0).abs() < 1e-9);
        assert!((basis.sigma[1] - 1.0).abs() < 1e-9);
        let ours = basis.u.dot(&basis.u.t());

        let (vals, vecs) = jacobi_eigen(&a.to_dense());
        let mut oracle = Array2::<f64>::zeros((4, 4));
        for (j, &v) in vals.iter().enumerate() {
            if (v.abs() - 1.0).abs() < 1e-9 {
                let col = vecs.column(j);
                for r in 0..4 {
                    for c in 0..4 {
                        oracle[[r, c]] += col[r] * col[c];
                    }
                }
            }
        }
        for (x, y) in ours.iter().zip(oracle.iter()) {
            assert!((x - y).abs() < 1e-8);
        }
    }

    #[test]
    fn invalid_component_counts_rejected() {
        let a = sym_normalize(&build_undirected(&[(0, 1)], 2).unwrap());
        assert!(truncated_spectrum(&a, 0).is_err());
        assert!(truncated_spectrum(&a, 3).is_err());
    }

    #[test]
    fn feature_spectrum_identity() {
        let x = FeatureMatrix::new(Array2::eye(3)).unwrap();
        let fs = feature_spectrum(&x, 2).unwrap();
        assert!((fs.sigma_x[0] - 1.0).abs() < 1e-10);
        assert!((fs.sigma_x[1] - 1.0).abs() < 1e-10);
        assert!(!fs.rank_deficient);
    }

    #[test]
    fn feature_spectrum_single_row() {
        let mut x = Array2::<f64>::zeros((4, 3));
        x[[2, 0]] = 3.0;
        x[[2, 1]] = 4.0;
        let fs = feature_spectrum(&FeatureMatrix::new(x).unwrap(), 1).unwrap();
        // Gram eigenvalue is the squared row norm: 9 + 16.
        assert!((fs.sigma_x[0] - 25.0).abs() < 1e-8);
    }

    #[test]
    fn feature_spectrum_matches_dense_gram_oracle() {
        let mut rng = ChaCha20Rng::seed_from_u64(21);
        let x = Array2::from_shape_fn((40, 12), |_| rng.random::<f64>() * 2.0 - 1.0);
        let gram = x.dot(&x.t());
        let (vals, _) = jacobi_eigen(&gram);
        let mut desc: Vec<f64> = vals.to_vec();
        desc.sort_by(|a, b| b.partial_cmp(a).unwrap());
        let fs = feature_spectrum(&FeatureMatrix::new(x).unwrap(), 5).unwrap();
        for i in 0..5 {
            assert!(
                (fs.sigma_x[i] - desc[i]).abs() < 1e-8 * desc[0].max(1.0),
                "component {i}: {} vs {}",
                fs.sigma_x[i],
                desc[i]
            );
        }
    }

    #[test]
    fn feature_spectrum_flags_rank_deficiency() {
        // Rank-1 feature matrix, two components requested.
        let mut x = Array2::<f64>::zeros((5, 4));
        for i in 0..5 {
            x[[i, 1]] = (i as f64 + 1.0) * 0.5;
        }
        let fs = feature_spectrum(&FeatureMatrix::new(x).unwrap(), 2).unwrap();
        assert!(fs.rank_deficient);
        assert_eq!(fs.sigma_x[1], 0.0);
        assert!(fs.sigma_x[0] > 0.0);
    }

    #[test]
    fn feature_matrix_rejects_non_finite() {
        let mut x = Array2::<f64>::zeros((2, 2));
        x[[1, 0]] = f64::NAN;
        assert!(FeatureMatrix::new(x).is_err());
    }

    #[test]
    fn project_basis_onto_itself_is_identity() {
        let a = sym_normalize(&random_graph(20, 0.2, 9));
        let basis = truncated_spectrum(&a, 6).unwrap();
        let p = project(&basis, &basis.u).unwrap();
        for i in 0..6 {
            for j in 0..6 {
                let target = if i == j { 1.0 } else { 0.0 };
                assert!((p[[i, j]] - target).abs() < 1e-8);
            }
        }
        let z = project(&basis, &Array2::zeros((20, 3))).unwrap();
        assert!(z.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn project_matches_naive_matmul() {
        let a = sym_normalize(&random_graph(15, 0.25, 13));
        let basis = truncated_spectrum(&a, 5).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(14);
        let m = Array2::from_shape_fn((15, 4), |_| rng.random::<f64>() * 2.0 - 1.0);
        let fast = project(&basis, &m).unwrap();
        let slow = naive_matmul(&basis.u.t().to_owned(), &m);
        for (x, y) in fast.iter().zip(slow.iter()) {
            assert!((x - y).abs() < 1e-12);
        }
        assert!(project(&basis, &Array2::zeros((9, 2))).is_err());
    }
}
