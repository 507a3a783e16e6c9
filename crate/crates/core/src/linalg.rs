//! Dense kernels backing the truncated eigensolver.
//!
//! The symmetric eigensolver is the classic two-stage scheme: Householder
//! reduction to tridiagonal form followed by the implicit-shift QL iteration,
//! accumulating the orthogonal transform for eigenvectors. Orthonormalization
//! of tall blocks uses CholeskyQR applied twice, falling back to modified
//! Gram-Schmidt with deterministic refill when the block is rank-deficient.

use ndarray::{Array1, Array2, Axis, Zip};
use rand::Rng;
use rand_chacha::ChaCha20Rng;

use crate::error::{Error, Result};

/// Eigendecomposition of a dense symmetric matrix.
///
/// Returns `(values, vectors)` with values ascending and vector `j` in column
/// `j` of an orthogonal matrix. Only the symmetric part of the input is used.
pub fn symmetric_eigen(a: &Array2<f64>) -> Result<(Array1<f64>, Array2<f64>)> {
    let n = a.nrows();
    assert_eq!(n, a.ncols(), "matrix must be square");
    if n == 0 {
        return Ok((Array1::zeros(0), Array2::zeros((0, 0))));
    }
    // Work on the symmetrized copy so tiny asymmetries from accumulation
    // cannot push the iteration off the symmetric path.
    let mut z = Array2::from_shape_fn((n, n), |(i, j)| 0.5 * (a[[i, j]] + a[[j, i]]));
    let mut d = vec![0.0f64; n];
    let mut e = vec![0.0f64; n];
    tred2(&mut z, &mut d, &mut e);
    tql2(&mut z, &mut d, &mut e)?;

    // Sort ascending, permuting eigenvector columns to match.
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| d[i].partial_cmp(&d[j]).unwrap());
    let values = Array1::from_iter(order.iter().map(|&i| d[i]));
    let mut vectors = Array2::zeros((n, n));
    for (dst, &src) in order.iter().enumerate() {
        vectors.column_mut(dst).assign(&z.column(src));
    }
    Ok((values, vectors))
}

/// Householder reduction of a symmetric matrix to tridiagonal form with
/// accumulation of the transform in `z`. On exit `d` holds the diagonal and
/// `e[1..]` the subdiagonal.
fn tred2(z: &mut Array2<f64>, d: &mut [f64], e: &mut [f64]) {
    let n = d.len();
    for i in (1..n).rev() {
        let l = i - 1;
        let mut h = 0.0;
        if l > 0 {
            let mut scale = 0.0;
            for k in 0..=l {
                scale += z[[i, k]].abs();
            }
            if scale == 0.0 {
                e[i] = z[[i, l]];
            } else {
                for k in 0..=l {
                    z[[i, k]] /= scale;
                    h += z[[i, k]] * z[[i, k]];
                }
                let mut f = z[[i, l]];
                let g = if f >= 0.0 { -h.sqrt() } else { h.sqrt() };
                e[i] = scale * g;
                h -= f * g;
                z[[i, l]] = f - g;
                f = 0.0;
                for j in 0..=l {
                    z[[j, i]] = z[[i, j]] / h;
                    let mut g = 0.0;
                    for k in 0..=j {
                        g += z[[j, k]] * z[[i, k]];
                    }
                    for k in (j + 1)..=l {
                        g += z[[k, j]] * z[[i, k]];
                    }
                    e[j] = g / h;
                    f += e[j] * z[[i, j]];
                }
                let hh = f / (h + h);
                for j in 0..=l {
                    let f = z[[i, j]];
                    let g = e[j] - hh * f;
                    e[j] = g;
                    for k in 0..=j {
                        let delta = f * e[k] + g * z[[i, k]];
                        z[[j, k]] -= delta;
                    }
                }
            }
        } else {
            e[i] = z[[i, l]];
        }
        d[i] = h;
    }
    d[0] = 0.0;
    e[0] = 0.0;
    for i in 0..n {
        if d[i] != 0.0 {
            for j in 0..i {
                let mut g = 0.0;
                for k in 0..i {
                    g += z[[i, k]] * z[[k, j]];
                }
                for k in 0..i {
                    let delta = g * z[[k, i]];
                    z[[k, j]] -= delta;
                }
            }
        }
        d[i] = z[[i, i]];
        z[[i, i]] = 1.0;
        for j in 0..i {
            z[[j, i]] = 0.0;
            z[[i, j]] = 0.0;
        }
    }
}

fn sign_like(a: f64, b: f64) -> f64 {
    if b >= 0.0 {
        a.abs()
    } else {
        -a.abs()
    }
}

/// Implicit-shift QL iteration on a tridiagonal matrix, rotating the columns
/// of `z` along so they end up as eigenvectors.
fn tql2(z: &mut Array2<f64>, d: &mut [f64], e: &mut [f64]) -> Result<()> {
    let n = d.len();
    for i in 1..n {
        e[i - 1] = e[i];
    }
    e[n - 1] = 0.0;
    for l in 0..n {
        let mut iter = 0;
        loop {
            let mut m = l;
            while m + 1 < n {
                let dd = d[m].abs() + d[m + 1].abs();
                if e[m].abs() <= f64::EPSILON * dd {
                    break;
                }
                m += 1;
            }
            if m == l {
                break;
            }
            iter += 1;
            if iter > 60 {
                return Err(Error::NonFinite(
                    "tridiagonal QL iteration (no convergence)".into(),
                ));
            }
            let mut g = (d[l + 1] - d[l]) / (2.0 * e[l]);
            let mut r = g.hypot(1.0);
            g = d[m] - d[l] + e[l] / (g + sign_like(r, g));
            let mut s = 1.0;
            let mut c = 1.0;
            let mut p = 0.0;
            let mut underflow = false;
            for i in (l..m).rev() {
                let mut f = s * e[i];
                let b = c * e[i];
                r = f.hypot(g);
                e[i + 1] = r;
                if r == 0.0 {
                    d[i + 1] -= p;
                    e[m] = 0.0;
                    underflow = true;
                    break;
                }
                s = f / r;
                c = g / r;
                g = d[i + 1] - p;
                r = (d[i] - g) * s + 2.0 * c * b;
                p = s * r;
                d[i + 1] = g + p;
                g = c * r - b;
                for k in 0..n {
                    f = z[[k, i + 1]];
                    z[[k, i + 1]] = s * z[[k, i]] + c * f;
                    z[[k, i]] = c * z[[k, i]] - s * f;
                }
            }
            if underflow {
                continue;
            }
            d[l] -= p;
            e[l] = g;
            e[m] = 0.0;
        }
    }
    Ok(())
}

/// Upper Cholesky factor `R` with `G = R^T R`, or `None` when `G` is not
/// numerically positive definite.
pub fn cholesky_upper(g: &Array2<f64>) -> Option<Array2<f64>> {
    let n = g.nrows();
    let scale = g.diag().iter().cloned().fold(0.0f64, f64::max).max(1e-300);
    let mut r = Array2::<f64>::zeros((n, n));
    for i in 0..n {
        let mut diag = g[[i, i]];
        for k in 0..i {
            diag -= r[[k, i]] * r[[k, i]];
        }
        if diag <= scale * 1e-13 {
            return None;
        }
        let rii = diag.sqrt();
        r[[i, i]] = rii;
        for j in (i + 1)..n {
            let mut v = g[[i, j]];
            for k in 0..i {
                v -= r[[k, i]] * r[[k, j]];
            }
            r[[i, j]] = v / rii;
        }
    }
    Some(r)
}

/// In-place `V <- V R^{-1}` for upper-triangular `R`, row-parallel.
fn solve_right_upper(v: &mut Array2<f64>, r: &Array2<f64>) {
    let b = v.ncols();
    Zip::from(v.axis_iter_mut(Axis(0))).par_for_each(|mut row| {
        for j in 0..b {
            let mut x = row[j];
            for k in 0..j {
                x -= row[k] * r[[k, j]];
            }
            row[j] = x / r[[j, j]];
        }
    });
}

/// Orthonormalize the columns of `v` in place.
///
/// CholeskyQR run twice covers the well-conditioned path with pure GEMM work;
/// rank deficiency drops to modified Gram-Schmidt, replacing dependent
/// columns with fresh random directions from `rng` (deterministic under a
/// fixed seed).
pub fn orthonormalize(v: &mut Array2<f64>, rng: &mut ChaCha20Rng) {
    for _pass in 0..2 {
        let g = par_matmul(v.t(), v.view());
        match cholesky_upper(&g) {
            Some(r) => solve_right_upper(v, &r),
            None => mgs_with_refill(v, rng),
        }
    }
}

fn mgs_with_refill(v: &mut Array2<f64>, rng: &mut ChaCha20Rng) {
    let (n, b) = (v.nrows(), v.ncols());
    for j in 0..b {
        // Two orthogonalization passes against the finished columns.
        for _ in 0..2 {
            for k in 0..j {
                let dot: f64 = (0..n).map(|r| v[[r, k]] * v[[r, j]]).sum();
                for r in 0..n {
                    let delta = dot * v[[r, k]];
                    v[[r, j]] -= delta;
                }
            }
        }
        let mut norm: f64 = (0..n).map(|r| v[[r, j]] * v[[r, j]]).sum::<f64>().sqrt();
        if norm < 1e-10 {
            // Dependent column: refill with a random direction and redo the
            // orthogonalization against everything before it.
            loop {
                for r in 0..n {
                    v[[r, j]] = rng.random::<f64>() * 2.0 - 1.0;
                }
                for _ in 0..2 {
                    for k in 0..j {
                        let dot: f64 = (0..n).map(|r| v[[r, k]] * v[[r, j]]).sum();
                        for r in 0..n {
                            let delta = dot * v[[r, k]];
                            v[[r, j]] -= delta;
                        }
                    }
                }
                norm = (0..n).map(|r| v[[r, j]] * v[[r, j]]).sum::<f64>().sqrt();
                if norm > 1e-8 {
                    break;
                }
            }
        }
        for r in 0..n {
            v[[r, j]] /= norm;
        }
    }
}

/// Row-parallel matrix product. Each output row block is computed
/// sequentially by one worker, so the result is bit-identical for any
/// thread count.
pub fn par_matmul(a: ndarray::ArrayView2<'_, f64>, b: ndarray::ArrayView2<'_, f64>) -> Array2<f64> {
    assert_eq!(a.ncols(), b.nrows(), "inner dimensions must agree");
    let mut out = Array2::<f64>::zeros((a.nrows(), b.ncols()));
    let chunk = 128usize;
    let chunks: Vec<(ndarray::ArrayViewMut2<'_, f64>, ndarray::ArrayView2<'_, f64>)> = out
        .axis_chunks_iter_mut(Axis(0), chunk)
        .zip(a.axis_chunks_iter(Axis(0), chunk))
        .collect();
    use rayon::prelude::*;
    chunks.into_par_iter().for_each(|(mut o, ablock)| {
        o.assign(&ablock.dot(&b));
    });
    out
}

/// Max absolute deviation of `Q^T Q` from the identity; test and validation
/// helper.
pub fn orthonormality_defect(q: &Array2<f64>) -> f64 {
    let g = q.t().dot(q);
    let k = g.nrows();
    let mut worst = 0.0f64;
    for i in 0..k {
        for j in 0..k {
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((g[[i, j]] - target).abs());
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_chacha::rand_core::SeedableRng;
    use spectral_adapt_testutil::jacobi_eigen;

    fn random_symmetric(n: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let raw = Array2::from_shape_fn((n, n), |_| rng.random::<f64>() * 2.0 - 1.0);
        0.5 * (&raw + &raw.t())
    }

    #[test]
    fn eigen_matches_jacobi_oracle() {
        for (n, seed) in [(3usize, 1u64), (8, 2), (17, 3), (40, 4)] {
            let a = random_symmetric(n, seed);
            let (vals, vecs) = symmetric_eigen(&a).unwrap();
            let (oracle_vals, _) = jacobi_eigen(&a);
            for i in 0..n {
                assert!(
                    (vals[i] - oracle_vals[i]).abs() < 1e-10,
                    "n={n} value {i}: {} vs {}",
                    vals[i],
                    oracle_vals[i]
                );
            }
            assert!(orthonormality_defect(&vecs) < 1e-12);
            // Columns solve the eigenproblem.
            let av = a.dot(&vecs);
            for j in 0..n {
                for i in 0..n {
                    assert!((av[[i, j]] - vals[j] * vecs[[i, j]]).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn eigen_handles_diagonal_and_degenerate() {
        let a = Array2::from_diag(&ndarray::arr1(&[3.0, 1.0, 1.0, -2.0]));
        let (vals, vecs) = symmetric_eigen(&a).unwrap();
        assert!((vals[0] + 2.0).abs() < 1e-14);
        assert!((vals[1] - 1.0).abs() < 1e-14);
        assert!((vals[2] - 1.0).abs() < 1e-14);
        assert!((vals[3] - 3.0).abs() < 1e-14);
        assert!(orthonormality_defect(&vecs) < 1e-12);
    }

    #[test]
    fn orthonormalize_full_rank_block() {
        let mut rng = ChaCha20Rng::seed_from_u64(9);
        let mut v = Array2::from_shape_fn((30, 7), |_| rng.random::<f64>() * 2.0 - 1.0);
        orthonormalize(&mut v, &mut rng);
        assert!(orthonormality_defect(&v) < 1e-12);
    }

    #[test]
    fn orthonormalize_rank_deficient_block() {
        let mut rng = ChaCha20Rng::seed_from_u64(10);
        let mut v = Array2::<f64>::zeros((12, 4));
        // All four columns proportional to the same vector.
        for r in 0..12 {
            let base = (r as f64 * 0.37).sin();
            for c in 0..4 {
                v[[r, c]] = base * (c as f64 + 1.0);
            }
        }
        orthonormalize(&mut v, &mut rng);
        assert!(orthonormality_defect(&v) < 1e-10);
    }

    #[test]
    fn par_matmul_matches_naive_product() {
        let mut rng = ChaCha20Rng::seed_from_u64(15);
        let a = Array2::from_shape_fn((137, 23), |_| rng.random::<f64>() * 2.0 - 1.0);
        let b = Array2::from_shape_fn((23, 9), |_| rng.random::<f64>() * 2.0 - 1.0);
        let fast = par_matmul(a.view(), b.view());
        let slow = spectral_adapt_testutil::naive_matmul(&a, &b);
        for (x, y) in fast.iter().zip(slow.iter()) {
            assert!((x - y).abs() < 1e-12);
        }
        // Thread count does not change the bits.
        let serial = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap()
            .install(|| par_matmul(a.view(), b.view()));
        assert_eq!(fast, serial);
    }

    #[test]
    fn cholesky_identity() {
        let g = Array2::<f64>::eye(5);
        let r = cholesky_upper(&g).unwrap();
        for i in 0..5 {
            assert!((r[[i, i]] - 1.0).abs() < 1e-15);
        }
        assert!(cholesky_upper(&Array2::<f64>::zeros((3, 3))).is_none());
    }
}
