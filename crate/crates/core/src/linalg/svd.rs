//! One-sided (Hestenes) Jacobi SVD.
//!
//! Columns of a working copy are orthogonalised pairwise by plane
//! rotations; on convergence the column norms are the singular values,
//! the normalised columns are the left singular vectors and the
//! accumulated rotations are the right singular vectors. All arithmetic
//! is done in `f64` regardless of the storage scalar.

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::scalar::Scalar;

const MAX_SWEEPS: usize = 60;
// A pair is rotated while |<a_p, a_q>| exceeds this fraction of |a_p||a_q|.
const ROTATION_TOL: f64 = 1e-14;
// Singular values below this fraction of the largest get a completed basis vector.
const RANK_TOL: f64 = 1e-12;

/// Thin SVD `A = U diag(sigma) Vᵀ` with `k = min(rows, cols)` columns.
#[derive(Clone, Debug)]
pub struct Svd<T> {
    pub u: Matrix<T>,
    pub sigma: Vec<T>,
    pub v: Matrix<T>,
}

pub fn svd<T: Scalar>(a: &Matrix<T>) -> Result<Svd<T>> {
    if !a.is_finite() {
        return Err(Error::Structure("svd input contains non-finite values".into()));
    }
    let (m, n) = a.shape();
    if m == 0 || n == 0 {
        return Err(crate::error::shape_err("svd", format!("empty {m}x{n} matrix")));
    }
    if m >= n {
        let (u, sigma, v) = jacobi(m, n, |i, j| a[(i, j)].widen())?;
        Ok(finish(u, sigma, v))
    } else {
        // A = (Aᵀ)ᵀ = (U' S V'ᵀ)ᵀ = V' S U'ᵀ
        let (u, sigma, v) = jacobi(n, m, |i, j| a[(j, i)].widen())?;
        Ok(finish(v, sigma, u))
    }
}

fn finish<T: Scalar>(u: Vec<Vec<f64>>, sigma: Vec<f64>, v: Vec<Vec<f64>>) -> Svd<T> {
    let to_matrix = |cols: &[Vec<f64>]| {
        let rows = cols.first().map_or(0, Vec::len);
        Matrix::from_fn(rows, cols.len(), |i, j| T::cast(cols[j][i]))
    };
    Svd {
        u: to_matrix(&u),
        sigma: sigma.into_iter().map(T::cast).collect(),
        v: to_matrix(&v),
    }
}

type Columns = Vec<Vec<f64>>;

/// Requires `m >= n`. Returns column-major U (m x n), sigma (n), V (n x n).
fn jacobi(m: usize, n: usize, entry: impl Fn(usize, usize) -> f64) -> Result<(Columns, Vec<f64>, Columns)> {
    let mut work: Columns = (0..n).map(|j| (0..m).map(|i| entry(i, j)).collect()).collect();
    let mut v: Columns = (0..n)
        .map(|j| {
            let mut e = vec![0.0; n];
            e[j] = 1.0;
            e
        })
        .collect();
    let mut norms: Vec<f64> = work.iter().map(|c| dot(c, c)).collect();
    let total: f64 = norms.iter().sum();
    let tiny = f64::MIN_POSITIVE.max(total * 1e-300);

    let mut converged = n < 2;
    let mut off_norm = 0.0;
    for _sweep in 0..MAX_SWEEPS {
        if converged {
            break;
        }
        let mut rotated = false;
        let mut off = 0.0;
        for p in 0..n - 1 {
            for q in p + 1..n {
                let alpha = norms[p];
                let beta = norms[q];
                let gamma = dot(&work[p], &work[q]);
                let scale = (alpha * beta).sqrt();
                if scale <= tiny || gamma.abs() <= ROTATION_TOL * scale {
                    continue;
                }
                off += gamma * gamma;
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate(&mut work, p, q, c, s);
                rotate(&mut v, p, q, c, s);
                norms[p] = dot(&work[p], &work[p]);
                norms[q] = dot(&work[q], &work[q]);
            }
        }
        off_norm = off.sqrt();
        converged = !rotated;
    }
    if !converged {
        return Err(Error::SvdConvergence {
            sweeps: MAX_SWEEPS,
            off_norm,
        });
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| norms[b].total_cmp(&norms[a]).then(a.cmp(&b)));
    let sigma: Vec<f64> = order.iter().map(|&j| norms[j].sqrt()).collect();
    let sigma_max = sigma.first().copied().unwrap_or(0.0);

    let mut u: Columns = Vec::with_capacity(n);
    let mut deficient = Vec::new();
    for (k, &j) in order.iter().enumerate() {
        if sigma[k] > RANK_TOL * sigma_max && sigma[k] > 0.0 {
            let inv = 1.0 / sigma[k];
            u.push(work[j].iter().map(|x| x * inv).collect());
        } else {
            u.push(vec![0.0; m]);
            deficient.push(k);
        }
    }
    complete_basis(&mut u, &deficient);
    let v_sorted: Columns = order.iter().map(|&j| std::mem::take(&mut v[j])).collect();
    Ok((u, sigma, v_sorted))
}

fn rotate(cols: &mut Columns, p: usize, q: usize, c: f64, s: f64) {
    let (lo, hi) = cols.split_at_mut(q);
    let (cp, cq) = (&mut lo[p], &mut hi[0]);
    for (x, y) in cp.iter_mut().zip(cq.iter_mut()) {
        let (a, b) = (*x, *y);
        *x = c * a - s * b;
        *y = s * a + c * b;
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

// Fill the listed columns with unit vectors orthogonal to every other column.
fn complete_basis(u: &mut Columns, missing: &[usize]) {
    if missing.is_empty() {
        return;
    }
    let m = u[0].len();
    let mut filled: Vec<bool> = vec![true; u.len()];
    for &k in missing {
        filled[k] = false;
    }
    let mut candidate = 0usize;
    for &k in missing {
        loop {
            assert!(candidate < m, "basis completion exhausted candidates");
            let mut e = vec![0.0; m];
            e[candidate] = 1.0;
            candidate += 1;
            // two passes of Gram-Schmidt
            for _ in 0..2 {
                for (j, col) in u.iter().enumerate() {
                    if filled[j] {
                        let proj = dot(&e, col);
                        for (x, c) in e.iter_mut().zip(col) {
                            *x -= proj * c;
                        }
                    }
                }
            }
            let norm = dot(&e, &e).sqrt();
            if norm * norm >= 0.5 / m as f64 {
                u[k] = e.into_iter().map(|x| x / norm).collect();
                filled[k] = true;
                break;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{Domain, SeedStream};

    fn reconstruct(s: &Svd<f64>) -> Matrix<f64> {
        let us = Matrix::from_fn(s.u.rows(), s.u.cols(), |i, j| s.u[(i, j)] * s.sigma[j]);
        us.matmul_t(&s.v).unwrap()
    }

    fn orthonormality_error(q: &Matrix<f64>) -> f64 {
        q.t_matmul(q).unwrap().max_abs_diff(&Matrix::identity(q.cols()))
    }

    #[test]
    fn identity_has_unit_singular_values() {
        let s = svd(&Matrix::<f64>::identity(4)).unwrap();
        for x in &s.sigma {
            assert!((x - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn diagonal_case_gives_signed_permutations() {
        let a = Matrix::<f64>::from_diag(3, 3, &[1.0, 3.0, 2.0]);
        let s = svd(&a).unwrap();
        assert_eq!(s.sigma, vec![3.0, 2.0, 1.0]);
        for q in [&s.u, &s.v] {
            for v in q.as_slice() {
                assert!(v.abs() == 0.0 || (v.abs() - 1.0).abs() < 1e-12);
            }
        }
        assert!(reconstruct(&s).max_abs_diff(&a) < 1e-12);
    }

    #[test]
    fn wide_and_tall_reconstruct() {
        let mut rng = SeedStream::new(11).substream(Domain::Test, 0, 0);
        for (m, n) in [(64, 48), (48, 64), (1, 5), (5, 1), (17, 17)] {
            let a = Matrix::<f64>::randn(m, n, 1.0, &mut rng);
            let s = svd(&a).unwrap();
            assert_eq!(s.u.shape(), (m, m.min(n)));
            assert_eq!(s.v.shape(), (n, m.min(n)));
            assert!(reconstruct(&s).sub(&a).unwrap().frobenius_norm() <= 1e-10 * a.frobenius_norm());
            assert!(orthonormality_error(&s.u) < 1e-10);
            assert!(orthonormality_error(&s.v) < 1e-10);
            assert!(s.sigma.windows(2).all(|w| w[0] >= w[1]));
        }
    }

    #[test]
    fn rank_deficient_columns_are_completed() {
        // zero-padded diagonal, 5 x 3 with a zero singular value
        let a = Matrix::<f64>::from_diag(5, 3, &[2.0, 0.0, 1.0]);
        let s = svd(&a).unwrap();
        assert_eq!(s.sigma, vec![2.0, 1.0, 0.0]);
        assert!(orthonormality_error(&s.u) < 1e-12);
        assert!(reconstruct(&s).max_abs_diff(&a) < 1e-12);

        let zero = Matrix::<f64>::zeros(4, 3);
        let s = svd(&zero).unwrap();
        assert!(s.sigma.iter().all(|&x| x == 0.0));
        assert!(orthonormality_error(&s.u) < 1e-12);
    }

    #[test]
    fn non_finite_input_is_rejected() {
        let mut a = Matrix::<f32>::identity(3);
        a[(1, 2)] = f32::NAN;
        assert!(svd(&a).is_err());
    }
}
