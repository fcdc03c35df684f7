//! Small dense kernels for symmetric matrices stored row-major in flat slices.
//!
//! Dimensions here are embedding sizes (tens to low hundreds), so plain
//! O(d^3) routines are sufficient.

use crate::scalar::Real;

/// Lower Cholesky factor `L` with `A = L L^T`, or `None` if `A` is not
/// numerically positive definite.
pub fn cholesky<T: Real>(a: &[T], n: usize) -> Option<Vec<T>> {
    debug_assert_eq!(a.len(), n * n);
    let mut l = vec![T::zero(); n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut sum = a[i * n + j];
            for k in 0..j {
                sum -= l[i * n + k] * l[j * n + k];
            }
            if i == j {
                if !(sum > T::zero()) || !sum.is_finite() {
                    return None;
                }
                l[i * n + i] = sum.sqrt();
            } else {
                l[i * n + j] = sum / l[j * n + j];
            }
        }
    }
    Some(l)
}

/// Solves `L L^T x = b` given the lower factor.
pub fn cholesky_solve<T: Real>(l: &[T], n: usize, b: &[T]) -> Vec<T> {
    let mut y = b.to_vec();
    for i in 0..n {
        let mut s = y[i];
        for k in 0..i {
            s -= l[i * n + k] * y[k];
        }
        y[i] = s / l[i * n + i];
    }
    for i in (0..n).rev() {
        let mut s = y[i];
        for k in i + 1..n {
            s -= l[k * n + i] * y[k];
        }
        y[i] = s / l[i * n + i];
    }
    y
}

/// Inverse of a symmetric positive-definite matrix.
pub fn spd_inverse<T: Real>(a: &[T], n: usize) -> Option<Vec<T>> {
    let l = cholesky(a, n)?;
    let mut inv = vec![T::zero(); n * n];
    let mut e = vec![T::zero(); n];
    for j in 0..n {
        e.iter_mut().for_each(|v| *v = T::zero());
        e[j] = T::one();
        let col = cholesky_solve(&l, n, &e);
        for i in 0..n {
            inv[i * n + j] = col[i];
        }
    }
    // Exact symmetry keeps downstream Cholesky factorizations stable.
    for i in 0..n {
        for j in 0..i {
            let avg = (inv[i * n + j] + inv[j * n + i]) * T::of(0.5);
            inv[i * n + j] = avg;
            inv[j * n + i] = avg;
        }
    }
    Some(inv)
}

/// `y = A x` for a square row-major `A`.
pub fn mat_vec<T: Real>(a: &[T], n: usize, x: &[T]) -> Vec<T> {
    (0..n)
        .map(|i| {
            let row = &a[i * n..(i + 1) * n];
            row.iter()
                .zip(x)
                .fold(T::zero(), |acc, (r, v)| acc + *r * *v)
        })
        .collect()
}

/// `y = L z` for a lower-triangular `L`.
pub fn lower_mat_vec<T: Real>(l: &[T], n: usize, z: &[T]) -> Vec<T> {
    (0..n)
        .map(|i| {
            let mut s = T::zero();
            for k in 0..=i {
                s += l[i * n + k] * z[k];
            }
            s
        })
        .collect()
}

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations, ascending.
pub fn sym_eigenvalues<T: Real>(a: &[T], n: usize) -> Vec<T> {
    let mut m = a.to_vec();
    let eps = T::epsilon();
    for _sweep in 0..100 {
        let mut off = T::zero();
        let mut total = T::zero();
        for i in 0..n {
            for j in 0..n {
                let v = m[i * n + j] * m[i * n + j];
                total += v;
                if i != j {
                    off += v;
                }
            }
        }
        if off <= eps * eps * total || off == T::zero() {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = m[p * n + q];
                if apq == T::zero() {
                    continue;
                }
                let app = m[p * n + p];
                let aqq = m[q * n + q];
                let theta = (aqq - app) / (T::of(2.0) * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + T::one()).sqrt());
                let c = T::one() / (t * t + T::one()).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[k * n + p];
                    let mkq = m[k * n + q];
                    m[k * n + p] = c * mkp - s * mkq;
                    m[k * n + q] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[p * n + k];
                    let mqk = m[q * n + k];
                    m[p * n + k] = c * mpk - s * mqk;
                    m[q * n + k] = s * mpk + c * mqk;
                }
            }
        }
    }
    let mut eig: Vec<T> = (0..n).map(|i| m[i * n + i]).collect();
    eig.sort_by(|a, b| a.partial_cmp(b).expect("finite eigenvalues"));
    eig
}

/// Spectral norm of a symmetric matrix (largest absolute eigenvalue).
pub fn sym_operator_norm<T: Real>(a: &[T], n: usize) -> T {
    sym_eigenvalues(a, n)
        .into_iter()
        .fold(T::zero(), |acc, v| acc.max(v.abs()))
}

pub fn identity<T: Real>(n: usize) -> Vec<T> {
    let mut m = vec![T::zero(); n * n];
    for i in 0..n {
        m[i * n + i] = T::one();
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    fn spd(n: usize, seed: u64) -> Vec<f64> {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let b: Vec<f64> = (0..n * n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut a = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                a[i * n + j] = (0..n).map(|k| b[i * n + k] * b[j * n + k]).sum::<f64>();
            }
            a[i * n + i] += 0.5;
        }
        a
    }

    #[test]
    fn inverse_times_matrix_is_identity() {
        let n = 5;
        let a = spd(n, 3);
        let inv = spd_inverse(&a, n).unwrap();
        for i in 0..n {
            for j in 0..n {
                let v: f64 = (0..n).map(|k| a[i * n + k] * inv[k * n + j]).sum();
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((v - want).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        assert!(cholesky(&[1.0, 2.0, 2.0, 1.0], 2).is_none());
        assert!(cholesky(&[0.0], 1).is_none());
    }

    #[test]
    fn jacobi_agrees_with_nalgebra() {
        for seed in 0..5 {
            let n = 6;
            let mut a = spd(n, seed);
            a[0] -= 3.0; // make it indefinite
            let ours = sym_eigenvalues(&a, n);
            let mut theirs: Vec<f64> = DMatrix::from_row_slice(n, n, &a)
                .symmetric_eigen()
                .eigenvalues
                .iter()
                .copied()
                .collect();
            theirs.sort_by(|x, y| x.partial_cmp(y).unwrap());
            for (x, y) in ours.iter().zip(&theirs) {
                assert!((x - y).abs() < 1e-9, "{x} vs {y}");
            }
        }
    }
}
