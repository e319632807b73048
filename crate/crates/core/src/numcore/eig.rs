//! Symmetric eigendecomposition by cyclic Jacobi rotations.
//!
//! Adequate for the covariance matrices this crate builds (a few hundred
//! dimensions at most); no attempt at BLAS-level performance.

use crate::error::{Error, Result};
use crate::numcore::matrix::Matrix;

const SYMMETRY_TOL: f64 = 1e-9;
const OFF_DIAG_TOL: f64 = 1e-12;
const MAX_SWEEPS: usize = 100;

/// Eigendecomposition of a symmetric matrix.
///
/// Returns eigenvalues sorted descending and the matching eigenvectors as
/// orthonormal columns: `a * v_i = lambda_i * v_i`. Rotates cyclically until
/// the off-diagonal Frobenius norm drops below 1e-12 or 100 sweeps elapse.
///
/// Errors if `a` is not square or deviates from symmetry by more than 1e-9.
pub fn sym_eig(a: &Matrix) -> Result<(Vec<f64>, Matrix)> {
    let n = a.rows();
    if n != a.cols() {
        return Err(Error::arg(format!(
            "sym_eig: matrix is {}x{}, not square",
            a.rows(),
            a.cols()
        )));
    }
    for i in 0..n {
        for j in (i + 1)..n {
            if (a.get(i, j) - a.get(j, i)).abs() > SYMMETRY_TOL {
                return Err(Error::arg(format!(
                    "sym_eig: asymmetric at ({i},{j}): {} vs {}",
                    a.get(i, j),
                    a.get(j, i)
                )));
            }
        }
    }

    // Symmetrize exactly so the rotations see a true symmetric matrix.
    let mut b = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            b.set(i, j, 0.5 * (a.get(i, j) + a.get(j, i)));
        }
    }
    let mut v = Matrix::identity(n);

    for _sweep in 0..MAX_SWEEPS {
        if off_diagonal_norm(&b) < OFF_DIAG_TOL {
            break;
        }
        for p in 0..n.saturating_sub(1) {
            for q in (p + 1)..n {
                rotate(&mut b, &mut v, p, q);
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| b.get(j, j).partial_cmp(&b.get(i, i)).unwrap());
    let eigenvalues: Vec<f64> = order.iter().map(|&i| b.get(i, i)).collect();
    let mut vectors = Matrix::zeros(n, n);
    for (col, &src) in order.iter().enumerate() {
        for row in 0..n {
            vectors.set(row, col, v.get(row, src));
        }
    }
    Ok((eigenvalues, vectors))
}

fn off_diagonal_norm(b: &Matrix) -> f64 {
    let n = b.rows();
    let mut s = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                let x = b.get(i, j);
                s += x * x;
            }
        }
    }
    s.sqrt()
}

/// One Jacobi rotation annihilating b[p][q].
fn rotate(b: &mut Matrix, v: &mut Matrix, p: usize, q: usize) {
    let apq = b.get(p, q);
    if apq == 0.0 {
        return;
    }
    let app = b.get(p, p);
    let aqq = b.get(q, q);
    let tau = (aqq - app) / (2.0 * apq);
    let t = if tau >= 0.0 {
        1.0 / (tau + (1.0 + tau * tau).sqrt())
    } else {
        -1.0 / (-tau + (1.0 + tau * tau).sqrt())
    };
    let c = 1.0 / (1.0 + t * t).sqrt();
    let s = t * c;

    let n = b.rows();
    b.set(p, p, app - t * apq);
    b.set(q, q, aqq + t * apq);
    b.set(p, q, 0.0);
    b.set(q, p, 0.0);
    for i in 0..n {
        if i != p && i != q {
            let aip = b.get(i, p);
            let aiq = b.get(i, q);
            let new_p = c * aip - s * aiq;
            let new_q = s * aip + c * aiq;
            b.set(i, p, new_p);
            b.set(p, i, new_p);
            b.set(i, q, new_q);
            b.set(q, i, new_q);
        }
    }
    for i in 0..n {
        let vip = v.get(i, p);
        let viq = v.get(i, q);
        v.set(i, p, c * vip - s * viq);
        v.set(i, q, s * vip + c * viq);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::rng::Rng;

    fn random_symmetric(rng: &mut Rng, n: usize) -> Matrix {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            for j in i..n {
                let x = rng.gaussian();
                m.set(i, j, x);
                m.set(j, i, x);
            }
        }
        m
    }

    #[test]
    fn identity_has_unit_eigenvalues() {
        let (vals, _) = sym_eig(&Matrix::identity(4)).unwrap();
        for v in vals {
            assert!((v - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn diagonal_case() {
        let a = Matrix::from_rows(&[vec![3.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let (vals, vecs) = sym_eig(&a).unwrap();
        assert!((vals[0] - 3.0).abs() < 1e-12);
        assert!((vals[1] - 1.0).abs() < 1e-12);
        // Axis eigenvectors up to sign.
        assert!((vecs.get(0, 0).abs() - 1.0).abs() < 1e-12);
        assert!(vecs.get(1, 0).abs() < 1e-12);
        assert!((vecs.get(1, 1).abs() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn residual_and_orthonormality_on_random_input() {
        let mut rng = Rng::new(17);
        for _ in 0..5 {
            let a = random_symmetric(&mut rng, 5);
            let (vals, vecs) = sym_eig(&a).unwrap();
            let a_norm = a.frobenius_norm();
            // Per-pair residual ||A v - lambda v|| <= 1e-9 ||A||.
            for k in 0..5 {
                let mut resid = 0.0;
                for i in 0..5 {
                    let mut av = 0.0;
                    for j in 0..5 {
                        av += a.get(i, j) * vecs.get(j, k);
                    }
                    let r = av - vals[k] * vecs.get(i, k);
                    resid += r * r;
                }
                assert!(resid.sqrt() <= 1e-9 * a_norm, "pair {k}");
            }
            // V^T V = I.
            let vtv = vecs.transpose().matmul(&vecs).unwrap();
            assert!(vtv.max_abs_diff(&Matrix::identity(5)) < 1e-9);
            // Trace identity.
            let trace: f64 = (0..5).map(|i| a.get(i, i)).sum();
            let sum: f64 = vals.iter().sum();
            assert!((trace - sum).abs() < 1e-9 * a_norm.max(1.0));
            // Sorted descending.
            for w in vals.windows(2) {
                assert!(w[0] >= w[1]);
            }
        }
    }

    #[test]
    fn rejects_non_square_and_asymmetric() {
        assert!(matches!(
            sym_eig(&Matrix::zeros(2, 3)),
            Err(crate::Error::Argument(_))
        ));
        let mut a = Matrix::identity(3);
        a.set(0, 1, 0.5); // a(1,0) stays 0
        assert!(matches!(sym_eig(&a), Err(crate::Error::Argument(_))));
    }
}
