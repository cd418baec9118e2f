//! Textbook reference kernels. Nothing here calls into `numerics` beyond
//! the storage type, so they can be used to check it.

use crate::numerics::DenseMatrix;

/// Triple-loop `A · B`.
pub fn matmul(a: &DenseMatrix, b: &DenseMatrix) -> DenseMatrix {
    assert_eq!(a.cols(), b.rows(), "naive matmul shape mismatch");
    let mut c = DenseMatrix::zeros(a.rows(), b.cols());
    for i in 0..a.rows() {
        for j in 0..b.cols() {
            let mut s = 0.0;
            for k in 0..a.cols() {
                s += a.get(i, k) * b.get(k, j);
            }
            c.set(i, j, s);
        }
    }
    c
}

pub fn mat_vec(a: &DenseMatrix, x: &[f64]) -> Vec<f64> {
    (0..a.rows())
        .map(|i| (0..a.cols()).map(|k| a.get(i, k) * x[k]).sum())
        .collect()
}

/// Dense `B · Bᵀ` built entry by entry.
pub fn projector_matrix(b: &DenseMatrix) -> DenseMatrix {
    let d = b.rows();
    let mut p = DenseMatrix::zeros(d, d);
    for i in 0..d {
        for j in 0..d {
            let mut s = 0.0;
            for k in 0..b.cols() {
                s += b.get(i, k) * b.get(j, k);
            }
            p.set(i, j, s);
        }
    }
    p
}

/// Eigenvalues of a symmetric matrix by cyclic two-sided Jacobi rotations.
pub fn symmetric_eigenvalues(s: &DenseMatrix) -> Vec<f64> {
    let n = s.rows();
    assert_eq!(n, s.cols(), "symmetric_eigenvalues needs a square matrix");
    let mut a: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| s.get(i, j)).collect()).collect();
    for _ in 0..200 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i][j] * a[i][j])
            .sum();
        let diag: f64 = (0..n).map(|i| a[i][i] * a[i][i]).sum();
        if off <= 1e-30 * diag.max(1e-300) {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                if a[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let sn = t * c;
                for k in 0..n {
                    let akp = a[k][p];
                    let akq = a[k][q];
                    a[k][p] = c * akp - sn * akq;
                    a[k][q] = sn * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p][k];
                    let aqk = a[q][k];
                    a[p][k] = c * apk - sn * aqk;
                    a[q][k] = sn * apk + c * aqk;
                }
            }
        }
    }
    (0..n).map(|i| a[i][i]).collect()
}
