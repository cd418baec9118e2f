//! Dense real linear algebra used by every other module.
//!
//! Matrices are stored column-major. All kernels use a fixed loop nest so
//! results are bit-identical across runs and thread counts.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Orthogonality tolerance promised by [`SvdResult`].
pub const ORTHO_TOL: f64 = 1e-10;
/// Relative reconstruction tolerance promised by [`SvdResult`].
pub const RECON_TOL: f64 = 1e-9;

const MAX_JACOBI_SWEEPS: usize = 120;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        DenseMatrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    /// Build from column-major storage, rejecting bad lengths and non-finite values.
    pub fn from_col_major(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::usage(format!(
                "matrix storage has {} entries, expected {rows}x{cols}",
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|x| !x.is_finite()) {
            return Err(Error::usage(format!(
                "non-finite matrix entry at ({}, {})",
                pos % rows.max(1),
                pos / rows.max(1)
            )));
        }
        Ok(DenseMatrix { rows, cols, data })
    }

    /// Row-major convenience constructor; all rows must have equal length.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|row| row.len() != c) {
            return Err(Error::usage("ragged rows"));
        }
        let mut data = vec![0.0; r * c];
        for (i, row) in rows.iter().enumerate() {
            for (j, &x) in row.iter().enumerate() {
                data[j * r + i] = x;
            }
        }
        Self::from_col_major(r, c, data)
    }

    pub fn from_columns(rows: usize, columns: &[Vec<f64>]) -> Result<Self> {
        let mut data = Vec::with_capacity(rows * columns.len());
        for (j, col) in columns.iter().enumerate() {
            if col.len() != rows {
                return Err(Error::usage(format!(
                    "column {j} has length {}, expected {rows}",
                    col.len()
                )));
            }
            data.extend_from_slice(col);
        }
        Self::from_col_major(rows, columns.len(), data)
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for j in 0..cols {
            for i in 0..rows {
                data.push(f(i, j));
            }
        }
        DenseMatrix { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[j * self.rows + i]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[j * self.rows + i] = v;
    }

    #[inline]
    pub fn col(&self, j: usize) -> &[f64] {
        &self.data[j * self.rows..(j + 1) * self.rows]
    }

    #[inline]
    pub fn col_mut(&mut self, j: usize) -> &mut [f64] {
        let r = self.rows;
        &mut self.data[j * r..(j + 1) * r]
    }

    pub fn row(&self, i: usize) -> Vec<f64> {
        (0..self.cols).map(|j| self.get(i, j)).collect()
    }

    pub fn transpose(&self) -> DenseMatrix {
        DenseMatrix::from_fn(self.cols, self.rows, |i, j| self.get(j, i))
    }

    pub fn frobenius_sq(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.frobenius_sq().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn scaled(&self, s: f64) -> DenseMatrix {
        DenseMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|x| x * s).collect(),
        }
    }

    pub fn sub(&self, other: &DenseMatrix) -> Result<DenseMatrix> {
        self.zip_with(other, "subtract", |a, b| a - b)
    }

    pub fn add(&self, other: &DenseMatrix) -> Result<DenseMatrix> {
        self.zip_with(other, "add", |a, b| a + b)
    }

    fn zip_with(
        &self,
        other: &DenseMatrix,
        what: &str,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<DenseMatrix> {
        if self.shape() != other.shape() {
            return Err(Error::usage(format!(
                "cannot {what} {}x{} and {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        Ok(DenseMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    /// Largest absolute entrywise difference; shapes must agree.
    pub fn max_abs_diff(&self, other: &DenseMatrix) -> Result<f64> {
        Ok(self.sub(other)?.max_abs())
    }

    pub fn select_columns(&self, idx: &[usize]) -> DenseMatrix {
        let mut data = Vec::with_capacity(self.rows * idx.len());
        for &j in idx {
            data.extend_from_slice(self.col(j));
        }
        DenseMatrix {
            rows: self.rows,
            cols: idx.len(),
            data,
        }
    }

    /// Horizontal concatenation; all parts must share the row count.
    pub fn hstack(parts: &[&DenseMatrix]) -> Result<DenseMatrix> {
        let rows = parts.first().map_or(0, |m| m.rows);
        let mut data = Vec::new();
        let mut cols = 0;
        for p in parts {
            if p.rows != rows {
                return Err(Error::usage(format!(
                    "hstack row mismatch: {} vs {rows}",
                    p.rows
                )));
            }
            data.extend_from_slice(&p.data);
            cols += p.cols;
        }
        Ok(DenseMatrix { rows, cols, data })
    }

    /// Max-abs deviation of `AᵀA` from the identity.
    pub fn orthonormality_error(&self) -> f64 {
        let g = matmul_tn(self, self).expect("gram of self is square");
        let mut worst: f64 = 0.0;
        for j in 0..g.cols {
            for i in 0..g.rows {
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((g.get(i, j) - target).abs());
            }
        }
        worst
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// `A · B`.
pub fn matmul(a: &DenseMatrix, b: &DenseMatrix) -> Result<DenseMatrix> {
    if a.cols != b.rows {
        return Err(Error::usage(format!(
            "matmul dimension mismatch: A is {}x{}, B is {}x{}",
            a.rows, a.cols, b.rows, b.cols
        )));
    }
    let mut c = DenseMatrix::zeros(a.rows, b.cols);
    for j in 0..b.cols {
        let cj = &mut c.data[j * a.rows..(j + 1) * a.rows];
        for k in 0..a.cols {
            let bkj = b.data[j * b.rows + k];
            if bkj != 0.0 {
                axpy(bkj, &a.data[k * a.rows..(k + 1) * a.rows], cj);
            }
        }
    }
    Ok(c)
}

/// `Aᵀ · B` without materializing the transpose.
pub fn matmul_tn(a: &DenseMatrix, b: &DenseMatrix) -> Result<DenseMatrix> {
    if a.rows != b.rows {
        return Err(Error::usage(format!(
            "matmul_tn dimension mismatch: A is {}x{}, B is {}x{}",
            a.rows, a.cols, b.rows, b.cols
        )));
    }
    Ok(DenseMatrix::from_fn(a.cols, b.cols, |i, j| {
        dot(a.col(i), b.col(j))
    }))
}

/// `A · Bᵀ` without materializing the transpose.
pub fn matmul_nt(a: &DenseMatrix, b: &DenseMatrix) -> Result<DenseMatrix> {
    if a.cols != b.cols {
        return Err(Error::usage(format!(
            "matmul_nt dimension mismatch: A is {}x{}, B is {}x{}",
            a.rows, a.cols, b.rows, b.cols
        )));
    }
    let mut c = DenseMatrix::zeros(a.rows, b.rows);
    for j in 0..b.rows {
        let cj = &mut c.data[j * a.rows..(j + 1) * a.rows];
        for k in 0..a.cols {
            let bjk = b.data[k * b.rows + j];
            if bjk != 0.0 {
                axpy(bjk, &a.data[k * a.rows..(k + 1) * a.rows], cj);
            }
        }
    }
    Ok(c)
}

/// `A · x`.
pub fn mat_vec(a: &DenseMatrix, x: &[f64]) -> Result<Vec<f64>> {
    if a.cols != x.len() {
        return Err(Error::usage(format!(
            "mat_vec dimension mismatch: A is {}x{}, x has {}",
            a.rows,
            a.cols,
            x.len()
        )));
    }
    let mut y = vec![0.0; a.rows];
    for (k, &xk) in x.iter().enumerate() {
        if xk != 0.0 {
            axpy(xk, a.col(k), &mut y);
        }
    }
    Ok(y)
}

/// `Aᵀ · x`.
pub fn mat_t_vec(a: &DenseMatrix, x: &[f64]) -> Result<Vec<f64>> {
    if a.rows != x.len() {
        return Err(Error::usage(format!(
            "mat_t_vec dimension mismatch: A is {}x{}, x has {}",
            a.rows,
            a.cols,
            x.len()
        )));
    }
    Ok((0..a.cols).map(|j| dot(a.col(j), x)).collect())
}

/// Thin singular value decomposition `A = U · diag(σ) · Vᵀ`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SvdResult {
    /// Left singular vectors, `rows × min(rows, cols)`.
    pub u: DenseMatrix,
    /// Non-increasing, non-negative.
    pub singular_values: Vec<f64>,
    /// Right singular vectors, `cols × min(rows, cols)`.
    pub v: DenseMatrix,
}

impl SvdResult {
    pub fn reconstruct(&self) -> DenseMatrix {
        let mut us = self.u.clone();
        for (j, &s) in self.singular_values.iter().enumerate() {
            for x in us.col_mut(j) {
                *x *= s;
            }
        }
        matmul_nt(&us, &self.v).expect("svd factors are conformant")
    }

    /// Check ordering, orthonormality and reconstruction against `a`.
    pub fn check_invariants(&self, a: &DenseMatrix) -> Result<()> {
        let sv = &self.singular_values;
        if sv.iter().any(|&s| s < 0.0 || !s.is_finite()) {
            return Err(Error::numeric("negative or non-finite singular value"));
        }
        if sv.windows(2).any(|w| w[0] < w[1]) {
            return Err(Error::numeric("singular values not sorted"));
        }
        let eu = self.u.orthonormality_error();
        let ev = self.v.orthonormality_error();
        if eu > ORTHO_TOL || ev > ORTHO_TOL {
            return Err(Error::numeric(format!(
                "singular vectors lost orthonormality (U {eu:.2e}, V {ev:.2e})"
            )));
        }
        let err = self.reconstruct().sub(a)?.frobenius_norm();
        let scale = a.frobenius_norm().max(1.0);
        if err > RECON_TOL * scale {
            return Err(Error::numeric(format!(
                "svd reconstruction error {err:.3e} exceeds {:.3e}",
                RECON_TOL * scale
            )));
        }
        Ok(())
    }
}

/// Thin SVD via one-sided Jacobi rotations.
pub fn thin_svd(a: &DenseMatrix) -> Result<SvdResult> {
    thin_svd_named(a, "matrix")
}

/// As [`thin_svd`], naming the matrix role in error messages.
pub fn thin_svd_named(a: &DenseMatrix, role: &str) -> Result<SvdResult> {
    if a.rows == 0 || a.cols == 0 {
        return Err(Error::usage(format!(
            "svd of empty {role} ({}x{})",
            a.rows, a.cols
        )));
    }
    if !a.is_finite() {
        return Err(Error::usage(format!("svd of {role} with non-finite entries")));
    }
    let res = if a.rows >= a.cols {
        jacobi_tall(a, role)?
    } else {
        let t = jacobi_tall(&a.transpose(), role)?;
        SvdResult {
            u: t.v,
            singular_values: t.singular_values,
            v: t.u,
        }
    };
    if cfg!(debug_assertions) {
        res.check_invariants(a).map_err(|e| e.context(role))?;
    }
    Ok(res)
}

fn jacobi_tall(a: &DenseMatrix, role: &str) -> Result<SvdResult> {
    let (m, n) = a.shape();
    let mut w = a.clone();
    let mut v = DenseMatrix::identity(n);
    let tol = (m as f64) * f64::EPSILON;

    let mut converged = n < 2;
    for _ in 0..MAX_JACOBI_SWEEPS {
        let mut rotated = false;
        for p in 0..n.saturating_sub(1) {
            for q in (p + 1)..n {
                let (alpha, beta, gamma) = {
                    let cp = w.col(p);
                    let cq = w.col(q);
                    (dot(cp, cp), dot(cq, cq), dot(cp, cq))
                };
                if gamma == 0.0 || gamma.abs() <= tol * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate_cols(&mut w, p, q, c, s);
                rotate_cols(&mut v, p, q, c, s);
            }
        }
        if !rotated {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::numeric(format!(
            "jacobi svd of {role} ({m}x{n}) did not converge in {MAX_JACOBI_SWEEPS} sweeps"
        )));
    }

    let norms: Vec<f64> = (0..n).map(|j| norm(w.col(j))).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| norms[j].total_cmp(&norms[i]).then(i.cmp(&j)));
    let sigma_max = norms[order[0]];

    let mut u = DenseMatrix::zeros(m, n);
    let mut vs = DenseMatrix::zeros(n, n);
    let mut sv = Vec::with_capacity(n);
    let mut accepted = 0usize;
    for (k, &j) in order.iter().enumerate() {
        let s = norms[j];
        vs.col_mut(k).copy_from_slice(v.col(j));
        let mut col: Vec<f64> = if s > 0.0 {
            w.col(j).iter().map(|x| x / s).collect()
        } else {
            vec![0.0; m]
        };
        let small = s <= 1e-8 * sigma_max;
        if small {
            // Columns at round-off level are re-orthogonalized explicitly.
            for _ in 0..2 {
                for prev in 0..accepted {
                    let pc = u.col(prev);
                    let proj = dot(pc, &col);
                    for (x, y) in col.iter_mut().zip(pc) {
                        *x -= proj * y;
                    }
                }
            }
            let nrm = norm(&col);
            if nrm > 0.5 {
                col.iter_mut().for_each(|x| *x /= nrm);
            } else {
                let basis = complete_orthonormal_basis(&u.select_columns(&(0..accepted).collect::<Vec<_>>()), accepted + 1);
                col = basis.col(accepted).to_vec();
            }
        }
        u.col_mut(k).copy_from_slice(&col);
        accepted += 1;
        sv.push(s);
    }
    Ok(SvdResult {
        u,
        singular_values: sv,
        v: vs,
    })
}

fn rotate_cols(m: &mut DenseMatrix, p: usize, q: usize, c: f64, s: f64) {
    let rows = m.rows;
    let (lo, hi) = m.data.split_at_mut(q * rows);
    let cp = &mut lo[p * rows..(p + 1) * rows];
    let cq = &mut hi[..rows];
    for (x, y) in cp.iter_mut().zip(cq.iter_mut()) {
        let xp = *x;
        let xq = *y;
        *x = c * xp - s * xq;
        *y = s * xp + c * xq;
    }
}

/// Orthonormal basis of `col(A)` by twice-repeated modified Gram–Schmidt.
///
/// A column whose residual norm after projection against the accepted
/// columns is `<= tol` is dropped, so the output width equals the numerical
/// rank at that tolerance.
pub fn orthonormal_columns(a: &DenseMatrix, tol: f64) -> DenseMatrix {
    let m = a.rows;
    let mut out: Vec<Vec<f64>> = Vec::new();
    for j in 0..a.cols {
        let mut col = a.col(j).to_vec();
        for _ in 0..2 {
            for q in &out {
                let proj = dot(q, &col);
                for (x, y) in col.iter_mut().zip(q) {
                    *x -= proj * y;
                }
            }
        }
        let nrm = norm(&col);
        if nrm > tol {
            col.iter_mut().for_each(|x| *x /= nrm);
            out.push(col);
        }
    }
    DenseMatrix::from_columns(m, &out).expect("columns share length")
}

/// Extend an orthonormal `q` (`m × k`) to `m × target` orthonormal columns.
///
/// New columns come from the standard basis vector with the largest
/// residual, which keeps the completion deterministic.
pub fn complete_orthonormal_basis(q: &DenseMatrix, target: usize) -> DenseMatrix {
    let m = q.rows;
    assert!(target <= m, "cannot complete to {target} columns in R^{m}");
    let mut cols: Vec<Vec<f64>> = (0..q.cols).map(|j| q.col(j).to_vec()).collect();
    while cols.len() < target {
        let mut best: Option<(f64, Vec<f64>)> = None;
        for i in 0..m {
            let mut e = vec![0.0; m];
            e[i] = 1.0;
            for _ in 0..2 {
                for c in &cols {
                    let proj = dot(c, &e);
                    for (x, y) in e.iter_mut().zip(c) {
                        *x -= proj * y;
                    }
                }
            }
            let nrm = norm(&e);
            if best.as_ref().is_none_or(|(b, _)| nrm > *b) {
                best = Some((nrm, e));
            }
        }
        let (nrm, mut e) = best.expect("m > 0");
        e.iter_mut().for_each(|x| *x /= nrm);
        cols.push(e);
    }
    DenseMatrix::from_columns(m, &cols).expect("columns share length")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracles::naive;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rows: usize, cols: usize, seed: u64) -> DenseMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DenseMatrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn identity_times_a_is_a() {
        let a = random(3, 4, 1);
        let c = matmul(&DenseMatrix::identity(3), &a).unwrap();
        assert_eq!(c, a);
    }

    #[test]
    fn times_zero_is_zero() {
        let a = random(3, 4, 2);
        let c = matmul(&a, &DenseMatrix::zeros(4, 2)).unwrap();
        assert_eq!(c, DenseMatrix::zeros(3, 2));
    }

    #[test]
    fn matmul_matches_triple_loop() {
        let a = random(4, 3, 3);
        let b = random(3, 2, 4);
        let c = matmul(&a, &b).unwrap();
        let oracle = naive::matmul(&a, &b);
        assert!(c.max_abs_diff(&oracle).unwrap() <= 1e-12);
        let tn = matmul_tn(&a.transpose(), &b).unwrap();
        assert!(tn.max_abs_diff(&oracle).unwrap() <= 1e-12);
        let nt = matmul_nt(&a, &b.transpose()).unwrap();
        assert!(nt.max_abs_diff(&oracle).unwrap() <= 1e-12);
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let err = matmul(&DenseMatrix::zeros(2, 3), &DenseMatrix::zeros(2, 3)).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("2x3"), "{msg}");
        assert!(matches!(err, Error::Usage(_)));
    }

    #[test]
    fn svd_of_diagonal() {
        let a = DenseMatrix::from_rows(&[vec![3.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let s = thin_svd(&a).unwrap();
        assert_eq!(s.singular_values, vec![3.0, 1.0]);
    }

    #[test]
    fn svd_of_identity() {
        let s = thin_svd(&DenseMatrix::identity(4)).unwrap();
        assert_eq!(s.singular_values, vec![1.0; 4]);
        let uvt = matmul_nt(&s.u, &s.v).unwrap();
        assert!(uvt.orthonormality_error() < 1e-12);
    }

    #[test]
    fn svd_matches_gram_eigenvalues() {
        let a = random(6, 3, 5);
        let s = thin_svd(&a).unwrap();
        s.check_invariants(&a).unwrap();
        let recon = s.reconstruct().sub(&a).unwrap().frobenius_norm();
        assert!(recon <= 1e-9 * a.frobenius_norm());
        let mut eig = naive::symmetric_eigenvalues(&naive::matmul(&a.transpose(), &a));
        eig.sort_by(|x, y| y.total_cmp(x));
        for (sv, ev) in s.singular_values.iter().zip(&eig) {
            assert!((sv * sv - ev).abs() <= 1e-8 * ev.abs().max(1e-300), "{sv} {ev}");
        }
    }

    #[test]
    fn svd_handles_rank_deficiency_and_wide_input() {
        let col = random(5, 1, 6);
        let a = DenseMatrix::hstack(&[&col, &col, &col.scaled(2.0)]).unwrap();
        let s = thin_svd(&a).unwrap();
        s.check_invariants(&a).unwrap();
        assert!(s.singular_values[1] < 1e-12);
        let w = random(2, 7, 7);
        let sw = thin_svd(&w).unwrap();
        sw.check_invariants(&w).unwrap();
        assert_eq!(sw.u.shape(), (2, 2));
        assert_eq!(sw.v.shape(), (7, 2));
        let z = DenseMatrix::zeros(3, 2);
        thin_svd(&z).unwrap().check_invariants(&z).unwrap();
    }

    #[test]
    fn svd_rejects_non_finite_and_empty() {
        let mut a = DenseMatrix::zeros(2, 2);
        a.set(0, 0, f64::NAN);
        assert!(matches!(thin_svd(&a), Err(Error::Usage(_))));
        assert!(matches!(thin_svd(&DenseMatrix::zeros(0, 2)), Err(Error::Usage(_))));
        assert!(DenseMatrix::from_col_major(1, 1, vec![f64::INFINITY]).is_err());
    }

    #[test]
    fn orthonormal_input_is_kept() {
        let q = thin_svd(&random(6, 3, 8)).unwrap().u;
        let out = orthonormal_columns(&q, 1e-10);
        assert_eq!(out.cols(), 3);
        assert!(out.orthonormality_error() <= 1e-12);
        for j in 0..3 {
            assert!((dot(out.col(j), q.col(j)).abs() - 1.0).abs() <= 1e-12);
        }
    }

    #[test]
    fn duplicate_columns_collapse() {
        let c = random(4, 1, 9);
        let a = DenseMatrix::hstack(&[&c, &c]).unwrap();
        assert_eq!(orthonormal_columns(&a, 1e-10).cols(), 1);
    }

    #[test]
    fn orthonormal_columns_span_matches_svd_projector() {
        let a = random(5, 3, 10);
        let q = orthonormal_columns(&a, 1e-10);
        let u = thin_svd(&a).unwrap().u;
        let p1 = matmul_nt(&q, &q).unwrap();
        let p2 = naive::matmul(&u, &u.transpose());
        assert!(p1.sub(&p2).unwrap().frobenius_norm() <= 1e-9);
    }

    #[test]
    fn basis_completion_is_orthonormal() {
        let q = orthonormal_columns(&random(5, 2, 11), 1e-10);
        let full = complete_orthonormal_basis(&q, 5);
        assert!(full.orthonormality_error() < 1e-12);
        assert_eq!(full.col(0), q.col(0));
    }

    mod props {
        use super::super::*;
        use proptest::prelude::*;

        fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = DenseMatrix> {
            proptest::collection::vec(-10.0f64..10.0, rows * cols)
                .prop_map(move |v| DenseMatrix::from_col_major(rows, cols, v).unwrap())
        }

        fn dims() -> impl Strategy<Value = (usize, usize, usize, usize)> {
            (1usize..7, 1usize..7, 1usize..7, 1usize..7)
        }

        proptest! {
            #[test]
            fn matmul_is_associative((m, n, p, q) in dims(), seed in any::<u64>()) {
                let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(seed);
                let mut gen = |r, c| DenseMatrix::from_fn(r, c, |_, _| rand::Rng::random_range(&mut rng, -3.0..3.0));
                let a = gen(m, n);
                let b = gen(n, p);
                let c = gen(p, q);
                let left = matmul(&matmul(&a, &b).unwrap(), &c).unwrap();
                let right = matmul(&a, &matmul(&b, &c).unwrap()).unwrap();
                let err = left.sub(&right).unwrap().frobenius_norm();
                prop_assert!(err <= 1e-10 * left.frobenius_norm().max(1.0));
            }

            #[test]
            fn transpose_has_same_singular_values(a in (1usize..9, 1usize..9).prop_flat_map(|(r, c)| matrix(r, c))) {
                let s1 = thin_svd(&a).unwrap();
                let s2 = thin_svd(&a.transpose()).unwrap();
                prop_assert_eq!(s1.singular_values.len(), s2.singular_values.len());
                for (x, y) in s1.singular_values.iter().zip(&s2.singular_values) {
                    prop_assert!((x - y).abs() <= 1e-10 * s1.singular_values[0].max(1.0));
                }
            }

            #[test]
            fn svd_invariants_hold(a in (1usize..12, 1usize..12).prop_flat_map(|(r, c)| matrix(r, c))) {
                let s = thin_svd(&a).unwrap();
                prop_assert!(s.check_invariants(&a).is_ok());
            }
        }
    }
}
