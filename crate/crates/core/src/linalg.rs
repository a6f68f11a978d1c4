//! Small dense tensors for per-point kinematics and a CSR matrix with a
//! preconditioned conjugate-gradient solver for the kinematic mass system.
//!
//! Tensors are stored as `[[f64; 3]; 3]` and carry the active dimension `d`
//! separately; entries outside the leading `d x d` block are ignored and kept
//! at zero by every routine here.

use crate::error::{HydroError, Result};

pub type Mat3 = [[f64; 3]; 3];
pub type Vec3 = [f64; 3];

pub const ZERO: Mat3 = [[0.0; 3]; 3];

pub fn identity(d: usize) -> Mat3 {
    let mut m = ZERO;
    for (i, row) in m.iter_mut().enumerate().take(d) {
        row[i] = 1.0;
    }
    m
}

pub fn det(d: usize, m: &Mat3) -> f64 {
    match d {
        1 => m[0][0],
        2 => m[0][0] * m[1][1] - m[0][1] * m[1][0],
        3 => {
            m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
                - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
                + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
        }
        _ => panic!("unsupported dimension {d}"),
    }
}

/// Cofactor matrix, `cof(m) = det(m) m^{-T}`, computed without division.
pub fn cofactor(d: usize, m: &Mat3) -> Mat3 {
    let mut c = ZERO;
    match d {
        1 => c[0][0] = 1.0,
        2 => {
            c[0][0] = m[1][1];
            c[0][1] = -m[1][0];
            c[1][0] = -m[0][1];
            c[1][1] = m[0][0];
        }
        3 => {
            for i in 0..3 {
                for j in 0..3 {
                    let (i1, i2) = ((i + 1) % 3, (i + 2) % 3);
                    let (j1, j2) = ((j + 1) % 3, (j + 2) % 3);
                    c[i][j] = m[i1][j1] * m[i2][j2] - m[i1][j2] * m[i2][j1];
                }
            }
        }
        _ => panic!("unsupported dimension {d}"),
    }
    c
}

pub fn transpose(d: usize, m: &Mat3) -> Mat3 {
    let mut t = ZERO;
    for i in 0..d {
        for j in 0..d {
            t[i][j] = m[j][i];
        }
    }
    t
}

/// Inverse, or `None` when the determinant vanishes.
pub fn inverse(d: usize, m: &Mat3) -> Option<Mat3> {
    let dt = det(d, m);
    if dt == 0.0 || !dt.is_finite() {
        return None;
    }
    let c = cofactor(d, m);
    let mut inv = ZERO;
    for i in 0..d {
        for j in 0..d {
            inv[i][j] = c[j][i] / dt;
        }
    }
    Some(inv)
}

pub fn matmul(d: usize, a: &Mat3, b: &Mat3) -> Mat3 {
    let mut c = ZERO;
    for i in 0..d {
        for j in 0..d {
            let mut s = 0.0;
            for k in 0..d {
                s += a[i][k] * b[k][j];
            }
            c[i][j] = s;
        }
    }
    c
}

pub fn matvec(d: usize, a: &Mat3, x: &Vec3) -> Vec3 {
    let mut y = [0.0; 3];
    for i in 0..d {
        for k in 0..d {
            y[i] += a[i][k] * x[k];
        }
    }
    y
}

pub fn dot(d: usize, a: &Vec3, b: &Vec3) -> f64 {
    (0..d).map(|i| a[i] * b[i]).sum()
}

pub fn norm(d: usize, a: &Vec3) -> f64 {
    dot(d, a, a).sqrt()
}

pub fn frobenius(d: usize, m: &Mat3) -> f64 {
    let mut s = 0.0;
    for row in m.iter().take(d) {
        for v in row.iter().take(d) {
            s += v * v;
        }
    }
    s.sqrt()
}

pub fn trace(d: usize, m: &Mat3) -> f64 {
    (0..d).map(|i| m[i][i]).sum()
}

/// Double contraction `a : b = a_ij b_ij`.
pub fn ddot(d: usize, a: &Mat3, b: &Mat3) -> f64 {
    let mut s = 0.0;
    for i in 0..d {
        for j in 0..d {
            s += a[i][j] * b[i][j];
        }
    }
    s
}

/// Eigen-decomposition of a symmetric matrix.
///
/// Returns eigenvalues in ascending order and the matching unit eigenvectors
/// stored as columns (`vecs[i][k]` is component `i` of eigenvector `k`).
pub fn sym_eigen(d: usize, m: &Mat3) -> (Vec3, Mat3) {
    match d {
        1 => ([m[0][0], 0.0, 0.0], identity(1)),
        2 => sym_eigen_2(m),
        3 => sym_eigen_jacobi(m),
        _ => panic!("unsupported dimension {d}"),
    }
}

fn sym_eigen_2(m: &Mat3) -> (Vec3, Mat3) {
    let (a, b, c) = (m[0][0], 0.5 * (m[0][1] + m[1][0]), m[1][1]);
    if b == 0.0 {
        let mut vecs = ZERO;
        if a <= c {
            vecs[0][0] = 1.0;
            vecs[1][1] = 1.0;
            return ([a, c, 0.0], vecs);
        }
        vecs[1][0] = 1.0;
        vecs[0][1] = 1.0;
        return ([c, a, 0.0], vecs);
    }
    // Rotation angle that diagonalizes [[a, b], [b, c]].
    let theta = 0.5 * (2.0 * b).atan2(a - c);
    let (s, co) = theta.sin_cos();
    // Columns (co, s) and (-s, co) are eigenvectors.
    let l1 = a * co * co + 2.0 * b * s * co + c * s * s;
    let l2 = a * s * s - 2.0 * b * s * co + c * co * co;
    let mut vecs = ZERO;
    if l1 <= l2 {
        vecs[0][0] = co;
        vecs[1][0] = s;
        vecs[0][1] = -s;
        vecs[1][1] = co;
        ([l1, l2, 0.0], vecs)
    } else {
        vecs[0][0] = -s;
        vecs[1][0] = co;
        vecs[0][1] = co;
        vecs[1][1] = s;
        ([l2, l1, 0.0], vecs)
    }
}

fn sym_eigen_jacobi(m: &Mat3) -> (Vec3, Mat3) {
    let mut a = *m;
    for i in 0..3 {
        for j in (i + 1)..3 {
            let s = 0.5 * (a[i][j] + a[j][i]);
            a[i][j] = s;
            a[j][i] = s;
        }
    }
    let mut v = identity(3);
    for _sweep in 0..50 {
        let off = a[0][1].abs() + a[0][2].abs() + a[1][2].abs();
        let scale = a[0][0].abs() + a[1][1].abs() + a[2][2].abs();
        if off <= 1e-300 || off <= f64::EPSILON * 1e-3 * scale {
            break;
        }
        for p in 0..3 {
            for q in (p + 1)..3 {
                if a[p][q] == 0.0 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..3 {
                    let akp = a[k][p];
                    let akq = a[k][q];
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..3 {
                    let apk = a[p][k];
                    let aqk = a[q][k];
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
                for row in v.iter_mut() {
                    let vkp = row[p];
                    let vkq = row[q];
                    row[p] = c * vkp - s * vkq;
                    row[q] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut order = [0usize, 1, 2];
    order.sort_by(|&i, &j| a[i][i].total_cmp(&a[j][j]));
    let mut vals = [0.0; 3];
    let mut vecs = ZERO;
    for (k, &src) in order.iter().enumerate() {
        vals[k] = a[src][src];
        for i in 0..3 {
            vecs[i][k] = v[i][src];
        }
    }
    (vals, vecs)
}

/// Smallest singular value of `m`.
pub fn min_singular_value(d: usize, m: &Mat3) -> f64 {
    let mtm = matmul(d, &transpose(d, m), m);
    let (vals, _) = sym_eigen(d, &mtm);
    vals[0].max(0.0).sqrt()
}

/// Compressed sparse row matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct CsrMatrix {
    pub n: usize,
    pub row_ptr: Vec<usize>,
    pub col_idx: Vec<usize>,
    pub vals: Vec<f64>,
}

impl CsrMatrix {
    /// Empty matrix with a fixed sparsity pattern. `pattern[i]` must be sorted.
    pub fn from_pattern(pattern: &[Vec<usize>]) -> Self {
        let n = pattern.len();
        let mut row_ptr = Vec::with_capacity(n + 1);
        row_ptr.push(0);
        let mut col_idx = Vec::new();
        for row in pattern {
            col_idx.extend_from_slice(row);
            row_ptr.push(col_idx.len());
        }
        let nnz = col_idx.len();
        Self {
            n,
            row_ptr,
            col_idx,
            vals: vec![0.0; nnz],
        }
    }

    fn position(&self, i: usize, j: usize) -> Option<usize> {
        let cols = &self.col_idx[self.row_ptr[i]..self.row_ptr[i + 1]];
        cols.binary_search(&j).ok().map(|p| self.row_ptr[i] + p)
    }

    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let p = self
            .position(i, j)
            .unwrap_or_else(|| panic!("entry ({i}, {j}) outside sparsity pattern"));
        self.vals[p] += v;
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.position(i, j).map_or(0.0, |p| self.vals[p])
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        self.mul_vec_into(x, &mut y);
        y
    }

    pub fn mul_vec_into(&self, x: &[f64], y: &mut [f64]) {
        for (i, yi) in y.iter_mut().enumerate() {
            let mut s = 0.0;
            for p in self.row_ptr[i]..self.row_ptr[i + 1] {
                s += self.vals[p] * x[self.col_idx[p]];
            }
            *yi = s;
        }
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.get(i, i)).collect()
    }

    /// Replace row and column `i` by the identity row/column.
    pub fn eliminate(&mut self, i: usize) {
        for p in self.row_ptr[i]..self.row_ptr[i + 1] {
            let j = self.col_idx[p];
            self.vals[p] = if j == i { 1.0 } else { 0.0 };
            if j != i {
                if let Some(q) = self.position(j, i) {
                    self.vals[q] = 0.0;
                }
            }
        }
    }

    /// Largest relative asymmetry `|a_ij - a_ji| / max|a|`.
    pub fn asymmetry(&self) -> f64 {
        let scale = self.vals.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if scale == 0.0 {
            return 0.0;
        }
        let mut worst = 0.0f64;
        for i in 0..self.n {
            for p in self.row_ptr[i]..self.row_ptr[i + 1] {
                let j = self.col_idx[p];
                worst = worst.max((self.vals[p] - self.get(j, i)).abs());
            }
        }
        worst / scale
    }
}

/// Preconditioners for [`pcg`].
#[derive(Clone, Debug)]
pub enum Preconditioner {
    /// Inverse of the matrix diagonal.
    Jacobi(Vec<f64>),
    /// Inverses of the `b x b` diagonal blocks of consecutive unknowns
    /// (one block per mesh node for interleaved vector fields).
    Block { size: usize, inv: Vec<Mat3> },
}

impl Preconditioner {
    pub fn jacobi(a: &CsrMatrix) -> Self {
        Self::Jacobi(a.diagonal().iter().map(|&v| 1.0 / v).collect())
    }

    pub fn block(a: &CsrMatrix, size: usize) -> Result<Self> {
        assert!(size >= 1 && size <= 3 && a.n % size == 0);
        let mut inv = Vec::with_capacity(a.n / size);
        for b in 0..a.n / size {
            let mut m = ZERO;
            for i in 0..size {
                for j in 0..size {
                    m[i][j] = a.get(b * size + i, b * size + j);
                }
            }
            inv.push(inverse(size, &m).ok_or_else(|| {
                HydroError::Numerical(format!("singular diagonal block {b} in preconditioner"))
            })?);
        }
        Ok(Self::Block { size, inv })
    }

    fn apply(&self, r: &[f64], z: &mut [f64]) {
        match self {
            Self::Jacobi(inv) => {
                for ((zi, ri), di) in z.iter_mut().zip(r).zip(inv) {
                    *zi = ri * di;
                }
            }
            Self::Block { size, inv } => {
                let s = *size;
                for (b, m) in inv.iter().enumerate() {
                    for i in 0..s {
                        let mut acc = 0.0;
                        for j in 0..s {
                            acc += m[i][j] * r[b * s + j];
                        }
                        z[b * s + i] = acc;
                    }
                }
            }
        }
    }
}

/// Outcome of a converged [`pcg`] solve.
#[derive(Clone, Copy, Debug)]
pub struct SolveStats {
    pub iterations: usize,
    pub relative_residual: f64,
}

fn vdot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Preconditioned conjugate gradients for SPD `a`, starting from zero.
///
/// Converges when the preconditioned residual satisfies
/// `sqrt(r.P^{-1}r) <= rel_tol * sqrt(b.P^{-1}b)`, which weighs rows by
/// their own scale instead of letting large rows dominate.
pub fn pcg(
    a: &CsrMatrix,
    b: &[f64],
    precond: &Preconditioner,
    rel_tol: f64,
    max_iter: usize,
) -> Result<(Vec<f64>, SolveStats)> {
    let n = a.n;
    let mut x = vec![0.0; n];
    let b_norm = vdot(b, b).sqrt();
    if b_norm == 0.0 {
        return Ok((
            x,
            SolveStats {
                iterations: 0,
                relative_residual: 0.0,
            },
        ));
    }
    if !b_norm.is_finite() {
        return Err(HydroError::NonFinite("mass solve right-hand side".into()));
    }
    let mut r = b.to_vec();
    let mut z = vec![0.0; n];
    precond.apply(&r, &mut z);
    let mut p = z.clone();
    let mut ap = vec![0.0; n];
    let mut rz = vdot(&r, &z);
    let b_pnorm = rz.max(0.0).sqrt();
    if !(b_pnorm > 0.0) {
        return Err(HydroError::Numerical("preconditioner is not positive definite".into()));
    }
    let mut res = 1.0;
    for it in 0..max_iter {
        a.mul_vec_into(&p, &mut ap);
        let pap = vdot(&p, &ap);
        if pap <= 0.0 {
            return Err(HydroError::Numerical(format!(
                "matrix not positive definite (p.Ap = {pap:e} at iteration {it})"
            )));
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        precond.apply(&r, &mut z);
        let rz_new = vdot(&r, &z);
        res = rz_new.max(0.0).sqrt() / b_pnorm;
        if res <= rel_tol {
            return Ok((
                x,
                SolveStats {
                    iterations: it + 1,
                    relative_residual: res,
                },
            ));
        }
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    Err(HydroError::SolverDiverged {
        iterations: max_iter,
        residual: res,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn inverse_times_matrix_is_identity() {
        let m = [[2.0, 1.0, 0.5], [0.3, 3.0, -1.0], [0.0, 0.2, 1.5]];
        for d in 2..=3 {
            let inv = inverse(d, &m).unwrap();
            let p = matmul(d, &m, &inv);
            for i in 0..d {
                for j in 0..d {
                    assert_abs_diff_eq!(p[i][j], if i == j { 1.0 } else { 0.0 }, epsilon = 1e-14);
                }
            }
        }
    }

    #[test]
    fn cofactor_is_det_times_inverse_transpose() {
        let m = [[1.5, -0.2, 0.1], [0.4, 0.9, 0.3], [0.2, 0.1, 2.0]];
        for d in 2..=3 {
            let c = cofactor(d, &m);
            let inv = inverse(d, &m).unwrap();
            let dt = det(d, &m);
            for i in 0..d {
                for j in 0..d {
                    assert_abs_diff_eq!(c[i][j], dt * inv[j][i], epsilon = 1e-14);
                }
            }
        }
    }

    proptest! {
        #[test]
        fn eigen_reconstructs_symmetric(a in -5.0f64..5.0, b in -5.0f64..5.0, c in -5.0f64..5.0,
                                        e in -5.0f64..5.0, f in -5.0f64..5.0, g in -5.0f64..5.0) {
            for d in 2..=3 {
                let m = [[a, b, c], [b, e, f], [c, f, g]];
                let (vals, vecs) = sym_eigen(d, &m);
                for k in 1..d {
                    prop_assert!(vals[k - 1] <= vals[k]);
                }
                for i in 0..d {
                    for j in 0..d {
                        let r: f64 = (0..d).map(|k| vecs[i][k] * vals[k] * vecs[j][k]).sum();
                        prop_assert!((r - m[i][j]).abs() < 1e-12, "d={} ({},{}) {} vs {}", d, i, j, r, m[i][j]);
                    }
                }
            }
        }
    }

    fn laplacian_1d(n: usize) -> CsrMatrix {
        let pattern: Vec<Vec<usize>> = (0..n)
            .map(|i| (i.saturating_sub(1)..(i + 2).min(n)).collect())
            .collect();
        let mut a = CsrMatrix::from_pattern(&pattern);
        for i in 0..n {
            a.add(i, i, 2.0 + 0.01 * i as f64);
            if i > 0 {
                a.add(i, i - 1, -1.0);
                a.add(i - 1, i, -1.0);
            }
        }
        a
    }

    #[test]
    fn pcg_solves_spd_system() {
        let a = laplacian_1d(50);
        let x_true: Vec<f64> = (0..50).map(|i| (i as f64 * 0.3).sin()).collect();
        let b = a.mul_vec(&x_true);
        for pre in [Preconditioner::jacobi(&a), Preconditioner::block(&a, 2).unwrap()] {
            let (x, stats) = pcg(&a, &b, &pre, 1e-13, 1000).unwrap();
            assert!(stats.relative_residual <= 1e-13);
            for (u, v) in x.iter().zip(&x_true) {
                assert_abs_diff_eq!(u, v, epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn pcg_zero_rhs_gives_zero() {
        let a = laplacian_1d(10);
        let (x, stats) = pcg(&a, &[0.0; 10], &Preconditioner::jacobi(&a), 1e-12, 10).unwrap();
        assert_eq!(stats.iterations, 0);
        assert!(x.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn eliminate_keeps_symmetry() {
        let mut a = laplacian_1d(6);
        a.eliminate(2);
        assert_eq!(a.get(2, 2), 1.0);
        assert_eq!(a.get(1, 2), 0.0);
        assert_eq!(a.get(2, 3), 0.0);
        assert_eq!(a.asymmetry(), 0.0);
    }
}
