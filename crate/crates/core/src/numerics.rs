//! Dense linear algebra and statistics used throughout the crate.
//!
//! Everything here is small-matrix code: covariance of sample sets, a cyclic
//! Jacobi eigensolver for symmetric matrices, Cholesky-based inversion and a
//! handful of vector helpers.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row-major dense matrix of finite `f64` entries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    /// Builds a matrix from row-major entries, rejecting non-finite values.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch {
                expected: rows * cols,
                actual: data.len(),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("matrix entries must be finite".into()));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(Error::DimensionMismatch {
                    expected: cols,
                    actual: r.len(),
                });
            }
            data.extend_from_slice(r);
        }
        Self::from_vec(rows.len(), cols, data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn column(&self, c: usize) -> Vec<f64> {
        (0..self.rows).map(|r| self[(r, c)]).collect()
    }

    pub fn transpose(&self) -> Matrix {
        let mut t = Matrix::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                t[(c, r)] = self[(r, c)];
            }
        }
        t
    }

    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(Error::DimensionMismatch {
                expected: self.cols,
                actual: other.rows,
            });
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == 0.0 {
                    continue;
                }
                let orow = other.row(k);
                let dst = out.row_mut(i);
                for (d, &b) in dst.iter_mut().zip(orow) {
                    *d += a * b;
                }
            }
        }
        Ok(out)
    }

    pub fn matvec(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.cols {
            return Err(Error::DimensionMismatch {
                expected: self.cols,
                actual: v.len(),
            });
        }
        Ok((0..self.rows).map(|r| dot(self.row(r), v)).collect())
    }

    pub fn trace(&self) -> f64 {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).sum()
    }

    /// Largest absolute asymmetry `|a_ij - a_ji|`; `None` for non-square input.
    pub fn asymmetry(&self) -> Option<f64> {
        if self.rows != self.cols {
            return None;
        }
        let mut worst = 0.0_f64;
        for i in 0..self.rows {
            for j in (i + 1)..self.cols {
                worst = worst.max((self[(i, j)] - self[(j, i)]).abs());
            }
        }
        Some(worst)
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }
}

impl std::ops::Index<(usize, usize)> for Matrix {
    type Output = f64;

    fn index(&self, (r, c): (usize, usize)) -> &f64 {
        &self.data[r * self.cols + c]
    }
}

impl std::ops::IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut f64 {
        &mut self.data[r * self.cols + c]
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm_l2(v: &[f64]) -> f64 {
    dot(v, v).sqrt()
}

pub fn norm_linf(v: &[f64]) -> f64 {
    v.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
}

pub fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.iter().sum::<f64>() / values.len() as f64
}

/// Population standard deviation (divisor n).
pub fn std_dev(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let m = mean(values);
    (values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / values.len() as f64).sqrt()
}

/// Column means of an n × d sample matrix.
pub fn column_means(data: &Matrix) -> Vec<f64> {
    let mut mu = vec![0.0; data.cols()];
    for r in 0..data.rows() {
        for (m, v) in mu.iter_mut().zip(data.row(r)) {
            *m += v;
        }
    }
    let n = data.rows().max(1) as f64;
    mu.iter_mut().for_each(|m| *m /= n);
    mu
}

/// Mean-centred population covariance (divisor n) of an n × d sample matrix.
pub fn covariance(data: &Matrix) -> Result<Matrix> {
    let n = data.rows();
    if n < 2 {
        return Err(Error::DegenerateInput(format!(
            "covariance needs at least 2 samples, got {n}"
        )));
    }
    let d = data.cols();
    let mu = column_means(data);
    let mut cov = Matrix::zeros(d, d);
    let mut centred = vec![0.0; d];
    for r in 0..n {
        for ((c, v), m) in centred.iter_mut().zip(data.row(r)).zip(&mu) {
            *c = v - m;
        }
        for i in 0..d {
            let ci = centred[i];
            for j in i..d {
                cov[(i, j)] += ci * centred[j];
            }
        }
    }
    for i in 0..d {
        for j in i..d {
            let v = cov[(i, j)] / n as f64;
            cov[(i, j)] = v;
            cov[(j, i)] = v;
        }
    }
    Ok(cov)
}

/// Eigenpairs of a symmetric matrix, ordered by descending |eigenvalue|.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EigenDecomposition {
    pub eigenvalues: Vec<f64>,
    /// `eigenvectors[i]` pairs with `eigenvalues[i]`.
    pub eigenvectors: Vec<Vec<f64>>,
}

impl EigenDecomposition {
    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    /// Σ λ_i q_i q_iᵀ.
    pub fn reconstruct(&self) -> Matrix {
        let d = self.dim();
        let mut m = Matrix::zeros(d, d);
        for (lambda, q) in self.eigenvalues.iter().zip(&self.eigenvectors) {
            for i in 0..d {
                for j in 0..d {
                    m[(i, j)] += lambda * q[i] * q[j];
                }
            }
        }
        m
    }
}

const JACOBI_TOL: f64 = 1e-12;
const JACOBI_MAX_SWEEPS: usize = 100;
const SYMMETRY_TOL: f64 = 1e-10;

/// Cyclic Jacobi eigendecomposition of a symmetric matrix.
///
/// Each eigenvector's largest-magnitude entry is made positive (first index
/// wins ties) so the output is deterministic.
pub fn symmetric_eig(m: &Matrix) -> Result<EigenDecomposition> {
    let n = m.rows();
    let asym = m.asymmetry().ok_or_else(|| {
        Error::ContractViolation(format!("matrix is {}x{}, not square", m.rows(), m.cols()))
    })?;
    let scale = m.max_abs().max(1.0);
    if asym > SYMMETRY_TOL * scale {
        return Err(Error::ContractViolation(format!(
            "matrix is not symmetric (max asymmetry {asym:e})"
        )));
    }
    if n == 0 {
        return Ok(EigenDecomposition {
            eigenvalues: vec![],
            eigenvectors: vec![],
        });
    }

    let mut a = m.clone();
    // symmetrize exactly so rotations see one consistent matrix
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (a[(i, j)] + a[(j, i)]);
            a[(i, j)] = v;
            a[(j, i)] = v;
        }
    }
    let mut v = Matrix::identity(n);
    let frob = a.as_slice().iter().map(|x| x * x).sum::<f64>().sqrt();
    let target = JACOBI_TOL * frob.max(f64::MIN_POSITIVE);

    let mut converged = false;
    for _ in 0..JACOBI_MAX_SWEEPS {
        let off = off_diagonal_norm(&a);
        if off <= target {
            converged = true;
            break;
        }
        for p in 0..n - 1 {
            for q in (p + 1)..n {
                let apq = a[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                rotate(&mut a, &mut v, p, q, c, s);
            }
        }
    }
    if !converged && off_diagonal_norm(&a) > target.max(1e-9 * frob) {
        return Err(Error::Numeric("Jacobi iteration did not converge".into()));
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| {
        a[(j, j)]
            .abs()
            .partial_cmp(&a[(i, i)].abs())
            .unwrap_or(std::cmp::Ordering::Equal)
    });

    let mut eigenvalues = Vec::with_capacity(n);
    let mut eigenvectors = Vec::with_capacity(n);
    for i in order {
        eigenvalues.push(a[(i, i)]);
        let mut q = v.column(i);
        let mut pivot = 0;
        for (k, x) in q.iter().enumerate() {
            if x.abs() > q[pivot].abs() {
                pivot = k;
            }
        }
        if q[pivot] < 0.0 {
            q.iter_mut().for_each(|x| *x = -*x);
        }
        eigenvectors.push(q);
    }
    Ok(EigenDecomposition {
        eigenvalues,
        eigenvectors,
    })
}

fn off_diagonal_norm(a: &Matrix) -> f64 {
    let n = a.rows();
    let mut s = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                s += a[(i, j)] * a[(i, j)];
            }
        }
    }
    s.sqrt()
}

// A ← Jᵀ A J, V ← V J for the (p, q) plane rotation.
fn rotate(a: &mut Matrix, v: &mut Matrix, p: usize, q: usize, c: f64, s: f64) {
    let n = a.rows();
    for k in 0..n {
        let akp = a[(k, p)];
        let akq = a[(k, q)];
        a[(k, p)] = c * akp - s * akq;
        a[(k, q)] = s * akp + c * akq;
    }
    for k in 0..n {
        let apk = a[(p, k)];
        let aqk = a[(q, k)];
        a[(p, k)] = c * apk - s * aqk;
        a[(q, k)] = s * apk + c * aqk;
    }
    a[(p, q)] = 0.0;
    a[(q, p)] = 0.0;
    for k in 0..n {
        let vkp = v[(k, p)];
        let vkq = v[(k, q)];
        v[(k, p)] = c * vkp - s * vkq;
        v[(k, q)] = s * vkp + c * vkq;
    }
}

/// Lower-triangular Cholesky factor of a symmetric positive-definite matrix.
pub fn cholesky(m: &Matrix) -> Result<Matrix> {
    let n = m.rows();
    if m.cols() != n {
        return Err(Error::ContractViolation(
            "cholesky needs a square matrix".into(),
        ));
    }
    let mut l = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let mut sum = m[(i, j)];
            for k in 0..j {
                sum -= l[(i, k)] * l[(j, k)];
            }
            if i == j {
                if sum <= 0.0 || !sum.is_finite() {
                    return Err(Error::Numeric(format!(
                        "matrix is not positive definite (pivot {i} = {sum:e})"
                    )));
                }
                l[(i, i)] = sum.sqrt();
            } else {
                l[(i, j)] = sum / l[(j, j)];
            }
        }
    }
    Ok(l)
}

/// Inverse of a symmetric positive-definite matrix via its Cholesky factor.
pub fn spd_inverse(m: &Matrix) -> Result<Matrix> {
    let n = m.rows();
    let l = cholesky(m)?;
    let mut inv = Matrix::zeros(n, n);
    let mut col = vec![0.0; n];
    for e in 0..n {
        // forward solve L y = e_e
        for i in 0..n {
            let mut s = if i == e { 1.0 } else { 0.0 };
            for k in 0..i {
                s -= l[(i, k)] * col[k];
            }
            col[i] = s / l[(i, i)];
        }
        // back solve Lᵀ x = y
        for i in (0..n).rev() {
            let mut s = col[i];
            for k in (i + 1)..n {
                s -= l[(k, i)] * col[k];
            }
            col[i] = s / l[(i, i)];
        }
        for i in 0..n {
            inv[(i, e)] = col[i];
        }
    }
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (inv[(i, j)] + inv[(j, i)]);
            inv[(i, j)] = v;
            inv[(j, i)] = v;
        }
    }
    Ok(inv)
}

/// Numerically stable softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Index of the largest entry, first index on ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Matrix {
        let data = (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect();
        Matrix::from_vec(rows, cols, data).unwrap()
    }

    fn random_symmetric(rng: &mut ChaCha8Rng, n: usize) -> Matrix {
        let mut m = random_matrix(rng, n, n);
        for i in 0..n {
            for j in 0..i {
                m[(i, j)] = m[(j, i)];
            }
        }
        m
    }

    #[test]
    fn covariance_two_points() {
        let data = Matrix::from_rows(&[vec![1.0, 0.0], vec![-1.0, 0.0]]).unwrap();
        let c = covariance(&data).unwrap();
        assert_eq!(
            c,
            Matrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 0.0]]).unwrap()
        );
    }

    #[test]
    fn covariance_shift_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let data = random_matrix(&mut rng, 7, 3);
        let mut shifted = data.clone();
        for r in 0..7 {
            for (c, s) in shifted.row_mut(r).iter_mut().zip([5.0, -2.0, 0.25]) {
                *c += s;
            }
        }
        let a = covariance(&data).unwrap();
        let b = covariance(&shifted).unwrap();
        for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn covariance_matches_double_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let data = random_matrix(&mut rng, 5, 3);
        let c = covariance(&data).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let mi: f64 = (0..5).map(|r| data[(r, i)]).sum::<f64>() / 5.0;
                let mj: f64 = (0..5).map(|r| data[(r, j)]).sum::<f64>() / 5.0;
                let mut s = 0.0;
                for r in 0..5 {
                    s += (data[(r, i)] - mi) * (data[(r, j)] - mj);
                }
                assert!((c[(i, j)] - s / 5.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn covariance_rejects_single_sample() {
        let data = Matrix::from_rows(&[vec![1.0, 2.0]]).unwrap();
        assert!(matches!(covariance(&data), Err(Error::DegenerateInput(_))));
    }

    #[test]
    fn covariance_is_psd() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let data = random_matrix(&mut rng, 12, 4);
        let c = covariance(&data).unwrap();
        for _ in 0..100 {
            let x: Vec<f64> = (0..4).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let cx = c.matvec(&x).unwrap();
            assert!(dot(&x, &cx) >= -1e-10);
        }
    }

    #[test]
    fn eig_identity() {
        let e = symmetric_eig(&Matrix::identity(3)).unwrap();
        assert_eq!(e.eigenvalues, vec![1.0, 1.0, 1.0]);
        for (i, q) in e.eigenvectors.iter().enumerate() {
            for (j, p) in e.eigenvectors.iter().enumerate() {
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((dot(q, p) - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn eig_two_by_two() {
        // roots of (2-λ)² - 1 = 0 are 3 and 1
        let m = Matrix::from_rows(&[vec![2.0, 1.0], vec![1.0, 2.0]]).unwrap();
        let e = symmetric_eig(&m).unwrap();
        assert!((e.eigenvalues[0] - 3.0).abs() < 1e-12);
        assert!((e.eigenvalues[1] - 1.0).abs() < 1e-12);
        let h = std::f64::consts::FRAC_1_SQRT_2;
        assert!((e.eigenvectors[0][0] - h).abs() < 1e-12);
        assert!((e.eigenvectors[0][1] - h).abs() < 1e-12);
        assert!((e.eigenvectors[1][0].abs() - h).abs() < 1e-12);
        assert!((e.eigenvectors[1][0] + e.eigenvectors[1][1]).abs() < 1e-12);
    }

    #[test]
    fn eig_random_trace_and_residuals() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let m = random_symmetric(&mut rng, 6);
        let e = symmetric_eig(&m).unwrap();
        let sum: f64 = e.eigenvalues.iter().sum();
        assert!((sum - m.trace()).abs() < 1e-8);
        for (l, q) in e.eigenvalues.iter().zip(&e.eigenvectors) {
            let aq = m.matvec(q).unwrap();
            let r: f64 = aq
                .iter()
                .zip(q)
                .map(|(a, b)| (a - l * b).powi(2))
                .sum::<f64>();
            assert!(r.sqrt() <= 1e-8);
        }
        for w in e.eigenvalues.windows(2) {
            assert!(w[0].abs() >= w[1].abs());
        }
        let rec = e.reconstruct();
        for (a, b) in rec.as_slice().iter().zip(m.as_slice()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn eig_sign_convention() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let m = random_symmetric(&mut rng, 5);
        let e = symmetric_eig(&m).unwrap();
        for q in &e.eigenvectors {
            let pivot = argmax(&q.iter().map(|x| x.abs()).collect::<Vec<_>>());
            assert!(q[pivot] > 0.0);
        }
    }

    #[test]
    fn eig_rejects_asymmetric() {
        let m = Matrix::from_rows(&[vec![1.0, 2.0], vec![0.0, 1.0]]).unwrap();
        assert!(matches!(
            symmetric_eig(&m),
            Err(Error::ContractViolation(_))
        ));
    }

    #[test]
    fn spd_inverse_round_trip() {
        let m = Matrix::from_rows(&[
            vec![4.0, 1.0, 0.5],
            vec![1.0, 3.0, 0.2],
            vec![0.5, 0.2, 2.0],
        ])
        .unwrap();
        let inv = spd_inverse(&m).unwrap();
        let prod = m.matmul(&inv).unwrap();
        let id = Matrix::identity(3);
        for (a, b) in prod.as_slice().iter().zip(id.as_slice()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn from_vec_rejects_nan() {
        assert!(Matrix::from_vec(1, 2, vec![1.0, f64::NAN]).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn eigenvectors_orthonormal(seed in 0u64..10_000, n in 1usize..8) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let m = random_symmetric(&mut rng, n);
                let e = symmetric_eig(&m).unwrap();
                for i in 0..n {
                    for j in 0..n {
                        let expect = if i == j { 1.0 } else { 0.0 };
                        prop_assert!((dot(&e.eigenvectors[i], &e.eigenvectors[j]) - expect).abs() < 1e-8);
                    }
                }
                let rec = e.reconstruct();
                for (a, b) in rec.as_slice().iter().zip(m.as_slice()) {
                    prop_assert!((a - b).abs() < 1e-6);
                }
            }
        }
    }
}
