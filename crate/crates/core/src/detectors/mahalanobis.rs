use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{spd_inverse, Matrix};

pub const RIDGE: f64 = 1e-6;

/// Class-conditional Gaussians with a shared (pooled) covariance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MahalanobisModel {
    pub means: Vec<Vec<f64>>,
    /// Pooled within-class covariance, divisor n, before the ridge.
    pub covariance: Matrix,
    /// (covariance + ridge·I)⁻¹
    pub precision: Matrix,
}

/// Fits one mean per class in `0..classes` and the pooled covariance.
pub fn fit_mahalanobis(
    embeddings: &[Vec<f64>],
    labels: &[usize],
    classes: usize,
) -> Result<MahalanobisModel> {
    if embeddings.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: embeddings.len(),
            actual: labels.len(),
        });
    }
    if embeddings.is_empty() {
        return Err(Error::Empty("Mahalanobis fit data".into()));
    }
    let d = embeddings[0].len();
    let mut means = vec![vec![0.0; d]; classes];
    let mut counts = vec![0usize; classes];
    for (e, &y) in embeddings.iter().zip(labels) {
        if y >= classes {
            return Err(Error::InvalidLabel(format!("class {y} out of range")));
        }
        if e.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                actual: e.len(),
            });
        }
        counts[y] += 1;
        for (m, v) in means[y].iter_mut().zip(e) {
            *m += v;
        }
    }
    for (k, (m, &c)) in means.iter_mut().zip(&counts).enumerate() {
        if c < 2 {
            return Err(Error::DegenerateInput(format!(
                "class {k} has {c} sample(s); need at least 2"
            )));
        }
        m.iter_mut().for_each(|v| *v /= c as f64);
    }
    let mut cov = Matrix::zeros(d, d);
    let mut diff = vec![0.0; d];
    for (e, &y) in embeddings.iter().zip(labels) {
        for ((o, v), m) in diff.iter_mut().zip(e).zip(&means[y]) {
            *o = v - m;
        }
        for i in 0..d {
            for j in i..d {
                cov[(i, j)] += diff[i] * diff[j];
            }
        }
    }
    let n = embeddings.len() as f64;
    for i in 0..d {
        for j in i..d {
            let v = cov[(i, j)] / n;
            cov[(i, j)] = v;
            cov[(j, i)] = v;
        }
    }
    let mut ridged = cov.clone();
    for i in 0..d {
        ridged[(i, i)] += RIDGE;
    }
    let precision = spd_inverse(&ridged)?;
    Ok(MahalanobisModel {
        means,
        covariance: cov,
        precision,
    })
}

impl MahalanobisModel {
    pub fn dim(&self) -> usize {
        self.precision.rows()
    }

    /// Distance to the closest class mean under the shared precision.
    pub fn score(&self, e: &[f64]) -> Result<f64> {
        let d = self.dim();
        if e.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                actual: e.len(),
            });
        }
        let mut best = f64::INFINITY;
        let mut diff = vec![0.0; d];
        for mu in &self.means {
            for ((o, v), m) in diff.iter_mut().zip(e).zip(mu) {
                *o = v - m;
            }
            let mut q = 0.0;
            for i in 0..d {
                let row = self.precision.row(i);
                let mut s = 0.0;
                for j in 0..d {
                    s += row[j] * diff[j];
                }
                q += diff[i] * s;
            }
            best = best.min(q.max(0.0).sqrt());
        }
        Ok(best)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sample(seed: u64, n: usize, d: usize, classes: usize) -> (Vec<Vec<f64>>, Vec<usize>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let xs = (0..n)
            .map(|i| {
                (0..d)
                    .map(|k| rng.gen_range(-3.0..3.0) + if k == i % classes { 6.0 } else { 0.0 })
                    .collect()
            })
            .collect();
        let ys = (0..n).map(|i| i % classes).collect();
        (xs, ys)
    }

    #[test]
    fn point_clusters_give_point_means() {
        let xs = vec![
            vec![1.0, 2.0],
            vec![1.0, 2.0],
            vec![-3.0, 0.5],
            vec![-3.0, 0.5],
        ];
        let m = fit_mahalanobis(&xs, &[0, 0, 1, 1], 2).unwrap();
        assert_eq!(m.means, vec![vec![1.0, 2.0], vec![-3.0, 0.5]]);
        assert_eq!(m.score(&[1.0, 2.0]).unwrap(), 0.0);
    }

    #[test]
    fn pooled_covariance_matches_direct_formula() {
        let (xs, ys) = sample(1, 60, 4, 3);
        let m = fit_mahalanobis(&xs, &ys, 3).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                let mut s = 0.0;
                for (x, &y) in xs.iter().zip(&ys) {
                    let members: Vec<&Vec<f64>> = xs
                        .iter()
                        .zip(&ys)
                        .filter(|(_, &c)| c == y)
                        .map(|(v, _)| v)
                        .collect();
                    let mu_i = members.iter().map(|v| v[i]).sum::<f64>() / members.len() as f64;
                    let mu_j = members.iter().map(|v| v[j]).sum::<f64>() / members.len() as f64;
                    s += (x[i] - mu_i) * (x[j] - mu_j);
                }
                assert!((m.covariance[(i, j)] - s / 60.0).abs() < 1e-10);
            }
        }
        let prod = m.precision.matmul(&m.covariance).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                let target = if i == j { 1.0 } else { 0.0 };
                assert!((prod[(i, j)] - target).abs() < 1e-6);
                let exact = prod[(i, j)] + RIDGE * m.precision[(i, j)];
                assert!((exact - target).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn identity_precision_closed_form() {
        let m = MahalanobisModel {
            means: vec![vec![0.0, 0.0], vec![2.0, 0.0]],
            covariance: Matrix::identity(2),
            precision: Matrix::identity(2),
        };
        assert_eq!(m.score(&[1.0, 0.0]).unwrap(), 1.0);
    }

    #[test]
    fn matches_explicit_inverse_oracle() {
        let (xs, ys) = sample(2, 40, 3, 2);
        let m = fit_mahalanobis(&xs, &ys, 2).unwrap();
        // 3×3 inverse by cofactors.
        let c = &m.covariance;
        let a = |i: usize, j: usize| c[(i, j)] + if i == j { RIDGE } else { 0.0 };
        let det = a(0, 0) * (a(1, 1) * a(2, 2) - a(1, 2) * a(2, 1))
            - a(0, 1) * (a(1, 0) * a(2, 2) - a(1, 2) * a(2, 0))
            + a(0, 2) * (a(1, 0) * a(2, 1) - a(1, 1) * a(2, 0));
        let cof = |i: usize, j: usize| {
            let r: Vec<usize> = (0..3).filter(|&k| k != i).collect();
            let s: Vec<usize> = (0..3).filter(|&k| k != j).collect();
            let minor = a(r[0], s[0]) * a(r[1], s[1]) - a(r[0], s[1]) * a(r[1], s[0]);
            if (i + j).is_multiple_of(2) {
                minor
            } else {
                -minor
            }
        };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let e: Vec<f64> = (0..3).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let oracle = m
                .means
                .iter()
                .map(|mu| {
                    let mut q = 0.0;
                    for i in 0..3 {
                        for j in 0..3 {
                            q += (e[i] - mu[i]) * cof(j, i) / det * (e[j] - mu[j]);
                        }
                    }
                    q.sqrt()
                })
                .fold(f64::INFINITY, f64::min);
            assert!((m.score(&e).unwrap() - oracle).abs() < 1e-8);
        }
    }

    #[test]
    fn affine_invariance() {
        let (xs, ys) = sample(4, 80, 3, 2);
        let a = [[2.0, 0.5, 0.0], [0.0, 1.0, -0.3], [0.2, 0.0, 0.7]];
        let b = [1.0, -2.0, 0.5];
        let map = |x: &Vec<f64>| -> Vec<f64> {
            (0..3)
                .map(|i| (0..3).map(|j| a[i][j] * x[j]).sum::<f64>() + b[i])
                .collect()
        };
        let m1 = fit_mahalanobis(&xs, &ys, 2).unwrap();
        let mapped: Vec<Vec<f64>> = xs.iter().map(map).collect();
        let m2 = fit_mahalanobis(&mapped, &ys, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let e: Vec<f64> = (0..3).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let s1 = m1.score(&e).unwrap();
            let s2 = m2.score(&map(&e)).unwrap();
            assert!((s1 - s2).abs() < 1e-6 * s1.max(1.0));
        }
    }

    #[test]
    fn too_few_samples_rejected() {
        let xs = vec![vec![0.0], vec![1.0], vec![2.0]];
        assert!(fit_mahalanobis(&xs, &[0, 0, 1], 2).is_err());
    }
}
