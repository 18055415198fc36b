use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{column_means, covariance, dot, mean, std_dev, symmetric_eig, Matrix};

/// Eigenbasis of the covariance of original embeddings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PCAModel {
    pub mean: Vec<f64>,
    /// Descending.
    pub eigenvalues: Vec<f64>,
    /// `eigenvectors[i]` is q_{i+1}.
    pub eigenvectors: Vec<Vec<f64>>,
}

pub fn fit_pca(embeddings: &[Vec<f64>]) -> Result<PCAModel> {
    if embeddings.len() < 2 {
        return Err(Error::DegenerateInput(format!(
            "PCA needs at least 2 samples, got {}",
            embeddings.len()
        )));
    }
    let data = Matrix::from_rows(embeddings)?;
    if data.rows() < data.cols() + 1 {
        log::warn!(
            "PCA on {} samples in {} dimensions; covariance is rank deficient",
            data.rows(),
            data.cols()
        );
    }
    let eig = symmetric_eig(&covariance(&data)?)?;
    Ok(PCAModel {
        mean: column_means(&data),
        eigenvalues: eig.eigenvalues,
        eigenvectors: eig.eigenvectors,
    })
}

impl PCAModel {
    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    fn check(&self, e: &[f64]) -> Result<()> {
        if e.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                actual: e.len(),
            });
        }
        Ok(())
    }

    /// Uncentered coordinates q_iᵀ e.
    pub fn coordinates(&self, e: &[f64]) -> Result<Vec<f64>> {
        self.check(e)?;
        Ok(self.eigenvectors.iter().map(|q| dot(q, e)).collect())
    }
}

/// Mean and spread of |q_iᵀ e| per rank over a sample set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidueProfile {
    pub rho: Vec<f64>,
    /// Population standard deviation of |q_iᵀ e_j| over j.
    pub std: Vec<f64>,
    pub count: usize,
}

pub fn component_profile(pca: &PCAModel, embeddings: &[Vec<f64>]) -> Result<ResidueProfile> {
    if embeddings.is_empty() {
        return Err(Error::Empty("profile sample set".into()));
    }
    let d = pca.dim();
    let mut columns = vec![Vec::with_capacity(embeddings.len()); d];
    for e in embeddings {
        for (col, c) in columns.iter_mut().zip(pca.coordinates(e)?) {
            col.push(c.abs());
        }
    }
    Ok(ResidueProfile {
        rho: columns.iter().map(|c| mean(c)).collect(),
        std: columns.iter().map(|c| std_dev(c)).collect(),
        count: embeddings.len(),
    })
}

pub const VARIANCE_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NSigma {
    pub value: f64,
    /// Ranks that contributed.
    pub used: usize,
    /// Ranks dropped for variance ≤ 1e-12.
    pub excluded: usize,
}

/// Mean over ranks of |ρ_attack − ρ_orig| in units of the original spread.
/// `ranks` are 0-based indices; all ranks when `None`.
pub fn n_sigma(
    orig: &ResidueProfile,
    attack: &ResidueProfile,
    ranks: Option<std::ops::Range<usize>>,
) -> Result<NSigma> {
    let d = orig.rho.len();
    if attack.rho.len() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            actual: attack.rho.len(),
        });
    }
    let ranks = ranks.unwrap_or(0..d);
    if ranks.end > d || ranks.is_empty() {
        return Err(Error::config(
            "analysis.ranks",
            format!("rank range {ranks:?} outside 0..{d}"),
        ));
    }
    let mut total = 0.0;
    let mut used = 0;
    let mut excluded = 0;
    for i in ranks {
        let var = orig.std[i] * orig.std[i];
        if var > VARIANCE_FLOOR {
            total += (attack.rho[i] - orig.rho[i]).abs() / var.sqrt();
            used += 1;
        } else {
            excluded += 1;
        }
    }
    if used == 0 {
        return Err(Error::DegenerateInput(
            "every rank has degenerate variance".into(),
        ));
    }
    Ok(NSigma {
        value: total / used as f64,
        used,
        excluded,
    })
}

/// Ranks [start, start + width) of the eigenbasis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowSpec {
    pub start: usize,
    pub width: usize,
}

pub const DEFAULT_WINDOW: usize = 5;

impl WindowSpec {
    pub fn new(start: usize, width: usize, dim: usize) -> Result<Self> {
        if start + width > dim {
            return Err(Error::config(
                "analysis.window",
                format!(
                    "window [{start}, {}) exceeds dimension {dim}",
                    start + width
                ),
            ));
        }
        Ok(Self { start, width })
    }

    pub fn contains(&self, rank: usize) -> bool {
        rank >= self.start && rank < self.start + self.width
    }
}

/// e minus its components outside the window.
pub fn windowed_projection(pca: &PCAModel, e: &[f64], win: WindowSpec) -> Result<Vec<f64>> {
    WindowSpec::new(win.start, win.width, pca.dim())?;
    let coords = pca.coordinates(e)?;
    let mut out = e.to_vec();
    for (i, (q, c)) in pca.eigenvectors.iter().zip(coords).enumerate() {
        if !win.contains(i) {
            for (o, v) in out.iter_mut().zip(q) {
                *o -= c * v;
            }
        }
    }
    Ok(out)
}

/// CSV with 1-based ranks: rank,rho_orig,rho_attack,std_orig.
pub fn profile_csv(orig: &ResidueProfile, attack: &ResidueProfile) -> Result<String> {
    if orig.rho.len() != attack.rho.len() {
        return Err(Error::DimensionMismatch {
            expected: orig.rho.len(),
            actual: attack.rho.len(),
        });
    }
    let mut s = String::from("rank,rho_orig,rho_attack,std_orig\n");
    for i in 0..orig.rho.len() {
        s.push_str(&format!(
            "{},{},{},{}\n",
            i + 1,
            orig.rho[i],
            attack.rho[i],
            orig.std[i]
        ));
    }
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::norm_l2;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_set(seed: u64, n: usize, d: usize) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scales: Vec<f64> = (0..d).map(|k| 1.0 / (1.0 + k as f64)).collect();
        (0..n)
            .map(|_| {
                let raw: Vec<f64> = (0..d)
                    .map(|k| rng.gen_range(-1.0..1.0) * scales[k])
                    .collect();
                // mix coordinates so the basis is not axis-aligned
                (0..d)
                    .map(|i| raw[i] + 0.3 * raw[(i + 1) % d] + 0.5)
                    .collect()
            })
            .collect()
    }

    #[test]
    fn rank_one_data() {
        let dir = [0.6, 0.8, 0.0];
        let xs: Vec<Vec<f64>> = (0..10)
            .map(|t| dir.iter().map(|v| v * t as f64).collect())
            .collect();
        let pca = fit_pca(&xs).unwrap();
        for (a, b) in pca.eigenvectors[0].iter().zip(dir) {
            assert!((a - b).abs() < 1e-8);
        }
        for l in &pca.eigenvalues[1..] {
            assert!(l.abs() < 1e-8);
        }
    }

    #[test]
    fn orthonormal_and_trace() {
        let xs = random_set(1, 200, 6);
        let pca = fit_pca(&xs).unwrap();
        for i in 0..6 {
            for j in 0..6 {
                let g = dot(&pca.eigenvectors[i], &pca.eigenvectors[j]);
                assert!((g - if i == j { 1.0 } else { 0.0 }).abs() < 1e-8);
            }
        }
        let c = covariance(&Matrix::from_rows(&xs).unwrap()).unwrap();
        assert!((pca.eigenvalues.iter().sum::<f64>() - c.trace()).abs() < 1e-8);
        for w in pca.eigenvalues.windows(2) {
            assert!(w[0] >= w[1]);
        }
    }

    #[test]
    fn too_few_samples() {
        assert!(fit_pca(&[vec![1.0, 2.0]]).is_err());
    }

    #[test]
    fn basis_aligned_profile() {
        let xs = random_set(2, 50, 4);
        let pca = fit_pca(&xs).unwrap();
        let p = component_profile(&pca, &[pca.eigenvectors[0].clone()]).unwrap();
        assert!((p.rho[0] - 1.0).abs() < 1e-12);
        for r in &p.rho[1..] {
            assert!(r.abs() < 1e-12);
        }
        assert!(component_profile(&pca, &[]).is_err());
    }

    #[test]
    fn profile_matches_double_loop() {
        let xs = random_set(3, 80, 5);
        let pca = fit_pca(&xs).unwrap();
        let sample = random_set(4, 30, 5);
        let p = component_profile(&pca, &sample).unwrap();
        for i in 0..5 {
            let mut vals = Vec::new();
            for e in &sample {
                let mut s = 0.0;
                for k in 0..5 {
                    s += e[k] * pca.eigenvectors[i][k];
                }
                vals.push(s.abs());
            }
            let m = vals.iter().sum::<f64>() / 30.0;
            let var = vals.iter().map(|v| (v - m).powi(2)).sum::<f64>() / 30.0;
            assert!((p.rho[i] - m).abs() < 1e-12);
            assert!((p.std[i] - var.sqrt()).abs() < 1e-12);
            assert!(p.rho[i] >= 0.0);
        }
    }

    #[test]
    fn n_sigma_identity_and_hand_value() {
        let xs = random_set(5, 40, 3);
        let pca = fit_pca(&xs).unwrap();
        let p = component_profile(&pca, &xs).unwrap();
        assert_eq!(n_sigma(&p, &p, None).unwrap().value, 0.0);

        let orig = ResidueProfile {
            rho: vec![1.0, 2.0],
            std: vec![0.5, 2.0],
            count: 4,
        };
        let attack = ResidueProfile {
            rho: vec![2.0, 1.0],
            std: vec![0.0, 0.0],
            count: 4,
        };
        // (1/0.5 + 1/2) / 2
        let ns = n_sigma(&orig, &attack, None).unwrap();
        assert!((ns.value - 1.25).abs() < 1e-15);
        assert_eq!((ns.used, ns.excluded), (2, 0));
    }

    #[test]
    fn n_sigma_degenerate_ranks() {
        let orig = ResidueProfile {
            rho: vec![1.0, 2.0, 3.0],
            std: vec![0.0, 1.0, 0.0],
            count: 2,
        };
        let attack = ResidueProfile {
            rho: vec![5.0, 4.0, 9.0],
            std: vec![0.0; 3],
            count: 2,
        };
        let ns = n_sigma(&orig, &attack, None).unwrap();
        assert_eq!((ns.value, ns.used, ns.excluded), (2.0, 1, 2));
        assert!(n_sigma(&orig, &attack, Some(0..1)).is_err());
        assert!(n_sigma(&orig, &attack, Some(2..4)).is_err());
    }

    #[test]
    fn full_and_empty_windows() {
        let xs = random_set(6, 60, 5);
        let pca = fit_pca(&xs).unwrap();
        let e = &xs[3];
        let full = windowed_projection(&pca, e, WindowSpec::new(0, 5, 5).unwrap()).unwrap();
        let empty = windowed_projection(&pca, e, WindowSpec::new(2, 0, 5).unwrap()).unwrap();
        for k in 0..5 {
            assert!((full[k] - e[k]).abs() < 1e-10);
            assert!(empty[k].abs() < 1e-10);
        }
        assert!(WindowSpec::new(3, 3, 5).is_err());
        let bad = WindowSpec { start: 4, width: 2 };
        assert!(windowed_projection(&pca, e, bad).is_err());
    }

    #[test]
    fn change_of_basis_oracle() {
        let xs = random_set(7, 60, 4);
        let pca = fit_pca(&xs).unwrap();
        let win = WindowSpec::new(1, 2, 4).unwrap();
        for e in xs.iter().take(10) {
            let before = pca.coordinates(e).unwrap();
            let after = pca
                .coordinates(&windowed_projection(&pca, e, win).unwrap())
                .unwrap();
            for i in 0..4 {
                let want = if win.contains(i) { before[i] } else { 0.0 };
                assert!((after[i] - want).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn csv_layout() {
        let p = ResidueProfile {
            rho: vec![1.5, 0.25],
            std: vec![0.5, 0.125],
            count: 3,
        };
        let csv = profile_csv(&p, &p).unwrap();
        assert_eq!(
            csv,
            "rank,rho_orig,rho_attack,std_orig\n1,1.5,1.5,0.5\n2,0.25,0.25,0.125\n"
        );
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn projection_idempotent_and_orthogonal(
            seed in 0u64..1000,
            start in 0usize..6,
            width in 0usize..6,
        ) {
            prop_assume!(start + width <= 6);
            let xs = random_set(seed, 40, 6);
            let pca = fit_pca(&xs).unwrap();
            let win = WindowSpec::new(start, width, 6).unwrap();
            let e = &xs[0];
            let once = windowed_projection(&pca, e, win).unwrap();
            let twice = windowed_projection(&pca, &once, win).unwrap();
            for k in 0..6 {
                prop_assert!((once[k] - twice[k]).abs() < 1e-10);
            }
            let rest: Vec<f64> = e.iter().zip(&once).map(|(a, b)| a - b).collect();
            let lhs = norm_l2(e).powi(2);
            let rhs = norm_l2(&once).powi(2) + norm_l2(&rest).powi(2);
            prop_assert!((lhs - rhs).abs() < 1e-8);
        }
    }
}
