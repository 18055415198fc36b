use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ClassifierModel, EmbeddingSequence, TokenSequence};

const FLOOR: f64 = 1e-12;

pub const DEFAULT_MC_SAMPLES: usize = 16;

/// Disagreement measures over MC-dropout samples; natural logs throughout,
/// probabilities floored at 1e-12 inside logarithms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UncertaintyMeasure {
    /// H(p̄)
    EntropyOfExpected,
    /// E_m H(P_m)
    ExpectedEntropy,
    /// H(p̄) − E_m H(P_m)
    MutualInformation,
    /// 1 − max_k p̄_k
    Confidence,
    /// E_{m,m'} KL(P_m ‖ P_m') over all ordered pairs.
    Kl,
    /// E_m KL(p̄ ‖ P_m)
    ReverseMi,
}

impl UncertaintyMeasure {
    pub const ALL: [UncertaintyMeasure; 6] = [
        UncertaintyMeasure::EntropyOfExpected,
        UncertaintyMeasure::ExpectedEntropy,
        UncertaintyMeasure::MutualInformation,
        UncertaintyMeasure::Confidence,
        UncertaintyMeasure::Kl,
        UncertaintyMeasure::ReverseMi,
    ];

    pub fn name(self) -> &'static str {
        match self {
            UncertaintyMeasure::EntropyOfExpected => "entropy_of_expected",
            UncertaintyMeasure::ExpectedEntropy => "expected_entropy",
            UncertaintyMeasure::MutualInformation => "mutual_information",
            UncertaintyMeasure::Confidence => "confidence",
            UncertaintyMeasure::Kl => "kl",
            UncertaintyMeasure::ReverseMi => "reverse_mi",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.name() == name)
            .ok_or_else(|| Error::config("detector.measure", format!("unknown measure `{name}`")))
    }

    pub fn compute(self, samples: &[Vec<f64>]) -> Result<f64> {
        if samples.is_empty() {
            return Err(Error::Empty("no MC samples".into()));
        }
        let k = samples[0].len();
        if let Some(s) = samples.iter().find(|s| s.len() != k) {
            return Err(Error::DimensionMismatch {
                expected: k,
                actual: s.len(),
            });
        }
        let m = samples.len() as f64;
        let mean: Vec<f64> = (0..k)
            .map(|c| samples.iter().map(|s| s[c]).sum::<f64>() / m)
            .collect();
        let expected_entropy = || samples.iter().map(|s| entropy(s)).sum::<f64>() / m;
        Ok(match self {
            UncertaintyMeasure::EntropyOfExpected => entropy(&mean),
            UncertaintyMeasure::ExpectedEntropy => expected_entropy(),
            UncertaintyMeasure::MutualInformation => entropy(&mean) - expected_entropy(),
            UncertaintyMeasure::Confidence => {
                1.0 - mean.iter().copied().fold(f64::NEG_INFINITY, f64::max)
            }
            UncertaintyMeasure::Kl => {
                let mut total = 0.0;
                for a in samples {
                    for b in samples {
                        total += kl(a, b);
                    }
                }
                total / (m * m)
            }
            UncertaintyMeasure::ReverseMi => samples.iter().map(|s| kl(&mean, s)).sum::<f64>() / m,
        })
    }
}

fn ln(p: f64) -> f64 {
    p.max(FLOOR).ln()
}

fn entropy(p: &[f64]) -> f64 {
    -p.iter().map(|&v| v * ln(v)).sum::<f64>()
}

fn kl(p: &[f64], q: &[f64]) -> f64 {
    p.iter().zip(q).map(|(&a, &b)| a * (ln(a) - ln(b))).sum()
}

/// Uncertainty of `x` from `m` MC-dropout passes seeded by `seed`.
pub fn uncertainty_score(
    model: &ClassifierModel,
    x: &TokenSequence,
    measure: UncertaintyMeasure,
    m: usize,
    seed: u64,
) -> Result<f64> {
    uncertainty_score_embedded(model, &model.embed(x)?, measure, m, seed)
}

/// As [`uncertainty_score`], for inputs given directly as embeddings.
pub fn uncertainty_score_embedded(
    model: &ClassifierModel,
    h: &EmbeddingSequence,
    measure: UncertaintyMeasure,
    m: usize,
    seed: u64,
) -> Result<f64> {
    if m < 2 {
        return Err(Error::config(
            "detector.mc_samples",
            "need at least 2 MC samples",
        ));
    }
    measure.compute(&model.mc_samples_embedded(h, m, seed)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use UncertaintyMeasure::*;

    #[test]
    fn identical_samples_have_no_disagreement() {
        let s = vec![vec![0.2, 0.5, 0.3]; 5];
        assert!(MutualInformation.compute(&s).unwrap().abs() < 1e-15);
        assert!(
            (EntropyOfExpected.compute(&s).unwrap() - ExpectedEntropy.compute(&s).unwrap()).abs()
                < 1e-15
        );
        assert!(Kl.compute(&s).unwrap().abs() < 1e-15);
        assert!(ReverseMi.compute(&s).unwrap().abs() < 1e-15);
    }

    #[test]
    fn opposite_one_hots() {
        let s = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        let ln2 = std::f64::consts::LN_2;
        assert!((EntropyOfExpected.compute(&s).unwrap() - ln2).abs() < 1e-12);
        assert!(ExpectedEntropy.compute(&s).unwrap().abs() < 1e-10);
        assert!((MutualInformation.compute(&s).unwrap() - ln2).abs() < 1e-10);
        assert!((Confidence.compute(&s).unwrap() - 0.5).abs() < 1e-15);
    }

    fn random_samples(rng: &mut ChaCha8Rng, m: usize, k: usize) -> Vec<Vec<f64>> {
        (0..m)
            .map(|_| {
                let raw: Vec<f64> = (0..k).map(|_| rng.gen_range(0.01..1.0)).collect();
                let s: f64 = raw.iter().sum();
                raw.iter().map(|v| v / s).collect()
            })
            .collect()
    }

    #[test]
    fn measures_match_direct_formulas() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let s = random_samples(&mut rng, 7, 4);
            let m = s.len() as f64;
            let pbar: Vec<f64> = (0..4)
                .map(|c| s.iter().map(|p| p[c]).sum::<f64>() / m)
                .collect();
            let h = |p: &Vec<f64>| -> f64 { p.iter().map(|v| -v * v.ln()).sum() };
            let eoe = h(&pbar);
            let ee = s.iter().map(h).sum::<f64>() / m;
            let conf = 1.0 - pbar.iter().cloned().fold(0.0, f64::max);
            let mut epkl = 0.0;
            for a in &s {
                for b in &s {
                    for c in 0..4 {
                        epkl += a[c] * (a[c] / b[c]).ln();
                    }
                }
            }
            epkl /= m * m;
            let rmi: f64 = s
                .iter()
                .map(|p| (0..4).map(|c| pbar[c] * (pbar[c] / p[c]).ln()).sum::<f64>())
                .sum::<f64>()
                / m;
            let checks = [
                (EntropyOfExpected, eoe),
                (ExpectedEntropy, ee),
                (MutualInformation, eoe - ee),
                (Confidence, conf),
                (Kl, epkl),
                (ReverseMi, rmi),
            ];
            for (measure, oracle) in checks {
                assert!(
                    (measure.compute(&s).unwrap() - oracle).abs() < 1e-10,
                    "{measure:?}"
                );
            }
        }
    }

    #[test]
    fn names_round_trip() {
        for m in UncertaintyMeasure::ALL {
            assert_eq!(UncertaintyMeasure::from_name(m.name()).unwrap(), m);
        }
        assert!(UncertaintyMeasure::from_name("bogus").is_err());
    }
}
