use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::Label;
use crate::model::shuffle;
use crate::numerics::{dot, sigmoid};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidueTrainConfig {
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Standardize each embedding coordinate before the linear map.
    pub standardize: bool,
}

impl Default for ResidueTrainConfig {
    fn default() -> Self {
        Self {
            lr: 0.02,
            epochs: 20,
            batch_size: 200,
            seed: 0,
            standardize: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Standardizer {
    mean: Vec<f64>,
    scale: Vec<f64>,
}

/// P(adversarial | e) = σ(W·e + b).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidueDetector {
    pub weight: Vec<f64>,
    pub bias: f64,
    standardizer: Option<Standardizer>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidueTrainReport {
    /// Full-data binary cross-entropy before training and after each epoch.
    pub losses: Vec<f64>,
}

impl ResidueDetector {
    pub fn zeros(dim: usize) -> Self {
        Self {
            weight: vec![0.0; dim],
            bias: 0.0,
            standardizer: None,
        }
    }

    pub fn new(weight: Vec<f64>, bias: f64) -> Result<Self> {
        if !weight
            .iter()
            .chain(std::iter::once(&bias))
            .all(|v| v.is_finite())
        {
            return Err(Error::Numeric("detector parameters must be finite".into()));
        }
        Ok(Self {
            weight,
            bias,
            standardizer: None,
        })
    }

    pub fn dim(&self) -> usize {
        self.weight.len()
    }

    fn logit(&self, e: &[f64]) -> Result<f64> {
        if e.len() != self.weight.len() {
            return Err(Error::DimensionMismatch {
                expected: self.weight.len(),
                actual: e.len(),
            });
        }
        Ok(match &self.standardizer {
            None => dot(&self.weight, e) + self.bias,
            Some(s) => {
                let mut z = self.bias;
                for (k, w) in self.weight.iter().enumerate() {
                    z += w * (e[k] - s.mean[k]) / s.scale[k];
                }
                z
            }
        })
    }

    pub fn score(&self, e: &[f64]) -> Result<f64> {
        Ok(sigmoid(self.logit(e)?))
    }

    /// Mean binary cross-entropy over a labeled set.
    pub fn loss(&self, embeddings: &[Vec<f64>], labels: &[Label]) -> Result<f64> {
        let mut total = 0.0;
        for (e, l) in embeddings.iter().zip(labels) {
            total += bce(self.logit(e)?, l.is_adversarial());
        }
        Ok(total / embeddings.len().max(1) as f64)
    }
}

// −[y ln σ(z) + (1−y) ln(1−σ(z))], computed without overflow.
fn bce(z: f64, adversarial: bool) -> f64 {
    let softplus = |x: f64| x.max(0.0) + (-x.abs()).exp().ln_1p();
    if adversarial {
        softplus(-z)
    } else {
        softplus(z)
    }
}

/// Logistic regression from zero initialization by mini-batch gradient
/// descent on mean binary cross-entropy.
pub fn train_residue(
    embeddings: &[Vec<f64>],
    labels: &[Label],
    cfg: &ResidueTrainConfig,
) -> Result<(ResidueDetector, ResidueTrainReport)> {
    if embeddings.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: embeddings.len(),
            actual: labels.len(),
        });
    }
    let n_adv = labels.iter().filter(|l| l.is_adversarial()).count();
    if n_adv == 0 || n_adv == labels.len() {
        return Err(Error::InvalidLabel(
            "residue training needs both original and adversarial samples".into(),
        ));
    }
    if cfg.batch_size == 0 {
        return Err(Error::config("detector.batch_size", "must be positive"));
    }
    let dim = embeddings[0].len();
    if let Some(e) = embeddings.iter().find(|e| e.len() != dim) {
        return Err(Error::DimensionMismatch {
            expected: dim,
            actual: e.len(),
        });
    }
    let mut det = ResidueDetector::zeros(dim);
    if cfg.standardize {
        let n = embeddings.len() as f64;
        let mean: Vec<f64> = (0..dim)
            .map(|k| embeddings.iter().map(|e| e[k]).sum::<f64>() / n)
            .collect();
        let scale = (0..dim)
            .map(|k| {
                let var = embeddings
                    .iter()
                    .map(|e| (e[k] - mean[k]).powi(2))
                    .sum::<f64>()
                    / n;
                if var > 1e-24 {
                    var.sqrt()
                } else {
                    1.0
                }
            })
            .collect();
        det.standardizer = Some(Standardizer { mean, scale });
    }
    let inputs: Vec<Vec<f64>> = match &det.standardizer {
        None => embeddings.to_vec(),
        Some(s) => embeddings
            .iter()
            .map(|e| (0..dim).map(|k| (e[k] - s.mean[k]) / s.scale[k]).collect())
            .collect(),
    };
    let raw = |det: &ResidueDetector, x: &[f64]| dot(&det.weight, x) + det.bias;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..inputs.len()).collect();
    let mut losses = vec![det.loss(embeddings, labels)?];
    let mut gw = vec![0.0; dim];
    for _ in 0..cfg.epochs {
        shuffle(&mut order, &mut rng);
        for batch in order.chunks(cfg.batch_size) {
            gw.iter_mut().for_each(|g| *g = 0.0);
            let mut gb = 0.0;
            for &i in batch {
                let y = if labels[i].is_adversarial() { 1.0 } else { 0.0 };
                let r = sigmoid(raw(&det, &inputs[i])) - y;
                for (g, x) in gw.iter_mut().zip(&inputs[i]) {
                    *g += r * x;
                }
                gb += r;
            }
            let scale = cfg.lr / batch.len() as f64;
            for (w, g) in det.weight.iter_mut().zip(&gw) {
                *w -= scale * g;
            }
            det.bias -= scale * gb;
        }
        let loss = det.loss(embeddings, labels)?;
        if !loss.is_finite() {
            return Err(Error::Numeric("residue detector training diverged".into()));
        }
        losses.push(loss);
    }
    Ok((det, ResidueTrainReport { losses }))
}
