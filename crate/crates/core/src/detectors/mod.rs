//! Adversarial-example detectors. Every score is oriented so that higher
//! means more likely adversarial.

mod fgws;
mod mahalanobis;
mod ngram;
mod residue;
mod uncertainty;

use std::path::Path;

use serde::{Deserialize, Serialize};

pub use fgws::{FgwsDetector, FrequencyTable, DEFAULT_PERCENTILE};
pub use mahalanobis::{fit_mahalanobis, MahalanobisModel, RIDGE};
pub use ngram::{fit_ngram_lm, NGramLM};
pub use residue::{train_residue, ResidueDetector, ResidueTrainConfig, ResidueTrainReport};
pub use uncertainty::{
    uncertainty_score, uncertainty_score_embedded, UncertaintyMeasure, DEFAULT_MC_SAMPLES,
};

use crate::checkpoint;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DetectorKind {
    Residue,
    Mahalanobis,
    Uncertainty,
    Perplexity,
    Fgws,
}

impl DetectorKind {
    pub const ALL: [DetectorKind; 5] = [
        DetectorKind::Residue,
        DetectorKind::Mahalanobis,
        DetectorKind::Uncertainty,
        DetectorKind::Perplexity,
        DetectorKind::Fgws,
    ];

    pub fn name(self) -> &'static str {
        match self {
            DetectorKind::Residue => "residue",
            DetectorKind::Mahalanobis => "mahalanobis",
            DetectorKind::Uncertainty => "uncertainty",
            DetectorKind::Perplexity => "perplexity",
            DetectorKind::Fgws => "fgws",
        }
    }

    pub fn tag(self) -> String {
        format!("detector:{}", self.name())
    }
}

impl std::str::FromStr for DetectorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::config("detectors", format!("unknown detector `{s}`")))
    }
}

/// A detector score with the id of the detector that produced it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectorScore {
    pub detector: DetectorKind,
    pub score: f64,
}

impl DetectorScore {
    pub fn new(detector: DetectorKind, score: f64) -> Result<Self> {
        if !score.is_finite() {
            return Err(Error::Numeric(format!(
                "{} score is not finite",
                detector.name()
            )));
        }
        Ok(Self { detector, score })
    }
}

macro_rules! checkpointed {
    ($ty:ty, $kind:expr) => {
        impl $ty {
            pub fn save(&self, path: &Path) -> Result<()> {
                checkpoint::save(path, &$kind.tag(), self)
            }

            pub fn load(path: &Path) -> Result<Self> {
                Ok(checkpoint::load(path, &$kind.tag())?.1)
            }
        }
    };
}

checkpointed!(ResidueDetector, DetectorKind::Residue);
checkpointed!(MahalanobisModel, DetectorKind::Mahalanobis);
checkpointed!(NGramLM, DetectorKind::Perplexity);
