//! The system under attack: a toy text classifier with an explicit
//! encoder/output-stage split, and a small grid classifier for the image analog.

mod classifier;
mod grid;
mod vocab;

use std::path::Path;

pub(crate) use classifier::shuffle;
pub use classifier::{
    ClassifierModel, EmbeddingSequence, Head, ModelConfig, Output, Parameters, Pooling, Target,
    TrainConfig, TrainReport,
};
pub use grid::{quantization_levels, Grid, GridModel, GridModelConfig};
pub use vocab::{tokenize, TokenId, TokenSequence, Vocabulary, PAD, PAD_TOKEN, UNK, UNK_TOKEN};

use crate::checkpoint;
use crate::error::Result;

impl ClassifierModel {
    pub fn save(&self, path: &Path) -> Result<()> {
        checkpoint::save(path, &format!("model:{}", self.model_id()), self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (_, model): (_, ClassifierModel) = checkpoint::load(path, "model:")?;
        ClassifierModel::from_parameters(
            model.vocab().clone(),
            model.config().clone(),
            model.params().clone(),
        )
    }
}

impl GridModel {
    pub fn save(&self, path: &Path) -> Result<()> {
        checkpoint::save(path, "grid-model", self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(checkpoint::load(path, "grid-model")?.1)
    }
}

#[cfg(test)]
mod tests;
