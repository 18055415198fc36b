//! Synthetic data, experiment orchestration and artifact output.

pub mod config;
mod dataset;
pub mod experiment;
pub mod fixture;
mod grids;
pub mod plot;
pub mod records;
mod synth;

pub use dataset::{
    build_vocabulary, encode_examples, encode_scored, read_dataset, read_scored_dataset,
    write_dataset, Example, ScoredExample,
};
pub use experiment::{run_experiment, run_experiments, ExperimentConfig, ExperimentId, Session};
pub use grids::{synth_grids, GridSplit, SynthGridSpec};
pub use synth::{pseudo_word, synth_corpus, SynthCorpus, SynthCorpusSpec};
