//! Attack generators over token sequences, input embeddings and grids.

mod gate;
mod grid;
mod lexicon;
mod pgd;
mod text;

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use gate::{Gate, NoGate, ThresholdGate};
pub use grid::{
    discrete_grid_attack, discrete_grid_attack_gated, grid_saliency_rank, quantize_grid,
    quantize_value,
};
pub use lexicon::SynonymLexicon;
pub use pgd::{pgd_embedding_attack, pgd_grid_attack};
pub use text::{
    apply_suffix, concat_objective, concat_universal, edit_distance, pwws_substitute,
    pwws_substitute_gated, saliency_rank, Saliency,
};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackKind {
    Substitution,
    Concatenation,
    Pgd,
    Grid,
}

impl AttackKind {
    pub fn name(self) -> &'static str {
        match self {
            AttackKind::Substitution => "substitution",
            AttackKind::Concatenation => "concatenation",
            AttackKind::Pgd => "pgd",
            AttackKind::Grid => "grid",
        }
    }

    /// Discrete kinds count edits; PGD bounds ‖δ‖∞.
    pub fn is_discrete(self) -> bool {
        self != AttackKind::Pgd
    }
}

impl std::str::FromStr for AttackKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "substitution" | "pwws" => Ok(AttackKind::Substitution),
            "concatenation" | "concat" => Ok(AttackKind::Concatenation),
            "pgd" => Ok(AttackKind::Pgd),
            "grid" => Ok(AttackKind::Grid),
            other => Err(Error::config(
                "attack.kind",
                format!("unknown attack `{other}`"),
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Budget {
    Edits(usize),
    Epsilon(f64),
}

impl Budget {
    pub fn value(self) -> f64 {
        match self {
            Budget::Edits(n) => n as f64,
            Budget::Epsilon(e) => e,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttackConfig {
    pub kind: AttackKind,
    pub budget: Budget,
    /// PGD step size α.
    pub step_size: f64,
    pub steps: usize,
    pub seed: u64,
}

impl AttackConfig {
    pub fn substitution(n: usize) -> Self {
        Self::discrete(AttackKind::Substitution, n)
    }

    pub fn concatenation(n: usize) -> Self {
        Self::discrete(AttackKind::Concatenation, n)
    }

    pub fn grid(n: usize) -> Self {
        Self::discrete(AttackKind::Grid, n)
    }

    pub fn pgd(epsilon: f64, step_size: f64, steps: usize) -> Self {
        Self {
            kind: AttackKind::Pgd,
            budget: Budget::Epsilon(epsilon),
            step_size,
            steps,
            seed: 0,
        }
    }

    fn discrete(kind: AttackKind, n: usize) -> Self {
        Self {
            kind,
            budget: Budget::Edits(n),
            step_size: 1.0,
            steps: 0,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match (self.kind.is_discrete(), self.budget) {
            (true, Budget::Edits(_)) => {}
            (false, Budget::Epsilon(e)) if e >= 0.0 && e.is_finite() => {}
            (false, Budget::Epsilon(_)) => {
                return Err(Error::config("attack.epsilon", "must be finite and >= 0"))
            }
            _ => {
                return Err(Error::config(
                    "attack.budget",
                    format!(
                        "budget {:?} does not fit attack {}",
                        self.budget,
                        self.kind.name()
                    ),
                ))
            }
        }
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return Err(Error::config("attack.step_size", "must be positive"));
        }
        Ok(())
    }

    pub fn edits(&self) -> Result<usize> {
        self.validate()?;
        match self.budget {
            Budget::Edits(n) => Ok(n),
            Budget::Epsilon(_) => Err(Error::config("attack.budget", "expected an edit count")),
        }
    }

    pub fn epsilon(&self) -> Result<f64> {
        self.validate()?;
        match self.budget {
            Budget::Epsilon(e) => Ok(e),
            Budget::Edits(_) => Err(Error::config("attack.budget", "expected an epsilon")),
        }
    }
}

/// One attacked input. `realized` is an edit count for discrete attacks and
/// ‖δ‖∞ for continuous ones.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdversarialExample<T> {
    pub original: T,
    pub perturbed: T,
    pub kind: AttackKind,
    pub budget: f64,
    pub realized: f64,
    pub success: bool,
}

impl<T> AdversarialExample<T> {
    pub fn map<U>(self, mut f: impl FnMut(T) -> U) -> AdversarialExample<U> {
        AdversarialExample {
            original: f(self.original),
            perturbed: f(self.perturbed),
            kind: self.kind,
            budget: self.budget,
            realized: self.realized,
            success: self.success,
        }
    }
}

pub fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(file);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l)
                .map_err(|e| Error::Data(format!("{}:{}: {e}", path.display(), i + 1)))
        })
        .collect()
}
