//! JSONL records exchanged between CLI stages.

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::fixture::{AttackedSet, DetectionSet, Pair};
use crate::attacks::{edit_distance, AdversarialExample, AttackKind};
use crate::error::{Error, Result};
use crate::eval::Label;
use crate::model::{ClassifierModel, EmbeddingSequence};
use crate::numerics::{norm_linf, Matrix};

/// Text attacks carry strings on both sides; PGD carries the original text
/// and the perturbed embedding rows.
pub type AttackRecord = AdversarialExample<Value>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub label: Label,
    pub score: f64,
}

fn rows(m: &Matrix) -> Value {
    Value::Array(
        (0..m.rows())
            .map(|r| Value::Array(m.row(r).iter().map(|&v| Value::from(v)).collect()))
            .collect(),
    )
}

fn pair_record(
    model: &ClassifierModel,
    kind: AttackKind,
    budget: f64,
    p: &Pair,
) -> Result<AttackRecord> {
    let vocab = model.vocab();
    let orig_tokens = p
        .orig_tokens
        .as_ref()
        .ok_or_else(|| Error::ContractViolation("pair without original tokens".into()))?;
    let original = Value::from(vocab.decode(orig_tokens));
    let (perturbed, realized) = match &p.adv_tokens {
        Some(adv) => (
            Value::from(vocab.decode(adv)),
            if kind == AttackKind::Concatenation {
                (adv.len() - orig_tokens.len()) as f64
            } else {
                edit_distance(orig_tokens, adv) as f64
            },
        ),
        None => {
            let delta: Vec<f64> = p
                .adv
                .vectors()
                .as_slice()
                .iter()
                .zip(p.orig.vectors().as_slice())
                .map(|(a, b)| a - b)
                .collect();
            (rows(p.adv.vectors()), norm_linf(&delta))
        }
    };
    Ok(AttackRecord {
        original,
        perturbed,
        kind,
        budget,
        realized,
        success: p.success,
    })
}

pub fn attack_records(
    model: &ClassifierModel,
    set: &AttackedSet,
    budget: f64,
) -> Result<Vec<AttackRecord>> {
    set.pairs
        .iter()
        .map(|p| pair_record(model, set.kind, budget, p))
        .collect()
}

fn text(v: &Value, what: &str) -> Result<String> {
    v.as_str()
        .map(str::to_string)
        .ok_or_else(|| Error::Data(format!("{what} must be a string")))
}

fn matrix(v: &Value) -> Result<Matrix> {
    let bad = || Error::Data("perturbed embeddings must be an array of numeric rows".into());
    let rows = v
        .as_array()
        .ok_or_else(bad)?
        .iter()
        .map(|r| {
            r.as_array()
                .ok_or_else(bad)?
                .iter()
                .map(|x| x.as_f64().ok_or_else(bad))
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    Matrix::from_rows(&rows)
}

/// Rebuilds attacked pairs from records; every record's original is treated
/// as originally correct, so its class is the model's prediction.
pub fn attacked_from_records(
    model: &ClassifierModel,
    records: &[AttackRecord],
) -> Result<AttackedSet> {
    let kind = records
        .first()
        .ok_or_else(|| Error::Data("no attack records".into()))?
        .kind;
    let vocab = model.vocab();
    let mut pairs = Vec::with_capacity(records.len());
    for r in records {
        if r.kind != kind {
            return Err(Error::Data(
                "attack records mix several attack kinds".into(),
            ));
        }
        let orig_tokens = vocab.encode(&text(&r.original, "original")?)?;
        let orig = model.embed(&orig_tokens)?;
        let (adv, adv_tokens) = if kind == AttackKind::Pgd {
            let m = matrix(&r.perturbed)?;
            if m.rows() != orig.len() || m.cols() != orig.dim() {
                return Err(Error::DimensionMismatch {
                    expected: orig.len() * orig.dim(),
                    actual: m.rows() * m.cols(),
                });
            }
            (EmbeddingSequence::new(m, orig.mask().to_vec())?, None)
        } else {
            let t = vocab.encode(&text(&r.perturbed, "perturbed")?)?;
            (model.embed(&t)?, Some(t))
        };
        pairs.push(Pair {
            label: model.predict(&orig_tokens)?,
            orig,
            adv,
            orig_tokens: Some(orig_tokens),
            adv_tokens,
            success: r.success,
        });
    }
    Ok(AttackedSet {
        kind,
        attempted: pairs.len(),
        pairs,
    })
}

pub fn detection_from_records(
    model: &ClassifierModel,
    records: &[AttackRecord],
) -> Result<(AttackedSet, DetectionSet)> {
    let set = attacked_from_records(model, records)?;
    let det = DetectionSet::from_attacked(model, &set)?;
    Ok((set, det))
}
