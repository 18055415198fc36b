use rayon::prelude::*;

use super::{AdversarialExample, AttackKind, Gate, NoGate, SynonymLexicon};
use crate::error::{Error, Result};
use crate::model::{ClassifierModel, Target, TokenId, TokenSequence, Vocabulary, PAD, UNK};

/// Word-level Levenshtein distance; substitution, insertion and deletion
/// each cost 1.
pub fn edit_distance(a: &TokenSequence, b: &TokenSequence) -> usize {
    let (a, b) = (a.ids(), b.ids());
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, x) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, y) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(x != y);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Saliency {
    pub position: usize,
    /// Drop in true-class probability when the word is replaced by UNK.
    pub drop: f64,
}

fn true_prob(model: &ClassifierModel, x: &TokenSequence, label: usize) -> Result<f64> {
    model
        .probabilities(x)?
        .get(label)
        .copied()
        .ok_or_else(|| Error::InvalidLabel(format!("class {label}")))
}

/// Non-padding positions by descending saliency; ties go to the lower index.
pub fn saliency_rank(
    model: &ClassifierModel,
    x: &TokenSequence,
    label: usize,
) -> Result<Vec<Saliency>> {
    model.check_target(Target::Class(label))?;
    let base = true_prob(model, x, label)?;
    let mut out = Vec::with_capacity(x.len());
    for (pos, &id) in x.ids().iter().enumerate() {
        if id == PAD {
            continue;
        }
        let probe = true_prob(model, &x.with_token(pos, UNK), label)?;
        out.push(Saliency {
            position: pos,
            drop: base - probe,
        });
    }
    out.sort_by(|a, b| b.drop.total_cmp(&a.drop).then(a.position.cmp(&b.position)));
    Ok(out)
}

fn success(
    model: &ClassifierModel,
    x: &TokenSequence,
    adv: &TokenSequence,
    t: Target,
) -> Result<bool> {
    Ok(match t {
        Target::Class(c) => model.predict(x)? == c && model.predict(adv)? != c,
        Target::Score(_) => model.score(adv)? > model.score(x)?,
    })
}

/// Saliency-ordered synonym substitution with at most `n` edits.
pub fn pwws_substitute(
    model: &ClassifierModel,
    x: &TokenSequence,
    label: usize,
    n: usize,
    lexicon: &SynonymLexicon,
) -> Result<AdversarialExample<TokenSequence>> {
    pwws_substitute_gated(model, x, label, n, lexicon, &NoGate)
}

/// Substitution attack where every candidate must also pass `gate`. Positions
/// are visited once each, in saliency order. At each position candidates are
/// tried from the lowest resulting true-class probability upwards (ties by
/// token id); the first that strictly lowers the current probability and is
/// accepted by the gate is applied.
pub fn pwws_substitute_gated(
    model: &ClassifierModel,
    x: &TokenSequence,
    label: usize,
    n: usize,
    lexicon: &SynonymLexicon,
    gate: &dyn Gate<TokenSequence>,
) -> Result<AdversarialExample<TokenSequence>> {
    let mut current = x.clone();
    let mut edits = 0usize;
    if n > 0 && !lexicon.is_empty() {
        let mut p_cur = true_prob(model, x, label)?;
        for s in saliency_rank(model, x, label)? {
            if edits == n {
                break;
            }
            let word = current.ids()[s.position];
            let mut scored = Vec::new();
            for &c in lexicon.candidates(word) {
                let cand = current.with_token(s.position, c);
                scored.push((true_prob(model, &cand, label)?, c, cand));
            }
            scored.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            for (p, _, cand) in scored {
                if p >= p_cur {
                    break;
                }
                if gate.accepts(&cand)? {
                    current = cand;
                    p_cur = p;
                    edits += 1;
                    break;
                }
            }
        }
    }
    let success = success(model, x, &current, Target::Class(label))?;
    Ok(AdversarialExample {
        original: x.clone(),
        perturbed: current,
        kind: AttackKind::Substitution,
        budget: n as f64,
        realized: edits as f64,
        success,
    })
}

/// Dataset mean of the regression score, or of the true-class cross-entropy,
/// with `suffix` appended to every input.
pub fn concat_objective(
    model: &ClassifierModel,
    data: &[(TokenSequence, Target)],
    suffix: &[TokenId],
) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::Empty("concatenation dataset".into()));
    }
    let total: f64 = data
        .par_iter()
        .map(|(x, t)| {
            let xs = x.concat(suffix);
            match model.classes() {
                Some(_) => model.loss(&xs, *t),
                None => model.score(&xs),
            }
        })
        .collect::<Result<Vec<f64>>>()?
        .iter()
        .sum();
    Ok(total / data.len() as f64)
}

/// Greedy universal suffix of length `n`. Each appended word is the argmax of
/// the dataset-mean objective over `candidates` (default: every non-reserved
/// vocabulary id); ties go to the lowest id.
pub fn concat_universal(
    model: &ClassifierModel,
    data: &[(TokenSequence, Target)],
    n: usize,
    candidates: Option<&[TokenId]>,
) -> Result<Vec<TokenId>> {
    if data.is_empty() {
        return Err(Error::Empty("concatenation dataset".into()));
    }
    let mut pool: Vec<TokenId> = match candidates {
        Some(c) => c.to_vec(),
        None => model.vocab().content_ids().collect(),
    };
    pool.retain(|id| !Vocabulary::is_reserved(*id));
    pool.sort_unstable();
    pool.dedup();
    if n > 0 && pool.is_empty() {
        return Err(Error::Empty("no candidate words for concatenation".into()));
    }
    let mut suffix = Vec::with_capacity(n);
    for _ in 0..n {
        let mut best: Option<(f64, TokenId)> = None;
        for &c in &pool {
            suffix.push(c);
            let obj = concat_objective(model, data, &suffix)?;
            suffix.pop();
            if best.is_none_or(|(b, _)| obj > b) {
                best = Some((obj, c));
            }
        }
        suffix.push(best.expect("non-empty pool").1);
    }
    Ok(suffix)
}

/// Appends the universal suffix to each input.
pub fn apply_suffix(
    model: &ClassifierModel,
    data: &[(TokenSequence, Target)],
    suffix: &[TokenId],
) -> Result<Vec<AdversarialExample<TokenSequence>>> {
    data.iter()
        .map(|(x, t)| {
            let adv = x.concat(suffix);
            Ok(AdversarialExample {
                success: success(model, x, &adv, *t)?,
                original: x.clone(),
                perturbed: adv,
                kind: AttackKind::Concatenation,
                budget: suffix.len() as f64,
                realized: suffix.len() as f64,
            })
        })
        .collect()
}
