use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{TokenId, TokenSequence};

/// History padding before the first word; never a vocabulary id.
const BOS: TokenId = TokenId::MAX;

/// Add-one smoothed n-gram model:
/// p(w | h) = (c(h, w) + 1) / (c(h) + |V|).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "NGramData", into = "NGramData")]
pub struct NGramLM {
    order: usize,
    vocab_size: usize,
    grams: HashMap<Vec<TokenId>, u64>,
    histories: HashMap<Vec<TokenId>, u64>,
}

#[derive(Serialize, Deserialize)]
struct NGramData {
    order: usize,
    vocab_size: usize,
    grams: Vec<(Vec<TokenId>, u64)>,
    histories: Vec<(Vec<TokenId>, u64)>,
}

impl From<NGramData> for NGramLM {
    fn from(d: NGramData) -> Self {
        NGramLM {
            order: d.order,
            vocab_size: d.vocab_size,
            grams: d.grams.into_iter().collect(),
            histories: d.histories.into_iter().collect(),
        }
    }
}

impl From<NGramLM> for NGramData {
    fn from(lm: NGramLM) -> Self {
        let sorted = |m: HashMap<Vec<TokenId>, u64>| m.into_iter().collect::<BTreeMap<_, _>>();
        NGramData {
            order: lm.order,
            vocab_size: lm.vocab_size,
            grams: sorted(lm.grams).into_iter().collect(),
            histories: sorted(lm.histories).into_iter().collect(),
        }
    }
}

fn history(ids: &[TokenId], i: usize, len: usize) -> Vec<TokenId> {
    (0..len)
        .map(|k| {
            let back = len - k;
            if i >= back {
                ids[i - back]
            } else {
                BOS
            }
        })
        .collect()
}

/// Counts n-grams over `corpus`; `vocab_size` is |V| in the smoothing
/// denominator and must cover every distinct corpus token.
pub fn fit_ngram_lm(corpus: &[TokenSequence], order: usize, vocab_size: usize) -> Result<NGramLM> {
    if !(1..=3).contains(&order) {
        return Err(Error::config(
            "detector.ngram_order",
            "order must be 1, 2 or 3",
        ));
    }
    if corpus.is_empty() {
        return Err(Error::Empty("language-model corpus".into()));
    }
    let mut lm = NGramLM {
        order,
        vocab_size,
        grams: HashMap::new(),
        histories: HashMap::new(),
    };
    let mut distinct = std::collections::HashSet::new();
    for seq in corpus {
        let ids = seq.ids();
        for (i, &w) in ids.iter().enumerate() {
            distinct.insert(w);
            let mut h = history(ids, i, order - 1);
            *lm.histories.entry(h.clone()).or_insert(0) += 1;
            h.push(w);
            *lm.grams.entry(h).or_insert(0) += 1;
        }
    }
    if distinct.len() > vocab_size {
        return Err(Error::config(
            "detector.vocab_size",
            format!(
                "{} distinct tokens exceed |V| = {vocab_size}",
                distinct.len()
            ),
        ));
    }
    Ok(lm)
}

impl NGramLM {
    pub fn order(&self) -> usize {
        self.order
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    /// Smoothed p(word | history), history given oldest first.
    pub fn prob(&self, hist: &[TokenId], word: TokenId) -> f64 {
        let c_h = self.histories.get(hist).copied().unwrap_or(0);
        let mut key = hist.to_vec();
        key.push(word);
        let c_hw = self.grams.get(&key).copied().unwrap_or(0);
        (c_hw as f64 + 1.0) / (c_h as f64 + self.vocab_size as f64)
    }

    /// exp(−mean ln p(w_i | history)).
    pub fn perplexity(&self, x: &TokenSequence) -> Result<f64> {
        let ids = x.ids();
        if ids.is_empty() {
            return Err(Error::Empty("perplexity of an empty sequence".into()));
        }
        let total: f64 = (0..ids.len())
            .map(|i| self.prob(&history(ids, i, self.order - 1), ids[i]).ln())
            .sum();
        Ok((-total / ids.len() as f64).exp())
    }
}
