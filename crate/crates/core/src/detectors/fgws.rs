use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::attacks::SynonymLexicon;
use crate::error::{Error, Result};
use crate::model::{ClassifierModel, TokenId, TokenSequence, Vocabulary};
use crate::numerics::argmax;

/// Token counts from the original training corpus.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrequencyTable {
    counts: BTreeMap<String, u64>,
}

impl FrequencyTable {
    pub fn from_corpus(corpus: &[TokenSequence], vocab: &Vocabulary) -> Self {
        let mut counts = BTreeMap::new();
        for seq in corpus {
            for &id in seq.ids() {
                if let Some(t) = vocab.token(id) {
                    if !Vocabulary::is_reserved(id) {
                        *counts.entry(t.to_string()).or_insert(0) += 1;
                    }
                }
            }
        }
        Self { counts }
    }

    pub fn count(&self, token: &str) -> u64 {
        self.counts.get(token).copied().unwrap_or(0)
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, u64)> {
        self.counts.iter().map(|(k, v)| (k.as_str(), *v))
    }

    /// Nearest-rank percentile of the recorded counts, `pct` in [0, 100].
    pub fn percentile(&self, pct: f64) -> Result<f64> {
        if self.counts.is_empty() {
            return Err(Error::Empty("frequency table".into()));
        }
        let mut v: Vec<u64> = self.counts.values().copied().collect();
        v.sort_unstable();
        let rank = ((pct / 100.0) * v.len() as f64).ceil() as usize;
        Ok(v[rank.clamp(1, v.len()) - 1] as f64)
    }

    /// Count per vocabulary id; unseen tokens count 0.
    pub fn by_id(&self, vocab: &Vocabulary) -> Vec<u64> {
        vocab.tokens().iter().map(|t| self.count(t)).collect()
    }

    pub fn to_text(&self) -> String {
        self.counts
            .iter()
            .map(|(t, c)| format!("{t}\t{c}\n"))
            .collect()
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut counts = BTreeMap::new();
        for (n, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let (tok, count) = line
                .split_once('\t')
                .ok_or_else(|| Error::Data(format!("frequency line {}: missing tab", n + 1)))?;
            let count: u64 = count.trim().parse().map_err(|_| {
                Error::Data(format!("frequency line {}: bad count `{count}`", n + 1))
            })?;
            counts.insert(tok.to_string(), count);
        }
        Ok(Self { counts })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }
}

/// Frequency-guided word substitution: words rarer than `threshold` are
/// replaced by their most frequent synonym, and the score is the change in
/// the predicted-class probability.
#[derive(Debug, Clone, PartialEq)]
pub struct FgwsDetector {
    frequencies: Vec<u64>,
    threshold: f64,
    lexicon: SynonymLexicon,
}

pub const DEFAULT_PERCENTILE: f64 = 10.0;

impl FgwsDetector {
    /// `threshold` defaults to the 10th percentile of the table's counts. The
    /// lexicon is used in its symmetric closure.
    pub fn new(
        table: &FrequencyTable,
        vocab: &Vocabulary,
        lexicon: &SynonymLexicon,
        threshold: Option<f64>,
    ) -> Result<Self> {
        let threshold = match threshold {
            Some(t) => t,
            None => table.percentile(DEFAULT_PERCENTILE)?,
        };
        Ok(Self {
            frequencies: table.by_id(vocab),
            threshold,
            lexicon: lexicon.symmetric_closure(),
        })
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    fn freq(&self, id: TokenId) -> u64 {
        self.frequencies.get(id as usize).copied().unwrap_or(0)
    }

    /// Substituted input and the number of replaced words.
    pub fn transform(&self, x: &TokenSequence) -> (TokenSequence, usize) {
        let mut ids = x.ids().to_vec();
        let mut changed = 0;
        for w in ids.iter_mut() {
            let f = self.freq(*w);
            if Vocabulary::is_reserved(*w) || f as f64 >= self.threshold {
                continue;
            }
            let mut best = (f, *w);
            for &c in self.lexicon.candidates(*w) {
                if self.freq(c) > best.0 {
                    best = (self.freq(c), c);
                }
            }
            if best.1 != *w {
                *w = best.1;
                changed += 1;
            }
        }
        (TokenSequence::new(ids).expect("length preserved"), changed)
    }

    pub fn score(&self, model: &ClassifierModel, x: &TokenSequence) -> Result<f64> {
        let (sub, changed) = self.transform(x);
        if changed == 0 {
            return Ok(0.0);
        }
        let p = model.probabilities(x)?;
        let c = argmax(&p);
        Ok((p[c] - model.probabilities(&sub)?[c]).abs())
    }
}
