use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::dataset::Example;
use crate::attacks::SynonymLexicon;
use crate::detectors::FrequencyTable;
use crate::error::{Error, Result};
use crate::model::{tokenize, Vocabulary};

/// Planted-keyword corpus: each sentence carries keywords of its class among
/// Zipf-distributed filler words. Every keyword and filler has rare synonyms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthCorpusSpec {
    pub classes: usize,
    /// Number of filler words.
    pub vocab_size: usize,
    /// Keyword sets per class; generated when empty.
    pub keywords: Vec<Vec<String>>,
    pub keywords_per_class: usize,
    pub keywords_per_sample: usize,
    pub synonyms_per_word: usize,
    /// Probability that a filler occurrence is written as one of its synonyms.
    pub synonym_rate: f64,
    pub min_len: usize,
    pub max_len: usize,
    pub label_noise: f64,
    pub train: usize,
    pub test: usize,
}

impl Default for SynthCorpusSpec {
    fn default() -> Self {
        Self {
            classes: 4,
            vocab_size: 120,
            keywords: Vec::new(),
            keywords_per_class: 6,
            keywords_per_sample: 2,
            synonyms_per_word: 3,
            synonym_rate: 0.05,
            min_len: 8,
            max_len: 14,
            label_noise: 0.0,
            train: 2000,
            test: 500,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthCorpus {
    pub train: Vec<Example>,
    pub test: Vec<Example>,
    pub keywords: Vec<Vec<String>>,
    pub fillers: Vec<String>,
    pub lexicon_text: String,
    pub frequencies: FrequencyTable,
}

const ONSETS: &[&str] = &[
    "b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z",
];
const NUCLEI: &[&str] = &["a", "e", "i", "o", "u"];

/// Pronounceable pseudo-word for index `i`; injective in `i`.
pub fn pseudo_word(i: usize) -> String {
    let base = ONSETS.len() * NUCLEI.len();
    let mut n = i + base;
    let mut parts = Vec::new();
    while n > 0 {
        let s = n % base;
        parts.push(format!(
            "{}{}",
            ONSETS[s / NUCLEI.len()],
            NUCLEI[s % NUCLEI.len()]
        ));
        n /= base;
    }
    parts.reverse();
    parts.concat()
}

impl SynthCorpusSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, msg: &str| Err(Error::config(key, msg));
        if self.classes < 2 {
            return bad("synth.classes", "need at least 2 classes");
        }
        if self.vocab_size == 0 {
            return bad("synth.vocab_size", "need at least one filler word");
        }
        if self.min_len == 0 || self.min_len > self.max_len {
            return bad("synth.min_len", "need 1 <= min_len <= max_len");
        }
        if self.keywords_per_sample == 0 || self.keywords_per_sample > self.min_len {
            return bad("synth.keywords_per_sample", "must be in 1..=min_len");
        }
        if !(0.0..=1.0).contains(&self.label_noise) {
            return bad("synth.label_noise", "must be in [0, 1]");
        }
        if !(0.0..=1.0).contains(&self.synonym_rate) {
            return bad("synth.synonym_rate", "must be in [0, 1]");
        }
        if self.keywords.is_empty() {
            if self.keywords_per_class == 0 {
                return bad("synth.keywords_per_class", "must be positive");
            }
        } else {
            if self.keywords.len() != self.classes {
                return bad("synth.keywords", "need one keyword set per class");
            }
            let mut seen = std::collections::HashSet::new();
            for set in &self.keywords {
                if set.is_empty() {
                    return bad("synth.keywords", "keyword sets must be non-empty");
                }
                for w in set {
                    let toks: Vec<String> = tokenize(w).collect();
                    if toks.len() != 1 || toks[0] != *w {
                        return bad("synth.keywords", "keywords must be single lowercase tokens");
                    }
                    if !seen.insert(w.clone()) {
                        return bad("synth.keywords", "keyword sets must be disjoint");
                    }
                }
            }
        }
        Ok(())
    }
}

fn zipf_cdf(n: usize) -> Vec<f64> {
    let mut acc = 0.0;
    let mut cdf: Vec<f64> = (1..=n)
        .map(|r| {
            acc += 1.0 / r as f64;
            acc
        })
        .collect();
    cdf.iter_mut().for_each(|c| *c /= acc);
    cdf
}

fn draw(cdf: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let u: f64 = rng.gen();
    cdf.partition_point(|&c| c < u).min(cdf.len() - 1)
}

pub fn synth_corpus(spec: &SynthCorpusSpec, seed: u64) -> Result<SynthCorpus> {
    spec.validate()?;
    let mut next = 0usize;
    let mut fresh = |taken: &std::collections::HashSet<String>| loop {
        let w = pseudo_word(next);
        next += 1;
        if !taken.contains(&w) {
            return w;
        }
    };
    let mut taken: std::collections::HashSet<String> =
        spec.keywords.iter().flatten().cloned().collect();
    let keywords: Vec<Vec<String>> = if spec.keywords.is_empty() {
        (0..spec.classes)
            .map(|_| {
                (0..spec.keywords_per_class)
                    .map(|_| {
                        let w = fresh(&taken);
                        taken.insert(w.clone());
                        w
                    })
                    .collect()
            })
            .collect()
    } else {
        spec.keywords.clone()
    };
    let fillers: Vec<String> = (0..spec.vocab_size)
        .map(|_| {
            let w = fresh(&taken);
            taken.insert(w.clone());
            w
        })
        .collect();
    let mut synonyms = std::collections::BTreeMap::new();
    for w in keywords.iter().flatten().chain(&fillers) {
        let syns: Vec<String> = (0..spec.synonyms_per_word)
            .map(|_| {
                let s = fresh(&taken);
                taken.insert(s.clone());
                s
            })
            .collect();
        synonyms.insert(w.clone(), syns);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cdf = zipf_cdf(fillers.len());
    let sample = |rng: &mut ChaCha8Rng| -> Example {
        let y = rng.gen_range(0..spec.classes);
        let len = rng.gen_range(spec.min_len..=spec.max_len);
        let mut words: Vec<String> = Vec::with_capacity(len);
        for _ in 0..len - spec.keywords_per_sample {
            let f = &fillers[draw(&cdf, rng)];
            let syns = &synonyms[f];
            if !syns.is_empty() && rng.gen::<f64>() < spec.synonym_rate {
                words.push(syns[rng.gen_range(0..syns.len())].clone());
            } else {
                words.push(f.clone());
            }
        }
        for _ in 0..spec.keywords_per_sample {
            let set = &keywords[y];
            let pos = rng.gen_range(0..=words.len());
            words.insert(pos, set[rng.gen_range(0..set.len())].clone());
        }
        let label = if rng.gen::<f64>() < spec.label_noise {
            rng.gen_range(0..spec.classes)
        } else {
            y
        };
        Example {
            text: words.join(" "),
            label,
        }
    };
    let train: Vec<Example> = (0..spec.train).map(|_| sample(&mut rng)).collect();
    let test: Vec<Example> = (0..spec.test).map(|_| sample(&mut rng)).collect();

    let mut frequencies = std::collections::BTreeMap::<String, u64>::new();
    for ex in &train {
        for t in tokenize(&ex.text) {
            *frequencies.entry(t).or_insert(0) += 1;
        }
    }
    let table_text: String = frequencies
        .iter()
        .map(|(t, c)| format!("{t}\t{c}\n"))
        .collect();
    let lexicon_text = synonyms
        .iter()
        .filter(|(_, s)| !s.is_empty())
        .map(|(w, s)| format!("{w}\t{}\n", s.join(",")))
        .collect();
    Ok(SynthCorpus {
        train,
        test,
        keywords,
        fillers,
        lexicon_text,
        frequencies: FrequencyTable::parse(&table_text)?,
    })
}

impl SynthCorpus {
    /// Sorted vocabulary over every generated word, including synonyms that
    /// never occur in the corpus.
    pub fn vocabulary(&self) -> Vocabulary {
        let mut words: BTreeSet<&str> = self
            .keywords
            .iter()
            .flatten()
            .chain(&self.fillers)
            .map(String::as_str)
            .collect();
        for line in self.lexicon_text.lines() {
            if let Some((_, syns)) = line.split_once('\t') {
                words.extend(syns.split(','));
            }
        }
        Vocabulary::from_tokens(words)
    }

    pub fn lexicon(&self, vocab: &Vocabulary) -> Result<SynonymLexicon> {
        Ok(SynonymLexicon::parse(&self.lexicon_text, vocab)?.0)
    }
}
