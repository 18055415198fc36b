//! The standard toy fixture: a synthetic corpus, a model trained on it, and
//! attacked detection sets built from its train and test splits.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use std::path::Path;

use super::dataset::{build_vocabulary, read_dataset, Example};
use super::synth::{synth_corpus, SynthCorpus, SynthCorpusSpec};
use crate::attacks::{
    apply_suffix, concat_universal, pgd_embedding_attack, pwws_substitute_gated, AttackConfig,
    AttackKind, Gate, NoGate, SynonymLexicon, ThresholdGate,
};
use crate::detectors::{
    fit_mahalanobis, fit_ngram_lm, train_residue, uncertainty_score_embedded, DetectorKind,
    FgwsDetector, FrequencyTable, MahalanobisModel, NGramLM, ResidueDetector, ResidueTrainConfig,
    UncertaintyMeasure,
};
use crate::error::{Error, Result};
use crate::eval::{evaluate_detection, perturbation_norms, DetectionReport, Label, NormSummary};
use crate::model::{
    ClassifierModel, EmbeddingSequence, Head, ModelConfig, Target, TokenId, TokenSequence,
    TrainConfig, Vocabulary,
};
use crate::numerics::norm_l2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixtureSpec {
    pub synth: SynthCorpusSpec,
    pub model: ModelConfig,
    pub train: TrainConfig,
    /// Substitution budget N.
    pub edits: usize,
    pub concat_words: usize,
    /// Inputs used to search the universal suffix.
    pub concat_search: usize,
    /// Draw suffix words from the synonym lexicon only.
    pub concat_lexicon_pool: bool,
    /// PGD radius as a fraction of the input-embedding RMS.
    pub pgd_scale: f64,
    pub pgd_steps: usize,
    /// PGD step size as a multiple of the radius.
    pub pgd_step: f64,
    pub mc_samples: usize,
    pub residue: ResidueTrainConfig,
    /// Training sentences attacked to build the detector-training set.
    pub detector_train: usize,
    /// Strength of the frequency direction planted in the initial
    /// input-embedding table.
    pub rarity_offset: f64,
    pub seed: u64,
}

impl Default for FixtureSpec {
    fn default() -> Self {
        Self {
            synth: SynthCorpusSpec::default(),
            model: ModelConfig {
                head: Head::Classification { classes: 4 },
                ..Default::default()
            },
            train: TrainConfig::default(),
            edits: 4,
            concat_words: 3,
            concat_search: 200,
            concat_lexicon_pool: true,
            pgd_scale: 0.1,
            pgd_steps: 10,
            pgd_step: 1000.0,
            mc_samples: 16,
            residue: ResidueTrainConfig {
                lr: 0.1,
                epochs: 200,
                batch_size: 32,
                standardize: true,
                ..Default::default()
            },
            detector_train: 1000,
            rarity_offset: 3.0,
            seed: 0,
        }
    }
}

pub struct Fixture {
    pub spec: FixtureSpec,
    pub frequencies: FrequencyTable,
    pub vocab: Vocabulary,
    pub lexicon: SynonymLexicon,
    pub model: ClassifierModel,
    pub train: Vec<(TokenSequence, usize)>,
    pub test: Vec<(TokenSequence, usize)>,
}

/// Labeled splits with their lexicon and frequency table, from a synthetic
/// spec or from files.
#[derive(Debug, Clone)]
pub struct CorpusParts {
    pub train: Vec<Example>,
    pub test: Vec<Example>,
    pub lexicon_text: String,
    pub frequencies: FrequencyTable,
    pub vocab: Vocabulary,
}

impl From<SynthCorpus> for CorpusParts {
    fn from(c: SynthCorpus) -> Self {
        let vocab = c.vocabulary();
        Self {
            train: c.train,
            test: c.test,
            lexicon_text: c.lexicon_text,
            frequencies: c.frequencies,
            vocab,
        }
    }
}

impl CorpusParts {
    /// Vocabulary spans both splits and every lexicon word. Without a
    /// frequency table one is counted from the training split.
    pub fn from_files(
        train: &Path,
        test: &Path,
        lexicon: &Path,
        frequencies: Option<&Path>,
    ) -> Result<Self> {
        let train = read_dataset(train)?;
        let test = read_dataset(test)?;
        let lexicon_text = std::fs::read_to_string(lexicon).map_err(|e| Error::io(lexicon, e))?;
        let lexicon_words = lexicon_text
            .lines()
            .filter_map(|l| l.split_once('\t'))
            .flat_map(|(w, syns)| std::iter::once(w).chain(syns.split(',')));
        let vocab = build_vocabulary(
            train
                .iter()
                .chain(&test)
                .map(|e| e.text.as_str())
                .chain(lexicon_words),
        );
        let frequencies = match frequencies {
            Some(p) => FrequencyTable::load(p)?,
            None => {
                let seqs = train
                    .iter()
                    .map(|e| vocab.encode(&e.text))
                    .collect::<Result<Vec<_>>>()?;
                FrequencyTable::from_corpus(&seqs, &vocab)
            }
        };
        Ok(Self {
            train,
            test,
            lexicon_text,
            frequencies,
            vocab,
        })
    }
}

/// Shifts every initial word vector along one fixed unit direction by
/// `strength · (1 − ln(1 + c_w) / ln(1 + c_max))`, so rarer words sit
/// further along it, as in embedding tables pretrained on natural text.
pub fn pretrained(
    model: ClassifierModel,
    frequencies: &FrequencyTable,
    strength: f64,
    seed: u64,
) -> Result<ClassifierModel> {
    if strength == 0.0 {
        return Ok(model);
    }
    let vocab = model.vocab().clone();
    let counts = frequencies.by_id(&vocab);
    let c_max = counts.iter().copied().max().unwrap_or(0) as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5EED);
    let din = model.config().embed_dim;
    let mut u: Vec<f64> = (0..din).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let norm = norm_l2(&u);
    u.iter_mut().for_each(|v| *v /= norm);
    let mut params = model.params().clone();
    for id in vocab.content_ids() {
        let rarity = 1.0 - (1.0 + counts[id as usize] as f64).ln() / (1.0 + c_max).ln();
        for (e, d) in params.embeddings.row_mut(id as usize).iter_mut().zip(&u) {
            *e += strength * rarity * d;
        }
    }
    ClassifierModel::from_parameters(vocab, model.config().clone(), params)
}

/// An original input and its attacked counterpart.
#[derive(Debug, Clone, PartialEq)]
pub struct Pair {
    pub label: usize,
    pub orig: EmbeddingSequence,
    pub adv: EmbeddingSequence,
    pub orig_tokens: Option<TokenSequence>,
    pub adv_tokens: Option<TokenSequence>,
    pub success: bool,
}

/// Attack outcomes over the originally correct part of a split.
#[derive(Debug, Clone, PartialEq)]
pub struct AttackedSet {
    pub kind: AttackKind,
    pub attempted: usize,
    pub pairs: Vec<Pair>,
}

impl AttackedSet {
    pub fn fooled(&self) -> usize {
        self.pairs.iter().filter(|p| p.success).count()
    }

    pub fn fooling_rate(&self) -> Result<f64> {
        if self.attempted == 0 {
            return Err(Error::DegenerateInput(
                "no originally correct samples to attack".into(),
            ));
        }
        Ok(self.fooled() as f64 / self.attempted as f64)
    }

    /// Only the pairs whose attack succeeded.
    pub fn successful(&self) -> Vec<&Pair> {
        self.pairs.iter().filter(|p| p.success).collect()
    }

    pub fn norms(&self) -> Result<NormSummary> {
        let ok = self.successful();
        let o: Vec<EmbeddingSequence> = ok.iter().map(|p| p.orig.clone()).collect();
        let a: Vec<EmbeddingSequence> = ok.iter().map(|p| p.adv.clone()).collect();
        perturbation_norms(&o, &a)
    }
}

fn encode_split(vocab: &Vocabulary, data: &[Example]) -> Result<Vec<(TokenSequence, usize)>> {
    data.iter()
        .map(|ex| Ok((vocab.encode(&ex.text)?, ex.label)))
        .collect()
}

impl Fixture {
    /// Synthetic corpus from `spec.synth`, then a freshly trained model.
    pub fn build(spec: &FixtureSpec) -> Result<Self> {
        let corpus = synth_corpus(&spec.synth, spec.seed)?;
        Self::assemble(spec, corpus.into(), None)
    }

    /// Wraps `parts`; trains a model unless one is given, in which case its
    /// vocabulary must cover the corpus.
    pub fn assemble(
        spec: &FixtureSpec,
        parts: CorpusParts,
        model: Option<ClassifierModel>,
    ) -> Result<Self> {
        let vocab = match &model {
            Some(m) => m.vocab().clone(),
            None => parts.vocab.clone(),
        };
        let lexicon = SynonymLexicon::parse(&parts.lexicon_text, &vocab)?.0;
        let train = encode_split(&vocab, &parts.train)?;
        let test = encode_split(&vocab, &parts.test)?;
        if train.is_empty() || test.is_empty() {
            return Err(Error::Data(
                "train and test splits must be non-empty".into(),
            ));
        }
        let model = match model {
            Some(m) => m,
            None => {
                let mut mcfg = spec.model.clone();
                mcfg.seed = spec.seed;
                let mut tcfg = spec.train.clone();
                tcfg.seed = spec.seed;
                let init = pretrained(
                    ClassifierModel::new(vocab.clone(), mcfg)?,
                    &parts.frequencies,
                    spec.rarity_offset,
                    spec.seed,
                )?;
                let data: Vec<(TokenSequence, Target)> = train
                    .iter()
                    .map(|(x, y)| (x.clone(), Target::Class(*y)))
                    .collect();
                init.train(&data, &tcfg)?.0
            }
        };
        if model.classes().is_none() {
            return Err(Error::Unsupported(
                "experiments need a classification head".into(),
            ));
        }
        Ok(Self {
            spec: spec.clone(),
            frequencies: parts.frequencies,
            vocab,
            lexicon,
            model,
            train,
            test,
        })
    }

    pub fn detector_split(&self) -> &[(TokenSequence, usize)] {
        &self.train[..self.spec.detector_train.min(self.train.len())]
    }

    /// Root-mean-square entry of the input-embedding table over content words.
    pub fn embedding_rms(&self) -> f64 {
        let table = &self.model.params().embeddings;
        let mut s = 0.0;
        let mut n = 0usize;
        for id in self.vocab.content_ids() {
            for v in table.row(id as usize) {
                s += v * v;
                n += 1;
            }
        }
        (s / n.max(1) as f64).sqrt()
    }

    pub fn pgd_config(&self) -> AttackConfig {
        let eps = self.spec.pgd_scale * self.embedding_rms();
        AttackConfig::pgd(eps, self.spec.pgd_step * eps, self.spec.pgd_steps)
    }

    fn correct<'a>(
        &self,
        data: &'a [(TokenSequence, usize)],
    ) -> Result<Vec<&'a (TokenSequence, usize)>> {
        let flags = data
            .par_iter()
            .map(|(x, y)| Ok(self.model.predict(x)? == *y))
            .collect::<Result<Vec<bool>>>()?;
        Ok(data
            .iter()
            .zip(flags)
            .filter(|(_, ok)| *ok)
            .map(|(d, _)| d)
            .collect())
    }

    fn token_pair(
        &self,
        x: &TokenSequence,
        adv: TokenSequence,
        y: usize,
        success: bool,
    ) -> Result<Pair> {
        Ok(Pair {
            label: y,
            orig: self.model.embed(x)?,
            adv: self.model.embed(&adv)?,
            orig_tokens: Some(x.clone()),
            adv_tokens: Some(adv),
            success,
        })
    }

    pub fn substitution_set(
        &self,
        data: &[(TokenSequence, usize)],
        gate: &dyn Gate<TokenSequence>,
    ) -> Result<AttackedSet> {
        self.substitution_budget(data, gate, self.spec.edits)
    }

    pub fn substitution_budget(
        &self,
        data: &[(TokenSequence, usize)],
        gate: &dyn Gate<TokenSequence>,
        edits: usize,
    ) -> Result<AttackedSet> {
        let correct = self.correct(data)?;
        let pairs = correct
            .par_iter()
            .map(|(x, y)| {
                let r = pwws_substitute_gated(&self.model, x, *y, edits, &self.lexicon, gate)?;
                self.token_pair(x, r.perturbed, *y, r.success)
            })
            .collect::<Result<Vec<Pair>>>()?;
        Ok(AttackedSet {
            kind: AttackKind::Substitution,
            attempted: correct.len(),
            pairs,
        })
    }

    /// Universal suffix searched on the first `concat_search` detector-split
    /// inputs.
    pub fn concat_suffix(&self) -> Result<Vec<TokenId>> {
        let n = self.spec.concat_search.min(self.train.len());
        let data: Vec<(TokenSequence, Target)> = self.train[..n]
            .iter()
            .map(|(x, y)| (x.clone(), Target::Class(*y)))
            .collect();
        concat_universal(
            &self.model,
            &data,
            self.spec.concat_words,
            self.lexicon_pool().as_deref(),
        )
    }

    /// Suffix candidates: every synonym in the lexicon when
    /// `concat_lexicon_pool` is set, otherwise the whole vocabulary.
    pub fn lexicon_pool(&self) -> Option<Vec<TokenId>> {
        self.spec.concat_lexicon_pool.then(|| {
            let mut ids: Vec<TokenId> = self
                .lexicon
                .iter()
                .flat_map(|(_, c)| c.iter().copied())
                .collect();
            ids.sort_unstable();
            ids.dedup();
            ids
        })
    }

    pub fn concat_set(
        &self,
        data: &[(TokenSequence, usize)],
        suffix: &[TokenId],
    ) -> Result<AttackedSet> {
        let correct = self.correct(data)?;
        let targets: Vec<(TokenSequence, Target)> = correct
            .iter()
            .map(|(x, y)| (x.clone(), Target::Class(*y)))
            .collect();
        let pairs = apply_suffix(&self.model, &targets, suffix)?
            .into_iter()
            .zip(&correct)
            .map(|(r, (x, y))| self.token_pair(x, r.perturbed, *y, r.success))
            .collect::<Result<Vec<Pair>>>()?;
        Ok(AttackedSet {
            kind: AttackKind::Concatenation,
            attempted: correct.len(),
            pairs,
        })
    }

    pub fn pgd_set(&self, data: &[(TokenSequence, usize)]) -> Result<AttackedSet> {
        let cfg = self.pgd_config();
        let correct = self.correct(data)?;
        let pairs = correct
            .par_iter()
            .map(|(x, y)| {
                let h = self.model.embed(x)?;
                let r = pgd_embedding_attack(&self.model, &h, Target::Class(*y), &cfg)?;
                Ok(Pair {
                    label: *y,
                    orig: h,
                    adv: r.perturbed,
                    orig_tokens: Some(x.clone()),
                    adv_tokens: None,
                    success: r.success,
                })
            })
            .collect::<Result<Vec<Pair>>>()?;
        Ok(AttackedSet {
            kind: AttackKind::Pgd,
            attempted: correct.len(),
            pairs,
        })
    }

    pub fn unconstrained_substitution(
        &self,
        data: &[(TokenSequence, usize)],
    ) -> Result<AttackedSet> {
        self.substitution_set(data, &NoGate)
    }

    /// Sentence embeddings of the clean training split.
    pub fn train_embeddings(&self) -> Result<(Vec<Vec<f64>>, Vec<usize>)> {
        let e = self
            .train
            .par_iter()
            .map(|(x, _)| self.model.encode_tokens(x))
            .collect::<Result<Vec<_>>>()?;
        Ok((e, self.train.iter().map(|(_, y)| *y).collect()))
    }
}

/// Balanced detection data: every successful pair contributes its original
/// and its adversarial side.
#[derive(Debug, Clone)]
pub struct DetectionSet {
    pub inputs: Vec<EmbeddingSequence>,
    pub tokens: Vec<Option<TokenSequence>>,
    pub embeddings: Vec<Vec<f64>>,
    pub labels: Vec<Label>,
}

impl DetectionSet {
    pub fn from_attacked(model: &ClassifierModel, set: &AttackedSet) -> Result<Self> {
        let ok = set.successful();
        if ok.is_empty() {
            return Err(Error::DegenerateInput(format!(
                "{} attack produced no successful examples",
                set.kind.name()
            )));
        }
        let mut inputs = Vec::with_capacity(2 * ok.len());
        let mut tokens = Vec::with_capacity(2 * ok.len());
        let mut labels = Vec::with_capacity(2 * ok.len());
        for p in ok {
            inputs.push(p.orig.clone());
            tokens.push(p.orig_tokens.clone());
            labels.push(Label::Original);
            inputs.push(p.adv.clone());
            tokens.push(p.adv_tokens.clone());
            labels.push(Label::Adversarial);
        }
        let embeddings = inputs
            .par_iter()
            .map(|h| model.encode(h))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            inputs,
            tokens,
            embeddings,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn has_tokens(&self) -> bool {
        self.tokens.iter().all(Option::is_some)
    }
}

/// Every detector, fitted once on the fixture.
pub struct DetectorSuite {
    pub residue: ResidueDetector,
    pub mahalanobis: MahalanobisModel,
    pub measure: UncertaintyMeasure,
    pub ngram: NGramLM,
    pub fgws: FgwsDetector,
    pub mc_samples: usize,
    pub seed: u64,
}

pub const NGRAM_ORDER: usize = 2;

fn mc_seed(seed: u64, i: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(i as u64)
}

impl DetectorSuite {
    /// Residue detector trained and uncertainty measure chosen on `train`;
    /// Mahalanobis, n-gram and FGWS fitted on the clean training split.
    pub fn fit(fixture: &Fixture, train: &DetectionSet) -> Result<Self> {
        Self::fit_with(fixture, train, &fixture.spec.residue)
    }

    pub fn fit_with(
        fixture: &Fixture,
        train: &DetectionSet,
        cfg: &ResidueTrainConfig,
    ) -> Result<Self> {
        let mut cfg = cfg.clone();
        cfg.seed = fixture.spec.seed;
        let (residue, _) = train_residue(&train.embeddings, &train.labels, &cfg)?;
        let (clean, ys) = fixture.train_embeddings()?;
        let classes = fixture.model.classes().unwrap_or(1);
        let mahalanobis = fit_mahalanobis(&clean, &ys, classes)?;
        let seqs: Vec<TokenSequence> = fixture.train.iter().map(|(x, _)| x.clone()).collect();
        let ngram = fit_ngram_lm(&seqs, NGRAM_ORDER, fixture.vocab.len())?;
        let fgws = FgwsDetector::new(&fixture.frequencies, &fixture.vocab, &fixture.lexicon, None)?;
        let mut suite = Self {
            residue,
            mahalanobis,
            measure: UncertaintyMeasure::MutualInformation,
            ngram,
            fgws,
            mc_samples: fixture.spec.mc_samples,
            seed: fixture.spec.seed,
        };
        let mut best: Option<(f64, UncertaintyMeasure)> = None;
        for m in UncertaintyMeasure::ALL {
            suite.measure = m;
            let scores = suite.scores(fixture, DetectorKind::Uncertainty, train)?;
            let f1 = evaluate_detection(m.name(), &scores, &train.labels)?.best_f1;
            if best.is_none_or(|(b, _)| f1 > b) {
                best = Some((f1, m));
            }
        }
        suite.measure = best.expect("measures").1;
        Ok(suite)
    }

    pub fn scores(
        &self,
        fixture: &Fixture,
        kind: DetectorKind,
        set: &DetectionSet,
    ) -> Result<Vec<f64>> {
        let model = &fixture.model;
        (0..set.len())
            .into_par_iter()
            .map(|i| {
                let tokens = || {
                    set.tokens[i].as_ref().ok_or_else(|| {
                        Error::Unsupported(format!("{} needs token inputs", kind.name()))
                    })
                };
                match kind {
                    DetectorKind::Residue => self.residue.score(&set.embeddings[i]),
                    DetectorKind::Mahalanobis => self.mahalanobis.score(&set.embeddings[i]),
                    DetectorKind::Uncertainty => uncertainty_score_embedded(
                        model,
                        &set.inputs[i],
                        self.measure,
                        self.mc_samples,
                        mc_seed(self.seed, i),
                    ),
                    DetectorKind::Perplexity => self.ngram.perplexity(tokens()?),
                    DetectorKind::Fgws => self.fgws.score(model, tokens()?),
                }
            })
            .collect()
    }

    pub fn evaluate(
        &self,
        fixture: &Fixture,
        kind: DetectorKind,
        set: &DetectionSet,
    ) -> Result<DetectionReport> {
        let scores = self.scores(fixture, kind, set)?;
        let name = match kind {
            DetectorKind::Uncertainty => format!("uncertainty:{}", self.measure.name()),
            _ => kind.name().to_string(),
        };
        evaluate_detection(&name, &scores, &set.labels)
    }

    /// Gate that rejects candidates the residue detector scores above `beta`.
    pub fn residue_gate<'a>(
        &'a self,
        model: &'a ClassifierModel,
        beta: f64,
    ) -> ThresholdGate<impl Fn(&TokenSequence) -> Result<f64> + Sync + 'a> {
        ThresholdGate::new(
            move |x: &TokenSequence| self.residue.score(&model.encode_tokens(x)?),
            beta,
        )
    }
}
