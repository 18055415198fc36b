//! Experiment pipelines over one fixture. Every report is a pure function of
//! the configuration and seed; wall-clock data only goes to the manifest.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::OnceLock;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::fixture::{AttackedSet, CorpusParts, DetectionSet, DetectorSuite, Fixture, FixtureSpec};
use super::grids::{synth_grids, SynthGridSpec};
use super::plot::{line_plot, Series};
use crate::analysis::{
    argmax_by, component_profile, fit_pca, n_sigma, profile_csv, sweep_csv, window_sweep, NSigma,
    PCAModel, ResidueProfile, SweepData, SweepRecord, DEFAULT_WINDOW,
};
use crate::attacks::{apply_suffix, concat_universal, discrete_grid_attack, AttackKind, NoGate};
use crate::detectors::{
    fit_mahalanobis, train_residue, DetectorKind, ResidueTrainConfig, UncertaintyMeasure,
};
use crate::error::{Error, Result};
use crate::eval::{evaluate_detection, mean_score_shift, DetectionReport, Label};
use crate::model::{
    ClassifierModel, Grid, GridModel, GridModelConfig, Head, Target, TokenId, TokenSequence,
    TrainConfig,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ExperimentId {
    #[serde(rename = "table3")]
    Table3,
    #[serde(rename = "table4")]
    Table4,
    #[serde(rename = "table5")]
    Table5,
    #[serde(rename = "fig1")]
    Fig1,
    #[serde(rename = "fig2")]
    Fig2,
    #[serde(rename = "table6")]
    Table6,
    #[serde(rename = "table8-analog")]
    Table8Analog,
    #[serde(rename = "transfer")]
    Transfer,
}

impl ExperimentId {
    pub const ALL: [ExperimentId; 8] = [
        ExperimentId::Table3,
        ExperimentId::Table4,
        ExperimentId::Table5,
        ExperimentId::Fig1,
        ExperimentId::Fig2,
        ExperimentId::Table6,
        ExperimentId::Table8Analog,
        ExperimentId::Transfer,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ExperimentId::Table3 => "table3",
            ExperimentId::Table4 => "table4",
            ExperimentId::Table5 => "table5",
            ExperimentId::Fig1 => "fig1",
            ExperimentId::Fig2 => "fig2",
            ExperimentId::Table6 => "table6",
            ExperimentId::Table8Analog => "table8-analog",
            ExperimentId::Transfer => "transfer",
        }
    }
}

impl std::str::FromStr for ExperimentId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|e| e.name() == s)
            .ok_or_else(|| {
                let known: Vec<&str> = Self::ALL.iter().map(|e| e.name()).collect();
                Error::config(
                    "experiment.id",
                    format!(
                        "unknown experiment `{s}` (expected one of {})",
                        known.join(", ")
                    ),
                )
            })
    }
}

/// Files standing in for the synthetic corpus and freshly trained model.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DataPaths {
    pub train: Option<PathBuf>,
    pub test: Option<PathBuf>,
    pub lexicon: Option<PathBuf>,
    pub frequencies: Option<PathBuf>,
    pub model: Option<PathBuf>,
}

/// Image-analog domain: synthetic quantized grids and their classifier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSettings {
    pub data: SynthGridSpec,
    pub model: GridModelConfig,
    pub train: TrainConfig,
    pub edits: usize,
}

impl Default for GridSettings {
    fn default() -> Self {
        Self {
            data: SynthGridSpec::default(),
            model: GridModelConfig::default(),
            train: TrainConfig {
                lr: 0.05,
                epochs: 30,
                batch_size: 32,
                seed: 0,
            },
            edits: 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub experiment: Option<ExperimentId>,
    pub fixture: FixtureSpec,
    pub grid: GridSettings,
    pub data: DataPaths,
    pub detectors: Vec<DetectorKind>,
    /// Adversary's residue threshold; the defender's best-F1 β when unset.
    pub adversary_beta: Option<f64>,
    /// Substitution budgets swept by the attack-impact table.
    pub budgets: Vec<usize>,
    pub window: usize,
    /// 1-based inclusive rank range summed for the residue-location check.
    pub central_ranks: (usize, usize),
    pub out: PathBuf,
    pub threads: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            experiment: None,
            fixture: FixtureSpec::default(),
            grid: GridSettings::default(),
            data: DataPaths::default(),
            detectors: DetectorKind::ALL.to_vec(),
            adversary_beta: None,
            budgets: (1..=6).collect(),
            window: DEFAULT_WINDOW,
            central_ranks: (5, 15),
            out: PathBuf::from("out"),
            threads: 1,
        }
    }
}

impl ExperimentConfig {
    pub fn seed(&self) -> u64 {
        self.fixture.seed
    }

    pub fn set_seed(&mut self, seed: u64) {
        self.fixture.seed = seed;
    }

    /// Input files referenced by the configuration.
    pub fn inputs(&self) -> Vec<PathBuf> {
        let d = &self.data;
        [&d.train, &d.test, &d.lexicon, &d.frequencies, &d.model]
            .into_iter()
            .flatten()
            .cloned()
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.threads == 0 {
            return Err(Error::config("experiment.threads", "must be at least 1"));
        }
        if self.detectors.is_empty() {
            return Err(Error::config(
                "detector.detectors",
                "need at least one detector",
            ));
        }
        let (lo, hi) = self.central_ranks;
        if lo == 0 || lo > hi {
            return Err(Error::config("analysis.ranks", "need 1 <= first <= last"));
        }
        if self.window == 0 {
            return Err(Error::config("analysis.window", "must be positive"));
        }
        if self.budgets.is_empty() {
            return Err(Error::config("attack.budgets", "need at least one budget"));
        }
        let f = &self.fixture;
        if f.mc_samples < 2 {
            return Err(Error::config(
                "detector.mc_samples",
                "need at least 2 MC samples",
            ));
        }
        if !(f.pgd_scale >= 0.0 && f.pgd_scale.is_finite()) {
            return Err(Error::config(
                "attack.pgd_scale",
                "must be finite and non-negative",
            ));
        }
        if !(f.pgd_step > 0.0 && f.pgd_step.is_finite()) {
            return Err(Error::config(
                "attack.pgd_step",
                "must be finite and positive",
            ));
        }
        if f.detector_train == 0 {
            return Err(Error::config("detector.detector_train", "must be positive"));
        }
        let d = &self.data;
        let files = [&d.train, &d.test, &d.lexicon];
        let given = files.iter().filter(|p| p.is_some()).count();
        if given != 0 && given != 3 {
            return Err(Error::config(
                "data.train",
                "data.train, data.test and data.lexicon must be given together",
            ));
        }
        for (key, p) in [
            ("data.train", &d.train),
            ("data.test", &d.test),
            ("data.lexicon", &d.lexicon),
            ("data.frequencies", &d.frequencies),
            ("data.model", &d.model),
        ] {
            if let Some(p) = p {
                if !p.exists() {
                    return Err(Error::config(
                        key,
                        format!("{} does not exist", p.display()),
                    ));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FoolingRow {
    pub budget: usize,
    pub attempted: usize,
    pub fooled: usize,
    pub fooling_rate: f64,
}

impl FoolingRow {
    fn of(budget: usize, set: &AttackedSet) -> Result<Self> {
        Ok(Self {
            budget,
            attempted: set.attempted,
            fooled: set.fooled(),
            fooling_rate: set.fooling_rate()?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorRow {
    pub detector: String,
    pub f1: f64,
    pub precision: f64,
    pub recall: f64,
    /// Best-F1 β; `null` when it is ±∞.
    pub threshold: Option<f64>,
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub tn: usize,
}

impl From<&DetectionReport> for DetectorRow {
    fn from(r: &DetectionReport) -> Self {
        Self {
            detector: r.detector.clone(),
            f1: r.best_f1,
            precision: r.counts.precision(),
            recall: r.counts.recall(),
            threshold: r.threshold.is_finite().then_some(r.threshold),
            tp: r.counts.tp,
            fp: r.counts.fp,
            fn_: r.counts.fn_,
            tn: r.counts.tn,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreShift {
    pub suffix: Vec<String>,
    pub samples: usize,
    pub mean_score_shift: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table3Report {
    pub substitution: Vec<FoolingRow>,
    pub concatenation: Vec<FoolingRow>,
    pub suffix: Vec<String>,
    /// Concatenation against a regression head on the same corpus.
    pub regression: ScoreShift,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table4Report {
    pub attack: String,
    pub attack_result: FoolingRow,
    pub train_pairs: usize,
    pub test_pairs: usize,
    pub uncertainty_measure: String,
    pub detectors: Vec<DetectorRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table5Report {
    pub beta: f64,
    pub beta_source: String,
    pub unconstrained: FoolingRow,
    pub detection_aware: FoolingRow,
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fig1Report {
    pub dim: usize,
    pub originals: usize,
    pub attacked: usize,
    pub central_ranks: (usize, usize),
    pub central_sum: f64,
    pub n_sigma: NSigma,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fig2Report {
    pub width: usize,
    pub argmax_accuracy_p: usize,
    pub argmax_f1_p: usize,
    pub records: Vec<SweepRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MagnitudeRow {
    pub attack: String,
    pub budget: f64,
    pub fooling_rate: f64,
    pub n_sigma: NSigma,
    pub pairs: usize,
    pub l2_mean: f64,
    pub l2_std: f64,
    pub linf_mean: f64,
    pub linf_std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table6Report {
    pub embedding_rms: f64,
    pub rows: Vec<MagnitudeRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainRow {
    pub domain: String,
    pub attack: String,
    pub fooling_rate: f64,
    pub test_pairs: usize,
    pub residue: f64,
    pub mahalanobis: f64,
    pub uncertainty: f64,
    /// residue − max(mahalanobis, uncertainty)
    pub residue_margin: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table8Report {
    pub grid_accuracy: f64,
    pub rows: Vec<DomainRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferReport {
    pub suffix: Vec<String>,
    pub concatenation: FoolingRow,
    pub substitution_f1: f64,
    pub concatenation_f1: f64,
    pub ratio: f64,
}

/// Original/attacked pair sets on the detector-training and test splits.
pub struct Attacked {
    pub train: AttackedSet,
    pub test: AttackedSet,
    pub det_train: DetectionSet,
    pub det_test: DetectionSet,
}

struct GridDomain {
    accuracy: f64,
    row: DomainRow,
}

fn cached<T>(cell: &OnceLock<T>, f: impl FnOnce() -> Result<T>) -> Result<&T> {
    if let Some(v) = cell.get() {
        return Ok(v);
    }
    let v = f()?;
    Ok(cell.get_or_init(|| v))
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex(&Sha256::digest(bytes))
}

fn json(value: &impl Serialize) -> Result<Vec<u8>> {
    let mut v = serde_json::to_vec_pretty(value)?;
    v.push(b'\n');
    Ok(v)
}

/// Output files of one experiment, by stable name.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Artifacts {
    pub files: BTreeMap<String, Vec<u8>>,
}

impl Artifacts {
    fn add(&mut self, name: impl Into<String>, bytes: Vec<u8>) {
        self.files.insert(name.into(), bytes);
    }

    pub fn report<T: serde::de::DeserializeOwned>(&self) -> Result<T> {
        let bytes = self
            .files
            .get("report.json")
            .ok_or_else(|| Error::Data("no report.json".into()))?;
        Ok(serde_json::from_slice(bytes)?)
    }
}

/// Lazily computed attacks, detectors and analyses shared by experiments.
pub struct Session {
    pub config: ExperimentConfig,
    pub fixture: Fixture,
    substitution: OnceLock<Attacked>,
    suite: OnceLock<DetectorSuite>,
    pgd: OnceLock<Attacked>,
    pgd_suite: OnceLock<DetectorSuite>,
    suffix: OnceLock<Vec<TokenId>>,
    concat: OnceLock<Attacked>,
    pca: OnceLock<PCAModel>,
    grid: OnceLock<GridDomain>,
}

impl Session {
    pub fn open(config: &ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let spec = &config.fixture;
        let d = &config.data;
        let parts: CorpusParts = match (&d.train, &d.test, &d.lexicon) {
            (Some(tr), Some(te), Some(lx)) => {
                CorpusParts::from_files(tr, te, lx, d.frequencies.as_deref())?
            }
            _ => super::synth_corpus(&spec.synth, spec.seed)?.into(),
        };
        let model = d.model.as_deref().map(ClassifierModel::load).transpose()?;
        let fixture = Fixture::assemble(spec, parts, model)?;
        Ok(Self::with_fixture(config, fixture))
    }

    pub fn with_fixture(config: &ExperimentConfig, fixture: Fixture) -> Self {
        Self {
            config: config.clone(),
            fixture,
            substitution: OnceLock::new(),
            suite: OnceLock::new(),
            pgd: OnceLock::new(),
            pgd_suite: OnceLock::new(),
            suffix: OnceLock::new(),
            concat: OnceLock::new(),
            pca: OnceLock::new(),
            grid: OnceLock::new(),
        }
    }

    fn attacked(&self, train: AttackedSet, test: AttackedSet) -> Result<Attacked> {
        let model = &self.fixture.model;
        Ok(Attacked {
            det_train: DetectionSet::from_attacked(model, &train)?,
            det_test: DetectionSet::from_attacked(model, &test)?,
            train,
            test,
        })
    }

    pub fn substitution(&self) -> Result<&Attacked> {
        cached(&self.substitution, || {
            let fx = &self.fixture;
            self.attacked(
                fx.unconstrained_substitution(fx.detector_split())?,
                fx.unconstrained_substitution(&fx.test)?,
            )
        })
    }

    /// Detectors fitted on the substitution detector-training set.
    pub fn suite(&self) -> Result<&DetectorSuite> {
        cached(&self.suite, || {
            DetectorSuite::fit(&self.fixture, &self.substitution()?.det_train)
        })
    }

    pub fn pgd(&self) -> Result<&Attacked> {
        cached(&self.pgd, || {
            let fx = &self.fixture;
            self.attacked(fx.pgd_set(fx.detector_split())?, fx.pgd_set(&fx.test)?)
        })
    }

    pub fn pgd_suite(&self) -> Result<&DetectorSuite> {
        cached(&self.pgd_suite, || {
            DetectorSuite::fit(&self.fixture, &self.pgd()?.det_train)
        })
    }

    pub fn suffix(&self) -> Result<&Vec<TokenId>> {
        cached(&self.suffix, || self.fixture.concat_suffix())
    }

    pub fn concat(&self) -> Result<&Attacked> {
        cached(&self.concat, || {
            let fx = &self.fixture;
            let suffix = self.suffix()?;
            self.attacked(
                fx.concat_set(fx.detector_split(), suffix)?,
                fx.concat_set(&fx.test, suffix)?,
            )
        })
    }

    /// Fresh attack on the detector-training split (`train`) or the test
    /// split, with the budget it ran under.
    pub fn attack_split(&self, kind: AttackKind, train: bool) -> Result<(AttackedSet, f64)> {
        let fx = &self.fixture;
        let data = if train {
            fx.detector_split()
        } else {
            &fx.test[..]
        };
        Ok(match kind {
            AttackKind::Substitution => (fx.substitution_set(data, &NoGate)?, fx.spec.edits as f64),
            AttackKind::Concatenation => (
                fx.concat_set(data, self.suffix()?)?,
                fx.spec.concat_words as f64,
            ),
            AttackKind::Pgd => (fx.pgd_set(data)?, fx.pgd_config().epsilon()?),
            AttackKind::Grid => {
                return Err(Error::config(
                    "attack.kind",
                    "grid attacks run through `experiment table8-analog`",
                ))
            }
        })
    }

    /// Eigenbasis of the clean training embeddings.
    pub fn pca(&self) -> Result<&PCAModel> {
        cached(&self.pca, || fit_pca(&self.fixture.train_embeddings()?.0))
    }

    fn words(&self, ids: &[TokenId]) -> Vec<String> {
        ids.iter()
            .map(|&id| self.fixture.vocab.token(id).unwrap_or("<?>").to_string())
            .collect()
    }

    fn profiles(&self, set: &DetectionSet) -> Result<(ResidueProfile, ResidueProfile)> {
        let pca = self.pca()?;
        let (orig, adv) = split_sides(set);
        Ok((
            component_profile(pca, &orig)?,
            component_profile(pca, &adv)?,
        ))
    }

    pub fn run(&self, id: ExperimentId) -> Result<Artifacts> {
        let mut out = Artifacts::default();
        match id {
            ExperimentId::Table3 => out.add("report.json", json(&self.table3()?)?),
            ExperimentId::Table4 => {
                let (report, curves) = self.table4_with_curves()?;
                out.add("report.json", json(&report)?);
                for (name, csv) in curves {
                    out.add(format!("curve_{name}.csv"), csv.into_bytes());
                }
            }
            ExperimentId::Table5 => out.add("report.json", json(&self.table5()?)?),
            ExperimentId::Fig1 => {
                let report = self.fig1()?;
                let (po, pa) = self.profiles(&self.substitution()?.det_test)?;
                out.add("profile.csv", profile_csv(&po, &pa)?.into_bytes());
                out.add("profile.svg", profile_svg(&po, &pa).into_bytes());
                out.add("report.json", json(&report)?);
            }
            ExperimentId::Fig2 => {
                let report = self.fig2()?;
                out.add("sweep.csv", sweep_csv(&report.records).into_bytes());
                out.add(
                    "sweep.svg",
                    sweep_svg(&report.records, report.width).into_bytes(),
                );
                out.add("report.json", json(&report)?);
            }
            ExperimentId::Table6 => out.add("report.json", json(&self.table6()?)?),
            ExperimentId::Table8Analog => out.add("report.json", json(&self.table8()?)?),
            ExperimentId::Transfer => out.add("report.json", json(&self.transfer()?)?),
        }
        Ok(out)
    }

    pub fn table3(&self) -> Result<Table3Report> {
        let fx = &self.fixture;
        let substitution = self
            .config
            .budgets
            .iter()
            .map(|&n| FoolingRow::of(n, &fx.substitution_budget(&fx.test, &NoGate, n)?))
            .collect::<Result<Vec<_>>>()?;
        // Greedy suffixes nest, so every shorter budget is a prefix.
        let suffix = self.suffix()?;
        let concatenation = (1..=suffix.len())
            .map(|n| FoolingRow::of(n, &fx.concat_set(&fx.test, &suffix[..n])?))
            .collect::<Result<Vec<_>>>()?;
        Ok(Table3Report {
            substitution,
            concatenation,
            suffix: self.words(suffix),
            regression: self.regression_shift()?,
        })
    }

    /// Trains a regression head on class index / (K − 1) and measures the
    /// mean test score increase from a universal suffix that maximizes it.
    fn regression_shift(&self) -> Result<ScoreShift> {
        let fx = &self.fixture;
        let k = fx.model.classes().unwrap_or(2).max(2) as f64;
        let target = |y: usize| Target::Score(y as f64 / (k - 1.0));
        let mut mcfg = fx.spec.model.clone();
        mcfg.head = Head::Regression;
        mcfg.seed = fx.spec.seed;
        let mut tcfg = fx.spec.train.clone();
        tcfg.seed = fx.spec.seed;
        let init = super::fixture::pretrained(
            ClassifierModel::new(fx.vocab.clone(), mcfg)?,
            &fx.frequencies,
            fx.spec.rarity_offset,
            fx.spec.seed,
        )?;
        let data: Vec<(TokenSequence, Target)> = fx
            .train
            .iter()
            .map(|(x, y)| (x.clone(), target(*y)))
            .collect();
        let (model, _) = init.train(&data, &tcfg)?;
        let search = fx.spec.concat_search.min(data.len());
        let suffix = concat_universal(
            &model,
            &data[..search],
            fx.spec.concat_words,
            fx.lexicon_pool().as_deref(),
        )?;
        let test: Vec<(TokenSequence, Target)> = fx
            .test
            .iter()
            .map(|(x, y)| (x.clone(), target(*y)))
            .collect();
        let adv: Vec<TokenSequence> = apply_suffix(&model, &test, &suffix)?
            .into_iter()
            .map(|r| r.perturbed)
            .collect();
        let orig: Vec<TokenSequence> = test.into_iter().map(|(x, _)| x).collect();
        Ok(ScoreShift {
            suffix: self.words(&suffix),
            samples: orig.len(),
            mean_score_shift: mean_score_shift(&model, &orig, &adv)?,
        })
    }

    fn table4_with_curves(&self) -> Result<(Table4Report, Vec<(String, String)>)> {
        let sub = self.substitution()?;
        let suite = self.suite()?;
        let mut rows = Vec::new();
        let mut curves = Vec::new();
        for &kind in &self.config.detectors {
            let r = suite.evaluate(&self.fixture, kind, &sub.det_test)?;
            curves.push((kind.name().to_string(), r.curve_csv()));
            rows.push(DetectorRow::from(&r));
        }
        Ok((
            Table4Report {
                attack: "substitution".into(),
                attack_result: FoolingRow::of(self.fixture.spec.edits, &sub.test)?,
                train_pairs: sub.det_train.len() / 2,
                test_pairs: sub.det_test.len() / 2,
                uncertainty_measure: suite.measure.name().into(),
                detectors: rows,
            },
            curves,
        ))
    }

    pub fn table4(&self) -> Result<Table4Report> {
        Ok(self.table4_with_curves()?.0)
    }

    pub fn table5(&self) -> Result<Table5Report> {
        let fx = &self.fixture;
        let sub = self.substitution()?;
        let suite = self.suite()?;
        let (beta, source) = match self.config.adversary_beta {
            Some(b) => (b, "config"),
            None => (
                suite
                    .evaluate(fx, DetectorKind::Residue, &sub.det_train)?
                    .threshold,
                "residue best-F1 threshold on the detector-training set",
            ),
        };
        if !beta.is_finite() {
            return Err(Error::DegenerateInput(
                "residue threshold is infinite; no usable adversary gate".into(),
            ));
        }
        let gate = suite.residue_gate(&fx.model, beta);
        let aware = fx.substitution_set(&fx.test, &gate)?;
        let unconstrained = FoolingRow::of(fx.spec.edits, &sub.test)?;
        let detection_aware = FoolingRow::of(fx.spec.edits, &aware)?;
        Ok(Table5Report {
            beta,
            beta_source: source.into(),
            ratio: detection_aware.fooling_rate / unconstrained.fooling_rate,
            unconstrained,
            detection_aware,
        })
    }

    pub fn fig1(&self) -> Result<Fig1Report> {
        let sub = self.substitution()?;
        let (po, pa) = self.profiles(&sub.det_test)?;
        let d = po.rho.len();
        let (lo, hi) = self.config.central_ranks;
        if hi > d {
            return Err(Error::config(
                "analysis.ranks",
                format!("rank {hi} exceeds embedding dimension {d}"),
            ));
        }
        let central_sum = (lo - 1..hi).map(|i| pa.rho[i] - po.rho[i]).sum();
        Ok(Fig1Report {
            dim: d,
            originals: po.count,
            attacked: pa.count,
            central_ranks: (lo, hi),
            central_sum,
            n_sigma: n_sigma(&po, &pa, None)?,
        })
    }

    pub fn fig2(&self) -> Result<Fig2Report> {
        let sub = self.substitution()?;
        let (tr_o, tr_a) = split_sides(&sub.det_train);
        let (te_o, te_a) = split_sides(&sub.det_test);
        let labels: Vec<usize> = sub.test.successful().iter().map(|p| p.label).collect();
        let data = SweepData {
            train_orig: &tr_o,
            train_adv: &tr_a,
            test_orig: &te_o,
            test_adv: &te_a,
            test_labels: &labels,
        };
        let mut cfg = self.fixture.spec.residue.clone();
        cfg.seed = self.fixture.spec.seed;
        let records = window_sweep(
            &self.fixture.model,
            self.pca()?,
            data,
            self.config.window,
            &cfg,
        )?;
        let empty = || Error::DegenerateInput("empty window sweep".into());
        Ok(Fig2Report {
            width: self.config.window,
            argmax_accuracy_p: argmax_by(&records, |r| r.accuracy).ok_or_else(empty)?,
            argmax_f1_p: argmax_by(&records, |r| r.f1).ok_or_else(empty)?,
            records,
        })
    }

    pub fn table6(&self) -> Result<Table6Report> {
        let fx = &self.fixture;
        let mut rows = Vec::new();
        for (name, attacked, budget) in [
            ("substitution", self.substitution()?, fx.spec.edits as f64),
            ("pgd", self.pgd()?, fx.pgd_config().epsilon()?),
        ] {
            let (po, pa) = self.profiles(&attacked.det_test)?;
            let norms = attacked.test.norms()?;
            rows.push(MagnitudeRow {
                attack: name.into(),
                budget,
                fooling_rate: attacked.test.fooling_rate()?,
                n_sigma: n_sigma(&po, &pa, None)?,
                pairs: norms.count,
                l2_mean: norms.l2_mean,
                l2_std: norms.l2_std,
                linf_mean: norms.linf_mean,
                linf_std: norms.linf_std,
            });
        }
        Ok(Table6Report {
            embedding_rms: fx.embedding_rms(),
            rows,
        })
    }

    fn text_row(
        &self,
        attack: &str,
        attacked: &Attacked,
        suite: &DetectorSuite,
    ) -> Result<DomainRow> {
        let f1 = |k| -> Result<f64> {
            Ok(suite
                .evaluate(&self.fixture, k, &attacked.det_test)?
                .best_f1)
        };
        let residue = f1(DetectorKind::Residue)?;
        let mahalanobis = f1(DetectorKind::Mahalanobis)?;
        let uncertainty = f1(DetectorKind::Uncertainty)?;
        Ok(DomainRow {
            domain: "text".into(),
            attack: attack.into(),
            fooling_rate: attacked.test.fooling_rate()?,
            test_pairs: attacked.det_test.len() / 2,
            residue,
            mahalanobis,
            uncertainty,
            residue_margin: residue - mahalanobis.max(uncertainty),
        })
    }

    pub fn table8(&self) -> Result<Table8Report> {
        let concat = self.concat()?;
        let concat_suite = DetectorSuite::fit(&self.fixture, &concat.det_train)?;
        let grid = self.grid_domain()?;
        Ok(Table8Report {
            grid_accuracy: grid.accuracy,
            rows: vec![
                self.text_row("substitution", self.substitution()?, self.suite()?)?,
                self.text_row("concatenation", concat, &concat_suite)?,
                self.text_row("pgd", self.pgd()?, self.pgd_suite()?)?,
                grid.row.clone(),
            ],
        })
    }

    pub fn transfer(&self) -> Result<TransferReport> {
        let fx = &self.fixture;
        let suite = self.suite()?;
        let concat = self.concat()?;
        let substitution_f1 = suite
            .evaluate(fx, DetectorKind::Residue, &self.substitution()?.det_test)?
            .best_f1;
        let concatenation_f1 = suite
            .evaluate(fx, DetectorKind::Residue, &concat.det_test)?
            .best_f1;
        Ok(TransferReport {
            suffix: self.words(self.suffix()?),
            concatenation: FoolingRow::of(fx.spec.concat_words, &concat.test)?,
            substitution_f1,
            concatenation_f1,
            ratio: concatenation_f1 / substitution_f1,
        })
    }

    fn grid_domain(&self) -> Result<&GridDomain> {
        cached(&self.grid, || {
            grid_domain(&self.config.grid, &self.fixture.spec)
        })
    }
}

fn split_sides(set: &DetectionSet) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let mut orig = Vec::new();
    let mut adv = Vec::new();
    for (e, l) in set.embeddings.iter().zip(&set.labels) {
        if l.is_adversarial() {
            adv.push(e.clone());
        } else {
            orig.push(e.clone());
        }
    }
    (orig, adv)
}

struct GridPairs {
    embeddings: Vec<Vec<f64>>,
    inputs: Vec<Vec<f64>>,
    labels: Vec<Label>,
    attempted: usize,
}

fn attack_grids(model: &GridModel, data: &[(Grid, usize)], edits: usize) -> Result<GridPairs> {
    let results = data
        .par_iter()
        .map(|(g, y)| {
            if model.predict(g)? != *y {
                return Ok(None);
            }
            Ok(Some(discrete_grid_attack(model, g, *y, edits)?))
        })
        .collect::<Result<Vec<_>>>()?;
    let attempted = results.iter().flatten().count();
    let mut out = GridPairs {
        embeddings: Vec::new(),
        inputs: Vec::new(),
        labels: Vec::new(),
        attempted,
    };
    for r in results.into_iter().flatten().filter(|r| r.success) {
        for (g, l) in [
            (r.original, Label::Original),
            (r.perturbed, Label::Adversarial),
        ] {
            out.embeddings.push(model.encode(&g)?);
            out.inputs.push(g.as_f64());
            out.labels.push(l);
        }
    }
    if out.labels.is_empty() {
        return Err(Error::DegenerateInput(
            "grid attack produced no successful examples".into(),
        ));
    }
    Ok(out)
}

fn mc_all(
    model: &GridModel,
    inputs: &[Vec<f64>],
    m: usize,
    seed: u64,
) -> Result<Vec<Vec<Vec<f64>>>> {
    inputs
        .par_iter()
        .enumerate()
        .map(|(i, x)| {
            model.mc_samples(
                x,
                m,
                seed.wrapping_mul(0x9E37_79B9_7F4A_7C15)
                    .wrapping_add(i as u64),
            )
        })
        .collect()
}

fn measure_scores(samples: &[Vec<Vec<f64>>], m: UncertaintyMeasure) -> Result<Vec<f64>> {
    samples.iter().map(|s| m.compute(s)).collect()
}

fn grid_domain(settings: &GridSettings, spec: &FixtureSpec) -> Result<GridDomain> {
    let seed = spec.seed;
    let (train, test) = synth_grids(&settings.data, seed)?;
    let mut mcfg = settings.model.clone();
    mcfg.side = settings.data.side;
    mcfg.classes = settings.data.classes;
    mcfg.levels = Some(settings.data.levels);
    mcfg.seed = seed;
    let mut tcfg = settings.train.clone();
    tcfg.seed = seed;
    let (model, _) = GridModel::new(mcfg)?.train(&train, &tcfg)?;
    let accuracy = model.accuracy(&test)?;

    let det_train = attack_grids(
        &model,
        &train[..spec.detector_train.min(train.len())],
        settings.edits,
    )?;
    let det_test = attack_grids(&model, &test, settings.edits)?;

    let mut rcfg: ResidueTrainConfig = spec.residue.clone();
    rcfg.seed = seed;
    let (residue, _) = train_residue(&det_train.embeddings, &det_train.labels, &rcfg)?;
    let clean = train
        .iter()
        .map(|(g, _)| model.encode(g))
        .collect::<Result<Vec<_>>>()?;
    let ys: Vec<usize> = train.iter().map(|(_, y)| *y).collect();
    let maha = fit_mahalanobis(&clean, &ys, settings.data.classes)?;

    let mc_train = mc_all(&model, &det_train.inputs, spec.mc_samples, seed)?;
    let mut best: Option<(f64, UncertaintyMeasure)> = None;
    for m in UncertaintyMeasure::ALL {
        let f1 = evaluate_detection(m.name(), &measure_scores(&mc_train, m)?, &det_train.labels)?
            .best_f1;
        if best.is_none_or(|(b, _)| f1 > b) {
            best = Some((f1, m));
        }
    }
    let measure = best.expect("measures").1;
    let mc_test = mc_all(&model, &det_test.inputs, spec.mc_samples, seed)?;

    let score = |f: &dyn Fn(&[f64]) -> Result<f64>| -> Result<Vec<f64>> {
        det_test.embeddings.iter().map(|e| f(e)).collect()
    };
    let f1 = |name: &str, s: Vec<f64>| -> Result<f64> {
        Ok(evaluate_detection(name, &s, &det_test.labels)?.best_f1)
    };
    let residue_f1 = f1("residue", score(&|e| residue.score(e))?)?;
    let maha_f1 = f1("mahalanobis", score(&|e| maha.score(e))?)?;
    let unc_f1 = f1("uncertainty", measure_scores(&mc_test, measure)?)?;
    let fooled = det_test.labels.len() / 2;
    Ok(GridDomain {
        accuracy,
        row: DomainRow {
            domain: "grid".into(),
            attack: "discrete".into(),
            fooling_rate: fooled as f64 / det_test.attempted.max(1) as f64,
            test_pairs: fooled,
            residue: residue_f1,
            mahalanobis: maha_f1,
            uncertainty: unc_f1,
            residue_margin: residue_f1 - maha_f1.max(unc_f1),
        },
    })
}

pub fn profile_svg(orig: &ResidueProfile, attack: &ResidueProfile) -> String {
    let series = |name, p: &ResidueProfile| Series {
        name,
        points: p
            .rho
            .iter()
            .enumerate()
            .map(|(i, &r)| ((i + 1) as f64, r))
            .collect(),
    };
    line_plot(
        "Residue profile",
        "eigenvector rank",
        "mean |component|",
        &[series("original", orig), series("attacked", attack)],
    )
}

pub fn sweep_svg(records: &[SweepRecord], width: usize) -> String {
    let series = |name, f: fn(&SweepRecord) -> f64| Series {
        name,
        points: records.iter().map(|r| (r.p as f64, f(r))).collect(),
    };
    line_plot(
        &format!("Window sweep (w = {width})"),
        "window start p",
        "score",
        &[
            series("accuracy", |r| r.accuracy),
            series("residue F1", |r| r.f1),
        ],
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileHash {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub experiment: String,
    pub seed: u64,
    pub threads: usize,
    pub version: String,
    pub config: ExperimentConfig,
    pub inputs: Vec<FileHash>,
    pub outputs: Vec<FileHash>,
    pub runtime_seconds: f64,
}

pub fn hash_inputs(paths: &[PathBuf]) -> Result<Vec<FileHash>> {
    paths
        .iter()
        .map(|p| {
            let bytes = std::fs::read(p).map_err(|e| Error::io(p, e))?;
            Ok(FileHash {
                path: p.display().to_string(),
                sha256: sha256_hex(&bytes),
            })
        })
        .collect()
}

/// Writes artifacts plus `manifest.json` under `dir`.
pub fn write_artifacts(
    dir: &Path,
    experiment: &str,
    config: &ExperimentConfig,
    artifacts: &Artifacts,
    extra_inputs: &[PathBuf],
    runtime_seconds: f64,
) -> Result<Manifest> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut outputs = Vec::new();
    for (name, bytes) in &artifacts.files {
        let p = dir.join(name);
        std::fs::write(&p, bytes).map_err(|e| Error::io(&p, e))?;
        outputs.push(FileHash {
            path: name.clone(),
            sha256: sha256_hex(bytes),
        });
    }
    let mut inputs = config.inputs();
    inputs.extend(extra_inputs.iter().cloned());
    let manifest = Manifest {
        experiment: experiment.into(),
        seed: config.seed(),
        threads: config.threads,
        version: env!("CARGO_PKG_VERSION").into(),
        config: config.clone(),
        inputs: hash_inputs(&inputs)?,
        outputs,
        runtime_seconds,
    };
    let p = dir.join("manifest.json");
    std::fs::write(&p, json(&manifest)?).map_err(|e| Error::io(&p, e))?;
    Ok(manifest)
}

/// Runs `ids` on one session. A single experiment writes straight into
/// `config.out`; several go to one subdirectory each.
pub fn run_experiments(
    config: &ExperimentConfig,
    ids: &[ExperimentId],
    extra_inputs: &[PathBuf],
) -> Result<Vec<Manifest>> {
    let start = Instant::now();
    let session = Session::open(config)?;
    let mut manifests = Vec::new();
    for &id in ids {
        let t = Instant::now();
        log::info!("running {}", id.name());
        let artifacts = session.run(id)?;
        let dir = if ids.len() == 1 {
            config.out.clone()
        } else {
            config.out.join(id.name())
        };
        let elapsed = if manifests.is_empty() {
            start.elapsed()
        } else {
            t.elapsed()
        };
        manifests.push(write_artifacts(
            &dir,
            id.name(),
            config,
            &artifacts,
            extra_inputs,
            elapsed.as_secs_f64(),
        )?);
    }
    Ok(manifests)
}

pub fn run_experiment(config: &ExperimentConfig) -> Result<Manifest> {
    let id = config
        .experiment
        .ok_or_else(|| Error::config("experiment.id", "no experiment selected"))?;
    Ok(run_experiments(config, &[id], &[])?.remove(0))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ids_round_trip() {
        for id in ExperimentId::ALL {
            assert_eq!(id.name().parse::<ExperimentId>().unwrap(), id);
            assert_eq!(serde_json::to_value(id).unwrap(), id.name());
        }
        match "table9".parse::<ExperimentId>() {
            Err(Error::Config { key, .. }) => assert_eq!(key, "experiment.id"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn validation_names_keys() {
        let key = |c: ExperimentConfig| match c.validate() {
            Err(Error::Config { key, .. }) => key,
            other => panic!("{other:?}"),
        };
        let d = ExperimentConfig::default;
        assert_eq!(
            key(ExperimentConfig { threads: 0, ..d() }),
            "experiment.threads"
        );
        assert_eq!(
            key(ExperimentConfig {
                central_ranks: (0, 3),
                ..d()
            }),
            "analysis.ranks"
        );
        let mut c = d();
        c.data.model = Some(PathBuf::from("/nonexistent/model.ckpt"));
        assert_eq!(key(c), "data.model");
        let mut c = d();
        c.data.train = Some(PathBuf::from("x"));
        assert_eq!(key(c), "data.train");
        assert!(ExperimentConfig::default().validate().is_ok());
    }

    #[test]
    fn sha256_known_vector() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn missing_experiment_id() {
        let c = ExperimentConfig::default();
        assert!(matches!(run_experiment(&c), Err(Error::Config { .. })));
    }
}
