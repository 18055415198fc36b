//! Python bindings: classifier checkpoints, experiment sessions, attacks,
//! detector scores and the evaluation and eigen routines.

use std::path::PathBuf;

use pyo3::exceptions::{PyArithmeticError, PyOSError, PyValueError};
use pyo3::prelude::*;
use serde::Serialize;

use residue_core::attacks::AttackKind;
use residue_core::detectors::DetectorKind;
use residue_core::eval::{evaluate_detection as evaluate, Label};
use residue_core::model::ClassifierModel;
use residue_core::numerics::Matrix;
use residue_core::workbench::config::{load_config, parse_config};
use residue_core::workbench::experiment::DetectorRow;
use residue_core::workbench::records::attack_records;
use residue_core::workbench::{self, ExperimentConfig, ExperimentId};
use residue_core::Error;

fn py_err(e: Error) -> PyErr {
    let msg = e.to_string();
    match e.exit_code() {
        2 => PyValueError::new_err(msg),
        4 => PyArithmeticError::new_err(msg),
        _ => PyOSError::new_err(msg),
    }
}

trait IntoPy<T> {
    fn py(self) -> PyResult<T>;
}

impl<T> IntoPy<T> for residue_core::Result<T> {
    fn py(self) -> PyResult<T> {
        self.map_err(py_err)
    }
}

fn to_python<'py>(py: Python<'py>, value: &impl Serialize) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyValueError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

fn settings(
    seed: Option<u64>,
    config: Option<PathBuf>,
    overrides: Option<&str>,
) -> PyResult<ExperimentConfig> {
    let mut cfg = match config {
        Some(p) => load_config(&p).py()?,
        None => ExperimentConfig::default(),
    };
    if let Some(text) = overrides {
        cfg = parse_config(text, cfg).py()?;
    }
    if let Some(s) = seed {
        cfg.set_seed(s);
    }
    cfg.validate().py()?;
    Ok(cfg)
}

/// Trained bag-of-embeddings text classifier.
#[pyclass(module = "residue", frozen)]
struct Classifier {
    inner: ClassifierModel,
}

#[pymethods]
impl Classifier {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: ClassifierModel::load(&path).py()?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(&path).py()
    }

    #[getter]
    fn model_id(&self) -> String {
        self.inner.model_id()
    }

    #[getter]
    fn vocab_size(&self) -> usize {
        self.inner.vocab().len()
    }

    fn predict(&self, text: &str) -> PyResult<usize> {
        let x = self.inner.vocab().encode(text).py()?;
        self.inner.predict(&x).py()
    }

    fn probabilities(&self, text: &str) -> PyResult<Vec<f64>> {
        let x = self.inner.vocab().encode(text).py()?;
        self.inner.probabilities(&x).py()
    }

    /// Per-token embedding rows of `text`.
    fn embed(&self, text: &str) -> PyResult<Vec<Vec<f64>>> {
        let x = self.inner.vocab().encode(text).py()?;
        let h = self.inner.embed(&x).py()?;
        let m = h.vectors();
        Ok((0..m.rows()).map(|r| m.row(r).to_vec()).collect())
    }

    fn __repr__(&self) -> String {
        format!(
            "Classifier({}, vocab={})",
            self.inner.model_id(),
            self.inner.vocab().len()
        )
    }
}

/// Fixture, model and cached attacks for one configuration.
#[pyclass(module = "residue", frozen)]
struct Session {
    inner: workbench::Session,
}

#[pymethods]
impl Session {
    /// `config` is an INI path; `overrides` is INI text applied on top.
    #[new]
    #[pyo3(signature = (seed=None, config=None, overrides=None))]
    fn new(
        py: Python<'_>,
        seed: Option<u64>,
        config: Option<PathBuf>,
        overrides: Option<&str>,
    ) -> PyResult<Self> {
        let cfg = settings(seed, config, overrides)?;
        let inner = py.detach(|| workbench::Session::open(&cfg)).py()?;
        Ok(Self { inner })
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.config.seed()
    }

    fn classifier(&self) -> Classifier {
        Classifier {
            inner: self.inner.fixture.model.clone(),
        }
    }

    /// Test split as `(text, label)` pairs.
    fn test_data(&self) -> Vec<(String, usize)> {
        let fx = &self.inner.fixture;
        fx.test
            .iter()
            .map(|(x, y)| (fx.vocab.decode(x), *y))
            .collect()
    }

    /// Report of one experiment as a dict.
    fn report<'py>(&self, py: Python<'py>, id: &str) -> PyResult<Bound<'py, PyAny>> {
        let id: ExperimentId = id.parse().py()?;
        let artifacts = py.detach(|| self.inner.run(id)).py()?;
        let value: serde_json::Value = artifacts.report().py()?;
        to_python(py, &value)
    }

    /// Every output file of one experiment, name to bytes.
    fn artifacts(&self, py: Python<'_>, id: &str) -> PyResult<Vec<(String, Vec<u8>)>> {
        let id: ExperimentId = id.parse().py()?;
        let artifacts = py.detach(|| self.inner.run(id)).py()?;
        Ok(artifacts.files.into_iter().collect())
    }

    /// Attack records `{original, perturbed, kind, budget, realized, success}`.
    #[pyo3(signature = (kind="substitution", split="test"))]
    fn attack<'py>(&self, py: Python<'py>, kind: &str, split: &str) -> PyResult<Bound<'py, PyAny>> {
        let kind: AttackKind = kind.parse().py()?;
        let train = match split {
            "train" => true,
            "test" => false,
            other => {
                return Err(PyValueError::new_err(format!(
                    "split must be `train` or `test`, got `{other}`"
                )))
            }
        };
        let records = py
            .detach(|| {
                let (set, budget) = self.inner.attack_split(kind, train)?;
                attack_records(&self.inner.fixture.model, &set, budget)
            })
            .py()?;
        to_python(py, &records)
    }

    /// Scores of one detector on the balanced substitution test pairs, with
    /// labels (`True` for adversarial).
    fn detector_scores(&self, py: Python<'_>, detector: &str) -> PyResult<(Vec<f64>, Vec<bool>)> {
        let kind: DetectorKind = detector.parse().py()?;
        py.detach(|| {
            let attacked = self.inner.substitution()?;
            let scores =
                self.inner
                    .suite()?
                    .scores(&self.inner.fixture, kind, &attacked.det_test)?;
            Ok((
                scores,
                attacked
                    .det_test
                    .labels
                    .iter()
                    .map(|l| l.is_adversarial())
                    .collect(),
            ))
        })
        .py()
    }
}

/// Best-F1 threshold search; `labels` are `True` for adversarial samples.
#[pyfunction]
#[pyo3(signature = (scores, labels, name="detector"))]
fn evaluate_detection<'py>(
    py: Python<'py>,
    scores: Vec<f64>,
    labels: Vec<bool>,
    name: &str,
) -> PyResult<Bound<'py, PyAny>> {
    let labels: Vec<Label> = labels.into_iter().map(Label::from_flag).collect();
    let r = evaluate(name, &scores, &labels).py()?;
    to_python(py, &DetectorRow::from(&r))
}

/// Eigenvalues (descending magnitude) and matching eigenvectors of a
/// symmetric matrix given as rows.
#[pyfunction]
fn symmetric_eig(rows: Vec<Vec<f64>>) -> PyResult<(Vec<f64>, Vec<Vec<f64>>)> {
    let m = Matrix::from_rows(&rows).py()?;
    let e = residue_core::numerics::symmetric_eig(&m).py()?;
    Ok((e.eigenvalues, e.eigenvectors))
}

/// Synthetic corpus: train and test `(text, label)` pairs plus the lexicon
/// and frequency-table texts.
#[pyfunction]
#[pyo3(signature = (seed=0))]
fn synth_corpus<'py>(py: Python<'py>, seed: u64) -> PyResult<Bound<'py, PyAny>> {
    let c = workbench::synth_corpus(&Default::default(), seed).py()?;
    let pairs = |d: &[workbench::Example]| {
        d.iter()
            .map(|e| (e.text.clone(), e.label))
            .collect::<Vec<_>>()
    };
    to_python(
        py,
        &serde_json::json!({
            "train": pairs(&c.train),
            "test": pairs(&c.test),
            "lexicon": c.lexicon_text,
            "frequencies": c.frequencies.to_text(),
        }),
    )
}

/// Runs experiments into `out` (one subdirectory each when several) and
/// returns their names.
#[pyfunction]
#[pyo3(signature = (out, ids=None, seed=None, config=None))]
fn run_experiments(
    py: Python<'_>,
    out: PathBuf,
    ids: Option<Vec<String>>,
    seed: Option<u64>,
    config: Option<PathBuf>,
) -> PyResult<Vec<String>> {
    let mut cfg = settings(seed, config.clone(), None)?;
    cfg.out = out;
    let ids: Vec<ExperimentId> = match ids {
        Some(list) => list
            .iter()
            .map(|s| s.parse())
            .collect::<residue_core::Result<_>>()
            .py()?,
        None => ExperimentId::ALL.to_vec(),
    };
    let inputs: Vec<PathBuf> = config.into_iter().collect();
    let manifests = py
        .detach(|| workbench::run_experiments(&cfg, &ids, &inputs))
        .py()?;
    Ok(manifests.into_iter().map(|m| m.experiment).collect())
}

#[pymodule]
fn residue(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add(
        "EXPERIMENTS",
        ExperimentId::ALL
            .iter()
            .map(|i| i.name())
            .collect::<Vec<_>>(),
    )?;
    m.add_class::<Classifier>()?;
    m.add_class::<Session>()?;
    m.add_function(wrap_pyfunction!(evaluate_detection, m)?)?;
    m.add_function(wrap_pyfunction!(symmetric_eig, m)?)?;
    m.add_function(wrap_pyfunction!(synth_corpus, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiments, m)?)?;
    Ok(())
}
