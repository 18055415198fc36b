use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::pca::{windowed_projection, PCAModel, WindowSpec};
use crate::detectors::{train_residue, ResidueTrainConfig};
use crate::error::{Error, Result};
use crate::eval::{evaluate_detection, Label};
use crate::model::ClassifierModel;
use crate::numerics::argmax;

/// Embeddings for one sweep: originals and their attacked counterparts,
/// split into detector-training and test halves.
#[derive(Debug, Clone, Copy)]
pub struct SweepData<'a> {
    pub train_orig: &'a [Vec<f64>],
    pub train_adv: &'a [Vec<f64>],
    pub test_orig: &'a [Vec<f64>],
    pub test_adv: &'a [Vec<f64>],
    /// True classes of `test_orig`.
    pub test_labels: &'a [usize],
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRecord {
    pub p: usize,
    pub accuracy: f64,
    pub f1: f64,
}

fn pairs(orig: &[Vec<f64>], adv: &[Vec<f64>]) -> Result<(Vec<Vec<f64>>, Vec<Label>)> {
    if orig.len() != adv.len() {
        return Err(Error::DimensionMismatch {
            expected: orig.len(),
            actual: adv.len(),
        });
    }
    let mut xs = Vec::with_capacity(2 * orig.len());
    let mut ys = Vec::with_capacity(2 * orig.len());
    for (o, a) in orig.iter().zip(adv) {
        xs.push(o.clone());
        ys.push(Label::Original);
        xs.push(a.clone());
        ys.push(Label::Adversarial);
    }
    Ok((xs, ys))
}

fn project_all(pca: &PCAModel, xs: &[Vec<f64>], win: WindowSpec) -> Result<Vec<Vec<f64>>> {
    xs.iter()
        .map(|e| windowed_projection(pca, e, win))
        .collect()
}

/// One record per window start p in 0..=d−w: accuracy of the frozen output
/// stage on projected test originals and the test F1 of a residue detector
/// trained on projected training pairs.
pub fn window_sweep(
    model: &ClassifierModel,
    pca: &PCAModel,
    data: SweepData<'_>,
    width: usize,
    cfg: &ResidueTrainConfig,
) -> Result<Vec<SweepRecord>> {
    if data.test_labels.len() != data.test_orig.len() {
        return Err(Error::DimensionMismatch {
            expected: data.test_orig.len(),
            actual: data.test_labels.len(),
        });
    }
    if model.classes().is_none() {
        return Err(Error::Unsupported(
            "window sweep needs a classification head".into(),
        ));
    }
    let d = pca.dim();
    WindowSpec::new(0, width, d)?;
    let (train_x, train_y) = pairs(data.train_orig, data.train_adv)?;
    let (test_x, test_y) = pairs(data.test_orig, data.test_adv)?;
    (0..=d - width)
        .into_par_iter()
        .map(|p| {
            let win = WindowSpec::new(p, width, d)?;
            let mut correct = 0;
            for (e, &y) in data.test_orig.iter().zip(data.test_labels) {
                let out = model.classify(&windowed_projection(pca, e, win)?)?;
                let probs = out.probabilities().expect("classification head");
                if argmax(probs) == y {
                    correct += 1;
                }
            }
            let (det, _) = train_residue(&project_all(pca, &train_x, win)?, &train_y, cfg)?;
            let scores = project_all(pca, &test_x, win)?
                .iter()
                .map(|e| det.score(e))
                .collect::<Result<Vec<f64>>>()?;
            let report = evaluate_detection("residue", &scores, &test_y)?;
            Ok(SweepRecord {
                p,
                accuracy: correct as f64 / data.test_orig.len().max(1) as f64,
                f1: report.best_f1,
            })
        })
        .collect()
}

pub fn sweep_csv(records: &[SweepRecord]) -> String {
    let mut s = String::from("p,accuracy,f1\n");
    for r in records {
        s.push_str(&format!("{},{},{}\n", r.p, r.accuracy, r.f1));
    }
    s
}

/// First index of the maximum, by `key`.
pub fn argmax_by(records: &[SweepRecord], key: impl Fn(&SweepRecord) -> f64) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for r in records {
        let v = key(r);
        if best.is_none_or(|(_, b)| v > b) {
            best = Some((r.p, v));
        }
    }
    best.map(|(p, _)| p)
}
