//! Attack-impact and detection-quality metrics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ClassifierModel, EmbeddingSequence, TokenSequence};
use crate::numerics::{mean, norm_l2, norm_linf, std_dev};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Original,
    Adversarial,
}

impl Label {
    pub fn is_adversarial(self) -> bool {
        self == Label::Adversarial
    }

    pub fn from_flag(adversarial: bool) -> Self {
        if adversarial {
            Label::Adversarial
        } else {
            Label::Original
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub tn: usize,
}

impl ConfusionCounts {
    /// Counts for the rule `score > threshold` ⇒ adversarial.
    pub fn at_threshold(scores: &[f64], labels: &[Label], threshold: f64) -> Self {
        let mut c = ConfusionCounts::default();
        for (&s, &l) in scores.iter().zip(labels) {
            match (s > threshold, l.is_adversarial()) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, true) => c.fn_ += 1,
                (false, false) => c.tn += 1,
            }
        }
        c
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.fn_ + self.tn
    }

    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    pub fn f1(&self) -> f64 {
        ratio(2 * self.tp, 2 * self.tp + self.fp + self.fn_)
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub counts: ConfusionCounts,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionReport {
    pub detector: String,
    /// One point per candidate threshold, in increasing threshold order.
    pub curve: Vec<CurvePoint>,
    pub best_f1: f64,
    /// β of the best point; flag when `score > threshold`.
    pub threshold: f64,
    pub counts: ConfusionCounts,
    pub n_original: usize,
    pub n_adversarial: usize,
}

impl DetectionReport {
    /// Curve points as CSV; infinite thresholds are written as `-inf`/`inf`.
    pub fn curve_csv(&self) -> String {
        let mut out = String::from("threshold,precision,recall,f1,tp,fp,fn,tn\n");
        for p in &self.curve {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                p.threshold,
                p.precision,
                p.recall,
                p.f1,
                p.counts.tp,
                p.counts.fp,
                p.counts.fn_,
                p.counts.tn
            ));
        }
        out
    }
}

/// Sweeps thresholds at −∞, the midpoints between consecutive sorted unique
/// scores, and +∞; keeps the first threshold reaching the maximal F1.
pub fn evaluate_detection(
    detector: &str,
    scores: &[f64],
    labels: &[Label],
) -> Result<DetectionReport> {
    if scores.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: scores.len(),
            actual: labels.len(),
        });
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::Numeric("detector scores must be finite".into()));
    }
    let n_adv = labels.iter().filter(|l| l.is_adversarial()).count();
    let n_orig = labels.len() - n_adv;
    if n_adv == 0 || n_orig == 0 {
        return Err(Error::InvalidLabel(
            "detection evaluation needs both original and adversarial samples".into(),
        ));
    }

    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    // Start with everything flagged and unflag one score group at a time.
    let mut counts = ConfusionCounts {
        tp: n_adv,
        fp: n_orig,
        fn_: 0,
        tn: 0,
    };
    let mut curve = vec![point(f64::NEG_INFINITY, counts)];
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            if labels[order[i]].is_adversarial() {
                counts.tp -= 1;
                counts.fn_ += 1;
            } else {
                counts.fp -= 1;
                counts.tn += 1;
            }
            i += 1;
        }
        let threshold = if i < order.len() {
            s + (scores[order[i]] - s) / 2.0
        } else {
            f64::INFINITY
        };
        curve.push(point(threshold, counts));
    }

    let best = curve
        .iter()
        .enumerate()
        .fold(0, |b, (k, p)| if p.f1 > curve[b].f1 { k } else { b });
    Ok(DetectionReport {
        detector: detector.to_string(),
        best_f1: curve[best].f1,
        threshold: curve[best].threshold,
        counts: curve[best].counts,
        curve,
        n_original: n_orig,
        n_adversarial: n_adv,
    })
}

fn point(threshold: f64, counts: ConfusionCounts) -> CurvePoint {
    CurvePoint {
        threshold,
        precision: counts.precision(),
        recall: counts.recall(),
        f1: counts.f1(),
        counts,
    }
}

/// Fraction of originally correct samples whose counterpart is misclassified.
pub fn fooling_rate_from_predictions(
    labels: &[usize],
    original: &[usize],
    adversarial: &[usize],
) -> Result<f64> {
    if labels.len() != original.len() || labels.len() != adversarial.len() {
        return Err(Error::DimensionMismatch {
            expected: labels.len(),
            actual: original.len().min(adversarial.len()),
        });
    }
    let mut correct = 0usize;
    let mut fooled = 0usize;
    for ((&y, &o), &a) in labels.iter().zip(original).zip(adversarial) {
        if o == y {
            correct += 1;
            if a != y {
                fooled += 1;
            }
        }
    }
    if correct == 0 {
        return Err(Error::DegenerateInput(
            "no originally correct samples to attack".into(),
        ));
    }
    Ok(fooled as f64 / correct as f64)
}

pub fn fooling_rate(
    model: &ClassifierModel,
    originals: &[(TokenSequence, usize)],
    adversarial: &[TokenSequence],
) -> Result<f64> {
    let labels: Vec<usize> = originals.iter().map(|(_, y)| *y).collect();
    let orig = originals
        .iter()
        .map(|(x, _)| model.predict(x))
        .collect::<Result<Vec<_>>>()?;
    let adv = adversarial
        .iter()
        .map(|x| model.predict(x))
        .collect::<Result<Vec<_>>>()?;
    fooling_rate_from_predictions(&labels, &orig, &adv)
}

/// Mean of score(adv) − score(orig) under a regression head.
pub fn mean_score_shift(
    model: &ClassifierModel,
    originals: &[TokenSequence],
    adversarial: &[TokenSequence],
) -> Result<f64> {
    if model.classes().is_some() {
        return Err(Error::Unsupported(
            "mean score shift needs a regression head".into(),
        ));
    }
    if originals.len() != adversarial.len() {
        return Err(Error::DimensionMismatch {
            expected: originals.len(),
            actual: adversarial.len(),
        });
    }
    if originals.is_empty() {
        return Err(Error::Empty("no samples".into()));
    }
    let mut total = 0.0;
    for (o, a) in originals.iter().zip(adversarial) {
        total += model.score(a)? - model.score(o)?;
    }
    Ok(total / originals.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormSummary {
    pub l2_mean: f64,
    pub l2_std: f64,
    pub linf_mean: f64,
    pub linf_std: f64,
    pub count: usize,
}

impl NormSummary {
    /// Summary over per-sample flattened differences.
    pub fn from_differences<'a>(diffs: impl IntoIterator<Item = &'a [f64]>) -> Result<Self> {
        let (l2, linf): (Vec<f64>, Vec<f64>) = diffs
            .into_iter()
            .map(|d| (norm_l2(d), norm_linf(d)))
            .unzip();
        if l2.is_empty() {
            return Err(Error::Empty("no perturbation pairs".into()));
        }
        Ok(NormSummary {
            l2_mean: mean(&l2),
            l2_std: std_dev(&l2),
            linf_mean: mean(&linf),
            linf_std: std_dev(&linf),
            count: l2.len(),
        })
    }
}

/// l2 and l∞ norms of flattened embedding differences; mean and population std.
pub fn perturbation_norms(
    originals: &[EmbeddingSequence],
    perturbed: &[EmbeddingSequence],
) -> Result<NormSummary> {
    if originals.len() != perturbed.len() {
        return Err(Error::DimensionMismatch {
            expected: originals.len(),
            actual: perturbed.len(),
        });
    }
    let mut diffs = Vec::with_capacity(originals.len());
    for (o, p) in originals.iter().zip(perturbed) {
        if o.len() != p.len() || o.dim() != p.dim() {
            return Err(Error::DimensionMismatch {
                expected: o.len() * o.dim(),
                actual: p.len() * p.dim(),
            });
        }
        let d: Vec<f64> = o
            .vectors()
            .as_slice()
            .iter()
            .zip(p.vectors().as_slice())
            .map(|(a, b)| b - a)
            .collect();
        diffs.push(d);
    }
    NormSummary::from_differences(diffs.iter().map(|d| d.as_slice()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Matrix;
    use proptest::prelude::*;

    use Label::{Adversarial as A, Original as O};

    // Brute force: every candidate threshold from the score set and its
    // midpoints, counted from scratch.
    fn brute_best_f1(scores: &[f64], labels: &[Label]) -> f64 {
        let mut cands = vec![f64::NEG_INFINITY, f64::INFINITY];
        for &a in scores {
            cands.push(a);
            for &b in scores {
                cands.push((a + b) / 2.0);
            }
        }
        cands
            .iter()
            .map(|&t| {
                let (mut tp, mut fp, mut fn_) = (0.0, 0.0, 0.0);
                for (&s, &l) in scores.iter().zip(labels) {
                    match (s > t, l == A) {
                        (true, true) => tp += 1.0,
                        (true, false) => fp += 1.0,
                        (false, true) => fn_ += 1.0,
                        _ => {}
                    }
                }
                if tp == 0.0 {
                    0.0
                } else {
                    2.0 * tp / (2.0 * tp + fp + fn_)
                }
            })
            .fold(0.0, f64::max)
    }

    #[test]
    fn worked_example() {
        let r = evaluate_detection("x", &[0.9, 0.8, 0.4, 0.2], &[A, A, O, A]).unwrap();
        assert!((r.best_f1 - 6.0 / 7.0).abs() < 1e-12);
        assert!(r.threshold < 0.2);
        assert_eq!(r.curve.len(), 5);
    }

    #[test]
    fn separated_scores_reach_one() {
        let r = evaluate_detection("x", &[0.1, 0.2, 0.7, 0.9], &[O, O, A, A]).unwrap();
        assert_eq!(r.best_f1, 1.0);
        assert!((r.threshold - 0.45).abs() < 1e-12);
        assert_eq!(r.counts.tn, 2);
    }

    #[test]
    fn single_label_rejected() {
        assert!(evaluate_detection("x", &[0.1, 0.2], &[O, O]).is_err());
        assert!(evaluate_detection("x", &[0.1, f64::NAN], &[O, A]).is_err());
    }

    #[test]
    fn zero_denominator_f1_is_zero() {
        let c = ConfusionCounts::default();
        assert_eq!(c.f1(), 0.0);
        assert_eq!(c.precision(), 0.0);
    }

    #[test]
    fn fooling_rate_hand_count() {
        let labels = vec![0; 12];
        let orig = [vec![0; 10], vec![1; 2]].concat();
        let adv = [vec![1; 7], vec![0; 3], vec![1; 2]].concat();
        assert!((fooling_rate_from_predictions(&labels, &orig, &adv).unwrap() - 0.7).abs() < 1e-15);
        assert_eq!(
            fooling_rate_from_predictions(&labels, &orig, &orig).unwrap(),
            0.0
        );
        assert!(fooling_rate_from_predictions(&[0], &[1], &[1]).is_err());
    }

    #[test]
    fn norms_closed_form() {
        let a = EmbeddingSequence::from_matrix(Matrix::zeros(2, 2));
        let b = EmbeddingSequence::from_matrix(
            Matrix::from_rows(&[vec![0.0, 0.0], vec![3.0, 4.0]]).unwrap(),
        );
        let n = perturbation_norms(std::slice::from_ref(&a), &[b]).unwrap();
        assert_eq!((n.l2_mean, n.linf_mean), (5.0, 4.0));
        let z = perturbation_norms(std::slice::from_ref(&a), std::slice::from_ref(&a)).unwrap();
        assert_eq!((z.l2_mean, z.linf_mean, z.l2_std), (0.0, 0.0, 0.0));
        let short = EmbeddingSequence::from_matrix(Matrix::zeros(1, 2));
        assert!(perturbation_norms(&[a], &[short]).is_err());
    }

    fn instance() -> impl Strategy<Value = (Vec<f64>, Vec<Label>)> {
        (2usize..200).prop_flat_map(|n| {
            (
                prop::collection::vec((0u8..20).prop_map(|v| v as f64 / 10.0), n),
                prop::collection::vec(any::<bool>(), n),
            )
                .prop_filter("both labels", |(_, l)| {
                    l.iter().any(|b| *b) && l.iter().any(|b| !*b)
                })
                .prop_map(|(s, l)| (s, l.into_iter().map(Label::from_flag).collect()))
        })
    }

    proptest! {
        #[test]
        fn matches_brute_force((scores, labels) in instance()) {
            let r = evaluate_detection("x", &scores, &labels).unwrap();
            prop_assert!((r.best_f1 - brute_best_f1(&scores, &labels)).abs() < 1e-12);
            prop_assert!((0.0..=1.0).contains(&r.best_f1));
        }

        #[test]
        fn curve_is_self_consistent((scores, labels) in instance()) {
            let r = evaluate_detection("x", &scores, &labels).unwrap();
            for w in r.curve.windows(2) {
                prop_assert!(w[0].threshold < w[1].threshold);
                prop_assert!(w[1].recall <= w[0].recall);
            }
            for p in &r.curve {
                prop_assert_eq!(p.counts, ConfusionCounts::at_threshold(&scores, &labels, p.threshold));
                prop_assert_eq!(p.counts.total(), scores.len());
            }
        }
    }
}
