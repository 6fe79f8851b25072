//! Scores of one set of predictions against clinician labels.

use serde::Serialize;
use tremorkit::dataset::N_MERGED;
use tremorkit::forest::argmax;
use tremorkit::stats::{
    asymmetry_label, balanced_accuracy, roc_auc, sensitivity_at_specificity, weighted_kappa, ConfusionMatrix, RocCurve,
    BINARY_CUTS,
};

use crate::error::CliResult;

pub const SPECIFICITY_ANCHOR: f64 = 0.95;

/// One scored assessment: raw clinician score and predicted class probabilities.
#[derive(Debug, Clone)]
pub struct Scored {
    pub assessment_id: String,
    pub left: bool,
    pub score: u8,
    pub probs: Vec<f64>,
}

impl Scored {
    pub fn label(&self) -> u8 {
        self.score.min(3)
    }

    pub fn predicted(&self) -> u8 {
        argmax(&self.probs) as u8
    }

    /// Probability mass above `cut`, the score of the binary task `{0..=cut}` vs the rest.
    pub fn above(&self, cut: u8) -> f64 {
        self.probs.iter().skip(cut as usize + 1).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Metrics {
    pub n_ok: usize,
    pub kappa: Option<f64>,
    /// Kappa of the predicted merged class against the unmerged 0-4 score.
    pub kappa_5class: Option<f64>,
    pub balanced_accuracy: Option<f64>,
    pub auc_0: Option<f64>,
    pub auc_1: Option<f64>,
    pub auc_2: Option<f64>,
    pub sens95_0: Option<f64>,
    pub sens95_1: Option<f64>,
    pub sens95_2: Option<f64>,
}

pub fn confusion(scored: &[Scored]) -> CliResult<ConfusionMatrix> {
    let truth: Vec<u8> = scored.iter().map(Scored::label).collect();
    let pred: Vec<u8> = scored.iter().map(Scored::predicted).collect();
    Ok(ConfusionMatrix::from_labels(&truth, &pred, N_MERGED)?)
}

pub fn confusion_5class(scored: &[Scored]) -> CliResult<ConfusionMatrix> {
    let truth: Vec<u8> = scored.iter().map(|s| s.score).collect();
    let pred: Vec<u8> = scored.iter().map(Scored::predicted).collect();
    Ok(ConfusionMatrix::from_labels(&truth, &pred, 5)?)
}

/// ROC of each binary cut; `None` where one side of the cut is empty.
pub fn roc_curves(scored: &[Scored]) -> [Option<RocCurve>; 3] {
    BINARY_CUTS.map(|cut| {
        let scores: Vec<f64> = scored.iter().map(|s| s.above(cut)).collect();
        let labels: Vec<bool> = scored.iter().map(|s| s.score > cut).collect();
        roc_auc(&scores, &labels).ok()
    })
}

pub fn metrics(scored: &[Scored]) -> CliResult<Metrics> {
    if scored.is_empty() {
        return Ok(Metrics {
            n_ok: 0,
            kappa: None,
            kappa_5class: None,
            balanced_accuracy: None,
            auc_0: None,
            auc_1: None,
            auc_2: None,
            sens95_0: None,
            sens95_1: None,
            sens95_2: None,
        });
    }
    let cm = confusion(scored)?;
    let cm5 = confusion_5class(scored)?;
    let [r0, r1, r2] = roc_curves(scored);
    let sens = |c: &Option<RocCurve>| c.as_ref().map(|c| sensitivity_at_specificity(c, SPECIFICITY_ANCHOR));
    Ok(Metrics {
        n_ok: scored.len(),
        kappa: Some(weighted_kappa(&cm)?.value),
        kappa_5class: Some(weighted_kappa(&cm5)?.value),
        balanced_accuracy: Some(balanced_accuracy(&cm)),
        auc_0: r0.as_ref().map(|c| c.auc),
        auc_1: r1.as_ref().map(|c| c.auc),
        auc_2: r2.as_ref().map(|c| c.auc),
        sens95_0: sens(&r0),
        sens95_1: sens(&r1),
        sens95_2: sens(&r2),
    })
}

/// 3x3 agreement on which hand is worse, over assessments scored on both sides.
pub fn asymmetry_confusion(scored: &[Scored]) -> CliResult<Option<ConfusionMatrix>> {
    let mut by_id: std::collections::BTreeMap<&str, [Option<&Scored>; 2]> = Default::default();
    for s in scored {
        by_id.entry(&s.assessment_id).or_default()[usize::from(!s.left)] = Some(s);
    }
    let mut truth = Vec::new();
    let mut pred = Vec::new();
    for [l, r] in by_id.into_values() {
        if let (Some(l), Some(r)) = (l, r) {
            truth.push(asymmetry_label(l.label(), r.label()).index());
            pred.push(asymmetry_label(l.predicted(), r.predicted()).index());
        }
    }
    if truth.is_empty() {
        return Ok(None);
    }
    Ok(Some(ConfusionMatrix::from_labels(&truth, &pred, 3)?))
}

pub fn asymmetry_kappa(scored: &[Scored]) -> CliResult<Option<f64>> {
    Ok(match asymmetry_confusion(scored)? {
        Some(cm) => Some(weighted_kappa(&cm)?.value),
        None => None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(id: &str, left: bool, score: u8, class: usize) -> Scored {
        let mut probs = vec![0.0; 4];
        probs[class] = 1.0;
        Scored {
            assessment_id: id.into(),
            left,
            score,
            probs,
        }
    }

    #[test]
    fn perfect_predictions_score_one() {
        let set: Vec<Scored> = (0..8).map(|i| s(&format!("a{}", i / 2), i % 2 == 0, (i % 4) as u8, i % 4)).collect();
        let m = metrics(&set).unwrap();
        assert_eq!(m.kappa, Some(1.0));
        assert_eq!(m.balanced_accuracy, Some(1.0));
        assert_eq!(m.auc_0, Some(1.0));
        assert_eq!(m.sens95_2, Some(1.0));
    }

    #[test]
    fn score_four_counts_as_merged_three() {
        let set = vec![s("a", true, 4, 3), s("b", true, 0, 0)];
        let m = metrics(&set).unwrap();
        assert_eq!(m.kappa, Some(1.0));
        assert!(m.kappa_5class.unwrap() < 1.0);
    }

    #[test]
    fn asymmetry_needs_both_hands() {
        let set = vec![s("a", true, 2, 2), s("a", false, 1, 1), s("b", true, 1, 1)];
        let cm = asymmetry_confusion(&set).unwrap().unwrap();
        assert_eq!(cm.total(), 1);
        assert_eq!(cm.counts[0][0], 1);
    }

    #[test]
    fn empty_set_has_no_metrics() {
        let m = metrics(&[]).unwrap();
        assert_eq!(m.n_ok, 0);
        assert!(m.kappa.is_none());
    }
}
