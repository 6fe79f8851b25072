//! Improvement under treatment and the paired tests comparing arms and raters.

use std::collections::BTreeMap;

use serde::Serialize;
use tremorkit::stats::{bonferroni, treatment_improvement, wilcoxon_signed_rank, Alternative, TestRow};
use tremorkit::synth::Treatment;

/// Comparisons in the family the correction divides among.
pub const N_COMPARISONS: usize = 9;

pub const ARMS: [Treatment; 3] = [Treatment::Ldopa, Treatment::Dbs, Treatment::DbsLdopa];

/// Arm pairs compared within a rater; the second arm is hypothesised to improve more.
pub const ARM_PAIRS: [(Treatment, Treatment); 3] = [
    (Treatment::Ldopa, Treatment::Dbs),
    (Treatment::Ldopa, Treatment::DbsLdopa),
    (Treatment::Dbs, Treatment::DbsLdopa),
];

/// Severity of one subject (patient and hand) under each recorded condition.
pub type Subject = BTreeMap<Treatment, f64>;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Effect {
    pub rater: String,
    pub treatment: String,
    pub n: usize,
    pub mean_improvement: f64,
}

/// Per-arm improvements of the subjects whose baseline is positive and who were recorded under every arm.
pub fn improvements(subjects: &[Subject]) -> BTreeMap<Treatment, Vec<f64>> {
    let mut out: BTreeMap<Treatment, Vec<f64>> = ARMS.iter().map(|&a| (a, Vec::new())).collect();
    for s in subjects {
        let Some(&base) = s.get(&Treatment::Baseline) else { continue };
        if ARMS.iter().any(|a| !s.contains_key(a)) {
            continue;
        }
        for arm in ARMS {
            if let Ok(v) = treatment_improvement(base, s[&arm]) {
                out.get_mut(&arm).expect("arm present").push(v);
            }
        }
    }
    out
}

pub fn effects(rater: &str, subjects: &[Subject]) -> Vec<Effect> {
    improvements(subjects)
        .into_iter()
        .map(|(arm, v)| Effect {
            rater: rater.to_string(),
            treatment: arm.display_name().to_string(),
            n: v.len(),
            mean_improvement: if v.is_empty() { f64::NAN } else { v.iter().sum::<f64>() / v.len() as f64 },
        })
        .collect()
}

/// One-sided signed-rank tests between arms for one rater, uncorrected.
pub fn arm_tests(rater: &str, subjects: &[Subject]) -> Vec<TestRow> {
    let imp = improvements(subjects);
    ARM_PAIRS
        .iter()
        .filter_map(|&(x, y)| {
            match wilcoxon_signed_rank(&imp[&x], &imp[&y], Alternative::Greater) {
                Ok(result) => Some(TestRow {
                    rater: rater.to_string(),
                    treatment_x: x.display_name().to_string(),
                    treatment_y: y.display_name().to_string(),
                    test: "wilcoxon_one_sided".into(),
                    result,
                }),
                Err(e) => {
                    log::warn!("{rater}: {} vs {} not tested: {e}", x.display_name(), y.display_name());
                    None
                }
            }
        })
        .collect()
}

/// Two-sided signed-rank tests of clinician against model improvement per arm,
/// over subjects with a positive baseline under both raters.
pub fn rater_tests(clinician: &[Subject], model: &[Subject]) -> Vec<TestRow> {
    let both: Vec<(Subject, Subject)> = clinician
        .iter()
        .zip(model)
        .filter(|(c, m)| c.get(&Treatment::Baseline).is_some_and(|&b| b > 0.0) && m.get(&Treatment::Baseline).is_some_and(|&b| b > 0.0))
        .map(|(c, m)| (c.clone(), m.clone()))
        .collect();
    let (c, m): (Vec<Subject>, Vec<Subject>) = both.into_iter().unzip();
    let (ic, im) = (improvements(&c), improvements(&m));
    ARMS.iter()
        .filter_map(|&arm| match wilcoxon_signed_rank(&ic[&arm], &im[&arm], Alternative::TwoSided) {
            Ok(result) => Some(TestRow {
                rater: "Clinician vs Model".into(),
                treatment_x: arm.display_name().to_string(),
                treatment_y: arm.display_name().to_string(),
                test: "wilcoxon_two_sided".into(),
                result,
            }),
            Err(e) => {
                log::warn!("clinician vs model on {} not tested: {e}", arm.display_name());
                None
            }
        })
        .collect()
}

/// Applies the correction over the whole family to every row.
pub fn corrected(rows: Vec<TestRow>) -> Vec<TestRow> {
    let results: Vec<_> = rows.iter().map(|r| r.result.clone()).collect();
    rows.into_iter()
        .zip(bonferroni(&results, N_COMPARISONS))
        .map(|(r, result)| TestRow { result, ..r })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn subject(base: f64, l: f64, d: f64, dl: f64) -> Subject {
        [
            (Treatment::Baseline, base),
            (Treatment::Ldopa, l),
            (Treatment::Dbs, d),
            (Treatment::DbsLdopa, dl),
        ]
        .into_iter()
        .collect()
    }

    #[test]
    fn zero_baseline_subjects_are_excluded() {
        let s = vec![subject(2.0, 1.0, 0.0, 0.0), subject(0.0, 0.0, 0.0, 0.0)];
        let imp = improvements(&s);
        assert_eq!(imp[&Treatment::Ldopa], vec![0.5]);
        assert_eq!(imp[&Treatment::Dbs], vec![1.0]);
    }

    #[test]
    fn stronger_arm_is_significant_one_sided() {
        let s: Vec<Subject> = (0..12).map(|i| subject(1.0 + i as f64 * 0.1, 0.7, 0.3, 0.2)).collect();
        let rows = corrected(arm_tests("Amplitude", &s));
        let ld = rows.iter().find(|r| r.treatment_y == Treatment::Dbs.display_name()).unwrap();
        assert!((ld.result.p_value - 0.5f64.powi(12)).abs() < 1e-15);
        assert!((ld.result.corrected_p - 9.0 * 0.5f64.powi(12)).abs() < 1e-15);
    }

    #[test]
    fn identical_raters_are_not_tested() {
        let s = vec![subject(2.0, 1.0, 0.0, 0.0); 5];
        assert!(rater_tests(&s, &s).is_empty());
    }
}
