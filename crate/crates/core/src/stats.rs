//! Agreement metrics, ROC analysis and the hypothesis tests used to compare
//! raters, models and treatment arms.

use std::io::Write;

use serde::Serialize;
use statrs::distribution::{ContinuousCDF, Normal};
use statrs::function::factorial::ln_binomial;

use crate::error::{Error, Result};

/// Row = clinician score, column = model score.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ConfusionMatrix {
    pub k: usize,
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn new(counts: Vec<Vec<u64>>) -> Result<Self> {
        let k = counts.len();
        if k == 0 || counts.iter().any(|r| r.len() != k) {
            return Err(Error::ShapeMismatch("confusion matrix must be square and non-empty".into()));
        }
        Ok(ConfusionMatrix { k, counts })
    }

    pub fn from_labels(truth: &[u8], predicted: &[u8], k: usize) -> Result<Self> {
        if truth.len() != predicted.len() {
            return Err(Error::ShapeMismatch(format!("{} truths, {} predictions", truth.len(), predicted.len())));
        }
        let mut counts = vec![vec![0u64; k]; k];
        for (&t, &p) in truth.iter().zip(predicted) {
            if t as usize >= k || p as usize >= k {
                return Err(Error::OutOfRange(t.max(p) as i64));
            }
            counts[t as usize][p as usize] += 1;
        }
        Ok(ConfusionMatrix { k, counts })
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn write_csv(&self, w: impl Write) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        let mut header = vec!["clinician".to_string()];
        header.extend((0..self.k).map(|j| format!("model_{j}")));
        wr.write_record(&header)?;
        for (i, row) in self.counts.iter().enumerate() {
            let mut rec = vec![i.to_string()];
            rec.extend(row.iter().map(u64::to_string));
            wr.write_record(&rec)?;
        }
        wr.flush().map_err(|e| Error::io("<confusion csv>", e))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Kappa {
    pub value: f64,
    /// Set when expected disagreement is zero (both raters constant and equal).
    pub degenerate: bool,
}

/// Linearly weighted Cohen's kappa.
pub fn weighted_kappa(cm: &ConfusionMatrix) -> Result<Kappa> {
    let n = cm.total() as f64;
    if n == 0.0 {
        return Err(Error::Invalid("kappa of an empty confusion matrix".into()));
    }
    let k = cm.k;
    if k == 1 {
        return Ok(Kappa { value: 1.0, degenerate: true });
    }
    let rows: Vec<f64> = cm.counts.iter().map(|r| r.iter().sum::<u64>() as f64).collect();
    let cols: Vec<f64> = (0..k).map(|j| cm.counts.iter().map(|r| r[j]).sum::<u64>() as f64).collect();
    let mut observed = 0.0;
    let mut expected = 0.0;
    for i in 0..k {
        for j in 0..k {
            let w = i.abs_diff(j) as f64 / (k - 1) as f64;
            observed += w * cm.counts[i][j] as f64;
            expected += w * rows[i] * cols[j] / n;
        }
    }
    if expected == 0.0 {
        return Ok(Kappa { value: 1.0, degenerate: true });
    }
    Ok(Kappa {
        value: 1.0 - observed / expected,
        degenerate: false,
    })
}

/// Mean recall over clinician classes that occur.
pub fn balanced_accuracy(cm: &ConfusionMatrix) -> f64 {
    let recalls: Vec<f64> = cm
        .counts
        .iter()
        .enumerate()
        .filter_map(|(i, row)| {
            let total: u64 = row.iter().sum();
            (total > 0).then(|| row[i] as f64 / total as f64)
        })
        .collect();
    if recalls.is_empty() {
        return 0.0;
    }
    recalls.iter().sum::<f64>() / recalls.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RocPoint {
    pub fpr: f64,
    pub tpr: f64,
    /// Scores `>= threshold` are called positive.
    pub threshold: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RocCurve {
    pub points: Vec<RocPoint>,
    pub auc: f64,
}

/// ROC over unique score thresholds; AUC by trapezoid, which gives ties half credit.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Result<RocCurve> {
    if scores.len() != labels.len() {
        return Err(Error::ShapeMismatch(format!("{} scores, {} labels", scores.len(), labels.len())));
    }
    let pos = labels.iter().filter(|&&l| l).count() as f64;
    let neg = labels.len() as f64 - pos;
    if pos == 0.0 || neg == 0.0 {
        return Err(Error::OneClassOnly);
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Invalid("NaN score".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut points = vec![RocPoint {
        fpr: 0.0,
        tpr: 0.0,
        threshold: f64::INFINITY,
    }];
    let (mut tp, mut fp) = (0.0, 0.0);
    let mut auc = 0.0;
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            if labels[order[i]] {
                tp += 1.0;
            } else {
                fp += 1.0;
            }
            i += 1;
        }
        let p = RocPoint {
            fpr: fp / neg,
            tpr: tp / pos,
            threshold: s,
        };
        let last = points[points.len() - 1];
        auc += (p.fpr - last.fpr) * (p.tpr + last.tpr) / 2.0;
        points.push(p);
    }
    Ok(RocCurve { points, auc })
}

/// Best sensitivity among operating points with specificity at least `anchor`.
pub fn sensitivity_at_specificity(curve: &RocCurve, anchor: f64) -> f64 {
    let max_fpr = 1.0 - anchor + 1e-12;
    curve
        .points
        .iter()
        .filter(|p| p.fpr <= max_fpr)
        .map(|p| p.tpr)
        .fold(0.0, f64::max)
}

/// The three binary tasks `{0..=c} vs {c+1..}` for cut-points 0, 1, 2.
pub const BINARY_CUTS: [u8; 3] = [0, 1, 2];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Alternative {
    Greater,
    TwoSided,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TestResult {
    pub statistic: f64,
    pub p_value: f64,
    pub corrected_p: f64,
    pub significance: &'static str,
}

impl TestResult {
    pub fn new(statistic: f64, p_value: f64) -> Self {
        TestResult {
            statistic,
            p_value,
            corrected_p: p_value,
            significance: significance(p_value),
        }
    }
}

pub fn significance(p: f64) -> &'static str {
    if p < 0.001 {
        "***"
    } else if p < 0.01 {
        "**"
    } else if p < 0.05 {
        "*"
    } else {
        "ns"
    }
}

fn binomial_pmf(t: u64, i: u64, p0: f64) -> f64 {
    if p0 == 0.0 {
        return f64::from(u8::from(i == 0));
    }
    if p0 == 1.0 {
        return f64::from(u8::from(i == t));
    }
    if t <= 60 {
        // exact integer coefficient keeps small cases such as 0.5^5 exact
        let mut c: u128 = 1;
        for j in 0..i.min(t - i) {
            c = c * (t - j) as u128 / (j + 1) as u128;
        }
        c as f64 * p0.powi(i as i32) * (1.0 - p0).powi((t - i) as i32)
    } else {
        (ln_binomial(t, i) + i as f64 * p0.ln() + (t - i) as f64 * (1.0 - p0).ln()).exp()
    }
}

/// Exact upper-tail binomial test `P(X >= successes)`.
pub fn binomial_test_one_sided(successes: u64, trials: u64, p0: f64) -> Result<TestResult> {
    if successes > trials {
        return Err(Error::Invalid(format!("{successes} successes out of {trials} trials")));
    }
    if !(0.0..=1.0).contains(&p0) {
        return Err(Error::Invalid(format!("p0 = {p0} outside [0, 1]")));
    }
    let p: f64 = (successes..=trials).map(|i| binomial_pmf(trials, i, p0)).sum();
    Ok(TestResult::new(successes as f64, p.min(1.0)))
}

/// Average ranks of `|d|` (1-based), ties sharing the mean rank.
fn signed_ranks(d: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..d.len()).collect();
    order.sort_by(|&a, &b| d[a].abs().total_cmp(&d[b].abs()));
    let mut ranks = vec![0.0; d.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && d[order[j + 1]].abs() == d[order[i]].abs() {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &o in &order[i..=j] {
            ranks[o] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Sample size up to which the exact null distribution is used.
pub const WILCOXON_EXACT_MAX: usize = 25;

/// Wilcoxon signed-rank test on `d = y - x`.
///
/// `Greater` tests whether `y` exceeds `x`; its statistic is the rank sum of
/// the negative differences (small when the alternative holds). `TwoSided`
/// reports `min(W+, W-)`.
pub fn wilcoxon_signed_rank(x: &[f64], y: &[f64], alternative: Alternative) -> Result<TestResult> {
    if x.len() != y.len() {
        return Err(Error::ShapeMismatch(format!("{} vs {} paired values", x.len(), y.len())));
    }
    let d: Vec<f64> = x.iter().zip(y).map(|(a, b)| b - a).filter(|v| *v != 0.0).collect();
    if d.is_empty() {
        return Err(Error::AllZeroDifferences);
    }
    let n = d.len();
    let ranks = signed_ranks(&d);
    // an empty float sum is -0.0
    let w_plus: f64 = ranks.iter().zip(&d).filter(|(_, v)| **v > 0.0).map(|(r, _)| r).sum::<f64>() + 0.0;
    let total = (n * (n + 1)) as f64 / 2.0;
    let w_minus = total - w_plus;
    let statistic = match alternative {
        Alternative::Greater => w_minus,
        Alternative::TwoSided => w_plus.min(w_minus),
    };
    let p = if n <= WILCOXON_EXACT_MAX {
        exact_wilcoxon_p(&ranks, w_plus, alternative)
    } else {
        normal_wilcoxon_p(&ranks, w_plus, alternative)
    };
    Ok(TestResult::new(statistic, p.min(1.0)))
}

/// Null distribution of `W+` by dynamic programming over doubled (integer) ranks.
fn exact_wilcoxon_p(ranks: &[f64], w_plus: f64, alternative: Alternative) -> f64 {
    let doubled: Vec<usize> = ranks.iter().map(|r| (2.0 * r).round() as usize).collect();
    let max: usize = doubled.iter().sum();
    let mut counts = vec![0f64; max + 1];
    counts[0] = 1.0;
    for &r in &doubled {
        for s in (r..=max).rev() {
            counts[s] += counts[s - r];
        }
    }
    let total: f64 = counts.iter().sum();
    let w = (2.0 * w_plus).round() as usize;
    let upper: f64 = counts[w..].iter().sum::<f64>() / total;
    let lower: f64 = counts[..=w].iter().sum::<f64>() / total;
    match alternative {
        Alternative::Greater => upper,
        Alternative::TwoSided => (2.0 * upper.min(lower)).min(1.0),
    }
}

fn normal_wilcoxon_p(ranks: &[f64], w_plus: f64, alternative: Alternative) -> f64 {
    let n = ranks.len() as f64;
    let mean = n * (n + 1.0) / 4.0;
    let mut sorted = ranks.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut tie_term = 0.0;
    let mut i = 0;
    while i < sorted.len() {
        let j = sorted[i..].iter().take_while(|&&r| r == sorted[i]).count();
        tie_term += (j * j * j - j) as f64;
        i += j;
    }
    let sd = (n * (n + 1.0) * (2.0 * n + 1.0) / 24.0 - tie_term / 48.0).sqrt();
    let normal = Normal::standard();
    match alternative {
        Alternative::Greater => normal.sf((w_plus - mean - 0.5) / sd),
        Alternative::TwoSided => {
            let z = ((w_plus - mean).abs() - 0.5).max(0.0) / sd;
            (2.0 * normal.sf(z)).min(1.0)
        }
    }
}

/// Multiplies p-values by the number of comparisons without capping at 1.
pub fn bonferroni(results: &[TestResult], n_comparisons: usize) -> Vec<TestResult> {
    let n = n_comparisons.max(1) as f64;
    results
        .iter()
        .map(|r| {
            let corrected = r.p_value * n;
            TestResult {
                corrected_p: corrected,
                significance: significance(corrected),
                ..r.clone()
            }
        })
        .collect()
}

/// Whether the right hand scores lower, equal or higher than the left.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub enum Asymmetry {
    RightLower,
    Equal,
    RightHigher,
}

impl Asymmetry {
    pub fn index(self) -> u8 {
        self as u8
    }

    pub fn label(self) -> &'static str {
        match self {
            Asymmetry::RightLower => "R<L",
            Asymmetry::Equal => "R=L",
            Asymmetry::RightHigher => "R>L",
        }
    }
}

pub fn asymmetry_label(left: u8, right: u8) -> Asymmetry {
    match right.cmp(&left) {
        std::cmp::Ordering::Less => Asymmetry::RightLower,
        std::cmp::Ordering::Equal => Asymmetry::Equal,
        std::cmp::Ordering::Greater => Asymmetry::RightHigher,
    }
}

/// Relative improvement `(baseline - treated) / baseline`.
pub fn treatment_improvement(baseline: f64, treated: f64) -> Result<f64> {
    if !(baseline > 0.0) {
        return Err(Error::BaselineZero);
    }
    Ok((baseline - treated) / baseline)
}

pub fn write_roc_csv(curves: &[(String, RocCurve)], w: impl Write) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["task", "threshold", "fpr", "tpr"])?;
    for (task, c) in curves {
        for p in &c.points {
            wr.write_record([task.clone(), format!("{}", p.threshold), format!("{}", p.fpr), format!("{}", p.tpr)])?;
        }
    }
    wr.flush().map_err(|e| Error::io("<roc csv>", e))
}

/// One row of a test table: labels of the compared groups plus the result.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TestRow {
    pub rater: String,
    pub treatment_x: String,
    pub treatment_y: String,
    pub test: String,
    pub result: TestResult,
}

pub fn write_tests_csv(rows: &[TestRow], w: impl Write) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["rater", "treatment_x", "treatment_y", "test", "statistic", "p_value", "corrected_p", "significance"])?;
    for r in rows {
        wr.write_record([
            r.rater.clone(),
            r.treatment_x.clone(),
            r.treatment_y.clone(),
            r.test.clone(),
            format!("{}", r.result.statistic),
            r.result.p_value.to_string(),
            r.result.corrected_p.to_string(),
            r.result.significance.to_string(),
        ])?;
    }
    wr.flush().map_err(|e| Error::io("<tests csv>", e))
}
