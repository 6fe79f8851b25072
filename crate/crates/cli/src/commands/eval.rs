use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::Serialize;
use tremorkit::dataset::{FoldAssignment, Manifest, ManifestRow};
use tremorkit::deepnet::{centre_crop, ConvLstm};
use tremorkit::features::FeatureVector;
use tremorkit::forest::ForestModel;
use tremorkit::stats::{binomial_test_one_sided, write_roc_csv, write_tests_csv, ConfusionMatrix, TestResult, TestRow, BINARY_CUTS};

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};
use crate::layout::{require, write_csv, write_file, Layout};
use crate::metrics::{asymmetry_confusion, asymmetry_kappa, confusion, confusion_5class, metrics, roc_curves, Metrics, Scored};
use crate::pipeline::{load_clip, load_cohort, load_features, load_folds, load_manifest, with_pool};
use crate::treatment::{arm_tests, corrected, effects, rater_tests, Effect, Subject};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Rfc,
    Net,
}

impl ModelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Rfc => "rfc",
            ModelKind::Net => "net",
        }
    }
}

enum Predictor {
    Rfc(ForestModel<f64>),
    Net(ConvLstm<f32>),
}

struct Inputs<'a> {
    layout: &'a Layout,
    features: BTreeMap<String, FeatureVector<f64>>,
    eval_frames: Option<usize>,
}

impl Predictor {
    fn load(layout: &Layout, kind: ModelKind, fold: usize) -> CliResult<Self> {
        Ok(match kind {
            ModelKind::Rfc => {
                let path = layout.rfc_model(fold);
                require(&path)?;
                Predictor::Rfc(ForestModel::load(&path)?)
            }
            ModelKind::Net => {
                let path = layout.net_model(fold);
                require(&path)?;
                Predictor::Net(ConvLstm::load(&path)?)
            }
        })
    }

    /// Class probabilities, or `None` when the row failed this model's pipeline.
    fn probs(&self, inputs: &Inputs, row: &ManifestRow) -> CliResult<Option<Vec<f64>>> {
        match self {
            Predictor::Rfc(m) => match inputs.features.get(&row.key()) {
                Some(f) => Ok(Some(m.predict_proba(&f.values)?)),
                None => Ok(None),
            },
            Predictor::Net(m) => match load_clip(inputs.layout, row)? {
                Some(clip) => Ok(Some(m.predict(&centre_crop(&clip, inputs.eval_frames)?)?.probs)),
                None => Ok(None),
            },
        }
    }
}

#[derive(Debug, Serialize)]
struct PredictionRow {
    fold: usize,
    assessment_id: String,
    laterality: String,
    score: u8,
    label: u8,
    model: &'static str,
    status: &'static str,
    predicted: Option<u8>,
    p0: Option<f64>,
    p1: Option<f64>,
    p2: Option<f64>,
    p3: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct FoldReport {
    pub fold: usize,
    pub model: ModelKind,
    /// Test assessments in the fold.
    pub n: usize,
    pub failures: usize,
    pub metrics: Metrics,
}

#[derive(Debug, Clone, Serialize)]
pub struct SummaryReport {
    pub model: ModelKind,
    pub n: usize,
    pub failures: usize,
    pub metrics: Metrics,
    pub asymmetry_kappa: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct FoldComparison {
    pub fold: usize,
    pub kappa_rfc: Option<f64>,
    pub kappa_net: Option<f64>,
    pub net_better: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct Comparison {
    pub folds: Vec<FoldComparison>,
    pub successes: u64,
    pub trials: u64,
    pub binomial: TestResult,
}

#[derive(Debug, Clone, Serialize)]
pub struct TreatmentReport {
    pub model_rater: ModelKind,
    pub effects: Vec<Effect>,
    pub tests: Vec<TestRow>,
}

#[derive(Debug, Clone, Serialize)]
pub struct EvalReport {
    pub schema_version: u32,
    pub seed: u64,
    pub folds: Vec<FoldReport>,
    pub summary: Vec<SummaryReport>,
    pub comparison: Option<Comparison>,
    pub treatment: Option<TreatmentReport>,
}

pub const METRIC_COLUMNS: [&str; 10] = [
    "n_ok",
    "kappa",
    "kappa_5class",
    "balanced_accuracy",
    "auc_0",
    "auc_1",
    "auc_2",
    "sens95_0",
    "sens95_1",
    "sens95_2",
];

pub fn fmt_opt(v: Option<f64>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

fn metric_cells(m: &Metrics) -> Vec<String> {
    let mut out = vec![m.n_ok.to_string()];
    out.extend(
        [
            m.kappa,
            m.kappa_5class,
            m.balanced_accuracy,
            m.auc_0,
            m.auc_1,
            m.auc_2,
            m.sens95_0,
            m.sens95_1,
            m.sens95_2,
        ]
        .map(fmt_opt),
    );
    out
}

fn records_csv(header: &[&str], rows: &[Vec<String>]) -> CliResult<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).map_err(tremorkit::Error::from)?;
    for r in rows {
        w.write_record(r).map_err(tremorkit::Error::from)?;
    }
    w.into_inner().map_err(|e| CliError::Config(e.to_string()))
}

fn confusion_bytes(cm: &ConfusionMatrix) -> CliResult<Vec<u8>> {
    let mut buf = Vec::new();
    cm.write_csv(&mut buf)?;
    Ok(buf)
}

pub fn models_of(cfg: &RunConfig) -> Vec<ModelKind> {
    let mut m = Vec::new();
    if cfg.model.includes_rfc() {
        m.push(ModelKind::Rfc);
    }
    if cfg.model.includes_net() {
        m.push(ModelKind::Net);
    }
    m
}

pub fn run(cfg: &RunConfig, layout: &Layout) -> CliResult<()> {
    let kinds = models_of(cfg);
    let selected = cfg.selected_folds();
    // fail on a missing checkpoint before any work is done
    for &e in &selected {
        for &k in &kinds {
            require(&match k {
                ModelKind::Rfc => layout.rfc_model(e),
                ModelKind::Net => layout.net_model(e),
            })?;
        }
    }
    let manifest = load_manifest(layout)?;
    let folds = load_folds(layout)?;
    let features = if kinds.contains(&ModelKind::Rfc) {
        load_features(&layout.features())?
    } else {
        BTreeMap::new()
    };
    let inputs = Inputs {
        layout,
        features,
        eval_frames: cfg.train.eval_frames,
    };
    let report = with_pool(cfg.jobs, || evaluate(cfg, &inputs, &manifest, &folds, &kinds, &selected))??;
    let text = serde_json::to_string_pretty(&report).map_err(|e| CliError::Config(e.to_string()))?;
    write_file(&layout.eval_dir().join("report.json"), text.as_bytes())
}

fn evaluate(
    cfg: &RunConfig,
    inputs: &Inputs,
    manifest: &Manifest,
    folds: &FoldAssignment,
    kinds: &[ModelKind],
    selected: &[usize],
) -> CliResult<EvalReport> {
    let layout = inputs.layout;
    let dir = layout.eval_dir();
    let mut prediction_rows = Vec::new();
    let mut fold_reports = Vec::new();
    let mut pooled: BTreeMap<ModelKind, (Vec<Scored>, usize, usize)> = BTreeMap::new();
    let mut predictors: BTreeMap<(ModelKind, usize), Predictor> = BTreeMap::new();

    for &e in selected {
        let test: Vec<&ManifestRow> = folds.split(manifest, e)?.test.iter().map(|&i| &manifest.rows[i]).collect();
        for &kind in kinds {
            let predictor = Predictor::load(layout, kind, e)?;
            let probs = test
                .par_iter()
                .map(|r| predictor.probs(inputs, r))
                .collect::<CliResult<Vec<_>>>()?;
            let mut scored = Vec::new();
            for (row, p) in test.iter().zip(&probs) {
                let cell = |c: usize| p.as_ref().map(|p| p[c]);
                prediction_rows.push(PredictionRow {
                    fold: e,
                    assessment_id: row.assessment_id.clone(),
                    laterality: row.laterality.to_string(),
                    score: row.score,
                    label: row.merged(),
                    model: kind.as_str(),
                    status: if p.is_some() { "ok" } else { "failed" },
                    predicted: p.as_ref().map(|p| tremorkit::forest::argmax(p) as u8),
                    p0: cell(0),
                    p1: cell(1),
                    p2: cell(2),
                    p3: cell(3),
                });
                if let Some(p) = p {
                    scored.push(Scored {
                        assessment_id: row.assessment_id.clone(),
                        left: row.laterality == tremorkit::poseproc::Laterality::Left,
                        score: row.score,
                        probs: p.clone(),
                    });
                }
            }
            let failures = test.len() - scored.len();
            let m = metrics(&scored)?;
            log::info!("fold {e} {}: kappa {} on {} of {}", kind.as_str(), fmt_opt(m.kappa), scored.len(), test.len());
            fold_reports.push(FoldReport {
                fold: e,
                model: kind,
                n: test.len(),
                failures,
                metrics: m,
            });
            let entry = pooled.entry(kind).or_default();
            entry.0.extend(scored);
            entry.1 += test.len();
            entry.2 += failures;
            predictors.insert((kind, e), predictor);
        }
    }

    write_csv(
        &dir.join("predictions.csv"),
        &["fold", "assessment_id", "laterality", "score", "label", "model", "status", "predicted", "p0", "p1", "p2", "p3"],
        &prediction_rows,
    )?;

    let mut header = vec!["fold", "model", "n", "failures"];
    header.extend(METRIC_COLUMNS);
    let rows: Vec<Vec<String>> = fold_reports
        .iter()
        .map(|f| {
            let mut r = vec![f.fold.to_string(), f.model.as_str().to_string(), f.n.to_string(), f.failures.to_string()];
            r.extend(metric_cells(&f.metrics));
            r
        })
        .collect();
    write_file(&dir.join("fold_metrics.csv"), &records_csv(&header, &rows)?)?;

    let mut summary = Vec::new();
    let mut curves = Vec::new();
    for (&kind, (scored, n, failures)) in &pooled {
        let name = kind.as_str();
        write_file(&dir.join(format!("confusion_{name}.csv")), &confusion_bytes(&confusion(scored)?)?)?;
        write_file(&dir.join(format!("confusion5_{name}.csv")), &confusion_bytes(&confusion_5class(scored)?)?)?;
        if let Some(cm) = asymmetry_confusion(scored)? {
            write_file(&dir.join(format!("asymmetry_{name}.csv")), &confusion_bytes(&cm)?)?;
        }
        for (cut, c) in BINARY_CUTS.iter().zip(roc_curves(scored)) {
            if let Some(c) = c {
                curves.push((format!("{name}_cut{cut}"), c));
            }
        }
        summary.push(SummaryReport {
            model: kind,
            n: *n,
            failures: *failures,
            metrics: metrics(scored)?,
            asymmetry_kappa: asymmetry_kappa(scored)?,
        });
    }
    let mut header = vec!["model", "n", "failures"];
    header.extend(METRIC_COLUMNS);
    header.push("asymmetry_kappa");
    let rows: Vec<Vec<String>> = summary
        .iter()
        .map(|s| {
            let mut r = vec![s.model.as_str().to_string(), s.n.to_string(), s.failures.to_string()];
            r.extend(metric_cells(&s.metrics));
            r.push(fmt_opt(s.asymmetry_kappa));
            r
        })
        .collect();
    write_file(&dir.join("summary_metrics.csv"), &records_csv(&header, &rows)?)?;
    let mut buf = Vec::new();
    write_roc_csv(&curves, &mut buf)?;
    write_file(&dir.join("roc.csv"), &buf)?;

    let comparison = if kinds.len() == 2 { Some(compare(&fold_reports, selected)?) } else { None };
    if let Some(c) = &comparison {
        let rows: Vec<Vec<String>> = c
            .folds
            .iter()
            .map(|f| vec![f.fold.to_string(), fmt_opt(f.kappa_rfc), fmt_opt(f.kappa_net), u8::from(f.net_better).to_string()])
            .collect();
        write_file(
            &dir.join("model_comparison.csv"),
            &records_csv(&["fold", "kappa_rfc", "kappa_net", "net_better"], &rows)?,
        )?;
    }

    let treatment = match load_cohort(layout)? {
        Some(cohort) => Some(treat(cfg, inputs, &cohort, kinds, selected, &predictors)?),
        None => None,
    };
    if let Some(t) = &treatment {
        let mut buf = Vec::new();
        write_tests_csv(&t.tests, &mut buf)?;
        write_file(&dir.join("treatment_tests.csv"), &buf)?;
        write_csv(&dir.join("treatment_effects.csv"), &["rater", "treatment", "n", "mean_improvement"], &t.effects)?;
    }

    Ok(EvalReport {
        schema_version: REPORT_SCHEMA_VERSION,
        seed: cfg.seed,
        folds: fold_reports,
        summary,
        comparison,
        treatment,
    })
}

/// Folds where the network's kappa on its own surviving assessments beats the forest's.
fn compare(reports: &[FoldReport], selected: &[usize]) -> CliResult<Comparison> {
    let kappa = |kind: ModelKind, fold: usize| {
        reports
            .iter()
            .find(|r| r.model == kind && r.fold == fold)
            .and_then(|r| r.metrics.kappa)
    };
    let folds: Vec<FoldComparison> = selected
        .iter()
        .map(|&fold| {
            let (r, n) = (kappa(ModelKind::Rfc, fold), kappa(ModelKind::Net, fold));
            FoldComparison {
                fold,
                kappa_rfc: r,
                kappa_net: n,
                net_better: matches!((r, n), (Some(r), Some(n)) if n > r),
            }
        })
        .collect();
    let successes = folds.iter().filter(|f| f.net_better).count() as u64;
    let trials = folds.len() as u64;
    Ok(Comparison {
        binomial: binomial_test_one_sided(successes, trials, 0.5)?,
        folds,
        successes,
        trials,
    })
}

#[derive(Debug, Serialize)]
struct CohortPrediction {
    assessment_id: String,
    laterality: String,
    patient_id: String,
    treatment: String,
    score: u8,
    model: &'static str,
    predicted: Option<u8>,
    wrist_mean_amplitude: Option<f64>,
}

/// Treatment effects rated by the clinician score, the model and the wrist amplitude.
fn treat(
    cfg: &RunConfig,
    inputs: &Inputs,
    cohort: &Manifest,
    kinds: &[ModelKind],
    selected: &[usize],
    predictors: &BTreeMap<(ModelKind, usize), Predictor>,
) -> CliResult<TreatmentReport> {
    let layout = inputs.layout;
    let rater = if kinds.contains(&ModelKind::Net) { ModelKind::Net } else { ModelKind::Rfc };
    let cohort_inputs = Inputs {
        layout,
        features: if layout.cohort_features().exists() { load_features(&layout.cohort_features())? } else { BTreeMap::new() },
        eval_frames: cfg.train.eval_frames,
    };
    // fold models vote by averaging probabilities
    let predicted = cohort
        .rows
        .par_iter()
        .map(|row| {
            let mut acc: Option<Vec<f64>> = None;
            for &e in selected {
                if let Some(p) = predictors[&(rater, e)].probs(&cohort_inputs, row)? {
                    match &mut acc {
                        Some(a) => a.iter_mut().zip(&p).for_each(|(a, v)| *a += v),
                        None => acc = Some(p),
                    }
                }
            }
            Ok(acc.map(|a| tremorkit::forest::argmax(&a) as u8))
        })
        .collect::<CliResult<Vec<_>>>()?;

    let mut clinician: BTreeMap<(String, String), Subject> = BTreeMap::new();
    let mut model: BTreeMap<(String, String), Subject> = BTreeMap::new();
    let mut amplitude: BTreeMap<(String, String), Subject> = BTreeMap::new();
    let mut rows = Vec::new();
    for (row, pred) in cohort.rows.iter().zip(&predicted) {
        let Some(t) = row.treatment()? else { continue };
        let patient = row.group().to_string();
        let key = (patient.clone(), row.laterality.to_string());
        let amp = cohort_inputs.features.get(&row.key()).and_then(|f| f.get("wrist", "mean_amplitude"));
        clinician.entry(key.clone()).or_default().insert(t, row.score as f64);
        if let Some(p) = pred {
            model.entry(key.clone()).or_default().insert(t, *p as f64);
        }
        if let Some(a) = amp {
            amplitude.entry(key).or_default().insert(t, a);
        }
        rows.push(CohortPrediction {
            assessment_id: row.assessment_id.clone(),
            laterality: row.laterality.to_string(),
            patient_id: patient,
            treatment: t.as_str().to_string(),
            score: row.score,
            model: rater.as_str(),
            predicted: *pred,
            wrist_mean_amplitude: amp,
        });
    }
    write_csv(
        &layout.eval_dir().join("cohort_predictions.csv"),
        &["assessment_id", "laterality", "patient_id", "treatment", "score", "model", "predicted", "wrist_mean_amplitude"],
        &rows,
    )?;

    let subjects = |m: &BTreeMap<(String, String), Subject>| m.values().cloned().collect::<Vec<_>>();
    let (c, a) = (subjects(&clinician), subjects(&amplitude));
    // pair clinician and model ratings subject by subject
    let (paired_c, paired_m): (Vec<Subject>, Vec<Subject>) = clinician
        .iter()
        .filter_map(|(k, c)| model.get(k).map(|m| (c.clone(), m.clone())))
        .unzip();

    let mut tests = arm_tests("Clinician", &c);
    tests.extend(arm_tests("Model", &paired_m));
    tests.extend(rater_tests(&paired_c, &paired_m));
    tests.extend(arm_tests("Amplitude", &a));
    let mut fx = effects("Clinician", &c);
    fx.extend(effects("Model", &paired_m));
    fx.extend(effects("Amplitude", &a));
    Ok(TreatmentReport {
        model_rater: rater,
        effects: fx,
        tests: corrected(tests),
    })
}
