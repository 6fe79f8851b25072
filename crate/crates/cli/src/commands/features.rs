use rayon::prelude::*;
use serde::Serialize;
use tremorkit::features::{feature_vector, write_feature_csv, FeatureRow};

use crate::config::RunConfig;
use crate::error::CliResult;
use crate::layout::{write_csv, write_file, Layout};
use crate::pipeline::{all_rows, load_pose, with_pool, Cohort};

#[derive(Debug, Serialize)]
pub struct PoseFailure {
    pub cohort: &'static str,
    pub assessment_id: String,
    pub laterality: String,
    pub reason: String,
}

pub fn run(cfg: &RunConfig, layout: &Layout) -> CliResult<()> {
    let rows = all_rows(layout)?;
    let results = with_pool(cfg.jobs, || {
        rows.par_iter()
            .map(|(cohort, row)| Ok((*cohort, row, feature_vector::<f64>(&load_pose(layout, row)?, row.roi()))))
            .collect::<CliResult<Vec<_>>>()
    })??;
    let mut main = Vec::new();
    let mut treatment = Vec::new();
    let mut failures = Vec::new();
    for (cohort, row, result) in results {
        match result {
            Ok(features) => {
                let out = FeatureRow {
                    assessment_id: row.assessment_id.clone(),
                    laterality: row.laterality,
                    features,
                };
                match cohort {
                    Cohort::Main => main.push(out),
                    Cohort::Treatment => treatment.push(out),
                }
            }
            Err(e) => failures.push(PoseFailure {
                cohort: cohort.as_str(),
                assessment_id: row.assessment_id.clone(),
                laterality: row.laterality.to_string(),
                reason: e.to_string(),
            }),
        }
    }
    log::info!("extracted {} feature rows, {} pose failures", main.len() + treatment.len(), failures.len());
    write_features(&layout.features(), &main)?;
    if !treatment.is_empty() {
        write_features(&layout.cohort_features(), &treatment)?;
    }
    write_csv(&layout.pose_failures(), &["cohort", "assessment_id", "laterality", "reason"], &failures)
}

fn write_features(path: &std::path::Path, rows: &[FeatureRow<f64>]) -> CliResult<()> {
    let mut buf = Vec::new();
    write_feature_csv(rows, &mut buf)?;
    write_file(path, &buf)
}
