use rayon::prelude::*;
use serde::Serialize;
use tremorkit::dataset::ManifestRow;
use tremorkit::poseproc::{preprocess, ClipCoverage};

use crate::config::RunConfig;
use crate::error::CliResult;
use crate::layout::{ensure_dir, write_csv, Layout};
use crate::pipeline::{all_rows, load_pose, load_video, with_pool, Cohort};

#[derive(Debug, Serialize)]
pub struct CoverageRow {
    pub cohort: &'static str,
    pub assessment_id: String,
    pub laterality: String,
    pub torso_coverage: f64,
    pub wrist_coverage: f64,
    pub status: &'static str,
    pub reason: String,
}

pub fn run(cfg: &RunConfig, layout: &Layout) -> CliResult<()> {
    let rows = all_rows(layout)?;
    ensure_dir(&layout.clips_dir())?;
    let report = with_pool(cfg.jobs, || {
        rows.par_iter()
            .map(|(cohort, row)| clip_one(layout, *cohort, row))
            .collect::<CliResult<Vec<_>>>()
    })??;
    let failed = report.iter().filter(|r| r.status == "failed").count();
    log::info!("preprocessed {} assessments, {failed} pixel-pipeline failures", report.len());
    write_csv(
        &layout.coverage(),
        &["cohort", "assessment_id", "laterality", "torso_coverage", "wrist_coverage", "status", "reason"],
        &report,
    )
}

fn clip_one(layout: &Layout, cohort: Cohort, row: &ManifestRow) -> CliResult<CoverageRow> {
    let pose = load_pose(layout, row)?;
    let cov = ClipCoverage::measure(&pose, row.roi());
    let path = layout.clip(&row.key());
    let video = load_video(layout, row)?;
    let (status, reason) = match preprocess::<f32>(&pose, video.as_ref(), row.roi()) {
        Ok(clip) => {
            clip.save(&path)?;
            ("ok", String::new())
        }
        Err(e) => {
            // a stale clip from an earlier run must not survive a failure
            if path.exists() {
                std::fs::remove_file(&path).map_err(|source| crate::error::CliError::Write { path: path.clone(), source })?;
            }
            ("failed", e.to_string())
        }
    };
    Ok(CoverageRow {
        cohort: cohort.as_str(),
        assessment_id: row.assessment_id.clone(),
        laterality: row.laterality.to_string(),
        torso_coverage: cov.torso,
        wrist_coverage: cov.wrist,
        status,
        reason,
    })
}
