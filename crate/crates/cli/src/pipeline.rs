//! Loading manifests, poses, sources and per-row artifacts.

use std::collections::BTreeMap;
use std::path::Path;

use tremorkit::dataset::{FoldAssignment, Manifest, ManifestRow};
use tremorkit::features::{read_feature_csv, FeatureVector};
use tremorkit::poseproc::{ClipTensor, FrameSource, ImageDirSource, PoseSequence};
use tremorkit::synth::gen_assessment;

use crate::error::{CliError, CliResult};
use crate::layout::{require, Layout};

pub const DEFAULT_FPS: f64 = 30.0;

/// Which manifest a row came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Cohort {
    Main,
    Treatment,
}

impl Cohort {
    pub fn as_str(self) -> &'static str {
        match self {
            Cohort::Main => "main",
            Cohort::Treatment => "treatment",
        }
    }
}

pub fn load_manifest(layout: &Layout) -> CliResult<Manifest> {
    let path = layout.manifest();
    require(&path)?;
    Ok(Manifest::read(&path)?)
}

pub fn load_cohort(layout: &Layout) -> CliResult<Option<Manifest>> {
    let path = layout.cohort_manifest();
    if !path.exists() {
        return Ok(None);
    }
    Ok(Some(Manifest::read(&path)?))
}

/// Main rows followed by treatment-cohort rows.
pub fn all_rows(layout: &Layout) -> CliResult<Vec<(Cohort, ManifestRow)>> {
    let mut rows: Vec<(Cohort, ManifestRow)> = load_manifest(layout)?.rows.into_iter().map(|r| (Cohort::Main, r)).collect();
    if let Some(c) = load_cohort(layout)? {
        rows.extend(c.rows.into_iter().map(|r| (Cohort::Treatment, r)));
    }
    Ok(rows)
}

pub fn row_fps(row: &ManifestRow) -> f64 {
    row.fps.unwrap_or(DEFAULT_FPS)
}

/// Keypoints from the row's JSONL file, or regenerated from its generator parameters.
pub fn load_pose(layout: &Layout, row: &ManifestRow) -> CliResult<PoseSequence> {
    if let Some(rel) = &row.keypoints {
        let path = layout.data.join(rel);
        require(&path)?;
        return Ok(PoseSequence::read_jsonl(&path, row_fps(row), row.laterality)?);
    }
    match row.synth_spec()? {
        Some(spec) => Ok(gen_assessment(&spec)?.pose),
        None => Err(CliError::Config(format!("row {} has neither keypoints nor generator parameters", row.key()))),
    }
}

/// Frame directory of the row when present, else the re-rendered synthetic recording.
pub fn load_video(layout: &Layout, row: &ManifestRow) -> CliResult<Box<dyn FrameSource + Send + Sync>> {
    if let Some(rel) = &row.video {
        let path = layout.data.join(rel);
        require(&path)?;
        return Ok(Box::new(ImageDirSource::open(&path)?));
    }
    match row.synth_spec()? {
        Some(spec) => Ok(Box::new(gen_assessment(&spec)?.video)),
        None => Err(CliError::Config(format!("row {} has neither frames nor generator parameters", row.key()))),
    }
}

pub fn load_clip(layout: &Layout, row: &ManifestRow) -> CliResult<Option<ClipTensor<f32>>> {
    let path = layout.clip(&row.key());
    if !path.exists() {
        return Ok(None);
    }
    Ok(Some(ClipTensor::load(&path, row_fps(row))?))
}

/// Feature vectors keyed by `assessment_id/laterality`.
pub fn load_features(path: &Path) -> CliResult<BTreeMap<String, FeatureVector<f64>>> {
    require(path)?;
    Ok(read_feature_csv::<f64>(path)?
        .into_iter()
        .map(|r| (format!("{}/{}", r.assessment_id, r.laterality), r.features))
        .collect())
}

pub fn load_folds(layout: &Layout) -> CliResult<FoldAssignment> {
    let path = layout.folds();
    require(&path)?;
    Ok(FoldAssignment::read(&path)?)
}

/// Runs `f` on a pool of `jobs` workers, or on the global pool.
pub fn with_pool<R: Send>(jobs: Option<usize>, f: impl FnOnce() -> R + Send) -> CliResult<R> {
    match jobs {
        None => Ok(f()),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| CliError::Config(format!("cannot start {n} workers: {e}")))?;
            Ok(pool.install(f))
        }
    }
}
