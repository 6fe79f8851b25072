use rand::Rng as _;
use rayon::prelude::*;
use tremorkit::dataset::{Manifest, ManifestRow};
use tremorkit::poseproc::{FrameSource, ImageDirSource};
use tremorkit::rng::{derive_seed, substream};
use tremorkit::synth::{gen_assessment, gen_dataset, gen_treatment_cohort, Confound, SynthRecord};

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};
use crate::layout::{ensure_dir, file_stem, Layout};
use crate::pipeline::with_pool;

pub fn run(cfg: &RunConfig, layout: &Layout) -> CliResult<()> {
    let spec = cfg.synth.dataset_spec(derive_seed(cfg.seed, "synth"))?;
    let mut records = gen_dataset(&spec)?;
    if let Some(mean) = cfg.synth.keypoint_dropout {
        let mut rng = substream(cfg.seed, "synth.dropout");
        for r in &mut records {
            r.spec.confound = Confound::KeypointDropout(rng.random_range(0.0..=2.0 * mean));
        }
    }
    let rows = with_pool(cfg.jobs, || write_sources(cfg, layout, &records))??;
    Manifest::new(rows)?.write(&layout.manifest())?;
    log::info!("wrote {} assessments to {}", records.len(), layout.manifest().display());

    if cfg.synth.cohort_patients > 0 {
        let cohort = gen_treatment_cohort(cfg.synth.cohort_patients, cfg.synth.effects, derive_seed(cfg.seed, "cohort"));
        let rows = with_pool(cfg.jobs, || write_sources(cfg, layout, &cohort))??;
        Manifest::new(rows)?.write(&layout.cohort_manifest())?;
        log::info!("wrote {} treatment-cohort assessments", cohort.len());
    }
    Ok(())
}

fn write_sources(cfg: &RunConfig, layout: &Layout, records: &[SynthRecord]) -> CliResult<Vec<ManifestRow>> {
    ensure_dir(&layout.keypoints_dir())?;
    records
        .par_iter()
        .map(|rec| {
            let a = gen_assessment(&rec.spec)?;
            let mut row = ManifestRow::from_record(rec);
            let stem = file_stem(&row.key());
            let kp = format!("keypoints/{stem}.jsonl");
            a.pose.save_jsonl(&layout.data.join(&kp))?;
            row.keypoints = Some(kp.into());
            if cfg.synth.write_frames {
                let rel = format!("frames/{stem}");
                let frames = (0..a.video.len()).map(|i| a.video.frame(i)).collect::<tremorkit::Result<Vec<_>>>()?;
                ImageDirSource::write(&layout.data.join(&rel), frames)?;
                row.video = Some(rel.into());
            }
            Ok::<_, CliError>(row)
        })
        .collect()
}
