use std::time::Instant;

use rayon::prelude::*;
use tremorkit::dataset::{make_folds, oversample, FoldAssignment, Manifest, N_MERGED};
use tremorkit::deepnet::{train, write_history_csv, Labelled, TrainConfig};
use tremorkit::features::feature_names;
use tremorkit::forest::fit;
use tremorkit::rng::derive_seed;

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};
use crate::layout::{ensure_dir, write_file, Layout};
use crate::pipeline::{load_clip, load_features, load_manifest, with_pool};

/// Folds are a pure function of the manifest and seed, so every run rewrites the same file.
pub fn ensure_folds(cfg: &RunConfig, layout: &Layout, manifest: &Manifest) -> CliResult<FoldAssignment> {
    let folds = make_folds(manifest, cfg.folds, derive_seed(cfg.seed, "folds"))?;
    ensure_dir(&layout.out)?;
    folds.write(&layout.folds())?;
    Ok(folds)
}

pub fn run(cfg: &RunConfig, layout: &Layout) -> CliResult<()> {
    let manifest = load_manifest(layout)?;
    let folds = ensure_folds(cfg, layout, &manifest)?;
    ensure_dir(&layout.models_dir())?;
    with_pool(cfg.jobs, || {
        if cfg.model.includes_rfc() {
            train_rfc(cfg, layout, &manifest, &folds)?;
        }
        if cfg.model.includes_net() {
            train_net(cfg, layout, &manifest, &folds)?;
        }
        Ok(())
    })?
}

fn train_rfc(cfg: &RunConfig, layout: &Layout, manifest: &Manifest, folds: &FoldAssignment) -> CliResult<()> {
    let features = load_features(&layout.features())?;
    for e in cfg.selected_folds() {
        let split = folds.split(manifest, e)?;
        // the forest has no early stopping, so the validation fold joins its training data
        let rows: Vec<(Vec<f64>, u8)> = split
            .train
            .iter()
            .chain(&split.validation)
            .filter_map(|&i| {
                let r = &manifest.rows[i];
                features.get(&r.key()).map(|f| (f.values.clone(), r.merged()))
            })
            .collect();
        let rows = oversample(&rows, |r| r.1, N_MERGED, derive_seed(cfg.seed, &format!("rfc.fold{e}.oversample")))?;
        let (x, y): (Vec<Vec<f64>>, Vec<u8>) = rows.into_iter().unzip();
        let model = fit(&x, &y, N_MERGED, feature_names(), &cfg.forest, derive_seed(cfg.seed, &format!("rfc.fold{e}")))?;
        model.save(&layout.rfc_model(e))?;
        log::info!("fold {e}: forest trained on {} oversampled rows", x.len());
    }
    Ok(())
}

fn labelled(layout: &Layout, manifest: &Manifest, idx: &[usize]) -> CliResult<Vec<Labelled<f32>>> {
    let loaded = idx
        .par_iter()
        .map(|&i| {
            let r = &manifest.rows[i];
            Ok(load_clip(layout, r)?.map(|clip| Labelled { clip, label: r.merged() }))
        })
        .collect::<CliResult<Vec<_>>>()?;
    Ok(loaded.into_iter().flatten().collect())
}

fn train_net(cfg: &RunConfig, layout: &Layout, manifest: &Manifest, folds: &FoldAssignment) -> CliResult<()> {
    if !layout.clips_dir().exists() {
        return Err(CliError::missing(&layout.clips_dir(), "run preprocess first"));
    }
    for e in cfg.selected_folds() {
        let split = folds.split(manifest, e)?;
        let train_set = labelled(layout, manifest, &split.train)?;
        let validation = labelled(layout, manifest, &split.validation)?;
        let tc = TrainConfig {
            seed: derive_seed(cfg.seed, &format!("net.fold{e}")),
            ..cfg.train.clone()
        };
        let t0 = Instant::now();
        let out = train(&train_set, &validation, &cfg.arch, &tc)?;
        log::info!(
            "fold {e}: network trained on {} clips in {:.1}s, best epoch {} of {}",
            train_set.len(),
            t0.elapsed().as_secs_f64(),
            out.best_epoch,
            out.history.len()
        );
        out.model.save(&layout.net_model(e))?;
        let mut buf = Vec::new();
        write_history_csv(&out.history, &mut buf)?;
        write_file(&layout.net_history(e), &buf)?;
    }
    Ok(())
}
