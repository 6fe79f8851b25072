use rayon::prelude::*;
use serde::Serialize;
use tremorkit::dataset::{ManifestRow, N_MERGED};
use tremorkit::deepnet::{centre_crop, ConvLstm};
use tremorkit::embed::{fit_envelope, linear_probe_accuracy, tsne, Envelope};
use tremorkit::rng::derive_seed;
use tremorkit::synth::Confound;

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};
use crate::layout::{require, write_csv, write_file, Layout};
use crate::pipeline::{load_clip, load_folds, load_manifest, with_pool};

#[derive(Debug, Serialize)]
struct PointRow {
    assessment_id: String,
    laterality: String,
    score: u8,
    class: u8,
    confound: String,
    x: f64,
    y: f64,
    outlier: u8,
    mahalanobis: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct EmbedSummary {
    pub fold: usize,
    pub n: usize,
    pub perplexity: f64,
    pub final_kl: Option<f64>,
    pub probe_accuracy: f64,
    pub class0_points: usize,
    pub class0_outliers: usize,
    /// Camera-shake share among class-0 outliers over its share among all class-0 points.
    pub camera_shake_enrichment: Option<f64>,
    pub envelopes: Vec<Envelope>,
}

pub fn run(cfg: &RunConfig, layout: &Layout) -> CliResult<()> {
    let fold = cfg.fold.unwrap_or(0);
    let path = layout.net_model(fold);
    require(&path)?;
    let model = ConvLstm::<f32>::load(&path)?;
    let manifest = load_manifest(layout)?;
    let folds = load_folds(layout)?;
    let test: Vec<&ManifestRow> = folds.split(&manifest, fold)?.test.iter().map(|&i| &manifest.rows[i]).collect();
    let embedded = with_pool(cfg.jobs, || {
        test.par_iter()
            .map(|row| match load_clip(layout, row)? {
                Some(clip) => Ok(Some((*row, model.predict(&centre_crop(&clip, cfg.train.eval_frames)?)?.embedding))),
                None => Ok(None),
            })
            .collect::<CliResult<Vec<_>>>()
    })??;
    let (rows, x): (Vec<&ManifestRow>, Vec<Vec<f64>>) = embedded.into_iter().flatten().unzip();
    if rows.is_empty() {
        return Err(CliError::Config(format!("fold {fold} has no preprocessed test clips to embed")));
    }
    let labels: Vec<u8> = rows.iter().map(|r| r.merged()).collect();
    let result = tsne(&x, &cfg.embed.tsne, derive_seed(cfg.seed, &format!("tsne.fold{fold}")))?;

    let mut envelopes = Vec::new();
    for c in 0..N_MERGED as u8 {
        let pts: Vec<[f64; 2]> = result.coords.iter().zip(&labels).filter(|(_, &l)| l == c).map(|(p, _)| *p).collect();
        if pts.is_empty() {
            continue;
        }
        match fit_envelope(c, &pts, cfg.embed.contamination) {
            Ok(e) => envelopes.push(e),
            Err(e) => log::warn!("fold {fold}: no envelope for class {c}: {e}"),
        }
    }

    let mut points = Vec::new();
    for ((row, &p), &c) in rows.iter().zip(&result.coords).zip(&labels) {
        let d = envelopes.iter().find(|e| e.class == c).map(|e| (e.distance(p), e.is_outlier(p)));
        points.push(PointRow {
            assessment_id: row.assessment_id.clone(),
            laterality: row.laterality.to_string(),
            score: row.score,
            class: c,
            confound: row.confound.clone(),
            x: p[0],
            y: p[1],
            outlier: u8::from(d.is_some_and(|d| d.1)),
            mahalanobis: d.map(|d| d.0),
        });
    }
    let header = ["assessment_id", "laterality", "score", "class", "confound", "x", "y", "outlier", "mahalanobis"];
    let dir = layout.embed_dir();
    write_csv(&dir.join(format!("tsne_fold{fold}.csv")), &header, &points)?;
    let mut outliers: Vec<&PointRow> = points.iter().filter(|p| p.outlier == 1).collect();
    outliers.sort_by(|a, b| b.mahalanobis.unwrap_or(0.0).total_cmp(&a.mahalanobis.unwrap_or(0.0)));
    write_csv(&dir.join(format!("outliers_fold{fold}.csv")), &header, &outliers)?;

    let summary = summarise(fold, &points, &result.coords, &labels, result.perplexity, result.kl_history.last().map(|k| k.1), envelopes);
    log::info!(
        "fold {fold}: probe accuracy {:.3}, camera-shake enrichment {:?}",
        summary.probe_accuracy,
        summary.camera_shake_enrichment
    );
    let text = serde_json::to_string_pretty(&summary).map_err(|e| CliError::Config(e.to_string()))?;
    write_file(&dir.join(format!("summary_fold{fold}.json")), text.as_bytes())
}

fn summarise(
    fold: usize,
    points: &[PointRow],
    coords: &[[f64; 2]],
    labels: &[u8],
    perplexity: f64,
    final_kl: Option<f64>,
    envelopes: Vec<Envelope>,
) -> EmbedSummary {
    let xy: Vec<Vec<f64>> = coords.iter().map(|p| p.to_vec()).collect();
    let shaken = |p: &&&PointRow| p.confound.parse::<Confound>().is_ok_and(|c| c == Confound::CameraShake);
    let class0: Vec<&PointRow> = points.iter().filter(|p| p.class == 0).collect();
    let out0: Vec<&PointRow> = class0.iter().copied().filter(|p| p.outlier == 1).collect();
    let base = class0.iter().filter(shaken).count() as f64 / class0.len().max(1) as f64;
    let among = out0.iter().filter(shaken).count() as f64 / out0.len().max(1) as f64;
    EmbedSummary {
        fold,
        n: points.len(),
        perplexity,
        final_kl,
        probe_accuracy: linear_probe_accuracy(&xy, labels, N_MERGED),
        class0_points: class0.len(),
        class0_outliers: out0.len(),
        camera_shake_enrichment: (base > 0.0 && !out0.is_empty()).then(|| among / base),
        envelopes,
    }
}
