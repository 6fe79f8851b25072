//! Mini-batch training with oversampling, augmentation and plateau scheduling.

use std::io::Write;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::augment::{AugmentParams, AugmentRanges};
use super::model::{ArchConfig, ConvLstm};
use super::optim::{Adam, ReduceOnPlateau};
use crate::dataset::oversample;
use crate::error::{Error, Result};
use crate::poseproc::ClipTensor;
use crate::rng::{derive_seed, substream};
use crate::stats::{weighted_kappa, ConfusionMatrix};
use crate::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub max_epochs: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub patience: usize,
    /// The learning rate is divided by this on each plateau.
    pub reduction_factor: f64,
    pub min_lr: f64,
    pub batch_size: usize,
    /// Random temporal crop length for training clips; `None` uses whole clips.
    pub crop_frames: Option<usize>,
    /// Centred crop length for validation clips.
    pub eval_frames: Option<usize>,
    /// Cap on clips drawn per epoch from the oversampled pool.
    pub samples_per_epoch: Option<usize>,
    pub augment: Option<AugmentRanges>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            max_epochs: 250,
            lr: 6e-4,
            weight_decay: 1e-3,
            patience: 15,
            reduction_factor: 10.0,
            min_lr: 5e-6,
            batch_size: 16,
            crop_frames: None,
            eval_frames: None,
            samples_per_epoch: None,
            augment: Some(AugmentRanges::default()),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = self.lr > 0.0 && self.weight_decay >= 0.0 && self.min_lr > 0.0 && self.reduction_factor > 1.0;
        if !positive || self.patience == 0 || self.batch_size == 0 || self.max_epochs == 0 {
            return Err(Error::Invalid(format!("invalid training configuration: {self:?}")));
        }
        if self.samples_per_epoch == Some(0) || self.crop_frames == Some(0) || self.eval_frames == Some(0) {
            return Err(Error::Invalid("crop lengths and samples per epoch must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_kappa: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<T> {
    pub model: ConvLstm<T>,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
}

#[derive(Debug, Clone)]
pub struct Labelled<T> {
    pub clip: ClipTensor<T>,
    pub label: u8,
}

pub fn write_history_csv(history: &[EpochRecord], w: impl Write) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for r in history {
        out.serialize(r)?;
    }
    out.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// Middle `len` frames of `clip`, or the whole clip when it is not longer.
pub fn centre_crop<T: Scalar>(clip: &ClipTensor<T>, len: Option<usize>) -> Result<ClipTensor<T>> {
    match len {
        Some(l) if clip.frames() > l => clip.time_slice((clip.frames() - l) / 2, l),
        _ => Ok(clip.clone()),
    }
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub loss: f64,
    pub kappa: f64,
    pub predicted: Vec<u8>,
}

/// Mean loss, linearly weighted kappa and predicted classes on centred crops.
pub fn evaluate<T: Scalar>(model: &ConvLstm<T>, samples: &[Labelled<T>], eval_frames: Option<usize>) -> Result<Evaluation> {
    if samples.is_empty() {
        return Err(Error::Invalid("evaluation set is empty".into()));
    }
    let results: Vec<(f64, u8)> = samples
        .par_iter()
        .map(|s| {
            let clip = centre_crop(&s.clip, eval_frames)?;
            let pred = model.predict(&clip)?;
            let p = pred.probs[s.label as usize].max(f64::MIN_POSITIVE);
            Ok((-p.ln(), pred.class))
        })
        .collect::<Result<_>>()?;
    let loss = results.iter().map(|r| r.0).sum::<f64>() / samples.len() as f64;
    let predicted: Vec<u8> = results.iter().map(|r| r.1).collect();
    let truth: Vec<u8> = samples.iter().map(|s| s.label).collect();
    let cm = ConfusionMatrix::from_labels(&truth, &predicted, model.arch.n_classes)?;
    Ok(Evaluation {
        loss,
        kappa: weighted_kappa(&cm)?.value,
        predicted,
    })
}

/// Trains from a seeded initialisation; returns the weights of the lowest validation loss.
pub fn train<T: Scalar>(
    train_set: &[Labelled<T>],
    validation: &[Labelled<T>],
    arch: &ArchConfig,
    cfg: &TrainConfig,
) -> Result<TrainOutcome<T>> {
    cfg.validate()?;
    if train_set.is_empty() || validation.is_empty() {
        return Err(Error::Invalid("training and validation sets must be non-empty".into()));
    }
    if let Some(s) = train_set.iter().chain(validation).find(|s| s.label as usize >= arch.n_classes) {
        return Err(Error::OutOfRange(s.label as i64));
    }
    let mut model = ConvLstm::<T>::new(arch.clone(), cfg.seed)?;
    let sizes = model.param_sizes();

    // balance only over the classes present in the training split
    let mut present: Vec<u8> = train_set.iter().map(|s| s.label).collect();
    present.sort_unstable();
    present.dedup();
    let dense = |l: u8| present.iter().position(|&p| p == l).unwrap_or(0) as u8;
    let indices: Vec<usize> = (0..train_set.len()).collect();
    let pool = oversample(&indices, |&i| dense(train_set[i].label), present.len(), derive_seed(cfg.seed, "train"))?;

    let mut adam = Adam::new(cfg.lr, cfg.weight_decay, &sizes);
    let mut sched = ReduceOnPlateau::new(cfg.patience, cfg.reduction_factor);
    let mut lr = cfg.lr;
    let mut history = Vec::new();
    let mut best: Option<(f64, usize, Vec<super::tensor::Tensor<T>>)> = None;

    for epoch in 1..=cfg.max_epochs {
        let mut order = pool.clone();
        let mut rng = substream(cfg.seed, &format!("epoch{epoch}"));
        order.shuffle(&mut rng);
        if let Some(cap) = cfg.samples_per_epoch {
            order.truncate(cap);
        }
        let mut loss_sum = 0.0;
        for (b, batch) in order.chunks(cfg.batch_size).enumerate() {
            let per_sample: Vec<(f64, Vec<Vec<T>>)> = batch
                .par_iter()
                .enumerate()
                .map(|(j, &i)| {
                    let mut srng = substream(cfg.seed, &format!("epoch{epoch}.batch{b}.sample{j}"));
                    let s = &train_set[i];
                    let clip = match cfg.crop_frames {
                        Some(l) if s.clip.frames() > l => {
                            let start = srng.random_range(0..=s.clip.frames() - l);
                            s.clip.time_slice(start, l)?
                        }
                        _ => s.clip.clone(),
                    };
                    let clip = match &cfg.augment {
                        Some(r) => AugmentParams::sample(r, &mut srng).apply(&clip),
                        None => clip,
                    };
                    let (loss, grads) = model.loss_and_grads(&clip, s.label as usize, Some(&mut srng))?;
                    Ok((loss.to_f64_lossy(), grads))
                })
                .collect::<Result<_>>()?;
            let scale = 1.0 / batch.len() as f64;
            let mut grads: Vec<Vec<f64>> = sizes.iter().map(|&n| vec![0.0; n]).collect();
            for (loss, g) in &per_sample {
                if !loss.is_finite() {
                    return Err(Error::Divergence { epoch });
                }
                loss_sum += loss;
                for (acc, gi) in grads.iter_mut().zip(g) {
                    for (a, &v) in acc.iter_mut().zip(gi) {
                        *a += v.to_f64_lossy() * scale;
                    }
                }
            }
            adam.lr = lr;
            adam.step(&mut model.params, &grads);
        }
        let train_loss = loss_sum / order.len() as f64;
        let eval = evaluate(&model, validation, cfg.eval_frames)?;
        if !train_loss.is_finite() || !eval.loss.is_finite() {
            return Err(Error::Divergence { epoch });
        }
        log::debug!(
            "epoch {epoch}: lr {lr:.2e} train {train_loss:.4} val {:.4} kappa {:.3}",
            eval.loss,
            eval.kappa
        );
        history.push(EpochRecord {
            epoch,
            lr,
            train_loss,
            val_loss: eval.loss,
            val_kappa: eval.kappa,
        });
        if best.as_ref().is_none_or(|b| eval.loss < b.0) {
            best = Some((eval.loss, epoch, model.params.clone()));
        }
        lr = sched.step(eval.loss, lr);
        if lr < cfg.min_lr {
            break;
        }
    }
    let (_, best_epoch, params) = best.ok_or(Error::GraphNotBuilt)?;
    model.params = params;
    Ok(TrainOutcome {
        model,
        history,
        best_epoch,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    /// Class 1 has a bright blob oscillating in time; class 0 holds it still.
    fn toy_clip(label: u8, seed: u64, t: usize) -> ClipTensor<f32> {
        let mut rng = crate::rng::Rng::seed_from_u64(seed);
        let n = 32;
        let phase = rng.random_range(0.0..std::f64::consts::TAU);
        let (cx, cy) = (rng.random_range(12.0..20.0), rng.random_range(12.0..20.0));
        let mut data = vec![0f32; 3 * t * n * n];
        for ti in 0..t {
            let dx = if label == 1 { 5.0 * (phase + ti as f64 * 1.3).sin() } else { 0.0 };
            for c in 0..3 {
                for y in 0..n {
                    for x in 0..n {
                        let r2 = (x as f64 - cx - dx).powi(2) + (y as f64 - cy).powi(2);
                        let v = 0.2 + 0.6 * (-r2 / 18.0).exp() + 0.02 * rng.random::<f64>();
                        data[((c * t + ti) * n + y) * n + x] = v as f32;
                    }
                }
            }
        }
        ClipTensor::new(data, [3, t, n, n], 30.0).unwrap()
    }

    fn toy_set(n: usize, seed: u64) -> Vec<Labelled<f32>> {
        (0..n)
            .map(|i| {
                let label = (i % 2) as u8;
                Labelled {
                    clip: toy_clip(label, seed + i as u64, 8),
                    label,
                }
            })
            .collect()
    }

    fn toy_arch() -> ArchConfig {
        let mut arch = ArchConfig::tiny(4, 4, 1);
        arch.n_classes = 2;
        arch
    }

    #[test]
    fn separable_toy_task_is_learned() {
        let train_set = toy_set(32, 100);
        let val = toy_set(20, 900);
        let cfg = TrainConfig {
            max_epochs: 50,
            lr: 3e-3,
            batch_size: 8,
            augment: None,
            seed: 3,
            ..TrainConfig::default()
        };
        let out = train(&train_set, &val, &toy_arch(), &cfg).unwrap();
        let eval = evaluate(&out.model, &val, None).unwrap();
        let correct = eval.predicted.iter().zip(&val).filter(|(p, s)| **p == s.label).count();
        assert!(correct as f64 / val.len() as f64 >= 0.95, "accuracy {correct}/{}", val.len());
        assert!(out.history.len() <= 50);
        let best = out.history.iter().map(|h| h.val_loss).fold(f64::INFINITY, f64::min);
        assert_eq!(out.history[out.best_epoch - 1].val_loss, best);
    }

    #[test]
    fn training_is_deterministic() {
        let train_set = toy_set(8, 10);
        let val = toy_set(4, 20);
        let cfg = TrainConfig {
            max_epochs: 2,
            batch_size: 4,
            crop_frames: Some(6),
            seed: 8,
            ..TrainConfig::default()
        };
        let a = train(&train_set, &val, &toy_arch(), &cfg).unwrap();
        let b = train(&train_set, &val, &toy_arch(), &cfg).unwrap();
        assert_eq!(a.model, b.model);
        assert_eq!(a.history, b.history);
    }

    #[test]
    fn repeated_batch_loss_decreases() {
        let batch = toy_set(4, 50);
        let mut model = ConvLstm::<f32>::new(toy_arch(), 4).unwrap();
        let mut adam = Adam::new(1e-3, 0.0, &model.param_sizes());
        let mut losses = Vec::new();
        for _ in 0..25 {
            let mut grads: Vec<Vec<f64>> = model.param_sizes().iter().map(|&n| vec![0.0; n]).collect();
            let mut total = 0.0;
            for s in &batch {
                let (l, g) = model.loss_and_grads(&s.clip, s.label as usize, None).unwrap();
                total += l as f64;
                for (a, gi) in grads.iter_mut().zip(&g) {
                    for (x, &v) in a.iter_mut().zip(gi) {
                        *x += v as f64 / batch.len() as f64;
                    }
                }
            }
            losses.push(total / batch.len() as f64);
            adam.step(&mut model.params, &grads);
        }
        for w in losses[2..].windows(2) {
            assert!(w[1] < w[0], "loss went up: {losses:?}");
        }
    }

    #[test]
    fn lr_floor_stops_training() {
        let train_set = toy_set(4, 30);
        let val = toy_set(2, 40);
        let cfg = TrainConfig {
            max_epochs: 100,
            lr: 1e-9,
            min_lr: 5e-10,
            patience: 1,
            batch_size: 4,
            augment: None,
            seed: 1,
            ..TrainConfig::default()
        };
        let out = train(&train_set, &val, &toy_arch(), &cfg).unwrap();
        // near-frozen weights plateau at once: one reduction after patience + 1 flat epochs
        assert!(out.history.len() <= 4, "{}", out.history.len());
        assert!(out.history.last().unwrap().lr >= 5e-10);
    }

    #[test]
    fn bad_inputs_rejected() {
        let cfg = TrainConfig::default();
        assert!(train::<f32>(&[], &toy_set(2, 1), &toy_arch(), &cfg).is_err());
        let mut bad = toy_set(2, 1);
        bad[0].label = 7;
        assert!(matches!(train(&bad, &toy_set(2, 1), &toy_arch(), &cfg), Err(Error::OutOfRange(7))));
        assert!(TrainConfig { patience: 0, ..cfg.clone() }.validate().is_err());
    }

    #[test]
    fn history_csv_header() {
        let mut buf = Vec::new();
        write_history_csv(
            &[EpochRecord {
                epoch: 1,
                lr: 6e-4,
                train_loss: 1.0,
                val_loss: 1.1,
                val_kappa: 0.5,
            }],
            &mut buf,
        )
        .unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("epoch,lr,train_loss,val_loss,val_kappa\n"));
    }
}
