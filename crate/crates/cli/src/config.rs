//! Run configuration: one JSON file, with command-line flags overriding keys.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use tremorkit::deepnet::{ArchConfig, TrainConfig};
use tremorkit::embed::{TsneConfig, DEFAULT_CONTAMINATION};
use tremorkit::forest::ForestConfig;
use tremorkit::synth::{ClassBalance, Confound, DatasetSpec, TreatmentEffects};

use crate::error::{CliError, CliResult};

pub const CONFIG_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum ModelChoice {
    Rfc,
    Net,
    Both,
}

impl ModelChoice {
    pub fn includes_rfc(self) -> bool {
        matches!(self, ModelChoice::Rfc | ModelChoice::Both)
    }

    pub fn includes_net(self) -> bool {
        matches!(self, ModelChoice::Net | ModelChoice::Both)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfoundShare {
    /// Confound label, e.g. `none`, `camera_shake`, `keypoint_dropout(0.3)`.
    pub confound: String,
    pub share: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub balance: ClassBalance,
    pub confound_mix: Vec<ConfoundShare>,
    pub fps: f64,
    pub duration: f64,
    /// Also write every frame as a PNG directory (otherwise frames are re-rendered on demand).
    pub write_frames: bool,
    /// Patients in the held-out treatment cohort; 0 skips it.
    pub cohort_patients: usize,
    pub effects: TreatmentEffects,
    /// Mean keypoint dropout; each assessment of the main set draws its per-frame
    /// rate uniformly from `[0, 2 * mean]`, replacing its confound.
    pub keypoint_dropout: Option<f64>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            balance: ClassBalance::ClinicalSkew { total: 500 },
            confound_mix: vec![ConfoundShare {
                confound: "none".into(),
                share: 1.0,
            }],
            fps: 30.0,
            duration: 2.0,
            write_frames: false,
            cohort_patients: 0,
            effects: TreatmentEffects::default(),
            keypoint_dropout: None,
        }
    }
}

impl SynthConfig {
    pub fn dataset_spec(&self, seed: u64) -> CliResult<DatasetSpec> {
        let mut confound_mix = Vec::with_capacity(self.confound_mix.len());
        for c in &self.confound_mix {
            let parsed: Confound = c
                .confound
                .parse()
                .map_err(|_| CliError::Config(format!("unknown confound {:?}", c.confound)))?;
            confound_mix.push((parsed, c.share));
        }
        Ok(DatasetSpec {
            balance: self.balance,
            confound_mix,
            fps: self.fps,
            duration: self.duration,
            seed,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmbedConfig {
    pub tsne: TsneConfig,
    pub contamination: f64,
}

impl Default for EmbedConfig {
    fn default() -> Self {
        EmbedConfig {
            tsne: TsneConfig::default(),
            contamination: DEFAULT_CONTAMINATION,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub schema_version: u32,
    pub seed: u64,
    /// Worker threads; `None` uses every core.
    pub jobs: Option<usize>,
    pub data_dir: PathBuf,
    pub output_dir: PathBuf,
    pub folds: usize,
    /// Restricts train/eval/embed to one fold.
    pub fold: Option<usize>,
    pub model: ModelChoice,
    pub synth: SynthConfig,
    pub arch: ArchConfig,
    pub train: TrainConfig,
    pub forest: ForestConfig,
    pub embed: EmbedConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            schema_version: CONFIG_SCHEMA_VERSION,
            seed: 0,
            jobs: None,
            data_dir: PathBuf::from("data"),
            output_dir: PathBuf::from("out"),
            folds: 5,
            fold: None,
            model: ModelChoice::Both,
            synth: SynthConfig::default(),
            arch: ArchConfig::default(),
            train: TrainConfig {
                max_epochs: 18,
                lr: 3e-3,
                crop_frames: Some(8),
                eval_frames: Some(32),
                samples_per_epoch: Some(240),
                ..TrainConfig::default()
            },
            forest: ForestConfig::default(),
            embed: EmbedConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::missing(path, e))?;
        let cfg: RunConfig = serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        Ok(cfg)
    }

    pub fn save(&self, path: &Path) -> CliResult<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| CliError::Config(e.to_string()))?;
        crate::layout::write_file(path, text.as_bytes())
    }

    pub fn validate(&self) -> CliResult<()> {
        if self.schema_version != CONFIG_SCHEMA_VERSION {
            return Err(CliError::Config(format!(
                "config schema_version {} is not supported (expected {CONFIG_SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        if self.folds < 3 {
            return Err(CliError::Config(format!("folds must be at least 3, got {}", self.folds)));
        }
        if let Some(f) = self.fold {
            if f >= self.folds {
                return Err(CliError::Config(format!("fold {f} out of range for {} folds", self.folds)));
            }
        }
        if self.jobs == Some(0) {
            return Err(CliError::Config("jobs must be at least 1".into()));
        }
        if self.synth.keypoint_dropout.is_some_and(|m| !(0.0..=0.5).contains(&m)) {
            return Err(CliError::Config("synth.keypoint_dropout must lie in [0, 0.5]".into()));
        }
        if !(0.0..0.5).contains(&self.embed.contamination) {
            return Err(CliError::Config("embed.contamination must lie in [0, 0.5)".into()));
        }
        self.arch.validate()?;
        self.train.validate()?;
        self.synth.dataset_spec(self.seed)?;
        Ok(())
    }

    /// Folds selected for fold-wise stages.
    pub fn selected_folds(&self) -> Vec<usize> {
        match self.fold {
            Some(f) => vec![f],
            None => (0..self.folds).collect(),
        }
    }
}
