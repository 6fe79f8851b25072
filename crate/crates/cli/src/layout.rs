//! On-disk artifact locations shared by the subcommands.

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone)]
pub struct Layout {
    pub data: PathBuf,
    pub out: PathBuf,
}

impl Layout {
    pub fn new(data: &Path, out: &Path) -> Self {
        Layout {
            data: data.to_path_buf(),
            out: out.to_path_buf(),
        }
    }

    pub fn manifest(&self) -> PathBuf {
        self.data.join("manifest.csv")
    }

    pub fn cohort_manifest(&self) -> PathBuf {
        self.data.join("cohort_manifest.csv")
    }

    pub fn keypoints_dir(&self) -> PathBuf {
        self.data.join("keypoints")
    }

    pub fn frames_dir(&self) -> PathBuf {
        self.data.join("frames")
    }

    pub fn clips_dir(&self) -> PathBuf {
        self.out.join("clips")
    }

    pub fn clip(&self, key: &str) -> PathBuf {
        self.clips_dir().join(format!("{}.clip", file_stem(key)))
    }

    pub fn coverage(&self) -> PathBuf {
        self.out.join("coverage.csv")
    }

    pub fn features(&self) -> PathBuf {
        self.out.join("features.csv")
    }

    pub fn cohort_features(&self) -> PathBuf {
        self.out.join("cohort_features.csv")
    }

    pub fn pose_failures(&self) -> PathBuf {
        self.out.join("pose_failures.csv")
    }

    pub fn folds(&self) -> PathBuf {
        self.out.join("folds.csv")
    }

    pub fn models_dir(&self) -> PathBuf {
        self.out.join("models")
    }

    pub fn rfc_model(&self, fold: usize) -> PathBuf {
        self.models_dir().join(format!("rfc_fold{fold}.json"))
    }

    pub fn net_model(&self, fold: usize) -> PathBuf {
        self.models_dir().join(format!("net_fold{fold}.ckpt"))
    }

    pub fn net_history(&self, fold: usize) -> PathBuf {
        self.models_dir().join(format!("net_fold{fold}_history.csv"))
    }

    pub fn eval_dir(&self) -> PathBuf {
        self.out.join("eval")
    }

    pub fn embed_dir(&self) -> PathBuf {
        self.out.join("embed")
    }

    pub fn report_dir(&self) -> PathBuf {
        self.out.join("report")
    }
}

/// `assessment/left` -> `assessment_left`.
pub fn file_stem(key: &str) -> String {
    key.replace(['/', '\\'], "_")
}

pub fn require(path: &Path) -> CliResult<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(CliError::missing(path, "not found"))
    }
}

pub fn ensure_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|source| CliError::Write {
        path: dir.to_path_buf(),
        source,
    })
}

pub fn write_file(path: &Path, bytes: &[u8]) -> CliResult<()> {
    if let Some(parent) = path.parent() {
        ensure_dir(parent)?;
    }
    fs::write(path, bytes).map_err(|source| CliError::Write {
        path: path.to_path_buf(),
        source,
    })
}

/// Serialises rows under `header` into a CSV file; the header is written even with no rows.
pub fn write_csv<S: serde::Serialize>(path: &Path, header: &[&str], rows: &[S]) -> CliResult<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    w.write_record(header).map_err(tremorkit::Error::from)?;
    for r in rows {
        w.serialize(r).map_err(tremorkit::Error::from)?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::Config(e.to_string()))?;
    write_file(path, &bytes)
}

pub fn read_csv<D: serde::de::DeserializeOwned>(path: &Path) -> CliResult<Vec<D>> {
    require(path)?;
    let mut r = csv::Reader::from_path(path).map_err(|e| CliError::missing(path, e))?;
    r.deserialize()
        .collect::<Result<Vec<D>, _>>()
        .map_err(|e| tremorkit::Error::Format {
            path: path.to_path_buf(),
            msg: e.to_string(),
        }
        .into())
}
