//! Manifests, stratified-grouped folds, label merging and oversampling.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::path::{Path, PathBuf};

use rand::seq::{IndexedRandom, SliceRandom};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::poseproc::{Laterality, TemporalRoi};
use crate::rng::substream;
use crate::synth::{Confound, SynthRecord, SynthSpec, Treatment};

/// Number of classes after merging scores 3 and 4.
pub const N_MERGED: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub assessment_id: String,
    pub laterality: Laterality,
    pub score: u8,
    pub roi_start: usize,
    pub roi_end: usize,
    pub confound: String,
    pub seed: u64,
    #[serde(default)]
    pub keypoints: Option<PathBuf>,
    #[serde(default)]
    pub video: Option<PathBuf>,
    #[serde(default)]
    pub patient_id: Option<String>,
    #[serde(default)]
    pub treatment: Option<String>,
    /// Generator parameters, present for synthetic rows so the source can be re-rendered.
    #[serde(default)]
    pub fps: Option<f64>,
    #[serde(default)]
    pub duration: Option<f64>,
    #[serde(default)]
    pub tremor_freq: Option<f64>,
    #[serde(default)]
    pub tremor_amp: Option<f64>,
}

impl ManifestRow {
    pub fn from_record(r: &SynthRecord) -> Self {
        let roi = r.roi();
        ManifestRow {
            assessment_id: r.assessment_id.clone(),
            laterality: r.spec.laterality,
            score: r.spec.score,
            roi_start: roi.start_frame,
            roi_end: roi.end_frame,
            confound: r.spec.confound.label(),
            seed: r.spec.seed,
            keypoints: None,
            video: None,
            patient_id: r.patient_id.clone(),
            treatment: r.treatment.map(|t| t.as_str().to_string()),
            fps: Some(r.spec.fps),
            duration: Some(r.spec.duration),
            tremor_freq: Some(r.spec.tremor_freq),
            tremor_amp: Some(r.spec.tremor_amp),
        }
    }

    /// Generator spec of a synthetic row, if all its parameters were recorded.
    pub fn synth_spec(&self) -> Result<Option<SynthSpec>> {
        let (Some(fps), Some(duration), Some(tremor_freq), Some(tremor_amp)) = (self.fps, self.duration, self.tremor_freq, self.tremor_amp)
        else {
            return Ok(None);
        };
        let spec = SynthSpec {
            score: self.score,
            laterality: self.laterality,
            fps,
            duration,
            tremor_freq,
            tremor_amp,
            confound: self.confound()?,
            seed: self.seed,
        };
        spec.validate()?;
        Ok(Some(spec))
    }

    pub fn roi(&self) -> TemporalRoi {
        TemporalRoi::new(self.roi_start, self.roi_end)
    }

    pub fn confound(&self) -> Result<Confound> {
        self.confound.parse()
    }

    pub fn treatment(&self) -> Result<Option<Treatment>> {
        self.treatment.as_deref().filter(|t| !t.is_empty()).map(str::parse).transpose()
    }

    /// Grouping key: patient when known, else the assessment.
    pub fn group(&self) -> &str {
        self.patient_id.as_deref().filter(|p| !p.is_empty()).unwrap_or(&self.assessment_id)
    }

    /// Row key, unique within a manifest.
    pub fn key(&self) -> String {
        format!("{}/{}", self.assessment_id, self.laterality)
    }

    pub fn merged(&self) -> u8 {
        self.score.min(3)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Manifest {
    pub rows: Vec<ManifestRow>,
}

impl Manifest {
    pub fn new(rows: Vec<ManifestRow>) -> Result<Self> {
        let m = Manifest { rows };
        m.validate()?;
        Ok(m)
    }

    pub fn from_records(records: &[SynthRecord]) -> Result<Self> {
        Manifest::new(records.iter().map(ManifestRow::from_record).collect())
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for r in &self.rows {
            if r.score > 4 {
                return Err(Error::OutOfRange(r.score as i64));
            }
            if !seen.insert(r.key()) {
                return Err(Error::Invalid(format!("duplicate manifest row {}", r.key())));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn read(path: &Path) -> Result<Self> {
        let mut rdr = csv::Reader::from_path(path).map_err(|e| Error::format(path, e.to_string()))?;
        let rows = rdr
            .deserialize()
            .collect::<std::result::Result<Vec<ManifestRow>, _>>()
            .map_err(|e| Error::format(path, e.to_string()))?;
        let m = Manifest { rows };
        m.validate().map_err(|e| Error::format(path, e.to_string()))?;
        Ok(m)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::format(path, e.to_string()))?;
        for r in &self.rows {
            w.serialize(r)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

pub fn merge_labels(score: i64) -> Result<u8> {
    match score {
        0..=3 => Ok(score as u8),
        4 => Ok(3),
        _ => Err(Error::OutOfRange(score)),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Train,
    Validation,
    Test,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FoldAssignment {
    pub k: usize,
    /// assessment_id -> fold
    pub folds: BTreeMap<String, usize>,
}

impl FoldAssignment {
    pub fn fold_of(&self, assessment_id: &str) -> Option<usize> {
        self.folds.get(assessment_id).copied()
    }

    /// Experiment `e` tests on fold `e` and validates on fold `e + 1 (mod k)`.
    pub fn role(&self, fold: usize, experiment: usize) -> Role {
        if fold == experiment % self.k {
            Role::Test
        } else if fold == (experiment + 1) % self.k {
            Role::Validation
        } else {
            Role::Train
        }
    }

    /// Row indices of the manifest in each role for one experiment.
    pub fn split(&self, manifest: &Manifest, experiment: usize) -> Result<Split> {
        let mut s = Split::default();
        for (i, r) in manifest.rows.iter().enumerate() {
            let fold = self
                .fold_of(&r.assessment_id)
                .ok_or_else(|| Error::Invalid(format!("assessment {} has no fold", r.assessment_id)))?;
            match self.role(fold, experiment) {
                Role::Train => s.train.push(i),
                Role::Validation => s.validation.push(i),
                Role::Test => s.test.push(i),
            }
        }
        Ok(s)
    }

    pub fn read(path: &Path) -> Result<Self> {
        #[derive(Deserialize)]
        struct Row {
            assessment_id: String,
            fold: usize,
        }
        let mut rdr = csv::Reader::from_path(path).map_err(|e| Error::format(path, e.to_string()))?;
        let mut folds = BTreeMap::new();
        let mut k = 0;
        for row in rdr.deserialize::<Row>() {
            let row = row.map_err(|e| Error::format(path, e.to_string()))?;
            k = k.max(row.fold + 1);
            folds.insert(row.assessment_id, row.fold);
        }
        Ok(FoldAssignment { k, folds })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::format(path, e.to_string()))?;
        w.write_record(["assessment_id", "fold"])?;
        for (id, fold) in &self.folds {
            w.write_record([id.as_str(), &fold.to_string()])?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Split {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
}

struct Group {
    ids: BTreeSet<String>,
    merged: [usize; N_MERGED],
    raw: [usize; 5],
    rows: usize,
}

/// Grouped k-fold split stratified on merged labels.
///
/// Groups (patients, or assessments when the patient is unknown) are placed
/// greedily, rarest class first, into the fold that keeps class counts
/// closest to their per-fold targets.
pub fn make_folds(manifest: &Manifest, k: usize, seed: u64) -> Result<FoldAssignment> {
    if k < 2 {
        return Err(Error::Invalid(format!("k must be at least 2, got {k}")));
    }
    let mut by_group: BTreeMap<&str, Group> = BTreeMap::new();
    for r in &manifest.rows {
        let g = by_group.entry(r.group()).or_insert_with(|| Group {
            ids: BTreeSet::new(),
            merged: [0; N_MERGED],
            raw: [0; 5],
            rows: 0,
        });
        g.ids.insert(r.assessment_id.clone());
        g.merged[merge_labels(r.score as i64)? as usize] += 1;
        g.raw[r.score as usize] += 1;
        g.rows += 1;
    }
    // an assessment split across patients would break the grouping contract
    let mut owner: BTreeMap<&str, &str> = BTreeMap::new();
    for r in &manifest.rows {
        if let Some(prev) = owner.insert(&r.assessment_id, r.group()) {
            if prev != r.group() {
                return Err(Error::Invalid(format!("assessment {} spans two patients", r.assessment_id)));
            }
        }
    }

    let mut total_merged = [0usize; N_MERGED];
    let mut total_raw = [0usize; 5];
    let mut groups_per_class = [0usize; N_MERGED];
    for g in by_group.values() {
        for c in 0..N_MERGED {
            total_merged[c] += g.merged[c];
            groups_per_class[c] += usize::from(g.merged[c] > 0);
        }
        for c in 0..5 {
            total_raw[c] += g.raw[c];
        }
    }
    for c in 0..N_MERGED {
        if total_merged[c] > 0 && groups_per_class[c] < k {
            return Err(Error::InsufficientGroups {
                class: c as u8,
                groups: groups_per_class[c],
                k,
            });
        }
    }

    let mut groups: Vec<Group> = by_group.into_values().collect();
    groups.shuffle(&mut substream(seed, "folds"));
    let rarity = |g: &Group| {
        (0..N_MERGED)
            .filter(|&c| g.merged[c] > 0)
            .map(|c| total_merged[c])
            .min()
            .unwrap_or(usize::MAX)
    };
    // stable sort keeps the shuffled order among equals
    groups.sort_by_key(|g| (rarity(g), std::cmp::Reverse(g.rows)));

    let kf = k as f64;
    let total_rows: usize = total_merged.iter().sum();
    let mut fold_merged = vec![[0usize; N_MERGED]; k];
    let mut fold_raw = vec![[0usize; 5]; k];
    let mut fold_rows = vec![0usize; k];
    let mut folds = BTreeMap::new();
    for g in &groups {
        let cost = |f: usize| {
            let sq = |count: usize, add: usize, total: usize| {
                let target = total as f64 / kf;
                let after = (count + add) as f64 - target;
                let before = count as f64 - target;
                after * after - before * before
            };
            let merged: f64 = (0..N_MERGED).map(|c| sq(fold_merged[f][c], g.merged[c], total_merged[c])).sum();
            let raw: f64 = (0..5).map(|c| sq(fold_raw[f][c], g.raw[c], total_raw[c])).sum();
            let size = sq(fold_rows[f], g.rows, total_rows);
            merged + 0.5 * raw + 0.1 * size
        };
        let best = (0..k)
            .min_by(|&a, &b| cost(a).total_cmp(&cost(b)).then(fold_rows[a].cmp(&fold_rows[b])).then(a.cmp(&b)))
            .expect("k >= 2");
        for c in 0..N_MERGED {
            fold_merged[best][c] += g.merged[c];
        }
        for c in 0..5 {
            fold_raw[best][c] += g.raw[c];
        }
        fold_rows[best] += g.rows;
        for id in &g.ids {
            folds.insert(id.clone(), best);
        }
    }
    Ok(FoldAssignment { k, folds })
}

/// Replicates every class up to the majority count: whole copies plus a
/// seeded sample without replacement for the remainder. The input rows come
/// first and in order.
pub fn oversample<R: Clone>(rows: &[R], label: impl Fn(&R) -> u8, n_classes: usize, seed: u64) -> Result<Vec<R>> {
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); n_classes];
    for (i, r) in rows.iter().enumerate() {
        let c = label(r) as usize;
        if c >= n_classes {
            return Err(Error::OutOfRange(c as i64));
        }
        by_class[c].push(i);
    }
    if let Some(c) = by_class.iter().position(Vec::is_empty) {
        return Err(Error::EmptyClass(c as u8));
    }
    let target = by_class.iter().map(Vec::len).max().unwrap_or(0);
    let mut rng = substream(seed, "oversample");
    let mut out = rows.to_vec();
    for members in &by_class {
        let deficit = target - members.len();
        for _ in 0..deficit / members.len() {
            out.extend(members.iter().map(|&i| rows[i].clone()));
        }
        let rest = deficit % members.len();
        out.extend(members.choose_multiple(&mut rng, rest).map(|&i| rows[i].clone()));
    }
    Ok(out)
}

/// Per-class row counts.
pub fn class_counts(labels: impl IntoIterator<Item = u8>, n_classes: usize) -> Vec<usize> {
    let mut counts = vec![0; n_classes];
    for l in labels {
        if (l as usize) < n_classes {
            counts[l as usize] += 1;
        }
    }
    counts
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{gen_dataset, ClassBalance, DatasetSpec};
    use proptest::prelude::*;

    fn row(id: &str, lat: Laterality, score: u8) -> ManifestRow {
        ManifestRow {
            assessment_id: id.into(),
            laterality: lat,
            score,
            roi_start: 2,
            roi_end: 40,
            confound: "none".into(),
            seed: 0,
            keypoints: None,
            video: None,
            patient_id: None,
            treatment: None,
            fps: None,
            duration: None,
            tremor_freq: None,
            tremor_amp: None,
        }
    }

    #[test]
    fn merge_examples() {
        assert_eq!(merge_labels(4).unwrap(), 3);
        assert_eq!(merge_labels(0).unwrap(), 0);
        assert_eq!(merge_labels(2).unwrap(), 2);
        assert!(matches!(merge_labels(5), Err(Error::OutOfRange(5))));
        assert!(merge_labels(-1).is_err());
    }

    #[test]
    fn balanced_folds_are_exact() {
        let rows = (0..50).map(|i| row(&format!("A{i:02}"), Laterality::Left, (i % 5) as u8)).collect();
        let m = Manifest::new(rows).unwrap();
        let f = make_folds(&m, 5, 3).unwrap();
        for fold in 0..5 {
            let members: Vec<&ManifestRow> = m.rows.iter().filter(|r| f.fold_of(&r.assessment_id) == Some(fold)).collect();
            assert_eq!(members.len(), 10);
            for s in 0..5 {
                assert_eq!(members.iter().filter(|r| r.score == s).count(), 2, "fold {fold} score {s}");
            }
        }
    }

    #[test]
    fn full_cohort_sized_folds() {
        let recs = gen_dataset(&DatasetSpec::new(ClassBalance::ClinicalSkew { total: 2742 }, 7)).unwrap();
        let m = Manifest::from_records(&recs).unwrap();
        let f = make_folds(&m, 5, 7).unwrap();
        let mut sizes = [0usize; 5];
        let mut per_class = [[0usize; N_MERGED]; 5];
        for r in &m.rows {
            let fold = f.fold_of(&r.assessment_id).unwrap();
            sizes[fold] += 1;
            per_class[fold][r.merged() as usize] += 1;
        }
        for s in sizes {
            assert!((545..=552).contains(&s), "{sizes:?}");
        }
        let global = class_counts(m.rows.iter().map(|r| r.merged()), N_MERGED);
        for fold in 0..5 {
            for c in 0..N_MERGED {
                let p = per_class[fold][c] as f64 / sizes[fold] as f64;
                let g = global[c] as f64 / m.len() as f64;
                assert!((p - g).abs() <= 0.05);
            }
        }
    }

    #[test]
    fn too_few_groups() {
        let mut rows: Vec<_> = (0..20).map(|i| row(&format!("A{i:02}"), Laterality::Left, 0)).collect();
        rows.push(row("B0", Laterality::Left, 4));
        let m = Manifest::new(rows).unwrap();
        assert!(matches!(make_folds(&m, 5, 0), Err(Error::InsufficientGroups { class: 3, groups: 1, k: 5 })));
    }

    #[test]
    fn patient_grouping() {
        let mut rows = Vec::new();
        for p in 0..10 {
            for t in ["baseline", "dbs"] {
                let mut r = row(&format!("P{p}-{t}"), Laterality::Left, (p % 4) as u8);
                r.patient_id = Some(format!("P{p}"));
                rows.push(r);
            }
        }
        let rows = rows
            .into_iter()
            .chain((0..20).map(|i| row(&format!("X{i}"), Laterality::Right, (i % 4) as u8)))
            .collect();
        let m = Manifest::new(rows).unwrap();
        let f = make_folds(&m, 5, 1).unwrap();
        for p in 0..10 {
            assert_eq!(f.fold_of(&format!("P{p}-baseline")), f.fold_of(&format!("P{p}-dbs")));
        }
    }

    #[test]
    fn roles_rotate() {
        let f = FoldAssignment { k: 5, folds: BTreeMap::new() };
        assert_eq!(f.role(4, 4), Role::Test);
        assert_eq!(f.role(0, 4), Role::Validation);
        assert_eq!(f.role(2, 4), Role::Train);
    }

    #[test]
    fn oversample_examples() {
        let rows: Vec<u8> = [vec![0u8; 100], vec![1u8; 25]].concat();
        let out = oversample(&rows, |&r| r, 2, 0).unwrap();
        assert_eq!(class_counts(out.iter().copied(), 2), vec![100, 100]);

        let balanced = vec![0u8, 1, 0, 1];
        assert_eq!(oversample(&balanced, |&r| r, 2, 0).unwrap(), balanced);

        let rows: Vec<(u8, usize)> = (0..10).map(|i| (0, i)).chain((0..3).map(|i| (1, 100 + i))).collect();
        let a = oversample(&rows, |r| r.0, 2, 9).unwrap();
        let b = oversample(&rows, |r| r.0, 2, 9).unwrap();
        assert_eq!(a, b);
        let minority: Vec<usize> = a.iter().filter(|r| r.0 == 1).map(|r| r.1).collect();
        assert_eq!(minority.len(), 10);
        for id in 100..103 {
            let n = minority.iter().filter(|&&m| m == id).count();
            assert!(n == 3 || n == 4);
        }
        assert!(matches!(oversample(&[0u8, 0], |&r| r, 2, 0), Err(Error::EmptyClass(1))));
    }

    #[test]
    fn manifest_and_folds_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let recs = gen_dataset(&DatasetSpec::new(ClassBalance::Balanced { n_per_class: 6 }, 2)).unwrap();
        let mut m = Manifest::from_records(&recs).unwrap();
        m.rows[0].keypoints = Some("kp/a.jsonl".into());
        let p = dir.path().join("manifest.csv");
        m.write(&p).unwrap();
        let back = Manifest::read(&p).unwrap();
        assert_eq!(back, m);
        for (row, rec) in back.rows.iter().zip(&recs) {
            assert_eq!(row.synth_spec().unwrap().as_ref(), Some(&rec.spec));
        }
        let f = make_folds(&m, 5, 2).unwrap();
        let fp = dir.path().join("folds.csv");
        f.write(&fp).unwrap();
        assert_eq!(FoldAssignment::read(&fp).unwrap(), f);
    }

    proptest! {
        #[test]
        fn folds_group_and_cover(scores in proptest::collection::vec((0u8..5, 0u8..5), 30..80), seed in 0u64..1000) {
            let mut rows = Vec::new();
            for (i, (l, r)) in scores.iter().enumerate() {
                rows.push(row(&format!("A{i}"), Laterality::Left, *l));
                rows.push(row(&format!("A{i}"), Laterality::Right, *r));
            }
            let m = Manifest::new(rows).unwrap();
            match make_folds(&m, 5, seed) {
                Ok(f) => {
                    for r in &m.rows {
                        prop_assert!(f.fold_of(&r.assessment_id).is_some());
                    }
                    prop_assert_eq!(f.folds.len(), scores.len());
                    let s = f.split(&m, 2).unwrap();
                    prop_assert_eq!(s.train.len() + s.validation.len() + s.test.len(), m.len());
                }
                Err(Error::InsufficientGroups { .. }) => {}
                Err(e) => prop_assert!(false, "{e}"),
            }
        }

        #[test]
        fn merge_idempotent(s in 0i64..5) {
            let m = merge_labels(s).unwrap();
            prop_assert_eq!(merge_labels(m as i64).unwrap(), m);
        }

        #[test]
        fn oversample_keeps_rows(labels in proptest::collection::vec(0u8..3, 3..60), seed in 0u64..100) {
            let counts = class_counts(labels.iter().copied(), 3);
            prop_assume!(counts.iter().all(|&c| c > 0));
            let out = oversample(&labels, |&r| r, 3, seed).unwrap();
            prop_assert_eq!(&out[..labels.len()], &labels[..]);
            let max = *counts.iter().max().unwrap();
            prop_assert_eq!(class_counts(out.iter().copied(), 3), vec![max; 3]);
        }
    }
}
