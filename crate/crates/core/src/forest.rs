//! Random-forest classifier over pose feature vectors.
//!
//! Splits are `x <= threshold` with the threshold at an observed training
//! value, so a forest is unchanged by any strictly increasing transform of a
//! feature applied to both training and test data.

use std::path::Path;

use rand::seq::index::sample;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{derive_seed, Rng};

use crate::Scalar;

pub const FOREST_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForestConfig {
    pub n_trees: usize,
    pub max_depth: usize,
    pub min_leaf: usize,
    /// Features tried per split; `None` means `round(sqrt(d))`.
    pub max_features: Option<usize>,
    pub bootstrap: bool,
}

impl Default for ForestConfig {
    fn default() -> Self {
        ForestConfig {
            n_trees: 200,
            max_depth: 12,
            min_leaf: 2,
            max_features: None,
            bootstrap: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Node<T> {
    Split {
        feature: usize,
        threshold: T,
        left: usize,
        right: usize,
    },
    Leaf {
        distribution: Vec<f64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionTree<T> {
    /// Node 0 is the root.
    pub nodes: Vec<Node<T>>,
    pub max_depth: usize,
}

impl<T: Scalar> DecisionTree<T> {
    pub fn leaf_distribution(&self, x: &[T]) -> &[f64] {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if x[*feature] <= *threshold { *left } else { *right },
                Node::Leaf { distribution } => return distribution,
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn walk<T>(nodes: &[Node<T>], i: usize) -> usize {
            match &nodes[i] {
                Node::Split { left, right, .. } => 1 + walk(nodes, *left).max(walk(nodes, *right)),
                Node::Leaf { .. } => 0,
            }
        }
        walk(&self.nodes, 0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestModel<T> {
    pub schema_version: u32,
    pub n_classes: usize,
    pub feature_names: Vec<String>,
    pub seed: u64,
    pub config: ForestConfig,
    pub trees: Vec<DecisionTree<T>>,
}

fn gini(counts: &[f64], total: f64) -> f64 {
    if total <= 0.0 {
        return 0.0;
    }
    1.0 - counts.iter().map(|c| (c / total).powi(2)).sum::<f64>()
}

struct Builder<'a, T> {
    x: &'a [Vec<T>],
    y: &'a [u8],
    n_classes: usize,
    n_features: usize,
    mtry: usize,
    config: &'a ForestConfig,
    nodes: Vec<Node<T>>,
}

struct BestSplit<T> {
    gain: f64,
    feature: usize,
    threshold: T,
}

impl<T: Scalar> Builder<'_, T> {
    fn distribution(&self, idx: &[usize]) -> Vec<f64> {
        let mut counts = vec![0.0; self.n_classes];
        for &i in idx {
            counts[self.y[i] as usize] += 1.0;
        }
        let total = idx.len() as f64;
        counts.iter().map(|c| c / total).collect()
    }

    /// Best `x[f] <= t` split of `idx` on feature `f`, if any side can hold `min_leaf` rows.
    fn best_on_feature(&self, idx: &mut [usize], f: usize, parent: f64) -> Option<BestSplit<T>> {
        idx.sort_by(|&a, &b| self.x[a][f].partial_cmp(&self.x[b][f]).unwrap_or(std::cmp::Ordering::Equal));
        let n = idx.len();
        let mut left = vec![0.0; self.n_classes];
        let mut right = vec![0.0; self.n_classes];
        for &i in idx.iter() {
            right[self.y[i] as usize] += 1.0;
        }
        let mut best: Option<BestSplit<T>> = None;
        for pos in 0..n - 1 {
            let c = self.y[idx[pos]] as usize;
            left[c] += 1.0;
            right[c] -= 1.0;
            let v = self.x[idx[pos]][f];
            if v == self.x[idx[pos + 1]][f] {
                continue;
            }
            let nl = pos + 1;
            let nr = n - nl;
            if nl < self.config.min_leaf || nr < self.config.min_leaf {
                continue;
            }
            let (nl, nr) = (nl as f64, nr as f64);
            let child = (nl * gini(&left, nl) + nr * gini(&right, nr)) / n as f64;
            let gain = parent - child;
            // ascending thresholds: keep the lowest on ties
            if best.as_ref().is_none_or(|b| gain > b.gain + 1e-12) {
                best = Some(BestSplit { gain, feature: f, threshold: v });
            }
        }
        best
    }

    fn build(&mut self, idx: &mut [usize], depth: usize, rng: &mut Rng) -> usize {
        let dist = self.distribution(idx);
        let pure = dist.iter().filter(|&&p| p > 0.0).count() <= 1;
        if pure || depth >= self.config.max_depth || idx.len() < 2 * self.config.min_leaf.max(1) {
            self.nodes.push(Node::Leaf { distribution: dist });
            return self.nodes.len() - 1;
        }
        let parent = gini(&dist, 1.0);
        let mut candidates = sample(rng, self.n_features, self.mtry).into_vec();
        candidates.sort_unstable();
        let mut best: Option<BestSplit<T>> = None;
        let consider = |feats: &[usize], best: &mut Option<BestSplit<T>>, idx: &mut [usize]| {
            for &f in feats {
                if let Some(s) = self.best_on_feature(idx, f, parent) {
                    let better = match best {
                        None => true,
                        Some(b) => s.gain > b.gain + 1e-12 || ((s.gain - b.gain).abs() <= 1e-12 && s.feature < b.feature),
                    };
                    if better {
                        *best = Some(s);
                    }
                }
            }
        };
        consider(&candidates, &mut best, idx);
        if best.is_none() {
            // every sampled feature was constant here; fall back to the rest
            let rest: Vec<usize> = (0..self.n_features).filter(|f| candidates.binary_search(f).is_err()).collect();
            consider(&rest, &mut best, idx);
        }
        let Some(split) = best.filter(|b| b.gain > 1e-12) else {
            self.nodes.push(Node::Leaf { distribution: dist });
            return self.nodes.len() - 1;
        };
        let (mut l, mut r): (Vec<usize>, Vec<usize>) =
            idx.iter().partition(|&&i| self.x[i][split.feature] <= split.threshold);
        let id = self.nodes.len();
        self.nodes.push(Node::Leaf { distribution: Vec::new() });
        let left = self.build(&mut l, depth + 1, rng);
        let right = self.build(&mut r, depth + 1, rng);
        self.nodes[id] = Node::Split {
            feature: split.feature,
            threshold: split.threshold,
            left,
            right,
        };
        id
    }
}

fn validate_inputs<T: Scalar>(x: &[Vec<T>], y: &[u8], n_classes: usize) -> Result<usize> {
    if x.len() != y.len() {
        return Err(Error::ShapeMismatch(format!("{} feature rows, {} labels", x.len(), y.len())));
    }
    let d = x.first().map(Vec::len).ok_or_else(|| Error::DegenerateData("no training rows".into()))?;
    if let Some(bad) = x.iter().find(|r| r.len() != d) {
        return Err(Error::FeatureMismatch { expected: d, got: bad.len() });
    }
    if x.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::Invalid("non-finite feature value".into()));
    }
    if let Some(&c) = y.iter().find(|&&c| c as usize >= n_classes) {
        return Err(Error::OutOfRange(c as i64));
    }
    let mut present = vec![false; n_classes];
    for &c in y {
        present[c as usize] = true;
    }
    if present.iter().filter(|&&p| p).count() < 2 {
        return Err(Error::DegenerateData("fewer than two classes present".into()));
    }
    Ok(d)
}

/// Fits one tree per derived seed; trees are independent and built in parallel.
pub fn fit<T: Scalar>(
    x: &[Vec<T>],
    y: &[u8],
    n_classes: usize,
    feature_names: Vec<String>,
    config: &ForestConfig,
    seed: u64,
) -> Result<ForestModel<T>> {
    let d = validate_inputs(x, y, n_classes)?;
    if config.n_trees == 0 || config.min_leaf == 0 {
        return Err(Error::Invalid("n_trees and min_leaf must be at least 1".into()));
    }
    if !feature_names.is_empty() && feature_names.len() != d {
        return Err(Error::FeatureMismatch {
            expected: feature_names.len(),
            got: d,
        });
    }
    let mtry = config
        .max_features
        .unwrap_or_else(|| ((d as f64).sqrt().round() as usize).max(1))
        .clamp(1, d);
    let trees = (0..config.n_trees)
        .into_par_iter()
        .map(|t| {
            let mut rng: Rng = rand::SeedableRng::seed_from_u64(derive_seed(seed, &format!("tree{t}")));
            let mut idx: Vec<usize> = if config.bootstrap {
                (0..x.len()).map(|_| rng.random_range(0..x.len())).collect()
            } else {
                (0..x.len()).collect()
            };
            let mut b = Builder {
                x,
                y,
                n_classes,
                n_features: d,
                mtry,
                config,
                nodes: Vec::new(),
            };
            b.build(&mut idx, 0, &mut rng);
            DecisionTree {
                nodes: b.nodes,
                max_depth: config.max_depth,
            }
        })
        .collect();
    Ok(ForestModel {
        schema_version: FOREST_SCHEMA_VERSION,
        n_classes,
        feature_names,
        seed,
        config: *config,
        trees,
    })
}

impl<T: Scalar> ForestModel<T> {
    pub fn n_features(&self) -> Option<usize> {
        (!self.feature_names.is_empty()).then_some(self.feature_names.len())
    }

    /// Mean of the leaf distributions reached in every tree.
    pub fn predict_proba(&self, x: &[T]) -> Result<Vec<f64>> {
        if let Some(d) = self.n_features() {
            if x.len() != d {
                return Err(Error::FeatureMismatch { expected: d, got: x.len() });
            }
        }
        let max_feature = self
            .trees
            .iter()
            .flat_map(|t| &t.nodes)
            .filter_map(|n| match n {
                Node::Split { feature, .. } => Some(*feature),
                Node::Leaf { .. } => None,
            })
            .max();
        if let Some(m) = max_feature {
            if m >= x.len() {
                return Err(Error::FeatureMismatch { expected: m + 1, got: x.len() });
            }
        }
        let mut p = vec![0.0; self.n_classes];
        for t in &self.trees {
            for (acc, v) in p.iter_mut().zip(t.leaf_distribution(x)) {
                *acc += v;
            }
        }
        let n = self.trees.len() as f64;
        p.iter_mut().for_each(|v| *v /= n);
        Ok(p)
    }

    /// Most probable class, lowest index on ties.
    pub fn predict(&self, x: &[T]) -> Result<u8> {
        Ok(argmax(&self.predict_proba(x)?) as u8)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        serde_json::to_writer(std::io::BufWriter::new(f), self)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let m: Self = serde_json::from_reader(std::io::BufReader::new(f))?;
        if m.schema_version != FOREST_SCHEMA_VERSION {
            return Err(Error::format(path, format!("unsupported schema version {}", m.schema_version)));
        }
        if m.trees.is_empty() {
            return Err(Error::format(path, "forest has no trees"));
        }
        Ok(m)
    }
}

/// Index of the largest value, lowest index on ties.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}
