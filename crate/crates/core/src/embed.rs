//! t-SNE projection of learned embeddings and per-class elliptic envelopes.

use std::io::Write;

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{Error, Result};
use crate::rng::substream;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TsneConfig {
    pub perplexity: f64,
    pub early_exaggeration: f64,
    pub n_iter: usize,
    pub exaggeration_iters: usize,
    /// `None` picks `max(n / early_exaggeration / 4, 50)`.
    pub learning_rate: Option<f64>,
    pub initial_momentum: f64,
    pub final_momentum: f64,
    pub entropy_tolerance: f64,
}

impl Default for TsneConfig {
    fn default() -> Self {
        TsneConfig {
            perplexity: 50.0,
            early_exaggeration: 30.0,
            n_iter: 1000,
            exaggeration_iters: 250,
            learning_rate: None,
            initial_momentum: 0.5,
            final_momentum: 0.8,
            entropy_tolerance: 1e-5,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TsneResult {
    pub coords: Vec<[f64; 2]>,
    /// `(iteration, KL(P || Q))` every 50 iterations, with unexaggerated `P`.
    pub kl_history: Vec<(usize, f64)>,
    pub perplexity: f64,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Conditional affinities of row `i` at precision `beta`; returns entropy (nats).
fn row_affinities(d: &[f64], i: usize, beta: f64, out: &mut [f64]) -> f64 {
    // shift by the nearest neighbour distance for numerical range
    let dmin = d.iter().enumerate().filter(|&(j, _)| j != i).map(|(_, &v)| v).fold(f64::INFINITY, f64::min);
    let mut sum = 0.0;
    for (j, o) in out.iter_mut().enumerate() {
        *o = if j == i { 0.0 } else { (-(d[j] - dmin) * beta).exp() };
        sum += *o;
    }
    let mut weighted = 0.0;
    for (j, o) in out.iter_mut().enumerate() {
        *o /= sum;
        if j != i {
            weighted += *o * (d[j] - dmin);
        }
    }
    sum.ln() + beta * weighted
}

/// Symmetrised joint affinities with per-point bandwidths matched to `perplexity`.
pub fn joint_affinities(x: &[Vec<f64>], perplexity: f64, tol: f64) -> Vec<f64> {
    let n = x.len();
    let target = perplexity.ln();
    let mut p = vec![0.0; n * n];
    let mut d = vec![0.0; n];
    for i in 0..n {
        for j in 0..n {
            d[j] = sq_dist(&x[i], &x[j]);
        }
        let (mut lo, mut hi) = (0.0, f64::INFINITY);
        let mut beta = 1.0;
        let row = &mut p[i * n..(i + 1) * n];
        for _ in 0..200 {
            let h = row_affinities(&d, i, beta, row);
            if (h - target).abs() < tol {
                break;
            }
            if h > target {
                lo = beta;
                beta = if hi.is_finite() { (beta + hi) / 2.0 } else { beta * 2.0 };
            } else {
                hi = beta;
                beta = (beta + lo) / 2.0;
            }
        }
    }
    let mut joint = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            joint[i * n + j] = ((p[i * n + j] + p[j * n + i]) / (2.0 * n as f64)).max(1e-12);
        }
        joint[i * n + i] = 0.0;
    }
    joint
}

fn kl_divergence(p: &[f64], y: &[[f64; 2]]) -> f64 {
    let n = y.len();
    let mut z = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                z += 1.0 / (1.0 + sq_dist(&y[i], &y[j]));
            }
        }
    }
    let mut kl = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                let pij = p[i * n + j];
                let q = (1.0 / (1.0 + sq_dist(&y[i], &y[j])) / z).max(1e-300);
                kl += pij * (pij / q).ln();
            }
        }
    }
    kl
}

/// Exact O(n^2) t-SNE to two dimensions.
pub fn tsne(x: &[Vec<f64>], config: &TsneConfig, seed: u64) -> Result<TsneResult> {
    let n = x.len();
    if n < 5 {
        return Err(Error::TooFewPoints { needed: 5, got: n });
    }
    if x.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::Invalid("non-finite embedding value".into()));
    }
    let mut perplexity = config.perplexity;
    if (n as f64) <= 3.0 * perplexity {
        perplexity = (n - 1) as f64 / 3.0;
        log::warn!("perplexity reduced to {perplexity:.2} for {n} points");
    }
    let p = joint_affinities(x, perplexity, config.entropy_tolerance);
    let lr = config
        .learning_rate
        .unwrap_or_else(|| (n as f64 / config.early_exaggeration / 4.0).max(50.0));

    let mut rng = substream(seed, "tsne");
    let init = Normal::new(0.0, 1e-4).expect("valid sd");
    let mut y: Vec<[f64; 2]> = (0..n).map(|_| [init.sample(&mut rng), init.sample(&mut rng)]).collect();
    let mut update = vec![[0.0; 2]; n];
    let mut gains = vec![[1.0f64; 2]; n];
    let mut num = vec![0.0; n * n];
    let mut grad = vec![[0.0; 2]; n];
    let mut kl_history = Vec::new();

    for iter in 0..config.n_iter {
        let exaggerate = iter < config.exaggeration_iters;
        let ex = if exaggerate { config.early_exaggeration } else { 1.0 };
        let momentum = if exaggerate { config.initial_momentum } else { config.final_momentum };
        let mut z = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                let q = 1.0 / (1.0 + sq_dist(&y[i], &y[j]));
                num[i * n + j] = q;
                num[j * n + i] = q;
                z += 2.0 * q;
            }
        }
        for i in 0..n {
            let mut g = [0.0; 2];
            for j in 0..n {
                if i == j {
                    continue;
                }
                let q = num[i * n + j];
                let m = (ex * p[i * n + j] - q / z) * q;
                g[0] += m * (y[i][0] - y[j][0]);
                g[1] += m * (y[i][1] - y[j][1]);
            }
            grad[i] = [4.0 * g[0], 4.0 * g[1]];
        }
        for i in 0..n {
            for a in 0..2 {
                let same_sign = (grad[i][a] > 0.0) == (update[i][a] > 0.0);
                gains[i][a] = if same_sign { gains[i][a] * 0.8 } else { gains[i][a] + 0.2 };
                gains[i][a] = gains[i][a].max(0.01);
                update[i][a] = momentum * update[i][a] - lr * gains[i][a] * grad[i][a];
                y[i][a] += update[i][a];
            }
        }
        if (iter + 1) % 50 == 0 {
            kl_history.push((iter + 1, kl_divergence(&p, &y)));
        }
    }
    Ok(TsneResult {
        coords: y,
        kl_history,
        perplexity,
    })
}

/// Robust Gaussian fit to one class of 2-D points.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Envelope {
    pub class: u8,
    pub location: [f64; 2],
    pub scatter: [[f64; 2]; 2],
    /// Mahalanobis distance beyond which a point is an outlier.
    pub threshold: f64,
}

fn mean_cov(points: &[[f64; 2]]) -> ([f64; 2], [[f64; 2]; 2]) {
    let n = points.len() as f64;
    let mut m = [0.0; 2];
    for p in points {
        m[0] += p[0] / n;
        m[1] += p[1] / n;
    }
    let mut c = [[0.0; 2]; 2];
    for p in points {
        let d = [p[0] - m[0], p[1] - m[1]];
        for a in 0..2 {
            for b in 0..2 {
                c[a][b] += d[a] * d[b] / n;
            }
        }
    }
    (m, c)
}

fn regularise(mut c: [[f64; 2]; 2]) -> [[f64; 2]; 2] {
    let trace = c[0][0] + c[1][1];
    let det = c[0][0] * c[1][1] - c[0][1] * c[1][0];
    if det <= 1e-12 * trace * trace || trace <= 0.0 {
        let eps = 1e-6 * trace.max(1e-12);
        c[0][0] += eps;
        c[1][1] += eps;
    }
    c
}

impl Envelope {
    /// Mahalanobis distance of `p` from the location.
    pub fn distance(&self, p: [f64; 2]) -> f64 {
        mahalanobis_sq(p, self.location, self.scatter).max(0.0).sqrt()
    }

    pub fn is_outlier(&self, p: [f64; 2]) -> bool {
        self.distance(p) > self.threshold
    }
}

fn mahalanobis_sq(p: [f64; 2], m: [f64; 2], c: [[f64; 2]; 2]) -> f64 {
    let det = c[0][0] * c[1][1] - c[0][1] * c[1][0];
    let inv = [[c[1][1] / det, -c[0][1] / det], [-c[1][0] / det, c[0][0] / det]];
    let d = [p[0] - m[0], p[1] - m[1]];
    d[0] * (inv[0][0] * d[0] + inv[0][1] * d[1]) + d[1] * (inv[1][0] * d[0] + inv[1][1] * d[1])
}

pub const DEFAULT_CONTAMINATION: f64 = 0.05;
const TRIM_ROUNDS: usize = 2;

/// Iteratively trimmed mean/covariance: fit, drop the `contamination` share
/// farthest in Mahalanobis distance, refit (twice). The trimmed covariance is
/// rescaled by `(1 - a) / F_chi2_4(q)` (`q` the chi-squared(2) quantile at
/// `1 - a`) so it is consistent for Gaussian data.
pub fn fit_envelope(class: u8, points: &[[f64; 2]], contamination: f64) -> Result<Envelope> {
    if points.len() < 10 {
        return Err(Error::TooFewPoints { needed: 10, got: points.len() });
    }
    if !(0.0..0.5).contains(&contamination) {
        return Err(Error::Invalid(format!("contamination {contamination} outside [0, 0.5)")));
    }
    let chi2 = ChiSquared::new(2.0).expect("dof > 0");
    let q = chi2.inverse_cdf(1.0 - contamination);
    let keep = points.len() - (contamination * points.len() as f64).ceil() as usize;
    let (mut m, c) = mean_cov(points);
    let mut c = regularise(c);
    for _ in 0..TRIM_ROUNDS {
        let mut order: Vec<usize> = (0..points.len()).collect();
        let d: Vec<f64> = points.iter().map(|&p| mahalanobis_sq(p, m, c)).collect();
        order.sort_by(|&a, &b| d[a].total_cmp(&d[b]).then(a.cmp(&b)));
        let kept: Vec<[f64; 2]> = order[..keep].iter().map(|&i| points[i]).collect();
        let (m2, c2) = mean_cov(&kept);
        m = m2;
        c = regularise(c2);
    }
    if contamination > 0.0 {
        let kept_share = keep as f64 / points.len() as f64;
        let chi4 = ChiSquared::new(4.0).expect("dof > 0");
        let factor = kept_share / chi4.cdf(chi2.inverse_cdf(kept_share));
        for row in c.iter_mut() {
            for v in row.iter_mut() {
                *v *= factor;
            }
        }
    }
    Ok(Envelope {
        class,
        location: m,
        scatter: c,
        threshold: q.sqrt(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Outlier {
    pub index: usize,
    pub id: String,
    pub class: u8,
    pub distance: f64,
}

/// Points beyond their class envelope, farthest first.
pub fn flag_outliers(coords: &[[f64; 2]], labels: &[u8], ids: &[String], envelopes: &[Envelope]) -> Result<Vec<Outlier>> {
    if coords.len() != labels.len() || coords.len() != ids.len() {
        return Err(Error::ShapeMismatch("coords, labels and ids must have equal length".into()));
    }
    let mut out = Vec::new();
    for (i, (&p, &c)) in coords.iter().zip(labels).enumerate() {
        let env = envelopes.iter().find(|e| e.class == c).ok_or(Error::MissingEnvelope(c))?;
        let d = env.distance(p);
        if d > env.threshold {
            out.push(Outlier {
                index: i,
                id: ids[i].clone(),
                class: c,
                distance: d,
            });
        }
    }
    out.sort_by(|a, b| b.distance.total_cmp(&a.distance).then(a.index.cmp(&b.index)));
    Ok(out)
}

/// One envelope per class with at least ten points.
pub fn fit_class_envelopes(coords: &[[f64; 2]], labels: &[u8], contamination: f64) -> Result<Vec<Envelope>> {
    let mut classes: Vec<u8> = labels.to_vec();
    classes.sort_unstable();
    classes.dedup();
    classes
        .into_iter()
        .map(|c| {
            let pts: Vec<[f64; 2]> = coords.iter().zip(labels).filter(|(_, &l)| l == c).map(|(p, _)| *p).collect();
            fit_envelope(c, &pts, contamination)
        })
        .collect()
}

/// Training accuracy of a multinomial logistic regression on standardised
/// coordinates, a measure of linear class separability.
pub fn linear_probe_accuracy(x: &[Vec<f64>], labels: &[u8], n_classes: usize) -> f64 {
    let n = x.len();
    if n == 0 {
        return 0.0;
    }
    let d = x[0].len();
    let mut mean = vec![0.0; d];
    let mut sd = vec![0.0; d];
    for r in x {
        for k in 0..d {
            mean[k] += r[k] / n as f64;
        }
    }
    for r in x {
        for k in 0..d {
            sd[k] += (r[k] - mean[k]).powi(2) / n as f64;
        }
    }
    let z: Vec<Vec<f64>> = x
        .iter()
        .map(|r| (0..d).map(|k| (r[k] - mean[k]) / sd[k].sqrt().max(1e-12)).collect())
        .collect();
    let mut w = vec![vec![0.0; d + 1]; n_classes];
    let logits = |w: &[Vec<f64>], r: &[f64]| -> Vec<f64> {
        w.iter().map(|wc| wc[d] + (0..d).map(|k| wc[k] * r[k]).sum::<f64>()).collect()
    };
    for _ in 0..2000 {
        let mut g = vec![vec![0.0; d + 1]; n_classes];
        for (r, &y) in z.iter().zip(labels) {
            let l = logits(&w, r);
            let m = l.iter().cloned().fold(f64::MIN, f64::max);
            let e: Vec<f64> = l.iter().map(|v| (v - m).exp()).collect();
            let s: f64 = e.iter().sum();
            for c in 0..n_classes {
                let delta = e[c] / s - f64::from(u8::from(c == y as usize));
                for k in 0..d {
                    g[c][k] += delta * r[k] / n as f64;
                }
                g[c][d] += delta / n as f64;
            }
        }
        for c in 0..n_classes {
            for k in 0..=d {
                w[c][k] -= 1.0 * g[c][k];
            }
        }
    }
    let correct = z
        .iter()
        .zip(labels)
        .filter(|(r, &y)| crate::forest::argmax(&logits(&w, r)) == y as usize)
        .count();
    correct as f64 / n as f64
}

pub fn write_coords_csv(
    ids: &[String],
    labels: &[u8],
    coords: &[[f64; 2]],
    envelopes: &[Envelope],
    w: impl Write,
) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["assessment_id", "class", "x", "y", "outlier", "mahalanobis"])?;
    for ((id, &c), &p) in ids.iter().zip(labels).zip(coords) {
        let env = envelopes.iter().find(|e| e.class == c).ok_or(Error::MissingEnvelope(c))?;
        let d = env.distance(p);
        wr.write_record([
            id.clone(),
            c.to_string(),
            format!("{}", p[0]),
            format!("{}", p[1]),
            u8::from(d > env.threshold).to_string(),
            format!("{d}"),
        ])?;
    }
    wr.flush().map_err(|e| Error::io("<coords csv>", e))
}
