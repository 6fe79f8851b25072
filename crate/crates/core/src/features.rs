//! Hand-crafted kinematic signals and spectral features of the pose branch.
//!
//! For each of six keypoints (thumb, index, pinky, wrist, elbow and the
//! assessed-side shoulder) the vertical coordinate over the temporal ROI is
//! linearly detrended, then reduced to five features: mean and 90th-percentile
//! peak-to-trough amplitude, dominant and mean frequency, and the fraction of
//! spectral power within 6 Hz of the mean frequency.

use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::poseproc::{KeypointName, PoseSequence, TemporalRoi};
use crate::scalar::Scalar;

/// Keypoints contributing features, in column order.
pub const FEATURE_KEYPOINTS: [&str; 6] = ["thumb", "index", "pinky", "wrist", "elbow", "shoulder"];
/// Per-keypoint feature names, in column order.
pub const FEATURE_KINDS: [&str; 5] = [
    "mean_amplitude",
    "max_amplitude",
    "peak_frequency",
    "mean_frequency",
    "relative_tremor_power",
];
pub const N_FEATURES: usize = 30;

/// Minimum share of ROI frames each feature keypoint must be detected in.
pub const MIN_FEATURE_COVERAGE: f64 = 0.5;
/// Extrema swings below this fraction of the signal range are ignored.
pub const MIN_PROMINENCE: f64 = 0.01;
/// Half-width of the band around the mean frequency counted as tremor power.
pub const TREMOR_BAND_HZ: f64 = 6.0;
pub const MIN_DFT_LEN: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum<T> {
    /// Bin centre frequencies in Hz, spaced `fps / N`.
    pub frequencies: Vec<T>,
    pub power: Vec<T>,
}

impl<T: Scalar> Spectrum<T> {
    pub fn total_power(&self) -> T {
        self.power.iter().copied().sum()
    }
}

/// Removes the least-squares line from a uniformly sampled signal.
pub fn detrend<T: Scalar>(signal: &[T]) -> Vec<T> {
    let n = signal.len();
    if n < 2 {
        return vec![T::zero(); n];
    }
    let nf = T::lit(n as f64);
    let t_mean = T::lit((n - 1) as f64 / 2.0);
    let y_mean = signal.iter().copied().sum::<T>() / nf;
    let (mut sxy, mut sxx) = (T::zero(), T::zero());
    for (i, &y) in signal.iter().enumerate() {
        let dt = T::lit(i as f64) - t_mean;
        sxy += dt * (y - y_mean);
        sxx += dt * dt;
    }
    let slope = sxy / sxx;
    signal
        .iter()
        .enumerate()
        .map(|(i, &y)| y - y_mean - slope * (T::lit(i as f64) - t_mean))
        .collect()
}

/// Alternating peaks and troughs with swing at least `min_swing`.
fn extrema<T: Scalar>(signal: &[T], min_swing: T) -> Vec<T> {
    // Candidate turning points: strict sign changes of the first difference,
    // flat runs carry the previous slope sign.
    let mut candidates: Vec<(T, bool)> = Vec::new();
    let mut last_sign = 0i8;
    for i in 1..signal.len() {
        let d = signal[i] - signal[i - 1];
        let sign = if d > T::zero() {
            1
        } else if d < T::zero() {
            -1
        } else {
            0
        };
        if sign == 0 {
            continue;
        }
        if last_sign != 0 && sign != last_sign {
            // the turning point is the last sample before the slope flipped
            candidates.push((signal[i - 1], last_sign > 0));
        }
        last_sign = sign;
    }
    let mut kept: Vec<(T, bool)> = Vec::new();
    for (v, is_peak) in candidates {
        match kept.last_mut() {
            None => kept.push((v, is_peak)),
            Some(last) if last.1 == is_peak => {
                if (is_peak && v > last.0) || (!is_peak && v < last.0) {
                    last.0 = v;
                }
            }
            Some(last) => {
                if (v - last.0).abs() >= min_swing {
                    kept.push((v, is_peak));
                }
            }
        }
    }
    kept.into_iter().map(|(v, _)| v).collect()
}

/// Peak-to-adjacent-trough distances of the detrended signal.
pub fn vertical_amplitude<T: Scalar>(y: &[T]) -> Result<Vec<T>> {
    if y.len() < 3 {
        return Err(Error::TooShort { needed: 3, got: y.len() });
    }
    let d = detrend(y);
    let (lo, hi) = d.iter().fold((T::infinity(), T::neg_infinity()), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let range = hi - lo;
    if !(range > T::zero()) {
        return Ok(Vec::new());
    }
    let ext = extrema(&d, range * T::lit(MIN_PROMINENCE));
    Ok(ext.windows(2).map(|w| (w[1] - w[0]).abs()).collect())
}

/// Reusable FFT plan for repeated spectra of the same length.
pub struct PowerSpectrum<T: Scalar> {
    fft: Arc<dyn Fft<T>>,
    n: usize,
}

impl<T: Scalar> PowerSpectrum<T> {
    pub fn new(n: usize) -> Self {
        PowerSpectrum {
            fft: FftPlanner::new().plan_fft_forward(n),
            n,
        }
    }

    /// One-sided power spectrum of the mean-removed signal, normalised so the
    /// powers sum to `N * variance`.
    pub fn compute(&self, signal: &[T], fps: f64) -> Result<Spectrum<T>> {
        let n = self.n;
        if signal.len() != n {
            return Err(Error::ShapeMismatch(format!("plan for {n} samples, got {}", signal.len())));
        }
        if n < MIN_DFT_LEN {
            return Err(Error::TooShort { needed: MIN_DFT_LEN, got: n });
        }
        if !(fps > 0.0) {
            return Err(Error::Invalid(format!("fps must be positive, got {fps}")));
        }
        let nf = T::lit(n as f64);
        let mean = signal.iter().copied().sum::<T>() / nf;
        // deviations at rounding level of the mean are treated as a flat signal
        let floor = mean.abs() * T::epsilon() * T::lit(8.0);
        let flat = signal.iter().all(|&v| (v - mean).abs() <= floor);
        let mut buf: Vec<Complex<T>> = signal
            .iter()
            .map(|&v| Complex::new(if flat { T::zero() } else { v - mean }, T::zero()))
            .collect();
        self.fft.process(&mut buf);
        let half = n / 2;
        let two = T::lit(2.0);
        let power = (0..=half)
            .map(|k| {
                let p = buf[k].norm_sqr() / nf;
                if k == 0 || (n % 2 == 0 && k == half) {
                    p
                } else {
                    p * two
                }
            })
            .collect();
        let df = fps / n as f64;
        let frequencies = (0..=half).map(|k| T::lit(k as f64 * df)).collect();
        Ok(Spectrum { frequencies, power })
    }
}

pub fn dft_power<T: Scalar>(signal: &[T], fps: f64) -> Result<Spectrum<T>> {
    if signal.len() < MIN_DFT_LEN {
        return Err(Error::TooShort { needed: MIN_DFT_LEN, got: signal.len() });
    }
    PowerSpectrum::new(signal.len()).compute(signal, fps)
}

pub fn mean_amplitude<T: Scalar>(amplitudes: &[T]) -> T {
    if amplitudes.is_empty() {
        return T::zero();
    }
    amplitudes.iter().copied().sum::<T>() / T::lit(amplitudes.len() as f64)
}

/// Linear-interpolation percentile (`q` in `[0, 1]`); zero for an empty series.
pub fn percentile<T: Scalar>(values: &[T], q: f64) -> T {
    if values.is_empty() {
        return T::zero();
    }
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    let pos = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = T::lit(pos - lo as f64);
    v[lo] + (v[hi] - v[lo]) * frac
}

/// 90th percentile of the amplitude series.
pub fn max_amplitude<T: Scalar>(amplitudes: &[T]) -> T {
    percentile(amplitudes, 0.9)
}

pub fn peak_frequency<T: Scalar>(spec: &Spectrum<T>) -> T {
    if !(spec.total_power() > T::zero()) {
        return T::zero();
    }
    let mut best = 0;
    for (k, &p) in spec.power.iter().enumerate() {
        if p > spec.power[best] {
            best = k;
        }
    }
    spec.frequencies[best]
}

pub fn mean_frequency<T: Scalar>(spec: &Spectrum<T>) -> T {
    let total = spec.total_power();
    if !(total > T::zero()) {
        return T::zero();
    }
    spec.frequencies.iter().zip(&spec.power).map(|(&f, &p)| f * p).sum::<T>() / total
}

/// Share of power within `TREMOR_BAND_HZ` of `mean_f`.
pub fn relative_tremor_power<T: Scalar>(spec: &Spectrum<T>, mean_f: T) -> T {
    relative_band_power(spec, mean_f, T::lit(TREMOR_BAND_HZ))
}

pub fn relative_band_power<T: Scalar>(spec: &Spectrum<T>, centre: T, half_width: T) -> T {
    let total = spec.total_power();
    if !(total > T::zero()) {
        return T::zero();
    }
    let band: T = spec
        .frequencies
        .iter()
        .zip(&spec.power)
        .filter(|(&f, _)| (f - centre).abs() <= half_width)
        .map(|(_, &p)| p)
        .sum();
    (band / total).min(T::one())
}

/// The five features of one detrended vertical signal, in [`FEATURE_KINDS`] order.
pub fn signal_features<T: Scalar>(y: &[T], fps: f64) -> Result<[T; 5]> {
    let amps = vertical_amplitude(y)?;
    let detrended = detrend(y);
    let spec = dft_power(&detrended, fps)?;
    let mean_f = mean_frequency(&spec);
    Ok([
        mean_amplitude(&amps),
        max_amplitude(&amps),
        peak_frequency(&spec),
        mean_f,
        relative_tremor_power(&spec, mean_f),
    ])
}

/// Thirty pose features of one assessment.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector<T> {
    pub values: Vec<T>,
}

impl<T: Scalar> FeatureVector<T> {
    pub fn get(&self, keypoint: &str, kind: &str) -> Option<T> {
        let k = FEATURE_KEYPOINTS.iter().position(|&n| n == keypoint)?;
        let f = FEATURE_KINDS.iter().position(|&n| n == kind)?;
        Some(self.values[k * FEATURE_KINDS.len() + f])
    }
}

/// Column names `<keypoint>_<feature>` in storage order.
pub fn feature_names() -> Vec<String> {
    FEATURE_KEYPOINTS
        .iter()
        .flat_map(|k| FEATURE_KINDS.iter().map(move |f| format!("{k}_{f}")))
        .collect()
}

fn feature_keypoint(name: &str, seq: &PoseSequence) -> KeypointName {
    match name {
        "thumb" => KeypointName::Thumb,
        "index" => KeypointName::Index,
        "pinky" => KeypointName::Pinky,
        "wrist" => KeypointName::Wrist,
        "elbow" => KeypointName::Elbow,
        _ => KeypointName::shoulder(seq.laterality),
    }
}

/// Vertical coordinate of one keypoint over the ROI. Frames without a
/// detection are filled by linear interpolation between the nearest
/// detections (nearest value at the edges).
pub fn vertical_signal<T: Scalar>(seq: &PoseSequence, roi: TemporalRoi, name: KeypointName) -> Result<(Vec<T>, f64)> {
    let frames = roi.frames(seq)?;
    let raw: Vec<Option<f64>> = frames.iter().map(|f| f.point(name).map(|p| p.y)).collect();
    let present = raw.iter().filter(|v| v.is_some()).count();
    let coverage = present as f64 / raw.len() as f64;
    if present == 0 {
        return Ok((vec![T::zero(); raw.len()], 0.0));
    }
    let known: Vec<(usize, f64)> = raw.iter().enumerate().filter_map(|(i, v)| v.map(|y| (i, y))).collect();
    let mut out = Vec::with_capacity(raw.len());
    let mut next = 0;
    for i in 0..raw.len() {
        while next < known.len() && known[next].0 < i {
            next += 1;
        }
        let y = if next < known.len() && known[next].0 == i {
            known[next].1
        } else if next == 0 {
            known[0].1
        } else if next == known.len() {
            known[known.len() - 1].1
        } else {
            let (i0, y0) = known[next - 1];
            let (i1, y1) = known[next];
            y0 + (y1 - y0) * (i - i0) as f64 / (i1 - i0) as f64
        };
        out.push(T::lit(y));
    }
    Ok((out, coverage))
}

/// Assembles the 30 features, failing when any feature keypoint is detected in
/// fewer than half of the ROI frames.
pub fn feature_vector<T: Scalar>(seq: &PoseSequence, roi: TemporalRoi) -> Result<FeatureVector<T>> {
    roi.validate(seq.len())?;
    let plan = PowerSpectrum::<T>::new(roi.len());
    let mut values = Vec::with_capacity(N_FEATURES);
    for name in FEATURE_KEYPOINTS {
        let kp = feature_keypoint(name, seq);
        let (y, coverage) = vertical_signal::<T>(seq, roi, kp)?;
        if coverage < MIN_FEATURE_COVERAGE {
            return Err(Error::PoseFailure {
                keypoint: kp.as_str(),
                coverage,
            });
        }
        let amps = vertical_amplitude(&y)?;
        let spec = plan.compute(&detrend(&y), seq.fps)?;
        let mean_f = mean_frequency(&spec);
        values.extend([
            mean_amplitude(&amps),
            max_amplitude(&amps),
            peak_frequency(&spec),
            mean_f,
            relative_tremor_power(&spec, mean_f),
        ]);
    }
    Ok(FeatureVector { values })
}

/// One row of the feature CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRow<T> {
    pub assessment_id: String,
    pub laterality: crate::poseproc::Laterality,
    pub features: FeatureVector<T>,
}

pub fn write_feature_csv<T: Scalar>(rows: &[FeatureRow<T>], w: impl Write) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    let mut header = vec!["assessment_id".to_string(), "laterality".to_string()];
    header.extend(feature_names());
    wr.write_record(&header)?;
    for row in rows {
        let mut rec = vec![row.assessment_id.clone(), row.laterality.to_string()];
        rec.extend(row.features.values.iter().map(|v| format!("{v}")));
        wr.write_record(&rec)?;
    }
    wr.flush().map_err(|e| Error::io("<feature csv>", e))?;
    Ok(())
}

pub fn read_feature_csv<T: Scalar>(path: &Path) -> Result<Vec<FeatureRow<T>>> {
    let mut rd = csv::Reader::from_path(path)?;
    let names = feature_names();
    let headers = rd.headers()?.clone();
    if headers.len() != 2 + N_FEATURES || headers.iter().skip(2).zip(&names).any(|(a, b)| a != b) {
        return Err(Error::format(path, "unexpected feature columns"));
    }
    let mut rows = Vec::new();
    for rec in rd.records() {
        let rec = rec?;
        let laterality = rec[1].parse()?;
        let values = rec
            .iter()
            .skip(2)
            .map(|s| s.parse::<f64>().map(T::lit).map_err(|e| Error::format(path, e.to_string())))
            .collect::<Result<Vec<T>>>()?;
        rows.push(FeatureRow {
            assessment_id: rec[0].to_string(),
            laterality,
            features: FeatureVector { values },
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    /// O(N^2) one-sided power spectrum, computed straight from the definition.
    fn naive_power(x: &[f64]) -> Vec<f64> {
        let n = x.len();
        let mean = x.iter().sum::<f64>() / n as f64;
        (0..=n / 2)
            .map(|k| {
                let (mut re, mut im) = (0.0, 0.0);
                for (t, &v) in x.iter().enumerate() {
                    let a = -2.0 * PI * (k * t) as f64 / n as f64;
                    re += (v - mean) * a.cos();
                    im += (v - mean) * a.sin();
                }
                let p = (re * re + im * im) / n as f64;
                if k == 0 || (n % 2 == 0 && k == n / 2) {
                    p
                } else {
                    2.0 * p
                }
            })
            .collect()
    }

    #[test]
    fn sine_amplitudes_are_twice_the_amplitude() {
        // f = fps/4 samples the peaks exactly; N = 4m + 3 keeps the fitted trend at zero
        let a = 1.7;
        let y: Vec<f64> = (0..403).map(|i| a * (2.0 * PI * 7.5 * i as f64 / 30.0).sin()).collect();
        let amps = vertical_amplitude(&y).unwrap();
        assert!(amps.len() > 100);
        for v in amps {
            assert!((v - 2.0 * a).abs() < 1e-6, "{v}");
        }
    }

    #[test]
    fn constant_and_short_signals() {
        assert!(vertical_amplitude(&[3.0f64; 20]).unwrap().is_empty());
        assert!(matches!(vertical_amplitude(&[1.0f64, 2.0]), Err(Error::TooShort { .. })));
        assert!(matches!(dft_power(&[1.0f64; 7], 30.0), Err(Error::TooShort { .. })));
    }

    #[test]
    fn drifting_sine_recovers_amplitude() {
        let a = 2.0;
        let fps = 30.0;
        let y: Vec<f64> = (0..300)
            .map(|i| {
                let t = i as f64 / fps;
                a * (2.0 * PI * 5.0 * t + 0.3).sin() + 0.1 * t
            })
            .collect();
        // oracle: extrema of the analytically detrended (drift-free) sine samples
        let clean: Vec<f64> = (0..300).map(|i| a * (2.0 * PI * 5.0 * i as f64 / fps + 0.3).sin()).collect();
        let mut oracle = Vec::new();
        for i in 1..299 {
            let (p, c, n) = (clean[i - 1], clean[i], clean[i + 1]);
            if (c > p && c >= n) || (c < p && c <= n) {
                oracle.push(c);
            }
        }
        let oracle_amp: f64 = oracle.windows(2).map(|w| (w[1] - w[0]).abs()).sum::<f64>() / (oracle.len() - 1) as f64;
        let amps = vertical_amplitude(&y).unwrap();
        assert!(!amps.is_empty());
        for v in &amps {
            assert!((v - 2.0 * a).abs() / (2.0 * a) < 0.05, "{v}");
        }
        assert!((mean_amplitude(&amps) - oracle_amp).abs() / oracle_amp < 0.02);
    }

    #[test]
    fn constant_signal_has_zero_power() {
        let s = dft_power(&[4.2f64; 64], 30.0).unwrap();
        assert!(s.power.iter().all(|&p| p.abs() < 1e-20));
        assert_eq!(peak_frequency(&s), 0.0);
        assert_eq!(mean_frequency(&s), 0.0);
        assert_eq!(relative_tremor_power(&s, 0.0), 0.0);
    }

    #[test]
    fn exact_bin_sine_concentrates_power() {
        let y: Vec<f64> = (0..300).map(|i| (2.0 * PI * 5.0 * i as f64 / 30.0).sin()).collect();
        let s = dft_power(&y, 30.0).unwrap();
        assert_eq!(s.frequencies.len(), 151);
        assert!((s.frequencies[1] - 0.1).abs() < 1e-12);
        let total = s.total_power();
        assert!((s.power[50] / total - 1.0).abs() < 1e-9);
        assert_eq!(peak_frequency(&s), s.frequencies[50]);
        assert!((mean_frequency(&s) - 5.0).abs() < 1e-6);
        assert!((relative_tremor_power(&s, 5.0) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn fft_matches_naive_dft_with_parseval() {
        let mut rng = 0x1234_5678_u64;
        for n in [8usize, 9, 31, 64, 100, 127] {
            let x: Vec<f64> = (0..n)
                .map(|_| {
                    rng = rng.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                    (rng >> 11) as f64 / (1u64 << 53) as f64 - 0.5
                })
                .collect();
            let s = dft_power(&x, 30.0).unwrap();
            let oracle = naive_power(&x);
            let scale = oracle.iter().cloned().fold(0.0, f64::max);
            for (a, b) in s.power.iter().zip(&oracle) {
                assert!((a - b).abs() <= 1e-9 * scale, "n={n}");
            }
            let mean = x.iter().sum::<f64>() / n as f64;
            let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
            assert!((s.total_power() - var * n as f64).abs() <= 1e-6 * var * n as f64);
        }
    }

    #[test]
    fn amplitude_summaries() {
        assert_eq!(mean_amplitude(&[2.0f64, 2.0, 2.0]), 2.0);
        assert_eq!(max_amplitude(&[2.0f64, 2.0, 2.0]), 2.0);
        let s: Vec<f64> = (1..=10).map(|v| v as f64).collect();
        assert!((max_amplitude(&s) - 9.1).abs() < 1e-12);
        assert_eq!(mean_amplitude::<f64>(&[]), 0.0);
        assert_eq!(max_amplitude::<f64>(&[]), 0.0);
    }

    fn lines(freqs: &[(f64, f64)]) -> Spectrum<f64> {
        let frequencies: Vec<f64> = (0..=100).map(|k| k as f64 * 0.25).collect();
        let mut power = vec![0.0; frequencies.len()];
        for &(f, p) in freqs {
            power[(f / 0.25).round() as usize] = p;
        }
        Spectrum { frequencies, power }
    }

    #[test]
    fn frequency_features_on_line_spectra() {
        let s = lines(&[(5.0, 3.0)]);
        assert_eq!(peak_frequency(&s), 5.0);
        assert_eq!(mean_frequency(&s), 5.0);
        assert_eq!(relative_tremor_power(&s, mean_frequency(&s)), 1.0);

        let s = lines(&[(4.0, 1.0), (6.0, 1.0)]);
        assert_eq!(mean_frequency(&s), 5.0);

        let s = lines(&[(3.0, 1.0), (8.0, 3.0)]);
        assert!((mean_frequency(&s) - (3.0 * 1.0 + 8.0 * 3.0) / 4.0).abs() < 1e-12);
        assert_eq!(peak_frequency(&s), 8.0);

        let s = lines(&[(2.0, 2.0), (20.0, 1.0)]);
        assert!((relative_tremor_power(&s, 2.5) - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(relative_band_power(&s, 10.0, 100.0), 1.0);
    }

    #[test]
    fn feature_names_order() {
        let names = feature_names();
        assert_eq!(names.len(), N_FEATURES);
        assert_eq!(names[0], "thumb_mean_amplitude");
        assert_eq!(names[19], "wrist_relative_tremor_power");
        assert_eq!(names[29], "shoulder_relative_tremor_power");
    }

    proptest! {
        #[test]
        fn amplitude_offset_invariant_and_scale_equivariant(
            x in prop::collection::vec(-10.0..10.0f64, 8..80),
            c in -100.0..100.0f64,
            s in 0.1..10.0f64,
        ) {
            let a = vertical_amplitude(&x).unwrap();
            let shifted: Vec<f64> = x.iter().map(|v| v + c).collect();
            let scaled: Vec<f64> = x.iter().map(|v| v * s).collect();
            let b = vertical_amplitude(&shifted).unwrap();
            let d = vertical_amplitude(&scaled).unwrap();
            prop_assert_eq!(a.len(), b.len());
            prop_assert_eq!(a.len(), d.len());
            for ((u, v), w) in a.iter().zip(&b).zip(&d) {
                prop_assert!((u - v).abs() < 1e-7 * (1.0 + c.abs()));
                prop_assert!((u * s - w).abs() < 1e-9 * (1.0 + w.abs()));
            }
        }

        #[test]
        fn frequency_features_ignore_gain(
            x in prop::collection::vec(-10.0..10.0f64, 8..80),
            s in 0.1..10.0f64,
        ) {
            let scaled: Vec<f64> = x.iter().map(|v| v * s).collect();
            let a = dft_power(&x, 30.0).unwrap();
            let b = dft_power(&scaled, 30.0).unwrap();
            prop_assume!(a.total_power() > 1e-9);
            prop_assert!((mean_frequency(&a) - mean_frequency(&b)).abs() < 1e-9);
            prop_assert!((relative_tremor_power(&a, mean_frequency(&a)) - relative_tremor_power(&b, mean_frequency(&b))).abs() < 1e-9);
            let r = relative_tremor_power(&a, mean_frequency(&a));
            prop_assert!((0.0..=1.0).contains(&r));
        }
    }
}
