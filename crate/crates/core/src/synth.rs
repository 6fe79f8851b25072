//! Synthetic assessments with known tremor ground truth.
//!
//! A seated subject holds one arm outstretched; the hand keypoints oscillate
//! vertically as `a * sin(2 pi f t)` about a static posture with a slow drift
//! and Gaussian detection jitter, while a rendered textured hand sprite moves
//! with the same (jitter-free) displacement. Severity maps to peak-to-peak
//! amplitude through [`AMPLITUDE_LADDER`], scaled by a per-assessment factor in
//! `[0.8, 1.25]` so classes never overlap.
//!
//! Confounds reproduce the failure modes seen when inspecting real
//! recordings: hand-held camera shake, auto-focus pulsing, finger fidgeting,
//! tremor outside the temporal ROI and pose-detector dropout.

use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::poseproc::{
    Frame, FrameSource, Keypoint, KeypointName, Laterality, Point, PoseFrame, PoseSequence, TemporalRoi,
};
use crate::rng::{derive_seed, substream, Rng};

/// Peak-to-peak tremor amplitude per score, as a fraction of spine length.
pub const AMPLITUDE_LADDER: [f64; 5] = [0.0, 0.01, 0.04, 0.12, 0.30];
/// Per-assessment amplitude factor range around the ladder value.
pub const AMPLITUDE_SPREAD: (f64, f64) = (0.8, 1.25);
pub const TREMOR_BAND: (f64, f64) = (4.0, 7.0);
/// Keypoint detection jitter (standard deviation) as a fraction of spine length.
pub const JITTER_SD: f64 = 0.00025;
/// Class shares of the clinical training set, scores 0 to 4.
pub const CLINICAL_CLASS_SHARES: [f64; 5] = [0.5634, 0.3403, 0.0638, 0.0281, 0.0044];

pub const FRAME_WIDTH: usize = 96;
pub const FRAME_HEIGHT: usize = 96;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Confound {
    None,
    CameraShake,
    AutofocusPulse,
    FingerFidget,
    OffRoiTremor,
    /// Whole-frame detector dropout with the given per-frame probability.
    KeypointDropout(f64),
}

impl Confound {
    pub fn label(&self) -> String {
        match self {
            Confound::None => "none".into(),
            Confound::CameraShake => "camera_shake".into(),
            Confound::AutofocusPulse => "autofocus_pulse".into(),
            Confound::FingerFidget => "finger_fidget".into(),
            Confound::OffRoiTremor => "off_roi_tremor".into(),
            Confound::KeypointDropout(r) => format!("keypoint_dropout({r})"),
        }
    }
}

impl std::fmt::Display for Confound {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.label())
    }
}

impl std::str::FromStr for Confound {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        Ok(match s {
            "none" | "" => Confound::None,
            "camera_shake" => Confound::CameraShake,
            "autofocus_pulse" => Confound::AutofocusPulse,
            "finger_fidget" => Confound::FingerFidget,
            "off_roi_tremor" => Confound::OffRoiTremor,
            _ => {
                let rate = s
                    .strip_prefix("keypoint_dropout(")
                    .and_then(|r| r.strip_suffix(')'))
                    .and_then(|r| r.parse::<f64>().ok())
                    .ok_or_else(|| Error::Invalid(format!("unknown confound `{s}`")))?;
                Confound::KeypointDropout(rate)
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub score: u8,
    pub laterality: Laterality,
    pub fps: f64,
    /// Seconds.
    pub duration: f64,
    /// Hz.
    pub tremor_freq: f64,
    /// Peak-to-peak amplitude as a fraction of spine length.
    pub tremor_amp: f64,
    pub confound: Confound,
    pub seed: u64,
}

impl SynthSpec {
    /// Spec for a given score with frequency and amplitude drawn from `seed`.
    pub fn for_score(score: u8, laterality: Laterality, seed: u64) -> Self {
        let mut rng = substream(seed, "spec");
        let tremor_freq = rng.random_range(TREMOR_BAND.0..=TREMOR_BAND.1);
        let (lo, hi) = AMPLITUDE_SPREAD;
        let factor = (lo.ln() + rng.random::<f64>() * (hi.ln() - lo.ln())).exp();
        SynthSpec {
            score,
            laterality,
            fps: 30.0,
            duration: 2.0,
            tremor_freq,
            tremor_amp: AMPLITUDE_LADDER[score.min(4) as usize] * factor,
            confound: Confound::None,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Invalid(format!("synth spec: {m}")));
        if self.score > 4 {
            return bad("score must be 0..=4");
        }
        if !(self.fps > 0.0) || !(self.duration > 0.0) {
            return bad("fps and duration must be positive");
        }
        if !(self.tremor_amp >= 0.0) || !(self.tremor_freq >= 0.0) {
            return bad("tremor amplitude and frequency must be non-negative");
        }
        if let Confound::KeypointDropout(r) = self.confound {
            if !(0.0..=1.0).contains(&r) {
                return bad("dropout rate must lie in [0, 1]");
            }
        }
        if self.n_frames() < 8 {
            return bad("fewer than 8 frames");
        }
        Ok(())
    }

    pub fn n_frames(&self) -> usize {
        (self.duration * self.fps).round() as usize
    }

    /// Posture-hold interval: everything but a lead-in and lead-out of
    /// one tenth of the recording (at least two frames each).
    pub fn roi(&self) -> TemporalRoi {
        let n = self.n_frames();
        let lead = (n / 10).max(2);
        TemporalRoi::new(lead, n - 1 - lead)
    }
}

/// Static scene layout and per-frame motion of one recording.
#[derive(Debug, Clone)]
struct Scene {
    spine: f64,

    shoulders: [Point; 2],
    hips: [Point; 2],
    wrist: Point,
    elbow: Point,
    hand: Point,
    fingers: [Point; 3],
    /// Per-frame vertical tremor displacement of the hand.
    tremor: Vec<f64>,
    /// Per-frame extra hand offset outside the posture hold (arm raising).
    pose_offset: Vec<f64>,
    /// Per-frame camera offset.
    shake: Vec<(f64, f64)>,
    /// Per-frame contrast factor (auto-focus pulsing).
    contrast: Vec<f64>,
    /// Per-frame finger offsets.
    fidget: Vec<[(f64, f64); 3]>,
    background: [[(f64, f64, f64, f64); 3]; 3],
    texture_angle: f64,
    skin: [f64; 3],
    noise_seed: u64,
}

fn smooth_wander(rng: &mut Rng, n: usize, fps: f64, amplitude: f64, band: (f64, f64)) -> Vec<f64> {
    let comps: Vec<(f64, f64)> = (0..3)
        .map(|_| (rng.random_range(band.0..band.1), rng.random_range(0.0..2.0 * PI)))
        .collect();
    (0..n)
        .map(|i| {
            let t = i as f64 / fps;
            amplitude * comps.iter().map(|(f, p)| (2.0 * PI * f * t + p).sin()).sum::<f64>() / 3f64.sqrt()
        })
        .collect()
}

impl Scene {
    fn new(spec: &SynthSpec) -> Self {
        let mut rng = substream(spec.seed, "scene");
        let n = spec.n_frames();
        let roi = spec.roi();
        let spine = rng.random_range(36.0..46.0);
        let neck = Point::new(rng.random_range(44.0..52.0), rng.random_range(14.0..20.0));
        // subject faces the camera: their left hand appears on the image right
        let side = match spec.laterality {
            Laterality::Left => 1.0,
            Laterality::Right => -1.0,
        };
        let sh_dy = rng.random_range(-0.02..0.02) * spine;
        let shoulders = [
            Point::new(neck.x + 0.22 * spine, neck.y + sh_dy),
            Point::new(neck.x - 0.22 * spine, neck.y - sh_dy),
        ];
        let hips = [
            Point::new(neck.x + 0.16 * spine, neck.y + spine),
            Point::new(neck.x - 0.16 * spine, neck.y + spine),
        ];
        let wrist = Point::new(
            neck.x + side * rng.random_range(0.36..0.40) * spine,
            neck.y + rng.random_range(0.28..0.33) * spine,
        );
        let own_shoulder = if side > 0.0 { shoulders[0] } else { shoulders[1] };
        let elbow = Point::new((own_shoulder.x + wrist.x) / 2.0, (own_shoulder.y + wrist.y) / 2.0 + 0.05 * spine);
        let hand = Point::new(wrist.x + side * 0.04 * spine, wrist.y - 0.10 * spine);
        let fingers = [
            Point::new(hand.x - side * 0.10 * spine, hand.y - 0.02 * spine),
            Point::new(hand.x, hand.y - 0.13 * spine),
            Point::new(hand.x + side * 0.10 * spine, hand.y - 0.06 * spine),
        ];

        let half_amp = spec.tremor_amp * spine / 2.0;
        let phase = rng.random_range(0.0..2.0 * PI);
        let drift = rng.random_range(-0.005..0.005) * spine;
        let tremor = (0..n)
            .map(|i| {
                let t = i as f64 / spec.fps;
                let inside = i >= roi.start_frame && i <= roi.end_frame;
                let active = match spec.confound {
                    Confound::OffRoiTremor => !inside,
                    _ => true,
                };
                let osc = if active {
                    half_amp * (2.0 * PI * spec.tremor_freq * t + phase).sin()
                } else {
                    0.0
                };
                osc + drift * t
            })
            .collect();
        let lead = roi.start_frame as f64;
        let pose_offset = (0..n)
            .map(|i| {
                if i < roi.start_frame {
                    0.3 * spine * (roi.start_frame - i) as f64 / lead
                } else if i > roi.end_frame {
                    0.3 * spine * (i - roi.end_frame) as f64 / lead
                } else {
                    0.0
                }
            })
            .collect();

        let mut motion_rng = substream(spec.seed, "confound");
        let shake = if spec.confound == Confound::CameraShake {
            let sx = smooth_wander(&mut motion_rng, n, spec.fps, 0.04 * spine, (1.0, 4.0));
            let sy = smooth_wander(&mut motion_rng, n, spec.fps, 0.04 * spine, (1.0, 4.0));
            sx.into_iter().zip(sy).collect()
        } else {
            vec![(0.0, 0.0); n]
        };
        let contrast = if spec.confound == Confound::AutofocusPulse {
            let period = motion_rng.random_range(0.6..1.0);
            let offset = motion_rng.random_range(0.0..period);
            (0..n)
                .map(|i| {
                    let t = (i as f64 / spec.fps + offset) % period / period;
                    let bump = if t < 0.35 { (PI * t / 0.35).sin().powi(2) } else { 0.0 };
                    1.0 - 0.6 * bump
                })
                .collect()
        } else {
            vec![1.0; n]
        };
        let fidget = if spec.confound == Confound::FingerFidget {
            let tracks: Vec<Vec<f64>> = (0..6)
                .map(|_| smooth_wander(&mut motion_rng, n, spec.fps, 0.04 * spine, (0.5, 2.5)))
                .collect();
            (0..n)
                .map(|i| [(tracks[0][i], tracks[1][i]), (tracks[2][i], tracks[3][i]), (tracks[4][i], tracks[5][i])])
                .collect()
        } else {
            vec![[(0.0, 0.0); 3]; n]
        };

        let mut background = [[(0.0, 0.0, 0.0, 0.0); 3]; 3];
        for ch in background.iter_mut() {
            for wave in ch.iter_mut() {
                let wavelength = rng.random_range(6.0..20.0);
                let angle = rng.random_range(0.0..PI);
                let k = 2.0 * PI / wavelength;
                *wave = (k * angle.cos(), k * angle.sin(), rng.random_range(0.0..2.0 * PI), rng.random_range(0.02..0.06));
            }
        }
        let skin = [rng.random_range(0.78..0.9), rng.random_range(0.55..0.68), rng.random_range(0.42..0.55)];
        Scene {
            spine,

            shoulders,
            hips,
            wrist,
            elbow,
            hand,
            fingers,
            tremor,
            pose_offset,
            shake,
            contrast,
            fidget,
            background,
            texture_angle: rng.random_range(0.0..PI),
            skin,
            noise_seed: derive_seed(spec.seed, "sensor"),
        }
    }

    fn hand_dy(&self, i: usize) -> f64 {
        self.tremor[i] + self.pose_offset[i]
    }

    fn render(&self, i: usize) -> Frame {
        let (w, h) = (FRAME_WIDTH, FRAME_HEIGHT);
        let (sx, sy) = self.shake[i];
        let dy = self.hand_dy(i);
        let hand = Point::new(self.hand.x, self.hand.y + dy);
        let fingers: Vec<Point> = self
            .fingers
            .iter()
            .zip(self.fidget[i])
            .map(|(p, (fx, fy))| Point::new(p.x + fx, p.y + dy + fy))
            .collect();
        let palm_sd = 0.09 * self.spine;
        let finger_sd = 0.032 * self.spine;
        let texture_k = 2.0 * PI / (0.08 * self.spine);
        let (tc, ts) = (self.texture_angle.cos(), self.texture_angle.sin());
        let contrast = self.contrast[i];
        let mut noise_rng = substream(self.noise_seed, &format!("frame{i}"));
        let noise = Normal::new(0.0, 0.004).expect("valid sd");
        let mut data = Vec::with_capacity(w * h * 3);
        for py in 0..h {
            for px in 0..w {
                let x = px as f64 + 0.5 - sx;
                let y = py as f64 + 0.5 - sy;
                let blob = |c: Point, sd: f64| {
                    let (dx, dy) = (x - c.x, y - c.y);
                    let r2 = dx * dx + dy * dy;
                    if r2 > 16.0 * sd * sd {
                        0.0
                    } else {
                        (-r2 / (2.0 * sd * sd)).exp()
                    }
                };
                let mut alpha = blob(hand, palm_sd);
                for f in &fingers {
                    alpha += blob(*f, finger_sd);
                }
                let alpha = alpha.min(1.0);
                let stripe = 1.0 + 0.12 * (texture_k * ((x - hand.x) * tc + (y - hand.y) * ts)).sin();
                for ch in 0..3 {
                    let bg = 0.45
                        + self.background[ch]
                            .iter()
                            .map(|&(kx, ky, p, a)| a * (kx * x + ky * y + p).sin())
                            .sum::<f64>();
                    let fg = self.skin[ch] * stripe;
                    let v = bg * (1.0 - alpha) + fg * alpha;
                    let v = 0.5 + (v - 0.5) * contrast + noise.sample(&mut noise_rng);
                    data.push(v.clamp(0.0, 1.0) as f32);
                }
            }
        }
        Frame { width: w, height: h, data }
    }
}

/// Procedurally rendered recording; frames are produced on demand.
#[derive(Debug, Clone)]
pub struct SynthVideo {
    scene: Scene,
}

impl SynthVideo {
    pub fn spine_length(&self) -> f64 {
        self.scene.spine
    }
}

impl FrameSource for SynthVideo {
    fn len(&self) -> usize {
        self.scene.tremor.len()
    }

    fn frame(&self, index: usize) -> Result<Frame> {
        if index >= self.len() {
            return Err(Error::Invalid(format!("frame {index} out of range")));
        }
        Ok(self.scene.render(index))
    }
}

#[derive(Debug, Clone)]
pub struct SynthAssessment {
    pub spec: SynthSpec,
    pub pose: PoseSequence,
    pub video: SynthVideo,
    pub roi: TemporalRoi,
    pub score: u8,
}

/// Drops every keypoint of a frame with probability `rate`.
pub fn inject_dropout(seq: &mut PoseSequence, rate: f64, seed: u64) {
    let mut rng = substream(seed, "dropout");
    for frame in &mut seq.frames {
        if rng.random::<f64>() < rate {
            for name in KeypointName::ALL {
                frame.clear(name);
            }
        }
    }
}

fn keypoints(spec: &SynthSpec, scene: &Scene) -> PoseSequence {
    let mut rng = substream(spec.seed, "jitter");
    let jitter = Normal::new(0.0, JITTER_SD * scene.spine).expect("valid sd");
    let n = scene.tremor.len();
    let mut frames = Vec::with_capacity(n);
    for i in 0..n {
        let (sx, sy) = scene.shake[i];
        let dy = scene.hand_dy(i);
        let mut frame = PoseFrame::empty(i);
        let mut put = |name: KeypointName, p: Point, rng: &mut Rng| {
            let x = p.x + sx + jitter.sample(rng);
            let y = p.y + sy + jitter.sample(rng);
            let conf = rng.random_range(0.7..1.0);
            frame.set(name, Keypoint::new(x, y, conf));
        };
        put(KeypointName::LeftShoulder, scene.shoulders[0], &mut rng);
        put(KeypointName::RightShoulder, scene.shoulders[1], &mut rng);
        put(KeypointName::LeftHip, scene.hips[0], &mut rng);
        put(KeypointName::RightHip, scene.hips[1], &mut rng);
        put(KeypointName::Wrist, Point::new(scene.wrist.x, scene.wrist.y + dy), &mut rng);
        put(KeypointName::Elbow, Point::new(scene.elbow.x, scene.elbow.y + 0.4 * dy), &mut rng);
        let names = [KeypointName::Thumb, KeypointName::Index, KeypointName::Pinky];
        for (k, name) in names.into_iter().enumerate() {
            let (fx, fy) = scene.fidget[i][k];
            let p = scene.fingers[k];
            put(name, Point::new(p.x + fx, p.y + dy + fy), &mut rng);
        }
        frames.push(frame);
    }
    let mut seq = PoseSequence {
        frames,
        fps: spec.fps,
        laterality: spec.laterality,
    };
    if let Confound::KeypointDropout(rate) = spec.confound {
        inject_dropout(&mut seq, rate, spec.seed);
    }
    seq
}

/// Generates keypoints, the rendered recording and the ROI of one assessment.
pub fn gen_assessment(spec: &SynthSpec) -> Result<SynthAssessment> {
    spec.validate()?;
    let scene = Scene::new(spec);
    let pose = keypoints(spec, &scene);
    Ok(SynthAssessment {
        spec: spec.clone(),
        pose,
        roi: spec.roi(),
        score: spec.score,
        video: SynthVideo { scene },
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Treatment {
    Baseline,
    Ldopa,
    Dbs,
    DbsLdopa,
}

impl Treatment {
    pub const ALL: [Treatment; 4] = [Treatment::Baseline, Treatment::Ldopa, Treatment::Dbs, Treatment::DbsLdopa];

    pub fn as_str(self) -> &'static str {
        match self {
            Treatment::Baseline => "baseline",
            Treatment::Ldopa => "ldopa",
            Treatment::Dbs => "dbs",
            Treatment::DbsLdopa => "dbs_ldopa",
        }
    }

    pub fn display_name(self) -> &'static str {
        match self {
            Treatment::Baseline => "Baseline",
            Treatment::Ldopa => "L-Dopa",
            Treatment::Dbs => "DBS",
            Treatment::DbsLdopa => "DBS + L-Dopa",
        }
    }
}

impl std::str::FromStr for Treatment {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Treatment::ALL
            .into_iter()
            .find(|t| t.as_str() == s.trim())
            .ok_or_else(|| Error::Invalid(format!("unknown treatment `{s}`")))
    }
}

/// One manifest entry of a generated dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthRecord {
    pub assessment_id: String,
    pub patient_id: Option<String>,
    pub treatment: Option<Treatment>,
    pub spec: SynthSpec,
}

impl SynthRecord {
    pub fn roi(&self) -> TemporalRoi {
        self.spec.roi()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassBalance {
    Balanced { n_per_class: usize },
    /// Total count split by [`CLINICAL_CLASS_SHARES`] (largest remainder).
    ClinicalSkew { total: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSpec {
    pub balance: ClassBalance,
    /// Weighted confound mix; weights need not sum to one.
    pub confound_mix: Vec<(Confound, f64)>,
    pub fps: f64,
    pub duration: f64,
    pub seed: u64,
}

impl DatasetSpec {
    pub fn new(balance: ClassBalance, seed: u64) -> Self {
        DatasetSpec {
            balance,
            confound_mix: vec![(Confound::None, 1.0)],
            fps: 30.0,
            duration: 2.0,
            seed,
        }
    }
}

/// Largest-remainder apportionment of `total` by `shares`.
pub fn apportion(total: usize, shares: &[f64]) -> Vec<usize> {
    let sum: f64 = shares.iter().sum();
    let exact: Vec<f64> = shares.iter().map(|s| s / sum * total as f64).collect();
    let mut counts: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let mut order: Vec<usize> = (0..shares.len()).collect();
    order.sort_by(|&a, &b| (exact[b] - exact[b].floor()).total_cmp(&(exact[a] - exact[a].floor())).then(a.cmp(&b)));
    let missing = total - counts.iter().sum::<usize>();
    for &i in order.iter().take(missing) {
        counts[i] += 1;
    }
    counts
}

fn pick_confound(mix: &[(Confound, f64)], rng: &mut Rng) -> Confound {
    let total: f64 = mix.iter().map(|(_, w)| w.max(0.0)).sum();
    if mix.is_empty() || total <= 0.0 {
        return Confound::None;
    }
    let mut u = rng.random::<f64>() * total;
    for (c, w) in mix {
        u -= w.max(0.0);
        if u < 0.0 {
            return *c;
        }
    }
    mix[mix.len() - 1].0
}

/// Manifest of a synthetic cohort. Scores are shuffled and paired into
/// assessment ids, one row per laterality.
pub fn gen_dataset(spec: &DatasetSpec) -> Result<Vec<SynthRecord>> {
    let counts = match spec.balance {
        ClassBalance::Balanced { n_per_class } => {
            if n_per_class == 0 {
                return Err(Error::Invalid("n_per_class must be at least 1".into()));
            }
            vec![n_per_class; 5]
        }
        ClassBalance::ClinicalSkew { total } => {
            if total == 0 {
                return Err(Error::Invalid("dataset size must be at least 1".into()));
            }
            apportion(total, &CLINICAL_CLASS_SHARES)
        }
    };
    let mut scores: Vec<u8> = counts
        .iter()
        .enumerate()
        .flat_map(|(s, &c)| std::iter::repeat_n(s as u8, c))
        .collect();
    let mut rng = substream(spec.seed, "dataset");
    scores.shuffle(&mut rng);
    let mut records = Vec::with_capacity(scores.len());
    for (i, score) in scores.into_iter().enumerate() {
        let laterality = if i % 2 == 0 { Laterality::Left } else { Laterality::Right };
        let assessment_id = format!("A{:05}", i / 2);
        let seed = derive_seed(spec.seed, &format!("{assessment_id}/{laterality}"));
        let mut s = SynthSpec::for_score(score, laterality, seed);
        s.fps = spec.fps;
        s.duration = spec.duration;
        s.confound = pick_confound(&spec.confound_mix, &mut rng);
        s.validate()?;
        records.push(SynthRecord {
            assessment_id,
            patient_id: None,
            treatment: None,
            spec: s,
        });
    }
    Ok(records)
}

/// Mean fractional amplitude reduction of each treatment arm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TreatmentEffects {
    pub ldopa: f64,
    pub dbs: f64,
    pub dbs_ldopa: f64,
    /// Per-assessment spread (uniform half-width) around each reduction.
    pub spread: f64,
}

impl Default for TreatmentEffects {
    fn default() -> Self {
        TreatmentEffects {
            ldopa: 0.3,
            dbs: 0.7,
            dbs_ldopa: 0.8,
            spread: 0.05,
        }
    }
}

impl TreatmentEffects {
    pub fn reduction(&self, t: Treatment) -> f64 {
        match t {
            Treatment::Baseline => 0.0,
            Treatment::Ldopa => self.ldopa,
            Treatment::Dbs => self.dbs,
            Treatment::DbsLdopa => self.dbs_ldopa,
        }
    }
}

/// Score whose ladder amplitude is nearest in log scale.
pub fn score_for_amplitude(amp: f64) -> u8 {
    if amp < AMPLITUDE_LADDER[1] / 2.0 {
        return 0;
    }
    (1..5)
        .min_by(|&a, &b| {
            let da = (amp.ln() - AMPLITUDE_LADDER[a].ln()).abs();
            let db = (amp.ln() - AMPLITUDE_LADDER[b].ln()).abs();
            da.total_cmp(&db)
        })
        .unwrap_or(0) as u8
}

/// Held-out treatment cohort: every patient is recorded at baseline and under
/// each treatment arm, both lateralities, with baseline score at least 1.
pub fn gen_treatment_cohort(n_patients: usize, effects: TreatmentEffects, seed: u64) -> Vec<SynthRecord> {
    let mut rng = substream(seed, "treatment");
    let mut records = Vec::new();
    for p in 0..n_patients {
        let patient = format!("P{p:03}");
        for laterality in [Laterality::Left, Laterality::Right] {
            let base_score: u8 = rng.random_range(1..=3);
            let base_seed = derive_seed(seed, &format!("{patient}/{laterality}"));
            let base = SynthSpec::for_score(base_score, laterality, base_seed);
            for t in Treatment::ALL {
                let r = (effects.reduction(t) + rng.random_range(-effects.spread..=effects.spread)).clamp(0.0, 1.0);
                let r = if t == Treatment::Baseline { 0.0 } else { r };
                let amp = base.tremor_amp * (1.0 - r);
                let mut s = base.clone();
                s.tremor_amp = amp;
                s.score = score_for_amplitude(amp);
                s.tremor_freq = (base.tremor_freq + rng.random_range(-0.2..0.2)).clamp(TREMOR_BAND.0, TREMOR_BAND.1);
                s.seed = derive_seed(base_seed, t.as_str());
                records.push(SynthRecord {
                    assessment_id: format!("{patient}-{}", t.as_str()),
                    patient_id: Some(patient.clone()),
                    treatment: Some(t),
                    spec: s,
                });
            }
        }
    }
    records
}
