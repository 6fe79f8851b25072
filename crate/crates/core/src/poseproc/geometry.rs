//! Spine-length scaling and the hand bounding box.

use super::keypoints::{KeypointName, Point, PoseFrame, PoseSequence};
use crate::error::{Error, Result};

/// Ratio between the hand box side and the mean spine length.
pub const BOX_SIDE_PER_SPINE: f64 = 0.593;

/// Minimum fraction of ROI frames with usable torso and wrist keypoints for
/// the pixel pipeline to proceed.
pub const MIN_CLIP_COVERAGE: f64 = 0.10;

pub const TORSO_KEYPOINTS: [KeypointName; 4] = [
    KeypointName::LeftShoulder,
    KeypointName::RightShoulder,
    KeypointName::LeftHip,
    KeypointName::RightHip,
];

/// Inclusive frame interval in which the posture is held.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TemporalRoi {
    pub start_frame: usize,
    pub end_frame: usize,
}

impl TemporalRoi {
    pub fn new(start_frame: usize, end_frame: usize) -> Self {
        TemporalRoi {
            start_frame,
            end_frame,
        }
    }

    pub fn len(&self) -> usize {
        self.end_frame - self.start_frame + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn validate(&self, seq_len: usize) -> Result<()> {
        if self.start_frame < self.end_frame && self.end_frame < seq_len {
            Ok(())
        } else {
            Err(Error::InvalidRoi {
                start: self.start_frame,
                end: self.end_frame,
                len: seq_len,
            })
        }
    }

    pub fn frames<'a>(&self, seq: &'a PoseSequence) -> Result<&'a [PoseFrame]> {
        self.validate(seq.len())?;
        Ok(&seq.frames[self.start_frame..=self.end_frame])
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundingBox {
    pub center: Point,
    pub side: f64,
}

impl BoundingBox {
    pub fn left(&self) -> f64 {
        self.center.x - self.side / 2.0
    }

    pub fn top(&self) -> f64 {
        self.center.y - self.side / 2.0
    }
}

/// Neck (mean of shoulders) and mid-hip (mean of hips) of one frame.
pub fn derived_points(frame: &PoseFrame) -> Result<(Point, Point)> {
    let get = |n: KeypointName| frame.point(n).ok_or(Error::MissingKeypoint(n.as_str()));
    let neck = get(KeypointName::LeftShoulder)?.midpoint(get(KeypointName::RightShoulder)?);
    let midhip = get(KeypointName::LeftHip)?.midpoint(get(KeypointName::RightHip)?);
    Ok((neck, midhip))
}

/// Mean neck to mid-hip distance over the ROI frames that have all four
/// torso keypoints.
pub fn mean_spine_length(seq: &PoseSequence, roi: TemporalRoi) -> Result<f64> {
    let (sum, count) = roi
        .frames(seq)?
        .iter()
        .filter_map(|f| derived_points(f).ok())
        .fold((0.0, 0usize), |(s, c), (neck, hip)| (s + neck.distance(hip), c + 1));
    if count == 0 {
        return Err(Error::NoValidFrames("no frame has both shoulders and hips".into()));
    }
    let h = sum / count as f64;
    if h > 0.0 {
        Ok(h)
    } else {
        Err(Error::NoValidFrames("spine length is zero".into()))
    }
}

/// Median of a slice, averaging the two central values for even lengths.
pub(crate) fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) / 2.0
    }
}

/// Square box centred on the per-coordinate median wrist position, with side
/// `0.593 * h`.
pub fn hand_bounding_box(seq: &PoseSequence, roi: TemporalRoi, h: f64) -> Result<BoundingBox> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::Invalid(format!("spine length must be positive, got {h}")));
    }
    let (mut xs, mut ys): (Vec<f64>, Vec<f64>) = roi
        .frames(seq)?
        .iter()
        .filter_map(|f| f.point(KeypointName::Wrist))
        .map(|p| (p.x, p.y))
        .unzip();
    if xs.is_empty() {
        return Err(Error::NoValidFrames("wrist never detected".into()));
    }
    Ok(BoundingBox {
        center: Point::new(median(&mut xs), median(&mut ys)),
        side: BOX_SIDE_PER_SPINE * h,
    })
}

/// Fraction of ROI frames in which every keypoint in `needed` is usable.
pub fn keypoint_coverage(seq: &PoseSequence, roi: TemporalRoi, needed: &[KeypointName]) -> f64 {
    let Ok(frames) = roi.frames(seq) else {
        return 0.0;
    };
    let ok = frames.iter().filter(|f| f.has_all(needed)).count();
    ok as f64 / frames.len() as f64
}

/// Coverage figures used to decide whether the pixel pipeline can run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClipCoverage {
    pub torso: f64,
    pub wrist: f64,
}

impl ClipCoverage {
    pub fn measure(seq: &PoseSequence, roi: TemporalRoi) -> Self {
        ClipCoverage {
            torso: keypoint_coverage(seq, roi, &TORSO_KEYPOINTS),
            wrist: keypoint_coverage(seq, roi, &[KeypointName::Wrist]),
        }
    }

    pub fn min(&self) -> f64 {
        self.torso.min(self.wrist)
    }

    pub fn is_sufficient(&self) -> bool {
        self.min() >= MIN_CLIP_COVERAGE
    }
}

/// Spine length and hand box for one assessment, failing when keypoint
/// coverage is below [`MIN_CLIP_COVERAGE`].
pub fn locate_hand(seq: &PoseSequence, roi: TemporalRoi) -> Result<BoundingBox> {
    roi.validate(seq.len())?;
    let cov = ClipCoverage::measure(seq, roi);
    if !cov.is_sufficient() {
        return Err(Error::NoValidFrames(format!(
            "keypoint coverage {:.3} below {MIN_CLIP_COVERAGE}",
            cov.min()
        )));
    }
    let h = mean_spine_length(seq, roi)?;
    hand_bounding_box(seq, roi, h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::poseproc::keypoints::{Keypoint, Laterality};
    use proptest::prelude::*;

    fn torso_frame(i: usize, sh: [(f64, f64); 2], hips: [(f64, f64); 2]) -> PoseFrame {
        let mut f = PoseFrame::empty(i);
        f.set(KeypointName::LeftShoulder, Keypoint::new(sh[0].0, sh[0].1, 1.0));
        f.set(KeypointName::RightShoulder, Keypoint::new(sh[1].0, sh[1].1, 1.0));
        f.set(KeypointName::LeftHip, Keypoint::new(hips[0].0, hips[0].1, 1.0));
        f.set(KeypointName::RightHip, Keypoint::new(hips[1].0, hips[1].1, 1.0));
        f
    }

    fn seq(frames: Vec<PoseFrame>) -> PoseSequence {
        PoseSequence::new(frames, 30.0, Laterality::Left).unwrap()
    }

    #[test]
    fn derived_points_are_midpoints() {
        let f = torso_frame(0, [(0.0, 0.0), (2.0, 0.0)], [(0.0, 4.0), (2.0, 4.0)]);
        let (neck, hip) = derived_points(&f).unwrap();
        assert_eq!(neck, Point::new(1.0, 0.0));
        assert_eq!(hip, Point::new(1.0, 4.0));

        let f = torso_frame(0, [(3.2, 1.0), (1.2, 2.0)], [(0.0, 4.0), (2.0, 4.0)]);
        let (neck, _) = derived_points(&f).unwrap();
        assert!((neck.x - 2.2).abs() < 1e-12 && (neck.y - 1.5).abs() < 1e-12);

        let mut f = torso_frame(0, [(0.0, 0.0), (2.0, 0.0)], [(0.0, 4.0), (2.0, 4.0)]);
        f.clear(KeypointName::RightHip);
        assert!(matches!(derived_points(&f), Err(Error::MissingKeypoint("right_hip"))));
    }

    #[test]
    fn spine_length_constant_and_mean() {
        let frames = (0..5)
            .map(|i| torso_frame(i, [(0.0, 0.0), (2.0, 0.0)], [(0.0, 4.0), (2.0, 4.0)]))
            .collect();
        let s = seq(frames);
        assert_eq!(mean_spine_length(&s, TemporalRoi::new(0, 4)).unwrap(), 4.0);

        let s = seq(vec![
            torso_frame(0, [(0.0, 0.0), (0.0, 0.0)], [(0.0, 3.0), (0.0, 3.0)]),
            torso_frame(1, [(0.0, 0.0), (0.0, 0.0)], [(0.0, 5.0), (0.0, 5.0)]),
        ]);
        assert_eq!(mean_spine_length(&s, TemporalRoi::new(0, 1)).unwrap(), 4.0);
    }

    #[test]
    fn spine_length_excludes_incomplete_frames() {
        let mut bad = torso_frame(1, [(0.0, 0.0), (0.0, 0.0)], [(0.0, 100.0), (0.0, 100.0)]);
        bad.clear(KeypointName::LeftShoulder);
        let s = seq(vec![
            torso_frame(0, [(0.0, 0.0), (0.0, 0.0)], [(0.0, 3.0), (0.0, 3.0)]),
            bad,
            torso_frame(2, [(0.0, 0.0), (0.0, 0.0)], [(0.0, 5.0), (0.0, 5.0)]),
        ]);
        assert_eq!(mean_spine_length(&s, TemporalRoi::new(0, 2)).unwrap(), 4.0);
        let s = seq(vec![PoseFrame::empty(0), PoseFrame::empty(1)]);
        assert!(matches!(mean_spine_length(&s, TemporalRoi::new(0, 1)), Err(Error::NoValidFrames(_))));
    }

    #[test]
    fn spine_length_matches_brute_force_on_jittered_sequence() {
        // independent recomputation straight from the raw coordinates
        let mut frames = Vec::new();
        let mut expected = 0.0;
        for i in 0..40usize {
            let j = |k: usize| ((i * 7 + k * 13) % 17) as f64 * 0.031 - 0.25;
            let sh = [(10.0 + j(0), 5.0 + j(1)), (30.0 + j(2), 5.5 + j(3))];
            let hp = [(12.0 + j(4), 60.0 + j(5)), (28.0 + j(6), 61.0 + j(7))];
            let nx = (sh[0].0 + sh[1].0) * 0.5;
            let ny = (sh[0].1 + sh[1].1) * 0.5;
            let hx = (hp[0].0 + hp[1].0) * 0.5;
            let hy = (hp[0].1 + hp[1].1) * 0.5;
            if (5..35).contains(&i) {
                expected += ((nx - hx).powi(2) + (ny - hy).powi(2)).sqrt();
            }
            frames.push(torso_frame(i, sh, hp));
        }
        expected /= 30.0;
        let h = mean_spine_length(&seq(frames), TemporalRoi::new(5, 34)).unwrap();
        assert!(((h - expected) / expected).abs() < 1e-9);
    }

    fn wrist_seq(points: &[(f64, f64)]) -> PoseSequence {
        let frames = points
            .iter()
            .enumerate()
            .map(|(i, &(x, y))| {
                let mut f = PoseFrame::empty(i);
                f.set(KeypointName::Wrist, Keypoint::new(x, y, 1.0));
                f
            })
            .collect();
        seq(frames)
    }

    #[test]
    fn hand_box_side_and_median_centre() {
        let s = wrist_seq(&[(10.0, 20.0); 4]);
        let b = hand_bounding_box(&s, TemporalRoi::new(0, 3), 4.0).unwrap();
        assert_eq!(b.center, Point::new(10.0, 20.0));
        assert!((b.side - 2.372).abs() < 1e-12);

        let s = wrist_seq(&[(0.0, 0.0), (1.0, 1.0), (100.0, 100.0)]);
        let b = hand_bounding_box(&s, TemporalRoi::new(0, 2), 1.0).unwrap();
        assert_eq!(b.center, Point::new(1.0, 1.0));

        let s = seq(vec![PoseFrame::empty(0), PoseFrame::empty(1)]);
        assert!(matches!(hand_bounding_box(&s, TemporalRoi::new(0, 1), 1.0), Err(Error::NoValidFrames(_))));
    }

    #[test]
    fn coverage_counts_complete_frames() {
        let mut frames: Vec<_> = (0..4)
            .map(|i| torso_frame(i, [(0.0, 0.0), (2.0, 0.0)], [(0.0, 4.0), (2.0, 4.0)]))
            .collect();
        let roi = TemporalRoi::new(0, 3);
        assert_eq!(keypoint_coverage(&seq(frames.clone()), roi, &TORSO_KEYPOINTS), 1.0);
        frames[2].clear(KeypointName::LeftHip);
        assert_eq!(keypoint_coverage(&seq(frames.clone()), roi, &TORSO_KEYPOINTS), 0.75);
        let empty = seq((0..4).map(PoseFrame::empty).collect());
        assert_eq!(keypoint_coverage(&empty, roi, &TORSO_KEYPOINTS), 0.0);
    }

    #[test]
    fn roi_validation() {
        let s = wrist_seq(&[(0.0, 0.0); 3]);
        assert!(TemporalRoi::new(1, 1).frames(&s).is_err());
        assert!(TemporalRoi::new(0, 3).frames(&s).is_err());
        assert_eq!(TemporalRoi::new(0, 2).len(), 3);
    }

    fn full_frame(i: usize, pts: &[(f64, f64); 5]) -> PoseFrame {
        let mut f = torso_frame(i, [pts[0], pts[1]], [pts[2], pts[3]]);
        f.set(KeypointName::Wrist, Keypoint::new(pts[4].0, pts[4].1, 1.0));
        f
    }

    proptest! {
        #[test]
        fn translation_moves_centre_only(
            pts in prop::collection::vec(prop::array::uniform5((-50.0..50.0f64, -50.0..50.0f64)), 3..12),
            dx in -100.0..100.0f64, dy in -100.0..100.0f64,
        ) {
            let pts: Vec<[(f64, f64); 5]> = pts.into_iter().map(|mut p| { p[2].1 += 200.0; p[3].1 += 200.0; p }).collect();
            let shifted: Vec<[(f64, f64); 5]> = pts.iter().map(|p| p.map(|(x, y)| (x + dx, y + dy))).collect();
            let a = seq(pts.iter().enumerate().map(|(i, p)| full_frame(i, p)).collect());
            let b = seq(shifted.iter().enumerate().map(|(i, p)| full_frame(i, p)).collect());
            let roi = TemporalRoi::new(0, pts.len() - 1);
            let ba = locate_hand(&a, roi).unwrap();
            let bb = locate_hand(&b, roi).unwrap();
            prop_assert!((bb.center.x - ba.center.x - dx).abs() < 1e-9);
            prop_assert!((bb.center.y - ba.center.y - dy).abs() < 1e-9);
            prop_assert!((bb.side - ba.side).abs() < 1e-9 * ba.side.max(1.0));
        }

        #[test]
        fn scaling_scales_spine_and_box(
            pts in prop::collection::vec(prop::array::uniform5((-50.0..50.0f64, -50.0..50.0f64)), 3..12),
            s in 0.1..10.0f64,
        ) {
            let pts: Vec<[(f64, f64); 5]> = pts.into_iter().map(|mut p| { p[2].1 += 200.0; p[3].1 += 200.0; p }).collect();
            let scaled: Vec<[(f64, f64); 5]> = pts.iter().map(|p| p.map(|(x, y)| (x * s, y * s))).collect();
            let a = seq(pts.iter().enumerate().map(|(i, p)| full_frame(i, p)).collect());
            let b = seq(scaled.iter().enumerate().map(|(i, p)| full_frame(i, p)).collect());
            let roi = TemporalRoi::new(0, pts.len() - 1);
            let ha = mean_spine_length(&a, roi).unwrap();
            let hb = mean_spine_length(&b, roi).unwrap();
            prop_assert!((hb / ha - s).abs() < 1e-9 * s);
            let bb = hand_bounding_box(&b, roi, hb).unwrap();
            prop_assert!((bb.side / hb - BOX_SIDE_PER_SPINE).abs() < 1e-12);
        }

        #[test]
        fn spine_length_is_permutation_invariant(
            pts in prop::collection::vec(prop::array::uniform5((-50.0..50.0f64, -50.0..50.0f64)), 3..12),
            rot in 0usize..12,
        ) {
            let pts: Vec<[(f64, f64); 5]> = pts.into_iter().map(|mut p| { p[2].1 += 200.0; p[3].1 += 200.0; p }).collect();
            let mut permuted = pts.clone();
            let r = rot % permuted.len();
            permuted.rotate_left(r);
            permuted.reverse();
            let a = seq(pts.iter().enumerate().map(|(i, p)| full_frame(i, p)).collect());
            let b = seq(permuted.iter().enumerate().map(|(i, p)| full_frame(i, p)).collect());
            let roi = TemporalRoi::new(0, pts.len() - 1);
            let ha = mean_spine_length(&a, roi).unwrap();
            let hb = mean_spine_length(&b, roi).unwrap();
            prop_assert!((ha - hb).abs() < 1e-9 * ha);
        }
    }
}
