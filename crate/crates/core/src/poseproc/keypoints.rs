//! Keypoint types and the JSON Lines pose format.
//!
//! One JSON object per line:
//! `{"frame": 12, "kp": {"wrist": [x, y, confidence], ...}}`.
//! Absent keypoints are omitted. Names outside [`KeypointName`] are ignored.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Detections below this confidence are treated as absent.
pub const MIN_CONFIDENCE: f64 = 0.3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Laterality {
    Left,
    Right,
}

impl Laterality {
    pub fn as_str(self) -> &'static str {
        match self {
            Laterality::Left => "left",
            Laterality::Right => "right",
        }
    }

    pub fn opposite(self) -> Self {
        match self {
            Laterality::Left => Laterality::Right,
            Laterality::Right => Laterality::Left,
        }
    }
}

impl std::str::FromStr for Laterality {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "left" | "l" => Ok(Laterality::Left),
            "right" | "r" => Ok(Laterality::Right),
            other => Err(Error::Invalid(format!("unknown laterality `{other}`"))),
        }
    }
}

impl std::fmt::Display for Laterality {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Keypoints tracked per frame. Hand and arm keypoints (wrist, thumb, index,
/// pinky, elbow) belong to the side being assessed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum KeypointName {
    LeftShoulder,
    RightShoulder,
    LeftHip,
    RightHip,
    Wrist,
    Thumb,
    Index,
    Pinky,
    Elbow,
}

impl KeypointName {
    pub const ALL: [KeypointName; 9] = [
        KeypointName::LeftShoulder,
        KeypointName::RightShoulder,
        KeypointName::LeftHip,
        KeypointName::RightHip,
        KeypointName::Wrist,
        KeypointName::Thumb,
        KeypointName::Index,
        KeypointName::Pinky,
        KeypointName::Elbow,
    ];

    pub const fn as_str(self) -> &'static str {
        match self {
            KeypointName::LeftShoulder => "left_shoulder",
            KeypointName::RightShoulder => "right_shoulder",
            KeypointName::LeftHip => "left_hip",
            KeypointName::RightHip => "right_hip",
            KeypointName::Wrist => "wrist",
            KeypointName::Thumb => "thumb",
            KeypointName::Index => "index",
            KeypointName::Pinky => "pinky",
            KeypointName::Elbow => "elbow",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.as_str() == s)
    }

    /// Shoulder on the assessed side.
    pub fn shoulder(side: Laterality) -> Self {
        match side {
            Laterality::Left => KeypointName::LeftShoulder,
            Laterality::Right => KeypointName::RightShoulder,
        }
    }

    const fn slot(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }

    pub fn midpoint(self, other: Point) -> Point {
        Point::new((self.x + other.x) / 2.0, (self.y + other.y) / 2.0)
    }

    pub fn distance(self, other: Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Keypoint {
    pub x: f64,
    pub y: f64,
    pub confidence: f64,
    pub present: bool,
}

impl Keypoint {
    pub const ABSENT: Keypoint = Keypoint {
        x: 0.0,
        y: 0.0,
        confidence: 0.0,
        present: false,
    };

    pub fn new(x: f64, y: f64, confidence: f64) -> Self {
        Keypoint {
            x,
            y,
            confidence: confidence.clamp(0.0, 1.0),
            present: x.is_finite() && y.is_finite(),
        }
    }

    /// Position if the detection is present and confident enough.
    pub fn point(&self) -> Option<Point> {
        (self.present && self.confidence >= MIN_CONFIDENCE).then_some(Point::new(self.x, self.y))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoseFrame {
    pub index: usize,
    keypoints: [Keypoint; 9],
}

impl PoseFrame {
    pub fn empty(index: usize) -> Self {
        PoseFrame {
            index,
            keypoints: [Keypoint::ABSENT; 9],
        }
    }

    pub fn keypoint(&self, name: KeypointName) -> &Keypoint {
        &self.keypoints[name.slot()]
    }

    pub fn set(&mut self, name: KeypointName, kp: Keypoint) {
        self.keypoints[name.slot()] = kp;
    }

    pub fn clear(&mut self, name: KeypointName) {
        self.keypoints[name.slot()] = Keypoint::ABSENT;
    }

    pub fn point(&self, name: KeypointName) -> Option<Point> {
        self.keypoint(name).point()
    }

    pub fn has_all(&self, names: &[KeypointName]) -> bool {
        names.iter().all(|&n| self.point(n).is_some())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoseSequence {
    pub frames: Vec<PoseFrame>,
    pub fps: f64,
    pub laterality: Laterality,
}

impl PoseSequence {
    pub fn new(frames: Vec<PoseFrame>, fps: f64, laterality: Laterality) -> Result<Self> {
        if !(fps > 0.0 && fps.is_finite()) {
            return Err(Error::Invalid(format!("fps must be positive, got {fps}")));
        }
        if frames.is_empty() {
            return Err(Error::Invalid("pose sequence has no frames".into()));
        }
        Ok(PoseSequence {
            frames,
            fps,
            laterality,
        })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Reads a JSON Lines pose file. Frame indices may have gaps; missing
    /// frames become frames with every keypoint absent.
    pub fn read_jsonl(path: &Path, fps: f64, laterality: Laterality) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::from_jsonl(BufReader::new(file), fps, laterality)
            .map_err(|e| match e {
                Error::Invalid(msg) => Error::format(path, msg),
                other => other,
            })
    }

    pub fn from_jsonl(reader: impl BufRead, fps: f64, laterality: Laterality) -> Result<Self> {
        let mut by_index: BTreeMap<usize, PoseFrame> = BTreeMap::new();
        for (lineno, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| Error::Invalid(format!("line {}: {e}", lineno + 1)))?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: FrameRecord = serde_json::from_str(&line)
                .map_err(|e| Error::Invalid(format!("line {}: {e}", lineno + 1)))?;
            if rec.frame < 0 {
                return Err(Error::Invalid(format!("line {}: negative frame index", lineno + 1)));
            }
            let idx = rec.frame as usize;
            let mut frame = PoseFrame::empty(idx);
            for (name, [x, y, c]) in rec.kp {
                if let Some(k) = KeypointName::parse(&name) {
                    frame.set(k, Keypoint::new(x, y, c));
                }
            }
            by_index.insert(idx, frame);
        }
        let Some((&last, _)) = by_index.iter().next_back() else {
            return Err(Error::Invalid("no frames".into()));
        };
        let frames = (0..=last)
            .map(|i| by_index.remove(&i).unwrap_or_else(|| PoseFrame::empty(i)))
            .collect();
        PoseSequence::new(frames, fps, laterality)
    }

    pub fn write_jsonl(&self, mut w: impl Write) -> std::io::Result<()> {
        for frame in &self.frames {
            let kp: BTreeMap<&str, [f64; 3]> = KeypointName::ALL
                .iter()
                .filter_map(|&n| {
                    let k = frame.keypoint(n);
                    k.present.then_some((n.as_str(), [k.x, k.y, k.confidence]))
                })
                .collect();
            let line = serde_json::json!({ "frame": frame.index, "kp": kp });
            writeln!(w, "{line}")?;
        }
        Ok(())
    }

    pub fn save_jsonl(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        self.write_jsonl(&mut w)
            .and_then(|_| w.flush())
            .map_err(|e| Error::io(path, e))
    }
}

#[derive(Deserialize)]
struct FrameRecord {
    frame: i64,
    #[serde(default)]
    kp: BTreeMap<String, [f64; 3]>,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jsonl_fills_gaps_and_drops_low_confidence() {
        let src = r#"{"frame": 0, "kp": {"wrist": [1.0, 2.0, 0.9], "nose": [0, 0, 1]}}
{"frame": 2, "kp": {"wrist": [3.0, 4.0, 0.1]}}
"#;
        let seq = PoseSequence::from_jsonl(src.as_bytes(), 30.0, Laterality::Left).unwrap();
        assert_eq!(seq.len(), 3);
        assert_eq!(seq.frames[0].point(KeypointName::Wrist), Some(Point::new(1.0, 2.0)));
        assert_eq!(seq.frames[1].point(KeypointName::Wrist), None);
        // present but below the confidence floor
        assert!(seq.frames[2].keypoint(KeypointName::Wrist).present);
        assert_eq!(seq.frames[2].point(KeypointName::Wrist), None);
    }

    #[test]
    fn jsonl_write_then_read() {
        let mut f = PoseFrame::empty(0);
        f.set(KeypointName::Elbow, Keypoint::new(5.5, -1.25, 0.75));
        let seq = PoseSequence::new(vec![f, PoseFrame::empty(1)], 29.97, Laterality::Right).unwrap();
        let mut buf = Vec::new();
        seq.write_jsonl(&mut buf).unwrap();
        let back = PoseSequence::from_jsonl(buf.as_slice(), 29.97, Laterality::Right).unwrap();
        assert_eq!(back, seq);
    }

    #[test]
    fn rejects_bad_sequences() {
        assert!(PoseSequence::new(vec![], 30.0, Laterality::Left).is_err());
        assert!(PoseSequence::new(vec![PoseFrame::empty(0)], 0.0, Laterality::Left).is_err());
        assert!(PoseSequence::from_jsonl("{\"frame\": -1}".as_bytes(), 30.0, Laterality::Left).is_err());
    }
}
