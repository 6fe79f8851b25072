//! Frame sources, the binary clip format and spatio-temporal cropping.
//!
//! Clip files hold a 20-byte header, the ASCII magic `CLIP` followed by the
//! dimensions `C, T, H, W` as little-endian `u32`, then `C*T*H*W` row-major
//! little-endian `f32` intensities in `[0, 1]`.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use super::geometry::{BoundingBox, TemporalRoi};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const CLIP_MAGIC: &[u8; 4] = b"CLIP";
pub const CLIP_HEADER_LEN: usize = 20;
/// Spatial side of preprocessed clips.
pub const CLIP_SIDE: usize = 32;

/// One RGB video frame, channels interleaved, intensities in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
}

impl Frame {
    pub fn new(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != width * height * 3 {
            return Err(Error::ShapeMismatch(format!(
                "frame {width}x{height} needs {} values, got {}",
                width * height * 3,
                data.len()
            )));
        }
        Ok(Frame { width, height, data })
    }

    pub fn filled(width: usize, height: usize, rgb: [f32; 3]) -> Self {
        let data = std::iter::repeat_n(rgb, width * height).flatten().collect();
        Frame { width, height, data }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> f32 {
        self.data[(y * self.width + x) * 3 + c]
    }

    /// Pixel value with zero padding outside the image.
    #[inline]
    fn get_padded(&self, x: isize, y: isize, c: usize) -> f32 {
        if x < 0 || y < 0 || x as usize >= self.width || y as usize >= self.height {
            0.0
        } else {
            self.get(x as usize, y as usize, c)
        }
    }

    fn from_image(img: image::DynamicImage) -> Self {
        let rgb = img.to_rgb8();
        let (w, h) = rgb.dimensions();
        let data = rgb.as_raw().iter().map(|&v| v as f32 / 255.0).collect();
        Frame {
            width: w as usize,
            height: h as usize,
            data,
        }
    }

    pub fn to_rgb8(&self) -> image::RgbImage {
        let raw = self
            .data
            .iter()
            .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect();
        image::RgbImage::from_raw(self.width as u32, self.height as u32, raw)
            .expect("frame buffer size matches dimensions")
    }
}

/// Random-access video.
pub trait FrameSource {
    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn frame(&self, index: usize) -> Result<Frame>;
}

/// Directory of per-frame PNG or PPM images, ordered by file name.
pub struct ImageDirSource {
    paths: Vec<PathBuf>,
}

impl ImageDirSource {
    pub fn open(dir: &Path) -> Result<Self> {
        let mut paths: Vec<PathBuf> = fs::read_dir(dir)
            .map_err(|e| Error::io(dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| {
                matches!(
                    p.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref(),
                    Some("png" | "ppm")
                )
            })
            .collect();
        paths.sort();
        if paths.is_empty() {
            return Err(Error::format(dir, "no PNG/PPM frames found"));
        }
        Ok(ImageDirSource { paths })
    }

    /// Writes frames as `frame_00000.png`, ... into `dir`.
    pub fn write(dir: &Path, frames: impl IntoIterator<Item = Frame>) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (i, frame) in frames.into_iter().enumerate() {
            let path = dir.join(format!("frame_{i:05}.png"));
            frame.to_rgb8().save(&path)?;
        }
        Ok(())
    }
}

impl FrameSource for ImageDirSource {
    fn len(&self) -> usize {
        self.paths.len()
    }

    fn frame(&self, index: usize) -> Result<Frame> {
        let path = self
            .paths
            .get(index)
            .ok_or_else(|| Error::Invalid(format!("frame {index} out of range")))?;
        Ok(Frame::from_image(image::open(path)?))
    }
}

/// Colour clip `channels x time x height x width`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClipTensor<T> {
    pub data: Vec<T>,
    /// `[C, T, H, W]`
    pub dims: [usize; 4],
    pub fps: f64,
}

impl<T: Scalar> ClipTensor<T> {
    pub fn new(data: Vec<T>, dims: [usize; 4], fps: f64) -> Result<Self> {
        if data.len() != dims.iter().product::<usize>() {
            return Err(Error::ShapeMismatch(format!(
                "clip dims {dims:?} need {} values, got {}",
                dims.iter().product::<usize>(),
                data.len()
            )));
        }
        Ok(ClipTensor { data, dims, fps })
    }

    pub fn channels(&self) -> usize {
        self.dims[0]
    }

    pub fn frames(&self) -> usize {
        self.dims[1]
    }

    pub fn height(&self) -> usize {
        self.dims[2]
    }

    pub fn width(&self) -> usize {
        self.dims[3]
    }

    #[inline]
    pub fn index(&self, c: usize, t: usize, y: usize, x: usize) -> usize {
        ((c * self.dims[1] + t) * self.dims[2] + y) * self.dims[3] + x
    }

    #[inline]
    pub fn at(&self, c: usize, t: usize, y: usize, x: usize) -> T {
        self.data[self.index(c, t, y, x)]
    }

    /// Frames `start..start + len` (all channels).
    pub fn time_slice(&self, start: usize, len: usize) -> Result<Self> {
        let [c, t, h, w] = self.dims;
        if start + len > t || len == 0 {
            return Err(Error::ShapeMismatch(format!("time slice {start}+{len} of {t} frames")));
        }
        let plane = h * w;
        let mut data = Vec::with_capacity(c * len * plane);
        for ch in 0..c {
            let base = (ch * t + start) * plane;
            data.extend_from_slice(&self.data[base..base + len * plane]);
        }
        ClipTensor::new(data, [c, len, h, w], self.fps)
    }

    pub fn cast<U: Scalar>(&self) -> ClipTensor<U> {
        ClipTensor {
            data: self.data.iter().map(|&v| U::lit(v.to_f64_lossy())).collect(),
            dims: self.dims,
            fps: self.fps,
        }
    }

    pub fn write(&self, mut w: impl Write) -> std::io::Result<()> {
        w.write_all(CLIP_MAGIC)?;
        for d in self.dims {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        for &v in &self.data {
            w.write_all(&(v.to_f64_lossy() as f32).to_le_bytes())?;
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        self.write(&mut w)
            .and_then(|_| w.flush())
            .map_err(|e| Error::io(path, e))
    }

    pub fn read(mut r: impl Read, fps: f64) -> std::io::Result<std::result::Result<Self, String>> {
        let mut header = [0u8; CLIP_HEADER_LEN];
        r.read_exact(&mut header)?;
        if &header[..4] != CLIP_MAGIC {
            return Ok(Err("bad magic".into()));
        }
        let mut dims = [0usize; 4];
        for (i, d) in dims.iter_mut().enumerate() {
            let b = &header[4 + 4 * i..8 + 4 * i];
            *d = u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize;
        }
        let n: usize = dims.iter().product();
        let mut bytes = vec![0u8; n * 4];
        r.read_exact(&mut bytes)?;
        let data = bytes
            .chunks_exact(4)
            .map(|b| T::lit(f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64))
            .collect();
        Ok(Ok(ClipTensor { data, dims, fps }))
    }

    pub fn load(path: &Path, fps: f64) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        match Self::read(BufReader::new(file), fps) {
            Ok(Ok(clip)) => Ok(clip),
            Ok(Err(msg)) => Err(Error::format(path, msg)),
            Err(e) => Err(Error::io(path, e)),
        }
    }
}

/// A whole video stored in the clip format (`3 x T x H x W`).
impl<T: Scalar> FrameSource for ClipTensor<T> {
    fn len(&self) -> usize {
        self.frames()
    }

    fn frame(&self, index: usize) -> Result<Frame> {
        let [c, t, h, w] = self.dims;
        if c != 3 {
            return Err(Error::ShapeMismatch(format!("video tensor has {c} channels, expected 3")));
        }
        if index >= t {
            return Err(Error::Invalid(format!("frame {index} out of range")));
        }
        let mut data = vec![0.0f32; h * w * 3];
        for ch in 0..3 {
            for y in 0..h {
                for x in 0..w {
                    data[(y * w + x) * 3 + ch] = self.at(ch, index, y, x).to_f64_lossy() as f32;
                }
            }
        }
        Frame::new(w, h, data)
    }
}

/// Crops the square `bbox` from every ROI frame (zero padding outside the
/// image) and resizes it to `CLIP_SIDE x CLIP_SIDE` by bilinear sampling at
/// pixel centres.
pub fn extract_clip<T: Scalar>(
    video: &dyn FrameSource,
    roi: TemporalRoi,
    bbox: BoundingBox,
    fps: f64,
) -> Result<ClipTensor<T>> {
    extract_clip_sized(video, roi, bbox, fps, CLIP_SIDE)
}

pub fn extract_clip_sized<T: Scalar>(
    video: &dyn FrameSource,
    roi: TemporalRoi,
    bbox: BoundingBox,
    fps: f64,
    side: usize,
) -> Result<ClipTensor<T>> {
    roi.validate(video.len())?;
    if !(bbox.side > 0.0 && bbox.side.is_finite()) {
        return Err(Error::Invalid(format!("box side must be positive, got {}", bbox.side)));
    }
    let t_len = roi.len();
    let mut out = ClipTensor::new(vec![T::zero(); 3 * t_len * side * side], [3, t_len, side, side], fps)?;
    let scale = bbox.side / side as f64;
    let (left, top) = (bbox.left(), bbox.top());
    for (ti, fi) in (roi.start_frame..=roi.end_frame).enumerate() {
        let frame = video.frame(fi)?;
        if ti == 0 {
            let (w, h) = (frame.width as f64, frame.height as f64);
            if left >= w || top >= h || left + bbox.side <= 0.0 || top + bbox.side <= 0.0 {
                return Err(Error::EmptyIntersection);
            }
        }
        for oy in 0..side {
            let sy = top + (oy as f64 + 0.5) * scale - 0.5;
            let y0 = sy.floor();
            let fy = (sy - y0) as f32;
            let y0 = y0 as isize;
            for ox in 0..side {
                let sx = left + (ox as f64 + 0.5) * scale - 0.5;
                let x0 = sx.floor();
                let fx = (sx - x0) as f32;
                let x0 = x0 as isize;
                for c in 0..3 {
                    let p00 = frame.get_padded(x0, y0, c);
                    let p01 = frame.get_padded(x0 + 1, y0, c);
                    let p10 = frame.get_padded(x0, y0 + 1, c);
                    let p11 = frame.get_padded(x0 + 1, y0 + 1, c);
                    let top_row = p00 + (p01 - p00) * fx;
                    let bottom_row = p10 + (p11 - p10) * fx;
                    let v = (top_row + (bottom_row - top_row) * fy).clamp(0.0, 1.0);
                    let idx = out.index(c, ti, oy, ox);
                    out.data[idx] = T::lit(v as f64);
                }
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::poseproc::keypoints::Point;

    struct Frames(Vec<Frame>);

    impl FrameSource for Frames {
        fn len(&self) -> usize {
            self.0.len()
        }
        fn frame(&self, index: usize) -> Result<Frame> {
            Ok(self.0[index].clone())
        }
    }

    fn checker(size: usize) -> Frame {
        let mut data = Vec::with_capacity(size * size * 3);
        for y in 0..size {
            for x in 0..size {
                let v = if (x + y) % 2 == 0 { 1.0 } else { 0.0 };
                let g = ((x * 3 + y * 5) % 7) as f32 / 7.0;
                data.extend_from_slice(&[v, g, 0.5]);
            }
        }
        Frame::new(size, size, data).unwrap()
    }

    #[test]
    fn uniform_video_gives_uniform_clip() {
        let video = Frames(vec![Frame::filled(50, 40, [0.4, 0.4, 0.4]); 6]);
        let bbox = BoundingBox { center: Point::new(25.0, 20.0), side: 17.3 };
        let clip: ClipTensor<f64> = extract_clip(&video, TemporalRoi::new(1, 4), bbox, 30.0).unwrap();
        assert_eq!(clip.dims, [3, 4, 32, 32]);
        assert!(clip.data.iter().all(|&v| (v - 0.4).abs() < 1e-6));
    }

    #[test]
    fn aligned_downsample_is_block_average() {
        let frame = checker(80);
        let video = Frames(vec![frame.clone(), frame.clone()]);
        // 64 px box with integer-aligned corner at (8, 10)
        let bbox = BoundingBox { center: Point::new(40.0, 42.0), side: 64.0 };
        let clip: ClipTensor<f64> = extract_clip(&video, TemporalRoi::new(0, 1), bbox, 30.0).unwrap();
        for c in 0..3 {
            for oy in 0..32 {
                for ox in 0..32 {
                    let (x, y) = (8 + 2 * ox, 10 + 2 * oy);
                    let avg = (frame.get(x, y, c) + frame.get(x + 1, y, c) + frame.get(x, y + 1, c) + frame.get(x + 1, y + 1, c)) as f64 / 4.0;
                    assert!((clip.at(c, 1, oy, ox) - avg).abs() < 1e-6, "c{c} ({ox},{oy})");
                }
            }
        }
    }

    #[test]
    fn outside_region_is_zero_padded() {
        let video = Frames(vec![Frame::filled(64, 64, [1.0, 1.0, 1.0]); 2]);
        // left half of the box lies at x < 0
        let bbox = BoundingBox { center: Point::new(0.0, 32.0), side: 32.0 };
        let clip: ClipTensor<f32> = extract_clip(&video, TemporalRoi::new(0, 1), bbox, 30.0).unwrap();
        for oy in 0..32 {
            for ox in 0..15 {
                assert_eq!(clip.at(0, 0, oy, ox), 0.0);
            }
            for ox in 17..32 {
                assert_eq!(clip.at(2, 1, oy, ox), 1.0);
            }
        }
        let far = BoundingBox { center: Point::new(-100.0, 32.0), side: 32.0 };
        assert!(matches!(
            extract_clip::<f32>(&video, TemporalRoi::new(0, 1), far, 30.0),
            Err(Error::EmptyIntersection)
        ));
    }

    #[test]
    fn clip_file_roundtrip_and_header() {
        let clip = ClipTensor::new((0..3 * 2 * 4 * 5).map(|i| i as f32 / 120.0).collect(), [3, 2, 4, 5], 30.0).unwrap();
        let mut buf = Vec::new();
        clip.write(&mut buf).unwrap();
        assert_eq!(&buf[..4], b"CLIP");
        assert_eq!(&buf[4..8], &3u32.to_le_bytes());
        assert_eq!(&buf[16..20], &5u32.to_le_bytes());
        assert_eq!(buf.len(), CLIP_HEADER_LEN + 4 * clip.data.len());
        let back = ClipTensor::<f32>::read(buf.as_slice(), 30.0).unwrap().unwrap();
        assert_eq!(back, clip);
        // a stored video doubles as a frame source
        let f = back.frame(1).unwrap();
        assert_eq!(f.get(4, 3, 2), clip.at(2, 1, 3, 4));
        assert!(ClipTensor::<f32>::read(&b"NOPE0000000000000000"[..], 30.0).unwrap().is_err());
    }

    #[test]
    fn image_directory_source() {
        let dir = tempfile::tempdir().unwrap();
        let frames = vec![checker(12), Frame::filled(12, 12, [0.2, 0.6, 1.0])];
        ImageDirSource::write(dir.path(), frames.clone()).unwrap();
        let src = ImageDirSource::open(dir.path()).unwrap();
        assert_eq!(src.len(), 2);
        let f = src.frame(1).unwrap();
        assert!((f.get(3, 3, 1) - 0.6).abs() < 1.0 / 255.0);
        assert_eq!(src.frame(0).unwrap().get(0, 0, 0), 1.0);
    }
}
