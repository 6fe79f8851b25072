//! Clip-level photometric and geometric augmentation.
//!
//! One parameter set is drawn per clip and applied identically to every frame.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::poseproc::ClipTensor;
use crate::rng::{substream, Rng};
use crate::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentRanges {
    pub flip_p: f64,
    /// Relative half-widths of the multiplicative jitters.
    pub brightness: f64,
    pub contrast: f64,
    pub saturation: f64,
    /// Fraction of the full hue circle.
    pub hue: f64,
    pub rotation_deg: f64,
    /// Fraction of the frame size.
    pub translation: f64,
    pub scale: (f64, f64),
}

impl Default for AugmentRanges {
    fn default() -> Self {
        AugmentRanges {
            flip_p: 0.5,
            brightness: 0.1,
            contrast: 0.1,
            saturation: 0.3,
            hue: 0.1,
            rotation_deg: 30.0,
            translation: 0.1,
            scale: (0.9, 1.5),
        }
    }
}

impl AugmentRanges {
    pub fn none() -> Self {
        AugmentRanges {
            flip_p: 0.0,
            brightness: 0.0,
            contrast: 0.0,
            saturation: 0.0,
            hue: 0.0,
            rotation_deg: 0.0,
            translation: 0.0,
            scale: (1.0, 1.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentParams {
    pub flip: bool,
    pub brightness: f64,
    pub contrast: f64,
    pub saturation: f64,
    pub hue_deg: f64,
    pub rotation_deg: f64,
    pub translate: (f64, f64),
    pub scale: f64,
}

impl AugmentParams {
    pub fn identity() -> Self {
        AugmentParams {
            flip: false,
            brightness: 1.0,
            contrast: 1.0,
            saturation: 1.0,
            hue_deg: 0.0,
            rotation_deg: 0.0,
            translate: (0.0, 0.0),
            scale: 1.0,
        }
    }

    pub fn sample(r: &AugmentRanges, rng: &mut Rng) -> Self {
        let mut sym = |w: f64| if w > 0.0 { rng.random_range(-w..=w) } else { 0.0 };
        let brightness = 1.0 + sym(r.brightness);
        let contrast = 1.0 + sym(r.contrast);
        let saturation = 1.0 + sym(r.saturation);
        let hue_deg = 360.0 * sym(r.hue);
        let rotation_deg = sym(r.rotation_deg);
        let translate = (sym(r.translation), sym(r.translation));
        let scale = if r.scale.1 > r.scale.0 {
            rng.random_range(r.scale.0..=r.scale.1)
        } else {
            r.scale.0
        };
        let flip = rng.random::<f64>() < r.flip_p;
        AugmentParams {
            flip,
            brightness,
            contrast,
            saturation,
            hue_deg,
            rotation_deg,
            translate,
            scale,
        }
    }

    fn is_photometric_identity(&self) -> bool {
        self.brightness == 1.0 && self.contrast == 1.0 && self.saturation == 1.0 && self.hue_deg == 0.0
    }

    fn is_affine_identity(&self) -> bool {
        self.rotation_deg == 0.0 && self.translate == (0.0, 0.0) && self.scale == 1.0
    }

    /// Applies flip, colour jitter, then the affine warp; values end in `[0, 1]`.
    pub fn apply<T: Scalar>(&self, clip: &ClipTensor<T>) -> ClipTensor<T> {
        let [c, t, h, w] = clip.dims;
        let mut data: Vec<f64> = clip.data.iter().map(|v| v.to_f64_lossy()).collect();
        let plane = h * w;
        if self.flip {
            for row in data.chunks_mut(w) {
                row.reverse();
            }
        }
        if c == 3 && !self.is_photometric_identity() {
            for ti in 0..t {
                self.jitter_frame(&mut data, ti, t, plane);
            }
        }
        if !self.is_affine_identity() {
            let src = data.clone();
            for (ci, ti) in (0..c).flat_map(|ci| (0..t).map(move |ti| (ci, ti))) {
                let off = (ci * t + ti) * plane;
                self.warp_plane(&src[off..off + plane], &mut data[off..off + plane], h, w);
            }
        }
        ClipTensor {
            data: data.into_iter().map(|v| T::lit(v.clamp(0.0, 1.0))).collect(),
            dims: clip.dims,
            fps: clip.fps,
        }
    }

    fn jitter_frame(&self, data: &mut [f64], ti: usize, t: usize, plane: usize) {
        let idx = |ci: usize, p: usize| (ci * t + ti) * plane + p;
        let mut mean_gray = 0.0;
        for p in 0..plane {
            let v = data[idx(0, p)] * self.brightness;
            let g = data[idx(1, p)] * self.brightness;
            let b = data[idx(2, p)] * self.brightness;
            mean_gray += 0.299 * v + 0.587 * g + 0.114 * b;
        }
        mean_gray /= plane as f64;
        for p in 0..plane {
            let mut rgb = [0.0; 3];
            for (ci, x) in rgb.iter_mut().enumerate() {
                let v = data[idx(ci, p)] * self.brightness;
                *x = (mean_gray + self.contrast * (v - mean_gray)).clamp(0.0, 1.0);
            }
            let (hh, s, v) = rgb_to_hsv(rgb);
            let hh = (hh + self.hue_deg).rem_euclid(360.0);
            let s = (s * self.saturation).clamp(0.0, 1.0);
            let out = hsv_to_rgb(hh, s, v);
            for (ci, x) in out.iter().enumerate() {
                data[idx(ci, p)] = *x;
            }
        }
    }

    /// Inverse-mapped bilinear warp about the frame centre, zero outside.
    fn warp_plane(&self, src: &[f64], dst: &mut [f64], h: usize, w: usize) {
        let (cx, cy) = ((w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0);
        let th = self.rotation_deg.to_radians();
        let (sn, cs) = th.sin_cos();
        let (tx, ty) = (self.translate.0 * w as f64, self.translate.1 * h as f64);
        for yo in 0..h {
            for xo in 0..w {
                let dx = xo as f64 - cx - tx;
                let dy = yo as f64 - cy - ty;
                let xs = cx + (cs * dx + sn * dy) / self.scale;
                let ys = cy + (-sn * dx + cs * dy) / self.scale;
                dst[yo * w + xo] = bilinear(src, h, w, xs, ys);
            }
        }
    }
}

fn bilinear(src: &[f64], h: usize, w: usize, x: f64, y: f64) -> f64 {
    // snap coordinates within rounding distance of the grid so axis-aligned warps are exact
    let snap = |v: f64| if (v - v.round()).abs() < 1e-9 { v.round() } else { v };
    let (x, y) = (snap(x), snap(y));
    let (x0, y0) = (x.floor(), y.floor());
    let (fx, fy) = (x - x0, y - y0);
    let px = |xi: f64, yi: f64| {
        if xi < 0.0 || yi < 0.0 || xi >= w as f64 || yi >= h as f64 {
            0.0
        } else {
            src[yi as usize * w + xi as usize]
        }
    };
    let mut v = 0.0;
    for (xi, wx) in [(x0, 1.0 - fx), (x0 + 1.0, fx)] {
        for (yi, wy) in [(y0, 1.0 - fy), (y0 + 1.0, fy)] {
            if wx * wy > 0.0 {
                v += wx * wy * px(xi, yi);
            }
        }
    }
    v
}

pub fn rgb_to_hsv([r, g, b]: [f64; 3]) -> (f64, f64, f64) {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let d = max - min;
    let h = if d == 0.0 {
        0.0
    } else if max == r {
        60.0 * ((g - b) / d).rem_euclid(6.0)
    } else if max == g {
        60.0 * ((b - r) / d + 2.0)
    } else {
        60.0 * ((r - g) / d + 4.0)
    };
    let s = if max == 0.0 { 0.0 } else { d / max };
    (h, s, max)
}

pub fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [f64; 3] {
    let c = v * s;
    let hp = h / 60.0;
    let x = c * (1.0 - (hp.rem_euclid(2.0) - 1.0).abs());
    let (r, g, b) = match hp as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    [r + m, g + m, b + m]
}

/// Draws parameters from `ranges` with the `augment` substream of `seed` and applies them.
pub fn augment<T: Scalar>(clip: &ClipTensor<T>, ranges: &AugmentRanges, seed: u64) -> ClipTensor<T> {
    let mut rng = substream(seed, "augment");
    AugmentParams::sample(ranges, &mut rng).apply(clip)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn random_clip(seed: u64, c: usize, t: usize, n: usize) -> ClipTensor<f64> {
        let mut rng = Rng::seed_from_u64(seed);
        let data = (0..c * t * n * n).map(|_| rng.random::<f64>()).collect();
        ClipTensor::new(data, [c, t, n, n], 30.0).unwrap()
    }

    #[test]
    fn flip_twice_restores() {
        let clip = random_clip(1, 3, 4, 8);
        let p = AugmentParams {
            flip: true,
            ..AugmentParams::identity()
        };
        assert_eq!(p.apply(&p.apply(&clip)), clip);
    }

    #[test]
    fn identity_leaves_clip_unchanged() {
        let clip = random_clip(2, 3, 4, 8);
        assert_eq!(augment(&clip, &AugmentRanges::none(), 9), clip);
    }

    #[test]
    fn quarter_turn_matches_index_remap() {
        let n = 6;
        let clip = random_clip(3, 1, 2, n);
        let p = AugmentParams {
            rotation_deg: 90.0,
            ..AugmentParams::identity()
        };
        let out = p.apply(&clip);
        for t in 0..2 {
            for y in 0..n {
                for x in 0..n {
                    let want = clip.at(0, t, n - 1 - x, y);
                    assert!((out.at(0, t, y, x) - want).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn same_seed_same_output_and_frames_consistent() {
        let clip = random_clip(4, 3, 3, 8);
        let a = augment(&clip, &AugmentRanges::default(), 11);
        assert_eq!(a, augment(&clip, &AugmentRanges::default(), 11));
        assert!(a.data.iter().all(|v| (0.0..=1.0).contains(v)));
        // a clip whose frames are identical stays identical frame to frame
        let frame: Vec<f64> = random_clip(5, 3, 1, 8).data;
        let mut data = Vec::new();
        for c in 0..3 {
            for _ in 0..3 {
                data.extend_from_slice(&frame[c * 64..(c + 1) * 64]);
            }
        }
        let still = ClipTensor::new(data, [3, 3, 8, 8], 30.0).unwrap();
        let out = augment(&still, &AugmentRanges::default(), 12);
        for c in 0..3 {
            for y in 0..8 {
                for x in 0..8 {
                    assert_eq!(out.at(c, 0, y, x), out.at(c, 2, y, x));
                }
            }
        }
    }

    #[test]
    fn hsv_roundtrip() {
        let mut rng = Rng::seed_from_u64(6);
        for _ in 0..200 {
            let rgb = [rng.random::<f64>(), rng.random(), rng.random()];
            let (h, s, v) = rgb_to_hsv(rgb);
            let back = hsv_to_rgb(h, s, v);
            for i in 0..3 {
                assert!((back[i] - rgb[i]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn sampled_parameters_stay_in_range() {
        let r = AugmentRanges::default();
        let mut rng = Rng::seed_from_u64(7);
        for _ in 0..500 {
            let p = AugmentParams::sample(&r, &mut rng);
            assert!((0.9..=1.1).contains(&p.brightness));
            assert!((0.7..=1.3).contains(&p.saturation));
            assert!(p.hue_deg.abs() <= 36.0);
            assert!(p.rotation_deg.abs() <= 30.0);
            assert!((0.9..=1.5).contains(&p.scale));
        }
    }
}
