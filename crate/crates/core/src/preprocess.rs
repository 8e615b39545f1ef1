//! Raw clips to fixed-length normalized model inputs.
//!
//! Training clips go through flip, color jitter and rotation (in that order,
//! parameters drawn once per clip) before the resize and normalization that
//! every clip receives.

use ndarray::{s, Array3, Array4, ArrayView3, ArrayView4, ArrayViewMut3, ArrayViewMut4, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const IMAGENET_MEAN: [f64; 3] = [0.485, 0.456, 0.406];
pub const IMAGENET_STD: [f64; 3] = [0.229, 0.224, 0.225];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreprocessConfig {
    pub frames: usize,
    pub target_size: usize,
    pub mean: [f64; 3],
    pub std: [f64; 3],
    pub augment: bool,
    pub flip_prob: f64,
    pub jitter_strength: f64,
    pub rotation_degrees: f64,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            frames: 32,
            target_size: 224,
            mean: IMAGENET_MEAN,
            std: IMAGENET_STD,
            augment: true,
            flip_prob: 0.5,
            jitter_strength: 0.1,
            rotation_degrees: 10.0,
        }
    }
}

impl PreprocessConfig {
    pub fn validate(&self) -> Result<()> {
        if let Some(channel) = self.std.iter().position(|&s| s <= 0.0) {
            return Err(Error::ZeroStd { channel });
        }
        if self.frames == 0 || self.target_size == 0 {
            return Err(Error::Config("preprocess.frames and target_size must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.flip_prob) {
            return Err(Error::Config(format!("preprocess.flip_prob {} outside [0, 1]", self.flip_prob)));
        }
        if !(0.0..=1.0).contains(&self.jitter_strength) || self.rotation_degrees < 0.0 {
            return Err(Error::Config("preprocess jitter must lie in [0, 1] and rotation be non-negative".into()));
        }
        Ok(())
    }
}

/// `T` indices on the even grid over `[0, N-1]`, rounded half up.
pub fn sample_indices(n: usize, t: usize) -> Vec<usize> {
    assert!(n >= 1 && t >= 1, "sample_indices needs N >= 1 and T >= 1");
    if t == 1 {
        return vec![0];
    }
    // round(i (N-1) / (T-1)) in exact integer arithmetic
    let den = t - 1;
    (0..t).map(|i| (2 * i * (n - 1) + den) / (2 * den)).collect()
}

/// Bilinear resize of a `(C, H, W)` frame with half-pixel centers and edge clamping.
pub fn resize_frame(frame: ArrayView3<f32>, out_h: usize, out_w: usize) -> Array3<f32> {
    let (c, h, w) = frame.dim();
    if (h, w) == (out_h, out_w) {
        return frame.to_owned();
    }
    let axis = |out: usize, inp: usize| -> Vec<(usize, usize, f32)> {
        let scale = inp as f64 / out as f64;
        (0..out)
            .map(|d| {
                let src = ((d as f64 + 0.5) * scale - 0.5).max(0.0);
                let i0 = (src.floor() as usize).min(inp - 1);
                let i1 = (i0 + 1).min(inp - 1);
                (i0, i1, (src - i0 as f64) as f32)
            })
            .collect()
    };
    let ys = axis(out_h, h);
    let xs = axis(out_w, w);
    let mut out = Array3::<f32>::zeros((c, out_h, out_w));
    for ch in 0..c {
        let plane = frame.index_axis(Axis(0), ch);
        let mut dst = out.index_axis_mut(Axis(0), ch);
        for (oy, &(y0, y1, ly)) in ys.iter().enumerate() {
            for (ox, &(x0, x1, lx)) in xs.iter().enumerate() {
                let top = plane[[y0, x0]] * (1.0 - lx) + plane[[y0, x1]] * lx;
                let bottom = plane[[y1, x0]] * (1.0 - lx) + plane[[y1, x1]] * lx;
                dst[[oy, ox]] = top * (1.0 - ly) + bottom * ly;
            }
        }
    }
    out
}

/// `p' = (p - mean_c) / std_c` over a `(T, 3, H, W)` clip.
pub fn normalize_clip(mut clip: ArrayViewMut4<f32>, mean: &[f64; 3], std: &[f64; 3]) -> Result<()> {
    if let Some(channel) = std.iter().position(|&s| s <= 0.0) {
        return Err(Error::ZeroStd { channel });
    }
    for c in 0..3 {
        let (m, s) = (mean[c] as f32, std[c] as f32);
        clip.slice_mut(s![.., c, .., ..]).mapv_inplace(|p| (p - m) / s);
    }
    Ok(())
}

/// Inverse of [`normalize_clip`].
pub fn denormalize_clip(mut clip: ArrayViewMut4<f32>, mean: &[f64; 3], std: &[f64; 3]) {
    for c in 0..3 {
        let (m, s) = (mean[c] as f32, std[c] as f32);
        clip.slice_mut(s![.., c, .., ..]).mapv_inplace(|p| p * s + m);
    }
}

/// Augmentation parameters shared by every frame of one clip.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AugmentParams {
    pub flip: bool,
    pub brightness: f32,
    pub contrast: f32,
    pub saturation: f32,
    pub angle_degrees: f32,
}

impl AugmentParams {
    pub const IDENTITY: Self = Self {
        flip: false,
        brightness: 1.0,
        contrast: 1.0,
        saturation: 1.0,
        angle_degrees: 0.0,
    };

    pub fn draw<R: Rng>(rng: &mut R, cfg: &PreprocessConfig) -> Self {
        let flip = rng.random::<f64>() < cfg.flip_prob;
        let s = cfg.jitter_strength;
        let mut factor = || (1.0 - s + 2.0 * s * rng.random::<f64>()) as f32;
        let (brightness, contrast, saturation) = (factor(), factor(), factor());
        let r = cfg.rotation_degrees;
        let angle_degrees = (-r + 2.0 * r * rng.random::<f64>()) as f32;
        Self {
            flip,
            brightness,
            contrast,
            saturation,
            angle_degrees,
        }
    }
}

/// Per-clip generator seeded from the run seed, the epoch and the sample id,
/// so a clip's augmentation does not depend on batch order.
pub fn clip_rng(seed: u64, epoch: usize, sample_id: &str) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update((epoch as u64).to_le_bytes());
    h.update(sample_id.as_bytes());
    ChaCha8Rng::from_seed(h.finalize().into())
}

pub fn flip_horizontal(mut frame: ArrayViewMut3<f32>) {
    let flipped = frame.slice(s![.., .., ..;-1]).to_owned();
    frame.assign(&flipped);
}

fn gray(r: f32, g: f32, b: f32) -> f32 {
    0.299 * r + 0.587 * g + 0.114 * b
}

/// Brightness, then contrast around the frame's mean gray level, then
/// saturation against the per-pixel gray value; clamped to `[0, 1]` after each.
pub fn color_jitter(mut frame: ArrayViewMut3<f32>, brightness: f32, contrast: f32, saturation: f32) {
    let clamp = |v: f32| v.clamp(0.0, 1.0);
    if brightness != 1.0 {
        frame.mapv_inplace(|v| clamp(v * brightness));
    }
    let (_, h, w) = frame.dim();
    if contrast != 1.0 {
        let mut total = 0.0f64;
        for y in 0..h {
            for x in 0..w {
                total += gray(frame[[0, y, x]], frame[[1, y, x]], frame[[2, y, x]]) as f64;
            }
        }
        let mean = (total / (h * w) as f64) as f32;
        frame.mapv_inplace(|v| clamp(contrast * v + (1.0 - contrast) * mean));
    }
    if saturation != 1.0 {
        for y in 0..h {
            for x in 0..w {
                let g = gray(frame[[0, y, x]], frame[[1, y, x]], frame[[2, y, x]]);
                for c in 0..3 {
                    let v = frame[[c, y, x]];
                    frame[[c, y, x]] = clamp(saturation * v + (1.0 - saturation) * g);
                }
            }
        }
    }
}

/// Rotation about the frame center with bilinear sampling; outside pixels are 0.
pub fn rotate_frame(frame: ArrayView3<f32>, angle_degrees: f32) -> Array3<f32> {
    if angle_degrees == 0.0 {
        return frame.to_owned();
    }
    let (c, h, w) = frame.dim();
    let (sin, cos) = (angle_degrees as f64).to_radians().sin_cos();
    let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    let mut out = Array3::<f32>::zeros((c, h, w));
    let sample = |ch: usize, y: isize, x: isize| -> f32 {
        if y < 0 || x < 0 || y >= h as isize || x >= w as isize {
            0.0
        } else {
            frame[[ch, y as usize, x as usize]]
        }
    };
    for oy in 0..h {
        for ox in 0..w {
            // inverse map: rotate the output coordinate back into the source
            let (dy, dx) = (oy as f64 - cy, ox as f64 - cx);
            let sx = cos * dx - sin * dy + cx;
            let sy = sin * dx + cos * dy + cy;
            if sx <= -1.0 || sy <= -1.0 || sx >= w as f64 || sy >= h as f64 {
                continue;
            }
            let (x0, y0) = (sx.floor(), sy.floor());
            let (lx, ly) = ((sx - x0) as f32, (sy - y0) as f32);
            let (x0, y0) = (x0 as isize, y0 as isize);
            for ch in 0..c {
                let top = sample(ch, y0, x0) * (1.0 - lx) + sample(ch, y0, x0 + 1) * lx;
                let bottom = sample(ch, y0 + 1, x0) * (1.0 - lx) + sample(ch, y0 + 1, x0 + 1) * lx;
                out[[ch, oy, ox]] = top * (1.0 - ly) + bottom * ly;
            }
        }
    }
    out
}

/// Applies flip, jitter and rotation to one `(3, H, W)` frame in `[0, 1]`.
pub fn augment_frame(frame: ArrayView3<f32>, p: &AugmentParams) -> Array3<f32> {
    let mut f = frame.to_owned();
    if p.flip {
        flip_horizontal(f.view_mut());
    }
    color_jitter(f.view_mut(), p.brightness, p.contrast, p.saturation);
    rotate_frame(f.view(), p.angle_degrees)
}

/// Augments every frame of a `(T, 3, H, W)` clip with the same parameters.
pub fn augment_clip<R: Rng>(clip: ArrayView4<f32>, rng: &mut R, cfg: &PreprocessConfig) -> (Array4<f32>, AugmentParams) {
    let p = AugmentParams::draw(rng, cfg);
    let mut out = Array4::<f32>::zeros(clip.raw_dim());
    for (t, frame) in clip.outer_iter().enumerate() {
        out.index_axis_mut(Axis(0), t).assign(&augment_frame(frame, &p));
    }
    (out, p)
}

/// Picks `cfg.frames` frames from a raw `(N, 3, H, W)` clip.
pub fn temporal_sample(raw: ArrayView4<f32>, frames: usize) -> Result<Array4<f32>> {
    let n = raw.len_of(Axis(0));
    if n == 0 {
        return Err(Error::shape("clip frames", &[1], &[0]));
    }
    Ok(raw.select(Axis(0), &sample_indices(n, frames)))
}

/// Full path from temporally sampled frames: optional augmentation, resize, normalization.
pub fn preprocess_sampled<R: Rng>(
    sampled: ArrayView4<f32>,
    cfg: &PreprocessConfig,
    rng: Option<&mut R>,
) -> Result<Array4<f32>> {
    let params = match rng {
        Some(rng) if cfg.augment => Some(AugmentParams::draw(rng, cfg)),
        _ => None,
    };
    let t = sampled.len_of(Axis(0));
    let size = cfg.target_size;
    let mut out = Array4::<f32>::zeros((t, 3, size, size));
    for (i, frame) in sampled.outer_iter().enumerate() {
        let resized = match &params {
            Some(p) => resize_frame(augment_frame(frame, p).view(), size, size),
            None => resize_frame(frame, size, size),
        };
        out.index_axis_mut(Axis(0), i).assign(&resized);
    }
    normalize_clip(out.view_mut(), &cfg.mean, &cfg.std)?;
    Ok(out)
}

/// Deterministic evaluation path for a raw clip.
pub fn preprocess_eval(raw: ArrayView4<f32>, cfg: &PreprocessConfig) -> Result<Array4<f32>> {
    let sampled = temporal_sample(raw, cfg.frames)?;
    preprocess_sampled::<ChaCha8Rng>(sampled.view(), cfg, None)
}
