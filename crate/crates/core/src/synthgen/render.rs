//! Signer styles, clip paths and frame rasterization.

use image::{Rgb, RgbImage};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::dist;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Shape {
    Disc,
    Square,
    Diamond,
    Ring,
    Cross,
}

impl Shape {
    pub const ALL: [Shape; 5] = [Shape::Disc, Shape::Square, Shape::Diamond, Shape::Ring, Shape::Cross];

    /// The shape `k` places further along [`Shape::ALL`].
    pub fn shifted(self, k: usize) -> Shape {
        let i = Shape::ALL.iter().position(|&s| s == self).expect("listed shape");
        Shape::ALL[(i + k) % Shape::ALL.len()]
    }

    /// Whether offset `(dx, dy)` in units of the shape radius is inside the shape.
    fn covers(self, dx: f64, dy: f64) -> bool {
        let r2 = dx * dx + dy * dy;
        match self {
            Shape::Disc => r2 <= 1.0,
            Shape::Square => dx.abs() <= 0.85 && dy.abs() <= 0.85,
            Shape::Diamond => dx.abs() + dy.abs() <= 1.1,
            Shape::Ring => (0.3..=1.0).contains(&r2),
            Shape::Cross => (dx.abs() <= 0.35 && dy.abs() <= 1.0) || (dy.abs() <= 0.35 && dx.abs() <= 1.0),
        }
    }
}

/// Per-signer appearance and motion habits.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SignerStyle {
    /// Shift of the whole signer in normalized coordinates.
    pub offset: [f64; 2],
    pub scale: f64,
    /// Multiplier on signing speed; faster signers produce shorter clips.
    pub speed: f64,
    pub background: [u8; 3],
    pub body: [u8; 3],
    pub hand: [u8; 3],
    /// Hand rest position before and after the sign.
    pub rest: [f64; 2],
    /// Signer-specific articulation: each class shape is rendered this many
    /// places along [`Shape::ALL`], so shape alone does not carry across signers.
    pub shape_shift: usize,
    /// Rotation (radians) and per-axis stretch of the signer's hand path
    /// about the signing-space centre.
    pub tilt: f64,
    pub stretch: [f64; 2],
}

fn color<R: Rng>(rng: &mut R, lo: u8, hi: u8) -> [u8; 3] {
    [0; 3].map(|_| rng.random_range(lo..=hi))
}

impl SignerStyle {
    pub fn draw<R: Rng>(rng: &mut R, jitter: f64) -> Self {
        let mut spread = |scale: f64| if jitter == 0.0 { 0.0 } else { rng.random_range(-jitter..jitter) * scale };
        let offset = [spread(0.5), spread(0.3)];
        let scale = 1.0 + spread(1.0);
        let speed = 1.0 + spread(1.0);
        let rest_x = 0.5 + spread(0.6);
        let tilt = spread(2.0);
        let stretch = [1.0 + spread(1.5), 1.0 + spread(1.5)];
        Self {
            offset,
            scale,
            speed,
            background: color(rng, 60, 130),
            body: color(rng, 140, 190),
            hand: [rng.random_range(215..=240), rng.random_range(150..=200), rng.random_range(40..=90)],
            rest: [rest_x, 0.88],
            shape_shift: rng.random_range(0..Shape::ALL.len()),
            tilt,
            stretch,
        }
    }

    /// Applies the signer's tilt and stretch to a hand position, then places it.
    pub fn place_hand(&self, p: [f64; 2]) -> [f64; 2] {
        let (dx, dy) = ((p[0] - 0.5) * self.stretch[0], (p[1] - 0.45) * self.stretch[1]);
        let (sin, cos) = self.tilt.sin_cos();
        self.place([0.5 + cos * dx - sin * dy, 0.45 + sin * dx + cos * dy])
    }

    /// Maps a normalized body point into this signer's frame.
    pub fn place(&self, p: [f64; 2]) -> [f64; 2] {
        [
            0.5 + self.offset[0] + self.scale * (p[0] - 0.5),
            0.5 + self.offset[1] + self.scale * (p[1] - 0.5),
        ]
    }
}

/// `n` points spaced evenly by arc length along the polyline.
pub fn resample(waypoints: &[[f64; 2]], n: usize) -> Vec<[f64; 2]> {
    if waypoints.len() == 1 || n <= 1 {
        return vec![waypoints[0]; n];
    }
    let seg: Vec<f64> = waypoints.windows(2).map(|w| dist(w[0], w[1])).collect();
    let total: f64 = seg.iter().sum();
    if total == 0.0 {
        return vec![waypoints[0]; n];
    }
    (0..n)
        .map(|i| {
            let mut target = total * i as f64 / (n - 1) as f64;
            for (k, &len) in seg.iter().enumerate() {
                if target <= len || k == seg.len() - 1 {
                    let t = if len == 0.0 { 0.0 } else { (target / len).min(1.0) };
                    let (a, b) = (waypoints[k], waypoints[k + 1]);
                    return [a[0] + (b[0] - a[0]) * t, a[1] + (b[1] - a[1]) * t];
                }
                target -= len;
            }
            unreachable!("segments cover the total length")
        })
        .collect()
}

fn lerp(a: [f64; 2], b: [f64; 2], t: f64) -> [f64; 2] {
    [a[0] + (b[0] - a[0]) * t, a[1] + (b[1] - a[1]) * t]
}

/// Hand position per frame: rest → start, the trajectory, end → rest, with slight tremor.
pub fn clip_path<R: Rng>(
    waypoints: &[[f64; 2]],
    rest: [f64; 2],
    t_in: usize,
    core: usize,
    t_out: usize,
    rng: &mut R,
) -> Vec<[f64; 2]> {
    let first = waypoints[0];
    let last = *waypoints.last().expect("non-empty trajectory");
    let mut path: Vec<[f64; 2]> = (0..t_in).map(|i| lerp(rest, first, i as f64 / t_in as f64)).collect();
    path.extend(resample(waypoints, core));
    path.extend((1..=t_out).map(|i| lerp(last, rest, i as f64 / t_out as f64)));
    let tremor = Normal::new(0.0, 0.003).expect("finite std");
    for p in &mut path {
        p[0] += tremor.sample(rng);
        p[1] += tremor.sample(rng);
    }
    path
}

fn shade(c: [u8; 3], f: f64) -> Rgb<u8> {
    Rgb(c.map(|v| (v as f64 * f).round().clamp(0.0, 255.0) as u8))
}

/// One frame: background gradient, head and torso, then the hand shape at `hand`.
pub fn draw_frame(resolution: u32, style: &SignerStyle, shape: Shape, hand: [f64; 2]) -> RgbImage {
    let res = resolution as f64;
    let head = style.place([0.5, 0.3]);
    let head_r = 0.11 * style.scale;
    let torso = style.place([0.5, 0.55]);
    let torso_half_w = 0.2 * style.scale;
    let hand = style.place_hand(hand);
    let hand_r = 0.075 * style.scale;
    RgbImage::from_fn(resolution, resolution, |x, y| {
        let (u, v) = ((x as f64 + 0.5) / res, (y as f64 + 0.5) / res);
        let (hx, hy) = ((u - hand[0]) / hand_r, (v - hand[1]) / hand_r);
        if shape.covers(hx, hy) {
            return Rgb(style.hand);
        }
        let in_head = dist([u, v], head) <= head_r;
        let in_torso = (u - torso[0]).abs() <= torso_half_w && v >= torso[1];
        if in_head || in_torso {
            return shade(style.body, 1.0 - 0.15 * v);
        }
        shade(style.background, 0.9 + 0.2 * v)
    })
}
