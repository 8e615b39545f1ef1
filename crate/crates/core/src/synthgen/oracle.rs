//! Ground-truth checks on generated data: trajectory separability and a
//! nearest-centroid classifier on frame-difference motion.

use image::RgbImage;
use serde::{Deserialize, Serialize};

use super::render::resample;
use super::{dist, MotionSignature};
use crate::preprocess::sample_indices;

const RESAMPLE_POINTS: usize = 101;
const MOTION_STEPS: usize = 16;

/// Largest pointwise distance between two trajectories resampled by arc length.
pub fn trajectory_distance(a: &[[f64; 2]], b: &[[f64; 2]]) -> f64 {
    let (ra, rb) = (resample(a, RESAMPLE_POINTS), resample(b, RESAMPLE_POINTS));
    ra.iter().zip(&rb).map(|(&p, &q)| dist(p, q)).fold(0.0, f64::max)
}

fn mirrored(w: &[[f64; 2]]) -> Vec<[f64; 2]> {
    w.iter().map(|p| [1.0 - p[0], p[1]]).collect()
}

/// Distance that treats a horizontal mirror image as the same trajectory,
/// since training flips clips left to right.
pub fn mirror_aware_distance(a: &[[f64; 2]], b: &[[f64; 2]]) -> f64 {
    trajectory_distance(a, b).min(trajectory_distance(a, &mirrored(b)))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairDistance {
    pub a: usize,
    pub b: usize,
    pub distance: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeparabilityReport {
    pub pairs: Vec<PairDistance>,
    /// Smallest pairwise distance; infinite with fewer than two classes.
    pub margin: f64,
}

pub fn separability_oracle(signatures: &[MotionSignature]) -> SeparabilityReport {
    let mut pairs = Vec::new();
    for (i, a) in signatures.iter().enumerate() {
        for b in &signatures[i + 1..] {
            pairs.push(PairDistance {
                a: a.class,
                b: b.class,
                distance: mirror_aware_distance(&a.waypoints, &b.waypoints),
            });
        }
    }
    let margin = pairs.iter().map(|p| p.distance).fold(f64::INFINITY, f64::min);
    SeparabilityReport { pairs, margin }
}

/// Centroids of the absolute difference between consecutive frames on an
/// even temporal grid, as `[x0, y0, x1, y1, ...]` in normalized coordinates.
pub fn motion_feature(frames: &[RgbImage]) -> Vec<f64> {
    let idx = sample_indices(frames.len(), MOTION_STEPS + 1);
    let mut out = Vec::with_capacity(2 * MOTION_STEPS);
    for w in idx.windows(2) {
        let (a, b) = (&frames[w[0]], &frames[w[1]]);
        let (width, height) = a.dimensions();
        let (mut mass, mut mx, mut my) = (0.0, 0.0, 0.0);
        for (x, y, pa) in a.enumerate_pixels() {
            let pb = b.get_pixel(x, y);
            let d: f64 = (0..3).map(|c| (pa[c] as f64 - pb[c] as f64).abs()).sum();
            mass += d;
            mx += d * (x as f64 + 0.5) / width as f64;
            my += d * (y as f64 + 0.5) / height as f64;
        }
        if mass > 0.0 {
            out.extend([mx / mass, my / mass]);
        } else {
            out.extend([0.5, 0.5]);
        }
    }
    out
}

/// Leave-one-out nearest-centroid accuracy; 0 for an empty input.
pub fn nearest_centroid_accuracy(features: &[(usize, Vec<f64>)]) -> f64 {
    if features.is_empty() {
        return 0.0;
    }
    let classes = features.iter().map(|f| f.0).max().unwrap_or(0) + 1;
    let dim = features[0].1.len();
    let mut sums = vec![vec![0.0; dim]; classes];
    let mut counts = vec![0usize; classes];
    for (c, f) in features {
        counts[*c] += 1;
        for (s, v) in sums[*c].iter_mut().zip(f) {
            *s += v;
        }
    }
    let mut correct = 0;
    for (c, f) in features {
        let mut best = (f64::INFINITY, usize::MAX);
        for k in 0..classes {
            let n = counts[k] - usize::from(k == *c);
            if n == 0 {
                continue;
            }
            let d: f64 = (0..dim)
                .map(|i| {
                    let own = if k == *c { f[i] } else { 0.0 };
                    let centroid = (sums[k][i] - own) / n as f64;
                    (f[i] - centroid).powi(2)
                })
                .sum();
            if d < best.0 {
                best = (d, k);
            }
        }
        if best.1 == *c {
            correct += 1;
        }
    }
    correct as f64 / features.len() as f64
}
