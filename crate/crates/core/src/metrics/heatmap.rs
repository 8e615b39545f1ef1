//! Confusion-matrix heatmap as a PNG: one square cell per class pair,
//! shaded by the row-normalized count.

use std::path::Path;

use image::{Rgb, RgbImage};

use super::ConfusionMatrix;
use crate::error::{Error, Result};

const LOW: [f64; 3] = [247.0, 251.0, 255.0];
const HIGH: [f64; 3] = [8.0, 48.0, 107.0];

fn shade(t: f64) -> Rgb<u8> {
    let t = t.clamp(0.0, 1.0);
    Rgb([0, 1, 2].map(|c| (LOW[c] + (HIGH[c] - LOW[c]) * t).round() as u8))
}

/// Cell size adapts so small matrices stay legible and 85 classes fit ~1000 px.
pub fn heatmap_image(matrix: &ConfusionMatrix) -> RgbImage {
    let c = matrix.num_classes().max(1) as u32;
    let cell = (960 / c).clamp(4, 48);
    let border = 1;
    let side = c * cell + 2 * border;
    let mut img = RgbImage::from_pixel(side, side, Rgb([64, 64, 64]));
    for (i, row) in matrix.counts.iter().enumerate() {
        let support: u64 = row.iter().sum();
        for (j, &v) in row.iter().enumerate() {
            let t = if support == 0 { 0.0 } else { v as f64 / support as f64 };
            let px = shade(t);
            let (x0, y0) = (border + j as u32 * cell, border + i as u32 * cell);
            for y in y0..y0 + cell {
                for x in x0..x0 + cell {
                    img.put_pixel(x, y, px);
                }
            }
        }
    }
    img
}

pub fn render_heatmap(matrix: &ConfusionMatrix, path: &Path) -> Result<()> {
    heatmap_image(matrix)
        .save(path)
        .map_err(|e| Error::io(path, std::io::Error::other(e)))
}
