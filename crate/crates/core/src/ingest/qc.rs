//! Machine-checkable recording quality rules.
//!
//! Expert judgments (correct signing, order against the reference, no
//! pauses, no laughter or talk, no extra signs) cannot be automated and are
//! listed on every report as manual review items.

use serde::{Deserialize, Serialize};

use super::frames::{decode_rgb, list_frames};
use super::{DatasetManifest, SampleRecord};

pub const EMPTY_CLIP: &str = "EMPTY_CLIP";
pub const MISSING_DIR: &str = "MISSING_DIR";
pub const DECODE_ERROR: &str = "DECODE_ERROR";
pub const FRAME_COUNT_MISMATCH: &str = "FRAME_COUNT_MISMATCH";
pub const INCONSISTENT_RESOLUTION: &str = "INCONSISTENT_RESOLUTION";
pub const MIN_RESOLUTION: &str = "MIN_RESOLUTION";
pub const DURATION_OUT_OF_RANGE: &str = "DURATION_OUT_OF_RANGE";
pub const BLANK_FRAME: &str = "BLANK_FRAME";

pub const MANUAL_REVIEW: [&str; 6] = [
    "regular signing speed",
    "signs performed correctly",
    "sign order matches the reference video",
    "no pauses between words",
    "no laughter or talk",
    "no signs beyond the reference sentence",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QcRules {
    /// Smallest accepted frame side in pixels; 0 disables the rule.
    pub min_resolution: u32,
    /// Accepted clip duration in seconds (proxy for regular signing speed).
    pub min_seconds: f64,
    pub max_seconds: f64,
    /// Frame rate assumed when the manifest has none.
    pub default_fps: f64,
    /// A frame whose brightest value is at most this is blank.
    pub black_level: f32,
    /// A frame whose darkest value is at least this is blank.
    pub white_level: f32,
}

impl Default for QcRules {
    fn default() -> Self {
        Self {
            min_resolution: 0,
            min_seconds: 0.5,
            max_seconds: 30.0,
            default_fps: 30.0,
            black_level: 0.02,
            white_level: 0.98,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub rule_id: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QcReport {
    pub sample_id: String,
    pub passed: bool,
    pub violations: Vec<Violation>,
    pub manual_review_required: Vec<String>,
}

/// `q`-quantile with linear interpolation between order statistics.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of an empty sample");
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Duration bounds from corpus percentiles, e.g. `(0.05, 0.95)`.
pub fn duration_bounds(manifest: &DatasetManifest, lo: f64, hi: f64, default_fps: f64) -> Option<(f64, f64)> {
    let mut d: Vec<f64> = manifest
        .samples
        .iter()
        .map(|s| s.frame_count as f64 / s.fps.unwrap_or(default_fps))
        .collect();
    if d.is_empty() {
        return None;
    }
    d.sort_by(f64::total_cmp);
    Some((quantile(&d, lo), quantile(&d, hi)))
}

/// Evaluates every enabled rule on the frames of `record` under `manifest.root`.
pub fn validate_sample(manifest: &DatasetManifest, record: &SampleRecord, rules: &QcRules) -> QcReport {
    let mut violations = Vec::new();
    let mut flag = |rule: &str, message: String| {
        violations.push(Violation {
            rule_id: rule.to_string(),
            message,
        })
    };
    let dir = manifest.frames_path(record);
    match list_frames(&dir) {
        Err(_) => flag(MISSING_DIR, format!("frames directory {} does not exist", dir.display())),
        Ok(paths) if paths.is_empty() => flag(EMPTY_CLIP, format!("{} holds no frame files", dir.display())),
        Ok(paths) => {
            if paths.len() != record.frame_count {
                flag(
                    FRAME_COUNT_MISMATCH,
                    format!("manifest declares {} frames, found {}", record.frame_count, paths.len()),
                );
            }
            let mut dims = None;
            let mut blank = Vec::new();
            for path in &paths {
                let img = match decode_rgb(path) {
                    Ok(img) => img,
                    Err(e) => {
                        flag(DECODE_ERROR, e.to_string());
                        continue;
                    }
                };
                let d = img.dimensions();
                match dims {
                    None => dims = Some(d),
                    Some(first) if first != d => flag(
                        INCONSISTENT_RESOLUTION,
                        format!("{} is {}x{}, first frame is {}x{}", path.display(), d.0, d.1, first.0, first.1),
                    ),
                    _ => {}
                }
                let (lo, hi) = img.as_raw().iter().fold((u8::MAX, 0u8), |(lo, hi), &v| (lo.min(v), hi.max(v)));
                if (hi as f32) <= rules.black_level * 255.0 || (lo as f32) >= rules.white_level * 255.0 {
                    blank.push(path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default());
                }
            }
            if !blank.is_empty() {
                flag(BLANK_FRAME, format!("{} blank frame(s), first {}", blank.len(), blank[0]));
            }
            if let Some((w, h)) = dims {
                if w.min(h) < rules.min_resolution {
                    flag(
                        MIN_RESOLUTION,
                        format!("{w}x{h} is below the {} pixel minimum", rules.min_resolution),
                    );
                }
            }
            let fps = record.fps.unwrap_or(rules.default_fps);
            let seconds = paths.len() as f64 / fps;
            if !(rules.min_seconds..=rules.max_seconds).contains(&seconds) {
                flag(
                    DURATION_OUT_OF_RANGE,
                    format!(
                        "{seconds:.2} s outside [{:.2}, {:.2}] s",
                        rules.min_seconds, rules.max_seconds
                    ),
                );
            }
        }
    }
    QcReport {
        sample_id: record.id.clone(),
        passed: violations.is_empty(),
        violations,
        manual_review_required: MANUAL_REVIEW.iter().map(|s| s.to_string()).collect(),
    }
}
