//! Procedural "sign" videos: a hand-proxy shape tracing a per-class
//! trajectory in front of a static signer silhouette.
//!
//! Each signer has its own placement, scale, speed and palette. Every clip
//! starts and ends with a transition segment between a rest pose and the
//! trajectory, so short frame budgets spend part of their samples on
//! motion that carries no class information.

pub mod oracle;
pub mod render;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::ingest::frames::{frame_name, write_frame};
use crate::ingest::{hex_digest, write_manifest, SampleRecord};

pub use oracle::{nearest_centroid_accuracy, separability_oracle, trajectory_distance, SeparabilityReport};
pub use render::{Shape, SignerStyle};

pub const SPEC_FILE: &str = "synth_spec.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub num_classes: usize,
    pub num_signers: usize,
    pub repetitions: usize,
    /// Inclusive frame-count range of a clip.
    pub frames_min: usize,
    pub frames_max: usize,
    pub resolution: u32,
    /// Relative spread of signer placement, scale and speed.
    pub signer_style_jitter: f64,
    /// Inclusive frame-count range of each transition segment.
    pub transition_min: usize,
    pub transition_max: usize,
    pub fps: f64,
    /// Minimum trajectory distance between any two classes (mirror images included).
    pub separability_floor: f64,
    /// Drop up to `repetitions` clips per class for a mild count imbalance.
    pub imbalance: bool,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            num_classes: 5,
            num_signers: 6,
            repetitions: 3,
            frames_min: 60,
            frames_max: 180,
            resolution: 64,
            signer_style_jitter: 0.3,
            transition_min: 4,
            transition_max: 12,
            fps: 30.0,
            separability_floor: 0.3,
            imbalance: false,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(format!("synth spec: {m}")));
        if self.num_classes < 2 {
            return fail("num_classes must be at least 2");
        }
        if self.num_signers == 0 || self.repetitions == 0 {
            return fail("num_signers and repetitions must be positive");
        }
        if self.frames_min == 0 || self.frames_min > self.frames_max {
            return fail("frames range must be positive and ordered");
        }
        if self.transition_min > self.transition_max || 2 * self.transition_max >= self.frames_min {
            return fail("transitions must be ordered and leave frames for the sign itself");
        }
        if self.resolution < 16 {
            return fail("resolution must be at least 16 pixels");
        }
        if !(0.0..0.5).contains(&self.signer_style_jitter) || self.fps <= 0.0 {
            return fail("signer_style_jitter must lie in [0, 0.5) and fps be positive");
        }
        Ok(())
    }
}

/// Ground truth for one class.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MotionSignature {
    pub class: usize,
    /// Polyline in normalized `[0, 1]^2` image coordinates `(x, y)`.
    pub waypoints: Vec<[f64; 2]>,
    pub shape: Shape,
    /// Frames the core trajectory takes at unit signer speed.
    pub base_frames: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SynthManifestInfo {
    pub spec: SynthSpec,
    pub signatures: Vec<MotionSignature>,
    pub signers: Vec<SignerStyle>,
    /// Hex sha256 of each clip's RGB bytes, frame after frame.
    pub checksums: BTreeMap<String, String>,
    pub separability: SeparabilityReport,
    /// Leave-one-out nearest-centroid accuracy on frame-difference trajectories.
    pub centroid_accuracy: f64,
}

fn sub_rng(seed: u64, parts: &[u64]) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    for p in parts {
        h.update(p.to_le_bytes());
    }
    ChaCha8Rng::from_seed(h.finalize().into())
}

pub fn class_name(c: usize) -> String {
    format!("sign_{c:02}")
}

pub fn sample_id(class: usize, signer: usize, rep: usize) -> String {
    format!("c{class:02}_s{signer:02}_r{}", rep + 1)
}

/// Draws class trajectories, rejecting candidates closer than the floor to
/// an earlier class or its mirror image.
pub fn make_signatures(spec: &SynthSpec) -> Result<Vec<MotionSignature>> {
    let mut out: Vec<MotionSignature> = Vec::new();
    for class in 0..spec.num_classes {
        let mut rng = sub_rng(spec.seed, &[1, class as u64]);
        let mut accepted = None;
        for _ in 0..5000 {
            let n = rng.random_range(3..=5);
            let waypoints: Vec<[f64; 2]> = (0..n)
                .map(|_| [rng.random_range(0.2..0.8), rng.random_range(0.15..0.7)])
                .collect();
            let len: f64 = waypoints.windows(2).map(|w| dist(w[0], w[1])).sum();
            if len < 0.5 {
                continue;
            }
            let far = out.iter().all(|o| {
                oracle::mirror_aware_distance(&o.waypoints, &waypoints) >= spec.separability_floor
            });
            if far {
                accepted = Some(waypoints);
                break;
            }
        }
        let waypoints = accepted.ok_or_else(|| {
            Error::Config(format!(
                "could not place class {class} at separability floor {}; lower it or use fewer classes",
                spec.separability_floor
            ))
        })?;
        let span = spec.frames_max - spec.frames_min;
        let base_frames = spec.frames_min + rng.random_range(0..=span / 2);
        out.push(MotionSignature {
            class,
            waypoints,
            shape: Shape::ALL[class % Shape::ALL.len()],
            base_frames,
        });
    }
    Ok(out)
}

pub(crate) fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

pub fn make_signers(spec: &SynthSpec) -> Vec<SignerStyle> {
    (0..spec.num_signers)
        .map(|s| SignerStyle::draw(&mut sub_rng(spec.seed, &[2, s as u64]), spec.signer_style_jitter))
        .collect()
}

/// `(class, signer, repetition)` triples to render, honoring the imbalance knob.
pub fn sample_plan(spec: &SynthSpec) -> Vec<(usize, usize, usize)> {
    let mut plan = Vec::new();
    for class in 0..spec.num_classes {
        let mut cells: Vec<(usize, usize)> = (0..spec.num_signers)
            .flat_map(|s| (0..spec.repetitions).map(move |r| (s, r)))
            .collect();
        if spec.imbalance {
            let mut rng = sub_rng(spec.seed, &[3, class as u64]);
            let drop = match class {
                0 => 0,
                1 => spec.repetitions,
                _ => rng.random_range(0..=spec.repetitions),
            };
            for _ in 0..drop.min(cells.len().saturating_sub(1)) {
                let i = rng.random_range(0..cells.len());
                cells.remove(i);
            }
        }
        plan.extend(cells.into_iter().map(|(s, r)| (class, s, r)));
    }
    plan
}

/// The class trajectory as this signer habitually performs it: every
/// waypoint moves by a fixed signer-and-class offset.
pub fn signer_waypoints(spec: &SynthSpec, sig: &MotionSignature, signer: usize) -> Vec<[f64; 2]> {
    let mut rng = sub_rng(spec.seed, &[5, sig.class as u64, signer as u64]);
    let reach = 0.4 * spec.signer_style_jitter;
    sig.waypoints
        .iter()
        .map(|p| {
            let mut d = || if reach == 0.0 { 0.0 } else { rng.random_range(-reach..reach) };
            [p[0] + d(), p[1] + d()]
        })
        .collect()
}

/// Frames of one clip as RGB images, plus the per-frame hand positions.
pub fn render_clip(
    spec: &SynthSpec,
    sig: &MotionSignature,
    style: &SignerStyle,
    signer: usize,
    rep: usize,
) -> (Vec<image::RgbImage>, Vec<[f64; 2]>) {
    let mut rng = sub_rng(spec.seed, &[4, sig.class as u64, signer as u64, rep as u64]);
    let rep_jitter = 1.0 + rng.random_range(-0.1..0.1);
    let t_in = rng.random_range(spec.transition_min..=spec.transition_max);
    let t_out = rng.random_range(spec.transition_min..=spec.transition_max);
    let core = (sig.base_frames as f64 / style.speed * rep_jitter).round() as usize;
    let total = (core + t_in + t_out).clamp(spec.frames_min, spec.frames_max);
    let core = total - t_in - t_out;
    let waypoints = signer_waypoints(spec, sig, signer);
    let path = render::clip_path(&waypoints, style.rest, t_in, core, t_out, &mut rng);
    let frames = path
        .iter()
        .map(|&p| render::draw_frame(spec.resolution, style, sig.shape.shifted(style.shape_shift), p))
        .collect();
    (frames, path)
}

/// Writes the dataset into `out_dir` and returns its manifest path and ground truth.
///
/// Refuses to touch an existing `manifest.csv` unless `force` is set.
pub fn generate_dataset(spec: &SynthSpec, out_dir: &Path, force: bool) -> Result<(PathBuf, SynthManifestInfo)> {
    spec.validate()?;
    let manifest_path = out_dir.join("manifest.csv");
    if manifest_path.exists() && !force {
        return Err(Error::OutputExists(manifest_path));
    }
    let frames_root = out_dir.join("frames");
    if force && frames_root.exists() {
        fs::remove_dir_all(&frames_root).map_err(|e| Error::io(&frames_root, e))?;
    }
    let signatures = make_signatures(spec)?;
    let signers = make_signers(spec);
    let classes: Vec<String> = (0..spec.num_classes).map(class_name).collect();
    let mut samples = Vec::new();
    let mut checksums = BTreeMap::new();
    let mut features = Vec::new();
    for (class, signer, rep) in sample_plan(spec) {
        let id = sample_id(class, signer, rep);
        let (frames, _) = render_clip(spec, &signatures[class], &signers[signer], signer, rep);
        let rel = PathBuf::from("frames").join(&id);
        let dir = out_dir.join(&rel);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let mut bytes = Vec::with_capacity(frames.len() * frames[0].as_raw().len());
        for (i, f) in frames.iter().enumerate() {
            write_frame(&dir.join(frame_name(i + 1)), f)?;
            bytes.extend_from_slice(f.as_raw());
        }
        checksums.insert(id.clone(), hex_digest(&bytes));
        features.push((class, oracle::motion_feature(&frames)));
        samples.push(SampleRecord {
            id,
            frames_dir: rel,
            label: classes[class].clone(),
            class_index: class,
            signer_id: format!("signer_{signer:02}"),
            repetition: rep as u32 + 1,
            frame_count: frames.len(),
            fps: Some(spec.fps),
        });
    }
    let written = write_manifest(out_dir, &classes, &samples)?;
    let info = SynthManifestInfo {
        spec: spec.clone(),
        separability: separability_oracle(&signatures),
        centroid_accuracy: nearest_centroid_accuracy(&features),
        signatures,
        signers,
        checksums,
    };
    let spec_path = out_dir.join(SPEC_FILE);
    let json = serde_json::to_string_pretty(&info).expect("synth info serializes");
    fs::write(&spec_path, json).map_err(|e| Error::io(&spec_path, e))?;
    Ok((written, info))
}

/// Reads the ground truth written next to a generated manifest.
pub fn load_info(dir: &Path) -> Result<SynthManifestInfo> {
    let path = dir.join(SPEC_FILE);
    if !path.is_file() {
        return Err(Error::MissingFile(path));
    }
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}
