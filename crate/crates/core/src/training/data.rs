//! In-memory clip sets: temporally sampled frames kept once, augmented and
//! normalized per batch.

use ndarray::{s, Array4, Array5, Axis};

use crate::error::{Error, Result};
use crate::ingest::frames::load_frames;
use crate::ingest::{DatasetManifest, SampleRecord, Split};
use crate::preprocess::{clip_rng, preprocess_sampled, temporal_sample, PreprocessConfig};
use crate::scalar::Scalar;

/// Samples of one split, each stored as `(T, 3, H, W)` in `[0, 1]`.
#[derive(Clone, Debug)]
pub struct ClipSet {
    pub ids: Vec<String>,
    pub labels: Vec<usize>,
    clips: Vec<Array4<f32>>,
}

impl ClipSet {
    pub fn new(ids: Vec<String>, labels: Vec<usize>, clips: Vec<Array4<f32>>) -> Result<Self> {
        if ids.len() != labels.len() || ids.len() != clips.len() {
            return Err(Error::shape("clip set", &[ids.len(), ids.len()], &[labels.len(), clips.len()]));
        }
        Ok(Self { ids, labels, clips })
    }

    /// Loads and temporally samples every record to `frames` frames.
    pub fn from_records(manifest: &DatasetManifest, records: &[&SampleRecord], frames: usize) -> Result<Self> {
        let mut clips = Vec::with_capacity(records.len());
        for r in records {
            let raw = load_frames(&manifest.frames_path(r))?;
            clips.push(temporal_sample(raw.view(), frames)?);
        }
        Self::new(
            records.iter().map(|r| r.id.clone()).collect(),
            records.iter().map(|r| r.class_index).collect(),
            clips,
        )
    }

    /// Loads one split of a manifest with attached splits.
    pub fn load(manifest: &DatasetManifest, split: Split, frames: usize) -> Result<Self> {
        if manifest.splits.is_none() {
            return Err(Error::Config("manifest has no split assignment; run split first".into()));
        }
        let records = manifest.split_samples(split);
        if records.is_empty() {
            return Err(Error::EmptySplit(split.name().into()));
        }
        Self::from_records(manifest, &records, frames)
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn frames(&self) -> usize {
        self.clips.first().map_or(0, |c| c.len_of(Axis(0)))
    }

    /// Per-class sample counts over `classes` classes.
    pub fn class_counts(&self, classes: usize) -> Vec<usize> {
        let mut counts = vec![0; classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    /// Preprocessed `(B, T, 3, S, S)` batch. With `augment = Some((seed, epoch))`
    /// each clip draws its augmentation from its own seeded stream.
    pub fn batch<S: Scalar>(
        &self,
        indices: &[usize],
        cfg: &PreprocessConfig,
        augment: Option<(u64, usize)>,
    ) -> Result<Array5<S>> {
        let (t, size) = (self.frames(), cfg.target_size);
        let mut out = Array5::<S>::zeros((indices.len(), t, 3, size, size));
        for (slot, &i) in indices.iter().enumerate() {
            let clip = match augment {
                Some((seed, epoch)) => {
                    let mut rng = clip_rng(seed, epoch, &self.ids[i]);
                    preprocess_sampled(self.clips[i].view(), cfg, Some(&mut rng))?
                }
                None => preprocess_sampled::<rand_chacha::ChaCha8Rng>(self.clips[i].view(), cfg, None)?,
            };
            out.slice_mut(s![slot, .., .., .., ..]).zip_mut_with(&clip, |o, &v| *o = S::lit(v as f64));
        }
        Ok(out)
    }
}
