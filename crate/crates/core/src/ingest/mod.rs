//! Dataset manifests, quality checks, frame loading and train/val/test splits.
//!
//! A manifest is `manifest.csv` with header
//! `id,frames_dir,label,signer_id,repetition,frame_count,fps` next to a
//! `classes.txt` whose line order defines class indices. `frames_dir` is
//! resolved against the manifest's directory.

pub mod frames;
pub mod qc;
pub mod split;

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub use frames::{list_frames, load_frames, load_frames_u8, run_decoder};
pub use qc::{validate_sample, QcReport, QcRules, Violation};
pub use split::{split_dataset, SplitMode};

pub const MANIFEST_HEADER: [&str; 7] = ["id", "frames_dir", "label", "signer_id", "repetition", "frame_count", "fps"];
pub const CLASSES_FILE: &str = "classes.txt";
pub const SPLITS_FILE: &str = "splits.csv";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub id: String,
    /// Directory as written in the manifest, relative to the manifest root.
    pub frames_dir: PathBuf,
    pub label: String,
    pub class_index: usize,
    pub signer_id: String,
    pub repetition: u32,
    pub frame_count: usize,
    pub fps: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|v| v.name() == s)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    /// Directory that `frames_dir` entries are relative to.
    pub root: PathBuf,
    pub classes: Vec<String>,
    pub samples: Vec<SampleRecord>,
    pub splits: Option<IndexMap<String, Split>>,
}

impl DatasetManifest {
    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn frames_path(&self, record: &SampleRecord) -> PathBuf {
        self.root.join(&record.frames_dir)
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.classes.len()];
        for s in &self.samples {
            counts[s.class_index] += 1;
        }
        counts
    }

    /// Samples assigned to `split`, in manifest order.
    pub fn split_samples(&self, split: Split) -> Vec<&SampleRecord> {
        let Some(map) = &self.splits else {
            return Vec::new();
        };
        self.samples.iter().filter(|s| map.get(&s.id) == Some(&split)).collect()
    }

    /// Reads `splits.csv`; every manifest sample must be assigned exactly once.
    pub fn attach_splits(&mut self, path: &Path) -> Result<()> {
        let map = read_splits(path)?;
        let known: HashSet<&str> = self.samples.iter().map(|s| s.id.as_str()).collect();
        for (k, id) in map.keys().enumerate() {
            if !known.contains(id.as_str()) {
                return Err(Error::MalformedRow {
                    path: path.to_path_buf(),
                    line: k as u64 + 2,
                    message: format!("sample {id:?} is not in the manifest"),
                });
            }
        }
        if let Some(missing) = self.samples.iter().find(|s| !map.contains_key(&s.id)) {
            return Err(Error::Config(format!("sample {:?} has no split assignment in {}", missing.id, path.display())));
        }
        self.splits = Some(map);
        Ok(())
    }
}

fn malformed(path: &Path, line: u64, message: impl Into<String>) -> Error {
    Error::MalformedRow {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

pub fn read_classes(path: &Path) -> Result<Vec<String>> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut seen = HashSet::new();
    let mut classes = Vec::new();
    for line in text.lines() {
        let name = line.trim();
        if name.is_empty() {
            continue;
        }
        if !seen.insert(name.to_string()) {
            return Err(Error::DuplicateClass(name.to_string()));
        }
        classes.push(name.to_string());
    }
    Ok(classes)
}

/// Loads a manifest and its sibling class list, checking every invariant.
pub fn load_manifest(path: &Path) -> Result<DatasetManifest> {
    if !path.is_file() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let classes = read_classes(&root.join(CLASSES_FILE))?;
    let index: IndexMap<&str, usize> = classes.iter().enumerate().map(|(i, c)| (c.as_str(), i)).collect();

    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .flexible(true)
        .from_path(path)
        .map_err(|e| malformed(path, 1, e.to_string()))?;
    let header = reader.headers().map_err(|e| malformed(path, 1, e.to_string()))?.clone();
    if header.iter().collect::<Vec<_>>() != MANIFEST_HEADER {
        return Err(malformed(path, 1, format!("header must be {}", MANIFEST_HEADER.join(","))));
    }

    let mut samples = Vec::new();
    let mut ids = HashSet::new();
    for row in reader.records() {
        let row = row.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            malformed(path, line, e.to_string())
        })?;
        let line = row.position().map_or(0, |p| p.line());
        if row.len() != MANIFEST_HEADER.len() {
            return Err(malformed(path, line, format!("expected 7 fields, found {}", row.len())));
        }
        let field = |i: usize| row.get(i).unwrap_or("");
        let id = field(0).to_string();
        if id.is_empty() {
            return Err(malformed(path, line, "empty sample id"));
        }
        let label = field(2).to_string();
        let Some(&class_index) = index.get(label.as_str()) else {
            return Err(Error::UnknownClassLabel { line, label });
        };
        let repetition: u32 = field(4)
            .parse()
            .ok()
            .filter(|&r| r >= 1)
            .ok_or_else(|| malformed(path, line, format!("repetition {:?} is not an integer >= 1", field(4))))?;
        let frame_count: usize = field(5)
            .parse()
            .ok()
            .filter(|&n| n >= 1)
            .ok_or_else(|| malformed(path, line, format!("frame_count {:?} is not an integer >= 1", field(5))))?;
        let fps = match field(6) {
            "" => None,
            s => Some(
                s.parse::<f64>()
                    .ok()
                    .filter(|f| f.is_finite() && *f > 0.0)
                    .ok_or_else(|| malformed(path, line, format!("fps {s:?} is not a positive number")))?,
            ),
        };
        if !ids.insert(id.clone()) {
            return Err(Error::DuplicateSampleId(id));
        }
        samples.push(SampleRecord {
            id,
            frames_dir: PathBuf::from(field(1)),
            label,
            class_index,
            signer_id: field(3).to_string(),
            repetition,
            frame_count,
            fps,
        });
    }
    Ok(DatasetManifest {
        root,
        classes,
        samples,
        splits: None,
    })
}

/// Writes `manifest.csv` and `classes.txt` into `dir`.
pub fn write_manifest(dir: &Path, classes: &[String], samples: &[SampleRecord]) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let classes_path = dir.join(CLASSES_FILE);
    let mut text = classes.join("\n");
    text.push('\n');
    fs::write(&classes_path, text).map_err(|e| Error::io(&classes_path, e))?;
    let path = dir.join("manifest.csv");
    let mut w = csv::Writer::from_path(&path).map_err(|e| Error::io(&path, e.into()))?;
    let io = |e: csv::Error| Error::io(&path, e.into());
    w.write_record(MANIFEST_HEADER).map_err(io)?;
    for s in samples {
        w.write_record([
            s.id.clone(),
            s.frames_dir.to_string_lossy().into_owned(),
            s.label.clone(),
            s.signer_id.clone(),
            s.repetition.to_string(),
            s.frame_count.to_string(),
            s.fps.map(|f| f.to_string()).unwrap_or_default(),
        ])
        .map_err(io)?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

pub fn read_splits(path: &Path) -> Result<IndexMap<String, Split>> {
    if !path.is_file() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| malformed(path, 1, e.to_string()))?;
    let header = reader.headers().map_err(|e| malformed(path, 1, e.to_string()))?.clone();
    if header.iter().collect::<Vec<_>>() != ["id", "split"] {
        return Err(malformed(path, 1, "header must be id,split"));
    }
    let mut map = IndexMap::new();
    for row in reader.records() {
        let row = row.map_err(|e| malformed(path, e.position().map_or(0, |p| p.line()), e.to_string()))?;
        let line = row.position().map_or(0, |p| p.line());
        let id = row.get(0).unwrap_or("").to_string();
        let split = row
            .get(1)
            .and_then(Split::parse)
            .ok_or_else(|| malformed(path, line, format!("unknown split {:?}", row.get(1).unwrap_or(""))))?;
        if map.insert(id.clone(), split).is_some() {
            return Err(Error::DuplicateSampleId(id));
        }
    }
    Ok(map)
}

/// Serialized `splits.csv` content in manifest order.
pub fn splits_csv(manifest: &DatasetManifest) -> Result<String> {
    let map = manifest
        .splits
        .as_ref()
        .ok_or_else(|| Error::Config("manifest has no split assignment".into()))?;
    let mut out = String::from("id,split\n");
    for s in &manifest.samples {
        if let Some(split) = map.get(&s.id) {
            out.push_str(&format!("{},{}\n", s.id, split.name()));
        }
    }
    Ok(out)
}

pub fn write_splits(path: &Path, manifest: &DatasetManifest) -> Result<()> {
    let text = splits_csv(manifest)?;
    crate::checkpoint::write_atomic(path, text.as_bytes())
}

/// Hex sha256 of the serialized split assignment.
pub fn split_hash(manifest: &DatasetManifest) -> Result<String> {
    let text = splits_csv(manifest)?;
    Ok(hex_digest(text.as_bytes()))
}

pub fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}
