//! Flat tensor archives keyed by canonical names.
//!
//! Tensors are stored in the safetensors layout. Next to every archive
//! `<name>.safetensors` sits `<name>.json`, a manifest listing each tensor's
//! shape and any embedded configuration, so a checkpoint is self-describing
//! without parsing the binary file.

use std::borrow::Cow;
use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use safetensors::tensor::{Dtype, SafeTensors, View};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{ParamKind, ParamSet};
use crate::scalar::Scalar;

pub const FORMAT: &str = "signflow-tensors/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub kind: ParamKind,
}

/// Sidecar JSON written next to every archive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchiveManifest {
    pub format: String,
    pub dtype: String,
    pub tensors: Vec<TensorEntry>,
    #[serde(default, skip_serializing_if = "serde_json::Value::is_null")]
    pub config: serde_json::Value,
}

pub fn manifest_path(archive: &Path) -> PathBuf {
    archive.with_extension("json")
}

struct Bytes {
    dtype: Dtype,
    shape: Vec<usize>,
    data: Vec<u8>,
}

impl View for &Bytes {
    fn dtype(&self) -> Dtype {
        self.dtype
    }

    fn shape(&self) -> &[usize] {
        &self.shape
    }

    fn data(&self) -> Cow<'_, [u8]> {
        Cow::Borrowed(&self.data)
    }

    fn data_len(&self) -> usize {
        self.data.len()
    }
}

/// Writes `bytes` to `path` through a temporary sibling and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Saves `params` to `path` and its manifest alongside.
pub fn write_archive<S: Scalar>(path: &Path, params: &ParamSet<S>, config: serde_json::Value) -> Result<()> {
    let mut views = Vec::with_capacity(params.len());
    for (name, p) in params.iter() {
        let mut data = Vec::with_capacity(p.value.len() * S::BYTES);
        for &v in p.value.as_standard_layout().iter() {
            v.write_le(&mut data);
        }
        let blob = Bytes {
            dtype: S::DTYPE,
            shape: p.value.shape().to_vec(),
            data,
        };
        views.push((name.to_string(), blob));
    }
    let metadata: HashMap<String, String> = [("format".to_string(), FORMAT.to_string())].into();
    let bytes = safetensors::serialize(views.iter().map(|(n, b)| (n.as_str(), b)), Some(metadata))
        .map_err(|e| Error::Checkpoint {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
    write_atomic(path, &bytes)?;

    let manifest = ArchiveManifest {
        format: FORMAT.into(),
        dtype: format!("{:?}", S::DTYPE),
        tensors: params
            .iter()
            .map(|(name, p)| TensorEntry {
                name: name.to_string(),
                shape: p.value.shape().to_vec(),
                kind: p.kind,
            })
            .collect(),
        config,
    };
    let json = serde_json::to_vec_pretty(&manifest).expect("manifest serializes");
    write_atomic(&manifest_path(path), &json)
}

fn default_kind(name: &str) -> ParamKind {
    if name.ends_with(".mean") || name.ends_with(".var") {
        ParamKind::Buffer
    } else {
        ParamKind::Trainable
    }
}

/// Loads every tensor, converting f32/f64 storage to `S`.
///
/// Order and kinds come from the manifest when present; otherwise tensors
/// are ordered by name and running statistics are recognised by suffix.
pub fn read_archive<S: Scalar>(path: &Path) -> Result<ParamSet<S>> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let bad = |message: String| Error::Checkpoint {
        path: path.to_path_buf(),
        message,
    };
    let st = SafeTensors::deserialize(&bytes).map_err(|e| bad(e.to_string()))?;
    let manifest = read_manifest(path).ok();
    let order: Vec<(String, ParamKind)> = match &manifest {
        Some(m) => m.tensors.iter().map(|t| (t.name.clone(), t.kind)).collect(),
        None => {
            let mut names: Vec<String> = st.names().into_iter().map(|s| s.to_string()).collect();
            names.sort();
            names.into_iter().map(|n| {
                let k = default_kind(&n);
                (n, k)
            }).collect()
        }
    };
    let mut params = ParamSet::new();
    for (name, kind) in order {
        let view = st.tensor(&name).map_err(|e| bad(format!("{name}: {e}")))?;
        let data = view.data();
        let values: Vec<S> = match view.dtype() {
            Dtype::F32 => data.chunks_exact(4).map(|c| S::lit(f32::read_le(c) as f64)).collect(),
            Dtype::F64 => data.chunks_exact(8).map(|c| S::lit(f64::read_le(c))).collect(),
            other => return Err(bad(format!("{name}: unsupported dtype {other:?}"))),
        };
        let arr = ndarray::ArrayD::from_shape_vec(view.shape().to_vec(), values)
            .map_err(|e| bad(format!("{name}: {e}")))?;
        params.insert(name, arr, kind);
    }
    Ok(params)
}

pub fn read_manifest(path: &Path) -> Result<ArchiveManifest> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let mpath = manifest_path(path);
    if !mpath.exists() {
        return Err(Error::MissingFile(mpath));
    }
    let text = fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Checkpoint {
        path: mpath,
        message: e.to_string(),
    })
}
