//! Named tensor storage for learnable parameters and their gradients.

use indexmap::IndexMap;
use ndarray::{
    ArrayD, ArrayView1, ArrayView2, ArrayView4, ArrayViewMut1, Dimension, IntoDimension, Ix1, Ix2,
    Ix4,
};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Whether a tensor is updated by the optimizer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamKind {
    Trainable,
    /// Running statistics and other state that is saved but never receives gradients.
    Buffer,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param<S> {
    pub value: ArrayD<S>,
    pub kind: ParamKind,
}

/// Ordered map from canonical tensor name to tensor.
///
/// Insertion order is the canonical order used by checkpoints and the
/// optimizer. The same type doubles as a gradient container, where every
/// entry is `Trainable`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamSet<S> {
    entries: IndexMap<String, Param<S>>,
}

impl<S: Scalar> ParamSet<S> {
    pub fn new() -> Self {
        Self {
            entries: IndexMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, value: ArrayD<S>, kind: ParamKind) {
        self.entries.insert(name.into(), Param { value, kind });
    }

    pub fn insert_trainable<D: Dimension>(&mut self, name: impl Into<String>, value: ndarray::Array<S, D>) {
        self.insert(name, value.into_dyn(), ParamKind::Trainable);
    }

    pub fn insert_buffer<D: Dimension>(&mut self, name: impl Into<String>, value: ndarray::Array<S, D>) {
        self.insert(name, value.into_dyn(), ParamKind::Buffer);
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Param<S>)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Param<S>)> {
        self.entries.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn param(&self, name: &str) -> Result<&Param<S>> {
        self.entries
            .get(name)
            .ok_or_else(|| Error::MissingTensor(name.to_string()))
    }

    pub fn get(&self, name: &str) -> Result<&ArrayD<S>> {
        self.param(name).map(|p| &p.value)
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut ArrayD<S>> {
        self.entries
            .get_mut(name)
            .map(|p| &mut p.value)
            .ok_or_else(|| Error::MissingTensor(name.to_string()))
    }

    pub fn remove(&mut self, name: &str) -> Option<Param<S>> {
        self.entries.shift_remove(name)
    }

    fn typed<D: Dimension>(&self, name: &str) -> Result<ndarray::ArrayView<'_, S, D>> {
        let value = self.get(name)?;
        value
            .view()
            .into_dimensionality::<D>()
            .map_err(|_| Error::TensorShape {
                name: name.to_string(),
                expected: vec![0; D::NDIM.unwrap_or(0)],
                found: value.shape().to_vec(),
            })
    }

    pub fn vec(&self, name: &str) -> Result<ArrayView1<'_, S>> {
        self.typed::<Ix1>(name)
    }

    pub fn mat(&self, name: &str) -> Result<ArrayView2<'_, S>> {
        self.typed::<Ix2>(name)
    }

    pub fn kernel(&self, name: &str) -> Result<ArrayView4<'_, S>> {
        self.typed::<Ix4>(name)
    }

    pub fn vec_mut(&mut self, name: &str) -> Result<ArrayViewMut1<'_, S>> {
        let value = self.get_mut(name)?;
        let shape = value.shape().to_vec();
        value
            .view_mut()
            .into_dimensionality::<Ix1>()
            .map_err(|_| Error::TensorShape {
                name: name.to_string(),
                expected: vec![0],
                found: shape,
            })
    }

    /// Adds `delta` into the named gradient, creating it on first use.
    pub fn accumulate<D: Dimension>(&mut self, name: &str, delta: ndarray::Array<S, D>) {
        match self.entries.get_mut(name) {
            Some(p) => {
                let mut view = p.value.view_mut();
                view += &delta.into_dyn();
            }
            None => self.insert(name, delta.into_dyn(), ParamKind::Trainable),
        }
    }

    /// Asserts `name` holds exactly `shape`.
    pub fn expect_shape(&self, name: &str, shape: impl IntoDimension) -> Result<()> {
        let shape = shape.into_dimension();
        let expected = shape.slice();
        let found = self.get(name)?.shape();
        if found != expected {
            return Err(Error::TensorShape {
                name: name.to_string(),
                expected: expected.to_vec(),
                found: found.to_vec(),
            });
        }
        Ok(())
    }

    /// Number of scalar elements over trainable tensors.
    pub fn num_trainable(&self) -> usize {
        self.entries
            .values()
            .filter(|p| p.kind == ParamKind::Trainable)
            .map(|p| p.value.len())
            .sum()
    }

    /// Copy of the subset whose names start with `prefix`.
    pub fn subset(&self, prefix: &str) -> ParamSet<S> {
        let mut out = ParamSet::new();
        for (k, p) in &self.entries {
            if k.starts_with(prefix) {
                out.entries.insert(k.clone(), p.clone());
            }
        }
        out
    }

    /// Inserts or replaces every entry of `other`.
    pub fn merge(&mut self, other: ParamSet<S>) {
        for (k, p) in other.entries {
            self.entries.insert(k, p);
        }
    }

    /// Zero in every slot whose name is a trainable entry here.
    pub fn zeros_like_trainable(&self) -> ParamSet<S> {
        let mut out = ParamSet::new();
        for (k, p) in &self.entries {
            if p.kind == ParamKind::Trainable {
                out.insert(k.clone(), ArrayD::zeros(p.value.raw_dim()), ParamKind::Trainable);
            }
        }
        out
    }

    /// Element type conversion, preserving names, kinds and order.
    pub fn cast<T: Scalar>(&self) -> ParamSet<T> {
        let mut out = ParamSet::new();
        for (k, p) in &self.entries {
            out.insert(k.clone(), p.value.mapv(|v| T::lit(v.as_f64())), p.kind);
        }
        out
    }
}
