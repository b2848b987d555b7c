//! Named parameter collections and the algebra used by every fine-tuning
//! strategy: interpolation toward an anchor, squared distances, and a
//! portable on-disk checkpoint format.
//!
//! A [`ParameterSet`] is immutable once built. Operations that change
//! values return a new set, so sets can be shared freely between threads.

mod archive;
mod checkpoint;

use std::collections::BTreeMap;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub use archive::{decode_archive, encode_archive, read_archive, write_archive, ARCHIVE_VERSION};
pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointMeta, META_VERSION};

/// A dense float32 array with an explicit shape. A scalar has shape `[]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::InvalidParams(format!(
                "shape {shape:?} needs {expected} values, got {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn scalar(value: f32) -> Self {
        Self {
            shape: Vec::new(),
            data: vec![value],
        }
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self {
            shape,
            data: vec![0.0; n],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }
}

/// Ordered, name-keyed collection of finite float32 arrays.
///
/// Names are kept in lexicographic order, which fixes the byte layout used
/// for digests and archives.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParameterSet {
    entries: BTreeMap<String, Tensor>,
}

impl ParameterSet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builds a set from `(name, tensor)` pairs, rejecting empty or repeated
    /// names and non-finite values.
    pub fn from_entries<I, S>(entries: I) -> Result<Self>
    where
        I: IntoIterator<Item = (S, Tensor)>,
        S: Into<String>,
    {
        let mut set = Self::new();
        for (name, tensor) in entries {
            set = set.with(name, tensor)?;
        }
        Ok(set)
    }

    /// Returns a copy of `self` with one more entry.
    pub fn with(mut self, name: impl Into<String>, tensor: Tensor) -> Result<Self> {
        let name = name.into();
        if name.is_empty() {
            return Err(Error::InvalidParams("parameter names must be nonempty".into()));
        }
        if let Some(pos) = tensor.data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Validity(format!(
                "parameter `{name}` has non-finite value at index {pos}"
            )));
        }
        if self.entries.contains_key(&name) {
            return Err(Error::InvalidParams(format!("duplicate parameter name `{name}`")));
        }
        self.entries.insert(name, tensor);
        Ok(self)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.entries.get(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total number of scalar elements across all arrays.
    pub fn numel(&self) -> usize {
        self.entries.values().map(Tensor::len).sum()
    }

    /// Keeps only the entries whose name satisfies `keep`.
    pub fn filtered(&self, keep: impl Fn(&str) -> bool) -> ParameterSet {
        ParameterSet {
            entries: self
                .entries
                .iter()
                .filter(|(k, _)| keep(k))
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect(),
        }
    }

    /// Checks that `other` has exactly the same names and per-name shapes.
    /// The error names the first offending parameter in name order.
    pub fn check_aligned(&self, other: &ParameterSet) -> Result<()> {
        let mut names: Vec<&String> = self.entries.keys().chain(other.entries.keys()).collect();
        names.sort();
        names.dedup();
        for name in names {
            match (self.entries.get(name), other.entries.get(name)) {
                (Some(a), Some(b)) if a.shape == b.shape => {}
                (Some(a), Some(b)) => {
                    return Err(Error::Alignment {
                        name: name.clone(),
                        reason: format!("shape {:?} vs {:?}", a.shape, b.shape),
                    })
                }
                (Some(_), None) => {
                    return Err(Error::Alignment {
                        name: name.clone(),
                        reason: "missing from second set".into(),
                    })
                }
                (None, _) => {
                    return Err(Error::Alignment {
                        name: name.clone(),
                        reason: "missing from first set".into(),
                    })
                }
            }
        }
        Ok(())
    }

    pub fn is_aligned(&self, other: &ParameterSet) -> bool {
        self.check_aligned(other).is_ok()
    }

    /// Hex SHA-256 of the archive encoding.
    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(encode_archive(self)))
    }
}

/// Elementwise `w * anchor + (1 - w) * moving`.
///
/// The endpoints are exact: `w == 1` returns `anchor` and `w == 0` returns
/// `moving` bit for bit. Interior weights are evaluated in f64 and rounded
/// once to f32.
pub fn interpolate(anchor: &ParameterSet, moving: &ParameterSet, w: f64) -> Result<ParameterSet> {
    if !(0.0..=1.0).contains(&w) {
        return Err(Error::Range(format!("interpolation weight {w} is outside [0, 1]")));
    }
    anchor.check_aligned(moving)?;
    if w == 1.0 {
        return Ok(anchor.clone());
    }
    if w == 0.0 {
        return Ok(moving.clone());
    }
    let entries = anchor
        .entries
        .iter()
        .map(|(name, a)| {
            let b = &moving.entries[name];
            let data = a
                .data
                .iter()
                .zip(&b.data)
                .map(|(&x, &y)| (w * x as f64 + (1.0 - w) * y as f64) as f32)
                .collect();
            (
                name.clone(),
                Tensor {
                    shape: a.shape.clone(),
                    data,
                },
            )
        })
        .collect();
    Ok(ParameterSet { entries })
}

/// Sum over all elements of the squared difference, accumulated in f64.
pub fn squared_distance(a: &ParameterSet, b: &ParameterSet) -> Result<f64> {
    a.check_aligned(b)?;
    Ok(a.entries
        .iter()
        .map(|(name, x)| {
            x.data
                .iter()
                .zip(&b.entries[name].data)
                .map(|(&p, &q)| {
                    let d = p as f64 - q as f64;
                    d * d
                })
                .sum::<f64>()
        })
        .sum())
}
