//! Named parameter groups and their gradients.

use std::collections::BTreeMap;

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// All learned matrices of a model, keyed by parameter-group name.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    groups: BTreeMap<String, Array2<f64>>,
}

impl ParamStore {
    pub fn get(&self, name: &str) -> Option<&Array2<f64>> {
        self.groups.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Array2<f64>> {
        self.groups.get_mut(name)
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Array2<f64>) {
        self.groups.insert(name.into(), value);
    }

    pub fn contains(&self, name: &str) -> bool {
        self.groups.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.groups.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Array2<f64>)> {
        self.groups.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.groups.len()
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }

    /// Copies every group from `other`, overwriting same-named groups.
    pub fn extend_from(&mut self, other: &ParamStore) {
        for (k, v) in &other.groups {
            self.groups.insert(k.clone(), v.clone());
        }
    }

    /// Uniform Glorot initialisation for a `rows × cols` group.
    pub fn init_uniform<R: Rng>(&mut self, name: &str, rows: usize, cols: usize, rng: &mut R) {
        let bound = (6.0 / (rows + cols) as f64).sqrt();
        let m = Array2::from_shape_fn((rows, cols), |_| rng.random_range(-bound..bound));
        self.insert(name, m);
    }

    pub fn init_zeros(&mut self, name: &str, rows: usize, cols: usize) {
        self.insert(name, Array2::zeros((rows, cols)));
    }

    pub fn to_archive(&self) -> ParamArchive {
        ParamArchive {
            format_version: ParamArchive::VERSION,
            groups: self
                .groups
                .iter()
                .map(|(k, v)| {
                    (
                        k.clone(),
                        GroupRecord {
                            shape: [v.nrows(), v.ncols()],
                            data: v.iter().copied().collect(),
                        },
                    )
                })
                .collect(),
        }
    }

    pub fn from_archive(archive: &ParamArchive) -> Result<Self> {
        if archive.format_version != ParamArchive::VERSION {
            return Err(Error::Format(format!(
                "unsupported parameter archive version {}",
                archive.format_version
            )));
        }
        let mut store = ParamStore::default();
        for (name, rec) in &archive.groups {
            let m = Array2::from_shape_vec((rec.shape[0], rec.shape[1]), rec.data.clone())
                .map_err(|e| Error::Format(format!("group `{name}`: {e}")))?;
            store.insert(name.clone(), m);
        }
        Ok(store)
    }
}

/// Serialised parameter groups: one record per group with its shape and
/// row-major data.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ParamArchive {
    pub format_version: u32,
    pub groups: BTreeMap<String, GroupRecord>,
}

impl ParamArchive {
    pub const VERSION: u32 = 1;
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct GroupRecord {
    pub shape: [usize; 2],
    pub data: Vec<f64>,
}

/// Gradients keyed like the [`ParamStore`] they were computed against.
#[derive(Debug, Clone, Default)]
pub struct Gradients {
    groups: BTreeMap<String, Array2<f64>>,
}

impl Gradients {
    pub fn get(&self, name: &str) -> Option<&Array2<f64>> {
        self.groups.get(name)
    }

    pub fn insert(&mut self, name: String, g: Array2<f64>) {
        self.groups.insert(name, g);
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Array2<f64>)> {
        self.groups.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn is_empty(&self) -> bool {
        self.groups.is_empty()
    }

    pub fn global_norm(&self) -> f64 {
        self.groups
            .values()
            .map(|g| g.iter().map(|x| x * x).sum::<f64>())
            .sum::<f64>()
            .sqrt()
    }

    pub fn scale(&mut self, c: f64) {
        for g in self.groups.values_mut() {
            *g *= c;
        }
    }
}
