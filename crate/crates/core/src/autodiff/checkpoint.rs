use serde::{Deserialize, Serialize};

use super::{ParamStore, Tensor, TensorError};

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

/// Flat, version-tagged serialization of a [`ParamStore`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub params: Vec<CheckpointEntry>,
}

impl Checkpoint {
    pub fn from_store(store: &ParamStore) -> Self {
        let params = store
            .iter()
            .map(|(name, t)| CheckpointEntry {
                name: name.to_string(),
                shape: t.shape().to_vec(),
                values: t.data().to_vec(),
            })
            .collect();
        Self {
            format_version: CHECKPOINT_FORMAT_VERSION,
            params,
        }
    }

    /// Rebuilds a store, validating names and shapes against `template`.
    pub fn into_store(self, template: &ParamStore) -> Result<ParamStore, TensorError> {
        let store = self.into_store_unchecked()?;
        template.check_layout(&store)?;
        Ok(store)
    }

    /// Rebuilds a store without a layout reference.
    pub fn into_store_unchecked(self) -> Result<ParamStore, TensorError> {
        if self.format_version != CHECKPOINT_FORMAT_VERSION {
            return Err(TensorError::InvalidArgument(format!(
                "unsupported checkpoint format_version {}",
                self.format_version
            )));
        }
        let mut store = ParamStore::new();
        for entry in self.params {
            let t = Tensor::from_shape(&entry.shape, entry.values)?;
            store.insert(entry.name, t)?;
        }
        Ok(store)
    }
}
