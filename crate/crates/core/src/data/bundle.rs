use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{read_json, write_json, DataError, PrepareOptions};
use crate::autodiff::{Checkpoint, ParamStore};
use crate::model::{init_params, ModelConfig};
use crate::retrieval::RelationClassifier;

pub const BUNDLE_FORMAT_VERSION: u32 = 1;

/// Everything needed to run a trained model: configuration, parameters and
/// the optional relation classifier.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelBundle {
    pub format_version: u32,
    pub model: ModelConfig,
    pub prepare: PrepareOptions,
    pub relations: Vec<String>,
    pub params: Checkpoint,
    #[serde(default)]
    pub relation_classifier: Option<Checkpoint>,
    /// Mean training loss per epoch.
    #[serde(default)]
    pub loss_curve: Vec<f64>,
}

impl ModelBundle {
    pub fn new(
        model: ModelConfig,
        prepare: PrepareOptions,
        params: &ParamStore,
        classifier: &RelationClassifier,
        loss_curve: Vec<f64>,
    ) -> Self {
        Self {
            format_version: BUNDLE_FORMAT_VERSION,
            model,
            prepare,
            relations: classifier.relations().to_vec(),
            params: Checkpoint::from_store(params),
            relation_classifier: classifier.params().map(Checkpoint::from_store),
            loss_curve,
        }
    }

    pub fn save(&self, path: &Path) -> Result<(), DataError> {
        write_json(path, self)
    }

    pub fn load(path: &Path) -> Result<Self, DataError> {
        let b: Self = read_json(path)?;
        if b.format_version != BUNDLE_FORMAT_VERSION {
            return Err(DataError::Version {
                what: "checkpoint",
                found: b.format_version,
                expected: BUNDLE_FORMAT_VERSION,
            });
        }
        Ok(b)
    }

    /// Model parameters, checked against the layout implied by `model`.
    pub fn params(&self) -> Result<ParamStore, DataError> {
        let template = init_params(&self.model, 0)?;
        Ok(self
            .params
            .clone()
            .into_store(&template)
            .map_err(crate::model::ModelError::from)?)
    }

    /// The stored classifier, or a pass-through one when none was trained.
    pub fn classifier(&self) -> Result<RelationClassifier, DataError> {
        Ok(match &self.relation_classifier {
            Some(ck) => {
                let store = ck
                    .clone()
                    .into_store_unchecked()
                    .map_err(crate::model::ModelError::from)?;
                RelationClassifier::from_params(self.relations.clone(), store)?
            }
            None => RelationClassifier::pass_through(self.relations.clone())?,
        })
    }
}
