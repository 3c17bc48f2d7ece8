use serde::{Deserialize, Serialize};

use super::ModelError;
use crate::graph::{DEFAULT_MAX_OBJECTS, DEFAULT_MAX_QUESTION_LEN, SPATIAL_EDGE_DIM};

/// Structural variants used by the ablation harness.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(default)]
pub struct Ablation {
    /// Treat the visual layer as empty.
    pub drop_visual: bool,
    /// Treat the semantic layer as empty.
    pub drop_semantic: bool,
    /// Replace the visual-to-fact convolution by the mean of visual nodes.
    pub visual_concat: bool,
    /// Replace the semantic-to-fact convolution by the mean of semantic nodes.
    pub semantic_concat: bool,
    /// Zero every edge feature in all three layers.
    pub no_relations: bool,
}

impl Ablation {
    pub fn is_full(&self) -> bool {
        *self == Self::default()
    }

    /// Short row label in the style of an ablation table.
    pub fn label(&self) -> String {
        if self.is_full() {
            return "full model".into();
        }
        let mut parts = Vec::new();
        match (self.drop_semantic, self.drop_visual) {
            (true, true) => parts.push("w/o Semantic Graph & Visual Graph".to_string()),
            (true, false) => parts.push("w/o Semantic Graph".to_string()),
            (false, true) => parts.push("w/o Visual Graph".to_string()),
            _ => {}
        }
        match (self.visual_concat, self.semantic_concat) {
            (true, true) => parts.push("V-to-F Concat. & S-to-F Concat.".to_string()),
            (true, false) => parts.push("V-to-F Concat.".to_string()),
            (false, true) => parts.push("S-to-F Concat.".to_string()),
            _ => {}
        }
        if self.no_relations {
            parts.push("w/o relationships".to_string());
        }
        parts.join(", ")
    }
}

/// Dimensions and structural switches of the reasoning network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    /// Reasoning steps.
    pub steps: usize,
    /// Question encoder hidden size; also the classifier hidden size.
    pub question_dim: usize,
    /// Common width every layer is projected to.
    pub hidden_dim: usize,
    /// Visual node feature length.
    pub visual_dim: usize,
    /// Word embedding length (semantic/fact nodes and edges, question words).
    pub word_dim: usize,
    pub share_step_weights: bool,
    pub dropout: f64,
    /// Learned bias on every affine map.
    pub bias: bool,
    /// Scale on the uniform fan-in init range.
    pub init_gain: f64,
    pub max_objects: usize,
    pub max_question_len: usize,
    pub ablation: Ablation,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            steps: 2,
            question_dim: 512,
            hidden_dim: 512,
            visual_dim: 2048,
            word_dim: 300,
            share_step_weights: false,
            dropout: 0.5,
            bias: true,
            init_gain: 1.0,
            max_objects: DEFAULT_MAX_OBJECTS,
            max_question_len: DEFAULT_MAX_QUESTION_LEN,
            ablation: Ablation::default(),
        }
    }
}

impl ModelConfig {
    /// Small dimensions for synthetic desk-scale runs. One step, no
    /// dropout and a wider init; the synthetic task trains unreliably
    /// without them.
    pub fn desk() -> Self {
        Self {
            question_dim: 32,
            hidden_dim: 32,
            visual_dim: 32,
            word_dim: 8,
            steps: 1,
            dropout: 0.0,
            init_gain: 2.0,
            ..Self::default()
        }
    }

    pub fn visual_edge_dim(&self) -> usize {
        SPATIAL_EDGE_DIM
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.steps == 0 {
            return Err(ModelError::Config("steps must be at least 1".into()));
        }
        let dims = [
            ("question_dim", self.question_dim),
            ("hidden_dim", self.hidden_dim),
            ("visual_dim", self.visual_dim),
            ("word_dim", self.word_dim),
            ("max_objects", self.max_objects),
            ("max_question_len", self.max_question_len),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return Err(ModelError::Config(format!("{name} must be positive")));
        }
        if !(self.init_gain > 0.0 && self.init_gain.is_finite()) {
            return Err(ModelError::Config(format!("init_gain {} must be positive", self.init_gain)));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(ModelError::Config(format!(
                "dropout {} outside [0, 1)",
                self.dropout
            )));
        }
        Ok(())
    }

    /// Index of the parameter set used at reasoning step `step`.
    pub fn step_slot(&self, step: usize) -> usize {
        if self.share_step_weights {
            0
        } else {
            step
        }
    }

    pub fn step_slots(&self) -> usize {
        if self.share_step_weights {
            1
        } else {
            self.steps
        }
    }
}
