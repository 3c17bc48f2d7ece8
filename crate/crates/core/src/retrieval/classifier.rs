use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::RetrievalError;
use crate::autodiff::{ParamStore, Tape, Tensor, Var};
use crate::graph::Question;
use crate::model::layers::{encode_question, linear};
use crate::model::params::{register_linear, register_lstm, Affine};
use crate::model::ModelError;
use crate::train::{AdamConfig, AdamState};

const ENCODER: &str = "relation.encoder";
const HIDDEN: &str = "relation.hidden";
const OUTPUT: &str = "relation.output";

/// Distribution over relation types, stored in decreasing probability.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RelationPrediction {
    relations: Vec<String>,
    probabilities: Vec<f64>,
}

impl RelationPrediction {
    /// Normalizes `probabilities` and sorts by decreasing mass; equal
    /// masses keep vocabulary order.
    pub fn from_probabilities(
        relations: &[String],
        probabilities: &[f64],
    ) -> Result<Self, RetrievalError> {
        if relations.is_empty() {
            return Err(RetrievalError::EmptyVocabulary);
        }
        if probabilities.len() != relations.len() {
            return Err(ModelError::Dimension {
                what: "relation probability",
                expected: relations.len(),
                actual: probabilities.len(),
            }
            .into());
        }
        let total: f64 = probabilities.iter().sum();
        if probabilities.iter().any(|p| !p.is_finite() || *p < 0.0) || total <= 0.0 {
            return Err(ModelError::Config("relation probabilities must be non-negative with positive mass".into()).into());
        }
        let mut order: Vec<usize> = (0..relations.len()).collect();
        order.sort_by(|&a, &b| probabilities[b].total_cmp(&probabilities[a]));
        Ok(Self {
            relations: order.iter().map(|&i| relations[i].clone()).collect(),
            probabilities: order.iter().map(|&i| probabilities[i] / total).collect(),
        })
    }

    pub fn uniform(relations: &[String]) -> Result<Self, RetrievalError> {
        Self::from_probabilities(relations, &vec![1.0; relations.len()])
    }

    /// The `m` most probable relation names.
    pub fn top(&self, m: usize) -> Vec<&str> {
        self.relations.iter().take(m).map(String::as_str).collect()
    }

    pub fn best(&self) -> &str {
        &self.relations[0]
    }

    pub fn probability_of(&self, relation: &str) -> Option<f64> {
        self.relations
            .iter()
            .position(|r| r == relation)
            .map(|i| self.probabilities[i])
    }

    /// `(relation, probability)` pairs, most probable first.
    pub fn iter(&self) -> impl Iterator<Item = (&str, f64)> {
        self.relations
            .iter()
            .map(String::as_str)
            .zip(self.probabilities.iter().copied())
    }
}

#[derive(Clone, Debug, PartialEq)]
enum Backend {
    PassThrough,
    Untrained,
    Trained(ParamStore),
}

/// LSTM question encoder followed by a two-layer MLP with a softmax over the
/// relation vocabulary.
#[derive(Clone, Debug, PartialEq)]
pub struct RelationClassifier {
    relations: Vec<String>,
    backend: Backend,
}

impl RelationClassifier {
    /// Always predicts the uniform distribution.
    pub fn pass_through(relations: Vec<String>) -> Result<Self, RetrievalError> {
        Self::with_backend(relations, Backend::PassThrough)
    }

    /// Refuses to predict until trained.
    pub fn untrained(relations: Vec<String>) -> Result<Self, RetrievalError> {
        Self::with_backend(relations, Backend::Untrained)
    }

    /// Wraps previously trained parameters.
    pub fn from_params(relations: Vec<String>, params: ParamStore) -> Result<Self, RetrievalError> {
        let out = params
            .get(&format!("{OUTPUT}.weight"))
            .ok_or_else(|| ModelError::MissingParam(format!("{OUTPUT}.weight")))?;
        if out.cols() != relations.len() {
            return Err(ModelError::Dimension {
                what: "relation output",
                expected: relations.len(),
                actual: out.cols(),
            }
            .into());
        }
        Self::with_backend(relations, Backend::Trained(params))
    }

    fn with_backend(relations: Vec<String>, backend: Backend) -> Result<Self, RetrievalError> {
        if relations.is_empty() {
            return Err(RetrievalError::EmptyVocabulary);
        }
        Ok(Self { relations, backend })
    }

    pub fn relations(&self) -> &[String] {
        &self.relations
    }

    pub fn params(&self) -> Option<&ParamStore> {
        match &self.backend {
            Backend::Trained(p) => Some(p),
            _ => None,
        }
    }

    pub fn is_trained(&self) -> bool {
        matches!(self.backend, Backend::Trained(_))
    }

    /// Carries no information, so relation filtering should be skipped.
    pub fn is_pass_through(&self) -> bool {
        matches!(self.backend, Backend::PassThrough)
    }

    pub fn predict(&self, question: &Question) -> Result<RelationPrediction, RetrievalError> {
        match &self.backend {
            Backend::PassThrough => RelationPrediction::uniform(&self.relations),
            Backend::Untrained => Err(RetrievalError::Untrained),
            Backend::Trained(params) => {
                let mut tape = Tape::with_params(params);
                let probs = relation_probabilities(&mut tape, question)?;
                RelationPrediction::from_probabilities(&self.relations, tape.value(probs).data())
            }
        }
    }
}

fn relation_probabilities(tape: &mut Tape<'_>, question: &Question) -> Result<Var, ModelError> {
    let h = encode_question(tape, question, ENCODER)?;
    let z = linear(tape, h, HIDDEN)?;
    let z = tape.relu(z)?;
    let logits = linear(tape, z, OUTPUT)?;
    Ok(tape.softmax(logits)?)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClassifierTrainConfig {
    pub hidden_dim: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub adam: AdamConfig,
}

impl Default for ClassifierTrainConfig {
    fn default() -> Self {
        Self {
            hidden_dim: 32,
            epochs: 15,
            batch_size: 16,
            learning_rate: 1e-2,
            seed: 0,
            adam: AdamConfig::default(),
        }
    }
}

/// Fits the classifier with softmax cross-entropy on `(question, relation)`
/// pairs. Labels must belong to `relations`.
pub fn train_relation_classifier(
    examples: &[(Question, String)],
    relations: &[String],
    cfg: &ClassifierTrainConfig,
) -> Result<RelationClassifier, RetrievalError> {
    if relations.is_empty() {
        return Err(RetrievalError::EmptyVocabulary);
    }
    if examples.is_empty() || cfg.batch_size == 0 || cfg.hidden_dim == 0 {
        return Err(ModelError::Config("classifier training needs examples, batch size and hidden size".into()).into());
    }
    let labels = examples
        .iter()
        .map(|(_, r)| {
            relations
                .iter()
                .position(|x| x == r)
                .ok_or_else(|| RetrievalError::UnknownRelation(r.clone()))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let word_dim = examples[0].0.word_vectors()[0].len();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut params = ParamStore::new();
    let h = cfg.hidden_dim;
    let affine = Affine { bias: true, gain: 1.0 };
    register_lstm(&mut params, ENCODER, word_dim, h, affine, &mut rng)?;
    register_linear(&mut params, HIDDEN, h, h, affine, &mut rng)?;
    register_linear(&mut params, OUTPUT, h, relations.len(), affine, &mut rng)?;

    let mut adam = AdamState::new(&params);
    let mut order: Vec<usize> = (0..examples.len()).collect();
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            let mut grads: Vec<Tensor> = params
                .iter()
                .map(|(_, t)| Tensor::zeros(t.rows(), t.cols()))
                .collect();
            for &i in batch {
                let mut tape = Tape::with_params(&params);
                let probs = relation_probabilities(&mut tape, &examples[i].0)?;
                let mut onehot = vec![0.0; relations.len()];
                onehot[labels[i]] = 1.0;
                let mask = tape.constant(Tensor::row(onehot)?)?;
                let picked = tape.mul(probs, mask)?;
                let picked = tape.sum(picked)?;
                let picked = tape.clamp(picked, 1e-12, 1.0)?;
                let ln = tape.ln(picked)?;
                let loss = tape.affine(ln, -1.0, 0.0)?;
                let g = tape.backward(loss)?;
                for (acc, gi) in grads.iter_mut().zip(g.params()) {
                    acc.add_assign(gi);
                }
            }
            let scale = 1.0 / batch.len() as f64;
            for g in &mut grads {
                g.data_mut().iter_mut().for_each(|x| *x *= scale);
            }
            adam.step(&mut params, &grads, cfg.learning_rate, &cfg.adam)
                .map_err(|e| RetrievalError::Optimizer(e.to_string()))?;
        }
    }
    RelationClassifier::from_params(relations.to_vec(), params)
}
