//! Candidate-fact retrieval: embedding-similarity scoring, top-k selection
//! and relation-type filtering of knowledge-base facts.

mod classifier;

pub use classifier::{
    train_relation_classifier, ClassifierTrainConfig, RelationClassifier, RelationPrediction,
};

use std::collections::HashSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{tokenize, EmbeddingTable, GraphError};

/// Relation types kept by the filter.
pub const DEFAULT_TOP_RELATIONS: usize = 3;
/// Facts kept after scoring.
pub const DEFAULT_TOP_FACTS: usize = 100;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RetrievalError {
    #[error("fact field `{0}` is empty")]
    EmptyField(&'static str),
    #[error("scoring context has no tokens")]
    EmptyContext,
    #[error("k and m must be at least 1")]
    ZeroCutoff,
    #[error("no candidate fact matches the predicted relations; fall back to the unfiltered set")]
    EmptyAfterFilter,
    #[error("relation classifier is untrained")]
    Untrained,
    #[error("relation vocabulary is empty")]
    EmptyVocabulary,
    #[error("unknown relation `{0}`")]
    UnknownRelation(String),
    #[error("classifier optimizer failed: {0}")]
    Optimizer(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Model(#[from] Box<crate::model::ModelError>),
}

impl From<crate::model::ModelError> for RetrievalError {
    fn from(e: crate::model::ModelError) -> Self {
        RetrievalError::Model(Box::new(e))
    }
}

impl From<crate::autodiff::TensorError> for RetrievalError {
    fn from(e: crate::autodiff::TensorError) -> Self {
        RetrievalError::Model(Box::new(e.into()))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FactTriple {
    pub e1: String,
    pub relation: String,
    pub e2: String,
}

impl FactTriple {
    pub fn new(
        e1: impl Into<String>,
        relation: impl Into<String>,
        e2: impl Into<String>,
    ) -> Result<Self, RetrievalError> {
        let f = Self {
            e1: e1.into(),
            relation: relation.into(),
            e2: e2.into(),
        };
        f.validate()?;
        Ok(f)
    }

    pub fn validate(&self) -> Result<(), RetrievalError> {
        for (name, v) in [("e1", &self.e1), ("relation", &self.relation), ("e2", &self.e2)] {
            if v.trim().is_empty() {
                return Err(RetrievalError::EmptyField(name));
            }
        }
        Ok(())
    }

    /// Tokens of all three fields in order.
    pub fn words(&self) -> Vec<String> {
        let mut w = tokenize(&self.e1);
        w.extend(tokenize(&self.relation));
        w.extend(tokenize(&self.e2));
        w
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoredFact {
    pub fact: FactTriple,
    pub score: f64,
    /// Position of the fact in the list it was retrieved from.
    pub source_index: usize,
}

/// Ranked candidate facts for one instance.
#[derive(Clone, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct CandidateFactSet {
    entries: Vec<ScoredFact>,
    k_retained: Option<usize>,
    relation_filtered: bool,
}

impl CandidateFactSet {
    /// Wraps an already chosen list, keeping its order. Scores are zero.
    pub fn unscored(facts: Vec<FactTriple>) -> Self {
        Self {
            entries: facts
                .into_iter()
                .enumerate()
                .map(|(source_index, fact)| ScoredFact {
                    fact,
                    score: 0.0,
                    source_index,
                })
                .collect(),
            k_retained: None,
            relation_filtered: false,
        }
    }

    pub fn entries(&self) -> &[ScoredFact] {
        &self.entries
    }

    pub fn facts(&self) -> impl Iterator<Item = &FactTriple> {
        self.entries.iter().map(|e| &e.fact)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn k_retained(&self) -> Option<usize> {
        self.k_retained
    }

    pub fn relation_filtered(&self) -> bool {
        self.relation_filtered
    }

    /// Whether `entity` is an endpoint of any candidate.
    pub fn contains_entity(&self, entity: &str) -> bool {
        self.facts().any(|f| f.e1 == entity || f.e2 == entity)
    }
}

/// How pairwise cosine similarities are reduced to one fact score.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreReduction {
    /// Mean over every fact-word x context-word pair.
    #[default]
    MeanOfPairs,
    /// Best context match per fact word, then mean over fact words.
    MeanOfMax,
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / (na * nb)
}

/// Similarity of a fact to the question and detected visual concepts.
/// The context is the set union of both token lists.
pub fn score_fact<S: AsRef<str>>(
    fact: &FactTriple,
    question_tokens: &[S],
    concept_tokens: &[S],
    table: &EmbeddingTable,
    reduction: ScoreReduction,
) -> Result<f64, RetrievalError> {
    let mut seen = HashSet::new();
    let context: Vec<&str> = question_tokens
        .iter()
        .chain(concept_tokens)
        .map(AsRef::as_ref)
        .filter(|t| seen.insert(*t))
        .collect();
    if context.is_empty() {
        return Err(RetrievalError::EmptyContext);
    }
    let words = fact.words();
    if words.is_empty() {
        return Err(RetrievalError::EmptyField("fact words"));
    }
    let ctx_vecs = context
        .iter()
        .map(|t| table.lookup(t))
        .collect::<Result<Vec<_>, _>>()?;
    let mut total = 0.0;
    for w in &words {
        let wv = table.lookup(w)?;
        let sims = ctx_vecs.iter().map(|c| cosine(&wv, c));
        total += match reduction {
            ScoreReduction::MeanOfPairs => sims.sum::<f64>() / ctx_vecs.len() as f64,
            ScoreReduction::MeanOfMax => sims.fold(f64::NEG_INFINITY, f64::max),
        };
    }
    Ok(total / words.len() as f64)
}

/// Keeps the `k` best-scoring facts. Ties keep input order.
pub fn retrieve_top_k<F>(
    facts: &[FactTriple],
    mut scorer: F,
    k: usize,
) -> Result<CandidateFactSet, RetrievalError>
where
    F: FnMut(&FactTriple) -> Result<f64, RetrievalError>,
{
    if k == 0 {
        return Err(RetrievalError::ZeroCutoff);
    }
    let mut scored = facts
        .iter()
        .enumerate()
        .map(|(i, f)| {
            Ok(ScoredFact {
                fact: f.clone(),
                score: scorer(f)?,
                source_index: i,
            })
        })
        .collect::<Result<Vec<_>, RetrievalError>>()?;
    scored.sort_by(|a, b| b.score.total_cmp(&a.score));
    scored.truncate(k);
    Ok(CandidateFactSet {
        entries: scored,
        k_retained: Some(k),
        relation_filtered: false,
    })
}

/// Drops facts whose relation is outside the `m` most probable predicted
/// relation types. An empty result is reported as an error so the caller
/// can fall back to the unfiltered set.
pub fn filter_by_relation(
    candidates: &CandidateFactSet,
    prediction: &RelationPrediction,
    m: usize,
) -> Result<CandidateFactSet, RetrievalError> {
    if m == 0 {
        return Err(RetrievalError::ZeroCutoff);
    }
    let keep: HashSet<&str> = prediction.top(m).into_iter().collect();
    let entries: Vec<ScoredFact> = candidates
        .entries
        .iter()
        .filter(|e| keep.contains(e.fact.relation.as_str()))
        .cloned()
        .collect();
    if entries.is_empty() {
        return Err(RetrievalError::EmptyAfterFilter);
    }
    Ok(CandidateFactSet {
        entries,
        k_retained: candidates.k_retained,
        relation_filtered: true,
    })
}

/// [`filter_by_relation`] with the empty-result fallback applied.
pub fn filter_or_fallback(
    candidates: &CandidateFactSet,
    prediction: &RelationPrediction,
    m: usize,
) -> Result<CandidateFactSet, RetrievalError> {
    match filter_by_relation(candidates, prediction, m) {
        Err(RetrievalError::EmptyAfterFilter) => Ok(candidates.clone()),
        other => other,
    }
}
