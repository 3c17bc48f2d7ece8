//! The three-layer heterogeneous graph: visual objects, parsed caption
//! semantics, and candidate-fact entities, plus the question.

mod embedding;

pub use embedding::{hashed_unit_vector, tokenize, EmbeddingTable, OovPolicy};

use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::retrieval::CandidateFactSet;

/// Number of features in a visual edge.
pub const SPATIAL_EDGE_DIM: usize = 5;
/// Objects kept per image.
pub const DEFAULT_MAX_OBJECTS: usize = 36;
/// Question and caption token cap.
pub const DEFAULT_MAX_QUESTION_LEN: usize = 20;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("bounding box must have positive width and height, got w={w} h={h}")]
    InvalidBox { w: f64, h: f64 },
    #[error("{what} feature has length {actual}, expected {expected}")]
    FeatureDim {
        what: &'static str,
        expected: usize,
        actual: usize,
    },
    #[error("{0} dimension must be positive")]
    ZeroDimension(&'static str),
    #[error("edge endpoint {index} out of range for {len} nodes")]
    EdgeEndpoint { index: usize, len: usize },
    #[error("visual graph needs at least one object")]
    NoObjects,
    #[error("fact graph needs at least one candidate fact")]
    NoFacts,
    #[error("phrase has no tokens")]
    EmptyPhrase,
    #[error("question has no tokens")]
    EmptyQuestion,
    #[error("token `{0}` is not in the embedding table")]
    OutOfVocabulary(String),
    #[error("answer index {index} out of range for {len} entities")]
    AnswerIndex { index: usize, len: usize },
    #[error("permutation of length {actual} does not match {expected} nodes")]
    Permutation { expected: usize, actual: usize },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("io: {0}")]
    Io(String),
}

/// Top-left anchored box in pixels.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl BoundingBox {
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Result<Self, GraphError> {
        let b = Self { x, y, w, h };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<(), GraphError> {
        let ok = self.w > 0.0 && self.h > 0.0 && self.x.is_finite() && self.y.is_finite();
        if ok && self.w.is_finite() && self.h.is_finite() {
            Ok(())
        } else {
            Err(GraphError::InvalidBox {
                w: self.w,
                h: self.h,
            })
        }
    }
}

/// Relative geometry of `to` seen from `from`:
/// `[(x_j-x_i)/w_i, (y_j-y_i)/h_i, w_j/w_i, h_j/h_i, w_j h_j/(w_i h_i)]`.
pub fn spatial_edge_feature(from: &BoundingBox, to: &BoundingBox) -> [f64; SPATIAL_EDGE_DIM] {
    [
        (to.x - from.x) / from.w,
        (to.y - from.y) / from.h,
        to.w / from.w,
        to.h / from.h,
        (to.w * to.h) / (from.w * from.h),
    ]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VisualNode {
    pub feature: Vec<f64>,
    pub bbox: BoundingBox,
    pub label: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerKind {
    Visual,
    Semantic,
    Fact,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Edge {
    pub src: usize,
    pub dst: usize,
    pub feature: Vec<f64>,
}

/// One layer of the heterogeneous graph. Edges are directed; message
/// passing into node `i` uses every edge with `dst == i`.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerGraph {
    kind: LayerKind,
    node_dim: usize,
    edge_dim: usize,
    nodes: Vec<Vec<f64>>,
    labels: Vec<String>,
    edges: Vec<Edge>,
}

impl LayerGraph {
    pub fn new(kind: LayerKind, node_dim: usize, edge_dim: usize) -> Result<Self, GraphError> {
        if node_dim == 0 {
            return Err(GraphError::ZeroDimension("node"));
        }
        if edge_dim == 0 {
            return Err(GraphError::ZeroDimension("edge"));
        }
        Ok(Self {
            kind,
            node_dim,
            edge_dim,
            nodes: Vec::new(),
            labels: Vec::new(),
            edges: Vec::new(),
        })
    }

    pub fn add_node(&mut self, label: impl Into<String>, feature: Vec<f64>) -> Result<usize, GraphError> {
        if feature.len() != self.node_dim {
            return Err(GraphError::FeatureDim {
                what: "node",
                expected: self.node_dim,
                actual: feature.len(),
            });
        }
        self.nodes.push(feature);
        self.labels.push(label.into());
        Ok(self.nodes.len() - 1)
    }

    pub fn add_edge(&mut self, src: usize, dst: usize, feature: Vec<f64>) -> Result<(), GraphError> {
        for index in [src, dst] {
            if index >= self.nodes.len() {
                return Err(GraphError::EdgeEndpoint {
                    index,
                    len: self.nodes.len(),
                });
            }
        }
        if feature.len() != self.edge_dim {
            return Err(GraphError::FeatureDim {
                what: "edge",
                expected: self.edge_dim,
                actual: feature.len(),
            });
        }
        self.edges.push(Edge { src, dst, feature });
        Ok(())
    }

    pub fn kind(&self) -> LayerKind {
        self.kind
    }

    pub fn node_dim(&self) -> usize {
        self.node_dim
    }

    pub fn edge_dim(&self) -> usize {
        self.edge_dim
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[Vec<f64>] {
        &self.nodes
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    /// Indices of edges whose destination is `node`.
    pub fn in_edges(&self, node: usize) -> impl Iterator<Item = usize> + '_ {
        self.edges
            .iter()
            .enumerate()
            .filter(move |(_, e)| e.dst == node)
            .map(|(k, _)| k)
    }

    /// Reorders nodes so that new position `p` holds old node `order[p]`.
    /// Edges keep their list order with endpoints remapped.
    pub fn permuted(&self, order: &[usize]) -> Result<Self, GraphError> {
        let n = self.nodes.len();
        let mut inverse = vec![usize::MAX; n];
        if order.len() != n {
            return Err(GraphError::Permutation {
                expected: n,
                actual: order.len(),
            });
        }
        for (new, &old) in order.iter().enumerate() {
            if old >= n || inverse[old] != usize::MAX {
                return Err(GraphError::Permutation {
                    expected: n,
                    actual: order.len(),
                });
            }
            inverse[old] = new;
        }
        Ok(Self {
            kind: self.kind,
            node_dim: self.node_dim,
            edge_dim: self.edge_dim,
            nodes: order.iter().map(|&o| self.nodes[o].clone()).collect(),
            labels: order.iter().map(|&o| self.labels[o].clone()).collect(),
            edges: self
                .edges
                .iter()
                .map(|e| Edge {
                    src: inverse[e.src],
                    dst: inverse[e.dst],
                    feature: e.feature.clone(),
                })
                .collect(),
        })
    }

    /// Same topology with every edge feature set to zero.
    pub fn without_relations(&self) -> Self {
        let mut g = self.clone();
        for e in &mut g.edges {
            e.feature.iter_mut().for_each(|v| *v = 0.0);
        }
        g
    }

    /// Same dimensions, no nodes.
    pub fn emptied(&self) -> Self {
        Self {
            kind: self.kind,
            node_dim: self.node_dim,
            edge_dim: self.edge_dim,
            nodes: Vec::new(),
            labels: Vec::new(),
            edges: Vec::new(),
        }
    }
}

/// Builds the directed complete visual graph (no self-loops). Inputs past
/// `max_objects` are dropped; order is preserved.
pub fn build_visual_graph(
    objects: &[VisualNode],
    feature_dim: usize,
    max_objects: usize,
    allow_empty: bool,
) -> Result<LayerGraph, GraphError> {
    if objects.is_empty() && !allow_empty {
        return Err(GraphError::NoObjects);
    }
    let kept = &objects[..objects.len().min(max_objects)];
    let mut g = LayerGraph::new(LayerKind::Visual, feature_dim, SPATIAL_EDGE_DIM)?;
    for o in kept {
        o.bbox.validate()?;
        g.add_node(o.label.clone(), o.feature.clone())?;
    }
    for (i, a) in kept.iter().enumerate() {
        for (j, b) in kept.iter().enumerate() {
            if i != j {
                g.add_edge(i, j, spatial_edge_feature(&a.bbox, &b.bbox).to_vec())?;
            }
        }
    }
    Ok(g)
}

/// A parsed caption relation, each part already tokenized.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SemanticTriple {
    pub subject: Vec<String>,
    pub relation: Vec<String>,
    pub object: Vec<String>,
}

/// One node per distinct subject/object phrase; each distinct triple adds
/// an edge in both directions carrying the relation phrase embedding.
pub fn build_semantic_graph(
    triples: &[SemanticTriple],
    table: &EmbeddingTable,
) -> Result<LayerGraph, GraphError> {
    let dim = table.dim();
    let mut g = LayerGraph::new(LayerKind::Semantic, dim, dim)?;
    let mut ids: HashMap<String, usize> = HashMap::new();
    let mut seen: HashSet<(usize, String, usize)> = HashSet::new();

    let mut node = |g: &mut LayerGraph, tokens: &[String]| -> Result<usize, GraphError> {
        let key = tokens.join(" ");
        if let Some(&i) = ids.get(&key) {
            return Ok(i);
        }
        let i = g.add_node(key.clone(), table.embed_phrase(tokens)?)?;
        ids.insert(key, i);
        Ok(i)
    };

    for t in triples {
        let s = node(&mut g, &t.subject)?;
        let o = node(&mut g, &t.object)?;
        let rel = t.relation.join(" ");
        if !seen.insert((s, rel, o)) {
            continue;
        }
        let feature = table.embed_phrase(&t.relation)?;
        g.add_edge(s, o, feature.clone())?;
        if s != o {
            g.add_edge(o, s, feature)?;
        }
    }
    Ok(g)
}

/// One node per distinct entity string (first-appearance order); every
/// candidate fact adds an edge in both directions.
pub fn build_fact_graph(
    candidates: &CandidateFactSet,
    table: &EmbeddingTable,
) -> Result<LayerGraph, GraphError> {
    if candidates.is_empty() {
        return Err(GraphError::NoFacts);
    }
    let dim = table.dim();
    let mut g = LayerGraph::new(LayerKind::Fact, dim, dim)?;
    let mut ids: HashMap<&str, usize> = HashMap::new();
    for fact in candidates.facts() {
        let mut endpoints = [0usize; 2];
        for (slot, entity) in endpoints.iter_mut().zip([&fact.e1, &fact.e2]) {
            *slot = match ids.get(entity.as_str()) {
                Some(&i) => i,
                None => {
                    let i = g.add_node(entity.clone(), table.embed_phrase(&tokenize(entity))?)?;
                    ids.insert(entity.as_str(), i);
                    i
                }
            };
        }
        let rel = table.embed_phrase(&tokenize(&fact.relation))?;
        let [a, b] = endpoints;
        g.add_edge(a, b, rel.clone())?;
        if a != b {
            g.add_edge(b, a, rel)?;
        }
    }
    Ok(g)
}

/// Question tokens together with their word vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct Question {
    tokens: Vec<String>,
    word_vectors: Vec<Vec<f64>>,
}

impl Question {
    /// Looks up each token; questions longer than `max_len` are truncated.
    pub fn new(tokens: &[String], table: &EmbeddingTable, max_len: usize) -> Result<Self, GraphError> {
        if tokens.is_empty() {
            return Err(GraphError::EmptyQuestion);
        }
        let tokens: Vec<String> = tokens.iter().take(max_len.max(1)).cloned().collect();
        let word_vectors = tokens
            .iter()
            .map(|t| table.lookup(t))
            .collect::<Result<_, _>>()?;
        Ok(Self {
            tokens,
            word_vectors,
        })
    }

    /// Builds a question from precomputed vectors (all the same length).
    pub fn from_vectors(tokens: Vec<String>, word_vectors: Vec<Vec<f64>>) -> Result<Self, GraphError> {
        if tokens.is_empty() || word_vectors.len() != tokens.len() {
            return Err(GraphError::EmptyQuestion);
        }
        let d = word_vectors[0].len();
        if let Some(bad) = word_vectors.iter().find(|v| v.len() != d) {
            return Err(GraphError::FeatureDim {
                what: "word",
                expected: d,
                actual: bad.len(),
            });
        }
        Ok(Self {
            tokens,
            word_vectors,
        })
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn word_vectors(&self) -> &[Vec<f64>] {
        &self.word_vectors
    }
}

/// Read-only view of a fact-layer node.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FactNode<'a> {
    pub entity: &'a str,
    pub embedding: &'a [f64],
    pub is_answer: bool,
}

/// One instance: the three layers plus the question and, when known, the
/// index of the answer entity in the fact layer.
#[derive(Clone, Debug, PartialEq)]
pub struct MultiModalGraph {
    pub visual: LayerGraph,
    pub semantic: LayerGraph,
    pub fact: LayerGraph,
    pub question: Question,
    pub answer: Option<usize>,
}

impl MultiModalGraph {
    pub fn new(
        visual: LayerGraph,
        semantic: LayerGraph,
        fact: LayerGraph,
        question: Question,
        answer: Option<usize>,
    ) -> Result<Self, GraphError> {
        if fact.is_empty() {
            return Err(GraphError::NoFacts);
        }
        if let Some(index) = answer {
            if index >= fact.len() {
                return Err(GraphError::AnswerIndex {
                    index,
                    len: fact.len(),
                });
            }
        }
        Ok(Self {
            visual,
            semantic,
            fact,
            question,
            answer,
        })
    }

    pub fn fact_nodes(&self) -> impl Iterator<Item = FactNode<'_>> {
        self.fact
            .labels()
            .iter()
            .zip(self.fact.nodes())
            .enumerate()
            .map(|(i, (entity, embedding))| FactNode {
                entity,
                embedding,
                is_answer: self.answer == Some(i),
            })
    }

    /// Binary answer labels, one per fact entity.
    pub fn labels(&self) -> Vec<f64> {
        (0..self.fact.len())
            .map(|i| if self.answer == Some(i) { 1.0 } else { 0.0 })
            .collect()
    }
}
