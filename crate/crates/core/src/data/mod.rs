//! Dataset files, synthetic instance generation, instance preparation
//! (retrieval plus graph construction), model bundles and trace export.
//!
//! A dataset directory holds:
//! - `instances.jsonl`: a header line, then one [`InstanceRecord`] per line;
//! - `kb.json`: the knowledge base, required when any record references it;
//! - `embeddings.txt`: optional word vectors, one `token v1 .. vd` per line.

mod bundle;
mod prepare;
mod synthetic;
mod trace;

pub use bundle::{ModelBundle, BUNDLE_FORMAT_VERSION};
pub use prepare::{prepare_instances, relation_examples, PrepareOptions, PreparedInstance};
pub use synthetic::{generate_synthetic, CandidateMode, FactDensity, SyntheticSpec, DEFAULT_RELATIONS};
pub use trace::{
    check_trace, export_trace, GateSummary, InstanceTrace, LayerTraceExport, Neighbor, StepTraceExport,
    TraceFile, TraceOptions, TRACE_FORMAT_VERSION,
};

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{EmbeddingTable, GraphError, OovPolicy, SemanticTriple, VisualNode};
use crate::model::ModelError;
use crate::retrieval::{FactTriple, RetrievalError};
use crate::train::TrainError;

pub const DATASET_FORMAT_VERSION: u32 = 1;
pub const INSTANCES_FILE: &str = "instances.jsonl";
pub const KB_FILE: &str = "kb.json";
pub const EMBEDDINGS_FILE: &str = "embeddings.txt";

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error("{path}:{line}: {message}")]
    Json {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("record `{id}`: field `{field}`: {message}")]
    Schema {
        id: String,
        field: &'static str,
        message: String,
    },
    #[error("{0}: file is empty")]
    Empty(PathBuf),
    #[error("unsupported format_version {found} in {what}; expected {expected}")]
    Version {
        what: &'static str,
        found: u32,
        expected: u32,
    },
    #[error("records reference the knowledge base but {0} is missing")]
    MissingKnowledgeBase(PathBuf),
    #[error("invalid synthetic spec: {0}")]
    Spec(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Train(#[from] TrainError),
}

impl DataError {
    pub(crate) fn io(path: &Path, e: impl std::fmt::Display) -> Self {
        DataError::Io {
            path: path.to_path_buf(),
            message: e.to_string(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

/// Where an instance's candidate facts come from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum CandidateSource {
    /// Facts used as-is, in the given order.
    Inline { facts: Vec<FactTriple> },
    /// Indices into the knowledge base to score and filter; an empty list
    /// means the whole knowledge base.
    KnowledgeBase { fact_ids: Vec<usize> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InstanceRecord {
    pub id: String,
    pub split: Split,
    #[serde(default)]
    pub fold: u32,
    pub question: Vec<String>,
    /// Relation-classifier label.
    #[serde(default)]
    pub relation: Option<String>,
    #[serde(default)]
    pub objects: Vec<VisualNode>,
    #[serde(default)]
    pub triples: Vec<SemanticTriple>,
    pub candidates: CandidateSource,
    pub answer: String,
}

/// First line of `instances.jsonl`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub format_version: u32,
    pub word_dim: usize,
    pub visual_dim: usize,
    /// Relation vocabulary for the classifier and filter.
    pub relations: Vec<String>,
    #[serde(default)]
    pub oov: OovPolicy,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KnowledgeBase {
    pub format_version: u32,
    pub facts: Vec<FactTriple>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub header: DatasetHeader,
    pub records: Vec<InstanceRecord>,
    pub knowledge_base: Option<KnowledgeBase>,
    pub embeddings: EmbeddingTable,
}

impl Dataset {
    pub fn split(&self, split: Split) -> Vec<&InstanceRecord> {
        self.records.iter().filter(|r| r.split == split).collect()
    }
}

/// A problem found while loading or preparing, tied to a record.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationIssue {
    pub id: String,
    pub message: String,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub issues: Vec<ValidationIssue>,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.issues.is_empty()
    }

    pub fn push(&mut self, id: &str, message: impl Into<String>) {
        self.issues.push(ValidationIssue {
            id: id.to_string(),
            message: message.into(),
        });
    }
}

fn schema(id: &str, field: &'static str, message: impl Into<String>) -> DataError {
    DataError::Schema {
        id: id.to_string(),
        field,
        message: message.into(),
    }
}

/// Structural checks that do not need retrieval. Returns the first
/// violation as an error naming the record and field.
pub fn validate_record(
    rec: &InstanceRecord,
    header: &DatasetHeader,
    kb_len: Option<usize>,
) -> Result<(), DataError> {
    let id = rec.id.as_str();
    if id.is_empty() {
        return Err(schema("<empty>", "id", "must not be empty"));
    }
    if rec.question.is_empty() {
        return Err(schema(id, "question", "must have at least one token"));
    }
    if rec.answer.trim().is_empty() {
        return Err(schema(id, "answer", "must not be empty"));
    }
    if let Some(r) = &rec.relation {
        if !header.relations.contains(r) {
            return Err(schema(id, "relation", format!("`{r}` is not in the header vocabulary")));
        }
    }
    for (i, o) in rec.objects.iter().enumerate() {
        o.bbox
            .validate()
            .map_err(|e| schema(id, "objects.bbox", format!("object {i}: {e}")))?;
        if o.feature.len() != header.visual_dim {
            return Err(schema(
                id,
                "objects.feature",
                format!("object {i} has {} values, expected {}", o.feature.len(), header.visual_dim),
            ));
        }
        if o.feature.iter().any(|v| !v.is_finite()) {
            return Err(schema(id, "objects.feature", format!("object {i} has a non-finite value")));
        }
    }
    for (i, t) in rec.triples.iter().enumerate() {
        if t.subject.is_empty() || t.relation.is_empty() || t.object.is_empty() {
            return Err(schema(id, "triples", format!("triple {i} has an empty part")));
        }
    }
    match &rec.candidates {
        CandidateSource::Inline { facts } => {
            if facts.is_empty() {
                return Err(schema(id, "candidates.facts", "must not be empty"));
            }
            for f in facts {
                f.validate().map_err(|e| schema(id, "candidates.facts", e.to_string()))?;
            }
        }
        CandidateSource::KnowledgeBase { fact_ids } => {
            let Some(n) = kb_len else {
                return Err(schema(id, "candidates", "references a missing knowledge base"));
            };
            if let Some(bad) = fact_ids.iter().find(|&&i| i >= n) {
                return Err(schema(
                    id,
                    "candidates.fact_ids",
                    format!("fact id {bad} out of range for {n} facts"),
                ));
            }
        }
    }
    Ok(())
}

fn open(path: &Path) -> Result<File, DataError> {
    File::open(path).map_err(|e| DataError::io(path, e))
}

fn create(path: &Path) -> Result<BufWriter<File>, DataError> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| DataError::io(path, e))
}

/// Pretty-printed JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), DataError> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| DataError::io(path, e))?;
    writeln!(w).map_err(|e| DataError::io(path, e))?;
    w.flush().map_err(|e| DataError::io(path, e))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, DataError> {
    let r = BufReader::new(open(path)?);
    serde_json::from_reader(r).map_err(|e| DataError::Json {
        path: path.to_path_buf(),
        line: e.line(),
        message: e.to_string(),
    })
}

/// Reads and validates a dataset directory. Records that fail the
/// structural checks abort loading with an error naming the record.
pub fn load_dataset(dir: &Path) -> Result<Dataset, DataError> {
    let path = dir.join(INSTANCES_FILE);
    let reader = BufReader::new(open(&path)?);
    let mut lines = reader.lines().enumerate().filter(|(_, l)| match l {
        Ok(s) => !s.trim().is_empty(),
        Err(_) => true,
    });
    let parse_err = |line: usize, e: serde_json::Error| DataError::Json {
        path: path.clone(),
        line,
        message: e.to_string(),
    };
    let (_, first) = lines.next().ok_or_else(|| DataError::Empty(path.clone()))?;
    let first = first.map_err(|e| DataError::io(&path, e))?;
    let header: DatasetHeader = serde_json::from_str(&first).map_err(|e| parse_err(1, e))?;
    if header.format_version != DATASET_FORMAT_VERSION {
        return Err(DataError::Version {
            what: "instances",
            found: header.format_version,
            expected: DATASET_FORMAT_VERSION,
        });
    }
    if header.word_dim == 0 || header.visual_dim == 0 {
        return Err(DataError::Graph(GraphError::ZeroDimension("dataset header")));
    }

    let mut records = Vec::new();
    for (i, line) in lines {
        let line = line.map_err(|e| DataError::io(&path, e))?;
        let rec: InstanceRecord = serde_json::from_str(&line).map_err(|e| parse_err(i + 1, e))?;
        records.push(rec);
    }
    if records.is_empty() {
        return Err(DataError::Empty(path));
    }

    let kb_path = dir.join(KB_FILE);
    let knowledge_base = if kb_path.exists() {
        let kb: KnowledgeBase = read_json(&kb_path)?;
        if kb.format_version != DATASET_FORMAT_VERSION {
            return Err(DataError::Version {
                what: "knowledge base",
                found: kb.format_version,
                expected: DATASET_FORMAT_VERSION,
            });
        }
        for f in &kb.facts {
            f.validate()?;
        }
        Some(kb)
    } else {
        None
    };
    let needs_kb = records
        .iter()
        .any(|r| matches!(r.candidates, CandidateSource::KnowledgeBase { .. }));
    if needs_kb && knowledge_base.is_none() {
        return Err(DataError::MissingKnowledgeBase(kb_path));
    }
    let kb_len = knowledge_base.as_ref().map(|k| k.facts.len());
    for r in &records {
        validate_record(r, &header, kb_len)?;
    }

    let emb_path = dir.join(EMBEDDINGS_FILE);
    let embeddings = if emb_path.exists() {
        let t = EmbeddingTable::read_text(BufReader::new(open(&emb_path)?), header.oov)
            .map_err(|e| DataError::io(&emb_path, e))?;
        if t.dim() != header.word_dim {
            return Err(DataError::io(
                &emb_path,
                format!("vectors have {} values, header says {}", t.dim(), header.word_dim),
            ));
        }
        t
    } else {
        EmbeddingTable::new(header.word_dim, header.oov)?
    };

    Ok(Dataset {
        header,
        records,
        knowledge_base,
        embeddings,
    })
}

/// Writes the dataset directory (created if needed). Output is
/// byte-for-byte deterministic.
pub fn save_dataset(ds: &Dataset, dir: &Path) -> Result<(), DataError> {
    std::fs::create_dir_all(dir).map_err(|e| DataError::io(dir, e))?;
    let path = dir.join(INSTANCES_FILE);
    let mut w = create(&path)?;
    let io = |e: std::io::Error| DataError::io(&path, e);
    let json = |e: serde_json::Error| DataError::io(&path, e);
    serde_json::to_writer(&mut w, &ds.header).map_err(json)?;
    writeln!(w).map_err(io)?;
    for r in &ds.records {
        serde_json::to_writer(&mut w, r).map_err(json)?;
        writeln!(w).map_err(io)?;
    }
    w.flush().map_err(io)?;

    if let Some(kb) = &ds.knowledge_base {
        write_json(&dir.join(KB_FILE), kb)?;
    }
    if !ds.embeddings.is_empty() {
        let p = dir.join(EMBEDDINGS_FILE);
        let mut w = create(&p)?;
        ds.embeddings.write_text(&mut w).map_err(|e| DataError::io(&p, e))?;
        w.flush().map_err(|e| DataError::io(&p, e))?;
    }
    Ok(())
}
