use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{CandidateSource, DataError, Dataset, InstanceRecord, ValidationReport};
use crate::graph::{
    build_fact_graph, build_semantic_graph, build_visual_graph, tokenize, LayerGraph, LayerKind,
    MultiModalGraph, Question, DEFAULT_MAX_OBJECTS, DEFAULT_MAX_QUESTION_LEN,
};
use crate::retrieval::{
    filter_or_fallback, retrieve_top_k, score_fact, CandidateFactSet, RelationClassifier,
    ScoreReduction, DEFAULT_TOP_FACTS, DEFAULT_TOP_RELATIONS,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PrepareOptions {
    /// Facts kept after similarity scoring (knowledge-base records only).
    pub top_facts: usize,
    /// Relation types kept by the filter.
    pub top_relations: usize,
    pub relation_filter: bool,
    pub reduction: ScoreReduction,
    pub max_objects: usize,
    pub max_question_len: usize,
    /// Accept records without objects or triples.
    pub allow_empty_layers: bool,
}

impl Default for PrepareOptions {
    fn default() -> Self {
        Self {
            top_facts: DEFAULT_TOP_FACTS,
            top_relations: DEFAULT_TOP_RELATIONS,
            relation_filter: true,
            reduction: ScoreReduction::MeanOfPairs,
            max_objects: DEFAULT_MAX_OBJECTS,
            max_question_len: DEFAULT_MAX_QUESTION_LEN,
            allow_empty_layers: false,
        }
    }
}

/// A record turned into model input.
#[derive(Clone, Debug, PartialEq)]
pub struct PreparedInstance {
    pub id: String,
    pub graph: MultiModalGraph,
    pub candidates: CandidateFactSet,
}

impl PreparedInstance {
    pub fn entities(&self) -> &[String] {
        self.graph.fact.labels()
    }
}

fn question_of(rec: &InstanceRecord, ds: &Dataset, opts: &PrepareOptions) -> Result<Question, DataError> {
    let tokens = tokenize(&rec.question.join(" "));
    Ok(Question::new(&tokens, &ds.embeddings, opts.max_question_len)?)
}

fn with_id<'a>(rec: &'a InstanceRecord, field: &'static str) -> impl Fn(DataError) -> DataError + 'a {
    move |e| match e {
        e @ DataError::Schema { .. } => e,
        other => DataError::Schema {
            id: rec.id.clone(),
            field,
            message: other.to_string(),
        },
    }
}

fn candidates_of(
    rec: &InstanceRecord,
    ds: &Dataset,
    question: &Question,
    opts: &PrepareOptions,
    classifier: &RelationClassifier,
) -> Result<CandidateFactSet, DataError> {
    let ids = match &rec.candidates {
        CandidateSource::Inline { facts } => return Ok(CandidateFactSet::unscored(facts.clone())),
        CandidateSource::KnowledgeBase { fact_ids } => fact_ids,
    };
    let kb = ds
        .knowledge_base
        .as_ref()
        .ok_or_else(|| DataError::MissingKnowledgeBase(super::KB_FILE.into()))?;
    let pool: Vec<_> = if ids.is_empty() {
        kb.facts.clone()
    } else {
        ids.iter().map(|&i| kb.facts[i].clone()).collect()
    };
    let concepts: Vec<String> = rec.objects.iter().flat_map(|o| tokenize(&o.label)).collect();
    let top = retrieve_top_k(
        &pool,
        |f| score_fact(f, question.tokens(), &concepts, &ds.embeddings, opts.reduction),
        opts.top_facts,
    )?;
    if !opts.relation_filter || classifier.is_pass_through() {
        return Ok(top);
    }
    let prediction = classifier.predict(question)?;
    Ok(filter_or_fallback(&top, &prediction, opts.top_relations)?)
}

fn prepare_one(
    rec: &InstanceRecord,
    ds: &Dataset,
    opts: &PrepareOptions,
    classifier: &RelationClassifier,
) -> Result<(PreparedInstance, Option<String>), DataError> {
    let question = question_of(rec, ds, opts).map_err(with_id(rec, "question"))?;
    let visual = build_visual_graph(
        &rec.objects,
        ds.header.visual_dim,
        opts.max_objects,
        opts.allow_empty_layers,
    )
    .map_err(|e| with_id(rec, "objects")(e.into()))?;
    let semantic = if rec.triples.is_empty() && opts.allow_empty_layers {
        LayerGraph::new(LayerKind::Semantic, ds.header.word_dim, ds.header.word_dim)?
    } else if rec.triples.is_empty() {
        return Err(DataError::Schema {
            id: rec.id.clone(),
            field: "triples",
            message: "semantic layer is empty".into(),
        });
    } else {
        build_semantic_graph(&rec.triples, &ds.embeddings)
            .map_err(|e| with_id(rec, "triples")(e.into()))?
    };
    let candidates =
        candidates_of(rec, ds, &question, opts, classifier).map_err(with_id(rec, "candidates"))?;
    let fact = build_fact_graph(&candidates, &ds.embeddings)
        .map_err(|e| with_id(rec, "candidates")(e.into()))?;
    let answer = fact.labels().iter().position(|l| *l == rec.answer);
    let issue = answer
        .is_none()
        .then(|| format!("answer `{}` is not among the candidate entities", rec.answer));
    let graph = MultiModalGraph::new(visual, semantic, fact, question, answer)?;
    Ok((
        PreparedInstance {
            id: rec.id.clone(),
            graph,
            candidates,
        },
        issue,
    ))
}

/// Builds the three layers and the question for each record. Knowledge-base
/// records go through scoring, top-k and the relation filter (falling back
/// to the unfiltered set when the filter empties it; skipped entirely for a
/// pass-through classifier). Instances whose
/// answer is not among the candidate entities keep `answer: None` and are
/// listed in the report.
pub fn prepare_instances(
    ds: &Dataset,
    records: &[&InstanceRecord],
    opts: &PrepareOptions,
    classifier: &RelationClassifier,
) -> Result<(Vec<PreparedInstance>, ValidationReport), DataError> {
    let results = records
        .par_iter()
        .map(|r| prepare_one(r, ds, opts, classifier))
        .collect::<Result<Vec<_>, _>>()?;
    let mut report = ValidationReport::default();
    let mut out = Vec::with_capacity(results.len());
    for (inst, issue) in results {
        if let Some(msg) = issue {
            report.push(&inst.id, msg);
        }
        out.push(inst);
    }
    Ok((out, report))
}

/// `(question, relation)` pairs for classifier training from labelled records.
pub fn relation_examples(
    ds: &Dataset,
    records: &[&InstanceRecord],
    opts: &PrepareOptions,
) -> Result<Vec<(Question, String)>, DataError> {
    records
        .iter()
        .filter_map(|r| r.relation.as_ref().map(|rel| (r, rel)))
        .map(|(r, rel)| Ok((question_of(r, ds, opts).map_err(with_id(r, "question"))?, rel.clone())))
        .collect()
}
