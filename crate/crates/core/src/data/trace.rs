use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{read_json, write_json, DataError, PreparedInstance};
use crate::autodiff::ParamStore;
use crate::model::{predict, predict_answer, EdgeWeight, LayerTrace, ModelConfig, StepTrace};

pub const TRACE_FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TraceOptions {
    /// In-neighbors listed per node, by edge attention.
    pub top_neighbors: usize,
    /// Source nodes listed per entity, by cross-modal attention.
    pub top_sources: usize,
    /// Keep full gate vectors next to the per-segment means.
    pub raw_gates: bool,
}

impl Default for TraceOptions {
    fn default() -> Self {
        Self {
            top_neighbors: 4,
            top_sources: 2,
            raw_gates: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Neighbor {
    pub index: usize,
    pub label: String,
    pub weight: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerTraceExport {
    pub labels: Vec<String>,
    pub alpha: Vec<f64>,
    pub beta: Vec<EdgeWeight>,
    /// Per node, the most attended incoming neighbors.
    pub top_neighbors: Vec<Vec<Neighbor>>,
}

/// Mean gate activation over each concatenated segment.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GateSummary {
    pub visual: f64,
    pub semantic: f64,
    pub entity: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepTraceExport {
    pub step: usize,
    pub visual: Option<LayerTraceExport>,
    pub semantic: Option<LayerTraceExport>,
    pub fact: LayerTraceExport,
    pub aggregate: LayerTraceExport,
    /// Rows are fact entities, columns source nodes.
    pub gamma_visual: Option<Vec<Vec<f64>>>,
    pub gamma_semantic: Option<Vec<Vec<f64>>>,
    pub top_visual_sources: Option<Vec<Vec<Neighbor>>>,
    pub top_semantic_sources: Option<Vec<Vec<Neighbor>>>,
    pub gates: Vec<GateSummary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw_gates: Option<Vec<Vec<f64>>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InstanceTrace {
    pub id: String,
    pub question: Vec<String>,
    pub entities: Vec<String>,
    pub answer: Option<usize>,
    pub probabilities: Vec<f64>,
    /// Entity indices by decreasing probability.
    pub ranking: Vec<usize>,
    pub predicted: usize,
    pub steps: Vec<StepTraceExport>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceFile {
    pub format_version: u32,
    pub instances: Vec<InstanceTrace>,
}

impl TraceFile {
    pub fn save(&self, path: &Path) -> Result<(), DataError> {
        write_json(path, self)
    }

    pub fn load(path: &Path) -> Result<Self, DataError> {
        let t: Self = read_json(path)?;
        if t.format_version != TRACE_FORMAT_VERSION {
            return Err(DataError::Version {
                what: "trace",
                found: t.format_version,
                expected: TRACE_FORMAT_VERSION,
            });
        }
        Ok(t)
    }
}

fn top_weighted(weights: impl Iterator<Item = (usize, f64)>, labels: &[String], k: usize) -> Vec<Neighbor> {
    let mut all: Vec<(usize, f64)> = weights.collect();
    all.sort_by(|a, b| b.1.total_cmp(&a.1));
    all.into_iter()
        .take(k)
        .map(|(index, weight)| Neighbor {
            index,
            label: labels[index].clone(),
            weight,
        })
        .collect()
}

fn export_layer(t: &LayerTrace, labels: &[String], k: usize) -> LayerTraceExport {
    let top_neighbors = (0..labels.len())
        .map(|node| {
            let incoming = t.beta.iter().filter(|e| e.dst == node).map(|e| (e.src, e.weight));
            top_weighted(incoming, labels, k)
        })
        .collect();
    LayerTraceExport {
        labels: labels.to_vec(),
        alpha: t.alpha.clone(),
        beta: t.beta.clone(),
        top_neighbors,
    }
}

fn top_sources(gamma: &Option<Vec<Vec<f64>>>, labels: &[String], k: usize) -> Option<Vec<Vec<Neighbor>>> {
    gamma.as_ref().map(|rows| {
        rows.iter()
            .map(|row| top_weighted(row.iter().copied().enumerate(), labels, k))
            .collect()
    })
}

fn summarize_gate(gate: &[f64]) -> GateSummary {
    let h = gate.len() / 3;
    let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
    GateSummary {
        visual: mean(&gate[..h]),
        semantic: mean(&gate[h..2 * h]),
        entity: mean(&gate[2 * h..]),
    }
}

fn export_step(step: usize, t: &StepTrace, inst: &PreparedInstance, opts: &TraceOptions) -> StepTraceExport {
    let g = &inst.graph;
    StepTraceExport {
        step,
        visual: t.visual.as_ref().map(|l| export_layer(l, g.visual.labels(), opts.top_neighbors)),
        semantic: t
            .semantic
            .as_ref()
            .map(|l| export_layer(l, g.semantic.labels(), opts.top_neighbors)),
        fact: export_layer(&t.fact, g.fact.labels(), opts.top_neighbors),
        aggregate: export_layer(&t.aggregate, g.fact.labels(), opts.top_neighbors),
        gamma_visual: t.gamma_visual.clone(),
        gamma_semantic: t.gamma_semantic.clone(),
        top_visual_sources: top_sources(&t.gamma_visual, g.visual.labels(), opts.top_sources),
        top_semantic_sources: top_sources(&t.gamma_semantic, g.semantic.labels(), opts.top_sources),
        gates: t.gates.iter().map(|r| summarize_gate(r)).collect(),
        raw_gates: opts.raw_gates.then(|| t.gates.clone()),
    }
}

/// Evaluation-mode forward pass over each instance with every step's
/// attention and gate read-outs.
pub fn export_trace(
    instances: &[PreparedInstance],
    params: &ParamStore,
    model: &ModelConfig,
    opts: &TraceOptions,
) -> Result<TraceFile, DataError> {
    let traces = instances
        .par_iter()
        .map(|inst| {
            let (pred, steps) = predict(params, &inst.graph, model)?;
            let predicted = predict_answer(&pred).ok_or(crate::model::ModelError::EmptyFactLayer)?;
            Ok(InstanceTrace {
                id: inst.id.clone(),
                question: inst.graph.question.tokens().to_vec(),
                entities: inst.entities().to_vec(),
                answer: inst.graph.answer,
                ranking: pred.ranking(),
                probabilities: pred.probabilities,
                predicted,
                steps: steps
                    .iter()
                    .enumerate()
                    .map(|(i, s)| export_step(i, s, inst, opts))
                    .collect(),
            })
        })
        .collect::<Result<Vec<_>, DataError>>()?;
    Ok(TraceFile {
        format_version: TRACE_FORMAT_VERSION,
        instances: traces,
    })
}

fn check_sum(out: &mut Vec<String>, what: String, values: impl Iterator<Item = f64>, tol: f64) {
    let mut total = 0.0;
    for v in values {
        if !(v >= 0.0) {
            out.push(format!("{what}: negative weight {v}"));
        }
        total += v;
    }
    if (total - 1.0).abs() > tol {
        out.push(format!("{what}: sums to {total}"));
    }
}

fn check_layer(out: &mut Vec<String>, ctx: &str, l: &LayerTraceExport, tol: f64) {
    check_sum(out, format!("{ctx} alpha"), l.alpha.iter().copied(), tol);
    let mut by_dst: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    for e in &l.beta {
        by_dst.entry(e.dst).or_default().push(e.weight);
    }
    for (dst, w) in by_dst {
        check_sum(out, format!("{ctx} beta into {dst}"), w.into_iter(), tol);
    }
}

fn in_unit_interval(x: f64) -> bool {
    x > 0.0 && x < 1.0
}

/// Lists every violated invariant: attention distributions summing to 1
/// within `tol`, gate values strictly inside (0, 1), and the first ranked
/// entity matching the prediction.
pub fn check_trace(trace: &TraceFile, tol: f64) -> Vec<String> {
    let mut out = Vec::new();
    for inst in &trace.instances {
        if inst.ranking.first() != Some(&inst.predicted) {
            out.push(format!("{}: ranking does not start with the prediction", inst.id));
        }
        for s in &inst.steps {
            let ctx = format!("{} step {}", inst.id, s.step);
            for (name, layer) in [("visual", &s.visual), ("semantic", &s.semantic)] {
                if let Some(l) = layer {
                    check_layer(&mut out, &format!("{ctx} {name}"), l, tol);
                }
            }
            check_layer(&mut out, &format!("{ctx} fact"), &s.fact, tol);
            check_layer(&mut out, &format!("{ctx} aggregate"), &s.aggregate, tol);
            for (name, gamma) in [("gamma_visual", &s.gamma_visual), ("gamma_semantic", &s.gamma_semantic)] {
                for (i, row) in gamma.iter().flatten().enumerate() {
                    check_sum(&mut out, format!("{ctx} {name} row {i}"), row.iter().copied(), tol);
                }
            }
            for (i, g) in s.gates.iter().enumerate() {
                if ![g.visual, g.semantic, g.entity].into_iter().all(in_unit_interval) {
                    out.push(format!("{ctx} gate summary {i} outside (0, 1)"));
                }
            }
            for (i, row) in s.raw_gates.iter().flatten().enumerate() {
                if !row.iter().copied().all(in_unit_interval) {
                    out.push(format!("{ctx} raw gate {i} outside (0, 1)"));
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, prepare_instances, PrepareOptions, SyntheticSpec};
    use crate::model::init_params;
    use crate::retrieval::RelationClassifier;

    fn setup() -> (Vec<PreparedInstance>, ModelConfig, ParamStore) {
        let spec = SyntheticSpec {
            train_instances: 6,
            test_instances: 0,
            ..SyntheticSpec::default()
        };
        let ds = generate_synthetic(&spec).unwrap();
        let recs: Vec<_> = ds.records.iter().collect();
        let clf = RelationClassifier::pass_through(ds.header.relations.clone()).unwrap();
        let (inst, report) = prepare_instances(&ds, &recs, &PrepareOptions::default(), &clf).unwrap();
        assert!(report.is_clean());
        let model = ModelConfig::desk();
        let params = init_params(&model, 2).unwrap();
        (inst, model, params)
    }

    #[test]
    fn exported_trace_is_consistent() {
        let (inst, model, params) = setup();
        let opts = TraceOptions {
            raw_gates: true,
            ..TraceOptions::default()
        };
        let t = export_trace(&inst, &params, &model, &opts).unwrap();
        assert!(check_trace(&t, 1e-6).is_empty());
        for (it, pi) in t.instances.iter().zip(&inst) {
            let (pred, _) = predict(&params, &pi.graph, &model).unwrap();
            assert_eq!(it.predicted, predict_answer(&pred).unwrap());
            assert_eq!(it.steps.len(), model.steps);
            let s0 = &it.steps[0];
            assert!(s0.fact.top_neighbors.iter().all(|n| n.len() <= 4));
            assert!(s0.top_visual_sources.as_ref().unwrap().iter().all(|n| n.len() == 2));
        }
        let again = export_trace(&inst, &params, &model, &opts).unwrap();
        assert_eq!(t, again);
    }

    #[test]
    fn file_round_trip() {
        let (inst, model, params) = setup();
        let t = export_trace(&inst[..2], &params, &model, &TraceOptions::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("trace.json");
        t.save(&p).unwrap();
        assert_eq!(TraceFile::load(&p).unwrap(), t);
    }

    #[test]
    fn checker_flags_bad_distributions() {
        let (inst, model, params) = setup();
        let mut t = export_trace(&inst[..1], &params, &model, &TraceOptions::default()).unwrap();
        t.instances[0].steps[0].fact.alpha[0] += 0.01;
        t.instances[0].steps[0].gates[0].entity = 1.0;
        let v = check_trace(&t, 1e-6);
        assert_eq!(v.len(), 2, "{v:?}");
    }

    #[test]
    fn gate_summary_means_segments() {
        let s = summarize_gate(&[0.1, 0.3, 0.5, 0.5, 0.9, 0.7]);
        assert!((s.visual - 0.2).abs() < 1e-15);
        assert!((s.semantic - 0.5).abs() < 1e-15);
        assert!((s.entity - 0.8).abs() < 1e-15);
    }
}
