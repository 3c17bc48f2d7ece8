use rand::RngCore;
use serde::{Deserialize, Serialize};

use super::layers::{
    broadcast_rows, cross_modal_conv, encode_question, fact_aggregate, gate_fuse,
    intra_modal_select, linear, maybe_dropout, CrossMode, IntraOutput, LayerState,
};
use super::params::{
    step_prefix, AGGREGATE, CLASSIFIER, CROSS_SEMANTIC, CROSS_VISUAL, FACT, GATE, QUESTION,
    SEMANTIC, VISUAL,
};
use super::{ModelConfig, ModelError};
use crate::autodiff::{ParamStore, Tape, Tensor, Var};
use crate::graph::{LayerGraph, MultiModalGraph};

/// Lower clamp for probabilities entering the log loss.
pub const PROB_CLAMP: f64 = 1e-12;

/// Whether dropout is active. Training mode carries the generator.
pub enum Mode<'r> {
    Eval,
    Train(&'r mut dyn RngCore),
}

impl Mode<'_> {
    fn rng(&mut self) -> Option<&mut dyn RngCore> {
        match self {
            Mode::Eval => None,
            Mode::Train(r) => Some(&mut **r),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EdgeWeight {
    pub src: usize,
    pub dst: usize,
    pub weight: f64,
}

/// Attention read-out of one intra-modal (or aggregation) block.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerTrace {
    pub alpha: Vec<f64>,
    pub beta: Vec<EdgeWeight>,
    pub messages: Vec<Vec<f64>>,
}

/// Everything needed to inspect one reasoning step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepTrace {
    pub visual: Option<LayerTrace>,
    pub semantic: Option<LayerTrace>,
    pub fact: LayerTrace,
    pub aggregate: LayerTrace,
    /// `fact x visual` attention; `None` when the visual convolution did not run.
    pub gamma_visual: Option<Vec<Vec<f64>>>,
    pub gamma_semantic: Option<Vec<Vec<f64>>>,
    /// Gate vector per entity over `[m_vf, m_sf, f]`.
    pub gates: Vec<Vec<f64>>,
    pub visual_messages: Vec<Vec<f64>>,
    pub semantic_messages: Vec<Vec<f64>>,
}

/// Independent answer probability per fact entity.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub probabilities: Vec<f64>,
}

impl Prediction {
    /// Entity indices by decreasing probability; ties by lower index.
    pub fn ranking(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.probabilities.len()).collect();
        idx.sort_by(|&a, &b| self.probabilities[b].total_cmp(&self.probabilities[a]));
        idx
    }

    pub fn top_k(&self, k: usize) -> Vec<usize> {
        let mut r = self.ranking();
        r.truncate(k);
        r
    }
}

/// Highest-probability entity, first index on ties.
pub fn predict_answer(prediction: &Prediction) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &p) in prediction.probabilities.iter().enumerate() {
        if best.is_none_or(|b| p > prediction.probabilities[b]) {
            best = Some(i);
        }
    }
    best
}

pub struct ForwardOutput {
    /// `n_fact x 1` probabilities.
    pub probabilities: Var,
    pub question: Var,
    pub traces: Vec<StepTrace>,
}

impl ForwardOutput {
    pub fn prediction(&self, tape: &Tape<'_>) -> Prediction {
        Prediction {
            probabilities: tape.value(self.probabilities).data().to_vec(),
        }
    }
}

fn rows_of(tape: &Tape<'_>, v: Var) -> Vec<Vec<f64>> {
    let t = tape.value(v);
    (0..t.rows()).map(|r| t.row_slice(r).to_vec()).collect()
}

fn layer_trace(tape: &Tape<'_>, out: &IntraOutput, layer: &LayerGraph) -> LayerTrace {
    let beta = out
        .edge_attention
        .map(|b| {
            layer
                .edges()
                .iter()
                .zip(tape.value(b).data())
                .map(|(e, &w)| EdgeWeight {
                    src: e.src,
                    dst: e.dst,
                    weight: w,
                })
                .collect()
        })
        .unwrap_or_default();
    LayerTrace {
        alpha: tape.value(out.node_attention).data().to_vec(),
        beta,
        messages: rows_of(tape, out.messages),
    }
}

fn gamma_matrix(tape: &Tape<'_>, gamma: Option<Var>, n_fact: usize) -> Option<Vec<Vec<f64>>> {
    gamma.map(|g| {
        let data = tape.value(g).data();
        let n_source = data.len() / n_fact;
        data.chunks(n_source).map(<[f64]>::to_vec).collect()
    })
}

fn check_dim(what: &'static str, layer: &LayerGraph, expected: usize) -> Result<(), ModelError> {
    if layer.node_dim() != expected {
        return Err(ModelError::Dimension {
            what,
            expected,
            actual: layer.node_dim(),
        });
    }
    Ok(())
}

fn project(tape: &mut Tape<'_>, layer: &LayerGraph, name: &str) -> Result<Var, ModelError> {
    let x = tape.constant(Tensor::from_rows(layer.nodes())?)?;
    linear(tape, x, &format!("{name}.project"))
}

/// Runs the full reasoning network on one instance.
///
/// Each step runs intra-modal selection on every present layer,
/// visual-to-fact and semantic-to-fact convolution, gated fusion, and
/// fact-to-fact aggregation. Visual and semantic features carry over
/// between steps; the fact features carry the aggregated entities.
pub fn forward(
    tape: &mut Tape<'_>,
    instance: &MultiModalGraph,
    config: &ModelConfig,
    mut mode: Mode<'_>,
    record_trace: bool,
) -> Result<ForwardOutput, ModelError> {
    config.validate()?;
    let ab = config.ablation;
    check_dim("fact node", &instance.fact, config.word_dim)?;
    if instance.fact.is_empty() {
        return Err(ModelError::EmptyFactLayer);
    }
    let use_visual = !ab.drop_visual && !instance.visual.is_empty();
    let use_semantic = !ab.drop_semantic && !instance.semantic.is_empty();
    if use_visual {
        check_dim("visual node", &instance.visual, config.visual_dim)?;
    }
    if use_semantic {
        check_dim("semantic node", &instance.semantic, config.word_dim)?;
    }

    let q = encode_question(tape, &instance.question, QUESTION)?;
    let n_fact = instance.fact.len();
    let p = config.dropout;

    let mut visual = if use_visual {
        let f = project(tape, &instance.visual, VISUAL)?;
        Some(LayerState::new(tape, &instance.visual, f, ab.no_relations)?)
    } else {
        None
    };
    let mut semantic = if use_semantic {
        let f = project(tape, &instance.semantic, SEMANTIC)?;
        Some(LayerState::new(tape, &instance.semantic, f, ab.no_relations)?)
    } else {
        None
    };
    let f0 = project(tape, &instance.fact, FACT)?;
    let mut fact = LayerState::new(tape, &instance.fact, f0, ab.no_relations)?;

    let mut traces = Vec::with_capacity(config.steps);
    for step in 0..config.steps {
        let slot = config.step_slot(step);

        let run_intra = |tape: &mut Tape<'_>,
                             state: &LayerState,
                             part: &str,
                             rng: Option<&mut dyn RngCore>|
         -> Result<(LayerState, IntraOutput), ModelError> {
            let out = intra_modal_select(tape, state, q, &step_prefix(slot, part))?;
            let dropped = maybe_dropout(tape, out.updated, p, rng)?;
            Ok((state.with_features(dropped), out))
        };

        let visual_step = match &visual {
            Some(s) => Some(run_intra(tape, s, VISUAL, mode.rng())?),
            None => None,
        };
        let semantic_step = match &semantic {
            Some(s) => Some(run_intra(tape, s, SEMANTIC, mode.rng())?),
            None => None,
        };
        let (fact_hat, fact_out) = run_intra(tape, &fact, FACT, mode.rng())?;

        let v_mode = if ab.visual_concat { CrossMode::MeanConcat } else { CrossMode::Convolution };
        let s_mode = if ab.semantic_concat { CrossMode::MeanConcat } else { CrossMode::Convolution };
        let cross_v = cross_modal_conv(
            tape,
            visual_step.as_ref().map(|(s, _)| s.features),
            fact_hat.features,
            q,
            &step_prefix(slot, CROSS_VISUAL),
            v_mode,
        )?;
        let cross_s = cross_modal_conv(
            tape,
            semantic_step.as_ref().map(|(s, _)| s.features),
            fact_hat.features,
            q,
            &step_prefix(slot, CROSS_SEMANTIC),
            s_mode,
        )?;
        let gate = gate_fuse(
            tape,
            cross_v.messages,
            cross_s.messages,
            fact_hat.features,
            &step_prefix(slot, GATE),
        )?;
        let agg = fact_aggregate(tape, &fact, gate.fused, q, &step_prefix(slot, AGGREGATE))?;

        if record_trace {
            traces.push(StepTrace {
                visual: visual_step
                    .as_ref()
                    .map(|(_, o)| layer_trace(tape, o, &instance.visual)),
                semantic: semantic_step
                    .as_ref()
                    .map(|(_, o)| layer_trace(tape, o, &instance.semantic)),
                fact: layer_trace(tape, &fact_out, &instance.fact),
                aggregate: layer_trace(tape, &agg, &instance.fact),
                gamma_visual: gamma_matrix(tape, cross_v.attention, n_fact),
                gamma_semantic: gamma_matrix(tape, cross_s.attention, n_fact),
                gates: rows_of(tape, gate.gate),
                visual_messages: rows_of(tape, cross_v.messages),
                semantic_messages: rows_of(tape, cross_s.messages),
            });
        }

        visual = visual_step.map(|(s, _)| s);
        semantic = semantic_step.map(|(s, _)| s);
        fact = fact.with_features(agg.updated);
    }

    let q_rows = broadcast_rows(tape, q, n_fact)?;
    let z = tape.concat(&[fact.features, q_rows])?;
    let z = maybe_dropout(tape, z, p, mode.rng())?;
    let hidden = linear(tape, z, &format!("{CLASSIFIER}.hidden"))?;
    let hidden = tape.relu(hidden)?;
    let logits = linear(tape, hidden, &format!("{CLASSIFIER}.output"))?;
    let probabilities = tape.sigmoid(logits)?;
    Ok(ForwardOutput {
        probabilities,
        question: q,
        traces,
    })
}

/// Evaluation-mode forward pass returning plain values.
pub fn predict(
    params: &ParamStore,
    instance: &MultiModalGraph,
    config: &ModelConfig,
) -> Result<(Prediction, Vec<StepTrace>), ModelError> {
    let mut tape = Tape::with_params(params);
    let out = forward(&mut tape, instance, config, Mode::Eval, true)?;
    Ok((out.prediction(&tape), out.traces))
}

fn check_labels(labels: &[f64], n: usize, a: f64, b: f64) -> Result<(), ModelError> {
    if labels.len() != n {
        return Err(ModelError::Dimension {
            what: "label",
            expected: n,
            actual: labels.len(),
        });
    }
    if let Some(&bad) = labels.iter().find(|&&y| y != 0.0 && y != 1.0) {
        return Err(ModelError::Label(bad));
    }
    if !(a > 0.0 && b > 0.0) {
        return Err(ModelError::Config(format!(
            "loss weights must be positive, got a={a} b={b}"
        )));
    }
    Ok(())
}

/// Weighted binary cross-entropy summed over entities:
/// `-sum_i [a y_i ln p_i + b (1 - y_i) ln(1 - p_i)]`, with `p` clamped to
/// `[1e-12, 1 - 1e-12]`.
pub fn bce_loss(
    tape: &mut Tape<'_>,
    probabilities: Var,
    labels: &[f64],
    a: f64,
    b: f64,
) -> Result<Var, ModelError> {
    let [n, cols] = tape.shape(probabilities);
    check_labels(labels, n * cols, a, b)?;
    let p = tape.clamp(probabilities, PROB_CLAMP, 1.0 - PROB_CLAMP)?;
    let ln_p = tape.ln(p)?;
    let one_minus = tape.affine(p, -1.0, 1.0)?;
    let ln_q = tape.ln(one_minus)?;
    let pos = tape.constant(Tensor::new(n, cols, labels.iter().map(|y| -a * y).collect())?)?;
    let neg = tape.constant(Tensor::new(n, cols, labels.iter().map(|y| -b * (1.0 - y)).collect())?)?;
    let t1 = tape.mul(pos, ln_p)?;
    let t2 = tape.mul(neg, ln_q)?;
    let total = tape.add(t1, t2)?;
    Ok(tape.sum(total)?)
}

/// Plain-value version of [`bce_loss`].
pub fn bce_value(probabilities: &[f64], labels: &[f64], a: f64, b: f64) -> Result<f64, ModelError> {
    check_labels(labels, probabilities.len(), a, b)?;
    Ok(probabilities
        .iter()
        .zip(labels)
        .map(|(&p, &y)| {
            let p = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
            -(a * y * p.ln() + b * (1.0 - y) * (1.0 - p).ln())
        })
        .sum())
}
