//! Question-guided attention and convolution blocks. Every block works on
//! whole layers at once: node features are `n x d` matrices on the tape and
//! the question embedding is a `1 x d_q` row.

use rand::RngCore;

use super::ModelError;
use crate::autodiff::{Tape, Tensor, Var};
use crate::graph::{LayerGraph, Question};

/// `x W + b` using `{name}.weight` and, if stored, `{name}.bias`.
pub fn linear(tape: &mut Tape<'_>, x: Var, name: &str) -> Result<Var, ModelError> {
    let w = tape.param(&format!("{name}.weight"))?;
    let y = tape.matmul(x, w)?;
    let bias = format!("{name}.bias");
    if tape.has_param(&bias) {
        let b = tape.param(&bias)?;
        Ok(tape.add_row(y, b)?)
    } else {
        Ok(y)
    }
}

/// Final hidden state of the LSTM stored under `prefix`.
pub fn encode_question(
    tape: &mut Tape<'_>,
    question: &Question,
    prefix: &str,
) -> Result<Var, ModelError> {
    let words = question.word_vectors();
    if words.is_empty() {
        return Err(ModelError::EmptyQuestion);
    }
    let hidden = tape
        .params_shape(&format!("{prefix}.input.hidden"))
        .ok_or_else(|| ModelError::MissingParam(format!("{prefix}.input.hidden")))?[1];
    let mut h = tape.constant(Tensor::zeros(1, hidden))?;
    let mut c = tape.constant(Tensor::zeros(1, hidden))?;
    for word in words {
        let x = tape.constant(Tensor::row(word.clone())?)?;
        let gate = |tape: &mut Tape<'_>, name: &str| -> Result<Var, ModelError> {
            let wx = tape.param(&format!("{prefix}.{name}.input"))?;
            let wh = tape.param(&format!("{prefix}.{name}.hidden"))?;
            let a = tape.matmul(x, wx)?;
            let b = tape.matmul(h, wh)?;
            let mut s = tape.add(a, b)?;
            let bias = format!("{prefix}.{name}.bias");
            if tape.has_param(&bias) {
                let bv = tape.param(&bias)?;
                s = tape.add_row(s, bv)?;
            }
            Ok(s)
        };
        let i = gate(tape, "input")?;
        let f = gate(tape, "forget")?;
        let o = gate(tape, "output")?;
        let g = gate(tape, "cell")?;
        let i = tape.sigmoid(i)?;
        let f = tape.sigmoid(f)?;
        let o = tape.sigmoid(o)?;
        let g = tape.tanh(g)?;
        let keep = tape.mul(f, c)?;
        let write = tape.mul(i, g)?;
        c = tape.add(keep, write)?;
        let squashed = tape.tanh(c)?;
        h = tape.mul(o, squashed)?;
    }
    Ok(h)
}

/// Edge list of a layer in tape-friendly form.
#[derive(Clone, Debug)]
pub struct Topology {
    pub nodes: usize,
    pub src: Vec<usize>,
    pub dst: Vec<usize>,
}

impl Topology {
    pub fn of(layer: &LayerGraph) -> Self {
        Self {
            nodes: layer.len(),
            src: layer.edges().iter().map(|e| e.src).collect(),
            dst: layer.edges().iter().map(|e| e.dst).collect(),
        }
    }

    pub fn has_edges(&self) -> bool {
        !self.src.is_empty()
    }
}

/// Node features, topology and edge features of one layer on the tape.
#[derive(Clone, Debug)]
pub struct LayerState {
    pub features: Var,
    pub topology: Topology,
    pub edge_features: Option<Var>,
}

impl LayerState {
    /// Records the layer's edge features; `features` are supplied by the caller.
    pub fn new(
        tape: &mut Tape<'_>,
        layer: &LayerGraph,
        features: Var,
        zero_relations: bool,
    ) -> Result<Self, ModelError> {
        let topology = Topology::of(layer);
        let edge_features = if topology.has_edges() {
            let rows: Vec<&[f64]> = layer.edges().iter().map(|e| e.feature.as_slice()).collect();
            let mut t = Tensor::from_rows(&rows)?;
            if zero_relations {
                t.data_mut().iter_mut().for_each(|v| *v = 0.0);
            }
            Some(tape.constant(t)?)
        } else {
            None
        };
        Ok(Self {
            features,
            topology,
            edge_features,
        })
    }

    pub fn with_features(&self, features: Var) -> Self {
        Self {
            features,
            topology: self.topology.clone(),
            edge_features: self.edge_features,
        }
    }
}

/// Copies the `1 x d` question row once per output row.
pub fn broadcast_rows(tape: &mut Tape<'_>, row: Var, n: usize) -> Result<Var, ModelError> {
    Ok(tape.gather_rows(row, &vec![0; n])?)
}

/// Question-guided node attention: `softmax_i(w_a . tanh(W1 v_i + W2 q))`
/// over every node of the layer. Returns an `n x 1` column.
pub fn node_attention(
    tape: &mut Tape<'_>,
    features: Var,
    q: Var,
    prefix: &str,
) -> Result<Var, ModelError> {
    let v = linear(tape, features, &format!("{prefix}.node.w1"))?;
    let qv = linear(tape, q, &format!("{prefix}.node.w2"))?;
    let s = tape.add_row(v, qv)?;
    let s = tape.tanh(s)?;
    let scores = linear(tape, s, &format!("{prefix}.node.score"))?;
    Ok(tape.softmax(scores)?)
}

/// Edge attention output: one weight per edge, normalized over the edges
/// entering the same node, plus the projected neighbor messages `v'_j`.
#[derive(Clone, Copy, Debug)]
pub struct EdgeAttention {
    pub weights: Var,
    pub neighbor_messages: Var,
}

/// `v'_j = W5 [v_j, r_ji]`, `q'_i = W6 [v_i, q]`,
/// `beta_ji = softmax_{j in N(i)}(w_b . tanh(W3 v'_j + W4 q'_i))`.
/// `None` when the layer has no edges.
pub fn edge_attention(
    tape: &mut Tape<'_>,
    layer: &LayerState,
    q: Var,
    prefix: &str,
) -> Result<Option<EdgeAttention>, ModelError> {
    let (Some(edges), true) = (layer.edge_features, layer.topology.has_edges()) else {
        return Ok(None);
    };
    let topo = &layer.topology;
    let src = tape.gather_rows(layer.features, &topo.src)?;
    let src_rel = tape.concat(&[src, edges])?;
    let v_prime = linear(tape, src_rel, &format!("{prefix}.edge.w5"))?;

    let q_rows = broadcast_rows(tape, q, topo.nodes)?;
    let centre = tape.concat(&[layer.features, q_rows])?;
    let q_prime = linear(tape, centre, &format!("{prefix}.edge.w6"))?;
    let q_term = linear(tape, q_prime, &format!("{prefix}.edge.w4"))?;
    let q_term = tape.gather_rows(q_term, &topo.dst)?;

    let v_term = linear(tape, v_prime, &format!("{prefix}.edge.w3"))?;
    let s = tape.add(v_term, q_term)?;
    let s = tape.tanh(s)?;
    let scores = linear(tape, s, &format!("{prefix}.edge.score"))?;
    let weights = tape.segment_softmax(scores, &topo.dst)?;
    Ok(Some(EdgeAttention {
        weights,
        neighbor_messages: v_prime,
    }))
}

/// Result of one intra-modal selection.
#[derive(Clone, Copy, Debug)]
pub struct IntraOutput {
    pub updated: Var,
    pub node_attention: Var,
    pub edge_attention: Option<Var>,
    pub messages: Var,
}

/// `m_i = sum_{j in N(i)} beta_ji v'_j`, `v^_i = ReLU(W7 [m_i, alpha_i v_i])`,
/// applied to all nodes from the pre-update features. Nodes without
/// incoming edges receive a zero message.
pub fn intra_modal_select(
    tape: &mut Tape<'_>,
    layer: &LayerState,
    q: Var,
    prefix: &str,
) -> Result<IntraOutput, ModelError> {
    let alpha = node_attention(tape, layer.features, q, prefix)?;
    let n = layer.topology.nodes;
    let hidden = tape.shape(layer.features)[1];
    let (messages, beta) = match edge_attention(tape, layer, q, prefix)? {
        Some(att) => {
            let weighted = tape.scale_rows(att.neighbor_messages, att.weights)?;
            let m = tape.scatter_add_rows(weighted, &layer.topology.dst, n)?;
            (m, Some(att.weights))
        }
        None => (tape.constant(Tensor::zeros(n, hidden))?, None),
    };
    let attended = tape.scale_rows(layer.features, alpha)?;
    let joined = tape.concat(&[messages, attended])?;
    let updated = linear(tape, joined, &format!("{prefix}.update.w7"))?;
    let updated = tape.relu(updated)?;
    Ok(IntraOutput {
        updated,
        node_attention: alpha,
        edge_attention: beta,
        messages,
    })
}

/// Cross-modal messages into the fact layer.
#[derive(Clone, Copy, Debug)]
pub struct CrossOutput {
    pub messages: Var,
    /// `(n_fact * n_source) x 1`, fact-major; `None` for an empty source.
    pub attention: Option<Var>,
}

/// How a source layer reaches the fact entities.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CrossMode {
    Convolution,
    /// Mean of all source nodes appended to every entity.
    MeanConcat,
}

/// `gamma_ji = softmax_j(w_c . tanh(W8 s_j + W9 [f_i, q]))`,
/// `m_i = sum_j gamma_ji s_j`, normalized over all source nodes.
/// An absent source yields zero messages.
pub fn cross_modal_conv(
    tape: &mut Tape<'_>,
    source: Option<Var>,
    fact: Var,
    q: Var,
    prefix: &str,
    mode: CrossMode,
) -> Result<CrossOutput, ModelError> {
    let [n_fact, hidden] = tape.shape(fact);
    let Some(source) = source else {
        return Ok(CrossOutput {
            messages: tape.constant(Tensor::zeros(n_fact, hidden))?,
            attention: None,
        });
    };
    if mode == CrossMode::MeanConcat {
        let mean = tape.mean_rows(source)?;
        return Ok(CrossOutput {
            messages: broadcast_rows(tape, mean, n_fact)?,
            attention: None,
        });
    }
    let n_source = tape.shape(source)[0];
    let fact_idx: Vec<usize> = (0..n_fact).flat_map(|i| std::iter::repeat_n(i, n_source)).collect();
    let source_idx: Vec<usize> = (0..n_fact).flat_map(|_| 0..n_source).collect();

    let s_term = linear(tape, source, &format!("{prefix}.w8"))?;
    let q_rows = broadcast_rows(tape, q, n_fact)?;
    let fq = tape.concat(&[fact, q_rows])?;
    let f_term = linear(tape, fq, &format!("{prefix}.w9"))?;
    let s_pairs = tape.gather_rows(s_term, &source_idx)?;
    let f_pairs = tape.gather_rows(f_term, &fact_idx)?;
    let t = tape.add(s_pairs, f_pairs)?;
    let t = tape.tanh(t)?;
    let scores = linear(tape, t, &format!("{prefix}.score"))?;
    let gamma = tape.segment_softmax(scores, &fact_idx)?;
    let src_rows = tape.gather_rows(source, &source_idx)?;
    let weighted = tape.scale_rows(src_rows, gamma)?;
    let messages = tape.scatter_add_rows(weighted, &fact_idx, n_fact)?;
    Ok(CrossOutput {
        messages,
        attention: Some(gamma),
    })
}

#[derive(Clone, Copy, Debug)]
pub struct GateOutput {
    pub fused: Var,
    pub gate: Var,
}

/// `gate_i = sigmoid(W10 [m_vf, m_sf, f])`, `f~_i = W11 (gate_i o [m_vf, m_sf, f])`.
pub fn gate_fuse(
    tape: &mut Tape<'_>,
    visual_messages: Var,
    semantic_messages: Var,
    fact: Var,
    prefix: &str,
) -> Result<GateOutput, ModelError> {
    let joined = tape.concat(&[visual_messages, semantic_messages, fact])?;
    let logits = linear(tape, joined, &format!("{prefix}.w10"))?;
    let gate = tape.sigmoid(logits)?;
    let gated = tape.mul(gate, joined)?;
    let fused = linear(tape, gated, &format!("{prefix}.w11"))?;
    Ok(GateOutput { fused, gate })
}

/// Fact-to-fact aggregation: the intra-modal block run over the fused
/// entity features with its own parameter set.
pub fn fact_aggregate(
    tape: &mut Tape<'_>,
    fact_layer: &LayerState,
    fused: Var,
    q: Var,
    prefix: &str,
) -> Result<IntraOutput, ModelError> {
    intra_modal_select(tape, &fact_layer.with_features(fused), q, prefix)
}

/// Inverted dropout driven by an optional generator; no generator means
/// evaluation mode.
pub fn maybe_dropout(
    tape: &mut Tape<'_>,
    x: Var,
    p: f64,
    rng: Option<&mut dyn RngCore>,
) -> Result<Var, ModelError> {
    match rng {
        Some(r) => Ok(tape.dropout(x, p, true, r)?),
        None => Ok(x),
    }
}
