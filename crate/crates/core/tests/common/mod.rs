//! Test-side helpers: a dense, loop-based re-implementation of the
//! reasoning network and random instance generators. Nothing here calls
//! into the library's model code; only graph containers and parameter
//! storage are shared.

#![allow(dead_code)]

use mucko::autodiff::ParamStore;
use mucko::graph::{LayerGraph, LayerKind, MultiModalGraph, Question};
use mucko::model::ModelConfig;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Matrix = Vec<Vec<f64>>;

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

fn softmax(xs: &[f64]) -> Vec<f64> {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = xs.iter().map(|x| (x - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|x| x / s).collect()
}

fn cat(parts: &[&[f64]]) -> Vec<f64> {
    parts.iter().flat_map(|p| p.iter().copied()).collect()
}

/// `x W + b` read element by element from the store.
pub fn dense(p: &ParamStore, name: &str, x: &[f64]) -> Vec<f64> {
    let w = p.get(&format!("{name}.weight")).unwrap_or_else(|| panic!("no {name}.weight"));
    assert_eq!(w.rows(), x.len(), "{name}: input width");
    let mut y = vec![0.0; w.cols()];
    for (j, yj) in y.iter_mut().enumerate() {
        for (i, xi) in x.iter().enumerate() {
            *yj += xi * w.get(i, j);
        }
    }
    if let Some(b) = p.get(&format!("{name}.bias")) {
        for (j, yj) in y.iter_mut().enumerate() {
            *yj += b.get(0, j);
        }
    }
    y
}

fn dot_score(p: &ParamStore, name: &str, x: &[f64]) -> f64 {
    dense(p, name, x)[0]
}

pub fn lstm(p: &ParamStore, words: &[Vec<f64>]) -> Vec<f64> {
    let hidden = p.get("question.input.hidden").unwrap().rows();
    let mut h = vec![0.0; hidden];
    let mut c = vec![0.0; hidden];
    for x in words {
        let gate = |g: &str, h: &[f64]| -> Vec<f64> {
            let wx = p.get(&format!("question.{g}.input")).unwrap();
            let wh = p.get(&format!("question.{g}.hidden")).unwrap();
            let b = p.get(&format!("question.{g}.bias"));
            (0..hidden)
                .map(|j| {
                    let mut s = 0.0;
                    for (i, xi) in x.iter().enumerate() {
                        s += xi * wx.get(i, j);
                    }
                    for (i, hi) in h.iter().enumerate() {
                        s += hi * wh.get(i, j);
                    }
                    s + b.map_or(0.0, |b| b.get(0, j))
                })
                .collect()
        };
        let i = gate("input", &h);
        let f = gate("forget", &h);
        let o = gate("output", &h);
        let g = gate("cell", &h);
        for j in 0..hidden {
            c[j] = sigmoid(f[j]) * c[j] + sigmoid(i[j]) * g[j].tanh();
            h[j] = sigmoid(o[j]) * c[j].tanh();
        }
    }
    h
}

#[derive(Clone, Debug)]
pub struct IntraResult {
    pub updated: Matrix,
    pub alpha: Vec<f64>,
    /// Per edge, in the layer's edge order.
    pub beta: Vec<f64>,
}

/// One intra-modal selection over `feats` with the layer's topology.
pub fn intra(
    p: &ParamStore,
    prefix: &str,
    feats: &Matrix,
    layer: &LayerGraph,
    zero_relations: bool,
    q: &[f64],
) -> IntraResult {
    let n = feats.len();
    let h = feats[0].len();
    let qa = dense(p, &format!("{prefix}.node.w2"), q);
    let scores: Vec<f64> = feats
        .iter()
        .map(|v| {
            let a = dense(p, &format!("{prefix}.node.w1"), v);
            let t: Vec<f64> = a.iter().zip(&qa).map(|(x, y)| (x + y).tanh()).collect();
            dot_score(p, &format!("{prefix}.node.score"), &t)
        })
        .collect();
    let alpha = softmax(&scores);

    let edges = layer.edges();
    let mut beta = vec![0.0; edges.len()];
    let mut messages = vec![vec![0.0; h]; n];
    let v_prime: Vec<Vec<f64>> = edges
        .iter()
        .map(|e| {
            let r: Vec<f64> = if zero_relations {
                vec![0.0; e.feature.len()]
            } else {
                e.feature.clone()
            };
            dense(p, &format!("{prefix}.edge.w5"), &cat(&[&feats[e.src], &r]))
        })
        .collect();
    for i in 0..n {
        let incoming: Vec<usize> = (0..edges.len()).filter(|&k| edges[k].dst == i).collect();
        if incoming.is_empty() {
            continue;
        }
        let q_prime = dense(p, &format!("{prefix}.edge.w6"), &cat(&[&feats[i], q]));
        let q_term = dense(p, &format!("{prefix}.edge.w4"), &q_prime);
        let s: Vec<f64> = incoming
            .iter()
            .map(|&k| {
                let v_term = dense(p, &format!("{prefix}.edge.w3"), &v_prime[k]);
                let t: Vec<f64> = v_term.iter().zip(&q_term).map(|(a, b)| (a + b).tanh()).collect();
                dot_score(p, &format!("{prefix}.edge.score"), &t)
            })
            .collect();
        for (&k, w) in incoming.iter().zip(softmax(&s)) {
            beta[k] = w;
            for d in 0..h {
                messages[i][d] += w * v_prime[k][d];
            }
        }
    }
    let updated = (0..n)
        .map(|i| {
            let scaled: Vec<f64> = feats[i].iter().map(|x| alpha[i] * x).collect();
            dense(p, &format!("{prefix}.update.w7"), &cat(&[&messages[i], &scaled]))
                .into_iter()
                .map(|x| x.max(0.0))
                .collect()
        })
        .collect();
    IntraResult { updated, alpha, beta }
}

/// Messages into each fact entity and the `fact x source` attention.
pub fn cross(
    p: &ParamStore,
    prefix: &str,
    source: Option<&Matrix>,
    fact: &Matrix,
    q: &[f64],
    mean_concat: bool,
) -> (Matrix, Option<Matrix>) {
    let h = fact[0].len();
    let Some(source) = source else {
        return (vec![vec![0.0; h]; fact.len()], None);
    };
    if mean_concat {
        let mut mean = vec![0.0; h];
        for s in source {
            for d in 0..h {
                mean[d] += s[d] / source.len() as f64;
            }
        }
        return (vec![mean; fact.len()], None);
    }
    let s_terms: Vec<Vec<f64>> = source.iter().map(|s| dense(p, &format!("{prefix}.w8"), s)).collect();
    let mut messages = Vec::new();
    let mut gamma = Vec::new();
    for f in fact {
        let f_term = dense(p, &format!("{prefix}.w9"), &cat(&[f, q]));
        let scores: Vec<f64> = s_terms
            .iter()
            .map(|st| {
                let t: Vec<f64> = st.iter().zip(&f_term).map(|(a, b)| (a + b).tanh()).collect();
                dot_score(p, &format!("{prefix}.score"), &t)
            })
            .collect();
        let g = softmax(&scores);
        let mut m = vec![0.0; h];
        for (w, s) in g.iter().zip(source) {
            for d in 0..h {
                m[d] += w * s[d];
            }
        }
        messages.push(m);
        gamma.push(g);
    }
    (messages, Some(gamma))
}

#[derive(Clone, Debug)]
pub struct OracleStep {
    pub visual: Option<IntraResult>,
    pub semantic: Option<IntraResult>,
    pub fact: IntraResult,
    pub aggregate: IntraResult,
    pub gamma_visual: Option<Matrix>,
    pub gamma_semantic: Option<Matrix>,
    pub gates: Matrix,
}

#[derive(Clone, Debug)]
pub struct OracleOutput {
    pub probabilities: Vec<f64>,
    pub question: Vec<f64>,
    pub steps: Vec<OracleStep>,
}

fn project(p: &ParamStore, name: &str, layer: &LayerGraph) -> Matrix {
    layer
        .nodes()
        .iter()
        .map(|v| dense(p, &format!("{name}.project"), v))
        .collect()
}

/// Evaluation-mode forward pass written as plain loops.
pub fn dense_forward(p: &ParamStore, g: &MultiModalGraph, cfg: &ModelConfig) -> OracleOutput {
    let ab = cfg.ablation;
    let zr = ab.no_relations;
    let q = lstm(p, g.question.word_vectors());
    let use_v = !ab.drop_visual && !g.visual.is_empty();
    let use_s = !ab.drop_semantic && !g.semantic.is_empty();
    let mut vis = use_v.then(|| project(p, "visual", &g.visual));
    let mut sem = use_s.then(|| project(p, "semantic", &g.semantic));
    let mut fact = project(p, "fact", &g.fact);
    let mut steps = Vec::new();
    for t in 0..cfg.steps {
        let slot = if cfg.share_step_weights { 0 } else { t };
        let pre = |part: &str| format!("step{slot}.{part}");
        let v_out = vis.as_ref().map(|v| intra(p, &pre("visual"), v, &g.visual, zr, &q));
        let s_out = sem.as_ref().map(|s| intra(p, &pre("semantic"), s, &g.semantic, zr, &q));
        let f_out = intra(p, &pre("fact"), &fact, &g.fact, zr, &q);
        let (mv, gv) = cross(
            p,
            &pre("cross_visual"),
            v_out.as_ref().map(|o| &o.updated),
            &f_out.updated,
            &q,
            ab.visual_concat,
        );
        let (ms, gs) = cross(
            p,
            &pre("cross_semantic"),
            s_out.as_ref().map(|o| &o.updated),
            &f_out.updated,
            &q,
            ab.semantic_concat,
        );
        let mut fused = Vec::new();
        let mut gates = Vec::new();
        for i in 0..fact.len() {
            let z = cat(&[&mv[i], &ms[i], &f_out.updated[i]]);
            let gate: Vec<f64> = dense(p, &pre("gate.w10"), &z).into_iter().map(sigmoid).collect();
            let gated: Vec<f64> = gate.iter().zip(&z).map(|(a, b)| a * b).collect();
            fused.push(dense(p, &pre("gate.w11"), &gated));
            gates.push(gate);
        }
        let agg = intra(p, &pre("aggregate"), &fused, &g.fact, zr, &q);
        fact = agg.updated.clone();
        vis = v_out.as_ref().map(|o| o.updated.clone());
        sem = s_out.as_ref().map(|o| o.updated.clone());
        steps.push(OracleStep {
            visual: v_out,
            semantic: s_out,
            fact: f_out,
            aggregate: agg,
            gamma_visual: gv,
            gamma_semantic: gs,
            gates,
        });
    }
    let probabilities = fact
        .iter()
        .map(|f| {
            let hidden: Vec<f64> = dense(p, "classifier.hidden", &cat(&[f, &q]))
                .into_iter()
                .map(|x| x.max(0.0))
                .collect();
            sigmoid(dense(p, "classifier.output", &hidden)[0])
        })
        .collect();
    OracleOutput {
        probabilities,
        question: q,
        steps,
    }
}

/// Weighted binary cross-entropy with the probability clamp, as a sum over entities.
pub fn weighted_bce(probabilities: &[f64], answer: usize, a: f64, b: f64) -> f64 {
    probabilities
        .iter()
        .enumerate()
        .map(|(i, &p)| {
            let p = p.clamp(1e-12, 1.0 - 1e-12);
            if i == answer {
                -a * p.ln()
            } else {
                -b * (1.0 - p).ln()
            }
        })
        .sum()
}

pub fn small_config(steps: usize) -> ModelConfig {
    ModelConfig {
        steps,
        question_dim: 5,
        hidden_dim: 4,
        visual_dim: 6,
        word_dim: 3,
        dropout: 0.0,
        ..ModelConfig::default()
    }
}

fn rows(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Matrix {
    (0..n)
        .map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect()
}

/// Random layer with `n` nodes and each ordered pair connected with
/// probability `density`.
pub fn random_layer(
    rng: &mut ChaCha8Rng,
    kind: LayerKind,
    n: usize,
    node_dim: usize,
    edge_dim: usize,
    density: f64,
) -> LayerGraph {
    let mut g = LayerGraph::new(kind, node_dim, edge_dim).unwrap();
    for (i, f) in rows(rng, n, node_dim).into_iter().enumerate() {
        g.add_node(format!("{kind:?}{i}").to_lowercase(), f).unwrap();
    }
    for s in 0..n {
        for t in 0..n {
            if s != t && rng.random_bool(density) {
                let e = rows(rng, 1, edge_dim).remove(0);
                g.add_edge(s, t, e).unwrap();
            }
        }
    }
    g
}

/// Random instance whose layer sizes are drawn from `1..=max_nodes`
/// (visual and semantic may also be empty when `allow_empty`).
pub fn random_instance(seed: u64, cfg: &ModelConfig, max_nodes: usize, allow_empty: bool) -> MultiModalGraph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let lo = usize::from(!allow_empty);
    let nv = rng.random_range(lo..=max_nodes);
    let ns = rng.random_range(lo..=max_nodes);
    let nf = rng.random_range(1..=max_nodes);
    let density = rng.random_range(0.2..0.9);
    let v = random_layer(&mut rng, LayerKind::Visual, nv, cfg.visual_dim, cfg.visual_edge_dim(), density);
    let s = random_layer(&mut rng, LayerKind::Semantic, ns, cfg.word_dim, cfg.word_dim, density);
    let f = random_layer(&mut rng, LayerKind::Fact, nf, cfg.word_dim, cfg.word_dim, density);
    let len = rng.random_range(1..=5);
    let words = rows(&mut rng, len, cfg.word_dim);
    let tokens = (0..len).map(|i| format!("w{i}")).collect();
    let q = Question::from_vectors(tokens, words).unwrap();
    let answer = rng.random_range(0..nf);
    MultiModalGraph::new(v, s, f, q, Some(answer)).unwrap()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

pub fn flatten(m: &Matrix) -> Vec<f64> {
    m.iter().flatten().copied().collect()
}
