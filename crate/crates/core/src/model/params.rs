use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{ModelConfig, ModelError};
use crate::autodiff::{InitRange, ParamStore};

/// Layer prefixes inside one reasoning step.
pub const VISUAL: &str = "visual";
pub const SEMANTIC: &str = "semantic";
pub const FACT: &str = "fact";
pub const AGGREGATE: &str = "aggregate";
pub const CROSS_VISUAL: &str = "cross_visual";
pub const CROSS_SEMANTIC: &str = "cross_semantic";
pub const GATE: &str = "gate";
pub const QUESTION: &str = "question";
pub const CLASSIFIER: &str = "classifier";

const LSTM_GATES: [&str; 4] = ["input", "forget", "output", "cell"];

pub fn step_prefix(slot: usize, part: &str) -> String {
    format!("step{slot}.{part}")
}

/// Bias switch and init gain shared by every affine map of a network.
#[derive(Clone, Copy, Debug)]
pub struct Affine {
    pub bias: bool,
    pub gain: f64,
}

impl Affine {
    pub fn of(cfg: &ModelConfig) -> Self {
        Self {
            bias: cfg.bias,
            gain: cfg.init_gain,
        }
    }
}

/// Adds `{name}.weight` (`fan_in x fan_out`) and, when biased, `{name}.bias`.
pub fn register_linear<R: Rng + ?Sized>(
    store: &mut ParamStore,
    name: &str,
    fan_in: usize,
    fan_out: usize,
    affine: Affine,
    rng: &mut R,
) -> Result<(), ModelError> {
    let init = InitRange { fan_in, gain: affine.gain };
    store.insert_uniform(format!("{name}.weight"), fan_in, fan_out, init, rng)?;
    if affine.bias {
        store.insert_uniform(format!("{name}.bias"), 1, fan_out, init, rng)?;
    }
    Ok(())
}

/// Single-layer LSTM over word vectors.
pub fn register_lstm<R: Rng + ?Sized>(
    store: &mut ParamStore,
    prefix: &str,
    input_dim: usize,
    hidden: usize,
    affine: Affine,
    rng: &mut R,
) -> Result<(), ModelError> {
    for gate in LSTM_GATES {
        let init = InitRange { fan_in: hidden, gain: affine.gain };
        store.insert_uniform(format!("{prefix}.{gate}.input"), input_dim, hidden, init, rng)?;
        store.insert_uniform(format!("{prefix}.{gate}.hidden"), hidden, hidden, init, rng)?;
        if affine.bias {
            store.insert_uniform(format!("{prefix}.{gate}.bias"), 1, hidden, init, rng)?;
        }
    }
    Ok(())
}

/// Node attention, edge attention and update maps for one layer.
fn register_intra<R: Rng + ?Sized>(
    store: &mut ParamStore,
    prefix: &str,
    edge_dim: usize,
    cfg: &ModelConfig,
    rng: &mut R,
) -> Result<(), ModelError> {
    let (h, dq, b) = (cfg.hidden_dim, cfg.question_dim, Affine::of(cfg));
    register_linear(store, &format!("{prefix}.node.w1"), h, h, b, rng)?;
    register_linear(store, &format!("{prefix}.node.w2"), dq, h, b, rng)?;
    register_linear(store, &format!("{prefix}.node.score"), h, 1, Affine { bias: false, ..b }, rng)?;
    register_linear(store, &format!("{prefix}.edge.w3"), h, h, b, rng)?;
    register_linear(store, &format!("{prefix}.edge.w4"), h, h, b, rng)?;
    register_linear(store, &format!("{prefix}.edge.w5"), h + edge_dim, h, b, rng)?;
    register_linear(store, &format!("{prefix}.edge.w6"), h + dq, h, b, rng)?;
    register_linear(store, &format!("{prefix}.edge.score"), h, 1, Affine { bias: false, ..b }, rng)?;
    register_linear(store, &format!("{prefix}.update.w7"), 2 * h, h, b, rng)?;
    Ok(())
}

fn register_cross<R: Rng + ?Sized>(
    store: &mut ParamStore,
    prefix: &str,
    cfg: &ModelConfig,
    rng: &mut R,
) -> Result<(), ModelError> {
    let (h, dq, b) = (cfg.hidden_dim, cfg.question_dim, Affine::of(cfg));
    register_linear(store, &format!("{prefix}.w8"), h, h, b, rng)?;
    register_linear(store, &format!("{prefix}.w9"), h + dq, h, b, rng)?;
    register_linear(store, &format!("{prefix}.score"), h, 1, Affine { bias: false, ..b }, rng)?;
    Ok(())
}

/// Allocates every parameter of the network in a fixed order, drawn from
/// a generator seeded with `seed`.
pub fn init_params(cfg: &ModelConfig, seed: u64) -> Result<ParamStore, ModelError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let (h, dq, dw, b) = (cfg.hidden_dim, cfg.question_dim, cfg.word_dim, Affine::of(cfg));

    register_lstm(&mut store, QUESTION, dw, dq, b, &mut rng)?;
    register_linear(&mut store, &format!("{VISUAL}.project"), cfg.visual_dim, h, b, &mut rng)?;
    register_linear(&mut store, &format!("{SEMANTIC}.project"), dw, h, b, &mut rng)?;
    register_linear(&mut store, &format!("{FACT}.project"), dw, h, b, &mut rng)?;

    for slot in 0..cfg.step_slots() {
        register_intra(&mut store, &step_prefix(slot, VISUAL), cfg.visual_edge_dim(), cfg, &mut rng)?;
        register_intra(&mut store, &step_prefix(slot, SEMANTIC), dw, cfg, &mut rng)?;
        register_intra(&mut store, &step_prefix(slot, FACT), dw, cfg, &mut rng)?;
        register_cross(&mut store, &step_prefix(slot, CROSS_VISUAL), cfg, &mut rng)?;
        register_cross(&mut store, &step_prefix(slot, CROSS_SEMANTIC), cfg, &mut rng)?;
        register_linear(&mut store, &format!("{}.w10", step_prefix(slot, GATE)), 3 * h, 3 * h, b, &mut rng)?;
        register_linear(&mut store, &format!("{}.w11", step_prefix(slot, GATE)), 3 * h, h, b, &mut rng)?;
        register_intra(&mut store, &step_prefix(slot, AGGREGATE), dw, cfg, &mut rng)?;
    }

    register_linear(&mut store, &format!("{CLASSIFIER}.hidden"), h + dq, dq, b, &mut rng)?;
    register_linear(&mut store, &format!("{CLASSIFIER}.output"), dq, 1, b, &mut rng)?;
    Ok(store)
}
