//! Optimization and evaluation: Adam with a warm-up plus cosine schedule,
//! mini-batch training on the weighted answer loss, top-k evaluation, and
//! the ablation and sweep harnesses.

mod adam;
mod harness;
mod schedule;

pub use adam::{AdamConfig, AdamState};
pub use harness::{
    ablation_run, retrieval_sweep, step_sweep, AblationReport, AblationRow, RetrievalSweepReport,
    RetrievalSweepRow, StepSweepReport, StepSweepRow, REPORT_FORMAT_VERSION,
};
pub use schedule::{lr_at, warmup_steps, Annealing};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{ParamStore, Tape, Tensor, TensorError};
use crate::graph::MultiModalGraph;
use crate::model::{bce_loss, forward, init_params, predict, ModelConfig, ModelError, Mode};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrainError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("non-finite gradient for parameter `{0}`")]
    NonFiniteGradient(String),
    #[error("gradient list has {actual} entries or mismatched shapes; expected {expected}")]
    GradientLayout { expected: usize, actual: usize },
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("training instance {index} has no answer")]
    MissingAnswer { index: usize },
    #[error("dataset is empty")]
    EmptyDataset,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Weight of the positive (answer) term of the loss.
    pub loss_a: f64,
    /// Weight of the negative terms.
    pub loss_b: f64,
    pub lr_max: f64,
    pub lr_min: f64,
    pub warmup_epochs: usize,
    /// Warm-up starts at `warmup_factor * lr_max`.
    pub warmup_factor: f64,
    pub annealing: Annealing,
    pub adam: AdamConfig,
    /// Global L2 norm cap on the batch gradient.
    pub grad_clip: Option<f64>,
    /// Bypasses the schedule.
    pub constant_lr: Option<f64>,
    pub seed: u64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch_size: 64,
            loss_a: 0.7,
            loss_b: 0.3,
            lr_max: 1e-3,
            lr_min: 3.6e-4,
            warmup_epochs: 2,
            warmup_factor: 0.2,
            annealing: Annealing::PerStep,
            adam: AdamConfig::default(),
            grad_clip: None,
            constant_lr: None,
            seed: 0,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::Config(m));
        if self.epochs == 0 || self.batch_size == 0 {
            return bad("epochs and batch_size must be positive".into());
        }
        if !(self.loss_a > 0.0 && self.loss_b > 0.0) {
            return bad("loss weights must be positive".into());
        }
        match self.constant_lr {
            Some(lr) if !(lr >= 0.0 && lr.is_finite()) => {
                return bad(format!("constant learning rate {lr} is invalid"))
            }
            Some(_) => {}
            None => {
                if !(self.lr_max > 0.0 && self.lr_min > 0.0 && self.lr_min <= self.lr_max) {
                    return bad("need 0 < lr_min <= lr_max".into());
                }
                if self.warmup_epochs >= self.epochs {
                    return bad(format!(
                        "warm-up ({}) must be shorter than training ({} epochs)",
                        self.warmup_epochs, self.epochs
                    ));
                }
                if !(self.warmup_factor > 0.0 && self.warmup_factor <= 1.0) {
                    return bad("warmup_factor must lie in (0, 1]".into());
                }
            }
        }
        if let Some(c) = self.grad_clip {
            if !(c > 0.0) {
                return bad("grad_clip must be positive".into());
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutcome {
    pub params: ParamStore,
    /// Mean per-instance loss of each epoch.
    pub loss_curve: Vec<f64>,
    pub optimizer_steps: usize,
}

/// Mixes `(seed, epoch, index)` into a per-instance dropout seed so batch
/// results do not depend on thread scheduling.
fn instance_seed(seed: u64, epoch: usize, index: usize) -> u64 {
    let mut x = seed ^ 0x9e37_79b9_7f4a_7c15;
    for v in [epoch as u64, index as u64] {
        x = (x ^ v).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        x ^= x >> 31;
    }
    x
}

fn instance_gradient(
    params: &ParamStore,
    instance: &MultiModalGraph,
    model: &ModelConfig,
    cfg: &TrainingConfig,
    dropout_seed: u64,
) -> Result<(f64, Vec<Tensor>), TrainError> {
    let mut rng = ChaCha8Rng::seed_from_u64(dropout_seed);
    let mut tape = Tape::with_params(params);
    let out = forward(&mut tape, instance, model, Mode::Train(&mut rng), false)?;
    let loss = bce_loss(&mut tape, out.probabilities, &instance.labels(), cfg.loss_a, cfg.loss_b)?;
    let value = tape.value(loss).data()[0];
    let grads = tape.backward(loss)?;
    Ok((value, grads.into_params()))
}

/// Trains freshly initialized parameters.
pub fn train(
    instances: &[MultiModalGraph],
    model: &ModelConfig,
    cfg: &TrainingConfig,
) -> Result<TrainOutcome, TrainError> {
    let params = init_params(model, cfg.seed)?;
    train_from(params, instances, model, cfg)
}

/// Mini-batch training starting from `params`. The batch gradient is the
/// mean of per-instance gradients; instances run in parallel and are summed
/// in batch order, so results are bit-identical for a given seed.
pub fn train_from(
    mut params: ParamStore,
    instances: &[MultiModalGraph],
    model: &ModelConfig,
    cfg: &TrainingConfig,
) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    model.validate()?;
    if instances.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    if let Some(index) = instances.iter().position(|g| g.answer.is_none()) {
        return Err(TrainError::MissingAnswer { index });
    }
    let per_epoch = instances.len().div_ceil(cfg.batch_size);
    let total = per_epoch * cfg.epochs;
    let mut adam = AdamState::new(&params);
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    let mut order: Vec<usize> = (0..instances.len()).collect();
    let mut loss_curve = Vec::with_capacity(cfg.epochs);
    let mut step = 0;

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let results = batch
                .par_iter()
                .map(|&i| {
                    instance_gradient(
                        &params,
                        &instances[i],
                        model,
                        cfg,
                        instance_seed(cfg.seed, epoch, i),
                    )
                })
                .collect::<Result<Vec<_>, _>>()?;
            let mut grads: Vec<Tensor> = params
                .iter()
                .map(|(_, t)| Tensor::zeros(t.rows(), t.cols()))
                .collect();
            for (loss, g) in &results {
                epoch_loss += loss;
                for (acc, gi) in grads.iter_mut().zip(g) {
                    acc.add_assign(gi);
                }
            }
            let mut scale = 1.0 / batch.len() as f64;
            if let Some(cap) = cfg.grad_clip {
                let norm = grads
                    .iter()
                    .flat_map(|g| g.data())
                    .map(|x| (x * scale).powi(2))
                    .sum::<f64>()
                    .sqrt();
                if norm > cap {
                    scale *= cap / norm;
                }
            }
            for g in &mut grads {
                g.data_mut().iter_mut().for_each(|x| *x *= scale);
            }
            adam.step(&mut params, &grads, lr_at(step, total, cfg), &cfg.adam)?;
            step += 1;
        }
        loss_curve.push(epoch_loss / instances.len() as f64);
    }
    Ok(TrainOutcome {
        params,
        loss_curve,
        optimizer_steps: step,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InstanceResult {
    pub index: usize,
    pub answer: Option<usize>,
    /// Fact-entity indices by decreasing probability.
    pub ranking: Vec<usize>,
    pub probabilities: Vec<f64>,
}

impl InstanceResult {
    /// Whether the answer is among the first `k` ranked entities.
    pub fn hit_at(&self, k: usize) -> bool {
        self.answer
            .is_some_and(|a| self.ranking.iter().take(k).any(|&r| r == a))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub top1: f64,
    pub top3: f64,
    /// Instances with a known answer. Accuracies divide by the total
    /// instance count, so an instance whose answer is missing from its fact
    /// graph counts as a miss.
    pub scored: usize,
    pub instances: Vec<InstanceResult>,
}

impl EvalReport {
    pub fn accuracy_at(&self, k: usize) -> f64 {
        if self.instances.is_empty() {
            return 0.0;
        }
        let hits = self.instances.iter().filter(|r| r.hit_at(k)).count();
        hits as f64 / self.instances.len() as f64
    }
}

/// Evaluation-mode predictions with top-1 / top-3 accuracy.
pub fn evaluate(
    params: &ParamStore,
    instances: &[MultiModalGraph],
    model: &ModelConfig,
) -> Result<EvalReport, TrainError> {
    let results = instances
        .par_iter()
        .enumerate()
        .map(|(index, g)| {
            let (pred, _) = predict(params, g, model)?;
            Ok(InstanceResult {
                index,
                answer: g.answer,
                ranking: pred.ranking(),
                probabilities: pred.probabilities,
            })
        })
        .collect::<Result<Vec<_>, TrainError>>()?;
    let mut report = EvalReport {
        top1: 0.0,
        top3: 0.0,
        scored: results.iter().filter(|r| r.answer.is_some()).count(),
        instances: results,
    };
    report.top1 = report.accuracy_at(1);
    report.top3 = report.accuracy_at(3);
    Ok(report)
}

/// Expected top-1 accuracy of uniform guessing and its binomial standard
/// deviation over `n` instances.
pub fn chance_level(entities: usize, n: usize) -> (f64, f64) {
    let p = 1.0 / entities as f64;
    (p, (p * (1.0 - p) / n as f64).sqrt())
}
