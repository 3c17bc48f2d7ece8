use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{evaluate, train, TrainError, TrainingConfig};
use crate::graph::MultiModalGraph;
use crate::model::{Ablation, ModelConfig};

pub const REPORT_FORMAT_VERSION: u32 = 1;

fn pct(x: f64) -> String {
    format!("{:.2}", 100.0 * x)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    /// 0 for the full model, then 1.. in the order run.
    pub index: usize,
    pub label: String,
    pub ablation: Ablation,
    pub top1: f64,
    pub top3: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub format_version: u32,
    pub seed: u64,
    pub rows: Vec<AblationRow>,
}

impl AblationReport {
    /// The full-model row followed by the seven structural variants.
    pub fn standard_variants() -> Vec<Ablation> {
        let a = Ablation::default;
        vec![
            a(),
            Ablation { drop_semantic: true, ..a() },
            Ablation { drop_visual: true, ..a() },
            Ablation { drop_semantic: true, drop_visual: true, ..a() },
            Ablation { semantic_concat: true, ..a() },
            Ablation { visual_concat: true, ..a() },
            Ablation { visual_concat: true, semantic_concat: true, ..a() },
            Ablation { no_relations: true, ..a() },
        ]
    }

    pub fn row(&self, ablation: &Ablation) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.ablation == *ablation)
    }

    /// Plain-text table with top-1 / top-3 percentages.
    pub fn render(&self) -> String {
        let mut s = String::from("#  | Method | top-1 | top-3\n");
        for r in &self.rows {
            let idx = if r.index == 0 { "-".to_string() } else { r.index.to_string() };
            let _ = writeln!(s, "{idx} | {} | {} | {}", r.label, pct(r.top1), pct(r.top3));
        }
        s
    }
}

/// Trains and evaluates one model per variant, each from the same seed.
pub fn ablation_run(
    train_set: &[MultiModalGraph],
    test_set: &[MultiModalGraph],
    model: &ModelConfig,
    cfg: &TrainingConfig,
    variants: &[Ablation],
) -> Result<AblationReport, TrainError> {
    let mut rows = Vec::with_capacity(variants.len());
    let mut next = 1;
    for ablation in variants {
        let m = ModelConfig {
            ablation: *ablation,
            ..model.clone()
        };
        let outcome = train(train_set, &m, cfg)?;
        let rep = evaluate(&outcome.params, test_set, &m)?;
        let index = if ablation.is_full() {
            0
        } else {
            next += 1;
            next - 1
        };
        rows.push(AblationRow {
            index,
            label: ablation.label(),
            ablation: *ablation,
            top1: rep.top1,
            top3: rep.top3,
        });
    }
    Ok(AblationReport {
        format_version: REPORT_FORMAT_VERSION,
        seed: cfg.seed,
        rows,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepSweepRow {
    pub steps: usize,
    pub top1: f64,
    pub top3: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepSweepReport {
    pub format_version: u32,
    pub seed: u64,
    pub rows: Vec<StepSweepRow>,
}

impl StepSweepReport {
    /// Steps as columns, accuracies as rows.
    pub fn render(&self) -> String {
        let mut s = String::from("#Steps");
        for r in &self.rows {
            let _ = write!(s, " | {}", r.steps);
        }
        s.push_str("\ntop-1 accuracy");
        for r in &self.rows {
            let _ = write!(s, " | {}", pct(r.top1));
        }
        s.push_str("\ntop-3 accuracy");
        for r in &self.rows {
            let _ = write!(s, " | {}", pct(r.top3));
        }
        s.push('\n');
        s
    }
}

pub fn step_sweep(
    train_set: &[MultiModalGraph],
    test_set: &[MultiModalGraph],
    model: &ModelConfig,
    cfg: &TrainingConfig,
    steps: &[usize],
) -> Result<StepSweepReport, TrainError> {
    let mut rows = Vec::with_capacity(steps.len());
    for &t in steps {
        let m = ModelConfig {
            steps: t,
            ..model.clone()
        };
        let outcome = train(train_set, &m, cfg)?;
        let rep = evaluate(&outcome.params, test_set, &m)?;
        rows.push(StepSweepRow {
            steps: t,
            top1: rep.top1,
            top3: rep.top3,
        });
    }
    Ok(StepSweepReport {
        format_version: REPORT_FORMAT_VERSION,
        seed: cfg.seed,
        rows,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RetrievalSweepRow {
    /// Facts kept after scoring.
    pub k: usize,
    /// Relation types kept by the filter.
    pub m: usize,
    pub top1: f64,
    pub top3: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RetrievalSweepReport {
    pub format_version: u32,
    pub seed: u64,
    pub k_values: Vec<usize>,
    pub m_values: Vec<usize>,
    /// One row per `(m, k)` pair, `m`-major.
    pub rows: Vec<RetrievalSweepRow>,
}

impl RetrievalSweepReport {
    pub fn cell(&self, k: usize, m: usize) -> Option<&RetrievalSweepRow> {
        self.rows.iter().find(|r| r.k == k && r.m == m)
    }

    /// Retrieved-fact counts as columns; two rows (top-1, top-3) per `m`.
    pub fn render(&self) -> String {
        let mut s = String::from("#Retrieved facts");
        for k in &self.k_values {
            let _ = write!(s, " | @{k}");
        }
        s.push('\n');
        for &m in &self.m_values {
            for (name, top1) in [("top-1", true), ("top-3", false)] {
                let _ = write!(s, "Rel@{m} ({name} accuracy)");
                for &k in &self.k_values {
                    let v = self
                        .cell(k, m)
                        .map(|c| pct(if top1 { c.top1 } else { c.top3 }))
                        .unwrap_or_else(|| "-".into());
                    let _ = write!(s, " | {v}");
                }
                s.push('\n');
            }
        }
        s
    }
}

/// Runs one train/evaluate cycle per `(k, m)` cell. `prepare` rebuilds the
/// train and test instances with the given retrieval cutoffs.
pub fn retrieval_sweep<F, E>(
    k_values: &[usize],
    m_values: &[usize],
    mut prepare: F,
    model: &ModelConfig,
    cfg: &TrainingConfig,
) -> Result<RetrievalSweepReport, E>
where
    F: FnMut(usize, usize) -> Result<(Vec<MultiModalGraph>, Vec<MultiModalGraph>), E>,
    E: From<TrainError>,
{
    let mut rows = Vec::with_capacity(k_values.len() * m_values.len());
    for &m in m_values {
        for &k in k_values {
            let (train_set, test_set) = prepare(k, m)?;
            let outcome = train(&train_set, model, cfg)?;
            let rep = evaluate(&outcome.params, &test_set, model)?;
            rows.push(RetrievalSweepRow {
                k,
                m,
                top1: rep.top1,
                top3: rep.top3,
            });
        }
    }
    Ok(RetrievalSweepReport {
        format_version: REPORT_FORMAT_VERSION,
        seed: cfg.seed,
        k_values: k_values.to_vec(),
        m_values: m_values.to_vec(),
        rows,
    })
}
