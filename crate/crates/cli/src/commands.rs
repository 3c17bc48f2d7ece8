use std::path::Path;

use serde::{Deserialize, Serialize};

use mucko::data::{
    export_trace, generate_synthetic, load_dataset, prepare_instances, relation_examples, save_dataset,
    write_json, Dataset, ModelBundle, PrepareOptions, PreparedInstance, Split,
};
use mucko::graph::MultiModalGraph;
use mucko::model::{predict, predict_answer, ModelConfig};
use mucko::retrieval::{train_relation_classifier, RelationClassifier};
use mucko::train::{
    ablation_run, chance_level, evaluate, retrieval_sweep, step_sweep, train, AblationReport,
    RetrievalSweepReport, StepSweepReport, REPORT_FORMAT_VERSION,
};

use crate::config::RunConfig;
use crate::error::{io_err, CliError};

fn dataset(dir: &Path) -> Result<Dataset, CliError> {
    Ok(load_dataset(dir)?)
}

/// The configured model with input widths taken from the dataset header.
fn model_for(cfg: &RunConfig, ds: &Dataset) -> ModelConfig {
    ModelConfig {
        word_dim: ds.header.word_dim,
        visual_dim: ds.header.visual_dim,
        ..cfg.model.clone()
    }
}

fn classifier_for(cfg: &RunConfig, ds: &Dataset) -> Result<RelationClassifier, CliError> {
    let relations = ds.header.relations.clone();
    let Some(ccfg) = &cfg.relation_classifier else {
        return Ok(RelationClassifier::pass_through(relations)?);
    };
    let recs = ds.split(Split::Train);
    let examples = relation_examples(ds, &recs, &cfg.prepare)?;
    if examples.is_empty() {
        return Err(CliError::Config(
            "relation classifier requested but no training record carries a relation label".into(),
        ));
    }
    Ok(train_relation_classifier(&examples, &relations, ccfg)?)
}

fn prepared(
    ds: &Dataset,
    split: Split,
    opts: &PrepareOptions,
    clf: &RelationClassifier,
) -> Result<Vec<PreparedInstance>, CliError> {
    let recs = ds.split(split);
    let (out, report) = prepare_instances(ds, &recs, opts, clf)?;
    if !report.is_clean() {
        eprintln!(
            "warning: {} {split:?} instance(s) lack the answer among their candidates; first: {}: {}",
            report.issues.len(),
            report.issues[0].id,
            report.issues[0].message
        );
    }
    Ok(out)
}

/// Graphs usable for training: instances without a labelled answer are skipped.
fn trainable(instances: Vec<PreparedInstance>) -> Vec<MultiModalGraph> {
    instances
        .into_iter()
        .filter(|p| p.graph.answer.is_some())
        .map(|p| p.graph)
        .collect()
}

fn graphs(instances: Vec<PreparedInstance>) -> Vec<MultiModalGraph> {
    instances.into_iter().map(|p| p.graph).collect()
}

fn require_nonempty<T>(v: &[T], what: &str) -> Result<(), CliError> {
    if v.is_empty() {
        return Err(CliError::Config(format!("{what} split is empty")));
    }
    Ok(())
}

pub fn gen(cfg: &RunConfig, out: &Path) -> Result<String, CliError> {
    std::fs::create_dir_all(out).map_err(|e| io_err(out, e))?;
    let ds = generate_synthetic(&cfg.synthetic)?;
    save_dataset(&ds, out)?;
    Ok(format!(
        "wrote {} records ({} train, {} test) to {}",
        ds.records.len(),
        ds.split(Split::Train).len(),
        ds.split(Split::Test).len(),
        out.display()
    ))
}

pub fn train_cmd(cfg: &RunConfig, data: &Path, out: &Path) -> Result<String, CliError> {
    let ds = dataset(data)?;
    let model = model_for(cfg, &ds);
    let clf = classifier_for(cfg, &ds)?;
    let train_set = trainable(prepared(&ds, Split::Train, &cfg.prepare, &clf)?);
    require_nonempty(&train_set, "training")?;
    let outcome = train(&train_set, &model, &cfg.training)?;
    let bundle = ModelBundle::new(model, cfg.prepare.clone(), &outcome.params, &clf, outcome.loss_curve.clone());
    bundle.save(out)?;
    Ok(format!(
        "trained on {} instances, {} optimizer steps, final loss {:.4}; saved {}",
        train_set.len(),
        outcome.optimizer_steps,
        outcome.loss_curve.last().copied().unwrap_or(f64::NAN),
        out.display()
    ))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub format_version: u32,
    pub split: Split,
    pub instances: usize,
    pub scored: usize,
    pub top1: f64,
    pub top3: f64,
    /// Expected top-1 of uniform guessing, averaged over scored instances.
    pub chance_top1: f64,
}

fn load_bundle(path: &Path) -> Result<ModelBundle, CliError> {
    Ok(ModelBundle::load(path)?)
}

pub fn eval(data: &Path, checkpoint: &Path, split: Split, out: Option<&Path>) -> Result<String, CliError> {
    let ds = dataset(data)?;
    let bundle = load_bundle(checkpoint)?;
    let params = bundle.params()?;
    let clf = bundle.classifier()?;
    let instances = graphs(prepared(&ds, split, &bundle.prepare, &clf)?);
    require_nonempty(&instances, "evaluation")?;
    let rep = evaluate(&params, &instances, &bundle.model)?;
    let scored: Vec<&MultiModalGraph> = instances.iter().filter(|g| g.answer.is_some()).collect();
    let chance = if scored.is_empty() {
        0.0
    } else {
        scored.iter().map(|g| chance_level(g.fact.len(), 1).0).sum::<f64>() / scored.len() as f64
    };
    let summary = EvalSummary {
        format_version: REPORT_FORMAT_VERSION,
        split,
        instances: instances.len(),
        scored: rep.scored,
        top1: rep.top1,
        top3: rep.top3,
        chance_top1: chance,
    };
    if let Some(p) = out {
        write_json(p, &summary)?;
    }
    Ok(format!(
        "top1 {:.4} top3 {:.4} over {} scored of {} instances (chance {:.4})",
        summary.top1, summary.top3, summary.scored, summary.instances, summary.chance_top1
    ))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionRow {
    pub id: String,
    pub predicted: String,
    pub probability: f64,
    /// Up to three entities, best first.
    pub top3: Vec<String>,
    pub answer: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionFile {
    pub format_version: u32,
    pub predictions: Vec<PredictionRow>,
}

pub fn predict_cmd(data: &Path, checkpoint: &Path, split: Split, out: Option<&Path>) -> Result<String, CliError> {
    let ds = dataset(data)?;
    let bundle = load_bundle(checkpoint)?;
    let params = bundle.params()?;
    let clf = bundle.classifier()?;
    let instances = prepared(&ds, split, &bundle.prepare, &clf)?;
    let mut rows = Vec::with_capacity(instances.len());
    for inst in &instances {
        let (pred, _) = predict(&params, &inst.graph, &bundle.model)?;
        let best = predict_answer(&pred).ok_or(mucko::model::ModelError::EmptyFactLayer)?;
        let names = inst.entities();
        rows.push(PredictionRow {
            id: inst.id.clone(),
            predicted: names[best].clone(),
            probability: pred.probabilities[best],
            top3: pred.top_k(3).into_iter().map(|i| names[i].clone()).collect(),
            answer: inst.graph.answer.map(|a| names[a].clone()),
        });
    }
    let file = PredictionFile {
        format_version: REPORT_FORMAT_VERSION,
        predictions: rows,
    };
    match out {
        Some(p) => {
            write_json(p, &file)?;
            Ok(format!("wrote {} predictions to {}", file.predictions.len(), p.display()))
        }
        None => Ok(file
            .predictions
            .iter()
            .map(|r| format!("{}\t{}\t{:.4}", r.id, r.predicted, r.probability))
            .collect::<Vec<_>>()
            .join("\n")),
    }
}

pub fn trace(
    cfg: &RunConfig,
    data: &Path,
    checkpoint: &Path,
    split: Split,
    limit: usize,
    out: &Path,
) -> Result<String, CliError> {
    let ds = dataset(data)?;
    let bundle = load_bundle(checkpoint)?;
    let params = bundle.params()?;
    let clf = bundle.classifier()?;
    let mut instances = prepared(&ds, split, &bundle.prepare, &clf)?;
    instances.truncate(limit);
    let file = export_trace(&instances, &params, &bundle.model, &cfg.trace)?;
    file.save(out)?;
    Ok(format!("traced {} instances to {}", file.instances.len(), out.display()))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepFile {
    pub format_version: u32,
    pub steps: Option<StepSweepReport>,
    pub retrieval: Option<RetrievalSweepReport>,
}

pub struct SweepPlan {
    pub steps: Option<Vec<usize>>,
    pub k_values: Option<Vec<usize>>,
    pub m_values: Option<Vec<usize>>,
}

impl SweepPlan {
    /// Explicit grids pick which reports run; with none given both run
    /// from the config.
    fn resolve(&self, cfg: &RunConfig) -> (Option<Vec<usize>>, Option<(Vec<usize>, Vec<usize>)>) {
        let retrieval_given = self.k_values.is_some() || self.m_values.is_some();
        let grid = || {
            (
                self.k_values.clone().unwrap_or_else(|| cfg.sweep.k_values.clone()),
                self.m_values.clone().unwrap_or_else(|| cfg.sweep.m_values.clone()),
            )
        };
        match (&self.steps, retrieval_given) {
            (Some(s), false) => (Some(s.clone()), None),
            (None, true) => (None, Some(grid())),
            (s, _) => (Some(s.clone().unwrap_or_else(|| cfg.sweep.steps.clone())), Some(grid())),
        }
    }
}

pub fn sweep(cfg: &RunConfig, data: &Path, plan: &SweepPlan, out: Option<&Path>) -> Result<String, CliError> {
    let ds = dataset(data)?;
    let model = model_for(cfg, &ds);
    let clf = classifier_for(cfg, &ds)?;
    let (steps, grid) = plan.resolve(cfg);
    let mut text = String::new();

    let steps_report = match steps {
        Some(steps) => {
            let tr = trainable(prepared(&ds, Split::Train, &cfg.prepare, &clf)?);
            let te = graphs(prepared(&ds, Split::Test, &cfg.prepare, &clf)?);
            require_nonempty(&tr, "training")?;
            require_nonempty(&te, "test")?;
            let rep = step_sweep(&tr, &te, &model, &cfg.training, &steps)?;
            text.push_str(&rep.render());
            Some(rep)
        }
        None => None,
    };
    let retrieval_report = match grid {
        Some((ks, ms)) => {
            let rep = retrieval_sweep(
                &ks,
                &ms,
                |k, m| -> Result<_, CliError> {
                    let opts = PrepareOptions {
                        top_facts: k,
                        top_relations: m,
                        ..cfg.prepare.clone()
                    };
                    let tr = trainable(prepared(&ds, Split::Train, &opts, &clf)?);
                    let te = graphs(prepared(&ds, Split::Test, &opts, &clf)?);
                    require_nonempty(&tr, "training")?;
                    require_nonempty(&te, "test")?;
                    Ok((tr, te))
                },
                &model,
                &cfg.training,
            )?;
            if !text.is_empty() {
                text.push('\n');
            }
            text.push_str(&rep.render());
            Some(rep)
        }
        None => None,
    };
    if let Some(p) = out {
        write_json(
            p,
            &SweepFile {
                format_version: REPORT_FORMAT_VERSION,
                steps: steps_report,
                retrieval: retrieval_report,
            },
        )?;
    }
    Ok(text.trim_end().to_string())
}

pub fn ablate(cfg: &RunConfig, data: &Path, out: Option<&Path>) -> Result<String, CliError> {
    let ds = dataset(data)?;
    let model = model_for(cfg, &ds);
    let clf = classifier_for(cfg, &ds)?;
    let tr = trainable(prepared(&ds, Split::Train, &cfg.prepare, &clf)?);
    let te = graphs(prepared(&ds, Split::Test, &cfg.prepare, &clf)?);
    require_nonempty(&tr, "training")?;
    require_nonempty(&te, "test")?;
    let rep: AblationReport = ablation_run(&tr, &te, &model, &cfg.training, &AblationReport::standard_variants())?;
    if let Some(p) = out {
        write_json(p, &rep)?;
    }
    Ok(rep.render().trim_end().to_string())
}
