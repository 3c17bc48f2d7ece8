mod common;

use common::{random_instance, small_config};
use mucko::data::{generate_synthetic, load_dataset, save_dataset, CandidateMode, FactDensity, SyntheticSpec};
use mucko::graph::LayerGraph;
use mucko::model::{init_params, predict, Ablation, ModelConfig};
use mucko::retrieval::{filter_by_relation, retrieve_top_k, FactTriple, RelationPrediction, RetrievalError};
use mucko::train::{evaluate, lr_at, train, Annealing, TrainingConfig};
use proptest::prelude::*;

const RELATIONS: [&str; 5] = ["UsedFor", "IsA", "AtLocation", "CapableOf", "PartOf"];

fn relations() -> Vec<String> {
    RELATIONS.iter().map(|s| s.to_string()).collect()
}

fn fact_list(rels: &[usize]) -> Vec<FactTriple> {
    rels.iter()
        .enumerate()
        .map(|(i, &r)| FactTriple {
            e1: format!("a{i}"),
            relation: RELATIONS[r].to_string(),
            e2: format!("b{i}"),
        })
        .collect()
}

fn emptied(layer: &LayerGraph) -> LayerGraph {
    LayerGraph::new(layer.kind(), layer.node_dim(), layer.edge_dim()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn relation_filter_keeps_an_ordered_subset(
        rels in prop::collection::vec(0usize..5, 1..60),
        scores in prop::collection::vec(-3i32..3, 60),
        probs in prop::collection::vec(0.01f64..1.0, 5),
        k in 1usize..80,
        m in 1usize..=5,
    ) {
        let facts = fact_list(&rels);
        let mut next = scores.iter();
        let top = retrieve_top_k(&facts, |_| Ok(f64::from(*next.next().unwrap())), k).unwrap();
        prop_assert_eq!(top.len(), k.min(facts.len()));
        prop_assert!(top.entries().windows(2).all(|w| w[0].score >= w[1].score));

        let pred = RelationPrediction::from_probabilities(&relations(), &probs).unwrap();
        let keep = pred.top(m);
        match filter_by_relation(&top, &pred, m) {
            Ok(kept) => {
                prop_assert!(kept.len() <= top.len());
                prop_assert!(kept.relation_filtered());
                let mut it = top.entries().iter();
                for e in kept.entries() {
                    prop_assert!(keep.contains(&e.fact.relation.as_str()));
                    prop_assert!(it.any(|t| t == e), "filter reordered or invented entries");
                }
                let expected = top.entries().iter().filter(|e| keep.contains(&e.fact.relation.as_str())).count();
                prop_assert_eq!(kept.len(), expected);
            }
            Err(RetrievalError::EmptyAfterFilter) => {
                prop_assert!(top.entries().iter().all(|e| !keep.contains(&e.fact.relation.as_str())));
            }
            Err(e) => prop_assert!(false, "unexpected {e}"),
        }
    }

    #[test]
    fn schedule_ramps_then_decays(
        epochs in 1usize..30,
        per_epoch in 1usize..40,
        warm in 0usize..5,
        factor in 0.0f64..1.0,
    ) {
        let cfg = TrainingConfig {
            epochs,
            warmup_epochs: warm.min(epochs),
            warmup_factor: factor,
            annealing: Annealing::PerStep,
            ..TrainingConfig::default()
        };
        let total = epochs * per_epoch;
        let lrs: Vec<f64> = (0..total).map(|s| lr_at(s, total, &cfg)).collect();
        let peak = lrs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let at = lrs.iter().position(|&l| l == peak).unwrap();
        prop_assert!(lrs[..=at].windows(2).all(|w| w[0] <= w[1] + 1e-15));
        prop_assert!(lrs[at..].windows(2).all(|w| w[0] + 1e-15 >= w[1]));
        prop_assert!(peak <= cfg.lr_max + 1e-15);
        let floor = cfg.lr_min.min(cfg.warmup_factor * cfg.lr_max);
        prop_assert!(lrs.iter().all(|&l| l >= floor - 1e-15));
        if total > 1 {
            prop_assert!((lrs[total - 1] - cfg.lr_min).abs() < 1e-12);
        }
        prop_assert_eq!(lr_at(total + 7, total, &cfg), lrs[total - 1]);
    }

    #[test]
    fn empty_layer_matches_its_ablation(seed in 0u64..1_000_000) {
        let cfg = small_config(2);
        let g = random_instance(seed, &cfg, 5, false);
        let params = init_params(&cfg, seed).unwrap();

        let mut no_sem = g.clone();
        no_sem.semantic = emptied(&g.semantic);
        let ablated = ModelConfig { ablation: Ablation { drop_semantic: true, ..Ablation::default() }, ..cfg.clone() };
        let (a, _) = predict(&params, &no_sem, &cfg).unwrap();
        let (b, _) = predict(&params, &g, &ablated).unwrap();
        prop_assert_eq!(a.probabilities, b.probabilities);

        let mut no_vis = g.clone();
        no_vis.visual = emptied(&g.visual);
        let ablated = ModelConfig { ablation: Ablation { drop_visual: true, ..Ablation::default() }, ..cfg.clone() };
        let (a, _) = predict(&params, &no_vis, &cfg).unwrap();
        let (b, _) = predict(&params, &g, &ablated).unwrap();
        prop_assert_eq!(a.probabilities, b.probabilities);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn saved_datasets_load_back(
        seed in any::<u64>(),
        entities in 1usize..6,
        extra in 0usize..4,
        complete in any::<bool>(),
        shared in prop::option::of(0usize..10),
    ) {
        let spec = SyntheticSpec {
            train_instances: 6,
            test_instances: 3,
            entities,
            vocabulary: entities + 4,
            word_dim: 4,
            visual_dim: 6,
            fact_density: if complete { FactDensity::Complete } else { FactDensity::Sparse { extra } },
            candidate_mode: shared.map_or(CandidateMode::Inline, |d| CandidateMode::KnowledgeBase { distractors: d }),
            seed,
            ..SyntheticSpec::default()
        };
        let ds = generate_synthetic(&spec).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_dataset(&ds, dir.path()).unwrap();
        prop_assert_eq!(load_dataset(dir.path()).unwrap(), ds);
    }

    #[test]
    fn training_is_reproducible_and_ranks_every_entity(seed in 0u64..1_000_000) {
        let model = small_config(1);
        let data: Vec<_> = (0..6).map(|i| random_instance(seed * 8 + i, &model, 4, false)).collect();
        let cfg = TrainingConfig { epochs: 2, batch_size: 4, warmup_epochs: 1, seed, ..TrainingConfig::default() };
        let a = train(&data, &model, &cfg).unwrap();
        let b = train(&data, &model, &cfg).unwrap();
        prop_assert_eq!(&a.params, &b.params);
        prop_assert_eq!(&a.loss_curve, &b.loss_curve);
        prop_assert_eq!(a.optimizer_steps, 2 * 2);

        let rep = evaluate(&a.params, &data, &model).unwrap();
        let widest = data.iter().map(|g| g.fact.len()).max().unwrap();
        prop_assert_eq!(rep.accuracy_at(widest), 1.0);
        prop_assert!(rep.top1 <= rep.top3);
        for (r, g) in rep.instances.iter().zip(&data) {
            let mut sorted = r.ranking.clone();
            sorted.sort();
            prop_assert_eq!(sorted, (0..g.fact.len()).collect::<Vec<_>>());
        }
    }
}
