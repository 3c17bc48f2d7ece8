use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    CandidateSource, DataError, Dataset, DatasetHeader, InstanceRecord, KnowledgeBase, Split,
    DATASET_FORMAT_VERSION,
};
use crate::graph::{hashed_unit_vector, tokenize, BoundingBox, EmbeddingTable, OovPolicy, SemanticTriple, VisualNode};
use crate::retrieval::FactTriple;

pub const DEFAULT_RELATIONS: [&str; 6] = ["UsedFor", "IsA", "AtLocation", "CapableOf", "HasProperty", "PartOf"];

const NOUNS: [&str; 64] = [
    "knife", "apple", "bicycle", "umbrella", "guitar", "hammer", "kettle", "lamp", "ladder", "candle",
    "pillow", "bottle", "bridge", "camera", "carrot", "castle", "cherry", "clock", "cloud", "compass",
    "cookie", "crown", "desert", "dolphin", "drum", "eagle", "engine", "feather", "fence", "forest",
    "garden", "glove", "harbor", "helmet", "island", "jacket", "kite", "lemon", "magnet", "mirror",
    "needle", "orange", "paddle", "pencil", "piano", "planet", "rabbit", "ribbon", "river", "rocket",
    "saddle", "scarf", "shovel", "spoon", "stove", "tiger", "tomato", "tractor", "trumpet", "tunnel",
    "violin", "wagon", "whistle", "zebra",
];

const SCENE_RELATIONS: [&str; 5] = ["on", "near", "under", "behind", "holding"];
const CUE_RELATION: &str = "is";
const CUE_OBJECT: &str = "marked";
const FILLERS: [&str; 4] = ["image", "picture", "photo", "scene"];

fn template(relation: &str) -> String {
    match relation {
        "UsedFor" => "which object in the {} is used for this".into(),
        "IsA" => "what kind of thing in the {} is this".into(),
        "AtLocation" => "where would you usually find the thing in the {}".into(),
        "CapableOf" => "what in the {} is capable of doing this".into(),
        "HasProperty" => "which property does the thing in the {} have".into(),
        "PartOf" => "what is the thing in the {} part of".into(),
        other => format!("which thing in the {{}} relates by {other}"),
    }
}

/// How candidate facts are delivered.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum CandidateMode {
    /// Each record lists its facts inline.
    Inline,
    /// Facts live in a shared knowledge base; each record references its
    /// own facts plus `distractors` facts drawn from other instances.
    KnowledgeBase { distractors: usize },
}

/// Facts beyond the relation ring that links consecutive candidates.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum FactDensity {
    /// `extra` random pairs with random relations.
    Sparse { extra: usize },
    /// Every non-adjacent pair gets one fact with a random relation.
    Complete,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub train_instances: usize,
    pub test_instances: usize,
    /// Entities per fact graph.
    pub entities: usize,
    /// Size of the entity pool instances draw from.
    pub vocabulary: usize,
    pub relations: Vec<String>,
    /// Probability that the answer appears as a flagged visual object.
    pub visual_cue_rate: f64,
    /// Probability that the answer appears in a marking caption triple.
    pub semantic_cue_rate: f64,
    pub distractor_objects: usize,
    pub distractor_triples: usize,
    pub fact_density: FactDensity,
    pub word_dim: usize,
    pub visual_dim: usize,
    pub feature_noise: f64,
    pub candidate_mode: CandidateMode,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            train_instances: 2000,
            test_instances: 500,
            entities: 8,
            vocabulary: 16,
            relations: DEFAULT_RELATIONS.iter().map(|s| s.to_string()).collect(),
            visual_cue_rate: 1.0,
            semantic_cue_rate: 1.0,
            distractor_objects: 1,
            distractor_triples: 1,
            fact_density: FactDensity::Complete,
            word_dim: 8,
            visual_dim: 32,
            feature_noise: 0.1,
            candidate_mode: CandidateMode::Inline,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<(), DataError> {
        let bad = |m: &str| Err(DataError::Spec(m.into()));
        if self.train_instances + self.test_instances == 0 || self.entities == 0 {
            return bad("instance and entity counts must be positive");
        }
        if self.relations.is_empty() {
            return bad("relation vocabulary is empty");
        }
        if self.word_dim == 0 || self.visual_dim <= self.word_dim {
            return bad("need 0 < word_dim < visual_dim (visual features embed a word vector and a flag)");
        }
        if self.vocabulary > NOUNS.len() * 4 {
            return bad("vocabulary too large");
        }
        if self.vocabulary <= self.entities {
            return bad("vocabulary must exceed entities so distractors exist");
        }
        for r in [self.visual_cue_rate, self.semantic_cue_rate] {
            if !(0.0..=1.0).contains(&r) {
                return bad("cue rates must lie in [0, 1]");
            }
        }
        if self.distractor_objects == 0 && self.visual_cue_rate < 1.0 {
            return bad("instances without a visual cue need distractor objects");
        }
        if self.distractor_triples == 0 && self.semantic_cue_rate < 1.0 {
            return bad("instances without a semantic cue need distractor triples");
        }
        Ok(())
    }
}

fn entity_pool(n: usize) -> Vec<String> {
    (0..n)
        .map(|i| {
            let base = NOUNS[i % NOUNS.len()];
            match i / NOUNS.len() {
                0 => base.to_string(),
                k => format!("{base}{k}"),
            }
        })
        .collect()
}

fn random_box(rng: &mut ChaCha8Rng) -> BoundingBox {
    BoundingBox {
        x: rng.random_range(0.0..100.0_f64).round(),
        y: rng.random_range(0.0..100.0_f64).round(),
        w: rng.random_range(5.0..50.0_f64).round(),
        h: rng.random_range(5.0..50.0_f64).round(),
    }
}

struct Generator<'a> {
    spec: &'a SyntheticSpec,
    pool: Vec<String>,
    table: EmbeddingTable,
    rng: ChaCha8Rng,
}

impl Generator<'_> {
    fn object(&mut self, label: &str, flag: f64) -> Result<VisualNode, DataError> {
        let mut feature = self.table.lookup(label)?;
        feature.push(flag);
        let noise = self.spec.feature_noise;
        while feature.len() < self.spec.visual_dim {
            feature.push(noise * self.rng.random_range(-1.0..1.0));
        }
        Ok(VisualNode {
            feature,
            bbox: random_box(&mut self.rng),
            label: label.to_string(),
        })
    }

    fn distractor(&mut self, candidates: &[String]) -> String {
        loop {
            let e = self.pool.choose(&mut self.rng).expect("pool is non-empty").clone();
            if !candidates.contains(&e) {
                return e;
            }
        }
    }

    /// Relation ring over the shuffled candidates plus random extra facts.
    fn facts(&mut self, candidates: &[String], relation: &str) -> Vec<FactTriple> {
        let n = candidates.len();
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut self.rng);
        let mut facts: Vec<FactTriple> = (0..n)
            .map(|i| FactTriple {
                e1: candidates[order[i]].clone(),
                relation: relation.to_string(),
                e2: candidates[order[(i + 1) % n]].clone(),
            })
            .collect();
        if n > 1 && self.spec.fact_density == FactDensity::Complete {
            for a in 0..n {
                for b in a + 2..n {
                    if a == 0 && b == n - 1 {
                        continue;
                    }
                    let rel = self.spec.relations.choose(&mut self.rng).expect("relations").clone();
                    facts.push(FactTriple {
                        e1: candidates[order[a]].clone(),
                        relation: rel,
                        e2: candidates[order[b]].clone(),
                    });
                }
            }
        } else if let (true, FactDensity::Sparse { extra }) = (n > 1, self.spec.fact_density) {
            for _ in 0..extra {
                let a = self.rng.random_range(0..n);
                let b = (a + self.rng.random_range(1..n)) % n;
                let rel = self.spec.relations.choose(&mut self.rng).expect("relations").clone();
                facts.push(FactTriple {
                    e1: candidates[a].clone(),
                    relation: rel,
                    e2: candidates[b].clone(),
                });
            }
        }
        facts.shuffle(&mut self.rng);
        facts
    }

    fn instance(&mut self, index: usize, split: Split) -> Result<(InstanceRecord, Vec<FactTriple>), DataError> {
        let spec = self.spec;
        let candidates: Vec<String> = self
            .pool
            .choose_multiple(&mut self.rng, spec.entities)
            .cloned()
            .collect();
        let answer = candidates[self.rng.random_range(0..candidates.len())].clone();
        let relation = spec.relations.choose(&mut self.rng).expect("relations").clone();

        let mut objects = Vec::new();
        if self.rng.random_bool(spec.visual_cue_rate) {
            objects.push(self.object(&answer, 1.0)?);
        }
        for _ in 0..spec.distractor_objects {
            let d = self.distractor(&candidates);
            objects.push(self.object(&d, 0.0)?);
        }
        objects.shuffle(&mut self.rng);

        let mut triples = Vec::new();
        if self.rng.random_bool(spec.semantic_cue_rate) {
            triples.push(SemanticTriple {
                subject: vec![answer.clone()],
                relation: vec![CUE_RELATION.into()],
                object: vec![CUE_OBJECT.into()],
            });
        }
        for _ in 0..spec.distractor_triples {
            let s = self.distractor(&candidates);
            let o = self.distractor(&candidates);
            let r = SCENE_RELATIONS.choose(&mut self.rng).expect("scene relations");
            triples.push(SemanticTriple {
                subject: vec![s],
                relation: vec![r.to_string()],
                object: vec![o],
            });
        }
        triples.shuffle(&mut self.rng);

        let filler = FILLERS.choose(&mut self.rng).expect("fillers");
        let question = tokenize(&template(&relation).replace("{}", filler));
        let facts = self.facts(&candidates, &relation);
        let record = InstanceRecord {
            id: format!("syn-{index:05}"),
            split,
            fold: 0,
            question,
            relation: Some(relation),
            objects,
            triples,
            candidates: CandidateSource::Inline { facts: facts.clone() },
            answer,
        };
        Ok((record, facts))
    }
}

/// Builds a dataset where the answer entity is the candidate that also
/// appears as the flagged visual object and/or as the subject of the
/// marking caption triple. Candidate sets, answers, question relations
/// and fact structure are drawn independently of each other, so the fact
/// layer and question alone carry no information about the answer.
/// Output is a pure function of the spec.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Dataset, DataError> {
    spec.validate()?;
    let emb_seed = spec.seed ^ 0x5eed_e3b0;
    let oov = OovPolicy::Hashed { seed: emb_seed };
    let mut table = EmbeddingTable::new(spec.word_dim, oov)?;
    let pool = entity_pool(spec.vocabulary);
    let mut words: Vec<String> = pool.clone();
    for r in &spec.relations {
        words.extend(tokenize(r));
        words.extend(tokenize(&template(r)));
    }
    words.extend(SCENE_RELATIONS.iter().map(|s| s.to_string()));
    words.extend([CUE_RELATION, CUE_OBJECT].map(String::from));
    words.extend(FILLERS.iter().map(|s| s.to_string()));
    words.sort();
    words.dedup();
    for w in &words {
        table.insert(w.clone(), hashed_unit_vector(w, emb_seed, spec.word_dim))?;
    }

    let mut gen = Generator {
        spec,
        pool,
        table,
        rng: ChaCha8Rng::seed_from_u64(spec.seed),
    };
    let total = spec.train_instances + spec.test_instances;
    let mut records = Vec::with_capacity(total);
    let mut own_facts = Vec::with_capacity(total);
    for i in 0..total {
        let split = if i < spec.train_instances { Split::Train } else { Split::Test };
        let (r, f) = gen.instance(i, split)?;
        records.push(r);
        own_facts.push(f);
    }

    let knowledge_base = match spec.candidate_mode {
        CandidateMode::Inline => None,
        CandidateMode::KnowledgeBase { distractors } => {
            let mut facts = Vec::new();
            let mut ranges = Vec::with_capacity(total);
            for f in &own_facts {
                ranges.push(facts.len()..facts.len() + f.len());
                facts.extend(f.iter().cloned());
            }
            for (i, rec) in records.iter_mut().enumerate() {
                let mut ids: Vec<usize> = ranges[i].clone().collect();
                for _ in 0..distractors {
                    let k = gen.rng.random_range(0..facts.len());
                    if !ranges[i].contains(&k) {
                        ids.push(k);
                    }
                }
                ids.shuffle(&mut gen.rng);
                rec.candidates = CandidateSource::KnowledgeBase { fact_ids: ids };
            }
            Some(KnowledgeBase {
                format_version: DATASET_FORMAT_VERSION,
                facts,
            })
        }
    };

    Ok(Dataset {
        header: DatasetHeader {
            format_version: DATASET_FORMAT_VERSION,
            word_dim: spec.word_dim,
            visual_dim: spec.visual_dim,
            relations: spec.relations.clone(),
            oov,
        },
        records,
        knowledge_base,
        embeddings: gen.table,
    })
}
