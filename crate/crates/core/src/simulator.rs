//! Synthetic corpora with known latent truth.
//!
//! Each sentence expresses either one relation (clear) or two relations
//! with equal weight (ambiguous). Faithful workers pick an option from the
//! sentence's truth with probability equal to their reliability and a
//! uniformly random option otherwise; spammers always pick uniformly.
//! Every random draw comes from a generator keyed by the seed and the
//! sentence or worker it decides, so output does not depend on threading.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::DatasetBundle;
use crate::rng::cell_rng;
use crate::schema::{
    AdjudicationRecord, ExpertLabel, Judgment, RelationSchema, Resolution, Sentence, TermMention,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub seed: u64,
    #[serde(default = "defaults::n_sentences")]
    pub n_sentences: usize,
    #[serde(default = "defaults::n_workers")]
    pub n_workers: usize,
    #[serde(default = "defaults::workers_per_sentence")]
    pub workers_per_sentence: usize,
    #[serde(default)]
    pub schema: RelationSchema,
    /// Probability that a sentence has a two-relation 50/50 truth.
    #[serde(default)]
    pub ambiguous_fraction: f64,
    #[serde(default = "defaults::faithful_reliability")]
    pub faithful_reliability: f64,
    #[serde(default)]
    pub spam_fraction: f64,
    /// Probability that the seed relation is one the sentence expresses.
    #[serde(default = "defaults::seed_precision")]
    pub seed_precision: f64,
    /// Probability that the expert label matches the latent truth.
    #[serde(default = "defaults::expert_accuracy")]
    pub expert_accuracy: f64,
}

mod defaults {
    pub fn n_sentences() -> usize {
        50
    }
    pub fn n_workers() -> usize {
        30
    }
    pub fn workers_per_sentence() -> usize {
        15
    }
    pub fn faithful_reliability() -> f64 {
        0.9
    }
    pub fn seed_precision() -> f64 {
        0.7
    }
    pub fn expert_accuracy() -> f64 {
        1.0
    }
}

impl SimConfig {
    pub fn new(seed: u64) -> Self {
        SimConfig {
            seed,
            n_sentences: defaults::n_sentences(),
            n_workers: defaults::n_workers(),
            workers_per_sentence: defaults::workers_per_sentence(),
            schema: RelationSchema::default(),
            ambiguous_fraction: 0.0,
            faithful_reliability: defaults::faithful_reliability(),
            spam_fraction: 0.0,
            seed_precision: defaults::seed_precision(),
            expert_accuracy: defaults::expert_accuracy(),
        }
    }

    pub fn check(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidParameter(msg));
        if self.n_sentences == 0 || self.n_workers == 0 || self.workers_per_sentence == 0 {
            return bad("sentence, worker and per-sentence counts must be positive".into());
        }
        if self.workers_per_sentence > self.n_workers {
            return bad(format!(
                "workers_per_sentence {} exceeds n_workers {}",
                self.workers_per_sentence, self.n_workers
            ));
        }
        for (name, p) in [
            ("ambiguous_fraction", self.ambiguous_fraction),
            ("faithful_reliability", self.faithful_reliability),
            ("spam_fraction", self.spam_fraction),
            ("seed_precision", self.seed_precision),
            ("expert_accuracy", self.expert_accuracy),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("{name} = {p} outside [0, 1]"));
            }
        }
        let relations = self.schema.relations().len();
        if relations == 0 {
            return bad("schema has no relations".into());
        }
        if relations < 2 && self.ambiguous_fraction > 0.0 {
            return bad("ambiguous sentences need at least two relations".into());
        }
        Ok(())
    }

    fn spam_count(&self) -> usize {
        (self.spam_fraction * self.n_workers as f64).round() as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WorkerKind {
    Faithful,
    Spam,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WorkerTruth {
    pub kind: WorkerKind,
    pub reliability: f64,
}

/// What the generator knew: written as `latent.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentTruth {
    pub seed: u64,
    /// Relation distribution per sentence; each sums to 1.
    pub sentences: BTreeMap<String, BTreeMap<String, f64>>,
    pub workers: BTreeMap<String, WorkerTruth>,
}

impl LatentTruth {
    pub fn is_ambiguous(&self, sentence_id: &str) -> bool {
        self.sentences.get(sentence_id).is_some_and(|d| d.len() > 1)
    }

    /// The relation of a clear sentence; `None` for ambiguous ones.
    pub fn clear_relation(&self, sentence_id: &str) -> Option<&str> {
        match self.sentences.get(sentence_id) {
            Some(d) if d.len() == 1 => d.keys().next().map(String::as_str),
            _ => None,
        }
    }

    pub fn expresses(&self, sentence_id: &str, relation: &str) -> bool {
        self.sentences
            .get(sentence_id)
            .is_some_and(|d| d.contains_key(relation))
    }

    pub fn spammers(&self) -> BTreeSet<&str> {
        self.workers
            .iter()
            .filter(|(_, w)| w.kind == WorkerKind::Spam)
            .map(|(id, _)| id.as_str())
            .collect()
    }

    /// True labels per relation over all sentences.
    pub fn labels(&self, relation: &str) -> BTreeMap<String, bool> {
        self.sentences
            .iter()
            .map(|(id, d)| (id.clone(), d.contains_key(relation)))
            .collect()
    }

    /// Resolves every (sentence, relation) pair from the truth, standing in
    /// for a perfect adjudicator.
    pub fn adjudications(&self, bundle: &DatasetBundle) -> Vec<AdjudicationRecord> {
        let relations = bundle.schema.relations();
        bundle
            .sentences
            .keys()
            .flat_map(|id| {
                relations.iter().map(move |r| AdjudicationRecord {
                    sentence_id: id.clone(),
                    relation: r.clone(),
                    resolution: if self.expresses(id, r) {
                        Resolution::Positive
                    } else {
                        Resolution::Negative
                    },
                })
            })
            .collect()
    }
}

struct SentenceDraw {
    sentence: Sentence,
    truth: BTreeMap<String, f64>,
    judgments: Vec<Judgment>,
    expert: ExpertLabel,
}

pub fn worker_id(i: usize) -> String {
    format!("w{i:04}")
}

pub fn sentence_id(i: usize) -> String {
    format!("sim{i:05}")
}

/// Generates a validated dataset and its latent truth.
pub fn generate(config: &SimConfig) -> Result<(DatasetBundle, LatentTruth)> {
    config.check()?;
    let seed = config.seed;
    let schema = &config.schema;
    let relations = schema.relations();
    let options: Vec<&str> = schema.options().collect();

    let mut pool: Vec<usize> = (0..config.n_workers).collect();
    pool.shuffle(&mut cell_rng(seed, &["spammers"]));
    let spam: BTreeSet<usize> = pool[..config.spam_count()].iter().copied().collect();
    let workers: BTreeMap<String, WorkerTruth> = (0..config.n_workers)
        .map(|i| {
            let truth = if spam.contains(&i) {
                WorkerTruth {
                    kind: WorkerKind::Spam,
                    reliability: 0.0,
                }
            } else {
                WorkerTruth {
                    kind: WorkerKind::Faithful,
                    reliability: config.faithful_reliability,
                }
            };
            (worker_id(i), truth)
        })
        .collect();

    let draws: Vec<SentenceDraw> = (0..config.n_sentences)
        .into_par_iter()
        .map(|i| {
            let id = sentence_id(i);
            let mut rng = cell_rng(seed, &["sentence", &id]);
            let truth: BTreeMap<String, f64> = if rng.gen_bool(config.ambiguous_fraction) {
                relations
                    .choose_multiple(&mut rng, 2)
                    .map(|r| (r.clone(), 0.5))
                    .collect()
            } else {
                [(relations.choose(&mut rng).expect("relations").clone(), 1.0)].into()
            };
            let support: Vec<&String> = truth.keys().collect();
            let seed_relation = if rng.gen_bool(config.seed_precision) {
                (*support.choose(&mut rng).expect("support")).clone()
            } else {
                relations.choose(&mut rng).expect("relations").clone()
            };
            let expressed = truth.contains_key(&seed_relation);
            let decision = if rng.gen_bool(config.expert_accuracy) {
                expressed
            } else {
                !expressed
            };

            let text = format!("{id}a may relate to {id}b .");
            let a = format!("{id}a");
            let b = format!("{id}b");
            let b_start = text.find(&b).expect("term in text");
            let sentence = Sentence {
                id: id.clone(),
                text: text.clone(),
                term1: TermMention::new(a.clone(), 0, a.chars().count()),
                term2: TermMention::new(b.clone(), b_start, b_start + b.chars().count()),
                seed_relation: seed_relation.clone(),
                source_tag: Some("simulated".into()),
            };

            let assigned: Vec<usize> = (0..config.n_workers)
                .collect::<Vec<_>>()
                .choose_multiple(&mut cell_rng(seed, &["assign", &id]), config.workers_per_sentence)
                .copied()
                .collect();
            let judgments = assigned
                .iter()
                .enumerate()
                .map(|(order, &w)| {
                    let wid = worker_id(w);
                    let mut cell = cell_rng(seed, &["judgment", &id, &wid]);
                    let faithful = !spam.contains(&w) && cell.gen_bool(config.faithful_reliability);
                    let pick: &str = if faithful {
                        support.choose(&mut cell).expect("support")
                    } else {
                        options.choose(&mut cell).expect("options")
                    };
                    Judgment::new(wid, id.clone(), [pick], order as u32)
                })
                .collect();
            SentenceDraw {
                expert: ExpertLabel {
                    sentence_id: id,
                    relation: seed_relation,
                    decision,
                },
                sentence,
                truth,
                judgments,
            }
        })
        .collect();

    let mut sentences = Vec::with_capacity(draws.len());
    let mut judgments = Vec::new();
    let mut experts = Vec::with_capacity(draws.len());
    let mut latent = BTreeMap::new();
    for d in draws {
        latent.insert(d.sentence.id.clone(), d.truth);
        sentences.push(d.sentence);
        judgments.extend(d.judgments);
        experts.push(d.expert);
    }
    let (bundle, _) = DatasetBundle::assemble(schema.clone(), sentences, judgments, Some(experts))
        .map_err(|report| {
            Error::Schema(format!(
                "simulated corpus failed validation: {}",
                report
                    .errors
                    .first()
                    .map(|v| v.message.as_str())
                    .unwrap_or("unknown")
            ))
        })?;
    Ok((
        bundle,
        LatentTruth {
            seed,
            sentences: latent,
            workers,
        },
    ))
}
