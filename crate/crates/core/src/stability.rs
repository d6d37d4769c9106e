//! Worker-count stability: how sentence vectors and crowd annotation quality
//! evolve as workers are added one at a time in submission order.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluation::{annotation_quality, micro_average};
use crate::rng::cell_rng;
use crate::schema::{Judgment, RelationSchema};
use crate::vectors::{annotation_vector, cosine, SentenceVector};

/// Upper bound for the default `k_max`.
pub const K_MAX_CAP: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CurveKind {
    CosineDelta,
    AnnotationF1,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub k: usize,
    pub value: f64,
    pub contributing_sentences: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityCurve {
    pub kind: CurveKind,
    pub points: Vec<CurvePoint>,
}

impl StabilityCurve {
    pub fn at(&self, k: usize) -> Option<&CurvePoint> {
        self.points.iter().find(|p| p.k == k)
    }
}

/// Order in which workers enter a sentence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum WorkerOrder {
    /// Submission index, as recorded in the data.
    #[default]
    Submission,
    /// Seeded per-sentence shuffle, for estimating order sensitivity.
    Shuffled(u64),
}

/// `V_1..V_n`: running sums of annotation vectors in submission order.
pub fn incremental_vectors(judgments: &[Judgment], schema: &RelationSchema) -> Vec<SentenceVector> {
    let mut sorted: Vec<&Judgment> = judgments.iter().collect();
    sorted.sort_by(|a, b| (a.submission_index, &a.worker_id).cmp(&(b.submission_index, &b.worker_id)));
    prefixes(&sorted, schema)
}

fn prefixes(ordered: &[&Judgment], schema: &RelationSchema) -> Vec<SentenceVector> {
    let mut v = SentenceVector::zeros(schema.dimension());
    ordered
        .iter()
        .map(|j| {
            v.add(&annotation_vector(j, schema));
            v.clone()
        })
        .collect()
}

fn ordered<'a>(sentence_id: &str, judgments: &'a [Judgment], order: WorkerOrder) -> Vec<&'a Judgment> {
    let mut out: Vec<&Judgment> = judgments.iter().collect();
    out.sort_by(|a, b| (a.submission_index, &a.worker_id).cmp(&(b.submission_index, &b.worker_id)));
    if let WorkerOrder::Shuffled(seed) = order {
        out.shuffle(&mut cell_rng(seed, &["stability", sentence_id]));
    }
    out
}

/// Largest worker count in the data, capped at [`K_MAX_CAP`].
pub fn default_k_max(groups: &BTreeMap<String, Vec<Judgment>>) -> usize {
    groups.values().map(Vec::len).max().unwrap_or(0).min(K_MAX_CAP)
}

/// Point `k` (for `k = 2..=k_max`) is the mean of `1 - cos(V_{k-1}, V_k)`
/// over sentences with at least `k` workers. Points with no contributing
/// sentence are omitted.
pub fn mean_cosine_delta_curve(
    groups: &BTreeMap<String, Vec<Judgment>>,
    schema: &RelationSchema,
    k_max: usize,
    order: WorkerOrder,
) -> Result<StabilityCurve> {
    if k_max < 2 {
        return Err(Error::InvalidParameter(format!("k_max must be at least 2, got {k_max}")));
    }
    // per sentence: deltas[k - 2] for k = 2..=min(n, k_max)
    let per_sentence: Vec<Vec<f64>> = groups
        .par_iter()
        .map(|(id, js)| {
            let vs = prefixes(&ordered(id, js, order), schema);
            vs.windows(2)
                .take(k_max - 1)
                .map(|w| cosine(w[0].components(), w[1].components()).map(|c| 1.0 - c))
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let mut points = Vec::new();
    for k in 2..=k_max {
        let mut sum = 0.0;
        let mut n = 0;
        for deltas in &per_sentence {
            if let Some(d) = deltas.get(k - 2) {
                sum += d;
                n += 1;
            }
        }
        if n > 0 {
            points.push(CurvePoint {
                k,
                value: sum / n as f64,
                contributing_sentences: n,
            });
        }
    }
    Ok(StabilityCurve {
        kind: CurveKind::CosineDelta,
        points,
    })
}

/// Gold labels and best crowd threshold for one relation.
#[derive(Debug, Clone, PartialEq)]
pub struct RelationGold {
    pub labels: BTreeMap<String, bool>,
    pub threshold: f64,
    /// Full-data srs, used as the evaluation weight.
    pub srs: BTreeMap<String, f64>,
}

/// Point `k` (for `k = 1..=k_max`) is the micro-averaged F1 across
/// relations of crowd labels recomputed from the first `min(k, n_s)`
/// workers of each gold sentence. `contributing_sentences` counts the gold
/// sentences that have at least `k` workers.
pub fn quality_by_worker_count(
    groups: &BTreeMap<String, Vec<Judgment>>,
    schema: &RelationSchema,
    gold: &BTreeMap<String, RelationGold>,
    k_max: usize,
    order: WorkerOrder,
) -> Result<StabilityCurve> {
    if k_max < 1 {
        return Err(Error::InvalidParameter("k_max must be at least 1".into()));
    }
    let mut relation_indices = Vec::with_capacity(gold.len());
    for relation in gold.keys() {
        if !schema.is_relation(relation) {
            return Err(Error::UnknownOption(relation.clone()));
        }
        relation_indices.push(schema.option_index(relation).expect("relation has an index"));
    }
    let sentence_ids: BTreeSet<&str> = gold
        .values()
        .flat_map(|g| g.labels.keys().map(String::as_str))
        .collect();
    let missing: Vec<String> = sentence_ids
        .iter()
        .filter(|id| !groups.contains_key(**id))
        .map(|id| id.to_string())
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingScores(missing));
    }

    // per sentence: prefix vectors truncated at k_max
    let prefix_table: BTreeMap<&str, Vec<SentenceVector>> = sentence_ids
        .par_iter()
        .map(|&id| {
            let mut vs = prefixes(&ordered(id, &groups[id], order), schema);
            vs.truncate(k_max);
            (id, vs)
        })
        .collect::<Vec<_>>()
        .into_iter()
        .collect();

    let mut points = Vec::with_capacity(k_max);
    for k in 1..=k_max {
        let mut reports = Vec::with_capacity(gold.len());
        for (g, &index) in gold.values().zip(&relation_indices) {
            let candidate: BTreeMap<String, bool> = g
                .labels
                .keys()
                .map(|id| {
                    let vs = &prefix_table[id.as_str()];
                    let v = &vs[k.min(vs.len()) - 1];
                    (id.clone(), v.unit_component(index) >= g.threshold)
                })
                .collect();
            reports.push(annotation_quality(&candidate, &g.labels, &g.srs)?);
        }
        let value = if reports.is_empty() {
            0.0
        } else {
            micro_average(&reports)?.f1
        };
        let contributing_sentences = sentence_ids
            .iter()
            .filter(|id| groups[**id].len() >= k)
            .count();
        points.push(CurvePoint {
            k,
            value,
            contributing_sentences,
        });
    }
    Ok(StabilityCurve {
        kind: CurveKind::AnnotationF1,
        points,
    })
}
