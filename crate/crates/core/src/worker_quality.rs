//! Disagreement-based worker metrics, iterative spam removal and the
//! minimum-workers-per-sentence floor.
//!
//! A worker's *sentence agreement* is the mean, over the sentences they
//! judged, of `cos(W, V - W)`: their annotation vector against the sum of
//! everybody else's. Their *worker agreement* is the mean pairwise cosine
//! against every co-worker on every shared sentence. Spam filtering
//! repeatedly drops workers whose sentence agreement falls below a
//! threshold and recomputes the metrics on the survivors.

use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::schema::{Judgment, RelationSchema};
use crate::vectors::{annotation_vector, cosine, group_by_sentence, AnnotationVector, SentenceVector};

/// Default minimum number of trusted workers per sentence.
pub const DEFAULT_WORKER_FLOOR: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkerMetrics {
    pub worker_id: String,
    pub worker_sentence_agreement: f64,
    /// Absent when the worker shares no sentence with anybody.
    pub worker_worker_agreement: Option<f64>,
    pub judged_sentences: usize,
    pub spam_flag: bool,
    /// Set for workers whose metrics rest on too little evidence.
    pub review_flag: bool,
    /// Round in which the worker was removed, if any.
    pub removal_round: Option<u32>,
}

/// Precomputed annotation and sentence vectors for a judgment set.
struct Index {
    sentences: BTreeMap<String, (SentenceVector, Vec<(String, AnnotationVector)>)>,
    workers: BTreeMap<String, Vec<String>>,
}

impl Index {
    fn build(judgments: &[Judgment], schema: &RelationSchema) -> Self {
        let mut sentences = BTreeMap::new();
        let mut workers: BTreeMap<String, Vec<String>> = BTreeMap::new();
        for (sid, group) in group_by_sentence(judgments) {
            let mut v = SentenceVector::zeros(schema.dimension());
            let mut members = Vec::with_capacity(group.len());
            for j in &group {
                let a = annotation_vector(j, schema);
                v.add(&a);
                members.push((j.worker_id.clone(), a));
                workers.entry(j.worker_id.clone()).or_default().push(sid.clone());
            }
            sentences.insert(sid, (v, members));
        }
        Index { sentences, workers }
    }

    fn sentence_agreement(&self, worker: &str) -> Result<f64> {
        let judged = self
            .workers
            .get(worker)
            .ok_or_else(|| Error::UnknownWorker(worker.to_string()))?;
        let mut total = 0.0;
        for sid in judged {
            let (v, members) = &self.sentences[sid];
            if let Some((_, a)) = members.iter().find(|(w, _)| w == worker) {
                // zero leave-one-out vector contributes 0
                total += cosine(a.components(), &v.without(a))?;
            }
        }
        Ok(total / judged.len() as f64)
    }

    fn worker_agreement(&self, worker: &str) -> Result<Option<f64>> {
        let judged = self
            .workers
            .get(worker)
            .ok_or_else(|| Error::UnknownWorker(worker.to_string()))?;
        let mut total = 0.0;
        let mut pairs = 0usize;
        for sid in judged {
            let (_, members) = &self.sentences[sid];
            let Some((_, mine)) = members.iter().find(|(w, _)| w == worker) else {
                continue;
            };
            for (_, theirs) in members.iter().filter(|(w, _)| w != worker) {
                total += cosine(mine.components(), theirs.components())?;
                pairs += 1;
            }
        }
        Ok((pairs > 0).then(|| total / pairs as f64))
    }

    fn metrics(&self, worker: &str, min_judgments: usize) -> Result<WorkerMetrics> {
        let judged = self.workers.get(worker).map_or(0, Vec::len);
        let wwa = self.worker_agreement(worker)?;
        Ok(WorkerMetrics {
            worker_id: worker.to_string(),
            worker_sentence_agreement: self.sentence_agreement(worker)?,
            worker_worker_agreement: wwa,
            judged_sentences: judged,
            spam_flag: false,
            review_flag: wwa.is_none() || judged < min_judgments,
            removal_round: None,
        })
    }
}

/// Mean over the worker's sentences of `cos(W_{s,i}, V_s - W_{s,i})`.
pub fn worker_sentence_agreement(
    worker: &str,
    judgments: &[Judgment],
    schema: &RelationSchema,
) -> Result<f64> {
    Index::build(judgments, schema).sentence_agreement(worker)
}

/// Mean over all (co-worker, shared sentence) pairs of `cos(W_{s,i}, W_{s,j})`.
/// `None` when the worker has no co-workers.
pub fn worker_worker_agreement(
    worker: &str,
    judgments: &[Judgment],
    schema: &RelationSchema,
) -> Result<Option<f64>> {
    Index::build(judgments, schema).worker_agreement(worker)
}

/// Metrics for every worker, ordered by worker id.
pub fn compute_worker_metrics(
    judgments: &[Judgment],
    schema: &RelationSchema,
    min_judgments: usize,
) -> Result<Vec<WorkerMetrics>> {
    let index = Index::build(judgments, schema);
    let ids: Vec<&String> = index.workers.keys().collect();
    ids.par_iter()
        .map(|w| index.metrics(w, min_judgments))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpamFilterConfig {
    /// Workers with sentence agreement strictly below this are removed.
    pub threshold: f64,
    pub max_rounds: u32,
    /// Workers with fewer judgments are reported but never removed.
    pub min_judgments: usize,
    pub worker_floor: usize,
}

impl Default for SpamFilterConfig {
    fn default() -> Self {
        SpamFilterConfig {
            threshold: 0.5,
            max_rounds: 10,
            min_judgments: 3,
            worker_floor: DEFAULT_WORKER_FLOOR,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThinSentence {
    pub sentence_id: String,
    pub worker_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FloorReport {
    pub floor: usize,
    pub thin: Vec<ThinSentence>,
}

impl FloorReport {
    pub fn is_empty(&self) -> bool {
        self.thin.is_empty()
    }

    pub fn contains(&self, sentence_id: &str) -> bool {
        self.thin.iter().any(|t| t.sentence_id == sentence_id)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpamFilterOutcome {
    pub trusted: Vec<Judgment>,
    /// Final metrics: survivors computed on the trusted set, removed
    /// workers as of their removal round.
    pub workers: Vec<WorkerMetrics>,
    /// Metrics of every round, in order.
    pub history: Vec<Vec<WorkerMetrics>>,
    pub rounds: u32,
    pub floor: FloorReport,
}

impl SpamFilterOutcome {
    pub fn removed(&self) -> impl Iterator<Item = &WorkerMetrics> {
        self.workers.iter().filter(|w| w.spam_flag)
    }
}

/// Iteratively removes low-agreement workers until a fixed point or
/// `max_rounds`. Sentences left below `worker_floor` trusted workers are
/// reported in the outcome's floor report.
pub fn filter_spammers(
    judgments: &[Judgment],
    schema: &RelationSchema,
    config: &SpamFilterConfig,
) -> Result<SpamFilterOutcome> {
    if !(0.0..=1.0).contains(&config.threshold) {
        return Err(Error::InvalidParameter(format!(
            "spam threshold {} outside [0, 1]",
            config.threshold
        )));
    }
    let all_sentences: BTreeSet<String> = judgments.iter().map(|j| j.sentence_id.clone()).collect();
    let mut active: Vec<Judgment> = judgments.to_vec();
    let mut removed: BTreeMap<String, WorkerMetrics> = BTreeMap::new();
    let mut history = Vec::new();
    let mut rounds = 0;

    while rounds < config.max_rounds {
        rounds += 1;
        let mut metrics = compute_worker_metrics(&active, schema, config.min_judgments)?;
        let mut flagged = BTreeSet::new();
        for m in &mut metrics {
            if m.judged_sentences >= config.min_judgments
                && m.worker_sentence_agreement < config.threshold
            {
                m.spam_flag = true;
                m.removal_round = Some(rounds);
                flagged.insert(m.worker_id.clone());
                removed.insert(m.worker_id.clone(), m.clone());
            }
        }
        history.push(metrics);
        if flagged.is_empty() {
            break;
        }
        active.retain(|j| !flagged.contains(&j.worker_id));
    }

    let mut workers: BTreeMap<String, WorkerMetrics> = removed;
    for m in compute_worker_metrics(&active, schema, config.min_judgments)? {
        workers.insert(m.worker_id.clone(), m);
    }
    let floor = enforce_worker_floor(&active, all_sentences.iter().map(String::as_str), config.worker_floor);
    Ok(SpamFilterOutcome {
        trusted: active,
        workers: workers.into_values().collect(),
        history,
        rounds,
        floor,
    })
}

/// Lists sentences (from `sentence_ids`) with fewer than `floor` trusted
/// workers, including sentences that lost every worker.
pub fn enforce_worker_floor<'a>(
    trusted: &'a [Judgment],
    sentence_ids: impl IntoIterator<Item = &'a str>,
    floor: usize,
) -> FloorReport {
    let mut counts: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
    for j in trusted {
        counts.entry(&j.sentence_id).or_default().insert(&j.worker_id);
    }
    let ids: BTreeSet<&str> = sentence_ids.into_iter().chain(counts.keys().copied()).collect();
    let thin = ids
        .into_iter()
        .filter_map(|id| {
            let n = counts.get(id).map_or(0, BTreeSet::len);
            (n < floor).then(|| ThinSentence {
                sentence_id: id.to_string(),
                worker_count: n,
            })
        })
        .collect();
    FloorReport { floor, thin }
}

/// Drops judgments on sentences listed in the floor report.
pub fn exclude_thin(judgments: &[Judgment], report: &FloorReport) -> Vec<Judgment> {
    let thin: BTreeSet<&str> = report.thin.iter().map(|t| t.sentence_id.as_str()).collect();
    judgments
        .iter()
        .filter(|j| !thin.contains(j.sentence_id.as_str()))
        .cloned()
        .collect()
}
