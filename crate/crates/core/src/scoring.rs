//! Sentence-relation scores, thresholded training labels, the four
//! training datasets, crowd/expert agreement and the adjudicated
//! evaluation set.
//!
//! The sentence-relation score of relation `r` on sentence `s` is the cosine
//! between the sentence vector and the unit vector of `r`, i.e.
//! `V_s[r] / |V_s|`. A threshold `t` turns it into a signed training weight:
//! `srs` when `srs >= t`, otherwise `srs - 1`.

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::cell_rng;
use crate::schema::{AdjudicationRecord, ExpertLabel, Judgment, RelationSchema, Resolution, Sentence};
use crate::vectors::SentenceVector;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SentenceRelationScore {
    pub sentence_id: String,
    pub relation: String,
    pub srs: f64,
    /// The sentence vector was all zeros; `srs` was forced to 0.
    #[serde(default)]
    pub zero_vector: bool,
}

/// `cos(V_s, e_r)` for one sentence and option.
pub fn sentence_relation_score(
    sentence_id: &str,
    vector: &SentenceVector,
    relation: &str,
    schema: &RelationSchema,
) -> Result<SentenceRelationScore> {
    let index = schema
        .option_index(relation)
        .ok_or_else(|| Error::UnknownOption(relation.to_string()))?;
    let zero = vector.is_zero();
    let srs = vector.unit_component(index);
    Ok(SentenceRelationScore {
        sentence_id: sentence_id.to_string(),
        relation: relation.to_string(),
        srs,
        zero_vector: zero,
    })
}

/// Signed training weight: `srs` if `srs >= t`, else `srs - 1`.
pub fn apply_threshold(srs: f64, threshold: f64) -> Result<f64> {
    check_threshold(threshold)?;
    Ok(if srs >= threshold { srs } else { srs - 1.0 })
}

fn check_threshold(t: f64) -> Result<()> {
    if (0.0..=1.0).contains(&t) {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("threshold {t} outside [0, 1]")))
    }
}

/// Scores of every option for every scored sentence.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreTable {
    options: Vec<String>,
    scores: BTreeMap<String, Vec<f64>>,
    zero_vectors: BTreeSet<String>,
}

/// One row of `scores.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub sentence_id: String,
    pub relation: String,
    pub srs: f64,
}

impl ScoreTable {
    pub fn compute(vectors: &BTreeMap<String, SentenceVector>, schema: &RelationSchema) -> Self {
        let mut scores = BTreeMap::new();
        let mut zero_vectors = BTreeSet::new();
        for (id, v) in vectors {
            if v.is_zero() {
                zero_vectors.insert(id.clone());
            }
            let row = (0..v.components().len()).map(|i| v.unit_component(i)).collect();
            scores.insert(id.clone(), row);
        }
        ScoreTable {
            options: schema.options().map(String::from).collect(),
            scores,
            zero_vectors,
        }
    }

    /// Rebuilds a table from `scores.csv` rows. Missing options score 0.
    pub fn from_rows(rows: &[ScoreRow], schema: &RelationSchema) -> Result<Self> {
        let options: Vec<String> = schema.options().map(String::from).collect();
        let mut scores: BTreeMap<String, Vec<f64>> = BTreeMap::new();
        for row in rows {
            let i = schema
                .option_index(&row.relation)
                .ok_or_else(|| Error::UnknownOption(row.relation.clone()))?;
            scores
                .entry(row.sentence_id.clone())
                .or_insert_with(|| vec![0.0; options.len()])[i] = row.srs;
        }
        let zero_vectors = scores
            .iter()
            .filter(|(_, v)| v.iter().all(|&x| x == 0.0))
            .map(|(k, _)| k.clone())
            .collect();
        Ok(ScoreTable {
            options,
            scores,
            zero_vectors,
        })
    }

    pub fn rows(&self) -> Vec<ScoreRow> {
        self.scores
            .iter()
            .flat_map(|(id, row)| {
                self.options.iter().zip(row).map(move |(o, &srs)| ScoreRow {
                    sentence_id: id.clone(),
                    relation: o.clone(),
                    srs,
                })
            })
            .collect()
    }

    pub fn get(&self, sentence_id: &str, relation: &str) -> Option<f64> {
        let i = self.options.iter().position(|o| o == relation)?;
        self.scores.get(sentence_id).map(|row| row[i])
    }

    /// sentence id → srs for one relation.
    pub fn relation_scores(&self, relation: &str) -> Result<BTreeMap<String, f64>> {
        let i = self
            .options
            .iter()
            .position(|o| o == relation)
            .ok_or_else(|| Error::UnknownOption(relation.to_string()))?;
        Ok(self.scores.iter().map(|(id, row)| (id.clone(), row[i])).collect())
    }

    pub fn sentence_ids(&self) -> impl Iterator<Item = &String> {
        self.scores.keys()
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    /// Sentences whose vector was all zeros.
    pub fn zero_vectors(&self) -> &BTreeSet<String> {
        &self.zero_vectors
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Crowd,
    Baseline,
    Expert,
    Single,
}

impl Provenance {
    pub fn as_str(&self) -> &'static str {
        match self {
            Provenance::Crowd => "crowd",
            Provenance::Baseline => "baseline",
            Provenance::Expert => "expert",
            Provenance::Single => "single",
        }
    }
}

impl std::fmt::Display for Provenance {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingInstance {
    pub sentence_id: String,
    pub relation: String,
    pub weight: f64,
    pub provenance: Provenance,
}

impl TrainingInstance {
    pub fn is_positive(&self) -> bool {
        self.weight >= 0.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exclusion {
    pub sentence_id: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSet {
    pub provenance: Provenance,
    pub relation: String,
    pub instances: Vec<TrainingInstance>,
    pub excluded: Vec<Exclusion>,
    pub warnings: Vec<String>,
}

impl TrainingSet {
    fn new(provenance: Provenance, relation: &str) -> Self {
        TrainingSet {
            provenance,
            relation: relation.to_string(),
            instances: Vec::new(),
            excluded: Vec::new(),
            warnings: Vec::new(),
        }
    }

    fn push(&mut self, sentence_id: &str, weight: f64) {
        self.instances.push(TrainingInstance {
            sentence_id: sentence_id.to_string(),
            relation: self.relation.clone(),
            weight,
            provenance: self.provenance,
        });
    }

    fn exclude(&mut self, sentence_id: &str, reason: impl Into<String>) {
        self.excluded.push(Exclusion {
            sentence_id: sentence_id.to_string(),
            reason: reason.into(),
        });
    }

    /// sentence id → positive label.
    pub fn labels(&self) -> BTreeMap<String, bool> {
        self.instances
            .iter()
            .map(|i| (i.sentence_id.clone(), i.is_positive()))
            .collect()
    }
}

/// Weighted crowd labels for every scored sentence.
pub fn build_crowd_training_set(scores: &ScoreTable, relation: &str, threshold: f64) -> Result<TrainingSet> {
    check_threshold(threshold)?;
    let srs = scores.relation_scores(relation)?;
    let mut set = TrainingSet::new(Provenance::Crowd, relation);
    if threshold == 0.0 {
        set.warnings
            .push("threshold 0 makes every sentence positive".to_string());
    }
    for (id, s) in &srs {
        set.push(id, apply_threshold(*s, threshold)?);
    }
    Ok(set)
}

/// Distant-supervision labels: +1 when the seed is the target relation,
/// -1 when it is another non-overlapping relation.
pub fn build_baseline_training_set<'a>(
    sentences: impl IntoIterator<Item = &'a Sentence>,
    relation: &str,
    schema: &RelationSchema,
) -> Result<TrainingSet> {
    if !schema.is_relation(relation) {
        return Err(Error::UnknownOption(relation.to_string()));
    }
    let mut set = TrainingSet::new(Provenance::Baseline, relation);
    for s in sentences {
        if s.seed_relation == relation {
            set.push(&s.id, 1.0);
        } else if schema.overlaps(relation, &s.seed_relation) {
            set.exclude(&s.id, format!("seed `{}` overlaps `{relation}`", s.seed_relation));
        } else {
            set.push(&s.id, -1.0);
        }
    }
    Ok(set)
}

/// Expert-derived binary label per sentence for `relation`.
///
/// A label on the target relation is used as given. Otherwise a positive
/// expert label on another, non-overlapping relation becomes a negative.
/// Everything else is excluded with a reason.
pub fn expert_label_map<'a>(
    sentences: impl IntoIterator<Item = &'a Sentence>,
    labels: &[ExpertLabel],
    relation: &str,
    schema: &RelationSchema,
) -> (BTreeMap<String, bool>, Vec<Exclusion>) {
    let mut by_sentence: BTreeMap<&str, Vec<&ExpertLabel>> = BTreeMap::new();
    for l in labels {
        by_sentence.entry(&l.sentence_id).or_default().push(l);
    }
    let mut map = BTreeMap::new();
    let mut excluded = Vec::new();
    let mut exclude = |id: &str, reason: String| {
        excluded.push(Exclusion {
            sentence_id: id.to_string(),
            reason,
        })
    };
    for s in sentences {
        let Some(ls) = by_sentence.get(s.id.as_str()) else {
            exclude(&s.id, "no expert label".into());
            continue;
        };
        if let Some(target) = ls.iter().find(|l| l.relation == relation) {
            map.insert(s.id.clone(), target.decision);
            continue;
        }
        let reusable = ls
            .iter()
            .any(|l| l.decision && schema.is_relation(&l.relation) && !schema.overlaps(relation, &l.relation));
        if reusable {
            map.insert(s.id.clone(), false);
        } else {
            exclude(&s.id, format!("no usable expert decision for `{relation}`"));
        }
    }
    (map, excluded)
}

pub fn build_expert_training_set<'a>(
    sentences: impl IntoIterator<Item = &'a Sentence>,
    labels: &[ExpertLabel],
    relation: &str,
    schema: &RelationSchema,
) -> Result<TrainingSet> {
    if !schema.is_relation(relation) {
        return Err(Error::UnknownOption(relation.to_string()));
    }
    let (map, excluded) = expert_label_map(sentences, labels, relation, schema);
    let mut set = TrainingSet::new(Provenance::Expert, relation);
    for (id, positive) in &map {
        set.push(id, if *positive { 1.0 } else { -1.0 });
    }
    set.excluded = excluded;
    Ok(set)
}

/// Labels from one trusted worker per sentence, drawn uniformly with a
/// generator keyed by `(seed, sentence id)`.
pub fn build_single_training_set(
    groups: &BTreeMap<String, Vec<Judgment>>,
    relation: &str,
    seed: u64,
) -> TrainingSet {
    let mut set = TrainingSet::new(Provenance::Single, relation);
    for (id, judgments) in groups {
        if judgments.is_empty() {
            set.exclude(id, "no trusted judgments");
            continue;
        }
        let mut workers: Vec<&Judgment> = judgments.iter().collect();
        workers.sort_by(|a, b| a.worker_id.cmp(&b.worker_id));
        let pick = cell_rng(seed, &["single", id]).gen_range(0..workers.len());
        let positive = workers[pick].selections.contains(relation);
        set.push(id, if positive { 1.0 } else { -1.0 });
    }
    set
}

/// Fraction of expert-labeled, scored sentences where the thresholded crowd
/// label has the same sign as the expert label.
pub fn crowd_expert_agreement(
    scores: &ScoreTable,
    expert: &BTreeMap<String, bool>,
    relation: &str,
    threshold: f64,
) -> Result<f64> {
    check_threshold(threshold)?;
    let srs = scores.relation_scores(relation)?;
    let mut matches = 0usize;
    let mut compared = 0usize;
    for (id, &label) in expert {
        let Some(&s) = srs.get(id) else { continue };
        compared += 1;
        if (s >= threshold) == label {
            matches += 1;
        }
    }
    if compared == 0 {
        return Err(Error::InvalidParameter(format!(
            "no scored expert-labeled sentences for `{relation}`"
        )));
    }
    Ok(matches as f64 / compared as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgreementPoint {
    pub threshold: f64,
    pub agreement: f64,
}

/// `0.05, 0.10, ..., 0.95`.
pub fn default_grid() -> Vec<f64> {
    (1..=19).map(|i| i as f64 / 20.0).collect()
}

pub fn agreement_sweep(
    scores: &ScoreTable,
    expert: &BTreeMap<String, bool>,
    relation: &str,
    grid: &[f64],
) -> Result<Vec<AgreementPoint>> {
    grid.iter()
        .map(|&t| {
            Ok(AgreementPoint {
                threshold: t,
                agreement: crowd_expert_agreement(scores, expert, relation, t)?,
            })
        })
        .collect()
}

/// Threshold with the highest agreement; the lowest one wins ties.
pub fn best_threshold(points: &[AgreementPoint]) -> Option<f64> {
    let mut best: Option<AgreementPoint> = None;
    for p in points {
        if best.is_none_or(|b| p.agreement > b.agreement) {
            best = Some(*p);
        }
    }
    best.map(|p| p.threshold)
}

/// A crowd/expert disagreement awaiting manual resolution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueueEntry {
    pub sentence_id: String,
    pub relation: String,
    pub srs: f64,
    pub expert_decision: u8,
}

/// Sentences where the crowd at `threshold` and the expert disagree.
pub fn disagreements(
    scores: &ScoreTable,
    expert: &BTreeMap<String, bool>,
    relation: &str,
    threshold: f64,
) -> Result<Vec<QueueEntry>> {
    check_threshold(threshold)?;
    let srs = scores.relation_scores(relation)?;
    let mut out = Vec::new();
    for (id, &label) in expert {
        let Some(&s) = srs.get(id) else { continue };
        if (s >= threshold) != label {
            out.push(QueueEntry {
                sentence_id: id.clone(),
                relation: relation.to_string(),
                srs: s,
                expert_decision: label as u8,
            });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoldSet {
    pub relation: String,
    pub threshold: f64,
    pub labels: BTreeMap<String, bool>,
    /// Disagreements resolved by adjudication.
    pub adjudicated: Vec<String>,
    /// Disagreements adjudicated as unresolved; never evaluated.
    pub dropped_unresolved: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum EvaluationSet {
    Gold(GoldSet),
    /// Some disagreements have no adjudication yet.
    NeedsAdjudication(Vec<QueueEntry>),
}

/// Agreements take the expert label, disagreements take the adjudicated
/// resolution, unresolved ones are dropped. If any disagreement lacks an
/// adjudication record the missing ones are returned as a queue instead.
pub fn build_evaluation_set(
    scores: &ScoreTable,
    expert: &BTreeMap<String, bool>,
    relation: &str,
    threshold: f64,
    adjudications: &[AdjudicationRecord],
) -> Result<EvaluationSet> {
    let resolved: BTreeMap<&str, Resolution> = adjudications
        .iter()
        .filter(|a| a.relation == relation)
        .map(|a| (a.sentence_id.as_str(), a.resolution))
        .collect();
    let queue = disagreements(scores, expert, relation, threshold)?;
    let missing: Vec<QueueEntry> = queue
        .iter()
        .filter(|q| !resolved.contains_key(q.sentence_id.as_str()))
        .cloned()
        .collect();
    if !missing.is_empty() {
        return Ok(EvaluationSet::NeedsAdjudication(missing));
    }
    let disputed: BTreeSet<&str> = queue.iter().map(|q| q.sentence_id.as_str()).collect();
    let srs = scores.relation_scores(relation)?;
    let mut gold = GoldSet {
        relation: relation.to_string(),
        threshold,
        labels: BTreeMap::new(),
        adjudicated: Vec::new(),
        dropped_unresolved: Vec::new(),
    };
    for (id, &label) in expert {
        if !srs.contains_key(id) {
            continue;
        }
        if !disputed.contains(id.as_str()) {
            gold.labels.insert(id.clone(), label);
            continue;
        }
        match resolved[id.as_str()] {
            Resolution::Positive => {
                gold.labels.insert(id.clone(), true);
                gold.adjudicated.push(id.clone());
            }
            Resolution::Negative => {
                gold.labels.insert(id.clone(), false);
                gold.adjudicated.push(id.clone());
            }
            Resolution::Unresolved => gold.dropped_unresolved.push(id.clone()),
        }
    }
    Ok(EvaluationSet::Gold(gold))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClarityReport {
    /// Max srs over non-sentinel relations.
    pub sentence_clarity: BTreeMap<String, f64>,
    /// Mean srs over sentences where the relation got at least one vote;
    /// absent for relations nobody selected.
    pub relation_clarity: BTreeMap<String, Option<f64>>,
}

pub fn clarity_report(scores: &ScoreTable, schema: &RelationSchema) -> ClarityReport {
    let relations = schema.relations();
    let mut sentence_clarity = BTreeMap::new();
    let mut sums: Vec<(f64, usize)> = vec![(0.0, 0); relations.len()];
    for (id, row) in &scores.scores {
        let mut best = 0.0f64;
        for (i, &srs) in row.iter().take(relations.len()).enumerate() {
            best = best.max(srs);
            if srs > 0.0 {
                sums[i].0 += srs;
                sums[i].1 += 1;
            }
        }
        sentence_clarity.insert(id.clone(), best);
    }
    let relation_clarity = relations
        .iter()
        .zip(sums)
        .map(|(r, (sum, n))| (r.clone(), (n > 0).then(|| sum / n as f64)))
        .collect();
    ClarityReport {
        sentence_clarity,
        relation_clarity,
    }
}
