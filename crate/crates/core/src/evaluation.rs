//! Standard and ambiguity-weighted evaluation.
//!
//! Weighted metrics credit each sentence by how clearly it expresses the
//! relation. Positive-gold outcomes (tp, fn) are weighted by `srs`,
//! negative-gold outcomes (fp, tn) by `1 - srs`:
//!
//! ```text
//! P' = Σ srs·tp / Σ (srs·tp + (1 - srs)·fp)
//! R' = Σ srs·tp / Σ (srs·tp + srs·fn)
//! F1' = 2 P' R' / (P' + R')
//! ```
//!
//! Degenerate denominators give 0 with a flag instead of an error, so
//! threshold sweeps over extreme values always complete.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};
use crate::ingest::PredictionRecord;
use crate::rng::cell_rng;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    fn record(&mut self, predicted: bool, gold: bool) {
        match (predicted, gold) {
            (true, true) => self.tp += 1,
            (true, false) => self.fp += 1,
            (false, false) => self.tn += 1,
            (false, true) => self.fn_ += 1,
        }
    }
}

impl std::ops::Add for ConfusionCounts {
    type Output = ConfusionCounts;

    fn add(self, o: ConfusionCounts) -> ConfusionCounts {
        ConfusionCounts {
            tp: self.tp + o.tp,
            fp: self.fp + o.fp,
            tn: self.tn + o.tn,
            fn_: self.fn_ + o.fn_,
        }
    }
}

/// Confusion counts with each outcome weighted by `srs` or `1 - srs`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct WeightedCounts {
    pub tp: f64,
    pub fp: f64,
    pub tn: f64,
    #[serde(rename = "fn")]
    pub fn_: f64,
}

impl std::ops::Add for WeightedCounts {
    type Output = WeightedCounts;

    fn add(self, o: WeightedCounts) -> WeightedCounts {
        WeightedCounts {
            tp: self.tp + o.tp,
            fp: self.fp + o.fp,
            tn: self.tn + o.tn,
            fn_: self.fn_ + o.fn_,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// A zero denominator forced at least one value to 0.
    pub degenerate: bool,
}

fn prf(tp: f64, fp: f64, fn_: f64) -> Prf {
    let mut degenerate = false;
    let mut ratio = |num: f64, den: f64| {
        if den > 0.0 {
            num / den
        } else {
            degenerate = true;
            0.0
        }
    };
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fn_);
    let f1 = ratio(2.0 * precision * recall, precision + recall);
    Prf {
        precision,
        recall,
        f1,
        degenerate,
    }
}

/// Every gold sentence must have a prediction; extra predictions are
/// ignored.
pub fn confusion(
    predicted: &BTreeMap<String, bool>,
    gold: &BTreeMap<String, bool>,
) -> Result<ConfusionCounts> {
    check_coverage(predicted, gold)?;
    let mut counts = ConfusionCounts::default();
    for (id, &g) in gold {
        counts.record(predicted[id], g);
    }
    Ok(counts)
}

fn check_coverage(predicted: &BTreeMap<String, bool>, gold: &BTreeMap<String, bool>) -> Result<()> {
    let missing: Vec<String> = gold
        .keys()
        .filter(|id| !predicted.contains_key(*id))
        .cloned()
        .collect();
    if missing.is_empty() {
        Ok(())
    } else {
        Err(Error::MissingPredictions(missing))
    }
}

/// Standard precision, recall and F1.
pub fn metrics(counts: &ConfusionCounts) -> Prf {
    prf(counts.tp as f64, counts.fp as f64, counts.fn_ as f64)
}

pub fn weighted_counts(
    predicted: &BTreeMap<String, bool>,
    gold: &BTreeMap<String, bool>,
    srs: &BTreeMap<String, f64>,
) -> Result<WeightedCounts> {
    check_coverage(predicted, gold)?;
    let missing: Vec<String> = gold.keys().filter(|id| !srs.contains_key(*id)).cloned().collect();
    if !missing.is_empty() {
        return Err(Error::MissingScores(missing));
    }
    let mut w = WeightedCounts::default();
    // gold is a BTreeMap, so summation order is fixed by sentence id
    for (id, &g) in gold {
        let s = srs[id];
        match (predicted[id], g) {
            (true, true) => w.tp += s,
            (true, false) => w.fp += 1.0 - s,
            (false, false) => w.tn += 1.0 - s,
            (false, true) => w.fn_ += s,
        }
    }
    Ok(w)
}

impl WeightedCounts {
    pub fn metrics(&self) -> Prf {
        prf(self.tp, self.fp, self.fn_)
    }
}

/// Weighted precision, recall and F1.
pub fn weighted_metrics(
    predicted: &BTreeMap<String, bool>,
    gold: &BTreeMap<String, bool>,
    srs: &BTreeMap<String, f64>,
) -> Result<Prf> {
    Ok(weighted_counts(predicted, gold, srs)?.metrics())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub counts: ConfusionCounts,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub weighted_precision: f64,
    pub weighted_recall: f64,
    pub weighted_f1: f64,
    pub weighted_counts: WeightedCounts,
    pub degenerate: bool,
    pub weighted_degenerate: bool,
}

impl MetricsReport {
    pub fn from_counts(counts: ConfusionCounts, weighted: WeightedCounts) -> Self {
        let plain = metrics(&counts);
        let w = weighted.metrics();
        MetricsReport {
            counts,
            precision: plain.precision,
            recall: plain.recall,
            f1: plain.f1,
            weighted_precision: w.precision,
            weighted_recall: w.recall,
            weighted_f1: w.f1,
            weighted_counts: weighted,
            degenerate: plain.degenerate,
            weighted_degenerate: w.degenerate,
        }
    }
}

/// Full report of a candidate labeling (crowd at a threshold, expert,
/// single annotator, baseline or a classifier) against gold.
pub fn annotation_quality(
    candidate: &BTreeMap<String, bool>,
    gold: &BTreeMap<String, bool>,
    srs: &BTreeMap<String, f64>,
) -> Result<MetricsReport> {
    Ok(MetricsReport::from_counts(
        confusion(candidate, gold)?,
        weighted_counts(candidate, gold, srs)?,
    ))
}

/// Flat row of `sweep_<relation>.csv`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub weighted_precision: f64,
    pub weighted_recall: f64,
    pub weighted_f1: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub threshold: f64,
    pub report: MetricsReport,
}

impl SweepPoint {
    pub fn row(&self) -> SweepRow {
        SweepRow {
            threshold: self.threshold,
            precision: self.report.precision,
            recall: self.report.recall,
            f1: self.report.f1,
            weighted_precision: self.report.weighted_precision,
            weighted_recall: self.report.weighted_recall,
            weighted_f1: self.report.weighted_f1,
        }
    }
}

/// Annotation quality of the crowd labels `srs >= t` for each `t`.
pub fn threshold_sweep(
    srs: &BTreeMap<String, f64>,
    gold: &BTreeMap<String, bool>,
    grid: &[f64],
) -> Result<Vec<SweepPoint>> {
    grid.iter()
        .map(|&t| {
            if !(0.0..=1.0).contains(&t) {
                return Err(Error::InvalidParameter(format!("threshold {t} outside [0, 1]")));
            }
            let candidate: BTreeMap<String, bool> =
                srs.iter().map(|(id, &s)| (id.clone(), s >= t)).collect();
            Ok(SweepPoint {
                threshold: t,
                report: annotation_quality(&candidate, gold, srs)?,
            })
        })
        .collect()
}

/// Threshold with the best F1; the lowest one wins ties.
pub fn best_sweep_threshold(points: &[SweepPoint]) -> Option<f64> {
    let mut best: Option<&SweepPoint> = None;
    for p in points {
        if best.is_none_or(|b| p.report.f1 > b.report.f1) {
            best = Some(p);
        }
    }
    best.map(|p| p.threshold)
}

/// Pools raw and weighted counts across reports and recomputes metrics.
pub fn micro_average(reports: &[MetricsReport]) -> Result<MetricsReport> {
    let first = reports
        .first()
        .ok_or_else(|| Error::InvalidParameter("micro-average of no reports".into()))?;
    let (counts, weighted) = reports[1..].iter().fold(
        (first.counts, first.weighted_counts),
        |(c, w), r| (c + r.counts, w + r.weighted_counts),
    );
    Ok(MetricsReport::from_counts(counts, weighted))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McNemarResult {
    /// First system correct, second wrong.
    pub b: u64,
    /// First system wrong, second correct.
    pub c: u64,
    pub chi_square: f64,
    pub p_value: f64,
    pub continuity_correction: bool,
    /// No discordant pairs: χ² = 0, p = 1.
    pub degenerate: bool,
}

/// Upper tail of the chi-square distribution with one degree of freedom:
/// `P(X > x) = erfc(sqrt(x / 2))`.
pub fn chi_square_1dof_sf(x: f64) -> f64 {
    if x <= 0.0 {
        1.0
    } else {
        erfc((x / 2.0).sqrt())
    }
}

/// McNemar's test from the discordant counts. With the continuity
/// correction, `|b - c| - 1` is floored at 0.
pub fn mcnemar_from_counts(b: u64, c: u64, continuity_correction: bool) -> McNemarResult {
    if b + c == 0 {
        return McNemarResult {
            b,
            c,
            chi_square: 0.0,
            p_value: 1.0,
            continuity_correction,
            degenerate: true,
        };
    }
    let diff = b.abs_diff(c) as f64;
    let num = if continuity_correction {
        (diff - 1.0).max(0.0)
    } else {
        diff
    };
    let chi_square = num * num / (b + c) as f64;
    McNemarResult {
        b,
        c,
        chi_square,
        p_value: chi_square_1dof_sf(chi_square),
        continuity_correction,
        degenerate: false,
    }
}

/// McNemar's test on paired per-item correctness of two systems.
pub fn mcnemar(first_correct: &[bool], second_correct: &[bool], continuity_correction: bool) -> Result<McNemarResult> {
    if first_correct.len() != second_correct.len() {
        return Err(Error::DimensionMismatch {
            left: first_correct.len(),
            right: second_correct.len(),
        });
    }
    let mut b = 0;
    let mut c = 0;
    for (&x, &y) in first_correct.iter().zip(second_correct) {
        match (x, y) {
            (true, false) => b += 1,
            (false, true) => c += 1,
            _ => {}
        }
    }
    Ok(mcnemar_from_counts(b, c, continuity_correction))
}

/// Per-gold-sentence correctness of two labelings, in sentence order.
pub fn paired_correctness(
    first: &BTreeMap<String, bool>,
    second: &BTreeMap<String, bool>,
    gold: &BTreeMap<String, bool>,
) -> Result<(Vec<bool>, Vec<bool>)> {
    check_coverage(first, gold)?;
    check_coverage(second, gold)?;
    Ok(gold
        .iter()
        .map(|(id, &g)| (first[id] == g, second[id] == g))
        .unzip())
}

/// Cross-validation fold assignment over the expert-annotated sentences.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub k: usize,
    pub seed: u64,
    pub folds: BTreeMap<String, usize>,
    /// Sentences outside the expert subset; always part of training.
    pub always_train: BTreeSet<String>,
}

pub const ALWAYS_TRAIN: &str = "ALWAYS_TRAIN";

#[derive(Debug, Serialize, Deserialize)]
struct SplitRow {
    sentence_id: String,
    fold: String,
}

impl SplitPlan {
    pub fn test_fold(&self, fold: usize) -> BTreeSet<&str> {
        self.folds
            .iter()
            .filter(|(_, &f)| f == fold)
            .map(|(id, _)| id.as_str())
            .collect()
    }

    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &f in self.folds.values() {
            sizes[f] += 1;
        }
        sizes
    }

    /// `splits.csv`: a `# seed=<n> k=<k>` comment, then sentence_id,fold
    /// rows with `ALWAYS_TRAIN` for sentences outside the folds.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "# seed={} k={}", self.seed, self.k)?;
        let mut w = csv::Writer::from_writer(out);
        for (id, f) in &self.folds {
            w.serialize(SplitRow {
                sentence_id: id.clone(),
                fold: f.to_string(),
            })?;
        }
        for id in &self.always_train {
            w.serialize(SplitRow {
                sentence_id: id.clone(),
                fold: ALWAYS_TRAIN.into(),
            })?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn parse_csv<R: Read>(mut input: R) -> Result<SplitPlan> {
        let mut text = String::new();
        input.read_to_string(&mut text)?;
        let header = text
            .lines()
            .next()
            .and_then(|l| l.strip_prefix('#'))
            .ok_or_else(|| Error::row(1, "missing `# seed=<n> k=<k>` header"))?;
        let mut seed = None;
        let mut k = None;
        for field in header.split_whitespace() {
            match field.split_once('=') {
                Some(("seed", v)) => seed = v.parse().ok(),
                Some(("k", v)) => k = v.parse().ok(),
                _ => {}
            }
        }
        let (seed, k): (u64, usize) = seed
            .zip(k)
            .ok_or_else(|| Error::row(1, "header must carry seed and k"))?;
        let mut plan = SplitPlan {
            k,
            seed,
            folds: BTreeMap::new(),
            always_train: BTreeSet::new(),
        };
        let mut rdr = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .trim(csv::Trim::All)
            .from_reader(text.as_bytes());
        for row in rdr.deserialize::<SplitRow>() {
            let row = row?;
            if row.fold == ALWAYS_TRAIN {
                plan.always_train.insert(row.sentence_id);
            } else {
                let f: usize = row
                    .fold
                    .parse()
                    .map_err(|_| Error::row(0, format!("bad fold `{}`", row.fold)))?;
                if f >= k {
                    return Err(Error::row(0, format!("fold {f} out of range for k={k}")));
                }
                plan.folds.insert(row.sentence_id, f);
            }
        }
        Ok(plan)
    }
}

/// Seeded partition of `expert_subset` into `k` folds; every other sentence
/// in `all_sentences` goes to `always_train`. With `strata`, each label
/// class is spread evenly over the folds.
pub fn make_splits<'a>(
    expert_subset: impl IntoIterator<Item = &'a str>,
    all_sentences: impl IntoIterator<Item = &'a str>,
    k: usize,
    seed: u64,
    strata: Option<&BTreeMap<String, bool>>,
) -> Result<SplitPlan> {
    let subset: BTreeSet<&str> = expert_subset.into_iter().collect();
    if k == 0 || k > subset.len() {
        return Err(Error::InvalidParameter(format!(
            "cannot split {} sentences into {k} folds",
            subset.len()
        )));
    }
    let mut rng = cell_rng(seed, &["splits"]);
    let mut order: Vec<&str> = Vec::with_capacity(subset.len());
    match strata {
        None => {
            order.extend(subset.iter().copied());
            order.shuffle(&mut rng);
        }
        Some(labels) => {
            for class in [Some(true), Some(false), None] {
                let mut members: Vec<&str> = subset
                    .iter()
                    .copied()
                    .filter(|id| labels.get(*id).copied() == class)
                    .collect();
                members.shuffle(&mut rng);
                order.extend(members);
            }
        }
    }
    let folds = order
        .iter()
        .enumerate()
        .map(|(i, id)| (id.to_string(), i % k))
        .collect();
    let always_train = all_sentences
        .into_iter()
        .filter(|id| !subset.contains(id))
        .map(String::from)
        .collect();
    Ok(SplitPlan {
        k,
        seed,
        folds,
        always_train,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub weighted_precision: f64,
    pub weighted_recall: f64,
    pub weighted_f1: f64,
}

impl MeanMetrics {
    pub fn of(reports: &[MetricsReport]) -> MeanMetrics {
        let n = reports.len().max(1) as f64;
        let mean = |f: fn(&MetricsReport) -> f64| reports.iter().map(f).sum::<f64>() / n;
        MeanMetrics {
            precision: mean(|r| r.precision),
            recall: mean(|r| r.recall),
            f1: mean(|r| r.f1),
            weighted_precision: mean(|r| r.weighted_precision),
            weighted_recall: mean(|r| r.weighted_recall),
            weighted_f1: mean(|r| r.weighted_f1),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossValidationReport {
    pub relation: String,
    pub training_size: Option<usize>,
    pub folds: Vec<MetricsReport>,
    pub mean: MeanMetrics,
}

/// Row of a learning-curve CSV.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LearningCurvePoint {
    pub training_size: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub weighted_precision: f64,
    pub weighted_recall: f64,
    pub weighted_f1: f64,
}

impl CrossValidationReport {
    pub fn curve_point(&self) -> Option<LearningCurvePoint> {
        self.training_size.map(|n| LearningCurvePoint {
            training_size: n,
            precision: self.mean.precision,
            recall: self.mean.recall,
            f1: self.mean.f1,
            weighted_precision: self.mean.weighted_precision,
            weighted_recall: self.mean.weighted_recall,
            weighted_f1: self.mean.weighted_f1,
        })
    }
}

/// Scores classifier predictions on every test fold and averages the fold
/// reports. Only gold sentences are evaluated; sentences dropped during
/// adjudication never enter a metric.
pub fn evaluate_predictions(
    predictions: &[PredictionRecord],
    relation: &str,
    gold: &BTreeMap<String, bool>,
    srs: &BTreeMap<String, f64>,
    plan: &SplitPlan,
    training_size: Option<usize>,
) -> Result<CrossValidationReport> {
    let predicted: BTreeMap<String, bool> = predictions
        .iter()
        .filter(|p| p.relation == relation)
        .map(|p| (p.sentence_id.clone(), p.is_positive()))
        .collect();
    let mut missing = Vec::new();
    let mut folds = Vec::with_capacity(plan.k);
    for fold in 0..plan.k {
        let fold_gold: BTreeMap<String, bool> = plan
            .test_fold(fold)
            .into_iter()
            .filter_map(|id| gold.get(id).map(|&g| (id.to_string(), g)))
            .collect();
        missing.extend(
            fold_gold
                .keys()
                .filter(|id| !predicted.contains_key(*id))
                .cloned(),
        );
        if missing.is_empty() {
            folds.push(annotation_quality(&predicted, &fold_gold, srs)?);
        }
    }
    if !missing.is_empty() {
        return Err(Error::MissingPredictions(missing));
    }
    Ok(CrossValidationReport {
        relation: relation.to_string(),
        training_size,
        mean: MeanMetrics::of(&folds),
        folds,
    })
}
