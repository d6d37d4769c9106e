//! Simulation experiments shared by the property tests and the acceptance
//! harness. The latent truth from the generator is the oracle.

use std::collections::{BTreeMap, BTreeSet};

use crowdtruth::evaluation::{best_sweep_threshold, threshold_sweep};
use crowdtruth::ingest::DatasetBundle;
use crowdtruth::scoring::{
    agreement_sweep, best_threshold, build_evaluation_set, default_grid, expert_label_map,
    EvaluationSet, ScoreTable,
};
use crowdtruth::simulator::{generate, LatentTruth, SimConfig};
use crowdtruth::stability::{
    mean_cosine_delta_curve, quality_by_worker_count, RelationGold, StabilityCurve, WorkerOrder,
};
use crowdtruth::vectors::{group_by_sentence, sentence_vectors};
use crowdtruth::worker_quality::{filter_spammers, SpamFilterConfig};

pub fn scores(bundle: &DatasetBundle) -> ScoreTable {
    let vectors = sentence_vectors(&group_by_sentence(&bundle.judgments), &bundle.schema);
    ScoreTable::compute(&vectors, &bundle.schema)
}

/// Fraction of sentences whose unique highest-scoring option is the latent
/// relation. Ties count as misses.
pub fn recovery(bundle: &DatasetBundle, latent: &LatentTruth) -> (usize, usize) {
    let table = scores(bundle);
    let options: Vec<&str> = bundle.schema.options().collect();
    let mut hits = 0;
    for id in bundle.sentences.keys() {
        let truth = latent.clear_relation(id).expect("point-mass truth");
        let row: Vec<f64> = options.iter().map(|o| table.get(id, o).unwrap()).collect();
        let best = row.iter().cloned().fold(f64::MIN, f64::max);
        let winners: Vec<&str> = options
            .iter()
            .zip(&row)
            .filter(|(_, &s)| s == best)
            .map(|(o, _)| *o)
            .collect();
        if winners == [truth] {
            hits += 1;
        }
    }
    (hits, bundle.sentences.len())
}

pub fn recovery_config(seed: u64) -> SimConfig {
    SimConfig {
        n_sentences: 50,
        n_workers: 15,
        workers_per_sentence: 15,
        faithful_reliability: 0.9,
        ..SimConfig::new(seed)
    }
}

pub struct SpamCounts {
    pub flagged: usize,
    pub correct: usize,
    pub planted: usize,
}

pub fn spam_detection(config: &SimConfig) -> SpamCounts {
    let (bundle, latent) = generate(config).unwrap();
    let outcome = filter_spammers(&bundle.judgments, &bundle.schema, &SpamFilterConfig::default()).unwrap();
    let planted: BTreeSet<&str> = latent.spammers();
    let flagged: BTreeSet<&str> = outcome.removed().map(|w| w.worker_id.as_str()).collect();
    SpamCounts {
        flagged: flagged.len(),
        correct: flagged.intersection(&planted).count(),
        planted: planted.len(),
    }
}

pub fn spam_config(seed: u64, faithful_reliability: f64) -> SimConfig {
    SimConfig {
        n_sentences: 50,
        n_workers: 30,
        workers_per_sentence: 15,
        spam_fraction: 0.2,
        faithful_reliability,
        ..SimConfig::new(seed)
    }
}

pub fn ambiguous_config(seed: u64) -> SimConfig {
    SimConfig {
        n_sentences: 200,
        n_workers: 20,
        workers_per_sentence: 15,
        ambiguous_fraction: 0.5,
        faithful_reliability: 0.9,
        ..SimConfig::new(seed)
    }
}

/// Cosine-delta and annotation-F1 stability curves on a simulated corpus,
/// with gold built from the expert labels and truth-based adjudication.
pub fn stability_curves(config: &SimConfig, k_max: usize) -> (StabilityCurve, StabilityCurve) {
    let (bundle, latent) = generate(config).unwrap();
    let groups = group_by_sentence(&bundle.judgments);
    let table = scores(&bundle);
    let adjudications = latent.adjudications(&bundle);
    let experts = bundle.expert_labels();
    let used: BTreeSet<&str> = experts.iter().map(|l| l.relation.as_str()).collect();
    let mut gold = BTreeMap::new();
    for r in bundle.schema.relations().iter().filter(|r| used.contains(r.as_str())) {
        let (expert, _) = expert_label_map(bundle.sentences.values(), experts, r, &bundle.schema);
        let points = agreement_sweep(&table, &expert, r, &default_grid()).unwrap();
        let t = best_threshold(&points).unwrap();
        let EvaluationSet::Gold(g) = build_evaluation_set(&table, &expert, r, t, &adjudications).unwrap() else {
            panic!("truth-based adjudication covers every pair");
        };
        let srs = table.relation_scores(r).unwrap();
        let gold_srs: BTreeMap<String, f64> = g.labels.keys().map(|id| (id.clone(), srs[id])).collect();
        let sweep = threshold_sweep(&gold_srs, &g.labels, &default_grid()).unwrap();
        gold.insert(
            r.clone(),
            RelationGold {
                labels: g.labels,
                threshold: best_sweep_threshold(&sweep).unwrap(),
                srs,
            },
        );
    }
    let cosine = mean_cosine_delta_curve(&groups, &bundle.schema, k_max, WorkerOrder::Submission).unwrap();
    let f1 = quality_by_worker_count(&groups, &bundle.schema, &gold, k_max, WorkerOrder::Submission).unwrap();
    (cosine, f1)
}
