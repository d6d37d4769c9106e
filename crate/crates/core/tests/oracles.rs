//! Worked examples of the metric, significance and sampling operations,
//! each checked against arithmetic done here or an independent oracle.

mod common;

use std::collections::BTreeMap;

use common::{chi_square_sf_oracle, count_oracle, weighted_oracle};
use crowdtruth::evaluation::{
    annotation_quality, best_sweep_threshold, chi_square_1dof_sf, confusion, make_splits, mcnemar_from_counts,
    metrics, micro_average, threshold_sweep, weighted_metrics, ConfusionCounts,
};
use crowdtruth::scoring::build_single_training_set;
use crowdtruth::Judgment;

fn ids(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("s{i:03}")).collect()
}

fn map<T: Copy>(values: &[T]) -> BTreeMap<String, T> {
    ids(values.len()).into_iter().zip(values.iter().copied()).collect()
}

#[test]
fn plain_metrics_from_counts() {
    let m = metrics(&ConfusionCounts { tp: 3, fp: 2, tn: 0, fn_: 1 });
    assert!((m.precision - 0.6).abs() < 1e-15);
    assert!((m.recall - 0.75).abs() < 1e-15);
    assert!((m.f1 - 2.0 / 3.0).abs() < 1e-15);
}

#[test]
fn weighted_hand_arithmetic() {
    let pred = [true, true];
    let gold = [true, false];
    let srs = [0.8, 0.3];
    let p = weighted_metrics(&map(&pred), &map(&gold), &map(&srs)).unwrap();
    assert!((p.precision - 0.8 / 1.5).abs() < 1e-12);
    assert!((p.precision - weighted_oracle(&pred, &gold, &srs).0).abs() < 1e-12);

    let pred = [true, false];
    let gold = [true, true];
    let srs = [0.9, 0.4];
    let r = weighted_metrics(&map(&pred), &map(&gold), &map(&srs)).unwrap();
    assert!((r.recall - 0.9 / 1.3).abs() < 1e-12);
    assert!((r.recall - weighted_oracle(&pred, &gold, &srs).1).abs() < 1e-12);
}

#[test]
fn pooling_two_relations() {
    let srs = map(&[0.5; 4]);
    let cause = annotation_quality(&map(&[true, true]), &map(&[true, false]), &srs).unwrap();
    let treat = annotation_quality(&map(&[true, true, true]), &map(&[true, true, true]), &srs).unwrap();
    let pooled = micro_average(&[cause, treat]).unwrap();
    assert!((pooled.precision - 0.8).abs() < 1e-15);
    assert_eq!(micro_average(&[cause]).unwrap(), cause);
    let twice = micro_average(&[cause, cause]).unwrap();
    assert_eq!((twice.precision, twice.recall, twice.f1), (cause.precision, cause.recall, cause.f1));
}

#[test]
fn crisp_sweep_is_perfect_between_the_two_levels() {
    let srs: Vec<f64> = (0..20).map(|i| if i % 3 == 0 { 0.9 } else { 0.2 }).collect();
    let gold: Vec<bool> = srs.iter().map(|&s| s >= 0.5).collect();
    let grid: Vec<f64> = (0..=20).map(|i| i as f64 / 20.0).collect();
    let sweep = threshold_sweep(&map(&srs), &map(&gold), &grid).unwrap();
    for point in &sweep {
        let inside = point.threshold > 0.2 && point.threshold <= 0.9;
        assert_eq!(point.report.f1 == 1.0, inside, "t = {}", point.threshold);
        let pred: Vec<bool> = srs.iter().map(|&s| s >= point.threshold).collect();
        assert!((point.report.f1 - count_oracle(&pred, &gold).2).abs() < 1e-15);
    }
    assert_eq!(best_sweep_threshold(&sweep), Some(0.25));
    let single = threshold_sweep(&map(&srs), &map(&gold), &[0.5]).unwrap();
    let direct = annotation_quality(&map(&gold), &map(&gold), &map(&srs)).unwrap();
    assert_eq!(single[0].report, direct);
}

#[test]
fn mcnemar_closed_forms() {
    for n in [1, 5, 40] {
        let r = mcnemar_from_counts(n, n, false);
        assert_eq!((r.chi_square, r.p_value), (0.0, 1.0));
    }
    let corrected = mcnemar_from_counts(10, 2, true);
    assert!((corrected.chi_square - 49.0 / 12.0).abs() < 1e-12);
    let plain = mcnemar_from_counts(10, 2, false);
    assert!((plain.chi_square - 64.0 / 12.0).abs() < 1e-12);
    assert!((plain.p_value - 0.0209).abs() < 5e-5);
    let degenerate = mcnemar_from_counts(0, 0, true);
    assert!(degenerate.degenerate);
    assert_eq!((degenerate.chi_square, degenerate.p_value), (0.0, 1.0));
}

#[test]
fn chi_square_tail_matches_integration() {
    for i in 0..=400 {
        let x = i as f64 / 10.0;
        let diff = (chi_square_1dof_sf(x) - chi_square_sf_oracle(x)).abs();
        assert!(diff < 1e-6, "x = {x}: {diff}");
    }
}

#[test]
fn missing_prediction_names_the_sentence() {
    let gold = map(&[true, false, true]);
    let mut pred = gold.clone();
    pred.remove("s001");
    let err = confusion(&pred, &gold).unwrap_err();
    assert!(err.to_string().contains("s001"), "{err}");
}

#[test]
fn single_annotator_follows_the_vote_share() {
    let judgments: Vec<Judgment> = (0..15)
        .map(|w| {
            let choice = if w < 3 { "treat" } else { "cause" };
            Judgment::new(format!("w{w:02}"), "s000", [choice], w as u32)
        })
        .collect();
    let groups = BTreeMap::from([("s000".to_string(), judgments)]);
    let seeds = 1000;
    let positives = (0..seeds)
        .filter(|&seed| build_single_training_set(&groups, "treat", seed).instances[0].is_positive())
        .count();
    let share = positives as f64 / seeds as f64;
    assert!((share - 0.2).abs() <= 0.03, "share {share}");
    for seed in 0..50 {
        let cause = build_single_training_set(&groups, "cause", seed);
        let again = build_single_training_set(&groups, "cause", seed);
        assert_eq!(cause, again);
    }

    let unanimous: Vec<Judgment> =
        (0..15).map(|w| Judgment::new(format!("w{w:02}"), "s000", ["cause"], w as u32)).collect();
    let groups = BTreeMap::from([("s000".to_string(), unanimous)]);
    for seed in 0..200 {
        assert_eq!(build_single_training_set(&groups, "cause", seed).instances[0].weight, 1.0);
    }
}

#[test]
fn expert_subset_of_975_splits_evenly() {
    let subset = ids(975);
    let plan = make_splits(subset.iter().map(String::as_str), subset.iter().map(String::as_str), 5, 11, None).unwrap();
    assert_eq!(plan.fold_sizes(), vec![195; 5]);
    let one = make_splits(subset.iter().map(String::as_str), subset.iter().map(String::as_str), 1, 11, None).unwrap();
    assert_eq!(one.fold_sizes(), vec![975]);
    assert!(make_splits(subset[..3].iter().map(String::as_str), subset[..3].iter().map(String::as_str), 4, 1, None).is_err());
}
