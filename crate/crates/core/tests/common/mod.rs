//! Independent oracles shared by the integration tests and the acceptance
//! harness. Nothing here calls the library code it is used to check.

#![allow(dead_code)]

pub mod runs;

use std::collections::BTreeMap;
use std::path::PathBuf;

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

/// Weighted P', R', F1' summed term by term over parallel slices.
pub fn weighted_oracle(pred: &[bool], gold: &[bool], srs: &[f64]) -> (f64, f64, f64) {
    let mut tp = 0.0;
    let mut fp = 0.0;
    let mut fn_ = 0.0;
    for i in 0..pred.len() {
        if pred[i] && gold[i] {
            tp += srs[i];
        }
        if pred[i] && !gold[i] {
            fp += 1.0 - srs[i];
        }
        if !pred[i] && gold[i] {
            fn_ += srs[i];
        }
    }
    let p = if tp + fp > 0.0 { tp / (tp + fp) } else { 0.0 };
    let r = if tp + fn_ > 0.0 { tp / (tp + fn_) } else { 0.0 };
    let f = if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 };
    (p, r, f)
}

/// Plain P, R, F1 by counting.
pub fn count_oracle(pred: &[bool], gold: &[bool]) -> (f64, f64, f64) {
    let mut tp = 0.0;
    let mut fp = 0.0;
    let mut fn_ = 0.0;
    for i in 0..pred.len() {
        match (pred[i], gold[i]) {
            (true, true) => tp += 1.0,
            (true, false) => fp += 1.0,
            (false, true) => fn_ += 1.0,
            _ => {}
        }
    }
    let p = if tp + fp > 0.0 { tp / (tp + fp) } else { 0.0 };
    let r = if tp + fn_ > 0.0 { tp / (tp + fn_) } else { 0.0 };
    let f = if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 };
    (p, r, f)
}

/// Upper tail of chi-square(1) by composite Simpson integration of the
/// density. With `x = u^2` the integrand becomes the smooth
/// `2 / sqrt(2 pi) * exp(-u^2 / 2)` on `[0, sqrt(x)]`.
pub fn chi_square_sf_oracle(x: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    let upper = x.sqrt();
    let n = 20_000;
    let h = upper / n as f64;
    let g = |u: f64| 2.0 / (2.0 * std::f64::consts::PI).sqrt() * (-u * u / 2.0).exp();
    let mut sum = g(0.0) + g(upper);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        sum += w * g(i as f64 * h);
    }
    1.0 - sum * h / 3.0
}

/// `srs` straight from a count vector.
pub fn srs_oracle(counts: &[u32], index: usize) -> f64 {
    let sq: f64 = counts.iter().map(|&c| (c as f64) * (c as f64)).sum();
    if sq == 0.0 {
        0.0
    } else {
        counts[index] as f64 / sq.sqrt()
    }
}

/// Truncation to two decimals as in the printed score table,
/// returned in hundredths. The epsilon absorbs representation error on
/// values that are exact multiples of 0.01.
pub fn hundredths(value: f64) -> i64 {
    (value * 100.0 + 1e-9).floor() as i64
}

pub fn parse_hundredths(cell: &str) -> i64 {
    (cell.parse::<f64>().unwrap() * 100.0).round() as i64
}

/// Rows of the printed score table, keyed by option.
pub struct ScoreTableRow {
    pub vector: [u32; 2],
    pub srs: [i64; 2],
    pub train: [i64; 2],
}

pub fn score_table_expected() -> BTreeMap<String, ScoreTableRow> {
    let text = std::fs::read_to_string(fixture("score_table/expected.csv")).unwrap();
    text.lines()
        .skip(1)
        .map(|line| {
            let c: Vec<&str> = line.split(',').collect();
            (
                c[0].to_string(),
                ScoreTableRow {
                    vector: [c[1].parse().unwrap(), c[2].parse().unwrap()],
                    srs: [parse_hundredths(c[3]), parse_hundredths(c[4])],
                    train: [parse_hundredths(c[5]), parse_hundredths(c[6])],
                },
            )
        })
        .collect()
}

/// Pooled precision and recall of a flagged set against the planted one.
pub fn precision_recall(flagged: usize, correct: usize, planted: usize) -> (f64, f64) {
    let p = if flagged == 0 { 1.0 } else { correct as f64 / flagged as f64 };
    let r = if planted == 0 { 1.0 } else { correct as f64 / planted as f64 };
    (p, r)
}
