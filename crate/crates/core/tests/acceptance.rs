//! Acceptance harness. Runs every exit criterion at its pinned tolerance,
//! prints one PASS/FAIL/SKIP line per criterion and exits non-zero if any
//! criterion fails.

mod common;

use std::collections::BTreeMap;
use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::runs::{ambiguous_config, recovery, recovery_config, spam_config, spam_detection, stability_curves};
use common::{chi_square_sf_oracle, count_oracle, fixture, hundredths, precision_recall, score_table_expected, weighted_oracle};
use crowdtruth::evaluation::{confusion, mcnemar_from_counts, metrics, weighted_metrics};
use crowdtruth::ingest::{open, parse_judgments, parse_sentences};
use crowdtruth::scoring::{
    agreement_sweep, apply_threshold, best_threshold, build_crowd_training_set, crowd_expert_agreement, default_grid,
    ScoreTable,
};
use crowdtruth::simulator::generate;
use crowdtruth::vectors::{group_by_sentence, sentence_vectors, SentenceVector};
use crowdtruth::RelationSchema;

/// Outcome of one criterion: `Err` carries the first violated check.
type Check = Result<String, String>;

type Criterion = (&'static str, fn() -> Check);

fn ensure(ok: bool, message: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(message())
    }
}

fn within(limit: Duration, started: Instant) -> Result<Duration, String> {
    let elapsed = started.elapsed();
    ensure(elapsed < limit, || format!("runtime {elapsed:.2?} exceeds {limit:?}"))?;
    Ok(elapsed)
}

fn score_table_golden() -> Check {
    let started = Instant::now();
    let schema = RelationSchema::medical();
    let sentences = parse_sentences(open(&fixture("score_table/sentences.csv")).map_err(|e| e.to_string())?)
        .map_err(|e| e.to_string())?;
    ensure(sentences.len() == 2, || "fixture must hold two sentences".into())?;
    let judgments = parse_judgments(open(&fixture("score_table/judgments.csv")).map_err(|e| e.to_string())?, &schema)
        .map_err(|e| e.to_string())?;
    let vectors = sentence_vectors(&group_by_sentence(&judgments), &schema);
    let scores = ScoreTable::compute(&vectors, &schema);
    let expected = score_table_expected();
    let ids = ["sent1", "sent2"];
    let (mut vector_cells, mut srs_cells, mut train_cells) = (0, 0, 0);
    for (i, option) in schema.options().enumerate() {
        let row = &expected[option];
        for (col, id) in ids.iter().enumerate() {
            let count = vectors[*id].components()[i];
            ensure(count == row.vector[col], || format!("vector {option} {id}: {count} != {}", row.vector[col]))?;
            vector_cells += 1;
            let srs = scores.get(id, option).unwrap();
            ensure(hundredths(srs) == row.srs[col], || format!("srs {option} {id}: {srs}"))?;
            srs_cells += 1;
        }
    }
    for relation in schema.relations() {
        let set = build_crowd_training_set(&scores, relation, 0.5).map_err(|e| e.to_string())?;
        for (col, instance) in set.instances.iter().enumerate() {
            let want = expected[relation.as_str()].train[col];
            ensure(instance.sentence_id == ids[col] && hundredths(instance.weight) == want, || {
                format!("training {relation} {}: {}", instance.sentence_id, instance.weight)
            })?;
            train_cells += 1;
        }
    }
    // the two options outside the relation set appear in the printed
    // training columns too; they follow the same rule
    for option in [schema.sentinel_other(), schema.sentinel_none()] {
        for (col, id) in ids.iter().enumerate() {
            let weight = apply_threshold(scores.get(id, option).unwrap(), 0.5).map_err(|e| e.to_string())?;
            ensure(hundredths(weight) == expected[option].train[col], || format!("training {option} {id}: {weight}"))?;
            train_cells += 1;
        }
    }
    ensure(srs_cells == 28 && train_cells == 28, || format!("{srs_cells} scores, {train_cells} training cells"))?;
    let elapsed = within(Duration::from_secs(1), started)?;
    Ok(format!("{vector_cells} vector cells, {srs_cells} scores, {train_cells} training weights in {elapsed:.2?}"))
}

fn weighted_oracle_equivalence() -> Check {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst: f64 = 0.0;
    for trial in 0..1000 {
        let n = rng.gen_range(1..=100);
        let pred: Vec<bool> = (0..n).map(|_| rng.gen()).collect();
        let gold: Vec<bool> = (0..n).map(|_| rng.gen()).collect();
        let srs: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..=1.0)).collect();
        let id = |i: usize| format!("s{i:03}");
        let as_map = |v: &[bool]| -> BTreeMap<String, bool> { v.iter().enumerate().map(|(i, &b)| (id(i), b)).collect() };
        let srs_map: BTreeMap<String, f64> = srs.iter().enumerate().map(|(i, &s)| (id(i), s)).collect();
        let got = weighted_metrics(&as_map(&pred), &as_map(&gold), &srs_map).map_err(|e| e.to_string())?;
        let (p, r, f) = weighted_oracle(&pred, &gold, &srs);
        for (a, b) in [(got.precision, p), (got.recall, r), (got.f1, f)] {
            worst = worst.max((a - b).abs());
        }
        ensure(worst <= 1e-12, || format!("trial {trial}: deviation {worst:e}"))?;

        let crisp: BTreeMap<String, f64> =
            gold.iter().enumerate().map(|(i, &g)| (id(i), if g { 1.0 } else { 0.0 })).collect();
        let weighted = weighted_metrics(&as_map(&pred), &as_map(&gold), &crisp).map_err(|e| e.to_string())?;
        let plain = metrics(&confusion(&as_map(&pred), &as_map(&gold)).map_err(|e| e.to_string())?);
        let counted = count_oracle(&pred, &gold);
        ensure(
            (weighted.precision, weighted.recall, weighted.f1) == (plain.precision, plain.recall, plain.f1)
                && (plain.precision, plain.recall, plain.f1) == counted,
            || format!("trial {trial}: crisp weights do not collapse to counts"),
        )?;
    }
    let elapsed = within(Duration::from_secs(10), started)?;
    Ok(format!("1000 fixtures, max deviation {worst:.1e}, collapse exact, {elapsed:.2?}"))
}

fn mcnemar_closed_forms() -> Check {
    for n in 1..=50 {
        let r = mcnemar_from_counts(n, n, false);
        ensure(r.chi_square == 0.0 && r.p_value == 1.0, || format!("b = c = {n}: {r:?}"))?;
    }
    let corrected = mcnemar_from_counts(10, 2, true).chi_square;
    ensure((corrected - 49.0 / 12.0).abs() < 1e-12, || format!("corrected chi-square {corrected}"))?;
    let plain = mcnemar_from_counts(10, 2, false).chi_square;
    ensure((plain - 64.0 / 12.0).abs() < 1e-12, || format!("uncorrected chi-square {plain}"))?;
    let mut worst: f64 = 0.0;
    for i in 0..=4000 {
        let x = i as f64 / 100.0;
        worst = worst.max((crowdtruth::evaluation::chi_square_1dof_sf(x) - chi_square_sf_oracle(x)).abs());
    }
    ensure(worst <= 1e-6, || format!("p-value deviation {worst:e}"))?;
    Ok(format!("chi-square 49/12 and 64/12, p-value max deviation {worst:.1e} over [0, 40]"))
}

fn random_vector(rng: &mut ChaCha8Rng, dimension: usize) -> SentenceVector {
    loop {
        let c: Vec<u32> = (0..dimension).map(|_| if rng.gen_bool(0.4) { rng.gen_range(0..16) } else { 0 }).collect();
        if let Some(&max) = c.iter().max().filter(|&&m| m > 0) {
            return SentenceVector::from_parts(c, max).unwrap();
        }
    }
}

fn threshold_properties() -> Check {
    // monotone, with srs kept at or above t and srs - 1 below it: the jump
    // at t is exactly 1
    for ti in 0..=100 {
        let t = ti as f64 / 100.0;
        let mut previous = f64::NEG_INFINITY;
        for si in 0..=1000 {
            let s = si as f64 / 1000.0;
            let w = apply_threshold(s, t).map_err(|e| e.to_string())?;
            ensure(w >= previous, || format!("not monotone at srs {s}, t {t}"))?;
            ensure(if s >= t { w == s } else { w == s - 1.0 }, || format!("weight {w} at srs {s}, t {t}"))?;
            previous = w;
        }
    }

    let schema = RelationSchema::medical();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let grid = default_grid();
    for trial in 0..200 {
        let n = rng.gen_range(1..30);
        let factor = rng.gen_range(2..50);
        let base: BTreeMap<String, SentenceVector> =
            (0..n).map(|i| (format!("s{i:02}"), random_vector(&mut rng, schema.dimension()))).collect();
        let scaled: BTreeMap<String, SentenceVector> = base.iter().map(|(id, v)| (id.clone(), v.scaled(factor))).collect();
        let a = ScoreTable::compute(&base, &schema);
        let b = ScoreTable::compute(&scaled, &schema);
        ensure(a == b, || format!("trial {trial}: srs changed under scaling by {factor}"))?;
        let expert: BTreeMap<String, bool> = base.keys().map(|id| (id.clone(), rng.gen())).collect();
        for relation in schema.relations() {
            for &t in &grid {
                for id in base.keys() {
                    let x = apply_threshold(a.get(id, relation).unwrap(), t).unwrap() >= 0.0;
                    let y = apply_threshold(b.get(id, relation).unwrap(), t).unwrap() >= 0.0;
                    ensure(x == y, || format!("trial {trial}: label of {id} changed"))?;
                }
                ensure(
                    crowd_expert_agreement(&a, &expert, relation, t).unwrap()
                        == crowd_expert_agreement(&b, &expert, relation, t).unwrap(),
                    || format!("trial {trial}: agreement changed"),
                )?;
            }
        }
    }

    for trial in 0..200 {
        let n = rng.gen_range(1..40);
        let relation = &schema.relations()[rng.gen_range(0..12)];
        let index = schema.option_index(relation).unwrap();
        let vectors: BTreeMap<String, SentenceVector> =
            (0..n).map(|i| (format!("s{i:02}"), random_vector(&mut rng, schema.dimension()))).collect();
        let expert: BTreeMap<String, bool> = vectors.keys().map(|id| (id.clone(), rng.gen())).collect();
        let table = ScoreTable::compute(&vectors, &schema);
        let points = agreement_sweep(&table, &expert, relation, &grid).map_err(|e| e.to_string())?;
        let mut brute = (0usize, grid[0]);
        for &t in &grid {
            let matches = vectors
                .iter()
                .filter(|(id, v)| {
                    let c = v.components();
                    let norm = (c.iter().map(|&x| (x as f64).powi(2)).sum::<f64>()).sqrt();
                    (c[index] as f64 / norm >= t) == expert[*id]
                })
                .count();
            if matches > brute.0 {
                brute = (matches, t);
            }
        }
        let got = best_threshold(&points);
        ensure(got == Some(brute.1), || format!("trial {trial}: argmax {got:?} != {}", brute.1))?;
    }
    Ok("monotone with unit jump on 101x1001 grid; scale invariance on 200 corpora; sweep argmax on 200 fixtures".into())
}

fn simulator_recovery() -> Check {
    let started = Instant::now();
    let (mut hits, mut total) = (0, 0);
    for seed in 0..20 {
        let (bundle, latent) = generate(&recovery_config(seed)).map_err(|e| e.to_string())?;
        let (h, n) = recovery(&bundle, &latent);
        hits += h;
        total += n;
    }
    let rate = hits as f64 / total as f64;
    ensure(rate >= 0.95, || format!("recovery {hits}/{total} = {rate:.3}"))?;
    let (mut flagged, mut correct, mut planted) = (0, 0, 0);
    for seed in 0..20 {
        let c = spam_detection(&spam_config(seed, 0.9));
        flagged += c.flagged;
        correct += c.correct;
        planted += c.planted;
    }
    let (p, r) = precision_recall(flagged, correct, planted);
    ensure(p >= 0.9 && r >= 0.9, || format!("spam precision {p:.3} recall {r:.3}"))?;
    let elapsed = within(Duration::from_secs(30), started)?;
    Ok(format!(
        "recovery {hits}/{total} = {rate:.3}; spam precision {p:.3} recall {r:.3} ({correct}/{flagged} flagged, {planted} planted); {elapsed:.2?}"
    ))
}

fn stability() -> Check {
    let (cosine, f1) = stability_curves(&ambiguous_config(7), 15);
    let value = |curve: &crowdtruth::stability::StabilityCurve, k| curve.at(k).map(|p| p.value).ok_or(format!("no point at k = {k}"));
    let (c3, c15) = (value(&cosine, 3)?, value(&cosine, 15)?);
    let (f10, f15) = (value(&f1, 10)?, value(&f1, 15)?);
    let summary = format!("cosine delta k=3 {c3:.4}, k=15 {c15:.4}; F1 k=10 {f10:.4}, k=15 {f15:.4}, gap {:.4}", (f10 - f15).abs());
    ensure(c15 < c3, || format!("cosine delta does not decrease: {summary}"))?;
    ensure((f10 - f15).abs() <= 0.02, || format!("F1 gap above 0.02: {summary}"))?;
    Ok(summary)
}

fn run_binary(args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_crowdtruth")).args(args).output().map_err(|e| e.to_string())?;
    ensure(out.status.success(), || format!("{args:?}: {}", String::from_utf8_lossy(&out.stderr)))
}

fn pipeline(root: &Path, threads: &str) -> Result<BTreeMap<String, Vec<u8>>, String> {
    let sim = root.join("sim");
    let sim_str = sim.to_str().unwrap();
    run_binary(&["--threads", threads, "simulate", "--out", sim_str, "--seed", "17", "--ambiguous-fraction", "0.3", "--spam-fraction", "0.1"])?;
    let config = sim.join("crowdtruth.toml");
    run_binary(&["--threads", threads, "--config", config.to_str().unwrap(), "report"])?;
    let mut files = BTreeMap::new();
    for dir in [sim.clone(), sim.join("results")] {
        for entry in std::fs::read_dir(&dir).map_err(|e| e.to_string())? {
            let path = entry.map_err(|e| e.to_string())?.path();
            if path.is_file() {
                let name = path.strip_prefix(&sim).unwrap().to_string_lossy().into_owned();
                files.insert(name, std::fs::read(&path).map_err(|e| e.to_string())?);
            }
        }
    }
    Ok(files)
}

fn determinism() -> Check {
    let one = tempfile::tempdir().map_err(|e| e.to_string())?;
    let eight = tempfile::tempdir().map_err(|e| e.to_string())?;
    let a = pipeline(one.path(), "1")?;
    let b = pipeline(eight.path(), "8")?;
    ensure(a.keys().eq(b.keys()), || "different artifact sets".into())?;
    for (name, bytes) in &a {
        ensure(bytes == &b[name], || format!("{name} differs between 1 and 8 threads"))?;
    }
    let total: usize = a.values().map(Vec::len).sum();
    Ok(format!("{} artifacts, {total} bytes identical at 1 and 8 threads", a.len()))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 7] = [
        ("1 score table golden reproduction", score_table_golden),
        ("2 weighted-metric oracle equivalence", weighted_oracle_equivalence),
        ("3 McNemar closed forms and p-values", mcnemar_closed_forms),
        ("4 threshold and label properties", threshold_properties),
        ("5 simulator recovery and spam filtering", simulator_recovery),
        ("6 stability curves", stability),
        ("7 determinism across thread counts", determinism),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        match check() {
            Ok(detail) => println!("PASS  {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL  {name}: {detail}");
            }
        }
    }
    println!("SKIP  8 public dataset annotation quality: needs the published dataset and its adjudication records (network)");
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criterion(s) failed");
        ExitCode::FAILURE
    }
}
