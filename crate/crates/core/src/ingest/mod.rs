//! Parsers and serializers for every file the pipeline reads or writes.
//!
//! All tabular files are UTF-8 CSV with a header row, comma delimiter and
//! RFC 4180 quoting. Multi-select cells use `;` as the inner delimiter.
//! Columns are matched by header name, so column order is free.

pub mod adapter;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::File;
use std::io::{self, BufReader, Read, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::schema::{
    deduplicate_judgments, validate_dataset, validate_expert_labels, AdjudicationRecord,
    ExpertLabel, Judgment, RelationSchema, Resolution, Sentence, TermMention, ValidationReport,
};
use crate::vectors::SentenceVector;

/// A validated dataset: schema, sentences, deduplicated judgments and
/// optional expert labels.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetBundle {
    pub schema: RelationSchema,
    pub sentences: BTreeMap<String, Sentence>,
    pub judgments: Vec<Judgment>,
    pub expert_labels: Option<Vec<ExpertLabel>>,
}

impl DatasetBundle {
    /// Validates the records and drops duplicate (worker, sentence)
    /// judgments. Returns the bundle with its (warning-only) report, or the
    /// full report when any hard violation exists.
    pub fn assemble(
        schema: RelationSchema,
        sentences: Vec<Sentence>,
        judgments: Vec<Judgment>,
        expert_labels: Option<Vec<ExpertLabel>>,
    ) -> std::result::Result<(DatasetBundle, ValidationReport), ValidationReport> {
        let mut report = validate_dataset(&sentences, &judgments, &schema);
        if let Some(labels) = &expert_labels {
            report.merge(validate_expert_labels(&sentences, labels));
        }
        if !report.is_accepted() {
            return Err(report);
        }
        let (judgments, _dropped) = deduplicate_judgments(judgments);
        let sentences = sentences.into_iter().map(|s| (s.id.clone(), s)).collect();
        Ok((
            DatasetBundle {
                schema,
                sentences,
                judgments,
                expert_labels,
            },
            report,
        ))
    }

    pub fn expert_labels(&self) -> &[ExpertLabel] {
        self.expert_labels.as_deref().unwrap_or(&[])
    }
}

/// Classifier output for one sentence-relation pair. Positive iff score > 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub sentence_id: String,
    pub relation: String,
    pub score: f64,
}

impl PredictionRecord {
    pub fn is_positive(&self) -> bool {
        self.score > 0.0
    }
}

fn reader<R: Read>(input: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(input)
}

fn writer<W: Write>(output: W) -> csv::Writer<W> {
    csv::WriterBuilder::new().has_headers(true).from_writer(output)
}

/// Deserializes every row, attaching the 1-based line number to failures.
fn rows<R: Read, T: DeserializeOwned>(input: R) -> Result<Vec<(u64, T)>> {
    let mut rdr = reader(input);
    let headers = rdr.headers()?.clone();
    let mut out = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            Error::row(line, e.to_string())
        })?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let row: T = record
            .deserialize(Some(&headers))
            .map_err(|e| Error::row(line, e.to_string()))?;
        out.push((line, row));
    }
    Ok(out)
}

#[derive(Debug, Serialize, Deserialize)]
struct SentenceRow {
    id: String,
    text: String,
    term1: String,
    term1_start: usize,
    term1_end: usize,
    term2: String,
    term2_start: usize,
    term2_end: usize,
    seed_relation: String,
    #[serde(default)]
    source_tag: Option<String>,
}

pub fn parse_sentences<R: Read>(input: R) -> Result<Vec<Sentence>> {
    rows::<_, SentenceRow>(input)?
        .into_iter()
        .map(|(line, row)| {
            let term1 = TermMention::new(row.term1, row.term1_start, row.term1_end);
            let term2 = TermMention::new(row.term2, row.term2_start, row.term2_end);
            for (name, term) in [("term1", &term1), ("term2", &term2)] {
                term.check_bounds(&row.text)
                    .map_err(|m| Error::row(line, format!("{name}: {m}")))?;
            }
            if row.seed_relation.is_empty() {
                return Err(Error::row(line, "empty seed_relation"));
            }
            Ok(Sentence {
                id: row.id,
                text: row.text,
                term1,
                term2,
                seed_relation: row.seed_relation,
                source_tag: row.source_tag.filter(|s| !s.is_empty()),
            })
        })
        .collect()
}

pub fn write_sentences<W: Write>(output: W, sentences: &[Sentence]) -> Result<()> {
    let mut w = writer(output);
    for s in sentences {
        w.serialize(SentenceRow {
            id: s.id.clone(),
            text: s.text.clone(),
            term1: s.term1.surface.clone(),
            term1_start: s.term1.span.start,
            term1_end: s.term1.span.end,
            term2: s.term2.surface.clone(),
            term2_start: s.term2.span.start,
            term2_end: s.term2.span.end,
            seed_relation: s.seed_relation.clone(),
            source_tag: s.source_tag.clone(),
        })?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
struct JudgmentRow {
    worker_id: String,
    sentence_id: String,
    selections: String,
    #[serde(default)]
    submission_index: Option<u32>,
}

/// Splits a `;`-delimited selection cell, checking every identifier
/// against the schema.
pub fn parse_selections(cell: &str, schema: &RelationSchema) -> std::result::Result<BTreeSet<String>, String> {
    let mut out = BTreeSet::new();
    for part in cell.split(';').map(str::trim).filter(|p| !p.is_empty()) {
        if schema.option_index(part).is_none() {
            return Err(format!("unknown option identifier `{part}`"));
        }
        out.insert(part.to_string());
    }
    if out.is_empty() {
        return Err("empty selection".into());
    }
    Ok(out)
}

/// One judgment per row. Rows without a `submission_index` get their
/// arrival order within the sentence.
pub fn parse_judgments<R: Read>(input: R, schema: &RelationSchema) -> Result<Vec<Judgment>> {
    let mut per_sentence: HashMap<String, u32> = HashMap::new();
    rows::<_, JudgmentRow>(input)?
        .into_iter()
        .map(|(line, row)| {
            let selections =
                parse_selections(&row.selections, schema).map_err(|m| Error::row(line, m))?;
            let counter = per_sentence.entry(row.sentence_id.clone()).or_insert(0);
            let index = row.submission_index.unwrap_or(*counter);
            *counter += 1;
            Ok(Judgment {
                worker_id: row.worker_id,
                sentence_id: row.sentence_id,
                selections,
                submission_index: index,
            })
        })
        .collect()
}

pub fn write_judgments<W: Write>(output: W, judgments: &[Judgment]) -> Result<()> {
    let mut w = writer(output);
    for j in judgments {
        w.serialize(JudgmentRow {
            worker_id: j.worker_id.clone(),
            sentence_id: j.sentence_id.clone(),
            selections: j.selections.iter().cloned().collect::<Vec<_>>().join(";"),
            submission_index: Some(j.submission_index),
        })?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
struct ExpertRow {
    sentence_id: String,
    relation: String,
    decision: String,
}

fn parse_decision(cell: &str) -> std::result::Result<bool, String> {
    match cell {
        "1" => Ok(true),
        "0" => Ok(false),
        other => Err(format!("unknown decision `{other}` (expected 0 or 1)")),
    }
}

pub fn parse_expert_labels<R: Read>(input: R) -> Result<Vec<ExpertLabel>> {
    rows::<_, ExpertRow>(input)?
        .into_iter()
        .map(|(line, row)| {
            Ok(ExpertLabel {
                decision: parse_decision(&row.decision).map_err(|m| Error::row(line, m))?,
                sentence_id: row.sentence_id,
                relation: row.relation,
            })
        })
        .collect()
}

pub fn write_expert_labels<W: Write>(output: W, labels: &[ExpertLabel]) -> Result<()> {
    let mut w = writer(output);
    for l in labels {
        w.serialize(ExpertRow {
            sentence_id: l.sentence_id.clone(),
            relation: l.relation.clone(),
            decision: if l.decision { "1" } else { "0" }.into(),
        })?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
struct AdjudicationRow {
    sentence_id: String,
    relation: String,
    resolution: String,
}

/// Extra columns (for example a filled-in adjudication queue) are ignored.
/// Duplicate (sentence, relation) pairs are rejected.
pub fn parse_adjudications<R: Read>(input: R) -> Result<Vec<AdjudicationRecord>> {
    let mut seen = BTreeSet::new();
    rows::<_, AdjudicationRow>(input)?
        .into_iter()
        .map(|(line, row)| {
            let resolution: Resolution = row.resolution.parse().map_err(|m| Error::row(line, m))?;
            if !seen.insert((row.sentence_id.clone(), row.relation.clone())) {
                return Err(Error::row(
                    line,
                    format!(
                        "duplicate adjudication for ({}, {})",
                        row.sentence_id, row.relation
                    ),
                ));
            }
            Ok(AdjudicationRecord {
                sentence_id: row.sentence_id,
                relation: row.relation,
                resolution,
            })
        })
        .collect()
}

pub fn write_adjudications<W: Write>(output: W, records: &[AdjudicationRecord]) -> Result<()> {
    let mut w = writer(output);
    for r in records {
        w.serialize(AdjudicationRow {
            sentence_id: r.sentence_id.clone(),
            relation: r.relation.clone(),
            resolution: r.resolution.as_str().into(),
        })?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Deserialize)]
struct LabelingRow {
    sentence_id: String,
    #[serde(default)]
    relation: Option<String>,
    #[serde(default)]
    score: Option<f64>,
    #[serde(default)]
    weight: Option<f64>,
    #[serde(default)]
    label: Option<f64>,
}

pub fn parse_predictions<R: Read>(input: R) -> Result<Vec<PredictionRecord>> {
    rows::<_, PredictionRecord>(input).map(|v| v.into_iter().map(|(_, r)| r).collect())
}

pub fn write_predictions<W: Write>(output: W, records: &[PredictionRecord]) -> Result<()> {
    let mut w = writer(output);
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads any labeling file (predictions with `score`, training files with
/// `weight`, gold files with `label`) into per-sentence binary decisions for
/// `relation`. Rows for other relations are skipped.
pub fn parse_labeling<R: Read>(input: R, relation: &str) -> Result<BTreeMap<String, bool>> {
    let mut out = BTreeMap::new();
    for (line, row) in rows::<_, LabelingRow>(input)? {
        if row.relation.as_deref().is_some_and(|r| r != relation) {
            continue;
        }
        let positive = match (row.score, row.weight, row.label) {
            (Some(score), _, _) => score > 0.0,
            // Training weights are `srs - 1` below the threshold, so a
            // non-negative weight is a positive label.
            (None, Some(weight), _) => weight >= 0.0,
            (None, None, Some(label)) => label > 0.0,
            _ => return Err(Error::row(line, "row has no score, weight or label")),
        };
        if out.insert(row.sentence_id.clone(), positive).is_some() {
            return Err(Error::row(
                line,
                format!("duplicate entry for sentence `{}`", row.sentence_id),
            ));
        }
    }
    Ok(out)
}

/// `vectors.csv`: sentence_id, one integer column per schema option,
/// worker_count.
pub fn write_vectors<W: Write>(
    output: W,
    schema: &RelationSchema,
    vectors: &BTreeMap<String, SentenceVector>,
) -> Result<()> {
    let mut w = csv::WriterBuilder::new().from_writer(output);
    let mut header = vec!["sentence_id".to_string()];
    header.extend(schema.options().map(String::from));
    header.push("worker_count".into());
    w.write_record(&header)?;
    for (id, v) in vectors {
        let mut record = vec![id.clone()];
        record.extend(v.components().iter().map(u32::to_string));
        record.push(v.worker_count().to_string());
        w.write_record(&record)?;
    }
    w.flush()?;
    Ok(())
}

pub fn parse_vectors<R: Read>(
    input: R,
    schema: &RelationSchema,
) -> Result<BTreeMap<String, SentenceVector>> {
    let mut rdr = reader(input);
    let headers = rdr.headers()?.clone();
    let column = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::row(1, format!("missing column `{name}`")))
    };
    let id_col = column("sentence_id")?;
    let count_col = column("worker_count")?;
    let option_cols = schema
        .options()
        .map(&column)
        .collect::<Result<Vec<_>>>()?;
    let mut out = BTreeMap::new();
    for record in rdr.records() {
        let record = record?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let int = |col: usize| -> Result<u32> {
            record
                .get(col)
                .unwrap_or("")
                .parse::<u32>()
                .map_err(|e| Error::row(line, format!("column {col}: {e}")))
        };
        let components = option_cols.iter().map(|&c| int(c)).collect::<Result<Vec<_>>>()?;
        let vector = SentenceVector::from_parts(components, int(count_col)?)
            .map_err(|e| Error::row(line, e.to_string()))?;
        out.insert(record.get(id_col).unwrap_or("").to_string(), vector);
    }
    Ok(out)
}

/// Writes rows of any serializable record type as CSV with a header row.
pub fn write_csv<W: Write, T: Serialize>(output: W, rows: &[T]) -> Result<()> {
    let mut w = writer(output);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads rows of a CSV report back into records.
pub fn read_csv<R: Read, T: DeserializeOwned>(input: R) -> Result<Vec<T>> {
    rows(input).map(|v| v.into_iter().map(|(_, r)| r).collect())
}

/// Pretty JSON with a trailing newline.
pub fn write_json<W: Write, T: Serialize + ?Sized>(mut output: W, value: &T) -> Result<()> {
    serde_json::to_writer_pretty(&mut output, value)?;
    output.write_all(b"\n")?;
    Ok(())
}

pub fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(|e| {
        Error::Io(io::Error::new(
            e.kind(),
            format!("{}: {e}", path.display()),
        ))
    })
}

pub fn create(path: &Path) -> Result<io::BufWriter<File>> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    File::create(path).map(io::BufWriter::new).map_err(|e| {
        Error::Io(io::Error::new(
            e.kind(),
            format!("{}: {e}", path.display()),
        ))
    })
}

pub fn load_schema(path: &Path) -> Result<RelationSchema> {
    RelationSchema::from_toml_str(&std::fs::read_to_string(path)?)
}
