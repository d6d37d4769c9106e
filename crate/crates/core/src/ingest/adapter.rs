//! Import adapter for crowdsourcing-platform exports.
//!
//! Maps a raw per-judgment export (one row per worker answer, platform
//! column names) onto the native `judgments.csv`/`sentences.csv` records.
//! The mapping is a plain TOML document so a different export layout only
//! needs a different mapping file:
//!
//! ```toml
//! worker_column = "_worker_id"
//! unit_column = "_unit_id"
//! selection_column = "relations"
//! order_column = "_started_at"
//! selection_delimiters = ["\n", ";", ","]
//!
//! [aliases]
//! treats = "treat"
//! ```
//!
//! Answer labels are normalized by stripping surrounding brackets,
//! lowercasing and replacing spaces with `_` before the alias table and the
//! schema are consulted.

use std::collections::{BTreeMap, HashMap};
use std::io::Read;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::schema::{Judgment, RelationSchema, Sentence, TermMention};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ImportMapping {
    pub worker_column: String,
    pub unit_column: String,
    pub selection_column: String,
    /// Column that orders submissions within a unit. Row order when absent.
    pub order_column: Option<String>,
    pub selection_delimiters: Vec<String>,
    pub aliases: BTreeMap<String, String>,
    pub sentence_text_column: String,
    pub term1_column: String,
    pub term2_column: String,
    /// Optional character-offset columns; when missing the first
    /// occurrence of the term in the text is used.
    pub term1_start_column: Option<String>,
    pub term2_start_column: Option<String>,
    pub seed_relation_column: String,
}

impl Default for ImportMapping {
    fn default() -> Self {
        let aliases = [
            ("treats", "treat"),
            ("prevents", "prevent"),
            ("diagnoses", "diagnose"),
            ("diagnose_by_test_or_drug", "diagnose"),
            ("causes", "cause"),
            ("cause_of", "cause"),
            ("symptoms", "symptom"),
            ("contraindicates", "contraindicate"),
            ("side_effects", "side_effect"),
            ("associated", "associated_with"),
        ]
        .into_iter()
        .map(|(a, b)| (a.to_string(), b.to_string()))
        .collect();
        ImportMapping {
            worker_column: "_worker_id".into(),
            unit_column: "_unit_id".into(),
            selection_column: "relations".into(),
            order_column: Some("_started_at".into()),
            selection_delimiters: vec!["\n".into(), ";".into(), ",".into()],
            aliases,
            sentence_text_column: "sentence".into(),
            term1_column: "term1".into(),
            term2_column: "term2".into(),
            term1_start_column: Some("b1".into()),
            term2_start_column: Some("b2".into()),
            seed_relation_column: "relation".into(),
        }
    }
}

impl ImportMapping {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Maps one raw answer label to a schema option.
    pub fn normalize_label(&self, raw: &str, schema: &RelationSchema) -> Option<String> {
        let cleaned = raw
            .trim()
            .trim_start_matches('[')
            .trim_end_matches(']')
            .trim()
            .to_lowercase()
            .replace([' ', '-'], "_");
        if cleaned.is_empty() {
            return None;
        }
        let resolved = self.aliases.get(&cleaned).cloned().unwrap_or(cleaned);
        schema.option_index(&resolved).map(|_| resolved)
    }

    fn split_selections<'a>(&self, cell: &'a str) -> Vec<&'a str> {
        let mut parts = vec![cell];
        for delim in &self.selection_delimiters {
            parts = parts
                .into_iter()
                .flat_map(|p| p.split(delim.as_str()))
                .collect();
        }
        parts.into_iter().map(str::trim).filter(|p| !p.is_empty()).collect()
    }
}

fn column_index(headers: &csv::StringRecord, name: &str) -> Result<usize> {
    headers
        .iter()
        .position(|h| h == name)
        .ok_or_else(|| Error::row(1, format!("missing column `{name}`")))
}

/// Sort key for submission order: numeric values first, then
/// `m/d/yyyy hh:mm:ss` timestamps, then the raw string.
fn order_key(raw: &str) -> (u8, i64, String) {
    if let Ok(n) = raw.trim().parse::<i64>() {
        return (0, n, String::new());
    }
    if let Some(ts) = parse_us_timestamp(raw.trim()) {
        return (1, ts, String::new());
    }
    (2, 0, raw.to_string())
}

fn parse_us_timestamp(raw: &str) -> Option<i64> {
    let (date, time) = raw.split_once(' ').unwrap_or((raw, "0:0:0"));
    let d: Vec<i64> = date.split('/').map(|p| p.parse().ok()).collect::<Option<_>>()?;
    let t: Vec<i64> = time.split(':').map(|p| p.parse().ok()).collect::<Option<_>>()?;
    if d.len() != 3 || t.is_empty() || t.len() > 3 {
        return None;
    }
    let secs = t[0] * 3600 + t.get(1).unwrap_or(&0) * 60 + t.get(2).unwrap_or(&0);
    Some(((d[2] * 12 + d[0]) * 31 + d[1]) * 86_400 + secs)
}

/// A raw label that matched no schema option, with its line number.
pub type UnmappedLabel = (String, u64);

/// A judgment waiting for submission ordering: unit, sort key, row index.
type Staged = (String, (u8, i64, String), usize, Judgment);

/// Converts a raw export into judgments. Labels that do not resolve to a
/// schema option are returned separately (value, line) instead of failing
/// the whole import.
pub fn import_judgments<R: Read>(
    input: R,
    mapping: &ImportMapping,
    schema: &RelationSchema,
) -> Result<(Vec<Judgment>, Vec<UnmappedLabel>)> {
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(input);
    let headers = rdr.headers()?.clone();
    let worker = column_index(&headers, &mapping.worker_column)?;
    let unit = column_index(&headers, &mapping.unit_column)?;
    let selection = column_index(&headers, &mapping.selection_column)?;
    let order = match &mapping.order_column {
        Some(c) => headers.iter().position(|h| h == c),
        None => None,
    };

    let mut unmapped = Vec::new();
    let mut staged: Vec<Staged> = Vec::new();
    for (row, record) in rdr.records().enumerate() {
        let record = record?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let cell = |i: usize| record.get(i).unwrap_or("").trim().to_string();
        let mut selections = std::collections::BTreeSet::new();
        for raw in mapping.split_selections(record.get(selection).unwrap_or("")) {
            match mapping.normalize_label(raw, schema) {
                Some(opt) => {
                    selections.insert(opt);
                }
                None => unmapped.push((raw.to_string(), line)),
            }
        }
        if selections.is_empty() {
            continue;
        }
        let key = order.map(|i| order_key(&cell(i))).unwrap_or((0, 0, String::new()));
        staged.push((
            cell(unit),
            key,
            row,
            Judgment {
                worker_id: cell(worker),
                sentence_id: cell(unit),
                selections,
                submission_index: 0,
            },
        ));
    }

    staged.sort_by(|a, b| (&a.0, &a.1, a.2).cmp(&(&b.0, &b.1, b.2)));
    let mut counters: HashMap<String, u32> = HashMap::new();
    let mut judgments: Vec<(usize, Judgment)> = staged
        .into_iter()
        .map(|(unit, _, row, mut j)| {
            let c = counters.entry(unit).or_insert(0);
            j.submission_index = *c;
            *c += 1;
            (row, j)
        })
        .collect();
    judgments.sort_by_key(|(row, _)| *row);
    Ok((judgments.into_iter().map(|(_, j)| j).collect(), unmapped))
}

/// Extracts one sentence record per unit from the same export. The seed
/// relation column may hold either a schema relation or a UMLS seed name.
pub fn import_sentences<R: Read>(
    input: R,
    mapping: &ImportMapping,
    schema: &RelationSchema,
) -> Result<Vec<Sentence>> {
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(input);
    let headers = rdr.headers()?.clone();
    let unit = column_index(&headers, &mapping.unit_column)?;
    let text_col = column_index(&headers, &mapping.sentence_text_column)?;
    let t1 = column_index(&headers, &mapping.term1_column)?;
    let t2 = column_index(&headers, &mapping.term2_column)?;
    let seed = column_index(&headers, &mapping.seed_relation_column)?;
    let b1 = mapping
        .term1_start_column
        .as_ref()
        .and_then(|c| headers.iter().position(|h| h == c));
    let b2 = mapping
        .term2_start_column
        .as_ref()
        .and_then(|c| headers.iter().position(|h| h == c));

    let mut out: BTreeMap<String, Sentence> = BTreeMap::new();
    for record in rdr.records() {
        let record = record?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let cell = |i: usize| record.get(i).unwrap_or("").trim().to_string();
        let id = cell(unit);
        if out.contains_key(&id) {
            continue;
        }
        let text = record.get(text_col).unwrap_or("").to_string();
        let locate = |term: &str, start: Option<usize>| -> Result<TermMention> {
            let begin = match start.and_then(|i| cell(i).parse::<usize>().ok()) {
                Some(b) => b,
                None => char_find(&text, term)
                    .ok_or_else(|| Error::row(line, format!("term `{term}` not found in text")))?,
            };
            let mention = TermMention::new(term, begin, begin + term.chars().count());
            mention.check_bounds(&text).map_err(|m| Error::row(line, m))?;
            Ok(mention)
        };
        let term1 = locate(&cell(t1), b1)?;
        let term2 = locate(&cell(t2), b2)?;
        let raw_seed = cell(seed);
        let seed_relation = mapping
            .normalize_label(&raw_seed, schema)
            .filter(|r| schema.is_relation(r))
            .or_else(|| schema.relation_for_umls(&raw_seed.to_lowercase()).map(String::from))
            .ok_or_else(|| Error::row(line, format!("unknown seed relation `{raw_seed}`")))?;
        out.insert(
            id.clone(),
            Sentence {
                id,
                text,
                term1,
                term2,
                seed_relation,
                source_tag: None,
            },
        );
    }
    Ok(out.into_values().collect())
}

fn char_find(text: &str, needle: &str) -> Option<usize> {
    if needle.is_empty() {
        return None;
    }
    let lower = text.to_lowercase();
    let byte = lower.find(&needle.to_lowercase())?;
    if lower.len() != text.len() {
        return text.find(needle).map(|b| text[..b].chars().count());
    }
    Some(text[..byte].chars().count())
}
