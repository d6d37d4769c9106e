//! Relation vocabulary, sentence/term data model and raw judgment records.
//!
//! Every other module is parameterized by a [`RelationSchema`]. The schema
//! fixes the option order used for annotation and sentence vectors: the
//! listed relations first, then the OTHER sentinel, then NONE.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};

use serde::{Deserialize, Serialize};
use unicode_normalization::UnicodeNormalization;

use crate::error::{Error, Result};

/// Relations used for the medical corpus, in the column order of the
/// published sentence-vector table.
pub const MEDICAL_RELATIONS: [&str; 12] = [
    "treat",
    "prevent",
    "diagnose",
    "cause",
    "location",
    "symptom",
    "manifestation",
    "contraindicate",
    "associated_with",
    "side_effect",
    "is_a",
    "part_of",
];

/// Seed UMLS relations for each medical relation.
const MEDICAL_UMLS: [(&str, &[&str]); 12] = [
    ("treat", &["may_treat"]),
    ("prevent", &["may_prevent"]),
    ("diagnose", &["may_diagnose"]),
    ("cause", &["cause_of", "has_causative_agent"]),
    (
        "location",
        &["disease_has_primary_anatomic_site", "has_finding_site"],
    ),
    ("symptom", &["disease_has_finding", "disease_may_have_finding"]),
    ("manifestation", &["has_manifestation"]),
    ("contraindicate", &["contraindicated_drug"]),
    ("associated_with", &["associated_with"]),
    ("side_effect", &["side_effect"]),
    ("is_a", &["is_a"]),
    ("part_of", &["part_of"]),
];

/// Ordered relation vocabulary plus the OTHER/NONE sentinels.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "SchemaFile", into = "SchemaFile")]
pub struct RelationSchema {
    relations: Vec<String>,
    sentinel_other: String,
    sentinel_none: String,
    umls_map: BTreeMap<String, BTreeSet<String>>,
    overlap_exclusions: BTreeMap<String, BTreeSet<String>>,
}

/// On-disk representation of a schema.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct SchemaFile {
    relations: Vec<String>,
    sentinel_other: String,
    sentinel_none: String,
    #[serde(default)]
    umls_map: BTreeMap<String, BTreeSet<String>>,
    #[serde(default)]
    overlap_exclusions: BTreeMap<String, BTreeSet<String>>,
}

impl TryFrom<SchemaFile> for RelationSchema {
    type Error = Error;

    fn try_from(file: SchemaFile) -> Result<Self> {
        let schema = RelationSchema {
            relations: file.relations,
            sentinel_other: file.sentinel_other,
            sentinel_none: file.sentinel_none,
            umls_map: file.umls_map,
            overlap_exclusions: file.overlap_exclusions,
        };
        schema.check()?;
        Ok(schema)
    }
}

impl From<RelationSchema> for SchemaFile {
    fn from(schema: RelationSchema) -> Self {
        SchemaFile {
            relations: schema.relations,
            sentinel_other: schema.sentinel_other,
            sentinel_none: schema.sentinel_none,
            umls_map: schema.umls_map,
            overlap_exclusions: schema.overlap_exclusions,
        }
    }
}

impl RelationSchema {
    pub fn new(
        relations: impl IntoIterator<Item = impl Into<String>>,
        sentinel_other: impl Into<String>,
        sentinel_none: impl Into<String>,
    ) -> Result<Self> {
        let schema = RelationSchema {
            relations: relations.into_iter().map(Into::into).collect(),
            sentinel_other: sentinel_other.into(),
            sentinel_none: sentinel_none.into(),
            umls_map: BTreeMap::new(),
            overlap_exclusions: BTreeMap::new(),
        };
        schema.check()?;
        Ok(schema)
    }

    /// The twelve medical relations with `other`/`none` sentinels and the
    /// UMLS seed mapping. Overlap exclusions are empty since the UMLS seed
    /// sets are pairwise disjoint.
    pub fn medical() -> Self {
        let mut schema = RelationSchema::new(MEDICAL_RELATIONS, "other", "none")
            .expect("built-in schema is valid");
        for (relation, seeds) in MEDICAL_UMLS {
            schema.umls_map.insert(
                relation.to_string(),
                seeds.iter().map(|s| s.to_string()).collect(),
            );
        }
        schema
    }

    pub fn with_umls(
        mut self,
        relation: &str,
        seeds: impl IntoIterator<Item = impl Into<String>>,
    ) -> Result<Self> {
        self.umls_map
            .insert(relation.to_string(), seeds.into_iter().map(Into::into).collect());
        self.check()?;
        Ok(self)
    }

    /// Marks `excluded` as overlapping with `relation`: sentences seeded with
    /// `excluded` are not used as negatives for `relation`.
    pub fn with_overlap_exclusion(mut self, relation: &str, excluded: &str) -> Result<Self> {
        self.overlap_exclusions
            .entry(relation.to_string())
            .or_default()
            .insert(excluded.to_string());
        self.check()?;
        Ok(self)
    }

    fn check(&self) -> Result<()> {
        if self.relations.is_empty() {
            return Err(Error::Schema("schema lists no relations".into()));
        }
        let mut seen = HashSet::new();
        for id in self.options() {
            if id.trim().is_empty() {
                return Err(Error::Schema("empty identifier".into()));
            }
            if id.contains(';') || id.contains(',') {
                return Err(Error::Schema(format!(
                    "identifier `{id}` contains a reserved delimiter"
                )));
            }
            if !seen.insert(id) {
                return Err(Error::Schema(format!("duplicate identifier `{id}`")));
            }
        }
        for key in self.umls_map.keys() {
            if !self.is_relation(key) {
                return Err(Error::Schema(format!("umls_map key `{key}` is not a relation")));
            }
        }
        for (key, excluded) in &self.overlap_exclusions {
            if !self.is_relation(key) {
                return Err(Error::Schema(format!(
                    "overlap_exclusions key `{key}` is not a relation"
                )));
            }
            for other in excluded {
                if !self.is_relation(other) || other == key {
                    return Err(Error::Schema(format!(
                        "overlap exclusion `{key}` -> `{other}` is invalid"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn relations(&self) -> &[String] {
        &self.relations
    }

    pub fn sentinel_other(&self) -> &str {
        &self.sentinel_other
    }

    pub fn sentinel_none(&self) -> &str {
        &self.sentinel_none
    }

    pub fn umls_map(&self) -> &BTreeMap<String, BTreeSet<String>> {
        &self.umls_map
    }

    pub fn overlap_exclusions(&self) -> &BTreeMap<String, BTreeSet<String>> {
        &self.overlap_exclusions
    }

    /// All selectable options in vector order.
    pub fn options(&self) -> impl Iterator<Item = &str> + '_ {
        self.relations
            .iter()
            .map(String::as_str)
            .chain([self.sentinel_other.as_str(), self.sentinel_none.as_str()])
    }

    /// Vector dimension: relations plus the two sentinels.
    pub fn dimension(&self) -> usize {
        self.relations.len() + 2
    }

    pub fn option_index(&self, id: &str) -> Option<usize> {
        self.options().position(|o| o == id)
    }

    pub fn option_at(&self, index: usize) -> Option<&str> {
        self.options().nth(index)
    }

    pub fn other_index(&self) -> usize {
        self.relations.len()
    }

    pub fn none_index(&self) -> usize {
        self.relations.len() + 1
    }

    pub fn is_relation(&self, id: &str) -> bool {
        self.relations.iter().any(|r| r == id)
    }

    pub fn is_sentinel(&self, id: &str) -> bool {
        id == self.sentinel_other || id == self.sentinel_none
    }

    /// True when sentences seeded with `seed` must not be used as negatives
    /// for `target`.
    pub fn overlaps(&self, target: &str, seed: &str) -> bool {
        self.overlap_exclusions
            .get(target)
            .is_some_and(|set| set.contains(seed))
    }

    /// Maps a UMLS seed relation back to the schema relation it belongs to.
    pub fn relation_for_umls(&self, umls: &str) -> Option<&str> {
        self.umls_map
            .iter()
            .find(|(_, seeds)| seeds.contains(umls))
            .map(|(r, _)| r.as_str())
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Schema(e.to_string()))
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("schema serializes to toml")
    }
}

impl Default for RelationSchema {
    fn default() -> Self {
        RelationSchema::medical()
    }
}

/// Half-open character range `[start, end)` into a sentence's text.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn new(start: usize, end: usize) -> Self {
        Span { start, end }
    }

    pub fn overlaps(&self, other: &Span) -> bool {
        self.start < other.end && other.start < self.end
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TermMention {
    pub surface: String,
    pub span: Span,
    pub category: Option<String>,
}

impl TermMention {
    pub fn new(surface: impl Into<String>, start: usize, end: usize) -> Self {
        TermMention {
            surface: surface.into(),
            span: Span::new(start, end),
            category: None,
        }
    }

    /// Checks `0 <= start < end <= text length` (in characters).
    pub fn check_bounds(&self, text: &str) -> std::result::Result<(), String> {
        let len = text.chars().count();
        if self.span.start >= self.span.end {
            return Err(format!(
                "empty or inverted span {}..{}",
                self.span.start, self.span.end
            ));
        }
        if self.span.end > len {
            return Err(format!(
                "span end {} beyond text length {len}",
                self.span.end
            ));
        }
        Ok(())
    }

    /// Whether the surface form matches the text under the span after NFC
    /// normalization and whitespace collapsing.
    pub fn surface_matches(&self, text: &str) -> bool {
        let covered: String = text
            .chars()
            .skip(self.span.start)
            .take(self.span.end.saturating_sub(self.span.start))
            .collect();
        normalize(&covered) == normalize(&self.surface)
    }
}

fn normalize(s: &str) -> String {
    let nfc: String = s.nfc().collect();
    nfc.split_whitespace().collect::<Vec<_>>().join(" ")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sentence {
    pub id: String,
    pub text: String,
    pub term1: TermMention,
    pub term2: TermMention,
    pub seed_relation: String,
    pub source_tag: Option<String>,
}

/// One worker's selection of options on one sentence.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Judgment {
    pub worker_id: String,
    pub sentence_id: String,
    pub selections: BTreeSet<String>,
    pub submission_index: u32,
}

impl Judgment {
    pub fn new(
        worker_id: impl Into<String>,
        sentence_id: impl Into<String>,
        selections: impl IntoIterator<Item = impl Into<String>>,
        submission_index: u32,
    ) -> Self {
        Judgment {
            worker_id: worker_id.into(),
            sentence_id: sentence_id.into(),
            selections: selections.into_iter().map(Into::into).collect(),
            submission_index,
        }
    }
}

/// An expert's binary decision on a sentence's seed relation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExpertLabel {
    pub sentence_id: String,
    pub relation: String,
    pub decision: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Resolution {
    Positive,
    Negative,
    Unresolved,
}

impl Resolution {
    pub fn as_str(&self) -> &'static str {
        match self {
            Resolution::Positive => "positive",
            Resolution::Negative => "negative",
            Resolution::Unresolved => "unresolved",
        }
    }
}

impl std::str::FromStr for Resolution {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s.trim() {
            "positive" => Ok(Resolution::Positive),
            "negative" => Ok(Resolution::Negative),
            "unresolved" => Ok(Resolution::Unresolved),
            other => Err(format!("unknown resolution `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdjudicationRecord {
    pub sentence_id: String,
    pub relation: String,
    pub resolution: Resolution,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationKind {
    DuplicateSentenceId,
    SpanOutOfBounds,
    SpanOverlap,
    SurfaceMismatch,
    UnknownSeedRelation,
    EmptySelection,
    UnknownOption,
    NoneNotSole,
    DanglingSentenceReference,
    DuplicateJudgment,
    ExpertRelationMismatch,
}

/// One violated invariant, located by record coordinates.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub kind: ViolationKind,
    pub record: String,
    pub message: String,
}

/// Outcome of dataset validation. Warnings never block acceptance.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub errors: Vec<Violation>,
    pub warnings: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_accepted(&self) -> bool {
        self.errors.is_empty()
    }

    pub fn is_empty(&self) -> bool {
        self.errors.is_empty() && self.warnings.is_empty()
    }

    fn error(&mut self, kind: ViolationKind, record: String, message: impl Into<String>) {
        self.errors.push(Violation {
            kind,
            record,
            message: message.into(),
        });
    }

    fn warn(&mut self, kind: ViolationKind, record: String, message: impl Into<String>) {
        self.warnings.push(Violation {
            kind,
            record,
            message: message.into(),
        });
    }

    pub fn merge(&mut self, other: ValidationReport) {
        self.errors.extend(other.errors);
        self.warnings.extend(other.warnings);
    }
}

/// Checks every record invariant and reports all violations. Never aborts.
pub fn validate_dataset(
    sentences: &[Sentence],
    judgments: &[Judgment],
    schema: &RelationSchema,
) -> ValidationReport {
    let mut report = ValidationReport::default();
    let mut ids = HashSet::new();

    for sentence in sentences {
        let record = format!("sentence {}", sentence.id);
        if !ids.insert(sentence.id.as_str()) {
            report.error(ViolationKind::DuplicateSentenceId, record.clone(), "duplicate sentence id");
        }
        for (name, term) in [("term1", &sentence.term1), ("term2", &sentence.term2)] {
            match term.check_bounds(&sentence.text) {
                Err(msg) => report.error(
                    ViolationKind::SpanOutOfBounds,
                    format!("{record} {name}"),
                    msg,
                ),
                Ok(()) if !term.surface_matches(&sentence.text) => report.warn(
                    ViolationKind::SurfaceMismatch,
                    format!("{record} {name}"),
                    format!("surface `{}` does not match span text", term.surface),
                ),
                Ok(()) => {}
            }
        }
        if sentence.term1.span.overlaps(&sentence.term2.span) {
            report.error(ViolationKind::SpanOverlap, record.clone(), "term spans overlap");
        }
        if !schema.is_relation(&sentence.seed_relation) {
            report.error(
                ViolationKind::UnknownSeedRelation,
                record,
                format!("seed relation `{}` is not a schema relation", sentence.seed_relation),
            );
        }
    }

    let mut first_seen: HashMap<(&str, &str), usize> = HashMap::new();
    for (row, judgment) in judgments.iter().enumerate() {
        let record = format!(
            "judgment {row} ({}, {})",
            judgment.worker_id, judgment.sentence_id
        );
        if judgment.selections.is_empty() {
            report.error(ViolationKind::EmptySelection, record.clone(), "empty selection");
        }
        for option in &judgment.selections {
            if schema.option_index(option).is_none() {
                report.error(
                    ViolationKind::UnknownOption,
                    record.clone(),
                    format!("unknown option `{option}`"),
                );
            }
        }
        if judgment.selections.contains(schema.sentinel_none()) && judgment.selections.len() > 1 {
            report.error(ViolationKind::NoneNotSole, record.clone(), "NONE not sole selection");
        }
        if !ids.contains(judgment.sentence_id.as_str()) {
            report.error(
                ViolationKind::DanglingSentenceReference,
                record.clone(),
                "dangling sentence reference",
            );
        }
        let key = (judgment.worker_id.as_str(), judgment.sentence_id.as_str());
        match first_seen.get(&key) {
            Some(&prev) => report.warn(
                ViolationKind::DuplicateJudgment,
                record,
                format!(
                    "duplicate of judgment {prev}; the lowest submission_index is kept"
                ),
            ),
            None => {
                first_seen.insert(key, row);
            }
        }
    }
    report
}

/// Expert labels must refer to known sentences and to their seed relation.
pub fn validate_expert_labels(sentences: &[Sentence], labels: &[ExpertLabel]) -> ValidationReport {
    let by_id: HashMap<&str, &Sentence> = sentences.iter().map(|s| (s.id.as_str(), s)).collect();
    let mut report = ValidationReport::default();
    for (row, label) in labels.iter().enumerate() {
        let record = format!("expert label {row} ({}, {})", label.sentence_id, label.relation);
        match by_id.get(label.sentence_id.as_str()) {
            None => report.error(
                ViolationKind::DanglingSentenceReference,
                record,
                "dangling sentence reference",
            ),
            Some(s) if s.seed_relation != label.relation => report.error(
                ViolationKind::ExpertRelationMismatch,
                record,
                format!("expert relation differs from seed relation `{}`", s.seed_relation),
            ),
            Some(_) => {}
        }
    }
    report
}

/// Keeps one judgment per (worker, sentence): the one with the lowest
/// submission index, first occurrence on ties. Returns (kept, dropped).
pub fn deduplicate_judgments(judgments: Vec<Judgment>) -> (Vec<Judgment>, Vec<Judgment>) {
    let mut best: HashMap<(String, String), usize> = HashMap::new();
    for (i, j) in judgments.iter().enumerate() {
        let key = (j.worker_id.clone(), j.sentence_id.clone());
        match best.get(&key) {
            Some(&b) if judgments[b].submission_index <= j.submission_index => {}
            _ => {
                best.insert(key, i);
            }
        }
    }
    let keep: HashSet<usize> = best.into_values().collect();
    let mut kept = Vec::new();
    let mut dropped = Vec::new();
    for (i, j) in judgments.into_iter().enumerate() {
        if keep.contains(&i) {
            kept.push(j);
        } else {
            dropped.push(j);
        }
    }
    (kept, dropped)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sentence(id: &str, seed: &str) -> Sentence {
        Sentence {
            id: id.into(),
            text: "aspirin treats headache".into(),
            term1: TermMention::new("aspirin", 0, 7),
            term2: TermMention::new("headache", 15, 23),
            seed_relation: seed.into(),
            source_tag: None,
        }
    }

    #[test]
    fn medical_schema_has_fourteen_options() {
        let schema = RelationSchema::medical();
        assert_eq!(schema.relations().len(), 12);
        assert_eq!(schema.dimension(), 14);
        assert_eq!(schema.option_index("other"), Some(12));
        assert_eq!(schema.option_index("none"), Some(13));
        assert_eq!(schema.relation_for_umls("has_causative_agent"), Some("cause"));
    }

    #[test]
    fn duplicate_identifiers_rejected() {
        assert!(RelationSchema::new(["a", "b", "a"], "other", "none").is_err());
        assert!(RelationSchema::new(["a", "none"], "other", "none").is_err());
    }

    #[test]
    fn schema_toml_round_trip() {
        let schema = RelationSchema::medical()
            .with_overlap_exclusion("symptom", "manifestation")
            .unwrap();
        let text = schema.to_toml_string();
        assert_eq!(RelationSchema::from_toml_str(&text).unwrap(), schema);
    }

    #[test]
    fn well_formed_fixture_has_empty_report() {
        let schema = RelationSchema::medical();
        let sentences = vec![sentence("s1", "treat"), sentence("s2", "cause")];
        let judgments = vec![
            Judgment::new("w1", "s1", ["treat"], 0),
            Judgment::new("w1", "s2", ["cause", "symptom"], 0),
        ];
        assert!(validate_dataset(&sentences, &judgments, &schema).is_empty());
    }

    #[test]
    fn none_with_relation_reported() {
        let schema = RelationSchema::medical();
        let sentences = vec![sentence("s1", "treat")];
        let judgments = vec![Judgment::new("w1", "s1", ["none", "treat"], 0)];
        let report = validate_dataset(&sentences, &judgments, &schema);
        assert_eq!(report.errors.len(), 1);
        assert_eq!(report.errors[0].kind, ViolationKind::NoneNotSole);
        assert_eq!(report.errors[0].message, "NONE not sole selection");
    }

    #[test]
    fn other_is_combinable() {
        let schema = RelationSchema::medical();
        let sentences = vec![sentence("s1", "treat")];
        let judgments = vec![Judgment::new("w1", "s1", ["other", "treat"], 0)];
        assert!(validate_dataset(&sentences, &judgments, &schema).is_accepted());
    }

    #[test]
    fn dangling_reference_reported() {
        let schema = RelationSchema::medical();
        let sentences = vec![sentence("s1", "treat")];
        let judgments = vec![Judgment::new("w1", "s404", ["treat"], 0)];
        let report = validate_dataset(&sentences, &judgments, &schema);
        assert_eq!(report.errors[0].kind, ViolationKind::DanglingSentenceReference);
        assert_eq!(report.errors[0].message, "dangling sentence reference");
    }

    #[test]
    fn surface_mismatch_is_a_warning() {
        let schema = RelationSchema::medical();
        let mut s = sentence("s1", "treat");
        s.term1.surface = "ibuprofen".into();
        let report = validate_dataset(&[s], &[], &schema);
        assert!(report.is_accepted());
        assert_eq!(report.warnings[0].kind, ViolationKind::SurfaceMismatch);
    }

    #[test]
    fn surface_match_ignores_spacing() {
        let text = "end  stage renal disease";
        let term = TermMention::new("end stage renal disease", 0, 24);
        assert!(term.surface_matches(text));
    }

    #[test]
    fn span_and_seed_errors() {
        let schema = RelationSchema::medical();
        let mut s = sentence("s1", "other");
        s.term2.span = Span::new(3, 99);
        let report = validate_dataset(&[s], &[], &schema);
        let kinds: Vec<_> = report.errors.iter().map(|v| v.kind).collect();
        assert!(kinds.contains(&ViolationKind::SpanOutOfBounds));
        assert!(kinds.contains(&ViolationKind::SpanOverlap));
        assert!(kinds.contains(&ViolationKind::UnknownSeedRelation));
    }

    #[test]
    fn duplicates_keep_lowest_submission_index() {
        let judgments = vec![
            Judgment::new("w1", "s1", ["cause"], 4),
            Judgment::new("w1", "s1", ["treat"], 1),
            Judgment::new("w2", "s1", ["treat"], 2),
        ];
        let (kept, dropped) = deduplicate_judgments(judgments);
        assert_eq!(kept.len(), 2);
        assert_eq!(dropped.len(), 1);
        assert!(kept.iter().any(|j| j.worker_id == "w1" && j.submission_index == 1));
        assert_eq!(dropped[0].submission_index, 4);
    }

    #[test]
    fn expert_label_must_match_seed() {
        let sentences = vec![sentence("s1", "treat")];
        let labels = vec![ExpertLabel {
            sentence_id: "s1".into(),
            relation: "cause".into(),
            decision: true,
        }];
        let report = validate_expert_labels(&sentences, &labels);
        assert_eq!(report.errors[0].kind, ViolationKind::ExpertRelationMismatch);
    }
}
