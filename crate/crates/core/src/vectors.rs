//! Annotation vectors, sentence vectors and cosine similarity.
//!
//! Vectors hold exact integer counts; cosines are evaluated in `f64` only
//! at the end, so aggregation order never changes a result.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::schema::{Judgment, RelationSchema};

/// One worker's binary selection vector for one sentence.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AnnotationVector(Vec<u32>);

impl AnnotationVector {
    pub fn components(&self) -> &[u32] {
        &self.0
    }

    pub fn dimension(&self) -> usize {
        self.0.len()
    }
}

/// Componentwise sum of annotation vectors over the workers of a sentence.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SentenceVector {
    components: Vec<u32>,
    worker_count: u32,
}

impl SentenceVector {
    pub fn zeros(dimension: usize) -> Self {
        SentenceVector {
            components: vec![0; dimension],
            worker_count: 0,
        }
    }

    /// Rebuilds a vector from stored counts, checking that no component
    /// exceeds the worker count and that every worker selected something.
    pub fn from_parts(components: Vec<u32>, worker_count: u32) -> Result<Self> {
        if components.iter().any(|&c| c > worker_count) {
            return Err(Error::InvalidParameter(
                "component exceeds worker_count".into(),
            ));
        }
        let total: u64 = components.iter().map(|&c| c as u64).sum();
        if total < worker_count as u64 {
            return Err(Error::InvalidParameter(
                "component sum below worker_count".into(),
            ));
        }
        Ok(SentenceVector {
            components,
            worker_count,
        })
    }

    pub fn components(&self) -> &[u32] {
        &self.components
    }

    pub fn worker_count(&self) -> u32 {
        self.worker_count
    }

    pub fn add(&mut self, annotation: &AnnotationVector) {
        for (c, a) in self.components.iter_mut().zip(annotation.components()) {
            *c += a;
        }
        self.worker_count += 1;
    }

    /// `self - annotation`, the leave-one-out vector of the other workers.
    pub fn without(&self, annotation: &AnnotationVector) -> Vec<u32> {
        self.components
            .iter()
            .zip(annotation.components())
            .map(|(c, a)| c.saturating_sub(*a))
            .collect()
    }

    /// Multiplies every count by `factor`, as if each worker were cloned.
    pub fn scaled(&self, factor: u32) -> SentenceVector {
        SentenceVector {
            components: self.components.iter().map(|c| c * factor).collect(),
            worker_count: self.worker_count * factor,
        }
    }

    pub fn is_zero(&self) -> bool {
        self.components.iter().all(|&c| c == 0)
    }

    /// Euclidean norm.
    pub fn norm(&self) -> f64 {
        let sq: u64 = self.components.iter().map(|&c| c as u64 * c as u64).sum();
        (sq as f64).sqrt()
    }

    /// `cos(V, e_index)`, or 0 for the zero vector. Computed on the vector
    /// divided by the gcd of its components, so integer multiples of a
    /// vector give bit-identical scores.
    pub fn unit_component(&self, index: usize) -> f64 {
        let divisor = self.components.iter().fold(0u32, |g, &c| gcd(g, c));
        if divisor == 0 {
            return 0.0;
        }
        let sq: u64 = self
            .components
            .iter()
            .map(|&c| (c / divisor) as u64 * (c / divisor) as u64)
            .sum();
        (self.components[index] / divisor) as f64 / (sq as f64).sqrt()
    }
}

fn gcd(mut a: u32, mut b: u32) -> u32 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

/// Component `i` is 1 iff option `i` was selected. Identifiers unknown to
/// the schema are ignored; validation rejects them upstream.
pub fn annotation_vector(judgment: &Judgment, schema: &RelationSchema) -> AnnotationVector {
    let mut v = vec![0u32; schema.dimension()];
    for option in &judgment.selections {
        if let Some(i) = schema.option_index(option) {
            v[i] = 1;
        }
    }
    AnnotationVector(v)
}

pub fn sentence_vector<'a>(
    judgments: impl IntoIterator<Item = &'a Judgment>,
    schema: &RelationSchema,
) -> Result<SentenceVector> {
    let mut v = SentenceVector::zeros(schema.dimension());
    let mut sentence = None;
    for j in judgments {
        sentence.get_or_insert_with(|| j.sentence_id.clone());
        v.add(&annotation_vector(j, schema));
    }
    if v.worker_count == 0 {
        return Err(Error::NoJudgments(sentence.unwrap_or_default()));
    }
    Ok(v)
}

/// Cosine similarity. Returns 0 when either vector has zero norm; use
/// [`cosine_flagged`] to observe that case.
pub fn cosine<T: Copy + Into<f64>>(u: &[T], v: &[T]) -> Result<f64> {
    cosine_flagged(u, v).map(|(c, _)| c)
}

/// Cosine similarity plus a flag that is set when a zero-norm input forced
/// the result to 0.
pub fn cosine_flagged<T: Copy + Into<f64>>(u: &[T], v: &[T]) -> Result<(f64, bool)> {
    if u.len() != v.len() {
        return Err(Error::DimensionMismatch {
            left: u.len(),
            right: v.len(),
        });
    }
    let mut dot = 0.0;
    let mut nu = 0.0;
    let mut nv = 0.0;
    for (&a, &b) in u.iter().zip(v) {
        let (a, b) = (a.into(), b.into());
        dot += a * b;
        nu += a * a;
        nv += b * b;
    }
    if nu == 0.0 || nv == 0.0 {
        return Ok((0.0, true));
    }
    Ok(((dot / (nu.sqrt() * nv.sqrt())).clamp(-1.0, 1.0), false))
}

/// Groups judgments by sentence, each group ordered by submission index
/// (worker id breaks ties).
pub fn group_by_sentence(judgments: &[Judgment]) -> BTreeMap<String, Vec<Judgment>> {
    let mut groups: BTreeMap<String, Vec<Judgment>> = BTreeMap::new();
    for j in judgments {
        groups.entry(j.sentence_id.clone()).or_default().push(j.clone());
    }
    for group in groups.values_mut() {
        group.sort_by(|a, b| {
            (a.submission_index, &a.worker_id).cmp(&(b.submission_index, &b.worker_id))
        });
    }
    groups
}

/// Sentence vector for every judged sentence.
pub fn sentence_vectors(
    groups: &BTreeMap<String, Vec<Judgment>>,
    schema: &RelationSchema,
) -> BTreeMap<String, SentenceVector> {
    groups
        .par_iter()
        .filter_map(|(id, js)| sentence_vector(js, schema).ok().map(|v| (id.clone(), v)))
        .collect::<Vec<_>>()
        .into_iter()
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn workers(sentence: &str, votes: &[(&str, usize)]) -> Vec<Judgment> {
        let mut out = Vec::new();
        for (option, n) in votes {
            for _ in 0..*n {
                let i = out.len() as u32;
                out.push(Judgment::new(format!("w{i}"), sentence, [*option], i));
            }
        }
        out
    }

    #[test]
    fn annotation_vector_marks_selected_options() {
        let schema = RelationSchema::medical();
        let single = annotation_vector(&Judgment::new("w", "s", ["cause"], 0), &schema);
        assert_eq!(single.components().iter().sum::<u32>(), 1);
        assert_eq!(single.components()[schema.option_index("cause").unwrap()], 1);

        let multi = annotation_vector(&Judgment::new("w", "s", ["cause", "symptom"], 0), &schema);
        assert_eq!(multi.components().iter().sum::<u32>(), 2);

        let none = annotation_vector(&Judgment::new("w", "s", ["none"], 0), &schema);
        assert_eq!(none.components()[schema.none_index()], 1);
        assert_eq!(none.dimension(), 14);
    }

    #[test]
    fn sentence_vector_sums_fifteen_workers() {
        let schema = RelationSchema::medical();
        let js = workers(
            "s1",
            &[("diagnose", 1), ("cause", 10), ("location", 1), ("symptom", 2), ("associated_with", 1)],
        );
        let v = sentence_vector(&js, &schema).unwrap();
        assert_eq!(v.components(), &[0, 0, 1, 10, 1, 2, 0, 0, 1, 0, 0, 0, 0, 0]);
        assert_eq!(v.worker_count(), 15);
    }

    #[test]
    fn sentence_vector_of_one_worker() {
        let schema = RelationSchema::medical();
        let j = Judgment::new("w", "s", ["treat"], 0);
        let v = sentence_vector([&j], &schema).unwrap();
        assert_eq!(v.components(), annotation_vector(&j, &schema).components());
        assert_eq!(v.worker_count(), 1);
    }

    #[test]
    fn empty_sentence_vector_is_an_error() {
        let schema = RelationSchema::medical();
        assert!(matches!(
            sentence_vector(std::iter::empty(), &schema),
            Err(Error::NoJudgments(_))
        ));
    }

    #[test]
    fn cosine_examples() {
        let v = [0u32, 0, 1, 10, 1, 2, 0, 0, 1, 0, 0, 0, 0, 0];
        assert!((cosine(&v, &v).unwrap() - 1.0).abs() < 1e-15);
        let mut cause = [0u32; 14];
        cause[3] = 1;
        let mut treat = [0u32; 14];
        treat[0] = 1;
        assert_eq!(cosine(&cause, &treat).unwrap(), 0.0);
        let c = cosine(&v, &cause).unwrap();
        assert!((c - 10.0 / 107f64.sqrt()).abs() < 1e-15);
        assert_eq!((c * 100.0).floor(), 96.0);
    }

    #[test]
    fn cosine_zero_norm_and_mismatch() {
        assert_eq!(cosine_flagged(&[0u32, 0], &[1, 0]).unwrap(), (0.0, true));
        assert!(matches!(
            cosine(&[1.0, 2.0], &[1.0]),
            Err(Error::DimensionMismatch { left: 2, right: 1 })
        ));
    }

    #[test]
    fn from_parts_checks_counts() {
        assert!(SentenceVector::from_parts(vec![3, 0], 2).is_err());
        assert!(SentenceVector::from_parts(vec![1, 0], 2).is_err());
        assert!(SentenceVector::from_parts(vec![2, 1], 2).is_ok());
    }
}
