//! Attribute candidate filtering.
//!
//! Each filter is an independent per-record predicate, so the filters are
//! idempotent, commute, and always return an order-preserving subsequence.

use std::collections::BTreeSet;

use crate::datamodel::{DetectionRecord, EmbeddingTable};
use crate::error::{Error, Result};
use crate::scalar::{all_finite, dot, Scalar};

#[derive(Debug, Clone, PartialEq)]
pub struct FilterConfig<T> {
    pub min_confidence: T,
    pub min_side_px: u32,
    /// Lowercase words marking a detection as a person.
    pub person_words: BTreeSet<String>,
    pub t_sim: T,
}

impl<T: Scalar> Default for FilterConfig<T> {
    fn default() -> Self {
        Self {
            min_confidence: T::lit(0.02),
            min_side_px: 20,
            person_words: BTreeSet::from(["person".to_string()]),
            t_sim: T::lit(0.5),
        }
    }
}

impl<T: Scalar> FilterConfig<T> {
    pub fn validate(&self) -> Result<()> {
        if !(self.min_confidence >= T::zero() && self.min_confidence <= T::one()) {
            return Err(Error::Invalid(format!("min_confidence {} outside [0, 1]", self.min_confidence)));
        }
        if !(self.t_sim >= -T::one() && self.t_sim <= T::one()) {
            return Err(Error::Invalid(format!("t_sim {} outside [-1, 1]", self.t_sim)));
        }
        Ok(())
    }
}

pub fn passes_confidence<T: Scalar>(d: &DetectionRecord<T>, min_confidence: T) -> bool {
    d.confidence >= min_confidence
}

/// Boxes whose shorter side is below `min_side_px` are dropped.
pub fn passes_bbox<T: Scalar>(d: &DetectionRecord<T>, min_side_px: u32) -> bool {
    d.bbox.min_side() >= T::lit(f64::from(min_side_px))
}

pub fn is_person<T>(d: &DetectionRecord<T>, person_words: &BTreeSet<String>) -> bool {
    d.label_words
        .iter()
        .any(|w| person_words.contains(&w.to_lowercase()))
}

fn keep<T: Clone>(dets: &[DetectionRecord<T>], pred: impl Fn(&DetectionRecord<T>) -> bool) -> Vec<DetectionRecord<T>> {
    dets.iter().filter(|d| pred(d)).cloned().collect()
}

pub fn filter_by_confidence<T: Scalar>(dets: &[DetectionRecord<T>], min_confidence: T) -> Vec<DetectionRecord<T>> {
    keep(dets, |d| passes_confidence(d, min_confidence))
}

pub fn filter_by_bbox<T: Scalar>(dets: &[DetectionRecord<T>], min_side_px: u32) -> Vec<DetectionRecord<T>> {
    keep(dets, |d| passes_bbox(d, min_side_px))
}

pub fn filter_person<T: Scalar>(dets: &[DetectionRecord<T>], person_words: &BTreeSet<String>) -> Vec<DetectionRecord<T>> {
    keep(dets, |d| !is_person(d, person_words))
}

/// Confidence, box size and person removal; the filters usable without
/// knowing a video's label.
pub fn passes_label_free<T: Scalar>(d: &DetectionRecord<T>, cfg: &FilterConfig<T>) -> bool {
    passes_confidence(d, cfg.min_confidence) && passes_bbox(d, cfg.min_side_px) && !is_person(d, &cfg.person_words)
}

pub fn filter_label_free<T: Scalar>(dets: &[DetectionRecord<T>], cfg: &FilterConfig<T>) -> Vec<DetectionRecord<T>> {
    keep(dets, |d| passes_label_free(d, cfg))
}

/// Mean embedding of the in-table words. Unknown words are skipped.
pub fn label_vector<T: Scalar, S: AsRef<str>>(words: &[S], table: &EmbeddingTable<T>) -> Result<Vec<T>> {
    let mut acc = vec![T::zero(); table.dim()];
    let mut found = 0usize;
    for w in words {
        match table.get(w.as_ref()) {
            Some(v) => {
                found += 1;
                acc.iter_mut().zip(v).for_each(|(a, &x)| *a += x);
            }
            None => log::warn!("word {:?} not in embedding table", w.as_ref()),
        }
    }
    if found == 0 {
        let joined: Vec<&str> = words.iter().map(AsRef::as_ref).collect();
        return Err(Error::Invalid(format!("no word of {joined:?} is in the embedding table")));
    }
    let n = T::lit(found as f64);
    acc.iter_mut().for_each(|a| *a /= n);
    Ok(acc)
}

/// `u·v / (‖u‖‖v‖)`, clamped to [-1, 1].
pub fn cosine_sim<T: Scalar>(u: &[T], v: &[T]) -> Result<T> {
    if u.len() != v.len() {
        return Err(Error::dim("cosine similarity", u.len(), v.len()));
    }
    if !all_finite(u) || !all_finite(v) {
        return Err(Error::Numeric("cosine similarity of non-finite vector".into()));
    }
    let (uu, vv) = (dot(u, u), dot(v, v));
    if uu == T::zero() || vv == T::zero() {
        return Err(Error::Invalid("cosine similarity of a zero vector".into()));
    }
    let c = dot(u, v) / (uu * vv).sqrt();
    Ok(c.max(-T::one()).min(T::one()))
}

/// Keeps detections whose label embedding is at least `t_sim` cosine-similar
/// to the video label's embedding. Detections with no usable embedding are
/// discarded.
pub fn filter_by_relevance<T: Scalar, S: AsRef<str>>(
    dets: &[DetectionRecord<T>],
    video_label_words: &[S],
    table: &EmbeddingTable<T>,
    t_sim: T,
) -> Result<Vec<DetectionRecord<T>>> {
    let target = label_vector(video_label_words, table)?;
    if target.iter().all(|x| *x == T::zero()) {
        return Err(Error::Invalid("video label embeds to the zero vector".into()));
    }
    Ok(keep(dets, |d| relevant(d, &target, table, t_sim)))
}

fn relevant<T: Scalar>(d: &DetectionRecord<T>, target: &[T], table: &EmbeddingTable<T>, t_sim: T) -> bool {
    let Ok(s) = label_vector(&d.label_words, table) else {
        log::warn!("discarding detection {:?} in {}: no embedding", d.label_words, d.video_id);
        return false;
    };
    match cosine_sim(target, &s) {
        Ok(c) => c >= t_sim,
        Err(_) => {
            log::warn!("discarding detection {:?} in {}: zero embedding", d.label_words, d.video_id);
            false
        }
    }
}
