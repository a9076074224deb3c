//! Two-stream fusion producing the 3D-CNN pipeline prediction.
//!
//! The revised scheme weights and sums the two fc outputs and applies one
//! softmax; the original scheme applies softmax per stream and mixes the
//! resulting distributions.

use std::str::FromStr;

use crate::error::{Error, Result};
use crate::scalar::{all_finite, Scalar};

/// Non-negative vector summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityDistribution<T> {
    probs: Vec<T>,
}

impl<T: Scalar> ProbabilityDistribution<T> {
    pub fn new(probs: Vec<T>) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::Empty("probability distribution".into()));
        }
        if !all_finite(&probs) || probs.iter().any(|p| *p < T::zero()) {
            return Err(Error::Invalid("probabilities must be finite and non-negative".into()));
        }
        let sum: T = probs.iter().copied().sum();
        if (sum - T::one()).abs() > Self::sum_tolerance(probs.len()) {
            return Err(Error::Invalid(format!("probabilities sum to {sum}, not 1")));
        }
        Ok(Self { probs })
    }

    fn sum_tolerance(n: usize) -> T {
        T::lit(1e-9).max(T::epsilon() * T::lit(16.0 * n as f64))
    }

    pub fn uniform(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::Empty("probability distribution".into()));
        }
        let p = T::one() / T::lit(n as f64);
        Ok(Self { probs: vec![p; n] })
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn as_slice(&self) -> &[T] {
        &self.probs
    }

    pub fn into_inner(self) -> Vec<T> {
        self.probs
    }

    /// Largest probability, the prediction confidence.
    pub fn max(&self) -> T {
        self.probs.iter().copied().fold(T::neg_infinity(), T::max)
    }

    /// Index of the largest probability; ties go to the lowest index.
    pub fn argmax(&self) -> usize {
        argmax(&self.probs)
    }
}

pub(crate) fn argmax<T: Scalar>(v: &[T]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate().skip(1) {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

impl<T> AsRef<[T]> for ProbabilityDistribution<T> {
    fn as_ref(&self) -> &[T] {
        &self.probs
    }
}

/// Numerically stable softmax (max-subtracted).
pub fn softmax<T: Scalar>(logits: &[T]) -> Result<ProbabilityDistribution<T>> {
    if logits.is_empty() {
        return Err(Error::Empty("softmax input".into()));
    }
    if !all_finite(logits) {
        return Err(Error::Numeric("softmax input has non-finite entries".into()));
    }
    Ok(ProbabilityDistribution {
        probs: softmax_unchecked(logits),
    })
}

pub(crate) fn softmax_unchecked<T: Scalar>(logits: &[T]) -> Vec<T> {
    let m = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = logits.iter().map(|&z| (z - m).exp()).collect();
    let total: T = exps.iter().copied().sum();
    exps.into_iter().map(|e| e / total).collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FusionWeights<T> {
    spatial: T,
    temporal: T,
}

impl<T: Scalar> FusionWeights<T> {
    pub fn new(spatial: T, temporal: T) -> Result<Self> {
        if !all_finite(&[spatial, temporal]) || spatial < T::zero() || temporal < T::zero() {
            return Err(Error::Invalid(format!("fusion weights must be finite and >= 0, got ({spatial}, {temporal})")));
        }
        if spatial + temporal <= T::zero() {
            return Err(Error::Invalid("fusion weights must not both be zero".into()));
        }
        Ok(Self { spatial, temporal })
    }

    pub fn spatial(&self) -> T {
        self.spatial
    }

    pub fn temporal(&self) -> T {
        self.temporal
    }
}

impl<T: Scalar> Default for FusionWeights<T> {
    /// Spatial 0.6, temporal 0.4.
    fn default() -> Self {
        Self {
            spatial: T::lit(0.6),
            temporal: T::lit(0.4),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FusionKind {
    /// Weighted sum of fc outputs, then softmax.
    #[default]
    Revised,
    /// Softmax per stream, then weighted (renormalized) sum.
    Original,
}

impl FusionKind {
    pub fn as_str(self) -> &'static str {
        match self {
            FusionKind::Revised => "revised",
            FusionKind::Original => "original",
        }
    }
}

impl FromStr for FusionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "revised" => Ok(FusionKind::Revised),
            "original" => Ok(FusionKind::Original),
            other => Err(Error::Invalid(format!("unknown fusion {other:?}"))),
        }
    }
}

fn check_pair<T>(spatial: &[T], temporal: &[T]) -> Result<()> {
    if spatial.len() != temporal.len() {
        return Err(Error::dim("stream fusion", spatial.len(), temporal.len()));
    }
    Ok(())
}

/// `softmax(w_s * f_s + w_t * f_t)`.
pub fn fuse_revised<T: Scalar>(spatial: &[T], temporal: &[T], w: &FusionWeights<T>) -> Result<ProbabilityDistribution<T>> {
    check_pair(spatial, temporal)?;
    let mixed: Vec<T> = spatial
        .iter()
        .zip(temporal)
        .map(|(&s, &t)| w.spatial * s + w.temporal * t)
        .collect();
    softmax(&mixed)
}

/// `normalize(w_s * softmax(f_s) + w_t * softmax(f_t))`.
pub fn fuse_original<T: Scalar>(spatial: &[T], temporal: &[T], w: &FusionWeights<T>) -> Result<ProbabilityDistribution<T>> {
    check_pair(spatial, temporal)?;
    let ps = softmax(spatial)?;
    let pt = softmax(temporal)?;
    // normalizing the weights up front keeps the mixture a distribution
    let total = w.spatial + w.temporal;
    let (ws, wt) = (w.spatial / total, w.temporal / total);
    Ok(ProbabilityDistribution {
        probs: ps.probs.iter().zip(&pt.probs).map(|(&a, &b)| ws * a + wt * b).collect(),
    })
}

pub fn fuse<T: Scalar>(
    kind: FusionKind,
    spatial: &[T],
    temporal: &[T],
    w: &FusionWeights<T>,
) -> Result<ProbabilityDistribution<T>> {
    match kind {
        FusionKind::Revised => fuse_revised(spatial, temporal, w),
        FusionKind::Original => fuse_original(spatial, temporal, w),
    }
}
