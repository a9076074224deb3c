//! Confidence-gated joint prediction and accuracy reporting.

use std::collections::{BTreeMap, HashMap};

use crate::attributes::{passes_label_free, FilterConfig};
use crate::datamodel::{Dataset, Split, VideoSample};
use crate::error::{Error, Result};
use crate::fusion::{fuse, FusionKind, FusionWeights, ProbabilityDistribution};
use crate::model::AttributeModel;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GateConfig<T> {
    threshold: T,
}

impl<T: Scalar> GateConfig<T> {
    pub fn new(threshold: T) -> Result<Self> {
        if !(threshold >= T::zero() && threshold <= T::one()) {
            return Err(Error::Invalid(format!("gate threshold {threshold} outside [0, 1]")));
        }
        Ok(Self { threshold })
    }

    pub fn threshold(&self) -> T {
        self.threshold
    }
}

impl<T: Scalar> Default for GateConfig<T> {
    fn default() -> Self {
        Self { threshold: T::lit(0.1) }
    }
}

/// 1 for strictly positive input, else 0.
pub fn indicator<T: Scalar>(x: T) -> u8 {
    u8::from(x > T::zero())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Route {
    /// The 3D-CNN pipeline was confident enough.
    P1,
    /// Fell back to the attribute pipeline.
    P2,
}

/// Which input the gate selects. Confidence is `max(p1)`; when it equals the
/// threshold both indicators are zero and the attribute pipeline is used.
pub fn gate_route<T: Scalar>(p1: &ProbabilityDistribution<T>, gate: &GateConfig<T>) -> Route {
    let conf = p1.max();
    let keep_p1 = indicator(conf - gate.threshold);
    let take_p2 = indicator(gate.threshold - conf);
    if keep_p1 == 1 {
        Route::P1
    } else {
        if take_p2 == 0 {
            log::debug!("gate tie at confidence {conf}, using attribute prediction");
        }
        Route::P2
    }
}

/// `p1 · I(max p1 − T) + p2 · I(T − max p1)` with binary indicators; always
/// returns exactly one of the inputs.
pub fn joint_predict<T: Scalar>(
    p1: &ProbabilityDistribution<T>,
    p2: &ProbabilityDistribution<T>,
    gate: &GateConfig<T>,
) -> Result<ProbabilityDistribution<T>> {
    if p1.len() != p2.len() {
        return Err(Error::dim("joint prediction", p1.len(), p2.len()));
    }
    Ok(match gate_route(p1, gate) {
        Route::P1 => p1.clone(),
        Route::P2 => p2.clone(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ClassTally {
    pub correct: usize,
    pub total: usize,
}

impl ClassTally {
    pub fn accuracy(&self) -> Option<f64> {
        (self.total > 0).then(|| self.correct as f64 / self.total as f64)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    /// Accuracy per split index, for splits with at least one sample.
    pub per_split: BTreeMap<u8, f64>,
    /// Arithmetic mean of `per_split`.
    pub mean: f64,
    pub per_class: Vec<ClassTally>,
    pub num_samples: usize,
    /// Fraction of samples the gate sent to the attribute pipeline; only set
    /// for joint predictions.
    pub routed_to_p2: Option<f64>,
}

/// Top-1 accuracy of `predictions` (argmax, ties to lowest index) against
/// each sample's label.
pub fn evaluate<T: Scalar>(
    samples: &[&VideoSample],
    predictions: &HashMap<&str, &ProbabilityDistribution<T>>,
) -> Result<EvalReport> {
    if samples.is_empty() {
        return Err(Error::Empty("evaluation samples".into()));
    }
    let mut split_tally: BTreeMap<u8, ClassTally> = BTreeMap::new();
    let mut per_class: Vec<ClassTally> = Vec::new();
    for s in samples {
        let p = predictions
            .get(s.video_id.as_str())
            .ok_or_else(|| Error::Invalid(format!("no prediction for video {}", s.video_id)))?;
        if s.true_label >= p.len() {
            return Err(Error::Invalid(format!(
                "label {} of {} outside a {}-class prediction",
                s.true_label,
                s.video_id,
                p.len()
            )));
        }
        if per_class.len() < p.len() {
            per_class.resize(p.len(), ClassTally::default());
        }
        let hit = usize::from(p.argmax() == s.true_label);
        let t = split_tally.entry(s.split_index).or_default();
        t.correct += hit;
        t.total += 1;
        per_class[s.true_label].correct += hit;
        per_class[s.true_label].total += 1;
    }
    let per_split: BTreeMap<u8, f64> = split_tally
        .into_iter()
        .map(|(k, t)| (k, t.correct as f64 / t.total as f64))
        .collect();
    let mean = per_split.values().sum::<f64>() / per_split.len() as f64;
    Ok(EvalReport {
        per_split,
        mean,
        per_class,
        num_samples: samples.len(),
        routed_to_p2: None,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig<T> {
    pub fusion: FusionKind,
    pub weights: FusionWeights<T>,
    pub filter: FilterConfig<T>,
    pub gate: GateConfig<T>,
}

impl<T: Scalar> Default for PipelineConfig<T> {
    fn default() -> Self {
        Self {
            fusion: FusionKind::Revised,
            weights: FusionWeights::default(),
            filter: FilterConfig::default(),
            gate: GateConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VideoPrediction<T> {
    pub video_id: String,
    pub p1: ProbabilityDistribution<T>,
    pub p2: ProbabilityDistribution<T>,
    pub joint: ProbabilityDistribution<T>,
    pub route: Route,
}

/// p1, p2 and the gated joint prediction for each of `samples`.
///
/// Only label-free filters are applied to detections; a video with no
/// surviving feature-bearing detection gets a uniform p2.
pub fn predict_videos<T: Scalar>(
    ds: &Dataset<T>,
    samples: &[&VideoSample],
    cfg: &PipelineConfig<T>,
    model: &AttributeModel<T>,
) -> Result<Vec<VideoPrediction<T>>> {
    cfg.filter.validate()?;
    if model.num_classes() != ds.vocab.len() {
        return Err(Error::dim("attribute model classes", ds.vocab.len(), model.num_classes()));
    }
    let streams = ds.stream_index();
    let dets = ds.detections_by_video();
    samples
        .iter()
        .map(|s| {
            let (fs, ft) = streams
                .get(s.video_id.as_str())
                .ok_or_else(|| Error::Invalid(format!("no stream features for video {}", s.video_id)))?;
            let p1 = fuse(cfg.fusion, fs, ft, &cfg.weights)?;
            let feats: Vec<&[T]> = dets
                .get(s.video_id.as_str())
                .map(|v| {
                    v.iter()
                        .filter(|d| passes_label_free(d, &cfg.filter))
                        .filter_map(|d| d.feature.as_ref().map(|f| f.as_slice()))
                        .collect()
                })
                .unwrap_or_default();
            if let Some(f) = feats.first() {
                if f.len() != model.feature_dim() {
                    return Err(Error::dim("attribute feature", model.feature_dim(), f.len()));
                }
            }
            let p2 = model.predict_or_uniform(&feats)?;
            let route = gate_route(&p1, &cfg.gate);
            let joint = joint_predict(&p1, &p2, &cfg.gate)?;
            Ok(VideoPrediction {
                video_id: s.video_id.clone(),
                p1,
                p2,
                joint,
                route,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineReport {
    pub p1: EvalReport,
    pub p2: EvalReport,
    pub joint: EvalReport,
}

/// Evaluates p1-only, p2-only and joint predictions on the test split.
pub fn run_pipeline<T: Scalar>(
    ds: &Dataset<T>,
    cfg: &PipelineConfig<T>,
    model: &AttributeModel<T>,
) -> Result<PipelineReport> {
    let test: Vec<&VideoSample> = ds.samples.iter().filter(|s| s.split == Split::Test).collect();
    if test.is_empty() {
        return Err(Error::Empty("test split".into()));
    }
    let preds = predict_videos(ds, &test, cfg, model)?;
    report_from_predictions(&test, &preds)
}

pub fn report_from_predictions<T: Scalar>(
    samples: &[&VideoSample],
    preds: &[VideoPrediction<T>],
) -> Result<PipelineReport> {
    let pick = |f: fn(&VideoPrediction<T>) -> &ProbabilityDistribution<T>| -> HashMap<&str, &ProbabilityDistribution<T>> {
        preds.iter().map(|p| (p.video_id.as_str(), f(p))).collect()
    };
    let mut joint = evaluate(samples, &pick(|p| &p.joint))?;
    let routed = preds.iter().filter(|p| p.route == Route::P2).count();
    joint.routed_to_p2 = Some(routed as f64 / preds.len().max(1) as f64);
    Ok(PipelineReport {
        p1: evaluate(samples, &pick(|p| &p.p1))?,
        p2: evaluate(samples, &pick(|p| &p.p2))?,
        joint,
    })
}
