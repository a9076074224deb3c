//! Trained attribute-pipeline models and how they turn a video's attribute
//! features into the prediction `p2`.

use std::fmt;
use std::str::FromStr;

use crate::datamodel::LinearModel;
use crate::encoding::{aggregate_attribute_predictions, mean_pool, netvlad_forward, NetVladParams};
use crate::error::{Error, Result};
use crate::fusion::{softmax, ProbabilityDistribution};
use crate::scalar::Scalar;

/// How attribute features become a video-level prediction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Strategy {
    /// Mean-pool crop features, then a linear classifier.
    MeanPool,
    /// NetVLAD-aggregate crop features, then a linear classifier.
    NetVlad,
    /// Classify each relevance-filtered crop, then average the predictions.
    #[default]
    AttrClassifier,
}

impl Strategy {
    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::MeanPool => "mean-pool",
            Strategy::NetVlad => "netvlad",
            Strategy::AttrClassifier => "attr-classifier",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean-pool" => Ok(Strategy::MeanPool),
            "netvlad" => Ok(Strategy::NetVlad),
            "attr-classifier" => Ok(Strategy::AttrClassifier),
            other => Err(Error::Invalid(format!("unknown strategy {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttributeModel<T> {
    strategy: Strategy,
    linear: LinearModel<T>,
    netvlad: Option<NetVladParams<T>>,
}

impl<T: Scalar> AttributeModel<T> {
    pub fn new(strategy: Strategy, linear: LinearModel<T>, netvlad: Option<NetVladParams<T>>) -> Result<Self> {
        match (strategy, &netvlad) {
            (Strategy::NetVlad, None) => return Err(Error::Invalid("netvlad strategy needs NetVLAD parameters".into())),
            (Strategy::NetVlad, Some(p)) if p.output_dim() != linear.input_dim() => {
                return Err(Error::dim("classifier input after NetVLAD", p.output_dim(), linear.input_dim()))
            }
            (Strategy::MeanPool | Strategy::AttrClassifier, Some(_)) => {
                return Err(Error::Invalid(format!("{strategy} strategy takes no NetVLAD parameters")))
            }
            _ => {}
        }
        Ok(Self {
            strategy,
            linear,
            netvlad,
        })
    }

    pub fn strategy(&self) -> Strategy {
        self.strategy
    }

    pub fn linear(&self) -> &LinearModel<T> {
        &self.linear
    }

    pub fn netvlad(&self) -> Option<&NetVladParams<T>> {
        self.netvlad.as_ref()
    }

    pub fn num_classes(&self) -> usize {
        self.linear.num_classes()
    }

    /// Dimension of the per-crop features the model consumes.
    pub fn feature_dim(&self) -> usize {
        match &self.netvlad {
            Some(p) => p.dim(),
            None => self.linear.input_dim(),
        }
    }

    /// Class distribution from one video's attribute features. Errors on an
    /// empty feature list.
    pub fn predict<F: AsRef<[T]>>(&self, features: &[F]) -> Result<ProbabilityDistribution<T>> {
        match self.strategy {
            Strategy::MeanPool => softmax(&self.linear.logits(&mean_pool(features)?.vector)?),
            Strategy::NetVlad => {
                let params = self.netvlad.as_ref().expect("checked in constructor");
                softmax(&self.linear.logits(&netvlad_forward(features, params)?.vector)?)
            }
            Strategy::AttrClassifier => {
                let per_attr = features
                    .iter()
                    .map(|f| softmax(&self.linear.logits(f.as_ref())?))
                    .collect::<Result<Vec<_>>>()?;
                aggregate_attribute_predictions(&per_attr)
            }
        }
    }

    /// As [`Self::predict`], but a video without usable attributes gets the
    /// uniform distribution.
    pub fn predict_or_uniform<F: AsRef<[T]>>(&self, features: &[F]) -> Result<ProbabilityDistribution<T>> {
        if features.is_empty() {
            ProbabilityDistribution::uniform(self.num_classes())
        } else {
            self.predict(features)
        }
    }
}
