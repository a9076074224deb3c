//! Core records and their validation rules.
//!
//! Every constructor here enforces the record's invariants, so a value that
//! exists is a valid one. Loaders in [`io`] go through the same constructors
//! and attach file/line context to any rejection.

mod dataset;
pub mod io;
mod label;
pub mod synth;

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::scalar::{all_finite, Scalar};

pub use dataset::Dataset;
pub use label::parse_label;

/// Ordered class labels with a stable index for each.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassVocabulary {
    labels: Vec<String>,
    index: HashMap<String, usize>,
}

impl ClassVocabulary {
    pub fn new<S: Into<String>>(labels: impl IntoIterator<Item = S>) -> Result<Self> {
        let labels: Vec<String> = labels.into_iter().map(Into::into).collect();
        if labels.is_empty() {
            return Err(Error::Empty("class vocabulary".into()));
        }
        let mut index = HashMap::with_capacity(labels.len());
        for (i, label) in labels.iter().enumerate() {
            if label.trim().is_empty() || label.contains(['\t', '\n', '\r']) {
                return Err(Error::Invalid(format!("class label {i} is blank or contains control whitespace")));
            }
            if index.insert(label.clone(), i).is_some() {
                return Err(Error::Invalid(format!("duplicate class label {label:?}")));
            }
        }
        Ok(Self { labels, index })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn label(&self, index: usize) -> Option<&str> {
        self.labels.get(index).map(String::as_str)
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.index.get(label).copied()
    }

    /// Lowercase words of the label at `index`.
    pub fn words(&self, index: usize) -> Result<Vec<String>> {
        let label = self
            .label(index)
            .ok_or_else(|| Error::Invalid(format!("class index {index} out of range")))?;
        parse_label(label)
    }
}

/// Non-empty vector of finite values.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector<T> {
    values: Vec<T>,
}

impl<T: Scalar> FeatureVector<T> {
    pub fn new(values: Vec<T>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Empty("feature vector".into()));
        }
        if !all_finite(&values) {
            return Err(Error::Numeric("feature vector has non-finite entries".into()));
        }
        Ok(Self { values })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn as_slice(&self) -> &[T] {
        &self.values
    }

    pub fn into_inner(self) -> Vec<T> {
        self.values
    }
}

impl<T> AsRef<[T]> for FeatureVector<T> {
    fn as_ref(&self) -> &[T] {
        &self.values
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Stream {
    Spatial,
    Temporal,
}

impl Stream {
    pub fn as_str(self) -> &'static str {
        match self {
            Stream::Spatial => "spatial",
            Stream::Temporal => "temporal",
        }
    }
}

impl fmt::Display for Stream {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Stream {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "spatial" => Ok(Stream::Spatial),
            "temporal" => Ok(Stream::Temporal),
            other => Err(Error::Invalid(format!("unknown stream {other:?}"))),
        }
    }
}

/// Last fully-connected layer output of one stream for one video.
#[derive(Debug, Clone, PartialEq)]
pub struct StreamFeatures<T> {
    pub video_id: String,
    pub stream: Stream,
    pub vector: FeatureVector<T>,
}

/// Axis-aligned box in pixels; width and height strictly positive.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BBox<T> {
    pub x: T,
    pub y: T,
    pub width: T,
    pub height: T,
}

impl<T: Scalar> BBox<T> {
    pub fn new(x: T, y: T, width: T, height: T) -> Result<Self> {
        if !all_finite(&[x, y, width, height]) {
            return Err(Error::Numeric("bounding box has non-finite fields".into()));
        }
        if width <= T::zero() || height <= T::zero() {
            return Err(Error::Invalid(format!(
                "bounding box width and height must be positive, got {width}x{height}"
            )));
        }
        Ok(Self { x, y, width, height })
    }

    pub fn min_side(&self) -> T {
        self.width.min(self.height)
    }
}

/// One detected attribute candidate.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectionRecord<T> {
    pub video_id: String,
    pub frame_index: u64,
    pub label_words: Vec<String>,
    pub confidence: T,
    pub bbox: BBox<T>,
    pub feature: Option<FeatureVector<T>>,
}

impl<T: Scalar> DetectionRecord<T> {
    pub fn new(
        video_id: impl Into<String>,
        frame_index: u64,
        label_words: Vec<String>,
        confidence: T,
        bbox: BBox<T>,
        feature: Option<FeatureVector<T>>,
    ) -> Result<Self> {
        let video_id = video_id.into();
        check_id(&video_id)?;
        if label_words.is_empty() {
            return Err(Error::Empty("detection label".into()));
        }
        if label_words
            .iter()
            .any(|w| w.is_empty() || w.contains(char::is_whitespace))
        {
            return Err(Error::Invalid(format!("malformed label words {label_words:?}")));
        }
        if !(confidence >= T::zero() && confidence <= T::one()) {
            return Err(Error::Invalid(format!("confidence {confidence} outside [0, 1]")));
        }
        Ok(Self {
            video_id,
            frame_index,
            label_words,
            confidence,
            bbox,
            feature,
        })
    }
}

/// Word to vector lookup standing in for a pretrained word embedding model.
///
/// Keys are stored lowercased; lookups lowercase their argument.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable<T> {
    dim: usize,
    order: Vec<String>,
    entries: HashMap<String, Vec<T>>,
}

impl<T: Scalar> EmbeddingTable<T> {
    pub fn new(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Invalid("embedding dimension must be positive".into()));
        }
        Ok(Self {
            dim,
            order: Vec::new(),
            entries: HashMap::new(),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    /// Inserts or replaces a word. Returns `true` when an existing entry was
    /// overwritten.
    pub fn insert(&mut self, word: &str, vector: Vec<T>) -> Result<bool> {
        if word.is_empty() || word.contains(char::is_whitespace) {
            return Err(Error::Invalid(format!("malformed embedding word {word:?}")));
        }
        if vector.len() != self.dim {
            return Err(Error::dim(format!("embedding for {word:?}"), self.dim, vector.len()));
        }
        if !all_finite(&vector) {
            return Err(Error::Numeric(format!("embedding for {word:?} has non-finite entries")));
        }
        let key = word.to_lowercase();
        let replaced = self.entries.insert(key.clone(), vector).is_some();
        if !replaced {
            self.order.push(key);
        }
        Ok(replaced)
    }

    pub fn get(&self, word: &str) -> Option<&[T]> {
        self.entries.get(&word.to_lowercase()).map(Vec::as_slice)
    }

    /// Words in first-insertion order.
    pub fn words(&self) -> impl Iterator<Item = &str> {
        self.order.iter().map(String::as_str)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => Err(Error::Invalid(format!("unknown split role {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VideoSample {
    pub video_id: String,
    pub split: Split,
    /// Which of the three standard partitions, 1..=3.
    pub split_index: u8,
    pub true_label: usize,
}

impl VideoSample {
    pub fn new(video_id: impl Into<String>, split: Split, split_index: u8, true_label: usize) -> Result<Self> {
        let video_id = video_id.into();
        check_id(&video_id)?;
        if !(1..=3).contains(&split_index) {
            return Err(Error::Invalid(format!("split index {split_index} not in 1..=3")));
        }
        Ok(Self {
            video_id,
            split,
            split_index,
            true_label,
        })
    }
}

/// Fully connected layer `W x + b`, weights stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel<T> {
    num_classes: usize,
    input_dim: usize,
    pub(crate) weights: Vec<T>,
    pub(crate) biases: Vec<T>,
}

impl<T: Scalar> LinearModel<T> {
    pub fn zeros(num_classes: usize, input_dim: usize) -> Result<Self> {
        Self::from_parts(
            num_classes,
            input_dim,
            vec![T::zero(); num_classes * input_dim],
            vec![T::zero(); num_classes],
        )
    }

    pub fn from_parts(num_classes: usize, input_dim: usize, weights: Vec<T>, biases: Vec<T>) -> Result<Self> {
        if num_classes == 0 || input_dim == 0 {
            return Err(Error::Invalid("linear model needs positive dimensions".into()));
        }
        if weights.len() != num_classes * input_dim {
            return Err(Error::dim("linear model weights", num_classes * input_dim, weights.len()));
        }
        if biases.len() != num_classes {
            return Err(Error::dim("linear model biases", num_classes, biases.len()));
        }
        if !all_finite(&weights) || !all_finite(&biases) {
            return Err(Error::Numeric("linear model has non-finite parameters".into()));
        }
        Ok(Self {
            num_classes,
            input_dim,
            weights,
            biases,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn weights(&self) -> &[T] {
        &self.weights
    }

    pub fn biases(&self) -> &[T] {
        &self.biases
    }

    pub fn row(&self, class: usize) -> &[T] {
        &self.weights[class * self.input_dim..(class + 1) * self.input_dim]
    }

    pub fn logits(&self, x: &[T]) -> Result<Vec<T>> {
        if x.len() != self.input_dim {
            return Err(Error::dim("linear model input", self.input_dim, x.len()));
        }
        Ok((0..self.num_classes)
            .map(|c| crate::scalar::dot(self.row(c), x) + self.biases[c])
            .collect())
    }
}

fn check_id(id: &str) -> Result<()> {
    if id.is_empty() || id.contains(char::is_whitespace) {
        return Err(Error::Invalid(format!("malformed video id {id:?}")));
    }
    Ok(())
}
