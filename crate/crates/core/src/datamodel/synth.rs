//! Seeded synthetic datasets with a planted structure.
//!
//! * A `low_confidence_fraction` of videos get near-flat stream logits, so
//!   their fused prediction stays under the default gate; every other video
//!   has a clear stream peak (the true class with probability
//!   `p1_accuracy`, otherwise a random wrong class).
//! * Each class noun is the label of a planted attribute whose crop feature
//!   is a noisy class prototype. Low-confidence videos always show planted
//!   attributes; confident videos only with `attribute_visibility`, except
//!   the first video of each class, which trains and always shows one.
//! * Distractor detections carry unrelated words and noise features; person,
//!   tiny-box and below-threshold detections carry features of a wrong class.
//! * Embeddings are orthonormal per word, so a class label (mean of verb and
//!   noun) has cosine 1/√2 with its noun and 0 with every other word.

use std::collections::BTreeSet;

use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use super::{
    BBox, ClassVocabulary, Dataset, DetectionRecord, EmbeddingTable, FeatureVector, Split, Stream, StreamFeatures,
    VideoSample,
};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

const VERBS: [&str; 20] = [
    "Playing", "Riding", "Throwing", "Climbing", "Brushing", "Cutting", "Kicking", "Pouring", "Rowing", "Shooting",
    "Typing", "Walking", "Juggling", "Mixing", "Knitting", "Skiing", "Fencing", "Drumming", "Lifting", "Swinging",
];
const NOUNS: [&str; 20] = [
    "Guitar", "Horse", "Ball", "Rope", "Teeth", "Bread", "Drum", "Water", "Boat", "Bow", "Keyboard", "Dog", "Club",
    "Batter", "Yarn", "Slope", "Sabre", "Tabla", "Barbell", "Racket",
];
const DISTRACTORS: [&str; 12] = [
    "tree", "chair", "car", "window", "bottle", "lamp", "cup", "sign", "table", "bag", "curtain", "floor",
];

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticConfig {
    pub num_classes: usize,
    pub num_videos: usize,
    /// Probability that a video belongs to the test role.
    pub test_fraction: f64,
    pub low_confidence_fraction: f64,
    /// Probability that a confident video's stream peak is its true class.
    pub p1_accuracy: f64,
    pub stream_margin: f64,
    /// Half-width of the uniform noise on confident stream logits.
    pub stream_noise: f64,
    /// Half-width of the uniform noise on low-confidence stream logits.
    pub flat_noise: f64,
    pub attribute_visibility: f64,
    pub feature_dim: usize,
    pub prototype_norm: f64,
    pub feature_noise: f64,
    pub embedding_dim: usize,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            num_classes: 20,
            num_videos: 1000,
            test_fraction: 0.5,
            low_confidence_fraction: 0.3,
            p1_accuracy: 0.9,
            stream_margin: 3.0,
            stream_noise: 0.5,
            flat_noise: 0.05,
            attribute_visibility: 0.25,
            feature_dim: 32,
            prototype_norm: 8.0,
            feature_noise: 0.5,
            embedding_dim: 64,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Invalid(m));
        if self.num_classes < 2 {
            return bad(format!("num_classes must be >= 2, got {}", self.num_classes));
        }
        if self.num_classes > VERBS.len() * NOUNS.len() {
            return bad(format!("num_classes must be <= {}", VERBS.len() * NOUNS.len()));
        }
        if self.num_videos < self.num_classes {
            return bad(format!(
                "num_videos ({}) must be >= num_classes ({})",
                self.num_videos, self.num_classes
            ));
        }
        for (name, v) in [
            ("test_fraction", self.test_fraction),
            ("low_confidence_fraction", self.low_confidence_fraction),
            ("p1_accuracy", self.p1_accuracy),
            ("attribute_visibility", self.attribute_visibility),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return bad(format!("{name} must be in [0, 1], got {v}"));
            }
        }
        for (name, v) in [
            ("stream_margin", self.stream_margin),
            ("stream_noise", self.stream_noise),
            ("flat_noise", self.flat_noise),
            ("prototype_norm", self.prototype_norm),
            ("feature_noise", self.feature_noise),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return bad(format!("{name} must be finite and >= 0, got {v}"));
            }
        }
        if self.stream_margin <= 2.0 * self.stream_noise {
            return bad("stream_margin must exceed twice stream_noise".into());
        }
        if self.feature_dim == 0 {
            return bad("feature_dim must be positive".into());
        }
        let words = self.num_classes.min(VERBS.len()) + self.num_classes.min(NOUNS.len()) + DISTRACTORS.len() + 1;
        if self.embedding_dim < words {
            return bad(format!("embedding_dim must be >= {words} to keep word vectors orthogonal"));
        }
        Ok(())
    }
}

/// Label of class `i`: unique verb/noun pairing for up to 400 classes.
fn class_parts(i: usize) -> (&'static str, &'static str) {
    let n = VERBS.len();
    (VERBS[i % n], NOUNS[(i % n + i / n) % n])
}

fn random_unit(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-6 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

/// Orthonormal vectors by Gram-Schmidt over seeded Gaussian draws.
fn orthonormal(rng: &mut ChaCha8Rng, count: usize, dim: usize) -> Vec<Vec<f64>> {
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(count);
    while basis.len() < count {
        let mut v = random_unit(rng, dim);
        for _ in 0..2 {
            for b in &basis {
                let p: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
                v.iter_mut().zip(b).for_each(|(x, y)| *x -= p * y);
            }
        }
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-6 {
            basis.push(v.into_iter().map(|x| x / n).collect());
        }
    }
    basis
}

fn to_t<T: Scalar>(v: &[f64]) -> Vec<T> {
    v.iter().map(|&x| T::lit(x)).collect()
}

struct Builder<'a> {
    cfg: &'a SyntheticConfig,
    rng: ChaCha8Rng,
    prototypes: Vec<Vec<f64>>,
    noise: Normal<f64>,
}

impl Builder<'_> {
    fn crop_feature(&mut self, class: Option<usize>) -> Vec<f64> {
        let dim = self.cfg.feature_dim;
        let base = match class {
            Some(c) => self.prototypes[c].clone(),
            None => vec![0.0; dim],
        };
        base.into_iter()
            .map(|b| {
                let n: f64 = self.noise.sample(&mut self.rng);
                b + n
            })
            .collect()
    }

    fn wrong_class(&mut self, label: usize) -> usize {
        let c = self.cfg.num_classes;
        (label + self.rng.random_range(1..c)) % c
    }

    fn stream_logits(&mut self, peak: Option<usize>) -> Vec<f64> {
        let c = self.cfg.num_classes;
        match peak {
            Some(p) => {
                let b = self.cfg.stream_noise;
                let mut v: Vec<f64> = (0..c).map(|_| self.rng.random_range(-b..=b)).collect();
                v[p] += self.cfg.stream_margin;
                v
            }
            None => {
                let b = self.cfg.flat_noise;
                (0..c).map(|_| self.rng.random_range(-b..=b)).collect()
            }
        }
    }

    fn bbox(&mut self, tiny: bool) -> [f64; 4] {
        let x = f64::from(self.rng.random_range(0u32..320));
        let y = f64::from(self.rng.random_range(0u32..240));
        let (w, h) = if tiny {
            let short = f64::from(self.rng.random_range(4u32..20));
            let long = f64::from(self.rng.random_range(4u32..120));
            if self.rng.random_bool(0.5) {
                (short, long)
            } else {
                (long, short)
            }
        } else {
            (
                f64::from(self.rng.random_range(20u32..200)),
                f64::from(self.rng.random_range(20u32..200)),
            )
        };
        [x, y, w, h]
    }

    fn confidence(&mut self, below_threshold: bool) -> f64 {
        let raw: f64 = if below_threshold {
            self.rng.random_range(0.0..0.0195)
        } else {
            self.rng.random_range(0.02..=1.0)
        };
        (raw * 1e4).round() / 1e4
    }
}

/// Generates a dataset as a pure function of `(cfg, seed)`.
pub fn gen_synthetic<T: Scalar>(cfg: &SyntheticConfig, seed: u64) -> Result<Dataset<T>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let c = cfg.num_classes;

    let labels: Vec<String> = (0..c).map(|i| {
        let (v, n) = class_parts(i);
        format!("{v}{n}")
    })
    .collect();
    let vocab = ClassVocabulary::new(labels)?;

    // embeddings: verbs, nouns, distractors, person
    let mut words: BTreeSet<String> = BTreeSet::new();
    let mut ordered: Vec<String> = Vec::new();
    for i in 0..c {
        for w in vocab.words(i)? {
            if words.insert(w.clone()) {
                ordered.push(w);
            }
        }
    }
    for w in DISTRACTORS.iter().copied().chain(["person"]) {
        if words.insert(w.to_string()) {
            ordered.push(w.to_string());
        }
    }
    let basis = orthonormal(&mut rng, ordered.len(), cfg.embedding_dim);
    let mut embeddings = EmbeddingTable::new(cfg.embedding_dim)?;
    for (w, v) in ordered.iter().zip(&basis) {
        embeddings.insert(w, to_t(v))?;
    }

    let prototypes = (0..c)
        .map(|_| random_unit(&mut rng, cfg.feature_dim).into_iter().map(|x| x * cfg.prototype_norm).collect())
        .collect();
    let noise = Normal::new(0.0, cfg.feature_noise.max(f64::MIN_POSITIVE))
        .map_err(|e| Error::Invalid(format!("feature noise: {e}")))?;
    let mut b = Builder {
        cfg,
        rng,
        prototypes,
        noise,
    };

    let n = cfg.num_videos;
    let low_count = (cfg.low_confidence_fraction * n as f64).round() as usize;
    let mut low = vec![false; n];
    for i in sample_indices(&mut b.rng, n, low_count) {
        low[i] = true;
    }

    let mut samples = Vec::with_capacity(n);
    let mut features = Vec::with_capacity(2 * n);
    let mut detections = Vec::new();
    for (i, &is_low) in low.iter().enumerate() {
        let id = format!("v{i:05}");
        let label = i % c;
        // the first video of each class always trains and shows its attribute
        let split = if i >= c && b.rng.random_bool(cfg.test_fraction) {
            Split::Test
        } else {
            Split::Train
        };
        let split_index = b.rng.random_range(1..=3u8);
        samples.push(VideoSample::new(id.clone(), split, split_index, label)?);

        let peak = if is_low {
            None
        } else if b.rng.random_bool(cfg.p1_accuracy) {
            Some(label)
        } else {
            Some(b.wrong_class(label))
        };
        for stream in [Stream::Spatial, Stream::Temporal] {
            let v = b.stream_logits(peak);
            features.push(StreamFeatures {
                video_id: id.clone(),
                stream,
                vector: FeatureVector::new(to_t(&v))?,
            });
        }

        let frame = b.rng.random_range(0u64..64);
        let noun = class_parts(label).1.to_lowercase();
        let planted = if is_low || i < c || b.rng.random_bool(cfg.attribute_visibility) {
            b.rng.random_range(1..=2usize)
        } else {
            0
        };
        let distractors = b.rng.random_range(0..=2usize);
        let junk = b.rng.random_range(0..=2usize);

        let mut recs: Vec<(Vec<String>, f64, [f64; 4], Vec<f64>)> = Vec::new();
        for _ in 0..planted {
            let f = b.crop_feature(Some(label));
            let bb = b.bbox(false);
            let conf = b.confidence(false);
            recs.push((vec![noun.clone()], conf, bb, f));
        }
        for _ in 0..distractors {
            let w = DISTRACTORS[b.rng.random_range(0..DISTRACTORS.len())].to_string();
            let f = b.crop_feature(None);
            let bb = b.bbox(false);
            let conf = b.confidence(false);
            recs.push((vec![w], conf, bb, f));
        }
        for _ in 0..junk {
            let wrong = b.wrong_class(label);
            let f = b.crop_feature(Some(wrong));
            let wrong_noun = class_parts(wrong).1.to_lowercase();
            let rec = match b.rng.random_range(0..3u8) {
                0 => {
                    let (bb, conf) = (b.bbox(false), b.confidence(false));
                    (vec!["person".to_string()], conf, bb, f)
                }
                1 => {
                    let (bb, conf) = (b.bbox(true), b.confidence(false));
                    (vec![wrong_noun], conf, bb, f)
                }
                _ => {
                    let (bb, conf) = (b.bbox(false), b.confidence(true));
                    (vec![wrong_noun], conf, bb, f)
                }
            };
            recs.push(rec);
        }
        // detector output order is arbitrary
        for k in (1..recs.len()).rev() {
            let j = b.rng.random_range(0..=k);
            recs.swap(k, j);
        }
        for (words, conf, bb, f) in recs {
            detections.push(DetectionRecord::new(
                id.clone(),
                frame,
                words,
                T::lit(conf),
                BBox::new(T::lit(bb[0]), T::lit(bb[1]), T::lit(bb[2]), T::lit(bb[3]))?,
                Some(FeatureVector::new(to_t(&f))?),
            )?);
        }
    }

    let ds = Dataset {
        vocab,
        samples,
        features,
        detections,
        embeddings,
    };
    ds.validate()?;
    Ok(ds)
}
