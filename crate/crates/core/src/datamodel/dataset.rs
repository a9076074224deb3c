use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::path::Path;

use super::io;
use super::{ClassVocabulary, DetectionRecord, EmbeddingTable, Stream, StreamFeatures, VideoSample};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Everything a pipeline run consumes, loaded and cross-checked.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset<T> {
    pub vocab: ClassVocabulary,
    pub samples: Vec<VideoSample>,
    pub features: Vec<StreamFeatures<T>>,
    pub detections: Vec<DetectionRecord<T>>,
    pub embeddings: EmbeddingTable<T>,
}

impl<T: Scalar> Dataset<T> {
    pub const VOCAB_FILE: &'static str = "vocab.txt";
    pub const SAMPLES_FILE: &'static str = "samples.tsv";
    pub const FEATURES_FILE: &'static str = "features.tsv";
    pub const DETECTIONS_FILE: &'static str = "detections.tsv";
    pub const EMBEDDINGS_FILE: &'static str = "embeddings.txt";

    /// Checks cross-file consistency: labels in range, one spatial and one
    /// temporal record per sample, stream dimension equal to the vocabulary
    /// size, detection features of one dimension.
    pub fn validate(&self) -> Result<()> {
        let c = self.vocab.len();
        let ids: HashSet<&str> = self.samples.iter().map(|s| s.video_id.as_str()).collect();
        for s in &self.samples {
            if s.true_label >= c {
                return Err(Error::Invalid(format!(
                    "sample {} has label {} but vocabulary has {c} classes",
                    s.video_id, s.true_label
                )));
            }
        }
        let mut per_video: HashMap<&str, (bool, bool)> = HashMap::new();
        for f in &self.features {
            if f.vector.dim() != c {
                return Err(Error::dim(format!("stream features of {}", f.video_id), c, f.vector.dim()));
            }
            let e = per_video.entry(f.video_id.as_str()).or_default();
            let slot = match f.stream {
                Stream::Spatial => &mut e.0,
                Stream::Temporal => &mut e.1,
            };
            if *slot {
                return Err(Error::Invalid(format!("duplicate {} record for {}", f.stream, f.video_id)));
            }
            *slot = true;
        }
        for id in &ids {
            if per_video.get(id) != Some(&(true, true)) {
                return Err(Error::Invalid(format!("video {id} lacks a spatial or temporal feature record")));
            }
        }
        let mut dim = None;
        for d in &self.detections {
            if let Some(f) = &d.feature {
                match dim {
                    Some(k) if k != f.dim() => return Err(Error::dim("detection features", k, f.dim())),
                    _ => dim = Some(f.dim()),
                }
            }
        }
        Ok(())
    }

    pub fn save_dir(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        io::save_vocab(&dir.join(Self::VOCAB_FILE), &self.vocab)?;
        io::save_samples(&dir.join(Self::SAMPLES_FILE), &self.samples)?;
        io::save_features(&dir.join(Self::FEATURES_FILE), &self.features)?;
        io::save_detections(&dir.join(Self::DETECTIONS_FILE), &self.detections)?;
        io::save_embeddings(&dir.join(Self::EMBEDDINGS_FILE), &self.embeddings)?;
        Ok(())
    }

    pub fn load_dir(dir: &Path) -> Result<Self> {
        let ds = Self {
            vocab: io::load_vocab(&dir.join(Self::VOCAB_FILE))?,
            samples: io::load_samples(&dir.join(Self::SAMPLES_FILE))?,
            features: io::load_features(&dir.join(Self::FEATURES_FILE))?,
            detections: io::load_detections(&dir.join(Self::DETECTIONS_FILE))?,
            embeddings: io::load_embeddings(&dir.join(Self::EMBEDDINGS_FILE))?,
        };
        ds.validate()?;
        Ok(ds)
    }

    /// (spatial, temporal) feature slices for a video.
    pub fn stream_pair(&self, video_id: &str) -> Option<(&[T], &[T])> {
        let mut s = None;
        let mut t = None;
        for f in self.features.iter().filter(|f| f.video_id == video_id) {
            match f.stream {
                Stream::Spatial => s = Some(f.vector.as_slice()),
                Stream::Temporal => t = Some(f.vector.as_slice()),
            }
        }
        Some((s?, t?))
    }

    pub fn stream_index(&self) -> HashMap<&str, (&[T], &[T])> {
        let mut partial: HashMap<&str, (Option<&[T]>, Option<&[T]>)> = HashMap::new();
        for f in &self.features {
            let e = partial.entry(f.video_id.as_str()).or_default();
            match f.stream {
                Stream::Spatial => e.0 = Some(f.vector.as_slice()),
                Stream::Temporal => e.1 = Some(f.vector.as_slice()),
            }
        }
        partial
            .into_iter()
            .filter_map(|(k, (s, t))| Some((k, (s?, t?))))
            .collect()
    }

    /// Detections grouped by video, file order preserved within each group.
    pub fn detections_by_video(&self) -> BTreeMap<&str, Vec<&DetectionRecord<T>>> {
        group_by_video(&self.detections)
    }
}

pub(crate) fn group_by_video<T>(dets: &[DetectionRecord<T>]) -> BTreeMap<&str, Vec<&DetectionRecord<T>>> {
    let mut out: BTreeMap<&str, Vec<&DetectionRecord<T>>> = BTreeMap::new();
    for d in dets {
        out.entry(d.video_id.as_str()).or_default().push(d);
    }
    out
}
