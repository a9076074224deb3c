//! Line-oriented text formats.
//!
//! Numbers are written with the shortest decimal form that parses back to the
//! same bits, so every save/load pair is exact. Blank lines are ignored by all
//! readers; every other line must be a complete record.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{
    BBox, ClassVocabulary, DetectionRecord, EmbeddingTable, FeatureVector, LinearModel, Split, Stream,
    StreamFeatures, VideoSample,
};
use crate::encoding::NetVladParams;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::model::{AttributeModel, Strategy};

pub const VOCAB_HEADER: &str = "a3d-vocab v1";
pub const SAMPLES_HEADER: &str = "a3d-samples v1";
pub const MODEL_HEADER: &str = "a3d-model v1";

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

struct Lines<'a> {
    path: &'a Path,
    inner: std::iter::Enumerate<std::str::Lines<'a>>,
}

impl<'a> Lines<'a> {
    fn new(path: &'a Path, text: &'a str) -> Self {
        Self {
            path,
            inner: text.lines().enumerate(),
        }
    }

    fn err(&self, line: usize, msg: impl Into<String>) -> Error {
        Error::Parse {
            path: self.path.to_path_buf(),
            line,
            msg: msg.into(),
        }
    }

    /// Next non-blank line or an error naming what was expected.
    fn expect(&mut self, what: &str) -> Result<(usize, &'a str)> {
        match self.next() {
            Some(l) => Ok(l),
            None => Err(Error::Parse {
                path: self.path.to_path_buf(),
                line: 0,
                msg: format!("unexpected end of file, expected {what}"),
            }),
        }
    }
}

impl<'a> Iterator for Lines<'a> {
    type Item = (usize, &'a str);

    fn next(&mut self) -> Option<Self::Item> {
        self.inner
            .by_ref()
            .map(|(i, l)| (i + 1, l.trim_end_matches('\r')))
            .find(|(_, l)| !l.trim().is_empty())
    }
}

/// Attaches file/line context to a record-level validation error.
fn at(path: &Path, line: usize, e: Error) -> Error {
    match e {
        Error::Parse { .. } | Error::Io { .. } => e,
        other => Error::Parse {
            path: path.to_path_buf(),
            line,
            msg: other.to_string(),
        },
    }
}

fn parse_num<T: Scalar>(s: &str) -> std::result::Result<T, String> {
    let v: T = s.trim().parse().map_err(|_| format!("not a number: {s:?}"))?;
    if !v.is_finite() {
        return Err(format!("non-finite value: {s:?}"));
    }
    Ok(v)
}

fn parse_csv<T: Scalar>(s: &str) -> std::result::Result<Vec<T>, String> {
    s.split(',').map(parse_num).collect()
}

fn push_csv<T: Scalar>(out: &mut String, values: &[T]) {
    for (i, v) in values.iter().enumerate() {
        if i > 0 {
            out.push(',');
        }
        let _ = write!(out, "{v}");
    }
}

// ---------------------------------------------------------------- features

pub fn parse_features<T: Scalar>(path: &Path, text: &str) -> Result<Vec<StreamFeatures<T>>> {
    let mut lines = Lines::new(path, text);
    let mut out: Vec<StreamFeatures<T>> = Vec::new();
    let mut seen = HashSet::new();
    while let Some((n, line)) = lines.next() {
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(lines.err(n, format!("expected 3 tab-separated fields, found {}", fields.len())));
        }
        let stream: Stream = fields[1].parse().map_err(|e| at(path, n, e))?;
        let values = parse_csv(fields[2]).map_err(|m| lines.err(n, m))?;
        let vector = FeatureVector::new(values).map_err(|e| at(path, n, e))?;
        if let Some(first) = out.first() {
            if first.vector.dim() != vector.dim() {
                return Err(lines.err(
                    n,
                    format!("dimension {} differs from first record's {}", vector.dim(), first.vector.dim()),
                ));
            }
        }
        if fields[0].is_empty() || fields[0].contains(char::is_whitespace) {
            return Err(lines.err(n, format!("malformed video id {:?}", fields[0])));
        }
        if !seen.insert((fields[0].to_string(), stream)) {
            return Err(lines.err(n, format!("duplicate record for ({}, {stream})", fields[0])));
        }
        out.push(StreamFeatures {
            video_id: fields[0].to_string(),
            stream,
            vector,
        });
    }
    Ok(out)
}

pub fn format_features<T: Scalar>(records: &[StreamFeatures<T>]) -> String {
    let mut out = String::new();
    for r in records {
        let _ = write!(out, "{}\t{}\t", r.video_id, r.stream);
        push_csv(&mut out, r.vector.as_slice());
        out.push('\n');
    }
    out
}

pub fn load_features<T: Scalar>(path: &Path) -> Result<Vec<StreamFeatures<T>>> {
    parse_features(path, &read_text(path)?)
}

pub fn save_features<T: Scalar>(path: &Path, records: &[StreamFeatures<T>]) -> Result<()> {
    write_text(path, &format_features(records))
}

// -------------------------------------------------------------- detections

pub fn parse_detections<T: Scalar>(path: &Path, text: &str) -> Result<Vec<DetectionRecord<T>>> {
    let mut lines = Lines::new(path, text);
    let mut out = Vec::new();
    let mut feature_dim: Option<usize> = None;
    while let Some((n, line)) = lines.next() {
        let fields: Vec<&str> = line.split('\t').collect();
        if !(5..=6).contains(&fields.len()) {
            return Err(lines.err(n, format!("expected 5 or 6 tab-separated fields, found {}", fields.len())));
        }
        let frame: u64 = fields[1]
            .parse()
            .map_err(|_| lines.err(n, format!("bad frame index {:?}", fields[1])))?;
        let words: Vec<String> = fields[2].split_whitespace().map(str::to_string).collect();
        let confidence: T = parse_num(fields[3]).map_err(|m| lines.err(n, m))?;
        let b: Vec<T> = parse_csv(fields[4]).map_err(|m| lines.err(n, m))?;
        if b.len() != 4 {
            return Err(lines.err(n, format!("bbox needs 4 values, found {}", b.len())));
        }
        let bbox = BBox::new(b[0], b[1], b[2], b[3]).map_err(|e| at(path, n, e))?;
        let feature = match fields.get(5) {
            Some(s) => {
                let v = FeatureVector::new(parse_csv(s).map_err(|m| lines.err(n, m))?).map_err(|e| at(path, n, e))?;
                match feature_dim {
                    Some(d) if d != v.dim() => {
                        return Err(lines.err(n, format!("feature dimension {} differs from earlier {d}", v.dim())))
                    }
                    _ => feature_dim = Some(v.dim()),
                }
                Some(v)
            }
            None => None,
        };
        let rec = DetectionRecord::new(fields[0], frame, words, confidence, bbox, feature).map_err(|e| at(path, n, e))?;
        out.push(rec);
    }
    Ok(out)
}

pub fn format_detections<T: Scalar>(records: &[DetectionRecord<T>]) -> String {
    let mut out = String::new();
    for r in records {
        let _ = write!(out, "{}\t{}\t{}\t{}\t", r.video_id, r.frame_index, r.label_words.join(" "), r.confidence);
        push_csv(&mut out, &[r.bbox.x, r.bbox.y, r.bbox.width, r.bbox.height]);
        if let Some(f) = &r.feature {
            out.push('\t');
            push_csv(&mut out, f.as_slice());
        }
        out.push('\n');
    }
    out
}

pub fn load_detections<T: Scalar>(path: &Path) -> Result<Vec<DetectionRecord<T>>> {
    parse_detections(path, &read_text(path)?)
}

pub fn save_detections<T: Scalar>(path: &Path, records: &[DetectionRecord<T>]) -> Result<()> {
    write_text(path, &format_detections(records))
}

// -------------------------------------------------------------- embeddings

pub fn parse_embeddings<T: Scalar>(path: &Path, text: &str) -> Result<EmbeddingTable<T>> {
    let mut lines = Lines::new(path, text);
    let mut table: Option<EmbeddingTable<T>> = None;
    while let Some((n, line)) = lines.next() {
        let mut parts = line.split_whitespace();
        let word = parts.next().ok_or_else(|| lines.err(n, "missing word"))?;
        let values: Vec<T> = parts
            .map(parse_num)
            .collect::<std::result::Result<_, _>>()
            .map_err(|m| lines.err(n, m))?;
        if values.is_empty() {
            return Err(lines.err(n, format!("word {word:?} has no vector")));
        }
        let t = match &mut table {
            Some(t) => t,
            None => table.insert(EmbeddingTable::new(values.len()).map_err(|e| at(path, n, e))?),
        };
        if values.len() != t.dim() {
            return Err(lines.err(n, format!("ragged embedding: dimension {} but table has {}", values.len(), t.dim())));
        }
        if t.insert(word, values).map_err(|e| at(path, n, e))? {
            log::warn!("{}:{n}: duplicate embedding word {word:?}, keeping the last occurrence", path.display());
        }
    }
    table.ok_or_else(|| Error::Empty(format!("embedding file {}", path.display())))
}

pub fn format_embeddings<T: Scalar>(table: &EmbeddingTable<T>) -> String {
    let mut out = String::new();
    for w in table.words() {
        out.push_str(w);
        for v in table.get(w).unwrap_or_default() {
            let _ = write!(out, " {v}");
        }
        out.push('\n');
    }
    out
}

pub fn load_embeddings<T: Scalar>(path: &Path) -> Result<EmbeddingTable<T>> {
    parse_embeddings(path, &read_text(path)?)
}

pub fn save_embeddings<T: Scalar>(path: &Path, table: &EmbeddingTable<T>) -> Result<()> {
    write_text(path, &format_embeddings(table))
}

// -------------------------------------------------------------- vocabulary

fn check_header(lines: &mut Lines<'_>, header: &str) -> Result<()> {
    let (n, first) = lines.expect(header)?;
    if first.trim() != header {
        return Err(lines.err(n, format!("expected header {header:?}, found {first:?}")));
    }
    Ok(())
}

pub fn parse_vocab(path: &Path, text: &str) -> Result<ClassVocabulary> {
    let mut lines = Lines::new(path, text);
    check_header(&mut lines, VOCAB_HEADER)?;
    let labels: Vec<&str> = lines.map(|(_, l)| l.trim()).collect();
    ClassVocabulary::new(labels).map_err(|e| at(path, 0, e))
}

pub fn format_vocab(vocab: &ClassVocabulary) -> String {
    let mut out = format!("{VOCAB_HEADER}\n");
    for l in vocab.labels() {
        out.push_str(l);
        out.push('\n');
    }
    out
}

pub fn load_vocab(path: &Path) -> Result<ClassVocabulary> {
    parse_vocab(path, &read_text(path)?)
}

pub fn save_vocab(path: &Path, vocab: &ClassVocabulary) -> Result<()> {
    write_text(path, &format_vocab(vocab))
}

// ----------------------------------------------------------------- samples

pub fn parse_samples(path: &Path, text: &str) -> Result<Vec<VideoSample>> {
    let mut lines = Lines::new(path, text);
    check_header(&mut lines, SAMPLES_HEADER)?;
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    while let Some((n, line)) = lines.next() {
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 4 {
            return Err(lines.err(n, format!("expected 4 tab-separated fields, found {}", f.len())));
        }
        let split: Split = f[1].parse().map_err(|e| at(path, n, e))?;
        let idx: u8 = f[2].parse().map_err(|_| lines.err(n, format!("bad split index {:?}", f[2])))?;
        let label: usize = f[3].parse().map_err(|_| lines.err(n, format!("bad label index {:?}", f[3])))?;
        let s = VideoSample::new(f[0], split, idx, label).map_err(|e| at(path, n, e))?;
        if !seen.insert(s.video_id.clone()) {
            return Err(lines.err(n, format!("duplicate video id {}", s.video_id)));
        }
        out.push(s);
    }
    Ok(out)
}

pub fn format_samples(samples: &[VideoSample]) -> String {
    let mut out = format!("{SAMPLES_HEADER}\n");
    for s in samples {
        let _ = writeln!(out, "{}\t{}\t{}\t{}", s.video_id, s.split.as_str(), s.split_index, s.true_label);
    }
    out
}

pub fn load_samples(path: &Path) -> Result<Vec<VideoSample>> {
    parse_samples(path, &read_text(path)?)
}

pub fn save_samples(path: &Path, samples: &[VideoSample]) -> Result<()> {
    write_text(path, &format_samples(samples))
}

// ------------------------------------------------- keyed vectors (preds etc)

/// `key<TAB>tag<TAB>v1,…,vN` records: representations and predictions.
#[derive(Debug, Clone, PartialEq)]
pub struct TaggedVector<T> {
    pub key: String,
    pub tag: String,
    pub values: Vec<T>,
}

pub fn parse_tagged<T: Scalar>(path: &Path, text: &str) -> Result<Vec<TaggedVector<T>>> {
    let mut lines = Lines::new(path, text);
    let mut out: Vec<TaggedVector<T>> = Vec::new();
    while let Some((n, line)) = lines.next() {
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 3 {
            return Err(lines.err(n, format!("expected 3 tab-separated fields, found {}", f.len())));
        }
        let values: Vec<T> = parse_csv(f[2]).map_err(|m| lines.err(n, m))?;
        if let Some(first) = out.first() {
            if first.values.len() != values.len() {
                return Err(lines.err(n, format!("dimension {} differs from first record's {}", values.len(), first.values.len())));
            }
        }
        out.push(TaggedVector {
            key: f[0].to_string(),
            tag: f[1].to_string(),
            values,
        });
    }
    Ok(out)
}

pub fn format_tagged<T: Scalar>(records: &[TaggedVector<T>]) -> String {
    let mut out = String::new();
    for r in records {
        let _ = write!(out, "{}\t{}\t", r.key, r.tag);
        push_csv(&mut out, &r.values);
        out.push('\n');
    }
    out
}

pub fn load_tagged<T: Scalar>(path: &Path) -> Result<Vec<TaggedVector<T>>> {
    parse_tagged(path, &read_text(path)?)
}

pub fn save_tagged<T: Scalar>(path: &Path, records: &[TaggedVector<T>]) -> Result<()> {
    write_text(path, &format_tagged(records))
}

// ------------------------------------------------------------------ models

fn format_linear<T: Scalar>(out: &mut String, m: &LinearModel<T>) {
    let _ = writeln!(out, "linear {} {}", m.num_classes(), m.input_dim());
    for c in 0..m.num_classes() {
        push_csv(out, m.row(c));
        out.push('\n');
    }
    push_csv(out, m.biases());
    out.push('\n');
}

fn format_netvlad<T: Scalar>(out: &mut String, p: &NetVladParams<T>) {
    let (k, d) = (p.clusters(), p.dim());
    let _ = writeln!(out, "netvlad {k} {d}");
    for rows in [p.centers(), p.assign_weights()] {
        for r in rows.chunks(d) {
            push_csv(out, r);
            out.push('\n');
        }
    }
    push_csv(out, p.assign_biases());
    out.push('\n');
}

fn parse_section_header(lines: &mut Lines<'_>, name: &str) -> Result<(usize, usize)> {
    let (n, l) = lines.expect(name)?;
    let f: Vec<&str> = l.split_whitespace().collect();
    if f.len() != 3 || f[0] != name {
        return Err(lines.err(n, format!("expected `{name} <rows> <cols>`, found {l:?}")));
    }
    let rows = f[1].parse().map_err(|_| lines.err(n, "bad row count"))?;
    let cols = f[2].parse().map_err(|_| lines.err(n, "bad column count"))?;
    Ok((rows, cols))
}

fn parse_rows<T: Scalar>(lines: &mut Lines<'_>, rows: usize, cols: usize, what: &str) -> Result<Vec<T>> {
    let mut out = Vec::with_capacity(rows * cols);
    for _ in 0..rows {
        let (n, l) = lines.expect(what)?;
        let v: Vec<T> = parse_csv(l).map_err(|m| lines.err(n, m))?;
        if v.len() != cols {
            return Err(lines.err(n, format!("{what}: expected {cols} values, found {}", v.len())));
        }
        out.extend(v);
    }
    Ok(out)
}

pub fn parse_model<T: Scalar>(path: &Path, text: &str) -> Result<AttributeModel<T>> {
    let mut lines = Lines::new(path, text);
    check_header(&mut lines, MODEL_HEADER)?;
    let (n, l) = lines.expect("strategy")?;
    let strategy: Strategy = l
        .strip_prefix("strategy ")
        .ok_or_else(|| lines.err(n, "expected `strategy <name>`"))?
        .trim()
        .parse()
        .map_err(|e| at(path, n, e))?;
    let (c, d) = parse_section_header(&mut lines, "linear")?;
    let w = parse_rows(&mut lines, c, d, "weight row")?;
    let b = parse_rows(&mut lines, 1, c, "bias row")?;
    let linear = LinearModel::from_parts(c, d, w, b).map_err(|e| at(path, n, e))?;
    let netvlad = if strategy == Strategy::NetVlad {
        let (k, dd) = parse_section_header(&mut lines, "netvlad")?;
        let centers = parse_rows(&mut lines, k, dd, "center row")?;
        let weights = parse_rows(&mut lines, k, dd, "assignment row")?;
        let biases = parse_rows(&mut lines, 1, k, "assignment biases")?;
        Some(NetVladParams::from_parts(k, dd, centers, weights, biases).map_err(|e| at(path, n, e))?)
    } else {
        None
    };
    if let Some((n, _)) = lines.next() {
        return Err(lines.err(n, "trailing content after model"));
    }
    AttributeModel::new(strategy, linear, netvlad).map_err(|e| at(path, 0, e))
}

pub fn format_model<T: Scalar>(model: &AttributeModel<T>) -> String {
    let mut out = format!("{MODEL_HEADER}\nstrategy {}\n", model.strategy());
    format_linear(&mut out, model.linear());
    if let Some(p) = model.netvlad() {
        format_netvlad(&mut out, p);
    }
    out
}

pub fn load_model<T: Scalar>(path: &Path) -> Result<AttributeModel<T>> {
    parse_model(path, &read_text(path)?)
}

pub fn save_model<T: Scalar>(path: &Path, model: &AttributeModel<T>) -> Result<()> {
    write_text(path, &format_model(model))
}
