//! Fixed-size video representations built from a variable number of
//! attribute features: mean pooling, NetVLAD, and averaging of per-attribute
//! class predictions.

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::error::{Error, Result};
use crate::fusion::ProbabilityDistribution;
use crate::scalar::{all_finite, dot, l2_norm, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EncoderTag {
    MeanPool,
    NetVlad,
    PredAgg,
}

impl EncoderTag {
    pub fn as_str(self) -> &'static str {
        match self {
            EncoderTag::MeanPool => "mean-pool",
            EncoderTag::NetVlad => "netvlad",
            EncoderTag::PredAgg => "pred-agg",
        }
    }
}

impl fmt::Display for EncoderTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EncoderTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean-pool" => Ok(EncoderTag::MeanPool),
            "netvlad" => Ok(EncoderTag::NetVlad),
            "pred-agg" => Ok(EncoderTag::PredAgg),
            other => Err(Error::Invalid(format!("unknown encoder {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VideoRepresentation<T> {
    pub vector: Vec<T>,
    pub encoder: EncoderTag,
}

fn check_uniform<T: Scalar, F: AsRef<[T]>>(features: &[F], what: &str) -> Result<usize> {
    let first = features.first().ok_or_else(|| Error::Empty(what.into()))?;
    let d = first.as_ref().len();
    if d == 0 {
        return Err(Error::Empty(format!("{what} element")));
    }
    for f in features {
        let f = f.as_ref();
        if f.len() != d {
            return Err(Error::dim(what, d, f.len()));
        }
        if !all_finite(f) {
            return Err(Error::Numeric(format!("{what} has non-finite entries")));
        }
    }
    Ok(d)
}

fn elementwise_mean<T: Scalar, F: AsRef<[T]>>(items: &[F], d: usize) -> Vec<T> {
    let mut acc = vec![T::zero(); d];
    for f in items {
        acc.iter_mut().zip(f.as_ref()).for_each(|(a, &x)| *a += x);
    }
    let n = T::lit(items.len() as f64);
    acc.iter_mut().for_each(|a| *a /= n);
    acc
}

pub fn mean_pool<T: Scalar, F: AsRef<[T]>>(features: &[F]) -> Result<VideoRepresentation<T>> {
    let d = check_uniform(features, "mean-pool input")?;
    Ok(VideoRepresentation {
        vector: elementwise_mean(features, d),
        encoder: EncoderTag::MeanPool,
    })
}

/// Elementwise mean of per-attribute class distributions.
pub fn aggregate_attribute_predictions<T: Scalar>(
    per_attr: &[ProbabilityDistribution<T>],
) -> Result<ProbabilityDistribution<T>> {
    let d = check_uniform(per_attr, "attribute predictions")?;
    ProbabilityDistribution::new(elementwise_mean(per_attr, d))
}

/// Cluster centers `c_k` and soft-assignment parameters `w_k`, `b_k`,
/// each row-major with `clusters` rows.
#[derive(Debug, Clone, PartialEq)]
pub struct NetVladParams<T> {
    clusters: usize,
    dim: usize,
    pub(crate) centers: Vec<T>,
    pub(crate) assign_weights: Vec<T>,
    pub(crate) assign_biases: Vec<T>,
}

impl<T: Scalar> NetVladParams<T> {
    pub fn from_parts(
        clusters: usize,
        dim: usize,
        centers: Vec<T>,
        assign_weights: Vec<T>,
        assign_biases: Vec<T>,
    ) -> Result<Self> {
        if clusters == 0 || dim == 0 {
            return Err(Error::Invalid("NetVLAD needs at least one cluster and dimension".into()));
        }
        if centers.len() != clusters * dim {
            return Err(Error::dim("NetVLAD centers", clusters * dim, centers.len()));
        }
        if assign_weights.len() != clusters * dim {
            return Err(Error::dim("NetVLAD assignment weights", clusters * dim, assign_weights.len()));
        }
        if assign_biases.len() != clusters {
            return Err(Error::dim("NetVLAD assignment biases", clusters, assign_biases.len()));
        }
        if !all_finite(&centers) || !all_finite(&assign_weights) || !all_finite(&assign_biases) {
            return Err(Error::Numeric("NetVLAD parameters must be finite".into()));
        }
        Ok(Self {
            clusters,
            dim,
            centers,
            assign_weights,
            assign_biases,
        })
    }

    /// Center-derived initialization: `w_k = 2α c_k`, `b_k = -α ‖c_k‖²`, which
    /// makes the assignment logits equal `-α ‖x - c_k‖²` up to a per-input
    /// constant.
    pub fn from_centers(clusters: usize, dim: usize, centers: Vec<T>, alpha: T) -> Result<Self> {
        if centers.len() != clusters * dim || dim == 0 {
            return Err(Error::dim("NetVLAD centers", clusters * dim, centers.len()));
        }
        let two = T::lit(2.0);
        let weights = centers.iter().map(|&c| two * alpha * c).collect();
        let biases = centers.chunks(dim).map(|c| -alpha * dot(c, c)).collect();
        Self::from_parts(clusters, dim, centers, weights, biases)
    }

    /// Picks `clusters` descriptors as centers (without replacement when
    /// enough are available) and applies [`Self::from_centers`].
    pub fn init_from_features<F: AsRef<[T]>, R: Rng + ?Sized>(
        features: &[F],
        clusters: usize,
        alpha: T,
        rng: &mut R,
    ) -> Result<Self> {
        let dim = check_uniform(features, "NetVLAD initialization features")?;
        if clusters == 0 {
            return Err(Error::Invalid("NetVLAD needs at least one cluster".into()));
        }
        let picks: Vec<usize> = if features.len() >= clusters {
            rand::seq::index::sample(rng, features.len(), clusters).into_vec()
        } else {
            (0..clusters).map(|_| rng.random_range(0..features.len())).collect()
        };
        let centers = picks
            .into_iter()
            .flat_map(|i| features[i].as_ref().iter().copied())
            .collect();
        Self::from_centers(clusters, dim, centers, alpha)
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            clusters: self.clusters,
            dim: self.dim,
            centers: vec![T::zero(); self.centers.len()],
            assign_weights: vec![T::zero(); self.assign_weights.len()],
            assign_biases: vec![T::zero(); self.assign_biases.len()],
        }
    }

    pub fn clusters(&self) -> usize {
        self.clusters
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn output_dim(&self) -> usize {
        self.clusters * self.dim
    }

    pub fn centers(&self) -> &[T] {
        &self.centers
    }

    pub fn assign_weights(&self) -> &[T] {
        &self.assign_weights
    }

    pub fn assign_biases(&self) -> &[T] {
        &self.assign_biases
    }

    pub(crate) fn slices_mut(&mut self) -> [&mut [T]; 3] {
        [&mut self.centers, &mut self.assign_weights, &mut self.assign_biases]
    }
}

/// Gradients of a scalar objective with respect to NetVLAD parameters and
/// inputs. Parameter gradients share the layout of [`NetVladParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct NetVladGradients<T> {
    pub centers: Vec<T>,
    pub assign_weights: Vec<T>,
    pub assign_biases: Vec<T>,
    pub features: Vec<Vec<T>>,
}

/// Intermediate values of one forward pass, kept for the backward pass.
struct Forward<T> {
    /// Soft assignments, N×K.
    assign: Vec<T>,
    /// Intra-normalized rows, K×D.
    intra: Vec<T>,
    row_norms: Vec<T>,
    global_norm: T,
    output: Vec<T>,
}

fn check_input<T: Scalar, F: AsRef<[T]>>(features: &[F], params: &NetVladParams<T>) -> Result<()> {
    let d = check_uniform(features, "NetVLAD input")?;
    if d != params.dim {
        return Err(Error::dim("NetVLAD input", params.dim, d));
    }
    Ok(())
}

fn forward<T: Scalar, F: AsRef<[T]>>(features: &[F], p: &NetVladParams<T>) -> Forward<T> {
    let (k, d) = (p.clusters, p.dim);
    let mut assign = Vec::with_capacity(features.len() * k);
    let mut v = vec![T::zero(); k * d];
    let mut logits = vec![T::zero(); k];
    for x in features {
        let x = x.as_ref();
        for c in 0..k {
            logits[c] = dot(&p.assign_weights[c * d..(c + 1) * d], x) + p.assign_biases[c];
        }
        let a = crate::fusion::softmax_unchecked(&logits);
        for c in 0..k {
            let row = &mut v[c * d..(c + 1) * d];
            let center = &p.centers[c * d..(c + 1) * d];
            for j in 0..d {
                row[j] += a[c] * (x[j] - center[j]);
            }
        }
        assign.extend(a);
    }
    let mut row_norms = Vec::with_capacity(k);
    for row in v.chunks_mut(d) {
        let n = l2_norm(row);
        if n > T::zero() {
            row.iter_mut().for_each(|r| *r /= n);
        }
        row_norms.push(n);
    }
    let global_norm = l2_norm(&v);
    let output = if global_norm > T::zero() {
        v.iter().map(|&x| x / global_norm).collect()
    } else {
        v.clone()
    };
    Forward {
        assign,
        intra: v,
        row_norms,
        global_norm,
        output,
    }
}

/// Soft-assigned residual aggregation, then per-cluster and global L2
/// normalization. Zero rows and a zero result are left as zeros.
pub fn netvlad_forward<T: Scalar, F: AsRef<[T]>>(
    features: &[F],
    params: &NetVladParams<T>,
) -> Result<VideoRepresentation<T>> {
    check_input(features, params)?;
    Ok(VideoRepresentation {
        vector: forward(features, params).output,
        encoder: EncoderTag::NetVlad,
    })
}

/// Exact gradients of `upstream · netvlad_forward(features)`.
pub fn netvlad_gradients<T: Scalar, F: AsRef<[T]>>(
    features: &[F],
    params: &NetVladParams<T>,
    upstream: &[T],
) -> Result<NetVladGradients<T>> {
    check_input(features, params)?;
    let (k, d) = (params.clusters, params.dim);
    if upstream.len() != k * d {
        return Err(Error::dim("NetVLAD upstream gradient", k * d, upstream.len()));
    }
    let fw = forward(features, params);

    // through global normalization: (g - y (y·g)) / ‖u‖
    let mut g_intra = vec![T::zero(); k * d];
    if fw.global_norm > T::zero() {
        let yg = dot(&fw.output, upstream);
        for i in 0..k * d {
            g_intra[i] = (upstream[i] - fw.output[i] * yg) / fw.global_norm;
        }
    }

    // through per-row normalization
    let mut g_v = vec![T::zero(); k * d];
    for c in 0..k {
        let n = fw.row_norms[c];
        if n > T::zero() {
            let u = &fw.intra[c * d..(c + 1) * d];
            let h = &g_intra[c * d..(c + 1) * d];
            let uh = dot(u, h);
            for j in 0..d {
                g_v[c * d + j] = (h[j] - u[j] * uh) / n;
            }
        }
    }

    let mut grads = NetVladGradients {
        centers: vec![T::zero(); k * d],
        assign_weights: vec![T::zero(); k * d],
        assign_biases: vec![T::zero(); k],
        features: Vec::with_capacity(features.len()),
    };
    let mut e = vec![T::zero(); k];
    for (i, x) in features.iter().enumerate() {
        let x = x.as_ref();
        let a = &fw.assign[i * k..(i + 1) * k];
        let mut gx = vec![T::zero(); d];
        for c in 0..k {
            let gv = &g_v[c * d..(c + 1) * d];
            let center = &params.centers[c * d..(c + 1) * d];
            let mut ec = T::zero();
            for j in 0..d {
                ec += gv[j] * (x[j] - center[j]);
                grads.centers[c * d + j] -= a[c] * gv[j];
                gx[j] += a[c] * gv[j];
            }
            e[c] = ec;
        }
        // softmax backward
        let mean_e: T = a.iter().zip(&e).map(|(&ac, &ec)| ac * ec).sum();
        for c in 0..k {
            let gs = a[c] * (e[c] - mean_e);
            grads.assign_biases[c] += gs;
            let w = &params.assign_weights[c * d..(c + 1) * d];
            for j in 0..d {
                grads.assign_weights[c * d + j] += gs * x[j];
                gx[j] += gs * w[j];
            }
        }
        grads.features.push(gx);
    }
    Ok(grads)
}
