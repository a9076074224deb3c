//! Mini-batch SGD with heavy-ball momentum, L2 weight decay and a stepped
//! learning-rate schedule, plus a central-difference gradient checker.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::attributes::{filter_by_relevance, passes_label_free, FilterConfig};
use crate::datamodel::{Dataset, DetectionRecord, LinearModel, Split};
use crate::encoding::{mean_pool, netvlad_forward, netvlad_gradients, NetVladGradients, NetVladParams};
use crate::error::{Error, Result};
use crate::fusion::softmax_unchecked;
use crate::model::{AttributeModel, Strategy};
use crate::scalar::{all_finite, Scalar};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig<T> {
    pub initial_lr: T,
    pub decay_factor: T,
    pub decay_every_epochs: usize,
    pub momentum: T,
    pub weight_decay: T,
    pub max_epochs: usize,
    /// Examples per mini-batch; a value at least the dataset size trains
    /// full-batch.
    pub batch_size: usize,
    pub seed: u64,
}

impl<T: Scalar> Default for TrainConfig<T> {
    /// lr 0.001 decayed 0.1x every 10 epochs, momentum 0.7, weight decay
    /// 0.0005, 20 epochs, batches of 32.
    fn default() -> Self {
        Self {
            initial_lr: T::lit(0.001),
            decay_factor: T::lit(0.1),
            decay_every_epochs: 10,
            momentum: T::lit(0.7),
            weight_decay: T::lit(0.0005),
            max_epochs: 20,
            batch_size: 32,
            seed: 0,
        }
    }
}

impl<T: Scalar> TrainConfig<T> {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Invalid(m));
        if !(self.initial_lr > T::zero() && self.initial_lr.is_finite()) {
            return bad(format!("initial_lr must be > 0, got {}", self.initial_lr));
        }
        if !(self.decay_factor > T::zero() && self.decay_factor <= T::one()) {
            return bad(format!("decay_factor must be in (0, 1], got {}", self.decay_factor));
        }
        if self.decay_every_epochs == 0 {
            return bad("decay_every_epochs must be >= 1".into());
        }
        if !(self.momentum >= T::zero() && self.momentum < T::one()) {
            return bad(format!("momentum must be in [0, 1), got {}", self.momentum));
        }
        if !(self.weight_decay >= T::zero() && self.weight_decay.is_finite()) {
            return bad(format!("weight_decay must be >= 0, got {}", self.weight_decay));
        }
        if self.max_epochs == 0 {
            return bad("max_epochs must be >= 1".into());
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1".into());
        }
        Ok(())
    }
}

/// `initial_lr * decay_factor^floor(epoch / decay_every_epochs)`, applied
/// one decay at a time as a step scheduler would.
pub fn lr_at<T: Scalar>(epoch: usize, cfg: &TrainConfig<T>) -> T {
    let steps = epoch / cfg.decay_every_epochs.max(1);
    (0..steps).fold(cfg.initial_lr, |lr, _| lr * cfg.decay_factor)
}

/// Velocity buffers, one per parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimState<T> {
    velocities: Vec<Vec<T>>,
    pub epoch: usize,
}

impl<T: Scalar> OptimState<T> {
    pub fn zeros(shapes: &[usize]) -> Self {
        Self {
            velocities: shapes.iter().map(|&n| vec![T::zero(); n]).collect(),
            epoch: 0,
        }
    }

    pub fn velocities(&self) -> &[Vec<T>] {
        &self.velocities
    }
}

/// One SGD update over a set of parameter tensors:
/// `v <- momentum * v + (grad + weight_decay * param)`, `param <- param - lr * v`.
///
/// Shapes and finiteness are checked before anything is modified.
pub fn sgd_step<T: Scalar>(
    params: &mut [&mut [T]],
    grads: &[&[T]],
    state: &mut OptimState<T>,
    lr: T,
    momentum: T,
    weight_decay: T,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.velocities.len() {
        return Err(Error::dim("sgd parameter groups", params.len(), grads.len().max(state.velocities.len())));
    }
    for (i, ((p, g), v)) in params.iter().zip(grads).zip(&state.velocities).enumerate() {
        if p.len() != g.len() || p.len() != v.len() {
            return Err(Error::dim(format!("sgd parameter group {i}"), p.len(), g.len()));
        }
        if !all_finite(g) {
            return Err(Error::Numeric(format!("non-finite gradient in parameter group {i}")));
        }
    }
    for ((p, g), v) in params.iter_mut().zip(grads).zip(&mut state.velocities) {
        for ((pj, &gj), vj) in p.iter_mut().zip(g.iter()).zip(v.iter_mut()) {
            *vj = momentum * *vj + (gj + weight_decay * *pj);
            *pj -= lr * *vj;
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord<T> {
    pub epoch: usize,
    pub lr: T,
    /// Mean cross-entropy over the epoch's examples, each measured before
    /// the update of its batch.
    pub loss: T,
}

/// `logsumexp(z) - z_label`.
fn cross_entropy<T: Scalar>(logits: &[T], label: usize) -> T {
    let m = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let lse = m + logits.iter().map(|&z| (z - m).exp()).sum::<T>().ln();
    lse - logits[label]
}

/// Mean cross-entropy of `softmax(W x + b)` over a dataset.
pub fn mean_cross_entropy<T: Scalar, X: AsRef<[T]>>(model: &LinearModel<T>, xs: &[X], labels: &[usize]) -> Result<T> {
    check_dataset(xs, labels, model.num_classes(), model.input_dim())?;
    let mut total = T::zero();
    for (x, &y) in xs.iter().zip(labels) {
        total += cross_entropy(&model.logits(x.as_ref())?, y);
    }
    Ok(total / T::lit(xs.len() as f64))
}

fn check_dataset<T: Scalar, X: AsRef<[T]>>(xs: &[X], labels: &[usize], classes: usize, dim: usize) -> Result<()> {
    if xs.is_empty() {
        return Err(Error::Empty("training set".into()));
    }
    if xs.len() != labels.len() {
        return Err(Error::dim("training labels", xs.len(), labels.len()));
    }
    for x in xs {
        if x.as_ref().len() != dim {
            return Err(Error::dim("training example", dim, x.as_ref().len()));
        }
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= classes) {
        return Err(Error::Invalid(format!("label {bad} out of range for {classes} classes")));
    }
    Ok(())
}

fn check_class_coverage(labels: &[usize], classes: usize) -> Result<()> {
    let mut seen = vec![false; classes];
    labels.iter().for_each(|&y| seen[y] = true);
    match seen.iter().position(|s| !s) {
        Some(c) => Err(Error::Invalid(format!("class {c} has no training example"))),
        None => Ok(()),
    }
}

/// Accumulates `(p - onehot(y)) * scale` into linear-layer gradients and
/// returns the example's loss and the scaled logit gradient.
fn linear_backward<T: Scalar>(
    model: &LinearModel<T>,
    x: &[T],
    y: usize,
    scale: T,
    gw: &mut [T],
    gb: &mut [T],
) -> Result<(T, Vec<T>)> {
    let logits = model.logits(x)?;
    let loss = cross_entropy(&logits, y);
    let mut delta = softmax_unchecked(&logits);
    delta[y] -= T::one();
    let d = model.input_dim();
    for (c, dc) in delta.iter_mut().enumerate() {
        *dc *= scale;
        gb[c] += *dc;
        for (g, &xj) in gw[c * d..(c + 1) * d].iter_mut().zip(x) {
            *g += *dc * xj;
        }
    }
    Ok((loss, delta))
}

fn batches(n: usize, batch_size: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    order.chunks(batch_size.min(n).max(1)).map(<[usize]>::to_vec).collect()
}

/// Trains a zero-initialized linear softmax classifier with mean-reduced
/// cross-entropy. Deterministic for a fixed `cfg.seed`.
pub fn train_linear_classifier<T: Scalar, X: AsRef<[T]>>(
    xs: &[X],
    labels: &[usize],
    num_classes: usize,
    cfg: &TrainConfig<T>,
) -> Result<(LinearModel<T>, Vec<EpochRecord<T>>)> {
    cfg.validate()?;
    let dim = xs.first().map(|x| x.as_ref().len()).ok_or_else(|| Error::Empty("training set".into()))?;
    check_dataset(xs, labels, num_classes, dim)?;

    let mut model = LinearModel::zeros(num_classes, dim)?;
    let mut state = OptimState::zeros(&[num_classes * dim, num_classes]);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut log = Vec::with_capacity(cfg.max_epochs);
    for epoch in 0..cfg.max_epochs {
        let lr = lr_at(epoch, cfg);
        let mut epoch_loss = T::zero();
        for batch in batches(xs.len(), cfg.batch_size, &mut rng) {
            let scale = T::one() / T::lit(batch.len() as f64);
            let mut gw = vec![T::zero(); num_classes * dim];
            let mut gb = vec![T::zero(); num_classes];
            for &i in &batch {
                let (loss, _) = linear_backward(&model, xs[i].as_ref(), labels[i], scale, &mut gw, &mut gb)?;
                epoch_loss += loss;
            }
            sgd_step(
                &mut [&mut model.weights, &mut model.biases],
                &[&gw, &gb],
                &mut state,
                lr,
                cfg.momentum,
                cfg.weight_decay,
            )?;
        }
        state.epoch = epoch + 1;
        let loss = epoch_loss / T::lit(xs.len() as f64);
        if !loss.is_finite() {
            return Err(Error::Numeric(format!("training loss diverged at epoch {epoch}")));
        }
        log::debug!("epoch {epoch} lr {lr} loss {loss}");
        log.push(EpochRecord { epoch, lr, loss });
    }
    Ok((model, log))
}

/// Gradients of the NetVLAD + linear stack objective.
#[derive(Debug, Clone, PartialEq)]
pub struct StackGradients<T> {
    pub weights: Vec<T>,
    pub biases: Vec<T>,
    pub netvlad: NetVladGradients<T>,
}

/// Mean cross-entropy of `softmax(W netvlad(X_v) + b)` over videos and its
/// gradient with respect to every parameter and input feature.
pub fn netvlad_stack_loss_grad<T: Scalar, F: AsRef<[T]>>(
    videos: &[Vec<F>],
    labels: &[usize],
    params: &NetVladParams<T>,
    model: &LinearModel<T>,
) -> Result<(T, StackGradients<T>)> {
    if videos.is_empty() {
        return Err(Error::Empty("training set".into()));
    }
    if videos.len() != labels.len() {
        return Err(Error::dim("training labels", videos.len(), labels.len()));
    }
    if model.input_dim() != params.output_dim() {
        return Err(Error::dim("classifier input after NetVLAD", params.output_dim(), model.input_dim()));
    }
    let scale = T::one() / T::lit(videos.len() as f64);
    let mut grads = StackGradients {
        weights: vec![T::zero(); model.weights().len()],
        biases: vec![T::zero(); model.num_classes()],
        netvlad: NetVladGradients {
            centers: vec![T::zero(); params.centers().len()],
            assign_weights: vec![T::zero(); params.assign_weights().len()],
            assign_biases: vec![T::zero(); params.clusters()],
            features: Vec::with_capacity(videos.len()),
        },
    };
    let mut total = T::zero();
    for (feats, &y) in videos.iter().zip(labels) {
        if y >= model.num_classes() {
            return Err(Error::Invalid(format!("label {y} out of range")));
        }
        let rep = netvlad_forward(feats, params)?.vector;
        let (loss, delta) = linear_backward(model, &rep, y, scale, &mut grads.weights, &mut grads.biases)?;
        total += loss;
        let d = model.input_dim();
        let mut upstream = vec![T::zero(); d];
        for (c, &dc) in delta.iter().enumerate() {
            for (u, &w) in upstream.iter_mut().zip(model.row(c)) {
                *u += dc * w;
            }
        }
        let g = netvlad_gradients(feats, params, &upstream)?;
        add_into(&mut grads.netvlad.centers, &g.centers);
        add_into(&mut grads.netvlad.assign_weights, &g.assign_weights);
        add_into(&mut grads.netvlad.assign_biases, &g.assign_biases);
        grads.netvlad.features.extend(g.features);
    }
    Ok((total * scale, grads))
}

fn add_into<T: Scalar>(acc: &mut [T], x: &[T]) {
    acc.iter_mut().zip(x).for_each(|(a, &b)| *a += b);
}

/// End-to-end SGD through a linear head and NetVLAD aggregation.
///
/// Centers are `clusters` descriptors drawn from the training features with
/// the run's seed; assignment parameters use the center-derived init.
pub fn train_netvlad_classifier<T: Scalar, F: AsRef<[T]>>(
    videos: &[Vec<F>],
    labels: &[usize],
    num_classes: usize,
    cfg: &TrainConfig<T>,
    clusters: usize,
) -> Result<(NetVladParams<T>, LinearModel<T>, Vec<EpochRecord<T>>)> {
    cfg.validate()?;
    if videos.is_empty() {
        return Err(Error::Empty("training set".into()));
    }
    if videos.len() != labels.len() {
        return Err(Error::dim("training labels", videos.len(), labels.len()));
    }
    if let Some(i) = videos.iter().position(Vec::is_empty) {
        return Err(Error::Empty(format!("attribute features of training video {i}")));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= num_classes) {
        return Err(Error::Invalid(format!("label {bad} out of range for {num_classes} classes")));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let pool: Vec<&[T]> = videos.iter().flatten().map(AsRef::as_ref).collect();
    let mut params = NetVladParams::init_from_features(&pool, clusters, T::one(), &mut rng)?;
    let mut model = LinearModel::zeros(num_classes, params.output_dim())?;
    let mut state = OptimState::zeros(&[
        model.weights.len(),
        model.biases.len(),
        params.centers.len(),
        params.assign_weights.len(),
        params.assign_biases.len(),
    ]);
    let mut log = Vec::with_capacity(cfg.max_epochs);
    for epoch in 0..cfg.max_epochs {
        let lr = lr_at(epoch, cfg);
        let mut epoch_loss = T::zero();
        for batch in batches(videos.len(), cfg.batch_size, &mut rng) {
            let bv: Vec<&[F]> = batch.iter().map(|&i| videos[i].as_slice()).collect();
            let bl: Vec<usize> = batch.iter().map(|&i| labels[i]).collect();
            let (loss, g) = stack_batch(&bv, &bl, &params, &model)?;
            epoch_loss += loss * T::lit(batch.len() as f64);
            let [c, w, b] = params.slices_mut();
            sgd_step(
                &mut [&mut model.weights, &mut model.biases, c, w, b],
                &[
                    &g.weights,
                    &g.biases,
                    &g.netvlad.centers,
                    &g.netvlad.assign_weights,
                    &g.netvlad.assign_biases,
                ],
                &mut state,
                lr,
                cfg.momentum,
                cfg.weight_decay,
            )?;
        }
        state.epoch = epoch + 1;
        let loss = epoch_loss / T::lit(videos.len() as f64);
        if !loss.is_finite() {
            return Err(Error::Numeric(format!("training loss diverged at epoch {epoch}")));
        }
        log::debug!("epoch {epoch} lr {lr} loss {loss}");
        log.push(EpochRecord { epoch, lr, loss });
    }
    Ok((params, model, log))
}

fn stack_batch<T: Scalar, F: AsRef<[T]>>(
    videos: &[&[F]],
    labels: &[usize],
    params: &NetVladParams<T>,
    model: &LinearModel<T>,
) -> Result<(T, StackGradients<T>)> {
    let owned: Vec<Vec<&[T]>> = videos.iter().map(|v| v.iter().map(AsRef::as_ref).collect()).collect();
    netvlad_stack_loss_grad(&owned, labels, params, model)
}

/// Compares an analytic gradient against central differences
/// `(f(θ+εe) - f(θ-εe)) / 2ε`. Returns the largest per-coordinate error
/// `|a - n| / max(1, |a|, |n|)`.
///
/// `f` returns the loss and its analytic gradient at a point.
pub fn grad_check<T: Scalar, F>(f: F, point: &[T], eps: T) -> Result<T>
where
    F: Fn(&[T]) -> Result<(T, Vec<T>)>,
{
    if !(eps > T::zero()) {
        return Err(Error::Invalid(format!("eps must be positive, got {eps}")));
    }
    let (value, analytic) = f(point)?;
    if !value.is_finite() || !all_finite(&analytic) {
        return Err(Error::Numeric("non-finite loss or gradient at the check point".into()));
    }
    if analytic.len() != point.len() {
        return Err(Error::dim("analytic gradient", point.len(), analytic.len()));
    }
    let two = T::lit(2.0);
    let mut probe = point.to_vec();
    let mut worst = T::zero();
    for i in 0..point.len() {
        probe[i] = point[i] + eps;
        let (plus, _) = f(&probe)?;
        probe[i] = point[i] - eps;
        let (minus, _) = f(&probe)?;
        probe[i] = point[i];
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::Numeric(format!("non-finite loss probing coordinate {i}")));
        }
        let numeric = (plus - minus) / (two * eps);
        let denom = T::one().max(analytic[i].abs()).max(numeric.abs());
        worst = worst.max((analytic[i] - numeric).abs() / denom);
    }
    Ok(worst)
}

/// Attribute features of one training video after filtering.
fn train_features<'a, T: Scalar>(
    dets: &'a [&'a DetectionRecord<T>],
    label_words: &[String],
    strategy: Strategy,
    ds: &Dataset<T>,
    filter: &FilterConfig<T>,
) -> Result<Vec<Vec<T>>> {
    let kept: Vec<DetectionRecord<T>> = dets
        .iter()
        .filter(|d| passes_label_free(d, filter))
        .map(|d| (*d).clone())
        .collect();
    let kept = if strategy == Strategy::AttrClassifier {
        filter_by_relevance(&kept, label_words, &ds.embeddings, filter.t_sim)?
    } else {
        kept
    };
    Ok(kept
        .into_iter()
        .filter_map(|d| d.feature.map(|f| f.into_inner()))
        .collect())
}

/// Trains the attribute pipeline of `strategy` on the dataset's training
/// split.
///
/// Every strategy applies the confidence, box-size and person filters; the
/// per-attribute classifier additionally drops crops whose label is not
/// relevant to the video's ground-truth label. Videos left without any
/// feature are skipped.
pub fn train_attribute_model<T: Scalar>(
    ds: &Dataset<T>,
    strategy: Strategy,
    filter: &FilterConfig<T>,
    cfg: &TrainConfig<T>,
    clusters: usize,
) -> Result<(AttributeModel<T>, Vec<EpochRecord<T>>)> {
    filter.validate()?;
    let by_video = ds.detections_by_video();
    let mut per_video: Vec<(Vec<Vec<T>>, usize)> = Vec::new();
    for s in ds.samples.iter().filter(|s| s.split == Split::Train) {
        let Some(dets) = by_video.get(s.video_id.as_str()) else {
            continue;
        };
        let words = ds.vocab.words(s.true_label)?;
        let feats = train_features(dets, &words, strategy, ds, filter)?;
        if !feats.is_empty() {
            per_video.push((feats, s.true_label));
        }
    }
    if per_video.is_empty() {
        return Err(Error::Empty("no training video has usable attribute features".into()));
    }
    let classes = ds.vocab.len();
    let labels: Vec<usize> = per_video.iter().map(|(_, y)| *y).collect();
    check_class_coverage(&labels, classes)?;
    match strategy {
        Strategy::MeanPool => {
            let xs = per_video
                .iter()
                .map(|(f, _)| mean_pool(f).map(|r| r.vector))
                .collect::<Result<Vec<_>>>()?;
            let ys: Vec<usize> = per_video.iter().map(|(_, y)| *y).collect();
            let (lin, log) = train_linear_classifier(&xs, &ys, classes, cfg)?;
            Ok((AttributeModel::new(strategy, lin, None)?, log))
        }
        Strategy::NetVlad => {
            let (videos, ys): (Vec<Vec<Vec<T>>>, Vec<usize>) = per_video.into_iter().unzip();
            let (params, lin, log) = train_netvlad_classifier(&videos, &ys, classes, cfg, clusters)?;
            Ok((AttributeModel::new(strategy, lin, Some(params))?, log))
        }
        Strategy::AttrClassifier => {
            let mut xs = Vec::new();
            let mut ys = Vec::new();
            for (feats, y) in per_video {
                ys.extend(std::iter::repeat_n(y, feats.len()));
                xs.extend(feats);
            }
            let (lin, log) = train_linear_classifier(&xs, &ys, classes, cfg)?;
            Ok((AttributeModel::new(strategy, lin, None)?, log))
        }
    }
}
