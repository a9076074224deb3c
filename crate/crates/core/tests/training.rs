use a3d::datamodel::LinearModel;
use a3d::encoding::NetVladParams;
use a3d::training::{
    grad_check, mean_cross_entropy, netvlad_stack_loss_grad, train_linear_classifier, train_netvlad_classifier,
    TrainConfig,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Two clusters around ±(2, 1) with uniform jitter of at most 1 per axis;
/// every point satisfies sign((2,1)·x) = class sign, so the set is linearly
/// separable.
fn toy(n: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut xs = Vec::with_capacity(n);
    let mut ys = Vec::with_capacity(n);
    for i in 0..n {
        let y = i % 2;
        let s = if y == 1 { 1.0 } else { -1.0 };
        xs.push(vec![s * 2.0 + rng.random_range(-1.0..1.0), s * 1.0 + rng.random_range(-1.0..1.0)]);
        ys.push(y);
    }
    (xs, ys)
}

fn accuracy(m: &LinearModel<f64>, xs: &[Vec<f64>], ys: &[usize]) -> f64 {
    let hits = xs
        .iter()
        .zip(ys)
        .filter(|(x, &y)| {
            let z = m.logits(x).unwrap();
            let best = if z[1] > z[0] { 1 } else { 0 };
            best == y
        })
        .count();
    hits as f64 / xs.len() as f64
}

#[test]
fn separable_toy_reaches_full_accuracy() {
    let (xs, ys) = toy(200, 5);
    for (x, &y) in xs.iter().zip(&ys) {
        let margin = 2.0 * x[0] + x[1];
        assert!(if y == 1 { margin > 0.0 } else { margin < 0.0 });
    }
    let cfg = TrainConfig {
        max_epochs: 200,
        ..TrainConfig::default()
    };
    let (m, log) = train_linear_classifier(&xs, &ys, 2, &cfg).unwrap();
    assert_eq!(log.len(), 200);
    assert_eq!(accuracy(&m, &xs, &ys), 1.0);
}

#[test]
fn zero_init_loss_is_ln_classes() {
    let (xs, ys) = toy(200, 1);
    let m = LinearModel::zeros(2, 2).unwrap();
    assert!((mean_cross_entropy(&m, &xs, &ys).unwrap() - 2f64.ln()).abs() < 1e-12);
}

#[test]
fn single_example_loss_monotone() {
    let cfg = TrainConfig {
        initial_lr: 0.01,
        weight_decay: 0.0,
        max_epochs: 100,
        ..TrainConfig::default()
    };
    let xs = vec![vec![0.5, -1.0, 2.0]];
    let ys = vec![2];
    let (_, log) = train_linear_classifier(&xs, &ys, 3, &cfg).unwrap();
    assert!((log[0].loss - 3f64.ln()).abs() < 1e-12);
    for w in log[1..].windows(2) {
        assert!(w[1].loss <= w[0].loss, "{} then {}", w[0].loss, w[1].loss);
    }
    assert!(log.last().unwrap().loss < log[0].loss);
}

#[test]
fn duplicated_full_batch_dataset_same_model() {
    let (xs, ys) = toy(40, 2);
    let cfg = TrainConfig {
        batch_size: 1_000,
        max_epochs: 30,
        initial_lr: 0.1,
        ..TrainConfig::default()
    };
    let (a, _) = train_linear_classifier(&xs, &ys, 2, &cfg).unwrap();
    let xs2: Vec<Vec<f64>> = xs.iter().chain(&xs).cloned().collect();
    let ys2: Vec<usize> = ys.iter().chain(&ys).copied().collect();
    let (b, _) = train_linear_classifier(&xs2, &ys2, 2, &cfg).unwrap();
    for (x, y) in a.weights().iter().chain(a.biases()).zip(b.weights().iter().chain(b.biases())) {
        assert!((x - y).abs() <= 1e-12 * x.abs().max(1.0), "{x} vs {y}");
    }
}

#[test]
fn training_is_deterministic() {
    let (xs, ys) = toy(100, 8);
    let cfg = TrainConfig {
        seed: 42,
        batch_size: 7,
        ..TrainConfig::default()
    };
    let (a, la) = train_linear_classifier(&xs, &ys, 2, &cfg).unwrap();
    let (b, lb) = train_linear_classifier(&xs, &ys, 2, &cfg).unwrap();
    assert_eq!(a, b);
    assert_eq!(la, lb);
}

fn toy_videos(n: usize, seed: u64) -> (Vec<Vec<Vec<f64>>>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (pts, ys) = toy(n, seed);
    let videos = pts
        .iter()
        .map(|p| {
            (0..rng.random_range(1..4))
                .map(|_| vec![p[0] + rng.random_range(-0.2..0.2), p[1] + rng.random_range(-0.2..0.2)])
                .collect()
        })
        .collect();
    (videos, ys)
}

#[test]
fn netvlad_single_cluster_loss_decreases() {
    let (videos, ys) = toy_videos(60, 3);
    let cfg = TrainConfig {
        initial_lr: 0.1,
        max_epochs: 5,
        ..TrainConfig::default()
    };
    let (params, _, log) = train_netvlad_classifier(&videos, &ys, 2, &cfg, 1).unwrap();
    assert_eq!(params.clusters(), 1);
    for w in log.windows(2) {
        assert!(w[1].loss < w[0].loss, "{:?}", log);
    }
}

#[test]
fn netvlad_training_deterministic_and_validated() {
    let (videos, ys) = toy_videos(30, 4);
    let cfg = TrainConfig::default();
    let a = train_netvlad_classifier(&videos, &ys, 2, &cfg, 2).unwrap();
    let b = train_netvlad_classifier(&videos, &ys, 2, &cfg, 2).unwrap();
    assert_eq!(a, b);
    let zero = TrainConfig {
        max_epochs: 0,
        ..TrainConfig::default()
    };
    assert!(train_netvlad_classifier(&videos, &ys, 2, &zero, 2).is_err());
    let mut with_empty = videos.clone();
    with_empty[0].clear();
    assert!(train_netvlad_classifier(&with_empty, &ys, 2, &cfg, 2).is_err());
}

#[test]
fn netvlad_linear_stack_gradient_check() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let (k, d, c) = (2, 3, 3);
    let videos: Vec<Vec<Vec<f64>>> = (0..4)
        .map(|_| (0..rng.random_range(1..4)).map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect()).collect())
        .collect();
    let labels = vec![0, 1, 2, 1];
    let theta: Vec<f64> = (0..c * k * d + c + 2 * k * d + k).map(|_| rng.random_range(-1.0..1.0)).collect();
    let unpack = |t: &[f64]| {
        let mut off = 0;
        let mut take = |n: usize| {
            let s = t[off..off + n].to_vec();
            off += n;
            s
        };
        let lin = LinearModel::from_parts(c, k * d, take(c * k * d), take(c)).unwrap();
        let p = NetVladParams::from_parts(k, d, take(k * d), take(k * d), take(k)).unwrap();
        (lin, p)
    };
    let f = |t: &[f64]| {
        let (lin, p) = unpack(t);
        let (loss, g) = netvlad_stack_loss_grad(&videos, &labels, &p, &lin)?;
        let mut grad = g.weights;
        grad.extend(g.biases);
        grad.extend(g.netvlad.centers);
        grad.extend(g.netvlad.assign_weights);
        grad.extend(g.netvlad.assign_biases);
        Ok((loss, grad))
    };
    let err = grad_check(f, &theta, 1e-5).unwrap();
    assert!(err < 1e-4, "max relative error {err}");
}
