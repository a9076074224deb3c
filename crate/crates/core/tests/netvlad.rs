//! NetVLAD forward pass against a literal re-derivation, and its gradients
//! against central finite differences.

use a3d::encoding::{netvlad_forward, netvlad_gradients, NetVladParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Instance {
    k: usize,
    d: usize,
    x: Vec<Vec<f64>>,
    c: Vec<Vec<f64>>,
    w: Vec<Vec<f64>>,
    b: Vec<f64>,
}

impl Instance {
    fn random(rng: &mut ChaCha8Rng, k: usize, d: usize, n: usize) -> Self {
        let mut m = |r: usize| -> Vec<Vec<f64>> { (0..r).map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect()).collect() };
        let x = m(n);
        let c = m(k);
        let w = m(k);
        let b = (0..k).map(|_| rng.random_range(-0.5..0.5)).collect();
        Self { k, d, x, c, w, b }
    }

    fn params(&self) -> NetVladParams<f64> {
        NetVladParams::from_parts(self.k, self.d, self.c.concat(), self.w.concat(), self.b.clone()).unwrap()
    }

    /// Flattened (x, c, w, b).
    fn theta(&self) -> Vec<f64> {
        let mut t = self.x.concat();
        t.extend(self.c.concat());
        t.extend(self.w.concat());
        t.extend(&self.b);
        t
    }

    fn with_theta(&self, t: &[f64]) -> Self {
        let (n, k, d) = (self.x.len(), self.k, self.d);
        let rows = |s: &[f64], r: usize| -> Vec<Vec<f64>> { s[..r * d].chunks(d).map(<[f64]>::to_vec).collect() };
        let mut off = 0;
        let x = rows(&t[off..], n);
        off += n * d;
        let c = rows(&t[off..], k);
        off += k * d;
        let w = rows(&t[off..], k);
        off += k * d;
        Self { k, d, x, c, w, b: t[off..off + k].to_vec() }
    }
}

/// The aggregation written out term by term: per-cluster loop outermost,
/// softmax without max subtraction.
fn oracle(inst: &Instance) -> Vec<f64> {
    let mut out = Vec::new();
    for k in 0..inst.k {
        let mut v = vec![0.0; inst.d];
        for x in &inst.x {
            let score = |j: usize| (inst.w[j].iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + inst.b[j]).exp();
            let denom: f64 = (0..inst.k).map(score).sum();
            let a = score(k) / denom;
            for j in 0..inst.d {
                v[j] += a * (x[j] - inst.c[k][j]);
            }
        }
        let norm = v.iter().map(|t| t * t).sum::<f64>().sqrt();
        if norm > 0.0 {
            v.iter_mut().for_each(|t| *t /= norm);
        }
        out.extend(v);
    }
    let norm = out.iter().map(|t| t * t).sum::<f64>().sqrt();
    if norm > 0.0 {
        out.iter_mut().for_each(|t| *t /= norm);
    }
    out
}

fn shapes() -> Vec<(usize, usize, usize)> {
    let mut s = Vec::new();
    for k in [1, 2, 4] {
        for d in [2, 8] {
            for n in [1, 5] {
                s.push((k, d, n));
            }
        }
    }
    s
}

#[test]
fn forward_matches_literal_formula() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for (k, d, n) in shapes() {
        for _ in 0..5 {
            let inst = Instance::random(&mut rng, k, d, n);
            let got = netvlad_forward(&inst.x, &inst.params()).unwrap().vector;
            let want = oracle(&inst);
            for (g, w) in got.iter().zip(&want) {
                assert!((g - w).abs() < 1e-12, "K={k} D={d} N={n}: {g} vs {w}");
            }
        }
    }
}

#[test]
fn output_unit_norm_and_permutation_invariant() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for (k, d, n) in shapes() {
        let inst = Instance::random(&mut rng, k, d, n);
        let p = inst.params();
        let out = netvlad_forward(&inst.x, &p).unwrap().vector;
        let norm = out.iter().map(|t| t * t).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-9);
        let mut rev = inst.x.clone();
        rev.reverse();
        rev.rotate_left(n / 2);
        let out2 = netvlad_forward(&rev, &p).unwrap().vector;
        for (a, b) in out.iter().zip(&out2) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}

fn objective(inst: &Instance, upstream: &[f64]) -> f64 {
    let y = netvlad_forward(&inst.x, &inst.params()).unwrap().vector;
    y.iter().zip(upstream).map(|(a, b)| a * b).sum()
}

fn analytic(inst: &Instance, upstream: &[f64]) -> Vec<f64> {
    let g = netvlad_gradients(&inst.x, &inst.params(), upstream).unwrap();
    let mut t = g.features.concat();
    t.extend(g.centers);
    t.extend(g.assign_weights);
    t.extend(g.assign_biases);
    t
}

/// Max over coordinates of |a - n| / max(1, |a|, |n|).
fn fd_error(inst: &Instance, upstream: &[f64], eps: f64) -> f64 {
    let theta = inst.theta();
    let a = analytic(inst, upstream);
    assert_eq!(a.len(), theta.len());
    let mut worst: f64 = 0.0;
    for i in 0..theta.len() {
        let mut t = theta.clone();
        t[i] += eps;
        let plus = objective(&inst.with_theta(&t), upstream);
        t[i] = theta[i] - eps;
        let minus = objective(&inst.with_theta(&t), upstream);
        let num = (plus - minus) / (2.0 * eps);
        worst = worst.max((a[i] - num).abs() / 1f64.max(a[i].abs()).max(num.abs()));
    }
    worst
}

#[test]
fn gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for (k, d, n) in shapes() {
        for _ in 0..3 {
            let inst = Instance::random(&mut rng, k, d, n);
            let upstream: Vec<f64> = (0..k * d).map(|_| rng.random_range(-1.0..1.0)).collect();
            let err = fd_error(&inst, &upstream, 1e-5);
            assert!(err < 1e-4, "K={k} D={d} N={n}: rel err {err}");
        }
    }
}

#[test]
fn single_cluster_single_input_center_gradient() {
    // before normalization dV/dc = -I; after both normalizations the
    // gradient of u·y w.r.t. c is checked numerically
    let inst = Instance {
        k: 1,
        d: 3,
        x: vec![vec![0.5, -1.0, 2.0]],
        c: vec![vec![0.1, 0.2, 0.3]],
        w: vec![vec![0.3, 0.1, -0.2]],
        b: vec![0.0],
    };
    let upstream = [1.0, -0.5, 0.25];
    assert!(fd_error(&inst, &upstream, 1e-5) < 1e-6);
    // with K=1 the assignment is constant, so weights and bias get nothing
    let g = netvlad_gradients(&inst.x, &inst.params(), &upstream).unwrap();
    assert!(g.assign_weights.iter().chain(&g.assign_biases).all(|v| v.abs() < 1e-15));
    // and the center gradient is the negative input gradient
    for (gc, gx) in g.centers.iter().zip(&g.features[0]) {
        assert!((gc + gx).abs() < 1e-15);
    }
}
