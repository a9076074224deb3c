//! Acceptance criteria, one PASS/FAIL line each. Runs without the libtest
//! harness so the lines always print; exits nonzero if any criterion fails.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use a3d::attributes::{filter_by_bbox, filter_by_confidence, filter_by_relevance, filter_person, FilterConfig};
use a3d::datamodel::synth::{gen_synthetic, SyntheticConfig};
use a3d::datamodel::{BBox, DetectionRecord, EmbeddingTable, LinearModel};
use a3d::encoding::{netvlad_forward, netvlad_gradients, NetVladParams};
use a3d::fusion::{fuse_original, fuse_revised, softmax, FusionWeights, ProbabilityDistribution};
use a3d::inference::{joint_predict, GateConfig};
use a3d::training::{lr_at, mean_cross_entropy, train_linear_classifier, TrainConfig};
use a3d::DatasetF64;
use a3d_cli::manifest::RunManifest;
use a3d_cli::report::lookup;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

// ------------------------------------------------------------------ gating

fn gating_law() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let gate = GateConfig::new(0.1).unwrap();
    let (mut to_p1, mut to_p2, mut ties) = (0, 0, 0);
    for i in 0..10_000 {
        let n = rng.random_range(2..40);
        let p1 = if i % 50 == 0 {
            // max exactly at the threshold
            ProbabilityDistribution::uniform(10).unwrap()
        } else {
            let scale = rng.random_range(0.0..6.0);
            softmax(&(0..n).map(|_| rng.random_range(-scale..=scale)).collect::<Vec<f64>>()).unwrap()
        };
        let m = p1.len();
        let p2 = softmax(&(0..m).map(|_| rng.random_range(-3.0..3.0)).collect::<Vec<f64>>()).unwrap();
        let out = joint_predict(&p1, &p2, &gate).unwrap();
        let max = p1.as_slice().iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if max == 0.1 {
            ties += 1;
        }
        if max > 0.1 {
            check(out.as_slice() == p1.as_slice(), || format!("pair {i}: expected p1"))?;
            to_p1 += 1;
        } else {
            check(out.as_slice() == p2.as_slice(), || format!("pair {i}: expected p2"))?;
            to_p2 += 1;
        }
    }
    check(ties >= 200 && to_p1 > 0, || format!("degenerate sample: {to_p1} p1, {ties} ties"))?;
    Ok(format!("10000 pairs, {to_p1} kept p1, {to_p2} fell back ({ties} exact ties)"))
}

// ------------------------------------------------------------------ fusion

fn fusion_correctness() -> Outcome {
    let w = FusionWeights::new(0.6, 0.4).unwrap();
    let got = fuse_revised(&[2.0, 0.0], &[0.0, 2.0], &w).unwrap();
    // softmax([1.2, 0.8]) = [1 / (1 + e^-0.4), 1 / (1 + e^0.4)]
    let want = [1.0 / (1.0 + (-0.4f64).exp()), 1.0 / (1.0 + 0.4f64.exp())];
    for (g, w) in got.as_slice().iter().zip(want) {
        check((g - w).abs() < 1e-9, || format!("revised fusion {g} vs {w}"))?;
    }
    check((got.as_slice()[0] - 0.598687660112452).abs() < 1e-9, || "first entry off".into())?;
    let (fs, ft) = ([3.0, 0.0], [0.0, 5.0]);
    let rev = fuse_revised(&fs, &ft, &w).unwrap().argmax();
    let orig = fuse_original(&fs, &ft, &w).unwrap().argmax();
    check(rev != orig, || format!("witness agrees: both argmax {rev}"))?;
    Ok(format!(
        "p = [{:.9}, {:.9}]; witness fs=[3,0] ft=[0,5]: revised argmax {rev}, original argmax {orig}",
        got.as_slice()[0],
        got.as_slice()[1]
    ))
}

// ----------------------------------------------------------------- netvlad

struct Vlad {
    k: usize,
    d: usize,
    x: Vec<Vec<f64>>,
    c: Vec<Vec<f64>>,
    w: Vec<Vec<f64>>,
    b: Vec<f64>,
}

impl Vlad {
    fn random(rng: &mut ChaCha8Rng, k: usize, d: usize, n: usize) -> Self {
        let mut m = |r: usize| -> Vec<Vec<f64>> {
            (0..r).map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect()).collect()
        };
        let (x, c, w) = (m(n), m(k), m(k));
        let b = (0..k).map(|_| rng.random_range(-0.5..0.5)).collect();
        Self { k, d, x, c, w, b }
    }

    fn params(&self) -> NetVladParams<f64> {
        NetVladParams::from_parts(self.k, self.d, self.c.concat(), self.w.concat(), self.b.clone()).unwrap()
    }

    fn theta(&self) -> Vec<f64> {
        [self.x.concat(), self.c.concat(), self.w.concat(), self.b.clone()].concat()
    }

    fn with_theta(&self, t: &[f64]) -> Self {
        let (n, k, d) = (self.x.len(), self.k, self.d);
        let rows = |s: &[f64]| s.chunks(d).map(<[f64]>::to_vec).collect::<Vec<_>>();
        Self {
            k,
            d,
            x: rows(&t[..n * d]),
            c: rows(&t[n * d..(n + k) * d]),
            w: rows(&t[(n + k) * d..(n + 2 * k) * d]),
            b: t[(n + 2 * k) * d..].to_vec(),
        }
    }

    /// Soft-assigned residual sums, normalized per cluster then globally,
    /// written out directly.
    fn literal(&self) -> Vec<f64> {
        let mut v = vec![vec![0.0; self.d]; self.k];
        for x in &self.x {
            let e: Vec<f64> = (0..self.k)
                .map(|j| (self.w[j].iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + self.b[j]).exp())
                .collect();
            let z: f64 = e.iter().sum();
            for k in 0..self.k {
                for j in 0..self.d {
                    v[k][j] += e[k] / z * (x[j] - self.c[k][j]);
                }
            }
        }
        let unit = |u: &mut Vec<f64>| {
            let n = u.iter().map(|t| t * t).sum::<f64>().sqrt();
            if n > 0.0 {
                u.iter_mut().for_each(|t| *t /= n);
            }
        };
        v.iter_mut().for_each(unit);
        let mut out = v.concat();
        unit(&mut out);
        out
    }
}

fn netvlad() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (mut worst_fwd, mut worst_norm, mut worst_perm, mut worst_grad) = (0f64, 0f64, 0f64, 0f64);
    for k in [1, 2, 4] {
        for d in [2, 8] {
            for n in [1, 5] {
                for _ in 0..3 {
                    let v = Vlad::random(&mut rng, k, d, n);
                    let p = v.params();
                    let y = netvlad_forward(&v.x, &p).unwrap().vector;
                    for (a, b) in y.iter().zip(v.literal()) {
                        worst_fwd = worst_fwd.max((a - b).abs());
                    }
                    worst_norm = worst_norm.max((y.iter().map(|t| t * t).sum::<f64>().sqrt() - 1.0).abs());
                    let mut shuffled = v.x.clone();
                    shuffled.reverse();
                    let y2 = netvlad_forward(&shuffled, &p).unwrap().vector;
                    for (a, b) in y.iter().zip(&y2) {
                        worst_perm = worst_perm.max((a - b).abs());
                    }

                    let u: Vec<f64> = (0..k * d).map(|_| rng.random_range(-1.0..1.0)).collect();
                    let g = netvlad_gradients(&v.x, &p, &u).unwrap();
                    let analytic = [g.features.concat(), g.centers, g.assign_weights, g.assign_biases].concat();
                    let f = |t: &[f64]| -> f64 {
                        let vt = v.with_theta(t);
                        let y = netvlad_forward(&vt.x, &vt.params()).unwrap().vector;
                        y.iter().zip(&u).map(|(a, b)| a * b).sum()
                    };
                    let theta = v.theta();
                    let eps = 1e-5;
                    for (i, a) in analytic.iter().enumerate() {
                        let mut t = theta.clone();
                        t[i] += eps;
                        let plus = f(&t);
                        t[i] -= 2.0 * eps;
                        let num = (plus - f(&t)) / (2.0 * eps);
                        worst_grad = worst_grad.max((a - num).abs() / 1f64.max(a.abs()).max(num.abs()));
                    }
                }
            }
        }
    }
    check(worst_norm < 1e-9, || format!("norm deviation {worst_norm:e}"))?;
    check(worst_perm < 1e-12, || format!("permutation deviation {worst_perm:e}"))?;
    check(worst_fwd < 1e-12, || format!("forward deviation {worst_fwd:e}"))?;
    check(worst_grad < 1e-4, || format!("gradient relative error {worst_grad:e}"))?;
    Ok(format!(
        "norm {worst_norm:.1e}, permutation {worst_perm:.1e}, forward {worst_fwd:.1e}, gradient rel {worst_grad:.1e}"
    ))
}

// ----------------------------------------------------------------- filters

fn record(words: &[&str], conf: f64, w: f64, h: f64) -> DetectionRecord<f64> {
    let words = words.iter().map(|s| s.to_string()).collect();
    DetectionRecord::new("v", 0, words, conf, BBox::new(0.0, 0.0, w, h).unwrap(), None).unwrap()
}

fn filters() -> Outcome {
    const WORDS: [&str; 5] = ["person", "Person", "guitar", "dog", "tree"];
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let recs: Vec<DetectionRecord<f64>> = (0..1000)
        .map(|_| {
            let w = [WORDS[rng.random_range(0..5)], WORDS[rng.random_range(0..5)]];
            let conf = [0.019, 0.02, rng.random_range(0.0..1.0)][rng.random_range(0..3)];
            let side = [19.0, 20.0, rng.random_range(1.0..80.0)];
            let (a, b) = (side[rng.random_range(0..3)], side[rng.random_range(0..3)]);
            record(&w[..rng.random_range(1..=2)], conf, a, b)
        })
        .collect();
    let person = FilterConfig::<f64>::default().person_words;
    type F<'a> = Box<dyn Fn(&[DetectionRecord<f64>]) -> Vec<DetectionRecord<f64>> + 'a>;
    let fs: Vec<(&str, F)> = vec![
        ("confidence", Box::new(|d| filter_by_confidence(d, 0.02))),
        ("bbox", Box::new(|d| filter_by_bbox(d, 20))),
        ("person", Box::new(|d| filter_person(d, &person))),
    ];
    for (name, f) in &fs {
        let once = f(&recs);
        check(f(&once) == once, || format!("{name} not idempotent"))?;
        let mut it = recs.iter();
        check(once.iter().all(|r| it.any(|x| x == r)), || format!("{name} not a subsequence"))?;
    }
    for (i, (a, f)) in fs.iter().enumerate() {
        for (b, g) in &fs[i + 1..] {
            check(g(&f(&recs)) == f(&g(&recs)), || format!("{a} and {b} do not commute"))?;
        }
    }
    let edge = vec![
        record(&["a"], 0.5, 19.0, 40.0),
        record(&["b"], 0.5, 20.0, 20.0),
        record(&["c"], 0.019, 40.0, 40.0),
        record(&["d"], 0.02, 40.0, 40.0),
    ];
    check(filter_by_bbox(&edge, 20) == edge[1..].to_vec(), || "bbox boundary".into())?;
    check(filter_by_confidence(&edge, 0.02) == [&edge[..2], &edge[3..]].concat(), || "confidence boundary".into())?;
    let kept = fs.iter().fold(recs.clone(), |acc, (_, f)| f(&acc)).len();
    Ok(format!("1000 records, {kept} survive all three; boundaries 19/20 px and 0.019/0.02 exact"))
}

fn relevance() -> Outcome {
    let mut t = EmbeddingTable::new(3).unwrap();
    t.insert("playing", vec![1.0, 0.0, 0.0]).unwrap();
    t.insert("guitar", vec![0.0, 1.0, 0.0]).unwrap();
    t.insert("tree", vec![0.0, 0.0, 1.0]).unwrap();
    let dets = vec![record(&["guitar"], 0.9, 40.0, 40.0), record(&["tree"], 0.9, 40.0, 40.0)];
    // s("playing guitar") = [0.5, 0.5, 0]: cos with guitar = 1/sqrt(2), with tree = 0
    let kept = filter_by_relevance(&dets, &["playing", "guitar"], &t, 0.5).unwrap();
    let names: Vec<&str> = kept.iter().map(|d| d.label_words[0].as_str()).collect();
    check(names == ["guitar"], || format!("kept {names:?}"))?;
    Ok("kept {guitar} (cos 0.7071), discarded {tree} (cos 0)".into())
}

// ---------------------------------------------------------------- training

fn training() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for i in 0..200 {
        let s = if i % 2 == 0 { 1.0 } else { -1.0 };
        xs.push(vec![2.0 * s + rng.random_range(-1.0..1.0), s + rng.random_range(-1.0..1.0)]);
        ys.push(i % 2);
    }
    let init = LinearModel::zeros(2, 2).unwrap();
    let ce0 = mean_cross_entropy(&init, &xs, &ys).unwrap();
    check((ce0 - 2f64.ln()).abs() < 1e-12, || format!("initial loss {ce0}"))?;

    let cfg = TrainConfig { max_epochs: 200, ..TrainConfig::<f64>::default() };
    check(
        cfg.initial_lr == 0.001 && cfg.momentum == 0.7 && cfg.weight_decay == 0.0005,
        || "defaults drifted".into(),
    )?;
    let (m, log) = train_linear_classifier(&xs, &ys, 2, &cfg).unwrap();
    let correct = xs
        .iter()
        .zip(&ys)
        .filter(|(x, &y)| {
            let z = m.logits(x).unwrap();
            usize::from(z[1] > z[0]) == y
        })
        .count();
    check(correct == 200, || format!("training accuracy {correct}/200"))?;
    check((log[0].loss - 2f64.ln()).abs() < 0.05, || "first epoch loss far from ln 2".into())?;

    let sched = TrainConfig { decay_factor: 0.8, ..TrainConfig::<f64>::default() };
    let lrs = [lr_at(0, &sched), lr_at(10, &sched), lr_at(20, &sched)];
    check(lrs == [0.001, 0.0008, 0.00064], || format!("lr_at gave {lrs:?}"))?;
    Ok(format!("200/200 correct after 200 epochs; lr_at = {lrs:?}; initial loss = ln 2"))
}

// --------------------------------------------------------------- end to end

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_a3d")
}

fn run(cwd: &Path, args: &[&str]) -> Result<std::process::Output, String> {
    let out = Command::new(bin())
        .args(args)
        .current_dir(cwd)
        .env_remove("A3D_OUT_DIR")
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(out)
    } else {
        Err(format!(
            "a3d {} exited {:?}: {}",
            args.join(" "),
            out.status.code(),
            String::from_utf8_lossy(&out.stderr)
        ))
    }
}

fn ordering() -> Outcome {
    let cfg = SyntheticConfig::default();
    let ds: DatasetF64 = gen_synthetic(&cfg, 0).map_err(|e| e.to_string())?;
    let w = FusionWeights::default();
    let low = ds
        .samples
        .iter()
        .filter(|s| {
            let (fs, ft) = ds.stream_pair(&s.video_id).unwrap();
            fuse_revised(fs, ft, &w).unwrap().max() <= 0.1
        })
        .count();
    check(ds.samples.len() >= 500, || format!("{} videos", ds.samples.len()))?;
    check(low * 10 == ds.samples.len() * 3, || format!("{low} of {} low-confidence", ds.samples.len()))?;

    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let out = run(dir.path(), &["demo", "--out-dir", "demo"])?;
    let metrics = fs::read_to_string(dir.path().join("demo/metrics.tsv")).map_err(|e| e.to_string())?;
    let get = |m: &str| lookup(&metrics, m, "mean").ok_or_else(|| format!("{m} missing"));
    let (p1, p2, joint) = (get("p1.accuracy")?, get("p2.accuracy")?, get("joint.accuracy")?);
    check(joint - p1 >= 0.05, || format!("joint {joint:.4} - p1 {p1:.4} < 5 pp"))?;
    check(p1 > p2, || format!("p1 {p1:.4} <= p2 {p2:.4}"))?;
    check(String::from_utf8_lossy(&out.stdout).contains("ordering joint >= p1 > p2: ok"), || "demo verdict".into())?;
    Ok(format!(
        "{} videos, {low} low-confidence; joint {joint:.4}, p1 {p1:.4}, p2 {p2:.4} (margin {:.1} pp)",
        ds.samples.len(),
        100.0 * (joint - p1)
    ))
}

fn read_all(dir: &Path) -> Result<Vec<(PathBuf, Vec<u8>)>, String> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| e.to_string())?
        .map(|e| e.map(|e| e.path()).map_err(|e| e.to_string()))
        .collect::<Result<_, _>>()?;
    files.sort();
    files
        .into_iter()
        .map(|p| fs::read(&p).map(|b| (p, b)).map_err(|e| e.to_string()))
        .collect()
}

fn determinism() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let root = tmp.path();
    let steps: Vec<(&str, Vec<&str>)> = vec![
        ("gen", vec!["gen", "--seed", "3", "--videos", "300", "--out-dir", "gen"]),
        ("filter", vec!["filter", "--detections", "gen/detections.tsv", "--relevance", "--dataset", "gen", "--out-dir", "filter"]),
        ("encode", vec!["encode", "--detections", "filter/filtered_detections.tsv", "--out-dir", "encode-mp"]),
        ("encode", vec!["encode", "--detections", "filter/filtered_detections.tsv", "--encoder", "netvlad", "--clusters", "3", "--seed", "5", "--out-dir", "encode-nv"]),
        ("train", vec!["train", "--dataset", "gen", "--out-dir", "train"]),
        ("train", vec!["train", "--dataset", "gen", "--strategy", "netvlad", "--clusters", "2", "--initial-lr", "1", "--max-epochs", "4", "--out-dir", "train-nv"]),
        ("train", vec!["train", "--dataset", "gen", "--strategy", "mean-pool", "--batch-size", "8", "--out-dir", "train-mp"]),
        ("encode", vec!["encode", "--detections", "gen/detections.tsv", "--encoder", "netvlad", "--model", "train-nv/model.txt", "--out-dir", "encode-model"]),
        ("predict", vec!["predict", "--dataset", "gen", "--model", "train/model.txt", "--fusion", "original", "--out-dir", "predict"]),
        ("evaluate", vec!["evaluate", "--samples", "gen/samples.tsv", "--predictions", "predict/p1.tsv,predict/p2.tsv,predict/joint.tsv", "--out-dir", "evaluate"]),
        ("demo", vec!["demo", "--seed", "2", "--videos", "500", "--out-dir", "demo"]),
    ];
    let elsewhere = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut compared = 0;
    for (i, (cmd, args)) in steps.iter().enumerate() {
        run(root, args)?;
        let out_dir = root.join(args.last().unwrap());
        let manifest = out_dir.join(RunManifest::file_name(cmd));
        let m = RunManifest::load(&manifest).map_err(|e| e.to_string())?;
        let before = read_all(&out_dir)?;

        // replay from another working directory into a fresh output directory
        let fresh = elsewhere.path().join(format!("{i}"));
        run(elsewhere.path(), &["rerun", "--manifest", manifest.to_str().unwrap(), "--out-dir", fresh.to_str().unwrap()])?;
        for name in &m.outputs {
            let a = fs::read(out_dir.join(name)).map_err(|e| e.to_string())?;
            let b = fs::read(fresh.join(name)).map_err(|e| e.to_string())?;
            check(a == b, || format!("{cmd}: {name} differs on rerun"))?;
            compared += 1;
        }

        // replay in place: every file, manifest included, unchanged
        run(elsewhere.path(), &["rerun", "--manifest", manifest.to_str().unwrap()])?;
        check(read_all(&out_dir)? == before, || format!("{cmd}: in-place rerun changed {}", out_dir.display()))?;
    }
    Ok(format!("{} runs over 7 commands, {compared} output files byte-identical on rerun", steps.len()))
}

// -------------------------------------------------------------------- main

fn main() {
    let criteria: [(&str, fn() -> Outcome, Duration); 8] = [
        ("gating law", gating_law, Duration::from_secs(1)),
        ("fusion correctness", fusion_correctness, Duration::from_secs(1)),
        ("NetVLAD forward and gradients", netvlad, Duration::from_secs(30)),
        ("attribute filters", filters, Duration::from_secs(5)),
        ("relevance filter", relevance, Duration::from_secs(1)),
        ("linear training", training, Duration::from_secs(30)),
        ("end-to-end accuracy ordering", ordering, Duration::from_secs(60)),
        ("manifest determinism", determinism, Duration::MAX),
    ];
    let mut failed = BTreeSet::new();
    for (i, (name, f, limit)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let result = std::panic::catch_unwind(f).unwrap_or_else(|_| Err("panicked".into()));
        let took = start.elapsed();
        let result = result.and_then(|detail| {
            if took <= *limit {
                Ok(detail)
            } else {
                Err(format!("took {took:.2?}, limit {limit:?}; {detail}"))
            }
        });
        match result {
            Ok(detail) => println!("criterion {} PASS  {name} ({took:.2?}): {detail}", i + 1),
            Err(why) => {
                println!("criterion {} FAIL  {name} ({took:.2?}): {why}", i + 1);
                failed.insert(i + 1);
            }
        }
    }
    if failed.is_empty() {
        println!("acceptance: all {} criteria passed", criteria.len());
    } else {
        println!("acceptance: failed criteria {failed:?}");
        std::process::exit(1);
    }
}
