//! Subcommand implementations.

use std::collections::hash_map::Entry;
use std::collections::{BTreeMap, HashMap};
use std::fmt::Write;
use std::fs;
use std::path::{Path, PathBuf};

use a3d::attributes::{filter_by_relevance, filter_label_free};
use a3d::datamodel::io::{
    load_detections, load_model, load_samples, load_tagged, save_detections, save_model, save_tagged, write_text,
    TaggedVector,
};
use a3d::datamodel::synth::gen_synthetic;
use a3d::datamodel::{Dataset, Split, VideoSample};
use a3d::encoding::{mean_pool, netvlad_forward, NetVladParams};
use a3d::fusion::ProbabilityDistribution;
use a3d::inference::{evaluate, predict_videos, run_pipeline, EvalReport, PipelineReport, Route};
use a3d::model::Strategy;
use a3d::training::train_attribute_model;
use a3d::{DatasetF64, DetectionF64, Error};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::args::{Command, DemoArgs, EncodeArgs, EvaluateArgs, FilterArgs, GenArgs, PredictArgs, TrainArgs};
use crate::manifest::RunManifest;
use crate::{report, CliError};

pub const FILTERED_FILE: &str = "filtered_detections.tsv";
pub const REPRESENTATIONS_FILE: &str = "representations.tsv";
pub const MODEL_FILE: &str = "model.txt";
pub const LOSS_FILE: &str = "loss.tsv";
pub const P1_FILE: &str = "p1.tsv";
pub const P2_FILE: &str = "p2.tsv";
pub const JOINT_FILE: &str = "joint.tsv";
pub const REPORT_FILE: &str = "report.txt";
pub const METRICS_FILE: &str = "metrics.tsv";

/// Tag prefix marking joint predictions with the pipeline the gate chose.
const ROUTE_TAG: &str = "route:";

#[derive(Debug, Clone, PartialEq)]
pub struct Execution {
    pub out_dir: PathBuf,
    pub outputs: Vec<String>,
    pub manifest: PathBuf,
}

/// Runs a command, writes its outputs and manifest.
///
/// A failed demo ordering check still writes everything before returning
/// [`CliError::Check`].
pub fn execute(cmd: &Command) -> Result<Execution, CliError> {
    if let Command::Rerun(r) = cmd {
        let mut m = RunManifest::load(&r.manifest)?;
        if let Some(dir) = &r.out_dir {
            *out_dir_mut(&mut m.run) = dir.clone();
        }
        return execute(&m.run);
    }
    let run = resolve(cmd)?;
    let out_dir = out_dir_mut(&mut run.clone()).clone();
    fs::create_dir_all(&out_dir).map_err(|e| Error::Io {
        path: out_dir.clone(),
        source: e,
    })?;
    let mut check = Ok(());
    let outputs = match &run {
        Command::Gen(a) => gen(a, &out_dir)?,
        Command::Filter(a) => filter(a, &out_dir)?,
        Command::Encode(a) => encode(a, &out_dir)?,
        Command::Train(a) => train(a, &out_dir)?,
        Command::Predict(a) => predict(a, &out_dir)?,
        Command::Evaluate(a) => evaluate_files(a, &out_dir)?,
        Command::Demo(a) => {
            let (outputs, verdict) = demo(a, &out_dir)?;
            check = verdict;
            outputs
        }
        Command::Rerun(_) => unreachable!("handled above"),
    };
    let manifest = RunManifest::new(run, outputs.clone()).write(&out_dir)?;
    check?;
    Ok(Execution {
        out_dir,
        outputs,
        manifest,
    })
}

fn out_dir_mut(cmd: &mut Command) -> &mut PathBuf {
    match cmd {
        Command::Gen(a) => &mut a.out.out_dir,
        Command::Filter(a) => &mut a.out.out_dir,
        Command::Encode(a) => &mut a.out.out_dir,
        Command::Train(a) => &mut a.out.out_dir,
        Command::Predict(a) => &mut a.out.out_dir,
        Command::Evaluate(a) => &mut a.out.out_dir,
        Command::Demo(a) => &mut a.out.out_dir,
        Command::Rerun(_) => unreachable!("reruns are expanded before resolution"),
    }
}

fn absolute(p: &Path) -> Result<PathBuf, CliError> {
    std::path::absolute(p).map_err(|e| Error::Io { path: p.into(), source: e }.into())
}

/// Makes every path absolute so the manifest replays from any directory.
fn resolve(cmd: &Command) -> Result<Command, CliError> {
    let mut c = cmd.clone();
    *out_dir_mut(&mut c) = absolute(out_dir_mut(&mut c))?;
    match &mut c {
        Command::Filter(a) => {
            a.detections = absolute(&a.detections)?;
            if let Some(d) = &mut a.dataset {
                *d = absolute(d)?;
            }
        }
        Command::Encode(a) => {
            a.detections = absolute(&a.detections)?;
            if let Some(m) = &mut a.model {
                *m = absolute(m)?;
            }
        }
        Command::Train(a) => a.dataset = absolute(&a.dataset)?,
        Command::Predict(a) => {
            a.dataset = absolute(&a.dataset)?;
            a.model = absolute(&a.model)?;
        }
        Command::Evaluate(a) => {
            a.samples = absolute(&a.samples)?;
            for p in &mut a.predictions {
                *p = absolute(p)?;
            }
        }
        Command::Gen(_) | Command::Demo(_) | Command::Rerun(_) => {}
    }
    Ok(c)
}

fn gen(a: &GenArgs, dir: &Path) -> Result<Vec<String>, CliError> {
    let ds: DatasetF64 = gen_synthetic(&a.synth.config(), a.seed)?;
    ds.save_dir(dir)?;
    println!(
        "wrote {} videos, {} classes, {} detections to {}",
        ds.samples.len(),
        ds.vocab.len(),
        ds.detections.len(),
        dir.display()
    );
    Ok([
        DatasetF64::VOCAB_FILE,
        DatasetF64::SAMPLES_FILE,
        DatasetF64::FEATURES_FILE,
        DatasetF64::DETECTIONS_FILE,
        DatasetF64::EMBEDDINGS_FILE,
    ]
    .map(String::from)
    .to_vec())
}

fn filter(a: &FilterArgs, dir: &Path) -> Result<Vec<String>, CliError> {
    let cfg = a.filter.config();
    cfg.validate()?;
    let dets: Vec<DetectionF64> = load_detections(&a.detections)?;
    let mut kept = filter_label_free(&dets, &cfg);
    if a.relevance {
        let root = a.dataset.as_ref().ok_or_else(|| Error::Invalid("--relevance needs --dataset".into()))?;
        let ds = DatasetF64::load_dir(root)?;
        let labels: HashMap<&str, usize> = ds.samples.iter().map(|s| (s.video_id.as_str(), s.true_label)).collect();
        let mut words: HashMap<usize, Vec<String>> = HashMap::new();
        let mut relevant = Vec::with_capacity(kept.len());
        for d in kept {
            let label = *labels
                .get(d.video_id.as_str())
                .ok_or_else(|| Error::Invalid(format!("detection of unknown video {}", d.video_id)))?;
            let label_words = match words.entry(label) {
                Entry::Occupied(e) => e.into_mut(),
                Entry::Vacant(e) => e.insert(ds.vocab.words(label)?),
            };
            relevant.extend(filter_by_relevance(std::slice::from_ref(&d), label_words, &ds.embeddings, cfg.t_sim)?);
        }
        kept = relevant;
    }
    save_detections(&dir.join(FILTERED_FILE), &kept)?;
    println!("kept {} of {} detections", kept.len(), dets.len());
    Ok(vec![FILTERED_FILE.into()])
}

fn encode(a: &EncodeArgs, dir: &Path) -> Result<Vec<String>, CliError> {
    let dets: Vec<DetectionF64> = load_detections(&a.detections)?;
    let mut by_video: BTreeMap<String, Vec<Vec<f64>>> = BTreeMap::new();
    for d in dets {
        if let Some(f) = d.feature {
            by_video.entry(d.video_id).or_default().push(f.into_inner());
        }
    }
    if by_video.is_empty() {
        return Err(Error::Empty("no detection carries a feature".into()).into());
    }
    let netvlad = match (a.encoder.as_str(), &a.model) {
        ("netvlad", Some(path)) => Some(
            load_model::<f64>(path)?
                .netvlad()
                .cloned()
                .ok_or_else(|| Error::Invalid(format!("{} has no NetVLAD layer", path.display())))?,
        ),
        ("netvlad", None) => {
            let pool: Vec<&[f64]> = by_video.values().flatten().map(Vec::as_slice).collect();
            let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
            Some(NetVladParams::init_from_features(&pool, a.clusters, 1.0, &mut rng)?)
        }
        _ => None,
    };
    let mut records = Vec::with_capacity(by_video.len());
    for (video, feats) in by_video {
        let rep = match &netvlad {
            Some(p) => netvlad_forward(&feats, p)?,
            None => mean_pool(&feats)?,
        };
        records.push(TaggedVector {
            key: video,
            tag: rep.encoder.as_str().to_string(),
            values: rep.vector,
        });
    }
    save_tagged(&dir.join(REPRESENTATIONS_FILE), &records)?;
    println!("encoded {} videos with {}", records.len(), a.encoder);
    Ok(vec![REPRESENTATIONS_FILE.into()])
}

fn train(a: &TrainArgs, dir: &Path) -> Result<Vec<String>, CliError> {
    let ds = DatasetF64::load_dir(&a.dataset)?;
    let strategy: Strategy = a.strategy.parse()?;
    let (model, log) = train_attribute_model(&ds, strategy, &a.filter.config(), &a.train.config(a.seed), a.clusters)?;
    let mut text = String::new();
    for r in &log {
        let _ = writeln!(text, "{}\t{}\t{}", r.epoch, r.lr, r.loss);
        println!("epoch {:>3}  lr {:<10}  loss {:.6}", r.epoch, r.lr, r.loss);
    }
    save_model(&dir.join(MODEL_FILE), &model)?;
    write_text(&dir.join(LOSS_FILE), &text)?;
    Ok(vec![MODEL_FILE.into(), LOSS_FILE.into()])
}

fn select_split<'a>(samples: &'a [VideoSample], split: &str) -> Vec<&'a VideoSample> {
    samples
        .iter()
        .filter(|s| match split {
            "train" => s.split == Split::Train,
            "test" => s.split == Split::Test,
            _ => true,
        })
        .collect()
}

fn predict(a: &PredictArgs, dir: &Path) -> Result<Vec<String>, CliError> {
    let ds = DatasetF64::load_dir(&a.dataset)?;
    let model = load_model::<f64>(&a.model)?;
    let cfg = a.pipeline.config(&a.filter)?;
    let samples = select_split(&ds.samples, &a.split);
    if samples.is_empty() {
        return Err(Error::Empty(format!("{} split", a.split)).into());
    }
    let preds = predict_videos(&ds, &samples, &cfg, &model)?;
    let tagged = |tag: &dyn Fn(Route) -> String, pick: &dyn Fn(&a3d::inference::VideoPrediction<f64>) -> Vec<f64>| {
        preds
            .iter()
            .map(|p| TaggedVector {
                key: p.video_id.clone(),
                tag: tag(p.route),
                values: pick(p),
            })
            .collect::<Vec<_>>()
    };
    save_tagged(&dir.join(P1_FILE), &tagged(&|_| "p1".into(), &|p| p.p1.as_slice().to_vec()))?;
    save_tagged(&dir.join(P2_FILE), &tagged(&|_| "p2".into(), &|p| p.p2.as_slice().to_vec()))?;
    let route_tag = |r: Route| format!("{ROUTE_TAG}{}", if r == Route::P1 { "p1" } else { "p2" });
    save_tagged(&dir.join(JOINT_FILE), &tagged(&route_tag, &|p| p.joint.as_slice().to_vec()))?;
    let routed = preds.iter().filter(|p| p.route == Route::P2).count();
    println!("predicted {} videos, {} routed to the attribute pipeline", preds.len(), routed);
    Ok(vec![P1_FILE.into(), P2_FILE.into(), JOINT_FILE.into()])
}

fn evaluate_files(a: &EvaluateArgs, dir: &Path) -> Result<Vec<String>, CliError> {
    let all = load_samples(&a.samples)?;
    let samples = select_split(&all, &a.split);
    let mut rows = Vec::with_capacity(a.predictions.len());
    for path in &a.predictions {
        let records = load_tagged::<f64>(path)?;
        let dists = records
            .iter()
            .map(|r| ProbabilityDistribution::new(r.values.clone()).map(|p| (r.key.as_str(), p)))
            .collect::<a3d::Result<Vec<_>>>()?;
        let map: HashMap<&str, &ProbabilityDistribution<f64>> = dists.iter().map(|(k, p)| (*k, p)).collect();
        let mut rep = evaluate(&samples, &map)?;
        rep.routed_to_p2 = routed_fraction(&records, &samples);
        let name = path.file_stem().map_or_else(|| path.display().to_string(), |s| s.to_string_lossy().into_owned());
        rows.push((name, rep));
    }
    write_reports(dir, &rows)
}

/// Gate statistic for joint prediction files, whose tags record the route.
fn routed_fraction(records: &[TaggedVector<f64>], samples: &[&VideoSample]) -> Option<f64> {
    let routes: HashMap<&str, &str> = records
        .iter()
        .map(|r| r.tag.strip_prefix(ROUTE_TAG).map(|t| (r.key.as_str(), t)))
        .collect::<Option<_>>()?;
    let to_p2 = samples.iter().filter(|s| routes.get(s.video_id.as_str()) == Some(&"p2")).count();
    Some(to_p2 as f64 / samples.len() as f64)
}

fn write_reports(dir: &Path, rows: &[(String, EvalReport)]) -> Result<Vec<String>, CliError> {
    let table = report::table(rows);
    write_text(&dir.join(REPORT_FILE), &table)?;
    write_text(&dir.join(METRICS_FILE), &report::metrics(rows))?;
    print!("{table}");
    Ok(vec![REPORT_FILE.into(), METRICS_FILE.into()])
}

/// Generates a dataset, trains the attribute model and evaluates all three
/// predictors on the test split.
pub fn demo_report(a: &DemoArgs) -> Result<PipelineReport, CliError> {
    let ds: Dataset<f64> = gen_synthetic(&a.synth.config(), a.seed)?;
    let strategy: Strategy = a.strategy.parse()?;
    let (model, _) = train_attribute_model(&ds, strategy, &a.filter.config(), &a.train.config(a.seed), a.clusters)?;
    Ok(run_pipeline(&ds, &a.pipeline.config(&a.filter)?, &model)?)
}

/// `acc(joint) >= acc(p1) > acc(p2)` on mean accuracy.
pub fn ordering_holds(r: &PipelineReport) -> bool {
    r.joint.mean >= r.p1.mean && r.p1.mean > r.p2.mean
}

fn demo(a: &DemoArgs, dir: &Path) -> Result<(Vec<String>, Result<(), CliError>), CliError> {
    let r = demo_report(a)?;
    let rows = vec![
        ("p1".to_string(), r.p1.clone()),
        ("p2".to_string(), r.p2.clone()),
        ("joint".to_string(), r.joint.clone()),
    ];
    let outputs = write_reports(dir, &rows)?;
    let verdict = if ordering_holds(&r) {
        println!("ordering joint >= p1 > p2: ok");
        Ok(())
    } else {
        println!("ordering joint >= p1 > p2: FAILED");
        Err(CliError::Check(format!(
            "expected joint >= p1 > p2, got joint {:.4}, p1 {:.4}, p2 {:.4}",
            r.joint.mean, r.p1.mean, r.p2.mean
        )))
    };
    Ok((outputs, verdict))
}
