use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use cwaug::idx::{self, IdxError};
use cwaug::knn::{self, EvalConfig};
use cwaug::pipeline::{score_histogram, DeformParams};
use cwaug::{AugmentConfig, Augmenter, Cwssim, GrayImage, ImageSet, LabelSet};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use crate::manifest::{sidecar_path, RunRecord};
use crate::{AugmentArgs, CwssimArgs, DeformArgs, ElasticOpts, EvalArgs, StatsArgs, SweepArgs};

pub const EXIT_USAGE: u8 = 1;
pub const EXIT_FORMAT: u8 = 2;
pub const EXIT_CONFIG: u8 = 3;

pub const SWEEP_HEADER: &str =
    "alpha,sigma,threshold,accepted_rate,mean_score,knn_error_filtered,knn_error_unfiltered,seed";
pub const CANDIDATE_HEADER: &str = "image_index,slot,attempt,score,accepted";

#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub error: Option<anyhow::Error>,
}

impl Failure {
    pub fn new(code: u8, error: anyhow::Error) -> Self {
        Self {
            code,
            error: Some(error),
        }
    }

    pub fn silent(code: u8) -> Self {
        Self { code, error: None }
    }

    pub fn usage(msg: impl Into<String>) -> Self {
        Self::new(EXIT_USAGE, anyhow!(msg.into()))
    }

    pub fn io(error: anyhow::Error) -> Self {
        Self::new(EXIT_USAGE, error)
    }
}

impl From<cwaug::Error> for Failure {
    fn from(e: cwaug::Error) -> Self {
        use cwaug::Error::*;
        let code = match &e {
            InvalidParams(_) => EXIT_USAGE,
            ConfigUnusable { .. } | PadTooSmall { .. } => EXIT_CONFIG,
            Idx(_) | DimMismatch { .. } | LengthMismatch(..) | EmptyTrainingSet | LabelCountMismatch { .. } => {
                EXIT_FORMAT
            }
        };
        Self::new(code, e.into())
    }
}

fn format_error(path: &Path, e: IdxError) -> Failure {
    let code = match e {
        IdxError::Io(_) => EXIT_USAGE,
        _ => EXIT_FORMAT,
    };
    Failure::new(
        code,
        anyhow::Error::new(e).context(format!("reading {}", path.display())),
    )
}

fn open(path: &Path) -> Result<File, Failure> {
    File::open(path)
        .with_context(|| format!("opening {}", path.display()))
        .map_err(Failure::io)
}

pub fn load_images(path: &Path) -> Result<ImageSet, Failure> {
    idx::read_images(open(path)?).map_err(|e| format_error(path, e))
}

pub fn load_labels(path: &Path) -> Result<LabelSet, Failure> {
    idx::read_labels(open(path)?, true).map_err(|e| format_error(path, e))
}

fn create(path: &Path) -> Result<BufWriter<File>, Failure> {
    File::create(path)
        .map(BufWriter::new)
        .with_context(|| format!("creating {}", path.display()))
        .map_err(Failure::io)
}

fn save_images(path: &Path, set: &ImageSet) -> Result<(), Failure> {
    idx::write_images(set, create(path)?)
        .with_context(|| format!("writing {}", path.display()))
        .map_err(Failure::io)
}

fn save_labels(path: &Path, set: &LabelSet) -> Result<(), Failure> {
    idx::write_labels(set, create(path)?)
        .with_context(|| format!("writing {}", path.display()))
        .map_err(Failure::io)
}

fn save_text(path: &Path, text: &str) -> Result<(), Failure> {
    fs::write(path, text)
        .with_context(|| format!("writing {}", path.display()))
        .map_err(Failure::io)
}

fn save_pgm(path: &Path, img: &GrayImage) -> Result<(), Failure> {
    img.write_pgm(create(path)?)
        .with_context(|| format!("writing {}", path.display()))
        .map_err(Failure::io)
}

fn ensure_dir(dir: &Path) -> Result<(), Failure> {
    fs::create_dir_all(dir)
        .with_context(|| format!("creating {}", dir.display()))
        .map_err(Failure::io)
}

fn to_json<T: Serialize>(v: &T) -> serde_json::Value {
    serde_json::to_value(v).expect("config types serialize")
}

fn deform_params(o: &ElasticOpts) -> DeformParams {
    DeformParams {
        alpha: o.alpha,
        sigma: o.sigma,
        norm: o.norm,
    }
}

fn check_labels(images: &ImageSet, labels: &LabelSet) -> Result<(), Failure> {
    if images.len() != labels.len() {
        return Err(cwaug::Error::LabelCountMismatch {
            images: images.len(),
            labels: labels.len(),
        }
        .into());
    }
    Ok(())
}

/// Parses `a,b,c` or the inclusive range `start:end:step`.
pub fn parse_list(list: &str) -> Result<Vec<f64>, Failure> {
    let bad = || Failure::usage(format!("cannot parse list '{list}'"));
    let list = list.trim();
    if list.contains(':') {
        let parts: Vec<f64> = list
            .split(':')
            .map(|p| p.trim().parse::<f64>().map_err(|_| bad()))
            .collect::<Result<_, _>>()?;
        let [start, end, step] = parts[..] else {
            return Err(bad());
        };
        if step.is_nan() || step <= 0.0 || end < start {
            return Err(bad());
        }
        let n = ((end - start) / step + 1e-9).floor() as usize;
        Ok((0..=n).map(|i| start + i as f64 * step).collect())
    } else {
        list.split(',')
            .map(|p| p.trim().parse::<f64>().map_err(|_| bad()))
            .collect()
    }
}

pub fn deform(a: &DeformArgs) -> Result<RunRecord, Failure> {
    let params = deform_params(&a.elastic);
    params.with_seed(a.seed).validate()?;
    let images = load_images(&a.input)?;
    let deformed = images
        .images()
        .par_iter()
        .enumerate()
        .map(|(i, img)| {
            let seed = cwaug::derive_seed(a.seed, i as u64, 0);
            cwaug::elastic_deform(img, &params.with_seed(seed))
        })
        .collect::<cwaug::Result<Vec<_>>>()?;
    let out = ImageSet::new(images.rows(), images.cols(), deformed)?;
    save_images(&a.output, &out)?;
    println!("deformed {} images -> {}", out.len(), a.output.display());
    Ok(RunRecord {
        config: json!({ "elastic": to_json(&params) }),
        seed: Some(a.seed),
        inputs: vec![a.input.clone()],
        outputs: vec![a.output.clone()],
        manifest_path: Some(sidecar_path(&a.output)),
    })
}

fn candidate_csv(report: &cwaug::AugmentReport) -> String {
    let mut s = String::from(CANDIDATE_HEADER);
    s.push('\n');
    for r in &report.scores {
        let _ = writeln!(
            s,
            "{},{},{},{},{}",
            r.image_index, r.slot, r.attempt, r.score, r.accepted
        );
    }
    s
}

pub fn augment(a: &AugmentArgs) -> Result<RunRecord, Failure> {
    let cfg = AugmentConfig {
        elastic: deform_params(&a.elastic),
        cwssim: a.cwssim.params(),
        threshold: a.threshold,
        multiplier: a.multiplier,
        max_attempts: a.attempts,
        seed: a.seed,
    };
    cfg.validate()?;
    let images = load_images(&a.images)?;
    let labels = load_labels(&a.labels)?;
    check_labels(&images, &labels)?;
    let augmenter = Augmenter::new(cfg.clone(), images.rows(), images.cols())?;
    let out = augmenter.augment_dataset(&images, &labels)?;

    save_images(&a.out_images, &out.images)?;
    save_labels(&a.out_labels, &out.labels)?;
    let mut outputs = vec![a.out_images.clone(), a.out_labels.clone()];
    if let Some(path) = &a.report {
        let text = serde_json::to_string_pretty(&out.report).map_err(|e| Failure::io(e.into()))?;
        save_text(path, &(text + "\n"))?;
        outputs.push(path.clone());
    }
    if let Some(path) = &a.csv {
        save_text(path, &candidate_csv(&out.report))?;
        outputs.push(path.clone());
    }
    if let Some(dir) = &a.dump_rejected {
        ensure_dir(dir)?;
        for r in out.report.rejected_candidates() {
            let img = augmenter.candidate(&images.images()[r.image_index], r.image_index, r.slot, r.attempt)?;
            let name = format!(
                "rejected_i{:05}_s{}_a{}_score{:.4}.pgm",
                r.image_index, r.slot, r.attempt, r.score
            );
            save_pgm(&dir.join(name), &img)?;
        }
    }
    let r = &out.report;
    println!(
        "accepted {} of {} requested ({} candidates, {} exhausted slots); {} images written",
        r.accepted,
        r.requested,
        r.candidates(),
        r.exhausted_slots,
        out.images.len()
    );
    Ok(RunRecord {
        config: to_json(&cfg),
        seed: Some(a.seed),
        inputs: vec![a.images.clone(), a.labels.clone()],
        outputs,
        manifest_path: Some(sidecar_path(&a.out_images)),
    })
}

struct Split {
    train_images: ImageSet,
    train_labels: LabelSet,
    test_images: ImageSet,
    test_labels: LabelSet,
}

fn sweep_split(a: &SweepArgs) -> Result<Split, Failure> {
    let images = load_images(&a.images)?;
    let labels = load_labels(&a.labels)?;
    check_labels(&images, &labels)?;
    match (&a.test_images, &a.test_labels) {
        (Some(ti), Some(tl)) => {
            let test_images = load_images(ti)?;
            let test_labels = load_labels(tl)?;
            check_labels(&test_images, &test_labels)?;
            let train_idx = knn::subsample(images.len(), a.train_size.unwrap_or(usize::MAX), a.split_seed);
            let test_idx = knn::subsample(test_images.len(), a.test_size.unwrap_or(usize::MAX), a.split_seed);
            Ok(Split {
                train_images: images.select(&train_idx),
                train_labels: labels.select(&train_idx),
                test_images: test_images.select(&test_idx),
                test_labels: test_labels.select(&test_idx),
            })
        }
        _ => {
            let (train_idx, test_idx) = knn::split_indices(
                images.len(),
                a.train_size.unwrap_or(500),
                a.test_size.unwrap_or(500),
                a.split_seed,
            )?;
            Ok(Split {
                train_images: images.select(&train_idx),
                train_labels: labels.select(&train_idx),
                test_images: images.select(&test_idx),
                test_labels: labels.select(&test_idx),
            })
        }
    }
}

pub fn sweep(a: &SweepArgs) -> Result<RunRecord, Failure> {
    let alphas = parse_list(&a.alphas)?;
    let sigmas = parse_list(&a.sigmas)?;
    let thresholds = parse_list(&a.thresholds)?;
    let eval_cfg = EvalConfig {
        k: a.k,
        ..EvalConfig::default()
    };
    eval_cfg.validate()?;
    let base = |alpha: f64, sigma: f64, threshold: f64| AugmentConfig {
        elastic: DeformParams {
            alpha,
            sigma,
            norm: a.norm,
        },
        cwssim: a.cwssim.params(),
        threshold,
        multiplier: a.multiplier,
        max_attempts: a.attempts,
        seed: a.seed,
    };
    // fail on bad parameters before any work
    for &alpha in &alphas {
        for &sigma in &sigmas {
            for &t in &thresholds {
                base(alpha, sigma, t).validate()?;
            }
        }
    }
    let split = sweep_split(a)?;
    let error_of = |images: &ImageSet, labels: &LabelSet| -> Result<f64, Failure> {
        Ok(knn::evaluate(images, labels, &split.test_images, &split.test_labels, &eval_cfg)?.error_rate)
    };

    let mut csv = String::from(SWEEP_HEADER);
    csv.push('\n');
    for &alpha in &alphas {
        for &sigma in &sigmas {
            let unfiltered = {
                let cfg = base(alpha, sigma, 0.0);
                let aug = Augmenter::new(cfg, split.train_images.rows(), split.train_images.cols())?;
                let out = aug.augment_dataset(&split.train_images, &split.train_labels)?;
                error_of(&out.images, &out.labels)?
            };
            for &threshold in &thresholds {
                let cfg = base(alpha, sigma, threshold);
                let aug = Augmenter::new(cfg, split.train_images.rows(), split.train_images.cols())?;
                let out = aug.augment_dataset(&split.train_images, &split.train_labels)?;
                let filtered = error_of(&out.images, &out.labels)?;
                let _ = writeln!(
                    csv,
                    "{},{},{},{},{},{},{},{}",
                    alpha,
                    sigma,
                    threshold,
                    out.report.accepted_rate(),
                    out.report.mean_score(),
                    filtered,
                    unfiltered,
                    a.seed
                );
                log::info!(
                    "alpha {alpha} sigma {sigma} threshold {threshold}: filtered {filtered} unfiltered {unfiltered}"
                );
            }
        }
    }
    save_text(&a.output, &csv)?;
    println!(
        "{} sweep cells -> {}",
        alphas.len() * sigmas.len() * thresholds.len(),
        a.output.display()
    );
    let mut inputs = vec![a.images.clone(), a.labels.clone()];
    inputs.extend(a.test_images.iter().cloned());
    inputs.extend(a.test_labels.iter().cloned());
    Ok(RunRecord {
        config: json!({
            "alphas": alphas,
            "sigmas": sigmas,
            "thresholds": thresholds,
            "augment": to_json(&base(f64::NAN, f64::NAN, f64::NAN)),
            "eval": to_json(&eval_cfg),
            "train_size": split.train_images.len(),
            "test_size": split.test_images.len(),
            "split_seed": a.split_seed,
        }),
        seed: Some(a.seed),
        inputs,
        outputs: vec![a.output.clone()],
        manifest_path: Some(sidecar_path(&a.output)),
    })
}

pub fn cwssim(a: &CwssimArgs) -> Result<RunRecord, Failure> {
    let params = a.cwssim.params();
    params.validate()?;
    let (x, y, inputs) = match &a.idx {
        Some(path) => {
            let set = load_images(path)?;
            let pick = |s: &str| -> Result<GrayImage, Failure> {
                let i: usize = s
                    .parse()
                    .map_err(|_| Failure::usage(format!("'{s}' is not an image index")))?;
                set.get(i)
                    .cloned()
                    .ok_or_else(|| Failure::usage(format!("index {i} out of range ({} images)", set.len())))
            };
            (pick(&a.operands[0])?, pick(&a.operands[1])?, vec![path.clone()])
        }
        None => {
            let read = |s: &str| -> Result<GrayImage, Failure> {
                let path = PathBuf::from(s);
                GrayImage::read_pgm(open(&path)?)
                    .map_err(|e| Failure::new(EXIT_FORMAT, anyhow::Error::new(e).context(format!("reading {s}"))))
            };
            (
                read(&a.operands[0])?,
                read(&a.operands[1])?,
                a.operands.iter().map(PathBuf::from).collect(),
            )
        }
    };
    if x.dims() != y.dims() {
        return Err(cwaug::Error::DimMismatch {
            left: x.dims(),
            right: y.dims(),
        }
        .into());
    }
    let scorer = Cwssim::new(params.clone(), x.height(), x.width())?;
    println!("{:.6}", scorer.score(&x, &y)?);
    Ok(RunRecord {
        config: to_json(&params),
        seed: None,
        inputs,
        outputs: vec![],
        manifest_path: a.manifest.clone(),
    })
}

pub fn eval(a: &EvalArgs) -> Result<RunRecord, Failure> {
    let cfg = EvalConfig {
        k: a.k,
        metric: a.metric,
        cwssim: a.cwssim.params(),
        train_subset: a.train_subset,
        test_subset: a.test_subset,
        subset_seed: a.subset_seed,
    };
    cfg.validate()?;
    let train_images = load_images(&a.train_images)?;
    let train_labels = load_labels(&a.train_labels)?;
    let test_images = load_images(&a.test_images)?;
    let test_labels = load_labels(&a.test_labels)?;
    check_labels(&train_images, &train_labels)?;
    let result = knn::evaluate(&train_images, &train_labels, &test_images, &test_labels, &cfg)?;
    let text = serde_json::to_string(&result).map_err(|e| Failure::io(e.into()))?;
    println!("{text}");
    let mut outputs = vec![];
    if let Some(path) = &a.output {
        save_text(path, &(text + "\n"))?;
        outputs.push(path.clone());
    }
    Ok(RunRecord {
        config: to_json(&cfg),
        seed: Some(a.subset_seed),
        inputs: vec![
            a.train_images.clone(),
            a.train_labels.clone(),
            a.test_images.clone(),
            a.test_labels.clone(),
        ],
        manifest_path: a.manifest.clone().or_else(|| a.output.as_deref().map(sidecar_path)),
        outputs,
    })
}

#[derive(Serialize)]
struct StatsSummary {
    count: usize,
    threshold: f64,
    mean: f64,
    min: f64,
    max: f64,
    at_or_below_threshold: usize,
    histogram: Vec<u64>,
}

pub fn stats(a: &StatsArgs) -> Result<RunRecord, Failure> {
    let cfg = AugmentConfig {
        elastic: deform_params(&a.elastic),
        cwssim: a.cwssim.params(),
        threshold: a.threshold,
        multiplier: 1,
        max_attempts: 1,
        seed: a.seed,
    };
    cfg.validate()?;
    let images = load_images(&a.images)?;
    let n = a.limit.unwrap_or(usize::MAX).min(images.len());
    let augmenter = Augmenter::new(cfg.clone(), images.rows(), images.cols())?;
    let scorer = augmenter.scorer();
    let scored = images.images()[..n]
        .par_iter()
        .enumerate()
        .map(|(i, img)| {
            let cand = augmenter.candidate(img, i, 0, 0)?;
            Ok((scorer.score(img, &cand)?, cand))
        })
        .collect::<cwaug::Result<Vec<_>>>()?;
    let scores: Vec<f64> = scored.iter().map(|s| s.0).collect();
    let summary = StatsSummary {
        count: n,
        threshold: a.threshold,
        mean: if n == 0 {
            0.0
        } else {
            scores.iter().sum::<f64>() / n as f64
        },
        min: scores.iter().cloned().fold(f64::INFINITY, f64::min).min(1.0),
        max: scores.iter().cloned().fold(0.0, f64::max),
        at_or_below_threshold: scores.iter().filter(|&&s| s <= a.threshold).count(),
        histogram: score_histogram(&scores),
    };
    let text = serde_json::to_string_pretty(&summary).map_err(|e| Failure::io(e.into()))?;
    println!("{text}");
    let mut outputs = vec![];
    if let Some(path) = &a.output {
        save_text(path, &(text + "\n"))?;
        outputs.push(path.clone());
    }
    if let Some(dir) = &a.dump_rejected {
        ensure_dir(dir)?;
        for (i, (score, cand)) in scored.iter().enumerate() {
            if *score <= a.threshold {
                save_pgm(&dir.join(format!("{i:05}_source.pgm")), &images.images()[i])?;
                save_pgm(&dir.join(format!("{i:05}_candidate_score{score:.4}.pgm")), cand)?;
            }
        }
    }
    if let (Some(index), Some(dir)) = (a.subbands, &a.subband_dir) {
        let img = images
            .get(index)
            .ok_or_else(|| Failure::usage(format!("index {index} out of range ({} images)", images.len())))?;
        ensure_dir(dir)?;
        let bands = scorer.decompose(img)?;
        for l in 1..=bands.levels() {
            for m in 1..=bands.orientations() {
                save_pgm(
                    &dir.join(format!("level{l}_orient{m}.pgm")),
                    &bands.band(l, m).magnitude_image(),
                )?;
            }
        }
        save_pgm(&dir.join("highpass.pgm"), &bands.highpass_residual.magnitude_image())?;
        save_pgm(&dir.join("lowpass.pgm"), &bands.lowpass_residual.magnitude_image())?;
    }
    Ok(RunRecord {
        config: to_json(&cfg),
        seed: Some(a.seed),
        inputs: vec![a.images.clone()],
        manifest_path: a.manifest.clone().or_else(|| a.output.as_deref().map(sidecar_path)),
        outputs,
    })
}
