//! Config-driven experiments, labelled-fraction sweeps and Grad-CAM galleries.

mod config;
mod duration;

pub use config::{CorpusSpec, ExperimentConfig, Method};
pub use duration::{format_duration, parse_duration};

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use thiserror::Error;

use crate::baselines::{
    cnn_train_supervised, gp_fit_laplace, gp_predict, gp_select_hyperparameters, BaselineError, GpHyper,
};
use crate::dataset::{
    audit, generate_synthetic, load_manifest, partition_dataset, DatasetError, DatasetSplit, Label, LabelledImages,
    Sample, MANIFEST_NAME,
};
use crate::eval::{compute_metrics, confusion_counts, gradcam, roc_auc, EvalError, MetricsReport};
use crate::gan::{
    label_for, supervised_finetune, unsupervised_train, EpochRecord, IterationRecord, ModelCheckpoint, ModelError,
    Phase, Role, TrainedDiscriminator,
};
use crate::imaging::{load_pgm, preprocess, resize_bilinear, write_pgm_unit, GrayImage, ImageError, TARGET_SIDE};
use crate::tensor::{bce_mean, Tensor};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config: {0}")]
    Config(String),
    #[error("dataset: {0}")]
    Dataset(#[from] DatasetError),
    #[error("image: {0}")]
    Image(#[from] ImageError),
    #[error("model: {0}")]
    Model(#[from] ModelError),
    #[error("baseline: {0}")]
    Baseline(#[from] BaselineError),
    #[error("eval: {0}")]
    Eval(#[from] EvalError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl HarnessError {
    /// Short machine-readable category for command-line error lines.
    pub fn category(&self) -> &'static str {
        match self {
            HarnessError::Config(_) => "config",
            HarnessError::Dataset(_) => "dataset",
            HarnessError::Image(_) => "image",
            HarnessError::Model(_) => "model",
            HarnessError::Baseline(_) => "baseline",
            HarnessError::Eval(_) => "eval",
            HarnessError::Io(_) => "io",
        }
    }
}

pub const PHASE1_CURVE_HEADER: &str = "iteration,loss_real,loss_fake,loss_gen";
pub const EPOCH_CURVE_HEADER: &str = "epoch,train_loss,val_loss";
pub const SWEEP_CSV_HEADER: &str = "fraction,accuracy,precision,recall,specificity,f1,loss,auc,duration";
pub const DEFAULT_SWEEP_FRACTIONS: [f64; 10] = [0.01, 0.02, 0.03, 0.04, 0.05, 0.06, 0.07, 0.08, 0.09, 0.10];

/// Everything one run produced. Paths are absolute or relative to the
/// working directory, as given by the config's `output_dir`.
#[derive(Debug, Clone)]
pub struct RunRecord {
    pub config: ExperimentConfig,
    /// Wall-clock time, truncated to whole microseconds.
    pub duration: Duration,
    pub curves: Vec<PathBuf>,
    pub checkpoints: Vec<PathBuf>,
    pub metrics: MetricsReport,
    pub metrics_csv: PathBuf,
    pub roc_csv: Option<PathBuf>,
    /// Label reads counted while the unlabelled phase ran (pool assembly,
    /// image loading and adversarial training). Zero unless something leaks.
    pub phase1_label_reads: Option<u64>,
}

impl RunRecord {
    pub fn duration_string(&self) -> String {
        format_duration(self.duration)
    }

    pub fn files(&self) -> impl Iterator<Item = &PathBuf> {
        self.curves
            .iter()
            .chain(&self.checkpoints)
            .chain(std::iter::once(&self.metrics_csv))
            .chain(&self.roc_csv)
    }
}

/// Reads and preprocesses images, never looking at labels.
pub fn load_images(samples: &[Sample], sobel: bool) -> Result<Vec<Tensor>, HarnessError> {
    samples
        .iter()
        .map(|s| Ok(preprocess(&load_pgm(&s.image_path)?, sobel)?.to_tensor()))
        .collect()
}

/// Reads, preprocesses and pairs images with their labels.
pub fn load_labelled(samples: &[Sample], sobel: bool) -> Result<LabelledImages, HarnessError> {
    let labels = samples
        .iter()
        .map(|s| s.label().ok_or_else(|| DatasetError::MissingLabel(s.id.clone())))
        .collect::<Result<Vec<Label>, _>>()?;
    Ok(LabelledImages {
        images: load_images(samples, sobel)?,
        labels,
    })
}

/// Resolves the corpus, writing a synthetic one under `output_dir/corpus`.
pub fn resolve_corpus(config: &ExperimentConfig) -> Result<Vec<Sample>, HarnessError> {
    match &config.corpus {
        CorpusSpec::Manifest(path) => Ok(load_manifest(path)?),
        CorpusSpec::Synthetic { count, seed } => {
            let dir = config.output_dir.join("corpus");
            generate_synthetic(*count, *seed, &dir)?;
            // reload so paths and ordering match what a manifest run would see
            Ok(load_manifest(dir.join(MANIFEST_NAME))?)
        }
    }
}

fn write_phase1_curve(path: &Path, curve: &[IterationRecord]) -> Result<(), HarnessError> {
    let mut out = format!("{PHASE1_CURVE_HEADER}\n");
    for r in curve {
        out.push_str(&format!("{},{},{},{}\n", r.iteration, r.loss_real, r.loss_fake, r.loss_gen));
    }
    fs::write(path, out)?;
    Ok(())
}

fn write_epoch_curve(path: &Path, curve: &[EpochRecord]) -> Result<(), HarnessError> {
    let mut out = format!("{EPOCH_CURVE_HEADER}\n");
    for r in curve {
        out.push_str(&format!("{},{},{}\n", r.epoch, r.train_loss, r.val_loss));
    }
    fs::write(path, out)?;
    Ok(())
}

/// Test-set probabilities turned into a report plus ROC CSV.
fn report(out: &Path, probs: &[f64], truths: &[Label]) -> Result<(MetricsReport, PathBuf, Option<PathBuf>), HarnessError> {
    let predictions: Vec<Label> = probs.iter().map(|&p| label_for(p)).collect();
    let counts = confusion_counts(&predictions, truths)?;
    let targets: Vec<f64> = truths.iter().map(|l| l.as_f64()).collect();
    let loss = bce_mean(probs, &targets);
    let metrics = compute_metrics(counts, Some(loss), Some((probs, truths)));
    let metrics_csv = out.join("metrics.csv");
    metrics.save_csv(&metrics_csv)?;
    fs::write(out.join("metrics.txt"), format!("{metrics}\n"))?;
    let roc_csv = match roc_auc(probs, truths) {
        Ok((curve, _)) => {
            let path = out.join("roc.csv");
            fs::write(&path, curve.to_csv())?;
            Some(path)
        }
        Err(EvalError::SingleClass) => None,
        Err(e) => return Err(e.into()),
    };
    Ok((metrics, metrics_csv, roc_csv))
}

fn probabilities(model: &TrainedDiscriminator, images: &[Tensor]) -> Result<Vec<f64>, HarnessError> {
    let mut probs = Vec::with_capacity(images.len());
    for chunk in images.chunks(64) {
        let batch = crate::gan::train::stack(chunk);
        probs.extend(model.network.probabilities(&batch).map_err(ModelError::from)?);
    }
    Ok(probs)
}

/// The corpus, its split and everything preloaded for one run.
pub struct Prepared {
    pub config: ExperimentConfig,
    pub split: DatasetSplit,
    pub test: LabelledImages,
}

pub fn prepare(config: &ExperimentConfig) -> Result<Prepared, HarnessError> {
    config.validate()?;
    fs::create_dir_all(&config.output_dir)?;
    let samples = resolve_corpus(config)?;
    let split = partition_dataset(&samples, config.labelled_fraction, config.seed)?;
    let test = load_labelled(&split.test, config.sobel)?;
    Ok(Prepared {
        config: config.clone(),
        split,
        test,
    })
}

/// Phase-1 outputs: the discriminator, its curve file, checkpoint files and
/// the label reads counted while it ran.
pub struct Phase1Artifacts {
    pub discriminator: TrainedDiscriminator,
    pub curve: PathBuf,
    pub checkpoints: Vec<PathBuf>,
    pub label_reads: u64,
}

/// Adversarial training on the label-stripped training pool.
pub fn run_phase1(prep: &Prepared) -> Result<Phase1Artifacts, HarnessError> {
    let out = &prep.config.output_dir;
    let before = audit::label_reads();
    let pool_samples = prep.split.unsupervised_pool();
    let pool = load_images(&pool_samples, prep.config.sobel)?;
    let outcome = unsupervised_train(&pool, &prep.config.train_config(), |_| {})?;
    let label_reads = audit::label_reads() - before;

    let curve = out.join("phase1_curve.csv");
    write_phase1_curve(&curve, &outcome.curve)?;
    let gen_path = out.join("generator.ckpt");
    ModelCheckpoint::new(Role::Generator, Phase::Phase1, outcome.generator.params().clone()).save(&gen_path)?;
    let disc_path = out.join("discriminator_phase1.ckpt");
    outcome.discriminator.to_checkpoint().save(&disc_path)?;
    Ok(Phase1Artifacts {
        discriminator: outcome.discriminator,
        curve,
        checkpoints: vec![gen_path, disc_path],
        label_reads,
    })
}

/// Fine-tunes a phase-1 discriminator and writes its curve and checkpoint.
pub fn run_finetune(prep: &Prepared, phase1: &TrainedDiscriminator) -> Result<(TrainedDiscriminator, PathBuf, PathBuf), HarnessError> {
    let out = &prep.config.output_dir;
    let train = load_labelled(&prep.split.train_labelled, prep.config.sobel)?;
    let validation = load_labelled(&prep.split.validation, prep.config.sobel)?;
    let outcome = supervised_finetune(phase1, &train, &validation, &prep.config.train_config(), |_| {})?;
    let curve = out.join("phase2_curve.csv");
    write_epoch_curve(&curve, &outcome.curve)?;
    let ckpt = out.join("discriminator_phase2.ckpt");
    outcome.model.to_checkpoint().save(&ckpt)?;
    Ok((outcome.model, curve, ckpt))
}

/// Scores a discriminator-shaped classifier on the test pool. A phase-1
/// head is thresholded as is.
pub fn evaluate_model(prep: &Prepared, model: &TrainedDiscriminator) -> Result<(MetricsReport, PathBuf, Option<PathBuf>), HarnessError> {
    let probs = probabilities(model, &prep.test.images)?;
    report(&prep.config.output_dir, &probs, &prep.test.labels)
}

fn flatten(images: &[Tensor]) -> Vec<Vec<f64>> {
    images.iter().map(|t| t.data().to_vec()).collect()
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    if v.is_empty() {
        1.0
    } else {
        v[v.len() / 2]
    }
}

/// Hyperparameter grid scaled to the median pairwise distance of the inputs.
pub fn default_gp_grid(x: &[Vec<f64>]) -> Vec<GpHyper> {
    let mut dists = Vec::new();
    for i in 0..x.len() {
        for j in 0..i {
            let d: f64 = x[i].iter().zip(&x[j]).map(|(a, b)| (a - b) * (a - b)).sum();
            dists.push(d.sqrt());
        }
    }
    let scale = median(dists).max(1e-6);
    let mut grid = Vec::new();
    for sigma_f in [1.0, 3.0] {
        for sigma_n in [0.01, 0.1] {
            for factor in [0.25, 0.5, 1.0, 2.0] {
                grid.push(GpHyper {
                    sigma_f,
                    sigma_n,
                    length: factor * scale,
                });
            }
        }
    }
    grid
}

fn run_gp(prep: &Prepared) -> Result<(MetricsReport, PathBuf, Option<PathBuf>, PathBuf), HarnessError> {
    let train = load_labelled(&prep.split.train_labelled, prep.config.sobel)?;
    let x = flatten(&train.images);
    let y: Vec<f64> = train.labels.iter().map(|l| 2.0 * l.as_f64() - 1.0).collect();
    let (hyper, _) = gp_select_hyperparameters(&x, &y, &default_gp_grid(&x))?;
    let model = gp_fit_laplace(&x, &y, &hyper)?;
    let path = prep.config.output_dir.join("gp.model");
    model.save(&path)?;
    let probs = prep
        .test
        .images
        .iter()
        .map(|t| gp_predict(&model, t.data()))
        .collect::<Result<Vec<f64>, _>>()?;
    let (metrics, csv, roc) = report(&prep.config.output_dir, &probs, &prep.test.labels)?;
    Ok((metrics, csv, roc, path))
}

/// Split, preprocess, train with the configured method and evaluate on the
/// test pool. Every artifact lands in `output_dir`.
pub fn run_experiment(config: &ExperimentConfig) -> Result<RunRecord, HarnessError> {
    let start = Instant::now();
    let prep = prepare(config)?;
    config.save(config.output_dir.join("config.json"))?;
    let mut curves = Vec::new();
    let mut checkpoints = Vec::new();
    let mut phase1_label_reads = None;

    let (metrics, metrics_csv, roc_csv) = match config.method {
        Method::Sclld | Method::GanOnly => {
            let phase1 = run_phase1(&prep)?;
            phase1_label_reads = Some(phase1.label_reads);
            curves.push(phase1.curve.clone());
            checkpoints.extend(phase1.checkpoints.iter().cloned());
            if config.method == Method::Sclld {
                let (model, curve, ckpt) = run_finetune(&prep, &phase1.discriminator)?;
                curves.push(curve);
                checkpoints.push(ckpt);
                evaluate_model(&prep, &model)?
            } else {
                evaluate_model(&prep, &phase1.discriminator)?
            }
        }
        Method::Cnn => {
            let train = load_labelled(&prep.split.train_labelled, config.sobel)?;
            let validation = load_labelled(&prep.split.validation, config.sobel)?;
            let outcome = cnn_train_supervised(&train, &validation, &config.train_config(), |_| {})?;
            let curve = config.output_dir.join("cnn_curve.csv");
            write_epoch_curve(&curve, &outcome.curve)?;
            curves.push(curve);
            let ckpt = config.output_dir.join("cnn.ckpt");
            outcome.model.to_checkpoint().save(&ckpt)?;
            checkpoints.push(ckpt);
            evaluate_model(&prep, &outcome.model)?
        }
        Method::Gp => {
            let (metrics, csv, roc, model) = run_gp(&prep)?;
            checkpoints.push(model);
            (metrics, csv, roc)
        }
    };
    let duration = Duration::from_micros(start.elapsed().as_micros() as u64);
    fs::write(config.output_dir.join("duration.txt"), format!("{}\n", format_duration(duration)))?;
    Ok(RunRecord {
        config: config.clone(),
        duration,
        curves,
        checkpoints,
        metrics,
        metrics_csv,
        roc_csv,
        phase1_label_reads,
    })
}

fn fraction_dir(fraction: f64) -> String {
    format!("fraction_{fraction:.4}")
}

/// One run per labelled fraction on a shared corpus and seed, then a
/// consolidated `sweep.csv` in the base output directory.
pub fn sweep_labelled_fraction(base: &ExperimentConfig, fractions: &[f64]) -> Result<Vec<(f64, RunRecord)>, HarnessError> {
    if fractions.is_empty() {
        return Err(HarnessError::Config("sweep needs at least one labelled fraction".into()));
    }
    base.validate()?;
    fs::create_dir_all(&base.output_dir)?;
    let corpus = match &base.corpus {
        CorpusSpec::Manifest(p) => CorpusSpec::Manifest(p.clone()),
        CorpusSpec::Synthetic { count, seed } => {
            let dir = base.output_dir.join("corpus");
            generate_synthetic(*count, *seed, &dir)?;
            CorpusSpec::Manifest(dir.join(MANIFEST_NAME))
        }
    };
    let mut records = Vec::with_capacity(fractions.len());
    for &fraction in fractions {
        let config = ExperimentConfig {
            corpus: corpus.clone(),
            labelled_fraction: fraction,
            output_dir: base.output_dir.join(fraction_dir(fraction)),
            ..base.clone()
        };
        records.push((fraction, run_experiment(&config)?));
    }
    let mut out = format!("{SWEEP_CSV_HEADER}\n");
    for (fraction, record) in &records {
        out.push_str(&format!(
            "{fraction},{},{}\n",
            record.metrics.csv_fields().join(","),
            record.duration_string()
        ));
    }
    fs::write(base.output_dir.join("sweep.csv"), out)?;
    Ok(records)
}

/// For `count` labelled samples (half per class, COVID taking the odd one),
/// writes `<id>_raw.pgm`, `<id>_sobel.pgm` and `<id>_cam.pgm`.
pub fn emit_gradcam_gallery(
    model: &TrainedDiscriminator,
    samples: &[Sample],
    out_dir: impl AsRef<Path>,
    count: usize,
    sobel: bool,
) -> Result<Vec<PathBuf>, HarnessError> {
    if model.phase != Phase::Phase2 {
        return Err(EvalError::WrongPhase(model.phase).into());
    }
    if count > samples.len() {
        return Err(HarnessError::Config(format!(
            "gallery count {count} exceeds the {} samples in the manifest",
            samples.len()
        )));
    }
    let mut sorted: Vec<&Sample> = samples.iter().collect();
    sorted.sort_by(|a, b| a.id.cmp(&b.id));
    let want_covid = count.div_ceil(2);
    let want_healthy = count / 2;
    let covid: Vec<&Sample> = sorted.iter().copied().filter(|s| s.label() == Some(Label::Covid)).take(want_covid).collect();
    let healthy: Vec<&Sample> =
        sorted.iter().copied().filter(|s| s.label() == Some(Label::Healthy)).take(want_healthy).collect();
    if covid.len() < want_covid || healthy.len() < want_healthy {
        return Err(HarnessError::Config(format!(
            "gallery of {count} needs {want_covid} COVID and {want_healthy} healthy labelled samples"
        )));
    }
    let out_dir = out_dir.as_ref();
    fs::create_dir_all(out_dir)?;
    let mut written = Vec::with_capacity(3 * count);
    for sample in healthy.into_iter().chain(covid) {
        let raw = load_pgm(&sample.image_path)?;
        let raw_view: GrayImage = resize_bilinear(&raw, TARGET_SIDE, TARGET_SIDE)?.map(|p| (p / 255.0).clamp(0.0, 1.0));
        let edges = preprocess(&raw, true)?;
        let input = if sobel { edges.clone() } else { preprocess(&raw, false)? };
        let cam = gradcam(model, &input.to_tensor())?;
        for (suffix, image) in [("raw", &raw_view), ("sobel", &edges), ("cam", &cam)] {
            let path = out_dir.join(format!("{}_{suffix}.pgm", sample.id));
            fs::write(&path, write_pgm_unit(image)?)?;
            written.push(path);
        }
    }
    Ok(written)
}
