use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use sclld::dataset::{generate_synthetic, load_manifest, partition_dataset, save_manifest, Sample};
use sclld::gan::{ModelCheckpoint, TrainedDiscriminator};
use sclld::harness::{
    emit_gradcam_gallery, evaluate_model, prepare, run_experiment, run_finetune, run_phase1, sweep_labelled_fraction,
    CorpusSpec, ExperimentConfig, HarnessError, Method, DEFAULT_SWEEP_FRACTIONS,
};

#[derive(Parser)]
#[command(name = "sclld", version, about = "Semi-supervised GAN classification with scarce labels")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic two-class corpus with a manifest.
    Synth {
        #[arg(long)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Partition a manifest into test, validation, labelled and unlabelled pools.
    Split {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value_t = 0.10)]
        fraction: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Unsupervised adversarial phase only.
    TrainGan(ExperimentArgs),
    /// Supervised fine-tuning, then test evaluation. Runs the adversarial
    /// phase first unless --phase1 names a checkpoint.
    Finetune {
        #[command(flatten)]
        exp: ExperimentArgs,
        #[arg(long)]
        phase1: Option<PathBuf>,
    },
    /// Evaluate a discriminator or CNN checkpoint on the test pool.
    Eval {
        #[command(flatten)]
        exp: ExperimentArgs,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Supervised CNN baseline.
    Cnn(ExperimentArgs),
    /// Gaussian-process baseline.
    Gp(ExperimentArgs),
    /// Labelled-fraction sweep with a consolidated CSV.
    Sweep {
        #[command(flatten)]
        exp: ExperimentArgs,
        /// Comma-separated fractions; defaults to 0.01 through 0.10.
        #[arg(long, value_delimiter = ',')]
        fractions: Vec<f64>,
    },
    /// Raw, Sobel and Grad-CAM images for labelled samples.
    Gradcam {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 4)]
        count: usize,
        /// Feed the network raw images instead of Sobel maps.
        #[arg(long)]
        no_sobel: bool,
    },
}

/// Every key of the JSON config, as optional overrides.
#[derive(Args, Clone, Default)]
struct ExperimentArgs {
    /// JSON experiment config; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, conflicts_with = "synthetic_count")]
    manifest: Option<PathBuf>,
    #[arg(long)]
    synthetic_count: Option<usize>,
    #[arg(long)]
    synthetic_seed: Option<u64>,
    #[arg(long)]
    labelled_fraction: Option<f64>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr_g: Option<f64>,
    #[arg(long)]
    lr_d: Option<f64>,
    #[arg(long)]
    beta1: Option<f64>,
    #[arg(long)]
    beta2: Option<f64>,
    #[arg(long)]
    finetune_epochs_max: Option<usize>,
    #[arg(long)]
    early_stop_patience: Option<usize>,
    #[arg(long)]
    sobel: Option<bool>,
    #[arg(long)]
    method: Option<String>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
}

impl ExperimentArgs {
    fn resolve(&self) -> Result<ExperimentConfig, HarnessError> {
        let mut c = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => ExperimentConfig::default(),
        };
        if let Some(p) = &self.manifest {
            c.corpus = CorpusSpec::Manifest(p.clone());
        }
        if self.synthetic_count.is_some() || self.synthetic_seed.is_some() {
            let (count, seed) = match c.corpus {
                CorpusSpec::Synthetic { count, seed } => (count, seed),
                CorpusSpec::Manifest(_) => (2500, 0),
            };
            c.corpus = CorpusSpec::Synthetic {
                count: self.synthetic_count.unwrap_or(count),
                seed: self.synthetic_seed.unwrap_or(seed),
            };
        }
        macro_rules! apply {
            ($($field:ident),*) => {$(
                if let Some(v) = self.$field.clone() {
                    c.$field = v;
                }
            )*};
        }
        apply!(
            labelled_fraction,
            iterations,
            batch_size,
            lr_g,
            lr_d,
            beta1,
            beta2,
            finetune_epochs_max,
            early_stop_patience,
            sobel,
            output_dir,
            seed
        );
        if let Some(m) = &self.method {
            c.method = m.parse()?;
        }
        c.validate()?;
        Ok(c)
    }
}

fn load_classifier(path: &Path) -> Result<TrainedDiscriminator, HarnessError> {
    Ok(TrainedDiscriminator::from_checkpoint(ModelCheckpoint::load(path)?)?)
}

fn write_pool(samples: &[Sample], path: PathBuf) -> Result<(), HarnessError> {
    let absolute = samples
        .iter()
        .map(|s| {
            let p = std::fs::canonicalize(&s.image_path)?;
            Ok(Sample::new(s.id.clone(), p, s.label()))
        })
        .collect::<Result<Vec<_>, std::io::Error>>()?;
    save_manifest(&absolute, path)?;
    Ok(())
}

fn print_run(label: &str, metrics: &sclld::eval::MetricsReport, out: &Path) {
    println!("{label}: artifacts in {}", out.display());
    println!("{metrics}");
}

fn run(cli: Cli) -> Result<(), HarnessError> {
    match cli.command {
        Command::Synth { count, seed, out } => {
            let samples = generate_synthetic(count, seed, &out)?;
            println!("wrote {} images and manifest to {}", samples.len(), out.display());
        }
        Command::Split {
            manifest,
            fraction,
            seed,
            out,
        } => {
            let samples = load_manifest(&manifest)?;
            let split = partition_dataset(&samples, fraction, seed)?;
            std::fs::create_dir_all(&out)?;
            write_pool(&split.train_unlabelled, out.join("train_unlabelled.csv"))?;
            write_pool(&split.train_labelled, out.join("train_labelled.csv"))?;
            write_pool(&split.validation, out.join("validation.csv"))?;
            write_pool(&split.test, out.join("test.csv"))?;
            println!(
                "unlabelled {} labelled {} validation {} test {}",
                split.train_unlabelled.len(),
                split.train_labelled.len(),
                split.validation.len(),
                split.test.len()
            );
        }
        Command::TrainGan(exp) => {
            let config = exp.resolve()?;
            let prep = prepare(&config)?;
            let phase1 = run_phase1(&prep)?;
            println!("phase-1 label reads {}", phase1.label_reads);
            println!("phase-1 curve {}", phase1.curve.display());
            for c in &phase1.checkpoints {
                println!("checkpoint {}", c.display());
            }
        }
        Command::Finetune { exp, phase1 } => {
            let config = exp.resolve()?;
            let prep = prepare(&config)?;
            let start = match phase1 {
                Some(path) => load_classifier(&path)?,
                None => {
                    let phase1 = run_phase1(&prep)?;
                    println!("phase-1 label reads {}", phase1.label_reads);
                    phase1.discriminator
                }
            };
            let (model, _, _) = run_finetune(&prep, &start)?;
            let (metrics, _, _) = evaluate_model(&prep, &model)?;
            print_run("sclld", &metrics, &config.output_dir);
        }
        Command::Eval { exp, checkpoint } => {
            let config = exp.resolve()?;
            let prep = prepare(&config)?;
            let model = load_classifier(&checkpoint)?;
            let (metrics, _, _) = evaluate_model(&prep, &model)?;
            print_run("eval", &metrics, &config.output_dir);
        }
        Command::Cnn(exp) => {
            let config = ExperimentConfig {
                method: Method::Cnn,
                ..exp.resolve()?
            };
            let record = run_experiment(&config)?;
            print_run("cnn", &record.metrics, &config.output_dir);
        }
        Command::Gp(exp) => {
            let config = ExperimentConfig {
                method: Method::Gp,
                ..exp.resolve()?
            };
            let record = run_experiment(&config)?;
            print_run("gp", &record.metrics, &config.output_dir);
        }
        Command::Sweep { exp, fractions } => {
            let config = exp.resolve()?;
            let fractions = if fractions.is_empty() { DEFAULT_SWEEP_FRACTIONS.to_vec() } else { fractions };
            let records = sweep_labelled_fraction(&config, &fractions)?;
            println!("{}", std::fs::read_to_string(config.output_dir.join("sweep.csv"))?.trim_end());
            println!("{} runs", records.len());
        }
        Command::Gradcam {
            checkpoint,
            manifest,
            out,
            count,
            no_sobel,
        } => {
            let model = load_classifier(&checkpoint)?;
            let samples = load_manifest(&manifest)?;
            let files = emit_gradcam_gallery(&model, &samples, &out, count, !no_sobel)?;
            println!("wrote {} files to {}", files.len(), out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let message = e.to_string().replace('\n', " ");
            eprintln!("error[{}]: {message}", e.category());
            ExitCode::FAILURE
        }
    }
}
