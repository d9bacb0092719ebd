//! `mmfuse`: generate corpora, train, evaluate, compare, and gradcheck.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use mmfuse_core::checks::{run_suite, TOLERANCE};
use mmfuse_core::data::Dataset;
use mmfuse_core::eval::{compare_runs, EvalReport};
use mmfuse_core::pipeline::{evaluate, load_run, train_run};
use mmfuse_core::synth::{generate, reference_proportions, GeneratorSpec};
use mmfuse_core::training::Split;
use mmfuse_core::{Error, Modality, RunConfig};

#[derive(Parser)]
#[command(name = "mmfuse", version, about = "Multimodal text + image classification on desk-scale hardware")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Proportions {
    /// The nine-class reference table.
    Table1,
    Uniform,
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    /// Small encoders sized for a laptop CPU.
    Desk,
    /// Library defaults.
    Full,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic corpus with a known Bayes oracle.
    Generate {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        samples: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        alpha_text: Option<f64>,
        #[arg(long)]
        alpha_image: Option<f64>,
        #[arg(long, value_enum)]
        proportions: Option<Proportions>,
        #[arg(long)]
        resolution: Option<usize>,
        /// Start from the `generator` section of a run config.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Train one modality and write a checkpoint directory.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        modality: Option<Modality>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Evaluate a checkpoint on one split.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "test")]
        split: Split,
        #[arg(long)]
        report: PathBuf,
    },
    /// Compare evaluation reports against a baseline.
    Compare {
        #[arg(long, num_args = 1.., required = true)]
        reports: Vec<PathBuf>,
        #[arg(long)]
        baseline: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Check every gradient against finite differences.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Run this many consecutive seeds starting at `--seed`.
        #[arg(long, default_value_t = 1)]
        seeds: u64,
    },
    /// Print a run config.
    Config {
        #[arg(long, value_enum, default_value = "desk")]
        preset: Preset,
    },
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Usage(_) | Error::Config(_) | Error::Dimension(_) => 2,
        Error::Numeric(_) => 3,
        Error::Data(_) | Error::Io { .. } | Error::Json(_) => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(err) => {
            eprintln!("mmfuse: {err}");
            ExitCode::from(exit_code(&err))
        }
    }
}

fn run(command: Command) -> mmfuse_core::Result<u8> {
    match command {
        Command::Generate {
            out,
            samples,
            seed,
            alpha_text,
            alpha_image,
            proportions,
            resolution,
            config,
        } => {
            let mut spec = match config {
                Some(path) => RunConfig::load(&path)?.generator,
                None => GeneratorSpec::default(),
            };
            if let Some(v) = samples {
                spec.samples = v;
            }
            if let Some(v) = seed {
                spec.seed = v;
            }
            if let Some(v) = alpha_text {
                spec.alpha_text = v;
            }
            if let Some(v) = alpha_image {
                spec.alpha_image = v;
            }
            if let Some(v) = resolution {
                spec.resolution = v;
            }
            match proportions {
                Some(Proportions::Table1) => spec.proportions = reference_proportions(),
                Some(Proportions::Uniform) => {
                    let k = spec.class_names.len();
                    spec.proportions = vec![1.0 / k as f64; k];
                }
                None => {}
            }
            spec.validate()?;
            let summary = generate(&spec, &out)?;
            println!("wrote {} samples to {}", summary.samples, out.display());
            for (name, count) in &summary.class_counts {
                println!("  {name:>4} {count}");
            }
            println!(
                "realized ambiguity: text {:.4}, image {:.4}",
                summary.realized_text_ambiguity, summary.realized_image_ambiguity
            );
            println!(
                "bayes oracle: text {:.4}, image {:.4}, multimodal {:.4}",
                summary.bayes_text, summary.bayes_image, summary.bayes_multimodal
            );
            Ok(0)
        }
        Command::Train {
            config,
            modality,
            data,
            out,
            seed,
        } => {
            let mut cfg = RunConfig::load(&config)?;
            if let Some(m) = modality {
                cfg.modality = m;
            }
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let dataset = Dataset::open(&data)?;
            println!("training {} on {} samples", cfg.modality, dataset.records.len());
            let trained = train_run(&cfg, &dataset, |r| {
                println!(
                    "epoch {:>3}  train_loss {:.4}  val_loss {:.4}  val_acc {:.4}",
                    r.epoch, r.train_loss, r.val_loss, r.val_acc
                )
            })?;
            let ckpt = trained.save(&out)?;
            println!(
                "best epoch {} after {} steps{}; checkpoint {}",
                trained.outcome.best_epoch,
                trained.outcome.steps,
                if trained.outcome.stopped_early { " (early stop)" } else { "" },
                ckpt.display()
            );
            Ok(0)
        }
        Command::Eval {
            checkpoint,
            data,
            split,
            report,
        } => {
            let run = load_run(&checkpoint)?;
            let dataset = Dataset::open(&data)?;
            let r = evaluate(&run.config, &run.model, &run.vocab, &dataset, split)?;
            if let Some(dir) = report.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir).map_err(|e| Error::Io { path: dir.to_path_buf(), source: e })?;
            }
            r.save(&report)?;
            write(&report.with_extension("confusion.csv"), &r.confusion.to_csv())?;
            let text = r.to_text();
            write(&report.with_extension("txt"), &text)?;
            print!("{text}");
            Ok(0)
        }
        Command::Compare { reports, baseline, out } => {
            let loaded = reports
                .iter()
                .map(|p| EvalReport::load(p))
                .collect::<mmfuse_core::Result<Vec<_>>>()?;
            let c = compare_runs(&loaded, &baseline)?;
            std::fs::create_dir_all(&out).map_err(|e| Error::Io { path: out.clone(), source: e })?;
            write(&out.join("summary.csv"), &c.summary_csv())?;
            write(&out.join("class_errors.csv"), &c.class_error_csv())?;
            write(&out.join("class_errors.svg"), &c.error_chart_svg())?;
            write(&out.join("comparison.txt"), &c.to_text())?;
            print!("{}", c.to_text());
            Ok(0)
        }
        Command::Gradcheck { seed, seeds } => {
            let mut all_ok = true;
            for s in seed..seed + seeds.max(1) {
                for c in run_suite(s)? {
                    let ok = c.passed();
                    all_ok &= ok;
                    println!(
                        "seed {s:>3}  {:<22} max rel err {:.3e}  draws {:>2}  {}",
                        c.component,
                        c.max_relative_error,
                        c.draws,
                        if ok { "ok" } else { "FAIL" }
                    );
                }
            }
            println!("tolerance {TOLERANCE:e}: {}", if all_ok { "all passed" } else { "FAILED" });
            Ok(if all_ok { 0 } else { 3 })
        }
        Command::Config { preset } => {
            let cfg = match preset {
                Preset::Desk => RunConfig::desk(),
                Preset::Full => RunConfig::default(),
            };
            print!("{}", cfg.to_json()?);
            Ok(0)
        }
    }
}

fn write(path: &Path, body: &str) -> mmfuse_core::Result<()> {
    std::fs::write(path, body).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}
