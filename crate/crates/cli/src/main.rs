use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{CommandFactory, Parser, Subcommand, ValueEnum};
use noisylab_cli::diagnose::{self, Outcome};
use noisylab_cli::inject::{self, NoiseSource};
use noisylab_cli::{report, sweep, ExperimentConfig, EXIT_DEGENERATE, EXIT_FAILURE};
use noisylab_core::diagnostics::DEFAULT_BINS;
use noisylab_core::Label;

#[derive(Parser)]
#[command(name = "noisylab", version, about = "Label-noise experiments on text classifiers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum NoiseType {
    Uniform,
    Sflip,
    Matrix,
    Rules,
}

#[derive(Subcommand)]
enum Command {
    /// Corrupt the clean labels of a JSONL file.
    Inject {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// Number of classes.
        #[arg(short, long)]
        k: usize,
        #[arg(long = "type", value_enum)]
        noise_type: NoiseType,
        /// Noise level for uniform and sflip.
        #[arg(long)]
        level: Option<f64>,
        /// Comma-separated flip targets for sflip, one per class.
        #[arg(long, value_delimiter = ',')]
        flip_map: Option<Vec<Label>>,
        /// Transition matrix CSV for `--type matrix`.
        #[arg(long)]
        matrix: Option<PathBuf>,
        /// Rules JSONL for `--type rules`.
        #[arg(long)]
        rules: Option<PathBuf>,
        /// Drop examples no rule fires on instead of keeping their clean label.
        #[arg(long)]
        drop_unmatched: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train every configured strategy for every trial.
    Run {
        config: PathBuf,
        /// Parallel runs (default: number of CPUs).
        #[arg(short, long)]
        jobs: Option<usize>,
        /// Output directory, overriding the config.
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Aggregate completed runs into a mean±std CSV.
    Report {
        #[arg(required = true)]
        dirs: Vec<PathBuf>,
        /// Write the CSV here instead of stdout.
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Write loss histogram and ROC CSVs for one run directory.
    Diagnose {
        dir: PathBuf,
        #[arg(long, default_value_t = DEFAULT_BINS)]
        bins: usize,
    },
}

fn usage_error(msg: &str) -> ! {
    Cli::command().error(ErrorKind::ArgumentConflict, msg).exit()
}

fn noise_source(
    noise_type: NoiseType,
    level: Option<f64>,
    flip_map: Option<Vec<Label>>,
    matrix: Option<PathBuf>,
    rules: Option<PathBuf>,
    drop_unmatched: bool,
) -> NoiseSource {
    let extra = |allowed: &[&str]| {
        let given = [
            ("--level", level.is_some()),
            ("--flip-map", flip_map.is_some()),
            ("--matrix", matrix.is_some()),
            ("--rules", rules.is_some()),
            ("--drop-unmatched", drop_unmatched),
        ];
        if let Some((flag, _)) = given.iter().find(|(f, g)| *g && !allowed.contains(f)) {
            usage_error(&format!("{flag} does not apply to this noise type"));
        }
    };
    match noise_type {
        NoiseType::Uniform => {
            extra(&["--level"]);
            NoiseSource::Uniform {
                level: level.unwrap_or_else(|| usage_error("--type uniform needs --level")),
            }
        }
        NoiseType::Sflip => {
            extra(&["--level", "--flip-map"]);
            NoiseSource::Sflip {
                level: level.unwrap_or_else(|| usage_error("--type sflip needs --level")),
                flip_map,
            }
        }
        NoiseType::Matrix => {
            extra(&["--matrix"]);
            NoiseSource::Matrix(matrix.unwrap_or_else(|| usage_error("--type matrix needs --matrix")))
        }
        NoiseType::Rules => {
            extra(&["--rules", "--drop-unmatched"]);
            NoiseSource::Rules {
                path: rules.unwrap_or_else(|| usage_error("--type rules needs --rules")),
                abstain_to_clean: !drop_unmatched,
            }
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<ExitCode> {
    match cli.command {
        Command::Inject {
            input,
            output,
            k,
            noise_type,
            level,
            flip_map,
            matrix,
            rules,
            drop_unmatched,
            seed,
        } => {
            let source = noise_source(noise_type, level, flip_map, matrix, rules, drop_unmatched);
            let r = inject::run(&input, &output, k, &source, seed)?;
            println!("wrote {} examples to {}", r.n, output.display());
            println!("realized FDR: {:.4}", r.fdr);
            let kind = if r.empirical { "empirical" } else { "generator" };
            println!("diagonally dominant ({kind} matrix): {}", r.diag_dominant);
            Ok(ExitCode::SUCCESS)
        }
        Command::Run { config, jobs, output } => {
            let cfg = ExperimentConfig::load(&config)?;
            let out = cfg.output_dir(&config, output.as_deref());
            let jobs = jobs.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
            let results = sweep::run_sweep(&cfg, &out, jobs)?;
            let mut failed = 0;
            for (spec, res) in &results {
                match res {
                    Ok(s) => eprintln!(
                        "{} trial {}: test acc {:.4} (step {})",
                        spec.label, spec.trial, s.reported_test_acc, s.best_step
                    ),
                    Err(e) => {
                        failed += 1;
                        eprintln!("{} trial {} failed: {e:#}", spec.label, spec.trial);
                    }
                }
            }
            eprintln!("{} of {} runs completed in {}", results.len() - failed, results.len(), out.display());
            Ok(if failed == 0 {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(EXIT_FAILURE)
            })
        }
        Command::Report { dirs, output } => {
            let runs = report::find_runs(&dirs)?;
            let rep = report::aggregate(&runs)?;
            for w in &rep.warnings {
                eprintln!("warning: {w}");
            }
            match output {
                Some(path) => {
                    let mut w = BufWriter::new(fs::File::create(&path)?);
                    report::write_csv(&rep.rows, &mut w)?;
                    w.flush()?;
                }
                None => report::write_csv(&rep.rows, io::stdout().lock())?,
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Diagnose { dir, bins } => match diagnose::diagnose(&dir, bins)? {
            Outcome::Written { roc, .. } => {
                println!("AUC {:.4}; wrote histogram.csv, roc.csv, report.csv to {}", roc.auc, dir.display());
                Ok(ExitCode::SUCCESS)
            }
            Outcome::Degenerate { reason, .. } => {
                eprintln!("no ROC curve: {reason}");
                Ok(ExitCode::from(EXIT_DEGENERATE))
            }
        },
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_FAILURE)
        }
    }
}
