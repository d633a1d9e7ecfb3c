use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use vlae_cli::check::{run_check, Fault};
use vlae_cli::config::RunConfig;
use vlae_cli::run::{cmd_eval, cmd_gen_data, cmd_train, write_eval_csv, GenDataArgs};
use vlae_core::data::Split;
use vlae_core::error::Error;

/// Train and evaluate latent-variable generative models with full-covariance
/// Laplace posteriors, plus amortized and semi-amortized baselines.
#[derive(Parser)]
#[command(name = "vlae", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model from a key=value config file.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Resume from a checkpoint produced by the same config.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Evaluate a checkpoint: ELBO and IWAE on a dataset split.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        /// Override the configured dataset with a flat binary data file.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, value_name = "N")]
        iwae_k: Option<usize>,
        /// Split to evaluate: val or test.
        #[arg(long, default_value = "test")]
        split: String,
    },
    /// Run the built-in consistency battery.
    Check {
        /// Inject a named fault to demonstrate oracle sensitivity.
        #[arg(long, value_name = "NAME")]
        inject_fault: Option<String>,
    },
    /// Generate a synthetic dataset file plus metadata sidecar.
    GenData {
        /// Generator kind: toy or ppca.
        #[arg(long)]
        kind: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 2500)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0.05)]
        noise_sigma: f64,
        #[arg(long, default_value_t = 8)]
        data_dim: usize,
        #[arg(long, default_value_t = 2)]
        latent_dim: usize,
        #[arg(long, default_value_t = 0.25)]
        sigma2: f64,
    },
}

const EXIT_OK: u8 = 0;
const EXIT_FAIL: u8 = 1;
const EXIT_USAGE: u8 = 2;

fn exit_for(err: &Error) -> u8 {
    match err {
        Error::InvalidConfig(_) => EXIT_USAGE,
        _ => EXIT_FAIL,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = match cli.command {
        Command::Train { config, resume } => {
            let cfg = match RunConfig::load(&config) {
                Ok(c) => c,
                Err(e) => {
                    eprintln!("config error: {e}");
                    return ExitCode::from(EXIT_USAGE);
                }
            };
            match cmd_train(&cfg, resume.as_deref()) {
                Ok(out) => {
                    println!(
                        "trained {} epochs; best validation ELBO {} at epoch {}",
                        out.metrics.len(),
                        out.best_val_elbo,
                        out.best_epoch
                    );
                    println!("metrics: {}", out.out_dir.join("metrics.csv").display());
                    println!("best checkpoint: {}", out.best_ckpt.display());
                    EXIT_OK
                }
                Err(e) => {
                    eprintln!("training failed: {e}");
                    exit_for(&e)
                }
            }
        }
        Command::Eval {
            ckpt,
            data,
            iwae_k,
            split,
        } => {
            let split = match split.as_str() {
                "val" => Split::Val,
                "test" => Split::Test,
                other => {
                    eprintln!("unknown split '{other}' (use val or test)");
                    return ExitCode::from(EXIT_USAGE);
                }
            };
            match cmd_eval(&ckpt, data.as_deref(), iwae_k, split) {
                Ok(report) => {
                    println!(
                        "split {:?}: ELBO {} | IWAE-{} {} (checkpoint after {} epochs, best epoch {})",
                        report.split,
                        report.elbo,
                        report.iwae_k,
                        report.iwae,
                        report.epochs_done,
                        report.best_epoch
                    );
                    let csv_path = ckpt.with_extension("eval.csv");
                    if let Err(e) = write_eval_csv(&report, &csv_path) {
                        eprintln!("could not write {}: {e}", csv_path.display());
                        return ExitCode::from(EXIT_FAIL);
                    }
                    println!("report: {}", csv_path.display());
                    EXIT_OK
                }
                Err(e) => {
                    eprintln!("evaluation failed: {e}");
                    exit_for(&e)
                }
            }
        }
        Command::Check { inject_fault } => {
            let fault = match inject_fault.as_deref() {
                None => None,
                Some(name) => match Fault::parse(name) {
                    Some(f) => Some(f),
                    None => {
                        eprintln!("unknown fault '{name}' (available: mode-step-sign)");
                        return ExitCode::from(EXIT_USAGE);
                    }
                },
            };
            let report = run_check(fault);
            for s in &report.suites {
                println!(
                    "suite {}: {} ({})",
                    s.name,
                    if s.passed { "PASS" } else { "FAIL" },
                    s.detail
                );
            }
            if report.all_passed() {
                EXIT_OK
            } else {
                EXIT_FAIL
            }
        }
        Command::GenData {
            kind,
            out,
            n,
            seed,
            noise_sigma,
            data_dim,
            latent_dim,
            sigma2,
        } => {
            let args = GenDataArgs {
                kind,
                out: out.clone(),
                n_items: n,
                seed,
                noise_sigma,
                data_dim,
                latent_dim,
                sigma2,
            };
            match cmd_gen_data(&args) {
                Ok(()) => {
                    println!("wrote {} (+ .meta sidecar)", out.display());
                    EXIT_OK
                }
                Err(e) => {
                    eprintln!("gen-data failed: {e}");
                    exit_for(&e)
                }
            }
        }
    };
    ExitCode::from(code)
}
