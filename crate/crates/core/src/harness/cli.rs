//! Command-line entry point. Exit codes: 0 success, 1 usage, 2 data or format error.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};

use super::ablate::run_ablation;
use super::checkpoint::{load_checkpoint, save_checkpoint};
use super::config::TrainConfig;
use super::eval::{evaluate, run_sample, sample_seed};
use super::train::{format_epoch, train_stages, EpochLog};
use crate::error::{Error, Result};
use crate::model::{Model, Stage, Variant};
use crate::synth::{generate, read_dataset, write_dataset};
use crate::tokenizer::SymbolVocab;

#[derive(Parser, Debug)]
#[command(
    name = "vdrive",
    about = "Train and evaluate a routed vision-language-action driving model"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum StageArg {
    #[value(name = "1")]
    One,
    #[value(name = "2")]
    Two,
    #[value(name = "3")]
    Three,
    All,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum VariantArg {
    SharedFfn,
    Decoupled,
    SingleExpert,
    RegressionHead,
    All,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write synthetic scenarios as JSON lines.
    GenData {
        #[arg(long)]
        seed_start: u64,
        #[arg(long)]
        count: usize,
        #[arg(long)]
        out: PathBuf,
    },
    Train {
        #[arg(long)]
        stage: StageArg,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        ckpt_in: Option<PathBuf>,
        #[arg(long)]
        ckpt_out: PathBuf,
        #[arg(long)]
        quiet: bool,
    },
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = super::config::DEFAULT_EULER_STEPS)]
        euler_steps: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    Predict {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = super::config::DEFAULT_EULER_STEPS)]
        euler_steps: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train variants with the full schedule and compare them on held-out data.
    Ablate {
        #[arg(long, required = true)]
        variant: Vec<VariantArg>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        eval_data: PathBuf,
        #[arg(long)]
        report: Option<PathBuf>,
        #[arg(long)]
        quiet: bool,
    },
}

/// Runs the CLI on `argv` (including the program name) and returns the exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_data_error() {
                2
            } else {
                1
            }
        }
    }
}

fn load_config(path: Option<&Path>) -> Result<TrainConfig> {
    match path {
        Some(p) => TrainConfig::from_file(p),
        None => Ok(TrainConfig::default()),
    }
}

fn progress(quiet: bool) -> impl FnMut(&EpochLog) {
    move |e| {
        if !quiet {
            eprint!("{}", format_epoch(e));
        }
    }
}

fn execute(cmd: Command) -> Result<()> {
    match cmd {
        Command::GenData {
            seed_start,
            count,
            out,
        } => {
            let data = generate(seed_start, count, &SymbolVocab::standard());
            write_dataset(&data, &out)
        }
        Command::Train {
            stage,
            config,
            data,
            ckpt_in,
            ckpt_out,
            quiet,
        } => {
            let cfg = load_config(config.as_deref())?;
            let data = read_dataset(&data)?;
            let mut model = match ckpt_in {
                Some(p) => load_checkpoint(&p)?,
                None => Model::new(cfg.model.clone(), SymbolVocab::standard())?,
            };
            let stages: Vec<Stage> = match stage {
                StageArg::One => vec![Stage::One],
                StageArg::Two => vec![Stage::Two],
                StageArg::Three => vec![Stage::Three],
                StageArg::All => Stage::ALL.to_vec(),
            };
            train_stages(&cfg, &stages, &mut model, &data, &mut progress(quiet))?;
            save_checkpoint(&model, &ckpt_out)
        }
        Command::Eval {
            ckpt,
            data,
            euler_steps,
            seed,
            report,
        } => {
            let model = load_checkpoint(&ckpt)?;
            let data = read_dataset(&data)?;
            let text = evaluate(&model, &data, euler_steps, seed)?.to_text();
            print!("{text}");
            if let Some(p) = report {
                std::fs::write(p, text)?;
            }
            Ok(())
        }
        Command::Predict {
            ckpt,
            data,
            out,
            euler_steps,
            seed,
        } => {
            let model = load_checkpoint(&ckpt)?;
            let data = read_dataset(&data)?;
            let mut text = String::new();
            for (i, s) in data.iter().enumerate() {
                let r = run_sample(&model, s, euler_steps, sample_seed(seed, i))?;
                let wp: Vec<String> = r
                    .trajectory
                    .waypoints
                    .iter()
                    .map(|p| format!("{:.4},{:.4}", p[0], p[1]))
                    .collect();
                let sp: Vec<String> = r
                    .trajectory
                    .speeds
                    .iter()
                    .map(|v| format!("{v:.4}"))
                    .collect();
                let _ = writeln!(
                    text,
                    "sample {i} | instruction: {} | waypoints: {} | speeds: {}",
                    model.vocab.render(&r.decoded),
                    wp.join(" "),
                    sp.join(" ")
                );
            }
            std::fs::write(out, text)?;
            Ok(())
        }
        Command::Ablate {
            variant,
            config,
            data,
            eval_data,
            report,
            quiet,
        } => {
            let cfg = load_config(config.as_deref())?;
            let mut variants = Vec::new();
            for v in variant {
                let add: Vec<Variant> = match v {
                    VariantArg::SharedFfn => vec![Variant::SharedFfn],
                    VariantArg::Decoupled => vec![Variant::Decoupled],
                    VariantArg::SingleExpert => vec![Variant::SingleExpert],
                    VariantArg::RegressionHead => vec![Variant::RegressionHead],
                    VariantArg::All => Variant::ABLATIONS.to_vec(),
                };
                for a in add {
                    if !variants.contains(&a) {
                        variants.push(a);
                    }
                }
            }
            let train = read_dataset(&data)?;
            let eval = read_dataset(&eval_data)?;
            if eval.is_empty() {
                return Err(Error::Input("evaluation set is empty".into()));
            }
            let text =
                run_ablation(&cfg, &variants, &train, &eval, &mut progress(quiet))?.to_text();
            print!("{text}");
            if let Some(p) = report {
                std::fs::write(p, text)?;
            }
            Ok(())
        }
    }
}
