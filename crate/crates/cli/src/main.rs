use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use msynfd_cli::*;
use msynfd_core::config::CorpusFormat;
use msynfd_core::tensor::BackwardFault;

#[derive(Parser)]
#[command(name = "msynfd", version, about = "Syntax-aware fake news detection")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// Config file; defaults to $MSYNFD_CONFIG when set.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a config key, e.g. `--set model.hops=4`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Args)]
struct CorpusArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_enum, default_value = "jsonl")]
    format: Format,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Jsonl,
    Conllu,
}

impl From<Format> for CorpusFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::Jsonl => CorpusFormat::Jsonl,
            Format::Conllu => CorpusFormat::Conllu,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Scale {
    Small,
    Full,
}

#[derive(Clone, Copy, ValueEnum)]
enum Fault {
    Sigmoid,
    LayerNorm,
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    Multihop,
    Bias,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write checkpoint, history, metrics and manifest.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        force: bool,
        #[arg(long)]
        replicates: Option<usize>,
        #[arg(long, short)]
        quiet: bool,
    },
    /// Evaluate a checkpoint on a labelled corpus.
    Eval {
        #[command(flatten)]
        corpus: CorpusArgs,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        force: bool,
    },
    /// Write per-example fake probabilities as JSON lines.
    Predict {
        #[command(flatten)]
        corpus: CorpusArgs,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        force: bool,
    },
    /// Dump graph, attention and pooling internals for one example.
    Inspect {
        #[command(flatten)]
        corpus: CorpusArgs,
        #[arg(long)]
        id: String,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        force: bool,
    },
    /// Compare analytic and numeric gradients on random inputs.
    Gradcheck {
        #[arg(long, value_enum, default_value = "small")]
        scale: Scale,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, hide = true, value_enum)]
        inject_fault: Option<Fault>,
    },
    /// Generate a synthetic corpus with train, val and test splits.
    Gen {
        #[arg(value_enum)]
        kind: Kind,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 5000)]
        n_train: usize,
        #[arg(long, default_value_t = 1000)]
        n_val: usize,
        #[arg(long, default_value_t = 1000)]
        n_test: usize,
        #[arg(long, default_value_t = 3)]
        k_hop: usize,
        #[arg(long, default_value_t = 50)]
        vocab_size: usize,
        #[arg(long, default_value_t = 0.1)]
        flip_rate: f64,
        #[arg(long, default_value_t = 0.15)]
        label_noise: f64,
        #[arg(long)]
        force: bool,
    },
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Train {
            cfg,
            out,
            force,
            replicates,
            quiet,
        } => {
            let dir = cmd_train(&TrainArgs {
                config: cfg.config,
                overrides: cfg.overrides,
                out,
                force,
                replicates,
                quiet,
            })?;
            println!("{}", dir.display());
        }
        Command::Eval { corpus, out, force } => {
            let m = cmd_eval(&corpus.checkpoint, &corpus.data, corpus.format.into())?;
            print!("{}", write_json_to(out.as_deref(), &m, force)?);
        }
        Command::Predict { corpus, out, force } => {
            let rows = cmd_predict(&corpus.checkpoint, &corpus.data, corpus.format.into())?;
            let body: String = rows
                .iter()
                .map(|r| serde_json::to_string(r).expect("serializable") + "\n")
                .collect();
            match out {
                Some(p) => {
                    if p.exists() && !force {
                        return Err(CliError::config(format!("{} exists; pass --force to overwrite", p.display())));
                    }
                    std::fs::write(&p, body).map_err(|e| CliError::config(format!("{}: {e}", p.display())))?;
                }
                None => print!("{body}"),
            }
        }
        Command::Inspect {
            corpus,
            id,
            out,
            force,
        } => {
            let dump = cmd_inspect(&corpus.checkpoint, &corpus.data, corpus.format.into(), &id)?;
            let s = write_json_to(out.as_deref(), &dump, force)?;
            if out.is_none() {
                print!("{s}");
            }
        }
        Command::Gradcheck {
            scale,
            seed,
            out,
            inject_fault,
        } => {
            let scale = match scale {
                Scale::Small => GradScale::Small,
                Scale::Full => GradScale::Full,
            };
            let fault = inject_fault.map(|f| match f {
                Fault::Sigmoid => BackwardFault::Sigmoid,
                Fault::LayerNorm => BackwardFault::LayerNorm,
            });
            let report = cmd_gradcheck(scale, seed, fault)?;
            for case in &report.cases {
                println!(
                    "n={} gate={:?} max_rel={:.3e} {}",
                    case.n,
                    case.gate,
                    case.report.max_rel_error,
                    if case.passed { "ok" } else { "FAIL" }
                );
                for p in &case.report.params {
                    println!("  {:<28} {:.3e}", p.name, p.max_rel_error);
                }
            }
            if let Some(p) = &out {
                write_json_to(Some(p), &report, true)?;
            }
            if !report.passed {
                return Err(CliError::new(
                    EXIT_GRADCHECK,
                    format!(
                        "gradient check failed: max relative error {:.3e} > {:.0e}",
                        report.max_rel_error, report.tolerance
                    ),
                ));
            }
        }
        Command::Gen {
            kind,
            out,
            seed,
            n_train,
            n_val,
            n_test,
            k_hop,
            vocab_size,
            flip_rate,
            label_noise,
            force,
        } => {
            let m = cmd_gen(&GenArgs {
                kind: match kind {
                    Kind::Multihop => GenKind::Multihop,
                    Kind::Bias => GenKind::Bias,
                },
                out,
                seed,
                n_train,
                n_val,
                n_test,
                k_hop,
                vocab_size,
                flip_rate,
                label_noise,
                force,
            })?;
            for s in &m.splits {
                println!("{} {} {}", s.name, s.n, s.path);
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { 0 };
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code as u8)
        }
    }
}
