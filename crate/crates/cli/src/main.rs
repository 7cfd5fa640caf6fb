use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use cmrin::commands::{self, GroundRequest, Overrides, RunConfig};
use cmrin::tensor::OpKind;
use serde::Serialize;

#[derive(Parser)]
#[command(name = "cmrin", version, about = "Ground referring expressions in relational scene graphs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset (train/val/test JSONL).
    GenData {
        #[command(flatten)]
        run: RunArgs,
        /// Output directory (defaults to the configured data_dir).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train a model and write a run directory.
    Train {
        #[command(flatten)]
        run: RunArgs,
        /// Exact run directory instead of a timestamped one under runs_dir.
        #[arg(long)]
        run_dir: Option<PathBuf>,
    },
    /// Precision@1 of a checkpoint on a dataset.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
    },
    /// Score the proposals of a scene against one expression.
    Ground {
        #[arg(long)]
        checkpoint: PathBuf,
        /// JSON file with "proposals" and optional "semantic_edges".
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        expression: String,
        /// Bracketed constituency parse of the expression.
        #[arg(long)]
        tree: String,
        /// Write a PPM heat map of the scores.
        #[arg(long)]
        ppm: Option<PathBuf>,
        /// Heat map size as WIDTHxHEIGHT.
        #[arg(long, default_value = "256x256", value_parser = parse_size)]
        ppm_size: (usize, usize),
    },
    /// Attention maps and gates for one dataset sample.
    Inspect {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, default_value_t = 0)]
        index: usize,
    },
    /// Finite-difference check of every model gradient on a tiny sample.
    Gradcheck {
        /// Corrupt the backward rule of one op.
        #[arg(long, value_parser = parse_op)]
        inject_fault: Option<OpKind>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum BranchArg {
    Spatial,
    Semantic,
    Both,
}

#[derive(Clone, Copy, ValueEnum)]
enum LossArg {
    Triplet,
    Softmax,
}

#[derive(Clone, Copy, ValueEnum)]
enum MiningArg {
    RandomHard,
    Hardest,
    SemiHard,
}

#[derive(Args)]
struct RunArgs {
    /// JSON run configuration; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    layers: Option<usize>,
    /// e.g. "type11+center-dis(0.5)", "type7+axis-dis(0.15)", "soft+edge-num(5)".
    #[arg(long)]
    graph_variant: Option<String>,
    #[arg(long, value_enum)]
    branch: Option<BranchArg>,
    #[arg(long, value_enum)]
    loss: Option<LossArg>,
    #[arg(long, value_enum)]
    mining: Option<MiningArg>,
    #[arg(long)]
    negatives: Option<usize>,
    #[arg(long)]
    margin: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    data_dir: Option<PathBuf>,
    #[arg(long)]
    runs_dir: Option<PathBuf>,
}

impl RunArgs {
    fn resolve(&self) -> Result<RunConfig, commands::CommandError> {
        let overrides = Overrides {
            seed: self.seed,
            layers: self.layers,
            graph: self.graph_variant.clone(),
            branch: self.branch.map(value_name),
            loss: self.loss.map(value_name),
            mining: self.mining.map(value_name),
            negatives: self.negatives,
            margin: self.margin,
            epochs: self.epochs,
            batch_size: self.batch_size,
            lr: self.lr,
            data_dir: self.data_dir.clone(),
            runs_dir: self.runs_dir.clone(),
        };
        RunConfig::resolve(self.config.as_deref(), &overrides)
    }
}

fn value_name(v: impl ValueEnum) -> String {
    v.to_possible_value().expect("no skipped variants").get_name().to_string()
}

fn parse_size(s: &str) -> Result<(usize, usize), String> {
    let (w, h) = s.split_once('x').ok_or("expected WIDTHxHEIGHT")?;
    let w: usize = w.parse().map_err(|_| "bad width")?;
    let h: usize = h.parse().map_err(|_| "bad height")?;
    if w == 0 || h == 0 {
        return Err("size must be positive".into());
    }
    Ok((w, h))
}

fn parse_op(s: &str) -> Result<OpKind, String> {
    OpKind::ALL
        .into_iter()
        .find(|k| k.name() == s)
        .ok_or_else(|| format!("unknown op {s:?}"))
}

fn print(value: &impl Serialize) {
    println!("{}", serde_json::to_string_pretty(value).expect("serializable"));
}

fn run(cli: Cli) -> Result<bool, commands::CommandError> {
    match cli.command {
        Command::GenData { run, out } => {
            let cfg = run.resolve()?;
            let dir = out.unwrap_or_else(|| cfg.data_dir.clone());
            print(&commands::cmd_gen_data(&cfg, &dir)?);
        }
        Command::Train { run, run_dir } => {
            let cfg = run.resolve()?;
            print(&commands::cmd_train(&cfg, run_dir.as_deref())?);
        }
        Command::Eval { checkpoint, dataset } => print(&commands::cmd_eval(&checkpoint, &dataset)?),
        Command::Ground {
            checkpoint,
            scene,
            expression,
            tree,
            ppm,
            ppm_size,
        } => {
            let req = GroundRequest {
                checkpoint: &checkpoint,
                scene: &scene,
                expression: &expression,
                tree: &tree,
                heatmap: ppm.as_deref().map(|p: &Path| (p, ppm_size.0, ppm_size.1)),
            };
            print(&commands::cmd_ground(&req)?);
        }
        Command::Inspect {
            checkpoint,
            dataset,
            index,
        } => print(&commands::cmd_inspect(&checkpoint, &dataset, index)?),
        Command::Gradcheck { inject_fault } => {
            let report = commands::cmd_gradcheck(inject_fault)?;
            print(&report);
            return Ok(report.passed);
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
