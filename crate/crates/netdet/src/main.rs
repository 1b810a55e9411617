use clap::{Parser, Subcommand};
use netdet::cli;
use netdet::config::{Config, RunConfig};
use std::path::PathBuf;
use std::process::ExitCode;

/// Scale-aware single-shot detector with neighbor erasing/transferring
/// feature reconfiguration, on synthetic multi-scale scenes.
#[derive(Parser)]
#[command(name = "netdet", version, about)]
struct Args {
    /// key = value configuration file
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Random seed (overrides the config file)
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output directory for this run
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Model checkpoint to load
    #[arg(long, global = true)]
    checkpoint: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Verify every differentiable op against finite differences
    Gradcheck {
        /// Corrupt one analytic gradient (negative control; must fail)
        #[arg(long, hide = true)]
        corrupt: bool,
    },
    /// Train a detector on generated scenes and write a checkpoint
    Train,
    /// Evaluate a checkpoint on the held-out scene set
    Eval,
    /// Train/evaluate the configured variants across seeds
    Ablate,
    /// Recompute metrics and PR curves from saved detection/GT files
    Analyze {
        /// Detection results file (JSON records)
        detections: PathBuf,
        /// Ground-truth file in the same convention
        ground_truth: PathBuf,
    },
    /// Dump the shallow feature map, gate, and erased map as PGMs
    Viz {
        /// Scene index to render
        #[arg(long, default_value_t = 0)]
        scene: u64,
        /// Use an oracle gate built from the object mask instead of the
        /// learned gate
        #[arg(long)]
        oracle: bool,
    },
}

fn load_run_config(args: &Args) -> netdet::Result<RunConfig> {
    let mut cfg = match &args.config {
        Some(path) => Config::from_file(path)?,
        None => Config::parse("")?,
    };
    if let Some(seed) = args.seed {
        cfg.set("seed", &seed.to_string());
    }
    RunConfig::from_config(&mut cfg)
}

fn run(args: &Args) -> netdet::Result<bool> {
    match &args.command {
        Command::Gradcheck { corrupt } => {
            let out = args.out.clone().unwrap_or_else(|| cli::default_out("gradcheck"));
            cli::cmd_gradcheck(&out, args.seed.unwrap_or(0), *corrupt)
        }
        Command::Train => {
            let run = load_run_config(args)?;
            let out = args.out.clone().unwrap_or_else(|| cli::default_out("train"));
            cli::cmd_train(&run, &out)?;
            Ok(true)
        }
        Command::Eval => {
            let run = load_run_config(args)?;
            let ckpt = args
                .checkpoint
                .clone()
                .ok_or_else(|| netdet::NetError::Config("eval requires --checkpoint".into()))?;
            let out = args.out.clone().unwrap_or_else(|| cli::default_out("eval"));
            cli::cmd_eval(&run, &ckpt, &out)?;
            Ok(true)
        }
        Command::Ablate => {
            let run = load_run_config(args)?;
            let out = args.out.clone().unwrap_or_else(|| cli::default_out("ablate"));
            cli::cmd_ablate(&run, &out)?;
            Ok(true)
        }
        Command::Analyze { detections, ground_truth } => {
            let run = load_run_config(args)?;
            let out = args.out.clone().unwrap_or_else(|| cli::default_out("analyze"));
            cli::cmd_analyze(&run, detections, ground_truth, &out)?;
            Ok(true)
        }
        Command::Viz { scene, oracle } => {
            let run = load_run_config(args)?;
            let out = args.out.clone().unwrap_or_else(|| cli::default_out("viz"));
            cli::cmd_viz(&run, args.checkpoint.as_deref(), *scene, *oracle, &out)?;
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    let args = Args::parse();
    match run(&args) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
