use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use egokit::cli::{self, RunConfig};
use egokit::{Error, Result};

/// Egocentric body motion estimation from head poses.
#[derive(Parser)]
#[command(name = "egokit", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Config file of `section.key=value` lines; flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Extra `section.key=value` overrides (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic motion dataset.
    Gen {
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        count: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        /// Comma-separated subset of walk,turn,squat,reach,idle.
        #[arg(long)]
        families: Option<String>,
        /// Also write synthetic hand observations per sequence.
        #[arg(long)]
        hands: bool,
        /// Also write a synthetic SLAM point cloud per sequence.
        #[arg(long)]
        points: bool,
        #[command(flatten)]
        common: Common,
    },
    /// Train a motion prior on a dataset's training split.
    Train {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// egoallo, abs-local-rel, abs-global-deltas, seq-canonical or absolute.
        #[arg(long)]
        conditioning: Option<String>,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        batch: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        common: Common,
    },
    /// Estimate body motion for a CPF trajectory.
    Estimate {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Trajectory file or sequence file.
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        observations: Option<PathBuf>,
        #[arg(long)]
        points: Option<PathBuf>,
        /// Ground-truth sequence; enables the metrics CSV.
        #[arg(long)]
        truth: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        metrics: Option<PathBuf>,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        common: Common,
    },
    /// Train every conditioning variant and compare them on held-out data.
    Ablate {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Only egoallo and absolute.
        #[arg(long)]
        quick: bool,
        #[command(flatten)]
        common: Common,
    },
    /// Evaluate a checkpoint on a dataset's held-out split.
    Eval {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Estimate the floor height of a point cloud.
    Floor {
        #[arg(long)]
        points: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        common: Common,
    },
    /// Print the skeleton definition and its hash.
    SkeletonDump,
}

fn path_str(p: Option<PathBuf>) -> Option<String> {
    p.map(|p| p.to_string_lossy().into_owned())
}

fn build_config(common: &Common, flags: &[(&str, Option<String>)]) -> Result<RunConfig> {
    let file = match &common.config {
        Some(p) => RunConfig::load(p).map_err(|e| Error::Config(e.to_string()))?,
        None => RunConfig::new(),
    };
    let mut over = RunConfig::new();
    for (k, v) in flags {
        over.set_opt(k, v.clone())?;
    }
    over.apply_overrides(&common.overrides)?;
    Ok(file.merged(&over))
}

fn print_rows(rows: &[egokit::pipeline::EvalRow]) {
    print!("{}", egokit::pipeline::eval_csv(rows));
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Gen { out, count, seed, families, hands, points, common } => {
            let cfg = build_config(
                &common,
                &[
                    ("gen.out", path_str(out)),
                    ("gen.count", count.map(|c| c.to_string())),
                    ("gen.seed", seed.map(|s| s.to_string())),
                    ("gen.families", families),
                    ("gen.hands", hands.then(|| "true".into())),
                    ("gen.points", points.then(|| "true".into())),
                ],
            )?;
            let s = cli::cmd_gen(&cfg)?;
            println!("generated {} sequences ({} held out)", s.count, s.held_out);
            for (f, n) in &s.families {
                println!("  {f}: {n}");
            }
        }
        Command::Train { data, out, conditioning, steps, batch, seed, common } => {
            let cfg = build_config(
                &common,
                &[
                    ("train.data", path_str(data)),
                    ("train.out", path_str(out)),
                    ("train.variant", conditioning),
                    ("train.steps", steps.map(|s| s.to_string())),
                    ("train.batch", batch.map(|s| s.to_string())),
                    ("train.seed", seed.map(|s| s.to_string())),
                ],
            )?;
            let s = cli::cmd_train(&cfg)?;
            println!(
                "trained on {} sequences: loss {:.4} -> {:.4}; checkpoint {}",
                s.sequences,
                s.initial_loss(),
                s.final_loss(),
                s.checkpoint.display()
            );
        }
        Command::Estimate { checkpoint, input, observations, points, truth, out, metrics, steps, seed, common } => {
            let cfg = build_config(
                &common,
                &[
                    ("estimate.checkpoint", path_str(checkpoint)),
                    ("estimate.input", path_str(input)),
                    ("estimate.observations", path_str(observations)),
                    ("estimate.points", path_str(points)),
                    ("estimate.truth", path_str(truth)),
                    ("estimate.out", path_str(out)),
                    ("estimate.metrics", path_str(metrics)),
                    ("estimate.steps", steps.map(|s| s.to_string())),
                    ("estimate.seed", seed.map(|s| s.to_string())),
                ],
            )?;
            let s = cli::cmd_estimate(&cfg)?;
            println!(
                "estimated {} frames in {} window(s), floor z = {:.4}{}; wrote {}",
                s.frames,
                s.windows.len(),
                s.floor_z,
                if s.guided { ", guided" } else { "" },
                s.output.display()
            );
            if let Some(rows) = &s.metrics {
                print!("{}", egokit::metrics::metrics_csv(rows));
            }
        }
        Command::Ablate { data, out, quick, common } => {
            let cfg = build_config(
                &common,
                &[("ablate.data", path_str(data)), ("ablate.out", path_str(out)), ("ablate.quick", quick.then(|| "true".into()))],
            )?;
            print_rows(&cli::cmd_ablate(&cfg)?);
        }
        Command::Eval { checkpoint, data, out, common } => {
            let cfg = build_config(
                &common,
                &[("eval.checkpoint", path_str(checkpoint)), ("eval.data", path_str(data)), ("eval.out", path_str(out))],
            )?;
            print_rows(&cli::cmd_eval(&cfg)?);
        }
        Command::Floor { points, seed, common } => {
            let cfg = build_config(&common, &[("floor.points", path_str(points)), ("floor.seed", seed.map(|s| s.to_string()))])?;
            let f = cli::cmd_floor(&cfg)?;
            println!("floor z = {:.6} ({} inliers)", f.z, f.inliers);
        }
        Command::SkeletonDump => print!("{}", cli::cmd_skeleton_dump()),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if let Some(n) = std::env::var("EGOKIT_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: EGOKIT_THREADS: {e}");
            return ExitCode::from(1);
        }
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(cli::exit_code(&e) as u8)
        }
    }
}
