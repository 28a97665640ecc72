use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use sim2seg::config::{load_config, PipelineConfig};
use sim2seg::pipeline;
use sim2seg::Result;

#[derive(Debug, Parser)]
#[command(name = "sim2seg", version, about = "Sim-to-real unknown-object instance segmentation")]
struct Cli {
    /// JSON configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic dataset into `paths.synth_dataset`.
    GenData {
        #[arg(long)]
        count: u64,
        /// Override `scene.seed`.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train the translation networks on synthetic and real images.
    TrainTranslate {
        #[arg(long)]
        resume: bool,
    },
    /// Train the mask generator on the synthetic dataset.
    TrainSeg {
        #[arg(long)]
        resume: bool,
    },
    /// Segment one image or a directory of images.
    Infer {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Feed images to the mask generator without translation.
        #[arg(long)]
        skip_translation: bool,
    },
    /// Score predicted instance masks against ground truth.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long, default_value = "evaluation")]
        label: String,
    },
    /// Compare inference with and without translation on a labeled set.
    Ablate {
        #[arg(long)]
        labeled: PathBuf,
    },
    /// Print the effective configuration with all defaults filled in.
    ShowConfig,
}

fn config(cli: &Cli) -> Result<PipelineConfig> {
    match &cli.config {
        Some(p) => load_config(p),
        None => Err(sim2seg::Error::config("config", "--config <file> is required")),
    }
}

fn run(cli: &Cli) -> Result<()> {
    let cfg = config(cli)?;
    match &cli.command {
        Command::GenData { count, seed } => {
            let manifest = pipeline::cmd_gen_data(&cfg, *count, *seed)?;
            println!("{}", manifest.display());
        }
        Command::TrainTranslate { resume } => {
            let ckpt = pipeline::cmd_train_translate(&cfg, *resume)?;
            println!("{}", ckpt.display());
        }
        Command::TrainSeg { resume } => {
            let ckpt = pipeline::cmd_train_seg(&cfg, *resume)?;
            println!("{}", ckpt.display());
        }
        Command::Infer {
            input,
            out,
            skip_translation,
        } => {
            let s = pipeline::cmd_infer(&cfg, input, out, *skip_translation)?;
            println!("{} images segmented, {} skipped", s.written.len(), s.skipped.len());
            for f in &s.skipped {
                println!("skipped {}: {}", f.file, f.reason);
            }
        }
        Command::Eval { pred, gt, label } => {
            let o = pipeline::cmd_eval(&cfg, pred, gt, label)?;
            print!("{}", o.table);
            println!("reports in {}", o.dir.display());
        }
        Command::Ablate { labeled } => {
            let o = pipeline::cmd_ablate(&cfg, labeled)?;
            print!("{}", o.table);
            println!("reports in {}", o.dir.display());
        }
        Command::ShowConfig => println!("{}", cfg.to_json()),
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
