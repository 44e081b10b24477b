use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use spikedistill::config::RunConfig;
use spikedistill::data::{read_pgm, save_dataset, synth_dataset, SynthConfig};
use spikedistill::events::{
    events_to_frames, video_to_events, write_events_csv, write_evfr, EventConfig, FPS,
};
use spikedistill::pipeline::{
    run_distill_student, run_evaluate, run_profile, run_train_teacher, RunSummary,
};
use spikedistill::Error;

#[derive(Parser)]
#[command(
    name = "spikedistill",
    version,
    about = "Multimodal-to-spiking distillation pipeline"
)]
struct Cli {
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true, env = "SPIKEDISTILL_THREADS")]
    threads: Option<usize>,

    /// Log progress (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic dataset.
    SynthData {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 8)]
        subjects: usize,
        /// Sequences per subject.
        #[arg(long, default_value_t = 14)]
        sequences: usize,
        #[arg(long, default_value_t = 30)]
        frames: usize,
        #[arg(long, default_value_t = 32)]
        size: usize,
        /// Write into a non-empty directory.
        #[arg(long)]
        force: bool,
    },
    /// Convert a directory of PGM frames into an event stream.
    SimulateEvents {
        #[arg(long = "in")]
        input: PathBuf,
        /// CSV output; event frames go next to it with an `.evfr` extension.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0.2)]
        threshold: f64,
        #[arg(long, default_value_t = 1e-3)]
        eps: f64,
        #[arg(long, default_value_t = 30)]
        fps: u64,
    },
    /// Pretrain the multimodal teacher.
    TrainTeacher(ConfigArgs),
    /// Distill the intensity-only student from a teacher checkpoint.
    DistillStudent {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        teacher: PathBuf,
    },
    /// Evaluate a checkpoint on the configured split.
    Evaluate {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Evaluate with op counting and the energy estimate.
    Profile {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        checkpoint: PathBuf,
    },
}

#[derive(Args)]
struct ConfigArgs {
    /// JSON config; missing keys take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dotted-path override, e.g. `optim.lr0=0.01`; repeatable.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<RunConfig, Error> {
        RunConfig::resolve(self.config.as_deref(), &self.overrides)
    }
}

fn synth(out: &Path, cfg: SynthConfig, seed: u64, force: bool) -> Result<(), Error> {
    let occupied = fs::read_dir(out)
        .map(|mut d| d.next().is_some())
        .unwrap_or(false);
    if occupied && !force {
        return Err(Error::Input(format!(
            "{} exists and is not empty; pass --force to write into it",
            out.display()
        )));
    }
    let ds = synth_dataset(&cfg, seed)?;
    save_dataset(&ds, out)?;
    println!(
        "wrote {} samples ({} train, {} test) to {}",
        ds.samples.len(),
        ds.split.train.len(),
        ds.split.test.len(),
        out.display()
    );
    Ok(())
}

fn simulate(input: &Path, out: &Path, threshold: f64, eps: f64, fps: u64) -> Result<(), Error> {
    if fps != FPS {
        return Err(Error::Config(format!(
            "only {FPS} fps input is supported, got {fps}"
        )));
    }
    EventConfig {
        threshold,
        eps,
        normalize: true,
    }
    .validate()?;
    let mut paths: Vec<PathBuf> = fs::read_dir(input)
        .map_err(|e| Error::Input(format!("{}: {e}", input.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "pgm"))
        .collect();
    paths.sort();
    let frames = paths
        .iter()
        .map(|p| read_pgm(p))
        .collect::<Result<Vec<_>, _>>()?;
    let stream = video_to_events(&frames, threshold, eps)?;
    write_events_csv(out, &stream.events)?;
    let evfr = out.with_extension("evfr");
    write_evfr(&evfr, &events_to_frames(&stream, frames.len())?)?;
    println!(
        "{} events from {} frames -> {}, {}",
        stream.len(),
        frames.len(),
        out.display(),
        evfr.display()
    );
    Ok(())
}

fn show(summary: RunSummary) {
    println!("run directory: {}", summary.dir.display());
    print!("{}", summary.report.to_table());
}

fn dispatch(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::SynthData {
            out,
            seed,
            subjects,
            sequences,
            frames,
            size,
            force,
        } => {
            let cfg = SynthConfig {
                subjects,
                sequences_per_subject: sequences,
                frames_per_sequence: frames,
                size,
                ..SynthConfig::default()
            };
            synth(&out, cfg, seed, force)
        }
        Command::SimulateEvents {
            input,
            out,
            threshold,
            eps,
            fps,
        } => simulate(&input, &out, threshold, eps, fps),
        Command::TrainTeacher(args) => run_train_teacher(&args.resolve()?).map(show),
        Command::DistillStudent { cfg, teacher } => {
            if !teacher.join("manifest.json").is_file() {
                return Err(Error::Input(format!(
                    "teacher checkpoint not found at {}",
                    teacher.display()
                )));
            }
            run_distill_student(&cfg.resolve()?, &teacher).map(show)
        }
        Command::Evaluate { cfg, checkpoint } => {
            run_evaluate(&cfg.resolve()?, &checkpoint).map(show)
        }
        Command::Profile { cfg, checkpoint } => run_profile(&cfg.resolve()?, &checkpoint).map(show),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::from(2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
        {
            eprintln!("error: cannot start thread pool: {e}");
            return ExitCode::from(1);
        }
    }
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_config() { 2 } else { 1 })
        }
    }
}
