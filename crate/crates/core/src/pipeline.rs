//! End-to-end commands writing into content-addressed run directories.
//!
//! A run directory `<output_dir>/<command>-<hash12>-seed<N>/` holds the
//! resolved `config.json`, `inputs.json`, and the command's artifacts:
//! `checkpoint/`, `train_log.jsonl`, `report.json` and `report.txt`.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::config::RunConfig;
use crate::data::{load_dataset, Dataset, Sample};
use crate::error::{Error, Result};
use crate::eval::{eval_windows, evaluate, Profiler, Report};
use crate::nets::{load_checkpoint, save_checkpoint, CheckpointMeta, Network};
use crate::train::{distill_student, train_teacher, EvalSplit, Progress, TrainSetup, Trained};

#[derive(Clone, Debug)]
pub struct RunSummary {
    pub dir: PathBuf,
    pub report: Report,
}

#[derive(Serialize)]
struct Inputs<'a> {
    command: &'a str,
    checkpoint: Option<String>,
}

fn prepare_dir(cfg: &RunConfig, command: &str, checkpoint: Option<&Path>) -> Result<PathBuf> {
    let ckpt = checkpoint.map(|p| p.display().to_string());
    let digest = cfg.digest(&[command, ckpt.as_deref().unwrap_or("")]);
    let dir = cfg
        .output_dir
        .join(format!("{command}-{}-seed{}", &digest[..12], cfg.seed));
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    write_file(&dir.join("config.json"), &cfg.to_json())?;
    let inputs = Inputs {
        command,
        checkpoint: ckpt,
    };
    write_file(
        &dir.join("inputs.json"),
        &(serde_json::to_string_pretty(&inputs).expect("serializes") + "\n"),
    )?;
    Ok(dir)
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn load_data(cfg: &RunConfig, classes: usize) -> Result<Dataset> {
    let ds = load_dataset(&cfg.data.root)?;
    if ds.num_classes != classes {
        return Err(Error::Config(format!(
            "dataset has {} classes but the network predicts {classes}",
            ds.num_classes
        )));
    }
    Ok(ds)
}

fn split(ds: &Dataset, s: EvalSplit) -> Vec<&Sample> {
    match s {
        EvalSplit::Test => ds.test(),
        EvalSplit::Train => ds.train(),
    }
}

fn setup(cfg: &RunConfig) -> TrainSetup {
    TrainSetup {
        window: cfg.window,
        normalize_events: cfg.events.normalize,
        seed: cfg.seed,
        eval_split: cfg.eval.split,
        stop_at_war: None,
        init_rate: cfg.nets.init_rate,
    }
}

/// Appends one JSON line per epoch, flushing so a failed run keeps its log.
struct EpochLog {
    out: BufWriter<File>,
    path: PathBuf,
    error: Option<Error>,
}

impl EpochLog {
    fn create(path: PathBuf) -> Result<Self> {
        let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
        Ok(Self {
            out: BufWriter::new(file),
            path,
            error: None,
        })
    }

    fn observe(&mut self, p: Progress<'_>) {
        if let (Progress::Epoch(rec), None) = (p, &self.error) {
            let line = serde_json::to_string(rec).expect("record serializes");
            if let Err(e) = writeln!(self.out, "{line}").and_then(|_| self.out.flush()) {
                self.error = Some(Error::io(&self.path, e));
            }
        }
    }

    fn finish(self) -> Result<()> {
        match self.error {
            Some(e) => Err(e),
            None => Ok(()),
        }
    }
}

fn report_for(cfg: &RunConfig, net: &Network, ds: &Dataset, profile: bool) -> Result<Report> {
    let samples = split(ds, cfg.eval.split);
    let windows = eval_windows(&samples, cfg.window, cfg.seed)?;
    let ev = evaluate(net, &samples, &windows, cfg.events.normalize)?;
    let cm = ev.confusion(net.num_classes())?;
    let energy = if profile {
        let mut prof = Profiler::new(net.layers(), net.timesteps());
        for &o in &ev.sample_ops {
            prof.record(o);
        }
        Some(prof.report()?)
    } else {
        None
    };
    Ok(Report::new(
        net.kind(),
        &cfg.window.label(),
        &cm,
        &ev.predictions,
        energy,
    ))
}

fn write_report(dir: &Path, name: &str, report: &Report) -> Result<()> {
    let json = serde_json::to_string_pretty(report).expect("report serializes") + "\n";
    write_file(&dir.join(name), &json)?;
    let txt = Path::new(name).with_extension("txt");
    write_file(&dir.join(txt), &report.to_table())
}

fn finish_training<N>(
    cfg: &RunConfig,
    dir: PathBuf,
    ds: &Dataset,
    trained: &Trained<N>,
    net: Network,
) -> Result<RunSummary> {
    let meta = CheckpointMeta {
        epoch: Some(trained.best_epoch),
        war: Some(trained.best_war),
        uar: Some(trained.best_uar),
        seed: Some(cfg.seed),
    };
    save_checkpoint(&dir.join("checkpoint"), &net, &meta)?;
    let report = report_for(cfg, &net, ds, false)?;
    write_report(&dir, &cfg.eval.report, &report)?;
    Ok(RunSummary { dir, report })
}

pub fn run_train_teacher(cfg: &RunConfig) -> Result<RunSummary> {
    let ds = load_data(cfg, cfg.nets.teacher.num_classes)?;
    let dir = prepare_dir(cfg, "train-teacher", None)?;
    let mut log = EpochLog::create(dir.join("train_log.jsonl"))?;
    let trained = train_teacher(&ds, &cfg.nets.teacher, &cfg.optim, &setup(cfg), &mut |p| {
        log.observe(p)
    });
    log.finish()?;
    let trained = trained?;
    let net = Network::Teacher(trained.network.clone());
    finish_training(cfg, dir, &ds, &trained, net)
}

pub fn run_distill_student(cfg: &RunConfig, teacher_ckpt: &Path) -> Result<RunSummary> {
    let ckpt = load_checkpoint(teacher_ckpt)?;
    let teacher = match ckpt.network {
        Network::Teacher(t) => t,
        Network::Student(_) => {
            return Err(Error::Input(format!(
                "{} holds a student checkpoint, expected a teacher",
                teacher_ckpt.display()
            )))
        }
    };
    let ds = load_data(cfg, cfg.nets.student.num_classes)?;
    let dir = prepare_dir(cfg, "distill-student", Some(teacher_ckpt))?;
    let mut log = EpochLog::create(dir.join("train_log.jsonl"))?;
    let trained = distill_student(
        &ds,
        &teacher,
        &cfg.nets.student,
        &cfg.optim,
        &cfg.losses,
        &setup(cfg),
        &mut |p| log.observe(p),
    );
    log.finish()?;
    let trained = trained?;
    let net = Network::Student(trained.network.clone());
    finish_training(cfg, dir, &ds, &trained, net)
}

fn run_eval(cfg: &RunConfig, ckpt: &Path, command: &str, profile: bool) -> Result<RunSummary> {
    let net = load_checkpoint(ckpt)?.network;
    let ds = load_data(cfg, net.num_classes())?;
    if cfg.window.x != net.timesteps() {
        return Err(Error::Config(format!(
            "window {} selects {} frames but the checkpoint runs {} timesteps",
            cfg.window.label(),
            cfg.window.x,
            net.timesteps()
        )));
    }
    let dir = prepare_dir(cfg, command, Some(ckpt))?;
    let report = report_for(cfg, &net, &ds, profile)?;
    write_report(&dir, &cfg.eval.report, &report)?;
    Ok(RunSummary { dir, report })
}

pub fn run_evaluate(cfg: &RunConfig, ckpt: &Path) -> Result<RunSummary> {
    run_eval(cfg, ckpt, "evaluate", false)
}

/// Evaluation pass with op counting and the energy estimate.
pub fn run_profile(cfg: &RunConfig, ckpt: &Path) -> Result<RunSummary> {
    run_eval(cfg, ckpt, "profile", true)
}
