//! SGD with momentum, teacher pretraining and student distillation.

mod optim;

pub use optim::{sgd_step, OptimConfig, TrainState};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{make_batch, BatchItem, Dataset, Modality, Sample};
use crate::error::{Error, Result};
use crate::eval::{eval_windows, evaluate};
use crate::events::ExSy;
use crate::losses::{cls_loss_tet, total_loss, DistillSignals, LossConfig, LossParts};
use crate::nets::{Network, Params, Student, StudentConfig, Teacher, TeacherConfig};
use crate::tensorgrad::Graph;

/// Which samples the per-epoch evaluation runs on.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalSplit {
    #[default]
    Test,
    Train,
}

/// Run-level settings shared by both loops.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainSetup {
    pub window: ExSy,
    pub normalize_events: bool,
    pub seed: u64,
    pub eval_split: EvalSplit,
    /// Stop once the evaluation WAR reaches this value.
    pub stop_at_war: Option<f64>,
    /// Rescale the initial weights so each spiking block fires at about
    /// this rate on a few training windows.
    pub init_rate: Option<f64>,
}

/// Training windows drawn from a dedicated stream so calibration does not
/// shift the main shuffling sequence.
fn calibration_batch(ds: &Dataset, setup: &TrainSetup) -> Result<crate::data::Batch> {
    let train = ds.train();
    let n = train.len().min(CALIBRATION_WINDOWS);
    let mut rng = ChaCha8Rng::seed_from_u64(setup.seed);
    rng.set_stream(0xca1b);
    make_batch(
        &train[..n],
        setup.window,
        Modality::Both,
        setup.normalize_events,
        &mut rng,
    )
}

const CALIBRATION_WINDOWS: usize = 8;
pub const DEFAULT_INIT_RATE: f64 = 0.15;

impl TrainSetup {
    pub fn new(window: ExSy, seed: u64) -> Self {
        Self {
            window,
            normalize_events: true,
            seed,
            eval_split: EvalSplit::Test,
            stop_at_war: None,
            init_rate: Some(DEFAULT_INIT_RATE),
        }
    }
}

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub alpha: f64,
    pub loss_cls: f64,
    pub loss_hckd: f64,
    pub loss_tckd: f64,
    pub loss_total: f64,
    pub war: f64,
    pub uar: f64,
}

/// Batch-mean loss terms.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchRecord {
    pub epoch: usize,
    pub batch: usize,
    pub samples: usize,
    pub parts: LossParts,
}

pub enum Progress<'a> {
    Batch(&'a BatchRecord),
    Epoch(&'a EpochRecord),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trained<N> {
    /// Weights of the best evaluation WAR (ties favour later epochs).
    pub network: N,
    pub final_params: Params,
    pub best_epoch: usize,
    pub best_war: f64,
    pub best_uar: f64,
    pub history: Vec<EpochRecord>,
}

fn check_window(window: ExSy, timesteps: usize) -> Result<()> {
    window.validate()?;
    if window.x != timesteps {
        return Err(Error::Config(format!(
            "window {} selects {} frames but the network runs {timesteps} timesteps",
            window.label(),
            window.x
        )));
    }
    Ok(())
}

fn mean_parts(parts: &[LossParts]) -> LossParts {
    let n = parts.len() as f64;
    let sum = |f: fn(&LossParts) -> f64| parts.iter().map(f).sum::<f64>() / n;
    LossParts {
        alpha: parts.first().map_or(0.0, |p| p.alpha),
        cls: sum(|p| p.cls),
        hckd: sum(|p| p.hckd),
        tckd: sum(|p| p.tckd),
        total: sum(|p| p.total),
    }
}

struct LoopSpec<'a> {
    train: Vec<&'a Sample>,
    eval: Vec<&'a Sample>,
    modality: Modality,
    alpha: &'a (dyn Fn(usize) -> f64 + Sync),
}

fn run<N>(
    spec: LoopSpec<'_>,
    params: Params,
    optim: &OptimConfig,
    setup: &TrainSetup,
    mut rng: ChaCha8Rng,
    build: impl Fn(Params) -> Result<N>,
    as_network: impl Fn(&N) -> Network,
    sample_grad: impl Fn(&Params, &BatchItem, usize) -> Result<(Params, LossParts)> + Sync,
    observer: &mut dyn FnMut(Progress<'_>),
) -> Result<Trained<N>> {
    optim.validate()?;
    if spec.train.is_empty() {
        return Err(Error::Input("training split is empty".into()));
    }
    let windows = eval_windows(&spec.eval, setup.window, setup.seed)?;
    let mut state = TrainState::new(params, setup.seed);
    let mut history = Vec::with_capacity(optim.epochs);
    let mut best: Option<(usize, f64, f64, Params)> = None;
    let mut order: Vec<usize> = (0..spec.train.len()).collect();

    for epoch in 0..optim.epochs {
        state.epoch = epoch;
        let lr = optim.lr(epoch);
        order.shuffle(&mut rng);
        let mut epoch_parts = Vec::with_capacity(order.len());
        for (bi, chunk) in order.chunks(optim.batch_size).enumerate() {
            let samples: Vec<&Sample> = chunk.iter().map(|&i| spec.train[i]).collect();
            let batch = make_batch(
                &samples,
                setup.window,
                spec.modality,
                setup.normalize_events,
                &mut rng,
            )?;
            let results: Vec<(Params, LossParts)> = batch
                .items
                .par_iter()
                .map(|item| sample_grad(&state.params, item, epoch))
                .collect::<Result<_>>()?;
            let mut grads = state.params.zeros_like();
            let mut parts = Vec::with_capacity(results.len());
            for (g, p) in &results {
                grads.add_assign(g);
                parts.push(*p);
            }
            grads.scale(1.0 / results.len() as f64);
            let mean = mean_parts(&parts);
            if !mean.total.is_finite() || !grads.all_finite() {
                return Err(Error::Divergence {
                    epoch,
                    batch: bi,
                    loss: mean.total,
                });
            }
            if let Some(clip) = optim.grad_clip {
                let norm = grads.global_norm();
                if norm > clip {
                    grads.scale(clip / norm);
                }
            }
            sgd_step(&mut state, &grads, lr, optim)?;
            observer(Progress::Batch(&BatchRecord {
                epoch,
                batch: bi,
                samples: results.len(),
                parts: mean,
            }));
            epoch_parts.extend(parts);
        }

        let net = build(state.params.clone())?;
        let (war, uar) = if spec.eval.is_empty() {
            (0.0, 0.0)
        } else {
            let ev = evaluate(
                &as_network(&net),
                &spec.eval,
                &windows,
                setup.normalize_events,
            )?;
            let cm = ev.confusion(as_network(&net).num_classes())?;
            (cm.war(), cm.uar())
        };
        let m = mean_parts(&epoch_parts);
        let record = EpochRecord {
            epoch,
            lr,
            alpha: (spec.alpha)(epoch),
            loss_cls: m.cls,
            loss_hckd: m.hckd,
            loss_tckd: m.tckd,
            loss_total: m.total,
            war,
            uar,
        };
        log::info!(
            "epoch {epoch}: loss {:.5} (cls {:.5}) war {:.4} uar {:.4}",
            record.loss_total,
            record.loss_cls,
            war,
            uar
        );
        observer(Progress::Epoch(&record));
        history.push(record);
        if best.as_ref().is_none_or(|b| war >= b.1) {
            best = Some((epoch, war, uar, state.params.clone()));
        }
        if setup.stop_at_war.is_some_and(|target| war >= target) {
            break;
        }
    }

    let (best_epoch, best_war, best_uar, best_params) = best.expect("at least one epoch");
    Ok(Trained {
        network: build(best_params)?,
        final_params: state.params,
        best_epoch,
        best_war,
        best_uar,
        history,
    })
}

fn eval_samples(ds: &Dataset, split: EvalSplit) -> Vec<&Sample> {
    match split {
        EvalSplit::Test => ds.test(),
        EvalSplit::Train => ds.train(),
    }
}

/// Pretrains the multimodal teacher with the per-timestep classification
/// loss.
pub fn train_teacher(
    ds: &Dataset,
    cfg: &TeacherConfig,
    optim: &OptimConfig,
    setup: &TrainSetup,
    observer: &mut dyn FnMut(Progress<'_>),
) -> Result<Trained<Teacher>> {
    cfg.validate()?;
    check_window(setup.window, cfg.timesteps)?;
    let mut rng = ChaCha8Rng::seed_from_u64(setup.seed);
    let mut template = Teacher::init(cfg.clone(), &mut rng)?;
    if let Some(rate) = setup.init_rate {
        let b = calibration_batch(ds, setup)?;
        let frames: Vec<Vec<_>> = b.items.iter().map(|i| i.frames.clone()).collect();
        let events: Vec<Vec<_>> = b
            .items
            .iter()
            .map(|i| i.events.clone().unwrap_or_default())
            .collect();
        let f = template.calibrate(&frames, &events, rate)?;
        log::debug!("teacher init scales {f:?}");
    }
    let params = template.params().clone();
    let spec = LoopSpec {
        train: ds.train(),
        eval: eval_samples(ds, setup.eval_split),
        modality: Modality::Both,
        alpha: &|_| 0.0,
    };
    run(
        spec,
        params,
        optim,
        setup,
        rng,
        |p| Teacher::from_params(cfg.clone(), p),
        |t| Network::Teacher(t.clone()),
        |params, item, _| {
            let mut g = Graph::new();
            let bound = params.bind(&mut g, true);
            let events = item.events.as_deref().ok_or_else(|| {
                Error::Input(format!("sample {} has no event frames", item.sample_id))
            })?;
            let fwd = template.forward(&mut g, &bound, &item.frames, events)?;
            let loss = cls_loss_tet(&mut g, fwd.outputs, item.label)?;
            let cls = g.value(loss).item();
            g.backward(loss)?;
            Ok((
                bound.grads(&g),
                LossParts {
                    alpha: 0.0,
                    cls,
                    hckd: 0.0,
                    tckd: 0.0,
                    total: cls,
                },
            ))
        },
        observer,
    )
}

/// Trains the intensity-only student against a frozen teacher.
pub fn distill_student(
    ds: &Dataset,
    teacher: &Teacher,
    cfg: &StudentConfig,
    optim: &OptimConfig,
    losses: &LossConfig,
    setup: &TrainSetup,
    observer: &mut dyn FnMut(Progress<'_>),
) -> Result<Trained<Student>> {
    cfg.validate()?;
    losses.schedule.validate()?;
    let tcfg = teacher.config();
    if tcfg.timesteps != cfg.timesteps {
        return Err(Error::Config(format!(
            "teacher runs {} timesteps but the student runs {}",
            tcfg.timesteps, cfg.timesteps
        )));
    }
    if tcfg.num_classes != cfg.num_classes {
        return Err(Error::Config(format!(
            "teacher predicts {} classes but the student {}",
            tcfg.num_classes, cfg.num_classes
        )));
    }
    check_window(setup.window, cfg.timesteps)?;
    let mut rng = ChaCha8Rng::seed_from_u64(setup.seed);
    let mut template = Student::init(cfg.clone(), &mut rng)?;
    if let Some(rate) = setup.init_rate {
        let b = calibration_batch(ds, setup)?;
        let frames: Vec<Vec<_>> = b.items.iter().map(|i| i.frames.clone()).collect();
        let f = template.calibrate(&frames, rate)?;
        log::debug!("student init scales {f:?}");
    }
    let params = template.params().clone();
    let alpha = |e: usize| losses.schedule.alpha(e);
    let spec = LoopSpec {
        train: ds.train(),
        eval: eval_samples(ds, setup.eval_split),
        modality: Modality::Both,
        alpha: &alpha,
    };
    run(
        spec,
        params,
        optim,
        setup,
        rng,
        |p| Student::from_params(cfg.clone(), p),
        |s| Network::Student(s.clone()),
        |params, item, epoch| {
            let events = item.events.as_deref().ok_or_else(|| {
                Error::Input(format!("sample {} has no event frames", item.sample_id))
            })?;
            let (teacher_out, _) = teacher.infer(&item.frames, events)?;
            let mut g = Graph::new();
            let bound = params.bind(&mut g, true);
            let fwd = template.forward(&mut g, &bound, &item.frames)?;
            let signals = DistillSignals {
                student: fwd.outputs,
                teacher: teacher_out.into_tensor(),
                label: item.label,
            };
            let (loss, parts) = total_loss(&mut g, &signals, epoch, losses)?;
            g.backward(loss)?;
            Ok((bound.grads(&g), parts))
        },
        observer,
    )
}
