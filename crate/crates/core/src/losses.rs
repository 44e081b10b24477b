//! Distillation loss suite.
//!
//! All losses are recorded on a [`Graph`] so that the student's outputs get
//! exact gradients. Teacher outputs always enter as graph constants, so no
//! gradient can reach the teacher.
//!
//! "Prediction distribution" means the softmax of a timestep's classifier
//! output. With `D(t) = softmax(O(t))`:
//!
//! * classification (per-timestep): `1/T Σ_t CE(D(t), y)`
//! * hit consistency: distance between the means of `D(t)` over the
//!   timesteps each network classifies correctly (uniform `1/N_c` when there
//!   are none)
//! * temporal consistency: `1/T Σ_t dist(D_stu(t), D_tea(t))`
//! * total: `(1 − α)·cls + α·hit + α·temporal`

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensorgrad::{Graph, Tensor, Var};

/// Floor applied inside logarithms of probabilities.
pub const LOG_FLOOR: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AlphaSchedule {
    pub alpha0: f64,
    pub increment: f64,
    /// Epochs between increments.
    pub period: usize,
    pub cap: f64,
}

impl Default for AlphaSchedule {
    fn default() -> Self {
        Self {
            alpha0: 0.5,
            increment: 0.1,
            period: 30,
            cap: 0.9,
        }
    }
}

impl AlphaSchedule {
    /// A schedule pinned at `alpha` for every epoch.
    pub fn constant(alpha: f64) -> Self {
        Self {
            alpha0: alpha,
            increment: 0.0,
            period: 1,
            cap: alpha,
        }
    }

    pub fn alpha(&self, epoch: usize) -> f64 {
        let steps = (epoch / self.period) as f64;
        (self.alpha0 + self.increment * steps).min(self.cap)
    }

    pub fn validate(&self) -> Result<()> {
        if self.period == 0 {
            return Err(Error::Config("alpha period must be >= 1".into()));
        }
        if !(self.alpha0 >= 0.0 && self.increment >= 0.0) {
            return Err(Error::Config(
                "alpha0 and increment must be nonnegative".into(),
            ));
        }
        if !(self.cap < 1.0) {
            return Err(Error::Config(format!(
                "alpha cap must be < 1, got {}",
                self.cap
            )));
        }
        Ok(())
    }
}

/// Discrepancy between two distributions inside the distillation terms.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Distance {
    /// Mean of squared differences over classes.
    #[default]
    Mse,
    /// Cross-entropy with the teacher distribution as soft target.
    Ce,
    /// KL(teacher ‖ student).
    Kld,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossConfig {
    pub schedule: AlphaSchedule,
    pub use_hckd: bool,
    pub use_tckd: bool,
    pub hckd_distance: Distance,
    pub tckd_distance: Distance,
    /// Per-timestep classification loss; off means CE on time-averaged logits.
    pub cls_tet: bool,
    /// Per-timestep temporal consistency; off compares time-averaged distributions.
    pub tckd_tet: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            schedule: AlphaSchedule::default(),
            use_hckd: true,
            use_tckd: true,
            hckd_distance: Distance::Mse,
            tckd_distance: Distance::Mse,
            cls_tet: true,
            tckd_tet: true,
        }
    }
}

impl LossConfig {
    /// Same distance in both distillation terms.
    pub fn with_distance(mut self, d: Distance) -> Self {
        self.hckd_distance = d;
        self.tckd_distance = d;
        self
    }

    /// Classification only (α pinned at 0).
    pub fn cls_only() -> Self {
        Self {
            schedule: AlphaSchedule::constant(0.0),
            use_hckd: false,
            use_tckd: false,
            ..Self::default()
        }
    }
}

/// Student outputs (on the graph), teacher outputs (constant) and label.
#[derive(Clone, Debug)]
pub struct DistillSignals {
    pub student: Var,
    pub teacher: Tensor,
    pub label: usize,
}

/// Loss values of one evaluation, for logging.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    pub alpha: f64,
    pub cls: f64,
    pub hckd: f64,
    pub tckd: f64,
    pub total: f64,
}

fn check_outputs(g: &Graph, o: Var) -> Result<(usize, usize)> {
    match g.shape(o) {
        &[t, c] => Ok((t, c)),
        s => Err(Error::dim(
            "loss",
            format!("outputs must be [T, N_c], got {s:?}"),
        )),
    }
}

fn check_label(y: usize, classes: usize) -> Result<()> {
    if y >= classes {
        return Err(Error::Input(format!(
            "label {y} out of range for {classes} classes"
        )));
    }
    Ok(())
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Row-wise softmax of a `[T, N_c]` tensor.
pub fn softmax_rows(o: &Tensor) -> Result<Tensor> {
    let mut g = Graph::new();
    let x = g.constant(o.clone());
    let s = g.softmax(x, 1)?;
    Ok(g.value(s).clone())
}

/// Per-timestep softmax cross-entropy, averaged over timesteps.
pub fn cls_loss_tet(g: &mut Graph, o: Var, y: usize) -> Result<Var> {
    let (t, c) = check_outputs(g, o)?;
    check_label(y, c)?;
    let logp = g.log_softmax(o, 1)?;
    let mut mask = Tensor::zeros(vec![t, c]);
    for row in 0..t {
        mask.data_mut()[row * c + y] = 1.0;
    }
    let mask = g.constant(mask);
    let picked = g.mul(logp, mask)?;
    let s = g.sum(picked);
    Ok(g.scale(s, -1.0 / t as f64))
}

/// Cross-entropy of the time-averaged outputs.
pub fn cls_loss_integrated(g: &mut Graph, o: Var, y: usize) -> Result<Var> {
    let (_, c) = check_outputs(g, o)?;
    check_label(y, c)?;
    let m = g.mean(o, 0)?;
    let logp = g.log_softmax(m, 0)?;
    let mut mask = Tensor::zeros(vec![c]);
    mask.data_mut()[y] = 1.0;
    let mask = g.constant(mask);
    let picked = g.mul(logp, mask)?;
    let s = g.sum(picked);
    Ok(g.scale(s, -1.0))
}

/// Mean prediction distribution over the correctly classified timesteps,
/// or the uniform vector when no timestep is correct. Shape `[N_c]`.
pub fn hit_signal(g: &mut Graph, o: Var, y: usize) -> Result<Var> {
    let (t, c) = check_outputs(g, o)?;
    let d = g.softmax(o, 1)?;
    let hits: Vec<usize> = (0..t).filter(|&r| argmax(g.value(d).row(r)) == y).collect();
    if hits.is_empty() {
        return Ok(g.constant(Tensor::full(vec![c], 1.0 / c as f64)));
    }
    let rows = g.gather_rows(d, &hits)?;
    g.mean(rows, 0)
}

/// `rows` is the number of distributions stacked in `s`/`t` (1 for a vector).
fn distance(g: &mut Graph, s: Var, t: Var, mode: Distance, rows: usize) -> Result<Var> {
    match mode {
        Distance::Mse => {
            let diff = g.sub(s, t)?;
            let sq = g.mul(diff, diff)?;
            Ok(g.mean_all(sq))
        }
        Distance::Ce => {
            let ls = g.ln_floor(s, LOG_FLOOR);
            let prod = g.mul(ls, t)?;
            let total = g.sum(prod);
            Ok(g.scale(total, -1.0 / rows as f64))
        }
        Distance::Kld => {
            let lt = g.ln_floor(t, LOG_FLOOR);
            let ls = g.ln_floor(s, LOG_FLOOR);
            let diff = g.sub(lt, ls)?;
            let prod = g.mul(diff, t)?;
            let total = g.sum(prod);
            Ok(g.scale(total, 1.0 / rows as f64))
        }
    }
}

fn teacher_var(g: &mut Graph, student: Var, teacher: &Tensor) -> Result<Var> {
    if g.shape(student) != teacher.shape() {
        return Err(Error::Input(format!(
            "student outputs {:?} and teacher outputs {:?} differ in T or N_c",
            g.shape(student),
            teacher.shape()
        )));
    }
    Ok(g.constant(teacher.clone()))
}

pub fn hckd_loss(g: &mut Graph, signals: &DistillSignals, mode: Distance) -> Result<Var> {
    let tea = teacher_var(g, signals.student, &signals.teacher)?;
    let s = hit_signal(g, signals.student, signals.label)?;
    let t = hit_signal(g, tea, signals.label)?;
    distance(g, s, t, mode, 1)
}

/// Temporal consistency. With `tet` the distance is taken per timestep and
/// averaged; without it, between time-averaged distributions.
pub fn tckd_loss(
    g: &mut Graph,
    signals: &DistillSignals,
    mode: Distance,
    tet: bool,
) -> Result<Var> {
    let tea = teacher_var(g, signals.student, &signals.teacher)?;
    let (t, _) = check_outputs(g, signals.student)?;
    let ds = g.softmax(signals.student, 1)?;
    let dt = g.softmax(tea, 1)?;
    if tet {
        distance(g, ds, dt, mode, t)
    } else {
        let ms = g.mean(ds, 0)?;
        let mt = g.mean(dt, 0)?;
        distance(g, ms, mt, mode, 1)
    }
}

/// Weighted total with α taken from the schedule at `epoch`.
pub fn total_loss(
    g: &mut Graph,
    signals: &DistillSignals,
    epoch: usize,
    cfg: &LossConfig,
) -> Result<(Var, LossParts)> {
    let alpha = cfg.schedule.alpha(epoch);
    let cls = if cfg.cls_tet {
        cls_loss_tet(g, signals.student, signals.label)?
    } else {
        cls_loss_integrated(g, signals.student, signals.label)?
    };
    let mut parts = LossParts {
        alpha,
        cls: g.value(cls).item(),
        ..LossParts::default()
    };
    let mut total = g.scale(cls, 1.0 - alpha);
    if cfg.use_hckd {
        let h = hckd_loss(g, signals, cfg.hckd_distance)?;
        parts.hckd = g.value(h).item();
        let weighted = g.scale(h, alpha);
        total = g.add(total, weighted)?;
    }
    if cfg.use_tckd {
        let t = tckd_loss(g, signals, cfg.tckd_distance, cfg.tckd_tet)?;
        parts.tckd = g.value(t).item();
        let weighted = g.scale(t, alpha);
        total = g.add(total, weighted)?;
    }
    parts.total = g.value(total).item();
    Ok((total, parts))
}

/// Graph-free evaluation helpers.
pub mod value {
    use super::*;

    fn eval(o: &Tensor, f: impl FnOnce(&mut Graph, Var) -> Result<Var>) -> Result<Tensor> {
        let mut g = Graph::new();
        let x = g.constant(o.clone());
        let r = f(&mut g, x)?;
        Ok(g.value(r).clone())
    }

    pub fn cls_loss_tet(o: &Tensor, y: usize) -> Result<f64> {
        eval(o, |g, x| super::cls_loss_tet(g, x, y)).map(|t| t.item())
    }

    pub fn cls_loss_integrated(o: &Tensor, y: usize) -> Result<f64> {
        eval(o, |g, x| super::cls_loss_integrated(g, x, y)).map(|t| t.item())
    }

    pub fn hit_signal(o: &Tensor, y: usize) -> Result<Tensor> {
        eval(o, |g, x| super::hit_signal(g, x, y))
    }

    pub fn hckd_loss(stu: &Tensor, tea: &Tensor, y: usize, mode: Distance) -> Result<f64> {
        eval(stu, |g, x| {
            let s = DistillSignals {
                student: x,
                teacher: tea.clone(),
                label: y,
            };
            super::hckd_loss(g, &s, mode)
        })
        .map(|t| t.item())
    }

    pub fn tckd_loss(stu: &Tensor, tea: &Tensor, mode: Distance, tet: bool) -> Result<f64> {
        eval(stu, |g, x| {
            let s = DistillSignals {
                student: x,
                teacher: tea.clone(),
                label: 0,
            };
            super::tckd_loss(g, &s, mode, tet)
        })
        .map(|t| t.item())
    }

    pub fn total_loss(
        stu: &Tensor,
        tea: &Tensor,
        y: usize,
        epoch: usize,
        cfg: &LossConfig,
    ) -> Result<LossParts> {
        let mut g = Graph::new();
        let x = g.constant(stu.clone());
        let s = DistillSignals {
            student: x,
            teacher: tea.clone(),
            label: y,
        };
        super::total_loss(&mut g, &s, epoch, cfg).map(|(_, p)| p)
    }
}
