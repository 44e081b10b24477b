//! Recognition metrics, grouped breakdowns, evaluation passes and the
//! energy profiler.

mod energy;
mod report;

pub use energy::{EnergyReport, Profiler, E_AC_PJ, E_MAC_PJ};
pub use report::{GroupScore, Report};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{window_item, Lighting, Modality, Sample};
use crate::error::{Error, Result};
use crate::events::{exsy_sample, ExSy};
use crate::losses::{argmax, softmax_rows};
use crate::nets::{Network, OpCounts, TimestepOutputs};

/// Rows are true classes, columns predicted classes.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        Self {
            counts: vec![vec![0; classes]; classes],
        }
    }

    pub fn from_pairs(classes: usize, labels: &[usize], preds: &[usize]) -> Result<Self> {
        if labels.len() != preds.len() {
            return Err(Error::Input(format!(
                "{} labels but {} predictions",
                labels.len(),
                preds.len()
            )));
        }
        let mut cm = Self::new(classes);
        for (&y, &p) in labels.iter().zip(preds) {
            cm.add(y, p)?;
        }
        Ok(cm)
    }

    pub fn add(&mut self, truth: usize, pred: usize) -> Result<()> {
        let n = self.classes();
        if truth >= n || pred >= n {
            return Err(Error::Input(format!(
                "class pair ({truth}, {pred}) outside {n} classes"
            )));
        }
        self.counts[truth][pred] += 1;
        Ok(())
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if other.classes() != self.classes() {
            return Err(Error::Input(
                "cannot merge confusion matrices of different sizes".into(),
            ));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
        Ok(())
    }

    pub fn classes(&self) -> usize {
        self.counts.len()
    }

    pub fn counts(&self) -> &[Vec<u64>] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.classes()).map(|i| self.counts[i][i]).sum()
    }

    pub fn row_total(&self, class: usize) -> u64 {
        self.counts[class].iter().sum()
    }

    /// Recall of `class`, or `None` when it has no true samples.
    pub fn recall(&self, class: usize) -> Option<f64> {
        let n = self.row_total(class);
        (n > 0).then(|| self.counts[class][class] as f64 / n as f64)
    }

    /// Overall accuracy; zero for an empty matrix.
    pub fn war(&self) -> f64 {
        match self.total() {
            0 => 0.0,
            n => self.trace() as f64 / n as f64,
        }
    }

    /// Mean per-class recall over classes that have true samples.
    pub fn uar(&self) -> f64 {
        let mut sum = 0.0;
        let mut present = 0;
        for c in 0..self.classes() {
            match self.recall(c) {
                Some(r) => {
                    sum += r;
                    present += 1;
                }
                None => log::warn!("class {c} has no true samples; excluded from UAR"),
            }
        }
        if present == 0 {
            0.0
        } else {
            sum / present as f64
        }
    }
}

/// Argmax of the time-averaged softmax; ties go to the lowest index.
pub fn predict(o: &TimestepOutputs) -> usize {
    let probs = softmax_rows(o.tensor()).expect("timestep outputs are [T, N_c]");
    let (t, c) = (o.timesteps(), o.classes());
    let mean: Vec<f64> = (0..c)
        .map(|k| (0..t).map(|i| probs.data()[i * c + k]).sum::<f64>() / t as f64)
        .collect();
    argmax(&mean)
}

pub fn class_names(classes: usize) -> Vec<String> {
    const EMOTIONS: [&str; 7] = [
        "happy", "sad", "anger", "disgust", "surprise", "fear", "neutral",
    ];
    if classes == EMOTIONS.len() {
        EMOTIONS.iter().map(|s| s.to_string()).collect()
    } else {
        (0..classes).map(|i| format!("class{i}")).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub sample_id: String,
    pub label: usize,
    pub lighting: Lighting,
    pub predicted: usize,
}

impl Prediction {
    pub fn correct(&self) -> bool {
        self.label == self.predicted
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Breakdown {
    pub per_emotion: Vec<GroupScore>,
    pub per_lighting: Vec<GroupScore>,
}

fn group_scores<K: Ord + Copy>(
    preds: &[Prediction],
    key: impl Fn(&Prediction) -> K,
    name: impl Fn(K) -> String,
) -> Vec<GroupScore> {
    let mut groups = std::collections::BTreeMap::<K, (usize, usize)>::new();
    for p in preds {
        let e = groups.entry(key(p)).or_default();
        e.0 += 1;
        e.1 += p.correct() as usize;
    }
    groups
        .into_iter()
        .map(|(k, (count, correct))| GroupScore {
            group: name(k),
            count,
            correct,
            accuracy: correct as f64 / count as f64,
        })
        .collect()
}

/// Accuracy per true class and per lighting tag; empty groups are omitted.
pub fn breakdown(preds: &[Prediction], classes: usize) -> Breakdown {
    let names = class_names(classes);
    Breakdown {
        per_emotion: group_scores(
            preds,
            |p| p.label,
            |k| names.get(k).cloned().unwrap_or_else(|| format!("class{k}")),
        ),
        per_lighting: group_scores(preds, |p| p.lighting, |l| l.to_string()),
    }
}

/// One fixed window per sample, drawn from a dedicated stream of `seed`.
pub fn eval_windows(samples: &[&Sample], window: ExSy, seed: u64) -> Result<Vec<Vec<usize>>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(0xe7a1);
    samples
        .iter()
        .map(|s| {
            exsy_sample(s.frame_count(), window, &mut rng)
                .map(|(_, idx)| idx)
                .map_err(|e| Error::Input(format!("sample {}: {e}", s.id)))
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub predictions: Vec<Prediction>,
    pub ops: OpCounts,
    /// Per-sample op counts in sample order.
    pub sample_ops: Vec<OpCounts>,
}

impl Evaluation {
    pub fn confusion(&self, classes: usize) -> Result<ConfusionMatrix> {
        let labels: Vec<usize> = self.predictions.iter().map(|p| p.label).collect();
        let preds: Vec<usize> = self.predictions.iter().map(|p| p.predicted).collect();
        ConfusionMatrix::from_pairs(classes, &labels, &preds)
    }
}

/// Runs `net` on each sample at its window; the student sees intensity
/// frames only, the teacher both modalities.
pub fn evaluate(
    net: &Network,
    samples: &[&Sample],
    windows: &[Vec<usize>],
    normalize_events: bool,
) -> Result<Evaluation> {
    if samples.len() != windows.len() {
        return Err(Error::Input(format!(
            "{} samples but {} windows",
            samples.len(),
            windows.len()
        )));
    }
    let outputs: Vec<(Prediction, OpCounts)> = samples
        .par_iter()
        .zip(windows.par_iter())
        .map(|(s, idx)| {
            let (o, ops) = match net {
                Network::Student(st) => {
                    let item =
                        window_item(s, idx.clone(), Modality::IntensityOnly, normalize_events);
                    st.infer(&item.frames)?
                }
                Network::Teacher(te) => {
                    let item = window_item(s, idx.clone(), Modality::Both, normalize_events);
                    te.infer(&item.frames, item.events.as_deref().unwrap_or_default())?
                }
            };
            Ok((
                Prediction {
                    sample_id: s.id.clone(),
                    label: s.label,
                    lighting: s.lighting,
                    predicted: predict(&o),
                },
                ops,
            ))
        })
        .collect::<Result<_>>()?;
    let mut ops = OpCounts::default();
    let mut predictions = Vec::with_capacity(outputs.len());
    let mut sample_ops = Vec::with_capacity(outputs.len());
    for (p, o) in outputs {
        ops += o;
        sample_ops.push(o);
        predictions.push(p);
    }
    Ok(Evaluation {
        predictions,
        ops,
        sample_ops,
    })
}
