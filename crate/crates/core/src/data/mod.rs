//! Samples, datasets, splits and windowed batching.

mod store;
mod synth;

pub use store::{load_dataset, read_pgm, save_dataset, write_pgm};
pub use synth::{synth_dataset, SynthConfig};

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::events::{exsy_sample, normalize_frame, Event, ExSy};
use crate::tensorgrad::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Lighting {
    Normal,
    Overexposure,
    LowLight,
    Hdr,
}

impl Lighting {
    pub const ALL: [Lighting; 4] = [
        Lighting::Normal,
        Lighting::Overexposure,
        Lighting::LowLight,
        Lighting::Hdr,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Lighting::Normal => "normal",
            Lighting::Overexposure => "overexposure",
            Lighting::LowLight => "low_light",
            Lighting::Hdr => "hdr",
        }
    }
}

impl fmt::Display for Lighting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One labelled sequence with both modalities on a shared 1/30 s grid.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub id: String,
    pub subject: u32,
    pub label: usize,
    pub lighting: Lighting,
    /// Grayscale frames `[1, H, W]` in `[0, 1]`.
    pub intensity: Vec<Tensor>,
    /// Raw event counts `[2, H, W]`; frame `k` holds window `k`.
    pub events: Vec<Tensor>,
    pub raw_events: Option<Vec<Event>>,
}

impl Sample {
    pub fn frame_count(&self) -> usize {
        self.intensity.len()
    }

    pub fn validate(&self, num_classes: usize, height: usize, width: usize) -> Result<()> {
        if self.label >= num_classes {
            return Err(Error::Input(format!(
                "sample {}: label {} out of range for {num_classes} classes",
                self.id, self.label
            )));
        }
        if self.intensity.len() != self.events.len() {
            return Err(Error::Input(format!(
                "sample {}: {} intensity frames but {} event frames",
                self.id,
                self.intensity.len(),
                self.events.len()
            )));
        }
        for f in &self.intensity {
            if f.shape() != [1, height, width] {
                return Err(Error::Input(format!(
                    "sample {}: intensity frame shape {:?}",
                    self.id,
                    f.shape()
                )));
            }
        }
        for f in &self.events {
            if f.shape() != [2, height, width] {
                return Err(Error::Input(format!(
                    "sample {}: event frame shape {:?}",
                    self.id,
                    f.shape()
                )));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitManifest {
    pub train: Vec<String>,
    pub test: Vec<String>,
}

impl SplitManifest {
    /// Every id exists and no subject appears on both sides.
    pub fn validate(&self, samples: &[Sample]) -> Result<()> {
        let subjects: BTreeMap<&str, u32> =
            samples.iter().map(|s| (s.id.as_str(), s.subject)).collect();
        let lookup = |id: &String| {
            subjects
                .get(id.as_str())
                .copied()
                .ok_or_else(|| Error::Input(format!("split references unknown sample `{id}`")))
        };
        let train: BTreeSet<u32> = self.train.iter().map(lookup).collect::<Result<_>>()?;
        let test: BTreeSet<u32> = self.test.iter().map(lookup).collect::<Result<_>>()?;
        if let Some(s) = train.intersection(&test).next() {
            return Err(Error::Input(format!(
                "subject {s} appears in both train and test splits"
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub width: usize,
    pub height: usize,
    pub num_classes: usize,
    pub samples: Vec<Sample>,
    pub split: SplitManifest,
}

impl Dataset {
    pub fn validate(&self) -> Result<()> {
        let mut seen = BTreeSet::new();
        for s in &self.samples {
            if !seen.insert(s.id.as_str()) {
                return Err(Error::Input(format!("duplicate sample id `{}`", s.id)));
            }
            s.validate(self.num_classes, self.height, self.width)?;
        }
        self.split.validate(&self.samples)
    }

    pub fn get(&self, id: &str) -> Option<&Sample> {
        self.samples.iter().find(|s| s.id == id)
    }

    fn resolve(&self, ids: &[String]) -> Vec<&Sample> {
        let index: BTreeMap<&str, &Sample> =
            self.samples.iter().map(|s| (s.id.as_str(), s)).collect();
        ids.iter()
            .filter_map(|id| index.get(id.as_str()).copied())
            .collect()
    }

    pub fn train(&self) -> Vec<&Sample> {
        self.resolve(&self.split.train)
    }

    pub fn test(&self) -> Vec<&Sample> {
        self.resolve(&self.split.test)
    }

    pub fn subjects(&self) -> BTreeSet<u32> {
        self.samples.iter().map(|s| s.subject).collect()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modality {
    #[default]
    Both,
    IntensityOnly,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BatchItem {
    pub sample_id: String,
    pub label: usize,
    pub lighting: Lighting,
    pub indices: Vec<usize>,
    /// `T` frames `[1, H, W]`.
    pub frames: Vec<Tensor>,
    /// `T` frames `[2, H, W]`, absent in intensity-only batches.
    pub events: Option<Vec<Tensor>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub items: Vec<BatchItem>,
}

fn stack(frames: &[&[Tensor]]) -> Option<Tensor> {
    let first = frames.first()?.first()?;
    let mut shape = vec![frames.len(), frames[0].len()];
    shape.extend_from_slice(first.shape());
    let data: Vec<f64> = frames
        .iter()
        .flat_map(|seq| seq.iter().flat_map(|f| f.data().iter().copied()))
        .collect();
    Tensor::new(shape, data).ok()
}

impl Batch {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// `[B, T, 1, H, W]`.
    pub fn frames_tensor(&self) -> Option<Tensor> {
        let seqs: Vec<&[Tensor]> = self.items.iter().map(|i| i.frames.as_slice()).collect();
        stack(&seqs)
    }

    /// `[B, T, 2, H, W]`, or `None` for intensity-only batches.
    pub fn events_tensor(&self) -> Option<Tensor> {
        let seqs: Option<Vec<&[Tensor]>> = self.items.iter().map(|i| i.events.as_deref()).collect();
        stack(&seqs?)
    }
}

/// Selects the window frames of one sample at `indices`.
pub fn window_item(
    sample: &Sample,
    indices: Vec<usize>,
    modality: Modality,
    normalize: bool,
) -> BatchItem {
    let frames = indices
        .iter()
        .map(|&i| sample.intensity[i].clone())
        .collect();
    let events = match modality {
        Modality::Both => Some(
            indices
                .iter()
                .map(|&i| {
                    if normalize {
                        normalize_frame(&sample.events[i])
                    } else {
                        sample.events[i].clone()
                    }
                })
                .collect(),
        ),
        Modality::IntensityOnly => None,
    };
    BatchItem {
        sample_id: sample.id.clone(),
        label: sample.label,
        lighting: sample.lighting,
        indices,
        frames,
        events,
    }
}

/// Draws one ExSy window per sample (in order) and gathers the frames.
pub fn make_batch(
    samples: &[&Sample],
    window: ExSy,
    modality: Modality,
    normalize: bool,
    rng: &mut impl Rng,
) -> Result<Batch> {
    let mut items = Vec::with_capacity(samples.len());
    for s in samples {
        let (_, indices) = exsy_sample(s.frame_count(), window, rng).map_err(|e| match e {
            Error::InfeasibleWindow { needed, available } => Error::Input(format!(
                "sample {}: window needs {needed} frames, sequence has {available}",
                s.id
            )),
            other => other,
        })?;
        items.push(window_item(s, indices, modality, normalize));
    }
    Ok(Batch { items })
}
