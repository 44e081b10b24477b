//! Teacher and student network definitions.

mod checkpoint;
mod layers;
mod params;
mod student;
mod teacher;

use rand::Rng;
use rayon::iter::IndexedParallelIterator;

pub use checkpoint::{
    load_checkpoint, save_checkpoint, Checkpoint, CheckpointMeta, Network, NetworkSpec,
};
pub use layers::{synaptic_ops, InputKind, LayerKind, LayerSpec, OpCounts};
pub use params::{Bound, Params};
pub use student::{Student, StudentConfig, STUDENT_BLOCKS};
pub use teacher::{Fusion, Teacher, TeacherConfig};

use crate::error::{Error, Result};
use crate::tensorgrad::{Tensor, Var};

/// Per-timestep pre-softmax classifier outputs, `[T, N_c]`.
#[derive(Clone, Debug, PartialEq)]
pub struct TimestepOutputs(Tensor);

impl TimestepOutputs {
    pub fn new(t: Tensor) -> Result<Self> {
        if t.rank() != 2 {
            return Err(Error::dim(
                "timestep outputs",
                format!("expected [T, N_c], got {:?}", t.shape()),
            ));
        }
        Ok(Self(t))
    }

    pub fn timesteps(&self) -> usize {
        self.0.shape()[0]
    }

    pub fn classes(&self) -> usize {
        self.0.shape()[1]
    }

    pub fn row(&self, t: usize) -> &[f64] {
        self.0.row(t)
    }

    pub fn tensor(&self) -> &Tensor {
        &self.0
    }

    pub fn into_tensor(self) -> Tensor {
        self.0
    }
}

/// Result of recording a network forward pass on a graph.
#[derive(Clone, Debug)]
pub struct NetForward {
    /// `[T, N_c]` classifier outputs.
    pub outputs: Var,
    pub ops: OpCounts,
    /// Firing rate of each spiking block, averaged over timesteps.
    pub rates: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub(crate) struct BlockGeom {
    pub in_channels: usize,
    pub out_channels: usize,
    /// Input spatial extent of the block.
    pub height: usize,
    pub width: usize,
    pub pool: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub(crate) struct BlockPlan {
    pub blocks: Vec<BlockGeom>,
    pub out_shape: [usize; 3],
    pub features: usize,
}

pub(crate) fn plan_blocks(
    in_channels: usize,
    height: usize,
    width: usize,
    widths: &[usize],
    kernel: usize,
    pool_after: &[usize],
    pool: usize,
) -> Result<BlockPlan> {
    if in_channels == 0 || height == 0 || width == 0 {
        return Err(Error::Config("input extents must be positive".into()));
    }
    if kernel == 0 || kernel.is_multiple_of(2) {
        return Err(Error::Config(format!(
            "kernel size must be odd, got {kernel}"
        )));
    }
    if kernel > height + kernel / 2 * 2 || kernel > width + kernel / 2 * 2 {
        return Err(Error::Config(format!(
            "kernel {kernel} larger than padded input"
        )));
    }
    if pool == 0 {
        return Err(Error::Config("pool size must be >= 1".into()));
    }
    if let Some(bad) = pool_after.iter().find(|&&b| b == 0 || b > widths.len()) {
        return Err(Error::Config(format!(
            "pool_after entry {bad} outside blocks 1..={}",
            widths.len()
        )));
    }
    let (mut c, mut h, mut w) = (in_channels, height, width);
    let mut blocks = Vec::with_capacity(widths.len());
    for (i, &out) in widths.iter().enumerate() {
        if out == 0 {
            return Err(Error::Config(format!("block {} has zero width", i + 1)));
        }
        let p = if pool_after.contains(&(i + 1)) {
            pool
        } else {
            1
        };
        if h < p || w < p {
            return Err(Error::Config(format!(
                "block {}: {h}x{w} map too small for pooling by {p}",
                i + 1
            )));
        }
        blocks.push(BlockGeom {
            in_channels: c,
            out_channels: out,
            height: h,
            width: w,
            pool: p,
        });
        c = out;
        h /= p;
        w /= p;
    }
    Ok(BlockPlan {
        blocks,
        out_shape: [c, h, w],
        features: c * h * w,
    })
}

pub(crate) fn check_frames(
    kind: &str,
    frames: &[Tensor],
    timesteps: usize,
    shape: [usize; 3],
) -> Result<()> {
    if frames.len() != timesteps {
        return Err(Error::Input(format!(
            "expected {timesteps} {kind} frames, got {}",
            frames.len()
        )));
    }
    for (t, f) in frames.iter().enumerate() {
        if f.shape() != shape {
            return Err(Error::Input(format!(
                "{kind} frame {t} has shape {:?}, expected {shape:?}",
                f.shape()
            )));
        }
    }
    Ok(())
}

pub(crate) fn spike_rate(spikes: &Tensor) -> f64 {
    spikes.sum() / spikes.numel() as f64
}

/// Averages per-window rate vectors in window order.
pub(crate) fn mean_rates(
    per_window: impl IndexedParallelIterator<Item = Result<Vec<f64>>>,
) -> Result<Vec<f64>> {
    let all: Vec<Vec<f64>> = per_window.collect::<Result<_>>()?;
    let n = all.len().max(1) as f64;
    let mut acc = vec![0.0; all.first().map_or(0, Vec::len)];
    for r in &all {
        for (a, v) in acc.iter_mut().zip(r) {
            *a += v / n;
        }
    }
    Ok(acc)
}

/// Rescales the named block weights, first to last, so that each block fires
/// at about `target` according to `measure`. Returns the applied factors.
pub(crate) fn calibrate_blocks(
    params: &mut Params,
    weights: &[String],
    target: f64,
    measure: impl Fn(&Params) -> Result<Vec<f64>>,
) -> Result<Vec<f64>> {
    if !(target > 0.0 && target < 1.0) {
        return Err(Error::Config(format!(
            "calibration rate must be in (0, 1), got {target}"
        )));
    }
    let mut factors = Vec::with_capacity(weights.len());
    for (i, name) in weights.iter().enumerate() {
        let base = params
            .get(name)
            .cloned()
            .ok_or_else(|| Error::State(format!("parameter `{name}` missing")))?;
        // Bisect on log2 of the factor; firing grows with the weight scale.
        let (mut lo, mut hi) = (-4.0f64, 6.0f64);
        for _ in 0..14 {
            let mid = 0.5 * (lo + hi);
            let c = mid.exp2();
            *params.get_mut(name).expect("present") = base.map(|v| v * c);
            if measure(params)?[i] < target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let c = (0.5 * (lo + hi)).exp2();
        *params.get_mut(name).expect("present") = base.map(|v| v * c);
        factors.push(c);
    }
    Ok(factors)
}

/// Fills `t` from U(−b, b) with b = √(6 / fan_in).
pub(crate) fn kaiming_uniform(t: &mut Tensor, rng: &mut impl Rng) {
    let fan_in: usize = t.shape()[1..].iter().product();
    let bound = (6.0 / fan_in as f64).sqrt();
    for v in t.data_mut() {
        *v = rng.gen_range(-bound..bound);
    }
}
