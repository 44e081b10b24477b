use crate::tensorgrad::kernels::{conv_fanout_map, ConvGeom};
use crate::tensorgrad::Tensor;

/// What feeds a layer: real-valued activations (multiply-accumulate work) or
/// binary spikes (one addition per spike per target).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InputKind {
    Analog,
    Spikes,
}

#[derive(Clone, Debug, PartialEq)]
pub enum LayerKind {
    /// Stride-1, same-padded convolution over `height`×`width` inputs.
    Conv {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        height: usize,
        width: usize,
    },
    Linear {
        inputs: usize,
        outputs: usize,
        bias: bool,
    },
}

/// Static description of one synaptic layer, used for parameter, FLOP and
/// energy accounting.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerSpec {
    pub name: String,
    pub kind: LayerKind,
    pub input: InputKind,
}

impl LayerSpec {
    pub fn params(&self) -> usize {
        match self.kind {
            LayerKind::Conv {
                in_channels,
                out_channels,
                kernel,
                ..
            } => in_channels * out_channels * kernel * kernel + out_channels,
            LayerKind::Linear {
                inputs,
                outputs,
                bias,
            } => inputs * outputs + if bias { outputs } else { 0 },
        }
    }

    /// Dense multiply-accumulates for one input presentation.
    pub fn dense_macs(&self) -> usize {
        match self.kind {
            LayerKind::Conv {
                in_channels,
                out_channels,
                kernel,
                height,
                width,
            } => out_channels * in_channels * kernel * kernel * height * width,
            LayerKind::Linear {
                inputs, outputs, ..
            } => inputs * outputs,
        }
    }

    /// Per-position accumulate counts for spike-driven work: for each input
    /// element, the number of synaptic additions a spike there triggers.
    pub fn fanout(&self) -> Vec<f64> {
        match self.kind {
            LayerKind::Conv {
                in_channels,
                out_channels,
                kernel,
                height,
                width,
            } => {
                let geom = ConvGeom {
                    batch: 1,
                    in_channels,
                    height,
                    width,
                    filters: out_channels,
                    kernel_h: kernel,
                    kernel_w: kernel,
                    stride: 1,
                    padding: kernel / 2,
                };
                let plane: Vec<f64> = conv_fanout_map(&geom)
                    .into_iter()
                    .map(|v| v * out_channels as f64)
                    .collect();
                plane.repeat(in_channels)
            }
            LayerKind::Linear {
                inputs, outputs, ..
            } => vec![outputs as f64; inputs],
        }
    }
}

/// Spike-conditioned additions: Σ input · fanout over a binary input.
pub fn synaptic_ops(input: &Tensor, fanout: &[f64]) -> f64 {
    debug_assert_eq!(input.numel(), fanout.len());
    input.data().iter().zip(fanout).map(|(s, f)| s * f).sum()
}

/// Operation counts accumulated over a forward pass.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct OpCounts {
    pub ann_macs: f64,
    pub syn_ops: f64,
}

impl std::ops::AddAssign for OpCounts {
    fn add_assign(&mut self, rhs: Self) {
        self.ann_macs += rhs.ann_macs;
        self.syn_ops += rhs.syn_ops;
    }
}
