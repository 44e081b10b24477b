use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nets::{LayerSpec, OpCounts};

/// Energy per spike-driven accumulate, in picojoules.
pub const E_AC_PJ: f64 = 0.9;
/// Energy per multiply-accumulate, in picojoules.
pub const E_MAC_PJ: f64 = 4.6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnergyReport {
    /// Samples in the profiling pass; op counts and energy are totals over it.
    pub samples: usize,
    pub ann_macs: f64,
    pub snn_synaptic_ops: f64,
    pub energy_pj: f64,
    pub energy_per_sample_pj: f64,
    pub params: usize,
    /// Dense multiply-accumulates for one inference window.
    pub flops: f64,
}

impl EnergyReport {
    pub fn new(ops: OpCounts, samples: usize, params: usize, flops: f64) -> Self {
        let energy_pj = E_MAC_PJ * ops.ann_macs + E_AC_PJ * ops.syn_ops;
        Self {
            samples,
            ann_macs: ops.ann_macs,
            snn_synaptic_ops: ops.syn_ops,
            energy_pj,
            energy_per_sample_pj: if samples > 0 {
                energy_pj / samples as f64
            } else {
                0.0
            },
            params,
            flops,
        }
    }
}

/// Accumulates measured op counts over an evaluation pass.
#[derive(Clone, Debug)]
pub struct Profiler {
    params: usize,
    flops: f64,
    ops: OpCounts,
    samples: usize,
}

impl Profiler {
    pub fn new(layers: &[LayerSpec], timesteps: usize) -> Self {
        Self {
            params: layers.iter().map(LayerSpec::params).sum(),
            flops: layers.iter().map(|l| l.dense_macs() as f64).sum::<f64>() * timesteps as f64,
            ops: OpCounts::default(),
            samples: 0,
        }
    }

    /// Adds the counts of one sample.
    pub fn record(&mut self, ops: OpCounts) {
        self.ops += ops;
        self.samples += 1;
    }

    pub fn report(&self) -> Result<EnergyReport> {
        if self.samples == 0 {
            return Err(Error::State(
                "profiler has not observed an evaluation pass".into(),
            ));
        }
        Ok(EnergyReport::new(
            self.ops,
            self.samples,
            self.params,
            self.flops,
        ))
    }
}
