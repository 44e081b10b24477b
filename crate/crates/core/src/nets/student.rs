use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::layers::{synaptic_ops, InputKind, LayerKind, LayerSpec, OpCounts};
use super::params::{Bound, Params};
use super::{
    calibrate_blocks, check_frames, kaiming_uniform, mean_rates, plan_blocks, spike_rate,
    BlockPlan, NetForward, TimestepOutputs,
};
use crate::error::{Error, Result};
use crate::snn::{spiking_conv_block, LifParams, LifState};
use crate::tensorgrad::{Graph, Tensor};

pub const STUDENT_BLOCKS: usize = 5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StudentConfig {
    pub in_channels: usize,
    pub height: usize,
    pub width: usize,
    pub widths: Vec<usize>,
    pub kernel_size: usize,
    /// 1-based indices of blocks whose current is average-pooled before the LIF step.
    pub pool_after: Vec<usize>,
    pub pool_size: usize,
    pub num_classes: usize,
    pub timesteps: usize,
    pub lif: LifParams,
}

impl Default for StudentConfig {
    fn default() -> Self {
        Self {
            in_channels: 1,
            height: 32,
            width: 32,
            widths: vec![16, 32, 32, 64, 64],
            kernel_size: 3,
            pool_after: vec![1, 3, 5],
            pool_size: 2,
            num_classes: 7,
            timesteps: 4,
            lif: LifParams::default(),
        }
    }
}

impl StudentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.widths.len() != STUDENT_BLOCKS {
            return Err(Error::Config(format!(
                "student needs exactly {STUDENT_BLOCKS} feature blocks, got {}",
                self.widths.len()
            )));
        }
        if self.num_classes < 2 {
            return Err(Error::Config("num_classes must be >= 2".into()));
        }
        if self.timesteps == 0 {
            return Err(Error::Config("timesteps must be >= 1".into()));
        }
        self.lif.validate()?;
        self.plan().map(|_| ())
    }

    fn plan(&self) -> Result<BlockPlan> {
        plan_blocks(
            self.in_channels,
            self.height,
            self.width,
            &self.widths,
            self.kernel_size,
            &self.pool_after,
            self.pool_size,
        )
    }

    pub fn layers(&self) -> Result<Vec<LayerSpec>> {
        let plan = self.plan()?;
        let mut specs: Vec<LayerSpec> = plan
            .blocks
            .iter()
            .enumerate()
            .map(|(i, b)| LayerSpec {
                name: format!("block{i}"),
                kind: LayerKind::Conv {
                    in_channels: b.in_channels,
                    out_channels: b.out_channels,
                    kernel: self.kernel_size,
                    height: b.height,
                    width: b.width,
                },
                // the first block sees analog intensity frames
                input: if i == 0 {
                    InputKind::Analog
                } else {
                    InputKind::Spikes
                },
            })
            .collect();
        specs.push(LayerSpec {
            name: "classifier".into(),
            kind: LayerKind::Linear {
                inputs: plan.features,
                outputs: self.num_classes,
                bias: true,
            },
            input: InputKind::Spikes,
        });
        Ok(specs)
    }
}

/// Intensity-only spiking network: five spiking conv blocks and a linear
/// classifier applied at every timestep.
#[derive(Clone, Debug, PartialEq)]
pub struct Student {
    cfg: StudentConfig,
    params: Params,
    plan: BlockPlan,
    fanouts: Vec<Vec<f64>>,
    layers: Vec<LayerSpec>,
}

impl Student {
    pub fn zeros(cfg: StudentConfig) -> Result<Self> {
        cfg.validate()?;
        let plan = cfg.plan()?;
        let mut params = Params::new();
        for (i, b) in plan.blocks.iter().enumerate() {
            params.insert(
                format!("block{i}.weight"),
                Tensor::zeros(vec![
                    b.out_channels,
                    b.in_channels,
                    cfg.kernel_size,
                    cfg.kernel_size,
                ]),
            );
            params.insert(
                format!("block{i}.bias"),
                Tensor::zeros(vec![b.out_channels]),
            );
        }
        params.insert(
            "classifier.weight",
            Tensor::zeros(vec![cfg.num_classes, plan.features]),
        );
        params.insert("classifier.bias", Tensor::zeros(vec![cfg.num_classes]));
        let layers = cfg.layers()?;
        let fanouts = layers.iter().map(LayerSpec::fanout).collect();
        Ok(Self {
            cfg,
            params,
            plan,
            fanouts,
            layers,
        })
    }

    /// Kaiming-uniform (fan-in) weights, zero biases.
    pub fn init(cfg: StudentConfig, rng: &mut impl Rng) -> Result<Self> {
        let mut net = Self::zeros(cfg)?;
        for (name, t) in net.params.iter_mut() {
            if name.ends_with(".weight") {
                kaiming_uniform(t, rng);
            }
        }
        Ok(net)
    }

    pub fn from_params(cfg: StudentConfig, params: Params) -> Result<Self> {
        let mut net = Self::zeros(cfg)?;
        params.check_layout(&net.params)?;
        net.params = params;
        Ok(net)
    }

    pub fn config(&self) -> &StudentConfig {
        &self.cfg
    }

    pub fn params(&self) -> &Params {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut Params {
        &mut self.params
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    /// Records the forward pass over `frames` (each `[C, H, W]`) on `g`.
    /// Membrane state starts at zero and persists across the frames.
    pub fn forward(&self, g: &mut Graph, p: &Bound, frames: &[Tensor]) -> Result<NetForward> {
        let cfg = &self.cfg;
        check_frames(
            "intensity",
            frames,
            cfg.timesteps,
            [cfg.in_channels, cfg.height, cfg.width],
        )?;
        let mut states = [LifState::new(); STUDENT_BLOCKS];
        let mut rows = Vec::with_capacity(frames.len());
        let mut ops = OpCounts::default();
        let mut rates = vec![0.0; STUDENT_BLOCKS];
        let cw = p.var("classifier.weight")?;
        let cb = p.var("classifier.bias")?;
        for frame in frames {
            let mut x =
                g.constant(frame.reshape(vec![1, cfg.in_channels, cfg.height, cfg.width])?);
            for (i, block) in self.plan.blocks.iter().enumerate() {
                match self.layers[i].input {
                    InputKind::Analog => ops.ann_macs += self.layers[i].dense_macs() as f64,
                    InputKind::Spikes => ops.syn_ops += synaptic_ops(g.value(x), &self.fanouts[i]),
                }
                let w = p.var(&format!("block{i}.weight"))?;
                let b = p.var(&format!("block{i}.bias"))?;
                let (spikes, next) =
                    spiking_conv_block(g, x, w, b, block.pool, states[i], &cfg.lif)?;
                states[i] = next;
                rates[i] += spike_rate(g.value(spikes));
                x = spikes;
            }
            let flat = g.reshape(x, vec![1, self.plan.features])?;
            ops.syn_ops += synaptic_ops(g.value(flat), &self.fanouts[STUDENT_BLOCKS]);
            rows.push(g.linear(flat, cw, cb)?);
        }
        let outputs = g.concat(&rows, 0)?;
        rates.iter_mut().for_each(|r| *r /= frames.len() as f64);
        Ok(NetForward {
            outputs,
            ops,
            rates,
        })
    }

    /// Mean block firing rates over `windows`, each a list of `T` frames.
    pub fn spike_rates(&self, windows: &[Vec<Tensor>]) -> Result<Vec<f64>> {
        mean_rates(windows.par_iter().map(|w| {
            let mut g = Graph::new();
            let p = self.params.bind(&mut g, false);
            Ok(self.forward(&mut g, &p, w)?.rates)
        }))
    }

    /// Scales each block so it fires at about `target` on `windows`.
    pub fn calibrate(&mut self, windows: &[Vec<Tensor>], target: f64) -> Result<Vec<f64>> {
        let names: Vec<String> = (0..STUDENT_BLOCKS)
            .map(|i| format!("block{i}.weight"))
            .collect();
        let mut params = self.params.clone();
        let factors = calibrate_blocks(&mut params, &names, target, |p| {
            Student::from_params(self.cfg.clone(), p.clone())?.spike_rates(windows)
        })?;
        self.params = params;
        Ok(factors)
    }

    /// Gradient-free forward returning the per-timestep outputs.
    pub fn infer(&self, frames: &[Tensor]) -> Result<(TimestepOutputs, OpCounts)> {
        let mut g = Graph::new();
        let p = self.params.bind(&mut g, false);
        let f = self.forward(&mut g, &p, frames)?;
        Ok((TimestepOutputs::new(g.value(f.outputs).clone())?, f.ops))
    }
}
