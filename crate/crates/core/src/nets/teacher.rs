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
use crate::tensorgrad::{Graph, Tensor, Var};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fusion {
    #[default]
    Concat,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TeacherConfig {
    pub height: usize,
    pub width: usize,
    pub intensity_channels: usize,
    pub event_channels: usize,
    /// Spiking event branch.
    pub event_widths: Vec<usize>,
    /// Non-spiking (ReLU) intensity branch.
    pub intensity_widths: Vec<usize>,
    pub kernel_size: usize,
    pub pool_after: Vec<usize>,
    pub pool_size: usize,
    pub fusion: Fusion,
    pub num_classes: usize,
    pub timesteps: usize,
    pub lif: LifParams,
}

impl Default for TeacherConfig {
    fn default() -> Self {
        Self {
            height: 32,
            width: 32,
            intensity_channels: 1,
            event_channels: 2,
            event_widths: vec![16, 32, 32, 64, 64],
            intensity_widths: vec![16, 32, 32, 64, 64],
            kernel_size: 3,
            pool_after: vec![1, 3, 5],
            pool_size: 2,
            fusion: Fusion::Concat,
            num_classes: 7,
            timesteps: 4,
            lif: LifParams::default(),
        }
    }
}

impl TeacherConfig {
    fn plans(&self) -> Result<(BlockPlan, BlockPlan)> {
        let ev = plan_blocks(
            self.event_channels,
            self.height,
            self.width,
            &self.event_widths,
            self.kernel_size,
            &self.pool_after,
            self.pool_size,
        )?;
        let it = plan_blocks(
            self.intensity_channels,
            self.height,
            self.width,
            &self.intensity_widths,
            self.kernel_size,
            &self.pool_after,
            self.pool_size,
        )?;
        Ok((ev, it))
    }

    pub fn validate(&self) -> Result<()> {
        if self.event_widths.is_empty() || self.intensity_widths.is_empty() {
            return Err(Error::Config(
                "teacher branches need at least one block".into(),
            ));
        }
        if self.num_classes < 2 {
            return Err(Error::Config("num_classes must be >= 2".into()));
        }
        if self.timesteps == 0 {
            return Err(Error::Config("timesteps must be >= 1".into()));
        }
        self.lif.validate()?;
        let (ev, it) = self.plans()?;
        if ev.out_shape != it.out_shape {
            return Err(Error::Config(format!(
                "branch outputs differ at fusion: events {:?} vs intensity {:?}",
                ev.out_shape, it.out_shape
            )));
        }
        Ok(())
    }

    pub fn layers(&self) -> Result<Vec<LayerSpec>> {
        let (ev, it) = self.plans()?;
        let conv = |prefix: &str, plan: &BlockPlan, spiking: bool| {
            plan.blocks
                .iter()
                .enumerate()
                .map(|(i, b)| LayerSpec {
                    name: format!("{prefix}.block{i}"),
                    kind: LayerKind::Conv {
                        in_channels: b.in_channels,
                        out_channels: b.out_channels,
                        kernel: self.kernel_size,
                        height: b.height,
                        width: b.width,
                    },
                    input: if spiking && i > 0 {
                        InputKind::Spikes
                    } else {
                        InputKind::Analog
                    },
                })
                .collect::<Vec<_>>()
        };
        let mut specs = conv("event", &ev, true);
        specs.extend(conv("intensity", &it, false));
        specs.push(LayerSpec {
            name: "classifier.event".into(),
            kind: LayerKind::Linear {
                inputs: ev.features,
                outputs: self.num_classes,
                bias: true,
            },
            input: InputKind::Spikes,
        });
        specs.push(LayerSpec {
            name: "classifier.intensity".into(),
            kind: LayerKind::Linear {
                inputs: it.features,
                outputs: self.num_classes,
                bias: false,
            },
            input: InputKind::Analog,
        });
        Ok(specs)
    }
}

/// Multimodal hybrid: a spiking event branch and a ReLU intensity branch,
/// fused by concatenation into one linear classifier.
#[derive(Clone, Debug, PartialEq)]
pub struct Teacher {
    cfg: TeacherConfig,
    params: Params,
    event_plan: BlockPlan,
    intensity_plan: BlockPlan,
    layers: Vec<LayerSpec>,
    fanouts: Vec<Vec<f64>>,
}

impl Teacher {
    pub fn zeros(cfg: TeacherConfig) -> Result<Self> {
        cfg.validate()?;
        let (event_plan, intensity_plan) = cfg.plans()?;
        let k = cfg.kernel_size;
        let mut params = Params::new();
        for (prefix, plan) in [("event", &event_plan), ("intensity", &intensity_plan)] {
            for (i, b) in plan.blocks.iter().enumerate() {
                params.insert(
                    format!("{prefix}.block{i}.weight"),
                    Tensor::zeros(vec![b.out_channels, b.in_channels, k, k]),
                );
                params.insert(
                    format!("{prefix}.block{i}.bias"),
                    Tensor::zeros(vec![b.out_channels]),
                );
            }
        }
        let fused = event_plan.features + intensity_plan.features;
        params.insert(
            "classifier.weight",
            Tensor::zeros(vec![cfg.num_classes, fused]),
        );
        params.insert("classifier.bias", Tensor::zeros(vec![cfg.num_classes]));
        let layers = cfg.layers()?;
        let fanouts = layers.iter().map(LayerSpec::fanout).collect();
        Ok(Self {
            cfg,
            params,
            event_plan,
            intensity_plan,
            layers,
            fanouts,
        })
    }

    pub fn init(cfg: TeacherConfig, rng: &mut impl Rng) -> Result<Self> {
        let mut net = Self::zeros(cfg)?;
        for (name, t) in net.params.iter_mut() {
            if name.ends_with(".weight") {
                kaiming_uniform(t, rng);
            }
        }
        Ok(net)
    }

    pub fn from_params(cfg: TeacherConfig, params: Params) -> Result<Self> {
        let mut net = Self::zeros(cfg)?;
        params.check_layout(&net.params)?;
        net.params = params;
        Ok(net)
    }

    pub fn config(&self) -> &TeacherConfig {
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

    fn event_features(
        &self,
        g: &mut Graph,
        p: &Bound,
        frame: &Tensor,
        states: &mut [LifState],
        ops: &mut OpCounts,
        rates: &mut [f64],
    ) -> Result<Var> {
        let cfg = &self.cfg;
        let mut x =
            g.constant(frame.reshape(vec![1, cfg.event_channels, cfg.height, cfg.width])?);
        for (i, block) in self.event_plan.blocks.iter().enumerate() {
            match self.layers[i].input {
                InputKind::Analog => ops.ann_macs += self.layers[i].dense_macs() as f64,
                InputKind::Spikes => ops.syn_ops += synaptic_ops(g.value(x), &self.fanouts[i]),
            }
            let w = p.var(&format!("event.block{i}.weight"))?;
            let b = p.var(&format!("event.block{i}.bias"))?;
            let (spikes, next) = spiking_conv_block(g, x, w, b, block.pool, states[i], &cfg.lif)?;
            states[i] = next;
            rates[i] += spike_rate(g.value(spikes));
            x = spikes;
        }
        g.reshape(x, vec![1, self.event_plan.features])
    }

    fn intensity_features(
        &self,
        g: &mut Graph,
        p: &Bound,
        frame: &Tensor,
        ops: &mut OpCounts,
    ) -> Result<Var> {
        let cfg = &self.cfg;
        let offset = self.event_plan.blocks.len();
        let mut x =
            g.constant(frame.reshape(vec![1, cfg.intensity_channels, cfg.height, cfg.width])?);
        for (i, block) in self.intensity_plan.blocks.iter().enumerate() {
            ops.ann_macs += self.layers[offset + i].dense_macs() as f64;
            let w = p.var(&format!("intensity.block{i}.weight"))?;
            let b = p.var(&format!("intensity.block{i}.bias"))?;
            let mut h = g.conv2d(x, w, b, 1, cfg.kernel_size / 2)?;
            if block.pool > 1 {
                h = g.avg_pool2d(h, block.pool)?;
            }
            x = g.relu(h);
        }
        g.reshape(x, vec![1, self.intensity_plan.features])
    }

    /// Records the forward pass on `g`. `intensity` frames are `[1, H, W]`,
    /// `events` frames `[2, H, W]`, one of each per timestep.
    pub fn forward(
        &self,
        g: &mut Graph,
        p: &Bound,
        intensity: &[Tensor],
        events: &[Tensor],
    ) -> Result<NetForward> {
        let cfg = &self.cfg;
        if intensity.len() != events.len() {
            return Err(Error::Input(format!(
                "modalities disagree on length: {} intensity frames vs {} event frames",
                intensity.len(),
                events.len()
            )));
        }
        check_frames(
            "intensity",
            intensity,
            cfg.timesteps,
            [cfg.intensity_channels, cfg.height, cfg.width],
        )?;
        check_frames(
            "event",
            events,
            cfg.timesteps,
            [cfg.event_channels, cfg.height, cfg.width],
        )?;
        let mut states = vec![LifState::new(); self.event_plan.blocks.len()];
        let mut ops = OpCounts::default();
        let mut rates = vec![0.0; self.event_plan.blocks.len()];
        let cw = p.var("classifier.weight")?;
        let cb = p.var("classifier.bias")?;
        let n_layers = self.layers.len();
        let mut rows = Vec::with_capacity(intensity.len());
        for (frame, ev) in intensity.iter().zip(events) {
            let ef = self.event_features(g, p, ev, &mut states, &mut ops, &mut rates)?;
            let itf = self.intensity_features(g, p, frame, &mut ops)?;
            ops.syn_ops += synaptic_ops(g.value(ef), &self.fanouts[n_layers - 2]);
            ops.ann_macs += self.layers[n_layers - 1].dense_macs() as f64;
            let fused = g.concat(&[ef, itf], 1)?;
            rows.push(g.linear(fused, cw, cb)?);
        }
        let outputs = g.concat(&rows, 0)?;
        rates.iter_mut().for_each(|r| *r /= intensity.len() as f64);
        Ok(NetForward {
            outputs,
            ops,
            rates,
        })
    }

    /// Mean event-branch firing rates over paired windows.
    pub fn spike_rates(
        &self,
        intensity: &[Vec<Tensor>],
        events: &[Vec<Tensor>],
    ) -> Result<Vec<f64>> {
        if intensity.len() != events.len() {
            return Err(Error::Input(
                "intensity and event window counts differ".into(),
            ));
        }
        mean_rates(intensity.par_iter().zip(events.par_iter()).map(|(i, e)| {
            let mut g = Graph::new();
            let p = self.params.bind(&mut g, false);
            Ok(self.forward(&mut g, &p, i, e)?.rates)
        }))
    }

    /// Scales each event block so it fires at about `target`.
    pub fn calibrate(
        &mut self,
        intensity: &[Vec<Tensor>],
        events: &[Vec<Tensor>],
        target: f64,
    ) -> Result<Vec<f64>> {
        let names: Vec<String> = (0..self.event_plan.blocks.len())
            .map(|i| format!("event.block{i}.weight"))
            .collect();
        let mut params = self.params.clone();
        let factors = calibrate_blocks(&mut params, &names, target, |p| {
            Teacher::from_params(self.cfg.clone(), p.clone())?.spike_rates(intensity, events)
        })?;
        self.params = params;
        Ok(factors)
    }

    pub fn infer(
        &self,
        intensity: &[Tensor],
        events: &[Tensor],
    ) -> Result<(TimestepOutputs, OpCounts)> {
        let mut g = Graph::new();
        let p = self.params.bind(&mut g, false);
        let f = self.forward(&mut g, &p, intensity, events)?;
        Ok((TimestepOutputs::new(g.value(f.outputs).clone())?, f.ops))
    }
}
