//! Leaky integrate-and-fire dynamics with surrogate-gradient backward.
//!
//! The discrete update for one timestep is
//!
//! ```text
//! u' = λ · u · (1 − s_prev) + I
//! s  = [u' ≥ v_th]
//! u  = u' · (1 − s)          (hard reset to zero)
//! ```
//!
//! The spike nonlinearity is recorded on the graph as a Heaviside step whose
//! backward pass uses the arctan-family surrogate derivative
//! `α / (2 · (1 + (π/2 · α · x)²))` at `x = u' − v_th`. The reset mask is
//! treated as a constant during backward.

use std::f64::consts::FRAC_PI_2;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensorgrad::{Graph, Tensor, Var};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResetMode {
    #[default]
    HardToZero,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LifParams {
    pub v_threshold: f64,
    pub decay: f64,
    pub surrogate_width: f64,
    pub reset_mode: ResetMode,
}

impl Default for LifParams {
    fn default() -> Self {
        Self {
            v_threshold: 1.0,
            decay: 0.5,
            surrogate_width: 2.0,
            reset_mode: ResetMode::HardToZero,
        }
    }
}

impl LifParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.v_threshold > 0.0) {
            return Err(Error::Config(format!(
                "v_threshold must be > 0, got {}",
                self.v_threshold
            )));
        }
        if !(self.decay > 0.0 && self.decay <= 1.0) {
            return Err(Error::Config(format!(
                "decay must lie in (0, 1], got {}",
                self.decay
            )));
        }
        if !(self.surrogate_width > 0.0) {
            return Err(Error::Config(format!(
                "surrogate_width must be > 0, got {}",
                self.surrogate_width
            )));
        }
        Ok(())
    }
}

/// Arctan surrogate derivative at margin `x = u' − v_th`.
pub fn surrogate_grad(x: f64, width: f64) -> f64 {
    let z = FRAC_PI_2 * width * x;
    width / (2.0 * (1.0 + z * z))
}

pub fn surrogate_grad_tensor(x: &Tensor, width: f64) -> Tensor {
    x.map(|v| surrogate_grad(v, width))
}

/// Membrane state of one layer for one sample. `None` potential means the
/// layer has not seen input yet (all zeros).
#[derive(Clone, Copy, Debug, Default)]
pub struct LifState {
    potential: Option<Var>,
    step: usize,
}

impl LifState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn potential(&self) -> Option<Var> {
        self.potential
    }

    pub fn step(&self) -> usize {
        self.step
    }
}

/// Advances one timestep. Returns the emitted spikes and the next state.
pub fn lif_step(
    g: &mut Graph,
    state: LifState,
    input: Var,
    params: &LifParams,
) -> Result<(Var, LifState)> {
    let charged = match state.potential {
        None => input,
        Some(u) => {
            if g.shape(u) != g.shape(input) {
                return Err(Error::dim(
                    "lif_step",
                    format!(
                        "input shape {:?} does not match state shape {:?}",
                        g.shape(input),
                        g.shape(u)
                    ),
                ));
            }
            let decayed = g.scale(u, params.decay);
            g.add(decayed, input)?
        }
    };
    let spikes = g.spike(charged, params.v_threshold, params.surrogate_width);
    let keep = g.value(spikes).map(|s| 1.0 - s);
    let keep = g.constant(keep);
    let stored = g.mul(charged, keep)?;
    Ok((
        spikes,
        LifState {
            potential: Some(stored),
            step: state.step + 1,
        },
    ))
}

/// Convolution (same padding, stride 1), optional average pooling of the
/// resulting current, then a LIF step.
pub fn spiking_conv_block(
    g: &mut Graph,
    input: Var,
    weight: Var,
    bias: Var,
    pool: usize,
    state: LifState,
    params: &LifParams,
) -> Result<(Var, LifState)> {
    let k = g.shape(weight).get(2).copied().unwrap_or(1);
    let mut current = g.conv2d(input, weight, bias, 1, k / 2)?;
    if pool > 1 {
        current = g.avg_pool2d(current, pool)?;
    }
    lif_step(g, state, current, params)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(inputs: &[f64], params: &LifParams) -> Vec<(f64, f64, f64)> {
        // (charged, spike, stored) per step
        let mut g = Graph::new();
        let mut st = LifState::new();
        let mut out = Vec::new();
        for &i in inputs {
            let prev = st.potential().map_or(0.0, |u| g.value(u).item());
            let x = g.constant(Tensor::vector(&[i]));
            let (s, next) = lif_step(&mut g, st, x, params).unwrap();
            st = next;
            let charged = params.decay * prev + i;
            out.push((
                charged,
                g.value(s).item(),
                g.value(st.potential().unwrap()).item(),
            ));
        }
        out
    }

    #[test]
    fn silent_without_input() {
        let r = run(&[0.0], &LifParams::default());
        assert_eq!(r[0].1, 0.0);
        assert_eq!(r[0].2, 0.0);
    }

    #[test]
    fn threshold_input_spikes_and_resets() {
        let r = run(&[1.0], &LifParams::default());
        assert_eq!(r[0].1, 1.0);
        assert_eq!(r[0].2, 0.0);
    }

    #[test]
    fn three_step_trace() {
        let r = run(&[0.6, 0.6, 0.6], &LifParams::default());
        assert!((r[0].2 - 0.6).abs() < 1e-15 && r[0].1 == 0.0);
        assert!((r[1].2 - 0.9).abs() < 1e-15 && r[1].1 == 0.0);
        assert!((r[2].0 - 1.05).abs() < 1e-15 && r[2].1 == 1.0);
        assert_eq!(r[2].2, 0.0);
    }

    #[test]
    fn surrogate_peak_tail_symmetry() {
        assert_eq!(surrogate_grad(0.0, 2.0), 1.0);
        assert!(surrogate_grad(1e3, 2.0) < 1e-5);
        assert!(surrogate_grad(-1e3, 2.0) < 1e-5);
        for x in [0.1, 0.37, 1.9, 12.0] {
            assert_eq!(surrogate_grad(x, 2.0), surrogate_grad(-x, 2.0));
        }
    }

    #[test]
    fn shape_mismatch_is_error() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::zeros(vec![2]));
        let (_, st) = lif_step(&mut g, LifState::new(), a, &LifParams::default()).unwrap();
        let b = g.constant(Tensor::zeros(vec![3]));
        assert!(matches!(
            lif_step(&mut g, st, b, &LifParams::default()),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn params_validation() {
        assert!(LifParams::default().validate().is_ok());
        let bad = LifParams {
            decay: 0.0,
            ..LifParams::default()
        };
        assert!(bad.validate().is_err());
        let bad = LifParams {
            v_threshold: -1.0,
            ..LifParams::default()
        };
        assert!(bad.validate().is_err());
    }
}
