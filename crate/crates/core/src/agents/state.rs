//! Layer embedding observed by the agents, and the action mapping.

use serde::{Deserialize, Serialize};

use crate::compress::{MAX_BITS, MIN_BITS};
use crate::model::{LayerKind, ModelGraph};

pub const STATE_DIM: usize = 13;

/// Slots holding the running energy reduction and the previous action.
const E_RED: usize = 11;
const PREV: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LayerState {
    pub raw: [f64; STATE_DIM],
    pub normalized: [f64; STATE_DIM],
}

/// Builds states for one model. Static features are min-max normalized over
/// the model's layers; the energy reduction is divided by the dense model's
/// total energy.
#[derive(Debug, Clone)]
pub struct StateEncoder {
    raw: Vec<[f64; STATE_DIM]>,
    min: [f64; STATE_DIM],
    max: [f64; STATE_DIM],
    total_energy: f64,
}

impl StateEncoder {
    /// `energies[t]` is the dense energy of layer `t`.
    pub fn new(model: &ModelGraph, energies: &[f64]) -> Self {
        let raw: Vec<[f64; STATE_DIM]> = model
            .layers
            .iter()
            .enumerate()
            .map(|(t, l)| {
                let d = &l.desc;
                let f = |v: usize| v as f64;
                let (kind, a, b, stride, k) = match d.kind {
                    LayerKind::Conv => (0.0, f(d.out_channels), f(d.in_channels), f(d.stride), f(d.kernel)),
                    LayerKind::Fc => (1.0, f(d.in_channels), f(d.out_channels), 0.0, 1.0),
                };
                [
                    t as f64,
                    kind,
                    a,
                    b,
                    f(d.in_height),
                    f(d.in_width),
                    stride,
                    k,
                    energies[t],
                    f(d.param_count()),
                    f(d.memory_bits()),
                    0.0,
                    0.0,
                ]
            })
            .collect();
        let mut min = [f64::INFINITY; STATE_DIM];
        let mut max = [f64::NEG_INFINITY; STATE_DIM];
        for r in &raw {
            for i in 0..STATE_DIM {
                min[i] = min[i].min(r[i]);
                max[i] = max[i].max(r[i]);
            }
        }
        StateEncoder {
            raw,
            min,
            max,
            total_energy: energies.iter().sum(),
        }
    }

    pub fn num_layers(&self) -> usize {
        self.raw.len()
    }

    /// State of layer `t` after an energy reduction `e_red` (absolute units)
    /// achieved on layers `< t`, with `prev_action` the previous sparsity
    /// action (0 at `t = 0`).
    pub fn state(&self, t: usize, e_red: f64, prev_action: f64) -> LayerState {
        let mut raw = self.raw[t];
        raw[E_RED] = e_red;
        raw[PREV] = if t == 0 { 0.0 } else { prev_action };
        let mut normalized = [0.0; STATE_DIM];
        for i in 0..E_RED {
            let span = self.max[i] - self.min[i];
            normalized[i] = if span > 0.0 { (raw[i] - self.min[i]) / span } else { 0.0 };
        }
        normalized[E_RED] = if self.total_energy > 0.0 {
            (e_red / self.total_energy).clamp(0.0, 1.0)
        } else {
            0.0
        };
        normalized[PREV] = raw[PREV].clamp(0.0, 1.0);
        LayerState { raw, normalized }
    }
}

/// `S = a_S * s_cap`, `Q = round(2 + 6 a_Q)`.
pub fn map_actions(a_s: f64, a_q: f64, s_cap: f64) -> (f64, u8) {
    let s = a_s.clamp(0.0, 1.0) * s_cap;
    let span = (MAX_BITS - MIN_BITS) as f64;
    let q = (MIN_BITS as f64 + a_q.clamp(0.0, 1.0) * span).round() as u8;
    (s, q)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn map_action_endpoints() {
        assert_eq!(map_actions(0.0, 1.0, 0.9).1, 8);
        assert_eq!(map_actions(0.0, 0.0, 0.9).1, 2);
        assert_eq!(map_actions(0.0, 0.5, 0.9).1, 5);
        assert_eq!(map_actions(1.0, 0.0, 0.9).0, 0.9);
    }
}
