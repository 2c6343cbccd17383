// SPDX-License-Identifier: Apache-2.0

//! Leaky integrate-and-fire neuron with shift-based decay.

use serde::{Deserialize, Serialize};

use crate::error::{config, Result};
use crate::fixed::saturate_acc;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ResetMode {
    #[default]
    HardZero,
    Subtract,
}

/// Neuron parameters. `tau` is restricted to `2^-k`, so decay is an
/// arithmetic right shift by `k` (round toward negative infinity).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct LifParams {
    decay_shift: u8,
    threshold: i64,
    reset: ResetMode,
}

impl LifParams {
    /// `threshold` is in raw accumulator units (same scale as the weights).
    pub fn new(tau: f64, threshold: i64, reset: ResetMode) -> Result<Self> {
        if !(tau > 0.0 && tau <= 1.0) {
            return config(format!("tau must be in (0, 1], got {tau}"));
        }
        let k = -tau.log2();
        if (k - k.round()).abs() > 1e-12 || k.round() > 23.0 {
            return config(format!("tau must be a power of two 2^-k, got {tau}"));
        }
        Self::with_shift(k.round() as u8, threshold, reset)
    }

    pub fn with_shift(decay_shift: u8, threshold: i64, reset: ResetMode) -> Result<Self> {
        if threshold <= 0 {
            return config(format!("threshold must be positive, got {threshold}"));
        }
        if decay_shift > 23 {
            return config(format!("decay shift {decay_shift} exceeds accumulator width"));
        }
        Ok(Self {
            decay_shift,
            threshold,
            reset,
        })
    }

    pub fn tau(&self) -> f64 {
        2f64.powi(-(self.decay_shift as i32))
    }

    pub fn decay_shift(&self) -> u8 {
        self.decay_shift
    }

    pub fn threshold(&self) -> i64 {
        self.threshold
    }

    pub fn reset(&self) -> ResetMode {
        self.reset
    }
}

impl Default for LifParams {
    /// tau = 0.5, threshold = 1.0 at four fractional bits, hard reset.
    fn default() -> Self {
        Self {
            decay_shift: 1,
            threshold: 16,
            reset: ResetMode::HardZero,
        }
    }
}

/// Membrane register plus a count of accumulator saturations.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct LifState {
    membrane: i64,
    overflows: u32,
}

impl LifState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn membrane(&self) -> i64 {
        self.membrane
    }

    pub fn overflows(&self) -> u32 {
        self.overflows
    }

    pub fn decay(&mut self, params: &LifParams) {
        self.membrane >>= params.decay_shift;
    }

    /// Saturating add into the 24-bit register.
    pub fn integrate(&mut self, raw: i64) {
        let (v, sat) = saturate_acc(self.membrane.saturating_add(raw));
        self.membrane = v;
        self.overflows += sat as u32;
    }

    /// Threshold comparison and reset.
    pub fn fire(&mut self, params: &LifParams) -> bool {
        let spike = self.membrane >= params.threshold;
        if spike {
            match params.reset {
                ResetMode::HardZero => self.membrane = 0,
                ResetMode::Subtract => self.membrane -= params.threshold,
            }
        }
        spike
    }
}

/// One timestep: decay, integrate `synaptic_sum`, compare and reset.
pub fn lif_step(mut state: LifState, params: &LifParams, synaptic_sum: i64) -> (LifState, bool) {
    state.decay(params);
    state.integrate(synaptic_sum);
    let spike = state.fire(params);
    (state, spike)
}
