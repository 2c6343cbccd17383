// SPDX-License-Identifier: Apache-2.0

//! Run metrics: spikes, SynOps, latency, energy and efficiency.
//!
//! One SynOp is one synaptic weight accumulation, i.e. one consumed event
//! per target neuron. Power and LUT count are inputs; energy is
//! `power × latency` and is a model, not a measurement.

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::graph::{ConvSpec, LayerSpec, ModelGraph};
use crate::reference::ReferenceRun;
use crate::spike::SpikeTensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PowerModel {
    pub power_w: f64,
    pub kluts: f64,
}

impl Default for PowerModel {
    fn default() -> Self {
        Self {
            power_w: 0.792,
            kluts: 71.7,
        }
    }
}

impl PowerModel {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("power_w", self.power_w), ("kluts", self.kluts)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(CoreError::Config(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct RunMetrics {
    pub total_spikes: u64,
    pub synops: u64,
    pub total_cycles: u64,
    pub latency_s: f64,
    pub fps: f64,
    pub energy_j: f64,
    pub power_w: f64,
    pub gsops_per_watt: f64,
    pub kluts: f64,
    pub eff_per_klut: f64,
}

impl RunMetrics {
    /// Metrics for one frame. A zero-cycle run reports zero rates.
    pub fn from_counts(total_spikes: u64, synops: u64, total_cycles: u64, clock_hz: f64, power: &PowerModel) -> Result<Self> {
        power.validate()?;
        if !(clock_hz.is_finite() && clock_hz > 0.0) {
            return Err(CoreError::Config(format!("clock_hz must be positive, got {clock_hz}")));
        }
        let latency_s = total_cycles as f64 / clock_hz;
        let (fps, gsops_per_watt, eff_per_klut) = if total_cycles == 0 {
            (0.0, 0.0, 0.0)
        } else {
            let g = derive_efficiency(synops as f64, latency_s, power.power_w)?;
            (1.0 / latency_s, g, normalized_efficiency(g, power.kluts)?)
        };
        Ok(Self {
            total_spikes,
            synops,
            total_cycles,
            latency_s,
            fps,
            energy_j: energy_per_frame(power.power_w, latency_s),
            power_w: power.power_w,
            gsops_per_watt,
            kluts: power.kluts,
            eff_per_klut,
        })
    }
}

/// GSOPS/W = synops / latency / power / 1e9.
pub fn derive_efficiency(synops: f64, latency_s: f64, power_w: f64) -> Result<f64> {
    if !(latency_s > 0.0 && power_w > 0.0) {
        return Err(CoreError::Config(format!(
            "efficiency needs positive latency and power, got {latency_s} s and {power_w} W"
        )));
    }
    Ok(synops / latency_s / power_w / 1e9)
}

pub fn energy_per_frame(power_w: f64, latency_s: f64) -> f64 {
    power_w * latency_s
}

/// GSOPS/W per thousand LUTs.
pub fn normalized_efficiency(gsops_per_watt: f64, kluts: f64) -> Result<f64> {
    if kluts.is_nan() || kluts <= 0.0 {
        return Err(CoreError::Config(format!("kluts must be positive, got {kluts}")));
    }
    Ok(gsops_per_watt / kluts)
}

/// Output neurons reached by a spike at `(y, x)`, enumerated over every output and tap.
pub fn conv_fanout(conv: &ConvSpec, height: usize, width: usize, y: usize, x: usize) -> u64 {
    let out_h = (height + 2 * conv.padding - conv.kernel) / conv.stride + 1;
    let out_w = (width + 2 * conv.padding - conv.kernel) / conv.stride + 1;
    let hits = |n_out: usize, coord: usize| {
        let mut n = 0u64;
        for o in 0..n_out {
            for k in 0..conv.kernel {
                n += (o * conv.stride + k == coord + conv.padding) as u64;
            }
        }
        n
    };
    hits(out_h, y) * hits(out_w, x) * conv.out_channels as u64
}

fn conv_synops(conv: &ConvSpec, input: &SpikeTensor) -> u64 {
    input
        .iter_spikes()
        .map(|(_, y, x)| conv_fanout(conv, input.height(), input.width(), y, x))
        .sum()
}

/// Per-layer SynOps of a dense run: spikes × fan-out, charged to the layer holding the weights.
pub fn reference_synops(model: &ModelGraph, input: &SpikeTensor, run: &ReferenceRun) -> Result<Vec<u64>> {
    let layers = model.layers();
    let spikes_into = |i: usize| -> Result<&SpikeTensor> {
        if i == 0 {
            return Ok(input);
        }
        run.outputs[i - 1].spikes().ok_or_else(|| CoreError::Graph {
            layer: i,
            reason: "no spike input".into(),
        })
    };
    let mut out = vec![0u64; layers.len()];
    for (i, layer) in layers.iter().enumerate() {
        out[i] = match layer {
            LayerSpec::Conv(conv) => conv_synops(conv, spikes_into(i)?),
            LayerSpec::ResidualAdd { from } => run.outputs[*from].spikes().map_or(0, SpikeTensor::total_spikes),
            LayerSpec::Lif(_) => match i.checked_sub(1).map(|p| &layers[p]) {
                Some(LayerSpec::AvgPool { .. }) => spikes_into(i - 1)?.total_spikes(),
                _ => 0,
            },
            LayerSpec::QkformerBlock(qk) => {
                let x = spikes_into(i)?;
                conv_synops(&qk.q, x) + conv_synops(&qk.k, x) + if qk.residual { x.total_spikes() } else { 0 }
            }
            LayerSpec::FullyConnected(fc) => {
                let feeding = match i.checked_sub(1).map(|p| &layers[p]) {
                    Some(LayerSpec::AvgPool { .. } | LayerSpec::W2ttfsPool { .. }) => spikes_into(i - 1)?,
                    _ => spikes_into(i)?,
                };
                feeding.total_spikes() * fc.classes as u64
            }
            LayerSpec::AvgPool { .. } | LayerSpec::W2ttfsPool { .. } => 0,
        };
    }
    Ok(out)
}
