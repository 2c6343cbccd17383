// SPDX-License-Identifier: Apache-2.0

//! Seeded fixtures shared by the benchmarks.

use snnsim_core::synth::{random_inputs, toy_model, ToyConfig};
use snnsim_core::{ConvSpec, FixedPointFormat, FixedTensor, ModelGraph, Shape3, SpikeTensor};

/// Densities swept by the sparsity benchmarks.
pub const DENSITIES: [f64; 4] = [0.01, 0.05, 0.2, 0.5];

pub fn toy() -> ModelGraph {
    toy_model(1, &ToyConfig::default()).expect("toy model builds")
}

pub fn toy_input(density: f64) -> SpikeTensor {
    let m = toy();
    random_inputs(2, m.input_shape(), 1, density).remove(0)
}

/// A 3x3, stride-1, padding-1 conv with a fixed weight pattern.
pub fn conv3x3(ic: usize, oc: usize) -> ConvSpec {
    let n = oc * ic * 9;
    let w = (0..n).map(|i| ((i * 37) % 41) as i8 - 12).collect();
    let w = FixedTensor::new(vec![oc, ic, 3, 3], FixedPointFormat::default(), w).expect("weights");
    ConvSpec::new(ic, oc, 3, 1, 1, w).expect("conv")
}

pub fn spike_map(shape: Shape3, density: f64) -> SpikeTensor {
    random_inputs(3, shape, 1, density).remove(0)
}
