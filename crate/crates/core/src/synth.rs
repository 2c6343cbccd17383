// SPDX-License-Identifier: Apache-2.0

//! Seeded synthetic models and inputs.
//!
//! The toy network follows the residual + QK-attention + W2TTFS classifier
//! layout at small dimensions, with random quantized weights. Nothing here
//! is trained.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{CoreError, Result};
use crate::fixed::{FixedPointFormat, FixedTensor};
use crate::graph::{ConvSpec, FcSpec, LayerSpec, ModelGraph};
use crate::lif::{LifParams, ResetMode};
use crate::qkformer::{MaskAxis, QkBlockSpec};
use crate::spike::{Shape3, SpikeTensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ToyConfig {
    pub input: Shape3,
    /// Width of the residual stage; the last conv doubles it.
    pub channels: usize,
    pub classes: usize,
    /// Round classifier weights to multiples of the W2TTFS window area so
    /// the shift-based classifier is exact.
    pub align_classifier: bool,
    pub axis: MaskAxis,
}

impl Default for ToyConfig {
    fn default() -> Self {
        Self {
            input: Shape3::new(3, 16, 16),
            channels: 8,
            classes: 10,
            align_classifier: true,
            axis: MaskAxis::Token,
        }
    }
}

fn weights(rng: &mut ChaCha8Rng, shape: Vec<usize>, lo: i8, hi: i8, format: FixedPointFormat) -> Result<FixedTensor> {
    let n = shape.iter().product();
    FixedTensor::new(shape, format, (0..n).map(|_| rng.gen_range(lo..=hi)).collect())
}

fn conv(rng: &mut ChaCha8Rng, ic: usize, oc: usize, k: usize, stride: usize, format: FixedPointFormat) -> Result<ConvSpec> {
    // Positive bias on the range keeps a few spikes alive through the stack.
    let w = weights(rng, vec![oc, ic, k, k], -12, 20, format)?;
    ConvSpec::new(ic, oc, k, stride, k / 2, w)
}

/// conv → lif → conv → residual → lif → qk → avgpool → lif → conv(s2) → lif → w2ttfs → fc
pub fn toy_model(seed: u64, cfg: &ToyConfig) -> Result<ModelGraph> {
    let Shape3 { channels: cin, height, width } = cfg.input;
    if height % 8 != 0 || width % 8 != 0 {
        return Err(CoreError::Config(format!(
            "toy input {} needs height and width divisible by 8",
            cfg.input
        )));
    }
    if cfg.channels == 0 || cfg.classes == 0 {
        return Err(CoreError::Config("toy model needs channels and classes".into()));
    }
    let format = FixedPointFormat::default();
    let unit = format.unit();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let c = cfg.channels;
    let lif = LifParams::new(0.5, unit, ResetMode::HardZero)?;
    let attn_lif = LifParams::new(0.5, unit / 2, ResetMode::HardZero)?;

    let qk = QkBlockSpec {
        channels: c,
        q: ConvSpec::new(c, c, 1, 1, 0, weights(&mut rng, vec![c, c, 1, 1], -8, 16, format)?)?,
        q_lif: attn_lif,
        k: ConvSpec::new(c, c, 1, 1, 0, weights(&mut rng, vec![c, c, 1, 1], -8, 16, format)?)?,
        k_lif: lif,
        residual: true,
        axis: cfg.axis,
    };
    let pool = 2;
    let ttfs = 2;
    let features = 2 * c * (height / 8) * (width / 8);
    let step = if cfg.align_classifier { (ttfs * ttfs) as i32 } else { 1 };
    let fc_w = (0..cfg.classes * features)
        .map(|_| (rng.gen_range(-128i32..=127) / step * step) as i8)
        .collect();
    let layers = vec![
        LayerSpec::Conv(conv(&mut rng, cin, c, 3, 1, format)?),
        LayerSpec::Lif(lif),
        LayerSpec::Conv(conv(&mut rng, c, c, 3, 1, format)?),
        LayerSpec::ResidualAdd { from: 1 },
        LayerSpec::Lif(lif),
        LayerSpec::QkformerBlock(qk),
        LayerSpec::AvgPool { window: pool },
        LayerSpec::Lif(LifParams::new(0.5, unit / 2, ResetMode::HardZero)?),
        LayerSpec::Conv(conv(&mut rng, c, 2 * c, 3, 2, format)?),
        LayerSpec::Lif(lif),
        LayerSpec::W2ttfsPool { window: ttfs },
        LayerSpec::FullyConnected(FcSpec::new(
            features,
            cfg.classes,
            FixedTensor::new(vec![cfg.classes, features], format, fc_w)?,
        )?),
    ];
    ModelGraph::new(cfg.input, format, layers)
}

/// `count` Bernoulli spike maps at `density`, drawn from one seeded stream.
pub fn random_inputs(seed: u64, shape: Shape3, count: usize, density: f64) -> Vec<SpikeTensor> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|_| SpikeTensor::random(shape, density, &mut rng)).collect()
}

/// Class labels for `count` images, drawn from their own seeded stream.
pub fn random_labels(seed: u64, count: usize, classes: usize) -> Vec<u16> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_1abe);
    (0..count).map(|_| rng.gen_range(0..classes.max(1)) as u16).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::LayerKind;

    #[test]
    fn toy_model_has_every_layer_kind() {
        let m = toy_model(1, &ToyConfig::default()).unwrap();
        let kinds = m.kinds();
        for k in LayerKind::ALL {
            assert!(kinds.contains(&k), "missing {k}");
        }
        assert_eq!(m.classes(), Some(10));
    }

    #[test]
    fn generation_is_seeded() {
        let cfg = ToyConfig::default();
        assert_eq!(toy_model(5, &cfg).unwrap(), toy_model(5, &cfg).unwrap());
        assert_ne!(toy_model(5, &cfg).unwrap(), toy_model(6, &cfg).unwrap());
        let shape = Shape3::new(3, 8, 8);
        assert_eq!(random_inputs(2, shape, 3, 0.3), random_inputs(2, shape, 3, 0.3));
    }

    #[test]
    fn bad_toy_dims_rejected() {
        let cfg = ToyConfig {
            input: Shape3::new(3, 12, 12),
            ..ToyConfig::default()
        };
        assert!(toy_model(1, &cfg).is_err());
    }
}
