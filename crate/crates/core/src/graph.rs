// SPDX-License-Identifier: Apache-2.0

//! Layer descriptions and the validated sequential model graph.
//!
//! Every layer consumes the previous layer's output. Signals between layers
//! are typed ([`SignalShape`]): convolutions produce widened sums, which only
//! a residual join or a LIF may consume; pooling layers produce count maps
//! that only a LIF or the classifier may consume. Batch norm is expected to be
//! folded into the convolution weights already.

use std::fmt;

use crate::error::{CoreError, Result};
use crate::fixed::{FixedPointFormat, FixedTensor};
use crate::lif::LifParams;
use crate::qkformer::QkBlockSpec;
use crate::spike::Shape3;

/// Convolution with weights `[oc][ic][k][k]`, cross-correlation convention.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub weights: FixedTensor,
}

impl ConvSpec {
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        weights: FixedTensor,
    ) -> Result<Self> {
        let spec = Self {
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
            weights,
        };
        spec.check()?;
        Ok(spec)
    }

    fn check(&self) -> Result<()> {
        let bad = |m: String| Err(CoreError::Config(m));
        if self.in_channels == 0 || self.out_channels == 0 || self.kernel == 0 {
            return bad("conv channels and kernel must be non-zero".into());
        }
        if !(self.stride == 1 || self.stride == 2) {
            return bad(format!("conv stride must be 1 or 2, got {}", self.stride));
        }
        let want = [self.out_channels, self.in_channels, self.kernel, self.kernel];
        if self.weights.shape() != want {
            return bad(format!(
                "conv weight shape {:?} does not match [oc][ic][k][k] = {:?}",
                self.weights.shape(),
                want
            ));
        }
        Ok(())
    }

    /// `floor((n + 2p - k) / s) + 1`, or `None` if the kernel does not fit.
    pub fn out_extent(&self, n: usize) -> Option<usize> {
        let padded = n + 2 * self.padding;
        (padded >= self.kernel).then(|| (padded - self.kernel) / self.stride + 1)
    }

    pub fn output_shape(&self, input: Shape3) -> Option<Shape3> {
        Some(Shape3::new(
            self.out_channels,
            self.out_extent(input.height)?,
            self.out_extent(input.width)?,
        ))
    }

    #[inline]
    pub fn weight(&self, oc: usize, ic: usize, ki: usize, kj: usize) -> i8 {
        let k = self.kernel;
        self.weights.values()[((oc * self.in_channels + ic) * k + ki) * k + kj]
    }
}

/// Fully connected classifier, weights `[classes][features]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FcSpec {
    pub in_features: usize,
    pub classes: usize,
    pub weights: FixedTensor,
}

impl FcSpec {
    pub fn new(in_features: usize, classes: usize, weights: FixedTensor) -> Result<Self> {
        if weights.shape() != [classes, in_features] {
            return Err(CoreError::Config(format!(
                "fc weight shape {:?} does not match [classes][features] = [{classes}, {in_features}]",
                weights.shape()
            )));
        }
        Ok(Self {
            in_features,
            classes,
            weights,
        })
    }

    #[inline]
    pub fn weight(&self, class: usize, feature: usize) -> i8 {
        self.weights.values()[class * self.in_features + feature]
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum LayerSpec {
    Conv(ConvSpec),
    Lif(LifParams),
    /// Adds the spikes emitted by layer `from` (one accumulator unit each)
    /// to the incoming synaptic sums.
    ResidualAdd { from: usize },
    AvgPool { window: usize },
    W2ttfsPool { window: usize },
    QkformerBlock(QkBlockSpec),
    FullyConnected(FcSpec),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum LayerKind {
    Conv,
    Lif,
    ResidualAdd,
    AvgPool,
    W2ttfsPool,
    QkformerBlock,
    FullyConnected,
}

impl LayerKind {
    pub const ALL: [LayerKind; 7] = [
        LayerKind::Conv,
        LayerKind::Lif,
        LayerKind::ResidualAdd,
        LayerKind::AvgPool,
        LayerKind::W2ttfsPool,
        LayerKind::QkformerBlock,
        LayerKind::FullyConnected,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LayerKind::Conv => "conv",
            LayerKind::Lif => "lif",
            LayerKind::ResidualAdd => "residual",
            LayerKind::AvgPool => "avgpool",
            LayerKind::W2ttfsPool => "w2ttfs",
            LayerKind::QkformerBlock => "qkformer",
            LayerKind::FullyConnected => "fc",
        }
    }
}

impl fmt::Display for LayerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl LayerSpec {
    pub fn kind(&self) -> LayerKind {
        match self {
            LayerSpec::Conv(_) => LayerKind::Conv,
            LayerSpec::Lif(_) => LayerKind::Lif,
            LayerSpec::ResidualAdd { .. } => LayerKind::ResidualAdd,
            LayerSpec::AvgPool { .. } => LayerKind::AvgPool,
            LayerSpec::W2ttfsPool { .. } => LayerKind::W2ttfsPool,
            LayerSpec::QkformerBlock(_) => LayerKind::QkformerBlock,
            LayerSpec::FullyConnected(_) => LayerKind::FullyConnected,
        }
    }
}

/// Type and shape of the signal between two layers.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SignalShape {
    Spikes(Shape3),
    Sums(Shape3),
    /// Window spike counts; value = count / window².
    Pooled { shape: Shape3, window: usize },
    /// Time-to-first-spike code over `window² + 1` slots.
    Ttfs { shape: Shape3, window: usize },
    Scores(usize),
}

impl SignalShape {
    fn describe(&self) -> String {
        match self {
            SignalShape::Spikes(s) => format!("spikes {s}"),
            SignalShape::Sums(s) => format!("sums {s}"),
            SignalShape::Pooled { shape, window } => format!("pooled {shape} (window {window})"),
            SignalShape::Ttfs { shape, window } => format!("ttfs {shape} (window {window})"),
            SignalShape::Scores(n) => format!("{n} scores"),
        }
    }

    pub fn features(&self) -> Option<usize> {
        match self {
            SignalShape::Spikes(s) | SignalShape::Pooled { shape: s, .. } | SignalShape::Ttfs { shape: s, .. } => {
                Some(s.len())
            }
            _ => None,
        }
    }
}

/// Validated model: shapes chain, residual endpoints agree, pooling divides.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ModelGraph {
    input: Shape3,
    format: FixedPointFormat,
    layers: Vec<LayerSpec>,
    outputs: Vec<SignalShape>,
}

impl ModelGraph {
    pub fn new(input: Shape3, format: FixedPointFormat, layers: Vec<LayerSpec>) -> Result<Self> {
        if input.is_empty() {
            return Err(CoreError::Config(format!("input shape {input} is empty")));
        }
        let mut outputs: Vec<SignalShape> = Vec::with_capacity(layers.len());
        for (i, layer) in layers.iter().enumerate() {
            let incoming = outputs.last().copied().unwrap_or(SignalShape::Spikes(input));
            let out = infer(i, layer, incoming, &outputs, format)?;
            outputs.push(out);
        }
        Ok(Self {
            input,
            format,
            layers,
            outputs,
        })
    }

    pub fn input_shape(&self) -> Shape3 {
        self.input
    }

    pub fn format(&self) -> FixedPointFormat {
        self.format
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    /// Output signal of layer `i`.
    pub fn output(&self, i: usize) -> SignalShape {
        self.outputs[i]
    }

    /// Input signal of layer `i`.
    pub fn input_of(&self, i: usize) -> SignalShape {
        if i == 0 {
            SignalShape::Spikes(self.input)
        } else {
            self.outputs[i - 1]
        }
    }

    /// `(from, to)` pairs, one per residual join.
    pub fn residual_edges(&self) -> Vec<(usize, usize)> {
        self.layers
            .iter()
            .enumerate()
            .filter_map(|(i, l)| match l {
                LayerSpec::ResidualAdd { from } => Some((*from, i)),
                _ => None,
            })
            .collect()
    }

    pub fn classes(&self) -> Option<usize> {
        match self.outputs.last() {
            Some(SignalShape::Scores(n)) => Some(*n),
            _ => None,
        }
    }

    pub fn kinds(&self) -> Vec<LayerKind> {
        self.layers.iter().map(LayerSpec::kind).collect()
    }
}

fn infer(
    i: usize,
    layer: &LayerSpec,
    incoming: SignalShape,
    previous: &[SignalShape],
    format: FixedPointFormat,
) -> Result<SignalShape> {
    let err = |reason: String| Err(CoreError::Graph { layer: i, reason });
    let wrong_input = |what: &str| {
        Err(CoreError::Graph {
            layer: i,
            reason: format!("{} expects {what}, got {}", layer.kind(), incoming.describe()),
        })
    };
    match layer {
        LayerSpec::Conv(conv) => {
            let SignalShape::Spikes(s) = incoming else {
                return wrong_input("spikes");
            };
            if let Err(e) = conv.check() {
                return err(e.to_string());
            }
            if conv.weights.format() != format {
                return err("conv weights use a different fixed-point format than the model".into());
            }
            if conv.in_channels != s.channels {
                return err(format!(
                    "conv declares {} input channels but receives {s}",
                    conv.in_channels
                ));
            }
            match conv.output_shape(s) {
                Some(o) => Ok(SignalShape::Sums(o)),
                None => err(format!("kernel {} does not fit input {s}", conv.kernel)),
            }
        }
        LayerSpec::Lif(_) => match incoming {
            SignalShape::Sums(s) => Ok(SignalShape::Spikes(s)),
            SignalShape::Pooled { shape, window } => {
                let wsq = (window * window) as i64;
                if format.unit() % wsq != 0 {
                    return err(format!(
                        "pooled window {window}x{window} does not divide one accumulator unit ({})",
                        format.unit()
                    ));
                }
                Ok(SignalShape::Spikes(shape))
            }
            _ => wrong_input("sums or pooled counts"),
        },
        LayerSpec::ResidualAdd { from } => {
            let SignalShape::Sums(s) = incoming else {
                return wrong_input("sums");
            };
            if *from >= i {
                return err(format!("residual source {from} is not an earlier layer"));
            }
            match previous[*from] {
                SignalShape::Spikes(src) if src == s => Ok(SignalShape::Sums(s)),
                other => err(format!(
                    "residual source layer {from} emits {}, join needs spikes {s}",
                    other.describe()
                )),
            }
        }
        LayerSpec::AvgPool { window } | LayerSpec::W2ttfsPool { window } => {
            let SignalShape::Spikes(s) = incoming else {
                return wrong_input("spikes");
            };
            let w = *window;
            if w == 0 || s.height % w != 0 || s.width % w != 0 {
                return err(format!("pool window {w} does not divide input {s}"));
            }
            let shape = Shape3::new(s.channels, s.height / w, s.width / w);
            Ok(if matches!(layer, LayerSpec::AvgPool { .. }) {
                SignalShape::Pooled { shape, window: w }
            } else {
                SignalShape::Ttfs { shape, window: w }
            })
        }
        LayerSpec::QkformerBlock(spec) => {
            let SignalShape::Spikes(s) = incoming else {
                return wrong_input("spikes");
            };
            if let Err(e) = spec.check(s.channels, format) {
                return err(e.to_string());
            }
            Ok(SignalShape::Spikes(s))
        }
        LayerSpec::FullyConnected(fc) => {
            let Some(n) = incoming.features() else {
                return wrong_input("spikes, pooled counts or a ttfs code");
            };
            if fc.weights.format() != format {
                return err("fc weights use a different fixed-point format than the model".into());
            }
            if fc.in_features != n {
                return err(format!("fc declares {} features, input has {n}", fc.in_features));
            }
            Ok(SignalShape::Scores(fc.classes))
        }
    }
}
