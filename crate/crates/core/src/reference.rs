// SPDX-License-Identifier: Apache-2.0

//! Dense golden-reference executor.
//!
//! Every layer kind is evaluated with plain loops and exact integer
//! arithmetic. Average pooling and classifier scores are kept as exact
//! rationals (integer numerators over a known denominator), never rounded.

use crate::error::{CoreError, Result};
use crate::fixed::{FixedTensor, SumTensor};
use crate::graph::{ConvSpec, FcSpec, LayerSpec, ModelGraph};
use crate::lif::{lif_step, LifParams, LifState};
use crate::qkformer::{qk_attention_ref, QkOutput};
use crate::spike::{Shape3, SpikeTensor};
use crate::w2ttfs::{ttfs_fc_exact, w2ttfs_encode, ScaleTable, TtfsCode};

/// Per-window spike counts; element value is `count / window²`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PooledTensor {
    shape: Shape3,
    window: usize,
    counts: Vec<u32>,
}

impl PooledTensor {
    pub(crate) fn from_counts(shape: Shape3, window: usize, counts: Vec<u32>) -> Self {
        debug_assert_eq!(counts.len(), shape.len());
        Self { shape, window, counts }
    }

    pub fn shape(&self) -> Shape3 {
        self.shape
    }

    pub fn window(&self) -> usize {
        self.window
    }

    /// Denominator shared by every element.
    pub fn denominator(&self) -> i64 {
        (self.window * self.window) as i64
    }

    pub fn count(&self, c: usize, y: usize, x: usize) -> u32 {
        self.counts[(c * self.shape.height + y) * self.shape.width + x]
    }

    /// Numerators in channel-major flatten order.
    pub fn counts(&self) -> &[u32] {
        &self.counts
    }
}

/// Class scores as exact rationals over one positive denominator.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ExactScores {
    pub numerators: Vec<i64>,
    pub denominator: i64,
}

impl ExactScores {
    pub fn integer(values: Vec<i64>) -> Self {
        Self {
            numerators: values,
            denominator: 1,
        }
    }

    pub fn len(&self) -> usize {
        self.numerators.len()
    }

    pub fn is_empty(&self) -> bool {
        self.numerators.is_empty()
    }

    /// Highest score, ties to the lowest class index.
    pub fn argmax(&self) -> Option<usize> {
        argmax(&self.numerators)
    }

    pub fn value(&self, class: usize) -> f64 {
        self.numerators[class] as f64 / self.denominator as f64
    }

    /// Value equality regardless of denominator.
    pub fn same_values(&self, other: &Self) -> bool {
        self.len() == other.len()
            && self
                .numerators
                .iter()
                .zip(&other.numerators)
                .all(|(&a, &b)| a as i128 * other.denominator as i128 == b as i128 * self.denominator as i128)
    }
}

/// Index of the maximum, ties broken toward the lowest index.
pub fn argmax(values: &[i64]) -> Option<usize> {
    let mut best: Option<(usize, i64)> = None;
    for (i, &v) in values.iter().enumerate() {
        if best.is_none_or(|(_, b)| v > b) {
            best = Some((i, v));
        }
    }
    best.map(|(i, _)| i)
}

/// `out[oc][oy][ox] = Σ w[oc][ic][ki][kj] · in[ic][oy·s + ki − p][ox·s + kj − p]`,
/// zero outside the input.
pub fn dense_conv_ref(input: &SpikeTensor, weights: &FixedTensor, stride: usize, padding: usize) -> Result<SumTensor> {
    let &[oc_n, ic_n, k, k2] = weights.shape() else {
        return Err(CoreError::Config(format!(
            "conv weights must be rank 4, got {:?}",
            weights.shape()
        )));
    };
    if k != k2 || ic_n != input.channels() || stride == 0 {
        return Err(CoreError::Config(format!(
            "conv weights {:?} incompatible with input {} (stride {stride})",
            weights.shape(),
            input.shape()
        )));
    }
    let (h, w) = (input.height(), input.width());
    if h + 2 * padding < k || w + 2 * padding < k {
        return Err(CoreError::Config(format!("kernel {k} does not fit input {}", input.shape())));
    }
    let oh = (h + 2 * padding - k) / stride + 1;
    let ow = (w + 2 * padding - k) / stride + 1;
    let wv = weights.values();
    let mut out = SumTensor::zeros(oc_n, oh, ow);
    for oc in 0..oc_n {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = 0i64;
                for ic in 0..ic_n {
                    for ki in 0..k {
                        let iy = (oy * stride + ki) as isize - padding as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for kj in 0..k {
                            let ix = (ox * stride + kj) as isize - padding as isize;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            if input.get(ic, iy as usize, ix as usize) {
                                acc += wv[((oc * ic_n + ic) * k + ki) * k + kj] as i64;
                            }
                        }
                    }
                }
                out.set(oc, oy, ox, acc);
            }
        }
    }
    Ok(out)
}

pub fn conv_layer_ref(input: &SpikeTensor, conv: &ConvSpec) -> Result<SumTensor> {
    dense_conv_ref(input, &conv.weights, conv.stride, conv.padding)
}

/// Window popcounts; divisibility of both spatial dims is required.
pub fn avg_pool_ref(input: &SpikeTensor, window: usize) -> Result<PooledTensor> {
    let s = input.shape();
    if window == 0 || !s.height.is_multiple_of(window) || !s.width.is_multiple_of(window) {
        return Err(CoreError::Config(format!("pool window {window} does not divide {s}")));
    }
    let shape = Shape3::new(s.channels, s.height / window, s.width / window);
    let mut counts = vec![0u32; shape.len()];
    for (c, y, x) in input.iter_spikes() {
        counts[(c * shape.height + y / window) * shape.width + x / window] += 1;
    }
    Ok(PooledTensor { shape, window, counts })
}

/// Apply one LIF timestep from rest to every element.
pub fn lif_map(sums: &SumTensor, params: &LifParams) -> (SpikeTensor, u64) {
    let (c, h, w) = sums.dims();
    let mut overflows = 0u64;
    let mut out = SpikeTensor::zeros(Shape3::new(c, h, w));
    for (i, &v) in sums.values().iter().enumerate() {
        let (state, spike) = lif_step(LifState::new(), params, v);
        overflows += state.overflows() as u64;
        out.set_flat(i, spike);
    }
    (out, overflows)
}

/// Pooled counts scaled into accumulator units. The graph guarantees `window²` divides `unit`.
pub fn pooled_sums(pooled: &PooledTensor, unit: i64) -> SumTensor {
    let s = pooled.shape();
    let share = unit / pooled.denominator();
    let mut out = SumTensor::zeros(s.channels, s.height, s.width);
    for c in 0..s.channels {
        for y in 0..s.height {
            for x in 0..s.width {
                out.set(c, y, x, pooled.count(c, y, x) as i64 * share);
            }
        }
    }
    out
}

pub fn fc_on_spikes(input: &SpikeTensor, fc: &FcSpec) -> ExactScores {
    let mut scores = vec![0i64; fc.classes];
    for (j, s) in scores.iter_mut().enumerate() {
        for f in (0..input.len()).filter(|&f| input.get_flat(f)) {
            *s += fc.weight(j, f) as i64;
        }
    }
    ExactScores::integer(scores)
}

pub fn fc_on_pooled(input: &PooledTensor, fc: &FcSpec) -> ExactScores {
    let mut scores = vec![0i64; fc.classes];
    for (j, s) in scores.iter_mut().enumerate() {
        for (f, &cnt) in input.counts().iter().enumerate() {
            *s += fc.weight(j, f) as i64 * cnt as i64;
        }
    }
    ExactScores {
        numerators: scores,
        denominator: input.denominator(),
    }
}

/// Output of one layer in the reference trace.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum LayerOutput {
    Spikes(SpikeTensor),
    Sums(SumTensor),
    Pooled(PooledTensor),
    Ttfs(TtfsCode),
    Qk(Box<QkOutput>),
    Scores(ExactScores),
}

impl LayerOutput {
    pub fn spikes(&self) -> Option<&SpikeTensor> {
        match self {
            LayerOutput::Spikes(s) => Some(s),
            LayerOutput::Qk(q) => Some(&q.out),
            _ => None,
        }
    }

    pub fn sums(&self) -> Option<&SumTensor> {
        match self {
            LayerOutput::Sums(s) => Some(s),
            _ => None,
        }
    }
}

/// Spikes emitted by every spike-producing layer of a trace (input excluded).
pub fn trace_spikes(outputs: &[LayerOutput]) -> u64 {
    outputs
        .iter()
        .map(|o| match o {
            LayerOutput::Spikes(s) => s.total_spikes(),
            LayerOutput::Qk(q) => q.q.total_spikes() + q.k.total_spikes(),
            _ => 0,
        })
        .sum()
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ReferenceRun {
    pub outputs: Vec<LayerOutput>,
    pub scores: Option<ExactScores>,
    pub overflows: u64,
}

impl ReferenceRun {
    /// Spikes emitted by every spike-producing layer (input excluded).
    pub fn total_spikes(&self) -> u64 {
        trace_spikes(&self.outputs)
    }

    pub fn predicted_class(&self) -> Option<usize> {
        self.scores.as_ref().and_then(ExactScores::argmax)
    }
}

/// Execute `model` layer by layer with dense semantics.
pub fn run_reference(model: &ModelGraph, input: &SpikeTensor) -> Result<ReferenceRun> {
    if input.shape() != model.input_shape() {
        return Err(CoreError::Config(format!(
            "input {} does not match model input {}",
            input.shape(),
            model.input_shape()
        )));
    }
    let unit = model.format().unit();
    let mut outputs: Vec<LayerOutput> = Vec::with_capacity(model.len());
    let mut overflows = 0u64;
    for (i, layer) in model.layers().iter().enumerate() {
        let wrap = |e: CoreError| CoreError::Graph {
            layer: i,
            reason: e.to_string(),
        };
        let prev = outputs.last();
        let spikes_in = || -> Result<&SpikeTensor> {
            match prev {
                None => Ok(input),
                Some(o) => o.spikes().ok_or_else(|| CoreError::Graph {
                    layer: i,
                    reason: "expected spikes from the previous layer".into(),
                }),
            }
        };
        let out = match layer {
            LayerSpec::Conv(conv) => LayerOutput::Sums(conv_layer_ref(spikes_in()?, conv).map_err(wrap)?),
            LayerSpec::Lif(params) => {
                let sums = match prev {
                    Some(LayerOutput::Sums(s)) => s.clone(),
                    Some(LayerOutput::Pooled(p)) => pooled_sums(p, unit),
                    _ => return Err(wrap(CoreError::Contract("lif needs sums or pooled counts".into()))),
                };
                let (spikes, ov) = lif_map(&sums, params);
                overflows += ov;
                LayerOutput::Spikes(spikes)
            }
            LayerSpec::ResidualAdd { from } => {
                let Some(LayerOutput::Sums(base)) = prev else {
                    return Err(wrap(CoreError::Contract("residual join needs sums".into())));
                };
                let src = outputs[*from]
                    .spikes()
                    .ok_or_else(|| wrap(CoreError::Contract("residual source must emit spikes".into())))?;
                let mut sums = base.clone();
                for (c, y, x) in src.iter_spikes() {
                    sums.add(c, y, x, unit);
                }
                LayerOutput::Sums(sums)
            }
            LayerSpec::AvgPool { window } => LayerOutput::Pooled(avg_pool_ref(spikes_in()?, *window).map_err(wrap)?),
            LayerSpec::W2ttfsPool { window } => {
                let map = spikes_in()?;
                LayerOutput::Ttfs(w2ttfs_encode(map, map.height() / window, map.width() / window).map_err(wrap)?)
            }
            LayerSpec::QkformerBlock(spec) => {
                let out = qk_attention_ref(spikes_in()?, spec, unit).map_err(wrap)?;
                overflows += out.overflows;
                LayerOutput::Qk(Box::new(out))
            }
            LayerSpec::FullyConnected(fc) => {
                let scores = match prev {
                    None => fc_on_spikes(input, fc),
                    Some(LayerOutput::Spikes(s)) => fc_on_spikes(s, fc),
                    Some(LayerOutput::Qk(q)) => fc_on_spikes(&q.out, fc),
                    Some(LayerOutput::Pooled(p)) => fc_on_pooled(p, fc),
                    Some(LayerOutput::Ttfs(code)) => {
                        let scales = ScaleTable::new(code.window());
                        ttfs_fc_exact(code, &fc.weights, &scales).map_err(wrap)?
                    }
                    _ => return Err(wrap(CoreError::Contract("fc needs spikes, pooled or ttfs input".into()))),
                };
                LayerOutput::Scores(scores)
            }
        };
        outputs.push(out);
    }
    let scores = match outputs.last() {
        Some(LayerOutput::Scores(s)) => Some(s.clone()),
        _ => None,
    };
    Ok(ReferenceRun {
        outputs,
        scores,
        overflows,
    })
}
