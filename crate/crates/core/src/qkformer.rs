// SPDX-License-Identifier: Apache-2.0

//! Spiking QK token attention.
//!
//! `Q = LIF(Wq·x)`, `K = LIF(Wk·x)` with 1×1 projections; the attention
//! register ORs Q over channels into one bit per token, and the block output
//! is `K ∧ mask`. With the residual flag set, every input spike adds one
//! accumulator unit to its own K neuron before the K LIF fires.
//!
//! [`onthefly_writeback`] computes the same result while the PE write-backs
//! stream into the spiking buffer: Q spikes set register bits on their way
//! out, K spikes are masked on theirs.

use crate::error::{CoreError, Result};
use crate::fixed::{FixedPointFormat, SumTensor};
use crate::graph::ConvSpec;
use crate::lif::LifParams;
use crate::reference::{conv_layer_ref, lif_map};
use crate::spike::{Shape3, SpikeTensor};

/// Reduction axis of the attention register.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub enum MaskAxis {
    /// One bit per spatial token, OR over channels.
    #[default]
    Token,
    /// One bit per channel, OR over tokens.
    Channel,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct QkBlockSpec {
    pub channels: usize,
    pub q: ConvSpec,
    pub q_lif: LifParams,
    pub k: ConvSpec,
    pub k_lif: LifParams,
    pub residual: bool,
    pub axis: MaskAxis,
}

impl QkBlockSpec {
    pub(crate) fn check(&self, channels: usize, format: FixedPointFormat) -> Result<()> {
        for (name, conv) in [("q", &self.q), ("k", &self.k)] {
            let ok = conv.in_channels == channels
                && conv.out_channels == channels
                && conv.kernel == 1
                && conv.stride == 1
                && conv.padding == 0;
            if !ok {
                return Err(CoreError::Config(format!(
                    "qkformer {name} projection must be a {channels}->{channels} 1x1 conv"
                )));
            }
            if conv.weights.format() != format {
                return Err(CoreError::Config(format!("qkformer {name} weights use a different format")));
            }
        }
        if self.channels != channels {
            return Err(CoreError::Config(format!(
                "qkformer declares {} channels, input has {channels}",
                self.channels
            )));
        }
        Ok(())
    }
}

/// Attention activation register.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AttenReg {
    axis: MaskAxis,
    shape: Shape3,
    bits: Vec<bool>,
}

impl AttenReg {
    pub fn new(axis: MaskAxis, shape: Shape3) -> Self {
        let n = match axis {
            MaskAxis::Token => shape.tokens(),
            MaskAxis::Channel => shape.channels,
        };
        Self {
            axis,
            shape,
            bits: vec![false; n],
        }
    }

    pub fn axis(&self) -> MaskAxis {
        self.axis
    }

    #[inline]
    fn lane(&self, channel: usize, token: usize) -> usize {
        match self.axis {
            MaskAxis::Token => token,
            MaskAxis::Channel => channel,
        }
    }

    /// OR a Q spike into its bit.
    pub fn record(&mut self, channel: usize, token: usize) {
        let i = self.lane(channel, token);
        self.bits[i] = true;
    }

    pub fn allows(&self, channel: usize, token: usize) -> bool {
        self.bits[self.lane(channel, token)]
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn active(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn from_q(axis: MaskAxis, q: &SpikeTensor) -> Self {
        let mut reg = Self::new(axis, q.shape());
        let tokens = q.shape().tokens();
        for (c, y, x) in q.iter_spikes() {
            reg.record(c, y * q.width() + x);
        }
        debug_assert!(reg.bits.len() <= tokens.max(q.channels()));
        reg
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct QkOutput {
    pub q_sums: SumTensor,
    pub k_sums: SumTensor,
    pub q: SpikeTensor,
    pub k: SpikeTensor,
    pub mask: AttenReg,
    pub out: SpikeTensor,
    pub overflows: u64,
}

/// Dense evaluation of the block. `unit` is one accumulator unit (residual spike weight).
pub fn qk_attention_ref(x: &SpikeTensor, spec: &QkBlockSpec, unit: i64) -> Result<QkOutput> {
    if x.channels() != spec.channels {
        return Err(CoreError::Config(format!(
            "qkformer expects {} channels, got {}",
            spec.channels,
            x.shape()
        )));
    }
    let q_sums = conv_layer_ref(x, &spec.q)?;
    let mut k_sums = conv_layer_ref(x, &spec.k)?;
    if spec.residual {
        for (c, y, xx) in x.iter_spikes() {
            k_sums.add(c, y, xx, unit);
        }
    }
    let (q, ov_q) = lif_map(&q_sums, &spec.q_lif);
    let (k, ov_k) = lif_map(&k_sums, &spec.k_lif);
    let mask = AttenReg::from_q(spec.axis, &q);
    let w = x.width();
    let out = SpikeTensor::from_fn(x.shape(), |c, y, xx| k.get(c, y, xx) && mask.allows(c, y * w + xx));
    Ok(QkOutput {
        q_sums,
        k_sums,
        q,
        k,
        mask,
        out,
        overflows: ov_q + ov_k,
    })
}

/// One record on the EPA -> spiking buffer write-back path.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum WriteBackEvent {
    QSpike { channel: usize, token: usize },
    /// Every Q neuron at these tokens has been evaluated.
    QTokensDone(Vec<usize>),
    KSpike { channel: usize, token: usize },
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct WritebackStats {
    pub q_writes: u64,
    pub k_writes: u64,
    /// Total spiking-buffer writes.
    pub buffer_writes: u64,
    /// Spiking-buffer reads issued for attention.
    pub buffer_reads: u64,
    /// K spikes written as 0 because their mask bit was clear.
    pub masked: u64,
}

fn check_coords(shape: Shape3, channel: usize, token: usize) -> Result<()> {
    if channel >= shape.channels || token >= shape.tokens() {
        return Err(CoreError::Contract(format!(
            "write-back ({channel}, {token}) outside {shape}"
        )));
    }
    Ok(())
}

/// Apply the write-back stream with attention embedded in it. Returns the
/// masked K map as it lands in the spiking buffer.
pub fn onthefly_writeback<I>(events: I, reg: &mut AttenReg, shape: Shape3) -> Result<(SpikeTensor, WritebackStats)>
where
    I: IntoIterator<Item = WriteBackEvent>,
{
    let mut buffer = SpikeTensor::zeros(shape);
    let mut stats = WritebackStats::default();
    let mut done = vec![false; shape.tokens()];
    let mut done_count = 0usize;
    for ev in events {
        match ev {
            WriteBackEvent::QSpike { channel, token } => {
                check_coords(shape, channel, token)?;
                if done[token] {
                    return Err(CoreError::Contract(format!(
                        "Q spike for token {token} after its completion"
                    )));
                }
                reg.record(channel, token);
                stats.q_writes += 1;
            }
            WriteBackEvent::QTokensDone(tokens) => {
                for t in tokens {
                    check_coords(shape, 0, t)?;
                    if !done[t] {
                        done[t] = true;
                        done_count += 1;
                    }
                }
            }
            WriteBackEvent::KSpike { channel, token } => {
                check_coords(shape, channel, token)?;
                let ready = match reg.axis() {
                    MaskAxis::Token => done[token],
                    MaskAxis::Channel => done_count == shape.tokens(),
                };
                if !ready {
                    return Err(CoreError::Ordering { channel, token });
                }
                let bit = reg.allows(channel, token);
                buffer.set_flat(channel * shape.tokens() + token, bit);
                stats.masked += (!bit) as u64;
                stats.k_writes += 1;
            }
        }
    }
    stats.buffer_writes = stats.q_writes + stats.k_writes;
    Ok((buffer, stats))
}

/// The same stream written back without attention: the plain conv-layer flow.
pub fn baseline_writeback<I>(events: I, shape: Shape3) -> Result<(SpikeTensor, WritebackStats)>
where
    I: IntoIterator<Item = WriteBackEvent>,
{
    let mut buffer = SpikeTensor::zeros(shape);
    let mut stats = WritebackStats::default();
    for ev in events {
        match ev {
            WriteBackEvent::QSpike { channel, token } => {
                check_coords(shape, channel, token)?;
                stats.q_writes += 1;
            }
            WriteBackEvent::KSpike { channel, token } => {
                check_coords(shape, channel, token)?;
                buffer.set_flat(channel * shape.tokens() + token, true);
                stats.k_writes += 1;
            }
            WriteBackEvent::QTokensDone(_) => {}
        }
    }
    stats.buffer_writes = stats.q_writes + stats.k_writes;
    Ok((buffer, stats))
}

/// Write-back stream of a dense evaluation: all Q spikes, one completion
/// record, then all K spikes.
pub fn writeback_stream(q: &SpikeTensor, k: &SpikeTensor) -> Vec<WriteBackEvent> {
    let w = q.width();
    let mut events: Vec<_> = q
        .iter_spikes()
        .map(|(c, y, x)| WriteBackEvent::QSpike {
            channel: c,
            token: y * w + x,
        })
        .collect();
    events.push(WriteBackEvent::QTokensDone((0..q.shape().tokens()).collect()));
    events.extend(k.iter_spikes().map(|(c, y, x)| WriteBackEvent::KSpike {
        channel: c,
        token: y * w + x,
    }));
    events
}
