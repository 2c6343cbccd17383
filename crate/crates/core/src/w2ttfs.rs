// SPDX-License-Identifier: Apache-2.0

//! Window-to-time-to-first-spike re-encoding of average pooling.
//!
//! Each pooling window's spike count `n` becomes a single spike in time slot
//! `n`. The classifier then weights slot `t` by `t / window²`, which makes
//! the encoding a lossless replacement for average pooling followed by a
//! fully connected layer. Slots run over `0..=window²`: a full window is a
//! reachable count, and slot 0 carries zero weight.

use num_rational::Ratio;

use crate::error::{CoreError, Result};
use crate::fixed::FixedTensor;
use crate::reference::ExactScores;
use crate::spike::{Shape3, SpikeTensor};

/// Popcount of the `window × window` region feeding pooled output `(oy, ox)`.
pub fn window_spike_count(map: &SpikeTensor, channel: usize, oy: usize, ox: usize, window: usize) -> Result<u32> {
    let s = map.shape();
    if window == 0 || !s.height.is_multiple_of(window) || !s.width.is_multiple_of(window) {
        return Err(CoreError::Contract(format!("window {window} does not divide {s}")));
    }
    if channel >= s.channels || oy >= s.height / window || ox >= s.width / window {
        return Err(CoreError::Contract(format!(
            "window ({channel}, {oy}, {ox}) outside pooled grid of {s}"
        )));
    }
    let mut n = 0;
    for y in oy * window..(oy + 1) * window {
        for x in ox * window..(ox + 1) * window {
            n += map.get(channel, y, x) as u32;
        }
    }
    Ok(n)
}

/// One binary map per time slot, `[slot][channel][location]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TtfsCode {
    window: usize,
    shape: Shape3,
    slots: Vec<SpikeTensor>,
}

impl TtfsCode {
    /// Code from per-window counts in channel-major order.
    pub(crate) fn from_counts(shape: Shape3, window: usize, counts: impl IntoIterator<Item = u32>) -> Self {
        let mut slots = vec![SpikeTensor::zeros(shape); window * window + 1];
        for (i, n) in counts.into_iter().enumerate() {
            slots[n as usize].set_flat(i, true);
        }
        Self { window, shape, slots }
    }

    pub fn window(&self) -> usize {
        self.window
    }

    /// Pooled grid shape (channels × out_h × out_w).
    pub fn shape(&self) -> Shape3 {
        self.shape
    }

    pub fn slot_count(&self) -> usize {
        self.slots.len()
    }

    pub fn slot(&self, t: usize) -> &SpikeTensor {
        &self.slots[t]
    }

    pub fn get(&self, t: usize, channel: usize, location: usize) -> bool {
        self.slots[t].get_flat(channel * self.shape.tokens() + location)
    }

    /// Slot holding the spike of `(channel, location)`; `None` only if the one-hot property is broken.
    pub fn first_spike_slot(&self, channel: usize, location: usize) -> Option<usize> {
        (0..self.slots.len()).find(|&t| self.get(t, channel, location))
    }
}

/// `scale[t] = t / window²` for `t in 0..=window²`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ScaleTable {
    window_sq: i64,
    scales: Vec<Ratio<i64>>,
}

impl ScaleTable {
    pub fn new(window: usize) -> Self {
        let window_sq = (window * window) as i64;
        let scales = (0..=window_sq).map(|t| Ratio::new(t, window_sq.max(1))).collect();
        Self { window_sq, scales }
    }

    pub fn window_sq(&self) -> i64 {
        self.window_sq
    }

    pub fn scale(&self, slot: usize) -> Ratio<i64> {
        self.scales[slot]
    }

    pub fn len(&self) -> usize {
        self.scales.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scales.is_empty()
    }
}

/// Encode each window count as a one-hot time slot.
pub fn w2ttfs_encode(map: &SpikeTensor, out_h: usize, out_w: usize) -> Result<TtfsCode> {
    let s = map.shape();
    if out_h == 0 || out_w == 0 || !s.height.is_multiple_of(out_h) || !s.width.is_multiple_of(out_w) {
        return Err(CoreError::Contract(format!("{s} is not divisible into {out_h}x{out_w}")));
    }
    let window = s.height / out_h;
    if s.width / out_w != window {
        return Err(CoreError::Contract(format!(
            "non-square pooling window for {s} -> {out_h}x{out_w}"
        )));
    }
    let shape = Shape3::new(s.channels, out_h, out_w);
    let mut slots = vec![SpikeTensor::zeros(shape); window * window + 1];
    for c in 0..s.channels {
        for oy in 0..out_h {
            for ox in 0..out_w {
                let vld_cnt = window_spike_count(map, c, oy, ox, window)? as usize;
                slots[vld_cnt].set(c, oy, ox, true);
            }
        }
    }
    Ok(TtfsCode { window, shape, slots })
}

/// `Σ_t scale[t] · (W · flatten(code[t]))` in exact rational arithmetic,
/// returned over the common denominator `window²`.
pub fn ttfs_fc_exact(code: &TtfsCode, fc_weights: &FixedTensor, scales: &ScaleTable) -> Result<ExactScores> {
    let features = code.shape().len();
    let &[classes, f] = fc_weights.shape() else {
        return Err(CoreError::Config(format!("fc weights must be rank 2, got {:?}", fc_weights.shape())));
    };
    if f != features {
        return Err(CoreError::Config(format!("fc expects {f} features, code has {features}")));
    }
    if scales.len() != code.slot_count() {
        return Err(CoreError::Config(format!(
            "scale table has {} slots, code has {}",
            scales.len(),
            code.slot_count()
        )));
    }
    let w = fc_weights.values();
    let mut scores = vec![Ratio::from_integer(0i64); classes];
    for t in 0..code.slot_count() {
        let scale = scales.scale(t);
        let slot = code.slot(t);
        for (j, score) in scores.iter_mut().enumerate() {
            let dot: i64 = (0..features)
                .filter(|&i| slot.get_flat(i))
                .map(|i| w[j * features + i] as i64)
                .sum();
            *score += scale * dot;
        }
    }
    let den = scales.window_sq().max(1);
    let numerators = scores
        .into_iter()
        .map(|r| {
            let v = r * den;
            debug_assert!(v.is_integer());
            v.to_integer()
        })
        .collect();
    Ok(ExactScores {
        numerators,
        denominator: den,
    })
}
