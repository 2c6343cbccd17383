// SPDX-License-Identifier: Apache-2.0

//! W2TTFS classifier core: a TTFS filter that counts spikes per pooling
//! window, and an FCU that scales by repeating a unit addition instead of
//! multiplying.
//!
//! For a window of `w²` (a power of two) the unit weight is `w >> log2(w²)`
//! and a window with `vld_cnt` spikes adds it `vld_cnt` times. The shift
//! floors, so each class score lands within `Σ vld_cnt` post-shift LSBs of
//! the exact value, and exactly on it when every weight is a multiple of
//! `w²`.

use crate::error::{CoreError, Result};
use crate::graph::FcSpec;
use crate::reference::{argmax, ExactScores};
use crate::spike::SpikeTensor;

/// FCU accumulators saturate at this width.
pub const FCU_ACC_BITS: u32 = 32;
const FCU_MAX: i64 = (1 << (FCU_ACC_BITS - 1)) - 1;
const FCU_MIN: i64 = -(1 << (FCU_ACC_BITS - 1));

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TtfsTuple {
    pub channel: usize,
    /// Pooled location, row-major.
    pub location: usize,
    pub vld_cnt: u32,
}

/// Count window spikes channel by channel, scanning each channel row by row
/// with one running counter per window column.
pub fn ttfs_filter(map: &SpikeTensor, window: usize) -> Result<Vec<TtfsTuple>> {
    let s = map.shape();
    if window == 0 || !s.height.is_multiple_of(window) || !s.width.is_multiple_of(window) {
        return Err(CoreError::Contract(format!("window {window} does not divide {s}")));
    }
    let (oh, ow) = (s.height / window, s.width / window);
    let mut out = Vec::with_capacity(s.channels * oh * ow);
    let mut counters = vec![0u32; ow];
    for c in 0..s.channels {
        for y in 0..s.height {
            for x in 0..s.width {
                counters[x / window] += map.get(c, y, x) as u32;
            }
            if (y + 1) % window == 0 {
                let oy = y / window;
                for (ox, n) in counters.iter_mut().enumerate() {
                    out.push(TtfsTuple {
                        channel: c,
                        location: oy * ow + ox,
                        vld_cnt: *n,
                    });
                    *n = 0;
                }
            }
        }
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FcuMode {
    /// Unit weight is `w >> shift`, `shift = log2(window²)`.
    Shift(u32),
    /// `window²` is not a power of two: accumulate raw weights over the exact denominator.
    Exact,
}

/// Instruction mix of an FCU run.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct OpCounters {
    pub adds: u64,
    pub shifts: u64,
    pub compares: u64,
    pub multiplies: u64,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FcuState {
    mode: FcuMode,
    window_sq: i64,
    acc: Vec<i64>,
    /// Σ vld_cnt over consumed tuples.
    consumed: u64,
    add_cycles: u64,
    tuples: u64,
    saturations: u64,
    ops: OpCounters,
}

impl FcuState {
    pub fn new(classes: usize, window: usize) -> Self {
        let window_sq = (window * window) as i64;
        let mode = if window_sq > 0 && (window_sq as u64).is_power_of_two() {
            FcuMode::Shift(window_sq.trailing_zeros())
        } else {
            FcuMode::Exact
        };
        Self {
            mode,
            window_sq,
            acc: vec![0; classes],
            consumed: 0,
            add_cycles: 0,
            tuples: 0,
            saturations: 0,
            ops: OpCounters::default(),
        }
    }

    pub fn mode(&self) -> FcuMode {
        self.mode
    }

    pub fn accumulators(&self) -> &[i64] {
        &self.acc
    }

    /// Hardware-infeasibility note for the exact fallback.
    pub fn warning(&self) -> Option<String> {
        match self.mode {
            FcuMode::Shift(_) => None,
            FcuMode::Exact => Some(format!(
                "window area {} is not a power of two; classifier used exact rational fallback",
                self.window_sq
            )),
        }
    }

    /// Per-class bound on `|score − exact|`, in post-shift LSB.
    pub fn truncation_bound(&self) -> u64 {
        match self.mode {
            FcuMode::Shift(0) | FcuMode::Exact => 0,
            FcuMode::Shift(_) => self.consumed,
        }
    }

    pub fn events(&self) -> u64 {
        self.consumed
    }

    pub fn add_cycles(&self) -> u64 {
        self.add_cycles
    }

    pub fn tuples(&self) -> u64 {
        self.tuples
    }

    pub fn saturations(&self) -> u64 {
        self.saturations
    }

    pub fn ops(&self) -> OpCounters {
        self.ops
    }

    pub fn scores(&self) -> ExactScores {
        ExactScores {
            numerators: self.acc.clone(),
            denominator: match self.mode {
                FcuMode::Shift(_) => 1,
                FcuMode::Exact => self.window_sq,
            },
        }
    }
}

/// Fold one filter tuple into the class accumulators.
pub fn fcu_accumulate(state: &mut FcuState, tuple: TtfsTuple, fc: &FcSpec, features_per_channel: usize) -> Result<()> {
    if fc.classes != state.acc.len() {
        return Err(CoreError::Config(format!(
            "fcu has {} classes, weights have {}",
            state.acc.len(),
            fc.classes
        )));
    }
    let feature = tuple.channel * features_per_channel + tuple.location;
    if tuple.location >= features_per_channel || feature >= fc.in_features {
        return Err(CoreError::Contract(format!(
            "tuple ({}, {}) outside {} fc features",
            tuple.channel, tuple.location, fc.in_features
        )));
    }
    state.tuples += 1;
    state.ops.compares += 1;
    if tuple.vld_cnt == 0 {
        return Ok(());
    }
    let n = tuple.vld_cnt as u64;
    for j in 0..fc.classes {
        let raw = fc.weight(j, feature) as i64;
        let unit = match state.mode {
            FcuMode::Shift(s) => {
                state.ops.shifts += 1;
                raw >> s
            }
            FcuMode::Exact => raw,
        };
        // vld_cnt repeated additions of the unit weight.
        let v = state.acc[j] + unit * tuple.vld_cnt as i64;
        state.ops.adds += n;
        state.acc[j] = if v > FCU_MAX {
            state.saturations += 1;
            FCU_MAX
        } else if v < FCU_MIN {
            state.saturations += 1;
            FCU_MIN
        } else {
            v
        };
    }
    state.consumed += n;
    state.add_cycles += n;
    Ok(())
}

/// Argmax over the accumulators, lowest index on ties.
pub fn classify(state: &mut FcuState) -> Option<usize> {
    state.ops.compares += state.acc.len().saturating_sub(1) as u64;
    argmax(&state.acc)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct WtfcRun {
    pub scores: ExactScores,
    pub class: Option<usize>,
    pub bound: u64,
    pub ops: OpCounters,
    /// Σ vld_cnt × classes: one unit addition per (event, class).
    pub synops: u64,
    pub tuples: u64,
    /// Unit additions per class; all classes add in parallel.
    pub add_cycles: u64,
    pub saturations: u64,
    pub warning: Option<String>,
}

/// Filter `map` with `window` and classify. `window == 1` feeds spikes directly.
pub fn run_wtfc(map: &SpikeTensor, window: usize, fc: &FcSpec) -> Result<WtfcRun> {
    let tuples = ttfs_filter(map, window)?;
    let per_channel = (map.height() / window) * (map.width() / window);
    if per_channel * map.channels() != fc.in_features {
        return Err(CoreError::Config(format!(
            "fc expects {} features, pooled {} gives {}",
            fc.in_features,
            map.shape(),
            per_channel * map.channels()
        )));
    }
    let mut state = FcuState::new(fc.classes, window);
    for t in tuples {
        fcu_accumulate(&mut state, t, fc, per_channel)?;
    }
    let class = classify(&mut state);
    Ok(WtfcRun {
        scores: state.scores(),
        class,
        bound: state.truncation_bound(),
        ops: state.ops(),
        synops: state.events() * fc.classes as u64,
        tuples: state.tuples(),
        add_cycles: state.add_cycles(),
        saturations: state.saturations(),
        warning: state.warning(),
    })
}

/// `|fcu − exact| ≤ bound` for every class, compared over a common denominator.
pub fn within_bound(fcu: &ExactScores, exact: &ExactScores, bound: u64) -> bool {
    fcu.len() == exact.len()
        && fcu.numerators.iter().zip(&exact.numerators).all(|(&a, &b)| {
            let lhs = (a as i128 * exact.denominator as i128 - b as i128 * fcu.denominator as i128).abs();
            lhs <= bound as i128 * fcu.denominator as i128 * exact.denominator as i128
        })
}
