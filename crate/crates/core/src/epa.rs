// SPDX-License-Identifier: Apache-2.0

//! Elastic PE array.
//!
//! Cycle model: one event per PE per cycle plus a fixed overhead per window.
//! A PE fires as soon as its weight set is in the W-FIFO and its S-FIFO lane
//! holds a window; there is no central sequencer. Mapping is output
//! stationary: pass `t` assigns position `t·P + p` to PE `p`, and each PE
//! walks the output channels of that position in order. Windows without
//! events are never dispatched.

use serde::{Deserialize, Serialize};

use crate::error::{CoreError, Result};
use crate::fifo::ElasticFifo;
use crate::fixed::SumTensor;
use crate::graph::ConvSpec;
use crate::lif::{LifParams, LifState};
use crate::pipesda::{run_pipelined, ConvGeometry, PipelineStats, Tap};
use crate::spike::{Shape3, SpikeTensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EpaConfig {
    pub pe_rows: usize,
    pub pe_cols: usize,
    /// Windows per PE lane.
    pub s_fifo_depth: usize,
    /// Weight sets resident at once.
    pub w_fifo_depth: usize,
    /// Entries per SDU event FIFO before a spill.
    pub sdu_capacity: usize,
    /// Depth of the queues between PipeSDA stages.
    pub sda_queue_depth: usize,
    pub overhead_cycles: u64,
    /// Cycles the WMU needs per weight set.
    pub wmu_latency: u64,
    pub clock_hz: f64,
}

impl Default for EpaConfig {
    fn default() -> Self {
        Self {
            pe_rows: 8,
            pe_cols: 8,
            s_fifo_depth: 4,
            w_fifo_depth: 4,
            sdu_capacity: 64,
            sda_queue_depth: 4,
            overhead_cycles: 2,
            wmu_latency: 0,
            clock_hz: 2.0e8,
        }
    }
}

impl EpaConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("pe_rows", self.pe_rows),
            ("pe_cols", self.pe_cols),
            ("s_fifo_depth", self.s_fifo_depth),
            ("w_fifo_depth", self.w_fifo_depth),
            ("sdu_capacity", self.sdu_capacity),
            ("sda_queue_depth", self.sda_queue_depth),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(CoreError::Config(format!("{name} must be at least 1")));
            }
        }
        if !(self.clock_hz.is_finite() && self.clock_hz > 0.0) {
            return Err(CoreError::Config(format!("clock_hz must be positive, got {}", self.clock_hz)));
        }
        Ok(())
    }

    pub fn pes(&self) -> usize {
        self.pe_rows * self.pe_cols
    }
}

/// One entry of a PE event FIFO.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum PeEntry {
    Synapse(Tap),
    /// Shortcut spike at the neuron's own coordinate, weight one unit.
    Shortcut,
}

/// Where a PE fetches weights from.
#[derive(Clone, Copy, Debug)]
pub enum Synapses<'a> {
    Conv(&'a ConvSpec),
    /// Depthwise window sum: every spike of channel `c` in the window adds `weight` to neuron `c`.
    Pool { window: usize, weight: i64 },
}

#[derive(Clone, Copy, Debug)]
pub struct WeightBank<'a> {
    synapses: Synapses<'a>,
    shortcut: i64,
}

impl<'a> WeightBank<'a> {
    pub fn new(synapses: Synapses<'a>, shortcut: i64) -> Self {
        Self { synapses, shortcut }
    }

    pub fn weight(&self, oc: usize, entry: PeEntry) -> Result<i64> {
        let missing = |t: Tap| CoreError::MissingWeight {
            oc,
            ic: t.ic,
            ki: t.ki,
            kj: t.kj,
        };
        match (entry, self.synapses) {
            (PeEntry::Shortcut, _) => Ok(self.shortcut),
            (PeEntry::Synapse(t), Synapses::Conv(conv)) => {
                let k = conv.kernel;
                if oc >= conv.out_channels || t.ic >= conv.in_channels || t.ki >= k || t.kj >= k {
                    return Err(missing(t));
                }
                Ok(conv.weight(oc, t.ic, t.ki, t.kj) as i64)
            }
            (PeEntry::Synapse(t), Synapses::Pool { window, weight }) => {
                if t.ic != oc || t.ki >= window || t.kj >= window {
                    return Err(missing(t));
                }
                Ok(weight)
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Neuron {
    pub oc: usize,
    pub oy: usize,
    pub ox: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct PeState {
    pub neuron: Option<Neuron>,
    /// Entry count of the window currently dispatched.
    pub vld_cnt: usize,
    /// Cycles left on the current window.
    pub busy: u64,
    pub lif: LifState,
    synaptic: i64,
    shortcut: i64,
}

impl PeState {
    pub fn assign(&mut self, neuron: Neuron) {
        *self = Self {
            neuron: Some(neuron),
            ..Self::default()
        };
    }

    /// Synaptic contribution accumulated so far (shortcut excluded).
    pub fn synaptic_sum(&self) -> i64 {
        self.synaptic
    }

    pub fn shortcut_sum(&self) -> i64 {
        self.shortcut
    }

    /// Integrate everything collected for the neuron and evaluate the LIF unit.
    pub fn finish(&mut self, params: Option<&LifParams>) -> bool {
        let Some(p) = params else { return false };
        self.lif.decay(p);
        self.lif.integrate(self.synaptic + self.shortcut);
        self.lif.fire(p)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StallCause {
    WFifoEmpty,
    SFifoEmpty,
    Both,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Dispatch {
    Fire,
    Stall(StallCause),
}

/// Fire iff both FIFOs have data; on fire the PE is busy for `vld_cnt + overhead` cycles.
pub fn dispatch(pe: &mut PeState, weights_ready: bool, window: Option<usize>, overhead: u64) -> Dispatch {
    match (weights_ready, window) {
        (true, Some(n)) => {
            pe.vld_cnt = n;
            pe.busy = n as u64 + overhead;
            Dispatch::Fire
        }
        (true, None) => Dispatch::Stall(StallCause::SFifoEmpty),
        (false, Some(_)) => Dispatch::Stall(StallCause::WFifoEmpty),
        (false, None) => Dispatch::Stall(StallCause::Both),
    }
}

pub fn pe_consume_event(pe: &mut PeState, entry: PeEntry, bank: &WeightBank) -> Result<()> {
    let n = pe
        .neuron
        .ok_or_else(|| CoreError::Contract("event delivered to an unassigned PE".into()))?;
    let w = bank.weight(n.oc, entry)?;
    match entry {
        PeEntry::Synapse(_) => pe.synaptic += w,
        PeEntry::Shortcut => pe.shortcut += w,
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct CycleStats {
    pub sda_cycles: u64,
    pub epa_cycles: u64,
    pub pe_count: u64,
    pub compute_cycles: u64,
    pub stall_w_empty: u64,
    pub stall_s_empty: u64,
    pub stall_both: u64,
    pub idle_cycles: u64,
    /// Producer-side stalls: SDU spills, full S-FIFO lanes, full W-FIFO.
    pub sdu_spills: u64,
    pub s_fifo_backpressure: u64,
    pub w_fifo_backpressure: u64,
    pub windows: u64,
    /// Σ vld_cnt over dispatched windows.
    pub dispatched_events: u64,
    pub events_consumed: u64,
    pub spikes_emitted: u64,
    pub fifo_conserved: bool,
}

impl CycleStats {
    pub fn total_cycles(&self) -> u64 {
        self.sda_cycles + self.epa_cycles
    }

    pub fn stall_cycles(&self) -> u64 {
        self.stall_w_empty + self.stall_s_empty + self.stall_both
    }

    pub fn backpressure(&self) -> u64 {
        self.sdu_spills + self.s_fifo_backpressure + self.w_fifo_backpressure
    }

    /// Every PE-cycle of the EPA phase is compute, stall or idle.
    pub fn pe_cycles_balance(&self) -> bool {
        self.compute_cycles + self.stall_cycles() + self.idle_cycles == self.epa_cycles * self.pe_count
    }

    pub fn events_balance(&self) -> bool {
        self.events_consumed == self.dispatched_events
    }

    /// Accumulate a later layer into a run total.
    pub fn absorb(&mut self, other: &CycleStats) {
        let first = self.pe_count == 0 && self.epa_cycles == 0 && self.sda_cycles == 0 && self.windows == 0;
        self.sda_cycles += other.sda_cycles;
        self.epa_cycles += other.epa_cycles;
        self.compute_cycles += other.compute_cycles;
        self.stall_w_empty += other.stall_w_empty;
        self.stall_s_empty += other.stall_s_empty;
        self.stall_both += other.stall_both;
        self.idle_cycles += other.idle_cycles;
        self.sdu_spills += other.sdu_spills;
        self.s_fifo_backpressure += other.s_fifo_backpressure;
        self.w_fifo_backpressure += other.w_fifo_backpressure;
        self.windows += other.windows;
        self.dispatched_events += other.dispatched_events;
        self.events_consumed += other.events_consumed;
        self.spikes_emitted += other.spikes_emitted;
        self.pe_count = self.pe_count.max(other.pe_count);
        self.fifo_conserved = (first || self.fifo_conserved) && other.fifo_conserved;
    }
}

/// Seconds for the cycles in `stats` at the configured clock.
pub fn layer_latency(stats: &CycleStats, cfg: &EpaConfig) -> f64 {
    stats.total_cycles() as f64 / cfg.clock_hz
}

/// One PE-array job: a synaptic layer, optional shortcut maps and the LIF it feeds.
#[derive(Clone, Copy, Debug)]
pub struct LayerJob<'a> {
    pub input: &'a SpikeTensor,
    pub synapses: Synapses<'a>,
    /// Maps with the output's shape; each spike adds `unit` to the neuron at its coordinate.
    pub shortcuts: &'a [&'a SpikeTensor],
    pub unit: i64,
    /// `None` leaves the sums unfired.
    pub lif: Option<&'a LifParams>,
}

/// Record on the write-back path, in completion order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum WritebackRecord {
    Spike { channel: usize, token: usize },
    /// Every neuron at these tokens has been written back.
    TokensDone(Vec<usize>),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayerRun {
    pub spikes: SpikeTensor,
    /// Synaptic sums per neuron, shortcut excluded.
    pub synaptic: SumTensor,
    /// Pre-LIF sums, shortcut included.
    pub sums: SumTensor,
    pub stats: CycleStats,
    pub sda: PipelineStats,
    pub log: Vec<WritebackRecord>,
    pub overflows: u64,
}

struct Task {
    set: usize,
    neuron: Neuron,
    chunks: Vec<Vec<PeEntry>>,
}

struct Chunk {
    entries: Vec<PeEntry>,
    last: bool,
}

fn geometry(job: &LayerJob) -> Result<(ConvGeometry, usize)> {
    match job.synapses {
        Synapses::Conv(conv) => {
            if conv.in_channels != job.input.channels() {
                return Err(CoreError::Config(format!(
                    "conv expects {} input channels, got {}",
                    conv.in_channels,
                    job.input.shape()
                )));
            }
            Ok((ConvGeometry::for_conv(conv, job.input.shape())?, conv.out_channels))
        }
        Synapses::Pool { window, .. } => Ok((ConvGeometry::for_pool(job.input.shape(), window)?, job.input.channels())),
    }
}

/// Run one layer through PipeSDA and the PE array.
pub fn run_layer_eventdriven(job: &LayerJob, cfg: &EpaConfig) -> Result<LayerRun> {
    cfg.validate()?;
    let (geom, oc_n) = geometry(job)?;
    let out_shape = Shape3::new(oc_n, geom.out_h, geom.out_w);
    for s in job.shortcuts {
        if s.shape() != out_shape {
            return Err(CoreError::Config(format!(
                "shortcut {} does not match layer output {out_shape}",
                s.shape()
            )));
        }
    }
    let (grid, sda) = run_pipelined(job.input, geom, cfg.sdu_capacity, cfg.sda_queue_depth)?;
    let bank = WeightBank::new(job.synapses, job.unit);

    let pes = cfg.pes();
    let positions = geom.positions();
    let tiles = positions.div_ceil(pes);
    let tokens = out_shape.tokens();

    // Task lists per PE, and one weight set per (tile, oc) that has work.
    let mut set_ids: Vec<Option<usize>> = vec![None; tiles * oc_n];
    let mut set_pending: Vec<u64> = Vec::new();
    let mut set_tile: Vec<usize> = Vec::new();
    let mut tile_pending = vec![0u64; tiles];
    let mut tasks: Vec<Vec<Task>> = (0..pes).map(|_| Vec::new()).collect();
    for (tile, pending) in tile_pending.iter_mut().enumerate() {
        for oc in 0..oc_n {
            for (p, pe_tasks) in tasks.iter_mut().enumerate() {
                let pos = tile * pes + p;
                if pos >= positions {
                    break;
                }
                let (oy, ox) = (pos / geom.out_w, pos % geom.out_w);
                let (_, window) = grid.read_window(oy, ox)?;
                let mut entries: Vec<PeEntry> = match job.synapses {
                    Synapses::Conv(_) => window.iter().map(|e| PeEntry::Synapse(e.tap)).collect(),
                    Synapses::Pool { .. } => window
                        .iter()
                        .filter(|e| e.tap.ic == oc)
                        .map(|e| PeEntry::Synapse(e.tap))
                        .collect(),
                };
                for s in job.shortcuts {
                    if s.get(oc, oy, ox) {
                        entries.push(PeEntry::Shortcut);
                    }
                }
                if entries.is_empty() {
                    continue;
                }
                let key = tile * oc_n + oc;
                let set = *set_ids[key].get_or_insert_with(|| {
                    set_pending.push(0);
                    set_tile.push(tile);
                    set_pending.len() - 1
                });
                set_pending[set] += 1;
                *pending += 1;
                pe_tasks.push(Task {
                    set,
                    neuron: Neuron { oc, oy, ox },
                    chunks: entries.chunks(cfg.sdu_capacity).map(<[PeEntry]>::to_vec).collect(),
                });
            }
        }
    }
    let n_sets = set_pending.len();

    let mut wfifo: ElasticFifo<usize> = ElasticFifo::new(cfg.w_fifo_depth);
    let mut next_set = 0usize;
    let mut wmu_wait = cfg.wmu_latency;
    let mut lanes: Vec<ElasticFifo<Chunk>> = (0..pes).map(|_| ElasticFifo::new(cfg.s_fifo_depth)).collect();
    let mut feed: Vec<(usize, usize)> = vec![(0, 0); pes];
    let mut cursor = vec![0usize; pes];
    let mut pe_state: Vec<PeState> = vec![PeState::default(); pes];
    let mut in_flight: Vec<Option<bool>> = vec![None; pes];

    let mut stats = CycleStats {
        sda_cycles: sda.cycles,
        pe_count: pes as u64,
        sdu_spills: grid.backpressure_stalls(),
        ..CycleStats::default()
    };
    let mut spikes = SpikeTensor::zeros(out_shape);
    let mut synaptic = SumTensor::zeros(oc_n, geom.out_h, geom.out_w);
    let mut sums = SumTensor::zeros(oc_n, geom.out_h, geom.out_w);
    let mut log = Vec::new();
    let mut tile_marked = vec![false; tiles];
    let mut overflows = 0u64;
    let mut quiet = 0u64;
    let quiet_limit = 1_000 + cfg.wmu_latency + cfg.overhead_cycles + cfg.sdu_capacity as u64;

    let done = |cursor: &[usize], flight: &[Option<bool>], next_set: usize, wfifo: &ElasticFifo<usize>| {
        next_set == n_sets
            && wfifo.is_empty()
            && flight.iter().all(Option::is_none)
            && cursor.iter().zip(&tasks).all(|(&c, t)| c == t.len())
    };

    while !done(&cursor, &in_flight, next_set, &wfifo) {
        stats.epa_cycles += 1;
        let mut progress = false;

        // WMU: one weight set per cycle once its latency has elapsed.
        if next_set < n_sets {
            if wmu_wait > 0 {
                wmu_wait -= 1;
                progress = true;
            } else if wfifo.try_push(next_set).is_ok() {
                next_set += 1;
                wmu_wait = cfg.wmu_latency;
                progress = true;
            }
        }

        // SDU read-out: one window chunk per lane per cycle.
        for p in 0..pes {
            let (t, c) = feed[p];
            let Some(task) = tasks[p].get(t) else { continue };
            let chunk = Chunk {
                entries: task.chunks[c].clone(),
                last: c + 1 == task.chunks.len(),
            };
            if lanes[p].try_push(chunk).is_ok() {
                feed[p] = if c + 1 == task.chunks.len() { (t + 1, 0) } else { (t, c + 1) };
                progress = true;
            }
        }

        // PEs.
        for p in 0..pes {
            let pe = &mut pe_state[p];
            if in_flight[p].is_none() {
                let Some(task) = tasks[p].get(cursor[p]) else {
                    stats.idle_cycles += 1;
                    continue;
                };
                if pe.neuron != Some(task.neuron) {
                    pe.assign(task.neuron);
                }
                let head = wfifo.front().copied();
                let ready = head.is_some_and(|h| task.set >= h && task.set < h + wfifo.occupancy());
                match dispatch(pe, ready, lanes[p].front().map(|c| c.entries.len()), cfg.overhead_cycles) {
                    Dispatch::Stall(cause) => {
                        match cause {
                            StallCause::WFifoEmpty => stats.stall_w_empty += 1,
                            StallCause::SFifoEmpty => stats.stall_s_empty += 1,
                            StallCause::Both => stats.stall_both += 1,
                        }
                        continue;
                    }
                    Dispatch::Fire => {
                        let chunk = lanes[p].pop().expect("lane checked non-empty");
                        for &e in &chunk.entries {
                            pe_consume_event(pe, e, &bank)?;
                        }
                        stats.windows += 1;
                        stats.dispatched_events += pe.vld_cnt as u64;
                        stats.events_consumed += chunk.entries.len() as u64;
                        in_flight[p] = Some(chunk.last);
                    }
                }
            }
            progress = true;
            stats.compute_cycles += 1;
            pe.busy -= 1;
            if pe.busy > 0 {
                continue;
            }
            let last = in_flight[p].take().expect("window in flight");
            if !last {
                continue;
            }
            let task = &tasks[p][cursor[p]];
            let n = task.neuron;
            synaptic.set(n.oc, n.oy, n.ox, pe.synaptic_sum());
            sums.set(n.oc, n.oy, n.ox, pe.synaptic_sum() + pe.shortcut_sum());
            let fired = pe.finish(job.lif);
            overflows += pe.lif.overflows() as u64;
            if fired {
                let token = n.oy * geom.out_w + n.ox;
                spikes.set(n.oc, n.oy, n.ox, true);
                stats.spikes_emitted += 1;
                log.push(WritebackRecord::Spike { channel: n.oc, token });
            }
            set_pending[task.set] -= 1;
            let tile = set_tile[task.set];
            tile_pending[tile] -= 1;
            if tile_pending[tile] == 0 {
                tile_marked[tile] = true;
                log.push(WritebackRecord::TokensDone(tile_tokens(tile, pes, tokens)));
            }
            cursor[p] += 1;
        }

        // Retire finished weight sets from the head.
        while wfifo.front().is_some_and(|&s| set_pending[s] == 0) {
            wfifo.pop();
            progress = true;
        }

        quiet = if progress { 0 } else { quiet + 1 };
        if quiet > quiet_limit {
            return Err(CoreError::Livelock(stats.epa_cycles));
        }
    }

    for (tile, marked) in tile_marked.iter().enumerate() {
        if !marked {
            log.push(WritebackRecord::TokensDone(tile_tokens(tile, pes, tokens)));
        }
    }
    stats.w_fifo_backpressure = wfifo.counters().stalls;
    stats.s_fifo_backpressure = lanes.iter().map(|l| l.counters().stalls).sum();
    stats.fifo_conserved = sda.conserved
        && wfifo.conserves()
        && wfifo.is_empty()
        && lanes.iter().all(|l| l.conserves() && l.is_empty());
    Ok(LayerRun {
        spikes,
        synaptic,
        sums,
        stats,
        sda,
        log,
        overflows,
    })
}

fn tile_tokens(tile: usize, pes: usize, tokens: usize) -> Vec<usize> {
    (tile * pes..((tile + 1) * pes).min(tokens)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixed::{FixedPointFormat, FixedTensor};
    use crate::lif::ResetMode;
    use crate::reference::{conv_layer_ref, lif_map};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn conv(rng: &mut ChaCha8Rng, ic: usize, oc: usize, k: usize, s: usize, p: usize) -> ConvSpec {
        let w = (0..oc * ic * k * k).map(|_| rng.gen_range(-40..=60)).collect();
        ConvSpec::new(ic, oc, k, s, p, FixedTensor::new(vec![oc, ic, k, k], FixedPointFormat::default(), w).unwrap()).unwrap()
    }

    fn lif() -> LifParams {
        LifParams::new(0.5, 30, ResetMode::HardZero).unwrap()
    }

    fn job<'a>(input: &'a SpikeTensor, c: &'a ConvSpec, lif: &'a LifParams) -> LayerJob<'a> {
        LayerJob {
            input,
            synapses: Synapses::Conv(c),
            shortcuts: &[],
            unit: 16,
            lif: Some(lif),
        }
    }

    #[test]
    fn dispatch_rules() {
        let mut pe = PeState::default();
        assert_eq!(dispatch(&mut pe, false, None, 2), Dispatch::Stall(StallCause::Both));
        assert_eq!(dispatch(&mut pe, true, None, 2), Dispatch::Stall(StallCause::SFifoEmpty));
        assert_eq!(dispatch(&mut pe, false, Some(3), 2), Dispatch::Stall(StallCause::WFifoEmpty));
        assert_eq!(dispatch(&mut pe, true, Some(5), 2), Dispatch::Fire);
        assert_eq!((pe.vld_cnt, pe.busy), (5, 7));
    }

    #[test]
    fn consume_adds_weights() {
        let w = FixedTensor::new(vec![2, 1, 1, 1], FixedPointFormat::default(), vec![0, 9]).unwrap();
        let c = ConvSpec::new(1, 2, 1, 1, 0, w).unwrap();
        let bank = WeightBank::new(Synapses::Conv(&c), 16);
        let tap = Tap { ic: 0, ki: 0, kj: 0 };
        let mut pe = PeState::default();
        pe.assign(Neuron { oc: 0, oy: 0, ox: 0 });
        pe_consume_event(&mut pe, PeEntry::Synapse(tap), &bank).unwrap();
        assert_eq!(pe.synaptic_sum(), 0);
        pe.assign(Neuron { oc: 1, oy: 0, ox: 0 });
        pe_consume_event(&mut pe, PeEntry::Synapse(tap), &bank).unwrap();
        pe_consume_event(&mut pe, PeEntry::Synapse(tap), &bank).unwrap();
        pe_consume_event(&mut pe, PeEntry::Shortcut, &bank).unwrap();
        assert_eq!((pe.synaptic_sum(), pe.shortcut_sum()), (18, 16));
        let bad = PeEntry::Synapse(Tap { ic: 3, ki: 0, kj: 0 });
        assert!(matches!(pe_consume_event(&mut pe, bad, &bank), Err(CoreError::MissingWeight { ic: 3, .. })));
    }

    #[test]
    fn zero_input_is_silent() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let c = conv(&mut rng, 3, 4, 3, 1, 1);
        let x = SpikeTensor::zeros(Shape3::new(3, 6, 6));
        let l = lif();
        let r = run_layer_eventdriven(&job(&x, &c, &l), &EpaConfig::default()).unwrap();
        assert_eq!(r.stats.compute_cycles, 0);
        assert_eq!(r.stats.events_consumed, 0);
        assert_eq!(r.stats.total_cycles(), 0);
        assert_eq!(r.spikes.total_spikes(), 0);
    }

    #[test]
    fn single_interior_spike_consumes_its_incidence() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let c = conv(&mut rng, 2, 5, 3, 1, 1);
        let mut x = SpikeTensor::zeros(Shape3::new(2, 7, 7));
        x.set(1, 3, 4, true);
        let l = lif();
        let r = run_layer_eventdriven(&job(&x, &c, &l), &EpaConfig::default()).unwrap();
        assert_eq!(r.stats.events_consumed, 9 * 5);
        assert_eq!(r.stats.windows, 9 * 5);
        assert_eq!(r.stats.compute_cycles, 9 * 5 * 3);
        assert_eq!(r.stats.sda_cycles, 3);
    }

    #[test]
    fn full_window_membrane_matches_dense_neuron() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let c = conv(&mut rng, 3, 2, 3, 1, 0);
        let x = SpikeTensor::ones(Shape3::new(3, 3, 3));
        let l = lif();
        let r = run_layer_eventdriven(&job(&x, &c, &l), &EpaConfig::default()).unwrap();
        let dense = conv_layer_ref(&x, &c).unwrap();
        assert_eq!(r.sums, dense);
    }

    #[test]
    fn latency_arithmetic() {
        let stats = CycleStats {
            epa_cycles: 2_000_000,
            ..CycleStats::default()
        };
        assert!((layer_latency(&stats, &EpaConfig::default()) - 0.01).abs() < 1e-15);
    }

    #[test]
    fn tiny_fifos_and_slow_wmu_still_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let c = conv(&mut rng, 4, 6, 3, 1, 1);
        let x = SpikeTensor::random(Shape3::new(4, 9, 9), 0.4, &mut rng);
        let l = lif();
        let cfg = EpaConfig {
            pe_rows: 2,
            pe_cols: 3,
            s_fifo_depth: 1,
            w_fifo_depth: 1,
            sdu_capacity: 5,
            sda_queue_depth: 1,
            overhead_cycles: 0,
            wmu_latency: 7,
            clock_hz: 1e6,
        };
        let r = run_layer_eventdriven(&job(&x, &c, &l), &cfg).unwrap();
        let (golden, _) = lif_map(&conv_layer_ref(&x, &c).unwrap(), &l);
        assert_eq!(r.spikes, golden);
        assert!(r.stats.pe_cycles_balance());
        assert!(r.stats.fifo_conserved);
        assert!(r.stats.stall_w_empty > 0);
        assert!(r.stats.backpressure() > 0);
    }

    #[test]
    fn pool_job_counts_own_channel_only() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = SpikeTensor::random(Shape3::new(3, 4, 4), 0.5, &mut rng);
        let l = lif();
        let j = LayerJob {
            input: &x,
            synapses: Synapses::Pool { window: 2, weight: 4 },
            shortcuts: &[],
            unit: 16,
            lif: Some(&l),
        };
        let r = run_layer_eventdriven(&j, &EpaConfig::default()).unwrap();
        let pooled = crate::reference::avg_pool_ref(&x, 2).unwrap();
        assert_eq!(r.sums, crate::reference::pooled_sums(&pooled, 16));
        assert_eq!(r.stats.events_consumed, x.total_spikes());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]
        #[test]
        fn matches_dense_reference(
            seed in any::<u64>(), ic in 1usize..5, oc in 1usize..5, h in 4usize..10, w in 4usize..10,
            k in prop::sample::select(vec![1usize, 3]), s in 1usize..3, p in 0usize..2, d in 0.0f64..1.0,
            rows in 1usize..4, depth in 1usize..3, cap in 1usize..9,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let c = conv(&mut rng, ic, oc, k, s, p);
            let x = SpikeTensor::random(Shape3::new(ic, h, w), d, &mut rng);
            let l = lif();
            let cfg = EpaConfig { pe_rows: rows, pe_cols: 2, s_fifo_depth: depth, w_fifo_depth: depth, sdu_capacity: cap, ..EpaConfig::default() };
            let r = run_layer_eventdriven(&job(&x, &c, &l), &cfg).unwrap();
            let dense = conv_layer_ref(&x, &c).unwrap();
            let (golden, _) = lif_map(&dense, &l);
            prop_assert_eq!(&r.sums, &dense);
            prop_assert_eq!(&r.spikes, &golden);
            prop_assert!(r.stats.pe_cycles_balance());
            prop_assert!(r.stats.events_balance());
            prop_assert!(r.stats.fifo_conserved);
            prop_assert_eq!(r.stats.compute_cycles, r.stats.events_consumed + r.stats.windows * cfg.overhead_cycles);
            let again = run_layer_eventdriven(&job(&x, &c, &l), &cfg).unwrap();
            prop_assert_eq!(again.stats, r.stats);
        }

        #[test]
        fn disjoint_spikes_add_events(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let c = conv(&mut rng, 2, 3, 3, 1, 1);
            let shape = Shape3::new(2, 12, 12);
            let a = SpikeTensor::from_fn(shape, |_, y, x| y < 5 && x < 5 && rng.gen_bool(0.4));
            let b = SpikeTensor::from_fn(shape, |_, y, x| y > 6 && x > 6 && rng.gen_bool(0.4));
            let both = a.or(&b).unwrap();
            let l = lif();
            let cfg = EpaConfig::default();
            let ev = |m: &SpikeTensor| run_layer_eventdriven(&job(m, &c, &l), &cfg).unwrap().stats.events_consumed;
            prop_assert_eq!(ev(&both), ev(&a) + ev(&b));
        }
    }
}
