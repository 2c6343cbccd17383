// SPDX-License-Identifier: Apache-2.0

//! Pipelined sparse detection: turns an input spike map into per-output
//! event FIFOs.
//!
//! Three stages: index generation (IG) lists every spike, CP generation finds
//! the anchor output of the spike's footprint, and CP mapping diffuses the
//! event from the anchor to every output unit (SDU) whose receptive field
//! covers the spike. The footprint is normative; the anchor is its lowest
//! corner `(⌈(y+p−K+1)/s⌉, ⌈(x+p−K+1)/s⌉)` and may be negative. Units past the
//! real output grid form a virtual border that absorbs writes without ever
//! being read.

use crate::error::{CoreError, Result};
use crate::fifo::{ElasticFifo, FifoCounters};
use crate::graph::ConvSpec;
use crate::spike::{Shape3, SpikeTensor};

/// Sliding-window geometry of one layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub input: Shape3,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeometry {
    pub fn new(input: Shape3, kernel: usize, stride: usize, padding: usize) -> Result<Self> {
        if kernel == 0 || stride == 0 {
            return Err(CoreError::Config("kernel and stride must be non-zero".into()));
        }
        let fit = |n: usize| (n + 2 * padding >= kernel).then(|| (n + 2 * padding - kernel) / stride + 1);
        match (fit(input.height), fit(input.width)) {
            (Some(out_h), Some(out_w)) => Ok(Self {
                input,
                kernel,
                stride,
                padding,
                out_h,
                out_w,
            }),
            _ => Err(CoreError::Config(format!("kernel {kernel} does not fit input {input}"))),
        }
    }

    pub fn for_conv(conv: &ConvSpec, input: Shape3) -> Result<Self> {
        Self::new(input, conv.kernel, conv.stride, conv.padding)
    }

    /// Non-overlapping pooling windows.
    pub fn for_pool(input: Shape3, window: usize) -> Result<Self> {
        Self::new(input, window, window, 0)
    }

    /// Width of the virtual border on each side.
    pub fn border(&self) -> usize {
        (self.kernel - 1).saturating_sub(self.padding)
    }

    pub fn positions(&self) -> usize {
        self.out_h * self.out_w
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SpikeEvent {
    pub channel: usize,
    pub y: usize,
    pub x: usize,
    pub seq: u32,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CenterPosition {
    pub oy: i64,
    pub ox: i64,
}

/// Kernel tap an event multiplies at a given output.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Tap {
    pub ic: usize,
    pub ki: usize,
    pub kj: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EventFifoEntry {
    pub seq: u32,
    pub tap: Tap,
}

/// List every spike in channel-major raster order.
pub fn index_generation(map: &SpikeTensor) -> Vec<SpikeEvent> {
    map.iter_spikes()
        .enumerate()
        .map(|(seq, (channel, y, x))| SpikeEvent {
            channel,
            y,
            x,
            seq: seq as u32,
        })
        .collect()
}

#[inline]
fn ceil_div(a: i64, b: i64) -> i64 {
    -((-a).div_euclid(b))
}

pub fn cp_generation(e: &SpikeEvent, geom: &ConvGeometry) -> CenterPosition {
    let (k, s, p) = (geom.kernel as i64, geom.stride as i64, geom.padding as i64);
    CenterPosition {
        oy: ceil_div(e.y as i64 + p - k + 1, s),
        ox: ceil_div(e.x as i64 + p - k + 1, s),
    }
}

/// Offsets along one axis reached from the anchor, with their kernel index.
fn axis_footprint(coord: usize, anchor: i64, geom: &ConvGeometry) -> impl Iterator<Item = (i64, usize)> {
    let (k, s, p) = (geom.kernel as i64, geom.stride as i64, geom.padding as i64);
    (0..k).map_while(move |d| {
        let o = anchor + d;
        let tap = coord as i64 + p - o * s;
        (tap >= 0).then_some((o, tap as usize))
    })
}

/// Every output (real or virtual) an event influences, with the tap it uses there.
pub fn diffusion_region(e: &SpikeEvent, geom: &ConvGeometry) -> Vec<(i64, i64, Tap)> {
    let cp = cp_generation(e, geom);
    let cols: Vec<_> = axis_footprint(e.x, cp.ox, geom).collect();
    let mut out = Vec::with_capacity(cols.len() * cols.len());
    for (oy, ki) in axis_footprint(e.y, cp.oy, geom) {
        for &(ox, kj) in &cols {
            out.push((
                oy,
                ox,
                Tap {
                    ic: e.channel,
                    ki,
                    kj,
                },
            ));
        }
    }
    out
}

/// One sparse detection unit: an event FIFO. Entries past `capacity` spill
/// into a new chunk, each spill being one backpressure stall.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SduUnit {
    entries: Vec<EventFifoEntry>,
}

/// Real output grid plus virtual border.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SduGrid {
    geom: ConvGeometry,
    border: usize,
    capacity: usize,
    units: Vec<SduUnit>,
    backpressure: u64,
}

impl SduGrid {
    pub fn new(geom: ConvGeometry, capacity: usize) -> Self {
        assert!(capacity > 0, "sdu capacity must be at least 1");
        let border = geom.border();
        let n = (geom.out_h + 2 * border) * (geom.out_w + 2 * border);
        Self {
            geom,
            border,
            capacity,
            units: vec![SduUnit::default(); n],
            backpressure: 0,
        }
    }

    pub fn geometry(&self) -> &ConvGeometry {
        &self.geom
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    fn slot(&self, oy: i64, ox: i64) -> Option<usize> {
        let b = self.border as i64;
        let (rows, cols) = (self.geom.out_h as i64 + 2 * b, self.geom.out_w as i64 + 2 * b);
        let (r, c) = (oy + b, ox + b);
        (r >= 0 && r < rows && c >= 0 && c < cols).then(|| (r * cols + c) as usize)
    }

    pub fn is_real(&self, oy: i64, ox: i64) -> bool {
        oy >= 0 && ox >= 0 && (oy as usize) < self.geom.out_h && (ox as usize) < self.geom.out_w
    }

    fn push(&mut self, oy: i64, ox: i64, entry: EventFifoEntry) -> Result<()> {
        let i = self
            .slot(oy, ox)
            .ok_or_else(|| CoreError::Contract(format!("diffusion target ({oy}, {ox}) outside the virtual border")))?;
        let unit = &mut self.units[i];
        if !unit.entries.is_empty() && unit.entries.len().is_multiple_of(self.capacity) {
            self.backpressure += 1;
        }
        unit.entries.push(entry);
        Ok(())
    }

    /// `(vld_cnt, entries)` for a real unit; reading a virtual unit is a contract violation.
    pub fn read_window(&self, oy: usize, ox: usize) -> Result<(usize, &[EventFifoEntry])> {
        if !self.is_real(oy as i64, ox as i64) {
            return Err(CoreError::Contract(format!("read of non-real SDU ({oy}, {ox})")));
        }
        let e = &self.units[self.slot(oy as i64, ox as i64).expect("real unit")].entries;
        Ok((e.len(), e))
    }

    /// Entries of any unit, including virtual ones (diagnostics).
    pub fn unit_entries(&self, oy: i64, ox: i64) -> &[EventFifoEntry] {
        self.slot(oy, ox).map(|i| &self.units[i].entries[..]).unwrap_or(&[])
    }

    /// Capacity-sized chunks of a real unit's FIFO, in order.
    pub fn chunks(&self, oy: usize, ox: usize) -> Result<std::slice::Chunks<'_, EventFifoEntry>> {
        let (_, e) = self.read_window(oy, ox)?;
        Ok(e.chunks(self.capacity))
    }

    pub fn backpressure_stalls(&self) -> u64 {
        self.backpressure
    }

    pub fn total_entries(&self) -> u64 {
        self.units.iter().map(|u| u.entries.len() as u64).sum()
    }

    pub fn real_entries(&self) -> u64 {
        let mut n = 0;
        for oy in 0..self.geom.out_h {
            for ox in 0..self.geom.out_w {
                n += self.unit_entries(oy as i64, ox as i64).len() as u64;
            }
        }
        n
    }

    pub fn virtual_entries(&self) -> u64 {
        self.total_entries() - self.real_entries()
    }
}

/// Diffuse every event into the grid. Per-unit order follows event order.
pub fn cp_map_diffuse(events: &[SpikeEvent], grid: &mut SduGrid) -> Result<()> {
    for e in events {
        map_event(e, grid)?;
    }
    Ok(())
}

fn map_event(e: &SpikeEvent, grid: &mut SduGrid) -> Result<()> {
    let geom = grid.geom;
    for (oy, ox, tap) in diffusion_region(e, &geom) {
        grid.push(oy, ox, EventFifoEntry { seq: e.seq, tap })?;
    }
    Ok(())
}

/// Sequential IG -> CP -> map passes.
pub fn detect(map: &SpikeTensor, geom: ConvGeometry, capacity: usize) -> Result<SduGrid> {
    let mut grid = SduGrid::new(geom, capacity);
    cp_map_diffuse(&index_generation(map), &mut grid)?;
    Ok(grid)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct PipelineStats {
    pub cycles: u64,
    pub events: u64,
    pub ig_queue: FifoCounters,
    pub cp_queue: FifoCounters,
    pub conserved: bool,
}

/// IG, CP generation and CP mapping as three concurrent stages, one item per
/// stage per cycle, joined by bounded queues of depth `queue_depth`.
pub fn run_pipelined(
    map: &SpikeTensor,
    geom: ConvGeometry,
    capacity: usize,
    queue_depth: usize,
) -> Result<(SduGrid, PipelineStats)> {
    let mut grid = SduGrid::new(geom, capacity);
    let mut spikes = map.iter_spikes();
    let mut next_seq = 0u32;
    let mut pending: Option<SpikeEvent> = None;
    let mut ig_out: ElasticFifo<SpikeEvent> = ElasticFifo::new(queue_depth);
    let mut cp_out: ElasticFifo<(SpikeEvent, CenterPosition)> = ElasticFifo::new(queue_depth);
    let mut cp_hold: Option<(SpikeEvent, CenterPosition)> = None;
    let mut ig_done = false;
    let mut cycles = 0u64;

    loop {
        let idle = ig_done && pending.is_none() && ig_out.is_empty() && cp_hold.is_none() && cp_out.is_empty();
        if idle {
            break;
        }
        cycles += 1;

        // Stages evaluate back to front so an item advances one stage per cycle.
        if let Some((e, _cp)) = cp_out.pop() {
            map_event(&e, &mut grid)?;
        }

        if cp_hold.is_none() {
            cp_hold = ig_out.pop().map(|e| (e, cp_generation(&e, &geom)));
        }
        if let Some(item) = cp_hold.take() {
            if let Err(item) = cp_out.try_push(item) {
                cp_hold = Some(item);
            }
        }

        if pending.is_none() && !ig_done {
            match spikes.next() {
                Some((channel, y, x)) => {
                    pending = Some(SpikeEvent {
                        channel,
                        y,
                        x,
                        seq: next_seq,
                    });
                    next_seq += 1;
                }
                None => ig_done = true,
            }
        }
        if let Some(e) = pending.take() {
            if let Err(e) = ig_out.try_push(e) {
                pending = Some(e);
            }
        }
    }
    if next_seq == 0 {
        // an empty map only observed an exhausted index stream
        cycles = 0;
    }
    let stats = PipelineStats {
        cycles,
        events: next_seq as u64,
        ig_queue: ig_out.counters(),
        cp_queue: cp_out.counters(),
        conserved: ig_out.conserves() && cp_out.conserves(),
    };
    Ok((grid, stats))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::collections::BTreeSet;

    fn geom(h: usize, w: usize, k: usize, s: usize, p: usize) -> ConvGeometry {
        ConvGeometry::new(Shape3::new(1, h, w), k, s, p).unwrap()
    }

    /// Outputs whose receptive field covers (y, x), from the dense read formula.
    fn dense_incidence(g: &ConvGeometry, y: usize, x: usize) -> BTreeSet<(i64, i64)> {
        let mut set = BTreeSet::new();
        for oy in 0..g.out_h {
            for ox in 0..g.out_w {
                for ki in 0..g.kernel {
                    for kj in 0..g.kernel {
                        let iy = (oy * g.stride + ki) as i64 - g.padding as i64;
                        let ix = (ox * g.stride + kj) as i64 - g.padding as i64;
                        if (iy, ix) == (y as i64, x as i64) {
                            set.insert((oy as i64, ox as i64));
                        }
                    }
                }
            }
        }
        set
    }

    fn real_region(g: &ConvGeometry, y: usize, x: usize) -> BTreeSet<(i64, i64)> {
        let e = SpikeEvent { channel: 0, y, x, seq: 0 };
        let grid = SduGrid::new(*g, 64);
        diffusion_region(&e, g)
            .into_iter()
            .filter(|&(oy, ox, _)| grid.is_real(oy, ox))
            .map(|(oy, ox, _)| (oy, ox))
            .collect()
    }

    #[test]
    fn index_generation_examples() {
        assert!(index_generation(&SpikeTensor::zeros(Shape3::new(2, 4, 4))).is_empty());
        let mut m = SpikeTensor::zeros(Shape3::new(2, 4, 4));
        m.set(0, 2, 3, true);
        assert_eq!(index_generation(&m), vec![SpikeEvent { channel: 0, y: 2, x: 3, seq: 0 }]);
    }

    #[test]
    fn index_generation_matches_naive_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let m = SpikeTensor::random(Shape3::new(3, 9, 7), 0.3, &mut rng);
        let mut naive = vec![];
        for c in 0..3 {
            for y in 0..9 {
                for x in 0..7 {
                    if m.get(c, y, x) {
                        naive.push((c, y, x));
                    }
                }
            }
        }
        let got: Vec<_> = index_generation(&m).iter().map(|e| (e.channel, e.y, e.x)).collect();
        assert_eq!(got, naive);
        assert!(index_generation(&m).iter().enumerate().all(|(i, e)| e.seq == i as u32));
    }

    #[test]
    fn footprint_examples() {
        let g = geom(4, 4, 3, 1, 1);
        let all: BTreeSet<_> = (0..3).flat_map(|a| (0..3).map(move |b| (a, b))).collect();
        assert_eq!(real_region(&g, 1, 1), all);
        assert_eq!(real_region(&g, 0, 0), [(0, 0), (0, 1), (1, 0), (1, 1)].into_iter().collect());
        assert_eq!(cp_generation(&SpikeEvent { channel: 0, y: 0, x: 0, seq: 0 }, &g), CenterPosition { oy: -1, ox: -1 });

        let g1 = geom(4, 4, 1, 1, 0);
        let e = SpikeEvent { channel: 0, y: 2, x: 3, seq: 0 };
        assert_eq!(cp_generation(&e, &g1), CenterPosition { oy: 2, ox: 3 });
        assert_eq!(diffusion_region(&e, &g1), vec![(2, 3, Tap { ic: 0, ki: 0, kj: 0 })]);
    }

    #[test]
    fn interior_spike_fills_nine_units_with_unique_taps() {
        let g = geom(6, 6, 3, 1, 1);
        let mut m = SpikeTensor::zeros(Shape3::new(1, 6, 6));
        m.set(0, 3, 2, true);
        let grid = detect(&m, g, 64).unwrap();
        assert_eq!(grid.total_entries(), 9);
        let mut taps = BTreeSet::new();
        for oy in 0..6 {
            for ox in 0..6 {
                let (n, e) = grid.read_window(oy, ox).unwrap();
                if n > 0 {
                    assert_eq!(n, 1);
                    let t = e[0].tap;
                    // tap formula: (y - (oy·s - p), x - (ox·s - p))
                    assert_eq!((t.ki as i64, t.kj as i64), (3 - (oy as i64 - 1), 2 - (ox as i64 - 1)));
                    taps.insert((t.ki, t.kj));
                }
            }
        }
        assert_eq!(taps.len(), 9);
    }

    #[test]
    fn stride_two_respects_congruence() {
        let g = geom(8, 8, 3, 2, 1);
        for y in 0..8 {
            for x in 0..8 {
                assert_eq!(real_region(&g, y, x), dense_incidence(&g, y, x), "spike ({y}, {x})");
            }
        }
    }

    #[test]
    fn empty_events_leave_grid_empty() {
        let g = geom(5, 5, 3, 1, 1);
        let grid = detect(&SpikeTensor::zeros(Shape3::new(1, 5, 5)), g, 64).unwrap();
        assert_eq!(grid.total_entries(), 0);
    }

    #[test]
    fn virtual_reads_are_rejected() {
        let grid = SduGrid::new(geom(4, 4, 3, 1, 1), 8);
        assert!(grid.read_window(4, 0).is_err());
        assert!(grid.read_window(0, 0).is_ok());
    }

    #[test]
    fn capacity_spills_are_counted_not_dropped() {
        let g = ConvGeometry::new(Shape3::new(8, 3, 3), 3, 1, 1).unwrap();
        let m = SpikeTensor::ones(Shape3::new(8, 3, 3));
        let grid = detect(&m, g, 16).unwrap();
        // the centre output sees all 72 input spikes
        let (n, _) = grid.read_window(1, 1).unwrap();
        assert_eq!(n, 72);
        assert_eq!(grid.chunks(1, 1).unwrap().count(), 5);
        assert!(grid.backpressure_stalls() > 0);
    }

    #[test]
    fn pipeline_cycle_count() {
        let g = geom(6, 6, 3, 1, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let m = SpikeTensor::random(Shape3::new(1, 6, 6), 0.5, &mut rng);
        let n = m.total_spikes();
        let (_, stats) = run_pipelined(&m, g, 64, 2).unwrap();
        assert_eq!(stats.events, n);
        assert_eq!(stats.cycles, n + 2);
        let (_, z) = run_pipelined(&SpikeTensor::zeros(Shape3::new(1, 6, 6)), g, 64, 2).unwrap();
        assert_eq!(z.cycles, 0);
    }

    proptest! {
        #[test]
        fn footprint_equals_dense_incidence(
            h in 2usize..10, w in 2usize..10, k in prop::sample::select(vec![1usize, 3, 5]),
            s in 1usize..=2, p in 0usize..=2, seed in any::<u64>()
        ) {
            prop_assume!(h + 2 * p >= k && w + 2 * p >= k);
            let g = geom(h, w, k, s, p);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let m = SpikeTensor::random(Shape3::new(1, h, w), 0.4, &mut rng);
            let grid = detect(&m, g, 64).unwrap();
            let mut dense_total = 0u64;
            let mut unclipped = 0u64;
            for (_, y, x) in m.iter_spikes() {
                let d = dense_incidence(&g, y, x);
                prop_assert_eq!(real_region(&g, y, x), d.clone());
                dense_total += d.len() as u64;
                unclipped += diffusion_region(&SpikeEvent { channel: 0, y, x, seq: 0 }, &g).len() as u64;
            }
            prop_assert_eq!(grid.real_entries(), dense_total);
            prop_assert_eq!(grid.total_entries(), unclipped);
        }

        #[test]
        fn pipelined_equals_sequential(seed in any::<u64>(), depth in 1usize..4, s in 1usize..=2) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let g = ConvGeometry::new(Shape3::new(3, 9, 9), 3, s, 1).unwrap();
            let m = SpikeTensor::random(Shape3::new(3, 9, 9), 0.3, &mut rng);
            let (piped, stats) = run_pipelined(&m, g, 8, depth).unwrap();
            prop_assert_eq!(piped, detect(&m, g, 8).unwrap());
            prop_assert!(stats.conserved);
        }

        #[test]
        fn per_unit_order_follows_seq(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let g = ConvGeometry::new(Shape3::new(2, 7, 7), 3, 1, 1).unwrap();
            let grid = detect(&SpikeTensor::random(Shape3::new(2, 7, 7), 0.5, &mut rng), g, 64).unwrap();
            for oy in 0..7 {
                for ox in 0..7 {
                    let (_, e) = grid.read_window(oy, ox).unwrap();
                    prop_assert!(e.windows(2).all(|p| p[0].seq < p[1].seq));
                }
            }
        }
    }
}
