// SPDX-License-Identifier: Apache-2.0

//! Report emission: a line-oriented text document and a CSV table.
//!
//! Text reports are `key: value` lines grouped under `[image N]` and
//! `[summary]` headings. The CSV has one row per image with the columns in
//! [`CSV_COLUMNS`]. Unless `deterministic` is set, both carry a generation
//! timestamp; with it set, identical inputs give identical bytes.

use std::fmt::Write as _;
use std::time::{SystemTime, UNIX_EPOCH};

use crate::batch::{BatchReport, ImageReport};
use crate::config::SimConfig;
use crate::graph::ModelGraph;
use crate::reference::ExactScores;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct RenderOptions {
    pub deterministic: bool,
}

pub const CSV_COLUMNS: [&str; 17] = [
    "image",
    "label",
    "predicted",
    "total_spikes",
    "synops",
    "reference_synops",
    "total_cycles",
    "compute_cycles",
    "stall_cycles",
    "backpressure",
    "latency_s",
    "fps",
    "energy_j",
    "gsops_per_watt",
    "eff_per_klut",
    "score_bound",
    "verdict",
];

fn timestamp() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

fn scores_str(s: &ExactScores) -> String {
    let nums: Vec<String> = s.numerators.iter().map(i64::to_string).collect();
    format!("[{}] / {}", nums.join(", "), s.denominator)
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map_or_else(|| "-".to_string(), |v| v.to_string())
}

fn image_text(out: &mut String, r: &ImageReport) {
    let _ = writeln!(out, "\n[image {}]", r.index);
    let _ = writeln!(out, "label: {}", opt(r.label));
    let _ = writeln!(out, "predicted: {}", opt(r.predicted));
    if let Some(s) = &r.scores {
        let _ = writeln!(out, "scores: {}", scores_str(s));
    }
    let _ = writeln!(out, "total_spikes: {}", r.total_spikes);
    let per: Vec<String> = r.layer_spikes.iter().map(u64::to_string).collect();
    let _ = writeln!(out, "layer_spikes: {}", per.join(" "));
    if let Some(s) = r.reference_synops {
        let _ = writeln!(out, "reference_synops: {s}");
    }
    if let Some(e) = &r.event {
        let st = &e.stats;
        let m = &e.metrics;
        let _ = writeln!(out, "synops: {}", m.synops);
        if let Some(rs) = r.reference_synops {
            let _ = writeln!(out, "synops_diff: {}", m.synops as i128 - rs as i128);
        }
        let _ = writeln!(
            out,
            "cycles: total={} sda={} epa={} compute={} stall_w_empty={} stall_s_empty={} stall_both={} idle={}",
            st.total_cycles(),
            st.sda_cycles,
            st.epa_cycles,
            st.compute_cycles,
            st.stall_w_empty,
            st.stall_s_empty,
            st.stall_both,
            st.idle_cycles
        );
        let _ = writeln!(
            out,
            "backpressure: sdu_spills={} s_fifo={} w_fifo={}",
            st.sdu_spills, st.s_fifo_backpressure, st.w_fifo_backpressure
        );
        let _ = writeln!(out, "events_consumed: {}", st.events_consumed);
        let _ = writeln!(out, "latency_s: {:.6e}", m.latency_s);
        let _ = writeln!(out, "fps: {:.3}", m.fps);
        let _ = writeln!(out, "energy_j (modelled): {:.6e}", m.energy_j);
        let _ = writeln!(out, "gsops_per_watt: {:.6}", m.gsops_per_watt);
        let _ = writeln!(out, "eff_per_klut: {:.6}", m.eff_per_klut);
        let _ = writeln!(out, "score_bound: {}", e.score_bound);
        for j in &e.jobs {
            let _ = writeln!(
                out,
                "job {}-{} {}: cycles={} compute={} synops={}",
                j.first, j.last, j.label, j.cycles, j.compute_cycles, j.synops
            );
        }
        for w in &e.warnings {
            let _ = writeln!(out, "warning: {w}");
        }
    }
    if let Some(v) = r.verdict {
        let _ = writeln!(out, "verdict: {}", v.as_str());
    }
    for c in &r.invariants {
        let _ = writeln!(out, "invariant {}: {}", c.name, if c.holds { "pass" } else { "FAIL" });
    }
    for m in &r.mismatches {
        let _ = writeln!(out, "mismatch: {m}");
    }
}

pub fn render_text(report: &BatchReport, model: &ModelGraph, cfg: &SimConfig, opts: RenderOptions) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "snnsim report");
    if !opts.deterministic {
        let _ = writeln!(out, "generated_unix: {}", timestamp());
    }
    let _ = writeln!(out, "mode: {}", report.mode.as_str());
    let kinds: Vec<&str> = model.kinds().iter().map(|k| k.name()).collect();
    let _ = writeln!(out, "model: {} layers [{}]", model.len(), kinds.join(" "));
    let _ = writeln!(out, "input: {}", model.input_shape());
    let _ = writeln!(out, "classes: {}", opt(model.classes()));
    let e = &cfg.epa;
    let _ = writeln!(
        out,
        "config: pe={}x{} s_fifo={} w_fifo={} sdu={} sda_queue={} overhead={} wmu_latency={} clock_hz={:.4e} power_w={} kluts={}",
        e.pe_rows,
        e.pe_cols,
        e.s_fifo_depth,
        e.w_fifo_depth,
        e.sdu_capacity,
        e.sda_queue_depth,
        e.overhead_cycles,
        e.wmu_latency,
        e.clock_hz,
        cfg.power.power_w,
        cfg.power.kluts
    );
    let _ = writeln!(out, "images: {}", report.images.len());
    for r in &report.images {
        image_text(&mut out, r);
    }
    let _ = writeln!(out, "\n[summary]");
    let spikes: u64 = report.images.iter().map(|r| r.total_spikes).sum();
    let _ = writeln!(out, "total_spikes: {spikes}");
    let events: Vec<_> = report.images.iter().filter_map(|r| r.event.as_ref()).collect();
    if !events.is_empty() {
        let cycles: u64 = events.iter().map(|e| e.metrics.total_cycles).sum();
        let synops: u64 = events.iter().map(|e| e.metrics.synops).sum();
        let _ = writeln!(out, "total_cycles: {cycles}");
        let _ = writeln!(out, "synops: {synops}");
        let lat = cycles as f64 / cfg.epa.clock_hz / events.len() as f64;
        let _ = writeln!(out, "mean_latency_s: {lat:.6e}");
    }
    match report.accuracy() {
        Some((ok, n)) => {
            let _ = writeln!(out, "accuracy: {ok}/{n} ({:.2}%)", 100.0 * ok as f64 / n as f64);
        }
        None => {
            let _ = writeln!(out, "accuracy: -");
        }
    }
    if let Some(v) = report.verdict() {
        let _ = writeln!(out, "verdict: {}", v.as_str());
    }
    out
}

pub fn render_csv(report: &BatchReport, opts: RenderOptions) -> String {
    let mut out = String::new();
    if !opts.deterministic {
        let _ = writeln!(out, "# generated_unix={}", timestamp());
    }
    let _ = writeln!(out, "{}", CSV_COLUMNS.join(","));
    for r in &report.images {
        let e = r.event.as_ref();
        let m = e.map(|e| e.metrics);
        let st = e.map(|e| e.stats);
        let row = [
            r.index.to_string(),
            opt(r.label),
            opt(r.predicted),
            r.total_spikes.to_string(),
            opt(m.map(|m| m.synops)),
            opt(r.reference_synops),
            opt(m.map(|m| m.total_cycles)),
            opt(st.map(|s| s.compute_cycles)),
            opt(st.map(|s| s.stall_cycles())),
            opt(st.map(|s| s.backpressure())),
            opt(m.map(|m| format!("{:.6e}", m.latency_s))),
            opt(m.map(|m| format!("{:.3}", m.fps))),
            opt(m.map(|m| format!("{:.6e}", m.energy_j))),
            opt(m.map(|m| format!("{:.6}", m.gsops_per_watt))),
            opt(m.map(|m| format!("{:.6}", m.eff_per_klut))),
            opt(e.map(|e| e.score_bound)),
            opt(r.verdict.map(|v| v.as_str())),
        ];
        let _ = writeln!(out, "{}", row.join(","));
    }
    out
}
