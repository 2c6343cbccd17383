// SPDX-License-Identifier: Apache-2.0

//! Per-image runs over an input bundle, optionally on a worker pool.
//! Results are always returned in input order.

use rayon::prelude::*;

use crate::config::SimConfig;
use crate::container::InputBundle;
use crate::engine::{compare, run_eventdriven, EventRun, InvariantCheck, Verdict};
use crate::epa::CycleStats;
use crate::error::{CoreError, Result};
use crate::graph::ModelGraph;
use crate::metrics::{reference_synops, RunMetrics};
use crate::reference::{run_reference, ExactScores, LayerOutput};
use crate::spike::SpikeTensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Mode {
    Reference,
    EventDriven,
    Compare,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Reference => "reference",
            Mode::EventDriven => "eventdriven",
            Mode::Compare => "compare",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct JobSummary {
    pub first: usize,
    pub last: usize,
    pub label: String,
    pub cycles: u64,
    pub compute_cycles: u64,
    pub synops: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EventSummary {
    pub stats: CycleStats,
    pub metrics: RunMetrics,
    pub jobs: Vec<JobSummary>,
    pub score_bound: u64,
    pub warnings: Vec<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ImageReport {
    pub index: usize,
    pub label: Option<u16>,
    pub predicted: Option<usize>,
    pub scores: Option<ExactScores>,
    pub total_spikes: u64,
    /// Spikes per layer output (0 for non-spiking layers).
    pub layer_spikes: Vec<u64>,
    pub reference_synops: Option<u64>,
    pub event: Option<EventSummary>,
    pub verdict: Option<Verdict>,
    pub mismatches: Vec<String>,
    pub invariants: Vec<InvariantCheck>,
}

impl ImageReport {
    pub fn correct(&self) -> Option<bool> {
        let l = self.label?;
        Some(self.predicted == Some(l as usize))
    }
}

fn layer_spikes(outputs: &[LayerOutput]) -> Vec<u64> {
    outputs.iter().map(|o| o.spikes().map_or(0, SpikeTensor::total_spikes)).collect()
}

fn summarize(run: &EventRun, cfg: &SimConfig) -> Result<EventSummary> {
    let metrics = RunMetrics::from_counts(
        run.total_spikes(),
        run.synops(),
        run.total.total_cycles(),
        cfg.epa.clock_hz,
        &cfg.power,
    )?;
    Ok(EventSummary {
        stats: run.total,
        metrics,
        jobs: run
            .jobs
            .iter()
            .map(|j| JobSummary {
                first: j.first,
                last: j.last,
                label: j.label.clone(),
                cycles: j.stats.total_cycles(),
                compute_cycles: j.stats.compute_cycles,
                synops: j.synops,
            })
            .collect(),
        score_bound: run.score_bound,
        warnings: run.warnings.clone(),
    })
}

pub fn process_image(
    model: &ModelGraph,
    image: &SpikeTensor,
    label: Option<u16>,
    index: usize,
    mode: Mode,
    cfg: &SimConfig,
) -> Result<ImageReport> {
    let mut r = ImageReport {
        index,
        label,
        predicted: None,
        scores: None,
        total_spikes: 0,
        layer_spikes: Vec::new(),
        reference_synops: None,
        event: None,
        verdict: None,
        mismatches: Vec::new(),
        invariants: Vec::new(),
    };
    match mode {
        Mode::Reference => {
            let run = run_reference(model, image)?;
            r.reference_synops = Some(reference_synops(model, image, &run)?.iter().sum());
            r.predicted = run.predicted_class();
            r.total_spikes = run.total_spikes();
            r.layer_spikes = layer_spikes(&run.outputs);
            r.scores = run.scores;
        }
        Mode::EventDriven => {
            let run = run_eventdriven(model, image, &cfg.epa)?;
            r.predicted = run.predicted_class();
            r.total_spikes = run.total_spikes();
            r.layer_spikes = layer_spikes(&run.outputs);
            r.event = Some(summarize(&run, cfg)?);
            r.scores = run.scores;
        }
        Mode::Compare => {
            let c = compare(model, image, &cfg.epa)?;
            r.reference_synops = Some(c.reference_synops.iter().sum());
            r.predicted = c.event.predicted_class();
            r.total_spikes = c.event.total_spikes();
            r.layer_spikes = layer_spikes(&c.event.outputs);
            r.event = Some(summarize(&c.event, cfg)?);
            r.scores = c.event.scores.clone();
            r.verdict = Some(c.verdict);
            r.mismatches = c.mismatches;
            r.invariants = c.invariants;
        }
    }
    Ok(r)
}

#[derive(Clone, Debug, PartialEq)]
pub struct BatchReport {
    pub mode: Mode,
    pub images: Vec<ImageReport>,
}

impl BatchReport {
    /// `(correct, labelled)` over images that carry labels.
    pub fn accuracy(&self) -> Option<(usize, usize)> {
        let marks: Vec<bool> = self.images.iter().filter_map(ImageReport::correct).collect();
        (!marks.is_empty()).then(|| (marks.iter().filter(|&&c| c).count(), marks.len()))
    }

    /// Worst verdict across images: divergent over within-bound over identical.
    pub fn verdict(&self) -> Option<Verdict> {
        let rank = |v: Verdict| match v {
            Verdict::Identical => 0,
            Verdict::WithinBound => 1,
            Verdict::Divergent => 2,
        };
        self.images.iter().filter_map(|i| i.verdict).max_by_key(|&v| rank(v))
    }

    pub fn diverged(&self) -> bool {
        self.verdict() == Some(Verdict::Divergent)
    }
}

/// Process every image of `bundle` on `workers` threads.
pub fn run_batch(model: &ModelGraph, bundle: &InputBundle, mode: Mode, cfg: &SimConfig, workers: usize) -> Result<BatchReport> {
    cfg.validate()?;
    if bundle.shape != model.input_shape() {
        return Err(CoreError::Config(format!(
            "inputs are {}, model expects {}",
            bundle.shape,
            model.input_shape()
        )));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| CoreError::Config(format!("worker pool: {e}")))?;
    let label = |i: usize| bundle.labels.as_ref().map(|l| l[i]);
    let images = pool.install(|| {
        bundle
            .images
            .par_iter()
            .enumerate()
            .map(|(i, img)| process_image(model, img, label(i), i, mode, cfg))
            .collect::<Result<Vec<_>>>()
    })?;
    Ok(BatchReport { mode, images })
}
