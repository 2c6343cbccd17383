// SPDX-License-Identifier: Apache-2.0

//! Whole-model event-driven execution and the reference comparison.
//!
//! Layers are grouped into hardware jobs: a conv, any residual joins after
//! it and the LIF that consumes the sums run as one PE-array pass; average
//! pooling into a LIF runs as a depthwise pass; pooling or spikes into the
//! classifier run through WTFC; a QK block is two PE passes joined by the
//! attention write-back.

use crate::epa::{run_layer_eventdriven, CycleStats, EpaConfig, LayerJob, LayerRun, Synapses, WritebackRecord};
use crate::error::{CoreError, Result};
use crate::graph::{LayerKind, LayerSpec, ModelGraph};
use crate::lif::LifParams;
use crate::metrics::reference_synops;
use crate::qkformer::{baseline_writeback, onthefly_writeback, AttenReg, QkOutput, WriteBackEvent, WritebackStats};
use crate::reference::{run_reference, trace_spikes, ExactScores, LayerOutput, PooledTensor, ReferenceRun};
use crate::spike::{Shape3, SpikeTensor};
use crate::w2ttfs::TtfsCode;
use crate::wtfc::{run_wtfc, ttfs_filter, within_bound, OpCounters, WtfcRun};

/// One hardware job and the layers it covers.
#[derive(Clone, Debug, PartialEq)]
pub struct JobTrace {
    pub first: usize,
    pub last: usize,
    pub label: String,
    pub stats: CycleStats,
    pub synops: u64,
    /// Spike-buffer write counts of a QK job: (on-the-fly, baseline).
    pub qk_writes: Option<(WritebackStats, WritebackStats)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EventRun {
    pub outputs: Vec<LayerOutput>,
    pub scores: Option<ExactScores>,
    /// Per-class truncation bound of the classifier scores.
    pub score_bound: u64,
    pub classifier_ops: Option<OpCounters>,
    pub jobs: Vec<JobTrace>,
    pub total: CycleStats,
    pub overflows: u64,
    pub warnings: Vec<String>,
}

impl EventRun {
    pub fn total_spikes(&self) -> u64 {
        trace_spikes(&self.outputs)
    }

    pub fn synops(&self) -> u64 {
        self.jobs.iter().map(|j| j.synops).sum()
    }

    pub fn predicted_class(&self) -> Option<usize> {
        self.scores.as_ref().and_then(ExactScores::argmax)
    }
}

fn label(layers: &[LayerSpec]) -> String {
    layers.iter().map(|l| l.kind().name()).collect::<Vec<_>>().join("+")
}

fn epa_trace(first: usize, last: usize, layers: &[LayerSpec], run: &LayerRun) -> JobTrace {
    JobTrace {
        first,
        last,
        label: label(&layers[first..=last]),
        stats: run.stats,
        synops: run.stats.events_consumed,
        qk_writes: None,
    }
}

/// Stats for the filter + FCU stage: one cycle per filter tuple (the FCU
/// idles) plus one per unit addition (compute).
fn stream_stats(tuples: u64, adds: u64, events: u64) -> CycleStats {
    CycleStats {
        epa_cycles: tuples + adds,
        pe_count: 1,
        compute_cycles: adds,
        idle_cycles: tuples,
        windows: tuples,
        dispatched_events: events,
        events_consumed: events,
        fifo_conserved: true,
        ..CycleStats::default()
    }
}

fn classifier_trace(first: usize, last: usize, layers: &[LayerSpec], run: &WtfcRun) -> JobTrace {
    JobTrace {
        first,
        last,
        label: label(&layers[first..=last]),
        stats: stream_stats(run.tuples, run.add_cycles, run.synops),
        synops: run.synops,
        qk_writes: None,
    }
}

fn pooled_from_filter(map: &SpikeTensor, window: usize) -> Result<PooledTensor> {
    let counts = ttfs_filter(map, window)?.into_iter().map(|t| t.vld_cnt).collect();
    let s = map.shape();
    Ok(PooledTensor::from_counts(
        Shape3::new(s.channels, s.height / window, s.width / window),
        window,
        counts,
    ))
}

/// Run `model` on `input` with the event-driven dataflow.
pub fn run_eventdriven(model: &ModelGraph, input: &SpikeTensor, cfg: &EpaConfig) -> Result<EventRun> {
    cfg.validate()?;
    if input.shape() != model.input_shape() {
        return Err(CoreError::Config(format!(
            "input {} does not match model input {}",
            input.shape(),
            model.input_shape()
        )));
    }
    let layers = model.layers();
    let unit = model.format().unit();
    let mut outputs: Vec<LayerOutput> = Vec::with_capacity(layers.len());
    let mut jobs = Vec::new();
    let mut scores = None;
    let mut score_bound = 0;
    let mut classifier_ops = None;
    let mut overflows = 0u64;
    let mut warnings = Vec::new();

    let mut i = 0;
    while i < layers.len() {
        let wrap = |e: CoreError| match e {
            CoreError::Graph { .. } | CoreError::Ordering { .. } | CoreError::MissingWeight { .. } => e,
            other => CoreError::Graph {
                layer: i,
                reason: other.to_string(),
            },
        };
        let prev_spikes = |outputs: &[LayerOutput]| -> Result<SpikeTensor> {
            match outputs.last() {
                None => Ok(input.clone()),
                Some(o) => o.spikes().cloned().ok_or_else(|| CoreError::Graph {
                    layer: i,
                    reason: "expected spikes from the previous layer".into(),
                }),
            }
        };
        match &layers[i] {
            LayerSpec::Conv(conv) => {
                let x = prev_spikes(&outputs)?;
                let mut end = i;
                let mut sources: Vec<SpikeTensor> = Vec::new();
                while let Some(LayerSpec::ResidualAdd { from }) = layers.get(end + 1) {
                    let src = outputs
                        .get(*from)
                        .and_then(LayerOutput::spikes)
                        .ok_or_else(|| CoreError::Graph {
                            layer: end + 1,
                            reason: "residual source must emit spikes".into(),
                        })?;
                    sources.push(src.clone());
                    end += 1;
                }
                let lif: Option<&LifParams> = match layers.get(end + 1) {
                    Some(LayerSpec::Lif(p)) => {
                        end += 1;
                        Some(p)
                    }
                    _ => None,
                };
                let refs: Vec<&SpikeTensor> = sources.iter().collect();
                let job = LayerJob {
                    input: &x,
                    synapses: Synapses::Conv(conv),
                    shortcuts: &refs,
                    unit,
                    lif,
                };
                let run = run_layer_eventdriven(&job, cfg).map_err(wrap)?;
                overflows += run.overflows;
                outputs.push(LayerOutput::Sums(run.synaptic.clone()));
                let mut running = run.synaptic.clone();
                for src in &sources {
                    for (c, y, xx) in src.iter_spikes() {
                        running.add(c, y, xx, unit);
                    }
                    outputs.push(LayerOutput::Sums(running.clone()));
                }
                if lif.is_some() {
                    debug_assert_eq!(running, run.sums);
                    outputs.push(LayerOutput::Spikes(run.spikes.clone()));
                }
                jobs.push(epa_trace(i, end, layers, &run));
                i = end + 1;
            }
            LayerSpec::AvgPool { window } => {
                let x = prev_spikes(&outputs)?;
                match layers.get(i + 1) {
                    Some(LayerSpec::Lif(p)) => {
                        let share = unit / (*window * *window) as i64;
                        let job = LayerJob {
                            input: &x,
                            synapses: Synapses::Pool {
                                window: *window,
                                weight: share,
                            },
                            shortcuts: &[],
                            unit,
                            lif: Some(p),
                        };
                        let run = run_layer_eventdriven(&job, cfg).map_err(wrap)?;
                        overflows += run.overflows;
                        let s = run.spikes.shape();
                        let counts = run.sums.values().iter().map(|&v| (v / share) as u32).collect();
                        outputs.push(LayerOutput::Pooled(PooledTensor::from_counts(s, *window, counts)));
                        outputs.push(LayerOutput::Spikes(run.spikes.clone()));
                        jobs.push(epa_trace(i, i + 1, layers, &run));
                        i += 2;
                    }
                    Some(LayerSpec::FullyConnected(fc)) => {
                        let pooled = pooled_from_filter(&x, *window).map_err(wrap)?;
                        let run = run_wtfc(&x, *window, fc).map_err(wrap)?;
                        outputs.push(LayerOutput::Pooled(pooled));
                        outputs.push(LayerOutput::Scores(run.scores.clone()));
                        jobs.push(classifier_trace(i, i + 1, layers, &run));
                        warnings.extend(run.warning.clone());
                        score_bound = run.bound;
                        classifier_ops = Some(run.ops);
                        scores = Some(run.scores);
                        i += 2;
                    }
                    _ => {
                        let pooled = pooled_from_filter(&x, *window).map_err(wrap)?;
                        let n = pooled.counts().len() as u64;
                        outputs.push(LayerOutput::Pooled(pooled));
                        jobs.push(JobTrace {
                            first: i,
                            last: i,
                            label: label(&layers[i..=i]),
                            stats: stream_stats(n, 0, 0),
                            synops: 0,
                            qk_writes: None,
                        });
                        i += 1;
                    }
                }
            }
            LayerSpec::W2ttfsPool { window } => {
                let x = prev_spikes(&outputs)?;
                let tuples = ttfs_filter(&x, *window).map_err(wrap)?;
                let s = x.shape();
                let shape = Shape3::new(s.channels, s.height / window, s.width / window);
                let code = TtfsCode::from_counts(shape, *window, tuples.iter().map(|t| t.vld_cnt));
                outputs.push(LayerOutput::Ttfs(code));
                if let Some(LayerSpec::FullyConnected(fc)) = layers.get(i + 1) {
                    let run = run_wtfc(&x, *window, fc).map_err(wrap)?;
                    outputs.push(LayerOutput::Scores(run.scores.clone()));
                    jobs.push(classifier_trace(i, i + 1, layers, &run));
                    warnings.extend(run.warning.clone());
                    score_bound = run.bound;
                    classifier_ops = Some(run.ops);
                    scores = Some(run.scores);
                    i += 2;
                } else {
                    jobs.push(JobTrace {
                        first: i,
                        last: i,
                        label: label(&layers[i..=i]),
                        stats: stream_stats(tuples.len() as u64, 0, 0),
                        synops: 0,
                        qk_writes: None,
                    });
                    i += 1;
                }
            }
            LayerSpec::FullyConnected(fc) => {
                let x = prev_spikes(&outputs)?;
                let run = run_wtfc(&x, 1, fc).map_err(wrap)?;
                outputs.push(LayerOutput::Scores(run.scores.clone()));
                jobs.push(classifier_trace(i, i, layers, &run));
                score_bound = run.bound;
                classifier_ops = Some(run.ops);
                scores = Some(run.scores);
                i += 1;
            }
            LayerSpec::QkformerBlock(spec) => {
                let x = prev_spikes(&outputs)?;
                let q_job = LayerJob {
                    input: &x,
                    synapses: Synapses::Conv(&spec.q),
                    shortcuts: &[],
                    unit,
                    lif: Some(&spec.q_lif),
                };
                let q = run_layer_eventdriven(&q_job, cfg).map_err(wrap)?;
                let shortcut = [&x];
                let k_job = LayerJob {
                    input: &x,
                    synapses: Synapses::Conv(&spec.k),
                    shortcuts: if spec.residual { &shortcut } else { &[] },
                    unit,
                    lif: Some(&spec.k_lif),
                };
                let k = run_layer_eventdriven(&k_job, cfg).map_err(wrap)?;
                let mut stream: Vec<WriteBackEvent> = q
                    .log
                    .iter()
                    .map(|r| match r {
                        WritebackRecord::Spike { channel, token } => WriteBackEvent::QSpike {
                            channel: *channel,
                            token: *token,
                        },
                        WritebackRecord::TokensDone(t) => WriteBackEvent::QTokensDone(t.clone()),
                    })
                    .collect();
                stream.extend(k.log.iter().filter_map(|r| match r {
                    WritebackRecord::Spike { channel, token } => Some(WriteBackEvent::KSpike {
                        channel: *channel,
                        token: *token,
                    }),
                    WritebackRecord::TokensDone(_) => None,
                }));
                let shape = x.shape();
                let mut reg = AttenReg::new(spec.axis, shape);
                let (out, fly) = onthefly_writeback(stream.iter().cloned(), &mut reg, shape).map_err(wrap)?;
                let (_, base) = baseline_writeback(stream, shape).map_err(wrap)?;
                overflows += q.overflows + k.overflows;
                let mut stats = q.stats;
                stats.absorb(&k.stats);
                jobs.push(JobTrace {
                    first: i,
                    last: i,
                    label: label(&layers[i..=i]),
                    stats,
                    synops: q.stats.events_consumed + k.stats.events_consumed,
                    qk_writes: Some((fly, base)),
                });
                outputs.push(LayerOutput::Qk(Box::new(QkOutput {
                    q_sums: q.sums,
                    k_sums: k.sums,
                    q: q.spikes,
                    k: k.spikes,
                    mask: reg,
                    out,
                    overflows: q.overflows + k.overflows,
                })));
                i += 1;
            }
            LayerSpec::Lif(_) | LayerSpec::ResidualAdd { .. } => {
                return Err(CoreError::Graph {
                    layer: i,
                    reason: format!("{} has no producing conv or pooling stage", layers[i].kind()),
                });
            }
        }
    }

    let mut total = CycleStats::default();
    for j in &jobs {
        total.absorb(&j.stats);
    }
    Ok(EventRun {
        outputs,
        scores,
        score_bound,
        classifier_ops,
        jobs,
        total,
        overflows,
        warnings,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Verdict {
    /// Every layer output and score is bit-identical.
    Identical,
    /// Spikes identical; classifier scores differ within the truncation bound.
    WithinBound,
    Divergent,
}

impl Verdict {
    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::Identical => "identical",
            Verdict::WithinBound => "within-bound",
            Verdict::Divergent => "divergent",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct InvariantCheck {
    pub name: &'static str,
    pub holds: bool,
}

#[derive(Clone, Debug)]
pub struct Comparison {
    pub verdict: Verdict,
    pub reference: ReferenceRun,
    pub event: EventRun,
    pub reference_synops: Vec<u64>,
    /// Human-readable differences, one per layer that disagrees.
    pub mismatches: Vec<String>,
    pub invariants: Vec<InvariantCheck>,
}

fn same_output(a: &LayerOutput, b: &LayerOutput) -> bool {
    match (a, b) {
        (LayerOutput::Scores(x), LayerOutput::Scores(y)) => x.same_values(y),
        _ => a == b,
    }
}

/// Conservation and equivalence checks on an event-driven run.
pub fn check_invariants(run: &EventRun, reference_synops: u64) -> Vec<InvariantCheck> {
    let sum_cycles: u64 = run.jobs.iter().map(|j| j.stats.total_cycles()).sum();
    let sum_events: u64 = run.jobs.iter().map(|j| j.stats.events_consumed).sum();
    vec![
        InvariantCheck {
            name: "fifo-no-loss",
            holds: run.jobs.iter().all(|j| j.stats.fifo_conserved),
        },
        InvariantCheck {
            name: "event-conservation",
            holds: run.jobs.iter().all(|j| j.stats.events_balance()) && run.synops() == reference_synops,
        },
        InvariantCheck {
            name: "pe-cycle-balance",
            holds: run.jobs.iter().all(|j| j.stats.pe_cycles_balance()),
        },
        InvariantCheck {
            name: "stats-additivity",
            holds: sum_cycles == run.total.total_cycles() && sum_events == run.total.events_consumed,
        },
        InvariantCheck {
            name: "qk-write-count",
            holds: run.jobs.iter().all(|j| match &j.qk_writes {
                Some((fly, base)) => fly.buffer_writes == base.buffer_writes && fly.buffer_reads == 0,
                None => true,
            }),
        },
    ]
}

/// Run both executors and classify the agreement.
pub fn compare(model: &ModelGraph, input: &SpikeTensor, cfg: &EpaConfig) -> Result<Comparison> {
    let reference = run_reference(model, input)?;
    let event = run_eventdriven(model, input, cfg)?;
    let reference_synops = reference_synops(model, input, &reference)?;
    let mut mismatches = Vec::new();
    let mut spikes_agree = true;
    let mut scores_within = true;
    for (i, (r, e)) in reference.outputs.iter().zip(&event.outputs).enumerate() {
        if same_output(r, e) {
            continue;
        }
        let kind = model.layers()[i].kind();
        if let (LayerOutput::Scores(rs), LayerOutput::Scores(es)) = (r, e) {
            scores_within &= within_bound(es, rs, event.score_bound);
        } else {
            spikes_agree = false;
        }
        mismatches.push(format!("layer {i} ({kind}) differs"));
    }
    if reference.outputs.len() != event.outputs.len() {
        spikes_agree = false;
        mismatches.push(format!(
            "trace lengths differ: {} vs {}",
            reference.outputs.len(),
            event.outputs.len()
        ));
    }
    let invariants = check_invariants(&event, reference_synops.iter().sum());
    let all_hold = invariants.iter().all(|c| c.holds);
    for c in invariants.iter().filter(|c| !c.holds) {
        mismatches.push(format!("invariant {} violated", c.name));
    }
    let verdict = if !spikes_agree || !scores_within || !all_hold {
        Verdict::Divergent
    } else if mismatches.is_empty() {
        Verdict::Identical
    } else {
        Verdict::WithinBound
    };
    Ok(Comparison {
        verdict,
        reference,
        event,
        reference_synops,
        mismatches,
        invariants,
    })
}

/// Layer kinds present in a model, for coverage checks.
pub fn kinds_present(model: &ModelGraph) -> Vec<LayerKind> {
    LayerKind::ALL.iter().copied().filter(|k| model.kinds().contains(k)).collect()
}
