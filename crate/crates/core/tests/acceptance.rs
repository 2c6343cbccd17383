// SPDX-License-Identifier: Apache-2.0

//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::fmt::Write as _;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use snnsim_core::engine::{compare, run_eventdriven, Verdict};
use snnsim_core::epa::{run_layer_eventdriven, EpaConfig, LayerJob, Synapses};
use snnsim_core::metrics::{derive_efficiency, normalized_efficiency, reference_synops, RunMetrics};
use snnsim_core::reference::{avg_pool_ref, conv_layer_ref, fc_on_pooled, lif_map, run_reference, LayerOutput};
use snnsim_core::synth::{random_inputs, toy_model, ToyConfig};
use snnsim_core::w2ttfs::{ttfs_fc_exact, w2ttfs_encode, ScaleTable};
use snnsim_core::wtfc::{run_wtfc, within_bound};
use snnsim_core::{
    ConvSpec, FcSpec, FixedPointFormat, FixedTensor, LayerSpec, LifParams, MaskAxis, ModelGraph, PowerModel,
    QkBlockSpec, ResetMode, Shape3, SpikeTensor,
};

/// Outcome of one criterion; `report` must be identical across runs and worker counts.
struct Outcome {
    pass: bool,
    summary: String,
    report: String,
}

fn pool(workers: usize) -> rayon::ThreadPool {
    rayon::ThreadPoolBuilder::new().num_threads(workers).build().expect("thread pool")
}

fn fixed(rng: &mut ChaCha8Rng, shape: Vec<usize>, lo: i32, hi: i32, step: i32) -> FixedTensor {
    let n = shape.iter().product();
    let v = (0..n).map(|_| (rng.gen_range(lo..=hi) / step * step) as i8).collect();
    FixedTensor::new(shape, FixedPointFormat::default(), v).unwrap()
}

// 1. PipeSDA + EPA against dense conv + LIF.
fn sparse_dense_equivalence(workers: usize) -> Outcome {
    let densities = [0.0, 0.05, 0.5, 1.0];
    let lines: Vec<(bool, String)> = pool(workers).install(|| {
        (0..200u64)
            .into_par_iter()
            .map(|i| {
                let mut rng = ChaCha8Rng::seed_from_u64(1_000 + i);
                let (c, oc) = (rng.gen_range(1..=8), rng.gen_range(1..=8));
                let (h, w) = (rng.gen_range(4..=16), rng.gen_range(4..=16));
                let k = [1, 3][rng.gen_range(0..2)];
                let s = rng.gen_range(1..=2);
                let p = rng.gen_range(0..=1);
                let d = densities[i as usize % 4];
                let conv = ConvSpec::new(c, oc, k, s, p, fixed(&mut rng, vec![oc, c, k, k], -128, 127, 1)).unwrap();
                let lif = LifParams::with_shift(rng.gen_range(0..4), rng.gen_range(1..200), ResetMode::HardZero).unwrap();
                let x = SpikeTensor::random(Shape3::new(c, h, w), d, &mut rng);
                let job = LayerJob {
                    input: &x,
                    synapses: Synapses::Conv(&conv),
                    shortcuts: &[],
                    unit: 16,
                    lif: Some(&lif),
                };
                let run = run_layer_eventdriven(&job, &EpaConfig::default()).unwrap();
                let dense = conv_layer_ref(&x, &conv).unwrap();
                let (golden, _) = lif_map(&dense, &lif);
                let ok = run.spikes == golden
                    && run.sums == dense
                    && run.stats.fifo_conserved
                    && run.stats.pe_cycles_balance()
                    && run.stats.events_balance();
                let line = format!(
                    "conv {i}: c={c} oc={oc} {h}x{w} k={k} s={s} p={p} d={d} out_spikes={} events={} cycles={} {}",
                    golden.total_spikes(),
                    run.stats.events_consumed,
                    run.stats.total_cycles(),
                    if ok { "ok" } else { "MISMATCH" }
                );
                (ok, line)
            })
            .collect()
    });
    let bad = lines.iter().filter(|(ok, _)| !ok).count();
    Outcome {
        pass: bad == 0,
        summary: format!("200 conv layers, {bad} mismatches"),
        report: lines.into_iter().map(|(_, l)| l + "\n").collect(),
    }
}

struct TtfsFixture {
    map: SpikeTensor,
    window: usize,
    fc: FcSpec,
    aligned: FcSpec,
}

fn ttfs_fixtures() -> Vec<TtfsFixture> {
    (0..100u64)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(2_000 + i);
            let window = [2, 4][i as usize % 2];
            let (c, oh, ow) = (rng.gen_range(1..=4), rng.gen_range(1..=4), rng.gen_range(1..=4));
            let classes = rng.gen_range(2..=10);
            let d = rng.gen_range(0.0..1.0);
            let map = SpikeTensor::random(Shape3::new(c, oh * window, ow * window), d, &mut rng);
            let f = c * oh * ow;
            let fc = FcSpec::new(f, classes, fixed(&mut rng, vec![classes, f], -128, 127, 1)).unwrap();
            let step = (window * window) as i32;
            let aligned = FcSpec::new(f, classes, fixed(&mut rng, vec![classes, f], -128, 127, step)).unwrap();
            TtfsFixture { map, window, fc, aligned }
        })
        .collect()
}

// 2. W2TTFS + exact classifier against average pooling + classifier.
fn w2ttfs_exactness(workers: usize) -> Outcome {
    let fixtures = ttfs_fixtures();
    let lines: Vec<(bool, String)> = pool(workers).install(|| {
        fixtures
            .par_iter()
            .enumerate()
            .map(|(i, fx)| {
                let s = fx.map.shape();
                let code = w2ttfs_encode(&fx.map, s.height / fx.window, s.width / fx.window).unwrap();
                let exact = ttfs_fc_exact(&code, &fx.fc.weights, &ScaleTable::new(fx.window)).unwrap();
                let pooled = fc_on_pooled(&avg_pool_ref(&fx.map, fx.window).unwrap(), &fx.fc);
                let ok = exact == pooled && exact.argmax() == pooled.argmax();
                (ok, format!("pair {i}: window={} class={:?} {}", fx.window, exact.argmax(), if ok { "ok" } else { "MISMATCH" }))
            })
            .collect()
    });
    let bad = lines.iter().filter(|(ok, _)| !ok).count();
    Outcome {
        pass: bad == 0,
        summary: format!("100 pairs, {bad} mismatches, argmax agreement {}%", 100 - bad),
        report: lines.into_iter().map(|(_, l)| l + "\n").collect(),
    }
}

// 3. Shift-and-repeat classifier within its truncation bound; exact when aligned.
fn wtfc_bound(workers: usize) -> Outcome {
    let fixtures = ttfs_fixtures();
    let lines: Vec<(bool, String)> = pool(workers).install(|| {
        fixtures
            .par_iter()
            .enumerate()
            .map(|(i, fx)| {
                let s = fx.map.shape();
                let code = w2ttfs_encode(&fx.map, s.height / fx.window, s.width / fx.window).unwrap();
                let scales = ScaleTable::new(fx.window);
                let exact = ttfs_fc_exact(&code, &fx.fc.weights, &scales).unwrap();
                let run = run_wtfc(&fx.map, fx.window, &fx.fc).unwrap();
                let exact_a = ttfs_fc_exact(&code, &fx.aligned.weights, &scales).unwrap();
                let run_a = run_wtfc(&fx.map, fx.window, &fx.aligned).unwrap();
                let in_bound = within_bound(&run.scores, &exact, run.bound);
                let bit_exact = run_a.scores.same_values(&exact_a);
                let no_mul = run.ops.multiplies == 0 && run_a.ops.multiplies == 0;
                let ok = in_bound && bit_exact && no_mul;
                (ok, format!("pair {i}: bound={} in_bound={in_bound} aligned_exact={bit_exact}", run.bound))
            })
            .collect()
    });
    let bad = lines.iter().filter(|(ok, _)| !ok).count();
    Outcome {
        pass: bad == 0,
        summary: format!("100 pairs (raw and aligned weights), {bad} failures"),
        report: lines.into_iter().map(|(_, l)| l + "\n").collect(),
    }
}

// 4. On-the-fly attention write-back against the dense block.
fn qk_onthefly(workers: usize) -> Outcome {
    let lines: Vec<(bool, String)> = pool(workers).install(|| {
        (0..100u64)
            .into_par_iter()
            .map(|i| {
                let mut rng = ChaCha8Rng::seed_from_u64(4_000 + i);
                let c = rng.gen_range(1..=6);
                let (h, w) = (rng.gen_range(2..=8), rng.gen_range(2..=8));
                let axis = if i % 4 == 3 { MaskAxis::Channel } else { MaskAxis::Token };
                let lif = |rng: &mut ChaCha8Rng| LifParams::with_shift(1, rng.gen_range(4..40), ResetMode::HardZero).unwrap();
                let spec = QkBlockSpec {
                    channels: c,
                    q: ConvSpec::new(c, c, 1, 1, 0, fixed(&mut rng, vec![c, c, 1, 1], -30, 40, 1)).unwrap(),
                    q_lif: lif(&mut rng),
                    k: ConvSpec::new(c, c, 1, 1, 0, fixed(&mut rng, vec![c, c, 1, 1], -30, 40, 1)).unwrap(),
                    k_lif: lif(&mut rng),
                    residual: rng.gen_bool(0.5),
                    axis,
                };
                let shape = Shape3::new(c, h, w);
                let model = ModelGraph::new(shape, FixedPointFormat::default(), vec![LayerSpec::QkformerBlock(spec)]).unwrap();
                let x = SpikeTensor::random(shape, rng.gen_range(0.0..1.0), &mut rng);
                let golden = run_reference(&model, &x).unwrap();
                let (ok, writes) = match run_eventdriven(&model, &x, &EpaConfig::default()) {
                    Ok(ev) => {
                        let same = matches!((&golden.outputs[0], &ev.outputs[0]),
                            (LayerOutput::Qk(a), LayerOutput::Qk(b)) if a.out == b.out && a.mask == b.mask);
                        let (fly, base) = ev.jobs[0].qk_writes.expect("qk job records writes");
                        (same && fly.buffer_writes == base.buffer_writes && fly.buffer_reads == 0, fly.buffer_writes)
                    }
                    // an ordering violation surfaces here
                    Err(_) => (false, 0),
                };
                (ok, format!("block {i}: c={c} {h}x{w} {axis:?} writes={writes} {}", if ok { "ok" } else { "MISMATCH" }))
            })
            .collect()
    });
    let bad = lines.iter().filter(|(ok, _)| !ok).count();
    Outcome {
        pass: bad == 0,
        summary: format!("100 blocks, {bad} mismatches"),
        report: lines.into_iter().map(|(_, l)| l + "\n").collect(),
    }
}

// 5. Silence costs nothing; one spike costs exactly its incidence.
fn sparsity_law(_workers: usize) -> Outcome {
    let mut report = String::new();
    let mut pass = true;
    let model = toy_model(7, &ToyConfig::default()).unwrap();
    let zero = SpikeTensor::zeros(model.input_shape());
    let z = run_eventdriven(&model, &zero, &EpaConfig::default()).unwrap();
    let zero_ok = z.total.compute_cycles == 0 && z.synops() == 0;
    pass &= zero_ok;
    let _ = writeln!(report, "zero input: compute_cycles={} synops={}", z.total.compute_cycles, z.synops());

    for oc in [1usize, 4, 8] {
        let mut rng = ChaCha8Rng::seed_from_u64(5_000 + oc as u64);
        let conv = ConvSpec::new(3, oc, 3, 1, 1, fixed(&mut rng, vec![oc, 3, 3, 3], -128, 127, 1)).unwrap();
        let mut x = SpikeTensor::zeros(Shape3::new(3, 9, 9));
        x.set(1, 4, 5, true);
        let lif = LifParams::default();
        let job = LayerJob {
            input: &x,
            synapses: Synapses::Conv(&conv),
            shortcuts: &[],
            unit: 16,
            lif: Some(&lif),
        };
        let run = run_layer_eventdriven(&job, &EpaConfig::default()).unwrap();
        let ok = run.stats.events_consumed == 9 * oc as u64;
        pass &= ok;
        let _ = writeln!(report, "single interior spike, oc={oc}: events={} expected={}", run.stats.events_consumed, 9 * oc);
    }

    let mut one = SpikeTensor::zeros(model.input_shape());
    one.set(0, 7, 7, true);
    let ev = run_eventdriven(&model, &one, &EpaConfig::default()).unwrap();
    let golden = run_reference(&model, &one).unwrap();
    let dense: u64 = reference_synops(&model, &one, &golden).unwrap().iter().sum();
    pass &= ev.synops() == dense;
    let _ = writeln!(report, "single spike through toy model: synops={} dense={dense}", ev.synops());
    Outcome {
        pass,
        summary: format!("zero input silent={zero_ok}, single-spike incidence exact"),
        report,
    }
}

// 6. Efficiency formulas against the published operating point.
fn metric_arithmetic(_workers: usize) -> Outcome {
    let synops = 6.1e8;
    let fps = 68.0;
    let g = derive_efficiency(synops, 1.0 / fps, 0.792).unwrap();
    let n = normalized_efficiency(g, 71.7).unwrap();
    let g_err = (g - 52.37).abs() / 52.37;
    let n_err = (n - 0.73).abs() / 0.73;
    // the same numbers through the per-frame path at the default clock
    let power = PowerModel::default();
    let cycles = (2.0e8 / fps).round() as u64;
    let m = RunMetrics::from_counts(0, synops as u64, cycles, 2.0e8, &power).unwrap();
    let m_err = (m.gsops_per_watt - 52.37).abs() / 52.37;
    let pass = g_err < 0.01 && n_err < 0.02 && m_err < 0.01;
    Outcome {
        pass,
        summary: format!("{g:.2} GSOPS/W ({:.2}% off), {n:.3} per kLUT ({:.2}% off)", 100.0 * g_err, 100.0 * n_err),
        report: format!(
            "gsops_per_watt={g:.6} rel_err={g_err:.6}\neff_per_klut={n:.6} rel_err={n_err:.6}\nframe_path_gsops={:.6} energy_j={:.6e}\n",
            m.gsops_per_watt, m.energy_j
        ),
    }
}

// 7. Whole toy model in compare mode.
fn end_to_end_compare(workers: usize) -> Outcome {
    let model = toy_model(42, &ToyConfig::default()).unwrap();
    let inputs = random_inputs(42, model.input_shape(), 4, 0.3);
    let results: Vec<(bool, String)> = pool(workers).install(|| {
        inputs
            .par_iter()
            .enumerate()
            .map(|(i, x)| {
                let c = compare(&model, x, &EpaConfig::default()).unwrap();
                let inv: Vec<String> = c.invariants.iter().map(|v| format!("{}={}", v.name, v.holds)).collect();
                let ok = c.verdict == Verdict::Identical && c.invariants.iter().all(|v| v.holds);
                let line = format!(
                    "image {i}: verdict={} class={:?} spikes={} synops={} cycles={} {}",
                    c.verdict.as_str(),
                    c.event.predicted_class(),
                    c.event.total_spikes(),
                    c.event.synops(),
                    c.event.total.total_cycles(),
                    inv.join(" ")
                );
                (ok, line)
            })
            .collect()
    });
    let bad = results.iter().filter(|(ok, _)| !ok).count();
    Outcome {
        pass: bad == 0,
        summary: format!("toy model with all 7 layer kinds, {} images, {bad} not identical", inputs.len()),
        report: results.into_iter().map(|(_, l)| l + "\n").collect(),
    }
}

type Criterion = fn(usize) -> Outcome;

const CRITERIA: [(&str, Criterion, Duration); 7] = [
    ("sparse/dense equivalence", sparse_dense_equivalence, Duration::from_secs(60)),
    ("w2ttfs exactness", w2ttfs_exactness, Duration::from_secs(10)),
    ("wtfc truncation bound", wtfc_bound, Duration::from_secs(10)),
    ("qk on-the-fly vs oracle", qk_onthefly, Duration::from_secs(60)),
    ("event-driven sparsity law", sparsity_law, Duration::from_secs(60)),
    ("metric arithmetic", metric_arithmetic, Duration::from_secs(10)),
    ("end-to-end compare", end_to_end_compare, Duration::from_secs(30)),
];

fn main() -> ExitCode {
    let mut failed = 0;
    let mut reports = Vec::new();
    for (n, (name, run, limit)) in CRITERIA.iter().enumerate() {
        let t = Instant::now();
        let out = run(1);
        let elapsed = t.elapsed();
        let pass = out.pass && elapsed < *limit;
        failed += !pass as usize;
        println!(
            "criterion {}: {} [{}] {} ({:.2}s, limit {}s)",
            n + 1,
            if pass { "PASS" } else { "FAIL" },
            name,
            out.summary,
            elapsed.as_secs_f64(),
            limit.as_secs()
        );
        reports.push(out.report);
    }

    // 8. Every report again, twice on one worker and twice on four.
    let mut diffs = Vec::new();
    for (n, (name, run, _)) in CRITERIA.iter().enumerate() {
        for workers in [1, 1, 4, 4] {
            if run(workers).report != reports[n] {
                diffs.push(format!("{name} (workers={workers})"));
            }
        }
    }
    let pass = diffs.is_empty();
    failed += !pass as usize;
    println!(
        "criterion 8: {} [determinism] {} criteria x 4 reruns (workers 1,1,4,4), {} differing reports{}",
        if pass { "PASS" } else { "FAIL" },
        CRITERIA.len(),
        diffs.len(),
        if pass { String::new() } else { format!(": {}", diffs.join(", ")) }
    );

    if failed == 0 {
        println!("acceptance: all 8 criteria passed");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: {failed} criteria failed");
        ExitCode::FAILURE
    }
}
