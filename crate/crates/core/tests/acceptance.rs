//! Acceptance gate. Prints one line per criterion and exits non-zero if any
//! criterion fails outright. Soft failures and skips are reported but do
//! not fail the run.
//!
//! `STMAMBA_BCI2A_DIR` enables the full-data track: a directory of
//! per-subject archives (`*.eta`, both sessions in one file).
//! `STMAMBA_BCI2A_EPOCHS` overrides its epoch budget.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stmamba::data::{
    augment_recombine, effective_length, read_archive, synth_generate, BandPowerOracle, Dataset, EEGTrialSet, SplitSpec,
    Splits, SynthConfig,
};
use stmamba::encoder::{EncoderConfig, EncoderStack};
use stmamba::model::{Ablation, ModelConfig, STMambaNet};
use stmamba::ssm::{lti_convolve, scan_parallel, scan_sequential, ssm_kernel_lti, MambaBlock, MambaConfig, ScanMode, SsmParams};
use stmamba::tensor::gradcheck::{grad_check, FnObjective};
use stmamba::tensor::{sliding_pool, Activation, BatchNorm, Conv2dSpec, NormConfig, PoolKind};
use stmamba::training::{evaluate, train_loop, TrainConfig};
use stmamba::{Float, Graph, Mode, ParamStore, Result, Tensor, Var};

const DUALITY_TOL_F32: f64 = 1e-5;
const DUALITY_TOL_F64: f64 = 1e-10;
const DUALITY_SYSTEMS: usize = 50;
const PARALLEL_TOL_F32: f64 = 1e-5;
const QUICK_LIMIT: Duration = Duration::from_secs(10);
const LAYER_TOL: f64 = 1e-4;
const MODEL_TOL: f64 = 1e-3;
const GRAD_LIMIT: Duration = Duration::from_secs(180);
const POOL_TOL: f64 = 1e-5;
const POOL_SIGNALS: usize = 100;
const LEARN_EPOCHS: usize = 150;
const LEARN_FULL_MIN: f64 = 90.0;
const LEARN_NONE_MIN: f64 = 70.0;
const ORACLE_MIN: f64 = 95.0;
const LEARN_LIMIT: Duration = Duration::from_secs(15 * 60);
const ORDER_SEEDS: u64 = 5;
const ORDER_SNR_DB: f64 = -10.0;
const ORDER_TRAIN_PER_CLASS: usize = 50;
const ORDER_EPOCHS: usize = 12;
const ORDER_MARGIN: f64 = 1.0;
/// Two-sided 95% Student t quantile, 4 degrees of freedom.
const T_95_DF4: f64 = 2.776;
const SLOPE_MAX: f64 = 1.2;
const SCAN_REPEATS: usize = 21;
const TABLE_REFERENCE: f64 = 82.37;
const TABLE_BAND: f64 = 5.0;

#[derive(Clone, Copy, PartialEq, Eq)]
enum Status {
    Pass,
    Fail,
    Soft,
    Skip,
}

impl fmt::Display for Status {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(match self {
            Status::Pass => "PASS",
            Status::Fail => "FAIL",
            Status::Soft => "SOFT-FAIL",
            Status::Skip => "SKIP",
        })
    }
}

struct Outcome {
    status: Status,
    detail: String,
}

fn verdict(ok: bool, detail: String) -> Outcome {
    Outcome { status: if ok { Status::Pass } else { Status::Fail }, detail }
}

fn uniform<T: Float>(shape: &[usize], rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> Tensor<T> {
    Tensor::from_fn(shape, |_| T::of(rng.random_range(lo..hi)))
}

fn lti_system<T: Float>(rng: &mut ChaCha8Rng, d: usize, l: usize, n: usize) -> (SsmParams<T>, Tensor<T>) {
    let dt: Vec<f64> = (0..d).map(|_| rng.random_range(0.01..0.5)).collect();
    let bs: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let cs: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let p = SsmParams {
        a: uniform(&[d, n], rng, -2.0, -0.05),
        delta: Tensor::from_fn(&[1, d, l], |i| T::of(dt[(i / l) % d])),
        bsel: Tensor::from_fn(&[1, l, n], |i| T::of(bs[i % n])),
        csel: Tensor::from_fn(&[1, l, n], |i| T::of(cs[i % n])),
        dskip: uniform(&[d], rng, -1.0, 1.0),
    };
    let x = uniform(&[1, d, l], rng, -1.0, 1.0);
    (p, x)
}

fn duality_error<T: Float>(seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (d, l, n) = (rng.random_range(1..=4), rng.random_range(1..=128), rng.random_range(1..=16));
    let (p, x) = lti_system::<T>(&mut rng, d, l, n);
    let (abar, bbar) = p.discretize()?;
    let kernel = ssm_kernel_lti(&abar, &bbar, &p.csel, l)?;
    let conv = lti_convolve(&x, &kernel, &p.dskip)?;
    let scan = scan_sequential(&abar, &bbar, &p.csel, &x, &p.dskip)?;
    Ok(conv.rel_err(&scan))
}

fn ssm_duality() -> Result<Outcome> {
    let start = Instant::now();
    let (mut e32, mut e64) = (0.0f64, 0.0f64);
    for seed in 0..DUALITY_SYSTEMS as u64 {
        e32 = e32.max(duality_error::<f32>(seed)?);
        e64 = e64.max(duality_error::<f64>(seed)?);
    }
    let t = start.elapsed();
    Ok(verdict(
        e32 < DUALITY_TOL_F32 && e64 < DUALITY_TOL_F64 && t < QUICK_LIMIT,
        format!(
            "{DUALITY_SYSTEMS} LTI systems: max rel err f32 {e32:.2e} (< {DUALITY_TOL_F32:.0e}), f64 {e64:.2e} (< {DUALITY_TOL_F64:.0e}), {:.2} s (< {} s)",
            t.as_secs_f64(),
            QUICK_LIMIT.as_secs()
        ),
    ))
}

fn parallel_scan() -> Result<Outcome> {
    let start = Instant::now();
    let mut worst = 0.0f64;
    let mut cases = 0;
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let (b, d, l, n) = (2, 3, rng.random_range(1..=128), rng.random_range(1..=16));
        let p = SsmParams::<f32> {
            a: uniform(&[d, n], &mut rng, -2.0, -0.05),
            delta: uniform(&[b, d, l], &mut rng, 0.01, 0.5),
            bsel: uniform(&[b, l, n], &mut rng, -1.0, 1.0),
            csel: uniform(&[b, l, n], &mut rng, -1.0, 1.0),
            dskip: uniform(&[d], &mut rng, -1.0, 1.0),
        };
        let x = uniform(&[b, d, l], &mut rng, -1.0, 1.0);
        let (abar, bbar) = p.discretize()?;
        let seq = scan_sequential(&abar, &bbar, &p.csel, &x, &p.dskip)?;
        for chunk in [1, 2, 4, 16, 32, l] {
            let par = scan_parallel(&abar, &bbar, &p.csel, &x, &p.dskip, chunk)?;
            worst = worst.max(par.max_abs_diff(&seq) as f64);
            cases += 1;
        }
    }
    let t = start.elapsed();
    Ok(verdict(
        worst < PARALLEL_TOL_F32 && t < QUICK_LIMIT,
        format!(
            "{cases} system/chunk pairs, chunks {{1,2,4,16,32,L}}: max abs err {worst:.2e} (< {PARALLEL_TOL_F32:.0e}), {:.2} s",
            t.as_secs_f64()
        ),
    ))
}

/// Weighted sum of `y` with fixed random weights, so every output element
/// carries a distinct cotangent.
fn probe(g: &mut Graph<f64>, y: Var, seed: u64) -> Result<Var> {
    let w = uniform(g.shape(y), &mut ChaCha8Rng::seed_from_u64(seed), -1.0, 1.0);
    let wv = g.input(w);
    let m = g.mul(y, wv)?;
    g.sum(m)
}

type Layer = (&'static str, ParamStore<f64>, Box<dyn FnMut(&mut Graph<f64>, &ParamStore<f64>) -> Result<Var>>);

fn layers() -> Result<Vec<Layer>> {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let mut out: Vec<Layer> = Vec::new();

    let mut s = ParamStore::new();
    let (x, w, b) = (
        s.add("x", uniform(&[2, 2, 4, 9], &mut rng, -1.0, 1.0), false),
        s.add("w", uniform(&[3, 2, 2, 3], &mut rng, -1.0, 1.0), false),
        s.add("b", uniform(&[3], &mut rng, -1.0, 1.0), false),
    );
    out.push(("conv2d", s, Box::new(move |g, s| {
        let (xv, wv, bv) = (g.param(s, x), g.param(s, w), g.param(s, b));
        let y = g.conv2d(xv, wv, Some(bv), Conv2dSpec { pad: [1, 2], stride: [1, 2] })?;
        probe(g, y, 1)
    })));

    let mut s = ParamStore::new();
    let (x, w) = (s.add("x", uniform(&[2, 3, 10], &mut rng, -1.0, 1.0), false), s.add("w", uniform(&[3, 4], &mut rng, -1.0, 1.0), false));
    out.push(("causal conv", s, Box::new(move |g, s| {
        let (xv, wv) = (g.param(s, x), g.param(s, w));
        let y = g.causal_conv1d(xv, wv)?;
        probe(g, y, 2)
    })));

    for mode in [Mode::Train, Mode::Infer] {
        let mut s = ParamStore::new();
        let x = s.add("x", uniform(&[4, 3, 2, 5], &mut rng, -2.0, 2.0), false);
        let mut bn = BatchNorm::new(&mut s, "bn", 3, NormConfig::default());
        s.value_mut(bn.gamma).data_mut().copy_from_slice(&[0.5, 1.5, -1.0]);
        s.value_mut(bn.beta).data_mut().copy_from_slice(&[0.1, -0.2, 0.3]);
        let warm = uniform::<f64>(&[4, 3, 2, 5], &mut rng, -1.0, 3.0);
        let mut g = Graph::new();
        let wv = g.input(warm);
        bn.forward(&mut g, &s, wv, Mode::Train)?;
        let name = if mode == Mode::Train { "batch norm (train)" } else { "batch norm (infer)" };
        out.push((name, s, Box::new(move |g, s| {
            let mut bn = bn.clone();
            let xv = g.param(s, x);
            let y = bn.forward(g, s, xv, mode)?;
            probe(g, y, 3)
        })));
    }

    let mut s = ParamStore::new();
    let (x, gm, bt) = (
        s.add("x", uniform(&[2, 3, 6], &mut rng, -2.0, 2.0), false),
        s.add("gamma", uniform(&[6], &mut rng, 0.5, 1.5), false),
        s.add("beta", uniform(&[6], &mut rng, -0.5, 0.5), false),
    );
    out.push(("layer norm", s, Box::new(move |g, s| {
        let (xv, gv, bv) = (g.param(s, x), g.param(s, gm), g.param(s, bt));
        let y = g.layer_norm(xv, gv, bv, 1e-5)?;
        probe(g, y, 4)
    })));

    for (name, kind) in [
        ("elu", Activation::Elu),
        ("silu", Activation::Silu),
        ("softplus", Activation::Softplus),
        ("sigmoid", Activation::Sigmoid),
        ("exp", Activation::Exp),
    ] {
        let mut s = ParamStore::new();
        let x = s.add("x", uniform(&[3, 7], &mut rng, -3.0, 3.0), false);
        out.push((name, s, Box::new(move |g, s| {
            let xv = g.param(s, x);
            let y = g.activation(xv, kind)?;
            probe(g, y, 5)
        })));
    }

    for (name, kind) in [("avg pool", PoolKind::Avg), ("var pool", PoolKind::Var)] {
        let mut s = ParamStore::new();
        let x = s.add("x", uniform(&[2, 2, 1, 23], &mut rng, -2.0, 2.0), false);
        out.push((name, s, Box::new(move |g, s| {
            let xv = g.param(s, x);
            let y = g.sliding_pool(xv, kind, 7, 4)?;
            probe(g, y, 6)
        })));
    }

    let mut s = ParamStore::new();
    let (x, w, b) = (
        s.add("x", uniform(&[2, 3, 5], &mut rng, -1.0, 1.0), false),
        s.add("w", uniform(&[4, 5], &mut rng, -1.0, 1.0), false),
        s.add("b", uniform(&[4], &mut rng, -1.0, 1.0), false),
    );
    out.push(("linear", s, Box::new(move |g, s| {
        let (xv, wv, bv) = (g.param(s, x), g.param(s, w), g.param(s, b));
        let y = g.linear(xv, wv, Some(bv))?;
        probe(g, y, 7)
    })));

    for (name, scan) in [("mamba block (sequential)", ScanMode::Sequential), ("mamba block (parallel)", ScanMode::Parallel { chunk: 3 })] {
        let mut s = ParamStore::new();
        let mut cfg = MambaConfig::new(6);
        cfg.d_state = 4;
        cfg.train_scan = scan;
        let block = MambaBlock::new(&mut s, "m", cfg, &mut rng)?;
        let x = s.add("x", uniform(&[2, 9, 6], &mut rng, -1.0, 1.0), false);
        out.push((name, s, Box::new(move |g, s| {
            let xv = g.param(s, x);
            let y = block.forward(g, s, xv, Mode::Train)?;
            probe(g, y, 8)
        })));
    }
    Ok(out)
}

fn gradient_suite() -> Result<Outcome> {
    let start = Instant::now();
    let mut worst = 0.0f64;
    let mut failed = Vec::new();
    let mut count = 0;
    for (name, store, f) in layers()? {
        let mut obj = FnObjective::new(store, f);
        let r = grad_check(&mut obj, 1e-6, LAYER_TOL, None)?;
        worst = worst.max(r.max_rel_err());
        count += 1;
        if !r.passed() {
            failed.push(format!("{name} {:.1e}", r.max_rel_err()));
        }
    }

    let mut model = STMambaNet::<f64>::new(ModelConfig::tiny(), 3)?;
    let x = uniform::<f64>(&[4, 3, 64], &mut ChaCha8Rng::seed_from_u64(9), -1.0, 1.0);
    let mut g = Graph::new();
    let xv = g.input(x.clone());
    model.forward(&mut g, xv, Mode::Train, &mut ChaCha8Rng::seed_from_u64(0))?;
    let store = model.store.clone();
    let mut obj = FnObjective::new(store, move |g, s| {
        let mut m = model.clone();
        m.store = s.clone();
        let xv = g.input(x.clone());
        let logits = m.forward(g, xv, Mode::Train, &mut ChaCha8Rng::seed_from_u64(1))?;
        g.cross_entropy(logits, &[0, 1, 1, 0])
    });
    let full = grad_check(&mut obj, 1e-5, MODEL_TOL, Some((600, 5)))?;
    if !full.passed() {
        failed.push(format!("full model {:.1e}", full.max_rel_err()));
    }
    let t = start.elapsed();
    Ok(verdict(
        failed.is_empty() && t < GRAD_LIMIT,
        format!(
            "{count} layers max rel err {worst:.1e} (<= {LAYER_TOL:.0e}); tiny full model {:.1e} over {} sampled entries (<= {MODEL_TOL:.0e}); {:.1} s (< {} s){}",
            full.max_rel_err(),
            full.params.iter().map(|p| p.checked).sum::<usize>(),
            t.as_secs_f64(),
            GRAD_LIMIT.as_secs(),
            if failed.is_empty() { String::new() } else { format!("; failed: {}", failed.join(", ")) }
        ),
    ))
}

fn residual_identity() -> Result<Outcome> {
    let mut mismatches = 0;
    let mut cases = 0;
    for seed in 0..10u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let width = rng.random_range(2..=24);
        let mut cfg = EncoderConfig::new(width);
        cfg.dropout = 0.3;
        let mut store = ParamStore::<f32>::new();
        let stack = EncoderStack::new(&mut store, "enc", &cfg, &mut rng)?;
        for layer in &stack.layers {
            for id in [layer.mamba.out_proj, layer.ffn_out.0, layer.ffn_out.1] {
                store.value_mut(id).data_mut().fill(0.0);
            }
        }
        let x: Tensor<f32> = uniform(&[3, rng.random_range(1..=30), width], &mut rng, -5.0, 5.0);
        for mode in [Mode::Train, Mode::Infer] {
            let mut g = Graph::new();
            let xv = g.input(x.clone());
            let y = stack.forward(&mut g, &store, xv, mode, &mut rng)?;
            let same = g.value(y).data().iter().zip(x.data()).all(|(a, b)| a.to_bits() == b.to_bits());
            mismatches += usize::from(!same);
            cases += 1;
        }
    }
    Ok(verdict(mismatches == 0, format!("{cases} stacks/modes with zeroed output projections, {mismatches} not bitwise identity")))
}

fn pooling_oracles() -> Result<Outcome> {
    let mut worst = 0.0f64;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..POOL_SIGNALS {
        let len = rng.random_range(80..=400);
        let window = rng.random_range(1..=75.min(len));
        let stride = rng.random_range(1..=15);
        let len = window + ((len - window) / stride) * stride;
        let x: Tensor<f32> = uniform(&[1, 1, 1, len], &mut rng, -3.0, 3.0);
        let avg = sliding_pool(&x, PoolKind::Avg, window, stride)?;
        let var = sliding_pool(&x, PoolKind::Var, window, stride)?;
        for (j, start) in (0..=len - window).step_by(stride).enumerate() {
            let w: Vec<f64> = x.data()[start..start + window].iter().map(|&v| v as f64).collect();
            let mean = w.iter().sum::<f64>() / window as f64;
            let v = w.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / window as f64;
            worst = worst.max((avg.data()[j] as f64 - mean).abs()).max((var.data()[j] as f64 - v).abs());
        }
    }
    let constant = Tensor::<f32>::full(&[2, 3, 1, 210], 7.3);
    let zero = sliding_pool(&constant, PoolKind::Var, 75, 15)?.data().iter().all(|&v| v == 0.0);
    Ok(verdict(
        worst < POOL_TOL && zero,
        format!("{POOL_SIGNALS} random f32 signals: max abs err vs two-pass {worst:.2e} (< {POOL_TOL:.0e}); constant variance exactly 0: {zero}"),
    ))
}

fn augmentation_audit() -> Result<Outcome> {
    let real = synth_generate(&SynthConfig::new(10, 4, 8, 960, 10.0, 3))?;
    let (c, l) = (real.n_channels(), real.n_samples());
    let seg = l / 8;
    let out = augment_recombine(&real, 8, 1, 17)?;
    let segment = |set: &EEGTrialSet, i: usize, slot: usize| -> Vec<u32> {
        (0..c).flat_map(|ch| set.trial(i)[ch * l + slot * seg..ch * l + (slot + 1) * seg].iter().map(|v| v.to_bits())).collect()
    };
    let mut pools: HashMap<(usize, usize), HashSet<Vec<u32>>> = HashMap::new();
    for i in 0..real.len() {
        for slot in 0..8 {
            pools.entry((real.labels[i], slot)).or_default().insert(segment(&real, i, slot));
        }
    }
    let artificial = out.len() - real.len();
    let mut bad = 0;
    for i in real.len()..out.len() {
        let label_ok = out.labels[i] == real.labels[i - real.len()];
        let slots_ok = (0..8).all(|slot| pools[&(out.labels[i], slot)].contains(&segment(&out, i, slot)));
        bad += usize::from(!(label_ok && slots_ok));
    }
    let again = augment_recombine(&real, 8, 1, 17)?;
    let deterministic = again.trials.data().iter().zip(out.trials.data()).all(|(a, b)| a.to_bits() == b.to_bits());
    Ok(verdict(
        artificial == real.len() && bad == 0 && deterministic,
        format!("{artificial} artificial trials, {bad} failing segment provenance or label; deterministic per seed: {deterministic}"),
    ))
}

fn labelled(set: EEGTrialSet, session: &str) -> EEGTrialSet {
    EEGTrialSet { session_ids: vec![session.to_string(); set.len()], ..set }
}

fn synth_splits(n_train: usize, n_test: usize, snr_db: f64, seed: u64) -> Result<Splits> {
    let train = labelled(synth_generate(&SynthConfig::new(n_train, 4, 8, 960, snr_db, seed))?, "train");
    let test = labelled(synth_generate(&SynthConfig::new(n_test, 4, 8, 960, snr_db, seed + 1_000))?, "test");
    let spec = SplitSpec::new(["train"], ["test"], SplitSpec::DEFAULT_VAL_FRACTION)?;
    Ok(spec.apply(&train.concat(&test)?)?.standardized()?.0)
}

fn train_and_test(splits: &Splits, ablation: Ablation, epochs: usize, seed: u64) -> Result<f64> {
    let cfg = ModelConfig::new(8, 960, 4)?.with_ablation(ablation);
    let model = STMambaNet::<f32>::new(cfg, seed)?;
    let tc = TrainConfig { max_epochs: epochs, patience: epochs, seed, ..Default::default() };
    let out = train_loop(model, &splits.train, &splits.val, &tc, |_| {})?;
    let mut best = out.model;
    Ok(evaluate(&mut best, &splits.test, tc.batch_size)?.accuracy)
}

fn end_to_end() -> Result<Outcome> {
    let start = Instant::now();
    let splits = synth_splits(100, 50, 10.0, 1)?;
    let oracle = BandPowerOracle::fit(&splits.train, BandPowerOracle::MU_BAND)?.accuracy(&splits.test);
    let full = train_and_test(&splits, Ablation::Full, LEARN_EPOCHS, 0)?;
    let none = train_and_test(&splits, Ablation::None, LEARN_EPOCHS, 0)?;
    let t = start.elapsed();
    let ok = oracle >= ORACLE_MIN && full >= LEARN_FULL_MIN && none >= LEARN_NONE_MIN && t < LEARN_LIMIT;
    Ok(verdict(
        ok,
        format!(
            "oracle {oracle:.1}% (>= {ORACLE_MIN}), full {full:.1}% (>= {LEARN_FULL_MIN}), none {none:.1}% (>= {LEARN_NONE_MIN}) after {LEARN_EPOCHS} epochs; runtime {:.1} min (target < {} min)",
            t.as_secs_f64() / 60.0,
            LEARN_LIMIT.as_secs() / 60
        ),
    ))
}

fn mean_ci(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let sd = (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    (mean, T_95_DF4 * sd / n.sqrt())
}

fn ablation_ordering() -> Result<Outcome> {
    let start = Instant::now();
    let mut acc: HashMap<Ablation, Vec<f64>> = HashMap::new();
    for seed in 0..ORDER_SEEDS {
        let splits = synth_splits(ORDER_TRAIN_PER_CLASS, 50, ORDER_SNR_DB, 100 + seed)?;
        for a in Ablation::ALL {
            acc.entry(a).or_default().push(train_and_test(&splits, a, ORDER_EPOCHS, seed)?);
        }
    }
    let stats: HashMap<Ablation, (f64, f64)> = acc.iter().map(|(&a, v)| (a, mean_ci(v))).collect();
    let (full, full_ci) = stats[&Ablation::Full];
    let mut status = Status::Pass;
    let mut notes = Vec::new();
    for other in [Ablation::TemporalOnly, Ablation::SpatialOnly, Ablation::None] {
        let (m, ci) = stats[&other];
        if full - m >= ORDER_MARGIN {
            continue;
        }
        let overlap = (full - full_ci) <= (m + ci);
        if overlap {
            notes.push(format!("full vs {other}: margin {:.1} < {ORDER_MARGIN}, CIs overlap", full - m));
            if status == Status::Pass {
                status = Status::Soft;
            }
        } else {
            notes.push(format!("full vs {other}: full lower with disjoint CIs"));
            status = Status::Fail;
        }
    }
    let table: Vec<String> = Ablation::ALL
        .iter()
        .map(|a| {
            let (m, ci) = stats[a];
            format!("{a} {m:.1}±{ci:.1}")
        })
        .collect();
    Ok(Outcome {
        status,
        detail: format!(
            "{ORDER_SEEDS} seeds, snr {ORDER_SNR_DB} dB, {ORDER_TRAIN_PER_CLASS}/class, {ORDER_EPOCHS} epochs, mean test acc ± 95% CI: {}{}; {:.1} min",
            table.join(", "),
            if notes.is_empty() { String::new() } else { format!(" [{}]", notes.join("; ")) },
            start.elapsed().as_secs_f64() / 60.0
        ),
    })
}

fn scan_seconds(l: usize) -> Result<f64> {
    let (d, n) = (16, 16);
    let mut rng = ChaCha8Rng::seed_from_u64(l as u64);
    let abar: Tensor<f32> = uniform(&[1, d, l, n], &mut rng, 0.5, 0.999);
    let bbar: Tensor<f32> = uniform(&[1, d, l, n], &mut rng, -0.1, 0.1);
    let c: Tensor<f32> = uniform(&[1, l, n], &mut rng, -1.0, 1.0);
    let x: Tensor<f32> = uniform(&[1, d, l], &mut rng, -1.0, 1.0);
    let skip: Tensor<f32> = uniform(&[d], &mut rng, -1.0, 1.0);
    let mut times = Vec::new();
    for _ in 0..SCAN_REPEATS {
        let t = Instant::now();
        std::hint::black_box(scan_sequential(&abar, &bbar, &c, &x, &skip)?);
        times.push(t.elapsed().as_secs_f64());
    }
    times.sort_by(f64::total_cmp);
    Ok(times[times.len() / 2])
}

fn linear_scalability() -> Result<Outcome> {
    let lengths = [256usize, 512, 1024, 2048, 4096];
    let mut pts = Vec::new();
    for &l in &lengths {
        pts.push(((l as f64).ln(), scan_seconds(l)?.ln()));
    }
    let n = pts.len() as f64;
    let (mx, my) = (pts.iter().map(|p| p.0).sum::<f64>() / n, pts.iter().map(|p| p.1).sum::<f64>() / n);
    let slope = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>() / pts.iter().map(|p| (p.0 - mx).powi(2)).sum::<f64>();
    let ms: Vec<String> = pts.iter().map(|p| format!("{:.2}", p.1.exp() * 1e3)).collect();
    Ok(verdict(
        slope <= SLOPE_MAX,
        format!("sequential scan, L in {lengths:?}: median ms [{}], log-log slope {slope:.3} (<= {SLOPE_MAX})", ms.join(", ")),
    ))
}

fn full_data_track() -> Result<Outcome> {
    let Some(dir) = std::env::var_os("STMAMBA_BCI2A_DIR") else {
        return Ok(Outcome { status: Status::Skip, detail: "set STMAMBA_BCI2A_DIR to a directory of per-subject archives".into() });
    };
    let epochs = match std::env::var("STMAMBA_BCI2A_EPOCHS") {
        Ok(v) => v.parse().map_err(|_| stmamba::Error::Config(format!("bad STMAMBA_BCI2A_EPOCHS {v:?}")))?,
        Err(_) => TrainConfig::default().max_epochs,
    };
    let mut files: Vec<_> = std::fs::read_dir(Path::new(&dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "eta"))
        .collect();
    files.sort();
    if files.is_empty() {
        return Ok(Outcome { status: Status::Fail, detail: format!("no .eta archives in {}", Path::new(&dir).display()) });
    }
    let mut rows = Vec::new();
    for path in &files {
        let set = read_archive(path)?;
        Dataset::Bci2a.check(&set)?;
        let len = effective_length(set.n_samples(), 8, 75, 15)
            .ok_or_else(|| stmamba::Error::Config(format!("{} samples too short", set.n_samples())))?;
        let set = set.crop(len)?;
        let (splits, _) = SplitSpec::for_dataset(Dataset::Bci2a, &set)?.apply(&set)?.standardized()?;
        let cfg = ModelConfig::new(set.n_channels(), len, set.n_classes)?;
        let tc = TrainConfig { max_epochs: epochs, patience: TrainConfig::default().patience.min(epochs), ..Default::default() };
        let out = train_loop(STMambaNet::<f32>::new(cfg, 0)?, &splits.train, &splits.val, &tc, |_| {})?;
        let mut best = out.model;
        let acc = evaluate(&mut best, &splits.test, tc.batch_size)?.accuracy;
        let name = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        println!("    {name:<12} {acc:6.2}%");
        rows.push(acc);
    }
    let mean = rows.iter().sum::<f64>() / rows.len() as f64;
    println!("    {:<12} {mean:6.2}%", "average");
    let within = (mean - TABLE_REFERENCE).abs() <= TABLE_BAND;
    Ok(Outcome {
        status: Status::Pass,
        detail: format!(
            "{} subjects, {epochs} epochs: average {mean:.2}% vs reference {TABLE_REFERENCE}% ± {TABLE_BAND} (non-binding): {}",
            rows.len(),
            if within { "inside band" } else { "outside band" }
        ),
    })
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Result<Outcome>); 10] = [
        ("ssm-duality", ssm_duality),
        ("parallel-scan", parallel_scan),
        ("gradient-suite", gradient_suite),
        ("residual-identity", residual_identity),
        ("pooling-oracles", pooling_oracles),
        ("augmentation-audit", augmentation_audit),
        ("end-to-end-learning", end_to_end),
        ("ablation-ordering", ablation_ordering),
        ("linear-scalability", linear_scalability),
        ("full-data-track", full_data_track),
    ];
    let only: Option<Vec<usize>> = std::env::var("STMAMBA_ACCEPTANCE_ONLY")
        .ok()
        .map(|v| v.split(',').filter_map(|s| s.trim().parse().ok()).collect());
    let mut failures = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        if only.as_ref().is_some_and(|o| !o.contains(&(i + 1))) {
            continue;
        }
        let outcome = run().unwrap_or_else(|e| Outcome { status: Status::Fail, detail: format!("error: {e}") });
        failures += usize::from(outcome.status == Status::Fail);
        println!("{:>2} {:<20} {:<9} {}", i + 1, name, outcome.status, outcome.detail);
    }
    if failures == 0 { ExitCode::SUCCESS } else { ExitCode::FAILURE }
}
