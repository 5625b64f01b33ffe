//! Built-in correctness checks: finite-difference gradients, scan
//! equivalences, pooling oracles and an augmentation provenance audit.

use std::collections::{HashMap, HashSet};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::data::{augment_recombine, synth_generate, EEGTrialSet, SynthConfig};
use crate::error::Result;
use crate::model::{ModelConfig, STMambaNet};
use crate::ssm::{lti_convolve, scan_parallel, scan_sequential, ssm_kernel_lti, MambaBlock, MambaConfig, ScanMode, SsmParams};
use crate::tensor::gradcheck::{grad_check, FnObjective};
use crate::tensor::{sliding_pool, Activation, BatchNorm, Conv2dSpec, Float, Graph, Mode, NormConfig, ParamStore, PoolKind, Tensor, Var};

/// Multiplies the input gradients of every backward pass of `op` by
/// `factor` inside the gradient checks, to prove they can fail.
#[derive(Clone, Debug)]
pub struct Fault {
    pub op: String,
    pub factor: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

fn uniform<T: Float>(shape: &[usize], rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> Tensor<T> {
    Tensor::from_fn(shape, |_| T::of(rng.random_range(lo..hi)))
}

fn weighted_sum(g: &mut Graph<f64>, y: Var, seed: u64) -> Result<Var> {
    let w = uniform(g.shape(y), &mut ChaCha8Rng::seed_from_u64(seed), -1.0, 1.0);
    let wv = g.input(w);
    let m = g.mul(y, wv)?;
    g.sum(m)
}

type Probe = Box<dyn Fn(&mut Graph<f64>, &ParamStore<f64>) -> Result<Var>>;

fn gradient_cases() -> Result<Vec<(&'static str, ParamStore<f64>, Probe)>> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut cases: Vec<(&'static str, ParamStore<f64>, Probe)> = Vec::new();

    let mut s = ParamStore::new();
    let x = s.add("x", uniform(&[2, 2, 3, 9], &mut rng, -1.0, 1.0), false);
    let w = s.add("w", uniform(&[2, 2, 2, 3], &mut rng, -1.0, 1.0), false);
    cases.push(("conv2d", s, Box::new(move |g, s| {
        let (xv, wv) = (g.param(s, x), g.param(s, w));
        let y = g.conv2d(xv, wv, None, Conv2dSpec { pad: [0, 1], stride: [1, 2] })?;
        weighted_sum(g, y, 1)
    })));

    let mut s = ParamStore::new();
    let x = s.add("x", uniform(&[2, 3, 9], &mut rng, -1.0, 1.0), false);
    let w = s.add("w", uniform(&[3, 4], &mut rng, -1.0, 1.0), false);
    cases.push(("causal_conv1d", s, Box::new(move |g, s| {
        let (xv, wv) = (g.param(s, x), g.param(s, w));
        let y = g.causal_conv1d(xv, wv)?;
        weighted_sum(g, y, 2)
    })));

    let mut s = ParamStore::new();
    let x = s.add("x", uniform(&[4, 3, 1, 5], &mut rng, -2.0, 2.0), false);
    let bn = BatchNorm::new(&mut s, "bn", 3, NormConfig::default());
    cases.push(("batch_norm", s, Box::new(move |g, s| {
        let mut bn = bn.clone();
        let xv = g.param(s, x);
        let y = bn.forward(g, s, xv, Mode::Train)?;
        weighted_sum(g, y, 3)
    })));

    let mut s = ParamStore::new();
    let x = s.add("x", uniform(&[2, 3, 6], &mut rng, -2.0, 2.0), false);
    let gamma = s.add("gamma", uniform(&[6], &mut rng, 0.5, 1.5), false);
    let beta = s.add("beta", uniform(&[6], &mut rng, -0.5, 0.5), false);
    cases.push(("layer_norm", s, Box::new(move |g, s| {
        let (xv, gv, bv) = (g.param(s, x), g.param(s, gamma), g.param(s, beta));
        let y = g.layer_norm(xv, gv, bv, 1e-5)?;
        weighted_sum(g, y, 4)
    })));

    let mut s = ParamStore::new();
    let x = s.add("x", uniform(&[3, 7], &mut rng, -3.0, 3.0), false);
    cases.push(("activations", s, Box::new(move |g, s| {
        let xv = g.param(s, x);
        let mut total = None;
        for (i, kind) in [Activation::Elu, Activation::Silu, Activation::Softplus, Activation::Sigmoid].into_iter().enumerate() {
            let y = g.activation(xv, kind)?;
            let part = weighted_sum(g, y, 10 + i as u64)?;
            total = Some(match total {
                Some(t) => g.add(t, part)?,
                None => part,
            });
        }
        Ok(total.expect("four activations"))
    })));

    let mut s = ParamStore::new();
    let x = s.add("x", uniform(&[2, 2, 1, 19], &mut rng, -2.0, 2.0), false);
    cases.push(("sliding_pool", s, Box::new(move |g, s| {
        let xv = g.param(s, x);
        let a = g.sliding_pool(xv, PoolKind::Avg, 7, 3)?;
        let v = g.sliding_pool(xv, PoolKind::Var, 7, 3)?;
        let (sa, sv) = (weighted_sum(g, a, 5)?, weighted_sum(g, v, 6)?);
        g.add(sa, sv)
    })));

    let mut s = ParamStore::new();
    let x = s.add("x", uniform(&[3, 5], &mut rng, -1.0, 1.0), false);
    let w = s.add("w", uniform(&[4, 5], &mut rng, -1.0, 1.0), false);
    let b = s.add("b", uniform(&[4], &mut rng, -1.0, 1.0), false);
    cases.push(("linear", s, Box::new(move |g, s| {
        let (xv, wv, bv) = (g.param(s, x), g.param(s, w), g.param(s, b));
        let y = g.linear(xv, wv, Some(bv))?;
        weighted_sum(g, y, 7)
    })));

    let mut s = ParamStore::new();
    let mut cfg = MambaConfig::new(4);
    cfg.d_state = 3;
    let block = MambaBlock::new(&mut s, "mamba", cfg, &mut rng)?;
    let x = s.add("x", uniform(&[2, 6, 4], &mut rng, -1.0, 1.0), false);
    cases.push(("mamba_block", s, Box::new(move |g, s| {
        let xv = g.param(s, x);
        let y = block.forward(g, s, xv, Mode::Train)?;
        weighted_sum(g, y, 8)
    })));

    let mut model = STMambaNet::<f64>::new(ModelConfig::tiny(), 1)?;
    let xin = uniform::<f64>(&[3, 3, 64], &mut rng, -1.0, 1.0);
    let mut g = Graph::new();
    let xv = g.input(xin.clone());
    model.forward(&mut g, xv, Mode::Train, &mut ChaCha8Rng::seed_from_u64(0))?;
    let store = model.store.clone();
    cases.push(("stmambanet_tiny", store, Box::new(move |g, s| {
        let mut m = model.clone();
        m.store = s.clone();
        let xv = g.input(xin.clone());
        let logits = m.forward(g, xv, Mode::Train, &mut ChaCha8Rng::seed_from_u64(2))?;
        g.cross_entropy(logits, &[0, 1, 1])
    })));
    Ok(cases)
}

fn gradient_checks(fault: Option<&Fault>, out: &mut Vec<CheckResult>) -> Result<()> {
    for (name, store, probe) in gradient_cases()? {
        let start = Instant::now();
        let model = name == "stmambanet_tiny";
        let (tol, sample) = if model { (1e-3, Some((150, 3))) } else { (1e-4, None) };
        let fault = fault.cloned();
        let mut obj = FnObjective::new(store, move |g: &mut Graph<f64>, s: &ParamStore<f64>| {
            if let Some(f) = &fault {
                g.inject_backward_fault(&f.op, f.factor);
            }
            probe(g, s)
        });
        let (passed, detail) = match grad_check(&mut obj, 1e-6, tol, sample) {
            Ok(r) => (r.passed(), format!("max rel err {:.2e} (tol {tol:.0e})", r.max_rel_err())),
            Err(e) => (false, format!("error: {e}")),
        };
        out.push(CheckResult {
            name: format!("gradient/{name}"),
            passed,
            detail,
            seconds: start.elapsed().as_secs_f64(),
        });
    }
    Ok(())
}

fn random_system(rng: &mut ChaCha8Rng, b: usize, d: usize, l: usize, n: usize) -> (SsmParams<f64>, Tensor<f64>) {
    let p = SsmParams {
        a: uniform(&[d, n], rng, -2.0, -0.05),
        delta: uniform(&[b, d, l], rng, 0.01, 0.5),
        bsel: uniform(&[b, l, n], rng, -1.0, 1.0),
        csel: uniform(&[b, l, n], rng, -1.0, 1.0),
        dskip: uniform(&[d], rng, -1.0, 1.0),
    };
    let x = uniform(&[b, d, l], rng, -1.0, 1.0);
    (p, x)
}

fn scan_checks(out: &mut Vec<CheckResult>) -> Result<()> {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst = 0.0f64;
    for _ in 0..10 {
        let l = rng.random_range(1..=64);
        let (p, x) = random_system(&mut rng, 2, 3, l, 4);
        let seq = p.apply(&x, ScanMode::Sequential)?;
        for chunk in [1, 2, 5, 16, l] {
            worst = worst.max(p.apply(&x, ScanMode::Parallel { chunk })?.max_abs_diff(&seq));
        }
    }
    out.push(CheckResult {
        name: "scan/parallel_vs_sequential".into(),
        passed: worst < 1e-12,
        detail: format!("max abs diff {worst:.2e}"),
        seconds: start.elapsed().as_secs_f64(),
    });

    let start = Instant::now();
    let mut worst = 0.0f64;
    for _ in 0..10 {
        let (d, l, n) = (3, rng.random_range(1..=64), 5);
        let (mut p, x) = random_system(&mut rng, 1, d, l, n);
        let dt: Vec<f64> = (0..d).map(|_| rng.random_range(0.01..0.5)).collect();
        let bs: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let cs: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        p.delta = Tensor::from_fn(&[1, d, l], |i| dt[(i / l) % d]);
        p.bsel = Tensor::from_fn(&[1, l, n], |i| bs[i % n]);
        p.csel = Tensor::from_fn(&[1, l, n], |i| cs[i % n]);
        let (abar, bbar) = p.discretize()?;
        let kernel = ssm_kernel_lti(&abar, &bbar, &p.csel, l)?;
        let conv = lti_convolve(&x, &kernel, &p.dskip)?;
        worst = worst.max(conv.rel_err(&scan_sequential(&abar, &bbar, &p.csel, &x, &p.dskip)?));
        worst = worst.max(conv.rel_err(&scan_parallel(&abar, &bbar, &p.csel, &x, &p.dskip, 4)?));
    }
    out.push(CheckResult {
        name: "scan/lti_kernel_vs_scan".into(),
        passed: worst < 1e-10,
        detail: format!("max rel err {worst:.2e}"),
        seconds: start.elapsed().as_secs_f64(),
    });

    let start = Instant::now();
    let (p, x) = random_system(&mut rng, 2, 3, 20, 4);
    let reference = p.apply(&x, ScanMode::Sequential)?;
    let mut g = Graph::new();
    let vars: Vec<Var> = [&x, &p.delta, &p.a, &p.bsel, &p.csel, &p.dskip].iter().map(|t| g.input((*t).clone())).collect();
    let fused = g.selective_scan(vars[0], vars[1], vars[2], vars[3], vars[4], vars[5], ScanMode::Sequential)?;
    let diff = g.value(fused).max_abs_diff(&reference);
    out.push(CheckResult {
        name: "scan/fused_vs_reference".into(),
        passed: diff < 1e-12,
        detail: format!("max abs diff {diff:.2e}"),
        seconds: start.elapsed().as_secs_f64(),
    });
    Ok(())
}

fn pooling_checks(out: &mut Vec<CheckResult>) -> Result<()> {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let (window, stride) = (rng.random_range(1..=20), rng.random_range(1..=6));
        let len = window + stride * rng.random_range(0..20);
        let x: Tensor<f64> = uniform(&[1, 1, 1, len], &mut rng, -3.0, 3.0);
        let avg = sliding_pool(&x, PoolKind::Avg, window, stride)?;
        let var = sliding_pool(&x, PoolKind::Var, window, stride)?;
        for (j, start) in (0..=len - window).step_by(stride).enumerate() {
            let w = &x.data()[start..start + window];
            let mean = w.iter().sum::<f64>() / window as f64;
            let v = w.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / window as f64;
            worst = worst.max((avg.data()[j] - mean).abs()).max((var.data()[j] - v).abs());
        }
    }
    let constant = sliding_pool(&Tensor::<f64>::full(&[1, 2, 1, 40], -2.5), PoolKind::Var, 10, 5)?;
    let zero = constant.data().iter().all(|&v| v == 0.0);
    out.push(CheckResult {
        name: "pooling/two_pass_oracle".into(),
        passed: worst < 1e-10 && zero,
        detail: format!("max abs err {worst:.2e}, constant variance zero: {zero}"),
        seconds: start.elapsed().as_secs_f64(),
    });
    Ok(())
}

fn augmentation_check(out: &mut Vec<CheckResult>) -> Result<()> {
    let start = Instant::now();
    let real = synth_generate(&SynthConfig::new(5, 3, 4, 160, 5.0, 17))?;
    let augmented = augment_recombine(&real, 8, 2, 23)?;
    let (c, l, seg) = (real.n_channels(), real.n_samples(), real.n_samples() / 8);
    let segment = |set: &EEGTrialSet, i: usize, slot: usize| -> Vec<u32> {
        (0..c).flat_map(|ch| set.trial(i)[ch * l + slot * seg..][..seg].iter().map(|v| v.to_bits())).collect()
    };
    let mut pools: HashMap<(usize, usize), HashSet<Vec<u32>>> = HashMap::new();
    for i in 0..real.len() {
        for slot in 0..8 {
            pools.entry((real.labels[i], slot)).or_default().insert(segment(&real, i, slot));
        }
    }
    let bad = (real.len()..augmented.len())
        .filter(|&i| (0..8).any(|slot| !pools[&(augmented.labels[i], slot)].contains(&segment(&augmented, i, slot))))
        .count();
    out.push(CheckResult {
        name: "augmentation/provenance".into(),
        passed: bad == 0 && augmented.len() == 3 * real.len(),
        detail: format!("{} artificial trials, {bad} with foreign segments", augmented.len() - real.len()),
        seconds: start.elapsed().as_secs_f64(),
    });
    Ok(())
}

type Group<'a> = Box<dyn Fn(&mut Vec<CheckResult>) -> Result<()> + 'a>;

/// Runs every check. Errors inside a check are reported as failures.
pub fn run(fault: Option<&Fault>) -> Vec<CheckResult> {
    let mut out = Vec::new();
    let groups: [(&str, Group); 4] = [
        ("gradient", Box::new(|o: &mut Vec<CheckResult>| gradient_checks(fault, o))),
        ("scan", Box::new(scan_checks)),
        ("pooling", Box::new(pooling_checks)),
        ("augmentation", Box::new(augmentation_check)),
    ];
    for (name, group) in groups {
        if let Err(e) = group(&mut out) {
            out.push(CheckResult { name: name.into(), passed: false, detail: format!("error: {e}"), seconds: 0.0 });
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clean_build_passes() {
        let results = run(None);
        let failed: Vec<_> = results.iter().filter(|r| !r.passed).collect();
        assert!(failed.is_empty(), "{failed:?}");
        assert!(results.len() >= 12);
    }

    #[test]
    fn injected_fault_is_caught() {
        let fault = Fault { op: "linear".into(), factor: 1.5 };
        let results = run(Some(&fault));
        let linear = results.iter().find(|r| r.name == "gradient/linear").unwrap();
        assert!(!linear.passed);
        assert!(results.iter().find(|r| r.name == "gradient/conv2d").unwrap().passed);
    }
}
