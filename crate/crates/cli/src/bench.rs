use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use stmamba::ssm::{lti_convolve, scan_parallel, scan_sequential, ssm_kernel_lti, SsmParams};
use stmamba::Tensor;

use crate::{emit, BenchArgs, Failure, Outcome, ScanKind};

pub const SLOPE_MAX: f64 = 1.2;
const CHUNK: usize = 64;
const EQUIV_TOL: f64 = 1e-4;

#[derive(Serialize)]
struct Row {
    d: usize,
    l: usize,
    median_ms: f64,
    /// Largest relative deviation from the sequential scan.
    max_rel_diff: Option<f64>,
}

#[derive(Serialize)]
struct Sweep {
    d: usize,
    slope: Option<f64>,
}

#[derive(Serialize)]
struct Report {
    scan: ScanKind,
    state: usize,
    repeats: usize,
    rows: Vec<Row>,
    sweeps: Vec<Sweep>,
    slope_max: f64,
}

fn system(rng: &mut ChaCha8Rng, d: usize, l: usize, n: usize, lti: bool) -> (SsmParams<f32>, Tensor<f32>) {
    let mut u = |shape: &[usize], lo: f64, hi: f64| Tensor::from_fn(shape, |_| rng.random_range(lo..hi) as f32);
    let mut p = SsmParams {
        a: u(&[d, n], -2.0, -0.05),
        delta: u(&[1, d, l], 0.01, 0.5),
        bsel: u(&[1, l, n], -1.0, 1.0),
        csel: u(&[1, l, n], -1.0, 1.0),
        dskip: u(&[d], -1.0, 1.0),
    };
    let x = u(&[1, d, l], -1.0, 1.0);
    if lti {
        let (delta, bsel, csel) = (p.delta.clone(), p.bsel.clone(), p.csel.clone());
        p.delta = Tensor::from_fn(&[1, d, l], |i| delta.data()[i / l * l]);
        p.bsel = Tensor::from_fn(&[1, l, n], |i| bsel.data()[i % n]);
        p.csel = Tensor::from_fn(&[1, l, n], |i| csel.data()[i % n]);
    }
    (p, x)
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

/// Least-squares slope of `ln t` against `ln L`.
pub fn loglog_slope(points: &[(usize, f64)]) -> Option<f64> {
    if points.len() < 2 {
        return None;
    }
    let xy: Vec<(f64, f64)> = points.iter().map(|&(l, t)| ((l as f64).ln(), t.ln())).collect();
    let n = xy.len() as f64;
    let mx = xy.iter().map(|p| p.0).sum::<f64>() / n;
    let my = xy.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = xy.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = xy.iter().map(|p| (p.0 - mx).powi(2)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

pub fn bench(a: BenchArgs, json: bool) -> Outcome {
    if a.lengths.is_empty() || a.widths.is_empty() || a.repeats == 0 || a.state == 0 {
        return Err(Failure::user("need at least one length, one width, one repeat and a positive state size"));
    }
    if a.lengths.iter().chain(&a.widths).any(|&v| v == 0) {
        return Err(Failure::user("lengths and widths must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let mut rows = Vec::new();
    let mut sweeps = Vec::new();
    for &d in &a.widths {
        let mut points = Vec::new();
        for &l in &a.lengths {
            let (p, x) = system(&mut rng, d, l, a.state, a.lti);
            let (abar, bbar) = p.discretize()?;
            let run = || match a.scan {
                ScanKind::Seq => scan_sequential(&abar, &bbar, &p.csel, &x, &p.dskip),
                ScanKind::Par => scan_parallel(&abar, &bbar, &p.csel, &x, &p.dskip, CHUNK),
                ScanKind::Kernel => {
                    ssm_kernel_lti(&abar, &bbar, &p.csel, l).and_then(|k| lti_convolve(&x, &k, &p.dskip))
                }
            };
            let out = run()?;
            let max_rel_diff = if a.scan == ScanKind::Seq {
                None
            } else {
                let reference = scan_sequential(&abar, &bbar, &p.csel, &x, &p.dskip)?;
                let diff = out.rel_err(&reference);
                if !(diff <= EQUIV_TOL) {
                    return Err(Failure::check(format!(
                        "{:?} scan deviates from the sequential scan by {diff:.2e} at d={d}, L={l}",
                        a.scan
                    )));
                }
                Some(diff)
            };
            let times: Vec<f64> = (0..a.repeats)
                .map(|_| {
                    let start = Instant::now();
                    let y = run();
                    let t = start.elapsed().as_secs_f64() * 1e3;
                    drop(y);
                    t
                })
                .collect();
            let median_ms = median(times);
            points.push((l, median_ms));
            rows.push(Row { d, l, median_ms, max_rel_diff });
        }
        sweeps.push(Sweep { d, slope: loglog_slope(&points) });
    }
    let report = Report { scan: a.scan, state: a.state, repeats: a.repeats, rows, sweeps, slope_max: SLOPE_MAX };
    emit(json, &report, || {
        println!("{:>6} {:>8} {:>12} {:>12}", "d", "L", "median ms", "vs seq");
        for r in &report.rows {
            let diff = r.max_rel_diff.map(|v| format!("{v:.1e}")).unwrap_or_else(|| "-".into());
            println!("{:>6} {:>8} {:>12.3} {:>12}", r.d, r.l, r.median_ms, diff);
        }
        for s in &report.sweeps {
            if let Some(slope) = s.slope {
                println!("d={}: log-log slope {slope:.3} (limit {SLOPE_MAX})", s.d);
            }
        }
    })?;
    if a.scan != ScanKind::Kernel {
        if let Some(s) = report.sweeps.iter().find(|s| s.slope.is_some_and(|v| v > SLOPE_MAX)) {
            return Err(Failure::check(format!(
                "scan time grows faster than L^{SLOPE_MAX}: slope {:.3} at d={}",
                s.slope.unwrap_or_default(),
                s.d
            )));
        }
    }
    Ok(())
}
