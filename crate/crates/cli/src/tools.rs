use std::collections::BTreeMap;
use std::fs;

use serde::Serialize;
use stmamba::data::{import_csv, write_archive};
use stmamba::model::Ablation;
use stmamba::selftest::{self, Fault};

use crate::manifest::{synth_configs, synth_sessions};
use crate::run::RunReport;
use crate::{emit, ConvertArgs, Failure, Outcome, SelftestArgs, SynthArgs, TableArgs};

pub fn selftest(a: SelftestArgs, json: bool) -> Outcome {
    let fault = a.inject_fault.map(|op| Fault { op, factor: a.fault_factor });
    if let Some(f) = &fault {
        log::warn!("corrupting every backward pass of `{}` by a factor of {}", f.op, f.factor);
    }
    let results = selftest::run(fault.as_ref());
    let failed = results.iter().filter(|r| !r.passed).count();
    emit(json, &results, || {
        for r in &results {
            println!("{:<4} {:<32} {:>7.2}s  {}", if r.passed { "ok" } else { "FAIL" }, r.name, r.seconds, r.detail);
        }
        println!("{} checks, {failed} failed", results.len());
    })?;
    if failed > 0 {
        return Err(Failure::check(format!("{failed} self-test check(s) failed")));
    }
    Ok(())
}

#[derive(Serialize)]
struct Written {
    output: String,
    trials: usize,
    channels: usize,
    samples: usize,
    classes: usize,
}

fn written(path: &std::path::Path, set: &stmamba::data::EEGTrialSet) -> Written {
    Written {
        output: path.display().to_string(),
        trials: set.len(),
        channels: set.n_channels(),
        samples: set.n_samples(),
        classes: set.n_classes,
    }
}

fn print_written(w: &Written) {
    println!("wrote {} trials ({} channels x {} samples, {} classes) to {}", w.trials, w.channels, w.samples, w.classes, w.output);
}

pub fn convert(a: ConvertArgs, json: bool) -> Outcome {
    let set = import_csv(&a.input)?;
    write_archive(&set, &a.output)?;
    let w = written(&a.output, &set);
    emit(json, &w, || print_written(&w))
}

pub fn synth(a: SynthArgs, json: bool) -> Outcome {
    let (train, test) = synth_configs(&a.shape, a.seed);
    let set = synth_sessions(&train, &test)?;
    write_archive(&set, &a.output)?;
    let w = written(&a.output, &set);
    emit(json, &w, || print_written(&w))
}

#[derive(Serialize)]
struct TableRow {
    subject: String,
    accuracy: BTreeMap<String, f64>,
}

#[derive(Serialize)]
struct Table {
    columns: Vec<String>,
    rows: Vec<TableRow>,
    mean: BTreeMap<String, f64>,
}

/// Test accuracy per subject (rows) and ablation (columns).
pub fn table(a: TableArgs, json: bool) -> Outcome {
    let mut cells: BTreeMap<String, BTreeMap<String, f64>> = BTreeMap::new();
    for dir in &a.runs {
        let path = dir.join("report.json");
        let text = fs::read_to_string(&path).map_err(|e| Failure::user(format!("{}: {e}", path.display())))?;
        let r: RunReport = serde_json::from_str(&text)?;
        let subject = r.subject.clone().unwrap_or_else(|| dir.display().to_string());
        let column = format!("{}/{}", r.dataset, r.ablation);
        if cells.entry(subject.clone()).or_default().insert(column.clone(), r.test.accuracy).is_some() {
            return Err(Failure::user(format!("two runs for subject {subject} in column {column}")));
        }
    }
    let mut columns: Vec<String> = cells.values().flat_map(|c| c.keys().cloned()).collect();
    let order = |c: &String| Ablation::ALL.iter().position(|a| c.ends_with(a.name())).unwrap_or(usize::MAX);
    columns.sort_by(|x, y| x.split('/').next().cmp(&y.split('/').next()).then(order(x).cmp(&order(y))));
    columns.dedup();
    let mean = columns
        .iter()
        .map(|c| {
            let v: Vec<f64> = cells.values().filter_map(|r| r.get(c).copied()).collect();
            (c.clone(), v.iter().sum::<f64>() / v.len() as f64)
        })
        .collect();
    let table = Table {
        columns,
        rows: cells.into_iter().map(|(subject, accuracy)| TableRow { subject, accuracy }).collect(),
        mean,
    };
    emit(json, &table, || {
        let header: Vec<String> = table.columns.iter().map(|c| format!("{c:>20}")).collect();
        println!("{:<16}{}", "subject", header.join(""));
        let cell = |v: Option<&f64>| v.map(|v| format!("{v:>19.2}%")).unwrap_or_else(|| format!("{:>20}", "-"));
        for r in &table.rows {
            let line: Vec<String> = table.columns.iter().map(|c| cell(r.accuracy.get(c))).collect();
            println!("{:<16}{}", r.subject, line.join(""));
        }
        let line: Vec<String> = table.columns.iter().map(|c| cell(table.mean.get(c))).collect();
        println!("{:<16}{}", "mean", line.join(""));
    })
}
