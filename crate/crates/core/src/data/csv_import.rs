//! Directory-of-CSV import.
//!
//! `manifest.csv` has columns `file,label,session,sampling_rate_hz`; each
//! listed trial file has a header row of channel names followed by one row
//! per sample.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use serde::Deserialize;

use super::EEGTrialSet;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MANIFEST: &str = "manifest.csv";

#[derive(Deserialize)]
struct ManifestRow {
    file: String,
    label: usize,
    session: String,
    sampling_rate_hz: f64,
}

fn csv_err(path: &Path, detail: impl Into<String>) -> Error {
    Error::Csv { path: path.to_path_buf(), detail: detail.into() }
}

/// Reads one trial file as `(channel names, [C, L] values)`.
fn read_trial(path: &Path) -> Result<(Vec<String>, Vec<f32>, usize)> {
    let mut reader = csv::ReaderBuilder::new()
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_err(path, e.to_string()))?;
    let names: Vec<String> =
        reader.headers().map_err(|e| csv_err(path, e.to_string()))?.iter().map(str::to_string).collect();
    if names.is_empty() || names.iter().all(String::is_empty) {
        return Err(csv_err(path, "missing channel header row"));
    }
    let c = names.len();
    let mut rows: Vec<f32> = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let line = i + 2;
        let record = record.map_err(|e| csv_err(path, format!("row {line}: {e}")))?;
        if record.len() != c {
            return Err(csv_err(path, format!("ragged row {line}: {} fields, expected {c}", record.len())));
        }
        for field in record.iter() {
            let v: f32 = field.parse().map_err(|_| csv_err(path, format!("row {line}: `{field}` is not a number")))?;
            rows.push(v);
        }
    }
    let l = rows.len() / c;
    if l == 0 {
        return Err(csv_err(path, "no samples"));
    }
    let mut values = vec![0f32; c * l];
    for (t, row) in rows.chunks_exact(c).enumerate() {
        for (ch, &v) in row.iter().enumerate() {
            values[ch * l + t] = v;
        }
    }
    Ok((names, values, l))
}

pub fn import_csv(dir: impl AsRef<Path>) -> Result<EEGTrialSet> {
    let dir = dir.as_ref();
    let manifest_path = dir.join(MANIFEST);
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(&manifest_path)
        .map_err(|e| csv_err(&manifest_path, e.to_string()))?;
    let mut entries: Vec<ManifestRow> = Vec::new();
    for (i, row) in reader.deserialize().enumerate() {
        entries.push(row.map_err(|e| csv_err(&manifest_path, format!("row {}: {e}", i + 2)))?);
    }

    let listed: BTreeSet<&str> = entries.iter().map(|e| e.file.as_str()).collect();
    if listed.len() != entries.len() {
        return Err(Error::Manifest("manifest lists a file more than once".into()));
    }
    let mut orphans = Vec::new();
    for entry in fs::read_dir(dir)? {
        let name = entry?.file_name().to_string_lossy().into_owned();
        if name.ends_with(".csv") && name != MANIFEST && !listed.contains(name.as_str()) {
            orphans.push(name);
        }
    }
    if !orphans.is_empty() {
        orphans.sort();
        return Err(Error::Manifest(format!("trial files without a manifest entry: {}", orphans.join(", "))));
    }
    if entries.is_empty() {
        return Err(Error::Manifest("manifest lists no trials".into()));
    }

    let fs_hz = entries[0].sampling_rate_hz;
    let mut channel_names: Option<Vec<String>> = None;
    let mut n_samples = 0;
    let mut data = Vec::new();
    for entry in &entries {
        let path = dir.join(&entry.file);
        if !path.is_file() {
            return Err(Error::Manifest(format!("manifest entry `{}` has no trial file", entry.file)));
        }
        if entry.sampling_rate_hz != fs_hz {
            return Err(Error::Manifest(format!(
                "`{}` has sampling rate {} Hz, expected {fs_hz} Hz",
                entry.file, entry.sampling_rate_hz
            )));
        }
        let (names, values, l) = read_trial(&path)?;
        match &channel_names {
            None => {
                channel_names = Some(names);
                n_samples = l;
            }
            Some(first) if *first != names => {
                return Err(csv_err(&path, format!("channels {names:?} differ from {first:?}")));
            }
            Some(_) if l != n_samples => {
                return Err(csv_err(&path, format!("{l} samples, expected {n_samples}")));
            }
            Some(_) => {}
        }
        data.extend(values);
    }
    let channel_names = channel_names.unwrap_or_default();
    let n = entries.len();
    let trials = Tensor::new(vec![n, channel_names.len(), n_samples], data)?;
    let n_classes = entries.iter().map(|e| e.label).max().unwrap_or(0) + 1;
    EEGTrialSet::new(
        trials,
        entries.iter().map(|e| e.label).collect(),
        n_classes,
        fs_hz,
        channel_names,
        entries.into_iter().map(|e| e.session).collect(),
    )
}
