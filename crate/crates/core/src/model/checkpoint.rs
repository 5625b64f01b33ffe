//! Checkpoint files: one JSON header line followed by raw `f32` LE blobs.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ModelConfig, STMambaNet};
use crate::error::{Error, Result};
use crate::tensor::{BatchNormStats, Float, Tensor};

pub const CHECKPOINT_FORMAT: &str = "stmamba-checkpoint";
const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Entry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
    config: ModelConfig,
    tensors: Vec<Entry>,
}

pub fn write_checkpoint<T: Float, W: Write>(model: &STMambaNet<T>, out: &mut W) -> Result<()> {
    let mut tensors: Vec<(String, &Tensor<T>)> =
        model.store.iter().map(|(_, p)| (p.name.clone(), &p.value)).collect();
    let norms = [&model.embedding.bn1, &model.embedding.bn2, &model.temporal_head.bn, &model.spatial_head.bn];
    for bn in norms {
        if let Some((mean, var)) = &bn.stats.running {
            let prefix = model.store.get(bn.gamma).name.trim_end_matches(".gamma");
            tensors.push((format!("{prefix}.running_mean"), mean));
            tensors.push((format!("{prefix}.running_var"), var));
        }
    }
    let header = Header {
        format: CHECKPOINT_FORMAT.into(),
        version: VERSION,
        config: model.cfg.clone(),
        tensors: tensors.iter().map(|(name, t)| Entry { name: name.clone(), shape: t.shape().to_vec() }).collect(),
    };
    serde_json::to_writer(&mut *out, &header)?;
    out.write_all(b"\n")?;
    for (_, t) in tensors {
        let bytes: Vec<u8> = t.data().iter().flat_map(|v| (v.as_f64() as f32).to_le_bytes()).collect();
        out.write_all(&bytes)?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_checkpoint<T: Float, R: BufRead>(input: &mut R) -> Result<STMambaNet<T>> {
    let mut line = Vec::new();
    input.read_until(b'\n', &mut line)?;
    if line.last() != Some(&b'\n') {
        return Err(Error::MalformedHeader("checkpoint header line is not terminated".into()));
    }
    let value: serde_json::Value =
        serde_json::from_slice(&line).map_err(|e| Error::MalformedHeader(format!("checkpoint header: {e}")))?;
    if value.get("format").and_then(|f| f.as_str()) != Some(CHECKPOINT_FORMAT) {
        return Err(Error::MalformedHeader("not a checkpoint file".into()));
    }
    let version = value.get("version").and_then(|v| v.as_u64()).unwrap_or(0) as u32;
    if version != VERSION {
        return Err(Error::VersionMismatch { found: version, expected: VERSION });
    }
    let header: Header =
        serde_json::from_value(value).map_err(|e| Error::MalformedHeader(format!("checkpoint header: {e}")))?;

    let expected: usize = header.tensors.iter().map(|e| e.shape.iter().product::<usize>() * 4).sum();
    let mut payload = Vec::with_capacity(expected);
    input.read_to_end(&mut payload)?;
    if payload.len() != expected {
        return Err(Error::Truncated { expected, actual: payload.len() });
    }

    let mut values: HashMap<String, Tensor<T>> = HashMap::new();
    let mut offset = 0;
    for entry in header.tensors {
        let n: usize = entry.shape.iter().product();
        let data = payload[offset..offset + 4 * n]
            .chunks_exact(4)
            .map(|b| T::of(f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64))
            .collect();
        offset += 4 * n;
        let t = Tensor::new(entry.shape, data).map_err(|e| Error::MalformedHeader(e.to_string()))?;
        if values.insert(entry.name.clone(), t).is_some() {
            return Err(Error::MalformedHeader(format!("duplicate tensor {}", entry.name)));
        }
    }

    let mut model = STMambaNet::<T>::new(header.config, 0).map_err(|e| Error::MalformedHeader(e.to_string()))?;
    let ids: Vec<_> = model.store.ids().collect();
    for id in ids {
        let name = model.store.get(id).name.clone();
        let t = values.remove(&name).ok_or_else(|| Error::MalformedHeader(format!("missing tensor {name}")))?;
        if t.shape() != model.store.value(id).shape() {
            return Err(Error::MalformedHeader(format!(
                "tensor {name} has shape {:?}, expected {:?}",
                t.shape(),
                model.store.value(id).shape()
            )));
        }
        *model.store.value_mut(id) = t;
    }
    for (prefix, bn) in model.batch_norms_mut() {
        let mean = values.remove(&format!("{prefix}.running_mean"));
        let var = values.remove(&format!("{prefix}.running_var"));
        bn.stats = match (mean, var) {
            (Some(m), Some(v)) => BatchNormStats { running: Some((m, v)) },
            (None, None) => BatchNormStats::default(),
            _ => return Err(Error::MalformedHeader(format!("incomplete running statistics for {prefix}"))),
        };
    }
    if let Some(extra) = values.keys().next() {
        return Err(Error::MalformedHeader(format!("unexpected tensor {extra}")));
    }
    Ok(model)
}

pub fn save_checkpoint<T: Float>(model: &STMambaNet<T>, path: impl AsRef<Path>) -> Result<()> {
    write_checkpoint(model, &mut BufWriter::new(File::create(path)?))
}

pub fn load_checkpoint<T: Float>(path: impl AsRef<Path>) -> Result<STMambaNet<T>> {
    read_checkpoint(&mut BufReader::new(File::open(path)?))
}
