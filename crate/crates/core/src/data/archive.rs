//! The ETA trial archive: a JSON header line, then `f32` LE samples,
//! trial-major and channel-then-sample within a trial.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::EEGTrialSet;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const ARCHIVE_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    version: u32,
    n_trials: usize,
    n_channels: usize,
    n_samples: usize,
    sampling_rate_hz: f64,
    n_classes: usize,
    labels: Vec<usize>,
    session_ids: Vec<String>,
    channel_names: Vec<String>,
}

pub fn write_archive_to<W: Write>(set: &EEGTrialSet, out: &mut W) -> Result<()> {
    set.validate()?;
    let header = Header {
        version: ARCHIVE_VERSION,
        n_trials: set.len(),
        n_channels: set.n_channels(),
        n_samples: set.n_samples(),
        sampling_rate_hz: set.sampling_rate_hz,
        n_classes: set.n_classes,
        labels: set.labels.clone(),
        session_ids: set.session_ids.clone(),
        channel_names: set.channel_names.clone(),
    };
    serde_json::to_writer(&mut *out, &header)?;
    out.write_all(b"\n")?;
    let bytes: Vec<u8> = set.trials.data().iter().flat_map(|v| v.to_le_bytes()).collect();
    out.write_all(&bytes)?;
    out.flush()?;
    Ok(())
}

pub fn read_archive_from<R: BufRead>(input: &mut R) -> Result<EEGTrialSet> {
    let mut line = Vec::new();
    input.read_until(b'\n', &mut line)?;
    if line.last() != Some(&b'\n') {
        return Err(Error::MalformedHeader("archive header line is not terminated".into()));
    }
    let value: serde_json::Value =
        serde_json::from_slice(&line).map_err(|e| Error::MalformedHeader(format!("archive header: {e}")))?;
    let version = value
        .get("version")
        .and_then(|v| v.as_u64())
        .ok_or_else(|| Error::MalformedHeader("archive header has no version".into()))?;
    if version != ARCHIVE_VERSION as u64 {
        return Err(Error::VersionMismatch { found: version as u32, expected: ARCHIVE_VERSION });
    }
    let h: Header =
        serde_json::from_value(value).map_err(|e| Error::MalformedHeader(format!("archive header: {e}")))?;
    if h.labels.len() != h.n_trials || h.session_ids.len() != h.n_trials || h.channel_names.len() != h.n_channels {
        return Err(Error::MalformedHeader(format!(
            "{} trials / {} channels disagree with {} labels, {} session ids, {} channel names",
            h.n_trials,
            h.n_channels,
            h.labels.len(),
            h.session_ids.len(),
            h.channel_names.len()
        )));
    }

    let expected = h
        .n_trials
        .checked_mul(h.n_channels)
        .and_then(|v| v.checked_mul(h.n_samples))
        .and_then(|v| v.checked_mul(4))
        .ok_or_else(|| Error::MalformedHeader("archive dimensions overflow".into()))?;
    let mut payload = Vec::with_capacity(expected);
    input.read_to_end(&mut payload)?;
    if payload.len() < expected {
        return Err(Error::Truncated { expected, actual: payload.len() });
    }
    if payload.len() > expected {
        return Err(Error::MalformedHeader(format!(
            "payload has {} bytes, header declares {expected}",
            payload.len()
        )));
    }
    let data = payload.chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]])).collect();
    let trials = Tensor::new(vec![h.n_trials, h.n_channels, h.n_samples], data)
        .map_err(|e| Error::MalformedHeader(e.to_string()))?;
    EEGTrialSet::new(trials, h.labels, h.n_classes, h.sampling_rate_hz, h.channel_names, h.session_ids)
        .map_err(|e| Error::MalformedHeader(e.to_string()))
}

pub fn write_archive(set: &EEGTrialSet, path: impl AsRef<Path>) -> Result<()> {
    write_archive_to(set, &mut BufWriter::new(File::create(path)?))
}

pub fn read_archive(path: impl AsRef<Path>) -> Result<EEGTrialSet> {
    read_archive_from(&mut BufReader::new(File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::toy_set;

    fn bytes(set: &EEGTrialSet) -> Vec<u8> {
        let mut buf = Vec::new();
        write_archive_to(set, &mut buf).unwrap();
        buf
    }

    #[test]
    fn round_trip() {
        let mut set = toy_set(3, 2, 3, 7);
        set.trials.data_mut()[4] = f32::from_bits(0x3f80_0001);
        set.trials.data_mut()[5] = -0.0;
        let back = read_archive_from(&mut bytes(&set).as_slice()).unwrap();
        assert_eq!(back, set);
        let same_bits = back.trials.data().iter().zip(set.trials.data()).all(|(a, b)| a.to_bits() == b.to_bits());
        assert!(same_bits);
    }

    #[test]
    fn payload_layout() {
        let set = toy_set(1, 1, 2, 3);
        let buf = bytes(&set);
        let start = buf.iter().position(|&b| b == b'\n').unwrap() + 1;
        assert_eq!(buf.len() - start, 6 * 4);
        assert_eq!(&buf[start + 4..start + 8], &1f32.to_le_bytes());
        assert_eq!(&buf[start + 12..start + 16], &3f32.to_le_bytes());
    }

    #[test]
    fn truncated_by_one_byte() {
        let buf = bytes(&toy_set(2, 2, 2, 3));
        let err = read_archive_from(&mut &buf[..buf.len() - 1]).unwrap_err();
        assert!(matches!(err, Error::Truncated { expected: 96, actual: 95 }), "{err}");
        assert!(err.to_string().contains("96") && err.to_string().contains("95"));
    }

    #[test]
    fn empty_set_is_valid() {
        let header = r#"{"version":1,"n_trials":0,"n_channels":2,"n_samples":5,"sampling_rate_hz":250.0,"n_classes":4,"labels":[],"session_ids":[],"channel_names":["a","b"]}"#;
        let set = read_archive_from(&mut format!("{header}\n").as_bytes()).unwrap();
        assert!(set.is_empty());
        assert_eq!(set.trials.shape(), &[0, 2, 5]);
        assert_eq!(read_archive_from(&mut bytes(&set).as_slice()).unwrap(), set);
    }

    #[test]
    fn distinct_errors() {
        let buf = bytes(&toy_set(1, 2, 2, 3));
        let text = String::from_utf8_lossy(&buf).replacen("\"version\":1", "\"version\":2", 1);
        let r = read_archive_from(&mut text.as_bytes());
        assert!(matches!(r, Err(Error::VersionMismatch { found: 2, expected: 1 })));
        assert!(matches!(read_archive_from(&mut &b"{not json\n"[..]), Err(Error::MalformedHeader(_))));
        assert!(matches!(read_archive_from(&mut &b"{\"version\":1}"[..]), Err(Error::MalformedHeader(_))));
        let mut long = buf.clone();
        long.push(0);
        assert!(matches!(read_archive_from(&mut long.as_slice()), Err(Error::MalformedHeader(_))));
        let text = String::from_utf8_lossy(&buf).replacen("\"labels\":[0,1]", "\"labels\":[0]", 1);
        assert!(matches!(read_archive_from(&mut text.as_bytes()), Err(Error::MalformedHeader(_))));
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("set.eta");
        let set = toy_set(2, 2, 2, 4);
        write_archive(&set, &path).unwrap();
        assert_eq!(read_archive(&path).unwrap(), set);
    }
}
