//! Reading and writing recorded noise traces.
//!
//! A trace is a data file plus a sidecar header at `<data>.hdr` holding
//! `key = value` lines. Recognized keys are `sampling_rate_hz` (required),
//! `format` (`text`, `f64le` or `f32le`; default `text`) and `units`
//! (informational). Text data holds one decimal reading per line; blank
//! lines and lines starting with `#` are skipped.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::smtj::TelegraphTrace;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TraceFormat {
    Text,
    F64Le,
    F32Le,
}

impl TraceFormat {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "text" => Ok(Self::Text),
            "f64le" => Ok(Self::F64Le),
            "f32le" => Ok(Self::F32Le),
            other => Err(Error::Parse(format!("unknown trace format {other:?}"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Text => "text",
            Self::F64Le => "f64le",
            Self::F32Le => "f32le",
        }
    }
}

pub fn header_path(data: &Path) -> PathBuf {
    let mut s = data.as_os_str().to_owned();
    s.push(".hdr");
    PathBuf::from(s)
}

fn parse_header(text: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Parse(format!("header line {}: expected key = value", i + 1)))?;
        map.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(map)
}

pub fn decode_samples(bytes: &[u8], format: TraceFormat) -> Result<Vec<f64>> {
    match format {
        TraceFormat::Text => {
            let text = std::str::from_utf8(bytes).map_err(|e| Error::Parse(e.to_string()))?;
            text.lines()
                .enumerate()
                .map(|(i, l)| (i, l.trim()))
                .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
                .map(|(i, l)| {
                    l.parse::<f64>()
                        .map_err(|e| Error::Parse(format!("trace line {}: {e}", i + 1)))
                })
                .collect()
        }
        TraceFormat::F64Le => {
            if bytes.len() % 8 != 0 {
                return Err(Error::Parse("f64le trace length is not a multiple of 8".into()));
            }
            Ok(bytes
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes([c[0], c[1], c[2], c[3], c[4], c[5], c[6], c[7]]))
                .collect())
        }
        TraceFormat::F32Le => {
            if bytes.len() % 4 != 0 {
                return Err(Error::Parse("f32le trace length is not a multiple of 4".into()));
            }
            Ok(bytes
                .chunks_exact(4)
                .map(|c| f64::from(f32::from_le_bytes([c[0], c[1], c[2], c[3]])))
                .collect())
        }
    }
}

/// Reads a trace and its header. `rate_override` replaces (or stands in
/// for a missing) header.
pub fn read_trace(data: &Path, rate_override: Option<f64>) -> Result<TelegraphTrace> {
    let hdr = header_path(data);
    let header = if hdr.exists() {
        parse_header(&fs::read_to_string(&hdr)?)?
    } else {
        BTreeMap::new()
    };
    let format = header
        .get("format")
        .map_or(Ok(TraceFormat::Text), |f| TraceFormat::parse(f))?;
    let rate = match rate_override {
        Some(r) => r,
        None => header
            .get("sampling_rate_hz")
            .ok_or_else(|| Error::Parse(format!("{}: missing sampling_rate_hz", hdr.display())))?
            .parse::<f64>()
            .map_err(|e| Error::Parse(format!("sampling_rate_hz: {e}")))?,
    };
    TelegraphTrace::new(decode_samples(&fs::read(data)?, format)?, rate)
}

pub fn write_trace(trace: &TelegraphTrace, data: &Path, format: TraceFormat, units: &str) -> Result<()> {
    let bytes: Vec<u8> = match format {
        TraceFormat::Text => {
            let mut s = String::with_capacity(trace.len() * 12);
            for v in trace.samples() {
                s.push_str(&format!("{v:e}\n"));
            }
            s.into_bytes()
        }
        TraceFormat::F64Le => trace.samples().iter().flat_map(|v| v.to_le_bytes()).collect(),
        TraceFormat::F32Le => trace.samples().iter().flat_map(|&v| (v as f32).to_le_bytes()).collect(),
    };
    fs::write(data, bytes)?;
    fs::write(
        header_path(data),
        format!(
            "sampling_rate_hz = {}\nformat = {}\nunits = {}\n",
            trace.sampling_rate(),
            format.name(),
            units
        ),
    )?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_all_formats() {
        let dir = tempfile::tempdir().unwrap();
        let t = TelegraphTrace::new(vec![0.0481, 0.0362, -1.5e-7, 3.25], 40_000.0).unwrap();
        for f in [TraceFormat::Text, TraceFormat::F64Le] {
            let p = dir.path().join(format!("t.{}", f.name()));
            write_trace(&t, &p, f, "V").unwrap();
            assert_eq!(read_trace(&p, None).unwrap(), t);
        }
        let p = dir.path().join("t.f32");
        write_trace(&t, &p, TraceFormat::F32Le, "V").unwrap();
        let back = read_trace(&p, None).unwrap();
        for (a, b) in back.samples().iter().zip(t.samples()) {
            assert!((a - b).abs() <= 1e-7 * b.abs().max(1.0));
        }
    }

    #[test]
    fn header_handling() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("raw.txt");
        fs::write(&p, "# comment\n1.0\n\n2.0\n3\n").unwrap();
        assert!(read_trace(&p, None).is_err());
        let t = read_trace(&p, Some(10.0)).unwrap();
        assert_eq!(t.samples(), &[1.0, 2.0, 3.0]);
        fs::write(header_path(&p), "sampling_rate_hz = 5\nformat = bogus\n").unwrap();
        assert!(read_trace(&p, None).is_err());
        fs::write(header_path(&p), "no equals sign\n").unwrap();
        assert!(read_trace(&p, None).is_err());
        fs::write(&p, "1.0\nnope\n").unwrap();
        assert!(read_trace(&p, Some(1.0)).is_err());
    }
}
