//! Normalized-sample CSV files and JSON artifact helpers.
//!
//! A sample file has one column per feature, then `label` (0 or 1) and
//! `synthetic` (0 or 1). Floats are written in shortest round-trip form so a
//! write/read cycle is lossless.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;
use thiserror::Error;

use crate::preprocess::FEATURES;
use crate::{Class, EncodedSample, N_FEATURES};

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Json { path: PathBuf, source: serde_json::Error },
    #[error("{path} line {line}: {reason}")]
    Format { path: PathBuf, line: usize, reason: String },
    #[error("{path}: rows have {found} features, expected {expected}")]
    Arity { path: PathBuf, expected: usize, found: usize },
}

/// Column names for `d` features: the flow field names when `d` is the
/// standard width, `x0..x{d-1}` otherwise.
pub fn feature_header(d: usize) -> Vec<String> {
    if d == N_FEATURES {
        FEATURES.iter().map(|f| f.name().to_string()).collect()
    } else {
        (0..d).map(|i| format!("x{i}")).collect()
    }
}

pub fn samples_to_csv(samples: &[EncodedSample]) -> String {
    let d = samples.first().map_or(N_FEATURES, |s| s.features.len());
    let mut out = feature_header(d).join(",");
    out.push_str(",label,synthetic\n");
    for s in samples {
        for v in &s.features {
            let _ = write!(out, "{v},");
        }
        let _ = writeln!(out, "{},{}", s.label.as_u8(), u8::from(s.synthetic));
    }
    out
}

pub fn samples_from_csv(text: &str, path: &Path) -> Result<Vec<EncodedSample>, IoError> {
    let fmt_err = |line: usize, reason: String| IoError::Format { path: path.to_path_buf(), line, reason };
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines.next().ok_or_else(|| fmt_err(1, "missing header".into()))?;
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    if cols.len() < 3 || cols[cols.len() - 2] != "label" || cols[cols.len() - 1] != "synthetic" {
        return Err(fmt_err(1, "header must end with label,synthetic".into()));
    }
    let d = cols.len() - 2;
    let mut out = Vec::new();
    for (i, line) in lines {
        let n = i + 1;
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != d + 2 {
            return Err(fmt_err(n, format!("expected {} fields, found {}", d + 2, fields.len())));
        }
        let mut features = Vec::with_capacity(d);
        for f in &fields[..d] {
            let v: f64 = f.parse().map_err(|_| fmt_err(n, format!("bad number {f:?}")))?;
            if !v.is_finite() {
                return Err(fmt_err(n, format!("non-finite value {f:?}")));
            }
            features.push(v);
        }
        let label = fields[d]
            .parse::<u8>()
            .ok()
            .and_then(Class::from_u8)
            .ok_or_else(|| fmt_err(n, format!("bad label {:?}", fields[d])))?;
        let synthetic = match fields[d + 1] {
            "0" => false,
            "1" => true,
            other => return Err(fmt_err(n, format!("bad synthetic flag {other:?}"))),
        };
        out.push(EncodedSample { features, label, synthetic });
    }
    Ok(out)
}

pub fn read_text(path: &Path) -> Result<String, IoError> {
    fs::read_to_string(path).map_err(|source| IoError::Io { path: path.to_path_buf(), source })
}

pub fn write_text(path: &Path, text: &str) -> Result<(), IoError> {
    if let Some(dir) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|source| IoError::Io { path: dir.to_path_buf(), source })?;
    }
    fs::write(path, text).map_err(|source| IoError::Io { path: path.to_path_buf(), source })
}

pub fn read_samples(path: &Path) -> Result<Vec<EncodedSample>, IoError> {
    samples_from_csv(&read_text(path)?, path)
}

/// Reads samples and checks that every row has `d` features.
pub fn read_samples_dim(path: &Path, d: usize) -> Result<Vec<EncodedSample>, IoError> {
    let samples = read_samples(path)?;
    if let Some(s) = samples.iter().find(|s| s.features.len() != d) {
        return Err(IoError::Arity { path: path.to_path_buf(), expected: d, found: s.features.len() });
    }
    Ok(samples)
}

pub fn write_samples(path: &Path, samples: &[EncodedSample]) -> Result<(), IoError> {
    write_text(path, &samples_to_csv(samples))
}

pub fn to_json_string<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("artifact types serialize");
    s.push('\n');
    s
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), IoError> {
    write_text(path, &to_json_string(value))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, IoError> {
    let text = read_text(path)?;
    serde_json::from_str(&text).map_err(|source| IoError::Json { path: path.to_path_buf(), source })
}
