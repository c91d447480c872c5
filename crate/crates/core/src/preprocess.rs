//! Flow record encoding, min-max normalization and feature histograms.

use std::net::Ipv4Addr;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ingest::{Field, FlowRecord};
use crate::N_FEATURES;

#[derive(Debug, Error, PartialEq)]
pub enum PreprocessError {
    #[error("unseen token {token:?} for feature {field}")]
    UnknownToken { field: Field, token: String },
    #[error("empty input")]
    EmptyInput,
    #[error("expected {expected} values, got {found}")]
    ArityMismatch { expected: usize, found: usize },
    #[error("rule {rule:?} cannot encode feature {field}")]
    IncompatibleRule { field: Field, rule: EncodingRule },
    #[error("n_bins must be at least 1")]
    ZeroBins,
}

/// How one feature becomes a number.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EncodingRule {
    NumericPassthrough,
    /// Dotted-quad IPv4 as its 32-bit integer; anything else as the 32-bit
    /// FNV-1a hash of its UTF-8 bytes.
    IpToInteger,
    /// Dense insertion-ordered token index starting at 0.
    Dictionary,
    /// TCP flags as bits, U=32 A=16 P=8 R=4 S=2 F=1.
    Flagbits,
    EpochSeconds,
}

/// The 12 features in the order they appear in encoded vectors.
pub const FEATURES: [Field; N_FEATURES] = [
    Field::Timestamp,
    Field::Duration,
    Field::SrcIp,
    Field::DstIp,
    Field::SrcPort,
    Field::DstPort,
    Field::Protocol,
    Field::Flags,
    Field::FwdStatus,
    Field::Tos,
    Field::Packets,
    Field::Bytes,
];

pub fn default_rule(field: Field) -> EncodingRule {
    match field {
        Field::Timestamp => EncodingRule::EpochSeconds,
        Field::SrcIp | Field::DstIp => EncodingRule::IpToInteger,
        Field::Protocol | Field::FwdStatus => EncodingRule::Dictionary,
        Field::Flags => EncodingRule::Flagbits,
        _ => EncodingRule::NumericPassthrough,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureEncoding {
    pub field: Field,
    pub rule: EncodingRule,
    #[serde(default, skip_serializing_if = "IndexMap::is_empty")]
    pub dictionary: IndexMap<String, usize>,
}

/// Per-feature encoding rules plus the dictionaries learned while fitting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderSpec {
    pub features: Vec<FeatureEncoding>,
}

impl Default for EncoderSpec {
    fn default() -> Self {
        Self::with_rules(default_rule)
    }
}

pub fn fnv1a_32(bytes: &[u8]) -> u32 {
    let mut h: u32 = 0x811c_9dc5;
    for b in bytes {
        h ^= *b as u32;
        h = h.wrapping_mul(0x0100_0193);
    }
    h
}

pub fn ip_to_integer(s: &str) -> f64 {
    match s.parse::<Ipv4Addr>() {
        Ok(addr) => u32::from(addr) as f64,
        Err(_) => fnv1a_32(s.as_bytes()) as f64,
    }
}

pub fn flag_bits(s: &str) -> Result<u32, char> {
    let mut bits = 0;
    for c in s.chars() {
        bits |= match c.to_ascii_uppercase() {
            'U' => 32,
            'A' => 16,
            'P' => 8,
            'R' => 4,
            'S' => 2,
            'F' => 1,
            '.' => 0,
            other => return Err(other),
        };
    }
    Ok(bits)
}

fn field_text(rec: &FlowRecord, field: Field) -> String {
    match field {
        Field::Timestamp => rec.timestamp.to_rfc3339(),
        Field::Duration => rec.duration.to_string(),
        Field::SrcIp => rec.src_ip.clone(),
        Field::DstIp => rec.dst_ip.clone(),
        Field::SrcPort => rec.src_port.to_string(),
        Field::DstPort => rec.dst_port.to_string(),
        Field::Protocol => rec.protocol.clone(),
        Field::Flags => rec.flags.clone(),
        Field::FwdStatus => rec.fwd_status.to_string(),
        Field::Tos => rec.tos.to_string(),
        Field::Packets => rec.packets.to_string(),
        Field::Bytes => rec.bytes.to_string(),
        Field::Label => rec.label.clone(),
    }
}

fn field_number(rec: &FlowRecord, field: Field) -> Option<f64> {
    Some(match field {
        Field::Duration => rec.duration,
        Field::SrcPort => rec.src_port as f64,
        Field::DstPort => rec.dst_port as f64,
        Field::FwdStatus => rec.fwd_status as f64,
        Field::Tos => rec.tos as f64,
        Field::Packets => rec.packets as f64,
        Field::Bytes => rec.bytes as f64,
        Field::Timestamp => rec.timestamp.timestamp_micros() as f64 / 1e6,
        _ => return None,
    })
}

impl EncoderSpec {
    pub fn with_rules(rule: impl Fn(Field) -> EncodingRule) -> Self {
        let features = FEATURES
            .iter()
            .map(|&field| FeatureEncoding { field, rule: rule(field), dictionary: IndexMap::new() })
            .collect();
        Self { features }
    }

    /// Encodes with frozen dictionaries.
    pub fn encode(&self, rec: &FlowRecord) -> Result<Vec<f64>, PreprocessError> {
        if self.features.len() != N_FEATURES {
            return Err(PreprocessError::ArityMismatch { expected: N_FEATURES, found: self.features.len() });
        }
        self.features
            .iter()
            .map(|enc| {
                let incompatible = || PreprocessError::IncompatibleRule { field: enc.field, rule: enc.rule };
                Ok(match enc.rule {
                    EncodingRule::NumericPassthrough => field_number(rec, enc.field).ok_or_else(incompatible)?,
                    EncodingRule::EpochSeconds if enc.field == Field::Timestamp => {
                        field_number(rec, enc.field).unwrap()
                    }
                    EncodingRule::EpochSeconds => return Err(incompatible()),
                    EncodingRule::IpToInteger => ip_to_integer(&field_text(rec, enc.field)),
                    EncodingRule::Flagbits => {
                        let text = field_text(rec, enc.field);
                        match flag_bits(&text) {
                            Ok(bits) => bits as f64,
                            Err(_) => return Err(PreprocessError::UnknownToken { field: enc.field, token: text }),
                        }
                    }
                    EncodingRule::Dictionary => {
                        let token = field_text(rec, enc.field);
                        match enc.dictionary.get(&token) {
                            Some(&idx) => idx as f64,
                            None => return Err(PreprocessError::UnknownToken { field: enc.field, token }),
                        }
                    }
                })
            })
            .collect()
    }

    /// Encodes, adding unseen dictionary tokens in first-appearance order.
    pub fn encode_fitting(&mut self, rec: &FlowRecord) -> Result<Vec<f64>, PreprocessError> {
        for enc in self.features.iter_mut().filter(|e| e.rule == EncodingRule::Dictionary) {
            let next = enc.dictionary.len();
            enc.dictionary.entry(field_text(rec, enc.field)).or_insert(next);
        }
        self.encode(rec)
    }

    /// Fits dictionaries over `records` in order and returns the encoded rows.
    pub fn fit_encode<'a, I>(&mut self, records: I) -> Result<Vec<Vec<f64>>, PreprocessError>
    where
        I: IntoIterator<Item = &'a FlowRecord>,
    {
        records.into_iter().map(|r| self.encode_fitting(r)).collect()
    }
}

/// Column-wise min-max scaler.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl Normalizer {
    /// A normalizer with range `[0, 1]` on every column.
    pub fn identity(d: usize) -> Self {
        Self { min: vec![0.0; d], max: vec![1.0; d] }
    }

    pub fn arity(&self) -> usize {
        self.min.len()
    }

    /// Scales into `[0, 1]`, clipping values outside the fitted range.
    /// Constant columns map to 0.
    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>, PreprocessError> {
        if x.len() != self.arity() {
            return Err(PreprocessError::ArityMismatch { expected: self.arity(), found: x.len() });
        }
        Ok(x.iter()
            .zip(self.min.iter().zip(&self.max))
            .map(|(&v, (&lo, &hi))| {
                let range = hi - lo;
                if range > 0.0 {
                    ((v - lo) / range).clamp(0.0, 1.0)
                } else {
                    0.0
                }
            })
            .collect())
    }
}

pub fn fit_normalizer<V: AsRef<[f64]>>(samples: &[V]) -> Result<Normalizer, PreprocessError> {
    let first = samples.first().ok_or(PreprocessError::EmptyInput)?.as_ref();
    let mut min = first.to_vec();
    let mut max = first.to_vec();
    for s in &samples[1..] {
        let s = s.as_ref();
        if s.len() != min.len() {
            return Err(PreprocessError::ArityMismatch { expected: min.len(), found: s.len() });
        }
        for (j, &v) in s.iter().enumerate() {
            min[j] = min[j].min(v);
            max[j] = max[j].max(v);
        }
    }
    Ok(Normalizer { min, max })
}

pub fn apply_normalizer(x: &[f64], norm: &Normalizer) -> Result<Vec<f64>, PreprocessError> {
    norm.apply(x)
}

pub const DEFAULT_BINS: usize = 50;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    /// Left edge of every bin; the last bin also includes 1.0.
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

impl Histogram {
    /// Two-column `bin_left_edge,count` CSV.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("bin_left_edge,count\n");
        for (e, c) in self.edges.iter().zip(&self.counts) {
            out.push_str(&format!("{e},{c}\n"));
        }
        out
    }
}

/// Equal-width histogram over `[0, 1]`, bins half-open except the last.
pub fn histogram(values: &[f64], n_bins: usize) -> Result<Histogram, PreprocessError> {
    if n_bins == 0 {
        return Err(PreprocessError::ZeroBins);
    }
    if values.is_empty() {
        return Err(PreprocessError::EmptyInput);
    }
    let mut counts = vec![0usize; n_bins];
    for &v in values {
        let idx = ((v.clamp(0.0, 1.0) * n_bins as f64).floor() as usize).min(n_bins - 1);
        counts[idx] += 1;
    }
    let edges = (0..n_bins).map(|i| i as f64 / n_bins as f64).collect();
    Ok(Histogram { edges, counts })
}
