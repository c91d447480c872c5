//! Netflow CSV parsing, streaming chunking and per-family dataset
//! construction.
//!
//! Rows are plain comma-separated text with 12 feature columns and a label
//! column in an explicitly configured order. Nothing is sniffed from the
//! data: a wrong [`Schema`] is a configuration error, not something to guess
//! around.

use std::fmt;
use std::fs::{self, File};
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use chrono::{DateTime, NaiveDateTime, Utc};
use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::Class;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("line {line}: expected {expected} fields, found {found}")]
    MalformedRow { line: usize, expected: usize, found: usize },
    #[error("line {line}: cannot parse {field} from {value:?}: {reason}")]
    FieldParse { line: usize, field: Field, value: String, reason: String },
    #[error("unknown label {label:?}")]
    UnknownLabel { label: String },
    #[error("unknown attack family {0:?}")]
    UnknownFamily(String),
    #[error("invalid schema: {0}")]
    BadSchema(String),
    #[error("rows_per_file must be at least 1")]
    ZeroChunkSize,
    #[error("io error on {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> IngestError + '_ {
    move |source| IngestError::Io { path: path.to_path_buf(), source }
}

/// One column of a netflow row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Field {
    Timestamp,
    Duration,
    SrcIp,
    DstIp,
    SrcPort,
    DstPort,
    Protocol,
    Flags,
    FwdStatus,
    Tos,
    Packets,
    Bytes,
    Label,
}

impl Field {
    /// The 12 feature columns in canonical order, followed by the label.
    pub const ALL: [Field; 13] = [
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
        Field::Label,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Field::Timestamp => "timestamp",
            Field::Duration => "duration",
            Field::SrcIp => "src_ip",
            Field::DstIp => "dst_ip",
            Field::SrcPort => "src_port",
            Field::DstPort => "dst_port",
            Field::Protocol => "protocol",
            Field::Flags => "flags",
            Field::FwdStatus => "fwd_status",
            Field::Tos => "tos",
            Field::Packets => "packets",
            Field::Bytes => "bytes",
            Field::Label => "label",
        }
    }
}

impl fmt::Display for Field {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Field {
    type Err = IngestError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Field::ALL
            .iter()
            .copied()
            .find(|f| f.name() == s.trim())
            .ok_or_else(|| IngestError::BadSchema(format!("unknown field {s:?}")))
    }
}

/// Column order of the input rows. Must name each of the 13 fields exactly
/// once.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Field>", into = "Vec<Field>")]
pub struct Schema {
    order: Vec<Field>,
    // column index of each field, indexed by position in Field::ALL
    positions: [usize; 13],
}

impl Schema {
    pub fn new(order: Vec<Field>) -> Result<Self, IngestError> {
        if order.len() != Field::ALL.len() {
            return Err(IngestError::BadSchema(format!(
                "expected {} fields, got {}",
                Field::ALL.len(),
                order.len()
            )));
        }
        let mut positions = [usize::MAX; 13];
        for (col, field) in order.iter().enumerate() {
            let slot = Field::ALL.iter().position(|f| f == field).unwrap();
            if positions[slot] != usize::MAX {
                return Err(IngestError::BadSchema(format!("field {field} listed twice")));
            }
            positions[slot] = col;
        }
        Ok(Self { order, positions })
    }

    pub fn fields(&self) -> &[Field] {
        &self.order
    }

    fn column(&self, field: Field) -> usize {
        let slot = Field::ALL.iter().position(|f| *f == field).unwrap();
        self.positions[slot]
    }
}

impl Default for Schema {
    fn default() -> Self {
        Schema::new(Field::ALL.to_vec()).unwrap()
    }
}

impl TryFrom<Vec<Field>> for Schema {
    type Error = IngestError;
    fn try_from(v: Vec<Field>) -> Result<Self, Self::Error> {
        Schema::new(v)
    }
}

impl From<Schema> for Vec<Field> {
    fn from(s: Schema) -> Self {
        s.order
    }
}

/// One netflow record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowRecord {
    pub timestamp: DateTime<Utc>,
    pub duration: f64,
    pub src_ip: String,
    pub dst_ip: String,
    pub src_port: u16,
    pub dst_port: u16,
    pub protocol: String,
    pub flags: String,
    pub fwd_status: u32,
    pub tos: u8,
    pub packets: u64,
    pub bytes: u64,
    pub label: String,
}

fn parse_timestamp(s: &str) -> Result<DateTime<Utc>, String> {
    const FORMATS: [&str; 3] = ["%Y-%m-%d %H:%M:%S%.f", "%Y-%m-%dT%H:%M:%S%.f", "%Y/%m/%d %H:%M:%S%.f"];
    for fmt in FORMATS {
        if let Ok(dt) = NaiveDateTime::parse_from_str(s, fmt) {
            return Ok(dt.and_utc());
        }
    }
    DateTime::parse_from_rfc3339(s)
        .map(|dt| dt.with_timezone(&Utc))
        .map_err(|e| e.to_string())
}

// Strict decimal: digits with an optional single '.', no signs other than
// what the caller allows, no thousands separators.
fn parse_decimal(s: &str) -> Result<f64, String> {
    let digits = s.strip_prefix('+').unwrap_or(s);
    if digits.is_empty()
        || !digits.chars().all(|c| c.is_ascii_digit() || c == '.')
        || digits.matches('.').count() > 1
        || digits == "."
    {
        return Err("not a non-negative decimal".into());
    }
    digits.parse::<f64>().map_err(|e| e.to_string())
}

fn parse_integer<T: FromStr>(s: &str) -> Result<T, String>
where
    T::Err: fmt::Display,
{
    if s.is_empty() || !s.chars().all(|c| c.is_ascii_digit()) {
        return Err("not a non-negative integer".into());
    }
    s.parse::<T>().map_err(|e| e.to_string())
}

/// Parses one CSV row. `line` is the 1-based line number used in errors.
pub fn parse_flow(row: &str, schema: &Schema, line: usize) -> Result<FlowRecord, IngestError> {
    let row = row.strip_suffix('\n').unwrap_or(row);
    let row = row.strip_suffix('\r').unwrap_or(row);
    let cols: Vec<&str> = row.split(',').map(str::trim).collect();
    if cols.len() != Field::ALL.len() {
        return Err(IngestError::MalformedRow { line, expected: Field::ALL.len(), found: cols.len() });
    }
    let get = |field: Field| cols[schema.column(field)];
    let fail = |field: Field, reason: String| IngestError::FieldParse {
        line,
        field,
        value: get(field).to_string(),
        reason,
    };

    let timestamp = parse_timestamp(get(Field::Timestamp)).map_err(|e| fail(Field::Timestamp, e))?;
    let duration = parse_decimal(get(Field::Duration)).map_err(|e| fail(Field::Duration, e))?;
    let src_port = parse_integer::<u16>(get(Field::SrcPort)).map_err(|e| fail(Field::SrcPort, e))?;
    let dst_port = parse_integer::<u16>(get(Field::DstPort)).map_err(|e| fail(Field::DstPort, e))?;
    let fwd_status = parse_integer::<u32>(get(Field::FwdStatus)).map_err(|e| fail(Field::FwdStatus, e))?;
    let tos = parse_integer::<u8>(get(Field::Tos)).map_err(|e| fail(Field::Tos, e))?;
    let packets = parse_integer::<u64>(get(Field::Packets)).map_err(|e| fail(Field::Packets, e))?;
    let bytes = parse_integer::<u64>(get(Field::Bytes)).map_err(|e| fail(Field::Bytes, e))?;
    if packets == 0 {
        return Err(fail(Field::Packets, "must be at least 1".into()));
    }
    if bytes == 0 {
        return Err(fail(Field::Bytes, "must be at least 1".into()));
    }
    let flags = get(Field::Flags);
    if flags.chars().count() > 6 {
        return Err(fail(Field::Flags, "more than 6 flag characters".into()));
    }
    for field in [Field::SrcIp, Field::DstIp, Field::Protocol, Field::Label] {
        if get(field).is_empty() {
            return Err(fail(field, "empty".into()));
        }
    }

    Ok(FlowRecord {
        timestamp,
        duration,
        src_ip: get(Field::SrcIp).to_string(),
        dst_ip: get(Field::DstIp).to_string(),
        src_port,
        dst_port,
        protocol: get(Field::Protocol).to_string(),
        flags: flags.to_string(),
        fwd_status,
        tos,
        packets,
        bytes,
        label: get(Field::Label).to_string(),
    })
}

/// Splits a CSV stream into files of `rows_per_file` rows named
/// `<stem>_00000.csv`, `<stem>_00001.csv`, ...
///
/// Memory use is bounded by one line. When `header` is true the first input
/// line is treated as a header and repeated at the top of every chunk; it
/// does not count towards `rows_per_file`. Lines are copied byte for byte; a
/// missing final newline is not added.
pub fn chunk_csv<R: BufRead>(
    mut input: R,
    rows_per_file: usize,
    out_dir: &Path,
    stem: &str,
    header: bool,
) -> Result<Vec<PathBuf>, IngestError> {
    if rows_per_file == 0 {
        return Err(IngestError::ZeroChunkSize);
    }
    fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;

    let mut line = Vec::new();
    let read_line = |input: &mut R, line: &mut Vec<u8>| -> Result<bool, IngestError> {
        line.clear();
        let n = input.read_until(b'\n', line).map_err(|source| IngestError::Io {
            path: PathBuf::from("<input>"),
            source,
        })?;
        Ok(n > 0)
    };

    let mut header_line = None;
    if header && read_line(&mut input, &mut line)? {
        let mut h = line.clone();
        if !h.ends_with(b"\n") {
            h.push(b'\n');
        }
        header_line = Some(h);
    }

    let mut paths = Vec::new();
    let mut writer: Option<(BufWriter<File>, PathBuf)> = None;
    let mut rows_in_file = 0usize;
    while read_line(&mut input, &mut line)? {
        if writer.is_none() || rows_in_file == rows_per_file {
            if let Some((mut w, p)) = writer.take() {
                w.flush().map_err(io_err(&p))?;
            }
            let path = out_dir.join(format!("{stem}_{:05}.csv", paths.len()));
            let file = File::create(&path).map_err(io_err(&path))?;
            let mut w = BufWriter::new(file);
            if let Some(h) = &header_line {
                w.write_all(h).map_err(io_err(&path))?;
            }
            paths.push(path.clone());
            writer = Some((w, path));
            rows_in_file = 0;
        }
        let (w, p) = writer.as_mut().unwrap();
        w.write_all(&line).map_err(io_err(p))?;
        rows_in_file += 1;
    }
    if let Some((mut w, p)) = writer.take() {
        w.flush().map_err(io_err(&p))?;
    }
    Ok(paths)
}

/// Attack families present in the labelled portion of the source data.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum AttackFamily {
    Blacklist,
    AnomalySpam,
    AnomalySshscan,
    Dos,
    Nerisbotnet,
    Scan11,
    Scan44,
}

impl AttackFamily {
    pub const ALL: [AttackFamily; 7] = [
        AttackFamily::Blacklist,
        AttackFamily::AnomalySpam,
        AttackFamily::AnomalySshscan,
        AttackFamily::Dos,
        AttackFamily::Nerisbotnet,
        AttackFamily::Scan11,
        AttackFamily::Scan44,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AttackFamily::Blacklist => "blacklist",
            AttackFamily::AnomalySpam => "anomaly-spam",
            AttackFamily::AnomalySshscan => "anomaly-sshscan",
            AttackFamily::Dos => "dos",
            AttackFamily::Nerisbotnet => "nerisbotnet",
            AttackFamily::Scan11 => "scan11",
            AttackFamily::Scan44 => "scan44",
        }
    }
}

impl fmt::Display for AttackFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AttackFamily {
    type Err = IngestError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key = normalize_label(s);
        AttackFamily::ALL
            .iter()
            .copied()
            .find(|f| f.name() == key)
            .ok_or_else(|| IngestError::UnknownFamily(s.to_string()))
    }
}

impl TryFrom<String> for AttackFamily {
    type Error = IngestError;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<AttackFamily> for String {
    fn from(f: AttackFamily) -> Self {
        f.name().to_string()
    }
}

/// What to do with a row carrying a given label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelRule {
    Attack,
    Nonattack,
    Drop,
}

pub fn normalize_label(s: &str) -> String {
    s.trim().to_lowercase()
}

/// Label token to [`LabelRule`] table. Keys are stored normalized.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelMap {
    rules: IndexMap<String, LabelRule>,
}

impl LabelMap {
    pub fn new() -> Self {
        Self { rules: IndexMap::new() }
    }

    /// Family label as attack, `background` as non-attack, every other
    /// known family label dropped.
    pub fn for_family(family: AttackFamily, background: &str) -> Self {
        let mut map = LabelMap::new();
        map.insert(background, LabelRule::Nonattack);
        for f in AttackFamily::ALL {
            let rule = if f == family { LabelRule::Attack } else { LabelRule::Drop };
            map.insert(f.name(), rule);
        }
        map
    }

    pub fn insert(&mut self, label: &str, rule: LabelRule) {
        self.rules.insert(normalize_label(label), rule);
    }

    pub fn get(&self, label: &str) -> Option<LabelRule> {
        self.rules.get(&normalize_label(label)).copied()
    }
}

impl Default for LabelMap {
    fn default() -> Self {
        LabelMap::for_family(AttackFamily::Blacklist, "background")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawDataset {
    pub records: Vec<(FlowRecord, Class)>,
    pub family: AttackFamily,
    pub n_attack: usize,
    pub n_nonattack: usize,
    /// Rows removed because their label mapped to `drop` (or was unknown in
    /// lenient mode).
    pub n_dropped: usize,
}

impl RawDataset {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

/// Keeps only rows of `family` and background traffic.
///
/// In strict mode a label missing from `label_map` is an error; otherwise it
/// is dropped and counted.
pub fn build_family_dataset<I>(
    records: I,
    family: AttackFamily,
    label_map: &LabelMap,
    strict: bool,
) -> Result<RawDataset, IngestError>
where
    I: IntoIterator<Item = FlowRecord>,
{
    let mut out = RawDataset { records: Vec::new(), family, n_attack: 0, n_nonattack: 0, n_dropped: 0 };
    for rec in records {
        let class = match label_map.get(&rec.label) {
            Some(LabelRule::Attack) => Class::Attack,
            Some(LabelRule::Nonattack) => Class::NonAttack,
            Some(LabelRule::Drop) => {
                out.n_dropped += 1;
                continue;
            }
            None if strict => return Err(IngestError::UnknownLabel { label: rec.label.clone() }),
            None => {
                out.n_dropped += 1;
                continue;
            }
        };
        match class {
            Class::Attack => out.n_attack += 1,
            Class::NonAttack => out.n_nonattack += 1,
        }
        out.records.push((rec, class));
    }
    Ok(out)
}

/// Result of reading a whole CSV file.
#[derive(Debug, Default)]
pub struct ParsedFile {
    pub records: Vec<FlowRecord>,
    /// Lines skipped in lenient mode with the error that caused it.
    pub skipped: Vec<IngestError>,
}

/// Reads every row of `path`. Parse failures are fatal in strict mode and
/// collected into [`ParsedFile::skipped`] otherwise. Blank lines are ignored.
pub fn read_flows(path: &Path, schema: &Schema, header: bool, strict: bool) -> Result<ParsedFile, IngestError> {
    let file = File::open(path).map_err(io_err(path))?;
    let reader = BufReader::new(file);
    let mut out = ParsedFile::default();
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if (header && idx == 0) || line.trim().is_empty() {
            continue;
        }
        match parse_flow(&line, schema, idx + 1) {
            Ok(rec) => out.records.push(rec),
            Err(e) if strict => return Err(e),
            Err(e) => out.skipped.push(e),
        }
    }
    Ok(out)
}
