//! Embedding-trace interchange format.
//!
//! A trace directory holds one `manifest.json` plus one raw little-endian,
//! row-major binary blob per record:
//!
//! ```json
//! {
//!   "version": "1",
//!   "model_id": "toy-2l",
//!   "metadata": { "capture_point": "post-block residual" },
//!   "records": [
//!     { "id": "p0/L0", "prompt_id": "p0", "role": "prompt", "modality": "text",
//!       "layer": 0, "type_tag": "abductive", "length_chars": 120,
//!       "shape": [8, 16], "dtype": "f32", "path": "records/p0_L0.bin" }
//!   ]
//! }
//! ```
//!
//! `layer` absent or `null` means the embedding layer. Validation is total:
//! a malformed directory yields every violation found, never a partial load.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs;
use std::io::{self, Write};
use std::path::{Component, Path, PathBuf};
use std::str::FromStr;
use std::sync::Mutex;

use infoprobe_core::{EmbeddingSequence, Modality, Role};
use serde::{Deserialize, Serialize};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const FORMAT_VERSION: &str = "1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Dtype {
    F32,
    F64,
}

impl Dtype {
    pub fn size(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F64 => 8,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Dtype::F32 => "f32",
            Dtype::F64 => "f64",
        }
    }
}

impl FromStr for Dtype {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "f32" => Ok(Dtype::F32),
            "f64" => Ok(Dtype::F64),
            other => Err(format!("unknown dtype {other:?}")),
        }
    }
}

/// One manifest problem. A directory can have many.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    UnsupportedVersion { found: String },
    EmptyId { index: usize },
    DuplicateId { id: String },
    UnknownRole { id: String, role: String },
    UnknownModality { id: String, modality: String },
    UnknownDtype { id: String, dtype: String },
    BadShape { id: String, shape: Vec<i64> },
    OutOfRange { id: String, field: String, value: i64 },
    UnsafePath { id: String, path: String },
    MissingFile { id: String, path: String },
    ByteLengthMismatch { id: String, expected: u64, actual: u64 },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::UnsupportedVersion { found } => {
                write!(f, "unsupported format version {found:?} (expected {FORMAT_VERSION:?})")
            }
            Violation::EmptyId { index } => write!(f, "record #{index} has an empty id"),
            Violation::DuplicateId { id } => write!(f, "duplicate record id {id:?}"),
            Violation::UnknownRole { id, role } => write!(f, "{id}: unknown role {role:?}"),
            Violation::UnknownModality { id, modality } => {
                write!(f, "{id}: unknown modality {modality:?}")
            }
            Violation::UnknownDtype { id, dtype } => write!(f, "{id}: unknown dtype {dtype:?}"),
            Violation::BadShape { id, shape } => {
                write!(f, "{id}: shape {shape:?} is not two positive dimensions")
            }
            Violation::OutOfRange { id, field, value } => {
                write!(f, "{id}: {field} out of range: {value}")
            }
            Violation::UnsafePath { id, path } => {
                write!(f, "{id}: path {path:?} must be relative and stay inside the trace directory")
            }
            Violation::MissingFile { id, path } => write!(f, "{id}: data file {path:?} not found"),
            Violation::ByteLengthMismatch { id, expected, actual } => write!(
                f,
                "{id}: data file has {actual} bytes, declared shape and dtype need {expected}"
            ),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum IngestError {
    #[error("no {MANIFEST_FILE} in {0}")]
    MissingManifest(PathBuf),

    #[error("malformed manifest: {0}")]
    Parse(String),

    #[error("manifest has {} violation(s): {}", .0.len(), join_violations(.0))]
    Invalid(Vec<Violation>),

    #[error("record {id}: payload has {actual} bytes, expected {expected}")]
    Truncated { id: String, expected: u64, actual: u64 },

    #[error("record {id}: non-finite value at row {row}, column {col}")]
    NonFinite { id: String, row: usize, col: usize },

    #[error("record {id} already exists; pass overwrite to replace it")]
    AlreadyExists { id: String },

    #[error("record {id}: {reason}")]
    BadRecord { id: String, reason: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error("results csv: {0}")]
    Csv(#[from] csv::Error),
}

fn join_violations(v: &[Violation]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ")
}

pub(crate) fn io_err(path: &Path) -> impl FnOnce(io::Error) -> IngestError + '_ {
    move |source| IngestError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// A validated manifest entry.
#[derive(Debug, Clone, PartialEq)]
pub struct RecordEntry {
    pub id: String,
    /// Groups the layers and roles belonging to one prompt.
    pub prompt_id: String,
    pub role: Role,
    pub modality: Modality,
    pub layer: Option<u32>,
    pub type_tag: String,
    pub length_chars: Option<u64>,
    /// `[n, d]`.
    pub shape: [usize; 2],
    pub dtype: Dtype,
    /// Relative to the trace directory.
    pub path: String,
}

impl RecordEntry {
    pub fn byte_len(&self) -> u64 {
        (self.shape[0] * self.shape[1] * self.dtype.size()) as u64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceManifest {
    pub version: String,
    pub model_id: String,
    pub metadata: BTreeMap<String, serde_json::Value>,
    pub records: Vec<RecordEntry>,
}

impl TraceManifest {
    pub fn new(model_id: impl Into<String>) -> Self {
        Self {
            version: FORMAT_VERSION.to_string(),
            model_id: model_id.into(),
            metadata: BTreeMap::new(),
            records: Vec::new(),
        }
    }

    pub fn get(&self, id: &str) -> Option<&RecordEntry> {
        self.records.iter().find(|r| r.id == id)
    }
}

#[derive(Serialize, Deserialize)]
struct RawManifest {
    version: String,
    model_id: String,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    metadata: BTreeMap<String, serde_json::Value>,
    records: Vec<RawRecord>,
}

#[derive(Serialize, Deserialize)]
struct RawRecord {
    id: String,
    prompt_id: String,
    role: String,
    modality: String,
    #[serde(default)]
    layer: Option<i64>,
    #[serde(default)]
    type_tag: String,
    #[serde(default)]
    length_chars: Option<i64>,
    shape: Vec<i64>,
    dtype: String,
    path: String,
}

impl From<&RecordEntry> for RawRecord {
    fn from(e: &RecordEntry) -> Self {
        Self {
            id: e.id.clone(),
            prompt_id: e.prompt_id.clone(),
            role: e.role.as_str().to_string(),
            modality: e.modality.as_str().to_string(),
            layer: e.layer.map(i64::from),
            type_tag: e.type_tag.clone(),
            length_chars: e.length_chars.map(|v| v as i64),
            shape: vec![e.shape[0] as i64, e.shape[1] as i64],
            dtype: e.dtype.as_str().to_string(),
            path: e.path.clone(),
        }
    }
}

fn is_safe_relative(path: &str) -> bool {
    let p = Path::new(path);
    !path.is_empty()
        && p.components().all(|c| matches!(c, Component::Normal(_) | Component::CurDir))
}

fn validate_record(raw: RawRecord, dir: &Path, out: &mut Vec<Violation>) -> Option<RecordEntry> {
    let id = raw.id;
    let before = out.len();
    let role = Role::from_str(&raw.role)
        .map_err(|_| out.push(Violation::UnknownRole { id: id.clone(), role: raw.role.clone() }))
        .ok();
    let modality = Modality::from_str(&raw.modality)
        .map_err(|_| {
            out.push(Violation::UnknownModality {
                id: id.clone(),
                modality: raw.modality.clone(),
            })
        })
        .ok();
    let dtype = Dtype::from_str(&raw.dtype)
        .map_err(|_| out.push(Violation::UnknownDtype { id: id.clone(), dtype: raw.dtype.clone() }))
        .ok();
    let shape = match raw.shape.as_slice() {
        &[n, d] if n > 0 && d > 0 => Some([n as usize, d as usize]),
        _ => {
            out.push(Violation::BadShape { id: id.clone(), shape: raw.shape.clone() });
            None
        }
    };
    let mut nonneg = |field: &str, v: Option<i64>| match v {
        Some(x) if x < 0 => {
            out.push(Violation::OutOfRange { id: id.clone(), field: field.into(), value: x });
            None
        }
        other => Some(other),
    };
    let layer = nonneg("layer", raw.layer);
    let length_chars = nonneg("length_chars", raw.length_chars);
    if let Some(Some(l)) = layer {
        if l > i64::from(u32::MAX) {
            out.push(Violation::OutOfRange { id: id.clone(), field: "layer".into(), value: l });
        }
    }

    if !is_safe_relative(&raw.path) {
        out.push(Violation::UnsafePath { id: id.clone(), path: raw.path.clone() });
    } else {
        match fs::metadata(dir.join(&raw.path)) {
            Ok(meta) if meta.is_file() => {
                if let (Some(shape), Some(dtype)) = (shape, dtype) {
                    let expected = (shape[0] * shape[1] * dtype.size()) as u64;
                    if meta.len() != expected {
                        out.push(Violation::ByteLengthMismatch {
                            id: id.clone(),
                            expected,
                            actual: meta.len(),
                        });
                    }
                }
            }
            _ => out.push(Violation::MissingFile { id: id.clone(), path: raw.path.clone() }),
        }
    }

    if out.len() > before {
        return None;
    }
    Some(RecordEntry {
        id,
        prompt_id: raw.prompt_id,
        role: role?,
        modality: modality?,
        layer: layer?.map(|l| l as u32),
        type_tag: raw.type_tag,
        length_chars: length_chars?.map(|l| l as u64),
        shape: shape?,
        dtype: dtype?,
        path: raw.path,
    })
}

/// Reads and fully validates `dir/manifest.json`.
pub fn read_manifest(dir: impl AsRef<Path>) -> Result<TraceManifest, IngestError> {
    let dir = dir.as_ref();
    let path = dir.join(MANIFEST_FILE);
    let text = match fs::read_to_string(&path) {
        Ok(t) => t,
        Err(e) if e.kind() == io::ErrorKind::NotFound => {
            return Err(IngestError::MissingManifest(dir.to_path_buf()))
        }
        Err(e) => return Err(io_err(&path)(e)),
    };
    let raw: RawManifest =
        serde_json::from_str(&text).map_err(|e| IngestError::Parse(e.to_string()))?;

    let mut violations = Vec::new();
    if raw.version != FORMAT_VERSION {
        violations.push(Violation::UnsupportedVersion { found: raw.version.clone() });
    }
    let mut seen = HashSet::new();
    let mut records = Vec::with_capacity(raw.records.len());
    for (index, rec) in raw.records.into_iter().enumerate() {
        if rec.id.is_empty() {
            violations.push(Violation::EmptyId { index });
            continue;
        }
        if !seen.insert(rec.id.clone()) {
            violations.push(Violation::DuplicateId { id: rec.id.clone() });
            continue;
        }
        if let Some(entry) = validate_record(rec, dir, &mut violations) {
            records.push(entry);
        }
    }
    if !violations.is_empty() {
        return Err(IngestError::Invalid(violations));
    }
    Ok(TraceManifest {
        version: raw.version,
        model_id: raw.model_id,
        metadata: raw.metadata,
        records,
    })
}

/// Decodes a record's payload into a sequence carrying the entry's metadata.
pub fn load_record(dir: impl AsRef<Path>, entry: &RecordEntry) -> Result<EmbeddingSequence, IngestError> {
    let path = dir.as_ref().join(&entry.path);
    let bytes = fs::read(&path).map_err(io_err(&path))?;
    decode_payload(&bytes, entry)
}

pub fn decode_payload(bytes: &[u8], entry: &RecordEntry) -> Result<EmbeddingSequence, IngestError> {
    let [n, d] = entry.shape;
    let expected = entry.byte_len();
    if bytes.len() as u64 != expected {
        return Err(IngestError::Truncated {
            id: entry.id.clone(),
            expected,
            actual: bytes.len() as u64,
        });
    }
    let values: Vec<f64> = match entry.dtype {
        Dtype::F32 => bytes
            .chunks_exact(4)
            .map(|c| f64::from(f32::from_le_bytes(c.try_into().unwrap())))
            .collect(),
        Dtype::F64 => bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect(),
    };
    if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
        return Err(IngestError::NonFinite {
            id: entry.id.clone(),
            row: pos / d,
            col: pos % d,
        });
    }
    let seq = EmbeddingSequence::from_flat(values, n, d).map_err(|e| IngestError::BadRecord {
        id: entry.id.clone(),
        reason: e.to_string(),
    })?;
    Ok(seq
        .with_id(entry.id.clone())
        .with_role(entry.role)
        .with_modality(entry.modality)
        .with_layer(entry.layer))
}

pub fn encode_payload(seq: &EmbeddingSequence, dtype: Dtype) -> Vec<u8> {
    match dtype {
        Dtype::F32 => seq.as_flat().iter().flat_map(|&v| (v as f32).to_le_bytes()).collect(),
        Dtype::F64 => seq.as_flat().iter().flat_map(|v| v.to_le_bytes()).collect(),
    }
}

/// Writes `bytes` to `path` via a temporary file in the same directory and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), IngestError> {
    let parent = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(parent).map_err(io_err(parent))?;
    let mut tmp = tempfile::NamedTempFile::new_in(parent).map_err(io_err(parent))?;
    tmp.write_all(bytes).map_err(io_err(path))?;
    tmp.as_file().sync_all().map_err(io_err(path))?;
    tmp.persist(path).map_err(|e| IngestError::Io {
        path: path.to_path_buf(),
        source: e.error,
    })?;
    Ok(())
}

pub fn write_manifest(dir: &Path, manifest: &TraceManifest) -> Result<(), IngestError> {
    let raw = RawManifest {
        version: manifest.version.clone(),
        model_id: manifest.model_id.clone(),
        metadata: manifest.metadata.clone(),
        records: manifest.records.iter().map(RawRecord::from).collect(),
    };
    let mut text = serde_json::to_string_pretty(&raw).map_err(|e| IngestError::Parse(e.to_string()))?;
    text.push('\n');
    write_atomic(&dir.join(MANIFEST_FILE), text.as_bytes())
}

/// Descriptive fields of a record to be written.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RecordMeta {
    pub id: String,
    pub prompt_id: String,
    pub role: Role,
    pub modality: Modality,
    pub layer: Option<u32>,
    pub type_tag: String,
    pub length_chars: Option<u64>,
}

fn blob_name(id: &str) -> String {
    let safe: String = id
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' || c == '.' { c } else { '_' })
        .collect();
    // FNV-1a keeps distinct ids apart after sanitizing.
    let hash = id
        .bytes()
        .fold(0xcbf2_9ce4_8422_2325_u64, |h, b| (h ^ u64::from(b)).wrapping_mul(0x100_0000_01b3));
    format!("records/{safe}-{:08x}.bin", hash as u32)
}

/// Writer for a trace directory. Blob writes run concurrently; manifest
/// updates serialize on an internal lock and are persisted atomically.
pub struct TraceWriter {
    dir: PathBuf,
    manifest: Mutex<TraceManifest>,
}

impl TraceWriter {
    /// Starts a new trace directory with an empty manifest.
    pub fn create(dir: impl Into<PathBuf>, model_id: &str) -> Result<Self, IngestError> {
        let dir = dir.into();
        fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        let manifest = TraceManifest::new(model_id);
        write_manifest(&dir, &manifest)?;
        Ok(Self { dir, manifest: Mutex::new(manifest) })
    }

    /// Opens an existing, valid trace directory for appending.
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self, IngestError> {
        let dir = dir.into();
        let manifest = read_manifest(&dir)?;
        Ok(Self { dir, manifest: Mutex::new(manifest) })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn set_metadata(&self, key: &str, value: serde_json::Value) -> Result<(), IngestError> {
        let mut m = self.manifest.lock().unwrap_or_else(|e| e.into_inner());
        m.metadata.insert(key.to_string(), value);
        write_manifest(&self.dir, &m)
    }

    pub fn manifest(&self) -> TraceManifest {
        self.manifest.lock().unwrap_or_else(|e| e.into_inner()).clone()
    }

    /// Adds a record. Replacing an existing id requires `overwrite`.
    pub fn write_record(
        &self,
        meta: RecordMeta,
        seq: &EmbeddingSequence,
        dtype: Dtype,
        overwrite: bool,
    ) -> Result<RecordEntry, IngestError> {
        if meta.id.is_empty() {
            return Err(IngestError::BadRecord { id: meta.id, reason: "empty id".into() });
        }
        if dtype == Dtype::F32 && seq.as_flat().iter().any(|v| !(*v as f32).is_finite()) {
            return Err(IngestError::BadRecord {
                id: meta.id,
                reason: "value overflows f32".into(),
            });
        }
        let bytes = encode_payload(seq, dtype);
        let entry = RecordEntry {
            path: blob_name(&meta.id),
            id: meta.id,
            prompt_id: meta.prompt_id,
            role: meta.role,
            modality: meta.modality,
            layer: meta.layer,
            type_tag: meta.type_tag,
            length_chars: meta.length_chars,
            shape: [seq.len(), seq.dim()],
            dtype,
        };

        let mut m = self.manifest.lock().unwrap_or_else(|e| e.into_inner());
        let existing = m.records.iter().position(|r| r.id == entry.id);
        if existing.is_some() && !overwrite {
            return Err(IngestError::AlreadyExists { id: entry.id });
        }
        write_atomic(&self.dir.join(&entry.path), &bytes)?;
        match existing {
            Some(i) => m.records[i] = entry.clone(),
            None => m.records.push(entry.clone()),
        }
        write_manifest(&self.dir, &m)?;
        Ok(entry)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Entropy,
    CondEntropy,
}

impl Metric {
    pub fn as_str(self) -> &'static str {
        match self {
            Metric::Entropy => "entropy",
            Metric::CondEntropy => "cond_entropy",
        }
    }
}

/// One computation, as stored in the results CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub model_id: String,
    pub prompt_id: String,
    pub role: String,
    pub modality: String,
    pub layer: Option<u32>,
    pub type_tag: String,
    pub length_chars: Option<u64>,
    pub metric: Metric,
    pub value: f64,
    pub sigma: f64,
    pub alpha: f64,
    pub log_base: String,
    pub n_effective: usize,
    pub seed: Option<u64>,
}

pub fn results_to_writer<W: Write>(w: W, rows: &[ResultRow]) -> Result<(), IngestError> {
    let mut wtr = csv::Writer::from_writer(w);
    if rows.is_empty() {
        wtr.write_record(RESULT_COLUMNS)?;
    }
    for row in rows {
        wtr.serialize(row)?;
    }
    wtr.flush().map_err(|e| IngestError::Csv(e.into()))?;
    Ok(())
}

pub const RESULT_COLUMNS: [&str; 14] = [
    "model_id",
    "prompt_id",
    "role",
    "modality",
    "layer",
    "type_tag",
    "length_chars",
    "metric",
    "value",
    "sigma",
    "alpha",
    "log_base",
    "n_effective",
    "seed",
];

/// Atomically writes the results CSV.
pub fn write_results(path: impl AsRef<Path>, rows: &[ResultRow]) -> Result<(), IngestError> {
    let mut buf = Vec::new();
    results_to_writer(&mut buf, rows)?;
    write_atomic(path.as_ref(), &buf)
}

pub fn read_results(path: impl AsRef<Path>) -> Result<Vec<ResultRow>, IngestError> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(io_err(path))?;
    let mut rdr = csv::Reader::from_reader(file);
    let headers = rdr.headers()?.clone();
    if headers.iter().ne(RESULT_COLUMNS.iter().copied()) {
        return Err(IngestError::Parse(format!(
            "results header {:?} does not match {:?}",
            headers.iter().collect::<Vec<_>>(),
            RESULT_COLUMNS
        )));
    }
    rdr.deserialize().map(|r| r.map_err(IngestError::from)).collect()
}
