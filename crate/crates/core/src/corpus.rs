//! Labeled corpora, train/validation/test splits and checkpoint files.

use std::collections::HashSet;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::model::{EpochRecord, ModelParams, TrainConfig};
use crate::numerics::{AdamState, Matrix};
use crate::pls::Vocab;

pub const CHECKPOINT_VERSION: u32 = 1;
const CHECKPOINT_MAGIC: &[u8; 8] = b"DVSCKPT\0";

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("line {line}: duplicate sample id `{id}`")]
    DuplicateId { line: usize, id: String },
    #[error("split ratios {0:?} must be non-negative and sum to 1")]
    BadRatios([f64; 3]),
    #[error("corpus has {0} samples; at least 3 are needed to split")]
    TooSmall(usize),
    #[error("checkpoint format version {found} is not supported (expected {expected})")]
    Version { found: u32, expected: u32 },
    #[error("checkpoint is truncated: {0}")]
    Truncated(String),
    #[error("checkpoint payload checksum does not match its header")]
    Checksum,
    #[error("{0}")]
    Format(String),
}

pub type Result<T> = std::result::Result<T, CorpusError>;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CorpusError + '_ {
    move |source| CorpusError::Io { path: path.to_path_buf(), source }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawSample {
    pub id: String,
    pub source: String,
    pub label: u8,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CorpusFormat {
    /// One JSON object per line with `func`, `target` and optional `id`.
    Jsonl,
}

pub fn load_corpus(path: &Path, format: CorpusFormat) -> Result<Vec<RawSample>> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    match format {
        CorpusFormat::Jsonl => parse_jsonl(&text),
    }
}

/// Parses JSONL records; blank lines are skipped and ids default to the
/// 1-based line number.
pub fn parse_jsonl(text: &str) -> Result<Vec<RawSample>> {
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let bad = |message: String| CorpusError::Malformed { line: line_no, message };
        let value: serde_json::Value = serde_json::from_str(line).map_err(|e| bad(e.to_string()))?;
        let obj = value.as_object().ok_or_else(|| bad("record is not a JSON object".into()))?;
        let source = match obj.get("func") {
            Some(serde_json::Value::String(s)) if !s.trim().is_empty() => s.clone(),
            Some(serde_json::Value::String(_)) => return Err(bad("`func` is empty".into())),
            Some(_) => return Err(bad("`func` is not a string".into())),
            None => return Err(bad("missing field `func`".into())),
        };
        let label = match obj.get("target").and_then(|t| t.as_u64()) {
            Some(l @ (0 | 1)) => l as u8,
            Some(l) => return Err(bad(format!("label {l} outside {{0, 1}}"))),
            None if obj.contains_key("target") => return Err(bad("`target` is not a non-negative integer".into())),
            None => return Err(bad("missing field `target`".into())),
        };
        let id = match obj.get("id") {
            None | Some(serde_json::Value::Null) => line_no.to_string(),
            Some(serde_json::Value::String(s)) => s.clone(),
            Some(serde_json::Value::Number(n)) => n.to_string(),
            Some(_) => return Err(bad("`id` must be a string or number".into())),
        };
        if !seen.insert(id.clone()) {
            return Err(CorpusError::DuplicateId { line: line_no, id });
        }
        out.push(RawSample { id, source, label });
    }
    Ok(out)
}

pub fn write_jsonl(path: &Path, samples: &[RawSample]) -> Result<()> {
    let mut text = String::new();
    for s in samples {
        let rec = serde_json::json!({ "id": s.id, "func": s.source, "target": s.label });
        text.push_str(&rec.to_string());
        text.push('\n');
    }
    write_atomic(path, text.as_bytes())
}

/// Disjoint id lists; serialised as the `.split.json` manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusSplit {
    pub seed: u64,
    pub ratios: [f64; 3],
    pub stratified: bool,
    pub train: Vec<String>,
    pub validation: Vec<String>,
    pub test: Vec<String>,
}

impl CorpusSplit {
    pub fn sizes(&self) -> [usize; 3] {
        [self.train.len(), self.validation.len(), self.test.len()]
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("split serialises");
        write_atomic(path, text.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        serde_json::from_str(&text).map_err(|e| CorpusError::Format(format!("{}: {e}", path.display())))
    }
}

/// Largest-remainder apportionment of `n` items by `ratios`.
pub fn split_sizes(n: usize, ratios: [f64; 3]) -> [usize; 3] {
    let exact = ratios.map(|r| r * n as f64);
    let mut sizes = exact.map(|x| x.floor() as usize);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| (exact[b] - exact[b].floor()).total_cmp(&(exact[a] - exact[a].floor())).then(a.cmp(&b)));
    let assigned: usize = sizes.iter().sum();
    for &i in order.iter().take(n.saturating_sub(assigned)) {
        sizes[i] += 1;
    }
    sizes
}

/// Seeded shuffle of the corpus into train/validation/test id lists.
///
/// With `stratify`, each label class is shuffled separately and the classes
/// are interleaved proportionally before cutting, so every part keeps the
/// corpus label mix while the part sizes stay exact.
pub fn split_corpus(samples: &[RawSample], ratios: [f64; 3], seed: u64, stratify: bool) -> Result<CorpusSplit> {
    if ratios.iter().any(|r| !r.is_finite() || *r < 0.0) || (ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(CorpusError::BadRatios(ratios));
    }
    if samples.len() < 3 {
        return Err(CorpusError::TooSmall(samples.len()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let order: Vec<String> = if stratify {
        let mut keyed: Vec<(f64, u8, String)> = Vec::with_capacity(samples.len());
        for label in [0u8, 1] {
            let mut ids: Vec<&String> = samples.iter().filter(|s| s.label == label).map(|s| &s.id).collect();
            ids.shuffle(&mut rng);
            let n = ids.len() as f64;
            keyed.extend(ids.into_iter().enumerate().map(|(j, id)| ((j as f64 + 0.5) / n, label, id.clone())));
        }
        keyed.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        keyed.into_iter().map(|(_, _, id)| id).collect()
    } else {
        let mut ids: Vec<String> = samples.iter().map(|s| s.id.clone()).collect();
        ids.shuffle(&mut rng);
        ids
    };
    let [a, b, _] = split_sizes(order.len(), ratios);
    Ok(CorpusSplit {
        seed,
        ratios,
        stratified: stratify,
        train: order[..a].to_vec(),
        validation: order[a..a + b].to_vec(),
        test: order[a + b..].to_vec(),
    })
}

/// Writes via a temporary sibling file and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = dir.join(format!(".{name}.tmp{}", std::process::id()));
    let write = || -> std::io::Result<()> {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    };
    write().map_err(|source| {
        let _ = fs::remove_file(&tmp);
        CorpusError::Io { path: path.to_path_buf(), source }
    })
}

/// A trained model with everything needed to resume or reproduce it.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub format_version: u32,
    pub config: TrainConfig,
    pub params: ModelParams,
    pub vocab: Option<Vocab>,
    pub metrics_history: Vec<EpochRecord>,
    /// Epoch whose parameters were kept, when a validation split existed.
    pub best_epoch: Option<usize>,
    pub optimizer: AdamState,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    rows: usize,
    cols: usize,
}

#[derive(Serialize, Deserialize)]
struct OptimizerHeader {
    step: u64,
    learning_rate: f64,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
}

#[derive(Serialize, Deserialize)]
struct CheckpointHeader {
    format_version: u32,
    payload_len: u64,
    payload_sha256: String,
    tensors: Vec<TensorEntry>,
    config: TrainConfig,
    vocab: Option<Vocab>,
    metrics_history: Vec<EpochRecord>,
    best_epoch: Option<usize>,
    optimizer: OptimizerHeader,
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

impl Checkpoint {
    /// File layout: 8-byte magic `DVSCKPT\0`, little-endian `u64` header
    /// length, JSON header, then the payload: every parameter tensor followed
    /// by the Adam first and second moments, as little-endian `f64`.
    pub fn to_bytes(&self) -> Vec<u8> {
        let named = self.params.named_tensors();
        let mut payload = Vec::new();
        let moments = self.optimizer.m.iter().chain(&self.optimizer.v);
        for m in named.iter().map(|(_, m)| *m).chain(moments) {
            for v in m.data() {
                payload.extend_from_slice(&v.to_le_bytes());
            }
        }
        let header = CheckpointHeader {
            format_version: self.format_version,
            payload_len: payload.len() as u64,
            payload_sha256: hex(&Sha256::digest(&payload)),
            tensors: named.iter().map(|(n, m)| TensorEntry { name: n.to_string(), rows: m.rows(), cols: m.cols() }).collect(),
            config: self.config.clone(),
            vocab: self.vocab.clone(),
            metrics_history: self.metrics_history.clone(),
            best_epoch: self.best_epoch,
            optimizer: OptimizerHeader {
                step: self.optimizer.step,
                learning_rate: self.optimizer.learning_rate,
                beta1: self.optimizer.beta1,
                beta2: self.optimizer.beta2,
                epsilon: self.optimizer.epsilon,
            },
        };
        let header = serde_json::to_vec(&header).expect("header serialises");
        let mut out = Vec::with_capacity(16 + header.len() + payload.len());
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        out.extend_from_slice(&payload);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 16 {
            return Err(CorpusError::Truncated("missing file header".into()));
        }
        if &bytes[..8] != CHECKPOINT_MAGIC {
            return Err(CorpusError::Format("not a checkpoint file (bad magic)".into()));
        }
        let header_len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let rest = &bytes[16..];
        if header_len > rest.len() {
            return Err(CorpusError::Truncated(format!("header needs {header_len} bytes, {} present", rest.len())));
        }
        let raw: serde_json::Value = serde_json::from_slice(&rest[..header_len])
            .map_err(|e| CorpusError::Format(format!("checkpoint header: {e}")))?;
        let found = raw.get("format_version").and_then(|v| v.as_u64()).unwrap_or(0) as u32;
        if found != CHECKPOINT_VERSION {
            return Err(CorpusError::Version { found, expected: CHECKPOINT_VERSION });
        }
        let header: CheckpointHeader =
            serde_json::from_value(raw).map_err(|e| CorpusError::Format(format!("checkpoint header: {e}")))?;
        let payload = &rest[header_len..];
        let want = header.payload_len as usize;
        if payload.len() < want {
            return Err(CorpusError::Truncated(format!("payload needs {want} bytes, {} present", payload.len())));
        }
        if payload.len() > want {
            return Err(CorpusError::Format("trailing bytes after payload".into()));
        }
        if hex(&Sha256::digest(payload)) != header.payload_sha256 {
            return Err(CorpusError::Checksum);
        }
        let total: usize = header.tensors.iter().map(|t| t.rows * t.cols).sum();
        if total * 3 * 8 != want {
            return Err(CorpusError::Format(format!("payload of {want} bytes does not hold the listed tensors")));
        }
        let mut values = payload.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")));
        let mut read = |t: &TensorEntry| -> Result<Matrix> {
            let data: Vec<f64> = values.by_ref().take(t.rows * t.cols).collect();
            Matrix::new(t.rows, t.cols, data).map_err(|e| CorpusError::Format(format!("tensor `{}`: {e}", t.name)))
        };
        let mut tensors = Vec::with_capacity(header.tensors.len());
        for t in &header.tensors {
            tensors.push((t.name.clone(), read(t)?));
        }
        let m = header.tensors.iter().map(&mut read).collect::<Result<Vec<_>>>()?;
        let v = header.tensors.iter().map(&mut read).collect::<Result<Vec<_>>>()?;
        let params = ModelParams::from_tensors(tensors).map_err(|e| CorpusError::Format(e.to_string()))?;
        params.check_shapes(&header.config).map_err(|e| CorpusError::Format(e.to_string()))?;
        let o = header.optimizer;
        Ok(Checkpoint {
            format_version: header.format_version,
            config: header.config,
            params,
            vocab: header.vocab,
            metrics_history: header.metrics_history,
            best_epoch: header.best_epoch,
            optimizer: AdamState {
                step: o.step,
                learning_rate: o.learning_rate,
                beta1: o.beta1,
                beta2: o.beta2,
                epsilon: o.epsilon,
                m,
                v,
            },
        })
    }
}

pub fn save_checkpoint(ck: &Checkpoint, path: &Path) -> Result<()> {
    write_atomic(path, &ck.to_bytes())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    Checkpoint::from_bytes(&bytes)
}
