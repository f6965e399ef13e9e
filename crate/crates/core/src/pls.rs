//! Token embedding matrices `P` for a function's token sequence.
//!
//! Two providers: a trainable lookup table over a vocabulary built from the
//! training split, and a container of precomputed per-sample matrices.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lexer::TokenStream;
use crate::numerics::Matrix;

/// Row of the shared unknown-token embedding.
pub const UNK: usize = 0;

const EMB_MAGIC: &[u8; 8] = b"DVSEMB01";
const EMB_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum PlsError {
    #[error("cannot build a vocabulary from an empty training set")]
    EmptyTrainingSet,
    #[error("sample `{0}` is not in the training split")]
    Leakage(String),
    #[error("no precomputed embedding for sample `{0}`")]
    MissingSample(String),
    #[error("embedding width {found} does not match the configured width {expected}")]
    WidthMismatch { expected: usize, found: usize },
    #[error("sample `{id}`: {rows} embedding rows for {tokens} tokens")]
    RowMismatch { id: String, rows: usize, tokens: usize },
    #[error("embedding file {path}: {message}")]
    Format { path: PathBuf, message: String },
    #[error("embedding file {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

/// Token text → row index; row 0 is reserved for unknown tokens.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl From<Vec<String>> for Vocab {
    fn from(tokens: Vec<String>) -> Self {
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i + 1)).collect();
        Self { tokens, index }
    }
}

impl From<Vocab> for Vec<String> {
    fn from(v: Vocab) -> Self {
        v.tokens
    }
}

impl Vocab {
    /// Table rows including the unknown row.
    pub fn rows(&self) -> usize {
        self.tokens.len() + 1
    }

    /// Known tokens, in index order.
    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn lookup(&self, text: &str) -> usize {
        self.index.get(text).copied().unwrap_or(UNK)
    }

    pub fn indices(&self, ts: &TokenStream) -> Vec<usize> {
        ts.tokens.iter().map(|t| self.lookup(&t.text)).collect()
    }
}

/// Tokens seen at least `min_count` times, ordered by frequency descending
/// then text ascending.
pub fn build_vocab<'a>(
    train: impl IntoIterator<Item = &'a TokenStream>,
    min_count: usize,
) -> Result<Vocab, PlsError> {
    build_vocab_from_texts(train.into_iter().map(|ts| ts.tokens.iter().map(|t| t.text.as_str())), min_count)
}

/// [`build_vocab`] over plain token texts.
pub fn build_vocab_from_texts<'a, S>(train: impl IntoIterator<Item = S>, min_count: usize) -> Result<Vocab, PlsError>
where
    S: IntoIterator<Item = &'a str>,
{
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    let mut any = false;
    for sample in train {
        any = true;
        for t in sample {
            *counts.entry(t).or_default() += 1;
        }
    }
    if !any {
        return Err(PlsError::EmptyTrainingSet);
    }
    let mut kept: Vec<(&str, usize)> = counts.into_iter().filter(|&(_, c)| c >= min_count.max(1)).collect();
    kept.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
    Ok(Vocab::from(kept.into_iter().map(|(t, _)| t.to_string()).collect::<Vec<_>>()))
}

/// Builds the vocabulary from `train_ids` only, refusing any id outside
/// `allowed` (the training split).
pub fn build_vocab_for_split(
    tokens: &BTreeMap<String, Vec<String>>,
    train_ids: &[String],
    allowed: &BTreeSet<String>,
    min_count: usize,
) -> Result<Vocab, PlsError> {
    let mut selected = Vec::with_capacity(train_ids.len());
    for id in train_ids {
        if !allowed.contains(id) {
            return Err(PlsError::Leakage(id.clone()));
        }
        selected.push(tokens.get(id).ok_or_else(|| PlsError::MissingSample(id.clone()))?);
    }
    build_vocab_from_texts(selected.into_iter().map(|t| t.iter().map(String::as_str)), min_count)
}

/// Padded `L × d` embedding with its token mask.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    pub values: Matrix,
    /// `true` for real tokens.
    pub pad_mask: Vec<bool>,
}

impl EmbeddingMatrix {
    pub fn len(&self) -> usize {
        self.values.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.values.rows() == 0
    }

    pub fn width(&self) -> usize {
        self.values.cols()
    }

    pub fn real_tokens(&self) -> usize {
        self.pad_mask.iter().filter(|&&m| m).count()
    }
}

/// First `l` rows of `table` selected by `indices`, zero-padded to `l`.
pub fn gather_rows(table: &Matrix, indices: &[usize], l: usize) -> Matrix {
    let d = table.cols();
    let mut out = Matrix::zeros(l, d);
    for (t, &i) in indices.iter().take(l).enumerate() {
        out.row_mut(t).copy_from_slice(table.row(i));
    }
    out
}

pub enum EmbeddingProvider {
    TrainableTable { vocab: Vocab, table: Matrix },
    PrecomputedFile(EmbeddingFile),
}

impl EmbeddingProvider {
    pub fn trainable(vocab: Vocab, table: Matrix) -> Result<Self, PlsError> {
        if table.rows() != vocab.rows() {
            return Err(PlsError::RowMismatch { id: "<table>".into(), rows: table.rows(), tokens: vocab.rows() });
        }
        Ok(Self::TrainableTable { vocab, table })
    }

    /// Opens a precomputed container whose width must equal `d`.
    pub fn precomputed(file: EmbeddingFile, d: usize) -> Result<Self, PlsError> {
        if file.width() != d {
            return Err(PlsError::WidthMismatch { expected: d, found: file.width() });
        }
        Ok(Self::PrecomputedFile(file))
    }

    pub fn width(&self) -> usize {
        match self {
            Self::TrainableTable { table, .. } => table.cols(),
            Self::PrecomputedFile(f) => f.width(),
        }
    }
}

/// Embeds `ts` (already truncated) into an `l × d` padded matrix.
///
/// Precomputed records must hold at least one row per kept token; extra rows
/// are ignored.
pub fn embed(ts: &TokenStream, id: &str, provider: &EmbeddingProvider, l: usize) -> Result<EmbeddingMatrix, PlsError> {
    let n = ts.len().min(l);
    let values = match provider {
        EmbeddingProvider::TrainableTable { vocab, table } => gather_rows(table, &vocab.indices(ts), l),
        EmbeddingProvider::PrecomputedFile(file) => {
            let m = file.read(id)?;
            if m.rows() < n {
                return Err(PlsError::RowMismatch { id: id.to_string(), rows: m.rows(), tokens: n });
            }
            let mut out = Matrix::zeros(l, m.cols());
            for t in 0..n {
                out.row_mut(t).copy_from_slice(m.row(t));
            }
            out
        }
    };
    let pad_mask = (0..l).map(|t| t < n).collect();
    Ok(EmbeddingMatrix { values, pad_mask })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct EmbIndex {
    format_version: u32,
    d: usize,
    records: Vec<EmbRecord>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct EmbRecord {
    id: String,
    rows: usize,
    /// Byte offset from the start of the data section.
    offset: u64,
}

/// Lazily read `.emb` container.
///
/// Layout: 8-byte magic `DVSEMB01`, little-endian `u64` index length, JSON
/// index `{format_version, d, records: [{id, rows, offset}]}`, then the
/// row-major little-endian `f64` blocks.
#[derive(Debug, Clone)]
pub struct EmbeddingFile {
    path: PathBuf,
    d: usize,
    data_start: u64,
    records: HashMap<String, (usize, u64)>,
}

impl EmbeddingFile {
    pub fn open(path: &Path) -> Result<Self, PlsError> {
        let io = |source| PlsError::Io { path: path.to_path_buf(), source };
        let fmt = |message: String| PlsError::Format { path: path.to_path_buf(), message };
        let mut f = BufReader::new(File::open(path).map_err(io)?);
        let mut magic = [0u8; 8];
        f.read_exact(&mut magic).map_err(io)?;
        if &magic != EMB_MAGIC {
            return Err(fmt("bad magic".into()));
        }
        let mut len = [0u8; 8];
        f.read_exact(&mut len).map_err(io)?;
        let len = u64::from_le_bytes(len);
        let file_len = std::fs::metadata(path).map_err(io)?.len();
        if len > file_len.saturating_sub(16) {
            return Err(fmt("index length exceeds file size".into()));
        }
        let mut header = vec![0u8; len as usize];
        f.read_exact(&mut header).map_err(io)?;
        let index: EmbIndex = serde_json::from_slice(&header).map_err(|e| fmt(format!("index: {e}")))?;
        if index.format_version != EMB_VERSION {
            return Err(fmt(format!("unsupported format version {}", index.format_version)));
        }
        let data_start = 16 + len;
        let mut records = HashMap::with_capacity(index.records.len());
        for r in index.records {
            let end = data_start + r.offset + (r.rows * index.d * 8) as u64;
            if end > file_len {
                return Err(fmt(format!("record `{}` extends past end of file", r.id)));
            }
            if records.insert(r.id.clone(), (r.rows, r.offset)).is_some() {
                return Err(fmt(format!("duplicate record `{}`", r.id)));
            }
        }
        Ok(Self { path: path.to_path_buf(), d: index.d, data_start, records })
    }

    pub fn width(&self) -> usize {
        self.d
    }

    pub fn contains(&self, id: &str) -> bool {
        self.records.contains_key(id)
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn read(&self, id: &str) -> Result<Matrix, PlsError> {
        let &(rows, offset) = self.records.get(id).ok_or_else(|| PlsError::MissingSample(id.to_string()))?;
        let io = |source| PlsError::Io { path: self.path.clone(), source };
        let mut f = File::open(&self.path).map_err(io)?;
        f.seek(SeekFrom::Start(self.data_start + offset)).map_err(io)?;
        let mut bytes = vec![0u8; rows * self.d * 8];
        f.read_exact(&mut bytes).map_err(io)?;
        let data = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk"))).collect();
        Matrix::new(rows, self.d, data)
            .map_err(|e| PlsError::Format { path: self.path.clone(), message: format!("record `{id}`: {e}") })
    }
}

/// Writes an `.emb` container; every matrix must have `d` columns.
pub fn write_embedding_file(path: &Path, d: usize, records: &[(String, Matrix)]) -> Result<(), PlsError> {
    let mut index = EmbIndex { format_version: EMB_VERSION, d, records: Vec::with_capacity(records.len()) };
    let mut offset = 0u64;
    for (id, m) in records {
        if m.cols() != d {
            return Err(PlsError::WidthMismatch { expected: d, found: m.cols() });
        }
        index.records.push(EmbRecord { id: id.clone(), rows: m.rows(), offset });
        offset += (m.len() * 8) as u64;
    }
    let header = serde_json::to_vec(&index).expect("index serialises");
    let io = |source| PlsError::Io { path: path.to_path_buf(), source };
    let mut w = BufWriter::new(File::create(path).map_err(io)?);
    w.write_all(EMB_MAGIC).map_err(io)?;
    w.write_all(&(header.len() as u64).to_le_bytes()).map_err(io)?;
    w.write_all(&header).map_err(io)?;
    for (_, m) in records {
        for v in m.data() {
            w.write_all(&v.to_le_bytes()).map_err(io)?;
        }
    }
    w.flush().map_err(io)
}
