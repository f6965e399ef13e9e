//! Per-sample preprocessing: tokens, graphs and token-level edge lists, with
//! an optional on-disk cache.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{ModelError, Result, TrainConfig};
use crate::corpus::{write_atomic, RawSample};
use crate::graphs::{self, apply_metapath, sequence_edges, GraphKind};
use crate::lexer;
use crate::numerics::Matrix;
use crate::pls::{EmbeddingFile, Vocab};

/// Bumped whenever preprocessing output changes for the same inputs.
const PIPELINE_VERSION: u32 = 1;

/// The parts of the configuration that affect preprocessing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PrepareOptions {
    pub l_max: usize,
    pub metapath: [bool; 3],
}

impl From<&TrainConfig> for PrepareOptions {
    fn from(c: &TrainConfig) -> Self {
        Self { l_max: c.l_max, metapath: [c.metapath_ast, c.metapath_cfg, c.metapath_dfg] }
    }
}

/// Tokens and token-level AST/CFG/DFG edges of one sample, cut to `l_max`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PreparedSample {
    pub id: String,
    pub label: u8,
    /// Kept tokens, `min(original_length, l_max)`.
    pub n: usize,
    pub original_length: usize,
    pub tokens: Vec<String>,
    pub edges: [Vec<(u32, u32)>; 3],
}

/// Graphs are built over the whole function; rows and columns of tokens past
/// `l_max` are then dropped.
pub fn prepare_sample(raw: &RawSample, opts: PrepareOptions) -> Result<PreparedSample> {
    let full = lexer::tokenize(&raw.source).map_err(|source| ModelError::Lex { id: raw.id.clone(), source })?;
    let kept = lexer::truncate(&full, opts.l_max);
    let graph_err = |source| ModelError::Graph { id: raw.id.clone(), source };
    let nodes = graphs::parse(&full).map_err(graph_err)?;
    let bundle = graphs::build_bundle(full, nodes).map_err(graph_err)?;
    let n = kept.len();
    let edges = [GraphKind::Ast, GraphKind::Cfg, GraphKind::Dfg].map(|k| {
        let g = bundle.graph(k);
        let flag = opts.metapath[k as usize];
        if flag {
            sequence_edges(&apply_metapath(g), n)
        } else {
            sequence_edges(g, n)
        }
    });
    Ok(PreparedSample {
        id: raw.id.clone(),
        label: raw.label,
        n,
        original_length: kept.original_length,
        tokens: kept.texts().into_iter().map(str::to_string).collect(),
        edges,
    })
}

/// Cache key: SHA-256 over the sample id, its source and the options.
pub fn pipeline_key(raw: &RawSample, opts: PrepareOptions) -> String {
    let mut h = Sha256::new();
    let config = serde_json::to_string(&(PIPELINE_VERSION, opts)).expect("options serialise");
    for part in [raw.id.as_bytes(), raw.source.as_bytes(), config.as_bytes()] {
        h.update((part.len() as u64).to_le_bytes());
        h.update(part);
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

fn cached(raw: &RawSample, opts: PrepareOptions, cache: Option<&Path>) -> Result<PreparedSample> {
    let Some(dir) = cache else { return prepare_sample(raw, opts) };
    let path = dir.join(format!("{}.json", pipeline_key(raw, opts)));
    if let Ok(bytes) = std::fs::read(&path) {
        if let Ok(p) = serde_json::from_slice::<PreparedSample>(&bytes) {
            if p.id == raw.id && p.label == raw.label {
                return Ok(p);
            }
        }
    }
    let p = prepare_sample(raw, opts)?;
    std::fs::create_dir_all(dir).map_err(|e| ModelError::Io(format!("{}: {e}", dir.display())))?;
    write_atomic(&path, &serde_json::to_vec(&p).expect("sample serialises")).map_err(|e| ModelError::Io(e.to_string()))?;
    Ok(p)
}

/// Prepares every sample, fanning out over `jobs` threads; output order
/// follows `raws`.
pub fn prepare_corpus(raws: &[RawSample], opts: PrepareOptions, cache: Option<&Path>, jobs: usize) -> Result<Vec<PreparedSample>> {
    let jobs = jobs.max(1).min(raws.len().max(1));
    if jobs == 1 {
        return raws.iter().map(|r| cached(r, opts, cache)).collect();
    }
    let chunk = raws.len().div_ceil(jobs);
    let parts: Vec<Result<Vec<PreparedSample>>> = std::thread::scope(|s| {
        let handles: Vec<_> = raws
            .chunks(chunk)
            .map(|c| s.spawn(move || c.iter().map(|r| cached(r, opts, cache)).collect::<Result<Vec<_>>>()))
            .collect();
        handles.into_iter().map(|h| h.join().expect("preprocessing thread panicked")).collect()
    });
    let mut out = Vec::with_capacity(raws.len());
    for p in parts {
        out.extend(p?);
    }
    Ok(out)
}

/// Token representation handed to the model.
#[derive(Debug, Clone, PartialEq)]
pub enum Embedding {
    /// Rows of the trainable table.
    Indices(Vec<usize>),
    /// Precomputed `n × d_emb` rows.
    Dense(Matrix),
}

/// Model-ready sample.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleInput {
    pub id: String,
    pub label: u8,
    pub n: usize,
    pub edges: [Vec<(u32, u32)>; 3],
    pub embedding: Embedding,
}

/// Attaches embeddings: vocabulary indices when `vocab` is given, otherwise
/// rows read from `file`.
pub fn build_inputs(
    prepared: &[PreparedSample],
    vocab: Option<&Vocab>,
    file: Option<&EmbeddingFile>,
    d_emb: usize,
) -> Result<Vec<SampleInput>> {
    prepared
        .iter()
        .map(|p| {
            let embedding = match (vocab, file) {
                (Some(v), _) => Embedding::Indices(p.tokens.iter().map(|t| v.lookup(t)).collect()),
                (None, Some(f)) => {
                    if f.width() != d_emb {
                        return Err(crate::pls::PlsError::WidthMismatch { expected: d_emb, found: f.width() }.into());
                    }
                    let m = f.read(&p.id)?;
                    if m.rows() < p.n {
                        return Err(crate::pls::PlsError::RowMismatch { id: p.id.clone(), rows: m.rows(), tokens: p.n }.into());
                    }
                    Embedding::Dense(m.top_rows(p.n))
                }
                (None, None) => return Err(ModelError::Config("no embedding provider".into())),
            };
            Ok(SampleInput { id: p.id.clone(), label: p.label, n: p.n, edges: p.edges.clone(), embedding })
        })
        .collect()
}
