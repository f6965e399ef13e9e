//! End-to-end runs: corpus → split → preprocessing → training or scoring.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Checkpoint, CorpusError, CorpusSplit, RawSample};
use crate::grsa::Representation;
use crate::lexer;
use crate::model::{
    self, ablate, build_inputs, prepare_corpus, EpochRecord, EvalReport, Metrics, ModelError, PrepareOptions,
    PreparedSample, SampleInput, TrainConfig,
};
use crate::pls::{build_vocab_for_split, EmbeddingFile, PlsError};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Pls(#[from] PlsError),
    #[error("split references unknown sample `{0}`")]
    UnknownId(String),
    #[error("{0}")]
    Usage(String),
}

pub type Result<T> = std::result::Result<T, PipelineError>;

/// Where per-sample embeddings come from.
#[derive(Clone, Copy)]
pub enum Embeddings<'a> {
    /// A table trained jointly, over a vocabulary of the training split.
    Trainable,
    Precomputed(&'a EmbeddingFile),
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Preprocessing cache directory; `None` disables caching.
    pub cache_dir: Option<PathBuf>,
    /// Worker threads for preprocessing and scoring.
    pub jobs: usize,
}

/// Prepared samples keyed by id.
pub fn prepare(raws: &[RawSample], config: &TrainConfig, opts: &RunOptions) -> Result<BTreeMap<String, PreparedSample>> {
    let prepared = prepare_corpus(raws, PrepareOptions::from(config), opts.cache_dir.as_deref(), opts.jobs)?;
    Ok(prepared.into_iter().map(|p| (p.id.clone(), p)).collect())
}

fn select(prepared: &BTreeMap<String, PreparedSample>, ids: &[String]) -> Result<Vec<PreparedSample>> {
    ids.iter().map(|id| prepared.get(id).cloned().ok_or_else(|| PipelineError::UnknownId(id.clone()))).collect()
}

/// Model inputs for `ids`, embedded the way `checkpoint` expects.
pub fn inputs_for(
    checkpoint: &Checkpoint,
    prepared: &BTreeMap<String, PreparedSample>,
    ids: &[String],
    file: Option<&EmbeddingFile>,
) -> Result<Vec<SampleInput>> {
    let chosen = select(prepared, ids)?;
    if checkpoint.vocab.is_none() && file.is_none() {
        return Err(PipelineError::Usage("this model was trained on precomputed embeddings; pass --embeddings".into()));
    }
    Ok(build_inputs(&chosen, checkpoint.vocab.as_ref(), file, checkpoint.config.d_emb)?)
}

/// Trains on `split.train`, selecting on `split.validation`.
///
/// The vocabulary of a trainable table is built from training samples only.
pub fn fit(
    raws: &[RawSample],
    split: &CorpusSplit,
    config: &TrainConfig,
    embeddings: Embeddings<'_>,
    opts: &RunOptions,
) -> Result<Checkpoint> {
    config.validate()?;
    let prepared = prepare(raws, config, opts)?;
    fit_prepared(&prepared, split, config, embeddings)
}

/// [`fit`] over samples already prepared with `config`'s options.
pub fn fit_prepared(
    prepared: &BTreeMap<String, PreparedSample>,
    split: &CorpusSplit,
    config: &TrainConfig,
    embeddings: Embeddings<'_>,
) -> Result<Checkpoint> {
    let train = select(prepared, &split.train)?;
    let validation = select(prepared, &split.validation)?;
    let (vocab, file) = match embeddings {
        Embeddings::Trainable => {
            let tokens: BTreeMap<String, Vec<String>> = train.iter().map(|p| (p.id.clone(), p.tokens.clone())).collect();
            let allowed: BTreeSet<String> = split.train.iter().cloned().collect();
            (Some(build_vocab_for_split(&tokens, &split.train, &allowed, config.vocab_min_count)?), None)
        }
        Embeddings::Precomputed(f) => (None, Some(f)),
    };
    let train_inputs = build_inputs(&train, vocab.as_ref(), file, config.d_emb)?;
    let val_inputs = build_inputs(&validation, vocab.as_ref(), file, config.d_emb)?;
    Ok(model::train(&train_inputs, &val_inputs, vocab, config)?)
}

/// Scores `ids` with a trained checkpoint.
pub fn evaluate_ids(
    checkpoint: &Checkpoint,
    prepared: &BTreeMap<String, PreparedSample>,
    ids: &[String],
    file: Option<&EmbeddingFile>,
    jobs: usize,
) -> Result<EvalReport> {
    let inputs = inputs_for(checkpoint, prepared, ids, file)?;
    Ok(model::evaluate(&checkpoint.params, &checkpoint.config, &inputs, jobs)?)
}

/// Vulnerability probability of one function.
pub fn predict_source(checkpoint: &Checkpoint, id: &str, source: &str, file: Option<&EmbeddingFile>) -> Result<f64> {
    let raw = RawSample { id: id.to_string(), source: source.to_string(), label: 0 };
    let prepared = prepare(std::slice::from_ref(&raw), &checkpoint.config, &RunOptions { cache_dir: None, jobs: 1 })?;
    let inputs = inputs_for(checkpoint, &prepared, &[raw.id], file)?;
    Ok(model::forward(&inputs[0], &checkpoint.params, &checkpoint.config)?.probability())
}

/// Per-epoch losses as CSV with an `epoch,train_loss,val_loss,val_accuracy`
/// header; missing validation values are empty fields.
pub fn loss_csv(history: &[EpochRecord]) -> String {
    let mut out = String::from("epoch,train_loss,val_loss,val_accuracy\n");
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for r in history {
        let _ = writeln!(out, "{},{},{},{}", r.epoch, r.train_loss, opt(r.val_loss), opt(r.val_accuracy));
    }
    out
}

/// One row of an ablation report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub model: String,
    pub final_train_loss: f64,
    pub metrics: Metrics,
}

/// The full model followed by one variant per disabled representation, each
/// trained from the same seed and scored on `eval_ids`.
pub fn ablation_suite(
    raws: &[RawSample],
    split: &CorpusSplit,
    eval_ids: &[String],
    config: &TrainConfig,
    embeddings: Embeddings<'_>,
    opts: &RunOptions,
) -> Result<Vec<AblationRow>> {
    config.validate()?;
    let prepared = prepare(raws, config, opts)?;
    let file = match embeddings {
        Embeddings::Precomputed(f) => Some(f),
        Embeddings::Trainable => None,
    };
    let mut variants = vec![("full model".to_string(), config.clone())];
    for r in [Representation::Ast, Representation::Cfg, Representation::Dfg, Representation::Pls] {
        variants.push((format!("w/o {r}"), ablate(config, r)?));
    }
    variants
        .into_iter()
        .map(|(name, cfg)| {
            let ck = fit_prepared(&prepared, split, &cfg, embeddings)?;
            let report = evaluate_ids(&ck, &prepared, eval_ids, file, opts.jobs)?;
            let final_train_loss = ck.metrics_history.last().map_or(f64::NAN, |r| r.train_loss);
            Ok(AblationRow { model: name, final_train_loss, metrics: report.metrics })
        })
        .collect()
}

/// Aligned text table of metrics rows.
pub fn metrics_table(rows: &[(String, Metrics)]) -> String {
    let width = rows.iter().map(|(n, _)| n.len()).max().unwrap_or(0).max("model".len());
    let mut out = format!(
        "{:<width$}  {:>8}  {:>9}  {:>8}  {:>8}  {:>5}  {:>5}  {:>5}  {:>5}\n",
        "model", "accuracy", "precision", "recall", "f1", "tp", "fp", "tn", "fn"
    );
    for (name, m) in rows {
        let flag = |v: f64, undefined: bool| if undefined { format!("{v:.4}*") } else { format!("{v:.4}") };
        let _ = writeln!(
            out,
            "{:<width$}  {:>8.4}  {:>9}  {:>8}  {:>8}  {:>5}  {:>5}  {:>5}  {:>5}",
            name,
            m.accuracy,
            flag(m.precision, m.precision_undefined),
            flag(m.recall, m.recall_undefined),
            flag(m.f1, m.f1_undefined),
            m.tp,
            m.fp,
            m.tn,
            m.fn_
        );
    }
    if rows.iter().any(|(_, m)| m.precision_undefined || m.recall_undefined || m.f1_undefined) {
        out.push_str("* undefined (zero denominator), reported as 0\n");
    }
    out
}

/// Tokens of `source` as the JSON array printed by `tokenize`.
pub fn tokens_json(source: &str) -> std::result::Result<String, lexer::LexError> {
    let ts = lexer::tokenize(source)?;
    Ok(serde_json::to_string(&ts.tokens).expect("tokens serialise"))
}
