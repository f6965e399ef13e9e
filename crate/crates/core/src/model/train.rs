use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{cross_entropy, forward, loss_and_grads, predict_label, Metrics, ModelError, ModelParams, Result, SampleInput, TrainConfig};
use crate::corpus::{Checkpoint, CHECKPOINT_VERSION};
use crate::numerics::{adam_step, AdamState, Matrix};
use crate::pls::Vocab;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    /// Mean per-sample loss over the epoch's batches.
    pub train_loss: f64,
    pub val_loss: Option<f64>,
    pub val_accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub id: String,
    pub label: u8,
    pub probability: f64,
    pub predicted: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub metrics: Metrics,
    pub loss: f64,
    pub predictions: Vec<Prediction>,
}

fn check_labels(samples: &[SampleInput]) -> Result<()> {
    match samples.iter().find(|s| s.label > 1) {
        Some(s) => Err(ModelError::BadLabel(s.label)),
        None => Ok(()),
    }
}

/// Mini-batch Adam over seeded shuffles of `train`.
///
/// When `validation` is non-empty the parameters (and optimiser state) of
/// the epoch with the best validation accuracy are kept, ties going to the
/// lower validation loss; otherwise the final parameters are kept.
pub fn train(train: &[SampleInput], validation: &[SampleInput], vocab: Option<Vocab>, config: &TrainConfig) -> Result<Checkpoint> {
    config.validate()?;
    if train.is_empty() {
        return Err(ModelError::Empty("training split"));
    }
    check_labels(train)?;
    check_labels(validation)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut params = ModelParams::init(config, vocab.as_ref().map(Vocab::rows), &mut rng);
    let shapes: Vec<(usize, usize)> = params.named_tensors().iter().map(|(_, m)| m.shape()).collect();
    let mut adam = AdamState::new(config.learning_rate, &shapes);
    let mut history = Vec::with_capacity(config.epochs);
    let mut best: Option<(f64, f64, usize, ModelParams, AdamState)> = None;
    let mut order: Vec<usize> = (0..train.len()).collect();

    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for (b, chunk) in order.chunks(config.batch_size).enumerate() {
            let batch: Vec<&SampleInput> = chunk.iter().map(|&i| &train[i]).collect();
            let (loss, grads) = loss_and_grads(&batch, &params, config)?;
            if !loss.is_finite() {
                let ids: Vec<&str> = batch.iter().map(|s| s.id.as_str()).collect();
                return Err(ModelError::NonFiniteLoss { epoch, batch: b, detail: format!("loss {loss} on samples {ids:?}") });
            }
            total += loss * batch.len() as f64;
            let grad_refs: Vec<&Matrix> = grads.named_tensors().into_iter().map(|(_, m)| m).collect();
            adam_step(&mut params.tensors_mut(), &grad_refs, &mut adam)?;
        }
        let train_loss = total / train.len() as f64;
        let (val_loss, val_accuracy) = if validation.is_empty() {
            (None, None)
        } else {
            let r = evaluate(&params, config, validation, 1)?;
            (Some(r.loss), Some(r.metrics.accuracy))
        };
        history.push(EpochRecord { epoch, train_loss, val_loss, val_accuracy });
        if let (Some(loss), Some(acc)) = (val_loss, val_accuracy) {
            let better = best.as_ref().is_none_or(|(ba, bl, ..)| acc > *ba || (acc == *ba && loss < *bl));
            if better {
                best = Some((acc, loss, epoch, params.clone(), adam.clone()));
            }
        }
    }

    let (params, optimizer, best_epoch) = match best {
        Some((_, _, e, p, a)) => (p, a, Some(e)),
        None => (params, adam, None),
    };
    Ok(Checkpoint {
        format_version: CHECKPOINT_VERSION,
        config: config.clone(),
        params,
        vocab,
        metrics_history: history,
        best_epoch,
        optimizer,
    })
}

fn probabilities(params: &ModelParams, config: &TrainConfig, samples: &[SampleInput]) -> Result<Vec<f64>> {
    samples.iter().map(|s| forward(s, params, config).map(|c| c.probability())).collect()
}

/// Forward-only scoring; `jobs > 1` splits the samples across threads and
/// merges results in input order.
pub fn evaluate(params: &ModelParams, config: &TrainConfig, samples: &[SampleInput], jobs: usize) -> Result<EvalReport> {
    if samples.is_empty() {
        return Err(ModelError::Empty("sample set"));
    }
    let jobs = jobs.clamp(1, samples.len());
    let probs = if jobs == 1 {
        probabilities(params, config, samples)?
    } else {
        let chunk = samples.len().div_ceil(jobs);
        let parts: Vec<Result<Vec<f64>>> = std::thread::scope(|s| {
            let handles: Vec<_> = samples.chunks(chunk).map(|c| s.spawn(move || probabilities(params, config, c))).collect();
            handles.into_iter().map(|h| h.join().expect("evaluation thread panicked")).collect()
        });
        let mut all = Vec::with_capacity(samples.len());
        for p in parts {
            all.extend(p?);
        }
        all
    };
    let labels: Vec<u8> = samples.iter().map(|s| s.label).collect();
    let predictions = samples
        .iter()
        .zip(&probs)
        .map(|(s, &p)| Prediction { id: s.id.clone(), label: s.label, probability: p, predicted: predict_label(p) })
        .collect();
    Ok(EvalReport { metrics: Metrics::from_predictions(&probs, &labels), loss: cross_entropy(&probs, &labels)?, predictions })
}
