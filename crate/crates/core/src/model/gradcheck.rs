//! Finite-difference checks of the full loss gradient on tiny random models.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{batch_loss, loss_and_grads, Embedding, ModelParams, Result, SampleInput, TrainConfig};
use crate::numerics;

/// Small widths that keep a full finite-difference sweep cheap.
pub fn tiny_config(l_max: usize) -> TrainConfig {
    TrainConfig {
        l_max,
        d_emb: 4,
        d_model: 4,
        d_fuse: 4,
        heads_pls: 2,
        heads_graph: 2,
        conv_kernels: 3,
        hidden: 5,
        learning_rate: 1e-2,
        batch_size: 2,
        ..TrainConfig::default()
    }
}

/// `n` tokens drawn from `vocab` table rows, each graph edge present with
/// probability 0.35.
pub fn random_sample<R: Rng + ?Sized>(n: usize, vocab: usize, label: u8, rng: &mut R) -> SampleInput {
    let mut edges: [Vec<(u32, u32)>; 3] = Default::default();
    for e in &mut edges {
        for a in 0..n {
            for b in 0..n {
                if a != b && rng.gen_bool(0.35) {
                    e.push((a as u32, b as u32));
                }
            }
        }
    }
    let idx = (0..n).map(|_| rng.gen_range(0..vocab)).collect();
    SampleInput { id: "s".into(), label, n, edges, embedding: Embedding::Indices(idx) }
}

/// Worst relative error between the analytic batch-loss gradient and central
/// differences, over every parameter.
pub fn max_relative_error(batch: &[&SampleInput], params: &ModelParams, config: &TrainConfig, epsilon: f64) -> Result<f64> {
    let (_, grads) = loss_and_grads(batch, params, config)?;
    let analytic: Vec<f64> = grads.named_tensors().iter().flat_map(|(_, m)| m.data().to_vec()).collect();
    let flat: Vec<f64> = params.named_tensors().iter().flat_map(|(_, m)| m.data().to_vec()).collect();
    let mut failure = None;
    let worst = numerics::grad_check(
        |x| {
            let mut q = params.clone();
            let mut off = 0;
            for m in q.tensors_mut() {
                let len = m.len();
                m.data_mut().copy_from_slice(&x[off..off + len]);
                off += len;
            }
            batch_loss(batch, &q, config).unwrap_or_else(|e| {
                failure.get_or_insert(e);
                f64::NAN
            })
        },
        &flat,
        &analytic,
        epsilon,
    );
    if let Some(e) = failure {
        return Err(e);
    }
    Ok(worst?)
}

/// One random instance: `L ≤ l_max` (at least the conv width), a 1–3 sample
/// batch with both labels possible, freshly initialised parameters.
pub fn random_instance(seed: u64, l_max: usize) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let min = tiny_config(0).conv_width;
    let l = rng.gen_range(min..=l_max.max(min));
    let config = TrainConfig { seed, ..tiny_config(l) };
    let vocab = rng.gen_range(2..=6);
    let params = ModelParams::init(&config, Some(vocab), &mut rng);
    let size = rng.gen_range(1..=3);
    let batch: Vec<SampleInput> =
        (0..size).map(|_| random_sample(rng.gen_range(1..=l), vocab, rng.gen_range(0..=1), &mut rng)).collect();
    let refs: Vec<&SampleInput> = batch.iter().collect();
    max_relative_error(&refs, &params, &config, 1e-5)
}
