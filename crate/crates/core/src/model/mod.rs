//! Convolution + feed-forward classifier over the fused encoding, its loss,
//! metrics, training loop and ablation switches.
//!
//! Forward pass: encode → conv (stride 1) over the `L_max`-row padded
//! encoding → global max-pool → `tanh` hidden layer → 2 logits → softmax.
//! `p` is the probability of the vulnerable class.

pub mod gradcheck;
mod prepare;
mod train;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graphs::GraphError;
use crate::grsa::{self, EncoderCache, EncoderInput, GrsaConfig, GrsaError, GrsaParams, Representation};
use crate::lexer::LexError;
use crate::numerics::{self, conv1d, matmul, Matrix, NumericsError};
use crate::pls::{gather_rows, PlsError};

pub use prepare::{
    build_inputs, pipeline_key, prepare_corpus, prepare_sample, Embedding, PrepareOptions, PreparedSample, SampleInput,
};
pub use train::{evaluate, train, EpochRecord, EvalReport, Prediction};

/// Probabilities are clamped to `[P_CLAMP, 1 - P_CLAMP]` inside the loss.
pub const P_CLAMP: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Grsa(#[from] GrsaError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Pls(#[from] PlsError),
    #[error("sample `{id}`: {source}")]
    Lex { id: String, source: LexError },
    #[error("sample `{id}`: {source}")]
    Graph { id: String, source: GraphError },
    #[error("{0} is empty")]
    Empty(&'static str),
    #[error("{what}: {left} vs {right}")]
    LengthMismatch { what: &'static str, left: usize, right: usize },
    #[error("label {0} outside {{0, 1}}")]
    BadLabel(u8),
    #[error("non-finite loss at epoch {epoch}, batch {batch}: {detail}")]
    NonFiniteLoss { epoch: usize, batch: usize, detail: String },
    #[error("cannot disable {0}: it is the last enabled representation")]
    LastRepresentation(Representation),
    #[error("checkpoint does not match configuration: {0}")]
    Mismatch(String),
    #[error("{0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, ModelError>;

/// Every hyperparameter of a run. Missing JSON fields take their defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub l_max: usize,
    pub use_ast: bool,
    pub use_cfg: bool,
    pub use_dfg: bool,
    pub use_pls: bool,
    pub d_emb: usize,
    pub d_model: usize,
    pub d_fuse: usize,
    pub heads_pls: usize,
    pub heads_graph: usize,
    pub conv_kernels: usize,
    pub conv_width: usize,
    pub hidden: usize,
    pub vocab_min_count: usize,
    pub metapath_ast: bool,
    pub metapath_cfg: bool,
    pub metapath_dfg: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-5,
            batch_size: 32,
            epochs: 10,
            seed: 0,
            l_max: 512,
            use_ast: true,
            use_cfg: true,
            use_dfg: true,
            use_pls: true,
            d_emb: 64,
            d_model: 64,
            d_fuse: 128,
            heads_pls: 4,
            heads_graph: 2,
            conv_kernels: 32,
            conv_width: 3,
            hidden: 64,
            vocab_min_count: 1,
            metapath_ast: true,
            metapath_cfg: true,
            metapath_dfg: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(ModelError::Config(m.to_string()));
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad("learning_rate must be a positive finite number");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if !Representation::ALL.iter().any(|&r| self.uses(r)) {
            return bad("at least one representation must be enabled");
        }
        if self.conv_width == 0 || self.conv_kernels == 0 || self.hidden == 0 {
            return bad("conv_width, conv_kernels and hidden must be at least 1");
        }
        if self.l_max < self.conv_width {
            return bad("l_max must be at least conv_width");
        }
        self.grsa().validate()?;
        Ok(())
    }

    pub fn grsa(&self) -> GrsaConfig {
        GrsaConfig {
            heads_pls: self.heads_pls,
            heads_graph: self.heads_graph,
            d_model: self.d_model,
            d_fuse: self.d_fuse,
            d_emb: self.d_emb,
            l: self.l_max,
        }
    }

    pub fn uses(&self, r: Representation) -> bool {
        match r {
            Representation::Ast => self.use_ast,
            Representation::Cfg => self.use_cfg,
            Representation::Dfg => self.use_dfg,
            Representation::Pls => self.use_pls,
        }
    }

    fn set_use(&mut self, r: Representation, on: bool) {
        match r {
            Representation::Ast => self.use_ast = on,
            Representation::Cfg => self.use_cfg = on,
            Representation::Dfg => self.use_dfg = on,
            Representation::Pls => self.use_pls = on,
        }
    }
}

/// Copy of `config` with representation `drop` disabled.
pub fn ablate(config: &TrainConfig, drop: Representation) -> Result<TrainConfig> {
    let mut out = config.clone();
    out.set_use(drop, false);
    if !Representation::ALL.iter().any(|&r| out.uses(r)) {
        return Err(ModelError::LastRepresentation(drop));
    }
    Ok(out)
}

/// All trainable tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub grsa: GrsaParams,
    /// `conv_kernels × conv_width·d_fuse`, one flattened kernel per row.
    pub conv_kernels: Matrix,
    pub conv_bias: Matrix,
    pub ff_hidden: Matrix,
    pub ff_hidden_bias: Matrix,
    pub ff_out: Matrix,
    pub ff_out_bias: Matrix,
    /// Token table for the trainable embedding provider; row 0 is UNK.
    pub embedding: Option<Matrix>,
}

pub(crate) const TENSOR_NAMES: [&str; 11] = [
    "grsa.w_in.ast",
    "grsa.w_in.cfg",
    "grsa.w_in.dfg",
    "grsa.w_in.pls",
    "grsa.w_out",
    "conv.kernels",
    "conv.bias",
    "ff.hidden",
    "ff.hidden_bias",
    "ff.out",
    "ff.out_bias",
];
pub(crate) const EMBEDDING_NAME: &str = "embedding";

impl ModelParams {
    /// Glorot weights and zero biases; `vocab_rows` adds an embedding table.
    pub fn init<R: Rng + ?Sized>(config: &TrainConfig, vocab_rows: Option<usize>, rng: &mut R) -> Self {
        let grsa = GrsaParams::init(&config.grsa(), rng);
        let fan = config.conv_width * config.d_fuse;
        let k = config.conv_kernels;
        let conv_kernels = Matrix::glorot(k, fan, fan, k, rng);
        let ff_hidden = Matrix::glorot(k, config.hidden, k, config.hidden, rng);
        let ff_out = Matrix::glorot(config.hidden, 2, config.hidden, 2, rng);
        let embedding = vocab_rows.map(|rows| Matrix::glorot(rows, config.d_emb, config.d_emb, config.d_emb, rng));
        Self {
            grsa,
            conv_kernels,
            conv_bias: Matrix::zeros(1, k),
            ff_hidden,
            ff_hidden_bias: Matrix::zeros(1, config.hidden),
            ff_out,
            ff_out_bias: Matrix::zeros(1, 2),
            embedding,
        }
    }

    pub fn zeros_like(&self) -> Self {
        let z = |m: &Matrix| Matrix::zeros(m.rows(), m.cols());
        Self {
            grsa: self.grsa.zeros_like(),
            conv_kernels: z(&self.conv_kernels),
            conv_bias: z(&self.conv_bias),
            ff_hidden: z(&self.ff_hidden),
            ff_hidden_bias: z(&self.ff_hidden_bias),
            ff_out: z(&self.ff_out),
            ff_out_bias: z(&self.ff_out_bias),
            embedding: self.embedding.as_ref().map(z),
        }
    }

    /// Tensors in canonical order, paired with their names.
    pub fn named_tensors(&self) -> Vec<(&'static str, &Matrix)> {
        let g = &self.grsa;
        let mut out: Vec<(&'static str, &Matrix)> = TENSOR_NAMES
            .iter()
            .copied()
            .zip([
                &g.w_in[0],
                &g.w_in[1],
                &g.w_in[2],
                &g.w_in[3],
                &g.w_out,
                &self.conv_kernels,
                &self.conv_bias,
                &self.ff_hidden,
                &self.ff_hidden_bias,
                &self.ff_out,
                &self.ff_out_bias,
            ])
            .collect();
        if let Some(e) = &self.embedding {
            out.push((EMBEDDING_NAME, e));
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Matrix> {
        let [a, b, c, d] = &mut self.grsa.w_in;
        let mut out = vec![
            a,
            b,
            c,
            d,
            &mut self.grsa.w_out,
            &mut self.conv_kernels,
            &mut self.conv_bias,
            &mut self.ff_hidden,
            &mut self.ff_hidden_bias,
            &mut self.ff_out,
            &mut self.ff_out_bias,
        ];
        if let Some(e) = &mut self.embedding {
            out.push(e);
        }
        out
    }

    /// Rebuilds parameters from canonical-order tensors.
    pub fn from_tensors(tensors: Vec<(String, Matrix)>) -> Result<Self> {
        let expected = TENSOR_NAMES.len();
        if tensors.len() != expected && tensors.len() != expected + 1 {
            return Err(ModelError::Mismatch(format!("{} tensors, expected {expected} or {}", tensors.len(), expected + 1)));
        }
        let mut it = tensors.into_iter();
        let mut take = |name: &str| -> Result<Matrix> {
            let (n, m) = it.next().expect("length checked");
            if n != name {
                return Err(ModelError::Mismatch(format!("tensor `{n}` where `{name}` was expected")));
            }
            Ok(m)
        };
        let w_in = [take(TENSOR_NAMES[0])?, take(TENSOR_NAMES[1])?, take(TENSOR_NAMES[2])?, take(TENSOR_NAMES[3])?];
        let params = Self {
            grsa: GrsaParams { w_in, w_out: take(TENSOR_NAMES[4])? },
            conv_kernels: take(TENSOR_NAMES[5])?,
            conv_bias: take(TENSOR_NAMES[6])?,
            ff_hidden: take(TENSOR_NAMES[7])?,
            ff_hidden_bias: take(TENSOR_NAMES[8])?,
            ff_out: take(TENSOR_NAMES[9])?,
            ff_out_bias: take(TENSOR_NAMES[10])?,
            embedding: None,
        };
        let embedding = it.next().map(|(n, m)| if n == EMBEDDING_NAME { Ok(m) } else { Err(n) });
        let embedding = match embedding {
            None => None,
            Some(Ok(m)) => Some(m),
            Some(Err(n)) => return Err(ModelError::Mismatch(format!("unexpected tensor `{n}`"))),
        };
        Ok(Self { embedding, ..params })
    }

    /// Checks every tensor shape against `config`.
    pub fn check_shapes(&self, config: &TrainConfig) -> Result<()> {
        let g = config.grsa();
        let fan = config.conv_width * config.d_fuse;
        let (k, h) = (config.conv_kernels, config.hidden);
        let mut expect = vec![
            (g.l, g.d_model),
            (g.l, g.d_model),
            (g.l, g.d_model),
            (g.d_emb, g.d_model),
            (4 * g.d_model, g.d_fuse),
            (k, fan),
            (1, k),
            (k, h),
            (1, h),
            (h, 2),
            (1, 2),
        ];
        if let Some(e) = &self.embedding {
            expect.push((e.rows(), config.d_emb));
        }
        for ((name, m), shape) in self.named_tensors().into_iter().zip(expect) {
            if m.shape() != shape {
                return Err(ModelError::Mismatch(format!("tensor `{name}` has shape {:?}, expected {shape:?}", m.shape())));
            }
        }
        Ok(())
    }

    pub fn parameter_count(&self) -> usize {
        self.named_tensors().iter().map(|(_, m)| m.len()).sum()
    }
}

/// Intermediate values of one forward pass, kept for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    p_rows: Matrix,
    encoder: EncoderCache,
    /// Fused encoding zero-padded to the rows the computed windows touch.
    fused: Matrix,
    /// Per kernel: winning window, or `None` for an all-padding window.
    argmax: Vec<Option<usize>>,
    pooled: Vec<f64>,
    hidden: Vec<f64>,
    pub logits: [f64; 2],
    pub probs: [f64; 2],
}

impl ForwardCache {
    /// Probability of the vulnerable class.
    pub fn probability(&self) -> f64 {
        self.probs[1]
    }
}

fn disabled_edges() -> &'static [(u32, u32)] {
    &[]
}

/// Embedding rows of the real tokens; zero when PLS is disabled.
fn embedding_rows(input: &SampleInput, params: &ModelParams, config: &TrainConfig) -> Result<Matrix> {
    if !config.use_pls {
        return Ok(Matrix::zeros(input.n, config.d_emb));
    }
    match &input.embedding {
        Embedding::Indices(idx) => {
            let table = params
                .embedding
                .as_ref()
                .ok_or_else(|| ModelError::Mismatch("token indices given but the model has no embedding table".into()))?;
            if let Some(&bad) = idx.iter().find(|&&i| i >= table.rows()) {
                return Err(ModelError::Mismatch(format!("token index {bad} outside the {}-row table", table.rows())));
            }
            Ok(gather_rows(table, idx, input.n))
        }
        Embedding::Dense(m) => {
            if m.shape() != (input.n, config.d_emb) {
                return Err(ModelError::Mismatch(format!("embedding rows {:?}, expected {:?}", m.shape(), (input.n, config.d_emb))));
            }
            Ok(m.clone())
        }
    }
}

fn encoder_input<'a>(input: &'a SampleInput, p_rows: &'a Matrix, config: &TrainConfig) -> EncoderInput<'a> {
    let edges = |r: Representation| if config.uses(r) { &input.edges[r.index()][..] } else { disabled_edges() };
    EncoderInput {
        n: input.n,
        edges: [edges(Representation::Ast), edges(Representation::Cfg), edges(Representation::Dfg)],
        p: p_rows,
    }
}

/// Vulnerability probability and the cached intermediates.
pub fn forward(input: &SampleInput, params: &ModelParams, config: &TrainConfig) -> Result<ForwardCache> {
    if input.n > config.l_max {
        return Err(ModelError::LengthMismatch { what: "sample tokens vs l_max", left: input.n, right: config.l_max });
    }
    let p_rows = embedding_rows(input, params, config)?;
    let (fused, encoder) = grsa::encode_forward(encoder_input(input, &p_rows, config), &params.grsa, &config.grsa())?;

    let w = config.conv_width;
    if w == 0 || config.l_max < w {
        return Err(ModelError::Config("l_max must be at least conv_width".into()));
    }
    let total_windows = config.l_max - w + 1;
    let rows = config.l_max.min(input.n + w - 1);
    let fused = fused.with_rows(rows);
    let windows = if rows >= w { rows - w + 1 } else { 0 };
    let conv = if windows > 0 { Some(conv1d(&fused, &params.conv_kernels, w, 1)?) } else { None };
    let k = config.conv_kernels;
    let mut argmax = vec![None; k];
    let mut pooled = vec![0.0; k];
    for c in 0..k {
        let bias = params.conv_bias.get(0, c);
        let mut best: Option<(Option<usize>, f64)> = None;
        if let Some(conv) = &conv {
            for t in 0..windows {
                let v = conv.get(t, c) + bias;
                if best.is_none_or(|(_, b)| v > b) {
                    best = Some((Some(t), v));
                }
            }
        }
        if total_windows > windows {
            let v = 0.0 + bias;
            if best.is_none_or(|(_, b)| v > b) {
                best = Some((None, v));
            }
        }
        let (t, v) = best.expect("at least one window");
        argmax[c] = t;
        pooled[c] = v;
    }

    let pooled_m = Matrix::new(1, k, pooled.clone())?;
    let mut pre = matmul(&pooled_m, &params.ff_hidden)?;
    pre.add_assign(&params.ff_hidden_bias)?;
    let hidden: Vec<f64> = pre.data().iter().map(|v| v.tanh()).collect();
    let hidden_m = Matrix::new(1, hidden.len(), hidden.clone())?;
    let mut z = matmul(&hidden_m, &params.ff_out)?;
    z.add_assign(&params.ff_out_bias)?;
    let logits = [z.get(0, 0), z.get(0, 1)];
    let mut probs = logits;
    numerics::softmax_in_place(&mut probs);
    Ok(ForwardCache { p_rows, encoder, fused, argmax, pooled, hidden, logits, probs })
}

/// Backpropagates `∂loss/∂logits` and accumulates into `grads`.
pub fn backward(
    input: &SampleInput,
    params: &ModelParams,
    config: &TrainConfig,
    cache: &ForwardCache,
    d_logits: [f64; 2],
    grads: &mut ModelParams,
) -> Result<()> {
    let h = cache.hidden.len();
    let k = cache.pooled.len();
    for j in 0..h {
        for o in 0..2 {
            let g = grads.ff_out.get(j, o) + cache.hidden[j] * d_logits[o];
            grads.ff_out.set(j, o, g);
        }
    }
    for (o, &dz) in d_logits.iter().enumerate() {
        grads.ff_out_bias.set(0, o, grads.ff_out_bias.get(0, o) + dz);
    }
    let d_pre: Vec<f64> = (0..h)
        .map(|j| {
            let du = params.ff_out.get(j, 0) * d_logits[0] + params.ff_out.get(j, 1) * d_logits[1];
            du * (1.0 - cache.hidden[j] * cache.hidden[j])
        })
        .collect();
    let mut d_pooled = vec![0.0; k];
    for c in 0..k {
        for j in 0..h {
            grads.ff_hidden.set(c, j, grads.ff_hidden.get(c, j) + cache.pooled[c] * d_pre[j]);
            d_pooled[c] += params.ff_hidden.get(c, j) * d_pre[j];
        }
    }
    for (j, &d) in d_pre.iter().enumerate() {
        grads.ff_hidden_bias.set(0, j, grads.ff_hidden_bias.get(0, j) + d);
    }

    let w = config.conv_width;
    let d = cache.fused.cols();
    let mut d_fused = Matrix::zeros(cache.fused.rows(), d);
    for c in 0..k {
        let g = d_pooled[c];
        grads.conv_bias.set(0, c, grads.conv_bias.get(0, c) + g);
        let Some(t) = cache.argmax[c] else { continue };
        let window = &cache.fused.data()[t * d..(t + w) * d];
        let kernel = params.conv_kernels.row(c);
        for (gk, &x) in grads.conv_kernels.row_mut(c).iter_mut().zip(window) {
            *gk += g * x;
        }
        for (dx, &kv) in d_fused.data_mut()[t * d..(t + w) * d].iter_mut().zip(kernel) {
            *dx += g * kv;
        }
    }
    let d_fused = d_fused.top_rows(input.n);
    let enc = encoder_input(input, &cache.p_rows, config);
    let d_p = grsa::encode_backward(enc, &params.grsa, &config.grsa(), &cache.encoder, &d_fused, &mut grads.grsa)?;
    if config.use_pls {
        if let (Embedding::Indices(idx), Some(table)) = (&input.embedding, grads.embedding.as_mut()) {
            for (t, &i) in idx.iter().take(input.n).enumerate() {
                for (o, &v) in table.row_mut(i).iter_mut().zip(d_p.row(t)) {
                    *o += v;
                }
            }
        }
    }
    Ok(())
}

/// Per-sample loss `-[y ln p + (1-y) ln(1-p)]` with `p` clamped.
pub fn sample_loss(p: f64, y: u8) -> f64 {
    let pc = p.clamp(P_CLAMP, 1.0 - P_CLAMP);
    if y == 1 {
        -pc.ln()
    } else {
        -(1.0 - pc).ln()
    }
}

/// `∂ sample_loss / ∂p`; zero where the clamp is active.
pub fn sample_loss_grad(p: f64, y: u8) -> f64 {
    if !(P_CLAMP..=1.0 - P_CLAMP).contains(&p) {
        return 0.0;
    }
    if y == 1 {
        -1.0 / p
    } else {
        1.0 / (1.0 - p)
    }
}

/// Mean binary cross-entropy.
pub fn cross_entropy(p: &[f64], y: &[u8]) -> Result<f64> {
    if p.len() != y.len() {
        return Err(ModelError::LengthMismatch { what: "probabilities vs labels", left: p.len(), right: y.len() });
    }
    if p.is_empty() {
        return Err(ModelError::Empty("probability list"));
    }
    if let Some(&bad) = y.iter().find(|&&l| l > 1) {
        return Err(ModelError::BadLabel(bad));
    }
    Ok(p.iter().zip(y).map(|(&pi, &yi)| sample_loss(pi, yi)).sum::<f64>() / p.len() as f64)
}

/// `∂ cross_entropy / ∂p_i`.
pub fn cross_entropy_grad(p: &[f64], y: &[u8]) -> Result<Vec<f64>> {
    if p.len() != y.len() {
        return Err(ModelError::LengthMismatch { what: "probabilities vs labels", left: p.len(), right: y.len() });
    }
    let n = p.len() as f64;
    Ok(p.iter().zip(y).map(|(&pi, &yi)| sample_loss_grad(pi, yi) / n).collect())
}

/// Logit gradient of `scale · sample_loss` through the two-way softmax.
fn logit_grad(cache: &ForwardCache, y: u8, scale: f64) -> [f64; 2] {
    let [s0, s1] = cache.probs;
    let dp = sample_loss_grad(s1, y) * scale;
    let d1 = dp * s1 * s0;
    [-d1, d1]
}

/// Mean loss over `batch` and its gradient with respect to every parameter.
pub fn loss_and_grads(batch: &[&SampleInput], params: &ModelParams, config: &TrainConfig) -> Result<(f64, ModelParams)> {
    if batch.is_empty() {
        return Err(ModelError::Empty("batch"));
    }
    let scale = 1.0 / batch.len() as f64;
    let mut grads = params.zeros_like();
    let mut loss = 0.0;
    for s in batch {
        let cache = forward(s, params, config)?;
        loss += sample_loss(cache.probability(), s.label);
        backward(s, params, config, &cache, logit_grad(&cache, s.label, scale), &mut grads)?;
    }
    Ok((loss * scale, grads))
}

/// Mean loss only.
pub fn batch_loss(batch: &[&SampleInput], params: &ModelParams, config: &TrainConfig) -> Result<f64> {
    let mut p = Vec::with_capacity(batch.len());
    let mut y = Vec::with_capacity(batch.len());
    for s in batch {
        p.push(forward(s, params, config)?.probability());
        y.push(s.label);
    }
    cross_entropy(&p, &y)
}

/// Binary confusion counts and the derived scores at threshold 0.5.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Set when the score's denominator is zero and the score is reported as 0.
    pub precision_undefined: bool,
    pub recall_undefined: bool,
    pub f1_undefined: bool,
}

impl Metrics {
    pub fn from_counts(tp: u64, fp: u64, tn: u64, fn_: u64) -> Self {
        let total = tp + fp + tn + fn_;
        let ratio = |num: u64, den: u64| if den == 0 { (0.0, true) } else { (num as f64 / den as f64, false) };
        let (accuracy, _) = ratio(tp + tn, total);
        let (precision, precision_undefined) = ratio(tp, tp + fp);
        let (recall, recall_undefined) = ratio(tp, tp + fn_);
        let (f1, f1_undefined) = if precision + recall == 0.0 {
            (0.0, true)
        } else {
            (2.0 * precision * recall / (precision + recall), false)
        };
        Self { tp, fp, tn, fn_, accuracy, precision, recall, f1, precision_undefined, recall_undefined, f1_undefined }
    }

    /// Counts predictions `[p ≥ 0.5]` against labels.
    pub fn from_predictions(probabilities: &[f64], labels: &[u8]) -> Self {
        let (mut tp, mut fp, mut tn, mut fn_) = (0, 0, 0, 0);
        for (&p, &y) in probabilities.iter().zip(labels) {
            match (predict_label(p), y) {
                (1, 1) => tp += 1,
                (1, _) => fp += 1,
                (_, 1) => fn_ += 1,
                _ => tn += 1,
            }
        }
        Self::from_counts(tp, fp, tn, fn_)
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }
}

pub fn predict_label(p: f64) -> u8 {
    u8::from(p >= 0.5)
}
