//! Per-representation multi-head self-attention and fusion.
//!
//! Each of AST, CFG, DFG and the token embedding is projected to `d_model`,
//! attends to itself with `Q = K = V`, and the four results are concatenated
//! and mapped to `d_fuse` by one linear layer.
//!
//! [`grsa_encode`] works on padded `L`-row inputs with a token mask. Training
//! uses [`encode_forward`]/[`encode_backward`], which operate on the `n` real
//! rows only and produce bitwise-identical results.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numerics::{self, matmul, matmul_at, matmul_bt, softmax_in_place, Matrix, NumericsError};
use crate::pls::EmbeddingMatrix;

#[derive(Debug, Error, PartialEq)]
pub enum GrsaError {
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error("key width must be at least 1")]
    ZeroKeyWidth,
    #[error("mask length {mask} does not match {rows} rows")]
    MaskLength { mask: usize, rows: usize },
    #[error("width {width} is not divisible by {heads} heads")]
    IndivisibleWidth { width: usize, heads: usize },
    #[error("representation {0} has inconsistent sequence length")]
    InconsistentLength(Representation),
    #[error("invalid encoder configuration: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, GrsaError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Representation {
    #[serde(rename = "AST")]
    Ast,
    #[serde(rename = "CFG")]
    Cfg,
    #[serde(rename = "DFG")]
    Dfg,
    #[serde(rename = "PLS")]
    Pls,
}

impl Representation {
    pub const ALL: [Representation; 4] = [Self::Ast, Self::Cfg, Self::Dfg, Self::Pls];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn is_graph(self) -> bool {
        self != Self::Pls
    }
}

impl std::fmt::Display for Representation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Ast => "AST",
            Self::Cfg => "CFG",
            Self::Dfg => "DFG",
            Self::Pls => "PLS",
        })
    }
}

impl std::str::FromStr for Representation {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.to_ascii_uppercase().as_str() {
            "AST" => Ok(Self::Ast),
            "CFG" => Ok(Self::Cfg),
            "DFG" => Ok(Self::Dfg),
            "PLS" => Ok(Self::Pls),
            _ => Err(format!("unknown representation `{s}` (expected AST, CFG, DFG or PLS)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GrsaConfig {
    pub heads_pls: usize,
    pub heads_graph: usize,
    pub d_model: usize,
    pub d_fuse: usize,
    /// Token embedding width.
    pub d_emb: usize,
    /// Padded sequence length.
    pub l: usize,
}

impl Default for GrsaConfig {
    fn default() -> Self {
        Self { heads_pls: 4, heads_graph: 2, d_model: 64, d_fuse: 128, d_emb: 64, l: 512 }
    }
}

impl GrsaConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(GrsaError::Config(m));
        if self.heads_pls == 0 || self.heads_graph == 0 {
            return bad("head counts must be at least 1".into());
        }
        if self.d_model == 0 || self.d_fuse == 0 || self.d_emb == 0 || self.l == 0 {
            return bad("widths and sequence length must be at least 1".into());
        }
        for heads in [self.heads_pls, self.heads_graph] {
            if !self.d_model.is_multiple_of(heads) {
                return Err(GrsaError::IndivisibleWidth { width: self.d_model, heads });
            }
        }
        Ok(())
    }

    pub fn heads(&self, r: Representation) -> usize {
        if r.is_graph() {
            self.heads_graph
        } else {
            self.heads_pls
        }
    }

    pub fn input_width(&self, r: Representation) -> usize {
        if r.is_graph() {
            self.l
        } else {
            self.d_emb
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GrsaParams {
    /// Input projections indexed by [`Representation::index`].
    pub w_in: [Matrix; 4],
    /// `4·d_model × d_fuse`, no bias.
    pub w_out: Matrix,
}

impl GrsaParams {
    pub fn init<R: Rng + ?Sized>(config: &GrsaConfig, rng: &mut R) -> Self {
        let w_in = Representation::ALL.map(|r| {
            let w = config.input_width(r);
            Matrix::glorot(w, config.d_model, w, config.d_model, rng)
        });
        let w_out = Matrix::glorot(4 * config.d_model, config.d_fuse, 4 * config.d_model, config.d_fuse, rng);
        Self { w_in, w_out }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            w_in: self.w_in.each_ref().map(|m| Matrix::zeros(m.rows(), m.cols())),
            w_out: Matrix::zeros(self.w_out.rows(), self.w_out.cols()),
        }
    }
}

/// Attention output and its weight matrix (zero for masked entries).
fn attention(q: &Matrix, k: &Matrix, v: &Matrix, mask: &[bool]) -> Result<(Matrix, Matrix)> {
    let (l, dk) = q.shape();
    if dk == 0 {
        return Err(GrsaError::ZeroKeyWidth);
    }
    if k.shape() != q.shape() {
        return Err(NumericsError::ShapeMismatch { op: "attention keys", left: q.shape(), right: k.shape() }.into());
    }
    if v.rows() != l {
        return Err(NumericsError::ShapeMismatch { op: "attention values", left: q.shape(), right: v.shape() }.into());
    }
    if mask.len() != l {
        return Err(GrsaError::MaskLength { mask: mask.len(), rows: l });
    }
    let scale = (dk as f64).sqrt();
    let mut weights = Matrix::zeros(l, l);
    let mut row = vec![0.0; l];
    for i in 0..l {
        if !mask[i] {
            continue;
        }
        for j in 0..l {
            row[j] = if mask[j] { numerics::dot(q.row(i), k.row(j)) / scale } else { f64::NEG_INFINITY };
        }
        softmax_in_place(&mut row);
        weights.row_mut(i).copy_from_slice(&row);
    }
    let out = matmul(&weights, v)?;
    Ok((out, weights))
}

/// `softmax(Q Kᵀ / √d_k) V` with masked keys excluded and masked query rows
/// zeroed.
pub fn scaled_dot_attention(q: &Matrix, k: &Matrix, v: &Matrix, mask: &[bool]) -> Result<Matrix> {
    attention(q, k, v, mask).map(|(out, _)| out)
}

/// [`scaled_dot_attention`] together with its `L × L` weight matrix; masked
/// rows and columns of the weights are zero.
pub fn scaled_dot_attention_weights(q: &Matrix, k: &Matrix, v: &Matrix, mask: &[bool]) -> Result<(Matrix, Matrix)> {
    attention(q, k, v, mask)
}

fn split_attend(z: &Matrix, heads: usize, mask: &[bool]) -> Result<(Matrix, Vec<Matrix>)> {
    let d = z.cols();
    if heads == 0 || !d.is_multiple_of(heads) {
        return Err(GrsaError::IndivisibleWidth { width: d, heads });
    }
    let dk = d / heads;
    let mut out = Matrix::zeros(z.rows(), d);
    let mut weights = Vec::with_capacity(heads);
    for h in 0..heads {
        let zi = z.column_block(h * dk, dk);
        let (hi, a) = attention(&zi, &zi, &zi, mask)?;
        out.set_column_block(h * dk, &hi);
        weights.push(a);
    }
    Ok((out, weights))
}

/// Projects `x` by `w_in`, splits the columns into `heads` blocks, lets each
/// block attend to itself and concatenates the head outputs.
pub fn self_attend(x: &Matrix, heads: usize, w_in: &Matrix, mask: &[bool]) -> Result<Matrix> {
    let z = matmul(x, w_in)?;
    split_attend(&z, heads, mask).map(|(out, _)| out)
}

/// Encodes padded inputs: three `L × L` token-level graph matrices and the
/// `L × d_emb` embedding. Padded rows and columns are ignored.
pub fn grsa_encode(graphs: [&Matrix; 3], p: &EmbeddingMatrix, params: &GrsaParams, config: &GrsaConfig) -> Result<Matrix> {
    config.validate()?;
    let l = config.l;
    let mask = &p.pad_mask;
    if p.len() != l || mask.len() != l {
        return Err(GrsaError::InconsistentLength(Representation::Pls));
    }
    let mut outputs = Vec::with_capacity(4);
    for r in Representation::ALL {
        let mut x = if r.is_graph() { graphs[r.index()].clone() } else { p.values.clone() };
        if x.rows() != l || (r.is_graph() && x.cols() != l) {
            return Err(GrsaError::InconsistentLength(r));
        }
        for i in 0..l {
            for j in 0..x.cols() {
                if !mask[i] || (r.is_graph() && !mask[j]) {
                    x.set(i, j, 0.0);
                }
            }
        }
        outputs.push(self_attend(&x, config.heads(r), &params.w_in[r.index()], mask)?);
    }
    let refs: Vec<&Matrix> = outputs.iter().collect();
    Ok(matmul(&Matrix::hcat(&refs)?, &params.w_out)?)
}

/// Unpadded encoder input: `n` real tokens, token-level edge lists (sorted,
/// endpoints `< n`) and the `n × d_emb` embedding rows.
#[derive(Debug, Clone, Copy)]
pub struct EncoderInput<'a> {
    pub n: usize,
    pub edges: [&'a [(u32, u32)]; 3],
    pub p: &'a Matrix,
}

#[derive(Debug, Clone)]
pub struct EncoderCache {
    z: Vec<Matrix>,
    weights: Vec<Vec<Matrix>>,
    concat: Matrix,
}

/// `Σ_b W[b]` over the edges `(a, b)` of each row `a`: the sparse form of
/// `S · W` that sums in the same order as the dense product.
fn sparse_project(n: usize, edges: &[(u32, u32)], w: &Matrix) -> Matrix {
    let d = w.cols();
    let mut z = Matrix::zeros(n, d);
    for &(a, b) in edges {
        let src = w.row(b as usize);
        for (o, &v) in z.row_mut(a as usize).iter_mut().zip(src) {
            *o += v;
        }
    }
    z
}

/// Fused `n × d_fuse` encoding of the real rows.
pub fn encode_forward(input: EncoderInput<'_>, params: &GrsaParams, config: &GrsaConfig) -> Result<(Matrix, EncoderCache)> {
    let n = input.n;
    if input.p.rows() != n || input.p.cols() != config.d_emb {
        return Err(GrsaError::InconsistentLength(Representation::Pls));
    }
    let mask = vec![true; n];
    let mut z = Vec::with_capacity(4);
    let mut weights = Vec::with_capacity(4);
    let mut outputs = Vec::with_capacity(4);
    for r in Representation::ALL {
        let zr = if r.is_graph() {
            let edges = input.edges[r.index()];
            if edges.iter().any(|&(a, b)| a as usize >= n || b as usize >= n) {
                return Err(GrsaError::InconsistentLength(r));
            }
            sparse_project(n, edges, &params.w_in[r.index()])
        } else {
            matmul(input.p, &params.w_in[r.index()])?
        };
        let (h, a) = split_attend(&zr, config.heads(r), &mask)?;
        z.push(zr);
        weights.push(a);
        outputs.push(h);
    }
    let refs: Vec<&Matrix> = outputs.iter().collect();
    let concat = Matrix::hcat(&refs)?;
    let fused = matmul(&concat, &params.w_out)?;
    Ok((fused, EncoderCache { z, weights, concat }))
}

/// Gradient of one attention head with `Q = K = V = z`.
fn attention_backward(z: &Matrix, a: &Matrix, d_out: &Matrix) -> Result<Matrix> {
    let scale = (z.cols() as f64).sqrt();
    let da = matmul_bt(d_out, z)?;
    let mut dz = matmul_at(a, d_out)?;
    let n = a.rows();
    let mut ds = Matrix::zeros(n, n);
    for i in 0..n {
        let (ar, dar) = (a.row(i), da.row(i));
        let inner = numerics::dot(ar, dar);
        for j in 0..n {
            ds.set(i, j, ar[j] * (dar[j] - inner) / scale);
        }
    }
    dz.add_assign(&matmul(&ds, z)?)?;
    dz.add_assign(&matmul_at(&ds, z)?)?;
    Ok(dz)
}

/// Accumulates parameter gradients into `grads` and returns `∂/∂P`.
pub fn encode_backward(
    input: EncoderInput<'_>,
    params: &GrsaParams,
    config: &GrsaConfig,
    cache: &EncoderCache,
    d_fused: &Matrix,
    grads: &mut GrsaParams,
) -> Result<Matrix> {
    grads.w_out.add_assign(&matmul_at(&cache.concat, d_fused)?)?;
    let d_concat = matmul_bt(d_fused, &params.w_out)?;
    let dm = config.d_model;
    let mut d_p = Matrix::zeros(input.n, config.d_emb);
    for r in Representation::ALL {
        let ri = r.index();
        let heads = config.heads(r);
        let dk = dm / heads;
        let d_h = d_concat.column_block(ri * dm, dm);
        let z = &cache.z[ri];
        let mut dz = Matrix::zeros(input.n, dm);
        for h in 0..heads {
            let zi = z.column_block(h * dk, dk);
            let dzi = attention_backward(&zi, &cache.weights[ri][h], &d_h.column_block(h * dk, dk))?;
            dz.set_column_block(h * dk, &dzi);
        }
        if r.is_graph() {
            let g = &mut grads.w_in[ri];
            for &(a, b) in input.edges[ri] {
                let src = dz.row(a as usize).to_vec();
                for (o, v) in g.row_mut(b as usize).iter_mut().zip(src) {
                    *o += v;
                }
            }
        } else {
            grads.w_in[ri].add_assign(&matmul_at(input.p, &dz)?)?;
            d_p = matmul_bt(&dz, &params.w_in[ri])?;
        }
    }
    Ok(d_p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
        Matrix::new(rows, cols, (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    /// Per-row exp-weighted sum with explicit normalisation.
    fn brute_attention(q: &Matrix, k: &Matrix, v: &Matrix) -> Matrix {
        let (l, dk) = q.shape();
        let mut out = Matrix::zeros(l, v.cols());
        for i in 0..l {
            let scores: Vec<f64> = (0..l)
                .map(|j| (0..dk).map(|c| q.get(i, c) * k.get(j, c)).sum::<f64>() / (dk as f64).sqrt())
                .collect();
            let m = scores.iter().cloned().fold(f64::MIN, f64::max);
            let e: Vec<f64> = scores.iter().map(|s| (s - m).exp()).collect();
            let z: f64 = e.iter().sum();
            for c in 0..v.cols() {
                out.set(i, c, (0..l).map(|j| e[j] / z * v.get(j, c)).sum());
            }
        }
        out
    }

    #[test]
    fn scalar_attention_is_identity() {
        let x = Matrix::new(1, 1, vec![0.37]).unwrap();
        assert_eq!(scaled_dot_attention(&x, &x, &x, &[true]).unwrap(), x);
    }

    #[test]
    fn equal_rows_average_values() {
        let x = Matrix::new(2, 1, vec![0.5, 0.5]).unwrap();
        let v = Matrix::new(2, 1, vec![1.0, 3.0]).unwrap();
        let out = scaled_dot_attention(&x, &x, &v, &[true, true]).unwrap();
        assert_eq!(out.data(), &[2.0, 2.0]);
    }

    #[test]
    fn matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (q, k, v) = (random(4, 8, &mut rng), random(4, 8, &mut rng), random(4, 8, &mut rng));
        let out = scaled_dot_attention(&q, &k, &v, &[true; 4]).unwrap();
        assert!(out.max_abs_diff(&brute_attention(&q, &k, &v)) <= 1e-12);
    }

    #[test]
    fn masking_excludes_keys_and_zeroes_queries() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (q, k, v) = (random(5, 3, &mut rng), random(5, 3, &mut rng), random(5, 2, &mut rng));
        let mask = [true, true, true, false, false];
        let out = scaled_dot_attention(&q, &k, &v, &mask).unwrap();
        let small = brute_attention(&q.top_rows(3), &k.top_rows(3), &v.top_rows(3));
        assert!(out.top_rows(3).max_abs_diff(&small) <= 1e-12);
        assert!(out.row(3).iter().chain(out.row(4)).all(|&x| x == 0.0));
    }

    #[test]
    fn attention_errors() {
        let z = Matrix::zeros(2, 0);
        assert_eq!(scaled_dot_attention(&z, &z, &z, &[true; 2]), Err(GrsaError::ZeroKeyWidth));
        let x = Matrix::zeros(2, 2);
        assert!(matches!(scaled_dot_attention(&x, &Matrix::zeros(3, 2), &x, &[true; 2]), Err(GrsaError::Numerics(_))));
        assert_eq!(scaled_dot_attention(&x, &x, &x, &[true]), Err(GrsaError::MaskLength { mask: 1, rows: 2 }));
        assert_eq!(self_attend(&x, 3, &Matrix::identity(2), &[true; 2]), Err(GrsaError::IndivisibleWidth { width: 2, heads: 3 }));
    }

    #[test]
    fn single_head_is_plain_attention() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random(5, 3, &mut rng);
        let w = random(3, 4, &mut rng);
        let z = matmul(&x, &w).unwrap();
        let mask = [true, true, true, true, false];
        assert_eq!(self_attend(&x, 1, &w, &mask).unwrap(), scaled_dot_attention(&z, &z, &z, &mask).unwrap());
    }

    #[test]
    fn identical_halves_give_identical_heads() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let half = random(4, 2, &mut rng);
        let z = Matrix::hcat(&[&half, &half]).unwrap();
        let out = self_attend(&z, 2, &Matrix::identity(4), &[true; 4]).unwrap();
        assert_eq!(out.column_block(0, 2), out.column_block(2, 2));
    }

    #[test]
    fn two_heads_match_manual_split() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = random(6, 5, &mut rng);
        let w = random(5, 4, &mut rng);
        let z = matmul(&x, &w).unwrap();
        let mask = [true; 6];
        let (a, b) = (z.column_block(0, 2), z.column_block(2, 2));
        let manual = Matrix::hcat(&[&brute_attention(&a, &a, &a), &brute_attention(&b, &b, &b)]).unwrap();
        assert!(self_attend(&x, 2, &w, &mask).unwrap().max_abs_diff(&manual) <= 1e-12);
    }

    fn small_config(l: usize) -> GrsaConfig {
        GrsaConfig { heads_pls: 2, heads_graph: 2, d_model: 4, d_fuse: 3, d_emb: 4, l }
    }

    fn random_edges(n: usize, rng: &mut ChaCha8Rng) -> Vec<(u32, u32)> {
        let mut e: Vec<(u32, u32)> = (0..n * n)
            .filter(|_| rng.gen_bool(0.3))
            .map(|k| ((k / n) as u32, (k % n) as u32))
            .collect();
        e.sort();
        e
    }

    fn dense(l: usize, edges: &[(u32, u32)]) -> Matrix {
        let mut m = Matrix::zeros(l, l);
        for &(a, b) in edges {
            m.set(a as usize, b as usize, 1.0);
        }
        m
    }

    fn padded_embedding(p: &Matrix, l: usize) -> EmbeddingMatrix {
        EmbeddingMatrix { values: p.with_rows(l), pad_mask: (0..l).map(|t| t < p.rows()).collect() }
    }

    #[test]
    fn zero_inputs_give_zero_encoding() {
        let cfg = small_config(5);
        let params = GrsaParams::init(&cfg, &mut ChaCha8Rng::seed_from_u64(6));
        let z = Matrix::zeros(5, 5);
        let p = EmbeddingMatrix { values: Matrix::zeros(5, 4), pad_mask: vec![true, true, true, false, false] };
        assert_eq!(grsa_encode([&z, &z, &z], &p, &params, &cfg).unwrap(), Matrix::zeros(5, 3));
    }

    #[test]
    fn composition_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let cfg = small_config(6);
        let params = GrsaParams::init(&cfg, &mut rng);
        let graphs: Vec<Matrix> = (0..3).map(|_| dense(6, &random_edges(6, &mut rng))).collect();
        let p = random(6, 4, &mut rng);
        let emb = padded_embedding(&p, 6);
        let got = grsa_encode([&graphs[0], &graphs[1], &graphs[2]], &emb, &params, &cfg).unwrap();

        let mut parts = Vec::new();
        for (i, x) in graphs.iter().chain(std::iter::once(&p)).enumerate() {
            let z = matmul(x, &params.w_in[i]).unwrap();
            let heads: Vec<Matrix> = (0..2)
                .map(|h| {
                    let b = z.column_block(2 * h, 2);
                    brute_attention(&b, &b, &b)
                })
                .collect();
            parts.push(Matrix::hcat(&[&heads[0], &heads[1]]).unwrap());
        }
        let refs: Vec<&Matrix> = parts.iter().collect();
        let oracle = matmul(&Matrix::hcat(&refs).unwrap(), &params.w_out).unwrap();
        assert!(got.max_abs_diff(&oracle) <= 1e-12);
    }

    #[test]
    fn inconsistent_lengths_are_rejected() {
        let cfg = small_config(4);
        let params = GrsaParams::init(&cfg, &mut ChaCha8Rng::seed_from_u64(8));
        let ok = Matrix::zeros(4, 4);
        let bad = Matrix::zeros(3, 3);
        let p = padded_embedding(&Matrix::zeros(2, 4), 4);
        assert_eq!(
            grsa_encode([&ok, &bad, &ok], &p, &params, &cfg),
            Err(GrsaError::InconsistentLength(Representation::Cfg))
        );
    }

    /// Encodes the same sample with the padded and the compact path.
    fn both_paths(n: usize, l: usize, seed: u64) -> (Matrix, Matrix) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cfg = small_config(l);
        let params = GrsaParams::init(&cfg, &mut rng);
        let edges: Vec<Vec<(u32, u32)>> = (0..3).map(|_| random_edges(n, &mut rng)).collect();
        let p = random(n, 4, &mut rng);
        let graphs: Vec<Matrix> = edges.iter().map(|e| dense(l, e)).collect();
        let full = grsa_encode([&graphs[0], &graphs[1], &graphs[2]], &padded_embedding(&p, l), &params, &cfg).unwrap();
        let input = EncoderInput { n, edges: [&edges[0], &edges[1], &edges[2]], p: &p };
        let (compact, _) = encode_forward(input, &params, &cfg).unwrap();
        (full, compact)
    }

    #[test]
    fn compact_path_is_bitwise_equal() {
        for (n, l, seed) in [(1, 1, 0), (3, 8, 1), (7, 7, 2), (0, 4, 3), (5, 12, 4)] {
            let (full, compact) = both_paths(n, l, seed);
            assert_eq!(full, compact.with_rows(l), "n={n} l={l}");
        }
    }

    /// Scalar objective `Σ fused ⊙ weights` for gradient checks.
    fn objective(input: EncoderInput<'_>, params: &GrsaParams, cfg: &GrsaConfig, weights: &Matrix) -> f64 {
        let (f, _) = encode_forward(input, params, cfg).unwrap();
        numerics::dot(f.data(), weights.data())
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let cfg = small_config(6);
        let n = 5;
        let params = GrsaParams::init(&cfg, &mut rng);
        let edges: Vec<Vec<(u32, u32)>> = (0..3).map(|_| random_edges(n, &mut rng)).collect();
        let p = random(n, 4, &mut rng);
        let w = random(n, 3, &mut rng);
        let input = EncoderInput { n, edges: [&edges[0], &edges[1], &edges[2]], p: &p };
        let (_, cache) = encode_forward(input, &params, &cfg).unwrap();
        let mut grads = params.zeros_like();
        let d_p = encode_backward(input, &params, &cfg, &cache, &w, &mut grads).unwrap();

        let mut worst: f64 = 0.0;
        for t in 0..5 {
            let base = |pp: &GrsaParams, k: usize| if t < 4 { pp.w_in[t].data()[k] } else { pp.w_out.data()[k] };
            let len = if t < 4 { params.w_in[t].len() } else { params.w_out.len() };
            let flat: Vec<f64> = (0..len).map(|k| base(&params, k)).collect();
            let analytic = if t < 4 { grads.w_in[t].data().to_vec() } else { grads.w_out.data().to_vec() };
            let err = numerics::grad_check(
                |x| {
                    let mut q = params.clone();
                    let target = if t < 4 { &mut q.w_in[t] } else { &mut q.w_out };
                    target.data_mut().copy_from_slice(x);
                    objective(input, &q, &cfg, &w)
                },
                &flat,
                &analytic,
                1e-5,
            )
            .unwrap();
            worst = worst.max(err);
        }
        let err_p = numerics::grad_check(
            |x| {
                let pm = Matrix::new(n, 4, x.to_vec()).unwrap();
                let inp = EncoderInput { p: &pm, ..input };
                objective(inp, &params, &cfg, &w)
            },
            p.data(),
            d_p.data(),
            1e-5,
        )
        .unwrap();
        assert!(worst.max(err_p) < 1e-6, "max relative error {}", worst.max(err_p));
    }

    proptest! {
        #[test]
        fn attention_rows_are_distributions(l in 1usize..8, dk in 1usize..8, seed in 0u64..500) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let q = random(l, dk, &mut rng);
            let k = random(l, dk, &mut rng);
            let (_, a) = attention(&q, &k, &q, &vec![true; l]).unwrap();
            for i in 0..l {
                prop_assert!((a.row(i).iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            }
        }

        #[test]
        fn padded_values_never_leak(n in 1usize..6, pad in 1usize..4, seed in 0u64..200) {
            let l = n + pad;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let cfg = small_config(l);
            let params = GrsaParams::init(&cfg, &mut rng);
            let mut graphs: Vec<Matrix> = (0..3).map(|_| dense(l, &random_edges(n, &mut rng))).collect();
            let p = random(n, 4, &mut rng);
            let mut emb = padded_embedding(&p, l);
            let before = grsa_encode([&graphs[0], &graphs[1], &graphs[2]], &emb, &params, &cfg).unwrap();
            for g in &mut graphs {
                for i in 0..l {
                    for j in 0..l {
                        if i >= n || j >= n {
                            g.set(i, j, if rng.gen_bool(0.5) { 1.0 } else { 0.0 });
                        }
                    }
                }
            }
            for t in n..l {
                for c in 0..4 {
                    emb.values.set(t, c, rng.gen_range(-5.0..5.0));
                }
            }
            let after = grsa_encode([&graphs[0], &graphs[1], &graphs[2]], &emb, &params, &cfg).unwrap();
            prop_assert_eq!(before.top_rows(n), after.top_rows(n));
        }

        #[test]
        fn compact_equals_padded(n in 0usize..7, pad in 0usize..4, seed in 0u64..200) {
            let l = (n + pad).max(1);
            let (full, compact) = both_paths(n, l, seed);
            prop_assert_eq!(full, compact.with_rows(l));
        }

        #[test]
        fn permutation_equivariance(n in 1usize..7, seed in 0u64..200) {
            use rand::seq::SliceRandom;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let cfg = small_config(n);
            let params = GrsaParams::init(&cfg, &mut rng);
            let graphs: Vec<Matrix> = (0..3).map(|_| dense(n, &random_edges(n, &mut rng))).collect();
            let p = random(n, 4, &mut rng);
            let mut perm: Vec<usize> = (0..n).collect();
            perm.shuffle(&mut rng);
            let permute_rows = |m: &Matrix| {
                let mut out = Matrix::zeros(m.rows(), m.cols());
                for (old, &new) in perm.iter().enumerate() {
                    out.row_mut(new).copy_from_slice(m.row(old));
                }
                out
            };
            // Graph rows are token-indexed features, so the graph input
            // projections are permuted together with the tokens.
            let mut permuted_params = params.clone();
            for i in 0..3 {
                permuted_params.w_in[i] = permute_rows(&params.w_in[i]);
            }
            let pg: Vec<Matrix> = graphs.iter().map(|g| permute_rows(&permute_rows(g).transpose()).transpose()).collect();
            let emb = padded_embedding(&p, n);
            let pemb = padded_embedding(&permute_rows(&p), n);
            let out = grsa_encode([&graphs[0], &graphs[1], &graphs[2]], &emb, &params, &cfg).unwrap();
            let pout = grsa_encode([&pg[0], &pg[1], &pg[2]], &pemb, &permuted_params, &cfg).unwrap();
            prop_assert!(permute_rows(&out).max_abs_diff(&pout) <= 1e-12);
        }
    }
}
