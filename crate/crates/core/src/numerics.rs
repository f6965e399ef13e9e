//! Dense row-major `f64` matrices and the handful of numeric kernels the
//! classifier needs: products, row softmax, valid 1-D convolution, Adam and a
//! central-difference gradient checker.
//!
//! Every kernel sums in a fixed sequential order, so results are bitwise
//! reproducible for identical inputs on one platform.

use rand::Rng;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NumericsError {
    #[error("{op}: shape mismatch {left:?} vs {right:?}")]
    ShapeMismatch {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },
    #[error("matrix data length {len} does not match {rows}x{cols}")]
    BadLength { rows: usize, cols: usize, len: usize },
    #[error("non-finite value {value} at index {index}")]
    NonFinite { index: usize, value: f64 },
    #[error("kernel width {width} exceeds sequence length {len}")]
    KernelTooWide { width: usize, len: usize },
    #[error("stride must be at least 1")]
    ZeroStride,
    #[error("finite-difference epsilon {0} outside [1e-7, 1e-4]")]
    BadEpsilon(f64),
    #[error("objective returned a non-finite value at coordinate {0}")]
    NonFiniteObjective(usize),
}

pub type Result<T> = std::result::Result<T, NumericsError>;

/// Row-major dense matrix of finite `f64` values.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    /// Builds a matrix from row-major data, rejecting wrong lengths and
    /// non-finite entries.
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(NumericsError::BadLength { rows, cols, len: data.len() });
        }
        if let Some((index, &value)) = data.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(NumericsError::NonFinite { index, value });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for row in rows {
            if row.len() != cols {
                return Err(NumericsError::BadLength { rows: rows.len(), cols, len: row.len() });
            }
            data.extend_from_slice(row);
        }
        Self::new(rows.len(), cols, data)
    }

    /// Glorot-uniform initialisation in `±sqrt(6 / (fan_in + fan_out))`.
    pub fn glorot<R: Rng + ?Sized>(rows: usize, cols: usize, fan_in: usize, fan_out: usize, rng: &mut R) -> Self {
        let denom = (fan_in + fan_out).max(1) as f64;
        let bound = (6.0 / denom).sqrt();
        let data = (0..rows * cols).map(|_| rng.gen_range(-bound..=bound)).collect();
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Mutable access to the raw buffer. Callers must keep entries finite.
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn is_all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn transpose(&self) -> Matrix {
        let mut out = Matrix::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        out
    }

    /// First `n` rows as a new matrix.
    pub fn top_rows(&self, n: usize) -> Matrix {
        let n = n.min(self.rows);
        Matrix { rows: n, cols: self.cols, data: self.data[..n * self.cols].to_vec() }
    }

    /// Copies columns `start..start + width`.
    pub fn column_block(&self, start: usize, width: usize) -> Matrix {
        let mut out = Matrix::zeros(self.rows, width);
        for r in 0..self.rows {
            out.row_mut(r).copy_from_slice(&self.row(r)[start..start + width]);
        }
        out
    }

    /// Writes `block` into columns starting at `start`.
    pub fn set_column_block(&mut self, start: usize, block: &Matrix) {
        for r in 0..self.rows {
            let cols = self.cols;
            self.data[r * cols + start..r * cols + start + block.cols].copy_from_slice(block.row(r));
        }
    }

    /// Column-wise concatenation.
    pub fn hcat(parts: &[&Matrix]) -> Result<Matrix> {
        let rows = parts.first().map_or(0, |m| m.rows);
        if let Some(bad) = parts.iter().find(|m| m.rows != rows) {
            return Err(NumericsError::ShapeMismatch { op: "hcat", left: (rows, 0), right: bad.shape() });
        }
        let cols = parts.iter().map(|m| m.cols).sum();
        let mut out = Matrix::zeros(rows, cols);
        let mut start = 0;
        for m in parts {
            out.set_column_block(start, m);
            start += m.cols;
        }
        Ok(out)
    }

    /// Zero-extends (or truncates) to exactly `rows` rows.
    pub fn with_rows(&self, rows: usize) -> Matrix {
        let mut out = Matrix::zeros(rows, self.cols);
        let keep = rows.min(self.rows) * self.cols;
        out.data[..keep].copy_from_slice(&self.data[..keep]);
        out
    }

    pub fn add_assign(&mut self, other: &Matrix) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(NumericsError::ShapeMismatch { op: "add", left: self.shape(), right: other.shape() });
        }
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn scale(&mut self, s: f64) {
        for v in &mut self.data {
            *v *= s;
        }
    }

    pub fn fill_zero(&mut self) {
        self.data.iter_mut().for_each(|v| *v = 0.0);
    }

    pub fn max_abs_diff(&self, other: &Matrix) -> f64 {
        assert_eq!(self.shape(), other.shape());
        self.data.iter().zip(&other.data).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }
}

/// `A · B` with sequential summation over the shared index.
pub fn matmul(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols != b.rows {
        return Err(NumericsError::ShapeMismatch { op: "matmul", left: a.shape(), right: b.shape() });
    }
    Ok(matmul_prefix(a, b))
}

/// `A · B[0..A.cols]`: multiplies by the leading `A.cols` rows of `B`.
///
/// Summation order matches [`matmul`], so padding `A` with zero columns and
/// `B` with extra rows yields bitwise-equal results. Zero entries of `A` are
/// skipped, which only elides exact `+0` terms.
pub(crate) fn matmul_prefix(a: &Matrix, b: &Matrix) -> Matrix {
    debug_assert!(a.cols <= b.rows);
    let n = b.cols;
    let mut out = Matrix::zeros(a.rows, n);
    for i in 0..a.rows {
        let arow = a.row(i);
        let orow = &mut out.data[i * n..(i + 1) * n];
        for (k, &aik) in arow.iter().enumerate() {
            if aik == 0.0 {
                continue;
            }
            let brow = &b.data[k * n..(k + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += aik * bv;
            }
        }
    }
    out
}

/// `A · Bᵀ`.
pub fn matmul_bt(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols != b.cols {
        return Err(NumericsError::ShapeMismatch { op: "matmul_bt", left: a.shape(), right: b.shape() });
    }
    let mut out = Matrix::zeros(a.rows, b.rows);
    for i in 0..a.rows {
        let arow = a.row(i);
        for j in 0..b.rows {
            out.data[i * b.rows + j] = dot(arow, b.row(j));
        }
    }
    Ok(out)
}

/// `Aᵀ · B`.
pub fn matmul_at(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.rows != b.rows {
        return Err(NumericsError::ShapeMismatch { op: "matmul_at", left: a.shape(), right: b.shape() });
    }
    let n = b.cols;
    let mut out = Matrix::zeros(a.cols, n);
    for k in 0..a.rows {
        let brow = b.row(k);
        for (i, &aki) in a.row(k).iter().enumerate() {
            if aki == 0.0 {
                continue;
            }
            let orow = &mut out.data[i * n..(i + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += aki * bv;
            }
        }
    }
    Ok(out)
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for (x, y) in a.iter().zip(b) {
        s += x * y;
    }
    s
}

/// Numerically stable softmax of a slice in place (max-shifted).
pub fn softmax_in_place(row: &mut [f64]) {
    if row.is_empty() {
        return;
    }
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

/// Row-wise softmax with per-row max subtraction.
pub fn softmax_rows(a: &Matrix) -> Matrix {
    let mut out = a.clone();
    for r in 0..out.rows {
        softmax_in_place(out.row_mut(r));
    }
    out
}

/// Valid (unpadded) 1-D convolution along the row axis.
///
/// `kernels` is a bank with one kernel per row; each row is a `width × d`
/// kernel flattened row-major, where `d = x.cols()`. Output is
/// `out_len × n_kernels` with `out_len = (L - width) / stride + 1` and
/// `out[t][c] = Σ_k Σ_j x[t·stride + k][j] · kernel_c[k][j]`.
pub fn conv1d(x: &Matrix, kernels: &Matrix, width: usize, stride: usize) -> Result<Matrix> {
    if stride == 0 {
        return Err(NumericsError::ZeroStride);
    }
    if width == 0 || width > x.rows {
        return Err(NumericsError::KernelTooWide { width, len: x.rows });
    }
    if kernels.cols != width * x.cols {
        return Err(NumericsError::ShapeMismatch { op: "conv1d", left: x.shape(), right: kernels.shape() });
    }
    let out_len = conv_output_len(x.rows, width, stride);
    let d = x.cols;
    let mut out = Matrix::zeros(out_len, kernels.rows);
    for t in 0..out_len {
        let start = t * stride * d;
        let window = &x.data[start..start + width * d];
        for c in 0..kernels.rows {
            out.data[t * kernels.rows + c] = dot(window, kernels.row(c));
        }
    }
    Ok(out)
}

pub fn conv_output_len(len: usize, width: usize, stride: usize) -> usize {
    (len - width) / stride + 1
}

/// Adam optimiser state shared by a fixed list of parameter tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub m: Vec<Matrix>,
    pub v: Vec<Matrix>,
}

impl AdamState {
    pub const BETA1: f64 = 0.9;
    pub const BETA2: f64 = 0.999;
    pub const EPSILON: f64 = 1e-8;

    /// Zero moments shaped like `shapes`.
    pub fn new(learning_rate: f64, shapes: &[(usize, usize)]) -> Self {
        Self {
            step: 0,
            learning_rate,
            beta1: Self::BETA1,
            beta2: Self::BETA2,
            epsilon: Self::EPSILON,
            m: shapes.iter().map(|&(r, c)| Matrix::zeros(r, c)).collect(),
            v: shapes.iter().map(|&(r, c)| Matrix::zeros(r, c)).collect(),
        }
    }
}

/// One bias-corrected Adam update over aligned parameter/gradient lists.
pub fn adam_step(params: &mut [&mut Matrix], grads: &[&Matrix], state: &mut AdamState) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(NumericsError::ShapeMismatch {
            op: "adam_step",
            left: (params.len(), 0),
            right: (grads.len(), state.m.len()),
        });
    }
    for ((p, g), m) in params.iter().zip(grads).zip(&state.m) {
        if p.shape() != g.shape() || p.shape() != m.shape() {
            return Err(NumericsError::ShapeMismatch { op: "adam_step", left: p.shape(), right: g.shape() });
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (state.beta1, state.beta2);
    let bc1 = 1.0 - b1.powi(t);
    let bc2 = 1.0 - b2.powi(t);
    let lr = state.learning_rate;
    let eps = state.epsilon;
    for (i, p) in params.iter_mut().enumerate() {
        let g = grads[i];
        let m = &mut state.m[i];
        let v = &mut state.v[i];
        for k in 0..g.data.len() {
            let gk = g.data[k];
            m.data[k] = b1 * m.data[k] + (1.0 - b1) * gk;
            v.data[k] = b2 * v.data[k] + (1.0 - b2) * gk * gk;
            let m_hat = m.data[k] / bc1;
            let v_hat = v.data[k] / bc2;
            p.data[k] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

/// Largest per-coordinate relative error between central finite differences
/// of `f` and `analytic`, using `|fd - an| / max(1e-12, |fd| + |an|)`.
pub fn grad_check<F>(mut f: F, params: &[f64], analytic: &[f64], epsilon: f64) -> Result<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    if !(1e-7..=1e-4).contains(&epsilon) {
        return Err(NumericsError::BadEpsilon(epsilon));
    }
    if params.len() != analytic.len() {
        return Err(NumericsError::ShapeMismatch {
            op: "grad_check",
            left: (params.len(), 1),
            right: (analytic.len(), 1),
        });
    }
    let mut p = params.to_vec();
    let mut worst = 0.0_f64;
    for i in 0..p.len() {
        let orig = p[i];
        p[i] = orig + epsilon;
        let plus = f(&p);
        p[i] = orig - epsilon;
        let minus = f(&p);
        p[i] = orig;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(NumericsError::NonFiniteObjective(i));
        }
        let fd = (plus - minus) / (2.0 * epsilon);
        let an = analytic[i];
        let rel = (fd - an).abs() / (fd.abs() + an.abs()).max(1e-12);
        worst = worst.max(rel);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
        let data = (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect();
        Matrix::new(rows, cols, data).unwrap()
    }

    #[test]
    fn rejects_non_finite() {
        assert!(matches!(Matrix::new(1, 2, vec![1.0, f64::NAN]), Err(NumericsError::NonFinite { index: 1, .. })));
        assert!(Matrix::new(1, 1, vec![f64::INFINITY]).is_err());
        assert!(matches!(Matrix::new(2, 2, vec![0.0; 3]), Err(NumericsError::BadLength { .. })));
    }

    #[test]
    fn identity_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let b = random(3, 4, &mut rng);
        assert_eq!(matmul(&Matrix::identity(3), &b).unwrap(), b);
    }

    #[test]
    fn hand_product() {
        let a = Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let b = Matrix::from_rows(&[vec![0.0], vec![1.0]]).unwrap();
        assert_eq!(matmul(&a, &b).unwrap().data(), &[2.0, 4.0]);
    }

    #[test]
    fn product_shape_error() {
        let a = Matrix::zeros(2, 3);
        assert!(matches!(matmul(&a, &a), Err(NumericsError::ShapeMismatch { .. })));
    }

    #[test]
    fn transposed_products_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = random(3, 5, &mut rng);
        let b = random(4, 5, &mut rng);
        let c = random(3, 2, &mut rng);
        let bt = matmul_bt(&a, &b).unwrap();
        assert!(bt.max_abs_diff(&matmul(&a, &b.transpose()).unwrap()) < 1e-15);
        let at = matmul_at(&a, &c).unwrap();
        assert!(at.max_abs_diff(&matmul(&a.transpose(), &c).unwrap()) < 1e-15);
    }

    #[test]
    fn prefix_product_is_bitwise_padded_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random(4, 3, &mut rng);
        let b = random(6, 5, &mut rng);
        let mut padded = Matrix::zeros(4, 6);
        for r in 0..4 {
            for c in 0..3 {
                padded.set(r, c, a.get(r, c));
            }
        }
        assert_eq!(matmul_prefix(&a, &b), matmul(&padded, &b).unwrap());
    }

    #[test]
    fn softmax_basic_rows() {
        let m = Matrix::from_rows(&[vec![0.0, 0.0], vec![1000.0, 0.0]]).unwrap();
        let s = softmax_rows(&m);
        assert_eq!(s.row(0), &[0.5, 0.5]);
        assert!((s.get(1, 0) - 1.0).abs() < 1e-300 || s.get(1, 0) == 1.0);
        assert!(s.get(1, 1) >= 0.0 && s.get(1, 1) < 1e-300);
        assert!(s.is_all_finite());
    }

    #[test]
    fn softmax_matches_high_precision_oracle() {
        // Reference values from a 50-digit evaluation of exp(x_i) / Σ exp(x_j).
        let oracle = [0.09003057317038045799802, 0.244728471054797652473, 0.665240955774821889529];
        let s = softmax_rows(&Matrix::from_rows(&[vec![1.0, 2.0, 3.0]]).unwrap());
        for (got, want) in s.row(0).iter().zip(oracle) {
            assert!((got - want).abs() < 1e-12, "{got} vs {want}");
        }
    }

    #[test]
    fn softmax_empty() {
        assert!(softmax_rows(&Matrix::zeros(0, 0)).is_empty());
    }

    fn naive_conv(x: &Matrix, kernels: &[Matrix], stride: usize) -> Matrix {
        let width = kernels[0].rows();
        let out_len = (x.rows() - width) / stride + 1;
        let mut out = Matrix::zeros(out_len, kernels.len());
        for t in 0..out_len {
            for (c, k) in kernels.iter().enumerate() {
                let mut s = 0.0;
                for dk in 0..width {
                    for j in 0..x.cols() {
                        s += x.get(t * stride + dk, j) * k.get(dk, j);
                    }
                }
                out.set(t, c, s);
            }
        }
        out
    }

    fn bank(kernels: &[Matrix]) -> Matrix {
        let rows: Vec<Vec<f64>> = kernels.iter().map(|k| k.data().to_vec()).collect();
        Matrix::from_rows(&rows).unwrap()
    }

    #[test]
    fn conv_width_one_is_linear_map() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = random(5, 3, &mut rng);
        let w = random(1, 3, &mut rng);
        let out = conv1d(&x, &w, 1, 1).unwrap();
        let expect = matmul(&x, &w.transpose()).unwrap();
        assert!(out.max_abs_diff(&expect) < 1e-15);
    }

    #[test]
    fn conv_output_length() {
        let x = Matrix::zeros(5, 2);
        let k = Matrix::zeros(1, 6);
        assert_eq!(conv1d(&x, &k, 3, 1).unwrap().rows(), 3);
        assert_eq!(conv1d(&x, &k, 3, 2).unwrap().rows(), 2);
        assert!(matches!(
            conv1d(&Matrix::zeros(2, 2), &Matrix::zeros(1, 6), 3, 1),
            Err(NumericsError::KernelTooWide { .. })
        ));
        assert!(matches!(conv1d(&x, &k, 3, 0), Err(NumericsError::ZeroStride)));
    }

    #[test]
    fn conv_matches_triple_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for trial in 0..50 {
            let len = rng.gen_range(3..12);
            let d = rng.gen_range(1..6);
            let width = rng.gen_range(1..=len.min(4));
            let stride = rng.gen_range(1..4);
            let x = random(len, d, &mut rng);
            let ks: Vec<Matrix> = (0..rng.gen_range(1..5)).map(|_| random(width, d, &mut rng)).collect();
            let got = conv1d(&x, &bank(&ks), width, stride).unwrap();
            let want = naive_conv(&x, &ks, stride);
            assert!(got.max_abs_diff(&want) <= 1e-12, "trial {trial}");
        }
    }

    #[test]
    fn adam_zero_gradient_keeps_params() {
        let mut p = Matrix::from_rows(&[vec![1.0, -2.0]]).unwrap();
        let before = p.clone();
        let g = Matrix::zeros(1, 2);
        let mut st = AdamState::new(1e-3, &[(1, 2)]);
        for _ in 0..5 {
            adam_step(&mut [&mut p], &[&g], &mut st).unwrap();
        }
        assert_eq!(p, before);
        assert_eq!(st.step, 5);
    }

    #[test]
    fn adam_first_step_bias_correction() {
        let mut p = Matrix::from_rows(&[vec![0.0]]).unwrap();
        let g = Matrix::from_rows(&[vec![0.5]]).unwrap();
        let mut st = AdamState::new(0.1, &[(1, 1)]);
        adam_step(&mut [&mut p], &[&g], &mut st).unwrap();
        // m = 0.1·g, v = 0.001·g²; corrected by 1-β1 and 1-β2 back to g and g².
        let expect = -0.1 * 0.5 / (0.5 + 1e-8);
        assert!((p.get(0, 0) - expect).abs() < 1e-15);
        assert_eq!(st.m[0].get(0, 0), (1.0 - 0.9) * 0.5);
    }

    #[test]
    fn adam_constant_gradient_closed_form() {
        // With constant g the corrected moments equal g and g², so every
        // update is lr·g/(|g|+ε) regardless of the step count.
        let g = Matrix::from_rows(&[vec![0.3, -2.0, 1e-3]]).unwrap();
        let mut p = Matrix::zeros(1, 3);
        let lr = 1e-2;
        let mut st = AdamState::new(lr, &[(1, 3)]);
        for step in 1..=200 {
            let before = p.clone();
            adam_step(&mut [&mut p], &[&g], &mut st).unwrap();
            for k in 0..3 {
                let gk = g.get(0, k);
                let expected = lr * gk / (gk.abs() + 1e-8);
                let delta = before.get(0, k) - p.get(0, k);
                assert!((delta - expected).abs() <= 1e-9 * lr, "step {step} coord {k}");
            }
        }
    }

    #[test]
    fn adam_shape_mismatch() {
        let mut p = Matrix::zeros(1, 2);
        let g = Matrix::zeros(2, 1);
        let mut st = AdamState::new(1e-3, &[(1, 2)]);
        assert!(adam_step(&mut [&mut p], &[&g], &mut st).is_err());
    }

    #[test]
    fn grad_check_quadratic() {
        let p = vec![0.3, -1.2, 2.5];
        let grad: Vec<f64> = p.iter().map(|x| 2.0 * x).collect();
        let err = grad_check(|q| q.iter().map(|x| x * x).sum(), &p, &grad, 1e-5).unwrap();
        assert!(err < 1e-8, "{err}");
    }

    #[test]
    fn grad_check_detects_scaled_gradient() {
        let p = vec![0.3, -1.2, 2.5];
        let grad: Vec<f64> = p.iter().map(|x| 4.0 * x).collect();
        let err = grad_check(|q| q.iter().map(|x| x * x).sum(), &p, &grad, 1e-5).unwrap();
        assert!((err - 1.0 / 3.0).abs() < 1e-6, "{err}");
    }

    #[test]
    fn grad_check_rejects_bad_inputs() {
        assert!(matches!(grad_check(|_| 0.0, &[1.0], &[0.0], 1e-2), Err(NumericsError::BadEpsilon(_))));
        assert!(matches!(
            grad_check(|q| if q[0] > 1.0 { f64::NAN } else { 0.0 }, &[1.0], &[0.0], 1e-5),
            Err(NumericsError::NonFiniteObjective(0))
        ));
    }

    proptest! {
        #[test]
        fn softmax_rows_are_distributions(rows in proptest::collection::vec(proptest::collection::vec(-30.0f64..30.0, 1..8), 1..6)) {
            let width = rows[0].len();
            let rows: Vec<Vec<f64>> = rows.into_iter().map(|mut r| { r.resize(width, 0.0); r }).collect();
            let s = softmax_rows(&Matrix::from_rows(&rows).unwrap());
            for r in 0..s.rows() {
                let sum: f64 = s.row(r).iter().sum();
                prop_assert!((sum - 1.0).abs() <= 1e-12);
                prop_assert!(s.row(r).iter().all(|&v| v > 0.0 && v <= 1.0));
            }
        }

        #[test]
        fn operations_are_deterministic(seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = random(4, 6, &mut rng);
            let b = random(6, 3, &mut rng);
            let first = matmul(&a, &b).unwrap();
            let second = matmul(&a, &b).unwrap();
            prop_assert!(first.data().iter().zip(second.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
    }
}
