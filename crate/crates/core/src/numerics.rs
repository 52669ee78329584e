//! Dense row-major tensors and the handful of kernels the trunk is built from.
//!
//! Everything here is `f32` storage. Layer-norm statistics are carried in
//! `f64`. Softmax denominators and other sums over the token axis are exact
//! (fixed-point, see [`exact_sum`]), so their value does not depend on token
//! order. The matmul kernel accumulates in `f32` in ascending `k` order, so the
//! same output element is bit-identical no matter how rows are batched.

use crate::error::{Error, Result};

/// Default epsilon for layer normalization.
pub const LAYER_NORM_EPS: f32 = 1e-6;
/// Default epsilon for inference batch normalization.
pub const BATCH_NORM_EPS: f32 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        if shape.is_empty() || shape.len() > 3 {
            return Err(Error::Config(format!(
                "tensor rank must be 1..=3, got shape {shape:?}"
            )));
        }
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::Dimension {
                op: "tensor",
                left: shape,
                right: vec![data.len()],
            });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let len = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; len],
        }
    }

    pub fn filled(shape: &[usize], value: f32) -> Self {
        let len = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; len],
        }
    }

    pub fn vector(data: Vec<f32>) -> Self {
        Self {
            shape: vec![data.len()],
            data,
        }
    }

    /// Builds a matrix from equal-length rows.
    pub fn from_rows(rows: &[&[f32]]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(Error::Dimension {
                    op: "from_rows",
                    left: vec![cols],
                    right: vec![r.len()],
                });
            }
            data.extend_from_slice(r);
        }
        Tensor::new(vec![rows.len(), cols], data)
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Tensor::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Number of rows when viewed as a matrix (rank 1 is a single row).
    pub fn rows(&self) -> usize {
        match self.shape.len() {
            1 => 1,
            _ => self.shape[0],
        }
    }

    /// Row length when viewed as a matrix: the product of all trailing dims.
    pub fn cols(&self) -> usize {
        match self.shape.len() {
            1 => self.shape[0],
            _ => self.shape[1..].iter().product(),
        }
    }

    pub fn row(&self, i: usize) -> &[f32] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f32] {
        let c = self.cols();
        &mut self.data[i * c..(i + 1) * c]
    }

    pub fn get2(&self, i: usize, j: usize) -> f32 {
        self.data[i * self.cols() + j]
    }

    pub fn reshape(self, shape: Vec<usize>) -> Result<Self> {
        Tensor::new(shape, self.data)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn transpose(&self) -> Result<Tensor> {
        let (m, n) = self.matrix_dims("transpose")?;
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = self.data[i * n + j];
            }
        }
        Tensor::new(vec![n, m], out)
    }

    /// Elementwise sum; shapes must match exactly.
    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        if self.shape != other.shape {
            return Err(Error::Dimension {
                op: "add",
                left: self.shape.clone(),
                right: other.shape.clone(),
            });
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a + b)
            .collect();
        Ok(Tensor {
            shape: self.shape.clone(),
            data,
        })
    }

    fn matrix_dims(&self, op: &'static str) -> Result<(usize, usize)> {
        match self.shape.as_slice() {
            [m, n] => Ok((*m, *n)),
            other => Err(Error::Dimension {
                op,
                left: other.to_vec(),
                right: vec![],
            }),
        }
    }
}

const NC: usize = 256;
const KC: usize = 256;
const MR: usize = 4;

/// `c = a · b` for row-major `a: m×k`, `b: k×n`, `c: m×n`.
///
/// Each output element is summed over `k` in ascending order starting from
/// zero, independent of the blocking, so batching rows never changes bits.
pub fn gemm(a: &[f32], b: &[f32], c: &mut [f32], m: usize, k: usize, n: usize) {
    assert_eq!(a.len(), m * k);
    assert_eq!(b.len(), k * n);
    assert_eq!(c.len(), m * n);
    #[cfg(target_arch = "x86_64")]
    {
        if std::arch::is_x86_feature_detected!("avx2") {
            // SAFETY: the feature was detected at runtime.
            unsafe { gemm_avx2(a, b, c, m, k, n) };
            return;
        }
    }
    gemm_body(a, b, c, m, k, n);
}

// No FMA: mul and add stay separately rounded, so this path is bit-identical
// to the baseline one.
#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2")]
unsafe fn gemm_avx2(a: &[f32], b: &[f32], c: &mut [f32], m: usize, k: usize, n: usize) {
    gemm_body(a, b, c, m, k, n);
}

#[inline(always)]
fn gemm_body(a: &[f32], b: &[f32], c: &mut [f32], m: usize, k: usize, n: usize) {
    c.fill(0.0);
    let mut acc = [[0f32; NC]; MR];
    for j0 in (0..n).step_by(NC) {
        let jw = NC.min(n - j0);
        for k0 in (0..k).step_by(KC) {
            let kw = KC.min(k - k0);
            let mut i0 = 0;
            while i0 < m {
                let rows = MR.min(m - i0);
                for (r, acc_r) in acc.iter_mut().enumerate().take(rows) {
                    let base = (i0 + r) * n + j0;
                    acc_r[..jw].copy_from_slice(&c[base..base + jw]);
                }
                for kk in k0..k0 + kw {
                    let brow = &b[kk * n + j0..kk * n + j0 + jw];
                    for (r, acc_r) in acc.iter_mut().enumerate().take(rows) {
                        let av = a[(i0 + r) * k + kk];
                        for (x, &bv) in acc_r[..jw].iter_mut().zip(brow) {
                            *x += av * bv;
                        }
                    }
                }
                for (r, acc_r) in acc.iter().enumerate().take(rows) {
                    let base = (i0 + r) * n + j0;
                    c[base..base + jw].copy_from_slice(&acc_r[..jw]);
                }
                i0 += MR;
            }
        }
    }
}

/// Matrix product of `a: m×k` and `b: k×n`. Rank-1 `a` is treated as `1×k`
/// and yields a rank-1 result.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k) = match a.shape() {
        [k] => (1, *k),
        [m, k] => (*m, *k),
        _ => return Err(mismatch("matmul", a, b)),
    };
    let (k2, n) = match b.shape() {
        [k2, n] => (*k2, *n),
        _ => return Err(mismatch("matmul", a, b)),
    };
    if k != k2 {
        return Err(mismatch("matmul", a, b));
    }
    let mut out = vec![0.0; m * n];
    gemm(a.data(), b.data(), &mut out, m, k, n);
    let shape = if a.shape().len() == 1 {
        vec![n]
    } else {
        vec![m, n]
    };
    Tensor::new(shape, out)
}

fn mismatch(op: &'static str, a: &Tensor, b: &Tensor) -> Error {
    Error::Dimension {
        op,
        left: a.shape().to_vec(),
        right: b.shape().to_vec(),
    }
}

/// `1.5 · 2^52`: adding and subtracting it rounds any |x| < 2^51 to an integer.
const ROUND_MAGIC: f64 = 6_755_399_441_055_744.0;

#[inline(always)]
pub(crate) fn round_to_integer(x: f64) -> f64 {
    (x + ROUND_MAGIC) - ROUND_MAGIC
}

/// Power-of-two scale for summing up to `n` terms bounded by `bound` in
/// magnitude: after scaling and rounding each term to an integer, every
/// partial sum stays below 2^50 and is therefore exact in `f64`. The total is
/// then independent of summation order.
pub(crate) fn exact_sum_scale(bound: f64, n: usize) -> f64 {
    if !bound.is_finite() || bound <= 0.0 {
        return 1.0;
    }
    // bound < 2^(exp + 1)
    let exp = ((bound.to_bits() >> 52) & 0x7ff) as i32 - 1023;
    let headroom = n.max(1).next_power_of_two().trailing_zeros() as i32;
    pow2(49 - headroom - exp)
}

fn pow2(k: i32) -> f64 {
    f64::from_bits(((k.clamp(-1022, 1023) + 1023) as u64) << 52)
}

/// Order-independent sum of terms whose magnitudes are all at most `bound`.
pub(crate) fn exact_sum(terms: impl Iterator<Item = f64> + Clone, bound: f64, n: usize) -> f64 {
    let scale = exact_sum_scale(bound, n);
    terms.map(|t| round_to_integer(t * scale)).sum::<f64>() / scale
}

/// In-place row softmax over a row-major buffer with rows of length `n`.
///
/// The denominator is summed exactly (see [`exact_sum_scale`]), so permuting
/// the entries of a row permutes the output without changing any bits.
pub fn softmax_rows_in_place(data: &mut [f32], n: usize) {
    for row in data.chunks_exact_mut(n) {
        let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
        for v in row.iter_mut() {
            *v = (*v - max).exp();
        }
        // The maximum entry maps to exp(0) = 1, which bounds every term.
        let sum = exact_sum(row.iter().map(|&v| v as f64), 1.0, n);
        for v in row.iter_mut() {
            *v = (*v as f64 / sum) as f32;
        }
    }
}

pub fn softmax_rows(x: &Tensor) -> Tensor {
    let mut out = x.clone();
    let n = out.cols();
    softmax_rows_in_place(out.data_mut(), n);
    out
}

/// Row-wise layer normalization with population variance.
pub fn layer_norm(x: &Tensor, gamma: &Tensor, beta: &Tensor, eps: f32) -> Result<Tensor> {
    let d = x.cols();
    if gamma.len() != d || beta.len() != d {
        return Err(mismatch("layer_norm", x, gamma));
    }
    let mut out = Tensor::zeros(x.shape());
    for (src, dst) in x
        .data()
        .chunks_exact(d)
        .zip(out.data_mut().chunks_exact_mut(d))
    {
        let mean = src.iter().map(|&v| v as f64).sum::<f64>() / d as f64;
        let var = src
            .iter()
            .map(|&v| {
                let c = v as f64 - mean;
                c * c
            })
            .sum::<f64>()
            / d as f64;
        let inv = 1.0 / (var + eps as f64).sqrt();
        for (((o, &v), &g), &b) in dst.iter_mut().zip(src).zip(gamma.data()).zip(beta.data()) {
            *o = ((v as f64 - mean) * inv) as f32 * g + b;
        }
    }
    Ok(out)
}

/// Inference batch normalization with stored running statistics.
pub fn batch_norm_infer(
    x: &Tensor,
    mean: &Tensor,
    var: &Tensor,
    gamma: &Tensor,
    beta: &Tensor,
    eps: f32,
) -> Result<Tensor> {
    let d = x.len();
    for p in [mean, var, gamma, beta] {
        if p.len() != d {
            return Err(mismatch("batch_norm", x, p));
        }
    }
    if let Some(i) = var.data().iter().position(|&v| v.is_nan() || v < 0.0) {
        return Err(Error::InvalidWeights(format!(
            "batch-norm variance at index {i} is negative ({})",
            var.data()[i]
        )));
    }
    let data = (0..d)
        .map(|i| {
            let norm = (x.data()[i] as f64 - mean.data()[i] as f64)
                / (var.data()[i] as f64 + eps as f64).sqrt();
            (gamma.data()[i] as f64 * norm + beta.data()[i] as f64) as f32
        })
        .collect();
    Tensor::new(x.shape().to_vec(), data)
}

pub fn relu6(x: &Tensor) -> Tensor {
    let mut out = x.clone();
    relu6_in_place(out.data_mut());
    out
}

pub(crate) fn relu6_in_place(data: &mut [f32]) {
    for v in data {
        *v = v.clamp(0.0, 6.0);
    }
}

pub fn l2_normalize(x: &Tensor) -> Result<Tensor> {
    let norm = x
        .data()
        .iter()
        .map(|&v| v as f64 * v as f64)
        .sum::<f64>()
        .sqrt();
    if !norm.is_finite() || norm <= 0.0 {
        return Err(Error::Degenerate(
            "cannot normalize a zero-norm vector".into(),
        ));
    }
    let data = x.data().iter().map(|&v| (v as f64 / norm) as f32).collect();
    Tensor::new(x.shape().to_vec(), data)
}
