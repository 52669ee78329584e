//! Quality scoring at every depth, and convex fusion of the per-exit scores.
//!
//! The pre-trained head of the final block is reused unchanged at every
//! intermediate exit, including its batch-norm running statistics.

use crate::backbone::ExitSeries;
use crate::config::Variant;
use crate::error::{Error, Result};
use crate::numerics::{batch_norm_infer, gemm, Tensor};

/// Inference batch-norm parameters over D features.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormParams {
    pub mean: Tensor,
    pub var: Tensor,
    pub gamma: Tensor,
    pub beta: Tensor,
}

impl BatchNormParams {
    pub fn identity(d: usize) -> Self {
        Self {
            mean: Tensor::zeros(&[d]),
            var: Tensor::filled(&[d], 1.0),
            gamma: Tensor::filled(&[d], 1.0),
            beta: Tensor::zeros(&[d]),
        }
    }

    pub fn apply(&self, x: &Tensor, eps: f32) -> Result<Tensor> {
        batch_norm_infer(x, &self.mean, &self.var, &self.gamma, &self.beta, eps)
    }
}

/// Quality head. Matrices are stored input-dim × output-dim; none carry a bias.
#[derive(Debug, Clone, PartialEq)]
#[allow(clippy::large_enum_variant)]
pub enum HeadWeights {
    /// `s = W_T · BN(q)` on the quality token.
    Token {
        bn: BatchNormParams,
        /// D × 1
        w_t: Tensor,
    },
    /// Two-layer feature network over all concatenated patch tokens,
    /// then `s = W_C · BN(f)`.
    Concat {
        /// (N·D) × D
        w_fc1: Tensor,
        bn_1: BatchNormParams,
        /// D × D
        w_fc2: Tensor,
        bn_2: BatchNormParams,
        bn_f: BatchNormParams,
        /// D × 1
        w_c: Tensor,
    },
}

impl HeadWeights {
    pub fn variant(&self) -> Variant {
        match self {
            HeadWeights::Token { .. } => Variant::Token,
            HeadWeights::Concat { .. } => Variant::Concat,
        }
    }
}

fn check_exit(series: &ExitSeries, l: usize, expected: Variant) -> Result<()> {
    if series.variant != expected {
        return Err(Error::VariantMismatch {
            expected: expected.tag(),
            found: series.variant.tag(),
        });
    }
    if l == 0 || l >= series.states.len() {
        return Err(Error::Config(format!(
            "exit {l} outside 1..={}",
            series.states.len().saturating_sub(1)
        )));
    }
    Ok(())
}

fn dot(x: &[f32], w: &[f32]) -> f64 {
    x.iter().zip(w).map(|(&a, &b)| a as f64 * b as f64).sum()
}

/// Score of the quality token after block `l`.
pub fn exit_score_t(series: &ExitSeries, l: usize, head: &HeadWeights, bn_eps: f32) -> Result<f64> {
    check_exit(series, l, Variant::Token)?;
    let HeadWeights::Token { bn, w_t } = head else {
        return Err(Error::VariantMismatch {
            expected: 'T',
            found: head.variant().tag(),
        });
    };
    let q = Tensor::vector(series.states[l].row(0).to_vec());
    let normed = bn.apply(&q, bn_eps)?;
    Ok(dot(normed.data(), w_t.data()))
}

/// Score of the concatenated patch tokens after block `l`.
pub fn exit_score_c(series: &ExitSeries, l: usize, head: &HeadWeights, bn_eps: f32) -> Result<f64> {
    check_exit(series, l, Variant::Concat)?;
    let h_flat = series.states[l].data();
    let projected = project_fc1(h_flat, 1, head)?;
    concat_tail(&projected, head, bn_eps)
}

/// `rows` flattened patch states times W_fc1, in one pass over the weights.
fn project_fc1(h_flat: &[f32], rows: usize, head: &HeadWeights) -> Result<Vec<f32>> {
    let HeadWeights::Concat { w_fc1, .. } = head else {
        return Err(Error::VariantMismatch {
            expected: 'C',
            found: head.variant().tag(),
        });
    };
    let (k, d) = (w_fc1.rows(), w_fc1.cols());
    if h_flat.len() != rows * k {
        return Err(Error::Dimension {
            op: "exit_score_c",
            left: vec![rows, h_flat.len() / rows.max(1)],
            right: w_fc1.shape().to_vec(),
        });
    }
    let mut out = vec![0.0; rows * d];
    gemm(h_flat, w_fc1.data(), &mut out, rows, k, d);
    Ok(out)
}

fn concat_tail(fc1_out: &[f32], head: &HeadWeights, bn_eps: f32) -> Result<f64> {
    let HeadWeights::Concat {
        bn_1,
        w_fc2,
        bn_2,
        bn_f,
        w_c,
        ..
    } = head
    else {
        unreachable!("checked by project_fc1");
    };
    let f1 = bn_1.apply(&Tensor::vector(fc1_out.to_vec()), bn_eps)?;
    let d = w_fc2.cols();
    let mut pre = vec![0.0; d];
    gemm(f1.data(), w_fc2.data(), &mut pre, 1, f1.len(), d);
    let f = bn_2.apply(&Tensor::vector(pre), bn_eps)?;
    let normed = bn_f.apply(&f, bn_eps)?;
    Ok(dot(normed.data(), w_c.data()))
}

/// Fills `exit_scores` with one score per executed block.
///
/// For the concat head all exits share a single batched W_fc1 product; each
/// row is bit-identical to the corresponding standalone [`exit_score_c`].
pub fn score_all_exits(
    mut series: ExitSeries,
    head: &HeadWeights,
    bn_eps: f32,
) -> Result<ExitSeries> {
    let depth = series.depth();
    let scores = match series.variant {
        Variant::Token => (1..=depth)
            .map(|l| exit_score_t(&series, l, head, bn_eps))
            .collect::<Result<Vec<_>>>()?,
        Variant::Concat => {
            if depth == 0 {
                Vec::new()
            } else {
                let mut stacked = Vec::with_capacity(depth * series.states[1].len());
                for state in &series.states[1..] {
                    stacked.extend_from_slice(state.data());
                }
                let projected = project_fc1(&stacked, depth, head)?;
                let d = projected.len() / depth;
                projected
                    .chunks_exact(d)
                    .map(|row| concat_tail(row, head, bn_eps))
                    .collect::<Result<Vec<_>>>()?
            }
        }
    };
    series.exit_scores = scores;
    Ok(series)
}

/// How per-exit scores are weighted into one fused score.
#[derive(Debug, Clone, PartialEq)]
pub enum FusionKind {
    /// `w_l = 1/L`
    Uniform,
    /// `w_l ∝ l`
    DepthWeighted,
    /// All weight on exit `l` (1-based).
    OneHot(usize),
    /// Non-negative weights, normalized to sum to one.
    Custom(Vec<f64>),
}

/// Convex weights over the L exits.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionSpec {
    weights: Vec<f64>,
}

impl FusionSpec {
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }
}

pub fn make_fusion(kind: &FusionKind, blocks: usize) -> Result<FusionSpec> {
    if blocks == 0 {
        return Err(Error::InvalidFusion(
            "fusion needs at least one exit".into(),
        ));
    }
    let weights = match kind {
        FusionKind::Uniform => vec![1.0 / blocks as f64; blocks],
        FusionKind::DepthWeighted => {
            let total = (blocks * (blocks + 1) / 2) as f64;
            (1..=blocks).map(|l| l as f64 / total).collect()
        }
        FusionKind::OneHot(l) => {
            if *l == 0 || *l > blocks {
                return Err(Error::InvalidFusion(format!(
                    "one-hot exit {l} outside 1..={blocks}"
                )));
            }
            (1..=blocks)
                .map(|i| if i == *l { 1.0 } else { 0.0 })
                .collect()
        }
        FusionKind::Custom(raw) => {
            if raw.len() != blocks {
                return Err(Error::InvalidFusion(format!(
                    "{} custom weights for {blocks} exits",
                    raw.len()
                )));
            }
            if raw.iter().any(|w| !w.is_finite() || *w < 0.0) {
                return Err(Error::InvalidFusion(
                    "custom weights must be finite and non-negative".into(),
                ));
            }
            let total: f64 = raw.iter().sum();
            if total <= 0.0 {
                return Err(Error::InvalidFusion("custom weights are all zero".into()));
            }
            raw.iter().map(|w| w / total).collect()
        }
    };
    Ok(FusionSpec { weights })
}

/// `Σ w_l · s_l`. Zero-weight exits are skipped, so a one-hot spec returns
/// the selected score unchanged.
pub fn fuse_scores(scores: &[f64], spec: &FusionSpec) -> Result<f64> {
    if scores.len() != spec.len() {
        return Err(Error::InvalidFusion(format!(
            "{} scores for a {}-exit fusion",
            scores.len(),
            spec.len()
        )));
    }
    Ok(scores
        .iter()
        .zip(&spec.weights)
        .filter(|(_, &w)| w != 0.0)
        .fold(-0.0, |acc, (&s, &w)| acc + w * s))
}

/// Min-max rescales each exit's scores across a batch of samples to [0, 1].
/// An exit whose scores are all equal maps to 0. Off by default in the CLI.
pub fn min_max_normalize_exits(batch: &mut [Vec<f64>]) {
    let Some(width) = batch.first().map(Vec::len) else {
        return;
    };
    for l in 0..width {
        let (lo, hi) = batch
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), s| {
                (lo.min(s[l]), hi.max(s[l]))
            });
        let span = hi - lo;
        for s in batch.iter_mut() {
            s[l] = if span > 0.0 { (s[l] - lo) / span } else { 0.0 };
        }
    }
}
