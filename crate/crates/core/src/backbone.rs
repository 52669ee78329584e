//! Shared ViT trunk: patch embedding, token assembly, and the block stack.
//!
//! A forward pass records the token state after every block together with
//! the head-averaged attention of that block, so any depth can be scored
//! without recomputation.

use crate::config::{Variant, VitConfig};
use crate::error::{Error, Result};
use crate::exits::HeadWeights;
use crate::numerics::{
    exact_sum_scale, gemm, layer_norm, relu6_in_place, round_to_integer, softmax_rows_in_place,
    Tensor,
};

/// Parameters of one pre-norm transformer block. Matrices are stored
/// input-dim × output-dim and multiply row vectors from the right.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockWeights {
    pub ln1_gamma: Tensor,
    pub ln1_beta: Tensor,
    pub w_q: Tensor,
    pub w_k: Tensor,
    pub w_v: Tensor,
    pub w_o: Tensor,
    pub ln2_gamma: Tensor,
    pub ln2_beta: Tensor,
    pub w_1: Tensor,
    pub b_1: Tensor,
    pub w_2: Tensor,
    pub b_2: Tensor,
}

/// All learned parameters of one model variant.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelWeights {
    pub config: VitConfig,
    /// (P²·C) × D
    pub patch_proj: Tensor,
    /// (N+1) × D for the token variant, N × D otherwise.
    pub pos_embed: Tensor,
    pub quality_token: Option<Tensor>,
    pub blocks: Vec<BlockWeights>,
    pub head: HeadWeights,
}

/// Per-depth record of one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ExitSeries {
    pub variant: Variant,
    /// `states[0]` is the embedded input, `states[l]` the output of block `l`.
    pub states: Vec<Tensor>,
    /// Head-averaged attention of each executed block, tokens × tokens.
    pub attention: Vec<Tensor>,
    /// Per-head attention, only when requested in [`ForwardOptions`].
    pub head_attention: Option<Vec<Vec<Tensor>>>,
    /// Quality score per exit, filled by [`crate::exits::score_all_exits`].
    pub exit_scores: Vec<f64>,
}

impl ExitSeries {
    /// Number of executed blocks.
    pub fn depth(&self) -> usize {
        self.attention.len()
    }
}

#[derive(Debug, Clone, Default)]
pub struct ForwardOptions {
    /// Stop after this many blocks; `None` runs the whole stack.
    pub depth: Option<usize>,
    pub keep_head_attention: bool,
}

/// Cuts the image into the patch grid and projects each flattened patch.
///
/// Patches are taken in row-major grid order; each patch is flattened
/// row-major over pixels with the channel index innermost.
pub fn patchify_embed(image: &Tensor, weights: &ModelWeights) -> Result<Tensor> {
    let cfg = &weights.config;
    let expected = [cfg.image_height, cfg.image_width, cfg.channels];
    if image.shape() != expected {
        return Err(Error::Config(format!(
            "image shape {:?} does not match model input {:?}",
            image.shape(),
            expected
        )));
    }
    let patches = flatten_patches(image, cfg);
    let (n, pd, d) = (cfg.num_patches(), cfg.patch_dim(), cfg.token_dim);
    let mut out = vec![0.0; n * d];
    gemm(&patches, weights.patch_proj.data(), &mut out, n, pd, d);
    Tensor::new(vec![n, d], out)
}

fn flatten_patches(image: &Tensor, cfg: &VitConfig) -> Vec<f32> {
    let (gh, gw) = cfg.grid();
    let (p, c, w) = (cfg.patch_size, cfg.channels, cfg.image_width);
    let px = image.data();
    let mut out = Vec::with_capacity(cfg.num_patches() * cfg.patch_dim());
    for gy in 0..gh {
        for gx in 0..gw {
            for y in 0..p {
                let row = (gy * p + y) * w + gx * p;
                out.extend_from_slice(&px[row * c..(row + p) * c]);
            }
        }
    }
    out
}

/// Prepends the quality token (variant T) and adds position embeddings.
pub fn assemble_input(patches: &Tensor, weights: &ModelWeights) -> Result<Tensor> {
    let cfg = &weights.config;
    let (n, d) = (cfg.num_patches(), cfg.token_dim);
    if patches.shape() != [n, d] {
        return Err(Error::Dimension {
            op: "assemble_input",
            left: patches.shape().to_vec(),
            right: vec![n, d],
        });
    }
    let t = cfg.tokens();
    if weights.pos_embed.shape() != [t, d] {
        return Err(Error::InvalidWeights(format!(
            "pos_embed has shape {:?}, expected {:?}",
            weights.pos_embed.shape(),
            [t, d]
        )));
    }
    let mut data = Vec::with_capacity(t * d);
    if cfg.variant == Variant::Token {
        let q0 = weights
            .quality_token
            .as_ref()
            .ok_or_else(|| Error::InvalidWeights("variant T requires a quality token".into()))?;
        data.extend_from_slice(q0.data());
    }
    data.extend_from_slice(patches.data());
    for (v, p) in data.iter_mut().zip(weights.pos_embed.data()) {
        *v += p;
    }
    Tensor::new(vec![t, d], data)
}

/// Output of one attention layer.
#[derive(Debug, Clone)]
pub struct AttentionOutput {
    pub out: Tensor,
    /// Mean of the per-head attention matrices.
    pub attn: Tensor,
    pub per_head: Option<Vec<Tensor>>,
}

/// Multi-head self-attention over `x` (already layer-normalized).
pub fn multi_head_attention(
    x: &Tensor,
    block: &BlockWeights,
    config: &VitConfig,
) -> Result<AttentionOutput> {
    attention_impl(x, block, config, false)
}

fn attention_impl(
    x: &Tensor,
    block: &BlockWeights,
    config: &VitConfig,
    keep_heads: bool,
) -> Result<AttentionOutput> {
    let d = config.token_dim;
    let t = x.rows();
    if t == 0 || x.cols() != d {
        return Err(Error::Dimension {
            op: "multi_head_attention",
            left: x.shape().to_vec(),
            right: vec![t, d],
        });
    }
    let dh = config.head_dim();
    let proj = |w: &Tensor| {
        let mut out = vec![0.0; t * d];
        gemm(x.data(), w.data(), &mut out, t, d, d);
        out
    };
    let q = proj(&block.w_q);
    let k = proj(&block.w_k);
    let v = proj(&block.w_v);
    let scale = 1.0 / (dh as f32).sqrt();

    let mut concat = vec![0.0f32; t * d];
    let mut attn_sum = vec![0.0f32; t * t];
    let mut per_head = keep_heads.then(Vec::new);
    let mut q_h = vec![0.0f32; t * dh];
    let mut k_ht = vec![0.0f32; dh * t];
    let mut v_h = vec![0.0f32; t * dh];
    let mut scores = vec![0.0f32; t * t];

    for h in 0..config.heads {
        let col = h * dh;
        for i in 0..t {
            let src = i * d + col;
            q_h[i * dh..(i + 1) * dh].copy_from_slice(&q[src..src + dh]);
            v_h[i * dh..(i + 1) * dh].copy_from_slice(&v[src..src + dh]);
            for e in 0..dh {
                k_ht[e * t + i] = k[src + e];
            }
        }
        gemm(&q_h, &k_ht, &mut scores, t, dh, t);
        for s in scores.iter_mut() {
            *s *= scale;
        }
        softmax_rows_in_place(&mut scores, t);
        attend_values(&scores, &v_h, t, dh, &mut concat, d, col);
        for (acc, &a) in attn_sum.iter_mut().zip(&scores) {
            *acc += a;
        }
        if let Some(heads) = per_head.as_mut() {
            heads.push(Tensor::new(vec![t, t], scores.clone())?);
        }
    }

    let inv_heads = 1.0 / config.heads as f32;
    for a in attn_sum.iter_mut() {
        *a *= inv_heads;
    }
    let mut out = vec![0.0; t * d];
    gemm(&concat, block.w_o.data(), &mut out, t, d, d);
    Ok(AttentionOutput {
        out: Tensor::new(vec![t, d], out)?,
        attn: Tensor::new(vec![t, t], attn_sum)?,
        per_head,
    })
}

/// `concat[:, col..col+dh] = probs · values`, summing over the token axis
/// exactly so a permutation of the tokens permutes the result bit for bit.
fn attend_values(
    probs: &[f32],
    values: &[f32],
    t: usize,
    dh: usize,
    concat: &mut [f32],
    d: usize,
    col: usize,
) {
    let mut v_max = vec![0f64; dh];
    for row in values.chunks_exact(dh) {
        for (m, &x) in v_max.iter_mut().zip(row) {
            *m = m.max((x as f64).abs());
        }
    }
    let mut scales = vec![0f64; dh];
    let mut acc = vec![0f64; dh];
    for i in 0..t {
        let prow = &probs[i * t..(i + 1) * t];
        let p_max = prow.iter().fold(0f64, |m, &p| m.max((p as f64).abs()));
        for (s, &vm) in scales.iter_mut().zip(&v_max) {
            *s = exact_sum_scale(p_max * vm, t);
        }
        acc.fill(0.0);
        for (j, &p) in prow.iter().enumerate() {
            let p = p as f64;
            let vrow = &values[j * dh..(j + 1) * dh];
            for ((a, &vv), &s) in acc.iter_mut().zip(vrow).zip(&scales) {
                *a += round_to_integer(p * vv as f64 * s);
            }
        }
        let dst = &mut concat[i * d + col..i * d + col + dh];
        for ((o, &a), &s) in dst.iter_mut().zip(&acc).zip(&scales) {
            *o = (a / s) as f32;
        }
    }
}

/// One pre-norm block: attention and MLP branches, each with a residual.
pub fn transformer_block(
    z: &Tensor,
    block: &BlockWeights,
    config: &VitConfig,
) -> Result<(Tensor, Tensor)> {
    let (z_next, att) = block_impl(z, block, config, false)?;
    Ok((z_next, att.attn))
}

fn block_impl(
    z: &Tensor,
    block: &BlockWeights,
    config: &VitConfig,
    keep_heads: bool,
) -> Result<(Tensor, AttentionOutput)> {
    let d = config.token_dim;
    let t = z.rows();
    let normed = layer_norm(z, &block.ln1_gamma, &block.ln1_beta, config.layer_norm_eps)?;
    let att = attention_impl(&normed, block, config, keep_heads)?;
    let mid = att.out.add(z)?;

    let normed = layer_norm(
        &mid,
        &block.ln2_gamma,
        &block.ln2_beta,
        config.layer_norm_eps,
    )?;
    let hidden_dim = block.b_1.len();
    let mut hidden = vec![0.0; t * hidden_dim];
    gemm(
        normed.data(),
        block.w_1.data(),
        &mut hidden,
        t,
        d,
        hidden_dim,
    );
    for row in hidden.chunks_exact_mut(hidden_dim) {
        for (h, b) in row.iter_mut().zip(block.b_1.data()) {
            *h += b;
        }
    }
    relu6_in_place(&mut hidden);
    let mut out = vec![0.0; t * d];
    gemm(&hidden, block.w_2.data(), &mut out, t, hidden_dim, d);
    for (row, res) in out.chunks_exact_mut(d).zip(mid.data().chunks_exact(d)) {
        for ((o, b), r) in row.iter_mut().zip(block.b_2.data()).zip(res) {
            *o = (*o + b) + r;
        }
    }
    Ok((Tensor::new(vec![t, d], out)?, att))
}

/// Embeds the image and runs every block, recording all intermediate states.
pub fn forward_all_blocks(image: &Tensor, weights: &ModelWeights) -> Result<ExitSeries> {
    forward_with(image, weights, &ForwardOptions::default())
}

pub fn forward_with(
    image: &Tensor,
    weights: &ModelWeights,
    options: &ForwardOptions,
) -> Result<ExitSeries> {
    let cfg = &weights.config;
    if weights.blocks.len() != cfg.blocks {
        return Err(Error::InvalidWeights(format!(
            "model has {} blocks, config declares {}",
            weights.blocks.len(),
            cfg.blocks
        )));
    }
    let depth = options.depth.unwrap_or(cfg.blocks);
    if depth > cfg.blocks {
        return Err(Error::Config(format!(
            "requested depth {depth} exceeds the {} available blocks",
            cfg.blocks
        )));
    }
    let embedded = assemble_input(&patchify_embed(image, weights)?, weights)?;
    let mut states = Vec::with_capacity(depth + 1);
    let mut attention = Vec::with_capacity(depth);
    let mut heads = options.keep_head_attention.then(Vec::new);
    states.push(embedded);
    for block in &weights.blocks[..depth] {
        let prev = states.last().expect("states starts non-empty");
        let (next, att) = block_impl(prev, block, cfg, options.keep_head_attention)?;
        states.push(next);
        attention.push(att.attn);
        if let (Some(all), Some(per)) = (heads.as_mut(), att.per_head) {
            all.push(per);
        }
    }
    Ok(ExitSeries {
        variant: cfg.variant,
        states,
        attention,
        head_attention: heads,
        exit_scores: Vec::new(),
    })
}

/// Spatial attention map of block `block_index` (1-based), on the patch grid.
///
/// Variant T uses the quality-token query row restricted to patch keys;
/// variant C uses the mean attention each patch receives. The map is
/// renormalized to sum to one.
pub fn extract_attention_map(
    series: &ExitSeries,
    block_index: usize,
    config: &VitConfig,
) -> Result<Tensor> {
    if block_index == 0 || block_index > series.attention.len() {
        return Err(Error::Config(format!(
            "block index {block_index} outside 1..={}",
            series.attention.len()
        )));
    }
    let attn = &series.attention[block_index - 1];
    let t = attn.rows();
    let n = config.num_patches();
    let off = config.patch_offset();
    if t != n + off {
        return Err(Error::Dimension {
            op: "extract_attention_map",
            left: attn.shape().to_vec(),
            right: vec![n + off, n + off],
        });
    }
    let raw: Vec<f64> = match config.variant {
        Variant::Token => attn.row(0)[1..].iter().map(|&v| v as f64).collect(),
        Variant::Concat => (0..n)
            .map(|j| (0..t).map(|i| attn.get2(i, j) as f64).sum::<f64>() / t as f64)
            .collect(),
    };
    let total: f64 = raw.iter().sum();
    if total.is_nan() || total <= 0.0 {
        return Err(Error::Degenerate(format!(
            "block {block_index} assigns no attention to patch tokens"
        )));
    }
    let (gh, gw) = config.grid();
    Tensor::new(
        vec![gh, gw],
        raw.into_iter().map(|v| (v / total) as f32).collect(),
    )
}
