//! Analytical compute and parameter model for every exit.
//!
//! Convention: a multiply-accumulate counts as 2 FLOPs and only matrix
//! products are counted. Layer norm, softmax, residual adds and ReLU6 are
//! excluded. Inference batch norm is counted as 4 FLOPs per feature.

use serde::Serialize;

use crate::config::{Variant, VitConfig};
use crate::error::{Error, Result};

pub fn matmul_flops(m: u64, k: u64, n: u64) -> u64 {
    2 * m * k * n
}

/// FLOPs of one transformer block over the variant's token count.
pub fn block_flops(config: &VitConfig) -> u64 {
    let t = config.tokens() as u64;
    let d = config.token_dim as u64;
    let qkv = matmul_flops(t, d, 3 * d);
    let scores = matmul_flops(t, d, t);
    let mix = matmul_flops(t, t, d);
    let out = matmul_flops(t, d, d);
    let mlp = matmul_flops(t, d, 4 * d) + matmul_flops(t, 4 * d, d);
    qkv + scores + mix + out + mlp
}

fn batch_norm_flops(d: u64) -> u64 {
    4 * d
}

/// FLOPs of one application of the quality head.
pub fn head_flops(config: &VitConfig) -> u64 {
    let d = config.token_dim as u64;
    let n = config.num_patches() as u64;
    let regression = matmul_flops(1, d, 1);
    match config.variant {
        Variant::Token => batch_norm_flops(d) + regression,
        Variant::Concat => {
            matmul_flops(1, n * d, d) + matmul_flops(1, d, d) + 3 * batch_norm_flops(d) + regression
        }
    }
}

pub fn patch_embed_flops(config: &VitConfig) -> u64 {
    matmul_flops(
        config.num_patches() as u64,
        config.patch_dim() as u64,
        config.token_dim as u64,
    )
}

fn check_exit(config: &VitConfig, l: usize) -> Result<()> {
    if l == 0 || l > config.blocks {
        return Err(Error::Config(format!(
            "exit {l} outside 1..={}",
            config.blocks
        )));
    }
    Ok(())
}

/// FLOPs to produce a score at exit `l` (1-based).
pub fn exit_cost(config: &VitConfig, l: usize) -> Result<u64> {
    check_exit(config, l)?;
    Ok(patch_embed_flops(config) + l as u64 * block_flops(config) + head_flops(config))
}

/// Full depth plus the head at each of the other L-1 exits.
pub fn fusion_cost(config: &VitConfig) -> u64 {
    let l = config.blocks as u64;
    patch_embed_flops(config) + l * block_flops(config) + l * head_flops(config)
}

pub fn block_params(config: &VitConfig) -> u64 {
    let d = config.token_dim as u64;
    // QKV + output projection, MLP weights and biases, two LN affines.
    4 * d * d + (8 * d * d + 5 * d) + 4 * d
}

/// Head parameters. Both variants are charged for the full feature network
/// (the token model keeps it from recognition training even though quality
/// inference never runs it).
pub fn head_params(config: &VitConfig) -> u64 {
    let d = config.token_dim as u64;
    let n = config.num_patches() as u64;
    d * (n * d) + d * d + 3 * 2 * d + d
}

/// Parameters needed up to and including exit `l`.
pub fn param_count(config: &VitConfig, l: usize) -> Result<u64> {
    check_exit(config, l)?;
    let d = config.token_dim as u64;
    let embed = config.patch_dim() as u64 * d + config.tokens() as u64 * d;
    let token = if config.variant == Variant::Token {
        d
    } else {
        0
    };
    Ok(embed + token + l as u64 * block_params(config) + head_params(config))
}

/// Cost columns for every exit and for fused scoring.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CostReport {
    pub variant: Variant,
    /// GFLOPs per exit.
    pub flops: Vec<f64>,
    /// Millions of parameters per exit.
    pub params: Vec<f64>,
    /// `flops[l] / flops[L]`.
    pub ratio: Vec<f64>,
    pub fusion_flops: f64,
    pub fusion_params: f64,
    pub fusion_ratio: f64,
}

pub fn cost_report(config: &VitConfig) -> Result<CostReport> {
    config.validate()?;
    let blocks = config.blocks;
    let raw: Vec<u64> = (1..=blocks)
        .map(|l| exit_cost(config, l))
        .collect::<Result<_>>()?;
    let last = raw[blocks - 1] as f64;
    let fusion = fusion_cost(config) as f64;
    let params: Vec<f64> = (1..=blocks)
        .map(|l| param_count(config, l).map(|p| p as f64 / 1e6))
        .collect::<Result<_>>()?;
    Ok(CostReport {
        variant: config.variant,
        flops: raw.iter().map(|&f| f as f64 / 1e9).collect(),
        ratio: raw.iter().map(|&f| f as f64 / last).collect(),
        fusion_params: params[blocks - 1],
        params,
        fusion_flops: fusion / 1e9,
        fusion_ratio: fusion / last,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn degenerate(variant: Variant) -> VitConfig {
        VitConfig {
            image_height: 1,
            image_width: 1,
            patch_size: 1,
            channels: 1,
            token_dim: 1,
            heads: 1,
            blocks: 2,
            variant,
            layer_norm_eps: 1e-6,
            batch_norm_eps: 1e-5,
        }
    }

    #[test]
    fn matmul_flop_examples() {
        assert_eq!(matmul_flops(1, 1, 1), 2);
        assert_eq!(matmul_flops(144, 512, 512), 75_497_472);
        assert_eq!(matmul_flops(512, 144 * 512, 1), 75_497_472);
    }

    #[test]
    fn block_flop_examples() {
        // Term-by-term for t=144, D=512:
        // 226,492,416 + 21,233,664 + 21,233,664 + 75,497,472 + 603,979,776
        assert_eq!(
            block_flops(&VitConfig::standard(Variant::Concat)),
            948_436_992
        );
        let t = block_flops(&VitConfig::standard(Variant::Token));
        assert_eq!(t, 955_320_320);
        assert!((t as f64 / 1e9 - 0.955).abs() < 5e-4);
        // t=1, D=1 and variant C: 2·(3 + 1 + 8) + 2 + 2
        assert_eq!(block_flops(&degenerate(Variant::Concat)), 28);
    }

    #[test]
    fn head_flop_examples() {
        assert_eq!(head_flops(&VitConfig::standard(Variant::Token)), 3072);
        let c = head_flops(&VitConfig::standard(Variant::Concat));
        assert_eq!(c, 75_497_472 + 524_288 + 6_144 + 1_024);
        assert!((c as f64 / 1e7 - 7.60).abs() < 0.01);
        assert_eq!(head_flops(&degenerate(Variant::Concat)), 2 + 2 + 12 + 2);
    }

    #[test]
    fn exit_cost_structure() {
        for variant in [Variant::Token, Variant::Concat] {
            let cfg = VitConfig::standard(variant);
            for l in 2..=12 {
                let step = exit_cost(&cfg, l).unwrap() - exit_cost(&cfg, l - 1).unwrap();
                assert_eq!(step, block_flops(&cfg));
            }
            assert_eq!(
                fusion_cost(&cfg) - exit_cost(&cfg, 12).unwrap(),
                11 * head_flops(&cfg)
            );
            assert!(exit_cost(&cfg, 0).is_err());
            assert!(exit_cost(&cfg, 13).is_err());
        }
    }

    #[test]
    fn params_per_block() {
        let cfg = VitConfig::standard(Variant::Concat);
        assert_eq!(block_params(&cfg), 3_150_336);
        assert_eq!(
            param_count(&cfg, 2).unwrap() - param_count(&cfg, 1).unwrap(),
            3_150_336
        );
    }

    #[test]
    fn report_ratio_ends_at_one() {
        let r = cost_report(&VitConfig::standard(Variant::Token)).unwrap();
        assert_eq!(r.ratio[11], 1.0);
        assert!(r.flops.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(r.fusion_params, r.params[11]);
    }
}
