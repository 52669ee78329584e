use exfiqa::backbone::extract_attention_map;
use exfiqa::exits::{exit_score_c, exit_score_t};
use exfiqa::synth::{self, SynthKind};
use exfiqa::{
    forward_all_blocks, forward_with, score_all_exits, ForwardOptions, Tensor, Variant, VitConfig,
};
use proptest::prelude::*;

fn small(variant: Variant) -> VitConfig {
    VitConfig {
        image_height: 12,
        image_width: 8,
        patch_size: 4,
        channels: 3,
        token_dim: 16,
        heads: 4,
        blocks: 4,
        variant,
        ..VitConfig::standard(variant)
    }
}

fn variant_of(concat: bool) -> Variant {
    if concat {
        Variant::Concat
    } else {
        Variant::Token
    }
}

/// Swaps whole patches of an `[H, W, C]` image according to `perm`, where
/// patch `perm[i]` of the output is patch `i` of the input.
fn permute_patches(image: &Tensor, cfg: &VitConfig, perm: &[usize]) -> Tensor {
    let (gh, gw) = cfg.grid();
    let (p, c, w) = (cfg.patch_size, cfg.channels, cfg.image_width);
    let mut out = image.clone();
    for (src, &dst) in perm.iter().enumerate().take(gh * gw) {
        let (sy, sx) = (src / gw * p, src % gw * p);
        let (dy, dx) = (dst / gw * p, dst % gw * p);
        for y in 0..p {
            for x in 0..p {
                for ch in 0..c {
                    let s = ((sy + y) * w + sx + x) * c + ch;
                    let d = ((dy + y) * w + dx + x) * c + ch;
                    out.data_mut()[d] = image.data()[s];
                }
            }
        }
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn identity_trunk_is_exact(concat in any::<bool>(), seed in any::<u64>()) {
        let cfg = small(variant_of(concat));
        let w = synth::build(&cfg, SynthKind::Identity, seed);
        let s = score_all_exits(forward_all_blocks(&synth::random_image(&cfg, seed), &w).unwrap(), &w.head, cfg.batch_norm_eps).unwrap();
        for state in &s.states[1..] {
            prop_assert_eq!(state, &s.states[0]);
        }
        prop_assert!(s.exit_scores.iter().all(|&x| x == s.exit_scores[0]));
    }

    #[test]
    fn attention_rows_are_stochastic(concat in any::<bool>(), seed in any::<u64>()) {
        let cfg = small(variant_of(concat));
        let w = synth::build(&cfg, SynthKind::Random, seed);
        let s = forward_with(&synth::random_image(&cfg, seed), &w, &ForwardOptions { depth: None, keep_head_attention: true }).unwrap();
        for block in s.head_attention.as_ref().unwrap() {
            for head in block {
                for i in 0..head.rows() {
                    let row = head.row(i);
                    prop_assert!(row.iter().all(|&v| v >= 0.0));
                    prop_assert!((row.iter().map(|&v| v as f64).sum::<f64>() - 1.0).abs() < 1e-5);
                }
            }
        }
        for b in 1..=cfg.blocks {
            let map = extract_attention_map(&s, b, &cfg).unwrap();
            prop_assert_eq!(map.shape(), &[3, 2]);
            prop_assert!((map.data().iter().map(|&v| v as f64).sum::<f64>() - 1.0).abs() < 1e-5);
        }
    }

    #[test]
    fn patch_permutation_commutes_with_the_trunk(seed in any::<u64>(), perm in Just((0..6usize).collect::<Vec<_>>()).prop_shuffle()) {
        let cfg = small(Variant::Concat);
        let mut w = synth::build(&cfg, SynthKind::Random, seed);
        w.pos_embed = Tensor::zeros(w.pos_embed.shape());
        let image = synth::random_image(&cfg, seed);
        let a = forward_all_blocks(&image, &w).unwrap();
        let b = forward_all_blocks(&permute_patches(&image, &cfg, &perm), &w).unwrap();
        for (sa, sb) in a.states.iter().zip(&b.states) {
            for (i, &j) in perm.iter().enumerate() {
                prop_assert_eq!(sa.row(i), sb.row(j));
            }
        }
        for (aa, ab) in a.attention.iter().zip(&b.attention) {
            for i in 0..perm.len() {
                for j in 0..perm.len() {
                    prop_assert_eq!(aa.get2(i, j).to_bits(), ab.get2(perm[i], perm[j]).to_bits());
                }
            }
        }
    }

    #[test]
    fn truncated_runs_are_prefixes(concat in any::<bool>(), seed in any::<u64>(), depth in 0usize..=4) {
        let cfg = small(variant_of(concat));
        let w = synth::build(&cfg, SynthKind::Random, seed);
        let image = synth::random_image(&cfg, seed);
        let full = score_all_exits(forward_all_blocks(&image, &w).unwrap(), &w.head, cfg.batch_norm_eps).unwrap();
        let part = forward_with(&image, &w, &ForwardOptions { depth: Some(depth), keep_head_attention: false }).unwrap();
        prop_assert_eq!(&part.states[..], &full.states[..=depth]);
        prop_assert_eq!(&part.attention[..], &full.attention[..depth]);
        if depth > 0 {
            let single = match cfg.variant {
                Variant::Token => exit_score_t(&part, depth, &w.head, cfg.batch_norm_eps).unwrap(),
                Variant::Concat => exit_score_c(&part, depth, &w.head, cfg.batch_norm_eps).unwrap(),
            };
            prop_assert_eq!(single.to_bits(), full.exit_scores[depth - 1].to_bits());
        }
    }
}

#[test]
fn scores_are_deterministic() {
    let cfg = small(Variant::Concat);
    let w = synth::build(&cfg, SynthKind::Random, 5);
    let image = synth::random_image(&cfg, 5);
    let a = score_all_exits(forward_all_blocks(&image, &w).unwrap(), &w.head, 1e-5).unwrap();
    let b = score_all_exits(forward_all_blocks(&image, &w).unwrap(), &w.head, 1e-5).unwrap();
    assert_eq!(a, b);
}

#[test]
fn wrong_image_shape_is_rejected() {
    let cfg = small(Variant::Token);
    let w = synth::build(&cfg, SynthKind::Random, 0);
    let bad = Tensor::zeros(&[8, 8, 3]);
    assert!(forward_all_blocks(&bad, &w).is_err());
}
