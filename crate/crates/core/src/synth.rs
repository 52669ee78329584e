//! Seeded synthetic models and images for tests, benchmarks and demos.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::backbone::{BlockWeights, ModelWeights};
use crate::config::{Variant, VitConfig};
use crate::exits::{BatchNormParams, HeadWeights};
use crate::numerics::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SynthKind {
    /// Uniform fan-in scaled weights everywhere.
    Random,
    /// Random weights, but W_O, W_2 and b_2 zeroed in every block so the
    /// trunk passes its input through unchanged.
    Identity,
}

struct Init(ChaCha8Rng);

impl Init {
    fn uniform(&mut self, shape: &[usize], bound: f32) -> Tensor {
        let len = shape.iter().product();
        let data = (0..len).map(|_| self.0.gen_range(-bound..=bound)).collect();
        Tensor::new(shape.to_vec(), data).expect("shape and data agree")
    }

    fn fan_in(&mut self, shape: &[usize]) -> Tensor {
        let bound = (3.0 / shape[0] as f32).sqrt();
        self.uniform(shape, bound)
    }

    fn around(&mut self, shape: &[usize], center: f32, spread: f32) -> Tensor {
        let mut t = self.uniform(shape, spread);
        t.data_mut().iter_mut().for_each(|v| *v += center);
        t
    }

    fn batch_norm(&mut self, d: usize) -> BatchNormParams {
        BatchNormParams {
            mean: self.uniform(&[d], 0.1),
            var: self.around(&[d], 1.0, 0.5),
            gamma: self.around(&[d], 1.0, 0.2),
            beta: self.uniform(&[d], 0.1),
        }
    }
}

/// Deterministic synthetic weights for `config`.
pub fn build(config: &VitConfig, kind: SynthKind, seed: u64) -> ModelWeights {
    let mut init = Init(ChaCha8Rng::seed_from_u64(seed));
    let d = config.token_dim;
    let n = config.num_patches();
    let patch_proj = init.fan_in(&[config.patch_dim(), d]);
    let pos_embed = init.uniform(&[config.tokens(), d], 0.02);
    let quality_token = (config.variant == Variant::Token).then(|| init.uniform(&[d], 0.5));
    let blocks = (0..config.blocks)
        .map(|_| {
            let mut b = BlockWeights {
                ln1_gamma: init.around(&[d], 1.0, 0.1),
                ln1_beta: init.uniform(&[d], 0.05),
                w_q: init.fan_in(&[d, d]),
                w_k: init.fan_in(&[d, d]),
                w_v: init.fan_in(&[d, d]),
                w_o: init.fan_in(&[d, d]),
                ln2_gamma: init.around(&[d], 1.0, 0.1),
                ln2_beta: init.uniform(&[d], 0.05),
                w_1: init.fan_in(&[d, 4 * d]),
                b_1: init.uniform(&[4 * d], 0.05),
                w_2: init.fan_in(&[4 * d, d]),
                b_2: init.uniform(&[d], 0.05),
            };
            if kind == SynthKind::Identity {
                b.w_o = Tensor::zeros(&[d, d]);
                b.w_2 = Tensor::zeros(&[4 * d, d]);
                b.b_2 = Tensor::zeros(&[d]);
            }
            b
        })
        .collect();
    let head = match config.variant {
        Variant::Token => HeadWeights::Token {
            bn: init.batch_norm(d),
            w_t: init.fan_in(&[d, 1]),
        },
        Variant::Concat => HeadWeights::Concat {
            w_fc1: init.fan_in(&[n * d, d]),
            bn_1: init.batch_norm(d),
            w_fc2: init.fan_in(&[d, d]),
            bn_2: init.batch_norm(d),
            bn_f: init.batch_norm(d),
            w_c: init.fan_in(&[d, 1]),
        },
    };
    ModelWeights {
        config: config.clone(),
        patch_proj,
        pos_embed,
        quality_token,
        blocks,
        head,
    }
}

/// Image of the configured shape with pixels uniform in [-1, 1].
pub fn random_image(config: &VitConfig, seed: u64) -> Tensor {
    let mut init = Init(ChaCha8Rng::seed_from_u64(seed ^ 0x1ace));
    init.uniform(
        &[config.image_height, config.image_width, config.channels],
        1.0,
    )
}
