use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{BATCH_NORM_EPS, LAYER_NORM_EPS};

/// Upper bound on sequence length; token-axis reductions rely on it.
pub const MAX_TOKENS: usize = 2048;

/// Head variant of the quality model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    /// Learnable quality token prepended to the patch sequence.
    #[serde(rename = "T", alias = "t")]
    Token,
    /// Patch tokens only; quality from a two-layer feature network over all patches.
    #[serde(rename = "C", alias = "c")]
    Concat,
}

impl Variant {
    pub fn tag(self) -> char {
        match self {
            Variant::Token => 'T',
            Variant::Concat => 'C',
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.tag())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "T" | "t" | "token" => Ok(Variant::Token),
            "C" | "c" | "concat" => Ok(Variant::Concat),
            other => Err(Error::Config(format!(
                "unknown variant `{other}` (expected t or c)"
            ))),
        }
    }
}

fn default_ln_eps() -> f32 {
    LAYER_NORM_EPS
}

fn default_bn_eps() -> f32 {
    BATCH_NORM_EPS
}

/// Geometry of the ViT trunk and its head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VitConfig {
    pub image_height: usize,
    pub image_width: usize,
    pub patch_size: usize,
    pub channels: usize,
    pub token_dim: usize,
    pub heads: usize,
    pub blocks: usize,
    pub variant: Variant,
    #[serde(default = "default_ln_eps")]
    pub layer_norm_eps: f32,
    #[serde(default = "default_bn_eps")]
    pub batch_norm_eps: f32,
}

impl VitConfig {
    /// 96×96×3 faces with 8-pixel patches (144 patches), D=512, 8 heads, 12 blocks.
    pub fn standard(variant: Variant) -> Self {
        Self {
            image_height: 96,
            image_width: 96,
            patch_size: 8,
            channels: 3,
            token_dim: 512,
            heads: 8,
            blocks: 12,
            variant,
            layer_norm_eps: LAYER_NORM_EPS,
            batch_norm_eps: BATCH_NORM_EPS,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(Error::Config(m));
        if self.patch_size == 0 || self.channels == 0 || self.heads == 0 || self.blocks == 0 {
            return err("patch_size, channels, heads and blocks must be positive".into());
        }
        if self.image_height == 0 || self.image_width == 0 {
            return err("image dimensions must be positive".into());
        }
        if !self.image_height.is_multiple_of(self.patch_size)
            || !self.image_width.is_multiple_of(self.patch_size)
        {
            return err(format!(
                "image {}x{} is not divisible into {}-pixel patches",
                self.image_height, self.image_width, self.patch_size
            ));
        }
        if self.token_dim < 2 || !self.token_dim.is_multiple_of(self.heads) {
            return err(format!(
                "token_dim {} must be at least 2 and divisible by heads {}",
                self.token_dim, self.heads
            ));
        }
        if self.tokens() > MAX_TOKENS {
            return err(format!(
                "{} tokens exceeds the limit of {MAX_TOKENS}",
                self.tokens()
            ));
        }
        if [self.layer_norm_eps, self.batch_norm_eps]
            .iter()
            .any(|e| e.is_nan() || *e < 0.0)
        {
            return err("normalization eps must be non-negative".into());
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.token_dim / self.heads
    }

    /// Patch grid as (rows, cols).
    pub fn grid(&self) -> (usize, usize) {
        (
            self.image_height / self.patch_size,
            self.image_width / self.patch_size,
        )
    }

    pub fn num_patches(&self) -> usize {
        let (r, c) = self.grid();
        r * c
    }

    /// Sequence length seen by the transformer blocks.
    pub fn tokens(&self) -> usize {
        match self.variant {
            Variant::Token => self.num_patches() + 1,
            Variant::Concat => self.num_patches(),
        }
    }

    /// Length of one flattened patch, P²·C.
    pub fn patch_dim(&self) -> usize {
        self.patch_size * self.patch_size * self.channels
    }

    /// Row offset of the first patch token in the sequence.
    pub fn patch_offset(&self) -> usize {
        match self.variant {
            Variant::Token => 1,
            Variant::Concat => 0,
        }
    }
}
