//! Early-exit face image quality assessment on a vision transformer.

pub mod backbone;
pub mod config;
pub mod cost;
pub mod error;
pub mod eval;
pub mod exits;
pub mod io;
pub mod numerics;
pub mod synth;

pub use backbone::{forward_all_blocks, forward_with, ExitSeries, ForwardOptions, ModelWeights};
pub use config::{Variant, VitConfig};
pub use error::{Error, ErrorClass, Result};
pub use exits::{fuse_scores, make_fusion, score_all_exits, FusionKind, FusionSpec, HeadWeights};
pub use numerics::Tensor;
