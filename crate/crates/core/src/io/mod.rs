//! File formats: weight containers, images, comparison sets, attention maps.

pub mod attention;
pub mod comparisons;
pub mod container;
pub mod image;

pub use attention::{read_attention_csv, write_attention_map, MapFormat};
pub use comparisons::{read_comparison_set, read_scores, write_scores};
pub use container::{
    load_container, load_weights, save_container, save_weights, tensor_manifest, Container,
    Preprocess,
};
pub use image::{read_image, read_image_for, read_image_with, write_ppm, write_tensor};
