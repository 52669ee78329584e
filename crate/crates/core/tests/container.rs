use exfiqa::io::{
    load_container, load_weights, save_container, save_weights, Container, Preprocess,
};
use exfiqa::synth::{self, SynthKind};
use exfiqa::{Error, Variant, VitConfig};
use proptest::prelude::*;

fn config(
    variant: Variant,
    grid: usize,
    patch: usize,
    heads: usize,
    head_dim: usize,
    blocks: usize,
) -> VitConfig {
    VitConfig {
        image_height: grid * patch,
        image_width: grid * patch,
        patch_size: patch,
        channels: 3,
        token_dim: heads * head_dim,
        heads,
        blocks,
        variant,
        ..VitConfig::standard(variant)
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]
    #[test]
    fn save_load_is_identity(
        concat in any::<bool>(),
        grid in 1usize..4,
        patch in 1usize..4,
        heads in 1usize..3,
        head_dim in 1usize..4,
        blocks in 1usize..4,
        seed in any::<u64>(),
    ) {
        let variant = if concat { Variant::Concat } else { Variant::Token };
        let cfg = config(variant, grid, patch, heads, head_dim.max(2 / heads), blocks);
        let weights = synth::build(&cfg, SynthKind::Random, seed);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.exfq");
        save_weights(&weights, &path).unwrap();
        let back = load_weights(&path).unwrap();
        prop_assert_eq!(&back, &weights);
        let again = dir.path().join("again.exfq");
        save_weights(&back, &again).unwrap();
        prop_assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&again).unwrap());
    }
}

#[test]
fn preprocess_metadata_round_trips_through_files() {
    let cfg = config(Variant::Token, 2, 2, 2, 2, 1);
    let c = Container {
        weights: synth::build(&cfg, SynthKind::Random, 9),
        preprocess: Preprocess {
            pixel_mean: 0.45,
            pixel_std: 0.2,
            channel_order: "BGR".into(),
        },
    };
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("w.exfq");
    save_container(&c, &path).unwrap();
    assert_eq!(load_container(&path).unwrap(), c);
}

#[test]
fn load_errors_carry_their_class() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.exfq");
    let err = load_weights(&missing).unwrap_err();
    assert!(matches!(err, Error::Io { .. }));
    assert_eq!(err.class().exit_code(), 3);

    let junk = dir.path().join("junk.exfq");
    std::fs::write(&junk, b"not a container").unwrap();
    let err = load_weights(&junk).unwrap_err();
    assert!(matches!(err, Error::BadMagic { .. }));
    assert_eq!(err.class().exit_code(), 4);
}
