//! `EXFQ` weight container: magic, version, JSON header, raw f32 payload.
//!
//! ```text
//! offset  size  field
//! 0       4     magic  b"EXFQ"
//! 4       4     format version, u32 little-endian (currently 1)
//! 8       8     header length H in bytes, u64 little-endian
//! 16      H     UTF-8 JSON header
//! 16+H    ...   payload: little-endian f32 values
//! ```
//!
//! Tensor offsets in the header are byte offsets from the start of the
//! payload. The payload must be covered exactly by the listed tensors.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::backbone::{BlockWeights, ModelWeights};
use crate::config::{Variant, VitConfig};
use crate::error::{Error, Result};
use crate::exits::{BatchNormParams, HeadWeights};
use crate::numerics::Tensor;

pub const MAGIC: &[u8; 4] = b"EXFQ";
pub const FORMAT_VERSION: u32 = 1;
const PREAMBLE: usize = 16;

/// How raw 8-bit pixels become model inputs: `(v/255 - mean) / std`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Preprocess {
    pub pixel_mean: f32,
    pub pixel_std: f32,
    /// `"RGB"` or `"BGR"`: channel order the model expects.
    pub channel_order: String,
}

impl Default for Preprocess {
    fn default() -> Self {
        Self {
            pixel_mean: 0.5,
            pixel_std: 0.5,
            channel_order: "RGB".into(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    offset: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    config: VitConfig,
    #[serde(default)]
    preprocess: Preprocess,
    tensors: Vec<TensorEntry>,
}

/// Weights together with the input normalization recorded alongside them.
#[derive(Debug, Clone, PartialEq)]
pub struct Container {
    pub weights: ModelWeights,
    pub preprocess: Preprocess,
}

const BLOCK_PARAMS: [&str; 12] = [
    "ln1.gamma",
    "ln1.beta",
    "w_q",
    "w_k",
    "w_v",
    "w_o",
    "w_1",
    "b_1",
    "w_2",
    "b_2",
    "ln2.gamma",
    "ln2.beta",
];
const BN_PARAMS: [&str; 4] = ["mean", "var", "gamma", "beta"];

/// Canonical tensor names and shapes for `config`, in container order.
/// Blocks are numbered from 1, like exits.
pub fn tensor_manifest(config: &VitConfig) -> Vec<(String, Vec<usize>)> {
    let d = config.token_dim;
    let mut out = vec![
        ("patch_proj".to_string(), vec![config.patch_dim(), d]),
        ("pos_embed".to_string(), vec![config.tokens(), d]),
    ];
    if config.variant == Variant::Token {
        out.push(("quality_token".into(), vec![d]));
    }
    for l in 1..=config.blocks {
        for p in BLOCK_PARAMS {
            let shape = match p {
                "w_q" | "w_k" | "w_v" | "w_o" => vec![d, d],
                "w_1" => vec![d, 4 * d],
                "b_1" => vec![4 * d],
                "w_2" => vec![4 * d, d],
                _ => vec![d],
            };
            out.push((format!("blocks.{l}.{p}"), shape));
        }
    }
    let bn = |out: &mut Vec<(String, Vec<usize>)>, prefix: &str| {
        for p in BN_PARAMS {
            out.push((format!("head.{prefix}.{p}"), vec![d]));
        }
    };
    match config.variant {
        Variant::Token => {
            bn(&mut out, "bn");
            out.push(("head.w_t".into(), vec![d, 1]));
        }
        Variant::Concat => {
            out.push(("head.w_fc1".into(), vec![config.num_patches() * d, d]));
            bn(&mut out, "bn_1");
            out.push(("head.w_fc2".into(), vec![d, d]));
            bn(&mut out, "bn_2");
            bn(&mut out, "bn_f");
            out.push(("head.w_c".into(), vec![d, 1]));
        }
    }
    out
}

impl ModelWeights {
    /// Every tensor under its canonical name, in container order.
    pub fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out: Vec<(String, &Tensor)> = vec![
            ("patch_proj".into(), &self.patch_proj),
            ("pos_embed".into(), &self.pos_embed),
        ];
        if let Some(q) = &self.quality_token {
            out.push(("quality_token".into(), q));
        }
        for (i, b) in self.blocks.iter().enumerate() {
            let l = i + 1;
            let params = [
                &b.ln1_gamma,
                &b.ln1_beta,
                &b.w_q,
                &b.w_k,
                &b.w_v,
                &b.w_o,
                &b.w_1,
                &b.b_1,
                &b.w_2,
                &b.b_2,
                &b.ln2_gamma,
                &b.ln2_beta,
            ];
            for (p, t) in BLOCK_PARAMS.iter().zip(params) {
                out.push((format!("blocks.{l}.{p}"), t));
            }
        }
        fn bn<'a>(out: &mut Vec<(String, &'a Tensor)>, prefix: &str, p: &'a BatchNormParams) {
            for (name, t) in BN_PARAMS.iter().zip([&p.mean, &p.var, &p.gamma, &p.beta]) {
                out.push((format!("head.{prefix}.{name}"), t));
            }
        }
        match &self.head {
            HeadWeights::Token { bn: p, w_t } => {
                bn(&mut out, "bn", p);
                out.push(("head.w_t".into(), w_t));
            }
            HeadWeights::Concat {
                w_fc1,
                bn_1,
                w_fc2,
                bn_2,
                bn_f,
                w_c,
            } => {
                out.push(("head.w_fc1".into(), w_fc1));
                bn(&mut out, "bn_1", bn_1);
                out.push(("head.w_fc2".into(), w_fc2));
                bn(&mut out, "bn_2", bn_2);
                bn(&mut out, "bn_f", bn_f);
                out.push(("head.w_c".into(), w_c));
            }
        }
        out
    }

    /// Assembles weights from canonically named tensors. Every manifest entry
    /// must be present with its exact shape; extra names are rejected.
    pub fn from_named(config: VitConfig, mut tensors: HashMap<String, Tensor>) -> Result<Self> {
        config.validate()?;
        for (name, shape) in tensor_manifest(&config) {
            match tensors.get(&name) {
                None => return Err(Error::MissingTensor { name }),
                Some(t) if t.shape() != shape => {
                    return Err(Error::TensorShape {
                        name,
                        expected: shape,
                        found: t.shape().to_vec(),
                    })
                }
                Some(_) => {}
            }
        }
        fn take_from(tensors: &mut HashMap<String, Tensor>, name: &str) -> Tensor {
            tensors.remove(name).expect("checked against manifest")
        }
        fn bn_from(tensors: &mut HashMap<String, Tensor>, prefix: &str) -> BatchNormParams {
            let mut p = |n: &str| take_from(tensors, &format!("head.{prefix}.{n}"));
            BatchNormParams {
                mean: p("mean"),
                var: p("var"),
                gamma: p("gamma"),
                beta: p("beta"),
            }
        }
        let mut take = |name: &str| take_from(&mut tensors, name);
        let patch_proj = take("patch_proj");
        let pos_embed = take("pos_embed");
        let quality_token = (config.variant == Variant::Token).then(|| take("quality_token"));
        let mut blocks = Vec::with_capacity(config.blocks);
        for l in 1..=config.blocks {
            let mut p = |n: &str| take(&format!("blocks.{l}.{n}"));
            blocks.push(BlockWeights {
                ln1_gamma: p("ln1.gamma"),
                ln1_beta: p("ln1.beta"),
                w_q: p("w_q"),
                w_k: p("w_k"),
                w_v: p("w_v"),
                w_o: p("w_o"),
                w_1: p("w_1"),
                b_1: p("b_1"),
                w_2: p("w_2"),
                b_2: p("b_2"),
                ln2_gamma: p("ln2.gamma"),
                ln2_beta: p("ln2.beta"),
            });
        }
        let head = match config.variant {
            Variant::Token => HeadWeights::Token {
                bn: bn_from(&mut tensors, "bn"),
                w_t: take_from(&mut tensors, "head.w_t"),
            },
            Variant::Concat => HeadWeights::Concat {
                w_fc1: take_from(&mut tensors, "head.w_fc1"),
                bn_1: bn_from(&mut tensors, "bn_1"),
                w_fc2: take_from(&mut tensors, "head.w_fc2"),
                bn_2: bn_from(&mut tensors, "bn_2"),
                bn_f: bn_from(&mut tensors, "bn_f"),
                w_c: take_from(&mut tensors, "head.w_c"),
            },
        };
        if let Some(name) = tensors.into_keys().min() {
            return Err(Error::UnexpectedTensor { name });
        }
        let weights = ModelWeights {
            config,
            patch_proj,
            pos_embed,
            quality_token,
            blocks,
            head,
        };
        weights.validate()?;
        Ok(weights)
    }

    /// Checks shapes against the config, finiteness, and batch-norm variances.
    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        if self.head.variant() != self.config.variant {
            return Err(Error::VariantMismatch {
                expected: self.config.variant.tag(),
                found: self.head.variant().tag(),
            });
        }
        if self.blocks.len() != self.config.blocks {
            return Err(Error::InvalidWeights(format!(
                "{} blocks present, config declares {}",
                self.blocks.len(),
                self.config.blocks
            )));
        }
        if self.quality_token.is_some() != (self.config.variant == Variant::Token) {
            return Err(match self.config.variant {
                Variant::Token => Error::MissingTensor {
                    name: "quality_token".into(),
                },
                Variant::Concat => Error::UnexpectedTensor {
                    name: "quality_token".into(),
                },
            });
        }
        let manifest = tensor_manifest(&self.config);
        for ((name, shape), (_, t)) in manifest.into_iter().zip(self.named_tensors()) {
            if t.shape() != shape {
                return Err(Error::TensorShape {
                    name,
                    expected: shape,
                    found: t.shape().to_vec(),
                });
            }
            if !t.is_finite() {
                return Err(Error::NonFinite { name });
            }
            if name.ends_with(".var") && t.data().iter().any(|&v| v < 0.0) {
                return Err(Error::InvalidWeights(format!(
                    "`{name}` has a negative variance"
                )));
            }
        }
        Ok(())
    }
}

/// Serializes a container. Output bytes depend only on the inputs.
pub fn encode_container(container: &Container) -> Result<Vec<u8>> {
    let weights = &container.weights;
    weights.validate()?;
    let mut entries = Vec::new();
    let mut offset = 0u64;
    for (name, t) in weights.named_tensors() {
        entries.push(TensorEntry {
            name,
            shape: t.shape().to_vec(),
            offset,
        });
        offset += 4 * t.len() as u64;
    }
    let header = Header {
        config: weights.config.clone(),
        preprocess: container.preprocess.clone(),
        tensors: entries,
    };
    let json = serde_json::to_vec(&header).map_err(|e| Error::BadHeader(e.to_string()))?;
    let mut out = Vec::with_capacity(PREAMBLE + json.len() + offset as usize);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for (_, t) in weights.named_tensors() {
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

/// Parses and fully validates a container held in memory.
pub fn decode_container(bytes: &[u8], origin: &Path) -> Result<Container> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(Error::BadMagic {
            path: origin.to_path_buf(),
        });
    }
    if bytes.len() < PREAMBLE {
        return Err(Error::BadHeader("file ends inside the preamble".into()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return Err(Error::VersionMismatch {
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    let header_len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes"));
    let available = (bytes.len() - PREAMBLE) as u64;
    if header_len > available {
        return Err(Error::BadHeader(format!(
            "header length {header_len} exceeds the {available} bytes that follow"
        )));
    }
    let payload_start = PREAMBLE + header_len as usize;
    let header: Header = serde_json::from_slice(&bytes[PREAMBLE..payload_start])
        .map_err(|e| Error::BadHeader(e.to_string()))?;
    header
        .config
        .validate()
        .map_err(|e| Error::BadHeader(format!("invalid config: {e}")))?;
    let payload = &bytes[payload_start..];
    let payload_len = payload.len() as u64;

    let expected: BTreeMap<String, Vec<usize>> =
        tensor_manifest(&header.config).into_iter().collect();
    let mut seen = HashMap::new();
    for entry in &header.tensors {
        if seen.insert(entry.name.as_str(), ()).is_some() {
            return Err(Error::DuplicateTensor {
                name: entry.name.clone(),
            });
        }
        let Some(shape) = expected.get(&entry.name) else {
            return Err(Error::UnexpectedTensor {
                name: entry.name.clone(),
            });
        };
        if &entry.shape != shape {
            return Err(Error::TensorShape {
                name: entry.name.clone(),
                expected: shape.clone(),
                found: entry.shape.clone(),
            });
        }
        let len = 4 * entry.shape.iter().product::<usize>() as u64;
        if !entry.offset.is_multiple_of(4)
            || entry
                .offset
                .checked_add(len)
                .is_none_or(|e| e > payload_len)
        {
            return Err(Error::OutOfBounds {
                name: entry.name.clone(),
                offset: entry.offset,
                len,
                payload: payload_len,
            });
        }
    }
    for name in expected.keys() {
        if !seen.contains_key(name.as_str()) {
            return Err(Error::MissingTensor { name: name.clone() });
        }
    }
    let mut spans: Vec<&TensorEntry> = header.tensors.iter().collect();
    spans.sort_by_key(|e| e.offset);
    let mut covered = 0u64;
    for e in &spans {
        if e.offset < covered {
            return Err(Error::Overlap {
                name: e.name.clone(),
                offset: e.offset,
            });
        }
        covered = e.offset + 4 * e.shape.iter().product::<usize>() as u64;
    }
    let tensor_bytes: u64 = spans
        .iter()
        .map(|e| 4 * e.shape.iter().product::<usize>() as u64)
        .sum();
    if tensor_bytes != payload_len {
        return Err(Error::BadHeader(format!(
            "payload has {} bytes not covered by any tensor",
            payload_len - tensor_bytes
        )));
    }

    let mut tensors = HashMap::with_capacity(header.tensors.len());
    for e in header.tensors {
        let start = e.offset as usize;
        let count: usize = e.shape.iter().product();
        let data: Vec<f32> = payload[start..start + 4 * count]
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
            .collect();
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { name: e.name });
        }
        tensors.insert(e.name, Tensor::new(e.shape, data)?);
    }
    let weights = ModelWeights::from_named(header.config, tensors)?;
    Ok(Container {
        weights,
        preprocess: header.preprocess,
    })
}

pub fn load_container(path: impl AsRef<Path>) -> Result<Container> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_container(&bytes, path)
}

pub fn load_weights(path: impl AsRef<Path>) -> Result<ModelWeights> {
    load_container(path).map(|c| c.weights)
}

pub fn save_container(container: &Container, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_container(container)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Saves with the default preprocessing record.
pub fn save_weights(weights: &ModelWeights, path: impl AsRef<Path>) -> Result<()> {
    save_container(
        &Container {
            weights: weights.clone(),
            preprocess: Preprocess::default(),
        },
        path,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{self, SynthKind};

    fn small(variant: Variant) -> VitConfig {
        VitConfig {
            image_height: 4,
            image_width: 4,
            patch_size: 2,
            channels: 1,
            token_dim: 4,
            heads: 2,
            blocks: 2,
            variant,
            layer_norm_eps: 1e-6,
            batch_norm_eps: 1e-5,
        }
    }

    fn encoded(variant: Variant) -> (ModelWeights, Vec<u8>) {
        let w = synth::build(&small(variant), SynthKind::Random, 4);
        let bytes = encode_container(&Container {
            weights: w.clone(),
            preprocess: Preprocess::default(),
        })
        .unwrap();
        (w, bytes)
    }

    fn split(bytes: &[u8]) -> (serde_json::Value, Vec<u8>) {
        let hl = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let header = serde_json::from_slice(&bytes[16..16 + hl]).unwrap();
        (header, bytes[16 + hl..].to_vec())
    }

    fn join(header: &serde_json::Value, payload: &[u8]) -> Vec<u8> {
        let json = serde_json::to_vec(header).unwrap();
        let mut out = b"EXFQ".to_vec();
        out.extend_from_slice(&1u32.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        out.extend_from_slice(payload);
        out
    }

    fn decode(bytes: &[u8]) -> Result<Container> {
        decode_container(bytes, Path::new("mem"))
    }

    #[test]
    fn round_trip_both_variants() {
        for variant in [Variant::Token, Variant::Concat] {
            let (w, bytes) = encoded(variant);
            let back = decode(&bytes).unwrap();
            assert_eq!(back.weights, w);
            let again = encode_container(&back).unwrap();
            assert_eq!(again, bytes);
        }
    }

    #[test]
    fn manifest_matches_named_tensors() {
        for variant in [Variant::Token, Variant::Concat] {
            let cfg = small(variant);
            let w = synth::build(&cfg, SynthKind::Random, 0);
            let names: Vec<String> = w.named_tensors().into_iter().map(|(n, _)| n).collect();
            let manifest: Vec<String> = tensor_manifest(&cfg).into_iter().map(|(n, _)| n).collect();
            assert_eq!(names, manifest);
        }
        let names: Vec<String> = tensor_manifest(&small(Variant::Token))
            .into_iter()
            .map(|(n, _)| n)
            .collect();
        assert!(names.contains(&"blocks.1.w_q".to_string()));
        assert!(names.contains(&"blocks.2.ln2.beta".to_string()));
        assert!(names.contains(&"head.w_t".to_string()));
    }

    #[test]
    fn bad_magic_and_version() {
        let (_, mut bytes) = encoded(Variant::Token);
        bytes[0] = b'X';
        assert!(matches!(decode(&bytes), Err(Error::BadMagic { .. })));
        let (_, mut bytes) = encoded(Variant::Token);
        bytes[4] = 9;
        assert!(matches!(
            decode(&bytes),
            Err(Error::VersionMismatch { found: 9, .. })
        ));
        assert!(matches!(decode(b"EX"), Err(Error::BadMagic { .. })));
    }

    #[test]
    fn truncated_payload_names_first_tensor_out_of_bounds() {
        let (_, bytes) = encoded(Variant::Concat);
        let (header, payload) = split(&bytes);
        let cut = &payload[..payload.len() - 4];
        let last = header["tensors"].as_array().unwrap().last().unwrap()["name"]
            .as_str()
            .unwrap()
            .to_string();
        match decode(&join(&header, cut)) {
            Err(Error::OutOfBounds { name, .. }) => assert_eq!(name, last),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn missing_duplicate_and_unexpected_tensors() {
        let (_, bytes) = encoded(Variant::Token);
        let (header, payload) = split(&bytes);

        let mut h = header.clone();
        let list = h["tensors"].as_array_mut().unwrap();
        list.retain(|e| e["name"] != "quality_token");
        match decode(&join(&h, &payload)) {
            Err(Error::MissingTensor { name }) => assert_eq!(name, "quality_token"),
            other => panic!("unexpected {other:?}"),
        }

        let mut h = header.clone();
        let list = h["tensors"].as_array_mut().unwrap();
        let first = list[0].clone();
        list.push(first);
        assert!(matches!(
            decode(&join(&h, &payload)),
            Err(Error::DuplicateTensor { .. })
        ));

        let mut h = header.clone();
        h["tensors"][0]["name"] = "mystery".into();
        assert!(matches!(
            decode(&join(&h, &payload)),
            Err(Error::UnexpectedTensor { .. })
        ));
    }

    #[test]
    fn shape_overlap_nonfinite_and_trailing_bytes() {
        let (_, bytes) = encoded(Variant::Token);
        let (header, payload) = split(&bytes);

        let mut h = header.clone();
        h["tensors"][0]["shape"] = serde_json::json!([3, 3]);
        assert!(matches!(
            decode(&join(&h, &payload)),
            Err(Error::TensorShape { .. })
        ));

        let mut h = header.clone();
        h["tensors"][1]["offset"] = 0.into();
        assert!(matches!(
            decode(&join(&h, &payload)),
            Err(Error::Overlap { .. }) | Err(Error::BadHeader(_))
        ));

        let mut p = payload.clone();
        p[0..4].copy_from_slice(&f32::NAN.to_le_bytes());
        match decode(&join(&header, &p)) {
            Err(Error::NonFinite { name }) => assert_eq!(name, "patch_proj"),
            other => panic!("unexpected {other:?}"),
        }

        let mut p = payload.clone();
        p.extend_from_slice(&[0, 0, 0, 0]);
        assert!(matches!(
            decode(&join(&header, &p)),
            Err(Error::BadHeader(_))
        ));
    }

    #[test]
    fn negative_variance_rejected() {
        let mut w = synth::build(&small(Variant::Token), SynthKind::Random, 1);
        if let HeadWeights::Token { bn, .. } = &mut w.head {
            bn.var.data_mut()[0] = -1.0;
        }
        assert!(matches!(w.validate(), Err(Error::InvalidWeights(_))));
    }

    #[test]
    fn preprocess_survives_round_trip() {
        let w = synth::build(&small(Variant::Token), SynthKind::Random, 2);
        let c = Container {
            weights: w,
            preprocess: Preprocess {
                pixel_mean: 0.4,
                pixel_std: 0.25,
                channel_order: "BGR".into(),
            },
        };
        let back = decode(&encode_container(&c).unwrap()).unwrap();
        assert_eq!(back, c);
    }
}
