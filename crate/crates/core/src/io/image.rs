//! Input images: binary PPM (`P6`, maxval 255) or a raw f32 tensor file.
//!
//! Raw tensor layout: magic `b"EXFT"`, u32 LE rank, rank × u32 LE dims,
//! then the row-major values as LE f32. Raw images are `[H, W, C]` and are
//! used as-is, without pixel normalization.

use std::fs;
use std::path::Path;

use crate::config::VitConfig;
use crate::error::{Error, Result};
use crate::io::container::Preprocess;
use crate::numerics::Tensor;

pub const TENSOR_MAGIC: &[u8; 4] = b"EXFT";

fn format_err(path: &Path, msg: impl Into<String>) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        msg: msg.into(),
    }
}

/// Reads an image with the default `(v/255 - 0.5) / 0.5` mapping.
pub fn read_image(path: impl AsRef<Path>) -> Result<Tensor> {
    read_image_with(path, &Preprocess::default())
}

pub fn read_image_with(path: impl AsRef<Path>, preprocess: &Preprocess) -> Result<Tensor> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_image(&bytes, path, preprocess)
}

/// Reads an image and checks it against the model geometry.
pub fn read_image_for(
    path: impl AsRef<Path>,
    config: &VitConfig,
    preprocess: &Preprocess,
) -> Result<Tensor> {
    let path = path.as_ref();
    let image = read_image_with(path, preprocess)?;
    let want = [config.image_height, config.image_width, config.channels];
    if image.shape() != want {
        return Err(format_err(
            path,
            format!(
                "image shape {:?} does not match model input {:?}",
                image.shape(),
                want
            ),
        ));
    }
    Ok(image)
}

pub fn decode_image(bytes: &[u8], path: &Path, preprocess: &Preprocess) -> Result<Tensor> {
    if bytes.starts_with(b"P6") {
        decode_ppm(bytes, path, preprocess)
    } else if bytes.starts_with(TENSOR_MAGIC) {
        let t = decode_tensor(bytes, path)?;
        if t.shape().len() != 3 {
            return Err(format_err(
                path,
                format!("image tensor has rank {}", t.shape().len()),
            ));
        }
        Ok(t)
    } else {
        Err(format_err(path, "not a P6 PPM or EXFT tensor"))
    }
}

struct HeaderCursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl HeaderCursor<'_> {
    fn skip_space(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b == b'#' {
                while self.bytes.get(self.pos).is_some_and(|&c| c != b'\n') {
                    self.pos += 1;
                }
            } else if b.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn number(&mut self) -> Option<usize> {
        self.skip_space();
        let start = self.pos;
        while self.bytes.get(self.pos).is_some_and(u8::is_ascii_digit) {
            self.pos += 1;
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()?
            .parse()
            .ok()
    }
}

fn decode_ppm(bytes: &[u8], path: &Path, preprocess: &Preprocess) -> Result<Tensor> {
    let mut cur = HeaderCursor { bytes, pos: 2 };
    let (Some(width), Some(height), Some(maxval)) = (cur.number(), cur.number(), cur.number())
    else {
        return Err(format_err(path, "malformed PPM header"));
    };
    if maxval != 255 {
        return Err(format_err(path, format!("unsupported PPM maxval {maxval}")));
    }
    if width == 0 || height == 0 {
        return Err(format_err(path, "empty PPM image"));
    }
    if !bytes.get(cur.pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(format_err(path, "malformed PPM header"));
    }
    let pixels = &bytes[cur.pos + 1..];
    let expected = width * height * 3;
    if pixels.len() != expected {
        return Err(format_err(
            path,
            format!("expected {expected} pixel bytes, found {}", pixels.len()),
        ));
    }
    let order = match preprocess.channel_order.as_str() {
        "RGB" => [0, 1, 2],
        "BGR" => [2, 1, 0],
        other => return Err(format_err(path, format!("unknown channel order `{other}`"))),
    };
    let mean = preprocess.pixel_mean as f64;
    let std = preprocess.pixel_std as f64;
    let mut data = Vec::with_capacity(expected);
    for px in pixels.chunks_exact(3) {
        for &c in &order {
            data.push(((px[c] as f64 / 255.0 - mean) / std) as f32);
        }
    }
    Tensor::new(vec![height, width, 3], data)
}

pub fn decode_tensor(bytes: &[u8], path: &Path) -> Result<Tensor> {
    let u32_at = |at: usize| -> Result<usize> {
        bytes
            .get(at..at + 4)
            .map(|b| u32::from_le_bytes(b.try_into().expect("4 bytes")) as usize)
            .ok_or_else(|| format_err(path, "tensor header truncated"))
    };
    if !bytes.starts_with(TENSOR_MAGIC) {
        return Err(format_err(path, "missing EXFT magic"));
    }
    let rank = u32_at(4)?;
    if rank == 0 || rank > 8 {
        return Err(format_err(path, format!("unsupported tensor rank {rank}")));
    }
    let shape = (0..rank)
        .map(|i| u32_at(8 + 4 * i))
        .collect::<Result<Vec<_>>>()?;
    let start = 8 + 4 * rank;
    let count = shape
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| format_err(path, "tensor too large"))?;
    if bytes.len() - start != count.saturating_mul(4) {
        return Err(format_err(
            path,
            format!(
                "expected {} data bytes, found {}",
                count * 4,
                bytes.len() - start
            ),
        ));
    }
    let data: Vec<f32> = bytes[start..]
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().expect("4 bytes")))
        .collect();
    if data.iter().any(|v| !v.is_finite()) {
        return Err(format_err(path, "non-finite value in tensor"));
    }
    Tensor::new(shape, data)
}

pub fn encode_tensor(t: &Tensor) -> Vec<u8> {
    let mut out = TENSOR_MAGIC.to_vec();
    out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
    for &d in t.shape() {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn write_tensor(t: &Tensor, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_tensor(t)).map_err(|e| Error::io(path, e))
}

/// Writes 8-bit RGB pixels (row-major, interleaved) as a binary PPM.
pub fn write_ppm(path: impl AsRef<Path>, width: usize, height: usize, rgb: &[u8]) -> Result<()> {
    let path = path.as_ref();
    if rgb.len() != width * height * 3 {
        return Err(format_err(path, "pixel buffer does not match dimensions"));
    }
    let mut out = format!("P6\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(rgb);
    fs::write(path, out).map_err(|e| Error::io(path, e))
}
