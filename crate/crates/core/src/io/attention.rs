//! Attention map export.
//!
//! CSV keeps full precision (shortest round-trip f32 text). PGM is a 16-bit
//! binary greyscale image, min-max scaled to 0..65535; a constant map is
//! written as mid-grey 32768.

use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::numerics::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MapFormat {
    Csv,
    Pgm,
}

impl MapFormat {
    pub fn extension(self) -> &'static str {
        match self {
            MapFormat::Csv => "csv",
            MapFormat::Pgm => "pgm",
        }
    }
}

impl FromStr for MapFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(MapFormat::Csv),
            "pgm" => Ok(MapFormat::Pgm),
            _ => Err(Error::Config(format!(
                "unknown map format `{s}` (csv or pgm)"
            ))),
        }
    }
}

pub fn encode_attention_map(map: &Tensor, format: MapFormat) -> Result<Vec<u8>> {
    if map.shape().len() != 2 {
        return Err(Error::Dimension {
            op: "attention export",
            left: map.shape().to_vec(),
            right: vec![],
        });
    }
    let (h, w) = (map.rows(), map.cols());
    match format {
        MapFormat::Csv => {
            let mut out = String::new();
            for i in 0..h {
                let row: Vec<String> = map.row(i).iter().map(|v| v.to_string()).collect();
                out.push_str(&row.join(","));
                out.push('\n');
            }
            Ok(out.into_bytes())
        }
        MapFormat::Pgm => {
            let (lo, hi) = map
                .data()
                .iter()
                .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| {
                    (lo.min(v), hi.max(v))
                });
            let mut out = format!("P5\n{w} {h}\n65535\n").into_bytes();
            for &v in map.data() {
                let level = if hi > lo {
                    (((v - lo) as f64 / (hi - lo) as f64) * 65535.0).round() as u16
                } else {
                    32768
                };
                out.extend_from_slice(&level.to_be_bytes());
            }
            Ok(out)
        }
    }
}

pub fn write_attention_map(map: &Tensor, path: impl AsRef<Path>, format: MapFormat) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_attention_map(map, format)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Reads a map written in CSV form.
pub fn read_attention_csv(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut rows: Vec<Vec<f32>> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let row = line
            .split(',')
            .map(|s| s.trim().parse::<f32>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: i as u64 + 1,
                msg: e.to_string(),
            })?;
        rows.push(row);
    }
    let refs: Vec<&[f32]> = rows.iter().map(Vec::as_slice).collect();
    Tensor::from_rows(&refs)
}
