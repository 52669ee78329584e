use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use exfiqa::io::MapFormat;
use exfiqa::{FusionKind, Variant, VitConfig};

#[derive(Debug, Parser)]
#[command(
    name = "exfiqa",
    version,
    about = "Early-exit face image quality assessment"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Score images at one or every exit, optionally fusing the exits.
    Infer(InferArgs),
    /// EDC, pAUC and TAR@FAR from quality scores and labelled comparisons.
    Eval(EvalArgs),
    /// Per-exit compute and parameter table.
    Flops(FlopsArgs),
    /// Inspect or generate weight containers.
    #[command(subcommand)]
    Weights(WeightsCommand),
    /// Generate test images.
    #[command(subcommand)]
    Image(ImageCommand),
}

#[derive(Debug, Subcommand)]
pub enum WeightsCommand {
    /// Print the config, preprocessing and tensor manifest of a container.
    Inspect(InspectArgs),
    /// Write a seeded synthetic container.
    Synth(SynthWeightsArgs),
}

#[derive(Debug, Subcommand)]
pub enum ImageCommand {
    /// Write a seeded random PPM image.
    Synth(SynthImageArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Text,
    Csv,
    Jsonl,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitSelection {
    One(usize),
    All,
}

fn parse_exit(s: &str) -> Result<ExitSelection, String> {
    if s.eq_ignore_ascii_case("all") {
        return Ok(ExitSelection::All);
    }
    match s.parse::<usize>() {
        Ok(l) if l >= 1 => Ok(ExitSelection::One(l)),
        _ => Err(format!("`{s}` is not a positive exit index or `all`")),
    }
}

/// `None` means no fusion.
#[derive(Debug, Clone, PartialEq)]
pub struct Fusion(pub Option<FusionKind>);

#[derive(Debug, Clone, PartialEq)]
pub struct Rates(pub Vec<f64>);

fn parse_fusion(s: &str) -> Result<Fusion, String> {
    parse_fusion_kind(s).map(Fusion)
}

fn parse_fusion_kind(s: &str) -> Result<Option<FusionKind>, String> {
    let lower = s.to_ascii_lowercase();
    match lower.as_str() {
        "none" => return Ok(None),
        "uniform" => return Ok(Some(FusionKind::Uniform)),
        "weighted" | "depth-weighted" => return Ok(Some(FusionKind::DepthWeighted)),
        _ => {}
    }
    if let Some(l) = lower.strip_prefix("one-hot:") {
        return l
            .parse()
            .map(|l| Some(FusionKind::OneHot(l)))
            .map_err(|_| format!("bad one-hot exit `{l}`"));
    }
    if let Some(list) = lower.strip_prefix("custom:") {
        return list
            .split(',')
            .map(|w| w.trim().parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .map(|w| Some(FusionKind::Custom(w)))
            .map_err(|_| format!("bad custom weight list `{list}`"));
    }
    Err(format!(
        "unknown fusion `{s}` (none, uniform, weighted, one-hot:L, custom:w1,...,wL)"
    ))
}

fn parse_variant(s: &str) -> Result<Variant, String> {
    s.parse().map_err(|e: exfiqa::Error| e.to_string())
}

fn parse_map_format(s: &str) -> Result<MapFormat, String> {
    s.parse().map_err(|e: exfiqa::Error| e.to_string())
}

#[derive(Debug, Args)]
pub struct InferArgs {
    /// Weight container.
    #[arg(long)]
    pub weights: PathBuf,
    /// Exit to score (1..L) or `all`. Defaults to the last block.
    #[arg(long, value_parser = parse_exit)]
    pub exit: Option<ExitSelection>,
    /// Fusion over all exits; needs `--exit all`.
    #[arg(long, value_parser = parse_fusion, default_value = "none")]
    pub fusion: Fusion,
    /// Min-max rescale each exit across the input images before fusion.
    #[arg(long)]
    pub normalize_exits: bool,
    /// Fail unless the container holds this variant (t or c).
    #[arg(long, value_parser = parse_variant)]
    pub variant: Option<Variant>,
    /// Write one attention map per executed block into this directory.
    #[arg(long)]
    pub attention_out: Option<PathBuf>,
    /// Attention map file format: csv or pgm.
    #[arg(long, value_parser = parse_map_format, default_value = "csv")]
    pub attention_format: MapFormat,
    /// Also write `sample_id,quality` rows (fused score, else the single exit).
    #[arg(long)]
    pub scores_out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Text)]
    pub format: Format,
    /// PPM (P6) or EXFT tensor images.
    #[arg(required = true)]
    pub images: Vec<PathBuf>,
}

fn parse_rates(s: &str) -> Result<Rates, String> {
    s.split(',')
        .map(|v| {
            v.trim()
                .parse::<f64>()
                .map_err(|_| format!("`{v}` is not a number"))
        })
        .collect::<Result<_, _>>()
        .map(Rates)
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// `sample_id,quality` CSV.
    #[arg(long)]
    pub scores: PathBuf,
    /// `id_a,id_b,similarity,label` CSV, label G or I.
    #[arg(long)]
    pub pairs: PathBuf,
    /// Comma-separated FMR targets for the decision threshold.
    #[arg(long, value_parser = parse_rates, default_value = "1e-3,1e-4")]
    pub fmr: Rates,
    /// Upper end of the discard range for pAUC.
    #[arg(long, default_value_t = 0.3)]
    pub max_discard: f64,
    /// Comma-separated FAR targets for a TAR table.
    #[arg(long, value_parser = parse_rates)]
    pub far: Option<Rates>,
    /// Integrate only the FNMR above its no-discard value.
    #[arg(long)]
    pub subtract_initial: bool,
    #[arg(long, value_enum, default_value_t = Format::Text)]
    pub format: Format,
}

#[derive(Debug, Args)]
pub struct Geometry {
    #[arg(long, default_value_t = 96)]
    pub image_size: usize,
    #[arg(long, default_value_t = 8)]
    pub patch_size: usize,
    #[arg(long, default_value_t = 3)]
    pub channels: usize,
    #[arg(long, default_value_t = 512)]
    pub dim: usize,
    #[arg(long, default_value_t = 8)]
    pub heads: usize,
    #[arg(long, default_value_t = 12)]
    pub blocks: usize,
}

impl Geometry {
    pub fn config(&self, variant: Variant) -> VitConfig {
        VitConfig {
            image_height: self.image_size,
            image_width: self.image_size,
            patch_size: self.patch_size,
            channels: self.channels,
            token_dim: self.dim,
            heads: self.heads,
            blocks: self.blocks,
            variant,
            ..VitConfig::standard(variant)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TableFormat {
    Text,
    Csv,
}

#[derive(Debug, Args)]
pub struct FlopsArgs {
    /// t (quality token) or c (concatenated patches).
    #[arg(long, value_parser = parse_variant)]
    pub variant: Variant,
    #[command(flatten)]
    pub geometry: Geometry,
    #[arg(long, value_enum, default_value_t = TableFormat::Text)]
    pub format: TableFormat,
}

#[derive(Debug, Args)]
pub struct InspectArgs {
    pub path: PathBuf,
    /// List every tensor, not just the summary.
    #[arg(long)]
    pub tensors: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SynthKindArg {
    Random,
    Identity,
}

#[derive(Debug, Args)]
pub struct SynthWeightsArgs {
    #[arg(long, value_parser = parse_variant)]
    pub variant: Variant,
    #[arg(long, value_enum, default_value_t = SynthKindArg::Random)]
    pub kind: SynthKindArg,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub geometry: Geometry,
    /// Output container path.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SynthImageArgs {
    #[arg(long, default_value_t = 96)]
    pub size: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output PPM path.
    #[arg(long)]
    pub out: PathBuf,
}
