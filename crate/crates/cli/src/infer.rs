use std::collections::HashSet;
use std::fmt::Write;
use std::fs;
use std::path::{Path, PathBuf};
use std::thread;

use exfiqa::backbone::extract_attention_map;
use exfiqa::exits::{exit_score_c, exit_score_t, min_max_normalize_exits};
use exfiqa::io::{load_container, read_image_for, write_attention_map, write_scores, Container};
use exfiqa::{
    forward_with, fuse_scores, make_fusion, score_all_exits, Error, ForwardOptions, FusionKind,
    Result, Tensor, Variant,
};

use crate::args::{ExitSelection, Format, InferArgs};
use crate::output::{csv_field, json_string, score};

struct Scored {
    /// (exit, score) in exit order.
    exits: Vec<(usize, f64)>,
    maps: Vec<Tensor>,
}

fn thread_count(jobs: usize) -> Result<usize> {
    let cap = match std::env::var("EXFIQA_THREADS") {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n >= 1 => n,
            _ => {
                return Err(Error::Config(format!(
                    "EXFIQA_THREADS must be a positive integer, got `{v}`"
                )))
            }
        },
        Err(_) => thread::available_parallelism().map_or(1, |n| n.get()),
    };
    Ok(cap.min(jobs).max(1))
}

fn score_image(
    path: &Path,
    container: &Container,
    selection: ExitSelection,
    want_maps: bool,
) -> Result<Scored> {
    let weights = &container.weights;
    let cfg = &weights.config;
    let image = read_image_for(path, cfg, &container.preprocess)?;
    let depth = match selection {
        ExitSelection::One(l) => l,
        ExitSelection::All => cfg.blocks,
    };
    let series = forward_with(
        &image,
        weights,
        &ForwardOptions {
            depth: Some(depth),
            keep_head_attention: false,
        },
    )?;
    let maps = if want_maps {
        (1..=depth)
            .map(|b| extract_attention_map(&series, b, cfg))
            .collect::<Result<_>>()?
    } else {
        Vec::new()
    };
    let eps = cfg.batch_norm_eps;
    let exits = match selection {
        ExitSelection::One(l) => {
            let s = match cfg.variant {
                Variant::Token => exit_score_t(&series, l, &weights.head, eps)?,
                Variant::Concat => exit_score_c(&series, l, &weights.head, eps)?,
            };
            vec![(l, s)]
        }
        ExitSelection::All => {
            let series = score_all_exits(series, &weights.head, eps)?;
            series
                .exit_scores
                .into_iter()
                .enumerate()
                .map(|(i, s)| (i + 1, s))
                .collect()
        }
    };
    Ok(Scored { exits, maps })
}

/// Scores every image, in parallel, returning results in input order.
fn score_all(
    images: &[PathBuf],
    container: &Container,
    selection: ExitSelection,
    want_maps: bool,
) -> Result<Vec<Scored>> {
    let workers = thread_count(images.len())?;
    let mut slots: Vec<Option<Result<Scored>>> = (0..images.len()).map(|_| None).collect();
    thread::scope(|scope| {
        let chunk = images.len().div_ceil(workers);
        for (paths, out) in images.chunks(chunk).zip(slots.chunks_mut(chunk)) {
            scope.spawn(move || {
                for (p, slot) in paths.iter().zip(out) {
                    *slot = Some(score_image(p, container, selection, want_maps));
                }
            });
        }
    });
    slots
        .into_iter()
        .map(|s| s.expect("every slot filled"))
        .collect()
}

fn map_paths(images: &[PathBuf], dir: &Path) -> Result<Vec<PathBuf>> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for p in images {
        let stem = p
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "image".into());
        if !seen.insert(stem.clone()) {
            return Err(Error::Config(format!(
                "two inputs share the file stem `{stem}`; attention maps would collide"
            )));
        }
        out.push(dir.join(stem));
    }
    Ok(out)
}

pub fn run(args: &InferArgs) -> Result<String> {
    let container = load_container(&args.weights)?;
    let cfg = &container.weights.config;
    if let Some(v) = args.variant {
        if v != cfg.variant {
            return Err(Error::VariantMismatch {
                expected: v.tag(),
                found: cfg.variant.tag(),
            });
        }
    }
    let selection = args.exit.unwrap_or(ExitSelection::One(cfg.blocks));
    if let ExitSelection::One(l) = selection {
        if l > cfg.blocks {
            return Err(Error::Config(format!(
                "exit {l} outside 1..={}",
                cfg.blocks
            )));
        }
    }
    let fusion = match (&args.fusion.0, selection) {
        (None, _) => None,
        (Some(kind), ExitSelection::All) => Some((kind, make_fusion(kind, cfg.blocks)?)),
        (Some(_), ExitSelection::One(_)) => {
            return Err(Error::Config("--fusion requires --exit all".into()))
        }
    };
    if args.scores_out.is_some() && selection == ExitSelection::All && fusion.is_none() {
        return Err(Error::Config(
            "--scores-out needs a single score per image: pick one exit or a fusion".into(),
        ));
    }
    let bases = match &args.attention_out {
        Some(dir) => {
            fs::create_dir_all(dir).map_err(|e| Error::Io {
                path: dir.clone(),
                source: e,
            })?;
            Some(map_paths(&args.images, dir)?)
        }
        None => None,
    };

    let results = score_all(&args.images, &container, selection, bases.is_some())?;

    if let Some(bases) = &bases {
        let ext = args.attention_format.extension();
        for (r, base) in results.iter().zip(bases) {
            for (b, map) in r.maps.iter().enumerate() {
                let mut name = base.clone().into_os_string();
                name.push(format!(".block{:02}.{ext}", b + 1));
                write_attention_map(map, PathBuf::from(name), args.attention_format)?;
            }
        }
    }

    let mut per_image: Vec<Vec<f64>> = results
        .iter()
        .map(|r| r.exits.iter().map(|&(_, s)| s).collect())
        .collect();
    if args.normalize_exits {
        min_max_normalize_exits(&mut per_image);
    }
    let fused: Vec<Option<f64>> = per_image
        .iter()
        .map(|s| {
            fusion
                .as_ref()
                .map(|(_, spec)| fuse_scores(s, spec))
                .transpose()
        })
        .collect::<Result<_>>()?;

    if let Some(path) = &args.scores_out {
        let rows: Vec<(String, f64)> = args
            .images
            .iter()
            .zip(per_image.iter().zip(&fused))
            .map(|(p, (s, f))| {
                let id = p.file_stem().map_or_else(
                    || p.display().to_string(),
                    |s| s.to_string_lossy().into_owned(),
                );
                (id, f.unwrap_or(s[0]))
            })
            .collect();
        write_scores(path, &rows)?;
    }

    let label = fusion.as_ref().map(|(k, _)| fusion_label(k));
    let mut out = String::new();
    if args.format == Format::Csv {
        out.push_str("image,exit,score\n");
    }
    for ((path, r), (scores, f)) in args
        .images
        .iter()
        .zip(&results)
        .zip(per_image.iter().zip(&fused))
    {
        let name = path.display().to_string();
        let exits: Vec<(usize, f64)> = r
            .exits
            .iter()
            .map(|&(l, _)| l)
            .zip(scores.iter().copied())
            .collect();
        match args.format {
            Format::Text => {
                for (l, s) in &exits {
                    let _ = writeln!(out, "{name}\texit {l}\t{}", score(*s));
                }
                if let (Some(f), Some(label)) = (f, &label) {
                    let _ = writeln!(out, "{name}\tfused {label}\t{}", score(*f));
                }
            }
            Format::Csv => {
                let field = csv_field(&name);
                for (l, s) in &exits {
                    let _ = writeln!(out, "{field},{l},{}", score(*s));
                }
                if let Some(f) = f {
                    let _ = writeln!(out, "{field},fused,{}", score(*f));
                }
            }
            Format::Jsonl => {
                let list: Vec<String> = exits
                    .iter()
                    .map(|(l, s)| format!("{{\"exit\":{l},\"score\":{}}}", score(*s)))
                    .collect();
                let _ = write!(
                    out,
                    "{{\"image\":{},\"exits\":[{}]",
                    json_string(&name),
                    list.join(",")
                );
                if let (Some(f), Some(label)) = (f, &label) {
                    let _ = write!(
                        out,
                        ",\"fusion\":{},\"fused\":{}",
                        json_string(label),
                        score(*f)
                    );
                }
                out.push_str("}\n");
            }
        }
    }
    Ok(out)
}

fn fusion_label(kind: &FusionKind) -> String {
    match kind {
        FusionKind::Uniform => "uniform".into(),
        FusionKind::DepthWeighted => "weighted".into(),
        FusionKind::OneHot(l) => format!("one-hot:{l}"),
        FusionKind::Custom(_) => "custom".into(),
    }
}
