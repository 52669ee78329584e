use std::fmt::Write;
use std::fs;

use exfiqa::cost::cost_report;
use exfiqa::io::{load_container, save_weights, tensor_manifest, write_ppm};
use exfiqa::synth::{self, SynthKind};
use exfiqa::{Error, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::args::{
    FlopsArgs, InspectArgs, SynthImageArgs, SynthKindArg, SynthWeightsArgs, TableFormat,
};

pub fn flops(args: &FlopsArgs) -> Result<String> {
    let cfg = args.geometry.config(args.variant);
    let r = cost_report(&cfg)?;
    let mut out = String::new();
    match args.format {
        TableFormat::Text => {
            let _ = writeln!(out, "variant {}", cfg.variant.tag());
            let _ = writeln!(
                out,
                "{:<8} {:>9} {:>7} {:>9}",
                "exit", "GFLOPs", "ratio", "params(M)"
            );
            for l in 0..cfg.blocks {
                let _ = writeln!(
                    out,
                    "{:<8} {:>9.2} {:>7.2} {:>9.2}",
                    l + 1,
                    r.flops[l],
                    r.ratio[l],
                    r.params[l]
                );
            }
            let _ = writeln!(
                out,
                "{:<8} {:>9.2} {:>7.2} {:>9.2}",
                "fusion", r.fusion_flops, r.fusion_ratio, r.fusion_params
            );
        }
        TableFormat::Csv => {
            out.push_str("exit,gflops,ratio,params_m\n");
            for l in 0..cfg.blocks {
                let _ = writeln!(
                    out,
                    "{},{:.6},{:.6},{:.6}",
                    l + 1,
                    r.flops[l],
                    r.ratio[l],
                    r.params[l]
                );
            }
            let _ = writeln!(
                out,
                "fusion,{:.6},{:.6},{:.6}",
                r.fusion_flops, r.fusion_ratio, r.fusion_params
            );
        }
    }
    Ok(out)
}

pub fn inspect(args: &InspectArgs) -> Result<String> {
    let c = load_container(&args.path)?;
    let cfg = &c.weights.config;
    let named = c.weights.named_tensors();
    let total: usize = named.iter().map(|(_, t)| t.len()).sum();
    let mut out = String::new();
    let _ = writeln!(out, "variant        {}", cfg.variant.tag());
    let _ = writeln!(
        out,
        "input          {}x{}x{}, patch {}",
        cfg.image_height, cfg.image_width, cfg.channels, cfg.patch_size
    );
    let _ = writeln!(
        out,
        "transformer    {} blocks, dim {}, {} heads, {} tokens",
        cfg.blocks,
        cfg.token_dim,
        cfg.heads,
        cfg.tokens()
    );
    let _ = writeln!(
        out,
        "eps            layer norm {:e}, batch norm {:e}",
        cfg.layer_norm_eps, cfg.batch_norm_eps
    );
    let _ = writeln!(
        out,
        "preprocess     (v/255 - {}) / {}, {}",
        c.preprocess.pixel_mean, c.preprocess.pixel_std, c.preprocess.channel_order
    );
    let _ = writeln!(out, "tensors        {} ({} values)", named.len(), total);
    if args.tensors {
        for (name, t) in named {
            let _ = writeln!(out, "  {name:<24} {:?}", t.shape());
        }
    }
    Ok(out)
}

pub fn synth_weights(args: &SynthWeightsArgs) -> Result<String> {
    let cfg = args.geometry.config(args.variant);
    cfg.validate()?;
    let kind = match args.kind {
        SynthKindArg::Random => SynthKind::Random,
        SynthKindArg::Identity => SynthKind::Identity,
    };
    let w = synth::build(&cfg, kind, args.seed);
    save_weights(&w, &args.out)?;
    Ok(format!(
        "wrote {} ({} tensors)\n",
        args.out.display(),
        tensor_manifest(&cfg).len()
    ))
}

pub fn synth_image(args: &SynthImageArgs) -> Result<String> {
    if args.size == 0 {
        return Err(Error::Config("--size must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let pixels: Vec<u8> = (0..args.size * args.size * 3).map(|_| rng.gen()).collect();
    if let Some(dir) = args.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::Io {
            path: dir.to_path_buf(),
            source: e,
        })?;
    }
    write_ppm(&args.out, args.size, args.size, &pixels)?;
    Ok(format!("wrote {}\n", args.out.display()))
}
