use std::fmt::Write;

use exfiqa::eval::{edc_curve, edc_pauc, tar_at_far, EdcCurve};
use exfiqa::io::read_comparison_set;
use exfiqa::{Error, Result};

use crate::args::{EvalArgs, Format};
use crate::output::{exact, score};

struct Target {
    fmr: f64,
    curve: EdcCurve,
    pauc: f64,
    auc: f64,
    auc_truncated: bool,
}

pub fn run(args: &EvalArgs) -> Result<String> {
    if !(args.max_discard > 0.0 && args.max_discard <= 1.0) {
        return Err(Error::Config(format!(
            "--max-discard must lie in (0, 1], got {}",
            args.max_discard
        )));
    }
    let set = read_comparison_set(&args.scores, &args.pairs)?;
    let mut targets = Vec::new();
    for &fmr in &args.fmr.0 {
        let curve = edc_curve(&set, fmr, args.max_discard)?;
        let pauc = edc_pauc(&curve, args.max_discard, args.subtract_initial)?;
        let full = edc_curve(&set, fmr, 1.0)?;
        let auc = edc_pauc(&full, 1.0, args.subtract_initial)?;
        targets.push(Target {
            fmr,
            curve,
            pauc,
            auc,
            auc_truncated: full.truncated,
        });
    }
    let tar: Vec<(f64, f64)> = match &args.far {
        Some(list) => list
            .0
            .iter()
            .map(|&far| tar_at_far(&set, far).map(|t| (far, t)))
            .collect::<Result<_>>()?,
        None => Vec::new(),
    };

    let mut out = String::new();
    match args.format {
        Format::Text => text(&mut out, args, &targets, &tar),
        Format::Csv => csv(&mut out, &targets, &tar),
        Format::Jsonl => jsonl(&mut out, args, &targets, &tar),
    }
    Ok(out)
}

fn text(out: &mut String, args: &EvalArgs, targets: &[Target], tar: &[(f64, f64)]) {
    for t in targets {
        let _ = writeln!(out, "FMR target {:e}", t.fmr);
        let _ = writeln!(out, "  threshold        {}", score(t.curve.threshold));
        let _ = writeln!(out, "  FNMR at 0%       {}", score(t.curve.initial_fnmr()));
        let _ = writeln!(
            out,
            "  pAUC@{:<4} x1e3  {:.3}{}",
            args.max_discard,
            t.pauc * 1e3,
            if t.curve.truncated {
                "  (genuine set exhausted)"
            } else {
                ""
            }
        );
        let _ = writeln!(
            out,
            "  AUC x1e3         {:.3}{}",
            t.auc * 1e3,
            if t.auc_truncated {
                "  (genuine set exhausted)"
            } else {
                ""
            }
        );
        let _ = writeln!(out, "  EDC breakpoints  discard   FNMR");
        for p in &t.curve.points {
            let _ = writeln!(
                out,
                "                   {}  {}",
                score(p.discard),
                score(p.fnmr)
            );
        }
    }
    if !tar.is_empty() {
        let _ = writeln!(out, "TAR at FAR");
        for (far, t) in tar {
            let _ = writeln!(out, "  {:<10e} {}", far, score(*t));
        }
    }
}

fn csv(out: &mut String, targets: &[Target], tar: &[(f64, f64)]) {
    out.push_str("record,target,discard,value\n");
    for t in targets {
        let f = exact(t.fmr);
        let _ = writeln!(out, "threshold,{f},,{}", score(t.curve.threshold));
        let _ = writeln!(out, "fnmr0,{f},,{}", score(t.curve.initial_fnmr()));
        let _ = writeln!(out, "pauc,{f},,{}", score(t.pauc));
        let _ = writeln!(out, "auc,{f},,{}", score(t.auc));
        for p in &t.curve.points {
            let _ = writeln!(out, "edc,{f},{},{}", score(p.discard), score(p.fnmr));
        }
    }
    for (far, v) in tar {
        let _ = writeln!(out, "tar,{},,{}", exact(*far), score(*v));
    }
}

fn jsonl(out: &mut String, args: &EvalArgs, targets: &[Target], tar: &[(f64, f64)]) {
    for t in targets {
        let points: Vec<String> = t
            .curve
            .points
            .iter()
            .map(|p| format!("[{},{}]", score(p.discard), score(p.fnmr)))
            .collect();
        let _ = writeln!(
            out,
            "{{\"fmr_target\":{},\"threshold\":{},\"fnmr0\":{},\"max_discard\":{},\"pauc\":{},\"auc\":{},\"truncated\":{},\"edc\":[{}]}}",
            exact(t.fmr),
            score(t.curve.threshold),
            score(t.curve.initial_fnmr()),
            exact(args.max_discard),
            score(t.pauc),
            score(t.auc),
            t.curve.truncated,
            points.join(",")
        );
    }
    if !tar.is_empty() {
        let rows: Vec<String> = tar
            .iter()
            .map(|(far, v)| format!("{{\"far\":{},\"tar\":{}}}", exact(*far), score(*v)))
            .collect();
        let _ = writeln!(out, "{{\"tar_at_far\":[{}]}}", rows.join(","));
    }
}
