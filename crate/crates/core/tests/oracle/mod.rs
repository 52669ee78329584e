//! Brute-force reference implementations shared by the integration and
//! acceptance tests. Written for clarity, not speed.
#![allow(dead_code)]

use std::collections::BTreeMap;

use exfiqa::eval::{Comparison, ComparisonSet, Label};
use rand::Rng;

/// Random set with at most `max_samples` samples and `max_pairs` comparisons,
/// at least one genuine and one impostor. Values come from coarse grids so
/// that ties in quality and similarity are common.
pub fn random_set(rng: &mut impl Rng, max_samples: usize, max_pairs: usize) -> ComparisonSet {
    let n = rng.gen_range(2..=max_samples);
    let ids: Vec<String> = (0..n).map(|i| format!("s{i}")).collect();
    let qualities: BTreeMap<String, f64> = ids
        .iter()
        .map(|id| (id.clone(), rng.gen_range(0..6) as f64 / 5.0))
        .collect();
    let m = rng.gen_range(2..=max_pairs);
    let comparisons = (0..m)
        .map(|i| {
            let label = match i {
                0 => Label::Genuine,
                1 => Label::Impostor,
                _ if rng.gen_bool(0.5) => Label::Genuine,
                _ => Label::Impostor,
            };
            Comparison {
                a: ids[rng.gen_range(0..n)].clone(),
                b: ids[rng.gen_range(0..n)].clone(),
                similarity: rng.gen_range(0..11) as f64 / 10.0,
                label,
            }
        })
        .collect();
    ComparisonSet::new(qualities, comparisons).unwrap()
}

fn sims(set: &ComparisonSet, label: Label) -> Vec<f64> {
    set.comparisons()
        .iter()
        .filter(|c| c.label == label)
        .map(|c| c.similarity)
        .collect()
}

/// Tries every impostor score as a threshold and keeps the smallest one that
/// meets the target; falls back to just above the largest impostor score.
pub fn threshold(set: &ComparisonSet, target: f64) -> f64 {
    let imp = sims(set, Label::Impostor);
    let n = imp.len() as f64;
    let mut best: Option<f64> = None;
    for &t in &imp {
        let fmr = imp.iter().filter(|&&s| s >= t).count() as f64 / n;
        if fmr <= target && best.is_none_or(|b| t < b) {
            best = Some(t);
        }
    }
    best.unwrap_or_else(|| imp.iter().cloned().fold(f64::MIN, f64::max).next_up())
}

pub fn tar(set: &ComparisonSet, far: f64) -> f64 {
    let t = threshold(set, far);
    let gen = sims(set, Label::Genuine);
    gen.iter().filter(|&&s| s >= t).count() as f64 / gen.len() as f64
}

/// `(points, truncated)`: one point per quality cut-off, FNMR recomputed from
/// scratch over the comparisons whose samples both survive the cut.
pub fn edc(set: &ComparisonSet, target: f64, max_discard: f64) -> (Vec<(f64, f64)>, bool) {
    let t = threshold(set, target);
    let q = set.qualities();
    let fnmr = |cut: Option<f64>| -> Option<f64> {
        let kept = |id: &String| cut.is_none_or(|c| q[id] > c);
        let gen: Vec<&Comparison> = set
            .comparisons()
            .iter()
            .filter(|c| c.label == Label::Genuine && kept(&c.a) && kept(&c.b))
            .collect();
        if gen.is_empty() {
            return None;
        }
        Some(gen.iter().filter(|c| c.similarity < t).count() as f64 / gen.len() as f64)
    };
    let mut levels: Vec<f64> = q.values().cloned().collect();
    levels.sort_by(f64::total_cmp);
    levels.dedup();
    let mut points = vec![(0.0, fnmr(None).unwrap())];
    for level in levels {
        let discard = q.values().filter(|&&v| v <= level).count() as f64 / q.len() as f64;
        if discard > max_discard {
            return (points, false);
        }
        match fnmr(Some(level)) {
            Some(f) => points.push((discard, f)),
            None => return (points, true),
        }
    }
    (points, false)
}

/// Integral of the right-continuous step function on `[0, max_discard]`,
/// evaluated interval by interval over the merged breakpoints.
pub fn pauc(points: &[(f64, f64)], max_discard: f64, subtract_initial: bool) -> f64 {
    let base = if subtract_initial { points[0].1 } else { 0.0 };
    let value_at = |x: f64| {
        points
            .iter()
            .rev()
            .find(|p| p.0 <= x)
            .map(|p| (p.1 - base).max(0.0))
            .unwrap()
    };
    let mut xs: Vec<f64> = points
        .iter()
        .map(|p| p.0)
        .filter(|&x| x < max_discard)
        .collect();
    xs.push(max_discard);
    xs.windows(2).map(|w| value_at(w[0]) * (w[1] - w[0])).sum()
}

pub fn matmul(a: &[f32], b: &[f32], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            for p in 0..k {
                out[i * n + j] += a[i * k + p] as f64 * b[p * n + j] as f64;
            }
        }
    }
    out
}

pub fn layer_norm(x: &[f32], gamma: &[f32], beta: &[f32], eps: f64) -> Vec<f64> {
    let d = x.len() as f64;
    let mean = x.iter().map(|&v| v as f64).sum::<f64>() / d;
    let var = x.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / d;
    x.iter()
        .zip(gamma.iter().zip(beta))
        .map(|(&v, (&g, &b))| (v as f64 - mean) / (var + eps).sqrt() * g as f64 + b as f64)
        .collect()
}

pub fn softmax(x: &[f32]) -> Vec<f64> {
    let max = x.iter().map(|&v| v as f64).fold(f64::MIN, f64::max);
    let e: Vec<f64> = x.iter().map(|&v| (v as f64 - max).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

pub fn close(got: f64, want: f64, rel: f64) -> bool {
    (got - want).abs() <= rel * want.abs().max(1.0)
}
