//! Error-versus-discard evaluation of quality scores.
//!
//! Decision rule everywhere: a comparison is a match iff its similarity is
//! at least the threshold. The EDC threshold is fixed once on the complete
//! comparison set and held while low-quality samples are discarded. A
//! comparison is discarded as soon as either of its samples is, which is the
//! same as ranking comparisons by the minimum of their two qualities.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::numerics::{l2_normalize, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Label {
    Genuine,
    Impostor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub a: String,
    pub b: String,
    pub similarity: f64,
    pub label: Label,
}

/// Per-sample qualities plus labeled comparison scores.
#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonSet {
    qualities: BTreeMap<String, f64>,
    comparisons: Vec<Comparison>,
}

impl ComparisonSet {
    pub fn new(qualities: BTreeMap<String, f64>, comparisons: Vec<Comparison>) -> Result<Self> {
        if let Some((id, q)) = qualities.iter().find(|(_, q)| !q.is_finite()) {
            return Err(Error::Degenerate(format!("quality of `{id}` is {q}")));
        }
        for c in &comparisons {
            for id in [&c.a, &c.b] {
                if !qualities.contains_key(id) {
                    return Err(Error::InsufficientData(format!(
                        "comparison references unknown sample `{id}`"
                    )));
                }
            }
            if !c.similarity.is_finite() {
                return Err(Error::Degenerate(format!(
                    "similarity of ({}, {}) is {}",
                    c.a, c.b, c.similarity
                )));
            }
        }
        Ok(Self {
            qualities,
            comparisons,
        })
    }

    pub fn qualities(&self) -> &BTreeMap<String, f64> {
        &self.qualities
    }

    pub fn comparisons(&self) -> &[Comparison] {
        &self.comparisons
    }

    /// Same comparisons scored by a different quality method.
    pub fn with_qualities(&self, qualities: BTreeMap<String, f64>) -> Result<Self> {
        Self::new(qualities, self.comparisons.clone())
    }

    fn similarities(&self, label: Label) -> impl Iterator<Item = f64> + '_ {
        self.comparisons
            .iter()
            .filter(move |c| c.label == label)
            .map(|c| c.similarity)
    }
}

fn check_rate(name: &str, rate: f64) -> Result<()> {
    if !(rate > 0.0 && rate < 1.0) {
        return Err(Error::Config(format!(
            "{name} must lie in (0, 1), got {rate}"
        )));
    }
    Ok(())
}

/// Smallest observed impostor similarity τ whose false match rate
/// `#{impostor ≥ τ} / #impostors` does not exceed `target_fmr`. When even the
/// largest impostor score is too permissive, τ is the next float above it.
pub fn fmr_threshold(set: &ComparisonSet, target_fmr: f64) -> Result<f64> {
    check_rate("target FMR", target_fmr)?;
    let mut imp: Vec<f64> = set.similarities(Label::Impostor).collect();
    if imp.is_empty() {
        return Err(Error::InsufficientData("no impostor comparisons".into()));
    }
    imp.sort_by(f64::total_cmp);
    let n = imp.len();
    let mut i = 0;
    while i < n {
        let fmr = (n - i) as f64 / n as f64;
        if fmr <= target_fmr {
            return Ok(imp[i]);
        }
        // skip ties: every copy of this value is accepted together
        let v = imp[i];
        while i < n && imp[i] == v {
            i += 1;
        }
    }
    Ok(imp[n - 1].next_up())
}

/// FNMR over genuine comparisons whose two samples are both retained.
pub fn fnmr_at(set: &ComparisonSet, threshold: f64, retained: &BTreeSet<String>) -> Result<f64> {
    let (mut total, mut rejected) = (0usize, 0usize);
    for c in set.comparisons.iter().filter(|c| c.label == Label::Genuine) {
        if retained.contains(&c.a) && retained.contains(&c.b) {
            total += 1;
            if c.similarity < threshold {
                rejected += 1;
            }
        }
    }
    if total == 0 {
        return Err(Error::UndefinedFnmr);
    }
    Ok(rejected as f64 / total as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EdcPoint {
    pub discard: f64,
    pub fnmr: f64,
}

/// Step curve of FNMR against the fraction of discarded samples. Each
/// point's FNMR holds from its discard fraction up to the next point.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EdcCurve {
    pub points: Vec<EdcPoint>,
    pub threshold: f64,
    pub target_fmr: f64,
    /// Discarding emptied the genuine set before `max_discard` was reached.
    pub truncated: bool,
}

impl EdcCurve {
    pub fn initial_fnmr(&self) -> f64 {
        self.points[0].fnmr
    }
}

fn check_max_discard(max_discard: f64) -> Result<()> {
    if !(max_discard > 0.0 && max_discard <= 1.0) {
        return Err(Error::Config(format!(
            "max discard must lie in (0, 1], got {max_discard}"
        )));
    }
    Ok(())
}

/// EDC curve at the threshold for `target_fmr`, up to `max_discard`.
///
/// Samples are discarded one quality level at a time (all samples sharing
/// the lowest remaining quality together), so any strictly increasing
/// transform of the qualities yields the same curve.
pub fn edc_curve(set: &ComparisonSet, target_fmr: f64, max_discard: f64) -> Result<EdcCurve> {
    check_max_discard(max_discard)?;
    let threshold = fmr_threshold(set, target_fmr)?;
    let total_samples = set.qualities.len();

    // (pair quality, rejected at threshold), ascending by pair quality.
    let mut genuine: Vec<(f64, bool)> = set
        .comparisons
        .iter()
        .filter(|c| c.label == Label::Genuine)
        .map(|c| {
            let q = set.qualities[&c.a].min(set.qualities[&c.b]);
            (q, c.similarity < threshold)
        })
        .collect();
    if genuine.is_empty() {
        return Err(Error::UndefinedFnmr);
    }
    genuine.sort_by(|x, y| x.0.total_cmp(&y.0));
    let mut remaining = genuine.len();
    let mut remaining_rejected = genuine.iter().filter(|g| g.1).count();

    // Ties broken by id only to fix an order; whole levels are discarded.
    let mut samples: Vec<(f64, &str)> = set
        .qualities
        .iter()
        .map(|(id, &q)| (q, id.as_str()))
        .collect();
    samples.sort_by(|x, y| x.0.total_cmp(&y.0).then_with(|| x.1.cmp(y.1)));

    let mut points = vec![EdcPoint {
        discard: 0.0,
        fnmr: remaining_rejected as f64 / remaining as f64,
    }];
    let mut truncated = false;
    let (mut s, mut g) = (0, 0);
    while s < samples.len() {
        let level = samples[s].0;
        while s < samples.len() && samples[s].0 == level {
            s += 1;
        }
        let discard = s as f64 / total_samples as f64;
        if discard > max_discard {
            break;
        }
        while g < genuine.len() && genuine[g].0 <= level {
            remaining -= 1;
            if genuine[g].1 {
                remaining_rejected -= 1;
            }
            g += 1;
        }
        if remaining == 0 {
            truncated = true;
            break;
        }
        points.push(EdcPoint {
            discard,
            fnmr: remaining_rejected as f64 / remaining as f64,
        });
    }
    Ok(EdcCurve {
        points,
        threshold,
        target_fmr,
        truncated,
    })
}

/// Area under the step curve on `[0, max_discard]`; the last point's value
/// extends to `max_discard`. With `subtract_initial`, the integrand is
/// `max(FNMR(r) - FNMR(0), 0)`.
pub fn edc_pauc(curve: &EdcCurve, max_discard: f64, subtract_initial: bool) -> Result<f64> {
    check_max_discard(max_discard)?;
    let base = if subtract_initial {
        curve.initial_fnmr()
    } else {
        0.0
    };
    let mut area = 0.0;
    for (i, p) in curve.points.iter().enumerate() {
        if p.discard >= max_discard {
            break;
        }
        let end = curve
            .points
            .get(i + 1)
            .map_or(max_discard, |next| next.discard.min(max_discard));
        area += (p.fnmr - base).max(0.0) * (end - p.discard);
    }
    Ok(area)
}

/// True accept rate at the threshold for `target_far`.
pub fn tar_at_far(set: &ComparisonSet, target_far: f64) -> Result<f64> {
    let threshold = fmr_threshold(set, target_far)?;
    let (mut total, mut accepted) = (0usize, 0usize);
    for s in set.similarities(Label::Genuine) {
        total += 1;
        if s >= threshold {
            accepted += 1;
        }
    }
    if total == 0 {
        return Err(Error::InsufficientData("no genuine comparisons".into()));
    }
    Ok(accepted as f64 / total as f64)
}

/// Quality-weighted template: `l2_normalize(Σ max(q_i, 0) · e_i)`.
pub fn aggregate_template(embeddings: &[Tensor], qualities: &[f64]) -> Result<Tensor> {
    if embeddings.is_empty() || embeddings.len() != qualities.len() {
        return Err(Error::Degenerate(format!(
            "{} embeddings with {} qualities",
            embeddings.len(),
            qualities.len()
        )));
    }
    let d = embeddings[0].len();
    let mut acc = vec![0f64; d];
    let mut weight = 0.0;
    for (e, &q) in embeddings.iter().zip(qualities) {
        if e.len() != d {
            return Err(Error::Dimension {
                op: "aggregate_template",
                left: vec![d],
                right: e.shape().to_vec(),
            });
        }
        let w = if q.is_finite() { q.max(0.0) } else { 0.0 };
        weight += w;
        for (a, &x) in acc.iter_mut().zip(e.data()) {
            *a += w * x as f64;
        }
    }
    if weight == 0.0 {
        return Err(Error::Degenerate("all template weights are zero".into()));
    }
    let summed = Tensor::vector(acc.into_iter().map(|v| v as f32).collect());
    l2_normalize(&summed)
}
