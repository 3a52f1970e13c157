//! Consistency between an unperturbed and a perturbed prediction.
//!
//! * EI: soft agreement, `sqrt(p̂ p̃)` on agreeing pixels, 0 elsewhere.
//! * NHD: hard agreement over each foreground class's pairwise union
//!   (equivalently the IoU of the two class masks), class-weighted.
//! * ARS: adapted Rand score over pixels that are foreground in the
//!   reference, for instance labelings.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor_io::{LabelMap, ProbMap};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Ei,
    Nhd,
    Ars,
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Metric::Ei => "ei",
            Metric::Nhd => "nhd",
            Metric::Ars => "ars",
        })
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ei" => Ok(Metric::Ei),
            "nhd" => Ok(Metric::Nhd),
            "ars" => Ok(Metric::Ars),
            other => Err(Error::Invalid(format!("unknown metric `{other}`"))),
        }
    }
}

/// How per-class scores are combined in the multiclass (per-class) modes.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClassWeighting {
    /// Weight = size of the class's pairwise union.
    #[default]
    Union,
    /// Weight = pixel count of the class in the reference prediction.
    Frequency,
}

impl FromStr for ClassWeighting {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "union" => Ok(ClassWeighting::Union),
            "frequency" => Ok(ClassWeighting::Frequency),
            other => Err(Error::Invalid(format!("unknown class weighting `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyValue {
    pub value: f64,
    pub metric: Metric,
    /// Pixels (EI, NHD) or reference-foreground pixels (ARS) that contributed.
    pub n_effective: usize,
}

fn same_shape(a: (usize, usize), b: (usize, usize)) -> Result<()> {
    if a == b {
        Ok(())
    } else {
        Err(Error::ShapeMismatch { left: a, right: b })
    }
}

fn check_semantic_pair(probs: &ProbMap, labels: &LabelMap) -> Result<()> {
    same_shape(probs.shape(), labels.shape())?;
    let max = probs.max_class();
    match labels.values().iter().find(|&&l| l > max) {
        Some(l) => Err(Error::Invalid(format!(
            "label {l} has no channel in a {}-channel probability map",
            probs.classes()
        ))),
        None => Ok(()),
    }
}

/// Per-pixel EI term: joint confidence on agreement, 0 on a flip. Each
/// prediction contributes the probability of its own label.
fn ei_term(reference: (&ProbMap, &LabelMap), perturbed: (&ProbMap, &LabelMap), i: usize) -> f64 {
    let (ref_p, ref_l) = reference;
    let (pert_p, pert_l) = perturbed;
    let a = ref_l.values()[i];
    let b = pert_l.values()[i];
    if a == b {
        (ref_p.prob(a, i) * pert_p.prob(b, i)).sqrt()
    } else {
        0.0
    }
}

/// EI over all pixels.
pub fn ei_consistency(
    reference: (&ProbMap, &LabelMap),
    perturbed: (&ProbMap, &LabelMap),
) -> Result<ConsistencyValue> {
    check_semantic_pair(reference.0, reference.1)?;
    check_semantic_pair(perturbed.0, perturbed.1)?;
    same_shape(reference.1.shape(), perturbed.1.shape())?;
    let n = reference.1.len();
    let sum: f64 = (0..n).map(|i| ei_term(reference, perturbed, i)).sum();
    Ok(ConsistencyValue {
        value: sum / n as f64,
        metric: Metric::Ei,
        n_effective: n,
    })
}

/// EI restricted to each foreground class's pairwise union, then combined
/// like NHD. Returns 1.0 when every union is empty.
pub fn ei_consistency_per_class(
    reference: (&ProbMap, &LabelMap),
    perturbed: (&ProbMap, &LabelMap),
    num_classes: u32,
    weighting: ClassWeighting,
) -> Result<ConsistencyValue> {
    check_semantic_pair(reference.0, reference.1)?;
    check_semantic_pair(perturbed.0, perturbed.1)?;
    same_shape(reference.1.shape(), perturbed.1.shape())?;
    reference.1.check_classes(num_classes)?;
    perturbed.1.check_classes(num_classes)?;

    let c = num_classes as usize;
    let mut union = vec![0usize; c];
    let mut freq = vec![0usize; c];
    let mut soft = vec![0.0f64; c];
    for (i, (&a, &b)) in reference
        .1
        .values()
        .iter()
        .zip(perturbed.1.values())
        .enumerate()
    {
        freq[a as usize] += 1;
        let term = ei_term(reference, perturbed, i);
        union[a as usize] += 1;
        soft[a as usize] += term;
        if b != a {
            union[b as usize] += 1;
        }
    }
    let scores: Vec<(f64, usize, usize)> = (1..c)
        .filter(|&k| union[k] > 0)
        .map(|k| (soft[k] / union[k] as f64, union[k], freq[k]))
        .collect();
    Ok(combine(scores, weighting, Metric::Ei))
}

/// Weighted average of `(score, union, frequency)` per class.
fn combine(
    scores: Vec<(f64, usize, usize)>,
    weighting: ClassWeighting,
    metric: Metric,
) -> ConsistencyValue {
    let n_effective = scores.iter().map(|s| s.1).sum();
    if scores.is_empty() {
        return ConsistencyValue {
            value: 1.0,
            metric,
            n_effective,
        };
    }
    let weight = |s: &(f64, usize, usize)| match weighting {
        ClassWeighting::Union => s.1 as f64,
        ClassWeighting::Frequency => s.2 as f64,
    };
    let total: f64 = scores.iter().map(weight).sum();
    let value = if total > 0.0 {
        scores.iter().map(|s| weight(s) * s.0).sum::<f64>() / total
    } else {
        scores.iter().map(|s| s.0).sum::<f64>() / scores.len() as f64
    };
    ConsistencyValue {
        value,
        metric,
        n_effective,
    }
}

/// NHD with union-size class weighting.
pub fn nhd_consistency(
    reference: &LabelMap,
    perturbed: &LabelMap,
    num_classes: u32,
) -> Result<ConsistencyValue> {
    nhd_consistency_weighted(reference, perturbed, num_classes, ClassWeighting::Union)
}

/// `1 - flips/union` for every foreground class with a nonempty pairwise
/// union, combined by `weighting`. Both maps entirely background gives 1.0.
pub fn nhd_consistency_weighted(
    reference: &LabelMap,
    perturbed: &LabelMap,
    num_classes: u32,
    weighting: ClassWeighting,
) -> Result<ConsistencyValue> {
    same_shape(reference.shape(), perturbed.shape())?;
    reference.check_classes(num_classes)?;
    perturbed.check_classes(num_classes)?;

    let c = num_classes as usize;
    let mut union = vec![0usize; c];
    let mut flips = vec![0usize; c];
    let mut freq = vec![0usize; c];
    for (&a, &b) in reference.values().iter().zip(perturbed.values()) {
        freq[a as usize] += 1;
        union[a as usize] += 1;
        if a != b {
            union[b as usize] += 1;
            flips[a as usize] += 1;
            flips[b as usize] += 1;
        }
    }
    let scores: Vec<(f64, usize, usize)> = (1..c)
        .filter(|&k| union[k] > 0)
        .map(|k| (1.0 - flips[k] as f64 / union[k] as f64, union[k], freq[k]))
        .collect();
    Ok(combine(scores, weighting, Metric::Nhd))
}

pub const DEFAULT_ALPHA: f64 = 0.5;

/// Foreground-restricted adapted Rand score:
/// `Σ p_ij² / (α Σ s_k² + (1-α) Σ t_k²)` over pixels with a nonzero reference
/// label, `s` the perturbed marginals and `t` the reference marginals. Not
/// clamped.
pub fn ars_consistency(
    reference: &LabelMap,
    perturbed: &LabelMap,
    alpha: f64,
) -> Result<ConsistencyValue> {
    same_shape(reference.shape(), perturbed.shape())?;
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::Invalid(format!("alpha {alpha} outside [0, 1]")));
    }
    let mut joint: HashMap<(u32, u32), u64> = HashMap::new();
    let mut s: HashMap<u32, u64> = HashMap::new();
    let mut t: HashMap<u32, u64> = HashMap::new();
    let mut n_r = 0usize;
    for (&r, &p) in reference.values().iter().zip(perturbed.values()) {
        if r == 0 {
            continue;
        }
        n_r += 1;
        *joint.entry((p, r)).or_default() += 1;
        *s.entry(p).or_default() += 1;
        *t.entry(r).or_default() += 1;
    }
    if n_r == 0 {
        return Err(Error::DegenerateReference);
    }
    // Counts instead of probabilities: the N_r² factors cancel.
    let sum_p = sum_of_squares(joint.values());
    let sum_s = sum_of_squares(s.values());
    let sum_t = sum_of_squares(t.values());
    Ok(ConsistencyValue {
        value: sum_p / (alpha * sum_s + (1.0 - alpha) * sum_t),
        metric: Metric::Ars,
        n_effective: n_r,
    })
}

fn sum_of_squares<'a>(counts: impl Iterator<Item = &'a u64>) -> f64 {
    counts.map(|&v| u128::from(v) * u128::from(v)).sum::<u128>() as f64
}

/// Default lower bound on foreground fraction before a map counts as collapsed.
pub const DEFAULT_DEGENERATE_EPS: f64 = 0.001;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DegenerateReport {
    pub flagged: bool,
    pub foreground_fraction: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
}

/// Mode-collapse check on a reference prediction. Never alters scores.
pub fn degenerate_output_flag(reference: &LabelMap) -> DegenerateReport {
    degenerate_output_flag_with(reference, DEFAULT_DEGENERATE_EPS)
}

pub fn degenerate_output_flag_with(reference: &LabelMap, eps: f64) -> DegenerateReport {
    let fraction = reference.foreground_count() as f64 / reference.len() as f64;
    let reason = if fraction < eps {
        Some(format!(
            "near-uniform background (foreground fraction {fraction:.4})"
        ))
    } else if fraction > 1.0 - eps {
        Some(format!(
            "near-uniform foreground (foreground fraction {fraction:.4})"
        ))
    } else {
        None
    };
    DegenerateReport {
        flagged: reason.is_some(),
        foreground_fraction: fraction,
        reason,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labels(v: &[u32]) -> LabelMap {
        LabelMap::new(1, v.len(), v.to_vec()).unwrap()
    }

    fn binary_probs(v: &[f64]) -> ProbMap {
        ProbMap::binary(1, v.len(), v.to_vec()).unwrap()
    }

    #[test]
    fn ei_perfect_invariance() {
        let l = labels(&[0, 1, 1, 0]);
        let p = binary_probs(&[0.0, 1.0, 1.0, 0.0]);
        let v = ei_consistency((&p, &l), (&p, &l)).unwrap();
        assert_eq!(v.value, 1.0);
    }

    #[test]
    fn ei_total_flip() {
        let a = labels(&[0, 1, 1, 0]);
        let b = labels(&[1, 0, 0, 1]);
        let pa = binary_probs(&[0.1, 0.9, 0.8, 0.3]);
        let pb = binary_probs(&[0.9, 0.1, 0.2, 0.7]);
        assert_eq!(ei_consistency((&pa, &a), (&pb, &b)).unwrap().value, 0.0);
    }

    #[test]
    fn ei_two_pixel_hand_case() {
        // pixel 1 agrees on class 1 with confidences 0.9 and 0.4; pixel 2 flips
        let a = labels(&[1, 1]);
        let b = labels(&[1, 0]);
        let pa = binary_probs(&[0.9, 0.6]);
        let pb = binary_probs(&[0.4, 0.45]);
        let v = ei_consistency((&pa, &a), (&pb, &b)).unwrap();
        assert!((v.value - 0.3).abs() < 1e-15, "{}", v.value);
    }

    #[test]
    fn ei_missing_channel() {
        let a = labels(&[2, 1]);
        let p = binary_probs(&[0.9, 0.6]);
        assert!(ei_consistency((&p, &a), (&p, &a)).is_err());
    }

    #[test]
    fn ei_per_class_binary_restricts_to_union() {
        let a = labels(&[0, 0, 1, 1]);
        let b = labels(&[0, 0, 1, 0]);
        let pa = binary_probs(&[0.0, 0.0, 1.0, 1.0]);
        let pb = binary_probs(&[0.0, 0.0, 1.0, 0.0]);
        let v = ei_consistency_per_class((&pa, &a), (&pb, &b), 2, ClassWeighting::Union).unwrap();
        assert_eq!(v.value, 0.5);
        assert_eq!(v.n_effective, 2);
        let full = ei_consistency((&pa, &a), (&pb, &b)).unwrap();
        assert_eq!(full.value, 0.75);
    }

    #[test]
    fn nhd_examples() {
        let a = labels(&[0, 1, 1, 1, 0]);
        assert_eq!(nhd_consistency(&a, &a, 2).unwrap().value, 1.0);

        let mut r = vec![0u32; 10];
        let mut p = vec![0u32; 10];
        r[..5].fill(1);
        p[5..8].fill(1);
        assert_eq!(
            nhd_consistency(&labels(&r), &labels(&p), 2).unwrap().value,
            0.0
        );

        // {a,b,c} vs {b,c,d}
        let r = labels(&[1, 1, 1, 0, 0]);
        let p = labels(&[0, 1, 1, 1, 0]);
        let v = nhd_consistency(&r, &p, 2).unwrap();
        assert_eq!(v.value, 0.5);
        assert_eq!(v.n_effective, 4);
    }

    #[test]
    fn nhd_empty_vs_empty_is_one() {
        let z = labels(&[0, 0, 0]);
        assert_eq!(nhd_consistency(&z, &z, 2).unwrap().value, 1.0);
    }

    #[test]
    fn nhd_multiclass_union_weighting() {
        // class 1: union 3, intersection 1 -> 1/3; class 2: union 2, intersection 2 -> 1
        let r = labels(&[1, 1, 0, 2, 2]);
        let p = labels(&[1, 0, 1, 2, 2]);
        let v = nhd_consistency(&r, &p, 3).unwrap();
        assert!((v.value - 3.0 / 5.0).abs() < 1e-15);
        let f = nhd_consistency_weighted(&r, &p, 3, ClassWeighting::Frequency).unwrap();
        assert!((f.value - (2.0 * (1.0 / 3.0) + 2.0) / 4.0).abs() < 1e-15);
    }

    #[test]
    fn nhd_label_range_and_shape_checked() {
        assert!(nhd_consistency(&labels(&[0, 3]), &labels(&[0, 1]), 3).is_err());
        let a = LabelMap::new(2, 2, vec![0; 4]).unwrap();
        let b = LabelMap::new(1, 4, vec![0; 4]).unwrap();
        assert!(matches!(
            nhd_consistency(&a, &b, 2),
            Err(Error::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn ars_split_instance() {
        let r = labels(&[1; 10]);
        let mut p = vec![3u32; 10];
        p[5..].fill(4);
        let v = ars_consistency(&r, &labels(&p), 0.5).unwrap();
        assert!((v.value - 2.0 / 3.0).abs() < 1e-15, "{}", v.value);
        assert_eq!(v.n_effective, 10);
    }

    #[test]
    fn ars_permutation_and_shift_invariant() {
        let r = labels(&[0, 1, 1, 2, 2, 2, 3, 0]);
        let permuted = labels(&[0, 3, 3, 1, 1, 1, 2, 0]);
        let shifted = labels(&[0, 8, 8, 9, 9, 9, 10, 0]);
        for alpha in [0.0, 0.25, 0.5, 1.0] {
            assert_eq!(ars_consistency(&r, &permuted, alpha).unwrap().value, 1.0);
            assert_eq!(ars_consistency(&r, &shifted, alpha).unwrap().value, 1.0);
        }
        let noisy = labels(&[0, 1, 2, 2, 2, 0, 3, 1]);
        let relabeled = labels(&[7, 8, 9, 9, 9, 7, 10, 8]);
        assert_eq!(
            ars_consistency(&r, &noisy, 0.3).unwrap().value,
            ars_consistency(&r, &relabeled, 0.3).unwrap().value
        );
    }

    #[test]
    fn ars_empty_reference_is_degenerate() {
        assert!(matches!(
            ars_consistency(&labels(&[0, 0]), &labels(&[1, 1]), 0.5),
            Err(Error::DegenerateReference)
        ));
    }

    #[test]
    fn degenerate_flag_cases() {
        assert!(degenerate_output_flag(&labels(&[0; 100])).flagged);
        assert!(degenerate_output_flag(&labels(&[2; 100])).flagged);
        let mut v = vec![0u32; 100];
        v[..30].fill(1);
        let r = degenerate_output_flag(&labels(&v));
        assert!(!r.flagged);
        assert_eq!(r.foreground_fraction, 0.3);
    }
}
