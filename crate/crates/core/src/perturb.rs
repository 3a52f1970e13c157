//! Deterministic input-space perturbations.
//!
//! One [`PerturbationSpec`] describes one transformation. Its strength is drawn
//! once per `(spec, image)` from the spec's range, and Gaussian noise fields
//! are drawn from a counter-based stream keyed by the same pair, so every
//! output is a pure function of `(image, spec, image_id)`.
//!
//! `feature-dropout` specs share the grammar but run inside the inference
//! harness; this module validates them and refuses to execute them.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{domain, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PerturbationKind {
    Gauss,
    Brightness,
    Contrast,
    Gamma,
    FeatureDropout,
}

impl PerturbationKind {
    pub fn is_input_space(self) -> bool {
        !matches!(self, PerturbationKind::FeatureDropout)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Placement {
    #[serde(rename = "input")]
    Input,
    #[serde(rename = "all-layers")]
    AllLayers,
    #[serde(rename = "bottleneck")]
    Bottleneck,
    #[serde(rename = "bottleneck+skips")]
    BottleneckSkips,
}

fn default_placement() -> Placement {
    Placement::Input
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbationSpec {
    pub id: String,
    pub kind: PerturbationKind,
    /// `[lo, hi]`: σ, θ_B, θ_C, γ or dropout rate depending on `kind`.
    pub strength_range: [f64; 2],
    #[serde(default = "default_placement")]
    pub placement: Placement,
    pub seed: u64,
}

impl PerturbationSpec {
    pub fn new(id: impl Into<String>, kind: PerturbationKind, lo: f64, hi: f64, seed: u64) -> Self {
        PerturbationSpec {
            id: id.into(),
            kind,
            strength_range: [lo, hi],
            placement: if kind.is_input_space() {
                Placement::Input
            } else {
                Placement::Bottleneck
            },
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let [lo, hi] = self.strength_range;
        let fail = |reason: String| {
            Err(Error::InvalidSpec {
                id: self.id.clone(),
                reason,
            })
        };
        if self.id.is_empty() {
            return fail("empty id".into());
        }
        if !lo.is_finite() || !hi.is_finite() {
            return fail("strength range must be finite".into());
        }
        if lo > hi {
            return fail(format!("lo {lo} > hi {hi}"));
        }
        match self.kind {
            PerturbationKind::Gauss | PerturbationKind::Brightness if lo < 0.0 => {
                return fail(format!("{:?} strength must be >= 0", self.kind))
            }
            PerturbationKind::Contrast | PerturbationKind::Gamma if lo <= 0.0 => {
                return fail(format!("{:?} strength must be > 0", self.kind))
            }
            PerturbationKind::FeatureDropout if !(lo > 0.0 && hi < 1.0) => {
                return fail("dropout rate must satisfy 0 < lo <= hi < 1".into())
            }
            _ => {}
        }
        match (self.kind.is_input_space(), self.placement) {
            (true, Placement::Input)
            | (false, Placement::AllLayers | Placement::Bottleneck | Placement::BottleneckSkips) => {
                Ok(())
            }
            (true, p) => fail(format!(
                "input-space kinds require placement `input`, got {p:?}"
            )),
            (false, _) => fail("feature-dropout needs a network placement, not `input`".into()),
        }
    }
}

/// Dense `channels × height × width` image, channel-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ImagePatch {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub values: Vec<f64>,
}

impl ImagePatch {
    pub fn new(channels: usize, height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        if channels == 0 || height == 0 || width == 0 {
            return Err(Error::Invalid("image dimensions must be positive".into()));
        }
        if values.len() != channels * height * width {
            return Err(Error::Invalid(format!(
                "image has {} values, expected {}",
                values.len(),
                channels * height * width
            )));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::Invalid(format!("non-finite image value {v}")));
        }
        Ok(ImagePatch {
            channels,
            height,
            width,
            values,
        })
    }

    pub fn filled(channels: usize, height: usize, width: usize, value: f64) -> Self {
        ImagePatch {
            channels,
            height,
            width,
            values: vec![value; channels * height * width],
        }
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    fn map(&self, f: impl Fn(f64) -> f64) -> ImagePatch {
        ImagePatch {
            values: self.values.iter().map(|&v| f(v)).collect(),
            ..*self
        }
    }
}

/// Strength for `(spec, image_id)`, uniform on the spec's range.
pub fn sample_strength(spec: &PerturbationSpec, image_id: &str) -> f64 {
    let [lo, hi] = spec.strength_range;
    if lo == hi {
        return lo;
    }
    let u = Stream::derive(spec.seed, domain::STRENGTH, image_id).uniform(0);
    lo + (hi - lo) * u
}

/// Key of the Gaussian noise stream for `(spec, image_id)`.
pub fn noise_key(spec: &PerturbationSpec, image_id: &str) -> u64 {
    Stream::derive(spec.seed, domain::NOISE, image_id).key()
}

/// `x + N(0, σ)` element-wise, no clipping. Element `i` (flat, channel-major)
/// uses draw `i` of the stream.
pub fn apply_gauss(x: &ImagePatch, sigma: f64, noise_seed: u64) -> ImagePatch {
    if sigma == 0.0 {
        return x.clone();
    }
    let stream = Stream::from_key(noise_seed);
    ImagePatch {
        values: x
            .values
            .iter()
            .enumerate()
            .map(|(i, &v)| v + sigma * stream.normal(i as u64))
            .collect(),
        ..*x
    }
}

pub fn apply_brightness(x: &ImagePatch, theta_b: f64) -> ImagePatch {
    x.map(|v| v + theta_b)
}

/// Rescale about the patch mean (all channels pooled).
pub fn apply_contrast(x: &ImagePatch, theta_c: f64) -> ImagePatch {
    if theta_c == 1.0 {
        return x.clone();
    }
    let mu = x.mean();
    x.map(|v| mu + theta_c * (v - mu))
}

/// `x^γ`; negative inputs are clamped to 0 first.
pub fn apply_gamma(x: &ImagePatch, gamma: f64) -> ImagePatch {
    let negatives = x.values.iter().filter(|&&v| v < 0.0).count();
    if negatives > 0 {
        tracing::warn!(
            negatives,
            "gamma correction: clamping negative intensities to 0"
        );
    }
    x.map(|v| v.max(0.0).powf(gamma))
}

/// Outcome of applying one spec to one image.
#[derive(Debug, Clone, PartialEq)]
pub struct Perturbed {
    pub image: ImagePatch,
    pub strength: f64,
    /// Stream key of the noise field, for `gauss` only.
    pub noise_seed: Option<u64>,
}

pub fn apply_spec(spec: &PerturbationSpec, image_id: &str, x: &ImagePatch) -> Result<Perturbed> {
    spec.validate()?;
    let strength = sample_strength(spec, image_id);
    let (image, noise_seed) = match spec.kind {
        PerturbationKind::Gauss => {
            let key = noise_key(spec, image_id);
            (apply_gauss(x, strength, key), Some(key))
        }
        PerturbationKind::Brightness => (apply_brightness(x, strength), None),
        PerturbationKind::Contrast => (apply_contrast(x, strength), None),
        PerturbationKind::Gamma => (apply_gamma(x, strength), None),
        PerturbationKind::FeatureDropout => {
            return Err(Error::InvalidSpec {
                id: spec.id.clone(),
                reason: "feature-dropout runs inside the inference harness, not on images".into(),
            })
        }
    };
    Ok(Perturbed {
        image,
        strength,
        noise_seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(h: usize, w: usize) -> ImagePatch {
        let n = h * w;
        ImagePatch::new(1, h, w, (0..n).map(|i| i as f64 / n as f64).collect()).unwrap()
    }

    #[test]
    fn degenerate_range_returns_bound() {
        let spec = PerturbationSpec::new("g", PerturbationKind::Gauss, 0.05, 0.05, 1);
        for id in ["a", "b", "img_003"] {
            assert_eq!(sample_strength(&spec, id), 0.05);
        }
    }

    #[test]
    fn strength_is_deterministic_and_in_range() {
        let spec = PerturbationSpec::new("g", PerturbationKind::Gauss, 0.01, 0.03, 42);
        let a = sample_strength(&spec, "img7");
        assert_eq!(a, sample_strength(&spec, "img7"));
        assert!((0.01..=0.03).contains(&a));
        assert_ne!(a, sample_strength(&spec, "img8"));
    }

    #[test]
    fn strength_law_of_large_numbers() {
        let spec = PerturbationSpec::new("g", PerturbationKind::Gauss, 0.01, 0.03, 9);
        let n = 10_000;
        let mean = (0..n)
            .map(|i| sample_strength(&spec, &format!("image_{i}")))
            .sum::<f64>()
            / n as f64;
        assert!((mean - 0.02).abs() < 0.001, "mean {mean}");
    }

    #[test]
    fn gauss_zero_sigma_is_identity() {
        let x = ramp(8, 8);
        assert_eq!(apply_gauss(&x, 0.0, 5), x);
    }

    #[test]
    fn gauss_moments_on_256_square() {
        let x = ImagePatch::filled(1, 256, 256, 0.3);
        let y = apply_gauss(&x, 0.1, 1234);
        let diffs: Vec<f64> = y.values.iter().zip(&x.values).map(|(a, b)| a - b).collect();
        let n = diffs.len() as f64;
        let mean = diffs.iter().sum::<f64>() / n;
        let sd = (diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        assert!((sd - 0.1).abs() < 0.005, "sd {sd}");
        assert_eq!(apply_gauss(&x, 0.1, 1234), y);
    }

    #[test]
    fn brightness_cases() {
        let x = ImagePatch::filled(1, 3, 3, 0.5);
        assert_eq!(apply_brightness(&x, 0.0), x);
        let y = apply_brightness(&x, 0.1);
        assert!(y.values.iter().all(|&v| v == 0.5 + 0.1));
        let r = ramp(5, 5);
        assert!((apply_brightness(&r, 0.2).mean() - r.mean() - 0.2).abs() < 1e-12);
    }

    #[test]
    fn contrast_cases() {
        let r = ramp(6, 6);
        assert_eq!(apply_contrast(&r, 1.0), r);
        assert!((apply_contrast(&r, 1.7).mean() - r.mean()).abs() < 1e-12);
        let two = ImagePatch::new(1, 1, 2, vec![0.0, 1.0]).unwrap();
        let out = apply_contrast(&two, 1.2);
        assert!((out.values[0] + 0.1).abs() < 1e-15);
        assert!((out.values[1] - 1.1).abs() < 1e-15);
    }

    #[test]
    fn gamma_cases() {
        let r = ramp(4, 4);
        assert_eq!(apply_gamma(&r, 1.0), r);
        let q = ImagePatch::new(1, 1, 1, vec![0.25]).unwrap();
        assert_eq!(apply_gamma(&q, 0.5).values[0], 0.5);
        let fixed = ImagePatch::new(1, 1, 2, vec![0.0, 1.0]).unwrap();
        for g in [0.2, 0.8, 1.3, 4.0] {
            assert_eq!(apply_gamma(&fixed, g), fixed);
        }
        let neg = ImagePatch::new(1, 1, 2, vec![-0.3, 0.49]).unwrap();
        let out = apply_gamma(&neg, 0.5);
        assert_eq!(out.values, vec![0.0, 0.7]);
    }

    #[test]
    fn spec_validation() {
        let ok = PerturbationSpec::new("c", PerturbationKind::Contrast, 0.8, 1.2, 0);
        assert!(ok.validate().is_ok());
        assert!(
            PerturbationSpec::new("c", PerturbationKind::Contrast, 0.0, 1.2, 0)
                .validate()
                .is_err()
        );
        assert!(
            PerturbationSpec::new("g", PerturbationKind::Gauss, -0.1, 0.1, 0)
                .validate()
                .is_err()
        );
        assert!(
            PerturbationSpec::new("g", PerturbationKind::Gauss, 0.2, 0.1, 0)
                .validate()
                .is_err()
        );
        assert!(
            PerturbationSpec::new("d", PerturbationKind::FeatureDropout, 0.001, 0.1, 0)
                .validate()
                .is_ok()
        );
        assert!(
            PerturbationSpec::new("d", PerturbationKind::FeatureDropout, 0.0, 0.1, 0)
                .validate()
                .is_err()
        );
        assert!(
            PerturbationSpec::new("d", PerturbationKind::FeatureDropout, 0.5, 1.0, 0)
                .validate()
                .is_err()
        );
        let mut misplaced = ok.clone();
        misplaced.placement = Placement::Bottleneck;
        assert!(misplaced.validate().is_err());
    }

    #[test]
    fn dropout_is_never_executed() {
        let spec = PerturbationSpec::new("d", PerturbationKind::FeatureDropout, 0.01, 0.1, 0);
        assert!(apply_spec(&spec, "img", &ramp(2, 2)).is_err());
    }

    #[test]
    fn spec_json_shape() {
        let json = r#"{"id":"do","kind":"feature-dropout","strength_range":[0.001,0.1],"placement":"bottleneck+skips","seed":3}"#;
        let spec: PerturbationSpec = serde_json::from_str(json).unwrap();
        assert_eq!(spec.placement, Placement::BottleneckSkips);
        assert_eq!(spec.kind, PerturbationKind::FeatureDropout);
        let g: PerturbationSpec = serde_json::from_str(
            r#"{"id":"g","kind":"gauss","strength_range":[0.01,0.03],"seed":1}"#,
        )
        .unwrap();
        assert_eq!(g.placement, Placement::Input);
    }
}
