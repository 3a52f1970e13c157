//! Toy segmenters. Each one thresholds a smoothed intensity map plus a
//! model-specific amount of a high-pass response, so larger `amplitude`
//! means more sensitivity to pixel noise: worse on noisy inputs and less
//! stable under perturbation.

use crate::perturb::ImagePatch;
use crate::rng::{domain, Stream};
use crate::tensor_io::{LabelMap, ProbMap};

use super::scene::to_f32;

/// Gain on the high-pass term.
pub const SENSITIVITY: f64 = 2.0;
/// Logit scale of the probability output.
pub const SHARPNESS: f64 = 10.0;
pub const THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, PartialEq)]
pub struct ToyModel {
    pub id: String,
    pub amplitude: f64,
    pub blur_radius: usize,
    /// Zero-mean, unit-norm 3×3 kernel shared by the whole study.
    pub kernel: [f64; 9],
}

/// Random 3×3 high-pass kernel drawn from the study seed.
pub fn study_kernel(seed: u64) -> [f64; 9] {
    let s = Stream::derive(seed, domain::MODEL, "kernel");
    let mut k = [0.0; 9];
    for (i, v) in k.iter_mut().enumerate() {
        *v = s.normal(i as u64);
    }
    let mean = k.iter().sum::<f64>() / 9.0;
    k.iter_mut().for_each(|v| *v -= mean);
    let norm = k.iter().map(|v| v * v).sum::<f64>().sqrt();
    k.iter_mut().for_each(|v| *v /= norm);
    k
}

fn at(x: &ImagePatch, y: isize, c: isize) -> f64 {
    let y = y.clamp(0, x.height as isize - 1) as usize;
    let c = c.clamp(0, x.width as isize - 1) as usize;
    x.values[y * x.width + c]
}

impl ToyModel {
    /// Decision surface; foreground where positive. Uses the first channel.
    pub fn logits(&self, x: &ImagePatch) -> Vec<f64> {
        let (h, w) = (x.height, x.width);
        let r = self.blur_radius as isize;
        let area = ((2 * r + 1) * (2 * r + 1)) as f64;
        let mut out = Vec::with_capacity(h * w);
        for y in 0..h as isize {
            for c in 0..w as isize {
                let mut blur = 0.0;
                for dy in -r..=r {
                    for dx in -r..=r {
                        blur += at(x, y + dy, c + dx);
                    }
                }
                let mut hp = 0.0;
                for (k, kv) in self.kernel.iter().enumerate() {
                    hp += kv * at(x, y + k as isize / 3 - 1, c + k as isize % 3 - 1);
                }
                out.push(blur / area - THRESHOLD + self.amplitude * SENSITIVITY * hp);
            }
        }
        out
    }

    /// Binary label map and single-channel foreground probabilities,
    /// probabilities rounded to float32 precision.
    pub fn predict_semantic(&self, x: &ImagePatch) -> (LabelMap, ProbMap) {
        let s = self.logits(x);
        let mask: Vec<bool> = s.iter().map(|&v| v > 0.0).collect();
        let prob = s
            .iter()
            .map(|&v| to_f32(1.0 / (1.0 + (-SHARPNESS * v).exp())))
            .collect();
        (
            LabelMap::from_mask(x.height, x.width, &mask).expect("mask dims"),
            ProbMap::binary(x.height, x.width, prob).expect("valid probabilities"),
        )
    }

    /// 4-connected components of the foreground, numbered in scan order.
    pub fn predict_instance(&self, x: &ImagePatch) -> LabelMap {
        let s = self.logits(x);
        let mask: Vec<bool> = s.iter().map(|&v| v > 0.0).collect();
        LabelMap::new(
            x.height,
            x.width,
            connected_components(x.height, x.width, &mask),
        )
        .expect("component labels")
    }
}

pub fn connected_components(h: usize, w: usize, mask: &[bool]) -> Vec<u32> {
    let mut labels = vec![0u32; h * w];
    let mut next = 0u32;
    let mut stack = Vec::new();
    for start in 0..h * w {
        if !mask[start] || labels[start] != 0 {
            continue;
        }
        next += 1;
        labels[start] = next;
        stack.push(start);
        while let Some(i) = stack.pop() {
            let (y, x) = (i / w, i % w);
            let mut visit = |j: usize| {
                if mask[j] && labels[j] == 0 {
                    labels[j] = next;
                    stack.push(j);
                }
            };
            if y > 0 {
                visit(i - w);
            }
            if y + 1 < h {
                visit(i + w);
            }
            if x > 0 {
                visit(i - 1);
            }
            if x + 1 < w {
                visit(i + 1);
            }
        }
    }
    labels
}
