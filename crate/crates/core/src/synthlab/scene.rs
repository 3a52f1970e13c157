//! Synthetic scenes: a few non-overlapping disks on a textured background.

use crate::perturb::ImagePatch;
use crate::rng::{domain, Cursor, Stream};
use crate::tensor_io::LabelMap;

pub const MIN_DISKS: u64 = 3;
pub const MAX_DISKS: u64 = 6;
pub const MIN_RADIUS: f64 = 4.0;
pub const MAX_RADIUS: f64 = 10.0;
/// Minimum background gap between two disks, in pixels.
pub const DISK_GAP: f64 = 2.0;
pub const MIN_FOREGROUND: f64 = 0.05;
pub const MAX_FOREGROUND: f64 = 0.6;
pub const BACKGROUND_LEVEL: f64 = 0.25;
pub const CONTRAST: f64 = 0.5;
pub const TEXTURE_SD: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Disk {
    pub cy: f64,
    pub cx: f64,
    pub r: f64,
}

impl Disk {
    fn contains(&self, y: usize, x: usize) -> bool {
        let dy = y as f64 - self.cy;
        let dx = x as f64 - self.cx;
        dy * dy + dx * dx <= self.r * self.r
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub id: String,
    pub disks: Vec<Disk>,
    /// Instance ids `1..=disks.len()`, 0 for background.
    pub instances: LabelMap,
    /// Single-channel intensities, already rounded to float32 precision.
    pub image: ImagePatch,
}

impl Scene {
    pub fn semantic(&self) -> LabelMap {
        let mask: Vec<bool> = self.instances.values().iter().map(|&v| v > 0).collect();
        LabelMap::from_mask(self.instances.height(), self.instances.width(), &mask)
            .expect("mask dimensions match")
    }

    pub fn foreground_fraction(&self) -> f64 {
        self.instances.foreground_count() as f64 / self.instances.len() as f64
    }
}

pub(crate) fn to_f32(v: f64) -> f64 {
    v as f32 as f64
}

fn place_disks(cur: &mut Cursor, size: usize) -> Vec<Disk> {
    let n = MIN_DISKS + cur.below(MAX_DISKS - MIN_DISKS + 1);
    let mut disks: Vec<Disk> = Vec::new();
    let mut attempts = 0;
    while (disks.len() as u64) < n && attempts < 200 {
        attempts += 1;
        let r = cur.range(MIN_RADIUS, MAX_RADIUS);
        let lo = r + 1.0;
        let hi = size as f64 - r - 2.0;
        if hi <= lo {
            continue;
        }
        let d = Disk {
            cy: cur.range(lo, hi),
            cx: cur.range(lo, hi),
            r,
        };
        let clear = disks.iter().all(|o| {
            let dist = ((d.cy - o.cy).powi(2) + (d.cx - o.cx).powi(2)).sqrt();
            dist > d.r + o.r + DISK_GAP
        });
        if clear {
            disks.push(d);
        }
    }
    disks
}

/// Deterministic in `(seed, id, size)`. Layouts whose foreground fraction
/// falls outside `[MIN_FOREGROUND, MAX_FOREGROUND]` are redrawn.
pub fn generate_scene(seed: u64, id: &str, size: usize) -> Scene {
    let stream = Stream::derive(seed, domain::SCENE, id);
    let mut cur = Cursor::new(stream.fork("layout"));
    let mut disks = place_disks(&mut cur, size);
    let mut labels = vec![0u32; size * size];
    for _ in 0..64 {
        labels.iter_mut().for_each(|v| *v = 0);
        for y in 0..size {
            for x in 0..size {
                if let Some(k) = disks.iter().position(|d| d.contains(y, x)) {
                    labels[y * size + x] = k as u32 + 1;
                }
            }
        }
        let frac = labels.iter().filter(|&&v| v > 0).count() as f64 / labels.len() as f64;
        if !disks.is_empty() && (MIN_FOREGROUND..=MAX_FOREGROUND).contains(&frac) {
            break;
        }
        disks = place_disks(&mut cur, size);
    }
    let texture = stream.fork("texture");
    let values = labels
        .iter()
        .enumerate()
        .map(|(i, &l)| {
            let fg = if l > 0 { 1.0 } else { 0.0 };
            to_f32(BACKGROUND_LEVEL + CONTRAST * fg + TEXTURE_SD * texture.normal(i as u64))
        })
        .collect();
    Scene {
        id: id.to_string(),
        disks,
        instances: LabelMap::new(size, size, labels).expect("valid labels"),
        image: ImagePatch::new(1, size, size, values).expect("finite image"),
    }
}
