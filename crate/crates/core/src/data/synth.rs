use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::manifest::{DatasetManifest, ManifestEntry, Split};
use super::write_gray8;
use crate::{Error, Result};

const PLACEMENT_ATTEMPTS: usize = 200;
const IMAGE_ATTEMPTS: usize = 50;
const NOISE_STD: f64 = 0.05;
/// Accepted per-image foreground fraction.
pub const FOREGROUND_RANGE: (f64, f64) = (0.05, 0.5);
/// Consecutive images sharing a case id.
const SLICES_PER_CASE: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SynthSpec {
    pub count: usize,
    pub size: usize,
    pub num_classes: usize,
    pub seed: u64,
    pub split: Split,
}

#[derive(Clone, Copy, Debug)]
enum Shape {
    Ellipse { cy: f64, cx: f64, ry: f64, rx: f64 },
    Rect { top: usize, left: usize, h: usize, w: usize },
}

impl Shape {
    fn random(rng: &mut ChaCha8Rng, size: usize) -> Self {
        let s = size as f64;
        if rng.random_bool(0.5) {
            let ry = rng.random_range(s / 10.0..s / 4.5);
            let rx = rng.random_range(s / 10.0..s / 4.5);
            Shape::Ellipse {
                cy: rng.random_range(ry..s - ry),
                cx: rng.random_range(rx..s - rx),
                ry,
                rx,
            }
        } else {
            let h = rng.random_range(size / 6..size * 2 / 5);
            let w = rng.random_range(size / 6..size * 2 / 5);
            Shape::Rect {
                top: rng.random_range(0..size - h),
                left: rng.random_range(0..size - w),
                h,
                w,
            }
        }
    }

    fn contains(&self, r: usize, c: usize) -> bool {
        match *self {
            Shape::Ellipse { cy, cx, ry, rx } => {
                let (dy, dx) = ((r as f64 + 0.5 - cy) / ry, (c as f64 + 0.5 - cx) / rx);
                dy * dy + dx * dx <= 1.0
            }
            Shape::Rect { top, left, h, w } => (top..top + h).contains(&r) && (left..left + w).contains(&c),
        }
    }
}

/// Places one shape per chosen class without overlap (one-pixel gap).
fn render_mask(rng: &mut ChaCha8Rng, size: usize, num_classes: usize) -> Option<Vec<u8>> {
    let foreground = num_classes.max(2) - 1;
    let count = rng.random_range(1..=foreground);
    let mut classes: Vec<u8> = (1..=foreground as u8).collect();
    classes.shuffle(rng);
    let mut mask = vec![0u8; size * size];
    for &class in &classes[..count] {
        let placed = (0..PLACEMENT_ATTEMPTS).find_map(|_| {
            let shape = Shape::random(rng, size);
            let pixels: Vec<usize> = (0..size * size).filter(|&i| shape.contains(i / size, i % size)).collect();
            let clear = pixels.iter().all(|&i| {
                let (r, c) = ((i / size) as isize, (i % size) as isize);
                (-1..=1).all(|dr| {
                    (-1..=1).all(|dc| {
                        let (rr, cc) = (r + dr, c + dc);
                        rr < 0 || cc < 0 || rr >= size as isize || cc >= size as isize || mask[rr as usize * size + cc as usize] == 0
                    })
                })
            });
            (clear && !pixels.is_empty()).then_some(pixels)
        })?;
        for i in placed {
            mask[i] = class;
        }
    }
    Some(mask)
}

/// Intensity band centre of a label.
fn band_centre(label: u8, num_classes: usize) -> f64 {
    (f64::from(label) + 0.5) / num_classes.max(2) as f64
}

/// Renders `spec.count` image/mask pairs plus a manifest into `dir`.
pub fn synth_generate(dir: &Path, spec: SynthSpec) -> Result<DatasetManifest> {
    if spec.count == 0 || spec.size == 0 || !spec.size.is_multiple_of(32) {
        return Err(Error::config(format!(
            "synthetic data needs count >= 1 and size a multiple of 32 (got {} x {})",
            spec.count, spec.size
        )));
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let noise = Normal::new(0.0, NOISE_STD).expect("positive std");
    let classes = spec.num_classes.max(2);
    let half_band = 0.25 / classes as f64;
    let n_px = (spec.size * spec.size) as f64;
    let mut entries = Vec::with_capacity(spec.count);
    for i in 0..spec.count {
        let mask = (0..IMAGE_ATTEMPTS)
            .filter_map(|_| render_mask(&mut rng, spec.size, spec.num_classes))
            .find(|m| {
                let fg = m.iter().filter(|&&l| l != 0).count() as f64 / n_px;
                (FOREGROUND_RANGE.0..=FOREGROUND_RANGE.1).contains(&fg)
            })
            .ok_or_else(|| {
                Error::data(
                    format!("synth_{i:04}"),
                    "could not pack shapes into the image; use fewer classes or a larger size",
                )
            })?;
        let levels: Vec<f64> = (0..classes as u8)
            .map(|l| band_centre(l, classes) + rng.random_range(-half_band..half_band))
            .collect();
        let pixels: Vec<u8> = mask
            .iter()
            .map(|&l| {
                let v = (levels[usize::from(l)] + noise.sample(&mut rng)).clamp(0.0, 1.0);
                (v * 255.0).round() as u8
            })
            .collect();
        let image_name = format!("image_{i:04}.png");
        let mask_name = format!("mask_{i:04}.png");
        write_gray8(&dir.join(&image_name), &pixels, spec.size, spec.size)?;
        write_gray8(&dir.join(&mask_name), &mask, spec.size, spec.size)?;
        entries.push(ManifestEntry {
            image: image_name.into(),
            mask: mask_name.into(),
            case_id: format!("case_{:03}", i / SLICES_PER_CASE),
        });
    }
    let manifest = DatasetManifest {
        root: dir.to_path_buf(),
        split: spec.split,
        num_classes: spec.num_classes,
        palette: std::iter::once("background".to_string())
            .chain((1..classes).map(|c| format!("shape{c}")))
            .collect(),
        entries,
    };
    manifest.write(&dir.join("manifest.tsv"))?;
    Ok(manifest)
}
