//! Dataset manifests, raster IO, augmentation and the synthetic shapes generator.

mod augment;
mod manifest;
mod synth;

use std::path::Path;

use cafu_tensor::Tensor;
use image::DynamicImage;

pub use augment::{augment, AugmentParams, MAX_ROTATION_DEG};
pub use manifest::{DatasetManifest, ManifestEntry, Split};
pub use synth::{synth_generate, SynthSpec};

use crate::metrics::Spacing;
use crate::{Error, Result};

/// One image with its label map.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleRecord {
    pub id: String,
    /// `[C, H, W]` intensities in `[0, 1]`.
    pub image: Tensor,
    /// `H × W` labels, row-major.
    pub mask: Vec<u8>,
    pub case_id: String,
    pub spacing: Option<Spacing>,
}

impl SampleRecord {
    pub fn height(&self) -> usize {
        self.image.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.image.shape()[2]
    }

    pub fn channels(&self) -> usize {
        self.image.shape()[0]
    }
}

fn decode(path: &Path, id: &str) -> Result<DynamicImage> {
    image::open(path).map_err(|e| Error::data(id, format!("cannot decode {}: {e}", path.display())))
}

/// Reads a grey or RGB raster (8 or 16 bit) as `[C, H, W]`, min-max normalised per image.
pub fn read_image(path: &Path, id: &str) -> Result<Tensor> {
    let img = decode(path, id)?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let (channels, raw): (usize, Vec<f64>) = if img.color().has_color() {
        (3, img.to_rgb32f().into_raw().into_iter().map(f64::from).collect())
    } else {
        (1, img.to_luma32f().into_raw().into_iter().map(f64::from).collect())
    };
    let mut planar = vec![0.0; channels * h * w];
    for (i, v) in raw.into_iter().enumerate() {
        let (p, c) = (i / channels, i % channels);
        planar[c * h * w + p] = v;
    }
    let (lo, hi) = planar.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let range = hi - lo;
    for v in &mut planar {
        *v = if range > 0.0 { (*v - lo) / range } else { 0.0 };
    }
    Ok(Tensor::new(&[channels, h, w], planar)?)
}

/// Reads a single-channel 8-bit label raster.
pub fn read_mask(path: &Path, id: &str) -> Result<(Vec<u8>, usize, usize)> {
    let img = decode(path, id)?;
    let DynamicImage::ImageLuma8(gray) = img else {
        return Err(Error::data(id, format!("mask {} is not 8-bit single-channel", path.display())));
    };
    let (w, h) = (gray.width() as usize, gray.height() as usize);
    Ok((gray.into_raw(), h, w))
}

pub fn write_gray8(path: &Path, data: &[u8], height: usize, width: usize) -> Result<()> {
    let img = image::GrayImage::from_raw(width as u32, height as u32, data.to_vec())
        .ok_or_else(|| Error::data(path.display().to_string(), "raster extent mismatch"))?;
    img.save(path)
        .map_err(|e| Error::data(path.display().to_string(), format!("cannot encode: {e}")))
}

/// Loads every entry of `manifest`, ordered by id (the image file stem).
pub fn load_dataset(manifest: &DatasetManifest) -> Result<Vec<SampleRecord>> {
    let mut records = Vec::with_capacity(manifest.entries.len());
    for entry in &manifest.entries {
        let image_path = manifest.resolve(&entry.image);
        let id = image_path
            .file_stem()
            .map_or_else(|| entry.image.display().to_string(), |s| s.to_string_lossy().into_owned());
        if !image_path.exists() {
            return Err(Error::data(&id, format!("missing image {}", image_path.display())));
        }
        let mask_path = manifest.resolve(&entry.mask);
        if !mask_path.exists() {
            return Err(Error::data(&id, format!("missing mask {}", mask_path.display())));
        }
        let image = read_image(&image_path, &id)?;
        let (mask, h, w) = read_mask(&mask_path, &id)?;
        if image.shape()[1..] != [h, w] {
            return Err(Error::data(
                &id,
                format!("image {:?} and mask {h}x{w} differ in size", &image.shape()[1..]),
            ));
        }
        let classes = manifest.num_classes.max(2);
        if let Some(&bad) = mask.iter().find(|&&l| usize::from(l) >= classes) {
            return Err(Error::data(&id, format!("label {bad} out of range for {classes} classes")));
        }
        records.push(SampleRecord {
            id,
            image,
            mask,
            case_id: entry.case_id.clone(),
            spacing: None,
        });
    }
    records.sort_by(|a, b| a.id.cmp(&b.id));
    Ok(records)
}

/// Repeats a single grey channel or averages colour channels to reach `channels`.
pub fn adapt_channels(image: &Tensor, channels: usize) -> Result<Tensor> {
    let [c, h, w] = *image.shape() else {
        return Err(Error::data("image", format!("expected [C, H, W], got {:?}", image.shape())));
    };
    if c == channels {
        return Ok(image.clone());
    }
    let plane = h * w;
    let d = image.data();
    let data = match (c, channels) {
        (1, n) => d.iter().copied().cycle().take(n * plane).collect(),
        (_, 1) => (0..plane).map(|p| (0..c).map(|k| d[k * plane + p]).sum::<f64>() / c as f64).collect(),
        _ => {
            return Err(Error::data(
                "image",
                format!("cannot map {c} channels to {channels}"),
            ))
        }
    };
    Ok(Tensor::new(&[channels, h, w], data)?)
}

/// Stacks records into a `[N, C, H, W]` image batch and a flat label batch.
pub fn collate(records: &[&SampleRecord], channels: usize) -> Result<(Tensor, Vec<u8>)> {
    let first = records
        .first()
        .ok_or_else(|| Error::data("batch", "empty batch"))?;
    let (h, w) = (first.height(), first.width());
    let mut images = Vec::with_capacity(records.len() * channels * h * w);
    let mut labels = Vec::with_capacity(records.len() * h * w);
    for r in records {
        if (r.height(), r.width()) != (h, w) {
            return Err(Error::data(&r.id, "batch members differ in size"));
        }
        images.extend_from_slice(adapt_channels(&r.image, channels)?.data());
        labels.extend_from_slice(&r.mask);
    }
    Ok((Tensor::new(&[records.len(), channels, h, w], images)?, labels))
}
