use std::fs;
use std::path::Path;

use image::{Rgb, RgbImage};

use super::checkpoint;
use crate::config::ModelConfig;
use crate::data::{collate, load_dataset, DatasetManifest, SampleRecord};
use crate::losses::argmax_labels;
use crate::metrics::{sample_metrics, BinaryMask, MetricsReport};
use crate::model::MambaCafu;
use crate::params::ParamStore;
use crate::{Error, Result};

/// Predicted label maps of `records`, in order.
pub fn predict_labels(
    model: &MambaCafu,
    store: &ParamStore,
    records: &[SampleRecord],
    batch_size: usize,
) -> Result<Vec<Vec<u8>>> {
    let mut out = Vec::with_capacity(records.len());
    for chunk in records.chunks(batch_size.max(1)) {
        let refs: Vec<&SampleRecord> = chunk.iter().collect();
        let (images, _) = collate(&refs, model.config.in_channels)?;
        let labels = argmax_labels(&model.predict(store, &images)?)?;
        let plane = labels.len() / chunk.len();
        out.extend(labels.chunks(plane).map(<[u8]>::to_vec));
    }
    Ok(out)
}

pub fn evaluate_records(
    model: &MambaCafu,
    store: &ParamStore,
    records: &[SampleRecord],
    batch_size: usize,
) -> Result<MetricsReport> {
    let preds = predict_labels(model, store, records, batch_size)?;
    Ok(report_for(records, &preds, model.config.num_classes))
}

pub fn report_for(records: &[SampleRecord], preds: &[Vec<u8>], num_classes: usize) -> MetricsReport {
    let samples = records
        .iter()
        .zip(preds)
        .map(|(r, p)| {
            sample_metrics(
                &r.id,
                &r.case_id,
                p,
                &r.mask,
                (r.height(), r.width()),
                num_classes,
                r.spacing.unwrap_or_default(),
            )
        })
        .collect();
    MetricsReport::from_samples(num_classes, samples)
}

fn write_csv(path: &Path, rows: &[Vec<String>]) -> Result<()> {
    let text: String = rows.iter().map(|r| r.join(",") + "\n").collect();
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// `metrics.json`, per-sample `samples.csv`, per-case `cases.csv` and,
/// when classes were skipped, `skipped.txt`.
pub fn write_report(dir: &Path, report: &MetricsReport) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let json_path = dir.join("metrics.json");
    let json = serde_json::to_string_pretty(&report.to_json()).expect("serialisable report");
    fs::write(&json_path, json).map_err(|e| Error::io(&json_path, e))?;
    write_csv(
        &dir.join("samples.csv"),
        &MetricsReport::csv_rows(&report.samples, report.num_classes),
    )?;
    write_csv(
        &dir.join("cases.csv"),
        &MetricsReport::csv_rows(&report.by_case(), report.num_classes),
    )?;
    if !report.skipped.is_empty() {
        let path = dir.join("skipped.txt");
        let text: String = report
            .skipped
            .iter()
            .map(|(id, c)| format!("{id}\tclass {c}\tHD95 undefined: exactly one mask empty\n"))
            .collect();
        fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}

const CLASS_COLOURS: [[u8; 3]; 8] = [
    [230, 25, 75],
    [60, 180, 75],
    [255, 225, 25],
    [0, 130, 200],
    [245, 130, 48],
    [145, 30, 180],
    [70, 240, 240],
    [240, 50, 230],
];

/// Input intensities with predicted class boundaries drawn in per-class colours.
pub fn overlay(record: &SampleRecord, pred: &[u8], num_classes: usize) -> RgbImage {
    let (h, w) = (record.height(), record.width());
    let plane = &record.image.data()[..h * w];
    let mut img = RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let v = (plane[y as usize * w + x as usize] * 255.0).round() as u8;
        Rgb([v, v, v])
    });
    for class in 1..num_classes.max(2) as u8 {
        let colour = CLASS_COLOURS[usize::from(class - 1) % CLASS_COLOURS.len()];
        for (r, c) in BinaryMask::from_labels(pred, h, w, class).boundary() {
            img.put_pixel(c as u32, r as u32, Rgb(colour));
        }
    }
    img
}

/// Loads a checkpoint into a freshly built model and evaluates it on a manifest.
/// Writes the report (and optional overlays) to `out_dir`.
pub fn evaluate(
    cfg: &ModelConfig,
    checkpoint_path: &Path,
    manifest_path: &Path,
    out_dir: &Path,
    overlays: bool,
) -> Result<MetricsReport> {
    let (model, mut store) = MambaCafu::new(cfg)?;
    let archive = checkpoint::read(checkpoint_path)?;
    checkpoint::load_into(&mut store, &archive, false)?;
    let manifest = DatasetManifest::read(manifest_path)?;
    let records = load_dataset(&manifest)?;
    if records.is_empty() {
        return Err(Error::data(manifest_path.display().to_string(), "manifest is empty"));
    }
    let preds = predict_labels(&model, &store, &records, 4)?;
    let report = report_for(&records, &preds, cfg.num_classes);
    write_report(out_dir, &report)?;
    if overlays {
        let dir = out_dir.join("overlays");
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        for (r, p) in records.iter().zip(&preds) {
            let path = dir.join(format!("{}.png", r.id));
            overlay(r, p, cfg.num_classes)
                .save(&path)
                .map_err(|e| Error::data(&r.id, format!("cannot write overlay: {e}")))?;
        }
    }
    Ok(report)
}

