//! Markdown summary across finished runs.

use std::fs;
use std::path::{Path, PathBuf};

use crate::config::KeyValues;
use crate::{Error, Result};

/// Headline numbers of one run directory.
#[derive(Clone, Debug, PartialEq)]
pub struct RunSummary {
    pub run: String,
    pub variant: String,
    pub scale: String,
    pub mean_dsc: f64,
    pub mean_iou: f64,
    pub mean_hd95: Option<f64>,
    pub accuracy: f64,
}

#[derive(Clone, Debug, Default)]
pub struct Summary {
    pub runs: Vec<RunSummary>,
    /// Run directories lacking an artefact, with the missing file.
    pub missing: Vec<(PathBuf, String)>,
}

fn read_run(dir: &Path) -> std::result::Result<RunSummary, String> {
    let metrics_path = dir.join("metrics.json");
    let text = fs::read_to_string(&metrics_path).map_err(|_| "metrics.json".to_string())?;
    let json: serde_json::Value = serde_json::from_str(&text).map_err(|e| format!("metrics.json ({e})"))?;
    let config = fs::read_to_string(dir.join("config.txt")).map_err(|_| "config.txt".to_string())?;
    let kv = KeyValues::parse(&config).map_err(|e| format!("config.txt ({e})"))?;
    let field = |k: &str| json.get(k).and_then(serde_json::Value::as_f64);
    let lookup = |k: &str| kv.0.get(k).cloned().unwrap_or_else(|| "-".into());
    Ok(RunSummary {
        run: dir.display().to_string(),
        variant: lookup("variant"),
        scale: lookup("scale"),
        mean_dsc: field("mean_dsc").ok_or("metrics.json (mean_dsc)")?,
        mean_iou: field("mean_iou").ok_or("metrics.json (mean_iou)")?,
        mean_hd95: field("mean_hd95"),
        accuracy: field("accuracy").ok_or("metrics.json (accuracy)")?,
    })
}

/// Collects every run; incomplete ones are listed rather than failing the report.
pub fn collect(run_dirs: &[PathBuf]) -> Summary {
    let mut summary = Summary::default();
    for dir in run_dirs {
        match read_run(dir) {
            Ok(run) => summary.runs.push(run),
            Err(missing) => summary.missing.push((dir.clone(), missing)),
        }
    }
    summary
}

impl Summary {
    pub fn to_markdown(&self) -> String {
        let mut out = String::from("| Run | Variant | Scale | DSC | IoU | HD95 | Accuracy |\n");
        out.push_str("|---|---|---|---|---|---|---|\n");
        for r in &self.runs {
            let hd = r.mean_hd95.map_or("-".to_string(), |h| format!("{h:.2}"));
            out.push_str(&format!(
                "| {} | {} | {} | {:.2} | {:.2} | {hd} | {:.2} |\n",
                r.run,
                r.variant,
                r.scale,
                100.0 * r.mean_dsc,
                100.0 * r.mean_iou,
                100.0 * r.accuracy
            ));
        }
        if !self.missing.is_empty() {
            out.push_str("\nSkipped runs:\n\n");
            for (dir, what) in &self.missing {
                out.push_str(&format!("- {}: missing or unreadable {what}\n", dir.display()));
            }
        }
        out
    }
}

/// Writes `summary.md` to `out_dir` and returns the collected summary.
pub fn report(run_dirs: &[PathBuf], out_dir: &Path) -> Result<Summary> {
    let summary = collect(run_dirs);
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let path = out_dir.join("summary.md");
    fs::write(&path, summary.to_markdown()).map_err(|e| Error::io(&path, e))?;
    Ok(summary)
}
