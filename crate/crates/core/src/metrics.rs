//! Overlap, accuracy and boundary-distance metrics on label maps.

use std::collections::BTreeMap;

/// Row-major binary mask.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BinaryMask {
    pub height: usize,
    pub width: usize,
    pub data: Vec<bool>,
}

impl BinaryMask {
    pub fn new(height: usize, width: usize, data: Vec<bool>) -> Self {
        assert_eq!(data.len(), height * width, "mask extent");
        Self { height, width, data }
    }

    /// Pixels of `labels` equal to `class`.
    pub fn from_labels(labels: &[u8], height: usize, width: usize, class: u8) -> Self {
        Self::new(height, width, labels.iter().map(|&l| l == class).collect())
    }

    pub fn from_points(height: usize, width: usize, points: &[(usize, usize)]) -> Self {
        let mut data = vec![false; height * width];
        for &(r, c) in points {
            data[r * width + c] = true;
        }
        Self::new(height, width, data)
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&v| v).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.data.contains(&true)
    }

    fn at(&self, r: isize, c: isize) -> bool {
        r >= 0
            && c >= 0
            && (r as usize) < self.height
            && (c as usize) < self.width
            && self.data[r as usize * self.width + c as usize]
    }

    /// Mask pixels with at least one 4-neighbour outside the mask (or the image).
    pub fn boundary(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for r in 0..self.height {
            for c in 0..self.width {
                let (ri, ci) = (r as isize, c as isize);
                if self.at(ri, ci)
                    && !(self.at(ri - 1, ci) && self.at(ri + 1, ci) && self.at(ri, ci - 1) && self.at(ri, ci + 1))
                {
                    out.push((r, c));
                }
            }
        }
        out
    }
}

fn overlap(a: &BinaryMask, b: &BinaryMask) -> (usize, usize, usize) {
    assert_eq!((a.height, a.width), (b.height, b.width), "mask shapes differ");
    let inter = a.data.iter().zip(&b.data).filter(|(x, y)| **x && **y).count();
    (inter, a.count(), b.count())
}

/// `2|A∩B| / (|A| + |B|)`; 1 when both masks are empty.
pub fn dsc(a: &BinaryMask, b: &BinaryMask) -> f64 {
    let (inter, na, nb) = overlap(a, b);
    if na + nb == 0 {
        1.0
    } else {
        2.0 * inter as f64 / (na + nb) as f64
    }
}

/// `|A∩B| / |A∪B|`; 1 when both masks are empty.
pub fn iou(a: &BinaryMask, b: &BinaryMask) -> f64 {
    let (inter, na, nb) = overlap(a, b);
    let union = na + nb - inter;
    if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    }
}

/// Fraction of pixels whose labels agree.
pub fn accuracy(pred: &[u8], gt: &[u8]) -> f64 {
    assert_eq!(pred.len(), gt.len(), "label maps differ in size");
    if gt.is_empty() {
        return 1.0;
    }
    pred.iter().zip(gt).filter(|(p, g)| p == g).count() as f64 / gt.len() as f64
}

/// Pixel pitch along rows and columns.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Spacing {
    pub row: f64,
    pub col: f64,
}

impl Default for Spacing {
    fn default() -> Self {
        Self { row: 1.0, col: 1.0 }
    }
}

/// Squared distance transform of a sampled function along one axis
/// (lower envelope of parabolas), sites at `i · pitch`.
fn envelope_1d(f: &[f64], pitch: f64, out: &mut [f64]) {
    let n = f.len();
    let mut sites: Vec<usize> = Vec::with_capacity(n);
    let mut bounds: Vec<f64> = Vec::with_capacity(n + 1);
    let pos = |i: usize| i as f64 * pitch;
    let cross = |q: usize, p: usize| ((f[q] + pos(q) * pos(q)) - (f[p] + pos(p) * pos(p))) / (2.0 * (pos(q) - pos(p)));
    for q in (0..n).filter(|&q| f[q].is_finite()) {
        loop {
            match sites.last() {
                Some(&p) if cross(q, p) <= bounds[bounds.len() - 1] => {
                    sites.pop();
                    bounds.pop();
                }
                Some(&p) => {
                    bounds.push(cross(q, p));
                    break;
                }
                None => {
                    bounds.push(f64::NEG_INFINITY);
                    break;
                }
            }
        }
        sites.push(q);
    }
    if sites.is_empty() {
        out.fill(f64::INFINITY);
        return;
    }
    let mut k = 0;
    for (q, o) in out.iter_mut().enumerate() {
        while k + 1 < sites.len() && bounds[k + 1] < pos(q) {
            k += 1;
        }
        let d = pos(q) - pos(sites[k]);
        *o = d * d + f[sites[k]];
    }
}

/// Exact Euclidean distance from every pixel to the nearest of `sites`.
pub fn distance_transform(height: usize, width: usize, sites: &[(usize, usize)], spacing: Spacing) -> Vec<f64> {
    let mut grid = vec![f64::INFINITY; height * width];
    for &(r, c) in sites {
        grid[r * width + c] = 0.0;
    }
    let mut col = vec![0.0; height];
    let mut col_out = vec![0.0; height];
    for c in 0..width {
        for r in 0..height {
            col[r] = grid[r * width + c];
        }
        envelope_1d(&col, spacing.row, &mut col_out);
        for r in 0..height {
            grid[r * width + c] = col_out[r];
        }
    }
    let mut row_out = vec![0.0; width];
    for r in 0..height {
        envelope_1d(&grid[r * width..(r + 1) * width], spacing.col, &mut row_out);
        grid[r * width..(r + 1) * width].copy_from_slice(&row_out);
    }
    grid.iter().map(|v| v.sqrt()).collect()
}

/// Directed boundary distances from `a` to `b` followed by those from `b` to `a`.
pub fn boundary_distances(a: &BinaryMask, b: &BinaryMask, spacing: Spacing) -> Vec<f64> {
    let (ba, bb) = (a.boundary(), b.boundary());
    let to_b = distance_transform(a.height, a.width, &bb, spacing);
    let to_a = distance_transform(a.height, a.width, &ba, spacing);
    let w = a.width;
    ba.iter()
        .map(|&(r, c)| to_b[r * w + c])
        .chain(bb.iter().map(|&(r, c)| to_a[r * w + c]))
        .collect()
}

/// Percentile `q ∈ [0, 100]` with linear interpolation between order statistics.
pub fn percentile(values: &[f64], q: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = q / 100.0 * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(v.len() - 1);
    v[lo] + (pos - lo as f64) * (v[hi] - v[lo])
}

/// 95th percentile of pooled boundary distances. `None` when exactly one
/// mask is empty; 0 when both are.
pub fn hd95(a: &BinaryMask, b: &BinaryMask, spacing: Spacing) -> Option<f64> {
    match (a.is_empty(), b.is_empty()) {
        (true, true) => Some(0.0),
        (false, false) => Some(percentile(&boundary_distances(a, b, spacing), 95.0)),
        _ => None,
    }
}

/// Largest boundary distance (the Hausdorff distance between boundaries).
pub fn hausdorff(a: &BinaryMask, b: &BinaryMask, spacing: Spacing) -> Option<f64> {
    match (a.is_empty(), b.is_empty()) {
        (true, true) => Some(0.0),
        (false, false) => Some(boundary_distances(a, b, spacing).into_iter().fold(0.0, f64::max)),
        _ => None,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClassMetrics {
    pub class: u8,
    pub dsc: f64,
    pub iou: f64,
    pub hd95: Option<f64>,
}

/// Metrics of one predicted label map against its ground truth.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleMetrics {
    pub id: String,
    pub case_id: String,
    pub accuracy: f64,
    pub per_class: Vec<ClassMetrics>,
}

/// Foreground classes of a label space (`1..num_classes`, or `1` for binary).
pub fn foreground_classes(num_classes: usize) -> Vec<u8> {
    (1..num_classes.max(2)).map(|c| c as u8).collect()
}

pub fn sample_metrics(
    id: &str,
    case_id: &str,
    pred: &[u8],
    gt: &[u8],
    (height, width): (usize, usize),
    num_classes: usize,
    spacing: Spacing,
) -> SampleMetrics {
    let per_class = foreground_classes(num_classes)
        .into_iter()
        .map(|class| {
            let p = BinaryMask::from_labels(pred, height, width, class);
            let g = BinaryMask::from_labels(gt, height, width, class);
            ClassMetrics {
                class,
                dsc: dsc(&p, &g),
                iou: iou(&p, &g),
                hd95: hd95(&p, &g, spacing),
            }
        })
        .collect();
    SampleMetrics {
        id: id.to_string(),
        case_id: case_id.to_string(),
        accuracy: accuracy(pred, gt),
        per_class,
    }
}

/// Class-wise and overall means over a set of evaluated samples.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub num_classes: usize,
    pub samples: Vec<SampleMetrics>,
    /// `(class, mean DSC, mean IoU, mean HD95)`; HD95 is `None` when every sample skipped it.
    pub per_class: Vec<(u8, f64, f64, Option<f64>)>,
    pub mean_dsc: f64,
    pub mean_iou: f64,
    pub accuracy: f64,
    pub mean_hd95: Option<f64>,
    /// `(sample id, class)` pairs whose HD95 was undefined.
    pub skipped: Vec<(String, u8)>,
}

fn mean(values: impl IntoIterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.into_iter().fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

impl MetricsReport {
    pub fn from_samples(num_classes: usize, samples: Vec<SampleMetrics>) -> Self {
        let classes = foreground_classes(num_classes);
        let per_class: Vec<_> = classes
            .iter()
            .enumerate()
            .map(|(k, &class)| {
                let rows = || samples.iter().map(move |s| &s.per_class[k]);
                (
                    class,
                    mean(rows().map(|m| m.dsc)).unwrap_or(0.0),
                    mean(rows().map(|m| m.iou)).unwrap_or(0.0),
                    mean(rows().filter_map(|m| m.hd95)),
                )
            })
            .collect();
        let skipped = samples
            .iter()
            .flat_map(|s| {
                s.per_class
                    .iter()
                    .filter(|m| m.hd95.is_none())
                    .map(|m| (s.id.clone(), m.class))
            })
            .collect();
        Self {
            num_classes,
            mean_dsc: mean(per_class.iter().map(|c| c.1)).unwrap_or(0.0),
            mean_iou: mean(per_class.iter().map(|c| c.2)).unwrap_or(0.0),
            accuracy: mean(samples.iter().map(|s| s.accuracy)).unwrap_or(0.0),
            mean_hd95: mean(per_class.iter().filter_map(|c| c.3)),
            per_class,
            skipped,
            samples,
        }
    }

    /// Case-level means: every case's slices are averaged before reporting.
    pub fn by_case(&self) -> Vec<SampleMetrics> {
        let mut groups: BTreeMap<&str, Vec<&SampleMetrics>> = BTreeMap::new();
        for s in &self.samples {
            groups.entry(&s.case_id).or_default().push(s);
        }
        groups
            .into_iter()
            .map(|(case, rows)| SampleMetrics {
                id: case.to_string(),
                case_id: case.to_string(),
                accuracy: mean(rows.iter().map(|r| r.accuracy)).unwrap_or(0.0),
                per_class: (0..rows[0].per_class.len())
                    .map(|k| ClassMetrics {
                        class: rows[0].per_class[k].class,
                        dsc: mean(rows.iter().map(|r| r.per_class[k].dsc)).unwrap_or(0.0),
                        iou: mean(rows.iter().map(|r| r.per_class[k].iou)).unwrap_or(0.0),
                        hd95: mean(rows.iter().filter_map(|r| r.per_class[k].hd95)),
                    })
                    .collect(),
            })
            .collect()
    }

    pub fn to_json(&self) -> serde_json::Value {
        let class_rows: Vec<_> = self
            .per_class
            .iter()
            .map(|(class, d, i, h)| serde_json::json!({"class": class, "dsc": d, "iou": i, "hd95": h}))
            .collect();
        serde_json::json!({
            "num_classes": self.num_classes,
            "samples": self.samples.len(),
            "mean_dsc": self.mean_dsc,
            "mean_iou": self.mean_iou,
            "accuracy": self.accuracy,
            "mean_hd95": self.mean_hd95,
            "per_class": class_rows,
            "skipped_hd95": self.skipped.iter().map(|(id, c)| format!("{id}:{c}")).collect::<Vec<_>>(),
            "hd95_mode": "per-slice, averaged per case",
        })
    }

    /// Header and one row per sample: `id, case_id, accuracy, dsc_k, iou_k, hd95_k ...`.
    pub fn csv_rows(rows: &[SampleMetrics], num_classes: usize) -> Vec<Vec<String>> {
        let mut header = vec!["id".to_string(), "case_id".into(), "accuracy".into()];
        for c in foreground_classes(num_classes) {
            header.extend([format!("dsc_{c}"), format!("iou_{c}"), format!("hd95_{c}")]);
        }
        let mut out = vec![header];
        for s in rows {
            let mut row = vec![s.id.clone(), s.case_id.clone(), format!("{:.6}", s.accuracy)];
            for m in &s.per_class {
                row.push(format!("{:.6}", m.dsc));
                row.push(format!("{:.6}", m.iou));
                row.push(m.hd95.map_or_else(String::new, |h| format!("{h:.6}")));
            }
            out.push(row);
        }
        out
    }
}
