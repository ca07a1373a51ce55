//! Scores a synthetic ground truth against shifted and eroded predictions.
//!
//! `cargo run --example segmentation_metrics`

use mambacafu::metrics::{dsc, hausdorff, hd95, iou, BinaryMask, Spacing};

fn disc(size: usize, cy: f64, cx: f64, r: f64) -> BinaryMask {
    let data = (0..size * size)
        .map(|i| {
            let (y, x) = ((i / size) as f64, (i % size) as f64);
            (y - cy).powi(2) + (x - cx).powi(2) <= r * r
        })
        .collect();
    BinaryMask::new(size, size, data)
}

fn main() {
    let gt = disc(64, 32.0, 32.0, 12.0);
    let cases = [
        ("identical", disc(64, 32.0, 32.0, 12.0)),
        ("shifted by 3 px", disc(64, 32.0, 35.0, 12.0)),
        ("radius 9", disc(64, 32.0, 32.0, 9.0)),
        ("far away", disc(64, 10.0, 10.0, 6.0)),
        ("empty", BinaryMask::new(64, 64, vec![false; 64 * 64])),
    ];
    let spacing = Spacing { row: 0.8, col: 0.8 };
    println!("{:<16} {:>6} {:>6} {:>8} {:>8}", "prediction", "DSC", "IoU", "HD95", "HD");
    for (name, pred) in &cases {
        let fmt = |d: Option<f64>| d.map_or("undef".to_string(), |v| format!("{v:.2}"));
        println!(
            "{name:<16} {:>6.3} {:>6.3} {:>8} {:>8}",
            dsc(pred, &gt),
            iou(pred, &gt),
            fmt(hd95(pred, &gt, spacing)),
            fmt(hausdorff(pred, &gt, spacing))
        );
    }
}
