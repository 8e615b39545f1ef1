//! Training-curve plots from history files, written as standalone SVG.

use std::fmt::Write as _;

use crate::training::EpochRecord;

const W: f64 = 640.0;
const H: f64 = 360.0;
const MARGIN: f64 = 48.0;

struct Series<'a> {
    label: &'a str,
    color: &'a str,
    values: Vec<f64>,
}

fn panel(title: &str, y_label: &str, series: &[Series], y_range: Option<(f64, f64)>) -> String {
    let n = series.iter().map(|s| s.values.len()).max().unwrap_or(0);
    let finite = series.iter().flat_map(|s| s.values.iter().copied()).filter(|v| v.is_finite());
    let (lo, hi) = y_range.unwrap_or_else(|| {
        let (lo, hi) = finite.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
        if lo.is_finite() { (lo.min(0.0), if hi > lo { hi } else { lo + 1.0 }) } else { (0.0, 1.0) }
    });
    let x = |i: usize| MARGIN + (W - 2.0 * MARGIN) * if n > 1 { i as f64 / (n - 1) as f64 } else { 0.5 };
    let y = |v: f64| H - MARGIN - (H - 2.0 * MARGIN) * (v - lo) / (hi - lo);
    let mut svg = String::new();
    let _ = writeln!(svg, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" font-family="sans-serif" font-size="12">"#);
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(svg, r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{title}</text>"#, W / 2.0);
    let _ = writeln!(
        svg,
        r#"<path d="M{m} {t} V{b} H{r}" fill="none" stroke="black"/>"#,
        m = MARGIN,
        t = MARGIN,
        b = H - MARGIN,
        r = W - MARGIN
    );
    for k in 0..=4 {
        let v = lo + (hi - lo) * k as f64 / 4.0;
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{:.1}" text-anchor="end">{v:.3}</text>"#,
            MARGIN - 4.0,
            y(v) + 4.0
        );
    }
    let _ = writeln!(svg, r#"<text x="{}" y="{}" text-anchor="middle">epoch</text>"#, W / 2.0, H - 12.0);
    let _ = writeln!(
        svg,
        r#"<text x="14" y="{}" text-anchor="middle" transform="rotate(-90 14 {})">{y_label}</text>"#,
        H / 2.0,
        H / 2.0
    );
    for (i, s) in series.iter().enumerate() {
        let points: Vec<String> = s
            .values
            .iter()
            .enumerate()
            .filter(|(_, v)| v.is_finite())
            .map(|(e, &v)| format!("{:.1},{:.1}", x(e), y(v)))
            .collect();
        let _ = writeln!(
            svg,
            r#"<polyline points="{}" fill="none" stroke="{}" stroke-width="2"/>"#,
            points.join(" "),
            s.color
        );
        let ly = MARGIN + 16.0 * i as f64;
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{ly}" fill="{}" text-anchor="end">{}</text>"#,
            W - MARGIN - 4.0,
            s.color,
            s.label
        );
    }
    svg.push_str("</svg>\n");
    svg
}

/// Training and validation loss per epoch.
pub fn loss_curve_svg(history: &[EpochRecord]) -> String {
    panel(
        "Loss",
        "weighted cross-entropy",
        &[
            Series {
                label: "train",
                color: "#1f77b4",
                values: history.iter().map(|r| r.train_loss).collect(),
            },
            Series {
                label: "validation",
                color: "#d62728",
                values: history.iter().map(|r| r.val_loss).collect(),
            },
        ],
        None,
    )
}

/// Validation accuracy per epoch on a fixed `[0, 1]` axis.
pub fn accuracy_curve_svg(history: &[EpochRecord]) -> String {
    panel(
        "Validation accuracy",
        "accuracy",
        &[Series {
            label: "validation",
            color: "#2ca02c",
            values: history.iter().map(|r| r.val_acc).collect(),
        }],
        Some((0.0, 1.0)),
    )
}
