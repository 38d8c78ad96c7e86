//! Learning-curve charts.
//!
//! Renders one SVG with two panels — success rate on top, mean return below,
//! both against environment steps — with one curve per metrics file and the
//! file names as legend labels.

use std::path::Path;

use anyhow::{anyhow, bail, Result};
use plotters::prelude::*;

use crate::metrics::{read_metrics, MetricsRecord};

const COLORS: [RGBColor; 8] = [
    RGBColor(31, 119, 180),
    RGBColor(255, 127, 14),
    RGBColor(44, 160, 44),
    RGBColor(214, 39, 40),
    RGBColor(148, 103, 189),
    RGBColor(140, 86, 75),
    RGBColor(227, 119, 194),
    RGBColor(127, 127, 127),
];

pub fn emit_plot(metrics_files: &[std::path::PathBuf], out: &Path) -> Result<()> {
    if metrics_files.is_empty() {
        bail!("need at least one metrics file");
    }
    if out.extension().and_then(|e| e.to_str()) != Some("svg") {
        bail!("output must be an .svg path, got {}", out.display());
    }
    let mut series: Vec<(String, Vec<MetricsRecord>)> = Vec::new();
    for path in metrics_files {
        let label = path
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or("metrics")
            .to_string();
        // Disambiguate equal stems (e.g. several runs all named metrics.jsonl)
        // with the parent directory.
        let label = if series.iter().any(|(l, _)| *l == label) || label == "metrics" {
            path.parent()
                .and_then(|p| p.file_name())
                .and_then(|s| s.to_str())
                .map(|parent| format!("{parent}/{label}"))
                .unwrap_or(label)
        } else {
            label
        };
        series.push((label, read_metrics(path)?));
    }

    let max_step = series
        .iter()
        .flat_map(|(_, r)| r.iter().map(|m| m.step))
        .max()
        .unwrap_or(1) as f64;
    let (ret_lo, ret_hi) = padded_extent(
        series
            .iter()
            .flat_map(|(_, r)| r.iter().map(|m| m.mean_return)),
    );

    let root = SVGBackend::new(out, (960, 720)).into_drawing_area();
    root.fill(&WHITE).map_err(|e| anyhow!("plot: {e}"))?;
    let (upper, lower) = root.split_vertically(360);

    {
        let mut chart = ChartBuilder::on(&upper)
            .caption("Success rate", ("sans-serif", 22))
            .margin(12)
            .x_label_area_size(32)
            .y_label_area_size(56)
            .build_cartesian_2d(0.0..max_step * 1.02, -0.02..1.05)
            .map_err(|e| anyhow!("plot: {e}"))?;
        chart
            .configure_mesh()
            .x_desc("environment steps")
            .y_desc("success rate")
            .draw()
            .map_err(|e| anyhow!("plot: {e}"))?;
        for (i, (label, records)) in series.iter().enumerate() {
            let color = COLORS[i % COLORS.len()];
            chart
                .draw_series(LineSeries::new(
                    records.iter().map(|m| (m.step as f64, m.success_rate)),
                    color.stroke_width(2),
                ))
                .map_err(|e| anyhow!("plot: {e}"))?
                .label(label.clone())
                .legend(move |(x, y)| {
                    PathElement::new(vec![(x, y), (x + 18, y)], color.stroke_width(2))
                });
        }
        chart
            .configure_series_labels()
            .background_style(WHITE.mix(0.85))
            .border_style(BLACK)
            .position(SeriesLabelPosition::LowerRight)
            .draw()
            .map_err(|e| anyhow!("plot: {e}"))?;
    }

    {
        let mut chart = ChartBuilder::on(&lower)
            .caption("Mean greedy return", ("sans-serif", 22))
            .margin(12)
            .x_label_area_size(32)
            .y_label_area_size(56)
            .build_cartesian_2d(0.0..max_step * 1.02, ret_lo..ret_hi)
            .map_err(|e| anyhow!("plot: {e}"))?;
        chart
            .configure_mesh()
            .x_desc("environment steps")
            .y_desc("mean return")
            .draw()
            .map_err(|e| anyhow!("plot: {e}"))?;
        for (i, (label, records)) in series.iter().enumerate() {
            let color = COLORS[i % COLORS.len()];
            chart
                .draw_series(LineSeries::new(
                    records.iter().map(|m| (m.step as f64, m.mean_return)),
                    color.stroke_width(2),
                ))
                .map_err(|e| anyhow!("plot: {e}"))?
                .label(label.clone())
                .legend(move |(x, y)| {
                    PathElement::new(vec![(x, y), (x + 18, y)], color.stroke_width(2))
                });
        }
        chart
            .configure_series_labels()
            .background_style(WHITE.mix(0.85))
            .border_style(BLACK)
            .position(SeriesLabelPosition::LowerRight)
            .draw()
            .map_err(|e| anyhow!("plot: {e}"))?;
    }

    root.present().map_err(|e| anyhow!("plot: {e}"))?;
    Ok(())
}

/// Data extent with 5% padding, degenerate ranges widened to unit height.
fn padded_extent(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for v in values {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if !lo.is_finite() || !hi.is_finite() {
        return (0.0, 1.0);
    }
    let pad = ((hi - lo) * 0.05).max(0.5);
    (lo - pad, hi + pad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::MetricsWriter;
    use std::collections::BTreeMap;

    fn write_metrics(dir: &Path, name: &str, n: u64) -> std::path::PathBuf {
        let path = dir.join(name);
        let mut w = MetricsWriter::create(&path).unwrap();
        for i in 1..=n {
            w.append(&MetricsRecord {
                step: i * 100,
                episode: i,
                mean_return: (i as f64).sin(),
                success_rate: (i as f64 / n as f64).min(1.0),
                losses: BTreeMap::new(),
                epsilon: 0.1,
                sigma: 0.1,
            })
            .unwrap();
        }
        w.finish().unwrap();
        path
    }

    #[test]
    fn three_files_one_chart_three_curves() {
        let dir = tempfile::tempdir().unwrap();
        let files = vec![
            write_metrics(dir.path(), "pdqn.jsonl", 20),
            write_metrics(dir.path(), "mapqn.jsonl", 20),
            write_metrics(dir.path(), "mahhqn.jsonl", 20),
        ];
        let out = dir.path().join("curves.svg");
        emit_plot(&files, &out).unwrap();
        let svg = std::fs::read_to_string(&out).unwrap();
        assert!(svg.contains("<svg"));
        for label in ["pdqn", "mapqn", "mahhqn"] {
            assert!(svg.contains(label), "legend misses {label}");
        }
        // Axis ranges cover the data: the top x label should reach max step.
        assert!(svg.contains("2000"), "x axis does not reach the data extent");
    }

    #[test]
    fn empty_file_is_a_parse_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.jsonl");
        std::fs::write(&path, "").unwrap();
        let out = dir.path().join("curves.svg");
        assert!(emit_plot(&[path], &out).is_err());
    }

    #[test]
    fn non_svg_extension_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let file = write_metrics(dir.path(), "m.jsonl", 3);
        let err = emit_plot(&[file], &dir.path().join("curves.png")).unwrap_err();
        assert!(format!("{err:#}").contains(".svg"));
    }
}
