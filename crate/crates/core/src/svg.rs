//! Minimal SVG emitters for the metric CSVs: multi-series line plots and
//! square heatmaps. No styling knobs; these are quick-look figures.

use std::path::Path;

use crate::report::read_csv;
use crate::{Error, Result};

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 420.0;
const MARGIN: f64 = 54.0;
const SERIES_COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#17becf", "#9467bd"];

/// A named series of (x, y) points.
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

fn axis_bounds(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for v in values {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if !lo.is_finite() || !hi.is_finite() {
        return (0.0, 1.0);
    }
    if lo == hi {
        return (lo - 0.5, hi + 0.5);
    }
    (lo, hi)
}

/// Render a line plot to SVG text.
pub fn line_plot(title: &str, x_label: &str, y_label: &str, series: &[Series]) -> String {
    let (x0, x1) = axis_bounds(series.iter().flat_map(|s| s.points.iter().map(|p| p.0)));
    let (y0, y1) = axis_bounds(series.iter().flat_map(|s| s.points.iter().map(|p| p.1)));
    let sx = |x: f64| MARGIN + (x - x0) / (x1 - x0) * (WIDTH - 2.0 * MARGIN);
    let sy = |y: f64| HEIGHT - MARGIN - (y - y0) / (y1 - y0) * (HEIGHT - 2.0 * MARGIN);
    let mut svg = svg_header();
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">{title}</text>\n",
        WIDTH / 2.0
    ));
    // Axes.
    svg.push_str(&format!(
        "<line x1=\"{m}\" y1=\"{b}\" x2=\"{r}\" y2=\"{b}\" stroke=\"black\"/>\n<line x1=\"{m}\" y1=\"{t}\" x2=\"{m}\" y2=\"{b}\" stroke=\"black\"/>\n",
        m = MARGIN,
        b = HEIGHT - MARGIN,
        r = WIDTH - MARGIN,
        t = MARGIN
    ));
    for frac in [0.0, 0.25, 0.5, 0.75, 1.0] {
        let xv = x0 + frac * (x1 - x0);
        let yv = y0 + frac * (y1 - y0);
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\" font-size=\"10\">{:.3}</text>\n",
            sx(xv),
            HEIGHT - MARGIN + 16.0,
            xv
        ));
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" text-anchor=\"end\" font-size=\"10\">{:.3}</text>\n",
            MARGIN - 6.0,
            sy(yv) + 3.0,
            yv
        ));
    }
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\" font-size=\"12\">{x_label}</text>\n",
        WIDTH / 2.0,
        HEIGHT - 12.0
    ));
    svg.push_str(&format!(
        "<text x=\"16\" y=\"{}\" text-anchor=\"middle\" font-size=\"12\" transform=\"rotate(-90 16 {})\">{y_label}</text>\n",
        HEIGHT / 2.0,
        HEIGHT / 2.0
    ));
    for (i, s) in series.iter().enumerate() {
        let color = SERIES_COLORS[i % SERIES_COLORS.len()];
        let pts: Vec<String> = s
            .points
            .iter()
            .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
            .collect();
        svg.push_str(&format!(
            "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\" points=\"{}\"/>\n",
            pts.join(" ")
        ));
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-size=\"11\" fill=\"{color}\">{}</text>\n",
            WIDTH - MARGIN + 6.0,
            MARGIN + 14.0 * i as f64,
            s.name
        ));
    }
    svg.push_str("</svg>\n");
    svg
}

/// Render a square heatmap (values in [0, 1] map white to dark blue).
pub fn heatmap(title: &str, matrix: &[Vec<f64>]) -> String {
    let m = matrix.len();
    let cell = ((WIDTH.min(HEIGHT) - 2.0 * MARGIN) / m as f64).floor();
    let mut svg = svg_header();
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">{title}</text>\n",
        WIDTH / 2.0
    ));
    let max = matrix
        .iter()
        .flat_map(|r| r.iter().cloned())
        .fold(1.0f64, f64::max);
    for (i, row) in matrix.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            let frac = (v / max).clamp(0.0, 1.0);
            let shade = (255.0 * (1.0 - frac)) as u8;
            let x = MARGIN + j as f64 * cell;
            let y = MARGIN + i as f64 * cell;
            svg.push_str(&format!(
                "<rect x=\"{x:.1}\" y=\"{y:.1}\" width=\"{cell:.1}\" height=\"{cell:.1}\" fill=\"rgb({shade},{shade},255)\" stroke=\"#ccc\"/>\n"
            ));
            svg.push_str(&format!(
                "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\" font-size=\"10\">{v:.2}</text>\n",
                x + cell / 2.0,
                y + cell / 2.0 + 3.0
            ));
        }
    }
    svg.push_str("</svg>\n");
    svg
}

fn svg_header() -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" viewBox=\"0 0 {WIDTH} {HEIGHT}\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
    )
}

/// Render one of this project's CSVs to SVG, inferring the figure kind from
/// the header: `i,j,value` files become heatmaps, everything else becomes a
/// line plot of each numeric column against the first column.
pub fn plot_csv(csv_path: &Path, out_path: &Path) -> Result<()> {
    let (header, rows) = read_csv(csv_path)?;
    if rows.is_empty() {
        return Err(Error::Format(format!("{}: no data rows", csv_path.display())));
    }
    let title = csv_path
        .file_stem()
        .map(|s| s.to_string_lossy().to_string())
        .unwrap_or_default();
    let svg = if header == ["i", "j", "value"] {
        let m = 1 + rows
            .iter()
            .map(|r| r[0].parse::<usize>().unwrap_or(0))
            .max()
            .unwrap_or(0);
        let mut matrix = vec![vec![0.0; m]; m];
        for r in &rows {
            let i: usize = r[0].parse().map_err(|_| bad_cell(csv_path, &r[0]))?;
            let j: usize = r[1].parse().map_err(|_| bad_cell(csv_path, &r[1]))?;
            matrix[i][j] = r[2].parse().map_err(|_| bad_cell(csv_path, &r[2]))?;
        }
        heatmap(&title, &matrix)
    } else {
        let mut series = Vec::new();
        for col in 1..header.len() {
            let mut points = Vec::new();
            for r in &rows {
                let x: f64 = match r[0].parse() {
                    Ok(v) => v,
                    Err(_) => continue, // non-numeric key column; skip row
                };
                if let Ok(y) = r[col].parse::<f64>() {
                    points.push((x, y));
                }
            }
            if !points.is_empty() {
                series.push(Series { name: header[col].clone(), points });
            }
        }
        if series.is_empty() {
            return Err(Error::Format(format!(
                "{}: no numeric series to plot",
                csv_path.display()
            )));
        }
        line_plot(&title, &header[0], "value", &series)
    };
    if let Some(dir) = out_path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    std::fs::write(out_path, svg).map_err(|e| Error::io(out_path, e))
}

fn bad_cell(path: &Path, cell: &str) -> Error {
    Error::Format(format!("{}: bad numeric cell {cell:?}", path.display()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn line_plot_contains_series() {
        let s = Series { name: "loss".into(), points: vec![(0.0, 1.0), (1.0, 0.5)] };
        let svg = line_plot("t", "step", "loss", &[s]);
        assert!(svg.contains("polyline"));
        assert!(svg.contains("loss"));
    }

    #[test]
    fn csv_to_heatmap() {
        let dir = std::env::temp_dir();
        let csv = dir.join(format!("dlab-svg-{}.csv", std::process::id()));
        let svg = dir.join(format!("dlab-svg-{}.svg", std::process::id()));
        std::fs::write(&csv, "i,j,value\n0,0,1\n0,1,0.5\n1,0,0.5\n1,1,1\n").unwrap();
        plot_csv(&csv, &svg).unwrap();
        let text = std::fs::read_to_string(&svg).unwrap();
        std::fs::remove_file(&csv).ok();
        std::fs::remove_file(&svg).ok();
        assert!(text.contains("<rect"));
    }
}
