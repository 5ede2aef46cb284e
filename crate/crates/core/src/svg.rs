//! Minimal SVG plotting: scatter and line charts with auto-scaled axes.

use std::io::Write;

pub struct Series<'a> {
    pub label: &'a str,
    pub xs: &'a [f64],
    pub ys: &'a [f64],
    pub color: &'a str,
}

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 480.0;
const MARGIN: f64 = 50.0;

struct Axis {
    min: f64,
    max: f64,
}

impl Axis {
    fn fit(values: impl Iterator<Item = f64>) -> Axis {
        let mut min = f64::INFINITY;
        let mut max = f64::NEG_INFINITY;
        for v in values {
            if v.is_finite() {
                min = min.min(v);
                max = max.max(v);
            }
        }
        if !min.is_finite() {
            min = 0.0;
            max = 1.0;
        }
        if (max - min).abs() < 1e-12 {
            min -= 0.5;
            max += 0.5;
        }
        let pad = 0.05 * (max - min);
        Axis { min: min - pad, max: max + pad }
    }

    fn to_px(&self, v: f64, extent: f64, invert: bool) -> f64 {
        let frac = (v - self.min) / (self.max - self.min);
        let frac = if invert { 1.0 - frac } else { frac };
        MARGIN + frac * (extent - 2.0 * MARGIN)
    }
}

fn header<W: Write>(w: &mut W, title: &str) -> std::io::Result<()> {
    writeln!(
        w,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    )?;
    writeln!(w, r#"<rect width="100%" height="100%" fill="white"/>"#)?;
    writeln!(
        w,
        r#"<text x="{}" y="24" text-anchor="middle" font-family="sans-serif" font-size="16">{}</text>"#,
        WIDTH / 2.0,
        escape(title)
    )?;
    // Axis frame.
    writeln!(
        w,
        r##"<rect x="{MARGIN}" y="{MARGIN}" width="{}" height="{}" fill="none" stroke="#888"/>"##,
        WIDTH - 2.0 * MARGIN,
        HEIGHT - 2.0 * MARGIN
    )
}

fn axis_labels<W: Write>(w: &mut W, x: &Axis, y: &Axis) -> std::io::Result<()> {
    writeln!(
        w,
        r#"<text x="{MARGIN}" y="{}" font-family="sans-serif" font-size="11">{:.4}</text>"#,
        HEIGHT - MARGIN + 16.0,
        x.min
    )?;
    writeln!(
        w,
        r#"<text x="{}" y="{}" text-anchor="end" font-family="sans-serif" font-size="11">{:.4}</text>"#,
        WIDTH - MARGIN,
        HEIGHT - MARGIN + 16.0,
        x.max
    )?;
    writeln!(
        w,
        r#"<text x="{}" y="{}" text-anchor="end" font-family="sans-serif" font-size="11">{:.4}</text>"#,
        MARGIN - 4.0,
        HEIGHT - MARGIN,
        y.min
    )?;
    writeln!(
        w,
        r#"<text x="{}" y="{}" text-anchor="end" font-family="sans-serif" font-size="11">{:.4}</text>"#,
        MARGIN - 4.0,
        MARGIN + 10.0,
        y.max
    )
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Line chart; one polyline per series, with a small legend.
pub fn line_chart<W: Write>(w: &mut W, title: &str, series: &[Series]) -> std::io::Result<()> {
    let x_axis = Axis::fit(series.iter().flat_map(|s| s.xs.iter().copied()));
    let y_axis = Axis::fit(series.iter().flat_map(|s| s.ys.iter().copied()));
    header(w, title)?;
    axis_labels(w, &x_axis, &y_axis)?;
    for (i, s) in series.iter().enumerate() {
        let points: Vec<String> = s
            .xs
            .iter()
            .zip(s.ys)
            .filter(|(x, y)| x.is_finite() && y.is_finite())
            .map(|(x, y)| {
                format!(
                    "{:.2},{:.2}",
                    x_axis.to_px(*x, WIDTH, false),
                    y_axis.to_px(*y, HEIGHT, true)
                )
            })
            .collect();
        writeln!(
            w,
            r#"<polyline points="{}" fill="none" stroke="{}" stroke-width="1.5"/>"#,
            points.join(" "),
            s.color
        )?;
        writeln!(
            w,
            r#"<text x="{}" y="{}" font-family="sans-serif" font-size="12" fill="{}">{}</text>"#,
            WIDTH - MARGIN - 150.0,
            MARGIN + 16.0 * (i + 1) as f64,
            s.color,
            escape(s.label)
        )?;
    }
    writeln!(w, "</svg>")
}

/// Scatter plot; one circle group per series.
pub fn scatter_chart<W: Write>(w: &mut W, title: &str, series: &[Series]) -> std::io::Result<()> {
    let x_axis = Axis::fit(series.iter().flat_map(|s| s.xs.iter().copied()));
    let y_axis = Axis::fit(series.iter().flat_map(|s| s.ys.iter().copied()));
    header(w, title)?;
    axis_labels(w, &x_axis, &y_axis)?;
    for (i, s) in series.iter().enumerate() {
        for (x, y) in s.xs.iter().zip(s.ys) {
            if !x.is_finite() || !y.is_finite() {
                continue;
            }
            writeln!(
                w,
                r#"<circle cx="{:.2}" cy="{:.2}" r="2" fill="{}" fill-opacity="0.6"/>"#,
                x_axis.to_px(*x, WIDTH, false),
                y_axis.to_px(*y, HEIGHT, true),
                s.color
            )?;
        }
        writeln!(
            w,
            r#"<text x="{}" y="{}" font-family="sans-serif" font-size="12" fill="{}">{}</text>"#,
            WIDTH - MARGIN - 150.0,
            MARGIN + 16.0 * (i + 1) as f64,
            s.color,
            escape(s.label)
        )?;
    }
    writeln!(w, "</svg>")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn render(chart: fn(&mut Vec<u8>, &str, &[Series]) -> std::io::Result<()>) -> String {
        let xs = [0.0, 1.0, 2.0, 3.0];
        let ys = [0.5, 0.25, 0.125, 0.0625];
        let series = [Series { label: "loss", xs: &xs, ys: &ys, color: "#1f77b4" }];
        let mut buf = Vec::new();
        chart(&mut buf, "demo <chart>", &series).unwrap();
        String::from_utf8(buf).unwrap()
    }

    #[test]
    fn line_chart_is_wellformed() {
        let svg = render(line_chart);
        assert!(svg.starts_with("<svg"));
        assert!(svg.trim_end().ends_with("</svg>"));
        assert!(svg.contains("<polyline"));
        assert!(svg.contains("demo &lt;chart&gt;"));
    }

    #[test]
    fn scatter_chart_draws_all_points() {
        let svg = render(scatter_chart);
        assert_eq!(svg.matches("<circle").count(), 4);
    }

    #[test]
    fn coordinates_stay_in_canvas() {
        let svg = render(line_chart);
        let line = svg.lines().find(|l| l.starts_with("<polyline")).unwrap();
        let points = line.split('"').nth(1).unwrap();
        for pair in points.split(' ') {
            let (x, y) = pair.split_once(',').unwrap();
            let x: f64 = x.parse().unwrap();
            let y: f64 = y.parse().unwrap();
            assert!((0.0..=WIDTH).contains(&x));
            assert!((0.0..=HEIGHT).contains(&y));
        }
    }

    #[test]
    fn constant_series_does_not_degenerate() {
        let xs = [0.0, 1.0];
        let ys = [3.0, 3.0];
        let series = [Series { label: "flat", xs: &xs, ys: &ys, color: "red" }];
        let mut buf = Vec::new();
        line_chart(&mut buf, "flat", &series).unwrap();
        let svg = String::from_utf8(buf).unwrap();
        assert!(!svg.contains("NaN"));
        assert!(!svg.contains("inf"));
    }
}
