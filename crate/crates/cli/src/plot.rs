//! Standalone SVG line plots.

use std::fmt::Write;

const WIDTH: f64 = 900.0;
const HEIGHT: f64 = 300.0;
const MARGIN: f64 = 40.0;
const COLORS: [&str; 4] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"];

/// One named series sampled at `rate` Hz.
pub struct Series<'a> {
    pub name: &'a str,
    pub values: &'a [f64],
    pub rate: f64,
}

/// Line plot of every series on shared axes, with optional vertical markers
/// (seconds) such as detected beats.
pub fn line_plot(title: &str, series: &[Series], markers: &[f64]) -> String {
    let t_max = series
        .iter()
        .map(|s| s.values.len() as f64 / s.rate)
        .fold(0.0, f64::max)
        .max(f64::MIN_POSITIVE);
    let (mut lo, mut hi) = series
        .iter()
        .flat_map(|s| s.values.iter().copied())
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        (lo, hi) = (0.0, 1.0);
    }
    if hi - lo < 1e-12 {
        hi = lo + 1.0;
    }
    let x = |t: f64| MARGIN + t / t_max * (WIDTH - 2.0 * MARGIN);
    let y = |v: f64| HEIGHT - MARGIN - (v - lo) / (hi - lo) * (HEIGHT - 2.0 * MARGIN);

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(svg, r#"<text x="{MARGIN}" y="20" font-family="sans-serif" font-size="14">{}</text>"#, escape(title));
    let _ = writeln!(
        svg,
        r##"<rect x="{MARGIN}" y="{MARGIN}" width="{}" height="{}" fill="none" stroke="#888"/>"##,
        WIDTH - 2.0 * MARGIN,
        HEIGHT - 2.0 * MARGIN
    );
    for &m in markers {
        let _ = writeln!(
            svg,
            r##"<line x1="{0:.1}" y1="{MARGIN}" x2="{0:.1}" y2="{1:.1}" stroke="#bbb" stroke-dasharray="2,2"/>"##,
            x(m),
            HEIGHT - MARGIN
        );
    }
    for (k, s) in series.iter().enumerate() {
        let mut pts = String::new();
        for (i, &v) in s.values.iter().enumerate().filter(|(_, v)| v.is_finite()) {
            let _ = write!(pts, "{:.1},{:.1} ", x(i as f64 / s.rate), y(v));
        }
        let color = COLORS[k % COLORS.len()];
        let _ = writeln!(svg, r#"<polyline fill="none" stroke="{color}" stroke-width="1" points="{}"/>"#, pts.trim_end());
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}" font-family="sans-serif" font-size="12" fill="{color}">{}</text>"#,
            WIDTH - MARGIN - 150.0,
            MARGIN + 15.0 * (k as f64 + 1.0),
            escape(s.name)
        );
    }
    let _ = writeln!(
        svg,
        r#"<text x="{MARGIN}" y="{}" font-family="sans-serif" font-size="12">0 s</text><text x="{}" y="{}" font-family="sans-serif" font-size="12">{t_max:.1} s</text>"#,
        HEIGHT - 10.0,
        WIDTH - MARGIN - 40.0,
        HEIGHT - 10.0
    );
    svg.push_str("</svg>\n");
    svg
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plot_is_wellformed() {
        let v: Vec<f64> = (0..100).map(|i| (i as f64 / 10.0).sin()).collect();
        let svg = line_plot("a <b>", &[Series { name: "hpw", values: &v, rate: 50.0 }], &[0.5, 1.0]);
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
        assert!(svg.contains("a &lt;b&gt;"));
        assert_eq!(svg.matches("<polyline").count(), 1);
        assert_eq!(svg.matches("stroke-dasharray").count(), 2);
    }

    #[test]
    fn flat_and_empty_series_do_not_panic() {
        let flat = vec![1.0; 10];
        let svg = line_plot("", &[Series { name: "f", values: &flat, rate: 1.0 }], &[]);
        assert!(!svg.contains("NaN"));
        let svg = line_plot("", &[], &[]);
        assert!(svg.contains("</svg>"));
    }
}
