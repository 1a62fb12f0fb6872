//! Minimal SVG figures: scatter, line and heat-map plots.
//!
//! Output depends only on the data, with coordinates printed at fixed
//! precision, so identical inputs give byte-identical files.

use std::fmt::Write;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 480.0;
const MARGIN: f64 = 60.0;

/// Qualitative palette, cycled by series index.
const PALETTE: [&str; 10] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf",
];

pub struct Series<'a> {
    pub label: &'a str,
    pub points: &'a [[f64; 2]],
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn header(title: &str) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="24" text-anchor="middle" font-size="15">{}</text>"#,
        WIDTH / 2.0,
        escape(title)
    );
    s
}

/// Data range padded so a constant series still has a non-empty extent.
fn extent(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    let pad = if hi > lo { 0.05 * (hi - lo) } else { 0.5 * lo.abs().max(1.0) };
    (lo - pad, hi + pad)
}

struct Axes {
    x: (f64, f64),
    y: (f64, f64),
}

impl Axes {
    fn px(&self, x: f64) -> f64 {
        MARGIN + (x - self.x.0) / (self.x.1 - self.x.0) * (WIDTH - 2.0 * MARGIN)
    }

    fn py(&self, y: f64) -> f64 {
        HEIGHT - MARGIN - (y - self.y.0) / (self.y.1 - self.y.0) * (HEIGHT - 2.0 * MARGIN)
    }

    fn draw(&self, s: &mut String, xlabel: &str, ylabel: &str) {
        let (l, r, t, b) = (MARGIN, WIDTH - MARGIN, MARGIN, HEIGHT - MARGIN);
        let _ = writeln!(
            s,
            r#"<rect x="{l:.1}" y="{t:.1}" width="{:.1}" height="{:.1}" fill="none" stroke="black"/>"#,
            r - l,
            b - t
        );
        for k in 0..=4 {
            let f = k as f64 / 4.0;
            let xv = self.x.0 + f * (self.x.1 - self.x.0);
            let yv = self.y.0 + f * (self.y.1 - self.y.0);
            let _ = writeln!(
                s,
                r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
                self.px(xv),
                b + 16.0,
                tick(xv)
            );
            let _ = writeln!(
                s,
                r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{}</text>"#,
                l - 4.0,
                self.py(yv) + 4.0,
                tick(yv)
            );
        }
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
            WIDTH / 2.0,
            HEIGHT - 18.0,
            escape(xlabel)
        );
        let _ = writeln!(
            s,
            r#"<text x="16" y="{:.1}" text-anchor="middle" transform="rotate(-90 16 {:.1})">{}</text>"#,
            HEIGHT / 2.0,
            HEIGHT / 2.0,
            escape(ylabel)
        );
    }
}

fn tick(v: f64) -> String {
    if v != 0.0 && (v.abs() < 1e-2 || v.abs() >= 1e4) {
        format!("{v:.2e}")
    } else {
        format!("{v:.3}")
    }
}

fn legend(s: &mut String, labels: &[&str]) {
    for (i, l) in labels.iter().enumerate() {
        let y = MARGIN + 8.0 + 16.0 * i as f64;
        let x = WIDTH - MARGIN + 8.0;
        let _ = writeln!(
            s,
            r#"<rect x="{x:.1}" y="{:.1}" width="10" height="10" fill="{}"/>"#,
            y - 9.0,
            PALETTE[i % PALETTE.len()]
        );
        let _ = writeln!(s, r#"<text x="{:.1}" y="{y:.1}">{}</text>"#, x + 14.0, escape(l));
    }
}

pub fn scatter(title: &str, xlabel: &str, ylabel: &str, series: &[Series]) -> String {
    let all = || series.iter().flat_map(|s| s.points.iter());
    let axes = Axes {
        x: extent(all().map(|p| p[0])),
        y: extent(all().map(|p| p[1])),
    };
    let mut s = header(title);
    axes.draw(&mut s, xlabel, ylabel);
    for (i, ser) in series.iter().enumerate() {
        let _ = writeln!(s, r#"<g fill="{}" fill-opacity="0.7">"#, PALETTE[i % PALETTE.len()]);
        for p in ser.points.iter().filter(|p| p[0].is_finite() && p[1].is_finite()) {
            let _ = writeln!(s, r#"<circle cx="{:.2}" cy="{:.2}" r="1.8"/>"#, axes.px(p[0]), axes.py(p[1]));
        }
        s.push_str("</g>\n");
    }
    legend(&mut s, &series.iter().map(|x| x.label).collect::<Vec<_>>());
    s.push_str("</svg>\n");
    s
}

/// Polylines; with `log_y` the y values are plotted as log10 (non-positive values skipped).
pub fn lines(title: &str, xlabel: &str, ylabel: &str, series: &[Series], log_y: bool) -> String {
    let tf = |v: f64| if log_y { v.log10() } else { v };
    let all = || series.iter().flat_map(|s| s.points.iter());
    let axes = Axes {
        x: extent(all().map(|p| p[0])),
        y: extent(all().map(|p| tf(p[1]))),
    };
    let mut s = header(title);
    let ylabel = if log_y { format!("log10 {ylabel}") } else { ylabel.to_string() };
    axes.draw(&mut s, xlabel, &ylabel);
    for (i, ser) in series.iter().enumerate() {
        let pts: Vec<String> = ser
            .points
            .iter()
            .filter(|p| p[0].is_finite() && tf(p[1]).is_finite())
            .map(|p| format!("{:.2},{:.2}", axes.px(p[0]), axes.py(tf(p[1]))))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline fill="none" stroke="{}" stroke-width="1.5" points="{}"/>"#,
            PALETTE[i % PALETTE.len()],
            pts.join(" ")
        );
    }
    legend(&mut s, &series.iter().map(|x| x.label).collect::<Vec<_>>());
    s.push_str("</svg>\n");
    s
}

/// Grayscale shade for `t` in `[0, 1]`, dark for small values.
fn shade(t: f64) -> String {
    let g = (t.clamp(0.0, 1.0) * 255.0).round() as u8;
    format!("#{g:02x}{g:02x}{g:02x}")
}

/// Heat map of `values` (row-major, `rows × cols`). Row 0 is drawn at the top
/// unless `origin_lower`, which puts it at the bottom as for density grids.
#[allow(clippy::too_many_arguments)]
pub fn heatmap(
    title: &str,
    values: &[f64],
    rows: usize,
    cols: usize,
    row_labels: &[String],
    col_labels: &[String],
    origin_lower: bool,
    annotate: bool,
) -> String {
    assert_eq!(values.len(), rows * cols, "heat map shape");
    let (lo, hi) = values
        .iter()
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let span = if hi > lo { hi - lo } else { 1.0 };
    let (w, h) = ((WIDTH - 2.0 * MARGIN) / cols as f64, (HEIGHT - 2.0 * MARGIN) / rows as f64);
    let mut s = header(title);
    for r in 0..rows {
        let y = if origin_lower { HEIGHT - MARGIN - (r + 1) as f64 * h } else { MARGIN + r as f64 * h };
        for c in 0..cols {
            let v = values[r * cols + c];
            let x = MARGIN + c as f64 * w;
            let fill = if v.is_finite() { shade((v - lo) / span) } else { "#ff0000".to_string() };
            let _ = writeln!(
                s,
                r#"<rect x="{x:.2}" y="{y:.2}" width="{:.2}" height="{:.2}" fill="{fill}"/>"#,
                w + 0.05,
                h + 0.05
            );
            if annotate {
                let light = v.is_finite() && (v - lo) / span > 0.5;
                let _ = writeln!(
                    s,
                    r#"<text x="{:.2}" y="{:.2}" text-anchor="middle" fill="{}">{:.4}</text>"#,
                    x + w / 2.0,
                    y + h / 2.0 + 4.0,
                    if light { "black" } else { "white" },
                    v
                );
            }
        }
    }
    for (r, l) in row_labels.iter().enumerate().take(rows) {
        let y = if origin_lower { HEIGHT - MARGIN - (r as f64 + 0.5) * h } else { MARGIN + (r as f64 + 0.5) * h };
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{}</text>"#,
            MARGIN - 4.0,
            y + 4.0,
            escape(l)
        );
    }
    for (c, l) in col_labels.iter().enumerate().take(cols) {
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
            MARGIN + (c as f64 + 0.5) * w,
            HEIGHT - MARGIN + 16.0,
            escape(l)
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="end">range {} to {}</text>"#,
        WIDTH - MARGIN,
        HEIGHT - 18.0,
        tick(lo),
        tick(hi)
    );
    s.push_str("</svg>\n");
    s
}
