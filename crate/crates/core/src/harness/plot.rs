//! Deterministic SVG line plots and image tiles. Numbers are written with a
//! fixed precision so identical inputs give byte-identical files.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::metrics::{min_max_normalize, MetricsSeries};
use crate::error::Result;
use crate::world::Image;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const MARGIN_LEFT: f64 = 64.0;
const MARGIN_RIGHT: f64 = 120.0;
const MARGIN_TOP: f64 = 36.0;
const MARGIN_BOTTOM: f64 = 48.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

#[derive(Clone, Debug, PartialEq)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

impl Series {
    /// Points at x = `offset`, `offset + 1`, ...
    pub fn indexed(label: impl Into<String>, values: &[f64], offset: f64) -> Self {
        Self {
            label: label.into(),
            points: values.iter().enumerate().map(|(i, &v)| (offset + i as f64, v)).collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LinePlot {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub series: Vec<Series>,
    /// Dashed horizontal lines.
    pub references: Vec<(String, f64)>,
}

impl LinePlot {
    pub fn new(title: &str, x_label: &str, y_label: &str) -> Self {
        Self {
            title: title.into(),
            x_label: x_label.into(),
            y_label: y_label.into(),
            series: Vec::new(),
            references: Vec::new(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.series.iter().all(|s| s.points.is_empty())
    }

    fn bounds(&self) -> (f64, f64, f64, f64) {
        let pts = self.series.iter().flat_map(|s| s.points.iter()).filter(|p| p.0.is_finite() && p.1.is_finite());
        let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
        for &(x, y) in pts {
            x0 = x0.min(x);
            x1 = x1.max(x);
            y0 = y0.min(y);
            y1 = y1.max(y);
        }
        for &(_, y) in &self.references {
            y0 = y0.min(y);
            y1 = y1.max(y);
        }
        if !x0.is_finite() {
            return (0.0, 1.0, 0.0, 1.0);
        }
        if x1 <= x0 {
            x1 = x0 + 1.0;
        }
        if y1 <= y0 {
            y0 -= 0.5;
            y1 += 0.5;
        }
        (x0, x1, y0, y1)
    }

    pub fn to_svg(&self) -> String {
        let (x0, x1, y0, y1) = self.bounds();
        let pw = WIDTH - MARGIN_LEFT - MARGIN_RIGHT;
        let ph = HEIGHT - MARGIN_TOP - MARGIN_BOTTOM;
        let sx = |x: f64| MARGIN_LEFT + (x - x0) / (x1 - x0) * pw;
        let sy = |y: f64| MARGIN_TOP + (1.0 - (y - y0) / (y1 - y0)) * ph;

        let mut out = String::new();
        let _ = writeln!(
            out,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="11">"#
        );
        let _ = writeln!(out, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="20" text-anchor="middle" font-size="14">{}</text>"#,
            MARGIN_LEFT + pw / 2.0,
            escape(&self.title)
        );
        let _ = writeln!(
            out,
            r#"<rect x="{MARGIN_LEFT}" y="{MARGIN_TOP}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
        );
        for t in 0..=4 {
            let fx = x0 + (x1 - x0) * t as f64 / 4.0;
            let fy = y0 + (y1 - y0) * t as f64 / 4.0;
            let _ = writeln!(
                out,
                r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
                sx(fx),
                MARGIN_TOP + ph + 16.0,
                tick(fx)
            );
            let _ = writeln!(
                out,
                r##"<line x1="{MARGIN_LEFT}" y1="{y:.1}" x2="{:.1}" y2="{y:.1}" stroke="#dddddd"/>"##,
                MARGIN_LEFT + pw,
                y = sy(fy)
            );
            let _ = writeln!(
                out,
                r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{}</text>"#,
                MARGIN_LEFT - 6.0,
                sy(fy) + 4.0,
                tick(fy)
            );
        }
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
            MARGIN_LEFT + pw / 2.0,
            HEIGHT - 10.0,
            escape(&self.x_label)
        );
        let _ = writeln!(
            out,
            r#"<text transform="translate(16 {:.1}) rotate(-90)" text-anchor="middle">{}</text>"#,
            MARGIN_TOP + ph / 2.0,
            escape(&self.y_label)
        );
        for (label, y) in &self.references {
            let _ = writeln!(
                out,
                r#"<line x1="{MARGIN_LEFT}" y1="{yy:.2}" x2="{:.1}" y2="{yy:.2}" stroke="gray" stroke-dasharray="6 4"/>"#,
                MARGIN_LEFT + pw,
                yy = sy(*y)
            );
            let _ = writeln!(
                out,
                r#"<text x="{:.1}" y="{:.2}" fill="gray">{}</text>"#,
                MARGIN_LEFT + pw + 6.0,
                sy(*y) + 4.0,
                escape(label)
            );
        }
        for (i, s) in self.series.iter().enumerate() {
            let color = COLORS[i % COLORS.len()];
            let mut path = String::new();
            for &(x, y) in s.points.iter().filter(|p| p.0.is_finite() && p.1.is_finite()) {
                let _ = write!(path, "{:.2},{:.2} ", sx(x), sy(y));
            }
            let _ = writeln!(
                out,
                r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
                path.trim_end()
            );
            let ly = MARGIN_TOP + 14.0 + 16.0 * i as f64;
            let _ = writeln!(
                out,
                r#"<line x1="{:.1}" y1="{ly:.1}" x2="{:.1}" y2="{ly:.1}" stroke="{color}" stroke-width="2"/>"#,
                MARGIN_LEFT + pw + 6.0,
                MARGIN_LEFT + pw + 22.0
            );
            let _ = writeln!(
                out,
                r#"<text x="{:.1}" y="{:.1}">{}</text>"#,
                MARGIN_LEFT + pw + 26.0,
                ly + 4.0,
                escape(&s.label)
            );
        }
        out.push_str("</svg>\n");
        out
    }
}

fn tick(v: f64) -> String {
    if v.abs() >= 1000.0 || (v.fract() == 0.0 && v.abs() < 1e6) {
        format!("{v:.0}")
    } else {
        format!("{v:.3}")
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// One rectangle per pixel, `scale` user units wide.
pub fn image_svg(image: &Image, scale: usize, title: &str) -> String {
    let (w, h) = (image.width * scale, image.height * scale + 24);
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" shape-rendering="crispEdges" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(out, r#"<text x="4" y="16">{}</text>"#, escape(title));
    let _ = writeln!(out, r#"<g transform="translate(0 24)">"#);
    for r in 0..image.height {
        for c in 0..image.width {
            let px = |ch: usize| (image.get(ch.min(image.channels - 1), r, c).clamp(0.0, 1.0) * 255.0).round() as u8;
            let _ = writeln!(
                out,
                r##"<rect x="{}" y="{}" width="{scale}" height="{scale}" fill="#{:02x}{:02x}{:02x}"/>"##,
                c * scale,
                r * scale,
                px(0),
                px(1),
                px(2)
            );
        }
    }
    out.push_str("</g>\n</svg>\n");
    out
}

/// A labelled collection of per-run curves to plot together.
#[derive(Clone, Debug, PartialEq)]
pub struct RunCurves {
    pub label: String,
    pub series: MetricsSeries,
}

/// Write `name` only when it has data; otherwise record why it is missing.
fn emit(out_dir: &Path, name: &str, plot: &LinePlot, written: &mut Vec<PathBuf>, omitted: &mut Vec<String>) -> Result<()> {
    if plot.is_empty() {
        omitted.push(format!("{name}: no data"));
        return Ok(());
    }
    let path = out_dir.join(name);
    std::fs::write(&path, plot.to_svg())?;
    written.push(path);
    Ok(())
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct PlotOptions {
    pub window: usize,
    /// Reference success rates drawn on the success-rate plot.
    pub success_references: Vec<(String, f64)>,
    pub traversal: Option<Image>,
}

/// Training-curve panels: normalised smoothed AER, success rate and the
/// four per-term reward sums. An `index.txt` lists every file and the
/// panels that were left out.
pub fn emit_plots(runs: &[RunCurves], options: &PlotOptions, out_dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(out_dir)?;
    let mut written = Vec::new();
    let mut omitted = Vec::new();
    let offset = options.window.saturating_sub(1) as f64;

    let mut aer = LinePlot::new("Normalised average episode reward", "episode", "normalised AER");
    let mut success = LinePlot::new("Success rate", "episode", "success rate");
    success.references = options.success_references.clone();
    for run in runs {
        if !run.series.smoothed_aer.is_empty() {
            aer.series.push(Series::indexed(&run.label, &min_max_normalize(&run.series.smoothed_aer), offset));
        }
        if !run.series.success_rate.is_empty() {
            success.series.push(Series::indexed(&run.label, &run.series.success_rate, offset));
        }
    }
    emit(out_dir, "aer.svg", &aer, &mut written, &mut omitted)?;
    emit(out_dir, "success_rate.svg", &success, &mut written, &mut omitted)?;

    let terms: [(&str, fn(&MetricsSeries) -> &Vec<f64>); 4] = [
        ("r_collide", |s| &s.r_collide),
        ("r_goal", |s| &s.r_goal),
        ("r_dist", |s| &s.r_dist),
        ("r_ctrl", |s| &s.r_ctrl),
    ];
    for (name, get) in terms {
        let mut plot = LinePlot::new(name, "episode", "episode sum");
        for run in runs {
            let values = get(&run.series);
            if !values.is_empty() {
                plot.series.push(Series::indexed(&run.label, values, 0.0));
            }
        }
        emit(out_dir, &format!("{name}.svg"), &plot, &mut written, &mut omitted)?;
    }

    match &options.traversal {
        Some(image) => {
            let path = out_dir.join("latent_traversal.svg");
            std::fs::write(&path, image_svg(image, 2, "Latent traversal"))?;
            written.push(path);
        }
        None => omitted.push("latent_traversal.svg: no VAE".into()),
    }

    let mut index = String::from("written:\n");
    for p in &written {
        let _ = writeln!(index, "  {}", p.file_name().unwrap_or_default().to_string_lossy());
    }
    index.push_str("omitted:\n");
    for o in &omitted {
        let _ = writeln!(index, "  {o}");
    }
    let index_path = out_dir.join("index.txt");
    std::fs::write(&index_path, index)?;
    written.push(index_path);
    Ok(written)
}
