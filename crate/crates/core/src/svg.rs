//! Minimal deterministic SVG line and scatter plots.
//!
//! Output depends only on the input data, so identical runs produce
//! byte-identical figures. Each panel records its axis ranges in `data-*`
//! attributes on its `<g>` element.

use std::fmt::Write;

const PANEL_W: f64 = 420.0;
const PANEL_H: f64 = 300.0;
const MARGIN_L: f64 = 70.0;
const MARGIN_R: f64 = 20.0;
const MARGIN_T: f64 = 30.0;
const MARGIN_B: f64 = 45.0;
const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Style {
    Line,
    Scatter,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
    pub style: Style,
}

impl Series {
    pub fn line(label: impl Into<String>, points: Vec<(f64, f64)>) -> Self {
        Self { label: label.into(), points, style: Style::Line }
    }

    pub fn scatter(label: impl Into<String>, points: Vec<(f64, f64)>) -> Self {
        Self { label: label.into(), points, style: Style::Scatter }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Panel {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub series: Vec<Series>,
    pub log_x: bool,
    pub log_y: bool,
}

impl Panel {
    pub fn new(title: impl Into<String>, x_label: impl Into<String>, y_label: impl Into<String>) -> Self {
        Self {
            title: title.into(),
            x_label: x_label.into(),
            y_label: y_label.into(),
            series: Vec::new(),
            log_x: false,
            log_y: false,
        }
    }

    pub fn with(mut self, s: Series) -> Self {
        self.series.push(s);
        self
    }

    fn tx(&self, v: f64, log: bool) -> Option<f64> {
        let t = if log { (v > 0.0).then(|| v.log10())? } else { v };
        t.is_finite().then_some(t)
    }

    /// Plotted (x, y) in axis space (log10 where enabled); unplottable points dropped.
    fn transformed(&self, s: &Series) -> Vec<(f64, f64)> {
        s.points
            .iter()
            .filter_map(|&(x, y)| Some((self.tx(x, self.log_x)?, self.tx(y, self.log_y)?)))
            .collect()
    }

    /// Axis ranges `(x_min, x_max, y_min, y_max)` in data units, padded and
    /// never degenerate.
    pub fn ranges(&self) -> (f64, f64, f64, f64) {
        let pts: Vec<(f64, f64)> = self.series.iter().flat_map(|s| self.transformed(s)).collect();
        let span = |vals: &mut dyn Iterator<Item = f64>| {
            let (lo, hi) = vals.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
            if !lo.is_finite() {
                return (0.0, 1.0);
            }
            let pad = if hi > lo { 0.05 * (hi - lo) } else { 0.5 * lo.abs().max(1.0) };
            (lo - pad, hi + pad)
        };
        let (x0, x1) = span(&mut pts.iter().map(|p| p.0));
        let (y0, y1) = span(&mut pts.iter().map(|p| p.1));
        let back = |v: f64, log: bool| if log { 10f64.powf(v) } else { v };
        (
            back(x0, self.log_x),
            back(x1, self.log_x),
            back(y0, self.log_y),
            back(y1, self.log_y),
        )
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn num(v: f64) -> String {
    if v == 0.0 {
        "0".into()
    } else if (1e-3..1e4).contains(&v.abs()) {
        let s = format!("{v:.4}");
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        format!("{v:.2e}")
    }
}

/// Renders panels side by side as one SVG document.
pub fn render(title: &str, panels: &[Panel]) -> String {
    let width = PANEL_W * panels.len().max(1) as f64;
    let height = PANEL_H + 20.0;
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(out, "<title>{}</title>", escape(title));
    let _ = writeln!(out, r#"<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>"#);
    for (i, p) in panels.iter().enumerate() {
        render_panel(&mut out, p, i as f64 * PANEL_W);
    }
    out.push_str("</svg>\n");
    out
}

fn render_panel(out: &mut String, p: &Panel, ox: f64) {
    let (x_min, x_max, y_min, y_max) = p.ranges();
    let tx = |v: f64, log: bool| if log { v.log10() } else { v };
    let (ax0, ax1) = (tx(x_min, p.log_x), tx(x_max, p.log_x));
    let (ay0, ay1) = (tx(y_min, p.log_y), tx(y_max, p.log_y));
    let (left, right) = (ox + MARGIN_L, ox + PANEL_W - MARGIN_R);
    let (top, bottom) = (MARGIN_T, PANEL_H - MARGIN_B + 20.0);
    let sx = |x: f64| left + (x - ax0) / (ax1 - ax0) * (right - left);
    let sy = |y: f64| bottom - (y - ay0) / (ay1 - ay0) * (bottom - top);

    let _ = writeln!(
        out,
        r#"<g class="panel" data-x-min="{x_min:e}" data-x-max="{x_max:e}" data-y-min="{y_min:e}" data-y-max="{y_max:e}">"#
    );
    let _ = writeln!(
        out,
        r#"<text x="{:.2}" y="18" text-anchor="middle" font-size="13">{}</text>"#,
        (left + right) / 2.0,
        escape(&p.title)
    );
    let _ = writeln!(
        out,
        r#"<rect x="{left:.2}" y="{top:.2}" width="{:.2}" height="{:.2}" fill="none" stroke="black"/>"#,
        right - left,
        bottom - top
    );
    for k in 0..=4 {
        let f = k as f64 / 4.0;
        let xv = ax0 + f * (ax1 - ax0);
        let yv = ay0 + f * (ay1 - ay0);
        let xl = if p.log_x { 10f64.powf(xv) } else { xv };
        let yl = if p.log_y { 10f64.powf(yv) } else { yv };
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            sx(xv),
            bottom + 14.0,
            num(xl)
        );
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#,
            left - 4.0,
            sy(yv) + 4.0,
            num(yl)
        );
    }
    let _ = writeln!(
        out,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
        (left + right) / 2.0,
        bottom + 30.0,
        escape(&p.x_label)
    );
    let _ = writeln!(
        out,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle" transform="rotate(-90 {:.2} {:.2})">{}</text>"#,
        ox + 14.0,
        (top + bottom) / 2.0,
        ox + 14.0,
        (top + bottom) / 2.0,
        escape(&p.y_label)
    );
    for (si, s) in p.series.iter().enumerate() {
        let color = PALETTE[si % PALETTE.len()];
        let pts = p.transformed(s);
        match s.style {
            Style::Line => {
                let path: Vec<String> = pts.iter().map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y))).collect();
                let _ = writeln!(
                    out,
                    r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
                    path.join(" ")
                );
            }
            Style::Scatter => {
                for &(x, y) in &pts {
                    let _ = writeln!(out, r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{color}"/>"#, sx(x), sy(y));
                }
            }
        }
        let ly = top + 14.0 + 14.0 * si as f64;
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{ly:.2}" fill="{color}">{}</text>"#,
            left + 6.0,
            escape(&s.label)
        );
    }
    out.push_str("</g>\n");
}
