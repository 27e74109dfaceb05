//! Minimal SVG rendering for line charts, scatter plots, bar charts and
//! relevance heat strips.

use std::fmt::Write as _;

const PALETTE: [&str; 10] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf",
];

pub fn color(i: usize) -> &'static str {
    PALETTE[i % PALETTE.len()]
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

impl Series {
    pub fn new(name: &str, points: Vec<(f64, f64)>) -> Self {
        Series {
            name: name.to_string(),
            points,
        }
    }

    /// Points at x = 0, 1, 2, ...
    pub fn indexed(name: &str, ys: &[f64]) -> Self {
        Series::new(name, ys.iter().enumerate().map(|(i, &y)| (i as f64, y)).collect())
    }
}

#[derive(Debug, Clone, Copy)]
struct Bounds {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

impl Bounds {
    fn of(points: impl Iterator<Item = (f64, f64)>) -> Bounds {
        let mut b = Bounds {
            x0: f64::INFINITY,
            x1: f64::NEG_INFINITY,
            y0: f64::INFINITY,
            y1: f64::NEG_INFINITY,
        };
        for (x, y) in points.filter(|(x, y)| x.is_finite() && y.is_finite()) {
            b.x0 = b.x0.min(x);
            b.x1 = b.x1.max(x);
            b.y0 = b.y0.min(y);
            b.y1 = b.y1.max(y);
        }
        if !b.x0.is_finite() {
            return Bounds { x0: 0.0, x1: 1.0, y0: 0.0, y1: 1.0 };
        }
        if b.x1 == b.x0 {
            b.x0 -= 0.5;
            b.x1 += 0.5;
        }
        if b.y1 == b.y0 {
            b.y0 -= 0.5;
            b.y1 += 0.5;
        }
        let pad = 0.05 * (b.y1 - b.y0);
        b.y0 -= pad;
        b.y1 += pad;
        b
    }
}

/// A plotting area inside a larger document.
#[derive(Debug, Clone, Copy)]
struct Panel {
    left: f64,
    top: f64,
    width: f64,
    height: f64,
    bounds: Bounds,
}

impl Panel {
    fn x(&self, v: f64) -> f64 {
        self.left + (v - self.bounds.x0) / (self.bounds.x1 - self.bounds.x0) * self.width
    }

    fn y(&self, v: f64) -> f64 {
        self.top + self.height - (v - self.bounds.y0) / (self.bounds.y1 - self.bounds.y0) * self.height
    }

    fn frame(&self, out: &mut String, title: &str, x_label: &str, y_label: &str) {
        let (l, t, w, h) = (self.left, self.top, self.width, self.height);
        let _ = writeln!(out, r##"<rect x="{l:.2}" y="{t:.2}" width="{w:.2}" height="{h:.2}" fill="none" stroke="#333"/>"##);
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" font-size="13" text-anchor="middle">{}</text>"#,
            l + w / 2.0,
            t - 8.0,
            escape(title)
        );
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" font-size="11" text-anchor="middle">{}</text>"#,
            l + w / 2.0,
            t + h + 30.0,
            escape(x_label)
        );
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" font-size="11" text-anchor="middle" transform="rotate(-90 {:.2} {:.2})">{}</text>"#,
            l - 42.0,
            t + h / 2.0,
            l - 42.0,
            t + h / 2.0,
            escape(y_label)
        );
        let b = self.bounds;
        for (v, anchor, x, y) in [
            (b.x0, "start", l, t + h + 14.0),
            (b.x1, "end", l + w, t + h + 14.0),
        ] {
            let _ = writeln!(out, r#"<text x="{x:.2}" y="{y:.2}" font-size="10" text-anchor="{anchor}">{}</text>"#, tick(v));
        }
        for (v, y) in [(b.y0, t + h), (b.y1, t + 10.0)] {
            let _ = writeln!(
                out,
                r#"<text x="{:.2}" y="{y:.2}" font-size="10" text-anchor="end">{}</text>"#,
                l - 4.0,
                tick(v)
            );
        }
    }

    fn polyline(&self, out: &mut String, points: &[(f64, f64)], stroke: &str) {
        let path: Vec<String> = points
            .iter()
            .filter(|(x, y)| x.is_finite() && y.is_finite())
            .map(|&(x, y)| format!("{:.2},{:.2}", self.x(x), self.y(y)))
            .collect();
        let _ = writeln!(
            out,
            r#"<polyline fill="none" stroke="{stroke}" stroke-width="1.5" points="{}"/>"#,
            path.join(" ")
        );
    }
}

fn tick(v: f64) -> String {
    if v != 0.0 && (v.abs() >= 1e4 || v.abs() < 1e-2) {
        format!("{v:.2e}")
    } else {
        format!("{v:.3}")
    }
}

fn document(width: f64, height: f64, body: &str) -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" viewBox=\"0 0 {width} {height}\" font-family=\"sans-serif\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n{body}</svg>\n"
    )
}

fn legend(out: &mut String, names: &[String], x: f64, y: f64) {
    for (i, name) in names.iter().enumerate() {
        let yy = y + 14.0 * i as f64;
        let _ = writeln!(
            out,
            r#"<rect x="{x:.2}" y="{:.2}" width="10" height="10" fill="{}"/><text x="{:.2}" y="{:.2}" font-size="10">{}</text>"#,
            yy - 9.0,
            color(i),
            x + 14.0,
            yy,
            escape(name)
        );
    }
}

const W: f64 = 640.0;
const H: f64 = 300.0;
const MARGIN_L: f64 = 70.0;
const MARGIN_R: f64 = 120.0;
const MARGIN_T: f64 = 30.0;
const MARGIN_B: f64 = 45.0;

/// One panel with every series overlaid.
pub fn line_chart(title: &str, x_label: &str, y_label: &str, series: &[Series]) -> String {
    let bounds = Bounds::of(series.iter().flat_map(|s| s.points.iter().copied()));
    let panel = Panel {
        left: MARGIN_L,
        top: MARGIN_T,
        width: W - MARGIN_L - MARGIN_R,
        height: H - MARGIN_T - MARGIN_B,
        bounds,
    };
    let mut body = String::new();
    panel.frame(&mut body, title, x_label, y_label);
    for (i, s) in series.iter().enumerate() {
        panel.polyline(&mut body, &s.points, color(i));
    }
    let names: Vec<String> = series.iter().map(|s| s.name.clone()).collect();
    legend(&mut body, &names, W - MARGIN_R + 10.0, MARGIN_T + 10.0);
    document(W, H, &body)
}

/// Vertically stacked panels sharing the x axis, one series each.
pub fn stacked_lines(title: &str, x_label: &str, panels: &[Series]) -> String {
    let panel_h = 150.0;
    let gap = 50.0;
    let height = MARGIN_T + panels.len() as f64 * (panel_h + gap) + 10.0;
    let mut body = String::new();
    let _ = writeln!(
        body,
        r#"<text x="{:.2}" y="16" font-size="14" text-anchor="middle">{}</text>"#,
        W / 2.0,
        escape(title)
    );
    for (i, s) in panels.iter().enumerate() {
        let panel = Panel {
            left: MARGIN_L,
            top: MARGIN_T + 20.0 + i as f64 * (panel_h + gap),
            width: W - MARGIN_L - 30.0,
            height: panel_h,
            bounds: Bounds::of(s.points.iter().copied()),
        };
        panel.frame(&mut body, &s.name, if i + 1 == panels.len() { x_label } else { "" }, "");
        panel.polyline(&mut body, &s.points, color(i));
    }
    document(W, height, &body)
}

/// Points colored by group id; `names` labels the groups in the legend.
pub fn scatter(title: &str, x_label: &str, y_label: &str, points: &[(f64, f64, usize)], names: &[String]) -> String {
    let bounds = Bounds::of(points.iter().map(|&(x, y, _)| (x, y)));
    let panel = Panel {
        left: MARGIN_L,
        top: MARGIN_T,
        width: W - MARGIN_L - MARGIN_R,
        height: 400.0,
        bounds,
    };
    let mut body = String::new();
    panel.frame(&mut body, title, x_label, y_label);
    for &(x, y, g) in points.iter().filter(|(x, y, _)| x.is_finite() && y.is_finite()) {
        let _ = writeln!(
            body,
            r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{}" fill-opacity="0.75"/>"#,
            panel.x(x),
            panel.y(y),
            color(g)
        );
    }
    legend(&mut body, names, W - MARGIN_R + 10.0, MARGIN_T + 10.0);
    document(W, MARGIN_T + 400.0 + MARGIN_B, &body)
}

/// Vertical bars from zero, one per label.
pub fn bar_chart(title: &str, x_label: &str, y_label: &str, bars: &[(String, f64)]) -> String {
    let top = bars.iter().map(|b| b.1).fold(0.0f64, f64::max);
    let bottom = bars.iter().map(|b| b.1).fold(0.0f64, f64::min);
    let panel = Panel {
        left: MARGIN_L,
        top: MARGIN_T,
        width: W - MARGIN_L - 30.0,
        height: H - MARGIN_T - MARGIN_B,
        bounds: Bounds {
            x0: 0.0,
            x1: bars.len().max(1) as f64,
            y0: bottom,
            y1: if top > bottom { top * 1.05 } else { bottom + 1.0 },
        },
    };
    let mut body = String::new();
    panel.frame(&mut body, title, x_label, y_label);
    for (i, (label, v)) in bars.iter().enumerate() {
        let x = panel.x(i as f64 + 0.15);
        let w = panel.x(i as f64 + 0.85) - x;
        let (y_top, y_zero) = (panel.y(v.max(0.0)), panel.y(v.min(0.0)));
        let _ = writeln!(
            body,
            r#"<rect x="{x:.2}" y="{y_top:.2}" width="{w:.2}" height="{:.2}" fill="{}"/>"#,
            (y_zero - y_top).max(0.0),
            color(0)
        );
        let _ = writeln!(
            body,
            r#"<text x="{:.2}" y="{:.2}" font-size="10" text-anchor="middle">{}</text>"#,
            x + w / 2.0,
            panel.top + panel.height + 14.0,
            escape(label)
        );
        let _ = writeln!(
            body,
            r#"<text x="{:.2}" y="{:.2}" font-size="10" text-anchor="middle">{v:.3}</text>"#,
            x + w / 2.0,
            y_top - 3.0
        );
    }
    document(W, H, &body)
}

/// One row per spectrum: the trace on top of a strip whose opacity follows
/// the relevance (values in `[0, 1]`, same length as the spectrum).
pub fn heat_strips(title: &str, rows: &[(String, Vec<f64>, Vec<f64>)]) -> String {
    let row_h = 110.0;
    let strip_h = 14.0;
    let height = MARGIN_T + rows.len() as f64 * (row_h + 40.0) + 10.0;
    let mut body = String::new();
    let _ = writeln!(
        body,
        r#"<text x="{:.2}" y="16" font-size="14" text-anchor="middle">{}</text>"#,
        W / 2.0,
        escape(title)
    );
    for (r, (name, spectrum, relevance)) in rows.iter().enumerate() {
        let top = MARGIN_T + 20.0 + r as f64 * (row_h + 40.0);
        let panel = Panel {
            left: MARGIN_L,
            top,
            width: W - MARGIN_L - 30.0,
            height: row_h - strip_h - 4.0,
            bounds: Bounds::of(spectrum.iter().enumerate().map(|(i, &v)| (i as f64, v))),
        };
        let n = spectrum.len().max(1) as f64;
        let cell = panel.width / n;
        for (i, &v) in relevance.iter().enumerate() {
            if v > 0.0 {
                let x = panel.left + i as f64 * cell;
                let _ = writeln!(
                    body,
                    r#"<rect x="{x:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="{}" fill-opacity="{:.3}"/>"#,
                    top,
                    cell + 0.1,
                    row_h,
                    color(1),
                    0.5 * v.clamp(0.0, 1.0)
                );
                let _ = writeln!(
                    body,
                    r#"<rect x="{x:.2}" y="{:.2}" width="{:.2}" height="{strip_h}" fill="{}" fill-opacity="{:.3}"/>"#,
                    top + row_h - strip_h,
                    cell + 0.1,
                    color(1),
                    v.clamp(0.0, 1.0)
                );
            }
        }
        panel.frame(&mut body, name, "", "");
        let pts: Vec<(f64, f64)> = spectrum.iter().enumerate().map(|(i, &v)| (i as f64, v)).collect();
        panel.polyline(&mut body, &pts, color(0));
    }
    document(W, height, &body)
}
