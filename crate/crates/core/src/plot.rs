//! Minimal SVG charts.
//!
//! Scatter plots draw exactly one `<circle>` per data point; legends use `<rect>`
//! swatches, so counting circles counts points.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::stats::GroupSummary;

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 480.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 190.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 60.0;

const PALETTE: [&str; 16] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22",
    "#17becf", "#393b79", "#637939", "#8c6d31", "#843c39", "#7b4173", "#000000",
];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// Data range padded by 5%; a zero-width range is widened to ±0.5.
fn padded_range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
        (lo.min(v), hi.max(v))
    });
    if !lo.is_finite() || !hi.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-12 {
        return (lo - 0.5, hi + 0.5);
    }
    let pad = 0.05 * (hi - lo);
    (lo - pad, hi + pad)
}

struct Frame {
    x: (f64, f64),
    y: (f64, f64),
}

impl Frame {
    fn px(&self, x: f64) -> f64 {
        LEFT + (x - self.x.0) / (self.x.1 - self.x.0) * (WIDTH - LEFT - RIGHT)
    }

    fn py(&self, y: f64) -> f64 {
        HEIGHT - BOTTOM - (y - self.y.0) / (self.y.1 - self.y.0) * (HEIGHT - TOP - BOTTOM)
    }

    fn axes(&self, out: &mut String, title: &str, x_label: &str, y_label: &str) {
        let (x0, x1) = (LEFT, WIDTH - RIGHT);
        let (y0, y1) = (HEIGHT - BOTTOM, TOP);
        writeln!(
            out,
            r#"<line x1="{x0}" y1="{y0}" x2="{x1}" y2="{y0}" stroke="black"/><line x1="{x0}" y1="{y0}" x2="{x0}" y2="{y1}" stroke="black"/>"#
        )
        .unwrap();
        for i in 0..=4 {
            let t = f64::from(i) / 4.0;
            let xv = self.x.0 + t * (self.x.1 - self.x.0);
            let yv = self.y.0 + t * (self.y.1 - self.y.0);
            let (px, py) = (self.px(xv), self.py(yv));
            writeln!(
                out,
                r#"<text x="{px:.1}" y="{:.1}" font-size="11" text-anchor="middle">{xv:.3}</text><text x="{:.1}" y="{py:.1}" font-size="11" text-anchor="end">{yv:.3}</text>"#,
                y0 + 16.0,
                x0 - 6.0
            )
            .unwrap();
        }
        writeln!(
            out,
            r#"<text x="{:.1}" y="24" font-size="15" text-anchor="middle">{}</text>"#,
            (x0 + x1) / 2.0,
            escape(title)
        )
        .unwrap();
        writeln!(
            out,
            r#"<text x="{:.1}" y="{:.1}" font-size="13" text-anchor="middle">{}</text>"#,
            (x0 + x1) / 2.0,
            HEIGHT - 15.0,
            escape(x_label)
        )
        .unwrap();
        writeln!(
            out,
            r#"<text x="18" y="{:.1}" font-size="13" text-anchor="middle" transform="rotate(-90 18 {:.1})">{}</text>"#,
            (y0 + y1) / 2.0,
            (y0 + y1) / 2.0,
            escape(y_label)
        )
        .unwrap();
    }
}

fn header() -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" viewBox=\"0 0 {WIDTH} {HEIGHT}\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
    )
}

/// Group mean score (x) against group accuracy (y), colored by corruption.
pub fn scatter_svg(groups: &[GroupSummary], title: &str, x_label: &str, y_label: &str) -> String {
    let frame = Frame {
        x: padded_range(groups.iter().map(|g| g.mean_q)),
        y: padded_range(groups.iter().map(|g| g.mean_m)),
    };
    let mut colors: BTreeMap<&str, &str> = BTreeMap::new();
    for g in groups {
        let next = PALETTE[colors.len() % PALETTE.len()];
        colors.entry(g.key.corruption.as_str()).or_insert(next);
    }
    let mut out = header();
    frame.axes(&mut out, title, x_label, y_label);
    for g in groups {
        writeln!(
            out,
            r#"<circle cx="{:.2}" cy="{:.2}" r="4" fill="{}"><title>{} s{}: q={:.4} acc={:.4} n={}</title></circle>"#,
            frame.px(g.mean_q),
            frame.py(g.mean_m),
            colors[g.key.corruption.as_str()],
            escape(&g.key.corruption),
            g.key.severity,
            g.mean_q,
            g.mean_m,
            g.n
        )
        .unwrap();
    }
    for (i, (name, color)) in colors.iter().enumerate() {
        let y = TOP + 14.0 * i as f64;
        writeln!(
            out,
            r#"<rect x="{:.1}" y="{:.1}" width="9" height="9" fill="{color}"/><text x="{:.1}" y="{:.1}" font-size="11">{}</text>"#,
            WIDTH - RIGHT + 14.0,
            y,
            WIDTH - RIGHT + 28.0,
            y + 8.5,
            escape(name)
        )
        .unwrap();
    }
    out.push_str("</svg>\n");
    out
}

/// One polyline through `points`, sorted by x.
pub fn line_svg(points: &[(f64, f64)], title: &str, x_label: &str, y_label: &str) -> String {
    let mut pts = points.to_vec();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    let frame = Frame {
        x: padded_range(pts.iter().map(|p| p.0)),
        y: padded_range(pts.iter().map(|p| p.1)),
    };
    let mut out = header();
    frame.axes(&mut out, title, x_label, y_label);
    let path: Vec<String> = pts
        .iter()
        .map(|&(x, y)| format!("{:.2},{:.2}", frame.px(x), frame.py(y)))
        .collect();
    writeln!(
        out,
        r##"<polyline points="{}" fill="none" stroke="#1f77b4" stroke-width="2"/>"##,
        path.join(" ")
    )
    .unwrap();
    out.push_str("</svg>\n");
    out
}
