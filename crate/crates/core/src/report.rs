//! Scatter-plot SVG output and small helpers for report tables.

use std::fmt::Write as _;
use std::io::{self, Write};

use crate::geometry::Projection;

const WIDTH: f64 = 800.0;
const HEIGHT: f64 = 600.0;
const MARGIN: f64 = 40.0;

/// Fill colors, cycled by cluster id.
pub const PALETTE: [&str; 20] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf",
    "#aec7e8", "#ffbb78", "#98df8a", "#ff9896", "#c5b0d5", "#c49c94", "#f7b6d2", "#c7c7c7", "#dbdb8d", "#9edae5",
];

pub(crate) fn escape_xml(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            c if (c as u32) < 0x20 && c != '\t' && c != '\n' && c != '\r' => out.push(' '),
            c => out.push(c),
        }
    }
    out
}

/// Replaces tabs and line breaks so free text fits in one TSV cell.
pub fn tsv_cell(s: &str) -> String {
    s.chars()
        .map(|c| if c == '\t' || c == '\n' || c == '\r' { ' ' } else { c })
        .collect()
}

/// Renders a projection as a standalone SVG: one labeled circle per
/// point, filled by cluster. Coordinates are written with six decimals.
pub fn emit_scatter_svg<W: Write>(
    mut out: W,
    points: &Projection,
    clusters: Option<&[usize]>,
    title: &str,
) -> io::Result<()> {
    if points.is_empty() {
        return Err(io::Error::new(io::ErrorKind::InvalidInput, "empty projection"));
    }
    if clusters.is_some_and(|c| c.len() != points.len()) {
        return Err(io::Error::new(
            io::ErrorKind::InvalidInput,
            "one cluster id per point is required",
        ));
    }
    let (mut min_x, mut max_x, mut min_y, mut max_y) =
        (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for [x, y] in &points.coords {
        min_x = min_x.min(*x);
        max_x = max_x.max(*x);
        min_y = min_y.min(*y);
        max_y = max_y.max(*y);
    }
    let scale = |v: f64, lo: f64, hi: f64, span: f64| {
        if hi > lo {
            MARGIN + (v - lo) / (hi - lo) * (span - 2.0 * MARGIN)
        } else {
            span / 2.0
        }
    };

    let mut svg = String::new();
    let _ = writeln!(svg, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    );
    let _ = writeln!(svg, "<title>{}</title>", escape_xml(title));
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(svg, r#"<g font-family="sans-serif" font-size="10">"#);
    for (i, (label, [x, y])) in points.labels.iter().zip(&points.coords).enumerate() {
        let cx = scale(*x, min_x, max_x, WIDTH);
        // SVG y grows downwards.
        let cy = HEIGHT - scale(*y, min_y, max_y, HEIGHT);
        let color = PALETTE[clusters.map_or(0, |c| c[i]) % PALETTE.len()];
        let _ = writeln!(svg, r#"<circle cx="{cx:.6}" cy="{cy:.6}" r="4" fill="{color}"/>"#);
        let _ = writeln!(
            svg,
            r#"<text x="{:.6}" y="{:.6}">{}</text>"#,
            cx + 5.0,
            cy - 5.0,
            escape_xml(label)
        );
    }
    let _ = writeln!(svg, "</g>");
    let _ = writeln!(svg, "</svg>");
    out.write_all(svg.as_bytes())
}
