//! Choropleth of a lattice: cells filled by a per-area value, boundary
//! edges drawn as thick strokes between cells.

use std::fmt::Write as _;

use boundary_core::inference::BoundaryGraph;
use boundary_core::scenarios::GridGeometry;

const CELL: f64 = 60.0;
const MARGIN: f64 = 10.0;

/// Blue-to-yellow ramp over `t` in `[0, 1]`.
fn colour(t: f64) -> String {
    let t = if t.is_finite() { t.clamp(0.0, 1.0) } else { 0.5 };
    let lerp = |a: f64, b: f64| (a + (b - a) * t).round() as u8;
    format!("#{:02x}{:02x}{:02x}", lerp(43.0, 253.0), lerp(74.0, 231.0), lerp(156.0, 37.0))
}

pub fn grid_map(geometry: GridGeometry, values: &[f64], boundary: &BoundaryGraph, labels: &[String]) -> String {
    let (lo, hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let span = if hi > lo { hi - lo } else { 1.0 };
    let width = geometry.cols as f64 * CELL + 2.0 * MARGIN;
    let height = geometry.rows as f64 * CELL + 2.0 * MARGIN;
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">"#
    );
    // row 0 is drawn at the bottom so that y grows upward as in the unit square
    let origin = |area: usize| {
        let (r, c) = geometry.position(area);
        (MARGIN + c as f64 * CELL, MARGIN + (geometry.rows - 1 - r) as f64 * CELL)
    };
    for (area, &v) in values.iter().enumerate() {
        let (x, y) = origin(area);
        let _ = writeln!(
            out,
            r##"  <rect x="{x}" y="{y}" width="{CELL}" height="{CELL}" fill="{}" stroke="#ffffff" stroke-width="1"><title>{}: {v:.4}</title></rect>"##,
            colour((v - lo) / span),
            labels.get(area).map_or_else(|| area.to_string(), |s| escape(s)),
        );
    }
    for &(i, j) in &boundary.edges {
        let (xi, yi) = origin(i);
        let (ri, ci) = geometry.position(i);
        let (rj, cj) = geometry.position(j);
        let (x1, y1, x2, y2) = if ri == rj && ci.abs_diff(cj) == 1 {
            let x = if cj > ci { xi + CELL } else { xi };
            (x, yi, x, yi + CELL)
        } else if ci == cj && ri.abs_diff(rj) == 1 {
            let y = if rj > ri { yi } else { yi + CELL };
            (xi, y, xi + CELL, y)
        } else {
            // not lattice neighbours: join the centres
            let (xj, yj) = origin(j);
            (xi + CELL / 2.0, yi + CELL / 2.0, xj + CELL / 2.0, yj + CELL / 2.0)
        };
        let _ = writeln!(
            out,
            r##"  <line x1="{x1}" y1="{y1}" x2="{x2}" y2="{y2}" stroke="#d7191c" stroke-width="4" stroke-linecap="round"/>"##
        );
    }
    out.push_str("</svg>\n");
    out
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
