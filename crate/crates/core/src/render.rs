//! Self-contained SVG output for layouts, embeddings, curvature bars, and
//! ellipse overlays. Numbers are printed with fixed precision so identical
//! inputs produce byte-identical files.

use std::fmt::Write as _;

use crate::bench::EllipseSpec;
use crate::curvature::CurvatureReport;
use crate::embed::Embedding2D;
use crate::layout::KeyboardLayout;

const KEY_SIZE: f64 = 48.0;
const KEY_GAP: f64 = 6.0;
const MARGIN: f64 = 24.0;

fn svg_open(out: &mut String, width: f64, height: f64) {
    let _ = writeln!(
        out,
        r##"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0}" height="{height:.0}" viewBox="0 0 {width:.0} {height:.0}">"##
    );
    let _ = writeln!(
        out,
        r##"<rect width="{width:.0}" height="{height:.0}" fill="white"/>"##
    );
}

fn key_origin(row: usize, col: usize) -> (f64, f64) {
    (
        MARGIN + col as f64 * (KEY_SIZE + KEY_GAP),
        MARGIN + row as f64 * (KEY_SIZE + KEY_GAP),
    )
}

/// Keyboard rendering: one rounded rectangle per key with its letter.
pub fn keyboard_svg(layout: &KeyboardLayout) -> String {
    let rows = layout.grid.rows;
    let cols = layout.grid.cols;
    let width = 2.0 * MARGIN + cols as f64 * (KEY_SIZE + KEY_GAP) - KEY_GAP;
    let height = 2.0 * MARGIN + rows as f64 * (KEY_SIZE + KEY_GAP) - KEY_GAP;
    let mut out = String::new();
    svg_open(&mut out, width, height);
    for (letter, &(r, c)) in layout.assignment.iter().enumerate() {
        let (x, y) = key_origin(r, c);
        let _ = writeln!(
            out,
            r##"<rect x="{x:.1}" y="{y:.1}" width="{KEY_SIZE:.1}" height="{KEY_SIZE:.1}" rx="6" fill="#f2f2f2" stroke="#444" stroke-width="1.5"/>"##
        );
        let _ = writeln!(
            out,
            r##"<text x="{:.1}" y="{:.1}" font-family="monospace" font-size="20" text-anchor="middle" dominant-baseline="central">{}</text>"##,
            x + KEY_SIZE / 2.0,
            y + KEY_SIZE / 2.0,
            layout.alphabet.letter(letter)
        );
    }
    out.push_str("</svg>\n");
    out
}

/// Scatter plot of an embedding with letter labels.
pub fn embedding_svg(emb: &Embedding2D) -> String {
    let size = 480.0;
    let span = emb
        .points
        .iter()
        .flat_map(|p| [p[0].abs(), p[1].abs()])
        .fold(1e-9f64, f64::max);
    let scale = (size / 2.0 - MARGIN) / span;
    let mut out = String::new();
    svg_open(&mut out, size, size);
    let _ = writeln!(
        out,
        r##"<line x1="0" y1="{h:.1}" x2="{size:.1}" y2="{h:.1}" stroke="#ddd"/>"##,
        h = size / 2.0
    );
    let _ = writeln!(
        out,
        r##"<line x1="{h:.1}" y1="0" x2="{h:.1}" y2="{size:.1}" stroke="#ddd"/>"##,
        h = size / 2.0
    );
    for (letter, p) in emb.points.iter().enumerate() {
        let x = size / 2.0 + p[0] * scale;
        let y = size / 2.0 - p[1] * scale;
        let _ = writeln!(
            out,
            r##"<circle cx="{x:.2}" cy="{y:.2}" r="4" fill="#2266cc"/>"##
        );
        let _ = writeln!(
            out,
            r##"<text x="{:.2}" y="{:.2}" font-family="monospace" font-size="14">{}</text>"##,
            x + 6.0,
            y - 6.0,
            emb.alphabet.letter(letter)
        );
    }
    out.push_str("</svg>\n");
    out
}

fn ellipse_element(out: &mut String, e: &EllipseSpec, scale: f64, cx: f64, cy: f64, color: &str) {
    let x = cx + e.center[0] * scale;
    let y = cy - e.center[1] * scale;
    let _ = writeln!(
        out,
        r##"<ellipse cx="{x:.2}" cy="{y:.2}" rx="{:.2}" ry="{:.2}" transform="rotate({:.3} {x:.2} {y:.2})" fill="none" stroke="{color}" stroke-width="2"/>"##,
        e.semi_axes[0] * scale,
        e.semi_axes[1] * scale,
        -e.angle.to_degrees(),
    );
}

/// Keyboard rendering with covariance ellipses on top: per-cluster ellipses
/// in green, the whole-layout ellipse in red.
pub fn ellipse_overlay_svg(
    layout: &KeyboardLayout,
    whole: &EllipseSpec,
    clusters: &[EllipseSpec],
) -> String {
    let mut out = keyboard_svg(layout);
    out.truncate(out.len() - "</svg>\n".len());
    // Key grid geometry: cell (r, c) center maps to key_origin + half key.
    let scale = KEY_SIZE + KEY_GAP;
    let cx = MARGIN + KEY_SIZE / 2.0;
    let cy = MARGIN + KEY_SIZE / 2.0;
    for e in clusters {
        ellipse_element(&mut out, e, scale, cx, cy, "green");
    }
    ellipse_element(&mut out, whole, scale, cx, cy, "red");
    out.push_str("</svg>\n");
    out
}

/// Bar chart of the averaged Gauss curvature per letter.
pub fn curvature_bars_svg(report: &CurvatureReport) -> String {
    let n = report.gauss_mean.len();
    let bar = 26.0;
    let width = 2.0 * MARGIN + n as f64 * bar;
    let height = 320.0;
    let baseline = height / 2.0;
    let max_abs = report
        .gauss_mean
        .iter()
        .fold(1e-9f64, |acc, &v| acc.max(v.abs()));
    let scale = (height / 2.0 - MARGIN) / max_abs;
    let mut out = String::new();
    svg_open(&mut out, width, height);
    let _ = writeln!(
        out,
        r##"<line x1="0" y1="{baseline:.1}" x2="{width:.1}" y2="{baseline:.1}" stroke="#888"/>"##
    );
    for (i, &v) in report.gauss_mean.iter().enumerate() {
        let x = MARGIN + i as f64 * bar + 3.0;
        let h = v.abs() * scale;
        let y = if v >= 0.0 { baseline - h } else { baseline };
        let color = if v >= 0.0 { "#2266cc" } else { "#cc4422" };
        let _ = writeln!(
            out,
            r##"<rect x="{x:.2}" y="{y:.2}" width="{:.1}" height="{h:.2}" fill="{color}"/>"##,
            bar - 6.0
        );
        let _ = writeln!(
            out,
            r##"<text x="{:.2}" y="{:.1}" font-family="monospace" font-size="12" text-anchor="middle">{}</text>"##,
            x + (bar - 6.0) / 2.0,
            height - 6.0,
            report.alphabet.letter(i)
        );
    }
    out.push_str("</svg>\n");
    out
}
