//! Minimal static SVG plots: scatter grids and heat grids.

use std::fmt::Write;

const PANEL: f64 = 180.0;
const MARGIN: f64 = 40.0;

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[derive(Debug, Clone, PartialEq)]
pub struct Panel {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub points: Vec<(f64, f64)>,
}

fn extent(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
        (lo.min(v), hi.max(v))
    });
    if !lo.is_finite() {
        (0.0, 1.0)
    } else if lo == hi {
        (lo - 0.5, hi + 0.5)
    } else {
        (lo, hi)
    }
}

/// A grid of scatter panels, `columns` per row.
pub fn scatter_grid(title: &str, panels: &[Panel], columns: usize) -> String {
    let columns = columns.max(1);
    let rows = panels.len().div_ceil(columns).max(1);
    let cell = PANEL + MARGIN;
    let width = columns as f64 * cell + MARGIN;
    let height = rows as f64 * cell + 2.0 * MARGIN;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" font-size="9">"#
    );
    let _ = writeln!(s, r#"<text x="{}" y="20" font-size="13" text-anchor="middle">{}</text>"#, width / 2.0, escape(title));
    for (i, p) in panels.iter().enumerate() {
        let ox = MARGIN + (i % columns) as f64 * cell;
        let oy = 2.0 * MARGIN + (i / columns) as f64 * cell;
        let (x0, x1) = extent(p.points.iter().map(|q| q.0));
        let (y0, y1) = extent(p.points.iter().map(|q| q.1));
        let _ = writeln!(s, r#"<g transform="translate({ox},{oy})">"#);
        let _ = writeln!(s, r##"<rect width="{PANEL}" height="{PANEL}" fill="none" stroke="#888"/>"##);
        let _ = writeln!(s, r#"<text x="{}" y="-4" text-anchor="middle">{}</text>"#, PANEL / 2.0, escape(&p.title));
        let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, PANEL / 2.0, PANEL + 12.0, escape(&p.x_label));
        let _ = writeln!(
            s,
            r#"<text transform="translate(-6,{}) rotate(-90)" text-anchor="middle">{}</text>"#,
            PANEL / 2.0,
            escape(&p.y_label)
        );
        for &(x, y) in &p.points {
            let px = (x - x0) / (x1 - x0) * PANEL;
            let py = PANEL - (y - y0) / (y1 - y0) * PANEL;
            let _ = writeln!(s, r##"<circle cx="{px:.2}" cy="{py:.2}" r="1.6" fill="#1f77b4" fill-opacity="0.6"/>"##);
        }
        s.push_str("</g>\n");
    }
    s.push_str("</svg>\n");
    s
}

fn color(v: f64, max_abs: f64) -> String {
    let t = if max_abs > 0.0 { (v / max_abs).clamp(-1.0, 1.0) } else { 0.0 };
    let (r, g, b) = if t >= 0.0 {
        (255.0 * (1.0 - t), 255.0 * (1.0 - 0.5 * t), 255.0)
    } else {
        (255.0, 255.0 * (1.0 + 0.5 * t), 255.0 * (1.0 + t))
    };
    format!("rgb({},{},{})", r.round() as u8, g.round() as u8, b.round() as u8)
}

/// A labelled heat grid; missing cells are grey.
pub fn heat_grid(title: &str, rows: &[String], cols: &[String], values: &[Vec<Option<f64>>]) -> String {
    let cw = 56.0;
    let ch = 20.0;
    let left = 150.0;
    let top = 110.0;
    let width = left + cols.len() as f64 * cw + 20.0;
    let height = top + rows.len() as f64 * ch + 20.0;
    let max_abs = values
        .iter()
        .flatten()
        .flatten()
        .fold(0.0f64, |m, v| m.max(v.abs()));
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" font-size="9">"#
    );
    let _ = writeln!(s, r#"<text x="{}" y="16" font-size="13" text-anchor="middle">{}</text>"#, width / 2.0, escape(title));
    for (j, c) in cols.iter().enumerate() {
        let x = left + (j as f64 + 0.5) * cw;
        let _ = writeln!(
            s,
            r#"<text transform="translate({x},{}) rotate(-60)">{}</text>"#,
            top - 4.0,
            escape(c)
        );
    }
    for (i, r) in rows.iter().enumerate() {
        let y = top + i as f64 * ch;
        let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">{}</text>"#, left - 4.0, y + 13.0, escape(r));
        for j in 0..cols.len() {
            let x = left + j as f64 * cw;
            let v = values.get(i).and_then(|row| row.get(j)).copied().flatten();
            let (fill, label) = match v {
                Some(v) => (color(v, max_abs), format!("{v:.2}")),
                None => ("#ccc".to_string(), "NA".to_string()),
            };
            let _ = writeln!(s, r##"<rect x="{x}" y="{y}" width="{cw}" height="{ch}" fill="{fill}" stroke="#fff"/>"##);
            let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{label}</text>"#, x + cw / 2.0, y + 13.0);
        }
    }
    s.push_str("</svg>\n");
    s
}
