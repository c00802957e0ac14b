//! Static SVG line charts of an original beat against its reconstruction.

use std::fmt::Write;

use ecglatent_core::preprocess::{XyzBeat, BEAT_LEN, XYZ_LEADS};

const PANEL_W: f64 = 320.0;
const PANEL_H: f64 = 220.0;
const MARGIN: f64 = 30.0;

fn polyline(out: &mut String, values: &[f64], x0: f64, lo: f64, hi: f64, colour: &str) {
    let span = (hi - lo).max(1e-12);
    let _ = write!(out, r#"<polyline fill="none" stroke="{colour}" stroke-width="1" points=""#);
    for (i, v) in values.iter().enumerate() {
        let x = x0 + MARGIN + i as f64 / (values.len() - 1).max(1) as f64 * (PANEL_W - 2.0 * MARGIN);
        let y = MARGIN + (hi - v) / span * (PANEL_H - 2.0 * MARGIN);
        let _ = write!(out, "{x:.2},{y:.2} ");
    }
    out.push_str("\"/>\n");
}

/// One panel per lead; original in black, reconstruction in red.
pub fn beat_comparison(title: &str, original: &XyzBeat, reconstruction: &XyzBeat) -> String {
    let width = PANEL_W * 3.0;
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{h}" viewBox="0 0 {width} {h}" font-family="sans-serif" font-size="11">"#,
        h = PANEL_H + 20.0
    );
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(out, r#"<text x="{:.1}" y="14" text-anchor="middle">{}</text>"#, width / 2.0, escape(title));
    for lead in 0..3 {
        let x0 = lead as f64 * PANEL_W;
        let (a, b) = (original.lead(lead), reconstruction.lead(lead));
        let lo = a.iter().chain(b).copied().fold(f64::INFINITY, f64::min);
        let hi = a.iter().chain(b).copied().fold(f64::NEG_INFINITY, f64::max);
        let _ = writeln!(
            out,
            r##"<rect x="{:.1}" y="{MARGIN}" width="{:.1}" height="{:.1}" fill="none" stroke="#999"/>"##,
            x0 + MARGIN,
            PANEL_W - 2.0 * MARGIN,
            PANEL_H - 2.0 * MARGIN
        );
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{} (µV, 0–{} ms)</text>"#,
            x0 + PANEL_W / 2.0,
            PANEL_H - 8.0,
            XYZ_LEADS[lead],
            BEAT_LEN
        );
        polyline(&mut out, a, x0, lo, hi, "black");
        polyline(&mut out, b, x0, lo, hi, "red");
    }
    out.push_str("</svg>\n");
    out
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn three_panels_two_lines_each() {
        let a = XyzBeat::new("a", (0..XyzBeat::LEN).map(|i| (i as f64 * 0.01).sin()).collect()).unwrap();
        let b = a.map(|_, v| v * 0.9);
        let svg = beat_comparison("SAE <a>", &a, &b);
        assert!(svg.starts_with("<svg"));
        assert!(svg.trim_end().ends_with("</svg>"));
        assert_eq!(svg.matches("<polyline").count(), 6);
        assert!(svg.contains("SAE &lt;a&gt;"));
        assert!(!svg.contains("NaN"));
    }

    #[test]
    fn flat_beat_does_not_divide_by_zero() {
        let a = XyzBeat::zeros("z");
        assert!(!beat_comparison("flat", &a, &a).contains("NaN"));
    }
}
