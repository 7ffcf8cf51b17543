//! Minimal SVG bar charts for accuracy and timing reports.

use std::fmt::Write as _;

/// Escapes text for use inside SVG elements and attributes.
fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Vertical bar chart, one bar per `(label, value)`, with the y axis running
/// from 0 to `max` (or the largest value when `max` is `None`).
pub fn bar_chart(title: &str, unit: &str, bars: &[(String, f64)], max: Option<f64>) -> String {
    let (w, h) = (120 + 90 * bars.len().max(1), 360usize);
    let (left, bottom, top) = (60.0, 300.0, 40.0);
    let top_value = max
        .unwrap_or_else(|| bars.iter().map(|b| b.1).fold(0.0, f64::max))
        .max(f64::MIN_POSITIVE);
    let mut out = String::new();
    writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="12">"#
    )
    .unwrap();
    writeln!(out, r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{}</text>"#, w / 2, esc(title)).unwrap();
    writeln!(out, r#"<line x1="{left}" y1="{top}" x2="{left}" y2="{bottom}" stroke="black"/>"#).unwrap();
    writeln!(out, r#"<line x1="{left}" y1="{bottom}" x2="{}" y2="{bottom}" stroke="black"/>"#, w - 20).unwrap();
    for tick in 0..=4 {
        let v = top_value * tick as f64 / 4.0;
        let y = bottom - (bottom - top) * tick as f64 / 4.0;
        writeln!(
            out,
            r#"<text x="{}" y="{:.1}" text-anchor="end">{:.1}{}</text>"#,
            left - 6.0,
            y + 4.0,
            v,
            esc(unit)
        )
        .unwrap();
    }
    for (i, (label, value)) in bars.iter().enumerate() {
        let x = left + 20.0 + 90.0 * i as f64;
        let bh = (bottom - top) * (value / top_value).clamp(0.0, 1.0);
        writeln!(
            out,
            r##"<rect x="{x:.1}" y="{:.1}" width="60" height="{bh:.1}" fill="#4a7ab5"/>"##,
            bottom - bh
        )
        .unwrap();
        writeln!(
            out,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{value:.2}</text>"#,
            x + 30.0,
            bottom - bh - 4.0
        )
        .unwrap();
        writeln!(
            out,
            r#"<text x="{:.1}" y="{}" text-anchor="middle">{}</text>"#,
            x + 30.0,
            bottom + 16.0,
            esc(label)
        )
        .unwrap();
    }
    out.push_str("</svg>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_rect_per_bar_and_escaped_labels() {
        let svg = bar_chart("acc", "%", &[("a<b".into(), 50.0), ("c".into(), 100.0)], Some(100.0));
        assert_eq!(svg.matches("<rect").count(), 2);
        assert!(svg.contains("a&lt;b"));
        assert!(svg.starts_with("<svg"));
    }
}
