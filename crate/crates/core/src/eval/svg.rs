//! Minimal SVG box plot, one horizontal box per system.

use std::fmt::Write;

use super::Summary;

const WIDTH: f64 = 640.0;
const LEFT: f64 = 140.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 40.0;
const ROW: f64 = 40.0;

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

/// Whiskers span min..max, the box q1..q3, with a median line. The axis
/// always starts at 0 and ends at the largest maximum (at least 0.1).
pub fn render_box_plot(title: &str, rows: &[(&str, Summary)]) -> String {
    let hi = rows.iter().map(|(_, s)| s.max).fold(0.1, f64::max);
    let plot_w = WIDTH - LEFT - RIGHT;
    let x = |v: f64| LEFT + plot_w * (v / hi);
    let height = TOP + ROW * rows.len() as f64 + 40.0;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{height}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(
        s,
        r#"<text x="{}" y="20" text-anchor="middle">{}</text>"#,
        WIDTH / 2.0,
        escape(title)
    );
    for (i, (name, q)) in rows.iter().enumerate() {
        let cy = TOP + ROW * i as f64 + ROW / 2.0;
        let (y0, y1) = (cy - 10.0, cy + 10.0);
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="end">{}</text>"#,
            LEFT - 8.0,
            cy + 4.0,
            escape(name)
        );
        let _ = writeln!(
            s,
            r#"<line x1="{:.1}" y1="{cy}" x2="{:.1}" y2="{cy}" stroke="black"/>"#,
            x(q.min),
            x(q.max)
        );
        let _ = writeln!(
            s,
            r#"<rect x="{:.1}" y="{y0}" width="{:.1}" height="20" fill="lightsteelblue" stroke="black"/>"#,
            x(q.q1),
            (x(q.q3) - x(q.q1)).max(0.5)
        );
        let _ = writeln!(
            s,
            r#"<line x1="{m:.1}" y1="{y0}" x2="{m:.1}" y2="{y1}" stroke="black" stroke-width="2"/>"#,
            m = x(q.median)
        );
    }
    let axis_y = TOP + ROW * rows.len() as f64 + 5.0;
    let _ = writeln!(
        s,
        r#"<line x1="{LEFT}" y1="{axis_y}" x2="{:.1}" y2="{axis_y}" stroke="black"/>"#,
        x(hi)
    );
    for k in 0..=4 {
        let v = hi * k as f64 / 4.0;
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{}" text-anchor="middle">{v:.2}</text>"#,
            x(v),
            axis_y + 16.0
        );
    }
    s.push_str("</svg>\n");
    s
}
