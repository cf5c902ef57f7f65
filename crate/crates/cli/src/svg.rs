//! Static interval band chart.

use std::fmt::Write as _;

const WIDTH: f64 = 900.0;
const HEIGHT: f64 = 360.0;
const MARGIN: f64 = 48.0;

fn points(xs: impl Iterator<Item = (f64, f64)>) -> String {
    let mut s = String::new();
    for (i, (x, y)) in xs.enumerate() {
        if i > 0 {
            s.push(' ');
        }
        let _ = write!(s, "{x:.2},{y:.2}");
    }
    s
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// Band between `lower` and `upper` with the actual and robust (lower
/// bound) series drawn on top.
pub fn interval_chart(title: &str, actual: &[f64], lower: &[f64], upper: &[f64]) -> String {
    let n = actual.len();
    let all = actual.iter().chain(lower).chain(upper);
    let (mut lo, mut hi) = all.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    if hi <= lo {
        lo -= 1.0;
        hi += 1.0;
    }
    let x = |i: usize| MARGIN + (WIDTH - 2.0 * MARGIN) * i as f64 / (n.max(2) - 1) as f64;
    let y = |v: f64| HEIGHT - MARGIN - (HEIGHT - 2.0 * MARGIN) * (v - lo) / (hi - lo);
    let path = |series: &[f64]| {
        let pts = points(series.iter().enumerate().map(|(i, &v)| (x(i), y(v))));
        format!("M{}", pts.replacen(' ', " L", usize::MAX))
    };
    let band = points(
        upper
            .iter()
            .enumerate()
            .map(|(i, &v)| (x(i), y(v)))
            .chain(lower.iter().enumerate().rev().map(|(i, &v)| (x(i), y(v)))),
    );

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    );
    let _ = writeln!(s, r#"  <title>{}</title>"#, escape(title));
    let _ = writeln!(s, r##"  <rect width="100%" height="100%" fill="#ffffff"/>"##);
    let _ = writeln!(
        s,
        r##"  <polygon id="interval" points="{band}" fill="#d62728" fill-opacity="0.25" stroke="none"/>"##
    );
    let _ = writeln!(
        s,
        r##"  <path id="actual" d="{}" fill="none" stroke="#000000" stroke-width="1.5"/>"##,
        path(actual)
    );
    let _ = writeln!(
        s,
        r##"  <path id="robust" d="{}" fill="none" stroke="#1f77b4" stroke-width="1.5" stroke-dasharray="4 3"/>"##,
        path(lower)
    );
    let _ = writeln!(
        s,
        r##"  <text x="{MARGIN}" y="{:.0}" font-family="sans-serif" font-size="13">{}</text>"##,
        MARGIN * 0.6,
        escape(title)
    );
    let _ = writeln!(
        s,
        r##"  <text x="{MARGIN}" y="{:.0}" font-family="sans-serif" font-size="11">{hi:.0} A</text>"##,
        MARGIN - 4.0
    );
    let _ = writeln!(
        s,
        r##"  <text x="{MARGIN}" y="{:.0}" font-family="sans-serif" font-size="11">{lo:.0} A</text>"##,
        HEIGHT - MARGIN + 14.0
    );
    s.push_str("</svg>\n");
    s
}
