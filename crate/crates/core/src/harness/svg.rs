use std::fmt::Write as _;

use super::IterationSummary;

const PALETTE: [&str; 5] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e"];

/// Self-contained SVG line chart of RMSE against iteration: one line per
/// component for up to five components, otherwise the component mean.
pub fn rmse_chart(iterations: &[IterationSummary]) -> String {
    let points = iterations
        .iter()
        .filter_map(|r| r.rmse.as_ref().map(|e| (r.iteration as f64, e)))
        .collect::<Vec<_>>();
    let (w, h, pad) = (640.0, 400.0, 50.0);
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="12">"#);
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    if points.is_empty() {
        let _ = writeln!(s, r#"<text x="{pad}" y="{pad}">no RMSE data</text></svg>"#);
        return s;
    }
    let n = points[0].1.len();
    let series: Vec<(String, Vec<(f64, f64)>)> = if n <= PALETTE.len() {
        (0..n)
            .map(|j| (format!("x{}", j + 1), points.iter().map(|(i, e)| (*i, e[j])).collect()))
            .collect()
    } else {
        vec![("mean".to_string(), points.iter().map(|(i, e)| (*i, e.mean())).collect())]
    };
    let x_max = points.last().map_or(1.0, |p| p.0).max(1.0);
    let y_max = series
        .iter()
        .flat_map(|(_, p)| p.iter().map(|q| q.1))
        .fold(0.0f64, f64::max)
        .max(1e-12)
        * 1.05;
    let sx = |x: f64| pad + x / x_max * (w - 2.0 * pad);
    let sy = |y: f64| h - pad - y / y_max * (h - 2.0 * pad);

    let _ = writeln!(
        s,
        r#"<polyline points="{},{} {},{} {},{}" fill="none" stroke="black"/>"#,
        sx(0.0),
        sy(y_max),
        sx(0.0),
        sy(0.0),
        sx(x_max),
        sy(0.0)
    );
    for t in 0..=4 {
        let y = y_max * t as f64 / 4.0;
        let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">{y:.2}</text>"#, pad - 6.0, sy(y) + 4.0);
    }
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">iteration</text>"#, w / 2.0, h - 12.0);
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">0</text>"#, sx(0.0), h - pad + 16.0);
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">{x_max}</text>"#, sx(x_max), h - pad + 16.0);
    let _ = writeln!(s, r#"<text x="{}" y="20" text-anchor="middle">RMSE</text>"#, w / 2.0);
    for (c, (label, pts)) in series.iter().enumerate() {
        let color = PALETTE[c % PALETTE.len()];
        let path = pts.iter().map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y))).collect::<Vec<_>>().join(" ");
        let _ = writeln!(s, r#"<polyline points="{path}" fill="none" stroke="{color}" stroke-width="2"/>"#);
        let ly = pad + 16.0 * c as f64;
        let _ = writeln!(s, r#"<text x="{}" y="{ly}" fill="{color}">{label}</text>"#, w - pad - 40.0);
    }
    s.push_str("</svg>\n");
    s
}
