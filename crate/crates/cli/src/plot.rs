//! SVG line chart of the loss terms and validation accuracy against step.

use std::fmt::Write as _;

use crate::metrics::MetricsRow;

const WIDTH: f64 = 800.0;
const HEIGHT: f64 = 480.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 70.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 60.0;
const TICKS: usize = 5;

struct Series {
    label: &'static str,
    color: &'static str,
    right_axis: bool,
    points: Vec<(f64, f64)>,
}

fn range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if !lo.is_finite() {
        (0.0, 1.0)
    } else if hi - lo < 1e-12 {
        (lo - 0.5, hi + 0.5)
    } else {
        (lo, hi)
    }
}

fn scale(v: f64, (lo, hi): (f64, f64), a: f64, b: f64) -> f64 {
    a + (v - lo) / (hi - lo) * (b - a)
}

/// Renders `rows` as a standalone SVG document. Output depends only on the
/// input rows.
pub fn render_svg(rows: &[MetricsRow]) -> String {
    let series = [
        Series {
            label: "cls",
            color: "#1f77b4",
            right_axis: false,
            points: rows.iter().map(|r| (r.step, r.cls)).collect(),
        },
        Series {
            label: "λ·align",
            color: "#d62728",
            right_axis: false,
            points: rows.iter().map(|r| (r.step, r.align)).collect(),
        },
        Series {
            label: "val_acc",
            color: "#2ca02c",
            right_axis: true,
            points: rows.iter().filter_map(|r| r.val_acc.map(|v| (r.step, v))).collect(),
        },
    ];
    let xr = range(rows.iter().map(|r| r.step));
    let loss = range(
        series[..2]
            .iter()
            .flat_map(|s| s.points.iter().map(|p| p.1))
            .chain([0.0]),
    );
    let acc = (0.0, 1.0);
    let (x0, x1, y0, y1) = (LEFT, WIDTH - RIGHT, HEIGHT - BOTTOM, TOP);

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<path d="M{x0:.2},{y1:.2} V{y0:.2} H{x1:.2} V{y1:.2}" fill="none" stroke="black"/>"#
    );
    for i in 0..=TICKS {
        let t = i as f64 / TICKS as f64;
        let xv = xr.0 + t * (xr.1 - xr.0);
        let x = scale(xv, xr, x0, x1);
        let _ = writeln!(
            s,
            r#"<line x1="{x:.2}" y1="{y0:.2}" x2="{x:.2}" y2="{:.2}" stroke="black"/>"#,
            y0 + 5.0
        );
        let _ = writeln!(
            s,
            r#"<text x="{x:.2}" y="{:.2}" text-anchor="middle">{xv:.0}</text>"#,
            y0 + 20.0
        );
        let lv = loss.0 + t * (loss.1 - loss.0);
        let y = scale(lv, loss, y0, y1);
        let _ = writeln!(
            s,
            r#"<line x1="{:.2}" y1="{y:.2}" x2="{x0:.2}" y2="{y:.2}" stroke="black"/>"#,
            x0 - 5.0
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{lv:.3}</text>"#,
            x0 - 8.0,
            y + 4.0
        );
        let av = acc.0 + t * (acc.1 - acc.0);
        let _ = writeln!(
            s,
            r#"<line x1="{x1:.2}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="black"/>"#,
            x1 + 5.0
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="start">{av:.1}</text>"#,
            x1 + 8.0,
            y + 4.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">step</text>"#,
        (x0 + x1) / 2.0,
        HEIGHT - 15.0
    );
    let mid = (y0 + y1) / 2.0;
    let _ = writeln!(
        s,
        r#"<text x="18" y="{mid:.2}" text-anchor="middle" transform="rotate(-90 18 {mid:.2})">loss</text>"#
    );
    let rx = WIDTH - 18.0;
    let _ = writeln!(
        s,
        r#"<text x="{rx:.2}" y="{mid:.2}" text-anchor="middle" transform="rotate(90 {rx:.2} {mid:.2})">validation accuracy</text>"#
    );

    for ser in &series {
        let yr = if ser.right_axis { acc } else { loss };
        let pts: Vec<String> = ser
            .points
            .iter()
            .filter(|p| p.1.is_finite())
            .map(|&(x, y)| format!("{:.2},{:.2}", scale(x, xr, x0, x1), scale(y, yr, y0, y1)))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline fill="none" stroke="{}" stroke-width="1.5" points="{}"/>"#,
            ser.color,
            pts.join(" ")
        );
    }

    let _ = writeln!(s, r#"<g font-size="12">"#);
    for (i, ser) in series.iter().enumerate() {
        let y = TOP + 10.0 + 18.0 * i as f64;
        let lx = x1 - 110.0;
        let _ = writeln!(
            s,
            r#"<line x1="{lx:.2}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="{}" stroke-width="2"/>"#,
            lx + 20.0,
            ser.color
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}">{}</text>"#,
            lx + 26.0,
            y + 4.0,
            ser.label
        );
    }
    let _ = writeln!(s, "</g>");
    s.push_str("</svg>\n");
    s
}
