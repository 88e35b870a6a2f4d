//! Minimal SVG line plot of loss against threshold.

use std::fmt::Write as _;

use crate::thresholding::DetectionTrace;

const WIDTH: f64 = 900.0;
const HEIGHT: f64 = 360.0;
const MARGIN: f64 = 40.0;

fn polyline(points: &[(f64, f64)], class: &str, colour: &str) -> String {
    let mut pts = String::new();
    for (i, (x, y)) in points.iter().enumerate() {
        if i > 0 {
            pts.push(' ');
        }
        let _ = write!(pts, "{x:.2},{y:.2}");
    }
    format!("<polyline class=\"{class}\" fill=\"none\" stroke=\"{colour}\" stroke-width=\"1.2\" points=\"{pts}\"/>\n")
}

/// One `loss` polyline and one `threshold` polyline over time, with the
/// anomalous span of `labels` shaded. Output depends only on the inputs.
pub fn detection_svg(trace: &DetectionTrace, labels: &[bool], title: &str) -> String {
    let n = trace.len();
    let (t0, t1) = match (trace.timestamps.first(), trace.timestamps.last()) {
        (Some(&a), Some(&b)) if b > a => (a as f64, b as f64),
        (Some(&a), _) => (a as f64, a as f64 + 1.0),
        _ => (0.0, 1.0),
    };
    let y_max = trace
        .losses
        .iter()
        .chain(&trace.thresholds)
        .copied()
        .fold(0.0_f64, f64::max)
        .max(f64::MIN_POSITIVE);
    let x = |t: i64| MARGIN + (t as f64 - t0) / (t1 - t0) * (WIDTH - 2.0 * MARGIN);
    let y = |v: f64| HEIGHT - MARGIN - v / y_max * (HEIGHT - 2.0 * MARGIN);

    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" viewBox=\"0 0 {WIDTH} {HEIGHT}\">\n"
    );
    let _ = writeln!(svg, "<title>{}</title>", escape(title));
    let _ = writeln!(
        svg,
        "<rect x=\"0\" y=\"0\" width=\"{WIDTH}\" height=\"{HEIGHT}\" fill=\"white\"/>"
    );
    if let Some(first) = labels.iter().position(|&l| l) {
        if first < n {
            let x0 = x(trace.timestamps[first]);
            let x1 = x(trace.timestamps[n - 1]);
            let _ = writeln!(
                svg,
                "<rect class=\"fault\" x=\"{x0:.2}\" y=\"{MARGIN}\" width=\"{:.2}\" height=\"{}\" fill=\"#f3d6d6\"/>",
                (x1 - x0).max(0.0),
                HEIGHT - 2.0 * MARGIN
            );
        }
    }
    let _ = writeln!(
        svg,
        "<line x1=\"{MARGIN}\" y1=\"{0}\" x2=\"{1}\" y2=\"{0}\" stroke=\"black\"/>",
        HEIGHT - MARGIN,
        WIDTH - MARGIN
    );
    let _ = writeln!(
        svg,
        "<line x1=\"{MARGIN}\" y1=\"{MARGIN}\" x2=\"{MARGIN}\" y2=\"{}\" stroke=\"black\"/>",
        HEIGHT - MARGIN
    );
    let _ = writeln!(
        svg,
        "<text x=\"{MARGIN}\" y=\"{}\" font-size=\"11\">{:.4}</text>",
        MARGIN - 6.0,
        y_max
    );
    let _ = writeln!(
        svg,
        "<text x=\"{}\" y=\"{}\" font-size=\"11\" text-anchor=\"end\">{:.1} s</text>",
        WIDTH - MARGIN,
        HEIGHT - MARGIN + 16.0,
        (t1 - t0) / 1000.0
    );
    let loss: Vec<(f64, f64)> = (0..n).map(|i| (x(trace.timestamps[i]), y(trace.losses[i]))).collect();
    let thr: Vec<(f64, f64)> = (0..n).map(|i| (x(trace.timestamps[i]), y(trace.thresholds[i]))).collect();
    svg.push_str(&polyline(&loss, "loss", "#1f5fa8"));
    svg.push_str(&polyline(&thr, "threshold", "#c0392b"));
    svg.push_str("</svg>\n");
    svg
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_polylines() {
        let trace = DetectionTrace {
            timestamps: vec![0, 100, 200],
            losses: vec![0.1, 0.5, 0.2],
            thresholds: vec![0.3, 0.3, 0.3],
            verdicts: vec![false, true, false],
        };
        let svg = detection_svg(&trace, &[false, true, true], "f<1>");
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert!(svg.contains("class=\"loss\"") && svg.contains("class=\"threshold\""));
        assert!(svg.contains("f&lt;1&gt;"));
    }
}
