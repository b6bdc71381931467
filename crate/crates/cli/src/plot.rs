//! Entropy-trend plots as standalone SVG.

use std::fmt::Write as _;

use tiltray_core::experiment::{aggregate_trends, AggregateTrend};

/// Minimum number of trends before the interquartile band is drawn.
pub const BAND_MIN_TRENDS: usize = 4;

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 420.0;
const LEFT: f64 = 60.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 30.0;
const BOTTOM: f64 = 50.0;

struct Frame {
    steps: usize,
    y_max: f64,
}

impl Frame {
    fn x(&self, step: usize) -> f64 {
        LEFT + (WIDTH - LEFT - RIGHT) * step as f64 / (self.steps.max(2) - 1) as f64
    }

    fn y(&self, bits: f64) -> f64 {
        HEIGHT - BOTTOM - (HEIGHT - TOP - BOTTOM) * bits / self.y_max
    }

    fn path(&self, values: &[f64]) -> String {
        values
            .iter()
            .enumerate()
            .map(|(i, &v)| format!("{:.2},{:.2}", self.x(i), self.y(v)))
            .collect::<Vec<_>>()
            .join(" ")
    }
}

/// Renders `trends` (each `H^0 .. H^N`) with a bold mean and, from
/// [`BAND_MIN_TRENDS`] trends up, the 25th-75th percentile band.
pub fn render_svg(title: &str, trends: &[Vec<f64>]) -> Result<String, String> {
    let agg: AggregateTrend = aggregate_trends(trends).map_err(|e| e.to_string())?;
    let steps = agg.mean.len();
    let peak = trends.iter().flatten().fold(0.0f64, |m, &v| m.max(v));
    let frame = Frame {
        steps,
        y_max: peak.ceil().max(1.0),
    };
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(svg, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<text x="{:.2}" y="18" text-anchor="middle" font-size="14">{}</text>"#,
        WIDTH / 2.0,
        escape(title)
    );

    // axes and ticks
    let (x0, x1) = (frame.x(0), frame.x(steps - 1));
    let (y0, y1) = (frame.y(0.0), frame.y(frame.y_max));
    let _ = writeln!(
        svg,
        r#"<path d="M{x0:.2},{y1:.2} L{x0:.2},{y0:.2} L{x1:.2},{y0:.2}" fill="none" stroke="black"/>"#
    );
    let x_every = ((steps - 1) / 10).max(1);
    for step in (0..steps).step_by(x_every) {
        let x = frame.x(step);
        let _ = writeln!(
            svg,
            r#"<line x1="{x:.2}" y1="{y0:.2}" x2="{x:.2}" y2="{:.2}" stroke="black"/><text x="{x:.2}" y="{:.2}" text-anchor="middle">{step}</text>"#,
            y0 + 5.0,
            y0 + 18.0
        );
    }
    for bits in 0..=frame.y_max as usize {
        let y = frame.y(bits as f64);
        let _ = writeln!(
            svg,
            r#"<line x1="{:.2}" y1="{y:.2}" x2="{x0:.2}" y2="{y:.2}" stroke="black"/><text x="{:.2}" y="{:.2}" text-anchor="end">{bits}</text>"#,
            x0 - 5.0,
            x0 - 8.0,
            y + 4.0
        );
    }
    let _ = writeln!(
        svg,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">tilt</text>"#,
        (x0 + x1) / 2.0,
        HEIGHT - 12.0
    );
    let _ = writeln!(
        svg,
        r#"<text x="16" y="{:.2}" text-anchor="middle" transform="rotate(-90 16 {:.2})">entropy (bits)</text>"#,
        (y0 + y1) / 2.0,
        (y0 + y1) / 2.0
    );

    if trends.len() >= BAND_MIN_TRENDS {
        let mut outline: Vec<String> = (0..steps)
            .map(|i| format!("{:.2},{:.2}", frame.x(i), frame.y(agg.q75[i])))
            .collect();
        outline.extend((0..steps).rev().map(|i| format!("{:.2},{:.2}", frame.x(i), frame.y(agg.q25[i]))));
        let list = |v: &[f64]| v.iter().map(|x| format!("{x:.6}")).collect::<Vec<_>>().join(" ");
        let _ = writeln!(
            svg,
            r#"<polygon class="iqr" points="{}" fill="steelblue" fill-opacity="0.3" stroke="none" data-q25="{}" data-q75="{}"/>"#,
            outline.join(" "),
            list(&agg.q25),
            list(&agg.q75)
        );
    }
    if trends.len() == 1 {
        let _ = writeln!(
            svg,
            r#"<polyline class="trend" points="{}" fill="none" stroke="firebrick" stroke-width="2"/>"#,
            frame.path(&trends[0])
        );
    } else {
        for t in trends {
            let _ = writeln!(
                svg,
                r#"<polyline class="trend" points="{}" fill="none" stroke="gray" stroke-width="0.8" stroke-opacity="0.7"/>"#,
                frame.path(t)
            );
        }
        let _ = writeln!(
            svg,
            r#"<polyline class="mean" points="{}" fill="none" stroke="firebrick" stroke-width="3"/>"#,
            frame.path(&agg.mean)
        );
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_trend_has_no_band_or_mean() {
        let svg = render_svg("one", &[vec![3.0, 1.0, 0.0]]).unwrap();
        assert_eq!(svg.matches("class=\"trend\"").count(), 1);
        assert!(!svg.contains("class=\"iqr\""));
        assert!(!svg.contains("class=\"mean\""));
    }

    #[test]
    fn band_appears_from_four_trends() {
        let three: Vec<Vec<f64>> = (0..3).map(|i| vec![4.0, i as f64]).collect();
        assert!(!render_svg("t", &three).unwrap().contains("class=\"iqr\""));
        let four: Vec<Vec<f64>> = (0..4).map(|i| vec![4.0, i as f64]).collect();
        let svg = render_svg("t", &four).unwrap();
        assert!(svg.contains("class=\"iqr\""));
        assert!(svg.contains("data-q25=\"4.000000 0.750000\""));
        assert!(svg.contains("data-q75=\"4.000000 2.250000\""));
    }

    #[test]
    fn output_is_deterministic_and_rejects_empty() {
        let trends = vec![vec![2.0, 1.0], vec![3.0, 0.5]];
        assert_eq!(render_svg("a", &trends).unwrap(), render_svg("a", &trends).unwrap());
        assert!(render_svg("a", &[]).is_err());
        assert!(render_svg("<&>", &trends).unwrap().contains("&lt;&amp;&gt;"));
    }
}
