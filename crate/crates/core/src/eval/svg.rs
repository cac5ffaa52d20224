//! Distance-field figures: grid cells colored by the log of a distance to
//! the query.

use std::fmt::Write;

use crate::error::{Error, Result};
use crate::scene::{FloorPlan, Pose};

const PX_PER_M: f64 = 50.0;
const MARGIN: f64 = 10.0;
/// Offset inside the log so zero distances stay finite.
const LOG_EPS: f64 = 1e-6;

/// Linear ramp from dark blue (near) to pale yellow (far); every channel is
/// monotone in `t`.
pub(super) fn ramp(t: f64) -> (u8, u8, u8) {
    let t = t.clamp(0.0, 1.0);
    let lerp = |a: f64, b: f64| (a + (b - a) * t).round() as u8;
    (lerp(20.0, 250.0), lerp(30.0, 240.0), lerp(110.0, 150.0))
}

/// One square per grid pose, `resolution` wide, colored by
/// `ln(score + 1e-6)` normalized over the grid; the plan outline is drawn on
/// top and the query marked with a red dot.
pub fn distance_field_svg(
    plan: &FloorPlan<f64>,
    grid: &[Pose<f64>],
    scores: &[f64],
    resolution: f64,
    query: Pose<f64>,
) -> Result<String> {
    if grid.len() != scores.len() || grid.is_empty() {
        return Err(Error::Dimension(format!("{} grid poses, {} scores", grid.len(), scores.len())));
    }
    let (lo, hi) = plan.bounds();
    let w = (hi.x - lo.x) * PX_PER_M + 2.0 * MARGIN;
    let h = (hi.y - lo.y) * PX_PER_M + 2.0 * MARGIN;
    let sx = |x: f64| (x - lo.x) * PX_PER_M + MARGIN;
    let sy = |y: f64| (hi.y - y) * PX_PER_M + MARGIN;
    let logs: Vec<f64> = scores.iter().map(|s| (s.max(0.0) + LOG_EPS).ln()).collect();
    let (min, max) = logs.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let span = if max > min { max - min } else { 1.0 };
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w:.1}" height="{h:.1}" viewBox="0 0 {w:.1} {h:.1}">"#
    );
    let _ = writeln!(s, r#"<rect width="{w:.1}" height="{h:.1}" fill="white"/>"#);
    let half = 0.5 * resolution;
    let side = resolution * PX_PER_M;
    for (p, l) in grid.iter().zip(&logs) {
        let (r, g, b) = ramp((l - min) / span);
        let _ = writeln!(
            s,
            r#"<rect x="{:.2}" y="{:.2}" width="{side:.2}" height="{side:.2}" fill="rgb({r},{g},{b})"/>"#,
            sx(p.x - half),
            sy(p.y + half),
        );
    }
    for ring in &plan.rooms {
        let pts: Vec<String> = ring.iter().map(|v| format!("{:.2},{:.2}", sx(v.x), sy(v.y))).collect();
        let _ = writeln!(
            s,
            r#"<polygon points="{}" fill="none" stroke="black" stroke-width="2"/>"#,
            pts.join(" ")
        );
    }
    let _ = writeln!(
        s,
        r#"<circle cx="{:.2}" cy="{:.2}" r="4" fill="red" stroke="white"/>"#,
        sx(query.x),
        sy(query.y)
    );
    s.push_str("</svg>\n");
    Ok(s)
}
