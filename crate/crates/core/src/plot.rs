//! Static ternary-simplex SVG for three-label trajectories.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::odeflow::Trajectory;

const SIZE: f64 = 480.0;
const MARGIN: f64 = 40.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

/// Screen positions of vertices 1, 2, 3 (bottom-left, bottom-right, top).
pub fn vertices() -> [[f64; 2]; 3] {
    let side = SIZE - 2.0 * MARGIN;
    let height = side * 3f64.sqrt() / 2.0;
    let bottom = MARGIN + height;
    [
        [MARGIN, bottom],
        [MARGIN + side, bottom],
        [MARGIN + side / 2.0, bottom - height],
    ]
}

pub fn barycentric_to_xy(p: &[f64]) -> [f64; 2] {
    let v = vertices();
    let mut xy = [0.0; 2];
    for (pi, vi) in p.iter().zip(&v) {
        xy[0] += pi * vi[0];
        xy[1] += pi * vi[1];
    }
    xy
}

pub fn xy_to_barycentric(xy: [f64; 2]) -> [f64; 3] {
    let [a, b, c] = vertices();
    let det = (b[1] - c[1]) * (a[0] - c[0]) + (c[0] - b[0]) * (a[1] - c[1]);
    let l1 = ((b[1] - c[1]) * (xy[0] - c[0]) + (c[0] - b[0]) * (xy[1] - c[1])) / det;
    let l2 = ((c[1] - a[1]) * (xy[0] - c[0]) + (a[0] - c[0]) * (xy[1] - c[1])) / det;
    [l1, l2, 1.0 - l1 - l2]
}

/// One polyline per trajectory; each start point is a black dot.
pub fn ternary_svg(trajectories: &[&Trajectory]) -> Result<String> {
    if trajectories.is_empty() {
        return Err(Error::Config("nothing to plot".into()));
    }
    if let Some(t) = trajectories.iter().find(|t| t.state_dim() != 3) {
        return Err(Error::Config(format!(
            "ternary plots need 3 labels, trajectory has {}",
            t.state_dim()
        )));
    }
    let v = vertices();
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{SIZE}" height="{SIZE}" viewBox="0 0 {SIZE} {SIZE}">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<polygon points="{:.3},{:.3} {:.3},{:.3} {:.3},{:.3}" fill="none" stroke="black" stroke-width="1.5"/>"#,
        v[0][0], v[0][1], v[1][0], v[1][1], v[2][0], v[2][1]
    );
    let offsets = [[-14.0, 16.0], [14.0, 16.0], [0.0, -10.0]];
    for (i, (p, o)) in v.iter().zip(offsets).enumerate() {
        let _ = writeln!(
            svg,
            r#"<text x="{:.3}" y="{:.3}" font-family="sans-serif" font-size="16" text-anchor="middle">{}</text>"#,
            p[0] + o[0],
            p[1] + o[1],
            i + 1
        );
    }
    for (k, traj) in trajectories.iter().enumerate() {
        let mut points = String::new();
        for s in traj.states() {
            let [x, y] = barycentric_to_xy(s);
            let _ = write!(points, "{x:.3},{y:.3} ");
        }
        let _ = writeln!(
            svg,
            r#"<polyline class="trajectory" points="{}" fill="none" stroke="{}" stroke-width="1.5"/>"#,
            points.trim_end(),
            COLORS[k % COLORS.len()]
        );
    }
    for traj in trajectories {
        let [x, y] = barycentric_to_xy(traj.initial());
        let _ = writeln!(svg, r#"<circle class="start" cx="{x:.3}" cy="{y:.3}" r="4" fill="black"/>"#);
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

pub fn write_ternary_svg(trajectories: &[&Trajectory], path: &Path) -> Result<()> {
    let svg = ternary_svg(trajectories)?;
    fs::write(path, svg).map_err(|e| Error::io(path, e))
}

/// Parses the `points` of every trajectory polyline back into screen coordinates.
pub fn polyline_points(svg: &str) -> Vec<Vec<[f64; 2]>> {
    svg.lines()
        .filter(|l| l.starts_with("<polyline"))
        .filter_map(|l| l.split("points=\"").nth(1)?.split('"').next())
        .map(|pts| {
            pts.split_whitespace()
                .filter_map(|pair| {
                    let (x, y) = pair.split_once(',')?;
                    Some([x.parse().ok()?, y.parse().ok()?])
                })
                .collect()
        })
        .collect()
}
