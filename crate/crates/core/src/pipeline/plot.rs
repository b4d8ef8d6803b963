//! SVG scatter plot of keyframe positions coloured by cluster.

use std::fmt::Write;

use nalgebra::{Matrix3, Vector3};

/// Fill colours assigned to cluster ids in order, wrapping around.
pub const PALETTE: [&str; 12] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#bcbd22", "#17becf", "#393b79",
    "#637939", "#843c39",
];
pub const UNASSIGNED_COLOR: &str = "#9e9e9e";

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 480.0;
const MARGIN: f64 = 40.0;
const LEGEND_WIDTH: f64 = 150.0;
const RADIUS: f64 = 6.0;

/// A keyframe to draw.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlotPoint {
    pub keyframe_id: usize,
    /// `None` when any keyframe lacks a pose; the layout then falls back to a
    /// grid ordered by keyframe id.
    pub center: Option<Vector3<f64>>,
    pub cluster: Option<usize>,
}

pub fn cluster_color(cluster: Option<usize>) -> &'static str {
    cluster.map_or(UNASSIGNED_COLOR, |c| PALETTE[c % PALETTE.len()])
}

/// Projects the centres onto their two leading principal axes. Axis signs
/// are fixed so that each axis' largest-magnitude component is positive.
pub fn principal_projection(centers: &[Vector3<f64>]) -> Vec<(f64, f64)> {
    if centers.is_empty() {
        return Vec::new();
    }
    let mean = centers.iter().sum::<Vector3<f64>>() / centers.len() as f64;
    let cov = centers
        .iter()
        .map(|c| (c - mean) * (c - mean).transpose())
        .sum::<Matrix3<f64>>();
    let eig = cov.symmetric_eigen();
    let mut order = [0, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let axis = |k: usize| {
        let v: Vector3<f64> = eig.eigenvectors.column(order[k]).into();
        let lead = v.iter().copied().fold(0.0f64, |m, x| if x.abs() > m.abs() { x } else { m });
        if lead < 0.0 {
            -v
        } else {
            v
        }
    };
    let (u, w) = (axis(0), axis(1));
    centers.iter().map(|c| ((c - mean).dot(&u), (c - mean).dot(&w))).collect()
}

fn layout(points: &[PlotPoint]) -> Vec<(f64, f64)> {
    let (x0, y0) = (MARGIN, MARGIN);
    let (pw, ph) = (WIDTH - LEGEND_WIDTH - 2.0 * MARGIN, HEIGHT - 2.0 * MARGIN);
    let centers: Option<Vec<Vector3<f64>>> = points.iter().map(|p| p.center).collect();
    match centers {
        Some(c) if !c.is_empty() => {
            let proj = principal_projection(&c);
            let (min_x, max_x) = proj.iter().fold((f64::MAX, f64::MIN), |(a, b), p| (a.min(p.0), b.max(p.0)));
            let (min_y, max_y) = proj.iter().fold((f64::MAX, f64::MIN), |(a, b), p| (a.min(p.1), b.max(p.1)));
            let span = (max_x - min_x).max(max_y - min_y);
            let scale = if span > 1e-12 { pw.min(ph) / span } else { 0.0 };
            let (cx, cy) = ((min_x + max_x) / 2.0, (min_y + max_y) / 2.0);
            proj.iter()
                .map(|&(x, y)| (x0 + pw / 2.0 + (x - cx) * scale, y0 + ph / 2.0 - (y - cy) * scale))
                .collect()
        }
        _ => {
            let cols = (points.len() as f64).sqrt().ceil().max(1.0) as usize;
            let rows = points.len().div_ceil(cols).max(1);
            let (sx, sy) = (pw / cols as f64, ph / rows as f64);
            let mut order: Vec<usize> = (0..points.len()).collect();
            order.sort_by_key(|&i| points[i].keyframe_id);
            let mut out = vec![(0.0, 0.0); points.len()];
            for (slot, &i) in order.iter().enumerate() {
                let (r, c) = (slot / cols, slot % cols);
                out[i] = (x0 + (c as f64 + 0.5) * sx, y0 + (r as f64 + 0.5) * sy);
            }
            out
        }
    }
}

/// Renders the plot. Output depends only on the inputs.
pub fn render_cluster_plot(points: &[PlotPoint]) -> String {
    let pos = layout(points);
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    );
    let _ = writeln!(svg, r##"<rect width="100%" height="100%" fill="#ffffff"/>"##);
    let posed = points.iter().all(|p| p.center.is_some());
    let caption = if posed { "camera centres, principal axes" } else { "keyframes by id (no poses)" };
    let _ = writeln!(
        svg,
        r#"<text x="{MARGIN}" y="24" font-family="sans-serif" font-size="14">{caption}</text>"#
    );
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by_key(|&i| points[i].keyframe_id);
    for i in order {
        let p = &points[i];
        let (x, y) = pos[i];
        let _ = writeln!(
            svg,
            r##"<circle cx="{x:.2}" cy="{y:.2}" r="{RADIUS}" fill="{}" stroke="#333333" stroke-width="0.5"><title>keyframe {}</title></circle>"##,
            cluster_color(p.cluster),
            p.keyframe_id
        );
    }

    let mut clusters: Vec<usize> = points.iter().filter_map(|p| p.cluster).collect();
    clusters.sort_unstable();
    clusters.dedup();
    let mut entries: Vec<(String, &str)> = clusters
        .iter()
        .map(|&c| {
            let n = points.iter().filter(|p| p.cluster == Some(c)).count();
            (format!("cluster {c} ({n})"), cluster_color(Some(c)))
        })
        .collect();
    let unassigned = points.iter().filter(|p| p.cluster.is_none()).count();
    if unassigned > 0 {
        entries.push((format!("unassigned ({unassigned})"), UNASSIGNED_COLOR));
    }
    let lx = WIDTH - LEGEND_WIDTH;
    for (k, (label, color)) in entries.iter().enumerate() {
        let y = MARGIN + 20.0 * k as f64;
        let _ = writeln!(svg, r#"<circle cx="{lx}" cy="{y}" r="{RADIUS}" fill="{color}"/>"#);
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}" font-family="sans-serif" font-size="12">{label}</text>"#,
            lx + 12.0,
            y + 4.0
        );
    }
    svg.push_str("</svg>\n");
    svg
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fills(svg: &str) -> Vec<(usize, String)> {
        svg.lines()
            .filter(|l| l.contains("<title>keyframe"))
            .map(|l| {
                let fill = l.split("fill=\"").nth(1).unwrap().split('"').next().unwrap().to_string();
                let id = l.split("keyframe ").nth(1).unwrap().split('<').next().unwrap().parse().unwrap();
                (id, fill)
            })
            .collect()
    }

    #[test]
    fn single_keyframe() {
        let svg = render_cluster_plot(&[PlotPoint { keyframe_id: 0, center: None, cluster: None }]);
        assert!(svg.starts_with("<svg"));
        assert!(svg.ends_with("</svg>\n"));
        assert_eq!(fills(&svg), vec![(0, UNASSIGNED_COLOR.to_string())]);
    }

    #[test]
    fn colours_follow_clusters() {
        let pts: Vec<PlotPoint> = (0..10)
            .map(|i| {
                let side = if i < 5 { 0.0 } else { 10.0 };
                PlotPoint {
                    keyframe_id: i,
                    center: Some(Vector3::new(side + 0.1 * i as f64, 0.05 * i as f64, 0.0)),
                    cluster: Some(usize::from(i >= 5)),
                }
            })
            .collect();
        let svg = render_cluster_plot(&pts);
        for (id, fill) in fills(&svg) {
            assert_eq!(fill, PALETTE[usize::from(id >= 5)]);
        }
        assert!(svg.contains("cluster 0 (5)") && svg.contains("cluster 1 (5)"));
        assert_eq!(svg, render_cluster_plot(&pts));
    }

    #[test]
    fn projection_keeps_the_dominant_axis_first() {
        let c: Vec<Vector3<f64>> = (0..5).map(|i| Vector3::new(0.0, 3.0 * i as f64, 0.1 * (i % 2) as f64)).collect();
        let p = principal_projection(&c);
        assert!((p[4].0 - p[0].0 - 12.0).abs() < 1e-9);
        assert!(p.iter().all(|q| q.1.abs() < 0.1));
    }
}
