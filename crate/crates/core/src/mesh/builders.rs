//! Structured spatial meshes for tests and the bundled cases.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::{BoundaryFacet, BoundaryTag, SpatialMesh};
use crate::error::{Error, Result};

fn parse_tag(s: &str) -> Result<BoundaryTag> {
    s.parse()
}

/// Uniform mesh of `[a, b]` with `n` elements.
pub fn interval(a: f64, b: f64, n: usize, left: &str, right: &str) -> Result<SpatialMesh> {
    if n == 0 || !(b > a) {
        return Err(Error::InvalidArgument(format!("bad interval [{a}, {b}] with {n} elements")));
    }
    let nodes: Vec<f64> = (0..=n).map(|i| a + (b - a) * i as f64 / n as f64).collect();
    let elements: Vec<usize> = (0..n).flat_map(|i| [i, i + 1]).collect();
    let boundary = vec![BoundaryFacet { nodes: vec![0], tag: parse_tag(left)? }, BoundaryFacet { nodes: vec![n], tag: parse_tag(right)? }];
    SpatialMesh::new(1, nodes, elements, boundary)
}

/// Triangulated tensor grid on the breakpoints `xs × ys`, keeping only the
/// cells for which `keep(center)` holds. Nodes are numbered row by row, so
/// the numbering is global and consistent. Every boundary edge is tagged by
/// `tag(a, b)` with its endpoint coordinates.
pub fn masked_grid(
    xs: &[f64],
    ys: &[f64],
    keep: impl Fn([f64; 2]) -> bool,
    tag: impl Fn([f64; 2], [f64; 2]) -> BoundaryTag,
) -> Result<SpatialMesh> {
    if xs.len() < 2 || ys.len() < 2 {
        return Err(Error::InvalidArgument("grid needs at least two breakpoints per axis".into()));
    }
    if xs.windows(2).chain(ys.windows(2)).any(|w| !(w[1] > w[0])) {
        return Err(Error::InvalidArgument("grid breakpoints must increase".into()));
    }
    let (nx, ny) = (xs.len() - 1, ys.len() - 1);
    let kept: Vec<(usize, usize)> = (0..ny)
        .flat_map(|j| (0..nx).map(move |i| (i, j)))
        .filter(|&(i, j)| keep([0.5 * (xs[i] + xs[i + 1]), 0.5 * (ys[j] + ys[j + 1])]))
        .collect();
    if kept.is_empty() {
        return Err(Error::InvalidArgument("mask removes every cell".into()));
    }

    let mut used = vec![false; (nx + 1) * (ny + 1)];
    for &(i, j) in &kept {
        for (di, dj) in [(0, 0), (1, 0), (0, 1), (1, 1)] {
            used[(j + dj) * (nx + 1) + i + di] = true;
        }
    }
    let mut index = vec![usize::MAX; used.len()];
    let mut nodes = Vec::new();
    for (g, _) in used.iter().enumerate().filter(|(_, u)| **u) {
        index[g] = nodes.len() / 2;
        nodes.extend([xs[g % (nx + 1)], ys[g / (nx + 1)]]);
    }

    let mut elements = Vec::with_capacity(kept.len() * 6);
    for &(i, j) in &kept {
        let n00 = index[j * (nx + 1) + i];
        let n10 = index[j * (nx + 1) + i + 1];
        let n01 = index[(j + 1) * (nx + 1) + i];
        let n11 = index[(j + 1) * (nx + 1) + i + 1];
        elements.extend([n00, n10, n11, n00, n11, n01]);
    }

    let mut edges: HashMap<(usize, usize), usize> = HashMap::new();
    for tri in elements.chunks(3) {
        for k in 0..3 {
            let (a, b) = (tri[k], tri[(k + 1) % 3]);
            *edges.entry((a.min(b), a.max(b))).or_default() += 1;
        }
    }
    let mut boundary: Vec<BoundaryFacet> = edges
        .into_iter()
        .filter(|(_, c)| *c == 1)
        .map(|((a, b), _)| BoundaryFacet {
            nodes: vec![a, b],
            tag: tag([nodes[2 * a], nodes[2 * a + 1]], [nodes[2 * b], nodes[2 * b + 1]]),
        })
        .collect();
    boundary.sort_by(|p, q| p.nodes.cmp(&q.nodes));
    SpatialMesh::new(2, nodes, elements, boundary)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Left,
    Right,
    Bottom,
    Top,
}

/// Uniform triangulated rectangle; `tag` chooses the tag of each side.
pub fn rectangle(min: [f64; 2], max: [f64; 2], cells: [usize; 2], tag: impl Fn(Side) -> BoundaryTag) -> Result<SpatialMesh> {
    if cells[0] == 0 || cells[1] == 0 {
        return Err(Error::InvalidArgument("rectangle needs at least one cell per axis".into()));
    }
    let xs = linspace(min[0], max[0], cells[0]);
    let ys = linspace(min[1], max[1], cells[1]);
    masked_grid(&xs, &ys, |_| true, |a, b| tag(side_of(a, b, min, max)))
}

fn side_of(a: [f64; 2], b: [f64; 2], min: [f64; 2], max: [f64; 2]) -> Side {
    if a[0] == min[0] && b[0] == min[0] {
        Side::Left
    } else if a[0] == max[0] && b[0] == max[0] {
        Side::Right
    } else if a[1] == min[1] && b[1] == min[1] {
        Side::Bottom
    } else {
        Side::Top
    }
}

/// `n + 1` equispaced breakpoints on `[a, b]`, with exact endpoints.
pub fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    (0..=n).map(|i| if i == n { b } else { a + (b - a) * i as f64 / n as f64 }).collect()
}

/// Rectangular casing with a rectangular plug cut out of it. The inlet is a
/// section of the top edge, the outlet the full bottom edge.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValveGeometry {
    pub casing_width_m: f64,
    pub casing_height_m: f64,
    pub inlet_x_m: [f64; 2],
    pub plug_min_m: [f64; 2],
    pub plug_max_m: [f64; 2],
    /// Cells across: passage left of the plug, plug, gap right of the plug.
    pub cells_x: [usize; 3],
    /// Cells along y: below the plug, plug, above the plug.
    pub cells_y: [usize; 3],
}

impl Default for ValveGeometry {
    fn default() -> Self {
        ValveGeometry {
            casing_width_m: 0.1,
            casing_height_m: 0.125,
            inlet_x_m: [0.025, 0.05],
            plug_min_m: [0.05, 0.0375],
            plug_max_m: [0.0995, 0.0875],
            cells_x: [8, 8, 4],
            cells_y: [6, 8, 6],
        }
    }
}

fn segments(points: &[f64], cells: &[usize]) -> Vec<f64> {
    let mut out = vec![points[0]];
    for (k, &n) in cells.iter().enumerate() {
        out.extend(linspace(points[k], points[k + 1], n).into_iter().skip(1));
    }
    out
}

fn push_breakpoint(xs: &mut Vec<f64>, x: f64) {
    if !xs.iter().any(|&v| (v - x).abs() < 1e-12) {
        xs.push(x);
        xs.sort_by(f64::total_cmp);
    }
}

/// Spatial mesh of the valve casing. Tags: `dirichlet:inlet`, `dirichlet:outlet`,
/// `dirichlet:wall` (casing), `dirichlet:plug`.
pub fn valve(g: &ValveGeometry) -> Result<SpatialMesh> {
    let (w, h) = (g.casing_width_m, g.casing_height_m);
    let ok = 0.0 < g.plug_min_m[0]
        && g.plug_min_m[0] < g.plug_max_m[0]
        && g.plug_max_m[0] < w
        && 0.0 < g.plug_min_m[1]
        && g.plug_min_m[1] < g.plug_max_m[1]
        && g.plug_max_m[1] < h
        && 0.0 <= g.inlet_x_m[0]
        && g.inlet_x_m[0] < g.inlet_x_m[1]
        && g.inlet_x_m[1] <= w;
    if !ok || g.cells_x.contains(&0) || g.cells_y.contains(&0) {
        return Err(Error::Config("inconsistent valve geometry".into()));
    }
    let mut xs = segments(&[0.0, g.plug_min_m[0], g.plug_max_m[0], w], &g.cells_x);
    let ys = segments(&[0.0, g.plug_min_m[1], g.plug_max_m[1], h], &g.cells_y);
    push_breakpoint(&mut xs, g.inlet_x_m[0]);
    push_breakpoint(&mut xs, g.inlet_x_m[1]);
    let in_plug = |p: [f64; 2]| p[0] > g.plug_min_m[0] && p[0] < g.plug_max_m[0] && p[1] > g.plug_min_m[1] && p[1] < g.plug_max_m[1];
    let eps = 1e-12;
    let tag = |a: [f64; 2], b: [f64; 2]| {
        let mid = [0.5 * (a[0] + b[0]), 0.5 * (a[1] + b[1])];
        let name = if (mid[1] - h).abs() < eps && mid[0] > g.inlet_x_m[0] && mid[0] < g.inlet_x_m[1] {
            "inlet"
        } else if mid[1].abs() < eps {
            "outlet"
        } else if mid[0].abs() < eps || (mid[0] - w).abs() < eps || (mid[1] - h).abs() < eps {
            "wall"
        } else {
            "plug"
        };
        BoundaryTag::Dirichlet(name.to_owned())
    };
    masked_grid(&xs, &ys, |c| !in_plug(c), tag)
}

/// Planar channel `[x_0, x_1] × [-r_0, r_0]`. Tags: `dirichlet:inlet` (left),
/// `dirichlet:outlet` (right), `dirichlet:wall` (top and bottom).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelGeometry {
    pub x_range_m: [f64; 2],
    pub radius_m: f64,
    pub cells: [usize; 2],
}

pub fn channel(g: &ChannelGeometry) -> Result<SpatialMesh> {
    rectangle([g.x_range_m[0], -g.radius_m], [g.x_range_m[1], g.radius_m], g.cells, |side| match side {
        Side::Left => BoundaryTag::Dirichlet("inlet".into()),
        Side::Right => BoundaryTag::Dirichlet("outlet".into()),
        Side::Bottom | Side::Top => BoundaryTag::Dirichlet("wall".into()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rectangle_counts() {
        let m = rectangle([0.0, 0.0], [2.0, 1.0], [4, 3], |_| BoundaryTag::Dirichlet("w".into())).unwrap();
        assert_eq!(m.node_count(), 20);
        assert_eq!(m.element_count(), 24);
        assert_eq!(m.boundary().len(), 14);
        assert!((m.measure() - 2.0).abs() < 1e-14);
    }

    #[test]
    fn valve_mesh_has_hole_and_tags() {
        let g = ValveGeometry::default();
        let m = valve(&g).unwrap();
        let plug_area = (g.plug_max_m[0] - g.plug_min_m[0]) * (g.plug_max_m[1] - g.plug_min_m[1]);
        assert!((m.measure() - (0.1 * 0.125 - plug_area)).abs() < 1e-14);
        let mut names: Vec<String> = m.boundary().iter().map(|f| f.tag.to_string()).collect();
        names.sort();
        names.dedup();
        assert_eq!(names, ["dirichlet:inlet", "dirichlet:outlet", "dirichlet:plug", "dirichlet:wall"]);
        let inlet_len: f64 =
            m.boundary().iter().filter(|f| f.tag.name() == "inlet").map(|f| (m.node(f.nodes[0])[0] - m.node(f.nodes[1])[0]).abs()).sum();
        assert!((inlet_len - 0.025).abs() < 1e-14);
    }

    #[test]
    fn channel_tags() {
        let m = channel(&ChannelGeometry { x_range_m: [-0.03, 0.03], radius_m: 5e-3, cells: [12, 4] }).unwrap();
        assert!(m.boundary().iter().any(|f| f.tag == BoundaryTag::Dirichlet("outlet".into())));
        assert!((m.measure() - 0.06 * 0.01).abs() < 1e-15);
    }
}
