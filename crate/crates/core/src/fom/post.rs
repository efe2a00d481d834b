//! Fluxes on time slices of an extruded mesh.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::mesh::{BoundaryTag, TimeSlice};

/// Outward unit normal and measure of a spatial boundary facet at a slice.
fn facet_normal(slice: &TimeSlice<'_>, facet: &[usize], opposite: usize) -> (Vec<f64>, f64) {
    let a = slice.position(facet[0]);
    let c = slice.position(opposite);
    match facet.len() {
        1 => (vec![if a[0] > c[0] { 1.0 } else { -1.0 }], 1.0),
        _ => {
            let b = slice.position(facet[1]);
            let (tx, ty) = (b[0] - a[0], b[1] - a[1]);
            let len = tx.hypot(ty);
            let mut n = [ty / len, -tx / len];
            if n[0] * (c[0] - a[0]) + n[1] * (c[1] - a[1]) > 0.0 {
                n = [-n[0], -n[1]];
            }
            (n.to_vec(), len)
        }
    }
}

fn opposite_nodes(slice: &TimeSlice<'_>) -> HashMap<Vec<usize>, usize> {
    let mut map = HashMap::new();
    for e in 0..slice.element_count() {
        let el = slice.element(e);
        for skip in 0..el.len() {
            let mut f: Vec<usize> = el.iter().enumerate().filter(|&(i, _)| i != skip).map(|(_, &n)| n).collect();
            f.sort_unstable();
            map.insert(f, el[skip]);
        }
    }
    map
}

/// `∫ u·n ds` over the boundary facets carrying `tag`, with outward `n`.
/// `u` is the full nodal velocity of the space-time mesh.
pub fn boundary_flux(slice: &TimeSlice<'_>, u: &[f64], tag: &BoundaryTag) -> Result<f64> {
    let d = slice.position(0).len();
    let owners = opposite_nodes(slice);
    let mut flux = 0.0;
    let mut found = false;
    for f in slice.boundary().iter().filter(|f| &f.tag == tag) {
        found = true;
        let opp = *owners.get(&f.nodes).ok_or_else(|| Error::InvalidMesh("boundary facet without element".into()))?;
        let (n, measure) = facet_normal(slice, &f.nodes, opp);
        let mut mean = 0.0;
        for &i in &f.nodes {
            let g = slice.global(i);
            mean += (0..d).map(|c| u[g * d + c] * n[c]).sum::<f64>();
        }
        flux += measure * mean / f.nodes.len() as f64;
    }
    if !found {
        return Err(Error::InvalidArgument(format!("no boundary facets tagged {tag}")));
    }
    Ok(flux)
}

/// Flux of `u_y` through the mesh edges lying on the line `y = y0` with
/// `x` in `x_range` (2-D slices). Positive for upward flow.
pub fn horizontal_line_flux(slice: &TimeSlice<'_>, u: &[f64], y0: f64, x_range: [f64; 2]) -> Result<f64> {
    if slice.position(0).len() != 2 {
        return Err(Error::Dimension("line flux needs a 2-D mesh".into()));
    }
    let tol = 1e-9 * (x_range[1] - x_range[0]).abs().max(1e-12);
    let on_line = |i: usize| (slice.position(i)[1] - y0).abs() <= tol;
    let mut edges = std::collections::BTreeSet::new();
    for e in 0..slice.element_count() {
        let el = slice.element(e);
        for (k, &a) in el.iter().enumerate() {
            let b = el[(k + 1) % 3];
            if on_line(a) && on_line(b) {
                edges.insert((a.min(b), a.max(b)));
            }
        }
    }
    let mut flux = 0.0;
    for (a, b) in edges {
        let (xa, xb) = (slice.position(a)[0], slice.position(b)[0]);
        let mid = 0.5 * (xa + xb);
        if mid < x_range[0] || mid > x_range[1] {
            continue;
        }
        let (ga, gb) = (slice.global(a), slice.global(b));
        flux += (xb - xa).abs() * 0.5 * (u[ga * 2 + 1] + u[gb * 2 + 1]);
    }
    Ok(flux)
}
