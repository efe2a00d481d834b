//! Simplex meshes of the space-time domain.
//!
//! A [`SpaceTimeMesh`] is produced by extruding a [`SpatialMesh`] through a
//! sequence of time levels. Each prism (spatial simplex × time slab) is split
//! into `d + 1` simplices by the sorted-global-index rule: with the element
//! vertices sorted `v_0 < … < v_d`, bottom copies `b_i` and top copies `t_i`,
//! simplex `j` is `{t_0, …, t_j, b_j, …, b_d}`. Two prisms sharing a facet
//! see the same sorted vertex list on it, so the split is conforming.

pub mod builders;
pub mod deformation;
pub mod geometry;
pub mod io;
pub mod quadrature;

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use deformation::DeformationMap;
pub use geometry::{element_geometry, signed_measure, ElementGeometry};

use crate::error::{Error, Result};

/// Relative tolerance used to decide whether a coordinate lies on a time level.
const TIME_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum BoundaryTag {
    Dirichlet(String),
    Neumann(String),
    Initial,
    Terminal,
}

impl BoundaryTag {
    pub fn name(&self) -> &str {
        match self {
            BoundaryTag::Dirichlet(n) | BoundaryTag::Neumann(n) => n,
            BoundaryTag::Initial => "initial",
            BoundaryTag::Terminal => "terminal",
        }
    }

    /// Initial facets carry Dirichlet data (the initial condition).
    pub fn is_dirichlet(&self) -> bool {
        matches!(self, BoundaryTag::Dirichlet(_) | BoundaryTag::Initial)
    }
}

impl fmt::Display for BoundaryTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BoundaryTag::Dirichlet(n) => write!(f, "dirichlet:{n}"),
            BoundaryTag::Neumann(n) => write!(f, "neumann:{n}"),
            BoundaryTag::Initial => f.write_str("initial"),
            BoundaryTag::Terminal => f.write_str("terminal"),
        }
    }
}

impl FromStr for BoundaryTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let valid = |n: &str| !n.is_empty() && n.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-');
        match s.split_once(':') {
            Some(("dirichlet", n)) if valid(n) => Ok(BoundaryTag::Dirichlet(n.to_owned())),
            Some(("neumann", n)) if valid(n) => Ok(BoundaryTag::Neumann(n.to_owned())),
            None if s == "initial" => Ok(BoundaryTag::Initial),
            None if s == "terminal" => Ok(BoundaryTag::Terminal),
            _ => Err(Error::InvalidMesh(format!("unknown boundary tag `{s}`"))),
        }
    }
}

impl TryFrom<String> for BoundaryTag {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<BoundaryTag> for String {
    fn from(t: BoundaryTag) -> String {
        t.to_string()
    }
}

/// A boundary facet. `nodes` is sorted ascending.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryFacet {
    pub nodes: Vec<usize>,
    pub tag: BoundaryTag,
}

/// Simplex mesh of the spatial domain, `d ∈ {1, 2}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpatialMesh {
    dim: usize,
    nodes: Vec<f64>,
    elements: Vec<usize>,
    boundary: Vec<BoundaryFacet>,
}

impl SpatialMesh {
    /// Validates and builds a spatial mesh. Boundary markers must use
    /// `dirichlet:` or `neumann:` tags and cover the whole topological boundary.
    pub fn new(dim: usize, nodes: Vec<f64>, elements: Vec<usize>, mut boundary: Vec<BoundaryFacet>) -> Result<Self> {
        if !(1..=2).contains(&dim) {
            return Err(Error::InvalidMesh(format!("spatial dimension {dim} not supported")));
        }
        if nodes.len() % dim != 0 || elements.len() % (dim + 1) != 0 {
            return Err(Error::InvalidMesh("flat array length is not a multiple of the entry size".into()));
        }
        let n_nodes = nodes.len() / dim;
        if nodes.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidMesh("non-finite node coordinate".into()));
        }
        let mesh_probe = SpatialMesh { dim, nodes, elements, boundary: Vec::new() };
        for (e, el) in mesh_probe.elements.chunks(dim + 1).enumerate() {
            check_element_indices(e, el, n_nodes)?;
            let coords: Vec<&[f64]> = el.iter().map(|&i| mesh_probe.node(i)).collect();
            if signed_measure(&coords).abs() <= 1e-14 * scale(&coords).powi(dim as i32) {
                return Err(Error::DegenerateElement { element: e });
            }
        }
        for f in &mut boundary {
            f.nodes.sort_unstable();
            if f.nodes.len() != dim {
                return Err(Error::InvalidMesh(format!("boundary facet {:?} must have {dim} nodes", f.nodes)));
            }
            if matches!(f.tag, BoundaryTag::Initial | BoundaryTag::Terminal) {
                return Err(Error::InvalidMesh(format!("tag `{}` is reserved for space-time meshes", f.tag)));
            }
        }
        let mut marked: HashMap<&[usize], &BoundaryTag> = HashMap::new();
        for f in &boundary {
            if marked.insert(&f.nodes, &f.tag).is_some() {
                return Err(Error::InvalidMesh(format!("boundary facet {:?} tagged twice", f.nodes)));
            }
        }
        let topo = boundary_facets(&mesh_probe.elements, dim + 1);
        for f in &topo {
            if !marked.contains_key(f.0.as_slice()) {
                return Err(Error::InvalidMesh(format!("boundary facet {:?} has no marker", f.0)));
            }
        }
        if topo.len() != boundary.len() {
            return Err(Error::InvalidMesh("boundary marker on an interior or unknown facet".into()));
        }
        Ok(SpatialMesh { boundary, ..mesh_probe })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len() / self.dim
    }

    pub fn element_count(&self) -> usize {
        self.elements.len() / (self.dim + 1)
    }

    pub fn node(&self, i: usize) -> &[f64] {
        &self.nodes[i * self.dim..(i + 1) * self.dim]
    }

    pub fn element(&self, e: usize) -> &[usize] {
        &self.elements[e * (self.dim + 1)..(e + 1) * (self.dim + 1)]
    }

    pub fn boundary(&self) -> &[BoundaryFacet] {
        &self.boundary
    }

    /// Total measure (length or area) of the domain.
    pub fn measure(&self) -> f64 {
        (0..self.element_count())
            .map(|e| {
                let coords: Vec<&[f64]> = self.element(e).iter().map(|&i| self.node(i)).collect();
                signed_measure(&coords).abs()
            })
            .sum()
    }
}

fn scale(coords: &[&[f64]]) -> f64 {
    let mut h: f64 = 0.0;
    for a in coords {
        for b in coords {
            let d2: f64 = a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum();
            h = h.max(d2.sqrt());
        }
    }
    h
}

fn check_element_indices(e: usize, el: &[usize], n_nodes: usize) -> Result<()> {
    for (k, &i) in el.iter().enumerate() {
        if i >= n_nodes {
            return Err(Error::InvalidMesh(format!("element {e} references node {i} of {n_nodes}")));
        }
        if el[..k].contains(&i) {
            return Err(Error::InvalidMesh(format!("element {e} repeats node {i}")));
        }
    }
    Ok(())
}

/// Facets (sorted node lists) that belong to exactly one element, with the
/// owning element and the local index of the opposite node.
fn boundary_facets(elements: &[usize], npe: usize) -> Vec<(Vec<usize>, usize, usize)> {
    let mut count: HashMap<Vec<usize>, (usize, usize, usize)> = HashMap::new();
    for (e, el) in elements.chunks(npe).enumerate() {
        for skip in 0..npe {
            let mut f: Vec<usize> = (0..npe).filter(|&k| k != skip).map(|k| el[k]).collect();
            f.sort_unstable();
            count.entry(f).and_modify(|c| c.0 += 1).or_insert((1, e, skip));
        }
    }
    let mut out: Vec<_> = count.into_iter().filter(|(_, c)| c.0 == 1).map(|(f, (_, e, skip))| (f, e, skip)).collect();
    out.sort_unstable();
    out
}

/// Number of facets shared by more than two elements. Zero for a conforming mesh.
pub fn nonmanifold_facet_count(elements: &[usize], npe: usize) -> usize {
    let mut count: HashMap<Vec<usize>, usize> = HashMap::new();
    for el in elements.chunks(npe) {
        for skip in 0..npe {
            let mut f: Vec<usize> = (0..npe).filter(|&k| k != skip).map(|k| el[k]).collect();
            f.sort_unstable();
            *count.entry(f).or_default() += 1;
        }
    }
    count.values().filter(|&&c| c > 2).count()
}

/// Extrusion bookkeeping kept by meshes built with [`extrude`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Extrusion {
    pub spatial: SpatialMesh,
    /// Undeformed space-time coordinates; deformation maps act on these.
    pub reference_nodes: Vec<f64>,
}

/// Simplex mesh of `Q = Ω(t) × [t_0, T]`. The last node coordinate is time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpaceTimeMesh {
    dim: usize,
    nodes: Vec<f64>,
    elements: Vec<usize>,
    boundary: Vec<BoundaryFacet>,
    time_levels: Vec<f64>,
    extrusion: Option<Extrusion>,
    deformation: DeformationMap,
}

/// Extrudes `spatial` through `time_levels`.
pub fn extrude(spatial: &SpatialMesh, time_levels: &[f64]) -> Result<SpaceTimeMesh> {
    if time_levels.len() < 2 {
        return Err(Error::TimeLevels(format!("got {} levels", time_levels.len())));
    }
    if let Some(w) = time_levels.windows(2).find(|w| !(w[1] > w[0]) || !w[0].is_finite() || !w[1].is_finite()) {
        return Err(Error::TimeLevels(format!("{} followed by {}", w[0], w[1])));
    }
    let d = spatial.dim;
    let dim = d + 1;
    let ns = spatial.node_count();
    let nl = time_levels.len();

    let mut nodes = Vec::with_capacity(ns * nl * dim);
    for &t in time_levels {
        for i in 0..ns {
            nodes.extend_from_slice(spatial.node(i));
            nodes.push(t);
        }
    }

    let mut elements = Vec::with_capacity(spatial.element_count() * (nl - 1) * (d + 1) * (dim + 1));
    for level in 0..nl - 1 {
        let bottom = level * ns;
        let top = (level + 1) * ns;
        for e in 0..spatial.element_count() {
            let mut v = spatial.element(e).to_vec();
            v.sort_unstable();
            for j in 0..=d {
                let start = elements.len();
                elements.extend(v[..=j].iter().map(|&i| top + i));
                elements.extend(v[j..].iter().map(|&i| bottom + i));
                let el = &mut elements[start..];
                let coords: Vec<&[f64]> = el.iter().map(|&i| &nodes[i * dim..(i + 1) * dim]).collect();
                if signed_measure(&coords) < 0.0 {
                    el.swap(dim - 1, dim);
                }
            }
        }
    }

    let spatial_tags: HashMap<&[usize], &BoundaryTag> = spatial.boundary.iter().map(|f| (f.nodes.as_slice(), &f.tag)).collect();
    let mut boundary = Vec::new();
    for (facet, _, _) in boundary_facets(&elements, dim + 1) {
        let levels: Vec<usize> = facet.iter().map(|&i| i / ns).collect();
        let tag = if levels.iter().all(|&l| l == 0) {
            BoundaryTag::Initial
        } else if levels.iter().all(|&l| l == nl - 1) {
            BoundaryTag::Terminal
        } else {
            let mut s: Vec<usize> = facet.iter().map(|&i| i % ns).collect();
            s.sort_unstable();
            s.dedup();
            match spatial_tags.get(s.as_slice()) {
                Some(t) => (*t).clone(),
                None => return Err(Error::InvalidMesh(format!("lateral facet over spatial nodes {s:?} has no boundary marker"))),
            }
        };
        boundary.push(BoundaryFacet { nodes: facet, tag });
    }

    Ok(SpaceTimeMesh {
        dim,
        extrusion: Some(Extrusion { spatial: spatial.clone(), reference_nodes: nodes.clone() }),
        nodes,
        elements,
        boundary,
        time_levels: time_levels.to_vec(),
        deformation: DeformationMap::Identity,
    })
}

/// Moves spatial node coordinates by `map(x_ref, t)`. Fails on the first
/// element whose signed measure is no longer positive.
pub fn deform(mesh: &SpaceTimeMesh, map: &DeformationMap) -> Result<SpaceTimeMesh> {
    if map.is_identity() {
        return Ok(mesh.clone());
    }
    if !mesh.deformation.is_identity() {
        return Err(Error::InvalidArgument("mesh is already deformed".into()));
    }
    map.check_dimension(mesh.spatial_dim())?;
    let dim = mesh.dim;
    let d = dim - 1;
    let mut out = mesh.clone();
    for (x, x_ref) in out.nodes.chunks_mut(dim).zip(mesh.nodes.chunks(dim)) {
        let moved = map.apply(&x_ref[..d], x_ref[d]);
        x[..d].copy_from_slice(&moved);
    }
    let bad = (0..out.element_count())
        .into_par_iter()
        .map(|e| (e, signed_measure(&out.element_coords(e))))
        .filter(|(_, m)| !(*m > 0.0))
        .min_by_key(|(e, _)| *e);
    if let Some((element, measure)) = bad {
        return Err(Error::InvertedElement { element, measure });
    }
    out.deformation = map.clone();
    Ok(out)
}

impl SpaceTimeMesh {
    /// Builds a mesh from raw data (for example from a file). Elements with
    /// negative orientation are reoriented; boundary facets are validated
    /// against the topological boundary.
    pub fn from_parts(
        spatial_dim: usize,
        nodes: Vec<f64>,
        mut elements: Vec<usize>,
        mut boundary: Vec<BoundaryFacet>,
        time_levels: Vec<f64>,
    ) -> Result<Self> {
        if !(1..=2).contains(&spatial_dim) {
            return Err(Error::InvalidMesh(format!("spatial dimension {spatial_dim} not supported")));
        }
        let dim = spatial_dim + 1;
        if nodes.len() % dim != 0 || elements.len() % (dim + 1) != 0 {
            return Err(Error::InvalidMesh("flat array length is not a multiple of the entry size".into()));
        }
        if nodes.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidMesh("non-finite node coordinate".into()));
        }
        let n_nodes = nodes.len() / dim;
        for (e, el) in elements.chunks_mut(dim + 1).enumerate() {
            check_element_indices(e, el, n_nodes)?;
            let coords: Vec<&[f64]> = el.iter().map(|&i| &nodes[i * dim..(i + 1) * dim]).collect();
            let m = signed_measure(&coords);
            if m.abs() <= 1e-14 * scale(&coords).powi(dim as i32) {
                return Err(Error::DegenerateElement { element: e });
            }
            if m < 0.0 {
                el.swap(dim - 1, dim);
            }
        }
        if !time_levels.is_empty() && time_levels.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::TimeLevels("imported time levels are not increasing".into()));
        }
        for f in &mut boundary {
            f.nodes.sort_unstable();
        }
        boundary.sort_by(|a, b| a.nodes.cmp(&b.nodes));
        let topo = boundary_facets(&elements, dim + 1);
        if topo.len() != boundary.len() || topo.iter().zip(&boundary).any(|(t, b)| t.0 != b.nodes) {
            return Err(Error::InvalidMesh("boundary block does not match the topological boundary".into()));
        }
        let mesh = SpaceTimeMesh { dim, nodes, elements, boundary, time_levels, extrusion: None, deformation: DeformationMap::Identity };
        mesh.check_time_tags()?;
        Ok(mesh)
    }

    fn check_time_tags(&self) -> Result<()> {
        let (t0, t1) = self.time_span();
        let tol = TIME_EPS * (t1 - t0).abs().max(1.0);
        for f in &self.boundary {
            let target = match f.tag {
                BoundaryTag::Initial => t0,
                BoundaryTag::Terminal => t1,
                _ => continue,
            };
            if f.nodes.iter().any(|&i| (self.time(i) - target).abs() > tol) {
                return Err(Error::InvalidMesh(format!("facet {:?} tagged `{}` is off its time plane", f.nodes, f.tag)));
            }
        }
        Ok(())
    }

    /// Space-time dimension `D = d + 1`.
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn spatial_dim(&self) -> usize {
        self.dim - 1
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len() / self.dim
    }

    pub fn element_count(&self) -> usize {
        self.elements.len() / (self.dim + 1)
    }

    pub fn node(&self, i: usize) -> &[f64] {
        &self.nodes[i * self.dim..(i + 1) * self.dim]
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn time(&self, i: usize) -> f64 {
        self.nodes[i * self.dim + self.dim - 1]
    }

    pub fn element(&self, e: usize) -> &[usize] {
        &self.elements[e * (self.dim + 1)..(e + 1) * (self.dim + 1)]
    }

    pub fn elements(&self) -> &[usize] {
        &self.elements
    }

    pub fn element_coords(&self, e: usize) -> Vec<&[f64]> {
        self.element(e).iter().map(|&i| self.node(i)).collect()
    }

    pub fn boundary(&self) -> &[BoundaryFacet] {
        &self.boundary
    }

    pub fn time_levels(&self) -> &[f64] {
        &self.time_levels
    }

    pub fn extrusion(&self) -> Option<&Extrusion> {
        self.extrusion.as_ref()
    }

    pub fn deformation(&self) -> &DeformationMap {
        &self.deformation
    }

    /// `(t_0, T)` from the node coordinates.
    pub fn time_span(&self) -> (f64, f64) {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for i in 0..self.node_count() {
            lo = lo.min(self.time(i));
            hi = hi.max(self.time(i));
        }
        (lo, hi)
    }

    /// Reference (undeformed) spatial position of node `i`.
    pub fn reference_position(&self, i: usize) -> &[f64] {
        let d = self.spatial_dim();
        match &self.extrusion {
            Some(x) => &x.reference_nodes[i * self.dim..i * self.dim + d],
            None => &self.node(i)[..d],
        }
    }

    /// Velocity of the prescribed domain motion at node `i`.
    pub fn mesh_velocity(&self, i: usize) -> Vec<f64> {
        self.deformation.velocity(self.reference_position(i), self.time(i))
    }

    /// Distinct tags present on the boundary, in sorted order.
    pub fn tags(&self) -> Vec<BoundaryTag> {
        let mut tags: Vec<BoundaryTag> = self.boundary.iter().map(|f| f.tag.clone()).collect();
        tags.sort();
        tags.dedup();
        tags
    }

    pub fn has_neumann(&self) -> bool {
        self.boundary.iter().any(|f| matches!(f.tag, BoundaryTag::Neumann(_)))
    }

    pub fn element_geometry(&self, e: usize) -> Result<ElementGeometry> {
        if e >= self.element_count() {
            return Err(Error::InvalidArgument(format!("element {e} out of range")));
        }
        element_geometry(e, &self.element_coords(e))
    }

    /// Geometry of every element, computed in parallel.
    pub fn geometry(&self) -> Result<MeshGeometry> {
        let elements =
            (0..self.element_count()).into_par_iter().map(|e| element_geometry(e, &self.element_coords(e))).collect::<Result<Vec<_>>>()?;
        Ok(MeshGeometry { elements })
    }

    /// Sum of all element measures, `|Q|`.
    pub fn measure(&self) -> f64 {
        (0..self.element_count()).map(|e| signed_measure(&self.element_coords(e))).sum()
    }

    /// SHA-256 over dimension, coordinates, connectivity and boundary tags.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(b"stmesh v1");
        h.update((self.dim as u64).to_le_bytes());
        for x in &self.nodes {
            h.update(x.to_le_bytes());
        }
        for &i in &self.elements {
            h.update((i as u64).to_le_bytes());
        }
        for f in &self.boundary {
            for &i in &f.nodes {
                h.update((i as u64).to_le_bytes());
            }
            h.update(f.tag.to_string().as_bytes());
            h.update([0u8]);
        }
        hex(&h.finalize())
    }

    /// Nodes of facets with the given tag, sorted and deduplicated.
    pub fn tagged_nodes(&self, tag: &BoundaryTag) -> Vec<usize> {
        let mut n: Vec<usize> = self.boundary.iter().filter(|f| &f.tag == tag).flat_map(|f| f.nodes.iter().copied()).collect();
        n.sort_unstable();
        n.dedup();
        n
    }

    /// Nodes on time level `k` of an extruded mesh.
    pub fn slice(&self, level: usize) -> Result<TimeSlice<'_>> {
        let ex = self.extrusion.as_ref().ok_or_else(|| Error::InvalidArgument("time slices need an extruded mesh".into()))?;
        if level >= self.time_levels.len() {
            return Err(Error::InvalidArgument(format!("time level {level} out of range")));
        }
        Ok(TimeSlice { mesh: self, spatial: &ex.spatial, level, offset: level * ex.spatial.node_count() })
    }

    /// Index of the time level closest to `t`, if `t` is within tolerance of one.
    pub fn level_of(&self, t: f64) -> Option<usize> {
        let span = self.time_levels.last()? - self.time_levels.first()?;
        self.time_levels.iter().position(|&l| (l - t).abs() <= 1e-9 * span.max(1.0))
    }
}

/// Cached geometry of every element.
#[derive(Debug, Clone)]
pub struct MeshGeometry {
    pub elements: Vec<ElementGeometry>,
}

impl std::ops::Index<usize> for MeshGeometry {
    type Output = ElementGeometry;

    fn index(&self, e: usize) -> &ElementGeometry {
        &self.elements[e]
    }
}

/// The spatial mesh at one time level, with deformed coordinates.
#[derive(Debug, Clone, Copy)]
pub struct TimeSlice<'a> {
    mesh: &'a SpaceTimeMesh,
    spatial: &'a SpatialMesh,
    level: usize,
    offset: usize,
}

impl<'a> TimeSlice<'a> {
    pub fn time(&self) -> f64 {
        self.mesh.time_levels[self.level]
    }

    pub fn node_count(&self) -> usize {
        self.spatial.node_count()
    }

    pub fn element_count(&self) -> usize {
        self.spatial.element_count()
    }

    /// Space-time node index of slice node `i`.
    pub fn global(&self, i: usize) -> usize {
        self.offset + i
    }

    pub fn position(&self, i: usize) -> &'a [f64] {
        &self.mesh.node(self.offset + i)[..self.mesh.spatial_dim()]
    }

    pub fn element(&self, e: usize) -> &'a [usize] {
        self.spatial.element(e)
    }

    /// Spatial boundary facets, with their tags.
    pub fn boundary(&self) -> &'a [BoundaryFacet] {
        self.spatial.boundary()
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Groups boundary facets by tag.
pub fn facets_by_tag(mesh: &SpaceTimeMesh) -> BTreeMap<BoundaryTag, Vec<&BoundaryFacet>> {
    let mut map: BTreeMap<BoundaryTag, Vec<&BoundaryFacet>> = BTreeMap::new();
    for f in mesh.boundary() {
        map.entry(f.tag.clone()).or_default().push(f);
    }
    map
}
