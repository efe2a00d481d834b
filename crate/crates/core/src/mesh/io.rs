//! Text mesh format and legacy VTK export.
//!
//! ```text
//! stmesh v1 d=<spatial dim>
//! N <count>
//! <x_1> .. <x_d> <t>          one line per node
//! E <count>
//! <n_0> .. <n_{d+1}>          one line per space-time simplex
//! B <count>
//! <n_0> .. <n_d> <tag>        one line per boundary facet
//! T <count>                   optional: extrusion time levels
//! <t_0> ..
//! ```

use std::io::{BufRead, Write};

use super::{BoundaryFacet, SpaceTimeMesh, TimeSlice};
use crate::error::{Error, Result};

pub fn write_mesh<W: Write>(mut w: W, mesh: &SpaceTimeMesh) -> Result<()> {
    writeln!(w, "stmesh v1 d={}", mesh.spatial_dim())?;
    writeln!(w, "N {}", mesh.node_count())?;
    for i in 0..mesh.node_count() {
        write_row(&mut w, mesh.node(i).iter())?;
    }
    writeln!(w, "E {}", mesh.element_count())?;
    for e in 0..mesh.element_count() {
        write_row(&mut w, mesh.element(e).iter())?;
    }
    writeln!(w, "B {}", mesh.boundary().len())?;
    for f in mesh.boundary() {
        for n in &f.nodes {
            write!(w, "{n} ")?;
        }
        writeln!(w, "{}", f.tag)?;
    }
    if !mesh.time_levels().is_empty() {
        writeln!(w, "T {}", mesh.time_levels().len())?;
        write_row(&mut w, mesh.time_levels().iter())?;
    }
    Ok(())
}

fn write_row<W: Write, T: std::fmt::Display>(w: &mut W, items: impl Iterator<Item = T>) -> Result<()> {
    let mut first = true;
    for x in items {
        if !first {
            w.write_all(b" ")?;
        }
        write!(w, "{x}")?;
        first = false;
    }
    writeln!(w)?;
    Ok(())
}

struct Lines<R> {
    inner: std::io::Lines<R>,
    line: usize,
}

impl<R: BufRead> Lines<R> {
    fn next(&mut self) -> Result<Option<String>> {
        loop {
            match self.inner.next() {
                None => return Ok(None),
                Some(l) => {
                    self.line += 1;
                    let l = l?;
                    let t = l.trim();
                    if !t.is_empty() && !t.starts_with('#') {
                        return Ok(Some(t.to_owned()));
                    }
                }
            }
        }
    }

    fn expect(&mut self) -> Result<String> {
        self.next()?.ok_or_else(|| Error::Format(format!("unexpected end of file after line {}", self.line)))
    }

    fn err(&self, msg: &str) -> Error {
        Error::Format(format!("line {}: {msg}", self.line))
    }

    fn block(&mut self, key: &str) -> Result<usize> {
        let l = self.expect()?;
        match l.split_once(' ') {
            Some((k, n)) if k == key => n.trim().parse().map_err(|_| self.err("bad block count")),
            _ => Err(self.err(&format!("expected `{key} <count>`"))),
        }
    }

    fn numbers<T: std::str::FromStr>(&mut self, want: usize) -> Result<Vec<T>> {
        let l = self.expect()?;
        let v: Vec<T> =
            l.split_whitespace().map(|s| s.parse::<T>()).collect::<std::result::Result<_, _>>().map_err(|_| self.err("bad number"))?;
        if v.len() != want {
            return Err(self.err(&format!("expected {want} entries, got {}", v.len())));
        }
        Ok(v)
    }
}

pub fn read_mesh<R: BufRead>(r: R) -> Result<SpaceTimeMesh> {
    let mut lines = Lines { inner: r.lines(), line: 0 };
    let header = lines.expect()?;
    let d: usize = header
        .strip_prefix("stmesh v1 d=")
        .and_then(|s| s.trim().parse().ok())
        .ok_or_else(|| lines.err("expected header `stmesh v1 d=<d>`"))?;
    if !(1..=2).contains(&d) {
        return Err(lines.err("spatial dimension must be 1 or 2"));
    }
    let dim = d + 1;
    let n = lines.block("N")?;
    let mut nodes = Vec::with_capacity(n * dim);
    for _ in 0..n {
        nodes.extend(lines.numbers::<f64>(dim)?);
    }
    let ne = lines.block("E")?;
    let mut elements = Vec::with_capacity(ne * (dim + 1));
    for _ in 0..ne {
        elements.extend(lines.numbers::<usize>(dim + 1)?);
    }
    let nb = lines.block("B")?;
    let mut boundary = Vec::with_capacity(nb);
    for _ in 0..nb {
        let l = lines.expect()?;
        let parts: Vec<&str> = l.split_whitespace().collect();
        if parts.len() != dim + 1 {
            return Err(lines.err(&format!("boundary line needs {dim} node ids and a tag")));
        }
        let nodes: Vec<usize> =
            parts[..dim].iter().map(|s| s.parse()).collect::<std::result::Result<_, _>>().map_err(|_| lines.err("bad node id"))?;
        if nodes.iter().any(|&i| i >= n) {
            return Err(lines.err("boundary node id out of range"));
        }
        boundary.push(BoundaryFacet { nodes, tag: parts[dim].parse()? });
    }
    let mut time_levels = Vec::new();
    if let Some(l) = lines.next()? {
        let count: usize =
            l.strip_prefix("T ").and_then(|c| c.trim().parse().ok()).ok_or_else(|| lines.err("expected `T <count>` or end of file"))?;
        time_levels = lines.numbers::<f64>(count)?;
        if lines.next()?.is_some() {
            return Err(lines.err("trailing content"));
        }
    }
    SpaceTimeMesh::from_parts(d, nodes, elements, boundary, time_levels)
}

/// Nodal field for VTK export: `components` values per node.
pub struct PointField<'a> {
    pub name: &'a str,
    pub components: usize,
    pub values: &'a [f64],
}

fn vtk_header<W: Write>(w: &mut W, title: &str, points: &[[f64; 3]]) -> Result<()> {
    writeln!(w, "# vtk DataFile Version 3.0")?;
    writeln!(w, "{title}")?;
    writeln!(w, "ASCII")?;
    writeln!(w, "DATASET UNSTRUCTURED_GRID")?;
    writeln!(w, "POINTS {} double", points.len())?;
    for p in points {
        writeln!(w, "{} {} {}", p[0], p[1], p[2])?;
    }
    Ok(())
}

fn vtk_cells<W: Write>(w: &mut W, cells: &[&[usize]], cell_type: u8) -> Result<()> {
    let size: usize = cells.iter().map(|c| c.len() + 1).sum();
    writeln!(w, "CELLS {} {size}", cells.len())?;
    for c in cells {
        write!(w, "{}", c.len())?;
        for i in c.iter() {
            write!(w, " {i}")?;
        }
        writeln!(w)?;
    }
    writeln!(w, "CELL_TYPES {}", cells.len())?;
    for _ in cells {
        writeln!(w, "{cell_type}")?;
    }
    Ok(())
}

fn vtk_fields<W: Write>(w: &mut W, n: usize, fields: &[PointField<'_>], rows: impl Fn(usize) -> usize) -> Result<()> {
    if fields.is_empty() {
        return Ok(());
    }
    writeln!(w, "POINT_DATA {n}")?;
    for f in fields {
        if f.values.len() % f.components.max(1) != 0 {
            return Err(Error::Dimension(format!("field `{}` has a ragged length", f.name)));
        }
        let name: String = f.name.chars().map(|c| if c.is_whitespace() { '_' } else { c }).collect();
        match f.components {
            1 => {
                writeln!(w, "SCALARS {name} double 1")?;
                writeln!(w, "LOOKUP_TABLE default")?;
                for i in 0..n {
                    writeln!(w, "{}", f.values[rows(i)])?;
                }
            }
            c @ (2 | 3) => {
                writeln!(w, "VECTORS {name} double")?;
                for i in 0..n {
                    let r = rows(i);
                    let v = &f.values[r * c..(r + 1) * c];
                    writeln!(w, "{} {} {}", v[0], v[1], if c == 3 { v[2] } else { 0.0 })?;
                }
            }
            c => return Err(Error::InvalidArgument(format!("cannot export {c}-component field"))),
        }
    }
    Ok(())
}

/// Whole space-time grid; time is the last point coordinate.
pub fn write_vtk_spacetime<W: Write>(mut w: W, mesh: &SpaceTimeMesh, fields: &[PointField<'_>]) -> Result<()> {
    let points: Vec<[f64; 3]> = (0..mesh.node_count())
        .map(|i| {
            let x = mesh.node(i);
            let mut p = [0.0; 3];
            p[..x.len()].copy_from_slice(x);
            p
        })
        .collect();
    vtk_header(&mut w, "space-time mesh", &points)?;
    let cells: Vec<&[usize]> = (0..mesh.element_count()).map(|e| mesh.element(e)).collect();
    vtk_cells(&mut w, &cells, if mesh.dim() == 3 { 10 } else { 5 })?;
    for f in fields {
        if f.values.len() != mesh.node_count() * f.components {
            return Err(Error::Dimension(format!("field `{}` does not match the mesh", f.name)));
        }
    }
    vtk_fields(&mut w, points.len(), fields, |i| i)
}

/// Spatial mesh at one time level, with nodal fields taken from the
/// space-time arrays at that level.
pub fn write_vtk_slice<W: Write>(mut w: W, slice: &TimeSlice<'_>, mesh_nodes: usize, fields: &[PointField<'_>]) -> Result<()> {
    let points: Vec<[f64; 3]> = (0..slice.node_count())
        .map(|i| {
            let x = slice.position(i);
            let mut p = [0.0; 3];
            p[..x.len()].copy_from_slice(x);
            p
        })
        .collect();
    vtk_header(&mut w, &format!("time slice t={}", slice.time()), &points)?;
    let cells: Vec<&[usize]> = (0..slice.element_count()).map(|e| slice.element(e)).collect();
    let cell_type = if cells.first().map_or(0, |c| c.len()) == 3 { 5 } else { 3 };
    vtk_cells(&mut w, &cells, cell_type)?;
    for f in fields {
        if f.values.len() != mesh_nodes * f.components {
            return Err(Error::Dimension(format!("field `{}` does not match the mesh", f.name)));
        }
    }
    vtk_fields(&mut w, points.len(), fields, |i| slice.global(i))
}

#[cfg(test)]
mod tests {
    use super::super::builders::rectangle;
    use super::super::{extrude, BoundaryTag};
    use super::*;

    fn mesh() -> SpaceTimeMesh {
        let s = rectangle([0.0, 0.0], [1.0, 0.5], [3, 2], |side| match side {
            super::super::builders::Side::Right => BoundaryTag::Neumann("out".into()),
            _ => BoundaryTag::Dirichlet("wall".into()),
        })
        .unwrap();
        extrude(&s, &[0.0, 0.1, 0.25]).unwrap()
    }

    #[test]
    fn text_round_trip() {
        let m = mesh();
        let mut buf = Vec::new();
        write_mesh(&mut buf, &m).unwrap();
        let back = read_mesh(buf.as_slice()).unwrap();
        assert_eq!(back.hash(), m.hash());
        assert_eq!(back.time_levels(), m.time_levels());
        assert_eq!(back.nodes(), m.nodes());
    }

    #[test]
    fn rejects_garbage() {
        assert!(matches!(read_mesh("stmesh v2 d=2\n".as_bytes()), Err(Error::Format(_))));
        let text = "stmesh v1 d=1\nN 3\n0 0\n1 0\n0 1\nE 1\n0 1 2\nB 3\n0 1 initial\n1 2 dirichlet:a\n0 2 nope\n";
        assert!(read_mesh(text.as_bytes()).is_err());
    }

    #[test]
    fn vtk_has_expected_sections() {
        let m = mesh();
        let u = vec![1.0; 2 * m.node_count()];
        let mut buf = Vec::new();
        write_vtk_spacetime(&mut buf, &m, &[PointField { name: "velocity", components: 2, values: &u }]).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert!(s.contains(&format!("POINTS {} double", m.node_count())));
        assert!(s.contains(&format!("CELL_TYPES {}", m.element_count())));
        assert!(s.contains("VECTORS velocity double"));

        let slice = m.slice(2).unwrap();
        let mut buf = Vec::new();
        write_vtk_slice(&mut buf, &slice, m.node_count(), &[]).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert!(s.contains("POINTS 12 double"));
        assert!(s.contains("CELLS 12 48"));
    }
}
