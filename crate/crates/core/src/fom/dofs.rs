//! Degrees of freedom and lifting functions.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::bc::{BoundaryCondition, NodeContext};
use crate::constitutive::Effective;
use crate::error::{Error, Result};
use crate::mesh::{BoundaryTag, SpaceTimeMesh};

const DIRICHLET_TOL: f64 = 1e-10;

/// Velocity DOFs are the non-Dirichlet components of the nodal velocity;
/// full velocity vectors are indexed `node * d + component`.
#[derive(Debug, Clone, PartialEq)]
pub struct DofMap {
    pub spatial_dim: usize,
    pub node_count: usize,
    pub dirichlet: Vec<bool>,
    pub free_velocity: Vec<usize>,
    pub velocity_index: Vec<Option<usize>>,
    pub pressure_nodes: Vec<usize>,
    pub pressure_index: Vec<Option<usize>>,
    /// One node at the initial time, plus one per distinct time coordinate
    /// when no boundary leaves a velocity component free.
    pub pinned_pressure: Vec<usize>,
    pub dirichlet_nodes: BTreeMap<BoundaryTag, Vec<usize>>,
}

impl DofMap {
    /// `N_v^h`
    pub fn n_velocity(&self) -> usize {
        self.free_velocity.len()
    }

    /// `N_p^h`
    pub fn n_pressure(&self) -> usize {
        self.pressure_nodes.len()
    }

    /// `N^h = N_v^h + N_p^h`
    pub fn n_total(&self) -> usize {
        self.n_velocity() + self.n_pressure()
    }

    /// Length of full nodal velocity vectors.
    pub fn n_velocity_full(&self) -> usize {
        self.node_count * self.spatial_dim
    }

    pub fn scatter_velocity(&self, v: &[f64]) -> Vec<f64> {
        let mut full = vec![0.0; self.n_velocity_full()];
        for (k, &g) in self.free_velocity.iter().enumerate() {
            full[g] = v[k];
        }
        full
    }

    pub fn gather_velocity(&self, full: &[f64]) -> Vec<f64> {
        self.free_velocity.iter().map(|&g| full[g]).collect()
    }

    /// Nodal pressure, zero at pinned nodes.
    pub fn nodal_pressure(&self, p: &[f64]) -> Vec<f64> {
        let mut full = vec![0.0; self.node_count];
        for (k, &n) in self.pressure_nodes.iter().enumerate() {
            full[n] = p[k];
        }
        full
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LiftScaling {
    Constant,
    /// Multiplied by the inflow scale of the parameter sample.
    Inflow,
}

impl LiftScaling {
    pub fn coefficient(self, eff: &Effective) -> f64 {
        match self {
            LiftScaling::Constant => 1.0,
            LiftScaling::Inflow => eff.inflow_scale,
        }
    }
}

/// Full-length nodal velocity vector matching Dirichlet data on its tags.
#[derive(Debug, Clone, PartialEq)]
pub struct Lifting {
    pub values: Vec<f64>,
    pub scaling: LiftScaling,
    pub tags: Vec<BoundaryTag>,
}

/// Sum of liftings with their coefficients.
pub fn combined_lifting(liftings: &[Lifting], coefficients: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; liftings.first().map_or(0, |l| l.values.len())];
    for (l, &a) in liftings.iter().zip(coefficients) {
        for (o, v) in out.iter_mut().zip(&l.values) {
            *o += a * v;
        }
    }
    out
}

/// Checks every mesh tag has a condition and every condition a tag. Missing
/// `initial` data defaults to rest, missing Neumann data to zero traction.
pub fn resolve_conditions(
    mesh: &SpaceTimeMesh,
    conditions: &BTreeMap<String, BoundaryCondition>,
) -> Result<BTreeMap<BoundaryTag, BoundaryCondition>> {
    let d = mesh.spatial_dim();
    let tags = mesh.tags();
    let mut out = BTreeMap::new();
    for (name, bc) in conditions {
        let tag: BoundaryTag = name.parse().map_err(|_| Error::Config(format!("unknown boundary tag `{name}`")))?;
        if !tags.contains(&tag) {
            return Err(Error::Config(format!("condition for `{name}`, which is not on the mesh")));
        }
        bc.validate(d)?;
        match (&tag, bc.is_neumann()) {
            (BoundaryTag::Neumann(_), false) => return Err(Error::Config(format!("`{name}` needs a traction condition"))),
            (BoundaryTag::Dirichlet(_) | BoundaryTag::Initial, true) => {
                return Err(Error::Config(format!("`{name}` cannot take a traction condition")))
            }
            (BoundaryTag::Terminal, _) => return Err(Error::Config("no data may be prescribed on the terminal boundary".into())),
            _ => {}
        }
        out.insert(tag, bc.clone());
    }
    for tag in tags {
        if out.contains_key(&tag) {
            continue;
        }
        match &tag {
            BoundaryTag::Initial => {
                out.insert(tag, BoundaryCondition::NoSlip);
            }
            BoundaryTag::Neumann(_) => {
                out.insert(tag, BoundaryCondition::Traction { value: vec![0.0; d] });
            }
            BoundaryTag::Dirichlet(_) => return Err(Error::Config(format!("no condition for `{tag}`"))),
            BoundaryTag::Terminal => {}
        }
    }
    Ok(out)
}

/// Builds the DOF map and the liftings: one constant lifting, plus one for
/// parametrized inflow tags if there are any.
pub fn build_dofs(mesh: &SpaceTimeMesh, conditions: &BTreeMap<BoundaryTag, BoundaryCondition>) -> Result<(DofMap, Vec<Lifting>)> {
    let d = mesh.spatial_dim();
    let n = mesh.node_count();
    // (value, parametrized) per constrained node component
    let mut data: Vec<Vec<(f64, bool)>> = vec![Vec::new(); n * d];
    let mut dirichlet_nodes = BTreeMap::new();
    for (tag, bc) in conditions {
        if !tag.is_dirichlet() {
            continue;
        }
        let nodes = mesh.tagged_nodes(tag);
        for &i in &nodes {
            let mv = mesh.mesh_velocity(i);
            let x = &mesh.node(i)[..d];
            let ctx = NodeContext { x, t: mesh.time(i), mesh_velocity: &mv };
            for (c, v) in bc.values(&ctx, d).into_iter().enumerate() {
                if let Some(v) = v {
                    if !v.is_finite() {
                        return Err(Error::Config(format!("non-finite Dirichlet value on `{tag}` at node {i}")));
                    }
                    data[i * d + c].push((v, bc.is_parametrized()));
                }
            }
        }
        dirichlet_nodes.insert(tag.clone(), nodes);
    }

    let any_scaled = conditions.values().any(|bc| bc.is_parametrized());
    let mut constant = vec![0.0; n * d];
    let mut scaled = vec![0.0; n * d];
    let mut dirichlet = vec![false; n * d];
    for (g, entries) in data.iter().enumerate() {
        let Some(&(first, _)) = entries.first() else { continue };
        dirichlet[g] = true;
        for &(v, _) in &entries[1..] {
            if (v - first).abs() > DIRICHLET_TOL {
                return Err(Error::ConflictingDirichlet { node: g / d, component: g % d, first, second: v });
            }
        }
        let fixed = entries.iter().find(|e| !e.1);
        match fixed {
            Some(&(v, _)) => {
                if let Some(&(s, _)) = entries.iter().find(|e| e.1 && e.0.abs() > DIRICHLET_TOL) {
                    return Err(Error::ConflictingDirichlet { node: g / d, component: g % d, first: v, second: s });
                }
                constant[g] = v;
            }
            None => scaled[g] = first,
        }
    }

    let free_velocity: Vec<usize> = (0..n * d).filter(|&g| !dirichlet[g]).collect();
    let mut velocity_index = vec![None; n * d];
    for (k, &g) in free_velocity.iter().enumerate() {
        velocity_index[g] = Some(k);
    }

    let pressure_fixed = mesh.boundary().iter().any(|f| {
        !matches!(f.tag, BoundaryTag::Initial | BoundaryTag::Terminal)
            && conditions.get(&f.tag).is_some_and(|bc| bc.constrained_components(d) < d)
    });
    // The initial level has no velocity unknowns to pair with, so its
    // pressure level is always fixed; without a free outflow component every
    // p(t) is in the kernel and each time level is fixed.
    let (t0, t1) = mesh.time_span();
    let span = (t1 - t0).max(f64::MIN_POSITIVE);
    let mut seen = std::collections::BTreeSet::new();
    let mut pinned_pressure = Vec::new();
    for i in 0..n {
        let level = ((mesh.time(i) - t0) / span * 1e10).round() as i64;
        if (level == 0 || !pressure_fixed) && seen.insert(level) {
            pinned_pressure.push(i);
        }
    }
    let mut is_pinned = vec![false; n];
    for &i in &pinned_pressure {
        is_pinned[i] = true;
    }
    let pressure_nodes: Vec<usize> = (0..n).filter(|&i| !is_pinned[i]).collect();
    let mut pressure_index = vec![None; n];
    for (k, &i) in pressure_nodes.iter().enumerate() {
        pressure_index[i] = Some(k);
    }

    let tags_where = |want: bool| -> Vec<BoundaryTag> {
        conditions.iter().filter(|(t, bc)| t.is_dirichlet() && bc.is_parametrized() == want).map(|(t, _)| t.clone()).collect()
    };
    let mut liftings = vec![Lifting { values: constant, scaling: LiftScaling::Constant, tags: tags_where(false) }];
    if any_scaled {
        liftings.push(Lifting { values: scaled, scaling: LiftScaling::Inflow, tags: tags_where(true) });
    }

    let dofs = DofMap {
        spatial_dim: d,
        node_count: n,
        dirichlet,
        free_velocity,
        velocity_index,
        pressure_nodes,
        pressure_index,
        pinned_pressure,
        dirichlet_nodes,
    };
    Ok((dofs, liftings))
}
