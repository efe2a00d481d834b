//! Full-order model: GLS-stabilized equal-order P1 space-time Stokes flow
//! with Carreau-Yasuda viscosity, solved by Picard iteration.
//!
//! Unknowns are the homogeneous velocity `v` on free velocity DOFs and the
//! pressure `p`; the full velocity is `u = Σ_j α_j l_j + v`. The system is
//!
//! ```text
//! [ E + A(u)   -Bᵀ  ] [v]   [ H + F + L(u) ]
//! [ B + C(u)   S(u) ] [p] = [ G + D(u)     ]
//! ```

pub mod assembly;
pub mod bc;
pub mod dofs;
pub mod post;

use std::collections::BTreeMap;
use std::sync::OnceLock;
use std::time::Instant;

use faer::prelude::*;
use faer::sparse::linalg::solvers::{Lu, SymbolicLu};
use serde::{Deserialize, Serialize};

pub use assembly::{element_fields, tau_mom, Assembler, ElementFields};
pub use bc::BoundaryCondition;
pub use dofs::{build_dofs, combined_lifting, resolve_conditions, DofMap, LiftScaling, Lifting};

use crate::constitutive::{BodyForce, CarreauYasudaParams, Effective, ParameterSpace, ParameterVector};
use crate::error::{Error, Result};
use crate::mesh::{BoundaryTag, MeshGeometry, SpaceTimeMesh};
use crate::sparse::{ColumnPattern, CsrMatrix};

const LINEAR_RESIDUAL_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PicardOptions {
    pub tol: f64,
    pub max_iterations: usize,
}

impl Default for PicardOptions {
    fn default() -> Self {
        PicardOptions { tol: 1e-8, max_iterations: 50 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PicardStep {
    pub iteration: usize,
    /// `max(|Δv|/|v|, |Δ(v,p)|/|(v,p)|)`
    pub relative_update: f64,
    pub linear_residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FomSolution {
    pub mu: ParameterVector,
    pub v: Vec<f64>,
    pub p: Vec<f64>,
    pub lift_coefficients: Vec<f64>,
    pub log: Vec<PicardStep>,
    pub seconds: f64,
}

impl FomSolution {
    pub fn iterations(&self) -> usize {
        self.log.len()
    }
}

/// Explicit blocks in DOF numbering, for inspection and tests. The fast
/// solver path assembles the same system without forming these.
#[derive(Debug, Clone)]
pub struct FomSystem {
    pub e: CsrMatrix,
    pub a: CsrMatrix,
    pub bt: CsrMatrix,
    pub b: CsrMatrix,
    pub c: CsrMatrix,
    pub s: CsrMatrix,
    pub h: Vec<f64>,
    pub f: Vec<f64>,
    pub l: Vec<f64>,
    pub g: Vec<f64>,
    pub d: Vec<f64>,
}

impl FomSystem {
    /// `[A x; B y] - rhs` residual of the full block system at `(v, p)`.
    pub fn residual(&self, v: &[f64], p: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let ev = self.e.matvec(v);
        let av = self.a.matvec(v);
        let btp = self.bt.matvec(p);
        let mom: Vec<f64> = (0..v.len()).map(|i| ev[i] + av[i] - btp[i] - self.h[i] - self.f[i] - self.l[i]).collect();
        let bv = self.b.matvec(v);
        let cv = self.c.matvec(v);
        let sp = self.s.matvec(p);
        let cont: Vec<f64> = (0..p.len()).map(|k| bv[k] + cv[k] + sp[k] - self.g[k] - self.d[k]).collect();
        (mom, cont)
    }
}

/// Maps from operator patterns to the system matrix (`usize::MAX` = dropped).
struct SystemLayout {
    pattern: ColumnPattern,
    vv: Vec<usize>,
    pv_transposed: Vec<usize>,
    pv: Vec<usize>,
    pp: Vec<usize>,
}

const NONE: usize = usize::MAX;

impl SystemLayout {
    fn new(asm: &Assembler, dofs: &DofMap) -> Result<SystemLayout> {
        let nv = dofs.n_velocity();
        let n = dofs.n_total();
        let mut pairs = Vec::new();
        let mut owners: Vec<(u8, usize)> = Vec::new();
        let vv = &asm.vv;
        for r in 0..vv.nrows {
            let Some(i) = dofs.velocity_index[r] else { continue };
            for k in vv.indptr[r]..vv.indptr[r + 1] {
                if let Some(j) = dofs.velocity_index[vv.indices[k]] {
                    pairs.push((i, j));
                    owners.push((0, k));
                }
            }
        }
        let pv = &asm.pv;
        for r in 0..pv.nrows {
            let Some(pk) = dofs.pressure_index[r] else { continue };
            for k in pv.indptr[r]..pv.indptr[r + 1] {
                if let Some(j) = dofs.velocity_index[pv.indices[k]] {
                    pairs.push((j, nv + pk));
                    owners.push((1, k));
                    pairs.push((nv + pk, j));
                    owners.push((2, k));
                }
            }
        }
        let pp = &asm.pp;
        for r in 0..pp.nrows {
            let Some(pk) = dofs.pressure_index[r] else { continue };
            for k in pp.indptr[r]..pp.indptr[r + 1] {
                if let Some(pl) = dofs.pressure_index[pp.indices[k]] {
                    pairs.push((nv + pk, nv + pl));
                    owners.push((3, k));
                }
            }
        }
        let (pattern, slots) = ColumnPattern::from_pairs(n, &pairs)?;
        let mut layout = SystemLayout {
            pattern,
            vv: vec![NONE; vv.nnz()],
            pv_transposed: vec![NONE; pv.nnz()],
            pv: vec![NONE; pv.nnz()],
            pp: vec![NONE; pp.nnz()],
        };
        for ((kind, k), s) in owners.into_iter().zip(slots) {
            match kind {
                0 => layout.vv[k] = s,
                1 => layout.pv_transposed[k] = s,
                2 => layout.pv[k] = s,
                _ => layout.pp[k] = s,
            }
        }
        Ok(layout)
    }
}

/// A meshed, fully specified full-order problem.
pub struct FomProblem {
    pub mesh: SpaceTimeMesh,
    pub geometry: MeshGeometry,
    pub material: CarreauYasudaParams,
    pub parameters: ParameterSpace,
    pub body_force: BodyForce,
    pub conditions: BTreeMap<BoundaryTag, BoundaryCondition>,
    pub dofs: DofMap,
    pub liftings: Vec<Lifting>,
    pub assembler: Assembler,
    base_inflow: f64,
    layout: SystemLayout,
    symbolic: OnceLock<SymbolicLu<usize>>,
}

impl FomProblem {
    pub fn new(
        mesh: SpaceTimeMesh,
        material: CarreauYasudaParams,
        parameters: ParameterSpace,
        body_force: BodyForce,
        conditions: &BTreeMap<String, BoundaryCondition>,
    ) -> Result<FomProblem> {
        material.validate()?;
        let d = mesh.spatial_dim();
        if body_force.0.len() > d || body_force.0.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("body force must have at most d finite components".into()));
        }
        let conditions = resolve_conditions(&mesh, conditions)?;
        let scaled: Vec<f64> = conditions.values().filter(|bc| bc.is_parametrized()).filter_map(|bc| bc.inflow_amplitude()).collect();
        if scaled.windows(2).any(|w| w[0] != w[1]) {
            return Err(Error::Config("parametrized inflows must share one base amplitude".into()));
        }
        let base_inflow = scaled.first().copied().unwrap_or(0.0);
        let geometry = mesh.geometry()?;
        let (dofs, liftings) = build_dofs(&mesh, &conditions)?;
        let tractions: Vec<(&[usize], &[f64])> = mesh
            .boundary()
            .iter()
            .filter_map(|f| match conditions.get(&f.tag) {
                Some(BoundaryCondition::Traction { value }) if value.iter().any(|&h| h != 0.0) => {
                    Some((f.nodes.as_slice(), value.as_slice()))
                }
                _ => None,
            })
            .collect();
        let assembler = Assembler::new(&mesh, &geometry, material.rho_kg_m3, &body_force, &tractions)?;
        let layout = SystemLayout::new(&assembler, &dofs)?;
        Ok(FomProblem {
            mesh,
            geometry,
            material,
            parameters,
            body_force,
            conditions,
            dofs,
            liftings,
            assembler,
            base_inflow,
            layout,
            symbolic: OnceLock::new(),
        })
    }

    /// Base amplitude of the parametrized inflow (zero without one).
    pub fn base_inflow(&self) -> f64 {
        self.base_inflow
    }

    pub fn effective(&self, mu: &ParameterVector) -> Result<Effective> {
        self.parameters.apply(&self.material, self.base_inflow, mu)
    }

    pub fn lift_coefficients(&self, eff: &Effective) -> Vec<f64> {
        self.liftings.iter().map(|l| l.scaling.coefficient(eff)).collect()
    }

    /// Full nodal velocity `Σ α_j l_j + v`.
    pub fn velocity_full(&self, sol: &FomSolution) -> Vec<f64> {
        let mut u = combined_lifting(&self.liftings, &sol.lift_coefficients);
        for (k, &g) in self.dofs.free_velocity.iter().enumerate() {
            u[g] += sol.v[k];
        }
        u
    }

    pub fn pressure_nodal(&self, sol: &FomSolution) -> Vec<f64> {
        self.dofs.nodal_pressure(&sol.p)
    }

    /// Per-element η and τ for a full nodal velocity.
    pub fn element_fields(&self, u: &[f64], material: &CarreauYasudaParams) -> (Vec<f64>, Vec<f64>) {
        let f = self.assembler.fields(&self.geometry, u, material);
        (f.iter().map(|x| x.eta).collect(), f.iter().map(|x| x.tau).collect())
    }

    /// Explicit block system at the iterate `u` (full nodal velocity).
    pub fn assemble_system(&self, u: &[f64], mu: &ParameterVector) -> Result<FomSystem> {
        let eff = self.effective(mu)?;
        let lift = combined_lifting(&self.liftings, &self.lift_coefficients(&eff));
        let (eta, tau) = self.element_fields(u, &eff.material);
        let a_full = self.assembler.viscous(&eta)?;
        let (c_full, s_full, dst) = self.assembler.stabilization(&tau)?;
        let dm = &self.dofs;
        let (nv, np) = (dm.n_velocity(), dm.n_pressure());
        let vmap = &dm.velocity_index;
        let pmap = &dm.pressure_index;
        let neg_free = |m: &CsrMatrix| -> Vec<f64> {
            let y = m.matvec(&lift);
            dm.free_velocity.iter().map(|&g| -y[g]).collect()
        };
        let neg_p = |m: &CsrMatrix| -> Vec<f64> {
            let y = m.matvec(&lift);
            dm.pressure_nodes.iter().map(|&i| -y[i]).collect()
        };
        let b = self.assembler.divergence.extract(pmap, np, vmap, nv);
        let mut d = neg_p(&c_full);
        for (k, &i) in dm.pressure_nodes.iter().enumerate() {
            d[k] += dst[i];
        }
        let sys = FomSystem {
            e: self.assembler.temporal.extract(vmap, nv, vmap, nv),
            a: a_full.extract(vmap, nv, vmap, nv),
            bt: b.transpose(),
            c: c_full.extract(pmap, np, vmap, nv),
            s: s_full.extract(pmap, np, pmap, np),
            h: neg_free(&self.assembler.temporal),
            f: dm.free_velocity.iter().map(|&g| self.assembler.force[g]).collect(),
            l: neg_free(&a_full),
            g: neg_p(&self.assembler.divergence),
            d,
            b,
        };
        for (name, m) in [("A", &sys.a), ("C", &sys.c), ("S", &sys.s)] {
            if !m.is_finite() {
                return Err(Error::NonFinite { element: first_nonfinite(&eta, &tau).unwrap_or(0) }).map_err(|e| {
                    tracing::error!(block = name, "non-finite block");
                    e
                });
            }
        }
        Ok(sys)
    }

    /// System values (column-major pattern) and right-hand side.
    fn linear_system(&self, eta: &[f64], tau: &[f64], lift: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        if let Some(e) = first_nonfinite(eta, tau) {
            return Err(Error::NonFinite { element: e });
        }
        let asm = &self.assembler;
        let dm = &self.dofs;
        let nv = dm.n_velocity();
        let a = asm.viscous(eta)?;
        let (c, s, dst) = asm.stabilization(tau)?;
        let lay = &self.layout;
        let mut vals = vec![0.0; lay.pattern.symbolic.compute_nnz()];
        for k in 0..lay.vv.len() {
            if lay.vv[k] != NONE {
                vals[lay.vv[k]] += asm.temporal.values[k] + a.values[k];
            }
        }
        for k in 0..lay.pv.len() {
            if lay.pv[k] != NONE {
                vals[lay.pv_transposed[k]] -= asm.divergence.values[k];
                vals[lay.pv[k]] += asm.divergence.values[k] + c.values[k];
            }
        }
        for k in 0..lay.pp.len() {
            if lay.pp[k] != NONE {
                vals[lay.pp[k]] += s.values[k];
            }
        }

        let mut rhs = vec![0.0; dm.n_total()];
        let el = asm.temporal.matvec(lift);
        let al = a.matvec(lift);
        for (k, &g) in dm.free_velocity.iter().enumerate() {
            rhs[k] = asm.force[g] - el[g] - al[g];
        }
        let bl = asm.divergence.matvec(lift);
        let cl = c.matvec(lift);
        for (k, &i) in dm.pressure_nodes.iter().enumerate() {
            rhs[nv + k] = dst[i] - bl[i] - cl[i];
        }
        if vals.iter().chain(&rhs).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { element: 0 });
        }
        Ok((vals, rhs))
    }

    fn symbolic(&self) -> Result<&SymbolicLu<usize>> {
        if let Some(s) = self.symbolic.get() {
            return Ok(s);
        }
        let s = SymbolicLu::try_new(self.layout.pattern.symbolic.as_ref())
            .map_err(|e| Error::SingularSystem(format!("symbolic factorization failed: {e:?}")))?;
        Ok(self.symbolic.get_or_init(|| s))
    }

    /// Solves the linear system; returns the solution and its relative residual.
    fn solve_linear(&self, vals: &[f64], rhs: &[f64]) -> Result<(Vec<f64>, f64)> {
        let n = rhs.len();
        let rhs_norm = norm(rhs);
        if rhs_norm == 0.0 {
            return Ok((vec![0.0; n], 0.0));
        }
        let mat = self.layout.pattern.matrix(vals)?;
        let lu = Lu::try_new_with_symbolic(self.symbolic()?.clone(), mat)
            .map_err(|e| Error::SingularSystem(format!("{e:?}; check that velocity data and a pressure level are prescribed")))?;
        let mut x = vec![0.0; n];
        let mut r = rhs.to_vec();
        let mut rel = f64::INFINITY;
        for _ in 0..4 {
            let mut col = Mat::<f64>::from_fn(n, 1, |i, _| r[i]);
            lu.solve_in_place(col.as_mut());
            for i in 0..n {
                x[i] += col[(i, 0)];
            }
            r = residual_csc(&self.layout.pattern, vals, &x, rhs);
            rel = norm(&r) / rhs_norm;
            if !rel.is_finite() || rel <= LINEAR_RESIDUAL_TOL {
                break;
            }
        }
        if !rel.is_finite() || rel > 1e-6 {
            return Err(Error::SingularSystem(format!(
                "relative residual {rel:e}; check that velocity data and a pressure level are prescribed"
            )));
        }
        Ok((x, rel))
    }

    /// Picard iteration from the lifting-only iterate.
    pub fn solve(&self, mu: &ParameterVector, opts: &PicardOptions) -> Result<FomSolution> {
        let start = Instant::now();
        let eff = self.effective(mu)?;
        let alpha = self.lift_coefficients(&eff);
        let lift = combined_lifting(&self.liftings, &alpha);
        let nv = self.dofs.n_velocity();
        let mut x = vec![0.0; self.dofs.n_total()];
        let mut u = lift.clone();
        let mut log = Vec::new();
        for it in 1..=opts.max_iterations {
            let fields = self.assembler.fields(&self.geometry, &u, &eff.material);
            let eta: Vec<f64> = fields.iter().map(|f| f.eta).collect();
            let tau: Vec<f64> = fields.iter().map(|f| f.tau).collect();
            let (vals, rhs) = self.linear_system(&eta, &tau, &lift)?;
            let (x_new, res) = self.solve_linear(&vals, &rhs)?;
            let update = relative_update(&x, &x_new, nv);
            log.push(PicardStep { iteration: it, relative_update: update, linear_residual: res });
            tracing::debug!(iteration = it, update, residual = res, "picard");
            x = x_new;
            u.copy_from_slice(&lift);
            for (k, &g) in self.dofs.free_velocity.iter().enumerate() {
                u[g] += x[k];
            }
            if update <= opts.tol {
                let p = x.split_off(nv);
                return Ok(FomSolution { mu: mu.clone(), v: x, p, lift_coefficients: alpha, log, seconds: start.elapsed().as_secs_f64() });
            }
        }
        Err(Error::NotConverged { iterations: opts.max_iterations, last_update: log.last().map_or(f64::NAN, |s| s.relative_update) })
    }

    /// `K_u` on the full velocity space and `M_p` on pressure DOFs.
    pub fn inner_products(&self) -> InnerProducts {
        let dm = &self.dofs;
        let np = dm.n_pressure();
        InnerProducts {
            k_full: self.assembler.h1_seminorm.clone(),
            m_p: self.assembler.l2_mass.extract(&dm.pressure_index, np, &dm.pressure_index, np),
        }
    }
}

#[derive(Debug, Clone)]
pub struct InnerProducts {
    /// H¹-seminorm Gram matrix on full nodal velocity vectors.
    pub k_full: CsrMatrix,
    /// L² Gram matrix on pressure DOFs.
    pub m_p: CsrMatrix,
}

fn first_nonfinite(eta: &[f64], tau: &[f64]) -> Option<usize> {
    eta.iter().zip(tau).position(|(a, b)| !a.is_finite() || !b.is_finite())
}

pub(crate) fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn ratio(num: f64, den: f64) -> f64 {
    if num == 0.0 {
        0.0
    } else {
        num / den
    }
}

/// Velocity is always checked on its own because pressure can dominate the
/// combined norm by orders of magnitude.
fn relative_update(old: &[f64], new: &[f64], nv: usize) -> f64 {
    let diff: Vec<f64> = old.iter().zip(new).map(|(a, b)| b - a).collect();
    let combined = ratio(norm(&diff), norm(new));
    let velocity = ratio(norm(&diff[..nv]), norm(&new[..nv]));
    combined.max(velocity)
}

fn residual_csc(p: &ColumnPattern, vals: &[f64], x: &[f64], rhs: &[f64]) -> Vec<f64> {
    let s = p.symbolic.as_ref();
    let col_ptr = s.col_ptr();
    let row_idx = s.row_idx();
    let mut r = rhs.to_vec();
    for j in 0..p.n {
        for k in col_ptr[j]..col_ptr[j + 1] {
            r[row_idx[k]] -= vals[k] * x[j];
        }
    }
    r
}
