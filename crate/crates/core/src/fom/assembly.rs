//! Element kernels and operator assembly on fixed sparsity patterns.
//!
//! Local matrices of every element are computed once without their
//! elementwise coefficient (η for the viscous block, τ for the stabilization
//! blocks). Assembling an operator for a coefficient field is then a single
//! scatter of `w_K · local_K` in element order, which is cheap, deterministic,
//! and also serves the per-term operators needed by the reduced model.

use std::sync::Arc;

use rayon::prelude::*;

use crate::constitutive::{shear_rate, viscosity, BodyForce, CarreauYasudaParams};
use crate::error::{Error, Result};
use crate::mesh::geometry::ElementGeometry;
use crate::mesh::quadrature::degree2_rule;
use crate::mesh::{MeshGeometry, SpaceTimeMesh};
use crate::sparse::{CsrMatrix, Pattern};

/// `τ = [(2/h_t)² + (2|u|/h_s)² + (4ν/h_s²)²]^(-1/2)`
pub fn tau_mom(h_t: f64, h_s: f64, speed: f64, nu: f64) -> f64 {
    let a = 2.0 / h_t;
    let b = 2.0 * speed / h_s;
    let c = 4.0 * nu / (h_s * h_s);
    1.0 / (a * a + b * b + c * c).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ElementFields {
    pub shear_rate: f64,
    pub eta: f64,
    pub tau: f64,
}

/// Shear rate, viscosity and stabilization parameter of one element, from
/// the nodal velocities `u_nodes[a * d + c]` of its vertices.
pub fn element_fields(g: &ElementGeometry, u_nodes: &[f64], material: &CarreauYasudaParams) -> ElementFields {
    let d = g.spatial_dim();
    let npe = g.node_count();
    let mut grad = [0.0; 4];
    let mut mean = [0.0; 2];
    for a in 0..npe {
        let gx = g.grad_x(a);
        for c in 0..d {
            let u = u_nodes[a * d + c];
            mean[c] += u / npe as f64;
            for j in 0..d {
                grad[c * d + j] += u * gx[j];
            }
        }
    }
    let gamma = shear_rate(&grad[..d * d], d);
    let eta = viscosity(gamma, material);
    let speed = mean[..d].iter().map(|v| v * v).sum::<f64>().sqrt();
    let tau = tau_mom(g.h_t, g.h_s, speed, eta / material.rho_kg_m3);
    ElementFields { shear_rate: gamma, eta, tau }
}

/// Cached local matrices and patterns for one mesh.
pub struct Assembler {
    pub d: usize,
    pub npe: usize,
    pub node_count: usize,
    pub connectivity: Vec<usize>,
    pub rho: f64,
    pub vv: Arc<Pattern>,
    pub pv: Arc<Pattern>,
    pub pp: Arc<Pattern>,
    vv_slots: Vec<usize>,
    pv_slots: Vec<usize>,
    pp_slots: Vec<usize>,
    viscous_local: Vec<f64>,
    pspg_local: Vec<f64>,
    pressure_local: Vec<f64>,
    stab_force_local: Vec<f64>,
    /// Time-derivative block `E` on the full velocity space.
    pub temporal: CsrMatrix,
    /// Divergence block `B`, pressure nodes × full velocity.
    pub divergence: CsrMatrix,
    /// Body force and tractions on the full velocity space.
    pub force: Vec<f64>,
    pub h1_seminorm: CsrMatrix,
    pub l2_mass: CsrMatrix,
}

fn vv_len(npe: usize, d: usize) -> usize {
    (npe * d) * (npe * d)
}

impl Assembler {
    /// `tractions` lists Neumann facets with their constant traction.
    pub fn new(
        mesh: &SpaceTimeMesh,
        geometry: &MeshGeometry,
        rho: f64,
        body_force: &BodyForce,
        tractions: &[(&[usize], &[f64])],
    ) -> Result<Assembler> {
        let d = mesh.spatial_dim();
        let dim = mesh.dim();
        let npe = dim + 1;
        let n = mesh.node_count();
        let ne = mesh.element_count();
        let nvf = n * d;
        let m_vv = vv_len(npe, d);
        let m_pv = npe * npe * d;
        let m_pp = npe * npe;

        let mut vv_pairs = Vec::with_capacity(ne * m_vv);
        let mut pv_pairs = Vec::with_capacity(ne * m_pv);
        let mut pp_pairs = Vec::with_capacity(ne * m_pp);
        for e in 0..ne {
            let el = mesh.element(e);
            for a in 0..npe {
                for c in 0..d {
                    for b in 0..npe {
                        for k in 0..d {
                            vv_pairs.push((el[a] * d + c, el[b] * d + k));
                        }
                    }
                }
            }
            for a in 0..npe {
                for b in 0..npe {
                    for c in 0..d {
                        pv_pairs.push((el[a], el[b] * d + c));
                    }
                }
            }
            for a in 0..npe {
                for b in 0..npe {
                    pp_pairs.push((el[a], el[b]));
                }
            }
        }
        let (vv, vv_slots) = Pattern::from_pairs(nvf, nvf, &vv_pairs);
        let (pv, pv_slots) = Pattern::from_pairs(n, nvf, &pv_pairs);
        let (pp, pp_slots) = Pattern::from_pairs(n, n, &pp_pairs);
        let (vv, pv, pp) = (Arc::new(vv), Arc::new(pv), Arc::new(pp));

        let rule = degree2_rule(dim);
        let f: Vec<f64> = (0..d).map(|c| body_force.component(c)).collect();

        struct Local {
            temporal: Vec<f64>,
            viscous: Vec<f64>,
            h1: Vec<f64>,
            div: Vec<f64>,
            pspg: Vec<f64>,
            pressure: Vec<f64>,
            mass: Vec<f64>,
            stab_force: Vec<f64>,
            force: Vec<f64>,
        }
        let locals: Vec<Local> = geometry
            .elements
            .par_iter()
            .map(|g| {
                let vol = g.measure;
                let shape_int: Vec<f64> = (0..npe).map(|a| vol * rule.iter().map(|q| q.weight * q.bary[a]).sum::<f64>()).collect();
                let dot = |a: usize, b: usize| g.grad_x(a).iter().zip(g.grad_x(b)).map(|(x, y)| x * y).sum::<f64>();
                let mut l = Local {
                    temporal: vec![0.0; m_vv],
                    viscous: vec![0.0; m_vv],
                    h1: vec![0.0; m_vv],
                    div: vec![0.0; m_pv],
                    pspg: vec![0.0; m_pv],
                    pressure: vec![0.0; m_pp],
                    mass: vec![0.0; m_pp],
                    stab_force: vec![0.0; npe],
                    force: vec![0.0; npe * d],
                };
                let row = npe * d;
                for a in 0..npe {
                    for c in 0..d {
                        for b in 0..npe {
                            for k in 0..d {
                                let idx = (a * d + c) * row + b * d + k;
                                let mut v = g.grad_x(a)[k] * g.grad_x(b)[c];
                                if c == k {
                                    let gg = dot(a, b);
                                    v += gg;
                                    l.h1[idx] = vol * gg;
                                    l.temporal[idx] = rho * shape_int[a] * g.grad_t(b);
                                }
                                l.viscous[idx] = vol * v;
                            }
                        }
                        l.force[a * d + c] = rho * f[c] * shape_int[a];
                    }
                }
                for a in 0..npe {
                    for b in 0..npe {
                        for c in 0..d {
                            let idx = (a * npe + b) * d + c;
                            l.div[idx] = shape_int[a] * g.grad_x(b)[c];
                            l.pspg[idx] = vol * g.grad_x(a)[c] * g.grad_t(b);
                        }
                        l.pressure[a * npe + b] = vol / rho * dot(a, b);
                        let m = vol / ((npe * (npe + 1)) as f64);
                        l.mass[a * npe + b] = if a == b { 2.0 * m } else { m };
                    }
                    l.stab_force[a] = vol * g.grad_x(a).iter().zip(&f).map(|(x, y)| x * y).sum::<f64>();
                }
                l
            })
            .collect();

        let mut temporal = CsrMatrix::zeros(vv.clone());
        let mut h1 = CsrMatrix::zeros(vv.clone());
        let mut divergence = CsrMatrix::zeros(pv.clone());
        let mut l2 = CsrMatrix::zeros(pp.clone());
        let mut force = vec![0.0; nvf];
        let mut viscous_local = Vec::with_capacity(ne * m_vv);
        let mut pspg_local = Vec::with_capacity(ne * m_pv);
        let mut pressure_local = Vec::with_capacity(ne * m_pp);
        let mut stab_force_local = Vec::with_capacity(ne * npe);
        for (e, l) in locals.into_iter().enumerate() {
            for k in 0..m_vv {
                temporal.values[vv_slots[e * m_vv + k]] += l.temporal[k];
                h1.values[vv_slots[e * m_vv + k]] += l.h1[k];
            }
            for k in 0..m_pv {
                divergence.values[pv_slots[e * m_pv + k]] += l.div[k];
            }
            for k in 0..m_pp {
                l2.values[pp_slots[e * m_pp + k]] += l.mass[k];
            }
            let el = mesh.element(e);
            for a in 0..npe {
                for c in 0..d {
                    force[el[a] * d + c] += l.force[a * d + c];
                }
            }
            viscous_local.extend(l.viscous);
            pspg_local.extend(l.pspg);
            pressure_local.extend(l.pressure);
            stab_force_local.extend(l.stab_force);
        }

        for &(facet, h) in tractions {
            let weight = projected_facet_measure(mesh, facet) / facet.len() as f64;
            for &i in facet {
                for c in 0..d {
                    force[i * d + c] += h[c] * weight;
                }
            }
        }

        Ok(Assembler {
            d,
            npe,
            node_count: n,
            connectivity: mesh.elements().to_vec(),
            rho,
            vv,
            pv,
            pp,
            vv_slots,
            pv_slots,
            pp_slots,
            viscous_local,
            pspg_local,
            pressure_local,
            stab_force_local,
            temporal,
            divergence,
            force,
            h1_seminorm: h1,
            l2_mass: l2,
        })
    }

    pub fn element_count(&self) -> usize {
        self.connectivity.len() / self.npe
    }

    fn check_weights(&self, w: &[f64]) -> Result<()> {
        if w.len() != self.element_count() {
            return Err(Error::Dimension(format!("{} element weights for {} elements", w.len(), self.element_count())));
        }
        if let Some(e) = w.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { element: e });
        }
        Ok(())
    }

    /// Viscous block `Σ_K w_K A_K` on the full velocity space.
    pub fn viscous(&self, w: &[f64]) -> Result<CsrMatrix> {
        self.check_weights(w)?;
        let m = vv_len(self.npe, self.d);
        let mut out = CsrMatrix::zeros(self.vv.clone());
        for (e, &we) in w.iter().enumerate() {
            let local = &self.viscous_local[e * m..(e + 1) * m];
            for (k, v) in local.iter().enumerate() {
                out.values[self.vv_slots[e * m + k]] += we * v;
            }
        }
        Ok(out)
    }

    /// Stabilization blocks for the weights `w`: `C` (pressure × velocity),
    /// `S` (pressure × pressure) and the stabilization force.
    pub fn stabilization(&self, w: &[f64]) -> Result<(CsrMatrix, CsrMatrix, Vec<f64>)> {
        self.check_weights(w)?;
        let m_pv = self.npe * self.npe * self.d;
        let m_pp = self.npe * self.npe;
        let mut c = CsrMatrix::zeros(self.pv.clone());
        let mut s = CsrMatrix::zeros(self.pp.clone());
        let mut f = vec![0.0; self.node_count];
        for (e, &we) in w.iter().enumerate() {
            for k in 0..m_pv {
                c.values[self.pv_slots[e * m_pv + k]] += we * self.pspg_local[e * m_pv + k];
            }
            for k in 0..m_pp {
                s.values[self.pp_slots[e * m_pp + k]] += we * self.pressure_local[e * m_pp + k];
            }
            let el = &self.connectivity[e * self.npe..(e + 1) * self.npe];
            for a in 0..self.npe {
                f[el[a]] += we * self.stab_force_local[e * self.npe + a];
            }
        }
        Ok((c, s, f))
    }

    /// Element velocities of a full nodal velocity vector.
    pub fn element_velocity<'a>(&self, u: &'a [f64], e: usize, buf: &'a mut [f64; 8]) -> &'a [f64] {
        let el = &self.connectivity[e * self.npe..(e + 1) * self.npe];
        for (a, &i) in el.iter().enumerate() {
            for c in 0..self.d {
                buf[a * self.d + c] = u[i * self.d + c];
            }
        }
        &buf[..self.npe * self.d]
    }

    /// Shear rate, η and τ on every element for the full nodal velocity `u`.
    pub fn fields(&self, geometry: &MeshGeometry, u: &[f64], material: &CarreauYasudaParams) -> Vec<ElementFields> {
        (0..self.element_count())
            .into_par_iter()
            .map(|e| {
                let mut buf = [0.0; 8];
                let ue = self.element_velocity(u, e, &mut buf);
                element_fields(&geometry[e], ue, material)
            })
            .collect()
    }

    /// Fields on a subset of elements only.
    pub fn fields_on(
        &self,
        geometry: &MeshGeometry,
        elements: &[usize],
        u: &[f64],
        material: &CarreauYasudaParams,
    ) -> Result<Vec<ElementFields>> {
        elements
            .iter()
            .map(|&e| {
                if e >= self.element_count() {
                    return Err(Error::InvalidArgument(format!("element {e} out of range")));
                }
                let mut buf = [0.0; 8];
                let ue = self.element_velocity(u, e, &mut buf);
                Ok(element_fields(&geometry[e], ue, material))
            })
            .collect()
    }
}

/// `|n_x| |F|`: measure of a space-time facet projected on the spatial
/// boundary, i.e. the `ds dt` measure of a lateral facet.
pub fn projected_facet_measure(mesh: &SpaceTimeMesh, facet: &[usize]) -> f64 {
    let dim = mesh.dim();
    let p0 = mesh.node(facet[0]);
    let edge = |k: usize| -> Vec<f64> { mesh.node(facet[k]).iter().zip(p0).map(|(a, b)| a - b).collect() };
    match dim {
        2 => edge(1)[1].abs(),
        3 => {
            let (a, b) = (edge(1), edge(2));
            let cx = a[1] * b[2] - a[2] * b[1];
            let cy = a[2] * b[0] - a[0] * b[2];
            0.5 * (cx * cx + cy * cy).sqrt()
        }
        _ => unreachable!("space-time dimension is 2 or 3"),
    }
}
