//! Galerkin reduced-order model: offline projection and online Picard solve.
//!
//! `Z_v` holds the liftings as leading columns followed by velocity modes
//! (full nodal vectors that vanish on Dirichlet nodes); `Z_p` holds pressure
//! modes. Lifting coefficients are fixed by the parameter, so only the mode
//! and pressure coefficients are solved for, tested with the mode and
//! pressure columns.

use std::time::Instant;

use faer::prelude::*;
use faer::Mat;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::constitutive::{CarreauYasudaParams, ParameterSpace, ParameterVector};
use crate::eim::{forward, EimApproximation};
use crate::error::{Error, Result};
use crate::fom::assembly::element_fields;
use crate::fom::{FomProblem, LiftScaling, PicardOptions, PicardStep};
use crate::mesh::ElementGeometry;
use crate::pod::ReducedBasis;
use crate::sparse::CsrMatrix;

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Dense {
    pub fn zeros(rows: usize, cols: usize) -> Dense {
        Dense { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn from_fn(rows: usize, cols: usize, f: impl Fn(usize, usize) -> f64) -> Dense {
        Dense { rows, cols, data: (0..rows * cols).map(|k| f(k / cols, k % cols)).collect() }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    /// Leading `rows × cols` block.
    pub fn leading(&self, rows: usize, cols: usize) -> Dense {
        Dense::from_fn(rows, cols, |i, j| self.get(i, j))
    }

    pub fn transpose(&self) -> Dense {
        Dense::from_fn(self.cols, self.rows, |i, j| self.get(j, i))
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        self.data.chunks(self.cols.max(1)).take(self.rows).map(|r| r.iter().zip(x).map(|(a, b)| a * b).sum()).collect()
    }

    fn axpy(&mut self, a: f64, other: &Dense) {
        for (x, y) in self.data.iter_mut().zip(&other.data) {
            *x += a * y;
        }
    }

    /// `Σ_q c_q M_q`
    pub fn combination(terms: &[Dense], c: &[f64], rows: usize, cols: usize) -> Dense {
        let mut out = Dense::zeros(rows, cols);
        for (m, &cq) in terms.iter().zip(c) {
            out.axpy(cq, m);
        }
        out
    }
}

/// `Lᵀ M R` for column sets `L`, `R`.
pub fn triple_product(m: &CsrMatrix, left: &[&[f64]], right: &[&[f64]]) -> Dense {
    let mr: Vec<Vec<f64>> = right.iter().map(|r| m.matvec(r)).collect();
    Dense::from_fn(left.len(), right.len(), |i, j| dot(left[i], &mr[j]))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Data needed to evaluate the velocity gradient on one magic element.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MagicElement {
    pub element: usize,
    pub geometry: ElementGeometry,
    /// Rows of `Z_v` for the element's nodal velocity components
    /// (`a * d + c`), each of length `N_u`.
    pub z_rows: Dense,
}

/// Online part of an EIM approximation: magic element slots and `T`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OnlineEim {
    /// Index into [`RomPackage::magic_elements`] for each term.
    pub slots: Vec<usize>,
    pub t: Vec<Vec<f64>>,
}

impl OnlineEim {
    pub fn q(&self) -> usize {
        self.slots.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub case_id: String,
    pub mesh_hash: String,
    pub basis_hash: String,
    pub eta_hash: String,
    pub tau_hash: String,
}

/// Everything an online solve needs; no mesh access required.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RomPackage {
    pub provenance: Provenance,
    pub spatial_dim: usize,
    pub material: CarreauYasudaParams,
    pub parameters: ParameterSpace,
    pub base_inflow: f64,
    pub lift_scalings: Vec<LiftScaling>,
    pub n_lifts: usize,
    pub n_u: usize,
    pub n_p: usize,
    /// FOM dimension `N^h`, for reference.
    pub n_h: usize,
    pub picard: PicardOptions,
    pub e: Dense,
    /// `B_N`, `N_p × N_u`; `Bᵀ_N` is its transpose.
    pub b: Dense,
    pub f: Vec<f64>,
    pub a_q: Vec<Dense>,
    pub c_q: Vec<Dense>,
    pub s_q: Vec<Dense>,
    pub d_q: Vec<Vec<f64>>,
    pub eta: OnlineEim,
    pub tau: OnlineEim,
    pub magic_elements: Vec<MagicElement>,
}

/// Reduced blocks for one iterate, shaped like the FOM system.
#[derive(Debug, Clone, PartialEq)]
pub struct ReducedSystem {
    pub e: Dense,
    pub a: Dense,
    pub bt: Dense,
    pub b: Dense,
    pub c: Dense,
    pub s: Dense,
    pub h: Vec<f64>,
    pub f: Vec<f64>,
    pub l: Vec<f64>,
    pub g: Vec<f64>,
    pub d: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReducedSolution {
    pub mu: ParameterVector,
    /// Coefficients of `Z_v`; the leading ones are the lifting coefficients.
    pub v: Vec<f64>,
    pub p: Vec<f64>,
    pub log: Vec<PicardStep>,
    pub seconds: f64,
}

impl ReducedSolution {
    pub fn iterations(&self) -> usize {
        self.log.len()
    }
}

/// Projects the FOM operators, with `η` and `τ` replaced by their EIM bases.
pub fn project_offline(
    problem: &FomProblem,
    basis: &ReducedBasis,
    eta: &EimApproximation,
    tau: &EimApproximation,
    provenance: Provenance,
    picard: PicardOptions,
) -> Result<RomPackage> {
    let dm = &problem.dofs;
    let asm = &problem.assembler;
    let d = dm.spatial_dim;
    if basis.n_lifts() != problem.liftings.len() {
        return Err(Error::Dimension(format!("basis has {} lifts, problem has {}", basis.n_lifts(), problem.liftings.len())));
    }
    let nv_full = dm.n_velocity_full();
    if basis.z_v_columns().any(|c| c.len() != nv_full) || basis.pressure_modes.iter().any(|c| c.len() != dm.n_pressure()) {
        return Err(Error::Dimension("basis does not match the problem's DOFs".into()));
    }
    let ne = problem.mesh.element_count();
    for e in [eta, tau] {
        if e.q() == 0 || e.basis.iter().any(|h| h.len() != ne) {
            return Err(Error::Dimension(format!("EIM for {} does not match the mesh", e.tag)));
        }
    }
    let zv: Vec<&[f64]> = basis.z_v_columns().collect();
    let zp_nodal: Vec<Vec<f64>> = basis.pressure_modes.iter().map(|c| dm.nodal_pressure(c)).collect();
    let zp: Vec<&[f64]> = zp_nodal.iter().map(Vec::as_slice).collect();

    let e = triple_product(&asm.temporal, &zv, &zv);
    let b = triple_product(&asm.divergence, &zp, &zv);
    let f: Vec<f64> = zv.iter().map(|z| dot(z, &asm.force)).collect();
    let a_q = eta.basis.par_iter().map(|h| Ok(triple_product(&asm.viscous(h)?, &zv, &zv))).collect::<Result<Vec<_>>>()?;
    let stab = tau
        .basis
        .par_iter()
        .map(|h| {
            let (c, s, dst) = asm.stabilization(h)?;
            Ok((triple_product(&c, &zp, &zv), triple_product(&s, &zp, &zp), zp.iter().map(|z| dot(z, &dst)).collect::<Vec<f64>>()))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut c_q = Vec::new();
    let mut s_q = Vec::new();
    let mut d_q = Vec::new();
    for (c, s, dv) in stab {
        c_q.push(c);
        s_q.push(s);
        d_q.push(dv);
    }

    let mut elements: Vec<usize> = Vec::new();
    let mut slot = |m: usize| match elements.iter().position(|&x| x == m) {
        Some(k) => k,
        None => {
            elements.push(m);
            elements.len() - 1
        }
    };
    let eta_online = OnlineEim { slots: eta.magic.iter().map(|&m| slot(m)).collect(), t: eta.t.clone() };
    let tau_online = OnlineEim { slots: tau.magic.iter().map(|&m| slot(m)).collect(), t: tau.t.clone() };
    let magic_elements = elements
        .iter()
        .map(|&el| {
            let nodes = problem.mesh.element(el);
            MagicElement {
                element: el,
                geometry: problem.geometry[el].clone(),
                z_rows: Dense::from_fn(nodes.len() * d, zv.len(), |r, j| zv[j][nodes[r / d] * d + r % d]),
            }
        })
        .collect();

    Ok(RomPackage {
        provenance,
        spatial_dim: d,
        material: problem.material,
        parameters: problem.parameters.clone(),
        base_inflow: problem.base_inflow(),
        lift_scalings: problem.liftings.iter().map(|l| l.scaling).collect(),
        n_lifts: basis.n_lifts(),
        n_u: basis.n_u(),
        n_p: basis.n_p(),
        n_h: dm.n_total(),
        picard,
        e,
        b,
        f,
        a_q,
        c_q,
        s_q,
        d_q,
        eta: eta_online,
        tau: tau_online,
        magic_elements,
    })
}

impl RomPackage {
    pub fn n_modes(&self) -> usize {
        self.n_u - self.n_lifts
    }

    /// Package for the leading `n_modes` velocity and `n_p` pressure modes.
    pub fn truncated(&self, n_modes: usize, n_p: usize) -> Result<RomPackage> {
        if n_modes > self.n_modes() || n_p > self.n_p {
            return Err(Error::InvalidArgument(format!(
                "requested N_v = {n_modes}, N_p = {n_p}; package has {} and {}",
                self.n_modes(),
                self.n_p
            )));
        }
        let nu = self.n_lifts + n_modes;
        let mut out = self.clone();
        out.n_u = nu;
        out.n_p = n_p;
        out.e = self.e.leading(nu, nu);
        out.b = self.b.leading(n_p, nu);
        out.f.truncate(nu);
        out.a_q = self.a_q.iter().map(|m| m.leading(nu, nu)).collect();
        out.c_q = self.c_q.iter().map(|m| m.leading(n_p, nu)).collect();
        out.s_q = self.s_q.iter().map(|m| m.leading(n_p, n_p)).collect();
        out.d_q = self.d_q.iter().map(|v| v[..n_p].to_vec()).collect();
        for m in &mut out.magic_elements {
            m.z_rows = m.z_rows.leading(m.z_rows.rows, nu);
        }
        Ok(out)
    }

    /// Package keeping only the first `q_eta` and `q_tau` EIM terms. EIM is
    /// nested, so this equals a package built with those term counts.
    pub fn with_eim_terms(&self, q_eta: usize, q_tau: usize) -> Result<RomPackage> {
        if q_eta == 0 || q_tau == 0 || q_eta > self.eta.q() || q_tau > self.tau.q() {
            return Err(Error::InvalidArgument(format!(
                "requested Q_eta = {q_eta}, Q_tau = {q_tau}; package has {} and {}",
                self.eta.q(),
                self.tau.q()
            )));
        }
        let mut out = self.clone();
        out.a_q.truncate(q_eta);
        out.c_q.truncate(q_tau);
        out.s_q.truncate(q_tau);
        out.d_q.truncate(q_tau);
        let leading = |t: &[Vec<f64>], q: usize| t[..q].iter().map(|r| r[..q].to_vec()).collect::<Vec<_>>();
        let mut kept = Vec::new();
        let mut slot = |k: usize| match kept.iter().position(|&x| x == k) {
            Some(s) => s,
            None => {
                kept.push(k);
                kept.len() - 1
            }
        };
        out.eta = OnlineEim { slots: self.eta.slots[..q_eta].iter().map(|&k| slot(k)).collect(), t: leading(&self.eta.t, q_eta) };
        out.tau = OnlineEim { slots: self.tau.slots[..q_tau].iter().map(|&k| slot(k)).collect(), t: leading(&self.tau.t, q_tau) };
        out.magic_elements = kept.iter().map(|&k| self.magic_elements[k].clone()).collect();
        Ok(out)
    }

    pub fn lift_coefficients(&self, mu: &ParameterVector) -> Result<Vec<f64>> {
        let eff = self.parameters.apply(&self.material, self.base_inflow, mu)?;
        Ok(self.lift_scalings.iter().map(|s| s.coefficient(&eff)).collect())
    }

    /// EIM coefficients for `η` and `τ` at the velocity `Z_v v`, evaluated on
    /// magic elements only.
    pub fn eim_coefficients(&self, v: &[f64], material: &CarreauYasudaParams) -> Result<(Vec<f64>, Vec<f64>)> {
        let fields: Vec<_> = self.magic_elements.iter().map(|m| element_fields(&m.geometry, &m.z_rows.matvec(v), material)).collect();
        let eta: Vec<f64> = self.eta.slots.iter().map(|&k| fields[k].eta).collect();
        let tau: Vec<f64> = self.tau.slots.iter().map(|&k| fields[k].tau).collect();
        if let Some(k) = eta.iter().chain(&tau).position(|x| !x.is_finite()) {
            return Err(Error::NonFinite { element: self.magic_elements[k % self.magic_elements.len().max(1)].element });
        }
        Ok((forward(&self.eta.t, &eta, self.eta.q()), forward(&self.tau.t, &tau, self.tau.q())))
    }

    /// Reduced blocks at the coefficient iterate `v` (length `N_u`).
    pub fn assemble(&self, v: &[f64], mu: &ParameterVector) -> Result<ReducedSystem> {
        if v.len() != self.n_u {
            return Err(Error::Dimension(format!("iterate has {} coefficients, N_u = {}", v.len(), self.n_u)));
        }
        let eff = self.parameters.apply(&self.material, self.base_inflow, mu)?;
        let alpha = self.lift_coefficients(mu)?;
        let (ce, ct) = self.eim_coefficients(v, &eff.material)?;
        let (nu, np, nl) = (self.n_u, self.n_p, self.n_lifts);
        let a = Dense::combination(&self.a_q, &ce, nu, nu);
        let c = Dense::combination(&self.c_q, &ct, np, nu);
        let s = Dense::combination(&self.s_q, &ct, np, np);
        let mut lift = vec![0.0; nu];
        lift[..nl].copy_from_slice(&alpha);
        let neg = |m: &Dense| -> Vec<f64> { m.matvec(&lift).iter().map(|x| -x).collect() };
        let mut d = neg(&c);
        for (dq, &cq) in self.d_q.iter().zip(&ct) {
            for (x, y) in d.iter_mut().zip(dq) {
                *x += cq * y;
            }
        }
        Ok(ReducedSystem {
            h: neg(&self.e),
            f: self.f.clone(),
            l: neg(&a),
            g: neg(&self.b),
            d,
            e: self.e.clone(),
            bt: self.b.transpose(),
            b: self.b.clone(),
            a,
            c,
            s,
        })
    }

    /// Online Picard solve; single-threaded.
    pub fn solve(&self, mu: &ParameterVector, opts: &PicardOptions) -> Result<ReducedSolution> {
        let start = Instant::now();
        let alpha = self.lift_coefficients(mu)?;
        let (nu, np, nl) = (self.n_u, self.n_p, self.n_lifts);
        let nm = nu - nl;
        let k = nm + np;
        let mut v = vec![0.0; nu];
        v[..nl].copy_from_slice(&alpha);
        let mut x = vec![0.0; k];
        let mut log = Vec::new();
        for it in 1..=opts.max_iterations {
            let sys = self.assemble(&v, mu)?;
            let m = Mat::<f64>::from_fn(k, k, |i, j| match (i < nm, j < nm) {
                (true, true) => sys.e.get(nl + i, nl + j) + sys.a.get(nl + i, nl + j),
                (true, false) => -sys.b.get(j - nm, nl + i),
                (false, true) => sys.b.get(i - nm, nl + j) + sys.c.get(i - nm, nl + j),
                (false, false) => sys.s.get(i - nm, j - nm),
            });
            let rhs: Vec<f64> = (0..k)
                .map(|i| if i < nm { sys.h[nl + i] + sys.f[nl + i] + sys.l[nl + i] } else { sys.g[i - nm] + sys.d[i - nm] })
                .collect();
            let x_new = dense_solve(&m, &rhs).map_err(|e| match e {
                Error::SingularSystem(msg) => Error::SingularSystem(format!("{msg} (N_u = {nu}, N_p = {np})")),
                other => other,
            })?;
            let update = relative_update(&x, &x_new, nm);
            let residual = {
                let r: Vec<f64> = (0..k).map(|i| rhs[i] - (0..k).map(|j| m[(i, j)] * x_new[j]).sum::<f64>()).collect();
                ratio(norm(&r), norm(&rhs))
            };
            log.push(PicardStep { iteration: it, relative_update: update, linear_residual: residual });
            x = x_new;
            v[nl..].copy_from_slice(&x[..nm]);
            if update <= opts.tol {
                return Ok(ReducedSolution { mu: mu.clone(), v, p: x[nm..].to_vec(), log, seconds: start.elapsed().as_secs_f64() });
            }
        }
        Err(Error::NotConverged { iterations: opts.max_iterations, last_update: log.last().map_or(f64::NAN, |s| s.relative_update) })
    }
}

fn dense_solve(m: &Mat<f64>, rhs: &[f64]) -> Result<Vec<f64>> {
    let n = rhs.len();
    if n == 0 {
        return Ok(Vec::new());
    }
    let lu = m.partial_piv_lu();
    let b = Mat::<f64>::from_fn(n, 1, |i, _| rhs[i]);
    let x = lu.solve(&b);
    let out: Vec<f64> = (0..n).map(|i| x[(i, 0)]).collect();
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::SingularSystem("reduced system is singular".into()));
    }
    Ok(out)
}

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn ratio(num: f64, den: f64) -> f64 {
    if num == 0.0 {
        0.0
    } else {
        num / den
    }
}

fn relative_update(old: &[f64], new: &[f64], nv: usize) -> f64 {
    let diff: Vec<f64> = old.iter().zip(new).map(|(a, b)| b - a).collect();
    ratio(norm(&diff), norm(new)).max(ratio(norm(&diff[..nv]), norm(&new[..nv])))
}

/// Full nodal velocity `Z_v v` and pressure DOFs `Z_p p`.
pub fn reconstruct(basis: &ReducedBasis, sol: &ReducedSolution) -> Result<(Vec<f64>, Vec<f64>)> {
    if sol.v.len() > basis.n_u() || sol.p.len() > basis.n_p() || sol.v.len() < basis.n_lifts() {
        return Err(Error::Dimension("reduced solution does not fit the basis".into()));
    }
    let len = basis.lifts.first().or(basis.velocity_modes.first()).map_or(0, Vec::len);
    let mut u = vec![0.0; len];
    for (j, &c) in sol.v.iter().enumerate() {
        for (x, z) in u.iter_mut().zip(basis.z_v(j)) {
            *x += c * z;
        }
    }
    let plen = basis.pressure_modes.first().map_or(0, Vec::len);
    let p = crate::pod::combine(&basis.pressure_modes[..sol.p.len()], &sol.p, plen);
    Ok((u, p))
}
