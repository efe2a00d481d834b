//! Manufactured and exact-solution checks for the full-order model.

use std::collections::BTreeMap;
use std::time::Instant;

use serde::Serialize;

use crate::constitutive::{BodyForce, CarreauYasudaParams, ParameterSpace, ParameterVector};
use crate::error::Result;
use crate::fom::{BoundaryCondition, FomProblem, PicardOptions};
use crate::mesh::builders::{linspace, rectangle};
use crate::mesh::quadrature::degree2_rule;
use crate::mesh::{extrude, BoundaryTag};

#[derive(Debug, Clone, Serialize)]
pub struct CouetteReport {
    pub nodes: usize,
    pub eps_u: f64,
    pub pressure_l2: f64,
    pub rho: f64,
    pub iterations: usize,
    pub seconds: f64,
}

fn unit_square_problem(
    cells: usize,
    levels: usize,
    material: CarreauYasudaParams,
    force: BodyForce,
    wall: BoundaryCondition,
    initial: BoundaryCondition,
) -> Result<FomProblem> {
    let spatial = rectangle([0.0, 0.0], [1.0, 1.0], [cells, cells], |_| BoundaryTag::Dirichlet("wall".into()))?;
    let mesh = extrude(&spatial, &linspace(0.0, 1.0, levels - 1))?;
    let conditions = BTreeMap::from([("dirichlet:wall".to_owned(), wall), ("initial".to_owned(), initial)]);
    FomProblem::new(mesh, material, ParameterSpace { components: vec![] }, force, &conditions)
}

fn seminorm(problem: &FomProblem, u: &[f64]) -> f64 {
    problem.assembler.h1_seminorm.bilinear(u, u).max(0.0).sqrt()
}

/// Newtonian Couette flow `u = (y, 0)`, `p = 0` on the unit square.
pub fn couette(cells: usize, levels: usize) -> Result<CouetteReport> {
    let shear = BoundaryCondition::Affine { value: vec![0.0, 0.0], gradient: vec![vec![0.0, 1.0], vec![0.0, 0.0]], time_rate: vec![] };
    let material = CarreauYasudaParams::newtonian(1.0, 1.0);
    let start = Instant::now();
    let problem = unit_square_problem(cells, levels, material, BodyForce::default(), shear.clone(), shear)?;
    let sol = problem.solve(&ParameterVector(vec![]), &PicardOptions::default())?;
    let seconds = start.elapsed().as_secs_f64();
    let u = problem.velocity_full(&sol);
    let exact: Vec<f64> = (0..problem.mesh.node_count()).flat_map(|i| [problem.mesh.node(i)[1], 0.0]).collect();
    let diff: Vec<f64> = u.iter().zip(&exact).map(|(a, b)| a - b).collect();
    let p = problem.pressure_nodal(&sol);
    Ok(CouetteReport {
        nodes: problem.mesh.node_count(),
        eps_u: seminorm(&problem, &diff) / seminorm(&problem, &exact),
        pressure_l2: problem.assembler.l2_mass.bilinear(&p, &p).max(0.0).sqrt(),
        rho: material.rho_kg_m3,
        iterations: sol.iterations(),
        seconds,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct ConvergenceLevel {
    pub cells: usize,
    pub h: f64,
    pub error: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ConvergenceReport {
    pub levels: Vec<ConvergenceLevel>,
    /// Smallest observed rate between consecutive levels.
    pub rate: f64,
    pub seconds: f64,
}

/// Steady Poiseuille flow `u = (4y(1-y), 0)` driven by `f = (8, 0)` with
/// `ρ = η = 1`; absolute H¹-seminorm error against the exact gradient.
pub fn poiseuille_convergence(cells: &[usize]) -> Result<ConvergenceReport> {
    let start = Instant::now();
    let profile = BoundaryCondition::Parabolic { amplitude_m_s: 1.0, y_range_m: [0.0, 1.0], component: 0 };
    let mut levels = Vec::new();
    for &n in cells {
        let problem = unit_square_problem(
            n,
            n / 2 + 1,
            CarreauYasudaParams::newtonian(1.0, 1.0),
            BodyForce(vec![8.0, 0.0]),
            profile.clone(),
            profile.clone(),
        )?;
        let sol = problem.solve(&ParameterVector(vec![]), &PicardOptions::default())?;
        let u = problem.velocity_full(&sol);
        let rule = degree2_rule(3);
        let mut err2 = 0.0;
        for e in 0..problem.mesh.element_count() {
            let g = &problem.geometry[e];
            let nodes = problem.mesh.element(e);
            let mut grad = [[0.0; 2]; 2];
            for (a, &node) in nodes.iter().enumerate() {
                for c in 0..2 {
                    for k in 0..2 {
                        grad[c][k] += u[node * 2 + c] * g.grad_x(a)[k];
                    }
                }
            }
            for q in &rule {
                let y: f64 = nodes.iter().zip(&q.bary).map(|(&i, b)| b * problem.mesh.node(i)[1]).sum();
                let exact = 4.0 - 8.0 * y;
                let e2 = grad[0][0].powi(2) + (grad[0][1] - exact).powi(2) + grad[1][0].powi(2) + grad[1][1].powi(2);
                err2 += g.measure * q.weight * e2;
            }
        }
        levels.push(ConvergenceLevel { cells: n, h: 1.0 / n as f64, error: err2.sqrt() });
    }
    let rate = levels.windows(2).map(|w| (w[0].error / w[1].error).ln() / (w[0].h / w[1].h).ln()).fold(f64::INFINITY, f64::min);
    Ok(ConvergenceReport { levels, rate, seconds: start.elapsed().as_secs_f64() })
}
