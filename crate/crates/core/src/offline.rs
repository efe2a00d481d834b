//! Offline stages: training solves, POD bases and EIM approximations.

use rayon::prelude::*;

use crate::constitutive::ParameterVector;
use crate::eim::{eim_greedy, EimApproximation, EimOptions, FieldTag};
use crate::error::{Error, Result};
use crate::fom::{FomProblem, FomSolution, PicardOptions};
use crate::pod::{compute_pod, velocity_gram_condition, InnerProduct, PodOptions, ReducedBasis, Truncation};

/// Runs `f` on a pool of `workers` threads (all cores when zero).
pub fn with_workers<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::InvalidArgument(format!("cannot start worker pool: {e}")))?;
    Ok(pool.install(f))
}

/// FOM solves for every sample, in sample order.
pub fn solve_all(problem: &FomProblem, samples: &[ParameterVector], opts: &PicardOptions) -> Vec<Result<FomSolution>> {
    samples.par_iter().map(|mu| problem.solve(mu, opts)).collect()
}

fn truncation(threshold: f64, max: Option<usize>, available: usize) -> Truncation {
    match max {
        Some(n) => Truncation::Fixed(n.min(available)),
        None => Truncation::Energy(threshold),
    }
}

/// POD of the homogeneous velocities (in the H¹ seminorm on the full nodal
/// space) and of the pressures (in L²), with the liftings leading `Z_v`.
pub fn build_basis(problem: &FomProblem, snapshots: &[FomSolution], opts: &PodOptions) -> Result<ReducedBasis> {
    if snapshots.is_empty() {
        return Err(Error::InvalidArgument("no snapshots".into()));
    }
    let ip = problem.inner_products();
    let (k, m) = match opts.inner_product {
        InnerProduct::Energy => (Some(&ip.k_full), Some(&ip.m_p)),
        InnerProduct::Euclidean => (None, None),
    };
    let v: Vec<Vec<f64>> = snapshots.iter().map(|s| problem.dofs.scatter_velocity(&s.v)).collect();
    let p: Vec<Vec<f64>> = snapshots.iter().map(|s| s.p.clone()).collect();
    let n = snapshots.len();
    let (vpod, ppod) = rayon::join(
        || compute_pod(&v, k, truncation(opts.energy_threshold, opts.max_velocity_modes, n)),
        || compute_pod(&p, m, truncation(opts.energy_threshold, opts.max_pressure_modes, n)),
    );
    let (vpod, ppod) = (vpod?, ppod?);
    let basis = ReducedBasis {
        lifts: problem.liftings.iter().map(|l| l.values.clone()).collect(),
        velocity_modes: vpod.modes,
        pressure_modes: ppod.modes,
        velocity_spectrum: vpod.eigenvalues,
        pressure_spectrum: ppod.eigenvalues,
        inner_product: opts.inner_product,
    };
    let cond = velocity_gram_condition(&basis, &ip.k_full);
    tracing::info!(n_u = basis.n_u(), n_p = basis.n_p(), gram_condition = cond, "basis");
    Ok(basis)
}

/// Per-element `η` and `τ` of each converged snapshot.
pub fn field_samples(problem: &FomProblem, snapshots: &[FomSolution]) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    let pairs = snapshots
        .par_iter()
        .map(|s| {
            let eff = problem.effective(&s.mu)?;
            Ok(problem.element_fields(&problem.velocity_full(s), &eff.material))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(pairs.into_iter().unzip())
}

pub fn build_eims(problem: &FomProblem, snapshots: &[FomSolution], opts: &EimOptions) -> Result<(EimApproximation, EimApproximation)> {
    let (eta, tau) = field_samples(problem, snapshots)?;
    let (a, b) = rayon::join(
        || eim_greedy(FieldTag::Eta, &eta, opts.tol_eta, opts.q_max),
        || eim_greedy(FieldTag::Tau, &tau, opts.tol_tau, opts.q_max),
    );
    Ok((a?, b?))
}
