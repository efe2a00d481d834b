//! Property suites shared by the `invariants` test target and the acceptance
//! harness. Each suite runs a proptest runner and reports the first failure.

use std::collections::BTreeMap;
use std::sync::OnceLock;

use proptest::prelude::*;
use proptest::test_runner::{Config, TestCaseError, TestError, TestRunner};
use stmor::constitutive::{BodyForce, CarreauYasudaParams, ParameterComponent, ParameterRole, ParameterSpace, ParameterVector};
use stmor::eim::{eim_greedy, EimOptions, FieldTag};
use stmor::fom::{BoundaryCondition, FomProblem, PicardOptions};
use stmor::mesh::builders::{channel, linspace, rectangle, ChannelGeometry};
use stmor::mesh::deformation::AxisStretch;
use stmor::mesh::{deform, extrude, nonmanifold_facet_count, BoundaryTag, DeformationMap};
use stmor::offline::{build_basis, build_eims, solve_all};
use stmor::pod::{compute_pod, inner, PodOptions, ReducedBasis, Truncation};
use stmor::rom::{project_offline, reconstruct, Provenance, ReducedSolution, RomPackage};
use stmor::sparse::CsrMatrix;

#[allow(dead_code)]
pub type Suite = fn(u32) -> Result<(), String>;

#[allow(dead_code)]
pub const SUITES: [(&str, Suite); 5] = [
    ("mesh conformity and measure", mesh_suite),
    ("basis orthonormality", pod_suite),
    ("EIM magic-point exactness", eim_suite),
    ("Dirichlet exactness of reconstructions", dirichlet_suite),
    ("block dimensions", dimension_suite),
];

fn run<S: Strategy>(cases: u32, strategy: S, test: impl Fn(S::Value) -> Result<(), TestCaseError>) -> Result<(), String>
where
    S::Value: std::fmt::Debug,
{
    let mut runner = TestRunner::new(Config { cases, failure_persistence: None, ..Config::default() });
    runner.run(&strategy, test).map_err(|e| match e {
        TestError::Fail(why, input) => format!("{why} for input {input:?}"),
        TestError::Abort(why) => format!("aborted: {why}"),
    })
}

fn levels() -> impl Strategy<Value = Vec<f64>> {
    (prop::collection::vec(0.05f64..1.0, 1..5), -1.0f64..1.0).prop_map(|(steps, t0)| {
        let mut t = vec![t0];
        for s in steps {
            t.push(t.last().unwrap() + s);
        }
        t
    })
}

/// Extruded rectangles, plain and uniformly stretched in x: no facet is
/// shared by more than two elements, the boundary facet count matches the
/// extruded spatial boundary plus the two end caps, every element has
/// positive measure and the total measure is the exact space-time volume.
pub fn mesh_suite(cases: u32) -> Result<(), String> {
    let strategy = (1usize..6, 1usize..6, 0.2f64..2.0, 0.2f64..2.0, levels(), -0.4f64..0.8);
    run(cases, strategy, |(nx, ny, a, b, t, rate)| {
        let spatial = rectangle([0.0, 0.0], [a, b], [nx, ny], |_| BoundaryTag::Dirichlet("w".into())).unwrap();
        let (t0, t1) = (t[0], *t.last().unwrap());
        let map = DeformationMap::Analytic(AxisStretch { axis: 0, rate_per_s: rate / t1.abs().max(t0.abs()).max(1.0) });
        let plain = extrude(&spatial, &t).unwrap();
        let stretched = deform(&plain, &map).map_err(|e| TestCaseError::fail(e.to_string()))?;
        let r = match &map {
            DeformationMap::Analytic(s) => s.rate_per_s,
            _ => unreachable!(),
        };
        let slabs = t.len() - 1;
        let expected_facets = 2 * 2 * (nx + ny) * slabs + 2 * 2 * nx * ny;
        for (mesh, volume) in [(&plain, a * b * (t1 - t0)), (&stretched, a * b * ((t1 - t0) + r * (t1 * t1 - t0 * t0) / 2.0))] {
            prop_assert_eq!(nonmanifold_facet_count(mesh.elements(), 4), 0);
            prop_assert_eq!(mesh.boundary().len(), expected_facets);
            prop_assert_eq!(mesh.element_count(), 3 * 2 * nx * ny * slabs);
            for e in 0..mesh.element_count() {
                prop_assert!(mesh.element_geometry(e).unwrap().measure > 0.0);
            }
            prop_assert!((mesh.measure() - volume).abs() <= 1e-12 * volume, "measure {} vs {}", mesh.measure(), volume);
        }
        Ok(())
    })
}

fn spd_diagonal(n: usize, seed: &[f64]) -> CsrMatrix {
    let t: Vec<_> = (0..n).map(|i| (i, i, 0.5 + seed[i % seed.len()])).collect();
    CsrMatrix::from_triplets(n, n, &t)
}

/// POD modes of random snapshot sets are orthonormal in the Euclidean and in
/// a weighted inner product.
pub fn pod_suite(cases: u32) -> Result<(), String> {
    let strategy = (10usize..40, 2usize..8).prop_flat_map(|(n, m)| {
        (prop::collection::vec(prop::collection::vec(-1.0f64..1.0, n), m), prop::collection::vec(0.0f64..2.0, n), any::<bool>())
    });
    run(cases, strategy, |(snaps, weights, weighted)| {
        let gram = weighted.then(|| spd_diagonal(weights.len(), &weights));
        let pod = compute_pod(&snaps, gram.as_ref(), Truncation::Energy(1.0)).map_err(|e| TestCaseError::fail(e.to_string()))?;
        prop_assert!(!pod.modes.is_empty());
        for (i, a) in pod.modes.iter().enumerate() {
            for (j, b) in pod.modes.iter().enumerate() {
                let target = if i == j { 1.0 } else { 0.0 };
                let ip = inner(gram.as_ref(), a, b);
                prop_assert!((ip - target).abs() <= 1e-10, "<z{},z{}> = {}", i, j, ip);
            }
        }
        Ok(())
    })
}

/// Greedy EIM on random positive fields: T is unit lower-triangular, every
/// training column is matched at the magic elements, and the history starts
/// at one and ends below the tolerance unless Q hit its cap.
pub fn eim_suite(cases: u32) -> Result<(), String> {
    let strategy =
        (20usize..80, 2usize..10).prop_flat_map(|(n, m)| (prop::collection::vec(prop::collection::vec(0.1f64..3.0, n), m), 1usize..12));
    run(cases, strategy, |(cols, q_max)| {
        let tol = 1e-12;
        let approx = eim_greedy(FieldTag::Eta, &cols, tol, q_max).map_err(|e| TestCaseError::fail(e.to_string()))?;
        let q = approx.q();
        prop_assert!(q >= 1 && q <= q_max.min(cols.len()));
        prop_assert_eq!(approx.history[0], 1.0);
        if q < q_max {
            prop_assert!(approx.final_error() <= tol);
        }
        for i in 0..q {
            prop_assert_eq!(approx.t[i][i], 1.0);
            for j in i + 1..q {
                prop_assert_eq!(approx.t[i][j], 0.0);
            }
        }
        for col in &cols {
            let values: Vec<f64> = approx.magic.iter().map(|&m| col[m]).collect();
            let c = approx.coefficients(&values).unwrap();
            let field = approx.interpolate(&c);
            let scale = col.iter().fold(0.0f64, |s, v| s.max(v.abs()));
            for &m in &approx.magic {
                prop_assert!((field[m] - col[m]).abs() <= 1e-13 * scale, "element {}: {} vs {}", m, field[m], col[m]);
            }
        }
        Ok(())
    })
}

pub struct Channel {
    pub problem: FomProblem,
    pub basis: ReducedBasis,
    pub package: RomPackage,
}

/// Small parametrized channel with a full ROM, built once per process.
pub fn channel_rom() -> &'static Channel {
    static CELL: OnceLock<Channel> = OnceLock::new();
    CELL.get_or_init(|| {
        let spatial = channel(&ChannelGeometry { x_range_m: [-0.03, 0.03], radius_m: 5e-3, cells: [6, 3] }).unwrap();
        let mesh = extrude(&spatial, &linspace(0.0, 0.3, 3)).unwrap();
        let conditions = BTreeMap::from([
            (
                "dirichlet:inlet".to_owned(),
                BoundaryCondition::ArteryInflow {
                    amplitude_m_s: 0.1,
                    radius_m: 5e-3,
                    center_y_m: 0.0,
                    ramp_time_s: 0.2,
                    parametrized: true,
                },
            ),
            ("dirichlet:outlet".to_owned(), BoundaryCondition::ParallelOutflow { component: 1 }),
            ("dirichlet:wall".to_owned(), BoundaryCondition::NoSlip),
        ]);
        let space = ParameterSpace {
            components: vec![
                ParameterComponent { name: "u_in".into(), role: ParameterRole::InflowAmplitude, min: 0.09, max: 0.11 },
                ParameterComponent { name: "n".into(), role: ParameterRole::PowerIndex, min: 0.6, max: 0.8 },
            ],
        };
        let mut blood = CarreauYasudaParams::blood();
        blood.lambda_s = 5.0;
        let problem = FomProblem::new(mesh, blood, space, BodyForce::default(), &conditions).unwrap();
        let train: Vec<ParameterVector> =
            [[0.09, 0.6], [0.09, 0.8], [0.11, 0.6], [0.11, 0.8], [0.1, 0.7]].iter().map(|m| ParameterVector(m.to_vec())).collect();
        let opts = PicardOptions::default();
        let snaps: Vec<_> = solve_all(&problem, &train, &opts).into_iter().map(Result::unwrap).collect();
        let basis = build_basis(&problem, &snaps, &PodOptions { energy_threshold: 1.0, ..Default::default() }).unwrap();
        let (eta, tau) = build_eims(&problem, &snaps, &EimOptions::default()).unwrap();
        let prov = Provenance {
            case_id: "channel".into(),
            mesh_hash: problem.mesh.hash(),
            basis_hash: String::new(),
            eta_hash: String::new(),
            tau_hash: String::new(),
        };
        let package = project_offline(&problem, &basis, &eta, &tau, prov, opts).unwrap();
        Channel { problem, basis, package }
    })
}

fn mu_strategy() -> impl Strategy<Value = ParameterVector> {
    (0.09f64..=0.11, 0.6f64..=0.8).prop_map(|(a, n)| ParameterVector(vec![a, n]))
}

/// Reconstructions with arbitrary mode and pressure coefficients match the
/// Dirichlet data that the FOM imposes at the same parameter sample.
pub fn dirichlet_suite(cases: u32) -> Result<(), String> {
    let ch = channel_rom();
    let (n_modes, n_p) = (ch.package.n_modes(), ch.package.n_p);
    let strategy = (mu_strategy(), prop::collection::vec(-10.0f64..10.0, n_modes), prop::collection::vec(-1e3f64..1e3, n_p));
    run(cases, strategy, |(mu, modes, p)| {
        let fom = ch.problem.solve(&mu, &PicardOptions { tol: 1e-2, max_iterations: 50 }).unwrap();
        let exact = ch.problem.velocity_full(&fom);
        let mut v = ch.package.lift_coefficients(&mu).unwrap();
        v.extend(&modes);
        let red = ReducedSolution { mu: mu.clone(), v, p, log: vec![], seconds: 0.0 };
        let (u, _) = reconstruct(&ch.basis, &red).unwrap();
        let scale = exact.iter().fold(0.0f64, |s, x| s.max(x.abs()));
        for (g, _) in ch.problem.dofs.dirichlet.iter().enumerate().filter(|(_, &fixed)| fixed) {
            prop_assert!((u[g] - exact[g]).abs() <= 1e-10 * scale.max(1.0), "dof {}: {} vs {}", g, u[g], exact[g]);
        }
        Ok(())
    })
}

/// FOM blocks have the full-order shapes and every truncated package
/// assembles blocks of the reduced shapes.
pub fn dimension_suite(cases: u32) -> Result<(), String> {
    let ch = channel_rom();
    let pkg = &ch.package;
    let (nv, np) = (ch.problem.dofs.n_velocity(), ch.problem.dofs.n_pressure());
    let strategy = (mu_strategy(), 1..=pkg.n_modes(), 1..=pkg.n_p, 1..=pkg.eta.q(), 1..=pkg.tau.q());
    run(cases, strategy, |(mu, modes, n_p, q_eta, q_tau)| {
        let u = ch.problem.velocity_full(&ch.problem.solve(&mu, &PicardOptions { tol: 1e-2, max_iterations: 50 }).unwrap());
        let sys = ch.problem.assemble_system(&u, &mu).unwrap();
        for (m, shape) in
            [(&sys.e, (nv, nv)), (&sys.a, (nv, nv)), (&sys.bt, (nv, np)), (&sys.b, (np, nv)), (&sys.c, (np, nv)), (&sys.s, (np, np))]
        {
            prop_assert_eq!(m.shape(), shape);
        }
        prop_assert!([&sys.h, &sys.f, &sys.l].iter().all(|v| v.len() == nv));
        prop_assert!(sys.g.len() == np && sys.d.len() == np);

        let small = pkg.with_eim_terms(q_eta, q_tau).unwrap().truncated(modes, n_p).unwrap();
        let n_u = small.n_lifts + modes;
        prop_assert_eq!((small.n_u, small.n_p, small.eta.q(), small.tau.q()), (n_u, n_p, q_eta, q_tau));
        prop_assert_eq!(small.a_q.len(), q_eta);
        let mut v = small.lift_coefficients(&mu).unwrap();
        v.resize(n_u, 0.0);
        let r = small.assemble(&v, &mu).unwrap();
        for (m, shape) in
            [(&r.e, (n_u, n_u)), (&r.a, (n_u, n_u)), (&r.bt, (n_u, n_p)), (&r.b, (n_p, n_u)), (&r.c, (n_p, n_u)), (&r.s, (n_p, n_p))]
        {
            prop_assert_eq!(m.shape(), shape);
        }
        prop_assert!([&r.h, &r.f, &r.l].iter().all(|v| v.len() == n_u));
        prop_assert!(r.g.len() == n_p && r.d.len() == n_p);
        Ok(())
    })
}
