use std::collections::BTreeMap;

use stmor::constitutive::{BodyForce, CarreauYasudaParams, ParameterComponent, ParameterRole, ParameterSpace, ParameterVector};
use stmor::eim::EimOptions;
use stmor::fom::{BoundaryCondition, FomProblem, FomSolution, PicardOptions};
use stmor::mesh::builders::{channel, linspace, ChannelGeometry};
use stmor::mesh::extrude;
use stmor::offline::{build_basis, build_eims, solve_all};
use stmor::pod::PodOptions;
use stmor::rom::{project_offline, reconstruct, Provenance};

fn channel_problem() -> FomProblem {
    let spatial = channel(&ChannelGeometry { x_range_m: [-0.03, 0.03], radius_m: 5e-3, cells: [8, 3] }).unwrap();
    let mesh = extrude(&spatial, &linspace(0.0, 0.3, 3)).unwrap();
    let conditions = BTreeMap::from([
        (
            "dirichlet:inlet".to_owned(),
            BoundaryCondition::ArteryInflow { amplitude_m_s: 0.1, radius_m: 5e-3, center_y_m: 0.0, ramp_time_s: 0.2, parametrized: true },
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
    FomProblem::new(mesh, blood, space, BodyForce::default(), &conditions).unwrap()
}

fn grid() -> Vec<ParameterVector> {
    let mut out = Vec::new();
    for a in linspace(0.09, 0.11, 2) {
        for n in linspace(0.6, 0.8, 2) {
            out.push(ParameterVector(vec![a, n]));
        }
    }
    out
}

fn eps(problem: &FomProblem, fom: &FomSolution, u: &[f64], p: &[f64]) -> (f64, f64) {
    let ip = problem.inner_products();
    let uf = problem.velocity_full(fom);
    let du: Vec<f64> = uf.iter().zip(u).map(|(a, b)| a - b).collect();
    let dp: Vec<f64> = fom.p.iter().zip(p).map(|(a, b)| a - b).collect();
    (
        (ip.k_full.bilinear(&du, &du) / ip.k_full.bilinear(&uf, &uf)).sqrt(),
        (ip.m_p.bilinear(&dp, &dp) / ip.m_p.bilinear(&fom.p, &fom.p)).sqrt(),
    )
}

#[test]
fn full_basis_reproduces_training_solutions() {
    let problem = channel_problem();
    let opts = PicardOptions::default();
    let train = grid();
    let snaps: Vec<FomSolution> = solve_all(&problem, &train, &opts).into_iter().map(Result::unwrap).collect();
    for s in &snaps {
        assert!(s.iterations() > 2, "shear thinning should need several Picard steps");
    }
    let basis = build_basis(&problem, &snaps, &PodOptions { energy_threshold: 1.0, ..Default::default() }).unwrap();
    assert_eq!(basis.n_lifts(), 2);
    let (eta, tau) = build_eims(&problem, &snaps, &EimOptions::default()).unwrap();
    let prov = Provenance {
        case_id: "t".into(),
        mesh_hash: problem.mesh.hash(),
        basis_hash: String::new(),
        eta_hash: String::new(),
        tau_hash: String::new(),
    };
    let pkg = project_offline(&problem, &basis, &eta, &tau, prov, opts).unwrap();
    for (mu, fom) in train.iter().zip(&snaps) {
        let red = pkg.solve(mu, &opts).unwrap();
        let (u, p) = reconstruct(&basis, &red).unwrap();
        let (eu, ep) = eps(&problem, fom, &u, &p);
        assert!(eu <= 1e-6 && ep <= 1e-6, "eps_u {eu:e} eps_p {ep:e}");
        let exact = problem.velocity_full(fom);
        for (g, _) in problem.dofs.dirichlet.iter().enumerate().filter(|(_, &fixed)| fixed) {
            assert!((u[g] - exact[g]).abs() <= 1e-10);
        }
    }
    let small = pkg.truncated(1, 1).unwrap();
    let sys = small.assemble(&[1.0, 1.0, 0.0], &train[0]).unwrap();
    assert_eq!(sys.a.shape(), (3, 3));
    assert_eq!(sys.b.shape(), (1, 3));
    assert_eq!(sys.bt.shape(), (3, 1));
    assert_eq!(sys.s.shape(), (1, 1));
}
