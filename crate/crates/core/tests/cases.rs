use stmor::config::CaseConfig;
use stmor::fom::post::{boundary_flux, horizontal_line_flux};
use stmor::mesh::BoundaryTag;
use stmor::pipeline::sample_or_center;

/// Per time level: inlet flux, outlet flux, and the flux through the gap on
/// the right of the plug at mid height.
fn valve_fluxes() -> Vec<(f64, f64, f64, f64)> {
    let cfg = CaseConfig::bundled("valve").unwrap();
    let problem = cfg.problem().unwrap();
    let mu = sample_or_center(&problem, None);
    let sol = problem.solve(&mu, &cfg.solver).unwrap();
    let u = problem.velocity_full(&sol);
    let inlet: BoundaryTag = "dirichlet:inlet".parse().unwrap();
    let outlet: BoundaryTag = "dirichlet:outlet".parse().unwrap();
    (0..problem.mesh.time_levels().len())
        .map(|level| {
            let slice = problem.mesh.slice(level).unwrap();
            let gap = horizontal_line_flux(&slice, &u, 0.0625, [0.06, 0.1]).unwrap();
            (slice.time(), boundary_flux(&slice, &u, &inlet).unwrap(), boundary_flux(&slice, &u, &outlet).unwrap(), gap)
        })
        .collect()
}

#[test]
fn valve_branch_opens_only_while_the_plug_is_in() {
    let fluxes = valve_fluxes();
    for &(t, inlet, outlet, gap) in fluxes.iter().filter(|f| f.0 > 0.0) {
        assert!(inlet < 0.0, "t = {t}: inflow {inlet:e}");
        assert!((inlet + outlet).abs() <= 1e-2 * inlet.abs(), "t = {t}: inlet {inlet:e}, outlet {outlet:e}");
        if t <= 0.3 + 1e-9 || t >= 1.5 - 1e-9 {
            assert!(gap.abs() < 1e-4 * inlet.abs(), "t = {t}: gap flux {gap:e} with the plug out");
        }
        if (0.8..=1.1).contains(&t) {
            assert!(gap < 0.2 * inlet, "t = {t}: gap flux {gap:e} against inflow {inlet:e}");
        }
    }
    assert!(fluxes.iter().any(|f| (f.0 - 0.9).abs() < 1e-9));
}
