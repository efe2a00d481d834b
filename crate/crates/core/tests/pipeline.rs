use std::fs;
use std::path::Path;
use std::sync::OnceLock;

use stmor::analysis::Sweep;
use stmor::config::{CaseConfig, GeometryConfig};
use stmor::formats::{Artifact, SnapshotFile};
use stmor::pipeline::{
    build_rom_stage, cached_fom, default_sweep, eval_rom, load_package, load_report, sample_or_center, snapshots_stage, study_stage, Layout,
};
use stmor::Error;
use tempfile::TempDir;

/// Valve case at half resolution with a 2 × 2 training grid.
fn small_valve() -> CaseConfig {
    let mut cfg = CaseConfig::bundled("valve").unwrap();
    if let GeometryConfig::Valve(g) = &mut cfg.mesh.geometry {
        g.cells_x = [4, 4, 2];
        g.cells_y = [3, 4, 3];
    }
    cfg.mesh.time_steps = 10;
    cfg.samples.train_grid = vec![2, 2];
    cfg.samples.n_test = 3;
    cfg
}

/// Snapshots and ROM package of the small valve, built once.
fn built() -> &'static (CaseConfig, TempDir) {
    static BUILT: OnceLock<(CaseConfig, TempDir)> = OnceLock::new();
    BUILT.get_or_init(|| {
        let cfg = small_valve();
        let dir = TempDir::new().unwrap();
        let out = Layout::new(dir.path());
        let manifest = snapshots_stage(&cfg, 1, &out).unwrap();
        assert_eq!(manifest.converged(), 4);
        build_rom_stage(&cfg, 1, &out).unwrap();
        (cfg, dir)
    })
}

fn copy_tree(from: &Path, to: &Path) {
    fs::create_dir_all(to).unwrap();
    for entry in fs::read_dir(from).unwrap() {
        let entry = entry.unwrap();
        let target = to.join(entry.file_name());
        if entry.file_type().unwrap().is_dir() {
            copy_tree(&entry.path(), &target);
        } else {
            fs::copy(entry.path(), target).unwrap();
        }
    }
}

fn is_stale<T: std::fmt::Debug>(r: stmor::Result<T>) -> bool {
    match r {
        Err(e) => {
            assert_eq!(e.code(), "stale_artifact", "{e}");
            true
        }
        Ok(v) => panic!("expected a stale artifact, got {v:?}"),
    }
}

#[test]
fn study_is_reproducible_and_reuses_cached_foms() {
    let (cfg, dir) = built();
    let scratch = TempDir::new().unwrap();
    copy_tree(dir.path(), scratch.path());
    let out = Layout::new(scratch.path());
    let sweep = Sweep::from_bounds([2, 3], [1, 2]);
    let (first, files) = study_stage(cfg, &sweep, 1, 1, &out).unwrap();
    assert_eq!(load_report(&files.report).unwrap(), first);
    assert_eq!(fs::read_dir(out.study().join("fom_cache")).unwrap().count(), 3);
    let (second, _) = study_stage(cfg, &sweep, 1, 1, &out).unwrap();

    assert_eq!(first.records.len(), 3 * 4);
    for (a, b) in first.records.iter().zip(&second.records) {
        assert_eq!((a.sample, a.n_u, a.n_p, &a.mu), (b.sample, b.n_u, b.n_p, &b.mu));
        assert_eq!((a.eps_u, a.eps_p), (b.eps_u, b.eps_p));
    }
    for (a, b) in first.fom.iter().zip(&second.fom) {
        assert_eq!(a.hash, b.hash);
        assert_eq!(a.seconds, b.seconds, "second study should read the cache");
    }
    for c in &first.cells {
        assert_eq!(c.used, 3);
        assert!(c.max_eps_u >= c.mean_eps_u && c.max_eps_p >= c.mean_eps_p);
    }
    let csv = fs::read_to_string(&files.csv).unwrap();
    assert_eq!(csv.lines().count(), 1 + first.records.len());
}

#[test]
fn oversized_sweeps_are_rejected_and_the_default_fits() {
    let (cfg, dir) = built();
    let out = Layout::new(dir.path());
    let (pkg, _) = load_package(&out.package()).unwrap();
    let too_big = Sweep::from_bounds([2, pkg.n_u + 1], [1, 1]);
    let err = study_stage(cfg, &too_big, 1, 1, &out).unwrap_err();
    assert!(matches!(err, Error::InvalidArgument(_)), "{err}");
    let sweep = default_sweep(cfg, &out).unwrap();
    assert_eq!(*sweep.n_u.end(), pkg.n_u);
    assert_eq!(*sweep.n_p.end(), pkg.n_p.min(cfg.study.n_p[1]));
}

#[test]
fn eval_checks_the_requested_sizes() {
    let (_, dir) = built();
    let (pkg, _) = load_package(&Layout::new(dir.path()).package()).unwrap();
    let full = eval_rom(&pkg, None, None).unwrap();
    assert_eq!((full.n_u, full.n_p), (pkg.n_u, pkg.n_p));
    let small = eval_rom(&pkg, None, Some((2, 1))).unwrap();
    assert_eq!((small.n_u, small.n_p), (2, 1));
    assert!(eval_rom(&pkg, None, Some((1, 1))).is_err());
    assert!(eval_rom(&pkg, None, Some((pkg.n_u + 1, 1))).is_err());
    assert!(eval_rom(&pkg, Some(vec![1.0, 1.0]), None).is_err());
}

#[test]
fn tampered_snapshot_is_stale() {
    let (cfg, dir) = built();
    let scratch = TempDir::new().unwrap();
    copy_tree(dir.path(), scratch.path());
    let out = Layout::new(scratch.path());
    let path = out.snapshots().join("train_0001.snap");
    let (mut f, _) = SnapshotFile::load(&path).unwrap();
    f.solution.v[0] += 1e-3;
    f.save(&path).unwrap();
    assert!(is_stale(build_rom_stage(cfg, 1, &out)));
}

#[test]
fn artifacts_of_another_mesh_are_stale() {
    let (cfg, dir) = built();
    let out = Layout::new(dir.path());
    let mut other = cfg.clone();
    other.mesh.time_steps += 1;
    assert!(is_stale(build_rom_stage(&other, 1, &out)));
    assert!(is_stale(study_stage(&other, &Sweep::from_bounds([2, 2], [1, 1]), 1, 1, &out)));
}

#[test]
fn cached_fom_matches_a_fresh_solve() {
    let cfg = small_valve();
    let problem = cfg.problem().unwrap();
    let dir = TempDir::new().unwrap();
    let path = dir.path().join("fom.snap");
    let mu = sample_or_center(&problem, None);
    let (fresh, h1) = cached_fom(&problem, &cfg, &mu, &path);
    let fresh = fresh.unwrap();
    assert!(path.exists());
    let (cached, h2) = cached_fom(&problem, &cfg, &mu, &path);
    assert_eq!(cached.unwrap(), fresh);
    assert_eq!(h1, h2);

    // a cache file for another sample is replaced, not reused
    let other = stmor::constitutive::ParameterVector(problem.parameters.components.iter().map(|c| c.min).collect());
    let (sol, _) = cached_fom(&problem, &cfg, &other, &path);
    assert_eq!(sol.unwrap().mu, other);
    assert_eq!(SnapshotFile::load(&path).unwrap().0.solution.mu, other);
}
