//! Stage drivers shared by the CLI, the service and the acceptance harness.
//! Every stage reads and writes artifacts under one output directory and
//! refuses inputs built for another mesh or from other upstream files.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::analysis::{generate_samples, run_study, SamplePlan, StudyOptions, StudyReport, Sweep};
use crate::config::CaseConfig;
use crate::constitutive::ParameterVector;
use crate::error::{Error, Result};
use crate::fom::{FomProblem, FomSolution};
use crate::formats::{check_mesh, check_upstream, set_hash, solution_hash, Artifact, BasisFile, EimFile, SnapshotFile};
use crate::mesh::io::{write_mesh, write_vtk_slice, write_vtk_spacetime, PointField};
use crate::offline::{build_basis, build_eims, solve_all, with_workers};
use crate::rom::{project_offline, Provenance, ReducedSolution, RomPackage};

/// File layout of one output directory.
#[derive(Debug, Clone)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Layout {
        Layout { root: root.into() }
    }

    pub fn mesh(&self) -> PathBuf {
        self.root.join("mesh.stmesh")
    }

    pub fn mesh_vtk(&self) -> PathBuf {
        self.root.join("mesh.vtk")
    }

    pub fn fom(&self) -> PathBuf {
        self.root.join("fom.snap")
    }

    pub fn snapshots(&self) -> PathBuf {
        self.root.join("snapshots")
    }

    pub fn manifest(&self) -> PathBuf {
        self.snapshots().join("manifest.json")
    }

    pub fn basis(&self) -> PathBuf {
        self.root.join("basis.bin")
    }

    pub fn eim(&self, tag: &str) -> PathBuf {
        self.root.join(format!("eim_{tag}.bin"))
    }

    pub fn package(&self) -> PathBuf {
        self.root.join("rom.bin")
    }

    pub fn study(&self) -> PathBuf {
        self.root.join("study")
    }

    pub fn vtk(&self) -> PathBuf {
        self.root.join("vtk")
    }
}

fn create_dir(p: &Path) -> Result<()> {
    fs::create_dir_all(p).map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", p.display()))))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Format(e.to_string()))?;
    fs::write(path, text + "\n")?;
    Ok(())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))?;
    serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MeshSummary {
    pub case_id: String,
    pub nodes: usize,
    pub elements: usize,
    pub boundary_facets: usize,
    pub time_levels: usize,
    pub measure: f64,
    pub mesh_hash: String,
    pub files: Vec<PathBuf>,
}

pub fn mesh_stage(cfg: &CaseConfig, out: &Layout) -> Result<MeshSummary> {
    create_dir(&out.root)?;
    let mesh = cfg.build_mesh()?;
    write_mesh(BufWriter::new(fs::File::create(out.mesh())?), &mesh)?;
    write_vtk_spacetime(BufWriter::new(fs::File::create(out.mesh_vtk())?), &mesh, &[])?;
    Ok(MeshSummary {
        case_id: cfg.case_id.clone(),
        nodes: mesh.node_count(),
        elements: mesh.element_count(),
        boundary_facets: mesh.boundary().len(),
        time_levels: mesh.time_levels().len(),
        measure: mesh.measure(),
        mesh_hash: mesh.hash(),
        files: vec![out.mesh(), out.mesh_vtk()],
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FomSummary {
    pub case_id: String,
    pub mu: Vec<f64>,
    pub n_velocity: usize,
    pub n_pressure: usize,
    pub n_h: usize,
    pub iterations: usize,
    pub seconds: f64,
    pub residual_history: Vec<f64>,
    pub solution_hash: String,
    pub file: Option<PathBuf>,
}

impl FomSummary {
    pub fn new(cfg: &CaseConfig, problem: &FomProblem, sol: &FomSolution, file: Option<PathBuf>) -> FomSummary {
        FomSummary {
            case_id: cfg.case_id.clone(),
            mu: sol.mu.0.clone(),
            n_velocity: problem.dofs.n_velocity(),
            n_pressure: problem.dofs.n_pressure(),
            n_h: problem.dofs.n_total(),
            iterations: sol.iterations(),
            seconds: sol.seconds,
            residual_history: sol.log.iter().map(|s| s.relative_update).collect(),
            solution_hash: solution_hash(sol),
            file,
        }
    }
}

/// Parameter sample from the command line, or the box center.
pub fn sample_or_center(problem: &FomProblem, mu: Option<Vec<f64>>) -> ParameterVector {
    mu.map(ParameterVector).unwrap_or_else(|| problem.parameters.center())
}

pub fn fom_stage(cfg: &CaseConfig, mu: Option<Vec<f64>>, workers: usize, out: Option<&Layout>) -> Result<FomSummary> {
    let problem = cfg.problem()?;
    let mu = sample_or_center(&problem, mu);
    problem.parameters.check(&mu)?;
    let sol = with_workers(workers, || problem.solve(&mu, &cfg.solver))??;
    let file = match out {
        Some(out) => {
            create_dir(&out.root)?;
            let f = SnapshotFile { case_id: cfg.case_id.clone(), mesh_hash: problem.mesh.hash(), solution: sol.clone() };
            f.save(&out.fom())?;
            Some(out.fom())
        }
        None => None,
    };
    Ok(FomSummary::new(cfg, &problem, &sol, file))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub file: String,
    pub mu: Vec<f64>,
    pub converged: bool,
    pub error: Option<String>,
    pub hash: Option<String>,
    pub seconds: Option<f64>,
    pub iterations: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SnapshotManifest {
    pub case_id: String,
    pub mesh_hash: String,
    pub train_grid: Vec<usize>,
    pub entries: Vec<ManifestEntry>,
}

impl SnapshotManifest {
    pub fn converged(&self) -> usize {
        self.entries.iter().filter(|e| e.converged).count()
    }
}

/// Solves the training grid and writes one snapshot file per sample. Failed
/// solves are listed in the manifest and reported as an error afterwards.
pub fn snapshots_stage(cfg: &CaseConfig, workers: usize, out: &Layout) -> Result<SnapshotManifest> {
    let problem = cfg.problem()?;
    let plan =
        SamplePlan { space: problem.parameters.clone(), train_grid: cfg.samples.train_grid.clone(), n_test: 0, seed: cfg.samples.seed };
    let training = generate_samples(&plan)?.training;
    create_dir(&out.snapshots())?;
    let mesh_hash = problem.mesh.hash();
    let results = with_workers(workers, || solve_all(&problem, &training, &cfg.solver))?;
    let mut entries = Vec::new();
    for (i, (mu, res)) in training.iter().zip(results).enumerate() {
        let file = format!("train_{i:04}.snap");
        entries.push(match res {
            Ok(sol) => {
                let f = SnapshotFile { case_id: cfg.case_id.clone(), mesh_hash: mesh_hash.clone(), solution: sol };
                let hash = f.save(&out.snapshots().join(&file))?;
                ManifestEntry {
                    file,
                    mu: mu.0.clone(),
                    converged: true,
                    error: None,
                    hash: Some(hash),
                    seconds: Some(f.solution.seconds),
                    iterations: Some(f.solution.iterations()),
                }
            }
            Err(e) => ManifestEntry {
                file,
                mu: mu.0.clone(),
                converged: false,
                error: Some(e.to_string()),
                hash: None,
                seconds: None,
                iterations: None,
            },
        });
    }
    let manifest = SnapshotManifest { case_id: cfg.case_id.clone(), mesh_hash, train_grid: cfg.samples.train_grid.clone(), entries };
    write_json(&out.manifest(), &manifest)?;
    if let Some(bad) = manifest.entries.iter().find(|e| !e.converged) {
        return Err(Error::InvalidArgument(format!("training sample {:?} failed: {}", bad.mu, bad.error.clone().unwrap_or_default())));
    }
    Ok(manifest)
}

/// Loads every snapshot listed in the manifest, checking hashes and mesh.
pub fn load_snapshots(out: &Layout, mesh_hash: &str) -> Result<(Vec<FomSolution>, String)> {
    let manifest: SnapshotManifest = read_json(&out.manifest())?;
    check_mesh("snapshot set", &manifest.mesh_hash, mesh_hash)?;
    let mut sols = Vec::new();
    let mut hashes = Vec::new();
    for e in manifest.entries.iter().filter(|e| e.converged) {
        let (f, hash) = SnapshotFile::load(&out.snapshots().join(&e.file))?;
        check_mesh(&e.file, &f.mesh_hash, mesh_hash)?;
        check_upstream(&e.file, e.hash.as_deref().unwrap_or_default(), &hash)?;
        sols.push(f.solution);
        hashes.push(hash);
    }
    if sols.is_empty() {
        return Err(Error::InvalidArgument("the snapshot manifest lists no converged samples".into()));
    }
    Ok((sols, set_hash(&hashes)))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BuildSummary {
    pub case_id: String,
    pub n_train: usize,
    pub n_lifts: usize,
    pub n_u: usize,
    pub n_p: usize,
    pub q_eta: usize,
    pub q_tau: usize,
    pub n_h: usize,
    pub velocity_spectrum: Vec<f64>,
    pub pressure_spectrum: Vec<f64>,
    pub eta_history: Vec<f64>,
    pub tau_history: Vec<f64>,
    pub seconds: f64,
    pub package_hash: String,
}

/// POD, EIM and projection from the stored snapshots.
pub fn build_rom_stage(cfg: &CaseConfig, workers: usize, out: &Layout) -> Result<BuildSummary> {
    let start = Instant::now();
    let problem = cfg.problem()?;
    let mesh_hash = problem.mesh.hash();
    let (snaps, snapshots_hash) = load_snapshots(out, &mesh_hash)?;
    let (basis, (eta, tau)) = with_workers(workers, || -> Result<_> {
        Ok((build_basis(&problem, &snaps, &cfg.pod)?, build_eims(&problem, &snaps, &cfg.eim)?))
    })??;
    let basis_file =
        BasisFile { case_id: cfg.case_id.clone(), mesh_hash: mesh_hash.clone(), snapshots_hash: snapshots_hash.clone(), basis };
    let basis_hash = basis_file.save(&out.basis())?;
    let eta_file =
        EimFile { case_id: cfg.case_id.clone(), mesh_hash: mesh_hash.clone(), snapshots_hash: snapshots_hash.clone(), approx: eta };
    let eta_hash = eta_file.save(&out.eim("eta"))?;
    let tau_file = EimFile { case_id: cfg.case_id.clone(), mesh_hash: mesh_hash.clone(), snapshots_hash, approx: tau };
    let tau_hash = tau_file.save(&out.eim("tau"))?;
    let provenance = Provenance { case_id: cfg.case_id.clone(), mesh_hash, basis_hash, eta_hash, tau_hash };
    let package = with_workers(workers, || {
        project_offline(&problem, &basis_file.basis, &eta_file.approx, &tau_file.approx, provenance, cfg.solver)
    })??;
    let package_hash = package.save(&out.package())?;
    Ok(BuildSummary {
        case_id: cfg.case_id.clone(),
        n_train: snaps.len(),
        n_lifts: package.n_lifts,
        n_u: package.n_u,
        n_p: package.n_p,
        q_eta: package.eta.q(),
        q_tau: package.tau.q(),
        n_h: package.n_h,
        velocity_spectrum: crate::pod::normalized(&basis_file.basis.velocity_spectrum),
        pressure_spectrum: crate::pod::normalized(&basis_file.basis.pressure_spectrum),
        eta_history: eta_file.approx.history.clone(),
        tau_history: tau_file.approx.history.clone(),
        seconds: start.elapsed().as_secs_f64(),
        package_hash,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RomInfo {
    pub case_id: String,
    pub mesh_hash: String,
    pub basis_hash: String,
    pub eta_hash: String,
    pub tau_hash: String,
    pub package_hash: String,
    pub n_lifts: usize,
    pub n_u: usize,
    pub n_p: usize,
    pub n: usize,
    pub n_h: usize,
    pub q_eta: usize,
    pub q_tau: usize,
    pub magic_elements: usize,
    pub parameters: Vec<String>,
    pub block_shapes: Vec<(String, [usize; 2])>,
}

pub fn rom_info(package: &RomPackage, package_hash: &str) -> RomInfo {
    let p = &package.provenance;
    let mut shapes = vec![
        ("E_N".to_owned(), [package.e.rows, package.e.cols]),
        ("B_N".to_owned(), [package.b.rows, package.b.cols]),
        ("Bt_N".to_owned(), [package.b.cols, package.b.rows]),
        ("F_N".to_owned(), [package.f.len(), 1]),
    ];
    if let Some(a) = package.a_q.first() {
        shapes.push(("A^q_N".into(), [a.rows, a.cols]));
    }
    if let (Some(c), Some(s), Some(d)) = (package.c_q.first(), package.s_q.first(), package.d_q.first()) {
        shapes.push(("C^q_N".into(), [c.rows, c.cols]));
        shapes.push(("S^q_N".into(), [s.rows, s.cols]));
        shapes.push(("D^q_N".into(), [d.len(), 1]));
    }
    RomInfo {
        case_id: p.case_id.clone(),
        mesh_hash: p.mesh_hash.clone(),
        basis_hash: p.basis_hash.clone(),
        eta_hash: p.eta_hash.clone(),
        tau_hash: p.tau_hash.clone(),
        package_hash: package_hash.into(),
        n_lifts: package.n_lifts,
        n_u: package.n_u,
        n_p: package.n_p,
        n: package.n_u + package.n_p,
        n_h: package.n_h,
        q_eta: package.eta.q(),
        q_tau: package.tau.q(),
        magic_elements: package.magic_elements.len(),
        parameters: package.parameters.components.iter().map(|c| format!("{} in [{}, {}]", c.name, c.min, c.max)).collect(),
        block_shapes: shapes,
    }
}

pub fn load_package(path: &Path) -> Result<(RomPackage, String)> {
    RomPackage::load(path)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalSummary {
    pub case_id: String,
    pub n_u: usize,
    pub n_p: usize,
    pub solution: ReducedSolution,
}

/// Online solve, optionally for the leading `(N_u, N_p)` of the package.
pub fn eval_rom(package: &RomPackage, mu: Option<Vec<f64>>, sizes: Option<(usize, usize)>) -> Result<EvalSummary> {
    let pkg = match sizes {
        Some((n_u, _)) if n_u <= package.n_lifts => {
            return Err(Error::InvalidArgument(format!("N_u = {n_u} leaves no modes; the package has {} liftings", package.n_lifts)))
        }
        Some((n_u, n_p)) => package.truncated(n_u - package.n_lifts, n_p)?,
        None => package.clone(),
    };
    let mu = mu.map(ParameterVector).unwrap_or_else(|| pkg.parameters.center());
    let solution = pkg.solve(&mu, &pkg.picard)?;
    Ok(EvalSummary { case_id: pkg.provenance.case_id.clone(), n_u: pkg.n_u, n_p: pkg.n_p, solution })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StudyFiles {
    pub report: PathBuf,
    pub csv: PathBuf,
}

/// Test FOM solution from the cache directory, or a fresh solve that is
/// then cached. A cached file is reused only for the same mesh and sample.
pub fn cached_fom(problem: &FomProblem, cfg: &CaseConfig, mu: &ParameterVector, path: &Path) -> (Result<FomSolution>, Option<String>) {
    let mesh_hash = problem.mesh.hash();
    if let Ok((f, _)) = SnapshotFile::load(path) {
        if f.mesh_hash == mesh_hash && f.solution.mu == *mu {
            let h = solution_hash(&f.solution);
            return (Ok(f.solution), Some(h));
        }
    }
    match problem.solve(mu, &cfg.solver) {
        Ok(sol) => {
            let f = SnapshotFile { case_id: cfg.case_id.clone(), mesh_hash, solution: sol };
            if let Err(e) = f.save(path) {
                tracing::warn!("could not cache {}: {e}", path.display());
            }
            let h = solution_hash(&f.solution);
            (Ok(f.solution), Some(h))
        }
        Err(e) => (Err(e), None),
    }
}

/// The configured sweep, cut down to the sizes the stored package offers.
pub fn default_sweep(cfg: &CaseConfig, out: &Layout) -> Result<Sweep> {
    let (package, _) = load_package(&out.package())?;
    let wanted = Sweep::from_bounds(cfg.study.n_u, cfg.study.n_p);
    let sweep = wanted.clamped_to(package.n_lifts, package.n_u, package.n_p).ok_or_else(|| {
        Error::InvalidArgument(format!(
            "configured sweep {wanted} shares no cell with the package (N_u <= {}, N_p <= {})",
            package.n_u, package.n_p
        ))
    })?;
    if sweep != wanted {
        tracing::warn!("configured sweep {wanted} reduced to {sweep} to fit the package");
    }
    Ok(sweep)
}

/// Error and timing study over the test samples and the basis-size sweep.
pub fn study_stage(cfg: &CaseConfig, sweep: &Sweep, workers: usize, rom_repeats: usize, out: &Layout) -> Result<(StudyReport, StudyFiles)> {
    let problem = cfg.problem()?;
    let mesh_hash = problem.mesh.hash();
    let (package, package_hash) = load_package(&out.package())?;
    check_mesh("ROM package", &package.provenance.mesh_hash, &mesh_hash)?;
    if sweep.clamped_to(package.n_lifts, package.n_u, package.n_p).as_ref() != Some(sweep) {
        return Err(Error::InvalidArgument(format!(
            "sweep {sweep} does not fit the package (N_u = {}..{}, N_p = 1..{})",
            package.n_lifts + 1,
            package.n_u,
            package.n_p
        )));
    }
    let (basis_file, basis_hash) = BasisFile::load(&out.basis())?;
    check_mesh("basis", &basis_file.mesh_hash, &mesh_hash)?;
    check_upstream("ROM package basis", &package.provenance.basis_hash, &basis_hash)?;
    let plan = SamplePlan {
        space: problem.parameters.clone(),
        train_grid: vec![2; problem.parameters.dim()],
        n_test: cfg.samples.n_test,
        seed: cfg.samples.seed,
    };
    let tests = generate_samples(&plan)?.testing;
    let cache = out.study().join("fom_cache");
    create_dir(&cache)?;
    // Sequential over samples so each FOM time reflects `workers` threads.
    let foms: Vec<_> = with_workers(workers, || {
        tests.iter().enumerate().map(|(i, mu)| cached_fom(&problem, cfg, mu, &cache.join(format!("test_{i:04}.snap")))).collect()
    })?;
    let opts = StudyOptions { picard: cfg.solver, rom_repeats, fom_workers: rayon_threads(workers), seed: cfg.samples.seed, package_hash };
    let report = with_workers(1, || run_study(&problem, &basis_file.basis, &package, &tests, &foms, sweep, &opts))??;
    let files = StudyFiles { report: out.study().join("report.json"), csv: out.study().join("records.csv") };
    write_json(&files.report, &report)?;
    let mut w = BufWriter::new(fs::File::create(&files.csv)?);
    report.write_csv(&mut w)?;
    w.flush()?;
    Ok((report, files))
}

fn rayon_threads(workers: usize) -> usize {
    if workers == 0 {
        std::thread::available_parallelism().map_or(1, |n| n.get())
    } else {
        workers
    }
}

pub fn load_report(path: &Path) -> Result<StudyReport> {
    let report: StudyReport = read_json(path)?;
    if report.schema_version != crate::analysis::REPORT_SCHEMA_VERSION {
        return Err(Error::Format(format!(
            "report schema version {}, expected {}",
            report.schema_version,
            crate::analysis::REPORT_SCHEMA_VERSION
        )));
    }
    Ok(report)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VtkSummary {
    pub files: Vec<PathBuf>,
}

/// Space-time grid plus one file per time level, with velocity and pressure.
pub fn export_vtk(cfg: &CaseConfig, snapshot: &Path, out: &Layout) -> Result<VtkSummary> {
    let problem = cfg.problem()?;
    let (f, _) = SnapshotFile::load(snapshot)?;
    check_mesh(&snapshot.display().to_string(), &f.mesh_hash, &problem.mesh.hash())?;
    let u = problem.velocity_full(&f.solution);
    let p = problem.pressure_nodal(&f.solution);
    let d = problem.mesh.spatial_dim();
    let fields = [
        PointField { name: "velocity", components: d.max(2), values: &pad(&u, d) },
        PointField { name: "pressure", components: 1, values: &p },
    ];
    create_dir(&out.vtk())?;
    let mut files = vec![out.vtk().join("spacetime.vtk")];
    write_vtk_spacetime(BufWriter::new(fs::File::create(&files[0])?), &problem.mesh, &fields)?;
    if problem.mesh.extrusion().is_some() {
        for level in 0..problem.mesh.time_levels().len() {
            let path = out.vtk().join(format!("slice_{level:04}.vtk"));
            write_vtk_slice(BufWriter::new(fs::File::create(&path)?), &problem.mesh.slice(level)?, problem.mesh.node_count(), &fields)?;
            files.push(path);
        }
    }
    Ok(VtkSummary { files })
}

/// VTK vectors need at least two components.
fn pad(u: &[f64], d: usize) -> Vec<f64> {
    if d >= 2 {
        u.to_vec()
    } else {
        u.iter().flat_map(|&x| [x, 0.0]).collect()
    }
}

/// Body of a FOM request to the service.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct FomRequest {
    pub mu: Option<Vec<f64>>,
}

/// Body of an online evaluation request to the service.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct EvalRequest {
    pub mu: Option<Vec<f64>>,
    pub n_u: Option<usize>,
    pub n_p: Option<usize>,
}

impl EvalRequest {
    pub fn sizes(&self) -> Result<Option<(usize, usize)>> {
        match (self.n_u, self.n_p) {
            (Some(u), Some(p)) => Ok(Some((u, p))),
            (None, None) => Ok(None),
            _ => Err(Error::InvalidArgument("n_u and n_p must be given together".into())),
        }
    }
}

/// Machine-readable error body, printed by the CLI and returned by the service.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
}

impl From<&Error> for ErrorBody {
    fn from(e: &Error) -> ErrorBody {
        ErrorBody { code: e.code().into(), message: e.to_string() }
    }
}
