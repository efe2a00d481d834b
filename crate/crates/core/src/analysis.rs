//! Parameter sampling, FOM/ROM error metrics and the error/performance study.

use std::fmt;
use std::fmt::Write as _;
use std::io::Write;
use std::ops::RangeInclusive;
use std::str::FromStr;

use rand_core::{Rng, SeedableRng};
use rand_pcg::Pcg64;
use serde::{Deserialize, Serialize};

use crate::constitutive::{ParameterSpace, ParameterVector};
use crate::error::{Error, Result};
use crate::fom::{FomProblem, FomSolution, PicardOptions};
use crate::mesh::builders::linspace;
use crate::pod::ReducedBasis;
use crate::rom::{reconstruct, RomPackage};
use crate::sparse::CsrMatrix;

pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// Test-sample generator: PCG XSL RR 128/64 (LCG), seeded via `seed_from_u64`.
/// Uniform draws use the top 53 bits of each output.
pub const RNG_NAME: &str = "rand_pcg::Pcg64 (PCG XSL RR 128/64 LCG), seed_from_u64, u = (x >> 11) * 2^-53";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplePlan {
    pub space: ParameterSpace,
    /// Points per axis of the training grid; each at least 2.
    pub train_grid: Vec<usize>,
    pub n_test: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Samples {
    pub training: Vec<ParameterVector>,
    pub testing: Vec<ParameterVector>,
}

/// Tensor grid over the box, corners included; the last axis varies fastest.
pub fn tensor_grid(space: &ParameterSpace, counts: &[usize]) -> Result<Vec<ParameterVector>> {
    if counts.len() != space.dim() {
        return Err(Error::InvalidArgument(format!("grid has {} axes, the box has {}", counts.len(), space.dim())));
    }
    if let Some(&c) = counts.iter().find(|&&c| c < 2) {
        return Err(Error::InvalidArgument(format!("grid needs at least 2 points per axis, got {c}")));
    }
    let axes: Vec<Vec<f64>> = space.components.iter().zip(counts).map(|(c, &n)| linspace(c.min, c.max, n - 1)).collect();
    let mut out = vec![Vec::new()];
    for axis in &axes {
        out = out.into_iter().flat_map(|prefix| axis.iter().map(move |&x| [prefix.clone(), vec![x]].concat())).collect();
    }
    Ok(out.into_iter().map(ParameterVector).collect())
}

fn uniform(rng: &mut Pcg64) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// `n` independent uniform samples in the box.
pub fn random_samples(space: &ParameterSpace, n: usize, seed: u64) -> Vec<ParameterVector> {
    let mut rng = Pcg64::seed_from_u64(seed);
    (0..n).map(|_| ParameterVector(space.components.iter().map(|c| c.min + (c.max - c.min) * uniform(&mut rng)).collect())).collect()
}

pub fn generate_samples(plan: &SamplePlan) -> Result<Samples> {
    Ok(Samples { training: tensor_grid(&plan.space, &plan.train_grid)?, testing: random_samples(&plan.space, plan.n_test, plan.seed) })
}

fn relative(diff: f64, reference: f64, what: &str) -> Result<f64> {
    if !(reference > 0.0) {
        return Err(Error::InvalidArgument(format!("reference {what} norm is zero")));
    }
    Ok(diff / reference)
}

fn gram_norm(m: &CsrMatrix, x: &[f64]) -> f64 {
    m.bilinear(x, x).max(0.0).sqrt()
}

fn check_len(a: &[f64], b: &[f64], m: &CsrMatrix) -> Result<()> {
    if a.len() != b.len() || a.len() != m.nrows() {
        return Err(Error::Dimension(format!("fields of length {} and {} for a {}-row Gram matrix", a.len(), b.len(), m.nrows())));
    }
    Ok(())
}

/// `|u_fom - u_rom|_{H¹} / |u_fom|_{H¹}` on full nodal velocities.
pub fn error_velocity(u_fom: &[f64], u_rom: &[f64], k: &CsrMatrix) -> Result<f64> {
    check_len(u_fom, u_rom, k)?;
    let diff: Vec<f64> = u_fom.iter().zip(u_rom).map(|(a, b)| a - b).collect();
    relative(gram_norm(k, &diff), gram_norm(k, u_fom), "velocity")
}

/// `‖p_fom - p_rom‖_{L²} / ‖p_fom‖_{L²}` on pressure DOFs.
pub fn error_pressure(p_fom: &[f64], p_rom: &[f64], m: &CsrMatrix) -> Result<f64> {
    check_len(p_fom, p_rom, m)?;
    let diff: Vec<f64> = p_fom.iter().zip(p_rom).map(|(a, b)| a - b).collect();
    relative(gram_norm(m, &diff), gram_norm(m, p_fom), "pressure")
}

/// Grid of basis sizes; `N_u` counts the liftings.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sweep {
    pub n_u: RangeInclusive<usize>,
    pub n_p: RangeInclusive<usize>,
}

impl Sweep {
    pub fn cells(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.n_u.clone().flat_map(move |u| self.n_p.clone().map(move |p| (u, p)))
    }

    pub fn from_bounds(n_u: [usize; 2], n_p: [usize; 2]) -> Sweep {
        Sweep { n_u: n_u[0]..=n_u[1], n_p: n_p[0]..=n_p[1] }
    }

    /// The part of the sweep that the package can provide, if any.
    pub fn clamped_to(&self, n_lifts: usize, n_u: usize, n_p: usize) -> Option<Sweep> {
        let u = (*self.n_u.start()).max(n_lifts + 1)..=(*self.n_u.end()).min(n_u);
        let p = (*self.n_p.start()).max(1)..=(*self.n_p.end()).min(n_p);
        (!u.is_empty() && !p.is_empty()).then_some(Sweep { n_u: u, n_p: p })
    }
}

fn parse_range(s: &str) -> Option<RangeInclusive<usize>> {
    match s.split_once("..") {
        Some((a, b)) => {
            let a: usize = a.trim().parse().ok()?;
            let b: usize = b.trim().trim_start_matches('=').parse().ok()?;
            (a <= b).then_some(a..=b)
        }
        None => s.trim().parse().ok().map(|v| v..=v),
    }
}

impl fmt::Display for Sweep {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Nu={}..{},Np={}..{}", self.n_u.start(), self.n_u.end(), self.n_p.start(), self.n_p.end())
    }
}

impl FromStr for Sweep {
    type Err = Error;

    /// `Nu=2..6,Np=1..4`; single values such as `Nu=3` are allowed.
    fn from_str(s: &str) -> Result<Sweep> {
        let bad = || Error::InvalidArgument(format!("bad sweep `{s}`, expected e.g. Nu=2..6,Np=1..4"));
        let (mut n_u, mut n_p) = (None, None);
        for part in s.split(',') {
            let (key, range) = part.split_once('=').ok_or_else(bad)?;
            let range = parse_range(range).ok_or_else(bad)?;
            match key.trim().to_ascii_lowercase().as_str() {
                "nu" => n_u = Some(range),
                "np" => n_p = Some(range),
                _ => return Err(bad()),
            }
        }
        let (n_u, n_p) = (n_u.ok_or_else(bad)?, n_p.ok_or_else(bad)?);
        if *n_u.start() == 0 || *n_p.start() == 0 {
            return Err(bad());
        }
        Ok(Sweep { n_u, n_p })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FomRecord {
    pub sample: usize,
    pub mu: Vec<f64>,
    pub converged: bool,
    pub error: Option<String>,
    pub seconds: f64,
    pub iterations: usize,
    /// Hash of the stored solution vectors.
    pub hash: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyRecord {
    pub sample: usize,
    pub mu: Vec<f64>,
    pub n_u: usize,
    pub n_p: usize,
    pub converged: bool,
    pub error: Option<String>,
    pub eps_u: Option<f64>,
    pub eps_p: Option<f64>,
    pub rom_seconds: Option<f64>,
    pub rom_iterations: Option<usize>,
    pub fom_seconds: Option<f64>,
    pub speedup: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub n_u: usize,
    pub n_p: usize,
    /// Samples with both solves converged; the statistics cover only these.
    pub used: usize,
    pub excluded: usize,
    pub max_eps_u: f64,
    pub mean_eps_u: f64,
    pub max_eps_p: f64,
    pub mean_eps_p: f64,
    pub mean_rom_seconds: f64,
    pub mean_iterations: f64,
    pub mean_speedup: f64,
    pub max_speedup: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Environment {
    pub os: String,
    pub arch: String,
    pub available_cores: usize,
    pub fom_workers: usize,
    pub rom_threads: usize,
    pub crate_version: String,
}

impl Environment {
    pub fn current(fom_workers: usize) -> Environment {
        Environment {
            os: std::env::consts::OS.into(),
            arch: std::env::consts::ARCH.into(),
            available_cores: std::thread::available_parallelism().map_or(1, |n| n.get()),
            fom_workers,
            rom_threads: 1,
            crate_version: env!("CARGO_PKG_VERSION").into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyReport {
    pub schema_version: u32,
    pub case_id: String,
    pub mesh_hash: String,
    pub package_hash: String,
    pub n_h: usize,
    pub rng: String,
    pub seed: u64,
    pub timing: String,
    pub environment: Environment,
    pub fom: Vec<FomRecord>,
    pub records: Vec<StudyRecord>,
    pub cells: Vec<CellSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyOptions {
    pub picard: PicardOptions,
    /// ROM solves per cell and sample; the fastest is reported.
    pub rom_repeats: usize,
    pub fom_workers: usize,
    pub seed: u64,
    pub package_hash: String,
}

const TIMING_NOTE: &str = "wall times exclude file I/O and include assembly and the nonlinear solve; \
FOM with fom_workers threads, ROM single-threaded, fastest of rom_repeats runs";

/// Compares ROM solves for every basis size in `sweep` against FOM solutions
/// at the test samples. `foms[i]` is the FOM outcome for `tests[i]`, with its
/// measured solve time and an optional stored-solution hash.
pub fn run_study(
    problem: &FomProblem,
    basis: &ReducedBasis,
    package: &RomPackage,
    tests: &[ParameterVector],
    foms: &[(Result<FomSolution>, Option<String>)],
    sweep: &Sweep,
    opts: &StudyOptions,
) -> Result<StudyReport> {
    if foms.len() != tests.len() {
        return Err(Error::Dimension(format!("{} FOM results for {} samples", foms.len(), tests.len())));
    }
    let nl = package.n_lifts;
    if *sweep.n_u.start() <= nl || *sweep.n_u.end() > package.n_u || *sweep.n_p.end() > package.n_p {
        return Err(Error::InvalidArgument(format!(
            "sweep N_u = {}..{}, N_p = {}..{} does not fit the package (N_u = {}..{}, N_p = 1..{})",
            sweep.n_u.start(),
            sweep.n_u.end(),
            sweep.n_p.start(),
            sweep.n_p.end(),
            nl + 1,
            package.n_u,
            package.n_p
        )));
    }
    let ip = problem.inner_products();
    let mut fom_records = Vec::new();
    let mut references = Vec::new();
    for (i, (mu, (res, hash))) in tests.iter().zip(foms).enumerate() {
        match res {
            Ok(sol) => {
                fom_records.push(FomRecord {
                    sample: i,
                    mu: mu.0.clone(),
                    converged: true,
                    error: None,
                    seconds: sol.seconds,
                    iterations: sol.iterations(),
                    hash: hash.clone(),
                });
                references.push(Some((problem.velocity_full(sol), sol.p.clone(), sol.seconds)));
            }
            Err(e) => {
                fom_records.push(FomRecord {
                    sample: i,
                    mu: mu.0.clone(),
                    converged: false,
                    error: Some(e.to_string()),
                    seconds: f64::NAN,
                    iterations: 0,
                    hash: None,
                });
                references.push(None);
            }
        }
    }

    let mut records = Vec::new();
    for (n_u, n_p) in sweep.cells() {
        let pkg = package.truncated(n_u - nl, n_p)?;
        for (i, mu) in tests.iter().enumerate() {
            let mut rec = StudyRecord {
                sample: i,
                mu: mu.0.clone(),
                n_u,
                n_p,
                converged: false,
                error: None,
                eps_u: None,
                eps_p: None,
                rom_seconds: None,
                rom_iterations: None,
                fom_seconds: references[i].as_ref().map(|r| r.2),
                speedup: None,
            };
            let mut best: Option<crate::rom::ReducedSolution> = None;
            for _ in 0..opts.rom_repeats.max(1) {
                match pkg.solve(mu, &opts.picard) {
                    Ok(sol) => {
                        if best.as_ref().is_none_or(|b| sol.seconds < b.seconds) {
                            best = Some(sol);
                        }
                    }
                    Err(e) => {
                        rec.error = Some(e.to_string());
                        best = None;
                        break;
                    }
                }
            }
            if let Some(sol) = best {
                rec.converged = true;
                rec.rom_seconds = Some(sol.seconds);
                rec.rom_iterations = Some(sol.iterations());
                match &references[i] {
                    Some((u_fom, p_fom, fom_seconds)) => {
                        let (u, p) = reconstruct(basis, &sol)?;
                        rec.eps_u = Some(error_velocity(u_fom, &u, &ip.k_full)?);
                        rec.eps_p = Some(error_pressure(p_fom, &p, &ip.m_p)?);
                        rec.speedup = Some(fom_seconds / sol.seconds);
                    }
                    None => rec.error = Some("FOM solve failed for this sample".into()),
                }
            }
            records.push(rec);
        }
    }
    let cells = summarize_cells(sweep, &records);
    Ok(StudyReport {
        schema_version: REPORT_SCHEMA_VERSION,
        case_id: package.provenance.case_id.clone(),
        mesh_hash: package.provenance.mesh_hash.clone(),
        package_hash: opts.package_hash.clone(),
        n_h: package.n_h,
        rng: RNG_NAME.into(),
        seed: opts.seed,
        timing: TIMING_NOTE.into(),
        environment: Environment::current(opts.fom_workers),
        fom: fom_records,
        records,
        cells,
    })
}

fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        f64::NAN
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

fn max(xs: &[f64]) -> f64 {
    xs.iter().copied().fold(f64::NAN, f64::max)
}

pub fn summarize_cells(sweep: &Sweep, records: &[StudyRecord]) -> Vec<CellSummary> {
    sweep
        .cells()
        .map(|(n_u, n_p)| {
            let cell: Vec<&StudyRecord> = records.iter().filter(|r| r.n_u == n_u && r.n_p == n_p).collect();
            let ok: Vec<&&StudyRecord> = cell.iter().filter(|r| r.eps_u.is_some() && r.eps_p.is_some()).collect();
            let pick = |f: fn(&StudyRecord) -> Option<f64>| ok.iter().filter_map(|r| f(r)).collect::<Vec<f64>>();
            let eu = pick(|r| r.eps_u);
            let ep = pick(|r| r.eps_p);
            let sp = pick(|r| r.speedup);
            CellSummary {
                n_u,
                n_p,
                used: ok.len(),
                excluded: cell.len() - ok.len(),
                max_eps_u: max(&eu),
                mean_eps_u: mean(&eu),
                max_eps_p: max(&ep),
                mean_eps_p: mean(&ep),
                mean_rom_seconds: mean(&pick(|r| r.rom_seconds)),
                mean_iterations: mean(&pick(|r| r.rom_iterations.map(|n| n as f64))),
                mean_speedup: mean(&sp),
                max_speedup: max(&sp),
            }
        })
        .collect()
}

impl StudyReport {
    pub fn sweep(&self) -> Option<Sweep> {
        let nu = self.cells.iter().map(|c| c.n_u);
        let np = self.cells.iter().map(|c| c.n_p);
        Some(Sweep { n_u: nu.clone().min()?..=nu.max()?, n_p: np.clone().min()?..=np.max()? })
    }

    pub fn cell(&self, n_u: usize, n_p: usize) -> Option<&CellSummary> {
        self.cells.iter().find(|c| c.n_u == n_u && c.n_p == n_p)
    }

    /// One row per (sample, N_u, N_p).
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let dim = self.records.first().map_or(0, |r| r.mu.len());
        let mut header: Vec<String> = vec!["sample".into()];
        header.extend((0..dim).map(|k| format!("mu_{k}")));
        header.extend(
            ["n_u", "n_p", "converged", "eps_u", "eps_p", "fom_seconds", "rom_seconds", "rom_iterations", "speedup", "error"]
                .map(String::from),
        );
        let csv_err = |e: csv::Error| Error::Format(e.to_string());
        out.write_record(&header).map_err(csv_err)?;
        let opt = |x: Option<f64>| x.map_or(String::new(), |v| format!("{v:e}"));
        for r in &self.records {
            let mut row: Vec<String> = vec![r.sample.to_string()];
            row.extend(r.mu.iter().map(|v| format!("{v:e}")));
            row.extend([
                r.n_u.to_string(),
                r.n_p.to_string(),
                r.converged.to_string(),
                opt(r.eps_u),
                opt(r.eps_p),
                opt(r.fom_seconds),
                opt(r.rom_seconds),
                r.rom_iterations.map_or(String::new(), |n| n.to_string()),
                opt(r.speedup),
                r.error.clone().unwrap_or_default(),
            ]);
            out.write_record(&row).map_err(csv_err)?;
        }
        out.flush()?;
        Ok(())
    }

    /// Max-error and speedup tables as plain text.
    pub fn summarize(&self) -> String {
        let mut s = String::new();
        let Some(sweep) = self.sweep() else {
            return "empty report\n".into();
        };
        let fom_ok = self.fom.iter().filter(|f| f.converged).count();
        let _ = writeln!(
            s,
            "case {}  N^h = {}  tests = {} ({} FOM converged)  seed = {}",
            self.case_id,
            self.n_h,
            self.fom.len(),
            fom_ok,
            self.seed
        );
        let table = |s: &mut String, title: &str, f: &dyn Fn(&CellSummary) -> f64| {
            let _ = writeln!(s, "\n{title}");
            let _ = write!(s, "{:>6}", "Nu\\Np");
            for np in sweep.n_p.clone() {
                let _ = write!(s, "{np:>11}");
            }
            let _ = writeln!(s);
            for nu in sweep.n_u.clone() {
                let _ = write!(s, "{nu:>6}");
                for np in sweep.n_p.clone() {
                    let v = self.cell(nu, np).map_or(f64::NAN, f);
                    let _ = write!(s, "{v:>11.3e}");
                }
                let _ = writeln!(s);
            }
        };
        table(&mut s, "max eps_u", &|c| c.max_eps_u);
        table(&mut s, "max eps_p", &|c| c.max_eps_p);
        table(&mut s, "mean speedup (FOM time / ROM time)", &|c| c.mean_speedup);
        let excluded: usize = self.cells.iter().map(|c| c.excluded).sum();
        if excluded > 0 {
            let _ = writeln!(s, "\n{excluded} (sample, N_u, N_p) entries excluded: non-converged solves, see records");
        }
        s
    }
}
