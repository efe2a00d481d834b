use std::io::Write;
use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use stmor::analysis::Sweep;
use stmor::config::CaseConfig;
use stmor::pipeline::{self, ErrorBody, EvalRequest, FomRequest, Layout};
use stmor::{Error, Result};
use stmor_client::Client;

#[derive(Parser)]
#[command(name = "stmor", version, about = "Space-time POD/EIM reduced-order models for shear-thinning Stokes flow")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Case file, or the name of a bundled case (valve, artery, couette).
    #[arg(long, global = true)]
    case: Option<String>,
    /// Artifact directory. Defaults to `out/<case id>`.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// Worker threads for FOM work; 0 uses every core.
    #[arg(long, global = true, default_value_t = 0)]
    workers: usize,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Training grid counts per parameter axis, e.g. `4x4`.
    #[arg(long, global = true)]
    train_grid: Option<String>,
    /// Basis-size sweep, e.g. `Nu=2..6,Np=1..4`.
    #[arg(long, global = true)]
    sweep: Option<Sweep>,
    #[arg(long, global = true)]
    tol_eim_eta: Option<f64>,
    #[arg(long, global = true)]
    tol_eim_tau: Option<f64>,
    /// Retained POD energy fraction, e.g. 0.999999.
    #[arg(long, global = true)]
    energy_threshold: Option<f64>,
    /// Run `fom`, `eval-rom` and `rom-info` against a service at this URL.
    #[arg(long, global = true)]
    server: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Build, deform and export the space-time mesh.
    Mesh,
    /// One FOM solve.
    Fom {
        /// Parameter sample, comma-separated. Defaults to the box center.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        mu: Option<Vec<f64>>,
    },
    /// FOM solves over the training grid.
    Snapshots,
    /// POD, EIM and projection from stored snapshots.
    BuildRom,
    /// One online ROM solve.
    EvalRom {
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        mu: Option<Vec<f64>>,
        /// Use only the leading N_u velocity basis functions (lifts included).
        #[arg(long, requires = "n_p")]
        n_u: Option<usize>,
        #[arg(long, requires = "n_u")]
        n_p: Option<usize>,
        /// Package file. Defaults to `<out-dir>/rom.bin`.
        #[arg(long)]
        package: Option<PathBuf>,
    },
    /// Error and speedup study over random test samples.
    Study {
        /// Online solves per cell; the fastest is reported.
        #[arg(long, default_value_t = 5)]
        rom_repeats: usize,
    },
    /// Dimensions and provenance of a ROM package.
    RomInfo {
        #[arg(long)]
        package: Option<PathBuf>,
    },
    /// Write VTK files for a stored FOM snapshot.
    ExportVtk {
        /// Snapshot file. Defaults to `<out-dir>/fom.snap`.
        #[arg(long)]
        snapshot: Option<PathBuf>,
    },
    /// Work with study reports.
    Report {
        #[command(subcommand)]
        command: ReportCommand,
    },
    /// Run the HTTP service.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: SocketAddr,
        #[arg(long)]
        package: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum ReportCommand {
    /// Print the max-error and speedup tables.
    Summarize {
        /// Report file. Defaults to `<out-dir>/study/report.json`.
        report: Option<PathBuf>,
    },
}

fn parse_grid(s: &str) -> Result<Vec<usize>> {
    s.split(['x', 'X', ',']).map(|t| t.trim().parse().map_err(|_| Error::InvalidArgument(format!("bad train grid '{s}'")))).collect()
}

impl Common {
    fn config(&self) -> Result<CaseConfig> {
        let name = self.case.as_deref().ok_or_else(|| Error::InvalidArgument("--case is required".into()))?;
        let mut cfg = CaseConfig::load(name)?;
        if let Some(seed) = self.seed {
            cfg.samples.seed = seed;
        }
        if let Some(g) = &self.train_grid {
            cfg.samples.train_grid = parse_grid(g)?;
        }
        if let Some(t) = self.tol_eim_eta {
            cfg.eim.tol_eta = t;
        }
        if let Some(t) = self.tol_eim_tau {
            cfg.eim.tol_tau = t;
        }
        if let Some(e) = self.energy_threshold {
            cfg.pod.energy_threshold = e;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn layout(&self, case_id: Option<&str>) -> Result<Layout> {
        match (&self.out_dir, case_id) {
            (Some(d), _) => Ok(Layout::new(d)),
            (None, Some(id)) => Ok(Layout::new(PathBuf::from("out").join(id))),
            (None, None) => Err(Error::InvalidArgument("--out-dir or --case is required".into())),
        }
    }

    /// Layout from `--out-dir`, or from the case id when only `--case` is given.
    fn layout_lenient(&self) -> Result<Layout> {
        if self.out_dir.is_some() {
            return self.layout(None);
        }
        let cfg = self.config()?;
        self.layout(Some(&cfg.case_id))
    }
}

enum Failure {
    Local(Error),
    Remote(stmor_client::ClientError),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Failure {
        Failure::Local(e)
    }
}

impl From<stmor_client::ClientError> for Failure {
    fn from(e: stmor_client::ClientError) -> Failure {
        Failure::Remote(e)
    }
}

fn print_json<T: Serialize>(v: &T) -> Result<(), Failure> {
    let s = serde_json::to_string_pretty(v).map_err(|e| Error::Format(e.to_string()))?;
    emit(&(s + "\n"))
}

/// Writes to stdout, treating a closed pipe as success.
fn emit(s: &str) -> Result<(), Failure> {
    match std::io::stdout().lock().write_all(s.as_bytes()) {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(Error::Io(e).into()),
        _ => Ok(()),
    }
}

fn runtime() -> Result<tokio::runtime::Runtime> {
    Ok(tokio::runtime::Builder::new_multi_thread().enable_all().build()?)
}

fn run(cli: Cli) -> Result<(), Failure> {
    let c = &cli.common;
    if let (Some(url), Command::Fom { .. } | Command::EvalRom { .. } | Command::RomInfo { .. }) = (&c.server, &cli.command) {
        let client = Client::new(url.clone());
        let rt = runtime()?;
        return match &cli.command {
            Command::Fom { mu } => print_json(&rt.block_on(client.fom(&FomRequest { mu: mu.clone() }))?),
            Command::EvalRom { mu, n_u, n_p, .. } => {
                print_json(&rt.block_on(client.eval_rom(&EvalRequest { mu: mu.clone(), n_u: *n_u, n_p: *n_p }))?)
            }
            _ => print_json(&rt.block_on(client.rom_info())?),
        };
    }
    match &cli.command {
        Command::Mesh => {
            let cfg = c.config()?;
            print_json(&pipeline::mesh_stage(&cfg, &c.layout(Some(&cfg.case_id))?)?)
        }
        Command::Fom { mu } => {
            let cfg = c.config()?;
            let out = c.layout(Some(&cfg.case_id))?;
            print_json(&pipeline::fom_stage(&cfg, mu.clone(), c.workers, Some(&out))?)
        }
        Command::Snapshots => {
            let cfg = c.config()?;
            print_json(&pipeline::snapshots_stage(&cfg, c.workers, &c.layout(Some(&cfg.case_id))?)?)
        }
        Command::BuildRom => {
            let cfg = c.config()?;
            print_json(&pipeline::build_rom_stage(&cfg, c.workers, &c.layout(Some(&cfg.case_id))?)?)
        }
        Command::EvalRom { mu, n_u, n_p, package } => {
            let path = match package {
                Some(p) => p.clone(),
                None => c.layout_lenient()?.package(),
            };
            let (pkg, _) = pipeline::load_package(&path)?;
            let req = EvalRequest { mu: mu.clone(), n_u: *n_u, n_p: *n_p };
            print_json(&pipeline::eval_rom(&pkg, req.mu.clone(), req.sizes()?)?)
        }
        Command::Study { rom_repeats } => {
            let cfg = c.config()?;
            let out = c.layout(Some(&cfg.case_id))?;
            let sweep = match &c.sweep {
                Some(s) => s.clone(),
                None => pipeline::default_sweep(&cfg, &out)?,
            };
            let (report, files) = pipeline::study_stage(&cfg, &sweep, c.workers, *rom_repeats, &out)?;
            eprint!("{}", report.summarize());
            print_json(&files)
        }
        Command::RomInfo { package } => {
            let path = match package {
                Some(p) => p.clone(),
                None => c.layout_lenient()?.package(),
            };
            let (pkg, hash) = pipeline::load_package(&path)?;
            print_json(&pipeline::rom_info(&pkg, &hash))
        }
        Command::ExportVtk { snapshot } => {
            let cfg = c.config()?;
            let out = c.layout(Some(&cfg.case_id))?;
            let snap = snapshot.clone().unwrap_or_else(|| out.fom());
            print_json(&pipeline::export_vtk(&cfg, &snap, &out)?)
        }
        Command::Report { command: ReportCommand::Summarize { report } } => {
            let path = match report {
                Some(p) => p.clone(),
                None => c.layout_lenient()?.study().join("report.json"),
            };
            emit(&pipeline::load_report(&path)?.summarize())
        }
        Command::Serve { addr, package } => {
            let package = match (package, &c.case, &c.out_dir) {
                (Some(p), _, _) => Some(p.clone()),
                (None, Some(_), _) | (None, None, Some(_)) => Some(c.layout_lenient()?.package()).filter(|p| p.exists()),
                _ => None,
            };
            let state = stmor_service::AppState::load(c.case.as_deref(), package.as_deref(), c.workers)?;
            runtime()?.block_on(stmor_service::serve(*addr, state)).map_err(Error::Io)?;
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    tracing_subscriber::fmt().with_env_filter(tracing_subscriber::EnvFilter::from_default_env()).with_writer(std::io::stderr).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let body = match &f {
                Failure::Local(e) => ErrorBody::from(e),
                Failure::Remote(e) => e.body(),
            };
            eprintln!("{}", serde_json::json!({ "error": body }));
            ExitCode::FAILURE
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_parsing() {
        assert_eq!(parse_grid("4x4").unwrap(), vec![4, 4]);
        assert_eq!(parse_grid("9").unwrap(), vec![9]);
        assert!(parse_grid("4xa").is_err());
    }

    #[test]
    fn flags_parse() {
        let cli = Cli::try_parse_from(["stmor", "study", "--case", "valve", "--sweep", "Nu=2..6,Np=1..4", "--workers", "2"]).unwrap();
        assert_eq!(cli.common.sweep.unwrap().cells().count(), 20);
        assert!(Cli::try_parse_from(["stmor", "eval-rom", "--n-u", "3"]).is_err());
        let cli = Cli::try_parse_from(["stmor", "fom", "--mu", "1.2e-3,0.78"]).unwrap();
        assert!(matches!(cli.command, Command::Fom { mu: Some(ref m) } if m.len() == 2));
    }
}
