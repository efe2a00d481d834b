//! Case configuration files (TOML) and the bundled cases.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::constitutive::{BodyForce, CarreauYasudaParams, ParameterComponent, ParameterSpace};
use crate::eim::EimOptions;
use crate::error::{Error, Result};
use crate::fom::{BoundaryCondition, FomProblem, PicardOptions};
use crate::mesh::builders::{channel, interval, linspace, rectangle, valve, ChannelGeometry, Side, ValveGeometry};
use crate::mesh::io::read_mesh;
use crate::mesh::{deform, extrude, BoundaryTag, DeformationMap, SpaceTimeMesh, SpatialMesh};
use crate::pod::PodOptions;

const BUNDLED: [(&str, &str); 3] = [
    ("valve", include_str!("../cases/valve.toml")),
    ("artery", include_str!("../cases/artery.toml")),
    ("couette", include_str!("../cases/couette.toml")),
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RectangleGeometry {
    pub min_m: [f64; 2],
    pub max_m: [f64; 2],
    pub cells: [usize; 2],
    pub left: String,
    pub right: String,
    pub bottom: String,
    pub top: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntervalGeometry {
    pub range_m: [f64; 2],
    pub cells: usize,
    pub left: String,
    pub right: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GeometryConfig {
    Valve(ValveGeometry),
    Channel(ChannelGeometry),
    Rectangle(RectangleGeometry),
    Interval(IntervalGeometry),
    /// Space-time mesh in the `stmesh` text format; path relative to the case file.
    File {
        path: PathBuf,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeshConfig {
    pub geometry: GeometryConfig,
    #[serde(default)]
    pub t_start_s: f64,
    pub t_end_s: f64,
    pub time_steps: usize,
    /// Spatial refinement factor applied to every cell count.
    #[serde(default = "one")]
    pub refine: usize,
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SampleConfig {
    pub train_grid: Vec<usize>,
    pub n_test: usize,
    pub seed: u64,
}

impl Default for SampleConfig {
    fn default() -> Self {
        SampleConfig { train_grid: vec![4, 4], n_test: 10, seed: 20240917 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StudyConfig {
    /// Inclusive `N_u` range, lifts included.
    pub n_u: [usize; 2],
    pub n_p: [usize; 2],
}

impl Default for StudyConfig {
    fn default() -> Self {
        StudyConfig { n_u: [2, 6], n_p: [1, 4] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CaseConfig {
    pub case_id: String,
    pub mesh: MeshConfig,
    #[serde(default = "identity")]
    pub deformation: DeformationMap,
    pub material: CarreauYasudaParams,
    #[serde(default)]
    pub body_force_m_s2: Vec<f64>,
    /// Condition per boundary tag, e.g. `"dirichlet:inlet"`.
    pub boundary: BTreeMap<String, BoundaryCondition>,
    #[serde(default)]
    pub parameters: Vec<ParameterComponent>,
    #[serde(default)]
    pub solver: PicardOptions,
    #[serde(default)]
    pub pod: PodOptions,
    #[serde(default)]
    pub eim: EimOptions,
    #[serde(default)]
    pub samples: SampleConfig,
    #[serde(default)]
    pub study: StudyConfig,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

fn identity() -> DeformationMap {
    DeformationMap::Identity
}

impl CaseConfig {
    pub fn bundled_names() -> impl Iterator<Item = &'static str> {
        BUNDLED.iter().map(|(n, _)| *n)
    }

    pub fn bundled(name: &str) -> Option<CaseConfig> {
        let (_, text) = BUNDLED.iter().find(|(n, _)| *n == name)?;
        Some(CaseConfig::from_toml(text).expect("bundled case files are valid"))
    }

    pub fn from_toml(text: &str) -> Result<CaseConfig> {
        let cfg: CaseConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a case file, or a bundled case by name (`valve`, `artery`, `couette`).
    pub fn load(spec: &str) -> Result<CaseConfig> {
        let path = Path::new(spec);
        if !path.exists() {
            let stem = spec.strip_suffix(".toml").unwrap_or(spec);
            return CaseConfig::bundled(stem).ok_or_else(|| Error::Config(format!("no case file or bundled case named `{spec}`")));
        }
        let mut cfg = CaseConfig::from_toml(&std::fs::read_to_string(path)?)?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.case_id.is_empty() || !self.case_id.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_') {
            return Err(Error::Config(format!("case_id `{}` must be a non-empty [A-Za-z0-9_-] string", self.case_id)));
        }
        if self.mesh.time_steps == 0 || !(self.mesh.t_end_s > self.mesh.t_start_s) {
            return Err(Error::Config("mesh needs t_end_s > t_start_s and at least one time step".into()));
        }
        if self.mesh.refine == 0 {
            return Err(Error::Config("refine must be at least 1".into()));
        }
        self.material.validate()?;
        for c in &self.parameters {
            if !(c.min <= c.max) || !c.min.is_finite() || !c.max.is_finite() {
                return Err(Error::Config(format!("parameter `{}` has an empty box", c.name)));
            }
        }
        if !self.parameters.is_empty() && self.samples.train_grid.len() != self.parameters.len() {
            return Err(Error::Config(format!(
                "train_grid has {} axes, the case has {} parameters",
                self.samples.train_grid.len(),
                self.parameters.len()
            )));
        }
        if !(self.pod.energy_threshold > 0.0 && self.pod.energy_threshold <= 1.0) {
            return Err(Error::Config("pod.energy_threshold must lie in (0, 1]".into()));
        }
        if self.eim.tol_eta <= 0.0 || self.eim.tol_tau <= 0.0 || self.eim.q_max == 0 {
            return Err(Error::Config("EIM tolerances must be positive and q_max at least 1".into()));
        }
        let [a, b] = self.study.n_u;
        let [c, d] = self.study.n_p;
        if a == 0 || a > b || c == 0 || c > d {
            return Err(Error::Config("study ranges must be non-empty and start at 1 or more".into()));
        }
        for tag in self.boundary.keys() {
            tag.parse::<BoundaryTag>()?;
        }
        Ok(())
    }

    pub fn parameter_space(&self) -> ParameterSpace {
        ParameterSpace { components: self.parameters.clone() }
    }

    pub fn body_force(&self) -> BodyForce {
        BodyForce(self.body_force_m_s2.clone())
    }

    /// Same case with every spatial cell count multiplied by `factor`.
    pub fn refined(&self, factor: usize) -> CaseConfig {
        let mut out = self.clone();
        out.mesh.refine *= factor;
        out
    }

    pub fn time_levels(&self) -> Vec<f64> {
        linspace(self.mesh.t_start_s, self.mesh.t_end_s, self.mesh.time_steps)
    }

    pub fn spatial_mesh(&self) -> Result<SpatialMesh> {
        let r = self.mesh.refine;
        match &self.mesh.geometry {
            GeometryConfig::Valve(g) => {
                let mut g = g.clone();
                g.cells_x = g.cells_x.map(|c| c * r);
                g.cells_y = g.cells_y.map(|c| c * r);
                valve(&g)
            }
            GeometryConfig::Channel(g) => {
                let mut g = g.clone();
                g.cells = g.cells.map(|c| c * r);
                channel(&g)
            }
            GeometryConfig::Rectangle(g) => {
                let tags = [&g.left, &g.right, &g.bottom, &g.top].map(|s| s.parse::<BoundaryTag>());
                let [left, right, bottom, top] = tags;
                let (left, right, bottom, top) = (left?, right?, bottom?, top?);
                rectangle(g.min_m, g.max_m, g.cells.map(|c| c * r), |side| match side {
                    Side::Left => left.clone(),
                    Side::Right => right.clone(),
                    Side::Bottom => bottom.clone(),
                    Side::Top => top.clone(),
                })
            }
            GeometryConfig::Interval(g) => interval(g.range_m[0], g.range_m[1], g.cells * r, &g.left, &g.right),
            GeometryConfig::File { .. } => Err(Error::Config("an imported mesh has no spatial mesh".into())),
        }
    }

    /// Extruded and deformed space-time mesh, or the imported one.
    pub fn build_mesh(&self) -> Result<SpaceTimeMesh> {
        if let GeometryConfig::File { path } = &self.mesh.geometry {
            let file = std::fs::File::open(self.base_dir.join(path))?;
            return read_mesh(std::io::BufReader::new(file));
        }
        let spatial = self.spatial_mesh()?;
        self.deformation.check_dimension(spatial.dim())?;
        let mesh = extrude(&spatial, &self.time_levels())?;
        if self.deformation.is_identity() {
            Ok(mesh)
        } else {
            deform(&mesh, &self.deformation)
        }
    }

    pub fn problem(&self) -> Result<FomProblem> {
        self.problem_on(self.build_mesh()?)
    }

    pub fn problem_on(&self, mesh: SpaceTimeMesh) -> Result<FomProblem> {
        FomProblem::new(mesh, self.material, self.parameter_space(), self.body_force(), &self.boundary)
    }
}
