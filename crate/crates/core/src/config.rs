//! Experiment configuration read from TOML.
//!
//! ```toml
//! output_dir = "out"
//! seed = 0
//!
//! [geometry]
//! mesh_level = 3
//!
//! [optimization]
//! mode = "robust-quad"
//! backend = "rom"
//! ```
//!
//! Every section and key is optional; missing entries take the benchmark
//! defaults.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::affine::BenchmarkConfig;
use crate::design::{DesignMode, DesignOptions, DesignProblem, LoopOptions};
use crate::error::{Error, Result};
use crate::pod::RankSelection;
use crate::robust::{MpecOptions, NormKind, UncertaintySet};
use crate::sqp::SqpOptions;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub output_dir: PathBuf,
    pub seed: u64,
    pub geometry: BenchmarkConfig,
    pub uncertainty: UncertaintyConfig,
    pub optimization: OptimizationConfig,
    pub study: StudyConfig,
    pub solve: SolveConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            output_dir: PathBuf::from("out"),
            seed: 0,
            geometry: BenchmarkConfig::default(),
            uncertainty: UncertaintyConfig::default(),
            optimization: OptimizationConfig::default(),
            study: StudyConfig::default(),
            solve: SolveConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct UncertaintyConfig {
    /// Nominal angle `φ̂` in degrees.
    pub nominal: Vec<f64>,
    /// Half-widths `D`.
    pub scaling: Vec<f64>,
    /// Norm of the linear robust counterpart; the quadratic one always
    /// uses `k = 2`.
    pub linear_norm: NormKind,
    /// Points per axis of the brute-force worst-case grid.
    pub grid_points: usize,
}

impl Default for UncertaintyConfig {
    fn default() -> Self {
        Self {
            nominal: vec![85.0],
            scaling: vec![5.0],
            linear_norm: NormKind::Inf,
            grid_points: 2001,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Backend {
    Full,
    Rom,
}

impl fmt::Display for Backend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Backend::Full => "full",
            Backend::Rom => "rom",
        })
    }
}

impl FromStr for Backend {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Backend::Full),
            "rom" => Ok(Backend::Rom),
            other => Err(Error::Config(format!(
                "unknown backend {other:?} (expected full or rom)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizationConfig {
    pub mode: DesignMode,
    pub backend: Backend,
    pub rho: f64,
    /// Angle of the nominal problem and of the target output.
    pub nominal_angle: Vec<f64>,
    /// Stopping tolerance of the reduced/full output discrepancy.
    pub tol: f64,
    pub max_outer: usize,
    /// Relative accuracy of full-order linear solves.
    pub solve_tol: f64,
    pub taus: Vec<f64>,
    pub sqp: SqpOptions,
}

impl Default for OptimizationConfig {
    fn default() -> Self {
        let design = DesignOptions::default();
        Self {
            mode: DesignMode::Nominal,
            backend: Backend::Rom,
            rho: 100.0,
            nominal_angle: vec![90.0],
            tol: 1e-4,
            max_outer: 4,
            solve_tol: 1e-10,
            taus: design.mpec.taus,
            sqp: design.sqp,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StudyConfig {
    /// Axes of the training grid, one per design parameter.
    pub train: Vec<Vec<f64>>,
    pub test: Vec<Vec<f64>>,
    pub phi: Vec<f64>,
    /// Basis sizes; empty sweeps every size up to the rank.
    pub ells: Vec<usize>,
}

impl Default for StudyConfig {
    fn default() -> Self {
        Self {
            train: vec![vec![1.0, 10.5, 20.0], vec![1.0, 3.0, 5.0], vec![5.0, 7.0, 10.0]],
            test: vec![vec![5.75, 15.25], vec![2.0, 4.0], vec![6.0, 8.5]],
            phi: vec![85.0],
            ells: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolveConfig {
    /// Design; the reference magnet when empty.
    pub p: Vec<f64>,
    pub phi: Vec<f64>,
}

impl Default for SolveConfig {
    fn default() -> Self {
        Self {
            p: Vec::new(),
            phi: vec![90.0],
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| {
            let line = e
                .span()
                .map_or(0, |s| text[..s.start.min(text.len())].matches('\n').count() + 1);
            Error::Parse {
                line,
                message: e.message().to_string(),
            }
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serialises")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    /// First 16 hex digits of the SHA-256 of the canonical TOML form. The
    /// output directory is left out so that reruns elsewhere hash alike.
    pub fn hash(&self) -> String {
        let canonical = Self {
            output_dir: PathBuf::new(),
            ..self.clone()
        };
        let digest = Sha256::digest(canonical.to_toml().as_bytes());
        hex::encode(digest)[..16].to_string()
    }

    pub fn validate(&self) -> Result<()> {
        self.geometry.validate()?;
        let admissible = self.geometry.admissible();
        let u = &self.uncertainty;
        UncertaintySet::new(u.nominal.clone(), u.scaling.clone(), u.linear_norm)?;
        if u.grid_points < 2 {
            return Err(Error::Config("grid_points must be at least 2".into()));
        }
        let o = &self.optimization;
        if o.nominal_angle.len() != u.nominal.len() {
            return Err(Error::Config(
                "nominal_angle and uncertainty.nominal differ in length".into(),
            ));
        }
        for (name, v) in [
            ("rho", o.rho),
            ("tol", o.tol),
            ("solve_tol", o.solve_tol),
            ("sqp.kkt_tol", o.sqp.kkt_tol),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} = {v} must be positive")));
            }
        }
        if o.taus.is_empty() || o.taus.iter().any(|t| !(*t > 0.0)) {
            return Err(Error::Config("taus must be a nonempty list of positive numbers".into()));
        }
        let s = &self.study;
        if s.train.len() != 3 || s.test.len() != 3 || s.train.iter().chain(&s.test).any(|a| a.is_empty()) {
            return Err(Error::Config(
                "study grids need one nonempty axis per design parameter".into(),
            ));
        }
        for p in crate::design::tensor_grid(&s.train)
            .iter()
            .chain(&crate::design::tensor_grid(&s.test))
        {
            admissible
                .check(p)
                .map_err(|e| Error::Config(format!("study grid point {p:?}: {e}")))?;
        }
        if s.phi.len() != u.nominal.len() || self.solve.phi.len() != u.nominal.len() {
            return Err(Error::Config(
                "angles must have one entry per uncertain parameter".into(),
            ));
        }
        if !self.solve.p.is_empty() {
            admissible
                .check(&self.solve.p)
                .map_err(|e| Error::Config(format!("solve.p: {e}")))?;
        }
        Ok(())
    }

    pub fn solve_point(&self) -> Vec<f64> {
        if self.solve.p.is_empty() {
            self.geometry.reference.to_vec()
        } else {
            self.solve.p.clone()
        }
    }

    pub fn design_options(&self) -> DesignOptions {
        let o = &self.optimization;
        DesignOptions {
            sqp: o.sqp.clone(),
            mpec: MpecOptions {
                taus: o.taus.clone(),
                sqp: o.sqp.clone(),
                ..MpecOptions::default()
            },
        }
    }

    pub fn loop_options(&self) -> LoopOptions {
        let o = &self.optimization;
        LoopOptions {
            tol: o.tol,
            max_outer: o.max_outer,
            rank: RankSelection::Full,
            solve_tol: o.solve_tol,
            design: self.design_options(),
        }
    }

    /// Design problem with the target `E_d` already computed.
    pub fn design_problem(&self, target: f64, mode: DesignMode) -> Result<DesignProblem> {
        let u = &self.uncertainty;
        let mut problem = DesignProblem::new(
            target,
            mode,
            self.optimization.rho,
            u.nominal.clone(),
            u.scaling.clone(),
        )?;
        problem.nominal_angle = self.optimization.nominal_angle.clone();
        if mode == DesignMode::RobustLinear {
            problem.uncertainty = problem.uncertainty.with_norm(u.linear_norm);
        }
        Ok(problem)
    }
}
