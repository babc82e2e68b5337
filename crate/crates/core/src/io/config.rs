use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::analysis::AnalysisConfig;
use crate::background::{make_canonical, make_perturbed, ArwParams, ScaleFactor, TauLadder};
use crate::cosmology::{load_scale_factor, solve_friedmann, FluidConfig, FriedmannSolution};
use crate::flow::{FlowConfig, InitialData};
use crate::geometry::SpatialDomain;
use crate::transition::C3Tolerance;
use crate::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;

/// Where the scale factor `f(τ)` comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ScaleFactorSpec {
    Canonical { start: f64 },
    Perturbed { start: f64, amplitude: f64 },
    /// JSON written by `cosmology solve`; relative paths resolve against the config file.
    OdeFile { path: PathBuf },
    Friedmann { fluid: FluidConfig },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlowSettings {
    pub t_end: f64,
    pub u_floor: f64,
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub record_every: f64,
}

impl Default for FlowSettings {
    fn default() -> Self {
        Self {
            t_end: 12.0,
            u_floor: 1e-5,
            rel_tol: 1e-8,
            abs_tol: 1e-10,
            record_every: 0.1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CertificateSettings {
    pub tol: f64,
    pub ladder_end: f64,
    pub ladder_ratio: f64,
    pub ladder_count: usize,
}

impl Default for CertificateSettings {
    fn default() -> Self {
        Self {
            tol: 1e-6,
            ladder_end: -1e-4,
            ladder_ratio: 0.5,
            ladder_count: 12,
        }
    }
}

impl CertificateSettings {
    pub fn ladder(&self) -> Result<TauLadder> {
        TauLadder::geometric(self.ladder_end, self.ladder_ratio, self.ladder_count)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct TransitionSettings {
    /// Grid indices of the marker seeds; empty disables the transition stage.
    pub seeds: Vec<usize>,
    pub tolerance: C3Tolerance,
}

/// Everything needed to reproduce a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    /// Reserved; no stage draws random numbers. At most `i64::MAX`.
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    pub params: ArwParams,
    pub scale_factor: ScaleFactorSpec,
    pub domain: SpatialDomain,
    pub initial: InitialData,
    #[serde(default)]
    pub flow: FlowSettings,
    #[serde(default)]
    pub analysis: AnalysisConfig,
    #[serde(default)]
    pub certificate: CertificateSettings,
    #[serde(default)]
    pub transition: TransitionSettings,
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("out")
}

/// A configuration turned into solver inputs.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub flow: FlowConfig,
    pub friedmann: Option<FriedmannSolution>,
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Format(e.to_string()))
    }

    /// Checks that do not need the scale factor to be built.
    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "schema_version = {} is not supported (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        if self.seed > i64::MAX as u64 {
            return Err(Error::Config(format!("seed = {} does not fit a TOML integer", self.seed)));
        }
        if self.domain.n() != self.params.n() {
            return Err(Error::Config(format!(
                "domain.n = {} does not match params.n = {}",
                self.domain.n(),
                self.params.n()
            )));
        }
        if let Some(bad) = self.transition.seeds.iter().find(|&&s| s >= self.domain.len()) {
            return Err(Error::Config(format!(
                "transition.seeds: {bad} is outside the grid of {} points",
                self.domain.len()
            )));
        }
        let (lo, hi) = self.analysis.window;
        if !(lo < hi) {
            return Err(Error::Config(format!("analysis.window = [{lo}, {hi}] is empty")));
        }
        if let ScaleFactorSpec::Friedmann { fluid } = &self.scale_factor {
            if fluid.n != self.params.n() || fluid.omega != self.params.omega() {
                return Err(Error::Config(format!(
                    "scale_factor.fluid (n = {}, ω = {}) does not match params (n = {}, ω = {})",
                    fluid.n,
                    fluid.omega,
                    self.params.n(),
                    self.params.omega()
                )));
            }
        }
        self.certificate
            .ladder()
            .map_err(|e| Error::Config(format!("certificate: {e}")))?;
        Ok(())
    }

    /// Builds the scale factor. `base_dir` anchors relative file paths.
    pub fn build_scale_factor(&self, base_dir: &Path) -> Result<(ScaleFactor, Option<FriedmannSolution>)> {
        let sf = match &self.scale_factor {
            ScaleFactorSpec::Canonical { start } => (make_canonical(self.params, *start)?, None),
            ScaleFactorSpec::Perturbed { start, amplitude } => {
                let base = make_canonical(self.params, *start)?;
                (make_perturbed(&base, *amplitude)?, None)
            }
            ScaleFactorSpec::OdeFile { path } => {
                let full = if path.is_absolute() { path.clone() } else { base_dir.join(path) };
                (load_scale_factor(&full)?, None)
            }
            ScaleFactorSpec::Friedmann { fluid } => {
                let sol = solve_friedmann(fluid)?;
                (sol.scale_factor.clone(), Some(sol))
            }
        };
        let got = sf.0.params();
        let want = &self.params;
        let m_rel = (got.m() - want.m()).abs() / want.m();
        if got.n() != want.n() || got.omega() != want.omega() || m_rel > 1e-9 {
            return Err(Error::Config(format!(
                "scale factor has (n, ω, m) = ({}, {}, {}) but params say ({}, {}, {})",
                got.n(),
                got.omega(),
                got.m(),
                want.n(),
                want.omega(),
                want.m()
            )));
        }
        Ok(sf)
    }

    pub fn flow_config(&self, scale_factor: ScaleFactor) -> FlowConfig {
        let mut cfg = FlowConfig::new(scale_factor, self.domain.clone(), self.initial.clone());
        cfg.t_end = self.flow.t_end;
        cfg.u_floor = self.flow.u_floor;
        cfg.rel_tol = self.flow.rel_tol;
        cfg.abs_tol = self.flow.abs_tol;
        cfg.record_every = self.flow.record_every;
        cfg
    }

    pub fn prepare(&self, base_dir: &Path) -> Result<Prepared> {
        self.validate()?;
        let (sf, friedmann) = self.build_scale_factor(base_dir)?;
        let flow = self.flow_config(sf);
        flow.validate().map_err(|e| match e {
            Error::InvalidParams(msg) => Error::Config(format!("flow: {msg}")),
            other => other,
        })?;
        Ok(Prepared { flow, friedmann })
    }
}
