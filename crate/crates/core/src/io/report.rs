use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::RunConfig;
use crate::analysis::Claim;
use crate::background::ArwCertificate;
use crate::cosmology::FriedmannReport;
use crate::flow::Termination;
use crate::transition::{C3Report, NormalLimitComparison};
use crate::Result;

/// Object hash in the style of git: `sha256("blob <len>\0" ‖ content)`, hex encoded.
pub fn content_hash(content: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", content.len()).as_bytes());
    h.update(content);
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// Wall-clock seconds per stage.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Timing {
    pub stages: BTreeMap<String, f64>,
}

impl Timing {
    pub fn record(&mut self, stage: &str, seconds: f64) {
        *self.stages.entry(stage.to_string()).or_insert(0.0) += seconds;
    }

    pub fn total(&self) -> f64 {
        self.stages.values().sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionSummary {
    pub seeds: Vec<usize>,
    pub max_displacement: f64,
    pub c3: C3Report,
    pub normal_limit: Vec<NormalLimitComparison>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub schema_version: u32,
    pub config: RunConfig,
    pub config_hash: String,
    pub arw_certificate: Option<ArwCertificate>,
    pub claims: Vec<Claim>,
    pub transition: Option<TransitionSummary>,
    pub friedmann: Option<FriedmannReport>,
    pub timing: Timing,
    pub termination: Option<Termination>,
    /// Enabled stages that could not be evaluated, with the reason.
    #[serde(default)]
    pub skipped: Vec<String>,
    pub all_pass: bool,
}

impl RunReport {
    pub fn new(config: &RunConfig) -> Result<Self> {
        Ok(Self {
            schema_version: super::SCHEMA_VERSION,
            config: config.clone(),
            config_hash: content_hash(config.to_toml()?.as_bytes()),
            arw_certificate: None,
            claims: Vec::new(),
            transition: None,
            friedmann: None,
            timing: Timing::default(),
            termination: None,
            skipped: Vec::new(),
            all_pass: true,
        })
    }

    /// Recomputes `all_pass` from every section that is present.
    pub fn finalize(&mut self) {
        self.all_pass = self.skipped.is_empty()
            && self.claims.iter().all(|c| c.pass)
            && self.arw_certificate.as_ref().is_none_or(|c| c.all_pass)
            && self.transition.as_ref().is_none_or(|t| t.c3.all_pass)
            && self.termination.as_ref().is_none_or(|t| !t.is_error());
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text + "\n")?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}
