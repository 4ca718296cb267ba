//! Per-run manifests.

use std::path::Path;

use circuitlab_core::data::Domain;
use circuitlab_core::interventions::{ImportanceMatrix, MediationGrid, PatchingProfile, PosteriorStats};
use circuitlab_core::metrics::{AblationResult, MetricSet};
use circuitlab_core::vae::{Hyper, Variant};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::hex;
use crate::error::{io_err, Result};

pub const SOFTWARE_VERSION: &str = concat!(env!("CARGO_PKG_NAME"), " ", env!("CARGO_PKG_VERSION"));

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct RunId {
    pub dataset: String,
    pub architecture: Variant,
    pub seed: u64,
}

impl RunId {
    /// File-name friendly identifier.
    pub fn slug(&self) -> String {
        let clean: String = self
            .dataset
            .chars()
            .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
            .collect();
        format!("{}__{}__{}", clean, self.architecture.name(), self.seed)
    }
}

impl std::fmt::Display for RunId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}/{}/{}", self.dataset, self.architecture.name(), self.seed)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum RunStatus {
    Completed,
    Failed { stage: String, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchitectureInfo {
    pub input_dim: usize,
    pub encoder_widths: Vec<usize>,
    pub latent_dim: usize,
    pub hyper: Hyper,
    pub init_scheme: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSummary {
    pub final_mse: f64,
    pub epochs_run: usize,
    pub converged: bool,
    pub train_rows: usize,
    pub holdout_rows: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatchingSummary {
    pub pairs: usize,
    pub mean_profile: PatchingProfile,
    /// Largest `|sum(direct) - compound(0)| / max(1, compound(0))` over pairs.
    pub max_telescoping_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DownstreamSummary {
    pub accuracy: f64,
    pub auc: f64,
    pub robustness: f64,
    pub dp_gap: Option<f64>,
    pub probe_iterations: usize,
    pub probe_converged: bool,
}

/// Outputs of every stage of one grid cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunOutputs {
    pub training: TrainingSummary,
    pub eval_rows: usize,
    pub group_names: Vec<String>,
    pub importance: ImportanceMatrix,
    pub posterior: PosteriorStats,
    pub ces_fixed_per_dim: Vec<f64>,
    pub patching: PatchingSummary,
    pub mediation: MediationGrid,
    pub metrics: MetricSet,
    pub downstream: Option<DownstreamSummary>,
    pub ablation: Option<AblationResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub run_id: RunId,
    pub domain: Option<Domain>,
    pub status: RunStatus,
    pub config_hash: String,
    pub dataset_hash: Option<String>,
    pub architecture: Option<ArchitectureInfo>,
    pub outputs: Option<RunOutputs>,
    pub checkpoint: Option<String>,
    pub warnings: Vec<String>,
    pub software_version: String,
    pub wall_clock_secs: f64,
}

impl RunManifest {
    pub fn failed(run_id: RunId, config_hash: &str, stage: &str, message: String) -> Self {
        Self {
            run_id,
            domain: None,
            status: RunStatus::Failed {
                stage: stage.to_string(),
                message,
            },
            config_hash: config_hash.to_string(),
            dataset_hash: None,
            architecture: None,
            outputs: None,
            checkpoint: None,
            warnings: Vec::new(),
            software_version: SOFTWARE_VERSION.to_string(),
            wall_clock_secs: 0.0,
        }
    }

    pub fn is_completed(&self) -> bool {
        self.status == RunStatus::Completed && self.outputs.is_some()
    }

    /// SHA-256 of the manifest with the wall-clock time zeroed.
    pub fn content_hash(&self) -> String {
        let mut m = self.clone();
        m.wall_clock_secs = 0.0;
        hex(&Sha256::digest(serde_json::to_vec(&m).expect("manifest serialises")))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self)?;
        std::fs::write(path, json).map_err(io_err(path))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Reads every `*.json` manifest in a directory, sorted by run id.
pub fn load_manifests(dir: &Path) -> Result<Vec<RunManifest>> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(io_err(dir))? {
        let path = entry.map_err(io_err(dir))?.path();
        if path.extension().is_some_and(|e| e == "json") {
            out.push(RunManifest::load(&path)?);
        }
    }
    out.sort_by(|a, b| a.run_id.cmp(&b.run_id));
    Ok(out)
}
