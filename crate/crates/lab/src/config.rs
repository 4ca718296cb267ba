//! Experiment configuration, read from TOML.
//!
//! Every field has a default, so an empty file describes the full protocol:
//! five architectures, seeds 42/123/456, full-size encoders and the
//! default training, intervention and probe settings. A minimal file only
//! needs one `[[datasets]]` table.

use std::path::{Path, PathBuf};

use circuitlab_core::data::{MiniSpritesSpec, TabularSynthSpec};
use circuitlab_core::interventions::{SweepCenter, DEFAULT_SCALES, DEFAULT_SWEEP_POINTS, DEFAULT_SWEEP_RANGE};
use circuitlab_core::probe::ProbeConfig;
use circuitlab_core::vae::{Hyper, TrainConfig, Variant};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{io_err, LabError, Result};

pub const DEFAULT_SEEDS: [u64; 3] = [42, 123, 456];
pub const TABULAR_WIDTHS: [usize; 3] = [256, 128, 64];
pub const IMAGE_WIDTHS: [usize; 3] = [512, 256, 128];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub output_dir: PathBuf,
    pub seeds: Vec<u64>,
    pub architectures: Vec<Variant>,
    pub latent_dim: usize,
    pub hyper: Hyper,
    pub train: TrainConfig,
    pub interventions: InterventionConfig,
    pub probe: ProbeConfig,
    pub ablation: AblationConfig,
    pub stats: StatsConfig,
    /// Save a binary checkpoint next to every manifest.
    pub save_checkpoints: bool,
    pub datasets: Vec<DatasetConfig>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            output_dir: PathBuf::from("results"),
            seeds: DEFAULT_SEEDS.to_vec(),
            architectures: Variant::ALL.to_vec(),
            latent_dim: 10,
            hyper: Hyper::default(),
            train: TrainConfig::default(),
            interventions: InterventionConfig::default(),
            probe: ProbeConfig::default(),
            ablation: AblationConfig::default(),
            stats: StatsConfig::default(),
            save_checkpoints: true,
            datasets: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InterventionConfig {
    pub scales: Vec<f64>,
    pub sweep_points: usize,
    pub sweep_range: f64,
    pub sweep_center: SweepCenter,
    /// Held-out rows used for interventions, at most.
    pub eval_cap: usize,
    pub patch_pairs: usize,
    pub mediation_scale: f64,
}

impl Default for InterventionConfig {
    fn default() -> Self {
        Self {
            scales: DEFAULT_SCALES.to_vec(),
            sweep_points: DEFAULT_SWEEP_POINTS,
            sweep_range: DEFAULT_SWEEP_RANGE,
            sweep_center: SweepCenter::GlobalMean,
            eval_cap: 512,
            patch_pairs: 200,
            mediation_scale: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationConfig {
    pub enabled: bool,
    pub permutations: usize,
}

impl Default for AblationConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            permutations: 10,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CorrectionFamily {
    /// One family over every pairwise test.
    #[default]
    Global,
    /// A separate family per metric.
    PerMetric,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StatsConfig {
    pub alpha: f64,
    pub correction: CorrectionFamily,
}

impl Default for StatsConfig {
    fn default() -> Self {
        Self {
            alpha: 0.05,
            correction: CorrectionFamily::Global,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub name: String,
    /// Encoder hidden widths; defaults depend on the source's modality.
    #[serde(default)]
    pub encoder_widths: Option<Vec<usize>>,
    /// Seed for synthetic generation and row subsampling.
    #[serde(default = "default_data_seed")]
    pub data_seed: u64,
    pub source: DatasetSource,
}

fn default_data_seed() -> u64 {
    7
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSource {
    Csv {
        path: PathBuf,
        schema: PathBuf,
        /// Random subsample of complete rows, when set.
        #[serde(default)]
        max_rows: Option<usize>,
    },
    SyntheticTabular {
        #[serde(default)]
        spec: TabularSynthSpec,
    },
    Minisprites {
        #[serde(default)]
        spec: MiniSpritesSpec,
    },
}

impl DatasetConfig {
    pub fn widths(&self) -> Vec<usize> {
        if let Some(w) = &self.encoder_widths {
            return w.clone();
        }
        match self.source {
            DatasetSource::Minisprites { .. } => IMAGE_WIDTHS.to_vec(),
            _ => TABULAR_WIDTHS.to_vec(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| LabError::Config(format!("invalid config: {e}")))
    }

    /// Reads a config file. Relative dataset and schema paths are resolved
    /// against the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        let mut cfg: Self = toml::from_str(&text).map_err(|e| LabError::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        for d in &mut cfg.datasets {
            if let DatasetSource::Csv { path, schema, .. } = &mut d.source {
                if path.is_relative() {
                    *path = base.join(&*path);
                }
                if schema.is_relative() {
                    *schema = base.join(&*schema);
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.datasets.is_empty() || self.architectures.is_empty() || self.seeds.is_empty() {
            return Err(LabError::Config("the grid needs datasets, architectures and seeds".into()));
        }
        let mut seeds = self.seeds.clone();
        seeds.sort_unstable();
        seeds.dedup();
        if seeds.len() != self.seeds.len() {
            return Err(LabError::Config("seeds must be distinct".into()));
        }
        let mut names: Vec<&str> = self.datasets.iter().map(|d| d.name.as_str()).collect();
        names.sort_unstable();
        names.dedup();
        if names.len() != self.datasets.len() {
            return Err(LabError::Config("dataset names must be distinct".into()));
        }
        let mut archs = self.architectures.clone();
        archs.sort();
        archs.dedup();
        if archs.len() != self.architectures.len() {
            return Err(LabError::Config("architectures must be distinct".into()));
        }
        if self.latent_dim == 0 {
            return Err(LabError::Config("latent_dim must be positive".into()));
        }
        let iv = &self.interventions;
        if iv.scales.is_empty() || iv.sweep_points == 0 || iv.eval_cap < 2 || !(iv.sweep_range > 0.0) {
            return Err(LabError::Config("intervention settings out of range".into()));
        }
        self.train.validate()?;
        Ok(())
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serialises");
        hex(&Sha256::digest(json))
    }

    /// Same config with every seed replaced.
    pub fn with_seed_override(mut self, seed: u64) -> Self {
        self.seeds = vec![seed];
        self
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_protocol_defaults() {
        let cfg = ExperimentConfig::from_toml_str("").unwrap();
        assert_eq!(cfg.seeds, vec![42, 123, 456]);
        assert_eq!(cfg.architectures.len(), 5);
        assert_eq!(cfg.hyper.beta, 4.0);
        assert_eq!(cfg.train.max_epochs, 200);
        assert_eq!(cfg.interventions.sweep_points, 51);
        assert!(cfg.validate().is_err(), "no datasets");
    }

    #[test]
    fn architecture_names_parse() {
        let names: Vec<String> = Variant::ALL.iter().map(|v| format!("{:?}", v.name())).collect();
        let cfg = ExperimentConfig::from_toml_str(&format!("architectures = [{}]", names.join(", "))).unwrap();
        assert_eq!(cfg.architectures, Variant::ALL.to_vec());
    }

    #[test]
    fn parses_dataset_sources() {
        let cfg = ExperimentConfig::from_toml_str(
            r#"
            seeds = [1, 2]
            architectures = ["standard", "beta"]
            [train]
            max_epochs = 5
            [[datasets]]
            name = "synth"
            encoder_widths = [8, 4]
            source = { kind = "synthetic_tabular" }
            [[datasets]]
            name = "sprites"
            source = { kind = "minisprites", spec = { min_half_size = 3.0 } }
            [[datasets]]
            name = "adult"
            source = { kind = "csv", path = "adult.csv", schema = "adult.toml", max_rows = 100 }
            "#,
        )
        .unwrap();
        cfg.validate().unwrap();
        assert_eq!(cfg.train.max_epochs, 5);
        assert_eq!(cfg.train.batch_size, 256);
        assert_eq!(cfg.datasets[0].widths(), vec![8, 4]);
        assert_eq!(cfg.datasets[1].widths(), IMAGE_WIDTHS.to_vec());
        match &cfg.datasets[1].source {
            DatasetSource::Minisprites { spec } => {
                assert_eq!(spec.min_half_size, 3.0);
                assert_eq!(spec.side, 16);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn rejects_duplicate_seeds_and_unknown_keys() {
        let base = "[[datasets]]\nname = \"s\"\nsource = { kind = \"synthetic_tabular\" }\n";
        let dup = format!("seeds = [1, 1]\n{base}");
        assert!(ExperimentConfig::from_toml_str(&dup).unwrap().validate().is_err());
        assert!(ExperimentConfig::from_toml_str(&format!("colour = 1\n{base}")).is_err());
    }

    #[test]
    fn hash_tracks_content() {
        let a = ExperimentConfig::default();
        let mut b = a.clone();
        assert_eq!(a.hash(), b.hash());
        b.latent_dim = 3;
        assert_ne!(a.hash(), b.hash());
    }
}
