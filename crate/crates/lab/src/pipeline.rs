//! Grid execution: one cell is a (dataset, architecture, seed) triple.
//!
//! Stage order inside a cell is fixed: train, Level 1, Level 2, Level 3,
//! Level 4, metrics, probe, ablation. A failing stage marks its cell failed
//! and the rest of the grid keeps going.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::Instant;

use circuitlab_core::checkpoint;
use circuitlab_core::data::{DatasetBundle, Partition};
use circuitlab_core::interventions::{
    calibrated_sweep, fixed_sweep, level1_scan, mean_profile, mediation_scan, patching_profiles,
    posterior_stats, PosteriorStats, SweepConfig, SweepEffects,
};
use circuitlab_core::metrics::{
    ablation_from_semantic, dci_completeness, mig, modularity, fgd, specificity_from_effects, MetricSet,
};
use circuitlab_core::probe::evaluate_probe;
use circuitlab_core::rng::SeededRng;
use circuitlab_core::tensor::Matrix;
use circuitlab_core::vae::{holdout_split, train, TrainConfig, TrainedModel, VaeArchitectureSpec, Variant, INIT_SCHEME};
use log::{info, warn};
use rayon::prelude::*;

use crate::config::{DatasetConfig, ExperimentConfig};
use crate::error::{io_err, LabError, Result};
use crate::ingest::{bundle_hash, load_dataset};
use crate::manifest::{
    ArchitectureInfo, DownstreamSummary, PatchingSummary, RunId, RunManifest, RunOutputs, RunStatus,
    TrainingSummary, SOFTWARE_VERSION,
};

const STREAM_EVAL_ROWS: u64 = 0x5e1;
const STREAM_PATCH: u64 = 0x5e2;
const STREAM_PROBE: u64 = 0x5e3;
const STREAM_ABLATION: u64 = 0x5e4;

/// A loaded dataset together with its settings.
#[derive(Debug, Clone)]
pub struct PreparedDataset {
    pub config: DatasetConfig,
    pub bundle: DatasetBundle,
    pub hash: String,
}

impl PreparedDataset {
    pub fn load(config: &DatasetConfig) -> Result<Self> {
        let bundle = load_dataset(config)?;
        let hash = bundle_hash(&bundle);
        Ok(Self {
            config: config.clone(),
            bundle,
            hash,
        })
    }
}

/// Stage failure inside a cell.
#[derive(Debug)]
pub struct StageError {
    pub stage: &'static str,
    pub error: LabError,
}

trait AtStage<T> {
    fn at(self, stage: &'static str) -> std::result::Result<T, StageError>;
}

impl<T, E: Into<LabError>> AtStage<T> for std::result::Result<T, E> {
    fn at(self, stage: &'static str) -> std::result::Result<T, StageError> {
        self.map_err(|e| StageError {
            stage,
            error: e.into(),
        })
    }
}

pub fn architecture_spec(cfg: &ExperimentConfig, data: &PreparedDataset, variant: Variant) -> VaeArchitectureSpec {
    VaeArchitectureSpec::new(variant, data.bundle.n_features(), data.config.widths(), cfg.latent_dim)
        .with_hyper(cfg.hyper)
}

pub fn train_config(cfg: &ExperimentConfig, seed: u64) -> TrainConfig {
    TrainConfig {
        seed,
        ..cfg.train.clone()
    }
}

/// Held-out rows of the training split, capped at `eval_cap`.
pub fn evaluation_rows(cfg: &ExperimentConfig, n_rows: usize, seed: u64) -> Vec<usize> {
    let (_, mut hold) = holdout_split(n_rows, cfg.train.holdout_fraction, seed);
    let cap = cfg.interventions.eval_cap;
    if hold.len() > cap {
        let mut rng = SeededRng::new(seed).derive(STREAM_EVAL_ROWS);
        rng.shuffle(&mut hold);
        hold.truncate(cap);
        hold.sort_unstable();
    }
    hold
}

pub fn sweep_config(cfg: &ExperimentConfig) -> SweepConfig {
    SweepConfig {
        n_points: cfg.interventions.sweep_points,
        range: cfg.interventions.sweep_range,
        center: cfg.interventions.sweep_center,
    }
}

/// Level-2 outputs that never look at the partition: posterior statistics,
/// the calibrated sweep and Specificity.
#[derive(Debug, Clone, PartialEq)]
pub struct CausalEffects {
    pub posterior: PosteriorStats,
    pub calibrated: SweepEffects,
    pub specificity: f64,
}

pub fn causal_effects(
    cfg: &ExperimentConfig,
    bundle: &DatasetBundle,
    model: &TrainedModel,
    seed: u64,
) -> circuitlab_core::Result<CausalEffects> {
    let x_eval = bundle.x.select_rows(&evaluation_rows(cfg, bundle.n_rows(), seed));
    let posterior = posterior_stats(model, &x_eval)?;
    let calibrated = calibrated_sweep(model, &x_eval, &posterior, &sweep_config(cfg))?;
    let specificity = specificity_from_effects(&calibrated.effects, &calibrated.ces)?;
    Ok(CausalEffects {
        posterior,
        calibrated,
        specificity,
    })
}

/// Runs every analysis stage on a trained model.
pub fn analyze_model(
    cfg: &ExperimentConfig,
    bundle: &DatasetBundle,
    model: &TrainedModel,
    seed: u64,
) -> std::result::Result<RunOutputs, StageError> {
    let iv = &cfg.interventions;
    let eval_rows = evaluation_rows(cfg, bundle.n_rows(), seed);
    let x_eval = bundle.x.select_rows(&eval_rows);
    let (train_rows, hold_rows) = holdout_split(bundle.n_rows(), cfg.train.holdout_fraction, seed);

    let importance = level1_scan(model, &x_eval, &bundle.partition, &bundle.sigma, &iv.scales).at("level1")?;

    let CausalEffects {
        posterior,
        calibrated,
        specificity,
    } = causal_effects(cfg, bundle, model, seed).at("level2")?;
    let fixed = fixed_sweep(model, &x_eval, &sweep_config(cfg)).at("level2")?;

    let patching = patching_stage(model, &x_eval, iv.patch_pairs, seed).at("level3")?;

    let mediation =
        mediation_scan(model, &x_eval, &bundle.partition, &bundle.sigma, iv.mediation_scale).at("level4")?;

    let ces_mean = calibrated.ces.iter().sum::<f64>() / calibrated.ces.len() as f64;
    let latents = model.encode_mean(&bundle.x).at("metrics")?;
    let dci = match bundle.factors {
        Some(_) => {
            let singles = Partition::singletons(bundle.n_features());
            let scan = level1_scan(model, &x_eval, &singles, &bundle.sigma, &iv.scales).at("metrics")?;
            Some(dci_completeness(&scan.r, &singles).at("metrics")?)
        }
        None => None,
    };
    let metrics = MetricSet {
        ces_mean,
        ces_per_dim: calibrated.ces.clone(),
        specificity,
        modularity: modularity(&importance.r).at("metrics")?,
        fgd: fgd(&importance.r).at("metrics")?,
        mig: mig(&latents, &bundle.factor_proxies()).at("metrics")?,
        dci_completeness: dci,
    };

    let downstream = match &bundle.labels {
        Some(labels) => {
            let mut rng = SeededRng::new(seed).derive(STREAM_PROBE);
            let r = evaluate_probe(&latents, labels, bundle.protected.as_deref(), &cfg.probe, &mut rng)
                .at("probe")?;
            Some(DownstreamSummary {
                accuracy: r.accuracy,
                auc: r.auc,
                robustness: r.robustness,
                dp_gap: r.dp_gap,
                probe_iterations: r.probe.iterations,
                probe_converged: r.probe.converged,
            })
        }
        None => None,
    };

    let ablation = if cfg.ablation.enabled {
        let mut rng = SeededRng::new(seed).derive(STREAM_ABLATION);
        Some(
            ablation_from_semantic(
                model,
                &x_eval,
                &bundle.partition,
                &bundle.sigma,
                &importance,
                cfg.ablation.permutations,
                &mut rng,
            )
            .at("ablation")?,
        )
    } else {
        None
    };

    Ok(RunOutputs {
        training: TrainingSummary {
            final_mse: model.final_mse,
            epochs_run: model.epochs_run,
            converged: model.converged,
            train_rows: train_rows.len(),
            holdout_rows: hold_rows.len(),
        },
        eval_rows: eval_rows.len(),
        group_names: bundle.partition.names.clone(),
        importance,
        posterior,
        ces_fixed_per_dim: fixed.ces,
        patching,
        mediation,
        metrics,
        downstream,
        ablation,
    })
}

fn patching_stage(
    model: &TrainedModel,
    x_eval: &Matrix,
    pairs: usize,
    seed: u64,
) -> circuitlab_core::Result<PatchingSummary> {
    let n = x_eval.rows();
    let mut rng = SeededRng::new(seed).derive(STREAM_PATCH);
    let (mut src, mut tgt) = (Vec::with_capacity(pairs), Vec::with_capacity(pairs));
    for _ in 0..pairs {
        src.push(rng.below(n));
        tgt.push(rng.below(n));
    }
    let profiles = patching_profiles(model, &x_eval.select_rows(&src), &x_eval.select_rows(&tgt))?;
    let max_telescoping_error = profiles
        .iter()
        .map(|p| {
            let total: f64 = p.direct.iter().sum();
            let c0 = p.compound.first().copied().unwrap_or(0.0);
            (total - c0).abs() / c0.max(1.0)
        })
        .fold(0.0, f64::max);
    let mean = mean_profile(&profiles).unwrap_or(circuitlab_core::interventions::PatchingProfile {
        compound: vec![0.0; model.hidden_layer_count()],
        direct: vec![0.0; model.hidden_layer_count()],
    });
    Ok(PatchingSummary {
        pairs: profiles.len(),
        mean_profile: mean,
        max_telescoping_error,
    })
}

/// Result of one cell: its manifest and, when training succeeded, the model.
#[derive(Debug, Clone)]
pub struct CellOutcome {
    pub manifest: RunManifest,
    pub model: Option<TrainedModel>,
}

/// Trains and analyses one cell. Never panics; failures land in the manifest.
pub fn run_cell(cfg: &ExperimentConfig, config_hash: &str, data: &PreparedDataset, variant: Variant, seed: u64) -> CellOutcome {
    let run_id = RunId {
        dataset: data.config.name.clone(),
        architecture: variant,
        seed,
    };
    let start = Instant::now();
    let attempt = catch_unwind(AssertUnwindSafe(|| -> std::result::Result<_, StageError> {
        let spec = architecture_spec(cfg, data, variant);
        let model = train(&spec, &data.bundle.x, &train_config(cfg, seed)).at("train")?;
        if !model.final_mse.is_finite() {
            return Err(StageError {
                stage: "train",
                error: LabError::Config("training diverged".into()),
            });
        }
        let outputs = analyze_model(cfg, &data.bundle, &model, seed)?;
        Ok((model, outputs))
    }));
    let mut manifest = RunManifest::failed(run_id.clone(), config_hash, "", String::new());
    manifest.domain = Some(data.bundle.domain);
    manifest.dataset_hash = Some(data.hash.clone());
    manifest.warnings = data.bundle.warnings.clone();
    let spec = architecture_spec(cfg, data, variant);
    manifest.architecture = Some(ArchitectureInfo {
        input_dim: spec.input_dim,
        encoder_widths: spec.encoder_widths.clone(),
        latent_dim: spec.latent_dim,
        hyper: spec.hyper,
        init_scheme: INIT_SCHEME.to_string(),
    });
    let model = match attempt {
        Ok(Ok((model, outputs))) => {
            if !outputs.metrics.in_bounds() {
                manifest.warnings.push("metric outside its theoretical range".into());
            }
            if outputs.mediation.nis > 0.0 {
                manifest.warnings.push(format!("NIS = {}", outputs.mediation.nis));
            }
            manifest.status = RunStatus::Completed;
            manifest.outputs = Some(outputs);
            info!("{run_id}: done");
            Some(model)
        }
        Ok(Err(e)) => {
            warn!("{run_id}: stage {} failed: {}", e.stage, e.error);
            manifest.status = RunStatus::Failed {
                stage: e.stage.to_string(),
                message: e.error.to_string(),
            };
            None
        }
        Err(panic) => {
            let message = panic
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            warn!("{run_id}: panicked: {message}");
            manifest.status = RunStatus::Failed {
                stage: "panic".into(),
                message,
            };
            None
        }
    };
    manifest.software_version = SOFTWARE_VERSION.to_string();
    manifest.wall_clock_secs = start.elapsed().as_secs_f64();
    CellOutcome { manifest, model }
}

/// Every (dataset, architecture, seed) cell in grid order.
pub fn grid_cells(cfg: &ExperimentConfig) -> Vec<(usize, Variant, u64)> {
    let mut cells = Vec::new();
    for d in 0..cfg.datasets.len() {
        for &a in &cfg.architectures {
            for &s in &cfg.seeds {
                cells.push((d, a, s));
            }
        }
    }
    cells
}

/// Runs the whole grid on `jobs` worker threads (0 means all cores).
///
/// Results come back in grid order whatever the thread count. When `out` is
/// given, manifests, per-run CSVs and checkpoints are written as cells finish.
pub fn run_grid(cfg: &ExperimentConfig, jobs: usize, out: Option<&Path>) -> Result<Vec<RunManifest>> {
    cfg.validate()?;
    let config_hash = cfg.hash();
    let datasets: Vec<std::result::Result<PreparedDataset, String>> = cfg
        .datasets
        .iter()
        .map(|d| {
            PreparedDataset::load(d).map_err(|e| {
                warn!("dataset {}: {e}", d.name);
                e.to_string()
            })
        })
        .collect();
    if let Some(dir) = out {
        crate::report::prepare_run_dirs(dir)?;
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| LabError::Config(format!("thread pool: {e}")))?;
    let cells = grid_cells(cfg);
    let results: Vec<Result<RunManifest>> = pool.install(|| {
        cells
            .par_iter()
            .map(|&(d, variant, seed)| {
                let manifest_and_model = match &datasets[d] {
                    Ok(data) => run_cell(cfg, &config_hash, data, variant, seed),
                    Err(msg) => CellOutcome {
                        manifest: RunManifest::failed(
                            RunId {
                                dataset: cfg.datasets[d].name.clone(),
                                architecture: variant,
                                seed,
                            },
                            &config_hash,
                            "ingest",
                            msg.clone(),
                        ),
                        model: None,
                    },
                };
                let CellOutcome { mut manifest, model } = manifest_and_model;
                if let Some(dir) = out {
                    if let (true, Some(model)) = (cfg.save_checkpoints, &model) {
                        let rel = format!("checkpoints/{}.vaec", manifest.run_id.slug());
                        let path = dir.join(&rel);
                        std::fs::write(&path, checkpoint::to_bytes(model)).map_err(io_err(&path))?;
                        manifest.checkpoint = Some(rel);
                    }
                    crate::report::write_run_files(dir, &manifest)?;
                }
                Ok(manifest)
            })
            .collect()
    });
    results.into_iter().collect()
}
