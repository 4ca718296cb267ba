use circuitlab::config::ExperimentConfig;

/// A grid small enough to train in well under a second per cell.
pub fn tiny_config(extra_datasets: &str) -> ExperimentConfig {
    ExperimentConfig::from_toml_str(&format!(
        r#"
        seeds = [1]
        architectures = ["standard"]
        latent_dim = 2
        save_checkpoints = true
        [train]
        max_epochs = 3
        batch_size = 32
        [interventions]
        eval_cap = 16
        patch_pairs = 10
        [ablation]
        permutations = 2
        [[datasets]]
        name = "tiny"
        encoder_widths = [6, 4]
        source = {{ kind = "synthetic_tabular", spec = {{ n_rows = 120 }} }}
        {extra_datasets}
        "#
    ))
    .unwrap()
}
