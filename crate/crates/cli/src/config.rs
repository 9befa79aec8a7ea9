//! Config file loading and flag overrides. Flags win over the file.

use std::path::{Path, PathBuf};

use clap::Args;
use gdpo::model::CouplingGraph;
use gdpo::pipeline::PipelineConfig;
use gdpo::training::ModelKind;

use crate::error::{CliError, CliResult};

#[derive(Args, Clone, Debug, Default)]
pub struct TrainFlags {
    /// TOML file with `[train]`, `[model]` and `[beam]` tables.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long, visible_alias = "lr")]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub warmup_steps: Option<u64>,
    /// Preference pairs per optimizer step.
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Group size.
    #[arg(long)]
    pub g: Option<usize>,
    /// Union mask ratio threshold.
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long)]
    pub validation_interval: Option<u64>,
    #[arg(long)]
    pub patience: Option<u32>,
    #[arg(long)]
    pub min_rel_improvement: Option<f64>,
    #[arg(long)]
    pub max_steps: Option<u64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub validation_fraction: Option<f64>,
    /// `pwm` or `potts`.
    #[arg(long)]
    pub model: Option<String>,
    /// Potts coupling window (positions apart).
    #[arg(long)]
    pub coupling_window: Option<usize>,
    #[arg(long)]
    pub holdout_fraction: Option<f64>,
    #[arg(long)]
    pub beam_width: Option<usize>,
}

pub fn load_file(path: &Path) -> CliResult<PipelineConfig> {
    let text = std::fs::read_to_string(path)?;
    toml::from_str(&text)
        .map_err(|e| CliError::Usage(format!("invalid config file {}: {e}", path.display())))
}

impl TrainFlags {
    pub fn resolve(&self) -> CliResult<PipelineConfig> {
        let mut cfg = match &self.config {
            Some(p) => load_file(p)?,
            None => PipelineConfig::default(),
        };
        let t = &mut cfg.train;
        macro_rules! set {
            ($($field:ident => $target:expr),* $(,)?) => {
                $(if let Some(v) = self.$field.clone() { $target = v; })*
            };
        }
        set!(
            beta => t.beta,
            learning_rate => t.learning_rate,
            warmup_steps => t.warmup_steps,
            batch_size => t.batch_size,
            g => t.g,
            tau => t.tau,
            validation_interval => t.validation_interval,
            patience => t.patience,
            min_rel_improvement => t.min_rel_improvement,
            max_steps => t.max_steps,
            seed => t.seed,
            validation_fraction => t.validation_fraction,
            holdout_fraction => cfg.holdout_fraction,
        );
        if let Some(kind) = &self.model {
            cfg.model.kind = match kind.as_str() {
                "pwm" => ModelKind::Pwm,
                "potts" => ModelKind::Potts,
                other => return Err(CliError::Usage(format!("unknown model `{other}`"))),
            };
        }
        if let Some(w) = self.coupling_window {
            cfg.model.coupling = CouplingGraph::Window(w);
        }
        if let Some(w) = self.beam_width {
            cfg.beam.beam_width = w;
            cfg.beam.max_variants = w;
        }
        cfg.train.validate()?;
        Ok(cfg)
    }
}

pub fn to_toml(cfg: &PipelineConfig) -> String {
    toml::to_string_pretty(cfg).expect("pipeline config serializes to TOML")
}
