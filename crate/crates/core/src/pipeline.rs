//! End-to-end orchestration: holdout split, paired training, evaluation and sweeps.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{
    evaluate_run, generated_properties, ks_two_sample, rank_metrics, BeamConfig, Generated,
    KsResult, RankMetrics, RunEvaluation,
};
use crate::model::SequenceModel;
use crate::rng::{self, streams};
use crate::seqdata::{Dataset, GroundTruthScorer, PositionMask};
use crate::training::{
    accounting_report, pretrain_reference, AccountingReport, Method, ModelConfig, TrainConfig,
    TrainRun, Trainer,
};

/// Settings shared by compare and sweep runs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub train: TrainConfig,
    pub model: ModelConfig,
    pub beam: BeamConfig,
    /// Fraction of sequences withheld from training for rank evaluation.
    pub holdout_fraction: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            train: TrainConfig::default(),
            model: ModelConfig::default(),
            beam: BeamConfig::default(),
            holdout_fraction: 0.2,
        }
    }
}

/// Seeded split into `(train, holdout)`. The wild type always stays in training.
pub fn split_holdout(dataset: &Dataset, fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::config("holdout fraction must lie in (0, 1)"));
    }
    let wt = dataset.wild_type_id().and_then(|id| dataset.index_of(id));
    let mut candidates: Vec<usize> = (0..dataset.len()).filter(|&i| Some(i) != wt).collect();
    let n_hold = (candidates.len() as f64 * fraction).round() as usize;
    if n_hold < 2 || candidates.len() - n_hold < 2 {
        return Err(Error::input(format!(
            "{} sequences are too few for a {fraction} holdout split",
            dataset.len()
        )));
    }
    candidates.shuffle(&mut rng::stream(seed, streams::HOLDOUT));
    let mut holdout = candidates[..n_hold].to_vec();
    holdout.sort_unstable();
    let mut train: Vec<usize> = wt
        .into_iter()
        .chain(candidates[n_hold..].iter().copied())
        .collect();
    train.sort_unstable();
    Ok((dataset.subset(&train), dataset.subset(&holdout)))
}

/// Base sequence for generation: the wild type, else the consensus.
pub fn generation_base(dataset: &Dataset) -> Vec<crate::seqdata::Token> {
    dataset
        .wild_type()
        .map(|s| s.tokens.clone())
        .unwrap_or_else(|| dataset.consensus())
}

pub fn train_method(
    method: Method,
    train: &Dataset,
    reference: &SequenceModel,
    config: &TrainConfig,
) -> Result<TrainRun> {
    Trainer::new(train, reference, method, config)?.run()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReferenceEvaluation {
    pub ranks: RankMetrics,
    pub generated_fitness: Vec<f64>,
}

/// Side-by-side outcome of a paired compare run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompareReport {
    pub seed: u64,
    pub train_sequences: usize,
    pub holdout_sequences: usize,
    pub rho_ref: f64,
    pub rho_dpo: f64,
    pub rho_gdpo: f64,
    pub kendall_ref: f64,
    pub kendall_dpo: f64,
    pub kendall_gdpo: f64,
    pub speedup_forward_passes: f64,
    pub speedup_wall_clock: f64,
    pub pairs_per_policy_forward: f64,
    pub ks_gdpo_vs_dpo: KsResult,
    pub ks_gdpo_vs_ref: KsResult,
    pub ks_dpo_vs_ref: KsResult,
    pub accounting: AccountingReport,
    pub reference: ReferenceEvaluation,
    pub dpo: RunEvaluation,
    pub gdpo: RunEvaluation,
}

pub struct CompareOutcome {
    pub report: CompareReport,
    pub reference: SequenceModel,
    pub dpo: TrainRun,
    pub gdpo: TrainRun,
    pub generated: Vec<(Method, Vec<(Generated, f64)>)>,
}

/// Trains both methods from one reference and evaluates them on a shared holdout.
pub fn compare(
    dataset: &Dataset,
    scorer: &GroundTruthScorer,
    config: &PipelineConfig,
) -> Result<CompareOutcome> {
    let seed = config.train.seed;
    let (train, holdout) = split_holdout(dataset, config.holdout_fraction, seed)?;
    let reference = pretrain_reference(&train, &config.model, seed)?.clone_frozen();
    let gdpo = train_method(Method::Gdpo, &train, &reference, &config.train)?;
    let dpo = train_method(Method::Dpo, &train, &reference, &config.train)?;

    let base = generation_base(&train);
    let positions = train.mutated_positions();
    let ref_generated = generated_properties(&reference, &base, &positions, &config.beam, scorer)?;
    let ref_eval = ReferenceEvaluation {
        ranks: rank_metrics(&reference, &holdout)?,
        generated_fitness: ref_generated.iter().map(|(_, f)| *f).collect(),
    };
    let dpo_eval = evaluate_run(&dpo, &holdout, scorer, &base, &positions, &config.beam)?;
    let gdpo_eval = evaluate_run(&gdpo, &holdout, scorer, &base, &positions, &config.beam)?;
    let accounting = accounting_report(&gdpo, &dpo);
    let report = CompareReport {
        seed,
        train_sequences: train.len(),
        holdout_sequences: holdout.len(),
        rho_ref: ref_eval.ranks.spearman,
        rho_dpo: dpo_eval.ranks.spearman,
        rho_gdpo: gdpo_eval.ranks.spearman,
        kendall_ref: ref_eval.ranks.kendall,
        kendall_dpo: dpo_eval.ranks.kendall,
        kendall_gdpo: gdpo_eval.ranks.kendall,
        speedup_forward_passes: accounting.speedup_forward_passes,
        speedup_wall_clock: accounting.speedup_total_time,
        pairs_per_policy_forward: accounting.gdpo.pairs_per_policy_forward,
        ks_gdpo_vs_dpo: ks_two_sample(&gdpo_eval.generated_fitness, &dpo_eval.generated_fitness)?,
        ks_gdpo_vs_ref: ks_two_sample(&gdpo_eval.generated_fitness, &ref_eval.generated_fitness)?,
        ks_dpo_vs_ref: ks_two_sample(&dpo_eval.generated_fitness, &ref_eval.generated_fitness)?,
        accounting,
        reference: ref_eval,
        dpo: dpo_eval,
        gdpo: gdpo_eval,
    };
    let generated = vec![
        (
            Method::Gdpo,
            generated_for(&gdpo, &base, &positions, config, scorer)?,
        ),
        (
            Method::Dpo,
            generated_for(&dpo, &base, &positions, config, scorer)?,
        ),
    ];
    Ok(CompareOutcome {
        report,
        reference,
        dpo,
        gdpo,
        generated,
    })
}

fn generated_for(
    run: &TrainRun,
    base: &[crate::seqdata::Token],
    positions: &PositionMask,
    config: &PipelineConfig,
    scorer: &GroundTruthScorer,
) -> Result<Vec<(Generated, f64)>> {
    generated_properties(&run.policy, base, positions, &config.beam, scorer)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepParam {
    Tau,
    G,
}

impl std::str::FromStr for SweepParam {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tau" => Ok(SweepParam::Tau),
            "g" => Ok(SweepParam::G),
            other => Err(Error::config(format!("unknown sweep parameter `{other}`"))),
        }
    }
}

/// One g-DPO run of a sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub value: f64,
    pub rho: f64,
    pub tau_kendall: f64,
    /// Training pairs available after clustering and the validation split.
    pub pairs: usize,
    pub forward_passes: u64,
    pub steps_to_stop: u64,
}

pub fn sweep_config(base: &TrainConfig, param: SweepParam, value: f64) -> Result<TrainConfig> {
    let mut cfg = base.clone();
    match param {
        SweepParam::Tau => cfg.tau = value,
        SweepParam::G => {
            if value.fract() != 0.0 || value < 2.0 {
                return Err(Error::config(format!(
                    "group size must be an integer ≥ 2, got {value}"
                )));
            }
            cfg.g = value as usize;
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Trains g-DPO once per value from a shared split and reference.
pub fn sweep(
    dataset: &Dataset,
    config: &PipelineConfig,
    param: SweepParam,
    values: &[f64],
) -> Result<Vec<SweepRow>> {
    if values.is_empty() {
        return Err(Error::config("sweep needs at least one value"));
    }
    let seed = config.train.seed;
    let (train, holdout) = split_holdout(dataset, config.holdout_fraction, seed)?;
    let reference = pretrain_reference(&train, &config.model, seed)?.clone_frozen();
    values
        .iter()
        .map(|&v| {
            let cfg = sweep_config(&config.train, param, v)?;
            sweep_point(&train, &holdout, &reference, &cfg, v)
        })
        .collect()
}

pub fn sweep_point(
    train: &Dataset,
    holdout: &Dataset,
    reference: &SequenceModel,
    config: &TrainConfig,
    value: f64,
) -> Result<SweepRow> {
    let run = train_method(Method::Gdpo, train, reference, config)?;
    let ranks = rank_metrics(&run.policy, holdout)?;
    Ok(SweepRow {
        value,
        rho: ranks.spearman,
        tau_kendall: ranks.kendall,
        pairs: run.train_pair_count,
        forward_passes: run.forward_passes(),
        steps_to_stop: run.steps,
    })
}
