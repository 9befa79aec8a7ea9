//! DPO loss, trainers and run accounting.

mod accounting;
mod trainer;

use serde::{Deserialize, Serialize};

use crate::clustering::CoarseBucketing;
use crate::error::{Error, Result};
use crate::model::{CouplingGraph, PottsModel, PwmModel, SequenceModel};
use crate::preference::PreferencePair;
use crate::rng::{self, streams};
use crate::seqdata::Dataset;

pub use accounting::{accounting_report, AccountingReport, RunAccounting};
pub use trainer::{
    train_dpo_baseline, train_gdpo, Batch, BestCheckpoint, Method, MetricRecord, PassCounts,
    StopReason, Timings, TrainRun, Trainer, TrainerState,
};

/// Optimizer, grouping and early-stopping settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub beta: f64,
    pub learning_rate: f64,
    pub warmup_steps: u64,
    /// Preference pairs per optimizer step.
    pub batch_size: usize,
    /// Group size.
    pub g: usize,
    /// Union mask ratio threshold for clustering.
    pub tau: f64,
    /// Steps between validation checks.
    pub validation_interval: u64,
    /// Consecutive non-improving checks tolerated before stopping.
    pub patience: u32,
    /// Relative validation-loss improvement a check must exceed to count.
    pub min_rel_improvement: f64,
    pub max_steps: u64,
    pub seed: u64,
    /// Fraction of candidate pairs held out for validation.
    pub validation_fraction: f64,
    pub coarse_bucketing: Option<CoarseBucketing>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            beta: 0.04,
            learning_rate: 7e-4,
            warmup_steps: 300,
            batch_size: 64,
            g: 4,
            tau: 0.3,
            validation_interval: 250,
            patience: 3,
            min_rel_improvement: 0.01,
            max_steps: 100_000,
            seed: 0,
            validation_fraction: 0.1,
            coarse_bucketing: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let check = |ok: bool, msg: &str| if ok { Ok(()) } else { Err(Error::config(msg)) };
        check(
            self.beta > 0.0 && self.beta.is_finite(),
            "beta must be positive",
        )?;
        check(
            self.learning_rate > 0.0 && self.learning_rate.is_finite(),
            "learning rate must be positive",
        )?;
        check(self.batch_size >= 1, "batch size must be at least 1")?;
        check(self.g >= 2, "group size must be at least 2")?;
        check((0.0..=1.0).contains(&self.tau), "tau must lie in [0, 1]")?;
        check(
            self.validation_interval >= 1,
            "validation interval must be at least 1",
        )?;
        check(self.patience >= 1, "patience must be at least 1")?;
        check(
            self.min_rel_improvement >= 0.0,
            "min relative improvement must be non-negative",
        )?;
        check(self.max_steps >= 1, "max steps must be at least 1")?;
        check(
            self.validation_fraction > 0.0 && self.validation_fraction < 1.0,
            "validation fraction must lie in (0, 1)",
        )
    }

    /// `lr · min(1, (step + 1) / warmup_steps)` for the 0-based update index `step`.
    pub fn effective_lr(&self, step: u64) -> f64 {
        if self.warmup_steps == 0 {
            return self.learning_rate;
        }
        self.learning_rate * ((step + 1) as f64 / self.warmup_steps as f64).min(1.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Pwm,
    Potts,
}

/// How the reference model is built.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub kind: ModelKind,
    pub coupling: CouplingGraph,
    /// Standard deviation of the initial couplings.
    pub coupling_scale: f64,
    /// Additive pseudocount for the frequency fit.
    pub pseudocount: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            kind: ModelKind::Potts,
            coupling: CouplingGraph::Window(2),
            coupling_scale: 0.01,
            pseudocount: 1.0,
        }
    }
}

/// Unsupervised reference fit: per-position log-frequencies with pseudocounts
/// (labels unused). For Potts models these become the fields and couplings
/// keep their random initialization.
pub fn pretrain_reference(
    dataset: &Dataset,
    config: &ModelConfig,
    seed: u64,
) -> Result<SequenceModel> {
    if dataset.is_empty() {
        return Err(Error::input(
            "cannot fit a reference model to an empty dataset",
        ));
    }
    let pwm = PwmModel::fit_frequencies(dataset, config.pseudocount)?;
    Ok(match config.kind {
        ModelKind::Pwm => pwm.into(),
        ModelKind::Potts => {
            let mut rng = rng::stream(seed, streams::MODEL_INIT);
            let mut potts = PottsModel::random(
                dataset.length(),
                dataset.alphabet().size(),
                &config.coupling,
                config.coupling_scale,
                &mut rng,
            )?;
            potts.fields_mut().copy_from_slice(pwm.theta());
            potts.into()
        }
    })
}

/// Numerically stable logistic function.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `−log σ(x)`, stable for large `|x|`.
fn neg_log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        (-x).exp().ln_1p()
    } else {
        -x + x.exp().ln_1p()
    }
}

/// Bradley–Terry probability that the first item is preferred.
pub fn preference_prob(reward_w: f64, reward_l: f64) -> f64 {
    sigmoid(reward_w - reward_l)
}

/// Policy and reference log-likelihoods for one pair. The reference values
/// must come from the same mask as the policy values.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PairLikelihoods {
    pub pair: PreferencePair,
    pub policy_winner: f64,
    pub policy_loser: f64,
    pub reference_winner: f64,
    pub reference_loser: f64,
}

pub type LossBatch = Vec<PairLikelihoods>;

#[derive(Clone, Debug, PartialEq)]
pub struct LossOutput {
    /// Mean of `−log σ(β(Δ_w − Δ_l))`.
    pub loss: f64,
    /// Implicit rewards `(β Δ_w, β Δ_l)`.
    pub rewards: Vec<(f64, f64)>,
    /// `∂ loss / ∂ policy_winner`; the loser derivative is its negation.
    pub winner_grads: Vec<f64>,
}

pub fn dpo_loss(batch: &[PairLikelihoods], beta: f64) -> Result<LossOutput> {
    if batch.is_empty() {
        return Err(Error::Internal("empty loss batch".into()));
    }
    let n = batch.len() as f64;
    let mut total = 0.0;
    let mut rewards = Vec::with_capacity(batch.len());
    let mut winner_grads = Vec::with_capacity(batch.len());
    for item in batch {
        let values = [
            item.policy_winner,
            item.policy_loser,
            item.reference_winner,
            item.reference_loser,
        ];
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!(
                "non-finite likelihood for pair ({}, {})",
                item.pair.winner, item.pair.loser
            )));
        }
        let rw = beta * (item.policy_winner - item.reference_winner);
        let rl = beta * (item.policy_loser - item.reference_loser);
        let margin = rw - rl;
        total += neg_log_sigmoid(margin);
        rewards.push((rw, rl));
        winner_grads.push(-beta * sigmoid(-margin) / n);
    }
    Ok(LossOutput {
        loss: total / n,
        rewards,
        winner_grads,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn item(pw: f64, pl: f64, rw: f64, rl: f64) -> PairLikelihoods {
        PairLikelihoods {
            pair: PreferencePair {
                winner: 0,
                loser: 1,
            },
            policy_winner: pw,
            policy_loser: pl,
            reference_winner: rw,
            reference_loser: rl,
        }
    }

    #[test]
    fn preference_prob_examples() {
        assert_eq!(preference_prob(1.5, 1.5), 0.5);
        assert!((preference_prob(2.0, 1.0) - 0.7310585786300049).abs() < 1e-12);
        let mut last = 0.5;
        for d in [1.0, 10.0, 100.0, 1000.0] {
            let p = preference_prob(d, 0.0);
            assert!(p >= last && p <= 1.0);
            last = p;
        }
        assert_eq!(preference_prob(1e6, 0.0), 1.0);
        assert!(preference_prob(-1e6, 0.0) >= 0.0);
    }

    #[test]
    fn ln2_at_policy_equal_reference() {
        let batch = vec![item(-3.0, -4.0, -3.0, -4.0), item(-1.0, -1.0, -1.0, -1.0)];
        let out = dpo_loss(&batch, 0.04).unwrap();
        assert!((out.loss - std::f64::consts::LN_2).abs() < 1e-12);
        assert!(out
            .winner_grads
            .iter()
            .all(|&g| (g + 0.04 * 0.5 / 2.0).abs() < 1e-15));
    }

    #[test]
    fn hand_computed_loss() {
        // margins: β((πw−rw) − (πl−rl))
        let batch = vec![
            item(-2.0, -5.0, -3.0, -4.0), // (1) − (−1) = 2
            item(-6.0, -1.0, -5.0, -3.0), // (−1) − (2) = −3
            item(-0.5, -0.5, -1.0, -2.0), // 0.5 − 1.5 = −1
        ];
        let beta = 0.04;
        let expect = [2.0, -3.0, -1.0]
            .iter()
            .map(|d: &f64| (1.0 + (-beta * d).exp()).ln())
            .sum::<f64>()
            / 3.0;
        let out = dpo_loss(&batch, beta).unwrap();
        assert!((out.loss - expect).abs() < 1e-15);
        assert!(out.loss > 0.0);
    }

    #[test]
    fn doubling_beta_equals_doubled_margins() {
        let a = dpo_loss(&[item(-1.0, -3.0, -2.0, -2.5)], 0.2).unwrap();
        let b = dpo_loss(&[item(-1.0, -3.0, -2.0, -2.5)], 0.1).unwrap();
        let (rw, rl) = b.rewards[0];
        assert!((a.loss - neg_log_sigmoid(2.0 * (rw - rl))).abs() < 1e-15);
    }

    #[test]
    fn non_finite_is_numeric_error() {
        let err = dpo_loss(&[item(f64::NAN, 0.0, 0.0, 0.0)], 0.1).unwrap_err();
        assert!(matches!(err, Error::Numeric(_)));
    }

    #[test]
    fn warmup_schedule() {
        let c = TrainConfig::default();
        assert!((c.effective_lr(0) - 7e-4 / 300.0).abs() < 1e-18);
        assert_eq!(c.effective_lr(299), 7e-4);
        assert_eq!(c.effective_lr(10_000), 7e-4);
        let mut last = 0.0;
        for s in 0..300 {
            assert!(c.effective_lr(s) >= last);
            last = c.effective_lr(s);
        }
    }

    #[test]
    fn defaults_follow_published_protocol() {
        let c = TrainConfig::default();
        assert_eq!(
            (c.beta, c.learning_rate, c.warmup_steps, c.batch_size),
            (0.04, 7e-4, 300, 64)
        );
        assert_eq!(
            (c.g, c.tau, c.validation_interval, c.patience),
            (4, 0.3, 250, 3)
        );
        assert_eq!(c.min_rel_improvement, 0.01);
        c.validate().unwrap();
        assert!(TrainConfig {
            beta: 0.0,
            ..c.clone()
        }
        .validate()
        .is_err());
        assert!(TrainConfig {
            patience: 0,
            ..c.clone()
        }
        .validate()
        .is_err());
        assert!(TrainConfig { batch_size: 0, ..c }.validate().is_err());
    }
}
