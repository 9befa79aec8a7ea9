use serde::{Deserialize, Serialize};

use super::{Method, TrainRun};

/// Cost summary of one run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunAccounting {
    pub method: Method,
    pub forward_passes: u64,
    /// Policy plus reference passes spent on training updates.
    pub training_passes: u64,
    pub policy_passes: u64,
    pub reference_passes: u64,
    pub validation_passes: u64,
    pub steps: u64,
    pub pairs_processed: u64,
    pub train_pairs: usize,
    /// Training pairs scored per policy forward pass.
    pub pairs_per_policy_forward: f64,
    pub clustering_s: f64,
    pub training_s: f64,
    pub total_s: f64,
}

impl From<&TrainRun> for RunAccounting {
    fn from(run: &TrainRun) -> Self {
        RunAccounting {
            method: run.method,
            forward_passes: run.passes.total(),
            training_passes: run.passes.policy + run.passes.reference,
            policy_passes: run.passes.policy,
            reference_passes: run.passes.reference,
            validation_passes: run.passes.validation,
            steps: run.steps,
            pairs_processed: run.pairs_processed,
            train_pairs: run.train_pair_count,
            pairs_per_policy_forward: ratio(run.pairs_processed as f64, run.passes.policy as f64),
            clustering_s: run.timings.clustering_s,
            training_s: run.timings.training_s,
            total_s: run.timings.total_s,
        }
    }
}

/// Baseline-over-g-DPO cost ratios.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AccountingReport {
    pub gdpo: RunAccounting,
    pub dpo: RunAccounting,
    pub speedup_forward_passes: f64,
    /// Same ratio with validation passes left out.
    pub speedup_training_passes: f64,
    pub speedup_training_time: f64,
    pub speedup_total_time: f64,
    /// Baseline training pairs over g-DPO training pairs.
    pub pair_reduction: f64,
}

pub fn accounting_report(gdpo: &TrainRun, dpo: &TrainRun) -> AccountingReport {
    let g = RunAccounting::from(gdpo);
    let d = RunAccounting::from(dpo);
    AccountingReport {
        speedup_forward_passes: ratio(d.forward_passes as f64, g.forward_passes as f64),
        speedup_training_passes: ratio(d.training_passes as f64, g.training_passes as f64),
        speedup_training_time: ratio(d.training_s, g.training_s),
        speedup_total_time: ratio(d.total_s, g.total_s),
        pair_reduction: ratio(d.train_pairs as f64, g.train_pairs as f64),
        gdpo: g,
        dpo: d,
    }
}

fn ratio(num: f64, den: f64) -> f64 {
    if den > 0.0 {
        num / den
    } else {
        f64::NAN
    }
}
