use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{dpo_loss, PairLikelihoods, TrainConfig};
use crate::clustering::{self, cluster_stats, Cluster, ClusterStats, ClusteringConfig};
use crate::error::{Error, Result};
use crate::model::{ForwardCounter, SequenceModel};
use crate::preference::{
    accumulate_group_grad, evaluate_group, exhaustive_pairs, group_pairs, sample_groups_epoch,
    Group, PreferencePair,
};
use crate::rng::{self, streams, Rng};
use crate::seqdata::Dataset;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    /// Exhaustive pairs scored by full pseudo-log-likelihood.
    Dpo,
    /// Clustered, group-amortized pairs.
    Gdpo,
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Method::Dpo => "dpo",
            Method::Gdpo => "gdpo",
        })
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dpo" => Ok(Method::Dpo),
            "gdpo" | "g-dpo" => Ok(Method::Gdpo),
            other => Err(Error::config(format!("unknown method `{other}`"))),
        }
    }
}

/// One validation check.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub step: u64,
    /// Mean training batch loss since the previous check.
    pub train_loss: Option<f64>,
    pub val_loss: f64,
    pub forward_passes: u64,
    pub elapsed_s: f64,
}

/// Forward passes by purpose.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PassCounts {
    pub policy: u64,
    pub reference: u64,
    pub validation: u64,
}

impl PassCounts {
    pub fn total(&self) -> u64 {
        self.policy + self.reference + self.validation
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub clustering_s: f64,
    pub training_s: f64,
    pub total_s: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BestCheckpoint {
    pub step: u64,
    pub val_loss: f64,
    pub params: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopReason {
    EarlyStopped,
    MaxSteps,
}

/// Work for one optimizer step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Batch {
    /// Member lists of groups; every non-held-out pair inside them is used.
    Groups(Vec<Vec<usize>>),
    Pairs(Vec<PreferencePair>),
}

/// Everything needed to continue a run bit-for-bit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainerState {
    pub method: Method,
    pub config: TrainConfig,
    pub params: Vec<f64>,
    pub step: u64,
    pub epoch: u64,
    pub rng: Rng,
    /// Cluster member lists (g-DPO only).
    pub clusters: Vec<Vec<usize>>,
    pub cluster_stats: Option<ClusterStats>,
    /// Pairs available for training after the validation split.
    pub train_pair_count: usize,
    /// Exhaustive baseline only; g-DPO draws its pairs from groups.
    pub train_pairs: Vec<PreferencePair>,
    pub val_pairs: Vec<PreferencePair>,
    pub pending: Vec<Batch>,
    pub cursor: usize,
    pub passes: PassCounts,
    pub pairs_processed: u64,
    pub history: Vec<MetricRecord>,
    pub best: BestCheckpoint,
    /// Validation loss at the last qualifying improvement.
    pub improvement_ref: f64,
    pub stale_checks: u32,
    pub loss_sum: f64,
    pub loss_steps: u64,
    pub stopped: Option<StopReason>,
    pub timings: Timings,
    /// Reference likelihoods keyed by group members.
    pub reference_groups: Vec<(Vec<usize>, Vec<(usize, f64)>)>,
    pub reference_pll: Vec<(usize, f64)>,
    /// Policy PLLs valid for the current parameters.
    pub policy_pll: Vec<(usize, f64)>,
}

/// Result of a finished run. `policy` holds the best checkpoint.
#[derive(Clone, Debug)]
pub struct TrainRun {
    pub method: Method,
    pub config: TrainConfig,
    pub policy: SequenceModel,
    pub reference: SequenceModel,
    pub steps: u64,
    pub epochs: u64,
    pub passes: PassCounts,
    pub pairs_processed: u64,
    pub train_pair_count: usize,
    pub val_pair_count: usize,
    pub history: Vec<MetricRecord>,
    pub best_step: u64,
    pub best_val_loss: f64,
    pub stop_reason: StopReason,
    pub timings: Timings,
    pub cluster_stats: Option<ClusterStats>,
}

impl TrainRun {
    pub fn forward_passes(&self) -> u64 {
        self.passes.total()
    }
}

/// Drives one training run step by step.
pub struct Trainer<'a> {
    dataset: &'a Dataset,
    reference: SequenceModel,
    policy: SequenceModel,
    state: TrainerState,
    clusters: Vec<Cluster>,
    held_out: HashSet<(usize, usize)>,
    reference_groups: HashMap<Vec<usize>, Vec<(usize, f64)>>,
    reference_pll: HashMap<usize, f64>,
    policy_pll: HashMap<usize, f64>,
    policy_counter: ForwardCounter,
    reference_counter: ForwardCounter,
    validation_counter: ForwardCounter,
    group_log: Option<Vec<(u64, Vec<Group>)>>,
}

pub fn train_gdpo(
    dataset: &Dataset,
    reference: &SequenceModel,
    config: &TrainConfig,
) -> Result<TrainRun> {
    Trainer::new(dataset, reference, Method::Gdpo, config)?.run()
}

pub fn train_dpo_baseline(
    dataset: &Dataset,
    reference: &SequenceModel,
    config: &TrainConfig,
) -> Result<TrainRun> {
    Trainer::new(dataset, reference, Method::Dpo, config)?.run()
}

impl<'a> Trainer<'a> {
    /// Splits pairs, clusters (g-DPO), and runs the step-0 validation check.
    pub fn new(
        dataset: &'a Dataset,
        reference: &SequenceModel,
        method: Method,
        config: &TrainConfig,
    ) -> Result<Self> {
        config.validate()?;
        check_model(dataset, reference)?;
        let started = Instant::now();
        let mut timings = Timings::default();
        let (clusters, candidates) = match method {
            Method::Gdpo => {
                let t = Instant::now();
                let ccfg = ClusteringConfig {
                    tau: config.tau,
                    coarse_bucketing: config.coarse_bucketing.clone(),
                };
                let clusters = clustering::cluster(dataset, &ccfg)?;
                timings.clustering_s = t.elapsed().as_secs_f64();
                let mut pairs = Vec::new();
                for c in &clusters {
                    let group = Group::new(dataset, 0, c.members().to_vec())?;
                    pairs.extend(group_pairs(&group, dataset)?);
                }
                if pairs.is_empty() {
                    return Err(Error::config(format!(
                        "clustering with tau = {} left no within-cluster preference pairs; \
                         increase tau",
                        config.tau
                    )));
                }
                (clusters, pairs)
            }
            Method::Dpo => {
                let pairs = exhaustive_pairs(dataset)?;
                if pairs.is_empty() {
                    return Err(Error::config("dataset has no label-distinct pairs"));
                }
                (Vec::new(), pairs)
            }
        };
        if candidates.len() < 2 {
            return Err(Error::config(
                "need at least two preference pairs to hold out a validation split",
            ));
        }
        let mut split_rng = rng::stream(config.seed, streams::SPLIT);
        let mut shuffled = candidates;
        shuffled.shuffle(&mut split_rng);
        let n_val = ((shuffled.len() as f64 * config.validation_fraction).round() as usize)
            .clamp(1, shuffled.len() - 1);
        let mut val_pairs = shuffled[..n_val].to_vec();
        val_pairs.sort_unstable();
        let mut train_pairs = shuffled[n_val..].to_vec();
        train_pairs.sort_unstable();
        let epoch_stream = match method {
            Method::Gdpo => streams::GROUPS,
            Method::Dpo => streams::SHUFFLE,
        };

        let state = TrainerState {
            method,
            config: config.clone(),
            params: reference.params().to_vec(),
            step: 0,
            epoch: 0,
            rng: rng::stream(config.seed, epoch_stream),
            clusters: clusters.iter().map(|c| c.members().to_vec()).collect(),
            cluster_stats: (method == Method::Gdpo).then(|| cluster_stats(&clusters)),
            train_pair_count: train_pairs.len(),
            train_pairs: if method == Method::Dpo {
                train_pairs
            } else {
                Vec::new()
            },
            val_pairs,
            pending: Vec::new(),
            cursor: 0,
            passes: PassCounts::default(),
            pairs_processed: 0,
            history: Vec::new(),
            best: BestCheckpoint {
                step: 0,
                val_loss: f64::INFINITY,
                params: Vec::new(),
            },
            improvement_ref: f64::INFINITY,
            stale_checks: 0,
            loss_sum: 0.0,
            loss_steps: 0,
            stopped: None,
            timings,
            reference_groups: Vec::new(),
            reference_pll: Vec::new(),
            policy_pll: Vec::new(),
        };
        let mut trainer = Self::from_state(dataset, reference, state, clusters)?;
        let t = Instant::now();
        trainer.validate_and_check(t)?;
        trainer.state.timings.training_s += t.elapsed().as_secs_f64();
        trainer.state.timings.total_s = started.elapsed().as_secs_f64();
        Ok(trainer)
    }

    /// Continues from a snapshot taken with [`Self::snapshot`].
    pub fn resume(
        dataset: &'a Dataset,
        reference: &SequenceModel,
        state: TrainerState,
    ) -> Result<Self> {
        check_model(dataset, reference)?;
        let clusters = state
            .clusters
            .iter()
            .map(|m| Cluster::from_members(dataset, m.clone()))
            .collect::<Result<Vec<_>>>()?;
        Self::from_state(dataset, reference, state, clusters)
    }

    fn from_state(
        dataset: &'a Dataset,
        reference: &SequenceModel,
        state: TrainerState,
        clusters: Vec<Cluster>,
    ) -> Result<Self> {
        let mut policy = reference.clone_trainable();
        policy.set_params(&state.params)?;
        Ok(Trainer {
            dataset,
            reference: reference.clone_frozen(),
            policy,
            held_out: state.val_pairs.iter().map(PreferencePair::key).collect(),
            reference_groups: state.reference_groups.iter().cloned().collect(),
            reference_pll: state.reference_pll.iter().copied().collect(),
            policy_pll: state.policy_pll.iter().copied().collect(),
            policy_counter: ForwardCounter::starting_at(state.passes.policy),
            reference_counter: ForwardCounter::starting_at(state.passes.reference),
            validation_counter: ForwardCounter::starting_at(state.passes.validation),
            group_log: None,
            clusters,
            state,
        })
    }

    /// Keeps every sampled epoch of groups for an audit manifest.
    pub fn record_groups(&mut self) {
        self.group_log.get_or_insert_with(Vec::new);
    }

    pub fn group_log(&self) -> &[(u64, Vec<Group>)] {
        self.group_log.as_deref().unwrap_or(&[])
    }

    /// Removes and returns the epochs recorded so far.
    pub fn take_group_log(&mut self) -> Vec<(u64, Vec<Group>)> {
        self.group_log
            .as_mut()
            .map(std::mem::take)
            .unwrap_or_default()
    }

    pub fn step_count(&self) -> u64 {
        self.state.step
    }

    pub fn history(&self) -> &[MetricRecord] {
        &self.state.history
    }

    pub fn is_finished(&self) -> bool {
        self.state.stopped.is_some()
    }

    pub fn passes(&self) -> PassCounts {
        PassCounts {
            policy: self.policy_counter.get(),
            reference: self.reference_counter.get(),
            validation: self.validation_counter.get(),
        }
    }

    pub fn snapshot(&self) -> TrainerState {
        let mut state = self.state.clone();
        state.params = self.policy.params().to_vec();
        state.passes = self.passes();
        let mut groups: Vec<_> = self
            .reference_groups
            .iter()
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect();
        groups.sort_unstable_by(|a, b| a.0.cmp(&b.0));
        state.reference_groups = groups;
        state.reference_pll = sorted_entries(&self.reference_pll);
        state.policy_pll = sorted_entries(&self.policy_pll);
        state
    }

    /// Runs to completion.
    pub fn run(mut self) -> Result<TrainRun> {
        while self.step()? {}
        self.finish()
    }

    /// Runs until the current epoch's batches are used up, starting a new
    /// epoch first if none is in progress. Returns whether training continues.
    pub fn run_epoch(&mut self) -> Result<bool> {
        loop {
            if !self.step()? {
                return Ok(false);
            }
            if self.state.cursor >= self.state.pending.len() {
                return Ok(true);
            }
        }
    }

    pub fn epoch(&self) -> u64 {
        self.state.epoch
    }

    /// Runs at most `steps` more optimizer steps; returns whether training continues.
    pub fn run_for(&mut self, steps: u64) -> Result<bool> {
        for _ in 0..steps {
            if !self.step()? {
                return Ok(false);
            }
        }
        Ok(!self.is_finished())
    }

    /// One optimizer step, plus a validation check when due. Returns `false`
    /// once training has stopped.
    pub fn step(&mut self) -> Result<bool> {
        if self.state.stopped.is_some() {
            return Ok(false);
        }
        let t = Instant::now();
        if self.state.cursor >= self.state.pending.len() {
            self.start_epoch()?;
        }
        let batch = self.state.pending[self.state.cursor].clone();
        self.state.cursor += 1;
        let lr = self.state.config.effective_lr(self.state.step);
        let loss = match &batch {
            Batch::Groups(groups) => self.gdpo_update(groups, lr)?,
            Batch::Pairs(pairs) => self.dpo_update(pairs, lr)?,
        };
        self.policy_pll.clear();
        self.state.loss_sum += loss;
        self.state.loss_steps += 1;
        self.state.step += 1;
        let step = self.state.step;
        if step.is_multiple_of(self.state.config.validation_interval)
            || step >= self.state.config.max_steps
        {
            self.validate_and_check(t)?;
        }
        if self.state.stopped.is_none() && step >= self.state.config.max_steps {
            self.state.stopped = Some(StopReason::MaxSteps);
        }
        let dt = t.elapsed().as_secs_f64();
        self.state.timings.training_s += dt;
        self.state.timings.total_s += dt;
        Ok(self.state.stopped.is_none())
    }

    pub fn finish(self) -> Result<TrainRun> {
        let state = self.snapshot();
        let mut policy = self.policy;
        policy.set_params(&state.best.params)?;
        Ok(TrainRun {
            method: state.method,
            config: state.config,
            policy,
            reference: self.reference,
            steps: state.step,
            epochs: state.epoch,
            passes: state.passes,
            pairs_processed: state.pairs_processed,
            train_pair_count: state.train_pair_count,
            val_pair_count: state.val_pairs.len(),
            history: state.history,
            best_step: state.best.step,
            best_val_loss: state.best.val_loss,
            stop_reason: state.stopped.unwrap_or(StopReason::MaxSteps),
            timings: state.timings,
            cluster_stats: state.cluster_stats,
        })
    }

    fn start_epoch(&mut self) -> Result<()> {
        let cfg = &self.state.config;
        let mut batches = Vec::new();
        match self.state.method {
            Method::Gdpo => {
                let mut groups =
                    sample_groups_epoch(self.dataset, &self.clusters, cfg.g, &mut self.state.rng)?;
                groups.shuffle(&mut self.state.rng);
                let mut current = Vec::new();
                let mut count = 0;
                for group in &groups {
                    let usable = group_pairs(group, self.dataset)?
                        .iter()
                        .filter(|p| !self.held_out.contains(&p.key()))
                        .count();
                    if usable == 0 {
                        continue;
                    }
                    current.push(group.members.clone());
                    count += usable;
                    if count >= cfg.batch_size {
                        batches.push(Batch::Groups(std::mem::take(&mut current)));
                        count = 0;
                    }
                }
                if !current.is_empty() {
                    batches.push(Batch::Groups(current));
                }
                if let Some(log) = &mut self.group_log {
                    log.push((self.state.epoch, groups));
                }
            }
            Method::Dpo => {
                let mut pairs = self.state.train_pairs.clone();
                pairs.shuffle(&mut self.state.rng);
                batches.extend(
                    pairs
                        .chunks(cfg.batch_size)
                        .map(|c| Batch::Pairs(c.to_vec())),
                );
            }
        }
        if batches.is_empty() {
            return Err(Error::config(
                "an epoch produced no training pairs; increase tau or the dataset size",
            ));
        }
        self.state.pending = batches;
        self.state.cursor = 0;
        self.state.epoch += 1;
        Ok(())
    }

    /// Cache misses are charged to `counter`'s phase: reference passes while
    /// training, validation passes while validating.
    fn reference_group(&mut self, group: &Group, counter: Counter) -> Result<Vec<(usize, f64)>> {
        if let Some(v) = self.reference_groups.get(&group.members) {
            return Ok(v.clone());
        }
        let counter = match counter {
            Counter::Policy => &self.reference_counter,
            Counter::Validation => &self.validation_counter,
        };
        let ll = evaluate_group(&self.reference, counter, group, self.dataset)?;
        let values = ll.likelihoods.values;
        self.reference_groups
            .insert(group.members.clone(), values.clone());
        Ok(values)
    }

    fn reference_pll(&mut self, seq: usize, counter: Counter) -> f64 {
        if let Some(&v) = self.reference_pll.get(&seq) {
            return v;
        }
        let counter = match counter {
            Counter::Policy => &self.reference_counter,
            Counter::Validation => &self.validation_counter,
        };
        let v = self.reference.pll(&self.dataset.get(seq).tokens, counter);
        self.reference_pll.insert(seq, v);
        v
    }

    fn policy_pll(&mut self, seq: usize, counter: Counter) -> f64 {
        if let Some(&v) = self.policy_pll.get(&seq) {
            return v;
        }
        let counter = match counter {
            Counter::Policy => &self.policy_counter,
            Counter::Validation => &self.validation_counter,
        };
        let v = self.policy.pll(&self.dataset.get(seq).tokens, counter);
        self.policy_pll.insert(seq, v);
        v
    }

    fn gdpo_update(&mut self, groups: &[Vec<usize>], lr: f64) -> Result<f64> {
        let mut items = Vec::new();
        let mut evals = Vec::new();
        for members in groups {
            let group = Group::new(self.dataset, 0, members.clone())?;
            let pairs: Vec<_> = group_pairs(&group, self.dataset)?
                .into_iter()
                .filter(|p| !self.held_out.contains(&p.key()))
                .collect();
            if pairs.is_empty() {
                continue;
            }
            let eval = evaluate_group(&self.policy, &self.policy_counter, &group, self.dataset)?;
            let reference = self.reference_group(&group, Counter::Policy)?;
            let start = items.len();
            for pair in pairs {
                items.push(PairLikelihoods {
                    pair,
                    policy_winner: member_value(&eval.likelihoods.values, pair.winner)?,
                    policy_loser: member_value(&eval.likelihoods.values, pair.loser)?,
                    reference_winner: member_value(&reference, pair.winner)?,
                    reference_loser: member_value(&reference, pair.loser)?,
                });
            }
            evals.push((eval, start..items.len()));
        }
        let out = dpo_loss(&items, self.state.config.beta)?;
        let mut grad = self.policy.zero_grad();
        for (eval, range) in &evals {
            let mut weights = BTreeMap::new();
            for k in range.clone() {
                let pair = items[k].pair;
                *weights.entry(pair.winner).or_insert(0.0) += out.winner_grads[k];
                *weights.entry(pair.loser).or_insert(0.0) -= out.winner_grads[k];
            }
            let weights: Vec<(usize, f64)> = weights.into_iter().collect();
            accumulate_group_grad(&self.policy, eval, self.dataset, &weights, &mut grad)?;
        }
        self.policy.sgd_step(&grad, lr)?;
        self.state.pairs_processed += items.len() as u64;
        Ok(out.loss)
    }

    fn dpo_update(&mut self, pairs: &[PreferencePair], lr: f64) -> Result<f64> {
        let items = self.pll_items(pairs, Counter::Policy)?;
        let out = dpo_loss(&items, self.state.config.beta)?;
        let mut weights = BTreeMap::new();
        for (item, g) in items.iter().zip(&out.winner_grads) {
            *weights.entry(item.pair.winner).or_insert(0.0) += g;
            *weights.entry(item.pair.loser).or_insert(0.0) -= g;
        }
        let mut grad = self.policy.zero_grad();
        for (seq, w) in weights {
            self.policy
                .accumulate_pll_grad(&self.dataset.get(seq).tokens, w, &mut grad);
        }
        self.policy.sgd_step(&grad, lr)?;
        self.state.pairs_processed += items.len() as u64;
        Ok(out.loss)
    }

    fn pll_items(
        &mut self,
        pairs: &[PreferencePair],
        counter: Counter,
    ) -> Result<Vec<PairLikelihoods>> {
        let seqs: BTreeSet<usize> = pairs.iter().flat_map(|p| [p.winner, p.loser]).collect();
        let mut policy = HashMap::new();
        let mut reference = HashMap::new();
        for &s in &seqs {
            policy.insert(s, self.policy_pll(s, counter));
            reference.insert(s, self.reference_pll(s, counter));
        }
        Ok(pairs
            .iter()
            .map(|&pair| PairLikelihoods {
                pair,
                policy_winner: policy[&pair.winner],
                policy_loser: policy[&pair.loser],
                reference_winner: reference[&pair.winner],
                reference_loser: reference[&pair.loser],
            })
            .collect())
    }

    fn validation_loss(&mut self) -> Result<f64> {
        let val_pairs = std::mem::take(&mut self.state.val_pairs);
        let result = (|| {
            let items = match self.state.method {
                Method::Dpo => self.pll_items(&val_pairs, Counter::Validation)?,
                Method::Gdpo => {
                    let mut items = Vec::with_capacity(val_pairs.len());
                    for &pair in &val_pairs {
                        let group = Group::new(self.dataset, 0, vec![pair.winner, pair.loser])?;
                        let eval = evaluate_group(
                            &self.policy,
                            &self.validation_counter,
                            &group,
                            self.dataset,
                        )?;
                        let reference = self.reference_group(&group, Counter::Validation)?;
                        items.push(PairLikelihoods {
                            pair,
                            policy_winner: member_value(&eval.likelihoods.values, pair.winner)?,
                            policy_loser: member_value(&eval.likelihoods.values, pair.loser)?,
                            reference_winner: member_value(&reference, pair.winner)?,
                            reference_loser: member_value(&reference, pair.loser)?,
                        });
                    }
                    items
                }
            };
            Ok(dpo_loss(&items, self.state.config.beta)?.loss)
        })();
        self.state.val_pairs = val_pairs;
        result
    }

    /// `since` marks the start of the not-yet-accounted time slice.
    fn validate_and_check(&mut self, since: Instant) -> Result<()> {
        let val = self.validation_loss()?;
        let cfg = &self.state.config;
        let train_loss =
            (self.state.loss_steps > 0).then(|| self.state.loss_sum / self.state.loss_steps as f64);
        self.state.loss_sum = 0.0;
        self.state.loss_steps = 0;
        let step = self.state.step;
        if val < self.state.best.val_loss {
            self.state.best = BestCheckpoint {
                step,
                val_loss: val,
                params: self.policy.params().to_vec(),
            };
        }
        if val < self.state.improvement_ref * (1.0 - cfg.min_rel_improvement) {
            self.state.improvement_ref = val;
            self.state.stale_checks = 0;
        } else {
            self.state.stale_checks += 1;
            if self.state.stale_checks >= cfg.patience {
                self.state.stopped = Some(StopReason::EarlyStopped);
            }
        }
        let forward_passes = self.passes().total();
        let elapsed_s = self.state.timings.total_s + since.elapsed().as_secs_f64();
        self.state.history.push(MetricRecord {
            step,
            train_loss,
            val_loss: val,
            forward_passes,
            elapsed_s,
        });
        Ok(())
    }
}

#[derive(Clone, Copy)]
enum Counter {
    Policy,
    Validation,
}

fn member_value(values: &[(usize, f64)], member: usize) -> Result<f64> {
    values
        .iter()
        .find(|(m, _)| *m == member)
        .map(|&(_, v)| v)
        .ok_or_else(|| Error::Internal(format!("member {member} missing from group likelihoods")))
}

fn sorted_entries(map: &HashMap<usize, f64>) -> Vec<(usize, f64)> {
    let mut v: Vec<_> = map.iter().map(|(&k, &v)| (k, v)).collect();
    v.sort_unstable_by_key(|e| e.0);
    v
}

fn check_model(dataset: &Dataset, model: &SequenceModel) -> Result<()> {
    if model.length() != dataset.length() || model.alphabet_size() != dataset.alphabet().size() {
        return Err(Error::input(format!(
            "model shape (L = {}, A = {}) does not match the dataset (L = {}, A = {})",
            model.length(),
            model.alphabet_size(),
            dataset.length(),
            dataset.alphabet().size()
        )));
    }
    Ok(())
}
