//! Preference pairs, group sampling and group-amortized likelihoods.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::clustering::Cluster;
use crate::error::{Error, Result};
use crate::model::{softmax_into, ForwardCounter, Logits, MaskedInput, SequenceModel};
use crate::rng::Rng;
use crate::seqdata::{union_mask_tokens, Dataset, PositionMask};

/// `winner` has the strictly higher label. Indices refer to dataset records.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PreferencePair {
    pub winner: usize,
    pub loser: usize,
}

impl PreferencePair {
    /// Orients `(a, b)` by label; `None` on ties.
    pub fn oriented(dataset: &Dataset, a: usize, b: usize) -> Result<Option<Self>> {
        let (la, lb) = (dataset.label(a)?, dataset.label(b)?);
        Ok(if la > lb {
            Some(PreferencePair {
                winner: a,
                loser: b,
            })
        } else if lb > la {
            Some(PreferencePair {
                winner: b,
                loser: a,
            })
        } else {
            None
        })
    }

    /// Unordered key, smaller index first.
    pub fn key(&self) -> (usize, usize) {
        (self.winner.min(self.loser), self.winner.max(self.loser))
    }
}

/// Every label-distinct unordered pair of the dataset, oriented winner-first.
pub fn exhaustive_pairs(dataset: &Dataset) -> Result<Vec<PreferencePair>> {
    let n = dataset.len();
    for i in 0..n {
        dataset.label(i)?;
    }
    let mut pairs = Vec::with_capacity(n * n.saturating_sub(1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            pairs.extend(PreferencePair::oriented(dataset, i, j)?);
        }
    }
    Ok(pairs)
}

/// Sequences from one cluster scored together under their union mask.
#[derive(Clone, Debug, PartialEq)]
pub struct Group {
    pub cluster: usize,
    /// Distinct member indices, ascending.
    pub members: Vec<usize>,
    pub mask: PositionMask,
}

impl Group {
    pub fn new(dataset: &Dataset, cluster: usize, mut members: Vec<usize>) -> Result<Self> {
        members.sort_unstable();
        members.dedup();
        let mask = union_mask_tokens(members.iter().map(|&i| dataset.get(i).tokens.as_slice()))?;
        Ok(Group {
            cluster,
            members,
            mask,
        })
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
}

/// One epoch of groups.
///
/// Each cluster's members are permuted uniformly and cut into consecutive
/// chunks of `g`. A trailing chunk of one is topped up with a uniformly chosen
/// member already used in this cluster; singleton clusters yield nothing.
pub fn sample_groups_epoch(
    dataset: &Dataset,
    clusters: &[Cluster],
    g: usize,
    rng: &mut Rng,
) -> Result<Vec<Group>> {
    if g < 2 {
        return Err(Error::config(format!(
            "group size must be at least 2, got {g}"
        )));
    }
    let mut groups = Vec::new();
    for (c, cluster) in clusters.iter().enumerate() {
        if cluster.len() < 2 {
            continue;
        }
        let mut perm = cluster.members().to_vec();
        perm.shuffle(rng);
        for (k, chunk) in perm.chunks(g).enumerate() {
            let mut members = chunk.to_vec();
            if members.len() == 1 {
                let used = k * g;
                members.push(perm[rng.random_range(0..used)]);
            }
            groups.push(Group::new(dataset, c, members)?);
        }
    }
    Ok(groups)
}

/// Approximate log-likelihoods of a group's members under a shared mask.
#[derive(Clone, Debug, PartialEq)]
pub struct GroupLikelihoods {
    pub mask: PositionMask,
    /// `(member, Σ_{p ∈ mask} log softmax(logits_p)[member_p])`, in member order.
    pub values: Vec<(usize, f64)>,
}

impl GroupLikelihoods {
    pub fn get(&self, member: usize) -> Option<f64> {
        self.values
            .iter()
            .find(|(m, _)| *m == member)
            .map(|&(_, v)| v)
    }
}

/// Jointly masked input, its logits and the member likelihoods.
pub struct GroupEvaluation {
    pub input: MaskedInput,
    pub logits: Logits,
    pub likelihoods: GroupLikelihoods,
}

/// Scores every member from one forward pass over the jointly masked input.
pub fn group_likelihoods(
    model: &SequenceModel,
    counter: &ForwardCounter,
    group: &Group,
    dataset: &Dataset,
) -> Result<GroupLikelihoods> {
    Ok(evaluate_group(model, counter, group, dataset)?.likelihoods)
}

pub fn evaluate_group(
    model: &SequenceModel,
    counter: &ForwardCounter,
    group: &Group,
    dataset: &Dataset,
) -> Result<GroupEvaluation> {
    let base = *group
        .members
        .first()
        .ok_or_else(|| Error::Internal("empty group".into()))?;
    let base_tokens = &dataset.get(base).tokens;
    if group.mask.is_empty()
        && group
            .members
            .iter()
            .any(|&m| &dataset.get(m).tokens != base_tokens)
    {
        return Err(Error::Internal(
            "group members differ but their union mask is empty".into(),
        ));
    }
    let input = MaskedInput::new(base_tokens, &group.mask, model.mask_token());
    let logits = model.forward(&input, counter);
    let positions = group.mask.positions();
    let log_probs: Vec<Vec<f64>> = positions.iter().map(|&p| logits.log_softmax(p)).collect();
    let mut values = Vec::with_capacity(group.members.len());
    for &m in &group.members {
        let tokens = &dataset.get(m).tokens;
        let ll: f64 = positions
            .iter()
            .zip(&log_probs)
            .map(|(&p, lp)| lp[tokens[p] as usize])
            .sum();
        if !ll.is_finite() {
            return Err(Error::Numeric(format!(
                "non-finite likelihood for `{}`",
                dataset.get(m).id
            )));
        }
        values.push((m, ll));
    }
    Ok(GroupEvaluation {
        input,
        logits,
        likelihoods: GroupLikelihoods {
            mask: group.mask.clone(),
            values,
        },
    })
}

/// Adds `Σ_member weight_m · ∂/∂θ approx-ll(member)` to `grad`.
///
/// Equivalent to calling [`SequenceModel::grad_log_softmax_accumulate`] for
/// every (member, masked position), but folds members into one residual per
/// position.
pub fn accumulate_group_grad(
    model: &SequenceModel,
    eval: &GroupEvaluation,
    dataset: &Dataset,
    weights: &[(usize, f64)],
    grad: &mut [f64],
) -> Result<()> {
    let a = model.alphabet_size();
    let total: f64 = weights.iter().map(|(_, w)| w).sum();
    let mut residual = vec![0.0; a];
    for p in eval.input.mask().iter() {
        softmax_into(eval.logits.row(p), &mut residual);
        for r in residual.iter_mut() {
            *r *= -total;
        }
        for &(m, w) in weights {
            residual[dataset.get(m).tokens[p] as usize] += w;
        }
        model.backprop_row(&eval.input, p, &residual, grad)?;
    }
    Ok(())
}

/// Label-distinct pairs among the group's members.
pub fn group_pairs(group: &Group, dataset: &Dataset) -> Result<Vec<PreferencePair>> {
    let m = &group.members;
    let mut pairs = Vec::with_capacity(m.len() * m.len().saturating_sub(1) / 2);
    for i in 0..m.len() {
        for j in i + 1..m.len() {
            pairs.extend(PreferencePair::oriented(dataset, m[i], m[j])?);
        }
    }
    Ok(pairs)
}

/// Appends audit rows `epoch,group_id,member_ids,mask_size` (member ids
/// `;`-separated), writing the header when the file is new or empty.
pub fn append_group_manifest(
    path: &Path,
    dataset: &Dataset,
    epochs: &[(u64, Vec<Group>)],
) -> Result<()> {
    let fresh = std::fs::metadata(path)
        .map(|m| m.len() == 0)
        .unwrap_or(true);
    let file = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)?;
    let mut w = csv::Writer::from_writer(file);
    if fresh {
        w.write_record(["epoch", "group_id", "member_ids", "mask_size"])?;
    }
    for (epoch, groups) in epochs {
        for (gid, g) in groups.iter().enumerate() {
            let ids: Vec<&str> = g
                .members
                .iter()
                .map(|&m| dataset.get(m).id.as_str())
                .collect();
            w.write_record([
                epoch.to_string(),
                gid.to_string(),
                ids.join(";"),
                g.mask.count().to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}
