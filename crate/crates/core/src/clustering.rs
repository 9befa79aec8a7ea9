//! Greedy union-mask agglomerative clustering.
//!
//! Clusters start as singletons. The cost of merging `source` into `target` is
//! the growth of the target's union mask,
//! `|M(target) ∪ M(source) ∪ M({s, s'})| − m(target)`, for representatives
//! `s ∈ target`, `s' ∈ source`. The cheapest ordered pair is merged until the
//! cheapest cost exceeds `tau · L`.
//!
//! The union `M(target) ∪ M(source)` already contains every within-cluster
//! difference, so adding `M({s, s'})` for any cross pair yields the same set:
//! any other cross pair differs from `(s, s')` only at positions already in
//! the two masks. Representatives are therefore fixed to the lowest member.

use std::cmp::Reverse;
use std::collections::{BinaryHeap, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seqdata::{diff_tokens, union_mask_tokens, Dataset, PositionMask};

/// A set of dataset records (by index) with its cached union mask.
#[derive(Clone, Debug, PartialEq)]
pub struct Cluster {
    members: Vec<usize>,
    mask: PositionMask,
    mask_size: usize,
}

impl Cluster {
    pub fn singleton(idx: usize, length: usize) -> Self {
        Cluster {
            members: vec![idx],
            mask: PositionMask::empty(length),
            mask_size: 0,
        }
    }

    /// Builds a cluster from members, computing the union mask from scratch.
    pub fn from_members(dataset: &Dataset, mut members: Vec<usize>) -> Result<Self> {
        members.sort_unstable();
        members.dedup();
        let mask = union_mask_tokens(members.iter().map(|&i| dataset.get(i).tokens.as_slice()))?;
        let mask_size = mask.count();
        Ok(Cluster {
            members,
            mask,
            mask_size,
        })
    }

    /// Member indices in ascending order.
    pub fn members(&self) -> &[usize] {
        &self.members
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn mask(&self) -> &PositionMask {
        &self.mask
    }

    pub fn mask_size(&self) -> usize {
        self.mask_size
    }

    /// Lowest member index; used as the representative and for tie-breaking.
    pub fn representative(&self) -> usize {
        self.members[0]
    }

    fn absorb(&mut self, other: Cluster, cross: &PositionMask) {
        self.mask.union_with(&other.mask);
        self.mask.union_with(cross);
        self.mask_size = self.mask.count();
        self.members.extend(other.members);
        self.members.sort_unstable();
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoarseBucketing {
    pub kmer_size: usize,
    /// Cosine similarity of k-mer count vectors required to join a bucket.
    pub similarity_threshold: f64,
    /// Bucketing is skipped for datasets smaller than this.
    pub min_sequences: usize,
}

impl Default for CoarseBucketing {
    fn default() -> Self {
        CoarseBucketing {
            kmer_size: 3,
            similarity_threshold: 0.5,
            min_sequences: 5000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusteringConfig {
    /// Union mask ratio threshold; merging stops once the best cost exceeds `tau · L`.
    pub tau: f64,
    pub coarse_bucketing: Option<CoarseBucketing>,
}

impl Default for ClusteringConfig {
    fn default() -> Self {
        ClusteringConfig {
            tau: 0.3,
            coarse_bucketing: None,
        }
    }
}

impl ClusteringConfig {
    pub fn with_tau(tau: f64) -> Self {
        ClusteringConfig {
            tau,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.tau) {
            return Err(Error::config(format!(
                "tau must lie in [0, 1], got {}",
                self.tau
            )));
        }
        if let Some(c) = &self.coarse_bucketing {
            if c.kmer_size == 0 {
                return Err(Error::config("k-mer size must be positive"));
            }
        }
        Ok(())
    }
}

/// Cost of merging `source` into `target`.
pub fn merge_cost(target: &Cluster, source: &Cluster, dataset: &Dataset) -> Result<usize> {
    if shares_member(&target.members, &source.members) {
        return Err(Error::Internal("merge cost of overlapping clusters".into()));
    }
    let cross = diff_tokens(
        &dataset.get(target.representative()).tokens,
        &dataset.get(source.representative()).tokens,
    )?;
    Ok(target.mask.union3_count(&source.mask, &cross) - target.mask_size)
}

fn shares_member(a: &[usize], b: &[usize]) -> bool {
    let (mut i, mut j) = (0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => return true,
        }
    }
    false
}

/// One accepted merge.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MergeRecord {
    pub target: usize,
    pub source: usize,
    pub cost: usize,
    pub threshold: f64,
}

#[derive(Clone, Debug)]
pub struct ClusteringOutcome {
    pub clusters: Vec<Cluster>,
    pub merges: Vec<MergeRecord>,
    /// Number of `merge_cost` evaluations.
    pub cost_evaluations: u64,
}

/// Clusters `dataset` and returns the clusters only.
pub fn cluster(dataset: &Dataset, config: &ClusteringConfig) -> Result<Vec<Cluster>> {
    Ok(cluster_with_trace(dataset, config)?.clusters)
}

/// Clusters `dataset`, recording every merge. Buckets (if enabled) are
/// clustered independently and concatenated in bucket order.
pub fn cluster_with_trace(
    dataset: &Dataset,
    config: &ClusteringConfig,
) -> Result<ClusteringOutcome> {
    config.validate()?;
    let mut out = ClusteringOutcome {
        clusters: Vec::new(),
        merges: Vec::new(),
        cost_evaluations: 0,
    };
    for bucket in coarse_bucket(dataset, config.coarse_bucketing.as_ref()) {
        let part = cluster_bucket(dataset, &bucket, config.tau)?;
        out.clusters.extend(part.clusters);
        out.merges.extend(part.merges);
        out.cost_evaluations += part.cost_evaluations;
    }
    Ok(out)
}

// Heap key: cost, then m(target), then lowest ids of target and source.
type Key = (usize, usize, usize, usize);

struct Candidate {
    key: Key,
    target: usize,
    source: usize,
    target_gen: u32,
    source_gen: u32,
}

impl PartialEq for Candidate {
    fn eq(&self, other: &Self) -> bool {
        self.key == other.key
    }
}
impl Eq for Candidate {}
impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.key.cmp(&other.key)
    }
}

struct Slot {
    cluster: Option<Cluster>,
    generation: u32,
}

fn cluster_bucket(dataset: &Dataset, bucket: &[usize], tau: f64) -> Result<ClusteringOutcome> {
    let threshold = tau * dataset.length() as f64;
    let mut slots: Vec<Slot> = bucket
        .iter()
        .map(|&i| Slot {
            cluster: Some(Cluster::singleton(i, dataset.length())),
            generation: 0,
        })
        .collect();
    let mut heap = BinaryHeap::new();
    let mut evaluations = 0u64;

    // Candidates that already exceed the threshold can never be accepted: a
    // pair's cost only changes when one side merges, which re-pushes it.
    let mut push = |heap: &mut BinaryHeap<Reverse<Candidate>>,
                    slots: &[Slot],
                    t: usize,
                    s: usize|
     -> Result<()> {
        let (Some(tc), Some(sc)) = (&slots[t].cluster, &slots[s].cluster) else {
            return Ok(());
        };
        let cost = merge_cost(tc, sc, dataset)?;
        evaluations += 1;
        if cost as f64 <= threshold {
            heap.push(Reverse(Candidate {
                key: (cost, tc.mask_size, tc.representative(), sc.representative()),
                target: t,
                source: s,
                target_gen: slots[t].generation,
                source_gen: slots[s].generation,
            }));
        }
        Ok(())
    };

    for t in 0..slots.len() {
        for s in 0..slots.len() {
            if t != s {
                push(&mut heap, &slots, t, s)?;
            }
        }
    }

    let mut merges = Vec::new();
    while let Some(Reverse(c)) = heap.pop() {
        let live = |slot: &Slot, gen| slot.cluster.is_some() && slot.generation == gen;
        if !live(&slots[c.target], c.target_gen) || !live(&slots[c.source], c.source_gen) {
            continue;
        }
        let source = slots[c.source].cluster.take().expect("live slot");
        slots[c.source].generation += 1;
        let target = slots[c.target].cluster.as_mut().expect("live slot");
        let cross = diff_tokens(
            &dataset.get(target.representative()).tokens,
            &dataset.get(source.representative()).tokens,
        )?;
        merges.push(MergeRecord {
            target: target.representative(),
            source: source.representative(),
            cost: c.key.0,
            threshold,
        });
        target.absorb(source, &cross);
        slots[c.target].generation += 1;

        for other in 0..slots.len() {
            if other != c.target && slots[other].cluster.is_some() {
                push(&mut heap, &slots, c.target, other)?;
                push(&mut heap, &slots, other, c.target)?;
            }
        }
    }

    let mut clusters: Vec<Cluster> = slots.into_iter().filter_map(|s| s.cluster).collect();
    clusters.sort_by_key(Cluster::representative);
    Ok(ClusteringOutcome {
        clusters,
        merges,
        cost_evaluations: evaluations,
    })
}

/// Partitions the dataset into buckets of k-mer-similar sequences.
///
/// Greedy leader assignment: each sequence joins the first existing bucket
/// whose leader has cosine similarity at or above the threshold, otherwise it
/// starts a new bucket. Cost is `O(n · buckets)` profile comparisons.
/// Disabled (`None`) or undersized datasets return a single bucket.
pub fn coarse_bucket(dataset: &Dataset, params: Option<&CoarseBucketing>) -> Vec<Vec<usize>> {
    let all: Vec<usize> = (0..dataset.len()).collect();
    let Some(params) = params else {
        return vec![all];
    };
    if dataset.len() < params.min_sequences || dataset.is_empty() {
        return vec![all];
    }
    let profiles: Vec<KmerProfile> = dataset
        .sequences()
        .iter()
        .map(|s| KmerProfile::new(&s.tokens, params.kmer_size, dataset.alphabet().size()))
        .collect();
    let mut leaders: Vec<usize> = Vec::new();
    let mut buckets: Vec<Vec<usize>> = Vec::new();
    for (i, p) in profiles.iter().enumerate() {
        match leaders
            .iter()
            .position(|&l| profiles[l].cosine(p) >= params.similarity_threshold)
        {
            Some(b) => buckets[b].push(i),
            None => {
                leaders.push(i);
                buckets.push(vec![i]);
            }
        }
    }
    buckets
}

struct KmerProfile {
    counts: HashMap<u64, u32>,
    norm: f64,
}

impl KmerProfile {
    fn new(tokens: &[u8], k: usize, alphabet_size: usize) -> Self {
        let mut counts = HashMap::new();
        if tokens.len() >= k {
            for w in tokens.windows(k) {
                let code = w.iter().fold(0u64, |acc, &t| {
                    acc.wrapping_mul(alphabet_size as u64 + 1) + t as u64
                });
                *counts.entry(code).or_insert(0) += 1;
            }
        }
        let norm = counts
            .values()
            .map(|&c| (c as f64).powi(2))
            .sum::<f64>()
            .sqrt();
        KmerProfile { counts, norm }
    }

    fn cosine(&self, other: &KmerProfile) -> f64 {
        if self.norm == 0.0 || other.norm == 0.0 {
            return if self.norm == other.norm { 1.0 } else { 0.0 };
        }
        let (small, large) = if self.counts.len() <= other.counts.len() {
            (self, other)
        } else {
            (other, self)
        };
        let dot: f64 = small
            .counts
            .iter()
            .filter_map(|(k, &c)| large.counts.get(k).map(|&d| c as f64 * d as f64))
            .sum();
        dot / (self.norm * other.norm)
    }
}

/// Summary of a clustering.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusterStats {
    pub sequences: usize,
    pub cluster_count: usize,
    pub singleton_count: usize,
    pub sizes: Vec<usize>,
    pub mask_sizes: Vec<usize>,
    /// `Σ |C|(|C|−1)/2`.
    pub within_cluster_pairs: u64,
    /// `n(n−1)/2`.
    pub exhaustive_pairs: u64,
    /// `(mask size, cluster count)`, ascending by mask size.
    pub mask_size_histogram: Vec<(usize, usize)>,
}

pub fn cluster_stats(clusters: &[Cluster]) -> ClusterStats {
    let sizes: Vec<usize> = clusters.iter().map(Cluster::len).collect();
    let mask_sizes: Vec<usize> = clusters.iter().map(Cluster::mask_size).collect();
    let n: usize = sizes.iter().sum();
    let pairs = |k: usize| (k as u64) * (k as u64).saturating_sub(1) / 2;
    let mut hist = std::collections::BTreeMap::new();
    for &m in &mask_sizes {
        *hist.entry(m).or_insert(0usize) += 1;
    }
    ClusterStats {
        sequences: n,
        cluster_count: clusters.len(),
        singleton_count: sizes.iter().filter(|&&s| s == 1).count(),
        within_cluster_pairs: sizes.iter().map(|&s| pairs(s)).sum(),
        exhaustive_pairs: pairs(n),
        sizes,
        mask_sizes,
        mask_size_histogram: hist.into_iter().collect(),
    }
}

/// Writes `sequence_id,cluster_id` rows, clusters numbered in output order.
pub fn write_assignments(path: &Path, dataset: &Dataset, clusters: &[Cluster]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["sequence_id", "cluster_id"])?;
    for (c, cl) in clusters.iter().enumerate() {
        for &m in cl.members() {
            w.write_record([dataset.get(m).id.as_str(), &c.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seqdata::{AlignedSequence, Alphabet};

    fn dataset(seqs: &[&str]) -> Dataset {
        let a = Alphabet::new("ABC").unwrap();
        let s = seqs
            .iter()
            .enumerate()
            .map(|(i, s)| AlignedSequence::parse(format!("s{i}"), s, None, &a).unwrap())
            .collect();
        Dataset::new(a, s, None).unwrap()
    }

    #[test]
    fn merge_cost_examples() {
        let d = dataset(&["AAA", "AAA", "ABA"]);
        let c0 = Cluster::singleton(0, 3);
        let c1 = Cluster::singleton(1, 3);
        let c2 = Cluster::singleton(2, 3);
        assert_eq!(merge_cost(&c0, &c1, &d).unwrap(), 0);
        assert_eq!(merge_cost(&c0, &c2, &d).unwrap(), 1);
        assert!(matches!(merge_cost(&c0, &c0, &d), Err(Error::Internal(_))));
    }

    #[test]
    fn merge_cost_is_asymmetric() {
        let d = dataset(&["AAAA", "BBAA", "AACA"]);
        let big = Cluster::from_members(&d, vec![0, 1]).unwrap();
        let small = Cluster::singleton(2, 4);
        assert_eq!(merge_cost(&big, &small, &d).unwrap(), 1);
        assert_eq!(merge_cost(&small, &big, &d).unwrap(), 3);
    }

    #[test]
    fn tau_extremes() {
        let d = dataset(&["AAAA", "BAAA", "ABAA", "AABA", "CCCC"]);
        assert_eq!(
            cluster(&d, &ClusteringConfig::with_tau(0.0)).unwrap().len(),
            5
        );
        let all = cluster(&d, &ClusteringConfig::with_tau(1.0)).unwrap();
        assert_eq!(all.len(), 1);
        assert_eq!(all[0].members(), &[0, 1, 2, 3, 4]);
        assert_eq!(all[0].mask_size(), 4);
    }

    #[test]
    fn single_sequence() {
        let d = dataset(&["ABC"]);
        let c = cluster(&d, &ClusteringConfig::default()).unwrap();
        assert_eq!(c.len(), 1);
        assert!(c[0].mask().is_empty());
    }

    #[test]
    fn bad_tau_rejected() {
        let d = dataset(&["ABC"]);
        assert!(matches!(
            cluster(&d, &ClusteringConfig::with_tau(1.5)),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn stats_examples() {
        let d = dataset(&["AAA"; 1]);
        let singles: Vec<_> = (0..5).map(|i| Cluster::singleton(i, 3)).collect();
        let s = cluster_stats(&singles);
        assert_eq!((s.within_cluster_pairs, s.exhaustive_pairs), (0, 10));
        let one = Cluster {
            members: (0..10).collect(),
            mask: PositionMask::empty(3),
            mask_size: 0,
        };
        let s = cluster_stats(&[one]);
        assert_eq!(s.within_cluster_pairs, 45);
        assert_eq!(s.within_cluster_pairs, s.exhaustive_pairs);
        assert_eq!(s.mask_size_histogram, vec![(0, 1)]);
        drop(d);
    }

    #[test]
    fn bucketing_pass_through_and_identical() {
        let d = dataset(&["ABCABCABCA", "ABCABCABCA", "ABCABCABCA"]);
        assert_eq!(coarse_bucket(&d, None), vec![vec![0, 1, 2]]);
        let params = CoarseBucketing {
            min_sequences: 0,
            ..Default::default()
        };
        assert_eq!(coarse_bucket(&d, Some(&params)), vec![vec![0, 1, 2]]);
    }
}
