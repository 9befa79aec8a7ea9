//! Rank correlations, two-sample KS, beam generation and run evaluation.

use std::cmp::Ordering;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ForwardCounter, MaskedInput, SequenceModel};
use crate::seqdata::{AlignedSequence, Alphabet, Dataset, GroundTruthScorer, PositionMask, Token};
use crate::training::{StopReason, TrainRun};

fn check_paired(xs: &[f64], ys: &[f64]) -> Result<()> {
    if xs.len() != ys.len() {
        return Err(Error::input(format!(
            "paired inputs differ in length ({} vs {})",
            xs.len(),
            ys.len()
        )));
    }
    if xs.len() < 2 {
        return Err(Error::input("correlation needs at least two observations"));
    }
    if xs.iter().chain(ys).any(|v| v.is_nan()) {
        return Err(Error::input("correlation input contains NaN"));
    }
    Ok(())
}

/// 1-based ranks; tied values share the mean of their positions.
pub fn mid_ranks(xs: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut ranks = vec![0.0; xs.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && xs[order[j]] == xs[order[i]] {
            j += 1;
        }
        let r = (i + j + 1) as f64 / 2.0;
        for &k in &order[i..j] {
            ranks[k] = r;
        }
        i = j;
    }
    ranks
}

fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64> {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::input(
            "correlation is undefined for a constant input",
        ));
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Pearson correlation of mid-ranks.
pub fn spearman_rho(xs: &[f64], ys: &[f64]) -> Result<f64> {
    check_paired(xs, ys)?;
    pearson(&mid_ranks(xs), &mid_ranks(ys))
}

/// Kendall's τ-a: `(concordant − discordant) / (n(n−1)/2)`; tied pairs count
/// toward the denominator only. `O(n log n)`.
pub fn kendall_tau(xs: &[f64], ys: &[f64]) -> Result<f64> {
    check_paired(xs, ys)?;
    let n = xs.len();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]).then(ys[a].total_cmp(&ys[b])));
    let tied_runs = |key: &dyn Fn(usize, usize) -> bool, order: &[usize]| -> i64 {
        let mut total = 0i64;
        let mut run = 1i64;
        for w in order.windows(2) {
            if key(w[0], w[1]) {
                run += 1;
            } else {
                total += run * (run - 1) / 2;
                run = 1;
            }
        }
        total + run * (run - 1) / 2
    };
    let ties_x = tied_runs(&|a, b| xs[a] == xs[b], &idx);
    let ties_xy = tied_runs(&|a, b| xs[a] == xs[b] && ys[a] == ys[b], &idx);
    let mut by_y: Vec<f64> = idx.iter().map(|&i| ys[i]).collect();
    let swaps = count_inversions(&mut by_y);
    let mut sorted_idx: Vec<usize> = (0..n).collect();
    sorted_idx.sort_by(|&a, &b| ys[a].total_cmp(&ys[b]));
    let ties_y = tied_runs(&|a, b| ys[a] == ys[b], &sorted_idx);
    let total = (n as i64) * (n as i64 - 1) / 2;
    let numerator = total - ties_x - ties_y + ties_xy - 2 * swaps;
    Ok(numerator as f64 / total as f64)
}

/// Strict inversions, sorting `v` in place.
fn count_inversions(v: &mut [f64]) -> i64 {
    let n = v.len();
    if n < 2 {
        return 0;
    }
    let mid = n / 2;
    let mut count = count_inversions(&mut v[..mid]) + count_inversions(&mut v[mid..]);
    let mut merged = Vec::with_capacity(n);
    let (mut i, mut j) = (0, mid);
    while i < mid && j < n {
        if v[j] < v[i] {
            merged.push(v[j]);
            count += (mid - i) as i64;
            j += 1;
        } else {
            merged.push(v[i]);
            i += 1;
        }
    }
    merged.extend_from_slice(&v[i..mid]);
    merged.extend_from_slice(&v[j..n]);
    v.copy_from_slice(&merged);
    count
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KsResult {
    /// `sup_x |F_a(x) − F_b(x)|`.
    pub d: f64,
    pub p_value: f64,
    /// Smallest `x` attaining the supremum.
    pub location: f64,
    /// Sign of `F_a − F_b` at `location`; `+1` when `d = 0`.
    pub sign: i8,
}

pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<KsResult> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::input("KS test needs two non-empty samples"));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(Error::input("KS sample contains a non-finite value"));
    }
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut best = KsResult {
        d: 0.0,
        p_value: 1.0,
        location: a[0].min(b[0]),
        sign: 1,
    };
    while i < a.len() || j < b.len() {
        let x = match (a.get(i), b.get(j)) {
            (Some(&u), Some(&v)) => u.min(v),
            (Some(&u), None) => u,
            (None, Some(&v)) => v,
            (None, None) => unreachable!(),
        };
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        let diff = i as f64 / na - j as f64 / nb;
        if diff.abs() > best.d {
            best.d = diff.abs();
            best.location = x;
            best.sign = if diff > 0.0 { 1 } else { -1 };
        }
    }
    let ne = na * nb / (na + nb);
    best.p_value = kolmogorov_survival(ne.sqrt() * best.d);
    Ok(best)
}

/// `P(K > λ)` for the Kolmogorov distribution.
///
/// The alternating series converges slowly for small `λ`, so below 1.18 the
/// Jacobi theta form of the CDF is used instead. Both are truncated at 100
/// terms or once a term drops below 1e-10.
pub fn kolmogorov_survival(lambda: f64) -> f64 {
    if lambda <= 0.0 {
        return 1.0;
    }
    let p = if lambda < 1.18 {
        let c = std::f64::consts::PI.powi(2) / (8.0 * lambda * lambda);
        let mut sum = 0.0;
        for k in 1..=100 {
            let odd = (2 * k - 1) as f64;
            let term = (-odd * odd * c).exp();
            sum += term;
            if term < 1e-10 * sum {
                break;
            }
        }
        1.0 - (2.0 * std::f64::consts::PI).sqrt() / lambda * sum
    } else {
        let mut sum = 0.0;
        for k in 1..=100 {
            let kf = k as f64;
            let term = (-2.0 * kf * kf * lambda * lambda).exp();
            sum += if k % 2 == 1 { term } else { -term };
            if term < 1e-10 {
                break;
            }
        }
        2.0 * sum
    };
    p.clamp(0.0, 1.0)
}

/// A completed beam hypothesis.
#[derive(Clone, Debug, PartialEq)]
pub struct Generated {
    pub tokens: Vec<Token>,
    /// Sum of the log-probabilities chosen while filling.
    pub score: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BeamConfig {
    pub beam_width: usize,
    pub max_variants: usize,
}

impl Default for BeamConfig {
    fn default() -> Self {
        BeamConfig {
            beam_width: 256,
            max_variants: 256,
        }
    }
}

/// Masks `positions` on `wild_type` and fills them one at a time, keeping the
/// `beam_width` best partial assignments by cumulative log-probability.
///
/// Positions are filled in ascending order unless `order` is given. Returns up
/// to `max_variants` completions, best first; ties go to the smaller token
/// sequence.
pub fn beam_generate(
    model: &SequenceModel,
    wild_type: &[Token],
    positions: &PositionMask,
    beam_width: usize,
    max_variants: usize,
    order: Option<&[usize]>,
) -> Result<Vec<Generated>> {
    if positions.is_empty() {
        return Err(Error::input("beam search needs at least one position"));
    }
    if beam_width == 0 {
        return Err(Error::config("beam width must be at least 1"));
    }
    let fill: Vec<usize> = match order {
        Some(o) => {
            let mut sorted = o.to_vec();
            sorted.sort_unstable();
            if sorted != positions.positions() {
                return Err(Error::input(
                    "fill order must list exactly the masked positions",
                ));
            }
            o.to_vec()
        }
        None => positions.positions(),
    };
    let counter = ForwardCounter::new();
    let start = MaskedInput::new(wild_type, positions, model.mask_token());
    let mut beams = vec![(start, 0.0)];
    let a = model.alphabet_size();
    for &p in &fill {
        let mut next = Vec::with_capacity(beams.len() * a);
        for (input, score) in &beams {
            let logits = model.forward(input, &counter);
            let lp = logits.log_softmax(p);
            for (t, &l) in lp.iter().enumerate() {
                let mut tokens = input.tokens().to_vec();
                tokens[p] = t as Token;
                next.push((tokens, score + l));
            }
        }
        next.sort_by(|x, y| rank_hypotheses(&x.0, x.1, &y.0, y.1));
        next.truncate(beam_width);
        beams = next
            .into_iter()
            .map(|(tokens, s)| {
                let mut mask = PositionMask::empty(tokens.len());
                for &q in fill.iter().skip_while(|&&q| q != p).skip(1) {
                    mask.insert(q);
                }
                (MaskedInput::new(&tokens, &mask, model.mask_token()), s)
            })
            .collect();
    }
    let mut out: Vec<Generated> = beams
        .into_iter()
        .map(|(input, score)| Generated {
            tokens: input.tokens().to_vec(),
            score,
        })
        .collect();
    out.sort_by(|x, y| rank_hypotheses(&x.tokens, x.score, &y.tokens, y.score));
    out.truncate(max_variants);
    Ok(out)
}

fn rank_hypotheses(ta: &[Token], sa: f64, tb: &[Token], sb: f64) -> Ordering {
    sb.total_cmp(&sa).then_with(|| ta.cmp(tb))
}

/// PLL of every record, in dataset order.
pub fn pll_scores(model: &SequenceModel, dataset: &Dataset) -> Vec<f64> {
    let counter = ForwardCounter::new();
    dataset
        .sequences()
        .iter()
        .map(|s| model.pll(&s.tokens, &counter))
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankMetrics {
    pub spearman: f64,
    pub kendall: f64,
    pub n: usize,
}

/// Rank agreement between model PLL and labels on `holdout`.
pub fn rank_metrics(model: &SequenceModel, holdout: &Dataset) -> Result<RankMetrics> {
    let labels = (0..holdout.len())
        .map(|i| holdout.label(i))
        .collect::<Result<Vec<_>>>()?;
    let scores = pll_scores(model, holdout);
    Ok(RankMetrics {
        spearman: spearman_rho(&scores, &labels)?,
        kendall: kendall_tau(&scores, &labels)?,
        n: labels.len(),
    })
}

/// Beam-generated variants paired with their ground-truth fitness.
pub fn generated_properties(
    model: &SequenceModel,
    wild_type: &[Token],
    positions: &PositionMask,
    beam: &BeamConfig,
    scorer: &GroundTruthScorer,
) -> Result<Vec<(Generated, f64)>> {
    let generated = beam_generate(
        model,
        wild_type,
        positions,
        beam.beam_width,
        beam.max_variants,
        None,
    )?;
    Ok(generated
        .into_iter()
        .map(|g| {
            let fitness = scorer.score(&g.tokens);
            (g, fitness)
        })
        .collect())
}

/// Generated variants labeled by fitness, ids `gen0001`, ...
pub fn generated_dataset(alphabet: &Alphabet, generated: &[(Generated, f64)]) -> Result<Dataset> {
    let seqs = generated
        .iter()
        .enumerate()
        .map(|(i, (g, f))| {
            AlignedSequence::new(format!("gen{:04}", i + 1), g.tokens.clone(), Some(*f))
        })
        .collect();
    Dataset::new(alphabet.clone(), seqs, None)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Convergence {
    pub steps: u64,
    pub best_step: u64,
    pub best_val_loss: f64,
    pub forward_passes: u64,
    pub stop_reason: StopReason,
    pub training_s: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunEvaluation {
    pub ranks: RankMetrics,
    /// Ground-truth fitness of generated variants, best model score first.
    pub generated_fitness: Vec<f64>,
    pub convergence: Convergence,
}

/// Scores the best checkpoint of `run` on `holdout` and generates variants
/// over `positions` from `wild_type`.
pub fn evaluate_run(
    run: &TrainRun,
    holdout: &Dataset,
    scorer: &GroundTruthScorer,
    wild_type: &[Token],
    positions: &PositionMask,
    beam: &BeamConfig,
) -> Result<RunEvaluation> {
    let generated = generated_properties(&run.policy, wild_type, positions, beam, scorer)?;
    Ok(RunEvaluation {
        ranks: rank_metrics(&run.policy, holdout)?,
        generated_fitness: generated.iter().map(|(_, f)| *f).collect(),
        convergence: Convergence {
            steps: run.steps,
            best_step: run.best_step,
            best_val_loss: run.best_val_loss,
            forward_passes: run.forward_passes(),
            stop_reason: run.stop_reason,
            training_s: run.timings.training_s,
        },
    })
}

/// Shared-edge histogram of several named series.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub series: Vec<(String, Vec<usize>)>,
}

pub fn histogram(series: &[(&str, &[f64])], bins: usize) -> Result<Histogram> {
    if bins == 0 {
        return Err(Error::config("histogram needs at least one bin"));
    }
    let all = series.iter().flat_map(|(_, v)| v.iter().copied());
    let (lo, hi) = all.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
        (lo.min(v), hi.max(v))
    });
    if !lo.is_finite() || !hi.is_finite() {
        return Err(Error::input("histogram needs finite, non-empty data"));
    }
    let width = if hi > lo {
        (hi - lo) / bins as f64
    } else {
        1.0
    };
    let edges: Vec<f64> = (0..=bins).map(|k| lo + width * k as f64).collect();
    let series = series
        .iter()
        .map(|(name, values)| {
            let mut counts = vec![0; bins];
            for &v in *values {
                let k = (((v - lo) / width) as usize).min(bins - 1);
                counts[k] += 1;
            }
            (name.to_string(), counts)
        })
        .collect();
    Ok(Histogram { edges, series })
}

/// Rows `bin_lo,bin_hi,<series...>`.
pub fn write_histogram_csv(path: &Path, hist: &Histogram) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["bin_lo".to_string(), "bin_hi".to_string()];
    header.extend(hist.series.iter().map(|(n, _)| n.clone()));
    w.write_record(&header)?;
    for k in 0..hist.edges.len() - 1 {
        let mut row = vec![hist.edges[k].to_string(), hist.edges[k + 1].to_string()];
        row.extend(hist.series.iter().map(|(_, c)| c[k].to_string()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::PwmModel;

    #[test]
    fn spearman_extremes() {
        let xs = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(spearman_rho(&xs, &xs).unwrap(), 1.0);
        let rev = [5.0, 4.0, 3.0, 2.0, 1.0];
        assert!((spearman_rho(&xs, &rev).unwrap() + 1.0).abs() < 1e-15);
        assert!(spearman_rho(&xs, &[1.0; 5]).is_err());
        assert!(spearman_rho(&xs[..1], &xs[..1]).is_err());
    }

    #[test]
    fn mid_ranks_average_ties() {
        assert_eq!(
            mid_ranks(&[10.0, 20.0, 10.0, 30.0]),
            vec![1.5, 3.0, 1.5, 4.0]
        );
    }

    #[test]
    fn kendall_small_cases() {
        assert_eq!(
            kendall_tau(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap(),
            1.0
        );
        // (1,3) is the only discordant pair.
        assert!(
            (kendall_tau(&[1.0, 2.0, 3.0], &[1.0, 3.0, 2.0]).unwrap() - 1.0 / 3.0).abs() < 1e-15
        );
        // Ties stay in the denominator.
        assert_eq!(
            kendall_tau(&[1.0, 1.0, 2.0], &[1.0, 2.0, 3.0]).unwrap(),
            2.0 / 3.0
        );
    }

    #[test]
    fn ks_examples() {
        let a = [0.1, 0.5, 0.3];
        let r = ks_two_sample(&a, &[0.3, 0.1, 0.5]).unwrap();
        assert_eq!((r.d, r.p_value), (0.0, 1.0));
        let r = ks_two_sample(&[1.0, 2.0], &[3.0, 4.0, 5.0]).unwrap();
        assert_eq!((r.d, r.location, r.sign), (1.0, 2.0, 1));
        assert!(ks_two_sample(&[], &a).is_err());
    }

    #[test]
    fn kolmogorov_branches_meet() {
        let below = kolmogorov_survival(1.18 - 1e-9);
        let above = kolmogorov_survival(1.18);
        assert!((below - above).abs() < 1e-8);
        // Tabulated: P(K > 1.36) ≈ 0.0494.
        assert!((kolmogorov_survival(1.36) - 0.0494).abs() < 5e-4);
        assert!(kolmogorov_survival(0.3) > 0.99);
    }

    #[test]
    fn greedy_beam_picks_argmax() {
        let theta = vec![0.0, 2.0, 1.0, 0.5, 0.0, 0.0];
        let model: SequenceModel = PwmModel::from_theta(2, 3, theta).unwrap().into();
        let mask = PositionMask::from_positions(2, [0]).unwrap();
        let out = beam_generate(&model, &[0, 0], &mask, 1, 5, None).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].tokens, vec![1, 0]);
    }

    #[test]
    fn histogram_counts_everything() {
        let a = [0.0, 0.5, 1.0];
        let b = [0.25, 0.25];
        let h = histogram(&[("a", &a), ("b", &b)], 4).unwrap();
        assert_eq!(h.edges.len(), 5);
        assert_eq!(h.series[0].1.iter().sum::<usize>(), 3);
        assert_eq!(h.series[1].1, vec![0, 2, 0, 0]);
    }
}
