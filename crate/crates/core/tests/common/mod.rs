//! Reference implementations and fixtures shared by the integration tests and
//! the acceptance runner. The oracles only read model parameters and dataset
//! records; `gdpo_batch_loss` is the code under test, assembled as the trainer
//! assembles it.
#![allow(dead_code)]

use gdpo::model::{Architecture, SequenceModel};
use gdpo::rng::Rng;
use gdpo::seqdata::{AlignedSequence, Alphabet, Dataset, Token};
use rand::Rng as _;

pub fn dataset_from(symbols: &str, rows: &[(&str, f64)]) -> Dataset {
    let alphabet = Alphabet::new(symbols).unwrap();
    let seqs = rows
        .iter()
        .enumerate()
        .map(|(i, (s, label))| {
            AlignedSequence::new(format!("s{i}"), alphabet.encode(s).unwrap(), Some(*label))
        })
        .collect();
    Dataset::new(alphabet, seqs, None).unwrap()
}

/// Variants of a random base sequence, each mutated at up to `max_mut`
/// positions drawn from the first `span` positions. Labels are distinct.
pub fn random_dataset(
    rng: &mut Rng,
    n: usize,
    length: usize,
    symbols: &str,
    span: usize,
    max_mut: usize,
) -> Dataset {
    let alphabet = Alphabet::new(symbols).unwrap();
    let a = alphabet.size();
    let base: Vec<Token> = (0..length)
        .map(|_| rng.random_range(0..a) as Token)
        .collect();
    let seqs = (0..n)
        .map(|i| {
            let mut t = base.clone();
            for _ in 0..rng.random_range(0..=max_mut) {
                let p = rng.random_range(0..span.min(length));
                t[p] = rng.random_range(0..a) as Token;
            }
            AlignedSequence::new(
                format!("v{i}"),
                t,
                Some(i as f64 + rng.random::<f64>() * 0.5),
            )
        })
        .collect();
    Dataset::new(alphabet, seqs, None).unwrap()
}

/// Positions where any two members differ, by comparing every pair.
pub fn brute_union_mask(dataset: &Dataset, members: &[usize]) -> Vec<usize> {
    let l = dataset.length();
    let mut hit = vec![false; l];
    for &x in members {
        for &y in members {
            let (tx, ty) = (&dataset.get(x).tokens, &dataset.get(y).tokens);
            for p in 0..l {
                if tx[p] != ty[p] {
                    hit[p] = true;
                }
            }
        }
    }
    (0..l).filter(|&p| hit[p]).collect()
}

/// Greedy union-mask clustering by full rescan: every round recomputes the
/// cost of every ordered pair of live clusters from scratch.
///
/// Returns the clusters (sorted member lists, ordered by lowest member) and
/// the accepted merges as `(target lowest id, source lowest id, cost)`.
pub fn rescan_cluster(
    dataset: &Dataset,
    tau: f64,
) -> (Vec<Vec<usize>>, Vec<(usize, usize, usize)>) {
    let threshold = tau * dataset.length() as f64;
    let mut live: Vec<Vec<usize>> = (0..dataset.len()).map(|i| vec![i]).collect();
    let mut merges = Vec::new();
    loop {
        let mut best: Option<((usize, usize, usize, usize), usize, usize)> = None;
        for t in 0..live.len() {
            let mt = brute_union_mask(dataset, &live[t]).len();
            for s in 0..live.len() {
                if s == t {
                    continue;
                }
                let mut both = live[t].clone();
                both.extend(&live[s]);
                let cost = brute_union_mask(dataset, &both).len() - mt;
                let key = (cost, mt, live[t][0], live[s][0]);
                if best.is_none_or(|(k, _, _)| key < k) {
                    best = Some((key, t, s));
                }
            }
        }
        let Some((key, t, s)) = best else { break };
        if key.0 as f64 > threshold {
            break;
        }
        merges.push((key.2, key.3, key.0));
        let source = live[s].clone();
        live[t].extend(source);
        live[t].sort_unstable();
        live.remove(s);
    }
    live.sort_by_key(|c| c[0]);
    (live, merges)
}

/// Unnormalized log-weight of a full sequence under the Potts Gibbs
/// distribution: fields plus every coupled pair, each edge once.
pub fn potts_energy(model: &SequenceModel, tokens: &[Token]) -> f64 {
    let Architecture::Potts(m) = model.architecture() else {
        panic!("not a Potts model")
    };
    let mut e: f64 = tokens.iter().enumerate().map(|(i, &a)| m.field(i, a)).sum();
    for &(i, j) in m.edges() {
        e += m.coupling(i, j, tokens[i], tokens[j]);
    }
    e
}

/// Exact `log p(y_D | y_rest)` for `tokens` by enumerating every completion of
/// the positions in `d`.
pub fn exact_conditional(model: &SequenceModel, tokens: &[Token], d: &[usize]) -> f64 {
    let a = model.alphabet_size();
    let mut scratch = tokens.to_vec();
    let mut weights = Vec::new();
    for code in 0..a.pow(d.len() as u32) {
        let mut c = code;
        for &p in d {
            scratch[p] = (c % a) as Token;
            c /= a;
        }
        weights.push(potts_energy(model, &scratch));
    }
    let max = weights.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let log_z = max + weights.iter().map(|w| (w - max).exp()).sum::<f64>().ln();
    potts_energy(model, tokens) - log_z
}

/// Exact full-sequence log-probability under a PWM (product of per-position
/// softmaxes of theta).
pub fn pwm_log_prob(model: &SequenceModel, tokens: &[Token]) -> f64 {
    let Architecture::Pwm(m) = model.architecture() else {
        panic!("not a PWM")
    };
    let a = model.alphabet_size();
    tokens
        .iter()
        .enumerate()
        .map(|(i, &t)| {
            let row = &m.theta()[i * a..(i + 1) * a];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = row.iter().map(|v| (v - max).exp()).sum();
            row[t as usize] - max - z.ln()
        })
        .sum()
}

/// Kendall's tau-a by counting every pair.
pub fn brute_kendall(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len();
    let mut s = 0i64;
    for i in 0..n {
        for j in i + 1..n {
            let a = (xs[i] - xs[j]).partial_cmp(&0.0).unwrap() as i64;
            let b = (ys[i] - ys[j]).partial_cmp(&0.0).unwrap() as i64;
            s += a * b;
        }
    }
    s as f64 / (n * (n - 1) / 2) as f64
}

/// KS distance by evaluating both empirical CDFs at every sample point.
pub fn brute_ks(a: &[f64], b: &[f64]) -> f64 {
    let cdf = |s: &[f64], x: f64| s.iter().filter(|&&v| v <= x).count() as f64 / s.len() as f64;
    a.iter()
        .chain(b)
        .map(|&x| (cdf(a, x) - cdf(b, x)).abs())
        .fold(0.0, f64::max)
}

/// Central differences of `f` at `params` along the listed coordinates.
pub fn central_differences(
    params: &[f64],
    coords: &[usize],
    eps: f64,
    mut f: impl FnMut(&[f64]) -> f64,
) -> Vec<f64> {
    coords
        .iter()
        .map(|&k| {
            let mut p = params.to_vec();
            p[k] += eps;
            let up = f(&p);
            p[k] -= 2.0 * eps;
            let down = f(&p);
            (up - down) / (2.0 * eps)
        })
        .collect()
}

/// `|a − b| / max(|a|, |b|, floor)`.
pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// g-DPO batch loss over `groups` at policy parameters `params`, with the
/// analytic gradient assembled the way the trainer does it.
pub fn gdpo_batch_loss(
    policy: &SequenceModel,
    reference: &SequenceModel,
    dataset: &Dataset,
    groups: &[gdpo::preference::Group],
    params: &[f64],
    beta: f64,
) -> (f64, Vec<f64>) {
    use gdpo::model::ForwardCounter;
    use gdpo::preference::{accumulate_group_grad, evaluate_group, group_pairs};
    use gdpo::training::{dpo_loss, PairLikelihoods};
    let mut model = policy.clone_trainable();
    model.set_params(params).unwrap();
    let counter = ForwardCounter::new();
    let mut items = Vec::new();
    let mut evals = Vec::new();
    for g in groups {
        let eval = evaluate_group(&model, &counter, g, dataset).unwrap();
        let refs = evaluate_group(reference, &counter, g, dataset)
            .unwrap()
            .likelihoods;
        let start = items.len();
        for pair in group_pairs(g, dataset).unwrap() {
            items.push(PairLikelihoods {
                pair,
                policy_winner: eval.likelihoods.get(pair.winner).unwrap(),
                policy_loser: eval.likelihoods.get(pair.loser).unwrap(),
                reference_winner: refs.get(pair.winner).unwrap(),
                reference_loser: refs.get(pair.loser).unwrap(),
            });
        }
        evals.push((eval, start..items.len()));
    }
    let out = dpo_loss(&items, beta).unwrap();
    let mut grad = model.zero_grad();
    for (eval, range) in &evals {
        let mut weights = std::collections::BTreeMap::new();
        for k in range.clone() {
            *weights.entry(items[k].pair.winner).or_insert(0.0) += out.winner_grads[k];
            *weights.entry(items[k].pair.loser).or_insert(0.0) -= out.winner_grads[k];
        }
        let weights: Vec<(usize, f64)> = weights.into_iter().collect();
        accumulate_group_grad(&model, eval, dataset, &weights, &mut grad).unwrap();
    }
    (out.loss, grad)
}

/// Largest coordinate-wise relative error between the analytic gradient of
/// the g-DPO batch loss and central differences, on a random PWM instance.
pub fn gdpo_gradient_error(
    rng: &mut Rng,
    length: usize,
    symbols: &str,
    g: usize,
    groups: usize,
    eps: f64,
) -> f64 {
    let a = symbols.len();
    let ds = random_dataset(rng, g * groups, length, symbols, length, 4);
    let gs: Vec<_> = (0..groups)
        .map(|k| gdpo::preference::Group::new(&ds, 0, (k * g..(k + 1) * g).collect()).unwrap())
        .collect();
    let policy = gdpo::model::random_model("pwm", length, a, 1.0, rng);
    let reference = gdpo::model::random_model("pwm", length, a, 1.0, rng).clone_frozen();
    let beta = 0.5;
    let params = policy.params().to_vec();
    let (_, analytic) = gdpo_batch_loss(&policy, &reference, &ds, &gs, &params, beta);
    let coords: Vec<usize> = (0..params.len()).collect();
    let numeric = central_differences(&params, &coords, eps, |p| {
        gdpo_batch_loss(&policy, &reference, &ds, &gs, p, beta).0
    });
    analytic
        .iter()
        .zip(&numeric)
        .map(|(&x, &y)| rel_err(x, y, 1e-6))
        .fold(0.0, f64::max)
}
