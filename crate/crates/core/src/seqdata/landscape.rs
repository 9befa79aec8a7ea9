//! Synthetic mutational landscapes around a random wild type.

use std::collections::HashSet;

use rand::seq::{index, SliceRandom};
use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{AlignedSequence, Alphabet, Dataset, Token};
use crate::error::{Error, Result};
use crate::rng::{self, streams};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GroundTruthKind {
    Additive,
    PairwiseEpistatic,
}

/// Parameters of a synthetic landscape.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LandscapeSpec {
    pub length: usize,
    /// Number of variants; the wild type is added on top.
    pub n: usize,
    /// Fraction of positions that may carry mutations.
    pub mutation_breadth: f64,
    pub max_mutations_per_variant: usize,
    pub ground_truth: GroundTruthKind,
    pub noise_sd: f64,
    pub seed: u64,
    pub alphabet: Alphabet,
    /// Alternative residues allowed at each mutable position (0 = every non-wild-type residue).
    pub substitutions_per_position: usize,
    /// Mean and spread of single-mutation effects.
    pub effect_mean: f64,
    pub effect_sd: f64,
    /// Pairwise terms couple mutable positions at most this far apart.
    pub epistasis_window: usize,
    /// Probability that an eligible position pair carries a pairwise term.
    pub epistasis_density: f64,
    pub epistasis_scale: f64,
}

impl Default for LandscapeSpec {
    fn default() -> Self {
        LandscapeSpec {
            length: 60,
            n: 400,
            mutation_breadth: 0.4,
            max_mutations_per_variant: 4,
            ground_truth: GroundTruthKind::PairwiseEpistatic,
            noise_sd: 0.1,
            seed: 0,
            alphabet: Alphabet::amino_acids(),
            substitutions_per_position: 3,
            effect_mean: -0.5,
            effect_sd: 1.0,
            epistasis_window: 3,
            epistasis_density: 0.5,
            epistasis_scale: 0.5,
        }
    }
}

impl LandscapeSpec {
    pub fn mutable_count(&self) -> usize {
        (self.mutation_breadth * self.length as f64 - 1e-9)
            .ceil()
            .max(0.0) as usize
    }

    pub fn validate(&self) -> Result<()> {
        if self.length == 0 {
            return Err(Error::input("landscape length must be positive"));
        }
        if !(self.mutation_breadth > 0.0 && self.mutation_breadth <= 1.0) {
            return Err(Error::input("mutation breadth must lie in (0, 1]"));
        }
        if !(self.noise_sd >= 0.0 && self.noise_sd.is_finite()) {
            return Err(Error::input("noise sd must be finite and non-negative"));
        }
        if self.max_mutations_per_variant == 0 {
            return Err(Error::input("variants need at least one mutation"));
        }
        if self.max_mutations_per_variant > self.mutable_count() {
            return Err(Error::input(format!(
                "{} mutations per variant requested but only {} positions are mutable",
                self.max_mutations_per_variant,
                self.mutable_count()
            )));
        }
        if self.substitutions_per_position >= self.alphabet.size() {
            return Err(Error::input(
                "substitutions per position must be below the alphabet size",
            ));
        }
        if !(0.0..=1.0).contains(&self.epistasis_density) {
            return Err(Error::input("epistasis density must lie in [0, 1]"));
        }
        if !(self.effect_sd >= 0.0 && self.epistasis_scale >= 0.0) {
            return Err(Error::input("effect scales must be non-negative"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpistaticTerm {
    pub i: usize,
    pub j: usize,
    /// `alphabet_size × alphabet_size`, row-major, indexed `[token_i][token_j]`.
    pub table: Vec<f64>,
}

/// Noiseless fitness function of a synthetic landscape.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthScorer {
    pub alphabet_size: usize,
    pub wild_type: Vec<Token>,
    pub mutable_positions: Vec<usize>,
    /// `L × alphabet_size`, row-major; zero at wild-type residues.
    pub additive: Vec<f64>,
    pub epistatic: Vec<EpistaticTerm>,
}

impl GroundTruthScorer {
    pub fn length(&self) -> usize {
        self.wild_type.len()
    }

    pub fn additive_effect(&self, pos: usize, token: Token) -> f64 {
        self.additive[pos * self.alphabet_size + token as usize]
    }

    pub fn score(&self, tokens: &[Token]) -> f64 {
        let a = self.alphabet_size;
        let mut s: f64 = tokens
            .iter()
            .enumerate()
            .map(|(i, &t)| self.additive[i * a + t as usize])
            .sum();
        for term in &self.epistatic {
            s += term.table[tokens[term.i] as usize * a + tokens[term.j] as usize];
        }
        s
    }
}

/// Draws a wild type, a mutable position set and `n` variants with noisy fitness labels.
pub fn generate_landscape(spec: &LandscapeSpec) -> Result<(Dataset, GroundTruthScorer)> {
    spec.validate()?;
    let mut rng = rng::stream(spec.seed, streams::LANDSCAPE);
    let l = spec.length;
    let a = spec.alphabet.size();

    let wild_type: Vec<Token> = (0..l).map(|_| rng.random_range(0..a) as Token).collect();

    let mut mutable = index::sample(&mut rng, l, spec.mutable_count()).into_vec();
    mutable.sort_unstable();

    let allowed: Vec<Vec<Token>> = mutable
        .iter()
        .map(|&p| {
            let mut alts: Vec<Token> = (0..a as Token).filter(|&t| t != wild_type[p]).collect();
            alts.shuffle(&mut rng);
            if spec.substitutions_per_position > 0 {
                alts.truncate(spec.substitutions_per_position);
            }
            alts
        })
        .collect();

    let effect = Normal::new(spec.effect_mean, spec.effect_sd)
        .map_err(|e| Error::input(format!("effect distribution: {e}")))?;
    let mut additive = vec![0.0; l * a];
    for p in 0..l {
        for t in 0..a {
            if t != wild_type[p] as usize {
                additive[p * a + t] = effect.sample(&mut rng);
            }
        }
    }

    let mut epistatic = Vec::new();
    if spec.ground_truth == GroundTruthKind::PairwiseEpistatic {
        let coupling = Normal::new(0.0, spec.epistasis_scale)
            .map_err(|e| Error::input(format!("epistasis distribution: {e}")))?;
        for (x, &i) in mutable.iter().enumerate() {
            for &j in &mutable[x + 1..] {
                if j - i > spec.epistasis_window {
                    break;
                }
                if rng.random::<f64>() >= spec.epistasis_density {
                    continue;
                }
                let mut table = vec![0.0; a * a];
                for ti in 0..a {
                    for tj in 0..a {
                        if ti != wild_type[i] as usize && tj != wild_type[j] as usize {
                            table[ti * a + tj] = coupling.sample(&mut rng);
                        }
                    }
                }
                epistatic.push(EpistaticTerm { i, j, table });
            }
        }
    }

    let scorer = GroundTruthScorer {
        alphabet_size: a,
        wild_type: wild_type.clone(),
        mutable_positions: mutable.clone(),
        additive,
        epistatic,
    };

    let noise = Normal::new(0.0, spec.noise_sd)
        .map_err(|e| Error::input(format!("noise distribution: {e}")))?;
    let label = |tokens: &[Token], rng: &mut rng::Rng| {
        let s = scorer.score(tokens);
        if spec.noise_sd > 0.0 {
            s + noise.sample(rng)
        } else {
            s
        }
    };

    let mut seen: HashSet<Vec<Token>> = HashSet::new();
    seen.insert(wild_type.clone());
    let mut sequences = Vec::with_capacity(spec.n + 1);
    let wt_label = label(&wild_type, &mut rng);
    sequences.push(AlignedSequence::new(
        "wt",
        wild_type.clone(),
        Some(wt_label),
    ));
    let width = spec.n.to_string().len().max(4);
    for v in 0..spec.n {
        let mut tokens = wild_type.clone();
        // Retry a bounded number of times to avoid duplicate variants in small spaces.
        for _ in 0..64 {
            tokens.copy_from_slice(&wild_type);
            let k = rng.random_range(1..=spec.max_mutations_per_variant);
            for slot in index::sample(&mut rng, mutable.len(), k) {
                let alts = &allowed[slot];
                tokens[mutable[slot]] = alts[rng.random_range(0..alts.len())];
            }
            if !seen.contains(&tokens) {
                break;
            }
        }
        seen.insert(tokens.clone());
        let y = label(&tokens, &mut rng);
        sequences.push(AlignedSequence::new(
            format!("v{:0width$}", v + 1),
            tokens,
            Some(y),
        ));
    }

    let dataset = Dataset::new(spec.alphabet.clone(), sequences, Some("wt".into()))?;
    Ok((dataset, scorer))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seqdata::positional_coverage;

    #[test]
    fn noiseless_additive_labels_recompute_from_table() {
        let spec = LandscapeSpec {
            ground_truth: GroundTruthKind::Additive,
            noise_sd: 0.0,
            n: 50,
            length: 20,
            ..Default::default()
        };
        let (d, gt) = generate_landscape(&spec).unwrap();
        let wt = d.wild_type().unwrap().tokens.clone();
        for s in d.sequences() {
            let expect: f64 = (0..20)
                .filter(|&i| s.tokens[i] != wt[i])
                .map(|i| gt.additive_effect(i, s.tokens[i]))
                .sum();
            assert!((s.label.unwrap() - expect).abs() < 1e-12);
        }
        assert_eq!(gt.score(&wt), 0.0);
    }

    #[test]
    fn same_seed_is_bitwise_identical() {
        let spec = LandscapeSpec {
            n: 100,
            seed: 11,
            ..Default::default()
        };
        let (a, ga) = generate_landscape(&spec).unwrap();
        let (b, gb) = generate_landscape(&spec).unwrap();
        assert_eq!(a.sequences(), b.sequences());
        assert_eq!(ga, gb);
        let (c, _) = generate_landscape(&LandscapeSpec { seed: 12, ..spec }).unwrap();
        assert_ne!(a.sequences(), c.sequences());
    }

    #[test]
    fn mutations_confined_and_bounded() {
        let spec = LandscapeSpec {
            n: 300,
            length: 50,
            mutation_breadth: 0.4,
            max_mutations_per_variant: 3,
            ..Default::default()
        };
        let (d, gt) = generate_landscape(&spec).unwrap();
        assert_eq!(gt.mutable_positions.len(), 20);
        let wt = &d.wild_type().unwrap().tokens;
        for s in d.sequences() {
            let diffs: Vec<usize> = (0..50).filter(|&i| s.tokens[i] != wt[i]).collect();
            assert!(diffs.len() <= 3);
            assert!(diffs.iter().all(|p| gt.mutable_positions.contains(p)));
        }
    }

    #[test]
    fn coverage_approaches_breadth() {
        let mut last = 0.0;
        for n in [5, 50, 500] {
            let spec = LandscapeSpec {
                n,
                length: 60,
                mutation_breadth: 0.4,
                seed: 3,
                ..Default::default()
            };
            let (d, _) = generate_landscape(&spec).unwrap();
            let c = positional_coverage(&d).unwrap();
            assert!(c <= 0.4 + 1e-12);
            assert!(c >= last);
            last = c;
        }
        assert!((last - 0.4).abs() < 1e-12);
    }

    #[test]
    fn infeasible_spec_rejected() {
        let spec = LandscapeSpec {
            length: 10,
            mutation_breadth: 0.2,
            max_mutations_per_variant: 3,
            ..Default::default()
        };
        assert!(matches!(generate_landscape(&spec), Err(Error::Input(_))));
        let spec = LandscapeSpec {
            mutation_breadth: 0.0,
            ..Default::default()
        };
        assert!(generate_landscape(&spec).is_err());
    }

    #[test]
    fn vhh_l_scale_regime() {
        let spec = LandscapeSpec {
            n: 1833,
            length: 120,
            mutation_breadth: 1.0,
            max_mutations_per_variant: 6,
            ..Default::default()
        };
        let (d, _) = generate_landscape(&spec).unwrap();
        assert_eq!(d.len(), 1834);
        assert!(positional_coverage(&d).unwrap() > 0.924);
    }
}
