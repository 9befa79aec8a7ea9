//! Sequence data model: alphabets, aligned sequences, position masks and datasets.

mod io;
mod landscape;
mod mask;

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use io::{load_dataset, save_dataset, DataFormat};
pub use landscape::{
    generate_landscape, EpistaticTerm, GroundTruthKind, GroundTruthScorer, LandscapeSpec,
};
pub use mask::PositionMask;

/// Residue index into an [`Alphabet`].
pub type Token = u8;

pub const AMINO_ACIDS: &str = "ACDEFGHIKLMNPQRSTVWY";
pub const MASK_SYMBOL: char = '#';

/// Ordered residue symbols plus a distinguished mask symbol.
///
/// Residues are indexed `0..size()`; the mask token is `size()`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Alphabet {
    symbols: Vec<char>,
}

impl Alphabet {
    pub fn new(symbols: &str) -> Result<Self> {
        let symbols: Vec<char> = symbols.chars().collect();
        if symbols.len() < 2 {
            return Err(Error::config("alphabet needs at least two residues"));
        }
        if symbols.len() >= Token::MAX as usize {
            return Err(Error::config("alphabet too large"));
        }
        if symbols.contains(&MASK_SYMBOL) {
            return Err(Error::config(format!(
                "mask symbol `{MASK_SYMBOL}` cannot be a residue"
            )));
        }
        for (i, c) in symbols.iter().enumerate() {
            if symbols[..i].contains(c) {
                return Err(Error::config(format!("duplicate alphabet symbol `{c}`")));
            }
        }
        Ok(Alphabet { symbols })
    }

    pub fn amino_acids() -> Self {
        Self::new(AMINO_ACIDS).expect("canonical alphabet is valid")
    }

    /// Number of residue symbols (excluding the mask).
    pub fn size(&self) -> usize {
        self.symbols.len()
    }

    pub fn mask_token(&self) -> Token {
        self.symbols.len() as Token
    }

    pub fn symbols(&self) -> &[char] {
        &self.symbols
    }

    pub fn token_of(&self, c: char) -> Option<Token> {
        self.symbols
            .iter()
            .position(|&s| s == c)
            .map(|i| i as Token)
    }

    /// Encodes a residue string; the error carries the first unknown character.
    pub fn encode(&self, s: &str) -> std::result::Result<Vec<Token>, char> {
        s.chars().map(|c| self.token_of(c).ok_or(c)).collect()
    }

    pub fn decode(&self, tokens: &[Token]) -> String {
        tokens
            .iter()
            .map(|&t| self.symbols.get(t as usize).copied().unwrap_or(MASK_SYMBOL))
            .collect()
    }
}

impl Default for Alphabet {
    fn default() -> Self {
        Self::amino_acids()
    }
}

impl TryFrom<String> for Alphabet {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        Alphabet::new(&s)
    }
}

impl From<Alphabet> for String {
    fn from(a: Alphabet) -> String {
        a.symbols.into_iter().collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AlignedSequence {
    pub id: String,
    pub tokens: Vec<Token>,
    /// Assay measurement, arbitrary units. Higher is better.
    pub label: Option<f64>,
}

impl AlignedSequence {
    pub fn new(id: impl Into<String>, tokens: Vec<Token>, label: Option<f64>) -> Self {
        AlignedSequence {
            id: id.into(),
            tokens,
            label,
        }
    }

    /// Parses `seq` against `alphabet`.
    pub fn parse(
        id: impl Into<String>,
        seq: &str,
        label: Option<f64>,
        alphabet: &Alphabet,
    ) -> Result<Self> {
        let id = id.into();
        let tokens = alphabet
            .encode(seq)
            .map_err(|c| Error::parse(&id, format!("unknown residue `{c}`")))?;
        Ok(AlignedSequence { id, tokens, label })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// Positions at which `a` and `b` differ.
pub fn diff_mask(a: &AlignedSequence, b: &AlignedSequence) -> Result<PositionMask> {
    diff_tokens(&a.tokens, &b.tokens)
}

pub(crate) fn diff_tokens(a: &[Token], b: &[Token]) -> Result<PositionMask> {
    if a.len() != b.len() {
        return Err(Error::input(format!(
            "length mismatch: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    let mut mask = PositionMask::empty(a.len());
    for (i, (x, y)) in a.iter().zip(b).enumerate() {
        if x != y {
            mask.insert(i);
        }
    }
    Ok(mask)
}

/// Positions where at least two of `seqs` disagree.
pub fn union_mask<'a, I>(seqs: I) -> Result<PositionMask>
where
    I: IntoIterator<Item = &'a AlignedSequence>,
{
    union_mask_tokens(seqs.into_iter().map(|s| s.tokens.as_slice()))
}

pub(crate) fn union_mask_tokens<'a, I>(seqs: I) -> Result<PositionMask>
where
    I: IntoIterator<Item = &'a [Token]>,
{
    let mut iter = seqs.into_iter();
    let first = iter
        .next()
        .ok_or_else(|| Error::input("union mask of an empty set"))?;
    let mut mask = PositionMask::empty(first.len());
    // Any disagreement between two members implies one of them disagrees with the first.
    for s in iter {
        mask.union_with(&diff_tokens(first, s)?);
    }
    Ok(mask)
}

/// An aligned, fixed-length collection of sequences.
#[derive(Clone, Debug)]
pub struct Dataset {
    alphabet: Alphabet,
    length: usize,
    sequences: Vec<AlignedSequence>,
    wild_type: Option<String>,
    index: HashMap<String, usize>,
}

impl Dataset {
    pub fn new(
        alphabet: Alphabet,
        sequences: Vec<AlignedSequence>,
        wild_type: Option<String>,
    ) -> Result<Self> {
        let length = sequences.first().map(|s| s.len()).unwrap_or(0);
        let mut index = HashMap::with_capacity(sequences.len());
        for (i, s) in sequences.iter().enumerate() {
            if s.len() != length {
                return Err(Error::parse(
                    &s.id,
                    format!("length {} differs from alignment length {length}", s.len()),
                ));
            }
            if let Some(&t) = s.tokens.iter().find(|&&t| t as usize >= alphabet.size()) {
                return Err(Error::parse(&s.id, format!("token {t} is not a residue")));
            }
            if let Some(l) = s.label {
                if !l.is_finite() {
                    return Err(Error::parse(&s.id, "label is not finite"));
                }
            }
            if index.insert(s.id.clone(), i).is_some() {
                return Err(Error::parse(&s.id, "duplicate id"));
            }
        }
        if let Some(wt) = &wild_type {
            if !index.contains_key(wt) {
                return Err(Error::input(format!("wild type `{wt}` not in dataset")));
            }
        }
        Ok(Dataset {
            alphabet,
            length,
            sequences,
            wild_type,
            index,
        })
    }

    pub fn alphabet(&self) -> &Alphabet {
        &self.alphabet
    }

    /// Alignment length `L`.
    pub fn length(&self) -> usize {
        self.length
    }

    pub fn len(&self) -> usize {
        self.sequences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sequences.is_empty()
    }

    pub fn sequences(&self) -> &[AlignedSequence] {
        &self.sequences
    }

    pub fn get(&self, idx: usize) -> &AlignedSequence {
        &self.sequences[idx]
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn wild_type(&self) -> Option<&AlignedSequence> {
        self.wild_type
            .as_ref()
            .and_then(|id| self.index_of(id))
            .map(|i| &self.sequences[i])
    }

    pub fn wild_type_id(&self) -> Option<&str> {
        self.wild_type.as_deref()
    }

    /// Label of sequence `idx`, or an input error naming the unlabeled record.
    pub fn label(&self, idx: usize) -> Result<f64> {
        let s = &self.sequences[idx];
        s.label
            .ok_or_else(|| Error::input(format!("sequence `{}` has no label", s.id)))
    }

    /// Per-position most frequent residue; ties go to the lower token.
    pub fn consensus(&self) -> Vec<Token> {
        let a = self.alphabet.size();
        (0..self.length)
            .map(|i| {
                let mut counts = vec![0usize; a];
                for s in &self.sequences {
                    counts[s.tokens[i] as usize] += 1;
                }
                let mut best = 0;
                for t in 1..a {
                    if counts[t] > counts[best] {
                        best = t;
                    }
                }
                best as Token
            })
            .collect()
    }

    /// New dataset holding the given records in order. Keeps the wild type if selected.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let sequences: Vec<_> = indices.iter().map(|&i| self.sequences[i].clone()).collect();
        let wild_type = self
            .wild_type
            .clone()
            .filter(|wt| sequences.iter().any(|s| &s.id == wt));
        Dataset::new(self.alphabet.clone(), sequences, wild_type)
            .expect("subset of a valid dataset is valid")
    }

    /// Union mask over the whole dataset.
    pub fn mutated_positions(&self) -> PositionMask {
        union_mask(&self.sequences).unwrap_or_else(|_| PositionMask::empty(self.length))
    }
}

/// Fraction of positions mutated anywhere in the dataset, `m(S)/L`.
pub fn positional_coverage(dataset: &Dataset) -> Result<f64> {
    if dataset.is_empty() {
        return Err(Error::input("positional coverage of an empty dataset"));
    }
    if dataset.length() == 0 {
        return Ok(0.0);
    }
    Ok(dataset.mutated_positions().count() as f64 / dataset.length() as f64)
}
