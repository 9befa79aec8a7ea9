use std::fmt;

use crate::error::{Error, Result};

const WORD: usize = 64;

/// A set of sequence positions in `[0, L)`, stored as a bitset.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct PositionMask {
    len: usize,
    words: Vec<u64>,
}

impl PositionMask {
    pub fn empty(len: usize) -> Self {
        PositionMask {
            len,
            words: vec![0; len.div_ceil(WORD)],
        }
    }

    pub fn from_positions<I: IntoIterator<Item = usize>>(len: usize, positions: I) -> Result<Self> {
        let mut mask = Self::empty(len);
        for p in positions {
            if p >= len {
                return Err(Error::input(format!(
                    "position {p} out of range for length {len}"
                )));
            }
            mask.insert(p);
        }
        Ok(mask)
    }

    /// Sequence length `L` this mask ranges over.
    pub fn len(&self) -> usize {
        self.len
    }

    /// Number of positions in the mask, `m`.
    pub fn count(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.words.iter().all(|&w| w == 0)
    }

    pub fn insert(&mut self, pos: usize) {
        assert!(
            pos < self.len,
            "position {pos} out of range for length {}",
            self.len
        );
        self.words[pos / WORD] |= 1 << (pos % WORD);
    }

    pub fn contains(&self, pos: usize) -> bool {
        pos < self.len && self.words[pos / WORD] & (1 << (pos % WORD)) != 0
    }

    pub fn union_with(&mut self, other: &PositionMask) {
        debug_assert_eq!(self.len, other.len);
        for (a, b) in self.words.iter_mut().zip(&other.words) {
            *a |= *b;
        }
    }

    pub fn union(&self, other: &PositionMask) -> PositionMask {
        let mut out = self.clone();
        out.union_with(other);
        out
    }

    /// `|self ∪ b ∪ c|` without allocating.
    pub fn union3_count(&self, b: &PositionMask, c: &PositionMask) -> usize {
        self.words
            .iter()
            .zip(&b.words)
            .zip(&c.words)
            .map(|((x, y), z)| (x | y | z).count_ones() as usize)
            .sum()
    }

    pub fn is_subset(&self, other: &PositionMask) -> bool {
        self.words
            .iter()
            .zip(&other.words)
            .all(|(a, b)| a & !b == 0)
    }

    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        self.words.iter().enumerate().flat_map(|(wi, &word)| {
            let mut w = word;
            std::iter::from_fn(move || {
                if w == 0 {
                    return None;
                }
                let bit = w.trailing_zeros() as usize;
                w &= w - 1;
                Some(wi * WORD + bit)
            })
        })
    }

    pub fn positions(&self) -> Vec<usize> {
        self.iter().collect()
    }
}

impl fmt::Debug for PositionMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_set().entries(self.iter()).finish()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn insert_contains_count() {
        let mut m = PositionMask::empty(130);
        for p in [0, 63, 64, 129] {
            m.insert(p);
        }
        assert_eq!(m.count(), 4);
        assert!(m.contains(64));
        assert!(!m.contains(65));
        assert!(!m.contains(500));
        assert_eq!(m.positions(), vec![0, 63, 64, 129]);
    }

    #[test]
    fn out_of_range_rejected() {
        assert!(PositionMask::from_positions(3, [3]).is_err());
    }

    #[test]
    fn union_and_subset() {
        let a = PositionMask::from_positions(10, [1, 2]).unwrap();
        let b = PositionMask::from_positions(10, [2, 7]).unwrap();
        let c = PositionMask::from_positions(10, [9]).unwrap();
        assert_eq!(a.union(&b).positions(), vec![1, 2, 7]);
        assert_eq!(a.union3_count(&b, &c), 4);
        assert!(a.is_subset(&a.union(&b)));
        assert!(!b.is_subset(&a));
    }
}
