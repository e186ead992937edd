//! Pair relations over `O x O` stored as packed bitset rows, and partitions of
//! `O` into blocks.

use std::fmt::Write as _;

const WORD: usize = 64;

/// A relation `R ⊆ O²` with one packed bit row per observation.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct PairRelation {
    n: usize,
    words_per_row: usize,
    bits: Vec<u64>,
}

impl std::fmt::Debug for PairRelation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PairRelation")
            .field("n", &self.n)
            .field("pairs", &self.pairs().collect::<Vec<_>>())
            .finish()
    }
}

impl PairRelation {
    pub fn empty(n: usize) -> Self {
        let words_per_row = n.div_ceil(WORD);
        Self {
            n,
            words_per_row,
            bits: vec![0; n * words_per_row],
        }
    }

    pub fn from_pairs(n: usize, pairs: impl IntoIterator<Item = (usize, usize)>) -> Self {
        let mut r = Self::empty(n);
        for (i, j) in pairs {
            r.insert(i, j);
        }
        r
    }

    pub fn num_observations(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn contains(&self, i: usize, j: usize) -> bool {
        self.bits[i * self.words_per_row + j / WORD] >> (j % WORD) & 1 == 1
    }

    /// Inserts the ordered pair `(i, j)`; returns whether it was new.
    #[inline]
    pub fn insert(&mut self, i: usize, j: usize) -> bool {
        let w = &mut self.bits[i * self.words_per_row + j / WORD];
        let mask = 1u64 << (j % WORD);
        let fresh = *w & mask == 0;
        *w |= mask;
        fresh
    }

    pub fn insert_symmetric(&mut self, i: usize, j: usize) {
        self.insert(i, j);
        self.insert(j, i);
    }

    pub fn row(&self, i: usize) -> &[u64] {
        &self.bits[i * self.words_per_row..(i + 1) * self.words_per_row]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [u64] {
        &mut self.bits[i * self.words_per_row..(i + 1) * self.words_per_row]
    }

    /// All rows back to back, `n.div_ceil(64)` words each.
    pub fn raw_bits_mut(&mut self) -> &mut [u64] {
        &mut self.bits
    }

    /// Number of ordered pairs.
    pub fn len(&self) -> usize {
        self.bits.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.iter().all(|&w| w == 0)
    }

    pub fn is_subset(&self, other: &Self) -> bool {
        self.n == other.n && self.bits.iter().zip(&other.bits).all(|(a, b)| a & !b == 0)
    }

    /// `|self \ other|`.
    pub fn difference_len(&self, other: &Self) -> usize {
        self.bits
            .iter()
            .zip(&other.bits)
            .map(|(a, b)| (a & !b).count_ones() as usize)
            .sum()
    }

    pub fn is_symmetric(&self) -> bool {
        self.pairs().all(|(i, j)| self.contains(j, i))
    }

    pub fn is_irreflexive(&self) -> bool {
        (0..self.n).all(|i| !self.contains(i, i))
    }

    /// Ordered pairs in lexicographic order.
    pub fn pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.n).flat_map(move |i| {
            self.row(i).iter().enumerate().flat_map(move |(wi, &word)| {
                let mut w = word;
                std::iter::from_fn(move || {
                    if w == 0 {
                        return None;
                    }
                    let b = w.trailing_zeros() as usize;
                    w &= w - 1;
                    Some((i, wi * WORD + b))
                })
            })
        })
    }

    /// Keeps only pairs with both endpoints in `keep`.
    pub fn restricted_to(&self, keep: &[bool]) -> Self {
        Self::from_pairs(self.n, self.pairs().filter(|&(i, j)| keep[i] && keep[j]))
    }

    /// CSV of unordered pairs `i,j` with `i < j`, sorted lexicographically.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("i,j\n");
        for (i, j) in self.pairs().filter(|(i, j)| i < j) {
            let _ = writeln!(out, "{i},{j}");
        }
        out
    }
}

/// Assignment of every observation to a block, blocks numbered densely.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Partition {
    pub block_of: Vec<usize>,
    pub num_blocks: usize,
}

impl Partition {
    /// Renumbers arbitrary labels so blocks are ordered by their smallest
    /// member.
    pub fn from_labels<T: Eq + std::hash::Hash + Clone>(labels: &[T]) -> Self {
        let mut ids = std::collections::HashMap::new();
        let block_of = labels
            .iter()
            .map(|l| {
                let next = ids.len();
                *ids.entry(l.clone()).or_insert(next)
            })
            .collect();
        Self {
            block_of,
            num_blocks: ids.len(),
        }
    }

    pub fn singletons(n: usize) -> Self {
        Self {
            block_of: (0..n).collect(),
            num_blocks: n,
        }
    }

    pub fn len(&self) -> usize {
        self.block_of.len()
    }

    pub fn is_empty(&self) -> bool {
        self.block_of.is_empty()
    }

    pub fn canonical(&self) -> Self {
        Self::from_labels(&self.block_of)
    }

    pub fn blocks(&self) -> Vec<Vec<usize>> {
        let mut blocks = vec![Vec::new(); self.num_blocks];
        for (o, &b) in self.block_of.iter().enumerate() {
            blocks[b].push(o);
        }
        blocks
    }

    /// Pairs in different blocks: the relation whose complement this
    /// partition is.
    pub fn separated_pairs(&self) -> PairRelation {
        let n = self.len();
        let mut r = PairRelation::empty(n);
        for i in 0..n {
            for j in 0..n {
                if self.block_of[i] != self.block_of[j] {
                    r.insert(i, j);
                }
            }
        }
        r
    }

    /// CSV `observation_id,block_id`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("observation_id,block_id\n");
        for (o, b) in self.block_of.iter().enumerate() {
            let _ = writeln!(out, "{o},{b}");
        }
        out
    }
}
