//! Permutations of `{0, .., p-1}` and their cycle structure.

use std::fmt;

use itertools::Itertools;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A bijection on `{0, .., p-1}`, stored as its image list: `self.map()[k]`
/// is where `k` is sent.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Permutation {
    images: Vec<usize>,
}

/// Cycle type as a partition of `p`, parts in non-increasing order.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CycleType(pub Vec<usize>);

impl fmt::Display for CycleType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0.iter().join(","))
    }
}

impl CycleType {
    /// Number of cycles, i.e. the number of parts.
    pub fn num_cycles(&self) -> usize {
        self.0.len()
    }

    /// Size of the permuted set.
    pub fn order(&self) -> usize {
        self.0.iter().sum()
    }

    /// All partitions of `p` in reverse-lexicographic order
    /// (`[p]`, ..., `[1, .., 1]`).
    pub fn partitions(p: usize) -> Vec<CycleType> {
        fn rec(rest: usize, max: usize, cur: &mut Vec<usize>, out: &mut Vec<CycleType>) {
            if rest == 0 {
                out.push(CycleType(cur.clone()));
                return;
            }
            for part in (1..=rest.min(max)).rev() {
                cur.push(part);
                rec(rest - part, part, cur, out);
                cur.pop();
            }
        }
        let mut out = Vec::new();
        rec(p, p, &mut Vec::new(), &mut out);
        out
    }
}

impl Permutation {
    /// Checks that `images` is a bijection on `{0, .., images.len()-1}`.
    pub fn new(images: Vec<usize>) -> Result<Self> {
        let p = images.len();
        let mut seen = vec![false; p];
        for &i in &images {
            if i >= p || seen[i] {
                return Err(Error::ContractViolation(format!(
                    "{images:?} is not a bijection on 0..{p}"
                )));
            }
            seen[i] = true;
        }
        Ok(Self { images })
    }

    pub fn identity(p: usize) -> Self {
        Self {
            images: (0..p).collect(),
        }
    }

    /// The transposition swapping `a` and `b`.
    pub fn transposition(p: usize, a: usize, b: usize) -> Self {
        let mut images: Vec<usize> = (0..p).collect();
        images.swap(a, b);
        Self { images }
    }

    /// The cycle `0 -> 1 -> .. -> p-1 -> 0`.
    pub fn long_cycle(p: usize) -> Self {
        Self {
            images: (0..p).map(|k| (k + 1) % p).collect(),
        }
    }

    /// All `p!` permutations in lexicographic order of their image lists;
    /// the identity comes first.
    pub fn all(p: usize) -> Vec<Self> {
        (0..p)
            .permutations(p)
            .map(|images| Self { images })
            .collect()
    }

    pub fn order(&self) -> usize {
        self.images.len()
    }

    pub fn map(&self) -> &[usize] {
        &self.images
    }

    pub fn apply(&self, k: usize) -> usize {
        self.images[k]
    }

    pub fn is_identity(&self) -> bool {
        self.images.iter().enumerate().all(|(k, &i)| k == i)
    }

    /// `self ∘ other`: apply `other` first.
    pub fn compose(&self, other: &Self) -> Self {
        assert_eq!(self.order(), other.order());
        Self {
            images: other.images.iter().map(|&k| self.images[k]).collect(),
        }
    }

    pub fn inverse(&self) -> Self {
        let mut images = vec![0; self.order()];
        for (k, &i) in self.images.iter().enumerate() {
            images[i] = k;
        }
        Self { images }
    }

    /// Cycles, each listed from its smallest element following `k -> self(k)`.
    /// Cycles are ordered by their smallest element; fixed points included.
    pub fn cycles(&self) -> Vec<Vec<usize>> {
        let p = self.order();
        let mut seen = vec![false; p];
        let mut out = Vec::new();
        for start in 0..p {
            if seen[start] {
                continue;
            }
            let mut cycle = Vec::new();
            let mut k = start;
            while !seen[k] {
                seen[k] = true;
                cycle.push(k);
                k = self.images[k];
            }
            out.push(cycle);
        }
        out
    }

    pub fn num_cycles(&self) -> usize {
        self.cycles().len()
    }

    pub fn cycle_type(&self) -> CycleType {
        let mut parts: Vec<usize> = self.cycles().iter().map(Vec::len).collect();
        parts.sort_unstable_by(|a, b| b.cmp(a));
        CycleType(parts)
    }
}
