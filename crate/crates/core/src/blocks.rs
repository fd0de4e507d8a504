//! Equal-size partitions of `[0, N)` into `K` blocks.
//!
//! When `K` does not divide `N` the trailing `N mod K` indices of the
//! (possibly permuted) index list belong to no block for that draw.

use rand::seq::SliceRandom;

use crate::error::{param, Result};
use crate::rng::Rng;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockPartition {
    blocks: Vec<Vec<usize>>,
    block_size: usize,
    n: usize,
}

/// How a solver obtains its partitions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BlockMode {
    /// One contiguous partition for the whole run.
    Fixed,
    /// A fresh uniform partition before every descent and every ascent step.
    #[default]
    RandomEachStep,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct BlockPolicy {
    pub mode: BlockMode,
    pub seed: u64,
}

impl BlockPartition {
    /// Builds a partition from explicit blocks, checking disjointness and
    /// equal sizes.
    pub fn from_blocks(n: usize, blocks: Vec<Vec<usize>>) -> Result<Self> {
        let Some(first) = blocks.first() else {
            return param("a partition needs at least one block");
        };
        let block_size = first.len();
        if block_size == 0 {
            return param("blocks must be non-empty");
        }
        let mut seen = vec![false; n];
        for b in &blocks {
            if b.len() != block_size {
                return param("blocks must all have the same size");
            }
            for &i in b {
                if i >= n {
                    return param(format!("index {i} out of range for N={n}"));
                }
                if std::mem::replace(&mut seen[i], true) {
                    return param(format!("index {i} appears in two blocks"));
                }
            }
        }
        Ok(Self { blocks, block_size, n })
    }

    pub fn k(&self) -> usize {
        self.blocks.len()
    }

    pub fn block_size(&self) -> usize {
        self.block_size
    }

    /// Size of the index set the partition was drawn from.
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn block(&self, k: usize) -> &[usize] {
        &self.blocks[k]
    }

    pub fn blocks(&self) -> &[Vec<usize>] {
        &self.blocks
    }

    fn chunk(n: usize, k: usize, order: &[usize]) -> Self {
        let size = n / k;
        let blocks = order[..k * size]
            .chunks_exact(size)
            .map(|c| {
                let mut b = c.to_vec();
                b.sort_unstable();
                b
            })
            .collect();
        Self { blocks, block_size: size, n }
    }
}

fn check(n: usize, k: usize) -> Result<()> {
    if k == 0 || k > n {
        return param(format!("number of blocks K={k} must satisfy 1 <= K <= N={n}"));
    }
    Ok(())
}

/// Contiguous blocks of size `N / K`: the first block holds the first
/// `N / K` indices, and so on.
pub fn partition_fixed(n: usize, k: usize) -> Result<BlockPartition> {
    check(n, k)?;
    let order: Vec<usize> = (0..n).collect();
    Ok(BlockPartition::chunk(n, k, &order))
}

/// A uniformly random partition drawn from `rng`. Indices inside each block
/// are stored sorted; block membership is what matters.
pub fn partition_random(n: usize, k: usize, rng: &mut Rng) -> Result<BlockPartition> {
    check(n, k)?;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    Ok(BlockPartition::chunk(n, k, &order))
}
