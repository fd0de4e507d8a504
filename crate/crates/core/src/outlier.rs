//! Depth scores: how often each row sits in the median block when blocks are
//! redrawn at every step. Rows that are never selected are outlier candidates.

use std::io::Write;

use crate::blocks::BlockMode;
use crate::dataset::Dataset;
use crate::error::{param, Result};
use crate::solvers::{fit, Estimate, SolverConfig};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DepthScores {
    /// One count per dataset row.
    pub counts: Vec<u64>,
    pub iterations: usize,
    /// Median-block selections that were counted. A selection made while all
    /// block means were equal carries no ranking and is skipped, which only
    /// happens on the first iteration from `t = t' = 0`.
    pub selections: usize,
    pub block_size: usize,
    /// One descent and one ascent selection per iteration.
    pub selections_per_iteration: usize,
}

impl DepthScores {
    /// Sums the counts of independent runs on the same rows.
    pub fn merge(&self, other: &DepthScores) -> Result<DepthScores> {
        if self.counts.len() != other.counts.len() || self.block_size != other.block_size {
            return param("depth scores come from different datasets or block sizes");
        }
        Ok(DepthScores {
            counts: self.counts.iter().zip(&other.counts).map(|(a, b)| a + b).collect(),
            iterations: self.iterations + other.iterations,
            selections: self.selections + other.selections,
            block_size: self.block_size,
            selections_per_iteration: self.selections_per_iteration,
        })
    }

    /// `index,count,label`; the label column is empty without provenance.
    pub fn write_csv<W: Write>(&self, dataset: &Dataset, mut out: W) -> Result<()> {
        writeln!(out, "index,count,label")?;
        for (i, c) in self.counts.iter().enumerate() {
            let label = dataset.labels().map_or("", |l| l[i].as_str());
            writeln!(out, "{i},{c},{label}")?;
        }
        Ok(())
    }
}

/// Fits with random blocks and counts median-block memberships.
pub fn depth_scores(dataset: &Dataset, config: &SolverConfig) -> Result<(DepthScores, Estimate)> {
    if config.block_policy.mode != BlockMode::RandomEachStep {
        return param("depth scores need blocks redrawn at every step");
    }
    let est = fit(dataset, config)?;
    Ok((scores_from(dataset.n(), config.k, &est), est))
}

pub(crate) fn scores_from(n: usize, k: usize, est: &Estimate) -> DepthScores {
    let mut counts = vec![0u64; n];
    let mut selections = 0;
    for r in &est.trace.records {
        selections += usize::from(!r.descent_tied) + usize::from(!r.ascent_tied);
        for i in r.selected_indices() {
            counts[i] += 1;
        }
    }
    DepthScores {
        counts,
        iterations: est.iterations_used,
        selections,
        block_size: n / k,
        selections_per_iteration: 2,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FlagMethod {
    /// Rows never selected.
    ZeroScore,
    /// Rows below the largest jump in the sorted counts.
    LargestGap,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Flagged {
    /// Ascending row indices.
    pub indices: Vec<usize>,
    /// Set when `LargestGap` found all counts equal.
    pub no_gap: bool,
}

pub fn flag_outliers(scores: &DepthScores, method: FlagMethod) -> Flagged {
    let counts = &scores.counts;
    match method {
        FlagMethod::ZeroScore => Flagged {
            indices: (0..counts.len()).filter(|&i| counts[i] == 0).collect(),
            no_gap: false,
        },
        FlagMethod::LargestGap => {
            let mut sorted = counts.clone();
            sorted.sort_unstable();
            // First maximal gap wins, keeping the flagged set small.
            let best = sorted
                .windows(2)
                .map(|w| w[1] - w[0])
                .enumerate()
                .fold(None, |best: Option<(usize, u64)>, (i, g)| match best {
                    Some((_, bg)) if bg >= g => best,
                    _ if g > 0 => Some((i, g)),
                    _ => best,
                });
            match best {
                None => Flagged { indices: Vec::new(), no_gap: true },
                Some((i, _)) => {
                    let cut = sorted[i];
                    Flagged {
                        indices: (0..counts.len()).filter(|&j| counts[j] <= cut).collect(),
                        no_gap: false,
                    }
                }
            }
        }
    }
}
