//! Alternating descent-ascent solvers for the MOM minmax estimator
//!
//! ```text
//! t_hat in argmin_t sup_t' MOM_K[l_t - l_t'] + lambda (|t| - |t'|)
//! ```
//!
//! Every half-step picks the block whose mean loss difference is the median
//! and moves one player using that block's rows only. Both players take
//! the same kind of step: on the selected block the maximizing player's
//! objective `-P_k l_t' - lambda |t'|` is, up to sign, the block penalized
//! least-squares objective.

mod step;

use std::collections::HashMap;
use std::fmt;
use std::io::Write;
use std::rc::Rc;
use std::str::FromStr;

use nalgebra::DVector;

pub use step::{
    block_objective, compute_step, operator_norm, step_admm, step_ccd, step_proximal,
    step_subgradient, AdmmState, AdmmSystem, BlockData, CcdSweep, Step, StepPolicy,
};

use crate::blocks::{partition_fixed, partition_random, BlockMode, BlockPartition, BlockPolicy};
use crate::csvio::fmt_f64;
use crate::dataset::Dataset;
use crate::error::{param, Error, Result};
use crate::mom::{block_means_of, loss_differences, mom, residuals};
use crate::regularizers::{norm, subgradient, Penalty};
use crate::rng::{derive_seed, stream, substream, Rng};

/// Coordinates beyond this magnitude are treated as divergence.
pub const DIVERGENCE_LIMIT: f64 = 1e12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Algorithm {
    Subgradient,
    Proximal,
    #[default]
    Admm,
    Ccd,
}

impl Algorithm {
    pub fn as_str(self) -> &'static str {
        match self {
            Algorithm::Subgradient => "subgradient",
            Algorithm::Proximal => "proximal",
            Algorithm::Admm => "admm",
            Algorithm::Ccd => "ccd",
        }
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "subgradient" => Algorithm::Subgradient,
            "proximal" => Algorithm::Proximal,
            "admm" => Algorithm::Admm,
            "ccd" => Algorithm::Ccd,
            other => return param(format!("unknown algorithm `{other}`")),
        })
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Which player is the estimator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Mode {
    /// Descend in `t` first; return `t`.
    #[default]
    Minmax,
    /// Ascend in `t'` first; return `t'`.
    Maxmin,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    pub algorithm: Algorithm,
    pub k: usize,
    pub lambda: f64,
    pub penalty: Penalty,
    pub block_policy: BlockPolicy,
    pub max_iters: usize,
    pub eps_stop: f64,
    pub step_policy: StepPolicy,
    pub admm_rho: f64,
    pub mode: Mode,
    pub seed: u64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            algorithm: Algorithm::Admm,
            k: 1,
            lambda: 0.1,
            penalty: Penalty::L1,
            block_policy: BlockPolicy::default(),
            max_iters: 200,
            eps_stop: 1e-6,
            step_policy: StepPolicy::InverseLipschitz,
            admm_rho: 10.0,
            mode: Mode::Minmax,
            seed: 0,
        }
    }
}

impl SolverConfig {
    /// Checks everything that does not depend on the data.
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return param("K must be positive");
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return param(format!("lambda must be finite and non-negative, got {}", self.lambda));
        }
        if self.max_iters == 0 {
            return param("max_iters must be positive");
        }
        if !(self.eps_stop > 0.0) {
            return param("eps_stop must be positive");
        }
        if !(self.admm_rho > 0.0 && self.admm_rho.is_finite()) {
            return param("admm_rho must be positive");
        }
        if let StepPolicy::Armijo { rho, delta, gamma0 } = self.step_policy {
            if !(rho > 0.0 && rho < 1.0) {
                return param("armijo rho must lie in (0, 1)");
            }
            if !(delta > 0.0) || !(gamma0 > 0.0) {
                return param("armijo delta and gamma0 must be positive");
            }
        }
        if self.algorithm == Algorithm::Ccd && matches!(self.penalty, Penalty::Slope(_)) {
            return param("coordinate descent has a closed form for the l1 penalty only");
        }
        Ok(())
    }

    /// Checks against a concrete dataset.
    pub fn validate_for(&self, dataset: &Dataset) -> Result<()> {
        self.validate()?;
        if dataset.n() == 0 {
            return param("dataset is empty");
        }
        if self.k > dataset.n() {
            return param(format!("K={} exceeds the number of rows N={}", self.k, dataset.n()));
        }
        self.penalty.validate(dataset.d())?;
        if !dataset.is_finite() {
            return param("dataset contains non-finite values");
        }
        Ok(())
    }
}

/// One iteration (a descent and an ascent half-step).
#[derive(Debug, Clone, PartialEq)]
pub struct IterRecord {
    /// `MOM_K[l_t - l_t'] + lambda (|t| - |t'|)` after the iteration.
    pub objective: f64,
    pub descent_block: usize,
    pub ascent_block: usize,
    /// `max(|t_{p+1} - t_p|, |t'_{p+1} - t'_p|)`.
    pub step_norm: f64,
    /// Rows of the descent median block.
    pub descent_rows: Vec<usize>,
    /// Rows of the ascent median block.
    pub ascent_rows: Vec<usize>,
    /// All block means coincided at the descent (resp. ascent) selection, so
    /// the median block carried no information (e.g. when `t = t'`).
    pub descent_tied: bool,
    pub ascent_tied: bool,
    /// A block design or one of its columns was identically zero.
    pub degenerate: bool,
}

impl IterRecord {
    /// Rows of the informative selections of this iteration.
    pub fn selected_indices(&self) -> impl Iterator<Item = usize> + '_ {
        let d: &[usize] = if self.descent_tied { &[] } else { &self.descent_rows };
        let a: &[usize] = if self.ascent_tied { &[] } else { &self.ascent_rows };
        d.iter().chain(a).copied()
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct IterTrace {
    pub records: Vec<IterRecord>,
}

impl IterTrace {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn objectives(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.objective).collect()
    }

    /// `iter,objective,descent_block,ascent_block,step_norm`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "iter,objective,descent_block,ascent_block,step_norm")?;
        for (i, r) in self.records.iter().enumerate() {
            writeln!(
                out,
                "{},{},{},{},{}",
                i + 1,
                fmt_f64(r.objective),
                r.descent_block,
                r.ascent_block,
                fmt_f64(r.step_norm)
            )?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Estimate {
    pub t_hat: DVector<f64>,
    /// Final iterate of the other player.
    pub t_adv: DVector<f64>,
    pub trace: IterTrace,
    pub converged: bool,
    pub iterations_used: usize,
}

/// The last recorded minmax objective; zero at a saddle point.
pub fn duality_gap(trace: &IterTrace) -> Result<f64> {
    match trace.records.last() {
        Some(r) => Ok(r.objective),
        None => param("duality gap of an empty trace"),
    }
}

/// `MOM_K[l_t - l_t'] + lambda (pen(t) - pen(t'))` on a given partition.
pub fn minmax_objective(
    dataset: &Dataset,
    partition: &BlockPartition,
    t: &DVector<f64>,
    t_prime: &DVector<f64>,
    lambda: f64,
    penalty: &Penalty,
) -> Result<f64> {
    let diffs = loss_differences(&residuals(dataset, t), &residuals(dataset, t_prime));
    let m = mom(&block_means_of(&diffs, partition))?.value;
    Ok(m + lambda * (norm(penalty, t)? - norm(penalty, t_prime)?))
}

/// Fits the estimator described by `config`.
pub fn fit(dataset: &Dataset, config: &SolverConfig) -> Result<Estimate> {
    fit_with_monitor(dataset, config, |_, _, _| {})
}

/// Like [`fit`], calling `monitor(iteration, estimator, adversary)` after
/// every iteration (1-based).
pub fn fit_with_monitor<M>(dataset: &Dataset, config: &SolverConfig, mut monitor: M) -> Result<Estimate>
where
    M: FnMut(usize, &DVector<f64>, &DVector<f64>),
{
    config.validate_for(dataset)?;
    let mut run = Run::new(dataset, config)?;
    let mut converged = false;
    for p in 1..=config.max_iters {
        let record = run.iterate(p)?;
        let small = record.step_norm < config.eps_stop;
        run.trace.records.push(record);
        let (est, adv) = run.estimator_pair();
        monitor(p, est, adv);
        if small {
            converged = true;
            break;
        }
    }
    let iterations_used = run.trace.len();
    let (t_hat, t_adv) = {
        let (e, a) = run.estimator_pair();
        (e.clone(), a.clone())
    };
    Ok(Estimate {
        t_hat,
        t_adv,
        trace: run.trace,
        converged,
        iterations_used,
    })
}

/// One player: its iterate, residuals and (for ADMM) splitting state.
struct Player {
    admm: AdmmState,
    residuals: DVector<f64>,
}

impl Player {
    fn new(dataset: &Dataset) -> Self {
        let admm = AdmmState::zeros(dataset.d());
        let residuals = residuals(dataset, &admm.t);
        Self { admm, residuals }
    }

    fn t(&self) -> &DVector<f64> {
        &self.admm.t
    }
}

struct CachedBlock {
    data: BlockData,
    admm: Option<AdmmSystem>,
    step: Option<f64>,
}

const CACHE_LIMIT: usize = 64;

struct Run<'a> {
    dataset: &'a Dataset,
    config: &'a SolverConfig,
    fixed: Option<BlockPartition>,
    rng: Rng,
    minimizer: Player,
    maximizer: Player,
    cache: HashMap<Vec<usize>, Rc<CachedBlock>>,
    trace: IterTrace,
}

struct HalfStep {
    block: usize,
    rows: Vec<usize>,
    tied: bool,
    displacement: f64,
    degenerate: bool,
}

#[derive(Clone, Copy, PartialEq)]
enum Side {
    Min,
    Max,
}

impl<'a> Run<'a> {
    fn new(dataset: &'a Dataset, config: &'a SolverConfig) -> Result<Self> {
        let fixed = match config.block_policy.mode {
            BlockMode::Fixed => Some(partition_fixed(dataset.n(), config.k)?),
            BlockMode::RandomEachStep => None,
        };
        let seed = derive_seed(config.seed, &[config.block_policy.seed]);
        Ok(Self {
            dataset,
            config,
            fixed,
            rng: substream(seed, stream::BLOCKS),
            minimizer: Player::new(dataset),
            maximizer: Player::new(dataset),
            cache: HashMap::new(),
            trace: IterTrace::default(),
        })
    }

    fn estimator_pair(&self) -> (&DVector<f64>, &DVector<f64>) {
        match self.config.mode {
            Mode::Minmax => (self.minimizer.t(), self.maximizer.t()),
            Mode::Maxmin => (self.maximizer.t(), self.minimizer.t()),
        }
    }

    fn partition(&mut self) -> Result<BlockPartition> {
        match &self.fixed {
            Some(p) => Ok(p.clone()),
            None => partition_random(self.dataset.n(), self.config.k, &mut self.rng),
        }
    }

    fn iterate(&mut self, p: usize) -> Result<IterRecord> {
        let (first, second) = match self.config.mode {
            Mode::Minmax => (Side::Min, Side::Max),
            Mode::Maxmin => (Side::Max, Side::Min),
        };
        let (a, _) = self.half_step(first, p)?;
        let (b, partition) = self.half_step(second, p)?;
        let (descent, ascent) = if first == Side::Min { (a, b) } else { (b, a) };

        let objective = self.objective(&partition)?;
        if !objective.is_finite() {
            return Err(Error::Numeric {
                iteration: p,
                message: "objective is not finite".into(),
            });
        }
        Ok(IterRecord {
            objective,
            descent_block: descent.block,
            ascent_block: ascent.block,
            step_norm: descent.displacement.max(ascent.displacement),
            descent_rows: descent.rows,
            ascent_rows: ascent.rows,
            descent_tied: descent.tied,
            ascent_tied: ascent.tied,
            degenerate: descent.degenerate || ascent.degenerate,
        })
    }

    fn objective(&self, partition: &BlockPartition) -> Result<f64> {
        let diffs = loss_differences(&self.minimizer.residuals, &self.maximizer.residuals);
        let m = mom(&block_means_of(&diffs, partition))?.value;
        let pen = &self.config.penalty;
        Ok(m + self.config.lambda * (norm(pen, self.minimizer.t())? - norm(pen, self.maximizer.t())?))
    }

    fn block(&mut self, rows: &[usize]) -> Rc<CachedBlock> {
        if let Some(b) = self.cache.get(rows) {
            return Rc::clone(b);
        }
        let (x, y) = self.dataset.rows(rows);
        let data = BlockData::new(x, y);
        let admm = match self.config.algorithm {
            // `admm_rho` weighs the unnormalized block loss `|Y_k - X_k t|^2 / 2`;
            // on the normalized loss used here that is `2 rho / m`.
            Algorithm::Admm => AdmmSystem::new(&data, 2.0 * self.config.admm_rho / rows.len() as f64).ok(),
            _ => None,
        };
        let step = match self.config.step_policy {
            StepPolicy::InverseLipschitz if matches!(self.config.algorithm, Algorithm::Subgradient | Algorithm::Proximal) => {
                let zero = DVector::zeros(0);
                let s = compute_step(StepPolicy::InverseLipschitz, &data, &zero, &zero, 0.0, &Penalty::None);
                (!s.zero_block).then_some(s.size)
            }
            _ => None,
        };
        let entry = Rc::new(CachedBlock { data, admm, step });
        if self.cache.len() >= CACHE_LIMIT {
            self.cache.clear();
        }
        self.cache.insert(rows.to_vec(), Rc::clone(&entry));
        entry
    }

    fn half_step(&mut self, side: Side, p: usize) -> Result<(HalfStep, BlockPartition)> {
        let partition = self.partition()?;
        let diffs = loss_differences(&self.minimizer.residuals, &self.maximizer.residuals);
        let means = block_means_of(&diffs, &partition);
        let tied = means.len() > 1 && means.iter().all(|&m| m == means[0]);
        // Every block is a median when all means coincide (as at t = t').
        // Break the tie with the median block of the moving player's own
        // loss so that a block dominated by a gross outlier is not chosen.
        let selected = if tied {
            let own = match side {
                Side::Min => &self.minimizer.residuals,
                Side::Max => &self.maximizer.residuals,
            };
            let losses: Vec<f64> = own.iter().map(|r| r * r).collect();
            mom(&block_means_of(&losses, &partition))?
        } else {
            mom(&means)?
        };
        let rows = partition.block(selected.index).to_vec();
        let block = self.block(&rows);

        let config = self.config;
        let player = match side {
            Side::Min => &mut self.minimizer,
            Side::Max => &mut self.maximizer,
        };
        let old = player.admm.t.clone();
        let mut degenerate = false;
        match config.algorithm {
            Algorithm::Subgradient | Algorithm::Proximal => {
                let step = match block.step {
                    Some(s) if config.step_policy == StepPolicy::InverseLipschitz => s,
                    _ => {
                        let dir = block.data.gradient(&old) + subgradient(&config.penalty, &old) * config.lambda;
                        let s = compute_step(config.step_policy, &block.data, &old, &dir, config.lambda, &config.penalty);
                        degenerate |= s.zero_block;
                        s.size
                    }
                };
                player.admm.t = if config.algorithm == Algorithm::Subgradient {
                    step_subgradient(&old, &block.data, config.lambda, &config.penalty, step)
                } else {
                    step_proximal(&old, &block.data, config.lambda, &config.penalty, step)?
                };
            }
            Algorithm::Admm => {
                let system = match &block.admm {
                    Some(s) => s,
                    None => {
                        return Err(Error::Numeric {
                            iteration: p,
                            message: "ADMM system is not positive definite".into(),
                        })
                    }
                };
                player.admm = system.step(&player.admm, config.lambda, &config.penalty)?;
            }
            Algorithm::Ccd => {
                let lambda = match config.penalty {
                    Penalty::None => 0.0,
                    _ => config.lambda * block.data.rows() as f64,
                };
                let sweep = step_ccd(&old, &block.data, lambda);
                degenerate |= sweep.zero_column;
                player.admm.t = sweep.t;
            }
        }

        let t = &player.admm.t;
        if t.iter().any(|v| !v.is_finite() || v.abs() > DIVERGENCE_LIMIT) {
            return Err(Error::Numeric {
                iteration: p,
                message: format!("{} iterate diverged", if side == Side::Min { "descent" } else { "ascent" }),
            });
        }
        let displacement = (t - &old).norm();
        player.residuals = residuals(self.dataset, t);
        Ok((
            HalfStep {
                block: selected.index,
                rows,
                tied,
                displacement,
                degenerate,
            },
            partition,
        ))
    }
}
