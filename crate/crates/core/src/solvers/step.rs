//! Single updates on the rows of one block.
//!
//! Block losses are normalized by the block size: the smooth part of the
//! block objective is `F_k(t) = |Y_k - X_k t|^2 / m + lambda pen(t)`, whose
//! gradient is `-(2/m) X_k^T (Y_k - X_k t)`. Step sizes therefore do not
//! depend on how many rows a block holds.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};
use crate::regularizers::{norm, prox_l1, prox_slope, subgradient, Penalty};

/// Rows of one block.
#[derive(Debug, Clone)]
pub struct BlockData {
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
}

impl BlockData {
    pub fn new(x: DMatrix<f64>, y: DVector<f64>) -> Self {
        assert_eq!(x.nrows(), y.len(), "block rows and responses disagree");
        Self { x, y }
    }

    pub fn rows(&self) -> usize {
        self.x.nrows()
    }

    fn scale(&self) -> f64 {
        2.0 / self.rows() as f64
    }

    /// `|Y_k - X_k t|^2 / m`.
    pub fn loss(&self, t: &DVector<f64>) -> f64 {
        (&self.y - &self.x * t).norm_squared() / self.rows() as f64
    }

    /// Gradient of [`BlockData::loss`].
    pub fn gradient(&self, t: &DVector<f64>) -> DVector<f64> {
        let r = &self.y - &self.x * t;
        self.x.tr_mul(&r) * (-self.scale())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum StepPolicy {
    /// `1 / L` with `L = 2 |X_k|_op^2 / m` the gradient's Lipschitz constant.
    #[default]
    InverseLipschitz,
    /// Backtracking from `gamma0` by factor `rho` until sufficient decrease.
    Armijo { rho: f64, delta: f64, gamma0: f64 },
}

/// A step size and whether the block was degenerate (all-zero design).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Step {
    pub size: f64,
    pub zero_block: bool,
}

const POWER_ITERS: usize = 50;
const POWER_TOL: f64 = 1e-8;
const MAX_BACKTRACKS: usize = 100;

/// Largest singular value of `x` by power iteration on `x^T x`.
pub fn operator_norm(x: &DMatrix<f64>) -> f64 {
    let d = x.ncols();
    if d == 0 || x.nrows() == 0 {
        return 0.0;
    }
    // Deterministic start with no special alignment.
    let mut v = DVector::from_fn(d, |j, _| 1.0 + (j % 7) as f64 / 7.0);
    v /= v.norm();
    let mut sigma2 = 0.0;
    for _ in 0..POWER_ITERS {
        let w = x.tr_mul(&(x * &v));
        let n = w.norm();
        if n == 0.0 {
            return 0.0;
        }
        v = w / n;
        let done = (n - sigma2).abs() <= POWER_TOL * n;
        sigma2 = n;
        if done {
            break;
        }
    }
    sigma2.sqrt()
}

/// Block objective `F_k(t) = |Y_k - X_k t|^2 / m + lambda pen(t)`.
pub fn block_objective(block: &BlockData, t: &DVector<f64>, lambda: f64, penalty: &Penalty) -> f64 {
    block.loss(t) + lambda * norm(penalty, t).unwrap_or(f64::NAN)
}

/// Step size for a move from `t` along `-direction`.
pub fn compute_step(
    policy: StepPolicy,
    block: &BlockData,
    t: &DVector<f64>,
    direction: &DVector<f64>,
    lambda: f64,
    penalty: &Penalty,
) -> Step {
    match policy {
        StepPolicy::InverseLipschitz => {
            let op = operator_norm(&block.x);
            if op == 0.0 {
                return Step { size: 1.0, zero_block: true };
            }
            Step {
                size: 1.0 / (block.scale() * op * op),
                zero_block: false,
            }
        }
        StepPolicy::Armijo { rho, delta, gamma0 } => {
            let zero_block = block.x.iter().all(|v| *v == 0.0);
            let f0 = block_objective(block, t, lambda, penalty);
            let g2 = direction.norm_squared();
            let mut gamma = gamma0;
            for _ in 0..MAX_BACKTRACKS {
                let trial = t - direction * gamma;
                if block_objective(block, &trial, lambda, penalty) <= f0 - delta * gamma * g2 {
                    break;
                }
                gamma *= rho;
            }
            Step { size: gamma, zero_block }
        }
    }
}

/// `t - step (grad F_k(t) + lambda g)` with `g` a penalty subgradient.
pub fn step_subgradient(
    t: &DVector<f64>,
    block: &BlockData,
    lambda: f64,
    penalty: &Penalty,
    step: f64,
) -> DVector<f64> {
    let direction = block.gradient(t) + subgradient(penalty, t) * lambda;
    t - direction * step
}

/// `prox_{step lambda pen}(t - step grad F_k(t))`.
pub fn step_proximal(
    t: &DVector<f64>,
    block: &BlockData,
    lambda: f64,
    penalty: &Penalty,
    step: f64,
) -> Result<DVector<f64>> {
    let forward = t - block.gradient(t) * step;
    penalty_prox(&forward, lambda * step, penalty)
}

pub(crate) fn penalty_prox(v: &DVector<f64>, level: f64, penalty: &Penalty) -> Result<DVector<f64>> {
    match penalty {
        Penalty::None => Ok(v.clone()),
        Penalty::L1 => prox_l1(v, level),
        Penalty::Slope(beta) => prox_slope(v, level, beta),
    }
}

/// Primal, split and scaled-free dual variables of one ADMM player.
#[derive(Debug, Clone, PartialEq)]
pub struct AdmmState {
    pub t: DVector<f64>,
    pub z: DVector<f64>,
    pub u: DVector<f64>,
}

impl AdmmState {
    pub fn zeros(d: usize) -> Self {
        Self {
            t: DVector::zeros(d),
            z: DVector::zeros(d),
            u: DVector::zeros(d),
        }
    }
}

/// Factored `A = (2/m) X_k^T X_k + rho I` for one block.
///
/// When the block has fewer rows than columns the `m x m` system
/// `rho I + (2/m) X_k X_k^T` is factored instead and `A^{-1}` applied through
/// the Woodbury identity; both are symmetric positive definite.
#[derive(Debug, Clone)]
pub struct AdmmSystem {
    rho: f64,
    scale: f64,
    x: DMatrix<f64>,
    xty: DVector<f64>,
    factor: Factor,
}

#[derive(Debug, Clone)]
enum Factor {
    Primal(Cholesky<f64, Dyn>),
    Dual(Cholesky<f64, Dyn>),
}

impl AdmmSystem {
    pub fn new(block: &BlockData, rho: f64) -> Result<Self> {
        let (m, d) = block.x.shape();
        let scale = block.scale();
        let failed = || Error::Numeric {
            iteration: 0,
            message: "ADMM system is not positive definite".into(),
        };
        let factor = if m < d {
            let mut g = &block.x * block.x.transpose() * scale;
            for i in 0..m {
                g[(i, i)] += rho;
            }
            Factor::Dual(Cholesky::new(g).ok_or_else(failed)?)
        } else {
            let mut g = block.x.tr_mul(&block.x) * scale;
            for i in 0..d {
                g[(i, i)] += rho;
            }
            Factor::Primal(Cholesky::new(g).ok_or_else(failed)?)
        };
        Ok(Self {
            rho,
            scale,
            xty: block.x.tr_mul(&block.y) * scale,
            x: block.x.clone(),
            factor,
        })
    }

    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        match &self.factor {
            Factor::Primal(chol) => chol.solve(b),
            Factor::Dual(chol) => {
                let w = chol.solve(&(&self.x * b));
                (b - self.x.tr_mul(&w) * self.scale) / self.rho
            }
        }
    }

    /// One ADMM round:
    ///
    /// ```text
    /// t <- A^{-1} ((2/m) X^T Y + rho z - u)
    /// z <- prox_{(lambda/rho) pen}(t + u / rho)
    /// u <- u + rho (t - z)
    /// ```
    pub fn step(&self, state: &AdmmState, lambda: f64, penalty: &Penalty) -> Result<AdmmState> {
        let t = self.solve(&(&self.xty + &state.z * self.rho - &state.u));
        let z = penalty_prox(&(&t + &state.u / self.rho), lambda / self.rho, penalty)?;
        let u = &state.u + (&t - &z) * self.rho;
        Ok(AdmmState { t, z, u })
    }
}

/// One ADMM round on `block`, factoring its system from scratch.
pub fn step_admm(
    state: &AdmmState,
    block: &BlockData,
    lambda: f64,
    penalty: &Penalty,
    rho: f64,
) -> Result<AdmmState> {
    if !(rho > 0.0) {
        return Err(Error::Parameter(format!("ADMM rho must be positive, got {rho}")));
    }
    AdmmSystem::new(block, rho)?.step(state, lambda, penalty)
}

/// Result of a coordinate sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct CcdSweep {
    pub t: DVector<f64>,
    /// A column of the block design was identically zero.
    pub zero_column: bool,
}

/// One Gauss-Seidel sweep `j = 0..d` of the exact coordinate minimizer of
/// `|Y_k - X_k t|^2 + lambda |t|_1` (un-normalized block sum):
///
/// `t_j = R_j / |X_j|^2 (1 - lambda / (2 |R_j|))_+`,
/// `R_j = X_j^T (Y_k - sum_{q != j} t_q X_q)`.
pub fn step_ccd(t: &DVector<f64>, block: &BlockData, lambda: f64) -> CcdSweep {
    let x = &block.x;
    let mut t = t.clone();
    let mut r = &block.y - x * &t;
    let mut zero_column = false;
    for j in 0..x.ncols() {
        let col = x.column(j);
        let nj = col.norm_squared();
        if t[j] != 0.0 {
            r.axpy(t[j], &col, 1.0);
        }
        if nj == 0.0 {
            zero_column = true;
            t[j] = 0.0;
            continue;
        }
        let rj = col.dot(&r);
        let shrink = if rj == 0.0 { 0.0 } else { (1.0 - lambda / (2.0 * rj.abs())).max(0.0) };
        t[j] = rj / nj * shrink;
        if t[j] != 0.0 {
            r.axpy(-t[j], &col, 1.0);
        }
    }
    CcdSweep { t, zero_column }
}
