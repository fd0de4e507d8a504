//! Hyperparameter selection and reference rates.
//!
//! [`mom_cv`] is a V-fold cross validation in which both averages are made
//! robust: the test loss of each fold is a median-of-means over `K'` blocks
//! of the test fold, and the fold scores are combined by a median.

use std::io::Write;

use nalgebra::DVector;
use rand::seq::SliceRandom;
use rayon::prelude::*;

use crate::blocks::partition_fixed;
use crate::csvio::fmt_f64;
use crate::dataset::{ell2_error, generate, repetition_seed, Dataset, GenSpec};
use crate::error::{param, Error, Result};
use crate::mom::{block_means_of, mom, quantile};
use crate::rng::{derive_seed, stream, substream};
use crate::solvers::{fit, Estimate, SolverConfig};

/// How fold scores are combined into the criterion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FoldAggregate {
    /// Median over folds (MOM cross validation).
    #[default]
    Median,
    /// Mean over folds (classical cross validation when `K' = 1`).
    Mean,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvSpec {
    pub v: usize,
    pub grid_k: Vec<usize>,
    pub grid_lambda: Vec<f64>,
    /// Number of blocks of the MOM test criterion on each fold.
    pub k_prime: usize,
    pub aggregate: FoldAggregate,
    pub seed: u64,
}

impl Default for CvSpec {
    fn default() -> Self {
        let grid_k = vec![1, 2, 4, 8, 16, 24, 32];
        let v = 5;
        Self {
            k_prime: grid_k.iter().max().copied().unwrap_or(1) / v,
            v,
            grid_k,
            grid_lambda: (0..=10).map(|i| i as f64 / 10.0).collect(),
            aggregate: FoldAggregate::Median,
            seed: 0,
        }
    }
}

/// Test loss of one `(K, lambda)` fit on one fold.
#[derive(Debug, Clone, PartialEq)]
pub struct FoldScore {
    pub k: usize,
    pub lambda: f64,
    pub fold: usize,
    /// `+inf` when the fit failed numerically.
    pub loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvResult {
    pub best_k: usize,
    pub best_lambda: f64,
    /// `criterion[i][j]` belongs to `(grid_k[i], grid_lambda[j])`.
    pub criterion: Vec<Vec<f64>>,
    pub fold_details: Vec<FoldScore>,
    /// Fit on the full dataset at the selected pair.
    pub refit: Estimate,
}

impl CvResult {
    /// `K,lambda,criterion`, grid order.
    pub fn write_csv<W: Write>(&self, spec: &CvSpec, mut out: W) -> Result<()> {
        writeln!(out, "K,lambda,criterion")?;
        for (i, k) in spec.grid_k.iter().enumerate() {
            for (j, l) in spec.grid_lambda.iter().enumerate() {
                writeln!(out, "{k},{},{}", fmt_f64(*l), fmt_f64(self.criterion[i][j]))?;
            }
        }
        Ok(())
    }
}

/// Training and test rows of one fold.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Fold {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Splits a seeded shuffle of `[0, n)` into `v` contiguous test folds of size
/// `n / v`; the `n mod v` leftover rows only ever train, in the last fold.
pub fn cv_folds(n: usize, v: usize, seed: u64) -> Result<Vec<Fold>> {
    if v == 0 || v > n {
        return param(format!("V={v} folds need 1 <= V <= N={n}"));
    }
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut substream(seed, stream::FOLDS));
    let size = n / v;
    let tests: Vec<&[usize]> = perm[..v * size].chunks_exact(size).collect();
    let leftover = &perm[v * size..];
    Ok((0..v)
        .map(|f| {
            let mut train: Vec<usize> = (0..v).filter(|&g| g != f).flat_map(|g| tests[g].iter().copied()).collect();
            if f == v - 1 {
                train.extend_from_slice(leftover);
            }
            Fold { train, test: tests[f].to_vec() }
        })
        .collect())
}

/// Seed of the fit for fold `fold` at `(k, lambda)`; independent of grid order.
pub fn fold_seed(seed: u64, fold: usize, k: usize, lambda: f64) -> u64 {
    derive_seed(seed, &[fold as u64, k as u64, lambda.to_bits()])
}

/// MOM over `k_prime` contiguous blocks of the squared test loss.
pub fn mom_test_loss(dataset: &Dataset, test: &[usize], t: &DVector<f64>, k_prime: usize) -> Result<f64> {
    let partition = partition_fixed(test.len(), k_prime)?;
    let losses: Vec<f64> = test
        .iter()
        .map(|&i| {
            let r = dataset.response()[i] - dataset.design().row(i).transpose().dot(t);
            r * r
        })
        .collect();
    Ok(mom(&block_means_of(&losses, &partition))?.value)
}

fn validate_cv(n: usize, spec: &CvSpec) -> Result<()> {
    if spec.grid_k.is_empty() || spec.grid_lambda.is_empty() {
        return param("CV grids must be non-empty");
    }
    if spec.v < 2 || spec.v > n {
        return param(format!("V={} folds need 2 <= V <= N={n}", spec.v));
    }
    let fold = n / spec.v;
    if spec.k_prime == 0 || spec.k_prime > fold {
        return param(format!("K'={} must lie in [1, N/V={fold}]", spec.k_prime));
    }
    let min_train = n - fold - n % spec.v;
    if let Some(k) = spec.grid_k.iter().find(|&&k| k == 0 || k > min_train) {
        return param(format!("grid K={k} infeasible for training folds of {min_train} rows"));
    }
    if let Some(l) = spec.grid_lambda.iter().find(|l| !(**l >= 0.0 && l.is_finite())) {
        return param(format!("grid lambda={l} must be finite and non-negative"));
    }
    Ok(())
}

/// Selects `(K, lambda)` minimizing the (MOM) cross-validation criterion and
/// refits on all rows.
///
/// Ties go to the smaller `K`, then the smaller `lambda`.
pub fn mom_cv(dataset: &Dataset, template: &SolverConfig, spec: &CvSpec) -> Result<CvResult> {
    validate_cv(dataset.n(), spec)?;
    template.validate()?;
    let folds = cv_folds(dataset.n(), spec.v, spec.seed)?;
    let train_sets: Vec<Dataset> = folds.iter().map(|f| dataset.subset(&f.train)).collect();

    let (nk, nl) = (spec.grid_k.len(), spec.grid_lambda.len());
    let cells: Vec<(usize, usize, usize)> = (0..spec.v)
        .flat_map(|f| (0..nk).flat_map(move |i| (0..nl).map(move |j| (f, i, j))))
        .collect();

    let losses: Vec<Result<f64>> = cells
        .par_iter()
        .map(|&(f, i, j)| {
            let (k, lambda) = (spec.grid_k[i], spec.grid_lambda[j]);
            let cfg = SolverConfig {
                k,
                lambda,
                seed: fold_seed(spec.seed, f, k, lambda),
                ..template.clone()
            };
            match fit(&train_sets[f], &cfg) {
                Ok(est) => mom_test_loss(dataset, &folds[f].test, &est.t_hat, spec.k_prime),
                Err(Error::Numeric { .. }) => Ok(f64::INFINITY),
                Err(e) => Err(e),
            }
        })
        .collect();

    let mut fold_details = Vec::with_capacity(cells.len());
    let mut per_cell = vec![vec![Vec::with_capacity(spec.v); nl]; nk];
    for (&(f, i, j), loss) in cells.iter().zip(losses) {
        let loss = loss?;
        per_cell[i][j].push(loss);
        fold_details.push(FoldScore {
            k: spec.grid_k[i],
            lambda: spec.grid_lambda[j],
            fold: f,
            loss,
        });
    }

    let criterion: Vec<Vec<f64>> = per_cell
        .iter()
        .map(|row| {
            row.iter()
                .map(|scores| aggregate(scores, spec.aggregate))
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<_>>()?;

    let mut best: Option<(f64, usize, f64)> = None;
    for (i, row) in criterion.iter().enumerate() {
        for (j, &c) in row.iter().enumerate() {
            let cand = (c, spec.grid_k[i], spec.grid_lambda[j]);
            let better = match best {
                None => true,
                Some(b) => cand.0 < b.0 || (cand.0 == b.0 && (cand.1, cand.2) < (b.1, b.2)),
            };
            if better {
                best = Some(cand);
            }
        }
    }
    let (_, best_k, best_lambda) = best.expect("non-empty grid");

    let refit = fit(
        dataset,
        &SolverConfig {
            k: best_k,
            lambda: best_lambda,
            seed: derive_seed(spec.seed, &[u64::MAX]),
            ..template.clone()
        },
    )?;
    Ok(CvResult {
        best_k,
        best_lambda,
        criterion,
        fold_details,
        refit,
    })
}

fn aggregate(scores: &[f64], how: FoldAggregate) -> Result<f64> {
    match how {
        FoldAggregate::Median => Ok(quantile(0.5, scores)?.value),
        FoldAggregate::Mean => Ok(scores.iter().sum::<f64>() / scores.len() as f64),
    }
}

/// `c sigma sqrt(log(e sigma^2 d / K) / N)`.
pub fn recommended_lambda(sigma: f64, d: usize, n: usize, k: usize, c: f64) -> Result<f64> {
    if !(sigma > 0.0) || !(c > 0.0) || n == 0 || k == 0 {
        return param("sigma, c, N and K must be positive");
    }
    let arg = std::f64::consts::E * sigma * sigma * d as f64 / k as f64;
    if arg <= 1.0 {
        return param(format!("log argument e sigma^2 d / K = {arg} must exceed 1"));
    }
    Ok(c * sigma * (arg.ln() / n as f64).sqrt())
}

/// `sigma^2 s log(e d / s) / N`, the squared-error rate for `s`-sparse targets.
pub fn minimax_rate(sigma: f64, s: usize, d: usize, n: usize) -> Result<f64> {
    if s == 0 || s > d {
        return param(format!("sparsity s={s} must lie in [1, d={d}]"));
    }
    if n == 0 {
        return param("N must be positive");
    }
    Ok(sigma * sigma * s as f64 * (std::f64::consts::E * d as f64 / s as f64).ln() / n as f64)
}

/// The estimator probed for breakdown.
#[derive(Debug, Clone, PartialEq)]
pub enum Estimator {
    Fixed(SolverConfig),
    CrossValidated { template: SolverConfig, cv: CvSpec },
}

impl Estimator {
    /// Fits on `dataset`; `seed` re-seeds the solver and the folds.
    pub fn fit(&self, dataset: &Dataset, seed: u64) -> Result<DVector<f64>> {
        match self {
            Estimator::Fixed(cfg) => Ok(fit(dataset, &SolverConfig { seed, ..cfg.clone() })?.t_hat),
            Estimator::CrossValidated { template, cv } => {
                let spec = CvSpec { seed, ..cv.clone() };
                Ok(mom_cv(dataset, template, &spec)?.refit.t_hat)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BreakdownRow {
    pub m: usize,
    pub median_error: f64,
    pub broken: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BreakdownReport {
    /// Smallest outlier count whose median error exceeds the rate, or
    /// `m_max` when none does.
    pub breakdown: usize,
    pub broken: bool,
    pub rows: Vec<BreakdownRow>,
}

impl BreakdownReport {
    /// `m,median_error,broken`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "m,median_error,broken")?;
        for r in &self.rows {
            writeln!(out, "{},{},{}", r.m, fmt_f64(r.median_error), r.broken)?;
        }
        Ok(())
    }
}

/// Median l2 error over `reps` seeds of `estimator` on informative data
/// (`gen`, outlier counts ignored) plus `m` gross outliers.
pub fn median_error_with_outliers(gen: &GenSpec, estimator: &Estimator, m: usize, reps: usize) -> Result<f64> {
    let errors: Vec<Result<f64>> = (0..reps as u64)
        .into_par_iter()
        .map(|rep| {
            let seed = repetition_seed(gen.seed, rep);
            let spec = GenSpec {
                n_bad2: 0,
                n_bad3: m,
                n_bad4: 0,
                n_bad5: 0,
                seed,
                ..gen.clone()
            };
            let ds = generate(&spec)?;
            let t = match estimator.fit(&ds, seed) {
                Ok(t) => t,
                Err(Error::Numeric { .. }) => return Ok(f64::INFINITY),
                Err(e) => return Err(e),
            };
            ell2_error(&t, ds.truth().expect("generated data has a target"))
        })
        .collect();
    let errors = errors.into_iter().collect::<Result<Vec<f64>>>()?;
    Ok(quantile(0.5, &errors)?.value)
}

/// Smallest number of gross outliers `m = 0, 1, ...` for which the median
/// l2 error over `reps` seeds exceeds `rate`.
///
/// The adversary is fixed to rows `Y = 10000, X = (1, ..., 1)`, so this is a
/// lower-bound probe of the breakdown number, not a worst case.
pub fn breakdown_probe(gen: &GenSpec, estimator: &Estimator, rate: f64, reps: usize, m_max: usize) -> Result<BreakdownReport> {
    if !(rate > 0.0) {
        return param("rate threshold must be positive");
    }
    if reps == 0 {
        return param("at least one repetition is required");
    }
    let mut rows = Vec::new();
    for m in 0..=m_max {
        let median_error = median_error_with_outliers(gen, estimator, m, reps)?;
        let broken = median_error > rate;
        rows.push(BreakdownRow { m, median_error, broken });
        if broken {
            return Ok(BreakdownReport { breakdown: m, broken: true, rows });
        }
    }
    Ok(BreakdownReport { breakdown: m_max, broken: false, rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::solvers::Algorithm;
    use proptest::prelude::*;

    fn clean(n: usize, d: usize, seed: u64) -> Dataset {
        generate(&GenSpec { n_good: n, d, s: 2, sigma: 0.5, seed, ..GenSpec::default() }).unwrap()
    }

    fn quick() -> SolverConfig {
        SolverConfig { max_iters: 100, ..SolverConfig::default() }
    }

    #[test]
    fn folds_partition_the_rows() {
        let folds = cv_folds(23, 5, 1).unwrap();
        let mut tests: Vec<usize> = folds.iter().flat_map(|f| f.test.clone()).collect();
        tests.sort_unstable();
        tests.dedup();
        assert_eq!(tests.len(), 20);
        for (v, f) in folds.iter().enumerate() {
            assert!(f.test.iter().all(|i| !f.train.contains(i)));
            assert_eq!(f.train.len(), if v == 4 { 19 } else { 16 });
        }
    }

    #[test]
    fn single_cell_grid_refits_that_cell() {
        let ds = clean(40, 4, 2);
        let spec = CvSpec { grid_k: vec![1], grid_lambda: vec![0.0], k_prime: 1, ..CvSpec::default() };
        let res = mom_cv(&ds, &quick(), &spec).unwrap();
        assert_eq!((res.best_k, res.best_lambda), (1, 0.0));
        let direct = fit(&ds, &SolverConfig { k: 1, lambda: 0.0, seed: derive_seed(spec.seed, &[u64::MAX]), ..quick() }).unwrap();
        assert_eq!(res.refit, direct);
        assert_eq!(res.fold_details.len(), 5);
    }

    #[test]
    fn k_prime_one_is_the_mean_test_loss() {
        let ds = clean(50, 3, 3);
        let spec = CvSpec { grid_k: vec![1, 2], grid_lambda: vec![0.1], k_prime: 1, ..CvSpec::default() };
        let res = mom_cv(&ds, &quick(), &spec).unwrap();
        let folds = cv_folds(50, 5, spec.seed).unwrap();
        for score in &res.fold_details {
            let f = &folds[score.fold];
            let cfg = SolverConfig { k: score.k, lambda: score.lambda, seed: fold_seed(spec.seed, score.fold, score.k, score.lambda), ..quick() };
            let t = fit(&ds.subset(&f.train), &cfg).unwrap().t_hat;
            let mean = f
                .test
                .iter()
                .map(|&i| (ds.response()[i] - ds.design().row(i).transpose().dot(&t)).powi(2))
                .sum::<f64>()
                / f.test.len() as f64;
            assert!((score.loss - mean).abs() <= 1e-12 * mean.max(1.0));
        }
    }

    #[test]
    fn criterion_table_follows_grid_permutations() {
        let ds = clean(40, 3, 4);
        let a = CvSpec { grid_k: vec![1, 2, 4], grid_lambda: vec![0.0, 0.3], k_prime: 2, ..CvSpec::default() };
        let b = CvSpec { grid_k: vec![4, 1, 2], grid_lambda: vec![0.3, 0.0], ..a.clone() };
        let ra = mom_cv(&ds, &quick(), &a).unwrap();
        let rb = mom_cv(&ds, &quick(), &b).unwrap();
        let ka = [0usize, 1, 2];
        let kb = [1usize, 2, 0];
        for (ia, ib) in ka.iter().zip(kb) {
            assert_eq!(ra.criterion[*ia][0], rb.criterion[ib][1]);
            assert_eq!(ra.criterion[*ia][1], rb.criterion[ib][0]);
        }
        assert_eq!((ra.best_k, ra.best_lambda), (rb.best_k, rb.best_lambda));
    }

    #[test]
    fn infeasible_grids_are_rejected() {
        let ds = clean(20, 3, 5);
        let bad = |spec: CvSpec| mom_cv(&ds, &quick(), &spec).is_err();
        assert!(bad(CvSpec { grid_k: vec![17], k_prime: 1, ..CvSpec::default() }));
        assert!(bad(CvSpec { grid_k: vec![1], k_prime: 5, ..CvSpec::default() }));
        assert!(bad(CvSpec { grid_k: vec![], k_prime: 1, ..CvSpec::default() }));
        assert!(bad(CvSpec { grid_k: vec![1], grid_lambda: vec![-1.0], k_prime: 1, ..CvSpec::default() }));
    }

    #[test]
    fn cv_table_csv() {
        let ds = clean(30, 3, 6);
        let spec = CvSpec { grid_k: vec![1, 2], grid_lambda: vec![0.0, 0.5], k_prime: 2, ..CvSpec::default() };
        let res = mom_cv(&ds, &quick(), &spec).unwrap();
        let mut buf = Vec::new();
        res.write_csv(&spec, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("K,lambda,criterion\n1,0,"));
        assert_eq!(text.lines().count(), 5);
    }

    #[test]
    fn lambda_and_rate_formulas() {
        let n = 200;
        let v = recommended_lambda(1.0, 50, n, 50, 1.0).unwrap();
        assert!((v - (1.0 / n as f64).sqrt()).abs() < 1e-15);
        let direct = ((std::f64::consts::E * 50.0).ln() / 200.0).sqrt();
        assert!((recommended_lambda(1.0, 500, 200, 10, 1.0).unwrap() - direct).abs() < 1e-15);
        assert!(recommended_lambda(0.1, 5, 100, 10, 1.0).is_err());

        assert!((minimax_rate(1.0, 7, 7, 20).unwrap() - 7.0 / 20.0).abs() < 1e-15);
        let direct = 10.0 * (50.0 * std::f64::consts::E).ln() / 200.0;
        assert!((minimax_rate(1.0, 10, 500, 200).unwrap() - direct).abs() < 1e-15);
        assert!(minimax_rate(1.0, 0, 5, 10).is_err());
        assert!(minimax_rate(1.0, 6, 5, 10).is_err());
    }

    proptest! {
        #[test]
        fn formulas_are_homogeneous(sigma in 0.5f64..3.0, scale in 0.1f64..10.0, n in 10usize..1000, s in 1usize..20) {
            let d = 400;
            let l1 = recommended_lambda(sigma, d, n, 4, 1.0).unwrap();
            let l2 = recommended_lambda(sigma, d, 2 * n, 4, 1.0).unwrap();
            prop_assert!((l2 * 2f64.sqrt() - l1).abs() <= 1e-12 * l1);
            let lc = recommended_lambda(sigma, d, n, 4, scale).unwrap();
            prop_assert!((lc - scale * l1).abs() <= 1e-12 * lc);

            let r = minimax_rate(sigma, s, d, n).unwrap();
            prop_assert!((minimax_rate(scale * sigma, s, d, n).unwrap() - scale * scale * r).abs() <= 1e-12 * r * scale * scale);
            prop_assert!((minimax_rate(sigma, s, d, 2 * n).unwrap() * 2.0 - r).abs() <= 1e-12 * r);
        }
    }

    fn probe_setup() -> (GenSpec, Estimator) {
        let gen = GenSpec { n_good: 60, d: 10, s: 2, sigma: 0.5, seed: 7, ..GenSpec::default() };
        let est = Estimator::Fixed(SolverConfig { algorithm: Algorithm::Admm, k: 1, lambda: 0.05, max_iters: 100, ..SolverConfig::default() });
        (gen, est)
    }

    #[test]
    fn single_outlier_breaks_the_one_block_estimator() {
        let (gen, est) = probe_setup();
        let clean_error = median_error_with_outliers(&gen, &est, 0, 3).unwrap();
        let report = breakdown_probe(&gen, &est, 10.0 * clean_error, 3, 5).unwrap();
        assert!(report.broken);
        assert_eq!(report.breakdown, 1);
        let mut buf = Vec::new();
        report.write_csv(&mut buf).unwrap();
        assert!(String::from_utf8(buf).unwrap().starts_with("m,median_error,broken\n0,"));
    }

    #[test]
    fn huge_rate_never_breaks_and_rates_are_monotone() {
        let (gen, est) = probe_setup();
        let report = breakdown_probe(&gen, &est, 1e300, 2, 2).unwrap();
        assert!(!report.broken);
        assert_eq!(report.breakdown, 2);

        let mom = Estimator::Fixed(SolverConfig { k: 9, lambda: 0.05, max_iters: 150, ..SolverConfig::default() });
        let mut last = 0;
        for rate in [0.5, 2.0, 8.0] {
            let r = breakdown_probe(&gen, &mom, rate, 2, 4).unwrap();
            assert!(r.breakdown >= last);
            last = r.breakdown;
        }
        assert!(breakdown_probe(&gen, &mom, 0.0, 2, 4).is_err());
    }
}
