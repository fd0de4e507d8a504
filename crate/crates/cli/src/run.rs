//! Verbs and experiments. Every artifact is a CSV file in the output
//! directory; summaries are derived from the per-repetition rows that are
//! written next to them.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use rayon::prelude::*;

use momreg::csvio::{fmt_f64, write_table};
use momreg::dataset::{ell2_error, generate, repetition_seed};
use momreg::mom::quantile;
use momreg::outlier::{depth_scores, flag_outliers};
use momreg::rng::derive_seed;
use momreg::solvers::{duality_gap, fit, fit_with_monitor, Estimate};
use momreg::tuning::{breakdown_probe, median_error_with_outliers, mom_cv, CvSpec, Estimator, FoldAggregate};
use momreg::{BlockMode, Dataset, GenSpec};

use crate::config::{seeds, Config, EstimatorName, Experiment};

pub struct Ctx {
    pub cfg: Config,
    pub out: PathBuf,
}

impl Ctx {
    fn create(&self, name: &str) -> Result<BufWriter<File>> {
        let path = self.out.join(name);
        let f = File::create(&path).with_context(|| format!("cannot create {}", path.display()))?;
        Ok(BufWriter::new(f))
    }

    fn table(&self, name: &str, header: &str, rows: &[Vec<String>]) -> Result<()> {
        let mut w = self.create(name)?;
        write_table(&mut w, header, rows)?;
        w.flush()?;
        Ok(())
    }

    fn dataset(&self) -> Result<Dataset> {
        match &self.cfg.data {
            Some(path) => read_dataset(path),
            None => Ok(generate(&self.cfg.gen_spec()?)?),
        }
    }
}

fn read_dataset(path: &Path) -> Result<Dataset> {
    let f = File::open(path).with_context(|| format!("cannot open dataset {}", path.display()))?;
    Dataset::read_csv(BufReader::new(f)).with_context(|| format!("in dataset {}", path.display()))
}

fn summary(ctx: &Ctx, rows: &[(&str, String)]) -> Result<()> {
    for (k, v) in rows {
        println!("{k}: {v}");
    }
    let table: Vec<Vec<String>> = rows.iter().map(|(k, v)| vec![k.to_string(), v.clone()]).collect();
    ctx.table("summary.csv", "metric,value", &table)
}

fn write_estimate(ctx: &Ctx, est: &Estimate) -> Result<()> {
    let rows: Vec<Vec<String>> = (0..est.t_hat.len())
        .map(|j| vec![j.to_string(), fmt_f64(est.t_hat[j]), fmt_f64(est.t_adv[j])])
        .collect();
    ctx.table("estimate.csv", "j,t_hat,t_adv", &rows)
}

fn error_of(ds: &Dataset, est: &Estimate) -> Option<f64> {
    ds.truth().and_then(|t| ell2_error(&est.t_hat, t).ok())
}

pub fn generate_cmd(ctx: &Ctx) -> Result<()> {
    let ds = generate(&ctx.cfg.gen_spec()?)?;
    let mut w = ctx.create("dataset.csv")?;
    ds.write_csv(&mut w)?;
    w.flush()?;
    println!("wrote {} rows x {} columns", ds.n(), ds.d());
    Ok(())
}

pub fn fit_cmd(ctx: &Ctx) -> Result<()> {
    let ds = ctx.dataset()?;
    let est = fit(&ds, &ctx.cfg.solver_config()?)?;
    write_estimate(ctx, &est)?;
    let mut w = ctx.create("trace.csv")?;
    est.trace.write_csv(&mut w)?;
    w.flush()?;
    let mut rows = vec![
        ("iterations", est.iterations_used.to_string()),
        ("converged", est.converged.to_string()),
        ("duality_gap", fmt_f64(duality_gap(&est.trace)?)),
    ];
    if let Some(e) = error_of(&ds, &est) {
        rows.push(("l2_error", fmt_f64(e)));
    }
    summary(ctx, &rows)
}

pub fn cv_cmd(ctx: &Ctx) -> Result<()> {
    let ds = ctx.dataset()?;
    let spec = ctx.cfg.cv_spec()?;
    let res = mom_cv(&ds, &ctx.cfg.solver_config()?, &spec)?;
    let mut w = ctx.create("cv_table.csv")?;
    res.write_csv(&spec, &mut w)?;
    w.flush()?;
    let folds: Vec<Vec<String>> = res
        .fold_details
        .iter()
        .map(|f| vec![f.k.to_string(), fmt_f64(f.lambda), f.fold.to_string(), fmt_f64(f.loss)])
        .collect();
    ctx.table("cv_folds.csv", "K,lambda,fold,loss", &folds)?;
    write_estimate(ctx, &res.refit)?;
    let mut rows = vec![("best_k", res.best_k.to_string()), ("best_lambda", fmt_f64(res.best_lambda))];
    if let Some(e) = error_of(&ds, &res.refit) {
        rows.push(("l2_error", fmt_f64(e)));
    }
    summary(ctx, &rows)
}

pub fn detect_cmd(ctx: &Ctx) -> Result<()> {
    let ds = ctx.dataset()?;
    let (scores, _) = depth_scores(&ds, &ctx.cfg.solver_config()?)?;
    let mut w = ctx.create("scores.csv")?;
    scores.write_csv(&ds, &mut w)?;
    w.flush()?;
    let flagged = flag_outliers(&scores, ctx.cfg.flag_method());
    let rows: Vec<Vec<String>> = flagged
        .indices
        .iter()
        .map(|&i| vec![i.to_string(), ds.labels().map_or(String::new(), |l| l[i].as_str().to_string())])
        .collect();
    ctx.table("flagged.csv", "index,label", &rows)?;
    summary(
        ctx,
        &[
            ("flagged", flagged.indices.len().to_string()),
            ("no_gap", flagged.no_gap.to_string()),
            ("selections", scores.selections.to_string()),
        ],
    )
}

fn estimator(cfg: &Config) -> Result<Estimator> {
    let solver = cfg.solver_config()?;
    Ok(match cfg.breakdown.estimator {
        EstimatorName::Fixed => Estimator::Fixed(solver),
        EstimatorName::Cv => Estimator::CrossValidated { template: solver, cv: cfg.cv_spec()? },
    })
}

pub fn breakdown_cmd(ctx: &Ctx) -> Result<()> {
    let cfg = &ctx.cfg;
    let gen = cfg.gen_spec()?;
    let est = estimator(cfg)?;
    let b = &cfg.breakdown;
    let rate = match b.rate {
        Some(r) => r,
        None => b.rate_factor * median_error_with_outliers(&gen, &est, 0, cfg.repetitions)?,
    };
    let report = breakdown_probe(&gen, &est, rate, cfg.repetitions, b.m_max)?;
    let mut w = ctx.create("breakdown.csv")?;
    report.write_csv(&mut w)?;
    w.flush()?;
    summary(
        ctx,
        &[
            ("rate", fmt_f64(rate)),
            ("breakdown", report.breakdown.to_string()),
            ("broken", report.broken.to_string()),
        ],
    )
}

pub fn experiment_cmd(ctx: &Ctx) -> Result<()> {
    match ctx.cfg.experiment {
        Experiment::SingleFit => fit_cmd(ctx),
        Experiment::ErrorVsOutliers => error_vs_outliers(ctx),
        Experiment::AdaptiveK | Experiment::AdaptiveLambda => adaptive(ctx),
        Experiment::FixedVsRandom => fixed_vs_random(ctx),
        Experiment::DetectOutliers => detect_cmd(ctx),
        Experiment::Breakdown => breakdown_cmd(ctx),
    }
}

/// One dataset of an outlier sweep.
struct Cell {
    fraction: f64,
    outliers: usize,
    rep: u64,
    seed: u64,
}

fn sweep(cfg: &Config) -> Vec<Cell> {
    let mut cells = Vec::new();
    for &fraction in &cfg.outlier_fractions {
        for rep in 0..cfg.repetitions as u64 {
            cells.push(Cell {
                fraction,
                outliers: (fraction * cfg.gen.n_good as f64).round() as usize,
                rep,
                seed: repetition_seed(cfg.seed, rep),
            });
        }
    }
    cells
}

fn cell_data(gen: &GenSpec, cell: &Cell) -> Result<Dataset> {
    Ok(generate(&GenSpec { n_bad3: cell.outliers, seed: cell.seed, ..gen.clone() })?)
}

/// `(error, K, lambda)` of a cross-validated fit.
fn cv_fit(ds: &Dataset, cfg: &Config, spec: CvSpec, seed: u64) -> Result<(f64, usize, f64)> {
    let solver = momreg::SolverConfig { seed: derive_seed(seed, &[seeds::SOLVER]), ..cfg.solver_config()? };
    let spec = CvSpec { seed: derive_seed(seed, &[seeds::CV]), ..spec };
    let res = mom_cv(ds, &solver, &spec)?;
    let err = ell2_error(&res.refit.t_hat, ds.truth().expect("generated"))?;
    Ok((err, res.best_k, res.best_lambda))
}

/// Same code path at `K = 1` with classical cross validation over lambda.
fn lasso_spec(mom: &CvSpec) -> CvSpec {
    CvSpec {
        grid_k: vec![1],
        k_prime: 1,
        aggregate: FoldAggregate::Mean,
        ..mom.clone()
    }
}

fn opt(v: &Result<(f64, usize, f64)>) -> (String, String, String) {
    match v {
        Ok((e, k, l)) => (fmt_f64(*e), k.to_string(), fmt_f64(*l)),
        Err(_) => ("nan".into(), String::new(), "nan".into()),
    }
}

fn errors_field(results: &[&Result<(f64, usize, f64)>]) -> String {
    results
        .iter()
        .filter_map(|r| r.as_ref().err())
        .map(|e| e.to_string().replace([',', '\n'], ";"))
        .collect::<Vec<_>>()
        .join(" | ")
}

fn mean_finite(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.filter(|x| x.is_finite()).fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        s / n as f64
    }
}

fn median_finite(v: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = v.filter(|x| x.is_finite()).collect();
    quantile(0.5, &v).map_or(f64::NAN, |q| q.value)
}

/// Groups per-repetition rows by their first column, in sweep order.
fn by_fraction(rows: &[Vec<String>]) -> Vec<(String, Vec<&Vec<String>>)> {
    let mut groups: Vec<(String, Vec<&Vec<String>>)> = Vec::new();
    for r in rows {
        match groups.last_mut() {
            Some((f, g)) if *f == r[0] => g.push(r),
            _ => groups.push((r[0].clone(), vec![r])),
        }
    }
    groups
}

fn column<'a>(group: &'a [&'a Vec<String>], i: usize) -> impl Iterator<Item = f64> + 'a {
    group.iter().map(move |r| momreg::csvio::parse_f64(&r[i]).unwrap_or(f64::NAN))
}

fn error_vs_outliers(ctx: &Ctx) -> Result<()> {
    let cfg = &ctx.cfg;
    let gen = cfg.gen_spec()?;
    let mom = cfg.cv_spec()?;
    let lasso = lasso_spec(&mom);
    let rows: Vec<Vec<String>> = sweep(cfg)
        .par_iter()
        .map(|cell| -> Result<Vec<String>> {
            let ds = cell_data(&gen, cell)?;
            let l = cv_fit(&ds, cfg, lasso.clone(), cell.seed);
            let m = cv_fit(&ds, cfg, mom.clone(), cell.seed);
            let (el, _, ll) = opt(&l);
            let (em, k, lm) = opt(&m);
            Ok(vec![
                fmt_f64(cell.fraction),
                cell.rep.to_string(),
                cell.outliers.to_string(),
                el,
                em,
                k,
                lm,
                ll,
                errors_field(&[&l, &m]),
            ])
        })
        .collect::<Result<_>>()?;
    ctx.table(
        "error_vs_outliers_reps.csv",
        "fraction,repetition,outliers,error_lasso,error_mom,k_hat,lambda_hat,lambda_lasso,errors",
        &rows,
    )?;
    let summary: Vec<Vec<String>> = by_fraction(&rows)
        .into_iter()
        .map(|(f, g)| vec![f, fmt_f64(mean_finite(column(&g, 3))), fmt_f64(mean_finite(column(&g, 4)))])
        .collect();
    ctx.table("error_vs_outliers.csv", "fraction,mean_error_lasso,mean_error_mom", &summary)?;
    for r in &summary {
        println!("fraction {}: lasso {} mom {}", r[0], r[1], r[2]);
    }
    Ok(())
}

fn adaptive(ctx: &Ctx) -> Result<()> {
    let cfg = &ctx.cfg;
    let gen = cfg.gen_spec()?;
    let mom = cfg.cv_spec()?;
    let rows: Vec<Vec<String>> = sweep(cfg)
        .par_iter()
        .map(|cell| -> Result<Vec<String>> {
            let ds = cell_data(&gen, cell)?;
            let m = cv_fit(&ds, cfg, mom.clone(), cell.seed);
            let (e, k, l) = opt(&m);
            Ok(vec![
                fmt_f64(cell.fraction),
                cell.rep.to_string(),
                cell.outliers.to_string(),
                k,
                l,
                e,
                errors_field(&[&m]),
            ])
        })
        .collect::<Result<_>>()?;
    ctx.table("adaptive_reps.csv", "fraction,repetition,outliers,k_hat,lambda_hat,error,errors", &rows)?;
    let (name, header, col) = match cfg.experiment {
        Experiment::AdaptiveK => ("adaptive_k.csv", "fraction,mean_k_hat,median_k_hat", 3),
        _ => ("adaptive_lambda.csv", "fraction,mean_lambda_hat,median_lambda_hat", 4),
    };
    let summary: Vec<Vec<String>> = by_fraction(&rows)
        .into_iter()
        .map(|(f, g)| vec![f, fmt_f64(mean_finite(column(&g, col))), fmt_f64(median_finite(column(&g, col)))])
        .collect();
    ctx.table(name, header, &summary)?;
    for r in &summary {
        println!("fraction {}: mean {} median {}", r[0], r[1], r[2]);
    }
    Ok(())
}

fn fixed_vs_random(ctx: &Ctx) -> Result<()> {
    let cfg = &ctx.cfg;
    let ds = ctx.dataset()?;
    let truth = ds.truth().context("fixed-vs-random needs a dataset with a known target")?.clone();
    let base = cfg.solver_config()?;
    let mut runs = Vec::new();
    for mode in [BlockMode::Fixed, BlockMode::RandomEachStep] {
        let mut cfg = base.clone();
        cfg.block_policy.mode = mode;
        let mut errors = Vec::new();
        let est = fit_with_monitor(&ds, &cfg, |_, t, _| errors.push(ell2_error(t, &truth).unwrap_or(f64::NAN)))?;
        runs.push((est.trace.objectives(), errors));
    }
    let len = runs.iter().map(|r| r.0.len()).max().unwrap_or(0);
    let cell = |v: &[f64], i: usize| v.get(i).map_or(String::new(), |x| fmt_f64(*x));
    let rows: Vec<Vec<String>> = (0..len)
        .map(|i| {
            vec![
                (i + 1).to_string(),
                cell(&runs[0].0, i),
                cell(&runs[0].1, i),
                cell(&runs[1].0, i),
                cell(&runs[1].1, i),
            ]
        })
        .collect();
    ctx.table("fixed_vs_random.csv", "iter,objective_fixed,error_fixed,objective_random,error_random", &rows)?;
    let last = |v: &[f64]| v.last().map_or("nan".into(), |x| fmt_f64(*x));
    summary(
        ctx,
        &[
            ("final_gap_fixed", last(&runs[0].0)),
            ("final_error_fixed", last(&runs[0].1)),
            ("final_gap_random", last(&runs[1].0)),
            ("final_error_random", last(&runs[1].1)),
        ],
    )
}
