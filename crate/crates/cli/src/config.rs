//! Experiment configuration: a TOML file of `key = value` lines grouped in
//! `[gen]`, `[solver]`, `[cv]`, `[detect]` and `[breakdown]` sections.
//! Unknown keys are rejected.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::Deserialize;

use momreg::blocks::{BlockMode, BlockPolicy};
use momreg::outlier::FlagMethod;
use momreg::rng::derive_seed;
use momreg::tuning::{CvSpec, FoldAggregate};
use momreg::{Algorithm, CoefficientStyle, GenSpec, Mode, Penalty, SolverConfig, StepPolicy};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    SingleFit,
    ErrorVsOutliers,
    AdaptiveK,
    AdaptiveLambda,
    FixedVsRandom,
    DetectOutliers,
    Breakdown,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    pub experiment: Experiment,
    /// Master seed; every component seed is derived from it.
    pub seed: u64,
    pub repetitions: usize,
    pub outlier_fractions: Vec<f64>,
    pub output_dir: PathBuf,
    /// CSV dataset used instead of generating one.
    pub data: Option<PathBuf>,
    pub gen: GenSection,
    pub solver: SolverSection,
    pub cv: Option<CvSection>,
    pub detect: DetectSection,
    pub breakdown: BreakdownSection,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            experiment: Experiment::SingleFit,
            seed: 0,
            repetitions: 10,
            outlier_fractions: (0..=15).map(|p| p as f64 / 100.0).collect(),
            output_dir: PathBuf::from("out"),
            data: None,
            gen: GenSection::default(),
            solver: SolverSection::default(),
            cv: None,
            detect: DetectSection::default(),
            breakdown: BreakdownSection::default(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenSection {
    pub n_good: usize,
    pub n_bad2: usize,
    pub n_bad3: usize,
    pub n_bad4: usize,
    pub n_bad5: usize,
    pub d: usize,
    pub s: usize,
    pub sigma: f64,
    pub style: String,
    pub ar_rho: f64,
    pub student_df: f64,
}

impl Default for GenSection {
    fn default() -> Self {
        let g = GenSpec::default();
        Self {
            n_good: g.n_good,
            n_bad2: g.n_bad2,
            n_bad3: g.n_bad3,
            n_bad4: g.n_bad4,
            n_bad5: g.n_bad5,
            d: g.d,
            s: g.s,
            sigma: g.sigma,
            style: g.style.as_str().to_string(),
            ar_rho: g.ar_rho,
            student_df: g.student_df,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PenaltyName {
    None,
    L1,
    Slope,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StepName {
    InverseLipschitz,
    Armijo,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BlocksName {
    Fixed,
    Random,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverSection {
    pub algorithm: String,
    pub k: usize,
    pub lambda: f64,
    pub penalty: PenaltyName,
    pub slope_c: f64,
    pub blocks: BlocksName,
    pub max_iters: usize,
    pub eps_stop: f64,
    pub step: StepName,
    pub armijo_rho: f64,
    pub armijo_delta: f64,
    pub armijo_gamma0: f64,
    pub admm_rho: f64,
    pub mode: String,
}

impl Default for SolverSection {
    fn default() -> Self {
        let s = SolverConfig::default();
        Self {
            algorithm: s.algorithm.to_string(),
            k: s.k,
            lambda: s.lambda,
            penalty: PenaltyName::L1,
            slope_c: 1.0,
            blocks: BlocksName::Random,
            max_iters: s.max_iters,
            eps_stop: s.eps_stop,
            step: StepName::InverseLipschitz,
            armijo_rho: 0.5,
            armijo_delta: 1e-4,
            armijo_gamma0: 1.0,
            admm_rho: s.admm_rho,
            mode: "minmax".into(),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CvSection {
    pub v: usize,
    pub grid_k: Vec<usize>,
    pub grid_lambda: Vec<f64>,
    /// Defaults to `max(grid_k) / v`.
    pub k_prime: Option<usize>,
    pub aggregate: String,
}

impl Default for CvSection {
    fn default() -> Self {
        let c = CvSpec::default();
        Self {
            v: c.v,
            grid_k: c.grid_k,
            grid_lambda: c.grid_lambda,
            k_prime: None,
            aggregate: "median".into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DetectMethod {
    ZeroScore,
    LargestGap,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DetectSection {
    pub method: DetectMethod,
}

impl Default for DetectSection {
    fn default() -> Self {
        Self { method: DetectMethod::ZeroScore }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EstimatorName {
    Fixed,
    Cv,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BreakdownSection {
    /// Absolute error threshold; when absent, `rate_factor` times the clean
    /// data median error is used.
    pub rate: Option<f64>,
    pub rate_factor: f64,
    pub m_max: usize,
    pub estimator: EstimatorName,
}

impl Default for BreakdownSection {
    fn default() -> Self {
        Self {
            rate: None,
            rate_factor: 10.0,
            m_max: 20,
            estimator: EstimatorName::Fixed,
        }
    }
}

/// Seeds of the independent components, derived from the master seed.
pub mod seeds {
    pub const SOLVER: u64 = 1;
    pub const CV: u64 = 2;
}

impl Config {
    pub fn parse(text: &str) -> Result<Config> {
        let cfg: Config = toml::from_str(text).map_err(|e| anyhow::anyhow!("{}", e.to_string().trim_end()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Config> {
        let text = std::fs::read_to_string(path).with_context(|| format!("cannot read config {}", path.display()))?;
        Config::parse(&text).with_context(|| format!("invalid config {}", path.display()))
    }

    /// Checks everything that can be checked before running.
    pub fn validate(&self) -> Result<()> {
        if self.repetitions == 0 {
            bail!("repetitions must be positive");
        }
        if let Some(f) = self.outlier_fractions.iter().find(|f| !(0.0..1.0).contains(*f)) {
            bail!("outlier_fractions: {f} is outside [0, 1)");
        }
        self.gen_spec()?.validate().context("[gen]")?;
        let solver = self.solver_config()?;
        solver.validate().context("[solver]")?;
        if self.data.is_none() {
            let n = self.gen_spec()?.total();
            if solver.k > n {
                bail!("solver.k = {} exceeds the number of rows N = {n}", solver.k);
            }
        }
        let needs_cv = matches!(self.experiment, Experiment::AdaptiveK | Experiment::AdaptiveLambda | Experiment::ErrorVsOutliers)
            || (self.experiment == Experiment::Breakdown && self.breakdown.estimator == EstimatorName::Cv);
        if needs_cv && self.cv.is_none() {
            bail!("experiment {:?} needs a [cv] section", self.experiment);
        }
        if self.cv.is_some() {
            let cv = self.cv_spec()?;
            if self.data.is_none() {
                let n = self.gen_spec()?.total();
                let fold = n / cv.v.max(1);
                if cv.v < 2 || cv.v > n {
                    bail!("cv.v = {} must lie in [2, N = {n}]", cv.v);
                }
                if cv.k_prime == 0 || cv.k_prime > fold {
                    bail!("cv.k_prime = {} must lie in [1, N/V = {fold}]", cv.k_prime);
                }
            }
        }
        if let Some(r) = self.breakdown.rate {
            if !(r > 0.0) {
                bail!("breakdown.rate must be positive");
            }
        }
        if !(self.breakdown.rate_factor > 0.0) {
            bail!("breakdown.rate_factor must be positive");
        }
        Ok(())
    }

    pub fn gen_spec(&self) -> Result<GenSpec> {
        let g = &self.gen;
        let style: CoefficientStyle = g.style.parse().context("gen.style")?;
        Ok(GenSpec {
            n_good: g.n_good,
            n_bad2: g.n_bad2,
            n_bad3: g.n_bad3,
            n_bad4: g.n_bad4,
            n_bad5: g.n_bad5,
            d: g.d,
            s: g.s,
            sigma: g.sigma,
            style,
            ar_rho: g.ar_rho,
            student_df: g.student_df,
            seed: self.seed,
        })
    }

    pub fn solver_config(&self) -> Result<SolverConfig> {
        let s = &self.solver;
        let penalty = match s.penalty {
            PenaltyName::None => Penalty::None,
            PenaltyName::L1 => Penalty::L1,
            PenaltyName::Slope => Penalty::slope_default(self.gen.d, s.slope_c),
        };
        let step_policy = match s.step {
            StepName::InverseLipschitz => StepPolicy::InverseLipschitz,
            StepName::Armijo => StepPolicy::Armijo {
                rho: s.armijo_rho,
                delta: s.armijo_delta,
                gamma0: s.armijo_gamma0,
            },
        };
        let mode = match s.mode.as_str() {
            "minmax" => Mode::Minmax,
            "maxmin" => Mode::Maxmin,
            other => bail!("solver.mode: unknown mode `{other}`"),
        };
        let seed = derive_seed(self.seed, &[seeds::SOLVER]);
        Ok(SolverConfig {
            algorithm: s.algorithm.parse::<Algorithm>().context("solver.algorithm")?,
            k: s.k,
            lambda: s.lambda,
            penalty,
            block_policy: BlockPolicy {
                mode: match s.blocks {
                    BlocksName::Fixed => BlockMode::Fixed,
                    BlocksName::Random => BlockMode::RandomEachStep,
                },
                seed: 0,
            },
            max_iters: s.max_iters,
            eps_stop: s.eps_stop,
            step_policy,
            admm_rho: s.admm_rho,
            mode,
            seed,
        })
    }

    /// The `[cv]` section, or its defaults when absent.
    pub fn cv_spec(&self) -> Result<CvSpec> {
        let c = self.cv.clone().unwrap_or_default();
        let aggregate = match c.aggregate.as_str() {
            "median" => FoldAggregate::Median,
            "mean" => FoldAggregate::Mean,
            other => bail!("cv.aggregate: unknown aggregate `{other}`"),
        };
        let k_prime = c
            .k_prime
            .unwrap_or_else(|| (c.grid_k.iter().copied().max().unwrap_or(1) / c.v.max(1)).max(1));
        Ok(CvSpec {
            v: c.v,
            grid_k: c.grid_k,
            grid_lambda: c.grid_lambda,
            k_prime,
            aggregate,
            seed: derive_seed(self.seed, &[seeds::CV]),
        })
    }

    pub fn flag_method(&self) -> FlagMethod {
        match self.detect.method {
            DetectMethod::ZeroScore => FlagMethod::ZeroScore,
            DetectMethod::LargestGap => FlagMethod::LargestGap,
        }
    }
}
