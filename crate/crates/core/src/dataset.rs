//! Regression data and the synthetic corruption generators.
//!
//! A generated dataset is the shuffled union of five families:
//!
//! | label        | rows    | content                                                 |
//! |--------------|---------|---------------------------------------------------------|
//! | informative  | n_good  | `X ~ N(0, I_d)`, `Y = <X, t*> + sigma * N(0, 1)`        |
//! | outlier-2    | n_bad2  | `Y = 1`, `X = (1, ..., 1)`                              |
//! | outlier-3    | n_bad3  | `Y = 10000`, `X = (1, ..., 1)`                          |
//! | outlier-4    | n_bad4  | `Y ~ Bernoulli(1/2)`, `X ~ U([0, 1]^d)`                 |
//! | outlier-5    | n_bad5  | `X ~ N(0, Sigma)`, `Sigma_ij = rho^|i-j|`, Student noise |
//!
//! The design matrix is never normalized: a single corrupted row would
//! contaminate every column norm.

use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::seq::{index, SliceRandom};
use rand::Rng as _;
use rand_distr::{Bernoulli, Distribution, StandardNormal, StudentT};

use crate::csvio::{fmt_f64, parse_f64};
use crate::error::{param, Error, Result};
use crate::rng::{derive_seed, stream, substream};

/// Response value of the gross outliers.
pub const GROSS_OUTLIER_RESPONSE: f64 = 10_000.0;

/// Provenance of a row.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Label {
    Informative,
    /// `Y = 1`, `X` all ones.
    Constant,
    /// `Y = 10000`, `X` all ones.
    Gross,
    /// Bernoulli response on a uniform design.
    Bernoulli,
    /// Same target on an AR-correlated design with heavy-tailed noise.
    Correlated,
}

impl Label {
    pub fn is_outlier(self) -> bool {
        self != Label::Informative
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Informative => "informative",
            Label::Constant => "outlier-2",
            Label::Gross => "outlier-3",
            Label::Bernoulli => "outlier-4",
            Label::Correlated => "outlier-5",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Label {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "informative" => Label::Informative,
            "outlier-2" => Label::Constant,
            "outlier-3" => Label::Gross,
            "outlier-4" => Label::Bernoulli,
            "outlier-5" => Label::Correlated,
            other => return param(format!("unknown row label `{other}`")),
        })
    }
}

/// Magnitude pattern of the non-zero target coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CoefficientStyle {
    /// Every support coordinate equals 10.
    #[default]
    Constant10,
    /// +10, -10, +10, ... along the sorted support.
    AlternatingSign,
    /// `exp(-j/10)` for the j-th support coordinate, j = 1..s.
    ExpDecay,
}

impl CoefficientStyle {
    pub fn as_str(self) -> &'static str {
        match self {
            CoefficientStyle::Constant10 => "constant-10",
            CoefficientStyle::AlternatingSign => "alternating-sign",
            CoefficientStyle::ExpDecay => "exp-decay",
        }
    }
}

impl FromStr for CoefficientStyle {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "constant-10" => CoefficientStyle::Constant10,
            "alternating-sign" => CoefficientStyle::AlternatingSign,
            "exp-decay" => CoefficientStyle::ExpDecay,
            other => return param(format!("unknown coefficient style `{other}`")),
        })
    }
}

/// The target and noise level behind a synthetic dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub t_star: DVector<f64>,
    pub sigma: f64,
    pub sparsity: usize,
    /// Sorted support of `t_star`.
    pub support: Vec<usize>,
}

impl GroundTruth {
    pub fn new(t_star: DVector<f64>, sigma: f64) -> Self {
        let support: Vec<usize> = t_star
            .iter()
            .enumerate()
            .filter(|(_, v)| **v != 0.0)
            .map(|(j, _)| j)
            .collect();
        Self {
            sparsity: support.len(),
            t_star,
            sigma,
            support,
        }
    }
}

/// Generator parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct GenSpec {
    pub n_good: usize,
    pub n_bad2: usize,
    pub n_bad3: usize,
    pub n_bad4: usize,
    pub n_bad5: usize,
    pub d: usize,
    pub s: usize,
    pub sigma: f64,
    pub style: CoefficientStyle,
    pub ar_rho: f64,
    pub student_df: f64,
    pub seed: u64,
}

impl Default for GenSpec {
    fn default() -> Self {
        Self {
            n_good: 200,
            n_bad2: 0,
            n_bad3: 0,
            n_bad4: 0,
            n_bad5: 0,
            d: 500,
            s: 10,
            sigma: 1.0,
            style: CoefficientStyle::Constant10,
            ar_rho: 0.5,
            student_df: 3.0,
            seed: 0,
        }
    }
}

impl GenSpec {
    pub fn total(&self) -> usize {
        self.n_good + self.n_bad2 + self.n_bad3 + self.n_bad4 + self.n_bad5
    }

    pub fn validate(&self) -> Result<()> {
        if self.d == 0 {
            return param("d must be positive");
        }
        if self.s > self.d {
            return param(format!("sparsity s={} exceeds dimension d={}", self.s, self.d));
        }
        if self.total() == 0 {
            return param("generator produces no rows");
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return param(format!("sigma must be finite and non-negative, got {}", self.sigma));
        }
        if !(self.ar_rho > -1.0 && self.ar_rho < 1.0) {
            return param(format!("ar_rho must lie in (-1, 1), got {}", self.ar_rho));
        }
        if !(self.student_df > 0.0 && self.student_df.is_finite()) {
            return param(format!("student_df must be positive, got {}", self.student_df));
        }
        Ok(())
    }
}

/// A regression problem: `N x d` design, responses and optional provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    design: DMatrix<f64>,
    response: DVector<f64>,
    labels: Option<Vec<Label>>,
    truth: Option<GroundTruth>,
}

impl Dataset {
    pub fn new(design: DMatrix<f64>, response: DVector<f64>) -> Result<Self> {
        if design.nrows() != response.len() {
            return param(format!(
                "design has {} rows but response has {} entries",
                design.nrows(),
                response.len()
            ));
        }
        Ok(Self {
            design,
            response,
            labels: None,
            truth: None,
        })
    }

    pub fn with_labels(mut self, labels: Vec<Label>) -> Result<Self> {
        if labels.len() != self.n() {
            return param(format!("{} labels for {} rows", labels.len(), self.n()));
        }
        self.labels = Some(labels);
        Ok(self)
    }

    pub fn with_truth(mut self, truth: GroundTruth) -> Result<Self> {
        if truth.t_star.len() != self.d() {
            return param(format!(
                "target has dimension {} but design has {} columns",
                truth.t_star.len(),
                self.d()
            ));
        }
        self.truth = Some(truth);
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.design.nrows()
    }

    pub fn d(&self) -> usize {
        self.design.ncols()
    }

    pub fn design(&self) -> &DMatrix<f64> {
        &self.design
    }

    pub fn response(&self) -> &DVector<f64> {
        &self.response
    }

    pub fn labels(&self) -> Option<&[Label]> {
        self.labels.as_deref()
    }

    pub fn truth(&self) -> Option<&GroundTruth> {
        self.truth.as_ref()
    }

    pub fn is_finite(&self) -> bool {
        self.design.iter().all(|v| v.is_finite()) && self.response.iter().all(|v| v.is_finite())
    }

    /// Copies of the rows `idx` of the design and response, in that order.
    pub fn rows(&self, idx: &[usize]) -> (DMatrix<f64>, DVector<f64>) {
        let x = DMatrix::from_fn(idx.len(), self.d(), |r, c| self.design[(idx[r], c)]);
        let y = DVector::from_fn(idx.len(), |r, _| self.response[idx[r]]);
        (x, y)
    }

    /// A new dataset made of the rows `idx`; labels and truth carry over.
    pub fn subset(&self, idx: &[usize]) -> Dataset {
        let (design, response) = self.rows(idx);
        Dataset {
            design,
            response,
            labels: self
                .labels
                .as_ref()
                .map(|l| idx.iter().map(|&i| l[i]).collect()),
            truth: self.truth.clone(),
        }
    }

    /// Indices of the rows carrying label `label`.
    pub fn indices_with(&self, label: Label) -> Vec<usize> {
        self.labels
            .as_ref()
            .map(|l| (0..l.len()).filter(|&i| l[i] == label).collect())
            .unwrap_or_default()
    }

    /// Writes `y,x1,...,xd,label` with floats at 17 significant digits.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let mut header = String::from("y");
        for j in 1..=self.d() {
            header.push_str(&format!(",x{j}"));
        }
        header.push_str(",label\n");
        out.write_all(header.as_bytes())?;
        let mut line = String::new();
        for i in 0..self.n() {
            line.clear();
            line.push_str(&fmt_f64(self.response[i]));
            for j in 0..self.d() {
                line.push(',');
                line.push_str(&fmt_f64(self.design[(i, j)]));
            }
            line.push(',');
            if let Some(labels) = &self.labels {
                line.push_str(labels[i].as_str());
            }
            line.push('\n');
            out.write_all(line.as_bytes())?;
        }
        Ok(())
    }

    /// Reads the format produced by [`Dataset::write_csv`]. An empty label
    /// column on every row yields a dataset without labels.
    pub fn read_csv<R: BufRead>(input: R) -> Result<Dataset> {
        let mut lines = input.lines();
        let header = match lines.next() {
            Some(h) => h?,
            None => return Err(Error::Csv { line: 1, message: "missing header".into() }),
        };
        let cols: Vec<&str> = header.trim_end_matches('\r').split(',').collect();
        if cols.len() < 3 || cols[0] != "y" || cols[cols.len() - 1] != "label" {
            return Err(Error::Csv {
                line: 1,
                message: "expected header `y,x1,...,xd,label`".into(),
            });
        }
        let d = cols.len() - 2;
        for (j, c) in cols[1..=d].iter().enumerate() {
            if *c != format!("x{}", j + 1) {
                return Err(Error::Csv {
                    line: 1,
                    message: format!("column {} should be `x{}`, found `{c}`", j + 2, j + 1),
                });
            }
        }

        let mut values = Vec::new();
        let mut response = Vec::new();
        let mut labels = Vec::new();
        for (lineno, line) in lines.enumerate() {
            let line = line?;
            let line = line.trim_end_matches('\r');
            if line.is_empty() {
                continue;
            }
            let n = lineno + 2;
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != d + 2 {
                return Err(Error::Csv {
                    line: n,
                    message: format!("expected {} fields, found {}", d + 2, fields.len()),
                });
            }
            let num = |s: &str| {
                parse_f64(s).ok_or_else(|| Error::Csv {
                    line: n,
                    message: format!("invalid number `{s}`"),
                })
            };
            response.push(num(fields[0])?);
            for f in &fields[1..=d] {
                values.push(num(f)?);
            }
            let label = fields[d + 1];
            labels.push(if label.is_empty() {
                None
            } else {
                Some(label.parse::<Label>().map_err(|e| Error::Csv {
                    line: n,
                    message: e.to_string(),
                })?)
            });
        }

        let n = response.len();
        let design = DMatrix::from_row_slice(n, d, &values);
        let ds = Dataset::new(design, DVector::from_vec(response))?;
        if labels.iter().all(Option::is_none) {
            return Ok(ds);
        }
        if labels.iter().any(Option::is_none) {
            return Err(Error::Csv {
                line: 0,
                message: "labels must be given for every row or for none".into(),
            });
        }
        ds.with_labels(labels.into_iter().flatten().collect())
    }
}

/// An `s`-sparse target of dimension `d` with uniformly random support.
pub fn make_sparse_target(
    d: usize,
    s: usize,
    style: CoefficientStyle,
    seed: u64,
) -> Result<DVector<f64>> {
    if s > d {
        return param(format!("sparsity s={s} exceeds dimension d={d}"));
    }
    let mut rng = substream(seed, stream::TARGET);
    let mut support = index::sample(&mut rng, d, s).into_vec();
    support.sort_unstable();
    let mut t = DVector::zeros(d);
    for (rank, &j) in support.iter().enumerate() {
        t[j] = match style {
            CoefficientStyle::Constant10 => 10.0,
            CoefficientStyle::AlternatingSign if rank % 2 == 0 => 10.0,
            CoefficientStyle::AlternatingSign => -10.0,
            CoefficientStyle::ExpDecay => (-((rank + 1) as f64) / 10.0).exp(),
        };
    }
    Ok(t)
}

/// Draws a dataset according to `spec`. Pure function of `spec`.
pub fn generate(spec: &GenSpec) -> Result<Dataset> {
    spec.validate()?;
    let d = spec.d;
    let n = spec.total();
    let t_star = make_sparse_target(d, spec.s, spec.style, spec.seed)?;

    let mut rows: Vec<(Vec<f64>, f64, Label)> = Vec::with_capacity(n);

    let mut rng = substream(spec.seed, stream::INFORMATIVE);
    for _ in 0..spec.n_good {
        let x: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
        let noise: f64 = rng.sample(StandardNormal);
        let y = dot(&x, t_star.as_slice()) + spec.sigma * noise;
        rows.push((x, y, Label::Informative));
    }
    for _ in 0..spec.n_bad2 {
        rows.push((vec![1.0; d], 1.0, Label::Constant));
    }
    for _ in 0..spec.n_bad3 {
        rows.push((vec![1.0; d], GROSS_OUTLIER_RESPONSE, Label::Gross));
    }

    let mut rng = substream(spec.seed, stream::BERNOULLI);
    let coin = Bernoulli::new(0.5).expect("valid probability");
    for _ in 0..spec.n_bad4 {
        let x: Vec<f64> = (0..d).map(|_| rng.random::<f64>()).collect();
        let y = if coin.sample(&mut rng) { 1.0 } else { 0.0 };
        rows.push((x, y, Label::Bernoulli));
    }

    let mut rng = substream(spec.seed, stream::CORRELATED);
    let student = StudentT::new(spec.student_df)
        .map_err(|e| Error::Parameter(format!("student_df: {e}")))?;
    let innovation = (1.0 - spec.ar_rho * spec.ar_rho).sqrt();
    for _ in 0..spec.n_bad5 {
        // Stationary AR(1) along coordinates has covariance rho^|i-j|.
        let mut x = Vec::with_capacity(d);
        let mut prev: f64 = rng.sample(StandardNormal);
        x.push(prev);
        for _ in 1..d {
            let z: f64 = rng.sample(StandardNormal);
            prev = spec.ar_rho * prev + innovation * z;
            x.push(prev);
        }
        let y = dot(&x, t_star.as_slice()) + student.sample(&mut rng);
        rows.push((x, y, Label::Correlated));
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut substream(spec.seed, stream::SHUFFLE));

    let design = DMatrix::from_fn(n, d, |i, j| rows[order[i]].0[j]);
    let response = DVector::from_fn(n, |i, _| rows[order[i]].1);
    let labels = order.iter().map(|&i| rows[i].2).collect();
    Dataset::new(design, response)?
        .with_labels(labels)?
        .with_truth(GroundTruth::new(t_star, spec.sigma))
}

/// Seed of repetition `rep` of an experiment seeded with `seed`.
pub fn repetition_seed(seed: u64, rep: u64) -> u64 {
    derive_seed(seed, &[rep])
}

/// Euclidean distance between an estimate and the true target.
pub fn ell2_error(t_hat: &DVector<f64>, truth: &GroundTruth) -> Result<f64> {
    if t_hat.len() != truth.t_star.len() {
        return param(format!(
            "estimate has dimension {} but target has {}",
            t_hat.len(),
            truth.t_star.len()
        ));
    }
    Ok((t_hat - &truth.t_star).norm())
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
