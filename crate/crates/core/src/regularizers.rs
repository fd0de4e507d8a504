//! Penalties: the l1 norm and the sorted-l1 (SLOPE) norm.

use nalgebra::DVector;

use crate::error::{param, Result};

#[derive(Debug, Clone, PartialEq, Default)]
pub enum Penalty {
    None,
    #[default]
    L1,
    /// `sum_i beta_i |t|_(i)` with `|t|_(1) >= |t|_(2) >= ...`.
    Slope(Vec<f64>),
}

impl Penalty {
    /// SLOPE with weights `beta_j = c * sqrt(log(e d / j))`.
    pub fn slope_default(d: usize, c: f64) -> Self {
        Penalty::Slope(slope_weights(d, c))
    }

    pub fn validate(&self, d: usize) -> Result<()> {
        if let Penalty::Slope(beta) = self {
            check_slope_weights(beta, d)?;
        }
        Ok(())
    }

    pub fn name(&self) -> &'static str {
        match self {
            Penalty::None => "none",
            Penalty::L1 => "l1",
            Penalty::Slope(_) => "slope",
        }
    }
}

pub fn slope_weights(d: usize, c: f64) -> Vec<f64> {
    (1..=d)
        .map(|j| c * (std::f64::consts::E * d as f64 / j as f64).ln().sqrt())
        .collect()
}

fn check_slope_weights(beta: &[f64], d: usize) -> Result<()> {
    if beta.len() != d {
        return param(format!("{} SLOPE weights for dimension {d}", beta.len()));
    }
    if beta.iter().any(|b| !(b.is_finite() && *b > 0.0)) {
        return param("SLOPE weights must be positive and finite");
    }
    if beta.windows(2).any(|w| w[0] < w[1]) {
        return param("SLOPE weights must be non-increasing");
    }
    Ok(())
}

/// Indices of `t` sorted by decreasing magnitude (stable).
fn magnitude_order(t: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..t.len()).collect();
    order.sort_by(|&a, &b| t[b].abs().total_cmp(&t[a].abs()));
    order
}

pub fn norm(penalty: &Penalty, t: &DVector<f64>) -> Result<f64> {
    Ok(match penalty {
        Penalty::None => 0.0,
        Penalty::L1 => t.iter().map(|v| v.abs()).sum(),
        Penalty::Slope(beta) => {
            if beta.len() != t.len() {
                return param(format!("{} SLOPE weights for dimension {}", beta.len(), t.len()));
            }
            magnitude_order(t.as_slice())
                .iter()
                .zip(beta)
                .map(|(&j, b)| b * t[j].abs())
                .sum()
        }
    })
}

pub(crate) fn soft_threshold(v: f64, threshold: f64) -> f64 {
    if v > threshold {
        v - threshold
    } else if v < -threshold {
        v + threshold
    } else {
        0.0
    }
}

/// Componentwise soft thresholding, the proximal map of `threshold * ||.||_1`.
pub fn prox_l1(v: &DVector<f64>, threshold: f64) -> Result<DVector<f64>> {
    if !(threshold >= 0.0) {
        return param(format!("threshold must be non-negative, got {threshold}"));
    }
    Ok(v.map(|x| soft_threshold(x, threshold)))
}

/// Proximal map of `lambda * sum_i beta_i |x|_(i)`.
///
/// Sort `|v|` decreasingly, subtract `lambda beta`, project onto the
/// non-increasing cone with pool-adjacent-violators, clip at zero and undo
/// the sort and the sign flip.
pub fn prox_slope(v: &DVector<f64>, lambda: f64, beta: &[f64]) -> Result<DVector<f64>> {
    if !(lambda >= 0.0) {
        return param(format!("lambda must be non-negative, got {lambda}"));
    }
    check_slope_weights(beta, v.len())?;
    let order = magnitude_order(v.as_slice());
    let shifted: Vec<f64> = order
        .iter()
        .zip(beta)
        .map(|(&j, b)| v[j].abs() - lambda * b)
        .collect();

    // Blocks of (sum, count); block means are kept non-increasing.
    let mut sums: Vec<f64> = Vec::with_capacity(shifted.len());
    let mut counts: Vec<usize> = Vec::with_capacity(shifted.len());
    for &s in &shifted {
        sums.push(s);
        counts.push(1);
        while sums.len() > 1 {
            let n = sums.len();
            let last = sums[n - 1] / counts[n - 1] as f64;
            let prev = sums[n - 2] / counts[n - 2] as f64;
            if prev > last {
                break;
            }
            sums[n - 2] += sums[n - 1];
            counts[n - 2] += counts[n - 1];
            sums.pop();
            counts.pop();
        }
    }

    let mut out = DVector::zeros(v.len());
    let mut pos = 0;
    for (s, c) in sums.iter().zip(&counts) {
        let value = (s / *c as f64).max(0.0);
        for &j in &order[pos..pos + c] {
            out[j] = value.copysign(v[j]);
        }
        pos += c;
    }
    Ok(out)
}

/// A subgradient of the penalty at `t`, with `sign(0) = 0`.
///
/// For SLOPE the weights are assigned along a stable magnitude sort, so
/// ties and zeros get one particular member of the subdifferential.
pub fn subgradient(penalty: &Penalty, t: &DVector<f64>) -> DVector<f64> {
    let sign = |x: f64| {
        if x > 0.0 {
            1.0
        } else if x < 0.0 {
            -1.0
        } else {
            0.0
        }
    };
    match penalty {
        Penalty::None => DVector::zeros(t.len()),
        Penalty::L1 => t.map(sign),
        Penalty::Slope(beta) => {
            let mut g = DVector::zeros(t.len());
            for (&j, b) in magnitude_order(t.as_slice()).iter().zip(beta) {
                g[j] = b * sign(t[j]);
            }
            g
        }
    }
}
