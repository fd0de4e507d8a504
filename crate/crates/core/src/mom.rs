//! Empirical quantiles, median-of-means and median-block selection.
//!
//! The set of `(1 - alpha)` empirical quantiles of `K` numbers is an
//! interval; we always report the `ceil(alpha K)`-th smallest value as its
//! representative (the lower median for even `K`), and among blocks
//! sharing that value the lowest block index.

use std::cmp::Ordering;

use nalgebra::DVector;

use crate::blocks::BlockPartition;
use crate::dataset::Dataset;
use crate::error::{param, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuantileResult {
    pub value: f64,
    /// Position of `value` in the input vector.
    pub index: usize,
}

/// The `ceil(alpha K)`-th smallest entry of `values`.
pub fn quantile(alpha: f64, values: &[f64]) -> Result<QuantileResult> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return param(format!("quantile level must lie in (0, 1), got {alpha}"));
    }
    if values.is_empty() {
        return param("quantile of an empty vector");
    }
    if values.iter().any(|v| v.is_nan()) {
        return param("quantile of a vector containing NaN");
    }
    let k = values.len();
    // Guard against alpha * K landing a hair above an integer.
    let rank = ((alpha * k as f64 - 1e-9).ceil() as usize).clamp(1, k);
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).unwrap_or(Ordering::Equal));
    let value = values[order[rank - 1]];
    let index = values
        .iter()
        .position(|&v| v == value)
        .expect("value taken from the input");
    Ok(QuantileResult { value, index })
}

/// Median-of-means of precomputed block means.
pub fn mom(values: &[f64]) -> Result<QuantileResult> {
    quantile(0.5, values)
}

/// Mean of `eval(i)` over each block; `eval` receives row indices.
pub fn block_means<F>(partition: &BlockPartition, mut eval: F) -> Vec<f64>
where
    F: FnMut(usize) -> f64,
{
    partition
        .blocks()
        .iter()
        .map(|b| b.iter().map(|&i| eval(i)).sum::<f64>() / b.len() as f64)
        .collect()
}

/// Block means of a per-row vector.
pub fn block_means_of(values: &[f64], partition: &BlockPartition) -> Vec<f64> {
    block_means(partition, |i| values[i])
}

/// Residuals `Y - X t`.
pub fn residuals(dataset: &Dataset, t: &DVector<f64>) -> DVector<f64> {
    dataset.response() - dataset.design() * t
}

/// Per-row squared-loss differences `(Y_i - <X_i, t>)^2 - (Y_i - <X_i, t'>)^2`
/// from precomputed residuals.
pub fn loss_differences(res_t: &DVector<f64>, res_t_prime: &DVector<f64>) -> Vec<f64> {
    res_t
        .iter()
        .zip(res_t_prime.iter())
        .map(|(a, b)| a * a - b * b)
        .collect()
}

/// Index of the block whose mean of `l_t - l_t'` is the median.
pub fn median_block(
    dataset: &Dataset,
    partition: &BlockPartition,
    t: &DVector<f64>,
    t_prime: &DVector<f64>,
) -> Result<usize> {
    if t.len() != dataset.d() || t_prime.len() != dataset.d() {
        return param("parameter vectors must match the design dimension");
    }
    let diffs = loss_differences(&residuals(dataset, t), &residuals(dataset, t_prime));
    Ok(mom(&block_means_of(&diffs, partition))?.index)
}
