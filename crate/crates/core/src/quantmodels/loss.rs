//! Pinball loss and the two training objectives, on plain arrays.

use crate::error::{QuantError, Result};
use crate::quantmodels::grid::QuantileGrid;

/// `tau * xi` for `xi >= 0`, `(tau - 1) * xi` otherwise.
pub fn pinball(tau: f64, xi: f64) -> Result<f64> {
    if !(tau > 0.0 && tau < 1.0) {
        return Err(QuantError::Domain(format!("quantile level {tau} outside (0, 1)")));
    }
    Ok(ndgrad::pinball(tau, xi))
}

/// Sum over the grid of `rho_tau(y - q_tau)`.
pub fn pinball_row(y: f64, q: &[f64], grid: &QuantileGrid) -> Result<f64> {
    grid.check_width(q.len(), "forecast")?;
    Ok(grid
        .taus()
        .iter()
        .zip(q)
        .map(|(&t, &qv)| ndgrad::pinball(t, y - qv))
        .sum())
}

/// Mean over batch and quantiles of the raw plus normalised pinball terms.
pub fn loss_single(
    r: &[f64],
    r_tilde: &[f64],
    q_r: &[Vec<f64>],
    q_r_tilde: &[Vec<f64>],
    grid: &QuantileGrid,
) -> Result<f64> {
    let b = r.len();
    if b == 0 {
        return Err(QuantError::Batching("empty batch".into()));
    }
    if r_tilde.len() != b || q_r.len() != b || q_r_tilde.len() != b {
        return Err(QuantError::Dimension(format!(
            "batch of {b} returns with {} normalised returns and {}/{} forecasts",
            r_tilde.len(),
            q_r.len(),
            q_r_tilde.len()
        )));
    }
    let mut total = 0.0;
    for i in 0..b {
        total += pinball_row(r[i], &q_r[i], grid)? + pinball_row(r_tilde[i], &q_r_tilde[i], grid)?;
    }
    Ok(total / (b * grid.len()) as f64)
}

/// Mean over batch, horizon and quantiles. Inputs are indexed `[sample][step]`
/// (and `[sample][step][quantile]` for forecasts); every sample must share the
/// same horizon.
pub fn loss_multistep(
    r: &[Vec<f64>],
    r_tilde: &[Vec<f64>],
    q_r: &[Vec<Vec<f64>>],
    q_r_tilde: &[Vec<Vec<f64>>],
    grid: &QuantileGrid,
) -> Result<f64> {
    let b = r.len();
    if b == 0 {
        return Err(QuantError::Batching("empty batch".into()));
    }
    let t = r[0].len();
    if t == 0 {
        return Err(QuantError::Batching("zero-length horizon".into()));
    }
    let ragged = r.iter().chain(r_tilde).any(|s| s.len() != t) || q_r.iter().chain(q_r_tilde).any(|s| s.len() != t);
    if ragged || r_tilde.len() != b || q_r.len() != b || q_r_tilde.len() != b {
        return Err(QuantError::Batching(format!(
            "samples in a batch must share one horizon (first has {t})"
        )));
    }
    let mut total = 0.0;
    for i in 0..b {
        for k in 0..t {
            total += pinball_row(r[i][k], &q_r[i][k], grid)? + pinball_row(r_tilde[i][k], &q_r_tilde[i][k], grid)?;
        }
    }
    Ok(total / (b * t * grid.len()) as f64)
}
