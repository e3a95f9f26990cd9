use serde::{Deserialize, Serialize};

use crate::error::{QuantError, Result};

/// The 37 quantile levels. Deliberately denser in the tails; the grid is not
/// symmetric around 0.5.
pub const TAUS: [f64; 37] = [
    0.00005, 0.00025, 0.00075, 0.00125, 0.00175, 0.0025, 0.005, 0.01, 0.015, 0.02, 0.03, 0.05, 0.1, 0.15, 0.2, 0.25,
    0.3, 0.35, 0.4, 0.45, 0.5, 0.55, 0.6, 0.65, 0.7, 0.75, 0.8, 0.85, 0.9, 0.95, 0.98, 0.99, 0.995, 0.9975, 0.99925,
    0.99975, 0.99995,
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantileGrid {
    taus: Vec<f64>,
}

impl Default for QuantileGrid {
    fn default() -> Self {
        Self { taus: TAUS.to_vec() }
    }
}

impl QuantileGrid {
    /// Any strictly increasing set of levels in `(0, 1)`; tests use short grids.
    pub fn new(taus: Vec<f64>) -> Result<Self> {
        if taus.is_empty() {
            return Err(QuantError::Validation("empty quantile grid".into()));
        }
        if let Some(t) = taus.iter().find(|t| !(**t > 0.0 && **t < 1.0)) {
            return Err(QuantError::Domain(format!("quantile level {t} outside (0, 1)")));
        }
        if taus.windows(2).any(|w| w[1] <= w[0]) {
            return Err(QuantError::Validation(
                "quantile levels must be strictly increasing".into(),
            ));
        }
        Ok(Self { taus })
    }

    pub fn taus(&self) -> &[f64] {
        &self.taus
    }

    pub fn len(&self) -> usize {
        self.taus.len()
    }

    pub fn is_empty(&self) -> bool {
        self.taus.is_empty()
    }

    pub fn check_width(&self, width: usize, what: &str) -> Result<()> {
        if width != self.len() {
            return Err(QuantError::Dimension(format!(
                "{what} has {width} quantiles, grid has {}",
                self.len()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ForecastKind {
    Normalized,
    Raw,
}

/// One row of quantiles per forecast step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantileForecast {
    pub kind: ForecastKind,
    pub rows: Vec<Vec<f64>>,
}

impl QuantileForecast {
    pub fn horizon(&self) -> usize {
        self.rows.len()
    }

    pub fn is_monotone(&self) -> bool {
        self.rows.iter().all(|r| r.windows(2).all(|w| w[0] <= w[1]))
    }

    pub fn repaired(mut self) -> Self {
        self.rows.iter_mut().for_each(|r| monotone_repair(r));
        self
    }
}

/// Sorts a quantile row ascending, undoing any crossings.
pub fn monotone_repair(row: &mut [f64]) {
    row.sort_by(f64::total_cmp);
}
