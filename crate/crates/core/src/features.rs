//! Engineered per-asset features, the market matrix and rolling z-scores.
//!
//! Indicator settings: RSI 14 with Wilder smoothing, MACD 12/26 with a
//! 9-period signal, Bollinger 20 ± 2 sd, stochastic %K 14 / %D 3, VWAP over
//! 22 days on the typical price. Every value at row `t` depends only on rows
//! `<= t`.

use std::collections::BTreeSet;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{QuantError, Result};
use crate::ingest::{AssetClass, MarketKind, PriceSeries};
use crate::stats;

/// Leading rows dropped so every indicator is past its lookback.
pub const WARMUP: usize = 34;
pub const STD_FLOOR: f64 = 1e-8;

const RSI_PERIOD: usize = 14;
const MACD_FAST: usize = 12;
const MACD_SLOW: usize = 26;
const MACD_SIGNAL: usize = 9;
const BB_PERIOD: usize = 20;
const BB_WIDTH: f64 = 2.0;
const STOCH_K: usize = 14;
const STOCH_D: usize = 3;
const VWAP_PERIOD: usize = 22;
const SKEW_PERIOD: usize = 22;
const HORIZONS: [usize; 3] = [2, 5, 22];

/// Numeric feature names in column order; one-hot class columns follow.
pub const NUMERIC_FEATURES: [&str; 28] = [
    "ret_2",
    "ret_5",
    "ret_22",
    "cum_return",
    "log_return",
    "vol_2",
    "vol_5",
    "vol_22",
    "skew_22",
    "kurt_22",
    "sma_2",
    "sma_5",
    "sma_22",
    "ema_2",
    "ema_5",
    "ema_22",
    "rsi_14",
    "macd",
    "macd_signal",
    "bb_upper",
    "bb_lower",
    "bb_pct_b",
    "stoch_k",
    "stoch_d",
    "vwap_22",
    "sharpe_2",
    "sharpe_5",
    "sharpe_22",
];

/// Time-indexed feature matrix: one vector of `m` values per date.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMatrix {
    pub feature_names: Vec<String>,
    /// `true` for one-hot columns, which normalisation passes through.
    pub categorical: Vec<bool>,
    pub dates: Vec<NaiveDate>,
    pub values: Vec<Vec<f64>>,
}

impl FeatureMatrix {
    pub fn width(&self) -> usize {
        self.feature_names.len()
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.values.iter().map(|r| r[j]).collect()
    }

    /// Keeps only the rows whose date is in `keep`, preserving order.
    pub fn select_dates(&self, keep: &BTreeSet<NaiveDate>) -> Self {
        let (dates, values) = self
            .dates
            .iter()
            .zip(&self.values)
            .filter(|(d, _)| keep.contains(d))
            .map(|(d, v)| (*d, v.clone()))
            .unzip();
        Self {
            feature_names: self.feature_names.clone(),
            categorical: self.categorical.clone(),
            dates,
            values,
        }
    }

    /// Appends a numeric column; `values` must align with `self.dates`.
    pub fn push_column(&mut self, name: &str, values: &[f64]) -> Result<()> {
        if values.len() != self.len() {
            return Err(QuantError::Dimension(format!(
                "column `{name}` has {} values for {} rows",
                values.len(),
                self.len()
            )));
        }
        self.feature_names.push(name.to_string());
        self.categorical.push(false);
        for (row, v) in self.values.iter_mut().zip(values) {
            row.push(*v);
        }
        Ok(())
    }
}

pub fn feature_names() -> Vec<String> {
    NUMERIC_FEATURES
        .iter()
        .map(|s| s.to_string())
        .chain(AssetClass::ALL.iter().map(|c| format!("class_{}", c.slug())))
        .collect()
}

fn window(x: &[f64], i: usize, k: usize) -> &[f64] {
    &x[(i + 1).saturating_sub(k)..=i]
}

fn ema(x: &[f64], period: usize) -> Vec<f64> {
    let alpha = 2.0 / (period as f64 + 1.0);
    let mut out = Vec::with_capacity(x.len());
    let mut prev = x[0];
    for &v in x {
        prev = alpha * v + (1.0 - alpha) * prev;
        out.push(prev);
    }
    out
}

/// Wilder RSI; 50 where there is no movement at all.
fn rsi(prices: &[f64], period: usize) -> Vec<f64> {
    let n = prices.len();
    let mut out = vec![50.0; n];
    if n <= period {
        return out;
    }
    let change = |i: usize| prices[i] - prices[i - 1];
    let (mut gain, mut loss) = (0.0, 0.0);
    for i in 1..=period {
        let d = change(i);
        if d > 0.0 {
            gain += d;
        } else {
            loss -= d;
        }
    }
    gain /= period as f64;
    loss /= period as f64;
    let value = |g: f64, l: f64| {
        if l == 0.0 {
            if g == 0.0 {
                50.0
            } else {
                100.0
            }
        } else {
            100.0 - 100.0 / (1.0 + g / l)
        }
    };
    out[period] = value(gain, loss);
    let p = period as f64;
    for i in period + 1..n {
        let d = change(i);
        gain = (gain * (p - 1.0) + d.max(0.0)) / p;
        loss = (loss * (p - 1.0) + (-d).max(0.0)) / p;
        out[i] = value(gain, loss);
    }
    out
}

/// Full indicator set for one asset, warmup rows trimmed.
pub fn engineer(series: &PriceSeries) -> Result<FeatureMatrix> {
    let n = series.len();
    if n <= WARMUP {
        return Err(QuantError::Warmup {
            required: WARMUP + 1,
            available: n,
        });
    }
    let p = series.adj_close();
    let (high, low): (Vec<f64>, Vec<f64>) = series.rows.iter().map(|r| r.adjusted_high_low()).unzip();
    let volume: Vec<f64> = series.rows.iter().map(|r| r.volume).collect();
    let typical: Vec<f64> = (0..n).map(|i| (high[i] + low[i] + p[i]) / 3.0).collect();

    let mut lr = vec![0.0; n];
    for i in 1..n {
        lr[i] = (p[i] / p[i - 1]).ln();
    }
    let emas: Vec<Vec<f64>> = HORIZONS.iter().map(|&k| ema(&p, k)).collect();
    let fast = ema(&p, MACD_FAST);
    let slow = ema(&p, MACD_SLOW);
    let macd: Vec<f64> = fast.iter().zip(&slow).map(|(a, b)| a - b).collect();
    let signal = ema(&macd, MACD_SIGNAL);
    let rsi = rsi(&p, RSI_PERIOD);

    let mut stoch_k = vec![50.0; n];
    for i in 0..n {
        let lo = window(&low, i, STOCH_K).iter().copied().fold(f64::INFINITY, f64::min);
        let hi = window(&high, i, STOCH_K)
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max);
        if hi > lo {
            stoch_k[i] = 100.0 * (p[i] - lo) / (hi - lo);
        }
    }

    let class_idx = series.asset_class.index();
    let mut values = Vec::with_capacity(n - WARMUP);
    for i in WARMUP..n {
        let mut row = Vec::with_capacity(NUMERIC_FEATURES.len() + AssetClass::ALL.len());
        for &k in &HORIZONS {
            row.push(p[i] / p[i - k] - 1.0);
        }
        row.push((p[i] / p[0]).ln());
        row.push(lr[i]);
        for &k in &HORIZONS {
            row.push(stats::sample_std(window(&lr, i, k)));
        }
        let lr_skew = window(&lr, i, SKEW_PERIOD);
        row.push(stats::skewness(lr_skew));
        row.push(stats::excess_kurtosis(lr_skew));
        for &k in &HORIZONS {
            row.push(stats::mean(window(&p, i, k)));
        }
        for e in &emas {
            row.push(e[i]);
        }
        row.push(rsi[i]);
        row.push(macd[i]);
        row.push(signal[i]);

        let bb = window(&p, i, BB_PERIOD);
        let mid = stats::mean(bb);
        let sd = stats::sample_std(bb);
        let (upper, lower) = (mid + BB_WIDTH * sd, mid - BB_WIDTH * sd);
        row.push(upper);
        row.push(lower);
        row.push(if upper > lower {
            (p[i] - lower) / (upper - lower)
        } else {
            0.5
        });

        row.push(stoch_k[i]);
        row.push(stats::mean(window(&stoch_k, i, STOCH_D)));

        let tp = window(&typical, i, VWAP_PERIOD);
        let vol = window(&volume, i, VWAP_PERIOD);
        let vsum: f64 = vol.iter().sum();
        row.push(if vsum > 0.0 {
            tp.iter().zip(vol).map(|(a, b)| a * b).sum::<f64>() / vsum
        } else {
            stats::mean(tp)
        });

        for &k in &HORIZONS {
            let w = window(&lr, i, k);
            let sd = stats::sample_std(w);
            row.push(if sd > 0.0 { stats::mean(w) / sd } else { 0.0 });
        }

        for c in 0..AssetClass::ALL.len() {
            row.push(if c == class_idx { 1.0 } else { 0.0 });
        }
        if let Some(j) = row.iter().position(|v| !v.is_finite()) {
            return Err(QuantError::Domain(format!(
                "{}: feature `{}` is not finite on {}",
                series.asset_id,
                feature_names()[j],
                series.rows[i].date
            )));
        }
        values.push(row);
    }

    let names = feature_names();
    let categorical = (0..names.len()).map(|j| j >= NUMERIC_FEATURES.len()).collect();
    Ok(FeatureMatrix {
        feature_names: names,
        categorical,
        dates: series.rows[WARMUP..].iter().map(|r| r.date).collect(),
        values,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalizerState {
    pub window: usize,
    pub eps: f64,
}

impl NormalizerState {
    pub fn new(window: usize) -> Result<Self> {
        if window < 2 {
            return Err(QuantError::Validation(format!("normalisation window {window} < 2")));
        }
        Ok(Self { window, eps: STD_FLOOR })
    }
}

/// Rolling z-score over the trailing `window` rows (current row included).
/// The first `window - 1` rows are dropped; one-hot columns are copied.
pub fn normalize(f: &FeatureMatrix, state: &NormalizerState) -> Result<FeatureMatrix> {
    let w = state.window;
    if w < 2 {
        return Err(QuantError::Validation(format!("normalisation window {w} < 2")));
    }
    if f.len() < w {
        return Err(QuantError::Warmup {
            required: w,
            available: f.len(),
        });
    }
    let m = f.width();
    let mut values = vec![vec![0.0; m]; f.len() + 1 - w];
    for j in 0..m {
        if f.categorical[j] {
            for (t, row) in values.iter_mut().enumerate() {
                row[j] = f.values[t + w - 1][j];
            }
            continue;
        }
        let col = f.column(j);
        for (t, row) in values.iter_mut().enumerate() {
            let win = &col[t..t + w];
            let mean = stats::mean(win);
            let sd = stats::sample_std(win).max(state.eps);
            row[j] = (col[t + w - 1] - mean) / sd;
        }
    }
    Ok(FeatureMatrix {
        feature_names: f.feature_names.clone(),
        categorical: f.categorical.clone(),
        dates: f.dates[w - 1..].to_vec(),
        values,
    })
}

/// Raw market matrix `Z`: log returns for [`MarketKind::Return`] series and
/// levels for [`MarketKind::Level`] series, inner-joined on date.
pub fn market_features(series: &[(PriceSeries, MarketKind)]) -> Result<FeatureMatrix> {
    if series.is_empty() {
        return Err(QuantError::Alignment("no market series given".into()));
    }
    let per_series: Vec<Vec<(NaiveDate, f64)>> = series
        .iter()
        .map(|(s, kind)| match kind {
            MarketKind::Return => crate::ingest::log_returns(s),
            MarketKind::Level => Ok(s.rows.iter().map(|r| (r.date, r.adj_close)).collect()),
        })
        .collect::<Result<_>>()?;

    let mut common: BTreeSet<NaiveDate> = per_series[0].iter().map(|(d, _)| *d).collect();
    for s in &per_series[1..] {
        let dates: BTreeSet<NaiveDate> = s.iter().map(|(d, _)| *d).collect();
        common = common.intersection(&dates).copied().collect();
    }
    if common.is_empty() {
        return Err(QuantError::Alignment("market series share no dates".into()));
    }

    let columns: Vec<Vec<f64>> = per_series
        .iter()
        .map(|s| s.iter().filter(|(d, _)| common.contains(d)).map(|(_, v)| *v).collect())
        .collect();
    let dates: Vec<NaiveDate> = common.into_iter().collect();
    let values = (0..dates.len())
        .map(|t| columns.iter().map(|c| c[t]).collect())
        .collect();
    let feature_names = series
        .iter()
        .map(|(s, kind)| match kind {
            MarketKind::Return => format!("{}.log_return", s.asset_id),
            MarketKind::Level => format!("{}.level", s.asset_id),
        })
        .collect();
    Ok(FeatureMatrix {
        feature_names,
        categorical: vec![false; series.len()],
        dates,
        values,
    })
}
