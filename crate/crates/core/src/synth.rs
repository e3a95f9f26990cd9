//! Synthetic assets whose log returns mix a standardised market series with
//! independent noise at a target correlation.

use std::str::FromStr;

use chrono::{Datelike, Days, NaiveDate, Weekday};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, LogNormal, Normal, StandardNormal, Uniform};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{QuantError, Result};
use crate::ingest::{AssetClass, MarketKind, PriceRow, PriceSeries};
use crate::stats;

pub const DEFAULT_SAMPLES: usize = 1000;
pub const DEFAULT_PER_DISTRIBUTION: usize = 10;
pub const DEFAULT_CORRELATION: f64 = 0.7;
pub const DEFAULT_MARKET_FEATURES: usize = 4;
pub const MU_RANGE: (f64, f64) = (-0.001, 0.001);
pub const SIGMA_RANGE: (f64, f64) = (0.01, 0.03);
const MARKET_VOL: f64 = 0.01;
const HIGH_LOW_NOISE: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseDist {
    Normal,
    Gamma,
    Lognormal,
    Uniform,
}

impl NoiseDist {
    pub const ALL: [NoiseDist; 4] = [
        NoiseDist::Normal,
        NoiseDist::Gamma,
        NoiseDist::Lognormal,
        NoiseDist::Uniform,
    ];

    pub fn name(self) -> &'static str {
        match self {
            NoiseDist::Normal => "normal",
            NoiseDist::Gamma => "gamma",
            NoiseDist::Lognormal => "lognormal",
            NoiseDist::Uniform => "uniform",
        }
    }

    /// Report row label.
    pub fn group(self) -> &'static str {
        match self {
            NoiseDist::Normal => "Normal Synthetic",
            NoiseDist::Gamma => "Gamma Synthetic",
            NoiseDist::Lognormal => "Log Normal Synthetic",
            NoiseDist::Uniform => "Uniform Synthetic",
        }
    }

    /// Normal is already standard and uniform on [-1, 1] is used as drawn;
    /// gamma(2, 1) and lognormal(0, 1) are standardised with the population std.
    pub fn noise<R: Rng>(self, n: usize, rng: &mut R) -> Vec<f64> {
        match self {
            NoiseDist::Normal => (0..n).map(|_| StandardNormal.sample(rng)).collect(),
            NoiseDist::Uniform => {
                let u = Uniform::new_inclusive(-1.0, 1.0).expect("valid bounds");
                (0..n).map(|_| u.sample(rng)).collect()
            }
            NoiseDist::Gamma => {
                let g = Gamma::new(2.0, 1.0).expect("valid gamma");
                standardize_or_zero((0..n).map(|_| g.sample(rng)).collect())
            }
            NoiseDist::Lognormal => {
                let l = LogNormal::new(0.0, 1.0).expect("valid lognormal");
                standardize_or_zero((0..n).map(|_| l.sample(rng)).collect())
            }
        }
    }
}

impl FromStr for NoiseDist {
    type Err = QuantError;

    fn from_str(s: &str) -> Result<Self> {
        NoiseDist::ALL
            .into_iter()
            .find(|d| d.name() == s)
            .ok_or_else(|| QuantError::Lookup {
                kind: "distribution",
                name: s.to_string(),
            })
    }
}

fn standardize(x: &[f64]) -> Option<Vec<f64>> {
    let m = stats::mean(x);
    let s = stats::population_std(x);
    // rounding leaves a constant series with a tiny nonzero spread
    if !(s > 1e-12 * m.abs()) || !s.is_finite() {
        return None;
    }
    Some(x.iter().map(|v| (v - m) / s).collect())
}

fn standardize_or_zero(x: Vec<f64>) -> Vec<f64> {
    let n = x.len();
    standardize(&x).unwrap_or_else(|| vec![0.0; n])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub distribution: NoiseDist,
    pub mu: f64,
    pub sigma: f64,
    pub target_correlation: f64,
    pub seed: u64,
}

impl SynthSpec {
    /// Draws `mu` and `sigma` from their uniform ranges.
    pub fn draw<R: Rng>(distribution: NoiseDist, target_correlation: f64, rng: &mut R) -> Self {
        Self {
            distribution,
            mu: rng.random_range(MU_RANGE.0..MU_RANGE.1),
            sigma: rng.random_range(SIGMA_RANGE.0..SIGMA_RANGE.1),
            target_correlation,
            seed: rng.random(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0) || !self.mu.is_finite() || !self.sigma.is_finite() {
            return Err(QuantError::Validation(format!(
                "sigma {} / mu {} invalid",
                self.sigma, self.mu
            )));
        }
        if !(self.target_correlation.abs() <= 1.0) {
            return Err(QuantError::Validation(format!(
                "target correlation {} outside [-1, 1]",
                self.target_correlation
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthResult {
    pub spec: SynthSpec,
    pub series: PriceSeries,
    /// The generated log returns, one per date; the first is absorbed into
    /// the starting price.
    pub log_returns: Vec<f64>,
    /// Pearson correlation between `log_returns` and the market input.
    pub achieved_correlation: f64,
}

/// Weekdays from `start` onward.
pub fn business_days(start: NaiveDate, n: usize) -> Vec<NaiveDate> {
    let mut out = Vec::with_capacity(n);
    let mut d = start;
    while out.len() < n {
        if !matches!(d.weekday(), Weekday::Sat | Weekday::Sun) {
            out.push(d);
        }
        d = d + Days::new(1);
    }
    out
}

pub fn default_start() -> NaiveDate {
    NaiveDate::from_ymd_opt(2000, 1, 3).expect("valid date")
}

pub fn generate(
    asset_id: &str,
    spec: &SynthSpec,
    market_log_returns: &[f64],
    dates: &[NaiveDate],
) -> Result<SynthResult> {
    spec.validate()?;
    let n = market_log_returns.len();
    if dates.len() != n {
        return Err(QuantError::Dimension(format!(
            "{} dates for {n} market returns",
            dates.len()
        )));
    }
    if n < 2 {
        return Err(QuantError::Validation("need at least two periods".into()));
    }
    let market = standardize(market_log_returns)
        .ok_or_else(|| QuantError::Standardization("market series has zero variance".into()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let noise = spec.distribution.noise(n, &mut rng);
    let rho = spec.target_correlation;
    let w = (1.0 - rho * rho).max(0.0).sqrt();
    let log_returns: Vec<f64> = market
        .iter()
        .zip(&noise)
        .map(|(m, e)| (rho * m + w * e) * spec.sigma + spec.mu)
        .collect();

    let initial = rng.random_range(5.0..1000.0);
    let hl = Normal::new(0.0, HIGH_LOW_NOISE).expect("valid normal");
    let mut acc = 0.0;
    let mut rows = Vec::with_capacity(n);
    for (r, &date) in log_returns.iter().zip(dates) {
        acc += r;
        let p = initial * acc.exp();
        let mut high = p * (1.0 + hl.sample(&mut rng));
        let mut low = p * (1.0 - hl.sample(&mut rng));
        if low > high {
            std::mem::swap(&mut low, &mut high);
        }
        rows.push(PriceRow {
            date,
            open: None,
            high,
            low,
            close: p,
            adj_close: p,
            volume: 0.0,
        });
    }
    let achieved_correlation = stats::correlation(&log_returns, market_log_returns).unwrap_or(0.0);
    Ok(SynthResult {
        spec: *spec,
        series: PriceSeries::new(asset_id, AssetClass::Synthetic, rows)?,
        log_returns,
        achieved_correlation,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthMarket {
    pub series: PriceSeries,
    pub kind: MarketKind,
    pub log_returns: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthAsset {
    pub distribution: NoiseDist,
    pub result: SynthResult,
}

impl SynthAsset {
    pub fn group(&self) -> &'static str {
        self.distribution.group()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthDataset {
    pub assets: Vec<SynthAsset>,
    /// The first series drives every asset; the rest are independent.
    pub market: Vec<SynthMarket>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BatchOptions {
    pub per_distribution: usize,
    pub distributions: Vec<NoiseDist>,
    pub n_samples: usize,
    pub market_features: usize,
    pub target_correlation: f64,
    pub start: NaiveDate,
}

impl Default for BatchOptions {
    fn default() -> Self {
        Self {
            per_distribution: DEFAULT_PER_DISTRIBUTION,
            distributions: NoiseDist::ALL.to_vec(),
            n_samples: DEFAULT_SAMPLES,
            market_features: DEFAULT_MARKET_FEATURES,
            target_correlation: DEFAULT_CORRELATION,
            start: default_start(),
        }
    }
}

pub fn batch_generate(opts: &BatchOptions, seed: u64) -> Result<SynthDataset> {
    if opts.market_features == 0 {
        return Err(QuantError::Validation("at least one market feature is required".into()));
    }
    let dates = business_days(opts.start, opts.n_samples);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let market: Vec<SynthMarket> = (0..opts.market_features)
        .map(|j| {
            let z: Vec<f64> = (0..opts.n_samples).map(|_| StandardNormal.sample(&mut rng)).collect();
            let log_returns: Vec<f64> = z.iter().map(|v| MARKET_VOL * v).collect();
            let mut acc = 0.0;
            let rows = log_returns
                .iter()
                .zip(&dates)
                .map(|(r, &date)| {
                    acc += r;
                    let p = 100.0 * acc.exp();
                    PriceRow {
                        date,
                        open: None,
                        high: p,
                        low: p,
                        close: p,
                        adj_close: p,
                        volume: 0.0,
                    }
                })
                .collect();
            Ok(SynthMarket {
                series: PriceSeries::new(format!("syn_mkt_{}", j + 1), AssetClass::Synthetic, rows)?,
                kind: MarketKind::Return,
                log_returns,
            })
        })
        .collect::<Result<_>>()?;

    let specs: Vec<(String, NoiseDist, SynthSpec)> = opts
        .distributions
        .iter()
        .flat_map(|&d| (1..=opts.per_distribution).map(move |i| (d, i)))
        .map(|(d, i)| {
            let spec = SynthSpec::draw(d, opts.target_correlation, &mut rng);
            (format!("syn_{}_{i:02}", d.name()), d, spec)
        })
        .collect();
    let driver = &market[0].log_returns;
    let assets = specs
        .par_iter()
        .map(|(id, d, spec)| {
            Ok(SynthAsset {
                distribution: *d,
                result: generate(id, spec, driver, &dates)?,
            })
        })
        .collect::<Result<_>>()?;
    Ok(SynthDataset { assets, market })
}
