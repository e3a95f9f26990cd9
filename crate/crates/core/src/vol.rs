//! EWMA volatility, group-average volatility and volatility-normalised returns.

use std::collections::BTreeMap;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{QuantError, Result};
use crate::stats;

pub const DEFAULT_LAMBDA: f64 = 0.94;
/// Returns used to seed `sigma_0`.
pub const INIT_WINDOW: usize = 22;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VolSeries {
    pub asset_id: String,
    pub dates: Vec<NaiveDate>,
    pub sigma: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupVol {
    pub group: String,
    pub dates: Vec<NaiveDate>,
    pub sigma_bar: Vec<f64>,
}

impl GroupVol {
    pub fn lookup(&self) -> BTreeMap<NaiveDate, f64> {
        self.dates.iter().copied().zip(self.sigma_bar.iter().copied()).collect()
    }
}

/// `sigma_t^2 = lambda * sigma_{t-1}^2 + (1 - lambda) * r_{t-1}^2`, with
/// `sigma_0` the sample standard deviation of the first 22 returns.
///
/// `sigma_t` only uses returns strictly before `t`.
pub fn ewma_sigma(returns: &[f64], lambda: f64) -> Result<Vec<f64>> {
    if !(lambda > 0.0 && lambda < 1.0) {
        return Err(QuantError::Domain(format!("EWMA decay {lambda} outside (0, 1)")));
    }
    if returns.len() < INIT_WINDOW {
        return Err(QuantError::VolInit {
            required: INIT_WINDOW,
            available: returns.len(),
        });
    }
    let sigma0 = stats::sample_std(&returns[..INIT_WINDOW]);
    if !(sigma0 > 0.0) {
        return Err(QuantError::Domain(
            "first 22 returns have zero variance; EWMA volatility would be 0".into(),
        ));
    }
    let mut var = sigma0 * sigma0;
    let mut out = Vec::with_capacity(returns.len());
    out.push(sigma0);
    for r in &returns[..returns.len() - 1] {
        var = lambda * var + (1.0 - lambda) * r * r;
        out.push(var.sqrt());
    }
    Ok(out)
}

pub fn ewma_vol(asset_id: &str, returns: &[(NaiveDate, f64)], lambda: f64) -> Result<VolSeries> {
    let values: Vec<f64> = returns.iter().map(|(_, r)| *r).collect();
    Ok(VolSeries {
        asset_id: asset_id.to_string(),
        dates: returns.iter().map(|(d, _)| *d).collect(),
        sigma: ewma_sigma(&values, lambda)?,
    })
}

/// Per-date arithmetic mean over the members that have that date.
pub fn group_vol(group: &str, members: &[VolSeries]) -> Result<GroupVol> {
    if members.is_empty() {
        return Err(QuantError::Validation(format!("group `{group}` has no members")));
    }
    let mut acc: BTreeMap<NaiveDate, (f64, usize)> = BTreeMap::new();
    for m in members {
        for (d, s) in m.dates.iter().zip(&m.sigma) {
            let e = acc.entry(*d).or_insert((0.0, 0));
            e.0 += s;
            e.1 += 1;
        }
    }
    let (dates, sigma_bar) = acc.into_iter().map(|(d, (s, n))| (d, s / n as f64)).unzip();
    Ok(GroupVol {
        group: group.to_string(),
        dates,
        sigma_bar,
    })
}

/// `r / sigma_bar`, elementwise.
pub fn normalize_returns(returns: &[f64], sigma_bar: &[f64]) -> Result<Vec<f64>> {
    if returns.len() != sigma_bar.len() {
        return Err(QuantError::Dimension(format!(
            "{} returns vs {} volatilities",
            returns.len(),
            sigma_bar.len()
        )));
    }
    returns
        .iter()
        .zip(sigma_bar)
        .map(|(&r, &s)| {
            if s > 0.0 {
                Ok(r / s)
            } else {
                Err(QuantError::Domain(format!("average volatility {s} is not positive")))
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn alternating(c: f64, n: usize) -> Vec<f64> {
        (0..n).map(|i| if i % 2 == 0 { c } else { -c }).collect()
    }

    #[test]
    fn recursion_step() {
        // 0.94 * 0.02^2 + 0.06 * 0.01^2 = 3.82e-4
        let var: f64 = 0.94 * 0.02f64.powi(2) + 0.06 * 0.01f64.powi(2);
        assert!((var - 3.82e-4).abs() < 1e-18);
        assert!((var.sqrt() - 0.019_545).abs() < 1e-6);

        // drive the recursion to sigma_{t-1} = 0.02 then feed r = 0.01
        let mut r = alternating(0.02, 22);
        r.push(0.01);
        r.push(0.0);
        let s = ewma_sigma(&r, 0.94).unwrap();
        let prev = s[22];
        let expected = (0.94 * prev * prev + 0.06 * 0.01 * 0.01).sqrt();
        assert!((s[23] - expected).abs() < 1e-15);
    }

    #[test]
    fn zero_returns_decay_monotonically() {
        let mut r = alternating(0.01, 22);
        r.extend(std::iter::repeat(0.0).take(100));
        let s = ewma_sigma(&r, DEFAULT_LAMBDA).unwrap();
        for w in s[22..].windows(2) {
            assert!(w[1] < w[0]);
        }
        assert!(*s.last().unwrap() < 0.01 * 0.94f64.powi(40));
    }

    #[test]
    fn constant_magnitude_fixed_point() {
        let s = ewma_sigma(&alternating(0.015, 301), DEFAULT_LAMBDA).unwrap();
        assert!((s[300] - 0.015).abs() < 1e-6);
    }

    #[test]
    fn needs_22_returns() {
        assert!(matches!(
            ewma_sigma(&[0.01; 21], 0.94),
            Err(QuantError::VolInit {
                required: 22,
                available: 21
            })
        ));
        assert!(ewma_sigma(&alternating(0.01, 30), 1.0).is_err());
    }

    #[test]
    fn group_examples() {
        let d = |i| NaiveDate::from_ymd_opt(2020, 1, i).unwrap();
        let a = VolSeries {
            asset_id: "a".into(),
            dates: vec![d(1), d(2)],
            sigma: vec![0.01, 0.01],
        };
        let b = VolSeries {
            asset_id: "b".into(),
            dates: vec![d(1)],
            sigma: vec![0.03],
        };
        let g = group_vol("g", &[a.clone(), b]).unwrap();
        assert!((g.sigma_bar[0] - 0.02).abs() < 1e-15);
        assert_eq!(g.sigma_bar[1], 0.01);
        let single = group_vol("g", &[a.clone()]).unwrap();
        assert_eq!(single.sigma_bar, a.sigma);
        assert!(group_vol("g", &[]).is_err());
    }

    #[test]
    fn missing_member_date_averages_over_rest() {
        let d = |i| NaiveDate::from_ymd_opt(2020, 1, i).unwrap();
        let members: Vec<VolSeries> = (0..10)
            .map(|k| {
                let dates: Vec<_> = if k == 3 { vec![d(1)] } else { vec![d(1), d(2)] };
                let sigma = dates.iter().map(|_| 0.01 * (k + 1) as f64).collect();
                VolSeries {
                    asset_id: format!("m{k}"),
                    dates,
                    sigma,
                }
            })
            .collect();
        let g = group_vol("g", &members).unwrap();
        let expected: f64 = (0..10).filter(|&k| k != 3).map(|k| 0.01 * (k + 1) as f64).sum::<f64>() / 9.0;
        assert!((g.sigma_bar[1] - expected).abs() < 1e-15);
    }

    #[test]
    fn normalization_examples() {
        assert_eq!(normalize_returns(&[0.02], &[0.02]).unwrap(), vec![1.0]);
        assert_eq!(normalize_returns(&[-0.01], &[0.02]).unwrap(), vec![-0.5]);
        assert!(matches!(normalize_returns(&[0.01], &[0.0]), Err(QuantError::Domain(_))));
        assert!(normalize_returns(&[0.01, 0.02], &[0.1]).is_err());
    }
}
