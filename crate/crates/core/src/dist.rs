//! Quantile vector to density: Gaussian KDE on a dense grid, with the CDF
//! taken as the normalised running sum of the PDF.
//!
//! The support is `[min(q), max(q)]`; mass beyond the extreme quantiles is
//! clipped.

use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{QuantError, Result};
use crate::plot::{line_chart, Line};

pub const GRID_POINTS: usize = 200;
/// In raw-return units.
pub const BANDWIDTH: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityEstimate {
    pub grid: Vec<f64>,
    pub pdf: Vec<f64>,
    pub cdf: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub mean: f64,
    pub variance: f64,
    pub skewness: f64,
}

/// Evenly spaced points with both ends exact.
pub fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![a];
    }
    let step = (b - a) / (n - 1) as f64;
    let mut v: Vec<f64> = (0..n).map(|i| a + step * i as f64).collect();
    v[n - 1] = b;
    v
}

pub fn quantiles_to_pdf(q: &[f64], grid_points: usize, bandwidth: f64) -> Result<DensityEstimate> {
    if q.is_empty() {
        return Err(QuantError::Validation("no quantiles given".into()));
    }
    if q.iter().any(|v| !v.is_finite()) {
        return Err(QuantError::Validation("non-finite quantile".into()));
    }
    if !(bandwidth > 0.0) || grid_points < 2 {
        return Err(QuantError::Validation(format!(
            "bandwidth {bandwidth} and grid size {grid_points} must be positive (grid at least 2)"
        )));
    }
    let lo = q.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = q.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi <= lo {
        return Err(QuantError::DegenerateSupport(q.len()));
    }
    let grid = linspace(lo, hi, grid_points);
    let norm = 1.0 / (q.len() as f64 * bandwidth * (2.0 * std::f64::consts::PI).sqrt());
    let pdf: Vec<f64> = grid
        .iter()
        .map(|&x| {
            norm * q
                .iter()
                .map(|&c| {
                    let u = (x - c) / bandwidth;
                    (-0.5 * u * u).exp()
                })
                .sum::<f64>()
        })
        .collect();
    let mut cdf = Vec::with_capacity(pdf.len());
    let mut acc = 0.0;
    for p in &pdf {
        acc += p;
        cdf.push(acc);
    }
    let total = acc;
    if !(total > 0.0) {
        return Err(QuantError::DegenerateSupport(q.len()));
    }
    for c in cdf.iter_mut() {
        *c /= total;
    }
    Ok(DensityEstimate { grid, pdf, cdf })
}

fn trapezoid(x: &[f64], y: &[f64]) -> f64 {
    x.windows(2)
        .zip(y.windows(2))
        .map(|(xw, yw)| 0.5 * (xw[1] - xw[0]) * (yw[0] + yw[1]))
        .sum()
}

impl DensityEstimate {
    /// Trapezoidal moments of the renormalised pdf.
    pub fn moments(&self) -> Moments {
        let mass = trapezoid(&self.grid, &self.pdf);
        let f: Vec<f64> = self.pdf.iter().map(|p| p / mass).collect();
        let weighted = |g: &dyn Fn(f64) -> f64| {
            let y: Vec<f64> = self.grid.iter().zip(&f).map(|(&x, &p)| g(x) * p).collect();
            trapezoid(&self.grid, &y)
        };
        let mean = weighted(&|x| x);
        let variance = weighted(&|x| (x - mean).powi(2));
        let third = weighted(&|x| (x - mean).powi(3));
        let skewness = if variance > 0.0 {
            third / variance.powf(1.5)
        } else {
            0.0
        };
        Moments {
            mean,
            variance,
            skewness,
        }
    }

    /// Inverse-CDF sampling with linear interpolation between grid points.
    pub fn sample(&self, n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| self.inverse_cdf(rng.random::<f64>())).collect()
    }

    pub fn inverse_cdf(&self, u: f64) -> f64 {
        if u <= self.cdf[0] {
            return self.grid[0];
        }
        let i = self.cdf.partition_point(|&c| c < u).min(self.cdf.len() - 1);
        let (c0, c1) = (self.cdf[i - 1], self.cdf[i]);
        let (x0, x1) = (self.grid[i - 1], self.grid[i]);
        if c1 <= c0 {
            return x1;
        }
        x0 + (u - c0) / (c1 - c0) * (x1 - x0)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("x,pdf,cdf\n");
        for ((x, p), c) in self.grid.iter().zip(&self.pdf).zip(&self.cdf) {
            let _ = writeln!(s, "{x},{p},{c}");
        }
        s
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| QuantError::io(path, e))
    }
}

/// Overlays several densities, e.g. successive forecast steps.
pub fn density_svg(title: &str, densities: &[(String, DensityEstimate)]) -> String {
    let lines: Vec<Line> = densities
        .iter()
        .map(|(label, d)| Line {
            label: label.clone(),
            x: d.grid.clone(),
            y: d.pdf.clone(),
        })
        .collect();
    line_chart(title, "return", "density", &lines)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quantmodels::TAUS;

    /// 0.02 * Phi^-1(tau) + 0.001 on the 37-level grid.
    const GOLDEN_Q: [f64; 37] = [
        -0.07681183772826189,
        -0.06861512808692424,
        -0.062493670549101515,
        -0.059466828794782954,
        -0.057400558887240404,
        -0.055140675366876085,
        -0.05051658607097802,
        -0.04552695748081682,
        -0.04240180755169121,
        -0.04007497821263646,
        -0.036615872163025025,
        -0.03189707253902946,
        -0.024631031310892008,
        -0.019728667789875795,
        -0.015832424671458283,
        -0.012489795003921635,
        -0.009488010254160819,
        -0.006706409328151355,
        -0.004066942062715994,
        -0.0015132269371014805,
        0.001,
        0.003513226937101483,
        0.006066942062715994,
        0.008706409328151355,
        0.011488010254160814,
        0.014489795003921634,
        0.017832424671458288,
        0.021728667789875797,
        0.02663103131089201,
        0.033897072539029446,
        0.04207497821263645,
        0.04752695748081682,
        0.05251658607097801,
        0.05714067536687622,
        0.0644936705491013,
        0.07061512808692484,
        0.0788118377282624,
    ];

    #[test]
    fn matches_sklearn_golden() {
        // sklearn KernelDensity(gaussian, 0.01) + np.cumsum normalisation
        let d = quantiles_to_pdf(&GOLDEN_Q, 200, 0.01).unwrap();
        let expect = [
            (0, -0.07681183772826189, 2.7886954207620493, 0.002279353245412233),
            (37, -0.047876782492626724, 7.365128547415796, 0.18007898622417426),
            (100, 0.0013910142599412728, 9.643894993211513, 0.5634984494896734),
            (150, 0.04049244025404285, 4.384986712151675, 0.8388389706279962),
            (199, 0.0788118377282624, 2.3820309942437925, 1.0),
        ];
        for (i, x, p, c) in expect {
            assert!((d.grid[i] - x).abs() < 1e-14, "grid {i}");
            assert!((d.pdf[i] - p).abs() < 1e-10 * p, "pdf {i}: {} vs {p}", d.pdf[i]);
            assert!((d.cdf[i] - c).abs() < 1e-12, "cdf {i}: {} vs {c}", d.cdf[i]);
        }
    }

    #[test]
    fn point_mass_peak() {
        let q: Vec<f64> = (0..37).map(|i| (i as f64 - 18.0) * 1e-7).collect();
        let d = quantiles_to_pdf(&q, 201, 0.01).unwrap();
        let peak = d.pdf.iter().copied().fold(0.0, f64::max);
        let expected = 1.0 / ((2.0 * std::f64::consts::PI).sqrt() * 0.01);
        assert!((peak - expected).abs() < 1e-3 * expected);
    }

    #[test]
    fn cdf_contract() {
        let d = quantiles_to_pdf(&GOLDEN_Q, 200, 0.01).unwrap();
        assert_eq!(*d.cdf.last().unwrap(), 1.0);
        assert!(d.cdf.windows(2).all(|w| w[0] <= w[1]));
        assert!(d.pdf.iter().all(|p| *p >= 0.0));
        assert!(matches!(
            quantiles_to_pdf(&[0.1; 37], 200, 0.01),
            Err(QuantError::DegenerateSupport(37))
        ));
        assert!(quantiles_to_pdf(&[], 200, 0.01).is_err());
        assert!(quantiles_to_pdf(&GOLDEN_Q, 200, 0.0).is_err());
    }

    #[test]
    fn symmetric_quantiles_give_symmetric_pdf() {
        let q: Vec<f64> = (-18..=18).map(|i| (i as f64 * 0.3).powi(3) * 1e-3).collect();
        let d = quantiles_to_pdf(&q, 200, 0.01).unwrap();
        for i in 0..100 {
            assert!((d.pdf[i] - d.pdf[199 - i]).abs() < 1e-10);
        }
        assert!(d.moments().skewness.abs() < 1e-6);
    }

    #[test]
    fn translation_equivariance() {
        let a = quantiles_to_pdf(&GOLDEN_Q, 200, 0.01).unwrap();
        let shifted: Vec<f64> = GOLDEN_Q.iter().map(|q| q + 0.25).collect();
        let b = quantiles_to_pdf(&shifted, 200, 0.01).unwrap();
        for i in 0..200 {
            assert!((b.grid[i] - a.grid[i] - 0.25).abs() < 1e-10);
            assert!((b.pdf[i] - a.pdf[i]).abs() < 1e-10 * a.pdf[i].max(1.0));
            assert!((b.cdf[i] - a.cdf[i]).abs() < 1e-10);
        }
        let (ma, mb) = (a.moments(), b.moments());
        assert!((mb.mean - ma.mean - 0.25).abs() < 1e-10);
    }

    #[test]
    fn normal_quantile_moments_match_numpy() {
        // the level grid is lopsided toward the lower tail, so the mean is not 0
        let q: Vec<f64> = GOLDEN_Q.iter().map(|v| (v - 0.001) / 0.02).collect();
        assert_eq!(q.len(), TAUS.len());
        let m = quantiles_to_pdf(&q, 200, 0.05).unwrap().moments();
        assert!((m.mean + 0.27761814916213845).abs() < 1e-9, "{m:?}");
        assert!((m.variance - 4.025730498544893).abs() < 1e-8, "{m:?}");
        assert!((m.skewness - 0.17880050910413647).abs() < 1e-8, "{m:?}");
    }

    #[test]
    fn sampling_matches_cdf() {
        let d = quantiles_to_pdf(&GOLDEN_Q, 200, 0.01).unwrap();
        let mut s = d.sample(10_000, 3);
        assert_eq!(s, d.sample(10_000, 3));
        assert!(s.iter().all(|v| *v >= d.grid[0] && *v <= d.grid[199]));
        s.sort_by(f64::total_cmp);
        let ks = d
            .grid
            .iter()
            .zip(&d.cdf)
            .map(|(x, c)| (s.partition_point(|v| v <= x) as f64 / s.len() as f64 - c).abs())
            .fold(0.0, f64::max);
        assert!(ks < 0.03, "{ks}");
    }

    #[test]
    fn csv_has_header_and_rows() {
        let d = quantiles_to_pdf(&GOLDEN_Q, 200, 0.01).unwrap();
        let csv = d.to_csv();
        assert!(csv.starts_with("x,pdf,cdf\n"));
        assert_eq!(csv.lines().count(), 201);
        assert!(density_svg("t", &[("step 1".into(), d)]).contains("polyline"));
    }
}
