//! Linear quantile regression, one independent fit per quantile level.
//!
//! Features and target are standardised, each level starts from the
//! intercept-only optimum (the empirical quantile) and is refined by full-batch
//! subgradient descent with a decaying step, keeping the best iterate.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{QuantError, Result};
use crate::quantmodels::grid::{monotone_repair, QuantileGrid};
use crate::stats;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LqrOptions {
    pub max_iter: usize,
    pub step0: f64,
    /// Relative improvement of the best loss over `patience` iterations
    /// below which the fit stops.
    pub tolerance: f64,
    pub patience: usize,
    pub ridge: f64,
}

impl Default for LqrOptions {
    fn default() -> Self {
        Self {
            max_iter: 1000,
            step0: 0.5,
            tolerance: 1e-6,
            patience: 100,
            ridge: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LqrModel {
    pub grid: QuantileGrid,
    pub feature_means: Vec<f64>,
    pub feature_scales: Vec<f64>,
    pub target_mean: f64,
    pub target_scale: f64,
    /// Per level, `[intercept, w_1, ..., w_p]` on the standardised scale.
    pub coefficients: Vec<Vec<f64>>,
    /// Mean pinball loss of each level on the standardised training data.
    pub train_loss: Vec<f64>,
    pub iterations: Vec<usize>,
}

struct Design {
    rows: Vec<Vec<f64>>,
    y: Vec<f64>,
}

impl Design {
    fn loss_and_grad(&self, tau: f64, coef: &[f64], ridge: f64) -> (f64, Vec<f64>) {
        let n = self.rows.len() as f64;
        let mut loss = 0.0;
        let mut grad = vec![0.0; coef.len()];
        for (x, &y) in self.rows.iter().zip(&self.y) {
            let q = coef[0] + x.iter().zip(&coef[1..]).map(|(a, b)| a * b).sum::<f64>();
            let xi = y - q;
            loss += ndgrad::pinball(tau, xi);
            let d = if xi >= 0.0 { -tau } else { 1.0 - tau };
            grad[0] += d;
            for (g, &xv) in grad[1..].iter_mut().zip(x) {
                *g += d * xv;
            }
        }
        loss /= n;
        for g in grad.iter_mut() {
            *g /= n;
        }
        for (g, w) in grad[1..].iter_mut().zip(&coef[1..]) {
            loss += ridge * w * w;
            *g += 2.0 * ridge * w;
        }
        (loss, grad)
    }
}

fn fit_level(design: &Design, sorted_y: &[f64], tau: f64, p: usize, opts: &LqrOptions) -> (Vec<f64>, f64, usize) {
    let mut coef = vec![0.0; p + 1];
    coef[0] = stats::empirical_quantile(sorted_y, tau);
    let mut best = coef.clone();
    let mut best_loss = f64::INFINITY;
    let mut history: Vec<f64> = Vec::with_capacity(opts.max_iter);
    let mut iters = 0;
    for k in 0..opts.max_iter {
        iters = k + 1;
        let (loss, grad) = design.loss_and_grad(tau, &coef, opts.ridge);
        if loss < best_loss {
            best_loss = loss;
            best.clone_from(&coef);
        }
        history.push(best_loss);
        if k >= opts.patience {
            let before = history[k - opts.patience];
            if before - best_loss <= opts.tolerance * before.abs().max(f64::MIN_POSITIVE) {
                break;
            }
        }
        let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        if norm == 0.0 {
            break;
        }
        let step = opts.step0 / ((k + 1) as f64).sqrt() / norm.max(1.0);
        for (c, g) in coef.iter_mut().zip(&grad) {
            *c -= step * g;
        }
    }
    (best, best_loss, iters)
}

/// Fits every level of `grid`. `features` is `[n][p]`, possibly with `p == 0`
/// for an intercept-only model.
pub fn fit_lqr(features: &[Vec<f64>], targets: &[f64], grid: &QuantileGrid, opts: &LqrOptions) -> Result<LqrModel> {
    let n = targets.len();
    if n == 0 || features.len() != n {
        return Err(QuantError::Dimension(format!(
            "{} feature rows for {n} targets",
            features.len()
        )));
    }
    let p = features[0].len();
    if features.iter().any(|r| r.len() != p) {
        return Err(QuantError::Dimension("ragged feature rows".into()));
    }
    if features.iter().flatten().chain(targets).any(|v| !v.is_finite()) {
        return Err(QuantError::Validation("non-finite value in LQR inputs".into()));
    }

    let mut feature_means = Vec::with_capacity(p);
    let mut feature_scales = Vec::with_capacity(p);
    for j in 0..p {
        let col: Vec<f64> = features.iter().map(|r| r[j]).collect();
        feature_means.push(stats::mean(&col));
        let s = stats::population_std(&col);
        feature_scales.push(if s > 1e-12 { s } else { 1.0 });
    }
    let target_mean = stats::mean(targets);
    let s = stats::population_std(targets);
    let target_scale = if s > 1e-12 { s } else { 1.0 };

    let design = Design {
        rows: features
            .iter()
            .map(|r| {
                r.iter()
                    .zip(&feature_means)
                    .zip(&feature_scales)
                    .map(|((x, m), s)| (x - m) / s)
                    .collect()
            })
            .collect(),
        y: targets.iter().map(|y| (y - target_mean) / target_scale).collect(),
    };
    let sorted_y = stats::sorted(&design.y);
    let fits: Vec<(Vec<f64>, f64, usize)> = grid
        .taus()
        .par_iter()
        .map(|&tau| fit_level(&design, &sorted_y, tau, p, opts))
        .collect();

    let mut coefficients = Vec::with_capacity(fits.len());
    let mut train_loss = Vec::with_capacity(fits.len());
    let mut iterations = Vec::with_capacity(fits.len());
    for (c, l, i) in fits {
        if c.iter().any(|v| !v.is_finite()) {
            return Err(QuantError::Validation("LQR produced non-finite coefficients".into()));
        }
        coefficients.push(c);
        train_loss.push(l);
        iterations.push(i);
    }
    Ok(LqrModel {
        grid: grid.clone(),
        feature_means,
        feature_scales,
        target_mean,
        target_scale,
        coefficients,
        train_loss,
        iterations,
    })
}

impl LqrModel {
    pub fn width(&self) -> usize {
        self.feature_means.len()
    }

    /// Quantiles for one feature row, on the original target scale, sorted.
    pub fn predict(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.width() {
            return Err(QuantError::Dimension(format!(
                "{} features, model expects {}",
                x.len(),
                self.width()
            )));
        }
        let z: Vec<f64> = x
            .iter()
            .zip(&self.feature_means)
            .zip(&self.feature_scales)
            .map(|((v, m), s)| (v - m) / s)
            .collect();
        let mut q: Vec<f64> = self
            .coefficients
            .iter()
            .map(|c| {
                let std = c[0] + z.iter().zip(&c[1..]).map(|(a, b)| a * b).sum::<f64>();
                self.target_mean + self.target_scale * std
            })
            .collect();
        monotone_repair(&mut q);
        Ok(q)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn normals(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| StandardNormal.sample(&mut rng)).collect()
    }

    fn intercept_only(y: &[f64], taus: Vec<f64>) -> LqrModel {
        let x = vec![Vec::new(); y.len()];
        fit_lqr(&x, y, &QuantileGrid::new(taus).unwrap(), &LqrOptions::default()).unwrap()
    }

    #[test]
    fn recovers_normal_quantiles() {
        let y = normals(10_000, 1);
        let m = intercept_only(&y, vec![0.1, 0.5, 0.9]);
        let q = m.predict(&[]).unwrap();
        assert!((q[0] + 1.2816).abs() < 0.06, "{}", q[0]);
        assert!(q[1].abs() < 0.05, "{}", q[1]);
        assert!((q[2] - 1.2816).abs() < 0.06, "{}", q[2]);
    }

    #[test]
    fn intercept_fit_matches_brute_force_quantile() {
        let y = normals(301, 2);
        let m = intercept_only(&y, vec![0.2]);
        let fitted = m.predict(&[]).unwrap()[0];
        let mean_loss = |q: f64| y.iter().map(|v| ndgrad::pinball(0.2, v - q)).sum::<f64>() / y.len() as f64;
        let best = y.iter().map(|&c| mean_loss(c)).fold(f64::INFINITY, f64::min);
        assert!(mean_loss(fitted) <= best * (1.0 + 1e-6));
    }

    #[test]
    fn linear_signal_is_learned() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x: Vec<Vec<f64>> = (0..2000).map(|_| vec![rng.random::<f64>() * 2.0 - 1.0]).collect();
        let e = normals(2000, 4);
        let y: Vec<f64> = x.iter().zip(&e).map(|(x, e)| 3.0 * x[0] + 0.1 * e).collect();
        let m = fit_lqr(&x, &y, &QuantileGrid::new(vec![0.5]).unwrap(), &LqrOptions::default()).unwrap();
        assert!((m.predict(&[0.5]).unwrap()[0] - 1.5).abs() < 0.1);
        assert!((m.predict(&[-0.5]).unwrap()[0] + 1.5).abs() < 0.1);
    }

    #[test]
    fn duplicated_column_stays_finite() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let base: Vec<f64> = (0..1000).map(|_| rng.random::<f64>()).collect();
        let e = normals(1000, 6);
        let y: Vec<f64> = base.iter().zip(&e).map(|(x, e)| x + 0.2 * e).collect();
        let grid = QuantileGrid::new(vec![0.3, 0.7]).unwrap();
        let single: Vec<Vec<f64>> = base.iter().map(|v| vec![*v]).collect();
        let double: Vec<Vec<f64>> = base.iter().map(|v| vec![*v, *v]).collect();
        let a = fit_lqr(&single, &y, &grid, &LqrOptions::default()).unwrap();
        let b = fit_lqr(&double, &y, &grid, &LqrOptions::default()).unwrap();
        assert!(b.coefficients.iter().flatten().all(|v| v.is_finite()));
        for (la, lb) in a.train_loss.iter().zip(&b.train_loss) {
            assert!((la - lb).abs() <= 1e-3 * la, "{la} vs {lb}");
        }
    }

    #[test]
    fn rejects_non_finite_features() {
        let grid = QuantileGrid::new(vec![0.5]).unwrap();
        let err = fit_lqr(&[vec![f64::NAN]], &[0.0], &grid, &LqrOptions::default());
        assert!(matches!(err, Err(QuantError::Validation(_))));
    }
}
