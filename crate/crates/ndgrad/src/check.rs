//! Central finite differences, for checking analytic gradients.

use crate::params::{Grads, ParamSet};
use crate::tensor::Tensor;

/// `|a - b| / max(|a|, |b|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Numerical gradient of `f` with respect to every entry of every parameter.
pub fn numeric_grads(params: &ParamSet, h: f64, mut f: impl FnMut(&ParamSet) -> f64) -> Grads {
    let mut work = params.clone();
    let mut out = Grads::new();
    let names: Vec<String> = params.names().cloned().collect();
    for name in names {
        let base = params.value(&name).expect("known").clone();
        let mut g = vec![0.0; base.len()];
        for (i, slot) in g.iter_mut().enumerate() {
            let orig = base.data()[i];
            work.value_mut(&name).expect("known").data_mut()[i] = orig + h;
            let up = f(&work);
            work.value_mut(&name).expect("known").data_mut()[i] = orig - h;
            let down = f(&work);
            work.value_mut(&name).expect("known").data_mut()[i] = orig;
            *slot = (up - down) / (2.0 * h);
        }
        out.insert(name, Tensor::new(base.shape().to_vec(), g).expect("shape"));
    }
    out
}

/// Worst relative error between two gradient sets, with the offending entry.
pub fn max_relative_error(analytic: &Grads, numeric: &Grads, floor: f64) -> (f64, String) {
    let mut worst = (0.0, String::new());
    for (name, a) in analytic {
        let Some(n) = numeric.get(name) else {
            return (f64::INFINITY, format!("{name}: missing numeric gradient"));
        };
        for (i, (&x, &y)) in a.data().iter().zip(n.data()).enumerate() {
            let e = relative_error(x, y, floor);
            if e > worst.0 || e.is_nan() {
                worst = (e, format!("{name}[{i}]: analytic {x:e} numeric {y:e}"));
            }
        }
    }
    worst
}
