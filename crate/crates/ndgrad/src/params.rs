use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{GradError, Result};
use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

/// Role of a parameter; regularisers only touch [`ParamKind::Weight`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamKind {
    Weight,
    Bias,
    Norm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Param {
    pub kind: ParamKind,
    pub value: Tensor,
}

/// Named parameters, iterated in name order.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamSet {
    params: BTreeMap<String, Param>,
}

/// Graph handles for a [`ParamSet`] bound onto one tape.
#[derive(Debug, Clone, Default)]
pub struct Bound {
    vars: BTreeMap<String, Var>,
}

impl Bound {
    pub fn get(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| GradError::UnknownParam(name.to_string()))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Var)> {
        self.vars.iter()
    }
}

pub type Grads = BTreeMap<String, Tensor>;

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, kind: ParamKind, value: Tensor) {
        self.params.insert(name.into(), Param { kind, value });
    }

    /// Weight matrix drawn from `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`.
    pub fn init_weight<R: Rng>(&mut self, name: impl Into<String>, fan_in: usize, fan_out: usize, rng: &mut R) {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let data = (0..fan_in * fan_out)
            .map(|_| rng.random_range(-bound..=bound))
            .collect();
        let value = Tensor::new(vec![fan_in, fan_out], data).expect("shape");
        self.insert(name, ParamKind::Weight, value);
    }

    pub fn init_bias(&mut self, name: impl Into<String>, width: usize, value: f64) {
        self.insert(name, ParamKind::Bias, Tensor::filled(&[1, width], value));
    }

    pub fn get(&self, name: &str) -> Option<&Param> {
        self.params.get(name)
    }

    pub fn value(&self, name: &str) -> Result<&Tensor> {
        self.params
            .get(name)
            .map(|p| &p.value)
            .ok_or_else(|| GradError::UnknownParam(name.to_string()))
    }

    pub fn value_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        self.params
            .get_mut(name)
            .map(|p| &mut p.value)
            .ok_or_else(|| GradError::UnknownParam(name.to_string()))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Param)> {
        self.params.iter()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.params.keys()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn count(&self) -> usize {
        self.params.values().map(|p| p.value.len()).sum()
    }

    /// Places every parameter on the tape as a trainable leaf.
    pub fn bind(&self, graph: &mut Graph) -> Bound {
        let vars = self
            .params
            .iter()
            .map(|(name, p)| (name.clone(), graph.leaf(p.value.clone())))
            .collect();
        Bound { vars }
    }

    /// Reads gradients after `graph.backward`; parameters the output did not
    /// depend on get zero gradients.
    pub fn grads(&self, graph: &Graph, bound: &Bound) -> Grads {
        self.params
            .iter()
            .map(|(name, p)| {
                let g = bound
                    .vars
                    .get(name)
                    .and_then(|v| graph.grad(*v))
                    .cloned()
                    .unwrap_or_else(|| Tensor::zeros(p.value.shape()));
                (name.clone(), g)
            })
            .collect()
    }

    /// Adds `l1 * sum|w| + l2 * sum w^2` over weight matrices to `loss`.
    pub fn add_regularization(&self, graph: &mut Graph, bound: &Bound, loss: Var, l1: f64, l2: f64) -> Result<Var> {
        let mut total = loss;
        for (name, p) in &self.params {
            if p.kind != ParamKind::Weight {
                continue;
            }
            let v = bound.get(name)?;
            if l1 > 0.0 {
                let a = graph.abs(v)?;
                let s = graph.sum(a)?;
                let s = graph.scale(s, l1)?;
                total = graph.add(total, s)?;
            }
            if l2 > 0.0 {
                let sq = graph.square(v)?;
                let s = graph.sum(sq)?;
                let s = graph.scale(s, l2)?;
                total = graph.add(total, s)?;
            }
        }
        Ok(total)
    }

    /// Value of the regulariser without building a graph.
    pub fn regularization(&self, l1: f64, l2: f64) -> f64 {
        self.params
            .values()
            .filter(|p| p.kind == ParamKind::Weight)
            .map(|p| {
                let d = p.value.data();
                l1 * d.iter().map(|x| x.abs()).sum::<f64>() + l2 * d.iter().map(|x| x * x).sum::<f64>()
            })
            .sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn init_respects_fan_in_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut ps = ParamSet::new();
        ps.init_weight("w", 16, 8, &mut rng);
        let bound = 0.25;
        assert!(ps.value("w").unwrap().data().iter().all(|v| v.abs() <= bound));
        assert_eq!(ps.count(), 128);
    }

    #[test]
    fn same_seed_same_init() {
        let build = || {
            let mut rng = ChaCha8Rng::seed_from_u64(9);
            let mut ps = ParamSet::new();
            ps.init_weight("a", 3, 4, &mut rng);
            ps.init_weight("b", 4, 2, &mut rng);
            ps
        };
        assert_eq!(build(), build());
    }

    #[test]
    fn unused_params_get_zero_grad() {
        let mut ps = ParamSet::new();
        ps.insert("used", ParamKind::Weight, Tensor::scalar(2.0));
        ps.insert("unused", ParamKind::Bias, Tensor::scalar(1.0));
        let mut g = Graph::new();
        let b = ps.bind(&mut g);
        let u = b.get("used").unwrap();
        let y = g.square(u).unwrap();
        g.backward(y).unwrap();
        let grads = ps.grads(&g, &b);
        assert_eq!(grads["used"].data(), &[4.0]);
        assert_eq!(grads["unused"].data(), &[0.0]);
    }

    #[test]
    fn regularization_skips_biases() {
        let mut ps = ParamSet::new();
        ps.insert("w", ParamKind::Weight, Tensor::row(vec![1.0, -2.0]));
        ps.insert("b", ParamKind::Bias, Tensor::row(vec![10.0]));
        assert!((ps.regularization(0.5, 0.25) - (0.5 * 3.0 + 0.25 * 5.0)).abs() < 1e-15);
        let mut g = Graph::new();
        let bound = ps.bind(&mut g);
        let zero = g.constant(Tensor::scalar(0.0));
        let loss = ps.add_regularization(&mut g, &bound, zero, 0.5, 0.25).unwrap();
        assert!((g.scalar_value(loss) - 2.75).abs() < 1e-15);
    }
}
