//! Two-stage quantile network.
//!
//! Stage 1 maps asset features to normalised-return quantiles, stage 2 maps
//! market features to one positive scale per step, and the raw quantiles are
//! `scale * sigma_bar * normalised`. qLSTM runs both stages as recurrent
//! stacks over the input sequence (one output per step); qDense is the same
//! graph with no recurrent layers and a single step whose input is a
//! flattened window.

use ndgrad::{init_lstm, lstm_cell, Activation, Bound, Grads, Graph, LstmWeights, ParamKind, ParamSet, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{QuantError, Result};
use crate::quantmodels::config::{ModelConfig, StageConfig};
use crate::quantmodels::grid::{ForecastKind, QuantileForecast, QuantileGrid};

const LN_EPS: f64 = 1e-5;

/// One group of equally long samples.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    /// Per step, `[B, input_width]`.
    pub x: Vec<Tensor>,
    /// Per step, `[B, market_width]`.
    pub z: Vec<Tensor>,
    /// `[B, 1]` group volatility applied to every step.
    pub sigma: Tensor,
    /// Per step, `[B, 1]` realised log returns.
    pub r: Vec<Tensor>,
    /// Per step, `[B, 1]` volatility-normalised returns.
    pub r_tilde: Vec<Tensor>,
}

impl Batch {
    pub fn size(&self) -> usize {
        self.sigma.rows()
    }

    pub fn horizon(&self) -> usize {
        self.x.len()
    }

    fn check(&self, model: &TwoStageModel, with_targets: bool) -> Result<()> {
        let b = self.size();
        let t = self.horizon();
        if b == 0 || t == 0 {
            return Err(QuantError::Batching("empty batch".into()));
        }
        if self.z.len() != t {
            return Err(QuantError::Alignment(format!(
                "{t} asset steps vs {} market steps",
                self.z.len()
            )));
        }
        let bad_x = self.x.iter().any(|x| x.shape() != [b, model.input_width]);
        let bad_z = self.z.iter().any(|z| z.shape() != [b, model.market_width]);
        if bad_x || bad_z || self.sigma.shape() != [b, 1] {
            return Err(QuantError::Dimension(format!(
                "batch does not match model inputs ({} asset, {} market features)",
                model.input_width, model.market_width
            )));
        }
        if with_targets {
            let bad = self.r.len() != t
                || self.r_tilde.len() != t
                || self.r.iter().chain(&self.r_tilde).any(|y| y.shape() != [b, 1]);
            if bad {
                return Err(QuantError::Batching("targets do not match the batch horizon".into()));
            }
        }
        Ok(())
    }
}

/// Per-step tensors from a forward pass, each `[B, K]` (scale is `[B, 1]`).
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub normalized: Vec<Tensor>,
    pub scale: Vec<Tensor>,
    pub raw: Vec<Tensor>,
}

impl Prediction {
    /// Monotone-repaired normalised and raw forecasts of one sample.
    pub fn forecasts(&self, sample: usize) -> (QuantileForecast, QuantileForecast) {
        let rows = |ts: &[Tensor]| ts.iter().map(|t| t.row_slice(sample).to_vec()).collect();
        (
            QuantileForecast {
                kind: ForecastKind::Normalized,
                rows: rows(&self.normalized),
            }
            .repaired(),
            QuantileForecast {
                kind: ForecastKind::Raw,
                rows: rows(&self.raw),
            }
            .repaired(),
        )
    }
}

struct Outputs {
    normalized: Vec<Var>,
    scale: Vec<Var>,
    raw: Vec<Var>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwoStageModel {
    pub config: ModelConfig,
    pub grid: QuantileGrid,
    pub input_width: usize,
    pub market_width: usize,
    pub params: ParamSet,
}

/// Bias that makes `softplus(activation(b)) == 1`.
fn unit_scale_bias(act: Activation) -> f64 {
    let target = (std::f64::consts::E - 1.0).ln();
    match act {
        Activation::Sigmoid => (target / (1.0 - target)).ln(),
        Activation::Tanh => target.atanh(),
        _ => target,
    }
}

impl TwoStageModel {
    pub fn new(
        config: ModelConfig,
        grid: QuantileGrid,
        input_width: usize,
        market_width: usize,
        seed: u64,
    ) -> Result<Self> {
        config.validate()?;
        if input_width == 0 || market_width == 0 {
            return Err(QuantError::Dimension("model inputs must be non-empty".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamSet::new();
        let k = grid.len();
        init_stage(
            &mut params,
            "s1",
            &config.stage1,
            input_width,
            k,
            config.layer_norm,
            &mut rng,
        );
        init_stage(
            &mut params,
            "s2",
            &config.stage2,
            market_width,
            1,
            config.layer_norm,
            &mut rng,
        );
        params.init_bias("s2.head.b", 1, unit_scale_bias(config.market_activation));
        Ok(Self {
            config,
            grid,
            input_width,
            market_width,
            params,
        })
    }

    pub fn parameter_count(&self) -> usize {
        self.params.count()
    }

    /// Sets the stage-1 output bias, typically to empirical quantiles of the
    /// normalised training returns.
    pub fn set_quantile_bias(&mut self, q: &[f64]) -> Result<()> {
        self.grid.check_width(q.len(), "bias")?;
        *self.params.value_mut("s1.head.b")? = Tensor::row(q.to_vec());
        Ok(())
    }

    fn forward(
        &self,
        g: &mut Graph,
        bound: &Bound,
        batch: &Batch,
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> Result<Outputs> {
        let x: Vec<Var> = batch.x.iter().map(|t| g.constant(t.clone())).collect();
        let z: Vec<Var> = batch.z.iter().map(|t| g.constant(t.clone())).collect();
        let normalized = self.stage_forward(g, bound, "s1", &self.config.stage1, &x, rng.as_deref_mut())?;
        let heads = self.stage_forward(g, bound, "s2", &self.config.stage2, &z, rng)?;
        let sigma = g.constant(batch.sigma.clone());
        let mut scale = Vec::with_capacity(heads.len());
        let mut raw = Vec::with_capacity(heads.len());
        for (q, h) in normalized.iter().zip(heads) {
            let a = g.activate(h, self.config.market_activation)?;
            let s = g.softplus(a)?;
            let scaled = g.mul_col(*q, s)?;
            raw.push(g.mul_col(scaled, sigma)?);
            scale.push(s);
        }
        Ok(Outputs { normalized, scale, raw })
    }

    fn stage_forward(
        &self,
        g: &mut Graph,
        bound: &Bound,
        prefix: &str,
        stage: &StageConfig,
        inputs: &[Var],
        mut rng: Option<&mut ChaCha8Rng>,
    ) -> Result<Vec<Var>> {
        let b = g.value(inputs[0]).rows();
        let cells: Vec<LstmWeights> = (0..stage.lstm_units.len())
            .map(|l| LstmWeights::from_bound(bound, &format!("{prefix}.lstm{l}")))
            .collect::<std::result::Result<_, _>>()?;
        let mut h: Vec<Var> = stage
            .lstm_units
            .iter()
            .map(|&u| g.constant(Tensor::zeros(&[b, u])))
            .collect();
        let mut c = h.clone();
        let last = stage.lstm_units.len().saturating_sub(1);
        let mut outputs = Vec::with_capacity(inputs.len());
        for &input in inputs {
            let mut cur = input;
            for (l, w) in cells.iter().enumerate() {
                let (hn, cn) = lstm_cell(g, cur, h[l], c[l], w, self.config.lstm_activation)?;
                h[l] = hn;
                c[l] = cn;
                cur = self.maybe_norm(g, bound, &format!("{prefix}.lstm{l}"), hn)?;
                if l < last {
                    cur = self.dropout(g, cur, rng.as_deref_mut())?;
                }
            }
            for l in 0..stage.dense_units.len() {
                let name = format!("{prefix}.dense{l}");
                cur = affine(g, bound, &name, cur)?;
                cur = self.maybe_norm(g, bound, &name, cur)?;
                cur = g.activate(cur, self.config.hidden_activation)?;
                cur = self.dropout(g, cur, rng.as_deref_mut())?;
            }
            outputs.push(affine(g, bound, &format!("{prefix}.head"), cur)?);
        }
        Ok(outputs)
    }

    fn maybe_norm(&self, g: &mut Graph, bound: &Bound, layer: &str, v: Var) -> Result<Var> {
        if !self.config.layer_norm {
            return Ok(v);
        }
        let n = g.layer_norm(v, LN_EPS)?;
        let n = g.mul_row(n, bound.get(&format!("{layer}.ln.gain"))?)?;
        Ok(g.add_row(n, bound.get(&format!("{layer}.ln.bias"))?)?)
    }

    /// Inverted dropout; identity at inference or when the rate is 0.
    fn dropout(&self, g: &mut Graph, v: Var, rng: Option<&mut ChaCha8Rng>) -> Result<Var> {
        let p = self.config.dropout;
        let Some(rng) = rng else { return Ok(v) };
        if p <= 0.0 {
            return Ok(v);
        }
        let shape = g.value(v).shape().to_vec();
        let keep = 1.0 / (1.0 - p);
        let mask: Vec<f64> = (0..shape.iter().product::<usize>())
            .map(|_| if rng.random::<f64>() < p { 0.0 } else { keep })
            .collect();
        let m = g.constant(Tensor::new(shape, mask)?);
        Ok(g.mul(v, m)?)
    }

    /// Builds the training objective; returns `(data_loss, data_loss + penalty)`.
    fn loss_vars(
        &self,
        g: &mut Graph,
        bound: &Bound,
        batch: &Batch,
        rng: Option<&mut ChaCha8Rng>,
    ) -> Result<(Var, Var)> {
        batch.check(self, true)?;
        let out = self.forward(g, bound, batch, rng)?;
        let taus = self.grid.taus();
        let mut total: Option<Var> = None;
        for k in 0..batch.horizon() {
            let a = g.pinball_sum(out.raw[k], batch.r[k].clone(), taus)?;
            let b = g.pinball_sum(out.normalized[k], batch.r_tilde[k].clone(), taus)?;
            let s = g.add(a, b)?;
            total = Some(match total {
                Some(t) => g.add(t, s)?,
                None => s,
            });
        }
        let denom = (batch.size() * batch.horizon() * self.grid.len()) as f64;
        let data = g.scale(total.expect("non-empty horizon"), 1.0 / denom)?;
        let objective = self
            .params
            .add_regularization(g, bound, data, self.config.l1, self.config.l2)?;
        Ok((data, objective))
    }

    /// Forward and backward pass on one batch. Dropout is active when `rng`
    /// is given. Returns `(data_loss, objective, gradients of objective)`.
    pub fn gradients(&self, batch: &Batch, rng: Option<&mut ChaCha8Rng>) -> Result<(f64, f64, Grads)> {
        let mut g = Graph::new();
        let bound = self.params.bind(&mut g);
        let (data, objective) = self.loss_vars(&mut g, &bound, batch, rng)?;
        g.backward(objective)?;
        Ok((
            g.scalar_value(data),
            g.scalar_value(objective),
            self.params.grads(&g, &bound),
        ))
    }

    /// Multi-step loss without dropout or penalty.
    pub fn data_loss(&self, batch: &Batch) -> Result<f64> {
        let mut g = Graph::new();
        let bound = self.params.bind(&mut g);
        let (data, _) = self.loss_vars(&mut g, &bound, batch, None)?;
        Ok(g.scalar_value(data))
    }

    /// Objective on a given parameter set (used by finite-difference checks).
    pub fn objective_with(&self, params: &ParamSet, batch: &Batch) -> Result<f64> {
        let mut g = Graph::new();
        let bound = params.bind(&mut g);
        let model = Self {
            params: params.clone(),
            ..self.clone()
        };
        let (_, objective) = model.loss_vars(&mut g, &bound, batch, None)?;
        Ok(g.scalar_value(objective))
    }

    /// Inference pass. Targets in `batch` are ignored.
    pub fn predict(&self, batch: &Batch) -> Result<Prediction> {
        batch.check(self, false)?;
        let mut g = Graph::new();
        let bound = self.params.bind(&mut g);
        let out = self.forward(&mut g, &bound, batch, None)?;
        let grab = |vs: &[Var]| vs.iter().map(|v| g.value(*v).clone()).collect();
        Ok(Prediction {
            normalized: grab(&out.normalized),
            scale: grab(&out.scale),
            raw: grab(&out.raw),
        })
    }
}

fn affine(g: &mut Graph, bound: &Bound, name: &str, x: Var) -> Result<Var> {
    let y = g.matmul(x, bound.get(&format!("{name}.w"))?)?;
    Ok(g.add_row(y, bound.get(&format!("{name}.b"))?)?)
}

fn init_norm(params: &mut ParamSet, layer: &str, width: usize) {
    params.insert(
        format!("{layer}.ln.gain"),
        ParamKind::Norm,
        Tensor::filled(&[1, width], 1.0),
    );
    params.insert(format!("{layer}.ln.bias"), ParamKind::Norm, Tensor::zeros(&[1, width]));
}

fn init_stage<R: Rng>(
    params: &mut ParamSet,
    prefix: &str,
    stage: &StageConfig,
    input: usize,
    output: usize,
    layer_norm: bool,
    rng: &mut R,
) {
    let mut width = input;
    for (l, &u) in stage.lstm_units.iter().enumerate() {
        let name = format!("{prefix}.lstm{l}");
        init_lstm(params, &name, width, u, rng);
        if layer_norm {
            init_norm(params, &name, u);
        }
        width = u;
    }
    for (l, &u) in stage.dense_units.iter().enumerate() {
        let name = format!("{prefix}.dense{l}");
        params.init_weight(format!("{name}.w"), width, u, rng);
        params.init_bias(format!("{name}.b"), u, 0.0);
        if layer_norm {
            init_norm(params, &name, u);
        }
        width = u;
    }
    params.init_weight(format!("{prefix}.head.w"), width, output, rng);
    params.init_bias(format!("{prefix}.head.b"), output, 0.0);
}
