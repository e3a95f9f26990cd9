//! LSTM cell built from graph primitives.
//!
//! Gate layout inside the fused `[*, 4u]` pre-activation is
//! `input | forget | candidate | output`.

use rand::Rng;

use crate::error::{dim_err, Result};
use crate::graph::{Activation, Graph, Var};
use crate::params::{Bound, ParamSet};

/// Graph handles for one cell's weights.
#[derive(Debug, Clone, Copy)]
pub struct LstmWeights {
    /// `[input, 4u]`
    pub w_x: Var,
    /// `[u, 4u]`
    pub w_h: Var,
    /// `[1, 4u]`
    pub bias: Var,
}

impl LstmWeights {
    pub fn from_bound(bound: &Bound, prefix: &str) -> Result<Self> {
        Ok(Self {
            w_x: bound.get(&format!("{prefix}.w_x"))?,
            w_h: bound.get(&format!("{prefix}.w_h"))?,
            bias: bound.get(&format!("{prefix}.b"))?,
        })
    }
}

/// Registers `{prefix}.w_x`, `{prefix}.w_h` and `{prefix}.b` in `params`.
pub fn init_lstm<R: Rng>(params: &mut ParamSet, prefix: &str, input: usize, units: usize, rng: &mut R) {
    params.init_weight(format!("{prefix}.w_x"), input, 4 * units, rng);
    params.init_weight(format!("{prefix}.w_h"), units, 4 * units, rng);
    params.init_bias(format!("{prefix}.b"), 4 * units, 0.0);
}

/// One step: returns `(h, c)`.
///
/// `activation` replaces `tanh` on the candidate and on the cell output,
/// gates always use the logistic sigmoid.
pub fn lstm_cell(
    g: &mut Graph,
    x: Var,
    h_prev: Var,
    c_prev: Var,
    w: &LstmWeights,
    activation: Activation,
) -> Result<(Var, Var)> {
    let units = g.value(h_prev).cols();
    let fused = g.value(w.w_h).cols();
    if fused != 4 * units || g.value(w.w_h).rows() != units {
        return dim_err(
            "lstm_cell",
            format!("w_h {:?} does not match {units} hidden units", g.value(w.w_h).shape()),
        );
    }
    if g.value(c_prev).shape() != g.value(h_prev).shape() {
        return dim_err(
            "lstm_cell",
            format!("c {:?} vs h {:?}", g.value(c_prev).shape(), g.value(h_prev).shape()),
        );
    }
    let zx = g.matmul(x, w.w_x)?;
    let zh = g.matmul(h_prev, w.w_h)?;
    let z = g.add(zx, zh)?;
    let z = g.add_row(z, w.bias)?;

    let i = g.slice_cols(z, 0, units)?;
    let f = g.slice_cols(z, units, units)?;
    let cand = g.slice_cols(z, 2 * units, units)?;
    let o = g.slice_cols(z, 3 * units, units)?;
    let i = g.sigmoid(i)?;
    let f = g.sigmoid(f)?;
    let cand = g.activate(cand, activation)?;
    let o = g.sigmoid(o)?;

    let keep = g.mul(f, c_prev)?;
    let write = g.mul(i, cand)?;
    let c = g.add(keep, write)?;
    let c_act = g.activate(c, activation)?;
    let h = g.mul(o, c_act)?;
    Ok((h, c))
}
