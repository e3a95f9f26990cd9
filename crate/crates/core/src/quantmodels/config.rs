use std::fmt;
use std::str::FromStr;

use ndgrad::Activation;
use serde::{Deserialize, Serialize};

use crate::error::{QuantError, Result};

/// Input rows seen by the fixed-window dense model and by LQR.
pub const DENSE_LOOKBACK: usize = 22;
/// Forecast distance for the fixed-window models and for evaluation.
pub const EVAL_HORIZON: usize = 22;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Qlstm,
    Qdense,
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelKind::Qlstm => "qLSTM",
            ModelKind::Qdense => "qDense",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct StageConfig {
    #[serde(default)]
    pub lstm_units: Vec<usize>,
    #[serde(default)]
    pub dense_units: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub kind: ModelKind,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub norm_window: usize,
    /// Asset model.
    pub stage1: StageConfig,
    /// Market model.
    pub stage2: StageConfig,
    pub dropout: f64,
    pub hidden_activation: Activation,
    #[serde(default = "default_lstm_activation")]
    pub lstm_activation: Activation,
    /// Applied to the market model's scalar before the positivity clamp.
    pub market_activation: Activation,
    pub layer_norm: bool,
    pub l1: f64,
    pub l2: f64,
}

fn default_lstm_activation() -> Activation {
    Activation::Tanh
}

impl ModelConfig {
    /// Structural checks that hold for any usable configuration.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(QuantError::Validation(m));
        if self.batch_size == 0 {
            return bad("batch size must be positive".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning rate {} must be positive", self.learning_rate));
        }
        if self.norm_window < 2 {
            return bad(format!("normalisation window {} < 2", self.norm_window));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if !(self.l1 >= 0.0 && self.l2 >= 0.0) {
            return bad("regularisation weights must be non-negative".into());
        }
        for (name, stage) in [("stage1", &self.stage1), ("stage2", &self.stage2)] {
            if stage.lstm_units.iter().chain(&stage.dense_units).any(|&u| u == 0) {
                return bad(format!("{name} has a zero-width layer"));
            }
            match self.kind {
                ModelKind::Qlstm if stage.lstm_units.is_empty() => {
                    return bad(format!("qLSTM {name} needs at least one LSTM layer"));
                }
                ModelKind::Qdense if !stage.lstm_units.is_empty() => {
                    return bad(format!("qDense {name} cannot have LSTM layers"));
                }
                _ => {}
            }
        }
        Ok(())
    }

    /// Checks every value against a search space.
    pub fn check_within(&self, ranges: &SearchRanges) -> Result<()> {
        self.validate()?;
        let out = |what: &str| Err(QuantError::Validation(format!("{what} outside the search ranges")));
        if !ranges.batch_sizes.contains(&self.batch_size) {
            return out("batch size");
        }
        if !(ranges.learning_rate.0..=ranges.learning_rate.1).contains(&self.learning_rate) {
            return out("learning rate");
        }
        if !(ranges.norm_window.0..=ranges.norm_window.1).contains(&self.norm_window) {
            return out("normalisation window");
        }
        if !(ranges.dropout.0..=ranges.dropout.1).contains(&self.dropout) {
            return out("dropout");
        }
        if !(ranges.l1.0..=ranges.l1.1).contains(&self.l1) || !(ranges.l2.0..=ranges.l2.1).contains(&self.l2) {
            return out("regularisation");
        }
        for stage in [&self.stage1, &self.stage2] {
            for units in [&stage.lstm_units, &stage.dense_units] {
                if units.is_empty() {
                    continue;
                }
                if !(ranges.layers.0..=ranges.layers.1).contains(&units.len()) {
                    return out("layer count");
                }
                if units.iter().any(|u| !(ranges.units.0..=ranges.units.1).contains(u)) {
                    return out("layer width");
                }
            }
        }
        if !ranges.activations.contains(&self.hidden_activation) {
            return out("hidden activation");
        }
        Ok(())
    }
}

/// Hyperparameter search space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchRanges {
    pub kind: ModelKind,
    pub batch_sizes: Vec<usize>,
    pub learning_rate: (f64, f64),
    pub norm_window: (usize, usize),
    pub dropout: (f64, f64),
    pub l1: (f64, f64),
    pub l2: (f64, f64),
    pub layers: (usize, usize),
    /// Inclusive bounds; sampled as powers of two.
    pub units: (usize, usize),
    pub activations: Vec<Activation>,
}

impl SearchRanges {
    pub fn for_kind(kind: ModelKind) -> Self {
        Self {
            kind,
            batch_sizes: vec![32, 64, 128, 256, 512, 1024, 2048],
            learning_rate: (1e-6, 1e-3),
            norm_window: (5, 250),
            dropout: (0.0, 0.9),
            l1: (0.0, 1e-3),
            l2: (0.0, 1e-3),
            layers: (1, 5),
            units: match kind {
                ModelKind::Qlstm => (16, 256),
                ModelKind::Qdense => (16, 512),
            },
            activations: vec![
                Activation::Relu,
                Activation::Tanh,
                Activation::Sigmoid,
                Activation::LeakyRelu,
                Activation::Elu,
            ],
        }
    }

    pub fn unit_choices(&self) -> Vec<usize> {
        (0..usize::BITS)
            .map(|p| 1usize << p)
            .filter(|u| (self.units.0..=self.units.1).contains(u))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    QlstmFinal,
    QdenseFinal,
    /// Small qLSTM for quick local runs.
    QlstmDesk,
    /// Small qDense for quick local runs.
    QdenseDesk,
}

impl Preset {
    pub const ALL: [Preset; 4] = [
        Preset::QlstmFinal,
        Preset::QdenseFinal,
        Preset::QlstmDesk,
        Preset::QdenseDesk,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Preset::QlstmFinal => "qlstm_final",
            Preset::QdenseFinal => "qdense_final",
            Preset::QlstmDesk => "qlstm_desk",
            Preset::QdenseDesk => "qdense_desk",
        }
    }

    pub fn config(self) -> ModelConfig {
        match self {
            Preset::QlstmFinal => ModelConfig {
                kind: ModelKind::Qlstm,
                batch_size: 256,
                learning_rate: 0.0004,
                norm_window: 34,
                stage1: StageConfig {
                    lstm_units: vec![64; 4],
                    dense_units: vec![128],
                },
                stage2: StageConfig {
                    lstm_units: vec![128],
                    dense_units: vec![64],
                },
                dropout: 0.1023,
                hidden_activation: Activation::LeakyRelu,
                lstm_activation: Activation::Tanh,
                market_activation: Activation::Identity,
                layer_norm: true,
                l1: 0.0009,
                l2: 0.0010,
            },
            Preset::QdenseFinal => ModelConfig {
                kind: ModelKind::Qdense,
                batch_size: 2048,
                learning_rate: 0.0007,
                norm_window: 123,
                stage1: StageConfig {
                    lstm_units: vec![],
                    dense_units: vec![64, 512],
                },
                stage2: StageConfig {
                    lstm_units: vec![],
                    dense_units: vec![64, 512, 16, 32],
                },
                dropout: 0.1780,
                hidden_activation: Activation::Elu,
                lstm_activation: Activation::Tanh,
                market_activation: Activation::Sigmoid,
                layer_norm: true,
                l1: 0.0007,
                l2: 0.0004,
            },
            Preset::QlstmDesk => ModelConfig {
                batch_size: 64,
                learning_rate: 0.001,
                stage1: StageConfig {
                    lstm_units: vec![16],
                    dense_units: vec![16],
                },
                stage2: StageConfig {
                    lstm_units: vec![16],
                    dense_units: vec![16],
                },
                dropout: 0.0,
                l1: 0.0,
                l2: 0.0,
                ..Preset::QlstmFinal.config()
            },
            Preset::QdenseDesk => ModelConfig {
                batch_size: 256,
                learning_rate: 0.001,
                norm_window: 34,
                stage1: StageConfig {
                    lstm_units: vec![],
                    dense_units: vec![32],
                },
                stage2: StageConfig {
                    lstm_units: vec![],
                    dense_units: vec![16],
                },
                dropout: 0.0,
                l1: 0.0,
                l2: 0.0,
                ..Preset::QdenseFinal.config()
            },
        }
    }
}

impl FromStr for Preset {
    type Err = QuantError;

    fn from_str(s: &str) -> Result<Self> {
        Preset::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| QuantError::Lookup {
                kind: "preset",
                name: s.to_string(),
            })
    }
}

pub fn preset(name: &str) -> Result<ModelConfig> {
    Ok(name.parse::<Preset>()?.config())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn final_presets() {
        let q = preset("qlstm_final").unwrap();
        assert_eq!(q.batch_size, 256);
        assert_eq!(q.dropout, 0.1023);
        assert_eq!(q.norm_window, 34);
        assert_eq!(q.stage1.lstm_units, vec![64, 64, 64, 64]);
        let d = preset("qdense_final").unwrap();
        assert_eq!(d.norm_window, 123);
        assert_eq!(d.stage2.dense_units, vec![64, 512, 16, 32]);
        assert_eq!(d.market_activation, Activation::Sigmoid);
        assert!(matches!(preset("qgru"), Err(QuantError::Lookup { .. })));
    }

    #[test]
    fn presets_sit_inside_their_search_space() {
        for p in Preset::ALL {
            let c = p.config();
            c.check_within(&SearchRanges::for_kind(c.kind)).unwrap();
        }
    }

    #[test]
    fn unit_choices_are_powers_of_two() {
        assert_eq!(
            SearchRanges::for_kind(ModelKind::Qlstm).unit_choices(),
            vec![16, 32, 64, 128, 256]
        );
        assert_eq!(
            *SearchRanges::for_kind(ModelKind::Qdense).unit_choices().last().unwrap(),
            512
        );
    }

    #[test]
    fn config_json_roundtrip() {
        let c = preset("qdense_final").unwrap();
        let back: ModelConfig = serde_json::from_str(&serde_json::to_string(&c).unwrap()).unwrap();
        assert_eq!(back, c);
    }
}
