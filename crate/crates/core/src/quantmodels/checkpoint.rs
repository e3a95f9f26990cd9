use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{QuantError, Result};
use crate::quantmodels::grid::QuantileGrid;
use crate::quantmodels::lqr::LqrModel;
use crate::quantmodels::network::TwoStageModel;

pub const WEIGHT_INIT: &str = "uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)), zero biases";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ModelArtifact {
    TwoStage(TwoStageModel),
    Lqr(LqrModel),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    /// Display name used in reports, e.g. `qLSTM`.
    pub name: String,
    pub model: ModelArtifact,
    pub grid: QuantileGrid,
    /// Asset input columns, in model order.
    pub feature_names: Vec<String>,
    pub market_names: Vec<String>,
    pub norm_window: usize,
    pub seed: u64,
    pub weight_init: String,
    pub created_at: String,
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string(self)?;
        fs::write(path, json).map_err(|e| QuantError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| QuantError::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Equality ignoring the creation timestamp.
    pub fn same_content(&self, other: &Self) -> bool {
        Self {
            created_at: String::new(),
            ..self.clone()
        } == Self {
            created_at: String::new(),
            ..other.clone()
        }
    }
}

/// Current UTC time as RFC 3339, or `SOURCE_DATE_EPOCH` when set.
pub fn timestamp() -> String {
    let secs = std::env::var("SOURCE_DATE_EPOCH")
        .ok()
        .and_then(|v| v.trim().parse::<i64>().ok())
        .unwrap_or_else(|| {
            std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map(|d| d.as_secs() as i64)
                .unwrap_or(0)
        });
    chrono::DateTime::from_timestamp(secs, 0)
        .map(|t| t.to_rfc3339())
        .unwrap_or_default()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quantmodels::config::preset;

    #[test]
    fn roundtrip_is_bit_exact() {
        let grid = QuantileGrid::default();
        let model = TwoStageModel::new(preset("qlstm_desk").unwrap(), grid.clone(), 5, 3, 42).unwrap();
        let ck = Checkpoint {
            name: "qLSTM".into(),
            model: ModelArtifact::TwoStage(model),
            grid,
            feature_names: (0..5).map(|i| format!("f{i}")).collect(),
            market_names: vec!["a".into(), "b".into(), "c".into()],
            norm_window: 34,
            seed: 42,
            weight_init: WEIGHT_INIT.into(),
            created_at: timestamp(),
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        ck.save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap();
        assert_eq!(back, ck);
        let (ModelArtifact::TwoStage(a), ModelArtifact::TwoStage(b)) = (&ck.model, &back.model) else {
            panic!("variant changed");
        };
        for ((_, pa), (_, pb)) in a.params.iter().zip(b.params.iter()) {
            let bits = |t: &ndgrad::Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(&pa.value), bits(&pb.value));
        }
    }
}
