//! Adam training with early stopping, model fitting from panels, and a
//! random-search driver over the hyperparameter ranges.

use std::time::Instant;

use ndgrad::{Activation, Adam, AdamConfig, GradError};
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{self, Panel};
use crate::error::{QuantError, Result};
use crate::ingest::SplitPart;
use crate::quantmodels::checkpoint::{timestamp, Checkpoint, ModelArtifact, WEIGHT_INIT};
use crate::quantmodels::lqr::{fit_lqr, LqrOptions};
use crate::quantmodels::network::{Batch, TwoStageModel};
use crate::quantmodels::{ModelConfig, ModelKind, QuantileGrid, SearchRanges, StageConfig};
use crate::stats;

pub const DEFAULT_MAX_EPOCHS: usize = 100;
pub const DEFAULT_PATIENCE: usize = 10;
/// Smallest decrease of the validation loss that counts as an improvement.
pub const MIN_IMPROVEMENT: f64 = 1e-7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSpec {
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    pub config: ModelConfig,
}

impl TrainSpec {
    pub fn new(config: ModelConfig, seed: u64) -> Self {
        Self {
            max_epochs: DEFAULT_MAX_EPOCHS,
            patience: DEFAULT_PATIENCE,
            seed,
            config,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        if self.max_epochs == 0 || self.patience == 0 || self.patience >= self.max_epochs {
            return Err(QuantError::Validation(format!(
                "need 0 < patience ({}) < max_epochs ({})",
                self.patience, self.max_epochs
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean training objective (loss plus penalty) over the epoch's batches.
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochLog>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub stopped_early: bool,
    pub parameter_count: usize,
    pub wall_time_secs: f64,
}

impl TrainReport {
    /// Same losses and stopping point; wall time ignored.
    pub fn same_losses(&self, other: &Self) -> bool {
        self.epochs == other.epochs && self.best_epoch == other.best_epoch && self.stopped_early == other.stopped_early
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopDecision {
    Improved,
    Continue,
    Stop,
}

/// Patience counter over validation losses (epochs are 1-based).
#[derive(Debug, Clone, PartialEq)]
pub struct EarlyStopping {
    pub patience: usize,
    pub best: f64,
    pub best_epoch: usize,
    stale: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best: f64::INFINITY,
            best_epoch: 0,
            stale: 0,
        }
    }

    pub fn update(&mut self, epoch: usize, val_loss: f64) -> StopDecision {
        if val_loss < self.best - MIN_IMPROVEMENT || (self.best.is_infinite() && val_loss.is_finite()) {
            self.best = val_loss;
            self.best_epoch = epoch;
            self.stale = 0;
            return StopDecision::Improved;
        }
        self.stale += 1;
        if self.stale >= self.patience {
            StopDecision::Stop
        } else {
            StopDecision::Continue
        }
    }
}

fn weight(b: &Batch) -> f64 {
    (b.size() * b.horizon()) as f64
}

/// Pooled multi-step loss over all batches, without dropout or penalty.
pub fn dataset_loss(model: &TwoStageModel, batches: &[Batch]) -> Result<f64> {
    if batches.is_empty() {
        return Err(QuantError::Batching("empty dataset".into()));
    }
    let losses: Vec<(f64, f64)> = batches
        .par_iter()
        .map(|b| Ok((model.data_loss(b)? * weight(b), weight(b))))
        .collect::<Result<_>>()?;
    let (num, den) = losses.iter().fold((0.0, 0.0), |(a, b), (x, y)| (a + x, b + y));
    Ok(num / den)
}

/// Trains `model` in place and leaves it at the best validation epoch.
pub fn train_network(
    model: &mut TwoStageModel,
    train: &[Batch],
    val: &[Batch],
    spec: &TrainSpec,
) -> Result<TrainReport> {
    spec.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(QuantError::Batching(
            "training and validation sets must be non-empty".into(),
        ));
    }
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut adam = Adam::new(AdamConfig::with_lr(spec.config.learning_rate));
    let mut stopper = EarlyStopping::new(spec.patience);
    let mut best_params = model.params.clone();
    let mut epochs = Vec::new();
    let mut stopped_early = false;
    let mut order: Vec<usize> = (0..train.len()).collect();

    for epoch in 1..=spec.max_epochs {
        order.shuffle(&mut rng);
        let (mut num, mut den) = (0.0, 0.0);
        for (bi, &i) in order.iter().enumerate() {
            let fail = |message: String| QuantError::Training {
                epoch,
                batch: bi,
                message,
            };
            let (_, objective, grads) = model
                .gradients(&train[i], Some(&mut rng))
                .map_err(|e| fail(e.to_string()))?;
            if !objective.is_finite() {
                return Err(fail(format!("loss is {objective}")));
            }
            adam.step(&mut model.params, &grads).map_err(|e| match e {
                GradError::NonFiniteGradient { param } => fail(format!("non-finite gradient in `{param}`")),
                other => fail(other.to_string()),
            })?;
            num += objective * weight(&train[i]);
            den += weight(&train[i]);
        }
        let val_loss = dataset_loss(model, val)?;
        if !val_loss.is_finite() {
            return Err(QuantError::Training {
                epoch,
                batch: 0,
                message: format!("validation loss is {val_loss}"),
            });
        }
        epochs.push(EpochLog {
            epoch,
            train_loss: num / den,
            val_loss,
        });
        match stopper.update(epoch, val_loss) {
            StopDecision::Improved => best_params = model.params.clone(),
            StopDecision::Continue => {}
            StopDecision::Stop => {
                stopped_early = epoch < spec.max_epochs;
                break;
            }
        }
    }
    model.params = best_params;
    Ok(TrainReport {
        epochs,
        best_epoch: stopper.best_epoch,
        best_val_loss: stopper.best,
        stopped_early,
        parameter_count: model.parameter_count(),
        wall_time_secs: started.elapsed().as_secs_f64(),
    })
}

/// Normalises raw panels with `window`.
pub fn normalize_panels(raw: &[Panel], window: usize) -> Result<Vec<Panel>> {
    raw.par_iter().map(|p| p.normalized(window)).collect()
}

fn check_panels(panels: &[Panel]) -> Result<(Vec<String>, Vec<String>)> {
    let first = panels
        .first()
        .ok_or_else(|| QuantError::Validation("no asset panels given".into()))?;
    let (f, m) = (&first.header.feature_names, &first.header.market_names);
    if let Some(p) = panels
        .iter()
        .find(|p| &p.header.feature_names != f || &p.header.market_names != m)
    {
        return Err(QuantError::Dimension(format!(
            "{}: feature columns differ from {}",
            p.header.asset_id, first.header.asset_id
        )));
    }
    Ok((f.clone(), m.clone()))
}

/// Training and validation batches for one model kind.
pub fn build_batches(panels: &[Panel], config: &ModelConfig, seed: u64) -> Result<(Vec<Batch>, Vec<Batch>)> {
    let size = config.batch_size;
    let (train, val) = match config.kind {
        ModelKind::Qlstm => {
            let tr = dataset::sequence_refs(panels, SplitPart::Train, seed)?;
            let va = dataset::sequence_refs(panels, SplitPart::Val, seed.wrapping_add(1))?;
            (
                dataset::sequence_batches(panels, &tr, size)?,
                dataset::sequence_batches(panels, &va, size)?,
            )
        }
        ModelKind::Qdense => {
            let tr = dataset::anchor_refs(panels, SplitPart::Train)?;
            let va = dataset::anchor_refs(panels, SplitPart::Val)?;
            (
                dataset::anchor_batches(panels, &tr, size, seed)?,
                dataset::anchor_batches(panels, &va, size, seed.wrapping_add(1))?,
            )
        }
    };
    if train.is_empty() || val.is_empty() {
        return Err(QuantError::Batching(format!(
            "not enough rows for {} training ({} train / {} validation batches)",
            config.kind,
            train.len(),
            val.len()
        )));
    }
    Ok((train, val))
}

/// Builds, initialises and trains a two-stage model from raw panels.
pub fn fit_network(raw: &[Panel], spec: &TrainSpec) -> Result<(Checkpoint, TrainReport)> {
    spec.validate()?;
    let panels = normalize_panels(raw, spec.config.norm_window)?;
    let (feature_names, market_names) = check_panels(&panels)?;
    let grid = QuantileGrid::default();
    let (train, val) = build_batches(&panels, &spec.config, spec.seed)?;
    let mut model = TwoStageModel::new(
        spec.config.clone(),
        grid.clone(),
        train[0].x[0].cols(),
        train[0].z[0].cols(),
        spec.seed,
    )?;
    let rt = dataset::normalized_returns(&panels, SplitPart::Train)?;
    if rt.is_empty() {
        return Err(QuantError::Batching("empty training split".into()));
    }
    let bias: Vec<f64> = grid.taus().iter().map(|&t| stats::empirical_quantile(&rt, t)).collect();
    model.set_quantile_bias(&bias)?;
    let report = train_network(&mut model, &train, &val, spec)?;
    let checkpoint = Checkpoint {
        name: spec.config.kind.to_string(),
        model: ModelArtifact::TwoStage(model),
        grid,
        feature_names,
        market_names,
        norm_window: spec.config.norm_window,
        seed: spec.seed,
        weight_init: WEIGHT_INIT.into(),
        created_at: timestamp(),
    };
    Ok((checkpoint, report))
}

/// Fits the linear baseline on the fixed-window anchors of the training split.
pub fn fit_lqr_baseline(raw: &[Panel], window: usize, seed: u64, opts: &LqrOptions) -> Result<Checkpoint> {
    let panels = normalize_panels(raw, window)?;
    let (feature_names, market_names) = check_panels(&panels)?;
    let anchors = dataset::anchor_refs(&panels, SplitPart::Train)?;
    if anchors.is_empty() {
        return Err(QuantError::Batching("no LQR training anchors".into()));
    }
    let (x, y) = dataset::lqr_design(&panels, &anchors)?;
    let grid = QuantileGrid::default();
    let model = fit_lqr(&x, &y, &grid, opts)?;
    Ok(Checkpoint {
        name: "LQR".into(),
        model: ModelArtifact::Lqr(model),
        grid,
        feature_names,
        market_names,
        norm_window: window,
        seed,
        weight_init: "none".into(),
        created_at: timestamp(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    pub index: usize,
    pub seed: u64,
    pub config: ModelConfig,
    pub best_val_loss: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub best: ModelConfig,
    pub best_trial: usize,
    pub trials: Vec<Trial>,
}

fn sample_stage<R: Rng>(ranges: &SearchRanges, lstm: bool, rng: &mut R) -> StageConfig {
    let units = ranges.unit_choices();
    let layers = |rng: &mut R| {
        let n = rng.random_range(ranges.layers.0..=ranges.layers.1);
        (0..n)
            .map(|_| *units.choose(rng).expect("unit choices"))
            .collect::<Vec<_>>()
    };
    StageConfig {
        lstm_units: if lstm { layers(rng) } else { Vec::new() },
        dense_units: layers(rng),
    }
}

/// Draws one configuration uniformly from `ranges`.
pub fn sample_config<R: Rng>(ranges: &SearchRanges, rng: &mut R) -> ModelConfig {
    let lstm = ranges.kind == ModelKind::Qlstm;
    let act = |rng: &mut R| *ranges.activations.choose(rng).expect("activations");
    let market_choices: Vec<Activation> = std::iter::once(Activation::Identity)
        .chain(ranges.activations.iter().copied())
        .collect();
    ModelConfig {
        kind: ranges.kind,
        batch_size: *ranges.batch_sizes.choose(rng).expect("batch sizes"),
        learning_rate: rng.random_range(ranges.learning_rate.0..=ranges.learning_rate.1),
        norm_window: rng.random_range(ranges.norm_window.0..=ranges.norm_window.1),
        stage1: sample_stage(ranges, lstm, rng),
        stage2: sample_stage(ranges, lstm, rng),
        dropout: rng.random_range(ranges.dropout.0..=ranges.dropout.1),
        hidden_activation: act(rng),
        lstm_activation: act(rng),
        market_activation: *market_choices.choose(rng).expect("activations"),
        layer_norm: rng.random_bool(0.5),
        l1: rng.random_range(ranges.l1.0..=ranges.l1.1),
        l2: rng.random_range(ranges.l2.0..=ranges.l2.1),
    }
}

/// Trial configurations and seeds, derived from the master seed only.
pub fn trial_plan(ranges: &SearchRanges, n_trials: usize, seed: u64) -> Vec<(u64, ModelConfig)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n_trials)
        .map(|_| {
            let trial_seed = rng.random::<u64>();
            (trial_seed, sample_config(ranges, &mut rng))
        })
        .collect()
}

/// Trains every sampled configuration for at most `max_epochs` and returns
/// the one with the lowest validation loss.
pub fn random_search(
    raw: &[Panel],
    ranges: &SearchRanges,
    n_trials: usize,
    max_epochs: usize,
    seed: u64,
) -> Result<SearchResult> {
    if n_trials == 0 {
        return Err(QuantError::Validation("random search needs at least one trial".into()));
    }
    let trials: Vec<Trial> = trial_plan(ranges, n_trials, seed)
        .into_par_iter()
        .enumerate()
        .map(|(index, (trial_seed, config))| {
            let spec = TrainSpec {
                max_epochs: max_epochs.max(2),
                patience: DEFAULT_PATIENCE.min(max_epochs.max(2) - 1),
                seed: trial_seed,
                config: config.clone(),
            };
            let (best_val_loss, error) = match fit_network(raw, &spec) {
                Ok((_, report)) => (Some(report.best_val_loss), None),
                Err(e) => (None, Some(e.to_string())),
            };
            Trial {
                index,
                seed: trial_seed,
                config,
                best_val_loss,
                error,
            }
        })
        .collect();
    let best = trials
        .iter()
        .filter_map(|t| t.best_val_loss.map(|l| (t.index, l)))
        .min_by(|a, b| a.1.total_cmp(&b.1));
    match best {
        Some((i, _)) => Ok(SearchResult {
            best: trials[i].config.clone(),
            best_trial: i,
            trials,
        }),
        None => {
            let log: Vec<String> = trials
                .iter()
                .map(|t| format!("trial {}: {}", t.index, t.error.as_deref().unwrap_or("no loss")))
                .collect();
            Err(QuantError::Search(format!(
                "all {n_trials} trials failed: {}",
                log.join("; ")
            )))
        }
    }
}
