//! End-to-end stages over an output directory: ingest, features, synthetic
//! data, training, evaluation and reporting.
//!
//! Layout under the output root:
//! `ingest/{asset}.jsonl`, `features/{set}/{asset}.jsonl`,
//! `models/{set}/{model}.json`, `report/`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::Panel;
use crate::error::{QuantError, Result};
use crate::evalrep::{self, AssetForecasts, EvalOptions, EvalResult};
use crate::features::market_features;
use crate::ingest::{self, AssetClass, AssetMeta, MarketKind, PriceSeries, Role, SnapshotHeader};
use crate::manifest::RunManifest;
use crate::quantmodels::{preset, Checkpoint, LqrOptions, ModelConfig, Preset};
use crate::synth::{self, BatchOptions, SynthDataset};
use crate::train::{self, TrainReport, TrainSpec, DEFAULT_MAX_EPOCHS, DEFAULT_PATIENCE};
use crate::vol::{self, DEFAULT_LAMBDA};

pub const SYNTH_MARKET_SET: &str = "synthetic";
pub const MODEL_NAMES: [&str; 3] = ["LQR", "qDense", "qLSTM"];

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| QuantError::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let json = serde_json::to_string_pretty(value)?;
    std::fs::write(path, json + "\n").map_err(|e| QuantError::io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| QuantError::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

/// Files in `dir` with extension `ext`, sorted by name.
fn files_with_ext(dir: &Path, ext: &str) -> Result<Vec<PathBuf>> {
    let mut out: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| QuantError::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|x| x == ext))
        .collect();
    out.sort();
    Ok(out)
}

fn subdirs(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| QuantError::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    out.sort();
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ingested {
    pub header: SnapshotHeader,
    pub series: PriceSeries,
}

/// Loads every series listed in a metadata file.
pub fn ingest_meta(meta_path: &Path) -> Result<Vec<Ingested>> {
    let metas = ingest::load_meta(meta_path)?;
    metas
        .par_iter()
        .map(|m| {
            let loaded = ingest::load_prices(&m.path, &m.asset_id, m.asset_class)?;
            Ok(Ingested {
                header: SnapshotHeader {
                    asset_id: m.asset_id.clone(),
                    asset_class: m.asset_class,
                    role: m.role,
                    kind: m.kind,
                    group: m.group_name(),
                    market_set: m.market_set.clone(),
                    dropped_rows: loaded.dropped_rows,
                    rows: loaded.series.len(),
                },
                series: loaded.series,
            })
        })
        .collect()
}

pub fn write_snapshots(dir: &Path, assets: &[Ingested]) -> Result<()> {
    create_dir(dir)?;
    let mut seen = std::collections::BTreeSet::new();
    for a in assets {
        if !seen.insert(&a.header.asset_id) {
            return Err(QuantError::Validation(format!(
                "asset id `{}` listed twice",
                a.header.asset_id
            )));
        }
        ingest::write_snapshot(&ingest::snapshot_path(dir, &a.header.asset_id), &a.header, &a.series)?;
    }
    Ok(())
}

pub fn read_snapshots(dir: &Path) -> Result<Vec<Ingested>> {
    files_with_ext(dir, "jsonl")?
        .iter()
        .map(|p| {
            let (header, series) = ingest::read_snapshot(p)?;
            Ok(Ingested { header, series })
        })
        .collect()
}

/// Raw panels per market set. Group volatility pools the assets of each
/// group; each asset is joined with the market series of its set.
pub fn build_panel_sets(assets: &[Ingested], lambda: f64) -> Result<BTreeMap<String, Vec<Panel>>> {
    let mut markets: BTreeMap<&str, Vec<(PriceSeries, MarketKind)>> = BTreeMap::new();
    let mut members: BTreeMap<&str, Vec<&Ingested>> = BTreeMap::new();
    for a in assets {
        match a.header.role {
            Role::Market => markets
                .entry(a.header.market_set.as_str())
                .or_default()
                .push((a.series.clone(), a.header.kind)),
            Role::Asset => members.entry(a.header.group.as_str()).or_default().push(a),
        }
    }
    let mut matrices = BTreeMap::new();
    for (set, series) in &markets {
        matrices.insert(*set, market_features(series)?);
    }
    let mut group_vols = BTreeMap::new();
    for (group, list) in &members {
        let vols = list
            .par_iter()
            .map(|a| vol::ewma_vol(&a.header.asset_id, &ingest::log_returns(&a.series)?, lambda))
            .collect::<Result<Vec<_>>>()?;
        group_vols.insert(*group, vol::group_vol(group, &vols)?);
    }
    let asset_list: Vec<&Ingested> = members.values().flatten().copied().collect();
    let panels = asset_list
        .par_iter()
        .map(|a| {
            let set = a.header.market_set.as_str();
            let market = matrices.get(set).ok_or_else(|| {
                QuantError::Alignment(format!("{}: no market series in set `{set}`", a.header.asset_id))
            })?;
            Ok((
                set.to_string(),
                Panel::build(&a.series, &a.header.group, &group_vols[a.header.group.as_str()], market)?,
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut sets: BTreeMap<String, Vec<Panel>> = BTreeMap::new();
    for (set, panel) in panels {
        sets.entry(set).or_default().push(panel);
    }
    for list in sets.values_mut() {
        list.sort_by(|a, b| a.header.asset_id.cmp(&b.header.asset_id));
    }
    Ok(sets)
}

pub fn write_panel_sets(dir: &Path, sets: &BTreeMap<String, Vec<Panel>>) -> Result<()> {
    for (set, panels) in sets {
        let sub = dir.join(set);
        create_dir(&sub)?;
        for p in panels {
            p.write_jsonl(&sub.join(format!("{}.jsonl", p.header.asset_id)))?;
        }
    }
    Ok(())
}

pub fn read_panel_sets(dir: &Path) -> Result<BTreeMap<String, Vec<Panel>>> {
    let mut sets = BTreeMap::new();
    for sub in subdirs(dir)? {
        let name = sub
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        let panels = files_with_ext(&sub, "jsonl")?
            .iter()
            .map(|p| Panel::read_jsonl(p))
            .collect::<Result<Vec<_>>>()?;
        if !panels.is_empty() {
            sets.insert(name, panels);
        }
    }
    if sets.is_empty() {
        return Err(QuantError::Validation(format!(
            "{}: no feature panels found",
            dir.display()
        )));
    }
    Ok(sets)
}

/// Writes price CSVs for every synthetic series and a metadata file listing
/// them; returns the metadata path.
pub fn write_synth_dataset(dir: &Path, ds: &SynthDataset) -> Result<PathBuf> {
    create_dir(dir)?;
    let mut metas = Vec::new();
    for m in &ds.market {
        let file = format!("{}.csv", m.series.asset_id);
        ingest::write_prices_csv(&dir.join(&file), &m.series)?;
        metas.push(AssetMeta {
            asset_id: m.series.asset_id.clone(),
            asset_class: AssetClass::Synthetic,
            path: file.into(),
            role: Role::Market,
            kind: m.kind,
            group: None,
            market_set: SYNTH_MARKET_SET.into(),
        });
    }
    for a in &ds.assets {
        let s = &a.result.series;
        let file = format!("{}.csv", s.asset_id);
        ingest::write_prices_csv(&dir.join(&file), s)?;
        metas.push(AssetMeta {
            asset_id: s.asset_id.clone(),
            asset_class: AssetClass::Synthetic,
            path: file.into(),
            role: Role::Asset,
            kind: MarketKind::Return,
            group: Some(a.group().to_string()),
            market_set: SYNTH_MARKET_SET.into(),
        });
    }
    let meta_path = dir.join("assets.json");
    write_json(&meta_path, &metas)?;
    let mut summary = csv::Writer::from_writer(Vec::new());
    let _ = summary.write_record([
        "asset_id",
        "distribution",
        "mu",
        "sigma",
        "target_correlation",
        "achieved_correlation",
    ]);
    for a in &ds.assets {
        let r = &a.result;
        let _ = summary.write_record([
            r.series.asset_id.clone(),
            a.distribution.name().to_string(),
            r.spec.mu.to_string(),
            r.spec.sigma.to_string(),
            r.spec.target_correlation.to_string(),
            r.achieved_correlation.to_string(),
        ]);
    }
    let path = dir.join("summary.csv");
    std::fs::write(&path, summary.into_inner().unwrap_or_default()).map_err(|e| QuantError::io(&path, e))?;
    Ok(meta_path)
}

/// Training settings shared by every market set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainPlan {
    pub qlstm: ModelConfig,
    pub qdense: ModelConfig,
    /// Feature normalisation window for the linear baseline.
    pub lqr_window: usize,
    pub lqr: LqrOptions,
    pub max_epochs: usize,
    pub patience: usize,
    pub models: Vec<String>,
}

impl Default for TrainPlan {
    fn default() -> Self {
        let qlstm = Preset::QlstmFinal.config();
        Self {
            lqr_window: qlstm.norm_window,
            qlstm,
            qdense: Preset::QdenseFinal.config(),
            lqr: LqrOptions::default(),
            max_epochs: DEFAULT_MAX_EPOCHS,
            patience: DEFAULT_PATIENCE,
            models: MODEL_NAMES.iter().map(|s| s.to_string()).collect(),
        }
    }
}

impl TrainPlan {
    /// The small presets for quick runs.
    pub fn desk() -> Self {
        let qlstm = Preset::QlstmDesk.config();
        Self {
            lqr_window: qlstm.norm_window,
            qlstm,
            qdense: Preset::QdenseDesk.config(),
            ..Self::default()
        }
    }

    pub fn with_presets(qlstm: &str, qdense: &str) -> Result<Self> {
        let qlstm = preset(qlstm)?;
        Ok(Self {
            lqr_window: qlstm.norm_window,
            qlstm,
            qdense: preset(qdense)?,
            ..Self::default()
        })
    }

    pub fn validate(&self) -> Result<()> {
        for m in &self.models {
            if !MODEL_NAMES.contains(&m.as_str()) {
                return Err(QuantError::Lookup {
                    kind: "model",
                    name: m.clone(),
                });
            }
        }
        if self.max_epochs < 2 {
            return Err(QuantError::Validation("max_epochs must be at least 2".into()));
        }
        if self.lqr_window < 2 {
            return Err(QuantError::Validation("lqr_window must be at least 2".into()));
        }
        self.qlstm.validate()?;
        self.qdense.validate()
    }

    fn spec(&self, config: &ModelConfig, seed: u64) -> TrainSpec {
        TrainSpec {
            max_epochs: self.max_epochs,
            patience: self.patience.min(self.max_epochs - 1).max(1),
            seed,
            config: config.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trained {
    pub checkpoint: Checkpoint,
    pub report: Option<TrainReport>,
}

/// Fits every model of `plan` on one market set.
pub fn train_set(panels: &[Panel], plan: &TrainPlan, seed: u64) -> Result<Vec<Trained>> {
    plan.validate()?;
    let mut out = Vec::new();
    for name in MODEL_NAMES {
        if !plan.models.iter().any(|m| m == name) {
            continue;
        }
        let trained = match name {
            "LQR" => Trained {
                checkpoint: train::fit_lqr_baseline(panels, plan.lqr_window, seed, &plan.lqr)?,
                report: None,
            },
            _ => {
                let config = if name == "qLSTM" { &plan.qlstm } else { &plan.qdense };
                let (checkpoint, report) = train::fit_network(panels, &plan.spec(config, seed))?;
                Trained {
                    checkpoint,
                    report: Some(report),
                }
            }
        };
        out.push(trained);
    }
    Ok(out)
}

/// Report without the wall time, so reruns write identical files.
#[derive(Serialize)]
struct StoredReport<'a> {
    epochs: &'a [train::EpochLog],
    best_epoch: usize,
    best_val_loss: f64,
    stopped_early: bool,
    parameter_count: usize,
}

pub fn write_models(dir: &Path, trained: &[Trained]) -> Result<()> {
    create_dir(dir)?;
    for t in trained {
        t.checkpoint.save(&dir.join(format!("{}.json", t.checkpoint.name)))?;
        if let Some(r) = &t.report {
            write_json(
                &dir.join(format!("{}.report.json", t.checkpoint.name)),
                &StoredReport {
                    epochs: &r.epochs,
                    best_epoch: r.best_epoch,
                    best_val_loss: r.best_val_loss,
                    stopped_early: r.stopped_early,
                    parameter_count: r.parameter_count,
                },
            )?;
        }
    }
    Ok(())
}

/// Scores the named models of every set found under `features_dir`, with
/// checkpoints read from `models_dir/{set}`.
pub fn evaluate(
    models_dir: &Path,
    sets: &BTreeMap<String, Vec<Panel>>,
    models: &[String],
    opts: EvalOptions,
) -> Result<(Vec<EvalResult>, Vec<AssetForecasts>)> {
    let names: Vec<&str> = models.iter().map(String::as_str).collect();
    let mut results = Vec::new();
    let mut forecasts = Vec::new();
    for (set, panels) in sets {
        for ckpt in evalrep::load_checkpoints(&models_dir.join(set), &names)? {
            let (r, f) = evalrep::run_protocol(&ckpt, panels, opts)?;
            results.extend(r);
            forecasts.extend(f);
        }
    }
    Ok((results, forecasts))
}

pub const RESULTS_FILE: &str = "results.json";
pub const FIGURE_WINDOWS: usize = 6;

/// Comparison table in CSV and markdown form.
pub fn write_tables(dir: &Path, results: &[EvalResult]) -> Result<()> {
    create_dir(dir)?;
    let table = evalrep::build_table(results);
    let csv_path = dir.join("comparison.csv");
    std::fs::write(&csv_path, table.to_csv()).map_err(|e| QuantError::io(&csv_path, e))?;
    let md_path = dir.join("comparison.md");
    std::fs::write(&md_path, table.to_markdown()).map_err(|e| QuantError::io(&md_path, e))?;
    write_json(&dir.join("comparison.json"), &table)
}

/// Results, tables and one density figure per model and asset.
pub fn write_report(dir: &Path, results: &[EvalResult], forecasts: &[AssetForecasts]) -> Result<()> {
    create_dir(dir)?;
    write_json(&dir.join(RESULTS_FILE), &results)?;
    write_tables(dir, results)?;
    let fig_dir = dir.join("figures");
    create_dir(&fig_dir)?;
    for f in forecasts {
        let svg = evalrep::density_figure(f, FIGURE_WINDOWS)?;
        let path = fig_dir.join(format!("{}_{}.svg", f.model_name, f.asset_id));
        std::fs::write(&path, svg).map_err(|e| QuantError::io(&path, e))?;
    }
    Ok(())
}

pub fn read_results(path: &Path) -> Result<Vec<EvalResult>> {
    read_json(path)
}

/// Everything a full run needs beyond the input metadata files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub seed: u64,
    pub lambda: f64,
    pub train: TrainPlan,
    /// Synthetic assets generated alongside the inputs, if any.
    pub synth: Option<BatchOptions>,
    pub eval: EvalOptions,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            lambda: DEFAULT_LAMBDA,
            train: TrainPlan::default(),
            synth: None,
            eval: EvalOptions::default(),
        }
    }
}

/// Runs every stage into `out` and writes the run manifest there.
pub fn run_pipeline(
    meta_paths: &[PathBuf],
    out: &Path,
    cfg: &PipelineConfig,
    command: Vec<String>,
) -> Result<RunManifest> {
    cfg.train.validate()?;
    create_dir(out)?;
    let mut manifest = RunManifest::start(command);
    manifest.config_hash = crate::manifest::config_hash(cfg)?;
    manifest.seeds.insert("seed".into(), cfg.seed);
    manifest.add_inputs(meta_paths)?;

    let mut clock = Instant::now();
    let mut lap = |m: &mut RunManifest, stage: &str| {
        m.timings.insert(stage.to_string(), clock.elapsed().as_secs_f64());
        clock = Instant::now();
    };

    let mut metas = meta_paths.to_vec();
    if let Some(opts) = &cfg.synth {
        let ds = synth::batch_generate(opts, cfg.seed)?;
        metas.push(write_synth_dataset(&out.join("synth"), &ds)?);
        lap(&mut manifest, "synth");
    }
    let mut assets = Vec::new();
    for m in &metas {
        let meta_inputs = ingest::load_meta(m)?.into_iter().map(|a| a.path).collect::<Vec<_>>();
        if !m.starts_with(out) {
            manifest.add_inputs(&meta_inputs)?;
        }
        assets.extend(ingest_meta(m)?);
    }
    write_snapshots(&out.join("ingest"), &assets)?;
    lap(&mut manifest, "ingest");

    let sets = build_panel_sets(&assets, cfg.lambda)?;
    write_panel_sets(&out.join("features"), &sets)?;
    lap(&mut manifest, "features");

    for (set, panels) in &sets {
        let trained = train_set(panels, &cfg.train, cfg.seed)?;
        write_models(&out.join("models").join(set), &trained)?;
    }
    lap(&mut manifest, "train");

    let (results, forecasts) = evaluate(&out.join("models"), &sets, &cfg.train.models, cfg.eval)?;
    write_report(&out.join("report"), &results, &forecasts)?;
    lap(&mut manifest, "eval");

    manifest.finish(out)?;
    RunManifest::load(&out.join(crate::manifest::MANIFEST_FILE))
}
