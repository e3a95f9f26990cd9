use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use quantdist::dist;
use quantdist::evalrep::EvalOptions;
use quantdist::manifest::{config_hash, RunManifest};
use quantdist::pipeline::{self, PipelineConfig, MODEL_NAMES};
use quantdist::quantmodels::{preset, ModelKind, SearchRanges};
use quantdist::synth::{self, NoiseDist};
use quantdist::train;
use quantdist::{QuantError, Result};

#[derive(Parser)]
#[command(
    name = "quantdist",
    version,
    about = "Quantile forecasts of daily return distributions"
)]
struct Cli {
    /// Master random seed
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Pipeline configuration (JSON); command-line flags take precedence
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse price CSVs listed in a metadata file into snapshots
    Ingest {
        #[arg(long)]
        meta: PathBuf,
    },
    /// Engineer features and build per-asset panels from snapshots
    Features {
        /// Directory written by `ingest`
        #[arg(long)]
        store: PathBuf,
        #[arg(long)]
        lambda: Option<f64>,
    },
    /// Generate synthetic assets and market series
    Synth {
        #[arg(long)]
        per_distribution: Option<usize>,
        #[arg(long)]
        samples: Option<usize>,
        #[arg(long)]
        correlation: Option<f64>,
        #[arg(long)]
        market_features: Option<usize>,
        /// Comma-separated subset of normal,gamma,lognormal,uniform
        #[arg(long, value_delimiter = ',')]
        distributions: Option<Vec<String>>,
    },
    /// Train models on feature panels
    Train {
        /// Directory written by `features`
        #[arg(long)]
        data: PathBuf,
        /// Preset for the model of its kind; trains only that model unless --models is given
        #[arg(long)]
        preset: Option<String>,
        /// Comma-separated subset of LQR,qDense,qLSTM
        #[arg(long, value_delimiter = ',')]
        models: Option<Vec<String>>,
        #[command(flatten)]
        epochs: EpochArgs,
        /// Random-search this many configurations for the preset's kind first
        #[arg(long)]
        search_trials: Option<usize>,
    },
    /// Score checkpoints on the test split and write the report
    Eval {
        /// Directory written by `train`
        #[arg(long)]
        models: PathBuf,
        /// Directory written by `features`
        #[arg(long)]
        data: PathBuf,
        /// Comma-separated subset of LQR,qDense,qLSTM
        #[arg(long, value_delimiter = ',')]
        model_names: Option<Vec<String>>,
        /// Score all 22 qLSTM steps instead of the last one
        #[arg(long)]
        per_step: bool,
    },
    /// Turn quantile rows into densities
    Kde {
        /// CSV with one row of quantiles per line, no header
        #[arg(long)]
        quantiles: PathBuf,
        #[arg(long, default_value_t = dist::BANDWIDTH)]
        bandwidth: f64,
        #[arg(long, default_value_t = dist::GRID_POINTS)]
        grid_points: usize,
        /// Also write this many samples per row
        #[arg(long)]
        samples: Option<usize>,
    },
    /// Rebuild comparison tables from a results file
    Report {
        #[arg(long)]
        results: PathBuf,
    },
    /// Every stage in sequence
    Run {
        /// Metadata files of the input series; optional when the config generates synthetic data
        #[arg(long)]
        meta: Vec<PathBuf>,
        #[command(flatten)]
        epochs: EpochArgs,
        /// Use the small presets
        #[arg(long)]
        desk: bool,
    },
}

#[derive(Args)]
struct EpochArgs {
    #[arg(long)]
    max_epochs: Option<usize>,
    #[arg(long)]
    patience: Option<usize>,
}

fn load_config(cli: &Cli) -> Result<PipelineConfig> {
    let mut cfg = match &cli.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| QuantError::io(p, e))?;
            serde_json::from_str(&text)?
        }
        None => PipelineConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn apply_epochs(cfg: &mut PipelineConfig, e: &EpochArgs) {
    if let Some(m) = e.max_epochs {
        cfg.train.max_epochs = m;
    }
    if let Some(p) = e.patience {
        cfg.train.patience = p;
    }
}

fn create_out(out: &Path) -> Result<()> {
    std::fs::create_dir_all(out).map_err(|e| QuantError::io(out, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| QuantError::io(path, e))
}

fn argv() -> Vec<String> {
    std::env::args().collect()
}

fn finish(mut m: RunManifest, cfg: &PipelineConfig, out: &Path) -> Result<()> {
    m.config_hash = config_hash(cfg)?;
    m.seeds.insert("seed".into(), cfg.seed);
    let path = m.finish(out)?;
    eprintln!("wrote {}", path.display());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = load_config(&cli)?;
    let out = cli.out.clone();
    create_out(&out)?;
    let mut manifest = RunManifest::start(argv());
    match &cli.command {
        Command::Ingest { meta } => {
            manifest.add_inputs(std::slice::from_ref(meta))?;
            let assets = pipeline::ingest_meta(meta)?;
            for a in &assets {
                if a.header.dropped_rows > 0 {
                    eprintln!(
                        "{}: dropped {} rows with blank adj_close",
                        a.header.asset_id, a.header.dropped_rows
                    );
                }
            }
            pipeline::write_snapshots(&out, &assets)?;
        }
        Command::Features { store, lambda } => {
            if let Some(l) = lambda {
                cfg.lambda = *l;
            }
            manifest.add_inputs(std::slice::from_ref(store))?;
            let assets = pipeline::read_snapshots(store)?;
            let sets = pipeline::build_panel_sets(&assets, cfg.lambda)?;
            pipeline::write_panel_sets(&out, &sets)?;
        }
        Command::Synth {
            per_distribution,
            samples,
            correlation,
            market_features,
            distributions,
        } => {
            let mut opts = cfg.synth.clone().unwrap_or_default();
            if let Some(v) = per_distribution {
                opts.per_distribution = *v;
            }
            if let Some(v) = samples {
                opts.n_samples = *v;
            }
            if let Some(v) = correlation {
                opts.target_correlation = *v;
            }
            if let Some(v) = market_features {
                opts.market_features = *v;
            }
            if let Some(list) = distributions {
                opts.distributions = list.iter().map(|s| s.parse::<NoiseDist>()).collect::<Result<_>>()?;
            }
            let ds = synth::batch_generate(&opts, cfg.seed)?;
            pipeline::write_synth_dataset(&out, &ds)?;
            cfg.synth = Some(opts);
        }
        Command::Train {
            data,
            preset: name,
            models,
            epochs,
            search_trials,
        } => {
            apply_epochs(&mut cfg, epochs);
            let mut kind = None;
            if let Some(name) = name {
                let c = preset(name)?;
                kind = Some(c.kind);
                match c.kind {
                    ModelKind::Qlstm => {
                        cfg.train.lqr_window = c.norm_window;
                        cfg.train.qlstm = c;
                    }
                    ModelKind::Qdense => cfg.train.qdense = c,
                }
                cfg.train.models = vec![kind.map(|k| k.to_string()).unwrap_or_default()];
            }
            if let Some(m) = models {
                cfg.train.models = m.clone();
            }
            manifest.add_inputs(std::slice::from_ref(data))?;
            let sets = pipeline::read_panel_sets(data)?;
            if let Some(n) = search_trials {
                let kind = kind.unwrap_or(ModelKind::Qlstm);
                let mut searches = BTreeMap::new();
                for (set, panels) in &sets {
                    let res = train::random_search(
                        panels,
                        &SearchRanges::for_kind(kind),
                        *n,
                        cfg.train.max_epochs,
                        cfg.seed,
                    )?;
                    match kind {
                        ModelKind::Qlstm => cfg.train.qlstm = res.best.clone(),
                        ModelKind::Qdense => cfg.train.qdense = res.best.clone(),
                    }
                    searches.insert(set.clone(), res);
                }
                write_text(&out.join("search.json"), &serde_json::to_string_pretty(&searches)?)?;
            }
            for (set, panels) in &sets {
                let trained = pipeline::train_set(panels, &cfg.train, cfg.seed)?;
                for t in &trained {
                    if let Some(r) = &t.report {
                        eprintln!(
                            "{set}/{}: best epoch {} val loss {:.6} ({} parameters)",
                            t.checkpoint.name, r.best_epoch, r.best_val_loss, r.parameter_count
                        );
                        manifest
                            .timings
                            .insert(format!("{set}/{}", t.checkpoint.name), r.wall_time_secs);
                    }
                }
                pipeline::write_models(&out.join(set), &trained)?;
            }
        }
        Command::Eval {
            models,
            data,
            model_names,
            per_step,
        } => {
            cfg.eval = EvalOptions {
                per_step: *per_step || cfg.eval.per_step,
            };
            let names = model_names
                .clone()
                .unwrap_or_else(|| MODEL_NAMES.iter().map(|s| s.to_string()).collect());
            manifest.add_inputs(&[models.clone(), data.clone()])?;
            let sets = pipeline::read_panel_sets(data)?;
            let (results, forecasts) = pipeline::evaluate(models, &sets, &names, cfg.eval)?;
            pipeline::write_report(&out, &results, &forecasts)?;
            print!("{}", quantdist::evalrep::build_table(&results).to_markdown());
        }
        Command::Kde {
            quantiles,
            bandwidth,
            grid_points,
            samples,
        } => {
            manifest.add_inputs(std::slice::from_ref(quantiles))?;
            let rows = read_quantile_rows(quantiles)?;
            let mut densities = Vec::new();
            for (i, q) in rows.iter().enumerate() {
                let d = dist::quantiles_to_pdf(q, *grid_points, *bandwidth)?;
                d.write_csv(&out.join(format!("density_{i}.csv")))?;
                if let Some(n) = samples {
                    let s = d.sample(*n, cfg.seed.wrapping_add(i as u64));
                    let text: String = s.iter().map(|v| format!("{v}\n")).collect();
                    write_text(&out.join(format!("samples_{i}.csv")), &text)?;
                }
                densities.push((format!("row {i}"), d));
            }
            let moments: Vec<dist::Moments> = densities.iter().map(|(_, d)| d.moments()).collect();
            write_text(&out.join("moments.json"), &serde_json::to_string_pretty(&moments)?)?;
            write_text(&out.join("densities.svg"), &dist::density_svg("densities", &densities))?;
        }
        Command::Report { results } => {
            manifest.add_inputs(std::slice::from_ref(results))?;
            let r = pipeline::read_results(results)?;
            pipeline::write_tables(&out, &r)?;
            print!("{}", quantdist::evalrep::build_table(&r).to_markdown());
        }
        Command::Run { meta, epochs, desk } => {
            if *desk {
                let keep = (cfg.train.max_epochs, cfg.train.patience, cfg.train.models.clone());
                cfg.train = pipeline::TrainPlan::desk();
                (cfg.train.max_epochs, cfg.train.patience, cfg.train.models) = keep;
            }
            apply_epochs(&mut cfg, epochs);
            if meta.is_empty() && cfg.synth.is_none() {
                return Err(QuantError::Validation(
                    "run needs --meta or a config with synthetic data".into(),
                ));
            }
            let m = pipeline::run_pipeline(meta, &out, &cfg, argv())?;
            eprintln!("wrote {} artifacts to {}", m.artifacts.len(), out.display());
            return Ok(());
        }
    }
    finish(manifest, &cfg, &out)
}

fn read_quantile_rows(path: &Path) -> Result<Vec<Vec<f64>>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_path(path)
        .map_err(|e| QuantError::Parse {
            line: 0,
            message: e.to_string(),
        })?;
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| QuantError::Parse {
            line: i as u64 + 1,
            message: e.to_string(),
        })?;
        let row = rec
            .iter()
            .map(|f| {
                f.trim().parse::<f64>().map_err(|_| QuantError::Parse {
                    line: i as u64 + 1,
                    message: format!("`{f}` is not a number"),
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(QuantError::Validation(format!("{}: no quantile rows", path.display())));
    }
    Ok(rows)
}

fn set_threads() {
    if let Some(n) = std::env::var("QUANTDIST_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
    {
        if n > 0 {
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        }
    }
}

/// Bad input, including a missing input file, as opposed to a failure of the tool.
fn is_user_error(e: &QuantError) -> bool {
    e.is_validation() || matches!(e, QuantError::Io { source, .. } if source.kind() == std::io::ErrorKind::NotFound)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    set_threads();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if is_user_error(&e) {
                ExitCode::from(1)
            } else {
                ExitCode::from(2)
            }
        }
    }
}
