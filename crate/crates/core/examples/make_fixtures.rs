//! Writes the bundled fixture set: three real-style assets and four market
//! series on a 2014-2023 business-day calendar, plus a pipeline config.
//!
//! cargo run -p quantdist --example make_fixtures -- fixtures

use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use quantdist::ingest::{write_prices_csv, AssetClass, AssetMeta, MarketKind, PriceRow, PriceSeries, Role};
use quantdist::pipeline::{PipelineConfig, TrainPlan};
use quantdist::synth::{business_days, BatchOptions, NoiseDist};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

const SEED: u64 = 2014;

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Log returns with AR(1) log-volatility and loading `beta` on `factor`.
fn returns(rng: &mut ChaCha8Rng, factor: &[f64], beta: f64, vol: f64, drift: f64) -> Vec<f64> {
    let mut h = 0.0;
    factor
        .iter()
        .map(|f| {
            h = 0.97 * h + 0.2 * normal(rng);
            drift + beta * f + vol * (0.5 * h).exp() * normal(rng)
        })
        .collect()
}

fn series(
    id: &str,
    class: AssetClass,
    dates: &[NaiveDate],
    r: &[f64],
    start: f64,
    rng: &mut ChaCha8Rng,
) -> PriceSeries {
    let mut close = start;
    let rows = dates
        .iter()
        .zip(r)
        .map(|(&date, ret)| {
            let open = close;
            close *= ret.exp();
            let high = open.max(close) * (1.0 + 0.004 * normal(rng).abs());
            let low = open.min(close) * (1.0 - 0.004 * normal(rng).abs());
            PriceRow {
                date,
                open: Some(open),
                high,
                low,
                close,
                adj_close: close,
                volume: (13.0 + 0.3 * normal(rng)).exp().round(),
            }
        })
        .collect();
    PriceSeries::new(id, class, rows).expect("valid fixture series")
}

fn level_series(id: &str, dates: &[NaiveDate], rng: &mut ChaCha8Rng) -> PriceSeries {
    let mut x: f64 = 18.0;
    let rows = dates
        .iter()
        .map(|&date| {
            x = (x + 0.05 * (18.0 - x) + 0.8 * normal(rng)).max(9.0);
            PriceRow {
                date,
                open: Some(x),
                high: x * 1.02,
                low: x * 0.98,
                close: x,
                adj_close: x,
                volume: 0.0,
            }
        })
        .collect();
    PriceSeries::new(id, AssetClass::Sp500, rows).expect("valid level series")
}

fn main() {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "fixtures".into()));
    let real = out.join("real");
    std::fs::create_dir_all(&real).expect("create fixture dir");
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);

    let start = NaiveDate::from_ymd_opt(2014, 1, 1).expect("date");
    let end = NaiveDate::from_ymd_opt(2023, 12, 31).expect("date");
    let dates: Vec<NaiveDate> = business_days(start, 2700).into_iter().filter(|d| *d <= end).collect();
    let n = dates.len();
    let factor: Vec<f64> = (0..n).map(|_| 0.009 * normal(&mut rng)).collect();

    let mut metas = Vec::new();
    let add = |s: &PriceSeries, role: Role, kind: MarketKind, metas: &mut Vec<AssetMeta>| {
        let file = format!("{}.csv", s.asset_id);
        write_prices_csv(&real.join(&file), s).expect("write csv");
        metas.push(AssetMeta {
            asset_id: s.asset_id.clone(),
            asset_class: s.asset_class,
            path: file.into(),
            role,
            kind,
            group: None,
            market_set: "default".into(),
        });
    };

    let markets = [
        ("MKT_EQ", 1.0, 0.003, 0.0003),
        ("MKT_INTL", 0.8, 0.005, 0.0002),
        ("MKT_FUT", 0.3, 0.009, 0.0),
    ];
    for (id, beta, vol, drift) in markets {
        let r = returns(&mut rng, &factor, beta, vol, drift);
        let s = series(id, AssetClass::Sp500, &dates, &r, 1000.0, &mut rng);
        add(&s, Role::Market, MarketKind::Return, &mut metas);
    }
    let vix = level_series("MKT_VOL", &dates, &mut rng);
    add(&vix, Role::Market, MarketKind::Level, &mut metas);

    let assets = [
        ("EQ_ALPHA", AssetClass::Sp500, 1.1, 0.012, 0.0004, 80.0),
        ("CRYPTO_BETA", AssetClass::Crypto, 1.5, 0.035, 0.001, 400.0),
        ("CMDTY_GAMMA", AssetClass::Commodity, 0.4, 0.015, 0.0001, 60.0),
    ];
    for (id, class, beta, vol, drift, p0) in assets {
        let r = returns(&mut rng, &factor, beta, vol, drift);
        let s = series(id, class, &dates, &r, p0, &mut rng);
        add(&s, Role::Asset, MarketKind::Return, &mut metas);
    }
    write_json(&real.join("assets.json"), &metas);

    let config = PipelineConfig {
        seed: 7,
        train: TrainPlan {
            max_epochs: 8,
            patience: 3,
            ..TrainPlan::desk()
        },
        synth: Some(BatchOptions {
            per_distribution: 2,
            distributions: NoiseDist::ALL.to_vec(),
            ..BatchOptions::default()
        }),
        ..PipelineConfig::default()
    };
    write_json(&out.join("pipeline.json"), &config);
    println!(
        "wrote {} series and a pipeline config to {}",
        metas.len(),
        out.display()
    );
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) {
    let json = serde_json::to_string_pretty(value).expect("serialise");
    std::fs::write(path, json + "\n").expect("write json");
}
