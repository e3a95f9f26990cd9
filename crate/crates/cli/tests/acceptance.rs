//! One PASS/FAIL line per acceptance criterion.
//!
//! cargo test -p quantdist-cli --test acceptance -- --nocapture

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use ndgrad::check::{max_relative_error, numeric_grads};
use ndgrad::{Activation, Tensor};
use quantdist::dist::quantiles_to_pdf;
use quantdist::evalrep::{build_table, AssetForecasts, EvalOptions, EvalResult};
use quantdist::ingest::AssetClass;
use quantdist::pipeline::{self, TrainPlan};
use quantdist::quantmodels::{
    fit_lqr, loss_multistep, loss_single, Batch, LqrOptions, ModelConfig, ModelKind, QuantileGrid, StageConfig,
    TwoStageModel, TAUS,
};
use quantdist::stats::{empirical_quantile, sorted};
use quantdist::synth::{batch_generate, BatchOptions, NoiseDist};
use quantdist::vol::{ewma_sigma, DEFAULT_LAMBDA};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// 0.02 * Phi^-1(tau) + 0.001 on the 37 levels.
const GOLDEN_Q: [f64; 37] = [
    -0.07681183772826189,
    -0.06861512808692424,
    -0.062493670549101515,
    -0.059466828794782954,
    -0.057400558887240404,
    -0.055140675366876085,
    -0.05051658607097802,
    -0.04552695748081682,
    -0.04240180755169121,
    -0.04007497821263646,
    -0.036615872163025025,
    -0.03189707253902946,
    -0.024631031310892008,
    -0.019728667789875795,
    -0.015832424671458283,
    -0.012489795003921635,
    -0.009488010254160819,
    -0.006706409328151355,
    -0.004066942062715994,
    -0.0015132269371014805,
    0.001,
    0.003513226937101483,
    0.006066942062715994,
    0.008706409328151355,
    0.011488010254160814,
    0.014489795003921634,
    0.017832424671458288,
    0.021728667789875797,
    0.02663103131089201,
    0.033897072539029446,
    0.04207497821263645,
    0.04752695748081682,
    0.05251658607097801,
    0.05714067536687622,
    0.0644936705491013,
    0.07061512808692484,
    0.0788118377282624,
];

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn within_budget(o: Outcome, took: Duration, budget: Duration) -> Outcome {
    if took <= budget {
        o
    } else {
        outcome(
            false,
            format!(
                "{} (took {:.1}s, budget {:.0}s)",
                o.detail,
                took.as_secs_f64(),
                budget.as_secs_f64()
            ),
        )
    }
}

fn grid() -> QuantileGrid {
    QuantileGrid::new(TAUS.to_vec()).unwrap()
}

fn rho(tau: f64, u: f64) -> f64 {
    if u >= 0.0 {
        tau * u
    } else {
        (tau - 1.0) * u
    }
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
}

fn c1_loss_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let g = grid();
    let k = TAUS.len();
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let b = rng.random_range(1..=8);
        let t = rng.random_range(1..=5);
        let mut draw = |s: f64| s * (rng.random::<f64>() * 2.0 - 1.0);
        let r: Vec<Vec<f64>> = (0..b).map(|_| (0..t).map(|_| draw(0.05)).collect()).collect();
        let rt: Vec<Vec<f64>> = (0..b).map(|_| (0..t).map(|_| draw(2.0)).collect()).collect();
        let qr: Vec<Vec<Vec<f64>>> = (0..b)
            .map(|_| (0..t).map(|_| (0..k).map(|_| draw(0.05)).collect()).collect())
            .collect();
        let qt: Vec<Vec<Vec<f64>>> = (0..b)
            .map(|_| (0..t).map(|_| (0..k).map(|_| draw(2.0)).collect()).collect())
            .collect();

        let mut triple = 0.0;
        for i in 0..b {
            for s in 0..t {
                for (j, &tau) in TAUS.iter().enumerate() {
                    triple += rho(tau, r[i][s] - qr[i][s][j]) + rho(tau, rt[i][s] - qt[i][s][j]);
                }
            }
        }
        triple /= (b * t * k) as f64;
        worst = worst.max(rel(loss_multistep(&r, &rt, &qr, &qt, &g).unwrap(), triple));

        let r1: Vec<f64> = r.iter().map(|v| v[0]).collect();
        let rt1: Vec<f64> = rt.iter().map(|v| v[0]).collect();
        let qr1: Vec<Vec<f64>> = qr.iter().map(|v| v[0].clone()).collect();
        let qt1: Vec<Vec<f64>> = qt.iter().map(|v| v[0].clone()).collect();
        let mut double = 0.0;
        for i in 0..b {
            for (j, &tau) in TAUS.iter().enumerate() {
                double += rho(tau, r1[i] - qr1[i][j]) + rho(tau, rt1[i] - qt1[i][j]);
            }
        }
        double /= (b * k) as f64;
        worst = worst.max(rel(loss_single(&r1, &rt1, &qr1, &qt1, &g).unwrap(), double));
    }
    outcome(
        worst <= 1e-12,
        format!("max relative error {worst:.2e} over 50 batches"),
    )
}

fn c2_pinball_optimality() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut failures = 0;
    let mut checks = 0;
    for _ in 0..100 {
        let y: Vec<f64> = (0..201).map(|_| StandardNormal.sample(&mut rng)).collect();
        let s = sorted(&y);
        let (lo, hi) = (s[0], s[200]);
        let candidates: Vec<f64> = (0..401).map(|i| lo + (hi - lo) * i as f64 / 400.0).collect();
        for &tau in &TAUS {
            let mean_loss = |q: f64| y.iter().map(|v| rho(tau, v - q)).sum::<f64>() / y.len() as f64;
            let at_q = mean_loss(empirical_quantile(&s, tau));
            let best = candidates.iter().map(|&c| mean_loss(c)).fold(f64::INFINITY, f64::min);
            checks += 1;
            if at_q > best + 1e-12 {
                failures += 1;
            }
        }
    }
    outcome(
        failures == 0,
        format!("{failures} of {checks} level/sample pairs beaten by a candidate"),
    )
}

fn tiny(kind: ModelKind, hidden: Activation, market: Activation) -> ModelConfig {
    let (lstm, dense) = match kind {
        ModelKind::Qlstm => (vec![2], vec![2]),
        ModelKind::Qdense => (vec![], vec![2, 2]),
    };
    let stage = StageConfig {
        lstm_units: lstm,
        dense_units: dense,
    };
    ModelConfig {
        kind,
        batch_size: 4,
        learning_rate: 1e-3,
        norm_window: 10,
        stage1: stage.clone(),
        stage2: stage,
        dropout: 0.0,
        hidden_activation: hidden,
        lstm_activation: Activation::Tanh,
        market_activation: market,
        layer_norm: true,
        l1: 1e-3,
        l2: 1e-3,
    }
}

fn random_batch(b: usize, t: usize, m: usize, g: usize, seed: u64) -> Batch {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut mat = |r: usize, c: usize, s: f64, shift: f64| {
        Tensor::new(
            vec![r, c],
            (0..r * c)
                .map(|_| shift + s * (rng.random::<f64>() * 2.0 - 1.0))
                .collect(),
        )
        .unwrap()
    };
    Batch {
        x: (0..t).map(|_| mat(b, m, 1.0, 0.0)).collect(),
        z: (0..t).map(|_| mat(b, g, 1.0, 0.0)).collect(),
        sigma: mat(b, 1, 0.005, 0.02),
        r: (0..t).map(|_| mat(b, 1, 0.05, 0.0)).collect(),
        r_tilde: (0..t).map(|_| mat(b, 1, 2.0, 0.0)).collect(),
    }
}

fn c3_gradient_checks() -> Outcome {
    let g = QuantileGrid::new(vec![0.1, 0.5, 0.9]).unwrap();
    let mut worst = (0.0, String::new());
    let mut n = 0;
    for (kind, horizon) in [(ModelKind::Qlstm, 3), (ModelKind::Qdense, 1)] {
        for hidden in [Activation::Tanh, Activation::Elu, Activation::Sigmoid] {
            for market in [Activation::Identity, Activation::Sigmoid] {
                let model = TwoStageModel::new(tiny(kind, hidden, market), g.clone(), 3, 2, 11).unwrap();
                let batch = random_batch(3, horizon, 3, 2, 5);
                let (_, _, analytic) = model.gradients(&batch, None).unwrap();
                let numeric = numeric_grads(&model.params, 1e-6, |p| model.objective_with(p, &batch).unwrap());
                let (err, at) = max_relative_error(&analytic, &numeric, 1e-4);
                n += 1;
                if err >= worst.0 || err.is_nan() {
                    worst = (err, format!("{kind}/{hidden:?}/{market:?} {at}"));
                }
            }
        }
    }
    outcome(
        worst.0 < 1e-4,
        format!("{n} models, worst {:.2e} ({})", worst.0, worst.1),
    )
}

fn c4_lqr_recovery() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let y: Vec<f64> = (0..10_000).map(|_| StandardNormal.sample(&mut rng)).collect();
    let x = vec![Vec::new(); y.len()];
    let m = fit_lqr(
        &x,
        &y,
        &QuantileGrid::new(vec![0.1, 0.5, 0.9]).unwrap(),
        &LqrOptions::default(),
    )
    .unwrap();
    let q = m.predict(&[]).unwrap();
    let expect = [-1.2816, 0.0, 1.2816];
    let worst = q.iter().zip(expect).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    outcome(
        worst <= 0.06,
        format!("fitted {:.4} {:.4} {:.4}, max error {worst:.4}", q[0], q[1], q[2]),
    )
}

struct SynthRun {
    results: Vec<EvalResult>,
    forecasts: Vec<AssetForecasts>,
}

fn synthetic_run(dist: NoiseDist, dir: &Path) -> SynthRun {
    let opts = BatchOptions {
        per_distribution: 10,
        distributions: vec![dist],
        n_samples: 1000,
        ..BatchOptions::default()
    };
    let ds = batch_generate(&opts, 5).unwrap();
    let meta = pipeline::write_synth_dataset(&dir.join("synth"), &ds).unwrap();
    let assets = pipeline::ingest_meta(&meta).unwrap();
    let sets = pipeline::build_panel_sets(&assets, DEFAULT_LAMBDA).unwrap();
    let models = vec!["LQR".to_string(), "qLSTM".to_string()];
    let plan = TrainPlan {
        max_epochs: 20,
        models: models.clone(),
        ..TrainPlan::desk()
    };
    for (set, panels) in &sets {
        let trained = pipeline::train_set(panels, &plan, 5).unwrap();
        pipeline::write_models(&dir.join("models").join(set), &trained).unwrap();
    }
    let (results, forecasts) = pipeline::evaluate(&dir.join("models"), &sets, &models, EvalOptions::default()).unwrap();
    SynthRun { results, forecasts }
}

fn c5_model_ordering(runs: &[(NoiseDist, SynthRun)]) -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for (dist, run) in runs {
        let table = build_table(&run.results);
        let row = table.row(dist.group()).expect("group row");
        let loss = |name: &str| row.losses[table.models.iter().position(|m| m == name).unwrap()].unwrap();
        let (lqr, lstm) = (loss("LQR"), loss("qLSTM"));
        let ok = match dist {
            NoiseDist::Gamma | NoiseDist::Lognormal => lstm < lqr,
            NoiseDist::Normal | NoiseDist::Uniform => lqr <= 1.15 * lstm,
        };
        pass &= ok;
        parts.push(format!(
            "{} LQR {lqr:.5} qLSTM {lstm:.5}{}",
            dist.name(),
            if ok { "" } else { " (x)" }
        ));
    }
    outcome(pass, parts.join("; "))
}

fn c6_correlations() -> Outcome {
    let opts = BatchOptions {
        per_distribution: 10,
        n_samples: 1000,
        target_correlation: 0.7,
        ..BatchOptions::default()
    };
    let ds = batch_generate(&opts, 6).unwrap();
    let mut pass = true;
    let mut parts = Vec::new();
    for dist in NoiseDist::ALL {
        let (lo, hi) = match dist {
            NoiseDist::Uniform => (0.83, 0.88),
            _ => (0.64, 0.76),
        };
        let cs: Vec<f64> = ds
            .assets
            .iter()
            .filter(|a| a.distribution == dist)
            .map(|a| a.result.achieved_correlation)
            .collect();
        let min = cs.iter().copied().fold(f64::INFINITY, f64::min);
        let max = cs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        pass &= !cs.is_empty() && min >= lo && max <= hi;
        parts.push(format!("{} [{min:.4}, {max:.4}]", dist.name()));
    }
    outcome(pass, parts.join("; "))
}

fn c7_kde_contract(forecasts: &[AssetForecasts]) -> Outcome {
    let mut rows = 0;
    let mut bad = 0;
    let mut worst_shift: f64 = 0.0;
    for f in forecasts {
        for q in &f.quantiles {
            rows += 1;
            let d = quantiles_to_pdf(q, 200, 0.01).unwrap();
            let ok = d.pdf.iter().all(|p| *p >= 0.0)
                && d.cdf.windows(2).all(|w| w[0] <= w[1])
                && *d.cdf.last().unwrap() == 1.0;
            let shifted: Vec<f64> = q.iter().map(|v| v + 0.1).collect();
            let s = quantiles_to_pdf(&shifted, 200, 0.01).unwrap();
            for i in 0..200 {
                worst_shift = worst_shift
                    .max((s.grid[i] - d.grid[i] - 0.1).abs())
                    .max((s.pdf[i] - d.pdf[i]).abs() / d.pdf[i].max(1.0))
                    .max((s.cdf[i] - d.cdf[i]).abs());
            }
            if !ok {
                bad += 1;
            }
        }
    }
    // cumulative-sum cdf on 0.02 * Phi^-1(tau) + 0.001 (sklearn + numpy)
    let d = quantiles_to_pdf(&GOLDEN_Q, 200, 0.01).unwrap();
    let golden = [
        (37, 7.365128547415796, 0.18007898622417426),
        (100, 9.643894993211513, 0.5634984494896734),
        (150, 4.384986712151675, 0.8388389706279962),
    ];
    let golden_ok = golden
        .iter()
        .all(|&(i, p, c)| (d.pdf[i] - p).abs() < 1e-8 * p && (d.cdf[i] - c).abs() < 1e-8);
    outcome(
        rows > 0 && bad == 0 && worst_shift <= 1e-10 && golden_ok,
        format!(
            "{rows} forecast rows, {bad} violations, translation error {worst_shift:.1e}, golden {}",
            if golden_ok { "ok" } else { "mismatch" }
        ),
    )
}

fn c8_ewma() -> Outcome {
    let r: Vec<f64> = (0..301).map(|i| if i % 2 == 0 { 0.015 } else { -0.015 }).collect();
    let s = ewma_sigma(&r, DEFAULT_LAMBDA).unwrap();
    let err = (s[300] - 0.015).abs();
    outcome(
        err <= 1e-6 && DEFAULT_LAMBDA == 0.94,
        format!("sigma after 300 steps off by {err:.1e}, default lambda {DEFAULT_LAMBDA}"),
    )
}

fn c9_report_fidelity() -> Outcome {
    let row = |model: &str, loss: f64| EvalResult {
        model_name: model.into(),
        asset_id: "SPX".into(),
        asset_class: AssetClass::Sp500,
        group: AssetClass::Sp500.display_name().into(),
        quantile_loss: loss,
        n_windows: 1,
    };
    let table = build_table(&[row("LQR", 1.4832), row("qDense", 0.5969), row("qLSTM", 0.3284)]);
    let sp = table.row(AssetClass::Sp500.display_name()).expect("S&P row");
    let at = |name: &str| sp.diffs[table.diff_models.iter().position(|m| m == name).unwrap()].unwrap();
    let (dense, lqr) = (at("qDense"), at("LQR"));
    outcome(
        (dense.pct - 58.0).abs() <= 0.1 && (lqr.pct - 127.48).abs() <= 0.1,
        format!(
            "qDense - qLSTM {:.4} ({:.2}%), LQR - qLSTM {:.4} ({:.2}%)",
            dense.abs, dense.pct, lqr.abs, lqr.pct
        ),
    )
}

fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures")
}

fn run_fixture_pipeline(out: &Path) -> std::io::Result<std::process::Output> {
    Command::new(env!("CARGO_BIN_EXE_quantdist"))
        .env("SOURCE_DATE_EPOCH", "1700000000")
        .arg("--config")
        .arg(fixtures().join("pipeline.json"))
        .arg("--out")
        .arg(out)
        .arg("run")
        .arg("--meta")
        .arg(fixtures().join("real/assets.json"))
        .output()
}

fn c10_reproducibility(tmp: &Path) -> Outcome {
    let (a, b) = (tmp.join("a"), tmp.join("b"));
    for out in [&a, &b] {
        match run_fixture_pipeline(out) {
            Ok(o) if o.status.success() => {}
            Ok(o) => {
                return outcome(
                    false,
                    format!("pipeline failed: {}", String::from_utf8_lossy(&o.stderr)),
                )
            }
            Err(e) => return outcome(false, format!("could not start the binary: {e}")),
        }
    }
    let da = quantdist::manifest::digest_tree(&a).unwrap();
    let db = quantdist::manifest::digest_tree(&b).unwrap();
    let synth = da
        .iter()
        .filter(|d| d.path.starts_with("ingest/syn_") && !d.path.contains("mkt"))
        .count();
    let differing = da.iter().zip(&db).filter(|(x, y)| x != y).count() + da.len().abs_diff(db.len());
    outcome(
        differing == 0 && !da.is_empty(),
        format!(
            "{} files, {differing} differ ({synth} synthetic asset snapshots)",
            da.len()
        ),
    )
}

#[test]
fn acceptance() {
    let tmp = tempfile::tempdir().unwrap();
    let mut lines = Vec::new();
    let mut report = |n: usize, name: &str, o: Outcome| {
        let line = format!("{} {n:>2} {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        println!("{line}");
        lines.push((o.pass, line));
    };

    let timed = |f: &dyn Fn() -> Outcome, budget: u64| {
        let t = Instant::now();
        let o = f();
        within_budget(o, t.elapsed(), Duration::from_secs(budget))
    };
    report(1, "loss oracle", timed(&c1_loss_oracle, 1));
    report(2, "pinball optimality", timed(&c2_pinball_optimality, 30));
    report(3, "gradient checks", timed(&c3_gradient_checks, 60));
    report(4, "LQR recovery", timed(&c4_lqr_recovery, 60));

    let t = Instant::now();
    let runs: Vec<(NoiseDist, SynthRun)> = NoiseDist::ALL
        .iter()
        .map(|&d| (d, synthetic_run(d, &tmp.path().join(d.name()))))
        .collect();
    report(
        5,
        "model ordering",
        within_budget(c5_model_ordering(&runs), t.elapsed(), Duration::from_secs(20 * 60)),
    );
    report(6, "synthetic correlations", timed(&c6_correlations, 60));
    let forecasts: Vec<AssetForecasts> = runs.into_iter().flat_map(|(_, r)| r.forecasts).collect();
    report(7, "KDE contract", c7_kde_contract(&forecasts));
    report(8, "EWMA fixed point", c8_ewma());
    report(9, "report fidelity", c9_report_fidelity());
    report(10, "reproducibility", timed(&|| c10_reproducibility(tmp.path()), 600));

    let failed: Vec<&String> = lines.iter().filter(|(p, _)| !p).map(|(_, l)| l).collect();
    assert!(
        failed.is_empty(),
        "failing criteria:\n{}",
        failed.iter().map(|s| s.as_str()).collect::<Vec<_>>().join("\n")
    );
}
