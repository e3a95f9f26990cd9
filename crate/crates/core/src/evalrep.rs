//! Out-of-sample scoring on non-overlapping 22-day blocks, per-group
//! comparison tables and density figures.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use chrono::NaiveDate;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{self, AnchorRef, Panel, SeqRef};
use crate::dist::{self, DensityEstimate};
use crate::error::{QuantError, Result};
use crate::ingest::{AssetClass, SplitPart};
use crate::quantmodels::{Checkpoint, ModelArtifact, ModelKind, QuantileGrid, EVAL_HORIZON};
use crate::synth::NoiseDist;
use crate::train::normalize_panels;

/// Mean pinball loss over steps and quantiles, on raw returns only.
pub fn eval_quantile_loss(realized: &[f64], forecasts: &[Vec<f64>], grid: &QuantileGrid) -> Result<f64> {
    if realized.len() != forecasts.len() {
        return Err(QuantError::Dimension(format!(
            "{} realised returns for {} forecast rows",
            realized.len(),
            forecasts.len()
        )));
    }
    if realized.is_empty() {
        return Err(QuantError::Protocol("nothing to evaluate".into()));
    }
    let mut total = 0.0;
    for (y, q) in realized.iter().zip(forecasts) {
        total += crate::quantmodels::loss::pinball_row(*y, q, grid)?;
    }
    Ok(total / (realized.len() * grid.len()) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct EvalOptions {
    /// Score every step of a qLSTM window instead of only the 22-day-ahead one.
    pub per_step: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub model_name: String,
    pub asset_id: String,
    pub asset_class: AssetClass,
    pub group: String,
    pub quantile_loss: f64,
    pub n_windows: usize,
}

/// Scored forecasts of one model on one asset, one entry per scored step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssetForecasts {
    pub model_name: String,
    pub asset_id: String,
    pub group: String,
    pub dates: Vec<NaiveDate>,
    pub realized: Vec<f64>,
    pub quantiles: Vec<Vec<f64>>,
    /// Block each entry belongs to.
    pub window: Vec<usize>,
}

/// Anchor rows of the evaluation blocks of `range`: block `j` covers rows
/// `a + 22j .. a + 22(j + 1)` and is forecast from the rows up to the one
/// just before it. Trailing partial blocks are dropped.
pub fn block_anchors(range: std::ops::Range<usize>) -> Result<Vec<usize>> {
    if range.start < EVAL_HORIZON {
        return Err(QuantError::Protocol(format!(
            "test split starts at row {}, need {EVAL_HORIZON} earlier rows of input",
            range.start
        )));
    }
    let blocks = range.len() / EVAL_HORIZON;
    Ok((0..blocks).map(|j| range.start + EVAL_HORIZON * j - 1).collect())
}

fn check_columns(ckpt: &Checkpoint, panel: &Panel) -> Result<()> {
    if panel.header.feature_names != ckpt.feature_names || panel.header.market_names != ckpt.market_names {
        return Err(QuantError::Protocol(format!(
            "{}: feature columns differ from those {} was trained on",
            panel.header.asset_id, ckpt.name
        )));
    }
    Ok(())
}

fn forecast_panel(ckpt: &Checkpoint, panels: &[Panel], p: usize, opts: EvalOptions) -> Result<AssetForecasts> {
    let panel = &panels[p];
    check_columns(ckpt, panel)?;
    let anchors = block_anchors(panel.part_range(SplitPart::Test)?)?;
    let mut out = AssetForecasts {
        model_name: ckpt.name.clone(),
        asset_id: panel.header.asset_id.clone(),
        group: panel.header.group.clone(),
        dates: Vec::new(),
        realized: Vec::new(),
        quantiles: Vec::new(),
        window: Vec::new(),
    };
    if anchors.is_empty() {
        return Ok(out);
    }
    let mut push = |j: usize, row: usize, q: Vec<f64>| {
        out.dates.push(panel.rows[row].date);
        out.realized.push(panel.rows[row].r);
        out.quantiles.push(q);
        out.window.push(j);
    };
    match &ckpt.model {
        ModelArtifact::Lqr(m) => {
            for (j, &t) in anchors.iter().enumerate() {
                push(j, t + EVAL_HORIZON, m.predict(&panel.rows[t].x)?);
            }
        }
        ModelArtifact::TwoStage(m) => match m.config.kind {
            ModelKind::Qlstm => {
                let refs: Vec<SeqRef> = anchors
                    .iter()
                    .map(|&t| SeqRef {
                        panel: p,
                        start: t + 1 - EVAL_HORIZON,
                        len: EVAL_HORIZON,
                    })
                    .collect();
                let pred = m.predict(&dataset::sequence_batch(panels, &refs, false)?)?;
                for (j, &t) in anchors.iter().enumerate() {
                    let (_, raw) = pred.forecasts(j);
                    let steps: Vec<usize> = if opts.per_step {
                        (0..EVAL_HORIZON).collect()
                    } else {
                        vec![EVAL_HORIZON - 1]
                    };
                    for k in steps {
                        push(j, t + 1 + k, raw.rows[k].clone());
                    }
                }
            }
            ModelKind::Qdense => {
                let refs: Vec<AnchorRef> = anchors.iter().map(|&t| AnchorRef { panel: p, t }).collect();
                let pred = m.predict(&dataset::anchor_batch(panels, &refs, false)?)?;
                for (j, &t) in anchors.iter().enumerate() {
                    let (_, raw) = pred.forecasts(j);
                    push(j, t + EVAL_HORIZON, raw.rows[0].clone());
                }
            }
        },
    }
    Ok(out)
}

/// Forecasts and scores every asset's test blocks with one checkpoint.
pub fn run_protocol(
    ckpt: &Checkpoint,
    raw: &[Panel],
    opts: EvalOptions,
) -> Result<(Vec<EvalResult>, Vec<AssetForecasts>)> {
    let panels = normalize_panels(raw, ckpt.norm_window)?;
    let forecasts: Vec<AssetForecasts> = (0..panels.len())
        .into_par_iter()
        .map(|p| forecast_panel(ckpt, &panels, p, opts))
        .collect::<Result<_>>()?;
    let mut results = Vec::with_capacity(forecasts.len());
    for (f, panel) in forecasts.iter().zip(&panels) {
        if f.realized.is_empty() {
            return Err(QuantError::Protocol(format!(
                "{}: test split shorter than one {EVAL_HORIZON}-day block",
                f.asset_id
            )));
        }
        results.push(EvalResult {
            model_name: ckpt.name.clone(),
            asset_id: f.asset_id.clone(),
            asset_class: panel.header.asset_class,
            group: f.group.clone(),
            quantile_loss: eval_quantile_loss(&f.realized, &f.quantiles, &ckpt.grid)?,
            n_windows: f.window.last().map_or(0, |w| w + 1),
        });
    }
    Ok((results, forecasts))
}

/// Loads `{name}.json` for each model, failing if any is absent.
pub fn load_checkpoints(dir: &Path, names: &[&str]) -> Result<Vec<Checkpoint>> {
    names
        .iter()
        .map(|n| {
            let path = dir.join(format!("{n}.json"));
            if !path.exists() {
                return Err(QuantError::Lookup {
                    kind: "checkpoint",
                    name: path.display().to_string(),
                });
            }
            Checkpoint::load(&path)
        })
        .collect()
}

/// Mean percentage difference in percent.
pub fn pct_diff(a: f64, b: f64) -> f64 {
    (a - b) / ((a + b) / 2.0) * 100.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RowKind {
    Group,
    MarketMean,
    SyntheticMean,
    TotalMean,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Diff {
    pub abs: f64,
    pub pct: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub label: String,
    pub kind: RowKind,
    /// Per model, in `ComparisonTable::models` order.
    pub losses: Vec<Option<f64>>,
    /// Per entry of `ComparisonTable::diff_models`: that model minus the reference.
    pub diffs: Vec<Option<Diff>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub models: Vec<String>,
    pub reference: Option<String>,
    pub diff_models: Vec<String>,
    pub rows: Vec<TableRow>,
}

const MODEL_ORDER: [&str; 3] = ["LQR", "qDense", "qLSTM"];

fn model_rank(name: &str) -> (usize, String) {
    (
        MODEL_ORDER.iter().position(|m| *m == name).unwrap_or(MODEL_ORDER.len()),
        name.to_string(),
    )
}

fn group_rank(group: &str, class: AssetClass) -> (bool, usize, String) {
    let synthetic = class == AssetClass::Synthetic;
    let pos = if synthetic {
        NoiseDist::ALL
            .iter()
            .position(|d| d.group() == group)
            .unwrap_or(NoiseDist::ALL.len())
    } else {
        class.index()
    };
    (synthetic, pos, group.to_string())
}

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

/// Per-asset losses averaged within each group, then groups averaged into
/// market, synthetic and overall rows. The reference for the difference
/// columns is qLSTM when present, else the last model.
pub fn build_table(results: &[EvalResult]) -> ComparisonTable {
    let mut models: Vec<String> = results.iter().map(|r| r.model_name.clone()).collect();
    models.sort_by_key(|m| model_rank(m));
    models.dedup();

    let mut groups: BTreeMap<(bool, usize, String), BTreeMap<&str, Vec<f64>>> = BTreeMap::new();
    for r in results {
        groups
            .entry(group_rank(&r.group, r.asset_class))
            .or_default()
            .entry(r.model_name.as_str())
            .or_default()
            .push(r.quantile_loss);
    }

    let reference = if models.len() > 1 {
        models.iter().find(|m| *m == "qLSTM").or(models.last()).cloned()
    } else {
        None
    };
    let diff_models: Vec<String> = match &reference {
        Some(r) => models.iter().filter(|m| *m != r).cloned().collect(),
        None => Vec::new(),
    };
    let make_row = |label: String, kind: RowKind, losses: Vec<Option<f64>>| {
        let ref_loss = reference
            .as_ref()
            .and_then(|r| models.iter().position(|m| m == r))
            .and_then(|i| losses[i]);
        let diffs = diff_models
            .iter()
            .map(|m| {
                let i = models.iter().position(|x| x == m)?;
                let (a, b) = (losses[i]?, ref_loss?);
                Some(Diff {
                    abs: a - b,
                    pct: pct_diff(a, b),
                })
            })
            .collect();
        TableRow {
            label,
            kind,
            losses,
            diffs,
        }
    };

    let mut rows = Vec::new();
    let mut market: Vec<Vec<f64>> = vec![Vec::new(); models.len()];
    let mut synthetic: Vec<Vec<f64>> = vec![Vec::new(); models.len()];
    for ((is_synth, _, label), by_model) in &groups {
        let losses: Vec<Option<f64>> = models
            .iter()
            .map(|m| by_model.get(m.as_str()).and_then(|v| mean(v)))
            .collect();
        for (i, l) in losses.iter().enumerate() {
            if let Some(l) = l {
                if *is_synth {
                    synthetic[i].push(*l);
                } else {
                    market[i].push(*l);
                }
            }
        }
        rows.push(make_row(label.clone(), RowKind::Group, losses));
    }
    let has_market = groups.keys().any(|k| !k.0);
    let has_synth = groups.keys().any(|k| k.0);
    if has_market {
        rows.push(make_row(
            "Total Market Mean".into(),
            RowKind::MarketMean,
            market.iter().map(|v| mean(v)).collect(),
        ));
    }
    if has_synth {
        rows.push(make_row(
            "Total Synthetic Mean".into(),
            RowKind::SyntheticMean,
            synthetic.iter().map(|v| mean(v)).collect(),
        ));
    }
    let all: Vec<Option<f64>> = market
        .iter()
        .zip(&synthetic)
        .map(|(a, b)| mean(&[a.as_slice(), b.as_slice()].concat()))
        .collect();
    rows.push(make_row("Total Mean".into(), RowKind::TotalMean, all));

    ComparisonTable {
        models,
        reference,
        diff_models,
        rows,
    }
}

fn fmt_loss(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.4}")).unwrap_or_default()
}

fn fmt_diff(d: Option<Diff>) -> String {
    d.map(|d| format!("{:.4} ({:.2}%)", d.abs, d.pct)).unwrap_or_default()
}

impl ComparisonTable {
    fn diff_headers(&self) -> Vec<String> {
        let r = self.reference.clone().unwrap_or_default();
        self.diff_models.iter().map(|m| format!("{m} - {r}")).collect()
    }

    pub fn row(&self, label: &str) -> Option<&TableRow> {
        self.rows.iter().find(|r| r.label == label)
    }

    /// Full-precision CSV with separate absolute and percentage columns.
    pub fn to_csv(&self) -> String {
        let mut header = vec!["group".to_string()];
        header.extend(self.models.iter().cloned());
        for h in self.diff_headers() {
            header.push(h.clone());
            header.push(format!("{h} (%)"));
        }
        let mut w = csv::Writer::from_writer(Vec::new());
        let _ = w.write_record(&header);
        for row in &self.rows {
            let mut rec = vec![row.label.clone()];
            rec.extend(row.losses.iter().map(|l| l.map(|x| x.to_string()).unwrap_or_default()));
            for d in &row.diffs {
                rec.push(d.map(|d| d.abs.to_string()).unwrap_or_default());
                rec.push(d.map(|d| d.pct.to_string()).unwrap_or_default());
            }
            let _ = w.write_record(&rec);
        }
        String::from_utf8(w.into_inner().unwrap_or_default()).unwrap_or_default()
    }

    /// Markdown with four decimals; the best loss in each row is bold.
    pub fn to_markdown(&self) -> String {
        let mut header = vec![String::new()];
        header.extend(self.models.iter().cloned());
        header.extend(self.diff_headers());
        let mut s = format!("| {} |\n", header.join(" | "));
        let _ = writeln!(s, "|{}", "---|".repeat(header.len()));
        for row in &self.rows {
            let best = row.losses.iter().flatten().copied().fold(f64::INFINITY, f64::min);
            let mut cells = vec![format!("**{}**", row.label)];
            cells.extend(row.losses.iter().map(|l| match l {
                Some(x) if *x == best && self.models.len() > 1 => format!("**{x:.4}**"),
                _ => fmt_loss(*l),
            }));
            cells.extend(row.diffs.iter().map(|d| fmt_diff(*d)));
            let _ = writeln!(s, "| {} |", cells.join(" | "));
        }
        s
    }
}

/// Densities of the first `max_windows` scored forecasts of one asset.
pub fn density_evolution(f: &AssetForecasts, max_windows: usize) -> Result<Vec<(String, DensityEstimate)>> {
    f.quantiles
        .iter()
        .zip(&f.dates)
        .take(max_windows)
        .filter(|(q, _)| q.first() != q.last())
        .map(|(q, d)| {
            Ok((
                d.to_string(),
                dist::quantiles_to_pdf(q, dist::GRID_POINTS, dist::BANDWIDTH)?,
            ))
        })
        .collect()
}

pub fn density_figure(f: &AssetForecasts, max_windows: usize) -> Result<String> {
    let title = format!("{} {} forecast densities", f.model_name, f.asset_id);
    Ok(dist::density_svg(&title, &density_evolution(f, max_windows)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::tests::raw_panels;
    use crate::quantmodels::{preset, LqrOptions, QuantileGrid};
    use crate::train::{fit_network, TrainSpec};

    fn result(model: &str, group: &str, class: AssetClass, loss: f64) -> EvalResult {
        EvalResult {
            model_name: model.into(),
            asset_id: format!("{group}-{loss}"),
            asset_class: class,
            group: group.into(),
            quantile_loss: loss,
            n_windows: 1,
        }
    }

    #[test]
    fn eval_loss_examples() {
        let g = QuantileGrid::new(vec![0.5]).unwrap();
        assert_eq!(
            eval_quantile_loss(&[0.3, -0.1], &[vec![0.3], vec![-0.1]], &g).unwrap(),
            0.0
        );
        let l = eval_quantile_loss(&[0.2, -0.2], &[vec![0.0], vec![0.0]], &g).unwrap();
        assert!((l - 0.1).abs() < 1e-15);
        let twice = eval_quantile_loss(&[0.2, 0.2, -0.2, -0.2], &vec![vec![0.0]; 4], &g).unwrap();
        assert!((twice - l).abs() < 1e-15);
        assert!(matches!(
            eval_quantile_loss(&[0.1], &[vec![0.0, 0.1]], &g),
            Err(QuantError::Dimension(_))
        ));
    }

    #[test]
    fn eval_loss_ignores_quantile_order() {
        let g = QuantileGrid::new(vec![0.1, 0.5, 0.9]).unwrap();
        let r = [0.01, -0.03, 0.02];
        let q = vec![vec![-0.02, 0.0, 0.03], vec![-0.04, 0.01, 0.02], vec![-0.01, 0.0, 0.01]];
        let a = eval_quantile_loss(&r, &q, &g).unwrap();
        let mut b = 0.0;
        for (y, row) in r.iter().zip(&q) {
            for k in [2, 0, 1] {
                b += ndgrad::pinball(g.taus()[k], y - row[k]);
            }
        }
        assert!((a - b / 9.0).abs() < 1e-15);
    }

    #[test]
    fn empirical_quantiles_beat_constants() {
        let g = QuantileGrid::default();
        let r: Vec<f64> = (0..60).map(|i| ((i * 37 % 61) as f64 - 30.0) / 500.0).collect();
        let sorted = crate::stats::sorted(&r);
        let emp: Vec<f64> = g
            .taus()
            .iter()
            .map(|&t| crate::stats::empirical_quantile(&sorted, t))
            .collect();
        let best = eval_quantile_loss(&r, &vec![emp.clone(); r.len()], &g).unwrap();
        for k in 0..g.len() {
            for delta in [-0.01, -0.001, 0.001, 0.01] {
                let mut other = emp.clone();
                other[k] += delta;
                let l = eval_quantile_loss(&r, &vec![other; r.len()], &g).unwrap();
                assert!(best <= l + 1e-15);
            }
        }
    }

    #[test]
    fn block_counts() {
        assert_eq!(block_anchors(100..166).unwrap(), vec![99, 121, 143]);
        assert_eq!(block_anchors(100..187).unwrap().len(), 3);
        assert!(block_anchors(100..121).unwrap().is_empty());
        assert!(matches!(block_anchors(10..100), Err(QuantError::Protocol(_))));
    }

    #[test]
    fn pct_diff_examples() {
        assert!((pct_diff(0.6, 0.4) - 40.0).abs() < 1e-12);
        assert_eq!(pct_diff(0.3, 0.7), -pct_diff(0.7, 0.3));
    }

    #[test]
    fn table_layout() {
        let rs = vec![
            result("qLSTM", "S&P 500", AssetClass::Sp500, 0.4),
            result("qDense", "S&P 500", AssetClass::Sp500, 0.6),
            result("qLSTM", "S&P 500", AssetClass::Sp500, 0.2),
            result("qDense", "S&P 500", AssetClass::Sp500, 0.6),
            result("qLSTM", "Gamma Synthetic", AssetClass::Synthetic, 0.5),
            result("qDense", "Gamma Synthetic", AssetClass::Synthetic, 0.5),
            result("qLSTM", "Normal Synthetic", AssetClass::Synthetic, 0.1),
            result("qDense", "Normal Synthetic", AssetClass::Synthetic, 0.3),
        ];
        let t = build_table(&rs);
        assert_eq!(t.models, vec!["qDense", "qLSTM"]);
        assert_eq!(t.reference.as_deref(), Some("qLSTM"));
        let labels: Vec<&str> = t.rows.iter().map(|r| r.label.as_str()).collect();
        assert_eq!(
            labels,
            [
                "S&P 500",
                "Normal Synthetic",
                "Gamma Synthetic",
                "Total Market Mean",
                "Total Synthetic Mean",
                "Total Mean"
            ]
        );
        let sp = t.row("S&P 500").unwrap();
        assert!((sp.losses[1].unwrap() - 0.3).abs() < 1e-12);
        let d = sp.diffs[0].unwrap();
        assert!((d.abs - 0.3).abs() < 1e-12 && (d.pct - pct_diff(0.6, 0.3)).abs() < 1e-12);
        let syn = t.row("Total Synthetic Mean").unwrap();
        assert!((syn.losses[1].unwrap() - 0.3).abs() < 1e-12);
        let total = t.row("Total Mean").unwrap();
        assert!((total.losses[1].unwrap() - 0.3).abs() < 1e-12);
        assert!(t.to_markdown().contains("qDense - qLSTM"));
        assert_eq!(t.to_csv().lines().count(), 7);
    }

    #[test]
    fn single_model_has_no_diffs() {
        let t = build_table(&[result("LQR", "S&P 500", AssetClass::Sp500, 0.4)]);
        assert!(t.reference.is_none());
        assert!(t.rows.iter().all(|r| r.diffs.is_empty() && r.losses[0].is_some()));
        assert_eq!(t.rows.len(), 3);
    }

    fn lqr_checkpoint(raw: &[Panel]) -> Checkpoint {
        crate::train::fit_lqr_baseline(raw, 10, 1, &LqrOptions::default()).unwrap()
    }

    #[test]
    fn protocol_is_deterministic_and_aggregates() {
        let raw = raw_panels(400);
        let ckpt = lqr_checkpoint(&raw);
        let (a, fa) = run_protocol(&ckpt, &raw, EvalOptions::default()).unwrap();
        let (b, _) = run_protocol(&ckpt, &raw, EvalOptions::default()).unwrap();
        assert_eq!(a, b);
        for (r, f) in a.iter().zip(&fa) {
            let test = raw[0].part_range(SplitPart::Test).unwrap();
            assert_eq!(r.n_windows, test.len() / 22);
            assert_eq!(f.realized.len(), r.n_windows);
        }
        let t = build_table(&a);
        let g = t.row("g").unwrap().losses[0].unwrap();
        assert!((g - (a[0].quantile_loss + a[1].quantile_loss) / 2.0).abs() < 1e-15);
    }

    fn network_checkpoint(raw: &[Panel], name: &str) -> Checkpoint {
        let mut spec = TrainSpec::new(preset(name).unwrap(), 3);
        spec.config.norm_window = 10;
        spec.max_epochs = 2;
        spec.patience = 1;
        fit_network(raw, &spec).unwrap().0
    }

    #[test]
    fn network_protocols() {
        let raw = raw_panels(400);
        let blocks = raw[0].part_range(SplitPart::Test).unwrap().len() / 22;
        for name in ["qlstm_desk", "qdense_desk"] {
            let ckpt = network_checkpoint(&raw, name);
            let (r, f) = run_protocol(&ckpt, &raw, EvalOptions::default()).unwrap();
            assert_eq!(r[0].n_windows, blocks);
            assert_eq!(f[0].realized.len(), blocks);
            assert!(r.iter().all(|x| x.quantile_loss.is_finite() && x.quantile_loss >= 0.0));
            assert!(f[0].quantiles.iter().all(|q| q.windows(2).all(|w| w[0] <= w[1])));
            let (_, per) = run_protocol(&ckpt, &raw, EvalOptions { per_step: true }).unwrap();
            let expect = if ckpt.name == "qLSTM" { 22 * blocks } else { blocks };
            assert_eq!(per[0].realized.len(), expect);
            // terminal step of each window is the single-step forecast
            if ckpt.name == "qLSTM" {
                assert_eq!(per[0].quantiles[21], f[0].quantiles[0]);
                assert_eq!(per[0].dates[21], f[0].dates[0]);
            }
            assert!(density_figure(&f[0], 5).unwrap().contains("polyline"));
        }
    }

    #[test]
    fn column_mismatch_is_a_protocol_error() {
        let raw = raw_panels(400);
        let mut ckpt = lqr_checkpoint(&raw);
        ckpt.market_names.pop();
        assert!(matches!(
            run_protocol(&ckpt, &raw, EvalOptions::default()),
            Err(QuantError::Protocol(_))
        ));
    }

    #[test]
    fn missing_checkpoint_is_a_lookup_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(
            load_checkpoints(dir.path(), &["qLSTM"]),
            Err(QuantError::Lookup { kind: "checkpoint", .. })
        ));
    }
}
