//! Date-aligned per-asset panels and the training / evaluation samples cut
//! from them.
//!
//! Row `t` of a panel holds the normalised asset features `x_t` (with the
//! group volatility as an extra column), the normalised market features
//! `z_t`, the log return `r_t` and the group volatility `sigma_bar_t`. A model
//! looking at rows `..=t` rescales its forecasts with `sigma_bar_{t+1}`, which
//! only depends on returns up to `t`.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::ops::Range;
use std::path::Path;

use chrono::NaiveDate;
use ndgrad::Tensor;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{QuantError, Result};
use crate::features::{self, FeatureMatrix, NormalizerState};
use crate::ingest::{self, AssetClass, PriceSeries, SplitPart, SplitSpec};
use crate::quantmodels::network::Batch;
use crate::quantmodels::{DENSE_LOOKBACK, EVAL_HORIZON};
use crate::vol::GroupVol;

pub const SIGMA_BAR_FEATURE: &str = "sigma_bar";
/// Chronological fractions used when an asset has no calendar split.
pub const FRACTION_SPLIT: (f64, f64) = (0.6, 0.2);

/// Calendar split for market data; synthetic assets are split by row
/// fractions of their raw panel, fixed as dates so every normalisation window
/// sees the same boundaries.
pub fn split_for(class: AssetClass, dates: &[NaiveDate]) -> Result<SplitSpec> {
    match class {
        AssetClass::Synthetic => SplitSpec::from_fractions(dates, FRACTION_SPLIT.0, FRACTION_SPLIT.1),
        _ => Ok(SplitSpec::default()),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PanelHeader {
    pub asset_id: String,
    pub asset_class: AssetClass,
    pub group: String,
    pub split: SplitSpec,
    pub feature_names: Vec<String>,
    pub market_names: Vec<String>,
    /// Rolling z-score window already applied, if any.
    pub norm_window: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PanelRow {
    pub date: NaiveDate,
    pub x: Vec<f64>,
    pub z: Vec<f64>,
    pub r: f64,
    pub sigma_bar: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Panel {
    pub header: PanelHeader,
    pub rows: Vec<PanelRow>,
}

impl Panel {
    /// Engineers features for `series`, appends the group volatility column
    /// and inner-joins with the raw market matrix and returns.
    pub fn build(series: &PriceSeries, group: &str, group_vol: &GroupVol, market: &FeatureMatrix) -> Result<Self> {
        let mut feats = features::engineer(series)?;
        let sigma = group_vol.lookup();
        let returns: BTreeMap<NaiveDate, f64> = ingest::log_returns(series)?.into_iter().collect();
        let market_rows: BTreeMap<NaiveDate, &Vec<f64>> = market.dates.iter().copied().zip(&market.values).collect();

        let keep: std::collections::BTreeSet<NaiveDate> = feats
            .dates
            .iter()
            .copied()
            .filter(|d| sigma.contains_key(d) && returns.contains_key(d) && market_rows.contains_key(d))
            .collect();
        if keep.is_empty() {
            return Err(QuantError::Alignment(format!(
                "{}: no dates shared by features, market data and group volatility",
                series.asset_id
            )));
        }
        feats = feats.select_dates(&keep);
        let sig: Vec<f64> = feats.dates.iter().map(|d| sigma[d]).collect();
        feats.push_column(SIGMA_BAR_FEATURE, &sig)?;

        let rows = feats
            .dates
            .iter()
            .zip(feats.values)
            .map(|(d, x)| PanelRow {
                date: *d,
                x,
                z: market_rows[d].clone(),
                r: returns[d],
                sigma_bar: sigma[d],
            })
            .collect();
        Ok(Self {
            header: PanelHeader {
                asset_id: series.asset_id.clone(),
                asset_class: series.asset_class,
                group: group.to_string(),
                split: split_for(series.asset_class, &feats.dates)?,
                feature_names: feats.feature_names,
                market_names: market.feature_names.clone(),
                norm_window: None,
            },
            rows,
        })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn dates(&self) -> Vec<NaiveDate> {
        self.rows.iter().map(|r| r.date).collect()
    }

    fn matrix(&self, names: &[String], categorical: Vec<bool>, pick: impl Fn(&PanelRow) -> &Vec<f64>) -> FeatureMatrix {
        FeatureMatrix {
            feature_names: names.to_vec(),
            categorical,
            dates: self.dates(),
            values: self.rows.iter().map(|r| pick(r).clone()).collect(),
        }
    }

    /// Rolling z-scores of both feature blocks; the first `window - 1` rows go.
    pub fn normalized(&self, window: usize) -> Result<Self> {
        if self.header.norm_window.is_some() {
            return Err(QuantError::Validation(format!(
                "{}: panel is already normalised",
                self.header.asset_id
            )));
        }
        let state = NormalizerState::new(window)?;
        let class_cols = features::feature_names().len() - features::NUMERIC_FEATURES.len();
        let categorical: Vec<bool> = self
            .header
            .feature_names
            .iter()
            .map(|n| n.starts_with("class_"))
            .collect();
        debug_assert_eq!(categorical.iter().filter(|c| **c).count(), class_cols);
        let x = features::normalize(&self.matrix(&self.header.feature_names, categorical, |r| &r.x), &state)?;
        let z = features::normalize(
            &self.matrix(
                &self.header.market_names,
                vec![false; self.header.market_names.len()],
                |r| &r.z,
            ),
            &state,
        )?;
        let rows = self.rows[window - 1..]
            .iter()
            .zip(x.values)
            .zip(z.values)
            .map(|((row, x), z)| PanelRow {
                date: row.date,
                x,
                z,
                r: row.r,
                sigma_bar: row.sigma_bar,
            })
            .collect();
        Ok(Self {
            header: PanelHeader {
                norm_window: Some(window),
                ..self.header.clone()
            },
            rows,
        })
    }

    /// Contiguous row range of one split part (empty if the part has no rows).
    pub fn part_range(&self, part: SplitPart) -> Result<Range<usize>> {
        let spec = self.header.split;
        spec.validate()?;
        let idx: Vec<usize> = (0..self.len())
            .filter(|&i| spec.part_of(self.rows[i].date) == Some(part))
            .collect();
        Ok(match (idx.first(), idx.last()) {
            (Some(&a), Some(&b)) => a..b + 1,
            _ => 0..0,
        })
    }

    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| QuantError::io(path, e))?;
        let mut w = BufWriter::new(file);
        let io = |e| QuantError::io(path, e);
        writeln!(w, "{}", serde_json::to_string(&self.header)?).map_err(io)?;
        for row in &self.rows {
            writeln!(w, "{}", serde_json::to_string(row)?).map_err(io)?;
        }
        w.flush().map_err(io)
    }

    pub fn read_jsonl(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| QuantError::io(path, e))?;
        let mut lines = BufReader::new(file).lines();
        let first = lines
            .next()
            .ok_or_else(|| QuantError::Validation(format!("{}: empty panel file", path.display())))?
            .map_err(|e| QuantError::io(path, e))?;
        let header: PanelHeader = serde_json::from_str(&first)?;
        let mut rows = Vec::new();
        for line in lines {
            let line = line.map_err(|e| QuantError::io(path, e))?;
            if !line.trim().is_empty() {
                rows.push(serde_json::from_str(&line)?);
            }
        }
        Ok(Self { header, rows })
    }
}

/// A qLSTM sample: inputs `start..start+len`, targets the `len` rows after.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeqRef {
    pub panel: usize,
    pub start: usize,
    pub len: usize,
}

/// A fixed-window sample anchored at row `t`; the target is row `t + 22`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnchorRef {
    pub panel: usize,
    pub t: usize,
}

/// Variable-length sequences tiled inside one split part of every panel.
/// Each panel gets its own stream derived from `seed`.
pub fn sequence_refs(panels: &[Panel], part: SplitPart, seed: u64) -> Result<Vec<SeqRef>> {
    let mut out = Vec::new();
    for (p, panel) in panels.iter().enumerate() {
        let range = panel.part_range(part)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (p as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        out.extend(
            ingest::partition_windows(range.start, range.end, &mut rng)
                .into_iter()
                .map(|(start, len)| SeqRef { panel: p, start, len }),
        );
    }
    Ok(out)
}

/// Every anchor whose input window and target stay inside the split part.
pub fn anchor_refs(panels: &[Panel], part: SplitPart) -> Result<Vec<AnchorRef>> {
    let mut out = Vec::new();
    for (p, panel) in panels.iter().enumerate() {
        let range = panel.part_range(part)?;
        let first = range.start + DENSE_LOOKBACK - 1;
        let end = range.end.saturating_sub(EVAL_HORIZON);
        out.extend((first..end).map(|t| AnchorRef { panel: p, t }));
    }
    Ok(out)
}

fn column(values: Vec<f64>) -> Tensor {
    Tensor::column(values)
}

fn rows_tensor(rows: Vec<Vec<f64>>) -> Result<Tensor> {
    Ok(Tensor::from_rows(&rows)?)
}

fn target_pair(panel: &Panel, row: usize) -> Result<(f64, f64)> {
    let r = panel
        .rows
        .get(row)
        .ok_or_else(|| QuantError::Window(format!("{}: target row {row} beyond the panel", panel.header.asset_id)))?;
    Ok((r.r, r.r / r.sigma_bar))
}

/// Sequence batch. Targets are filled when `with_targets` is set.
pub fn sequence_batch(panels: &[Panel], refs: &[SeqRef], with_targets: bool) -> Result<Batch> {
    let len = refs
        .first()
        .map(|s| s.len)
        .ok_or_else(|| QuantError::Batching("empty batch".into()))?;
    if refs.iter().any(|s| s.len != len) {
        return Err(QuantError::Batching("sequence lengths differ within a batch".into()));
    }
    let mut x = Vec::with_capacity(len);
    let mut z = Vec::with_capacity(len);
    let mut r = Vec::new();
    let mut rt = Vec::new();
    for k in 0..len {
        x.push(rows_tensor(
            refs.iter()
                .map(|s| panels[s.panel].rows[s.start + k].x.clone())
                .collect(),
        )?);
        z.push(rows_tensor(
            refs.iter()
                .map(|s| panels[s.panel].rows[s.start + k].z.clone())
                .collect(),
        )?);
        if with_targets {
            let pairs: Vec<(f64, f64)> = refs
                .iter()
                .map(|s| target_pair(&panels[s.panel], s.start + len + k))
                .collect::<Result<_>>()?;
            r.push(column(pairs.iter().map(|p| p.0).collect()));
            rt.push(column(pairs.iter().map(|p| p.1).collect()));
        }
    }
    let sigma = refs
        .iter()
        .map(|s| {
            panels[s.panel]
                .rows
                .get(s.start + len)
                .map(|row| row.sigma_bar)
                .ok_or_else(|| QuantError::Window("no volatility after the input window".into()))
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(Batch {
        x,
        z,
        sigma: column(sigma),
        r,
        r_tilde: rt,
    })
}

/// Fixed-window batch: one step whose input is the flattened 22-row window.
pub fn anchor_batch(panels: &[Panel], refs: &[AnchorRef], with_targets: bool) -> Result<Batch> {
    if refs.is_empty() {
        return Err(QuantError::Batching("empty batch".into()));
    }
    let flat = |a: &AnchorRef, pick: fn(&PanelRow) -> &Vec<f64>| -> Result<Vec<f64>> {
        if a.t + 1 < DENSE_LOOKBACK {
            return Err(QuantError::Window(format!(
                "anchor {} has fewer than {DENSE_LOOKBACK} input rows",
                a.t
            )));
        }
        Ok(panels[a.panel].rows[a.t + 1 - DENSE_LOOKBACK..=a.t]
            .iter()
            .flat_map(|row| pick(row).iter().copied())
            .collect())
    };
    let x = rows_tensor(refs.iter().map(|a| flat(a, |r| &r.x)).collect::<Result<_>>()?)?;
    let z = rows_tensor(refs.iter().map(|a| flat(a, |r| &r.z)).collect::<Result<_>>()?)?;
    let sigma = refs
        .iter()
        .map(|a| {
            panels[a.panel]
                .rows
                .get(a.t + 1)
                .map(|row| row.sigma_bar)
                .ok_or_else(|| QuantError::Window("no volatility after the anchor".into()))
        })
        .collect::<Result<Vec<f64>>>()?;
    let (r, r_tilde) = if with_targets {
        let pairs: Vec<(f64, f64)> = refs
            .iter()
            .map(|a| target_pair(&panels[a.panel], a.t + EVAL_HORIZON))
            .collect::<Result<_>>()?;
        (
            vec![column(pairs.iter().map(|p| p.0).collect())],
            vec![column(pairs.iter().map(|p| p.1).collect())],
        )
    } else {
        (Vec::new(), Vec::new())
    };
    Ok(Batch {
        x: vec![x],
        z: vec![z],
        sigma: column(sigma),
        r,
        r_tilde,
    })
}

/// Groups sequences by length and chunks each group into batches.
pub fn sequence_batches(panels: &[Panel], refs: &[SeqRef], batch_size: usize) -> Result<Vec<Batch>> {
    let mut by_len: BTreeMap<usize, Vec<SeqRef>> = BTreeMap::new();
    for s in refs {
        by_len.entry(s.len).or_default().push(*s);
    }
    let mut out = Vec::new();
    for group in by_len.values() {
        for chunk in group.chunks(batch_size.max(1)) {
            out.push(sequence_batch(panels, chunk, true)?);
        }
    }
    Ok(out)
}

/// Shuffles anchors once with `seed`, then chunks them into batches.
pub fn anchor_batches(panels: &[Panel], refs: &[AnchorRef], batch_size: usize, seed: u64) -> Result<Vec<Batch>> {
    let mut refs = refs.to_vec();
    refs.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    refs.chunks(batch_size.max(1))
        .map(|chunk| anchor_batch(panels, chunk, true))
        .collect()
}

/// Design matrix for LQR: anchor features and the return 22 rows later.
pub fn lqr_design(panels: &[Panel], refs: &[AnchorRef]) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
    let mut x = Vec::with_capacity(refs.len());
    let mut y = Vec::with_capacity(refs.len());
    for a in refs {
        let panel = &panels[a.panel];
        x.push(panel.rows[a.t].x.clone());
        y.push(target_pair(panel, a.t + EVAL_HORIZON)?.0);
    }
    Ok((x, y))
}

/// Normalised returns over one split part of every panel, sorted.
pub fn normalized_returns(panels: &[Panel], part: SplitPart) -> Result<Vec<f64>> {
    let mut out = Vec::new();
    for panel in panels {
        for row in &panel.rows[panel.part_range(part)?] {
            out.push(row.r / row.sigma_bar);
        }
    }
    out.sort_by(f64::total_cmp);
    Ok(out)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::features::market_features;
    use crate::ingest::{MarketKind, PriceRow};
    use crate::vol::{ewma_vol, group_vol};
    use rand::Rng;

    pub(crate) fn random_series(id: &str, class: AssetClass, n: usize, seed: u64) -> PriceSeries {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let start = NaiveDate::from_ymd_opt(2010, 1, 4).unwrap();
        let mut p = 100.0;
        let rows = (0..n)
            .map(|i| {
                p *= (0.01 * (rng.random::<f64>() - 0.5)).exp();
                PriceRow {
                    date: start + chrono::Days::new(i as u64),
                    open: None,
                    high: p * 1.01,
                    low: p * 0.99,
                    close: p,
                    adj_close: p,
                    volume: 10.0,
                }
            })
            .collect();
        PriceSeries::new(id, class, rows).unwrap()
    }

    pub(crate) fn panels(n: usize) -> Vec<Panel> {
        raw_panels(n).iter().map(|p| p.normalized(10).unwrap()).collect()
    }

    pub(crate) fn raw_panels(n: usize) -> Vec<Panel> {
        let assets = [
            random_series("a", AssetClass::Synthetic, n, 1),
            random_series("b", AssetClass::Synthetic, n, 2),
        ];
        let market = market_features(&[
            (random_series("m1", AssetClass::Synthetic, n, 3), MarketKind::Return),
            (random_series("m2", AssetClass::Synthetic, n, 4), MarketKind::Level),
        ])
        .unwrap();
        let vols: Vec<_> = assets
            .iter()
            .map(|s| ewma_vol(&s.asset_id, &ingest::log_returns(s).unwrap(), 0.94).unwrap())
            .collect();
        let gv = group_vol("g", &vols).unwrap();
        assets
            .iter()
            .map(|s| Panel::build(s, "g", &gv, &market).unwrap())
            .collect()
    }

    #[test]
    fn panel_alignment_and_width() {
        let ps = panels(200);
        let p = &ps[0];
        assert_eq!(p.header.feature_names.len(), 36);
        assert_eq!(p.header.feature_names.last().unwrap(), SIGMA_BAR_FEATURE);
        assert_eq!(p.header.market_names.len(), 2);
        // 200 prices, 34 warmup, 9 normalisation rows
        assert_eq!(p.len(), 200 - 34 - 9);
        assert!(p.rows.iter().all(|r| r.x.iter().chain(&r.z).all(|v| v.is_finite())));
    }

    #[test]
    fn split_ranges_partition_rows() {
        let ps = panels(300);
        let p = &ps[0];
        let tr = p.part_range(SplitPart::Train).unwrap();
        let va = p.part_range(SplitPart::Val).unwrap();
        let te = p.part_range(SplitPart::Test).unwrap();
        assert_eq!(tr.start, 0);
        assert_eq!(tr.end, va.start);
        assert_eq!(va.end, te.start);
        assert_eq!(te.end, p.len());
    }

    #[test]
    fn sequences_stay_inside_their_part() {
        let ps = panels(400);
        let refs = sequence_refs(&ps, SplitPart::Train, 3).unwrap();
        assert!(!refs.is_empty());
        for s in &refs {
            let range = ps[s.panel].part_range(SplitPart::Train).unwrap();
            assert!(s.start >= range.start && s.start + 2 * s.len <= range.end);
        }
        let batches = sequence_batches(&ps, &refs, 4).unwrap();
        assert_eq!(batches.iter().map(|b| b.size()).sum::<usize>(), refs.len());
        assert_eq!(refs, sequence_refs(&ps, SplitPart::Train, 3).unwrap());
    }

    #[test]
    fn sequence_targets_follow_inputs() {
        let ps = panels(300);
        let s = SeqRef {
            panel: 1,
            start: 40,
            len: 3,
        };
        let b = sequence_batch(&ps, &[s], true).unwrap();
        assert_eq!(b.horizon(), 3);
        assert_eq!(b.x[2].row_slice(0), ps[1].rows[42].x.as_slice());
        assert_eq!(b.r[0].get(0, 0), ps[1].rows[43].r);
        assert_eq!(b.sigma.get(0, 0), ps[1].rows[43].sigma_bar);
        let row = &ps[1].rows[45];
        assert_eq!(b.r_tilde[2].get(0, 0), row.r / row.sigma_bar);
    }

    #[test]
    fn anchor_batches_flatten_the_window() {
        let ps = panels(300);
        let a = AnchorRef { panel: 0, t: 30 };
        let b = anchor_batch(&ps, &[a], true).unwrap();
        assert_eq!(b.horizon(), 1);
        assert_eq!(b.x[0].cols(), 22 * 36);
        assert_eq!(&b.x[0].row_slice(0)[..36], ps[0].rows[9].x.as_slice());
        assert_eq!(b.r[0].get(0, 0), ps[0].rows[52].r);
        assert!(anchor_batch(&ps, &[AnchorRef { panel: 0, t: 5 }], true).is_err());
        let refs = anchor_refs(&ps, SplitPart::Val).unwrap();
        let range = ps[0].part_range(SplitPart::Val).unwrap();
        assert!(refs.iter().all(|a| a.t + 1 >= range.start + 22 && a.t + 22 < range.end));
    }

    #[test]
    fn jsonl_roundtrip() {
        let ps = panels(150);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.jsonl");
        ps[0].write_jsonl(&path).unwrap();
        assert_eq!(Panel::read_jsonl(&path).unwrap(), ps[0]);
    }
}
