//! Offline OHLCV ingestion, date splits and variable-length sequence sampling.

use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{QuantError, Result};

pub const CSV_HEADER: [&str; 7] = ["date", "open", "high", "low", "close", "adj_close", "volume"];

/// Longest sampled sequence, in trading days.
pub const MAX_SEQUENCE_LEN: usize = 30;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AssetClass {
    Sp500,
    EuroStoxx50,
    Nikkei225,
    Currency,
    Commodity,
    Crypto,
    Synthetic,
}

impl AssetClass {
    pub const ALL: [AssetClass; 7] = [
        AssetClass::Sp500,
        AssetClass::EuroStoxx50,
        AssetClass::Nikkei225,
        AssetClass::Currency,
        AssetClass::Commodity,
        AssetClass::Crypto,
        AssetClass::Synthetic,
    ];

    pub fn index(self) -> usize {
        Self::ALL.iter().position(|c| *c == self).expect("listed")
    }

    /// Row label used in comparison tables.
    pub fn display_name(self) -> &'static str {
        match self {
            AssetClass::Sp500 => "S&P 500",
            AssetClass::EuroStoxx50 => "Euro Stoxx 50",
            AssetClass::Nikkei225 => "Nikkei 225",
            AssetClass::Currency => "Currency Pairs",
            AssetClass::Commodity => "Commodities",
            AssetClass::Crypto => "Crypto-currencies",
            AssetClass::Synthetic => "Synthetic",
        }
    }

    pub fn slug(self) -> &'static str {
        match self {
            AssetClass::Sp500 => "sp500",
            AssetClass::EuroStoxx50 => "euro_stoxx50",
            AssetClass::Nikkei225 => "nikkei225",
            AssetClass::Currency => "currency",
            AssetClass::Commodity => "commodity",
            AssetClass::Crypto => "crypto",
            AssetClass::Synthetic => "synthetic",
        }
    }
}

impl fmt::Display for AssetClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.slug())
    }
}

impl std::str::FromStr for AssetClass {
    type Err = QuantError;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|c| c.slug() == s)
            .ok_or_else(|| QuantError::Lookup {
                kind: "asset class",
                name: s.to_string(),
            })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriceRow {
    pub date: NaiveDate,
    pub open: Option<f64>,
    pub high: f64,
    pub low: f64,
    pub close: f64,
    pub adj_close: f64,
    pub volume: f64,
}

impl PriceRow {
    /// High/low rescaled onto the adjusted-close basis.
    pub fn adjusted_high_low(&self) -> (f64, f64) {
        let ratio = if self.close > 0.0 {
            self.adj_close / self.close
        } else {
            1.0
        };
        (self.high * ratio, self.low * ratio)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriceSeries {
    pub asset_id: String,
    pub asset_class: AssetClass,
    pub rows: Vec<PriceRow>,
}

impl PriceSeries {
    /// Builds a series after checking date order and price positivity.
    pub fn new(asset_id: impl Into<String>, asset_class: AssetClass, rows: Vec<PriceRow>) -> Result<Self> {
        let s = Self {
            asset_id: asset_id.into(),
            asset_class,
            rows,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        for (i, row) in self.rows.iter().enumerate() {
            if !(row.adj_close > 0.0) {
                return Err(QuantError::Validation(format!(
                    "{}: non-positive adj_close {} on {}",
                    self.asset_id, row.adj_close, row.date
                )));
            }
            if i > 0 {
                let prev = self.rows[i - 1].date;
                if row.date == prev {
                    return Err(QuantError::Validation(format!(
                        "{}: duplicate date {}",
                        self.asset_id, row.date
                    )));
                }
                if row.date < prev {
                    return Err(QuantError::Validation(format!(
                        "{}: date {} is not after {}",
                        self.asset_id, row.date, prev
                    )));
                }
            }
        }
        Ok(())
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

    pub fn adj_close(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.adj_close).collect()
    }

    fn with_rows(&self, rows: Vec<PriceRow>) -> Self {
        Self {
            asset_id: self.asset_id.clone(),
            asset_class: self.asset_class,
            rows,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Loaded {
    pub series: PriceSeries,
    /// Rows skipped because `adj_close` was blank.
    pub dropped_rows: usize,
}

fn parse_field(field: &str, name: &str, line: u64) -> Result<Option<f64>> {
    let t = field.trim();
    if t.is_empty() {
        return Ok(None);
    }
    t.parse::<f64>()
        .map(Some)
        .map_err(|_| QuantError::Parse {
            line,
            message: format!("{name}: `{t}` is not a number"),
        })
        .and_then(|v| match v {
            Some(x) if !x.is_finite() => Err(QuantError::Parse {
                line,
                message: format!("{name}: non-finite value"),
            }),
            other => Ok(other),
        })
}

/// Parses the `date,open,high,low,close,adj_close,volume` schema.
pub fn parse_prices<R: Read>(reader: R, asset_id: &str, asset_class: AssetClass) -> Result<Loaded> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_reader(reader);
    let headers = rdr.headers().map_err(|e| QuantError::Parse {
        line: 1,
        message: e.to_string(),
    })?;
    let got: Vec<&str> = headers.iter().map(str::trim).collect();
    if got != CSV_HEADER {
        return Err(QuantError::Parse {
            line: 1,
            message: format!("expected header `{}`, got `{}`", CSV_HEADER.join(","), got.join(",")),
        });
    }

    let mut rows = Vec::new();
    let mut dropped = 0;
    for record in rdr.records() {
        let record = record.map_err(|e| QuantError::Parse {
            line: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line());
        let date = NaiveDate::parse_from_str(record[0].trim(), "%Y-%m-%d").map_err(|e| QuantError::Parse {
            line,
            message: format!("date `{}`: {e}", &record[0]),
        })?;
        let open = parse_field(&record[1], "open", line)?;
        let required = |idx: usize, name: &str| -> Result<f64> {
            parse_field(&record[idx], name, line)?.ok_or_else(|| QuantError::Parse {
                line,
                message: format!("{name} is blank"),
            })
        };
        let Some(adj_close) = parse_field(&record[5], "adj_close", line)? else {
            dropped += 1;
            continue;
        };
        rows.push(PriceRow {
            date,
            open,
            high: required(2, "high")?,
            low: required(3, "low")?,
            close: required(4, "close")?,
            adj_close,
            volume: parse_field(&record[6], "volume", line)?.unwrap_or(0.0),
        });
    }
    let series = PriceSeries::new(asset_id, asset_class, rows)?;
    Ok(Loaded {
        series,
        dropped_rows: dropped,
    })
}

pub fn load_prices(path: &Path, asset_id: &str, asset_class: AssetClass) -> Result<Loaded> {
    let file = File::open(path).map_err(|e| QuantError::io(path, e))?;
    parse_prices(BufReader::new(file), asset_id, asset_class)
}

pub fn write_prices_csv(path: &Path, series: &PriceSeries) -> Result<()> {
    let file = File::create(path).map_err(|e| QuantError::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| QuantError::io(path, e);
    writeln!(w, "{}", CSV_HEADER.join(",")).map_err(io)?;
    for r in &series.rows {
        let open = r.open.map(|v| v.to_string()).unwrap_or_default();
        writeln!(
            w,
            "{},{},{},{},{},{},{}",
            r.date, open, r.high, r.low, r.close, r.adj_close, r.volume
        )
        .map_err(io)?;
    }
    w.flush().map_err(io)
}

/// Daily log returns `ln(p_t / p_{t-1})`, dated at `t`.
pub fn log_returns(series: &PriceSeries) -> Result<Vec<(NaiveDate, f64)>> {
    if series.rows.len() < 2 {
        return Err(QuantError::Validation(format!(
            "{}: log returns need at least 2 rows, got {}",
            series.asset_id,
            series.rows.len()
        )));
    }
    series
        .rows
        .windows(2)
        .map(|w| {
            if !(w[0].adj_close > 0.0 && w[1].adj_close > 0.0) {
                return Err(QuantError::Domain(format!(
                    "{}: non-positive price near {}",
                    series.asset_id, w[1].date
                )));
            }
            Ok((w[1].date, (w[1].adj_close / w[0].adj_close).ln()))
        })
        .collect()
}

/// Log returns of a raw price vector.
pub fn log_returns_of(prices: &[f64]) -> Result<Vec<f64>> {
    if prices.len() < 2 {
        return Err(QuantError::Validation("log returns need at least 2 prices".into()));
    }
    prices
        .windows(2)
        .map(|w| {
            if !(w[0] > 0.0 && w[1] > 0.0) {
                Err(QuantError::Domain(format!(
                    "non-positive price in ({}, {})",
                    w[0], w[1]
                )))
            } else {
                Ok((w[1] / w[0]).ln())
            }
        })
        .collect()
}

/// Closed date intervals: a row dated exactly `train_end` belongs to train.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_end: NaiveDate,
    pub val_start: NaiveDate,
    pub val_end: NaiveDate,
    pub test_start: NaiveDate,
    pub test_end: NaiveDate,
}

fn ymd(y: i32, m: u32, d: u32) -> NaiveDate {
    NaiveDate::from_ymd_opt(y, m, d).expect("valid date")
}

impl Default for SplitSpec {
    /// Train through 2017, validate 2018–2019, test 2020–2023.
    fn default() -> Self {
        Self {
            train_end: ymd(2017, 12, 31),
            val_start: ymd(2018, 1, 1),
            val_end: ymd(2019, 12, 31),
            test_start: ymd(2020, 1, 1),
            test_end: ymd(2023, 12, 31),
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        if self.train_end < self.val_start
            && self.val_start <= self.val_end
            && self.val_end < self.test_start
            && self.test_start <= self.test_end
        {
            Ok(())
        } else {
            Err(QuantError::Validation(format!(
                "split boundaries out of order: {self:?}"
            )))
        }
    }

    /// Chronological split of `dates` by fractions; the remainder is test.
    pub fn from_fractions(dates: &[NaiveDate], train: f64, val: f64) -> Result<Self> {
        let n = dates.len();
        let n_train = (n as f64 * train).floor() as usize;
        let n_val_end = (n as f64 * (train + val)).floor() as usize;
        if !(train > 0.0 && val > 0.0 && train + val < 1.0) || n_train == 0 || n_val_end <= n_train || n_val_end >= n {
            return Err(QuantError::Validation(format!(
                "cannot split {n} dates into fractions train={train}, val={val}"
            )));
        }
        let spec = Self {
            train_end: dates[n_train - 1],
            val_start: dates[n_train],
            val_end: dates[n_val_end - 1],
            test_start: dates[n_val_end],
            test_end: dates[n - 1],
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn part_of(&self, d: NaiveDate) -> Option<SplitPart> {
        if d <= self.train_end {
            Some(SplitPart::Train)
        } else if d >= self.val_start && d <= self.val_end {
            Some(SplitPart::Val)
        } else if d >= self.test_start && d <= self.test_end {
            Some(SplitPart::Test)
        } else {
            None
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitPart {
    Train,
    Val,
    Test,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitResult {
    pub train: PriceSeries,
    pub val: PriceSeries,
    pub test: PriceSeries,
    /// One entry per empty partition.
    pub warnings: Vec<String>,
}

pub fn split(series: &PriceSeries, spec: &SplitSpec) -> Result<SplitResult> {
    spec.validate()?;
    let mut parts: [Vec<PriceRow>; 3] = Default::default();
    for row in &series.rows {
        match spec.part_of(row.date) {
            Some(SplitPart::Train) => parts[0].push(row.clone()),
            Some(SplitPart::Val) => parts[1].push(row.clone()),
            Some(SplitPart::Test) => parts[2].push(row.clone()),
            None => {}
        }
    }
    let warnings = ["train", "val", "test"]
        .iter()
        .zip(&parts)
        .filter(|(_, p)| p.is_empty())
        .map(|(name, _)| format!("{}: {name} partition is empty", series.asset_id))
        .collect();
    let [train, val, test] = parts;
    Ok(SplitResult {
        train: series.with_rows(train),
        val: series.with_rows(val),
        test: series.with_rows(test),
        warnings,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SequenceSample {
    pub asset_id: String,
    /// Row index of the first input day.
    pub start_index: usize,
    /// Input length, equal to the forecast horizon.
    pub length: usize,
    /// Log returns of the `length` days that follow the input window.
    pub target_returns: Vec<f64>,
}

impl SequenceSample {
    pub fn input_rows(&self) -> std::ops::Range<usize> {
        self.start_index..self.start_index + self.length
    }

    pub fn target_rows(&self) -> std::ops::Range<usize> {
        self.start_index + self.length..self.start_index + 2 * self.length
    }
}

/// Draws a sequence length from `Uniform{1..=30}`.
pub fn draw_length<R: Rng>(rng: &mut R) -> usize {
    rng.random_range(1..=MAX_SEQUENCE_LEN)
}

/// Greedy left-to-right tiling of rows `start..end` into `(start, len)` input
/// windows. Each window's `len` target rows directly follow it and stay
/// below `end`; tiling stops at the first draw that would overrun.
pub fn partition_windows<R: Rng>(start: usize, end: usize, rng: &mut R) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut cursor = start;
    loop {
        let len = draw_length(rng);
        if cursor + 2 * len > end {
            break;
        }
        out.push((cursor, len));
        cursor += len;
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sampled {
    pub samples: Vec<SequenceSample>,
    pub warnings: Vec<String>,
}

/// Partitions a series (after `warmup` rows) into variable-length samples.
pub fn sample_sequences(series: &PriceSeries, warmup: usize, rng_seed: u64) -> Result<Sampled> {
    let needed = 2 * MAX_SEQUENCE_LEN + warmup;
    if series.len() < needed {
        return Ok(Sampled {
            samples: Vec::new(),
            warnings: vec![format!(
                "{}: {} rows is shorter than the {needed} needed after warmup",
                series.asset_id,
                series.len()
            )],
        });
    }
    let returns = log_returns(series)?;
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let samples = partition_windows(warmup, series.len(), &mut rng)
        .into_iter()
        .map(|(start, len)| SequenceSample {
            asset_id: series.asset_id.clone(),
            start_index: start,
            length: len,
            // return dated at row i lives at returns[i - 1]
            target_returns: (start + len..start + 2 * len).map(|i| returns[i - 1].1).collect(),
        })
        .collect();
    Ok(Sampled {
        samples,
        warnings: Vec::new(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    #[default]
    Asset,
    Market,
}

/// How a market series enters the market matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum MarketKind {
    /// Indices and futures: daily log return.
    #[default]
    Return,
    /// Yields and VIX: the level itself.
    Level,
}

/// One entry of the asset metadata file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssetMeta {
    pub asset_id: String,
    pub asset_class: AssetClass,
    pub path: PathBuf,
    #[serde(default)]
    pub role: Role,
    #[serde(default)]
    pub kind: MarketKind,
    /// Row label for reports and volatility pooling; defaults to the class name.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group: Option<String>,
    /// Which market series an asset is paired with.
    #[serde(default = "default_market_set")]
    pub market_set: String,
}

pub fn default_market_set() -> String {
    "default".to_string()
}

impl AssetMeta {
    pub fn group_name(&self) -> String {
        self.group
            .clone()
            .unwrap_or_else(|| self.asset_class.display_name().to_string())
    }
}

/// Reads the metadata array; relative paths resolve against the file's directory.
pub fn load_meta(path: &Path) -> Result<Vec<AssetMeta>> {
    let text = std::fs::read_to_string(path).map_err(|e| QuantError::io(path, e))?;
    let mut metas: Vec<AssetMeta> = serde_json::from_str(&text)?;
    let base = path.parent().unwrap_or(Path::new("."));
    for m in &mut metas {
        if m.path.is_relative() {
            m.path = base.join(&m.path);
        }
    }
    Ok(metas)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotHeader {
    pub asset_id: String,
    pub asset_class: AssetClass,
    pub role: Role,
    pub kind: MarketKind,
    pub group: String,
    pub market_set: String,
    pub dropped_rows: usize,
    pub rows: usize,
}

/// JSON-lines snapshot: one header record, then one record per row.
pub fn write_snapshot(path: &Path, header: &SnapshotHeader, series: &PriceSeries) -> Result<()> {
    let file = File::create(path).map_err(|e| QuantError::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| QuantError::io(path, e);
    writeln!(w, "{}", serde_json::to_string(header)?).map_err(io)?;
    for row in &series.rows {
        writeln!(w, "{}", serde_json::to_string(row)?).map_err(io)?;
    }
    w.flush().map_err(io)
}

pub fn read_snapshot(path: &Path) -> Result<(SnapshotHeader, PriceSeries)> {
    let file = File::open(path).map_err(|e| QuantError::io(path, e))?;
    let mut lines = BufReader::new(file).lines();
    let first = lines
        .next()
        .ok_or_else(|| QuantError::Validation(format!("{}: empty snapshot", path.display())))?
        .map_err(|e| QuantError::io(path, e))?;
    let header: SnapshotHeader = serde_json::from_str(&first)?;
    let mut rows = Vec::with_capacity(header.rows);
    for line in lines {
        let line = line.map_err(|e| QuantError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        rows.push(serde_json::from_str(&line)?);
    }
    let series = PriceSeries::new(header.asset_id.clone(), header.asset_class, rows)?;
    Ok((header, series))
}

pub fn snapshot_path(dir: &Path, asset_id: &str) -> PathBuf {
    dir.join(format!("{asset_id}.jsonl"))
}

#[cfg(test)]
mod tests {
    use super::*;

    const THREE: &str = "date,open,high,low,close,adj_close,volume\n\
        2020-01-02,10,11,9,10,10,100\n\
        2020-01-03,,12,10,11,11,200\n\
        2020-01-06,11,12,10.5,11.5,11.5,150\n";

    fn series_of(prices: &[f64]) -> PriceSeries {
        let start = ymd(2000, 1, 3);
        let rows = prices
            .iter()
            .enumerate()
            .map(|(i, &p)| PriceRow {
                date: start + chrono::Days::new(i as u64),
                open: None,
                high: p,
                low: p,
                close: p,
                adj_close: p,
                volume: 0.0,
            })
            .collect();
        PriceSeries {
            asset_id: "t".into(),
            asset_class: AssetClass::Synthetic,
            rows,
        }
    }

    #[test]
    fn loads_well_formed_csv() {
        let l = parse_prices(THREE.as_bytes(), "x", AssetClass::Sp500).unwrap();
        assert_eq!(l.series.len(), 3);
        assert_eq!(l.dropped_rows, 0);
        assert_eq!(l.series.rows[1].open, None);
    }

    #[test]
    fn duplicate_date_names_the_date() {
        let csv = "date,open,high,low,close,adj_close,volume\n\
            2020-01-02,1,1,1,1,1,1\n2020-01-02,1,1,1,1,1,1\n";
        let err = parse_prices(csv.as_bytes(), "x", AssetClass::Sp500).unwrap_err();
        assert!(
            matches!(&err, QuantError::Validation(m) if m.contains("2020-01-02")),
            "{err}"
        );
    }

    #[test]
    fn decreasing_dates_rejected() {
        let csv = "date,open,high,low,close,adj_close,volume\n\
            2020-01-03,1,1,1,1,1,1\n2020-01-02,1,1,1,1,1,1\n";
        assert!(matches!(
            parse_prices(csv.as_bytes(), "x", AssetClass::Sp500),
            Err(QuantError::Validation(_))
        ));
    }

    #[test]
    fn blank_adj_close_is_dropped_and_counted() {
        let mut csv = String::from("date,open,high,low,close,adj_close,volume\n");
        for d in 1..=10 {
            let adj = if d == 5 { String::new() } else { "100".to_string() };
            csv.push_str(&format!("2021-03-{d:02},100,101,99,100,{adj},10\n"));
        }
        let l = parse_prices(csv.as_bytes(), "x", AssetClass::Crypto).unwrap();
        assert_eq!(l.series.len(), 9);
        assert_eq!(l.dropped_rows, 1);
    }

    #[test]
    fn malformed_row_reports_line() {
        let csv = "date,open,high,low,close,adj_close,volume\n\
            2020-01-02,1,1,1,1,1,1\n2020-01-03,1,abc,1,1,1,1\n";
        match parse_prices(csv.as_bytes(), "x", AssetClass::Sp500) {
            Err(QuantError::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn wrong_header_is_parse_error() {
        let csv = "day,o,h,l,c,a,v\n";
        assert!(matches!(
            parse_prices(csv.as_bytes(), "x", AssetClass::Sp500),
            Err(QuantError::Parse { line: 1, .. })
        ));
    }

    #[test]
    fn log_return_examples() {
        let r = log_returns(&series_of(&[100.0, 100.0])).unwrap();
        assert_eq!(r[0].1, 0.0);
        let r = log_returns(&series_of(&[100.0, 105.0])).unwrap();
        assert!((r[0].1 - 0.048_790_164_169_432).abs() < 1e-12);
        assert!(matches!(log_returns_of(&[100.0, 0.0]), Err(QuantError::Domain(_))));
        assert!(log_returns(&series_of(&[100.0])).is_err());
    }

    #[test]
    fn zero_price_is_domain_error() {
        let mut s = series_of(&[100.0, 1.0]);
        s.rows[1].adj_close = 0.0;
        assert!(matches!(log_returns(&s), Err(QuantError::Domain(_))));
    }

    fn daily_series(from: NaiveDate, to: NaiveDate) -> PriceSeries {
        let n = (to - from).num_days() as usize + 1;
        let mut s = series_of(&vec![1.0; n]);
        for (i, r) in s.rows.iter_mut().enumerate() {
            r.date = from + chrono::Days::new(i as u64);
        }
        s
    }

    #[test]
    fn default_split_on_long_series() {
        let s = daily_series(ymd(2000, 1, 1), ymd(2024, 6, 1));
        let out = split(&s, &SplitSpec::default()).unwrap();
        assert!(out.warnings.is_empty());
        assert!(!out.train.is_empty() && !out.val.is_empty() && !out.test.is_empty());
        assert_eq!(out.train.rows.last().unwrap().date, ymd(2017, 12, 31));
        assert_eq!(out.val.rows[0].date, ymd(2018, 1, 1));
        assert_eq!(out.test.rows.last().unwrap().date, ymd(2023, 12, 31));
    }

    #[test]
    fn series_after_test_end_is_all_empty() {
        let s = daily_series(ymd(2024, 1, 2), ymd(2024, 3, 1));
        let out = split(&s, &SplitSpec::default()).unwrap();
        assert!(out.train.is_empty() && out.val.is_empty() && out.test.is_empty());
        assert_eq!(out.warnings.len(), 3);
    }

    #[test]
    fn invalid_split_spec_rejected() {
        let mut spec = SplitSpec::default();
        spec.val_start = spec.train_end;
        assert!(spec.validate().is_err());
    }

    #[test]
    fn fraction_split_is_ordered() {
        let s = daily_series(ymd(2000, 1, 1), ymd(2000, 4, 9));
        let spec = SplitSpec::from_fractions(&s.dates(), 0.6, 0.2).unwrap();
        let out = split(&s, &spec).unwrap();
        assert_eq!(out.train.len() + out.val.len() + out.test.len(), s.len());
        assert_eq!(out.train.len(), 60);
    }

    #[test]
    fn sequences_are_deterministic_and_bounded() {
        let s = series_of(&(0..300).map(|i| 100.0 + i as f64).collect::<Vec<_>>());
        let a = sample_sequences(&s, 34, 7).unwrap();
        let b = sample_sequences(&s, 34, 7).unwrap();
        assert_eq!(a, b);
        assert!(!a.samples.is_empty());
        let total: usize = a.samples.iter().map(|x| x.length).sum();
        assert!(total <= 300 - 34);
        for x in &a.samples {
            assert!((1..=30).contains(&x.length));
            assert_eq!(x.target_returns.len(), x.length);
            assert!(x.target_rows().end <= 300);
        }
    }

    #[test]
    fn short_series_gives_warning() {
        let s = series_of(&vec![1.0; 50]);
        let out = sample_sequences(&s, 34, 1).unwrap();
        assert!(out.samples.is_empty());
        assert_eq!(out.warnings.len(), 1);
    }

    #[test]
    fn length_distribution_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 10_000;
        let mean = (0..n).map(|_| draw_length(&mut rng) as f64).sum::<f64>() / n as f64;
        assert!((mean - 15.5).abs() < 0.5, "{mean}");
    }

    #[test]
    fn snapshot_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let l = parse_prices(THREE.as_bytes(), "abc", AssetClass::Commodity).unwrap();
        let header = SnapshotHeader {
            asset_id: "abc".into(),
            asset_class: AssetClass::Commodity,
            role: Role::Asset,
            kind: MarketKind::Return,
            group: "Commodities".into(),
            market_set: default_market_set(),
            dropped_rows: 0,
            rows: 3,
        };
        let p = snapshot_path(dir.path(), "abc");
        write_snapshot(&p, &header, &l.series).unwrap();
        let (h, s) = read_snapshot(&p).unwrap();
        assert_eq!(h, header);
        assert_eq!(s, l.series);
    }
}
