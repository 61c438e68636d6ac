//! Market labeling: OHLCV bars to labelled movement samples, similar-stock
//! selection, and dataset splitting.
//!
//! The movement of trading day `t` is measured from the close of the previous
//! trading day to the open of day `t`. Gaps in the calendar (weekends,
//! suspensions) are ignored: consecutive bars are consecutive trading days.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;

use chrono::NaiveDate;
use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::label::MovementLabel;

/// Moves strictly beyond this many percent are directional.
pub const MOVE_THRESHOLD_PCT: f64 = 3.0;

pub const DEFAULT_SIMILARITY_WINDOW: usize = 60;
pub const DEFAULT_SIMILAR_K: usize = 3;
pub const DEFAULT_OOD_STOCK_COUNT: usize = 50;

/// One stock-day OHLCV record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriceBar {
    pub stock_id: String,
    pub date: NaiveDate,
    pub open: f64,
    pub high: f64,
    pub low: f64,
    pub close: f64,
    pub volume: f64,
}

impl PriceBar {
    pub fn validate(&self) -> Result<()> {
        let ctx = || format!("{} {}", self.stock_id, self.date);
        for (name, v) in [
            ("open", self.open),
            ("high", self.high),
            ("low", self.low),
            ("close", self.close),
        ] {
            if !v.is_finite() || v <= 0.0 {
                return Err(Error::domain(format!("{}: {name} must be a positive finite price, got {v}", ctx())));
            }
        }
        if !self.volume.is_finite() || self.volume < 0.0 {
            return Err(Error::domain(format!("{}: volume must be non-negative, got {}", ctx(), self.volume)));
        }
        if self.low > self.open.min(self.close) || self.open.max(self.close) > self.high {
            return Err(Error::domain(format!(
                "{}: inconsistent range low={} open={} close={} high={}",
                ctx(),
                self.low,
                self.open,
                self.close,
                self.high
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitTag {
    Train,
    OodStock,
    OodDate,
    OodStockDate,
}

impl SplitTag {
    pub const ALL: [SplitTag; 4] = [
        SplitTag::Train,
        SplitTag::OodStock,
        SplitTag::OodDate,
        SplitTag::OodStockDate,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SplitTag::Train => "train",
            SplitTag::OodStock => "ood_stock",
            SplitTag::OodDate => "ood_date",
            SplitTag::OodStockDate => "ood_stock_date",
        }
    }
}

impl fmt::Display for SplitTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// The unit of training and evaluation data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledSample {
    pub stock_id: String,
    pub date: NaiveDate,
    pub change_pct: f64,
    pub label: MovementLabel,
    pub split: SplitTag,
}

impl LabeledSample {
    /// Stable identifier `stock_id@YYYY-MM-DD` used to join predictions to samples.
    pub fn id(&self) -> String {
        sample_id(&self.stock_id, self.date)
    }
}

pub fn sample_id(stock_id: &str, date: NaiveDate) -> String {
    format!("{stock_id}@{date}")
}

/// Percent change from the previous close to the current open.
pub fn compute_change_pct(prev_close: f64, open: f64) -> Result<f64> {
    if !prev_close.is_finite() || prev_close <= 0.0 {
        return Err(Error::domain(format!("previous close must be positive and finite, got {prev_close}")));
    }
    if !open.is_finite() || open <= 0.0 {
        return Err(Error::domain(format!("open must be positive and finite, got {open}")));
    }
    Ok((open / prev_close - 1.0) * 100.0)
}

/// Strict thresholds: exactly ±3 is `hold`.
pub fn classify(change_pct: f64) -> Result<MovementLabel> {
    if !change_pct.is_finite() {
        return Err(Error::domain(format!("change_pct must be finite, got {change_pct}")));
    }
    Ok(if change_pct > MOVE_THRESHOLD_PCT {
        MovementLabel::Up
    } else if change_pct < -MOVE_THRESHOLD_PCT {
        MovementLabel::Down
    } else {
        MovementLabel::Hold
    })
}

/// Label one stock's date-sorted series. The first bar has no predecessor and
/// yields no sample. Samples are tagged `train` until [`assign_splits`] runs.
pub fn label_series(bars: &[PriceBar]) -> Result<Vec<LabeledSample>> {
    let Some(first) = bars.first() else {
        return Ok(Vec::new());
    };
    first.validate()?;
    let mut out = Vec::with_capacity(bars.len().saturating_sub(1));
    for pair in bars.windows(2) {
        let (prev, cur) = (&pair[0], &pair[1]);
        cur.validate()?;
        if cur.stock_id != first.stock_id {
            return Err(Error::validation(format!(
                "mixed stock ids in one series: {} and {}",
                first.stock_id, cur.stock_id
            )));
        }
        if cur.date == prev.date {
            return Err(Error::validation(format!("duplicate date {} for {}", cur.date, cur.stock_id)));
        }
        if cur.date < prev.date {
            return Err(Error::validation(format!(
                "unsorted series for {}: {} follows {}",
                cur.stock_id, cur.date, prev.date
            )));
        }
        let change_pct = compute_change_pct(prev.close, cur.open)?;
        out.push(LabeledSample {
            stock_id: cur.stock_id.clone(),
            date: cur.date,
            change_pct,
            label: classify(change_pct)?,
            split: SplitTag::Train,
        });
    }
    Ok(out)
}

/// Group bars by stock (keeping each stock's input order) and label every series.
/// Output is ordered by stock id, then date.
pub fn label_universe(bars: &[PriceBar]) -> Result<Vec<LabeledSample>> {
    let mut by_stock: BTreeMap<&str, Vec<PriceBar>> = BTreeMap::new();
    for bar in bars {
        by_stock.entry(bar.stock_id.as_str()).or_default().push(bar.clone());
    }
    let mut out = Vec::new();
    for series in by_stock.values() {
        out.extend(label_series(series)?);
    }
    Ok(out)
}

/// Split a flat bar list into per-stock series, keyed by stock id.
pub fn group_by_stock(bars: &[PriceBar]) -> BTreeMap<String, Vec<PriceBar>> {
    let mut by_stock: BTreeMap<String, Vec<PriceBar>> = BTreeMap::new();
    for bar in bars {
        by_stock.entry(bar.stock_id.clone()).or_default().push(bar.clone());
    }
    by_stock
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarStock {
    pub stock_id: String,
    pub correlation: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SimilarityRanking {
    pub ranked: Vec<SimilarStock>,
    /// Candidates skipped because their (or the target's) returns had zero variance.
    pub zero_variance: Vec<String>,
}

/// Rank the universe by Pearson correlation of daily log close-returns with the
/// target over the trailing `window` returns on common dates.
///
/// Entries of `universe` keyed by the target's own id are skipped. Ties are
/// broken by stock id.
pub fn top_similar(
    target: &[PriceBar],
    universe: &BTreeMap<String, Vec<PriceBar>>,
    window: usize,
    k: usize,
) -> Result<SimilarityRanking> {
    if k == 0 {
        return Err(Error::domain("k must be at least 1"));
    }
    if window == 0 {
        return Err(Error::domain("window must be at least 1 day"));
    }
    let target_id = target.first().map(|b| b.stock_id.as_str()).unwrap_or("");
    let target_closes: BTreeMap<NaiveDate, f64> = target.iter().map(|b| (b.date, b.close)).collect();

    let mut ranking = SimilarityRanking::default();
    let mut scored = Vec::new();
    for (id, series) in universe {
        if id == target_id {
            continue;
        }
        // (date, target close, candidate close) on common dates, ascending.
        let common: Vec<(f64, f64)> = series
            .iter()
            .filter_map(|b| target_closes.get(&b.date).map(|&t| (b.date, (t, b.close))))
            .collect::<BTreeMap<_, _>>()
            .into_iter()
            .map(|(_, (t, c))| (t, c))
            .collect();
        if common.len() < 2 {
            return Err(Error::InsufficientData(format!(
                "{id} shares {} dates with {target_id}; at least 2 are needed",
                common.len()
            )));
        }
        let tail = &common[common.len().saturating_sub(window + 1)..];
        let (xs, ys): (Vec<f64>, Vec<f64>) = tail
            .windows(2)
            .map(|w| ((w[1].0 / w[0].0).ln(), (w[1].1 / w[0].1).ln()))
            .unzip();
        match pearson(&xs, &ys) {
            Some(r) => scored.push(SimilarStock {
                stock_id: id.clone(),
                correlation: r,
            }),
            None => ranking.zero_variance.push(id.clone()),
        }
    }
    scored.sort_by(|a, b| {
        b.correlation
            .total_cmp(&a.correlation)
            .then_with(|| a.stock_id.cmp(&b.stock_id))
    });
    scored.truncate(k);
    ranking.ranked = scored;
    Ok(ranking)
}

/// `None` when either side has zero variance.
fn pearson(xs: &[f64], ys: &[f64]) -> Option<f64> {
    let n = xs.len() as f64;
    if xs.is_empty() {
        return None;
    }
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return None;
    }
    Some((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Inclusive calendar date range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DateRange {
    pub start: NaiveDate,
    pub end: NaiveDate,
}

impl DateRange {
    pub fn new(start: NaiveDate, end: NaiveDate) -> Result<Self> {
        if end < start {
            return Err(Error::domain(format!("date range ends ({end}) before it starts ({start})")));
        }
        Ok(Self { start, end })
    }

    pub fn contains(&self, date: NaiveDate) -> bool {
        self.start <= date && date <= self.end
    }
}

impl FromStr for DateRange {
    type Err = Error;

    /// `YYYY-MM-DD..YYYY-MM-DD`
    fn from_str(s: &str) -> Result<Self> {
        let (a, b) = s
            .split_once("..")
            .ok_or_else(|| Error::domain(format!("expected START..END, got {s:?}")))?;
        let parse = |d: &str| {
            NaiveDate::parse_from_str(d.trim(), "%Y-%m-%d")
                .map_err(|e| Error::domain(format!("bad date {d:?}: {e}")))
        };
        DateRange::new(parse(a)?, parse(b)?)
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SplitPolicy {
    pub ood_stocks: BTreeSet<String>,
    pub ood_dates: Option<DateRange>,
}

impl SplitPolicy {
    pub fn tag(&self, stock_id: &str, date: NaiveDate) -> SplitTag {
        let stock = self.ood_stocks.contains(stock_id);
        let date = self.ood_dates.is_some_and(|r| r.contains(date));
        match (stock, date) {
            (true, true) => SplitTag::OodStockDate,
            (true, false) => SplitTag::OodStock,
            (false, true) => SplitTag::OodDate,
            (false, false) => SplitTag::Train,
        }
    }
}

pub fn assign_splits(samples: &[LabeledSample], policy: &SplitPolicy) -> Vec<LabeledSample> {
    samples
        .iter()
        .map(|s| LabeledSample {
            split: policy.tag(&s.stock_id, s.date),
            ..s.clone()
        })
        .collect()
}

/// Pick `count` stocks uniformly at random (all of them if fewer exist).
pub fn pick_ood_stocks<'a>(
    stock_ids: impl IntoIterator<Item = &'a str>,
    count: usize,
    seed: u64,
) -> BTreeSet<String> {
    let ids: BTreeSet<&str> = stock_ids.into_iter().collect();
    let ids: Vec<&str> = ids.into_iter().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = count.min(ids.len());
    index::sample(&mut rng, ids.len(), n)
        .into_iter()
        .map(|i| ids[i].to_string())
        .collect()
}

/// How samples of held-out stocks are treated when building a training set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OodStockPolicy {
    /// OOD stocks never appear in training.
    #[default]
    Exclude,
    /// OOD stocks are held out only on OOD dates; their other days train.
    EvalOnly,
}

pub fn training_samples(samples: &[LabeledSample], policy: OodStockPolicy) -> Vec<LabeledSample> {
    samples
        .iter()
        .filter(|s| match policy {
            OodStockPolicy::Exclude => s.split == SplitTag::Train,
            OodStockPolicy::EvalOnly => matches!(s.split, SplitTag::Train | SplitTag::OodStock),
        })
        .cloned()
        .collect()
}

/// Downsample every class to the minority-class count. Deterministic in `seed`.
pub fn balance_labels(samples: &[LabeledSample], seed: u64) -> Result<Vec<LabeledSample>> {
    let mut by_label: [Vec<&LabeledSample>; 3] = Default::default();
    for s in samples {
        by_label[s.label.index()].push(s);
    }
    for l in MovementLabel::ALL {
        if by_label[l.index()].is_empty() {
            return Err(Error::validation(format!("cannot balance labels: class {l} is empty")));
        }
    }
    let minority = by_label.iter().map(Vec::len).min().unwrap_or(0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out: Vec<LabeledSample> = Vec::with_capacity(minority * 3);
    for class in &by_label {
        let mut picked = index::sample(&mut rng, class.len(), minority).into_vec();
        picked.sort_unstable();
        out.extend(picked.into_iter().map(|i| class[i].clone()));
    }
    out.shuffle(&mut rng);
    Ok(out)
}

/// A candidate data point before completeness filtering. Prices are optional
/// because upstream sources may be missing; the other information sources are
/// tracked only by presence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawRecord {
    pub stock_id: String,
    pub date: NaiveDate,
    pub prev_close: Option<f64>,
    pub open: Option<f64>,
    pub label: Option<MovementLabel>,
    #[serde(default)]
    pub sources: BTreeMap<String, bool>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DropReason {
    MissingPrice,
    InvalidPrice,
    MissingLabel,
    /// Stored label disagrees with the one implied by the prices.
    LabelMismatch,
    MissingSource,
}

impl DropReason {
    pub fn code(self) -> &'static str {
        match self {
            DropReason::MissingPrice => "missing_price",
            DropReason::InvalidPrice => "invalid_price",
            DropReason::MissingLabel => "missing_label",
            DropReason::LabelMismatch => "label_mismatch",
            DropReason::MissingSource => "missing_source",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dropped {
    pub record: RawRecord,
    pub reason: DropReason,
}

/// Keep records whose price pair and label are present and consistent, and
/// which carry every source named in `required_sources`. Rules are checked in
/// a fixed order and the first failure is reported.
pub fn filter_incomplete(
    records: Vec<RawRecord>,
    required_sources: &[&str],
) -> (Vec<RawRecord>, Vec<Dropped>) {
    let mut kept = Vec::new();
    let mut dropped = Vec::new();
    for record in records {
        match incomplete_reason(&record, required_sources) {
            None => kept.push(record),
            Some(reason) => dropped.push(Dropped { record, reason }),
        }
    }
    (kept, dropped)
}

fn incomplete_reason(r: &RawRecord, required_sources: &[&str]) -> Option<DropReason> {
    let (Some(prev), Some(open)) = (r.prev_close, r.open) else {
        return Some(DropReason::MissingPrice);
    };
    let Ok(change) = compute_change_pct(prev, open) else {
        return Some(DropReason::InvalidPrice);
    };
    let Some(label) = r.label else {
        return Some(DropReason::MissingLabel);
    };
    if classify(change).ok() != Some(label) {
        return Some(DropReason::LabelMismatch);
    }
    if required_sources
        .iter()
        .any(|s| !r.sources.get(*s).copied().unwrap_or(false))
    {
        return Some(DropReason::MissingSource);
    }
    None
}

/// Count samples per split tag.
pub fn split_counts(samples: &[LabeledSample]) -> HashMap<SplitTag, usize> {
    let mut counts = HashMap::new();
    for s in samples {
        *counts.entry(s.split).or_insert(0) += 1;
    }
    counts
}
