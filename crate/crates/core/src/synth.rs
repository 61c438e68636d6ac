//! Seeded synthetic market data and simulated policy rollouts for desk-scale
//! experiments.
//!
//! Prices follow a geometric random walk: the overnight gap and the intraday
//! move are independent log-normal steps with the configured volatility
//! (intraday at half scale). Prices are rounded to 4 decimals, as they would
//! be in a vendor file.

use std::fmt;
use std::str::FromStr;

use chrono::{Datelike, Days, NaiveDate, Weekday};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::Ballot;
use crate::label::MovementLabel;
use crate::labeling::{LabeledSample, PriceBar};
use crate::parsing::{render, EvidenceScores, ParsedResponse};
use crate::seed;

/// Per-class probability that a simulated vote equals the truth. Wrong votes
/// are uniform over the two other labels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AccuracyProfile {
    pub up: f64,
    pub hold: f64,
    pub down: f64,
}

impl AccuracyProfile {
    pub fn uniform(p: f64) -> Result<Self> {
        let a = Self { up: p, hold: p, down: p };
        a.validate()?;
        Ok(a)
    }

    pub fn for_label(&self, l: MovementLabel) -> f64 {
        match l {
            MovementLabel::Up => self.up,
            MovementLabel::Hold => self.hold,
            MovementLabel::Down => self.down,
        }
    }

    fn validate(&self) -> Result<()> {
        for l in MovementLabel::ALL {
            let p = self.for_label(l);
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::domain(format!("accuracy for {l} must be in [0, 1], got {p}")));
            }
        }
        Ok(())
    }
}

impl fmt::Display for AccuracyProfile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "up={},hold={},down={}", self.up, self.hold, self.down)
    }
}

impl FromStr for AccuracyProfile {
    type Err = Error;

    /// Either a single probability (`0.6`) or `up=0.6,hold=0.5,down=0.4`.
    fn from_str(s: &str) -> Result<Self> {
        let num = |v: &str| {
            v.trim()
                .parse::<f64>()
                .map_err(|_| Error::domain(format!("bad accuracy value {v:?}")))
        };
        if !s.contains('=') {
            return Self::uniform(num(s)?);
        }
        let (mut up, mut hold, mut down) = (None, None, None);
        for part in s.split(',') {
            let (k, v) = part
                .split_once('=')
                .ok_or_else(|| Error::domain(format!("bad accuracy entry {part:?}")))?;
            let slot = match k.trim().parse::<MovementLabel>()? {
                MovementLabel::Up => &mut up,
                MovementLabel::Hold => &mut hold,
                MovementLabel::Down => &mut down,
            };
            *slot = Some(num(v)?);
        }
        let missing = |name| Error::domain(format!("accuracy profile lacks {name}"));
        let a = Self {
            up: up.ok_or_else(|| missing("up"))?,
            hold: hold.ok_or_else(|| missing("hold"))?,
            down: down.ok_or_else(|| missing("down"))?,
        };
        a.validate()?;
        Ok(a)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub seed: u64,
    pub n_stocks: usize,
    pub n_days: usize,
    /// Standard deviation of the daily log overnight gap.
    pub volatility: f64,
    pub votes_per_sample: usize,
    pub accuracy: AccuracyProfile,
    pub start: NaiveDate,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            n_stocks: 20,
            n_days: 30,
            volatility: 0.03,
            votes_per_sample: 32,
            accuracy: AccuracyProfile {
                up: 0.5,
                hold: 0.5,
                down: 0.5,
            },
            start: NaiveDate::from_ymd_opt(2024, 1, 2).expect("valid date"),
        }
    }
}

fn round4(x: f64) -> f64 {
    (x * 1e4).round() / 1e4
}

/// Weekdays from `start` onward.
pub fn trading_days(start: NaiveDate, n: usize) -> Vec<NaiveDate> {
    let mut out = Vec::with_capacity(n);
    let mut d = start;
    while out.len() < n {
        if !matches!(d.weekday(), Weekday::Sat | Weekday::Sun) {
            out.push(d);
        }
        d = d + Days::new(1);
    }
    out
}

pub fn synth_prices(cfg: &SynthConfig) -> Result<Vec<PriceBar>> {
    if !(cfg.volatility.is_finite() && cfg.volatility >= 0.0) {
        return Err(Error::domain(format!("volatility must be >= 0, got {}", cfg.volatility)));
    }
    let mut rng = seed::rng(cfg.seed, "synth.prices");
    let gap = Normal::new(0.0, cfg.volatility).map_err(|e| Error::domain(e.to_string()))?;
    let intraday = Normal::new(0.0, cfg.volatility / 2.0).map_err(|e| Error::domain(e.to_string()))?;
    let dates = trading_days(cfg.start, cfg.n_days);
    let mut bars = Vec::with_capacity(cfg.n_stocks * cfg.n_days);
    for s in 0..cfg.n_stocks {
        let stock_id = format!("S{s:04}");
        let mut prev_close = round4(rng.random_range(5.0..100.0));
        for &date in &dates {
            let open = round4(prev_close * gap.sample(&mut rng).exp()).max(1e-4);
            let close = round4(open * intraday.sample(&mut rng).exp()).max(1e-4);
            let wick = cfg.volatility / 4.0;
            let high = round4(open.max(close) * (1.0 + wick * rng.random::<f64>()));
            let low = round4(open.min(close) * (1.0 - wick * rng.random::<f64>())).max(1e-4);
            let volume = (1e5 * (1.0 + rng.random::<f64>() * 9.0)).round();
            bars.push(PriceBar {
                stock_id: stock_id.clone(),
                date,
                open,
                high: high.max(open.max(close)),
                low: low.min(open.min(close)),
                close,
                volume,
            });
            prev_close = close;
        }
    }
    Ok(bars)
}

/// One simulated response, in the scoring input format plus its sample id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rollout {
    pub id: String,
    pub sample_id: String,
    pub text: String,
    pub truth_label: MovementLabel,
}

fn simulated_vote(rng: &mut impl Rng, truth: MovementLabel, accuracy: f64) -> MovementLabel {
    if rng.random::<f64>() < accuracy {
        return truth;
    }
    let others: Vec<MovementLabel> = MovementLabel::ALL.into_iter().filter(|&l| l != truth).collect();
    others[rng.random_range(0..2)]
}

fn round2(x: f64) -> f64 {
    (x * 100.0).round() / 100.0
}

/// A change percentage strictly inside the label's interval.
fn change_for(rng: &mut impl Rng, label: MovementLabel) -> f64 {
    match label {
        MovementLabel::Up => round2(rng.random_range(3.01..9.0)),
        MovementLabel::Down => round2(-rng.random_range(3.01..9.0)),
        MovementLabel::Hold => round2(rng.random_range(-2.99..2.99)),
    }
}

/// Simulate `votes_per_sample` well-formed responses per sample. Rollout ids
/// are `<sample_id>#<j>`; the ballots carry the same answers in the same order.
pub fn synth_rollouts(samples: &[LabeledSample], cfg: &SynthConfig) -> Result<(Vec<Rollout>, Vec<Ballot>)> {
    cfg.accuracy.validate()?;
    let mut rng = seed::rng(cfg.seed, "synth.rollouts");
    let mut rollouts = Vec::with_capacity(samples.len() * cfg.votes_per_sample);
    let mut ballots = Vec::with_capacity(samples.len());
    for s in samples {
        let sid = s.id();
        let mut votes = Vec::with_capacity(cfg.votes_per_sample);
        for j in 0..cfg.votes_per_sample {
            let answer = simulated_vote(&mut rng, s.label, cfg.accuracy.for_label(s.label));
            let (up, down) = match answer {
                MovementLabel::Up => (7.0, 3.0),
                MovementLabel::Down => (2.5, 6.5),
                MovementLabel::Hold => (4.0, 4.5),
            };
            let text = render(&ParsedResponse {
                reasoning_text: format!("Weighing evidence for {} on {}.", s.stock_id, s.date),
                evidence_scores: EvidenceScores { up, down },
                change_pct: change_for(&mut rng, answer),
                answer,
            })?;
            rollouts.push(Rollout {
                id: format!("{sid}#{j}"),
                sample_id: sid.clone(),
                text,
                truth_label: s.label,
            });
            votes.push(answer);
        }
        ballots.push(Ballot { sample_id: sid, votes });
    }
    Ok((rollouts, ballots))
}

/// Votes for the scaling experiments without response text: `n_samples`
/// truths cycling through the classes, each with `votes` simulated votes.
pub fn synth_balanced_ballots(
    n_samples: usize,
    votes: usize,
    accuracy: &AccuracyProfile,
    seed_root: u64,
) -> Result<(Vec<MovementLabel>, Vec<Vec<MovementLabel>>)> {
    accuracy.validate()?;
    let mut rng = seed::rng(seed_root, "synth.ballots");
    let truth: Vec<MovementLabel> = (0..n_samples).map(|i| MovementLabel::ALL[i % 3]).collect();
    let ballots = truth
        .iter()
        .map(|&t| (0..votes).map(|_| simulated_vote(&mut rng, t, accuracy.for_label(t))).collect())
        .collect();
    Ok((truth, ballots))
}
