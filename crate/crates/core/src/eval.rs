//! Majority voting, F1 evaluation, inference-time scaling curves and the
//! uniform-random baseline band.

use std::collections::{BTreeMap, HashMap};

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::label::MovementLabel;
use crate::labeling::{LabeledSample, SplitTag};

pub const DEFAULT_VOTE_KS: [usize; 6] = [1, 2, 4, 8, 16, 32];
pub const DEFAULT_RANDOM_SEEDS: usize = 32;

/// Tie precedence, strongest first.
const TIE_PRECEDENCE: [MovementLabel; 3] = [MovementLabel::Hold, MovementLabel::Down, MovementLabel::Up];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ballot {
    pub sample_id: String,
    pub votes: Vec<MovementLabel>,
}

/// Plurality label. Ties go to `hold`, then `down`, then `up`.
pub fn majority_vote(votes: &[MovementLabel]) -> Result<MovementLabel> {
    if votes.is_empty() {
        return Err(Error::domain("cannot vote on an empty ballot"));
    }
    let mut counts = [0usize; 3];
    for v in votes {
        counts[v.index()] += 1;
    }
    let mut best = TIE_PRECEDENCE[0];
    for &label in &TIE_PRECEDENCE[1..] {
        if counts[label.index()] > counts[best.index()] {
            best = label;
        }
    }
    Ok(best)
}

/// 3x3 counts indexed `[truth][predicted]` in `hold, down, up` order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: [[u64; 3]; 3],
}

impl ConfusionMatrix {
    pub fn from_pairs(pairs: impl IntoIterator<Item = (MovementLabel, MovementLabel)>) -> Self {
        let mut cm = Self::default();
        for (t, p) in pairs {
            cm.add(t, p);
        }
        cm
    }

    pub fn add(&mut self, truth: MovementLabel, predicted: MovementLabel) {
        self.counts[truth.index()][predicted.index()] += 1;
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) {
        for i in 0..3 {
            for j in 0..3 {
                self.counts[i][j] += other.counts[i][j];
            }
        }
    }

    fn class_stats(&self, class: usize) -> (u64, u64, u64) {
        let tp = self.counts[class][class];
        let actual: u64 = self.counts[class].iter().sum();
        let predicted: u64 = (0..3).map(|t| self.counts[t][class]).sum();
        (tp, predicted - tp, actual - tp)
    }

    /// F1 per class in `hold, down, up` order. A class that is neither present
    /// nor predicted scores 0.
    pub fn per_class_f1(&self) -> [f64; 3] {
        let mut out = [0.0; 3];
        for (c, slot) in out.iter_mut().enumerate() {
            let (tp, fp, fn_) = self.class_stats(c);
            let denom = 2 * tp + fp + fn_;
            *slot = if denom == 0 { 0.0 } else { (2 * tp) as f64 / denom as f64 };
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum F1Average {
    #[default]
    Macro,
    Micro,
    /// Per-class F1 weighted by true-class support.
    Weighted,
}

/// Unweighted mean of the three per-class F1 scores.
pub fn macro_f1(cm: &ConfusionMatrix) -> Result<f64> {
    f1_score(cm, F1Average::Macro)
}

pub fn f1_score(cm: &ConfusionMatrix, average: F1Average) -> Result<f64> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::domain("F1 of an empty confusion matrix is undefined"));
    }
    let per_class = cm.per_class_f1();
    Ok(match average {
        F1Average::Macro => per_class.iter().sum::<f64>() / 3.0,
        F1Average::Micro => {
            // Single-label multiclass: micro F1 equals accuracy.
            (0..3).map(|c| cm.counts[c][c]).sum::<u64>() as f64 / total as f64
        }
        F1Average::Weighted => {
            (0..3)
                .map(|c| per_class[c] * cm.counts[c].iter().sum::<u64>() as f64)
                .sum::<f64>()
                / total as f64
        }
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubReport {
    pub count: u64,
    pub confusion: ConfusionMatrix,
    pub per_class_f1: BTreeMap<MovementLabel, f64>,
    pub macro_f1: f64,
}

impl SubReport {
    fn from_matrix(cm: ConfusionMatrix) -> Result<Self> {
        let per = cm.per_class_f1();
        Ok(Self {
            count: cm.total(),
            confusion: cm,
            per_class_f1: MovementLabel::ALL.iter().map(|&l| (l, per[l.index()])).collect(),
            macro_f1: macro_f1(&cm)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Votes aggregated per sample, when the report comes from a vote curve.
    pub k: Option<usize>,
    #[serde(flatten)]
    pub global: SubReport,
    /// Only non-empty subsets are listed.
    pub per_split: BTreeMap<SplitTag, SubReport>,
    pub per_label: BTreeMap<MovementLabel, SubReport>,
}

/// Evaluate `(truth, predicted, split)` triples.
pub fn evaluate(rows: &[(MovementLabel, MovementLabel, SplitTag)], k: Option<usize>) -> Result<EvalReport> {
    let mut global = ConfusionMatrix::default();
    let mut by_split: BTreeMap<SplitTag, ConfusionMatrix> = BTreeMap::new();
    let mut by_label: BTreeMap<MovementLabel, ConfusionMatrix> = BTreeMap::new();
    for &(truth, pred, split) in rows {
        global.add(truth, pred);
        by_split.entry(split).or_default().add(truth, pred);
        by_label.entry(truth).or_default().add(truth, pred);
    }
    Ok(EvalReport {
        k,
        global: SubReport::from_matrix(global)?,
        per_split: by_split
            .into_iter()
            .map(|(s, cm)| Ok((s, SubReport::from_matrix(cm)?)))
            .collect::<Result<_>>()?,
        per_label: by_label
            .into_iter()
            .map(|(l, cm)| Ok((l, SubReport::from_matrix(cm)?)))
            .collect::<Result<_>>()?,
    })
}

fn index_samples(samples: &[LabeledSample]) -> Result<HashMap<String, &LabeledSample>> {
    let mut by_id = HashMap::with_capacity(samples.len());
    for s in samples {
        if by_id.insert(s.id(), s).is_some() {
            return Err(Error::validation(format!("duplicate sample id {}", s.id())));
        }
    }
    Ok(by_id)
}

/// Global, per-split and per-truth-label report for one prediction per sample.
/// Every sample needs exactly one prediction and vice versa.
pub fn grouped_report(predictions: &[(String, MovementLabel)], samples: &[LabeledSample]) -> Result<EvalReport> {
    let by_id = index_samples(samples)?;
    if predictions.len() != samples.len() {
        return Err(Error::validation(format!(
            "{} predictions for {} samples",
            predictions.len(),
            samples.len()
        )));
    }
    let mut seen = std::collections::HashSet::with_capacity(predictions.len());
    let mut rows = Vec::with_capacity(predictions.len());
    for (id, pred) in predictions {
        let s = by_id
            .get(id)
            .ok_or_else(|| Error::validation(format!("prediction for unknown sample {id}")))?;
        if !seen.insert(id.as_str()) {
            return Err(Error::validation(format!("duplicate prediction for sample {id}")));
        }
        rows.push((s.label, *pred, s.split));
    }
    evaluate(&rows, None)
}

/// For each `k`, draw `k` votes per sample without replacement (seeded),
/// majority-vote them and evaluate.
pub fn vote_curve(
    ballots: &[Ballot],
    samples: &[LabeledSample],
    ks: &[usize],
    seed: u64,
) -> Result<Vec<EvalReport>> {
    let by_id = index_samples(samples)?;
    let max_k = ks.iter().copied().max().unwrap_or(0);
    if ks.contains(&0) {
        return Err(Error::domain("vote counts must be at least 1"));
    }
    let mut joined = Vec::with_capacity(ballots.len());
    for b in ballots {
        let s = by_id
            .get(&b.sample_id)
            .ok_or_else(|| Error::validation(format!("ballot for unknown sample {}", b.sample_id)))?;
        if b.votes.len() < max_k {
            return Err(Error::validation(format!(
                "sample {} has {} predictions, {max_k} needed",
                b.sample_id,
                b.votes.len()
            )));
        }
        joined.push((b, *s));
    }

    ks.iter()
        .map(|&k| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(k as u64);
            let mut picked = Vec::with_capacity(k);
            let rows: Vec<_> = joined
                .iter()
                .map(|(b, s)| {
                    picked.clear();
                    picked.extend(index::sample(&mut rng, b.votes.len(), k).into_iter().map(|i| b.votes[i]));
                    Ok((s.label, majority_vote(&picked)?, s.split))
                })
                .collect::<Result<_>>()?;
            evaluate(&rows, Some(k))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomBound {
    pub mean: f64,
    pub min: f64,
    pub max: f64,
    pub per_seed: Vec<f64>,
}

pub fn default_random_seeds() -> Vec<u64> {
    (0..DEFAULT_RANDOM_SEEDS as u64).collect()
}

/// Macro-F1 band of a predictor that picks uniformly among the three labels.
pub fn random_bound(truth: &[MovementLabel], seeds: &[u64]) -> Result<RandomBound> {
    if truth.is_empty() {
        return Err(Error::domain("random bound needs a non-empty test set"));
    }
    if seeds.is_empty() {
        return Err(Error::domain("random bound needs at least one seed"));
    }
    let per_seed: Vec<f64> = seeds
        .iter()
        .map(|&seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let cm = ConfusionMatrix::from_pairs(
                truth
                    .iter()
                    .map(|&t| (t, MovementLabel::ALL[rng.random_range(0..3)])),
            );
            macro_f1(&cm)
        })
        .collect::<Result<_>>()?;
    let mean = per_seed.iter().sum::<f64>() / per_seed.len() as f64;
    let min = per_seed.iter().copied().fold(f64::INFINITY, f64::min);
    let max = per_seed.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(RandomBound {
        mean,
        min,
        max,
        per_seed,
    })
}
