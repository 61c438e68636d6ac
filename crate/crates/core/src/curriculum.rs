//! Difficulty binning from rollout correctness counts.
//!
//! With `N` rollouts and `c` correct ones a sample is hard when `c < N/3`,
//! medium when `N/3 <= c < 2N/3`, and easy otherwise (including `c = N`).
//! Comparisons are done on `3c` against `N` and `2N` so no float rounding is
//! involved.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_ROLLOUTS: u32 = 8;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DifficultyRecord {
    pub sample_id: String,
    pub n_rollouts: u32,
    pub n_correct: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DifficultyBin {
    Easy,
    Medium,
    Hard,
}

impl fmt::Display for DifficultyBin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DifficultyBin::Easy => "easy",
            DifficultyBin::Medium => "medium",
            DifficultyBin::Hard => "hard",
        })
    }
}

fn check(n_correct: u32, n: u32) -> Result<()> {
    if n == 0 {
        return Err(Error::domain("number of rollouts must be at least 1"));
    }
    if n_correct > n {
        return Err(Error::domain(format!("n_correct {n_correct} exceeds rollouts {n}")));
    }
    Ok(())
}

pub fn bin(n_correct: u32, n: u32) -> Result<DifficultyBin> {
    check(n_correct, n)?;
    let c3 = 3 * u64::from(n_correct);
    let n = u64::from(n);
    Ok(if c3 < n {
        DifficultyBin::Hard
    } else if c3 < 2 * n {
        DifficultyBin::Medium
    } else {
        DifficultyBin::Easy
    })
}

/// Fraction of rollouts that were wrong.
pub fn difficulty(n_correct: u32, n: u32) -> Result<f64> {
    check(n_correct, n)?;
    Ok(f64::from(n - n_correct) / f64::from(n))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurriculumEntry {
    pub sample_id: String,
    pub bin: DifficultyBin,
    pub difficulty: f64,
    /// Position in the training order, starting at 0.
    pub rank: usize,
}

/// Keep medium samples only, easiest first. Ties go by sample id.
pub fn curriculum_order(records: &[DifficultyRecord]) -> Result<Vec<CurriculumEntry>> {
    let mut medium = Vec::new();
    for r in records {
        if bin(r.n_correct, r.n_rollouts)? == DifficultyBin::Medium {
            medium.push((difficulty(r.n_correct, r.n_rollouts)?, r));
        }
    }
    medium.sort_by(|(da, a), (db, b)| da.total_cmp(db).then_with(|| a.sample_id.cmp(&b.sample_id)));
    Ok(medium
        .into_iter()
        .enumerate()
        .map(|(rank, (difficulty, r))| CurriculumEntry {
            sample_id: r.sample_id.clone(),
            bin: DifficultyBin::Medium,
            difficulty,
            rank,
        })
        .collect())
}
