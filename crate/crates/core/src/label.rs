use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;

/// Three-class price movement.
///
/// The derived order `Hold < Down < Up` is the crate-wide deterministic order
/// used for indexing confusion matrices and for stable sorting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MovementLabel {
    Hold,
    Down,
    Up,
}

impl MovementLabel {
    pub const ALL: [MovementLabel; 3] = [MovementLabel::Hold, MovementLabel::Down, MovementLabel::Up];

    pub fn index(self) -> usize {
        match self {
            MovementLabel::Hold => 0,
            MovementLabel::Down => 1,
            MovementLabel::Up => 2,
        }
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            MovementLabel::Hold => "hold",
            MovementLabel::Down => "down",
            MovementLabel::Up => "up",
        }
    }
}

impl fmt::Display for MovementLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MovementLabel {
    type Err = Error;

    /// Case-insensitive, surrounding whitespace ignored.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "up" => Ok(MovementLabel::Up),
            "down" => Ok(MovementLabel::Down),
            "hold" => Ok(MovementLabel::Hold),
            other => Err(Error::domain(format!("unknown movement label {other:?}"))),
        }
    }
}
