//! Episode engine and central server.

pub mod distributed;
pub mod engine;
pub mod node;
pub mod record;
pub mod server;

pub use engine::{compare, evaluate, train, Comparison, RunConfig, Session, TrainOutput};
pub use record::{EpisodeRecord, EpisodeSummary, StepRow};

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Allocation policy family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    /// Every slice always requests its isolation share.
    StaticBaseline,
    /// Independent DQN agents, no communication.
    MaVanilla,
    /// DQN agents that exchange discrete symbols.
    MaApplied,
    /// Symbols plus prioritized replay and a bottleneck encoder.
    MaIb,
}

impl Variant {
    pub const ALL: [Variant; 4] = [
        Variant::StaticBaseline,
        Variant::MaVanilla,
        Variant::MaApplied,
        Variant::MaIb,
    ];
    pub const LEARNED: [Variant; 3] = [Variant::MaVanilla, Variant::MaApplied, Variant::MaIb];

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "static-baseline" | "static" => Ok(Variant::StaticBaseline),
            "ma-vanilla" => Ok(Variant::MaVanilla),
            "ma-applied" => Ok(Variant::MaApplied),
            "ma-ib" => Ok(Variant::MaIb),
            other => Err(Error::config("run.variant", format!("unknown variant `{other}`"))),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Variant::StaticBaseline => "static-baseline",
            Variant::MaVanilla => "ma-vanilla",
            Variant::MaApplied => "ma-applied",
            Variant::MaIb => "ma-ib",
        }
    }

    pub fn learns(&self) -> bool {
        *self != Variant::StaticBaseline
    }

    pub fn communicates(&self) -> bool {
        matches!(self, Variant::MaApplied | Variant::MaIb)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Variant::parse(s)
    }
}
