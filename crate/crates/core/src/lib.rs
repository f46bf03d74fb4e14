//! Simulation and closed-form analysis of the k-keys version age of
//! information on gossip networks.
//!
//! A source broadcasts each update as `n` distinct keys, one per receiver.
//! Receivers gossip their own keys over Poisson-activated directed edges,
//! and a receiver that needs `k` extra keys decodes a version once `k`
//! distinct in-neighbours have forwarded it. The age of a receiver is the
//! number of versions it lags behind the source.
//!
//! * [`net`]: topology, SHN expansion, feasibility
//! * [`threshold`]: precision-rate function and required-key solver
//! * [`analysis`]: closed-form ages for the memory and memoryless schemes
//! * [`sim`]: deterministic discrete-event simulator
//! * [`stats`]: batch-means intervals, Monte Carlo oracles, geometric fits
//! * [`cli`]: configuration, commands and CSV output

use serde::{Deserialize, Serialize};

pub mod analysis;
pub mod cli;
pub mod net;
pub mod rng;
pub mod sim;
pub mod stats;
pub mod threshold;

/// Key retention scheme of the receivers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    /// Nodes keep and forward every own key received since the last
    /// activation of each out-edge.
    Memory,
    /// Nodes keep and forward only the latest own key.
    Memoryless,
}

impl Scheme {
    pub const ALL: [Scheme; 2] = [Scheme::Memory, Scheme::Memoryless];

    pub fn as_str(self) -> &'static str {
        match self {
            Scheme::Memory => "memory",
            Scheme::Memoryless => "memoryless",
        }
    }
}

impl std::fmt::Display for Scheme {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}
