//! The four cooperative grid environments and their registry.

mod escape;
mod gathering;
mod grid;
mod honeycomb;
mod oracle;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use escape::{EscapeConfig, EscapeEnv};
pub use gathering::{GatheringConfig, GatheringEnv};
pub use honeycomb::{HexCoord, HoneycombConfig, HoneycombEnv};
pub use oracle::{OracleConfig, OracleEnv, UNKNOWN as ORACLE_UNKNOWN};

use crate::dec_pomdp::Environment;
use crate::error::Result;

/// Environment section of an experiment config, tagged by registry name.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "lowercase")]
pub enum EnvConfig {
    Oracle(OracleConfig),
    Gathering(GatheringConfig),
    Escape(EscapeConfig),
    Honeycomb(HoneycombConfig),
}

impl EnvConfig {
    pub fn name(&self) -> &'static str {
        match self {
            EnvConfig::Oracle(_) => "oracle",
            EnvConfig::Gathering(_) => "gathering",
            EnvConfig::Escape(_) => "escape",
            EnvConfig::Honeycomb(_) => "honeycomb",
        }
    }

    /// Default configuration for a registry name.
    pub fn by_name(name: &str) -> Option<Self> {
        Some(match name {
            "oracle" => EnvConfig::Oracle(OracleConfig::default()),
            "gathering" => EnvConfig::Gathering(GatheringConfig::default()),
            "escape" => EnvConfig::Escape(EscapeConfig::default()),
            "honeycomb" => EnvConfig::Honeycomb(HoneycombConfig::default()),
            _ => return None,
        })
    }

    pub fn build(&self) -> Result<Box<dyn Environment>> {
        Ok(match self {
            EnvConfig::Oracle(c) => Box::new(OracleEnv::new(c.clone())?),
            EnvConfig::Gathering(c) => Box::new(GatheringEnv::new(c.clone())?),
            EnvConfig::Escape(c) => Box::new(EscapeEnv::new(c.clone())?),
            EnvConfig::Honeycomb(c) => Box::new(HoneycombEnv::new(c.clone())?),
        })
    }

    /// Hex SHA-256 of the canonical JSON encoding.
    pub fn digest(&self) -> String {
        let canonical = serde_json::to_vec(self).expect("env config serializes");
        hex::encode(Sha256::digest(&canonical))
    }
}

pub const ENV_NAMES: [&str; 4] = ["oracle", "gathering", "escape", "honeycomb"];
