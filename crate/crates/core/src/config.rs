// SPDX-License-Identifier: Apache-2.0

//! Simulator constants, loaded from TOML.
//!
//! ```toml
//! [epa]
//! pe_rows = 8
//! pe_cols = 8
//! s_fifo_depth = 4
//! w_fifo_depth = 4
//! sdu_capacity = 64
//! sda_queue_depth = 4
//! overhead_cycles = 2
//! wmu_latency = 0
//! clock_hz = 2.0e8
//!
//! [power]
//! power_w = 0.792
//! kluts = 71.7
//! ```
//!
//! Every key is optional; missing keys take the defaults above.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::epa::EpaConfig;
use crate::error::{config, Result};
use crate::metrics::PowerModel;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub epa: EpaConfig,
    pub power: PowerModel,
}

impl SimConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: SimConfig = match toml::from_str(text) {
            Ok(c) => c,
            Err(e) => return config(format!("config: {}", e.message())),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        match std::fs::read_to_string(path) {
            Ok(text) => Self::from_toml_str(&text),
            Err(e) => config(format!("{}: {e}", path.display())),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.epa.validate()?;
        self.power.validate()
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}
