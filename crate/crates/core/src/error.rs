// SPDX-License-Identifier: Apache-2.0

use thiserror::Error;

pub type Result<T, E = CoreError> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CoreError {
    /// Shapes or parameters that do not fit together.
    #[error("configuration error: {0}")]
    Config(String),

    /// A model failed validation; `layer` is the zero-based layer index.
    #[error("layer {layer}: {reason}")]
    Graph { layer: usize, reason: String },

    /// A caller broke an operation's precondition.
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("missing weight for output channel {oc}, tap ({ic}, {ki}, {kj})")]
    MissingWeight {
        oc: usize,
        ic: usize,
        ki: usize,
        kj: usize,
    },

    /// A K write-back reached the spiking buffer before its token's Q was complete.
    #[error("ordering violation: K write-back for channel {channel}, token {token} before Q completion")]
    Ordering { channel: usize, token: usize },

    #[error("simulation did not quiesce within {0} cycles")]
    Livelock(u64),
}

pub(crate) fn config<T>(msg: impl Into<String>) -> Result<T> {
    Err(CoreError::Config(msg.into()))
}
