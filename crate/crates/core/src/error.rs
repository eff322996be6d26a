use std::fmt;

use serde::Serialize;
use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Input outside the mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("unsupported QAM order {0} (expected 4, 16, 64 or 256)")]
    UnsupportedQamOrder(u32),

    /// The optimization problem has no admissible operating point.
    #[error("infeasible: {0}")]
    Infeasible(Infeasibility),

    /// Scenario / config validation failure, with the offending field path.
    #[error("config error at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub fn dims(msg: impl Into<String>) -> Self {
        Error::DimensionMismatch(msg.into())
    }

    pub fn config(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            path: path.into(),
            message: message.into(),
        }
    }
}

/// Which constraint could not be met, with enough detail to act on it.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "constraint", rename_all = "snake_case")]
pub enum Infeasibility {
    /// Residual SI at an RX chain input stays above its ceiling (C3).
    Saturation {
        rx_chain: usize,
        residual_dbm: f64,
        ceiling_dbm: f64,
        shortfall_db: f64,
    },
    /// A target cannot reach the sensing SINR floor even with the fully
    /// sensing-aligned precoder (C4).
    Sensing {
        worst_target: usize,
        sinr_db: f64,
        required_db: f64,
    },
    /// Sensing objective mode: the rate floor cannot be met.
    RateFloor { rate_bps_hz: f64, required_bps_hz: f64 },
}

impl fmt::Display for Infeasibility {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Infeasibility::Saturation {
                rx_chain,
                residual_dbm,
                ceiling_dbm,
                shortfall_db,
            } => write!(
                f,
                "RX chain {rx_chain} residual SI {residual_dbm:.2} dBm exceeds ceiling {ceiling_dbm:.2} dBm by {shortfall_db:.2} dB"
            ),
            Infeasibility::Sensing {
                worst_target,
                sinr_db,
                required_db,
            } => write!(
                f,
                "target {worst_target} sensing SINR {sinr_db:.2} dB below required {required_db:.2} dB"
            ),
            Infeasibility::RateFloor {
                rate_bps_hz,
                required_bps_hz,
            } => write!(
                f,
                "rate {rate_bps_hz:.3} bps/Hz below floor {required_bps_hz:.3} bps/Hz"
            ),
        }
    }
}
