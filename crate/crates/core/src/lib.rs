//! Link-level simulator and joint-design optimizer for a monostatic
//! full-duplex MIMO ISAC node.
//!
//! The node transmits downlink OFDM data through a partially-connected
//! hybrid beamformer and, at the same time, locates passive targets and
//! measures their velocity from the echoes of that transmission. Direct
//! self-interference is suppressed by a reduced-complexity analog tap
//! canceller followed by a least-squares digital canceller, while the target
//! echoes (which are also self-interference, but carry the sensing
//! information) are preserved.
//!
//! Module map:
//! - [`array_channel`]: steering vectors and DFT codebooks; radar, direct-SI
//!   and downlink channel synthesis.
//! - [`waveform`]: OFDM resource grids and reciprocal filtering.
//! - [`beamforming`]: analog beam selection and waterfilling precoding.
//! - [`cancellation`]: analog tap canceller and digital canceller.
//! - [`radar`]: DoA sweep spectrum, range-Doppler processing and target
//!   extraction, plus the sensing SINR metric.
//! - [`optimizer`]: the alternating rate-maximization loop under the power,
//!   hardware, saturation and sensing constraints.
//! - [`simulator`]: end-to-end frames and Monte-Carlo sweeps.
//! - [`link_budget`]: closed-form sensing range versus beamforming gain.
//! - [`cli`]: the `fdisac` command-line front end.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod array_channel;
pub mod beamforming;
pub mod cancellation;
pub mod cli;
pub mod error;
pub mod link_budget;
pub mod linalg;
pub mod optimizer;
pub mod radar;
pub mod rng;
pub mod scenario;
pub mod simulator;
pub mod units;
pub mod waveform;

pub use error::{Error, Infeasibility, Result};
