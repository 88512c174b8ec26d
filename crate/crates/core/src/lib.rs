//! Link-level simulation and optimization for multi-IRS (intelligent
//! reflecting surface) networks with multi-hop beam routing.
//!
//! The crate is split along the signal chain:
//!
//! - [`scene`]: deployment geometry and the directed LoS graph.
//! - [`channel`]: Rician/Rayleigh link synthesis and cascaded channel evaluation.
//! - [`codebook`]: DFT codebooks and Kronecker-composed 3D passive beams.
//! - [`training`]: distributed active/passive beam training producing beam
//!   routing tables (BRTs).
//! - [`routing`]: BRT-based path gain estimation and longest-path beam routing.
//! - [`baselines`]: exhaustive and sequential beam search.
//! - [`harness`]: presets, Monte-Carlo sweeps, CSV output.
//!
//! Node numbering follows one convention everywhere: node `0` is the BS,
//! nodes `1..=J` are IRSs and node `J + 1` is the user. Codebook indices are
//! 0-based in the API and 1-based in every text export.

pub mod baselines;
pub mod channel;
pub mod codebook;
pub mod error;
pub mod harness;
pub mod routing;
pub mod scene;
pub mod training;

pub use error::{Error, Result};
pub use num_complex::Complex64;

/// Identifier of a vertex of the LoS graph.
pub type NodeId = usize;
