//! Augmentation strategies.
//!
//! Embedding-level methods ([`rpn`], [`freelb`]) act on an
//! [`EmbeddingBatch`]; token-level methods ([`token`]) act on token lists
//! before encoding.

pub mod freelb;
pub mod rpn;
pub mod token;

use std::fmt;
use std::str::FromStr;

pub use freelb::{freelb_init, freelb_update, FreeLbConfig};
pub use rpn::{rpn_augment, rpn_step, rpn_trajectory, PositionMask, RpnConfig, RpnStep, RpnVariant, ShuffleScope};
pub use token::{aeda, eda_lite, EdaOp};

use crate::error::Result;
use crate::model::EmbeddingBatch;
use crate::rng::RngStream;

/// Produces virtual samples from an embedded batch alone. Implementors see
/// no model and no gradient.
pub trait EmbeddingAugmentor {
    fn virtual_samples(&self, x: &EmbeddingBatch, rng: &RngStream) -> Result<Vec<EmbeddingBatch>>;
}

impl EmbeddingAugmentor for RpnConfig {
    fn virtual_samples(&self, x: &EmbeddingBatch, rng: &RngStream) -> Result<Vec<EmbeddingBatch>> {
        rpn_augment(x, self, rng)
    }
}

/// Augmentation method names shared by training and benchmarking.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    Rpn,
    FreeLb,
    Aeda,
    EdaLite,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Rpn, Method::FreeLb, Method::Aeda, Method::EdaLite];

    pub fn is_token_level(self) -> bool {
        matches!(self, Method::Aeda | Method::EdaLite)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Rpn => "rpn",
            Method::FreeLb => "freelb",
            Method::Aeda => "aeda",
            Method::EdaLite => "eda_lite",
        })
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Method::ALL
            .into_iter()
            .find(|m| m.to_string() == s)
            .ok_or_else(|| format!("unknown augmentation method {s:?}"))
    }
}
