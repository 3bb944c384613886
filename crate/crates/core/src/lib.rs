//! Random position noise (RPN) augmentation for word-embedding tensors.
//!
//! RPN builds virtual training samples by swapping selected embedding
//! dimensions between words, using a random 0/1 position mask and a row
//! permutation shared by the mask and the extracted values. No gradient is
//! needed to produce the next virtual sample.
//!
//! Alongside RPN the crate carries the baselines it is compared with
//! (FreeLB adversarial perturbation, AEDA punctuation insertion, EDA swap and
//! deletion), a TextCNN classifier with hand-written gradients, the training
//! loops, and a throughput harness.

pub mod augment;
pub mod data;
pub mod dump;
pub mod error;
pub mod kv;
pub mod model;
pub mod rng;
pub mod tensor;
pub mod throughput;
pub mod train;

pub use augment::{FreeLbConfig, Method, RpnConfig};
pub use error::{Error, ErrorKind, Result};
pub use model::{EmbeddingBatch, GradientSet, Sgd, TextCnn, TextCnnConfig};
pub use rng::RngStream;
pub use tensor::{DenseTensor, Permutation};
