//! Cross-domain transfer learning from photographs to illustrations.

pub mod dataset;
pub mod eval;
pub mod network;
pub mod rng;
pub mod svm;
pub mod tensor;
pub mod transfer;
