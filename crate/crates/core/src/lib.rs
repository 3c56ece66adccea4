//! Raw-waveform speaker recognition built on a trainable band-pass sinc
//! filterbank, with a family of angular-margin classification heads
//! (softmax, normalized softmax, additive angular margin, additive cosine
//! margin, and the difficulty-adaptive curricular head), analytic
//! backpropagation throughout, and both intra-dataset (FER/CER) and
//! inter-dataset (cosine-gallery identification) evaluation protocols.

pub mod battery;
pub mod checkpoint;
pub mod data;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod loss;
pub mod model;
pub mod ops;
pub mod optim;
pub mod sinc;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::{GradPair, Tensor};
