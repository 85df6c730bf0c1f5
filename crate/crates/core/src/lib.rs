//! Neural audio codec: a mirrored convolutional autoencoder with layer-wise
//! skip autoencoders, soft-to-hard quantization under an entropy target,
//! Huffman-coded bitstreams and an LPC residual front end.

pub mod autodiff;
pub mod bitstream;
pub mod codec;
pub mod config;
pub mod data;
pub mod dsp;
pub mod error;
pub mod eval;
pub mod exec;
pub mod model;
pub mod quant;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
