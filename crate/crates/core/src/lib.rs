//! Image processing on Paillier-encrypted images.
//!
//! A client encrypts a grayscale or binary image pixel by pixel, a server
//! evaluates linear image operations on the ciphertexts with only the public
//! key, and the client decrypts and applies any finishing step.

pub mod client;
pub mod encoding;
pub mod encrypted_image;
pub mod error;
pub mod image;
pub mod kernel;
pub mod ops;
pub mod paillier;
pub mod reference;
pub mod transport;
pub mod bench;

mod codec;

pub use error::{Error, Result};
