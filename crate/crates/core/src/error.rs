use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("unsupported key size {0} bits (expected 256, 512, 1024, 2048 or 3072)")]
    UnsupportedKeySize(usize),

    #[error("value out of range: {0}")]
    Range(String),

    #[error("malformed ciphertext")]
    MalformedCiphertext,

    #[error("key mismatch: operands were encrypted under different public keys")]
    KeyMismatch,

    #[error("encoding overflow: |{0}| does not fit in the positive third of the ring")]
    EncodingOverflow(f64),

    #[error("overflow detected: decrypted mantissa lies in the forbidden middle third")]
    OverflowDetected,

    #[error("cannot align exponent {from} up to {to}")]
    Alignment { from: i32, to: i32 },

    #[error("base mismatch: {0} vs {1}")]
    BaseMismatch(u32, u32),

    #[error("shape error: {0}")]
    Shape(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("pixel value {value} at index {index} outside [0, {max}]")]
    PixelRange { index: usize, value: f64, max: u32 },

    #[error("format error: {0}")]
    Format(String),

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("unsupported protocol version {0}")]
    Version(u8),

    #[error("server returned error {code}: {message}")]
    Remote { code: u16, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
