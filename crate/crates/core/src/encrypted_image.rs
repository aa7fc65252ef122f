//! Encrypted rasters and encrypted histograms, with their file formats.
//!
//! `CPXI` image layout (big-endian):
//!
//! ```text
//! "CPXI" | version u8 | width u32 | height u32 | levels u32 | base u32
//!        | fingerprint [16] | precision exponent i32 | ciphertext width u32
//!        | width*height x (exponent i32 | ciphertext, ciphertext-width bytes)
//! ```
//!
//! Ciphertexts are stored at the fixed width of 2k bits, so an image costs
//! 2k + 32 bits per pixel plus the header. `CPXH` uses the same pixel record
//! for a vector of encrypted histogram bins.

use std::fs;
use std::path::Path;

use num_bigint::BigUint;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;

use crate::codec::{put_fixed, put_i32, put_u32, Reader};
use crate::encoding::{encode_integer, EncryptedNumber, Precision};
use crate::error::{Error, Result};
use crate::image::{PlainImage, RealImage};
use crate::paillier::{Entropy, KeyFingerprint, PrivateKey, PublicKey, RawCiphertext};

const IMAGE_MAGIC: &[u8; 4] = b"CPXI";
const HISTOGRAM_MAGIC: &[u8; 4] = b"CPXH";
const FORMAT_VERSION: u8 = 1;

/// One independent ChaCha20 seed per work item, drawn sequentially from the
/// caller's source so results do not depend on thread count.
pub(crate) fn derive_seeds<R: Entropy + ?Sized>(rng: &mut R, count: usize) -> Vec<[u8; 32]> {
    (0..count)
        .map(|_| {
            let mut seed = [0u8; 32];
            rng.fill_bytes(&mut seed);
            seed
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EncryptedImage {
    pub width: usize,
    pub height: usize,
    pub levels: u32,
    pub base: u32,
    pub precision_exponent: i32,
    pub fingerprint: KeyFingerprint,
    pub pixels: Vec<EncryptedNumber>,
}

impl EncryptedImage {
    pub fn precision(&self) -> Precision {
        Precision::from_exponent(self.precision_exponent, self.base)
            .expect("stored precision exponent is validated on construction")
    }

    pub fn get(&self, x: usize, y: usize) -> &EncryptedNumber {
        &self.pixels[y * self.width + x]
    }

    /// Same geometry and metadata with new pixels.
    pub fn with_pixels(&self, pixels: Vec<EncryptedNumber>, levels: u32) -> EncryptedImage {
        debug_assert_eq!(pixels.len(), self.pixels.len());
        EncryptedImage {
            width: self.width,
            height: self.height,
            levels,
            base: self.base,
            precision_exponent: self.precision_exponent,
            fingerprint: self.fingerprint,
            pixels,
        }
    }

    pub fn check_key(&self, pk: &PublicKey) -> Result<()> {
        if self.fingerprint != pk.fingerprint()
            || self.pixels.iter().any(|p| p.fingerprint != self.fingerprint)
        {
            return Err(Error::KeyMismatch);
        }
        Ok(())
    }

    pub fn to_bytes(&self, pk: &PublicKey) -> Result<Vec<u8>> {
        self.check_key(pk)?;
        let width = pk.ciphertext_bytes();
        let mut out = Vec::with_capacity(48 + self.pixels.len() * (4 + width));
        out.extend_from_slice(IMAGE_MAGIC);
        out.push(FORMAT_VERSION);
        put_u32(&mut out, self.width as u32);
        put_u32(&mut out, self.height as u32);
        put_u32(&mut out, self.levels);
        put_u32(&mut out, self.base);
        out.extend_from_slice(&self.fingerprint.0);
        put_i32(&mut out, self.precision_exponent);
        put_u32(&mut out, width as u32);
        write_numbers(&mut out, &self.pixels, width)?;
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        r.magic(IMAGE_MAGIC)?;
        let version = r.u8()?;
        if version != FORMAT_VERSION {
            return Err(Error::Version(version));
        }
        let width = r.u32()? as usize;
        let height = r.u32()? as usize;
        let levels = r.u32()?;
        let base = r.u32()?;
        let fingerprint = KeyFingerprint(r.take(16)?.try_into().unwrap());
        let precision_exponent = r.i32()?;
        Precision::from_exponent(precision_exponent, base)?;
        let cwidth = r.u32()? as usize;
        let count = width
            .checked_mul(height)
            .ok_or_else(|| Error::Format("image dimensions overflow".into()))?;
        if count == 0 {
            return Err(Error::Shape("empty encrypted image".into()));
        }
        if r.remaining() != count.saturating_mul(4 + cwidth) {
            return Err(Error::Format(format!(
                "expected {count} pixel records of {} bytes, found {} bytes",
                4 + cwidth,
                r.remaining()
            )));
        }
        let pixels = read_numbers(&mut r, count, cwidth, fingerprint, base)?;
        r.finish()?;
        Ok(EncryptedImage {
            width,
            height,
            levels,
            base,
            precision_exponent,
            fingerprint,
            pixels,
        })
    }

    pub fn write(&self, pk: &PublicKey, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes(pk)?)?;
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

fn write_numbers(out: &mut Vec<u8>, numbers: &[EncryptedNumber], width: usize) -> Result<()> {
    for p in numbers {
        put_i32(out, p.exponent);
        put_fixed(out, &p.ciphertext.0, width)?;
    }
    Ok(())
}

fn read_numbers(
    r: &mut Reader<'_>,
    count: usize,
    cwidth: usize,
    fingerprint: KeyFingerprint,
    base: u32,
) -> Result<Vec<EncryptedNumber>> {
    (0..count)
        .map(|_| {
            let exponent = r.i32()?;
            let ciphertext = RawCiphertext(BigUint::from_bytes_be(r.take(cwidth)?));
            Ok(EncryptedNumber {
                ciphertext,
                exponent,
                base,
                fingerprint,
            })
        })
        .collect()
}

/// Encodes every pixel at `precision` and encrypts it with fresh randomness.
pub fn encrypt_image<R: Entropy + ?Sized>(
    pk: &PublicKey,
    img: &PlainImage,
    precision: &Precision,
    rng: &mut R,
) -> Result<EncryptedImage> {
    let values: Vec<i64> = img.pixels().iter().map(|&p| i64::from(p)).collect();
    let pixels = encrypt_integers(pk, &values, precision, rng)?;
    Ok(EncryptedImage {
        width: img.width(),
        height: img.height(),
        levels: img.levels(),
        base: precision.base(),
        precision_exponent: precision.exponent(),
        fingerprint: pk.fingerprint(),
        pixels,
    })
}

const CHUNK: usize = 64;

fn encrypt_integers<R: Entropy + ?Sized>(
    pk: &PublicKey,
    values: &[i64],
    precision: &Precision,
    rng: &mut R,
) -> Result<Vec<EncryptedNumber>> {
    let seeds = derive_seeds(rng, values.len().div_ceil(CHUNK));
    let chunks: Vec<Result<Vec<EncryptedNumber>>> = values
        .par_chunks(CHUNK)
        .zip(seeds.into_par_iter())
        .map(|(chunk, seed)| {
            let mut rng = ChaCha20Rng::from_seed(seed);
            chunk
                .iter()
                .map(|&v| {
                    let en = encode_integer(pk, v, precision.exponent(), precision.base())?;
                    EncryptedNumber::encrypt(pk, &en, &mut rng)
                })
                .collect()
        })
        .collect();
    let mut out = Vec::with_capacity(values.len());
    for chunk in chunks {
        out.extend(chunk?);
    }
    Ok(out)
}

/// Decrypts and rounds every pixel to the nearest integer (ties away from
/// zero). With `clamp`, values saturate into `[0, levels - 1]`; without it,
/// an out-of-range value is an error.
pub fn decrypt_image(sk: &PrivateKey, eimg: &EncryptedImage, clamp: bool) -> Result<PlainImage> {
    eimg.check_key(sk.public_key())?;
    let pk = sk.public_key();
    let max = i64::from(eimg.levels - 1);
    let pixels: Vec<Result<u32>> = eimg
        .pixels
        .par_iter()
        .enumerate()
        .map(|(index, c)| {
            let en = c.decrypt_encoded(sk)?;
            let v = en.round_to_integer(pk)?;
            let v: i64 = (&v).try_into().unwrap_or(if v.sign() == num_bigint::Sign::Minus {
                i64::MIN
            } else {
                i64::MAX
            });
            if (0..=max).contains(&v) {
                Ok(v as u32)
            } else if clamp {
                Ok(v.clamp(0, max) as u32)
            } else {
                Err(Error::PixelRange {
                    index,
                    value: en.decode(pk)?,
                    max: eimg.levels - 1,
                })
            }
        })
        .collect();
    let pixels = pixels.into_iter().collect::<Result<Vec<_>>>()?;
    PlainImage::new(eimg.width, eimg.height, eimg.levels, pixels)
}

/// Decrypts without rounding; used for signed outputs such as gradients.
pub fn decrypt_real(sk: &PrivateKey, eimg: &EncryptedImage) -> Result<RealImage> {
    eimg.check_key(sk.public_key())?;
    let data = decrypt_numbers(sk, &eimg.pixels)?;
    RealImage::new(eimg.width, eimg.height, data)
}

pub fn decrypt_numbers(sk: &PrivateKey, numbers: &[EncryptedNumber]) -> Result<Vec<f64>> {
    let values: Vec<Result<f64>> = numbers.par_iter().map(|c| c.decrypt(sk)).collect();
    values.into_iter().collect()
}

/// Serialized bits per plaintext bit (8 bits per pixel).
pub fn expansion_factor(pk: &PublicKey, eimg: &EncryptedImage) -> Result<f64> {
    let bytes = eimg.to_bytes(pk)?.len();
    Ok((bytes * 8) as f64 / (eimg.width * eimg.height * 8) as f64)
}

/// Encrypted histogram bins (or the transformation returned for them),
/// plus the image size the client vouches for.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EncryptedHistogram {
    pub levels: u32,
    pub width: usize,
    pub height: usize,
    pub base: u32,
    pub precision_exponent: i32,
    pub fingerprint: KeyFingerprint,
    pub bins: Vec<EncryptedNumber>,
}

impl EncryptedHistogram {
    pub fn encrypt<R: Entropy + ?Sized>(
        pk: &PublicKey,
        counts: &[u64],
        width: usize,
        height: usize,
        precision: &Precision,
        rng: &mut R,
    ) -> Result<Self> {
        let values: Vec<i64> = counts.iter().map(|&c| c as i64).collect();
        Ok(EncryptedHistogram {
            levels: counts.len() as u32,
            width,
            height,
            base: precision.base(),
            precision_exponent: precision.exponent(),
            fingerprint: pk.fingerprint(),
            bins: encrypt_integers(pk, &values, precision, rng)?,
        })
    }

    pub fn precision(&self) -> Precision {
        Precision::from_exponent(self.precision_exponent, self.base)
            .expect("stored precision exponent is validated on construction")
    }

    pub fn check_key(&self, pk: &PublicKey) -> Result<()> {
        if self.fingerprint != pk.fingerprint()
            || self.bins.iter().any(|p| p.fingerprint != self.fingerprint)
        {
            return Err(Error::KeyMismatch);
        }
        Ok(())
    }

    pub fn decrypt(&self, sk: &PrivateKey) -> Result<Vec<f64>> {
        self.check_key(sk.public_key())?;
        decrypt_numbers(sk, &self.bins)
    }

    pub fn to_bytes(&self, pk: &PublicKey) -> Result<Vec<u8>> {
        self.check_key(pk)?;
        let width = pk.ciphertext_bytes();
        let mut out = Vec::new();
        out.extend_from_slice(HISTOGRAM_MAGIC);
        out.push(FORMAT_VERSION);
        put_u32(&mut out, self.levels);
        put_u32(&mut out, self.width as u32);
        put_u32(&mut out, self.height as u32);
        put_u32(&mut out, self.base);
        out.extend_from_slice(&self.fingerprint.0);
        put_i32(&mut out, self.precision_exponent);
        put_u32(&mut out, width as u32);
        put_u32(&mut out, self.bins.len() as u32);
        write_numbers(&mut out, &self.bins, width)?;
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        r.magic(HISTOGRAM_MAGIC)?;
        let version = r.u8()?;
        if version != FORMAT_VERSION {
            return Err(Error::Version(version));
        }
        let levels = r.u32()?;
        let width = r.u32()? as usize;
        let height = r.u32()? as usize;
        let base = r.u32()?;
        let fingerprint = KeyFingerprint(r.take(16)?.try_into().unwrap());
        let precision_exponent = r.i32()?;
        Precision::from_exponent(precision_exponent, base)?;
        let cwidth = r.u32()? as usize;
        let count = r.u32()? as usize;
        if r.remaining() != count.saturating_mul(4 + cwidth) {
            return Err(Error::Format("histogram length does not match header".into()));
        }
        let bins = read_numbers(&mut r, count, cwidth, fingerprint, base)?;
        r.finish()?;
        Ok(EncryptedHistogram {
            levels,
            width,
            height,
            base,
            precision_exponent,
            fingerprint,
            bins,
        })
    }

    pub fn write(&self, pk: &PublicKey, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes(pk)?)?;
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}
