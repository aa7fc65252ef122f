//! Signed fixed-exponent encoding of reals over Z_n and arithmetic on the
//! encrypted form.
//!
//! A real `x` is carried as an integer mantissa `m` and a clear non-positive
//! exponent `e` with `x ≈ m * base^e`. Signed mantissas are folded into the
//! ring: `[0, max_int]` holds non-negative values, `[n - max_int, n)` holds
//! negatives as `n - |v|`, and anything strictly between is the overflow
//! zone, reported at decode time as [`Error::OverflowDetected`].
//!
//! Encrypted numbers pair a Paillier encryption of the folded mantissa with
//! the plaintext exponent. Addition aligns both operands to the smaller
//! exponent first (multiplying the other mantissa by a power of the base),
//! so sums are exact; multiplication by a plaintext scalar adds exponents
//! and is exact as long as the product stays inside its signed third.

use num_bigint::{BigInt, BigUint, Sign};
use num_integer::Integer;
use num_traits::{One, Pow, Signed, ToPrimitive, Zero};

use crate::codec::{put_i32, put_u32, Reader};
use crate::error::{Error, Result};
use crate::paillier::{Entropy, KeyFingerprint, PrivateKey, PublicKey, RawCiphertext};

pub const DEFAULT_BASE: u32 = 16;
pub const DEFAULT_PRECISION: f64 = 1e-8;

/// Requested resolution and the exponent it implies, ⌊log_base(value)⌋.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Precision {
    value: f64,
    base: u32,
    exponent: i32,
}

impl Precision {
    pub fn new(value: f64, base: u32) -> Result<Self> {
        if !(value > 0.0 && value <= 1.0) {
            return Err(Error::Parameter(format!(
                "precision must lie in (0, 1], got {value}"
            )));
        }
        if base < 2 {
            return Err(Error::Parameter(format!("base must be at least 2, got {base}")));
        }
        // The epsilon keeps exact powers (10^-8 in base 10) on the right side
        // of the floor despite log rounding.
        let exponent = (value.ln() / f64::from(base).ln() + 1e-9).floor() as i32;
        Ok(Precision {
            value,
            base,
            exponent: exponent.min(0),
        })
    }

    /// Precision whose exponent is given directly.
    pub fn from_exponent(exponent: i32, base: u32) -> Result<Self> {
        if exponent > 0 || base < 2 {
            return Err(Error::Parameter(format!(
                "invalid exponent {exponent} / base {base}"
            )));
        }
        Ok(Precision {
            value: f64::from(base).powi(exponent),
            base,
            exponent,
        })
    }

    pub fn value(&self) -> f64 {
        self.value
    }

    pub fn base(&self) -> u32 {
        self.base
    }

    pub fn exponent(&self) -> i32 {
        self.exponent
    }
}

impl Default for Precision {
    fn default() -> Self {
        Precision::new(DEFAULT_PRECISION, DEFAULT_BASE).unwrap()
    }
}

/// Plaintext `(mantissa, exponent)` pair with the mantissa folded into Z_n.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EncodedNumber {
    pub mantissa: BigUint,
    pub exponent: i32,
    pub base: u32,
}

/// Maps a signed integer into Z_n, rejecting magnitudes above `max_int`.
pub fn fold(pk: &PublicKey, v: &BigInt) -> Result<BigUint> {
    let magnitude = v.magnitude();
    if magnitude > pk.max_int() {
        return Err(Error::EncodingOverflow(v.to_f64().unwrap_or(f64::INFINITY)));
    }
    if v.is_negative() {
        Ok(pk.n() - magnitude)
    } else {
        Ok(magnitude.clone())
    }
}

/// Inverse of [`fold`]; the middle third is the overflow zone.
pub fn unfold(pk: &PublicKey, m: &BigUint) -> Result<BigInt> {
    if m >= pk.n() {
        return Err(Error::Range("mantissa not reduced mod n".into()));
    }
    if m <= pk.max_int() {
        return Ok(BigInt::from_biguint(Sign::Plus, m.clone()));
    }
    let neg = pk.n() - m;
    if neg <= *pk.max_int() {
        return Ok(-BigInt::from_biguint(Sign::Plus, neg));
    }
    Err(Error::OverflowDetected)
}

fn base_power(base: u32, k: u32) -> BigUint {
    BigUint::from(base).pow(k)
}

/// Splits a finite double into sign, integer significand and binary exponent
/// so that `x = ±significand * 2^exp2` exactly.
fn decompose(x: f64) -> (bool, u64, i32) {
    let bits = x.to_bits();
    let negative = bits >> 63 == 1;
    let biased = ((bits >> 52) & 0x7ff) as i32;
    let fraction = bits & ((1u64 << 52) - 1);
    if biased == 0 {
        (negative, fraction, -1074)
    } else {
        (negative, fraction | (1u64 << 52), biased - 1075)
    }
}

/// Rounds `num / 2^shift` to the nearest integer, ties away from zero.
fn round_shift(num: BigUint, shift: u32) -> BigUint {
    if shift == 0 {
        return num;
    }
    let q = &num >> shift;
    let rem = num - (&q << shift);
    if rem << 1u32 >= BigUint::one() << shift {
        q + 1u32
    } else {
        q
    }
}

/// Encodes `x` with mantissa `round(x / base^exponent)`.
pub fn encode_at(pk: &PublicKey, x: f64, exponent: i32, base: u32) -> Result<EncodedNumber> {
    if !x.is_finite() {
        return Err(Error::Parameter(format!("cannot encode non-finite value {x}")));
    }
    if exponent > 0 {
        return Err(Error::Parameter(format!("exponent must be non-positive, got {exponent}")));
    }
    let (negative, significand, exp2) = decompose(x);
    let scaled = BigUint::from(significand) * base_power(base, exponent.unsigned_abs());
    let magnitude = if exp2 >= 0 {
        scaled << exp2 as u32
    } else {
        round_shift(scaled, exp2.unsigned_abs())
    };
    if magnitude > *pk.max_int() {
        return Err(Error::EncodingOverflow(x));
    }
    let sign = if negative { Sign::Minus } else { Sign::Plus };
    let mantissa = fold(pk, &BigInt::from_biguint(sign, magnitude))?;
    Ok(EncodedNumber { mantissa, exponent, base })
}

pub fn encode(pk: &PublicKey, x: f64, precision: &Precision) -> Result<EncodedNumber> {
    encode_at(pk, x, precision.exponent(), precision.base())
}

/// Exact encoding of an integer at the given exponent.
pub fn encode_integer(pk: &PublicKey, v: i64, exponent: i32, base: u32) -> Result<EncodedNumber> {
    if exponent > 0 {
        return Err(Error::Parameter(format!("exponent must be non-positive, got {exponent}")));
    }
    let value = BigInt::from(v) * BigInt::from(base_power(base, exponent.unsigned_abs()));
    let mantissa = fold(pk, &value).map_err(|_| Error::EncodingOverflow(v as f64))?;
    Ok(EncodedNumber { mantissa, exponent, base })
}

impl EncodedNumber {
    pub fn signed_mantissa(&self, pk: &PublicKey) -> Result<BigInt> {
        unfold(pk, &self.mantissa)
    }

    pub fn decode(&self, pk: &PublicKey) -> Result<f64> {
        let v = self.signed_mantissa(pk)?;
        Ok(ratio_to_f64(&v, &base_power(self.base, self.exponent.unsigned_abs())))
    }

    /// Nearest integer to the encoded value, ties away from zero, computed
    /// without floating point.
    pub fn round_to_integer(&self, pk: &PublicKey) -> Result<BigInt> {
        let v = self.signed_mantissa(pk)?;
        let den = BigInt::from(base_power(self.base, self.exponent.unsigned_abs()));
        let (q, r) = v.magnitude().div_rem(den.magnitude());
        let q = if r << 1u32 >= *den.magnitude() { q + 1u32 } else { q };
        Ok(if v.is_negative() {
            -BigInt::from(q)
        } else {
            BigInt::from(q)
        })
    }
}

/// `num / den` as the nearest-ish double, valid for any sizes.
fn ratio_to_f64(num: &BigInt, den: &BigUint) -> f64 {
    let (q, r) = num.magnitude().div_rem(den);
    let whole = q.to_f64().unwrap_or(f64::INFINITY);
    let frac = if r.is_zero() {
        0.0
    } else {
        // scale both down so they fit a double without overflowing
        let excess = den.bits().saturating_sub(1000);
        let r = (r >> excess).to_f64().unwrap_or(0.0);
        let d = (den >> excess).to_f64().unwrap_or(f64::INFINITY);
        r / d
    };
    let magnitude = whole + frac;
    if num.is_negative() {
        -magnitude
    } else {
        magnitude
    }
}

/// Encrypted mantissa with its plaintext exponent.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EncryptedNumber {
    pub ciphertext: RawCiphertext,
    pub exponent: i32,
    pub base: u32,
    pub fingerprint: KeyFingerprint,
}

impl EncryptedNumber {
    pub fn encrypt<R: Entropy + ?Sized>(
        pk: &PublicKey,
        en: &EncodedNumber,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(EncryptedNumber {
            ciphertext: pk.encrypt_raw(&en.mantissa, rng)?,
            exponent: en.exponent,
            base: en.base,
            fingerprint: pk.fingerprint(),
        })
    }

    /// Encodes then encrypts.
    pub fn encrypt_real<R: Entropy + ?Sized>(
        pk: &PublicKey,
        x: f64,
        precision: &Precision,
        rng: &mut R,
    ) -> Result<Self> {
        Self::encrypt(pk, &encode(pk, x, precision)?, rng)
    }

    pub fn decrypt_encoded(&self, sk: &PrivateKey) -> Result<EncodedNumber> {
        if self.fingerprint != sk.public_key().fingerprint() {
            return Err(Error::KeyMismatch);
        }
        Ok(EncodedNumber {
            mantissa: sk.decrypt_raw(&self.ciphertext)?,
            exponent: self.exponent,
            base: self.base,
        })
    }

    pub fn decrypt(&self, sk: &PrivateKey) -> Result<f64> {
        self.decrypt_encoded(sk)?.decode(sk.public_key())
    }

    /// exponent (i32) ‖ ciphertext length (u32) ‖ ciphertext bytes, big-endian.
    pub fn to_bytes(&self) -> Vec<u8> {
        let c = self.ciphertext.0.to_bytes_be();
        let mut out = Vec::with_capacity(8 + c.len());
        put_i32(&mut out, self.exponent);
        put_u32(&mut out, c.len() as u32);
        out.extend_from_slice(&c);
        out
    }

    pub fn from_bytes(bytes: &[u8], fingerprint: KeyFingerprint, base: u32) -> Result<Self> {
        let mut r = Reader::new(bytes);
        let n = Self::read(&mut r, fingerprint, base)?;
        r.finish()?;
        Ok(n)
    }

    pub(crate) fn read(r: &mut Reader<'_>, fingerprint: KeyFingerprint, base: u32) -> Result<Self> {
        let exponent = r.i32()?;
        let len = r.u32()? as usize;
        let ciphertext = RawCiphertext(BigUint::from_bytes_be(r.take(len)?));
        Ok(EncryptedNumber {
            ciphertext,
            exponent,
            base,
            fingerprint,
        })
    }
}

fn check_key(pk: &PublicKey, c: &EncryptedNumber) -> Result<()> {
    if c.fingerprint != pk.fingerprint() {
        return Err(Error::KeyMismatch);
    }
    Ok(())
}

/// Lowers the exponent of `c` to `target` by scaling the encrypted mantissa
/// by `base^(c.exponent - target)`. Raising an exponent would need division.
pub fn align(pk: &PublicKey, c: &EncryptedNumber, target: i32) -> Result<EncryptedNumber> {
    check_key(pk, c)?;
    if target > c.exponent {
        return Err(Error::Alignment {
            from: c.exponent,
            to: target,
        });
    }
    if target == c.exponent {
        return Ok(c.clone());
    }
    let shift = (i64::from(c.exponent) - i64::from(target)) as u32;
    let factor = base_power(c.base, shift) % pk.n();
    Ok(EncryptedNumber {
        ciphertext: pk.scalar_mul(&c.ciphertext, &factor)?,
        exponent: target,
        base: c.base,
        fingerprint: c.fingerprint,
    })
}

/// `a ⊕ b`: exact sum at exponent `min(a.exponent, b.exponent)`.
pub fn add(pk: &PublicKey, a: &EncryptedNumber, b: &EncryptedNumber) -> Result<EncryptedNumber> {
    check_key(pk, a)?;
    check_key(pk, b)?;
    if a.base != b.base {
        return Err(Error::BaseMismatch(a.base, b.base));
    }
    let (a, b) = if a.exponent <= b.exponent {
        (a.clone(), align(pk, b, a.exponent)?)
    } else {
        (align(pk, a, b.exponent)?, b.clone())
    };
    Ok(EncryptedNumber {
        ciphertext: pk.add_cipher(&a.ciphertext, &b.ciphertext),
        exponent: a.exponent,
        base: a.base,
        fingerprint: a.fingerprint,
    })
}

/// `s ⊗ a` for a plaintext scalar: mantissas multiply, exponents add.
pub fn scalar_mul(pk: &PublicKey, a: &EncryptedNumber, s: &EncodedNumber) -> Result<EncryptedNumber> {
    check_key(pk, a)?;
    if a.base != s.base {
        return Err(Error::BaseMismatch(a.base, s.base));
    }
    let exponent = a
        .exponent
        .checked_add(s.exponent)
        .ok_or_else(|| Error::Parameter("exponent underflow".into()))?;
    Ok(EncryptedNumber {
        ciphertext: pk.scalar_mul(&a.ciphertext, &s.mantissa)?,
        exponent,
        base: a.base,
        fingerprint: a.fingerprint,
    })
}

/// `(-1) ⊗ a` with the scalar at exponent 0, so the exponent is unchanged.
pub fn negate(pk: &PublicKey, a: &EncryptedNumber) -> Result<EncryptedNumber> {
    scalar_mul(pk, a, &encode_integer(pk, -1, 0, a.base)?)
}

/// `a ⊖ b = a ⊕ ((-1) ⊗ b)`.
pub fn sub(pk: &PublicKey, a: &EncryptedNumber, b: &EncryptedNumber) -> Result<EncryptedNumber> {
    add(pk, a, &negate(pk, b)?)
}
