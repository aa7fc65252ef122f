//! Paillier cryptosystem over big unsigned integers.
//!
//! Uses the simplified generator g = n + 1, so g^m mod n^2 collapses to
//! 1 + m*n and encryption costs a single exponentiation r^n. Decryption
//! runs modulo p^2 and q^2 and recombines with the CRT.
//!
//! Homomorphic operations on [`RawCiphertext`]:
//!
//! * `E(a) * E(b) mod n^2` decrypts to `a + b mod n` ([`PublicKey::add_cipher`])
//! * `E(a)^d mod n^2` decrypts to `a * d mod n` ([`PublicKey::scalar_mul`])

mod prime;

use std::fmt;

use num_bigint::{BigUint, RandBigInt};
use num_integer::Integer;
use num_traits::{One, Zero};
use rand::{CryptoRng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use sha2::{Digest, Sha256};

use crate::codec::{put_biguint, put_u32, Reader};
use crate::error::{Error, Result};

pub use prime::{is_probable_prime, random_prime, MILLER_RABIN_ROUNDS};

/// Modulus sizes accepted by [`Keypair::generate`].
pub const SUPPORTED_KEY_BITS: [usize; 5] = [256, 512, 1024, 2048, 3072];

const PUBLIC_KEY_MAGIC: &[u8; 4] = b"CPXK";
const PRIVATE_KEY_MAGIC: &[u8; 4] = b"CPXS";
const KEY_FORMAT_VERSION: u8 = 1;

/// Entropy source for key generation and encryption.
pub trait Entropy: RngCore + CryptoRng {}
impl<T: RngCore + CryptoRng> Entropy for T {}

/// Deterministic entropy for reproducible tests and `--seed`.
pub fn seeded_rng(seed: u64) -> ChaCha20Rng {
    ChaCha20Rng::seed_from_u64(seed)
}

/// ChaCha20 seeded from the operating system.
pub fn os_rng() -> ChaCha20Rng {
    ChaCha20Rng::from_entropy()
}

/// First 128 bits of SHA-256 over the big-endian modulus.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct KeyFingerprint(pub [u8; 16]);

impl KeyFingerprint {
    pub fn of_modulus(n: &BigUint) -> Self {
        let digest = Sha256::digest(n.to_bytes_be());
        let mut out = [0u8; 16];
        out.copy_from_slice(&digest[..16]);
        KeyFingerprint(out)
    }
}

impl fmt::Display for KeyFingerprint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&hex::encode(self.0))
    }
}

impl fmt::Debug for KeyFingerprint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "KeyFingerprint({self})")
    }
}

/// A ciphertext in Z*_{n^2}.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RawCiphertext(pub BigUint);

impl RawCiphertext {
    pub fn value(&self) -> &BigUint {
        &self.0
    }
}

#[derive(Clone, PartialEq, Eq)]
pub struct PublicKey {
    n: BigUint,
    n_squared: BigUint,
    g: BigUint,
    max_int: BigUint,
    bits: usize,
    fingerprint: KeyFingerprint,
}

impl fmt::Debug for PublicKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PublicKey")
            .field("bits", &self.bits)
            .field("fingerprint", &self.fingerprint)
            .finish()
    }
}

impl PublicKey {
    pub fn from_modulus(n: BigUint) -> Result<Self> {
        if n < BigUint::from(15u32) || n.is_even() {
            return Err(Error::Range("modulus must be an odd composite".into()));
        }
        let n_squared = &n * &n;
        let g = &n + 1u32;
        let max_int = &n / 3u32;
        let bits = n.bits() as usize;
        let fingerprint = KeyFingerprint::of_modulus(&n);
        Ok(PublicKey {
            n,
            n_squared,
            g,
            max_int,
            bits,
            fingerprint,
        })
    }

    pub fn n(&self) -> &BigUint {
        &self.n
    }

    pub fn n_squared(&self) -> &BigUint {
        &self.n_squared
    }

    pub fn generator(&self) -> &BigUint {
        &self.g
    }

    /// Largest magnitude representable in either signed third, ⌊n/3⌋.
    pub fn max_int(&self) -> &BigUint {
        &self.max_int
    }

    pub fn bits(&self) -> usize {
        self.bits
    }

    pub fn fingerprint(&self) -> KeyFingerprint {
        self.fingerprint
    }

    /// Serialized width of one ciphertext: 2k bits.
    pub fn ciphertext_bytes(&self) -> usize {
        (2 * self.bits).div_ceil(8)
    }

    pub fn encrypt_raw<R: Entropy + ?Sized>(&self, m: &BigUint, rng: &mut R) -> Result<RawCiphertext> {
        if *m >= self.n {
            return Err(Error::Range("plaintext must be below n".into()));
        }
        let r = self.random_unit(rng);
        let rn = r.modpow(&self.n, &self.n_squared);
        Ok(RawCiphertext((self.g_pow(m) * rn) % &self.n_squared))
    }

    /// Encryption with r = 1. Not semantically secure on its own; only used
    /// for the additive identity of an empty sum.
    pub fn encrypt_trivial(&self, m: &BigUint) -> Result<RawCiphertext> {
        if *m >= self.n {
            return Err(Error::Range("plaintext must be below n".into()));
        }
        Ok(RawCiphertext(self.g_pow(m)))
    }

    /// (n+1)^m mod n^2 = 1 + m*n mod n^2.
    fn g_pow(&self, m: &BigUint) -> BigUint {
        (m * &self.n + 1u32) % &self.n_squared
    }

    fn random_unit<R: Entropy + ?Sized>(&self, rng: &mut R) -> BigUint {
        loop {
            let r = rng.gen_biguint_range(&BigUint::one(), &self.n);
            if r.gcd(&self.n).is_one() {
                return r;
            }
        }
    }

    /// Multiplies two ciphertexts; decrypts to the sum of the plaintexts mod n.
    pub fn add_cipher(&self, a: &RawCiphertext, b: &RawCiphertext) -> RawCiphertext {
        RawCiphertext((&a.0 * &b.0) % &self.n_squared)
    }

    /// Raises a ciphertext to the plaintext `d`; decrypts to `m * d mod n`.
    ///
    /// Scalars in the upper half of Z_n stand for negative values, so they
    /// are applied as `(a^-1)^(n - d)`, which decrypts identically and keeps
    /// the exponent short.
    pub fn scalar_mul(&self, a: &RawCiphertext, d: &BigUint) -> Result<RawCiphertext> {
        if *d >= self.n {
            return Err(Error::Range("scalar must be below n".into()));
        }
        if d.is_zero() {
            return Ok(RawCiphertext(BigUint::one()));
        }
        if d.is_one() {
            return Ok(a.clone());
        }
        let half = &self.n >> 1u32;
        if *d > half {
            let inv = self.invert(a)?;
            Ok(RawCiphertext(inv.0.modpow(&(&self.n - d), &self.n_squared)))
        } else {
            Ok(RawCiphertext(a.0.modpow(d, &self.n_squared)))
        }
    }

    /// Ciphertext whose plaintext is the additive inverse, `n - m`.
    pub fn invert(&self, a: &RawCiphertext) -> Result<RawCiphertext> {
        a.0.modinv(&self.n_squared)
            .map(RawCiphertext)
            .ok_or(Error::MalformedCiphertext)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + self.bits / 8);
        out.extend_from_slice(PUBLIC_KEY_MAGIC);
        out.push(KEY_FORMAT_VERSION);
        put_u32(&mut out, self.bits as u32);
        put_biguint(&mut out, &self.n);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        r.magic(PUBLIC_KEY_MAGIC)?;
        let version = r.u8()?;
        if version != KEY_FORMAT_VERSION {
            return Err(Error::Version(version));
        }
        let bits = r.u32()? as usize;
        let n = r.biguint()?;
        r.finish()?;
        let pk = PublicKey::from_modulus(n)?;
        if pk.bits != bits {
            return Err(Error::Format(format!(
                "public key header says {bits} bits, modulus has {}",
                pk.bits
            )));
        }
        Ok(pk)
    }
}

/// Factorization of n plus CRT decryption constants.
#[derive(Clone)]
pub struct PrivateKey {
    public: PublicKey,
    p: BigUint,
    q: BigUint,
    p_squared: BigUint,
    q_squared: BigUint,
    p_minus_one: BigUint,
    q_minus_one: BigUint,
    hp: BigUint,
    hq: BigUint,
    p_inv_mod_q: BigUint,
}

impl fmt::Debug for PrivateKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PrivateKey")
            .field("public", &self.public)
            .finish_non_exhaustive()
    }
}

impl PrivateKey {
    fn from_primes(p: BigUint, q: BigUint) -> Result<Self> {
        if p == q {
            return Err(Error::Range("p and q must differ".into()));
        }
        let (p, q) = if p < q { (p, q) } else { (q, p) };
        let public = PublicKey::from_modulus(&p * &q)?;
        let p_squared = &p * &p;
        let q_squared = &q * &q;
        let p_minus_one = &p - 1u32;
        let q_minus_one = &q - 1u32;
        let hp = h_function(public.generator(), &p, &p_squared, &p_minus_one)?;
        let hq = h_function(public.generator(), &q, &q_squared, &q_minus_one)?;
        let p_inv_mod_q = p
            .modinv(&q)
            .ok_or_else(|| Error::Range("p not invertible mod q".into()))?;
        Ok(PrivateKey {
            public,
            p,
            q,
            p_squared,
            q_squared,
            p_minus_one,
            q_minus_one,
            hp,
            hq,
            p_inv_mod_q,
        })
    }

    pub fn public_key(&self) -> &PublicKey {
        &self.public
    }

    pub fn p(&self) -> &BigUint {
        &self.p
    }

    pub fn q(&self) -> &BigUint {
        &self.q
    }

    pub fn decrypt_raw(&self, c: &RawCiphertext) -> Result<BigUint> {
        let n = self.public.n();
        if c.0 >= *self.public.n_squared() || c.0.is_zero() || !c.0.gcd(n).is_one() {
            return Err(Error::MalformedCiphertext);
        }
        let mp = l_function(&c.0.modpow(&self.p_minus_one, &self.p_squared), &self.p) * &self.hp
            % &self.p;
        let mq = l_function(&c.0.modpow(&self.q_minus_one, &self.q_squared), &self.q) * &self.hq
            % &self.q;
        // m = mp + p * ((mq - mp) * p^-1 mod q)
        let diff = (&mq + &self.q - (&mp % &self.q)) % &self.q;
        let t = diff * &self.p_inv_mod_q % &self.q;
        Ok(mp + t * &self.p)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(PRIVATE_KEY_MAGIC);
        out.push(KEY_FORMAT_VERSION);
        put_u32(&mut out, self.public.bits() as u32);
        put_biguint(&mut out, &self.p);
        put_biguint(&mut out, &self.q);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes);
        r.magic(PRIVATE_KEY_MAGIC)?;
        let version = r.u8()?;
        if version != KEY_FORMAT_VERSION {
            return Err(Error::Version(version));
        }
        let bits = r.u32()? as usize;
        let p = r.biguint()?;
        let q = r.biguint()?;
        r.finish()?;
        let sk = PrivateKey::from_primes(p, q)?;
        if sk.public.bits() != bits {
            return Err(Error::Format("private key bit length mismatch".into()));
        }
        Ok(sk)
    }
}

/// L_x(u) = (u - 1) / x
fn l_function(u: &BigUint, x: &BigUint) -> BigUint {
    (u - 1u32) / x
}

/// h_x = L_x(g^(x-1) mod x^2)^-1 mod x
fn h_function(g: &BigUint, x: &BigUint, x_squared: &BigUint, x_minus_one: &BigUint) -> Result<BigUint> {
    let l = l_function(&g.modpow(x_minus_one, x_squared), x) % x;
    l.modinv(x)
        .ok_or_else(|| Error::Range("generator has no inverse L value".into()))
}

#[derive(Clone, Debug)]
pub struct Keypair {
    pub public: PublicKey,
    pub private: PrivateKey,
}

impl Keypair {
    /// Generates a key whose modulus n has exactly `bits` bits.
    pub fn generate<R: Entropy + ?Sized>(bits: usize, rng: &mut R) -> Result<Keypair> {
        if !SUPPORTED_KEY_BITS.contains(&bits) {
            return Err(Error::UnsupportedKeySize(bits));
        }
        let half = bits / 2;
        let p = random_prime(half, rng);
        let q = loop {
            let q = random_prime(half, rng);
            if q != p {
                break q;
            }
        };
        Keypair::from_primes(p, q)
    }

    /// Builds a keypair from two distinct primes. Primality is not rechecked.
    pub fn from_primes(p: BigUint, q: BigUint) -> Result<Keypair> {
        let private = PrivateKey::from_primes(p, q)?;
        Ok(Keypair {
            public: private.public.clone(),
            private,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::OnceLock;

    fn key256() -> &'static Keypair {
        static KEY: OnceLock<Keypair> = OnceLock::new();
        KEY.get_or_init(|| Keypair::generate(256, &mut seeded_rng(42)).unwrap())
    }

    #[test]
    fn keygen_is_deterministic_under_seed() {
        let a = Keypair::generate(256, &mut seeded_rng(42)).unwrap();
        let b = Keypair::generate(256, &mut seeded_rng(42)).unwrap();
        assert_eq!(a.public, b.public);
        assert_eq!(a.private.p(), b.private.p());
    }

    #[test]
    fn keygen_512_has_exact_length() {
        let kp = Keypair::generate(512, &mut seeded_rng(7)).unwrap();
        assert_eq!(kp.public.n().bits(), 512);
        assert_eq!(kp.private.p() * kp.private.q(), *kp.public.n());
        assert_ne!(kp.private.p(), kp.private.q());
        assert_eq!(kp.private.p().bits(), 256);
    }

    #[test]
    fn keygen_rejects_unsupported_sizes() {
        for bits in [0, 128, 257, 4096] {
            assert!(matches!(
                Keypair::generate(bits, &mut seeded_rng(0)),
                Err(Error::UnsupportedKeySize(b)) if b == bits
            ));
        }
    }

    #[test]
    fn public_key_invariants() {
        let pk = &key256().public;
        assert_eq!(*pk.n_squared(), pk.n() * pk.n());
        assert_eq!(*pk.generator(), pk.n() + 1u32);
        let three = BigUint::from(3u32);
        assert!(&three * pk.max_int() <= *pk.n());
        assert!(*pk.n() < &three * (pk.max_int() + 1u32));
        assert_eq!(pk.ciphertext_bytes(), 64);
    }

    #[test]
    fn encrypt_zero_and_boundary() {
        let kp = key256();
        let mut rng = seeded_rng(1);
        let zero = kp.public.encrypt_raw(&BigUint::zero(), &mut rng).unwrap();
        assert!(kp.private.decrypt_raw(&zero).unwrap().is_zero());
        let top = kp.public.n() - 1u32;
        let c = kp.public.encrypt_raw(&top, &mut rng).unwrap();
        assert_eq!(kp.private.decrypt_raw(&c).unwrap(), top);
    }

    #[test]
    fn encrypt_rejects_out_of_range() {
        let kp = key256();
        let n = kp.public.n().clone();
        assert!(matches!(
            kp.public.encrypt_raw(&n, &mut seeded_rng(1)),
            Err(Error::Range(_))
        ));
    }

    #[test]
    fn textbook_decryption_agrees_with_crt() {
        // lambda/mu route as an independent check of the CRT path
        let kp = key256();
        let (p, q) = (kp.private.p(), kp.private.q());
        let n = kp.public.n();
        let n2 = kp.public.n_squared();
        let lambda = (p - 1u32).lcm(&(q - 1u32));
        let mu = l_function(&kp.public.generator().modpow(&lambda, n2), n)
            .modinv(n)
            .unwrap();
        let mut rng = seeded_rng(9);
        for _ in 0..50 {
            let m = rng.gen_biguint_below(n);
            let c = kp.public.encrypt_raw(&m, &mut rng).unwrap();
            let textbook = l_function(&c.0.modpow(&lambda, n2), n) * &mu % n;
            assert_eq!(textbook, m);
            assert_eq!(kp.private.decrypt_raw(&c).unwrap(), m);
        }
    }

    #[test]
    fn encryption_is_probabilistic() {
        let kp = key256();
        let mut rng = seeded_rng(5);
        let m = BigUint::from(1234u32);
        for _ in 0..100 {
            let a = kp.public.encrypt_raw(&m, &mut rng).unwrap();
            let b = kp.public.encrypt_raw(&m, &mut rng).unwrap();
            assert_ne!(a, b);
            assert_eq!(kp.private.decrypt_raw(&a).unwrap(), m);
            assert_eq!(kp.private.decrypt_raw(&b).unwrap(), m);
        }
    }

    #[test]
    fn small_sum_and_modular_wrap() {
        let kp = key256();
        let pk = &kp.public;
        let mut rng = seeded_rng(6);
        let a = pk.encrypt_raw(&BigUint::from(3u32), &mut rng).unwrap();
        let b = pk.encrypt_raw(&BigUint::from(5u32), &mut rng).unwrap();
        assert_eq!(kp.private.decrypt_raw(&pk.add_cipher(&a, &b)).unwrap(), BigUint::from(8u32));

        let a = pk.encrypt_raw(&(pk.n() - 1u32), &mut rng).unwrap();
        let b = pk.encrypt_raw(&BigUint::from(2u32), &mut rng).unwrap();
        assert_eq!(kp.private.decrypt_raw(&pk.add_cipher(&a, &b)).unwrap(), BigUint::one());
    }

    #[test]
    fn scalar_identity_and_annihilator() {
        let kp = key256();
        let pk = &kp.public;
        let c = pk.encrypt_raw(&BigUint::from(7u32), &mut seeded_rng(8)).unwrap();
        let one = pk.scalar_mul(&c, &BigUint::one()).unwrap();
        assert_eq!(kp.private.decrypt_raw(&one).unwrap(), BigUint::from(7u32));
        let zero = pk.scalar_mul(&c, &BigUint::zero()).unwrap();
        assert!(kp.private.decrypt_raw(&zero).unwrap().is_zero());
        assert!(matches!(pk.scalar_mul(&c, pk.n()), Err(Error::Range(_))));
    }

    #[test]
    fn negative_scalar_shortcut_matches_plain_exponentiation() {
        let kp = key256();
        let pk = &kp.public;
        let mut rng = seeded_rng(10);
        for _ in 0..20 {
            let m = rng.gen_biguint_below(pk.n());
            let d = pk.n() - rng.gen_biguint(64);
            let c = pk.encrypt_raw(&m, &mut rng).unwrap();
            let direct = RawCiphertext(c.0.modpow(&d, pk.n_squared()));
            let fast = pk.scalar_mul(&c, &d).unwrap();
            assert_eq!(
                kp.private.decrypt_raw(&direct).unwrap(),
                kp.private.decrypt_raw(&fast).unwrap()
            );
            assert_eq!(kp.private.decrypt_raw(&fast).unwrap(), (&m * &d) % pk.n());
        }
    }

    #[test]
    fn decrypt_rejects_non_units() {
        let kp = key256();
        let bad = RawCiphertext(kp.private.p().clone());
        assert!(matches!(kp.private.decrypt_raw(&bad), Err(Error::MalformedCiphertext)));
        let too_big = RawCiphertext(kp.public.n_squared().clone());
        assert!(matches!(kp.private.decrypt_raw(&too_big), Err(Error::MalformedCiphertext)));
    }

    #[test]
    fn key_files_round_trip() {
        let kp = key256();
        let pk_bytes = kp.public.to_bytes();
        assert_eq!(&pk_bytes[..4], b"CPXK");
        assert_eq!(pk_bytes[4], 1);
        assert_eq!(PublicKey::from_bytes(&pk_bytes).unwrap(), kp.public);
        let sk = PrivateKey::from_bytes(&kp.private.to_bytes()).unwrap();
        assert_eq!(sk.public_key(), &kp.public);
        let mut bad = pk_bytes.clone();
        bad[4] = 9;
        assert!(matches!(PublicKey::from_bytes(&bad), Err(Error::Version(9))));
    }

    #[test]
    fn fingerprints_distinguish_keys() {
        let a = Keypair::generate(256, &mut seeded_rng(1)).unwrap();
        assert_ne!(a.public.fingerprint(), key256().public.fingerprint());
        assert_eq!(a.public.fingerprint().to_string().len(), 32);
    }
}
