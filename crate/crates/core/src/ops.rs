//! Server-side operations on encrypted images.
//!
//! Everything here works from the public key and ciphertexts alone. Pixel
//! outputs are independent and computed in parallel.

use rayon::prelude::*;

use crate::encoding::{self, encode, EncryptedNumber, Precision};
use crate::encrypted_image::{EncryptedHistogram, EncryptedImage};
use crate::error::{Error, Result};
use crate::kernel::{Kernel, StructuringElement};
use crate::paillier::{Entropy, PublicKey, RawCiphertext};

/// Wire-stable operation identifiers.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
#[repr(u16)]
pub enum OpId {
    Negate = 1,
    Brightness = 2,
    Convolve = 3,
    Gradient = 4,
    Sharpen = 5,
    MorphSum = 6,
    EqualizeTransform = 7,
}

impl OpId {
    pub const ALL: [OpId; 7] = [
        OpId::Negate,
        OpId::Brightness,
        OpId::Convolve,
        OpId::Gradient,
        OpId::Sharpen,
        OpId::MorphSum,
        OpId::EqualizeTransform,
    ];

    pub fn from_u16(v: u16) -> Option<OpId> {
        OpId::ALL.into_iter().find(|op| *op as u16 == v)
    }
}

/// Reflect-101 border index (`gfedcb|abcdefgh|gfedcba`).
pub fn reflect101(i: isize, len: usize) -> usize {
    if len == 1 {
        return 0;
    }
    let n = len as isize;
    let mut i = i;
    loop {
        if i < 0 {
            i = -i;
        } else if i >= n {
            i = 2 * n - 2 - i;
        } else {
            return i as usize;
        }
    }
}

fn collect_pixels(results: Vec<Result<EncryptedNumber>>) -> Result<Vec<EncryptedNumber>> {
    results.into_iter().collect()
}

/// Empty-sum result: the additive identity at a given exponent.
fn zero_at(pk: &PublicKey, like: &EncryptedNumber, exponent: i32) -> Result<EncryptedNumber> {
    Ok(EncryptedNumber {
        ciphertext: pk.encrypt_trivial(&num_bigint::BigUint::default())?,
        exponent,
        base: like.base,
        fingerprint: like.fingerprint,
    })
}

/// `⟦L-1⟧ ⊖ ⟦i⟧` for every pixel. The constant is encrypted once per call.
pub fn negate<R: Entropy + ?Sized>(
    pk: &PublicKey,
    eimg: &EncryptedImage,
    rng: &mut R,
) -> Result<EncryptedImage> {
    eimg.check_key(pk)?;
    let max = EncryptedNumber::encrypt_real(pk, f64::from(eimg.levels - 1), &eimg.precision(), rng)?;
    let pixels = eimg
        .pixels
        .par_iter()
        .map(|p| encoding::sub(pk, &max, p))
        .collect();
    Ok(eimg.with_pixels(collect_pixels(pixels)?, eimg.levels))
}

/// `⟦i⟧ ⊕ ⟦v⟧` for every pixel; saturation is left to the client.
pub fn brightness(pk: &PublicKey, eimg: &EncryptedImage, v: &EncryptedNumber) -> Result<EncryptedImage> {
    eimg.check_key(pk)?;
    if v.fingerprint != pk.fingerprint() {
        return Err(Error::KeyMismatch);
    }
    let pixels = eimg
        .pixels
        .par_iter()
        .map(|p| encoding::add(pk, p, v))
        .collect();
    Ok(eimg.with_pixels(collect_pixels(pixels)?, eimg.levels))
}

/// Ciphertexts of the negated pixels, shared by every negative tap.
fn invert_all(pk: &PublicKey, eimg: &EncryptedImage) -> Result<Vec<RawCiphertext>> {
    eimg.pixels
        .par_iter()
        .map(|p| pk.invert(&p.ciphertext))
        .collect()
}

struct EncodedTap {
    dy: isize,
    dx: isize,
    negative: bool,
    magnitude: encoding::EncodedNumber,
}

fn check_kernel_fits(eimg: &EncryptedImage, rows: usize, cols: usize) -> Result<()> {
    if rows > eimg.height || cols > eimg.width {
        return Err(Error::Shape(format!(
            "{rows}x{cols} window larger than {}x{} image",
            eimg.width, eimg.height
        )));
    }
    Ok(())
}

fn convolve_with(
    pk: &PublicKey,
    eimg: &EncryptedImage,
    inverted: Option<&[RawCiphertext]>,
    kernel: &Kernel,
) -> Result<EncryptedImage> {
    check_kernel_fits(eimg, kernel.rows(), kernel.cols())?;
    let precision = eimg.precision();
    let taps: Vec<EncodedTap> = kernel
        .taps()
        .map(|(dy, dx, w)| {
            Ok(EncodedTap {
                dy,
                dx,
                negative: w < 0.0,
                magnitude: encode(pk, w.abs(), &precision)?,
            })
        })
        .collect::<Result<_>>()?;
    let scale = if kernel.post_scale() == 1.0 {
        None
    } else {
        Some(encode(pk, kernel.post_scale(), &precision)?)
    };
    let (w, h) = (eimg.width, eimg.height);
    let pixels = (0..w * h)
        .into_par_iter()
        .map(|idx| {
            let (x, y) = ((idx % w) as isize, (idx / w) as isize);
            let mut acc: Option<EncryptedNumber> = None;
            for tap in &taps {
                let src = reflect101(y + tap.dy, h) * w + reflect101(x + tap.dx, w);
                let mut c = eimg.pixels[src].clone();
                if tap.negative {
                    c.ciphertext = inverted.expect("inverted pixels computed for negative taps")[src].clone();
                }
                let term = encoding::scalar_mul(pk, &c, &tap.magnitude)?;
                acc = Some(match acc {
                    None => term,
                    Some(a) => encoding::add(pk, &a, &term)?,
                });
            }
            let first = &eimg.pixels[idx];
            let sum = match acc {
                Some(a) => a,
                None => zero_at(pk, first, first.exponent + precision.exponent())?,
            };
            match &scale {
                Some(s) => encoding::scalar_mul(pk, &sum, s),
                None => Ok(sum),
            }
        })
        .collect();
    Ok(eimg.with_pixels(collect_pixels(pixels)?, eimg.levels))
}

fn has_negative(kernel: &Kernel) -> bool {
    kernel.weights().iter().any(|&w| w < 0.0)
}

/// Spatial filter: Σ encoded(weight) ⊗ ⟦pixel⟧ over the window, reflect-101
/// borders, then one final ⊗ by the encoded post-scale.
pub fn convolve(pk: &PublicKey, eimg: &EncryptedImage, kernel: &Kernel) -> Result<EncryptedImage> {
    eimg.check_key(pk)?;
    let inverted = if has_negative(kernel) {
        Some(invert_all(pk, eimg)?)
    } else {
        None
    };
    convolve_with(pk, eimg, inverted.as_deref(), kernel)
}

/// Encrypted gradient components `(⟦Gx⟧, ⟦Gy⟧)`, unscaled and signed.
pub fn gradient(
    pk: &PublicKey,
    eimg: &EncryptedImage,
    h1: &Kernel,
    h2: &Kernel,
) -> Result<(EncryptedImage, EncryptedImage)> {
    eimg.check_key(pk)?;
    let inverted = if has_negative(h1) || has_negative(h2) {
        Some(invert_all(pk, eimg)?)
    } else {
        None
    };
    let gx = convolve_with(pk, eimg, inverted.as_deref(), h1)?;
    let gy = convolve_with(pk, eimg, inverted.as_deref(), h2)?;
    Ok((gx, gy))
}

/// High-boost filtering: `((k+1) ⊗ ⟦I⟧) ⊖ (k ⊗ ⟦I_lpf⟧)`. `k = 1` is unsharp
/// masking.
pub fn sharpen(pk: &PublicKey, eimg: &EncryptedImage, k: f64, lpf: &Kernel) -> Result<EncryptedImage> {
    if !(k > 0.0 && k.is_finite()) {
        return Err(Error::Parameter(format!("sharpening amount must be positive, got {k}")));
    }
    let blurred = convolve(pk, eimg, lpf)?;
    let precision = eimg.precision();
    let boost = encode(pk, k + 1.0, &precision)?;
    let amount = encode(pk, k, &precision)?;
    let pixels = eimg
        .pixels
        .par_iter()
        .zip(blurred.pixels.par_iter())
        .map(|(orig, low)| {
            let a = encoding::scalar_mul(pk, orig, &boost)?;
            let b = encoding::scalar_mul(pk, low, &amount)?;
            encoding::sub(pk, &a, &b)
        })
        .collect();
    Ok(eimg.with_pixels(collect_pixels(pixels)?, eimg.levels))
}

/// Neighbourhood counts `⟦L⟧` of a binary image under the set cells of `se`,
/// with out-of-image cells contributing zero. Thresholding is client-side.
pub fn morph_sum(
    pk: &PublicKey,
    eimg: &EncryptedImage,
    se: &StructuringElement,
) -> Result<EncryptedImage> {
    eimg.check_key(pk)?;
    if eimg.levels != 2 {
        return Err(Error::Parameter(format!(
            "morphology needs a binary image, got {} levels",
            eimg.levels
        )));
    }
    check_kernel_fits(eimg, se.rows(), se.cols())?;
    let offsets: Vec<(isize, isize)> = se.offsets().collect();
    let (w, h) = (eimg.width as isize, eimg.height as isize);
    let pixels = (0..eimg.pixels.len())
        .into_par_iter()
        .map(|idx| {
            let (x, y) = (idx as isize % w, idx as isize / w);
            let mut acc: Option<EncryptedNumber> = None;
            for &(dy, dx) in &offsets {
                let (sx, sy) = (x + dx, y + dy);
                if sx < 0 || sy < 0 || sx >= w || sy >= h {
                    continue;
                }
                let c = &eimg.pixels[(sy * w + sx) as usize];
                acc = Some(match acc {
                    None => c.clone(),
                    Some(a) => encoding::add(pk, &a, c)?,
                });
            }
            match acc {
                Some(a) => Ok(a),
                None => {
                    let first = &eimg.pixels[idx];
                    zero_at(pk, first, first.exponent)
                }
            }
        })
        .collect();
    Ok(eimg.with_pixels(collect_pixels(pixels)?, se.ones_count() as u32 + 1))
}

/// Equalization transform from encrypted histogram bins: running sums
/// `⟦Hc(p)⟧ = ⟦Hc(p-1)⟧ ⊕ ⟦H(p)⟧`, each scaled by `(G-1)/(w*l)`.
pub fn equalize_transform(
    pk: &PublicKey,
    bins: &[EncryptedNumber],
    levels: usize,
    width: usize,
    height: usize,
    precision: &Precision,
) -> Result<Vec<EncryptedNumber>> {
    if bins.len() != levels {
        return Err(Error::Shape(format!(
            "histogram has {} bins, expected {levels}",
            bins.len()
        )));
    }
    if levels < 2 || width == 0 || height == 0 {
        return Err(Error::Parameter("degenerate histogram parameters".into()));
    }
    let mut cumulative = Vec::with_capacity(levels);
    let mut running: Option<EncryptedNumber> = None;
    for bin in bins {
        let next = match running {
            None => {
                if bin.fingerprint != pk.fingerprint() {
                    return Err(Error::KeyMismatch);
                }
                bin.clone()
            }
            Some(ref r) => encoding::add(pk, r, bin)?,
        };
        cumulative.push(next.clone());
        running = Some(next);
    }
    let scale = encode(pk, (levels - 1) as f64 / (width * height) as f64, precision)?;
    cumulative
        .par_iter()
        .map(|c| encoding::scalar_mul(pk, c, &scale))
        .collect()
}

pub fn equalize_histogram(pk: &PublicKey, hist: &EncryptedHistogram) -> Result<EncryptedHistogram> {
    hist.check_key(pk)?;
    let bins = equalize_transform(
        pk,
        &hist.bins,
        hist.levels as usize,
        hist.width,
        hist.height,
        &hist.precision(),
    )?;
    Ok(EncryptedHistogram {
        bins,
        ..hist.clone()
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encrypted_image::{decrypt_image, decrypt_real, encrypt_image};
    use crate::image::PlainImage;
    use crate::kernel::EdgeOperator;
    use crate::paillier::{seeded_rng, Keypair};
    use std::sync::OnceLock;

    fn kp() -> &'static Keypair {
        static KEY: OnceLock<Keypair> = OnceLock::new();
        KEY.get_or_init(|| Keypair::generate(256, &mut seeded_rng(31)).unwrap())
    }

    fn enc(img: &PlainImage) -> EncryptedImage {
        encrypt_image(&kp().public, img, &Precision::default(), &mut seeded_rng(1)).unwrap()
    }

    #[test]
    fn reflect101_indices() {
        let got: Vec<usize> = (-3..8).map(|i| reflect101(i, 5)).collect();
        assert_eq!(got, vec![3, 2, 1, 0, 1, 2, 3, 4, 3, 2, 1]);
        assert_eq!(reflect101(-1, 1), 0);
        assert_eq!(reflect101(2, 2), 0);
    }

    #[test]
    fn op_ids_are_wire_stable() {
        assert_eq!(OpId::Negate as u16, 1);
        assert_eq!(OpId::EqualizeTransform as u16, 7);
        assert_eq!(OpId::from_u16(6), Some(OpId::MorphSum));
        assert_eq!(OpId::from_u16(99), None);
    }

    #[test]
    fn negate_boundaries() {
        let kp = kp();
        let img = PlainImage::new(3, 1, 256, vec![0, 255, 100]).unwrap();
        let out = negate(&kp.public, &enc(&img), &mut seeded_rng(2)).unwrap();
        assert_eq!(decrypt_image(&kp.private, &out, false).unwrap().pixels(), &[255, 0, 155]);
    }

    #[test]
    fn brightness_shift_and_saturation() {
        let kp = kp();
        let pk = &kp.public;
        let img = PlainImage::new(2, 1, 256, vec![100, 250]).unwrap();
        let mut rng = seeded_rng(3);
        let v = EncryptedNumber::encrypt_real(pk, 50.0, &Precision::default(), &mut rng).unwrap();
        let out = brightness(pk, &enc(&img), &v).unwrap();
        let raw = decrypt_real(&kp.private, &out).unwrap();
        assert_eq!(raw.data, vec![150.0, 300.0]);
        assert_eq!(decrypt_image(&kp.private, &out, true).unwrap().pixels(), &[150, 255]);
        let zero = EncryptedNumber::encrypt_real(pk, 0.0, &Precision::default(), &mut rng).unwrap();
        let same = brightness(pk, &enc(&img), &zero).unwrap();
        assert_eq!(decrypt_image(&kp.private, &same, false).unwrap(), img);
    }

    #[test]
    fn box_filter_on_constant_image() {
        let kp = kp();
        let img = PlainImage::filled(5, 4, 256, 50).unwrap();
        let out = convolve(&kp.public, &enc(&img), &Kernel::average(3, 3).unwrap()).unwrap();
        assert_eq!(decrypt_image(&kp.private, &out, false).unwrap(), img);
        assert_eq!(out.pixels[0].exponent, -21);
    }

    #[test]
    fn identity_kernel_keeps_image() {
        let kp = kp();
        let img = PlainImage::from_fn(4, 4, 256, |x, y| (x * 50 + y) as u32).unwrap();
        let out = convolve(&kp.public, &enc(&img), &Kernel::identity(3).unwrap()).unwrap();
        assert_eq!(decrypt_image(&kp.private, &out, false).unwrap(), img);
    }

    #[test]
    fn oversized_kernel_is_a_shape_error() {
        let img = PlainImage::filled(2, 2, 256, 1).unwrap();
        assert!(matches!(
            convolve(&kp().public, &enc(&img), &Kernel::average(3, 3).unwrap()),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn gradient_of_constant_is_zero() {
        let kp = kp();
        let img = PlainImage::filled(4, 4, 256, 77).unwrap();
        let (h1, h2) = EdgeOperator::Sobel.kernels();
        let (gx, gy) = gradient(&kp.public, &enc(&img), &h1, &h2).unwrap();
        assert!(decrypt_real(&kp.private, &gx).unwrap().data.iter().all(|&v| v == 0.0));
        assert!(decrypt_real(&kp.private, &gy).unwrap().data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn vertical_step_edge_under_sobel() {
        let kp = kp();
        let img = PlainImage::from_fn(6, 4, 256, |x, _| if x < 3 { 10 } else { 200 }).unwrap();
        let (h1, h2) = EdgeOperator::Sobel.kernels();
        let (gx, gy) = gradient(&kp.public, &enc(&img), &h1, &h2).unwrap();
        let gx = decrypt_real(&kp.private, &gx).unwrap();
        let gy = decrypt_real(&kp.private, &gy).unwrap();
        assert!(gy.data.iter().all(|&v| v == 0.0));
        for y in 0..4 {
            assert_eq!(gx.get(2, y), 760.0);
            assert_eq!(gx.get(3, y), 760.0);
            assert_eq!(gx.get(0, y), 0.0);
            assert_eq!(gx.get(5, y), 0.0);
        }
    }

    #[test]
    fn sharpen_parameters() {
        let kp = kp();
        let img = PlainImage::filled(3, 3, 256, 90).unwrap();
        let lpf = Kernel::average(3, 3).unwrap();
        for k in [0.5, 1.0, 2.0] {
            let out = sharpen(&kp.public, &enc(&img), k, &lpf).unwrap();
            assert_eq!(decrypt_image(&kp.private, &out, false).unwrap(), img);
        }
        for k in [0.0, -1.0, f64::NAN] {
            assert!(matches!(sharpen(&kp.public, &enc(&img), k, &lpf), Err(Error::Parameter(_))));
        }
    }

    #[test]
    fn morph_sum_counts() {
        let kp = kp();
        let se = StructuringElement::square(3).unwrap();
        let zeros = PlainImage::filled(4, 4, 2, 0).unwrap();
        let out = morph_sum(&kp.public, &enc(&zeros), &se).unwrap();
        assert!(decrypt_image(&kp.private, &out, false).unwrap().pixels().iter().all(|&v| v == 0));

        let ones = PlainImage::filled(4, 4, 2, 1).unwrap();
        let out = morph_sum(&kp.public, &enc(&ones), &se).unwrap();
        let l = decrypt_image(&kp.private, &out, false).unwrap();
        assert_eq!(l.levels(), 10);
        assert_eq!(l.get(1, 1), 9);
        assert_eq!(l.get(0, 0), 4);
        assert_eq!(l.get(0, 1), 6);

        let grey = PlainImage::filled(4, 4, 256, 1).unwrap();
        assert!(matches!(morph_sum(&kp.public, &enc(&grey), &se), Err(Error::Parameter(_))));
    }

    #[test]
    fn equalize_degenerate_and_uniform_histograms() {
        let kp = kp();
        let pk = &kp.public;
        let p = Precision::default();
        let mut rng = seeded_rng(4);
        let encrypt = |counts: &[u64], rng: &mut rand_chacha::ChaCha20Rng| {
            counts
                .iter()
                .map(|&c| EncryptedNumber::encrypt_real(pk, c as f64, &p, rng).unwrap())
                .collect::<Vec<_>>()
        };

        // all mass at level 0 on a 4x4 image, G = 8
        let mut counts = vec![0u64; 8];
        counts[0] = 16;
        let t = equalize_transform(pk, &encrypt(&counts, &mut rng), 8, 4, 4, &p).unwrap();
        for c in &t {
            assert_eq!(c.decrypt(&kp.private).unwrap(), 7.0);
        }

        // uniform: 2 per level on 4x4, G = 8 -> T(p) = 7 (p+1) / 8
        let t = equalize_transform(pk, &encrypt(&[2; 8], &mut rng), 8, 4, 4, &p).unwrap();
        for (level, c) in t.iter().enumerate() {
            assert_eq!(c.decrypt(&kp.private).unwrap(), 7.0 * (level + 1) as f64 / 8.0);
        }

        assert!(matches!(
            equalize_transform(pk, &encrypt(&[1; 4], &mut rng), 8, 2, 2, &p),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn blindness_server_code_never_names_the_private_key() {
        let src = include_str!("ops.rs");
        let body = src.split("#[cfg(test)]").next().unwrap();
        assert!(!body.contains(concat!("Private", "Key")));
        assert!(!body.contains(concat!("decrypt", "_")));
    }
}
