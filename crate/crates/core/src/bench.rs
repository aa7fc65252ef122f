//! Timing harness: encryption and decryption against key size, and a
//! pre / server / post split for each operation.
//!
//! "pre" is client work beyond encrypting the image (the brightness constant,
//! the equalization histogram). "post" is client finishing after decryption.
//! Image encryption and decryption are timed separately by `bench_crypto`.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use crate::client::{compute_histogram, finish_equalization, finish_gradient, finish_morphology, MorphMode};
use crate::encoding::{EncryptedNumber, Precision};
use crate::encrypted_image::{decrypt_image, decrypt_real, encrypt_image, expansion_factor, EncryptedHistogram};
use crate::error::{Error, Result};
use crate::image::PlainImage;
use crate::kernel::{EdgeOperator, Kernel, StructuringElement};
use crate::paillier::{seeded_rng, Keypair};
use crate::transport::{execute, Operation, Payload};

pub const CSV_HEADER: &str = "stage,op,bits,width,height,seconds,expansion";

#[derive(Clone, Debug, PartialEq)]
pub struct BenchRow {
    pub stage: String,
    pub op: String,
    pub bits: usize,
    pub width: usize,
    pub height: usize,
    /// Median wall time over the repetitions.
    pub seconds: f64,
    pub expansion: Option<f64>,
}

impl BenchRow {
    pub fn csv(&self) -> String {
        let expansion = self.expansion.map(|e| format!("{e:.4}")).unwrap_or_default();
        format!(
            "{},{},{},{},{},{:.6},{}",
            self.stage, self.op, self.bits, self.width, self.height, self.seconds, expansion
        )
    }
}

pub fn to_csv(rows: &[BenchRow]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&r.csv());
        out.push('\n');
    }
    out
}

pub fn median(mut xs: Vec<f64>) -> f64 {
    assert!(!xs.is_empty(), "median of nothing");
    xs.sort_by(f64::total_cmp);
    let mid = xs.len() / 2;
    if xs.len() % 2 == 1 {
        xs[mid]
    } else {
        (xs[mid - 1] + xs[mid]) / 2.0
    }
}

/// Runs `f` `reps` times and returns the median time and the last result.
fn timed<T>(reps: usize, mut f: impl FnMut() -> Result<T>) -> Result<(f64, T)> {
    let mut times = Vec::with_capacity(reps);
    let mut last = None;
    for _ in 0..reps.max(1) {
        let t = Instant::now();
        let out = f()?;
        times.push(t.elapsed().as_secs_f64());
        last = Some(out);
    }
    Ok((median(times), last.unwrap()))
}

fn pool(threads: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Parameter(format!("thread pool: {e}")))
}

/// Encrypt and decrypt `img` once per key size; one row per stage and size.
pub fn bench_crypto(
    bits: &[usize],
    img: &PlainImage,
    precision: &Precision,
    reps: usize,
    threads: usize,
    seed: u64,
) -> Result<Vec<BenchRow>> {
    pool(threads)?.install(|| {
        let mut rows = Vec::new();
        for &b in bits {
            let mut rng = seeded_rng(seed ^ b as u64);
            let kp = Keypair::generate(b, &mut rng)?;
            let (enc, eimg) = timed(reps, || encrypt_image(&kp.public, img, precision, &mut rng))?;
            let (dec, _) = timed(reps, || decrypt_image(&kp.private, &eimg, false))?;
            let row = |stage: &str, seconds, expansion| BenchRow {
                stage: stage.into(),
                op: "image".into(),
                bits: b,
                width: img.width(),
                height: img.height(),
                seconds,
                expansion,
            };
            rows.push(row("encrypt", enc, Some(expansion_factor(&kp.public, &eimg)?)));
            rows.push(row("decrypt", dec, None));
        }
        Ok(rows)
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BenchOp {
    Negation,
    Brightness,
    Lpf,
    Sharpen,
    Gradient,
    Erosion,
    Dilation,
    Equalization,
}

impl BenchOp {
    pub const ALL: [BenchOp; 8] = [
        BenchOp::Negation,
        BenchOp::Brightness,
        BenchOp::Lpf,
        BenchOp::Sharpen,
        BenchOp::Gradient,
        BenchOp::Erosion,
        BenchOp::Dilation,
        BenchOp::Equalization,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BenchOp::Negation => "negation",
            BenchOp::Brightness => "brightness",
            BenchOp::Lpf => "lpf",
            BenchOp::Sharpen => "sharpen",
            BenchOp::Gradient => "gradient",
            BenchOp::Erosion => "erosion",
            BenchOp::Dilation => "dilation",
            BenchOp::Equalization => "equalization",
        }
    }

    fn is_binary(self) -> bool {
        matches!(self, BenchOp::Erosion | BenchOp::Dilation)
    }
}

impl fmt::Display for BenchOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BenchOp {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        BenchOp::ALL
            .into_iter()
            .find(|op| op.name() == s.to_ascii_lowercase())
            .ok_or_else(|| Error::Parameter(format!("unknown benchmark op {s:?}")))
    }
}

pub struct BenchInputs<'a> {
    pub keypair: &'a Keypair,
    pub gray: &'a PlainImage,
    pub binary: &'a PlainImage,
    pub precision: Precision,
}

/// Pre / server / post rows for each op, medians over `reps` runs.
pub fn bench_ops(
    inputs: &BenchInputs<'_>,
    ops: &[BenchOp],
    reps: usize,
    threads: usize,
    seed: u64,
) -> Result<Vec<BenchRow>> {
    let BenchInputs { keypair, gray, binary, precision } = inputs;
    let (pk, sk) = (&keypair.public, &keypair.private);
    let mut rng = seeded_rng(seed);
    let egray = encrypt_image(pk, gray, precision, &mut rng)?;
    let ebinary = encrypt_image(pk, binary, precision, &mut rng)?;
    let lpf = Kernel::average(3, 3)?;
    let se = StructuringElement::square(3)?;
    let (h1, h2) = EdgeOperator::Sobel.kernels();

    pool(threads)?.install(|| {
        let mut prepared = Vec::with_capacity(ops.len());
        for &op in ops {
            let (img, eimg) = if op.is_binary() { (*binary, &ebinary) } else { (*gray, &egray) };
            let (pre, (operation, payload)) = timed(reps, || {
                Ok(match op {
                    BenchOp::Brightness => {
                        let v = EncryptedNumber::encrypt_real(pk, 50.0, precision, &mut rng)?;
                        (Operation::Brightness(v), Payload::Image(eimg.clone()))
                    }
                    BenchOp::Equalization => {
                        let counts = compute_histogram(img, img.levels() as usize)?;
                        let h = EncryptedHistogram::encrypt(
                            pk, &counts, img.width(), img.height(), precision, &mut rng,
                        )?;
                        (Operation::EqualizeTransform, Payload::Histogram(h))
                    }
                    BenchOp::Negation => (Operation::Negate, Payload::Image(eimg.clone())),
                    BenchOp::Lpf => (Operation::Convolve(lpf.clone()), Payload::Image(eimg.clone())),
                    BenchOp::Sharpen => (
                        Operation::Sharpen { k: 1.0, lpf: lpf.clone() },
                        Payload::Image(eimg.clone()),
                    ),
                    BenchOp::Gradient => {
                        (Operation::Gradient(h1.clone(), h2.clone()), Payload::Image(eimg.clone()))
                    }
                    BenchOp::Erosion | BenchOp::Dilation => {
                        (Operation::MorphSum(se.clone()), Payload::Image(eimg.clone()))
                    }
                })
            })?;
            // Cloning the payload is not part of pre-processing.
            let pre = match op {
                BenchOp::Brightness | BenchOp::Equalization => pre,
                _ => 0.0,
            };
            prepared.push((op, img, pre, operation, payload));
        }

        // Server runs go round-robin over the ops so that drift in machine
        // speed lands on every op alike.
        let mut samples = vec![Vec::with_capacity(reps); prepared.len()];
        let mut outputs = Vec::with_capacity(prepared.len());
        for rep in 0..reps.max(1) {
            for (i, (_, _, _, operation, payload)) in prepared.iter().enumerate() {
                let t = Instant::now();
                let output = execute(pk, operation, payload, &mut rng)?;
                samples[i].push(t.elapsed().as_secs_f64());
                if rep == 0 {
                    outputs.push(output);
                }
            }
        }

        let mut rows = Vec::new();
        for ((op, img, pre, _, _), (times, output)) in prepared.into_iter().zip(samples.into_iter().zip(outputs)) {
            let server = median(times);
            let post = match op {
                BenchOp::Gradient => {
                    let v = output.into_images()?;
                    let (gx, gy) = (decrypt_real(sk, &v[0])?, decrypt_real(sk, &v[1])?);
                    timed(reps, || finish_gradient(&gx, &gy))?.0
                }
                BenchOp::Erosion | BenchOp::Dilation => {
                    let counts = decrypt_image(sk, &output.into_image()?, false)?;
                    let mode = if op == BenchOp::Erosion { MorphMode::Erosion } else { MorphMode::Dilation };
                    timed(reps, || finish_morphology(&counts, &se, mode))?.0
                }
                BenchOp::Equalization => {
                    let t = output.into_histogram()?.decrypt(sk)?;
                    timed(reps, || finish_equalization(img, &t))?.0
                }
                _ => 0.0,
            };
            for (stage, seconds) in [("pre", pre), ("server", server), ("post", post)] {
                rows.push(BenchRow {
                    stage: stage.into(),
                    op: op.name().into(),
                    bits: pk.bits(),
                    width: img.width(),
                    height: img.height(),
                    seconds,
                    expansion: None,
                });
            }
        }
        Ok(rows)
    })
}

/// Deterministic 64x64-style test scene: a ramp with a bright disc.
pub fn synthetic_gray(width: usize, height: usize) -> PlainImage {
    PlainImage::from_fn(width, height, 256, |x, y| {
        let (dx, dy) = (x as f64 - width as f64 / 2.0, y as f64 - height as f64 / 2.0);
        let disc = if dx * dx + dy * dy < (width * width) as f64 / 16.0 { 90.0 } else { 0.0 };
        ((x * 97 / width.max(1)) as f64 + (y * 61 / height.max(1)) as f64 + disc).min(255.0) as u32
    })
    .expect("pixels stay below 256")
}

pub fn synthetic_binary(width: usize, height: usize) -> PlainImage {
    PlainImage::from_fn(width, height, 2, |x, y| u32::from((x / 5 + y / 7) % 3 == 0 || x == y))
        .expect("pixels are 0 or 1")
}

pub fn find<'a>(rows: &'a [BenchRow], stage: &str, op: &str) -> Option<&'a BenchRow> {
    rows.iter().find(|r| r.stage == stage && r.op == op)
}

/// Stage times for `stage` ordered by key size; true when strictly increasing.
pub fn monotone_in_bits(rows: &[BenchRow], stage: &str) -> bool {
    let mut v: Vec<(usize, f64)> = rows
        .iter()
        .filter(|r| r.stage == stage)
        .map(|r| (r.bits, r.seconds))
        .collect();
    v.sort_by_key(|&(b, _)| b);
    v.windows(2).all(|w| w[1].1 > w[0].1)
}

/// The op with the largest server time.
pub fn costliest_server_op(rows: &[BenchRow]) -> Option<&str> {
    rows.iter()
        .filter(|r| r.stage == "server")
        .max_by(|a, b| a.seconds.total_cmp(&b.seconds))
        .map(|r| r.op.as_str())
}
