//! Plaintext implementations of every operation, with the same border and
//! rounding conventions as the encrypted path, plus error statistics.

use crate::client::{compute_histogram, finish_equalization, finish_morphology, MorphMode};
use crate::error::{Error, Result};
use crate::image::{PlainImage, RealImage};
use crate::kernel::{Kernel, StructuringElement};
use crate::ops::reflect101;

pub fn ref_negate(img: &PlainImage) -> PlainImage {
    let max = img.levels() - 1;
    let pixels = img.pixels().iter().map(|&p| max - p).collect();
    PlainImage::new(img.width(), img.height(), img.levels(), pixels).unwrap()
}

/// Unsaturated `i + v`.
pub fn ref_brightness(img: &PlainImage, v: f64) -> RealImage {
    RealImage {
        width: img.width(),
        height: img.height(),
        data: img.pixels().iter().map(|&p| f64::from(p) + v).collect(),
    }
}

/// Correlation with reflect-101 borders, then `post_scale`.
pub fn ref_convolve(img: &PlainImage, kernel: &Kernel) -> Result<RealImage> {
    let (w, h) = (img.width(), img.height());
    if kernel.rows() > h || kernel.cols() > w {
        return Err(Error::Shape("kernel larger than image".into()));
    }
    let taps: Vec<_> = kernel.taps().collect();
    let mut data = Vec::with_capacity(w * h);
    for y in 0..h as isize {
        for x in 0..w as isize {
            let mut acc = 0.0;
            for &(dy, dx, weight) in &taps {
                acc += weight * f64::from(img.get(reflect101(x + dx, w), reflect101(y + dy, h)));
            }
            data.push(acc * kernel.post_scale());
        }
    }
    RealImage::new(w, h, data)
}

pub fn ref_gradient(img: &PlainImage, h1: &Kernel, h2: &Kernel) -> Result<(RealImage, RealImage)> {
    Ok((ref_convolve(img, h1)?, ref_convolve(img, h2)?))
}

/// `(k+1) I - k I_lpf`, unsaturated.
pub fn ref_sharpen(img: &PlainImage, k: f64, lpf: &Kernel) -> Result<RealImage> {
    if !(k > 0.0 && k.is_finite()) {
        return Err(Error::Parameter(format!("sharpening amount must be positive, got {k}")));
    }
    let low = ref_convolve(img, lpf)?;
    let data = img
        .pixels()
        .iter()
        .zip(&low.data)
        .map(|(&p, &l)| (k + 1.0) * f64::from(p) - k * l)
        .collect();
    RealImage::new(img.width(), img.height(), data)
}

/// Neighbourhood counts with zero padding outside the image.
pub fn ref_morph_sum(img: &PlainImage, se: &StructuringElement) -> Result<PlainImage> {
    if !img.is_binary() {
        return Err(Error::Parameter("morphology needs a binary image".into()));
    }
    let (w, h) = (img.width() as isize, img.height() as isize);
    let offsets: Vec<_> = se.offsets().collect();
    let mut pixels = Vec::with_capacity(img.pixels().len());
    for y in 0..h {
        for x in 0..w {
            let mut count = 0;
            for &(dy, dx) in &offsets {
                let (sx, sy) = (x + dx, y + dy);
                if sx >= 0 && sy >= 0 && sx < w && sy < h {
                    count += img.get(sx as usize, sy as usize);
                }
            }
            pixels.push(count);
        }
    }
    PlainImage::new(img.width(), img.height(), se.ones_count() as u32 + 1, pixels)
}

pub fn ref_morph(img: &PlainImage, se: &StructuringElement, mode: MorphMode) -> Result<PlainImage> {
    finish_morphology(&ref_morph_sum(img, se)?, se, mode)
}

/// `T(p) = (G-1)/(w*l) * Hc(p)` with `G = img.levels()`.
pub fn ref_equalization_transform(img: &PlainImage) -> Vec<f64> {
    let levels = img.levels() as usize;
    let hist = compute_histogram(img, levels).expect("pixels are below levels");
    let scale = (levels - 1) as f64 / img.pixels().len() as f64;
    let mut running = 0u64;
    hist.iter()
        .map(|&c| {
            running += c;
            scale * running as f64
        })
        .collect()
}

pub fn ref_equalize(img: &PlainImage) -> PlainImage {
    finish_equalization(img, &ref_equalization_transform(img)).expect("transform covers every level")
}

/// Per-pixel |ED - PD| statistics.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ErrorReport {
    pub mean_abs_error: f64,
    pub std_dev: f64,
    pub max_abs_error: f64,
    pub pixel_count: usize,
}

impl ErrorReport {
    pub fn from_errors(errors: impl IntoIterator<Item = f64>) -> ErrorReport {
        let errors: Vec<f64> = errors.into_iter().collect();
        let n = errors.len();
        if n == 0 {
            return ErrorReport {
                mean_abs_error: 0.0,
                std_dev: 0.0,
                max_abs_error: 0.0,
                pixel_count: 0,
            };
        }
        let mean = errors.iter().sum::<f64>() / n as f64;
        let var = errors.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / n as f64;
        ErrorReport {
            mean_abs_error: mean,
            std_dev: var.sqrt(),
            max_abs_error: errors.iter().cloned().fold(0.0, f64::max),
            pixel_count: n,
        }
    }

    pub fn is_zero(&self) -> bool {
        self.max_abs_error == 0.0
    }

    pub const CSV_HEADER: &'static str = "op,precision,mean,std,max";

    pub fn csv_row(&self, op: &str, precision: f64) -> String {
        format!(
            "{op},{precision:e},{},{},{}",
            self.mean_abs_error, self.std_dev, self.max_abs_error
        )
    }
}

pub fn compare(ed: &PlainImage, pd: &PlainImage) -> Result<ErrorReport> {
    if ed.width() != pd.width() || ed.height() != pd.height() {
        return Err(Error::Shape("compared images differ in shape".into()));
    }
    Ok(ErrorReport::from_errors(
        ed.pixels()
            .iter()
            .zip(pd.pixels())
            .map(|(&a, &b)| (f64::from(a) - f64::from(b)).abs()),
    ))
}

pub fn compare_real(ed: &RealImage, pd: &RealImage) -> Result<ErrorReport> {
    if !ed.same_shape(pd) {
        return Err(Error::Shape("compared rasters differ in shape".into()));
    }
    Ok(ErrorReport::from_errors(
        ed.data.iter().zip(&pd.data).map(|(a, b)| (a - b).abs()),
    ))
}
