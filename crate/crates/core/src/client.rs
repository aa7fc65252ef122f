//! Client-side finishing steps applied after decryption.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::image::{PlainImage, RealImage};
use crate::kernel::StructuringElement;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MorphMode {
    Erosion,
    Dilation,
}

impl MorphMode {
    /// Erosion needs every set cell of the element covered; dilation one.
    pub fn threshold(self, se: &StructuringElement) -> u32 {
        match self {
            MorphMode::Erosion => se.ones_count() as u32,
            MorphMode::Dilation => 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradientField {
    pub gx: RealImage,
    pub gy: RealImage,
    pub magnitude: RealImage,
    /// Radians in (-π, π]; 0 where both components vanish.
    pub direction: RealImage,
}

impl GradientField {
    /// Magnitude rescaled linearly so its maximum maps to 255.
    pub fn display_magnitude(&self) -> PlainImage {
        let max = self.magnitude.data.iter().cloned().fold(0.0, f64::max);
        let scale = if max > 0.0 { 255.0 / max } else { 0.0 };
        let scaled = RealImage {
            data: self.magnitude.data.iter().map(|m| m * scale).collect(),
            ..self.magnitude.clone()
        };
        scaled.quantize(256)
    }
}

pub fn compute_histogram(img: &PlainImage, levels: usize) -> Result<Vec<u64>> {
    let mut counts = vec![0u64; levels];
    for &p in img.pixels() {
        let slot = counts.get_mut(p as usize).ok_or_else(|| {
            Error::Parameter(format!("pixel {p} outside a {levels}-level histogram"))
        })?;
        *slot += 1;
    }
    Ok(counts)
}

pub fn direction(gx: f64, gy: f64) -> f64 {
    if gx == 0.0 && gy == 0.0 {
        return 0.0;
    }
    let theta = gy.atan2(gx);
    if theta <= -PI {
        PI
    } else {
        theta
    }
}

pub fn finish_gradient(gx: &RealImage, gy: &RealImage) -> Result<GradientField> {
    if !gx.same_shape(gy) {
        return Err(Error::Shape("gradient components differ in shape".into()));
    }
    let magnitude = gx.data.iter().zip(&gy.data).map(|(x, y)| x.hypot(*y)).collect();
    let dir = gx.data.iter().zip(&gy.data).map(|(&x, &y)| direction(x, y)).collect();
    Ok(GradientField {
        gx: gx.clone(),
        gy: gy.clone(),
        magnitude: RealImage::new(gx.width, gx.height, magnitude)?,
        direction: RealImage::new(gx.width, gx.height, dir)?,
    })
}

/// Thresholds decrypted neighbourhood counts into a binary image.
pub fn finish_morphology(
    counts: &PlainImage,
    se: &StructuringElement,
    mode: MorphMode,
) -> Result<PlainImage> {
    let t = mode.threshold(se);
    let pixels = counts.pixels().iter().map(|&l| u32::from(l >= t)).collect();
    PlainImage::new(counts.width(), counts.height(), 2, pixels)
}

/// Applies `round(T(p))`, clamped to `[0, G-1]`, to every pixel.
pub fn finish_equalization(img: &PlainImage, transform: &[f64]) -> Result<PlainImage> {
    let levels = transform.len();
    if levels < 2 {
        return Err(Error::Parameter("transform needs at least two levels".into()));
    }
    let max = (levels - 1) as f64;
    let lut: Vec<u32> = transform.iter().map(|t| t.round().clamp(0.0, max) as u32).collect();
    let pixels = img
        .pixels()
        .iter()
        .map(|&p| {
            lut.get(p as usize).copied().ok_or_else(|| {
                Error::Parameter(format!("pixel {p} outside a {levels}-level transform"))
            })
        })
        .collect::<Result<Vec<_>>>()?;
    PlainImage::new(img.width(), img.height(), levels as u32, pixels)
}
