//! Convolution kernels, edge-operator presets and binary structuring elements.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Real-valued mask applied as a correlation centred on the output pixel,
/// followed by a single multiplication by `post_scale`.
#[derive(Clone, Debug, PartialEq)]
pub struct Kernel {
    rows: usize,
    cols: usize,
    weights: Vec<f64>,
    post_scale: f64,
}

impl Kernel {
    pub fn new(rows: usize, cols: usize, weights: Vec<f64>, post_scale: f64) -> Result<Self> {
        if rows % 2 == 0 || cols % 2 == 0 {
            return Err(Error::Parameter(format!(
                "kernel dimensions must be odd, got {rows}x{cols}"
            )));
        }
        if weights.len() != rows * cols {
            return Err(Error::Parameter(format!(
                "{} weights for a {rows}x{cols} kernel",
                weights.len()
            )));
        }
        if weights.iter().chain([&post_scale]).any(|w| !w.is_finite()) {
            return Err(Error::Parameter("kernel weights must be finite".into()));
        }
        Ok(Kernel {
            rows,
            cols,
            weights,
            post_scale,
        })
    }

    /// Box filter: unit weights, scaled by 1/(rows*cols).
    pub fn average(rows: usize, cols: usize) -> Result<Self> {
        Kernel::new(rows, cols, vec![1.0; rows * cols], 1.0 / (rows * cols) as f64)
    }

    pub fn identity(size: usize) -> Result<Self> {
        let mut w = vec![0.0; size * size];
        w[size * size / 2] = 1.0;
        Kernel::new(size, size, w, 1.0)
    }

    pub fn integer(rows: usize, cols: usize, weights: &[i32]) -> Result<Self> {
        Kernel::new(rows, cols, weights.iter().map(|&w| f64::from(w)).collect(), 1.0)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn post_scale(&self) -> f64 {
        self.post_scale
    }

    pub fn weight(&self, row: usize, col: usize) -> f64 {
        self.weights[row * self.cols + col]
    }

    /// Non-zero taps as (row offset, column offset, weight) relative to the anchor.
    pub fn taps(&self) -> impl Iterator<Item = (isize, isize, f64)> + '_ {
        let (cy, cx) = ((self.rows / 2) as isize, (self.cols / 2) as isize);
        self.weights.iter().enumerate().filter(|(_, &w)| w != 0.0).map(move |(i, &w)| {
            ((i / self.cols) as isize - cy, (i % self.cols) as isize - cx, w)
        })
    }
}

/// Text form: `RxC:w,w,...` with an optional `/post_scale` suffix, or the
/// shorthands `avgN` and `identityN`.
impl FromStr for Kernel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if let Some(n) = s.strip_prefix("avg") {
            let n = parse_usize(n)?;
            return Kernel::average(n, n);
        }
        if let Some(n) = s.strip_prefix("identity") {
            return Kernel::identity(parse_usize(n)?);
        }
        let (dims, rest) = s
            .split_once(':')
            .ok_or_else(|| Error::Parameter(format!("bad kernel {s:?}")))?;
        let (rows, cols) = parse_dims(dims)?;
        let (weights, scale) = match rest.split_once('/') {
            Some((w, scale)) => (w, parse_f64(scale)?),
            None => (rest, 1.0),
        };
        let weights = weights.split(',').map(parse_f64).collect::<Result<Vec<_>>>()?;
        Kernel::new(rows, cols, weights, scale)
    }
}

impl fmt::Display for Kernel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let w: Vec<String> = self.weights.iter().map(|w| format!("{w:?}")).collect();
        write!(f, "{}x{}:{}/{:?}", self.rows, self.cols, w.join(","), self.post_scale)
    }
}

fn parse_usize(s: &str) -> Result<usize> {
    s.trim()
        .parse()
        .map_err(|_| Error::Parameter(format!("expected an integer, got {s:?}")))
}

fn parse_f64(s: &str) -> Result<f64> {
    s.trim()
        .parse()
        .map_err(|_| Error::Parameter(format!("expected a number, got {s:?}")))
}

fn parse_dims(s: &str) -> Result<(usize, usize)> {
    let (r, c) = s
        .split_once('x')
        .ok_or_else(|| Error::Parameter(format!("expected RxC, got {s:?}")))?;
    Ok((parse_usize(r)?, parse_usize(c)?))
}

/// Named gradient operators. `h1` responds to horizontal change (vertical
/// edges), `h2` to vertical change.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EdgeOperator {
    Sobel,
    Prewitt,
    Robinson,
    Kirsch,
}

impl EdgeOperator {
    pub const ALL: [EdgeOperator; 4] = [
        EdgeOperator::Sobel,
        EdgeOperator::Prewitt,
        EdgeOperator::Robinson,
        EdgeOperator::Kirsch,
    ];

    pub fn kernels(self) -> (Kernel, Kernel) {
        let (h1, h2): ([i32; 9], [i32; 9]) = match self {
            EdgeOperator::Sobel => ([-1, 0, 1, -2, 0, 2, -1, 0, 1], [-1, -2, -1, 0, 0, 0, 1, 2, 1]),
            EdgeOperator::Prewitt => ([-1, 0, 1, -1, 0, 1, -1, 0, 1], [-1, -1, -1, 0, 0, 0, 1, 1, 1]),
            EdgeOperator::Robinson => {
                ([-1, 1, 1, -1, -2, 1, -1, 1, 1], [-1, -1, -1, 1, -2, 1, 1, 1, 1])
            }
            EdgeOperator::Kirsch => ([-5, 3, 3, -5, 0, 3, -5, 3, 3], [-5, -5, -5, 3, 0, 3, 3, 3, 3]),
        };
        (
            Kernel::integer(3, 3, &h1).unwrap(),
            Kernel::integer(3, 3, &h2).unwrap(),
        )
    }

    pub fn name(self) -> &'static str {
        match self {
            EdgeOperator::Sobel => "sobel",
            EdgeOperator::Prewitt => "prewitt",
            EdgeOperator::Robinson => "robinson",
            EdgeOperator::Kirsch => "kirsch",
        }
    }
}

impl FromStr for EdgeOperator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        EdgeOperator::ALL
            .into_iter()
            .find(|op| op.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::Parameter(format!("unknown edge operator {s:?}")))
    }
}

/// Binary probe for morphology, anchored at its centre.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StructuringElement {
    rows: usize,
    cols: usize,
    mask: Vec<bool>,
    ones: usize,
}

impl StructuringElement {
    pub fn new(rows: usize, cols: usize, mask: Vec<bool>) -> Result<Self> {
        if rows % 2 == 0 || cols % 2 == 0 {
            return Err(Error::Parameter(format!(
                "structuring element dimensions must be odd, got {rows}x{cols}"
            )));
        }
        if mask.len() != rows * cols {
            return Err(Error::Parameter("structuring element mask has wrong length".into()));
        }
        let ones = mask.iter().filter(|&&b| b).count();
        if ones == 0 {
            return Err(Error::Parameter("structuring element has no set cells".into()));
        }
        Ok(StructuringElement {
            rows,
            cols,
            mask,
            ones,
        })
    }

    pub fn square(size: usize) -> Result<Self> {
        StructuringElement::new(size, size, vec![true; size * size])
    }

    pub fn cross(size: usize) -> Result<Self> {
        let c = size / 2;
        let mask = (0..size * size).map(|i| i / size == c || i % size == c).collect();
        StructuringElement::new(size, size, mask)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn ones_count(&self) -> usize {
        self.ones
    }

    /// Offsets (row, column) of set cells relative to the anchor.
    pub fn offsets(&self) -> impl Iterator<Item = (isize, isize)> + '_ {
        let (cy, cx) = ((self.rows / 2) as isize, (self.cols / 2) as isize);
        self.mask.iter().enumerate().filter(|(_, &b)| b).map(move |(i, _)| {
            ((i / self.cols) as isize - cy, (i % self.cols) as isize - cx)
        })
    }

    /// Point reflection through the anchor.
    pub fn reflected(&self) -> StructuringElement {
        let mut mask = self.mask.clone();
        mask.reverse();
        StructuringElement { mask, ..self.clone() }
    }
}

/// Text form: `RxC:bits` with row-major `0`/`1` bits, or `squareN` / `crossN`.
impl FromStr for StructuringElement {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if let Some(n) = s.strip_prefix("square") {
            return StructuringElement::square(parse_usize(n)?);
        }
        if let Some(n) = s.strip_prefix("cross") {
            return StructuringElement::cross(parse_usize(n)?);
        }
        let (dims, bits) = s
            .split_once(':')
            .ok_or_else(|| Error::Parameter(format!("bad structuring element {s:?}")))?;
        let (rows, cols) = parse_dims(dims)?;
        let mask = bits
            .chars()
            .filter(|c| !c.is_whitespace() && *c != ',')
            .map(|c| match c {
                '0' => Ok(false),
                '1' => Ok(true),
                other => Err(Error::Parameter(format!("bad mask bit {other:?}"))),
            })
            .collect::<Result<Vec<_>>>()?;
        StructuringElement::new(rows, cols, mask)
    }
}

impl fmt::Display for StructuringElement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let bits: String = self.mask.iter().map(|&b| if b { '1' } else { '0' }).collect();
        write!(f, "{}x{}:{}", self.rows, self.cols, bits)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn average_kernel() {
        let k = Kernel::average(3, 3).unwrap();
        assert_eq!(k.weights(), &[1.0; 9]);
        assert_eq!(k.post_scale(), 1.0 / 9.0);
        assert_eq!(k.taps().count(), 9);
    }

    #[test]
    fn even_kernels_are_rejected() {
        assert!(Kernel::new(2, 3, vec![0.0; 6], 1.0).is_err());
        assert!(Kernel::new(3, 3, vec![0.0; 8], 1.0).is_err());
    }

    #[test]
    fn sobel_taps_skip_zero_column() {
        let (h1, _) = EdgeOperator::Sobel.kernels();
        let taps: Vec<_> = h1.taps().collect();
        assert_eq!(taps.len(), 6);
        assert!(taps.contains(&(0, 1, 2.0)));
        assert!(taps.contains(&(-1, -1, -1.0)));
    }

    #[test]
    fn presets_are_zero_sum() {
        for op in EdgeOperator::ALL {
            let (h1, h2) = op.kernels();
            assert_eq!(h1.weights().iter().sum::<f64>(), 0.0, "{op:?}");
            assert_eq!(h2.weights().iter().sum::<f64>(), 0.0, "{op:?}");
        }
    }

    #[test]
    fn kernel_text_round_trip() {
        let k: Kernel = "3x3:1,2,1,0,0,0,-1,-2,-1/0.25".parse().unwrap();
        assert_eq!(k.weight(2, 1), -2.0);
        assert_eq!(k.post_scale(), 0.25);
        assert_eq!(k.to_string().parse::<Kernel>().unwrap(), k);
        let avg = Kernel::average(3, 3).unwrap();
        assert_eq!(avg.to_string().parse::<Kernel>().unwrap(), avg);
        assert_eq!("avg5".parse::<Kernel>().unwrap(), Kernel::average(5, 5).unwrap());
        assert!("3x3:1,2".parse::<Kernel>().is_err());
    }

    #[test]
    fn structuring_elements() {
        let sq = StructuringElement::square(3).unwrap();
        assert_eq!(sq.ones_count(), 9);
        let cross: StructuringElement = "cross3".parse().unwrap();
        assert_eq!(cross.ones_count(), 5);
        assert_eq!(cross.to_string(), "3x3:010111010");
        assert_eq!("3x3:010111010".parse::<StructuringElement>().unwrap(), cross);
        assert!("3x3:000000000".parse::<StructuringElement>().is_err());
        let l: StructuringElement = "3x3:100100111".parse().unwrap();
        assert_eq!(l.reflected().to_string(), "3x3:111001001");
    }
}
