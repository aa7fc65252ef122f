//! Plaintext rasters and Netpbm (PGM/PBM) I/O.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

/// Row-major integer raster with values in `[0, levels - 1]`. Binary images
/// use `levels = 2` and values `{0, 1}`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PlainImage {
    width: usize,
    height: usize,
    levels: u32,
    pixels: Vec<u32>,
}

impl PlainImage {
    pub fn new(width: usize, height: usize, levels: u32, pixels: Vec<u32>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Shape(format!("empty image {width}x{height}")));
        }
        if levels < 2 {
            return Err(Error::Parameter(format!("levels must be at least 2, got {levels}")));
        }
        if pixels.len() != width * height {
            return Err(Error::Shape(format!(
                "{} pixels for a {width}x{height} image",
                pixels.len()
            )));
        }
        if let Some((index, &value)) = pixels.iter().enumerate().find(|(_, &p)| p >= levels) {
            return Err(Error::PixelRange {
                index,
                value: f64::from(value),
                max: levels - 1,
            });
        }
        Ok(PlainImage {
            width,
            height,
            levels,
            pixels,
        })
    }

    pub fn filled(width: usize, height: usize, levels: u32, value: u32) -> Result<Self> {
        Self::new(width, height, levels, vec![value; width * height])
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        levels: u32,
        f: impl Fn(usize, usize) -> u32,
    ) -> Result<Self> {
        let mut pixels = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                pixels.push(f(x, y));
            }
        }
        Self::new(width, height, levels, pixels)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn levels(&self) -> u32 {
        self.levels
    }

    pub fn pixels(&self) -> &[u32] {
        &self.pixels
    }

    pub fn get(&self, x: usize, y: usize) -> u32 {
        self.pixels[y * self.width + x]
    }

    pub fn is_binary(&self) -> bool {
        self.levels == 2
    }

    pub fn to_real(&self) -> RealImage {
        RealImage {
            width: self.width,
            height: self.height,
            data: self.pixels.iter().map(|&p| f64::from(p)).collect(),
        }
    }

    /// Encodes as binary PBM (P4) when `levels == 2`, otherwise binary PGM (P5).
    pub fn to_netpbm(&self) -> Vec<u8> {
        if self.is_binary() {
            self.to_pbm()
        } else {
            self.to_pgm()
        }
    }

    pub fn to_pgm(&self) -> Vec<u8> {
        let maxval = self.levels - 1;
        let mut out = format!("P5\n{} {}\n{}\n", self.width, self.height, maxval).into_bytes();
        if maxval < 256 {
            out.extend(self.pixels.iter().map(|&p| p as u8));
        } else {
            for &p in &self.pixels {
                out.extend_from_slice(&(p as u16).to_be_bytes());
            }
        }
        out
    }

    /// P4 stores 1 for black; foreground value 1 maps to a set bit.
    pub fn to_pbm(&self) -> Vec<u8> {
        let mut out = format!("P4\n{} {}\n", self.width, self.height).into_bytes();
        let row_bytes = self.width.div_ceil(8);
        for row in self.pixels.chunks(self.width) {
            let mut packed = vec![0u8; row_bytes];
            for (x, &p) in row.iter().enumerate() {
                if p != 0 {
                    packed[x / 8] |= 0x80 >> (x % 8);
                }
            }
            out.extend_from_slice(&packed);
        }
        out
    }

    pub fn from_netpbm(bytes: &[u8]) -> Result<Self> {
        let mut header = HeaderReader { buf: bytes, pos: 0 };
        let magic = header.token()?;
        let width = header.number()? as usize;
        let height = header.number()? as usize;
        match magic.as_str() {
            "P4" | "P1" => {
                let pixels = if magic == "P4" {
                    let data = header.body()?;
                    let row_bytes = width.div_ceil(8);
                    if data.len() < row_bytes * height {
                        return Err(Error::Format("truncated PBM raster".into()));
                    }
                    let mut pixels = Vec::with_capacity(width * height);
                    for y in 0..height {
                        let row = &data[y * row_bytes..(y + 1) * row_bytes];
                        for x in 0..width {
                            pixels.push(u32::from(row[x / 8] & (0x80 >> (x % 8)) != 0));
                        }
                    }
                    pixels
                } else {
                    header.ascii_bits(width * height)?
                };
                PlainImage::new(width, height, 2, pixels)
            }
            "P5" | "P2" => {
                let maxval = header.number()?;
                if maxval == 0 || maxval > 65535 {
                    return Err(Error::Format(format!("invalid PGM maxval {maxval}")));
                }
                let count = width * height;
                let pixels = if magic == "P5" {
                    let data = header.body()?;
                    if maxval < 256 {
                        if data.len() < count {
                            return Err(Error::Format("truncated PGM raster".into()));
                        }
                        data[..count].iter().map(|&b| u32::from(b)).collect()
                    } else {
                        if data.len() < 2 * count {
                            return Err(Error::Format("truncated PGM raster".into()));
                        }
                        data[..2 * count]
                            .chunks(2)
                            .map(|c| u32::from(u16::from_be_bytes([c[0], c[1]])))
                            .collect()
                    }
                } else {
                    (0..count).map(|_| header.number()).collect::<Result<Vec<_>>>()?
                };
                PlainImage::new(width, height, maxval + 1, pixels)
            }
            other => Err(Error::Format(format!("unsupported Netpbm magic {other:?}"))),
        }
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_netpbm(&fs::read(path)?)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_netpbm())?;
        Ok(())
    }
}

struct HeaderReader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl HeaderReader<'_> {
    fn skip_space_and_comments(&mut self) {
        while self.pos < self.buf.len() {
            match self.buf[self.pos] {
                b'#' => {
                    while self.pos < self.buf.len() && self.buf[self.pos] != b'\n' {
                        self.pos += 1;
                    }
                }
                c if c.is_ascii_whitespace() => self.pos += 1,
                _ => break,
            }
        }
    }

    fn token(&mut self) -> Result<String> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.pos < self.buf.len() && !self.buf[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(Error::Format("unexpected end of Netpbm header".into()));
        }
        Ok(String::from_utf8_lossy(&self.buf[start..self.pos]).into_owned())
    }

    fn number(&mut self) -> Result<u32> {
        let tok = self.token()?;
        tok.parse()
            .map_err(|_| Error::Format(format!("expected a number in Netpbm header, got {tok:?}")))
    }

    /// Raster data starts after exactly one whitespace byte.
    fn body(&mut self) -> Result<&[u8]> {
        if self.pos >= self.buf.len() || !self.buf[self.pos].is_ascii_whitespace() {
            return Err(Error::Format("missing whitespace before raster".into()));
        }
        Ok(&self.buf[self.pos + 1..])
    }

    fn ascii_bits(&mut self, count: usize) -> Result<Vec<u32>> {
        let mut out = Vec::with_capacity(count);
        while out.len() < count {
            self.skip_space_and_comments();
            match self.buf.get(self.pos) {
                Some(b'0') => out.push(0),
                Some(b'1') => out.push(1),
                _ => return Err(Error::Format("bad P1 raster".into())),
            }
            self.pos += 1;
        }
        Ok(out)
    }
}

/// Row-major real raster; signed gradient components and unrounded filter
/// outputs live here.
#[derive(Clone, Debug, PartialEq)]
pub struct RealImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl RealImage {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::Shape(format!(
                "{} values for a {width}x{height} raster",
                data.len()
            )));
        }
        Ok(RealImage { width, height, data })
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    pub fn same_shape(&self, other: &RealImage) -> bool {
        self.width == other.width && self.height == other.height
    }

    /// Round half away from zero, then saturate into `[0, levels - 1]`.
    pub fn quantize(&self, levels: u32) -> PlainImage {
        let max = f64::from(levels - 1);
        let pixels = self
            .data
            .iter()
            .map(|&v| v.round().clamp(0.0, max) as u32)
            .collect();
        PlainImage::new(self.width, self.height, levels, pixels).unwrap()
    }

    /// One text line per row, values separated by spaces. Uses the shortest
    /// representation that parses back to the same double.
    pub fn to_text(&self) -> String {
        let mut out = format!("{} {}\n", self.width, self.height);
        for row in self.data.chunks(self.width) {
            let line: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
            out.push_str(&line.join(" "));
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut tokens = text.split_ascii_whitespace();
        let mut next = |what: &str| {
            tokens
                .next()
                .ok_or_else(|| Error::Format(format!("missing {what} in raster text")))
        };
        let width: usize = next("width")?
            .parse()
            .map_err(|_| Error::Format("bad width".into()))?;
        let height: usize = next("height")?
            .parse()
            .map_err(|_| Error::Format("bad height".into()))?;
        let mut data = Vec::with_capacity(width * height);
        for _ in 0..width * height {
            let v: f64 = next("value")?
                .parse()
                .map_err(|_| Error::Format("bad value".into()))?;
            data.push(v);
        }
        RealImage::new(width, height, data)
    }
}
