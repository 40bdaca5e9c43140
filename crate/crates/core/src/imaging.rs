//! Grayscale rasters, binary PGM I/O and summed-area tables.
//!
//! Box features are evaluated on an [`IntegralImage`] that carries a zero
//! top row and left column, so every in-bounds box sum is exactly four table
//! reads and three additions/subtractions regardless of where it sits.

use crate::error::{Error, Result};

/// Row-major 8-bit grayscale image.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidDimensions { width, height });
        }
        if data.len() != width * height {
            return Err(Error::LengthMismatch(format!(
                "{}x{} image needs {} bytes, got {}",
                width,
                height,
                width * height,
                data.len()
            )));
        }
        Ok(Self { width, height, data })
    }

    pub fn filled(width: usize, height: usize, value: u8) -> Result<Self> {
        Self::new(width, height, vec![value; width * height])
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> u8) -> Result<Self> {
        let mut data = Vec::with_capacity(width * height);
        for r in 0..height {
            for c in 0..width {
                data.push(f(r, c));
            }
        }
        Self::new(width, height, data)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn into_data(self) -> Vec<u8> {
        self.data
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> u8 {
        self.data[row * self.width + col]
    }

    /// Copies the `width`×`height` window whose top-left corner is `(row, col)`.
    pub fn crop(&self, row: usize, col: usize, width: usize, height: usize) -> Result<GrayImage> {
        if row + height > self.height || col + width > self.width {
            return Err(Error::InvalidDimensions { width, height });
        }
        let mut data = Vec::with_capacity(width * height);
        for r in row..row + height {
            let start = r * self.width + col;
            data.extend_from_slice(&self.data[start..start + width]);
        }
        GrayImage::new(width, height, data)
    }
}

/// Square box `R(p, s)`: centered at pixel `(row, col)` with odd side `size`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct SquareBox {
    pub row: i64,
    pub col: i64,
    pub size: u32,
}

impl SquareBox {
    pub fn new(row: i64, col: i64, size: u32) -> Self {
        Self { row, col, size }
    }

    #[inline]
    pub fn half(&self) -> i64 {
        (self.size / 2) as i64
    }

    /// True when the box lies fully inside a `width`×`height` image.
    #[inline]
    pub fn fits(&self, width: usize, height: usize) -> bool {
        let h = self.half();
        self.size % 2 == 1
            && self.row - h >= 0
            && self.col - h >= 0
            && self.row + h < height as i64
            && self.col + h < width as i64
    }
}

/// Summed-area table of a [`GrayImage`], `(width+1)`×`(height+1)` entries.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IntegralImage {
    width: usize,
    height: usize,
    data: Vec<u64>,
}

impl IntegralImage {
    pub fn new(img: &GrayImage) -> Self {
        let (w, h) = (img.width, img.height);
        let stride = w + 1;
        let mut data = vec![0u64; stride * (h + 1)];
        for r in 0..h {
            let mut row_sum = 0u64;
            let src = &img.data[r * w..(r + 1) * w];
            for (c, &px) in src.iter().enumerate() {
                row_sum += px as u64;
                data[(r + 1) * stride + c + 1] = data[r * stride + c + 1] + row_sum;
            }
        }
        Self { width: w, height: h, data }
    }

    /// Width of the source image.
    pub fn width(&self) -> usize {
        self.width
    }

    /// Height of the source image.
    pub fn height(&self) -> usize {
        self.height
    }

    /// Entry `(r, c)`: the sum of rows `[0, r)` × cols `[0, c)`.
    #[inline]
    pub fn at(&self, r: usize, c: usize) -> u64 {
        self.data[r * (self.width + 1) + c]
    }

    pub fn data(&self) -> &[u64] {
        &self.data
    }

    /// Sum of pixels in `R(p, s)`; errors if the box leaves the image.
    pub fn box_sum(&self, b: SquareBox) -> Result<u64> {
        if b.size.is_multiple_of(2) {
            return Err(Error::InvalidBoxSize(b.size));
        }
        if !b.fits(self.width, self.height) {
            return Err(Error::BoxOutOfBounds { row: b.row, col: b.col, size: b.size });
        }
        Ok(self.box_sum_unchecked(b.row as usize, b.col as usize, b.size as usize))
    }

    /// Box sum without bounds checks. Caller guarantees the box fits.
    #[inline]
    pub fn box_sum_unchecked(&self, row: usize, col: usize, size: usize) -> u64 {
        let half = size / 2;
        let stride = self.width + 1;
        let top = (row - half) * stride;
        let bottom = (row + half + 1) * stride;
        let left = col - half;
        let right = col + half + 1;
        self.data[bottom + right] + self.data[top + left] - self.data[top + right] - self.data[bottom + left]
    }
}

pub fn integral_image(img: &GrayImage) -> IntegralImage {
    IntegralImage::new(img)
}

/// Difference between the mean intensities of two equal-size boxes.
pub fn avg_box_feature(ii: &IntegralImage, p1: (i64, i64), p2: (i64, i64), size: u32) -> Result<f64> {
    let a = ii.box_sum(SquareBox::new(p1.0, p1.1, size))? as f64;
    let b = ii.box_sum(SquareBox::new(p2.0, p2.1, size))? as f64;
    Ok((a - b) / (size as f64 * size as f64))
}

/// Decodes an 8-bit binary PGM (`P5`).
pub fn load_pgm(bytes: &[u8]) -> Result<GrayImage> {
    let mut pos = 0usize;
    if bytes.len() < 2 || &bytes[..2] != b"P5" {
        return Err(Error::MalformedHeader("missing P5 magic".into()));
    }
    pos += 2;
    let mut fields = [0u32; 3];
    for field in fields.iter_mut() {
        // Whitespace and comments may precede every header token.
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while let Some(&b) = bytes.get(pos) {
                        pos += 1;
                        if b == b'\n' || b == b'\r' {
                            break;
                        }
                    }
                }
                _ => break,
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(|b| b.is_ascii_digit()) {
            pos += 1;
        }
        if start == pos {
            return Err(Error::MalformedHeader("expected a decimal number".into()));
        }
        let text = std::str::from_utf8(&bytes[start..pos]).expect("ascii digits");
        *field = text.parse().map_err(|_| Error::MalformedHeader(format!("number out of range: {text}")))?;
    }
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => return Err(Error::MalformedHeader("missing whitespace after maxval".into())),
    }
    let [width, height, maxval] = fields;
    if maxval == 0 || maxval > 255 {
        return Err(Error::UnsupportedMaxval(maxval));
    }
    let (width, height) = (width as usize, height as usize);
    if width == 0 || height == 0 {
        return Err(Error::InvalidDimensions { width, height });
    }
    let expected = width * height;
    let raster = &bytes[pos..];
    if raster.len() < expected {
        return Err(Error::TruncatedPixels { expected, found: raster.len() });
    }
    GrayImage::new(width, height, raster[..expected].to_vec())
}

/// Encodes `img` as a canonical binary PGM: `P5\n<w> <h>\n255\n` + raster.
pub fn write_pgm(img: &GrayImage) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend_from_slice(&img.data);
    out
}
