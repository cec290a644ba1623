//! Blockwise DCT codec.
//!
//! Images are grayscale. Compression stops at quantized coefficients (no
//! entropy coding); coefficients travel in the `STGC` container.
//! Decompression for analysis keeps real-valued pixels: no rounding and no
//! clamping, so sub-integer embedding traces survive.

pub mod dct;
mod pgm;

use std::path::Path;

use crate::binio::{read_file, write_file, Reader, Writer};
use crate::error::{ensure, Error, Result};

pub use pgm::{decode_pgm, encode_pgm, read_pgm, write_pgm};

/// Standard JPEG luminance quantization table (quality 50), row-major.
pub const BASE_LUMINANCE: [u8; 64] = [
    16, 11, 10, 16, 24, 40, 51, 61, //
    12, 12, 14, 19, 26, 58, 60, 55, //
    14, 13, 16, 24, 40, 57, 69, 56, //
    14, 17, 22, 29, 51, 87, 80, 62, //
    18, 22, 37, 56, 68, 109, 103, 77, //
    24, 35, 55, 64, 81, 104, 113, 92, //
    49, 64, 78, 87, 103, 121, 120, 101, //
    72, 92, 95, 98, 112, 100, 103, 99,
];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        ensure!(width >= 1 && height >= 1, "image dimensions must be positive");
        ensure!(
            pixels.len() == width * height,
            "pixel buffer has {} bytes, expected {}",
            pixels.len(),
            width * height
        );
        Ok(Self { width, height, pixels })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn get(&self, y: usize, x: usize) -> u8 {
        self.pixels[y * self.width + x]
    }

    /// Top-left crop to the largest multiple-of-8 size.
    pub fn crop_to_blocks(&self) -> Result<Self> {
        let (w, h) = (self.width / 8 * 8, self.height / 8 * 8);
        ensure!(w > 0 && h > 0, "image {}×{} smaller than one 8×8 block", self.width, self.height);
        let mut px = Vec::with_capacity(w * h);
        for y in 0..h {
            px.extend_from_slice(&self.pixels[y * self.width..y * self.width + w]);
        }
        Self::new(w, h, px)
    }

    /// Bilinear resampling to `size × size`.
    pub fn resize_square(&self, size: usize) -> Result<Self> {
        ensure!(size >= 8 && size.is_multiple_of(8), "target size {size} must be a positive multiple of 8");
        let buf = image::GrayImage::from_raw(self.width as u32, self.height as u32, self.pixels.clone())
            .expect("buffer length checked at construction");
        let out = image::imageops::resize(&buf, size as u32, size as u32, image::imageops::FilterType::Triangle);
        Self::new(size, size, out.into_raw())
    }

    pub fn to_real(&self) -> RealImage {
        RealImage {
            width: self.width,
            height: self.height,
            values: self.pixels.iter().map(|&p| p as f32).collect(),
        }
    }
}

/// Real-valued spatial image; values may fall outside `[0, 255]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RealImage {
    width: usize,
    height: usize,
    values: Vec<f32>,
}

impl RealImage {
    pub fn new(width: usize, height: usize, values: Vec<f32>) -> Result<Self> {
        ensure!(width >= 1 && height >= 1, "image dimensions must be positive");
        ensure!(
            values.len() == width * height,
            "value buffer has {} entries, expected {}",
            values.len(),
            width * height
        );
        ensure!(values.iter().all(|v| v.is_finite()), "real image contains non-finite values");
        Ok(Self { width, height, values })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn get(&self, y: usize, x: usize) -> f32 {
        self.values[y * self.width + x]
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Self {
        Self { width: self.width, height: self.height, values: self.values.iter().map(|&v| f(v)).collect() }
    }

    /// Round half away from zero and clamp into `[0, 255]`.
    pub fn round_clamp(&self) -> GrayImage {
        GrayImage {
            width: self.width,
            height: self.height,
            pixels: self.values.iter().map(|v| v.round().clamp(0.0, 255.0) as u8).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct QuantTable {
    q: [u8; 64],
}

impl QuantTable {
    pub fn new(q: [u8; 64]) -> Result<Self> {
        ensure!(q.iter().all(|&v| v >= 1), "quantization table entries must be ≥ 1");
        Ok(Self { q })
    }

    pub fn ones() -> Self {
        Self { q: [1; 64] }
    }

    pub fn entries(&self) -> &[u8; 64] {
        &self.q
    }

    pub fn get(&self, k: usize, l: usize) -> u8 {
        self.q[k * 8 + l]
    }

    pub fn median(&self) -> f64 {
        let mut v: Vec<u8> = self.q.to_vec();
        v.sort_unstable();
        (v[31] as f64 + v[32] as f64) / 2.0
    }
}

/// IJG quality scaling of [`BASE_LUMINANCE`].
pub fn quality_to_qtable(qf: u32) -> Result<QuantTable> {
    ensure!((1..=100).contains(&qf), "quality factor {qf} outside 1..=100");
    let scale = if qf < 50 { 5000 / qf } else { 200 - 2 * qf };
    let mut q = [0u8; 64];
    for (dst, &b) in q.iter_mut().zip(BASE_LUMINANCE.iter()) {
        *dst = ((b as u32 * scale + 50) / 100).clamp(1, 255) as u8;
    }
    QuantTable::new(q)
}

/// Quantized DCT coefficients stored block by block in raster order; each
/// block holds its 64 coefficients row-major, `(0, 0)` being DC.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CoefficientImage {
    width: usize,
    height: usize,
    qtable: QuantTable,
    coeffs: Vec<i16>,
}

impl CoefficientImage {
    pub fn new(width: usize, height: usize, qtable: QuantTable, coeffs: Vec<i16>) -> Result<Self> {
        ensure!(
            width >= 8 && height >= 8 && width.is_multiple_of(8) && height.is_multiple_of(8),
            "coefficient image {width}×{height} is not a positive multiple of 8"
        );
        ensure!(
            coeffs.len() == width * height,
            "coefficient buffer has {} entries, expected {}",
            coeffs.len(),
            width * height
        );
        Ok(Self { width, height, qtable, coeffs })
    }

    pub fn zeros(width: usize, height: usize, qtable: QuantTable) -> Result<Self> {
        Self::new(width, height, qtable, vec![0; width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn qtable(&self) -> &QuantTable {
        &self.qtable
    }

    pub fn coeffs(&self) -> &[i16] {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut [i16] {
        &mut self.coeffs
    }

    pub fn blocks_wide(&self) -> usize {
        self.width / 8
    }

    pub fn blocks_high(&self) -> usize {
        self.height / 8
    }

    pub fn block_count(&self) -> usize {
        self.blocks_wide() * self.blocks_high()
    }

    pub fn block(&self, index: usize) -> &[i16] {
        &self.coeffs[index * 64..(index + 1) * 64]
    }

    /// Index into [`coeffs`](Self::coeffs) of coefficient `(k, l)` in block `(by, bx)`.
    pub fn index(&self, by: usize, bx: usize, k: usize, l: usize) -> usize {
        (by * self.blocks_wide() + bx) * 64 + k * 8 + l
    }

    /// Position `i` of the buffer is an AC coefficient.
    pub fn is_ac(i: usize) -> bool {
        !i.is_multiple_of(64)
    }
}

pub fn compress(img: &GrayImage, qt: &QuantTable) -> Result<CoefficientImage> {
    ensure!(
        img.width.is_multiple_of(8) && img.height.is_multiple_of(8),
        "compress: image {}×{} dimensions must be multiples of 8",
        img.width,
        img.height
    );
    let (bw, bh) = (img.width / 8, img.height / 8);
    let mut coeffs = Vec::with_capacity(img.width * img.height);
    for by in 0..bh {
        for bx in 0..bw {
            let mut block = [0.0f64; 64];
            for m in 0..8 {
                for n in 0..8 {
                    block[m * 8 + n] = img.get(by * 8 + m, bx * 8 + n) as f64 - 128.0;
                }
            }
            let f = dct::forward(&block);
            for (i, v) in f.iter().enumerate() {
                let q = (v / qt.q[i] as f64).round();
                coeffs.push(q.clamp(i16::MIN as f64, i16::MAX as f64) as i16);
            }
        }
    }
    CoefficientImage::new(img.width, img.height, *qt, coeffs)
}

/// Dequantize, inverse DCT, add 128. No rounding or clamping.
pub fn decompress_real(ci: &CoefficientImage) -> RealImage {
    let mut values = vec![0.0f32; ci.width * ci.height];
    for by in 0..ci.blocks_high() {
        for bx in 0..ci.blocks_wide() {
            let b = ci.block(by * ci.blocks_wide() + bx);
            let mut f = [0.0f64; 64];
            for i in 0..64 {
                f[i] = b[i] as f64 * ci.qtable.q[i] as f64;
            }
            let px = dct::inverse(&f);
            for m in 0..8 {
                for n in 0..8 {
                    values[(by * 8 + m) * ci.width + bx * 8 + n] = (px[m * 8 + n] + 128.0) as f32;
                }
            }
        }
    }
    RealImage { width: ci.width, height: ci.height, values }
}

/// Nonzero coefficients excluding every block's DC.
pub fn nonzero_ac_count(ci: &CoefficientImage) -> usize {
    ci.coeffs.iter().enumerate().filter(|&(i, &c)| CoefficientImage::is_ac(i) && c != 0).count()
}

/// Compresses, then decompresses/rounds/recompresses until the coefficients
/// stop changing (at most `max_rounds` extra rounds).
pub fn compress_to_fixpoint(img: &GrayImage, qt: &QuantTable, max_rounds: usize) -> Result<CoefficientImage> {
    let mut ci = compress(img, qt)?;
    for _ in 0..max_rounds {
        let next = compress(&decompress_real(&ci).round_clamp(), qt)?;
        if next == ci {
            break;
        }
        ci = next;
    }
    Ok(ci)
}

const STGC_MAGIC: &[u8; 4] = b"STGC";
const STGC_VERSION: u16 = 1;

pub fn encode_coefficients(ci: &CoefficientImage) -> Vec<u8> {
    let mut w = Writer::new();
    w.bytes(STGC_MAGIC)
        .u16(STGC_VERSION)
        .u32(ci.height as u32)
        .u32(ci.width as u32)
        .bytes(&ci.qtable.q);
    for &c in &ci.coeffs {
        w.i16(c);
    }
    w.finish()
}

pub fn decode_coefficients(bytes: &[u8]) -> Result<CoefficientImage> {
    let mut r = Reader::new(bytes, "STGC");
    r.magic(STGC_MAGIC)?;
    r.version(STGC_VERSION)?;
    let height = r.u32()? as usize;
    let width = r.u32()? as usize;
    let q: [u8; 64] = r.take(64)?.try_into().unwrap();
    let qtable = QuantTable::new(q).map_err(|e| Error::format("STGC", e.to_string()))?;
    let n = width.checked_mul(height).ok_or_else(|| Error::format("STGC", "dimensions overflow"))?;
    if r.remaining() != n * 2 {
        return Err(Error::format(
            "STGC",
            format!("expected {} coefficient bytes, found {}", n * 2, r.remaining()),
        ));
    }
    let mut coeffs = Vec::with_capacity(n);
    for _ in 0..n {
        coeffs.push(r.i16()?);
    }
    CoefficientImage::new(width, height, qtable, coeffs).map_err(|e| Error::format("STGC", e.to_string()))
}

pub fn read_coefficients(path: impl AsRef<Path>) -> Result<CoefficientImage> {
    decode_coefficients(&read_file(path.as_ref())?)
}

pub fn write_coefficients(ci: &CoefficientImage, path: impl AsRef<Path>) -> Result<()> {
    write_file(path.as_ref(), &encode_coefficients(ci))
}
