//! Binary k-space and mask files, 8-bit PNG export.
//!
//! K-space: `"KSPC"`, `u32` version, `u32` nx, ny, nc, then `nc·nx·ny`
//! `(re, im)` little-endian `f32` pairs, coil-slowest and column-fastest.
//!
//! Mask: `"MASK"`, `u32` version, `u32` nx, ny, then `nx·ny` bytes in
//! `{0, 1}`, row-major.

use std::fs;
use std::path::Path;

use image::{GrayImage, ImageFormat};
use num_complex::Complex64;

use crate::error::{HkgmError, Result};
use crate::mask::SamplingMask;
use crate::volume::{KSpaceVolume, RealImage};

pub const KSPACE_MAGIC: &[u8; 4] = b"KSPC";
pub const MASK_MAGIC: &[u8; 4] = b"MASK";
pub const FORMAT_VERSION: u32 = 1;

fn format_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(HkgmError::Format(msg.into()))
}

/// Little-endian cursor over a byte buffer that reports truncation.
pub(crate) struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    what: &'static str,
}

impl<'a> Reader<'a> {
    pub(crate) fn new(buf: &'a [u8], what: &'static str) -> Self {
        Reader { buf, pos: 0, what }
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return format_err(format!(
                "{} truncated: wanted {n} bytes at offset {}, {} left",
                self.what,
                self.pos,
                self.buf.len() - self.pos
            ));
        }
        let out = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    pub(crate) fn magic(&mut self, expect: &[u8; 4]) -> Result<()> {
        let got = self.take(4)?;
        if got != expect {
            return format_err(format!(
                "{}: bad magic {:?}, expected {:?}",
                self.what,
                String::from_utf8_lossy(got),
                String::from_utf8_lossy(expect)
            ));
        }
        Ok(())
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub(crate) fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub(crate) fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub(crate) fn version(&mut self, expect: u32) -> Result<()> {
        let v = self.u32()?;
        if v != expect {
            return format_err(format!(
                "{}: unsupported version {v}, expected {expect}",
                self.what
            ));
        }
        Ok(())
    }

    pub(crate) fn finish(&self) -> Result<()> {
        if self.pos != self.buf.len() {
            return format_err(format!(
                "{}: {} trailing bytes",
                self.what,
                self.buf.len() - self.pos
            ));
        }
        Ok(())
    }
}

pub fn encode_kspace(k: &KSpaceVolume) -> Vec<u8> {
    let mut out = Vec::with_capacity(20 + 8 * k.as_slice().len());
    out.extend_from_slice(KSPACE_MAGIC);
    for v in [FORMAT_VERSION, k.nx() as u32, k.ny() as u32, k.nc() as u32] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for z in k.as_slice() {
        out.extend_from_slice(&(z.re as f32).to_le_bytes());
        out.extend_from_slice(&(z.im as f32).to_le_bytes());
    }
    out
}

pub fn decode_kspace(buf: &[u8]) -> Result<KSpaceVolume> {
    let mut r = Reader::new(buf, "k-space file");
    r.magic(KSPACE_MAGIC)?;
    r.version(FORMAT_VERSION)?;
    let (nx, ny, nc) = (r.u32()? as usize, r.u32()? as usize, r.u32()? as usize);
    let n = nx
        .checked_mul(ny)
        .and_then(|v| v.checked_mul(nc))
        .ok_or_else(|| HkgmError::Format(format!("k-space extents {nx}x{ny}x{nc} overflow")))?;
    if n.saturating_mul(8) > buf.len() {
        return format_err(format!(
            "k-space file truncated: {nx}x{ny}x{nc} samples declared"
        ));
    }
    let mut data = Vec::with_capacity(n);
    for _ in 0..n {
        let re = r.f32()?;
        let im = r.f32()?;
        data.push(Complex64::new(re as f64, im as f64));
    }
    r.finish()?;
    KSpaceVolume::new(nx, ny, nc, data)
}

pub fn save_kspace(k: &KSpaceVolume, path: impl AsRef<Path>) -> Result<()> {
    Ok(fs::write(path, encode_kspace(k))?)
}

pub fn load_kspace(path: impl AsRef<Path>) -> Result<KSpaceVolume> {
    decode_kspace(&fs::read(path)?)
}

pub fn encode_mask(m: &SamplingMask) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + m.grid().len());
    out.extend_from_slice(MASK_MAGIC);
    for v in [FORMAT_VERSION, m.nx() as u32, m.ny() as u32] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend(m.grid().iter().map(|&b| b as u8));
    out
}

pub fn decode_mask(buf: &[u8]) -> Result<SamplingMask> {
    let mut r = Reader::new(buf, "mask file");
    r.magic(MASK_MAGIC)?;
    r.version(FORMAT_VERSION)?;
    let (nx, ny) = (r.u32()? as usize, r.u32()? as usize);
    let n = nx
        .checked_mul(ny)
        .ok_or_else(|| HkgmError::Format(format!("mask extents {nx}x{ny} overflow")))?;
    let bytes = r.take(n)?;
    r.finish()?;
    let grid = bytes
        .iter()
        .enumerate()
        .map(|(i, &b)| match b {
            0 => Ok(false),
            1 => Ok(true),
            other => format_err(format!("mask byte {i} is {other}, expected 0 or 1")),
        })
        .collect::<Result<Vec<_>>>()?;
    SamplingMask::from_grid(nx, ny, grid)
}

pub fn save_mask(m: &SamplingMask, path: impl AsRef<Path>) -> Result<()> {
    Ok(fs::write(path, encode_mask(m))?)
}

pub fn load_mask(path: impl AsRef<Path>) -> Result<SamplingMask> {
    decode_mask(&fs::read(path)?)
}

/// Quantizes `[0, peak]` linearly onto `[0, 255]`, rounding half up.
pub fn quantize(img: &RealImage, peak: f64) -> Vec<u8> {
    img.as_slice()
        .iter()
        .map(|&v| {
            let q = if peak > 0.0 {
                (v / peak * 255.0 + 0.5).floor()
            } else {
                0.0
            };
            q.clamp(0.0, 255.0) as u8
        })
        .collect()
}

/// Peak used by [`save_png`]: images already within `[0, 1]` keep their
/// absolute scale, brighter ones are scaled by their maximum.
pub fn display_peak(img: &RealImage) -> f64 {
    img.max().max(1.0)
}

pub fn save_png(img: &RealImage, path: impl AsRef<Path>) -> Result<()> {
    save_png_scaled(img, display_peak(img), path)
}

pub fn save_png_scaled(img: &RealImage, peak: f64, path: impl AsRef<Path>) -> Result<()> {
    let gray = GrayImage::from_raw(img.ny() as u32, img.nx() as u32, quantize(img, peak))
        .expect("buffer matches extents");
    gray.save_with_format(path, ImageFormat::Png)
        .map_err(|e| HkgmError::Format(format!("PNG encoding failed: {e}")))
}

/// 8-bit grayscale PNG read back onto `[0, 1]`.
pub fn load_png(path: impl AsRef<Path>) -> Result<RealImage> {
    let img = image::open(path.as_ref())
        .map_err(|e| HkgmError::Format(format!("cannot read {}: {e}", path.as_ref().display())))?
        .to_luma8();
    let (w, h) = img.dimensions();
    RealImage::new(
        h as usize,
        w as usize,
        img.into_raw()
            .into_iter()
            .map(|b| b as f64 / 255.0)
            .collect(),
    )
}
