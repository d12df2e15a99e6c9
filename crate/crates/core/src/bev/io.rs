//! Raster export: 8-bit RGB PNG and a raw float tensor format.
//!
//! The tensor format is a 16-byte header of four little-endian `u32`
//! (`MAGIC`, width, height, channels) followed by `f32` little-endian values
//! in row-major height x width x channel order.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use base64::Engine;

use crate::error::{Error, Result};

use super::{BevRaster, RasterSpec, NUM_CHANNELS};

/// `b"BEVR"` read as a little-endian `u32`.
pub const MAGIC: u32 = u32::from_le_bytes(*b"BEVR");
pub const HEADER_LEN: usize = 16;

fn to_u8(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Interleaved RGB bytes with env/dynamic/ego mapped to R/G/B.
pub fn rgb_bytes(raster: &BevRaster) -> Vec<u8> {
    let n = raster.spec().num_pixels();
    let mut out = Vec::with_capacity(3 * n);
    for i in 0..n {
        for c in 0..NUM_CHANNELS {
            out.push(to_u8(raster.channel(c)[i]));
        }
    }
    out
}

pub fn write_png(raster: &BevRaster, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let spec = raster.spec();
    let mut encoder = png::Encoder::new(BufWriter::new(file), spec.width as u32, spec.height as u32);
    encoder.set_color(png::ColorType::Rgb);
    encoder.set_depth(png::BitDepth::Eight);
    let png_err = |e: png::EncodingError| Error::io(path, std::io::Error::other(e));
    let mut writer = encoder.write_header().map_err(png_err)?;
    writer.write_image_data(&rgb_bytes(raster)).map_err(png_err)?;
    writer.finish().map_err(png_err)
}

pub fn encode_tensor(raster: &BevRaster) -> Vec<u8> {
    let spec = raster.spec();
    let n = spec.num_pixels();
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * NUM_CHANNELS * n);
    for word in [MAGIC, spec.width as u32, spec.height as u32, NUM_CHANNELS as u32] {
        out.extend_from_slice(&word.to_le_bytes());
    }
    for i in 0..n {
        for c in 0..NUM_CHANNELS {
            out.extend_from_slice(&raster.channel(c)[i].to_le_bytes());
        }
    }
    out
}

/// Decode a tensor; geometry fields other than the pixel size come from `template`.
pub fn decode_tensor(bytes: &[u8], template: &RasterSpec) -> Result<BevRaster> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::invalid("raster tensor shorter than its header"));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[4 * i..4 * i + 4].try_into().unwrap());
    if word(0) != MAGIC {
        return Err(Error::invalid("bad raster tensor magic"));
    }
    let (w, h, c) = (word(1) as usize, word(2) as usize, word(3) as usize);
    if c != NUM_CHANNELS {
        return Err(Error::invalid(format!("expected {NUM_CHANNELS} channels, got {c}")));
    }
    let spec = RasterSpec {
        width: w,
        height: h,
        ..*template
    };
    let body = &bytes[HEADER_LEN..];
    if body.len() != 4 * w * h * c {
        return Err(Error::invalid("raster tensor length does not match its header"));
    }
    let n = w * h;
    let mut planar = vec![0.0f32; c * n];
    for (k, chunk) in body.chunks_exact(4).enumerate() {
        let (pix, ch) = (k / c, k % c);
        planar[ch * n + pix] = f32::from_le_bytes(chunk.try_into().unwrap());
    }
    BevRaster::from_planar(spec, planar)
}

pub fn write_tensor(raster: &BevRaster, path: &Path) -> Result<()> {
    let mut f = BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?);
    f.write_all(&encode_tensor(raster))
        .and_then(|_| f.flush())
        .map_err(|e| Error::io(path, e))
}

pub fn read_tensor(path: &Path, template: &RasterSpec) -> Result<BevRaster> {
    let mut bytes = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    decode_tensor(&bytes, template)
}

pub fn tensor_base64(raster: &BevRaster) -> String {
    base64::engine::general_purpose::STANDARD.encode(encode_tensor(raster))
}

pub fn tensor_from_base64(text: &str, template: &RasterSpec) -> Result<BevRaster> {
    let bytes = base64::engine::general_purpose::STANDARD
        .decode(text)
        .map_err(|e| Error::invalid(format!("bad base64 raster: {e}")))?;
    decode_tensor(&bytes, template)
}
