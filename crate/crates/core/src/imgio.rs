//! Binary PGM/PPM files for dataset frames and debug dumps.
//!
//! Depth goes to 16-bit P5 (one millimeter per count, big-endian as the
//! format demands), color to 8-bit P6.  Readers accept any whitespace and
//! `#` comments in the header, like every other netpbm tool.

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use std::fs;
use std::path::Path;

/// Depth [1, H, W] in millimeters → 16-bit P5.  Values round to the nearest
/// count and clamp to the format's range.
pub fn write_depth_pgm(path: impl AsRef<Path>, depth_mm: &Tensor) -> Result<()> {
    if depth_mm.rank() != 3 || depth_mm.shape()[0] != 1 {
        return Err(Error::ShapeMismatch(format!(
            "depth must be [1, H, W], got {:?}",
            depth_mm.shape()
        )));
    }
    let (h, w) = (depth_mm.shape()[1], depth_mm.shape()[2]);
    let mut bytes = format!("P5\n{w} {h}\n65535\n").into_bytes();
    bytes.reserve(2 * h * w);
    for &mm in depth_mm.data() {
        let v = mm.round().clamp(0.0, 65535.0) as u16;
        bytes.extend_from_slice(&v.to_be_bytes());
    }
    fs::write(path, bytes)?;
    Ok(())
}

/// 16-bit P5 → depth [1, H, W] in millimeters.
pub fn read_depth_pgm(path: impl AsRef<Path>) -> Result<Tensor> {
    let bytes = fs::read(path)?;
    let (w, h, maxval, data) = parse_netpbm(&bytes, b"P5")?;
    if maxval != 65535 {
        return Err(Error::ImageFormat(format!(
            "depth maps are 16-bit (maxval 65535), file says {maxval}"
        )));
    }
    if data.len() != 2 * w * h {
        return Err(Error::ImageFormat(format!(
            "expected {} pixel bytes, found {}",
            2 * w * h,
            data.len()
        )));
    }
    let vals = data
        .chunks_exact(2)
        .map(|c| u16::from_be_bytes([c[0], c[1]]) as f32)
        .collect();
    Ok(Tensor::new(&[1, h, w], vals))
}

/// Color [3, H, W] in [0, 1] → 8-bit P6 (interleaved on disk).
pub fn write_rgb_ppm(path: impl AsRef<Path>, rgb: &Tensor) -> Result<()> {
    if rgb.rank() != 3 || rgb.shape()[0] != 3 {
        return Err(Error::ShapeMismatch(format!(
            "rgb must be [3, H, W], got {:?}",
            rgb.shape()
        )));
    }
    let (h, w) = (rgb.shape()[1], rgb.shape()[2]);
    let mut bytes = format!("P6\n{w} {h}\n255\n").into_bytes();
    bytes.reserve(3 * h * w);
    let plane = h * w;
    for i in 0..plane {
        for c in 0..3 {
            let v = (rgb.data()[c * plane + i] * 255.0).round().clamp(0.0, 255.0) as u8;
            bytes.push(v);
        }
    }
    fs::write(path, bytes)?;
    Ok(())
}

/// 8-bit P6 → color [3, H, W] in [0, 1].
pub fn read_rgb_ppm(path: impl AsRef<Path>) -> Result<Tensor> {
    let bytes = fs::read(path)?;
    let (w, h, maxval, data) = parse_netpbm(&bytes, b"P6")?;
    if maxval != 255 {
        return Err(Error::ImageFormat(format!(
            "color images are 8-bit (maxval 255), file says {maxval}"
        )));
    }
    if data.len() != 3 * w * h {
        return Err(Error::ImageFormat(format!(
            "expected {} pixel bytes, found {}",
            3 * w * h,
            data.len()
        )));
    }
    let plane = h * w;
    let mut vals = vec![0.0f32; 3 * plane];
    for i in 0..plane {
        for c in 0..3 {
            vals[c * plane + i] = data[3 * i + c] as f32 / 255.0;
        }
    }
    Ok(Tensor::new(&[3, h, w], vals))
}

/// Debug dump of a unit-range map [1, H, W] as 8-bit P5.
pub fn write_heatmap_pgm(path: impl AsRef<Path>, heat: &Tensor) -> Result<()> {
    if heat.rank() != 3 || heat.shape()[0] != 1 {
        return Err(Error::ShapeMismatch(format!(
            "heatmap must be [1, H, W], got {:?}",
            heat.shape()
        )));
    }
    let (h, w) = (heat.shape()[1], heat.shape()[2]);
    let mut bytes = format!("P5\n{w} {h}\n255\n").into_bytes();
    bytes.extend(
        heat.data()
            .iter()
            .map(|&v| (v * 255.0).round().clamp(0.0, 255.0) as u8),
    );
    fs::write(path, bytes)?;
    Ok(())
}

/// Header parse shared by both formats: magic, three decimal fields
/// (width, height, maxval) separated by whitespace or `#` comments, one
/// whitespace byte, then the raster.
fn parse_netpbm<'a>(bytes: &'a [u8], magic: &[u8]) -> Result<(usize, usize, u32, &'a [u8])> {
    if bytes.len() < 2 || &bytes[..2] != magic {
        return Err(Error::ImageFormat(format!(
            "not a {} file",
            String::from_utf8_lossy(magic)
        )));
    }
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in &mut fields {
        // skip whitespace and comments
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while pos < bytes.len() && bytes[pos] != b'\n' {
                        pos += 1;
                    }
                }
                Some(b) if b.is_ascii_digit() => break,
                _ => return Err(Error::ImageFormat("truncated header".into())),
            }
        }
        let start = pos;
        while pos < bytes.len() && bytes[pos].is_ascii_digit() {
            pos += 1;
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .expect("digits are utf-8")
            .parse()
            .map_err(|_| Error::ImageFormat("header field overflows".into()))?;
    }
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => return Err(Error::ImageFormat("missing raster separator".into())),
    }
    let (w, h, maxval) = (fields[0], fields[1], fields[2] as u32);
    if w == 0 || h == 0 {
        return Err(Error::ImageFormat("zero image dimension".into()));
    }
    Ok((w, h, maxval, &bytes[pos..]))
}
