//! Image I/O: 8-bit PNG for viewing and training data, portable float
//! maps (PFM) for lossless depth and metric comparisons.

use std::fs;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};

/// Quantizes [0,1] to 8 bits, round half up.
pub fn quantize8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0 + 0.5).floor() as u8
}

/// Writes an RGB image; float values are clamped to [0,1] at write time.
pub fn save_png_rgb(path: &Path, width: usize, height: usize, data: &[f64]) -> Result<()> {
    assert_eq!(data.len(), width * height * 3);
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let bytes: Vec<u8> = data.iter().map(|&v| quantize8(v)).collect();
    image::save_buffer(
        path,
        &bytes,
        width as u32,
        height as u32,
        image::ColorType::Rgb8,
    )
    .map_err(|e| Error::InvalidArgument(format!("writing {}: {e}", path.display())))
}

pub fn load_png_rgb(path: &Path) -> Result<(usize, usize, Vec<f64>)> {
    let img = image::open(path)
        .map_err(|e| Error::InvalidArgument(format!("reading {}: {e}", path.display())))?
        .into_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data = img.into_raw().iter().map(|&b| b as f64 / 255.0).collect();
    Ok((w, h, data))
}

/// Writes a single-channel 8-bit mask (nonzero = 255).
pub fn save_png_mask(path: &Path, width: usize, height: usize, mask: &[bool]) -> Result<()> {
    assert_eq!(mask.len(), width * height);
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let bytes: Vec<u8> = mask.iter().map(|&m| if m { 255 } else { 0 }).collect();
    image::save_buffer(
        path,
        &bytes,
        width as u32,
        height as u32,
        image::ColorType::L8,
    )
    .map_err(|e| Error::InvalidArgument(format!("writing {}: {e}", path.display())))
}

pub fn load_png_mask(path: &Path) -> Result<(usize, usize, Vec<bool>)> {
    let img = image::open(path)
        .map_err(|e| Error::InvalidArgument(format!("reading {}: {e}", path.display())))?
        .into_luma8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    for &b in img.as_raw() {
        if b != 0 && b != 255 {
            return Err(Error::schema(path, format!("mask value {b} is not binary")));
        }
    }
    let data = img.into_raw().iter().map(|&b| b == 255).collect();
    Ok((w, h, data))
}

/// Writes a PFM file ("PF" = 3-channel, "Pf" = 1-channel), little-endian,
/// rows bottom-to-top per the format convention.
pub fn save_pfm(path: &Path, width: usize, height: usize, channels: usize, data: &[f64]) -> Result<()> {
    assert!(channels == 1 || channels == 3);
    assert_eq!(data.len(), width * height * channels);
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    let header = if channels == 3 { "PF" } else { "Pf" };
    write!(w, "{header}\n{width} {height}\n-1.0\n").map_err(|e| Error::io(path, e))?;
    for row in (0..height).rev() {
        for col in 0..width {
            for ch in 0..channels {
                let v = data[(row * width + col) * channels + ch] as f32;
                w.write_all(&v.to_le_bytes()).map_err(|e| Error::io(path, e))?;
            }
        }
    }
    Ok(())
}

pub fn load_pfm(path: &Path) -> Result<(usize, usize, usize, Vec<f64>)> {
    let mut bytes = Vec::new();
    fs::File::open(path)
        .map_err(|e| Error::io(path, e))?
        .read_to_end(&mut bytes)
        .map_err(|e| Error::io(path, e))?;
    let mut at = 0;
    let mut token = || -> Result<String> {
        while at < bytes.len() && bytes[at].is_ascii_whitespace() {
            at += 1;
        }
        let start = at;
        while at < bytes.len() && !bytes[at].is_ascii_whitespace() {
            at += 1;
        }
        if start == at {
            return Err(Error::schema(path, "truncated PFM header"));
        }
        let s = String::from_utf8_lossy(&bytes[start..at]).into_owned();
        at += 1; // single whitespace after token
        Ok(s)
    };
    let kind = token()?;
    let channels = match kind.as_str() {
        "PF" => 3,
        "Pf" => 1,
        other => return Err(Error::schema(path, format!("bad PFM magic {other}"))),
    };
    let width: usize = token()?
        .parse()
        .map_err(|_| Error::schema(path, "bad width"))?;
    let height: usize = token()?
        .parse()
        .map_err(|_| Error::schema(path, "bad height"))?;
    let scale: f64 = token()?
        .parse()
        .map_err(|_| Error::schema(path, "bad scale"))?;
    let little_endian = scale < 0.0;
    let need = width * height * channels * 4;
    if bytes.len() < at + need {
        return Err(Error::schema(path, "truncated PFM data"));
    }
    let mut data = vec![0.0f64; width * height * channels];
    for row in 0..height {
        let src_row = height - 1 - row;
        for col in 0..width {
            for ch in 0..channels {
                let idx = at + ((src_row * width + col) * channels + ch) * 4;
                let raw: [u8; 4] = bytes[idx..idx + 4].try_into().unwrap();
                let v = if little_endian {
                    f32::from_le_bytes(raw)
                } else {
                    f32::from_be_bytes(raw)
                };
                data[(row * width + col) * channels + ch] = v as f64;
            }
        }
    }
    Ok((width, height, channels, data))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantization_rounds_half_up() {
        assert_eq!(quantize8(0.1), 26); // 25.5 rounds up
        assert_eq!(quantize8(0.0), 0);
        assert_eq!(quantize8(1.0), 255);
        assert_eq!(quantize8(1.7), 255);
        assert_eq!(quantize8(-0.3), 0);
    }

    #[test]
    fn pfm_roundtrip_is_lossless_in_f32() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.pfm");
        let data = vec![0.5, -1.25, 3e7, f64::INFINITY, 0.0, 42.0];
        save_pfm(&path, 3, 2, 1, &data).unwrap();
        let (w, h, ch, back) = load_pfm(&path).unwrap();
        assert_eq!((w, h, ch), (3, 2, 1));
        for (a, b) in data.iter().zip(&back) {
            assert_eq!(*a as f32, *b as f32);
        }
    }

    #[test]
    fn png_roundtrip_quantizes_once() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("img.png");
        let data: Vec<f64> = (0..4 * 2 * 3).map(|i| i as f64 / 23.0).collect();
        save_png_rgb(&path, 4, 2, &data).unwrap();
        let (w, h, back) = load_png_rgb(&path).unwrap();
        assert_eq!((w, h), (4, 2));
        for (a, b) in data.iter().zip(&back) {
            assert!((a - b).abs() <= 0.5 / 255.0 + 1e-12);
        }
    }
}
