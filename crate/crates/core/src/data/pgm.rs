//! Binary PGM (P5, maxval 255) image files.
//!
//! Images live in memory as `[1, h, w]` tensors with intensities in [0, 1].
//! Writing quantizes with round(v * 255) / 255; an image whose values are
//! already multiples of 1/255 round-trips bit-exactly.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Quantize an intensity in [0, 1] to one of 256 levels.
pub fn quantize_intensity(v: f64) -> f64 {
    (v.clamp(0.0, 1.0) * 255.0).round() / 255.0
}

fn image_dims(image: &Tensor) -> Result<(usize, usize)> {
    let s = image.shape();
    if s.len() != 3 || s[0] != 1 || s[1] == 0 || s[2] == 0 {
        return Err(Error::invalid(format!("pgm: image must be [1,h,w] with h,w >= 1, got {s:?}")));
    }
    Ok((s[1], s[2]))
}

pub fn write_pgm(path: &Path, image: &Tensor) -> Result<()> {
    let (h, w) = image_dims(image)?;
    let mut bytes = Vec::with_capacity(32 + h * w);
    bytes.extend_from_slice(format!("P5\n{w} {h}\n255\n").as_bytes());
    for &v in image.data() {
        if !v.is_finite() {
            return Err(Error::invalid("pgm: non-finite intensity"));
        }
        bytes.push((v.clamp(0.0, 1.0) * 255.0).round() as u8);
    }
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&bytes).map_err(|e| Error::io(path, e))
}

pub fn read_pgm(path: &Path) -> Result<Tensor> {
    let mut bytes = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path, e))?;
    parse_pgm(&bytes).map_err(|e| Error::format(format!("{}: {e}", path.display())))
}

fn parse_pgm(bytes: &[u8]) -> std::result::Result<Tensor, String> {
    let mut pos = 0usize;
    let mut token = |bytes: &[u8]| -> std::result::Result<Vec<u8>, String> {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err("truncated header".into());
        }
        Ok(bytes[start..pos].to_vec())
    };

    if token(bytes)? != b"P5" {
        return Err("not a binary PGM (missing P5 magic)".into());
    }
    let parse_num = |t: Vec<u8>| -> std::result::Result<usize, String> {
        std::str::from_utf8(&t)
            .ok()
            .and_then(|s| s.parse::<usize>().ok())
            .ok_or_else(|| "bad header number".into())
    };
    let w = parse_num(token(bytes)?)?;
    let h = parse_num(token(bytes)?)?;
    let maxval = parse_num(token(bytes)?)?;
    if maxval != 255 {
        return Err(format!("unsupported maxval {maxval} (must be 255)"));
    }
    if w == 0 || h == 0 {
        return Err("zero image dimension".into());
    }
    // Exactly one whitespace byte separates the header from the raster.
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err("missing raster separator".into());
    }
    pos += 1;
    let need = w * h;
    let raster = &bytes[pos..];
    if raster.len() < need {
        return Err(format!("raster truncated: need {need} bytes, have {}", raster.len()));
    }
    if raster.len() > need {
        return Err(format!("trailing data after raster: {} extra bytes", raster.len() - need));
    }
    let data = raster.iter().map(|&b| b as f64 / 255.0).collect();
    Tensor::new(vec![1, h, w], data).map_err(|e| e.to_string())
}
