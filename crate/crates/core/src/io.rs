//! Binary PGM (P5) encoding and JSON sidecars.

use std::fs;
use std::path::Path;

use serde::Serialize;

use crate::{Error, Field, Result};

/// Encode a field as an 8-bit binary PGM, clamping to [0,1].
pub fn encode_pgm(field: &Field) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", field.width, field.height).into_bytes();
    out.extend(field.data.iter().map(|&v| quantize(v)));
    out
}

pub fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Decode a binary PGM with maxval ≤ 255 into [0,1] intensities.
pub fn decode_pgm(bytes: &[u8]) -> Result<Field> {
    let bad = |msg: &str| Error::Protocol(format!("invalid PGM: {msg}"));
    let mut pos = 0;
    let mut tokens = Vec::with_capacity(4);
    while tokens.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < bytes.len() && bytes[pos] == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad("truncated header"));
        }
        tokens.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| bad("header"))?);
    }
    if tokens[0] != "P5" {
        return Err(bad("not a P5 file"));
    }
    let num = |s: &str| s.parse::<usize>().map_err(|_| bad("header field"));
    let (w, h, maxval) = (num(tokens[1])?, num(tokens[2])?, num(tokens[3])?);
    if maxval == 0 || maxval > 255 {
        return Err(bad("unsupported maxval"));
    }
    pos += 1;
    let body = bytes.get(pos..pos + w * h).ok_or_else(|| bad("truncated data"))?;
    Field::new(w, h, body.iter().map(|&b| b as f64 / maxval as f64).collect())
}

pub fn write_pgm(path: &Path, field: &Field) -> Result<()> {
    write_bytes(path, &encode_pgm(field))
}

pub fn read_pgm(path: &Path) -> Result<Field> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_pgm(&bytes)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_bytes(path, text.as_bytes())
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Grayscale composite with exposure time in the red plane, as RGB8 PNG.
///
/// Exposure is normalised by `max_exposure`; the green and blue planes carry
/// the image.
pub fn write_exposure_png(path: &Path, image: &Field, exposure: &Field, max_exposure: f64) -> Result<()> {
    if !image.same_shape(exposure) {
        return Err(Error::LengthMismatch {
            expected: image.len(),
            actual: exposure.len(),
        });
    }
    let mut rgb = Vec::with_capacity(image.len() * 3);
    for (&v, &e) in image.data.iter().zip(&exposure.data) {
        let g = quantize(v);
        let r = if max_exposure > 0.0 { quantize(e / max_exposure) } else { 0 };
        rgb.extend_from_slice(&[r, g, g]);
    }
    let buf = image::RgbImage::from_raw(image.width as u32, image.height as u32, rgb)
        .ok_or_else(|| Error::InvalidConfig("image buffer size".into()))?;
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    buf.save(path).map_err(|e| Error::Ingestion {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })
}
