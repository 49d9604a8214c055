//! 8-bit binary PGM (P5) and PPM (P6) images.
//!
//! Samples map to `[0, 1]` by dividing by 255. Writing multiplies by 255 and
//! rounds half up, after clamping to `[0, 1]`.

use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

fn format_err(offset: usize, reason: impl Into<String>) -> Error {
    Error::Format { format: "pnm", offset, reason: reason.into() }
}

/// Quantizes one sample, rounding half up.
pub fn to_byte(v: f32) -> u8 {
    let v = f64::from(v);
    if v.is_nan() {
        return 0;
    }
    (v.clamp(0.0, 1.0) * 255.0 + 0.5).floor() as u8
}

pub fn from_byte(b: u8) -> f32 {
    f32::from(b) / 255.0
}

/// Encodes a `[C, H, W]` tensor with `C` of 1 (P5) or 3 (P6).
pub fn encode_pnm(image: &Tensor) -> Result<Vec<u8>> {
    let (c, h, w) = match image.shape() {
        &[c, h, w] if (c == 1 || c == 3) && h > 0 && w > 0 => (c, h, w),
        s => return Err(Error::invalid_shape(s, "expected [1|3, H, W] with H, W > 0")),
    };
    let magic = if c == 1 { "P5" } else { "P6" };
    let mut out = format!("{magic}\n{w} {h}\n255\n").into_bytes();
    let plane = h * w;
    let data = image.data();
    out.reserve(c * plane);
    for p in 0..plane {
        for ch in 0..c {
            out.push(to_byte(data[ch * plane + p]));
        }
    }
    Ok(out)
}

struct Header {
    channels: usize,
    width: usize,
    height: usize,
    data_start: usize,
}

fn skip_space(bytes: &[u8], mut pos: usize) -> usize {
    loop {
        match bytes.get(pos) {
            Some(b) if b.is_ascii_whitespace() => pos += 1,
            Some(b'#') => {
                while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                    pos += 1;
                }
            }
            _ => return pos,
        }
    }
}

fn read_number(bytes: &[u8], pos: usize, what: &str) -> Result<(usize, usize)> {
    let start = skip_space(bytes, pos);
    let mut end = start;
    while bytes.get(end).is_some_and(u8::is_ascii_digit) {
        end += 1;
    }
    if end == start {
        return Err(format_err(start, format!("expected {what}")));
    }
    let text = std::str::from_utf8(&bytes[start..end]).expect("ascii digits");
    let value = text.parse().map_err(|_| format_err(start, format!("{what} out of range")))?;
    Ok((value, end))
}

fn parse_header(bytes: &[u8]) -> Result<Header> {
    let channels = match bytes.get(..2) {
        Some(b"P5") => 1,
        Some(b"P6") => 3,
        _ => return Err(format_err(0, "expected magic P5 or P6")),
    };
    let (width, pos) = read_number(bytes, 2, "width")?;
    let (height, pos) = read_number(bytes, pos, "height")?;
    let (maxval, pos) = read_number(bytes, pos, "maxval")?;
    if width == 0 || height == 0 {
        return Err(format_err(2, "zero image dimension"));
    }
    if maxval != 255 {
        return Err(format_err(pos, format!("maxval {maxval} unsupported, need 255")));
    }
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => {}
        _ => return Err(format_err(pos, "expected single whitespace after maxval")),
    }
    Ok(Header { channels, width, height, data_start: pos + 1 })
}

/// Decodes a P5 or P6 image into a `[C, H, W]` tensor.
pub fn decode_pnm(bytes: &[u8]) -> Result<Tensor> {
    let Header { channels, width, height, data_start } = parse_header(bytes)?;
    let plane = width
        .checked_mul(height)
        .filter(|p| p.checked_mul(channels).is_some())
        .ok_or_else(|| format_err(2, "image dimensions overflow"))?;
    let len = plane * channels;
    let payload = &bytes[data_start..];
    if payload.len() < len {
        return Err(format_err(
            bytes.len(),
            format!("truncated payload: {} of {len} bytes", payload.len()),
        ));
    }
    if payload.len() > len {
        return Err(format_err(data_start + len, "trailing bytes after payload"));
    }
    let mut data = vec![0.0f32; len];
    for (p, px) in payload.chunks_exact(channels).enumerate() {
        for (ch, &b) in px.iter().enumerate() {
            data[ch * plane + p] = from_byte(b);
        }
    }
    Tensor::new([channels, height, width], data)
}

pub fn read_image(path: impl AsRef<Path>) -> Result<Tensor> {
    decode_pnm(&std::fs::read(path)?)
}

pub fn write_image(path: impl AsRef<Path>, image: &Tensor) -> Result<()> {
    std::fs::write(path, encode_pnm(image)?)?;
    Ok(())
}
