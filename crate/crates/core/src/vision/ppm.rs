//! Netpbm P5/P6 codec.

use crate::error::{Error, Result};

/// Decoded raster in channel-major `[3×H×W]` order, scaled to [0,1].
#[derive(Clone, Debug, PartialEq)]
pub struct Raster {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<f32>,
}

fn header_fields(bytes: &[u8], count: usize) -> Result<(Vec<usize>, usize)> {
    let mut fields = Vec::with_capacity(count);
    let mut i = 2;
    while fields.len() < count {
        match bytes.get(i) {
            None => return Err(Error::Data("truncated netpbm header".into())),
            Some(b'#') => {
                while i < bytes.len() && bytes[i] != b'\n' {
                    i += 1;
                }
            }
            Some(b) if b.is_ascii_whitespace() => i += 1,
            Some(b) if b.is_ascii_digit() => {
                let start = i;
                while i < bytes.len() && bytes[i].is_ascii_digit() {
                    i += 1;
                }
                let s = std::str::from_utf8(&bytes[start..i]).expect("ascii digits");
                let v = s
                    .parse()
                    .map_err(|_| Error::Data(format!("netpbm header value {s:?} out of range")))?;
                fields.push(v);
            }
            Some(b) => {
                return Err(Error::Data(format!(
                    "unexpected byte 0x{b:02x} in netpbm header"
                )))
            }
        }
    }
    // exactly one whitespace byte separates the header from the raster
    match bytes.get(i) {
        Some(b) if b.is_ascii_whitespace() => Ok((fields, i + 1)),
        _ => Err(Error::Data("netpbm header not followed by whitespace".into())),
    }
}

/// Decodes binary PPM (P6) or PGM (P5); grayscale is replicated to three channels.
pub fn decode(bytes: &[u8]) -> Result<Raster> {
    let channels = match bytes.get(..2) {
        Some(b"P6") => 3,
        Some(b"P5") => 1,
        _ => return Err(Error::Data("not a binary PPM/PGM file (expected P6 or P5)".into())),
    };
    let (f, offset) = header_fields(bytes, 3)?;
    let (width, height, maxval) = (f[0], f[1], f[2]);
    if width == 0 || height == 0 || maxval == 0 || maxval > 65535 {
        return Err(Error::Data(format!(
            "invalid netpbm geometry {width}x{height} maxval {maxval}"
        )));
    }
    let sample_bytes = if maxval < 256 { 1 } else { 2 };
    let plane = width * height;
    let need = plane * channels * sample_bytes;
    let raster = &bytes[offset..];
    if raster.len() < need {
        return Err(Error::Data(format!(
            "netpbm raster has {} bytes, expected {need}",
            raster.len()
        )));
    }
    let scale = 1.0 / maxval as f32;
    let sample = |k: usize| -> f32 {
        let v = if sample_bytes == 1 {
            raster[k] as u32
        } else {
            u32::from(raster[2 * k]) << 8 | u32::from(raster[2 * k + 1])
        };
        (v.min(maxval as u32)) as f32 * scale
    };
    let mut pixels = vec![0.0f32; 3 * plane];
    for p in 0..plane {
        for c in 0..3 {
            let src = if channels == 3 { p * 3 + c } else { p };
            pixels[c * plane + p] = sample(src);
        }
    }
    Ok(Raster {
        width,
        height,
        pixels,
    })
}

/// Encodes `[3×H×W]` values in [0,1] as 8-bit P6.
pub fn encode(pixels: &[f32], width: usize, height: usize) -> Vec<u8> {
    let plane = width * height;
    assert_eq!(pixels.len(), 3 * plane, "pixel buffer must be 3×H×W");
    let mut out = format!("P6\n{width} {height}\n255\n").into_bytes();
    out.reserve(3 * plane);
    for p in 0..plane {
        for c in 0..3 {
            let v = pixels[c * plane + p].clamp(0.0, 1.0);
            out.push((v * 255.0).round() as u8);
        }
    }
    out
}
