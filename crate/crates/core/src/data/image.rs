//! 8-bit RGB images as `[3, H, W]` tensors in `[0, 1]`.
//!
//! Binary PPM (`P6`) is the only raster format read and written.

use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

fn header_token(bytes: &[u8], pos: &mut usize) -> Result<String> {
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
            continue;
        }
        break;
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    if start == *pos {
        return Err(Error::Image("truncated PPM header".into()));
    }
    Ok(String::from_utf8_lossy(&bytes[start..*pos]).into_owned())
}

fn header_number(bytes: &[u8], pos: &mut usize, what: &str) -> Result<usize> {
    let tok = header_token(bytes, pos)?;
    tok.parse().map_err(|_| Error::Image(format!("bad PPM {what} `{tok}`")))
}

pub fn decode_ppm(bytes: &[u8]) -> Result<Tensor> {
    let mut pos = 0;
    let magic = header_token(bytes, &mut pos)?;
    if magic != "P6" {
        return Err(Error::Image(format!("unsupported image format `{magic}` (binary PPM `P6` expected)")));
    }
    let w = header_number(bytes, &mut pos, "width")?;
    let h = header_number(bytes, &mut pos, "height")?;
    let maxval = header_number(bytes, &mut pos, "maxval")?;
    if w == 0 || h == 0 {
        return Err(Error::Image(format!("empty image {w}x{h}")));
    }
    if !(1..=255).contains(&maxval) {
        return Err(Error::Image(format!("maxval {maxval} unsupported (8-bit only)")));
    }
    // exactly one whitespace byte separates the header from the raster
    pos += 1;
    let need = 3 * w * h;
    let raster = bytes
        .get(pos..pos + need)
        .ok_or_else(|| Error::Image(format!("raster truncated: need {need} bytes, have {}", bytes.len().saturating_sub(pos))))?;
    let scale = 1.0 / maxval as f32;
    let mut data = vec![0f32; need];
    for (i, px) in raster.chunks_exact(3).enumerate() {
        for c in 0..3 {
            data[c * w * h + i] = px[c] as f32 * scale;
        }
    }
    Tensor::new(&[3, h, w], data)
}

/// Values are clamped to `[0, 1]` and rounded to the nearest 8-bit level.
pub fn encode_ppm(image: &Tensor) -> Result<Vec<u8>> {
    let [c, h, w] = image.dims3("encode_ppm")?;
    if c != 3 {
        return Err(Error::shape("encode_ppm", format!("expected 3 channels, got {c}")));
    }
    let v = image.values();
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    out.reserve(3 * w * h);
    for i in 0..w * h {
        for ch in 0..3 {
            out.push((v[ch * w * h + i].clamp(0.0, 1.0) * 255.0).round() as u8);
        }
    }
    Ok(out)
}

pub fn load_image(path: impl AsRef<Path>) -> Result<Tensor> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_ppm(&bytes).map_err(|e| match e {
        Error::Image(m) => Error::Image(format!("{}: {m}", path.display())),
        other => other,
    })
}

pub fn save_image(image: &Tensor, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_ppm(image)?).map_err(|e| Error::io(path, e))
}

/// Bilinear sample of channel-plane `plane` (`h x w`) at continuous pixel
/// coordinates, where pixel `(i, j)` has its centre at `(j + 0.5, i + 0.5)`.
/// Taps outside the image read as zero.
pub(crate) fn sample_bilinear(plane: &[f32], h: usize, w: usize, x: f64, y: f64) -> f32 {
    let (fx, fy) = (x - 0.5, y - 0.5);
    let (x0, y0) = (fx.floor(), fy.floor());
    let (ax, ay) = (fx - x0, fy - y0);
    let (x0, y0) = (x0 as i64, y0 as i64);
    let tap = |yy: i64, xx: i64| -> f64 {
        if yy < 0 || xx < 0 || yy >= h as i64 || xx >= w as i64 {
            0.0
        } else {
            plane[yy as usize * w + xx as usize] as f64
        }
    };
    let top = tap(y0, x0) * (1.0 - ax) + tap(y0, x0 + 1) * ax;
    let bottom = tap(y0 + 1, x0) * (1.0 - ax) + tap(y0 + 1, x0 + 1) * ax;
    (top * (1.0 - ay) + bottom * ay) as f32
}
