//! PPM decoding and CLIP-style preprocessing.

use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

// Published to eight digits; f32 keeps what it can.
#[allow(clippy::excessive_precision)]
pub const CLIP_MEAN: [f32; 3] = [0.481_454_66, 0.457_827_5, 0.408_210_73];
#[allow(clippy::excessive_precision)]
pub const CLIP_STD: [f32; 3] = [0.268_629_54, 0.261_302_58, 0.275_777_11];

/// Interleaved 8-bit RGB pixels.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        if pixels.len() != width * height * 3 {
            return Err(Error::Image(format!(
                "{width}x{height} RGB image needs {} bytes, got {}",
                width * height * 3,
                pixels.len()
            )));
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    pub fn filled(width: usize, height: usize, rgb: [u8; 3]) -> Self {
        Self {
            width,
            height,
            pixels: rgb.repeat(width * height),
        }
    }

    pub fn to_ppm(&self) -> Vec<u8> {
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.pixels);
        out
    }
}

/// Binary PPM (P6) with maxval 255. Comments (`#` to end of line) are
/// allowed between header fields.
pub fn decode_ppm(bytes: &[u8]) -> Result<RgbImage> {
    let bad = |m: &str| Error::Image(format!("invalid PPM: {m}"));
    let mut pos = 0;
    let mut field = || -> Result<&[u8]> {
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(_) => break,
                None => return Err(bad("truncated header")),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(|b| !b.is_ascii_whitespace()) {
            pos += 1;
        }
        Ok(&bytes[start..pos])
    };
    if field()? != b"P6" {
        return Err(bad("magic is not P6"));
    }
    let mut number = |name: &str| -> Result<usize> {
        std::str::from_utf8(field()?)
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| bad(&format!("unreadable {name}")))
    };
    let width = number("width")?;
    let height = number("height")?;
    let maxval = number("maxval")?;
    if maxval != 255 {
        return Err(bad(&format!("maxval {maxval} is not 255")));
    }
    if width == 0 || height == 0 {
        return Err(bad("empty image"));
    }
    // exactly one whitespace byte separates the header from the raster
    let start = pos + 1;
    let need = width * height * 3;
    if bytes.len() < start + need {
        return Err(bad(&format!(
            "raster has {} bytes, expected {need}",
            bytes.len().saturating_sub(start)
        )));
    }
    RgbImage::new(width, height, bytes[start..start + need].to_vec())
}

pub fn read_ppm(path: &Path) -> Result<RgbImage> {
    let bytes =
        std::fs::read(path).map_err(|e| Error::Image(format!("{}: {e}", path.display())))?;
    decode_ppm(&bytes)
}

/// Bilinear resize with half-pixel centers and edge clamping, producing a
/// `[3, size, size]` tensor in `[0, 1]`.
pub fn resize_bilinear(img: &RgbImage, size: usize) -> Result<Tensor> {
    if img.width == 0 || img.height == 0 {
        return Err(Error::Data("cannot resize an empty image".into()));
    }
    let (w, h) = (img.width, img.height);
    let px = |x: usize, y: usize, c: usize| f32::from(img.pixels[(y * w + x) * 3 + c]) / 255.0;
    let axis = |out: usize, len: usize| -> (usize, usize, f32) {
        let src = ((out as f32 + 0.5) * len as f32 / size as f32 - 0.5).max(0.0);
        let i0 = (src.floor() as usize).min(len - 1);
        let i1 = (i0 + 1).min(len - 1);
        (i0, i1, src - i0 as f32)
    };
    let mut t = Tensor::zeros(&[3, size, size]);
    let data = t.data_mut();
    for oy in 0..size {
        let (y0, y1, fy) = axis(oy, h);
        for ox in 0..size {
            let (x0, x1, fx) = axis(ox, w);
            for c in 0..3 {
                let top = px(x0, y0, c) * (1.0 - fx) + px(x1, y0, c) * fx;
                let bottom = px(x0, y1, c) * (1.0 - fx) + px(x1, y1, c) * fx;
                data[(c * size + oy) * size + ox] = top * (1.0 - fy) + bottom * fy;
            }
        }
    }
    Ok(t)
}

/// Resize to `size`², scale to `[0, 1]`, then normalize per channel.
pub fn preprocess_image(img: &RgbImage, size: usize) -> Result<Tensor> {
    let mut t = resize_bilinear(img, size)?;
    let plane = size * size;
    for (c, chunk) in t.data_mut().chunks_mut(plane).enumerate() {
        for v in chunk {
            *v = (*v - CLIP_MEAN[c]) / CLIP_STD[c];
        }
    }
    Ok(t)
}
