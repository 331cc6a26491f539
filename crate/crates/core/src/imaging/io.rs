//! PNG and binary PPM (P6) reading and writing. Channels map to `[0, 1]` by
//! `v / 255` and back by `round(v * 255)`.

use std::fs;
use std::path::Path;

use super::ImageBuffer;
use crate::error::{Error, Result};

fn is_ppm(path: &Path) -> bool {
    matches!(
        path.extension()
            .and_then(|e| e.to_str())
            .map(str::to_ascii_lowercase)
            .as_deref(),
        Some("ppm" | "pnm")
    )
}

fn to_bytes(x: &ImageBuffer) -> Vec<u8> {
    x.data().iter().map(|v| (v * 255.0).round() as u8).collect()
}

fn from_bytes(height: usize, width: usize, bytes: &[u8]) -> Result<ImageBuffer> {
    ImageBuffer::from_data(
        height,
        width,
        bytes.iter().map(|&b| b as f64 / 255.0).collect(),
    )
}

pub fn read_image(path: impl AsRef<Path>) -> Result<ImageBuffer> {
    let path = path.as_ref();
    if is_ppm(path) {
        return decode_ppm(&fs::read(path)?);
    }
    let img = image::open(path)?.to_rgb8();
    from_bytes(img.height() as usize, img.width() as usize, img.as_raw())
}

pub fn write_image(x: &ImageBuffer, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if is_ppm(path) {
        fs::write(path, encode_ppm(x))?;
        return Ok(());
    }
    let buf = image::RgbImage::from_raw(x.width() as u32, x.height() as u32, to_bytes(x))
        .ok_or_else(|| Error::Format("pixel buffer size mismatch".into()))?;
    buf.save_with_format(path, image::ImageFormat::Png)?;
    Ok(())
}

pub(crate) fn encode_ppm(x: &ImageBuffer) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", x.width(), x.height()).into_bytes();
    out.extend(to_bytes(x));
    out
}

pub(crate) fn decode_ppm(bytes: &[u8]) -> Result<ImageBuffer> {
    let bad = |m: &str| Error::Format(format!("ppm: {m}"));
    let mut pos = 0;
    let mut fields = Vec::with_capacity(4);
    while fields.len() < 4 {
        while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
            if bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                pos += 1;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad("truncated header"));
        }
        fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| bad("header"))?);
    }
    if fields[0] != "P6" {
        return Err(bad("only binary P6 is supported"));
    }
    let parse = |s: &str| s.parse::<usize>().map_err(|_| bad("bad header number"));
    let (width, height, maxval) = (parse(fields[1])?, parse(fields[2])?, parse(fields[3])?);
    if maxval != 255 {
        return Err(bad("only 8-bit samples are supported"));
    }
    // Exactly one whitespace byte separates the header from the raster.
    pos += 1;
    let need = width * height * 3;
    if bytes.len() < pos + need {
        return Err(bad("truncated raster"));
    }
    from_bytes(height, width, &bytes[pos..pos + need])
}
