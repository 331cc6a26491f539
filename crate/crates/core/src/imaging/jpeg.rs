//! JPEG distortion channel: the lossy stages of a baseline JFIF encoder and
//! decoder (colour transform, 4:2:0 subsampling, 8x8 DCT, quantization,
//! 8-bit output). Entropy coding is lossless and therefore skipped.

use std::sync::OnceLock;

use super::{ImageBuffer, Plane};
use crate::error::{invalid, Result};

/// Standard luminance quantization table (natural order).
pub const JPEG_LUMA_BASE: [u16; 64] = [
    16, 11, 10, 16, 24, 40, 51, 61, //
    12, 12, 14, 19, 26, 58, 60, 55, //
    14, 13, 16, 24, 40, 57, 69, 56, //
    14, 17, 22, 29, 51, 87, 80, 62, //
    18, 22, 37, 56, 68, 109, 103, 77, //
    24, 35, 55, 64, 81, 104, 113, 92, //
    49, 64, 78, 87, 103, 121, 120, 101, //
    72, 92, 95, 98, 112, 100, 103, 99,
];

/// Standard chrominance quantization table (natural order).
pub const JPEG_CHROMA_BASE: [u16; 64] = [
    17, 18, 24, 47, 99, 99, 99, 99, //
    18, 21, 26, 66, 99, 99, 99, 99, //
    24, 26, 56, 99, 99, 99, 99, 99, //
    47, 66, 99, 99, 99, 99, 99, 99, //
    99, 99, 99, 99, 99, 99, 99, 99, //
    99, 99, 99, 99, 99, 99, 99, 99, //
    99, 99, 99, 99, 99, 99, 99, 99, //
    99, 99, 99, 99, 99, 99, 99, 99,
];

fn scale_table(base: &[u16; 64], quality: u8) -> [f64; 64] {
    let q = quality as u32;
    let scale = if q < 50 { 5000 / q } else { 200 - 2 * q };
    let mut out = [0.0; 64];
    for (o, &b) in out.iter_mut().zip(base) {
        *o = ((b as u32 * scale + 50) / 100).clamp(1, 255) as f64;
    }
    out
}

/// Luma and chroma tables for `quality` in `[1, 100]`, using the usual
/// mapping `scale = 5000 / q` below 50 and `200 - 2q` from 50 on (percent).
pub fn jpeg_quant_tables(quality: u8) -> Result<([f64; 64], [f64; 64])> {
    if !(1..=100).contains(&quality) {
        return Err(invalid(format!("jpeg quality {quality} outside [1, 100]")));
    }
    Ok((
        scale_table(&JPEG_LUMA_BASE, quality),
        scale_table(&JPEG_CHROMA_BASE, quality),
    ))
}

/// `basis[u][x] = c(u)/2 * cos((2x + 1) u pi / 16)`, the orthonormal 8-point
/// DCT-II matrix.
pub(crate) fn dct8_basis() -> &'static [[f64; 8]; 8] {
    static BASIS: OnceLock<[[f64; 8]; 8]> = OnceLock::new();
    BASIS.get_or_init(|| {
        let mut b = [[0.0; 8]; 8];
        for (u, row) in b.iter_mut().enumerate() {
            let c = if u == 0 { 0.5f64.sqrt() } else { 1.0 };
            for (x, v) in row.iter_mut().enumerate() {
                *v = 0.5 * c * ((2 * x + 1) as f64 * u as f64 * std::f64::consts::PI / 16.0).cos();
            }
        }
        b
    })
}

pub(crate) fn fdct8x8(block: &[f64; 64]) -> [f64; 64] {
    let b = dct8_basis();
    let mut tmp = [0.0; 64];
    for y in 0..8 {
        for u in 0..8 {
            tmp[y * 8 + u] = (0..8).map(|x| b[u][x] * block[y * 8 + x]).sum();
        }
    }
    let mut out = [0.0; 64];
    for v in 0..8 {
        for u in 0..8 {
            out[v * 8 + u] = (0..8).map(|y| b[v][y] * tmp[y * 8 + u]).sum();
        }
    }
    out
}

pub(crate) fn idct8x8(coef: &[f64; 64]) -> [f64; 64] {
    let b = dct8_basis();
    let mut tmp = [0.0; 64];
    for v in 0..8 {
        for x in 0..8 {
            tmp[v * 8 + x] = (0..8).map(|u| b[u][x] * coef[v * 8 + u]).sum();
        }
    }
    let mut out = [0.0; 64];
    for y in 0..8 {
        for x in 0..8 {
            out[y * 8 + x] = (0..8).map(|v| b[v][y] * tmp[v * 8 + x]).sum();
        }
    }
    out
}

/// Quantizes every 8x8 block of a plane holding 0..255 samples.
fn quantize_plane(plane: &mut Plane, table: &[f64; 64]) {
    let (h, w) = plane.dims();
    debug_assert!(h % 8 == 0 && w % 8 == 0);
    let mut block = [0.0; 64];
    for by in (0..h).step_by(8) {
        for bx in (0..w).step_by(8) {
            for y in 0..8 {
                for x in 0..8 {
                    block[y * 8 + x] = plane.at(by + y, bx + x) - 128.0;
                }
            }
            let mut coef = fdct8x8(&block);
            for (c, q) in coef.iter_mut().zip(table) {
                *c = (*c / q).round() * q;
            }
            let rec = idct8x8(&coef);
            for y in 0..8 {
                for x in 0..8 {
                    plane.set(by + y, bx + x, rec[y * 8 + x] + 128.0);
                }
            }
        }
    }
}

/// Compresses and decompresses through the lossy JPEG stages at `quality`.
/// The output lies on the 8-bit grid, like a decoded file.
pub fn jpeg_roundtrip(x: &ImageBuffer, quality: u8) -> Result<ImageBuffer> {
    let (luma_q, chroma_q) = jpeg_quant_tables(quality)?;
    let (h, w) = x.dims();
    let ph = h.div_ceil(16) * 16;
    let pw = w.div_ceil(16) * 16;

    let mut y_plane = Plane::zeros(ph, pw);
    let mut cb_full = Plane::zeros(ph, pw);
    let mut cr_full = Plane::zeros(ph, pw);
    for r in 0..ph {
        for c in 0..pw {
            let [red, green, blue] = x.pixel(r.min(h - 1), c.min(w - 1)).map(|v| v * 255.0);
            y_plane.set(r, c, 0.299 * red + 0.587 * green + 0.114 * blue);
            cb_full.set(
                r,
                c,
                -0.168_736 * red - 0.331_264 * green + 0.5 * blue + 128.0,
            );
            cr_full.set(
                r,
                c,
                0.5 * red - 0.418_688 * green - 0.081_312 * blue + 128.0,
            );
        }
    }
    let subsample = |p: &Plane| {
        let mut out = Plane::zeros(ph / 2, pw / 2);
        for r in 0..ph / 2 {
            for c in 0..pw / 2 {
                let s = p.at(2 * r, 2 * c)
                    + p.at(2 * r + 1, 2 * c)
                    + p.at(2 * r, 2 * c + 1)
                    + p.at(2 * r + 1, 2 * c + 1);
                out.set(r, c, s / 4.0);
            }
        }
        out
    };
    let mut cb = subsample(&cb_full);
    let mut cr = subsample(&cr_full);

    quantize_plane(&mut y_plane, &luma_q);
    quantize_plane(&mut cb, &chroma_q);
    quantize_plane(&mut cr, &chroma_q);

    let mut data = Vec::with_capacity(h * w * 3);
    for r in 0..h {
        for c in 0..w {
            let yy = y_plane.at(r, c);
            let b = cb.at(r / 2, c / 2) - 128.0;
            let rr = cr.at(r / 2, c / 2) - 128.0;
            let rgb = [
                yy + 1.402 * rr,
                yy - 0.344_136 * b - 0.714_136 * rr,
                yy + 1.772 * b,
            ];
            data.extend(rgb.map(|v| v.round().clamp(0.0, 255.0) / 255.0));
        }
    }
    ImageBuffer::from_data(h, w, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::seed_image;
    use crate::imaging::psnr;

    #[test]
    fn quality_scaling() {
        let (l50, c50) = jpeg_quant_tables(50).unwrap();
        for i in 0..64 {
            assert_eq!(l50[i], JPEG_LUMA_BASE[i] as f64);
            assert_eq!(c50[i], JPEG_CHROMA_BASE[i] as f64);
        }
        let (l80, _) = jpeg_quant_tables(80).unwrap();
        // floor((16 * 40 + 50) / 100) = 6
        assert_eq!(l80[0], 6.0);
        for i in 0..64 {
            let want = ((JPEG_LUMA_BASE[i] as f64 * 0.4 + 0.5).floor()).max(1.0);
            assert_eq!(l80[i], want);
        }
        let (l100, c100) = jpeg_quant_tables(100).unwrap();
        assert!(l100.iter().chain(c100.iter()).all(|&q| q == 1.0));
        assert!(jpeg_quant_tables(0).is_err());
        assert!(jpeg_quant_tables(101).is_err());
    }

    #[test]
    fn dct_is_orthonormal() {
        let mut block = [0.0; 64];
        for (i, v) in block.iter_mut().enumerate() {
            *v = ((i * 37) % 64) as f64 - 30.0;
        }
        let back = idct8x8(&fdct8x8(&block));
        for (a, b) in block.iter().zip(&back) {
            assert!((a - b).abs() < 1e-9);
        }
        let flat = fdct8x8(&[1.0; 64]);
        assert!((flat[0] - 8.0).abs() < 1e-12);
    }

    #[test]
    fn high_quality_is_nearly_transparent() {
        for seed in 0..4 {
            let img = seed_image(seed, 128, 96);
            let out = jpeg_roundtrip(&img, 100).unwrap();
            assert_eq!(out.dims(), img.dims());
            let p = psnr(&img, &out).unwrap();
            assert!(p >= 40.0, "seed {seed}: psnr {p}");
        }
    }

    #[test]
    fn recompression_is_nearly_idempotent() {
        let img = seed_image(9, 100, 120);
        for q in [50, 80] {
            let once = jpeg_roundtrip(&img, q).unwrap();
            let twice = jpeg_roundtrip(&once, q).unwrap();
            let p = psnr(&once, &twice).unwrap();
            assert!(p >= 45.0, "q={q}: {p}");
            assert!(psnr(&img, &once).unwrap() < 45.0);
        }
    }
}
