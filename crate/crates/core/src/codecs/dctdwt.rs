//! DCT-DWT baseline: QIM on coefficient (3, 2) of every 8x8 DCT block of
//! the one-level Haar LL band of luminance. Each block's lattice is shifted
//! by a dither drawn from the key seed, so a foreign key decodes noise.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::key::{CodecKey, CodecKind};
use crate::bitstats::BitMessage;
use crate::error::{invalid, Result};
use crate::imaging::jpeg::{fdct8x8, idct8x8};
use crate::imaging::{ImageBuffer, Plane};

/// (row, column) of the modulated coefficient inside each 8x8 DCT block.
pub const DCTDWT_COEFF: (usize, usize) = (3, 2);

const COEFF_INDEX: usize = DCTDWT_COEFF.0 * 8 + DCTDWT_COEFF.1;

/// Number of 8x8 blocks in the LL band.
pub fn dctdwt_capacity(height: usize, width: usize) -> usize {
    (height / 2 / 8) * (width / 2 / 8)
}

struct Haar {
    ll: Plane,
    lh: Plane,
    hl: Plane,
    hh: Plane,
}

/// Orthonormal one-level Haar analysis of the even-sized top-left region.
fn haar_forward(y: &Plane) -> Haar {
    let (h2, w2) = (y.height() / 2, y.width() / 2);
    let mut bands = [
        Plane::zeros(h2, w2),
        Plane::zeros(h2, w2),
        Plane::zeros(h2, w2),
        Plane::zeros(h2, w2),
    ];
    for r in 0..h2 {
        for c in 0..w2 {
            let a = y.at(2 * r, 2 * c);
            let b = y.at(2 * r, 2 * c + 1);
            let cc = y.at(2 * r + 1, 2 * c);
            let d = y.at(2 * r + 1, 2 * c + 1);
            bands[0].set(r, c, (a + b + cc + d) / 2.0);
            bands[1].set(r, c, (a - b + cc - d) / 2.0);
            bands[2].set(r, c, (a + b - cc - d) / 2.0);
            bands[3].set(r, c, (a - b - cc + d) / 2.0);
        }
    }
    let [ll, lh, hl, hh] = bands;
    Haar { ll, lh, hl, hh }
}

/// Inverse of [`haar_forward`], written into a copy of `y` so an odd last
/// row or column is kept.
fn haar_inverse(bands: &Haar, y: &Plane) -> Plane {
    let mut out = y.clone();
    for r in 0..bands.ll.height() {
        for c in 0..bands.ll.width() {
            let (s, t, u, v) = (
                bands.ll.at(r, c),
                bands.lh.at(r, c),
                bands.hl.at(r, c),
                bands.hh.at(r, c),
            );
            out.set(2 * r, 2 * c, (s + t + u + v) / 2.0);
            out.set(2 * r, 2 * c + 1, (s - t + u - v) / 2.0);
            out.set(2 * r + 1, 2 * c, (s + t - u - v) / 2.0);
            out.set(2 * r + 1, 2 * c + 1, (s - t - u + v) / 2.0);
        }
    }
    out
}

fn read_block(p: &Plane, br: usize, bc: usize) -> [f64; 64] {
    let mut block = [0.0; 64];
    for y in 0..8 {
        for x in 0..8 {
            block[y * 8 + x] = p.at(br * 8 + y, bc * 8 + x);
        }
    }
    block
}

fn write_block(p: &mut Plane, br: usize, bc: usize, block: &[f64; 64]) {
    for y in 0..8 {
        for x in 0..8 {
            p.set(br * 8 + y, bc * 8 + x, block[y * 8 + x]);
        }
    }
}

/// Nearest point of `{delta * n + bit * delta / 2}`.
fn snap(value: f64, bit: bool, delta: f64) -> f64 {
    let shift = if bit { delta / 2.0 } else { 0.0 };
    delta * ((value - shift) / delta).round() + shift
}

/// Signed preference for bit one: positive when `value` is closer to the
/// odd lattice.
fn lattice_margin(value: f64, delta: f64) -> f64 {
    (value - snap(value, false, delta)).abs() - (value - snap(value, true, delta)).abs()
}

/// Per-block lattice offsets in `[0, delta)`, in row-major block order.
fn dithers(key: &CodecKey, blocks: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(key.seed() ^ 0xD17E_D17E);
    (0..blocks)
        .map(|_| rng.random::<f64>() * key.delta())
        .collect()
}

fn check(x: &ImageBuffer, key: &CodecKey) -> Result<(usize, usize)> {
    if key.kind() != CodecKind::Dctdwt {
        return Err(invalid("key is not a dctdwt key"));
    }
    let blocks = (x.height() / 16, x.width() / 16);
    let capacity = blocks.0 * blocks.1;
    if capacity < key.k() {
        return Err(invalid(format!(
            "image holds {capacity} blocks, {} bits requested",
            key.k()
        )));
    }
    Ok(blocks)
}

pub fn embed_dctdwt(x: &ImageBuffer, key: &CodecKey, m: &BitMessage) -> Result<ImageBuffer> {
    let (rows, cols) = check(x, key)?;
    if m.len() != key.k() {
        return Err(invalid(format!(
            "message has {} bits, key expects {}",
            m.len(),
            key.k()
        )));
    }
    let luma = x.luminance();
    let mut bands = haar_forward(&luma);
    let dither = dithers(key, rows * cols);
    for br in 0..rows {
        for bc in 0..cols {
            let index = br * cols + bc;
            let bit = m.get(index % key.k());
            let mut coef = fdct8x8(&read_block(&bands.ll, br, bc));
            let d = dither[index];
            coef[COEFF_INDEX] = snap(coef[COEFF_INDEX] - d, bit, key.delta()) + d;
            write_block(&mut bands.ll, br, bc, &idct8x8(&coef));
        }
    }
    let marked = haar_inverse(&bands, &luma);
    let mut offset = marked;
    offset.axpy(-1.0, &luma);
    x.add_gray(&offset)
}

pub fn extract_dctdwt(x: &ImageBuffer, key: &CodecKey) -> Result<BitMessage> {
    let (rows, cols) = check(x, key)?;
    let bands = haar_forward(&x.luminance());
    let k = key.k();
    let mut votes = vec![0i64; k];
    let mut margins = vec![0.0; k];
    let dither = dithers(key, rows * cols);
    for br in 0..rows {
        for bc in 0..cols {
            let index = br * cols + bc;
            let coef = fdct8x8(&read_block(&bands.ll, br, bc));
            let margin = lattice_margin(coef[COEFF_INDEX] - dither[index], key.delta());
            let slot = index % k;
            votes[slot] += if margin > 0.0 { 1 } else { -1 };
            margins[slot] += margin;
        }
    }
    BitMessage::new(
        votes
            .iter()
            .zip(&margins)
            .map(|(&v, &mg)| v > 0 || (v == 0 && mg > 0.0))
            .collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bitstats::match_bits;
    use crate::codecs::{keygen, KeyParams};
    use crate::corpus::seed_image;
    use crate::imaging::psnr;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn key(k: usize) -> CodecKey {
        keygen(CodecKind::Dctdwt, k, 0, KeyParams::default()).unwrap()
    }

    #[test]
    fn haar_is_perfectly_invertible() {
        let img = seed_image(1, 35, 42);
        let y = img.luminance();
        let back = haar_inverse(&haar_forward(&y), &y);
        for (a, b) in y.data().iter().zip(back.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn lattice_decisions() {
        let d = 0.2;
        assert!((snap(0.33, false, d) - 0.4).abs() < 1e-12);
        assert!((snap(0.33, true, d) - 0.3).abs() < 1e-12);
        assert!(lattice_margin(0.3, d) > 0.0);
        assert!(lattice_margin(0.4, d) < 0.0);
    }

    #[test]
    fn roundtrip_and_quality() {
        let key = key(48);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for seed in 0..3 {
            let img = seed_image(seed, 512, 512);
            let m = BitMessage::random(48, &mut rng);
            let wm = embed_dctdwt(&img, &key, &m).unwrap();
            assert_eq!(extract_dctdwt(&wm, &key).unwrap(), m);
            let p = psnr(&img, &wm).unwrap();
            assert!(p >= 38.0, "psnr {p}");
        }
    }

    #[test]
    fn unmarked_images_read_as_noise() {
        let key = key(48);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut total = 0;
        let n = 16;
        for seed in 0..n {
            let m = BitMessage::random(48, &mut rng);
            let bits = extract_dctdwt(&seed_image(100 + seed, 256, 256), &key).unwrap();
            total += match_bits(&bits, &m).unwrap();
        }
        let acc = total as f64 / (48 * n) as f64;
        assert!((acc - 0.5).abs() <= 0.07, "accuracy {acc}");
    }

    #[test]
    fn capacity_shortfall_is_an_error() {
        // 16 x 47 * 16 pixels: 1 x 47 blocks.
        let img = ImageBuffer::filled(16, 47 * 16, [0.5; 3]).unwrap();
        assert_eq!(dctdwt_capacity(16, 47 * 16), 47);
        let m = BitMessage::random(48, &mut ChaCha8Rng::seed_from_u64(3));
        assert!(embed_dctdwt(&img, &key(48), &m).is_err());
        assert!(extract_dctdwt(&img, &key(48)).is_err());
    }
}
