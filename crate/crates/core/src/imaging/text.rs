//! Opaque dot-matrix text stamped at a seeded position.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::ImageBuffer;

/// 5x7 glyphs, one byte per row, low five bits used (bit 4 = leftmost).
const GLYPHS: [(char, [u8; 7]); 16] = [
    ('A', [0x0E, 0x11, 0x11, 0x1F, 0x11, 0x11, 0x11]),
    ('B', [0x1E, 0x11, 0x11, 0x1E, 0x11, 0x11, 0x1E]),
    ('C', [0x0E, 0x11, 0x10, 0x10, 0x10, 0x11, 0x0E]),
    ('D', [0x1E, 0x11, 0x11, 0x11, 0x11, 0x11, 0x1E]),
    ('E', [0x1F, 0x10, 0x10, 0x1E, 0x10, 0x10, 0x1F]),
    ('H', [0x11, 0x11, 0x11, 0x1F, 0x11, 0x11, 0x11]),
    ('K', [0x11, 0x12, 0x14, 0x18, 0x14, 0x12, 0x11]),
    ('L', [0x10, 0x10, 0x10, 0x10, 0x10, 0x10, 0x1F]),
    ('M', [0x11, 0x1B, 0x15, 0x15, 0x11, 0x11, 0x11]),
    ('O', [0x0E, 0x11, 0x11, 0x11, 0x11, 0x11, 0x0E]),
    ('R', [0x1E, 0x11, 0x11, 0x1E, 0x14, 0x12, 0x11]),
    ('S', [0x0F, 0x10, 0x10, 0x0E, 0x01, 0x01, 0x1E]),
    ('T', [0x1F, 0x04, 0x04, 0x04, 0x04, 0x04, 0x04]),
    ('W', [0x11, 0x11, 0x11, 0x15, 0x15, 0x1B, 0x11]),
    ('X', [0x11, 0x11, 0x0A, 0x04, 0x0A, 0x11, 0x11]),
    ('Y', [0x11, 0x11, 0x0A, 0x04, 0x04, 0x04, 0x04]),
];

/// Upper bound on the fraction of the image covered by the text box.
pub const MAX_TEXT_AREA: f64 = 0.05;

/// Stamps a seeded random string. Glyph cells are 6x8 dots (one dot of
/// spacing), each dot a `scale x scale` square; the whole text box covers at
/// most [`MAX_TEXT_AREA`] of the image.
pub fn text_overlay(x: &ImageBuffer, seed: u64) -> ImageBuffer {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (h, w) = x.dims();
    let len = rng.random_range(4..=10usize);
    let text: Vec<&[u8; 7]> = (0..len)
        .map(|_| &GLYPHS[rng.random_range(0..GLYPHS.len())].1)
        .collect();
    // Largest scale keeping the box within the area budget and the image.
    let mut scale = 1usize;
    while {
        let next = scale + 1;
        let (bh, bw) = (8 * next, 6 * len * next);
        bh <= h && bw <= w && (bh * bw) as f64 <= MAX_TEXT_AREA * (h * w) as f64
    } {
        scale += 1;
    }
    let (mut box_h, mut box_w) = (8 * scale, 6 * len * scale);
    let mut glyphs = len;
    // Tiny images: drop glyphs until the box fits the budget.
    while glyphs > 1 && (box_h * box_w) as f64 > MAX_TEXT_AREA * (h * w) as f64 {
        glyphs -= 1;
        box_w = 6 * glyphs * scale;
    }
    if box_w > w || box_h > h || (box_h * box_w) as f64 > MAX_TEXT_AREA * (h * w) as f64 {
        return x.clone();
    }
    box_h = box_h.min(h);
    let top = rng.random_range(0..=h - box_h);
    let left = rng.random_range(0..=w - box_w);
    let ink = if rng.random::<bool>() { 1.0 } else { 0.0 };

    let mut data = x.data().to_vec();
    for (g, rows) in text.iter().take(glyphs).enumerate() {
        for (gy, bits) in rows.iter().enumerate() {
            for gx in 0..5 {
                if bits & (0x10 >> gx) == 0 {
                    continue;
                }
                for dy in 0..scale {
                    for dx in 0..scale {
                        let r = top + gy * scale + dy;
                        let c = left + (g * 6 + gx) * scale + dx;
                        let i = (r * w + c) * 3;
                        data[i..i + 3].fill(ink);
                    }
                }
            }
        }
    }
    ImageBuffer::from_data(h, w, data).expect("same dimensions")
}
