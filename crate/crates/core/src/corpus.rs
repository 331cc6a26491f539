//! Procedural stand-ins for natural photographs.
//!
//! Each image mixes multi-octave noise with a roughly 1/f amplitude
//! spectrum, a handful of soft-edged textured shapes, and slowly varying
//! colour. The result has natural-image-like statistics (smooth regions,
//! edges, fine texture) and is fully determined by its seed.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::imaging::resample::resize_plane;
use crate::imaging::{ImageBuffer, Plane};

fn noise_field(rng: &mut ChaCha8Rng, h: usize, w: usize, octaves: &[(usize, f64)]) -> Plane {
    let mut out = Plane::zeros(h, w);
    for &(cells, amplitude) in octaves {
        let gh = cells.max(2);
        let gw = ((cells as f64 * w as f64 / h as f64).round() as usize).max(2);
        let grid = Plane::new(
            gh,
            gw,
            (0..gh * gw)
                .map(|_| StandardNormal.sample(rng))
                .collect::<Vec<f64>>(),
        );
        out.axpy(amplitude, &resize_plane(&grid, h, w));
    }
    out
}

fn smoothstep(edge: f64, x: f64) -> f64 {
    // 0 outside, 1 inside, linear ramp of width `edge` pixels.
    (0.5 - x / edge).clamp(0.0, 1.0)
}

/// Deterministic synthetic image of the given size.
pub fn seed_image(seed: u64, height: usize, width: usize) -> ImageBuffer {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5EED_C0DE_0000_0000);
    let (h, w) = (height, width);
    let scale = h.min(w) as f64 / 512.0;
    let octaves: Vec<(usize, f64)> = (0..7)
        .map(|o| {
            let cells = 3usize << o;
            (cells, 0.5 / (1u32 << o) as f64 * rng.random_range(0.6..1.4))
        })
        .filter(|(cells, _)| (*cells as f64) < h.min(w) as f64 / 2.5)
        .collect();
    let mut lum = noise_field(&mut rng, h, w, &octaves);

    let n_shapes = rng.random_range(3..=8);
    for _ in 0..n_shapes {
        let cy = rng.random_range(0.0..h as f64);
        let cx = rng.random_range(0.0..w as f64);
        let ry = rng.random_range(0.08..0.35) * h as f64;
        let rx = rng.random_range(0.08..0.35) * w as f64;
        let angle: f64 = rng.random_range(0.0..std::f64::consts::PI);
        let rectangular = rng.random::<bool>();
        let level = rng.random_range(-0.9..0.9);
        let fine_cells = (rng.random_range(40.0..140.0) * scale).max(3.0) as usize;
        let texture_amp = rng.random_range(0.02..0.25);
        let texture = noise_field(&mut rng, h, w, &[(fine_cells, texture_amp)]);
        let edge = rng.random_range(1.0..4.0);
        let (sin, cos) = angle.sin_cos();
        for r in 0..h {
            for c in 0..w {
                let dy = r as f64 - cy;
                let dx = c as f64 - cx;
                let u = (cos * dx + sin * dy) / rx;
                let v = (-sin * dx + cos * dy) / ry;
                // Signed distance proxy in pixels.
                let d = if rectangular {
                    (u.abs().max(v.abs()) - 1.0) * rx.min(ry)
                } else {
                    ((u * u + v * v).sqrt() - 1.0) * rx.min(ry)
                };
                let a = smoothstep(edge, d);
                if a > 0.0 {
                    let cur = lum.at(r, c);
                    lum.set(r, c, cur + a * (level + texture.at(r, c) - cur));
                }
            }
        }
    }

    let mean = lum.mean();
    let std = (lum.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>()
        / lum.data().len() as f64)
        .sqrt()
        .max(1e-9);
    let target_mean = rng.random_range(0.32..0.5);
    let target_std = rng.random_range(0.13..0.2);
    for v in lum.data_mut() {
        *v = target_mean + (*v - mean) * target_std / std;
    }

    let chroma_octaves = [(2usize, 0.08), (4, 0.05), (8, 0.03)];
    let tint = [rng.random_range(-0.06..0.06), rng.random_range(-0.06..0.06)];
    let cr = noise_field(&mut rng, h, w, &chroma_octaves);
    let cb = noise_field(&mut rng, h, w, &chroma_octaves);
    let mut data = Vec::with_capacity(h * w * 3);
    for i in 0..h * w {
        let l = lum.data()[i];
        let red = l + cr.data()[i] + tint[0];
        let blue = l + cb.data()[i] + tint[1];
        let green = (l - 0.299 * red - 0.114 * blue) / 0.587;
        data.extend([red, green, blue].map(soft_range));
    }
    ImageBuffer::from_data(h, w, data).expect("valid synthetic image")
}

/// Compresses values smoothly into `[0.03, 0.95]`.
fn soft_range(v: f64) -> f64 {
    const LO: f64 = 0.03;
    const HI: f64 = 0.95;
    const KNEE: f64 = 0.08;
    if v < LO + KNEE {
        LO + KNEE * ((v - LO - KNEE) / KNEE).exp()
    } else if v > HI - KNEE {
        HI - KNEE * (-(v - HI + KNEE) / KNEE).exp()
    } else {
        v
    }
}

/// `count` square images of side `size`, seeds `first_seed..`.
pub fn seed_corpus(first_seed: u64, count: usize, size: usize) -> Vec<ImageBuffer> {
    (0..count as u64)
        .into_par_iter()
        .map(|i| seed_image(first_seed + i, size, size))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_in_range() {
        let a = seed_image(42, 64, 80);
        assert_eq!(a, seed_image(42, 64, 80));
        assert_ne!(a, seed_image(43, 64, 80));
        assert!(a.data().iter().all(|&v| (0.03..=0.95).contains(&v)));
    }

    #[test]
    fn images_have_texture_and_moderate_brightness() {
        for img in seed_corpus(0, 6, 256) {
            let l = img.luminance();
            let mean = l.mean();
            assert!((0.25..0.6).contains(&mean), "mean {mean}");
            let std = (l.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>()
                / l.data().len() as f64)
                .sqrt();
            assert!(std > 0.08, "std {std}");
        }
    }
}
