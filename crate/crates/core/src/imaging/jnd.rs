use serde::{Deserialize, Serialize};

use super::filter::local_std;
use super::{ImageBuffer, Plane};

/// Parameters of the texture-driven visibility mask
/// `clamp(offset + gain * localstd_3x3(L), lo, hi)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JndParams {
    pub offset: f64,
    pub gain: f64,
    pub lo: f64,
    pub hi: f64,
}

impl Default for JndParams {
    fn default() -> Self {
        Self {
            offset: 0.5,
            gain: 8.0,
            lo: 0.25,
            hi: 2.0,
        }
    }
}

/// Per-pixel gain map: high in textured areas, low on flat ones.
pub fn jnd_mask(x: &ImageBuffer, params: &JndParams) -> Plane {
    let mut mask = local_std(&x.luminance(), 1);
    for v in mask.data_mut() {
        *v = (params.offset + params.gain * *v).clamp(params.lo, params.hi);
    }
    mask
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::seed_corpus;

    #[test]
    fn constant_image_gets_offset_gain() {
        let img = ImageBuffer::filled(16, 16, [0.3, 0.6, 0.2]).unwrap();
        let m = jnd_mask(&img, &JndParams::default());
        assert!(m.data().iter().all(|&v| (v - 0.5).abs() < 1e-9));
    }

    #[test]
    fn texture_raises_the_mask() {
        let mut data = Vec::new();
        for r in 0..32 {
            for c in 0..32 {
                let v = if c < 16 {
                    0.5
                } else if (r + c) % 2 == 0 {
                    0.3
                } else {
                    0.7
                };
                data.extend([v; 3]);
            }
        }
        let img = ImageBuffer::from_data(32, 32, data).unwrap();
        let m = jnd_mask(&img, &JndParams::default());
        assert!(m.at(10, 25) > m.at(10, 5));
    }

    #[test]
    fn seed_corpus_mask_mean_is_moderate() {
        for img in seed_corpus(0, 8, 256) {
            let mean = jnd_mask(&img, &JndParams::default()).mean();
            assert!((0.4..=1.5).contains(&mean), "mean mask {mean}");
        }
    }
}
