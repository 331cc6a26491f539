//! The edit channel: geometric, photometric and compression transforms with
//! fixed, documented semantics.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::resample::resize_plane;
use super::text::text_overlay;
use super::{jpeg_roundtrip, ImageBuffer, Plane, MIN_SIDE};
use crate::error::{invalid, Error, Result};

/// One image edit, or an ordered composition of edits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TransformSpec {
    Identity,
    /// Centred crop keeping `area_ratio` of the area.
    Crop {
        area_ratio: f64,
    },
    /// Bicubic resize to `area_ratio` of the area.
    Resize {
        area_ratio: f64,
    },
    /// Counter-clockwise quarter turn.
    Rotate90,
    Jpeg {
        quality: u8,
    },
    Brightness {
        factor: f64,
    },
    Contrast {
        factor: f64,
    },
    Saturation {
        factor: f64,
    },
    Sharpness {
        factor: f64,
    },
    TextOverlay {
        seed: u64,
    },
    Combined {
        steps: Vec<TransformSpec>,
    },
}

impl TransformSpec {
    pub fn validate(&self) -> Result<()> {
        match self {
            Self::Crop { area_ratio } | Self::Resize { area_ratio } => {
                if !(*area_ratio > 0.0 && *area_ratio <= 1.0) {
                    return Err(invalid(format!("area ratio {area_ratio} outside (0, 1]")));
                }
            }
            Self::Jpeg { quality } => {
                if !(1..=100).contains(quality) {
                    return Err(invalid(format!("jpeg quality {quality} outside [1, 100]")));
                }
            }
            Self::Brightness { factor }
            | Self::Contrast { factor }
            | Self::Saturation { factor }
            | Self::Sharpness { factor } => {
                if !(factor.is_finite() && *factor >= 0.0) {
                    return Err(invalid(format!("enhancement factor {factor} must be >= 0")));
                }
            }
            Self::Combined { steps } => {
                for s in steps {
                    s.validate()?;
                }
            }
            Self::Identity | Self::Rotate90 | Self::TextOverlay { .. } => {}
        }
        Ok(())
    }

    /// The evaluation set used by the robustness tables.
    pub fn evaluation_set() -> Vec<TransformSpec> {
        vec![
            Self::Identity,
            Self::Crop { area_ratio: 0.1 },
            Self::Jpeg { quality: 50 },
            Self::Resize { area_ratio: 0.7 },
            Self::Brightness { factor: 2.0 },
            Self::Contrast { factor: 2.0 },
            Self::Saturation { factor: 2.0 },
            Self::Sharpness { factor: 2.0 },
            Self::Rotate90,
            Self::TextOverlay { seed: 0 },
            combined_attack(),
        ]
    }
}

/// Crop 50%, brightness 1.5, then JPEG 80.
pub fn combined_attack() -> TransformSpec {
    TransformSpec::Combined {
        steps: vec![
            TransformSpec::Crop { area_ratio: 0.5 },
            TransformSpec::Brightness { factor: 1.5 },
            TransformSpec::Jpeg { quality: 80 },
        ],
    }
}

impl fmt::Display for TransformSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Identity => write!(f, "identity"),
            Self::Crop { area_ratio } => write!(f, "crop:{area_ratio}"),
            Self::Resize { area_ratio } => write!(f, "resize:{area_ratio}"),
            Self::Rotate90 => write!(f, "rotate90"),
            Self::Jpeg { quality } => write!(f, "jpeg:{quality}"),
            Self::Brightness { factor } => write!(f, "brightness:{factor}"),
            Self::Contrast { factor } => write!(f, "contrast:{factor}"),
            Self::Saturation { factor } => write!(f, "saturation:{factor}"),
            Self::Sharpness { factor } => write!(f, "sharpness:{factor}"),
            Self::TextOverlay { seed } => write!(f, "text:{seed}"),
            Self::Combined { steps } => {
                if *self == combined_attack() {
                    return write!(f, "combined");
                }
                let parts: Vec<String> = steps.iter().map(|s| s.to_string()).collect();
                write!(f, "{}", parts.join("+"))
            }
        }
    }
}

impl FromStr for TransformSpec {
    type Err = Error;

    /// Parses `name[:param]`, or several joined with `+` for a composition.
    /// `combined` names the standard crop/brightness/JPEG stack.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.contains('+') {
            let steps = s.split('+').map(str::parse).collect::<Result<Vec<_>>>()?;
            let spec = Self::Combined { steps };
            spec.validate()?;
            return Ok(spec);
        }
        let (name, param) = match s.split_once(':') {
            Some((n, p)) => (n, Some(p)),
            None => (s, None),
        };
        let real = |p: Option<&str>| -> Result<f64> {
            p.ok_or_else(|| invalid(format!("transform {name} needs a parameter")))?
                .parse::<f64>()
                .map_err(|e| invalid(format!("bad parameter for {name}: {e}")))
        };
        let spec = match name {
            "identity" | "none" => Self::Identity,
            "crop" => Self::Crop {
                area_ratio: real(param)?,
            },
            "resize" => Self::Resize {
                area_ratio: real(param)?,
            },
            "rotate90" | "rot90" => Self::Rotate90,
            "jpeg" => {
                let q = real(param)?;
                if q.fract() != 0.0 || !(1.0..=100.0).contains(&q) {
                    return Err(invalid(format!("jpeg quality {q} outside [1, 100]")));
                }
                Self::Jpeg { quality: q as u8 }
            }
            "brightness" => Self::Brightness {
                factor: real(param)?,
            },
            "contrast" => Self::Contrast {
                factor: real(param)?,
            },
            "saturation" => Self::Saturation {
                factor: real(param)?,
            },
            "sharpness" => Self::Sharpness {
                factor: real(param)?,
            },
            "text" => Self::TextOverlay {
                seed: param.map_or(Ok(0), |p| {
                    p.parse()
                        .map_err(|e| invalid(format!("bad text seed: {e}")))
                })?,
            },
            "combined" => combined_attack(),
            other => return Err(invalid(format!("unknown transform {other:?}"))),
        };
        spec.validate()?;
        Ok(spec)
    }
}

/// `floor(side * sqrt(ratio))`.
pub fn scaled_side(side: usize, area_ratio: f64) -> usize {
    (side as f64 * area_ratio.sqrt()).floor() as usize
}

fn checked_side(side: usize) -> Result<usize> {
    if side < MIN_SIDE {
        return Err(invalid(format!(
            "transform would produce a side of {side} (< {MIN_SIDE})"
        )));
    }
    Ok(side)
}

fn blend(degenerate: &[f64], x: &ImageBuffer, factor: f64) -> ImageBuffer {
    let data = degenerate
        .iter()
        .zip(x.data())
        .map(|(d, v)| d + factor * (v - d))
        .collect();
    ImageBuffer::from_data(x.height(), x.width(), data).expect("same dimensions")
}

fn resize_image(x: &ImageBuffer, height: usize, width: usize) -> ImageBuffer {
    let planes: Vec<Plane> = x
        .channels()
        .iter()
        .map(|p| resize_plane(p, height, width))
        .collect();
    ImageBuffer::from_planes([&planes[0], &planes[1], &planes[2]]).expect("valid size")
}

fn smooth_3x3(x: &ImageBuffer) -> Vec<f64> {
    // [[1,1,1],[1,5,1],[1,1,1]] / 13; border pixels keep their value.
    let (h, w) = x.dims();
    let src = x.data();
    let mut out = src.to_vec();
    for r in 1..h - 1 {
        for c in 1..w - 1 {
            for ch in 0..3 {
                let mut acc = 0.0;
                for dr in 0..3 {
                    for dc in 0..3 {
                        let weight = if dr == 1 && dc == 1 { 5.0 } else { 1.0 };
                        acc += weight * src[((r + dr - 1) * w + (c + dc - 1)) * 3 + ch];
                    }
                }
                out[(r * w + c) * 3 + ch] = acc / 13.0;
            }
        }
    }
    out
}

fn mix_seed(a: u64, b: u64) -> u64 {
    // splitmix64 finalizer over the combined word
    let mut z = a ^ b.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Applies `t` to `x`. Deterministic for a fixed `rng_seed`.
pub fn apply_transform(x: &ImageBuffer, t: &TransformSpec, rng_seed: u64) -> Result<ImageBuffer> {
    t.validate()?;
    let (h, w) = x.dims();
    Ok(match t {
        TransformSpec::Identity => x.clone(),
        TransformSpec::Crop { area_ratio } => {
            let nh = checked_side(scaled_side(h, *area_ratio))?;
            let nw = checked_side(scaled_side(w, *area_ratio))?;
            x.crop((h - nh) / 2, (w - nw) / 2, nh, nw)?
        }
        TransformSpec::Resize { area_ratio } => {
            let nh = checked_side(scaled_side(h, *area_ratio))?;
            let nw = checked_side(scaled_side(w, *area_ratio))?;
            resize_image(x, nh, nw)
        }
        TransformSpec::Rotate90 => x.rotate90(),
        TransformSpec::Jpeg { quality } => jpeg_roundtrip(x, *quality)?,
        TransformSpec::Brightness { factor } => x.map(|v| factor * v),
        TransformSpec::Contrast { factor } => {
            let mean = x.luminance().mean();
            blend(&vec![mean; x.data().len()], x, *factor)
        }
        TransformSpec::Saturation { factor } => {
            let gray: Vec<f64> = x.luminance().data().iter().flat_map(|&l| [l; 3]).collect();
            blend(&gray, x, *factor)
        }
        TransformSpec::Sharpness { factor } => blend(&smooth_3x3(x), x, *factor),
        TransformSpec::TextOverlay { seed } => text_overlay(x, mix_seed(*seed, rng_seed)),
        TransformSpec::Combined { steps } => {
            let mut cur = x.clone();
            for (i, s) in steps.iter().enumerate() {
                cur = apply_transform(&cur, s, mix_seed(rng_seed, i as u64 + 1))?;
            }
            cur
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::seed_image;
    use proptest::prelude::*;

    #[test]
    fn enhancement_examples() {
        let img = seed_image(1, 64, 64);
        let same = apply_transform(&img, &TransformSpec::Brightness { factor: 1.0 }, 0).unwrap();
        assert_eq!(same, img);
        let px = ImageBuffer::filled(8, 8, [0.4, 0.4, 0.4]).unwrap();
        let out = apply_transform(&px, &TransformSpec::Brightness { factor: 2.0 }, 0).unwrap();
        assert!(out.data().iter().all(|&v| (v - 0.8).abs() < 1e-12));
        for t in [
            TransformSpec::Contrast { factor: 1.0 },
            TransformSpec::Saturation { factor: 1.0 },
            TransformSpec::Sharpness { factor: 1.0 },
        ] {
            let out = apply_transform(&img, &t, 0).unwrap();
            for (a, b) in out.data().iter().zip(img.data()) {
                assert!((a - b).abs() < 1e-12, "{t}");
            }
        }
    }

    #[test]
    fn contrast_zero_gives_mean_gray() {
        let img = seed_image(2, 32, 32);
        let mean = img.luminance().mean();
        let out = apply_transform(&img, &TransformSpec::Contrast { factor: 0.0 }, 0).unwrap();
        assert!(out.data().iter().all(|&v| (v - mean).abs() < 1e-12));
    }

    #[test]
    fn saturation_zero_is_grayscale() {
        let img = seed_image(2, 32, 32);
        let out = apply_transform(&img, &TransformSpec::Saturation { factor: 0.0 }, 0).unwrap();
        for p in out.data().chunks(3) {
            assert!((p[0] - p[1]).abs() < 1e-12 && (p[1] - p[2]).abs() < 1e-12);
        }
    }

    #[test]
    fn crop_and_resize_geometry() {
        let img = seed_image(4, 512, 512);
        let c = apply_transform(&img, &TransformSpec::Crop { area_ratio: 0.25 }, 0).unwrap();
        assert_eq!(c.dims(), (256, 256));
        assert_eq!(c.pixel(0, 0), img.pixel(128, 128));
        let r = apply_transform(&img, &TransformSpec::Resize { area_ratio: 0.7 }, 0).unwrap();
        assert_eq!(r.dims(), (428, 428));
        let tiny = ImageBuffer::filled(16, 16, [0.5; 3]).unwrap();
        assert!(apply_transform(&tiny, &TransformSpec::Crop { area_ratio: 0.1 }, 0).is_err());
    }

    #[test]
    fn rotate_four_times_is_identity() {
        let img = seed_image(5, 40, 24);
        let once = apply_transform(&img, &TransformSpec::Rotate90, 0).unwrap();
        assert_eq!(once.dims(), (24, 40));
        // Counter-clockwise: top-right corner moves to top-left.
        assert_eq!(once.pixel(0, 0), img.pixel(0, 23));
        let mut cur = img.clone();
        for _ in 0..4 {
            cur = cur.rotate90();
        }
        assert_eq!(cur, img);
    }

    #[test]
    fn combined_applies_in_order() {
        let img = seed_image(6, 128, 128);
        let out = apply_transform(&img, &combined_attack(), 9).unwrap();
        let manual = {
            let a = apply_transform(&img, &TransformSpec::Crop { area_ratio: 0.5 }, 0).unwrap();
            let b = apply_transform(&a, &TransformSpec::Brightness { factor: 1.5 }, 0).unwrap();
            apply_transform(&b, &TransformSpec::Jpeg { quality: 80 }, 0).unwrap()
        };
        assert_eq!(out, manual);
        assert_eq!(out.dims(), (90, 90));
    }

    #[test]
    fn spec_strings_roundtrip() {
        for t in TransformSpec::evaluation_set() {
            let parsed: TransformSpec = t.to_string().parse().unwrap();
            assert_eq!(parsed, t);
        }
        let t: TransformSpec = "crop:0.5+jpeg:80".parse().unwrap();
        assert_eq!(t.to_string(), "crop:0.5+jpeg:80");
        assert!("jpeg:0".parse::<TransformSpec>().is_err());
        assert!("crop:1.5".parse::<TransformSpec>().is_err());
        assert!("blur:2".parse::<TransformSpec>().is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn transforms_preserve_validity_and_determinism(
            seed in 0u64..1000,
            which in 0usize..11,
            rng_seed in any::<u64>(),
        ) {
            let img = seed_image(seed, 48, 40);
            let t = TransformSpec::evaluation_set()[which].clone();
            match apply_transform(&img, &t, rng_seed) {
                Ok(out) => {
                    prop_assert!(out.data().iter().all(|v| (0.0..=1.0).contains(v)));
                    prop_assert!(out.height() >= MIN_SIDE && out.width() >= MIN_SIDE);
                    prop_assert_eq!(apply_transform(&img, &t, rng_seed).unwrap(), out);
                }
                Err(e) => prop_assert!(matches!(e, Error::InvalidArgument(_))),
            }
        }
    }
}
