//! Spread-spectrum codec: band-limited carriers in a canonical frame and a
//! correlation extractor on self-referenced high-pass luminance.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::key::CodecKey;
use crate::bitstats::BitMessage;
use crate::error::{invalid, Result};
use crate::imaging::resample::{resample, resample_adjoint, AxisWeights};
use crate::imaging::{
    gaussian_kernel, jnd_mask, lowpass_normalized, lowpass_normalized_adjoint, ImageBuffer,
    JndParams, Plane,
};

/// Radius and sigma of the 9x9 Gaussian used both to band-limit carriers
/// and as the extractor's self-reference low-pass.
const KERNEL_RADIUS: usize = 4;
const KERNEL_SIGMA: f64 = 2.0;

/// Scales raw correlations so that soft outputs on unmarked images are of
/// order one.
pub(crate) const SOFT_GAIN: f64 = 1000.0;

/// Centred-crop hypotheses tried by [`extract_ss`], as kept-area ratios.
pub const SYNC_AREA_RATIOS: [f64; 10] = [1.0, 0.9, 0.8, 0.7, 0.6, 0.5, 0.4, 0.3, 0.2, 0.1];

/// Full-frame sync statistic above which the other hypotheses are skipped.
/// Unmarked content scores in the single digits.
const SYNC_EARLY_ACCEPT: f64 = 30.0;

/// Pre-threshold extractor outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoftMessage {
    pub values: Vec<f64>,
}

impl SoftMessage {
    pub fn hard(&self) -> BitMessage {
        BitMessage::from_soft(&self.values).expect("k >= 1")
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

fn kernel() -> Vec<f64> {
    gaussian_kernel(KERNEL_RADIUS, KERNEL_SIGMA)
}

/// Seeded Gaussian fields, low-passed, then Gram-Schmidt orthogonalized
/// (after mean removal) and scaled to unit RMS.
pub(crate) fn generate_carriers(k: usize, seed: u64, size: usize) -> Vec<Plane> {
    let g = kernel();
    let ones = Plane::filled(size, size, 1.0);
    let raw: Vec<Plane> = (0..k)
        .into_par_iter()
        .map(|j| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(j as u64 + 1);
            let noise = Plane::new(
                size,
                size,
                (0..size * size)
                    .map(|_| StandardNormal.sample(&mut rng))
                    .collect(),
            );
            let mut field = lowpass_normalized(&noise, &ones, &g);
            let mean = field.mean();
            for v in field.data_mut() {
                *v -= mean;
            }
            field
        })
        .collect();
    let n = (size * size) as f64;
    let mut basis: Vec<Plane> = Vec::with_capacity(k);
    for mut field in raw {
        // Two passes of modified Gram-Schmidt for numerical orthogonality.
        for _ in 0..2 {
            for b in &basis {
                let proj = field.dot(b) / n;
                field.axpy(-proj, b);
            }
        }
        let rms = field.rms();
        field.scale(1.0 / rms);
        basis.push(field);
    }
    basis
}

/// Geometry hypothesis: the input is a centred crop keeping `area_ratio` of
/// the area of the frame the carriers were laid out on.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyncFrame {
    pub area_ratio: f64,
}

impl SyncFrame {
    pub const FULL: SyncFrame = SyncFrame { area_ratio: 1.0 };
}

pub(crate) struct FrameGeometry {
    rows: AxisWeights,
    cols: AxisWeights,
    mask: Plane,
    n_valid: f64,
}

fn frame_axis(in_len: usize, size: usize, area_ratio: f64) -> AxisWeights {
    let original = in_len as f64 / area_ratio.sqrt();
    AxisWeights::new(
        in_len,
        size,
        original / size as f64,
        -(original - in_len as f64) / 2.0,
    )
}

impl FrameGeometry {
    pub(crate) fn new(height: usize, width: usize, size: usize, frame: SyncFrame) -> Self {
        let rows = frame_axis(height, size, frame.area_ratio);
        let cols = frame_axis(width, size, frame.area_ratio);
        let mut mask = Plane::zeros(size, size);
        let mut n_valid = 0.0;
        for (r, &vr) in rows.valid().iter().enumerate() {
            for (c, &vc) in cols.valid().iter().enumerate() {
                if vr && vc {
                    mask.set(r, c, 1.0);
                    n_valid += 1.0;
                }
            }
        }
        Self {
            rows,
            cols,
            mask,
            n_valid,
        }
    }
}

/// Raw correlations for one geometry, plus a scale-free sync statistic
/// (mean squared normalized correlation times the valid area).
fn raw_in_geometry(luma: &Plane, carriers: &[Plane], geom: &FrameGeometry) -> (Vec<f64>, f64) {
    if geom.n_valid < 64.0 {
        return (vec![0.0; carriers.len()], 0.0);
    }
    let canon = resample(luma, &geom.rows, &geom.cols);
    let low = lowpass_normalized(&canon, &geom.mask, &kernel());
    let mut high = canon;
    high.axpy(-1.0, &low);
    high.mul_elementwise(&geom.mask);
    let hp_norm = high.dot(&high).sqrt();
    let full = geom.n_valid == (geom.mask.height() * geom.mask.width()) as f64;
    let mut stat = 0.0;
    let raw = carriers
        .iter()
        .map(|c| {
            let d = high.dot(c);
            let c_norm = if full {
                geom.n_valid.sqrt()
            } else {
                c.data()
                    .iter()
                    .zip(geom.mask.data())
                    .map(|(v, m)| v * v * m)
                    .sum::<f64>()
                    .sqrt()
            };
            if hp_norm > 0.0 {
                let rho = d / (hp_norm * c_norm);
                stat += rho * rho;
            }
            SOFT_GAIN * d / geom.n_valid
        })
        .collect();
    (raw, stat * geom.n_valid / carriers.len() as f64)
}

fn finish(raw: Vec<f64>, key: &CodecKey) -> Result<SoftMessage> {
    let values = match key.whitening() {
        Some(w) => w.apply(&raw)?,
        None => raw,
    };
    Ok(SoftMessage { values })
}

fn check_kind(key: &CodecKey) -> Result<()> {
    if key.kind() != super::CodecKind::Spreadspectrum {
        return Err(invalid("key is not a spread-spectrum key"));
    }
    Ok(())
}

/// Soft message under a fixed geometry hypothesis. Affine in the pixels.
pub fn extract_ss_in_frame(
    x: &ImageBuffer,
    key: &CodecKey,
    frame: SyncFrame,
) -> Result<SoftMessage> {
    check_kind(key)?;
    let geom = FrameGeometry::new(x.height(), x.width(), key.canonical_size(), frame);
    let (raw, _) = raw_in_geometry(&x.luminance(), key.carriers(), &geom);
    finish(raw, key)
}

/// Unwhitened correlations under the best-matching geometry hypothesis.
pub(crate) fn extract_raw(x: &ImageBuffer, key: &CodecKey) -> Result<(Vec<f64>, SyncFrame)> {
    check_kind(key)?;
    let luma = x.luminance();
    let carriers = key.carriers();
    let evaluate = |area_ratio: f64| {
        let frame = SyncFrame { area_ratio };
        let geom = FrameGeometry::new(x.height(), x.width(), key.canonical_size(), frame);
        let (raw, stat) = raw_in_geometry(&luma, carriers, &geom);
        (raw, stat, frame)
    };
    let full = evaluate(SYNC_AREA_RATIOS[0]);
    if full.1 >= SYNC_EARLY_ACCEPT {
        return Ok((full.0, full.2));
    }
    let best = SYNC_AREA_RATIOS[1..]
        .par_iter()
        .map(|&r| evaluate(r))
        .collect::<Vec<_>>()
        .into_iter()
        // First maximum wins so ties resolve toward the full frame.
        .fold(full, |best, cur| if best.1 >= cur.1 { best } else { cur });
    Ok((best.0, best.2))
}

/// Correlations before whitening, under the best geometry hypothesis.
/// These are the samples [`crate::whitening::fit_whitening`] expects.
pub fn extract_ss_unwhitened(x: &ImageBuffer, key: &CodecKey) -> Result<Vec<f64>> {
    Ok(extract_raw(x, key)?.0)
}

/// Soft and hard message. Every centred-crop hypothesis in
/// [`SYNC_AREA_RATIOS`] is tried and the one with the strongest carrier
/// correlation is kept; whitening, when the key carries one, is applied
/// last.
pub fn extract_ss(x: &ImageBuffer, key: &CodecKey) -> Result<(SoftMessage, BitMessage)> {
    let (raw, _) = extract_raw(x, key)?;
    let soft = finish(raw, key)?;
    let hard = soft.hard();
    Ok((soft, hard))
}

/// Gradient of `sum_j grad_soft[j] * soft_j(x)` with respect to a gray
/// offset added equally to all three channels, under a fixed geometry.
/// Ignores clamping.
pub fn soft_gradient(
    height: usize,
    width: usize,
    key: &CodecKey,
    frame: SyncFrame,
    grad_soft: &[f64],
) -> Result<Plane> {
    check_kind(key)?;
    if grad_soft.len() != key.k() {
        return Err(invalid("gradient length does not match k"));
    }
    let geom = FrameGeometry::new(height, width, key.canonical_size(), frame);
    let grad_raw = match key.whitening() {
        Some(w) => w.apply_transpose(grad_soft),
        None => grad_soft.to_vec(),
    };
    let size = key.canonical_size();
    let mut field = Plane::zeros(size, size);
    for (g, c) in grad_raw.iter().zip(key.carriers()) {
        field.axpy(SOFT_GAIN * g / geom.n_valid.max(1.0), c);
    }
    // high = M (I - LP) canon  =>  high^T f = (I - LP)^T (M f)
    field.mul_elementwise(&geom.mask);
    let low_t = lowpass_normalized_adjoint(&field, &geom.mask, &kernel());
    field.axpy(-1.0, &low_t);
    // Luminance weights sum to one, so a gray offset moves luminance 1:1.
    Ok(resample_adjoint(&field, &geom.rows, &geom.cols))
}

/// Carrier-space direction whose (whitened) response has the signs of `m`.
fn embedding_direction(key: &CodecKey, m: &BitMessage) -> Result<Vec<f64>> {
    let signs = m.signs();
    match key.whitening() {
        Some(w) => w.solve(&signs),
        None => Ok(signs),
    }
}

/// The unit-RMS, mask-shaped gray pattern added by additive embedding.
pub(crate) fn additive_pattern(x: &ImageBuffer, key: &CodecKey, m: &BitMessage) -> Result<Plane> {
    let size = key.canonical_size();
    let mut canon = Plane::zeros(size, size);
    for (q, c) in embedding_direction(key, m)?.iter().zip(key.carriers()) {
        canon.axpy(*q, c);
    }
    let (h, w) = x.dims();
    let mut pattern = resample(
        &canon,
        &AxisWeights::resize(size, h),
        &AxisWeights::resize(size, w),
    );
    pattern.mul_elementwise(&jnd_mask(x, &JndParams::default()));
    let rms = pattern.rms();
    if rms > 0.0 {
        pattern.scale(1.0 / rms);
    }
    Ok(pattern)
}

/// `x + alpha * P`, where `P` is the carrier combination for `m`, resized
/// to the image, shaped by the JND mask and normalized to unit RMS.
pub fn embed_ss_additive(x: &ImageBuffer, key: &CodecKey, m: &BitMessage) -> Result<ImageBuffer> {
    check_kind(key)?;
    if m.len() != key.k() {
        return Err(invalid(format!(
            "message has {} bits, key expects {}",
            m.len(),
            key.k()
        )));
    }
    let min_side = key.canonical_size() / 4;
    if x.height() < min_side || x.width() < min_side {
        return Err(invalid(format!(
            "image sides must be at least {min_side} for this key"
        )));
    }
    if key.alpha() == 0.0 {
        return Ok(x.clone());
    }
    let mut pattern = additive_pattern(x, key, m)?;
    pattern.scale(key.alpha());
    x.add_gray(&pattern)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bitstats::match_bits;
    use crate::codecs::{keygen, CodecKind, KeyParams};
    use crate::corpus::seed_image;
    use crate::imaging::{apply_transform, psnr, TransformSpec};
    use rand::SeedableRng;

    fn key(k: usize, seed: u64) -> CodecKey {
        keygen(CodecKind::Spreadspectrum, k, seed, KeyParams::default()).unwrap()
    }

    #[test]
    fn carriers_are_orthonormal() {
        let key = key(48, 1);
        let cs = key.carriers();
        assert_eq!(cs.len(), 48);
        let n = 256.0 * 256.0;
        let mut worst: f64 = 0.0;
        for (i, a) in cs.iter().enumerate() {
            assert!(a.mean().abs() < 1e-9);
            assert!((a.rms() - 1.0).abs() < 1e-9);
            for b in &cs[i + 1..] {
                worst = worst.max((a.dot(b) / n).abs());
            }
        }
        assert!(worst <= 0.05, "max carrier correlation {worst}");
    }

    #[test]
    fn additive_roundtrip_and_distortion() {
        let key = key(48, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for seed in 0..3 {
            let img = seed_image(seed, 512, 512);
            let m = BitMessage::random(48, &mut rng);
            let wm = embed_ss_additive(&img, &key, &m).unwrap();
            let p = psnr(&img, &wm).unwrap();
            assert!((28.0..=32.0).contains(&p), "psnr {p}");
            let (_, bits) = extract_ss(&wm, &key).unwrap();
            assert!(match_bits(&bits, &m).unwrap() >= 47);
        }
        let img = seed_image(9, 256, 256);
        let m = BitMessage::random(48, &mut rng);
        let zero = key.with_alpha(0.0).unwrap();
        assert_eq!(embed_ss_additive(&img, &zero, &m).unwrap(), img);
    }

    #[test]
    fn alpha_law_six_db_per_doubling() {
        // Flat mid-gray image: no clamping for small alpha.
        let img = ImageBuffer::filled(256, 256, [0.5; 3]).unwrap();
        let m = BitMessage::random(48, &mut ChaCha8Rng::seed_from_u64(4));
        let base = key(48, 5);
        let p1 = psnr(
            &img,
            &embed_ss_additive(&img, &base.with_alpha(0.01).unwrap(), &m).unwrap(),
        )
        .unwrap();
        let p2 = psnr(
            &img,
            &embed_ss_additive(&img, &base.with_alpha(0.02).unwrap(), &m).unwrap(),
        )
        .unwrap();
        assert!(((p1 - p2) - 6.0206).abs() < 0.01, "{p1} {p2}");
    }

    #[test]
    fn extraction_is_affine_in_a_fixed_frame() {
        let key = key(16, 6);
        let a = seed_image(1, 128, 128);
        let b = seed_image(2, 128, 128);
        let t = 0.3;
        let mix = ImageBuffer::from_data(
            128,
            128,
            a.data()
                .iter()
                .zip(b.data())
                .map(|(u, v)| t * u + (1.0 - t) * v)
                .collect(),
        )
        .unwrap();
        for area_ratio in [1.0, 0.5] {
            let frame = SyncFrame { area_ratio };
            let sa = extract_ss_in_frame(&a, &key, frame).unwrap();
            let sb = extract_ss_in_frame(&b, &key, frame).unwrap();
            let sm = extract_ss_in_frame(&mix, &key, frame).unwrap();
            for j in 0..16 {
                let want = t * sa.values[j] + (1.0 - t) * sb.values[j];
                assert!((sm.values[j] - want).abs() < 1e-9 * (1.0 + want.abs()));
            }
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let key = key(8, 7);
        let img = seed_image(3, 96, 80);
        let frame = SyncFrame::FULL;
        let weights: Vec<f64> = (0..8).map(|j| (j as f64 - 3.5) / 4.0).collect();
        let objective = |x: &ImageBuffer| -> f64 {
            let s = extract_ss_in_frame(x, &key, frame).unwrap();
            s.values.iter().zip(&weights).map(|(a, b)| a * b).sum()
        };
        let grad = soft_gradient(96, 80, &key, frame, &weights).unwrap();
        let base = objective(&img);
        // Directional derivative along a smooth random offset.
        let mut dir = Plane::zeros(96, 80);
        for r in 0..96 {
            for c in 0..80 {
                dir.set(r, c, ((r * 7 + c * 3) as f64 * 0.37).sin());
            }
        }
        let eps = 1e-4;
        let mut step = dir.clone();
        step.scale(eps);
        let moved = img.add_gray(&step).unwrap();
        let fd = (objective(&moved) - base) / eps;
        let an = grad.dot(&dir);
        assert!(
            (fd - an).abs() < 1e-4 * an.abs().max(1.0),
            "fd {fd} vs analytic {an}"
        );
    }

    #[test]
    fn crop_is_resynchronized() {
        let key = key(48, 8);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let m = BitMessage::random(48, &mut rng);
        let img = seed_image(4, 512, 512);
        let wm = embed_ss_additive(&img, &key, &m).unwrap();
        let cropped = apply_transform(&wm, &TransformSpec::Crop { area_ratio: 0.5 }, 0).unwrap();
        let (raw, frame) = extract_raw(&cropped, &key).unwrap();
        assert_eq!(frame.area_ratio, 0.5);
        let bits = BitMessage::from_soft(&raw).unwrap();
        assert!(match_bits(&bits, &m).unwrap() >= 45);
    }
}
