//! Loss-driven embedding and white-box attacks on the spread-spectrum
//! extractor. All of them optimize a gray pixel offset using the exact
//! gradient of the (affine) extractor in the full frame.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::key::CodecKey;
use super::spread::{
    embed_ss_additive, extract_ss_in_frame, soft_gradient, SoftMessage, SyncFrame,
};
use crate::bitstats::BitMessage;
use crate::error::{invalid, Result};
use crate::imaging::{jnd_mask, mse, psnr, ImageBuffer, JndParams, Plane};

/// Reference MSE of the perceptual term.
const MSE_UNIT: f64 = 1e-3;
/// Smallest perceptual weight used to scale the step.
const LAMBDA_FLOOR: f64 = 1e-3;

fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Binary cross-entropy between `m` and `sigmoid(soft)`, summed over bits.
pub fn bce_message_loss(soft: &SoftMessage, m: &BitMessage) -> Result<f64> {
    if soft.len() != m.len() {
        return Err(invalid(format!(
            "soft message has {} values, key has {} bits",
            soft.len(),
            m.len()
        )));
    }
    // -log sigmoid(y s) = softplus(-y s) with y = +-1.
    Ok(soft
        .values
        .iter()
        .zip(m.signs())
        .map(|(s, y)| softplus(-y * s))
        .sum())
}

/// Gradient of [`bce_message_loss`] with respect to the soft values.
fn bce_gradient(soft: &SoftMessage, m: &BitMessage) -> Vec<f64> {
    soft.values
        .iter()
        .zip(m.signs())
        .map(|(s, y)| -y * sigmoid(-y * s))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterativeParams {
    /// Weight of the perceptual (MSE) term against the message loss.
    pub lambda_i: f64,
    pub steps: usize,
    pub learning_rate: f64,
}

impl Default for IterativeParams {
    fn default() -> Self {
        Self {
            lambda_i: 0.2,
            steps: 10,
            learning_rate: 0.1,
        }
    }
}

/// Embeds `m` by minimizing `BCE/k + lambda_i * MSE(x', x) / 1e-3` over a
/// gray pixel offset.
///
/// Each step is a proximal gradient step in the metric given by the JND
/// mask: a gradient step on the message term scaled by the inverse
/// curvature of the perceptual term, then the exact proximal map of the
/// perceptual term. Returns the iterate with the lowest objective.
pub fn embed_ss_iterative(
    x: &ImageBuffer,
    key: &CodecKey,
    m: &BitMessage,
    params: &IterativeParams,
) -> Result<ImageBuffer> {
    if params.steps == 0 {
        return Err(invalid("iterative embedding needs at least one step"));
    }
    if !(params.lambda_i >= 0.0 && params.lambda_i.is_finite()) {
        return Err(invalid("lambda_i must be finite and non-negative"));
    }
    if m.len() != key.k() {
        return Err(invalid(format!(
            "message has {} bits, key expects {}",
            m.len(),
            key.k()
        )));
    }
    let (h, w) = x.dims();
    let k = key.k() as f64;
    let jnd = jnd_mask(x, &JndParams::default());
    let precondition = (h * w) as f64 * MSE_UNIT / (2.0 * params.lambda_i.max(LAMBDA_FLOOR));
    let lr = params.learning_rate;

    let objective = |img: &ImageBuffer| -> Result<(f64, SoftMessage)> {
        let soft = extract_ss_in_frame(img, key, SyncFrame::FULL)?;
        let loss = bce_message_loss(&soft, m)? / k + params.lambda_i * mse(img, x)? / MSE_UNIT;
        Ok((loss, soft))
    };

    let mut offset = Plane::zeros(h, w);
    let mut current = x.clone();
    let (mut loss, mut soft) = objective(&current)?;
    let mut best = (loss, current.clone());
    for _ in 0..params.steps {
        let grad_soft: Vec<f64> = bce_gradient(&soft, m).iter().map(|g| g / k).collect();
        let grad = soft_gradient(h, w, key, SyncFrame::FULL, &grad_soft)?;
        for ((d, g), j) in offset
            .data_mut()
            .iter_mut()
            .zip(grad.data())
            .zip(jnd.data())
        {
            let half = *d - lr * precondition * j * g;
            *d = half / (1.0 + lr * j);
        }
        current = x.add_gray(&offset)?;
        (loss, soft) = objective(&current)?;
        if loss < best.0 {
            best = (loss, current.clone());
        }
    }
    Ok(best.1)
}

/// Result of a white-box attack.
#[derive(Debug, Clone)]
pub struct AttackOutcome {
    pub image: ImageBuffer,
    /// The PSNR budget left no room to move; `image` is the input.
    pub noop: bool,
    /// PSNR against the attacked input.
    pub psnr: f64,
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        self.t += 1;
        let c1 = 1.0 - Self::BETA1.powi(self.t);
        let c2 = 1.0 - Self::BETA2.powi(self.t);
        for i in 0..params.len() {
            self.m[i] = Self::BETA1 * self.m[i] + (1.0 - Self::BETA1) * grad[i];
            self.v[i] = Self::BETA2 * self.v[i] + (1.0 - Self::BETA2) * grad[i] * grad[i];
            params[i] -= lr * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + Self::EPS);
        }
    }
}

const ATTACK_STEPS: usize = 10;
const ATTACK_LR: f64 = 0.1;

/// Drives the soft message toward `target` (mean squared error) with Adam,
/// keeping the offset inside the L2 ball that guarantees
/// `PSNR >= psnr_floor`.
fn soft_target_attack(
    x: &ImageBuffer,
    key: &CodecKey,
    target: &[f64],
    psnr_floor: f64,
) -> Result<AttackOutcome> {
    if psnr_floor.is_nan() || psnr_floor <= 0.0 {
        return Err(invalid("psnr floor must be positive"));
    }
    let (h, w) = x.dims();
    let n = (h * w) as f64;
    // A shared gray offset of RMS r moves every channel by r before clamping.
    // Slightly inside the ball so rounding cannot land below the floor.
    let radius = (n * 10f64.powf(-psnr_floor / 10.0)).sqrt() * (1.0 - 1e-9);
    if !(radius.is_finite() && radius > 1e-9) {
        return Ok(AttackOutcome {
            image: x.clone(),
            noop: true,
            psnr: f64::INFINITY,
        });
    }
    let k = key.k() as f64;
    let loss_of = |soft: &SoftMessage| -> f64 {
        soft.values
            .iter()
            .zip(target)
            .map(|(s, t)| (s - t) * (s - t))
            .sum::<f64>()
            / k
    };
    let mut offset = Plane::zeros(h, w);
    let mut adam = Adam::new(h * w);
    let mut current = x.clone();
    let mut soft = extract_ss_in_frame(&current, key, SyncFrame::FULL)?;
    let mut best = (loss_of(&soft), current.clone());
    for _ in 0..ATTACK_STEPS {
        let grad_soft: Vec<f64> = soft
            .values
            .iter()
            .zip(target)
            .map(|(s, t)| 2.0 * (s - t) / k)
            .collect();
        let grad = soft_gradient(h, w, key, SyncFrame::FULL, &grad_soft)?;
        adam.step(offset.data_mut(), grad.data(), ATTACK_LR);
        let norm = offset.dot(&offset).sqrt();
        if norm > radius {
            offset.scale(radius / norm);
        }
        current = x.add_gray(&offset)?;
        soft = extract_ss_in_frame(&current, key, SyncFrame::FULL)?;
        let loss = loss_of(&soft);
        if loss < best.0 {
            best = (loss, current.clone());
        }
    }
    let noop = best.1 == *x;
    Ok(AttackOutcome {
        psnr: psnr(&best.1, x)?,
        image: best.1,
        noop,
    })
}

fn mean_abs(values: &[f64]) -> f64 {
    values.iter().map(|v| v.abs()).sum::<f64>() / values.len() as f64
}

/// White-box removal: pushes the extractor output toward a random message
/// (drawn from `seed`) of the same strength as the current output.
pub fn adversarial_remove(
    x_w: &ImageBuffer,
    key: &CodecKey,
    psnr_floor: f64,
    seed: u64,
) -> Result<AttackOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let decoy = BitMessage::random(key.k(), &mut rng);
    let strength = mean_abs(&extract_ss_in_frame(x_w, key, SyncFrame::FULL)?.values);
    let target: Vec<f64> = decoy.signs().iter().map(|s| s * strength).collect();
    soft_target_attack(x_w, key, &target, psnr_floor)
}

/// White-box forgery: pushes the extractor output of `x` toward
/// `victim_m`, at the strength a genuine embedding would produce.
pub fn adversarial_forge(
    x: &ImageBuffer,
    key: &CodecKey,
    victim_m: &BitMessage,
    psnr_floor: f64,
) -> Result<AttackOutcome> {
    if victim_m.len() != key.k() {
        return Err(invalid("victim message length does not match the key"));
    }
    let genuine = embed_ss_additive(x, key, victim_m)?;
    let strength = mean_abs(&extract_ss_in_frame(&genuine, key, SyncFrame::FULL)?.values);
    let target: Vec<f64> = victim_m.signs().iter().map(|s| s * strength).collect();
    soft_target_attack(x, key, &target, psnr_floor)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bitstats::match_bits;
    use crate::codecs::{extract_ss, keygen, CodecKind, KeyParams};
    use crate::corpus::seed_image;

    fn key(seed: u64) -> CodecKey {
        keygen(CodecKind::Spreadspectrum, 48, seed, KeyParams::default()).unwrap()
    }

    #[test]
    fn bce_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = BitMessage::random(48, &mut rng);
        let zero = SoftMessage {
            values: vec![0.0; 48],
        };
        let l = bce_message_loss(&zero, &m).unwrap();
        assert!((l - 48.0 * 2f64.ln()).abs() < 1e-12);
        assert!((l - 33.27).abs() < 0.01);

        let ones = BitMessage::new(vec![true; 48]).unwrap();
        let big = SoftMessage {
            values: vec![800.0; 48],
        };
        assert!(bce_message_loss(&big, &ones).unwrap() < 1e-300);
        let wrong = SoftMessage {
            values: vec![-800.0; 48],
        };
        assert!((bce_message_loss(&wrong, &ones).unwrap() - 48.0 * 800.0).abs() < 1e-6);

        let mut prev = f64::INFINITY;
        for t in [0.1, 0.5, 1.0, 2.0, 5.0] {
            let s = SoftMessage {
                values: m.signs().iter().map(|y| y * t).collect(),
            };
            let l = bce_message_loss(&s, &m).unwrap();
            assert!(l < prev);
            prev = l;
        }
        assert!(bce_message_loss(&zero, &BitMessage::random(8, &mut rng)).is_err());
    }

    #[test]
    fn bce_gradient_matches_finite_differences() {
        let m: BitMessage = "1011".parse().unwrap();
        let soft = SoftMessage {
            values: vec![0.3, -1.2, 2.0, 0.0],
        };
        let g = bce_gradient(&soft, &m);
        for (j, &gj) in g.iter().enumerate() {
            let mut moved = soft.clone();
            moved.values[j] += 1e-6;
            let fd = (bce_message_loss(&moved, &m).unwrap() - bce_message_loss(&soft, &m).unwrap())
                / 1e-6;
            assert!((fd - gj).abs() < 1e-5);
        }
    }

    #[test]
    fn huge_lambda_leaves_image_untouched() {
        let key = key(2);
        let img = seed_image(1, 256, 256);
        let m = BitMessage::random(48, &mut ChaCha8Rng::seed_from_u64(3));
        let params = IterativeParams {
            lambda_i: 1e6,
            ..IterativeParams::default()
        };
        let out = embed_ss_iterative(&img, &key, &m, &params).unwrap();
        assert!(psnr(&img, &out).unwrap() >= 55.0);
    }

    #[test]
    fn iterative_embedding_roundtrip() {
        let key = key(4);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for seed in 0..2 {
            let img = seed_image(seed, 512, 512);
            let m = BitMessage::random(48, &mut rng);
            let out = embed_ss_iterative(&img, &key, &m, &IterativeParams::default()).unwrap();
            let (_, bits) = extract_ss(&out, &key).unwrap();
            assert_eq!(bits, m);
        }
    }

    #[test]
    fn attacks_respect_the_psnr_floor() {
        let key = key(6);
        let img = seed_image(2, 256, 256);
        let m = BitMessage::random(48, &mut ChaCha8Rng::seed_from_u64(7));
        let wm = embed_ss_additive(&img, &key, &m).unwrap();
        for floor in [26.0, 40.0] {
            let out = adversarial_remove(&wm, &key, floor, 1).unwrap();
            assert!(out.psnr >= floor - 1e-9, "{} < {floor}", out.psnr);
            assert!(!out.noop);
        }
        let out = adversarial_remove(&wm, &key, 400.0, 1).unwrap();
        assert!(out.noop);
        assert_eq!(out.image, wm);
        assert!(adversarial_remove(&wm, &key, 0.0, 1).is_err());
    }

    #[test]
    fn forging_an_existing_mark_keeps_it() {
        let key = key(8);
        let img = seed_image(3, 256, 256);
        let m = BitMessage::random(48, &mut ChaCha8Rng::seed_from_u64(9));
        let wm = embed_ss_additive(&img, &key, &m).unwrap();
        let (_, read) = extract_ss(&wm, &key).unwrap();
        let out = adversarial_forge(&wm, &key, &read, 30.0).unwrap();
        let (_, again) = extract_ss(&out.image, &key).unwrap();
        assert!(match_bits(&again, &m).unwrap() >= 41);
    }
}
