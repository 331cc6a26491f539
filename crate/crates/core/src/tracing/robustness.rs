use std::time::Instant;

use rand::Rng;
use rayon::prelude::*;
use serde_json::json;

use super::derived_rng;
use super::report::{ExperimentReport, RobustnessRow, RobustnessSummary};
use crate::bitstats::{match_bits, BitMessage};
use crate::codecs::{embed, extract, CodecKey};
use crate::error::{invalid, Result};
use crate::imaging::{apply_transform, psnr, ssim, ImageBuffer, TransformSpec};

const PURPOSE_MESSAGES: u64 = 0x20B;
const PURPOSE_TRANSFORM: u64 = 0x20C;

/// Mean bit accuracy per transform over `n_keys` random messages embedded
/// in every image of `corpus`, plus the mean embedding PSNR and SSIM.
pub fn robustness_table(
    key: &CodecKey,
    corpus: &[ImageBuffer],
    transforms: &[TransformSpec],
    n_keys: usize,
    seed: u64,
) -> Result<ExperimentReport> {
    let start = Instant::now();
    if corpus.is_empty() || transforms.is_empty() || n_keys == 0 {
        return Err(invalid(
            "robustness needs images, transforms and at least one key",
        ));
    }
    for t in transforms {
        t.validate()?;
    }
    let k = key.k();
    let messages: Vec<BitMessage> = (0..n_keys)
        .map(|i| BitMessage::random(k, &mut derived_rng(seed, PURPOSE_MESSAGES, i as u64)))
        .collect();
    let pairs = n_keys * corpus.len();
    // Per (message, image): embed quality and matches under every transform.
    let cells: Vec<(f64, f64, Vec<usize>)> = (0..pairs)
        .into_par_iter()
        .map(|p| {
            let (mi, xi) = (p / corpus.len(), p % corpus.len());
            let x = &corpus[xi];
            let m = &messages[mi];
            let marked = embed(x, key, m)?;
            let mut rng = derived_rng(seed, PURPOSE_TRANSFORM, p as u64);
            let matches = transforms
                .iter()
                .map(|t| {
                    match_bits(
                        &extract(&apply_transform(&marked, t, rng.random())?, key)?,
                        m,
                    )
                })
                .collect::<Result<Vec<_>>>()?;
            Ok((psnr(&marked, x)?, ssim(&marked, x)?, matches))
        })
        .collect::<Result<_>>()?;

    let n = pairs as f64;
    let rows = transforms
        .iter()
        .enumerate()
        .map(|(ti, t)| RobustnessRow {
            transform: t.to_string(),
            bit_accuracy: cells.iter().map(|c| c.2[ti]).sum::<usize>() as f64 / (n * k as f64),
            samples: pairs as u64,
        })
        .collect();
    // Identical embeddings (infinite PSNR) are capped so the mean stays finite.
    let embed_psnr = cells.iter().map(|c| c.0.min(100.0)).sum::<f64>() / n;
    let embed_ssim = cells.iter().map(|c| c.1).sum::<f64>() / n;
    let mut report = ExperimentReport::new(
        "robustness",
        seed,
        json!({
            "codec": key.kind().to_string(),
            "k": k,
            "key_seed": key.seed(),
            "corpus_size": corpus.len(),
            "transforms": transforms.iter().map(ToString::to_string).collect::<Vec<_>>(),
            "n_keys": n_keys,
        }),
    );
    report.robustness = Some(RobustnessSummary {
        codec: key.kind().to_string(),
        n_keys,
        n_images: corpus.len(),
        embed_psnr,
        embed_ssim,
        rows,
    });
    report.wall_clock_s = start.elapsed().as_secs_f64();
    Ok(report)
}
