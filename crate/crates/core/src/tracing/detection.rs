use std::time::Instant;

use rayon::prelude::*;
use serde_json::json;

use super::report::{wilson95, DetectionRow, ExperimentReport};
use super::{derived_rng, ChannelModel, TrialSource};
use crate::bitstats::{
    fpr_of_threshold, match_bits, threshold_for_fpr, BitMessage, TailConvention,
};
use crate::codecs::{embed, extract, CodecKey};
use crate::error::{invalid, Result};

const PURPOSE_MESSAGE: u64 = 0xDE7;

/// Embeds one random message (drawn from `seed`) in every trial, sends it
/// through `channel`, and reports the TPR at the threshold of each target
/// FPR. FPR columns are the closed-form values at those thresholds.
pub fn run_detection_experiment(
    key: &CodecKey,
    source: TrialSource<'_>,
    channel: &ChannelModel,
    target_fprs: &[f64],
    seed: u64,
) -> Result<ExperimentReport> {
    let start = Instant::now();
    if source.is_empty() {
        return Err(invalid("detection needs a non-empty corpus"));
    }
    if target_fprs.is_empty() {
        return Err(invalid("at least one target fpr is required"));
    }
    channel.validate()?;
    let k = key.k();
    let taus = target_fprs
        .iter()
        .map(|&f| threshold_for_fpr(k, f, 1))
        .collect::<Result<Vec<_>>>()?;
    let m = BitMessage::random(k, &mut derived_rng(seed, PURPOSE_MESSAGE, 0));

    let scores: Vec<usize> = match (source, channel.is_bsc()) {
        (_, true) => (0..source.len() as u64)
            .into_par_iter()
            .map(|t| match_bits(&channel.apply_bits(&m, t)?, &m))
            .collect::<Result<_>>()?,
        (TrialSource::Images(images), false) => images
            .par_iter()
            .enumerate()
            .map(|(t, x)| {
                let marked = embed(x, key, &m)?;
                let received = channel.apply_image(&marked, t as u64)?;
                match_bits(&extract(&received, key)?, &m)
            })
            .collect::<Result<_>>()?,
        (TrialSource::Count(_), false) => {
            return Err(invalid("image channels need an image corpus"));
        }
    };

    let n = scores.len() as u64;
    let bit_accuracy = scores.iter().sum::<usize>() as f64 / (n as f64 * k as f64);
    let mut report = ExperimentReport::new(
        "detection",
        seed,
        json!({
            "codec": key.kind().to_string(),
            "k": k,
            "key_seed": key.seed(),
            "channel": channel,
            "target_fprs": target_fprs,
            "trials": n,
            "message": m.to_string(),
        }),
    );
    for (&target_fpr, &tau) in target_fprs.iter().zip(&taus) {
        let hits = scores.iter().filter(|&&s| s >= tau).count() as u64;
        report.detection.push(DetectionRow {
            transform: channel.label(),
            target_fpr,
            tau,
            fpr_theoretical: fpr_of_threshold(k, tau, TailConvention::Ge)?,
            tpr: hits as f64 / n as f64,
            tpr_ci: wilson95(hits, n),
            bit_accuracy,
            samples: n,
        });
    }
    report.wall_clock_s = start.elapsed().as_secs_f64();
    Ok(report)
}
