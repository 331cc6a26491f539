use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::report::{wilson95, ExperimentReport, IdentificationSummary};
use super::{derived_rng, ChannelModel};
use crate::bitstats::{match_packed, threshold_for_fpr, BitMessage};
use crate::codecs::{embed, extract, CodecKey};
use crate::error::{invalid, Result};
use crate::imaging::ImageBuffer;

const PURPOSE_USERS: u64 = 0x1D;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentificationConfig {
    pub n_users: usize,
    /// Extra random signatures that only compete in the attribution.
    pub n_decoys: usize,
    pub images_per_user: usize,
    pub target_fpr: f64,
    pub k: usize,
    pub seed: u64,
}

#[derive(Clone, Copy)]
enum Outcome {
    Correct,
    Miss,
    FalseAccusation,
}

/// Attributes every trial among `n_users + n_decoys` random signatures
/// with the threshold that holds the global FPR at `target_fpr`.
///
/// Bit channels need no images. Image channels embed each user's
/// signature with `codec.0` into images cycled from `codec.1`.
pub fn run_identification_experiment(
    config: &IdentificationConfig,
    channel: &ChannelModel,
    codec: Option<(&CodecKey, &[ImageBuffer])>,
) -> Result<ExperimentReport> {
    run_identification_sweep(config, std::slice::from_ref(channel), codec)
}

/// Same as [`run_identification_experiment`] over several channels, with
/// one summary per channel plus the trial-weighted overall accuracy.
pub fn run_identification_sweep(
    config: &IdentificationConfig,
    channels: &[ChannelModel],
    codec: Option<(&CodecKey, &[ImageBuffer])>,
) -> Result<ExperimentReport> {
    let start = Instant::now();
    if config.n_users == 0 {
        return Err(invalid("identification needs at least one user"));
    }
    if config.images_per_user == 0 {
        return Err(invalid("images_per_user must be positive"));
    }
    if channels.is_empty() {
        return Err(invalid("at least one channel is required"));
    }
    let n_total = config.n_users + config.n_decoys;
    let k = config.k;
    let tau = threshold_for_fpr(k, config.target_fpr, n_total)?;
    let signatures: Vec<BitMessage> = (0..n_total)
        .map(|i| BitMessage::random(k, &mut derived_rng(config.seed, PURPOSE_USERS, i as u64)))
        .collect();
    let packed: Vec<Vec<u64>> = signatures.iter().map(BitMessage::packed).collect();

    let mut report = ExperimentReport::new(
        "identification",
        config.seed,
        json!({
            "config": config,
            "channels": channels,
            "codec": codec.map(|(key, images)| json!({
                "kind": key.kind().to_string(),
                "key_seed": key.seed(),
                "corpus_size": images.len(),
            })),
        }),
    );
    let (mut correct_all, mut trials_all) = (0u64, 0u64);
    for channel in channels {
        channel.validate()?;
        if !channel.is_bsc() {
            let (key, images) =
                codec.ok_or_else(|| invalid("image channels need a codec key and corpus"))?;
            if images.is_empty() {
                return Err(invalid("image channels need a non-empty corpus"));
            }
            if key.k() != k {
                return Err(invalid(format!(
                    "codec key has k = {}, experiment uses k = {k}",
                    key.k()
                )));
            }
        }
        let trials = (config.n_users * config.images_per_user) as u64;
        let results: Vec<(Outcome, usize)> = (0..trials)
            .into_par_iter()
            .map(|t| {
                let user = (t / config.images_per_user as u64) as usize;
                let sent = &signatures[user];
                let received = match codec {
                    Some((key, images)) if !channel.is_bsc() => {
                        let x = &images[t as usize % images.len()];
                        let marked = embed(x, key, sent)?;
                        extract(&channel.apply_image(&marked, t)?, key)?
                    }
                    _ => channel.apply_bits(sent, t)?,
                };
                let rx = received.packed();
                let own = match_packed(&rx, &packed[user], k);
                // Lowest index wins ties.
                let mut best = (0usize, 0usize);
                for (i, sig) in packed.iter().enumerate() {
                    let s = match_packed(&rx, sig, k);
                    if i == 0 || s > best.1 {
                        best = (i, s);
                    }
                }
                let outcome = if best.1 < tau {
                    Outcome::Miss
                } else if best.0 == user {
                    Outcome::Correct
                } else {
                    Outcome::FalseAccusation
                };
                Ok((outcome, own))
            })
            .collect::<Result<_>>()?;
        let count = |f: fn(&Outcome) -> bool| results.iter().filter(|(o, _)| f(o)).count() as u64;
        let correct = count(|o| matches!(o, Outcome::Correct));
        let misses = count(|o| matches!(o, Outcome::Miss));
        let false_acc = count(|o| matches!(o, Outcome::FalseAccusation));
        let bits: usize = results.iter().map(|(_, s)| s).sum();
        correct_all += correct;
        trials_all += trials;
        report.identification.push(IdentificationSummary {
            channel: channel.label(),
            k,
            n_users: config.n_users,
            n_decoys: config.n_decoys,
            target_fpr: config.target_fpr,
            tau,
            trials,
            accuracy: correct as f64 / trials as f64,
            accuracy_ci: wilson95(correct, trials),
            miss_rate: misses as f64 / trials as f64,
            false_accusations: false_acc,
            false_accusation_rate: false_acc as f64 / trials as f64,
            bit_accuracy: bits as f64 / (trials as f64 * k as f64),
        });
    }
    report.overall_identification_accuracy = Some(correct_all as f64 / trials_all as f64);
    report.wall_clock_s = start.elapsed().as_secs_f64();
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config(n_users: usize, n_decoys: usize, per_user: usize) -> IdentificationConfig {
        IdentificationConfig {
            n_users,
            n_decoys,
            images_per_user: per_user,
            target_fpr: 1e-6,
            k: 48,
            seed: 11,
        }
    }

    #[test]
    fn single_user_perfect_channel() {
        let ch = ChannelModel::bsc(1.0, 1).unwrap();
        let r = run_identification_experiment(&config(1, 0, 50), &ch, None).unwrap();
        let s = &r.identification[0];
        assert_eq!(s.accuracy, 1.0);
        assert_eq!(s.false_accusations, 0);
        assert_eq!(s.tau, 41);
        r.validate().unwrap();
    }

    #[test]
    fn null_channel_accuses_nobody() {
        let ch = ChannelModel::bsc(0.5, 1).unwrap();
        let r = run_identification_experiment(&config(20, 100, 20), &ch, None).unwrap();
        let s = &r.identification[0];
        assert_eq!(s.accuracy, 0.0);
        assert_eq!(s.false_accusations, 0);
        assert_eq!(s.miss_rate, 1.0);
    }

    #[test]
    fn image_channel_requires_codec() {
        let ch = ChannelModel::image(crate::imaging::TransformSpec::Identity, 0).unwrap();
        assert!(run_identification_experiment(&config(2, 0, 1), &ch, None).is_err());
        assert!(run_identification_experiment(
            &config(0, 5, 1),
            &ChannelModel::bsc(0.9, 0).unwrap(),
            None
        )
        .is_err());
    }

    #[test]
    fn sweep_reports_each_channel_and_overall() {
        let chans = [
            ChannelModel::bsc(1.0, 0).unwrap(),
            ChannelModel::bsc(0.5, 0).unwrap(),
        ];
        let r = run_identification_sweep(&config(10, 0, 10), &chans, None).unwrap();
        assert_eq!(r.identification.len(), 2);
        assert_eq!(r.overall_identification_accuracy, Some(0.5));
    }
}
