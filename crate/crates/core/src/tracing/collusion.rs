use std::time::Instant;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::derived_rng;
use super::report::{wilson95, CollusionSummary, ExperimentReport};
use crate::bitstats::{match_bits, BitMessage};
use crate::error::{invalid, Result};

const PURPOSE_COLLUSION: u64 = 0xC011;

/// Decoded messages pooled into one accusation trial.
pub const DEFAULT_MESSAGES_PER_TRIAL: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CollusionConfig {
    /// Bit accuracy at positions where the colluders' signatures agree.
    pub p: f64,
    pub n_bits_total: u64,
    pub messages_per_trial: usize,
    pub seed: u64,
}

impl CollusionConfig {
    pub fn new(p: f64, n_bits_total: u64, seed: u64) -> Self {
        Self {
            p,
            n_bits_total,
            messages_per_trial: DEFAULT_MESSAGES_PER_TRIAL,
            seed,
        }
    }
}

struct TrialTally {
    agree_match: u64,
    disagree_ones: u64,
    score_i: usize,
    score_j: usize,
    score_innocent: usize,
    messages: usize,
}

/// Simulates images from a model averaged between two signatures: agreeing
/// positions decode to the shared bit with probability `p`, disagreeing
/// positions decode to a fair coin.
///
/// The `n_bits_total / k` decoded messages are split into trials of
/// `messages_per_trial`. In each trial a fresh random innocent signature is
/// drawn and every signature is scored by its mean match over the trial's
/// messages.
pub fn run_collusion_experiment(
    key_i: &BitMessage,
    key_j: &BitMessage,
    config: &CollusionConfig,
) -> Result<ExperimentReport> {
    let start = Instant::now();
    let k = key_i.len();
    if key_j.len() != k {
        return Err(invalid("colluding signatures must have equal length"));
    }
    if !(0.0..=1.0).contains(&config.p) {
        return Err(invalid(format!("bit accuracy {} outside [0, 1]", config.p)));
    }
    if config.n_bits_total < k as u64 {
        return Err(invalid("n_bits_total must cover at least one message"));
    }
    if config.messages_per_trial == 0 {
        return Err(invalid("messages_per_trial must be positive"));
    }
    let messages = config.n_bits_total.div_ceil(k as u64);
    let per_trial = config.messages_per_trial.min(messages as usize);
    let trials = messages / per_trial as u64;
    let agree: Vec<bool> = key_i
        .bits()
        .iter()
        .zip(key_j.bits())
        .map(|(a, b)| a == b)
        .collect();
    let n_agree = agree.iter().filter(|a| **a).count();

    let tallies: Vec<TrialTally> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = derived_rng(config.seed, PURPOSE_COLLUSION, t);
            let innocent = BitMessage::random(k, &mut rng);
            // Any trailing messages that do not fill a trial go to the last one.
            let count = if t + 1 == trials {
                (messages - t * per_trial as u64) as usize
            } else {
                per_trial
            };
            let mut tally = TrialTally {
                agree_match: 0,
                disagree_ones: 0,
                score_i: 0,
                score_j: 0,
                score_innocent: 0,
                messages: count,
            };
            for _ in 0..count {
                let bits: Vec<bool> = (0..k)
                    .map(|b| {
                        if agree[b] {
                            let keep = rng.random::<f64>() < config.p;
                            tally.agree_match += keep as u64;
                            key_i.get(b) == keep
                        } else {
                            let one = rng.random::<bool>();
                            tally.disagree_ones += one as u64;
                            one
                        }
                    })
                    .collect();
                let decoded = BitMessage::new(bits)?;
                tally.score_i += match_bits(&decoded, key_i)?;
                tally.score_j += match_bits(&decoded, key_j)?;
                tally.score_innocent += match_bits(&decoded, &innocent)?;
            }
            Ok(tally)
        })
        .collect::<Result<_>>()?;

    let sum = |f: fn(&TrialTally) -> u64| tallies.iter().map(f).sum::<u64>();
    let agree_match = sum(|t| t.agree_match);
    let disagree_ones = sum(|t| t.disagree_ones);
    // Both colluders outscore the innocent iff their summed scores do; the
    // trial's message count cancels.
    let outscored = tallies
        .iter()
        .filter(|t| t.score_i > t.score_innocent && t.score_j > t.score_innocent)
        .count() as u64;
    let n_disagree = k - n_agree;
    let agree_samples = n_agree as u64 * messages;
    let disagree_samples = n_disagree as u64 * messages;
    let mean =
        |f: fn(&TrialTally) -> usize| tallies.iter().map(f).sum::<usize>() as f64 / messages as f64;
    let ratio = |num: u64, den: u64| {
        if den == 0 {
            0.0
        } else {
            num as f64 / den as f64
        }
    };

    let mut report = ExperimentReport::new(
        "collusion",
        config.seed,
        json!({
            "key_i": key_i.to_string(),
            "key_j": key_j.to_string(),
            "config": config,
        }),
    );
    report.collusion = Some(CollusionSummary {
        k,
        p: config.p,
        n_bits_total: messages * k as u64,
        messages,
        messages_per_trial: per_trial,
        trials,
        agree_positions: n_agree,
        disagree_positions: n_disagree,
        agree_match_frequency: ratio(agree_match, agree_samples),
        disagree_one_frequency: ratio(disagree_ones, disagree_samples),
        disagree_one_ci: wilson95(disagree_ones, disagree_samples),
        mean_score_i: mean(|t| t.score_i),
        mean_score_j: mean(|t| t.score_j),
        mean_score_innocent: mean(|t| t.score_innocent),
        expected_score_colluder: n_agree as f64 * config.p + n_disagree as f64 / 2.0,
        expected_score_innocent: k as f64 / 2.0,
        colluders_outscore_rate: ratio(outscored, trials),
        colluders_outscore_ci: wilson95(outscored, trials),
    });
    debug_assert_eq!(
        tallies.iter().map(|t| t.messages as u64).sum::<u64>(),
        messages
    );
    report.wall_clock_s = start.elapsed().as_secs_f64();
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identical_keys_perfect_channel() {
        let m = BitMessage::random(48, &mut ChaCha8Rng::seed_from_u64(1));
        let r = run_collusion_experiment(&m, &m, &CollusionConfig::new(1.0, 4800, 3)).unwrap();
        let c = r.collusion.unwrap();
        assert_eq!(c.disagree_positions, 0);
        assert_eq!(c.mean_score_i, 48.0);
        assert_eq!(c.mean_score_j, 48.0);
        assert_eq!(c.agree_match_frequency, 1.0);
        assert_eq!(c.trials, 10);
    }

    #[test]
    fn complementary_keys_give_fair_coins() {
        let m = BitMessage::random(48, &mut ChaCha8Rng::seed_from_u64(2));
        let r =
            run_collusion_experiment(&m, &m.complement(), &CollusionConfig::new(0.9, 48_000, 4))
                .unwrap();
        let c = r.collusion.unwrap();
        assert_eq!(c.agree_positions, 0);
        assert!((c.disagree_one_frequency - 0.5).abs() < 0.02);
        assert!((c.mean_score_i - 24.0).abs() < 1.0);
    }

    #[test]
    fn argument_checks() {
        let a = BitMessage::random(48, &mut ChaCha8Rng::seed_from_u64(2));
        let b = BitMessage::random(16, &mut ChaCha8Rng::seed_from_u64(3));
        assert!(run_collusion_experiment(&a, &b, &CollusionConfig::new(0.9, 4800, 1)).is_err());
        assert!(run_collusion_experiment(&a, &a, &CollusionConfig::new(0.9, 10, 1)).is_err());
        assert!(run_collusion_experiment(&a, &a, &CollusionConfig::new(1.5, 4800, 1)).is_err());
    }

    #[test]
    fn leftover_messages_join_the_last_trial() {
        let a = BitMessage::random(8, &mut ChaCha8Rng::seed_from_u64(5));
        let mut cfg = CollusionConfig::new(0.9, 8 * 25, 1);
        cfg.messages_per_trial = 10;
        let c = run_collusion_experiment(&a, &a, &cfg)
            .unwrap()
            .collusion
            .unwrap();
        assert_eq!(c.messages, 25);
        assert_eq!(c.trials, 2);
    }
}
