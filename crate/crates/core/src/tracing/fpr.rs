use std::time::Instant;

use rand::Rng;
use rayon::prelude::*;
use serde_json::json;

use super::derived_rng;
use super::report::{wilson95, ExperimentReport, FprRow};
use crate::bitstats::{fpr_of_threshold, match_packed, TailConvention};
use crate::codecs::{extract, CodecKey};
use crate::error::{invalid, Result};
use crate::imaging::ImageBuffer;

const PURPOSE_KEYS: u64 = 0xF0;
const PURPOSE_SYNTHETIC: u64 = 0xF1;
const CHUNK: u64 = 4096;

/// Smallest accepted number of trials.
pub const MIN_FPR_TRIALS: u64 = 10_000;

/// Origin of the vanilla (unmarked) messages.
#[derive(Debug, Clone, Copy)]
pub enum FprSource<'a> {
    /// Fair-coin bits.
    Synthetic,
    /// Bits extracted from unmarked images.
    Extractor {
        key: &'a CodecKey,
        corpus: &'a [ImageBuffer],
    },
}

fn random_packed<R: Rng>(k: usize, rng: &mut R) -> Vec<u64> {
    let mut words: Vec<u64> = (0..k.div_ceil(64)).map(|_| rng.random()).collect();
    if !k.is_multiple_of(64) {
        *words.last_mut().expect("k > 0") &= (1u64 << (k % 64)) - 1;
    }
    words
}

/// Compares the rate at which vanilla messages reach each `tau` against a
/// fixed random signature with the closed-form FPR.
///
/// In extractor mode each image is decoded once and compared against
/// `ceil(n_trials / corpus size)` random signatures, so the trial count is
/// rounded up to a multiple of the corpus size.
pub fn validate_fpr_empirical(
    k: usize,
    taus: &[usize],
    n_trials: u64,
    source: FprSource<'_>,
    seed: u64,
) -> Result<ExperimentReport> {
    let start = Instant::now();
    if n_trials < MIN_FPR_TRIALS {
        return Err(invalid(format!(
            "need at least {MIN_FPR_TRIALS} trials, got {n_trials}"
        )));
    }
    if k == 0 {
        return Err(invalid("k must be positive"));
    }
    if let Some(&t) = taus.iter().find(|&&t| t > k) {
        return Err(invalid(format!("tau {t} exceeds k = {k}")));
    }
    // histogram[s] = number of trials scoring exactly s.
    let (histogram, trials, source_label) = match source {
        FprSource::Synthetic => {
            let key = random_packed(k, &mut derived_rng(seed, PURPOSE_KEYS, 0));
            let chunks = n_trials.div_ceil(CHUNK);
            let histogram = (0..chunks)
                .into_par_iter()
                .map(|c| {
                    let mut rng = derived_rng(seed, PURPOSE_SYNTHETIC, c);
                    let mut h = vec![0u64; k + 1];
                    for _ in 0..CHUNK.min(n_trials - c * CHUNK) {
                        h[match_packed(&random_packed(k, &mut rng), &key, k)] += 1;
                    }
                    h
                })
                .reduce(|| vec![0u64; k + 1], add_histograms);
            (histogram, n_trials, "synthetic".to_string())
        }
        FprSource::Extractor { key, corpus } => {
            if corpus.is_empty() {
                return Err(invalid("extractor mode needs a non-empty corpus"));
            }
            if key.k() != k {
                return Err(invalid(format!(
                    "codec key has k = {}, requested k = {k}",
                    key.k()
                )));
            }
            let per_image = n_trials.div_ceil(corpus.len() as u64);
            let signatures: Vec<Vec<u64>> = (0..per_image)
                .map(|i| random_packed(k, &mut derived_rng(seed, PURPOSE_KEYS, i)))
                .collect();
            let histogram = corpus
                .par_iter()
                .map(|x| {
                    let decoded = extract(x, key)?.packed();
                    let mut h = vec![0u64; k + 1];
                    for sig in &signatures {
                        h[match_packed(&decoded, sig, k)] += 1;
                    }
                    Ok(h)
                })
                .collect::<Result<Vec<_>>>()?
                .into_iter()
                .fold(vec![0u64; k + 1], add_histograms);
            (
                histogram,
                per_image * corpus.len() as u64,
                format!("extractor:{}", key.kind()),
            )
        }
    };

    let mut report = ExperimentReport::new(
        "validate-fpr",
        seed,
        json!({ "k": k, "taus": taus, "n_trials": trials, "source": source_label }),
    );
    for &tau in taus {
        let flagged: u64 = histogram[tau..].iter().sum();
        let theoretical = fpr_of_threshold(k, tau, TailConvention::Ge)?;
        let empirical = flagged as f64 / trials as f64;
        report.fpr_validation.push(FprRow {
            tau,
            fpr_theoretical: theoretical,
            empirical,
            ratio: empirical / theoretical,
            ci: wilson95(flagged, trials),
            flagged,
            trials,
            expected_count: theoretical * trials as f64,
        });
    }
    report.wall_clock_s = start.elapsed().as_secs_f64();
    Ok(report)
}

fn add_histograms(mut a: Vec<u64>, b: Vec<u64>) -> Vec<u64> {
    a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
    a
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tau_zero_always_flags_and_tau_k_rarely() {
        let r = validate_fpr_empirical(16, &[0, 16], 20_000, FprSource::Synthetic, 1).unwrap();
        assert_eq!(r.fpr_validation[0].empirical, 1.0);
        assert_eq!(r.fpr_validation[0].fpr_theoretical, 1.0);
        assert!(r.fpr_validation[1].flagged <= 5);
        r.validate().unwrap();
    }

    #[test]
    fn packed_masking() {
        let mut rng = derived_rng(0, 0, 0);
        for k in [1, 16, 63, 64, 65, 100] {
            let w = random_packed(k, &mut rng);
            assert_eq!(w.len(), k.div_ceil(64));
            let ones: u32 = w.iter().map(|x| x.count_ones()).sum();
            assert!(ones as usize <= k);
            assert_eq!(match_packed(&w, &w, k), k);
        }
    }

    #[test]
    fn argument_checks() {
        assert!(validate_fpr_empirical(16, &[12], 100, FprSource::Synthetic, 1).is_err());
        assert!(validate_fpr_empirical(16, &[17], 20_000, FprSource::Synthetic, 1).is_err());
        let key = crate::codecs::keygen(
            crate::codecs::CodecKind::Spreadspectrum,
            16,
            1,
            Default::default(),
        )
        .unwrap();
        let empty: [ImageBuffer; 0] = [];
        let src = FprSource::Extractor {
            key: &key,
            corpus: &empty,
        };
        assert!(validate_fpr_empirical(16, &[12], 20_000, src, 1).is_err());
    }

    #[test]
    fn schedule_independent() {
        let a = validate_fpr_empirical(20, &[14], 50_000, FprSource::Synthetic, 8).unwrap();
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(3)
            .build()
            .unwrap();
        let b = pool.install(|| {
            validate_fpr_empirical(20, &[14], 50_000, FprSource::Synthetic, 8).unwrap()
        });
        assert_eq!(a.fpr_validation, b.fpr_validation);
    }
}
