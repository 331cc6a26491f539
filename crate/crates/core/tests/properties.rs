use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use wmtrace::bitstats::{fpr_of_threshold, BitMessage, TailConvention};
use wmtrace::codecs::{
    embed, extract, extract_ss_in_frame, keygen, CodecKind, KeyParams, SyncFrame, SYNC_AREA_RATIOS,
};
use wmtrace::corpus::seed_image;
use wmtrace::imaging::ImageBuffer;
use wmtrace::tracing::{
    run_collusion_experiment, run_identification_experiment, validate_fpr_empirical, ChannelModel,
    CollusionConfig, FprSource, IdentificationConfig,
};

fn mix(a: &ImageBuffer, b: &ImageBuffer, t: f64) -> ImageBuffer {
    let data = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(u, v)| t * u + (1.0 - t) * v)
        .collect();
    ImageBuffer::from_data(a.height(), a.width(), data).unwrap()
}

fn id_config(n_users: usize, n_decoys: usize, seed: u64) -> IdentificationConfig {
    IdentificationConfig {
        n_users,
        n_decoys,
        images_per_user: 20,
        target_fpr: 1e-6,
        k: 48,
        seed,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn soft_extraction_is_affine(
        seeds in (0u64..1000, 0u64..1000),
        t in 0.0f64..=1.0,
        frame in 0usize..SYNC_AREA_RATIOS.len(),
        side in 64usize..160,
    ) {
        let key = keygen(CodecKind::Spreadspectrum, 48, seeds.0, KeyParams::default()).unwrap();
        let a = seed_image(seeds.0, side, side + 7);
        let b = seed_image(seeds.1 + 1000, side, side + 7);
        let frame = SyncFrame { area_ratio: SYNC_AREA_RATIOS[frame] };
        let sa = extract_ss_in_frame(&a, &key, frame).unwrap();
        let sb = extract_ss_in_frame(&b, &key, frame).unwrap();
        let sm = extract_ss_in_frame(&mix(&a, &b, t), &key, frame).unwrap();
        for j in 0..48 {
            let want = t * sa.values[j] + (1.0 - t) * sb.values[j];
            prop_assert!((sm.values[j] - want).abs() <= 1e-9 * (1.0 + want.abs()));
        }
    }

    #[test]
    fn both_codecs_roundtrip(image_seed in 0u64..10_000, key_seed: u64, message_seed: u64) {
        let x = seed_image(image_seed, 256, 256);
        let m = BitMessage::random(48, &mut ChaCha8Rng::seed_from_u64(message_seed));
        for kind in [CodecKind::Dctdwt, CodecKind::Spreadspectrum] {
            let key = keygen(kind, 48, key_seed, KeyParams::default()).unwrap();
            prop_assert_eq!(extract(&embed(&x, &key, &m).unwrap(), &key).unwrap(), m.clone());
        }
    }

    #[test]
    fn noiseless_identification_is_perfect(n_users in 1usize..40, n_decoys in 0usize..500, seed: u64) {
        let channel = ChannelModel::bsc(1.0, seed).unwrap();
        let r = run_identification_experiment(&id_config(n_users, n_decoys, seed), &channel, None).unwrap();
        r.validate().unwrap();
        let s = &r.identification[0];
        prop_assert_eq!(s.accuracy, 1.0);
        prop_assert_eq!(s.false_accusations, 0);
        prop_assert_eq!(s.trials, 20 * n_users as u64);
    }

    #[test]
    fn identification_is_reproducible(p in 0.5f64..=1.0, seed: u64) {
        let channel = ChannelModel::bsc(p, seed ^ 1).unwrap();
        let config = id_config(30, 30, seed);
        let a = run_identification_experiment(&config, &channel, None).unwrap();
        let b = run_identification_experiment(&config, &channel, None).unwrap();
        prop_assert_eq!(a.identification, b.identification);
    }

    #[test]
    fn collusion_frequencies_follow_the_channel(p in 0.5f64..=1.0, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = BitMessage::random(48, &mut rng);
        let b = BitMessage::random(48, &mut rng);
        let r = run_collusion_experiment(&a, &b, &CollusionConfig::new(p, 48_000, seed)).unwrap();
        r.validate().unwrap();
        let c = r.collusion.unwrap();
        let n_agree = (c.agree_positions as f64) * c.messages as f64;
        let n_disagree = (c.disagree_positions as f64) * c.messages as f64;
        if n_agree > 0.0 {
            let sd = (p * (1.0 - p) / n_agree).sqrt();
            prop_assert!((c.agree_match_frequency - p).abs() <= 5.0 * sd + 1e-12);
        }
        if n_disagree > 0.0 {
            prop_assert!((c.disagree_one_frequency - 0.5).abs() <= 5.0 * 0.5 / n_disagree.sqrt());
        }
    }

    #[test]
    fn synthetic_fpr_tracks_the_closed_form(k in 1usize..=24, tau_frac in 0.0f64..=1.0, seed: u64) {
        let tau = (tau_frac * k as f64).round() as usize;
        let r = validate_fpr_empirical(k, &[tau], 20_000, FprSource::Synthetic, seed).unwrap();
        let row = &r.fpr_validation[0];
        let f = fpr_of_threshold(k, tau, TailConvention::Ge).unwrap();
        prop_assert_eq!(row.fpr_theoretical, f);
        // Three counts of slack keep the far tail from flaking on a single event.
        let sd = (f * (1.0 - f) / 20_000.0).sqrt();
        prop_assert!((row.empirical - f).abs() <= 5.0 * sd + 3.0 / 20_000.0, "{:?}", row);
    }
}
