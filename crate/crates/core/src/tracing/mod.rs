//! Monte-Carlo experiments for detection, identification, collusion, FPR
//! validation and robustness, and the reports they produce.
//!
//! Trials draw their randomness from a generator derived from
//! `(seed, purpose, index)`, so results do not depend on how work is split
//! across threads.

mod channel;
mod collusion;
mod detection;
mod fpr;
mod identification;
mod report;
mod robustness;

pub use channel::{ChannelMode, ChannelModel};
pub use collusion::{run_collusion_experiment, CollusionConfig, DEFAULT_MESSAGES_PER_TRIAL};
pub use detection::run_detection_experiment;
pub use fpr::{validate_fpr_empirical, FprSource, MIN_FPR_TRIALS};
pub use identification::{
    run_identification_experiment, run_identification_sweep, IdentificationConfig,
};
pub use report::{
    wilson_interval, CollusionSummary, DetectionRow, ExperimentReport, FprRow,
    IdentificationSummary, Interval, RobustnessRow, RobustnessSummary,
};
pub use robustness::robustness_table;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::imaging::ImageBuffer;

/// Where the trials of an experiment come from.
#[derive(Debug, Clone, Copy)]
pub enum TrialSource<'a> {
    /// One trial per image.
    Images(&'a [ImageBuffer]),
    /// A number of image-free trials; only meaningful for bit channels.
    Count(usize),
}

impl TrialSource<'_> {
    pub fn len(&self) -> usize {
        match self {
            TrialSource::Images(images) => images.len(),
            TrialSource::Count(n) => *n,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Independent generator for trial `index` of the stream named `purpose`.
pub fn derived_rng(seed: u64, purpose: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ purpose.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    rng.set_stream(index);
    rng
}
