//! Watermark codecs.
//!
//! Two families share one key type:
//!
//! * `dctdwt`: quantization-index modulation of one mid-band DCT coefficient
//!   per 8x8 block of the Haar LL band of luminance, with round-robin bit
//!   assignment and majority-vote decoding.
//! * `spreadspectrum`: k band-limited carrier patterns in a canonical frame.
//!   Extraction correlates the high-passed luminance with every carrier, so
//!   the soft message is affine in the pixels for a fixed geometry. That
//!   gives exact gradients for loss-driven embedding and white-box attacks.

mod dctdwt;
mod key;
mod optimize;
mod spread;

pub use dctdwt::{dctdwt_capacity, embed_dctdwt, extract_dctdwt, DCTDWT_COEFF};
pub use key::{keygen, CodecKey, CodecKind, KeyParams, KEY_FILE_VERSION};
pub use optimize::{
    adversarial_forge, adversarial_remove, bce_message_loss, embed_ss_iterative, AttackOutcome,
    IterativeParams,
};
pub use spread::{
    embed_ss_additive, extract_ss, extract_ss_in_frame, extract_ss_unwhitened, soft_gradient,
    SoftMessage, SyncFrame, SYNC_AREA_RATIOS,
};

use crate::bitstats::BitMessage;
use crate::error::Result;
use crate::imaging::ImageBuffer;

/// Embeds with the codec named by the key (additive embedding for
/// spread spectrum).
pub fn embed(x: &ImageBuffer, key: &CodecKey, m: &BitMessage) -> Result<ImageBuffer> {
    match key.kind() {
        CodecKind::Dctdwt => embed_dctdwt(x, key, m),
        CodecKind::Spreadspectrum => embed_ss_additive(x, key, m),
    }
}

/// Extracts hard bits with the codec named by the key.
pub fn extract(x: &ImageBuffer, key: &CodecKey) -> Result<BitMessage> {
    match key.kind() {
        CodecKind::Dctdwt => extract_dctdwt(x, key),
        CodecKind::Spreadspectrum => Ok(extract_ss(x, key)?.1),
    }
}
