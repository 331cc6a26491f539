use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::derived_rng;
use crate::bitstats::BitMessage;
use crate::error::{invalid, Result};
use crate::imaging::{apply_transform, ImageBuffer, TransformSpec};

const PURPOSE_BSC: u64 = 0xB5C;
const PURPOSE_IMAGE: u64 = 0x1A6E;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum ChannelMode {
    /// Pixels go through an image transform, bits come from the extractor.
    Image { transform: TransformSpec },
    /// Each bit survives independently with probability `bit_accuracy`.
    Bsc { bit_accuracy: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelModel {
    pub mode: ChannelMode,
    pub seed: u64,
}

impl ChannelModel {
    pub fn image(transform: TransformSpec, seed: u64) -> Result<Self> {
        transform.validate()?;
        Ok(Self {
            mode: ChannelMode::Image { transform },
            seed,
        })
    }

    pub fn bsc(bit_accuracy: f64, seed: u64) -> Result<Self> {
        let model = Self {
            mode: ChannelMode::Bsc { bit_accuracy },
            seed,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<()> {
        match &self.mode {
            ChannelMode::Image { transform } => transform.validate(),
            ChannelMode::Bsc { bit_accuracy } => {
                if (0.5..=1.0).contains(bit_accuracy) {
                    Ok(())
                } else {
                    Err(invalid(format!(
                        "bsc bit accuracy {bit_accuracy} outside [0.5, 1]"
                    )))
                }
            }
        }
    }

    pub fn is_bsc(&self) -> bool {
        matches!(self.mode, ChannelMode::Bsc { .. })
    }

    /// Passes a message through the bit channel for trial `trial`.
    pub fn apply_bits(&self, m: &BitMessage, trial: u64) -> Result<BitMessage> {
        let ChannelMode::Bsc { bit_accuracy } = self.mode else {
            return Err(invalid("image channels act on pixels, not bits"));
        };
        let mut rng = derived_rng(self.seed, PURPOSE_BSC, trial);
        let flips: Vec<usize> = (0..m.len())
            .filter(|_| rng.random::<f64>() >= bit_accuracy)
            .collect();
        Ok(m.with_flips(&flips))
    }

    /// Passes an image through the pixel channel for trial `trial`.
    pub fn apply_image(&self, x: &ImageBuffer, trial: u64) -> Result<ImageBuffer> {
        let ChannelMode::Image { transform } = &self.mode else {
            return Err(invalid("bsc channels act on bits, not pixels"));
        };
        let seed = derived_rng(self.seed, PURPOSE_IMAGE, trial).random();
        apply_transform(x, transform, seed)
    }

    /// Short label used in report rows.
    pub fn label(&self) -> String {
        self.to_string()
    }
}

impl fmt::Display for ChannelModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.mode {
            ChannelMode::Image { transform } => write!(f, "{transform}"),
            ChannelMode::Bsc { bit_accuracy } => write!(f, "bsc:{bit_accuracy}"),
        }
    }
}
