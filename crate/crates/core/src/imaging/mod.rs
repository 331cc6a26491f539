//! Pixel-domain foundation: RGB buffers in `[0, 1]`, quality metrics, the
//! edit channel used for robustness evaluation, and image file I/O.

mod filter;
mod io;
mod jnd;
pub(crate) mod jpeg;
mod metrics;
mod plane;
pub mod resample;
mod text;
mod transform;

pub use filter::{
    gaussian_kernel, lowpass_normalized, lowpass_normalized_adjoint, separable_filter,
};
pub use io::{read_image, write_image};
pub use jnd::{jnd_mask, JndParams};
pub use jpeg::{jpeg_quant_tables, jpeg_roundtrip, JPEG_CHROMA_BASE, JPEG_LUMA_BASE};
pub use metrics::{mse, psnr, ssim};
pub use plane::Plane;
pub use transform::{apply_transform, combined_attack, scaled_side, TransformSpec};

use crate::error::{invalid, Result};

/// Smallest side length any buffer may have.
pub const MIN_SIDE: usize = 8;

/// BT.601 luma weights.
pub const LUMA_WEIGHTS: [f64; 3] = [0.299, 0.587, 0.114];

/// An RGB image with channel values in `[0, 1]`, stored row-major and
/// channel-interleaved.
#[derive(Clone, PartialEq, Debug)]
pub struct ImageBuffer {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl ImageBuffer {
    /// Wraps interleaved RGB data, clamping every value into `[0, 1]`.
    pub fn from_data(height: usize, width: usize, mut data: Vec<f64>) -> Result<Self> {
        if height < MIN_SIDE || width < MIN_SIDE {
            return Err(invalid(format!(
                "image {height}x{width} is smaller than {MIN_SIDE}x{MIN_SIDE}"
            )));
        }
        if data.len() != height * width * 3 {
            return Err(invalid(format!(
                "expected {} channel values, got {}",
                height * width * 3,
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(invalid("non-finite pixel value"));
        }
        for v in &mut data {
            *v = v.clamp(0.0, 1.0);
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, rgb: [f64; 3]) -> Result<Self> {
        let data = (0..height * width).flat_map(|_| rgb).collect();
        Self::from_data(height, width, data)
    }

    /// Builds an image from three planes of equal size.
    pub fn from_planes(planes: [&Plane; 3]) -> Result<Self> {
        let (h, w) = (planes[0].height(), planes[0].width());
        if planes.iter().any(|p| p.height() != h || p.width() != w) {
            return Err(invalid("channel planes differ in size"));
        }
        let mut data = Vec::with_capacity(h * w * 3);
        for i in 0..h * w {
            for p in &planes {
                data.push(p.data()[i]);
            }
        }
        Self::from_data(h, w, data)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn pixel(&self, row: usize, col: usize) -> [f64; 3] {
        let i = (row * self.width + col) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    /// Applies `f` to every channel value and clamps the result.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&v| f(v).clamp(0.0, 1.0)).collect(),
        }
    }

    pub fn channel(&self, c: usize) -> Plane {
        let data = self.data.iter().skip(c).step_by(3).copied().collect();
        Plane::new(self.height, self.width, data)
    }

    pub fn channels(&self) -> [Plane; 3] {
        [self.channel(0), self.channel(1), self.channel(2)]
    }

    /// BT.601 luminance.
    pub fn luminance(&self) -> Plane {
        let data = self
            .data
            .chunks_exact(3)
            .map(|p| LUMA_WEIGHTS[0] * p[0] + LUMA_WEIGHTS[1] * p[1] + LUMA_WEIGHTS[2] * p[2])
            .collect();
        Plane::new(self.height, self.width, data)
    }

    /// Adds the same per-pixel offset to all three channels, then clamps.
    /// Luminance moves by exactly the offset wherever no channel clips.
    pub fn add_gray(&self, offset: &Plane) -> Result<Self> {
        if offset.height() != self.height || offset.width() != self.width {
            return Err(invalid("offset plane does not match image size"));
        }
        let data = self
            .data
            .chunks_exact(3)
            .zip(offset.data())
            .flat_map(|(p, &d)| [p[0] + d, p[1] + d, p[2] + d])
            .map(|v| v.clamp(0.0, 1.0))
            .collect();
        Ok(Self {
            height: self.height,
            width: self.width,
            data,
        })
    }

    pub fn crop(&self, top: usize, left: usize, height: usize, width: usize) -> Result<Self> {
        if top + height > self.height || left + width > self.width {
            return Err(invalid("crop window exceeds image bounds"));
        }
        let mut data = Vec::with_capacity(height * width * 3);
        for r in top..top + height {
            let start = (r * self.width + left) * 3;
            data.extend_from_slice(&self.data[start..start + width * 3]);
        }
        Self::from_data(height, width, data)
    }

    /// Rotates 90 degrees counter-clockwise.
    pub fn rotate90(&self) -> Self {
        let (h, w) = (self.height, self.width);
        let mut data = vec![0.0; h * w * 3];
        for r in 0..w {
            for c in 0..h {
                // Output (r, c) comes from input (c, w - 1 - r).
                let src = (c * w + (w - 1 - r)) * 3;
                let dst = (r * h + c) * 3;
                data[dst..dst + 3].copy_from_slice(&self.data[src..src + 3]);
            }
        }
        Self {
            height: w,
            width: h,
            data,
        }
    }

    /// Rounds every channel to the nearest 8-bit level.
    pub fn quantize_8bit(&self) -> Self {
        self.map(|v| (v * 255.0).round() / 255.0)
    }
}
