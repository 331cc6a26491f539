//! Separable bicubic (Catmull-Rom) resampling with area-scaled support when
//! shrinking, expressed as sparse per-axis weight tables so the adjoint is
//! available for gradient computations.

use super::Plane;

fn catmull_rom(x: f64) -> f64 {
    const A: f64 = -0.5;
    let x = x.abs();
    if x < 1.0 {
        ((A + 2.0) * x - (A + 3.0)) * x * x + 1.0
    } else if x < 2.0 {
        (((x - 5.0) * x + 8.0) * x - 4.0) * A
    } else {
        0.0
    }
}

/// Interpolation taps for one axis.
#[derive(Clone, Debug)]
pub struct AxisWeights {
    in_len: usize,
    taps: Vec<(usize, Vec<f64>)>,
    valid: Vec<bool>,
}

impl AxisWeights {
    /// Output sample `i` is centred at source coordinate
    /// `(i + 0.5) * step + offset` (pixel-edge convention). Samples whose
    /// centre falls outside `[0, in_len]` get no taps and are marked invalid.
    pub fn new(in_len: usize, out_len: usize, step: f64, offset: f64) -> Self {
        let filter_scale = step.max(1.0);
        let support = 2.0 * filter_scale;
        let mut taps = Vec::with_capacity(out_len);
        let mut valid = Vec::with_capacity(out_len);
        for i in 0..out_len {
            let center = (i as f64 + 0.5) * step + offset;
            if !(0.0..=in_len as f64).contains(&center) {
                taps.push((0, Vec::new()));
                valid.push(false);
                continue;
            }
            let lo = ((center - support).floor().max(0.0)) as usize;
            let hi = ((center + support).ceil() as usize).min(in_len);
            let mut w: Vec<f64> = (lo..hi)
                .map(|j| catmull_rom((j as f64 + 0.5 - center) / filter_scale))
                .collect();
            let total: f64 = w.iter().sum();
            for v in &mut w {
                *v /= total;
            }
            taps.push((lo, w));
            valid.push(true);
        }
        Self {
            in_len,
            taps,
            valid,
        }
    }

    /// Plain resize of `in_len` samples onto `out_len`.
    pub fn resize(in_len: usize, out_len: usize) -> Self {
        Self::new(in_len, out_len, in_len as f64 / out_len as f64, 0.0)
    }

    pub fn out_len(&self) -> usize {
        self.taps.len()
    }

    pub fn in_len(&self) -> usize {
        self.in_len
    }

    pub fn valid(&self) -> &[bool] {
        &self.valid
    }

    fn apply_line(&self, src: &[f64], dst: &mut [f64]) {
        for ((start, w), d) in self.taps.iter().zip(dst.iter_mut()) {
            *d = w.iter().zip(&src[*start..]).map(|(a, b)| a * b).sum();
        }
    }

    fn apply_line_adjoint(&self, grad: &[f64], dst: &mut [f64]) {
        dst.fill(0.0);
        for ((start, w), &g) in self.taps.iter().zip(grad) {
            for (d, a) in dst[*start..].iter_mut().zip(w) {
                *d += a * g;
            }
        }
    }
}

/// Resamples a plane: `rows` maps the vertical axis, `cols` the horizontal.
pub fn resample(input: &Plane, rows: &AxisWeights, cols: &AxisWeights) -> Plane {
    assert_eq!(rows.in_len(), input.height());
    assert_eq!(cols.in_len(), input.width());
    let (h, w) = (input.height(), input.width());
    let ow = cols.out_len();
    let mut horiz = vec![0.0; h * ow];
    for r in 0..h {
        cols.apply_line(
            &input.data()[r * w..(r + 1) * w],
            &mut horiz[r * ow..(r + 1) * ow],
        );
    }
    let horiz = Plane::new(h, ow, horiz).transpose();
    let oh = rows.out_len();
    let mut vert = vec![0.0; ow * oh];
    for c in 0..ow {
        rows.apply_line(
            &horiz.data()[c * h..(c + 1) * h],
            &mut vert[c * oh..(c + 1) * oh],
        );
    }
    Plane::new(ow, oh, vert).transpose()
}

/// Adjoint of [`resample`] with the same weight tables.
pub fn resample_adjoint(grad: &Plane, rows: &AxisWeights, cols: &AxisWeights) -> Plane {
    let (oh, ow) = (grad.height(), grad.width());
    let (h, w) = (rows.in_len(), cols.in_len());
    let gt = grad.transpose();
    let mut vert = vec![0.0; ow * h];
    for c in 0..ow {
        rows.apply_line_adjoint(
            &gt.data()[c * oh..(c + 1) * oh],
            &mut vert[c * h..(c + 1) * h],
        );
    }
    let vert = Plane::new(ow, h, vert).transpose();
    let mut out = vec![0.0; h * w];
    for r in 0..h {
        cols.apply_line_adjoint(
            &vert.data()[r * ow..(r + 1) * ow],
            &mut out[r * w..(r + 1) * w],
        );
    }
    Plane::new(h, w, out)
}

/// Plain bicubic resize of one plane.
pub fn resize_plane(input: &Plane, height: usize, width: usize) -> Plane {
    resample(
        input,
        &AxisWeights::resize(input.height(), height),
        &AxisWeights::resize(input.width(), width),
    )
}
