use super::Plane;

/// Normalized 1-D Gaussian taps of length `2 * radius + 1`.
pub fn gaussian_kernel(radius: usize, sigma: f64) -> Vec<f64> {
    let taps: Vec<f64> = (0..=2 * radius)
        .map(|i| {
            let d = i as f64 - radius as f64;
            (-d * d / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let total: f64 = taps.iter().sum();
    taps.into_iter().map(|t| t / total).collect()
}

/// Separable correlation with a symmetric odd-length kernel, zero padding,
/// same-size output. Self-adjoint.
pub fn separable_filter(input: &Plane, kernel: &[f64]) -> Plane {
    let (h, w) = (input.height(), input.width());
    let r = kernel.len() / 2;
    let src = input.data();
    let mut tmp = vec![0.0; h * w];
    for row in 0..h {
        let line = &src[row * w..(row + 1) * w];
        let out = &mut tmp[row * w..(row + 1) * w];
        for (c, o) in out.iter_mut().enumerate() {
            let lo = c.saturating_sub(r);
            let hi = (c + r).min(w - 1);
            let mut acc = 0.0;
            for (j, &v) in line[lo..=hi].iter().enumerate() {
                acc += kernel[lo + j + r - c] * v;
            }
            *o = acc;
        }
    }
    let mut out = vec![0.0; h * w];
    for row in 0..h {
        let lo = row.saturating_sub(r);
        let hi = (row + r).min(h - 1);
        let dst = &mut out[row * w..(row + 1) * w];
        for src_row in lo..=hi {
            let weight = kernel[src_row + r - row];
            let line = &tmp[src_row * w..(src_row + 1) * w];
            for (d, &v) in dst.iter_mut().zip(line) {
                *d += weight * v;
            }
        }
    }
    Plane::new(h, w, out)
}

/// Mask-normalized low-pass: `G(y * m) / G(m)`, zero where the mask support
/// is empty. With an all-ones mask this is a Gaussian blur whose borders
/// are renormalized instead of darkened.
pub fn lowpass_normalized(input: &Plane, mask: &Plane, kernel: &[f64]) -> Plane {
    let mut masked = input.clone();
    masked.mul_elementwise(mask);
    let num = separable_filter(&masked, kernel);
    let den = separable_filter(mask, kernel);
    let data = num
        .data()
        .iter()
        .zip(den.data())
        .map(|(&n, &d)| if d > 1e-12 { n / d } else { 0.0 })
        .collect();
    Plane::new(input.height(), input.width(), data)
}

/// Adjoint of [`lowpass_normalized`] for a fixed mask.
pub fn lowpass_normalized_adjoint(grad: &Plane, mask: &Plane, kernel: &[f64]) -> Plane {
    let den = separable_filter(mask, kernel);
    let scaled = grad
        .data()
        .iter()
        .zip(den.data())
        .map(|(&g, &d)| if d > 1e-12 { g / d } else { 0.0 })
        .collect();
    let mut back = separable_filter(&Plane::new(grad.height(), grad.width(), scaled), kernel);
    back.mul_elementwise(mask);
    back
}

/// Local standard deviation over a `(2r+1)^2` window, windows truncated at
/// the borders.
pub fn local_std(input: &Plane, r: usize) -> Plane {
    let (h, w) = (input.height(), input.width());
    let mut out = Plane::zeros(h, w);
    for row in 0..h {
        for col in 0..w {
            let (mut s, mut s2, mut n) = (0.0, 0.0, 0.0);
            for rr in row.saturating_sub(r)..=(row + r).min(h - 1) {
                for cc in col.saturating_sub(r)..=(col + r).min(w - 1) {
                    let v = input.at(rr, cc);
                    s += v;
                    s2 += v * v;
                    n += 1.0;
                }
            }
            let mean = s / n;
            out.set(row, col, (s2 / n - mean * mean).max(0.0).sqrt());
        }
    }
    out
}
