use super::filter::{gaussian_kernel, separable_filter};
use super::{ImageBuffer, Plane};
use crate::error::{invalid, Result};

fn same_dims(a: &ImageBuffer, b: &ImageBuffer) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(invalid(format!(
            "image sizes differ: {:?} vs {:?}",
            a.dims(),
            b.dims()
        )));
    }
    Ok(())
}

/// Mean squared error over all channel values.
pub fn mse(a: &ImageBuffer, b: &ImageBuffer) -> Result<f64> {
    same_dims(a, b)?;
    let total: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y) * (x - y))
        .sum();
    Ok(total / a.data().len() as f64)
}

/// Peak signal-to-noise ratio in dB for unit dynamic range; `+inf` for
/// identical images.
pub fn psnr(a: &ImageBuffer, b: &ImageBuffer) -> Result<f64> {
    let err = mse(a, b)?;
    if err == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(-10.0 * err.log10())
}

const SSIM_RADIUS: usize = 5;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_C1: f64 = 0.01 * 0.01;
const SSIM_C2: f64 = 0.03 * 0.03;

/// Mean structural similarity on BT.601 luminance, 11x11 Gaussian window
/// (sigma 1.5), averaged over window positions lying fully inside the image.
pub fn ssim(a: &ImageBuffer, b: &ImageBuffer) -> Result<f64> {
    same_dims(a, b)?;
    let side = 2 * SSIM_RADIUS + 1;
    if a.height() < side || a.width() < side {
        return Err(invalid(format!("ssim needs at least {side}x{side} pixels")));
    }
    let k = gaussian_kernel(SSIM_RADIUS, SSIM_SIGMA);
    let x = a.luminance();
    let y = b.luminance();
    let product = |p: &Plane, q: &Plane| {
        Plane::new(
            p.height(),
            p.width(),
            p.data().iter().zip(q.data()).map(|(u, v)| u * v).collect(),
        )
    };
    let mu_x = separable_filter(&x, &k);
    let mu_y = separable_filter(&y, &k);
    let xx = separable_filter(&product(&x, &x), &k);
    let yy = separable_filter(&product(&y, &y), &k);
    let xy = separable_filter(&product(&x, &y), &k);
    let (h, w) = x.dims();
    let mut total = 0.0;
    let mut count = 0usize;
    for r in SSIM_RADIUS..h - SSIM_RADIUS {
        for c in SSIM_RADIUS..w - SSIM_RADIUS {
            let (mx, my) = (mu_x.at(r, c), mu_y.at(r, c));
            let vx = xx.at(r, c) - mx * mx;
            let vy = yy.at(r, c) - my * my;
            let cov = xy.at(r, c) - mx * my;
            total += ((2.0 * mx * my + SSIM_C1) * (2.0 * cov + SSIM_C2))
                / ((mx * mx + my * my + SSIM_C1) * (vx + vy + SSIM_C2));
            count += 1;
        }
    }
    Ok(total / count as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::seed_image;
    use crate::imaging::{resample::resize_plane, ImageBuffer};

    fn offset_image(base: &ImageBuffer, d: f64) -> ImageBuffer {
        base.map(|v| v + d)
    }

    #[test]
    fn psnr_examples() {
        let a = ImageBuffer::filled(16, 16, [0.4, 0.5, 0.3]).unwrap();
        assert_eq!(psnr(&a, &a).unwrap(), f64::INFINITY);
        let b = offset_image(&a, 0.1);
        assert!((psnr(&a, &b).unwrap() - 20.0).abs() < 1e-9);
        let c = offset_image(&a, 0.0316);
        assert!((psnr(&a, &c).unwrap() - 30.0).abs() < 0.01);
        assert!(psnr(&a, &ImageBuffer::filled(16, 8, [0.0; 3]).unwrap()).is_err());
    }

    #[test]
    fn ssim_examples() {
        let img = seed_image(3, 64, 64);
        assert!((ssim(&img, &img).unwrap() - 1.0).abs() < 1e-12);

        let black = ImageBuffer::filled(32, 32, [0.0; 3]).unwrap();
        let white = ImageBuffer::filled(32, 32, [1.0; 3]).unwrap();
        let want = SSIM_C1 / (1.0 + SSIM_C1);
        assert!((ssim(&black, &white).unwrap() - want).abs() < 1e-12);

        let small = ImageBuffer::filled(10, 32, [0.0; 3]).unwrap();
        assert!(ssim(&small, &small).is_err());
    }

    #[test]
    fn ssim_of_mild_blur_is_high_but_below_one() {
        let img = seed_image(11, 128, 128);
        // 2x down then up acts as a mild blur.
        let planes = img.channels();
        let blurred: Vec<Plane> = planes
            .iter()
            .map(|p| resize_plane(&resize_plane(p, 64, 64), 128, 128))
            .collect();
        let blurred = ImageBuffer::from_planes([&blurred[0], &blurred[1], &blurred[2]]).unwrap();
        let s = ssim(&img, &blurred).unwrap();
        assert!(s > 0.5 && s < 1.0, "ssim {s}");
    }
}
