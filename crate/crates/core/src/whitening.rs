//! PCA whitening of extractor outputs, and i.i.d. diagnostics for hard bits.
//!
//! Fitting computes the sample mean `mu` and covariance `U diag(lambda) U^T`
//! and returns the affine map `x -> (lambda + eps)^(-1/2) U^T (x - mu)`.
//! On the fitting population the whitened outputs have zero mean and
//! identity covariance, so their signs behave like fair, independent coins.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WhiteningTransform {
    /// Row-major `k x k`.
    pub weight: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
    #[serde(default)]
    pub eigen_floor: f64,
}

impl WhiteningTransform {
    pub fn identity(k: usize) -> Self {
        let weight = (0..k)
            .map(|i| (0..k).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
            .collect();
        Self {
            weight,
            bias: vec![0.0; k],
            eigen_floor: 0.0,
        }
    }

    pub fn k(&self) -> usize {
        self.bias.len()
    }

    /// Checks shape and finiteness, e.g. after deserialization.
    pub fn validate(&self) -> Result<()> {
        let k = self.k();
        if k == 0 || self.weight.len() != k || self.weight.iter().any(|r| r.len() != k) {
            return Err(Error::Format(format!(
                "whitening must be {k}x{k} with {k} biases"
            )));
        }
        if self
            .weight
            .iter()
            .flatten()
            .chain(&self.bias)
            .any(|v| !v.is_finite())
        {
            return Err(Error::Format("whitening holds non-finite values".into()));
        }
        Ok(())
    }

    pub fn weight_matrix(&self) -> DMatrix<f64> {
        let k = self.k();
        DMatrix::from_fn(k, k, |i, j| self.weight[i][j])
    }

    /// `weight * soft + bias`.
    pub fn apply(&self, soft: &[f64]) -> Result<Vec<f64>> {
        if soft.len() != self.k() {
            return Err(invalid(format!(
                "whitening expects {} values, got {}",
                self.k(),
                soft.len()
            )));
        }
        Ok(self
            .weight
            .iter()
            .zip(&self.bias)
            .map(|(row, b)| row.iter().zip(soft).map(|(w, s)| w * s).sum::<f64>() + b)
            .collect())
    }

    /// `weight^T * grad`: pulls a gradient on whitened outputs back to raw
    /// outputs.
    pub fn apply_transpose(&self, grad: &[f64]) -> Vec<f64> {
        let k = self.k();
        let mut out = vec![0.0; k];
        for (row, g) in self.weight.iter().zip(grad) {
            for (o, w) in out.iter_mut().zip(row) {
                *o += w * g;
            }
        }
        out
    }

    /// Solves `weight * x = target` for `x`.
    pub fn solve(&self, target: &[f64]) -> Result<Vec<f64>> {
        let lu = self.weight_matrix().lu();
        lu.solve(&DVector::from_column_slice(target))
            .map(|v| v.iter().copied().collect())
            .ok_or_else(|| Error::Numerical("whitening weight is singular".into()))
    }
}

/// Default eigenvalue floor: `1e-8 * trace(cov) / k`.
pub fn default_eigen_floor(trace: f64, k: usize) -> f64 {
    1e-8 * trace / k as f64
}

/// Fits the whitening map to `samples` (one k-vector per row).
/// `eigen_floor = None` selects [`default_eigen_floor`].
pub fn fit_whitening(samples: &[Vec<f64>], eigen_floor: Option<f64>) -> Result<WhiteningTransform> {
    let n = samples.len();
    let k = samples.first().map_or(0, Vec::len);
    if k == 0 {
        return Err(invalid("samples must be non-empty vectors"));
    }
    if n <= k {
        return Err(Error::InsufficientSamples { needed: k, got: n });
    }
    if samples.iter().any(|s| s.len() != k) {
        return Err(invalid("samples have inconsistent lengths"));
    }
    if samples.iter().flatten().any(|v| !v.is_finite()) {
        return Err(invalid("samples contain non-finite values"));
    }
    let mut mean = DVector::<f64>::zeros(k);
    for s in samples {
        mean += DVector::from_column_slice(s);
    }
    mean /= n as f64;
    let mut cov = DMatrix::<f64>::zeros(k, k);
    for s in samples {
        let d = DVector::from_column_slice(s) - &mean;
        cov.syger(1.0, &d, &d, 1.0);
    }
    cov /= (n - 1) as f64;
    // syger fills the lower triangle only.
    cov.fill_upper_triangle_with_lower_triangle();

    let floor = eigen_floor.unwrap_or_else(|| default_eigen_floor(cov.trace(), k));
    if !(floor >= 0.0 && floor.is_finite()) {
        return Err(invalid(format!(
            "eigen floor {floor} must be finite and >= 0"
        )));
    }
    let eig = SymmetricEigen::new(cov);
    let mut weight = DMatrix::<f64>::zeros(k, k);
    for i in 0..k {
        let lambda = eig.eigenvalues[i].max(0.0) + floor;
        if lambda <= 0.0 {
            return Err(invalid(
                "covariance is rank deficient and no eigen floor is set",
            ));
        }
        let inv_sqrt = 1.0 / lambda.sqrt();
        for j in 0..k {
            weight[(i, j)] = inv_sqrt * eig.eigenvectors[(j, i)];
        }
    }
    let bias = -(&weight * &mean);
    Ok(WhiteningTransform {
        weight: (0..k)
            .map(|i| weight.row(i).iter().copied().collect())
            .collect(),
        bias: bias.iter().copied().collect(),
        eigen_floor: floor,
    })
}

/// Summary of how close hard bits are to i.i.d. fair coins.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IidReport {
    pub per_bit_mean: Vec<f64>,
    /// `max |mean - 0.5|`.
    pub max_bias: f64,
    /// Largest absolute Pearson correlation between two distinct bits.
    pub max_offdiag_corr: f64,
    pub sample_count: usize,
    /// Constant bits; their correlations are reported as zero.
    pub degenerate_bits: Vec<usize>,
}

pub fn iid_diagnostics(hard_bits: &[Vec<bool>]) -> Result<IidReport> {
    let n = hard_bits.len();
    if n < 2 {
        return Err(Error::InsufficientSamples { needed: 1, got: n });
    }
    let k = hard_bits[0].len();
    if k == 0 || hard_bits.iter().any(|b| b.len() != k) {
        return Err(invalid("bit rows must be non-empty and equally long"));
    }
    let mut ones = vec![0u64; k];
    let mut both = vec![0u64; k * k];
    for row in hard_bits {
        let set: Vec<usize> = (0..k).filter(|&i| row[i]).collect();
        for &i in &set {
            ones[i] += 1;
            for &j in &set {
                both[i * k + j] += 1;
            }
        }
    }
    let nf = n as f64;
    let per_bit_mean: Vec<f64> = ones.iter().map(|&c| c as f64 / nf).collect();
    let max_bias = per_bit_mean
        .iter()
        .map(|m| (m - 0.5).abs())
        .fold(0.0, f64::max);
    let degenerate_bits: Vec<usize> = (0..k)
        .filter(|&i| ones[i] == 0 || ones[i] == n as u64)
        .collect();
    let mut max_corr: f64 = 0.0;
    for i in 0..k {
        for j in i + 1..k {
            let (pi, pj) = (per_bit_mean[i], per_bit_mean[j]);
            let var = pi * (1.0 - pi) * pj * (1.0 - pj);
            if var <= 0.0 {
                continue;
            }
            let cov = both[i * k + j] as f64 / nf - pi * pj;
            max_corr = max_corr.max((cov / var.sqrt()).abs());
        }
    }
    Ok(IidReport {
        per_bit_mean,
        max_bias,
        max_offdiag_corr: max_corr.min(1.0),
        sample_count: n,
        degenerate_bits,
    })
}

/// Hard decisions on whitened vectors: positive decodes to one.
pub fn hard_bits(values: &[f64]) -> Vec<bool> {
    values.iter().map(|&v| v > 0.0).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    /// Samples `mu + A z` with `z ~ N(0, I)`, a known correlated generator.
    pub(crate) fn correlated_gaussian(n: usize, k: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mixing: Vec<f64> = (0..k * k)
            .map(|_| StandardNormal.sample(&mut rng))
            .collect();
        let mu: Vec<f64> = (0..k).map(|_| rng.random_range(-3.0..3.0)).collect();
        (0..n)
            .map(|_| {
                let z: Vec<f64> = (0..k).map(|_| StandardNormal.sample(&mut rng)).collect();
                (0..k)
                    .map(|i| mu[i] + (0..k).map(|j| mixing[i * k + j] * z[j]).sum::<f64>())
                    .collect()
            })
            .collect()
    }

    fn covariance(xs: &[Vec<f64>]) -> (Vec<f64>, DMatrix<f64>) {
        let n = xs.len();
        let k = xs[0].len();
        let mean: Vec<f64> = (0..k)
            .map(|i| xs.iter().map(|x| x[i]).sum::<f64>() / n as f64)
            .collect();
        let cov = DMatrix::from_fn(k, k, |i, j| {
            xs.iter()
                .map(|x| (x[i] - mean[i]) * (x[j] - mean[j]))
                .sum::<f64>()
                / (n - 1) as f64
        });
        (mean, cov)
    }

    #[test]
    fn fitting_sample_is_exactly_white() {
        let xs = correlated_gaussian(400, 6, 1);
        let t = fit_whitening(&xs, Some(0.0)).unwrap();
        let ys: Vec<_> = xs.iter().map(|x| t.apply(x).unwrap()).collect();
        let (mean, cov) = covariance(&ys);
        assert!(mean.iter().all(|m| m.abs() < 1e-9));
        let dev = (cov - DMatrix::identity(6, 6)).abs().max();
        assert!(dev < 1e-9, "covariance deviation {dev}");
    }

    #[test]
    fn white_input_maps_to_a_rotation() {
        // Data whose sample mean is zero and sample covariance is identity.
        let raw = correlated_gaussian(300, 4, 2);
        let pre = fit_whitening(&raw, Some(0.0)).unwrap();
        let white: Vec<_> = raw.iter().map(|x| pre.apply(x).unwrap()).collect();
        let t = fit_whitening(&white, Some(0.0)).unwrap();
        let w = t.weight_matrix();
        let gram = &w * w.transpose();
        assert!((gram - DMatrix::identity(4, 4)).abs().max() < 1e-9);
        assert!(t.bias.iter().all(|b| b.abs() < 1e-9));
    }

    #[test]
    fn held_out_generator_samples_are_nearly_white() {
        let fit = correlated_gaussian(10_000, 8, 3);
        let t = fit_whitening(&fit, None).unwrap();
        // Same generator, fresh draws: reuse the seed's mixing matrix by
        // drawing a longer stream and keeping the tail.
        let all = correlated_gaussian(20_000, 8, 3);
        let held: Vec<_> = all[10_000..].iter().map(|x| t.apply(x).unwrap()).collect();
        let (_, cov) = covariance(&held);
        let dev = (cov - DMatrix::identity(8, 8)).abs().max();
        assert!(dev < 0.05, "held-out deviation {dev}");
        let bits: Vec<_> = held.iter().map(|y| hard_bits(y)).collect();
        let report = iid_diagnostics(&bits).unwrap();
        assert!(report.max_bias <= 0.02, "bias {}", report.max_bias);
    }

    #[test]
    fn centering_and_identity() {
        let xs = correlated_gaussian(200, 5, 4);
        let t = fit_whitening(&xs, None).unwrap();
        let (mean, _) = covariance(&xs);
        assert!(t.apply(&mean).unwrap().iter().all(|v| v.abs() < 1e-9));
        let id = WhiteningTransform::identity(3);
        assert_eq!(id.apply(&[1.0, -2.0, 3.5]).unwrap(), vec![1.0, -2.0, 3.5]);
        assert!(id.apply(&[1.0]).is_err());
    }

    #[test]
    fn fitting_errors() {
        let xs = correlated_gaussian(5, 5, 5);
        assert!(matches!(
            fit_whitening(&xs, None),
            Err(Error::InsufficientSamples { .. })
        ));
        let mut xs = correlated_gaussian(10, 3, 5);
        xs[2][1] = f64::NAN;
        assert!(matches!(
            fit_whitening(&xs, None),
            Err(Error::InvalidArgument(_))
        ));
        let same = vec![vec![1.0, 2.0, 3.0]; 10];
        assert!(fit_whitening(&same, None).is_err());
        // With an explicit floor the degenerate fit is floor-dominated.
        let t = fit_whitening(&same, Some(1e-4)).unwrap();
        assert!(t
            .apply(&[1.0, 2.0, 3.0])
            .unwrap()
            .iter()
            .all(|v| v.abs() < 1e-9));
    }

    #[test]
    fn diagnostics_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let fair: Vec<Vec<bool>> = (0..100_000)
            .map(|_| (0..16).map(|_| rng.random::<bool>()).collect())
            .collect();
        let r = iid_diagnostics(&fair).unwrap();
        assert!(r.max_bias <= 0.01, "{}", r.max_bias);
        assert!(r.max_offdiag_corr <= 0.02, "{}", r.max_offdiag_corr);

        let mut ones = fair[..1000].to_vec();
        for row in &mut ones {
            row[3] = true;
        }
        let r = iid_diagnostics(&ones).unwrap();
        assert_eq!(r.per_bit_mean[3], 1.0);
        assert_eq!(r.max_bias, 0.5);
        assert_eq!(r.degenerate_bits, vec![3]);

        let mut dup = fair[..1000].to_vec();
        for row in &mut dup {
            row[5] = row[2];
        }
        let r = iid_diagnostics(&dup).unwrap();
        assert!((r.max_offdiag_corr - 1.0).abs() < 1e-12);

        assert!(iid_diagnostics(&fair[..1]).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn whitening_is_affine(seed in 0u64..1000, t in 0.0f64..1.0) {
            let xs = correlated_gaussian(40, 4, seed);
            let w = fit_whitening(&xs, None).unwrap();
            let (a, b) = (&xs[0], &xs[1]);
            let mix: Vec<f64> = a.iter().zip(b).map(|(x, y)| t * x + (1.0 - t) * y).collect();
            let lhs = w.apply(&mix).unwrap();
            let (wa, wb) = (w.apply(a).unwrap(), w.apply(b).unwrap());
            for i in 0..4 {
                let rhs = t * wa[i] + (1.0 - t) * wb[i];
                prop_assert!((lhs[i] - rhs).abs() < 1e-8 * (1.0 + rhs.abs()));
            }
        }

        #[test]
        fn hard_bits_ignore_positive_rescaling(
            values in proptest::collection::vec(-5.0f64..5.0, 1..64),
            s in 1e-3f64..1e3,
        ) {
            let scaled: Vec<f64> = values.iter().map(|v| v * s).collect();
            prop_assert_eq!(hard_bits(&values), hard_bits(&scaled));
        }
    }
}
