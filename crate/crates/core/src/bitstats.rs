//! Matching-bit detection and N-user identification with exact false
//! positive control.
//!
//! Under the null hypothesis (an image that carries no watermark) the bits
//! read back from an extractor are modelled as i.i.d. fair coins, so the
//! number of bits `M` agreeing with any fixed key is `Binomial(k, 1/2)`.
//! Thresholds are chosen on the exact tail of that distribution.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{invalid, Error, Result};
use crate::special;

/// A k-bit signature.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct BitMessage {
    bits: Vec<bool>,
}

impl BitMessage {
    pub fn new(bits: Vec<bool>) -> Result<Self> {
        if bits.is_empty() {
            return Err(invalid("bit message must hold at least one bit"));
        }
        Ok(Self { bits })
    }

    /// Draws `k` fair coin flips.
    pub fn random<R: Rng + ?Sized>(k: usize, rng: &mut R) -> Self {
        assert!(k > 0, "k must be positive");
        Self {
            bits: (0..k).map(|_| rng.random::<bool>()).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn get(&self, i: usize) -> bool {
        self.bits[i]
    }

    /// `+1.0` for a one bit, `-1.0` for a zero bit.
    pub fn signs(&self) -> Vec<f64> {
        self.bits
            .iter()
            .map(|&b| if b { 1.0 } else { -1.0 })
            .collect()
    }

    pub fn complement(&self) -> Self {
        Self {
            bits: self.bits.iter().map(|b| !b).collect(),
        }
    }

    /// Copy with the given positions flipped.
    pub fn with_flips(&self, positions: &[usize]) -> Self {
        let mut bits = self.bits.clone();
        for &p in positions {
            bits[p] = !bits[p];
        }
        Self { bits }
    }

    /// Hard decision on soft values: strictly positive decodes to one.
    pub fn from_soft(values: &[f64]) -> Result<Self> {
        Self::new(values.iter().map(|&v| v > 0.0).collect())
    }

    /// Packs into 64-bit words, bit `i` at word `i / 64`, position `i % 64`.
    pub fn packed(&self) -> Vec<u64> {
        let mut words = vec![0u64; self.bits.len().div_ceil(64)];
        for (i, &b) in self.bits.iter().enumerate() {
            if b {
                words[i / 64] |= 1 << (i % 64);
            }
        }
        words
    }
}

impl fmt::Display for BitMessage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for &b in &self.bits {
            f.write_str(if b { "1" } else { "0" })?;
        }
        Ok(())
    }
}

impl fmt::Debug for BitMessage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "BitMessage({self})")
    }
}

impl FromStr for BitMessage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bits = s
            .trim()
            .chars()
            .map(|c| match c {
                '0' => Ok(false),
                '1' => Ok(true),
                other => Err(invalid(format!(
                    "unexpected character {other:?} in bit string"
                ))),
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(bits)
    }
}

impl Serialize for BitMessage {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for BitMessage {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Which tail the threshold refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum TailConvention {
    /// `P(M >= tau)`, the convention matching the decision rule `M >= tau`.
    #[default]
    Ge,
    /// `P(M > tau)`.
    Gt,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionVerdict {
    pub score: usize,
    pub threshold: usize,
    pub flagged: bool,
    pub p_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentificationVerdict {
    /// Index of the attributed key; absent when no key reaches the threshold.
    pub best_index: Option<usize>,
    pub best_score: usize,
    pub flagged: bool,
    pub threshold: usize,
}

/// Number of agreeing positions.
pub fn match_bits(a: &BitMessage, b: &BitMessage) -> Result<usize> {
    if a.len() != b.len() {
        return Err(invalid(format!(
            "bit length mismatch: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    Ok(a.bits.iter().zip(&b.bits).filter(|(x, y)| x == y).count())
}

/// Same as [`match_bits`] on packed words; `k` masks the final word.
pub fn match_packed(a: &[u64], b: &[u64], k: usize) -> usize {
    let differing: u32 = a.iter().zip(b).map(|(x, y)| (x ^ y).count_ones()).sum();
    debug_assert!(a.len() * 64 >= k);
    k - differing as usize
}

/// Largest k for which tails are summed exactly in 128-bit integers.
pub const EXACT_K_MAX: usize = 64;

/// `sum_{i >= tau} C(k, i)` in exact integer arithmetic, `k <= 64`.
pub fn binomial_tail_count(k: usize, tau: usize) -> u128 {
    assert!(k <= EXACT_K_MAX && tau <= k + 1);
    let mut coeff: u128 = 1; // C(k, 0)
    let mut total: u128 = 0;
    for i in 0..=k {
        if i >= tau {
            total += coeff;
        }
        coeff = coeff * (k - i) as u128 / (i + 1) as u128;
    }
    total
}

/// Exact `P(M >= tau)` for `M ~ Binomial(k, 1/2)`.
///
/// Integer summation up to [`EXACT_K_MAX`]; log-domain summation with
/// log-gamma coefficients beyond.
pub fn tail_ge_exact(k: usize, tau: usize) -> f64 {
    if tau == 0 {
        return 1.0;
    }
    if tau > k {
        return 0.0;
    }
    if k <= EXACT_K_MAX {
        // u128 -> f64 rounds to nearest; scaling by a power of two is exact.
        return binomial_tail_count(k, tau) as f64 * (-(k as f64)).exp2();
    }
    let kf = k as f64;
    let ln_k_fact = special::ln_gamma(kf + 1.0);
    let ln_half_k = -kf * std::f64::consts::LN_2;
    let terms: Vec<f64> = (tau..=k)
        .map(|i| {
            let i = i as f64;
            ln_k_fact - special::ln_gamma(i + 1.0) - special::ln_gamma(kf - i + 1.0) + ln_half_k
        })
        .collect();
    let max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = terms.iter().map(|t| (t - max).exp()).sum();
    (max + sum.ln()).exp().min(1.0)
}

/// `P(M >= tau)` through the regularized incomplete beta function,
/// `I_{1/2}(tau, k - tau + 1)`.
pub fn tail_ge_beta(k: usize, tau: usize) -> f64 {
    if tau == 0 {
        return 1.0;
    }
    if tau > k {
        return 0.0;
    }
    special::regularized_incomplete_beta(tau as f64, (k - tau + 1) as f64, 0.5)
}

fn relative_gap(a: f64, b: f64) -> f64 {
    if a == b {
        return 0.0;
    }
    (a - b).abs() / a.abs().max(b.abs())
}

/// False positive rate of a single matching-bit test at threshold `tau`.
///
/// Both the exact route and the incomplete-beta route are evaluated; a
/// disagreement beyond 1e-12 relative (1e-9 past the exact-integer range)
/// is reported as a numerical error.
pub fn fpr_of_threshold(k: usize, tau: usize, convention: TailConvention) -> Result<f64> {
    if k == 0 {
        return Err(invalid("k must be positive"));
    }
    if tau > k {
        return Err(invalid(format!("threshold {tau} outside [0, {k}]")));
    }
    let ge_tau = match convention {
        TailConvention::Ge => tau,
        TailConvention::Gt => tau + 1,
    };
    let exact = tail_ge_exact(k, ge_tau);
    let beta = tail_ge_beta(k, ge_tau);
    let tolerance = if k <= EXACT_K_MAX { 1e-12 } else { 1e-9 };
    let gap = relative_gap(exact, beta);
    if gap > tolerance {
        return Err(Error::Numerical(format!(
            "binomial tail routes disagree at k={k}, tau={ge_tau}: {exact:e} vs {beta:e}"
        )));
    }
    Ok(exact)
}

/// Probability that at least one of `n_users` independent tests fires.
pub fn global_fpr(fpr: f64, n_users: usize) -> Result<f64> {
    if !(0.0..=1.0).contains(&fpr) {
        return Err(invalid(format!("fpr {fpr} outside [0, 1]")));
    }
    if n_users == 0 {
        return Err(invalid("n_users must be at least 1"));
    }
    if n_users == 1 || fpr == 1.0 {
        return Ok(fpr);
    }
    Ok(-(n_users as f64 * (-fpr).ln_1p()).exp_m1())
}

/// Smallest `tau` whose global false positive rate over `n_users` tests is
/// at most `target_fpr`.
pub fn threshold_for_fpr(k: usize, target_fpr: f64, n_users: usize) -> Result<usize> {
    if !(target_fpr > 0.0 && target_fpr < 1.0) {
        return Err(invalid(format!("target fpr {target_fpr} outside (0, 1)")));
    }
    if n_users == 0 {
        return Err(invalid("n_users must be at least 1"));
    }
    for tau in 0..=k {
        let fpr = fpr_of_threshold(k, tau, TailConvention::Ge)?;
        if global_fpr(fpr, n_users)? <= target_fpr {
            return Ok(tau);
        }
    }
    Err(Error::Infeasible(format!(
        "no threshold reaches fpr {target_fpr:e} with k={k} and {n_users} users"
    )))
}

/// Single-key detection test: flag when at least `tau` bits match.
pub fn detect(m: &BitMessage, m_prime: &BitMessage, tau: usize) -> Result<DetectionVerdict> {
    let score = match_bits(m, m_prime)?;
    if tau > m.len() {
        return Err(invalid(format!("threshold {tau} outside [0, {}]", m.len())));
    }
    Ok(DetectionVerdict {
        score,
        threshold: tau,
        flagged: score >= tau,
        p_value: fpr_of_threshold(m.len(), score, TailConvention::Ge)?,
    })
}

/// Attributes `m_prime` to the best-matching key, ties going to the lowest
/// index. Nothing is attributed unless the best score reaches `tau`.
pub fn identify(
    m_prime: &BitMessage,
    keys: &[BitMessage],
    tau: usize,
) -> Result<IdentificationVerdict> {
    if keys.is_empty() {
        return Err(invalid("identification needs at least one key"));
    }
    let mut best = (0, 0);
    for (i, key) in keys.iter().enumerate() {
        let score = match_bits(m_prime, key)?;
        if i == 0 || score > best.1 {
            best = (i, score);
        }
    }
    let flagged = best.1 >= tau;
    Ok(IdentificationVerdict {
        best_index: flagged.then_some(best.0),
        best_score: best.1,
        flagged,
        threshold: tau,
    })
}
