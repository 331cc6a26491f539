use std::fs;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::spread::generate_carriers;
use crate::error::{invalid, Error, Result};
use crate::imaging::Plane;
use crate::whitening::WhiteningTransform;

pub const KEY_FILE_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CodecKind {
    Dctdwt,
    Spreadspectrum,
}

impl std::str::FromStr for CodecKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dctdwt" => Ok(Self::Dctdwt),
            "spreadspectrum" | "ss" => Ok(Self::Spreadspectrum),
            other => Err(invalid(format!("unknown codec kind {other:?}"))),
        }
    }
}

impl std::fmt::Display for CodecKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Dctdwt => "dctdwt",
            Self::Spreadspectrum => "spreadspectrum",
        })
    }
}

/// Tunable key material; `Default` gives the standard operating point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KeyParams {
    /// Spread-spectrum embedding strength (RMS of the pixel offset).
    pub alpha: f64,
    /// QIM step for the DCT-DWT codec.
    pub delta: f64,
    /// Side of the square spread-spectrum carrier frame.
    pub canonical_size: usize,
}

impl Default for KeyParams {
    fn default() -> Self {
        Self {
            alpha: 0.03,
            delta: 36.0 / 255.0,
            canonical_size: 256,
        }
    }
}

/// Secret material of one user. Carriers are regenerated from the seed on
/// first use and never serialized.
#[derive(Debug, Clone)]
pub struct CodecKey {
    kind: CodecKind,
    k: usize,
    seed: u64,
    params: KeyParams,
    whitening: Option<WhiteningTransform>,
    carriers: Arc<Vec<Plane>>,
}

impl PartialEq for CodecKey {
    fn eq(&self, other: &Self) -> bool {
        self.kind == other.kind
            && self.k == other.k
            && self.seed == other.seed
            && self.params == other.params
            && self.whitening == other.whitening
    }
}

pub const MAX_K: usize = 256;

/// Deterministic key for `(kind, k, seed, params)`.
pub fn keygen(kind: CodecKind, k: usize, seed: u64, params: KeyParams) -> Result<CodecKey> {
    if !(1..=MAX_K).contains(&k) {
        return Err(invalid(format!("payload length {k} outside [1, {MAX_K}]")));
    }
    if !(params.alpha > 0.0 && params.alpha.is_finite()) {
        return Err(invalid("alpha must be positive"));
    }
    if !(params.delta > 0.0 && params.delta.is_finite()) {
        return Err(invalid("delta must be positive"));
    }
    if params.canonical_size < 32 {
        return Err(invalid("canonical frame must be at least 32 pixels"));
    }
    if kind == CodecKind::Spreadspectrum && k > params.canonical_size * params.canonical_size / 64 {
        return Err(invalid("too many carriers for the canonical frame"));
    }
    // Generated up front: a lazy cell filled from inside a parallel job can deadlock
    // when the generator's own parallel work is stolen by a job waiting on the cell.
    let carriers = match kind {
        CodecKind::Spreadspectrum => generate_carriers(k, seed, params.canonical_size),
        CodecKind::Dctdwt => Vec::new(),
    };
    Ok(CodecKey {
        kind,
        k,
        seed,
        params,
        whitening: None,
        carriers: Arc::new(carriers),
    })
}

impl CodecKey {
    pub fn kind(&self) -> CodecKind {
        self.kind
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn params(&self) -> &KeyParams {
        &self.params
    }

    pub fn alpha(&self) -> f64 {
        self.params.alpha
    }

    pub fn delta(&self) -> f64 {
        self.params.delta
    }

    pub fn canonical_size(&self) -> usize {
        self.params.canonical_size
    }

    pub fn whitening(&self) -> Option<&WhiteningTransform> {
        self.whitening.as_ref()
    }

    /// Same key with a different embedding strength.
    pub fn with_alpha(&self, alpha: f64) -> Result<Self> {
        if !(alpha >= 0.0 && alpha.is_finite()) {
            return Err(invalid("alpha must be finite and non-negative"));
        }
        let mut key = self.clone();
        key.params.alpha = alpha;
        Ok(key)
    }

    pub fn with_whitening(&self, whitening: Option<WhiteningTransform>) -> Result<Self> {
        if let Some(w) = &whitening {
            w.validate()?;
            if w.k() != self.k {
                return Err(invalid(format!(
                    "whitening is {}-dimensional, key has k={}",
                    w.k(),
                    self.k
                )));
            }
        }
        let mut key = self.clone();
        key.whitening = whitening;
        Ok(key)
    }

    /// Zero-mean, unit-RMS, mutually orthogonal carrier fields; empty for dctdwt keys.
    pub fn carriers(&self) -> &[Plane] {
        &self.carriers
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&KeyFile::from(self))?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: KeyFile = serde_json::from_str(text)?;
        if file.version != KEY_FILE_VERSION {
            return Err(Error::Format(format!(
                "unsupported key file version {}",
                file.version
            )));
        }
        let key = keygen(
            file.codec_kind,
            file.k,
            file.seed,
            KeyParams {
                alpha: file.alpha,
                delta: file.delta,
                canonical_size: file.canonical_size,
            },
        )?;
        key.with_whitening(file.whitening)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_json()? + "\n")?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }
}

#[derive(Serialize, Deserialize)]
struct KeyFile {
    version: u32,
    codec_kind: CodecKind,
    k: usize,
    seed: u64,
    alpha: f64,
    delta: f64,
    canonical_size: usize,
    whitening: Option<WhiteningTransform>,
}

impl From<&CodecKey> for KeyFile {
    fn from(key: &CodecKey) -> Self {
        Self {
            version: KEY_FILE_VERSION,
            codec_kind: key.kind,
            k: key.k,
            seed: key.seed,
            alpha: key.params.alpha,
            delta: key.params.delta,
            canonical_size: key.params.canonical_size,
            whitening: key.whitening.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn keygen_is_deterministic() {
        let a = keygen(CodecKind::Spreadspectrum, 16, 7, KeyParams::default()).unwrap();
        let b = keygen(CodecKind::Spreadspectrum, 16, 7, KeyParams::default()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.carriers(), b.carriers());
        let c = keygen(CodecKind::Spreadspectrum, 16, 8, KeyParams::default()).unwrap();
        assert_ne!(a.carriers()[0], c.carriers()[0]);
    }

    #[test]
    fn keygen_rejects_bad_parameters() {
        let p = KeyParams::default();
        assert!(keygen(CodecKind::Dctdwt, 0, 1, p).is_err());
        assert!(keygen(CodecKind::Dctdwt, 257, 1, p).is_err());
        assert!(keygen(CodecKind::Dctdwt, 8, 1, KeyParams { delta: 0.0, ..p }).is_err());
        assert!(keygen(
            CodecKind::Spreadspectrum,
            8,
            1,
            KeyParams { alpha: -1.0, ..p }
        )
        .is_err());
    }

    #[test]
    fn key_file_roundtrip() {
        let key = keygen(CodecKind::Spreadspectrum, 4, 99, KeyParams::default())
            .unwrap()
            .with_whitening(Some(WhiteningTransform::identity(4)))
            .unwrap();
        let text = key.to_json().unwrap();
        let value: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(value["version"], 1);
        assert_eq!(value["codec_kind"], "spreadspectrum");
        assert_eq!(value["whitening"]["bias"].as_array().unwrap().len(), 4);
        assert!(value.get("carriers").is_none());
        assert_eq!(CodecKey::from_json(&text).unwrap(), key);

        let bad = text.replace("\"version\": 1", "\"version\": 9");
        assert!(CodecKey::from_json(&bad).is_err());
        assert!(key
            .with_whitening(Some(WhiteningTransform::identity(5)))
            .is_err());
    }
}
