//! Versioned single-file container for a trained model and everything
//! needed to serve it.
//!
//! Layout: one header line `CARESPAN-BUNDLE <version> sha256=<hex>`
//! followed by the JSON payload the digest covers. Tree arrays inside the
//! payload are base64 encoded.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::calibrate::{calibrated_predict, CalibratedPrediction, PlattScaler};
use crate::cohort::{Feature, FeatureMeta, ResidentRecord};
use crate::ensemble::{predict_survival_any, FittedModel};
use crate::error::{Error, FieldError, Result};
use crate::impute::ImputationModelSet;
use crate::rng::derive_seed;

pub const BUNDLE_SCHEMA_VERSION: u32 = 1;
const MAGIC: &str = "CARESPAN-BUNDLE";

/// Mean survival of the training cohort on a fixed grid.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BaselineCurve {
    pub times: Vec<f64>,
    pub survival: Vec<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BundleProvenance {
    pub algorithm: String,
    pub config_hash: String,
    pub data_hash: String,
    pub seed: u64,
    pub crate_version: String,
    /// Validation metrics at training time, keyed by name.
    pub metrics: BTreeMap<String, f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelBundle {
    pub schema_version: u32,
    pub model: Option<FittedModel>,
    /// One per horizon, ascending.
    pub scalers: Vec<PlattScaler<f64>>,
    pub baseline: BaselineCurve,
    /// Metadata of the model's input columns, in model order.
    pub features: Vec<FeatureMeta>,
    /// Completes partially answered records; its columns cover the model's.
    pub imputation: Option<ImputationModelSet>,
    pub provenance: BundleProvenance,
}

/// A record turned into the model's input row.
#[derive(Clone, Debug, PartialEq)]
pub struct PreparedRow {
    pub values: Vec<f64>,
    /// Model columns whose value was imputed.
    pub imputed: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BundlePrediction {
    pub margin: f64,
    pub times: Vec<f64>,
    pub survival: Vec<f64>,
    pub calibrated: Vec<CalibratedPrediction>,
    pub imputed: Vec<String>,
}

impl ModelBundle {
    /// A bundle without a model (useful as a placeholder).
    pub fn empty() -> Self {
        ModelBundle {
            schema_version: BUNDLE_SCHEMA_VERSION,
            model: None,
            scalers: Vec::new(),
            baseline: BaselineCurve::default(),
            features: Vec::new(),
            imputation: None,
            provenance: BundleProvenance::default(),
        }
    }

    pub fn feature_names(&self) -> Vec<String> {
        self.features.iter().map(|f| f.name.clone()).collect()
    }

    pub fn horizons(&self) -> Vec<u32> {
        self.scalers.iter().map(|s| s.horizon_days).collect()
    }

    pub fn scaler(&self, horizon_days: u32) -> Option<&PlattScaler<f64>> {
        self.scalers.iter().find(|s| s.horizon_days == horizon_days)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::CorruptBundle(m.to_string()));
        if self.scalers.windows(2).any(|w| w[0].horizon_days >= w[1].horizon_days) {
            return bad("scaler horizons must be unique and ascending");
        }
        if let Some(model) = &self.model {
            if model.feature_names() != self.feature_names().as_slice() {
                return bad("feature metadata does not match the model's features");
            }
        }
        if let Some(imp) = &self.imputation {
            let cols: Vec<&str> = imp.features.iter().map(|f| f.name.as_str()).collect();
            if self.features.iter().any(|f| !cols.contains(&f.name.as_str())) {
                return bad("imputation models do not cover every model feature");
            }
        }
        let b = &self.baseline;
        if b.times.len() != b.survival.len()
            || b.times.windows(2).any(|w| w[0] >= w[1])
            || b.survival.windows(2).any(|w| w[1] > w[0])
            || b.survival.iter().any(|s| !(0.0..=1.0).contains(s))
        {
            return bad("baseline curve must be a non-increasing survival curve on ascending times");
        }
        Ok(())
    }

    fn model(&self) -> Result<&FittedModel> {
        self.model
            .as_ref()
            .ok_or_else(|| Error::invalid("bundle contains no model"))
    }

    /// Maps a canonical record onto the model columns, imputing missing
    /// answers with the stored models. Imputation draws are seeded from the
    /// bundle so a record always gets the same completion.
    pub fn prepare(&self, record: &ResidentRecord) -> Result<PreparedRow> {
        let lookup = |name: &str| name.parse::<Feature>().ok().and_then(|f| record.get(f)).map(f64::from);
        let imputed: Vec<String> = self
            .features
            .iter()
            .filter(|m| lookup(&m.name).is_none())
            .map(|m| m.name.clone())
            .collect();
        let values = match &self.imputation {
            Some(imp) => {
                let row: Vec<Option<f64>> = imp.features.iter().map(|m| lookup(&m.name)).collect();
                let filled = imp.impute_row(&row, derive_seed(self.provenance.seed, "serve-impute", 0))?;
                self.features
                    .iter()
                    .map(|m| {
                        let j = imp.features.iter().position(|f| f.name == m.name).expect("validated");
                        filled[j]
                    })
                    .collect()
            }
            None if imputed.is_empty() => self
                .features
                .iter()
                .map(|m| lookup(&m.name).expect("checked present"))
                .collect(),
            None => {
                return Err(Error::InvalidFields(
                    imputed
                        .iter()
                        .map(|f| FieldError {
                            field: f.clone(),
                            message: "missing and the bundle has no imputation models".into(),
                        })
                        .collect(),
                ))
            }
        };
        Ok(PreparedRow { values, imputed })
    }

    /// Survival curve on the baseline grid plus every calibrated horizon.
    pub fn predict(&self, record: &ResidentRecord) -> Result<BundlePrediction> {
        let row = self.prepare(record)?;
        self.predict_row(&row.values, row.imputed)
    }

    pub fn predict_row(&self, x: &[f64], imputed: Vec<String>) -> Result<BundlePrediction> {
        let model = self.model()?;
        let margin = model.risk_score(x)?;
        let curve = predict_survival_any(model, x, &self.baseline.times)?;
        let calibrated = self
            .scalers
            .iter()
            .map(|s| calibrated_predict(model, s, x, s.horizon_days))
            .collect::<Result<Vec<_>>>()?;
        Ok(BundlePrediction {
            margin,
            times: curve.times,
            survival: curve.survival,
            calibrated,
            imputed,
        })
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        self.validate()?;
        let payload = serde_json::to_vec(self)?;
        let digest = hex::encode(Sha256::digest(&payload));
        let mut out = format!("{MAGIC} {} sha256={digest}\n", self.schema_version).into_bytes();
        out.extend_from_slice(&payload);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let Some(newline) = bytes.iter().position(|&b| b == b'\n') else {
            return Err(Error::ChecksumMismatch);
        };
        let header = std::str::from_utf8(&bytes[..newline]).map_err(|_| Error::CorruptBundle("header is not text".into()))?;
        let mut parts = header.split(' ');
        if parts.next() != Some(MAGIC) {
            return Err(Error::CorruptBundle("not a bundle file".into()));
        }
        let version: u32 = parts
            .next()
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| Error::CorruptBundle("missing version".into()))?;
        if version != BUNDLE_SCHEMA_VERSION {
            return Err(Error::VersionMismatch {
                found: version,
                expected: BUNDLE_SCHEMA_VERSION,
            });
        }
        let digest = parts
            .next()
            .and_then(|d| d.strip_prefix("sha256="))
            .ok_or_else(|| Error::CorruptBundle("missing checksum".into()))?;
        let payload = &bytes[newline + 1..];
        if hex::encode(Sha256::digest(payload)) != digest {
            return Err(Error::ChecksumMismatch);
        }
        let bundle: ModelBundle = serde_json::from_slice(payload)?;
        if bundle.schema_version != version {
            return Err(Error::VersionMismatch {
                found: bundle.schema_version,
                expected: version,
            });
        }
        bundle.validate()?;
        Ok(bundle)
    }
}

/// Writes through a temporary file and renames, so readers never observe
/// a half-written bundle.
pub fn save_bundle(bundle: &ModelBundle, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = bundle.to_bytes()?;
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_bundle(path: impl AsRef<Path>) -> Result<ModelBundle> {
    ModelBundle::from_bytes(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests;
