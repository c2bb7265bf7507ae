//! Wire formats of the service.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use carespan::error::FieldError;
use carespan::explain::WaterfallRow;

/// Body of every 4xx and 5xx response.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
    pub fields: Vec<FieldError>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnswerOption {
    pub answer: String,
    pub code: i32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureSchema {
    pub name: String,
    pub label: String,
    pub min: i32,
    pub max: i32,
    pub levels: Vec<i32>,
    /// One answer text per code, where the question has answer texts.
    pub options: Vec<AnswerOption>,
    pub used_by_model: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HorizonInfo {
    pub days: u32,
    pub label: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelCard {
    pub schema_version: u32,
    pub model_version: String,
    pub algorithm: String,
    pub family: Option<String>,
    pub config_hash: String,
    pub data_hash: String,
    pub seed: u64,
    pub crate_version: String,
    pub horizons: Vec<HorizonInfo>,
    pub metrics: BTreeMap<String, f64>,
    pub curve_times: Vec<f64>,
    pub explainable: bool,
    pub features: Vec<FeatureSchema>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurveData {
    pub times: Vec<f64>,
    pub survival: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalerInfo {
    pub a: f64,
    pub b: f64,
    pub n_train: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HorizonProbability {
    pub horizon_days: u32,
    pub label: String,
    /// Calibrated survival probability, 4 decimals.
    pub probability: f64,
    /// Model survival at the horizon before calibration, 4 decimals.
    pub uncalibrated: f64,
    pub scaler: ScalerInfo,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionResponse {
    pub response_id: String,
    pub model_version: String,
    pub margin: f64,
    pub curve: CurveData,
    pub horizons: Vec<HorizonProbability>,
    pub imputed_fields: Vec<String>,
    /// Path of the cohort curve to overlay.
    pub baseline: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExplainResponse {
    pub response_id: String,
    pub model_version: String,
    pub base_value: f64,
    pub margin: f64,
    pub total: f64,
    pub rows: Vec<WaterfallRow>,
    pub imputed_fields: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FieldEdit {
    pub field: String,
    pub value: Value,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WhatIfVariant {
    /// `None` for the unedited record.
    pub edit: Option<FieldEdit>,
    pub prediction: PredictionResponse,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WhatIfResponse {
    pub response_id: String,
    pub model_version: String,
    pub variants: Vec<WhatIfVariant>,
}
