//! JSON-over-HTTP access to a loaded model bundle: predictions, calibrated
//! horizon probabilities, SHAP waterfalls, what-if edits and the cohort
//! baseline curve.

mod api;

use std::net::SocketAddr;
use std::path::Path;
use std::sync::{Arc, RwLock};

use axum::body::Bytes;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

pub use api::*;
use carespan::bundle::{load_bundle, ModelBundle};
use carespan::cohort::{Feature, ResidentRecord};
use carespan::ensemble::FittedModel;
use carespan::error::FieldError;
use carespan::explain::{tree_shap, waterfall_data};
use carespan::harness::horizon_label;

/// A bundle plus the digest used to tag responses.
#[derive(Debug)]
pub struct Loaded {
    pub bundle: ModelBundle,
    pub digest: String,
}

impl Loaded {
    pub fn new(bundle: ModelBundle) -> carespan::Result<Self> {
        let digest = hex::encode(Sha256::digest(bundle.to_bytes()?));
        Ok(Loaded { bundle, digest })
    }

    pub fn model_version(&self) -> String {
        let p = &self.bundle.provenance;
        let hash = &p.config_hash[..p.config_hash.len().min(12)];
        format!("{}-{}-{}", p.algorithm, hash, &self.digest[..12])
    }
}

/// Shared service state. Requests take a snapshot of the current bundle,
/// so a swap never affects a request that is already running.
#[derive(Debug, Default)]
pub struct AppState {
    current: RwLock<Option<Arc<Loaded>>>,
}

impl AppState {
    pub fn new(bundle: Option<ModelBundle>) -> carespan::Result<Self> {
        let state = AppState::default();
        if let Some(b) = bundle {
            state.swap(b)?;
        }
        Ok(state)
    }

    pub fn snapshot(&self) -> Option<Arc<Loaded>> {
        self.current.read().expect("state lock").clone()
    }

    /// Replaces the served bundle atomically.
    pub fn swap(&self, bundle: ModelBundle) -> carespan::Result<()> {
        let loaded = Arc::new(Loaded::new(bundle)?);
        *self.current.write().expect("state lock") = Some(loaded);
        Ok(())
    }

    pub fn reload(&self, path: impl AsRef<Path>) -> carespan::Result<()> {
        self.swap(load_bundle(path)?)
    }

    pub fn unload(&self) {
        *self.current.write().expect("state lock") = None;
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/model/metadata", get(metadata))
        .route("/cohort/baseline", get(baseline))
        .route("/predict", post(predict))
        .route("/explain", post(explain))
        .route("/whatif", post(whatif))
        .with_state(state)
}

/// Serves until ctrl-c.
pub async fn run(state: Arc<AppState>, addr: SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}

fn error(status: StatusCode, message: impl Into<String>, fields: Vec<FieldError>) -> Response {
    let body = ErrorBody {
        error: message.into(),
        fields,
    };
    (status, Json(body)).into_response()
}

fn no_model() -> Response {
    error(StatusCode::SERVICE_UNAVAILABLE, "no model loaded", Vec::new())
}

fn field(name: impl Into<String>, message: impl Into<String>) -> FieldError {
    FieldError {
        field: name.into(),
        message: message.into(),
    }
}

fn parse_body(body: &Bytes) -> Result<Value, Response> {
    serde_json::from_slice(body).map_err(|e| {
        error(
            StatusCode::BAD_REQUEST,
            format!("malformed JSON: {e}"),
            vec![field("<body>", "not valid JSON")],
        )
    })
}

fn parse_record(value: &Value, prefix: &str) -> Result<ResidentRecord, Vec<FieldError>> {
    ResidentRecord::from_json(value).map_err(|errs| {
        errs.into_iter()
            .map(|e| field(format!("{prefix}{}", e.field), e.message))
            .collect()
    })
}

fn unprocessable(fields: Vec<FieldError>) -> Response {
    error(StatusCode::UNPROCESSABLE_ENTITY, "invalid request", fields)
}

fn response_id(loaded: &Loaded, endpoint: &str, request: &Value) -> String {
    let mut h = Sha256::new();
    h.update(loaded.digest.as_bytes());
    h.update(endpoint.as_bytes());
    h.update(serde_json::to_vec(request).expect("json value serialises"));
    hex::encode(h.finalize())[..16].to_string()
}

pub fn round4(x: f64) -> f64 {
    (x * 1e4).round() / 1e4
}

fn internal(e: carespan::Error) -> Response {
    match e {
        carespan::Error::InvalidFields(f) => unprocessable(f),
        other => error(StatusCode::INTERNAL_SERVER_ERROR, other.to_string(), Vec::new()),
    }
}

async fn health(State(state): State<Arc<AppState>>) -> Json<Value> {
    let loaded = state.snapshot();
    Json(json!({
        "status": "ok",
        "model_loaded": loaded.is_some(),
        "model_version": loaded.map(|l| l.model_version()),
    }))
}

async fn metadata(State(state): State<Arc<AppState>>) -> Response {
    let Some(loaded) = state.snapshot() else {
        return no_model();
    };
    let b = &loaded.bundle;
    let used = b.feature_names();
    let features = Feature::ALL
        .iter()
        .map(|&f| {
            let (min, max) = f.range();
            let mut options: Vec<AnswerOption> = Vec::new();
            for &(answer, code) in f.vocabulary() {
                if !options.iter().any(|o| o.code == code) {
                    options.push(AnswerOption {
                        answer: answer.to_string(),
                        code,
                    });
                }
            }
            FeatureSchema {
                name: f.name().to_string(),
                label: f.label().to_string(),
                min,
                max,
                levels: f.levels(),
                options,
                used_by_model: used.iter().any(|u| u == f.name()),
            }
        })
        .collect();
    let p = &b.provenance;
    let card = ModelCard {
        schema_version: b.schema_version,
        model_version: loaded.model_version(),
        algorithm: p.algorithm.clone(),
        family: b.model.as_ref().map(|m| m.family().to_string()),
        config_hash: p.config_hash.clone(),
        data_hash: p.data_hash.clone(),
        seed: p.seed,
        crate_version: p.crate_version.clone(),
        horizons: b
            .scalers
            .iter()
            .map(|s| HorizonInfo {
                days: s.horizon_days,
                label: horizon_label(s.horizon_days),
            })
            .collect(),
        metrics: p.metrics.clone(),
        curve_times: b.baseline.times.clone(),
        explainable: matches!(b.model, Some(FittedModel::Boosted(_))),
        features,
    };
    Json(card).into_response()
}

async fn baseline(State(state): State<Arc<AppState>>) -> Response {
    let Some(loaded) = state.snapshot() else {
        return no_model();
    };
    let b = &loaded.bundle.baseline;
    Json(CurveData {
        times: b.times.clone(),
        survival: b.survival.iter().map(|&s| round4(s)).collect(),
    })
    .into_response()
}

fn prediction(loaded: &Loaded, record: &ResidentRecord, id: String) -> Result<PredictionResponse, Response> {
    let p = loaded.bundle.predict(record).map_err(internal)?;
    Ok(PredictionResponse {
        response_id: id,
        model_version: loaded.model_version(),
        margin: p.margin,
        curve: CurveData {
            times: p.times,
            survival: p.survival.iter().map(|&s| round4(s)).collect(),
        },
        horizons: p
            .calibrated
            .iter()
            .map(|c| {
                let s = loaded.bundle.scaler(c.horizon_days).expect("scaler for horizon");
                HorizonProbability {
                    horizon_days: c.horizon_days,
                    label: horizon_label(c.horizon_days),
                    probability: round4(c.probability),
                    uncalibrated: round4(c.uncalibrated),
                    scaler: ScalerInfo {
                        a: s.a,
                        b: s.b,
                        n_train: s.n_train,
                    },
                }
            })
            .collect(),
        imputed_fields: p.imputed,
        baseline: "/cohort/baseline".to_string(),
    })
}

async fn predict(State(state): State<Arc<AppState>>, body: Bytes) -> Response {
    let Some(loaded) = state.snapshot() else {
        return no_model();
    };
    let value = match parse_body(&body) {
        Ok(v) => v,
        Err(r) => return r,
    };
    let record = match parse_record(&value, "") {
        Ok(r) => r,
        Err(f) => return unprocessable(f),
    };
    let id = response_id(&loaded, "predict", &value);
    match prediction(&loaded, &record, id) {
        Ok(p) => Json(p).into_response(),
        Err(r) => r,
    }
}

const DEFAULT_TOP_K: usize = 5;

async fn explain(State(state): State<Arc<AppState>>, body: Bytes) -> Response {
    let Some(loaded) = state.snapshot() else {
        return no_model();
    };
    let value = match parse_body(&body) {
        Ok(v) => v,
        Err(r) => return r,
    };
    let mut fields = Vec::new();
    let record = match value.get("record") {
        Some(r) => parse_record(r, "record.").map_err(|f| fields.extend(f)).ok(),
        None => {
            fields.push(field("record", "required"));
            None
        }
    };
    let top_k = match value.get("top_k") {
        None | Some(Value::Null) => Some(DEFAULT_TOP_K),
        Some(v) => match v.as_u64() {
            Some(k) if k >= 1 => Some(k as usize),
            _ => {
                fields.push(field("top_k", "expected an integer of at least 1"));
                None
            }
        },
    };
    if let Some(obj) = value.as_object() {
        for key in obj.keys().filter(|k| *k != "record" && *k != "top_k") {
            fields.push(field(key.clone(), "unknown field"));
        }
    }
    let (Some(record), Some(top_k), true) = (record, top_k, fields.is_empty()) else {
        return unprocessable(fields);
    };
    let Some(FittedModel::Boosted(model)) = &loaded.bundle.model else {
        return error(
            StatusCode::NOT_IMPLEMENTED,
            "explanations are available for boosted models only",
            Vec::new(),
        );
    };
    let row = match loaded.bundle.prepare(&record) {
        Ok(r) => r,
        Err(e) => return internal(e),
    };
    let waterfall = match tree_shap(model, &row.values).and_then(|e| waterfall_data(&e, top_k)) {
        Ok(w) => w,
        Err(e) => return internal(e),
    };
    Json(ExplainResponse {
        response_id: response_id(&loaded, "explain", &value),
        model_version: loaded.model_version(),
        base_value: waterfall.base_value,
        margin: waterfall.margin,
        total: waterfall.total,
        rows: waterfall.rows,
        imputed_fields: row.imputed,
    })
    .into_response()
}

async fn whatif(State(state): State<Arc<AppState>>, body: Bytes) -> Response {
    let Some(loaded) = state.snapshot() else {
        return no_model();
    };
    let value = match parse_body(&body) {
        Ok(v) => v,
        Err(r) => return r,
    };
    let mut fields = Vec::new();
    let base = match value.get("record") {
        Some(r) => parse_record(r, "record.").map_err(|f| fields.extend(f)).ok(),
        None => {
            fields.push(field("record", "required"));
            None
        }
    };
    let edits: Vec<Value> = match value.get("edits") {
        None | Some(Value::Null) => Vec::new(),
        Some(Value::Array(a)) => a.clone(),
        Some(_) => {
            fields.push(field("edits", "expected an array"));
            Vec::new()
        }
    };
    let mut parsed = Vec::new();
    for (i, edit) in edits.iter().enumerate() {
        match parse_edit(edit) {
            Ok(e) => parsed.push(e),
            Err(msg) => fields.push(field(format!("edits[{i}]"), msg)),
        }
    }
    let (Some(base), true) = (base, fields.is_empty()) else {
        return unprocessable(fields);
    };
    let id = response_id(&loaded, "whatif", &value);
    let mut variants = Vec::with_capacity(parsed.len() + 1);
    let mut push = |edit: Option<FieldEdit>, record: &ResidentRecord, k: usize| -> Result<(), Response> {
        let prediction = prediction(&loaded, record, format!("{id}-{k}"))?;
        variants.push(WhatIfVariant { edit, prediction });
        Ok(())
    };
    if let Err(r) = push(None, &base, 0) {
        return r;
    }
    for (k, (edit, feature, code)) in parsed.into_iter().enumerate() {
        let mut record = base.clone();
        record.set(feature, code).expect("edit validated");
        if let Err(r) = push(Some(edit), &record, k + 1) {
            return r;
        }
    }
    Json(WhatIfResponse {
        response_id: id,
        model_version: loaded.model_version(),
        variants,
    })
    .into_response()
}

/// An edit is `{"field": name, "value": code | answer | null}`.
fn parse_edit(edit: &Value) -> Result<(FieldEdit, Feature, Option<i32>), String> {
    let obj = edit.as_object().ok_or("expected an object with field and value")?;
    if let Some(extra) = obj.keys().find(|k| *k != "field" && *k != "value") {
        return Err(format!("unknown key `{extra}`"));
    }
    let name = obj
        .get("field")
        .and_then(Value::as_str)
        .ok_or("`field` must be a feature name")?;
    let value = obj.get("value").ok_or("`value` is required")?;
    let single = json!({ name: value });
    let record = ResidentRecord::from_json(&single).map_err(|errs| {
        errs.into_iter()
            .map(|e| format!("{}: {}", e.field, e.message))
            .collect::<Vec<_>>()
            .join("; ")
    })?;
    let feature: Feature = name.parse().map_err(|_| format!("unknown field `{name}`"))?;
    Ok((
        FieldEdit {
            field: name.to_string(),
            value: value.clone(),
        },
        feature,
        record.get(feature),
    ))
}
