//! Resident records, outcomes and cohort containers.
//!
//! Records are ordinal-encoded admission assessments. A [`Cohort`] pairs each
//! record with its [`SurvivalOutcome`] and carries per-column metadata so that
//! later stages (pruning, imputation, canary columns) can add or drop columns
//! without losing track of names and ranges.

mod ingest;
pub mod schema;
mod simulate;
mod window;

use std::collections::BTreeMap;

use ndarray::Array2;
use serde::de::{self, MapAccess, Visitor};
use serde::ser::SerializeMap;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, FieldError, Result};

pub use ingest::{ingest_csv, ingest_reader, write_csv, CsvSchema, IngestReport, RowError};
pub use schema::{Feature, FeatureMeta};
pub use simulate::{
    simulate_cohort, EffectPiece, GroundTruth, Interaction, SimConfig, TABLE2_MISSING_RATES,
};
pub use window::{select_earliest_within_window, TimedObservation, DEFAULT_WINDOW_DAYS};

/// Why follow-up ended without the modelled event.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CensorReason {
    CurrentResident,
    TransferFacility,
    DischargedHome,
    TransferHospital,
    /// The outcome is an event (death or hospice transfer).
    None,
}

impl CensorReason {
    pub fn as_str(self) -> &'static str {
        match self {
            CensorReason::CurrentResident => "current_resident",
            CensorReason::TransferFacility => "transfer_facility",
            CensorReason::DischargedHome => "discharged_home",
            CensorReason::TransferHospital => "transfer_hospital",
            CensorReason::None => "none",
        }
    }

    pub fn parse(text: &str) -> Option<Self> {
        match text.trim().to_lowercase().as_str() {
            "current_resident" => Some(CensorReason::CurrentResident),
            "transfer_facility" => Some(CensorReason::TransferFacility),
            "discharged_home" => Some(CensorReason::DischargedHome),
            "transfer_hospital" => Some(CensorReason::TransferHospital),
            "none" | "" => Some(CensorReason::None),
            _ => None,
        }
    }
}

/// Days from admission to the event or censoring, with the event flag.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SurvivalOutcome {
    pub time_days: u32,
    pub event: bool,
    pub censor_reason: CensorReason,
}

impl SurvivalOutcome {
    pub fn new(time_days: u32, event: bool, censor_reason: CensorReason) -> Result<Self> {
        if time_days < 1 {
            return Err(Error::invalid("time_days must be at least 1"));
        }
        if event && censor_reason != CensorReason::None {
            return Err(Error::invalid("an event cannot carry a censoring reason"));
        }
        Ok(SurvivalOutcome {
            time_days,
            event,
            censor_reason,
        })
    }

    pub fn event(time_days: u32) -> Self {
        Self::new(time_days, true, CensorReason::None).expect("valid event")
    }

    pub fn censored(time_days: u32) -> Self {
        Self::new(time_days, false, CensorReason::CurrentResident).expect("valid censoring")
    }
}

/// One resident's predictors in canonical order; `None` marks a missing
/// answer.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ResidentRecord {
    values: [Option<i32>; 18],
}

impl ResidentRecord {
    pub fn empty() -> Self {
        Self::default()
    }

    pub fn get(&self, feature: Feature) -> Option<i32> {
        self.values[feature.index()]
    }

    /// Sets a code after range validation.
    pub fn set(&mut self, feature: Feature, code: Option<i32>) -> Result<()> {
        if let Some(c) = code {
            feature.check_code(c)?;
        }
        self.values[feature.index()] = code;
        Ok(())
    }

    pub fn is_missing(&self, feature: Feature) -> bool {
        self.values[feature.index()].is_none()
    }

    pub fn missing_features(&self) -> Vec<Feature> {
        Feature::ALL
            .iter()
            .copied()
            .filter(|f| self.is_missing(*f))
            .collect()
    }

    pub fn codes(&self) -> &[Option<i32>; 18] {
        &self.values
    }

    /// Builds a record from a JSON object whose values are codes, answer
    /// texts or null. Every offending field is reported.
    pub fn from_json(value: &serde_json::Value) -> std::result::Result<Self, Vec<FieldError>> {
        let obj = value.as_object().ok_or_else(|| {
            vec![FieldError {
                field: "<record>".into(),
                message: "expected a JSON object".into(),
            }]
        })?;
        let mut record = ResidentRecord::empty();
        let mut errors = Vec::new();
        for (key, v) in obj {
            let feature = match key.parse::<Feature>() {
                Ok(f) => f,
                Err(_) => {
                    errors.push(FieldError {
                        field: key.clone(),
                        message: "unknown field".into(),
                    });
                    continue;
                }
            };
            let code = match v {
                serde_json::Value::Null => Ok(None),
                serde_json::Value::Number(n) => match n.as_i64() {
                    Some(c) if c >= i32::MIN as i64 && c <= i32::MAX as i64 => {
                        feature.check_code(c as i32).map(Some)
                    }
                    _ => Err(Error::invalid("expected an integer code")),
                },
                serde_json::Value::String(s) => feature.encode_answer(s),
                _ => Err(Error::invalid("expected an integer code, answer text or null")),
            };
            match code {
                Ok(c) => record.values[feature.index()] = c,
                Err(e) => errors.push(FieldError {
                    field: key.clone(),
                    message: e.to_string(),
                }),
            }
        }
        if errors.is_empty() {
            Ok(record)
        } else {
            Err(errors)
        }
    }

    /// Values in canonical order as floats (`None` for missing).
    pub fn to_row(&self) -> Vec<Option<f64>> {
        self.values.iter().map(|v| v.map(f64::from)).collect()
    }
}

impl Serialize for ResidentRecord {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let mut map = serializer.serialize_map(Some(18))?;
        for f in Feature::ALL {
            map.serialize_entry(f.name(), &self.values[f.index()])?;
        }
        map.end()
    }
}

impl<'de> Deserialize<'de> for ResidentRecord {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        struct RecordVisitor;
        impl<'de> Visitor<'de> for RecordVisitor {
            type Value = ResidentRecord;
            fn expecting(&self, f: &mut std::fmt::Formatter) -> std::fmt::Result {
                f.write_str("a map of feature name to ordinal code")
            }
            fn visit_map<A: MapAccess<'de>>(
                self,
                mut access: A,
            ) -> std::result::Result<Self::Value, A::Error> {
                let mut record = ResidentRecord::empty();
                while let Some((key, value)) = access.next_entry::<String, Option<i32>>()? {
                    let feature: Feature = key.parse().map_err(de::Error::custom)?;
                    record.set(feature, value).map_err(de::Error::custom)?;
                }
                Ok(record)
            }
        }
        deserializer.deserialize_map(RecordVisitor)
    }
}

/// Maps each answered question to its ordinal code. Unanswered features are
/// missing. All unknown features and categories are reported together.
pub fn encode_record(raw_answers: &BTreeMap<String, String>) -> Result<ResidentRecord> {
    let mut record = ResidentRecord::empty();
    let mut errors = Vec::new();
    for (key, answer) in raw_answers {
        let feature = match key.parse::<Feature>() {
            Ok(f) => f,
            Err(e) => {
                errors.push(FieldError {
                    field: key.clone(),
                    message: e.to_string(),
                });
                continue;
            }
        };
        match feature.encode_answer(answer) {
            Ok(code) => record.values[feature.index()] = code,
            Err(e) => errors.push(FieldError {
                field: key.clone(),
                message: e.to_string(),
            }),
        }
    }
    if errors.is_empty() {
        Ok(record)
    } else {
        Err(Error::InvalidFields(errors))
    }
}

/// Records aligned with outcomes plus column metadata. Immutable once built;
/// transformations return new cohorts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cohort {
    features: Vec<FeatureMeta>,
    records: Vec<Vec<Option<f64>>>,
    outcomes: Vec<SurvivalOutcome>,
}

impl Cohort {
    /// Validates alignment and ranges, and recomputes missing rates.
    pub fn new(
        features: Vec<FeatureMeta>,
        records: Vec<Vec<Option<f64>>>,
        outcomes: Vec<SurvivalOutcome>,
    ) -> Result<Self> {
        if records.len() != outcomes.len() {
            return Err(Error::invalid(format!(
                "{} records but {} outcomes",
                records.len(),
                outcomes.len()
            )));
        }
        for (i, row) in records.iter().enumerate() {
            if row.len() != features.len() {
                return Err(Error::invalid(format!(
                    "record {i} has {} values, expected {}",
                    row.len(),
                    features.len()
                )));
            }
            for (meta, v) in features.iter().zip(row) {
                if let Some(v) = v {
                    if !meta.contains(*v) {
                        return Err(Error::OutOfRange {
                            feature: meta.name.clone(),
                            value: *v,
                            min: meta.min,
                            max: meta.max,
                        });
                    }
                }
            }
        }
        let mut cohort = Cohort {
            features,
            records,
            outcomes,
        };
        cohort.refresh_missing_rates();
        Ok(cohort)
    }

    pub fn from_records(records: &[ResidentRecord], outcomes: Vec<SurvivalOutcome>) -> Result<Self> {
        let features = Feature::ALL.iter().map(|f| FeatureMeta::canonical(*f)).collect();
        let rows = records.iter().map(|r| r.to_row()).collect();
        Cohort::new(features, rows, outcomes)
    }

    pub fn empty_canonical() -> Self {
        Cohort::from_records(&[], Vec::new()).expect("empty cohort")
    }

    fn refresh_missing_rates(&mut self) {
        let n = self.records.len();
        for (j, meta) in self.features.iter_mut().enumerate() {
            meta.missing_rate = if n == 0 {
                0.0
            } else {
                self.records.iter().filter(|r| r[j].is_none()).count() as f64 / n as f64
            };
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.features.len()
    }

    pub fn features(&self) -> &[FeatureMeta] {
        &self.features
    }

    pub fn feature_names(&self) -> Vec<String> {
        self.features.iter().map(|f| f.name.clone()).collect()
    }

    pub fn feature_index(&self, name: &str) -> Option<usize> {
        self.features.iter().position(|f| f.name == name)
    }

    pub fn records(&self) -> &[Vec<Option<f64>>] {
        &self.records
    }

    pub fn outcomes(&self) -> &[SurvivalOutcome] {
        &self.outcomes
    }

    pub fn value(&self, row: usize, feature: usize) -> Option<f64> {
        self.records[row][feature]
    }

    pub fn column(&self, feature: usize) -> Vec<Option<f64>> {
        self.records.iter().map(|r| r[feature]).collect()
    }

    pub fn missing_cells(&self) -> usize {
        self.records
            .iter()
            .map(|r| r.iter().filter(|v| v.is_none()).count())
            .sum()
    }

    pub fn event_fraction(&self) -> f64 {
        if self.outcomes.is_empty() {
            return 0.0;
        }
        self.outcomes.iter().filter(|o| o.event).count() as f64 / self.outcomes.len() as f64
    }

    /// Rows selected by index, in the given order.
    pub fn subset(&self, rows: &[usize]) -> Cohort {
        let mut out = Cohort {
            features: self.features.clone(),
            records: rows.iter().map(|&i| self.records[i].clone()).collect(),
            outcomes: rows.iter().map(|&i| self.outcomes[i]).collect(),
        };
        out.refresh_missing_rates();
        out
    }

    /// Columns selected by index, in the given order.
    pub fn select_features(&self, columns: &[usize]) -> Cohort {
        let mut out = Cohort {
            features: columns.iter().map(|&j| self.features[j].clone()).collect(),
            records: self
                .records
                .iter()
                .map(|r| columns.iter().map(|&j| r[j]).collect())
                .collect(),
            outcomes: self.outcomes.clone(),
        };
        out.refresh_missing_rates();
        out
    }

    /// Keeps the named columns (in the given order).
    pub fn select_named(&self, names: &[String]) -> Result<Cohort> {
        let idx = names
            .iter()
            .map(|n| {
                self.feature_index(n)
                    .ok_or_else(|| Error::UnknownFeature(n.clone()))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(self.select_features(&idx))
    }

    /// Appends a column.
    pub fn with_column(&self, meta: FeatureMeta, values: Vec<Option<f64>>) -> Result<Cohort> {
        if values.len() != self.len() {
            return Err(Error::invalid("column length does not match cohort"));
        }
        if self.feature_index(&meta.name).is_some() {
            return Err(Error::invalid(format!("duplicate column `{}`", meta.name)));
        }
        let mut features = self.features.clone();
        features.push(meta);
        let records = self
            .records
            .iter()
            .zip(values)
            .map(|(r, v)| {
                let mut r = r.clone();
                r.push(v);
                r
            })
            .collect();
        Cohort::new(features, records, self.outcomes.clone())
    }

    /// Replaces cell values; used by imputation.
    pub(crate) fn with_records(&self, records: Vec<Vec<Option<f64>>>) -> Cohort {
        let mut out = Cohort {
            features: self.features.clone(),
            records,
            outcomes: self.outcomes.clone(),
        };
        out.refresh_missing_rates();
        out
    }

    /// Dense design matrix; fails on the first missing cell.
    pub fn design_matrix(&self) -> Result<Array2<f64>> {
        let p = self.n_features();
        let mut x = Array2::<f64>::zeros((self.len(), p));
        for (i, r) in self.records.iter().enumerate() {
            for j in 0..p {
                x[[i, j]] = r[j].ok_or_else(|| {
                    Error::invalid(format!(
                        "missing value in row {i}, column `{}`",
                        self.features[j].name
                    ))
                })?;
            }
        }
        Ok(x)
    }

    /// Canonical record view of a row (canonical features only; others are
    /// ignored).
    pub fn resident_record(&self, row: usize) -> ResidentRecord {
        let mut rec = ResidentRecord::empty();
        for (meta, v) in self.features.iter().zip(&self.records[row]) {
            if let (Ok(f), Some(v)) = (meta.name.parse::<Feature>(), v) {
                rec.values[f.index()] = Some(*v as i32);
            }
        }
        rec
    }

    /// Row vector aligned with this cohort's columns, taken from a canonical
    /// record.
    pub fn row_from_record(&self, record: &ResidentRecord) -> Vec<Option<f64>> {
        self.features
            .iter()
            .map(|meta| {
                meta.name
                    .parse::<Feature>()
                    .ok()
                    .and_then(|f| record.get(f))
                    .map(f64::from)
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn outcome_invariants() {
        assert!(SurvivalOutcome::new(0, true, CensorReason::None).is_err());
        assert!(SurvivalOutcome::new(5, true, CensorReason::DischargedHome).is_err());
        assert!(SurvivalOutcome::new(5, false, CensorReason::DischargedHome).is_ok());
    }

    #[test]
    fn encode_record_examples() {
        let mut raw = BTreeMap::new();
        raw.insert("age_value".to_string(), "85-89".to_string());
        raw.insert("mobility_equipment".to_string(), "Walking frame".to_string());
        raw.insert("gender_male".to_string(), "Other/Gender Diverse".to_string());
        let rec = encode_record(&raw).unwrap();
        assert_eq!(rec.get(Feature::AgeValue), Some(87));
        assert_eq!(rec.get(Feature::MobilityEquipment), Some(2));
        assert_eq!(rec.get(Feature::GenderMale), Some(0));
        assert!(rec.is_missing(Feature::ChessScaleScore));
        assert_eq!(rec.missing_features().len(), 15);
    }

    #[test]
    fn encode_record_lists_every_bad_field() {
        let mut raw = BTreeMap::new();
        raw.insert("smoking".to_string(), "often".to_string());
        raw.insert("mobilisation".to_string(), "flies".to_string());
        raw.insert("colour".to_string(), "blue".to_string());
        match encode_record(&raw) {
            Err(Error::InvalidFields(errs)) => {
                let fields: Vec<_> = errs.iter().map(|e| e.field.as_str()).collect();
                assert_eq!(fields, vec!["colour", "mobilisation", "smoking"]);
                assert!(errs[1].message.contains("flies"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn record_json_round_trip() {
        let mut rec = ResidentRecord::empty();
        rec.set(Feature::AgeValue, Some(92)).unwrap();
        rec.set(Feature::RxRiskScore, Some(-2)).unwrap();
        let json = serde_json::to_value(&rec).unwrap();
        assert_eq!(json["age_value"], 92);
        assert!(json["smoking"].is_null());
        let back: ResidentRecord = serde_json::from_value(json.clone()).unwrap();
        assert_eq!(back, rec);
        assert_eq!(ResidentRecord::from_json(&json).unwrap(), rec);
    }

    #[test]
    fn record_json_reports_ranges_and_text() {
        let v = serde_json::json!({"age_value": 50, "smoking": "Yes", "falls_history": "sometimes"});
        let errs = ResidentRecord::from_json(&v).unwrap_err();
        let fields: Vec<_> = errs.iter().map(|e| e.field.as_str()).collect();
        assert_eq!(fields, vec!["age_value", "falls_history"]);
        let ok = ResidentRecord::from_json(&serde_json::json!({"smoking": "Yes"})).unwrap();
        assert_eq!(ok.get(Feature::Smoking), Some(1));
    }

    #[test]
    fn set_rejects_out_of_range() {
        let mut rec = ResidentRecord::empty();
        assert!(rec.set(Feature::AgeValue, Some(85)).is_err());
        assert!(rec.set(Feature::RxRiskScore, Some(23)).is_ok());
    }

    #[test]
    fn cohort_validation_and_missing_rates() {
        let mut a = ResidentRecord::empty();
        a.set(Feature::Smoking, Some(1)).unwrap();
        let b = ResidentRecord::empty();
        let c = Cohort::from_records(
            &[a, b],
            vec![SurvivalOutcome::event(3), SurvivalOutcome::censored(9)],
        )
        .unwrap();
        let j = c.feature_index("smoking").unwrap();
        assert_eq!(c.features()[j].missing_rate, 0.5);
        assert_eq!(c.features()[0].missing_rate, 1.0);
        assert!(c.design_matrix().is_err());
        assert!(Cohort::from_records(&[ResidentRecord::empty()], vec![]).is_err());
    }

    #[test]
    fn column_operations() {
        let metas = vec![
            FeatureMeta::continuous("a", 0.0, 10.0),
            FeatureMeta::continuous("b", 0.0, 10.0),
        ];
        let c = Cohort::new(
            metas,
            vec![vec![Some(1.0), Some(2.0)], vec![Some(3.0), None]],
            vec![SurvivalOutcome::event(1), SurvivalOutcome::censored(2)],
        )
        .unwrap();
        let s = c.select_features(&[1]);
        assert_eq!(s.feature_names(), vec!["b"]);
        assert_eq!(s.features()[0].missing_rate, 0.5);
        let w = c
            .with_column(FeatureMeta::continuous("c", 0.0, 1.0), vec![Some(0.0), Some(1.0)])
            .unwrap();
        assert_eq!(w.n_features(), 3);
        assert!(w
            .with_column(FeatureMeta::continuous("c", 0.0, 1.0), vec![None, None])
            .is_err());
        let sub = c.subset(&[1]);
        assert_eq!(sub.outcomes()[0].time_days, 2);
        assert!(Cohort::new(
            vec![FeatureMeta::continuous("a", 0.0, 1.0)],
            vec![vec![Some(2.0)]],
            vec![SurvivalOutcome::event(1)]
        )
        .is_err());
    }
}
