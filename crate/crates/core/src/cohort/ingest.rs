use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::schema::{Feature, FeatureMeta};
use super::{CensorReason, Cohort, SurvivalOutcome};
use crate::error::{Error, Result};

/// Column layout expected by [`ingest_csv`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CsvSchema {
    pub features: Vec<FeatureMeta>,
    pub time_column: String,
    pub event_column: String,
    /// Optional; censored rows default to `current_resident` without it.
    pub reason_column: Option<String>,
}

impl Default for CsvSchema {
    fn default() -> Self {
        CsvSchema {
            features: Feature::ALL.iter().map(|f| FeatureMeta::canonical(*f)).collect(),
            time_column: "time_days".into(),
            event_column: "event".into(),
            reason_column: Some("censor_reason".into()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RowError {
    /// 1-based line number in the file (the header is line 1).
    pub line: usize,
    pub message: String,
}

#[derive(Clone, Debug)]
pub struct IngestReport {
    pub cohort: Cohort,
    pub rows_read: usize,
    pub rejected_nonpositive_time: usize,
    pub malformed: Vec<RowError>,
}

const MAX_MALFORMED_FRACTION: f64 = 0.10;

pub fn ingest_csv(path: impl AsRef<Path>, schema: &CsvSchema) -> Result<IngestReport> {
    ingest_reader(File::open(path)?, schema)
}

pub fn ingest_reader<R: Read>(reader: R, schema: &CsvSchema) -> Result<IngestReport> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let find = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| Error::invalid(format!("header is missing column `{name}`")))
    };
    let feature_cols = schema
        .features
        .iter()
        .map(|m| find(&m.name))
        .collect::<Result<Vec<_>>>()?;
    let time_col = find(&schema.time_column)?;
    let event_col = find(&schema.event_column)?;
    let reason_col = match &schema.reason_column {
        Some(name) => Some(find(name)?),
        None => None,
    };
    let canonical: Vec<Option<Feature>> = schema
        .features
        .iter()
        .map(|m| m.name.parse::<Feature>().ok())
        .collect();

    let mut records = Vec::new();
    let mut outcomes = Vec::new();
    let mut malformed = Vec::new();
    let mut rejected = 0usize;
    let mut rows_read = 0usize;

    for (i, row) in rdr.records().enumerate() {
        rows_read += 1;
        let line = i + 2;
        let row = match row {
            Ok(r) => r,
            Err(e) => {
                malformed.push(RowError {
                    line,
                    message: e.to_string(),
                });
                continue;
            }
        };
        if row.len() != headers.len() {
            malformed.push(RowError {
                line,
                message: format!("expected {} fields, found {}", headers.len(), row.len()),
            });
            continue;
        }
        let time: i64 = match row[time_col].trim().parse() {
            Ok(t) => t,
            Err(_) => {
                malformed.push(RowError {
                    line,
                    message: format!("unparsable time {:?}", &row[time_col]),
                });
                continue;
            }
        };
        if time <= 0 {
            rejected += 1;
            continue;
        }
        match parse_row(&row, schema, &feature_cols, &canonical, time, event_col, reason_col) {
            Ok((values, outcome)) => {
                records.push(values);
                outcomes.push(outcome);
            }
            Err(message) => malformed.push(RowError { line, message }),
        }
    }

    if rows_read > 0 && malformed.len() as f64 > MAX_MALFORMED_FRACTION * rows_read as f64 {
        return Err(Error::TooManyMalformedRows {
            malformed: malformed.len(),
            total: rows_read,
            first: malformed
                .first()
                .map(|e| format!("line {}: {}", e.line, e.message))
                .unwrap_or_default(),
        });
    }
    let cohort = Cohort::new(schema.features.clone(), records, outcomes)?;
    Ok(IngestReport {
        cohort,
        rows_read,
        rejected_nonpositive_time: rejected,
        malformed,
    })
}

fn parse_row(
    row: &csv::StringRecord,
    schema: &CsvSchema,
    feature_cols: &[usize],
    canonical: &[Option<Feature>],
    time: i64,
    event_col: usize,
    reason_col: Option<usize>,
) -> std::result::Result<(Vec<Option<f64>>, SurvivalOutcome), String> {
    let mut values = Vec::with_capacity(feature_cols.len());
    for ((meta, &col), feature) in schema.features.iter().zip(feature_cols).zip(canonical) {
        let cell = row[col].trim();
        let value = if cell.is_empty() {
            None
        } else if let Ok(v) = cell.parse::<f64>() {
            Some(v)
        } else if let Some(f) = feature {
            f.encode_answer(cell)
                .map_err(|e| e.to_string())?
                .map(f64::from)
        } else {
            return Err(format!("column `{}`: unparsable value {cell:?}", meta.name));
        };
        if let Some(v) = value {
            if !meta.contains(v) {
                return Err(format!(
                    "column `{}`: value {v} outside its declared range",
                    meta.name
                ));
            }
        }
        values.push(value);
    }
    let event = match row[event_col].trim() {
        "1" | "true" => true,
        "0" | "false" => false,
        other => return Err(format!("unparsable event flag {other:?}")),
    };
    let reason = match reason_col {
        Some(c) => CensorReason::parse(&row[c])
            .ok_or_else(|| format!("unknown censor reason {:?}", &row[c]))?,
        None if event => CensorReason::None,
        None => CensorReason::CurrentResident,
    };
    let reason = if !event && reason == CensorReason::None {
        CensorReason::CurrentResident
    } else {
        reason
    };
    let time = u32::try_from(time).map_err(|_| format!("time {time} too large"))?;
    let outcome = SurvivalOutcome::new(time, event, reason).map_err(|e| e.to_string())?;
    Ok((values, outcome))
}

/// Writes the cohort in the layout [`ingest_csv`] reads with a schema built
/// from the cohort's own columns.
pub fn write_csv<W: Write>(cohort: &Cohort, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = cohort.feature_names();
    header.extend(["time_days", "event", "censor_reason"].map(String::from));
    w.write_record(&header)?;
    for (row, outcome) in cohort.records().iter().zip(cohort.outcomes()) {
        let mut fields: Vec<String> = row
            .iter()
            .map(|v| v.map(|x| format_value(x)).unwrap_or_default())
            .collect();
        fields.push(outcome.time_days.to_string());
        fields.push(if outcome.event { "1" } else { "0" }.to_string());
        fields.push(outcome.censor_reason.as_str().to_string());
        w.write_record(&fields)?;
    }
    w.flush()?;
    Ok(())
}

fn format_value(x: f64) -> String {
    if x.fract() == 0.0 && x.abs() < 1e15 {
        format!("{}", x as i64)
    } else {
        format!("{x}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn header() -> String {
        let mut h: Vec<String> = Feature::ALL.iter().map(|f| f.name().to_string()).collect();
        h.extend(["time_days", "event", "censor_reason"].map(String::from));
        h.join(",")
    }

    fn row(time: &str, event: &str) -> String {
        let mut cells = vec!["87", "1", "0", "2", "5", "1", "", "0", "0", "1", "2", "2", "0", "1", "0", "1", "", "0"];
        cells.push(time);
        cells.push(event);
        cells.push(if event == "1" { "none" } else { "current_resident" });
        cells.join(",")
    }

    #[test]
    fn header_only_is_empty_cohort() {
        let data = format!("{}\n", header());
        let rep = ingest_reader(data.as_bytes(), &CsvSchema::default()).unwrap();
        assert_eq!(rep.cohort.len(), 0);
        assert_eq!(rep.rows_read, 0);
    }

    #[test]
    fn three_rows_align() {
        let data = format!("{}\n{}\n{}\n{}\n", header(), row("10", "1"), row("20", "0"), row("30", "1"));
        let rep = ingest_reader(data.as_bytes(), &CsvSchema::default()).unwrap();
        assert_eq!(rep.cohort.len(), 3);
        assert_eq!(rep.cohort.outcomes()[1].time_days, 20);
        assert!(!rep.cohort.outcomes()[1].event);
        assert_eq!(rep.cohort.value(0, 0), Some(87.0));
        assert_eq!(rep.cohort.value(0, 6), None);
    }

    #[test]
    fn negative_time_rejected_and_counted() {
        let mut lines = vec![header()];
        for i in 1..=19 {
            lines.push(row(&(i * 10).to_string(), "1"));
        }
        lines.push(row("-3", "1"));
        let data = lines.join("\n");
        let rep = ingest_reader(data.as_bytes(), &CsvSchema::default()).unwrap();
        assert_eq!(rep.cohort.len(), 19);
        assert_eq!(rep.rejected_nonpositive_time, 1);
        assert!(rep.malformed.is_empty());
    }

    #[test]
    fn malformed_rows_collected_until_limit() {
        let mut lines = vec![header()];
        for i in 1..=19 {
            lines.push(row(&(i * 10).to_string(), "0"));
        }
        lines.push(row("15", "maybe"));
        let rep = ingest_reader(lines.join("\n").as_bytes(), &CsvSchema::default()).unwrap();
        assert_eq!(rep.malformed.len(), 1);
        assert_eq!(rep.malformed[0].line, 21);
        lines.push(row("x", "1"));
        lines.push(row("16", "2"));
        let err = ingest_reader(lines.join("\n").as_bytes(), &CsvSchema::default()).unwrap_err();
        assert!(matches!(err, Error::TooManyMalformedRows { malformed: 3, total: 22, .. }));
    }

    #[test]
    fn text_answers_and_range_checks() {
        let schema = CsvSchema {
            features: vec![
                FeatureMeta::canonical(Feature::AgeValue),
                FeatureMeta::canonical(Feature::Smoking),
            ],
            time_column: "t".into(),
            event_column: "e".into(),
            reason_column: None,
        };
        let mut data = String::from("age_value,smoking,t,e\n85-89,Yes,4,1\n86,0,5,0\n");
        for _ in 0..9 {
            data.push_str("92,no,7,0\n");
        }
        let rep = ingest_reader(data.as_bytes(), &schema).unwrap();
        assert_eq!(rep.cohort.len(), 10);
        assert_eq!(rep.cohort.value(0, 1), Some(1.0));
        assert_eq!(rep.malformed.len(), 1);
        assert!(rep.malformed[0].message.contains("age_value"));
    }

    #[test]
    fn missing_header_column_is_hard_error() {
        let data = "age_value,time_days,event\n87,3,1\n";
        assert!(ingest_reader(data.as_bytes(), &CsvSchema::default()).is_err());
    }

    #[test]
    fn write_then_ingest() {
        let data = format!("{}\n{}\n{}\n", header(), row("10", "1"), row("20", "0"));
        let rep = ingest_reader(data.as_bytes(), &CsvSchema::default()).unwrap();
        let mut buf = Vec::new();
        write_csv(&rep.cohort, &mut buf).unwrap();
        let again = ingest_reader(buf.as_slice(), &CsvSchema::default()).unwrap();
        assert_eq!(again.cohort, rep.cohort);
    }
}
