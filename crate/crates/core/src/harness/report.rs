use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::config::{horizon_label, ExperimentConfig};
use crate::error::{Error, Result};
use crate::metrics::{aggregate_ci, MetricValue};

pub const REPORT_SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub master_seed: u64,
    pub config_hash: String,
    pub data_hash: String,
    pub n_rows: usize,
    pub n_features: usize,
    pub crate_version: String,
}

/// Whole-horizon metrics of one model on one test fold.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct OverallMetrics {
    pub cindex: Option<f64>,
    pub harrell: Option<f64>,
    pub auroc: Option<f64>,
}

/// Metrics of the calibrated model at one horizon on one test fold.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HorizonMetrics {
    pub horizon_days: u32,
    pub dynamic_auroc: Option<f64>,
    pub ibs: Option<f64>,
    pub cindex: Option<f64>,
    pub harrell: Option<f64>,
    pub platt_a: Option<f64>,
    pub platt_b: Option<f64>,
}

/// Importance the leakage canary received.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CanaryCheck {
    pub split_usage: usize,
    /// Σ|φ| over the test rows; only computed for boosted models.
    pub shap_mass: Option<f64>,
    /// Absolute coefficient; only for linear models, which never see a
    /// column that is constant on the training rows.
    pub coefficient: Option<f64>,
}

impl CanaryCheck {
    pub fn is_clean(&self) -> bool {
        self.split_usage == 0 && self.shap_mass.unwrap_or(0.0) == 0.0 && self.coefficient.unwrap_or(0.0) == 0.0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlgorithmRun {
    pub algorithm: String,
    pub overall: OverallMetrics,
    pub horizons: Vec<HorizonMetrics>,
    pub canary: Option<CanaryCheck>,
    /// One message per failed fit or metric.
    pub failures: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RepeatRecord {
    pub repeat: usize,
    pub seed: u64,
    pub n_train: usize,
    pub n_test: usize,
    pub test_event_fraction: f64,
    pub features: Vec<String>,
    pub algorithms: Vec<AlgorithmRun>,
    /// Set when the fold itself could not be prepared.
    pub failure: Option<String>,
}

/// Whole-horizon comparison row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Table6Row {
    pub algorithm: String,
    pub cindex: Option<MetricValue<f64>>,
    pub harrell: Option<MetricValue<f64>>,
    pub auroc: Option<MetricValue<f64>>,
    pub failed_repeats: usize,
}

/// Calibrated horizon row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Table7Row {
    pub algorithm: String,
    pub horizon_days: u32,
    pub forecast: String,
    pub dynamic_auroc: Option<MetricValue<f64>>,
    pub ibs: Option<MetricValue<f64>>,
    pub cindex: Option<MetricValue<f64>>,
    pub harrell: Option<MetricValue<f64>>,
    pub failed_repeats: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub schema_version: u32,
    pub provenance: Provenance,
    pub config: ExperimentConfig,
    /// Ranked by C-index, best first.
    pub table6: Vec<Table6Row>,
    pub table7: Vec<Table7Row>,
    pub repeats: Vec<RepeatRecord>,
}

fn collect(values: impl Iterator<Item = Option<f64>>) -> (Vec<f64>, usize) {
    let mut ok = Vec::new();
    let mut missing = 0;
    for v in values {
        match v {
            Some(v) => ok.push(v),
            None => missing += 1,
        }
    }
    (ok, missing)
}

fn runs<'a>(repeats: &'a [RepeatRecord], algorithm: &'a str) -> impl Iterator<Item = Option<&'a AlgorithmRun>> + 'a {
    repeats
        .iter()
        .map(move |r| r.algorithms.iter().find(|a| a.algorithm == algorithm))
}

pub(crate) fn build_tables(
    algorithms: &[String],
    horizons: &[u32],
    repeats: &[RepeatRecord],
) -> (Vec<Table6Row>, Vec<Table7Row>) {
    let mut table6 = Vec::new();
    let mut table7 = Vec::new();
    for name in algorithms {
        let failed_repeats = runs(repeats, name)
            .filter(|r| r.is_none_or(|a| !a.failures.is_empty()))
            .count();
        let pick = |f: fn(&OverallMetrics) -> Option<f64>| {
            let (v, _) = collect(runs(repeats, name).map(|r| r.and_then(|a| f(&a.overall))));
            v
        };
        table6.push(Table6Row {
            algorithm: name.clone(),
            cindex: aggregate_ci("C-index", &pick(|m| m.cindex)),
            harrell: aggregate_ci("Harrell's C-index", &pick(|m| m.harrell)),
            auroc: aggregate_ci("AUROC", &pick(|m| m.auroc)),
            failed_repeats,
        });
        for &h in horizons {
            let at = |f: fn(&HorizonMetrics) -> Option<f64>| {
                let (v, _) = collect(runs(repeats, name).map(|r| {
                    r.and_then(|a| a.horizons.iter().find(|m| m.horizon_days == h))
                        .and_then(f)
                }));
                v
            };
            let cells = [
                at(|m| m.dynamic_auroc),
                at(|m| m.ibs),
                at(|m| m.cindex),
                at(|m| m.harrell),
            ];
            let complete = cells.iter().map(Vec::len).min().unwrap_or(0);
            table7.push(Table7Row {
                algorithm: name.clone(),
                horizon_days: h,
                forecast: horizon_label(h),
                dynamic_auroc: aggregate_ci("Dynamic AUROC", &cells[0]),
                ibs: aggregate_ci("IBS", &cells[1]),
                cindex: aggregate_ci("C-index", &cells[2]),
                harrell: aggregate_ci("Harrell", &cells[3]),
                failed_repeats: repeats.len() - complete,
            });
        }
    }
    // stable: failed rows keep their configured order at the bottom
    table6.sort_by(|a, b| match (&a.cindex, &b.cindex) {
        (Some(x), Some(y)) => y.point.total_cmp(&x.point),
        (Some(_), None) => std::cmp::Ordering::Less,
        (None, Some(_)) => std::cmp::Ordering::Greater,
        (None, None) => std::cmp::Ordering::Equal,
    });
    (table6, table7)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Csv,
    Markdown,
}

impl FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "json" => Ok(ReportFormat::Json),
            "csv" => Ok(ReportFormat::Csv),
            "markdown" | "md" => Ok(ReportFormat::Markdown),
            other => Err(Error::invalid(format!("unknown report format `{other}`"))),
        }
    }
}

impl ReportFormat {
    pub fn extension(self) -> &'static str {
        match self {
            ReportFormat::Json => "json",
            ReportFormat::Csv => "csv",
            ReportFormat::Markdown => "md",
        }
    }
}

fn cell(v: &Option<MetricValue<f64>>) -> String {
    v.as_ref().map_or_else(|| "n/a".to_string(), MetricValue::cell)
}

impl ExperimentReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let report: ExperimentReport = serde_json::from_str(text)?;
        if report.schema_version != REPORT_SCHEMA_VERSION {
            return Err(Error::VersionMismatch {
                found: report.schema_version,
                expected: REPORT_SCHEMA_VERSION,
            });
        }
        Ok(report)
    }

    pub fn to_markdown(&self) -> String {
        let mut out = String::new();
        let p = &self.provenance;
        let _ = writeln!(out, "# Experiment report\n");
        let _ = writeln!(
            out,
            "Seed {}, config `{}`, data `{}`, {} rows, {} repeats.\n",
            p.master_seed,
            short(&p.config_hash),
            short(&p.data_hash),
            p.n_rows,
            self.repeats.len()
        );
        let _ = writeln!(out, "## Overall performance\n");
        let _ = writeln!(out, "| Model | C-index | Harrell's C-index | AUROC |");
        let _ = writeln!(out, "|---|---|---|---|");
        for r in &self.table6 {
            let _ = writeln!(
                out,
                "| {} | {} | {} | {} |",
                r.algorithm,
                cell(&r.cindex),
                cell(&r.harrell),
                cell(&r.auroc)
            );
        }
        let _ = writeln!(out, "\n## Calibrated horizon performance\n");
        let _ = writeln!(
            out,
            "| Model | Forecast | Dynamic AUROC (95% CI) | IBS (95% CI) | C-index (95% CI) | Harrell (95% CI) |"
        );
        let _ = writeln!(out, "|---|---|---|---|---|---|");
        for r in &self.table7 {
            let _ = writeln!(
                out,
                "| {} | {} | {} | {} | {} | {} |",
                r.algorithm,
                r.forecast,
                cell(&r.dynamic_auroc),
                cell(&r.ibs),
                cell(&r.cindex),
                cell(&r.harrell)
            );
        }
        let failed: usize = self.table6.iter().map(|r| r.failed_repeats).sum();
        if failed > 0 {
            let _ = writeln!(out, "\n{failed} model fits or metrics failed; see the JSON report.");
        }
        out
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "table",
            "model",
            "horizon_days",
            "metric",
            "point",
            "low",
            "high",
            "n_repeats",
            "failed_repeats",
        ])?;
        let mut row = |table: &str, model: &str, h: Option<u32>, metric: &str, v: &Option<MetricValue<f64>>, failed: usize| {
            let h = h.map(|h| h.to_string()).unwrap_or_default();
            let (point, low, high, n) = match v {
                Some(m) => (m.point.to_string(), m.low.to_string(), m.high.to_string(), m.n_repeats.to_string()),
                None => Default::default(),
            };
            w.write_record([table, model, &h, metric, &point, &low, &high, &n, &failed.to_string()])
        };
        for r in &self.table6 {
            row("overall", &r.algorithm, None, "cindex", &r.cindex, r.failed_repeats)?;
            row("overall", &r.algorithm, None, "harrell", &r.harrell, r.failed_repeats)?;
            row("overall", &r.algorithm, None, "auroc", &r.auroc, r.failed_repeats)?;
        }
        for r in &self.table7 {
            let h = Some(r.horizon_days);
            row("horizon", &r.algorithm, h, "dynamic_auroc", &r.dynamic_auroc, r.failed_repeats)?;
            row("horizon", &r.algorithm, h, "ibs", &r.ibs, r.failed_repeats)?;
            row("horizon", &r.algorithm, h, "cindex", &r.cindex, r.failed_repeats)?;
            row("horizon", &r.algorithm, h, "harrell", &r.harrell, r.failed_repeats)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    pub fn render(&self, format: ReportFormat) -> Result<String> {
        match format {
            ReportFormat::Json => self.to_json(),
            ReportFormat::Csv => self.to_csv(),
            ReportFormat::Markdown => Ok(self.to_markdown()),
        }
    }

    pub fn table6_row(&self, algorithm: &str) -> Option<&Table6Row> {
        self.table6.iter().find(|r| r.algorithm == algorithm)
    }

    pub fn table7_rows(&self, algorithm: &str) -> Vec<&Table7Row> {
        self.table7.iter().filter(|r| r.algorithm == algorithm).collect()
    }
}

fn short(hash: &str) -> &str {
    &hash[..hash.len().min(12)]
}

/// Writes the report in the given format.
pub fn export_report(report: &ExperimentReport, format: ReportFormat, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, report.render(format)?)?;
    Ok(())
}

pub fn load_report(path: impl AsRef<Path>) -> Result<ExperimentReport> {
    ExperimentReport::from_json(&std::fs::read_to_string(path)?)
}
