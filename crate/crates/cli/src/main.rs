use std::fs;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use ndarray::Array2;
use serde::Serialize;

use carespan::bundle::{load_bundle, save_bundle, ModelBundle};
use carespan::calibrate::{binarize_at_horizon, calibration_curve, logistic_recalibration, CalibrationCurve};
use carespan::cohort::{ingest_csv, simulate_cohort, write_csv, Cohort, CsvSchema, SimConfig};
use carespan::ensemble::FittedModel;
use carespan::explain::{shap_dependence, shap_summary, survival_overlay, tree_shap, waterfall_data};
use carespan::harness::{
    export_report, load_report, run_experiments, train_bundle, Algorithm, AlgorithmSpec, ExperimentConfig,
    ReportFormat,
};
use carespan::metrics::{roc_with_clinical_metrics, RocPoint};

#[derive(Parser)]
#[command(name = "carespan", version, about = "Survival modelling for care home admissions")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Experiment configuration (TOML). Defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed; overrides the configuration file.
    #[arg(long, global = true, env = "CARESPAN_SEED")]
    seed: Option<u64>,
    /// Parent of the per-configuration run directories.
    #[arg(long, global = true, default_value = "runs")]
    out_dir: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a synthetic cohort.
    Simulate {
        /// Simulator settings (TOML).
        #[arg(long)]
        sim: Option<PathBuf>,
        /// Number of residents; overrides the simulator file.
        #[arg(long)]
        n: Option<usize>,
    },
    /// Fit one model on the whole cohort and write a bundle.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "xgb")]
        algorithm: String,
        #[arg(long)]
        rounds: Option<usize>,
        #[arg(long)]
        estimators: Option<usize>,
    },
    /// Run the repeated-split protocol and write the report.
    Evaluate {
        #[arg(long)]
        data: PathBuf,
    },
    /// Calibration and ROC data of a bundle on a cohort.
    Calibrate {
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 10)]
        bins: usize,
    },
    /// SHAP plot data of a boosted bundle on a cohort.
    Explain {
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Row to explain in the waterfall and overlay.
        #[arg(long, default_value_t = 0)]
        row: usize,
        #[arg(long, default_value_t = 5)]
        top_k: usize,
        /// Dependence plots for these features; the three most important
        /// by default.
        #[arg(long, value_delimiter = ',')]
        features: Vec<String>,
        /// Background rows used for the summary and dependence plots.
        #[arg(long, default_value_t = 2000)]
        max_rows: usize,
    },
    /// Serve a bundle over HTTP.
    Serve {
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
    },
    /// Render a saved report.
    Report {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value = "markdown")]
        format: ReportFormat,
        /// Written to stdout when omitted.
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

struct Run {
    config: ExperimentConfig,
    dir: PathBuf,
}

impl Run {
    fn open(global: &Global) -> Result<Self> {
        let mut config = match &global.config {
            Some(path) => {
                let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
                ExperimentConfig::from_toml(&text)?
            }
            None => ExperimentConfig::default(),
        };
        if let Some(seed) = global.seed {
            config.master_seed = seed;
        }
        config.validate()?;
        let dir = global.out_dir.join(&config.hash()[..12]);
        fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        fs::write(dir.join("config.toml"), config.to_toml()?)?;
        Ok(Run { config, dir })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
    println!("{}", path.display());
    Ok(())
}

fn load_cohort(path: &Path) -> Result<Cohort> {
    let report = ingest_csv(path, &CsvSchema::default()).with_context(|| format!("reading {}", path.display()))?;
    if report.rejected_nonpositive_time > 0 || !report.malformed.is_empty() {
        eprintln!(
            "{}: {} rows read, {} with non-positive time, {} malformed",
            path.display(),
            report.rows_read,
            report.rejected_nonpositive_time,
            report.malformed.len()
        );
    }
    Ok(report.cohort)
}

/// Model-ready rows of a cohort, imputed with the bundle's models.
fn bundle_rows(bundle: &ModelBundle, cohort: &Cohort, limit: usize) -> Result<Array2<f64>> {
    let n = cohort.len().min(limit);
    let p = bundle.features.len();
    let mut values = Vec::with_capacity(n * p);
    for i in 0..n {
        values.extend(bundle.prepare(&cohort.resident_record(i))?.values);
    }
    Ok(Array2::from_shape_vec((n, p), values)?)
}

#[derive(Serialize)]
struct HorizonCalibration {
    horizon_days: u32,
    n_included: usize,
    intercept: Option<f64>,
    slope: Option<f64>,
    curve: CalibrationCurve<f64>,
    roc: Option<Vec<RocPoint<f64>>>,
}

fn simulate(run: &Run, sim: Option<&Path>, n: Option<usize>) -> Result<()> {
    let mut sim_config = match sim {
        Some(path) => SimConfig::from_toml(&fs::read_to_string(path)?)?,
        None => SimConfig::default(),
    };
    if let Some(n) = n {
        sim_config.n = n;
    }
    let (cohort, truth) = simulate_cohort(&sim_config, run.config.master_seed)?;
    let path = run.path("cohort.csv");
    write_csv(&cohort, fs::File::create(&path)?)?;
    println!("{}", path.display());
    write_json(&run.path("ground_truth.json"), &truth)
}

fn train(run: &Run, data: &Path, spec: &AlgorithmSpec) -> Result<()> {
    let cohort = load_cohort(data)?;
    let bundle = train_bundle(&cohort, spec, &run.config)?;
    let path = run.path(&format!("{}.bundle", spec.label()));
    save_bundle(&bundle, &path)?;
    println!("{}", path.display());
    Ok(())
}

fn evaluate(run: &Run, data: &Path) -> Result<()> {
    let cohort = load_cohort(data)?;
    let report = run_experiments(&cohort, &run.config)?;
    for format in [ReportFormat::Json, ReportFormat::Markdown, ReportFormat::Csv] {
        let path = run.path(&format!("report.{}", format.extension()));
        export_report(&report, format, &path)?;
        println!("{}", path.display());
    }
    Ok(())
}

fn calibrate(run: &Run, bundle_path: &Path, data: &Path, bins: usize) -> Result<()> {
    let bundle = load_bundle(bundle_path)?;
    let cohort = load_cohort(data)?;
    let predictions = (0..cohort.len())
        .map(|i| bundle.predict(&cohort.resident_record(i)))
        .collect::<carespan::Result<Vec<_>>>()?;
    let mut out = Vec::new();
    for (k, h) in bundle.horizons().into_iter().enumerate() {
        let labels = binarize_at_horizon(cohort.outcomes(), h)?;
        let probs: Vec<f64> = predictions.iter().map(|p| p.calibrated[k].probability).collect();
        let probs = labels.select(&probs);
        let y = labels.included_labels();
        let curve = calibration_curve(&probs, &y, bins)?;
        fs::write(run.path(&format!("calibration-{h}d.csv")), curve.to_csv())?;
        let fit = logistic_recalibration(&probs, &y).ok();
        out.push(HorizonCalibration {
            horizon_days: h,
            n_included: labels.n_included(),
            intercept: fit.map(|f| f.0),
            slope: fit.map(|f| f.1),
            curve,
            roc: roc_with_clinical_metrics(&probs, &y).ok(),
        });
    }
    write_json(&run.path("calibration.json"), &out)
}

fn explain(
    run: &Run,
    bundle_path: &Path,
    data: &Path,
    row: usize,
    top_k: usize,
    features: &[String],
    max_rows: usize,
) -> Result<()> {
    let bundle = load_bundle(bundle_path)?;
    let Some(FittedModel::Boosted(model)) = &bundle.model else {
        bail!("explanations need a boosted model bundle");
    };
    let cohort = load_cohort(data)?;
    if row >= cohort.len() {
        bail!("row {row} out of range for {} rows", cohort.len());
    }
    let background = bundle_rows(&bundle, &cohort, max_rows)?;
    let dir = run.path("explain");
    fs::create_dir_all(&dir)?;

    let summary = shap_summary(model, background.view())?;
    let chosen: Vec<String> = if features.is_empty() {
        summary.ranking.iter().take(3).map(|r| r.name.clone()).collect()
    } else {
        features.to_vec()
    };
    write_json(&dir.join("summary.json"), &summary)?;
    for name in &chosen {
        let dependence = shap_dependence(model, background.view(), name)?;
        write_json(&dir.join(format!("dependence-{name}.json")), &dependence)?;
    }

    let x = bundle.prepare(&cohort.resident_record(row))?.values;
    let waterfall = waterfall_data(&tree_shap(model, &x)?, top_k)?;
    write_json(&dir.join("waterfall.json"), &waterfall)?;
    let fitted = bundle.model.as_ref().expect("checked above");
    let overlay = survival_overlay(fitted, &x, background.view(), &bundle.baseline.times)?;
    write_json(&dir.join("overlay.json"), &overlay)
}

fn serve(bundle_path: &Path, host: &str, port: u16) -> Result<()> {
    let bundle = load_bundle(bundle_path)?;
    let state = Arc::new(carespan_serve::AppState::new(Some(bundle))?);
    let addr: SocketAddr = format!("{host}:{port}").parse().context("bad listen address")?;
    let runtime = tokio::runtime::Runtime::new()?;
    eprintln!("listening on http://{addr}");
    runtime.block_on(carespan_serve::run(state, addr))?;
    Ok(())
}

fn report(input: &Path, format: ReportFormat, output: Option<&Path>) -> Result<()> {
    let report = load_report(input)?;
    match output {
        Some(path) => {
            export_report(&report, format, path)?;
            println!("{}", path.display());
        }
        None => print!("{}", report.render(format)?),
    }
    Ok(())
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match &cli.command {
        Command::Simulate { sim, n } => simulate(&Run::open(&cli.global)?, sim.as_deref(), *n),
        Command::Train {
            data,
            algorithm,
            rounds,
            estimators,
        } => {
            let Some(kind) = Algorithm::parse(algorithm) else {
                bail!("unknown algorithm `{algorithm}`");
            };
            let mut spec = AlgorithmSpec::new(kind);
            if let Some(r) = rounds {
                spec = spec.with_rounds(*r);
            }
            if let Some(e) = estimators {
                spec = spec.with_estimators(*e);
            }
            train(&Run::open(&cli.global)?, data, &spec)
        }
        Command::Evaluate { data } => evaluate(&Run::open(&cli.global)?, data),
        Command::Calibrate { bundle, data, bins } => calibrate(&Run::open(&cli.global)?, bundle, data, *bins),
        Command::Explain {
            bundle,
            data,
            row,
            top_k,
            features,
            max_rows,
        } => explain(&Run::open(&cli.global)?, bundle, data, *row, *top_k, features, *max_rows),
        Command::Serve { bundle, port, host } => serve(bundle, host, *port),
        Command::Report { input, format, output } => report(input, *format, output.as_deref()),
    }
}
