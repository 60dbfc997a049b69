use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use dperm::evaluation::{write_plot_data, VI_STREAM_OFFSET};
use dperm::intervals::{default_method, intervals_for_fit, train_private};
use dperm::preprocess::{prepare, read_processed_csv, read_raw_csv, write_processed_csv};
use dperm::synthetic::generate;
use dperm::{CiSpec, Dataset, EvalReport, IntervalSet, PrivateFit, RngStream, Schema};

use crate::config::RunConfig;
use crate::CliError;

/// Stream ids used by `train` and `ci` under the run seed.
pub const TRAIN_STREAM: u64 = 1;
pub const CI_STREAM: u64 = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metadata {
    pub tool: String,
    pub version: String,
    pub seed: u64,
    pub workers: usize,
    /// How random streams were assigned, as (seed, stream id) pairs.
    pub streams: String,
    pub config: RunConfig,
}

fn metadata(cfg: &RunConfig, streams: String) -> Metadata {
    Metadata {
        tool: env!("CARGO_PKG_NAME").into(),
        version: env!("CARGO_PKG_VERSION").into(),
        seed: cfg.seed,
        workers: cfg.workers,
        streams,
        config: cfg.clone(),
    }
}

#[derive(Serialize)]
struct FitOutput<'a> {
    #[serde(flatten)]
    fit: &'a PrivateFit,
    seed: u64,
    metadata: Metadata,
}

#[derive(Serialize)]
struct IntervalOutput<'a> {
    #[serde(flatten)]
    intervals: &'a IntervalSet,
    metadata: Metadata,
}

#[derive(Serialize)]
struct ReportOutput<'a> {
    #[serde(flatten)]
    report: &'a EvalReport,
    metadata: Metadata,
}

fn open(path: &Path) -> Result<BufReader<File>, CliError> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| CliError::Data(format!("cannot open {}: {e}", path.display())))
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::Data(format!("cannot create {}: {e}", path.display())))
}

fn write_json<T: Serialize>(out: Option<&Path>, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).expect("artifacts serialize to JSON");
    text.push('\n');
    let res = match out {
        Some(path) => create(path)?.write_all(text.as_bytes()),
        None => std::io::stdout().lock().write_all(text.as_bytes()),
    };
    res.map_err(|e| CliError::Data(format!("cannot write output: {e}")))
}

fn required<'a>(p: &'a Option<PathBuf>, field: &str) -> Result<&'a Path, CliError> {
    p.as_deref().ok_or_else(|| CliError::Config(format!("`{field}` is required")))
}

fn load_dataset(cfg: &RunConfig) -> Result<Dataset, CliError> {
    let input = required(&cfg.input, "input")?;
    let data = match &cfg.schema {
        Some(schema_path) => {
            let schema: Schema = serde_json::from_reader(open(schema_path)?)
                .map_err(|e| CliError::Data(format!("schema {}: {e}", schema_path.display())))?;
            let table = read_raw_csv(open(input)?)?;
            let prepared = prepare(&table, &schema, None)?;
            log::info!(
                "prepared {} records, {} features plus constant; labels -1 = `{}`, +1 = `{}`",
                prepared.dataset.len(),
                prepared.reported_dim,
                prepared.mapping.negative,
                prepared.mapping.positive
            );
            prepared.dataset
        }
        None => read_processed_csv(open(input)?)?,
    };
    log::info!("loaded {} records of dimension {}", data.len(), data.dim());
    Ok(data)
}

pub fn train(cfg: &RunConfig) -> Result<(), CliError> {
    let data = load_dataset(cfg)?;
    let split = cfg.budget_split()?;
    let mut rng = RngStream::new(cfg.seed, TRAIN_STREAM);
    let fit = train_private(&data, &cfg.loss_model(), &cfg.train_config(), cfg.perturbation(), split.phi1, &mut rng)?;
    let out = FitOutput {
        fit: &fit,
        seed: cfg.seed,
        metadata: metadata(cfg, format!("training noise: ({}, {TRAIN_STREAM})", cfg.seed)),
    };
    write_json(cfg.out.as_deref(), &out)
}

pub fn ci(cfg: &RunConfig) -> Result<(), CliError> {
    let data = load_dataset(cfg)?;
    let fit_path = required(&cfg.fit, "fit")?;
    let fit: PrivateFit = serde_json::from_reader(open(fit_path)?)
        .map_err(|e| CliError::Data(format!("fit {}: {e}", fit_path.display())))?;
    if fit.n != data.len() {
        return Err(dperm::Error::DimensionMismatch {
            expected: fit.n,
            found: data.len(),
        }
        .into());
    }
    let method = cfg.interval_method().unwrap_or_else(|| default_method(fit.mechanism));
    let spec = CiSpec::new(cfg.alpha, cfg.m, method)?;
    let split = cfg.budget_split()?;
    let mut rng = RngStream::new(cfg.seed, CI_STREAM);
    let intervals = intervals_for_fit(&data, &cfg.loss_model(), &fit, split.phi2, split.phi3, &spec, &mut rng)?;
    let out = IntervalOutput {
        intervals: &intervals,
        metadata: metadata(cfg, format!("interval noise: ({}, {CI_STREAM})", cfg.seed)),
    };
    write_json(cfg.out.as_deref(), &out)
}

pub fn evaluate(cfg: &RunConfig) -> Result<(), CliError> {
    let data = load_dataset(cfg)?;
    let report = dperm::evaluate(&data, &cfg.eval_config()?)?;
    if let Some(path) = &cfg.plot_data {
        let x = cfg.plot_x.unwrap_or(cfg.phi1);
        write_plot_data(&[(x, &report)], create(path)?)?;
    }
    let streams = format!(
        "coverage replicate i: ({0}, i); variability replicate i: ({0}, {VI_STREAM_OFFSET} + i)",
        cfg.seed
    );
    let out = ReportOutput {
        report: &report,
        metadata: metadata(cfg, streams),
    };
    write_json(cfg.out.as_deref(), &out)?;
    if cfg.out.is_some() {
        print!("{}", report.to_table());
    }
    Ok(())
}

pub fn synth(cfg: &RunConfig) -> Result<(), CliError> {
    let out = required(&cfg.out, "out")?;
    let spec = cfg.synth_spec()?;
    let data = generate(&spec)?;
    write_processed_csv(&data, create(out)?)?;
    let mut meta_path = out.as_os_str().to_owned();
    meta_path.push(".meta.json");
    let streams = format!("generator: ({}, {})", cfg.seed, dperm::synthetic::GENERATOR_STREAM);
    write_json(Some(Path::new(&meta_path)), &metadata(cfg, streams))
}
