//! Command-line front end: synthetic data generation, training runs with
//! manifests and learning curves, snapshot evaluation, the causal oracle
//! report and curve aggregation.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::causal::{overestimation_report, render_report_csv, render_report_table, ToyCausalModel};
use crate::data::{generate_synthetic_split, parse_svmlight, to_svmlight, Dataset, Split};
use crate::experiment::{evaluate, run, Algorithm, ExperimentConfig, Paradigm, RunResult};
use crate::metrics::{read_curves, write_curves, CurveRow, RankingMetrics, CURVE_HEADER};
use crate::ranking::{RankerMlp, RankerSnapshot};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Validation(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Experiment(#[from] crate::experiment::ExperimentError),
    #[error(transparent)]
    Data(#[from] crate::data::DataError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl CliError {
    /// 2 for usage errors, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Usage(_) => 2,
            _ => 1,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn read_text(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(io_err(path))
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(io_err(path))
}

#[derive(Debug, Parser)]
#[command(name = "ultr", version, about = "Unbiased learning to rank from simulated clicks")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write synthetic train/valid/test splits as SVMlight files.
    GenData(GenDataArgs),
    /// Run experiments and write manifest, curves and snapshots.
    Train(TrainArgs),
    /// Score a ranker snapshot on a labelled SVMlight file.
    Eval(EvalArgs),
    /// Print the causal oracle's overestimation report.
    OracleDemo(OracleArgs),
    /// Merge per-seed curve files into mean and sample std per step.
    ExportCurves(ExportArgs),
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    #[arg(long, default_value_t = 500)]
    pub queries: usize,
    #[arg(long, default_value_t = 0)]
    pub valid_queries: usize,
    #[arg(long, default_value_t = 200)]
    pub test_queries: usize,
    #[arg(long, default_value_t = 10)]
    pub docs: usize,
    #[arg(long, default_value_t = 16)]
    pub features: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, default_value = "data")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// TOML run configuration.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Single experiment seed.
    #[arg(long, conflicts_with = "seeds")]
    pub seed: Option<u64>,
    /// Seed range `a..b` (half-open) or `a..=b`.
    #[arg(long)]
    pub seeds: Option<String>,
    #[arg(long)]
    pub algorithm: Option<AlgorithmArg>,
    #[arg(long)]
    pub paradigm: Option<ParadigmArg>,
    #[arg(long)]
    pub steps: Option<usize>,
    /// Override any configuration key, e.g. `experiment.learning_rate=0.03`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Worker threads for seed replicates.
    #[arg(long)]
    pub jobs: Option<usize>,
    #[arg(long, default_value = "runs")]
    pub out: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum AlgorithmArg {
    Upe,
    Dla,
    Naive,
    IpwOracle,
}

impl From<AlgorithmArg> for Algorithm {
    fn from(a: AlgorithmArg) -> Self {
        match a {
            AlgorithmArg::Upe => Self::Upe,
            AlgorithmArg::Dla => Self::Dla,
            AlgorithmArg::Naive => Self::Naive,
            AlgorithmArg::IpwOracle => Self::IpwOracle,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum ParadigmArg {
    Ond,
    Off,
}

impl From<ParadigmArg> for Paradigm {
    fn from(p: ParadigmArg) -> Self {
        match p {
            ParadigmArg::Ond => Self::Ond,
            ParadigmArg::Off => Self::Off,
        }
    }
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Ranker snapshot JSON written by `train`.
    #[arg(long)]
    pub snapshot: PathBuf,
    /// Labelled SVMlight file.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = crate::data::DEFAULT_Y_MAX)]
    pub y_max: u8,
    /// Print JSON instead of a table.
    #[arg(long)]
    pub json: bool,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum Preset {
    Strong,
    Weak,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum ReportFormat {
    Table,
    Csv,
    Both,
}

#[derive(Debug, Args)]
pub struct OracleArgs {
    #[arg(long, value_enum, default_value_t = Preset::Strong)]
    pub preset: Preset,
    #[arg(long, value_enum, default_value_t = ReportFormat::Both)]
    pub format: ReportFormat,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    /// Curve CSV files to merge.
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
    /// Output path; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Synthetic data used when no data files are configured.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticConfig {
    pub queries: usize,
    pub test_queries: usize,
    pub docs: usize,
    pub features: usize,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            queries: 500,
            test_queries: 200,
            docs: 10,
            features: 16,
            seed: 1,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub train: Option<PathBuf>,
    pub test: Option<PathBuf>,
    pub synthetic: SyntheticConfig,
}

/// The `train` configuration file: `[experiment]` and `[data]` sections.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub experiment: ExperimentConfig,
    pub data: DataConfig,
}

impl RunConfig {
    /// Parses TOML text and applies dotted `key=value` overrides.
    pub fn from_toml_with(text: &str, overrides: &[String]) -> Result<Self, CliError> {
        let mut table: toml::Table = toml::from_str(text).map_err(|e| CliError::Validation(format!("config: {e}")))?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        table
            .try_into()
            .map_err(|e: toml::de::Error| CliError::Validation(format!("config: {e}")))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    pub fn load_data(&self) -> Result<(Dataset, Dataset), CliError> {
        match (&self.data.train, &self.data.test) {
            (Some(train), Some(test)) => {
                let tr = parse_svmlight(&read_text(train)?)?.with_split(Split::Train);
                let te = parse_svmlight(&read_text(test)?)?.with_split(Split::Test);
                Ok((tr, te))
            }
            (None, None) => {
                let s = &self.data.synthetic;
                Ok((
                    generate_synthetic_split(s.queries, s.docs, s.features, s.seed, Split::Train)?,
                    generate_synthetic_split(s.test_queries, s.docs, s.features, s.seed, Split::Test)?,
                ))
            }
            _ => Err(CliError::Validation(
                "data.train and data.test must be given together".into(),
            )),
        }
    }
}

fn apply_override(table: &mut toml::Table, spec: &str) -> Result<(), CliError> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| CliError::Usage(format!("override `{spec}` is not KEY=VALUE")))?;
    let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_owned()));
    let parts: Vec<&str> = key.trim().split('.').collect();
    let mut cur = table;
    for p in &parts[..parts.len() - 1] {
        cur = cur
            .entry((*p).to_owned())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| CliError::Validation(format!("override `{key}`: `{p}` is not a section")))?;
    }
    cur.insert(parts[parts.len() - 1].to_owned(), value);
    Ok(())
}

/// Parses `a..b` (half-open) or `a..=b`.
pub fn parse_seed_range(text: &str) -> Result<Vec<u64>, CliError> {
    let bad = || CliError::Usage(format!("seed range `{text}` is not `a..b` or `a..=b`"));
    let (a, b, inclusive) = if let Some((a, b)) = text.split_once("..=") {
        (a, b, true)
    } else if let Some((a, b)) = text.split_once("..") {
        (a, b, false)
    } else {
        return Err(bad());
    };
    let a: u64 = a.trim().parse().map_err(|_| bad())?;
    let b: u64 = b.trim().parse().map_err(|_| bad())?;
    let seeds: Vec<u64> = if inclusive { (a..=b).collect() } else { (a..b).collect() };
    if seeds.is_empty() {
        return Err(CliError::Validation(format!("seed range `{text}` is empty")));
    }
    Ok(seeds)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedRecord {
    pub seed: u64,
    pub curves: PathBuf,
    pub ranker: PathBuf,
    pub propensity: PathBuf,
    pub final_metrics: RankingMetrics,
    pub normalized_propensity_at_1: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub artifact_version: String,
    pub config: RunConfig,
    pub seeds: Vec<u64>,
    pub runs: Vec<SeedRecord>,
    pub wall_clock_seconds: f64,
}

fn write_run(out: &Path, result: &RunResult) -> Result<SeedRecord, CliError> {
    let stem = format!("{}_seed{}", result.config.algorithm, result.config.seed);
    let curves = out.join(format!("{stem}_curves.csv"));
    let ranker = out.join(format!("{stem}_ranker.json"));
    let propensity = out.join(format!("{stem}_propensity.csv"));

    let mut buf = Vec::new();
    write_curves(&result.curves, &mut buf)?;
    fs::write(&curves, buf).map_err(io_err(&curves))?;
    write_text(
        &ranker,
        &serde_json::to_string(&result.ranker).expect("snapshot serialises"),
    )?;
    write_text(&propensity, &result.final_propensity.to_csv())?;
    Ok(SeedRecord {
        seed: result.config.seed,
        curves,
        ranker,
        propensity,
        final_metrics: result.final_metrics.clone(),
        normalized_propensity_at_1: result.normalized_propensity_at_1(),
    })
}

fn train(args: &TrainArgs) -> Result<String, CliError> {
    let text = match &args.config {
        Some(p) => read_text(p)?,
        None => String::new(),
    };
    let mut cfg = RunConfig::from_toml_with(&text, &args.overrides)?;
    if let Some(a) = args.algorithm {
        cfg.experiment.algorithm = a.into();
    }
    if let Some(p) = args.paradigm {
        cfg.experiment.paradigm = p.into();
    }
    if let Some(s) = args.steps {
        cfg.experiment.total_steps = s;
    }
    let seeds = match (&args.seeds, args.seed) {
        (Some(r), _) => parse_seed_range(r)?,
        (None, Some(s)) => vec![s],
        (None, None) => vec![cfg.experiment.seed],
    };
    cfg.experiment
        .validate()
        .map_err(|e| CliError::Validation(e.to_string()))?;
    let (train, test) = cfg.load_data()?;
    fs::create_dir_all(&args.out).map_err(io_err(&args.out))?;

    let start = Instant::now();
    let jobs = args
        .jobs
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
        .max(1);
    let mut results: Vec<Result<RunResult, CliError>> = Vec::with_capacity(seeds.len());
    for chunk in seeds.chunks(jobs) {
        std::thread::scope(|scope| {
            let handles: Vec<_> = chunk
                .iter()
                .map(|&seed| {
                    let mut c = cfg.experiment.clone();
                    c.seed = seed;
                    let (train, test) = (&train, &test);
                    scope.spawn(move || run(&c, train, test).map_err(CliError::from))
                })
                .collect();
            for h in handles {
                results.push(h.join().expect("worker panicked"));
            }
        });
    }
    let mut runs = Vec::with_capacity(results.len());
    for r in results {
        runs.push(write_run(&args.out, &r?)?);
    }
    let manifest = RunManifest {
        artifact_version: env!("CARGO_PKG_VERSION").to_owned(),
        config: cfg,
        seeds,
        runs,
        wall_clock_seconds: start.elapsed().as_secs_f64(),
    };
    for r in &manifest.runs {
        for p in [&r.curves, &r.ranker, &r.propensity] {
            if !p.exists() {
                return Err(CliError::Validation(format!("{} was not written", p.display())));
            }
        }
    }
    let path = args.out.join("manifest.json");
    write_text(
        &path,
        &serde_json::to_string_pretty(&manifest).expect("manifest serialises"),
    )?;

    let mut report = String::new();
    for r in &manifest.runs {
        report.push_str(&format!(
            "seed {}: ndcg@10 {:.4}  err@10 {:.4}  norm_prop@1 {:.3}\n",
            r.seed, r.final_metrics.ndcg[3], r.final_metrics.err[3], r.normalized_propensity_at_1
        ));
    }
    report.push_str(&format!("manifest: {}\n", path.display()));
    Ok(report)
}

fn gen_data(args: &GenDataArgs) -> Result<String, CliError> {
    fs::create_dir_all(&args.out).map_err(io_err(&args.out))?;
    let mut report = String::new();
    for (split, n, name) in [
        (Split::Train, args.queries, "train.txt"),
        (Split::Valid, args.valid_queries, "valid.txt"),
        (Split::Test, args.test_queries, "test.txt"),
    ] {
        if n == 0 {
            continue;
        }
        let d = generate_synthetic_split(n, args.docs, args.features, args.seed, split)?;
        let path = args.out.join(name);
        write_text(&path, &to_svmlight(&d))?;
        report.push_str(&format!(
            "{}: {} queries, {} documents\n",
            path.display(),
            n,
            d.num_docs()
        ));
    }
    Ok(report)
}

fn eval(args: &EvalArgs) -> Result<String, CliError> {
    let snap: RankerSnapshot = serde_json::from_str(&read_text(&args.snapshot)?)
        .map_err(|e| CliError::Validation(format!("{}: {e}", args.snapshot.display())))?;
    let ranker = RankerMlp::from_snapshot(&snap).map_err(|e| CliError::Validation(e.to_string()))?;
    let data = crate::data::parse_svmlight_with(&read_text(&args.data)?, args.y_max)?;
    if data.feature_dim > ranker.feature_dim() {
        return Err(CliError::Validation(format!(
            "data has {} features, snapshot expects {}",
            data.feature_dim,
            ranker.feature_dim()
        )));
    }
    let data = pad_features(data, ranker.feature_dim());
    let m = evaluate(&ranker, &data, args.y_max)?;
    if args.json {
        return Ok(serde_json::to_string_pretty(&m).expect("metrics serialise") + "\n");
    }
    let mut out = String::new();
    for (i, k) in crate::metrics::CUTOFFS.iter().enumerate() {
        out.push_str(&format!("ndcg@{k:<3} {:.4}   err@{k:<3} {:.4}\n", m.ndcg[i], m.err[i]));
    }
    Ok(out)
}

/// Sparse files may omit trailing all-zero columns.
fn pad_features(mut data: Dataset, width: usize) -> Dataset {
    if data.feature_dim == width {
        return data;
    }
    for g in &mut data.groups {
        for d in &mut g.docs {
            let mut v = d.features.as_slice().to_vec();
            v.resize(width, 0.0);
            d.features = crate::data::FeatureVector::new(v).expect("finite");
        }
    }
    data.feature_dim = width;
    data
}

fn oracle_demo(args: &OracleArgs) -> Result<String, CliError> {
    let model = match args.preset {
        Preset::Strong => ToyCausalModel::reference_strong(),
        Preset::Weak => ToyCausalModel::reference_weak(),
    };
    let rows = overestimation_report(&model).map_err(|e| CliError::Validation(e.to_string()))?;
    Ok(match args.format {
        ReportFormat::Table => render_report_table(&rows),
        ReportFormat::Csv => render_report_csv(&rows),
        ReportFormat::Both => format!("{}\n{}", render_report_table(&rows), render_report_csv(&rows)),
    })
}

/// Mean and sample standard deviation of every metric column per
/// `(algorithm, step)`.
pub fn aggregate_curves(rows: &[CurveRow]) -> String {
    let mut groups: BTreeMap<(String, usize), Vec<&CurveRow>> = BTreeMap::new();
    for r in rows {
        groups.entry((r.algorithm.clone(), r.step)).or_default().push(r);
    }
    let metrics = &CURVE_HEADER[3..];
    let mut out = String::from("algorithm,step,n");
    for m in metrics {
        out.push_str(&format!(",{m}_mean,{m}_std"));
    }
    out.push('\n');
    for ((alg, step), rs) in &groups {
        let n = rs.len();
        out.push_str(&format!("{alg},{step},{n}"));
        for j in 0..metrics.len() {
            let vals: Vec<f64> = rs.iter().map(|r| r.values()[j]).collect();
            let mean = vals.iter().sum::<f64>() / n as f64;
            let std = if n > 1 {
                (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
            } else {
                0.0
            };
            out.push_str(&format!(",{mean},{std}"));
        }
        out.push('\n');
    }
    out
}

fn export_curves(args: &ExportArgs) -> Result<String, CliError> {
    let mut rows = Vec::new();
    for p in &args.inputs {
        let f = fs::File::open(p).map_err(io_err(p))?;
        rows.extend(read_curves(f)?);
    }
    let table = aggregate_curves(&rows);
    match &args.out {
        Some(p) => {
            write_text(p, &table)?;
            Ok(format!("{}\n", p.display()))
        }
        None => Ok(table),
    }
}

pub fn execute(cli: &Cli) -> Result<String, CliError> {
    match &cli.command {
        Command::GenData(a) => gen_data(a),
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::OracleDemo(a) => oracle_demo(a),
        Command::ExportCurves(a) => export_curves(a),
    }
}

/// Parses `args` (including the program name) and runs the command.
pub fn run_cli<I, T>(args: I) -> Result<String, CliError>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    match Cli::try_parse_from(args) {
        Ok(cli) => execute(&cli),
        Err(e) => match e.kind() {
            clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => Ok(e.render().to_string()),
            _ => Err(CliError::Usage(e.render().to_string())),
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seed_ranges() {
        assert_eq!(parse_seed_range("1..4").unwrap(), vec![1, 2, 3]);
        assert_eq!(parse_seed_range("1..=3").unwrap(), vec![1, 2, 3]);
        assert!(matches!(parse_seed_range("x"), Err(CliError::Usage(_))));
        assert!(parse_seed_range("3..3").is_err());
    }

    #[test]
    fn overrides_reach_nested_keys() {
        let cfg = RunConfig::from_toml_with(
            "[experiment]\ntotal_steps = 100\n",
            &[
                "experiment.learning_rate=0.03".into(),
                "experiment.simulation.eta=2".into(),
                "experiment.algorithm=dla".into(),
            ],
        )
        .unwrap();
        assert_eq!(cfg.experiment.total_steps, 100);
        assert_eq!(cfg.experiment.learning_rate, 0.03);
        assert_eq!(cfg.experiment.simulation.eta, 2.0);
        assert_eq!(cfg.experiment.algorithm, Algorithm::Dla);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(RunConfig::from_toml_with("[experiment]\nbogus = 1\n", &[]).is_err());
        assert!(RunConfig::from_toml_with("", &["nokey".into()]).is_err());
    }

    #[test]
    fn config_roundtrip() {
        let cfg = RunConfig::default();
        assert_eq!(RunConfig::from_toml_with(&cfg.to_toml(), &[]).unwrap(), cfg);
    }

    #[test]
    fn aggregation_mean_and_sample_std() {
        let m = RankingMetrics::default();
        let mut a = CurveRow::new(10, "dla", 1, &m, 2.0, 0.0);
        let mut b = CurveRow::new(10, "dla", 2, &m, 4.0, 0.0);
        a.ndcg10 = 0.5;
        b.ndcg10 = 0.7;
        let out = aggregate_curves(&[a, b]);
        let line = out.lines().nth(1).unwrap();
        let cols: Vec<&str> = line.split(',').collect();
        assert_eq!(&cols[..3], &["dla", "10", "2"]);
        let header: Vec<&str> = out.lines().next().unwrap().split(',').collect();
        let idx = header.iter().position(|h| *h == "ndcg@10_mean").unwrap();
        assert!((cols[idx].parse::<f64>().unwrap() - 0.6).abs() < 1e-12);
        let sd: f64 = cols[idx + 1].parse().unwrap();
        assert!((sd - 0.02f64.sqrt()).abs() < 1e-12);
        let idx = header.iter().position(|h| *h == "norm_prop@1_mean").unwrap();
        assert_eq!(cols[idx], "3");
    }

    #[test]
    fn usage_errors_exit_two() {
        let e = run_cli(["ultr", "train", "--bogus"]).unwrap_err();
        assert_eq!(e.exit_code(), 2);
        let e = run_cli(["ultr", "nope"]).unwrap_err();
        assert_eq!(e.exit_code(), 2);
    }

    #[test]
    fn validation_errors_exit_one() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().to_str().unwrap();
        let e = run_cli(["ultr", "train", "--set", "experiment.refresh_interval=7", "--out", out]).unwrap_err();
        assert_eq!(e.exit_code(), 1);
    }

    #[test]
    fn oracle_demo_prints_reference() {
        let out = run_cli(["ultr", "oracle-demo", "--preset", "strong", "--format", "csv"]).unwrap();
        assert!(out.lines().count() >= 3);
    }
}
