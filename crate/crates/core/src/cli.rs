//! `iqb` command line: `validate`, `aggregate`, `score` and `explain`.
//!
//! Exit codes: 0 success, 1 data or validation failure, 2 usage or parse error.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use chrono::Utc;
use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::aggregate::{build_aggregate_matrix, AggregateMatrix, AggregateStat};
use crate::config::Config;
use crate::ingest::{
    detect_canonical, parse_per_test, parse_pre_aggregated, write_aggregates_csv, write_rejects_csv,
    AdapterSpec, Reject, TimeWindow,
};
use crate::model::{Granularity, MeasurementRecord, QualityLevel, UseCase};
use crate::report::{self, InputDigest, RunManifest};
use crate::scoring::{score_region, ScoreReport};
use crate::Error;

pub const EXIT_OK: i32 = 0;
pub const EXIT_DATA: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "iqb", version, about = "Internet Quality Barometer scoring engine")]
struct Cli {
    /// Config file (TOML). Falls back to $IQB_CONFIG.
    #[arg(short, long, global = true, env = "IQB_CONFIG")]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Check weights, thresholds and datasets; print one finding per line.
    Validate,
    /// Aggregate measurements into the pre-aggregated CSV schema.
    Aggregate {
        #[command(flatten)]
        inputs: InputArgs,
        /// Output file (default: stdout).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score every region (or one) and emit reports.
    Score {
        #[command(flatten)]
        inputs: InputArgs,
        #[arg(long)]
        region: Option<String>,
        #[arg(long, value_enum, default_value_t = LevelArg::High)]
        level: LevelArg,
        #[arg(long, value_enum, default_value_t = Format::Json)]
        format: Format,
        /// Output file (default: stdout).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print each cell's contribution to one region's score.
    Explain {
        #[command(flatten)]
        inputs: InputArgs,
        #[arg(long)]
        region: String,
        #[arg(long = "use-case", value_parser = parse_use_case)]
        use_case: Option<UseCase>,
        #[arg(long, value_enum, default_value_t = LevelArg::High)]
        level: LevelArg,
    },
}

#[derive(Debug, Args)]
struct InputArgs {
    /// CSV files in the canonical measurement or pre-aggregated schema.
    inputs: Vec<PathBuf>,
    /// Source export read through an adapter spec, as ADAPTER.toml=DATA.csv.
    #[arg(long = "adapted", value_name = "SPEC=FILE")]
    adapted: Vec<String>,
    /// Keep per-test rows with timestamps in START/END (RFC 3339, either side optional).
    #[arg(long)]
    window: Option<String>,
    /// Write rejected rows as CSV (row_number,reason) to this file.
    #[arg(long)]
    rejects: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum LevelArg {
    High,
    #[value(alias = "minimum")]
    Min,
}

impl From<LevelArg> for QualityLevel {
    fn from(l: LevelArg) -> Self {
        match l {
            LevelArg::High => QualityLevel::High,
            LevelArg::Min => QualityLevel::Minimum,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Csv,
}

fn parse_use_case(s: &str) -> Result<UseCase, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

/// Failure carrying its exit code.
struct Failure {
    code: i32,
    message: String,
}

impl Failure {
    fn data(message: impl Into<String>) -> Self {
        Failure { code: EXIT_DATA, message: message.into() }
    }

    fn usage(message: impl Into<String>) -> Self {
        Failure { code: EXIT_USAGE, message: message.into() }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) | Error::Parse { .. } | Error::Io { .. } | Error::Csv(_) | Error::Json(_) => {
                Failure::usage(e.to_string())
            }
            _ => Failure::data(e.to_string()),
        }
    }
}

type CmdResult = Result<i32, Failure>;

/// Entry point shared by the binary and the tests.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if e.use_stderr() { stderr.write_all(text.as_bytes()) } else { stdout.write_all(text.as_bytes()) };
            return code;
        }
    };
    match dispatch(cli, stdout, stderr) {
        Ok(code) => code,
        Err(f) => {
            let _ = writeln!(stderr, "error: {}", f.message);
            f.code
        }
    }
}

fn dispatch(cli: Cli, stdout: &mut dyn Write, stderr: &mut dyn Write) -> CmdResult {
    let config_path = cli
        .config
        .ok_or_else(|| Failure::usage("no config: pass --config or set IQB_CONFIG"))?;
    match cli.command {
        Command::Validate => cmd_validate(&config_path, stdout),
        Command::Aggregate { inputs, out } => cmd_aggregate(&config_path, &inputs, out.as_deref(), stdout, stderr),
        Command::Score { inputs, region, level, format, out } => cmd_score(
            &config_path,
            &inputs,
            region.as_deref(),
            level.into(),
            format,
            out.as_deref(),
            stdout,
            stderr,
        ),
        Command::Explain { inputs, region, use_case, level } => {
            cmd_explain(&config_path, &inputs, &region, use_case, level.into(), stdout, stderr)
        }
    }
}

fn io_failure(path: &Path, e: std::io::Error) -> Failure {
    Failure::usage(format!("{}: {e}", path.display()))
}

fn out_failure(e: std::io::Error) -> Failure {
    Failure::usage(format!("write: {e}"))
}

fn load_config(path: &Path) -> Result<(Config, String), Failure> {
    let text = fs::read_to_string(path).map_err(|e| io_failure(path, e))?;
    let config = Config::from_toml_str(&text).map_err(|e| Failure::usage(format!("{}: {e}", path.display())))?;
    Ok((config, text))
}

/// Loads the config and refuses to run on validation findings.
fn load_valid_config(path: &Path, stderr: &mut dyn Write) -> Result<Config, Failure> {
    let (config, _) = load_config(path)?;
    let findings = config.validate();
    if !findings.is_empty() {
        for f in &findings {
            let _ = writeln!(stderr, "{f}");
        }
        return Err(Failure::data(format!("config has {} finding(s)", findings.len())));
    }
    Ok(config)
}

fn cmd_validate(path: &Path, stdout: &mut dyn Write) -> CmdResult {
    let (config, _) = load_config(path)?;
    let findings = config.validate();
    for f in &findings {
        writeln!(stdout, "{f}").map_err(out_failure)?;
    }
    Ok(if findings.is_empty() { EXIT_OK } else { EXIT_DATA })
}

/// Everything read from the input files.
struct Loaded {
    records: Vec<MeasurementRecord>,
    provided: Vec<AggregateStat>,
    digests: Vec<InputDigest>,
}

fn digest(path: &str, bytes: &[u8]) -> InputDigest {
    InputDigest { path: path.to_string(), sha256: hex::encode(Sha256::digest(bytes)) }
}

fn load_inputs(args: &InputArgs, config: &Config, stderr: &mut dyn Write) -> Result<Loaded, Failure> {
    let window = args
        .window
        .as_deref()
        .map(str::parse::<TimeWindow>)
        .transpose()
        .map_err(|e| Failure::usage(e.to_string()))?;
    let percentile = config.aggregation.percentile;

    let mut jobs: Vec<(PathBuf, AdapterSpec)> = Vec::new();
    let mut digests = Vec::new();
    for path in &args.inputs {
        let bytes = fs::read(path).map_err(|e| io_failure(path, e))?;
        let header = String::from_utf8_lossy(&bytes);
        let header = header.lines().next().unwrap_or("");
        let spec = match detect_canonical(header) {
            Some(Granularity::PerTest) => AdapterSpec::canonical_per_test(),
            Some(Granularity::PreAggregated) => AdapterSpec::canonical_pre_aggregated(),
            None => {
                return Err(Failure::usage(format!(
                    "{}: header matches no canonical schema; read it with --adapted SPEC=FILE",
                    path.display()
                )))
            }
        };
        jobs.push((path.clone(), spec));
    }
    for pair in &args.adapted {
        let (spec_path, data_path) = pair
            .split_once('=')
            .ok_or_else(|| Failure::usage(format!("--adapted {pair:?}: expected SPEC=FILE")))?;
        let spec_path = Path::new(spec_path);
        let spec_bytes = fs::read(spec_path).map_err(|e| io_failure(spec_path, e))?;
        digests.push(digest(&spec_path.display().to_string(), &spec_bytes));
        let spec = AdapterSpec::load(spec_path)?;
        jobs.push((PathBuf::from(data_path), spec));
    }

    let mut loaded = Loaded { records: Vec::new(), provided: Vec::new(), digests };
    let mut all_rejects: Vec<(String, Reject)> = Vec::new();
    for (path, spec) in jobs {
        let bytes = fs::read(&path).map_err(|e| io_failure(&path, e))?;
        let label = path.display().to_string();
        loaded.digests.push(digest(&label, &bytes));
        let wrap = |e: Error| Failure::usage(format!("{label}: {e}"));
        let rejects = match spec.granularity {
            Granularity::PerTest => {
                let parsed = parse_per_test(bytes.as_slice(), &spec, window.as_ref()).map_err(wrap)?;
                if parsed.filtered > 0 {
                    let _ = writeln!(stderr, "{label}: {} rows outside window", parsed.filtered);
                }
                loaded.records.extend(parsed.records);
                parsed.rejects
            }
            Granularity::PreAggregated => {
                let parsed = parse_pre_aggregated(bytes.as_slice(), &spec, percentile).map_err(wrap)?;
                loaded.provided.extend(parsed.stats);
                parsed.rejects
            }
        };
        if !rejects.is_empty() {
            let _ = writeln!(stderr, "{label}: {} rows rejected", rejects.len());
        }
        all_rejects.extend(rejects.into_iter().map(|r| (label.clone(), r)));
    }

    if let Some(path) = &args.rejects {
        let mut buf = Vec::new();
        let rows: Vec<Reject> = all_rejects
            .into_iter()
            .map(|(file, r)| Reject { row_number: r.row_number, reason: format!("{file}: {}", r.reason) })
            .collect();
        write_rejects_csv(&rows, &mut buf)?;
        fs::write(path, buf).map_err(|e| io_failure(path, e))?;
    }
    Ok(loaded)
}

fn build_matrix(loaded: &Loaded, config: &Config, stderr: &mut dyn Write) -> Result<AggregateMatrix, Failure> {
    let matrix = build_aggregate_matrix(&loaded.records, &loaded.provided, config)?;
    for w in &matrix.warnings {
        let _ = writeln!(stderr, "warning: {w}");
    }
    Ok(matrix)
}

fn emit(out: Option<&Path>, bytes: &[u8], stdout: &mut dyn Write) -> Result<(), Failure> {
    match out {
        Some(path) => fs::write(path, bytes).map_err(|e| io_failure(path, e)),
        None => stdout.write_all(bytes).map_err(out_failure),
    }
}

fn cmd_aggregate(
    config_path: &Path,
    inputs: &InputArgs,
    out: Option<&Path>,
    stdout: &mut dyn Write,
    stderr: &mut dyn Write,
) -> CmdResult {
    let config = load_valid_config(config_path, stderr)?;
    let loaded = load_inputs(inputs, &config, stderr)?;
    let matrix = build_matrix(&loaded, &config, stderr)?;
    if matrix.is_empty() {
        return Err(Failure::data("no data"));
    }
    let mut buf = Vec::new();
    write_aggregates_csv(matrix.stats.values(), &mut buf)?;
    emit(out, &buf, stdout)?;
    Ok(EXIT_OK)
}

fn score_all(
    matrix: &AggregateMatrix,
    config: &Config,
    regions: &[String],
    level: QualityLevel,
) -> Vec<(String, crate::Result<ScoreReport<f64>>)> {
    regions
        .par_iter()
        .map(|r| (r.clone(), score_region::<f64>(matrix, &config.thresholds, &config.weights, r, level)))
        .collect()
}

#[allow(clippy::too_many_arguments)]
fn cmd_score(
    config_path: &Path,
    inputs: &InputArgs,
    region: Option<&str>,
    level: QualityLevel,
    format: Format,
    out: Option<&Path>,
    stdout: &mut dyn Write,
    stderr: &mut dyn Write,
) -> CmdResult {
    let config = load_valid_config(config_path, stderr)?;
    let loaded = load_inputs(inputs, &config, stderr)?;
    let matrix = build_matrix(&loaded, &config, stderr)?;

    let regions = match region {
        Some(r) if !matrix.has_region(r) => return Err(Failure::data(format!("unknown region {r:?}"))),
        Some(r) => vec![r.to_string()],
        None => matrix.regions(),
    };
    if regions.is_empty() {
        return Err(Failure::data("no data"));
    }

    let mut reports = Vec::new();
    let mut insufficient = Vec::new();
    let mut failed = false;
    for (region, result) in score_all(&matrix, &config, &regions, level) {
        match result {
            Ok(report) => reports.push(report),
            Err(Error::InsufficientData(_)) => {
                let _ = writeln!(stderr, "{region}: insufficient data");
                insufficient.push(region);
            }
            Err(e) => {
                let _ = writeln!(stderr, "{region}: {e}");
                failed = true;
            }
        }
    }

    let mut parameters = BTreeMap::from([
        ("command".to_string(), "score".to_string()),
        ("level".to_string(), level.token().to_string()),
        ("format".to_string(), format!("{format:?}").to_lowercase()),
    ]);
    if let Some(r) = region {
        parameters.insert("region".into(), r.to_string());
    }
    if let Some(w) = &inputs.window {
        parameters.insert("window".into(), w.clone());
    }
    let manifest = RunManifest::new(config.digest(), loaded.digests, Utc::now(), parameters);

    let mut buf = Vec::new();
    match format {
        Format::Json => report::write_json(&manifest, &reports, &insufficient, &mut buf)?,
        Format::Csv => {
            report::write_csv(&reports, &mut buf)?;
            if let Some(path) = out {
                let mut sidecar = path.as_os_str().to_owned();
                sidecar.push(".manifest.json");
                let text = serde_json::to_vec_pretty(&manifest).map_err(Error::from)?;
                fs::write(&sidecar, text).map_err(|e| io_failure(Path::new(&sidecar), e))?;
            }
        }
    }
    emit(out, &buf, stdout)?;
    Ok(if insufficient.is_empty() && !failed { EXIT_OK } else { EXIT_DATA })
}

fn cmd_explain(
    config_path: &Path,
    inputs: &InputArgs,
    region: &str,
    use_case: Option<UseCase>,
    level: QualityLevel,
    stdout: &mut dyn Write,
    stderr: &mut dyn Write,
) -> CmdResult {
    let config = load_valid_config(config_path, stderr)?;
    let loaded = load_inputs(inputs, &config, stderr)?;
    let matrix = build_matrix(&loaded, &config, stderr)?;
    let report = score_region::<f64>(&matrix, &config.thresholds, &config.weights, region, level)?;
    let mut buf = Vec::new();
    report::write_explain(&report, use_case, &mut buf)?;
    stdout.write_all(&buf).map_err(out_failure)?;
    Ok(EXIT_OK)
}
