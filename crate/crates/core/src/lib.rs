//! Internet Quality Barometer scoring engine.
//!
//! Measurements from several datasets are aggregated per region with a
//! nearest-rank tail percentile, compared against per-use-case thresholds,
//! and rolled up through three weighted tiers (datasets, network
//! requirements, use cases) into a single score in `[0, 1]`.
//!
//! The scoring arithmetic is generic over [`Scalar`], so the same code runs
//! in `f64` for reports and in exact rationals ([`Rational`]) for checks.

pub mod aggregate;
pub mod cli;
pub mod config;
pub mod ingest;
pub mod model;
pub mod report;
pub mod scoring;
pub mod units;

use std::fmt::Debug;
use std::path::PathBuf;

use num_traits::{FromPrimitive, Num, ToPrimitive};

pub use aggregate::{
    aggregate_region, build_aggregate_matrix, nearest_rank_percentile, tail_percentile_for,
    AggregateMatrix, AggregateOutcome, AggregateStat, AggregationMode, Statistic,
};
pub use config::{AggregationConfig, Config, DatasetSpec};
pub use model::{
    default_weight_table, normalize_weights, DatasetId, Direction, Finding, Granularity,
    MeasurementRecord, MetricKind, NormalizedWeights, QualityLevel, ThresholdTable, UseCase,
    Weight, WeightTable,
};
pub use scoring::{
    binary_requirement_score, iqb_score, iqb_score_flat, iqb_score_nested,
    requirement_agreement_score, score_region, use_case_score, BinaryScore, BinaryScoreMatrix,
    ScoreReport,
};

/// Numeric type the scoring tiers are evaluated in.
pub trait Scalar:
    Num + Copy + PartialOrd + FromPrimitive + ToPrimitive + Debug + Send + Sync + 'static
{
}

impl<T> Scalar for T where
    T: Num + Copy + PartialOrd + FromPrimitive + ToPrimitive + Debug + Send + Sync + 'static
{
}

/// Exact rational scalar.
pub type Rational = num_rational::Rational64;

pub type NormalizedWeightsF64 = NormalizedWeights<f64>;
pub type ExactNormalizedWeights = NormalizedWeights<Rational>;
pub type ScoreReportF64 = ScoreReport<f64>;
pub type ExactScoreReport = ScoreReport<Rational>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("unknown {kind} token {token:?}")]
    UnknownToken { kind: &'static str, token: String },
    #[error("invalid dataset id {0:?}: expected [a-z0-9_-]+")]
    InvalidDatasetId(String),
    #[error("invalid record: {0}")]
    InvalidRecord(String),
    #[error("zero weight sum in tier {tier} at {key}")]
    ZeroWeightSum { tier: &'static str, key: String },
    #[error("unscorable {tier}: {key} has no positive weight among present data")]
    Unscorable { tier: &'static str, key: String },
    #[error("flat form requires full coverage: missing {0}")]
    IncompleteCoverage(String),
    #[error("no samples")]
    NoSamples,
    #[error("non-finite sample at index {0}")]
    NonFinite(usize),
    #[error("percentile {0} outside (0, 100]")]
    InvalidPercentile(f64),
    #[error("duplicate provided statistic for {0}")]
    DuplicateStat(String),
    #[error("insufficient data for region {0}")]
    InsufficientData(String),
    #[error("impossible fixture scenario: {0}")]
    ImpossibleScenario(String),
    #[error("config: {0}")]
    Config(String),
    #[error("parse {path}: {message}")]
    Parse { path: String, message: String },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
