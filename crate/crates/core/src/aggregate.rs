//! Per-region aggregation of raw samples into one statistic per
//! (region, dataset, metric), using an exact nearest-rank percentile.

use std::collections::BTreeMap;
use std::fmt;

use num_traits::Float;
use rayon::prelude::*;

use crate::config::{Config, DatasetStatistic};
use crate::model::{DatasetId, Direction, Finding, Granularity, MeasurementRecord, MetricKind};
use crate::{AggregationConfig, Error, Result};

/// How the configured percentile is oriented.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AggregationMode {
    /// "At least p% of samples meet the threshold", for either metric direction.
    Tail,
    /// The plain p-th percentile regardless of direction.
    Literal,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Statistic {
    Tail { percentile: f64 },
    Literal { percentile: f64 },
    /// Published by the source; `declared` is the source's own statistic name.
    Provided { declared: String },
}

impl Statistic {
    pub fn token(&self) -> String {
        match self {
            Statistic::Tail { percentile } => format!("p{percentile}_tail"),
            Statistic::Literal { percentile } => format!("literal_p{percentile}"),
            Statistic::Provided { declared } => declared.clone(),
        }
    }

    pub fn is_provided(&self) -> bool {
        matches!(self, Statistic::Provided { .. })
    }
}

/// Whether a declared statistic name denotes the configured percentile.
pub fn declared_matches_percentile(declared: &str, percentile: f64) -> bool {
    let p = format!("p{percentile}");
    let accepted = [p.clone(), format!("{p}_tail"), format!("literal_{p}"), format!("percentile_{percentile}")];
    accepted.iter().any(|a| a.eq_ignore_ascii_case(declared))
}

impl fmt::Display for Statistic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.token())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AggregateStat {
    pub region_id: String,
    pub dataset: DatasetId,
    pub metric: MetricKind,
    pub statistic: Statistic,
    pub value: f64,
    pub sample_count: usize,
    pub warnings: Vec<Finding>,
}

impl AggregateStat {
    pub fn key(&self) -> AggregateKey {
        (self.region_id.clone(), self.dataset.clone(), self.metric)
    }

    pub fn key_label(&self) -> String {
        format!("{}/{}/{}", self.region_id, self.dataset, self.metric)
    }
}

pub type AggregateKey = (String, DatasetId, MetricKind);

#[derive(Debug, Clone, PartialEq)]
pub enum AggregateOutcome {
    Stat(AggregateStat),
    /// No matching samples. Not the same thing as a failing value.
    InsufficientData,
}

fn check_percentile(p: f64) -> Result<()> {
    if p.is_finite() && p > 0.0 && p <= 100.0 {
        Ok(())
    } else {
        Err(Error::InvalidPercentile(p))
    }
}

/// 1-based rank `ceil(p/100 * n)`, clamped to `[1, n]`.
pub(crate) fn nearest_rank(n: usize, p: f64) -> usize {
    let target = p * n as f64;
    let mut rank = (target / 100.0).ceil() as usize;
    // smallest r with 100 r >= p n, whatever the division rounded to
    while rank > 0 && (rank - 1) as f64 * 100.0 >= target {
        rank -= 1;
    }
    while (rank as f64) * 100.0 < target {
        rank += 1;
    }
    rank.clamp(1, n)
}

fn check_samples<T: Float>(values: &[T]) -> Result<()> {
    if values.is_empty() {
        return Err(Error::NoSamples);
    }
    match values.iter().position(|v| !v.is_finite()) {
        Some(i) => Err(Error::NonFinite(i)),
        None => Ok(()),
    }
}

/// k-th smallest (1-based) of finite values.
fn order_statistic<T: Float>(values: &[T], k: usize) -> T {
    let mut scratch = values.to_vec();
    let (_, v, _) = scratch.select_nth_unstable_by(k - 1, |a, b| a.partial_cmp(b).expect("finite"));
    *v
}

/// The `ceil(p/100 * n)`-th smallest value. Always an element of `values`.
pub fn nearest_rank_percentile<T: Float>(values: &[T], p: f64) -> Result<T> {
    check_percentile(p)?;
    check_samples(values)?;
    Ok(order_statistic(values, nearest_rank(values.len(), p)))
}

/// Percentile to compare against the threshold so that "at least `p`% of
/// samples meet it" reads the same for both metric directions.
pub fn tail_percentile_for(metric: MetricKind, p: f64) -> f64 {
    match metric.direction() {
        Direction::LowerIsBetter => p,
        Direction::HigherIsBetter => 100.0 - p,
    }
}

/// Tail statistic: the value such that at least `p`% of samples are at least
/// as good. For higher-is-better metrics this is the `ceil(p/100 * n)`-th
/// largest, i.e. the nominal `100 - p` percentile counted from the top, which
/// keeps the equivalence exact when `p * n / 100` is an integer.
pub fn tail_value<T: Float>(values: &[T], metric: MetricKind, p: f64) -> Result<T> {
    check_percentile(p)?;
    check_samples(values)?;
    let n = values.len();
    let from_top = nearest_rank(n, p);
    let k = match metric.direction() {
        Direction::LowerIsBetter => from_top,
        Direction::HigherIsBetter => n - from_top + 1,
    };
    Ok(order_statistic(values, k))
}

fn aggregate_samples(
    key: &AggregateKey,
    samples: &[f64],
    mode: AggregationMode,
    cfg: &AggregationConfig,
) -> Result<AggregateStat> {
    let (region_id, dataset, metric) = key;
    let p = cfg.percentile;
    let (value, statistic) = match mode {
        AggregationMode::Tail => (tail_value(samples, *metric, p)?, Statistic::Tail { percentile: p }),
        AggregationMode::Literal => {
            (nearest_rank_percentile(samples, p)?, Statistic::Literal { percentile: p })
        }
    };
    let mut stat = AggregateStat {
        region_id: region_id.clone(),
        dataset: dataset.clone(),
        metric: *metric,
        statistic,
        value,
        sample_count: samples.len(),
        warnings: Vec::new(),
    };
    if stat.sample_count < cfg.min_samples {
        stat.warnings.push(Finding::new(
            stat.key_label(),
            format!("low sample count: {} < {}", stat.sample_count, cfg.min_samples),
        ));
    }
    Ok(stat)
}

pub fn aggregate_region(
    records: &[MeasurementRecord],
    region: &str,
    dataset: &DatasetId,
    metric: MetricKind,
    mode: AggregationMode,
    cfg: &AggregationConfig,
) -> Result<AggregateOutcome> {
    check_percentile(cfg.percentile)?;
    let samples: Vec<f64> = records
        .iter()
        .filter(|r| r.region_id == region && &r.dataset == dataset && r.metric == metric)
        .map(|r| r.value)
        .collect();
    if samples.is_empty() {
        return Ok(AggregateOutcome::InsufficientData);
    }
    let key = (region.to_string(), dataset.clone(), metric);
    aggregate_samples(&key, &samples, mode, cfg).map(AggregateOutcome::Stat)
}

/// Every aggregate available for scoring, plus matrix-level warnings.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AggregateMatrix {
    pub stats: BTreeMap<AggregateKey, AggregateStat>,
    pub warnings: Vec<Finding>,
}

impl AggregateMatrix {
    pub fn get(&self, region: &str, dataset: &DatasetId, metric: MetricKind) -> Option<&AggregateStat> {
        self.stats.get(&(region.to_string(), dataset.clone(), metric))
    }

    pub fn regions(&self) -> Vec<String> {
        let mut regions: Vec<String> = self.stats.keys().map(|(r, _, _)| r.clone()).collect();
        regions.dedup();
        regions
    }

    pub fn has_region(&self, region: &str) -> bool {
        self.stats.keys().any(|(r, _, _)| r == region)
    }

    pub fn insert(&mut self, stat: AggregateStat) {
        self.stats.insert(stat.key(), stat);
    }

    pub fn len(&self) -> usize {
        self.stats.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stats.is_empty()
    }
}

/// Aggregates per-test records of every configured per-test dataset and
/// merges in provided statistics. A provided statistic replaces a computed
/// one under the same key.
pub fn build_aggregate_matrix(
    records: &[MeasurementRecord],
    provided: &[AggregateStat],
    config: &Config,
) -> Result<AggregateMatrix> {
    check_percentile(config.aggregation.percentile)?;
    let mut matrix = AggregateMatrix::default();

    let mut groups: BTreeMap<AggregateKey, Vec<f64>> = BTreeMap::new();
    let mut skipped: BTreeMap<&DatasetId, usize> = BTreeMap::new();
    for r in records {
        match config.dataset(&r.dataset) {
            Some(spec) if spec.granularity == Granularity::PerTest => groups
                .entry((r.region_id.clone(), r.dataset.clone(), r.metric))
                .or_default()
                .push(r.value),
            _ => *skipped.entry(&r.dataset).or_default() += 1,
        }
    }
    for (d, n) in skipped {
        matrix.warnings.push(Finding::new(
            format!("datasets.{d}"),
            format!("{n} per-test records ignored: dataset not configured as per_test"),
        ));
    }

    let computed: Vec<AggregateStat> = groups
        .par_iter()
        .map(|(key, samples)| {
            let mode = match config.dataset(&key.1).map(|s| s.statistic) {
                Some(DatasetStatistic::Literal) => AggregationMode::Literal,
                _ => AggregationMode::Tail,
            };
            aggregate_samples(key, samples, mode, &config.aggregation)
        })
        .collect::<Result<_>>()?;
    for stat in computed {
        matrix.insert(stat);
    }

    let mut seen = std::collections::BTreeSet::new();
    for stat in provided {
        if !seen.insert(stat.key()) {
            return Err(Error::DuplicateStat(stat.key_label()));
        }
        if config.dataset(&stat.dataset).is_none() {
            matrix.warnings.push(Finding::new(
                stat.key_label(),
                "provided statistic ignored: dataset not configured",
            ));
            continue;
        }
        if matrix.stats.contains_key(&stat.key()) {
            matrix.warnings.push(Finding::new(
                stat.key_label(),
                "provided statistic replaces computed aggregate",
            ));
        }
        matrix.insert(stat.clone());
    }
    Ok(matrix)
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::{DateTime, Utc};

    fn sort_and_index(values: &[f64], p: f64) -> f64 {
        let mut v = values.to_vec();
        v.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let n = v.len() as f64;
        let mut rank = 1usize;
        // smallest rank r with r >= p/100 * n, counted without ceil()
        while (rank as f64) * 100.0 < p * n {
            rank += 1;
        }
        v[rank - 1]
    }

    #[test]
    fn singleton() {
        assert_eq!(nearest_rank_percentile(&[7.0], 95.0).unwrap(), 7.0);
    }

    #[test]
    fn one_to_twenty_p95() {
        let v: Vec<f64> = (1..=20).map(f64::from).collect();
        assert_eq!(sort_and_index(&v, 95.0), 19.0);
        assert_eq!(nearest_rank_percentile(&v, 95.0).unwrap(), 19.0);
    }

    #[test]
    fn median_of_five() {
        let v = [5.0, 1.0, 3.0, 2.0, 4.0];
        assert_eq!(sort_and_index(&v, 50.0), 3.0);
        assert_eq!(nearest_rank_percentile(&v, 50.0).unwrap(), 3.0);
    }

    #[test]
    fn errors() {
        assert!(matches!(nearest_rank_percentile::<f64>(&[], 95.0), Err(Error::NoSamples)));
        assert!(matches!(nearest_rank_percentile(&[1.0, f64::NAN], 95.0), Err(Error::NonFinite(1))));
        assert!(matches!(nearest_rank_percentile(&[1.0], 0.0), Err(Error::InvalidPercentile(_))));
        assert!(matches!(nearest_rank_percentile(&[1.0], 101.0), Err(Error::InvalidPercentile(_))));
    }

    #[test]
    fn tail_orientation() {
        assert_eq!(tail_percentile_for(MetricKind::PacketLoss, 95.0), 95.0);
        assert_eq!(tail_percentile_for(MetricKind::DownloadThroughput, 95.0), 5.0);
        assert_eq!(tail_percentile_for(MetricKind::Latency, 95.0), 95.0);
    }

    #[test]
    fn tail_value_exact_boundary_for_throughput() {
        // 19 of 20 samples (95%) meet a 10 Mbps requirement.
        let mut v: Vec<f64> = vec![20.0; 19];
        v.push(1.0);
        let t = tail_value(&v, MetricKind::DownloadThroughput, 95.0).unwrap();
        assert_eq!(t, 20.0);
        // Plain nearest rank at 5 picks the single failing sample here.
        assert_eq!(nearest_rank_percentile(&v, 5.0).unwrap(), 1.0);
    }

    fn rec(region: &str, dataset: &str, metric: MetricKind, value: f64) -> MeasurementRecord {
        let ts = DateTime::<Utc>::from_timestamp(1_700_000_000, 0).unwrap();
        MeasurementRecord::new(region, DatasetId::new(dataset).unwrap(), metric, value, ts).unwrap()
    }

    #[test]
    fn packet_loss_tail_over_twenty() {
        let records: Vec<_> = (0..20)
            .map(|i| rec("R1", "ndt", MetricKind::PacketLoss, f64::from(i) / 100.0))
            .collect();
        let expected = sort_and_index(&records.iter().map(|r| r.value).collect::<Vec<_>>(), 95.0);
        assert_eq!(expected, 0.18);
        let out = aggregate_region(
            &records,
            "R1",
            &DatasetId::new("ndt").unwrap(),
            MetricKind::PacketLoss,
            AggregationMode::Tail,
            &AggregationConfig::default(),
        )
        .unwrap();
        let AggregateOutcome::Stat(stat) = out else { panic!("expected stat") };
        assert_eq!(stat.value, 0.18);
        assert_eq!(stat.sample_count, 20);
        assert_eq!(stat.statistic.token(), "p95_tail");
    }

    #[test]
    fn single_latency_sample_warns() {
        let records = vec![rec("R1", "ndt", MetricKind::Latency, 40.0)];
        let out = aggregate_region(
            &records,
            "R1",
            &DatasetId::new("ndt").unwrap(),
            MetricKind::Latency,
            AggregationMode::Tail,
            &AggregationConfig::default(),
        )
        .unwrap();
        let AggregateOutcome::Stat(stat) = out else { panic!("expected stat") };
        assert_eq!(stat.value, 40.0);
        assert_eq!(stat.sample_count, 1);
        assert_eq!(stat.warnings.len(), 1);
        assert!(stat.warnings[0].message.contains("low sample count"));
    }

    #[test]
    fn other_region_is_insufficient() {
        let records = vec![rec("R2", "ndt", MetricKind::Latency, 40.0)];
        let out = aggregate_region(
            &records,
            "R1",
            &DatasetId::new("ndt").unwrap(),
            MetricKind::Latency,
            AggregationMode::Tail,
            &AggregationConfig::default(),
        )
        .unwrap();
        assert_eq!(out, AggregateOutcome::InsufficientData);
    }

    #[test]
    fn declared_statistic_names() {
        assert!(declared_matches_percentile("p95", 95.0));
        assert!(declared_matches_percentile("P95_tail", 95.0));
        assert!(!declared_matches_percentile("mean", 95.0));
        assert!(!declared_matches_percentile("p90", 95.0));
    }
}
