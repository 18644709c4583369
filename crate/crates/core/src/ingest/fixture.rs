//! Deterministic synthetic measurements with a known pass/fail outcome per
//! (region, dataset, metric).

use std::collections::BTreeSet;

use chrono::{DateTime, Duration, Utc};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::aggregate::{nearest_rank, tail_value};
use crate::model::{
    CanonicalUnit, DatasetId, Direction, MeasurementRecord, MetricKind, QualityLevel,
    ThresholdTable, UseCase,
};
use crate::scoring::meets;
use crate::{Error, Result};

/// Samples for one (region, dataset, metric), all within `range`, whose tail
/// statistic must meet `threshold` iff `pass`.
#[derive(Debug, Clone, PartialEq)]
pub struct FixtureCell {
    pub region_id: String,
    pub dataset: DatasetId,
    pub metric: MetricKind,
    pub samples: usize,
    pub threshold: f64,
    pub pass: bool,
    pub range: (f64, f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct FixtureScenario {
    pub percentile: f64,
    pub start: DateTime<Utc>,
    pub cells: Vec<FixtureCell>,
}

fn slack(metric: MetricKind) -> f64 {
    match metric.unit() {
        CanonicalUnit::Fraction => 0.01,
        _ => 1.0,
    }
}

fn clamp_range(metric: MetricKind, (lo, hi): (f64, f64)) -> (f64, f64) {
    match metric {
        MetricKind::PacketLoss => (lo.max(0.0), hi.min(1.0)),
        _ => (lo.max(0.0), hi),
    }
}

impl FixtureScenario {
    /// Builds cells so that, at `level`, exactly the `(use case, metric)` pairs
    /// in `failing` miss their threshold on every dataset and everything else
    /// meets it. Errors when the thresholds make that outcome impossible.
    pub fn from_outcomes(
        regions: &[&str],
        datasets: &[DatasetId],
        thresholds: &ThresholdTable,
        level: QualityLevel,
        failing: &BTreeSet<(UseCase, MetricKind)>,
        samples: usize,
    ) -> Result<Self> {
        let mut cells = Vec::new();
        for metric in MetricKind::ALL {
            let (mut pass_thr, mut fail_thr) = (Vec::new(), Vec::new());
            for u in UseCase::ALL {
                if let Some(t) = thresholds.get(u, metric, level) {
                    if failing.contains(&(u, metric)) {
                        fail_thr.push(t);
                    } else {
                        pass_thr.push(t);
                    }
                }
            }
            if pass_thr.is_empty() && fail_thr.is_empty() {
                continue;
            }
            let max = |v: &[f64]| v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let min = |v: &[f64]| v.iter().copied().fold(f64::INFINITY, f64::min);
            let eps = slack(metric);

            let (threshold, pass, range) = match metric.direction() {
                Direction::LowerIsBetter if fail_thr.is_empty() => {
                    let t = min(&pass_thr);
                    (t, true, (t * 0.25, (t * 1.5).max(t + eps)))
                }
                Direction::LowerIsBetter => {
                    let t = max(&fail_thr);
                    let hi = if pass_thr.is_empty() { (t * 1.5).max(t + eps) } else { min(&pass_thr) };
                    if hi <= t {
                        return Err(Error::ImpossibleScenario(format!(
                            "{metric}: a failing threshold {t} is not stricter than a passing one {hi}"
                        )));
                    }
                    (t, false, (t * 0.25, hi))
                }
                Direction::HigherIsBetter if fail_thr.is_empty() => {
                    let t = max(&pass_thr);
                    (t, true, (t * 0.5, t * 4.0 + eps))
                }
                Direction::HigherIsBetter => {
                    let t = min(&fail_thr);
                    let lo = if pass_thr.is_empty() { t * 0.5 } else { max(&pass_thr) };
                    if lo >= t {
                        return Err(Error::ImpossibleScenario(format!(
                            "{metric}: a failing threshold {t} is not stricter than a passing one {lo}"
                        )));
                    }
                    (t, false, (lo, t * 4.0 + eps))
                }
            };
            let range = clamp_range(metric, range);
            for region in regions {
                for d in datasets {
                    cells.push(FixtureCell {
                        region_id: region.to_string(),
                        dataset: d.clone(),
                        metric,
                        samples,
                        threshold,
                        pass,
                        range,
                    });
                }
            }
        }
        Ok(FixtureScenario {
            percentile: 95.0,
            start: DateTime::<Utc>::from_timestamp(1_735_689_600, 0).expect("valid epoch"),
            cells,
        })
    }
}

fn cell_samples(cell: &FixtureCell, percentile: f64, rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
    let n = cell.samples;
    let label = format!("{}/{}/{}", cell.region_id, cell.dataset, cell.metric);
    if n == 0 {
        return Err(Error::ImpossibleScenario(format!("{label}: zero samples")));
    }
    let (lo, hi) = cell.range;
    for bound in [lo, hi] {
        cell.metric
            .check_value(bound)
            .map_err(|e| Error::ImpossibleScenario(format!("{label}: range {e}")))?;
    }
    if lo > hi {
        return Err(Error::ImpossibleScenario(format!("{label}: empty range")));
    }
    let t = cell.threshold;
    let (can_meet, can_fail) = match cell.metric.direction() {
        Direction::LowerIsBetter => (lo <= t, hi > t),
        Direction::HigherIsBetter => (hi >= t, lo < t),
    };

    let fail_budget = n - nearest_rank(n, percentile);
    let failing = if cell.pass {
        if !can_meet {
            return Err(Error::ImpossibleScenario(format!("{label}: no value in range meets {t}")));
        }
        if can_fail { rng.gen_range(0..=fail_budget) } else { 0 }
    } else {
        if !can_fail {
            return Err(Error::ImpossibleScenario(format!("{label}: no value in range fails {t}")));
        }
        if can_meet { rng.gen_range(fail_budget + 1..=n) } else { n }
    };

    let mut values = Vec::with_capacity(n);
    for i in 0..n {
        let u: f64 = rng.gen();
        let v = match (cell.metric.direction(), i < failing) {
            // failing, strictly worse than the threshold
            (Direction::LowerIsBetter, true) => {
                let v = t + (hi - t) * (1.0 - u);
                if v > t { v } else { hi }
            }
            (Direction::HigherIsBetter, true) => {
                let v = lo + (t - lo) * u;
                if v < t { v } else { lo }
            }
            (Direction::LowerIsBetter, false) => (lo + (t.min(hi) - lo) * u).min(t),
            (Direction::HigherIsBetter, false) => (t.max(lo) + (hi - t.max(lo)) * u).max(t),
        };
        values.push(v);
    }
    values.shuffle(rng);

    let tail = tail_value(&values, cell.metric, percentile)?;
    if meets(tail, t, cell.metric.direction()) != cell.pass {
        return Err(Error::ImpossibleScenario(format!("{label}: generated samples miss the declared outcome")));
    }
    Ok(values)
}

/// Same seed and scenario give identical output. Every cell is checked
/// against its declared outcome before returning.
pub fn generate_fixture(seed: u64, scenario: &FixtureScenario) -> Result<Vec<MeasurementRecord>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut records = Vec::new();
    for cell in &scenario.cells {
        for v in cell_samples(cell, scenario.percentile, &mut rng)? {
            let ts = scenario.start + Duration::seconds(records.len() as i64);
            records.push(MeasurementRecord::new(&cell.region_id, cell.dataset.clone(), cell.metric, v, ts)?);
        }
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cell(metric: MetricKind, threshold: f64, pass: bool, range: (f64, f64), samples: usize) -> FixtureCell {
        FixtureCell {
            region_id: "R1".into(),
            dataset: DatasetId::new("ndt").unwrap(),
            metric,
            samples,
            threshold,
            pass,
            range,
        }
    }

    fn scenario(cells: Vec<FixtureCell>) -> FixtureScenario {
        FixtureScenario { percentile: 95.0, start: DateTime::<Utc>::from_timestamp(0, 0).unwrap(), cells }
    }

    #[test]
    fn deterministic_for_seed() {
        let s = scenario(vec![
            cell(MetricKind::Latency, 50.0, false, (5.0, 80.0), 40),
            cell(MetricKind::DownloadThroughput, 25.0, true, (1.0, 400.0), 40),
        ]);
        let a = generate_fixture(42, &s).unwrap();
        let b = generate_fixture(42, &s).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, generate_fixture(43, &s).unwrap());
    }

    #[test]
    fn zero_samples_is_error() {
        let s = scenario(vec![cell(MetricKind::Latency, 50.0, true, (5.0, 80.0), 0)]);
        assert!(matches!(generate_fixture(1, &s), Err(Error::ImpossibleScenario(_))));
    }

    #[test]
    fn failing_latency_below_threshold_is_impossible() {
        let s = scenario(vec![cell(MetricKind::Latency, 50.0, false, (5.0, 40.0), 10)]);
        assert!(matches!(generate_fixture(1, &s), Err(Error::ImpossibleScenario(_))));
    }

    #[test]
    fn outcomes_hold_across_seeds() {
        for seed in 0..50 {
            for (metric, pass) in [
                (MetricKind::Latency, true),
                (MetricKind::Latency, false),
                (MetricKind::UploadThroughput, true),
                (MetricKind::UploadThroughput, false),
            ] {
                let s = scenario(vec![cell(metric, 20.0, pass, (0.0, 100.0), 1 + seed as usize)]);
                let values: Vec<f64> = generate_fixture(seed, &s).unwrap().iter().map(|r| r.value).collect();
                let tail = tail_value(&values, metric, 95.0).unwrap();
                assert_eq!(meets(tail, 20.0, metric.direction()), pass);
            }
        }
    }
}
