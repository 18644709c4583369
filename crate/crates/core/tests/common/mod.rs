#![allow(dead_code)]

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use iqb::aggregate::{aggregate_region, AggregateOutcome, AggregationMode};
use iqb::ingest::{generate_fixture, write_aggregates_csv, write_measurements_csv, FixtureScenario};
use iqb::{Config, DatasetId, MetricKind, QualityLevel, UseCase, WeightTable};
use rand::Rng;

pub fn example_config_path() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("config/example.toml")
}

pub fn adapter_path(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("config/adapters").join(name)
}

pub fn example_config() -> Config {
    Config::load(&example_config_path()).expect("example config parses")
}

pub fn ds(s: &str) -> DatasetId {
    DatasetId::new(s).unwrap()
}

pub struct FixtureFiles {
    pub per_test: PathBuf,
    pub provided: PathBuf,
}

/// Writes a fixture for `regions` in which exactly the `failing` pairs miss
/// their high threshold: per-test CSV for ndt and cloudflare, and an ookla
/// pre-aggregated CSV computed from ookla samples.
pub fn write_fixture(
    dir: &Path,
    config: &Config,
    regions: &[&str],
    failing: &[(UseCase, MetricKind)],
    seed: u64,
) -> FixtureFiles {
    let failing: BTreeSet<_> = failing.iter().copied().collect();
    let per_test_ds = [ds("ndt"), ds("cloudflare")];
    let scenario = FixtureScenario::from_outcomes(
        regions,
        &per_test_ds,
        &config.thresholds,
        QualityLevel::High,
        &failing,
        40,
    )
    .unwrap();
    let records = generate_fixture(seed, &scenario).unwrap();

    let ookla_scenario =
        FixtureScenario::from_outcomes(regions, &[ds("ookla")], &config.thresholds, QualityLevel::High, &failing, 60)
            .unwrap();
    let ookla_records = generate_fixture(seed.wrapping_add(1), &ookla_scenario).unwrap();
    let mut stats = Vec::new();
    for region in regions {
        for metric in MetricKind::ALL {
            let out = aggregate_region(
                &ookla_records,
                region,
                &ds("ookla"),
                metric,
                AggregationMode::Tail,
                &config.aggregation,
            )
            .unwrap();
            if let AggregateOutcome::Stat(s) = out {
                stats.push(s);
            }
        }
    }

    let per_test = dir.join(format!("measurements-{seed}.csv"));
    let provided = dir.join(format!("ookla-{seed}.csv"));
    write_measurements_csv(&records, std::fs::File::create(&per_test).unwrap()).unwrap();
    write_aggregates_csv(&stats, std::fs::File::create(&provided).unwrap()).unwrap();
    FixtureFiles { per_test, provided }
}

/// Random weight table satisfying every validity rule.
pub fn random_weight_table<R: Rng>(rng: &mut R, datasets: &[DatasetId]) -> WeightTable {
    let mut w = WeightTable::default();
    let positive = |rng: &mut R, n: usize| -> Vec<u32> {
        let mut v: Vec<u32> = (0..n).map(|_| rng.gen_range(0..=5)).collect();
        if v.iter().all(|x| *x == 0) {
            let i = rng.gen_range(0..n);
            v[i] = rng.gen_range(1..=5);
        }
        v
    };
    let uw = positive(rng, UseCase::ALL.len());
    for (u, wu) in UseCase::ALL.into_iter().zip(uw) {
        w.set_use_case(u, wu);
        let rw = positive(rng, MetricKind::ALL.len());
        for (r, wr) in MetricKind::ALL.into_iter().zip(rw) {
            w.set_requirement(u, r, wr);
            let dw = positive(rng, datasets.len());
            for (d, wd) in datasets.iter().zip(dw) {
                w.set_dataset(u, r, d.clone(), wd);
            }
        }
    }
    w
}

pub fn canonical_datasets() -> Vec<DatasetId> {
    ["ndt", "ookla", "cloudflare"].into_iter().map(ds).collect()
}
