//! Writes a synthetic per-test measurement CSV whose scores are known in advance.
//!
//! ```text
//! cargo run --example gen_fixture -- config/example.toml out.csv [SEED] [use_case.metric ...]
//! ```
//!
//! Every per-test dataset in the config gets 40 samples per region and metric
//! for regions R1 and R2. The listed (use case, metric) pairs miss their high
//! threshold; everything else meets it.

use std::collections::BTreeSet;
use std::error::Error;
use std::fs::File;
use std::path::Path;

use iqb::ingest::{generate_fixture, write_measurements_csv, FixtureScenario};
use iqb::{Config, Granularity, MetricKind, QualityLevel, UseCase};

fn main() -> Result<(), Box<dyn Error>> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let [config, out, rest @ ..] = args.as_slice() else {
        return Err("usage: gen_fixture CONFIG OUT.csv [SEED] [use_case.metric ...]".into());
    };
    let (seed, pairs) = match rest.first().and_then(|s| s.parse::<u64>().ok()) {
        Some(seed) => (seed, &rest[1..]),
        None => (42, rest),
    };

    let mut failing = BTreeSet::new();
    for pair in pairs {
        let (u, r) = pair.split_once('.').ok_or_else(|| format!("{pair:?}: expected use_case.metric"))?;
        failing.insert((u.parse::<UseCase>()?, r.parse::<MetricKind>()?));
    }

    let config = Config::load(Path::new(config))?;
    let datasets: Vec<_> = config
        .datasets
        .iter()
        .filter(|d| d.granularity == Granularity::PerTest)
        .map(|d| d.id.clone())
        .collect();
    let scenario =
        FixtureScenario::from_outcomes(&["R1", "R2"], &datasets, &config.thresholds, QualityLevel::High, &failing, 40)?;
    let records = generate_fixture(seed, &scenario)?;
    write_measurements_csv(&records, File::create(out)?)?;
    eprintln!("wrote {} records to {out}", records.len());
    Ok(())
}
