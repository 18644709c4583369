//! The run configuration: datasets, the three weight tiers, thresholds and
//! aggregation settings, read from a single TOML document.
//!
//! Unknown keys are rejected. Omitted weights fall back to the defaults:
//! requirement weights from the published table, use-case weight 1, and
//! `dataset_default` (1 unless set) for every configured dataset.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::model::{
    default_weight_table, DatasetId, Finding, Granularity, MetricKind, ThresholdRow,
    ThresholdTable, UseCase, Weight, WeightTable,
};
use crate::units::UnitTable;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AggregationConfig {
    #[serde(default = "default_percentile")]
    pub percentile: f64,
    #[serde(default = "default_min_samples")]
    pub min_samples: usize,
}

fn default_percentile() -> f64 {
    95.0
}

fn default_min_samples() -> usize {
    30
}

impl Default for AggregationConfig {
    fn default() -> Self {
        AggregationConfig { percentile: default_percentile(), min_samples: default_min_samples() }
    }
}

/// Statistic a dataset contributes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetStatistic {
    /// Tail percentile computed from per-test samples.
    Tail,
    /// Literal percentile computed from per-test samples.
    Literal,
    /// Statistic published by the source.
    Provided,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    pub id: DatasetId,
    pub granularity: Granularity,
    pub statistic: DatasetStatistic,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDataset {
    id: DatasetId,
    granularity: Granularity,
    statistic: Option<DatasetStatistic>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawWeights {
    #[serde(default)]
    use_cases: BTreeMap<UseCase, Weight>,
    #[serde(default)]
    requirements: BTreeMap<UseCase, BTreeMap<MetricKind, Weight>>,
    #[serde(default)]
    datasets: BTreeMap<UseCase, BTreeMap<MetricKind, BTreeMap<DatasetId, Weight>>>,
    dataset_default: Option<Weight>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    #[serde(default)]
    aggregation: AggregationConfig,
    datasets: Vec<RawDataset>,
    weights: RawWeights,
    thresholds: Vec<ThresholdRow>,
}

#[derive(Serialize)]
struct ConfigOut<'a> {
    aggregation: &'a AggregationConfig,
    datasets: &'a [DatasetSpec],
    weights: &'a WeightTable,
    thresholds: Vec<ThresholdRow>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    pub aggregation: AggregationConfig,
    pub datasets: Vec<DatasetSpec>,
    pub weights: WeightTable,
    pub thresholds: ThresholdTable,
}

impl Config {
    pub fn from_toml_str(text: &str) -> Result<Config> {
        let raw: RawConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;

        let datasets: Vec<DatasetSpec> = raw
            .datasets
            .into_iter()
            .map(|d| DatasetSpec {
                statistic: d.statistic.unwrap_or(match d.granularity {
                    Granularity::PerTest => DatasetStatistic::Tail,
                    Granularity::PreAggregated => DatasetStatistic::Provided,
                }),
                id: d.id,
                granularity: d.granularity,
            })
            .collect();

        let defaults = default_weight_table();
        let mut weights = WeightTable::default();
        let dataset_default = raw.weights.dataset_default.unwrap_or(1);
        for u in UseCase::ALL {
            let wu = raw.weights.use_cases.get(&u).copied().unwrap_or(1);
            weights.set_use_case(u, wu);
            let row = raw.weights.requirements.get(&u);
            for r in MetricKind::ALL {
                let wr = row.and_then(|m| m.get(&r)).copied().unwrap_or(defaults.requirement(u, r));
                weights.set_requirement(u, r, wr);
                match raw.weights.datasets.get(&u).and_then(|m| m.get(&r)) {
                    Some(explicit) => {
                        for (d, w) in explicit {
                            weights.set_dataset(u, r, d.clone(), *w);
                        }
                    }
                    None => {
                        for d in &datasets {
                            weights.set_dataset(u, r, d.id.clone(), dataset_default);
                        }
                    }
                }
            }
        }

        let thresholds = ThresholdTable::from_rows(&raw.thresholds, &UnitTable::builtin())?;
        Ok(Config { aggregation: raw.aggregation, datasets, weights, thresholds })
    }

    pub fn load(path: &Path) -> Result<Config> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| Error::Io { path: path.to_path_buf(), source })?;
        Config::from_toml_str(&text)
    }

    /// Fully explicit TOML; parsing it back yields an equal config.
    pub fn to_toml_string(&self) -> String {
        let out = ConfigOut {
            aggregation: &self.aggregation,
            datasets: &self.datasets,
            weights: &self.weights,
            thresholds: self.thresholds.to_rows(),
        };
        toml::to_string(&out).expect("config is always representable as TOML")
    }

    /// SHA-256 of the resolved config.
    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(self.to_toml_string().as_bytes()))
    }

    pub fn dataset(&self, id: &DatasetId) -> Option<&DatasetSpec> {
        self.datasets.iter().find(|d| &d.id == id)
    }

    /// All findings: weights, thresholds, and dataset declarations.
    pub fn validate(&self) -> Vec<Finding> {
        let mut findings = Vec::new();
        let p = self.aggregation.percentile;
        if !(p.is_finite() && p > 0.0 && p < 100.0) {
            findings.push(Finding::new("aggregation.percentile", format!("{p} outside (0, 100)")));
        }

        let mut ids = BTreeSet::new();
        for d in &self.datasets {
            if !ids.insert(&d.id) {
                findings.push(Finding::new(format!("datasets.{}", d.id), "duplicate dataset id"));
            }
            let consistent = match d.granularity {
                Granularity::PerTest => d.statistic != DatasetStatistic::Provided,
                Granularity::PreAggregated => d.statistic == DatasetStatistic::Provided,
            };
            if !consistent {
                findings.push(Finding::new(
                    format!("datasets.{}", d.id),
                    format!("statistic {:?} does not fit granularity {:?}", d.statistic, d.granularity),
                ));
            }
        }
        for d in self.weights.dataset_ids() {
            if !ids.contains(&d) {
                findings.push(Finding::new(
                    format!("weights.datasets.*.*.{d}"),
                    "weight references an undeclared dataset",
                ));
            }
        }

        findings.extend(self.weights.validate());
        findings.extend(self.thresholds.validate());
        findings
    }
}
