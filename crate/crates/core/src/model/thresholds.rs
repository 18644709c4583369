use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{Direction, Finding, MetricKind, QualityLevel, UseCase};
use crate::units::UnitTable;
use crate::Error;

/// One config row: both levels of one (use case, metric) pair in a declared unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThresholdRow {
    pub use_case: UseCase,
    pub metric: MetricKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub minimum: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub high: Option<f64>,
    pub unit: String,
}

/// Threshold per (use case, metric, quality level), in canonical units.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ThresholdTable {
    entries: BTreeMap<(UseCase, MetricKind, QualityLevel), f64>,
}

impl ThresholdTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, u: UseCase, r: MetricKind, level: QualityLevel, value: f64) {
        self.entries.insert((u, r, level), value);
    }

    pub fn remove(&mut self, u: UseCase, r: MetricKind, level: QualityLevel) -> Option<f64> {
        self.entries.remove(&(u, r, level))
    }

    pub fn get(&self, u: UseCase, r: MetricKind, level: QualityLevel) -> Option<f64> {
        self.entries.get(&(u, r, level)).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = ((UseCase, MetricKind, QualityLevel), f64)> + '_ {
        self.entries.iter().map(|(k, v)| (*k, *v))
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Converts config rows to canonical units. Unknown or incompatible units and
    /// duplicate rows are errors; value problems are left to [`Self::validate`].
    pub fn from_rows(rows: &[ThresholdRow], units: &UnitTable) -> Result<Self, Error> {
        let mut table = ThresholdTable::new();
        let mut seen = std::collections::BTreeSet::new();
        for row in rows {
            if !seen.insert((row.use_case, row.metric)) {
                return Err(Error::Config(format!(
                    "duplicate threshold row for ({}, {})",
                    row.use_case, row.metric
                )));
            }
            for (level, value) in [(QualityLevel::Minimum, row.minimum), (QualityLevel::High, row.high)] {
                if let Some(v) = value {
                    let v = units.convert(v, &row.unit, row.metric).map_err(Error::Config)?;
                    table.insert(row.use_case, row.metric, level, v);
                }
            }
        }
        Ok(table)
    }

    /// Rows in canonical units, one per (use case, metric) pair.
    pub fn to_rows(&self) -> Vec<ThresholdRow> {
        let mut pairs: Vec<(UseCase, MetricKind)> = self.entries.keys().map(|(u, r, _)| (*u, *r)).collect();
        pairs.dedup();
        pairs
            .into_iter()
            .map(|(u, r)| ThresholdRow {
                use_case: u,
                metric: r,
                minimum: self.get(u, r, QualityLevel::Minimum),
                high: self.get(u, r, QualityLevel::High),
                unit: r.unit().token().to_string(),
            })
            .collect()
    }

    pub fn validate(&self) -> Vec<Finding> {
        let mut findings = Vec::new();
        for ((u, r, level), v) in self.iter() {
            if !v.is_finite() || v < 0.0 {
                findings.push(Finding::new(
                    format!("thresholds.{u}.{r}.{level}"),
                    format!("threshold {v} must be finite and non-negative"),
                ));
            }
        }
        for u in UseCase::ALL {
            for r in MetricKind::ALL {
                let key = format!("thresholds.{u}.{r}");
                match (self.get(u, r, QualityLevel::Minimum), self.get(u, r, QualityLevel::High)) {
                    (None, None) => {}
                    (Some(_), None) | (None, Some(_)) => {
                        findings.push(Finding::new(key, "level asymmetry: present at one quality level only"));
                    }
                    (Some(min), Some(high)) => match r.direction() {
                        Direction::HigherIsBetter if high < min => findings.push(Finding::new(
                            key,
                            format!("high < minimum for higher_is_better ({high} < {min})"),
                        )),
                        Direction::LowerIsBetter if high > min => findings.push(Finding::new(
                            key,
                            format!("high > minimum for lower_is_better ({high} > {min})"),
                        )),
                        _ => {}
                    },
                }
            }
        }
        findings
    }
}
