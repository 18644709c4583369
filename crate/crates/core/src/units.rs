//! Unit conversion into each metric's canonical unit.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::model::{CanonicalUnit, MetricKind};

/// Conversion of one source unit: `canonical = value * factor / divisor`.
///
/// Keeping a separate divisor lets "kbps" and "percent" convert by exact division.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UnitConversion {
    pub unit: CanonicalUnit,
    #[serde(default = "one")]
    pub factor: f64,
    #[serde(default = "one", skip_serializing_if = "is_one")]
    pub divisor: f64,
}

fn one() -> f64 {
    1.0
}

fn is_one(x: &f64) -> bool {
    *x == 1.0
}

impl UnitConversion {
    const fn new(unit: CanonicalUnit, factor: f64, divisor: f64) -> Self {
        UnitConversion { unit, factor, divisor }
    }

    pub fn apply(&self, value: f64) -> f64 {
        if self.factor == 1.0 && self.divisor == 1.0 {
            value
        } else {
            value * self.factor / self.divisor
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UnitTable {
    conversions: BTreeMap<String, UnitConversion>,
}

impl UnitTable {
    /// Canonical units plus common throughput, time and ratio spellings.
    pub fn builtin() -> Self {
        use CanonicalUnit::*;
        let entries = [
            ("Mbps", UnitConversion::new(Mbps, 1.0, 1.0)),
            ("Mbit/s", UnitConversion::new(Mbps, 1.0, 1.0)),
            ("Gbps", UnitConversion::new(Mbps, 1000.0, 1.0)),
            ("kbps", UnitConversion::new(Mbps, 1.0, 1000.0)),
            ("bps", UnitConversion::new(Mbps, 1.0, 1_000_000.0)),
            ("ms", UnitConversion::new(Ms, 1.0, 1.0)),
            ("s", UnitConversion::new(Ms, 1000.0, 1.0)),
            ("us", UnitConversion::new(Ms, 1.0, 1000.0)),
            ("fraction", UnitConversion::new(Fraction, 1.0, 1.0)),
            ("percent", UnitConversion::new(Fraction, 1.0, 100.0)),
            ("%", UnitConversion::new(Fraction, 1.0, 100.0)),
        ];
        UnitTable {
            conversions: entries.into_iter().map(|(k, v)| (k.to_string(), v)).collect(),
        }
    }

    /// Built-in table overlaid with adapter-specific conversions.
    pub fn with_overrides(overrides: &BTreeMap<String, UnitConversion>) -> Self {
        let mut table = Self::builtin();
        table.conversions.extend(overrides.iter().map(|(k, v)| (k.clone(), *v)));
        table
    }

    pub fn lookup(&self, unit: &str, metric: MetricKind) -> Result<UnitConversion, String> {
        let conv = self
            .conversions
            .get(unit)
            .ok_or_else(|| format!("unknown unit {unit:?}"))?;
        if conv.unit != metric.unit() {
            return Err(format!(
                "unit {unit:?} converts to {} but {metric} is measured in {}",
                conv.unit.token(),
                metric.unit().token()
            ));
        }
        Ok(*conv)
    }

    pub fn convert(&self, value: f64, unit: &str, metric: MetricKind) -> Result<f64, String> {
        self.lookup(unit, metric).map(|c| c.apply(value))
    }
}
