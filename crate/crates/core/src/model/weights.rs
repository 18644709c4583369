use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{DatasetId, Finding, MetricKind, UseCase};
use crate::{Error, Scalar};

/// Integer importance weight.
pub type Weight = u32;

pub const MAX_WEIGHT: Weight = 5;

/// Requirement weights per use case, in `MetricKind::ALL` column order
/// (download, upload, latency, packet loss).
const REQUIREMENT_WEIGHTS: [(UseCase, [Weight; 4]); 6] = [
    (UseCase::WebBrowsing, [3, 2, 4, 4]),
    (UseCase::VideoStreaming, [4, 2, 4, 4]),
    (UseCase::AudioStreaming, [4, 1, 3, 4]),
    (UseCase::VideoConferencing, [4, 4, 4, 4]),
    (UseCase::OnlineBackup, [4, 4, 2, 4]),
    (UseCase::Gaming, [4, 4, 5, 4]),
];

pub const CANONICAL_DATASETS: [&str; 3] = ["ndt", "ookla", "cloudflare"];

/// The three tiers of integer weights. A missing entry reads as weight 0.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightTable {
    #[serde(default)]
    pub use_cases: BTreeMap<UseCase, Weight>,
    #[serde(default)]
    pub requirements: BTreeMap<UseCase, BTreeMap<MetricKind, Weight>>,
    #[serde(default)]
    pub datasets: BTreeMap<UseCase, BTreeMap<MetricKind, BTreeMap<DatasetId, Weight>>>,
}

impl WeightTable {
    pub fn use_case(&self, u: UseCase) -> Weight {
        self.use_cases.get(&u).copied().unwrap_or(0)
    }

    pub fn requirement(&self, u: UseCase, r: MetricKind) -> Weight {
        self.requirements.get(&u).and_then(|m| m.get(&r)).copied().unwrap_or(0)
    }

    pub fn dataset(&self, u: UseCase, r: MetricKind, d: &DatasetId) -> Weight {
        self.datasets
            .get(&u)
            .and_then(|m| m.get(&r))
            .and_then(|m| m.get(d))
            .copied()
            .unwrap_or(0)
    }

    /// Dataset weights configured for one (use case, requirement) pair.
    pub fn datasets_for(
        &self,
        u: UseCase,
        r: MetricKind,
    ) -> impl Iterator<Item = (&DatasetId, Weight)> + '_ {
        self.datasets
            .get(&u)
            .and_then(|m| m.get(&r))
            .into_iter()
            .flat_map(|m| m.iter().map(|(d, w)| (d, *w)))
    }

    pub fn set_use_case(&mut self, u: UseCase, w: Weight) {
        self.use_cases.insert(u, w);
    }

    pub fn set_requirement(&mut self, u: UseCase, r: MetricKind, w: Weight) {
        self.requirements.entry(u).or_default().insert(r, w);
    }

    pub fn set_dataset(&mut self, u: UseCase, r: MetricKind, d: DatasetId, w: Weight) {
        self.datasets.entry(u).or_default().entry(r).or_default().insert(d, w);
    }

    /// A requirement takes part in scoring when its weight is positive.
    pub fn in_scope(&self, u: UseCase, r: MetricKind) -> bool {
        self.requirement(u, r) > 0
    }

    /// Every dataset mentioned anywhere in the dataset tier.
    pub fn dataset_ids(&self) -> Vec<DatasetId> {
        let mut ids: Vec<DatasetId> = self
            .datasets
            .values()
            .flat_map(|m| m.values())
            .flat_map(|m| m.keys().cloned())
            .collect();
        ids.sort();
        ids.dedup();
        ids
    }

    /// Runs every check and returns one finding per violation.
    pub fn validate(&self) -> Vec<Finding> {
        let mut findings = Vec::new();
        let range = |key: String, w: Weight, out: &mut Vec<Finding>| {
            if w > MAX_WEIGHT {
                out.push(Finding::new(key, format!("weight {w} out of range [0,{MAX_WEIGHT}]")));
            }
        };

        for (u, w) in &self.use_cases {
            range(format!("weights.use_cases.{u}"), *w, &mut findings);
        }
        for (u, row) in &self.requirements {
            for (r, w) in row {
                range(format!("weights.requirements.{u}.{r}"), *w, &mut findings);
            }
        }
        for (u, per_metric) in &self.datasets {
            for (r, row) in per_metric {
                for (d, w) in row {
                    range(format!("weights.datasets.{u}.{r}.{d}"), *w, &mut findings);
                }
            }
        }

        if UseCase::ALL.iter().all(|u| self.use_case(*u) == 0) {
            findings.push(Finding::new("weights.use_cases", "no positive use-case weight"));
        }
        for u in UseCase::ALL {
            if MetricKind::ALL.iter().all(|r| self.requirement(u, *r) == 0) {
                findings.push(Finding::new(
                    format!("weights.requirements.{u}"),
                    format!("no positive requirement weight for {u}"),
                ));
            }
            for r in MetricKind::ALL {
                if self.in_scope(u, r) && self.datasets_for(u, r).all(|(_, w)| w == 0) {
                    findings.push(Finding::new(
                        format!("weights.datasets.{u}.{r}"),
                        format!("no positive dataset weight for ({u}, {r})"),
                    ));
                }
            }
        }
        findings
    }
}

/// Requirement weights from the published table, uniform use-case weights,
/// and uniform weights for the three canonical datasets.
pub fn default_weight_table() -> WeightTable {
    let datasets: Vec<DatasetId> = CANONICAL_DATASETS
        .iter()
        .map(|d| DatasetId::new(*d).expect("canonical dataset ids are valid"))
        .collect();
    let mut table = WeightTable::default();
    for (u, row) in REQUIREMENT_WEIGHTS {
        table.set_use_case(u, 1);
        for (r, w) in MetricKind::ALL.into_iter().zip(row) {
            table.set_requirement(u, r, w);
            for d in &datasets {
                table.set_dataset(u, r, d.clone(), 1);
            }
        }
    }
    table
}

/// Weights divided by their tier sums. Each tier sums to one.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedWeights<S> {
    pub use_cases: BTreeMap<UseCase, S>,
    pub requirements: BTreeMap<(UseCase, MetricKind), S>,
    pub datasets: BTreeMap<(UseCase, MetricKind, DatasetId), S>,
}

impl<S: Scalar> NormalizedWeights<S> {
    /// Product of the three tier weights for one cell, zero if any tier is absent.
    pub fn cell(&self, u: UseCase, r: MetricKind, d: &DatasetId) -> S {
        let wu = self.use_cases.get(&u).copied().unwrap_or_else(S::zero);
        let wr = self.requirements.get(&(u, r)).copied().unwrap_or_else(S::zero);
        let wd = self.datasets.get(&(u, r, d.clone())).copied().unwrap_or_else(S::zero);
        wu * wr * wd
    }
}

fn scalar<S: Scalar>(w: Weight) -> S {
    S::from_u32(w).expect("weights are representable in every scalar type")
}

pub fn normalize_weights<S: Scalar>(w: &WeightTable) -> Result<NormalizedWeights<S>, Error> {
    let use_total: Weight = UseCase::ALL.iter().map(|u| w.use_case(*u)).sum();
    if use_total == 0 {
        return Err(Error::ZeroWeightSum { tier: "use_cases", key: "*".into() });
    }
    let use_cases = UseCase::ALL
        .iter()
        .map(|u| (*u, scalar::<S>(w.use_case(*u)) / scalar(use_total)))
        .collect();

    let mut requirements = BTreeMap::new();
    let mut datasets = BTreeMap::new();
    for u in UseCase::ALL {
        let req_total: Weight = MetricKind::ALL.iter().map(|r| w.requirement(u, *r)).sum();
        if req_total == 0 {
            return Err(Error::ZeroWeightSum { tier: "requirements", key: u.to_string() });
        }
        for r in MetricKind::ALL {
            requirements.insert((u, r), scalar::<S>(w.requirement(u, r)) / scalar(req_total));

            let ds_total: Weight = w.datasets_for(u, r).map(|(_, x)| x).sum();
            if ds_total == 0 {
                if w.in_scope(u, r) {
                    return Err(Error::ZeroWeightSum { tier: "datasets", key: format!("{u}.{r}") });
                }
                continue;
            }
            for (d, x) in w.datasets_for(u, r) {
                datasets.insert((u, r, d.clone()), scalar::<S>(x) / scalar(ds_total));
            }
        }
    }
    Ok(NormalizedWeights { use_cases, requirements, datasets })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::Rational;

    fn ds(s: &str) -> DatasetId {
        DatasetId::new(s).unwrap()
    }

    #[test]
    fn defaults_match_published_table() {
        let w = default_weight_table();
        assert_eq!(w.requirement(UseCase::Gaming, MetricKind::Latency), 5);
        assert_eq!(w.requirement(UseCase::AudioStreaming, MetricKind::UploadThroughput), 1);
        assert_eq!(w.requirement(UseCase::WebBrowsing, MetricKind::DownloadThroughput), 3);
        assert_eq!(w.requirement(UseCase::OnlineBackup, MetricKind::Latency), 2);
        assert_eq!(w.use_case(UseCase::WebBrowsing), 1);
        assert_eq!(w.dataset(UseCase::Gaming, MetricKind::PacketLoss, &ds("ookla")), 1);
        let cells: usize = w.requirements.values().map(|m| m.len()).sum();
        assert_eq!(cells, 24);
        assert!(w.validate().is_empty());
    }

    #[test]
    fn out_of_range_weight_is_one_finding() {
        let mut w = default_weight_table();
        w.set_requirement(UseCase::Gaming, MetricKind::Latency, 6);
        let findings = w.validate();
        assert_eq!(findings.len(), 1, "{findings:?}");
        assert!(findings[0].message.contains("out of range [0,5]"));
        assert_eq!(findings[0].key, "weights.requirements.gaming.latency");
    }

    #[test]
    fn zero_dataset_weights_is_one_finding() {
        let mut w = default_weight_table();
        for d in CANONICAL_DATASETS {
            w.set_dataset(UseCase::Gaming, MetricKind::Latency, ds(d), 0);
        }
        let findings = w.validate();
        assert_eq!(findings.len(), 1, "{findings:?}");
        assert_eq!(findings[0].message, "no positive dataset weight for (gaming, latency)");
    }

    #[test]
    fn gaming_row_normalizes_to_seventeenths() {
        let nw: NormalizedWeights<Rational> = normalize_weights(&default_weight_table()).unwrap();
        let expect = [4, 4, 5, 4].map(|n| Rational::new(n, 17));
        for (r, e) in MetricKind::ALL.into_iter().zip(expect) {
            assert_eq!(nw.requirements[&(UseCase::Gaming, r)], e);
        }
        for u in UseCase::ALL {
            assert_eq!(nw.use_cases[&u], Rational::new(1, 6));
        }
    }

    #[test]
    fn singleton_dataset_normalizes_to_one() {
        let mut w = default_weight_table();
        w.datasets.get_mut(&UseCase::Gaming).unwrap().insert(
            MetricKind::Latency,
            BTreeMap::from([(ds("ndt"), 5)]),
        );
        let nw: NormalizedWeights<f64> = normalize_weights(&w).unwrap();
        assert_eq!(nw.datasets[&(UseCase::Gaming, MetricKind::Latency, ds("ndt"))], 1.0);
    }

    #[test]
    fn zero_tier_sum_names_tier_and_key() {
        let mut w = default_weight_table();
        for d in CANONICAL_DATASETS {
            w.set_dataset(UseCase::Gaming, MetricKind::Latency, ds(d), 0);
        }
        let err = normalize_weights::<f64>(&w).unwrap_err();
        assert!(matches!(err, Error::ZeroWeightSum { tier: "datasets", ref key } if key == "gaming.latency"));

        let mut w = default_weight_table();
        w.use_cases.values_mut().for_each(|x| *x = 0);
        assert!(matches!(
            normalize_weights::<f64>(&w),
            Err(Error::ZeroWeightSum { tier: "use_cases", .. })
        ));
    }

    #[test]
    fn out_of_scope_pair_without_datasets_is_skipped() {
        let mut w = default_weight_table();
        w.set_requirement(UseCase::Gaming, MetricKind::UploadThroughput, 0);
        w.datasets.get_mut(&UseCase::Gaming).unwrap().remove(&MetricKind::UploadThroughput);
        assert!(w.validate().is_empty());
        let nw: NormalizedWeights<f64> = normalize_weights(&w).unwrap();
        assert_eq!(nw.cell(UseCase::Gaming, MetricKind::UploadThroughput, &ds("ndt")), 0.0);
    }
}
