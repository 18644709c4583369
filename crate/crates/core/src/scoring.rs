//! Binary requirement scores and the three-tier weighted roll-up.
//!
//! Two routes compute the composite score:
//!
//! - the nested route ([`iqb_score_nested`]) takes weighted averages tier by
//!   tier (datasets into requirements, requirements into use cases, use cases
//!   into the composite) from the integer weights, renormalizing over whatever
//!   cells have data;
//! - the flat route ([`iqb_score_flat`]) sums `w'_u * w'_ur * w'_urd * S_urd`
//!   over every cell using pre-normalized weights and requires full coverage.
//!
//! With full coverage the two agree up to rounding.

use std::collections::{BTreeMap, BTreeSet};

use crate::aggregate::{AggregateMatrix, AggregateStat};
use crate::model::{
    normalize_weights, DatasetId, Direction, Finding, MetricKind, NormalizedWeights, QualityLevel,
    ThresholdTable, UseCase, Weight, WeightTable,
};
use crate::{Error, Result, Scalar};

/// Pass/fail of one aggregate against one threshold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum BinaryScore {
    Fail,
    Pass,
}

impl BinaryScore {
    pub fn from_bool(met: bool) -> Self {
        if met {
            BinaryScore::Pass
        } else {
            BinaryScore::Fail
        }
    }

    pub fn as_u8(self) -> u8 {
        match self {
            BinaryScore::Fail => 0,
            BinaryScore::Pass => 1,
        }
    }

    pub fn value<S: Scalar>(self) -> S {
        match self {
            BinaryScore::Fail => S::zero(),
            BinaryScore::Pass => S::one(),
        }
    }
}

/// Threshold comparison; equality counts as met.
pub fn meets(value: f64, threshold: f64, direction: Direction) -> bool {
    match direction {
        Direction::HigherIsBetter => value >= threshold,
        Direction::LowerIsBetter => value <= threshold,
    }
}

pub fn binary_requirement_score(stat: &AggregateStat, threshold: f64, direction: Direction) -> BinaryScore {
    BinaryScore::from_bool(meets(stat.value, threshold, direction))
}

pub type CellKey = (UseCase, MetricKind, DatasetId);

/// Binary scores for the cells that have data. Absent keys mean "no data".
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct BinaryScoreMatrix {
    pub entries: BTreeMap<CellKey, BinaryScore>,
}

impl BinaryScoreMatrix {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, u: UseCase, r: MetricKind, d: DatasetId, score: BinaryScore) {
        self.entries.insert((u, r, d), score);
    }

    pub fn get(&self, u: UseCase, r: MetricKind, d: &DatasetId) -> Option<BinaryScore> {
        self.entries.get(&(u, r, d.clone())).copied()
    }

    pub fn coverage(&self) -> impl Iterator<Item = &CellKey> {
        self.entries.keys()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Datasets with a score for one (use case, requirement) pair.
    pub fn datasets_for(&self, u: UseCase, r: MetricKind) -> BTreeMap<DatasetId, BinaryScore> {
        self.entries
            .iter()
            .filter(|((cu, cr, _), _)| *cu == u && *cr == r)
            .map(|((_, _, d), s)| (d.clone(), *s))
            .collect()
    }
}

fn scalar<S: Scalar>(w: Weight) -> S {
    S::from_u32(w).expect("weights are representable in every scalar type")
}

fn weighted_average<S, K>(
    items: impl IntoIterator<Item = (K, S)>,
    weight: impl Fn(&K) -> Weight,
    tier: &'static str,
) -> Result<S>
where
    S: Scalar,
    K: std::fmt::Display,
{
    let mut total: Weight = 0;
    let mut sum = S::zero();
    let mut keys = Vec::new();
    for (k, s) in items {
        let w = weight(&k);
        total += w;
        sum = sum + scalar::<S>(w) * s;
        keys.push(k.to_string());
    }
    if total == 0 {
        return Err(Error::Unscorable { tier, key: keys.join(",") });
    }
    Ok(sum / scalar(total))
}

/// Weighted average of binary scores over the datasets present in `scores`.
pub fn requirement_agreement_score<S: Scalar>(
    scores: &BTreeMap<DatasetId, BinaryScore>,
    weights: &BTreeMap<DatasetId, Weight>,
) -> Result<S> {
    weighted_average(
        scores.iter().map(|(d, s)| (d, s.value::<S>())),
        |d| weights.get(*d).copied().unwrap_or(0),
        "requirement",
    )
}

/// Weighted average of agreement scores over the requirements present.
pub fn use_case_score<S: Scalar>(
    agreement: &BTreeMap<MetricKind, S>,
    weights: &BTreeMap<MetricKind, Weight>,
) -> Result<S> {
    weighted_average(
        agreement.iter().map(|(r, s)| (*r, *s)),
        |r| weights.get(r).copied().unwrap_or(0),
        "use_case",
    )
}

/// Weighted average of use-case scores.
pub fn iqb_score<S: Scalar>(
    use_case_scores: &BTreeMap<UseCase, S>,
    weights: &BTreeMap<UseCase, Weight>,
) -> Result<S> {
    weighted_average(
        use_case_scores.iter().map(|(u, s)| (*u, *s)),
        |u| weights.get(u).copied().unwrap_or(0),
        "iqb",
    )
}

/// Single triple sum over normalized weights. Does not renormalize: every
/// cell with positive weight must be present.
pub fn iqb_score_flat<S: Scalar>(s_urd: &BinaryScoreMatrix, nw: &NormalizedWeights<S>) -> Result<S> {
    let mut total = S::zero();
    for (u, r, d) in nw.datasets.keys() {
        let w = nw.cell(*u, *r, d);
        if w <= S::zero() {
            continue;
        }
        match s_urd.get(*u, *r, d) {
            Some(s) => total = total + w * s.value::<S>(),
            None => return Err(Error::IncompleteCoverage(format!("({u}, {r}, {d})"))),
        }
    }
    Ok(total)
}

/// Intermediate results of the nested roll-up.
#[derive(Debug, Clone, PartialEq)]
pub struct NestedScores<S> {
    pub s_ur: BTreeMap<(UseCase, MetricKind), S>,
    pub s_u: BTreeMap<UseCase, S>,
    pub s_iqb: S,
    /// Effective product weight of every scored cell, renormalized over coverage.
    pub cell_weights: BTreeMap<CellKey, S>,
}

/// Nested roll-up over the covered cells. Cells, requirements and use cases
/// whose own weight is zero contribute nothing and are left out before
/// averaging, so only a matrix with no weighted data at all is unscorable.
pub fn iqb_score_nested<S: Scalar>(s_urd: &BinaryScoreMatrix, weights: &WeightTable) -> Result<NestedScores<S>> {
    let mut s_ur = BTreeMap::new();
    let mut s_u = BTreeMap::new();
    let mut dataset_shares: BTreeMap<(UseCase, MetricKind), BTreeMap<DatasetId, S>> = BTreeMap::new();
    let mut requirement_shares: BTreeMap<UseCase, BTreeMap<MetricKind, S>> = BTreeMap::new();

    for u in UseCase::ALL {
        let mut agreement: BTreeMap<MetricKind, S> = BTreeMap::new();
        for r in MetricKind::ALL {
            if weights.requirement(u, r) == 0 {
                continue;
            }
            let present: BTreeMap<DatasetId, BinaryScore> = s_urd
                .datasets_for(u, r)
                .into_iter()
                .filter(|(d, _)| weights.dataset(u, r, d) > 0)
                .collect();
            if present.is_empty() {
                continue;
            }
            let dw: BTreeMap<DatasetId, Weight> =
                present.keys().map(|d| (d.clone(), weights.dataset(u, r, d))).collect();
            let score = requirement_agreement_score::<S>(&present, &dw)?;
            let total: Weight = dw.values().sum();
            dataset_shares.insert(
                (u, r),
                dw.into_iter().map(|(d, w)| (d, scalar::<S>(w) / scalar(total))).collect(),
            );
            agreement.insert(r, score);
            s_ur.insert((u, r), score);
        }
        if agreement.is_empty() || weights.use_case(u) == 0 {
            continue;
        }
        let rw: BTreeMap<MetricKind, Weight> =
            agreement.keys().map(|r| (*r, weights.requirement(u, *r))).collect();
        let total: Weight = rw.values().sum();
        s_u.insert(u, use_case_score(&agreement, &rw)?);
        requirement_shares.insert(u, rw.into_iter().map(|(r, w)| (r, scalar::<S>(w) / scalar(total))).collect());
    }

    let uw: BTreeMap<UseCase, Weight> = s_u.keys().map(|u| (*u, weights.use_case(*u))).collect();
    if uw.is_empty() {
        return Err(Error::Unscorable { tier: "iqb", key: "no weighted data".into() });
    }
    let s_iqb = iqb_score(&s_u, &uw)?;
    let use_total: Weight = uw.values().sum();

    let mut cell_weights = BTreeMap::new();
    for (u, shares) in &requirement_shares {
        let wu = scalar::<S>(uw[u]) / scalar(use_total);
        for (r, wr) in shares {
            for (d, wd) in &dataset_shares[&(*u, *r)] {
                cell_weights.insert((*u, *r, d.clone()), wu * *wr * *wd);
            }
        }
    }
    Ok(NestedScores { s_ur, s_u, s_iqb, cell_weights })
}

/// Aggregate and threshold behind one scored cell.
#[derive(Debug, Clone, PartialEq)]
pub struct CellDetail {
    pub aggregate_value: f64,
    pub threshold: f64,
    pub sample_count: usize,
    pub statistic: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreReport<S> {
    pub region_id: String,
    pub quality_level: QualityLevel,
    pub s_urd: BinaryScoreMatrix,
    pub s_ur: BTreeMap<(UseCase, MetricKind), S>,
    pub s_u: BTreeMap<UseCase, S>,
    pub s_iqb: S,
    /// Effective weight of each cell; the contribution is this times the binary score.
    pub cell_weights: BTreeMap<CellKey, S>,
    pub contributions: BTreeMap<CellKey, S>,
    pub cells: BTreeMap<CellKey, CellDetail>,
    pub warnings: Vec<Finding>,
}

impl<S: Scalar> ScoreReport<S> {
    /// Sum of contributions over passing cells.
    pub fn satisfied_total(&self) -> S {
        self.contributions
            .iter()
            .filter(|(k, _)| self.s_urd.entries.get(*k) == Some(&BinaryScore::Pass))
            .fold(S::zero(), |acc, (_, c)| acc + *c)
    }
}

/// Scores one region at one quality level from its aggregates.
pub fn score_region<S: Scalar>(
    matrix: &AggregateMatrix,
    thresholds: &ThresholdTable,
    weights: &WeightTable,
    region: &str,
    level: QualityLevel,
) -> Result<ScoreReport<S>> {
    if !matrix.has_region(region) {
        return Err(Error::InsufficientData(region.to_string()));
    }
    normalize_weights::<S>(weights)?;

    let mut warnings: Vec<Finding> = Vec::new();
    let mut seen = BTreeSet::new();
    for ((r, _, _), stat) in &matrix.stats {
        if r == region {
            for w in &stat.warnings {
                if seen.insert(w.clone()) {
                    warnings.push(w.clone());
                }
            }
        }
    }

    let mut s_urd = BinaryScoreMatrix::new();
    let mut cells = BTreeMap::new();
    for u in UseCase::ALL {
        let mut use_case_has_data = false;
        for r in MetricKind::ALL {
            if !weights.in_scope(u, r) {
                continue;
            }
            let Some(threshold) = thresholds.get(u, r, level) else {
                warnings.push(Finding::new(
                    format!("{u}.{r}"),
                    format!("no {level} threshold for ({u}, {r}); requirement excluded"),
                ));
                continue;
            };
            let mut requirement_has_data = false;
            for (d, w) in weights.datasets_for(u, r) {
                if w == 0 {
                    continue;
                }
                match matrix.get(region, d, r) {
                    Some(stat) => {
                        requirement_has_data = true;
                        s_urd.insert(u, r, d.clone(), binary_requirement_score(stat, threshold, r.direction()));
                        cells.insert(
                            (u, r, d.clone()),
                            CellDetail {
                                aggregate_value: stat.value,
                                threshold,
                                sample_count: stat.sample_count,
                                statistic: stat.statistic.token(),
                            },
                        );
                    }
                    None => warnings.push(Finding::new(
                        format!("{u}.{r}.{d}"),
                        format!("no aggregate for ({u}, {r}, {d}); renormalized over present datasets"),
                    )),
                }
            }
            if requirement_has_data {
                use_case_has_data = true;
            } else {
                warnings.push(Finding::new(
                    format!("{u}.{r}"),
                    format!("no data for ({u}, {r}); use-case score renormalized over present requirements"),
                ));
            }
        }
        if !use_case_has_data {
            warnings.push(Finding::new(
                u.to_string(),
                format!("no data for {u}; composite renormalized over present use cases"),
            ));
        }
    }

    if s_urd.is_empty() {
        return Err(Error::InsufficientData(region.to_string()));
    }
    let nested = iqb_score_nested::<S>(&s_urd, weights)?;
    let contributions = nested
        .cell_weights
        .iter()
        .map(|(k, w)| (k.clone(), *w * s_urd.entries[k].value::<S>()))
        .collect();

    Ok(ScoreReport {
        region_id: region.to_string(),
        quality_level: level,
        s_urd,
        s_ur: nested.s_ur,
        s_u: nested.s_u,
        s_iqb: nested.s_iqb,
        cell_weights: nested.cell_weights,
        contributions,
        cells,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::aggregate::Statistic;
    use crate::model::default_weight_table;
    use crate::Rational;

    fn ds(s: &str) -> DatasetId {
        DatasetId::new(s).unwrap()
    }

    fn stat(value: f64) -> AggregateStat {
        AggregateStat {
            region_id: "R".into(),
            dataset: ds("ndt"),
            metric: MetricKind::Latency,
            statistic: Statistic::Tail { percentile: 95.0 },
            value,
            sample_count: 50,
            warnings: vec![],
        }
    }

    #[test]
    fn binary_comparisons() {
        assert_eq!(binary_requirement_score(&stat(40.0), 50.0, Direction::LowerIsBetter), BinaryScore::Pass);
        assert_eq!(binary_requirement_score(&stat(25.0), 25.0, Direction::HigherIsBetter), BinaryScore::Pass);
        assert_eq!(binary_requirement_score(&stat(0.05), 0.01, Direction::LowerIsBetter), BinaryScore::Fail);
        assert_eq!(binary_requirement_score(&stat(0.01), 0.01, Direction::LowerIsBetter), BinaryScore::Pass);
    }

    #[test]
    fn agreement_two_of_three() {
        let scores = BTreeMap::from([
            (ds("ndt"), BinaryScore::Pass),
            (ds("ookla"), BinaryScore::Pass),
            (ds("cloudflare"), BinaryScore::Fail),
        ]);
        let weights = scores.keys().map(|d| (d.clone(), 1)).collect();
        let s: Rational = requirement_agreement_score(&scores, &weights).unwrap();
        assert_eq!(s, Rational::new(2, 3));
        let all_pass: BTreeMap<_, _> = scores.keys().map(|d| (d.clone(), BinaryScore::Pass)).collect();
        assert_eq!(requirement_agreement_score::<f64>(&all_pass, &weights).unwrap(), 1.0);
    }

    #[test]
    fn agreement_singleton_renormalizes() {
        let scores = BTreeMap::from([(ds("ndt"), BinaryScore::Pass)]);
        let weights = BTreeMap::from([(ds("ndt"), 3), (ds("ookla"), 2)]);
        assert_eq!(requirement_agreement_score::<f64>(&scores, &weights).unwrap(), 1.0);
    }

    #[test]
    fn agreement_all_zero_weights_is_unscorable() {
        let scores = BTreeMap::from([(ds("ndt"), BinaryScore::Pass)]);
        let weights = BTreeMap::from([(ds("ndt"), 0)]);
        assert!(matches!(
            requirement_agreement_score::<f64>(&scores, &weights),
            Err(Error::Unscorable { .. })
        ));
    }

    #[test]
    fn gaming_with_latency_failing() {
        let weights = default_weight_table().requirements[&UseCase::Gaming].clone();
        let one = Rational::from_integer(1);
        let zero = Rational::from_integer(0);
        let agreement = BTreeMap::from([
            (MetricKind::DownloadThroughput, one),
            (MetricKind::UploadThroughput, one),
            (MetricKind::Latency, zero),
            (MetricKind::PacketLoss, one),
        ]);
        assert_eq!(use_case_score(&agreement, &weights).unwrap(), Rational::new(12, 17));
        let f: f64 = use_case_score(
            &agreement.iter().map(|(k, v)| (*k, if *v == one { 1.0 } else { 0.0 })).collect(),
            &weights,
        )
        .unwrap();
        assert!((f - 0.70588).abs() < 1e-5);

        let all: BTreeMap<_, _> = agreement.keys().map(|k| (*k, 1.0)).collect();
        assert_eq!(use_case_score(&all, &weights).unwrap(), 1.0);
        let lat_only = BTreeMap::from([(MetricKind::Latency, 0.0)]);
        assert_eq!(use_case_score(&lat_only, &weights).unwrap(), 0.0);
    }

    #[test]
    fn composite_ninety_seven_over_one_hundred_two() {
        let mut scores: BTreeMap<UseCase, Rational> =
            UseCase::ALL.iter().map(|u| (*u, Rational::from_integer(1))).collect();
        scores.insert(UseCase::Gaming, Rational::new(12, 17));
        let w = UseCase::ALL.iter().map(|u| (*u, 1)).collect();
        assert_eq!(iqb_score(&scores, &w).unwrap(), Rational::new(97, 102));

        let zeros: BTreeMap<UseCase, f64> = UseCase::ALL.iter().map(|u| (*u, 0.0)).collect();
        assert_eq!(iqb_score(&zeros, &w).unwrap(), 0.0);
        let zero_w = UseCase::ALL.iter().map(|u| (*u, 0)).collect();
        assert!(iqb_score(&zeros, &zero_w).is_err());
    }

    fn full_matrix(fail: Option<(UseCase, MetricKind)>) -> BinaryScoreMatrix {
        let mut m = BinaryScoreMatrix::new();
        for u in UseCase::ALL {
            for r in MetricKind::ALL {
                for d in ["ndt", "ookla", "cloudflare"] {
                    let s = BinaryScore::from_bool(fail != Some((u, r)));
                    m.insert(u, r, ds(d), s);
                }
            }
        }
        m
    }

    #[test]
    fn flat_extremes_and_golden() {
        let w = default_weight_table();
        let nw: NormalizedWeights<Rational> = normalize_weights(&w).unwrap();
        assert_eq!(iqb_score_flat(&full_matrix(None), &nw).unwrap(), Rational::from_integer(1));

        let mut zeros = full_matrix(None);
        zeros.entries.values_mut().for_each(|s| *s = BinaryScore::Fail);
        assert_eq!(iqb_score_flat(&zeros, &nw).unwrap(), Rational::from_integer(0));

        let golden = full_matrix(Some((UseCase::Gaming, MetricKind::Latency)));
        assert_eq!(iqb_score_flat(&golden, &nw).unwrap(), Rational::new(97, 102));
        let nested: NestedScores<Rational> = iqb_score_nested(&golden, &w).unwrap();
        assert_eq!(nested.s_iqb, Rational::new(97, 102));
        assert_eq!(nested.s_u[&UseCase::Gaming], Rational::new(12, 17));
    }

    #[test]
    fn flat_rejects_partial_coverage() {
        let nw: NormalizedWeights<f64> = normalize_weights(&default_weight_table()).unwrap();
        let mut m = full_matrix(None);
        m.entries.remove(&(UseCase::WebBrowsing, MetricKind::PacketLoss, ds("ookla")));
        let err = iqb_score_flat(&m, &nw).unwrap_err();
        assert!(err.to_string().contains("flat form requires full coverage"));
    }

    #[test]
    fn nested_renormalizes_missing_dataset() {
        let w = default_weight_table();
        let mut m = full_matrix(None);
        m.entries.insert((UseCase::WebBrowsing, MetricKind::PacketLoss, ds("ndt")), BinaryScore::Fail);
        m.entries.remove(&(UseCase::WebBrowsing, MetricKind::PacketLoss, ds("ookla")));
        let n: NestedScores<Rational> = iqb_score_nested(&m, &w).unwrap();
        assert_eq!(n.s_ur[&(UseCase::WebBrowsing, MetricKind::PacketLoss)], Rational::new(1, 2));
        let total = n.cell_weights.values().fold(Rational::from_integer(0), |a, b| a + *b);
        assert_eq!(total, Rational::from_integer(1));
    }
}
