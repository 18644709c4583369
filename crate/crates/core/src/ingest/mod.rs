//! CSV ingestion. An [`AdapterSpec`] maps a source export's columns, units
//! and metric names onto canonical records; malformed rows are collected as
//! rejects and never abort a batch.

mod fixture;

use std::collections::{BTreeMap, BTreeSet};
use std::io;
use std::path::Path;
use std::str::FromStr;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

pub use fixture::{generate_fixture, FixtureCell, FixtureScenario};

use crate::aggregate::{declared_matches_percentile, AggregateStat, Statistic};
use crate::model::{DatasetId, Finding, Granularity, MeasurementRecord, MetricKind};
use crate::units::{UnitConversion, UnitTable};
use crate::{Error, Result};

pub const MEASUREMENT_HEADER: [&str; 6] = ["region_id", "dataset_id", "metric", "value", "unit", "timestamp"];
pub const AGGREGATE_HEADER: [&str; 7] =
    ["region_id", "dataset_id", "metric", "statistic", "value", "unit", "sample_count"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CanonicalField {
    RegionId,
    DatasetId,
    Metric,
    Value,
    Unit,
    Timestamp,
    Statistic,
    SampleCount,
}

impl CanonicalField {
    fn from_column(name: &str) -> Option<Self> {
        use CanonicalField::*;
        Some(match name {
            "region_id" => RegionId,
            "dataset_id" => DatasetId,
            "metric" => Metric,
            "value" => Value,
            "unit" => Unit,
            "timestamp" => Timestamp,
            "statistic" => Statistic,
            "sample_count" => SampleCount,
            _ => return None,
        })
    }

    fn required(granularity: Granularity) -> &'static [CanonicalField] {
        use CanonicalField::*;
        match granularity {
            Granularity::PerTest => &[RegionId, Metric, Value, Timestamp],
            Granularity::PreAggregated => &[RegionId, Metric, Statistic, Value],
        }
    }
}

/// Mapping from one source export onto the canonical schema.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdapterSpec {
    /// Dataset every row belongs to. When absent, rows must carry a `dataset_id` column.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset: Option<DatasetId>,
    pub granularity: Granularity,
    /// Source column name -> canonical field.
    pub column_map: BTreeMap<String, CanonicalField>,
    /// Source unit -> conversion, on top of the built-in units.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub unit_conversions: BTreeMap<String, UnitConversion>,
    /// Source metric name -> canonical metric, on top of the canonical tokens.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub metric_aliases: BTreeMap<String, MetricKind>,
}

impl AdapterSpec {
    fn canonical(granularity: Granularity, header: &[&str]) -> Self {
        let column_map = header
            .iter()
            .map(|c| (c.to_string(), CanonicalField::from_column(c).expect("canonical column")))
            .collect();
        AdapterSpec {
            dataset: None,
            granularity,
            column_map,
            unit_conversions: BTreeMap::new(),
            metric_aliases: BTreeMap::new(),
        }
    }

    /// Identity mapping for the canonical measurement CSV.
    pub fn canonical_per_test() -> Self {
        Self::canonical(Granularity::PerTest, &MEASUREMENT_HEADER)
    }

    /// Identity mapping for the canonical pre-aggregated CSV.
    pub fn canonical_pre_aggregated() -> Self {
        Self::canonical(Granularity::PreAggregated, &AGGREGATE_HEADER)
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let spec: AdapterSpec = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        spec.check()?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| Error::Io { path: path.to_path_buf(), source })?;
        Self::from_toml_str(&text).map_err(|e| Error::Parse { path: path.display().to_string(), message: e.to_string() })
    }

    /// The column map must cover every required field exactly once.
    pub fn check(&self) -> Result<()> {
        let mut mapped = BTreeSet::new();
        for field in self.column_map.values() {
            if !mapped.insert(*field) {
                return Err(Error::Config(format!("canonical field {field:?} mapped twice")));
            }
        }
        let mut required = CanonicalField::required(self.granularity).to_vec();
        if self.dataset.is_none() {
            required.push(CanonicalField::DatasetId);
        }
        for field in required {
            if !mapped.contains(&field) {
                return Err(Error::Config(format!("column_map lacks required field {field:?}")));
            }
        }
        Ok(())
    }

    fn metric(&self, token: &str) -> std::result::Result<MetricKind, String> {
        if let Some(m) = self.metric_aliases.get(token) {
            return Ok(*m);
        }
        MetricKind::from_str(token).map_err(|e| e.to_string())
    }
}

/// Half-open time window `[start, end)`; either side may be open.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct TimeWindow {
    pub start: Option<DateTime<Utc>>,
    pub end: Option<DateTime<Utc>>,
}

impl TimeWindow {
    pub fn contains(&self, t: &DateTime<Utc>) -> bool {
        self.start.is_none_or(|s| *t >= s) && self.end.is_none_or(|e| *t < e)
    }
}

impl FromStr for TimeWindow {
    type Err = Error;

    /// `START/END` in RFC 3339; either side may be empty.
    fn from_str(s: &str) -> Result<Self> {
        let (a, b) = s
            .split_once('/')
            .ok_or_else(|| Error::Config(format!("window {s:?}: expected START/END")))?;
        let parse = |x: &str| -> Result<Option<DateTime<Utc>>> {
            if x.is_empty() {
                return Ok(None);
            }
            DateTime::parse_from_rfc3339(x)
                .map(|t| Some(t.with_timezone(&Utc)))
                .map_err(|e| Error::Config(format!("window bound {x:?}: {e}")))
        };
        Ok(TimeWindow { start: parse(a)?, end: parse(b)? })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Reject {
    /// 1-based data row, not counting the header.
    pub row_number: usize,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PerTestParse {
    pub records: Vec<MeasurementRecord>,
    pub rejects: Vec<Reject>,
    /// Well-formed rows outside the time window.
    pub filtered: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PreAggregatedParse {
    pub stats: Vec<AggregateStat>,
    pub rejects: Vec<Reject>,
}

struct Columns {
    index: BTreeMap<CanonicalField, usize>,
    width: usize,
}

impl Columns {
    fn resolve(headers: &csv::StringRecord, spec: &AdapterSpec) -> Result<Columns> {
        spec.check()?;
        let mut index = BTreeMap::new();
        for (source, field) in &spec.column_map {
            match headers.iter().position(|h| h.trim() == source) {
                Some(i) => {
                    index.insert(*field, i);
                }
                None if CanonicalField::required(spec.granularity).contains(field)
                    || (*field == CanonicalField::DatasetId && spec.dataset.is_none()) =>
                {
                    return Err(Error::Config(format!("input lacks required column {source:?}")));
                }
                None => {}
            }
        }
        Ok(Columns { index, width: headers.len() })
    }

    fn get<'r>(&self, row: &'r csv::StringRecord, field: CanonicalField) -> Option<&'r str> {
        self.index.get(&field).and_then(|i| row.get(*i)).map(str::trim)
    }

    fn require<'r>(&self, row: &'r csv::StringRecord, field: CanonicalField) -> std::result::Result<&'r str, String> {
        match self.get(row, field) {
            Some(v) if !v.is_empty() => Ok(v),
            _ => Err(format!("missing {field:?}")),
        }
    }
}

fn reader<R: io::Read>(input: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new().flexible(true).has_headers(true).from_reader(input)
}

fn read_headers<R: io::Read>(rdr: &mut csv::Reader<R>) -> Result<csv::StringRecord> {
    let headers = rdr.headers()?.clone();
    if headers.is_empty() || (headers.len() == 1 && headers[0].is_empty()) {
        return Err(Error::Config("input has no header row".into()));
    }
    Ok(headers)
}

struct RowContext<'a> {
    spec: &'a AdapterSpec,
    columns: &'a Columns,
    units: &'a UnitTable,
}

impl RowContext<'_> {
    fn dataset(&self, row: &csv::StringRecord) -> std::result::Result<DatasetId, String> {
        match (self.columns.get(row, CanonicalField::DatasetId), &self.spec.dataset) {
            (Some(v), _) if !v.is_empty() => DatasetId::new(v).map_err(|e| e.to_string()),
            (_, Some(d)) => Ok(d.clone()),
            _ => Err("missing DatasetId".into()),
        }
    }

    fn value(&self, row: &csv::StringRecord, metric: MetricKind) -> std::result::Result<f64, String> {
        let raw = self.columns.require(row, CanonicalField::Value)?;
        let value: f64 = raw.parse().map_err(|_| format!("unparseable value {raw:?}"))?;
        let unit = match self.columns.get(row, CanonicalField::Unit) {
            Some(u) if !u.is_empty() => u,
            _ => metric.unit().token(),
        };
        let value = self.units.convert(value, unit, metric)?;
        metric.check_value(value)?;
        Ok(value)
    }
}

/// Parses a per-test export. Rows outside `window` are counted in `filtered`.
pub fn parse_per_test<R: io::Read>(input: R, spec: &AdapterSpec, window: Option<&TimeWindow>) -> Result<PerTestParse> {
    if spec.granularity != Granularity::PerTest {
        return Err(Error::Config("adapter is not per_test".into()));
    }
    let mut rdr = reader(input);
    let headers = read_headers(&mut rdr)?;
    let columns = Columns::resolve(&headers, spec)?;
    let units = UnitTable::with_overrides(&spec.unit_conversions);
    let ctx = RowContext { spec, columns: &columns, units: &units };

    let mut out = PerTestParse::default();
    for (i, row) in rdr.records().enumerate() {
        let row_number = i + 1;
        let parsed = row.map_err(|e| e.to_string()).and_then(|row| {
            if row.len() != columns.width {
                return Err(format!("expected {} fields, found {}", columns.width, row.len()));
            }
            let region = ctx.columns.require(&row, CanonicalField::RegionId)?;
            let dataset = ctx.dataset(&row)?;
            let metric = spec.metric(ctx.columns.require(&row, CanonicalField::Metric)?)?;
            let value = ctx.value(&row, metric)?;
            let ts_raw = ctx.columns.require(&row, CanonicalField::Timestamp)?;
            let timestamp = DateTime::parse_from_rfc3339(ts_raw)
                .map_err(|e| format!("bad timestamp {ts_raw:?}: {e}"))?
                .with_timezone(&Utc);
            MeasurementRecord::new(region, dataset, metric, value, timestamp).map_err(|e| e.to_string())
        });
        match parsed {
            Ok(record) if window.is_some_and(|w| !w.contains(&record.timestamp)) => out.filtered += 1,
            Ok(record) => out.records.push(record),
            Err(reason) => out.rejects.push(Reject { row_number, reason }),
        }
    }
    Ok(out)
}

/// Parses published statistics. `expected_percentile` is the percentile the
/// scoring run aggregates at; other declared statistics carry a mismatch warning.
pub fn parse_pre_aggregated<R: io::Read>(
    input: R,
    spec: &AdapterSpec,
    expected_percentile: f64,
) -> Result<PreAggregatedParse> {
    if spec.granularity != Granularity::PreAggregated {
        return Err(Error::Config("adapter is not pre_aggregated".into()));
    }
    let mut rdr = reader(input);
    let headers = read_headers(&mut rdr)?;
    let columns = Columns::resolve(&headers, spec)?;
    let units = UnitTable::with_overrides(&spec.unit_conversions);
    let ctx = RowContext { spec, columns: &columns, units: &units };

    let mut out = PreAggregatedParse::default();
    let mut seen = BTreeSet::new();
    for (i, row) in rdr.records().enumerate() {
        let row_number = i + 1;
        let parsed = row.map_err(|e| e.to_string()).and_then(|row| {
            if row.len() != columns.width {
                return Err(format!("expected {} fields, found {}", columns.width, row.len()));
            }
            let region = ctx.columns.require(&row, CanonicalField::RegionId)?.to_string();
            let dataset = ctx.dataset(&row)?;
            let metric = spec.metric(ctx.columns.require(&row, CanonicalField::Metric)?)?;
            let declared = ctx.columns.require(&row, CanonicalField::Statistic)?.to_string();
            let value = ctx.value(&row, metric)?;
            if !seen.insert((region.clone(), dataset.clone(), metric)) {
                return Err("duplicate key".to_string());
            }
            let mut stat = AggregateStat {
                region_id: region,
                dataset,
                metric,
                statistic: Statistic::Provided { declared: declared.clone() },
                value,
                sample_count: 0,
                warnings: Vec::new(),
            };
            match ctx.columns.get(&row, CanonicalField::SampleCount) {
                Some(n) if !n.is_empty() => {
                    stat.sample_count = n.parse().map_err(|_| format!("unparseable sample_count {n:?}"))?;
                }
                _ => stat.warnings.push(Finding::new(stat.key_label(), "sample count not provided")),
            }
            if !declared_matches_percentile(&declared, expected_percentile) {
                stat.warnings.push(Finding::new(
                    stat.key_label(),
                    format!("statistic mismatch: provided {declared:?}, scoring expects p{expected_percentile}"),
                ));
            }
            Ok(stat)
        });
        match parsed {
            Ok(stat) => out.stats.push(stat),
            Err(reason) => out.rejects.push(Reject { row_number, reason }),
        }
    }
    Ok(out)
}

/// Which canonical schema a header row belongs to, if any.
pub fn detect_canonical(header_line: &str) -> Option<Granularity> {
    let cols: Vec<&str> = header_line.trim().split(',').map(str::trim).collect();
    if cols == MEASUREMENT_HEADER {
        Some(Granularity::PerTest)
    } else if cols == AGGREGATE_HEADER {
        Some(Granularity::PreAggregated)
    } else {
        None
    }
}

pub fn write_measurements_csv<W: io::Write>(records: &[MeasurementRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(MEASUREMENT_HEADER)?;
    for r in records {
        w.write_record([
            r.region_id.as_str(),
            r.dataset.as_str(),
            r.metric.token(),
            &r.value.to_string(),
            r.metric.unit().token(),
            &r.timestamp.to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
        ])?;
    }
    w.flush().map_err(|source| Error::Io { path: "<csv>".into(), source })?;
    Ok(())
}

/// Writes aggregates in the pre-aggregated schema, sorted by
/// (region, dataset, metric token).
pub fn write_aggregates_csv<'a, W: io::Write>(
    stats: impl IntoIterator<Item = &'a AggregateStat>,
    out: W,
) -> Result<()> {
    let mut stats: Vec<&AggregateStat> = stats.into_iter().collect();
    stats.sort_by(|a, b| {
        (&a.region_id, &a.dataset, a.metric.token()).cmp(&(&b.region_id, &b.dataset, b.metric.token()))
    });
    let mut w = csv::Writer::from_writer(out);
    w.write_record(AGGREGATE_HEADER)?;
    for s in stats {
        w.write_record([
            s.region_id.as_str(),
            s.dataset.as_str(),
            s.metric.token(),
            &s.statistic.token(),
            &s.value.to_string(),
            s.metric.unit().token(),
            &s.sample_count.to_string(),
        ])?;
    }
    w.flush().map_err(|source| Error::Io { path: "<csv>".into(), source })?;
    Ok(())
}

pub fn write_rejects_csv<W: io::Write>(rejects: &[Reject], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["row_number", "reason"])?;
    for r in rejects {
        w.write_record([r.row_number.to_string(), r.reason.clone()])?;
    }
    w.flush().map_err(|source| Error::Io { path: "<csv>".into(), source })?;
    Ok(())
}
