//! Domain vocabulary for the three scoring tiers: use cases, network
//! requirements (metrics) and datasets.

mod thresholds;
mod weights;

use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

pub use thresholds::{ThresholdRow, ThresholdTable};
pub use weights::{
    default_weight_table, normalize_weights, NormalizedWeights, Weight, WeightTable, MAX_WEIGHT,
};

use crate::Error;

/// Which side of a threshold counts as "good" for a metric.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    HigherIsBetter,
    LowerIsBetter,
}

/// Canonical unit of each metric. Adapters convert everything into these.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CanonicalUnit {
    #[serde(rename = "Mbps")]
    Mbps,
    #[serde(rename = "ms")]
    Ms,
    #[serde(rename = "fraction")]
    Fraction,
}

impl CanonicalUnit {
    pub fn token(self) -> &'static str {
        match self {
            CanonicalUnit::Mbps => "Mbps",
            CanonicalUnit::Ms => "ms",
            CanonicalUnit::Fraction => "fraction",
        }
    }
}

/// A network requirement.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    DownloadThroughput,
    UploadThroughput,
    Latency,
    PacketLoss,
}

impl MetricKind {
    pub const ALL: [MetricKind; 4] = [
        MetricKind::DownloadThroughput,
        MetricKind::UploadThroughput,
        MetricKind::Latency,
        MetricKind::PacketLoss,
    ];

    pub fn direction(self) -> Direction {
        match self {
            MetricKind::DownloadThroughput | MetricKind::UploadThroughput => {
                Direction::HigherIsBetter
            }
            MetricKind::Latency | MetricKind::PacketLoss => Direction::LowerIsBetter,
        }
    }

    pub fn unit(self) -> CanonicalUnit {
        match self {
            MetricKind::DownloadThroughput | MetricKind::UploadThroughput => CanonicalUnit::Mbps,
            MetricKind::Latency => CanonicalUnit::Ms,
            MetricKind::PacketLoss => CanonicalUnit::Fraction,
        }
    }

    pub fn token(self) -> &'static str {
        match self {
            MetricKind::DownloadThroughput => "download_throughput",
            MetricKind::UploadThroughput => "upload_throughput",
            MetricKind::Latency => "latency",
            MetricKind::PacketLoss => "packet_loss",
        }
    }

    /// Checks a canonical-unit value against the metric's physical range.
    pub fn check_value(self, value: f64) -> Result<(), String> {
        if !value.is_finite() {
            return Err(format!("non-finite value {value}"));
        }
        if value < 0.0 {
            return Err(format!("value out of range: {value} < 0"));
        }
        if self == MetricKind::PacketLoss && value > 1.0 {
            return Err(format!("value out of range: packet loss {value} > 1"));
        }
        Ok(())
    }
}

impl fmt::Display for MetricKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

impl FromStr for MetricKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        MetricKind::ALL
            .into_iter()
            .find(|m| m.token() == s)
            .ok_or_else(|| Error::UnknownToken { kind: "metric", token: s.to_string() })
    }
}

/// User-facing activity. Declaration order follows the weight table rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UseCase {
    WebBrowsing,
    VideoStreaming,
    AudioStreaming,
    VideoConferencing,
    OnlineBackup,
    Gaming,
}

impl UseCase {
    pub const ALL: [UseCase; 6] = [
        UseCase::WebBrowsing,
        UseCase::VideoStreaming,
        UseCase::AudioStreaming,
        UseCase::VideoConferencing,
        UseCase::OnlineBackup,
        UseCase::Gaming,
    ];

    pub fn token(self) -> &'static str {
        match self {
            UseCase::WebBrowsing => "web_browsing",
            UseCase::VideoStreaming => "video_streaming",
            UseCase::AudioStreaming => "audio_streaming",
            UseCase::VideoConferencing => "video_conferencing",
            UseCase::OnlineBackup => "online_backup",
            UseCase::Gaming => "gaming",
        }
    }
}

impl fmt::Display for UseCase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

impl FromStr for UseCase {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        UseCase::ALL
            .into_iter()
            .find(|u| u.token() == s)
            .ok_or_else(|| Error::UnknownToken { kind: "use case", token: s.to_string() })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QualityLevel {
    Minimum,
    High,
}

impl QualityLevel {
    pub const ALL: [QualityLevel; 2] = [QualityLevel::Minimum, QualityLevel::High];

    pub fn token(self) -> &'static str {
        match self {
            QualityLevel::Minimum => "minimum",
            QualityLevel::High => "high",
        }
    }
}

impl fmt::Display for QualityLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

/// Whether a dataset publishes individual tests or already-aggregated statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Granularity {
    PerTest,
    PreAggregated,
}

/// Identifier of a measurement source, restricted to `[a-z0-9_-]+`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct DatasetId(String);

impl DatasetId {
    pub fn new(id: impl Into<String>) -> Result<Self, Error> {
        let id = id.into();
        let valid = !id.is_empty()
            && id
                .bytes()
                .all(|b| b.is_ascii_lowercase() || b.is_ascii_digit() || b == b'_' || b == b'-');
        if valid {
            Ok(DatasetId(id))
        } else {
            Err(Error::InvalidDatasetId(id))
        }
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for DatasetId {
    type Error = Error;

    fn try_from(value: String) -> Result<Self, Self::Error> {
        DatasetId::new(value)
    }
}

impl From<DatasetId> for String {
    fn from(id: DatasetId) -> String {
        id.0
    }
}

impl fmt::Display for DatasetId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl FromStr for DatasetId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        DatasetId::new(s)
    }
}

/// One raw sample, already in the metric's canonical unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasurementRecord {
    pub region_id: String,
    pub dataset: DatasetId,
    pub metric: MetricKind,
    pub value: f64,
    pub timestamp: DateTime<Utc>,
}

impl MeasurementRecord {
    pub fn new(
        region_id: impl Into<String>,
        dataset: DatasetId,
        metric: MetricKind,
        value: f64,
        timestamp: DateTime<Utc>,
    ) -> Result<Self, Error> {
        let region_id = region_id.into();
        if region_id.is_empty() {
            return Err(Error::InvalidRecord("empty region_id".into()));
        }
        metric.check_value(value).map_err(Error::InvalidRecord)?;
        Ok(MeasurementRecord { region_id, dataset, metric, value, timestamp })
    }
}

/// A validation finding or warning, keyed by the path of the offending item.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Finding {
    pub key: String,
    pub message: String,
}

impl Finding {
    pub fn new(key: impl Into<String>, message: impl Into<String>) -> Self {
        Finding { key: key.into(), message: message.into() }
    }
}

impl fmt::Display for Finding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.key, self.message)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn metric_directions_and_units() {
        use MetricKind::*;
        assert_eq!(DownloadThroughput.direction(), Direction::HigherIsBetter);
        assert_eq!(UploadThroughput.unit(), CanonicalUnit::Mbps);
        assert_eq!(Latency.direction(), Direction::LowerIsBetter);
        assert_eq!(Latency.unit(), CanonicalUnit::Ms);
        assert_eq!(PacketLoss.unit(), CanonicalUnit::Fraction);
        assert!(PacketLoss.check_value(1.2).is_err());
        assert!(Latency.check_value(1200.0).is_ok());
        assert!(DownloadThroughput.check_value(-1.0).is_err());
        assert!(Latency.check_value(f64::NAN).is_err());
    }

    #[test]
    fn tokens_round_trip() {
        for u in UseCase::ALL {
            assert_eq!(u.token().parse::<UseCase>().unwrap(), u);
        }
        for m in MetricKind::ALL {
            assert_eq!(m.token().parse::<MetricKind>().unwrap(), m);
        }
        assert!("streaming".parse::<UseCase>().is_err());
    }

    #[test]
    fn dataset_id_charset() {
        assert!(DatasetId::new("ndt").is_ok());
        assert!(DatasetId::new("cloudflare-radar_2").is_ok());
        assert!(DatasetId::new("").is_err());
        assert!(DatasetId::new("NDT").is_err());
        assert!(DatasetId::new("nd t").is_err());
    }

    #[test]
    fn record_rejects_empty_region() {
        let ts = DateTime::<Utc>::from_timestamp(0, 0).unwrap();
        let ndt = DatasetId::new("ndt").unwrap();
        assert!(MeasurementRecord::new("", ndt.clone(), MetricKind::Latency, 1.0, ts).is_err());
        assert!(MeasurementRecord::new("r", ndt, MetricKind::PacketLoss, 0.5, ts).is_ok());
    }
}
