//! Rendering of score reports: JSON, flat CSV and the contribution table.
//!
//! Scores are written with exactly six decimals. Use cases, metrics and
//! datasets appear in lexicographic order of their tokens.

use std::collections::BTreeMap;
use std::io;

use chrono::{DateTime, SecondsFormat, Utc};
use serde::{Serialize, Serializer};
use serde_json::value::RawValue;

use crate::model::{Finding, UseCase};
use crate::scoring::{BinaryScore, CellKey, ScoreReport};
use crate::{Error, Result, Scalar};

/// A number serialized with six decimals.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Fixed6(pub f64);

impl Serialize for Fixed6 {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let raw = RawValue::from_string(fmt6(self.0)).map_err(serde::ser::Error::custom)?;
        raw.serialize(serializer)
    }
}

pub fn fmt6(x: f64) -> String {
    // -0.000000 would otherwise leak out of tiny negative rounding residue
    let s = format!("{x:.6}");
    if s == "-0.000000" { "0.000000".to_string() } else { s }
}

fn f<S: Scalar>(x: S) -> f64 {
    x.to_f64().expect("scores convert to f64")
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InputDigest {
    pub path: String,
    pub sha256: String,
}

/// Provenance embedded in every report document.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunManifest {
    pub config_digest: String,
    pub input_digests: Vec<InputDigest>,
    pub tool_version: String,
    pub started_at: String,
    pub parameters: BTreeMap<String, String>,
}

impl RunManifest {
    pub fn new(
        config_digest: String,
        input_digests: Vec<InputDigest>,
        started_at: DateTime<Utc>,
        parameters: BTreeMap<String, String>,
    ) -> Self {
        RunManifest {
            config_digest,
            input_digests,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            started_at: started_at.to_rfc3339_opts(SecondsFormat::Secs, true),
            parameters,
        }
    }
}

#[derive(Serialize)]
struct DatasetJson {
    dataset_id: String,
    binary_score: u8,
    aggregate_value: Fixed6,
    statistic: String,
    sample_count: usize,
    threshold: Fixed6,
    weight: Fixed6,
    contribution: Fixed6,
}

#[derive(Serialize)]
struct RequirementJson {
    metric: &'static str,
    score: Fixed6,
    datasets: Vec<DatasetJson>,
}

#[derive(Serialize)]
struct UseCaseJson {
    use_case: &'static str,
    score: Fixed6,
    requirements: Vec<RequirementJson>,
}

#[derive(Serialize)]
struct ReportJson<'a> {
    region_id: &'a str,
    quality_level: &'static str,
    s_iqb: Fixed6,
    use_cases: Vec<UseCaseJson>,
    warnings: Vec<String>,
}

#[derive(Serialize)]
struct DocumentJson<'a> {
    manifest: &'a RunManifest,
    reports: Vec<ReportJson<'a>>,
    insufficient_data: &'a [String],
}

fn by_token<T: Copy>(items: impl IntoIterator<Item = T>, token: impl Fn(T) -> &'static str) -> Vec<T> {
    let mut v: Vec<T> = items.into_iter().collect();
    v.sort_by_key(|x| token(*x));
    v
}

fn report_json<S: Scalar>(report: &ScoreReport<S>) -> ReportJson<'_> {
    let use_cases = by_token(report.s_u.keys().copied(), UseCase::token)
        .into_iter()
        .map(|u| {
            let metrics = by_token(
                report.s_ur.keys().filter(|(cu, _)| *cu == u).map(|(_, r)| *r),
                |r| r.token(),
            );
            let requirements = metrics
                .into_iter()
                .map(|r| {
                    let datasets = report
                        .cells
                        .iter()
                        .filter(|((cu, cr, _), _)| *cu == u && *cr == r)
                        .map(|(key, cell)| DatasetJson {
                            dataset_id: key.2.to_string(),
                            binary_score: report.s_urd.entries[key].as_u8(),
                            aggregate_value: Fixed6(cell.aggregate_value),
                            statistic: cell.statistic.clone(),
                            sample_count: cell.sample_count,
                            threshold: Fixed6(cell.threshold),
                            weight: Fixed6(f(report.cell_weights[key])),
                            contribution: Fixed6(f(report.contributions[key])),
                        })
                        .collect();
                    RequirementJson { metric: r.token(), score: Fixed6(f(report.s_ur[&(u, r)])), datasets }
                })
                .collect();
            UseCaseJson { use_case: u.token(), score: Fixed6(f(report.s_u[&u])), requirements }
        })
        .collect();
    ReportJson {
        region_id: &report.region_id,
        quality_level: report.quality_level.token(),
        s_iqb: Fixed6(f(report.s_iqb)),
        use_cases,
        warnings: report.warnings.iter().map(Finding::to_string).collect(),
    }
}

/// Pretty JSON document holding the manifest and one report per scored region.
pub fn write_json<S: Scalar, W: io::Write>(
    manifest: &RunManifest,
    reports: &[ScoreReport<S>],
    insufficient: &[String],
    mut out: W,
) -> Result<()> {
    let doc = DocumentJson {
        manifest,
        reports: reports.iter().map(report_json).collect(),
        insufficient_data: insufficient,
    };
    serde_json::to_writer_pretty(&mut out, &doc)?;
    writeln!(out).map_err(io_err)?;
    Ok(())
}

fn io_err(source: io::Error) -> Error {
    Error::Io { path: "<output>".into(), source }
}

pub const SCORE_CSV_HEADER: [&str; 13] = [
    "region_id",
    "quality_level",
    "use_case",
    "metric",
    "dataset_id",
    "binary_score",
    "aggregate_value",
    "threshold",
    "weight",
    "contribution",
    "requirement_score",
    "use_case_score",
    "s_iqb",
];

fn sorted_cells<S>(report: &ScoreReport<S>) -> Vec<&CellKey> {
    let mut keys: Vec<&CellKey> = report.cells.keys().collect();
    keys.sort_by(|a, b| (a.0.token(), a.1.token(), &a.2).cmp(&(b.0.token(), b.1.token(), &b.2)));
    keys
}

/// One row per (region, use case, metric, dataset).
pub fn write_csv<S: Scalar, W: io::Write>(reports: &[ScoreReport<S>], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(SCORE_CSV_HEADER)?;
    for report in reports {
        for key in sorted_cells(report) {
            let cell = &report.cells[key];
            let (u, r, d) = key;
            w.write_record([
                report.region_id.clone(),
                report.quality_level.token().to_string(),
                u.token().to_string(),
                r.token().to_string(),
                d.to_string(),
                report.s_urd.entries[key].as_u8().to_string(),
                fmt6(cell.aggregate_value),
                fmt6(cell.threshold),
                fmt6(f(report.cell_weights[key])),
                fmt6(f(report.contributions[key])),
                fmt6(f(report.s_ur[&(*u, *r)])),
                fmt6(f(report.s_u[u])),
                fmt6(f(report.s_iqb)),
            ])?;
        }
    }
    w.flush().map_err(io_err)?;
    Ok(())
}

/// Contribution table, largest contribution first, optionally restricted to
/// one use case. The footer restates the composite and checks it against the
/// sum of satisfied-cell contributions.
pub fn write_explain<S: Scalar, W: io::Write>(
    report: &ScoreReport<S>,
    use_case: Option<UseCase>,
    mut out: W,
) -> Result<()> {
    let mut keys: Vec<&CellKey> = sorted_cells(report)
        .into_iter()
        .filter(|k| use_case.is_none_or(|u| k.0 == u))
        .collect();
    keys.sort_by(|a, b| {
        let (ca, cb) = (f(report.contributions[*a]), f(report.contributions[*b]));
        cb.partial_cmp(&ca).expect("finite contributions")
    });

    let line = |out: &mut W, cols: [&str; 9]| -> Result<()> {
        writeln!(
            out,
            "{:<20} {:<20} {:<12} {:>6} {:>14} {:>14} {:>10} {:>12} {:>12}",
            cols[0], cols[1], cols[2], cols[3], cols[4], cols[5], cols[6], cols[7], cols[8]
        )
        .map_err(io_err)
    };

    writeln!(out, "region {}  level {}", report.region_id, report.quality_level).map_err(io_err)?;
    line(
        &mut out,
        ["use_case", "metric", "dataset", "binary", "aggregate", "threshold", "samples", "weight", "contribution"],
    )?;
    let mut printed = 0.0;
    for key in &keys {
        let cell = &report.cells[*key];
        let c = f(report.contributions[*key]);
        if report.s_urd.entries[*key] == BinaryScore::Pass {
            printed += c;
        }
        line(
            &mut out,
            [
                key.0.token(),
                key.1.token(),
                key.2.as_str(),
                &report.s_urd.entries[*key].as_u8().to_string(),
                &fmt6(cell.aggregate_value),
                &fmt6(cell.threshold),
                &cell.sample_count.to_string(),
                &fmt6(f(report.cell_weights[*key])),
                &fmt6(c),
            ],
        )?;
    }

    let total = f(report.satisfied_total());
    let s_iqb = f(report.s_iqb);
    let status = if (total - s_iqb).abs() <= 1e-9 { "ok" } else { "MISMATCH" };
    if let Some(u) = use_case {
        writeln!(out, "subtotal {u} {}", fmt6(printed)).map_err(io_err)?;
    }
    writeln!(out, "total {}  s_iqb {}  {status}", fmt6(total), fmt6(s_iqb)).map_err(io_err)?;
    Ok(())
}
