//! On-disk result formats. Column names and JSON keys are frozen in
//! `schema/output-v1.json`; bump [`SCHEMA_VERSION`] when they change.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::aggregate::{Ranking, ScoreRow, TransferRecord};
use crate::consistency::Metric;
use crate::error::{Error, Result};
use crate::fsutil::write_atomic;
use crate::rankstats::CorrelationReport;

pub const SCHEMA_VERSION: u32 = 1;
pub const SCHEMA_JSON: &str = include_str!("../schema/output-v1.json");

pub const SCORES_HEADER: [&str; 7] = [
    "model",
    "image",
    "perturbation",
    "metric",
    "value",
    "n_effective",
    "ref_degenerate",
];
pub const RANKING_HEADER: [&str; 5] = ["rank", "model", "cte", "n_images", "degenerate_images"];
pub const PERFORMANCE_HEADER: [&str; 2] = ["model", "score"];

fn csv_bytes<T: Serialize>(header: &[&str], rows: &[T]) -> Result<Vec<u8>> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.into_inner().map_err(|e| Error::Invalid(e.to_string()))
}

fn read_csv<T: for<'de> Deserialize<'de>>(path: &Path, header: &[&str]) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| match e.kind() {
        csv::ErrorKind::Io(_) => Error::io(
            path,
            std::io::Error::new(std::io::ErrorKind::NotFound, e.to_string()),
        ),
        _ => Error::Csv(e),
    })?;
    let found: Vec<String> = r.headers()?.iter().map(str::to_owned).collect();
    if found != header {
        return Err(Error::Invalid(format!(
            "{}: expected columns {:?}, found {:?}",
            path.display(),
            header,
            found
        )));
    }
    r.deserialize()
        .map(|row| row.map_err(Error::from))
        .collect()
}

pub fn write_scores_csv(path: &Path, rows: &[ScoreRow]) -> Result<()> {
    write_atomic(path, &csv_bytes(&SCORES_HEADER, rows)?)
}

pub fn read_scores_csv(path: &Path) -> Result<Vec<ScoreRow>> {
    read_csv(path, &SCORES_HEADER)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankingRow {
    pub rank: usize,
    pub model: String,
    pub cte: f64,
    pub n_images: usize,
    pub degenerate_images: usize,
}

pub fn ranking_rows(ranking: &Ranking, records: &[TransferRecord]) -> Vec<RankingRow> {
    let by_model: BTreeMap<&str, &TransferRecord> =
        records.iter().map(|r| (r.model_id.as_str(), r)).collect();
    ranking
        .entries
        .iter()
        .map(|e| {
            let rec = by_model.get(e.model_id.as_str());
            RankingRow {
                rank: e.rank,
                model: e.model_id.clone(),
                cte: e.cte,
                n_images: rec.map_or(0, |r| r.n_images),
                degenerate_images: rec.map_or(0, |r| r.degenerate_warnings.len()),
            }
        })
        .collect()
}

pub fn write_ranking_csv(path: &Path, rows: &[RankingRow]) -> Result<()> {
    write_atomic(path, &csv_bytes(&RANKING_HEADER, rows)?)
}

pub fn read_ranking_csv(path: &Path) -> Result<Vec<RankingRow>> {
    read_csv(path, &RANKING_HEADER)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerformanceRow {
    pub model: String,
    pub score: f64,
}

pub fn read_performance_csv(path: &Path) -> Result<Vec<PerformanceRow>> {
    read_csv(path, &PERFORMANCE_HEADER)
}

pub fn write_performance_csv(path: &Path, rows: &[PerformanceRow]) -> Result<()> {
    write_atomic(path, &csv_bytes(&PERFORMANCE_HEADER, rows)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankingDocument {
    pub schema_version: u32,
    pub dataset_id: String,
    pub metric: Metric,
    pub ranking: Ranking,
    pub records: Vec<TransferRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportDocument {
    pub schema_version: u32,
    pub dataset_id: Option<String>,
    pub metric: Option<Metric>,
    pub report: CorrelationReport,
}

/// CTE (x) against performance (y), one labelled point per model.
pub fn scatter_svg(report: &CorrelationReport, title: &str) -> String {
    const W: f64 = 480.0;
    const H: f64 = 400.0;
    const M: f64 = 56.0;
    let xs: Vec<f64> = report.points.iter().map(|p| p.cte).collect();
    let ys: Vec<f64> = report.points.iter().map(|p| p.performance).collect();
    let span = |v: &[f64]| {
        let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let pad = if hi > lo { (hi - lo) * 0.08 } else { 0.5 };
        (lo - pad, hi + pad)
    };
    let (x0, x1) = span(&xs);
    let (y0, y1) = span(&ys);
    let px = |x: f64| M + (x - x0) / (x1 - x0) * (W - 2.0 * M);
    let py = |y: f64| H - M - (y - y0) / (y1 - y0) * (H - 2.0 * M);

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="20" text-anchor="middle" font-size="13">{}</text>"#,
        W / 2.0,
        escape(title)
    );
    let _ = writeln!(
        s,
        r#"<text x="{}" y="36" text-anchor="middle">Kτ={:.2}{} Sρ={:.2}{} Pr={:.2}{}</text>"#,
        W / 2.0,
        report.kendall_tau.value,
        report.kendall_tau.significance,
        report.spearman_rho.value,
        report.spearman_rho.significance,
        report.pearson_r.value,
        report.pearson_r.significance
    );
    let _ = writeln!(
        s,
        r#"<line x1="{M}" y1="{}" x2="{}" y2="{}" stroke="black"/>"#,
        H - M,
        W - M,
        H - M
    );
    let _ = writeln!(
        s,
        r#"<line x1="{M}" y1="{M}" x2="{M}" y2="{}" stroke="black"/>"#,
        H - M
    );
    for (v, anchor) in [(x0, "start"), (x1, "end")] {
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{}" text-anchor="{anchor}">{:.3}</text>"#,
            px(v),
            H - M + 14.0,
            v
        );
    }
    for v in [y0, y1] {
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{:.1}" text-anchor="end">{:.3}</text>"#,
            M - 4.0,
            py(v) + 4.0,
            v
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">CTE</text>"#,
        W / 2.0,
        H - 14.0
    );
    let _ = writeln!(
        s,
        r#"<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">performance</text>"#,
        H / 2.0,
        H / 2.0
    );
    for p in &report.points {
        let (cx, cy) = (px(p.cte), py(p.performance));
        let _ = writeln!(
            s,
            r##"<circle cx="{cx:.1}" cy="{cy:.1}" r="4" fill="#1f77b4"/><text x="{:.1}" y="{:.1}">{}</text>"##,
            cx + 6.0,
            cy - 6.0,
            escape(&p.model)
        );
    }
    s.push_str("</svg>\n");
    s
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::aggregate::{aggregate, rank};
    use crate::rankstats::{evaluate, PermutationConfig};

    fn rows() -> Vec<ScoreRow> {
        (0..4)
            .flat_map(|m| {
                (0..3).map(move |i| ScoreRow {
                    model: format!("m{m}"),
                    image: format!("i{i}"),
                    perturbation: "g".into(),
                    metric: Metric::Nhd,
                    value: 0.9 - 0.1 * m as f64 + 0.01 * i as f64,
                    n_effective: 10,
                    ref_degenerate: m == 3 && i == 0,
                })
            })
            .collect()
    }

    #[test]
    fn scores_csv_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.csv");
        write_scores_csv(&p, &rows()).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(
            text.starts_with("model,image,perturbation,metric,value,n_effective,ref_degenerate\n")
        );
        assert!(text.contains(",nhd,"));
        assert_eq!(read_scores_csv(&p).unwrap(), rows());
    }

    #[test]
    fn wrong_header_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("perf.csv");
        std::fs::write(&p, "name,value\na,1\n").unwrap();
        assert!(read_performance_csv(&p).is_err());
    }

    fn keys(v: &serde_json::Value) -> Vec<String> {
        let mut k: Vec<String> = v.as_object().unwrap().keys().cloned().collect();
        k.sort();
        k
    }

    fn schema_keys(path: &[&str]) -> Vec<String> {
        let schema: serde_json::Value = serde_json::from_str(SCHEMA_JSON).unwrap();
        let mut node = &schema;
        for p in path {
            node = &node[p];
        }
        let mut k: Vec<String> = node
            .as_array()
            .unwrap()
            .iter()
            .map(|v| v.as_str().unwrap().to_owned())
            .collect();
        k.sort();
        k
    }

    #[test]
    fn documents_match_frozen_schema() {
        let schema: serde_json::Value = serde_json::from_str(SCHEMA_JSON).unwrap();
        assert_eq!(schema["schema_version"], SCHEMA_VERSION);
        assert_eq!(schema_keys(&["csv", "scores"]), {
            let mut v: Vec<String> = SCORES_HEADER.iter().map(|s| s.to_string()).collect();
            v.sort();
            v
        });
        assert_eq!(schema_keys(&["csv", "ranking"]).len(), RANKING_HEADER.len());
        assert_eq!(
            schema_keys(&["csv", "performance"]).len(),
            PERFORMANCE_HEADER.len()
        );

        let records = aggregate("d", &rows(), None).unwrap();
        let ranking = rank(&records).unwrap();
        let doc = RankingDocument {
            schema_version: SCHEMA_VERSION,
            dataset_id: "d".into(),
            metric: Metric::Nhd,
            ranking,
            records: records.clone(),
        };
        let v = serde_json::to_value(&doc).unwrap();
        assert_eq!(keys(&v), schema_keys(&["ranking_json", "top"]));
        assert_eq!(
            keys(&v["ranking"]),
            schema_keys(&["ranking_json", "ranking"])
        );
        assert_eq!(
            keys(&v["ranking"]["entries"][0]),
            schema_keys(&["ranking_json", "entry"])
        );
        assert_eq!(
            keys(&v["records"][0]),
            schema_keys(&["ranking_json", "record"])
        );

        let scores: Vec<(String, f64)> = records
            .iter()
            .map(|r| (r.model_id.clone(), r.cte))
            .collect();
        let perf: Vec<(String, f64)> = scores.iter().map(|(m, s)| (m.clone(), s * 2.0)).collect();
        let report = evaluate(&scores, &perf, &PermutationConfig::default()).unwrap();
        let doc = ReportDocument {
            schema_version: SCHEMA_VERSION,
            dataset_id: Some("d".into()),
            metric: Some(Metric::Nhd),
            report: report.clone(),
        };
        let v = serde_json::to_value(&doc).unwrap();
        assert_eq!(keys(&v), schema_keys(&["report_json", "top"]));
        assert_eq!(keys(&v["report"]), schema_keys(&["report_json", "report"]));
        assert_eq!(
            keys(&v["report"]["kendall_tau"]),
            schema_keys(&["report_json", "coefficient"])
        );
        assert_eq!(
            keys(&v["report"]["points"][0]),
            schema_keys(&["report_json", "point"])
        );

        let svg = scatter_svg(&report, "d / nhd");
        assert!(svg.starts_with("<svg"));
        assert_eq!(svg.matches("<circle").count(), 4);
    }
}
