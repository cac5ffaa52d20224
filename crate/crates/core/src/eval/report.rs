//! Aggregate statistics and CSV / markdown export.

use serde::{Deserialize, Serialize};

use super::QueryOutcome;
use crate::error::{Error, Result};
use crate::scene::FurnitureLevel;

pub const CSV_HEADER: [&str; 8] = [
    "method",
    "layout_r1",
    "pose_r1",
    "median_cm",
    "under_1cm",
    "under_5cm",
    "under_10cm",
    "under_1m",
];

/// Error thresholds in meters for the `under_*` columns.
const THRESHOLDS: [f64; 4] = [0.01, 0.05, 0.10, 1.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusDescriptor {
    pub scene_seeds: Vec<u64>,
    pub queries: usize,
    pub grid_resolution: f64,
    pub furniture: FurnitureLevel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub method: String,
    pub layout_r1: f64,
    pub pose_r1: f64,
    pub median_cm: f64,
    pub under_1cm: f64,
    pub under_5cm: f64,
    pub under_10cm: f64,
    pub under_1m: f64,
    pub correct_room: f64,
    /// Per-query errors in meters, corpus order.
    pub errors: Vec<f64>,
}

/// Middle value, or the mean of the two middle values.
pub(crate) fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

impl ReportRow {
    pub fn from_outcomes(method: String, outcomes: &[QueryOutcome]) -> Result<Self> {
        if outcomes.is_empty() {
            return Err(Error::Empty(format!("no outcomes for {method}")));
        }
        let n = outcomes.len() as f64;
        let frac = |f: &dyn Fn(&QueryOutcome) -> bool| outcomes.iter().filter(|o| f(o)).count() as f64 / n;
        let errors: Vec<f64> = outcomes.iter().map(|o| o.error).collect();
        let under: Vec<f64> = THRESHOLDS.iter().map(|&t| frac(&|o| o.error < t)).collect();
        Ok(ReportRow {
            method,
            layout_r1: frac(&|o| o.layout_correct),
            pose_r1: frac(&|o| o.pose_correct),
            median_cm: 100.0 * median(&errors),
            under_1cm: under[0],
            under_5cm: under[1],
            under_10cm: under[2],
            under_1m: under[3],
            correct_room: frac(&|o| o.correct_room),
            errors,
        })
    }

    pub fn fractions(&self) -> [f64; 4] {
        [self.under_1cm, self.under_5cm, self.under_10cm, self.under_1m]
    }

    pub fn median_error(&self) -> f64 {
        self.median_cm / 100.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub corpus: CorpusDescriptor,
    pub rows: Vec<ReportRow>,
}

impl EvalReport {
    pub fn row(&self, method: &str) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.method == method)
    }

    /// Threshold fractions within [0, 1] and non-decreasing, and each median
    /// equal to the median of its stored errors.
    pub fn validate(&self) -> Result<()> {
        for r in &self.rows {
            let f = r.fractions();
            if f.iter().any(|x| !(0.0..=1.0).contains(x)) || f.windows(2).any(|w| w[0] > w[1]) {
                return Err(Error::Validation(format!("{}: threshold fractions not monotone", r.method)));
            }
            if !r.errors.is_empty() && (100.0 * median(&r.errors) - r.median_cm).abs() > 1e-9 {
                return Err(Error::Validation(format!("{}: median disagrees with errors", r.method)));
            }
        }
        Ok(())
    }
}

/// The numeric content of one CSV line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsvRow {
    pub method: String,
    pub layout_r1: f64,
    pub pose_r1: f64,
    pub median_cm: f64,
    pub under_1cm: f64,
    pub under_5cm: f64,
    pub under_10cm: f64,
    pub under_1m: f64,
}

impl From<&ReportRow> for CsvRow {
    fn from(r: &ReportRow) -> Self {
        CsvRow {
            method: r.method.clone(),
            layout_r1: r.layout_r1,
            pose_r1: r.pose_r1,
            median_cm: r.median_cm,
            under_1cm: r.under_1cm,
            under_5cm: r.under_5cm,
            under_10cm: r.under_10cm,
            under_1m: r.under_1m,
        }
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Parse {
        path: "<csv>".into(),
        field: None,
        message: e.to_string(),
    }
}

pub fn export_csv(report: &EvalReport) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in &report.rows {
        w.serialize(CsvRow::from(r)).map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Validation(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| Error::Validation(e.to_string()))
}

pub fn parse_csv(text: &str) -> Result<Vec<CsvRow>> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let header = r.headers().map_err(csv_err)?;
    if header.iter().ne(CSV_HEADER) {
        return Err(Error::Parse {
            path: "<csv>".into(),
            field: Some("header".into()),
            message: format!("expected {}", CSV_HEADER.join(",")),
        });
    }
    r.deserialize().map(|row| row.map_err(csv_err)).collect()
}

fn pct(x: f64) -> String {
    format!("{:.1}", 100.0 * x)
}

/// Recall and accuracy columns in percent, median in centimeters.
pub fn export_markdown(report: &EvalReport) -> String {
    let mut s = String::new();
    s.push_str("| Method | Layout R@1 | Pose R@1 | Median (cm) | <1cm | <5cm | <10cm | <1m | Correct room |\n");
    s.push_str("|---|---|---|---|---|---|---|---|---|\n");
    for r in &report.rows {
        s.push_str(&format!(
            "| {} | {} | {} | {:.2} | {} | {} | {} | {} | {} |\n",
            r.method,
            pct(r.layout_r1),
            pct(r.pose_r1),
            r.median_cm,
            pct(r.under_1cm),
            pct(r.under_5cm),
            pct(r.under_10cm),
            pct(r.under_1m),
            pct(r.correct_room),
        ));
    }
    s.push_str(&format!(
        "\n{} queries over {} scenes, grid {} m, furniture {}.\n",
        report.corpus.queries,
        report.corpus.scene_seeds.len(),
        report.corpus.grid_resolution,
        report.corpus.furniture.name(),
    ));
    s
}
