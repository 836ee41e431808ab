//! Benchmark report: nested JSON, one-row-per-value CSV, best-value flags.
//!
//! CSV columns are `dataset, method, metric, pair_kind, value, best_flag, n`.
//! Infinite PSNR is written as `inf` in both formats.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Result, StegoError};
use crate::metrics::{de_db, format_db, parse_db, ser_db, PairKind};
use crate::trainer::write_atomic;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Ssim,
    Psnr,
    Rmse,
    Mae,
    Ber,
    DetectChiSquare,
    DetectCnn,
}

impl Metric {
    pub const ALL: [Metric; 7] = [
        Metric::Ssim,
        Metric::Psnr,
        Metric::Rmse,
        Metric::Mae,
        Metric::Ber,
        Metric::DetectChiSquare,
        Metric::DetectCnn,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Ssim => "ssim",
            Metric::Psnr => "psnr",
            Metric::Rmse => "rmse",
            Metric::Mae => "mae",
            Metric::Ber => "ber",
            Metric::DetectChiSquare => "detect_chi_square",
            Metric::DetectCnn => "detect_cnn",
        }
    }

    pub fn parse(s: &str) -> Option<Metric> {
        Metric::ALL.into_iter().find(|m| m.name() == s)
    }

    /// Detection accuracies count against a method: lower is better.
    pub fn higher_is_better(self) -> bool {
        matches!(self, Metric::Ssim | Metric::Psnr)
    }
}

fn pair_kind_name(k: PairKind) -> &'static str {
    match k {
        PairKind::CoverStego => "cover_stego",
        PairKind::SecretRecovered => "secret_recovered",
    }
}

fn parse_pair_kind(s: &str) -> Option<PairKind> {
    match s {
        "cover_stego" => Some(PairKind::CoverStego),
        "secret_recovered" => Some(PairKind::SecretRecovered),
        _ => None,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellValue {
    pub metric: Metric,
    pub pair_kind: PairKind,
    #[serde(serialize_with = "ser_db", deserialize_with = "de_db")]
    pub value: f64,
    pub best: bool,
}

impl CellValue {
    pub fn new(metric: Metric, pair_kind: PairKind, value: f64) -> Self {
        CellValue {
            metric,
            pair_kind,
            value,
            best: false,
        }
    }
}

/// Mean values of one method on one dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchCell {
    pub dataset: String,
    pub method: String,
    pub params: String,
    /// Images that contributed to the means.
    pub n: usize,
    pub failures: usize,
    /// Published figures quoted for context rather than measured here.
    pub reference: bool,
    pub values: Vec<CellValue>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchMetadata {
    pub dataset: String,
    pub seed: u64,
    pub config_hash: String,
    pub threshold: f64,
    pub images: usize,
    pub decoded: usize,
    pub methods: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub metadata: BenchMetadata,
    pub cells: Vec<BenchCell>,
    /// Skipped images and detectors, one line each.
    pub notes: Vec<String>,
}

/// One CSV line.
#[derive(Clone, Debug, PartialEq)]
pub struct ReportRow {
    pub dataset: String,
    pub method: String,
    pub metric: Metric,
    pub pair_kind: PairKind,
    pub value: f64,
    pub best_flag: bool,
    pub n: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Json,
}

impl ReportFormat {
    pub fn file_name(self) -> &'static str {
        match self {
            ReportFormat::Csv => "report.csv",
            ReportFormat::Json => "report.json",
        }
    }
}

impl BenchReport {
    /// Flags, within each (dataset, metric, pair kind) group, every value
    /// equal to the best one in that metric's direction.
    pub fn mark_best(&mut self) {
        let mut best: BTreeMap<(String, Metric, String), f64> = BTreeMap::new();
        for cell in &self.cells {
            for v in &cell.values {
                if v.value.is_nan() {
                    continue;
                }
                let key = (cell.dataset.clone(), v.metric, pair_kind_name(v.pair_kind).to_string());
                let e = best.entry(key).or_insert(v.value);
                let better = if v.metric.higher_is_better() { v.value > *e } else { v.value < *e };
                if better {
                    *e = v.value;
                }
            }
        }
        for cell in &mut self.cells {
            for v in &mut cell.values {
                let key = (cell.dataset.clone(), v.metric, pair_kind_name(v.pair_kind).to_string());
                v.best = best.get(&key) == Some(&v.value);
            }
        }
    }

    pub fn rows(&self) -> Vec<ReportRow> {
        self.cells
            .iter()
            .flat_map(|c| {
                c.values.iter().map(move |v| ReportRow {
                    dataset: c.dataset.clone(),
                    method: c.method.clone(),
                    metric: v.metric,
                    pair_kind: v.pair_kind,
                    value: v.value,
                    best_flag: v.best,
                    n: c.n,
                })
            })
            .collect()
    }

    pub fn value(&self, method: &str, metric: Metric, kind: PairKind) -> Option<f64> {
        self.cells
            .iter()
            .filter(|c| c.method == method && !c.reference)
            .flat_map(|c| &c.values)
            .find(|v| v.metric == metric && v.pair_kind == kind)
            .map(|v| v.value)
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| StegoError::Report(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| StegoError::Report(e.to_string()))
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let err = |e: csv::Error| StegoError::Report(e.to_string());
        w.write_record(["dataset", "method", "metric", "pair_kind", "value", "best_flag", "n"])
            .map_err(err)?;
        for r in self.rows() {
            w.write_record([
                r.dataset.as_str(),
                r.method.as_str(),
                r.metric.name(),
                pair_kind_name(r.pair_kind),
                &format_db(r.value),
                if r.best_flag { "true" } else { "false" },
                &r.n.to_string(),
            ])
            .map_err(err)?;
        }
        let bytes = w.into_inner().map_err(|e| StegoError::Report(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| StegoError::Report(e.to_string()))
    }
}

/// Parses the CSV form back into rows.
pub fn parse_csv_rows(text: &str) -> Result<Vec<ReportRow>> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let bad = |what: &str, v: &str| StegoError::Report(format!("bad {what} {v:?}"));
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(|e| StegoError::Report(e.to_string()))?;
        if rec.len() != 7 {
            return Err(StegoError::Report(format!("expected 7 columns, got {}", rec.len())));
        }
        out.push(ReportRow {
            dataset: rec[0].to_string(),
            method: rec[1].to_string(),
            metric: Metric::parse(&rec[2]).ok_or_else(|| bad("metric", &rec[2]))?,
            pair_kind: parse_pair_kind(&rec[3]).ok_or_else(|| bad("pair kind", &rec[3]))?,
            value: parse_db(&rec[4]).ok_or_else(|| bad("value", &rec[4]))?,
            best_flag: rec[5].parse().map_err(|_| bad("best flag", &rec[5]))?,
            n: rec[6].parse().map_err(|_| bad("count", &rec[6]))?,
        });
    }
    Ok(out)
}

/// Writes the requested formats into `dir` atomically; returns the paths.
pub fn emit_report(report: &BenchReport, dir: impl AsRef<Path>, formats: &[ReportFormat]) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| StegoError::io(dir, e))?;
    let mut written = Vec::new();
    for &f in formats {
        let text = match f {
            ReportFormat::Csv => report.to_csv()?,
            ReportFormat::Json => report.to_json()?,
        };
        let path = dir.join(f.file_name());
        write_atomic(&path, text.as_bytes())?;
        written.push(path);
    }
    Ok(written)
}

/// Label suffix of quoted cells.
pub const REFERENCE_LABEL: &str = "paper-reported, not reproduced";

/// Secret/recovered figures of the published comparison, per dataset:
/// `[ssim, psnr, rmse, mae]` for 4-bit LSB, CAIS, HiNet and the GAN method.
pub const REFERENCE_TABLE: [(&str, [(&str, [f64; 4]); 4]); 3] = [
    (
        "DIV2K",
        [
            ("4bit-LSB", [0.895, 24.99, 18.16, 15.57]),
            ("CAIS", [0.965, 36.1, 5.80, 4.36]),
            ("HiNet", [0.993, 46.57, 1.32, 0.84]),
            ("Proposed", [0.995, 47.12, 1.25, 0.78]),
        ],
    ),
    (
        "ImageNet",
        [
            ("4bit-LSB", [0.896, 25.00, 17.90, 15.27]),
            ("CAIS", [0.943, 33.54, 6.33, 4.70]),
            ("HiNet", [0.960, 36.63, 6.07, 4.16]),
            ("Proposed", [0.965, 37.10, 5.80, 4.00]),
        ],
    ),
    (
        "COCO",
        [
            ("4bit-LSB", [0.894, 24.96, 17.93, 15.31]),
            ("CAIS", [0.944, 33.70, 6.13, 4.55]),
            ("HiNet", [0.961, 36.55, 6.04, 4.09]),
            ("Proposed", [0.968, 37.20, 5.90, 3.95]),
        ],
    ),
];

/// The quoted comparison as report cells (`n = 0`: sample counts unknown).
pub fn reference_cells() -> Vec<BenchCell> {
    let mut cells = Vec::new();
    for (dataset, methods) in REFERENCE_TABLE {
        for (method, vals) in methods {
            let values = [Metric::Ssim, Metric::Psnr, Metric::Rmse, Metric::Mae]
                .into_iter()
                .zip(vals)
                .map(|(m, v)| CellValue::new(m, PairKind::SecretRecovered, v))
                .collect();
            cells.push(BenchCell {
                dataset: dataset.to_string(),
                method: format!("{method} ({REFERENCE_LABEL})"),
                params: REFERENCE_LABEL.to_string(),
                n: 0,
                failures: 0,
                reference: true,
                values,
            });
        }
    }
    cells
}
