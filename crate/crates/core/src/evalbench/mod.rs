//! Steganalysis and the method-comparison benchmark.

mod bench;
mod detect;
mod fixtures;
mod report;

pub use bench::{evaluate_image, run_benchmark, BenchConfig, ImageOutcome, Method};
pub use detect::{
    balanced_accuracy, chi_square_lsb_score, detection_accuracy, CnnDetector, CnnTrainConfig, Detector,
    CHI_MIN_EXPECTED, DETECTION_THRESHOLD,
};
pub use fixtures::{synthetic_cover, write_fixture_dataset};
pub use report::{
    emit_report, parse_csv_rows, reference_cells, BenchCell, BenchMetadata, BenchReport, CellValue, Metric,
    ReportFormat, ReportRow, REFERENCE_LABEL, REFERENCE_TABLE,
};
