//! Dataset ingestion, report rendering and file output.

mod dataset;
mod report;

pub use dataset::{
    load_contrasts, load_dataset, load_path, read_contrasts, read_sample, Contrast, DatasetSpec,
};
pub use report::{stars, to_json, write_atomic, ComparisonTable, ContrastReport, SCHEMA_VERSION};
