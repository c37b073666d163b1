//! Experiment orchestration: corpora, pretraining, the PT and BT probes,
//! the six-system matrix, analysis reports and run manifests.

mod config;
mod probes;
mod report;
mod workbench;

pub use config::{DataSizes, ExperimentConfig};
pub use probes::{
    reference, run_all_analysis, run_analysis, run_bt_probe, run_main_matrix, run_pretrain, run_pt_probe, SystemOutputs, SYSTEMS,
};
pub use report::{median, ReportRow, ReportTable, SeedCells, REFERENCE_LABEL};
pub use workbench::{denoising_corpus, CommandManifest, Corpora, Decoded, Workbench, TOOL_VERSION};
