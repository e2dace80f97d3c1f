//! Synthetic workloads, ingestion, exact totals, utility metrics, and
//! experiment drivers.

pub mod experiment;
pub mod ingest;
pub mod metrics;
pub mod synth;
pub mod truth;
pub mod zipf;

pub use experiment::{compare_engines, evaluate_final, run_engine, sweep_contribution_bound, EngineKind, SweepRow};
pub use ingest::{ingest, ColumnMapping, ErrorPolicy, Format};
pub use metrics::{latest_histogram, utility_metrics, UtilityReport};
pub use synth::{generate_synthetic, SynthParams, ZipfParams};
pub use truth::{final_truth, ground_truth, ground_truth_sort_merge, TruthSnapshot};
pub use zipf::ZipfMandelbrot;
