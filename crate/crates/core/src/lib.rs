//! Streaming user-level differentially private histograms.
//!
//! Records `(key, value, timestamp, user_id)` arrive in micro-batches. The
//! engine bounds each user's contribution, selects keys privately with
//! per-key DP trees over unique-user counts, and releases running per-key
//! sums through a second layer of DP trees. An accountant calibrates all
//! noise from a single `(ε, δ)` budget.
//!
//! ```
//! use dpsqlp::bounding::Record;
//! use dpsqlp::engine::{run_pipeline, PipelineConfig};
//!
//! let records: Vec<Record> = (0..50)
//!     .map(|i| Record::new("cats", 1.0, i * 60, format!("u{i}")))
//!     .collect();
//! let cfg = PipelineConfig { triggers: 10, ..PipelineConfig::default() };
//! let (releases, report) = run_pipeline(&records, &cfg).unwrap();
//! assert_eq!(report.records_in, 50);
//! assert!(releases.iter().all(|r| r.key == "cats"));
//! ```

pub mod accountant;
pub mod baselines;
pub mod bench;
pub mod bounding;
pub mod dptree;
pub mod engine;
pub mod error;
pub mod keyselect;
pub mod noise;
pub mod perturb;

pub use error::{Error, Result};
