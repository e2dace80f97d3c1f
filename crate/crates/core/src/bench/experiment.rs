//! Running engines side by side and scoring them against exact totals.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::baselines::{baseline_incremental, baseline_repeated, BaselineConfig};
use crate::bench::metrics::{latest_histogram, utility_metrics, UtilityReport};
use crate::bench::truth::final_truth;
use crate::bounding::Record;
use crate::engine::{run_pipeline, PipelineConfig};
use crate::error::{Error, Result};
use crate::noise::derive_seed;
use crate::perturb::{Column, Release};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EngineKind {
    DpSqlp,
    /// Repeated one-shot queries over the growing prefix.
    Baseline1,
    /// Independent one-shot queries per micro-batch.
    Baseline2,
}

impl EngineKind {
    pub const ALL: [EngineKind; 3] = [EngineKind::DpSqlp, EngineKind::Baseline1, EngineKind::Baseline2];
}

impl fmt::Display for EngineKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EngineKind::DpSqlp => "dpsqlp",
            EngineKind::Baseline1 => "baseline1",
            EngineKind::Baseline2 => "baseline2",
        })
    }
}

impl FromStr for EngineKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        EngineKind::ALL
            .into_iter()
            .find(|k| k.to_string() == s.to_ascii_lowercase())
            .ok_or_else(|| Error::invalid(format!("unknown engine {s:?}")))
    }
}

/// The baseline settings that share budget, bounding and windowing with
/// `cfg`.
pub fn baseline_config(cfg: &PipelineConfig) -> BaselineConfig {
    BaselineConfig {
        epsilon: cfg.epsilon,
        delta: cfg.delta,
        c: cfg.c,
        l_m: cfg.l_m,
        mu: cfg.mu,
        triggers: cfg.triggers,
        window: cfg.window,
        seed: cfg.seed,
        columns: cfg.columns.clone(),
    }
}

pub fn run_engine(kind: EngineKind, records: &[Record], cfg: &PipelineConfig) -> Result<Vec<Release>> {
    match kind {
        EngineKind::DpSqlp => Ok(run_pipeline(records, cfg)?.0),
        EngineKind::Baseline1 => baseline_repeated(records, &baseline_config(cfg)),
        EngineKind::Baseline2 => baseline_incremental(records, &baseline_config(cfg)),
    }
}

/// Scores the last released value of every key against the exact,
/// unbounded totals at the final trigger, over all windows.
pub fn evaluate_final(releases: &[Release], records: &[Record], cfg: &PipelineConfig) -> UtilityReport {
    let column = cfg.columns.first().cloned().unwrap_or_default();
    let truth_input: Vec<Record> = match &column {
        Column::Sum(_) => records.to_vec(),
        Column::Count(_) => records.iter().map(|r| Record { value: 1.0, ..r.clone() }).collect(),
    };
    let truth_by_window = final_truth(&truth_input, &cfg.window, cfg.triggers);
    let sole_window = match truth_by_window.len() {
        1 => truth_by_window.keys().next().copied(),
        _ => None,
    };
    let truth: BTreeMap<(i64, String), f64> = truth_by_window
        .into_iter()
        .flat_map(|(w, t)| t.into_iter().map(move |(k, v)| ((w, k), v)))
        .collect();
    let dp: BTreeMap<(i64, String), f64> = latest_histogram(releases, column.name())
        .into_iter()
        .map(|((w, k), v)| ((w.or(sole_window).unwrap_or(0), k), v))
        .collect();
    utility_metrics(&dp, &truth)
}

/// Final-trigger utility of each engine on the same stream and config.
pub fn compare_engines(records: &[Record], cfg: &PipelineConfig, kinds: &[EngineKind]) -> Result<Vec<(EngineKind, UtilityReport)>> {
    kinds
        .iter()
        .map(|&k| Ok((k, evaluate_final(&run_engine(k, records, cfg)?, records, cfg))))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub c: u32,
    pub runs: Vec<UtilityReport>,
    pub mean: UtilityReport,
}

/// One full run per contribution bound and repetition, each with its own
/// noise seed derived from `cfg.seed`.
pub fn sweep_contribution_bound(
    records: &[Record],
    cfg: &PipelineConfig,
    kind: EngineKind,
    c_values: &[u32],
    repetitions: u32,
) -> Result<Vec<SweepRow>> {
    if c_values.is_empty() {
        return Err(Error::invalid("no contribution bounds to sweep"));
    }
    c_values
        .iter()
        .map(|&c| {
            let runs = (0..repetitions.max(1))
                .map(|rep| {
                    let seed = derive_seed(cfg.seed, "sweep", &[&c.to_le_bytes(), &rep.to_le_bytes()]);
                    let run_cfg = PipelineConfig { c, seed, ..cfg.clone() };
                    Ok(evaluate_final(&run_engine(kind, records, &run_cfg)?, records, &run_cfg))
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(SweepRow { c, mean: UtilityReport::mean(&runs), runs })
        })
        .collect()
}
