//! Hierarchical perturbation of per-key aggregates.
//!
//! A selected key owns one DP tree per aggregation column. Clamped values
//! accumulate in a buffer between releases; each release writes the buffer
//! as the next leaf and publishes the tree's noisy running total.

use serde::{Deserialize, Serialize};

use crate::accountant::{calibrate_sigma, DpBudget};
use crate::bounding::SensitivityConfig;
use crate::dptree::{self, TreeState};
use crate::error::{Error, Result};
use crate::noise::indexed_seed;

/// An additive aggregation over a key's records.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "kind", content = "name", rename_all = "lowercase")]
pub enum Column {
    /// Sum of clamped record values.
    Sum(String),
    /// Number of records (a sum of ones).
    Count(String),
}

impl Column {
    pub fn name(&self) -> &str {
        match self {
            Column::Sum(n) | Column::Count(n) => n,
        }
    }

    fn contribution(&self, value: f64) -> f64 {
        match self {
            Column::Sum(_) => value,
            Column::Count(_) => 1.0,
        }
    }

    /// Largest absolute contribution of one record.
    pub fn per_record_bound(&self, l_m: f64) -> f64 {
        match self {
            Column::Sum(_) => l_m,
            Column::Count(_) => 1.0,
        }
    }
}

impl Default for Column {
    fn default() -> Self {
        Column::Sum("value".to_string())
    }
}

/// One emitted histogram entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Release {
    pub trigger: u64,
    pub key: String,
    pub column: String,
    pub value: f64,
    /// Present only when a run spans more than one window.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub window_start: Option<i64>,
}

/// Noise and capacity shared by all keys' aggregation trees.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbParams {
    pub columns: Vec<Column>,
    /// Per-column node noise, aligned with `columns`.
    pub sigmas: Vec<f64>,
    /// Maximum releases per key per window.
    pub capacity: u64,
    pub l_m: f64,
}

impl PerturbParams {
    /// Calibrates every column for `budget`, splitting zCDP equally across
    /// columns.
    pub fn calibrated(
        columns: Vec<Column>,
        cfg: &SensitivityConfig,
        budget: DpBudget,
        capacity: u64,
    ) -> Result<Self> {
        if columns.is_empty() {
            return Err(Error::invalid("at least one aggregation column is required"));
        }
        let unit = perturbation_sigma(&SensitivityConfig::new(cfg.c, 1.0)?, budget, capacity, columns.len())?;
        let sigmas = columns
            .iter()
            .map(|c| unit * c.per_record_bound(cfg.l_m))
            .collect();
        Ok(PerturbParams {
            columns,
            sigmas,
            capacity,
            l_m: cfg.l_m,
        })
    }

    /// Parameters with explicit per-column noise.
    pub fn with_sigma(columns: Vec<Column>, sigma: f64, capacity: u64, l_m: f64) -> Self {
        let sigmas = vec![sigma; columns.len()];
        PerturbParams {
            columns,
            sigmas,
            capacity,
            l_m,
        }
    }
}

/// Node noise for one aggregation tree. A user's `C` clamped records can
/// all land in one node, so the node sensitivity is `C·L_m`; with several
/// columns each gets an equal share of the zCDP budget.
pub fn perturbation_sigma(cfg: &SensitivityConfig, budget: DpBudget, t: u64, columns: usize) -> Result<f64> {
    let node_sensitivity = cfg.l1_sensitivity() * (columns.max(1) as f64).sqrt();
    Ok(calibrate_sigma(t, budget, node_sensitivity)?.sigma)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ColumnState {
    buffered: f64,
    #[serde(with = "dptree::compact::option")]
    tree: Option<TreeState>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregationState {
    seed: u64,
    columns: Vec<ColumnState>,
    releases: u64,
    last_release_trigger: u64,
}

impl AggregationState {
    pub fn new(seed: u64, columns: usize) -> Self {
        AggregationState {
            seed,
            columns: vec![
                ColumnState {
                    buffered: 0.0,
                    tree: None,
                };
                columns
            ],
            releases: 0,
            last_release_trigger: 0,
        }
    }

    pub fn last_release_trigger(&self) -> u64 {
        self.last_release_trigger
    }

    pub fn release_count(&self) -> u64 {
        self.releases
    }

    pub fn buffered_delta(&self) -> Vec<f64> {
        self.columns.iter().map(|c| c.buffered).collect()
    }

    pub fn tree(&self, column: usize) -> Option<&TreeState> {
        self.columns[column].tree.as_ref()
    }

    /// Adds already-clamped record values to the buffer.
    pub fn accumulate_delta<I>(&mut self, values: I, params: &PerturbParams) -> Result<()>
    where
        I: IntoIterator<Item = f64>,
    {
        for v in values {
            if !(v.abs() <= params.l_m) {
                return Err(Error::ContractViolation(format!(
                    "value {v} exceeds clamp bound {}",
                    params.l_m
                )));
            }
            for (col, state) in params.columns.iter().zip(self.columns.iter_mut()) {
                state.buffered += col.contribution(v);
            }
        }
        Ok(())
    }

    /// Publishes the noisy running totals of a selected key.
    pub fn release(
        &mut self,
        key: &str,
        trigger_index: u64,
        selected: bool,
        params: &PerturbParams,
    ) -> Result<Vec<Release>> {
        if !selected {
            return Err(Error::Sequencing(format!("release of unselected key {key:?}")));
        }
        if trigger_index <= self.last_release_trigger {
            return Err(Error::Sequencing(format!(
                "release at trigger {trigger_index} after release at {}",
                self.last_release_trigger
            )));
        }
        let leaf = self.releases + 1;
        if leaf > params.capacity {
            return Err(Error::Capacity {
                leaf,
                capacity: params.capacity,
            });
        }
        let mut out = Vec::with_capacity(self.columns.len());
        for (idx, (col, state)) in params.columns.iter().zip(self.columns.iter_mut()).enumerate() {
            let tree = match state.tree.as_mut() {
                Some(t) => t,
                None => state.tree.insert(TreeState::new(
                    params.capacity,
                    params.sigmas[idx],
                    indexed_seed(self.seed, "aggregation-column", idx as u64),
                )?),
            };
            tree.add(leaf, state.buffered)?;
            state.buffered = 0.0;
            out.push(Release {
                trigger: trigger_index,
                key: key.to_string(),
                column: col.name().to_string(),
                value: tree.total_sum(leaf)?.value,
                window_start: None,
            });
        }
        self.releases = leaf;
        self.last_release_trigger = trigger_index;
        Ok(out)
    }
}
