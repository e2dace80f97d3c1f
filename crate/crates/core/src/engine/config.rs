//! Pipeline configuration and its derived noise calibration.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::accountant::{split_budget, tree_levels, BudgetSplit, DpBudget, SplitRatios};
use crate::bounding::SensitivityConfig;
use crate::engine::window::WindowSpec;
use crate::error::{Error, Result};
use crate::keyselect::{plan_selection, SelectionParams, SelectionPlan};
use crate::perturb::{Column, PerturbParams};

/// Explicit noise settings that bypass calibration. Runs using any of these
/// carry no privacy guarantee; they exist for oracle checks and
/// experiments.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct NoiseOverrides {
    pub selection_sigma: Option<f64>,
    /// Constant threshold offset replacing the calibrated `tau_i`.
    pub tau: Option<f64>,
    pub aggregation_sigma: Option<f64>,
}

impl NoiseOverrides {
    /// No noise and no threshold offset anywhere.
    pub fn noiseless() -> Self {
        NoiseOverrides {
            selection_sigma: Some(0.0),
            tau: Some(0.0),
            aggregation_sigma: Some(0.0),
        }
    }

    pub fn any(&self) -> bool {
        self.selection_sigma.is_some() || self.tau.is_some() || self.aggregation_sigma.is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub epsilon: f64,
    pub delta: f64,
    /// Per-key selection failure probability; derived from the delta
    /// budget when absent.
    pub beta: Option<f64>,
    pub c: u32,
    pub mu: f64,
    pub l_m: f64,
    /// Triggers per window.
    pub triggers: u64,
    pub window: WindowSpec,
    pub seed: u64,
    pub split: SplitRatios,
    pub columns: Vec<Column>,
    /// Use the prediction index instead of scanning every tracked key.
    pub prediction: bool,
    /// Maximum releases per key per window; defaults to `triggers`.
    pub max_releases: Option<u64>,
    /// Commit a snapshot every this many triggers (0: only at window ends).
    pub checkpoint_every: u64,
    pub overrides: NoiseOverrides,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            epsilon: 6.0,
            delta: 1e-9,
            beta: None,
            c: 32,
            mu: 0.0,
            l_m: 1.0,
            triggers: 100,
            window: WindowSpec::days(1),
            seed: 0,
            split: SplitRatios::default(),
            columns: vec![Column::default()],
            prediction: true,
            max_releases: None,
            checkpoint_every: 0,
            overrides: NoiseOverrides::default(),
        }
    }
}

/// Everything derived from a config before the first record is processed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub split: BudgetSplit,
    pub selection: SelectionParams,
    /// Absent when selection noise is overridden.
    pub selection_plan: Option<SelectionPlan>,
    pub perturb: PerturbParams,
    pub sensitivity: SensitivityConfig,
    pub levels: u32,
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        DpBudget::new(self.epsilon, self.delta)?;
        self.split.validate()?;
        self.window.validate()?;
        SensitivityConfig::new(self.c, self.l_m)?;
        if self.triggers < 1 {
            return Err(Error::invalid("need at least one trigger"));
        }
        if !(self.mu >= 0.0) {
            return Err(Error::invalid("mu must be >= 0"));
        }
        if let Some(b) = self.beta {
            if !(b > 0.0 && b < 1.0) {
                return Err(Error::invalid(format!("beta must lie in (0, 1), got {b}")));
            }
        }
        if self.columns.is_empty() {
            return Err(Error::invalid("at least one aggregation column is required"));
        }
        Ok(())
    }

    pub fn sensitivity(&self) -> Result<SensitivityConfig> {
        SensitivityConfig::new(self.c, self.l_m)
    }

    pub fn capacity(&self) -> u64 {
        self.max_releases.unwrap_or(self.triggers)
    }

    pub fn calibrate(&self) -> Result<Calibration> {
        self.validate()?;
        let sensitivity = self.sensitivity()?;
        let split = split_budget(DpBudget::new(self.epsilon, self.delta)?, self.split);
        let ov = self.overrides;

        let (selection_sigma, plan) = match ov.selection_sigma {
            Some(s) => (s, None),
            None => {
                let plan = plan_selection(split.key_selection, self.c, self.triggers, self.beta)?;
                (plan.sigma, Some(plan))
            }
        };
        let selection = match ov.tau {
            Some(tau) => SelectionParams::with_fixed_tau(self.triggers, selection_sigma, self.mu, tau)?,
            None => {
                let beta = match (plan, self.beta) {
                    (Some(p), _) => p.beta,
                    (None, Some(b)) => b,
                    (None, None) => {
                        return Err(Error::invalid("an overridden selection sigma needs an explicit beta or tau"))
                    }
                };
                SelectionParams::new(self.triggers, selection_sigma, self.mu, beta)?
            }
        };

        let perturb = match ov.aggregation_sigma {
            Some(s) => PerturbParams::with_sigma(self.columns.clone(), s, self.capacity(), self.l_m),
            None => PerturbParams::calibrated(self.columns.clone(), &sensitivity, split.aggregation, self.capacity())?,
        };
        Ok(Calibration {
            split,
            selection,
            selection_plan: plan,
            perturb,
            sensitivity,
            levels: tree_levels(self.triggers),
        })
    }

    /// Stable digest of every setting that affects outputs, so a state
    /// directory is never resumed under a different configuration.
    pub fn fingerprint(&self) -> u64 {
        let mut c = self.clone();
        c.checkpoint_every = 0;
        let bytes = serde_json::to_vec(&c).expect("config serializes");
        let digest = Sha256::digest(&bytes);
        u64::from_le_bytes(digest[..8].try_into().unwrap())
    }
}
