//! Streaming private key selection over unique-user counts.
//!
//! Each tracked key runs selection in rounds. A round accumulates the set of
//! distinct users seen for the key; once the exact count exceeds `mu` a DP
//! tree is spawned and fed the round's running count, and the key is
//! selected at the first trigger where the tree's noisy prefix exceeds
//! `mu + tau_i`. Selection restarts the round. After `C` rounds the key is
//! permanently selected and stops spending selection budget.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::accountant::{
    advanced_per_round_epsilon, calibrate_sigma, calibrate_tau, max_rho_for, tree_levels, DpBudget,
};
use crate::dptree::{self, prefix_variance_for, TreeState};
use crate::error::{Error, Result};
use crate::noise::indexed_seed;

/// Trigger-independent parameters shared by every key's selection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionParams {
    /// Number of triggers per window.
    pub triggers: u64,
    /// Per-node noise of the selection trees.
    pub sigma: f64,
    pub mu: f64,
    /// Per-key failure probability, spread uniformly over the triggers.
    pub beta: f64,
    /// `taus[i - 1]` is the threshold offset at trigger `i`.
    taus: Vec<f64>,
}

impl SelectionParams {
    pub fn new(triggers: u64, sigma: f64, mu: f64, beta: f64) -> Result<Self> {
        if triggers < 1 {
            return Err(Error::invalid("need at least one trigger"));
        }
        if !(mu >= 0.0) {
            return Err(Error::invalid(format!("mu must be >= 0, got {mu}")));
        }
        let height = crate::accountant::tree_height(triggers);
        let step_beta = beta / triggers as f64;
        let taus = (1..=triggers)
            .map(|i| calibrate_tau(prefix_variance_for(height, sigma, i), step_beta))
            .collect::<Result<Vec<_>>>()?;
        Ok(SelectionParams {
            triggers,
            sigma,
            mu,
            beta,
            taus,
        })
    }

    /// Parameters with an explicit, constant threshold offset (for
    /// noiseless checks and experiments).
    pub fn with_fixed_tau(triggers: u64, sigma: f64, mu: f64, tau: f64) -> Result<Self> {
        if triggers < 1 {
            return Err(Error::invalid("need at least one trigger"));
        }
        Ok(SelectionParams {
            triggers,
            sigma,
            mu,
            beta: f64::NAN,
            taus: vec![tau; triggers as usize],
        })
    }

    pub fn tau(&self, trigger: u64) -> f64 {
        self.taus[(trigger - 1) as usize]
    }

    pub fn threshold(&self, trigger: u64) -> f64 {
        self.mu + self.tau(trigger)
    }
}

/// Which accounting argument produced a [`SelectionPlan`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SelectionRoute {
    /// Each round gets `ε_k / C`.
    Naive,
    /// Rounds compose by advanced composition.
    Advanced,
    /// Rounds compose in zCDP; one conversion at the end.
    Zcdp,
}

/// Calibrated selection noise and failure probability for a key-selection
/// budget shared across `C` rounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelectionPlan {
    pub sigma: f64,
    pub beta: f64,
    pub route: SelectionRoute,
}

fn coupling_beta(share: f64, per_round_eps: f64, rounds: f64) -> f64 {
    share / (rounds * (per_round_eps.exp() + 1.0))
}

/// Calibrates selection noise for budget `budget`, `c` rounds per user and
/// `triggers` triggers. Each round costs the tree's privacy loss plus a
/// coupling failure term `(e^ε + 1)·β`. Several valid accounting routes are
/// evaluated and the one needing the least noise wins. When `beta` is
/// `None`, half of the delta budget funds the coupling terms.
pub fn plan_selection(
    budget: DpBudget,
    c: u32,
    triggers: u64,
    beta: Option<f64>,
) -> Result<SelectionPlan> {
    if !(budget.epsilon > 0.0 && budget.delta > 0.0) {
        return Err(Error::invalid("key selection needs positive epsilon and delta"));
    }
    if c < 1 {
        return Err(Error::invalid("contribution bound C must be >= 1"));
    }
    let cf = c as f64;
    let levels = tree_levels(triggers) as f64;
    let mut best: Option<SelectionPlan> = None;
    let mut consider = |plan: Result<SelectionPlan>| {
        if let Ok(p) = plan {
            if p.sigma.is_finite() && best.is_none_or(|b| p.sigma < b.sigma) {
                best = Some(p);
            }
        }
    };

    // Per-round epsilon for the pure-DP routes, and delta left for trees.
    let per_round = |eps_r: f64, delta_rounds: f64| -> Result<(f64, f64)> {
        let (tree_delta, b) = match beta {
            None => (delta_rounds / (2.0 * cf), coupling_beta(delta_rounds / 2.0, eps_r, cf)),
            Some(b) => {
                let rest = delta_rounds - cf * (eps_r.exp() + 1.0) * b;
                (rest / cf, b)
            }
        };
        if !(tree_delta > 0.0) {
            return Err(Error::Calibration("beta leaves no delta for the trees".into()));
        }
        let sigma = calibrate_sigma(triggers, DpBudget::new(eps_r, tree_delta)?, 1.0)?.sigma;
        Ok((sigma, b))
    };

    consider((|| {
        let eps_r = budget.epsilon / cf;
        let (sigma, b) = per_round(eps_r, budget.delta)?;
        Ok(SelectionPlan { sigma, beta: b, route: SelectionRoute::Naive })
    })());

    if c > 1 {
        consider((|| {
            let slack = budget.delta / 2.0;
            let eps_r = advanced_per_round_epsilon(budget.epsilon, c, slack)?;
            let (sigma, b) = per_round(eps_r, budget.delta - slack)?;
            Ok(SelectionPlan { sigma, beta: b, route: SelectionRoute::Advanced })
        })());
    }

    consider((|| {
        let (tree_delta, b) = match beta {
            None => (budget.delta / 2.0, coupling_beta(budget.delta / 2.0, budget.epsilon, cf)),
            Some(b) => (budget.delta - cf * (budget.epsilon.exp() + 1.0) * b, b),
        };
        if !(tree_delta > 0.0) {
            return Err(Error::Calibration("beta leaves no delta for the trees".into()));
        }
        let rho_round = max_rho_for(DpBudget::new(budget.epsilon, tree_delta)?)? / cf;
        if !(rho_round > 0.0) {
            return Err(Error::Calibration("empty zCDP budget".into()));
        }
        let sigma = (levels / (2.0 * rho_round)).sqrt();
        Ok(SelectionPlan { sigma, beta: b, route: SelectionRoute::Zcdp })
    })());

    best.ok_or_else(|| {
        Error::Calibration(format!(
            "no key-selection accounting fits epsilon={}, delta={}, beta={beta:?}",
            budget.epsilon, budget.delta
        ))
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelectionOutcome {
    pub selected: bool,
    pub noisy_count: f64,
    pub trigger_index: u64,
}

pub fn mu_prefilter(noiseless_count: u64, mu: f64) -> bool {
    noiseless_count as f64 > mu
}

/// A fresh selection tree whose leaves before `trigger_index` hold zeros.
pub fn spawn_tree_at(triggers: u64, trigger_index: u64, sigma: f64, seed: u64) -> Result<TreeState> {
    let mut tree = TreeState::new(triggers, sigma, seed)?;
    tree.skip_to(trigger_index)?;
    Ok(tree)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeySelectionState {
    seed: u64,
    max_rounds: u32,
    rounds_completed: u32,
    permanent: bool,
    last_trigger: u64,
    round_users: BTreeSet<String>,
    /// Total already written into the current tree's leaves.
    inserted: u64,
    #[serde(with = "dptree::compact::option")]
    tree: Option<TreeState>,
}

impl KeySelectionState {
    /// `seed` scopes all of this key's selection trees; `max_rounds` is C.
    pub fn new(seed: u64, max_rounds: u32) -> Self {
        KeySelectionState {
            seed,
            max_rounds,
            rounds_completed: 0,
            permanent: false,
            last_trigger: 0,
            round_users: BTreeSet::new(),
            inserted: 0,
            tree: None,
        }
    }

    pub fn rounds_completed(&self) -> u32 {
        self.rounds_completed
    }

    pub fn is_permanent(&self) -> bool {
        self.permanent
    }

    pub fn active(&self) -> bool {
        !self.permanent
    }

    /// Distinct users counted in the current round.
    pub fn cumulative_count(&self) -> u64 {
        self.round_users.len() as u64
    }

    pub fn round_users(&self) -> &BTreeSet<String> {
        &self.round_users
    }

    pub fn tree(&self) -> Option<&TreeState> {
        self.tree.as_ref()
    }

    pub fn last_trigger(&self) -> u64 {
        self.last_trigger
    }

    fn round_seed(&self) -> u64 {
        indexed_seed(self.seed, "selection-round", self.rounds_completed as u64)
    }

    /// Records the users seen for this key at `trigger_index`. Returns the
    /// users that were new to the current round.
    pub fn observe<'a, I>(
        &mut self,
        trigger_index: u64,
        users: I,
        params: &SelectionParams,
    ) -> Result<Vec<String>>
    where
        I: IntoIterator<Item = &'a str>,
    {
        if self.permanent {
            return Err(Error::State("observe on a permanently selected key".into()));
        }
        if trigger_index <= self.last_trigger {
            return Err(Error::Sequencing(format!(
                "trigger {trigger_index} observed after trigger {}",
                self.last_trigger
            )));
        }
        if trigger_index > params.triggers {
            return Err(Error::InvalidStep {
                step: trigger_index,
                max: params.triggers,
            });
        }
        let mut fresh = Vec::new();
        for u in users {
            if !self.round_users.contains(u) {
                self.round_users.insert(u.to_string());
                fresh.push(u.to_string());
            }
        }
        let count = self.cumulative_count();
        if self.tree.is_none() && mu_prefilter(count, params.mu) {
            self.tree = Some(spawn_tree_at(params.triggers, trigger_index, params.sigma, self.round_seed())?);
            self.inserted = 0;
        }
        if let Some(tree) = self.tree.as_mut() {
            tree.skip_to(trigger_index)?;
            tree.add(trigger_index, (count - self.inserted) as f64)?;
            self.inserted = count;
        }
        self.last_trigger = trigger_index;
        Ok(fresh)
    }

    /// Tests the noisy count at `trigger_index` against `mu + tau_i`.
    pub fn test_threshold(&self, trigger_index: u64, params: &SelectionParams) -> Result<SelectionOutcome> {
        let Some(tree) = self.tree.as_ref() else {
            return Ok(SelectionOutcome {
                selected: false,
                noisy_count: f64::NAN,
                trigger_index,
            });
        };
        let q = tree.total_sum(trigger_index)?.value;
        Ok(SelectionOutcome {
            selected: q > params.threshold(trigger_index),
            noisy_count: q,
            trigger_index,
        })
    }

    /// Ends the current round after a selection.
    pub fn restart_after_selection(&mut self, outcome: &SelectionOutcome) -> Result<()> {
        if !outcome.selected {
            return Err(Error::State("restart requested without a selection".into()));
        }
        if self.permanent {
            return Err(Error::State("restart on a permanently selected key".into()));
        }
        self.rounds_completed += 1;
        self.round_users.clear();
        self.inserted = 0;
        self.tree = None;
        if self.rounds_completed >= self.max_rounds {
            self.permanent = true;
        }
        Ok(())
    }

    /// First trigger after `current_trigger` at which the current tree,
    /// receiving only zero counts from now on, would pass the threshold.
    /// Leaves the state untouched.
    pub fn predict_empty_release(&self, current_trigger: u64, params: &SelectionParams) -> Option<u64> {
        let tree = self.tree.as_ref()?;
        if tree.sigma() == 0.0 {
            return None;
        }
        let estimates = tree.all_node_estimates();
        ((current_trigger + 1)..=params.triggers).find(|&p| {
            dptree::prefix_value_from(&estimates, tree.height(), p) > params.threshold(p)
        })
    }
}
