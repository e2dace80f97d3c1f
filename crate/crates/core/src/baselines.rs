//! One-shot comparison systems: a bounded-contribution Gaussian histogram
//! with noisy-count key thresholding, run either repeatedly over the
//! growing prefix or independently over each micro-batch.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::accountant::{calibrate_tau, max_rho_for, optimal_per_run_epsilon, DpBudget};
use crate::bounding::{bound_contributions, Record, SensitivityConfig, UserBudgetTable};
use crate::engine::window::{split_into_batches, WindowSpec};
use crate::error::{Error, Result};
use crate::noise::{derive_seed, node_noise};
use crate::perturb::{Column, Release};

/// A calibrated one-shot histogram mechanism.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OneShotConfig {
    pub budget: DpBudget,
    pub c: u32,
    pub l_m: f64,
    pub mu: f64,
    pub columns: Vec<Column>,
    /// Noise on per-key unique-user counts.
    pub count_sigma: f64,
    /// Noise per aggregation column.
    pub column_sigmas: Vec<f64>,
    pub beta: f64,
    /// Noisy user counts must exceed `mu + tau`.
    pub tau: f64,
}

impl OneShotConfig {
    /// Calibrates for `budget`. Half of delta converts the Gaussian part
    /// (zCDP, split equally between the user counts and the columns); the
    /// other half pays for thresholding failures on the at most `C` keys a
    /// user can touch.
    pub fn calibrate(budget: DpBudget, sens: &SensitivityConfig, mu: f64, columns: Vec<Column>) -> Result<Self> {
        if !(budget.epsilon > 0.0 && budget.delta > 0.0) {
            return Err(Error::invalid("one-shot budget needs positive epsilon and delta"));
        }
        if columns.is_empty() {
            return Err(Error::invalid("at least one aggregation column is required"));
        }
        let cf = sens.c as f64;
        let rho = max_rho_for(DpBudget::new(budget.epsilon, budget.delta / 2.0)?)?;
        if !(rho > 0.0) {
            return Err(Error::Calibration("empty one-shot budget".into()));
        }
        let half = rho / 2.0;
        let count_sigma = (cf / (2.0 * half)).sqrt();
        let per_column = half / columns.len() as f64;
        let column_sigmas = columns
            .iter()
            .map(|col| cf * col.per_record_bound(sens.l_m) / (2.0 * per_column).sqrt())
            .collect();
        let beta = budget.delta / 2.0 / (cf * (budget.epsilon.exp() + 1.0));
        let tau = calibrate_tau(count_sigma * count_sigma, beta)?;
        Ok(OneShotConfig {
            budget,
            c: sens.c,
            l_m: sens.l_m,
            mu,
            columns,
            count_sigma,
            column_sigmas,
            beta,
            tau,
        })
    }
}

/// Per-key aggregate of a bounded record set.
#[derive(Debug, Clone, Default, PartialEq)]
struct KeyAgg {
    users: BTreeSet<String>,
    columns: Vec<f64>,
}

fn aggregate(records: &[Record], columns: &[Column]) -> BTreeMap<String, KeyAgg> {
    let mut out: BTreeMap<String, KeyAgg> = BTreeMap::new();
    for r in records {
        let e = out.entry(r.key.clone()).or_insert_with(|| KeyAgg {
            users: BTreeSet::new(),
            columns: vec![0.0; columns.len()],
        });
        e.users.insert(r.user_id.clone());
        for (acc, col) in e.columns.iter_mut().zip(columns) {
            *acc += match col {
                Column::Sum(_) => r.value,
                Column::Count(_) => 1.0,
            };
        }
    }
    out
}

/// One released histogram row: key and per-column noisy values.
pub type Histogram = BTreeMap<String, Vec<f64>>;

/// Releases a Gaussian histogram of already-bounded records; `seed` fixes
/// the noise.
pub fn one_shot_dp_histogram(records: &[Record], cfg: &OneShotConfig, seed: u64) -> Histogram {
    let mut out = Histogram::new();
    for (key, agg) in aggregate(records, &cfg.columns) {
        let count = agg.users.len() as f64;
        if !(count > cfg.mu) {
            continue;
        }
        let ks = derive_seed(seed, "one-shot", &[key.as_bytes()]);
        let noisy_count = count + cfg.count_sigma * node_noise(ks, 0);
        if !(noisy_count > cfg.mu + cfg.tau) {
            continue;
        }
        let values = agg
            .columns
            .iter()
            .zip(&cfg.column_sigmas)
            .enumerate()
            .map(|(j, (v, s))| if *s == 0.0 { *v } else { v + s * node_noise(ks, j as u64 + 1) })
            .collect();
        out.insert(key, values);
    }
    out
}

/// Shared settings of both baselines.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineConfig {
    pub epsilon: f64,
    pub delta: f64,
    pub c: u32,
    pub l_m: f64,
    pub mu: f64,
    pub triggers: u64,
    pub window: WindowSpec,
    pub seed: u64,
    pub columns: Vec<Column>,
}

impl BaselineConfig {
    fn sensitivity(&self) -> Result<SensitivityConfig> {
        SensitivityConfig::new(self.c, self.l_m)
    }
}

/// Per-run budget of the repeated baseline: optimal composition over
/// `runs` runs, spending half of delta as composition slack.
pub fn repeated_run_budget(epsilon: f64, delta: f64, runs: u64) -> Result<DpBudget> {
    if runs == 1 {
        return DpBudget::new(epsilon, delta);
    }
    let k = u32::try_from(runs).map_err(|_| Error::invalid("too many runs"))?;
    let slack = delta / 2.0;
    let per_delta = delta / 2.0 / runs as f64;
    let eps = optimal_per_run_epsilon(epsilon, per_delta, k, slack)?;
    DpBudget::new(eps, per_delta)
}

fn bounded_batches(records: &[Record], cfg: &BaselineConfig) -> Result<Vec<(i64, u64, Vec<Record>)>> {
    let sens = cfg.sensitivity()?;
    let (batches, _) = split_into_batches(records, &cfg.window, cfg.triggers);
    let mut tables: BTreeMap<i64, UserBudgetTable> = BTreeMap::new();
    Ok(batches
        .into_iter()
        .map(|b| {
            let kept = bound_contributions(&b.records, tables.entry(b.window_start).or_default(), &sens);
            (b.window_start, b.trigger_index, kept)
        })
        .collect())
}

fn emit(out: &mut Vec<Release>, hist: &Histogram, trigger: u64, columns: &[Column], window: Option<i64>) {
    for (key, values) in hist {
        for (col, v) in columns.iter().zip(values) {
            out.push(Release {
                trigger,
                key: key.clone(),
                column: col.name().to_string(),
                value: *v,
                window_start: window,
            });
        }
    }
}

/// Re-runs the one-shot histogram over the whole bounded prefix at every
/// trigger.
pub fn baseline_repeated(records: &[Record], cfg: &BaselineConfig) -> Result<Vec<Release>> {
    let run = repeated_run_budget(cfg.epsilon, cfg.delta, cfg.triggers)?;
    let one = OneShotConfig::calibrate(run, &cfg.sensitivity()?, cfg.mu, cfg.columns.clone())?;
    let batches = bounded_batches(records, cfg)?;
    let multi = batches.iter().map(|b| b.0).collect::<BTreeSet<_>>().len() > 1;
    let mut out = Vec::new();
    let mut prefix: BTreeMap<i64, Vec<Record>> = BTreeMap::new();
    for (w, i, kept) in batches {
        let p = prefix.entry(w).or_default();
        p.extend(kept);
        let seed = derive_seed(cfg.seed, "repeated-run", &[&w.to_le_bytes(), &i.to_le_bytes()]);
        let hist = one_shot_dp_histogram(p, &one, seed);
        emit(&mut out, &hist, i, &cfg.columns, multi.then_some(w));
    }
    Ok(out)
}

/// Runs the one-shot histogram independently on each bounded micro-batch
/// at the full budget and releases running sums of the per-batch outputs.
/// A user's records are spread over batches with at most `C` in total, so
/// the per-batch zCDP costs add up to at most one full-budget run and the
/// thresholding failures to at most `C` key releases.
pub fn baseline_incremental(records: &[Record], cfg: &BaselineConfig) -> Result<Vec<Release>> {
    let one = OneShotConfig::calibrate(DpBudget::new(cfg.epsilon, cfg.delta)?, &cfg.sensitivity()?, cfg.mu, cfg.columns.clone())?;
    let batches = bounded_batches(records, cfg)?;
    let multi = batches.iter().map(|b| b.0).collect::<BTreeSet<_>>().len() > 1;
    let mut out = Vec::new();
    let mut running: BTreeMap<(i64, String), Vec<f64>> = BTreeMap::new();
    for (w, i, kept) in batches {
        let seed = derive_seed(cfg.seed, "incremental-batch", &[&w.to_le_bytes(), &i.to_le_bytes()]);
        let hist = one_shot_dp_histogram(&kept, &one, seed);
        let mut cumulative = Histogram::new();
        for (key, values) in hist {
            let acc = running
                .entry((w, key.clone()))
                .or_insert_with(|| vec![0.0; values.len()]);
            for (a, v) in acc.iter_mut().zip(&values) {
                *a += v;
            }
            cumulative.insert(key, acc.clone());
        }
        emit(&mut out, &cumulative, i, &cfg.columns, multi.then_some(w));
    }
    Ok(out)
}
