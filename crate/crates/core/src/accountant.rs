//! Privacy calculus: zCDP arithmetic, conversion to approximate DP, group
//! privacy, composition theorems, and calibration of tree noise and
//! selection thresholds.
//!
//! Everything here is a pure function of its arguments.

use std::ops::Add;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};

/// Bisection bounds for the per-node noise standard deviation.
pub const SIGMA_SEARCH_RANGE: (f64, f64) = (1e-6, 1e12);

/// Relative width at which the sigma bisection stops. Tighter than the
/// 1e-6 contract so the round trip lands well inside it.
const SIGMA_REL_TOL: f64 = 1e-10;

/// A rho-zCDP guarantee.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Default, Serialize, Deserialize)]
pub struct ZcdpBudget {
    rho: f64,
}

impl ZcdpBudget {
    pub const ZERO: ZcdpBudget = ZcdpBudget { rho: 0.0 };

    pub fn new(rho: f64) -> Result<Self> {
        if !(rho >= 0.0) || !rho.is_finite() {
            return Err(Error::invalid(format!("rho must be finite and >= 0, got {rho}")));
        }
        Ok(ZcdpBudget { rho })
    }

    pub fn rho(self) -> f64 {
        self.rho
    }
}

impl Add for ZcdpBudget {
    type Output = ZcdpBudget;

    fn add(self, rhs: ZcdpBudget) -> ZcdpBudget {
        compose_zcdp(self, rhs)
    }
}

/// An (epsilon, delta)-DP guarantee.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DpBudget {
    pub epsilon: f64,
    pub delta: f64,
}

impl DpBudget {
    pub fn new(epsilon: f64, delta: f64) -> Result<Self> {
        if !(epsilon >= 0.0) || !epsilon.is_finite() {
            return Err(Error::invalid(format!("epsilon must be finite and >= 0, got {epsilon}")));
        }
        if !(0.0..1.0).contains(&delta) {
            return Err(Error::invalid(format!("delta must lie in [0, 1), got {delta}")));
        }
        Ok(DpBudget { epsilon, delta })
    }

    fn validate(&self) -> Result<()> {
        DpBudget::new(self.epsilon, self.delta).map(|_| ())
    }
}

/// Fractions of the total budget handed to key selection; the remainder
/// goes to the aggregation columns.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitRatios {
    pub key_selection_epsilon: f64,
    pub key_selection_delta: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        SplitRatios {
            key_selection_epsilon: 0.5,
            key_selection_delta: 2.0 / 3.0,
        }
    }
}

impl SplitRatios {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("key selection epsilon fraction", self.key_selection_epsilon),
            ("key selection delta fraction", self.key_selection_delta),
        ] {
            if !(v > 0.0 && v < 1.0) {
                return Err(Error::invalid(format!("{name} must lie in (0, 1), got {v}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BudgetSplit {
    pub key_selection: DpBudget,
    pub aggregation: DpBudget,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationResult {
    /// Per-node Gaussian noise standard deviation.
    pub sigma: f64,
    /// `ceil(lg T)`.
    pub tree_height: u32,
    /// Number of tree levels a single leaf touches (`tree_height + 1`).
    pub levels: u32,
    /// The zCDP cost implied by `sigma`.
    pub rho: f64,
}

/// `ceil(lg t)` for `t >= 1`.
pub fn tree_height(t: u64) -> u32 {
    assert!(t >= 1, "tree needs at least one leaf");
    if t == 1 {
        0
    } else {
        64 - (t - 1).leading_zeros()
    }
}

/// Number of nodes on a root-to-leaf path, i.e. how many noisy node values a
/// single leaf input touches.
pub fn tree_levels(t: u64) -> u32 {
    tree_height(t) + 1
}

/// zCDP cost of the Gaussian mechanism: `Δ² / (2σ²)`.
pub fn zcdp_of_gaussian(l2_sensitivity: f64, sigma: f64) -> Result<ZcdpBudget> {
    if !(l2_sensitivity > 0.0) || !(sigma > 0.0) {
        return Err(Error::invalid(format!(
            "sensitivity and sigma must be positive (got {l2_sensitivity}, {sigma})"
        )));
    }
    ZcdpBudget::new(l2_sensitivity * l2_sensitivity / (2.0 * sigma * sigma))
}

pub fn compose_zcdp(a: ZcdpBudget, b: ZcdpBudget) -> ZcdpBudget {
    ZcdpBudget { rho: a.rho + b.rho }
}

fn check_delta(delta: f64) -> Result<()> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::invalid(format!("delta must lie in (0, 1), got {delta}")));
    }
    Ok(())
}

/// `ε = ρ + 2·sqrt(ρ·ln(1/δ))`.
pub fn zcdp_to_dp_closed(rho: ZcdpBudget, delta: f64) -> Result<f64> {
    check_delta(delta)?;
    let rho = rho.rho;
    Ok(rho + 2.0 * (rho * (1.0 / delta).ln()).sqrt())
}

/// Smallest delta such that rho-zCDP implies (eps, delta)-DP, optimized over
/// the Rényi order.
fn cdp_delta(rho: f64, eps: f64) -> f64 {
    if rho == 0.0 {
        return 0.0;
    }
    // The optimal order is at least (1 + eps/rho)/2; 1.01 keeps log1p stable.
    let mut amin = 1.01_f64;
    let mut amax = (eps + 1.0) / (2.0 * rho) + 2.0;
    let mut alpha = 0.5 * (amin + amax);
    for _ in 0..1000 {
        alpha = 0.5 * (amin + amax);
        let derivative = (2.0 * alpha - 1.0) * rho - eps + (-1.0 / alpha).ln_1p();
        if derivative < 0.0 {
            amin = alpha;
        } else {
            amax = alpha;
        }
        if amax - amin <= f64::EPSILON * amax {
            break;
        }
    }
    let delta = ((alpha - 1.0) * (alpha * rho - eps) + alpha * (-1.0 / alpha).ln_1p()).exp()
        / (alpha - 1.0);
    delta.min(1.0)
}

/// Optimized zCDP to (ε, δ) conversion: bisects ε against the Rényi-order
/// optimized δ bound. Never exceeds [`zcdp_to_dp_closed`].
pub fn zcdp_to_dp_tight(rho: ZcdpBudget, delta: f64) -> Result<f64> {
    check_delta(delta)?;
    let rho = rho.rho;
    if rho == 0.0 {
        return Ok(0.0);
    }
    // Invariant: cdp_delta(rho, lo) >= delta, cdp_delta(rho, hi) <= delta.
    let mut lo = 0.0_f64;
    let mut hi = rho + 2.0 * (rho * (1.0 / delta).ln()).sqrt();
    for _ in 0..1000 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if cdp_delta(rho, mid) <= delta {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    if !hi.is_finite() {
        return Err(Error::Calibration(format!(
            "zCDP conversion did not converge for rho={rho}, delta={delta}"
        )));
    }
    Ok(hi)
}

/// Largest rho whose tight conversion at `target.delta` stays within
/// `target.epsilon`.
pub fn max_rho_for(target: DpBudget) -> Result<f64> {
    target.validate()?;
    check_delta(target.delta)?;
    if target.epsilon == 0.0 {
        return Ok(0.0);
    }
    let eps_of = |rho: f64| zcdp_to_dp_tight(ZcdpBudget { rho }, target.delta);
    // rho <= eps always satisfies the closed form's leading term, so search
    // in [0, eps].
    let mut lo = 0.0_f64;
    let mut hi = target.epsilon;
    if eps_of(hi)? <= target.epsilon {
        return Ok(hi);
    }
    for _ in 0..400 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if eps_of(mid)? <= target.epsilon {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-14 * hi {
            break;
        }
    }
    Ok(lo)
}

/// Group privacy for groups of `c` records.
pub fn group_privacy(eps: f64, delta: f64, c: u32) -> Result<DpBudget> {
    if c < 1 {
        return Err(Error::invalid("group size must be >= 1"));
    }
    DpBudget::new(eps, delta)?;
    if c == 1 {
        return Ok(DpBudget { epsilon: eps, delta });
    }
    let cf = c as f64;
    let factor = if eps == 0.0 {
        cf
    } else {
        (cf * eps).exp_m1() / eps.exp_m1()
    };
    Ok(DpBudget {
        epsilon: cf * eps,
        delta: factor * delta,
    })
}

/// C-fold advanced composition, never worse than naive composition.
pub fn advanced_composition(per_round: DpBudget, c: u32, delta_slack: f64) -> Result<DpBudget> {
    per_round.validate()?;
    if c < 1 {
        return Err(Error::invalid("composition count must be >= 1"));
    }
    check_delta(delta_slack)?;
    let cf = c as f64;
    let eps = per_round.epsilon;
    let naive = DpBudget {
        epsilon: cf * eps,
        delta: cf * per_round.delta,
    };
    let advanced_eps = eps * (2.0 * cf * (1.0 / delta_slack).ln()).sqrt() + cf * eps * eps.exp_m1();
    if advanced_eps < naive.epsilon {
        Ok(DpBudget {
            epsilon: advanced_eps,
            delta: cf * per_round.delta + delta_slack,
        })
    } else {
        Ok(naive)
    }
}

/// Largest per-round epsilon whose C-fold [`advanced_composition`] stays
/// within `total_epsilon`.
pub fn advanced_per_round_epsilon(total_epsilon: f64, c: u32, delta_slack: f64) -> Result<f64> {
    let composed = |e: f64| -> Result<f64> {
        Ok(advanced_composition(DpBudget { epsilon: e, delta: 0.0 }, c, delta_slack)?.epsilon)
    };
    let mut lo = 0.0_f64;
    let mut hi = total_epsilon;
    if composed(hi)? <= total_epsilon {
        return Ok(hi);
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if composed(mid)? <= total_epsilon {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(lo)
}

fn log_add_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// Excess delta of the k-fold homogeneous composition of pure `eps`-DP
/// mechanisms at composed level `eps_g` (the exact optimal composition
/// characterization), computed in log space.
fn optimal_excess_delta(eps: f64, k: u32, eps_g: f64) -> f64 {
    if eps == 0.0 {
        return 0.0;
    }
    let kf = k as f64;
    // k * ln(1 + e^eps), stable for large eps.
    let ln_norm = kf * (eps + (-eps).exp().ln_1p());
    let mut ln_binom = 0.0_f64;
    let mut acc = f64::NEG_INFINITY;
    for l in 0..=k {
        let lf = l as f64;
        let hi = (kf - lf) * eps;
        let lo = eps_g + lf * eps;
        if hi <= lo {
            break;
        }
        let term = ln_binom + hi - ln_norm + (-(lo - hi).exp_m1()).ln();
        acc = log_add_exp(acc, term);
        ln_binom += (kf - lf).ln() - (lf + 1.0).ln();
    }
    acc.exp()
}

/// Optimal k-fold composition of identical (ε, δ) mechanisms, spending
/// `delta_slack` of additional failure probability. The result never
/// exceeds naive composition.
pub fn optimal_composition(per_round: DpBudget, k: u32, delta_slack: f64) -> Result<DpBudget> {
    per_round.validate()?;
    if k < 1 {
        return Err(Error::invalid("composition count must be >= 1"));
    }
    check_delta(delta_slack)?;
    if k == 1 {
        return Ok(per_round);
    }
    let kf = k as f64;
    let total_delta = -((kf * (-per_round.delta).ln_1p()) + (-delta_slack).ln_1p()).exp_m1();
    let eps = per_round.epsilon;
    let naive = kf * eps;
    let mut lo = 0.0_f64;
    let mut hi = naive;
    if optimal_excess_delta(eps, k, lo) <= delta_slack {
        hi = lo;
    } else {
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            let d = optimal_excess_delta(eps, k, mid);
            if !d.is_finite() {
                return Err(Error::Calibration(format!(
                    "optimal composition overflowed for k={k}, eps={eps}"
                )));
            }
            if d <= delta_slack {
                hi = mid;
            } else {
                lo = mid;
            }
        }
    }
    Ok(DpBudget {
        epsilon: hi.min(naive),
        delta: total_delta,
    })
}

/// Largest per-run epsilon such that the optimal `k`-fold composition of
/// `(eps, per_run_delta)` stays within `total_epsilon`.
pub fn optimal_per_run_epsilon(
    total_epsilon: f64,
    per_run_delta: f64,
    k: u32,
    delta_slack: f64,
) -> Result<f64> {
    let composed = |e: f64| -> Result<f64> {
        Ok(optimal_composition(DpBudget::new(e, per_run_delta)?, k, delta_slack)?.epsilon)
    };
    let mut lo = 0.0_f64;
    let mut hi = total_epsilon;
    if composed(hi)? <= total_epsilon {
        return Ok(hi);
    }
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if composed(mid)? <= total_epsilon {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-12 * hi {
            break;
        }
    }
    Ok(lo)
}

/// zCDP cost of one tree with `levels` levels, node noise `sigma` and node
/// sensitivity `node_sensitivity`.
pub fn tree_rho(levels: u32, node_sensitivity: f64, sigma: f64) -> f64 {
    node_sensitivity * node_sensitivity * levels as f64 / (2.0 * sigma * sigma)
}

/// Smallest node noise `sigma` for a `t`-leaf tree such that the tree's zCDP
/// cost converts (tightly) to at most `target.epsilon` at `target.delta`.
pub fn calibrate_sigma(t: u64, target: DpBudget, node_sensitivity: f64) -> Result<CalibrationResult> {
    if t < 1 {
        return Err(Error::invalid("tree needs at least one trigger"));
    }
    target.validate()?;
    if !(target.epsilon > 0.0) {
        return Err(Error::invalid("target epsilon must be positive"));
    }
    check_delta(target.delta)?;
    if !(node_sensitivity > 0.0) {
        return Err(Error::invalid("node sensitivity must be positive"));
    }
    let height = tree_height(t);
    let levels = height + 1;
    let feasible = |sigma: f64| -> Result<bool> {
        let rho = tree_rho(levels, node_sensitivity, sigma);
        Ok(zcdp_to_dp_tight(ZcdpBudget { rho }, target.delta)? <= target.epsilon)
    };
    let (mut lo, mut hi) = SIGMA_SEARCH_RANGE;
    if !feasible(hi)? {
        return Err(Error::Calibration(format!(
            "no sigma <= {hi:e} meets epsilon={} at delta={}",
            target.epsilon, target.delta
        )));
    }
    if !feasible(lo)? {
        while hi / lo - 1.0 > SIGMA_REL_TOL {
            let mid = (lo * hi).sqrt();
            if mid <= lo || mid >= hi {
                break;
            }
            if feasible(mid)? {
                hi = mid;
            } else {
                lo = mid;
            }
        }
    } else {
        hi = lo;
    }
    Ok(CalibrationResult {
        sigma: hi,
        tree_height: height,
        levels,
        rho: tree_rho(levels, node_sensitivity, hi),
    })
}

/// Selection threshold `λ·Φ⁻¹(1−β)` for a centered Gaussian with variance
/// `variance`.
pub fn calibrate_tau(variance: f64, beta: f64) -> Result<f64> {
    if !(beta > 0.0 && beta < 1.0) {
        return Err(Error::invalid(format!("beta must lie in (0, 1), got {beta}")));
    }
    if !(variance >= 0.0) || !variance.is_finite() {
        return Err(Error::invalid(format!("variance must be finite and >= 0, got {variance}")));
    }
    if variance == 0.0 {
        return Ok(0.0);
    }
    // Evaluate the lower tail directly: 1 - beta loses precision for tiny beta.
    let z = -standard_normal().inverse_cdf(beta);
    Ok(variance.sqrt() * z)
}

pub(crate) fn standard_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("standard normal parameters are valid")
}

pub fn split_budget(total: DpBudget, ratios: SplitRatios) -> BudgetSplit {
    let key_selection = DpBudget {
        epsilon: total.epsilon * ratios.key_selection_epsilon,
        delta: total.delta * ratios.key_selection_delta,
    };
    let aggregation = DpBudget {
        epsilon: total.epsilon - key_selection.epsilon,
        delta: total.delta - key_selection.delta,
    };
    BudgetSplit {
        key_selection,
        aggregation,
    }
}
