//! One-parameter calibrations by squared relative pricing error.
//!
//! Each routine holds every model input fixed except one and minimizes
//! `((model - observed) / observed)^2` over a bounded interval:
//!
//! | routine                    | model            | free parameter |
//! |----------------------------|------------------|----------------|
//! | [`implied_asset_vol`]      | BSM call on `V0` | `sigma`        |
//! | [`implied_equity_vol`]     | BSM call on `S0` | `sigma`        |
//! | [`implied_drift`]          | binomial tree    | `mu`           |
//! | [`implied_up_probability`] | binomial tree    | `p`            |
//!
//! Tree parameters that make the risk-neutral probability leave `[0, 1]`
//! score `+inf`; they are never clamped into range.

use std::cell::RefCell;

use crate::binomial::{tree_call_price, ReturnMode, TreeParams};
use crate::error::{Error, Result};
use crate::optimize::{golden_refine, minimize_squared_residual, ScalarSearch};
use crate::pricing::{call_unchecked, BsmInputs};

/// Up probability held fixed while fitting the drift.
pub const DEFAULT_FIXED_UP_PROBABILITY: f64 = 0.5;
/// Annual drift held fixed while fitting the up probability.
pub const DEFAULT_FIXED_DRIFT: f64 = 0.08;
/// Relative price sensitivity per unit parameter below which a cell is flagged.
pub const LOW_SENSITIVITY_THRESHOLD: f64 = 1e-8;
/// Objective at or below which a parameter counts as reproducing the price
/// (relative pricing error of `1e-8`).
pub const ROOT_OBJECTIVE: f64 = 1e-16;
/// Relative rounding noise of a lattice price; residuals below this are
/// indistinguishable from zero when comparing candidate roots.
const PRICE_NOISE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalibrationTarget {
    /// Market price the model must reproduce (`S_0`, `S_t` or an option quote).
    pub observed_price: f64,
    /// `V0` for the structural calibrations, `S0` for equity options.
    pub underlying_value: f64,
    pub strike: f64,
    pub maturity_years: f64,
    pub rate: f64,
}

impl CalibrationTarget {
    pub fn validate(&self) -> Result<()> {
        if !(self.observed_price > 0.0 && self.observed_price.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "observed price must be positive, got {}",
                self.observed_price
            )));
        }
        if !(self.maturity_years > 0.0 && self.maturity_years.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "maturity must be positive, got {}",
                self.maturity_years
            )));
        }
        BsmInputs::new(self.underlying_value, self.strike, self.rate, 0.0, self.maturity_years)?;
        Ok(())
    }

    /// Signed relative pricing error of a model price.
    pub fn residual(&self, model: f64) -> f64 {
        (model - self.observed_price) / self.observed_price
    }

    /// Calibration objective: the squared relative pricing error.
    pub fn objective(&self, model: f64) -> f64 {
        self.residual(model).powi(2)
    }
}

/// Lattice settings shared by the drift and probability calibrations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TreeSetup {
    /// Asset volatility, usually read off an implied asset-vol surface.
    pub volatility: f64,
    pub steps: usize,
    pub mode: ReturnMode,
}

impl TreeSetup {
    fn params(&self, target: &CalibrationTarget, drift: f64, up_probability: f64) -> Result<TreeParams> {
        TreeParams::for_maturity(
            drift,
            self.volatility,
            up_probability,
            target.rate,
            target.maturity_years,
            self.steps,
            self.mode,
        )
    }
}

/// Search interval and tolerance for one kind of parameter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bounds {
    pub lo: f64,
    pub hi: f64,
    pub tol: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalibrationConfig {
    pub volatility: Bounds,
    pub drift: Bounds,
    pub up_probability: Bounds,
    pub scan_points: usize,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        Self {
            volatility: Bounds {
                lo: 1e-4,
                hi: 5.0,
                tol: 1e-8,
            },
            drift: Bounds {
                lo: -5.0,
                hi: 5.0,
                tol: 1e-6,
            },
            up_probability: Bounds {
                lo: 0.01,
                hi: 0.99,
                tol: 1e-6,
            },
            scan_points: 64,
        }
    }
}

impl CalibrationConfig {
    fn search(&self, bounds: Bounds) -> ScalarSearch {
        ScalarSearch::new(bounds.lo, bounds.hi, bounds.tol).with_scan_points(self.scan_points)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalibrationResult {
    pub fitted_value: f64,
    /// Squared relative pricing error at `fitted_value`.
    pub objective: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub boundary_hit: bool,
    /// `d(model price)/d(parameter) / observed price` at the solution.
    pub sensitivity: f64,
    /// Risk-neutral feasibility at the solution; always true for BSM fits.
    pub feasible: bool,
    pub low_sensitivity: bool,
    /// Another, well separated parameter value also reproduces the price.
    /// Tree prices are not monotone in drift or probability, so an exact fit
    /// need not be unique.
    pub multiple_roots: bool,
}

impl CalibrationResult {
    /// True when the fit is interior, unique and the price responds to the parameter.
    pub fn is_reliable(&self) -> bool {
        !self.boundary_hit && !self.low_sensitivity && !self.multiple_roots && self.feasible
    }
}

/// Implied asset volatility: BSM call on the asset value matched to the equity price.
pub fn implied_asset_vol(target: &CalibrationTarget, config: &CalibrationConfig) -> Result<CalibrationResult> {
    implied_bsm_vol(target, config)
}

/// Implied equity volatility: BSM call on the equity matched to an option quote.
pub fn implied_equity_vol(target: &CalibrationTarget, config: &CalibrationConfig) -> Result<CalibrationResult> {
    implied_bsm_vol(target, config)
}

fn implied_bsm_vol(target: &CalibrationTarget, config: &CalibrationConfig) -> Result<CalibrationResult> {
    target.validate()?;
    let base = BsmInputs {
        underlying_value: target.underlying_value,
        strike: target.strike,
        rate: target.rate,
        volatility: 0.0,
        time_to_maturity: target.maturity_years,
    };
    let bounds = config.volatility;
    if !(bounds.lo >= 0.0) {
        return Err(Error::InvalidInput(format!(
            "volatility lower bound must be non-negative, got {}",
            bounds.lo
        )));
    }
    let price = |sigma: f64| call_unchecked(&base.with_volatility(sigma));
    let min = minimize_squared_residual(|s| Some(target.residual(price(s))), &config.search(bounds))?;

    let h = 1e-5;
    let lo = (min.argmin - h).max(0.0);
    let hi = min.argmin + h;
    let sensitivity = (price(hi) - price(lo)) / (hi - lo) / target.observed_price;

    Ok(CalibrationResult {
        fitted_value: min.argmin,
        objective: min.value,
        iterations: min.iterations,
        evaluations: min.evaluations,
        boundary_hit: min.boundary_hit,
        sensitivity,
        feasible: true,
        low_sensitivity: sensitivity.abs() < LOW_SENSITIVITY_THRESHOLD,
        multiple_roots: false,
    })
}

/// Implied physical drift with the up probability held at `up_probability`.
pub fn implied_drift(
    target: &CalibrationTarget,
    tree: &TreeSetup,
    up_probability: f64,
    config: &CalibrationConfig,
) -> Result<CalibrationResult> {
    target.validate()?;
    let base = tree.params(target, target.rate, up_probability)?;
    let feasible = feasible_drift(&base);
    calibrate_tree(target, config.drift, feasible, config, |mu| {
        tree.params(target, mu, up_probability)
    })
}

/// Implied physical up probability with the drift held at `drift`.
///
/// The downside probability is `1 - fitted_value`.
pub fn implied_up_probability(
    target: &CalibrationTarget,
    tree: &TreeSetup,
    drift: f64,
    config: &CalibrationConfig,
) -> Result<CalibrationResult> {
    target.validate()?;
    let bounds = config.up_probability;
    if !(bounds.lo > 0.0 && bounds.hi < 1.0) {
        return Err(Error::InvalidInput(format!(
            "up-probability bounds must lie inside (0, 1), got [{}, {}]",
            bounds.lo, bounds.hi
        )));
    }
    let base = tree.params(target, drift, bounds.lo)?;
    let feasible = feasible_up_probability(&base);
    calibrate_tree(target, bounds, feasible, config, |p| tree.params(target, drift, p))
}

/// Drift values keeping `q` in `[0, 1]` at the tree's fixed `p`, `sigma`, `dt`.
///
/// `q = p - theta * s` with `s = sqrt(p (1 - p) dt)`, so the admissible
/// `theta` range is `[(p - 1) / s, p / s]` and `mu = r + sigma * theta`.
fn feasible_drift(params: &TreeParams) -> (f64, f64) {
    let p = params.up_probability;
    let s = (p * (1.0 - p) * params.step_years).sqrt();
    let sigma = params.volatility;
    (params.rate + sigma * (p - 1.0) / s, params.rate + sigma * p / s)
}

/// Up probabilities keeping `q` in `[0, 1]` at the tree's fixed drift.
///
/// With `k = theta^2 dt`: `q >= 0` needs `p >= k / (1 + k)` when `theta > 0`,
/// and `q <= 1` needs `p <= 1 / (1 + k)` when `theta < 0`.
fn feasible_up_probability(params: &TreeParams) -> (f64, f64) {
    let theta = (params.drift - params.rate) / params.volatility;
    let k = theta * theta * params.step_years;
    if theta > 0.0 {
        (k / (1.0 + k), 1.0)
    } else if theta < 0.0 {
        (0.0, 1.0 / (1.0 + k))
    } else {
        (0.0, 1.0)
    }
}

/// Searches `bounds` intersected with the closed-form feasible interval.
///
/// The objective still treats an infeasible point as `+inf`; narrowing only
/// keeps the scan from stepping over a feasible window narrower than its
/// grid spacing. A fit on the narrowed edge counts as a boundary hit.
fn calibrate_tree<F>(
    target: &CalibrationTarget,
    bounds: Bounds,
    feasible: (f64, f64),
    config: &CalibrationConfig,
    params_at: F,
) -> Result<CalibrationResult>
where
    F: Fn(f64) -> Result<TreeParams>,
{
    let price = |x: f64| -> Result<f64> {
        let params = params_at(x)?;
        Ok(tree_call_price(target.underlying_value, target.strike, &params)?.value)
    };
    let failure = RefCell::new(None);
    let residual = |x: f64| match price(x) {
        Ok(model) => Some(target.residual(model)),
        Err(Error::RiskNeutralInfeasible { .. }) | Err(Error::NegativePrice { .. }) => None,
        Err(e) => {
            failure.borrow_mut().get_or_insert(e);
            None
        }
    };
    let lo = bounds.lo.max(feasible.0);
    let hi = bounds.hi.min(feasible.1);
    if !(lo <= hi) {
        return Err(Error::CalibrationInfeasible {
            lo: bounds.lo,
            hi: bounds.hi,
        });
    }
    let effective = Bounds { lo, hi, ..bounds };
    let min = minimize_squared_residual(residual, &config.search(effective))?;
    if let Some(e) = failure.borrow_mut().take() {
        return Err(e);
    }
    if min.value.is_infinite() {
        return Err(Error::CalibrationInfeasible {
            lo: bounds.lo,
            hi: bounds.hi,
        });
    }

    let sensitivity = tree_sensitivity(&price, min.argmin, effective) / target.observed_price;
    let low_sensitivity = sensitivity.abs() < LOW_SENSITIVITY_THRESHOLD;

    let mut evaluations = min.evaluations;
    let mut multiple_roots = false;
    if !low_sensitivity {
        let residual = |x: f64| -> Option<f64> {
            price(x)
                .ok()
                .map(|model| (model - target.observed_price) / target.observed_price)
        };
        // A competing point only needs to fit as well as the reported one.
        let level = PRICE_NOISE.max(min.value.sqrt());
        let (found, used) = other_root_exists(
            residual,
            effective,
            min.argmin,
            level,
            sensitivity.abs(),
            config.scan_points,
        );
        multiple_roots = found;
        evaluations += used;
    }

    Ok(CalibrationResult {
        fitted_value: min.argmin,
        objective: min.value,
        iterations: min.iterations,
        evaluations,
        boundary_hit: min.boundary_hit,
        sensitivity,
        feasible: true,
        low_sensitivity,
        multiple_roots,
    })
}

/// Looks for a second root of the signed relative residual away from `fit`.
///
/// The lattice price oscillates in the drift and the up probability as nodes
/// cross the strike, so roots tend to come in pairs closer together than a
/// coarse grid. The residual is probed on a dense uniform grid plus points at
/// geometrically growing distance from the fit. Another root is proven by a
/// probe fitting within `root_level`, a sign change between neighbouring feasible
/// probes, or a local dip of `|r|` between same-sign neighbours that a
/// golden-section refinement drives across zero.
fn other_root_exists<F>(
    residual: F,
    bounds: Bounds,
    fit: f64,
    root_level: f64,
    slope: f64,
    grid_points: usize,
) -> (bool, usize)
where
    F: Fn(f64) -> Option<f64>,
{
    // Far enough out that the fit's own basin is clear of the root level.
    let separation = (100.0 * bounds.tol).max(4.0 * root_level / slope);

    let mut probes: Vec<f64> = Vec::new();
    let n = (8 * grid_points).max(3);
    let step = (bounds.hi - bounds.lo) / (n - 1) as f64;
    probes.extend((0..n).map(|i| bounds.lo + step * i as f64));
    let mut offset = separation;
    while offset < bounds.hi - bounds.lo {
        probes.push(fit - offset);
        probes.push(fit + offset);
        offset *= 2.0;
    }
    probes.retain(|x| *x >= bounds.lo && *x <= bounds.hi && (x - fit).abs() >= separation);
    probes.sort_by(f64::total_cmp);
    probes.dedup();

    let mut evaluations = probes.len();
    // Runs of consecutive feasible probes on one side of the fit.
    let mut runs: Vec<Vec<(f64, f64)>> = Vec::new();
    let mut current: Vec<(f64, f64)> = Vec::new();
    let mut last_side = None;
    for &x in &probes {
        let side = x < fit;
        match residual(x) {
            Some(r) if r.abs() <= root_level => return (true, evaluations),
            Some(r) if r.is_finite() => {
                if last_side != Some(side) && !current.is_empty() {
                    runs.push(std::mem::take(&mut current));
                }
                current.push((x, r));
                last_side = Some(side);
            }
            _ => {
                if !current.is_empty() {
                    runs.push(std::mem::take(&mut current));
                }
            }
        }
    }
    runs.push(current);

    for run in &runs {
        if run.windows(2).any(|w| w[0].1.signum() != w[1].1.signum()) {
            return (true, evaluations);
        }
    }
    for run in &runs {
        for w in run.windows(3) {
            let (a, b, c) = (w[0], w[1], w[2]);
            if !(b.1.abs() < a.1.abs() && b.1.abs() <= c.1.abs()) {
                continue;
            }
            let sign = b.1.signum();
            let mut crossed = false;
            let mut eval = |x: f64| -> Result<f64> {
                evaluations += 1;
                Ok(match residual(x) {
                    Some(r) if r.is_finite() => {
                        if r.signum() != sign || r.abs() <= root_level {
                            crossed = true;
                        }
                        r * r
                    }
                    _ => f64::INFINITY,
                })
            };
            let refined = golden_refine(&mut eval, a.0, c.0, bounds.tol);
            if crossed || matches!(refined, Ok((_, v, _)) if v.sqrt() <= root_level) {
                return (true, evaluations);
            }
        }
    }
    (false, evaluations)
}

/// Finite difference of the tree price, one-sided where a neighbour is infeasible.
fn tree_sensitivity<F>(price: &F, x: f64, bounds: Bounds) -> f64
where
    F: Fn(f64) -> Result<f64>,
{
    let h = 1e-5;
    let centre = price(x).ok();
    let up = if x + h <= bounds.hi { price(x + h).ok() } else { None };
    let down = if x - h >= bounds.lo { price(x - h).ok() } else { None };
    match (down, centre, up) {
        (Some(dn), _, Some(up)) => (up - dn) / (2.0 * h),
        (None, Some(c), Some(up)) => (up - c) / h,
        (Some(dn), Some(c), None) => (c - dn) / h,
        _ => 0.0,
    }
}
