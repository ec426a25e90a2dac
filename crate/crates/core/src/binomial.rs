//! Recombining binomial tree under the physical measure.
//!
//! The asset moves up by `u` with real-world probability `p` and down by `d`
//! otherwise. Per-step returns are fitted so the physical mean and variance are
//! exactly `mu * dt` and `sigma^2 * dt` for any `p`:
//!
//! ```text
//! U = mu dt + sigma sqrt((1 - p) / p) sqrt(dt)
//! D = mu dt - sigma sqrt(p / (1 - p)) sqrt(dt)
//! ```
//!
//! Pricing discounts under the risk-neutral probability
//! `q = p - theta sqrt(p (1 - p) dt)`, with `theta = (mu - r) / sigma`.

use crate::error::{Error, Result};

/// Largest lattice accepted by [`tree_call_price`].
pub const MAX_TREE_STEPS: usize = 20_000;

/// Largest tree accepted by [`enumerate_paths_price`] (`2^22` paths).
pub const MAX_ENUMERATION_STEPS: usize = 22;

/// How per-step returns map to gross growth factors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum ReturnMode {
    /// `u = 1 + U`, `d = 1 + D`, `R = 1 + r dt`.
    Arithmetic,
    /// `u = e^U`, `d = e^D`, `R = e^{r dt}`.
    #[default]
    Log,
}

impl ReturnMode {
    pub fn as_str(self) -> &'static str {
        match self {
            ReturnMode::Arithmetic => "arithmetic",
            ReturnMode::Log => "log",
        }
    }
}

impl std::str::FromStr for ReturnMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "arithmetic" => Ok(ReturnMode::Arithmetic),
            "log" => Ok(ReturnMode::Log),
            other => Err(Error::InvalidInput(format!("unknown return mode `{other}`"))),
        }
    }
}

/// Full parameter set of a constant-coefficient recombining tree.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TreeParams {
    pub drift: f64,
    pub volatility: f64,
    pub up_probability: f64,
    pub rate: f64,
    /// Step length in years.
    pub step_years: f64,
    pub steps: usize,
    pub return_mode: ReturnMode,
}

impl TreeParams {
    /// Splits `maturity_years` into `steps` equal steps.
    pub fn for_maturity(
        drift: f64,
        volatility: f64,
        up_probability: f64,
        rate: f64,
        maturity_years: f64,
        steps: usize,
        return_mode: ReturnMode,
    ) -> Result<Self> {
        if steps == 0 {
            return Err(Error::InvalidInput("tree needs at least one step".into()));
        }
        let params = Self {
            drift,
            volatility,
            up_probability,
            rate,
            step_years: maturity_years / steps as f64,
            steps,
            return_mode,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.up_probability;
        if !(p > 0.0 && p < 1.0) {
            return Err(Error::InvalidInput(format!(
                "up probability must lie in (0, 1), got {p}"
            )));
        }
        if self.steps == 0 {
            return Err(Error::InvalidInput("tree needs at least one step".into()));
        }
        if !(self.step_years > 0.0 && self.step_years.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "step length must be positive, got {}",
                self.step_years
            )));
        }
        if !(self.volatility > 0.0 && self.volatility.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "tree volatility must be positive, got {}",
                self.volatility
            )));
        }
        if !self.drift.is_finite() || !self.rate.is_finite() {
            return Err(Error::InvalidInput("drift and rate must be finite".into()));
        }
        Ok(())
    }

    pub fn maturity_years(&self) -> f64 {
        self.step_years * self.steps as f64
    }
}

/// Per-step returns and gross factors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepReturns {
    pub up_return: f64,
    pub down_return: f64,
    pub up_factor: f64,
    pub down_factor: f64,
    pub gross_rate: f64,
}

/// Risk-neutral quantities of one step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RiskNeutralStep {
    pub q: f64,
    pub theta: f64,
    pub gross_rate: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TreeDiagnostics {
    pub q: f64,
    pub theta: f64,
    pub up_return: f64,
    pub down_return: f64,
    pub step_years: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TreeQuote {
    pub value: f64,
    pub steps_used: usize,
    pub mode: ReturnMode,
    pub diagnostics: TreeDiagnostics,
}

pub fn derive_step_returns(params: &TreeParams) -> Result<StepReturns> {
    params.validate()?;
    let p = params.up_probability;
    let dt = params.step_years;
    let drift = params.drift * dt;
    let scale = params.volatility * dt.sqrt();
    let up_return = drift + scale * ((1.0 - p) / p).sqrt();
    let down_return = drift - scale * (p / (1.0 - p)).sqrt();
    let (up_factor, down_factor, gross_rate) = match params.return_mode {
        ReturnMode::Arithmetic => {
            if down_return <= -1.0 {
                return Err(Error::NegativePrice { down: down_return });
            }
            (1.0 + up_return, 1.0 + down_return, 1.0 + params.rate * dt)
        }
        ReturnMode::Log => (up_return.exp(), down_return.exp(), (params.rate * dt).exp()),
    };
    Ok(StepReturns {
        up_return,
        down_return,
        up_factor,
        down_factor,
        gross_rate,
    })
}

/// Risk-neutral probability and market price of risk.
///
/// Never clamps: a `q` outside `[0, 1]` is an error carrying the offending value.
pub fn derive_risk_neutral(params: &TreeParams) -> Result<RiskNeutralStep> {
    params.validate()?;
    let p = params.up_probability;
    let dt = params.step_years;
    let theta = (params.drift - params.rate) / params.volatility;
    let q = p - theta * (p * (1.0 - p) * dt).sqrt();
    if !(0.0..=1.0).contains(&q) {
        return Err(Error::RiskNeutralInfeasible { q });
    }
    let gross_rate = match params.return_mode {
        ReturnMode::Arithmetic => 1.0 + params.rate * dt,
        ReturnMode::Log => (params.rate * dt).exp(),
    };
    Ok(RiskNeutralStep { q, theta, gross_rate })
}

/// Physical mean and variance of the one-step return, computed from `U` and `D`.
pub fn physical_step_moments(params: &TreeParams) -> Result<(f64, f64)> {
    params.validate()?;
    let p = params.up_probability;
    let dt = params.step_years;
    let scale = params.volatility * dt.sqrt();
    // Log-mode factors never fail, so take the returns without the arithmetic guard.
    let up = params.drift * dt + scale * ((1.0 - p) / p).sqrt();
    let down = params.drift * dt - scale * (p / (1.0 - p)).sqrt();
    let mean = p * up + (1.0 - p) * down;
    let spread = up - down;
    Ok((mean, p * (1.0 - p) * spread * spread))
}

/// Number of nodes in a recombining lattice with `steps` steps.
pub fn lattice_node_count(steps: usize) -> usize {
    (steps + 1) * (steps + 2) / 2
}

/// European call on the tree by backward induction over a single value row.
pub fn tree_call_price(asset0: f64, strike: f64, params: &TreeParams) -> Result<TreeQuote> {
    check_underlying(asset0, strike)?;
    if params.steps > MAX_TREE_STEPS {
        return Err(Error::TooManySteps {
            steps: params.steps,
            limit: MAX_TREE_STEPS,
        });
    }
    let step = derive_step_returns(params)?;
    let rn = derive_risk_neutral(params)?;
    let n = params.steps;
    let ln_u = step.up_factor.ln();
    let ln_d = step.down_factor.ln();

    let mut row: Vec<f64> = (0..=n)
        .map(|ups| {
            let terminal = asset0 * (ups as f64 * ln_u + (n - ups) as f64 * ln_d).exp();
            (terminal - strike).max(0.0)
        })
        .collect();

    let up_weight = rn.q / rn.gross_rate;
    let down_weight = (1.0 - rn.q) / rn.gross_rate;
    for level in (0..n).rev() {
        for j in 0..=level {
            row[j] = up_weight * row[j + 1] + down_weight * row[j];
        }
    }

    Ok(TreeQuote {
        value: row[0],
        steps_used: n,
        mode: params.return_mode,
        diagnostics: TreeDiagnostics {
            q: rn.q,
            theta: rn.theta,
            up_return: step.up_return,
            down_return: step.down_return,
            step_years: params.step_years,
        },
    })
}

/// Reference price that sums every one of the `2^n` paths explicitly.
///
/// Exponential in `steps`; meant for cross-checking [`tree_call_price`].
pub fn enumerate_paths_price(asset0: f64, strike: f64, params: &TreeParams) -> Result<f64> {
    check_underlying(asset0, strike)?;
    if params.steps > MAX_ENUMERATION_STEPS {
        return Err(Error::TooManySteps {
            steps: params.steps,
            limit: MAX_ENUMERATION_STEPS,
        });
    }
    let step = derive_step_returns(params)?;
    let rn = derive_risk_neutral(params)?;
    let n = params.steps;
    let mut total = 0.0;
    for path in 0u32..(1u32 << n) {
        let mut asset = asset0;
        let mut weight = 1.0;
        for k in 0..n {
            if path >> k & 1 == 1 {
                asset *= step.up_factor;
                weight *= rn.q;
            } else {
                asset *= step.down_factor;
                weight *= 1.0 - rn.q;
            }
        }
        total += weight * (asset - strike).max(0.0);
    }
    Ok(total / rn.gross_rate.powi(n as i32))
}

fn check_underlying(asset0: f64, strike: f64) -> Result<()> {
    if !(asset0 > 0.0 && asset0.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "initial asset value must be positive, got {asset0}"
        )));
    }
    if !(strike >= 0.0 && strike.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "strike must be non-negative, got {strike}"
        )));
    }
    Ok(())
}
