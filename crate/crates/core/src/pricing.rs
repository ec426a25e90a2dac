//! Closed-form Merton / Black-Scholes-Merton pricing.
//!
//! In the structural view, equity is a European call on firm assets `V` struck
//! at the face value of debt `K`. Debt is what remains:
//!
//! ```text
//! B_T = min(K, V_T)            S_T = max(V_T - K, 0)
//! B_t = V_t - C_t = e^{-r(T-t)} K - P_t
//! ```
//!
//! All rates are annualized and continuously compounded; times are in years.

use statrs::function::erf::erfc;

use crate::error::{Error, Result};

/// Standard normal cumulative distribution function.
///
/// Evaluated as `erfc(-x / sqrt 2) / 2`. The complementary error function
/// keeps full relative precision in the lower tail, which matters for the
/// deep out-of-the-money cells of a surface.
pub fn norm_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// Inputs to a single Black-Scholes-Merton valuation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BsmInputs {
    /// Value of the underlying (firm assets `V_t` or equity `S_t`).
    pub underlying_value: f64,
    /// Strike, read as the face value of debt in the structural model.
    pub strike: f64,
    pub rate: f64,
    pub volatility: f64,
    /// Years to maturity.
    pub time_to_maturity: f64,
}

impl BsmInputs {
    pub fn new(underlying_value: f64, strike: f64, rate: f64, volatility: f64, time_to_maturity: f64) -> Result<Self> {
        let inputs = Self {
            underlying_value,
            strike,
            rate,
            volatility,
            time_to_maturity,
        };
        inputs.validate()?;
        Ok(inputs)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.underlying_value > 0.0 && self.underlying_value.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "underlying value must be positive, got {}",
                self.underlying_value
            )));
        }
        if !(self.strike >= 0.0 && self.strike.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "strike must be non-negative, got {}",
                self.strike
            )));
        }
        if !self.rate.is_finite() {
            return Err(Error::InvalidInput(format!("rate must be finite, got {}", self.rate)));
        }
        if !(self.volatility >= 0.0 && self.volatility.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "volatility must be non-negative, got {}",
                self.volatility
            )));
        }
        if !(self.time_to_maturity > 0.0 && self.time_to_maturity.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "time to maturity must be positive, got {}",
                self.time_to_maturity
            )));
        }
        Ok(())
    }

    pub fn with_volatility(self, volatility: f64) -> Self {
        Self { volatility, ..self }
    }

    pub fn discount_factor(&self) -> f64 {
        (-self.rate * self.time_to_maturity).exp()
    }

    /// `(d1, d2)`; only meaningful for `strike > 0` and `volatility > 0`.
    pub fn d1_d2(&self) -> (f64, f64) {
        let vol_sqrt_t = self.volatility * self.time_to_maturity.sqrt();
        let d1 = ((self.underlying_value / self.strike).ln()
            + (self.rate + 0.5 * self.volatility * self.volatility) * self.time_to_maturity)
            / vol_sqrt_t;
        (d1, d1 - vol_sqrt_t)
    }
}

/// Debt and equity payoffs at maturity for terminal asset value `asset_terminal`.
pub fn payoff_at_maturity(asset_terminal: f64, face_value: f64) -> Result<(f64, f64)> {
    if !(asset_terminal >= 0.0) || !(face_value >= 0.0) {
        return Err(Error::InvalidInput(format!(
            "payoffs need non-negative asset and face values, got ({asset_terminal}, {face_value})"
        )));
    }
    let debt = face_value.min(asset_terminal);
    let equity = (asset_terminal - face_value).max(0.0);
    Ok((debt, equity))
}

/// European call value.
pub fn bsm_call(inputs: &BsmInputs) -> Result<f64> {
    inputs.validate()?;
    Ok(call_unchecked(inputs))
}

/// European put value at the same inputs as [`bsm_call`].
pub fn bsm_put(inputs: &BsmInputs) -> Result<f64> {
    inputs.validate()?;
    Ok(put_unchecked(inputs))
}

pub(crate) fn call_unchecked(inputs: &BsmInputs) -> f64 {
    let v = inputs.underlying_value;
    let k = inputs.strike;
    if k == 0.0 {
        return v;
    }
    let discounted_strike = k * inputs.discount_factor();
    if inputs.volatility == 0.0 {
        return (v - discounted_strike).max(0.0);
    }
    let (d1, d2) = inputs.d1_d2();
    let value = v * norm_cdf(d1) - discounted_strike * norm_cdf(d2);
    // Rounding can push the difference a few ulps outside the no-arbitrage band.
    value.clamp((v - discounted_strike).max(0.0), v)
}

pub(crate) fn put_unchecked(inputs: &BsmInputs) -> f64 {
    let v = inputs.underlying_value;
    let k = inputs.strike;
    if k == 0.0 {
        return 0.0;
    }
    let discounted_strike = k * inputs.discount_factor();
    if inputs.volatility == 0.0 {
        return (discounted_strike - v).max(0.0);
    }
    let (d1, d2) = inputs.d1_d2();
    let value = discounted_strike * norm_cdf(-d2) - v * norm_cdf(-d1);
    value.clamp((discounted_strike - v).max(0.0), discounted_strike)
}

/// Debt value `B_t = V_t - C_t` given the asset value and the equity (call) value.
pub fn debt_value(asset_value: f64, call_value: f64) -> Result<f64> {
    if !(call_value >= 0.0) {
        return Err(Error::InvalidInput(format!(
            "call value must be non-negative, got {call_value}"
        )));
    }
    if call_value > asset_value {
        return Err(Error::Arbitrage {
            call: call_value,
            asset: asset_value,
        });
    }
    Ok(asset_value - call_value)
}

/// Central finite-difference vega of the call, `h` being the volatility step.
pub fn call_vega_fd(inputs: &BsmInputs, h: f64) -> Result<f64> {
    inputs.validate()?;
    let lo = (inputs.volatility - h).max(0.0);
    let hi = inputs.volatility + h;
    let up = call_unchecked(&inputs.with_volatility(hi));
    let down = call_unchecked(&inputs.with_volatility(lo));
    Ok((up - down) / (hi - lo))
}

/// One balance-sheet snapshot of the structural model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CapitalStructureSlice {
    pub asset_value: f64,
    pub equity_value: f64,
    pub debt_value: f64,
    pub put_value: f64,
    pub discount_factor: f64,
}

impl CapitalStructureSlice {
    /// Values equity as the call, debt as the residual claim, and the put at the
    /// same inputs.
    pub fn from_inputs(inputs: &BsmInputs) -> Result<Self> {
        let equity_value = bsm_call(inputs)?;
        let debt_value = debt_value(inputs.underlying_value, equity_value)?;
        Ok(Self {
            asset_value: inputs.underlying_value,
            equity_value,
            debt_value,
            put_value: put_unchecked(inputs),
            discount_factor: inputs.discount_factor(),
        })
    }

    /// Debt priced as a risk-free bond short a put: `D K - P`.
    pub fn debt_from_put(&self, strike: f64) -> f64 {
        self.discount_factor * strike - self.put_value
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn inputs(v: f64, k: f64, r: f64, s: f64, t: f64) -> BsmInputs {
        BsmInputs::new(v, k, r, s, t).unwrap()
    }

    #[test]
    fn payoffs() {
        assert_eq!(payoff_at_maturity(120.0, 100.0).unwrap(), (100.0, 20.0));
        assert_eq!(payoff_at_maturity(80.0, 100.0).unwrap(), (80.0, 0.0));
        assert_eq!(payoff_at_maturity(100.0, 100.0).unwrap(), (100.0, 0.0));
        assert!(payoff_at_maturity(-1.0, 100.0).is_err());
        assert!(payoff_at_maturity(1.0, -100.0).is_err());
    }

    #[test]
    fn call_limits() {
        assert_eq!(bsm_call(&inputs(100.0, 0.0, 0.05, 0.2, 1.0)).unwrap(), 100.0);
        let c = bsm_call(&inputs(100.0, 90.0, 0.0, 1e-12, 1.0)).unwrap();
        assert!((c - 10.0).abs() < 1e-8);
        let c = bsm_call(&inputs(100.0, 90.0, 0.05, 0.0, 1.0)).unwrap();
        assert!((c - (100.0 - 90.0 * (-0.05f64).exp())).abs() < 1e-12);
    }

    #[test]
    fn at_the_money_reference() {
        // mpmath quadrature of the lognormal payoff expectation: 7.96556745540580
        let c = bsm_call(&inputs(100.0, 100.0, 0.0, 0.2, 1.0)).unwrap();
        assert!((c - 7.965567).abs() < 1e-5);
        assert!((c - 7.965_567_455_405_8).abs() < 1e-11);
        let p = bsm_put(&inputs(100.0, 100.0, 0.0, 0.2, 1.0)).unwrap();
        assert!((p - 7.965567).abs() < 1e-5);
    }

    #[test]
    fn put_limits() {
        for r in [-0.01, 0.0, 0.05] {
            assert_eq!(bsm_put(&inputs(100.0, 0.0, r, 0.3, 2.0)).unwrap(), 0.0);
        }
        assert!(bsm_put(&inputs(100.0, 90.0, 0.0, 1e-12, 1.0)).unwrap().abs() < 1e-8);
    }

    #[test]
    fn debt() {
        assert!((debt_value(100.0, 7.965567).unwrap() - 92.034433).abs() < 1e-12);
        assert_eq!(debt_value(100.0, 0.0).unwrap(), 100.0);
        assert_eq!(debt_value(100.0, 100.0).unwrap(), 0.0);
        assert!(matches!(debt_value(100.0, 100.5), Err(Error::Arbitrage { .. })));
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(BsmInputs::new(0.0, 1.0, 0.0, 0.2, 1.0).is_err());
        assert!(BsmInputs::new(1.0, -1.0, 0.0, 0.2, 1.0).is_err());
        assert!(BsmInputs::new(1.0, 1.0, 0.0, -0.2, 1.0).is_err());
        assert!(BsmInputs::new(1.0, 1.0, 0.0, 0.2, 0.0).is_err());
        assert!(BsmInputs::new(1.0, 1.0, f64::NAN, 0.2, 1.0).is_err());
    }

    #[test]
    fn capital_structure_identities() {
        let x = inputs(100.0, 80.0, 0.03, 0.25, 2.0);
        let slice = CapitalStructureSlice::from_inputs(&x).unwrap();
        assert!((slice.equity_value + slice.debt_value - slice.asset_value).abs() < 1e-12);
        assert!((slice.debt_from_put(80.0) - slice.debt_value).abs() < 1e-10);
    }

    #[test]
    fn vega_positive() {
        let v = call_vega_fd(&inputs(100.0, 110.0, 0.02, 0.3, 0.5), 1e-5).unwrap();
        assert!(v > 0.0);
    }
}
