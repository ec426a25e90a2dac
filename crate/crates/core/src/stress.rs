//! Downside-probability stress signal.
//!
//! Reads the implied downside probability at one (moneyness, maturity) cell
//! and maps it to an exposure action with two cut points.

use std::fmt::{self, Write as _};
use std::str::FromStr;

use chrono::NaiveDate;

use crate::error::{Error, Result};
use crate::surfaces::{SurfaceGrid, SurfaceKind};

/// Above this the signal says reduce exposure.
pub const REDUCE_ABOVE: f64 = 0.80;
/// Below this the signal says increase exposure.
pub const INCREASE_BELOW: f64 = 0.60;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Action {
    Reduce,
    Hold,
    Increase,
}

impl Action {
    pub fn as_str(self) -> &'static str {
        match self {
            Action::Reduce => "REDUCE",
            Action::Hold => "HOLD",
            Action::Increase => "INCREASE",
        }
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Action {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "REDUCE" => Ok(Action::Reduce),
            "HOLD" => Ok(Action::Hold),
            "INCREASE" => Ok(Action::Increase),
            other => Err(Error::parse("action", format!("unknown action `{other}`"))),
        }
    }
}

/// Strict inequalities: exactly 0.60 and 0.80 both give `Hold`.
pub fn classify_signal(probability: f64) -> Result<Action> {
    if !(0.0..=1.0).contains(&probability) {
        return Err(Error::ProbabilityOutOfRange(probability));
    }
    Ok(if probability > REDUCE_ABOVE {
        Action::Reduce
    } else if probability < INCREASE_BELOW {
        Action::Increase
    } else {
        Action::Hold
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Coordinate {
    pub moneyness: f64,
    pub maturity_days: u32,
}

impl Default for Coordinate {
    fn default() -> Self {
        Self {
            moneyness: 0.9,
            maturity_days: 30,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StressReading {
    pub probability: f64,
    /// The grid cell actually read.
    pub cell: Coordinate,
    /// Set when `cell` differs from the requested coordinate.
    pub nearest_cell_note: Option<String>,
    /// False when the cell carries any flag.
    pub reliable: bool,
}

/// Reads a downside-probability surface at `coord`, snapping to the nearest
/// grid cell when the coordinate is off-grid.
pub fn stress_metric(surface: &SurfaceGrid, coord: Coordinate) -> Result<StressReading> {
    if surface.kind != SurfaceKind::DownsideProb {
        return Err(Error::IncompatibleKinds(format!(
            "stress metric needs DOWNSIDE_PROB, got {}",
            surface.kind
        )));
    }
    if surface.values.is_empty() {
        return Err(Error::EmptySurface);
    }
    let row = surface.nearest_maturity(coord.maturity_days as f64);
    let col = surface.nearest_moneyness(coord.moneyness);
    let cell = Coordinate {
        moneyness: surface.axes.moneyness[col],
        maturity_days: surface.axes.maturities[row],
    };
    let note = (cell != coord).then(|| {
        format!(
            "requested (M={}, T={}d), used nearest cell (M={}, T={}d)",
            coord.moneyness, coord.maturity_days, cell.moneyness, cell.maturity_days
        )
    });
    let i = surface.index(row, col);
    Ok(StressReading {
        probability: surface.values[i],
        cell,
        nearest_cell_note: note,
        reliable: surface.flags[i].is_empty() && surface.values[i].is_finite(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct StressSignal {
    pub as_of: NaiveDate,
    pub downside_probability: f64,
    pub action: Action,
    pub coordinate: Coordinate,
    pub reliable: bool,
}

/// One signal per date, in date order. Duplicate dates are rejected.
///
/// An unset cell cannot be classified; it is reported as `Hold` and marked
/// unreliable rather than aborting the whole series.
pub fn signal_series(surfaces: &[(NaiveDate, SurfaceGrid)], coord: Coordinate) -> Result<Vec<StressSignal>> {
    let mut dated: Vec<&(NaiveDate, SurfaceGrid)> = surfaces.iter().collect();
    dated.sort_by_key(|(d, _)| *d);
    if let Some(w) = dated.windows(2).find(|w| w[0].0 == w[1].0) {
        return Err(Error::DuplicateDate(w[0].0));
    }
    dated
        .into_iter()
        .map(|(date, surface)| {
            let reading = stress_metric(surface, coord)?;
            let (action, reliable) = if reading.probability.is_nan() {
                (Action::Hold, false)
            } else {
                (classify_signal(reading.probability)?, reading.reliable)
            };
            Ok(StressSignal {
                as_of: *date,
                downside_probability: reading.probability,
                action,
                coordinate: reading.cell,
                reliable,
            })
        })
        .collect()
}

/// `date,probability,action,reliable` text with a coordinate comment header.
pub fn signals_to_text(signals: &[StressSignal], coord: Coordinate) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "# moneyness={}", coord.moneyness);
    let _ = writeln!(out, "# maturity_days={}", coord.maturity_days);
    let _ = writeln!(out, "# reduce_above={REDUCE_ABOVE}");
    let _ = writeln!(out, "# increase_below={INCREASE_BELOW}");
    out.push_str("date,probability,action,reliable\n");
    for s in signals {
        let _ = writeln!(
            out,
            "{},{},{},{}",
            s.as_of,
            crate::surfaces::format_value(s.downside_probability),
            s.action,
            s.reliable
        );
    }
    out
}
