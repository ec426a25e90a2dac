//! Calibrated surfaces over (maturity, moneyness).
//!
//! A [`SurfaceGrid`] stores one value per cell together with the calibration
//! residual and a set of [`CellFlags`]. Flagged cells keep their values;
//! masking is left to whoever reads the surface.
//!
//! Moneyness is `K / V0` for asset-side surfaces and `K / S0` for equity
//! surfaces. Maturities are whole calendar days, converted to years on a
//! 365-day basis.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::path::Path;
use std::str::FromStr;

use bitflags::bitflags;
use rayon::prelude::*;

use crate::binomial::ReturnMode;
use crate::calibration::{
    implied_asset_vol, implied_drift, implied_equity_vol, implied_up_probability, CalibrationConfig, CalibrationResult,
    CalibrationTarget, TreeSetup, DEFAULT_FIXED_DRIFT, DEFAULT_FIXED_UP_PROBABILITY,
};
use crate::error::{Error, Result};
use crate::market_data::{MarketSnapshot, DAYS_PER_YEAR};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SurfaceKind {
    AssetVol,
    EquityVol,
    Drift,
    UpProb,
    DownsideProb,
    Diff,
    RelDiff,
}

impl SurfaceKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SurfaceKind::AssetVol => "ASSET_VOL",
            SurfaceKind::EquityVol => "EQUITY_VOL",
            SurfaceKind::Drift => "DRIFT",
            SurfaceKind::UpProb => "UP_PROB",
            SurfaceKind::DownsideProb => "DOWNSIDE_PROB",
            SurfaceKind::Diff => "DIFF",
            SurfaceKind::RelDiff => "REL_DIFF",
        }
    }

    fn is_volatility(self) -> bool {
        matches!(self, SurfaceKind::AssetVol | SurfaceKind::EquityVol)
    }
}

impl fmt::Display for SurfaceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SurfaceKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s.trim() {
            "ASSET_VOL" => SurfaceKind::AssetVol,
            "EQUITY_VOL" => SurfaceKind::EquityVol,
            "DRIFT" => SurfaceKind::Drift,
            "UP_PROB" => SurfaceKind::UpProb,
            "DOWNSIDE_PROB" => SurfaceKind::DownsideProb,
            "DIFF" => SurfaceKind::Diff,
            "REL_DIFF" => SurfaceKind::RelDiff,
            other => return Err(Error::parse("surface kind", format!("unknown kind `{other}`"))),
        })
    }
}

bitflags! {
    #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
    pub struct CellFlags: u8 {
        /// Fit sits on a search bound.
        const BOUNDARY = 1;
        /// No risk-neutral-feasible parameter in the search interval.
        const INFEASIBLE = 1 << 1;
        /// Price barely responds to the parameter at the fit.
        const LOW_SENSITIVITY = 1 << 2;
        /// A distinct parameter value prices equally well.
        const MULTIPLE_ROOTS = 1 << 3;
        /// No quote or input value for this cell.
        const NO_DATA = 1 << 4;
        /// Relative difference against a zero cell.
        const ZERO_DENOMINATOR = 1 << 5;
        /// An input surface cell feeding this one was flagged.
        const UNRELIABLE_INPUT = 1 << 6;
    }
}

const FLAG_CODES: [(CellFlags, char); 7] = [
    (CellFlags::BOUNDARY, 'B'),
    (CellFlags::INFEASIBLE, 'I'),
    (CellFlags::LOW_SENSITIVITY, 'S'),
    (CellFlags::MULTIPLE_ROOTS, 'M'),
    (CellFlags::NO_DATA, 'N'),
    (CellFlags::ZERO_DENOMINATOR, 'Z'),
    (CellFlags::UNRELIABLE_INPUT, 'U'),
];

impl CellFlags {
    /// `B|S` style code list, `-` for none.
    pub fn codes(self) -> String {
        let codes: Vec<String> = FLAG_CODES
            .iter()
            .filter(|(f, _)| self.contains(*f))
            .map(|(_, c)| c.to_string())
            .collect();
        if codes.is_empty() {
            "-".into()
        } else {
            codes.join("|")
        }
    }

    pub fn from_codes(s: &str) -> Result<Self> {
        let s = s.trim();
        let mut flags = CellFlags::empty();
        if s == "-" || s.is_empty() {
            return Ok(flags);
        }
        for code in s.split('|') {
            let mut chars = code.trim().chars();
            let (Some(c), None) = (chars.next(), chars.next()) else {
                return Err(Error::parse("cell flags", format!("bad flag code `{code}`")));
            };
            let flag = FLAG_CODES
                .iter()
                .find(|(_, k)| *k == c)
                .map(|(f, _)| *f)
                .ok_or_else(|| Error::parse("cell flags", format!("unknown flag `{c}`")))?;
            flags |= flag;
        }
        Ok(flags)
    }

    fn from_result(res: &CalibrationResult) -> Self {
        let mut flags = CellFlags::empty();
        flags.set(CellFlags::BOUNDARY, res.boundary_hit);
        flags.set(CellFlags::LOW_SENSITIVITY, res.low_sensitivity);
        flags.set(CellFlags::MULTIPLE_ROOTS, res.multiple_roots);
        flags.set(CellFlags::INFEASIBLE, !res.feasible);
        flags
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridAxes {
    /// Strictly increasing, positive.
    pub moneyness: Vec<f64>,
    /// Strictly increasing calendar-day maturities.
    pub maturities: Vec<u32>,
}

impl GridAxes {
    pub fn new(moneyness: Vec<f64>, maturities: Vec<u32>) -> Result<Self> {
        let axes = Self { moneyness, maturities };
        axes.validate()?;
        Ok(axes)
    }

    pub fn validate(&self) -> Result<()> {
        if self.moneyness.is_empty() || self.maturities.is_empty() {
            return Err(Error::EmptySurface);
        }
        if !self.moneyness.iter().all(|m| *m > 0.0 && m.is_finite()) {
            return Err(Error::InvalidInput("moneyness values must be positive".into()));
        }
        if !self.moneyness.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::InvalidInput("moneyness axis must be strictly increasing".into()));
        }
        if self.maturities[0] == 0 || !self.maturities.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::InvalidInput(
                "maturity axis must be positive and strictly increasing".into(),
            ));
        }
        Ok(())
    }

    /// `start, start + step, ...` up to and including `end` (rounded to 10 digits).
    pub fn moneyness_range(start: f64, end: f64, step: f64) -> Vec<f64> {
        let n = ((end - start) / step + 1e-9).floor() as usize;
        (0..=n)
            .map(|i| {
                let m = start + step * i as f64;
                (m * 1e10).round() / 1e10
            })
            .collect()
    }

    /// Asset-side default: 0.01, 0.02, ..., 0.90.
    pub fn default_asset_moneyness() -> Vec<f64> {
        Self::moneyness_range(0.01, 0.90, 0.01)
    }

    /// Equity-side default: 0.05, 0.10, ..., 1.50.
    pub fn default_equity_moneyness() -> Vec<f64> {
        Self::moneyness_range(0.05, 1.50, 0.05)
    }

    /// Distinct quote maturities of a snapshot, capped at `max_days`.
    pub fn snapshot_maturities(snapshot: &MarketSnapshot, max_days: u32) -> Vec<u32> {
        let mut days: Vec<u32> = snapshot
            .quotes
            .iter()
            .filter_map(|q| u32::try_from(q.maturity_days()).ok())
            .filter(|d| *d >= 1 && *d <= max_days)
            .collect();
        days.sort_unstable();
        days.dedup();
        days
    }
}

/// Values on a (maturity x moneyness) grid, stored row-major by maturity.
#[derive(Debug, Clone, PartialEq)]
pub struct SurfaceGrid {
    pub kind: SurfaceKind,
    pub axes: GridAxes,
    /// NaN marks an unset cell.
    pub values: Vec<f64>,
    pub residuals: Vec<f64>,
    pub flags: Vec<CellFlags>,
    /// Provenance, echoed into every export header.
    pub metadata: BTreeMap<String, String>,
}

impl SurfaceGrid {
    /// A surface with every cell unset.
    pub fn empty(kind: SurfaceKind, axes: GridAxes) -> Result<Self> {
        axes.validate()?;
        let n = axes.moneyness.len() * axes.maturities.len();
        Ok(Self {
            kind,
            axes,
            values: vec![f64::NAN; n],
            residuals: vec![f64::NAN; n],
            flags: vec![CellFlags::empty(); n],
            metadata: BTreeMap::new(),
        })
    }

    pub fn rows(&self) -> usize {
        self.axes.maturities.len()
    }

    pub fn cols(&self) -> usize {
        self.axes.moneyness.len()
    }

    pub fn index(&self, row: usize, col: usize) -> usize {
        row * self.cols() + col
    }

    pub fn value(&self, row: usize, col: usize) -> f64 {
        self.values[self.index(row, col)]
    }

    pub fn set(&mut self, row: usize, col: usize, value: f64, residual: f64, flags: CellFlags) {
        let i = self.index(row, col);
        self.values[i] = value;
        self.residuals[i] = residual;
        self.flags[i] = flags;
    }

    pub fn nearest_maturity(&self, days: f64) -> usize {
        nearest_index(self.axes.maturities.iter().map(|d| *d as f64), days)
    }

    pub fn nearest_moneyness(&self, moneyness: f64) -> usize {
        nearest_index(self.axes.moneyness.iter().copied(), moneyness)
    }

    /// Min, max and mean over finite, unflagged cells.
    pub fn statistics(&self) -> Option<SurfaceStats> {
        let clean: Vec<f64> = self
            .values
            .iter()
            .zip(&self.flags)
            .filter(|(v, f)| v.is_finite() && f.is_empty())
            .map(|(v, _)| *v)
            .collect();
        if clean.is_empty() {
            return None;
        }
        let min = clean.iter().copied().fold(f64::INFINITY, f64::min);
        let max = clean.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mean = clean.iter().sum::<f64>() / clean.len() as f64;
        Some(SurfaceStats {
            min,
            max,
            mean,
            cells: clean.len(),
        })
    }

    fn check_shape(&self) -> Result<()> {
        self.axes.validate()?;
        let n = self.rows() * self.cols();
        if self.values.len() != n || self.residuals.len() != n || self.flags.len() != n {
            return Err(Error::InvalidInput("surface storage does not match its axes".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurfaceStats {
    pub min: f64,
    pub max: f64,
    pub mean: f64,
    pub cells: usize,
}

fn nearest_index(axis: impl Iterator<Item = f64>, x: f64) -> usize {
    let mut best = (0, f64::INFINITY);
    for (i, a) in axis.enumerate() {
        let dist = (a - x).abs();
        if dist < best.1 {
            best = (i, dist);
        }
    }
    best.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CalibrationTask {
    AssetVol,
    EquityVol,
    Drift,
    UpProb,
}

impl CalibrationTask {
    pub fn kind(self) -> SurfaceKind {
        match self {
            CalibrationTask::AssetVol => SurfaceKind::AssetVol,
            CalibrationTask::EquityVol => SurfaceKind::EquityVol,
            CalibrationTask::Drift => SurfaceKind::Drift,
            CalibrationTask::UpProb => SurfaceKind::UpProb,
        }
    }
}

/// Settings for [`build_surface`].
#[derive(Debug, Clone, PartialEq)]
pub struct SurfaceConfig {
    pub calibration: CalibrationConfig,
    /// Drift held fixed for the up-probability surface.
    pub fixed_drift: f64,
    /// Up probability held fixed for the drift surface.
    pub fixed_up_probability: f64,
    /// Asset-vol column used as the tree volatility (nearest grid column).
    pub vol_lookup_moneyness: f64,
    /// When set, replaces the asset-vol lookup with a constant.
    pub tree_volatility: Option<f64>,
    pub tree_mode: ReturnMode,
    pub steps_per_day: usize,
}

impl Default for SurfaceConfig {
    fn default() -> Self {
        Self {
            calibration: CalibrationConfig::default(),
            fixed_drift: DEFAULT_FIXED_DRIFT,
            fixed_up_probability: DEFAULT_FIXED_UP_PROBABILITY,
            vol_lookup_moneyness: 0.01,
            tree_volatility: None,
            tree_mode: ReturnMode::Log,
            steps_per_day: 1,
        }
    }
}

struct Cell {
    value: f64,
    residual: f64,
    flags: CellFlags,
}

impl Cell {
    fn unset(flags: CellFlags) -> Self {
        Self {
            value: f64::NAN,
            residual: f64::NAN,
            flags,
        }
    }

    fn from_result(res: &CalibrationResult, extra: CellFlags) -> Self {
        Self {
            value: res.fitted_value,
            residual: res.objective,
            flags: CellFlags::from_result(res) | extra,
        }
    }
}

/// Runs one calibration per grid cell.
///
/// Cells are evaluated in parallel and gathered by index, so the output does
/// not depend on thread count or scheduling. Tree tasks need either
/// `asset_vol` or `config.tree_volatility`.
pub fn build_surface(
    snapshot: &MarketSnapshot,
    axes: &GridAxes,
    task: CalibrationTask,
    config: &SurfaceConfig,
    asset_vol: Option<&SurfaceGrid>,
) -> Result<SurfaceGrid> {
    axes.validate()?;
    if matches!(task, CalibrationTask::Drift | CalibrationTask::UpProb) {
        if config.tree_volatility.is_none() && asset_vol.is_none() {
            return Err(Error::Dependency(format!(
                "{} surface needs an ASSET_VOL surface",
                task.kind()
            )));
        }
        if let Some(s) = asset_vol {
            if s.kind != SurfaceKind::AssetVol {
                return Err(Error::IncompatibleKinds(format!(
                    "volatility source must be ASSET_VOL, got {}",
                    s.kind
                )));
            }
        }
        if config.steps_per_day == 0 {
            return Err(Error::InvalidInput("steps per day must be at least 1".into()));
        }
    }

    let mut surface = SurfaceGrid::empty(task.kind(), axes.clone())?;
    let cols = axes.moneyness.len();
    let cells: Vec<Result<Cell>> = (0..surface.values.len())
        .into_par_iter()
        .map(|i| {
            let days = axes.maturities[i / cols];
            let col = i % cols;
            let tolerance = half_spacing(&axes.moneyness, col);
            calibrate_cell(snapshot, task, config, asset_vol, days, axes.moneyness[col], tolerance)
        })
        .collect();

    for (i, cell) in cells.into_iter().enumerate() {
        let cell = cell?;
        surface.values[i] = cell.value;
        surface.residuals[i] = cell.residual;
        surface.flags[i] = cell.flags;
    }

    let meta = &mut surface.metadata;
    meta.insert("as_of".into(), snapshot.as_of.to_string());
    meta.insert("equity_close".into(), snapshot.equity_close.to_string());
    meta.insert("asset_value".into(), snapshot.asset_value.to_string());
    meta.insert("rate".into(), snapshot.risk_free_rate().to_string());
    match task {
        CalibrationTask::Drift => {
            meta.insert("fixed_up_probability".into(), config.fixed_up_probability.to_string());
        }
        CalibrationTask::UpProb => {
            meta.insert("fixed_drift".into(), config.fixed_drift.to_string());
        }
        _ => {}
    }
    if matches!(task, CalibrationTask::Drift | CalibrationTask::UpProb) {
        let source = match config.tree_volatility {
            Some(v) => format!("constant:{v}"),
            None => format!("asset_vol@M={}", config.vol_lookup_moneyness),
        };
        meta.insert("tree_volatility".into(), source);
        meta.insert("tree_mode".into(), config.tree_mode.as_str().into());
        meta.insert(
            "step_convention".into(),
            format!("dt=(days/365)/n, n=days*{}", config.steps_per_day),
        );
    }
    Ok(surface)
}

fn calibrate_cell(
    snapshot: &MarketSnapshot,
    task: CalibrationTask,
    config: &SurfaceConfig,
    asset_vol: Option<&SurfaceGrid>,
    days: u32,
    moneyness: f64,
    match_tolerance: f64,
) -> Result<Cell> {
    let maturity_years = days as f64 / DAYS_PER_YEAR;
    let rate = snapshot.risk_free_rate();
    match task {
        CalibrationTask::AssetVol => {
            let target = CalibrationTarget {
                observed_price: snapshot.equity_close,
                underlying_value: snapshot.asset_value,
                strike: moneyness * snapshot.asset_value,
                maturity_years,
                rate,
            };
            let res = implied_asset_vol(&target, &config.calibration)?;
            Ok(Cell::from_result(&res, CellFlags::empty()))
        }
        CalibrationTask::EquityVol => {
            let spot = snapshot.equity_close;
            let quote = snapshot
                .quotes
                .iter()
                .filter(|q| q.maturity_days() == days as i64)
                .map(|q| (q, (q.strike / spot - moneyness).abs()))
                .filter(|(_, dist)| *dist <= match_tolerance)
                .min_by(|a, b| a.1.total_cmp(&b.1))
                .map(|(q, _)| q);
            let Some(quote) = quote else {
                return Ok(Cell::unset(CellFlags::NO_DATA));
            };
            let target = CalibrationTarget {
                observed_price: quote.price(),
                underlying_value: spot,
                strike: quote.strike,
                maturity_years,
                rate,
            };
            if !(target.observed_price > 0.0) {
                return Ok(Cell::unset(CellFlags::NO_DATA));
            }
            let res = implied_equity_vol(&target, &config.calibration)?;
            Ok(Cell::from_result(&res, CellFlags::empty()))
        }
        CalibrationTask::Drift | CalibrationTask::UpProb => {
            let (volatility, extra) = match (config.tree_volatility, asset_vol) {
                (Some(v), _) => (v, CellFlags::empty()),
                (None, Some(surface)) => {
                    let row = surface.nearest_maturity(days as f64);
                    let col = surface.nearest_moneyness(config.vol_lookup_moneyness);
                    let i = surface.index(row, col);
                    let extra = if surface.flags[i].is_empty() {
                        CellFlags::empty()
                    } else {
                        CellFlags::UNRELIABLE_INPUT
                    };
                    (surface.values[i], extra)
                }
                (None, None) => unreachable!("checked by build_surface"),
            };
            if !(volatility > 0.0 && volatility.is_finite()) {
                return Ok(Cell::unset(CellFlags::NO_DATA | CellFlags::UNRELIABLE_INPUT));
            }
            let target = CalibrationTarget {
                observed_price: snapshot.equity_close,
                underlying_value: snapshot.asset_value,
                strike: moneyness * snapshot.asset_value,
                maturity_years,
                rate,
            };
            let tree = TreeSetup {
                volatility,
                steps: days as usize * config.steps_per_day,
                mode: config.tree_mode,
            };
            let res = match task {
                CalibrationTask::Drift => {
                    implied_drift(&target, &tree, config.fixed_up_probability, &config.calibration)
                }
                _ => implied_up_probability(&target, &tree, config.fixed_drift, &config.calibration),
            };
            match res {
                Ok(res) => Ok(Cell::from_result(&res, extra)),
                Err(Error::CalibrationInfeasible { .. }) => Ok(Cell::unset(CellFlags::INFEASIBLE | extra)),
                Err(e) => Err(e),
            }
        }
    }
}

/// Quotes match a grid column when within half the distance to the nearer
/// neighbouring column. A single-column axis accepts quotes within 1e-9.
fn half_spacing(axis: &[f64], col: usize) -> f64 {
    let left = col.checked_sub(1).map(|j| axis[col] - axis[j]);
    let right = axis.get(col + 1).map(|x| x - axis[col]);
    let half = match (left, right) {
        (Some(a), Some(b)) => 0.5 * a.min(b),
        (Some(a), None) | (None, Some(a)) => 0.5 * a,
        (None, None) => 1e-9,
    };
    half * (1.0 + 1e-9)
}

/// Downside-probability surface `1 - p` from an up-probability surface.
pub fn downside_from_up(up: &SurfaceGrid) -> Result<SurfaceGrid> {
    if up.kind != SurfaceKind::UpProb {
        return Err(Error::IncompatibleKinds(format!("expected UP_PROB, got {}", up.kind)));
    }
    let mut out = up.clone();
    out.kind = SurfaceKind::DownsideProb;
    for v in &mut out.values {
        *v = 1.0 - *v;
    }
    Ok(out)
}

fn check_pair(a: &SurfaceGrid, b: &SurfaceGrid) -> Result<()> {
    a.check_shape()?;
    b.check_shape()?;
    if a.axes != b.axes {
        return Err(Error::AxisMismatch);
    }
    if !(a.kind.is_volatility() && b.kind.is_volatility()) {
        return Err(Error::IncompatibleKinds(format!(
            "differences need two volatility surfaces, got {} and {}",
            a.kind, b.kind
        )));
    }
    Ok(())
}

fn combine<F>(a: &SurfaceGrid, b: &SurfaceGrid, kind: SurfaceKind, op: F) -> Result<SurfaceGrid>
where
    F: Fn(f64, f64) -> (f64, CellFlags),
{
    check_pair(a, b)?;
    let mut out = SurfaceGrid::empty(kind, a.axes.clone())?;
    for i in 0..out.values.len() {
        let mut flags = a.flags[i] | b.flags[i];
        let (x, y) = (a.values[i], b.values[i]);
        if x.is_nan() || y.is_nan() {
            flags |= CellFlags::NO_DATA;
        } else {
            let (value, extra) = op(x, y);
            out.values[i] = value;
            flags |= extra;
        }
        out.residuals[i] = a.residuals[i].max(b.residuals[i]);
        out.flags[i] = flags;
    }
    out.metadata.insert("minuend".into(), a.kind.as_str().into());
    out.metadata.insert("subtrahend".into(), b.kind.as_str().into());
    Ok(out)
}

/// Cellwise `a - b` on identical axes.
pub fn diff_surface(a: &SurfaceGrid, b: &SurfaceGrid) -> Result<SurfaceGrid> {
    combine(a, b, SurfaceKind::Diff, |x, y| (x - y, CellFlags::empty()))
}

/// Cellwise `(a - b) / b`; cells where `b = 0` stay unset and are flagged.
pub fn relative_diff_surface(a: &SurfaceGrid, b: &SurfaceGrid) -> Result<SurfaceGrid> {
    combine(a, b, SurfaceKind::RelDiff, |x, y| {
        if y == 0.0 {
            (f64::NAN, CellFlags::ZERO_DENOMINATOR)
        } else {
            ((x - y) / y, CellFlags::empty())
        }
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExportFormat {
    GridText,
    RecordsText,
    HeatmapImage,
}

impl ExportFormat {
    pub fn extension(self) -> &'static str {
        match self {
            ExportFormat::GridText => "grid.csv",
            ExportFormat::RecordsText => "records.csv",
            ExportFormat::HeatmapImage => "svg",
        }
    }
}

/// Ten significant digits; `NaN` for unset cells.
pub fn format_value(v: f64) -> String {
    if v.is_nan() {
        "NaN".into()
    } else {
        format!("{v:.9e}")
    }
}

fn write_header(out: &mut String, surface: &SurfaceGrid) {
    let _ = writeln!(out, "# kind={}", surface.kind);
    for (k, v) in &surface.metadata {
        let _ = writeln!(out, "# {k}={}", v.replace(['\n', '\r'], " "));
    }
}

/// Matrix layout: a moneyness header row, then one row per maturity.
pub fn to_grid_text(surface: &SurfaceGrid) -> String {
    let mut out = String::new();
    write_header(&mut out, surface);
    out.push_str("maturity_days");
    for m in &surface.axes.moneyness {
        let _ = write!(out, ",{m}");
    }
    out.push('\n');
    for (row, days) in surface.axes.maturities.iter().enumerate() {
        let _ = write!(out, "{days}");
        for col in 0..surface.cols() {
            let _ = write!(out, ",{}", format_value(surface.value(row, col)));
        }
        out.push('\n');
    }
    out
}

/// One `maturity_days,moneyness,value,residual,flags` record per cell.
pub fn to_records_text(surface: &SurfaceGrid) -> String {
    let mut out = String::new();
    write_header(&mut out, surface);
    out.push_str("maturity_days,moneyness,value,residual,flags\n");
    for (row, days) in surface.axes.maturities.iter().enumerate() {
        for (col, m) in surface.axes.moneyness.iter().enumerate() {
            let i = surface.index(row, col);
            let _ = writeln!(
                out,
                "{days},{m},{},{},{}",
                format_value(surface.values[i]),
                format_value(surface.residuals[i]),
                surface.flags[i].codes()
            );
        }
    }
    out
}

/// Parses [`to_records_text`] output back into a surface.
pub fn parse_records_text(text: &str) -> Result<SurfaceGrid> {
    let mut kind = None;
    let mut metadata = BTreeMap::new();
    let mut records = Vec::new();
    let mut saw_header = false;
    for (n, line) in text.lines().enumerate() {
        let ctx = || format!("records line {}", n + 1);
        if let Some(comment) = line.strip_prefix('#') {
            if let Some((k, v)) = comment.trim_start().split_once('=') {
                if k == "kind" {
                    kind = Some(v.parse::<SurfaceKind>()?);
                } else {
                    metadata.insert(k.to_string(), v.to_string());
                }
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        if !saw_header {
            if line.trim() != "maturity_days,moneyness,value,residual,flags" {
                return Err(Error::parse(ctx(), "expected records header"));
            }
            saw_header = true;
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 5 {
            return Err(Error::parse(ctx(), format!("expected 5 fields, got {}", fields.len())));
        }
        let num = |s: &str| s.trim().parse::<f64>().map_err(|e| Error::parse(ctx(), e.to_string()));
        let days: u32 = fields[0]
            .trim()
            .parse()
            .map_err(|e: std::num::ParseIntError| Error::parse(ctx(), e.to_string()))?;
        records.push((
            days,
            num(fields[1])?,
            num(fields[2])?,
            num(fields[3])?,
            CellFlags::from_codes(fields[4])?,
        ));
    }
    let kind = kind.ok_or_else(|| Error::parse("records", "missing `# kind=` header"))?;

    let mut maturities: Vec<u32> = records.iter().map(|r| r.0).collect();
    maturities.sort_unstable();
    maturities.dedup();
    let mut moneyness: Vec<f64> = records.iter().map(|r| r.1).collect();
    moneyness.sort_by(f64::total_cmp);
    moneyness.dedup();
    let mut surface = SurfaceGrid::empty(kind, GridAxes::new(moneyness, maturities)?)?;
    let mut seen = vec![false; surface.values.len()];
    for (days, m, value, residual, flags) in records {
        let row = surface
            .axes
            .maturities
            .binary_search(&days)
            .expect("axis built from records");
        let col = surface
            .axes
            .moneyness
            .binary_search_by(|x| x.total_cmp(&m))
            .expect("axis built from records");
        let i = surface.index(row, col);
        if seen[i] {
            return Err(Error::parse("records", format!("duplicate cell ({days}, {m})")));
        }
        seen[i] = true;
        surface.set(row, col, value, residual, flags);
    }
    if seen.iter().any(|s| !s) {
        return Err(Error::parse("records", "grid is incomplete"));
    }
    surface.metadata = metadata;
    Ok(surface)
}

pub fn load_records(path: &Path) -> Result<SurfaceGrid> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_records_text(&text)
}

pub fn export_surface(surface: &SurfaceGrid, format: ExportFormat, path: &Path) -> Result<()> {
    surface.check_shape()?;
    let text = match format {
        ExportFormat::GridText => to_grid_text(surface),
        ExportFormat::RecordsText => to_records_text(surface),
        ExportFormat::HeatmapImage => to_svg(surface),
    };
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

// Viridis control points.
const PALETTE: [(f64, f64, f64); 5] = [
    (68.0, 1.0, 84.0),
    (59.0, 82.0, 139.0),
    (33.0, 145.0, 140.0),
    (94.0, 201.0, 98.0),
    (253.0, 231.0, 37.0),
];

fn color(t: f64) -> String {
    let t = t.clamp(0.0, 1.0) * (PALETTE.len() - 1) as f64;
    let i = (t.floor() as usize).min(PALETTE.len() - 2);
    let f = t - i as f64;
    let (a, b) = (PALETTE[i], PALETTE[i + 1]);
    let mix = |x: f64, y: f64| (x + (y - x) * f).round() as u8;
    format!("#{:02x}{:02x}{:02x}", mix(a.0, b.0), mix(a.1, b.1), mix(a.2, b.2))
}

/// Standalone SVG heatmap: maturity down, moneyness across, colour bar on the
/// right. Flagged cells are hatched; unset cells are grey.
pub fn to_svg(surface: &SurfaceGrid) -> String {
    let (rows, cols) = (surface.rows(), surface.cols());
    let cell_w = (720.0 / cols as f64).clamp(4.0, 60.0);
    let cell_h = (480.0 / rows as f64).clamp(4.0, 60.0);
    let (left, top) = (80.0, 40.0);
    let plot_w = cell_w * cols as f64;
    let plot_h = cell_h * rows as f64;
    let width = left + plot_w + 120.0;
    let height = top + plot_h + 70.0;

    let finite: Vec<f64> = surface.values.iter().copied().filter(|v| v.is_finite()).collect();
    let lo = finite.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = finite.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = if hi > lo { hi - lo } else { 1.0 };

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0}" height="{height:.0}" viewBox="0 0 {width:.0} {height:.0}" font-family="sans-serif" font-size="11">"#
    );
    s.push_str(
        r##"<defs><pattern id="hatch" width="4" height="4" patternUnits="userSpaceOnUse"><path d="M0,4 L4,0" stroke="#000" stroke-opacity="0.45" stroke-width="0.8"/></pattern></defs>"##,
    );
    s.push('\n');
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="20" text-anchor="middle" font-size="14">{}</text>"#,
        left + plot_w / 2.0,
        surface.kind
    );
    for row in 0..rows {
        for col in 0..cols {
            let i = surface.index(row, col);
            let v = surface.values[i];
            let fill = if v.is_finite() {
                color((v - lo) / span)
            } else {
                "#bdbdbd".into()
            };
            let (x, y) = (left + col as f64 * cell_w, top + row as f64 * cell_h);
            let _ = writeln!(
                s,
                r#"<rect x="{x:.2}" y="{y:.2}" width="{cell_w:.2}" height="{cell_h:.2}" fill="{fill}"><title>T={}d M={} value={} flags={}</title></rect>"#,
                surface.axes.maturities[row],
                surface.axes.moneyness[col],
                format_value(v),
                surface.flags[i].codes()
            );
            if !surface.flags[i].is_empty() {
                let _ = writeln!(
                    s,
                    r#"<rect x="{x:.2}" y="{y:.2}" width="{cell_w:.2}" height="{cell_h:.2}" fill="url(#hatch)"/>"#
                );
            }
        }
    }

    let every = |n: usize| (n / 10).max(1);
    for col in (0..cols).step_by(every(cols)) {
        let x = left + (col as f64 + 0.5) * cell_w;
        let _ = writeln!(
            s,
            r#"<text x="{x:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            top + plot_h + 16.0,
            surface.axes.moneyness[col]
        );
    }
    for row in (0..rows).step_by(every(rows)) {
        let y = top + (row as f64 + 0.5) * cell_h + 4.0;
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{y:.2}" text-anchor="end">{}</text>"#,
            left - 6.0,
            surface.axes.maturities[row]
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">moneyness</text>"#,
        left + plot_w / 2.0,
        top + plot_h + 40.0
    );
    let _ = writeln!(
        s,
        r#"<text x="20" y="{:.2}" text-anchor="middle" transform="rotate(-90 20 {:.2})">maturity (days)</text>"#,
        top + plot_h / 2.0,
        top + plot_h / 2.0
    );

    let bar_x = left + plot_w + 30.0;
    let steps = 50;
    for k in 0..steps {
        let t = 1.0 - k as f64 / (steps - 1) as f64;
        let y = top + plot_h * k as f64 / steps as f64;
        let _ = writeln!(
            s,
            r#"<rect x="{bar_x:.2}" y="{y:.2}" width="18" height="{:.2}" fill="{}"/>"#,
            plot_h / steps as f64 + 0.5,
            color(t)
        );
    }
    let (lo_txt, hi_txt) = if finite.is_empty() {
        ("n/a".to_string(), "n/a".to_string())
    } else {
        (format!("{lo:.4e}"), format!("{hi:.4e}"))
    };
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}">{hi_txt}</text>"#,
        bar_x + 24.0,
        top + 8.0
    );
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}">{lo_txt}</text>"#,
        bar_x + 24.0,
        top + plot_h
    );
    s.push_str("</svg>\n");
    s
}
