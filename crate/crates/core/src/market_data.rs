//! Option-chain, close-history and risk-free-rate ingestion.
//!
//! All inputs are comma-separated text with a header row; columns are matched
//! by name. Dates are ISO-8601.
//!
//! | file         | columns                                                    |
//! |--------------|------------------------------------------------------------|
//! | option chain | `quote_date, expiry_date, strike, bid, ask, mid, vendor_iv` |
//! | closes       | `date, adjusted_close`                                     |
//! | rates        | `date, annual_yield`                                       |
//! | calendar     | one ISO date per line, no header                           |
//!
//! Cleaning follows a fixed order: snap expiries to the trading calendar,
//! drop expired quotes, drop bids below the floor, drop maturities beyond the
//! cap, drop strikes outside the band, then winsorize vendor implied vols.
//! Running it twice changes nothing.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::Read;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;

use crate::error::{Error, Result};

pub const DAYS_PER_YEAR: f64 = 365.0;

/// One listed call quote.
#[derive(Debug, Clone, PartialEq)]
pub struct OptionQuote {
    pub quote_date: NaiveDate,
    pub expiry_date: NaiveDate,
    pub strike: f64,
    pub bid: f64,
    pub ask: f64,
    pub mid: f64,
    pub vendor_iv: Option<f64>,
}

impl OptionQuote {
    pub fn maturity_days(&self) -> i64 {
        (self.expiry_date - self.quote_date).num_days()
    }

    /// Price used as the calibration target: the mid, or the bid/ask average
    /// when no positive mid was supplied.
    pub fn price(&self) -> f64 {
        if self.mid > 0.0 {
            self.mid
        } else {
            0.5 * (self.bid + self.ask)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RejectReason {
    /// A field failed to parse.
    Malformed,
    ExpiryBeforeQuote,
    AskBelowBid,
    NegativePrice,
}

impl RejectReason {
    pub fn code(self) -> &'static str {
        match self {
            RejectReason::Malformed => "MALFORMED",
            RejectReason::ExpiryBeforeQuote => "EXPIRY_BEFORE_QUOTE",
            RejectReason::AskBelowBid => "ASK_BELOW_BID",
            RejectReason::NegativePrice => "NEGATIVE_PRICE",
        }
    }
}

/// A rejected input row. `row` is the 1-based line number in the file.
#[derive(Debug, Clone, PartialEq)]
pub struct Reject {
    pub row: u64,
    pub reason: RejectReason,
    pub value: String,
}

impl fmt::Display for Reject {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{},{},{}", self.row, self.reason.code(), self.value)
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ChainLoad {
    pub quotes: Vec<OptionQuote>,
    pub rejects: Vec<Reject>,
    pub warnings: Vec<String>,
}

pub fn load_option_chain(path: &Path) -> Result<ChainLoad> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_option_chain(file)
}

pub fn read_option_chain<R: Read>(reader: R) -> Result<ChainLoad> {
    let mut rdr = csv_reader(reader);
    let headers = rdr.headers()?.clone();
    let mut load = ChainLoad::default();
    if headers.is_empty() {
        load.warnings.push("option chain is empty".into());
        return Ok(load);
    }
    let cols = Columns::new(
        &headers,
        &["quote_date", "expiry_date", "strike", "bid", "ask", "mid", "vendor_iv"],
    )?;

    for record in rdr.records() {
        let record = record?;
        let row = record.position().map_or(0, |p| p.line());
        let field = |i: usize| record.get(cols.index[i]).unwrap_or("").trim();
        let reject = |reason, value: &str| Reject {
            row,
            reason,
            value: value.to_string(),
        };

        let parsed = (|| -> std::result::Result<OptionQuote, Reject> {
            let date = |i: usize| {
                NaiveDate::parse_from_str(field(i), "%Y-%m-%d").map_err(|_| reject(RejectReason::Malformed, field(i)))
            };
            let num = |i: usize| {
                field(i)
                    .parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| reject(RejectReason::Malformed, field(i)))
            };
            let vendor_iv = match field(6) {
                "" => None,
                _ => Some(num(6)?),
            };
            Ok(OptionQuote {
                quote_date: date(0)?,
                expiry_date: date(1)?,
                strike: num(2)?,
                bid: num(3)?,
                ask: num(4)?,
                mid: num(5)?,
                vendor_iv,
            })
        })();

        match parsed {
            Err(r) => load.rejects.push(r),
            Ok(q) if q.expiry_date < q.quote_date => {
                load.rejects.push(reject(RejectReason::ExpiryBeforeQuote, field(1)))
            }
            Ok(q) if q.bid < 0.0 || q.ask < 0.0 || q.strike < 0.0 => load.rejects.push(reject(
                RejectReason::NegativePrice,
                &format!("{}/{}/{}", q.strike, q.bid, q.ask),
            )),
            Ok(q) if q.ask < q.bid => load
                .rejects
                .push(reject(RejectReason::AskBelowBid, &format!("{}<{}", q.ask, q.bid))),
            Ok(q) => load.quotes.push(q),
        }
    }
    if load.quotes.is_empty() && load.rejects.is_empty() {
        load.warnings.push("option chain has no rows".into());
    }
    Ok(load)
}

/// Trading days used to snap option expiries.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TradingCalendar {
    days: BTreeSet<NaiveDate>,
}

impl TradingCalendar {
    pub fn new(days: impl IntoIterator<Item = NaiveDate>) -> Self {
        Self {
            days: days.into_iter().collect(),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut days = BTreeSet::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let day = NaiveDate::parse_from_str(line, "%Y-%m-%d")
                .map_err(|e| Error::parse(format!("{}:{}", path.display(), i + 1), e.to_string()))?;
            days.insert(day);
        }
        Ok(Self { days })
    }

    pub fn is_empty(&self) -> bool {
        self.days.is_empty()
    }

    /// Closest trading day; ties go to the earlier day.
    pub fn nearest(&self, date: NaiveDate) -> Option<NaiveDate> {
        let before = self.days.range(..=date).next_back().copied();
        let after = self.days.range(date..).next().copied();
        pick_nearest(date, before, after)
    }
}

/// Picks between the closest earlier-or-equal and later candidates; ties go earlier.
fn pick_nearest(date: NaiveDate, before: Option<NaiveDate>, after: Option<NaiveDate>) -> Option<NaiveDate> {
    match (before, after) {
        (Some(b), Some(a)) => {
            if (a - date).num_days() < (date - b).num_days() {
                Some(a)
            } else {
                Some(b)
            }
        }
        (b, a) => b.or(a),
    }
}

fn nearest_key<V>(map: &BTreeMap<NaiveDate, V>, date: NaiveDate) -> Option<NaiveDate> {
    let before = map.range(..=date).next_back().map(|(d, _)| *d);
    let after = map.range(date..).next().map(|(d, _)| *d);
    pick_nearest(date, before, after)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CleaningRules {
    /// Quotes with a bid strictly below this are dropped.
    pub min_bid: f64,
    pub max_maturity_days: i64,
    /// Closed strike band as fractions of spot.
    pub strike_band: (f64, f64),
    /// Vendor implied vols above this nearest-rank percentile are capped.
    pub winsor_percentile: f64,
}

impl Default for CleaningRules {
    fn default() -> Self {
        Self {
            min_bid: 0.05,
            max_maturity_days: 350,
            strike_band: (0.10, 1.50),
            winsor_percentile: 0.99,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CleaningCounts {
    pub input: usize,
    pub dropped_expired: usize,
    pub dropped_low_bid: usize,
    pub dropped_maturity: usize,
    pub dropped_strike_band: usize,
    /// Quotes whose vendor vol was capped (kept, not dropped).
    pub winsorized: usize,
    pub expiries_snapped: usize,
}

impl CleaningCounts {
    pub fn dropped(&self) -> usize {
        self.dropped_expired + self.dropped_low_bid + self.dropped_maturity + self.dropped_strike_band
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CleanedChain {
    pub quotes: Vec<OptionQuote>,
    pub counts: CleaningCounts,
    /// The winsorization cap, when any vendor vols were present.
    pub vol_cap: Option<f64>,
}

/// Nearest-rank percentile of `values` (`0 < pct <= 1`).
pub fn nearest_rank_percentile(values: &[f64], pct: f64) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let rank = (pct * sorted.len() as f64).ceil().max(1.0) as usize;
    Some(sorted[rank.min(sorted.len()) - 1])
}

pub fn clean_quotes(
    quotes: &[OptionQuote],
    spot: f64,
    rules: &CleaningRules,
    calendar: Option<&TradingCalendar>,
) -> Result<CleanedChain> {
    if !(spot > 0.0 && spot.is_finite()) {
        return Err(Error::InvalidInput(format!("spot must be positive, got {spot}")));
    }
    let mut counts = CleaningCounts {
        input: quotes.len(),
        ..Default::default()
    };
    let (lo_band, hi_band) = (rules.strike_band.0 * spot, rules.strike_band.1 * spot);

    let mut kept = Vec::with_capacity(quotes.len());
    for q in quotes {
        let mut q = q.clone();
        if let Some(snapped) = calendar.and_then(|c| c.nearest(q.expiry_date)) {
            if snapped != q.expiry_date {
                q.expiry_date = snapped;
                counts.expiries_snapped += 1;
            }
        }
        if q.maturity_days() < 1 {
            counts.dropped_expired += 1;
        } else if q.bid < rules.min_bid {
            counts.dropped_low_bid += 1;
        } else if q.maturity_days() > rules.max_maturity_days {
            counts.dropped_maturity += 1;
        } else if q.strike < lo_band || q.strike > hi_band {
            counts.dropped_strike_band += 1;
        } else {
            kept.push(q);
        }
    }

    let vols: Vec<f64> = kept.iter().filter_map(|q| q.vendor_iv).collect();
    let vol_cap = nearest_rank_percentile(&vols, rules.winsor_percentile);
    if let Some(cap) = vol_cap {
        for q in &mut kept {
            if let Some(iv) = q.vendor_iv.as_mut() {
                if *iv > cap {
                    *iv = cap;
                    counts.winsorized += 1;
                }
            }
        }
    }

    Ok(CleanedChain {
        quotes: kept,
        counts,
        vol_cap,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RateConvention {
    /// `ln(1 + y) / 365`: the daily continuously-compounded equivalent of an
    /// annual simple yield.
    ToDailyContinuous,
}

pub fn convert_rate(annual_yield: f64, convention: RateConvention) -> Result<f64> {
    if !(annual_yield > -1.0) || !annual_yield.is_finite() {
        return Err(Error::InvalidInput(format!(
            "annual yield must exceed -1, got {annual_yield}"
        )));
    }
    match convention {
        RateConvention::ToDailyContinuous => Ok(annual_yield.ln_1p() / DAYS_PER_YEAR),
    }
}

/// Annualized continuously-compounded rate for an annual simple yield.
pub fn annualized_continuous(annual_yield: f64) -> Result<f64> {
    Ok(convert_rate(annual_yield, RateConvention::ToDailyContinuous)? * DAYS_PER_YEAR)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Imputation {
    pub date: NaiveDate,
    pub source: NaiveDate,
}

/// Dated annualized continuously-compounded rates plus a log of every filled date.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RateSeries {
    pub rates: BTreeMap<NaiveDate, f64>,
    pub imputations: Vec<Imputation>,
}

impl RateSeries {
    pub fn new(rates: BTreeMap<NaiveDate, f64>) -> Self {
        Self {
            rates,
            imputations: Vec::new(),
        }
    }

    pub fn get(&self, date: NaiveDate) -> Option<f64> {
        self.rates.get(&date).copied()
    }

    pub fn len(&self) -> usize {
        self.rates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rates.is_empty()
    }

    /// Loads `date, annual_yield`; blank or `.` yields are treated as missing.
    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read(file, &path.display().to_string())
    }

    pub fn read<R: Read>(reader: R, context: &str) -> Result<Self> {
        let mut rdr = csv_reader(reader);
        let headers = rdr.headers()?.clone();
        let cols = Columns::new(&headers, &["date", "annual_yield"])?;
        let mut rates = BTreeMap::new();
        for record in rdr.records() {
            let record = record?;
            let line = record.position().map_or(0, |p| p.line());
            let date_txt = record.get(cols.index[0]).unwrap_or("").trim();
            let yield_txt = record.get(cols.index[1]).unwrap_or("").trim();
            if yield_txt.is_empty() || yield_txt == "." {
                continue;
            }
            let date = NaiveDate::parse_from_str(date_txt, "%Y-%m-%d")
                .map_err(|e| Error::parse(format!("{context}:{line}"), e.to_string()))?;
            let y: f64 = yield_txt
                .parse()
                .map_err(|_| Error::parse(format!("{context}:{line}"), format!("bad yield `{yield_txt}`")))?;
            rates.insert(date, annualized_continuous(y)?);
        }
        Ok(Self::new(rates))
    }
}

/// Restricts `rates` to exactly `required`, filling gaps from the nearest dated
/// rate (earlier date on ties) and logging each fill.
pub fn impute_rates(rates: &RateSeries, required: &[NaiveDate]) -> Result<RateSeries> {
    if rates.is_empty() {
        return Err(Error::EmptyRates);
    }
    let mut out = RateSeries::default();
    for &date in required {
        if out.rates.contains_key(&date) {
            continue;
        }
        match rates.rates.get(&date) {
            Some(&r) => {
                out.rates.insert(date, r);
            }
            None => {
                let source = nearest_key(&rates.rates, date).ok_or(Error::EmptyRates)?;
                out.rates.insert(date, rates.rates[&source]);
                out.imputations.push(Imputation { date, source });
            }
        }
    }
    Ok(out)
}

/// Adjusted closes keyed by date, with the dates whose close was unusable.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CloseHistory {
    pub closes: BTreeMap<NaiveDate, f64>,
    pub excluded: Vec<NaiveDate>,
}

impl CloseHistory {
    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read(file, &path.display().to_string())
    }

    pub fn read<R: Read>(reader: R, context: &str) -> Result<Self> {
        let mut rdr = csv_reader(reader);
        let headers = rdr.headers()?.clone();
        let cols = Columns::new(&headers, &["date", "adjusted_close"])?;
        let mut history = CloseHistory::default();
        for record in rdr.records() {
            let record = record?;
            let line = record.position().map_or(0, |p| p.line());
            let date_txt = record.get(cols.index[0]).unwrap_or("").trim();
            let date = NaiveDate::parse_from_str(date_txt, "%Y-%m-%d")
                .map_err(|e| Error::parse(format!("{context}:{line}"), e.to_string()))?;
            let close = record
                .get(cols.index[1])
                .unwrap_or("")
                .trim()
                .parse::<f64>()
                .ok()
                .filter(|c| *c > 0.0 && c.is_finite());
            match close {
                Some(c) => {
                    history.closes.insert(date, c);
                }
                None => history.excluded.push(date),
            }
        }
        Ok(history)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotConfig {
    /// Window length `L` in trading days.
    pub window_len: usize,
    /// Assumed firm asset value `V0`.
    pub asset_value: f64,
    /// Last day of the window; defaults to the latest usable close.
    pub as_of: Option<NaiveDate>,
    pub rules: CleaningRules,
}

impl Default for SnapshotConfig {
    fn default() -> Self {
        Self {
            window_len: 5,
            asset_value: 1e12,
            as_of: None,
            rules: CleaningRules::default(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SnapshotPaths {
    pub chain: Option<PathBuf>,
    pub closes: PathBuf,
    pub rates: PathBuf,
    pub calendar: Option<PathBuf>,
}

/// Everything one calibration date needs.
#[derive(Debug, Clone, PartialEq)]
pub struct MarketSnapshot {
    pub as_of: NaiveDate,
    /// Adjusted close on `as_of` (`S_0`).
    pub equity_close: f64,
    /// The last `L` usable closes, oldest first.
    pub close_history: Vec<(NaiveDate, f64)>,
    pub quotes: Vec<OptionQuote>,
    /// Rates on exactly the `close_history` dates.
    pub rates: RateSeries,
    pub asset_value: f64,
    pub chain_rejects: Vec<Reject>,
    pub cleaning: CleaningCounts,
    pub warnings: Vec<String>,
    /// Window dates dropped for a missing or unusable close.
    pub excluded_dates: Vec<NaiveDate>,
}

impl MarketSnapshot {
    /// Annualized continuously-compounded rate on `as_of`.
    pub fn risk_free_rate(&self) -> f64 {
        self.rates.get(self.as_of).unwrap_or(0.0)
    }
}

pub fn build_snapshot(paths: &SnapshotPaths, config: &SnapshotConfig) -> Result<MarketSnapshot> {
    let closes = CloseHistory::load(&paths.closes)?;
    let rates = RateSeries::load(&paths.rates)?;
    let calendar = paths.calendar.as_deref().map(TradingCalendar::load).transpose()?;
    let chain = paths.chain.as_deref().map(load_option_chain).transpose()?;
    assemble_snapshot(closes, rates, chain, calendar.as_ref(), config)
}

/// [`build_snapshot`] on already-parsed inputs.
pub fn assemble_snapshot(
    closes: CloseHistory,
    rates: RateSeries,
    chain: Option<ChainLoad>,
    calendar: Option<&TradingCalendar>,
    config: &SnapshotConfig,
) -> Result<MarketSnapshot> {
    if config.window_len == 0 {
        return Err(Error::InvalidInput("window length must be at least 1".into()));
    }
    if !(config.asset_value > 0.0) {
        return Err(Error::InvalidInput(format!(
            "asset value must be positive, got {}",
            config.asset_value
        )));
    }
    let usable: Vec<(NaiveDate, f64)> = closes
        .closes
        .iter()
        .filter(|(d, _)| config.as_of.is_none_or(|a| **d <= a))
        .map(|(d, c)| (*d, *c))
        .collect();
    if usable.len() < config.window_len {
        return Err(Error::InsufficientData {
            needed: config.window_len,
            available: usable.len(),
        });
    }
    let close_history = usable[usable.len() - config.window_len..].to_vec();
    let (as_of, equity_close) = *close_history.last().expect("window is non-empty");
    if let Some(requested) = config.as_of {
        if requested != as_of {
            return Err(Error::InvalidInput(format!(
                "no usable close on as-of date {requested} (latest is {as_of})"
            )));
        }
    }
    let start = close_history[0].0;
    let excluded_dates = closes
        .excluded
        .iter()
        .copied()
        .filter(|d| *d >= start && *d <= as_of)
        .collect();

    let required: Vec<NaiveDate> = close_history.iter().map(|(d, _)| *d).collect();
    let rates = impute_rates(&rates, &required)?;

    let (quotes, chain_rejects, cleaning, mut warnings) = match chain {
        Some(load) => {
            let cleaned = clean_quotes(&load.quotes, equity_close, &config.rules, calendar)?;
            (cleaned.quotes, load.rejects, cleaned.counts, load.warnings)
        }
        None => (Vec::new(), Vec::new(), CleaningCounts::default(), Vec::new()),
    };
    for imp in &rates.imputations {
        warnings.push(format!("rate for {} imputed from {}", imp.date, imp.source));
    }

    Ok(MarketSnapshot {
        as_of,
        equity_close,
        close_history,
        quotes,
        rates,
        asset_value: config.asset_value,
        chain_rejects,
        cleaning,
        warnings,
        excluded_dates,
    })
}

fn csv_reader<R: Read>(reader: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .flexible(true)
        .from_reader(reader)
}

struct Columns {
    index: Vec<usize>,
}

impl Columns {
    fn new(headers: &csv::StringRecord, names: &[&str]) -> Result<Self> {
        let index = names
            .iter()
            .map(|name| {
                headers
                    .iter()
                    .position(|h| h.trim().eq_ignore_ascii_case(name))
                    .ok_or_else(|| Error::Schema((*name).to_string()))
            })
            .collect::<Result<_>>()?;
        Ok(Self { index })
    }
}
