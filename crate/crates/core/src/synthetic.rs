//! Seeded fixture generator.
//!
//! Produces a complete input set (option chain, closes, rates, trading
//! calendar) from known parameters, plus a `truth.txt` listing them. The same
//! seed always yields byte-identical files.
//!
//! The chain is priced with the closed-form call at one volatility, so an
//! equity-vol surface built from it should come back flat. A second close
//! file, `tree_closes.csv`, ends on a lattice price generated from a known up
//! probability so the probability calibration has an exact target.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use chrono::{Datelike, Duration, NaiveDate, Weekday};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::binomial::{tree_call_price, ReturnMode, TreeParams};
use crate::error::{Error, Result};
use crate::market_data::{annualized_continuous, DAYS_PER_YEAR};
use crate::pricing::{bsm_call, BsmInputs};

/// Five consecutive trading-day closes ending on the snapshot date.
pub const FIVE_DAY_CLOSES: [(i32, u32, u32, f64); 5] = [
    (2025, 2, 7, 6025.99),
    (2025, 2, 10, 6066.44),
    (2025, 2, 11, 6068.50),
    (2025, 2, 12, 6051.97),
    (2025, 2, 13, 6115.07),
];

pub fn five_day_dates() -> Vec<NaiveDate> {
    FIVE_DAY_CLOSES
        .iter()
        .map(|(y, m, d, _)| NaiveDate::from_ymd_opt(*y, *m, *d).expect("valid date"))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticConfig {
    pub seed: u64,
    /// Volatility used to price every chain quote.
    pub equity_vol: f64,
    /// Target maturities; each expiry is pushed forward to the next trading day.
    pub maturities: Vec<u32>,
    /// Strikes as multiples of the last close.
    pub strike_moneyness: Vec<f64>,
    /// Trading days of history before the five fixed closes.
    pub history_days: usize,
    pub base_yield: f64,
    /// Tree target: asset value, strike ratio, days, volatility, drift, up probability.
    pub tree_asset_value: f64,
    pub tree_moneyness: f64,
    pub tree_maturity_days: u32,
    pub tree_volatility: f64,
    pub tree_drift: f64,
    pub tree_up_probability: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        let mut strikes: Vec<f64> = (1..=30).map(|i| i as f64 * 0.05).collect();
        strikes.extend([0.07, 1.6, 1.75]);
        Self {
            seed: 7,
            equity_vol: 0.2,
            maturities: vec![7, 14, 30, 45, 60, 90, 120, 180, 270, 350, 400],
            strike_moneyness: strikes,
            history_days: 60,
            base_yield: 0.043,
            tree_asset_value: 10_000.0,
            tree_moneyness: 0.5,
            tree_maturity_days: 30,
            tree_volatility: 0.02,
            tree_drift: 0.08,
            tree_up_probability: 0.35,
        }
    }
}

/// Generated files keyed by file name.
#[derive(Debug, Clone, PartialEq)]
pub struct Fixture {
    pub files: BTreeMap<String, String>,
}

impl Fixture {
    pub fn write_to(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (name, body) in &self.files {
            let path = dir.join(name);
            std::fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    }
}

fn is_trading_day(d: NaiveDate, holidays: &[NaiveDate]) -> bool {
    !matches!(d.weekday(), Weekday::Sat | Weekday::Sun) && !holidays.contains(&d)
}

pub fn generate(config: &SyntheticConfig) -> Result<Fixture> {
    if !(config.equity_vol > 0.0) {
        return Err(Error::InvalidInput("synthetic volatility must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let table = five_day_dates();
    let as_of = *table.last().expect("five dates");
    let spot = FIVE_DAY_CLOSES[4].3;
    let holidays = [
        NaiveDate::from_ymd_opt(2025, 1, 20).expect("valid"),
        NaiveDate::from_ymd_opt(2025, 2, 17).expect("valid"),
    ];

    let calendar_start = as_of - Duration::days(400);
    let calendar_end = as_of + Duration::days(450);
    let trading: Vec<NaiveDate> = calendar_start
        .iter_days()
        .take_while(|d| *d <= calendar_end)
        .filter(|d| is_trading_day(*d, &holidays))
        .collect();

    // History: trading days before the first fixed close, walked backwards.
    let first_fixed = table[0];
    let mut history: Vec<NaiveDate> = trading
        .iter()
        .copied()
        .filter(|d| *d < first_fixed)
        .rev()
        .take(config.history_days)
        .collect();
    history.reverse();
    let daily_sd = config.equity_vol / 252f64.sqrt();
    let mut level = FIVE_DAY_CLOSES[0].3;
    let mut walk = vec![0.0; history.len()];
    for slot in walk.iter_mut().rev() {
        let z: f64 = rng.sample(StandardNormal);
        level /= (daily_sd * z).exp();
        *slot = (level * 100.0).round() / 100.0;
    }
    let blank_close = history.get(history.len() / 3).copied();

    let mut closes = String::from("date,adjusted_close\n");
    for (d, c) in history.iter().zip(&walk) {
        if Some(*d) == blank_close {
            let _ = writeln!(closes, "{d},");
        } else {
            let _ = writeln!(closes, "{d},{c}");
        }
    }
    let mut five_day = String::from("date,adjusted_close\n");
    for ((_, _, _, c), date) in FIVE_DAY_CLOSES.iter().zip(&table) {
        let _ = writeln!(closes, "{date},{c}");
        let _ = writeln!(five_day, "{date},{c}");
    }

    // Rates on trading days, with two gaps inside the five-day window.
    let gaps = [table[1], table[2]];
    let mut rates = String::from("date,annual_yield\n");
    let mut as_of_yield = config.base_yield;
    for d in history.iter().chain(&table) {
        let noise: f64 = rng.gen_range(-0.0005..0.0005);
        let y = ((config.base_yield + noise) * 1e5).round() / 1e5;
        if *d == as_of {
            as_of_yield = y;
        }
        if gaps.contains(d) {
            let _ = writeln!(rates, "{d},.");
        } else {
            let _ = writeln!(rates, "{d},{y}");
        }
    }
    let rate = annualized_continuous(as_of_yield)?;

    // Chain.
    let mut chain = String::from("quote_date,expiry_date,strike,bid,ask,mid,vendor_iv\n");
    let mut maturities_used = Vec::new();
    for target in &config.maturities {
        let mut expiry = as_of + Duration::days(*target as i64);
        while !is_trading_day(expiry, &holidays) {
            expiry += Duration::days(1);
        }
        let days = (expiry - as_of).num_days();
        maturities_used.push(days);
        for m in &config.strike_moneyness {
            let strike = (spot * m * 100.0).round() / 100.0;
            let inputs = BsmInputs::new(spot, strike, rate, config.equity_vol, days as f64 / DAYS_PER_YEAR)?;
            let mid = bsm_call(&inputs)?;
            let half_spread = 0.01 * mid + 0.005;
            let bid = (mid - half_spread).max(0.0);
            let ask = mid + half_spread;
            let iv: f64 = config.equity_vol + rng.gen_range(-0.002..0.002);
            let _ = writeln!(chain, "{as_of},{expiry},{strike},{bid},{ask},{mid},{iv:.6}");
        }
    }
    // Rows for the loader and cleaner to throw away.
    let near = as_of + Duration::days(30);
    let _ = writeln!(chain, "{as_of},{near},{},12.5,11.0,11.75,0.21", spot);
    let _ = writeln!(chain, "{as_of},{},{},5.0,5.2,5.1,0.2", as_of - Duration::days(3), spot);
    let _ = writeln!(chain, "{as_of},{near},{},300.0,301.0,300.5,3.5", spot * 0.95);

    let mut calendar = String::new();
    for d in &trading {
        let _ = writeln!(calendar, "{d}");
    }

    // Tree-priced target.
    let steps = config.tree_maturity_days as usize;
    let params = TreeParams::for_maturity(
        config.tree_drift,
        config.tree_volatility,
        config.tree_up_probability,
        rate,
        config.tree_maturity_days as f64 / DAYS_PER_YEAR,
        steps,
        ReturnMode::Log,
    )?;
    let tree_price = tree_call_price(
        config.tree_asset_value,
        config.tree_moneyness * config.tree_asset_value,
        &params,
    )?
    .value;
    let mut tree_closes = String::from("date,adjusted_close\n");
    for ((_, _, _, c), date) in FIVE_DAY_CLOSES.iter().zip(&table) {
        let _ = writeln!(tree_closes, "{date},{}", tree_price * c / spot);
    }

    let mut truth = String::new();
    let _ = writeln!(truth, "seed={}", config.seed);
    let _ = writeln!(truth, "as_of={as_of}");
    let _ = writeln!(truth, "spot={spot}");
    let _ = writeln!(truth, "equity_vol={}", config.equity_vol);
    let _ = writeln!(truth, "as_of_yield={as_of_yield}");
    let _ = writeln!(truth, "rate_continuous={rate}");
    let days: Vec<String> = maturities_used.iter().map(|d| d.to_string()).collect();
    let _ = writeln!(truth, "maturity_days={}", days.join(","));
    let _ = writeln!(truth, "tree_asset_value={}", config.tree_asset_value);
    let _ = writeln!(truth, "tree_moneyness={}", config.tree_moneyness);
    let _ = writeln!(truth, "tree_maturity_days={}", config.tree_maturity_days);
    let _ = writeln!(truth, "tree_volatility={}", config.tree_volatility);
    let _ = writeln!(truth, "tree_drift={}", config.tree_drift);
    let _ = writeln!(truth, "tree_up_probability={}", config.tree_up_probability);
    let _ = writeln!(truth, "tree_price={tree_price}");

    let mut files = BTreeMap::new();
    files.insert("chain.csv".to_string(), chain);
    files.insert("closes.csv".to_string(), closes);
    files.insert("rates.csv".to_string(), rates);
    files.insert("calendar.txt".to_string(), calendar);
    files.insert("five_day_closes.csv".to_string(), five_day);
    files.insert("tree_closes.csv".to_string(), tree_closes);
    files.insert("truth.txt".to_string(), truth);
    Ok(Fixture { files })
}

/// Parses `key=value` lines from `truth.txt`.
pub fn parse_truth(text: &str) -> BTreeMap<String, String> {
    text.lines()
        .filter_map(|l| l.split_once('='))
        .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market_data::{read_option_chain, CloseHistory, RateSeries};

    #[test]
    fn same_seed_same_bytes() {
        let a = generate(&SyntheticConfig::default()).unwrap();
        let b = generate(&SyntheticConfig::default()).unwrap();
        assert_eq!(a, b);
        let c = generate(&SyntheticConfig {
            seed: 8,
            ..SyntheticConfig::default()
        })
        .unwrap();
        assert_ne!(a.files["closes.csv"], c.files["closes.csv"]);
        assert_eq!(
            a.files["chain.csv"].lines().count(),
            c.files["chain.csv"].lines().count()
        );
    }

    #[test]
    fn files_parse_with_the_loaders() {
        let fx = generate(&SyntheticConfig::default()).unwrap();
        let chain = read_option_chain(fx.files["chain.csv"].as_bytes()).unwrap();
        // One ask-below-bid row and one expired row.
        assert_eq!(chain.rejects.len(), 2);
        assert!(chain.quotes.len() > 300);
        let closes = CloseHistory::read(fx.files["closes.csv"].as_bytes(), "closes").unwrap();
        assert_eq!(closes.excluded.len(), 1);
        assert_eq!(closes.closes.values().last().copied(), Some(6115.07));
        let rates = RateSeries::read(fx.files["rates.csv"].as_bytes(), "rates").unwrap();
        assert!(rates.get(five_day_dates()[1]).is_none());
        let truth = parse_truth(&fx.files["truth.txt"]);
        assert_eq!(truth["tree_up_probability"], "0.35");
    }
}
