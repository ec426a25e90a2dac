use chrono::{Duration, NaiveDate};
use credit_lattice::binomial::{
    derive_risk_neutral, derive_step_returns, physical_step_moments, tree_call_price, ReturnMode, TreeParams,
};
use credit_lattice::market_data::{clean_quotes, impute_rates, CleaningRules, OptionQuote, RateSeries};
use credit_lattice::pricing::{bsm_call, bsm_put, call_vega_fd, BsmInputs};
use credit_lattice::surfaces::{
    diff_surface, format_value, parse_records_text, to_records_text, CellFlags, GridAxes, SurfaceGrid, SurfaceKind,
};
use proptest::prelude::*;

fn inputs() -> impl Strategy<Value = BsmInputs> {
    (1.0..1e4f64, 0.05..3.0f64, -0.02..0.15f64, 0.01..1.5f64, 0.01..5.0f64)
        .prop_map(|(v, m, r, s, t)| BsmInputs::new(v, v * m, r, s, t).unwrap())
}

proptest! {
    #[test]
    fn parity_holds(i in inputs()) {
        let gap = bsm_call(&i).unwrap() - bsm_put(&i).unwrap() - (i.underlying_value - i.strike * i.discount_factor());
        prop_assert!(gap.abs() <= 1e-9 * i.underlying_value);
    }

    #[test]
    fn call_is_bounded_and_monotone(i in inputs(), bump in 1.001..1.5f64) {
        let c = bsm_call(&i).unwrap();
        let lower = (i.underlying_value - i.strike * i.discount_factor()).max(0.0);
        prop_assert!(c >= lower - 1e-9 * i.underlying_value && c <= i.underlying_value * (1.0 + 1e-12));
        let higher_strike = BsmInputs { strike: i.strike * bump, ..i };
        prop_assert!(bsm_call(&higher_strike).unwrap() <= c + 1e-12 * i.underlying_value);
        let higher_vol = i.with_volatility(i.volatility * bump);
        prop_assert!(bsm_call(&higher_vol).unwrap() >= c - 1e-12 * i.underlying_value);
    }

    #[test]
    fn vega_is_nonnegative(i in inputs()) {
        prop_assert!(call_vega_fd(&i, 1e-5).unwrap() >= -1e-9 * i.underlying_value);
    }

    #[test]
    fn step_moments_match(
        mu in -0.5..0.5f64, sigma in 0.005..1.0f64, p in 0.02..0.98f64, days in 1..400usize
    ) {
        let params = TreeParams::for_maturity(mu, sigma, p, 0.03, days as f64 / 365.0, days, ReturnMode::Log).unwrap();
        let dt = params.step_years;
        let (mean, var) = physical_step_moments(&params).unwrap();
        prop_assert!((mean - mu * dt).abs() <= 1e-12);
        prop_assert!((var - sigma * sigma * dt).abs() <= 1e-12);
        let steps = derive_step_returns(&params).unwrap();
        prop_assert!(steps.up_factor > steps.down_factor);
    }

    #[test]
    fn arithmetic_mode_is_a_martingale(
        theta in -1.0..1.0f64, sigma in 0.01..0.5f64, p in 0.05..0.95f64, r in 0.0..0.08f64
    ) {
        let params = TreeParams::for_maturity(r + theta * sigma, sigma, p, r, 30.0 / 365.0, 30, ReturnMode::Arithmetic).unwrap();
        let rn = derive_risk_neutral(&params).unwrap();
        let s = derive_step_returns(&params).unwrap();
        prop_assert!((rn.q * s.up_factor + (1.0 - rn.q) * s.down_factor - s.gross_rate).abs() <= 1e-14);
    }

    #[test]
    fn tree_call_lies_inside_no_arbitrage_bounds(
        sigma in 0.01..0.5f64, p in 0.2..0.8f64, m in 0.3..1.5f64, days in 5..120usize
    ) {
        let params = TreeParams::for_maturity(0.03, sigma, p, 0.03, days as f64 / 365.0, days, ReturnMode::Log).unwrap();
        let quote = tree_call_price(100.0, 100.0 * m, &params).unwrap();
        prop_assert!(quote.value >= 0.0 && quote.value <= 100.0 * (1.0 + 1e-9) * (0.5 * sigma * sigma * params.maturity_years()).exp());
    }
}

fn day(offset: i64) -> NaiveDate {
    NaiveDate::from_ymd_opt(2025, 2, 13).unwrap() + Duration::days(offset)
}

fn quote_strategy() -> impl Strategy<Value = OptionQuote> {
    (
        -5i64..500,
        1.0..300.0f64,
        0.0..3.0f64,
        0.0..0.5f64,
        proptest::option::of(0.05..2.0f64),
    )
        .prop_map(|(days, strike, bid, spread, iv)| OptionQuote {
            quote_date: day(0),
            expiry_date: day(days),
            strike,
            bid,
            ask: bid + spread,
            mid: bid + 0.5 * spread,
            vendor_iv: iv,
        })
}

proptest! {
    #[test]
    fn cleaning_conserves_and_is_idempotent(quotes in proptest::collection::vec(quote_strategy(), 0..80)) {
        let rules = CleaningRules::default();
        let once = clean_quotes(&quotes, 100.0, &rules, None).unwrap();
        prop_assert_eq!(once.counts.dropped() + once.quotes.len(), quotes.len());
        prop_assert!(once.counts.winsorized <= once.quotes.len());
        let twice = clean_quotes(&once.quotes, 100.0, &rules, None).unwrap();
        prop_assert_eq!(&twice.quotes, &once.quotes);
        prop_assert_eq!(twice.counts.dropped(), 0);
        prop_assert_eq!(twice.counts.winsorized, 0);
    }

    #[test]
    fn imputation_fills_every_required_date(
        observed in proptest::collection::btree_map(0i64..40, 0.0..0.1f64, 1..10),
        required in proptest::collection::btree_set(0i64..40, 1..20),
    ) {
        let series = RateSeries::new(observed.iter().map(|(d, r)| (day(*d), *r)).collect());
        let required: Vec<NaiveDate> = required.iter().map(|d| day(*d)).collect();
        let filled = impute_rates(&series, &required).unwrap();
        prop_assert_eq!(filled.len(), required.len());
        for d in &required {
            let rate = filled.get(*d).unwrap();
            match series.get(*d) {
                Some(r) => prop_assert_eq!(rate, r),
                None => {
                    // The fill equals the rate on some nearest observed date.
                    let gap = observed.keys().map(|o| (day(*o) - *d).num_days().abs()).min().unwrap();
                    let ok = observed.iter().any(|(o, r)| (day(*o) - *d).num_days().abs() == gap && *r == rate);
                    prop_assert!(ok);
                }
            }
        }
        let logged: Vec<NaiveDate> = filled.imputations.iter().map(|i| i.date).collect();
        let missing: Vec<NaiveDate> = required.iter().copied().filter(|d| series.get(*d).is_none()).collect();
        prop_assert_eq!(logged, missing);
    }
}

fn grid_strategy(kind: SurfaceKind) -> impl Strategy<Value = SurfaceGrid> {
    (1usize..6, 1usize..6)
        .prop_flat_map(|(rows, cols)| {
            (
                Just(rows),
                Just(cols),
                proptest::collection::vec(prop_oneof![9 => -1e3..1e3f64, 1 => Just(f64::NAN)], rows * cols),
                proptest::collection::vec(0.0..1e-6f64, rows * cols),
                proptest::collection::vec(0u8..16, rows * cols),
            )
        })
        .prop_map(move |(rows, cols, values, residuals, bits)| {
            let axes = GridAxes::new(
                (1..=cols).map(|c| c as f64 * 0.05).collect(),
                (1..=rows).map(|r| r as u32 * 7).collect(),
            )
            .unwrap();
            let mut grid = SurfaceGrid::empty(kind, axes).unwrap();
            for row in 0..rows {
                for col in 0..cols {
                    let i = row * cols + col;
                    let flags = CellFlags::from_bits_truncate(bits[i]);
                    grid.set(row, col, values[i], residuals[i], flags);
                }
            }
            grid.metadata.insert("as_of".into(), "2025-02-13".into());
            grid
        })
}

proptest! {
    #[test]
    fn records_round_trip_is_lossless_at_ten_digits(grid in grid_strategy(SurfaceKind::AssetVol)) {
        let back = parse_records_text(&to_records_text(&grid)).unwrap();
        prop_assert_eq!(back.kind, grid.kind);
        prop_assert_eq!(&back.axes, &grid.axes);
        prop_assert_eq!(&back.flags, &grid.flags);
        prop_assert_eq!(&back.metadata, &grid.metadata);
        for (a, b) in grid.values.iter().zip(&back.values) {
            prop_assert_eq!(format_value(*a), format_value(*b));
        }
        // A second pass reproduces the text exactly.
        prop_assert_eq!(to_records_text(&back), to_records_text(&parse_records_text(&to_records_text(&back)).unwrap()));
    }

    #[test]
    fn diff_plus_b_restores_a(a in grid_strategy(SurfaceKind::AssetVol), shift in -5.0..5.0f64) {
        let mut b = a.clone();
        b.kind = SurfaceKind::EquityVol;
        for v in b.values.iter_mut() {
            *v = *v * 0.5 + shift;
        }
        let d = diff_surface(&a, &b).unwrap();
        for i in 0..a.values.len() {
            if d.flags[i].is_empty() {
                prop_assert!((d.values[i] + b.values[i] - a.values[i]).abs() <= 1e-12 * a.values[i].abs().max(1.0));
            } else {
                prop_assert!(d.flags[i].contains(a.flags[i]));
            }
        }
    }

    #[test]
    fn moneyness_ranges_are_strictly_increasing(start in 0.01..1.0f64, len in 0.01..2.0f64, step in 0.005..0.2f64) {
        let axis = GridAxes::moneyness_range(start, start + len, step);
        prop_assert!(!axis.is_empty());
        prop_assert!(axis.windows(2).all(|w| w[0] < w[1]));
        prop_assert!(GridAxes::new(axis, vec![30]).is_ok());
    }
}
