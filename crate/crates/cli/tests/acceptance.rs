//! Acceptance checks, one PASS/FAIL line each.
//!
//! Runs as a plain binary (`harness = false`) so every line is printed by
//! `cargo test`. Exits non-zero if any check fails.

// `!(x > y)` is deliberate: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use chrono::NaiveDate;
use credit_lattice::binomial::{
    derive_risk_neutral, derive_step_returns, enumerate_paths_price, physical_step_moments, tree_call_price,
    ReturnMode, TreeParams,
};
use credit_lattice::calibration::{
    implied_asset_vol, implied_drift, implied_equity_vol, implied_up_probability, CalibrationConfig, CalibrationResult,
    CalibrationTarget, TreeSetup,
};
use credit_lattice::market_data::{
    build_snapshot, clean_quotes, impute_rates, read_option_chain, CleaningRules, RateSeries, SnapshotConfig,
    SnapshotPaths,
};
use credit_lattice::pricing::{bsm_call, bsm_put, BsmInputs, CapitalStructureSlice};
use credit_lattice::stress::{classify_signal, Action};
use credit_lattice::surfaces::{build_surface, downside_from_up, CalibrationTask, GridAxes, SurfaceConfig};
use credit_lattice::synthetic::{generate, SyntheticConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

struct Check {
    id: usize,
    name: &'static str,
    limit: Option<Duration>,
    run: fn() -> Outcome,
}

fn main() {
    let checks = [
        Check {
            id: 1,
            name: "closed-form call vs quadrature oracle",
            limit: Some(Duration::from_secs(1)),
            run: bsm_oracle,
        },
        Check {
            id: 2,
            name: "put-call parity and capital-structure identity",
            limit: Some(Duration::from_secs(5)),
            run: parity,
        },
        Check {
            id: 3,
            name: "per-step physical moments",
            limit: Some(Duration::from_secs(1)),
            run: moments,
        },
        Check {
            id: 4,
            name: "arithmetic-mode one-step martingale",
            limit: None,
            run: martingale,
        },
        Check {
            id: 5,
            name: "backward induction vs path enumeration",
            limit: Some(Duration::from_secs(30)),
            run: enumeration,
        },
        Check {
            id: 6,
            name: "lattice convergence to closed form",
            limit: Some(Duration::from_secs(10)),
            run: convergence,
        },
        Check {
            id: 7,
            name: "physical-parameter independence in the limit",
            limit: None,
            run: independence,
        },
        Check {
            id: 8,
            name: "calibration round trips",
            limit: Some(Duration::from_secs(120)),
            run: round_trips,
        },
        Check {
            id: 9,
            name: "cleaning counts and rate imputation",
            limit: None,
            run: data_rules,
        },
        Check {
            id: 10,
            name: "five-close fixture: boundary fits and complement",
            limit: None,
            run: fixture_shape,
        },
        Check {
            id: 11,
            name: "stress classification thresholds",
            limit: None,
            run: stress_thresholds,
        },
        Check {
            id: 12,
            name: "end-to-end determinism of drift grids",
            limit: None,
            run: determinism,
        },
    ];

    let mut failed = 0;
    for check in &checks {
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(check.run).unwrap_or_else(|_| Err("panicked".into()));
        let elapsed = start.elapsed();
        let outcome = match (outcome, check.limit) {
            (Ok(detail), Some(limit)) if elapsed > limit => {
                Err(format!("{detail}; took {elapsed:.2?}, limit {limit:?}"))
            }
            (other, _) => other,
        };
        let (status, detail) = match outcome {
            Ok(d) => ("PASS", d),
            Err(d) => {
                failed += 1;
                ("FAIL", d)
            }
        };
        println!("[{status}] {:>2}/12 {}: {detail} ({elapsed:.2?})", check.id, check.name);
    }
    println!("acceptance: {} passed, {failed} failed", checks.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}

fn ensure(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

// Gauss-Legendre nodes and weights on [-1, 1] by Newton iteration on P_n.
fn gauss_legendre(n: usize) -> Vec<(f64, f64)> {
    (1..=n)
        .map(|i| {
            let mut x = (std::f64::consts::PI * (i as f64 - 0.25) / (n as f64 + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (mut p0, mut p1) = (1.0, x);
                for k in 2..=n {
                    let pk = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                    p0 = p1;
                    p1 = pk;
                }
                dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
                let dx = p1 / dp;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            (x, 2.0 / ((1.0 - x * x) * dp * dp))
        })
        .collect()
}

/// Discounted expected payoff under the lognormal law, integrated over the
/// standard normal variable from the exercise boundary upwards.
fn quadrature_call(v: f64, k: f64, r: f64, sigma: f64, t: f64, rule: &[(f64, f64)]) -> f64 {
    let a = (r - 0.5 * sigma * sigma) * t;
    let b = sigma * t.sqrt();
    let z_star = ((k / v).ln() - a) / b;
    let upper = z_star.max(b) + 12.0;
    let panels = ((upper - z_star) / 0.01).ceil() as usize;
    let width = (upper - z_star) / panels as f64;
    let norm = 1.0 / (2.0 * std::f64::consts::PI).sqrt();
    let mut total = 0.0;
    for j in 0..panels {
        let lo = z_star + j as f64 * width;
        let mid = lo + 0.5 * width;
        for (x, w) in rule {
            let z = mid + 0.5 * width * x;
            let payoff = v * (a + b * z).exp() - k;
            total += 0.5 * width * w * payoff * norm * (-0.5 * z * z).exp();
        }
    }
    (-r * t).exp() * total
}

fn bsm_oracle() -> Outcome {
    let rule = gauss_legendre(8);
    let (v, r) = (100.0, 0.03);
    let mut worst: (f64, String) = (0.0, String::new());
    let mut cases = 0;
    for m in [0.5, 0.75, 1.0, 1.25, 1.5] {
        for sigma in [0.05, 0.2, 0.35, 0.5, 0.8] {
            for t in [0.1, 1.0, 2.0] {
                let closed = bsm_call(&BsmInputs::new(v, m * v, r, sigma, t).unwrap()).unwrap();
                let oracle = quadrature_call(v, m * v, r, sigma, t, &rule);
                let rel = (closed - oracle).abs() / oracle;
                cases += 1;
                if !(rel <= worst.0) {
                    worst = (rel, format!("M={m} sigma={sigma} T={t}: {closed:e} vs {oracle:e}"));
                }
            }
        }
    }
    ensure(
        worst.0 < 1e-7,
        format!("{cases} cases, max rel err {:.2e} at {}", worst.0, worst.1),
    )
}

fn parity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (mut worst_parity, mut worst_debt) = (0.0f64, 0.0f64);
    for _ in 0..10_000 {
        let v = rng.gen_range(1.0..1e4);
        let inputs = BsmInputs::new(
            v,
            v * rng.gen_range(0.05..3.0),
            rng.gen_range(-0.02..0.15),
            rng.gen_range(0.01..1.5),
            rng.gen_range(0.01..5.0),
        )
        .unwrap();
        let call = bsm_call(&inputs).unwrap();
        let put = bsm_put(&inputs).unwrap();
        let forward = v - inputs.strike * inputs.discount_factor();
        worst_parity = worst_parity.max((call - put - forward).abs() / v);
        let slice = CapitalStructureSlice::from_inputs(&inputs).unwrap();
        let identity = (slice.equity_value + slice.debt_value - v).abs() / v;
        let via_put = (slice.debt_value - slice.debt_from_put(inputs.strike)).abs() / v;
        worst_debt = worst_debt.max(identity).max(via_put);
    }
    ensure(
        worst_parity < 1e-9 && worst_debt < 1e-9,
        format!("10000 inputs, max parity gap {worst_parity:.2e}, max debt gap {worst_debt:.2e} (relative to V)"),
    )
}

fn random_params(rng: &mut ChaCha8Rng, mode: ReturnMode, max_steps: usize) -> TreeParams {
    let steps = rng.gen_range(1..=max_steps);
    TreeParams::for_maturity(
        rng.gen_range(-0.3..0.3),
        rng.gen_range(0.01..0.8),
        rng.gen_range(0.05..0.95),
        rng.gen_range(0.0..0.1),
        rng.gen_range(0.05..2.0),
        steps,
        mode,
    )
    .unwrap()
}

fn moments() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let (mut worst_mean, mut worst_var) = (0.0f64, 0.0f64);
    for _ in 0..1000 {
        let params = random_params(&mut rng, ReturnMode::Log, 500);
        let (mean, var) = physical_step_moments(&params).unwrap();
        let dt = params.step_years;
        worst_mean = worst_mean.max((mean - params.drift * dt).abs());
        worst_var = worst_var.max((var - params.volatility.powi(2) * dt).abs());
    }
    ensure(
        worst_mean < 1e-12 && worst_var < 1e-12,
        format!("1000 params, max |mean - mu dt| {worst_mean:.2e}, max |var - sigma^2 dt| {worst_var:.2e}"),
    )
}

fn martingale() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let (mut worst, mut tried) = (0.0f64, 0);
    let mut accepted = 0;
    while accepted < 1000 {
        tried += 1;
        let params = random_params(&mut rng, ReturnMode::Arithmetic, 500);
        let (Ok(step), Ok(rn)) = (derive_step_returns(&params), derive_risk_neutral(&params)) else {
            continue;
        };
        accepted += 1;
        let lhs = rn.q * step.up_factor + (1.0 - rn.q) * step.down_factor;
        worst = worst.max((lhs - step.gross_rate).abs());
    }
    ensure(
        worst < 1e-12,
        format!("1000 feasible params ({tried} drawn), max |q u + (1-q) d - R| {worst:.2e}"),
    )
}

fn enumeration() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(19);
    let (mut worst, mut accepted) = (0.0f64, 0);
    while accepted < 500 {
        let mode = if rng.gen_bool(0.5) {
            ReturnMode::Log
        } else {
            ReturnMode::Arithmetic
        };
        let params = random_params(&mut rng, mode, 12);
        let v = 100.0;
        let k = v * rng.gen_range(0.5..1.5);
        let (Ok(tree), Ok(paths)) = (tree_call_price(v, k, &params), enumerate_paths_price(v, k, &params)) else {
            continue;
        };
        accepted += 1;
        if paths > 0.0 {
            worst = worst.max((tree.value - paths).abs() / paths);
        } else {
            worst = worst.max(tree.value.abs());
        }
    }
    ensure(
        worst < 1e-10,
        format!("500 instances, n <= 12, max rel gap {worst:.2e}"),
    )
}

fn lattice_price(mu: f64, p: f64, steps: usize) -> f64 {
    let params = TreeParams::for_maturity(mu, 0.2, p, 0.03, 1.0, steps, ReturnMode::Log).unwrap();
    tree_call_price(100.0, 100.0, &params).unwrap().value
}

fn convergence() -> Outcome {
    let exact = bsm_call(&BsmInputs::new(100.0, 100.0, 0.03, 0.2, 1.0).unwrap()).unwrap();
    let (p1000, p4000) = (lattice_price(0.08, 0.5, 1000), lattice_price(0.08, 0.5, 4000));
    let e1000 = (p1000 - exact).abs() / exact;
    let e4000 = (p4000 - exact).abs() / exact;
    // Under q the log-mode step has log-mean r dt, so the lattice forward grows
    // at r + sigma^2 / 2. Report the distance to the closed form on that
    // shifted underlying as a diagnosis.
    let shifted = bsm_call(&BsmInputs::new(100.0 * (0.5 * 0.04f64).exp(), 100.0, 0.03, 0.2, 1.0).unwrap()).unwrap();
    let e_shift = (p4000 - shifted).abs() / shifted;
    ensure(
        e1000 < 0.005 && e4000 < e1000,
        format!(
            "rel err {e1000:.3e} at n=1000, {e4000:.3e} at n=4000; vs closed form on V e^(sigma^2 T/2): {e_shift:.3e} at n=4000"
        ),
    )
}

fn independence() -> Outcome {
    let gaps: Vec<f64> = [100, 400, 1600]
        .iter()
        .map(|&n| (lattice_price(0.08, 0.5, n) - lattice_price(0.02, 0.7, n)).abs())
        .collect();
    ensure(
        gaps[0] > gaps[1] && gaps[1] > gaps[2],
        format!(
            "price gaps {:.4e}, {:.4e}, {:.4e} at n=100, 400, 1600",
            gaps[0], gaps[1], gaps[2]
        ),
    )
}

#[derive(Default)]
struct Tally {
    recovered: usize,
    flagged: usize,
    excluded: usize,
    failures: Vec<String>,
}

impl Tally {
    /// `generator_sensitivity` is the relative price change per unit parameter
    /// at the true value; below 1e-8 recovery is not asserted.
    fn record(&mut self, truth: f64, generator_sensitivity: f64, res: &CalibrationResult, tol: f64) {
        if !(generator_sensitivity.abs() > 1e-8) {
            self.excluded += 1;
        } else if (res.fitted_value - truth).abs() <= tol {
            self.recovered += 1;
        } else if res.boundary_hit || res.low_sensitivity || res.multiple_roots {
            self.flagged += 1;
        } else {
            self.failures
                .push(format!("truth {truth} fit {} {res:?}", res.fitted_value));
        }
    }

    fn summary(&self, label: &str) -> String {
        format!(
            "{label}: {} recovered, {} flagged, {} insensitive, {} failed",
            self.recovered,
            self.flagged,
            self.excluded,
            self.failures.len()
        )
    }
}

fn round_trips() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let config = CalibrationConfig::default();

    let mut vol = Tally::default();
    for i in 0..400 {
        let v = 100.0;
        let sigma = rng.gen_range(0.05..1.0);
        let target = CalibrationTarget {
            observed_price: 0.0,
            underlying_value: v,
            strike: v * rng.gen_range(0.3..1.5),
            maturity_years: rng.gen_range(0.05..2.0),
            rate: rng.gen_range(0.0..0.06),
        };
        let price =
            bsm_call(&BsmInputs::new(v, target.strike, target.rate, sigma, target.maturity_years).unwrap()).unwrap();
        let target = CalibrationTarget {
            observed_price: price,
            ..target
        };
        let res = if i % 2 == 0 {
            implied_asset_vol(&target, &config)
        } else {
            implied_equity_vol(&target, &config)
        }
        .unwrap();
        let at = |s: f64| {
            bsm_call(&BsmInputs::new(v, target.strike, target.rate, s, target.maturity_years).unwrap()).unwrap()
        };
        let h = 1e-6;
        let sens = (at(sigma + h) - at(sigma - h)) / (2.0 * h) / price;
        vol.record(sigma, sens, &res, 1e-6);
    }

    let mut drift = Tally::default();
    let mut prob = Tally::default();
    let mut draws = 0;
    while drift.recovered + drift.flagged + drift.excluded + drift.failures.len() < 200
        || prob.recovered + prob.flagged + prob.excluded + prob.failures.len() < 200
    {
        draws += 1;
        let do_drift = drift.recovered + drift.flagged + drift.excluded + drift.failures.len() < 200;
        let days = rng.gen_range(10..=60usize);
        let setup = TreeSetup {
            volatility: rng.gen_range(0.01..0.3),
            steps: days,
            mode: ReturnMode::Log,
        };
        let rate = rng.gen_range(0.0..0.05);
        let (mu, p) = if do_drift {
            (rate + rng.gen_range(-0.3..0.3), 0.5)
        } else {
            (0.08, rng.gen_range(0.1..0.9))
        };
        let v = 100.0;
        let strike = v * rng.gen_range(0.3..1.1);
        let t = days as f64 / 365.0;
        let params = TreeParams::for_maturity(mu, setup.volatility, p, rate, t, days, ReturnMode::Log).unwrap();
        let Ok(quote) = tree_call_price(v, strike, &params) else {
            continue;
        };
        if !(quote.value > 0.0) {
            continue;
        }
        let target = CalibrationTarget {
            observed_price: quote.value,
            underlying_value: v,
            strike,
            maturity_years: t,
            rate,
        };
        let at = |x: f64| {
            let (m, q) = if do_drift { (x, p) } else { (mu, x) };
            TreeParams::for_maturity(m, setup.volatility, q, rate, t, days, ReturnMode::Log)
                .and_then(|params| tree_call_price(v, strike, &params))
                .ok()
                .map(|quote| quote.value)
        };
        let truth = if do_drift { mu } else { p };
        let h = 1e-5;
        let sens = match (at(truth - h), at(truth + h)) {
            (Some(dn), Some(up)) => (up - dn) / (2.0 * h),
            (None, Some(up)) => (up - quote.value) / h,
            (Some(dn), None) => (quote.value - dn) / h,
            (None, None) => 0.0,
        } / quote.value;
        if do_drift {
            drift.record(mu, sens, &implied_drift(&target, &setup, 0.5, &config).unwrap(), 1e-4);
        } else {
            prob.record(
                p,
                sens,
                &implied_up_probability(&target, &setup, 0.08, &config).unwrap(),
                1e-4,
            );
        }
    }

    let detail = format!(
        "{}; {}; {} ({draws} tree draws)",
        vol.summary("sigma x400"),
        drift.summary("mu x200"),
        prob.summary("p x200")
    );
    let failures: Vec<&String> = vol
        .failures
        .iter()
        .chain(&drift.failures)
        .chain(&prob.failures)
        .collect();
    if failures.is_empty() {
        Ok(detail)
    } else {
        Err(format!("{detail}; first failure: {}", failures[0]))
    }
}

fn d(s: &str) -> NaiveDate {
    NaiveDate::parse_from_str(s, "%Y-%m-%d").unwrap()
}

/// 50 rows quoted on 2025-02-13 against spot 100:
/// 31 keep, 8 bids below 0.05, 6 maturities over 350 days, 5 strikes outside [10, 150].
fn fifty_row_chain() -> String {
    let mut rows = vec!["quote_date,expiry_date,strike,bid,ask,mid,vendor_iv".to_string()];
    let q = "2025-02-13";
    for i in 0..31 {
        let iv = if i < 3 {
            0.9 + 0.1 * i as f64
        } else {
            0.15 + 0.005 * i as f64
        };
        rows.push(format!("{q},2025-03-15,{},1.0,1.2,1.1,{iv}", 60 + i));
    }
    for i in 0..8 {
        rows.push(format!("{q},2025-03-15,{},0.01,0.06,0.035,0.3", 80 + i));
    }
    for i in 0..6 {
        rows.push(format!("{q},2026-02-13,{},2.0,2.2,2.1,0.2", 90 + i));
    }
    for strike in [5.0, 9.99, 150.01, 160.0, 200.0] {
        rows.push(format!("{q},2025-03-15,{strike},1.0,1.2,1.1,0.2"));
    }
    rows.join("\n") + "\n"
}

fn data_rules() -> Outcome {
    let load = read_option_chain(fifty_row_chain().as_bytes()).map_err(|e| e.to_string())?;
    if load.quotes.len() != 50 || !load.rejects.is_empty() {
        return Err(format!(
            "fixture parsed to {} quotes, {} rejects",
            load.quotes.len(),
            load.rejects.len()
        ));
    }
    let defaults = clean_quotes(&load.quotes, 100.0, &CleaningRules::default(), None).map_err(|e| e.to_string())?;
    let c = defaults.counts;
    // With 31 survivors the nearest-rank 99th percentile is the maximum, so nothing is capped.
    let expected = (8, 6, 5, 0, 31);
    let got = (
        c.dropped_low_bid,
        c.dropped_maturity,
        c.dropped_strike_band,
        c.winsorized,
        defaults.quotes.len(),
    );
    if got != expected {
        return Err(format!("default rules: got {got:?}, hand count {expected:?}"));
    }
    // At the 90th percentile the rank is ceil(27.9) = 28: the top three vols are capped.
    let tight = CleaningRules {
        winsor_percentile: 0.90,
        ..CleaningRules::default()
    };
    let tight = clean_quotes(&load.quotes, 100.0, &tight, None).map_err(|e| e.to_string())?;
    if tight.counts.winsorized != 3 {
        return Err(format!(
            "90th percentile: {} winsorized, hand count 3",
            tight.counts.winsorized
        ));
    }

    let series = RateSeries::new(
        [("2025-02-03", 0.01), ("2025-02-05", 0.02), ("2025-02-10", 0.03)]
            .iter()
            .map(|(s, r)| (d(s), *r))
            .collect(),
    );
    let required: Vec<NaiveDate> = [
        "2025-02-03",
        "2025-02-04",
        "2025-02-06",
        "2025-02-07",
        "2025-02-08",
        "2025-02-11",
    ]
    .iter()
    .map(|s| d(s))
    .collect();
    let filled = impute_rates(&series, &required).map_err(|e| e.to_string())?;
    // Nearest observed date wins and ties go to the earlier one: 02-04 is a
    // tie and takes 02-03, 02-07 is two days from 02-05 and three from 02-10,
    // 02-08 is two days from 02-10 and three from 02-05.
    let expected = [
        ("2025-02-03", 0.01),
        ("2025-02-04", 0.01),
        ("2025-02-06", 0.02),
        ("2025-02-07", 0.02),
        ("2025-02-08", 0.03),
        ("2025-02-11", 0.03),
    ];
    for (date, rate) in expected {
        if filled.get(d(date)) != Some(rate) {
            return Err(format!("rate on {date}: {:?}, expected {rate}", filled.get(d(date))));
        }
    }
    let logged: Vec<NaiveDate> = filled.imputations.iter().map(|i| i.date).collect();
    if logged != required[1..].to_vec() || filled.len() != required.len() {
        return Err(format!("imputation log {logged:?}"));
    }
    Ok(format!(
        "drops low-bid {} maturity {} band {}, winsorized 0 at p99 and 3 at p90; {} rate fills logged",
        c.dropped_low_bid,
        c.dropped_maturity,
        c.dropped_strike_band,
        logged.len()
    ))
}

fn fixture_dir() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    generate(&SyntheticConfig::default())
        .unwrap()
        .write_to(dir.path())
        .unwrap();
    dir
}

fn fixture_shape() -> Outcome {
    let dir = fixture_dir();
    let paths = SnapshotPaths {
        chain: None,
        closes: dir.path().join("five_day_closes.csv"),
        rates: dir.path().join("rates.csv"),
        calendar: None,
    };
    let snap = build_snapshot(&paths, &SnapshotConfig::default()).map_err(|e| e.to_string())?;
    if snap.equity_close != 6115.07 || snap.asset_value != 1e12 {
        return Err(format!("snapshot S0 {} V0 {}", snap.equity_close, snap.asset_value));
    }
    let axes = GridAxes::new(GridAxes::default_asset_moneyness(), vec![7, 30, 60, 90, 180, 350]).unwrap();
    let config = SurfaceConfig::default();
    let asset = build_surface(&snap, &axes, CalibrationTask::AssetVol, &config, None).map_err(|e| e.to_string())?;
    let rate = snap.risk_free_rate();
    let mut boundary = 0;
    for (row, days) in axes.maturities.iter().enumerate() {
        for (col, m) in axes.moneyness.iter().enumerate() {
            let i = asset.index(row, col);
            let intrinsic = snap.asset_value - m * snap.asset_value * (-rate * *days as f64 / 365.0).exp();
            let at_floor =
                (asset.values[i] - config.calibration.volatility.lo).abs() <= config.calibration.volatility.tol;
            if asset.flags[i].contains(credit_lattice::surfaces::CellFlags::BOUNDARY)
                && at_floor
                && asset.residuals[i] > 0.0
                && intrinsic > snap.equity_close
            {
                boundary += 1;
            }
        }
    }
    let cells = asset.values.len();
    if boundary != cells {
        return Err(format!(
            "{boundary} of {cells} asset-vol cells at the lower bound with positive residual"
        ));
    }

    let tree = SurfaceConfig {
        tree_volatility: Some(0.2),
        ..SurfaceConfig::default()
    };
    let small = GridAxes::new(vec![0.1, 0.5, 0.9], vec![7, 30]).unwrap();
    let up = build_surface(&snap, &small, CalibrationTask::UpProb, &tree, None).map_err(|e| e.to_string())?;
    let down = downside_from_up(&up).map_err(|e| e.to_string())?;
    let finite = up.values.iter().filter(|v| v.is_finite()).count();
    let exact = up
        .values
        .iter()
        .zip(&down.values)
        .all(|(u, dn)| u.is_nan() && dn.is_nan() || u + dn == 1.0);
    ensure(
        exact && finite > 0,
        format!(
            "{cells}/{cells} asset-vol cells hit sigma_min with positive residual; up + downside == 1 on {finite}/{} cells",
            up.values.len()
        ),
    )
}

fn stress_thresholds() -> Outcome {
    use Action::*;
    let probs = [0.85, 0.80, 0.70, 0.60, 0.55];
    let got: Vec<Action> = probs.iter().map(|p| classify_signal(*p).unwrap()).collect();
    ensure(
        got == [Reduce, Hold, Hold, Hold, Increase],
        format!(
            "{probs:?} -> {}",
            got.iter().map(|a| a.as_str()).collect::<Vec<_>>().join(", ")
        ),
    )
}

fn run_cli(dir: &Path, args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_credit-lattice"))
        .current_dir(dir)
        .env_remove("CREDIT_LATTICE_OUTPUT_DIR")
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!("{args:?}: {}", String::from_utf8_lossy(&out.stderr)))
    }
}

fn determinism() -> Outcome {
    let dir = fixture_dir();
    let base = ["--set", "output_dir=out"];
    run_cli(dir.path(), &[&base[..], &["calibrate", "asset-vol"]].concat())?;
    let grid = dir.path().join("out/drift_2025-02-13.grid.csv");
    let mut grids = Vec::new();
    for threads in ["1", "4", "1"] {
        let set = format!("threads={threads}");
        run_cli(
            dir.path(),
            &[&base[..], &["--set", &set, "calibrate", "drift"]].concat(),
        )?;
        grids.push(std::fs::read(&grid).map_err(|e| e.to_string())?);
    }
    let same = grids.windows(2).all(|w| w[0] == w[1]);
    ensure(
        same,
        format!(
            "3 runs (threads 1, 4, 1), {} bytes each, {}",
            grids[0].len(),
            if same { "identical" } else { "differ" }
        ),
    )
}
