//! Flat `key = value` run configuration.
//!
//! Values come from defaults, then an optional file, then the
//! `CREDIT_LATTICE_OUTPUT_DIR` environment variable, then `--set` flags.
//! [`RunConfig::echo`] renders every key in a fixed order; that text goes into
//! each output header and the run manifest.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use credit_lattice::binomial::ReturnMode;
use credit_lattice::calibration::{Bounds, CalibrationConfig};
use credit_lattice::market_data::{CleaningRules, SnapshotConfig, SnapshotPaths};
use credit_lattice::stress::Coordinate;
use credit_lattice::surfaces::{GridAxes, SurfaceConfig};

use crate::CliError;

pub const OUTPUT_DIR_ENV: &str = "CREDIT_LATTICE_OUTPUT_DIR";

/// Every recognised key with its default. Order is the echo order.
const DEFAULTS: &[(&str, &str)] = &[
    ("chain", "chain.csv"),
    ("closes", "closes.csv"),
    ("rates", "rates.csv"),
    ("calendar", "calendar.txt"),
    ("output_dir", "out"),
    ("as_of", "latest"),
    ("asset_value", "1e12"),
    ("window", "5"),
    ("min_bid", "0.05"),
    ("max_maturity_days", "350"),
    ("strike_band_lo", "0.10"),
    ("strike_band_hi", "1.50"),
    ("winsor_percentile", "0.99"),
    ("asset_moneyness", "0.01:0.90:0.01"),
    ("equity_moneyness", "0.05:1.50:0.05"),
    ("maturities", "auto"),
    ("fixed_drift", "0.08"),
    ("fixed_up_probability", "0.5"),
    ("vol_lookup_moneyness", "0.01"),
    ("tree_volatility", "none"),
    ("tree_mode", "LOG"),
    ("steps_per_day", "1"),
    ("vol_lo", "1e-4"),
    ("vol_hi", "5"),
    ("vol_tol", "1e-8"),
    ("drift_lo", "-5"),
    ("drift_hi", "5"),
    ("drift_tol", "1e-6"),
    ("prob_lo", "0.01"),
    ("prob_hi", "0.99"),
    ("prob_tol", "1e-6"),
    ("scan_points", "64"),
    ("threads", "0"),
    ("heatmap", "true"),
    ("stress_moneyness", "0.9"),
    ("stress_maturity_days", "30"),
];

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    values: BTreeMap<String, String>,
    /// Directory relative input paths are resolved against.
    base_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            values: DEFAULTS.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect(),
            base_dir: PathBuf::from("."),
        }
    }
}

impl RunConfig {
    /// Defaults, then `file`, then the environment, then `overrides`.
    pub fn resolve(file: Option<&Path>, overrides: &[String]) -> Result<Self, CliError> {
        let mut config = Self::default();
        if let Some(path) = file {
            let text = std::fs::read_to_string(path).map_err(|e| {
                CliError::Core(credit_lattice::Error::Io {
                    path: path.into(),
                    source: e,
                })
            })?;
            config.apply_text(&text)?;
            if let Some(dir) = path.parent() {
                config.base_dir = dir.to_path_buf();
            }
        }
        if let Ok(dir) = std::env::var(OUTPUT_DIR_ENV) {
            if !dir.is_empty() {
                config.set("output_dir", &dir)?;
            }
        }
        for item in overrides {
            let (k, v) = item
                .split_once('=')
                .ok_or_else(|| CliError::Usage(format!("--set expects key=value, got `{item}`")))?;
            config.set(k.trim(), v.trim())?;
        }
        config.validate()?;
        Ok(config)
    }

    pub fn apply_text(&mut self, text: &str) -> Result<(), CliError> {
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| CliError::Usage(format!("config line {}: expected key = value", n + 1)))?;
            self.set(k.trim(), v.trim())?;
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        match self.values.get_mut(key) {
            Some(slot) => {
                *slot = value.to_string();
                Ok(())
            }
            None => Err(CliError::Usage(format!("unknown config key `{key}`"))),
        }
    }

    pub fn get(&self, key: &str) -> &str {
        self.values
            .get(key)
            .map(String::as_str)
            .expect("every key has a default")
    }

    fn num<T: std::str::FromStr>(&self, key: &str) -> Result<T, CliError> {
        self.get(key)
            .parse()
            .map_err(|_| CliError::Usage(format!("config `{key}`: cannot parse `{}`", self.get(key))))
    }

    /// All keys in schema order, one `key=value` per line.
    pub fn echo(&self) -> String {
        DEFAULTS.iter().map(|(k, _)| format!("{k}={}\n", self.get(k))).collect()
    }

    /// Header echo for surface files. `threads` only changes scheduling, not
    /// results, so it is left to the manifest and the surfaces stay
    /// byte-identical across thread counts.
    pub fn echo_pairs(&self) -> Vec<(String, String)> {
        DEFAULTS
            .iter()
            .filter(|(k, _)| *k != "threads")
            .map(|(k, _)| (format!("config.{k}"), self.get(k).to_string()))
            .collect()
    }

    /// Parses every typed value once so bad input fails before any work.
    pub fn validate(&self) -> Result<(), CliError> {
        self.snapshot_config()?;
        self.surface_config()?;
        self.asset_moneyness()?;
        self.equity_moneyness()?;
        self.explicit_maturities()?;
        self.threads()?;
        self.heatmap()?;
        self.stress_coordinate()?;
        Ok(())
    }

    fn path(&self, key: &str) -> PathBuf {
        let p = PathBuf::from(self.get(key));
        if p.is_absolute() {
            p
        } else {
            self.base_dir.join(p)
        }
    }

    fn optional_path(&self, key: &str) -> Option<PathBuf> {
        match self.get(key) {
            "" | "none" => None,
            _ => Some(self.path(key)),
        }
    }

    pub fn output_dir(&self) -> PathBuf {
        PathBuf::from(self.get("output_dir"))
    }

    pub fn snapshot_paths(&self) -> SnapshotPaths {
        SnapshotPaths {
            chain: self.optional_path("chain"),
            closes: self.path("closes"),
            rates: self.path("rates"),
            calendar: self.optional_path("calendar"),
        }
    }

    /// Files whose bytes feed a calibration, in a fixed order.
    pub fn input_files(&self) -> Vec<PathBuf> {
        let p = self.snapshot_paths();
        let mut files = vec![p.closes, p.rates];
        files.extend(p.chain);
        files.extend(p.calendar);
        files
    }

    pub fn as_of(&self) -> Result<Option<NaiveDate>, CliError> {
        match self.get("as_of") {
            "latest" | "" => Ok(None),
            s => NaiveDate::parse_from_str(s, "%Y-%m-%d")
                .map(Some)
                .map_err(|_| CliError::Usage(format!("config `as_of`: expected YYYY-MM-DD, got `{s}`"))),
        }
    }

    pub fn snapshot_config(&self) -> Result<SnapshotConfig, CliError> {
        Ok(SnapshotConfig {
            window_len: self.num("window")?,
            asset_value: self.num("asset_value")?,
            as_of: self.as_of()?,
            rules: CleaningRules {
                min_bid: self.num("min_bid")?,
                max_maturity_days: self.num("max_maturity_days")?,
                strike_band: (self.num("strike_band_lo")?, self.num("strike_band_hi")?),
                winsor_percentile: self.num("winsor_percentile")?,
            },
        })
    }

    fn bounds(&self, prefix: &str) -> Result<Bounds, CliError> {
        Ok(Bounds {
            lo: self.num(&format!("{prefix}_lo"))?,
            hi: self.num(&format!("{prefix}_hi"))?,
            tol: self.num(&format!("{prefix}_tol"))?,
        })
    }

    pub fn surface_config(&self) -> Result<SurfaceConfig, CliError> {
        let tree_volatility = match self.get("tree_volatility") {
            "none" | "" => None,
            _ => Some(self.num("tree_volatility")?),
        };
        let tree_mode: ReturnMode = self
            .get("tree_mode")
            .parse()
            .map_err(|_| CliError::Usage("config `tree_mode`: expected LOG or ARITHMETIC".to_string()))?;
        Ok(SurfaceConfig {
            calibration: CalibrationConfig {
                volatility: self.bounds("vol")?,
                drift: self.bounds("drift")?,
                up_probability: self.bounds("prob")?,
                scan_points: self.num("scan_points")?,
            },
            fixed_drift: self.num("fixed_drift")?,
            fixed_up_probability: self.num("fixed_up_probability")?,
            vol_lookup_moneyness: self.num("vol_lookup_moneyness")?,
            tree_volatility,
            tree_mode,
            steps_per_day: self.num("steps_per_day")?,
        })
    }

    fn moneyness(&self, key: &str) -> Result<Vec<f64>, CliError> {
        let raw = self.get(key);
        let bad = || CliError::Usage(format!("config `{key}`: expected start:end:step or a comma list"));
        let parts: Vec<&str> = raw.split(':').collect();
        if parts.len() == 3 {
            let n: Vec<f64> = parts
                .iter()
                .map(|p| p.trim().parse())
                .collect::<Result<_, _>>()
                .map_err(|_| bad())?;
            if !(n[2] > 0.0) {
                return Err(bad());
            }
            return Ok(GridAxes::moneyness_range(n[0], n[1], n[2]));
        }
        raw.split(',').map(|p| p.trim().parse().map_err(|_| bad())).collect()
    }

    pub fn asset_moneyness(&self) -> Result<Vec<f64>, CliError> {
        self.moneyness("asset_moneyness")
    }

    pub fn equity_moneyness(&self) -> Result<Vec<f64>, CliError> {
        self.moneyness("equity_moneyness")
    }

    /// `None` means take the maturities from the cleaned chain.
    pub fn explicit_maturities(&self) -> Result<Option<Vec<u32>>, CliError> {
        match self.get("maturities") {
            "auto" | "" => Ok(None),
            raw => raw
                .split(',')
                .map(|p| {
                    p.trim()
                        .parse()
                        .map_err(|_| CliError::Usage(format!("config `maturities`: bad day count `{p}`")))
                })
                .collect::<Result<Vec<u32>, _>>()
                .map(Some),
        }
    }

    pub fn max_maturity_days(&self) -> Result<u32, CliError> {
        self.num("max_maturity_days")
    }

    pub fn threads(&self) -> Result<usize, CliError> {
        self.num("threads")
    }

    pub fn heatmap(&self) -> Result<bool, CliError> {
        self.num("heatmap")
    }

    pub fn stress_coordinate(&self) -> Result<Coordinate, CliError> {
        Ok(Coordinate {
            moneyness: self.num("stress_moneyness")?,
            maturity_days: self.num("stress_maturity_days")?,
        })
    }
}
