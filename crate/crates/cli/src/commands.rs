use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use chrono::NaiveDate;
use credit_lattice::market_data::{build_snapshot, MarketSnapshot};
use credit_lattice::stress::{signal_series, signals_to_text};
use credit_lattice::surfaces::{
    build_surface, diff_surface, downside_from_up, export_surface, load_records, relative_diff_surface,
    CalibrationTask, ExportFormat, GridAxes, SurfaceGrid, SurfaceKind,
};
use credit_lattice::synthetic::{generate, SyntheticConfig};
use credit_lattice::Error;
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::{CliError, Format, SurfaceOp, Task};

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Core(Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))
}

fn write_file(path: &Path, body: &str) -> Result<(), CliError> {
    std::fs::write(path, body).map_err(|e| io_err(path, e))
}

fn sha256_hex(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}

pub fn synthesize(config: &RunConfig, seed: u64) -> Result<(), CliError> {
    let fixture = generate(&SyntheticConfig {
        seed,
        ..SyntheticConfig::default()
    })?;
    let dir = config.output_dir();
    fixture.write_to(&dir)?;
    for name in fixture.files.keys() {
        println!("{}", dir.join(name).display());
    }
    Ok(())
}

fn load_snapshot(config: &RunConfig) -> Result<MarketSnapshot, CliError> {
    Ok(build_snapshot(&config.snapshot_paths(), &config.snapshot_config()?)?)
}

pub fn ingest(config: &RunConfig) -> Result<(), CliError> {
    let snap = load_snapshot(config)?;
    let mut out = String::new();
    let _ = writeln!(out, "as_of={}", snap.as_of);
    let _ = writeln!(out, "equity_close={}", snap.equity_close);
    let _ = writeln!(out, "asset_value={}", snap.asset_value);
    let _ = writeln!(out, "rate={}", snap.risk_free_rate());
    for (d, c) in &snap.close_history {
        let _ = writeln!(out, "close.{d}={c}");
    }
    for d in &snap.excluded_dates {
        let _ = writeln!(out, "excluded_close={d}");
    }
    for imp in &snap.rates.imputations {
        let _ = writeln!(out, "rate_imputed={} from {}", imp.date, imp.source);
    }
    let c = &snap.cleaning;
    let _ = writeln!(out, "quotes_input={}", c.input);
    let _ = writeln!(out, "dropped_expired={}", c.dropped_expired);
    let _ = writeln!(out, "dropped_low_bid={}", c.dropped_low_bid);
    let _ = writeln!(out, "dropped_maturity={}", c.dropped_maturity);
    let _ = writeln!(out, "dropped_strike_band={}", c.dropped_strike_band);
    let _ = writeln!(out, "winsorized={}", c.winsorized);
    let _ = writeln!(out, "expiries_snapped={}", c.expiries_snapped);
    let _ = writeln!(out, "quotes_kept={}", snap.quotes.len());
    for r in &snap.chain_rejects {
        let _ = writeln!(out, "reject={r}");
    }
    for w in &snap.warnings {
        let _ = writeln!(out, "warning={w}");
    }
    let dir = config.output_dir();
    ensure_dir(&dir)?;
    let path = dir.join(format!("snapshot_{}.txt", snap.as_of));
    write_file(&path, &out)?;
    println!("{}", path.display());
    Ok(())
}

fn stem(kind: SurfaceKind, as_of: NaiveDate) -> String {
    format!("{}_{as_of}", kind.as_str().to_ascii_lowercase())
}

/// Writes grid, records and (optionally) heatmap files; returns their paths.
fn write_surface(dir: &Path, stem: &str, surface: &SurfaceGrid, heatmap: bool) -> Result<Vec<PathBuf>, CliError> {
    let mut formats = vec![ExportFormat::GridText, ExportFormat::RecordsText];
    if heatmap {
        formats.push(ExportFormat::HeatmapImage);
    }
    let mut paths = Vec::new();
    for f in formats {
        let path = dir.join(format!("{stem}.{}", f.extension()));
        export_surface(surface, f, &path)?;
        paths.push(path);
    }
    Ok(paths)
}

pub fn calibrate(config: &RunConfig, task: Task) -> Result<(), CliError> {
    let started = Instant::now();
    let snap = load_snapshot(config)?;
    let loaded_ms = started.elapsed().as_millis();
    let surface_config = config.surface_config()?;
    let dir = config.output_dir();

    let task = match task {
        Task::AssetVol => CalibrationTask::AssetVol,
        Task::EquityVol => CalibrationTask::EquityVol,
        Task::Drift => CalibrationTask::Drift,
        Task::Prob => CalibrationTask::UpProb,
    };
    let moneyness = match task {
        CalibrationTask::EquityVol => config.equity_moneyness()?,
        _ => config.asset_moneyness()?,
    };
    let maturities = match config.explicit_maturities()? {
        Some(m) => m,
        None => GridAxes::snapshot_maturities(&snap, config.max_maturity_days()?),
    };
    if maturities.is_empty() {
        return Err(CliError::Core(Error::InvalidInput(
            "no maturities: the cleaned chain is empty and `maturities` is auto".into(),
        )));
    }
    let axes = GridAxes::new(moneyness, maturities)?;

    let mut inputs = config.input_files();
    let needs_vol = matches!(task, CalibrationTask::Drift | CalibrationTask::UpProb);
    let asset_vol = if needs_vol && surface_config.tree_volatility.is_none() {
        let path = dir.join(format!("{}.records.csv", stem(SurfaceKind::AssetVol, snap.as_of)));
        if !path.exists() {
            return Err(CliError::Core(Error::Dependency(format!(
                "{} needs {}; run `calibrate asset-vol` first or set tree_volatility",
                task.kind(),
                path.display()
            ))));
        }
        inputs.push(path.clone());
        Some(load_records(&path)?)
    } else {
        None
    };

    let mut surface = build_surface(&snap, &axes, task, &surface_config, asset_vol.as_ref())?;
    surface.metadata.extend(config.echo_pairs());
    let calibrated_ms = started.elapsed().as_millis();

    ensure_dir(&dir)?;
    let heatmap = config.heatmap()?;
    let mut outputs = write_surface(&dir, &stem(surface.kind, snap.as_of), &surface, heatmap)?;
    if task == CalibrationTask::UpProb {
        let mut down = downside_from_up(&surface)?;
        down.metadata
            .insert("source".into(), SurfaceKind::UpProb.as_str().into());
        outputs.extend(write_surface(&dir, &stem(down.kind, snap.as_of), &down, heatmap)?);
    }

    let manifest = manifest(
        &format!("calibrate {}", task.kind()),
        snap.as_of,
        &inputs,
        &outputs,
        config,
        &[
            ("load_ms", loaded_ms),
            ("calibrate_ms", calibrated_ms),
            ("total_ms", started.elapsed().as_millis()),
        ],
    )?;
    let manifest_path = dir.join(format!("{}.manifest.txt", stem(surface.kind, snap.as_of)));
    write_file(&manifest_path, &manifest)?;
    outputs.push(manifest_path);
    for p in outputs {
        println!("{}", p.display());
    }
    Ok(())
}

fn manifest(
    command: &str,
    as_of: NaiveDate,
    inputs: &[PathBuf],
    outputs: &[PathBuf],
    config: &RunConfig,
    timings: &[(&str, u128)],
) -> Result<String, CliError> {
    let mut combined = Sha256::new();
    let mut lines = String::new();
    for path in inputs {
        let bytes = std::fs::read(path).map_err(|e| io_err(path, e))?;
        combined.update((bytes.len() as u64).to_le_bytes());
        combined.update(&bytes);
        let _ = writeln!(lines, "input {} {}", sha256_hex(&bytes), path.display());
    }
    for path in outputs {
        let bytes = std::fs::read(path).map_err(|e| io_err(path, e))?;
        let _ = writeln!(lines, "output {} {}", sha256_hex(&bytes), path.display());
    }
    let mut out = String::new();
    let _ = writeln!(out, "command={command}");
    let _ = writeln!(out, "as_of={as_of}");
    let _ = writeln!(out, "inputs_sha256={:x}", combined.finalize());
    out.push_str(&lines);
    for (k, ms) in timings {
        let _ = writeln!(out, "timing.{k}={ms}");
    }
    out.push_str("[config]\n");
    out.push_str(&config.echo());
    Ok(out)
}

pub fn surface(config: &RunConfig, op: SurfaceOp, a: &Path, b: &Path, name: Option<&str>) -> Result<(), CliError> {
    let (sa, sb) = (load_records(a)?, load_records(b)?);
    let mut out = match op {
        SurfaceOp::Diff => diff_surface(&sa, &sb)?,
        SurfaceOp::Reldiff => relative_diff_surface(&sa, &sb)?,
    };
    for (k, v) in &sa.metadata {
        if k == "as_of" {
            out.metadata.insert(k.clone(), v.clone());
        }
    }
    out.metadata.insert("minuend_file".into(), a.display().to_string());
    out.metadata.insert("subtrahend_file".into(), b.display().to_string());
    let default_name = out.kind.as_str().to_ascii_lowercase();
    let dir = config.output_dir();
    ensure_dir(&dir)?;
    for p in write_surface(&dir, name.unwrap_or(&default_name), &out, config.heatmap()?)? {
        println!("{}", p.display());
    }
    Ok(())
}

pub fn stress(config: &RunConfig, files: &[PathBuf]) -> Result<(), CliError> {
    let dir = config.output_dir();
    let files: Vec<PathBuf> = if files.is_empty() {
        let mut found: Vec<PathBuf> = std::fs::read_dir(&dir)
            .map_err(|e| io_err(&dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| {
                p.file_name()
                    .and_then(|n| n.to_str())
                    .is_some_and(|n| n.starts_with("downside_prob_") && n.ends_with(".records.csv"))
            })
            .collect();
        found.sort();
        found
    } else {
        files.to_vec()
    };
    if files.is_empty() {
        return Err(CliError::Core(Error::Dependency(format!(
            "no DOWNSIDE_PROB surfaces in {}; run `calibrate prob` first",
            dir.display()
        ))));
    }
    let mut dated = Vec::new();
    for path in &files {
        let surface = load_records(path)?;
        let as_of = surface
            .metadata
            .get("as_of")
            .and_then(|s| NaiveDate::parse_from_str(s, "%Y-%m-%d").ok())
            .ok_or_else(|| Error::Schema(format!("{}: missing `# as_of=` header", path.display())))?;
        dated.push((as_of, surface));
    }
    let coord = config.stress_coordinate()?;
    let signals = signal_series(&dated, coord)?;
    ensure_dir(&dir)?;
    let path = dir.join("stress_signals.csv");
    write_file(&path, &signals_to_text(&signals, coord))?;
    println!("{}", path.display());
    Ok(())
}

pub fn export(input: &Path, format: Format, out: &Path) -> Result<(), CliError> {
    let surface = load_records(input)?;
    let format = match format {
        Format::Grid => ExportFormat::GridText,
        Format::Records => ExportFormat::RecordsText,
        Format::Svg => ExportFormat::HeatmapImage,
    };
    export_surface(&surface, format, out)?;
    println!("{}", out.display());
    Ok(())
}
