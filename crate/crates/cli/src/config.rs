//! Run configuration: a TOML file, overridden by flags.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use bbpim_core::calibrate::CalibrationGrid;
use bbpim_core::{CostParams, DeviceGeometry, ExecMode, LayoutMode, WorkloadConfig};
use serde::{Deserialize, Serialize};

/// Environment variable naming the default output directory.
pub const OUT_DIR_ENV: &str = "BBPIM_OUT_DIR";
pub const DEFAULT_OUT_DIR: &str = "bbpim-out";

/// Data generation settings; the seed comes from [`RunConfig::seed`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorkloadSection {
    pub scale_factor: f64,
    pub base_rows: usize,
    pub zipf_exponent: f64,
    pub tune_records: usize,
}

impl Default for WorkloadSection {
    fn default() -> Self {
        let w = WorkloadConfig::default();
        Self {
            scale_factor: 0.01,
            base_rows: w.base_rows,
            zipf_exponent: w.zipf_exponent,
            tune_records: w.tune_records,
        }
    }
}

/// Everything that determines a run's outputs. Reports embed it verbatim.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Output directory. Falls back to `$BBPIM_OUT_DIR`, then `bbpim-out`.
    pub out_dir: Option<PathBuf>,
    /// Dataset directory; defaults to `<out_dir>/dataset`.
    pub dataset: Option<PathBuf>,
    /// Calibration file; defaults to `<out_dir>/calibration.json`.
    pub models: Option<PathBuf>,
    pub layouts: Vec<LayoutMode>,
    pub modes: Vec<ExecMode>,
    /// Query ids to run; empty runs every query in the dataset.
    pub queries: Vec<String>,
    pub seed: u64,
    /// Worker threads for independent runs; 0 picks the core count.
    pub workers: usize,
    /// Also write each run's event log.
    pub events: bool,
    pub workload: WorkloadSection,
    pub geometry: DeviceGeometry,
    pub params: CostParams,
    pub calibration: CalibrationGrid,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            out_dir: None,
            dataset: None,
            models: None,
            layouts: vec![LayoutMode::OneXb, LayoutMode::TwoXb],
            modes: ExecMode::ALL.to_vec(),
            queries: Vec::new(),
            seed: 42,
            workers: 0,
            events: false,
            workload: WorkloadSection::default(),
            geometry: DeviceGeometry::default(),
            params: CostParams::default(),
            calibration: CalibrationGrid::default(),
        }
    }
}

/// A configuration problem the user can fix.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

impl RunConfig {
    /// Reads `file` (if any), applies `key = value` overrides, then
    /// validates.
    pub fn load(file: Option<&Path>, overrides: &[(String, toml::Value)]) -> Result<Self> {
        let mut table = match file {
            Some(path) => {
                let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
                text.parse::<toml::Table>()
                    .map_err(|e| UsageError(format!("{}: {e}", path.display())))?
            }
            None => toml::Table::new(),
        };
        for (key, value) in overrides {
            set_path(&mut table, key, value.clone())?;
        }
        let cfg: RunConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| UsageError(format!("invalid configuration: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let usage = |e: bbpim_core::Error| UsageError(e.to_string());
        self.geometry.validate().map_err(usage)?;
        self.params.validate().map_err(usage)?;
        self.calibration.validate().map_err(usage)?;
        self.workload_config().validate().map_err(usage)?;
        if self.layouts.is_empty() || self.modes.is_empty() {
            bail!(UsageError("at least one layout and one mode are required".into()));
        }
        Ok(())
    }

    pub fn workload_config(&self) -> WorkloadConfig {
        let w = &self.workload;
        WorkloadConfig {
            scale_factor: w.scale_factor,
            base_rows: w.base_rows,
            seed: self.seed,
            zipf_exponent: w.zipf_exponent,
            tune_records: w.tune_records,
        }
    }

    pub fn out_dir(&self) -> PathBuf {
        self.out_dir
            .clone()
            .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR))
    }

    pub fn dataset_dir(&self) -> PathBuf {
        self.dataset.clone().unwrap_or_else(|| self.out_dir().join("dataset"))
    }

    pub fn queries_dir(&self) -> PathBuf {
        self.dataset_dir().join("queries")
    }

    pub fn models_path(&self) -> PathBuf {
        self.models.clone().unwrap_or_else(|| self.out_dir().join("calibration.json"))
    }
}

/// Sets a dotted key such as `params.t_host_read_ns` in a TOML table.
fn set_path(table: &mut toml::Table, key: &str, value: toml::Value) -> Result<()> {
    let mut parts: Vec<&str> = key.split('.').collect();
    let last = parts.pop().filter(|s| !s.is_empty()).ok_or_else(|| UsageError(format!("empty key in '{key}'")))?;
    let mut cur = table;
    for p in parts {
        let entry = cur.entry(p.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry.as_table_mut().ok_or_else(|| UsageError(format!("'{p}' in '{key}' is not a section")))?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}

/// Parses `key=value`, reading the value as TOML and falling back to a
/// bare string.
pub fn parse_override(s: &str) -> Result<(String, toml::Value), String> {
    let (k, v) = s.split_once('=').ok_or_else(|| format!("expected key=value, got '{s}'"))?;
    let v = v.trim();
    let value = format!("v = {v}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(v.to_string()));
    Ok((k.trim().to_string(), value))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let cfg = RunConfig::default();
        let text = toml::to_string(&cfg).unwrap();
        let back: RunConfig = toml::from_str(&text).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn overrides_win_over_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        fs::write(&path, "seed = 5\nlayouts = [\"two-xb\"]\n[params]\nt_host_read_ns = 80.0\n").unwrap();
        let ov = vec![parse_override("params.t_host_read_ns=90").unwrap(), parse_override("modes=[\"host-only\"]").unwrap()];
        let cfg = RunConfig::load(Some(&path), &ov).unwrap();
        assert_eq!(cfg.seed, 5);
        assert_eq!(cfg.layouts, vec![LayoutMode::TwoXb]);
        assert_eq!(cfg.modes, vec![ExecMode::HostOnly]);
        assert_eq!(cfg.params.t_host_read_ns, 90.0);
    }

    #[test]
    fn bad_config_is_a_usage_error() {
        let ov = vec![parse_override("no_such_key=1").unwrap()];
        let err = RunConfig::load(None, &ov).unwrap_err();
        assert!(err.downcast_ref::<UsageError>().is_some());
        let ov = vec![parse_override("workload.scale_factor=-1").unwrap()];
        assert!(RunConfig::load(None, &ov).unwrap_err().downcast_ref::<UsageError>().is_some());
    }

    #[test]
    fn bare_strings_are_accepted() {
        assert_eq!(parse_override("out_dir=/tmp/x").unwrap().1, toml::Value::String("/tmp/x".into()));
        assert_eq!(parse_override("seed=3").unwrap().1, toml::Value::Integer(3));
    }
}
