//! The four subcommands as library functions.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use bbpim_core::calibrate::{calibrate, CalibrationGrid};
use bbpim_core::planner::{Measurements, ModelTables};
use bbpim_core::relation::Catalog;
use bbpim_core::workload::{instantiate_all, write_queries};
use bbpim_core::{CostParams, DeviceGeometry, ExecMode, LayoutMode, Query, Relation, Session};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{RunConfig, UsageError};
use crate::report::{Report, ReportRow, Table};

/// Fitted models plus what they were measured with.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationFile {
    pub grid: CalibrationGrid,
    pub geometry: DeviceGeometry,
    pub params: CostParams,
    pub tables: Vec<ModelTables>,
    pub measurements: Vec<Measurements>,
}

impl CalibrationFile {
    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| {
            UsageError(format!("cannot read calibration {}: {e} (run `bbpim calibrate` first)", path.display()))
        })?;
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }

    pub fn tables_for(&self, layout: LayoutMode) -> Option<&ModelTables> {
        self.tables.iter().find(|t| t.layout == layout)
    }
}

/// Per-template summary written next to the queries.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuerySummary {
    pub id: String,
    pub target: f64,
    pub selectivity: f64,
    pub selected: u64,
    pub k_max: usize,
    pub degenerate: bool,
}

fn pool(workers: usize) -> Result<rayon::ThreadPool> {
    Ok(rayon::ThreadPoolBuilder::new().num_threads(workers).build()?)
}

pub fn generate(cfg: &RunConfig) -> Result<Vec<QuerySummary>> {
    let wl = cfg.workload_config();
    let rel = bbpim_core::workload::generate(&wl)?;
    let dir = cfg.dataset_dir();
    rel.write(&dir)?;
    let instances = instantiate_all(&rel, &wl)?;
    write_queries(&cfg.queries_dir(), &instances, &rel.catalog)?;
    let summary: Vec<QuerySummary> = instances
        .iter()
        .map(|i| QuerySummary {
            id: i.query.id.clone(),
            target: i.target,
            selectivity: i.selectivity,
            selected: i.selected,
            k_max: i.k_max,
            degenerate: i.degenerate,
        })
        .collect();
    let json = serde_json::to_string_pretty(&summary)? + "\n";
    fs::write(cfg.queries_dir().join("queries.json"), json).context("writing queries.json")?;
    Ok(summary)
}

pub fn calibrate_models(cfg: &RunConfig) -> Result<CalibrationFile> {
    let fitted = pool(cfg.workers)?.install(|| {
        cfg.layouts
            .par_iter()
            .map(|&l| calibrate(&cfg.calibration, &[l], &cfg.geometry, &cfg.params))
            .collect::<bbpim_core::Result<Vec<_>>>()
    })?;
    let (mut tables, mut measurements) = (Vec::new(), Vec::new());
    for map in fitted {
        for (_, (m, t)) in map {
            measurements.push(m);
            tables.push(t);
        }
    }
    let file = CalibrationFile {
        grid: cfg.calibration.clone(),
        geometry: cfg.geometry.clone(),
        params: cfg.params.clone(),
        tables,
        measurements,
    };
    let path = cfg.models_path();
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(&path, serde_json::to_string_pretty(&file)? + "\n").with_context(|| format!("writing {}", path.display()))?;
    Ok(file)
}

/// Parses every `*.qry` file of `dir` (sorted by name), keeping `ids` if
/// non-empty.
pub fn load_queries(dir: &Path, catalog: &Catalog, ids: &[String]) -> Result<Vec<Query>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| UsageError(format!("cannot read query directory {}: {e}", dir.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "qry"))
        .collect();
    paths.sort();
    let mut out = Vec::new();
    for p in paths {
        let text = fs::read_to_string(&p).with_context(|| format!("reading {}", p.display()))?;
        let q = Query::parse(&text, catalog).with_context(|| format!("in {}", p.display()))?;
        if ids.is_empty() || ids.contains(&q.id) {
            out.push(q);
        }
    }
    if let Some(missing) = ids.iter().find(|id| !out.iter().any(|q| &q.id == *id)) {
        bail!(UsageError(format!("query '{missing}' not found in {}", dir.display())));
    }
    Ok(out)
}

/// Runs every (layout, query, mode) combination, each on a fresh copy of
/// the loaded device.
pub fn run(cfg: &RunConfig) -> Result<Report> {
    let rel = Relation::read(&cfg.dataset_dir())?;
    let queries = load_queries(&cfg.queries_dir(), &rel.catalog, &cfg.queries)?;
    let calibration = if cfg.modes.iter().any(|m| m.needs_models()) {
        let file = CalibrationFile::read(&cfg.models_path())?;
        if file.geometry != cfg.geometry || file.params != cfg.params {
            bail!(UsageError("calibration was measured with other device parameters; rerun `bbpim calibrate`".into()));
        }
        Some(file)
    } else {
        None
    };
    let mut sessions = BTreeMap::new();
    for &l in &cfg.layouts {
        sessions.insert(l, Session::new(&rel, l, cfg.geometry.clone(), cfg.params.clone())?);
    }
    let jobs: Vec<(LayoutMode, &Query, ExecMode)> = cfg
        .layouts
        .iter()
        .flat_map(|&l| queries.iter().flat_map(move |q| cfg.modes.iter().map(move |&m| (l, q, m))))
        .collect();
    let results = pool(cfg.workers)?.install(|| {
        jobs.par_iter()
            .map(|&(layout, q, mode)| -> Result<(ReportRow, Option<String>)> {
                let mut s = sessions[&layout].clone();
                let models = calibration.as_ref().and_then(|c| c.tables_for(layout));
                let run = s.run_query(q, mode, models).with_context(|| format!("{} {} {}", q.id, mode.name(), layout.name()))?;
                let row = ReportRow {
                    query: q.id.clone(),
                    mode: mode.name().into(),
                    layout: layout.name().into(),
                    k: run.k,
                    k_max: run.k_max,
                    selectivity: run.selectivity(),
                    latency_s: run.report.total_latency,
                    energy_j: run.report.pim_energy,
                    peak_power_w: run.report.peak_power,
                    max_row_writes: run.report.max_row_writes,
                    endurance_10y: run.report.required_endurance_10y,
                    groups: run.groups.len(),
                    data_line_reads: run.report.data_line_reads,
                };
                let events = if cfg.events {
                    let mut buf = Vec::new();
                    s.device.ledger().write_events_csv(&mut buf)?;
                    Some(String::from_utf8(buf)?)
                } else {
                    None
                };
                Ok((row, events))
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let out = cfg.out_dir();
    let mut rows = Vec::with_capacity(results.len());
    for (row, events) in results {
        if let Some(csv) = events {
            let dir = out.join("events");
            fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
            fs::write(dir.join(format!("{}_{}_{}.csv", row.layout, row.mode, row.query)), csv)?;
        }
        rows.push(row);
    }
    let report = Report::new(cfg.clone(), rows);
    report.write(&out)?;
    Ok(report)
}

/// Writes per-metric tables from `<out>/report.json`.
pub fn report(cfg: &RunConfig) -> Result<BTreeMap<&'static str, Table>> {
    let out = cfg.out_dir();
    let path = out.join("report.json");
    if !path.exists() {
        bail!(UsageError(format!("{} not found (run `bbpim run` first)", path.display())));
    }
    let rep = Report::read(&path)?;
    let tables = rep.tables();
    let dir = out.join("tables");
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    for (name, t) in &tables {
        fs::write(dir.join(format!("{name}.csv")), t.to_csv())?;
    }
    fs::write(dir.join("tables.json"), serde_json::to_string_pretty(&tables)? + "\n")?;
    Ok(tables)
}
