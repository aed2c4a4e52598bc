//! Report rows, geo-mean summaries and the per-metric tables.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;

/// One (query, mode, layout) run. Seconds, joules, watts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub query: String,
    pub mode: String,
    pub layout: String,
    pub k: usize,
    pub k_max: usize,
    pub selectivity: f64,
    pub latency_s: f64,
    pub energy_j: f64,
    pub peak_power_w: f64,
    pub max_row_writes: u64,
    /// Writes per cell needed to run this query back to back for ten years.
    pub endurance_10y: f64,
    pub groups: usize,
    pub data_line_reads: u64,
}

/// Geo-means over the queries of one (mode, layout).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeoMeanRow {
    pub mode: String,
    pub layout: String,
    pub latency_s: Option<f64>,
    pub energy_j: Option<f64>,
    pub peak_power_w: Option<f64>,
    pub endurance_10y: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub config: RunConfig,
    pub rows: Vec<ReportRow>,
    pub geomean: Vec<GeoMeanRow>,
}

/// `exp(mean(ln x))` over the strictly positive entries; `None` if there
/// are none.
pub fn geo_mean(values: impl IntoIterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.into_iter().filter(|v| *v > 0.0 && v.is_finite()).fold((0.0, 0usize), |(s, n), v| (s + v.ln(), n + 1));
    (n > 0).then(|| (sum / n as f64).exp())
}

pub fn geo_means(rows: &[ReportRow]) -> Vec<GeoMeanRow> {
    let mut by: BTreeMap<(String, String), Vec<&ReportRow>> = BTreeMap::new();
    for r in rows {
        by.entry((r.layout.clone(), r.mode.clone())).or_default().push(r);
    }
    by.into_iter()
        .map(|((layout, mode), rs)| GeoMeanRow {
            latency_s: geo_mean(rs.iter().map(|r| r.latency_s)),
            energy_j: geo_mean(rs.iter().map(|r| r.energy_j)),
            peak_power_w: geo_mean(rs.iter().map(|r| r.peak_power_w)),
            endurance_10y: geo_mean(rs.iter().map(|r| r.endurance_10y)),
            mode,
            layout,
        })
        .collect()
}

type Metric = fn(&ReportRow) -> f64;

pub const CSV_HEADER: &str = "query,mode,layout,k,k_max,selectivity,latency_s,energy_j,peak_power_w,max_row_writes,endurance_10y_writes_per_cell,groups,data_line_reads";

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl Report {
    pub fn new(config: RunConfig, rows: Vec<ReportRow>) -> Self {
        let geomean = geo_means(&rows);
        Self { config, rows, geomean }
    }

    /// Per-run rows followed by one `geomean` row per (mode, layout).
    pub fn to_csv(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{},{},{}",
                r.query,
                r.mode,
                r.layout,
                r.k,
                r.k_max,
                r.selectivity,
                r.latency_s,
                r.energy_j,
                r.peak_power_w,
                r.max_row_writes,
                r.endurance_10y,
                r.groups,
                r.data_line_reads
            );
        }
        for g in &self.geomean {
            let _ = writeln!(
                out,
                "geomean,{},{},,,,{},{},{},,{},,",
                g.mode,
                g.layout,
                opt(g.latency_s),
                opt(g.energy_j),
                opt(g.peak_power_w),
                opt(g.endurance_10y)
            );
        }
        out
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let json = serde_json::to_string_pretty(self)? + "\n";
        fs::write(dir.join("report.json"), json).context("writing report.json")?;
        fs::write(dir.join("report.csv"), self.to_csv()).context("writing report.csv")?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }

    /// One table per metric: queries down, `layout/mode` across.
    pub fn tables(&self) -> BTreeMap<&'static str, Table> {
        let metrics: [(&'static str, Metric); 4] = [
            ("latency_s", |r| r.latency_s),
            ("energy_j", |r| r.energy_j),
            ("peak_power_w", |r| r.peak_power_w),
            ("endurance_10y", |r| r.endurance_10y),
        ];
        let mut columns: Vec<String> = Vec::new();
        let mut queries: Vec<String> = Vec::new();
        for r in &self.rows {
            let c = format!("{}/{}", r.layout, r.mode);
            if !columns.contains(&c) {
                columns.push(c);
            }
            if !queries.contains(&r.query) {
                queries.push(r.query.clone());
            }
        }
        metrics
            .into_iter()
            .map(|(name, f)| {
                let mut cells = vec![vec![None; columns.len()]; queries.len()];
                for r in &self.rows {
                    let qi = queries.iter().position(|q| *q == r.query).unwrap();
                    let ci = columns.iter().position(|c| *c == format!("{}/{}", r.layout, r.mode)).unwrap();
                    cells[qi][ci] = Some(f(r));
                }
                let geomean = (0..columns.len()).map(|c| geo_mean(cells.iter().filter_map(|row| row[c]))).collect();
                (name, Table { columns: columns.clone(), queries: queries.clone(), cells, geomean })
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Table {
    pub columns: Vec<String>,
    pub queries: Vec<String>,
    pub cells: Vec<Vec<Option<f64>>>,
    pub geomean: Vec<Option<f64>>,
}

impl Table {
    pub fn to_csv(&self) -> String {
        let mut out = format!("query,{}\n", self.columns.join(","));
        for (q, row) in self.queries.iter().zip(&self.cells) {
            let cells: Vec<String> = row.iter().map(|c| opt(*c)).collect();
            let _ = writeln!(out, "{q},{}", cells.join(","));
        }
        let g: Vec<String> = self.geomean.iter().map(|c| opt(*c)).collect();
        let _ = writeln!(out, "geomean,{}", g.join(","));
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(q: &str, mode: &str, latency_s: f64) -> ReportRow {
        ReportRow {
            query: q.into(),
            mode: mode.into(),
            layout: "one-xb".into(),
            k: 0,
            k_max: 1,
            selectivity: 0.1,
            latency_s,
            energy_j: 2.0,
            peak_power_w: 0.0,
            max_row_writes: 1,
            endurance_10y: 1.0,
            groups: 1,
            data_line_reads: 0,
        }
    }

    #[test]
    fn geo_mean_skips_non_positive() {
        assert_eq!(geo_mean([4.0, 1.0, 0.0, -3.0]), Some(2.0));
        assert_eq!(geo_mean([0.0]), None);
    }

    #[test]
    fn csv_has_rows_and_summaries() {
        let rows = vec![row("Q1", "hybrid", 1.0), row("Q2", "hybrid", 4.0), row("Q1", "host-only", 3.0)];
        let rep = Report::new(RunConfig::default(), rows);
        let csv = rep.to_csv();
        assert_eq!(csv.lines().count(), 1 + 3 + 2);
        assert!(csv.lines().any(|l| l.starts_with("geomean,hybrid,one-xb,,,,")));
        let t = &rep.tables()["latency_s"];
        assert_eq!(t.columns, vec!["one-xb/hybrid", "one-xb/host-only"]);
        assert_eq!(t.cells[1], vec![Some(4.0), None]);
        assert!((t.geomean[0].unwrap() - 2.0).abs() < 1e-12);
        assert!((t.geomean[1].unwrap() - 3.0).abs() < 1e-12);
        assert_eq!(t.to_csv().lines().count(), 1 + 2 + 1);
    }
}
