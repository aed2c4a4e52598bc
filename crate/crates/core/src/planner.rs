//! Empirical latency models and the choice of how many subgroups to
//! aggregate in PIM.
//!
//! host-gb: `T(M, s, r) = M * (a(s) * sqrt(r) + b(s))`
//! pim-gb, one subgroup: `T(M, n) = M * slope(n) + intercept(n)`
//! total: `T_gb(k) = k * T_pim(M, n) + [k != k_max] * T_host(M, s, r(k))`

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layout::LayoutMode;
use crate::query::GroupKey;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HostFit {
    pub a: f64,
    pub b: f64,
    pub r2: f64,
}

impl HostFit {
    pub fn latency(&self, m: f64, r: f64) -> f64 {
        m * (self.a * r.max(0.0).sqrt() + self.b)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PimFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
}

impl PimFit {
    pub fn latency(&self, m: f64) -> f64 {
        m * self.slope + self.intercept
    }
}

/// Fitted lookup tables for one layout. Times in nanoseconds.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ModelTables {
    pub layout: LayoutMode,
    /// Keyed by reads per record.
    pub host: BTreeMap<usize, HostFit>,
    /// Keyed by aggregated-attribute granules, ALU engine.
    pub pim: BTreeMap<usize, PimFit>,
    /// Same, pure-logic aggregation engine.
    pub pim_baseline: BTreeMap<usize, PimFit>,
}

impl ModelTables {
    pub fn host_fit(&self, reads_per_record: usize) -> Result<HostFit> {
        self.host
            .get(&reads_per_record)
            .copied()
            .ok_or_else(|| Error::MissingModelEntry(format!("host-gb model for {reads_per_record} reads per record")))
    }

    pub fn pim_fit(&self, granules: usize, baseline: bool) -> Result<PimFit> {
        let table = if baseline { &self.pim_baseline } else { &self.pim };
        table
            .get(&granules)
            .copied()
            .ok_or_else(|| Error::MissingModelEntry(format!("pim-gb model for {granules} granules")))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = self.host.values().any(|f| !(f.a.is_finite() && f.b.is_finite() && f.a >= 0.0))
            || self.pim.values().chain(self.pim_baseline.values()).any(|f| !(f.slope.is_finite() && f.intercept.is_finite()));
        if bad {
            return Err(Error::Format("model tables hold non-finite or negative entries".into()));
        }
        Ok(())
    }
}

/// Sample-based subgroup sizes.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SubgroupEstimates {
    /// Candidate subgroups, largest estimate first; unseen ones (estimate
    /// 0) follow in key order.
    pub order: Vec<(GroupKey, f64)>,
    /// Estimated selected records in the whole relation.
    pub selected: f64,
    pub total_records: f64,
    /// Distinct subgroups present in the sample.
    pub in_sample: usize,
}

impl SubgroupEstimates {
    /// Builds estimates from per-key counts scaled by `scale`.
    pub fn from_counts(
        counts: &BTreeMap<GroupKey, u64>,
        candidates: &[GroupKey],
        scale: f64,
        total_records: f64,
    ) -> Self {
        let mut order: Vec<(GroupKey, f64)> =
            candidates.iter().map(|k| (k.clone(), counts.get(k).copied().unwrap_or(0) as f64 * scale)).collect();
        // Stable sort keeps key order among ties.
        order.sort_by(|a, b| b.1.total_cmp(&a.1));
        Self {
            selected: counts.values().sum::<u64>() as f64 * scale,
            total_records,
            in_sample: counts.values().filter(|&&c| c > 0).count(),
            order,
        }
    }

    /// r(k) for k = 0..=k_max.
    pub fn remaining_ratio(&self) -> Vec<f64> {
        let mut left = self.selected;
        let mut r = Vec::with_capacity(self.order.len() + 1);
        let denom = self.total_records.max(1.0);
        r.push(left.max(0.0) / denom);
        for (_, est) in &self.order {
            left -= est;
            r.push(left.max(0.0) / denom);
        }
        r
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupByPlan {
    pub k: usize,
    pub k_max: usize,
    pub reads_per_record: usize,
    pub agg_granules: usize,
    /// Pages per host thread.
    pub pages: f64,
    pub r: Vec<f64>,
    /// Predicted T_gb(k) in ns for k = 0..=k_max.
    pub predicted: Vec<f64>,
}

/// Evaluates T_gb(k) for every k and returns the argmin (smallest k on
/// ties). `r[k]` must be given for k = 0..=k_max.
pub fn plan_groupby(
    host: &HostFit,
    pim: &PimFit,
    pages: f64,
    reads_per_record: usize,
    agg_granules: usize,
    r: &[f64],
) -> Result<GroupByPlan> {
    if r.is_empty() {
        return Err(Error::Format("r(k) schedule is empty".into()));
    }
    let k_max = r.len() - 1;
    let t_pim = pim.latency(pages);
    let predicted: Vec<f64> = r
        .iter()
        .enumerate()
        .map(|(k, &rk)| k as f64 * t_pim + if k == k_max { 0.0 } else { host.latency(pages, rk) })
        .collect();
    let mut k = 0;
    for (i, &t) in predicted.iter().enumerate() {
        if t < predicted[k] {
            k = i;
        }
    }
    Ok(GroupByPlan { k, k_max, reads_per_record, agg_granules, pages, r: r.to_vec(), predicted })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HostSample {
    pub reads_per_record: usize,
    pub pages: usize,
    pub r: f64,
    pub latency_ns: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PimSample {
    pub granules: usize,
    pub pages: usize,
    pub baseline: bool,
    pub latency_ns: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Measurements {
    pub layout: LayoutMode,
    pub host: Vec<HostSample>,
    pub pim: Vec<PimSample>,
}

/// Ordinary least squares `y = slope * x + intercept` with its R².
pub fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let intercept = my - slope * mx;
    let ss_tot: f64 = y.iter().map(|v| (v - my).powi(2)).sum();
    let ss_res: f64 = x.iter().zip(y).map(|(a, b)| (b - slope * a - intercept).powi(2)).sum();
    let r2 = if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { 1.0 };
    (slope, intercept, r2)
}

fn distinct(values: impl Iterator<Item = f64>) -> usize {
    let mut v: Vec<f64> = values.collect();
    v.sort_by(f64::total_cmp);
    v.dedup_by(|a, b| (*a - *b).abs() <= 1e-12 * b.abs().max(1e-300));
    v.len()
}

/// Fits host-gb per reads-per-record (T/M against sqrt(r)) and pim-gb per
/// granule count (T against M).
pub fn fit_models(m: &Measurements) -> Result<ModelTables> {
    let mut tables = ModelTables { layout: m.layout, ..Default::default() };

    let mut by_s: BTreeMap<usize, Vec<&HostSample>> = BTreeMap::new();
    for h in &m.host {
        by_s.entry(h.reads_per_record).or_default().push(h);
    }
    for (s, samples) in by_s {
        let pages = distinct(samples.iter().map(|h| h.pages as f64));
        let ratios = distinct(samples.iter().map(|h| h.r));
        if pages < 3 || ratios < 5 {
            return Err(Error::RankDeficient(format!(
                "s = {s}: {pages} page counts and {ratios} ratios (need 3 and 5)"
            )));
        }
        let x: Vec<f64> = samples.iter().map(|h| h.r.sqrt()).collect();
        let y: Vec<f64> = samples.iter().map(|h| h.latency_ns / h.pages as f64).collect();
        let (a, b, r2) = linear_fit(&x, &y);
        tables.host.insert(s, HostFit { a, b, r2 });
    }

    let mut by_n: BTreeMap<(bool, usize), Vec<&PimSample>> = BTreeMap::new();
    for p in &m.pim {
        by_n.entry((p.baseline, p.granules)).or_default().push(p);
    }
    for ((baseline, n), samples) in by_n {
        let pages = distinct(samples.iter().map(|p| p.pages as f64));
        if pages < 3 {
            return Err(Error::RankDeficient(format!("n = {n}: {pages} page counts (need 3)")));
        }
        let x: Vec<f64> = samples.iter().map(|p| p.pages as f64).collect();
        let y: Vec<f64> = samples.iter().map(|p| p.latency_ns).collect();
        let (slope, intercept, r2) = linear_fit(&x, &y);
        let table = if baseline { &mut tables.pim_baseline } else { &mut tables.pim };
        table.insert(n, PimFit { slope, intercept, r2 });
    }
    tables.validate()?;
    Ok(tables)
}
