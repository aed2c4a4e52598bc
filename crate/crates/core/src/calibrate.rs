//! Measures host-gb and pim-gb latency on synthetic relations and fits the
//! planner's models.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::device::{AggEngine, DeviceGeometry};
use crate::engine::{PlanPolicy, Session};
use crate::error::{Error, Result};
use crate::fabric::AggOp;
use crate::layout::{AttrKind, Attribute, LayoutMode};
use crate::ledger::CostParams;
use crate::microcode::{CmpOp, Predicate};
use crate::planner::{fit_models, HostSample, Measurements, ModelTables, PimSample};
use crate::query::Query;
use crate::relation::{AttributeMeta, Catalog, Relation, FORMAT_TAG};

/// Values taken by each synthetic group attribute.
const GROUP_VALUES: u32 = 16;
const GROUP_ATTRS: usize = 5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CalibrationGrid {
    /// Pages per thread (calibration runs one thread).
    pub pages: Vec<usize>,
    /// Target selectivities of the host-gb input.
    pub ratios: Vec<f64>,
    /// Reads per record.
    pub reads: Vec<usize>,
    /// Aggregated-attribute granules.
    pub granules: Vec<usize>,
    pub seed: u64,
}

impl Default for CalibrationGrid {
    fn default() -> Self {
        Self {
            pages: vec![1, 2, 4, 8, 16],
            ratios: vec![1e-4, 1e-3, 1e-2, 0.1, 0.5],
            reads: (1..=6).collect(),
            granules: vec![1, 2],
            seed: 7,
        }
    }
}

impl CalibrationGrid {
    pub fn validate(&self) -> Result<()> {
        if let Some(&s) = self.reads.iter().find(|&&s| s == 0 || s > GROUP_ATTRS + 1) {
            return Err(Error::Format(format!("reads per record {s} outside 1..={}", GROUP_ATTRS + 1)));
        }
        if let Some(&n) = self.granules.iter().find(|&&n| !(1..=2).contains(&n)) {
            return Err(Error::Format(format!("aggregate granules {n} outside 1..=2")));
        }
        if self.pages.contains(&0) || self.ratios.iter().any(|r| !(*r > 0.0 && *r <= 1.0)) {
            return Err(Error::Format("page counts must be positive and ratios in (0, 1]".into()));
        }
        Ok(())
    }
}

/// Synthetic relation: a 32-bit uniform key `u` for range filters, group
/// attributes `g1..g5`, and 16- and 32-bit aggregated values. In the
/// two-crossbar layout `u` and `g*` sit with the dimension attributes.
pub fn synthetic_relation(records: usize, seed: u64) -> Relation {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut attrs = vec![meta("u", 32, "dim", (0, u32::MAX))];
    for i in 1..=GROUP_ATTRS {
        attrs.push(meta(&format!("g{i}"), 16, "dim", (0, GROUP_VALUES - 1)));
    }
    attrs.push(meta("v16", 16, "fact", (0, u16::MAX as u32)));
    attrs.push(meta("v32", 32, "fact", (0, u32::MAX)));
    let mut columns: Vec<Vec<u32>> = vec![Vec::with_capacity(records); attrs.len()];
    for _ in 0..records {
        columns[0].push(rng.random());
        for c in &mut columns[1..=GROUP_ATTRS] {
            c.push(rng.random_range(0..GROUP_VALUES));
        }
        columns[GROUP_ATTRS + 1].push(rng.random::<u16>() as u32);
        columns[GROUP_ATTRS + 2].push(rng.random());
    }
    Relation {
        catalog: Catalog { format: FORMAT_TAG.into(), record_count: records, attributes: attrs, hierarchies: vec![] },
        columns,
    }
}

fn meta(name: &str, width: usize, origin: &str, domain: (u32, u32)) -> AttributeMeta {
    AttributeMeta { attribute: Attribute::new(name, width, AttrKind::Integer, origin), domain, dictionary: None }
}

/// Host-gb probe: `u < r * 2^32`, grouped so that a record costs `s`
/// granule reads. The 16-bit value is aggregated, so `s - 1` group
/// attributes.
pub fn host_probe(cat: &Catalog, r: f64, s: usize) -> Result<Query> {
    let bound = (r * 2f64.powi(32)).round().min(u32::MAX as f64) as u64;
    Ok(Query {
        id: format!("host-s{s}-r{r}"),
        predicate: Predicate::Cmp { attr: cat.index_of("u")?, op: CmpOp::Lt, value: bound },
        agg: AggOp::Sum,
        agg_attr: cat.index_of("v16")?,
        group_by: (1..s).map(|i| cat.index_of(&format!("g{i}"))).collect::<Result<_>>()?,
    })
}

/// Pim-gb probe: one subgroup of `g1` over an aggregated attribute of
/// `n` granules.
pub fn pim_probe(cat: &Catalog, n: usize) -> Result<Query> {
    let g1 = cat.index_of("g1")?;
    Ok(Query {
        id: format!("pim-n{n}"),
        predicate: Predicate::eq(g1, 0),
        agg: AggOp::Sum,
        agg_attr: cat.index_of(if n == 1 { "v16" } else { "v32" })?,
        group_by: vec![g1],
    })
}

/// Runs the grid for one layout.
pub fn measure(grid: &CalibrationGrid, layout: LayoutMode, geometry: &DeviceGeometry, params: &CostParams) -> Result<Measurements> {
    grid.validate()?;
    let mut out = Measurements { layout, ..Default::default() };
    for &m in &grid.pages {
        let rel = synthetic_relation(m * geometry.records_per_page(), grid.seed ^ m as u64);
        let mut session = Session::new(&rel, layout, geometry.clone(), params.clone())?;
        session.threads = 1;
        for &s in &grid.reads {
            for &r in &grid.ratios {
                let q = host_probe(&rel.catalog, r, s)?;
                let run = session.run_with(&q, &PlanPolicy::HostOnly, AggEngine::Alu, None)?;
                out.host.push(HostSample {
                    reads_per_record: s,
                    pages: m,
                    r: run.selectivity(),
                    latency_ns: run.latency_ns,
                });
            }
        }
        for &n in &grid.granules {
            let q = pim_probe(&rel.catalog, n)?;
            for (engine, baseline) in [(AggEngine::Alu, false), (AggEngine::LogicBaseline, true)] {
                let latency_ns = session.time_pim_subgroup(&q, engine)?;
                out.pim.push(PimSample { granules: n, pages: m, baseline, latency_ns });
            }
        }
    }
    Ok(out)
}

/// Measures and fits model tables for each layout.
pub fn calibrate(
    grid: &CalibrationGrid,
    layouts: &[LayoutMode],
    geometry: &DeviceGeometry,
    params: &CostParams,
) -> Result<BTreeMap<LayoutMode, (Measurements, ModelTables)>> {
    layouts
        .iter()
        .map(|&l| {
            let m = measure(grid, l, geometry, params)?;
            let t = fit_models(&m)?;
            Ok((l, (m, t)))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    pub fn small_geometry() -> DeviceGeometry {
        DeviceGeometry { chips: 2, page_bytes: 64 * 512 / 8 * 4, rows: 64, cols: 512, line_bits: 64, capacity_bytes: 1 << 24 }
    }

    #[test]
    fn probes_hit_their_targets() {
        let rel = synthetic_relation(20_000, 1);
        let q = host_probe(&rel.catalog, 0.1, 4).unwrap();
        assert_eq!(q.read_attrs().len(), 4);
        let sel = (0..rel.len()).filter(|&j| q.predicate.eval(&|a| rel.value(a, j))).count() as f64 / rel.len() as f64;
        assert!((sel - 0.1).abs() < 0.01, "{sel}");
    }

    #[test]
    fn small_grid_fits() {
        let geo = small_geometry();
        geo.validate().unwrap();
        let grid = CalibrationGrid { pages: vec![1, 2, 4], reads: vec![1, 3], ..Default::default() };
        for layout in [LayoutMode::OneXb, LayoutMode::TwoXb] {
            let m = measure(&grid, layout, &geo, &CostParams::default()).unwrap();
            assert_eq!(m.host.len(), 3 * 2 * 5);
            assert_eq!(m.pim.len(), 3 * 2 * 2);
            let t = fit_models(&m).unwrap();
            assert!(t.host[&3].b > t.host[&1].b || t.host[&3].a > t.host[&1].a);
            assert!(t.pim[&1].slope > 0.0);
            assert!(t.pim_baseline[&2].latency(1.0) > t.pim[&2].latency(1.0));
        }
    }

    #[test]
    fn bad_grid_rejected() {
        let grid = CalibrationGrid { reads: vec![7], ..Default::default() };
        assert!(grid.validate().is_err());
    }
}
