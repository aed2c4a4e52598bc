//! Query execution over a loaded relation: filtering, sampling, the
//! pim-gb / host-gb split, and in-place updates.
//!
//! Pages are divided into contiguous chunks, one per host thread. Threads
//! are replayed one after another on the shared device clock, each
//! starting from the same phase start, so their events overlap in time as
//! they would when run concurrently. Phases are separated by barriers:
//! filter, then sampling on one thread, then aggregation.

use std::collections::BTreeMap;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::device::{AggEngine, DeviceGeometry, Payload, PimDevice, PimRequest};
use crate::error::{Error, Result};
use crate::fabric::{AggOp, AggSpec, LogicOp, GRANULE_BITS};
use crate::layout::{load, place, LayoutMode, LoadedRelation};
use crate::ledger::{CostParams, CostReport, LineClass};
use crate::microcode::{compile_filter, AttrId, MicroProgram, MicrocodeCosts, MuxSpec, Predicate};
use crate::planner::{plan_groupby, GroupByPlan, ModelTables, SubgroupEstimates};
use crate::query::{candidate_keys, group_domains, GroupKey, Query};
use crate::relation::{Catalog, Relation};

/// Host threads the pages are split over.
pub const DEFAULT_THREADS: usize = 4;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExecMode {
    #[default]
    Hybrid,
    PimOnly,
    HostOnly,
    LogicAggBaseline,
}

impl ExecMode {
    pub const ALL: [ExecMode; 4] = [ExecMode::Hybrid, ExecMode::PimOnly, ExecMode::HostOnly, ExecMode::LogicAggBaseline];

    pub fn name(self) -> &'static str {
        match self {
            ExecMode::Hybrid => "hybrid",
            ExecMode::PimOnly => "pim-only",
            ExecMode::HostOnly => "host-only",
            ExecMode::LogicAggBaseline => "logic-agg-baseline",
        }
    }

    pub fn needs_models(self) -> bool {
        matches!(self, ExecMode::Hybrid | ExecMode::LogicAggBaseline)
    }
}

impl std::str::FromStr for ExecMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ExecMode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Format(format!("unknown mode '{s}'")))
    }
}

/// How many subgroups go to pim-gb.
#[derive(Clone, Debug, PartialEq)]
pub enum PlanPolicy {
    /// Sample, then take the argmin of the latency model.
    Model,
    /// Sample, then aggregate the `k` largest estimated subgroups in PIM.
    Fixed(usize),
    /// Every candidate subgroup in PIM, no sampling.
    AllPim,
    /// No PIM aggregation.
    HostOnly,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QueryRun {
    /// Aggregate per non-empty group.
    pub groups: BTreeMap<GroupKey, u64>,
    pub k: usize,
    pub k_max: usize,
    /// Records passing the filter.
    pub selected: u64,
    pub records: usize,
    pub estimates: Option<SubgroupEstimates>,
    pub plan: Option<GroupByPlan>,
    pub latency_ns: f64,
    pub report: CostReport,
}

impl QueryRun {
    pub fn selectivity(&self) -> f64 {
        if self.records == 0 {
            0.0
        } else {
            self.selected as f64 / self.records as f64
        }
    }
}

/// Per-query column bookkeeping.
struct Prepared {
    /// Partition holding the group-by attributes (or the aggregate when
    /// there are none); the final filter lives here.
    home: usize,
    agg_part: usize,
    /// Predicate part per partition.
    parts: BTreeMap<usize, Predicate>,
    read_attrs: Vec<AttrId>,
    agg_granules: usize,
    reads_per_record: usize,
    candidates: Vec<GroupKey>,
}

/// A relation loaded on a private device.
#[derive(Clone, Debug)]
pub struct Session {
    pub device: PimDevice,
    pub relation: LoadedRelation,
    pub catalog: Catalog,
    pub costs: MicrocodeCosts,
    pub threads: usize,
}

/// Contiguous, balanced page ranges for `threads` threads.
pub fn thread_ranges(pages: usize, threads: usize) -> Vec<Range<usize>> {
    let t = threads.clamp(1, pages.max(1));
    let (base, extra) = (pages / t, pages % t);
    let mut start = 0;
    (0..t)
        .map(|i| {
            let len = base + usize::from(i < extra);
            let r = start..start + len;
            start += len;
            r
        })
        .collect()
}

impl Session {
    pub fn new(rel: &Relation, layout: LayoutMode, geometry: DeviceGeometry, params: CostParams) -> Result<Self> {
        let mut device = PimDevice::new(geometry, params)?;
        let placement = place(&rel.catalog.schema(), layout, device.geometry().cols)?;
        let relation = load(&rel.columns, &placement, &mut device)?;
        Ok(Self { device, relation, catalog: rel.catalog.clone(), costs: MicrocodeCosts::default(), threads: DEFAULT_THREADS })
    }

    pub fn layout(&self) -> LayoutMode {
        self.relation.placement.mode
    }

    fn rows(&self) -> usize {
        self.device.geometry().rows
    }

    fn rpp(&self) -> usize {
        self.device.geometry().records_per_page()
    }

    fn prepare(&self, q: &Query) -> Result<Prepared> {
        let pl = &self.relation.placement;
        let agg_part = pl.partition_of(q.agg_attr)?;
        let mut group_parts: Vec<usize> = q.group_by.iter().map(|&a| pl.partition_of(a)).collect::<Result<_>>()?;
        group_parts.dedup();
        group_parts.sort_unstable();
        group_parts.dedup();
        let home = match group_parts.as_slice() {
            [] => agg_part,
            [p] => *p,
            _ => return Err(Error::Unsupported("GROUP BY attributes split across partitions".into())),
        };
        let mut parts = BTreeMap::new();
        let split = q
            .predicate
            .split_conjuncts(|a| pl.partition_of(a).unwrap_or(usize::MAX), home)
            .ok_or_else(|| Error::Unsupported("a WHERE conjunct spans partitions".into()))?;
        for (p, pred) in split {
            if p >= pl.partitions() {
                return Err(Error::UnknownAttribute(format!("{:?}", pred.attributes())));
            }
            parts.insert(p, pred);
        }
        let slot = pl.slot(q.agg_attr)?;
        let agg_granules = slot.width.div_ceil(GRANULE_BITS);
        if agg_granules * GRANULE_BITS > pl.work[agg_part].dst_width - GRANULE_BITS {
            return Err(Error::Unsupported(format!("aggregating a {}-bit attribute", slot.width)));
        }
        let read_attrs = q.read_attrs();
        let reads_per_record = read_attrs.iter().map(|&a| pl.slots[a].width.div_ceil(GRANULE_BITS)).sum();
        let candidates = candidate_keys(&group_domains(q, &self.catalog)?);
        Ok(Prepared { home, agg_part, parts, read_attrs, agg_granules, reads_per_record, candidates })
    }

    fn page(&self, partition: usize, ord: usize) -> usize {
        self.relation.pages[partition][ord]
    }

    fn partial_page(&self, ord: usize) -> bool {
        self.relation.records_on_page(ord, self.rpp()) < self.rpp()
    }

    fn submit_program(&mut self, partition: usize, ord: usize, prog: MicroProgram) -> Result<f64> {
        let page = self.page(partition, ord);
        self.device.submit(PimRequest { page, payload: Payload::LogicSeq(prog) })
    }

    /// Filter for the pages of one thread, leaving the result in the home
    /// partition's filter column.
    fn filter_pages(&mut self, prep: &Prepared, pages: Range<usize>) -> Result<()> {
        let pl = self.relation.placement.clone();
        let others: Vec<(usize, Predicate)> =
            prep.parts.iter().filter(|(p, _)| **p != prep.home).map(|(p, q)| (*p, q.clone())).collect();
        for (p, pred) in &others {
            let w = &pl.work[*p];
            let prog = compile_filter(pred, &pl.view(*p), &w.scratch, w.filter, &[], &self.costs)?;
            for ord in pages.clone() {
                self.submit_program(*p, ord, prog.clone())?;
            }
        }
        let home_pred = prep.parts.get(&prep.home).cloned().unwrap_or(Predicate::True);
        let hw = &pl.work[prep.home];
        for ord in pages {
            let mut extra = Vec::new();
            for (p, _) in &others {
                let (src, dst) = (self.page(*p, ord), self.page(prep.home, ord));
                self.device.transfer_bitvector(src, pl.work[*p].filter, dst, hw.xfer)?;
                extra.push(hw.xfer);
            }
            if self.partial_page(ord) {
                extra.push(hw.valid);
            }
            let prog = compile_filter(&home_pred, &pl.view(prep.home), &hw.scratch, hw.filter, &extra, &self.costs)?;
            self.submit_program(prep.home, ord, prog)?;
        }
        Ok(())
    }

    /// Reads `attrs` of the given rows of page `ord` through the host:
    /// `out[attr][i][xbar]`.
    fn fetch(&mut self, ord: usize, rows: &[usize], attrs: &[AttrId]) -> Result<Vec<Vec<Vec<u64>>>> {
        let pl = self.relation.placement.clone();
        let mut out = Vec::with_capacity(attrs.len());
        for &a in attrs {
            let slot = pl.slots[a];
            let page = self.page(slot.partition, ord);
            let mut values = vec![vec![0u64; self.device.geometry().crossbars_per_page()]; rows.len()];
            for g in 0..slot.width.div_ceil(GRANULE_BITS) {
                let lines = self.device.host_read_lines(page, rows, slot.col_start / GRANULE_BITS + g, LineClass::Data)?;
                for (vals, line) in values.iter_mut().zip(lines) {
                    for (v, granule) in vals.iter_mut().zip(line) {
                        *v |= (granule as u64) << (GRANULE_BITS * g);
                    }
                }
            }
            out.push(values);
        }
        Ok(out)
    }

    /// Reads the bit-vector in `col` of the home partition and returns the
    /// rows with at least one set bit, with their per-crossbar bits.
    fn read_bitvector(&mut self, home: usize, ord: usize, col: usize) -> Result<Vec<(usize, u32)>> {
        let page = self.page(home, ord);
        let rows: Vec<usize> = (0..self.rows()).collect();
        let lines = self.device.host_read_lines(page, &rows, col / GRANULE_BITS, LineClass::Bitvector)?;
        let bit = col % GRANULE_BITS;
        Ok(lines
            .into_iter()
            .enumerate()
            .filter_map(|(r, line)| {
                let m = line.iter().enumerate().fold(0u32, |m, (x, g)| m | (((g >> bit) & 1) as u32) << x);
                (m != 0).then_some((r, m))
            })
            .collect())
    }

    /// Subgroup sizes from the filter bits and identifiers of page 0.
    fn sample(&mut self, q: &Query, prep: &Prepared) -> Result<SubgroupEstimates> {
        let filter = self.relation.placement.work[prep.home].filter;
        let hits = self.read_bitvector(prep.home, 0, filter)?;
        let rows: Vec<usize> = hits.iter().map(|h| h.0).collect();
        let values = self.fetch(0, &rows, &q.group_by)?;
        let mut counts: BTreeMap<GroupKey, u64> = BTreeMap::new();
        let mut n = 0u64;
        for (i, (_, bits)) in hits.iter().enumerate() {
            for x in BitIter(*bits) {
                let key: GroupKey = values.iter().map(|v| v[i][x] as u32).collect();
                *counts.entry(key).or_default() += 1;
                n += 1;
            }
        }
        self.device.host_compute(n as f64 * self.device.params().t_host_record_ns);
        let m = self.relation.page_count() as f64;
        Ok(SubgroupEstimates::from_counts(&counts, &prep.candidates, m, self.relation.records as f64))
    }

    fn agg_spec(&self, q: &Query, prep: &Prepared, mask_col: usize) -> AggSpec {
        let pl = &self.relation.placement;
        let slot = pl.slots[q.agg_attr];
        AggSpec::new(q.agg, slot.col_start, prep.agg_granules * GRANULE_BITS, pl.work[prep.agg_part].dst_start, mask_col)
    }

    /// pim-gb of one subgroup (or of the whole filter when `key` is `None`)
    /// over one thread's pages. Returns the combined partial.
    fn pim_subgroup(
        &mut self,
        q: &Query,
        prep: &Prepared,
        key: Option<&GroupKey>,
        pages: Range<usize>,
        engine: AggEngine,
        track: Option<bool>,
    ) -> Result<Option<u64>> {
        let pl = self.relation.placement.clone();
        let hw = &pl.work[prep.home];
        let mut mask_col = hw.filter;
        if let Some(key) = key {
            let eqs = Predicate::And(q.group_by.iter().zip(key).map(|(&a, &v)| Predicate::eq(a, v as u64)).collect());
            let mut prog = compile_filter(&eqs, &pl.view(prep.home), &hw.scratch, hw.mask, &[hw.filter], &self.costs)?;
            // `track` = Some(first): maintain the covered union for host-gb.
            if let Some(first) = track {
                let lc = self.device.logic_costs().clone();
                if first {
                    prog.append(MicroProgram::single(LogicOp::Set0, vec![], hw.covered, &lc));
                }
                prog.append(MicroProgram::single(LogicOp::Or, vec![hw.covered, hw.mask], hw.covered, &lc));
            }
            for ord in pages.clone() {
                self.submit_program(prep.home, ord, prog.clone())?;
            }
            mask_col = hw.mask;
        }
        if prep.agg_part != prep.home {
            let aw = &pl.work[prep.agg_part];
            if key.is_some() {
                for ord in pages.clone() {
                    self.device.transfer_bitvector(self.page(prep.home, ord), hw.mask, self.page(prep.agg_part, ord), aw.xfer)?;
                }
                mask_col = aw.xfer;
            } else {
                // No GROUP BY: the home partition is the aggregate's.
                unreachable!("home differs from the aggregate partition only with GROUP BY");
            }
        }
        let spec = self.agg_spec(q, prep, mask_col);
        for ord in pages.clone() {
            let page = self.page(prep.agg_part, ord);
            self.device.submit(PimRequest { page, payload: Payload::Aggregate { spec: spec.clone(), engine } })?;
        }
        let mut acc: Option<u64> = None;
        let dst_granule = spec.dst.start / GRANULE_BITS;
        for ord in pages {
            let page = self.page(prep.agg_part, ord);
            let mut raw = vec![0u64; self.device.geometry().crossbars_per_page()];
            for g in 0..spec.dst_granules() {
                let line = self.device.host_read_line(page, spec.result_row, dst_granule + g, LineClass::Result)?;
                for (r, v) in raw.iter_mut().zip(line) {
                    *r |= (v as u64) << (GRANULE_BITS * g);
                }
            }
            for r in raw {
                if let Some(v) = spec.decode(r) {
                    acc = Some(acc.map_or(v, |a| AggSpec::combine(q.agg, a, v)));
                }
            }
        }
        Ok(acc)
    }

    /// host-gb over one thread's pages, skipping PIM-covered subgroups when
    /// `covered` is set.
    fn host_pages(
        &mut self,
        q: &Query,
        prep: &Prepared,
        pages: Range<usize>,
        covered: bool,
        out: &mut BTreeMap<GroupKey, u64>,
    ) -> Result<()> {
        let pl = self.relation.placement.clone();
        let hw = &pl.work[prep.home];
        let col = if covered {
            let lc = self.device.logic_costs().clone();
            let prog = MicroProgram::single(LogicOp::AndNot, vec![hw.filter, hw.covered], hw.host_filter, &lc);
            for ord in pages.clone() {
                self.submit_program(prep.home, ord, prog.clone())?;
            }
            hw.host_filter
        } else {
            hw.filter
        };
        let n_group = q.group_by.len();
        let agg_idx = prep.read_attrs.iter().position(|&a| a == q.agg_attr).unwrap();
        for ord in pages {
            let hits = self.read_bitvector(prep.home, ord, col)?;
            let rows: Vec<usize> = hits.iter().map(|h| h.0).collect();
            let values = self.fetch(ord, &rows, &prep.read_attrs)?;
            let mut n = 0u64;
            for (i, (_, bits)) in hits.iter().enumerate() {
                for x in BitIter(*bits) {
                    let key: GroupKey = values[..n_group].iter().map(|v| v[i][x] as u32).collect();
                    let v = values[agg_idx][i][x];
                    out.entry(key).and_modify(|a| *a = AggSpec::combine(q.agg, *a, v)).or_insert(v);
                    n += 1;
                }
            }
            self.device.host_compute(n as f64 * self.device.params().t_host_record_ns);
        }
        Ok(())
    }

    /// Runs every thread from `start`, returning the latest finish time.
    fn per_thread(
        &mut self,
        start: f64,
        mut f: impl FnMut(&mut Self, usize, Range<usize>) -> Result<()>,
    ) -> Result<f64> {
        let mut end = start;
        for (t, pages) in thread_ranges(self.relation.page_count(), self.threads).into_iter().enumerate() {
            self.device.set_now(start);
            f(self, t, pages)?;
            end = end.max(self.device.now());
        }
        self.device.set_now(end);
        Ok(end)
    }

    fn pages_per_thread(&self) -> usize {
        thread_ranges(self.relation.page_count(), self.threads).iter().map(|r| r.len()).max().unwrap_or(1)
    }

    pub fn run_query(&mut self, q: &Query, mode: ExecMode, models: Option<&ModelTables>) -> Result<QueryRun> {
        let (policy, engine) = match mode {
            ExecMode::Hybrid => (PlanPolicy::Model, AggEngine::Alu),
            ExecMode::PimOnly => (PlanPolicy::AllPim, AggEngine::Alu),
            ExecMode::HostOnly => (PlanPolicy::HostOnly, AggEngine::Alu),
            ExecMode::LogicAggBaseline => (PlanPolicy::Model, AggEngine::LogicBaseline),
        };
        self.run_with(q, &policy, engine, models)
    }

    pub fn run_with(
        &mut self,
        q: &Query,
        policy: &PlanPolicy,
        engine: AggEngine,
        models: Option<&ModelTables>,
    ) -> Result<QueryRun> {
        let prep = self.prepare(q)?;
        let k_max = prep.candidates.len();
        self.device.reset_measurement();

        let t_filter = self.per_thread(0.0, |s, _, pages| s.filter_pages(&prep, pages))?;

        let grouped = !q.group_by.is_empty();
        let sampled = grouped && matches!(policy, PlanPolicy::Model | PlanPolicy::Fixed(_));
        let estimates = if sampled {
            self.device.set_now(t_filter);
            Some(self.sample(q, &prep)?)
        } else {
            None
        };
        let t_plan = self.device.now().max(t_filter);

        let mut plan = None;
        let (k, order): (usize, Vec<GroupKey>) = match (policy, &estimates) {
            (PlanPolicy::HostOnly, _) => (0, Vec::new()),
            (PlanPolicy::AllPim, _) => (k_max, prep.candidates.clone()),
            (_, None) => (1, vec![Vec::new()]),
            (PlanPolicy::Fixed(k), Some(e)) => ((*k).min(k_max), e.order.iter().map(|o| o.0.clone()).collect()),
            (PlanPolicy::Model, Some(e)) => {
                let models = models.ok_or(Error::UnfittedModels)?;
                let host = models.host_fit(prep.reads_per_record)?;
                let pim = models.pim_fit(prep.agg_granules, engine == AggEngine::LogicBaseline)?;
                let p = plan_groupby(
                    &host,
                    &pim,
                    self.pages_per_thread() as f64,
                    prep.reads_per_record,
                    prep.agg_granules,
                    &e.remaining_ratio(),
                )?;
                let k = p.k;
                plan = Some(p);
                (k, e.order.iter().map(|o| o.0.clone()).collect())
            }
        };
        if matches!(policy, PlanPolicy::Model) && !grouped {
            models.ok_or(Error::UnfittedModels)?;
        }

        let mut pim: Vec<Option<u64>> = vec![None; k];
        let mut host: BTreeMap<GroupKey, u64> = BTreeMap::new();
        let host_needed = k < k_max;
        let end = self.per_thread(t_plan, |s, _, pages| {
            for (i, slot) in pim.iter_mut().enumerate() {
                let key = grouped.then(|| &order[i]);
                let track = (grouped && host_needed).then_some(i == 0);
                let part = s.pim_subgroup(q, &prep, key, pages.clone(), engine, track)?;
                *slot = match (*slot, part) {
                    (Some(a), Some(b)) => Some(AggSpec::combine(q.agg, a, b)),
                    (a, b) => a.or(b),
                };
            }
            if host_needed {
                s.host_pages(q, &prep, pages, k > 0, &mut host)?;
            }
            Ok(())
        })?;

        let mut groups = host;
        for (i, v) in pim.into_iter().enumerate() {
            if let Some(v) = v {
                let key = if grouped { order[i].clone() } else { Vec::new() };
                let merged = groups.get(&key).map_or(v, |&h| AggSpec::combine(q.agg, h, v));
                groups.insert(key, merged);
            }
        }
        let latency_ns = end.max(self.device.quiescent_time());
        let report = self.device.report(latency_ns);
        Ok(QueryRun {
            groups,
            k,
            k_max,
            selected: self.count_filter(prep.home),
            records: self.relation.records,
            estimates,
            plan,
            latency_ns,
            report,
        })
    }

    /// Simulated end-to-end latency for every k = 0..=k_max, with the
    /// subgroups taken in the same order the planner would use.
    pub fn sweep_k(&mut self, q: &Query, engine: AggEngine) -> Result<Vec<f64>> {
        let prep = self.prepare(q)?;
        let k_max = prep.candidates.len();
        let grouped = !q.group_by.is_empty();
        self.device.reset_measurement();
        let t_filter = self.per_thread(0.0, |s, _, pages| s.filter_pages(&prep, pages))?;
        let order: Vec<Option<GroupKey>> = if grouped {
            self.device.set_now(t_filter);
            let e = self.sample(q, &prep)?;
            e.order.into_iter().map(|o| Some(o.0)).collect()
        } else {
            vec![None]
        };
        let start = self.device.now().max(t_filter);
        let ranges = thread_ranges(self.relation.page_count(), self.threads);
        let mut thread_now = vec![start; ranges.len()];
        let mut out = Vec::with_capacity(k_max + 1);
        let mut sink = BTreeMap::new();
        for k in 0..=k_max {
            if k == k_max {
                // Without host-gb the masks skip the covered union, so the
                // last point is a run of its own.
                let last = self.run_with(q, &PlanPolicy::Fixed(k_max), engine, None)?;
                out.push(last.latency_ns);
                break;
            }
            if k > 0 {
                for (t, pages) in ranges.iter().enumerate() {
                    self.device.set_now(thread_now[t]);
                    let track = grouped.then_some(k == 1);
                    self.pim_subgroup(q, &prep, order[k - 1].as_ref(), pages.clone(), engine, track)?;
                    thread_now[t] = self.device.now();
                }
            }
            let timing = self.device.timing();
            let cp = self.device.ledger().checkpoint();
            let mut end = start;
            for (t, pages) in ranges.iter().enumerate() {
                self.device.set_now(thread_now[t]);
                self.host_pages(q, &prep, pages.clone(), k > 0, &mut sink)?;
                end = end.max(self.device.now());
            }
            out.push(end.max(self.device.quiescent_time()));
            self.device.restore_timing(timing);
            self.device.ledger_mut().rollback(cp);
        }
        Ok(out)
    }

    /// Overwrites `attr` with `value` in every record satisfying `pred`,
    /// entirely inside PIM. Returns the latency in ns.
    pub fn update_where(&mut self, pred: &Predicate, attr: AttrId, value: u64) -> Result<f64> {
        let pl = self.relation.placement.clone();
        let slot = pl.slot(attr)?;
        let home = slot.partition;
        let split = pred
            .split_conjuncts(|a| pl.partition_of(a).unwrap_or(usize::MAX), home)
            .ok_or_else(|| Error::Unsupported("a WHERE conjunct spans partitions".into()))?;
        let prep = Prepared {
            home,
            agg_part: home,
            parts: split.into_iter().collect(),
            read_attrs: Vec::new(),
            agg_granules: 0,
            reads_per_record: 0,
            candidates: Vec::new(),
        };
        let hw = &pl.work[home];
        let spec = MuxSpec {
            value_start: slot.col_start,
            width: slot.width,
            immediate: value,
            select_col: hw.filter,
            scratch_col: hw.scratch[0],
        };
        spec.validate(pl.cols)?;
        self.device.reset_measurement();
        let all = 0..self.relation.page_count();
        self.filter_pages(&prep, all.clone())?;
        for ord in all {
            let page = self.page(home, ord);
            self.device.submit(PimRequest { page, payload: Payload::MuxUpdate(spec.clone()) })?;
        }
        Ok(self.device.quiescent_time())
    }

    /// Records passing the last filter, counted without charging.
    fn count_filter(&self, home: usize) -> u64 {
        let col = self.relation.placement.work[home].filter;
        self.relation.pages[home]
            .iter()
            .flat_map(|&p| self.device.crossbars(p).unwrap())
            .map(|xb| xb.column_words(col).unwrap().iter().map(|w| w.count_ones() as u64).sum::<u64>())
            .sum()
    }

    /// Current stored value of `attr` for every record, read without
    /// charging.
    pub fn column_values(&self, attr: AttrId) -> Result<Vec<u32>> {
        let slot = self.relation.placement.slot(attr)?;
        let g = self.device.geometry();
        (0..self.relation.records)
            .map(|j| {
                let (ord, x, row) = crate::layout::address(j, g.rows, g.records_per_page());
                let xb = &self.device.crossbars(self.page(slot.partition, ord))?[x];
                Ok(xb.peek_bits(row, slot.col_start, slot.width) as u32)
            })
            .collect()
    }

    /// Filter bit of every record after [`Session::run_filter`].
    pub fn filter_bits(&self, q: &Query) -> Result<Vec<bool>> {
        let home = self.prepare(q)?.home;
        let col = self.relation.placement.work[home].filter;
        let g = self.device.geometry();
        (0..self.relation.records)
            .map(|j| {
                let (ord, x, row) = crate::layout::address(j, g.rows, g.records_per_page());
                Ok(self.device.crossbars(self.page(home, ord))?[x].get(row, col))
            })
            .collect()
    }

    /// Time to aggregate the query's first candidate subgroup in PIM once
    /// the filter is in place.
    pub fn time_pim_subgroup(&mut self, q: &Query, engine: AggEngine) -> Result<f64> {
        let prep = self.prepare(q)?;
        self.device.reset_measurement();
        let start = self.per_thread(0.0, |s, _, pages| s.filter_pages(&prep, pages))?;
        let key = prep.candidates.first().filter(|k| !k.is_empty()).cloned();
        let end = self.per_thread(start, |s, _, pages| {
            s.pim_subgroup(q, &prep, key.as_ref(), pages, engine, None).map(drop)
        })?;
        Ok(end.max(self.device.quiescent_time()) - start)
    }

    /// Runs only the filter phase; returns its latency.
    pub fn run_filter(&mut self, q: &Query) -> Result<f64> {
        let prep = self.prepare(q)?;
        self.device.reset_measurement();
        self.per_thread(0.0, |s, _, pages| s.filter_pages(&prep, pages))?;
        Ok(self.device.quiescent_time())
    }
}

/// Set-bit indices of a crossbar mask.
struct BitIter(u32);

impl Iterator for BitIter {
    type Item = usize;

    fn next(&mut self) -> Option<usize> {
        if self.0 == 0 {
            return None;
        }
        let i = self.0.trailing_zeros() as usize;
        self.0 &= self.0 - 1;
        Some(i)
    }
}

/// Reference GROUP BY by direct scan of the relation.
pub fn oracle(q: &Query, rel: &Relation) -> BTreeMap<GroupKey, u64> {
    let mut out: BTreeMap<GroupKey, u64> = BTreeMap::new();
    for j in 0..rel.len() {
        if !q.predicate.eval(&|a| rel.value(a, j)) {
            continue;
        }
        let key: GroupKey = q.group_by.iter().map(|&a| rel.columns[a][j]).collect();
        let v = rel.value(q.agg_attr, j);
        out.entry(key).and_modify(|acc| *acc = AggSpec::combine(q.agg, *acc, v)).or_insert(v);
    }
    out
}

/// Combines per-group values the way the query's aggregate does.
pub fn combine_op(op: AggOp, a: u64, b: u64) -> u64 {
    AggSpec::combine(op, a, b)
}
