//! The PIM module: chips, pages and crossbars, per-page controllers, and
//! the host's view through 512-bit lines.
//!
//! Time is a single host clock. A request occupies the command channel for
//! `t_dispatch` and then runs on its page once the page is idle; pages run
//! concurrently with each other and with the host.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fabric::{AggSpec, Crossbar, LogicCosts, WearPolicy, DEFAULT_COLS, DEFAULT_ROWS, GRANULE_BITS};
use crate::ledger::{CostLedger, CostParams, CostReport, EventKind, LineClass};
use crate::microcode::{compile_mux, MicroProgram, MuxSpec};

pub type PageId = usize;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct DeviceGeometry {
    pub chips: usize,
    pub page_bytes: usize,
    pub rows: usize,
    pub cols: usize,
    pub line_bits: usize,
    pub capacity_bytes: u64,
}

impl Default for DeviceGeometry {
    fn default() -> Self {
        Self {
            chips: 8,
            page_bytes: 2 << 20,
            rows: DEFAULT_ROWS,
            cols: DEFAULT_COLS,
            line_bits: 512,
            capacity_bytes: 32 << 30,
        }
    }
}

impl DeviceGeometry {
    pub fn crossbars_per_page(&self) -> usize {
        self.page_bytes * 8 / (self.rows * self.cols)
    }

    pub fn crossbars_per_page_per_chip(&self) -> usize {
        self.crossbars_per_page() / self.chips
    }

    pub fn records_per_page(&self) -> usize {
        self.rows * self.crossbars_per_page()
    }

    pub fn granules_per_line_per_chip(&self) -> usize {
        self.line_bits / GRANULE_BITS / self.chips
    }

    pub fn max_pages(&self) -> usize {
        (self.capacity_bytes / self.page_bytes as u64) as usize
    }

    /// Pages needed for `records` records (at least one).
    pub fn pages_for(&self, records: usize) -> usize {
        records.div_ceil(self.records_per_page()).max(1)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Format(m));
        if self.rows == 0 || !self.rows.is_multiple_of(64) || self.cols < GRANULE_BITS {
            return bad(format!("unsupported crossbar {}x{}", self.rows, self.cols));
        }
        let cells = self.rows * self.cols;
        if !(self.page_bytes * 8).is_multiple_of(cells) || self.crossbars_per_page() == 0 {
            return bad(format!("page of {} bytes is not a whole number of crossbars", self.page_bytes));
        }
        if self.chips == 0 || !self.crossbars_per_page().is_multiple_of(self.chips) {
            return bad(format!("{} crossbars per page do not split over {} chips", self.crossbars_per_page(), self.chips));
        }
        if self.line_bits != GRANULE_BITS * self.crossbars_per_page() {
            return bad(format!(
                "line of {} bits must hold one granule per crossbar ({} bits)",
                self.line_bits,
                GRANULE_BITS * self.crossbars_per_page()
            ));
        }
        Ok(())
    }
}

/// How a page's crossbars aggregate.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AggEngine {
    /// Peripheral ALU reading one granule per cycle.
    #[default]
    Alu,
    /// Pure bulk-bitwise reduction tree, priced by `logic_agg_factor`.
    LogicBaseline,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Payload {
    LogicSeq(MicroProgram),
    Aggregate { spec: AggSpec, engine: AggEngine },
    MuxUpdate(MuxSpec),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PimRequest {
    pub page: PageId,
    pub payload: Payload,
}

/// What `submit` does when the target page is still executing.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ChannelPolicy {
    /// Start when the page frees up.
    #[default]
    Queue,
    /// Fail with [`Error::PageBusy`].
    Reject,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PimController {
    pub page_id: PageId,
    pub busy_until: f64,
    pub issued_ops: u64,
}

/// Host clock and controller state, for measuring alternatives from the
/// same starting point.
#[derive(Clone, Debug, PartialEq)]
pub struct TimingState {
    now_ns: f64,
    busy_until: Vec<f64>,
}

#[derive(Clone, Debug)]
struct Page {
    crossbars: Vec<Crossbar>,
    ctrl: PimController,
}

#[derive(Clone, Debug)]
pub struct PimDevice {
    geometry: DeviceGeometry,
    costs: LogicCosts,
    wear: WearPolicy,
    policy: ChannelPolicy,
    pages: Vec<Page>,
    ledger: CostLedger,
    now_ns: f64,
}

impl PimDevice {
    pub fn new(geometry: DeviceGeometry, params: CostParams) -> Result<Self> {
        geometry.validate()?;
        params.validate()?;
        Ok(Self {
            geometry,
            costs: LogicCosts::default(),
            wear: WearPolicy::default(),
            policy: ChannelPolicy::default(),
            pages: Vec::new(),
            ledger: CostLedger::new(params),
            now_ns: 0.0,
        })
    }

    pub fn with_logic_costs(mut self, costs: LogicCosts) -> Self {
        self.costs = costs;
        self
    }

    /// Applies to pages allocated afterwards.
    pub fn with_wear_policy(mut self, wear: WearPolicy) -> Self {
        self.wear = wear;
        self
    }

    pub fn with_channel_policy(mut self, policy: ChannelPolicy) -> Self {
        self.policy = policy;
        self
    }

    pub fn geometry(&self) -> &DeviceGeometry {
        &self.geometry
    }

    pub fn params(&self) -> &CostParams {
        self.ledger.params()
    }

    pub fn logic_costs(&self) -> &LogicCosts {
        &self.costs
    }

    pub fn ledger(&self) -> &CostLedger {
        &self.ledger
    }

    pub fn ledger_mut(&mut self) -> &mut CostLedger {
        &mut self.ledger
    }

    pub fn page_count(&self) -> usize {
        self.pages.len()
    }

    pub fn allocate_pages(&mut self, n: usize) -> Result<Vec<PageId>> {
        let available = self.geometry.max_pages() - self.pages.len();
        if n > available {
            return Err(Error::CapacityExceeded { needed: n, available });
        }
        let first = self.pages.len();
        let xb = Crossbar::new(self.geometry.rows, self.geometry.cols).with_policy(self.wear);
        for id in first..first + n {
            self.pages.push(Page {
                crossbars: vec![xb.clone(); self.geometry.crossbars_per_page()],
                ctrl: PimController { page_id: id, ..Default::default() },
            });
        }
        Ok((first..first + n).collect())
    }

    fn page(&self, id: PageId) -> Result<&Page> {
        self.pages.get(id).ok_or(Error::UnknownPage(id))
    }

    fn page_mut(&mut self, id: PageId) -> Result<&mut Page> {
        self.pages.get_mut(id).ok_or(Error::UnknownPage(id))
    }

    pub fn crossbars(&self, id: PageId) -> Result<&[Crossbar]> {
        Ok(&self.page(id)?.crossbars)
    }

    /// Direct crossbar access for loading data; nothing is charged.
    pub fn crossbar_mut(&mut self, id: PageId, xbar: usize) -> Result<&mut Crossbar> {
        let page = self.page_mut(id)?;
        let n = page.crossbars.len();
        page.crossbars.get_mut(xbar).ok_or(Error::Format(format!("crossbar {xbar} of {n}")))
    }

    pub fn controller(&self, id: PageId) -> Result<&PimController> {
        Ok(&self.page(id)?.ctrl)
    }

    pub fn now(&self) -> f64 {
        self.now_ns
    }

    /// Moves the host clock; used to replay independent host threads.
    pub fn set_now(&mut self, t_ns: f64) {
        self.now_ns = t_ns;
    }

    pub fn timing(&self) -> TimingState {
        TimingState { now_ns: self.now_ns, busy_until: self.pages.iter().map(|p| p.ctrl.busy_until).collect() }
    }

    pub fn restore_timing(&mut self, t: TimingState) {
        self.now_ns = t.now_ns;
        for (p, b) in self.pages.iter_mut().zip(t.busy_until) {
            p.ctrl.busy_until = b;
        }
    }

    /// Host waits until `page` is idle.
    pub fn wait_page(&mut self, page: PageId) -> Result<f64> {
        let busy = self.page(page)?.ctrl.busy_until;
        self.now_ns = self.now_ns.max(busy);
        Ok(self.now_ns)
    }

    /// Time at which every page is idle and the host is done.
    pub fn quiescent_time(&self) -> f64 {
        self.pages.iter().map(|p| p.ctrl.busy_until).fold(self.now_ns, f64::max)
    }

    /// Host-side work that takes `duration_ns` and touches no PIM state.
    pub fn host_compute(&mut self, duration_ns: f64) {
        self.now_ns += duration_ns;
    }

    /// Zeroes the ledger, wear counters, controllers and clock.
    pub fn reset_measurement(&mut self) {
        self.ledger.clear();
        self.now_ns = 0.0;
        for p in &mut self.pages {
            p.ctrl.busy_until = 0.0;
            p.ctrl.issued_ops = 0;
            p.crossbars.iter_mut().for_each(Crossbar::reset_wear);
        }
    }

    pub fn max_row_writes(&self) -> u64 {
        self.pages.iter().flat_map(|p| &p.crossbars).map(Crossbar::max_row_writes).max().unwrap_or(0)
    }

    pub fn report(&self, latency_ns: f64) -> CostReport {
        self.ledger.report(latency_ns, self.max_row_writes(), self.geometry.chips)
    }

    fn validate_payload(&self, payload: &Payload) -> Result<()> {
        let (rows, cols) = (self.geometry.rows, self.geometry.cols);
        let wrap = |e: Error| Error::MalformedPayload(e.to_string());
        match payload {
            Payload::LogicSeq(p) => p.validate(cols).map_err(wrap),
            Payload::Aggregate { spec, .. } => spec.validate(rows, cols).map_err(wrap),
            Payload::MuxUpdate(m) => m.validate(cols).map_err(wrap),
        }
    }

    /// Dispatches a request and returns its completion time.
    pub fn submit(&mut self, req: PimRequest) -> Result<f64> {
        self.validate_payload(&req.payload)?;
        let busy = self.page(req.page)?.ctrl.busy_until;
        if self.policy == ChannelPolicy::Reject && busy > self.now_ns {
            return Err(Error::PageBusy(req.page));
        }
        let p = self.ledger.params().clone();
        self.now_ns += p.t_dispatch_ns;
        let start = self.now_ns.max(busy);
        let xbars = self.geometry.crossbars_per_page() as f64;
        let rows = self.geometry.rows as f64;
        let chips = self.geometry.chips as f64;

        let exec = match req.payload {
            Payload::LogicSeq(prog) => self.run_program(req.page, &prog, start)?,
            Payload::MuxUpdate(spec) => {
                let prog = compile_mux(&spec, &self.costs)?;
                self.run_program(req.page, &prog, start)?
            }
            Payload::Aggregate { spec, engine: AggEngine::Alu } => {
                let n = spec.value_granules() as f64;
                let page = self.page_mut(req.page)?;
                for xb in &mut page.crossbars {
                    xb.aggregate(&spec)?;
                }
                let t_scan = rows * n * p.t_read_ns;
                let exec = t_scan + p.t_write_ns;
                let bits = GRANULE_BITS as f64;
                self.ledger.charge_n(EventKind::GranuleRead, start, t_scan, xbars * rows * n * bits, (rows * n) as u64)?;
                let written = spec.dst_granules() as f64 * bits * xbars;
                self.ledger.charge(EventKind::GranuleWrite, start + t_scan, p.t_write_ns, written)?;
                self.ledger.charge(EventKind::AggActive, start, exec, xbars)?;
                exec
            }
            Payload::Aggregate { spec, engine: AggEngine::LogicBaseline } => {
                let cycles = baseline_cycles(p.logic_agg_factor, spec.value_width_bits, self.geometry.rows);
                let page = self.page_mut(req.page)?;
                for xb in &mut page.crossbars {
                    let (value, selected) = xb.compute_aggregate(&spec)?;
                    xb.write_agg_result(&spec, value, selected == 0)?;
                    xb.add_row_writes(cycles);
                }
                let exec = cycles as f64 * p.t_logic_cycle_ns;
                self.ledger.charge_n(EventKind::LogicCycle, start, exec, cycles as f64 * rows * xbars, cycles)?;
                exec
            }
        };
        if exec > 0.0 {
            self.ledger.charge(EventKind::ControllerActive, start, exec, chips)?;
        }
        let page = self.page_mut(req.page)?;
        page.ctrl.busy_until = start + exec;
        page.ctrl.issued_ops += 1;
        Ok(start + exec)
    }

    fn run_program(&mut self, id: PageId, prog: &MicroProgram, start: f64) -> Result<f64> {
        let page = self.page_mut(id)?;
        for xb in &mut page.crossbars {
            for s in &prog.steps {
                xb.bulk_logic(s.op, &s.inputs, s.out)?;
            }
        }
        let exec = prog.cycles as f64 * self.ledger.params().t_logic_cycle_ns;
        if prog.cycles > 0 {
            let bits = (prog.cycles * (self.geometry.rows * self.geometry.crossbars_per_page()) as u64) as f64;
            self.ledger.charge_n(EventKind::LogicCycle, start, exec, bits, prog.cycles)?;
        }
        Ok(exec)
    }

    fn check_line(&self, row: usize, granule: usize) -> Result<()> {
        if row >= self.geometry.rows {
            return Err(Error::RowOutOfRange { row, rows: self.geometry.rows });
        }
        let col = (granule + 1) * GRANULE_BITS;
        if col > self.geometry.cols {
            return Err(Error::ColumnOutOfRange { col: col - 1, cols: self.geometry.cols });
        }
        Ok(())
    }

    /// Reads granule `granule` of `row` from every crossbar of the page:
    /// element `c` of the result comes from crossbar `c`.
    pub fn host_read_line(&mut self, page: PageId, row: usize, granule: usize, class: LineClass) -> Result<Vec<u16>> {
        Ok(self.host_read_lines(page, &[row], granule, class)?.pop().unwrap_or_default())
    }

    /// Back-to-back line reads of the same granule over several rows,
    /// recorded as one folded ledger event.
    pub fn host_read_lines(
        &mut self,
        page: PageId,
        rows: &[usize],
        granule: usize,
        class: LineClass,
    ) -> Result<Vec<Vec<u16>>> {
        for &r in rows {
            self.check_line(r, granule)?;
        }
        let start = self.wait_page(page)?;
        let pg = &mut self.pages[page];
        let lines = rows
            .iter()
            .map(|&r| pg.crossbars.iter_mut().map(|xb| xb.read_granule(r, granule * GRANULE_BITS)).collect())
            .collect::<Result<Vec<Vec<u16>>>>()?;
        if !rows.is_empty() {
            let n = rows.len() as f64;
            let dur = n * self.ledger.params().t_host_read_ns;
            let bits = n * self.geometry.line_bits as f64;
            self.ledger.charge_n(EventKind::LineRead(class), start, dur, bits, rows.len() as u64)?;
            self.now_ns = start + dur;
        }
        Ok(lines)
    }

    pub fn host_write_line(&mut self, page: PageId, row: usize, granule: usize, line: &[u16]) -> Result<()> {
        self.host_write_lines(page, &[row], granule, std::slice::from_ref(&line.to_vec()))
    }

    pub fn host_write_lines(&mut self, page: PageId, rows: &[usize], granule: usize, lines: &[Vec<u16>]) -> Result<()> {
        let xbars = self.geometry.crossbars_per_page();
        if rows.len() != lines.len() || lines.iter().any(|l| l.len() != xbars) {
            return Err(Error::MalformedPayload(format!("lines must hold {xbars} granules each")));
        }
        for &r in rows {
            self.check_line(r, granule)?;
        }
        let start = self.wait_page(page)?;
        let pg = &mut self.pages[page];
        for (&r, line) in rows.iter().zip(lines) {
            for (xb, &g) in pg.crossbars.iter_mut().zip(line) {
                xb.write_value(r, granule * GRANULE_BITS, GRANULE_BITS, g as u64)?;
            }
        }
        if !rows.is_empty() {
            let n = rows.len() as f64;
            let dur = n * self.ledger.params().t_host_write_ns;
            let bits = n * self.geometry.line_bits as f64;
            self.ledger.charge_n(EventKind::LineWrite, start, dur, bits, rows.len() as u64)?;
            self.now_ns = start + dur;
        }
        Ok(())
    }

    /// Copies a bit-vector column between pages through the host, one line
    /// per row. Whole granules move, so `dst_col`'s granule is overwritten
    /// and both columns must sit at the same offset within their granules.
    pub fn transfer_bitvector(&mut self, src_page: PageId, src_col: usize, dst_page: PageId, dst_col: usize) -> Result<()> {
        if src_col % GRANULE_BITS != dst_col % GRANULE_BITS {
            return Err(Error::MisalignedTransfer(format!(
                "column {src_col} and {dst_col} sit at different granule offsets"
            )));
        }
        self.page(dst_page)?;
        let rows: Vec<usize> = (0..self.geometry.rows).collect();
        let lines = self.host_read_lines(src_page, &rows, src_col / GRANULE_BITS, LineClass::Bitvector)?;
        self.host_write_lines(dst_page, &rows, dst_col / GRANULE_BITS, &lines)
    }
}

/// Cycles of the pure-logic reduction for `width`-bit values over `rows`.
pub fn baseline_cycles(factor: f64, width: usize, rows: usize) -> u64 {
    (factor * width as f64 * (rows as f64).log2()).ceil() as u64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fabric::{AggOp, LogicOp};
    use crate::microcode::Step;

    fn device(pages: usize) -> PimDevice {
        let mut d = PimDevice::new(DeviceGeometry::default(), CostParams::default()).unwrap();
        d.allocate_pages(pages).unwrap();
        d
    }

    #[test]
    fn default_geometry() {
        let g = DeviceGeometry::default();
        assert_eq!(g.crossbars_per_page(), 32);
        assert_eq!(g.crossbars_per_page_per_chip(), 4);
        assert_eq!(g.records_per_page(), 32768);
        assert_eq!(g.line_bits / GRANULE_BITS, 32);
        assert_eq!(g.granules_per_line_per_chip(), 4);
        assert_eq!(g.max_pages(), 16384);
        g.validate().unwrap();
    }

    #[test]
    fn logic_seq_completion() {
        let mut d = device(1);
        let prog = MicroProgram {
            steps: vec![Step { op: LogicOp::Set1, inputs: vec![], out: 3 }],
            cycles: 5,
        };
        let t = d.submit(PimRequest { page: 0, payload: Payload::LogicSeq(prog) }).unwrap();
        assert_eq!(t, 10.0 + 5.0 * 30.0);
        assert!(d.crossbars(0).unwrap().iter().all(|xb| xb.get(1023, 3)));
    }

    #[test]
    fn empty_sequence_costs_dispatch_only() {
        let mut d = device(1);
        let t = d.submit(PimRequest { page: 0, payload: Payload::LogicSeq(MicroProgram::default()) }).unwrap();
        assert_eq!(t, 10.0);
        assert_eq!(d.ledger().energy(), 0.0);
    }

    #[test]
    fn aggregate_reads_every_row() {
        let mut d = device(1);
        for x in 0..32 {
            let xb = d.crossbar_mut(0, x).unwrap();
            for r in 0..1024 {
                xb.write_value(r, 0, 32, r as u64).unwrap();
                xb.write_value(r, 100, 1, 1).unwrap();
            }
        }
        let spec = AggSpec::new(AggOp::Sum, 0, 32, 48, 100);
        d.submit(PimRequest { page: 0, payload: Payload::Aggregate { spec, engine: AggEngine::Alu } }).unwrap();
        for xb in d.crossbars(0).unwrap() {
            assert_eq!(xb.read_count(), 2048);
            assert_eq!(xb.peek_bits(0, 48, 32), 1023 * 1024 / 2);
        }
        assert_eq!(d.ledger().totals().granule_reads, 2048 * 32);
    }

    #[test]
    fn line_reads_and_transfers() {
        let mut d = device(2);
        for x in 0..32 {
            d.crossbar_mut(0, x).unwrap().write_value(7, 0, 16, 100 + x as u64).unwrap();
            d.crossbar_mut(0, x).unwrap().write_value(9, 33, 1, 1).unwrap();
        }
        let line = d.host_read_line(0, 7, 0, LineClass::Data).unwrap();
        assert_eq!(line, (100..132).collect::<Vec<u16>>());
        assert_eq!(d.now(), 60.0);

        d.reset_measurement();
        d.transfer_bitvector(0, 33, 1, 49).unwrap();
        assert!(d.crossbars(1).unwrap().iter().all(|xb| xb.get(9, 49) && !xb.get(8, 49)));
        assert_eq!(d.now(), 1024.0 * 120.0);
        assert_eq!(d.ledger().totals().line_reads, 1024);
        assert_eq!(d.ledger().totals().line_writes, 1024);
        assert!(matches!(d.transfer_bitvector(0, 33, 1, 48), Err(Error::MisalignedTransfer(_))));
    }

    #[test]
    fn busy_pages() {
        let mut d = device(1).with_channel_policy(ChannelPolicy::Reject);
        let prog = MicroProgram { steps: vec![], cycles: 10 };
        d.submit(PimRequest { page: 0, payload: Payload::LogicSeq(prog.clone()) }).unwrap();
        let again = d.submit(PimRequest { page: 0, payload: Payload::LogicSeq(prog) });
        assert!(matches!(again, Err(Error::PageBusy(0))));
        assert!(matches!(d.wait_page(5), Err(Error::UnknownPage(5))));
    }

    #[test]
    fn capacity() {
        let mut d = PimDevice::new(DeviceGeometry { capacity_bytes: 4 << 20, ..Default::default() }, CostParams::default())
            .unwrap();
        d.allocate_pages(2).unwrap();
        assert!(matches!(d.allocate_pages(1), Err(Error::CapacityExceeded { needed: 1, available: 0 })));
    }

    #[test]
    fn baseline_cycle_count() {
        assert_eq!(baseline_cycles(12.0, 32, 1024), 3840);
    }
}
