//! Latency, energy, power and endurance bookkeeping.
//!
//! Every device event is appended to the ledger with its start time and
//! duration. Energy is folded eagerly; peak power is computed from the
//! event log when a report is built.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Ten 365-day years, in seconds.
pub const TEN_YEARS_S: f64 = 10.0 * 365.0 * 24.0 * 3600.0;

/// Device timing and energy parameters. Times are nanoseconds, energies
/// joules per bit, powers watts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CostParams {
    pub t_logic_cycle_ns: f64,
    pub e_logic_per_bit: f64,
    pub e_read_per_bit: f64,
    pub e_write_per_bit: f64,
    pub p_agg_circuit: f64,
    pub p_controller: f64,
    /// One 16-bit crossbar granule read by the aggregation ALU.
    pub t_read_ns: f64,
    /// One granule write (ALU result write-back).
    pub t_write_ns: f64,
    /// Serialized PIM request dispatch on the command channel.
    pub t_dispatch_ns: f64,
    pub t_host_read_ns: f64,
    pub t_host_write_ns: f64,
    /// Host CPU work per record aggregated in host-gb (decode, hash, fold).
    pub t_host_record_ns: f64,
    pub cells_per_row: u64,
    /// Averaging window for peak power.
    pub power_window_ns: f64,
    /// Logic-only aggregation baseline: cycles per value bit per tree level.
    pub logic_agg_factor: f64,
}

impl Default for CostParams {
    fn default() -> Self {
        Self {
            t_logic_cycle_ns: 30.0,
            e_logic_per_bit: 81.6e-15,
            e_read_per_bit: 0.84e-12,
            e_write_per_bit: 6.9e-12,
            p_agg_circuit: 25.4e-6,
            p_controller: 126e-6,
            t_read_ns: 30.0,
            t_write_ns: 30.0,
            t_dispatch_ns: 10.0,
            t_host_read_ns: 60.0,
            t_host_write_ns: 60.0,
            t_host_record_ns: 20.0,
            cells_per_row: 512,
            power_window_ns: 30.0,
            logic_agg_factor: 12.0,
        }
    }
}

impl CostParams {
    pub fn validate(&self) -> Result<()> {
        let values = [
            self.t_logic_cycle_ns,
            self.e_logic_per_bit,
            self.e_read_per_bit,
            self.e_write_per_bit,
            self.p_agg_circuit,
            self.p_controller,
            self.t_read_ns,
            self.t_write_ns,
            self.t_dispatch_ns,
            self.t_host_read_ns,
            self.t_host_write_ns,
            self.t_host_record_ns,
            self.cells_per_row as f64,
            self.power_window_ns,
            self.logic_agg_factor,
        ];
        match values.iter().find(|v| !(v.is_finite() && **v > 0.0)) {
            Some(v) => Err(Error::NegativeScope(*v)),
            None => Ok(()),
        }
    }
}

/// What a host line read fetched.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LineClass {
    /// Filter or subgroup bit-vectors.
    Bitvector,
    /// Attribute granules of records.
    Data,
    /// Aggregation partials.
    Result,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EventKind {
    /// `scope` = output bits (one per row per crossbar per cycle).
    LogicCycle,
    /// `scope` = bits read inside the crossbars.
    GranuleRead,
    /// `scope` = bits written inside the crossbars.
    GranuleWrite,
    /// `scope` = bits moved to the host.
    LineRead(LineClass),
    /// `scope` = bits written by the host.
    LineWrite,
    /// `scope` = number of active aggregation circuits.
    AggActive,
    /// `scope` = number of active PIM controllers.
    ControllerActive,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub kind: EventKind,
    pub start_ns: f64,
    pub duration_ns: f64,
    pub scope: f64,
    /// Number of such events folded into this record (e.g. 1024 line reads).
    pub count: u64,
}

impl Event {
    pub fn energy(&self, p: &CostParams) -> f64 {
        let seconds = self.duration_ns * 1e-9;
        match self.kind {
            EventKind::LogicCycle => self.scope * p.e_logic_per_bit,
            EventKind::GranuleRead | EventKind::LineRead(_) => self.scope * p.e_read_per_bit,
            EventKind::GranuleWrite | EventKind::LineWrite => self.scope * p.e_write_per_bit,
            EventKind::AggActive => self.scope * p.p_agg_circuit * seconds,
            EventKind::ControllerActive => self.scope * p.p_controller * seconds,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Totals {
    pub logic_energy: f64,
    pub read_energy: f64,
    pub write_energy: f64,
    pub static_energy: f64,
    pub logic_bits: f64,
    pub granule_reads: u64,
    pub line_reads: u64,
    pub data_line_reads: u64,
    pub line_writes: u64,
}

impl Totals {
    pub fn energy(&self) -> f64 {
        self.logic_energy + self.read_energy + self.write_energy + self.static_energy
    }
}

/// Opaque rollback point.
#[derive(Clone, Copy, Debug)]
pub struct Checkpoint {
    events: usize,
    totals: Totals,
}

#[derive(Clone, Debug)]
pub struct CostLedger {
    params: CostParams,
    events: Vec<Event>,
    totals: Totals,
}

impl CostLedger {
    pub fn new(params: CostParams) -> Self {
        Self { params, events: Vec::new(), totals: Totals::default() }
    }

    pub fn params(&self) -> &CostParams {
        &self.params
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn totals(&self) -> &Totals {
        &self.totals
    }

    pub fn energy(&self) -> f64 {
        self.totals.energy()
    }

    pub fn clear(&mut self) {
        self.events.clear();
        self.totals = Totals::default();
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint { events: self.events.len(), totals: self.totals }
    }

    pub fn rollback(&mut self, cp: Checkpoint) {
        self.events.truncate(cp.events);
        self.totals = cp.totals;
    }

    /// Records one event (or `count` identical ones folded together) and
    /// returns its energy.
    pub fn charge(&mut self, kind: EventKind, start_ns: f64, duration_ns: f64, scope: f64) -> Result<f64> {
        self.charge_n(kind, start_ns, duration_ns, scope, 1)
    }

    pub fn charge_n(&mut self, kind: EventKind, start_ns: f64, duration_ns: f64, scope: f64, count: u64) -> Result<f64> {
        if scope < 0.0 || scope.is_nan() {
            return Err(Error::NegativeScope(scope));
        }
        if duration_ns < 0.0 || duration_ns.is_nan() {
            return Err(Error::NegativeScope(duration_ns));
        }
        let event = Event { kind, start_ns, duration_ns, scope, count };
        let e = event.energy(&self.params);
        let t = &mut self.totals;
        match kind {
            EventKind::LogicCycle => {
                t.logic_energy += e;
                t.logic_bits += scope;
            }
            EventKind::GranuleRead => {
                t.read_energy += e;
                t.granule_reads += (scope / 16.0).round() as u64;
            }
            EventKind::LineRead(class) => {
                t.read_energy += e;
                t.line_reads += count;
                if class == LineClass::Data {
                    t.data_line_reads += count;
                }
            }
            EventKind::GranuleWrite => t.write_energy += e,
            EventKind::LineWrite => {
                t.write_energy += e;
                t.line_writes += count;
            }
            EventKind::AggActive | EventKind::ControllerActive => t.static_energy += e,
        }
        self.events.push(event);
        Ok(e)
    }

    /// Highest module power averaged over `power_window_ns` windows.
    pub fn peak_power(&self) -> f64 {
        peak_window_power(&self.events, &self.params)
    }

    pub fn report(&self, latency_ns: f64, max_row_writes: u64, chips: usize) -> CostReport {
        let total_latency = latency_ns * 1e-9;
        let required_endurance_10y =
            required_endurance(max_row_writes, self.params.cells_per_row, total_latency).unwrap_or(0.0);
        CostReport {
            total_latency,
            pim_energy: self.energy(),
            peak_power: self.peak_power() / chips.max(1) as f64,
            max_row_writes,
            required_endurance_10y,
            logic_energy: self.totals.logic_energy,
            read_energy: self.totals.read_energy,
            write_energy: self.totals.write_energy,
            static_energy: self.totals.static_energy,
            line_reads: self.totals.line_reads,
            data_line_reads: self.totals.data_line_reads,
            line_writes: self.totals.line_writes,
        }
    }

    /// Event log as CSV (`kind,start_ns,duration_ns,scope,count,energy_j`).
    pub fn write_events_csv(&self, mut out: impl Write) -> std::io::Result<()> {
        writeln!(out, "kind,start_ns,duration_ns,scope,count,energy_j")?;
        for e in &self.events {
            let kind = match e.kind {
                EventKind::LogicCycle => "logic-cycle".to_string(),
                EventKind::GranuleRead => "granule-read".to_string(),
                EventKind::GranuleWrite => "granule-write".to_string(),
                EventKind::LineRead(c) => format!("line-read-{}", line_class_name(c)),
                EventKind::LineWrite => "line-write".to_string(),
                EventKind::AggActive => "agg-active".to_string(),
                EventKind::ControllerActive => "controller-active".to_string(),
            };
            writeln!(out, "{kind},{},{},{},{},{}", e.start_ns, e.duration_ns, e.scope, e.count, e.energy(&self.params))?;
        }
        Ok(())
    }
}

fn line_class_name(c: LineClass) -> &'static str {
    match c {
        LineClass::Bitvector => "bitvector",
        LineClass::Data => "data",
        LineClass::Result => "result",
    }
}

fn to_ps(ns: f64) -> i64 {
    (ns * 1000.0).round() as i64
}

fn peak_window_power(events: &[Event], params: &CostParams) -> f64 {
    let mut edges: Vec<(i64, f64)> = Vec::with_capacity(events.len() * 2);
    for e in events {
        let (a, b) = (to_ps(e.start_ns), to_ps(e.start_ns + e.duration_ns));
        if b <= a {
            continue;
        }
        let watts = e.energy(params) / (e.duration_ns * 1e-9);
        if watts > 0.0 {
            edges.push((a, watts));
            edges.push((b, -watts));
        }
    }
    if edges.is_empty() {
        return 0.0;
    }
    edges.sort_by(|x, y| x.0.cmp(&y.0).then(x.1.total_cmp(&y.1)));

    let window = to_ps(params.power_window_ns).max(1);
    let mut peak: f64 = 0.0;
    let mut partial: Option<(i64, f64)> = None;
    let flush = |partial: &mut Option<(i64, f64)>, peak: &mut f64| {
        if let Some((_, acc)) = partial.take() {
            *peak = peak.max(acc / window as f64);
        }
    };
    let mut level = 0.0;
    let mut i = 0;
    while i < edges.len() {
        let t0 = edges[i].0;
        while i < edges.len() && edges[i].0 == t0 {
            level += edges[i].1;
            i += 1;
        }
        if level.abs() < 1e-15 {
            level = 0.0;
        }
        let Some(&(t1, _)) = edges.get(i) else { break };
        if level <= 0.0 {
            continue;
        }
        let mut t = t0;
        while t < t1 {
            let w = t.div_euclid(window);
            let w_end = (w + 1) * window;
            if t == w * window && t1 >= w_end {
                flush(&mut partial, &mut peak);
                peak = peak.max(level);
                t += (t1 - t) / window * window;
                continue;
            }
            let e = t1.min(w_end);
            if partial.map(|(pw, _)| pw) != Some(w) {
                flush(&mut partial, &mut peak);
                partial = Some((w, 0.0));
            }
            if let Some((_, acc)) = partial.as_mut() {
                *acc += level * (e - t) as f64;
            }
            t = e;
        }
    }
    flush(&mut partial, &mut peak);
    peak
}

/// Per-cell writes needed to run the measured workload back-to-back for
/// ten years, assuming wear leveling spreads a row's writes over its cells.
pub fn required_endurance(max_row_writes: u64, cells_per_row: u64, query_latency_s: f64) -> Result<f64> {
    if query_latency_s.is_nan() || query_latency_s <= 0.0 {
        return Err(Error::ZeroLatency);
    }
    Ok((TEN_YEARS_S / query_latency_s * max_row_writes as f64 / cells_per_row as f64).ceil())
}

pub fn endurance_10y(report: &CostReport, query_latency_s: f64, cells_per_row: u64) -> Result<f64> {
    required_endurance(report.max_row_writes, cells_per_row, query_latency_s)
}

/// Folded per-run costs. Units: seconds, joules, watts, writes.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    pub total_latency: f64,
    pub pim_energy: f64,
    /// Highest window-averaged power drawn by a single chip.
    pub peak_power: f64,
    pub max_row_writes: u64,
    pub required_endurance_10y: f64,
    pub logic_energy: f64,
    pub read_energy: f64,
    pub write_energy: f64,
    pub static_energy: f64,
    pub line_reads: u64,
    pub data_line_reads: u64,
    pub line_writes: u64,
}

impl CostReport {
    pub const FIELDS: [(&'static str, &'static str); 12] = [
        ("total_latency", "s"),
        ("pim_energy", "J"),
        ("peak_power", "W"),
        ("max_row_writes", "writes"),
        ("required_endurance_10y", "writes/cell"),
        ("logic_energy", "J"),
        ("read_energy", "J"),
        ("write_energy", "J"),
        ("static_energy", "J"),
        ("line_reads", "lines"),
        ("data_line_reads", "lines"),
        ("line_writes", "lines"),
    ];

    pub fn values(&self) -> [String; 12] {
        [
            self.total_latency.to_string(),
            self.pim_energy.to_string(),
            self.peak_power.to_string(),
            self.max_row_writes.to_string(),
            self.required_endurance_10y.to_string(),
            self.logic_energy.to_string(),
            self.read_energy.to_string(),
            self.write_energy.to_string(),
            self.static_energy.to_string(),
            self.line_reads.to_string(),
            self.data_line_reads.to_string(),
            self.line_writes.to_string(),
        ]
    }

    /// Header line, units line, then one data line.
    pub fn to_csv(&self) -> String {
        let names: Vec<_> = Self::FIELDS.iter().map(|f| f.0).collect();
        let units: Vec<_> = Self::FIELDS.iter().map(|f| f.1).collect();
        format!("{}\n{}\n{}\n", names.join(","), units.join(","), self.values().join(","))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ledger() -> CostLedger {
        CostLedger::new(CostParams::default())
    }

    #[test]
    fn defaults_are_valid() {
        CostParams::default().validate().unwrap();
        let bad = CostParams { e_read_per_bit: 0.0, ..CostParams::default() };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn one_logic_cycle_on_a_page() {
        let mut l = ledger();
        let e = l.charge(EventKind::LogicCycle, 0.0, 30.0, 32768.0).unwrap();
        assert!((e - 32768.0 * 81.6e-15).abs() < 1e-24);
        assert!((e - 2.674e-9).abs() < 1e-12);
    }

    #[test]
    fn line_read_energy() {
        let mut l = ledger();
        let e = l.charge(EventKind::LineRead(LineClass::Data), 0.0, 60.0, 512.0).unwrap();
        assert!((e - 430.08e-12).abs() < 1e-20);
        assert_eq!(l.totals().data_line_reads, 1);
    }

    #[test]
    fn zero_duration_static_event_is_free() {
        let mut l = ledger();
        assert_eq!(l.charge(EventKind::ControllerActive, 5.0, 0.0, 8.0).unwrap(), 0.0);
        assert_eq!(l.energy(), 0.0);
        assert_eq!(l.peak_power(), 0.0);
    }

    #[test]
    fn negative_scope_rejected() {
        let mut l = ledger();
        assert!(l.charge(EventKind::GranuleRead, 0.0, 1.0, -1.0).is_err());
        assert!(l.charge(EventKind::GranuleRead, 0.0, -1.0, 1.0).is_err());
    }

    #[test]
    fn endurance_examples() {
        assert_eq!(required_endurance(512, 512, 1.0).unwrap(), 3.1536e8);
        assert_eq!(required_endurance(0, 512, 1.0).unwrap(), 0.0);
        let one = required_endurance(512 * 1000, 512, 1.0).unwrap();
        let two = required_endurance(512 * 1000, 512, 2.0).unwrap();
        assert_eq!(one, 2.0 * two);
        assert!(matches!(required_endurance(1, 512, 0.0), Err(Error::ZeroLatency)));
    }

    #[test]
    fn peak_power_of_constant_load() {
        let mut l = ledger();
        // 8 controllers for 300 ns: flat 1.008 mW.
        l.charge(EventKind::ControllerActive, 0.0, 300.0, 8.0).unwrap();
        assert!((l.peak_power() - 8.0 * 126e-6).abs() < 1e-12);
    }

    #[test]
    fn peak_power_averages_short_bursts() {
        let mut l = ledger();
        // 1 nJ in 15 ns sits inside one 30 ns window: 1e-9 / 30e-9 W.
        l.charge(EventKind::LineWrite, 0.0, 15.0, 1e-9 / 6.9e-12).unwrap();
        assert!((l.peak_power() - 1e-9 / 30e-9).abs() < 1e-9);
    }

    #[test]
    fn peak_power_overlapping_events_add() {
        let mut l = ledger();
        l.charge(EventKind::ControllerActive, 0.0, 90.0, 1.0).unwrap();
        l.charge(EventKind::ControllerActive, 30.0, 30.0, 2.0).unwrap();
        assert!((l.peak_power() - 3.0 * 126e-6).abs() < 1e-12);
    }

    #[test]
    fn rollback_restores_totals() {
        let mut l = ledger();
        l.charge(EventKind::LogicCycle, 0.0, 30.0, 10.0).unwrap();
        let cp = l.checkpoint();
        l.charge(EventKind::LineRead(LineClass::Data), 30.0, 60.0, 512.0).unwrap();
        l.rollback(cp);
        assert_eq!(l.events().len(), 1);
        assert_eq!(l.totals().line_reads, 0);
    }

    #[test]
    fn csv_has_units_row() {
        let r = CostReport { total_latency: 1.5, ..Default::default() };
        let csv = r.to_csv();
        let lines: Vec<_> = csv.lines().collect();
        assert!(lines[0].starts_with("total_latency,pim_energy,peak_power"));
        assert!(lines[1].starts_with("s,J,W"));
        assert!(lines[2].starts_with("1.5,"));
    }
}
