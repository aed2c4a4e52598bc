//! A single memory crossbar: bit storage, bulk column logic, fixed-width
//! granule access and the peripheral aggregation ALU.
//!
//! Cells are stored column-major, one `u64` word per 64 rows, so a bulk
//! column operation touches `rows / 64` words per operand.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Fixed crossbar read/write width in bits.
pub const GRANULE_BITS: usize = 16;

pub const DEFAULT_ROWS: usize = 1024;
pub const DEFAULT_COLS: usize = 512;

/// How cell writes are tallied for endurance.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WearPolicy {
    /// Only cells whose value actually changes are counted.
    #[default]
    ModifiedBits,
    /// Every addressed cell is counted, changed or not.
    AddressedBits,
}

/// Column-wise logic operations. `Nor` and `Not` are native stateful-logic
/// primitives; the rest are composed sequences priced by [`LogicCosts`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LogicOp {
    Nor,
    Not,
    Or,
    And,
    AndNot,
    Xor,
    Set0,
    Set1,
}

impl LogicOp {
    pub fn name(self) -> &'static str {
        match self {
            LogicOp::Nor => "NOR",
            LogicOp::Not => "NOT",
            LogicOp::Or => "OR",
            LogicOp::And => "AND",
            LogicOp::AndNot => "AND_NOT",
            LogicOp::Xor => "XOR",
            LogicOp::Set0 => "SET0",
            LogicOp::Set1 => "SET1",
        }
    }

    /// Native operations cannot write over one of their own inputs.
    pub fn is_native(self) -> bool {
        matches!(self, LogicOp::Nor | LogicOp::Not | LogicOp::Set0 | LogicOp::Set1)
    }

    fn check_arity(self, n: usize) -> Result<()> {
        let (ok, expected) = match self {
            LogicOp::Not => (n == 1, "1"),
            LogicOp::AndNot => (n == 2, "2"),
            LogicOp::Nor => (n >= 1, ">= 1"),
            LogicOp::Or | LogicOp::And | LogicOp::Xor => (n >= 2, ">= 2"),
            LogicOp::Set0 | LogicOp::Set1 => (n == 0, "0"),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Arity { op: self.name(), expected, got: n })
        }
    }

    #[inline]
    fn apply(self, words: &[u64]) -> u64 {
        match self {
            LogicOp::Nor => !words.iter().fold(0, |a, w| a | w),
            LogicOp::Not => !words[0],
            LogicOp::Or => words.iter().fold(0, |a, w| a | w),
            LogicOp::And => words.iter().fold(!0, |a, w| a & w),
            LogicOp::AndNot => words[0] & !words[1],
            LogicOp::Xor => words.iter().fold(0, |a, w| a ^ w),
            LogicOp::Set0 => 0,
            LogicOp::Set1 => !0,
        }
    }
}

/// Cycle cost of each logic operation.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LogicCosts {
    pub nor: u64,
    pub not: u64,
    pub or: u64,
    pub and: u64,
    pub and_not: u64,
    pub xor: u64,
    pub set: u64,
}

impl Default for LogicCosts {
    fn default() -> Self {
        Self { nor: 1, not: 1, or: 2, and: 3, and_not: 2, xor: 5, set: 1 }
    }
}

impl LogicCosts {
    pub fn cycles(&self, op: LogicOp) -> u64 {
        match op {
            LogicOp::Nor => self.nor,
            LogicOp::Not => self.not,
            LogicOp::Or => self.or,
            LogicOp::And => self.and,
            LogicOp::AndNot => self.and_not,
            LogicOp::Xor => self.xor,
            LogicOp::Set0 | LogicOp::Set1 => self.set,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum AggOp {
    Sum,
    Min,
    Max,
}

/// Operands of one ALU aggregation.
///
/// The result region is one granule wider than the value: SUM carries spill
/// into it, and its top bit is set when at least one row was selected.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AggSpec {
    pub op: AggOp,
    pub src: Range<usize>,
    pub dst: Range<usize>,
    pub value_width_bits: usize,
    pub mask_col: usize,
    pub result_row: usize,
}

impl AggSpec {
    pub fn new(op: AggOp, src_start: usize, value_width_bits: usize, dst_start: usize, mask_col: usize) -> Self {
        Self {
            op,
            src: src_start..src_start + value_width_bits,
            dst: dst_start..dst_start + value_width_bits + GRANULE_BITS,
            value_width_bits,
            mask_col,
            result_row: 0,
        }
    }

    /// Granule reads per row needed to fetch one value.
    pub fn value_granules(&self) -> usize {
        self.value_width_bits / GRANULE_BITS
    }

    pub fn dst_granules(&self) -> usize {
        self.dst.len() / GRANULE_BITS
    }

    fn flag_bit(&self) -> usize {
        self.dst.len() - 1
    }

    pub fn validate(&self, rows: usize, cols: usize) -> Result<()> {
        let bad = |m: &str| Err(Error::MalformedAggSpec(m.to_string()));
        let w = self.value_width_bits;
        if w == 0 || !w.is_multiple_of(GRANULE_BITS) {
            return bad("value width must be a positive multiple of the granule");
        }
        if w > 48 {
            return bad("value width above 48 bits");
        }
        if self.src.len() != w || self.dst.len() != w + GRANULE_BITS {
            return bad("range widths disagree with value width");
        }
        if !self.src.start.is_multiple_of(GRANULE_BITS) || !self.dst.start.is_multiple_of(GRANULE_BITS) {
            return bad("ranges must be granule aligned");
        }
        if self.src.end > cols || self.dst.end > cols || self.mask_col >= cols {
            return bad("range outside crossbar");
        }
        if self.src.start < self.dst.end && self.dst.start < self.src.end {
            return bad("source and destination overlap");
        }
        if self.dst.contains(&self.mask_col) {
            return bad("mask column inside destination");
        }
        if self.result_row >= rows {
            return bad("result row outside crossbar");
        }
        if rows > 1 << (GRANULE_BITS - 1) {
            return bad("too many rows for the carry granule");
        }
        Ok(())
    }

    pub fn identity(&self) -> u64 {
        match self.op {
            AggOp::Sum | AggOp::Max => 0,
            AggOp::Min => mask(self.value_width_bits),
        }
    }

    pub fn combine(op: AggOp, acc: u64, v: u64) -> u64 {
        match op {
            AggOp::Sum => acc + v,
            AggOp::Min => acc.min(v),
            AggOp::Max => acc.max(v),
        }
    }

    /// Packs a result into the destination bit layout.
    pub fn encode(&self, value: u64, empty: bool) -> u64 {
        let flag = if empty { 0 } else { 1u64 << self.flag_bit() };
        (value & mask(self.flag_bit())) | flag
    }

    /// Inverse of [`AggSpec::encode`]: `None` for an empty selection.
    pub fn decode(&self, raw: u64) -> Option<u64> {
        if raw >> self.flag_bit() & 1 == 1 {
            Some(raw & mask(self.flag_bit()))
        } else {
            None
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AggOutcome {
    /// Aggregate over selected rows, or the op identity when empty.
    pub value: u64,
    pub empty: bool,
    pub selected: usize,
    pub granule_reads: u64,
    pub granule_writes: u64,
}

pub(crate) fn mask(width: usize) -> u64 {
    if width >= 64 {
        !0
    } else {
        (1u64 << width) - 1
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Crossbar {
    rows: usize,
    cols: usize,
    words: usize,
    cells: Vec<u64>,
    write_counts: Vec<u64>,
    read_count: u64,
    policy: WearPolicy,
}

impl Default for Crossbar {
    fn default() -> Self {
        Self::new(DEFAULT_ROWS, DEFAULT_COLS)
    }
}

impl Crossbar {
    /// `rows` must be a positive multiple of 64.
    pub fn new(rows: usize, cols: usize) -> Self {
        assert!(rows > 0 && rows.is_multiple_of(64), "rows must be a positive multiple of 64");
        assert!(cols > 0, "crossbar needs at least one column");
        let words = rows / 64;
        Self {
            rows,
            cols,
            words,
            cells: vec![0; words * cols],
            write_counts: vec![0; rows],
            read_count: 0,
            policy: WearPolicy::default(),
        }
    }

    pub fn with_policy(mut self, policy: WearPolicy) -> Self {
        self.policy = policy;
        self
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn policy(&self) -> WearPolicy {
        self.policy
    }

    pub fn write_counts(&self) -> &[u64] {
        &self.write_counts
    }

    pub fn max_row_writes(&self) -> u64 {
        self.write_counts.iter().copied().max().unwrap_or(0)
    }

    pub fn read_count(&self) -> u64 {
        self.read_count
    }

    pub fn reset_wear(&mut self) {
        self.write_counts.iter_mut().for_each(|c| *c = 0);
        self.read_count = 0;
    }

    fn check_col(&self, col: usize) -> Result<()> {
        if col < self.cols {
            Ok(())
        } else {
            Err(Error::ColumnOutOfRange { col, cols: self.cols })
        }
    }

    fn check_row(&self, row: usize) -> Result<()> {
        if row < self.rows {
            Ok(())
        } else {
            Err(Error::RowOutOfRange { row, rows: self.rows })
        }
    }

    #[inline]
    fn column(&self, col: usize) -> &[u64] {
        &self.cells[col * self.words..(col + 1) * self.words]
    }

    /// Raw column words, least significant bit = lowest row.
    pub fn column_words(&self, col: usize) -> Result<&[u64]> {
        self.check_col(col)?;
        Ok(self.column(col))
    }

    /// Reads one cell without touching any tally.
    pub fn get(&self, row: usize, col: usize) -> bool {
        self.cells[col * self.words + row / 64] >> (row % 64) & 1 == 1
    }

    /// Reads `width` bits of a row without touching any tally.
    pub fn peek_bits(&self, row: usize, col_start: usize, width: usize) -> u64 {
        let (w, b) = (row / 64, row % 64);
        let mut v = 0;
        for j in 0..width {
            v |= (self.cells[(col_start + j) * self.words + w] >> b & 1) << j;
        }
        v
    }

    /// Applies `op` column-wise over all rows, writing `out_col`.
    pub fn bulk_logic(&mut self, op: LogicOp, in_cols: &[usize], out_col: usize) -> Result<()> {
        op.check_arity(in_cols.len())?;
        self.check_col(out_col)?;
        for &c in in_cols {
            self.check_col(c)?;
        }
        if op.is_native() && in_cols.contains(&out_col) {
            return Err(Error::OutputAliasesInput(out_col));
        }
        let mut operands = [0u64; 8];
        let mut wide = Vec::new();
        for w in 0..self.words {
            let new = if in_cols.len() <= operands.len() {
                for (slot, &c) in operands.iter_mut().zip(in_cols) {
                    *slot = self.cells[c * self.words + w];
                }
                op.apply(&operands[..in_cols.len()])
            } else {
                wide.clear();
                wide.extend(in_cols.iter().map(|&c| self.cells[c * self.words + w]));
                op.apply(&wide)
            };
            let idx = out_col * self.words + w;
            let changed = self.cells[idx] ^ new;
            self.cells[idx] = new;
            match self.policy {
                WearPolicy::ModifiedBits => {
                    let mut bits = changed;
                    while bits != 0 {
                        let b = bits.trailing_zeros() as usize;
                        self.write_counts[w * 64 + b] += 1;
                        bits &= bits - 1;
                    }
                }
                WearPolicy::AddressedBits => {
                    for c in &mut self.write_counts[w * 64..(w + 1) * 64] {
                        *c += 1;
                    }
                }
            }
        }
        Ok(())
    }

    /// Reads the 16-bit granule of `row` starting at `col_start`.
    pub fn read_granule(&mut self, row: usize, col_start: usize) -> Result<u16> {
        self.check_row(row)?;
        if col_start + GRANULE_BITS > self.cols {
            return Err(Error::ColumnOutOfRange { col: col_start + GRANULE_BITS - 1, cols: self.cols });
        }
        self.read_count += 1;
        Ok(self.peek_bits(row, col_start, GRANULE_BITS) as u16)
    }

    /// Writes `bits[j]` into column `col_start + j` of `row`; returns the
    /// number of cells whose value changed.
    pub fn write_row_bits(&mut self, row: usize, col_start: usize, bits: &[bool]) -> Result<u64> {
        self.store(row, col_start, bits.len(), |j| bits[j])
    }

    /// Writes the low `width` bits of `value` (LSB at `col_start`).
    pub fn write_value(&mut self, row: usize, col_start: usize, width: usize, value: u64) -> Result<u64> {
        self.store(row, col_start, width, |j| value >> j & 1 == 1)
    }

    fn store(&mut self, row: usize, col_start: usize, width: usize, bit: impl Fn(usize) -> bool) -> Result<u64> {
        self.check_row(row)?;
        if col_start + width > self.cols {
            return Err(Error::ColumnOutOfRange { col: col_start + width - 1, cols: self.cols });
        }
        let (w, b) = (row / 64, row % 64);
        let mut modified = 0;
        for j in 0..width {
            let idx = (col_start + j) * self.words + w;
            if (self.cells[idx] >> b & 1 == 1) != bit(j) {
                self.cells[idx] ^= 1 << b;
                modified += 1;
            }
        }
        self.write_counts[row] += match self.policy {
            WearPolicy::ModifiedBits => modified,
            WearPolicy::AddressedBits => width as u64,
        };
        Ok(modified)
    }

    /// Adds `per_row` addressed writes to every row. Used for cost models
    /// whose cell activity is not executed bit by bit.
    pub fn add_row_writes(&mut self, per_row: u64) {
        self.write_counts.iter_mut().for_each(|c| *c += per_row);
    }

    /// Functional aggregation over the masked rows, with no tallies.
    pub fn compute_aggregate(&self, spec: &AggSpec) -> Result<(u64, usize)> {
        spec.validate(self.rows, self.cols)?;
        let mut acc = spec.identity();
        let mut selected = 0;
        let mask_words = self.column(spec.mask_col);
        for (w, &word) in mask_words.iter().enumerate() {
            let mut bits = word;
            while bits != 0 {
                let row = w * 64 + bits.trailing_zeros() as usize;
                let v = self.peek_bits(row, spec.src.start, spec.value_width_bits);
                acc = AggSpec::combine(spec.op, acc, v);
                selected += 1;
                bits &= bits - 1;
            }
        }
        Ok((acc, selected))
    }

    /// Stores an encoded result into the destination of the result row.
    pub fn write_agg_result(&mut self, spec: &AggSpec, value: u64, empty: bool) -> Result<u64> {
        let raw = spec.encode(value, empty);
        self.write_value(spec.result_row, spec.dst.start, spec.dst.len(), raw)?;
        Ok(spec.dst_granules() as u64)
    }

    /// Runs the peripheral ALU: every row is scanned (one granule read per
    /// value granule), masked-out rows skip the arithmetic, and the result
    /// is written back to `spec.dst` of `spec.result_row`.
    pub fn aggregate(&mut self, spec: &AggSpec) -> Result<AggOutcome> {
        let (value, selected) = self.compute_aggregate(spec)?;
        let granule_reads = (self.rows * spec.value_granules()) as u64;
        self.read_count += granule_reads;
        let empty = selected == 0;
        let granule_writes = self.write_agg_result(spec, value, empty)?;
        Ok(AggOutcome { value, empty, selected, granule_reads, granule_writes })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn xbar_with_column(col: usize, bits: &[bool]) -> Crossbar {
        let mut x = Crossbar::new(64, 32);
        for (r, &b) in bits.iter().enumerate() {
            x.write_row_bits(r, col, &[b]).unwrap();
        }
        x
    }

    fn column_prefix(x: &Crossbar, col: usize, n: usize) -> Vec<bool> {
        (0..n).map(|r| x.get(r, col)).collect()
    }

    #[test]
    fn nor_truth_table() {
        let mut x = xbar_with_column(0, &[false, false, true]);
        for (r, b) in [false, true, false].into_iter().enumerate() {
            x.write_row_bits(r, 1, &[b]).unwrap();
        }
        x.bulk_logic(LogicOp::Nor, &[0, 1], 2).unwrap();
        assert_eq!(column_prefix(&x, 2, 3), vec![true, false, false]);
    }

    #[test]
    fn not_inverts() {
        let mut x = xbar_with_column(0, &[true, false, true]);
        x.bulk_logic(LogicOp::Not, &[0], 1).unwrap();
        assert_eq!(column_prefix(&x, 1, 3), vec![false, true, false]);
    }

    #[test]
    fn and_not_matches_mux_clear_step() {
        let mut x = xbar_with_column(0, &[true, true, false]);
        for (r, b) in [true, false, false].into_iter().enumerate() {
            x.write_row_bits(r, 1, &[b]).unwrap();
        }
        x.bulk_logic(LogicOp::AndNot, &[0, 1], 2).unwrap();
        assert_eq!(column_prefix(&x, 2, 3), vec![false, true, false]);
    }

    #[test]
    fn native_ops_reject_aliasing() {
        let mut x = Crossbar::new(64, 8);
        assert!(matches!(x.bulk_logic(LogicOp::Nor, &[0, 1], 1), Err(Error::OutputAliasesInput(1))));
        assert!(x.bulk_logic(LogicOp::Or, &[0, 1], 1).is_ok());
    }

    #[test]
    fn bad_columns_and_arity() {
        let mut x = Crossbar::new(64, 8);
        assert!(matches!(x.bulk_logic(LogicOp::Not, &[9], 1), Err(Error::ColumnOutOfRange { .. })));
        assert!(matches!(x.bulk_logic(LogicOp::Not, &[0, 2], 1), Err(Error::Arity { .. })));
        assert!(x.read_granule(0, 0).is_err());
        assert!(Crossbar::new(64, 16).read_granule(64, 0).is_err());
    }

    #[test]
    fn granule_roundtrip() {
        let mut x = Crossbar::default();
        assert_eq!(x.read_granule(5, 32).unwrap(), 0);
        x.write_value(3, 0, 16, 0x00FF).unwrap();
        assert_eq!(x.read_granule(3, 0).unwrap(), 0x00FF);
        x.write_value(0, 0, 16, 0xFFFF).unwrap();
        assert_eq!(x.read_granule(0, 0).unwrap(), 0xFFFF);
        assert_eq!(x.read_count(), 3);
    }

    #[test]
    fn rewriting_same_value_costs_no_wear() {
        let mut x = Crossbar::default();
        assert_eq!(x.write_value(0, 0, 16, 0xFFFF).unwrap(), 16);
        assert_eq!(x.write_counts()[0], 16);
        assert_eq!(x.write_value(0, 0, 16, 0xFFFF).unwrap(), 0);
        assert_eq!(x.write_counts()[0], 16);

        let mut y = Crossbar::default().with_policy(WearPolicy::AddressedBits);
        y.write_value(0, 0, 16, 0xFFFF).unwrap();
        y.write_value(0, 0, 16, 0xFFFF).unwrap();
        assert_eq!(y.write_counts()[0], 32);
    }

    #[test]
    fn bulk_logic_wear_counts_toggles() {
        let mut x = xbar_with_column(0, &[true, false, true]);
        x.reset_wear();
        x.bulk_logic(LogicOp::Not, &[0], 1).unwrap();
        // rows 1 and 3..63 flip from 0 to 1
        assert_eq!(x.write_counts()[0], 0);
        assert_eq!(x.write_counts()[1], 1);
        assert_eq!(x.write_counts().iter().sum::<u64>(), 62);
    }

    fn agg_xbar(values: &[u64], mask_bits: &[bool]) -> (Crossbar, AggSpec) {
        let mut x = Crossbar::default();
        for (r, (&v, &m)) in values.iter().zip(mask_bits).enumerate() {
            x.write_value(r, 0, 32, v).unwrap();
            x.write_row_bits(r, 100, &[m]).unwrap();
        }
        (x, AggSpec::new(AggOp::Sum, 0, 32, 48, 100))
    }

    #[test]
    fn sum_of_three() {
        let (mut x, spec) = agg_xbar(&[3, 5, 7], &[true; 3]);
        let out = x.aggregate(&spec).unwrap();
        assert_eq!(out.value, 15);
        assert!(!out.empty);
        assert_eq!(out.granule_reads, 2048);
        let raw = x.peek_bits(0, spec.dst.start, spec.dst.len());
        assert_eq!(spec.decode(raw), Some(15));
    }

    #[test]
    fn min_over_empty_selection_is_flagged() {
        let (mut x, mut spec) = agg_xbar(&[3, 5, 7], &[false; 3]);
        spec.op = AggOp::Min;
        let out = x.aggregate(&spec).unwrap();
        assert!(out.empty);
        assert_eq!(out.value, u32::MAX as u64);
        let raw = x.peek_bits(0, spec.dst.start, spec.dst.len());
        assert_eq!(spec.decode(raw), None);
    }

    #[test]
    fn agg_spec_validation() {
        let x = Crossbar::default();
        let ok = AggSpec::new(AggOp::Max, 0, 32, 48, 200);
        assert!(ok.validate(x.rows(), x.cols()).is_ok());
        let overlap = AggSpec::new(AggOp::Max, 0, 32, 16, 200);
        assert!(overlap.validate(1024, 512).is_err());
        let odd = AggSpec::new(AggOp::Max, 0, 12, 48, 200);
        assert!(odd.validate(1024, 512).is_err());
        let mask_in_dst = AggSpec::new(AggOp::Max, 0, 16, 32, 40);
        assert!(mask_in_dst.validate(1024, 512).is_err());
        let outside = AggSpec::new(AggOp::Max, 0, 32, 480, 200);
        assert!(outside.validate(1024, 512).is_err());
    }
}
