//! Compilation of predicates and in-place updates into bulk-bitwise
//! operation sequences.
//!
//! Comparisons are always against immediates: the controller branches on
//! each immediate bit and emits a different column operation, so no
//! constant ever has to be stored in the crossbar.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fabric::{mask, LogicCosts, LogicOp};

/// Index of an attribute in a schema.
pub type AttrId = usize;

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Step {
    pub op: LogicOp,
    pub inputs: Vec<usize>,
    pub out: usize,
}

/// A broadcast operation sequence with its declared cycle cost.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MicroProgram {
    pub steps: Vec<Step>,
    pub cycles: u64,
}

impl MicroProgram {
    pub fn single(op: LogicOp, inputs: Vec<usize>, out: usize, costs: &LogicCosts) -> Self {
        Self { cycles: costs.cycles(op), steps: vec![Step { op, inputs, out }] }
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn append(&mut self, other: MicroProgram) {
        self.steps.extend(other.steps);
        self.cycles += other.cycles;
    }

    /// Column bounds and native-op aliasing, checked before anything runs.
    pub fn validate(&self, cols: usize) -> Result<()> {
        for s in &self.steps {
            if let Some(&c) = s.inputs.iter().chain([&s.out]).find(|&&c| c >= cols) {
                return Err(Error::ColumnOutOfRange { col: c, cols });
            }
            if s.op.is_native() && s.inputs.contains(&s.out) {
                return Err(Error::OutputAliasesInput(s.out));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum CmpOp {
    Eq,
    Neq,
    Lt,
    Le,
    Gt,
    Ge,
}

impl CmpOp {
    pub fn name(self) -> &'static str {
        match self {
            CmpOp::Eq => "EQ",
            CmpOp::Neq => "NEQ",
            CmpOp::Lt => "LT",
            CmpOp::Le => "LE",
            CmpOp::Gt => "GT",
            CmpOp::Ge => "GE",
        }
    }

    pub fn holds(self, lhs: u64, rhs: u64) -> bool {
        match self {
            CmpOp::Eq => lhs == rhs,
            CmpOp::Neq => lhs != rhs,
            CmpOp::Lt => lhs < rhs,
            CmpOp::Le => lhs <= rhs,
            CmpOp::Gt => lhs > rhs,
            CmpOp::Ge => lhs >= rhs,
        }
    }
}

/// Boolean filter over attributes compared with immediates.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Predicate {
    True,
    False,
    Cmp { attr: AttrId, op: CmpOp, value: u64 },
    Between { attr: AttrId, lo: u64, hi: u64 },
    In { attr: AttrId, values: Vec<u64> },
    Not(Box<Predicate>),
    And(Vec<Predicate>),
    Or(Vec<Predicate>),
}

impl Predicate {
    pub fn eq(attr: AttrId, value: u64) -> Self {
        Predicate::Cmp { attr, op: CmpOp::Eq, value }
    }

    /// Reference semantics, one record at a time.
    pub fn eval(&self, value: &impl Fn(AttrId) -> u64) -> bool {
        match self {
            Predicate::True => true,
            Predicate::False => false,
            Predicate::Cmp { attr, op, value: c } => op.holds(value(*attr), *c),
            Predicate::Between { attr, lo, hi } => (*lo..=*hi).contains(&value(*attr)),
            Predicate::In { attr, values } => values.contains(&value(*attr)),
            Predicate::Not(p) => !p.eval(value),
            Predicate::And(ps) => ps.iter().all(|p| p.eval(value)),
            Predicate::Or(ps) => ps.iter().any(|p| p.eval(value)),
        }
    }

    /// Attributes referenced anywhere in the tree, sorted and deduplicated.
    pub fn attributes(&self) -> Vec<AttrId> {
        let mut out = Vec::new();
        self.collect_attrs(&mut out);
        out.sort_unstable();
        out.dedup();
        out
    }

    fn collect_attrs(&self, out: &mut Vec<AttrId>) {
        match self {
            Predicate::True | Predicate::False => {}
            Predicate::Cmp { attr, .. } | Predicate::Between { attr, .. } | Predicate::In { attr, .. } => {
                out.push(*attr)
            }
            Predicate::Not(p) => p.collect_attrs(out),
            Predicate::And(ps) | Predicate::Or(ps) => ps.iter().for_each(|p| p.collect_attrs(out)),
        }
    }

    /// Top-level conjuncts (flattening nested ANDs).
    pub fn conjuncts(&self) -> Vec<&Predicate> {
        match self {
            Predicate::And(ps) => ps.iter().flat_map(|p| p.conjuncts()).collect(),
            Predicate::True => Vec::new(),
            p => vec![p],
        }
    }

    /// The single attribute this leaf constrains, if it is a leaf.
    pub fn leaf_attr(&self) -> Option<AttrId> {
        match self {
            Predicate::Cmp { attr, .. } | Predicate::Between { attr, .. } | Predicate::In { attr, .. } => Some(*attr),
            Predicate::Not(p) => p.leaf_attr(),
            _ => None,
        }
    }

    /// Splits a predicate into per-key parts whose conjunction is
    /// equivalent to `self`. Conjuncts are grouped by the key of their
    /// attributes; attribute-free conjuncts go to `default`. Returns `None`
    /// if a conjunct spans several keys.
    pub fn split_conjuncts<K: Ord + Copy>(&self, key: impl Fn(AttrId) -> K, default: K) -> Option<Vec<(K, Predicate)>> {
        let mut groups: std::collections::BTreeMap<K, Vec<Predicate>> = Default::default();
        for c in self.conjuncts() {
            let keys: std::collections::BTreeSet<K> = c.attributes().into_iter().map(&key).collect();
            let k = match keys.len() {
                0 => default,
                1 => *keys.iter().next().unwrap(),
                _ => return None,
            };
            groups.entry(k).or_default().push(c.clone());
        }
        Some(
            groups
                .into_iter()
                .map(|(k, mut v)| (k, if v.len() == 1 { v.pop().unwrap() } else { Predicate::And(v) }))
                .collect(),
        )
    }
}

/// Declared cycle cost table for filter microcode.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct MicrocodeCosts {
    pub logic: LogicCosts,
    /// EQ on w bits costs `eq_per_bit * w + eq_base`.
    pub eq_per_bit: u64,
    pub eq_base: u64,
    /// LT/GT on w bits costs `cmp_per_bit * w + cmp_base`.
    pub cmp_per_bit: u64,
    pub cmp_base: u64,
}

impl Default for MicrocodeCosts {
    fn default() -> Self {
        Self { logic: LogicCosts::default(), eq_per_bit: 2, eq_base: 1, cmp_per_bit: 3, cmp_base: 2 }
    }
}

impl MicrocodeCosts {
    pub fn eq(&self, w: usize) -> u64 {
        self.eq_per_bit * w as u64 + self.eq_base
    }

    pub fn lt(&self, w: usize) -> u64 {
        self.cmp_per_bit * w as u64 + self.cmp_base
    }

    pub fn cmp(&self, op: CmpOp, w: usize) -> u64 {
        match op {
            CmpOp::Eq => self.eq(w),
            CmpOp::Neq => self.eq(w) + self.logic.not,
            // LE c and GE c run as LT c+1 and GT c-1.
            CmpOp::Lt | CmpOp::Gt | CmpOp::Le | CmpOp::Ge => self.lt(w),
        }
    }

    /// Declared cost of evaluating `pred` on attributes of the given widths.
    pub fn predicate(&self, pred: &Predicate, width: &impl Fn(AttrId) -> usize) -> u64 {
        let l = &self.logic;
        let fold = |ps: &[Predicate], join: u64| -> u64 {
            if ps.is_empty() {
                return l.set;
            }
            ps.iter().map(|p| self.predicate(p, width)).sum::<u64>() + join * (ps.len() as u64 - 1)
        };
        match pred {
            Predicate::True | Predicate::False => l.set,
            Predicate::Cmp { attr, op, .. } => self.cmp(*op, width(*attr)),
            Predicate::Between { attr, .. } => self.cmp(CmpOp::Ge, width(*attr)) + self.cmp(CmpOp::Le, width(*attr)) + l.and,
            Predicate::In { attr, values } => match values.len() {
                0 => l.set,
                m => m as u64 * self.eq(width(*attr)) + (m as u64 - 1) * l.or,
            },
            Predicate::Not(p) => self.predicate(p, width) + l.not,
            Predicate::And(ps) => fold(ps, l.and),
            Predicate::Or(ps) => fold(ps, l.or),
        }
    }
}

/// Where an attribute's bits live inside a crossbar row.
pub trait AttrColumns {
    /// `(first column, width in bits)`, LSB first.
    fn locate(&self, attr: AttrId) -> Option<(usize, usize)>;
}

impl AttrColumns for std::collections::HashMap<AttrId, (usize, usize)> {
    fn locate(&self, attr: AttrId) -> Option<(usize, usize)> {
        self.get(&attr).copied()
    }
}

struct Emitter<'a, C: AttrColumns> {
    cols: &'a C,
    free: Vec<usize>,
    steps: Vec<Step>,
}

impl<C: AttrColumns> Emitter<'_, C> {
    fn emit(&mut self, op: LogicOp, inputs: &[usize], out: usize) {
        self.steps.push(Step { op, inputs: inputs.to_vec(), out });
    }

    fn alloc(&mut self) -> Result<usize> {
        self.free.pop().ok_or(Error::ScratchExhausted)
    }

    fn release(&mut self, col: usize) {
        self.free.push(col);
    }

    fn locate(&self, attr: AttrId, values: &[u64]) -> Result<(usize, usize)> {
        let (start, width) = self.cols.locate(attr).ok_or_else(|| Error::UnknownAttribute(format!("#{attr}")))?;
        if let Some(&v) = values.iter().find(|&&v| v > mask(width)) {
            return Err(Error::ImmediateWidth { attr: format!("#{attr}"), value: v, width: width as u32 });
        }
        Ok((start, width))
    }

    fn node(&mut self, pred: &Predicate, out: usize) -> Result<()> {
        match pred {
            Predicate::True => self.emit(LogicOp::Set1, &[], out),
            Predicate::False => self.emit(LogicOp::Set0, &[], out),
            Predicate::Cmp { attr, op, value } => {
                let (start, w) = self.locate(*attr, &[*value])?;
                self.cmp(start, w, *op, *value, out)?;
            }
            Predicate::Between { attr, lo, hi } => {
                let (start, w) = self.locate(*attr, &[*lo, *hi])?;
                self.cmp(start, w, CmpOp::Ge, *lo, out)?;
                let t = self.alloc()?;
                self.cmp(start, w, CmpOp::Le, *hi, t)?;
                self.emit(LogicOp::And, &[out, t], out);
                self.release(t);
            }
            Predicate::In { attr, values } => {
                let (start, w) = self.locate(*attr, values)?;
                self.emit(LogicOp::Set0, &[], out);
                if !values.is_empty() {
                    let t = self.alloc()?;
                    for &v in values {
                        self.equal(start, w, v, t);
                        self.emit(LogicOp::Or, &[out, t], out);
                    }
                    self.release(t);
                }
            }
            Predicate::Not(p) => {
                let t = self.alloc()?;
                self.node(p, t)?;
                self.emit(LogicOp::Not, &[t], out);
                self.release(t);
            }
            Predicate::And(ps) | Predicate::Or(ps) => {
                let (join, empty) = match pred {
                    Predicate::And(_) => (LogicOp::And, LogicOp::Set1),
                    _ => (LogicOp::Or, LogicOp::Set0),
                };
                let Some((first, rest)) = ps.split_first() else {
                    self.emit(empty, &[], out);
                    return Ok(());
                };
                self.node(first, out)?;
                if !rest.is_empty() {
                    let t = self.alloc()?;
                    for p in rest {
                        self.node(p, t)?;
                        self.emit(join, &[out, t], out);
                    }
                    self.release(t);
                }
            }
        }
        Ok(())
    }

    /// out = (x == c), accumulated as an AND over per-bit matches.
    fn equal(&mut self, start: usize, w: usize, c: u64, out: usize) {
        self.emit(LogicOp::Set1, &[], out);
        for i in 0..w {
            let op = if c >> i & 1 == 1 { LogicOp::And } else { LogicOp::AndNot };
            self.emit(op, &[out, start + i], out);
        }
    }

    fn cmp(&mut self, start: usize, w: usize, op: CmpOp, c: u64, out: usize) -> Result<()> {
        let max = mask(w);
        match op {
            CmpOp::Eq => self.equal(start, w, c, out),
            CmpOp::Neq => {
                let t = self.alloc()?;
                self.equal(start, w, c, t);
                self.emit(LogicOp::Not, &[t], out);
                self.release(t);
            }
            CmpOp::Lt => self.less_greater(start, w, c, true, out)?,
            CmpOp::Gt => self.less_greater(start, w, c, false, out)?,
            CmpOp::Le if c == max => self.emit(LogicOp::Set1, &[], out),
            CmpOp::Le => self.less_greater(start, w, c + 1, true, out)?,
            CmpOp::Ge if c == 0 => self.emit(LogicOp::Set1, &[], out),
            CmpOp::Ge => self.less_greater(start, w, c - 1, false, out)?,
        }
        Ok(())
    }

    /// MSB-first scan keeping a running "equal so far" column.
    fn less_greater(&mut self, start: usize, w: usize, c: u64, less: bool, out: usize) -> Result<()> {
        self.emit(LogicOp::Set0, &[], out);
        let eq = self.alloc()?;
        let t = self.alloc()?;
        self.emit(LogicOp::Set1, &[], eq);
        for i in (0..w).rev() {
            let x = start + i;
            let bit = c >> i & 1 == 1;
            if bit == less {
                // A strict win is possible at this bit.
                let win = if less { LogicOp::AndNot } else { LogicOp::And };
                self.emit(win, &[eq, x], t);
                self.emit(LogicOp::Or, &[out, t], out);
            }
            let stay = if bit { LogicOp::And } else { LogicOp::AndNot };
            self.emit(stay, &[eq, x], eq);
        }
        self.release(t);
        self.release(eq);
        Ok(())
    }
}

/// Compiles `pred` into a sequence leaving its truth value in `out`,
/// ANDed with each column of `and_cols` (partial filters, valid bits).
///
/// The cycle count comes from the declared cost table; the emitted steps
/// are the functional realization and may differ in op count.
pub fn compile_filter(
    pred: &Predicate,
    cols: &impl AttrColumns,
    scratch: &[usize],
    out: usize,
    and_cols: &[usize],
    costs: &MicrocodeCosts,
) -> Result<MicroProgram> {
    if scratch.contains(&out) || and_cols.contains(&out) {
        return Err(Error::OutputAliasesInput(out));
    }
    let mut em = Emitter { cols, free: scratch.iter().rev().copied().collect(), steps: Vec::new() };
    em.node(pred, out)?;
    for &c in and_cols {
        em.emit(LogicOp::And, &[out, c], out);
    }
    let width = |a: AttrId| cols.locate(a).map_or(0, |(_, w)| w);
    let cycles = costs.predicate(pred, &width) + costs.logic.and * and_cols.len() as u64;
    Ok(MicroProgram { steps: em.steps, cycles })
}

/// In-place conditional overwrite of a value with an immediate.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MuxSpec {
    pub value_start: usize,
    pub width: usize,
    pub immediate: u64,
    pub select_col: usize,
    /// Holds NOT(select) during the update.
    pub scratch_col: usize,
}

impl MuxSpec {
    pub fn validate(&self, cols: usize) -> Result<()> {
        if self.width == 0 || self.width > 64 || self.immediate > mask(self.width) {
            return Err(Error::WidthMismatch(format!(
                "immediate {} does not fit {} value bits",
                self.immediate, self.width
            )));
        }
        let value = self.value_start..self.value_start + self.width;
        for c in [value.end - 1, self.select_col, self.scratch_col] {
            if c >= cols {
                return Err(Error::ColumnOutOfRange { col: c, cols });
            }
        }
        if value.contains(&self.select_col) || value.contains(&self.scratch_col) || self.select_col == self.scratch_col {
            return Err(Error::OutputAliasesInput(self.scratch_col));
        }
        Ok(())
    }
}

/// `v_i <- v_i OR s` where the immediate bit is 1, `v_i <- v_i AND NOT s`
/// where it is 0; NOT(s) is materialized once. n + 1 operations.
pub fn compile_mux(spec: &MuxSpec, costs: &LogicCosts) -> Result<MicroProgram> {
    spec.validate(usize::MAX)?;
    let ns = spec.scratch_col;
    let mut steps = vec![Step { op: LogicOp::Not, inputs: vec![spec.select_col], out: ns }];
    let mut cycles = costs.not;
    for i in 0..spec.width {
        let v = spec.value_start + i;
        let step = if spec.immediate >> i & 1 == 1 {
            cycles += costs.or;
            Step { op: LogicOp::Or, inputs: vec![v, spec.select_col], out: v }
        } else {
            // v AND NOT(s) == v AND (NOT s), with NOT s already in scratch.
            cycles += costs.and;
            Step { op: LogicOp::And, inputs: vec![v, ns], out: v }
        };
        steps.push(step);
    }
    Ok(MicroProgram { steps, cycles })
}
